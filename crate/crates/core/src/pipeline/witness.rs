//! Turning blow-up witnesses into a free-lunch sequence.
//!
//! Witness hⁿ at level n is scaled by εₙ = κ/mₙ, where mₙ is the mean of the
//! variation that blows up. κ is fixed so that the last element sits at half
//! the (LI) and (VR) targets. α* is half the smallest "plateau"
//! qₙ = sup{a : P[εₙYₙ ≥ a] ≥ a} of the scaled gains Yₙ = (hⁿ·S)_1.

use serde::{Deserialize, Serialize};

/// Unscaled witness data at one level. `probs` weights the entries of `gains`.
#[derive(Clone, Debug)]
pub struct WitnessSample {
    pub level: usize,
    pub blow_up_mean: f64,
    pub li: f64,
    pub vr: f64,
    pub gains: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeLunchRule {
    pub li_target: f64,
    pub vr_target: f64,
}

impl Default for FreeLunchRule {
    fn default() -> Self {
        FreeLunchRule {
            li_target: 1e-3,
            vr_target: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessRow {
    pub level: usize,
    pub scale: f64,
    pub li: f64,
    pub vr: f64,
    /// P[(εₙhⁿ·S)_1 ≥ α*].
    pub fl: f64,
    pub plateau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeLunchDecision {
    pub alpha_star: f64,
    pub rows: Vec<WitnessRow>,
    pub passed: bool,
    pub log: Vec<String>,
}

/// sup{a : P[Y ≥ a] ≥ a} for a discrete law.
pub fn plateau(values: &[f64], probs: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    let mut cum = 0.0;
    let mut best: f64 = 0.0;
    for &i in &order {
        cum += probs[i];
        best = best.max(values[i].min(cum));
    }
    best
}

pub fn free_lunch_rule(samples: &[WitnessSample], rule: &FreeLunchRule) -> FreeLunchDecision {
    let mut log = Vec::new();
    let fail = |log: Vec<String>| FreeLunchDecision {
        alpha_star: 0.0,
        rows: Vec::new(),
        passed: false,
        log,
    };
    let Some(last) = samples.last() else {
        return fail(vec!["no witnesses".into()]);
    };
    if samples.iter().any(|s| !(s.blow_up_mean > 0.0)) || !(last.li > 0.0) {
        return fail(vec![
            "degenerate witness (zero statistic or zero strategy)".into()
        ]);
    }
    let m_last = last.blow_up_mean;
    let mut kappa = rule.li_target * m_last / last.li;
    if last.vr > 0.0 {
        kappa = kappa.min(rule.vr_target * m_last / last.vr);
    }
    kappa *= 0.5;
    log.push(format!("scales eps_n = {kappa:e} / mean blow-up statistic"));

    let scales: Vec<f64> = samples.iter().map(|s| kappa / s.blow_up_mean).collect();
    let plateaus: Vec<f64> = samples
        .iter()
        .zip(&scales)
        .map(|(s, e)| plateau(&s.gains.iter().map(|g| e * g).collect::<Vec<_>>(), &s.probs))
        .collect();
    let alpha_star = 0.5 * plateaus.iter().copied().fold(f64::INFINITY, f64::min);
    log.push(format!("plateaus {plateaus:?}; alpha* = {alpha_star:e}"));

    let rows: Vec<WitnessRow> = samples
        .iter()
        .zip(scales.iter().zip(&plateaus))
        .map(|(s, (&e, &q))| WitnessRow {
            level: s.level,
            scale: e,
            li: e * s.li,
            vr: e * s.vr,
            fl: s
                .gains
                .iter()
                .zip(&s.probs)
                .filter(|(g, _)| e * **g >= alpha_star)
                .map(|(_, p)| p)
                .sum(),
            plateau: q,
        })
        .collect();

    let li_decreasing = rows.windows(2).all(|w| w[1].li < w[0].li);
    let end = rows.last().expect("non-empty");
    let small = end.li < rule.li_target && end.vr < rule.vr_target;
    let fl_holds = alpha_star > 0.0 && rows.iter().all(|r| r.fl >= alpha_star);
    log.push(format!(
        "li strictly decreasing: {li_decreasing}; li, vr below targets at window end: {small}; fl(alpha*) >= alpha*: {fl_holds}"
    ));
    FreeLunchDecision {
        alpha_star,
        passed: li_decreasing && small && fl_holds,
        rows,
        log,
    }
}
