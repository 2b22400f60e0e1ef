//! From level-wise approximations to a single decomposition on the finest grid.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::doob::{DoobDecomposition, StageReport};
use crate::error::{Error, Result};
use crate::komlos::{extract_convex, extract_convex_multi, ConvexWeights, KomlosConfig};
use crate::space::{stop_unchecked, AdaptedProcess, FilteredSpace, StoppingTime, ABS_TOL};

/// A named inequality `value ≤ bound` evaluated on concrete data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            value,
            bound,
            passed: value <= bound,
        }
    }

    /// `value ≤ bound` up to the absolute slack `ABS_TOL` for rounding.
    pub fn with_slack(name: impl Into<String>, value: f64, bound: f64) -> Self {
        let mut c = Check::new(name, value, bound);
        c.passed = value <= bound + ABS_TOL;
        c
    }
}

pub fn first_failure(checks: &[Check]) -> Option<&Check> {
    checks.iter().find(|c| !c.passed)
}

/// The martingale E[Mⁿ_1 | F_t] and Aⁿ = S − that martingale, at every finest time.
#[derive(Clone, Debug)]
pub struct Extension {
    pub level: usize,
    pub m: AdaptedProcess,
    pub a: AdaptedProcess,
    /// max |Aⁿ_t − Aⁿ_{j/2ⁿ}| over t in (( j−1)/2ⁿ, j/2ⁿ].
    pub intermediate: f64,
}

pub fn extend_martingale(d: &DoobDecomposition, s: &AdaptedProcess) -> Result<Extension> {
    if !Arc::ptr_eq(d.space(), s.space()) {
        return Err(Error::SpaceMismatch);
    }
    if s.at(0).iter().any(|v| v.abs() > ABS_TOL) || s.sup_norm() > 1.0 + ABS_TOL {
        return Err(Error::Precondition(
            "extension needs S_0 = 0 and ‖S‖∞ ≤ 1; normalize S first".into(),
        ));
    }
    let space = s.space().clone();
    let terminal = d.m.terminal().to_vec();
    let by_time = (0..=space.last())
        .map(|t| space.conditional_expectation(&terminal, t))
        .collect::<Result<Vec<_>>>()?;
    let m = AdaptedProcess::new(space.clone(), by_time)?;
    let a = s.sub(&m)?;
    let stride = space.grid().stride(d.level);
    let mut intermediate: f64 = 0.0;
    for t in 1..=space.last() {
        let right = t.div_ceil(stride) * stride;
        for (x, y) in a.at(t).iter().zip(a.at(right)) {
            intermediate = intermediate.max((x - y).abs());
        }
    }
    Ok(Extension {
        level: d.level,
        m,
        a,
        intermediate,
    })
}

/// Per-level data of the stage, stopped at the common α.
#[derive(Clone, Debug)]
pub struct LevelStage {
    pub level: usize,
    /// Position of this level in the stage's level list.
    pub index: usize,
    pub m: AdaptedProcess,
    pub a: AdaptedProcess,
    pub alpha_n: StoppingTime,
    pub rbar_terminal: Vec<f64>,
    pub sbar_sup: f64,
    pub sbar_tv: f64,
}

#[derive(Clone, Debug)]
pub struct ContinuousStage {
    pub c: f64,
    pub eps: f64,
    pub alpha: StoppingTime,
    pub levels: Vec<LevelStage>,
    pub extensions: Vec<Extension>,
    pub weights: ConvexWeights,
    pub checks: Vec<Check>,
    pub log: Vec<String>,
}

impl ContinuousStage {
    pub fn passed(&self) -> bool {
        first_failure(&self.checks).is_none()
    }
}

fn l2_sq(space: &FilteredSpace, x: &[f64]) -> f64 {
    space.expectation(&x.iter().map(|v| v * v).collect::<Vec<_>>())
}

/// Builds R̄ⁿ, αₙ, S̄ⁿ, 𝓜ⁿ, 𝓐ⁿ from passing certificates and selects the subsequence defining α.
pub fn continuous_stage(
    s: &AdaptedProcess,
    report: &StageReport,
    komlos: &KomlosConfig,
) -> Result<ContinuousStage> {
    if !report.passed() {
        return Err(Error::Precondition(
            "continuous stage needs passing certificates".into(),
        ));
    }
    let space = s.space().clone();
    let atoms = space.n_atoms();
    let steps = space.last();
    let probs = space.probabilities().to_vec();
    let certs = &report.certificates;
    let eps = certs[0].eps;
    let c = certs.iter().map(|c| c.c).fold(0.0, f64::max);
    let mut log = Vec::new();
    let mut checks = Vec::new();

    let extensions = report
        .decompositions
        .iter()
        .map(|d| extend_martingale(d, s))
        .collect::<Result<Vec<_>>>()?;
    for (ext, cert) in extensions.iter().zip(certs) {
        checks.push(Check::with_slack(
            format!("intermediate bound, level {}", ext.level),
            ext.intermediate,
            2.0,
        ));
        let a_rho = stop_unchecked(&ext.a, &cert.rho).sup_norm();
        checks.push(Check::with_slack(
            format!("stopped A sup-norm, level {}", ext.level),
            a_rho,
            c + 2.0,
        ));
    }

    // alive[i][k][a] = Rⁱ on finest step k + 1.
    let alive: Vec<Vec<Vec<f64>>> = certs
        .iter()
        .map(|cert| {
            (1..=steps)
                .map(|k| {
                    (0..atoms)
                        .map(|a| f64::from(u8::from(cert.rho.alive(a, k))))
                        .collect()
                })
                .collect()
        })
        .collect();
    let r_terminal: Vec<Vec<f64>> = alive.iter().map(|r| r[steps - 1].clone()).collect();

    let (weights, limit) = if r_terminal.len() >= 3 {
        let res = extract_convex(&r_terminal, &probs, komlos)?;
        log.extend(res.log.iter().map(|l| format!("komlos on R_1: {l}")));
        (res.weights, res.limit)
    } else {
        log.push(format!(
            "only {} levels: identity weights, limit = last element",
            r_terminal.len()
        ));
        (
            ConvexWeights::identity(r_terminal.len()),
            r_terminal.last().cloned().expect("non-empty"),
        )
    };

    struct Candidate {
        index: usize,
        m: AdaptedProcess,
        a: AdaptedProcess,
        alpha_n: StoppingTime,
        rbar_terminal: Vec<f64>,
        sbar_sup: f64,
        sbar_tv: f64,
    }
    let mut candidates = Vec::new();
    for step in &weights.steps {
        let mix = |k: usize, a: usize| -> f64 {
            step.weights
                .iter()
                .enumerate()
                .map(|(j, w)| w * alive[step.start + j][k][a])
                .sum()
        };
        let mut alpha_vals = vec![None; atoms];
        let mut sbar = vec![vec![0.0; atoms]; steps];
        for a in 0..atoms {
            for k in 0..steps {
                let r = mix(k, a);
                if r < 0.5 {
                    alpha_vals[a] = Some(k);
                    break;
                }
                sbar[k][a] = 1.0 / r;
            }
        }
        let alpha_n = StoppingTime::new(space.clone(), alpha_vals)?;
        let sbar_sup = sbar.iter().flatten().fold(0.0, |m: f64, v| m.max(v.abs()));
        let sbar_tv = (0..atoms)
            .map(|a| {
                (1..steps)
                    .map(|k| (sbar[k][a] - sbar[k - 1][a]).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max);

        let mut m_vals = vec![0.0; atoms * (steps + 1)];
        let mut a_vals = vec![0.0; atoms * (steps + 1)];
        for k in 0..steps {
            for a in 0..atoms {
                let (mut dm, mut da) = (0.0, 0.0);
                for (j, w) in step.weights.iter().enumerate() {
                    let i = step.start + j;
                    if *w == 0.0 || alive[i][k][a] == 0.0 {
                        continue;
                    }
                    let ext = &extensions[i];
                    dm += w * (ext.m.value(a, k + 1) - ext.m.value(a, k));
                    da += w * (ext.a.value(a, k + 1) - ext.a.value(a, k));
                }
                let base = k * atoms + a;
                m_vals[base + atoms] = m_vals[base] + sbar[k][a] * dm;
                a_vals[base + atoms] = a_vals[base] + sbar[k][a] * da;
            }
        }
        candidates.push(Candidate {
            index: step.n,
            m: AdaptedProcess::from_raw(space.clone(), m_vals),
            a: AdaptedProcess::from_raw(space.clone(), a_vals),
            alpha_n,
            rbar_terminal: (0..atoms).map(|a| mix(steps - 1, a)).collect(),
            sbar_sup,
            sbar_tv,
        });
    }

    // Subsequence with P(|R̄^{n_k}_1 − R̄_1| ≥ 1/15) ≤ ε 2^{−k}.
    let mut selected = Vec::new();
    for cand in candidates {
        let k = selected.len() + 1;
        let miss = space.probability_of(|a| (cand.rbar_terminal[a] - limit[a]).abs() >= 1.0 / 15.0);
        if miss <= eps * 0.5f64.powi(k as i32) {
            selected.push(cand);
        } else {
            log.push(format!(
                "level index {} skipped: P(miss) = {miss}",
                cand.index
            ));
        }
    }
    if selected.is_empty() {
        return Err(Error::Convergence(
            "no level satisfies the subsequence criterion".into(),
        ));
    }
    let mut alpha = selected[0].alpha_n.clone();
    for cand in &selected[1..] {
        alpha = alpha.min(&cand.alpha_n)?;
    }
    let alpha_prob = alpha.prob_finite();
    log.push(format!(
        "subsequence {:?}; P[α < ∞] = {alpha_prob}",
        selected
            .iter()
            .map(|c| report.levels[c.index])
            .collect::<Vec<_>>()
    ));
    checks.push(Check::with_slack("P[alpha < inf]", alpha_prob, 4.0 * eps));

    let s_alpha = stop_unchecked(s, &alpha);
    let c_prime = 6.0 * (c + 2.0) + 2.0 * c;
    let mut levels = Vec::new();
    for cand in selected {
        let level = report.levels[cand.index];
        let m = stop_unchecked(&cand.m, &alpha);
        let a = stop_unchecked(&cand.a, &alpha);
        let sum_err = m.add(&a)?.max_abs_diff(&s_alpha);
        checks.push(Check::with_slack(
            format!("M + A = S^alpha, level {level}"),
            sum_err,
            0.0,
        ));
        checks.push(Check::with_slack(
            format!("E[M_1^2] <= 4C, level {level}"),
            l2_sq(&space, m.terminal()),
            4.0 * c,
        ));
        let tv = a.grid_variation(level).into_iter().fold(0.0, f64::max);
        checks.push(Check::with_slack(
            format!("grid TV of A, level {level}"),
            tv,
            c_prime,
        ));
        checks.push(Check::with_slack(
            format!("sup of Sbar, level {level}"),
            cand.sbar_sup,
            2.0,
        ));
        checks.push(Check::with_slack(
            format!("TV of Sbar, level {level}"),
            cand.sbar_tv,
            3.0,
        ));
        checks.push(Check::with_slack(
            format!("P[alpha_n < inf], level {level}"),
            cand.alpha_n.prob_finite(),
            2.0 * eps,
        ));
        levels.push(LevelStage {
            level,
            index: cand.index,
            m,
            a,
            alpha_n: cand.alpha_n,
            rbar_terminal: cand.rbar_terminal,
            sbar_sup: cand.sbar_sup,
            sbar_tv: cand.sbar_tv,
        });
    }

    Ok(ContinuousStage {
        c,
        eps,
        alpha,
        levels,
        extensions,
        weights,
        checks,
        log,
    })
}

/// 𝓜 and 𝓐 on the finest grid with 𝓜 + 𝓐 = S^α (normalized units).
#[derive(Clone, Debug)]
pub struct Assembled {
    pub m: AdaptedProcess,
    pub a: AdaptedProcess,
    pub c_prime: f64,
    pub checks: Vec<Check>,
    pub log: Vec<String>,
}

/// Combines the stopped level processes with one weight schedule and takes limits.
pub fn assemble_decomposition(
    stage: &ContinuousStage,
    s: &AdaptedProcess,
    tol: f64,
    komlos: &KomlosConfig,
) -> Result<Assembled> {
    let space = s.space().clone();
    let steps = space.last();
    let probs = space.probabilities().to_vec();
    let mut log = Vec::new();
    let mut seqs: Vec<Vec<Vec<f64>>> = Vec::with_capacity(steps + 2);
    seqs.push(
        stage
            .levels
            .iter()
            .map(|l| l.m.terminal().to_vec())
            .collect(),
    );
    for t in 0..=steps {
        seqs.push(stage.levels.iter().map(|l| l.a.at(t).to_vec()).collect());
    }
    let limits: Vec<Vec<f64>> = if stage.levels.len() >= 3 {
        let cfg = KomlosConfig {
            tol,
            ..komlos.clone()
        };
        let res = extract_convex_multi(&seqs, &probs, &cfg)?;
        log.extend(res.log.iter().map(|l| format!("komlos on (M_1, A_t): {l}")));
        res.limits
    } else {
        log.push(format!(
            "{} stage levels: identity weights, limits = last element",
            stage.levels.len()
        ));
        seqs.iter()
            .map(|s| s.last().cloned().expect("non-empty"))
            .collect()
    };
    let by_time = (0..=steps)
        .map(|t| space.conditional_expectation(&limits[0], t))
        .collect::<Result<Vec<_>>>()?;
    let m = AdaptedProcess::from_raw(space.clone(), by_time.concat());
    let a = AdaptedProcess::from_raw(space.clone(), limits[1..].concat());

    let s_alpha = stop_unchecked(s, &stage.alpha);
    let c_prime = 6.0 * (stage.c + 2.0) + 2.0 * stage.c;
    let mut checks = vec![
        Check::new("M + A = S^alpha", m.add(&a)?.max_abs_diff(&s_alpha), tol),
        Check::new("martingale residual", martingale_residual(&m)?, tol),
        Check::new("A adapted", adaptedness_gap(&a), tol),
    ];
    let tv = a
        .grid_variation(space.level())
        .into_iter()
        .fold(0.0, f64::max);
    checks.push(Check::with_slack("finest-grid TV of A", tv, c_prime));
    Ok(Assembled {
        m,
        a,
        c_prime,
        checks,
        log,
    })
}

/// max_t ‖E[M_t − M_{t−1} | F_{t−1}]‖∞ on the finest grid.
pub fn martingale_residual(m: &AdaptedProcess) -> Result<f64> {
    let space = m.space();
    let mut worst: f64 = 0.0;
    for t in 1..=space.last() {
        let d: Vec<f64> = m
            .at(t)
            .iter()
            .zip(m.at(t - 1))
            .map(|(x, y)| x - y)
            .collect();
        let c = space.conditional_expectation(&d, t - 1)?;
        worst = c.iter().fold(worst, |w, v| w.max(v.abs()));
    }
    Ok(worst)
}

/// max_t of the largest within-cell spread of X_t.
pub fn adaptedness_gap(x: &AdaptedProcess) -> f64 {
    let space = x.space();
    let mut worst: f64 = 0.0;
    for t in 0..=space.last() {
        let mut lo = vec![f64::INFINITY; space.cell_count(t)];
        let mut hi = vec![f64::NEG_INFINITY; space.cell_count(t)];
        for (a, &c) in space.cells(t).iter().enumerate() {
            let v = x.value(a, t);
            lo[c as usize] = lo[c as usize].min(v);
            hi[c as usize] = hi[c as usize].max(v);
        }
        worst = lo.iter().zip(&hi).fold(worst, |w, (l, h)| w.max(h - l));
    }
    worst
}
