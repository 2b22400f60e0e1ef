//! End-to-end verdict: a certified decomposition or free-lunch evidence.

mod continuous;
mod ensemble;
mod split;
mod witness;

pub use continuous::{
    adaptedness_gap, assemble_decomposition, continuous_stage, extend_martingale, first_failure,
    martingale_residual, Assembled, Check, ContinuousStage, Extension, LevelStage,
};
pub use ensemble::{ensemble_stage, EnsembleStage};
pub use split::{big_jump_split, jump_risk_bound, jump_variation};
pub use witness::{
    free_lunch_rule, plateau, FreeLunchDecision, FreeLunchRule, WitnessRow, WitnessSample,
};

use serde::{Deserialize, Serialize};

use crate::doob::{discrete_stage, BlowUp, BlowUpStatistic, Ladder, StageConfig, StageReport};
use crate::error::{Error, Result};
use crate::generators::EnsembleProcess;
use crate::integrand::{integrate, li_metric, vr_metric, StrategySequence};
use crate::komlos::KomlosConfig;
use crate::space::{stop_unchecked, AdaptedProcess, StoppingTime};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    /// Level window; None means 1..=L (or [0] on a level-0 space).
    pub levels: Option<Vec<usize>>,
    pub eps: f64,
    pub tol: f64,
    pub ladder_max: u64,
    pub growth_min: f64,
    pub komlos_window: usize,
    pub rule: FreeLunchRule,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            levels: None,
            eps: 0.1,
            tol: 1e-8,
            ladder_max: 1 << 20,
            growth_min: 1.1,
            komlos_window: 16,
            rule: FreeLunchRule::default(),
        }
    }
}

impl DetectConfig {
    pub fn levels_for(&self, max_level: usize) -> Result<Vec<usize>> {
        let levels = match &self.levels {
            Some(l) => l.clone(),
            None if max_level == 0 => vec![0],
            None => (1..=max_level).collect(),
        };
        if levels.is_empty()
            || levels.iter().any(|&n| n > max_level)
            || levels.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::param(
                "levels",
                format!("need a strictly increasing list within 0..={max_level}"),
            ));
        }
        Ok(levels)
    }

    pub fn stage(&self) -> Result<StageConfig> {
        if !(self.tol > 0.0) {
            return Err(Error::param("tol", "must be positive"));
        }
        if !(self.growth_min > 1.0) {
            return Err(Error::param("growth_min", "must exceed 1"));
        }
        let ladder = Ladder::powers_of_two(self.ladder_max);
        if ladder.values.is_empty() {
            return Err(Error::param("ladder_max", "must be at least 8"));
        }
        Ok(StageConfig {
            eps: self.eps,
            ladder,
            growth_min: self.growth_min,
        })
    }

    pub fn komlos(&self) -> KomlosConfig {
        KomlosConfig {
            window: self.komlos_window,
            tol: self.tol,
            ..KomlosConfig::default()
        }
    }
}

/// S^α = M + A in original units, with M a martingale and A of finite variation.
#[derive(Clone, Debug)]
pub struct SemimartingaleCertificate {
    pub m: AdaptedProcess,
    pub a: AdaptedProcess,
    pub alpha: StoppingTime,
    pub c: f64,
    pub c_prime: f64,
    /// Variation bound for A in original units.
    pub c_report: f64,
    pub checks: Vec<Check>,
}

#[derive(Clone, Debug)]
pub struct FreeLunchEvidence {
    pub statistic: BlowUp,
    pub decision: FreeLunchDecision,
    /// The scaled strategies (exact mode only).
    pub strategies: Option<StrategySequence>,
    pub empirical: bool,
}

#[derive(Clone, Debug)]
pub enum Verdict {
    Semimartingale(Box<SemimartingaleCertificate>),
    FreeLunch(Box<FreeLunchEvidence>),
    Inconclusive { reason: String },
}

impl Verdict {
    pub fn kind(&self) -> &'static str {
        match self {
            Verdict::Semimartingale(_) => "SemimartingaleCertificate",
            Verdict::FreeLunch(_) => "FreeLunchEvidence",
            Verdict::Inconclusive { .. } => "Inconclusive",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub level: usize,
    pub qv_mean: f64,
    pub qv_std_error: Option<f64>,
    pub tv_mean: f64,
    pub tv_std_error: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub c: Option<f64>,
    pub stop_prob: Option<f64>,
    pub passed: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// S − J − S_0 is divided by κ.
    pub kappa: f64,
    pub has_jumps: bool,
    pub jump_variation_max: f64,
}

#[derive(Clone, Debug)]
pub struct DetectOutcome {
    pub verdict: Verdict,
    pub table: Vec<LevelRow>,
    pub normalization: Normalization,
    pub log: Vec<String>,
}

/// Normalized continuous part: ((S − J) − S_0)/κ with κ = max(1, ‖S − J − S_0‖∞),
/// where sup-norms within rounding of 1 count as 1.
pub fn normalize(s: &AdaptedProcess) -> (AdaptedProcess, AdaptedProcess, Vec<f64>, f64) {
    let (x, j) = big_jump_split(s);
    let s0 = x.at(0).to_vec();
    let space = s.space().clone();
    let centered = AdaptedProcess::from_fn(space, |a, t| x.value(a, t) - s0[a]).expect("adapted");
    let sup = centered.sup_norm();
    let kappa = if sup <= 1.0 + crate::space::ABS_TOL {
        1.0
    } else {
        sup
    };
    let z = if kappa == 1.0 {
        centered
    } else {
        centered.scale(1.0 / kappa)
    };
    (z, j, s0, kappa)
}

fn exact_table(stage: &StageReport) -> Vec<LevelRow> {
    stage
        .certificates
        .iter()
        .enumerate()
        .map(|(i, cert)| LevelRow {
            level: cert.level,
            qv_mean: stage.mean_qv[i],
            qv_std_error: None,
            tv_mean: stage.mean_tv[i],
            tv_std_error: None,
            c1: cert.c1.is_finite().then_some(cert.c1),
            c2: cert.c2.is_finite().then_some(cert.c2),
            c: cert.c.is_finite().then_some(cert.c),
            stop_prob: cert.c.is_finite().then_some(cert.stop_prob),
            passed: Some(cert.passed),
        })
        .collect()
}

/// Runs the full pipeline on a process over an exact filtered space.
pub fn detect(s: &AdaptedProcess, config: &DetectConfig) -> Result<DetectOutcome> {
    let space = s.space().clone();
    let levels = config.levels_for(space.level())?;
    let stage_cfg = config.stage()?;
    let komlos = config.komlos();
    let mut log = Vec::new();

    let (z, j, s0, kappa) = normalize(s);
    let jump_tv = jump_variation(&j);
    let normalization = Normalization {
        kappa,
        has_jumps: j.sup_norm() > 0.0,
        jump_variation_max: jump_tv.iter().copied().fold(0.0, f64::max),
    };
    log.push(format!(
        "normalization: kappa = {kappa}, big jumps present: {}",
        normalization.has_jumps
    ));

    let stage = discrete_stage(&z, &levels, &stage_cfg)?;
    log.extend(stage.log.iter().cloned());
    let table = exact_table(&stage);
    let finish = |verdict: Verdict, log: Vec<String>| DetectOutcome {
        verdict,
        table: table.clone(),
        normalization: normalization.clone(),
        log,
    };
    let inconclusive = |reason: String, mut log: Vec<String>| {
        log.push(format!("inconclusive: {reason}"));
        finish(Verdict::Inconclusive { reason }, log)
    };

    if stage.passed() {
        let cont = match continuous_stage(&z, &stage, &komlos) {
            Ok(c) => c,
            Err(e) => return Ok(inconclusive(format!("continuous stage: {e}"), log)),
        };
        log.extend(cont.log.iter().cloned());
        if let Some(f) = first_failure(&cont.checks) {
            return Ok(inconclusive(
                format!("continuous stage check failed: {}", f.name),
                log,
            ));
        }
        let assembled = match assemble_decomposition(&cont, &z, config.tol, &komlos) {
            Ok(a) => a,
            Err(e) => return Ok(inconclusive(format!("assembly: {e}"), log)),
        };
        log.extend(assembled.log.iter().cloned());
        if let Some(f) = first_failure(&assembled.checks) {
            return Ok(inconclusive(
                format!("assembly check failed: {}", f.name),
                log,
            ));
        }

        let alpha = cont.alpha.clone();
        let j_alpha = stop_unchecked(&j, &alpha);
        let m = AdaptedProcess::from_fn(space.clone(), |a, t| {
            s0[a] + kappa * assembled.m.value(a, t)
        })?;
        let a_proc = assembled.a.scale(kappa).add(&j_alpha)?;
        let jump_alpha_tv = jump_variation(&j_alpha).into_iter().fold(0.0, f64::max);
        let c_report = kappa * assembled.c_prime + jump_alpha_tv;
        let s_alpha = stop_unchecked(s, &alpha);
        let mut checks = cont.checks.clone();
        checks.extend(assembled.checks.iter().cloned());
        checks.extend(original_unit_checks(
            &m, &a_proc, &s_alpha, c_report, config.tol,
        )?);
        if let Some(f) = first_failure(&checks) {
            return Ok(inconclusive(
                format!("certificate check failed: {}", f.name),
                log,
            ));
        }
        log.push(format!(
            "certificate: C = {}, C' = {}, reported variation bound {c_report}",
            cont.c, assembled.c_prime
        ));
        let cert = SemimartingaleCertificate {
            m,
            a: a_proc,
            alpha,
            c: cont.c,
            c_prime: assembled.c_prime,
            c_report,
            checks,
        };
        return Ok(finish(Verdict::Semimartingale(Box::new(cert)), log));
    }

    let Some(blow_up) = stage.blow_up else {
        let failed = stage
            .certificates
            .iter()
            .find(|c| !c.passed)
            .map(|c| c.level);
        return Ok(inconclusive(
            format!("stage bounds failed at level {failed:?}"),
            log,
        ));
    };
    let mut samples = Vec::new();
    let mut strategies = Vec::new();
    for (i, cert) in stage.certificates.iter().enumerate() {
        let h = cert
            .witness
            .as_ref()
            .expect("failed stage carries witnesses");
        let mean = match blow_up.statistic {
            BlowUpStatistic::QuadraticVariation => stage.mean_qv[i],
            BlowUpStatistic::TotalVariation => stage.mean_tv[i],
        };
        samples.push(WitnessSample {
            level: cert.level,
            blow_up_mean: mean,
            li: li_metric(h),
            vr: vr_metric(h, &z)?,
            gains: integrate(h, &z, space.last())?,
            probs: space.probabilities().to_vec(),
        });
        strategies.push(h.clone());
    }
    let decision = free_lunch_rule(&samples, &config.rule);
    log.extend(decision.log.iter().cloned());
    if !decision.passed {
        return Ok(inconclusive(
            "free-lunch rule not met on the level window".into(),
            log,
        ));
    }
    let scaled = strategies
        .iter()
        .zip(&decision.rows)
        .map(|(h, r)| h.scaled(r.scale))
        .collect();
    let evidence = FreeLunchEvidence {
        statistic: blow_up,
        decision,
        strategies: Some(StrategySequence::new(scaled)),
        empirical: false,
    };
    Ok(finish(Verdict::FreeLunch(Box::new(evidence)), log))
}

/// Checks on the certificate expressed in the units of S.
pub fn original_unit_checks(
    m: &AdaptedProcess,
    a: &AdaptedProcess,
    s_alpha: &AdaptedProcess,
    c_report: f64,
    tol: f64,
) -> Result<Vec<Check>> {
    let scale = s_alpha.sup_norm().max(1.0);
    Ok(vec![
        Check::new(
            "original units: M + A = S^alpha",
            m.add(a)?.max_abs_diff(s_alpha),
            tol * scale,
        ),
        Check::new(
            "original units: martingale residual",
            martingale_residual(m)?,
            tol * scale,
        ),
        Check::new("original units: A adapted", adaptedness_gap(a), tol * scale),
        Check::with_slack(
            "original units: finest-grid TV of A",
            a.grid_variation(a.space().level())
                .into_iter()
                .fold(0.0, f64::max),
            c_report,
        ),
    ])
}

/// Ensemble branch: empirical free-lunch evidence or an inconclusive verdict.
pub fn detect_ensemble(e: &EnsembleProcess, config: &DetectConfig) -> Result<DetectOutcome> {
    let levels = config.levels_for(e.level())?;
    let stage_cfg = config.stage()?;
    let normalization = Normalization {
        kappa: 1.0,
        has_jumps: e.model.jump_step.is_some(),
        jump_variation_max: if e.model.jump_step.is_some() {
            e.model.jump_size
        } else {
            0.0
        },
    };
    let mut log = vec![format!(
        "ensemble of {} paths at level {}",
        e.n_paths(),
        e.level()
    )];
    let stage = match ensemble_stage(e, &levels, &stage_cfg) {
        Ok(s) => s,
        Err(Error::Precondition(reason)) => {
            log.push(format!("inconclusive: {reason}"));
            return Ok(DetectOutcome {
                verdict: Verdict::Inconclusive { reason },
                table: Vec::new(),
                normalization,
                log,
            });
        }
        Err(err) => return Err(err),
    };
    log.extend(stage.log.iter().cloned());
    let table = stage
        .levels
        .iter()
        .enumerate()
        .map(|(i, &level)| LevelRow {
            level,
            qv_mean: stage.qv[i].mean,
            qv_std_error: Some(stage.qv[i].std_error),
            tv_mean: stage.tv[i].mean,
            tv_std_error: Some(stage.tv[i].std_error),
            c1: stage.c1.value(),
            c2: stage.c2.value(),
            c: stage
                .c1
                .value()
                .zip(stage.c2.value())
                .map(|(a, b)| a.max(b)),
            stop_prob: None,
            passed: None,
        })
        .collect();
    let verdict = match stage.blow_up {
        None => Verdict::Inconclusive {
            reason: "no blow-up on sampled paths; a decomposition needs an exact filtration".into(),
        },
        Some(blow_up) => {
            let decision = free_lunch_rule(&stage.witnesses, &config.rule);
            log.extend(decision.log.iter().cloned());
            if decision.passed {
                Verdict::FreeLunch(Box::new(FreeLunchEvidence {
                    statistic: blow_up,
                    decision,
                    strategies: None,
                    empirical: true,
                }))
            } else {
                Verdict::Inconclusive {
                    reason: "free-lunch rule not met on the level window".into(),
                }
            }
        }
    };
    if let Verdict::Inconclusive { reason } = &verdict {
        log.push(format!("inconclusive: {reason}"));
    }
    Ok(DetectOutcome {
        verdict,
        table,
        normalization,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{generate, Generated, GeneratorSpec, ProcessKind};

    fn exact(kind: ProcessKind, level: usize) -> AdaptedProcess {
        match generate(&GeneratorSpec::exact(kind, level)).unwrap() {
            Generated::Exact { process, .. } => process,
            Generated::Ensemble(_) => unreachable!(),
        }
    }

    #[test]
    fn symmetric_tree_is_certified() {
        let s = exact(ProcessKind::RademacherBm, 2);
        let out = detect(&s, &DetectConfig::default()).unwrap();
        let Verdict::Semimartingale(cert) = &out.verdict else {
            panic!("{:?}", out.log)
        };
        assert!(cert.a.sup_norm() <= 1e-10);
        assert!(cert.alpha.is_infinite_everywhere());
    }

    #[test]
    fn drift_is_recovered() {
        let s = exact(ProcessKind::Drifted { mu: 0.5 }, 2);
        let out = detect(&s, &DetectConfig::default()).unwrap();
        let Verdict::Semimartingale(cert) = &out.verdict else {
            panic!("{:?}", out.log)
        };
        for t in 0..=4 {
            for a in 0..s.space().n_atoms() {
                assert!((cert.a.value(a, t) - 0.5 * t as f64 / 4.0).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn deterministic_drift_is_certified() {
        let s = exact(ProcessKind::DeterministicDrift, 3);
        let out = detect(&s, &DetectConfig::default()).unwrap();
        let Verdict::Semimartingale(cert) = &out.verdict else {
            panic!("{:?}", out.log)
        };
        assert_eq!(cert.m.sup_norm(), 0.0);
        assert_eq!(cert.a.max_abs_diff(&s), 0.0);
    }

    #[test]
    fn rough_process_gives_free_lunch() {
        let s = exact(ProcessKind::RlFractional { hurst: 0.75 }, 3);
        let out = detect(&s, &DetectConfig::default()).unwrap();
        let Verdict::FreeLunch(ev) = &out.verdict else {
            panic!("{:?}", out.log)
        };
        assert_eq!(ev.statistic.statistic, BlowUpStatistic::TotalVariation);
        assert!(ev.decision.passed);
    }

    #[test]
    fn jump_process_folds_jump_into_a() {
        let s = exact(ProcessKind::Jump { size: 1.5 }, 2);
        let out = detect(&s, &DetectConfig::default()).unwrap();
        assert!(out.normalization.has_jumps);
        let Verdict::Semimartingale(cert) = &out.verdict else {
            panic!("{:?}", out.log)
        };
        assert!(cert.m.add(&cert.a).unwrap().max_abs_diff(&s) <= 1e-10);
    }
}
