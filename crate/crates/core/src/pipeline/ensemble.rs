//! The discrete stage on sampled paths, using the analytic compensator.
//!
//! Conditional expectations at general times are unavailable for sampled
//! paths, so this branch can only produce empirical free-lunch evidence.

use rayon::prelude::*;

use crate::doob::{
    growth_ratio, BlowUp, BlowUpReason, BlowUpStatistic, Ladder, LadderOutcome, StageConfig,
};
use crate::error::{Error, Result};
use crate::generators::{EnsembleProcess, MeanWithError};

use super::witness::WitnessSample;

#[derive(Clone, Debug)]
pub struct EnsembleStage {
    pub levels: Vec<usize>,
    pub qv: Vec<MeanWithError>,
    pub tv: Vec<MeanWithError>,
    pub c1: LadderOutcome,
    pub c2: LadderOutcome,
    pub blow_up: Option<BlowUp>,
    pub witnesses: Vec<WitnessSample>,
    pub log: Vec<String>,
}

struct LevelPaths {
    level: usize,
    ds: Vec<Vec<f64>>,
    da: Vec<Vec<f64>>,
}

fn frac(paths: usize, hits: usize) -> f64 {
    hits as f64 / paths as f64
}

/// First k (1-based) where the running sum of `inc` reaches `threshold`.
fn crossing(inc: impl Iterator<Item = f64>, threshold: f64) -> Option<usize> {
    let mut sum = 0.0;
    for (k, x) in inc.enumerate() {
        sum += x;
        if sum >= threshold {
            return Some(k + 1);
        }
    }
    None
}

pub fn ensemble_stage(
    e: &EnsembleProcess,
    levels: &[usize],
    config: &StageConfig,
) -> Result<EnsembleStage> {
    if levels.is_empty() || levels.iter().any(|&n| n > e.level()) {
        return Err(Error::param("levels", "empty or beyond the ensemble level"));
    }
    if e.model.jump_step.is_some() || e.model.sup_norm() > 1.0 + crate::space::ABS_TOL {
        return Err(Error::Precondition(
            "ensemble analysis needs a jump-free model with ‖S‖∞ ≤ 1".into(),
        ));
    }
    let eps = config.eps;
    let paths = e.n_paths();
    let mut log = Vec::new();

    let data: Vec<LevelPaths> = levels
        .iter()
        .map(|&n| {
            let stride = 1usize << (e.level() - n);
            let ds = e
                .paths
                .par_iter()
                .map(|p| {
                    (1..=(1usize << n))
                        .map(|k| p[k * stride] - p[(k - 1) * stride])
                        .collect()
                })
                .collect();
            Ok(LevelPaths {
                level: n,
                ds,
                da: e.compensator(n)?,
            })
        })
        .collect::<Result<_>>()?;

    let qv_paths: Vec<Vec<f64>> = data
        .iter()
        .map(|d| d.ds.iter().map(|x| x.iter().map(|v| v * v).sum()).collect())
        .collect();
    let tv_paths: Vec<Vec<f64>> = data
        .iter()
        .map(|d| {
            d.da.iter()
                .map(|x| x.iter().map(|v| v.abs()).sum())
                .collect()
        })
        .collect();
    let qv: Vec<MeanWithError> = qv_paths.iter().map(|x| MeanWithError::of(x)).collect();
    let tv: Vec<MeanWithError> = tv_paths.iter().map(|x| MeanWithError::of(x)).collect();
    log.push(format!(
        "{paths} paths, levels {levels:?}: mean QV {:?}, mean TV {:?}",
        qv.iter().map(|m| m.mean).collect::<Vec<_>>(),
        tv.iter().map(|m| m.mean).collect::<Vec<_>>()
    ));

    let ladder = &config.ladder;
    let c1 = ladder.first(|c| {
        Ok(data.iter().all(|d| {
            let hits =
                d.ds.iter()
                    .filter(|x| crossing(x.iter().map(|v| v * v), c - 4.0).is_some())
                    .count();
            frac(paths, hits) < eps / 2.0
        }))
    })?;
    let c2 = ladder.first(|c| {
        Ok(data.iter().all(|d| {
            let hits =
                d.da.iter()
                    .filter(|x| crossing(x.iter().map(|v| v.abs()), c - 2.0).is_some())
                    .count();
            frac(paths, hits) < eps / 2.0
        }))
    })?;
    log.push(format!("c1 search: {c1:?}; c2 search: {c2:?}"));

    let means = |v: &[MeanWithError]| v.iter().map(|m| m.mean).collect::<Vec<_>>();
    let blow_up = match (
        c1,
        growth_ratio(&means(&qv), config.growth_min),
        c2,
        growth_ratio(&means(&tv), config.growth_min),
    ) {
        (LadderOutcome::Exhausted, _, _, _) => Some((
            BlowUpStatistic::QuadraticVariation,
            BlowUpReason::LadderExhausted,
        )),
        (_, Some(ratio), _, _) => Some((
            BlowUpStatistic::QuadraticVariation,
            BlowUpReason::Growth { ratio },
        )),
        (_, _, LadderOutcome::Exhausted, _) => Some((
            BlowUpStatistic::TotalVariation,
            BlowUpReason::LadderExhausted,
        )),
        (_, _, _, Some(ratio)) => Some((
            BlowUpStatistic::TotalVariation,
            BlowUpReason::Growth { ratio },
        )),
        _ => None,
    }
    .map(|(statistic, reason)| BlowUp { statistic, reason });

    let mut witnesses = Vec::new();
    if let Some(b) = &blow_up {
        log.push(format!("discrete stage failed: {b:?}"));
        for (i, d) in data.iter().enumerate() {
            let w = match b.statistic {
                BlowUpStatistic::QuadraticVariation => qv_witness(e, d, qv[i].mean),
                BlowUpStatistic::TotalVariation => sign_witness(
                    d,
                    c1.value().expect("TV branch has c1"),
                    eps,
                    ladder,
                    tv[i].mean,
                )?,
            };
            witnesses.push(w);
        }
    }

    Ok(EnsembleStage {
        levels: levels.to_vec(),
        qv,
        tv,
        c1,
        c2,
        blow_up,
        witnesses,
        log,
    })
}

fn summarize(level: usize, mean: f64, positions: &[Vec<f64>], ds: &[Vec<f64>]) -> WitnessSample {
    let paths = ds.len();
    let mut gains = Vec::with_capacity(paths);
    let mut vr: f64 = 0.0;
    for (h, x) in positions.iter().zip(ds) {
        let mut run = 0.0;
        for (w, d) in h.iter().zip(x) {
            run += w * d;
            vr = vr.max(-run);
        }
        gains.push(run);
    }
    let li = positions
        .iter()
        .flatten()
        .fold(0.0, |m: f64, v| m.max(v.abs()));
    WitnessSample {
        level,
        blow_up_mean: mean,
        li,
        vr,
        gains,
        probs: vec![1.0 / paths as f64; paths],
    }
}

fn qv_witness(e: &EnsembleProcess, d: &LevelPaths, mean: f64) -> WitnessSample {
    let stride = 1usize << (e.level() - d.level);
    let positions: Vec<Vec<f64>> = e
        .paths
        .iter()
        .map(|p| (0..(1usize << d.level)).map(|k| -p[k * stride]).collect())
        .collect();
    summarize(d.level, mean, &positions, &d.ds)
}

fn sign_witness(
    d: &LevelPaths,
    c1: f64,
    eps: f64,
    ladder: &Ladder,
    mean: f64,
) -> Result<WitnessSample> {
    let paths = d.ds.len();
    let sign = |x: f64| {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let base: Vec<Vec<f64>> =
        d.ds.iter()
            .zip(&d.da)
            .map(|(ds, da)| {
                let sigma = crossing(ds.iter().map(|v| v * v), c1 - 4.0).unwrap_or(usize::MAX);
                da.iter()
                    .enumerate()
                    .map(|(k, a)| if k < sigma { sign(*a) } else { 0.0 })
                    .collect()
            })
            .collect();
    let hm_cross = |h: &[f64], ds: &[f64], da: &[f64], c: f64| -> Option<usize> {
        let mut run: f64 = 0.0;
        for k in 0..h.len() {
            run += h[k] * (ds[k] - da[k]);
            if run.abs() >= c {
                return Some(k + 1);
            }
        }
        None
    };
    let c2 = ladder.first(|c| {
        let hits = (0..paths)
            .filter(|&p| hm_cross(&base[p], &d.ds[p], &d.da[p], c).is_some())
            .count();
        Ok(frac(paths, hits) < eps / 2.0)
    })?;
    let positions: Vec<Vec<f64>> = match c2.value() {
        Some(c) => (0..paths)
            .map(|p| {
                let tau = hm_cross(&base[p], &d.ds[p], &d.da[p], c).unwrap_or(usize::MAX);
                base[p]
                    .iter()
                    .enumerate()
                    .map(|(k, b)| if k < tau { *b } else { 0.0 })
                    .collect()
            })
            .collect(),
        None => base,
    };
    Ok(summarize(d.level, mean, &positions, &d.ds))
}
