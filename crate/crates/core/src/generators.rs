//! Reference processes driven by Rademacher innovations.
//!
//! Every kind is linear in the innovations, S_t = d_t + Σ_{i ≤ t} w_t[i]·ξ_i,
//! which gives exact sup-norms and a closed-form compensator
//! E[S_b − S_a | F_a] = d_b − d_a + Σ_{i ≤ a} (w_b[i] − w_a[i])·ξ_i.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{
    build_binary_tree, AdaptedProcess, FilteredSpace, ABS_TOL, DEFAULT_MAX_TREE_LEVEL,
};

pub const DEFAULT_JUMP_SIZE: f64 = 1.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessKind {
    RademacherBm,
    Drifted { mu: f64 },
    RlFractional { hurst: f64 },
    Jump { size: f64 },
    DeterministicDrift,
}

impl ProcessKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProcessKind::RademacherBm => "rademacher_bm",
            ProcessKind::Drifted { .. } => "drifted",
            ProcessKind::RlFractional { .. } => "rl_fractional",
            ProcessKind::Jump { .. } => "jump",
            ProcessKind::DeterministicDrift => "deterministic_drift",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Mode {
    Exact,
    Ensemble { paths: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub kind: ProcessKind,
    pub level: usize,
    /// None picks the largest scale with ‖S‖∞ ≤ 1 (continuous part for `jump`).
    pub scale: Option<f64>,
    pub seed: u64,
    #[serde(flatten)]
    pub mode: Mode,
}

impl GeneratorSpec {
    pub fn exact(kind: ProcessKind, level: usize) -> Self {
        GeneratorSpec {
            kind,
            level,
            scale: None,
            seed: 0,
            mode: Mode::Exact,
        }
    }

    pub fn ensemble(kind: ProcessKind, level: usize, paths: usize, seed: u64) -> Self {
        GeneratorSpec {
            kind,
            level,
            scale: None,
            seed,
            mode: Mode::Ensemble { paths },
        }
    }
}

/// S_t = drift[t] + Σ_{i < t} noise[t][i]·ξ_{i+1}, t on the finest grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub level: usize,
    pub drift: Vec<f64>,
    pub noise: Vec<Vec<f64>>,
    /// Finest step carrying the jump, 0-based (`jump` kind only).
    pub jump_step: Option<usize>,
    pub jump_size: f64,
    /// The scale actually used.
    pub scale: f64,
}

impl LinearModel {
    pub fn new(spec: &GeneratorSpec) -> Result<Self> {
        let level = spec.level;
        if level > 24 {
            return Err(Error::param("level", "at most 24"));
        }
        let n = 1usize << level;
        if let Some(s) = spec.scale {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::param("scale", "must be finite and non-negative"));
            }
        }
        let unit_bm = |t: usize| vec![2f64.powf(-(level as f64) / 2.0); t];
        let (drift, unit, jump_step, jump_size): (Vec<f64>, Vec<Vec<f64>>, _, _) = match spec.kind {
            ProcessKind::RademacherBm => {
                (vec![0.0; n + 1], (0..=n).map(unit_bm).collect(), None, 0.0)
            }
            ProcessKind::Drifted { mu } => {
                if !(mu.abs() < 1.0) {
                    return Err(Error::param("mu", "need |μ| < 1 to keep ‖S‖∞ ≤ 1"));
                }
                let drift = (0..=n).map(|t| mu * t as f64 / n as f64).collect();
                (drift, (0..=n).map(unit_bm).collect(), None, 0.0)
            }
            ProcessKind::RlFractional { hurst } => {
                if !(hurst > 0.0 && hurst < 1.0) {
                    return Err(Error::param("hurst", "must lie in (0, 1)"));
                }
                let a = hurst - 0.5;
                let c = (1..=n)
                    .map(|m| (m as f64).powf(2.0 * a))
                    .sum::<f64>()
                    .powf(-0.5);
                let unit = (0..=n)
                    .map(|t| (0..t).map(|i| c * ((t - i) as f64).powf(a)).collect())
                    .collect();
                (vec![0.0; n + 1], unit, None, 0.0)
            }
            ProcessKind::Jump { size } => {
                if level == 0 {
                    return Err(Error::param(
                        "level",
                        "jump kind needs level ≥ 1 (jump at t = ½)",
                    ));
                }
                if !(size.is_finite() && size >= 1.0) {
                    return Err(Error::param("size", "jump magnitude must be ≥ 1"));
                }
                (
                    vec![0.0; n + 1],
                    (0..=n).map(unit_bm).collect(),
                    Some(n / 2 - 1),
                    size,
                )
            }
            ProcessKind::DeterministicDrift => {
                let drift = (0..=n).map(|t| t as f64 / n as f64).collect();
                (drift, vec![Vec::new(); n + 1], None, 0.0)
            }
        };

        let unit_sup = unit
            .iter()
            .map(|w| w.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let scale = match (&spec.kind, spec.scale) {
            (ProcessKind::DeterministicDrift, s) => s.unwrap_or(1.0),
            (ProcessKind::Drifted { mu }, None) => (1.0 - mu.abs()) / unit_sup,
            (_, None) => 1.0 / unit_sup,
            (_, Some(s)) => s,
        };
        let (drift, mut noise) = match spec.kind {
            ProcessKind::DeterministicDrift => (drift.iter().map(|d| scale * d).collect(), unit),
            _ => (
                drift,
                unit.into_iter()
                    .map(|w| w.into_iter().map(|x| scale * x).collect())
                    .collect(),
            ),
        };
        let model_sup = LinearModel::sup_of(&drift, &noise);
        if model_sup > 1.0 + ABS_TOL {
            return Err(Error::param(
                "scale",
                format!("scale {scale} gives ‖S‖∞ = {model_sup} > 1"),
            ));
        }
        if let Some(j) = jump_step {
            for w in noise.iter_mut().skip(j + 1) {
                w[j] += jump_size;
            }
        }
        Ok(LinearModel {
            level,
            drift,
            noise,
            jump_step,
            jump_size,
            scale,
        })
    }

    fn sup_of(drift: &[f64], noise: &[Vec<f64>]) -> f64 {
        drift
            .iter()
            .zip(noise)
            .map(|(d, w)| d.abs() + w.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Exact sup over all innovation sequences of |S_t|.
    pub fn sup_norm(&self) -> f64 {
        LinearModel::sup_of(&self.drift, &self.noise)
    }

    pub fn steps(&self) -> usize {
        self.drift.len() - 1
    }

    /// S_t given (at least) the first t innovations.
    pub fn value(&self, xi: &[i8], t: usize) -> f64 {
        self.drift[t]
            + self.noise[t]
                .iter()
                .zip(xi)
                .map(|(w, &x)| w * x as f64)
                .sum::<f64>()
    }

    pub fn path(&self, xi: &[i8]) -> Vec<f64> {
        (0..=self.steps()).map(|t| self.value(xi, t)).collect()
    }

    /// E[S_b − S_a | F_a] for finest-grid indices a ≤ b.
    pub fn compensator_increment(&self, xi: &[i8], a: usize, b: usize) -> f64 {
        let (wa, wb) = (&self.noise[a], &self.noise[b]);
        self.drift[b] - self.drift[a]
            + wa.iter()
                .zip(wb)
                .zip(xi)
                .take(a)
                .map(|((x, y), &z)| (y - x) * z as f64)
                .sum::<f64>()
    }
}

/// Sampled innovation sequences with their paths and the linear model behind them.
#[derive(Clone, Debug)]
pub struct EnsembleProcess {
    pub spec: GeneratorSpec,
    pub model: LinearModel,
    pub innovations: Vec<Vec<i8>>,
    pub paths: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanWithError {
    pub mean: f64,
    pub std_error: f64,
}

impl MeanWithError {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        MeanWithError {
            mean,
            std_error: (var / n).sqrt(),
        }
    }
}

impl EnsembleProcess {
    pub fn level(&self) -> usize {
        self.model.level
    }

    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    /// Level-n compensator increments per path.
    pub fn compensator(&self, n: usize) -> Result<Vec<Vec<f64>>> {
        check_level(n, self.level())?;
        let stride = 1usize << (self.level() - n);
        Ok(self
            .innovations
            .par_iter()
            .map(|xi| {
                (1..=(1usize << n))
                    .map(|k| {
                        self.model
                            .compensator_increment(xi, (k - 1) * stride, k * stride)
                    })
                    .collect()
            })
            .collect())
    }

    /// Per-path (QVⁿ, TVⁿ of Aⁿ).
    pub fn variations(&self, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let comp = self.compensator(n)?;
        let stride = 1usize << (self.level() - n);
        let qv = self
            .paths
            .iter()
            .map(|p| {
                (1..=(1usize << n))
                    .map(|k| (p[k * stride] - p[(k - 1) * stride]).powi(2))
                    .sum()
            })
            .collect();
        let tv = comp
            .iter()
            .map(|c| c.iter().map(|x| x.abs()).sum())
            .collect();
        Ok((qv, tv))
    }

    pub fn mean_variations(&self, n: usize) -> Result<(MeanWithError, MeanWithError)> {
        let (qv, tv) = self.variations(n)?;
        Ok((MeanWithError::of(&qv), MeanWithError::of(&tv)))
    }
}

fn check_level(n: usize, level: usize) -> Result<()> {
    if n > level {
        Err(Error::param(
            "level",
            format!("level {n} exceeds the grid level {level}"),
        ))
    } else {
        Ok(())
    }
}

/// Per-path finest-step compensator increments E[ΔS_j | F_{j−1}].
pub fn compensator_oracle(e: &EnsembleProcess) -> Result<Vec<Vec<f64>>> {
    e.compensator(e.level())
}

#[derive(Clone, Debug)]
pub enum Generated {
    Exact {
        space: Arc<FilteredSpace>,
        process: AdaptedProcess,
        model: LinearModel,
    },
    Ensemble(EnsembleProcess),
}

/// Builds the full tree (exact mode) or samples paths (ensemble mode).
pub fn generate(spec: &GeneratorSpec) -> Result<Generated> {
    let model = LinearModel::new(spec)?;
    let mut resolved = spec.clone();
    resolved.scale = Some(model.scale);
    match spec.mode {
        Mode::Exact => {
            if spec.level > DEFAULT_MAX_TREE_LEVEL {
                return Err(Error::param(
                    "level",
                    format!(
                        "exact mode supports level ≤ {DEFAULT_MAX_TREE_LEVEL}; use ensemble mode"
                    ),
                ));
            }
            let (space, process) = match spec.kind {
                ProcessKind::DeterministicDrift => {
                    let space = FilteredSpace::deterministic(spec.level);
                    let process = AdaptedProcess::from_fn(space.clone(), |_, t| model.drift[t])?;
                    (space, process)
                }
                _ => build_binary_tree(spec.level, DEFAULT_MAX_TREE_LEVEL, |prefix| {
                    model.value(prefix, prefix.len())
                })?,
            };
            Ok(Generated::Exact {
                space,
                process,
                model,
            })
        }
        Mode::Ensemble { paths } => {
            if paths == 0 {
                return Err(Error::param("paths", "need at least one path"));
            }
            let steps = model.steps();
            let deterministic = matches!(spec.kind, ProcessKind::DeterministicDrift);
            let innovations: Vec<Vec<i8>> = (0..paths)
                .into_par_iter()
                .map(|p| {
                    if deterministic {
                        return Vec::new();
                    }
                    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                    rng.set_stream(p as u64);
                    (0..steps)
                        .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
                        .collect()
                })
                .collect();
            let path_values = innovations.par_iter().map(|xi| model.path(xi)).collect();
            Ok(Generated::Ensemble(EnsembleProcess {
                spec: resolved,
                model,
                innovations,
                paths: path_values,
            }))
        }
    }
}
