//! Simple integrands, their Riemann-sum integrals, and the free-lunch metrics.
//!
//! A simple integrand holds position f_j on (τ_{j−1}, τ_j] with f_j known at
//! τ_{j−1}. All stopping times are grid valued; ∞ is clamped to the terminal
//! time, so an integrand contributes nothing after T = 1.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::space::{check_stopping_time, AdaptedProcess, FilteredSpace, StoppingTime};

#[derive(Clone, Debug)]
pub struct SimpleIntegrand {
    space: Arc<FilteredSpace>,
    mesh: Vec<StoppingTime>,
    weights: Vec<Vec<f64>>,
}

impl SimpleIntegrand {
    /// `mesh` is τ_0 ≤ … ≤ τ_N and `weights[j − 1]` is f_j per atom.
    pub fn new(
        space: Arc<FilteredSpace>,
        mesh: Vec<StoppingTime>,
        weights: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = space.n_atoms();
        let last = space.last();
        if mesh.len() != weights.len() + 1 {
            return Err(Error::param(
                "mesh",
                "need one more stopping time than weights",
            ));
        }
        if mesh.iter().any(|tau| !Arc::ptr_eq(tau.space(), &space))
            || weights.iter().any(|w| w.len() != n)
        {
            return Err(Error::SpaceMismatch);
        }
        if (0..n).any(|a| mesh[0].get(a) != Some(0)) {
            return Err(Error::param("mesh", "τ_0 must be 0"));
        }
        if (0..n).any(|a| mesh[mesh.len() - 1].clamped(a) != last) {
            return Err(Error::param("mesh", "τ_N must be the terminal time"));
        }
        for (j, pair) in mesh.windows(2).enumerate() {
            if (0..n).any(|a| pair[0].clamped(a) > pair[1].clamped(a)) {
                return Err(Error::param(
                    "mesh",
                    format!("τ_{j} > τ_{} on some atom", j + 1),
                ));
            }
        }
        if let Some(j) = mesh.iter().position(|tau| !check_stopping_time(tau)) {
            return Err(Error::param(
                "mesh",
                format!("τ_{j} is not a stopping time"),
            ));
        }
        if weights.iter().flatten().any(|w| !w.is_finite()) {
            return Err(Error::param("weights", "non-finite position"));
        }
        let h = SimpleIntegrand {
            space,
            mesh,
            weights,
        };
        h.check_predictable()?;
        Ok(h)
    }

    /// An integrand rebalanced on the deterministic level-`level` grid;
    /// `weights[j − 1]` must be known at (j − 1)/2^level.
    pub fn on_grid(
        space: Arc<FilteredSpace>,
        level: usize,
        weights: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if level > space.level() {
            return Err(Error::param("level", "finer than the space's grid"));
        }
        if weights.len() != 1 << level {
            return Err(Error::param(
                "weights",
                format!("expected {} steps", 1 << level),
            ));
        }
        let grid = space.grid();
        let mesh = (0..=(1usize << level))
            .map(|k| StoppingTime::constant(space.clone(), Some(grid.index_of(level, k))))
            .collect::<Result<Vec<_>>>()?;
        SimpleIntegrand::new(space, mesh, weights)
    }

    /// c·1_(0,1].
    pub fn constant(space: Arc<FilteredSpace>, c: f64) -> Self {
        let n = space.n_atoms();
        SimpleIntegrand::on_grid(space, 0, vec![vec![c; n]]).expect("constant integrand is valid")
    }

    pub fn zero(space: Arc<FilteredSpace>) -> Self {
        SimpleIntegrand::constant(space, 0.0)
    }

    pub(crate) fn on_grid_unchecked(
        space: Arc<FilteredSpace>,
        level: usize,
        weights: Vec<Vec<f64>>,
    ) -> Self {
        let grid = space.grid();
        let mesh = (0..=(1usize << level))
            .map(|k| StoppingTime::constant(space.clone(), Some(grid.index_of(level, k))).unwrap())
            .collect();
        let h = SimpleIntegrand {
            space,
            mesh,
            weights,
        };
        debug_assert!(h.check_predictable().is_ok());
        h
    }

    /// f_j must be constant on the cell of the partition at τ_{j−1}(ω).
    fn check_predictable(&self) -> Result<()> {
        for (j, w) in self.weights.iter().enumerate() {
            let start = &self.mesh[j];
            let mut seen: HashMap<(usize, u32), f64> = HashMap::new();
            for (a, &v) in w.iter().enumerate() {
                let u = start.clamped(a);
                let cell = self.space.cells(u)[a];
                match seen.get(&(u, cell)) {
                    None => {
                        seen.insert((u, cell), v);
                    }
                    Some(&first) if first == v => {}
                    Some(_) => {
                        return Err(Error::param(
                            "weights",
                            format!("f_{} is not known at τ_{j}", j + 1),
                        ))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn space(&self) -> &Arc<FilteredSpace> {
        &self.space
    }

    pub fn mesh(&self) -> &[StoppingTime] {
        &self.mesh
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn n_steps(&self) -> usize {
        self.weights.len()
    }

    /// ‖H‖_∞.
    pub fn sup_norm(&self) -> f64 {
        self.weights
            .iter()
            .flatten()
            .fold(0.0, |m, w| m.max(w.abs()))
    }

    pub fn scaled(&self, c: f64) -> SimpleIntegrand {
        SimpleIntegrand {
            space: self.space.clone(),
            mesh: self.mesh.clone(),
            weights: self
                .weights
                .iter()
                .map(|w| w.iter().map(|v| c * v).collect())
                .collect(),
        }
    }

    /// a·H + b·H′ for integrands sharing the same mesh.
    pub fn combine(&self, a: f64, other: &SimpleIntegrand, b: f64) -> Result<SimpleIntegrand> {
        let same_mesh = Arc::ptr_eq(&self.space, &other.space)
            && self.mesh.len() == other.mesh.len()
            && self
                .mesh
                .iter()
                .zip(&other.mesh)
                .all(|(x, y)| x.values() == y.values());
        if !same_mesh {
            return Err(Error::param("mesh", "integrands do not share a mesh"));
        }
        let weights = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(u, v)| u.iter().zip(v).map(|(x, y)| a * x + b * y).collect())
            .collect();
        Ok(SimpleIntegrand {
            space: self.space.clone(),
            mesh: self.mesh.clone(),
            weights,
        })
    }

    /// H·1⟦0,τ⟧, with mesh τ_j ∧ τ and a closing zero-weight interval up to T.
    pub fn stopped(&self, tau: &StoppingTime) -> Result<SimpleIntegrand> {
        if !Arc::ptr_eq(tau.space(), &self.space) {
            return Err(Error::SpaceMismatch);
        }
        if !check_stopping_time(tau) {
            return Err(Error::Precondition(
                "argument is not a stopping time".into(),
            ));
        }
        let n = self.space.n_atoms();
        let mut mesh = self
            .mesh
            .iter()
            .map(|m| m.min(tau))
            .collect::<Result<Vec<_>>>()?;
        mesh.push(StoppingTime::constant(
            self.space.clone(),
            Some(self.space.last()),
        )?);
        let mut weights: Vec<Vec<f64>> = self
            .weights
            .iter()
            .enumerate()
            .map(|(j, w)| {
                (0..n)
                    .map(|a| {
                        if self.mesh[j].clamped(a) <= tau.clamped(a) {
                            w[a]
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        weights.push(vec![0.0; n]);
        Ok(SimpleIntegrand {
            space: self.space.clone(),
            mesh,
            weights,
        })
    }

    /// Positions per finest-grid step: `out[k − 1][ω]` is H on (t_{k−1}, t_k].
    pub fn fine_weights(&self) -> Vec<Vec<f64>> {
        let n = self.space.n_atoms();
        let steps = self.space.last();
        let mut out = vec![vec![0.0; n]; steps];
        for (j, w) in self.weights.iter().enumerate() {
            let (lo, hi) = (&self.mesh[j], &self.mesh[j + 1]);
            for a in 0..n {
                for row in out.iter_mut().take(hi.clamped(a)).skip(lo.clamped(a)) {
                    row[a] = w[a];
                }
            }
        }
        out
    }
}

fn check_space(h: &SimpleIntegrand, s: &AdaptedProcess) -> Result<()> {
    if Arc::ptr_eq(h.space(), s.space()) {
        Ok(())
    } else {
        Err(Error::SpaceMismatch)
    }
}

/// (H·S)_t = Σ_j f_j (S_{τ_j∧t} − S_{τ_{j−1}∧t}) per atom.
pub fn integrate(h: &SimpleIntegrand, s: &AdaptedProcess, t: usize) -> Result<Vec<f64>> {
    check_space(h, s)?;
    if t > s.space().last() {
        return Err(Error::param(
            "time",
            format!("grid index {t} is off the grid"),
        ));
    }
    let n = s.space().n_atoms();
    let mut acc = vec![0.0; n];
    for (j, w) in h.weights.iter().enumerate() {
        let (lo, hi) = (&h.mesh[j], &h.mesh[j + 1]);
        for a in 0..n {
            let (u, v) = (lo.clamped(a).min(t), hi.clamped(a).min(t));
            if u != v {
                acc[a] += w[a] * (s.value(a, v) - s.value(a, u));
            }
        }
    }
    Ok(acc)
}

/// The running integral t ↦ (H·S)_t on the finest grid.
pub fn integral_process(h: &SimpleIntegrand, s: &AdaptedProcess) -> Result<AdaptedProcess> {
    check_space(h, s)?;
    let space = s.space().clone();
    let n = space.n_atoms();
    let fine = h.fine_weights();
    let mut values = Vec::with_capacity(n * (fine.len() + 1));
    values.extend(std::iter::repeat_n(0.0, n));
    for (k, w) in fine.iter().enumerate() {
        let (prev, cur) = (s.at(k), s.at(k + 1));
        let base = k * n;
        for a in 0..n {
            let v = values[base + a] + w[a] * (cur[a] - prev[a]);
            values.push(v);
        }
    }
    Ok(AdaptedProcess::from_raw(space, values))
}

/// Vanishing-risk norm: sup_t ess sup (H·S)_t^−.
pub fn vr_metric(h: &SimpleIntegrand, s: &AdaptedProcess) -> Result<f64> {
    let running = integral_process(h, s)?;
    let p = s.space().probabilities();
    let mut worst: f64 = 0.0;
    for t in 0..=s.space().last() {
        for (a, &v) in running.at(t).iter().enumerate() {
            if p[a] > 0.0 {
                worst = worst.max(-v);
            }
        }
    }
    Ok(worst)
}

/// Little-investment norm ‖H‖_∞.
pub fn li_metric(h: &SimpleIntegrand) -> f64 {
    h.sup_norm()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrategyDiagnostics {
    pub li: f64,
    pub vr: f64,
    pub fl: f64,
}

/// An ordered sequence H¹, H², … of simple integrands.
#[derive(Clone, Debug, Default)]
pub struct StrategySequence {
    pub items: Vec<SimpleIntegrand>,
}

impl StrategySequence {
    pub fn new(items: Vec<SimpleIntegrand>) -> Self {
        StrategySequence { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// (li, vr, P[(H·S)_1 ≥ α]) per element.
    pub fn diagnostics(&self, s: &AdaptedProcess, alpha: f64) -> Result<Vec<StrategyDiagnostics>> {
        let fl = fl_statistic(self, s, alpha)?;
        self.items
            .iter()
            .zip(fl)
            .map(|(h, fl)| {
                Ok(StrategyDiagnostics {
                    li: li_metric(h),
                    vr: vr_metric(h, s)?,
                    fl,
                })
            })
            .collect()
    }
}

/// P[(Hⁿ·S)_1^+ ≥ α] per element.
pub fn fl_statistic(seq: &StrategySequence, s: &AdaptedProcess, alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0) {
        return Err(Error::param("alpha", "must be positive"));
    }
    let last = s.space().last();
    seq.items
        .iter()
        .map(|h| {
            let gains = integrate(h, s, last)?;
            Ok(s.space().probability_of(|a| gains[a] >= alpha))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    /// P[|(Hᵏ·S)_1| > δ] per element.
    pub tail: Vec<f64>,
    pub li: Vec<f64>,
    /// False when ‖Hᵏ‖_∞ does not decrease towards 0 along the sequence.
    pub li_vanishing: bool,
}

/// Statistical good-integrator probe: tail probabilities of the terminal integrals.
pub fn continuity_probe(
    s: &AdaptedProcess,
    seq: &StrategySequence,
    delta: f64,
) -> Result<ProbeReport> {
    if !(delta > 0.0) {
        return Err(Error::param("delta", "must be positive"));
    }
    let last = s.space().last();
    let mut tail = Vec::with_capacity(seq.len());
    for h in &seq.items {
        let gains = integrate(h, s, last)?;
        tail.push(s.space().probability_of(|a| gains[a].abs() > delta));
    }
    let li: Vec<f64> = seq.items.iter().map(li_metric).collect();
    let li_vanishing = li.windows(2).all(|w| w[1] <= w[0])
        && li
            .last()
            .is_none_or(|&l| l < li.first().copied().unwrap_or(0.0) || l == 0.0);
    Ok(ProbeReport {
        tail,
        li,
        li_vanishing,
    })
}
