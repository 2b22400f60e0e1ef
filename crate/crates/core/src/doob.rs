//! Discrete Doob decompositions on dyadic grids and the stopping-time
//! constructions that bound them.
//!
//! Level-n objects live on the finest grid of the space: between level-n
//! points they are held constant (right-continuous steps), and level-n
//! stopping times take values in level-n grid points only.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrand::{integrate, SimpleIntegrand};
use crate::space::{AdaptedProcess, FilteredSpace, StoppingTime, ABS_TOL};

/// Sⁿ = Mⁿ + Aⁿ at level n.
#[derive(Clone, Debug)]
pub struct DoobDecomposition {
    pub level: usize,
    pub m: AdaptedProcess,
    pub a: AdaptedProcess,
    /// QVⁿ per atom.
    pub qv: Vec<f64>,
    /// Level-n total variation of Aⁿ per atom.
    pub tv: Vec<f64>,
    /// E[(Mⁿ_1)²].
    pub m_energy: f64,
}

impl DoobDecomposition {
    pub fn space(&self) -> &Arc<FilteredSpace> {
        self.m.space()
    }

    /// Finest-grid indices of the level-n points.
    pub fn grid_points(&self) -> Vec<usize> {
        let grid = self.space().grid();
        (0..=(1usize << self.level))
            .map(|k| grid.index_of(self.level, k))
            .collect()
    }
}

fn check_level(s: &AdaptedProcess, n: usize) -> Result<()> {
    if n > s.space().level() {
        return Err(Error::param(
            "level",
            format!("level {n} exceeds the grid level {}", s.space().level()),
        ));
    }
    Ok(())
}

/// The Doob decomposition of S sampled on the level-n grid.
pub fn doob_decompose(s: &AdaptedProcess, n: usize) -> Result<DoobDecomposition> {
    check_level(s, n)?;
    let space = s.space().clone();
    let grid = space.grid();
    let atoms = space.n_atoms();
    let stride = grid.stride(n);

    let mut a_vals = vec![0.0; atoms * grid.len()];
    let mut m_vals = vec![0.0; atoms * grid.len()];
    let mut a_cur = vec![0.0; atoms];
    let mut qv = vec![0.0; atoms];
    let mut tv = vec![0.0; atoms];
    for k in 0..=(1usize << n) {
        let t = k * stride;
        if k > 0 {
            let u = t - stride;
            let ds: Vec<f64> = s.at(t).iter().zip(s.at(u)).map(|(x, y)| x - y).collect();
            let da = space.conditional_expectation(&ds, u)?;
            for i in 0..atoms {
                a_cur[i] += da[i];
                qv[i] += ds[i] * ds[i];
                tv[i] += da[i].abs();
            }
        }
        let sample = s.at(t);
        let hold = if k == 1 << n { 1 } else { stride };
        for r in t..t + hold {
            let base = r * atoms;
            a_vals[base..base + atoms].copy_from_slice(&a_cur);
            for i in 0..atoms {
                m_vals[base + i] = sample[i] - a_cur[i];
            }
        }
    }
    let m = AdaptedProcess::from_raw(space.clone(), m_vals);
    let a = AdaptedProcess::from_raw(space.clone(), a_vals);
    let m_energy = space.expectation(&m.terminal().iter().map(|v| v * v).collect::<Vec<_>>());
    Ok(DoobDecomposition {
        level: n,
        m,
        a,
        qv,
        tv,
        m_energy,
    })
}

/// QVⁿ = Σ_j (S_{j/2ⁿ} − S_{(j−1)/2ⁿ})² per atom.
pub fn quadratic_variation(s: &AdaptedProcess, n: usize) -> Result<Vec<f64>> {
    check_level(s, n)?;
    let stride = s.space().grid().stride(n);
    let mut qv = vec![0.0; s.space().n_atoms()];
    for k in 1..=(1usize << n) {
        let (prev, cur) = (s.at((k - 1) * stride), s.at(k * stride));
        for (q, (x, y)) in qv.iter_mut().zip(cur.iter().zip(prev)) {
            *q += (x - y) * (x - y);
        }
    }
    Ok(qv)
}

/// hⁿ = −Σ_j S_{(j−1)/2ⁿ} 1_((j−1)/2ⁿ, j/2ⁿ], so that (hⁿ·S)_1 = ½QVⁿ + ½(S_0² − S_1²).
pub fn qv_strategy(s: &AdaptedProcess, n: usize) -> Result<SimpleIntegrand> {
    check_level(s, n)?;
    if s.sup_norm() > 1.0 + ABS_TOL {
        return Err(Error::Precondition(format!(
            "qv strategy needs ‖S‖∞ ≤ 1, got {}; rescale first",
            s.sup_norm()
        )));
    }
    let stride = s.space().grid().stride(n);
    let weights = (0..(1usize << n))
        .map(|j| s.at(j * stride).iter().map(|v| -v).collect())
        .collect();
    Ok(SimpleIntegrand::on_grid_unchecked(
        s.space().clone(),
        n,
        weights,
    ))
}

/// First level-n time at which a non-negative running sum reaches `threshold`.
fn first_crossing(
    space: &Arc<FilteredSpace>,
    n: usize,
    threshold: f64,
    increment: impl Fn(usize, usize) -> f64,
) -> StoppingTime {
    let grid = space.grid();
    let values = (0..space.n_atoms())
        .map(|a| {
            let mut sum = 0.0;
            for k in 1..=(1usize << n) {
                sum += increment(a, k);
                if sum >= threshold {
                    return Some(grid.index_of(n, k));
                }
            }
            None
        })
        .collect();
    StoppingTime::new(space.clone(), values).expect("grid-valued")
}

fn check_positive(name: &'static str, c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, "must be positive and finite"))
    }
}

/// σₙ(c): first k/2ⁿ with Σ_{j ≤ k} (ΔS)² ≥ c − 4.
pub fn sigma_stop(s: &AdaptedProcess, n: usize, c: f64) -> Result<StoppingTime> {
    check_level(s, n)?;
    check_positive("c", c)?;
    let stride = s.space().grid().stride(n);
    Ok(first_crossing(s.space(), n, c - 4.0, |a, k| {
        let d = s.value(a, k * stride) - s.value(a, (k - 1) * stride);
        d * d
    }))
}

/// τₙ(c): first k/2ⁿ with Σ_{j ≤ k} |ΔAⁿ| ≥ c − 2.
pub fn tau_stop(d: &DoobDecomposition, c: f64) -> Result<StoppingTime> {
    check_positive("c", c)?;
    let stride = d.space().grid().stride(d.level);
    Ok(first_crossing(d.space(), d.level, c - 2.0, |a, k| {
        (d.a.value(a, k * stride) - d.a.value(a, (k - 1) * stride)).abs()
    }))
}

/// Search ladder for the constants c₁, c₂.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ladder {
    pub values: Vec<f64>,
}

impl Default for Ladder {
    fn default() -> Self {
        Ladder::powers_of_two(1 << 20)
    }
}

impl Ladder {
    /// 8, 16, …, up to `max` inclusive.
    pub fn powers_of_two(max: u64) -> Self {
        let mut values = Vec::new();
        let mut c = 8u64;
        while c <= max {
            values.push(c as f64);
            c *= 2;
        }
        Ladder { values }
    }

    pub fn first(&self, mut accept: impl FnMut(f64) -> Result<bool>) -> Result<LadderOutcome> {
        for &c in &self.values {
            if accept(c)? {
                return Ok(LadderOutcome::Found(c));
            }
        }
        Ok(LadderOutcome::Exhausted)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LadderOutcome {
    Found(f64),
    Exhausted,
}

impl LadderOutcome {
    pub fn value(self) -> Option<f64> {
        match self {
            LadderOutcome::Found(c) => Some(c),
            LadderOutcome::Exhausted => None,
        }
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::param("eps", "must lie in (0, 1)"))
    }
}

/// Smallest ladder value c with P[σₙ(c) < ∞] < ε/2 for every listed level.
pub fn find_c1(
    s: &AdaptedProcess,
    levels: &[usize],
    eps: f64,
    ladder: &Ladder,
) -> Result<LadderOutcome> {
    check_eps(eps)?;
    ladder.first(|c| {
        for &n in levels {
            if sigma_stop(s, n, c)?.prob_finite() >= eps / 2.0 {
                return Ok(false);
            }
        }
        Ok(true)
    })
}

/// Smallest ladder value c with P[τₙ(c) < ∞] < ε/2 for every decomposition.
pub fn find_c2(decomps: &[DoobDecomposition], eps: f64, ladder: &Ladder) -> Result<LadderOutcome> {
    check_eps(eps)?;
    ladder.first(|c| {
        for d in decomps {
            if tau_stop(d, c)?.prob_finite() >= eps / 2.0 {
                return Ok(false);
            }
        }
        Ok(true)
    })
}

/// E[M_1²] − E[M_0²].
pub fn martingale_l2(m: &AdaptedProcess) -> f64 {
    let space = m.space();
    let sq = |x: &[f64]| space.expectation(&x.iter().map(|v| v * v).collect::<Vec<_>>());
    sq(m.terminal()) - sq(m.at(0))
}

/// Σ_k E[(ΔM_k)²] over the level-n grid.
pub fn increment_energy(m: &AdaptedProcess, n: usize) -> Vec<f64> {
    let space = m.space();
    let stride = space.grid().stride(n);
    (1..=(1usize << n))
        .map(|k| {
            let d: Vec<f64> = m
                .at(k * stride)
                .iter()
                .zip(m.at((k - 1) * stride))
                .map(|(x, y)| (x - y) * (x - y))
                .collect();
            space.expectation(&d)
        })
        .collect()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// bⁿ_{j−1} = sign(A^{n,stop}_{j/2ⁿ} − A^{n,stop}_{(j−1)/2ⁿ}); sign(0) = 0.
///
/// `stop` must take level-n grid values so that the weights stay predictable.
pub fn sign_strategy(d: &DoobDecomposition, stop: &StoppingTime) -> Result<SimpleIntegrand> {
    if !Arc::ptr_eq(stop.space(), d.space()) {
        return Err(Error::SpaceMismatch);
    }
    let space = d.space().clone();
    let stride = space.grid().stride(d.level);
    let weights = (1..=(1usize << d.level))
        .map(|k| {
            (0..space.n_atoms())
                .map(|a| {
                    let hi = (k * stride).min(stop.clamped(a));
                    let lo = ((k - 1) * stride).min(stop.clamped(a));
                    sign(d.a.value(a, hi) - d.a.value(a, lo))
                })
                .collect()
        })
        .collect();
    SimpleIntegrand::on_grid(space, d.level, weights)
        .map_err(|_| Error::Precondition("stop must take level-n grid values".into()))
}

/// First level-n time with |(h·M)| ≥ c₂.
pub fn doob_maximal_stop(
    d: &DoobDecomposition,
    h: &SimpleIntegrand,
    c2: f64,
) -> Result<StoppingTime> {
    check_positive("c2", c2)?;
    let space = d.space().clone();
    let points = d.grid_points();
    let running: Vec<Vec<f64>> = points
        .iter()
        .map(|&t| integrate(h, &d.m, t))
        .collect::<Result<_>>()?;
    let values = (0..space.n_atoms())
        .map(|a| {
            (1..points.len())
                .find(|&k| running[k][a].abs() >= c2)
                .map(|k| points[k])
        })
        .collect();
    StoppingTime::new(space, values)
}

/// Doob's L² maximal bound 4·E[(h·M)_1²]/c₂² on P[sup |h·M| ≥ c₂].
pub fn maximal_bound(d: &DoobDecomposition, h: &SimpleIntegrand, c2: f64) -> Result<f64> {
    let hm = integrate(h, &d.m, d.space().last())?;
    let e = d
        .space()
        .expectation(&hm.iter().map(|v| v * v).collect::<Vec<_>>());
    Ok(4.0 * e / (c2 * c2))
}

/// Which variation blows up when the discrete stage fails.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlowUpStatistic {
    QuadraticVariation,
    TotalVariation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum BlowUpReason {
    LadderExhausted,
    /// Strictly increasing means with the given geometric-mean per-level ratio.
    Growth {
        ratio: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowUp {
    pub statistic: BlowUpStatistic,
    pub reason: BlowUpReason,
}

/// Means below this are treated as zero by the growth rule.
pub const GROWTH_FLOOR: f64 = 1e-12;

/// Growth rule on a window of per-level means: strictly increasing, above the
/// noise floor, with geometric-mean ratio ≥ `growth_min`. Returns the ratio.
pub fn growth_ratio(means: &[f64], growth_min: f64) -> Option<f64> {
    if means.len() < 2 || means[0] <= GROWTH_FLOOR {
        return None;
    }
    if means.windows(2).any(|w| w[1] <= w[0]) {
        return None;
    }
    let ratio = (means[means.len() - 1] / means[0]).powf(1.0 / (means.len() - 1) as f64);
    (ratio >= growth_min).then_some(ratio)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub eps: f64,
    pub ladder: Ladder,
    pub growth_min: f64,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            eps: 0.1,
            ladder: Ladder::default(),
            growth_min: 1.1,
        }
    }
}

/// Per-level outcome of the discrete approximation stage.
#[derive(Clone, Debug)]
pub struct StageCertificate {
    pub level: usize,
    pub rho: StoppingTime,
    pub c1: f64,
    pub c2: f64,
    pub c: f64,
    /// max over atoms of TV(A^{n,ρₙ}).
    pub tv_bound: f64,
    /// E[(M^{n,ρₙ}_1)²].
    pub m_l2: f64,
    /// P[ρₙ < ∞].
    pub stop_prob: f64,
    pub eps: f64,
    pub passed: bool,
    /// Unscaled witness strategy on failure.
    pub witness: Option<SimpleIntegrand>,
}

#[derive(Clone, Debug)]
pub struct StageReport {
    pub levels: Vec<usize>,
    pub mean_qv: Vec<f64>,
    pub mean_tv: Vec<f64>,
    pub c1: LadderOutcome,
    pub c2: LadderOutcome,
    pub blow_up: Option<BlowUp>,
    pub certificates: Vec<StageCertificate>,
    pub decompositions: Vec<DoobDecomposition>,
    pub log: Vec<String>,
}

impl StageReport {
    pub fn passed(&self) -> bool {
        self.blow_up.is_none() && self.certificates.iter().all(|c| c.passed)
    }
}

/// Runs the level-wise approximation stage on a normalized process (S_0 = 0, ‖S‖∞ ≤ 1).
pub fn discrete_stage(
    s: &AdaptedProcess,
    levels: &[usize],
    config: &StageConfig,
) -> Result<StageReport> {
    check_eps(config.eps)?;
    if levels.is_empty() {
        return Err(Error::param("levels", "empty level range"));
    }
    if s.at(0).iter().any(|v| v.abs() > ABS_TOL) {
        return Err(Error::Precondition(
            "discrete stage needs S_0 = 0; subtract S_0 first".into(),
        ));
    }
    if s.sup_norm() > 1.0 + ABS_TOL {
        return Err(Error::Precondition(format!(
            "discrete stage needs ‖S‖∞ ≤ 1, got {}; rescale or stop S first",
            s.sup_norm()
        )));
    }
    let space = s.space().clone();
    let eps = config.eps;
    let mut log = Vec::new();

    let decompositions: Vec<DoobDecomposition> = levels
        .iter()
        .map(|&n| doob_decompose(s, n))
        .collect::<Result<_>>()?;
    let mean_qv: Vec<f64> = decompositions
        .iter()
        .map(|d| space.expectation(&d.qv))
        .collect();
    let mean_tv: Vec<f64> = decompositions
        .iter()
        .map(|d| space.expectation(&d.tv))
        .collect();
    log.push(format!(
        "levels {levels:?}: mean QV {mean_qv:?}, mean TV {mean_tv:?}"
    ));

    let c1 = find_c1(s, levels, eps, &config.ladder)?;
    let c2 = find_c2(&decompositions, eps, &config.ladder)?;
    log.push(format!("c1 search: {c1:?}; c2 search: {c2:?}"));

    let qv_growth = growth_ratio(&mean_qv, config.growth_min);
    let tv_growth = growth_ratio(&mean_tv, config.growth_min);
    let blow_up = match (c1, qv_growth, c2, tv_growth) {
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
    if let Some(b) = &blow_up {
        log.push(format!("discrete stage failed: {b:?}"));
    }

    let mut certificates = Vec::with_capacity(levels.len());
    for d in &decompositions {
        let cert = match (c1.value(), c2.value()) {
            (Some(c1), Some(c2)) => {
                let rho = sigma_stop(s, d.level, c1)?.min(&tau_stop(d, c2)?)?;
                certify(d, rho, c1, c2, eps, &blow_up)?
            }
            _ => StageCertificate {
                level: d.level,
                rho: StoppingTime::infinite(space.clone()),
                c1: c1.value().unwrap_or(f64::INFINITY),
                c2: c2.value().unwrap_or(f64::INFINITY),
                c: f64::INFINITY,
                tv_bound: f64::INFINITY,
                m_l2: f64::INFINITY,
                stop_prob: 1.0,
                eps,
                passed: false,
                witness: None,
            },
        };
        certificates.push(cert);
    }

    if let Some(b) = &blow_up {
        for (cert, d) in certificates.iter_mut().zip(&decompositions) {
            cert.witness = Some(match b.statistic {
                BlowUpStatistic::QuadraticVariation => qv_strategy(s, d.level)?,
                BlowUpStatistic::TotalVariation => sign_witness(
                    s,
                    d,
                    c1.value().expect("TV branch has c1"),
                    eps,
                    &config.ladder,
                )?,
            });
        }
    }

    Ok(StageReport {
        levels: levels.to_vec(),
        mean_qv,
        mean_tv,
        c1,
        c2,
        blow_up,
        certificates,
        decompositions,
        log,
    })
}

fn certify(
    d: &DoobDecomposition,
    rho: StoppingTime,
    c1: f64,
    c2: f64,
    eps: f64,
    blow_up: &Option<BlowUp>,
) -> Result<StageCertificate> {
    let space = d.space();
    let a_stop = crate::space::stop_unchecked(&d.a, &rho);
    let m_stop = crate::space::stop_unchecked(&d.m, &rho);
    let tv_bound = a_stop
        .grid_variation(d.level)
        .into_iter()
        .fold(0.0, f64::max);
    let m_l2 = space.expectation(&m_stop.terminal().iter().map(|v| v * v).collect::<Vec<_>>());
    let stop_prob = rho.prob_finite();
    let c = c1.max(c2);
    let passed = blow_up.is_none() && tv_bound <= c && m_l2 <= c && stop_prob < eps;
    Ok(StageCertificate {
        level: d.level,
        rho,
        c1,
        c2,
        c,
        tv_bound,
        m_l2,
        stop_prob,
        eps,
        passed,
        witness: None,
    })
}

/// Sign strategy stopped at σₙ(c₁) ∧ τ′ₙ, τ′ₙ the Doob-maximal stop of h·M.
pub fn sign_witness(
    s: &AdaptedProcess,
    d: &DoobDecomposition,
    c1: f64,
    eps: f64,
    ladder: &Ladder,
) -> Result<SimpleIntegrand> {
    let sigma = sigma_stop(s, d.level, c1)?;
    let h = sign_strategy(d, &sigma)?;
    let c2 = ladder
        .first(|c| Ok(doob_maximal_stop(d, &h, c)?.prob_finite() < eps / 2.0))?
        .value();
    match c2 {
        Some(c2) => {
            let stop = sigma.min(&doob_maximal_stop(d, &h, c2)?)?;
            sign_strategy(d, &stop)
        }
        None => Ok(h),
    }
}
