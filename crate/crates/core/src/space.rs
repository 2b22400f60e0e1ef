//! Finite filtered probability spaces.
//!
//! The filtration is stored as one partition of the atom set per time of the
//! finest dyadic grid. Conditional expectation given the time-`t` information
//! is then a probability-weighted average over the cells of that partition.
//! Times are addressed by their index on the finest grid; `None` in a
//! stopping time stands for ∞.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for identities that hold exactly in real arithmetic.
pub const ABS_TOL: f64 = 1e-12;

/// Full trees beyond this level are refused by default (2^(2^level) atoms).
pub const DEFAULT_MAX_TREE_LEVEL: usize = 4;

const INFINITY: u32 = u32::MAX;

/// The times {0, 1/2ⁿ, …, 1}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DyadicGrid {
    level: usize,
}

impl DyadicGrid {
    pub fn new(level: usize) -> Self {
        assert!(level < 24, "dyadic level {level} is not representable");
        DyadicGrid { level }
    }

    pub fn level(&self) -> usize {
        self.level
    }

    /// Number of steps 2ⁿ.
    pub fn steps(&self) -> usize {
        1 << self.level
    }

    /// Number of grid times 2ⁿ + 1.
    pub fn len(&self) -> usize {
        self.steps() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, index: usize) -> f64 {
        index as f64 / self.steps() as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.time(j)).collect()
    }

    /// Spacing, in finest-grid indices, of the coarser level-`level` grid.
    pub fn stride(&self, level: usize) -> usize {
        debug_assert!(level <= self.level);
        1 << (self.level - level)
    }

    /// Finest-grid index of the coarse grid point k/2^level.
    pub fn index_of(&self, level: usize, k: usize) -> usize {
        k * self.stride(level)
    }

    /// The largest level-`level` grid index (in finest units) not exceeding `index`.
    pub fn floor_to(&self, level: usize, index: usize) -> usize {
        let s = self.stride(level);
        (index / s) * s
    }
}

/// An exact probability numerator / 2^log2_denominator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dyadic {
    pub numerator: u64,
    pub log2_denominator: u32,
}

impl Dyadic {
    pub const ONE: Dyadic = Dyadic {
        numerator: 1,
        log2_denominator: 0,
    };

    pub fn new(numerator: u64, log2_denominator: u32) -> Self {
        Dyadic {
            numerator,
            log2_denominator,
        }
    }

    pub fn to_f64(self) -> f64 {
        self.numerator as f64 * (-(self.log2_denominator as f64)).exp2()
    }

    /// Exact test of Σ pᵢ = 1. Denominators beyond 2^100 are rejected as unsupported.
    pub fn sums_to_one(values: &[Dyadic]) -> Option<bool> {
        let max_den = values.iter().map(|d| d.log2_denominator).max().unwrap_or(0);
        if max_den > 100 {
            return None;
        }
        let mut total: u128 = 0;
        for d in values {
            let shifted = (d.numerator as u128).checked_shl(max_den - d.log2_denominator)?;
            total = total.checked_add(shifted)?;
        }
        Some(total == 1u128 << max_den)
    }
}

impl fmt::Display for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/2^{}", self.numerator, self.log2_denominator)
    }
}

/// A finite set of atoms with positive probabilities and a refining partition per grid time.
#[derive(Debug)]
pub struct FilteredSpace {
    grid: DyadicGrid,
    dyadic: Vec<Dyadic>,
    probabilities: Vec<f64>,
    cells: Vec<Vec<u32>>,
    cell_probabilities: Vec<Vec<f64>>,
    innovations: Vec<Vec<i8>>,
}

impl FilteredSpace {
    /// Builds a space from explicit partitions (`cells[t][atom]` = cell id at grid time t).
    pub fn new(
        level: usize,
        probabilities: Vec<Dyadic>,
        cells: Vec<Vec<u32>>,
        innovations: Vec<Vec<i8>>,
    ) -> Result<Self> {
        let grid = DyadicGrid::new(level);
        let n_atoms = probabilities.len();
        if n_atoms == 0 {
            return Err(Error::Invariant("filtered space has no atoms".into()));
        }
        if cells.len() != grid.len() {
            return Err(Error::Invariant(format!(
                "expected {} partitions, got {}",
                grid.len(),
                cells.len()
            )));
        }
        if probabilities.iter().any(|p| p.numerator == 0) {
            return Err(Error::Invariant("atom with zero probability".into()));
        }
        let probs: Vec<f64> = probabilities.iter().map(|d| d.to_f64()).collect();
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > ABS_TOL {
            return Err(Error::Invariant(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        if Dyadic::sums_to_one(&probabilities) == Some(false) {
            return Err(Error::Invariant(
                "dyadic probabilities do not sum to exactly 1".into(),
            ));
        }
        let mut cell_probabilities = Vec::with_capacity(cells.len());
        for (t, part) in cells.iter().enumerate() {
            if part.len() != n_atoms {
                return Err(Error::Invariant(format!("partition {t} has wrong length")));
            }
            let count = part.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
            let mut mass = vec![0.0; count];
            for (a, &c) in part.iter().enumerate() {
                mass[c as usize] += probs[a];
            }
            if mass.iter().any(|&m| m <= 0.0) {
                return Err(Error::Invariant(format!(
                    "partition {t} has an empty or null cell (cell ids must be dense)"
                )));
            }
            cell_probabilities.push(mass);
        }
        // Refinement: every time-t cell sits inside one time-(t-1) cell.
        for t in 1..cells.len() {
            let mut parent = vec![INFINITY; cell_probabilities[t].len()];
            for a in 0..n_atoms {
                let c = cells[t][a] as usize;
                let p = cells[t - 1][a];
                if parent[c] == INFINITY {
                    parent[c] = p;
                } else if parent[c] != p {
                    return Err(Error::Invariant(format!(
                        "partition at grid index {t} does not refine the one at {}",
                        t - 1
                    )));
                }
            }
        }
        if !innovations.is_empty() && innovations.len() != n_atoms {
            return Err(Error::Invariant("innovation table length mismatch".into()));
        }
        Ok(FilteredSpace {
            grid,
            dyadic: probabilities,
            probabilities: probs,
            cells,
            cell_probabilities,
            innovations,
        })
    }

    /// Groups atoms by the prefixes of their innovation sequences.
    ///
    /// Every sequence must have length 2^level, or all must be empty
    /// (a space whose filtration is trivial at every time).
    pub fn from_innovations(level: usize, atoms: Vec<(Dyadic, Vec<i8>)>) -> Result<Self> {
        let grid = DyadicGrid::new(level);
        let steps = grid.steps();
        let all_empty = atoms.iter().all(|(_, xi)| xi.is_empty());
        if !all_empty {
            if let Some(i) = atoms.iter().position(|(_, xi)| xi.len() != steps) {
                return Err(Error::format(
                    format!("atoms[{i}].innovations"),
                    format!("expected {steps} innovations"),
                ));
            }
        }
        let mut cells = Vec::with_capacity(grid.len());
        for t in 0..grid.len() {
            let mut ids: HashMap<&[i8], u32> = HashMap::new();
            let mut row = Vec::with_capacity(atoms.len());
            for (_, xi) in &atoms {
                let key = if all_empty { &xi[..] } else { &xi[..t] };
                let next = ids.len() as u32;
                row.push(*ids.entry(key).or_insert(next));
            }
            cells.push(row);
        }
        let (probs, innovations): (Vec<_>, Vec<_>) = atoms.into_iter().unzip();
        let innovations = if all_empty { Vec::new() } else { innovations };
        FilteredSpace::new(level, probs, cells, innovations)
    }

    /// The full binary innovation tree: atoms are all ±1 sequences of length 2^level,
    /// ordered lexicographically with + before −.
    pub fn binary_tree(level: usize, max_level: usize) -> Result<Arc<Self>> {
        if level > max_level {
            let atoms = if level < 7 {
                (1u128 << (1u32 << level)).to_string()
            } else {
                format!("2^{}", 1u64 << level)
            };
            return Err(Error::ResourceLimit {
                level,
                max_level,
                atoms,
            });
        }
        let grid = DyadicGrid::new(level);
        let steps = grid.steps();
        let n_atoms = 1usize << steps;
        let prob = Dyadic::new(1, steps as u32);
        let cells = (0..grid.len())
            .map(|t| (0..n_atoms).map(|a| (a >> (steps - t)) as u32).collect())
            .collect();
        let innovations = (0..n_atoms)
            .map(|a| {
                (1..=steps)
                    .map(|j| if (a >> (steps - j)) & 1 == 0 { 1 } else { -1 })
                    .collect()
            })
            .collect();
        FilteredSpace::new(level, vec![prob; n_atoms], cells, innovations).map(Arc::new)
    }

    /// A single atom with the trivial filtration on the level-`level` grid.
    pub fn deterministic(level: usize) -> Arc<Self> {
        let grid = DyadicGrid::new(level);
        Arc::new(
            FilteredSpace::new(
                level,
                vec![Dyadic::ONE],
                vec![vec![0]; grid.len()],
                Vec::new(),
            )
            .expect("one-atom space is valid"),
        )
    }

    pub fn grid(&self) -> DyadicGrid {
        self.grid
    }

    pub fn level(&self) -> usize {
        self.grid.level
    }

    /// Index of the terminal time 1 on the finest grid.
    pub fn last(&self) -> usize {
        self.grid.steps()
    }

    pub fn n_atoms(&self) -> usize {
        self.probabilities.len()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn dyadic_probabilities(&self) -> &[Dyadic] {
        &self.dyadic
    }

    /// Innovation sequences per atom; empty for spaces not generated from innovations.
    pub fn innovations(&self) -> &[Vec<i8>] {
        &self.innovations
    }

    pub fn cells(&self, t: usize) -> &[u32] {
        &self.cells[t]
    }

    pub fn cell_count(&self, t: usize) -> usize {
        self.cell_probabilities[t].len()
    }

    pub fn cell_probabilities(&self, t: usize) -> &[f64] {
        &self.cell_probabilities[t]
    }

    /// One representative atom per cell at time t, in cell-id order.
    pub fn representatives(&self, t: usize) -> Vec<usize> {
        let mut reps = vec![usize::MAX; self.cell_count(t)];
        for (a, &c) in self.cells[t].iter().enumerate() {
            if reps[c as usize] == usize::MAX {
                reps[c as usize] = a;
            }
        }
        reps
    }

    pub fn expectation(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.probabilities).map(|(v, p)| v * p).sum()
    }

    /// P[event], with the event given per atom.
    pub fn probability_of(&self, event: impl Fn(usize) -> bool) -> f64 {
        (0..self.n_atoms())
            .filter(|&a| event(a))
            .fold(0.0, |acc, a| acc + self.probabilities[a])
    }

    /// E[X | F_t]: the probability-weighted average of X over each cell of the time-t partition.
    pub fn conditional_expectation(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        if x.len() != self.n_atoms() {
            return Err(Error::SpaceMismatch);
        }
        if t >= self.grid.len() {
            return Err(Error::param(
                "time",
                format!("grid index {t} is off the grid"),
            ));
        }
        let cells = &self.cells[t];
        let mass = &self.cell_probabilities[t];
        let mut sums = vec![0.0; mass.len()];
        for (a, &c) in cells.iter().enumerate() {
            sums[c as usize] += self.probabilities[a] * x[a];
        }
        for (s, &m) in sums.iter_mut().zip(mass) {
            if m <= 0.0 {
                return Err(Error::Invariant("cell with zero probability".into()));
            }
            *s /= m;
        }
        Ok(cells.iter().map(|&c| sums[c as usize]).collect())
    }

    /// True if `x` is constant (within `tol`) on every cell of the time-t partition.
    pub fn is_measurable(&self, x: &[f64], t: usize, tol: f64) -> bool {
        let mut first = vec![f64::NAN; self.cell_count(t)];
        for (a, &c) in self.cells[t].iter().enumerate() {
            let slot = &mut first[c as usize];
            if slot.is_nan() {
                *slot = x[a];
            } else if (*slot - x[a]).abs() > tol {
                return false;
            }
        }
        true
    }
}

/// A process on the finest grid, stored time-major.
#[derive(Clone, Debug)]
pub struct AdaptedProcess {
    space: Arc<FilteredSpace>,
    values: Vec<f64>,
}

impl AdaptedProcess {
    /// Builds a process from per-time value vectors and checks finiteness and adaptedness.
    pub fn new(space: Arc<FilteredSpace>, by_time: Vec<Vec<f64>>) -> Result<Self> {
        let n = space.n_atoms();
        if by_time.len() != space.grid().len() || by_time.iter().any(|v| v.len() != n) {
            return Err(Error::SpaceMismatch);
        }
        let process = AdaptedProcess {
            space,
            values: by_time.concat(),
        };
        process.check()?;
        Ok(process)
    }

    /// Builds a process from a value function of (atom, grid index).
    pub fn from_fn(space: Arc<FilteredSpace>, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let n = space.n_atoms();
        let values = (0..space.grid().len())
            .flat_map(|t| (0..n).map(move |a| (a, t)))
            .map(|(a, t)| f(a, t))
            .collect();
        let process = AdaptedProcess { space, values };
        process.check()?;
        Ok(process)
    }

    /// Internal constructor for values adapted by construction.
    pub(crate) fn from_raw(space: Arc<FilteredSpace>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), space.n_atoms() * space.grid().len());
        AdaptedProcess { space, values }
    }

    pub fn zeros(space: Arc<FilteredSpace>) -> Self {
        let len = space.n_atoms() * space.grid().len();
        AdaptedProcess::from_raw(space, vec![0.0; len])
    }

    /// Finiteness plus constancy on the partition cells at every time.
    pub fn check(&self) -> Result<()> {
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            let n = self.space.n_atoms();
            return Err(Error::Invariant(format!(
                "non-finite value at atom {}, grid index {}",
                i % n,
                i / n
            )));
        }
        for t in 0..self.space.grid().len() {
            let tol = ABS_TOL * self.at(t).iter().fold(1.0_f64, |m, v| m.max(v.abs()));
            if !self.space.is_measurable(self.at(t), t, tol) {
                return Err(Error::Invariant(format!(
                    "process is not adapted at grid index {t}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_adapted(&self) -> bool {
        self.check().is_ok()
    }

    pub fn space(&self) -> &Arc<FilteredSpace> {
        &self.space
    }

    pub fn same_space(&self, other: &Arc<FilteredSpace>) -> bool {
        Arc::ptr_eq(&self.space, other)
    }

    pub fn at(&self, t: usize) -> &[f64] {
        let n = self.space.n_atoms();
        &self.values[t * n..(t + 1) * n]
    }

    pub(crate) fn at_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.space.n_atoms();
        &mut self.values[t * n..(t + 1) * n]
    }

    pub fn value(&self, atom: usize, t: usize) -> f64 {
        self.values[t * self.space.n_atoms() + atom]
    }

    pub fn path(&self, atom: usize) -> Vec<f64> {
        (0..self.space.grid().len())
            .map(|t| self.value(atom, t))
            .collect()
    }

    pub fn terminal(&self) -> &[f64] {
        self.at(self.space.last())
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &AdaptedProcess) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> AdaptedProcess {
        AdaptedProcess::from_raw(
            self.space.clone(),
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn scale(&self, c: f64) -> AdaptedProcess {
        self.map(|v| c * v)
    }

    pub fn zip_with(
        &self,
        other: &AdaptedProcess,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<AdaptedProcess> {
        if !Arc::ptr_eq(&self.space, &other.space) {
            return Err(Error::SpaceMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(AdaptedProcess::from_raw(self.space.clone(), values))
    }

    pub fn add(&self, other: &AdaptedProcess) -> Result<AdaptedProcess> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &AdaptedProcess) -> Result<AdaptedProcess> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Per-atom Σ |X_{t_j} − X_{t_{j−1}}| over the level-`level` grid.
    pub fn grid_variation(&self, level: usize) -> Vec<f64> {
        let grid = self.space.grid();
        let stride = grid.stride(level);
        let mut tv = vec![0.0; self.space.n_atoms()];
        for k in 1..=(1usize << level) {
            let (prev, cur) = (self.at((k - 1) * stride), self.at(k * stride));
            for a in 0..tv.len() {
                tv[a] += (cur[a] - prev[a]).abs();
            }
        }
        tv
    }
}

/// A random grid time, or ∞, per atom.
#[derive(Clone, Debug)]
pub struct StoppingTime {
    space: Arc<FilteredSpace>,
    values: Vec<u32>,
}

impl StoppingTime {
    /// Wraps raw values; measurability is checked separately by [`check_stopping_time`].
    pub fn new(space: Arc<FilteredSpace>, values: Vec<Option<usize>>) -> Result<Self> {
        if values.len() != space.n_atoms() {
            return Err(Error::SpaceMismatch);
        }
        let last = space.last();
        let mut raw = Vec::with_capacity(values.len());
        for v in values {
            match v {
                Some(t) if t > last => {
                    return Err(Error::param(
                        "stopping time",
                        format!("grid index {t} > {last}"),
                    ))
                }
                Some(t) => raw.push(t as u32),
                None => raw.push(INFINITY),
            }
        }
        Ok(StoppingTime { space, values: raw })
    }

    pub fn constant(space: Arc<FilteredSpace>, t: Option<usize>) -> Result<Self> {
        let n = space.n_atoms();
        StoppingTime::new(space, vec![t; n])
    }

    pub fn infinite(space: Arc<FilteredSpace>) -> Self {
        let n = space.n_atoms();
        StoppingTime {
            space,
            values: vec![INFINITY; n],
        }
    }

    pub fn space(&self) -> &Arc<FilteredSpace> {
        &self.space
    }

    pub fn get(&self, atom: usize) -> Option<usize> {
        match self.values[atom] {
            INFINITY => None,
            t => Some(t as usize),
        }
    }

    /// τ ∧ 1 as a grid index.
    pub fn clamped(&self, atom: usize) -> usize {
        self.get(atom).unwrap_or(self.space.last())
    }

    pub fn values(&self) -> Vec<Option<usize>> {
        (0..self.values.len()).map(|a| self.get(a)).collect()
    }

    pub fn is_infinite_everywhere(&self) -> bool {
        self.values.iter().all(|&v| v == INFINITY)
    }

    pub fn min(&self, other: &StoppingTime) -> Result<StoppingTime> {
        if !Arc::ptr_eq(&self.space, &other.space) {
            return Err(Error::SpaceMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a.min(b))
            .collect();
        Ok(StoppingTime {
            space: self.space.clone(),
            values,
        })
    }

    /// P[τ < ∞].
    pub fn prob_finite(&self) -> f64 {
        self.space.probability_of(|a| self.values[a] != INFINITY)
    }

    /// The indicator of {τ ≥ t}, i.e. 1⟦0,τ⟧ at grid index t ≥ 1 (predictable).
    pub fn alive(&self, atom: usize, t: usize) -> bool {
        self.values[atom] == INFINITY || self.values[atom] as usize >= t
    }
}

/// True iff {τ ≤ t} is a union of time-t cells for every grid time t.
pub fn check_stopping_time(tau: &StoppingTime) -> bool {
    let space = &tau.space;
    (0..space.grid().len()).all(|t| {
        let mut seen: Vec<Option<bool>> = vec![None; space.cell_count(t)];
        space.cells(t).iter().enumerate().all(|(a, &c)| {
            let stopped = tau.values[a] != INFINITY && tau.values[a] as usize <= t;
            match seen[c as usize] {
                None => {
                    seen[c as usize] = Some(stopped);
                    true
                }
                Some(s) => s == stopped,
            }
        })
    })
}

/// S^τ: each path frozen at S_{τ(ω)} from τ(ω) on.
pub fn stop_process(s: &AdaptedProcess, tau: &StoppingTime) -> Result<AdaptedProcess> {
    if !Arc::ptr_eq(s.space(), tau.space()) {
        return Err(Error::SpaceMismatch);
    }
    if !check_stopping_time(tau) {
        return Err(Error::Precondition(
            "argument is not a stopping time".into(),
        ));
    }
    Ok(stop_unchecked(s, tau))
}

pub(crate) fn stop_unchecked(s: &AdaptedProcess, tau: &StoppingTime) -> AdaptedProcess {
    let space = s.space().clone();
    let n = space.n_atoms();
    let mut out = s.clone();
    for t in 0..space.grid().len() {
        let row = out.at_mut(t);
        for (a, v) in row.iter_mut().enumerate().take(n) {
            let stop = tau.clamped(a);
            if t > stop {
                *v = s.value(a, stop);
            }
        }
    }
    out
}

/// Builds the level-`level` binary tree and a process from an innovation-prefix map.
///
/// `innovation_map` is called with the first j innovations of every atom for j = 0…2^level,
/// so the resulting process is adapted by construction.
pub fn build_binary_tree(
    level: usize,
    max_level: usize,
    innovation_map: impl Fn(&[i8]) -> f64,
) -> Result<(Arc<FilteredSpace>, AdaptedProcess)> {
    let space = FilteredSpace::binary_tree(level, max_level)?;
    let steps = space.grid().steps();
    let n = space.n_atoms();
    let mut values = Vec::with_capacity(n * (steps + 1));
    for t in 0..=steps {
        // Atoms sharing a prefix are contiguous; evaluate once per cell.
        let block = n >> t;
        for cell in 0..(1usize << t) {
            let v = innovation_map(&space.innovations()[cell * block][..t]);
            values.extend(std::iter::repeat_n(v, block));
        }
    }
    let process = AdaptedProcess::from_raw(space.clone(), values);
    process.check()?;
    Ok((space, process))
}
