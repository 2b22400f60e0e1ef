//! Deterministic step-function integrals and the summation-by-parts bound.

use crate::error::{Error, Result};

/// Left-continuous f = Σ_k v_k 1_(s_{k−1}, s_k] on [0, 1], zero elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct StepFunction {
    breaks: Vec<f64>,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn new(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breaks.is_empty() || values.len() + 1 != breaks.len() {
            return Err(Error::param("f", "need breaks s_0..s_N and N values"));
        }
        if breaks.iter().chain(&values).any(|x| !x.is_finite()) {
            return Err(Error::param("f", "non-finite break or value"));
        }
        if breaks[0] < 0.0
            || breaks[breaks.len() - 1] > 1.0
            || breaks.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::param("f", "breaks must be non-decreasing in [0, 1]"));
        }
        Ok(StepFunction { breaks, values })
    }

    pub fn constant(c: f64) -> Self {
        StepFunction {
            breaks: vec![0.0, 1.0],
            values: vec![c],
        }
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, t: f64) -> f64 {
        let s = &self.breaks;
        if t <= s[0] || t > s[s.len() - 1] {
            return 0.0;
        }
        // first k with t ≤ s_k; k ≥ 1 here
        let k = s.partition_point(|&x| x < t);
        self.values[k - 1]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Variation of t ↦ f(t) over (0, 1].
    pub fn total_variation(&self) -> f64 {
        let s = &self.breaks;
        let mut pieces = Vec::with_capacity(self.values.len() + 2);
        if s[0] > 0.0 {
            pieces.push(0.0);
        }
        for (k, &v) in self.values.iter().enumerate() {
            if s[k + 1] > s[k] {
                pieces.push(v);
            }
        }
        if s[s.len() - 1] < 1.0 {
            pieces.push(0.0);
        }
        pieces.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }
}

/// g sampled at increasing times starting at 0, right-continuous steps in between.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::param(
                "g",
                "times and values must be non-empty and equal length",
            ));
        }
        if times[0] != 0.0 || times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("g", "times must start at 0 and increase"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("g", "non-finite value"));
        }
        Ok(GridFunction { times, values })
    }

    /// Samples on the uniform grid k/(len − 1).
    pub fn uniform(values: Vec<f64>) -> Result<Self> {
        let m = values.len().saturating_sub(1).max(1) as f64;
        let times = (0..values.len()).map(|k| k as f64 / m).collect();
        GridFunction::new(times, values)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x <= t);
        self.values[k.saturating_sub(1)]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// (f·g)_t = Σ_{k ≤ n(t)} f(s_k)(g(s_k) − g(s_{k−1})) + f(s_{n(t)+1})(g(t) − g(s_{n(t)})),
/// with n(t) the last k such that s_k < t.
pub fn step_integral(f: &StepFunction, g: &GridFunction, t: f64) -> f64 {
    let s = &f.breaks;
    if t <= s[0] {
        return 0.0;
    }
    let n_t = s.partition_point(|&x| x < t) - 1;
    let mut acc = 0.0;
    for k in 1..=n_t {
        acc += f.values[k - 1] * (g.eval(s[k]) - g.eval(s[k - 1]));
    }
    if let Some(&v) = f.values.get(n_t) {
        acc += v * (g.eval(t) - g.eval(s[n_t]));
    }
    acc
}

/// Returns (Σ|Δ(f·g)|, 2·TV(f)·‖g‖_∞ + ‖f‖_∞·Σ|Δg|) over the partition.
pub fn sum_by_parts_bound(
    f: &StepFunction,
    g: &GridFunction,
    partition: &[f64],
) -> Result<(f64, f64)> {
    if partition.is_empty() || partition.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::param(
            "partition",
            "must be non-empty and non-decreasing",
        ));
    }
    if partition.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::param("partition", "points must lie in [0, 1]"));
    }
    let fg: Vec<f64> = partition.iter().map(|&t| step_integral(f, g, t)).collect();
    let lhs = fg.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    let dg: f64 = partition
        .windows(2)
        .map(|w| (g.eval(w[1]) - g.eval(w[0])).abs())
        .sum();
    let rhs = 2.0 * f.total_variation() * g.sup_norm() + f.sup_norm() * dg;
    Ok((lhs, rhs))
}
