//! Constructive Komlós-type extraction in L² of a finite probability space.
//!
//! With finitely many atoms, L² is a finite-dimensional inner-product space
//! and the tail hulls of a bounded sequence are polytopes. The limit is taken
//! as the minimal-norm point of the last full window conv{f_{K−W+1}, …, f_K};
//! for every earlier full window the point of its hull nearest to that limit
//! gives the convex weights. Windows whose hull point lies within `tol` of the
//! limit form the emitted suffix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KomlosConfig {
    /// Window length W (the number of tail elements per hull).
    pub window: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for KomlosConfig {
    fn default() -> Self {
        KomlosConfig {
            window: 16,
            tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

/// g_n = Σ_{i ≥ start} λᵢ fᵢ; indices are 0-based positions in the sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightStep {
    pub n: usize,
    pub start: usize,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvexWeights {
    pub steps: Vec<WeightStep>,
}

impl ConvexWeights {
    /// gₙ = fₙ for every n < len.
    pub fn identity(len: usize) -> Self {
        ConvexWeights {
            steps: (0..len)
                .map(|n| WeightStep {
                    n,
                    start: n,
                    weights: vec![1.0],
                })
                .collect(),
        }
    }

    /// Simplex and tail-support invariants against a sequence of length `len`.
    pub fn check(&self, len: usize) -> Result<()> {
        for step in &self.steps {
            if step.start < step.n || step.start + step.weights.len() > len {
                return Err(Error::Invariant(format!(
                    "weights for n = {} leave the tail",
                    step.n
                )));
            }
            if step.weights.iter().any(|&w| !(w >= 0.0)) {
                return Err(Error::Invariant(format!(
                    "negative weight for n = {}",
                    step.n
                )));
            }
            let sum: f64 = step.weights.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::Invariant(format!(
                    "weights for n = {} sum to {sum}",
                    step.n
                )));
            }
        }
        Ok(())
    }

    pub fn apply_step(step: &WeightStep, seq: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; seq[step.start].len()];
        for (i, &w) in step.weights.iter().enumerate() {
            if w != 0.0 {
                for (o, x) in out.iter_mut().zip(&seq[step.start + i]) {
                    *o += w * x;
                }
            }
        }
        out
    }

    /// (gₙ) for every emitted n.
    pub fn apply(&self, seq: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.steps
            .iter()
            .map(|s| ConvexWeights::apply_step(s, seq))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KomlosResult {
    pub weights: ConvexWeights,
    pub limit: Vec<f64>,
    /// ‖gₙ − limit‖₂ for every full window n (emitted or not).
    pub distances: Vec<f64>,
    /// Whether `distances` is non-increasing.
    pub monotone: bool,
    pub log: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KomlosMultiResult {
    pub weights: ConvexWeights,
    pub limits: Vec<Vec<f64>>,
    pub distances: Vec<f64>,
    pub monotone: bool,
    pub log: Vec<String>,
}

fn inner(x: &[f64], y: &[f64], measure: &[f64], reps: usize) -> f64 {
    let d = measure.len();
    let mut acc = 0.0;
    for r in 0..reps {
        let (xs, ys) = (&x[r * d..(r + 1) * d], &y[r * d..(r + 1) * d]);
        for i in 0..d {
            acc += measure[i] * xs[i] * ys[i];
        }
    }
    acc
}

/// Solves `a·x = b` by Gaussian elimination with partial pivoting; None if singular.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-14 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Wolfe's minimum-norm-point algorithm on a Gram matrix; returns simplex weights.
fn min_norm_weights(gram: &[Vec<f64>], max_iter: usize) -> Result<Vec<f64>> {
    let m = gram.len();
    let diag_max = (0..m).fold(0.0f64, |a, i| a.max(gram[i][i]));
    let eps = 1e-12 * diag_max.max(f64::MIN_POSITIVE);
    let start = (0..m)
        .min_by(|&i, &j| gram[i][i].total_cmp(&gram[j][j]))
        .ok_or_else(|| Error::param("sequence", "empty window"))?;
    let mut corral = vec![start];
    let mut lambda = vec![1.0];
    let gx = |corral: &[usize], lambda: &[f64], j: usize| -> f64 {
        corral
            .iter()
            .zip(lambda)
            .map(|(&i, &l)| l * gram[i][j])
            .sum()
    };

    for _ in 0..max_iter {
        let xx: f64 = corral
            .iter()
            .zip(&lambda)
            .map(|(&i, &l)| l * gx(&corral, &lambda, i))
            .sum();
        let (j, gj) = (0..m)
            .map(|j| (j, gx(&corral, &lambda, j)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty");
        if xx - gj <= eps || corral.contains(&j) {
            let mut w = vec![0.0; m];
            for (&i, &l) in corral.iter().zip(&lambda) {
                w[i] = l;
            }
            return Ok(w);
        }
        corral.push(j);
        lambda.push(0.0);

        // Minor cycle: move towards the affine minimizer of the corral.
        loop {
            let k = corral.len();
            let mut a = vec![vec![0.0; k + 1]; k + 1];
            for (r, &i) in corral.iter().enumerate() {
                for (c, &l) in corral.iter().enumerate() {
                    a[r][c] = gram[i][l];
                }
                a[r][k] = 1.0;
                a[k][r] = 1.0;
            }
            let mut b = vec![0.0; k + 1];
            b[k] = 1.0;
            let Some(sol) = solve(a, b) else {
                return Err(Error::Convergence(format!(
                    "degenerate corral of {k} points in the hull solver"
                )));
            };
            let mu = &sol[..k];
            if mu.iter().all(|&v| v > 1e-15) {
                lambda = mu.to_vec();
                break;
            }
            let theta = (0..k)
                .filter(|&i| mu[i] <= 1e-15)
                .map(|i| lambda[i] / (lambda[i] - mu[i]))
                .fold(f64::INFINITY, f64::min)
                .clamp(0.0, 1.0);
            for i in 0..k {
                lambda[i] += theta * (mu[i] - lambda[i]);
            }
            let mut idx = 0;
            let mut dropped = false;
            corral.retain(|_| {
                let keep = lambda[idx] > 1e-15;
                idx += 1;
                dropped |= !keep;
                keep
            });
            lambda.retain(|&l| l > 1e-15);
            if !dropped {
                // Guard against a stalled step: drop the smallest weight.
                let (pos, _) = lambda
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .expect("non-empty corral");
                corral.remove(pos);
                lambda.remove(pos);
            }
            let total: f64 = lambda.iter().sum();
            lambda.iter_mut().for_each(|l| *l /= total);
        }
    }
    Err(Error::Convergence(format!(
        "hull solver exceeded {max_iter} iterations"
    )))
}

/// Nearest point of conv(points) to `y`. Returns (weights, point, distance).
fn project(
    points: &[&[f64]],
    y: &[f64],
    measure: &[f64],
    reps: usize,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let shifted: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(y).map(|(a, b)| a - b).collect())
        .collect();
    let m = points.len();
    let mut gram = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i..m {
            let v = inner(&shifted[i], &shifted[j], measure, reps);
            gram[i][j] = v;
            gram[j][i] = v;
        }
    }
    // Ties go to the latest element of the window.
    let nearest = (0..m)
        .rev()
        .min_by(|&i, &j| gram[i][i].total_cmp(&gram[j][j]))
        .expect("non-empty window");
    let weights = if gram[nearest][nearest].max(0.0).sqrt() <= tol {
        let mut w = vec![0.0; m];
        w[nearest] = 1.0;
        w
    } else {
        min_norm_weights(&gram, max_iter)?
    };
    let mut point = vec![0.0; y.len()];
    for (p, &w) in points.iter().zip(&weights) {
        if w != 0.0 {
            for (o, x) in point.iter_mut().zip(p.iter()) {
                *o += w * x;
            }
        }
    }
    let diff: Vec<f64> = point.iter().zip(y).map(|(a, b)| a - b).collect();
    let dist = inner(&diff, &diff, measure, reps).max(0.0).sqrt();
    Ok((weights, point, dist))
}

fn validate(seq: &[Vec<f64>], measure: &[f64], reps: usize, config: &KomlosConfig) -> Result<()> {
    if seq.len() < 3 {
        return Err(Error::param(
            "sequence",
            "need a prefix of at least 3 elements",
        ));
    }
    if config.window == 0 || !(config.tol > 0.0) {
        return Err(Error::param("komlos", "window must be ≥ 1 and tol > 0"));
    }
    let dim = measure.len() * reps;
    if seq.iter().any(|f| f.len() != dim) {
        return Err(Error::SpaceMismatch);
    }
    if seq.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::param(
            "sequence",
            "not bounded in L² (non-finite value)",
        ));
    }
    Ok(())
}

fn extract_core(
    seq: &[Vec<f64>],
    measure: &[f64],
    reps: usize,
    config: &KomlosConfig,
) -> Result<(ConvexWeights, Vec<f64>, Vec<f64>, Vec<String>)> {
    validate(seq, measure, reps, config)?;
    let k = seq.len();
    let w = config.window.min(k);
    let windows = k - w + 1;
    let mut log = vec![format!(
        "prefix K = {k}, window W = {w}, {windows} full windows"
    )];

    let tail: Vec<&[f64]> = seq[k - w..].iter().map(|f| f.as_slice()).collect();
    let zero = vec![0.0; seq[0].len()];
    let (_, limit, _) = project(&tail, &zero, measure, reps, 0.0, config.max_iter)
        .or_else(|_| project(&tail, &zero, measure, reps, config.tol, config.max_iter))?;

    let mut distances = Vec::with_capacity(windows);
    let mut candidates = Vec::with_capacity(windows);
    for n in 0..windows {
        let hull: Vec<&[f64]> = seq[n..n + w].iter().map(|f| f.as_slice()).collect();
        let (weights, _, dist) =
            project(&hull, &limit, measure, reps, config.tol, config.max_iter)?;
        distances.push(dist);
        candidates.push(WeightStep {
            n,
            start: n,
            weights,
        });
    }
    let first = (0..windows)
        .rev()
        .take_while(|&n| distances[n] <= config.tol)
        .last()
        .unwrap_or(windows);
    if first == windows {
        return Err(Error::Convergence(format!(
            "no window reaches tol {}; last distance {}",
            config.tol,
            distances[windows - 1]
        )));
    }
    log.push(format!("emitted n = {first}..{}", windows - 1));
    let weights = ConvexWeights {
        steps: candidates.split_off(first),
    };
    weights.check(k)?;
    Ok((weights, limit, distances, log))
}

fn is_monotone(d: &[f64], tol: f64) -> bool {
    d.windows(2).all(|w| w[1] <= w[0] + tol * 1e-3)
}

/// Convex weights on tails of `seq` with ‖gₙ − limit‖₂ ≤ tol on every emitted n.
///
/// `measure` holds the atom probabilities defining the L² norm.
pub fn extract_convex(
    seq: &[Vec<f64>],
    measure: &[f64],
    config: &KomlosConfig,
) -> Result<KomlosResult> {
    let (weights, limit, distances, log) = extract_core(seq, measure, 1, config)?;
    let monotone = is_monotone(&distances, config.tol);
    Ok(KomlosResult {
        weights,
        limit,
        distances,
        monotone,
        log,
    })
}

/// One weight schedule for several sequences at once, by stacking coordinates.
pub fn extract_convex_multi(
    seqs: &[Vec<Vec<f64>>],
    measure: &[f64],
    config: &KomlosConfig,
) -> Result<KomlosMultiResult> {
    let m = seqs.len();
    if m == 0 {
        return Err(Error::param("sequences", "empty family"));
    }
    let k = seqs[0].len();
    if seqs.iter().any(|s| s.len() != k) {
        return Err(Error::param(
            "sequences",
            "sequences must share a prefix length",
        ));
    }
    if seqs.iter().flatten().any(|f| f.len() != measure.len()) {
        return Err(Error::SpaceMismatch);
    }
    let stacked: Vec<Vec<f64>> = (0..k)
        .map(|n| seqs.iter().flat_map(|s| s[n].iter().copied()).collect())
        .collect();
    let (weights, limit, distances, log) = extract_core(&stacked, measure, m, config)?;
    let d = measure.len();
    let limits = (0..m).map(|i| limit[i * d..(i + 1) * d].to_vec()).collect();
    let monotone = is_monotone(&distances, config.tol);
    Ok(KomlosMultiResult {
        weights,
        limits,
        distances,
        monotone,
        log,
    })
}

/// L² distance under `measure`.
pub fn l2_distance(x: &[f64], y: &[f64], measure: &[f64]) -> f64 {
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    inner(&diff, &diff, measure, 1).max(0.0).sqrt()
}
