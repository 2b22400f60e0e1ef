//! Splitting off the big jumps of a path.

use crate::error::Result;
use crate::integrand::{integral_process, SimpleIntegrand};
use crate::space::AdaptedProcess;

/// (X, J) with J_t = Σ_{s ≤ t} ΔS_s 1{|ΔS_s| ≥ 1} over finest-grid steps and X = S − J.
pub fn big_jump_split(s: &AdaptedProcess) -> (AdaptedProcess, AdaptedProcess) {
    let space = s.space().clone();
    let n = space.n_atoms();
    let mut j = AdaptedProcess::zeros(space.clone());
    for t in 1..=space.last() {
        for a in 0..n {
            let d = s.value(a, t) - s.value(a, t - 1);
            let prev = j.value(a, t - 1);
            j.at_mut(t)[a] = if d.abs() >= 1.0 { prev + d } else { prev };
        }
    }
    let x = s.sub(&j).expect("same space");
    (x, j)
}

/// Per-atom Σ_t |ΔJ_t|.
pub fn jump_variation(j: &AdaptedProcess) -> Vec<f64> {
    j.grid_variation(j.space().level())
}

/// Per-atom (sup_t (H·S)_t⁻, sup_t (H·X)_t⁻ + (|H|·TV(J))_1).
pub fn jump_risk_bound(
    h: &SimpleIntegrand,
    s: &AdaptedProcess,
    x: &AdaptedProcess,
    j: &AdaptedProcess,
) -> Result<Vec<(f64, f64)>> {
    let hs = integral_process(h, s)?;
    let hx = integral_process(h, x)?;
    let fine = h.fine_weights();
    let space = s.space();
    Ok((0..space.n_atoms())
        .map(|a| {
            let worst = |p: &AdaptedProcess| {
                (0..=space.last())
                    .map(|t| -p.value(a, t))
                    .fold(0.0, f64::max)
            };
            let jump_cost: f64 = fine
                .iter()
                .enumerate()
                .map(|(k, w)| w[a].abs() * (j.value(a, k + 1) - j.value(a, k)).abs())
                .sum();
            (worst(&hs), worst(&hx) + jump_cost)
        })
        .collect())
}
