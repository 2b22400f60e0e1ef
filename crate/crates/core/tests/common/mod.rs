#![allow(dead_code)]

use std::sync::Arc;

use semimart_core::generators::{generate, Generated, GeneratorSpec, ProcessKind};
use semimart_core::space::{AdaptedProcess, FilteredSpace};

pub fn exact(kind: ProcessKind, level: usize) -> AdaptedProcess {
    match generate(&GeneratorSpec::exact(kind, level)).unwrap() {
        Generated::Exact { process, .. } => process,
        Generated::Ensemble(_) => unreachable!(),
    }
}

pub fn all_kinds() -> Vec<ProcessKind> {
    vec![
        ProcessKind::RademacherBm,
        ProcessKind::Drifted { mu: 0.5 },
        ProcessKind::RlFractional { hurst: 0.75 },
        ProcessKind::Jump { size: 1.5 },
        ProcessKind::DeterministicDrift,
    ]
}

/// Full tree at `level`; `values[t][c]` is the value on the t-prefix cell c.
pub fn tree_process(level: usize, values: &[Vec<f64>]) -> AdaptedProcess {
    let space = FilteredSpace::binary_tree(level, 4).unwrap();
    let steps = 1usize << level;
    AdaptedProcess::from_fn(space, |a, t| values[t][a >> (steps - t)]).unwrap()
}

/// Cell-wise values for every t from a flat list, cycling through it.
pub fn cell_table(level: usize, flat: &[f64]) -> Vec<Vec<f64>> {
    let steps = 1usize << level;
    let mut k = 0;
    (0..=steps)
        .map(|t| {
            (0..(1usize << t))
                .map(|_| {
                    k += 1;
                    flat[(k - 1) % flat.len()]
                })
                .collect()
        })
        .collect()
}

pub fn space_of(s: &AdaptedProcess) -> Arc<FilteredSpace> {
    s.space().clone()
}
