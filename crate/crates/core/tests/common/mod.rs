#![allow(dead_code)]

use gmcp_core::adaptation::{adapted_information_fraction, Adaptation};
use gmcp_core::cer::adapted_cumulative_p;
use gmcp_core::design::Design;
use gmcp_core::numerics::CorrelationMatrix;
use gmcp_core::stagewise::{CorrelationKnowledge, KnowledgeBlock, StageLabel, StageMarginals, TestKind};
use gmcp_core::{IndexSet, WeightingGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{ContinuousCDF, Normal};

pub const P1: [f64; 4] = [0.00045, 0.0952, 0.0225, 0.1104];

/// Two doses against placebo, primary endpoint (H1, H2) gating the
/// secondary one (H3, H4).
pub fn trial_graph() -> WeightingGraph {
    WeightingGraph::new(
        vec![0.5, 0.5, 0.0, 0.0],
        vec![
            vec![0.0, 0.5, 0.5, 0.0],
            vec![0.5, 0.0, 0.0, 0.5],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
        ],
    )
    .unwrap()
}

/// Dose comparisons sharing a control are correlated 0.5 within an endpoint.
pub fn trial_knowledge() -> CorrelationKnowledge {
    let c = CorrelationMatrix::equicorrelated(2, 0.5).unwrap();
    CorrelationKnowledge::new(
        4,
        vec![
            KnowledgeBlock {
                members: IndexSet::from_indices([0, 1]),
                corr: c.clone(),
            },
            KnowledgeBlock {
                members: IndexSet::from_indices([2, 3]),
                corr: c,
            },
        ],
    )
    .unwrap()
}

pub fn trial_design() -> Design {
    Design::new(trial_graph(), trial_knowledge(), 0.025, 0.5, Default::default()).unwrap()
}

pub fn stage_one() -> StageMarginals {
    StageMarginals::complete(StageLabel::First, &P1).unwrap()
}

/// Set from 1-based labels.
pub fn set(labels: &[usize]) -> IndexSet {
    IndexSet::from_indices(labels.iter().map(|l| l - 1))
}

// --- published worked example ---------------------------------------------

pub const TABLE2: [(&[usize], &[f64]); 15] = [
    (&[1, 2, 3, 4], &[0.5, 0.5, 0.0, 0.0]),
    (&[2, 3, 4], &[0.75, 0.25, 0.0]),
    (&[1, 3, 4], &[0.75, 0.0, 0.25]),
    (&[1, 2, 4], &[0.5, 0.5, 0.0]),
    (&[1, 2, 3], &[0.5, 0.5, 0.0]),
    (&[3, 4], &[0.5, 0.5]),
    (&[2, 4], &[1.0, 0.0]),
    (&[2, 3], &[0.75, 0.25]),
    (&[1, 4], &[0.75, 0.25]),
    (&[1, 3], &[1.0, 0.0]),
    (&[1, 2], &[0.5, 0.5]),
    (&[4], &[1.0]),
    (&[3], &[1.0]),
    (&[2], &[1.0]),
    (&[1], &[1.0]),
];

pub const TABLE3: [(&[usize], f64, TestKind); 15] = [
    (&[1, 2, 3, 4], 0.00088, TestKind::Parametric),
    (&[2, 3, 4], 0.0900, TestKind::Nonparametric),
    (&[1, 3, 4], 0.0006, TestKind::Nonparametric),
    (&[1, 2, 4], 0.00088, TestKind::Parametric),
    (&[1, 2, 3], 0.00088, TestKind::Parametric),
    (&[3, 4], 0.0410, TestKind::Parametric),
    (&[2, 4], 0.0952, TestKind::Single),
    (&[2, 3], 0.0900, TestKind::Nonparametric),
    (&[1, 4], 0.0006, TestKind::Nonparametric),
    (&[1, 3], 0.00045, TestKind::Single),
    (&[1, 2], 0.00088, TestKind::Parametric),
    (&[4], 0.1104, TestKind::Single),
    (&[3], 0.0225, TestKind::Single),
    (&[2], 0.0952, TestKind::Single),
    (&[1], 0.00045, TestKind::Single),
];

// (J, p_{J,(2)}, combined)
pub const TABLE5: [(&[usize], f64, f64); 7] = [
    (&[2, 3, 4], 0.0448, 0.0158),
    (&[3, 4], 0.0209, 0.0038),
    (&[2, 4], 0.1121, 0.0371),
    (&[2, 3], 0.0448, 0.0158),
    (&[4], 0.1153, 0.0433),
    (&[3], 0.0112, 0.0012),
    (&[2], 0.1121, 0.0371),
];

pub fn stage_two() -> StageMarginals {
    StageMarginals::observed(StageLabel::SecondIncremental, 4, set(&[2, 3, 4]), &[0.1121, 0.0112, 0.1153]).unwrap()
}

pub fn no_change(selected: IndexSet) -> Adaptation {
    Adaptation::new(selected, trial_graph(), vec![0.5; 4], trial_knowledge()).unwrap()
}

// (J, stage-one thresholds, stage-two thresholds, kind), thresholds in J order.
pub const TABLE7: [(&[usize], &[f64], &[f64], TestKind); 15] = [
    (&[1, 2, 3, 4], &[0.000782, 0.000782, 0.0, 0.0], &[0.0132, 0.0132, 0.0, 0.0], TestKind::Parametric),
    (&[2, 3, 4], &[0.00114, 0.000381, 0.0], &[0.0183, 0.00610, 0.0], TestKind::Nonparametric),
    (&[1, 3, 4], &[0.00114, 0.0, 0.000381], &[0.0183, 0.0, 0.00610], TestKind::Nonparametric),
    (&[1, 2, 4], &[0.000782, 0.000782, 0.0], &[0.0132, 0.0132, 0.0], TestKind::Parametric),
    (&[1, 2, 3], &[0.000782, 0.000782, 0.0], &[0.0132, 0.0132, 0.0], TestKind::Parametric),
    (&[3, 4], &[0.000782, 0.000782], &[0.0132, 0.0132], TestKind::Parametric),
    (&[2, 4], &[0.001525, 0.0], &[0.0245, 0.0], TestKind::Single),
    (&[2, 3], &[0.00114, 0.000381], &[0.0183, 0.00610], TestKind::Nonparametric),
    (&[1, 4], &[0.00114, 0.000381], &[0.0183, 0.00610], TestKind::Nonparametric),
    (&[1, 3], &[0.001525, 0.0], &[0.0245, 0.0], TestKind::Single),
    (&[1, 2], &[0.000782, 0.000782], &[0.0132, 0.0132], TestKind::Parametric),
    (&[4], &[0.001525], &[0.0245], TestKind::Single),
    (&[3], &[0.001525], &[0.0245], TestKind::Single),
    (&[2], &[0.001525], &[0.0245], TestKind::Single),
    (&[1], &[0.001525], &[0.0245], TestKind::Single),
];

pub const TABLE8: [(&[usize], f64); 7] = [
    (&[2, 3, 4], 0.1117),
    (&[3, 4], 0.1420),
    (&[2, 4], 0.0702),
    (&[2, 3], 0.1117),
    (&[4], 0.0594),
    (&[3], 0.2179),
    (&[2], 0.0702),
];

/// Low dose only, both endpoints weighted equally and passing to each other.
pub fn adaptation(t: f64) -> Adaptation {
    let g = WeightingGraph::new(
        vec![0.0, 0.5, 0.0, 0.5],
        vec![
            vec![0.0; 4],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0; 4],
            vec![0.0, 1.0, 0.0, 0.0],
        ],
    )
    .unwrap();
    Adaptation::new(set(&[2, 4]), g, vec![0.5, t, 0.5, t], trial_knowledge()).unwrap()
}

pub fn adapted_t() -> f64 {
    adapted_information_fraction((35.0, 35.0), (52.0, 53.0)).unwrap()
}

pub fn cumulative() -> StageMarginals {
    let t = adapted_t();
    let p = [adapted_cumulative_p(P1[1], 0.0299, t), adapted_cumulative_p(P1[3], 0.0586, t)];
    StageMarginals::observed(StageLabel::SecondCumulative, 4, set(&[2, 4]), &p).unwrap()
}

/// Conditional rejection probability of the adapted test by simulation of
/// the stage-two increments. Each adapted test here has members in distinct
/// correlation blocks, so the sum of per-member rates is estimated with
/// stratified one-dimensional draws.
pub fn simulated_conditional_error(p1: &[f64; 4], weights: &[(usize, f64)], c: f64, t: f64, draws: usize, seed: u64) -> f64 {
    let n = Normal::standard();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for &(j, w) in weights {
        let z1 = n.inverse_cdf(1.0 - p1[j]);
        let mut hits = 0usize;
        for i in 0..draws {
            let u = (i as f64 + rng.random::<f64>()) / draws as f64;
            let z2 = n.inverse_cdf(u);
            let zc = t.sqrt() * z1 + (1.0 - t).sqrt() * z2;
            if 1.0 - n.cdf(zc) <= w * c {
                hits += 1;
            }
        }
        total += hits as f64 / draws as f64;
    }
    total
}

/// Four doses, primary endpoint passing to the matching secondary endpoint
/// and to the other primaries; secondaries pass back to the other primaries.
pub fn simulation_graph() -> WeightingGraph {
    let (a, b, c) = (1.0 / 12.0, 0.75, 1.0 / 3.0);
    WeightingGraph::new(
        vec![0.25, 0.25, 0.25, 0.25, 0.0, 0.0, 0.0, 0.0],
        vec![
            vec![0.0, a, a, a, b, 0.0, 0.0, 0.0],
            vec![a, 0.0, a, a, 0.0, b, 0.0, 0.0],
            vec![a, a, 0.0, a, 0.0, 0.0, b, 0.0],
            vec![a, a, a, 0.0, 0.0, 0.0, 0.0, b],
            vec![0.0, c, c, c, 0.0, 0.0, 0.0, 0.0],
            vec![c, 0.0, c, c, 0.0, 0.0, 0.0, 0.0],
            vec![c, c, 0.0, c, 0.0, 0.0, 0.0, 0.0],
            vec![c, c, c, 0.0, 0.0, 0.0, 0.0, 0.0],
        ],
    )
    .unwrap()
}
