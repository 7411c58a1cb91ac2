//! Interim design changes: hypothesis selection, a revised weighting graph,
//! adapted information fractions and stage-two correlations.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{ClosureWeights, IndexSet, WeightingGraph};
use crate::stagewise::CorrelationKnowledge;

const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Split of the not-yet-rejected intersection sets after selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JPlusClass {
    /// `J ⊆ I_2`.
    A,
    /// `J ⊆ I_1* \ I_2`: no selected member, never rejected at stage two.
    B,
    /// Everything else; tested through `J ∩ I_2`.
    C,
}

/// Classifies a set of `J^+` given the remaining and selected hypotheses.
pub fn classify(set: IndexSet, remaining: IndexSet, selected: IndexSet) -> JPlusClass {
    if set.is_subset(selected) {
        JPlusClass::A
    } else if set.is_subset(remaining.difference(selected)) {
        JPlusClass::B
    } else {
        JPlusClass::C
    }
}

/// `(J_A, J_B, J_C)` for the sets of `J^+`.
///
/// `remaining` is `I_1*`; `selected` (`I_2`) must be a subset of it.
pub fn partition_jplus(
    jplus: &[IndexSet],
    remaining: IndexSet,
    selected: IndexSet,
) -> Result<(Vec<IndexSet>, Vec<IndexSet>, Vec<IndexSet>)> {
    if !selected.is_subset(remaining) {
        return Err(Error::InvalidSubset(format!(
            "selected hypotheses {selected} are not all in the remaining set {remaining}"
        )));
    }
    let (mut a, mut b, mut c) = (Vec::new(), Vec::new(), Vec::new());
    for &set in jplus {
        match classify(set, remaining, selected) {
            JPlusClass::A => a.push(set),
            JPlusClass::B => b.push(set),
            JPlusClass::C => c.push(set),
        }
    }
    Ok((a, b, c))
}

/// Design changes decided at the interim analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct Adaptation {
    /// `I_2`.
    pub selected: IndexSet,
    /// Revised graph; only its closure over subsets of `I_2` is used.
    pub graph: WeightingGraph,
    /// Adapted information fraction `t̃_j` per hypothesis.
    pub info_fractions: Vec<f64>,
    /// Correlations of the stage-two increments under the adapted allocation.
    pub increments: CorrelationKnowledge,
    closure: Arc<ClosureWeights>,
}

impl Adaptation {
    pub fn new(
        selected: IndexSet,
        graph: WeightingGraph,
        info_fractions: Vec<f64>,
        increments: CorrelationKnowledge,
    ) -> Result<Self> {
        let closure = Arc::new(graph.closure_weights()?);
        Self::with_closure(selected, graph, closure, info_fractions, increments)
    }

    /// As [`Adaptation::new`], reusing an already computed closure of `graph`.
    pub fn with_closure(
        selected: IndexSet,
        graph: WeightingGraph,
        closure: Arc<ClosureWeights>,
        info_fractions: Vec<f64>,
        increments: CorrelationKnowledge,
    ) -> Result<Self> {
        let k = graph.k();
        if info_fractions.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: info_fractions.len(),
            });
        }
        if increments.k() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: increments.k(),
            });
        }
        if !selected.is_subset(IndexSet::full(k)) {
            return Err(Error::InvalidSubset(format!("{selected} exceeds {k} hypotheses")));
        }
        for j in selected {
            let t = info_fractions[j];
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::OutOfRange {
                    name: "adapted information fraction",
                    range: "(0, 1)",
                    value: t,
                });
            }
        }
        if closure.k() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: closure.k(),
            });
        }
        for set in selected.subsets() {
            let sum: f64 = set.iter().map(|j| closure.weight(set, j)).sum();
            if sum > 1.0 + WEIGHT_SUM_TOL {
                return Err(Error::InvalidGraph(format!(
                    "revised weights of {set} sum to {sum} > 1"
                )));
            }
        }
        Ok(Adaptation {
            selected,
            graph,
            info_fractions,
            increments,
            closure,
        })
    }

    /// Keeps every remaining hypothesis, the planned graph, information
    /// fraction and correlations.
    pub fn identity(
        remaining: IndexSet,
        graph: &WeightingGraph,
        t: f64,
        knowledge: &CorrelationKnowledge,
    ) -> Result<Self> {
        Adaptation::new(remaining, graph.clone(), vec![t; graph.k()], knowledge.clone())
    }

    pub fn k(&self) -> usize {
        self.graph.k()
    }

    /// Stage-two weights for the selected part `J ∩ I_2` of a set, scaled to
    /// sum to one. Returns `None` when no selected member carries weight.
    pub fn stage_two_weights(&self, set: IndexSet) -> Option<Vec<f64>> {
        let part = set.intersection(self.selected);
        if part.is_empty() {
            return None;
        }
        let w = self.closure.get(part);
        let sum: f64 = part.iter().map(|j| w[j]).sum();
        if sum <= 0.0 {
            return None;
        }
        let mut out = vec![0.0; self.k()];
        for j in part {
            out[j] = w[j] / sum;
        }
        Some(out)
    }

    /// Weights of the adapted conditional-error test of `set`. A set inside
    /// `I_2` keeps its revised closure weights; a set split by the selection
    /// has the weights of `J ∩ I_2` scaled to sum to one. Only the scale of
    /// the adapted boundary depends on this choice, not the thresholds, and
    /// keeping whole sets unscaled makes an unchanged design reproduce its
    /// planned boundary.
    pub fn conditional_weights(&self, set: IndexSet) -> Option<Vec<f64>> {
        if !set.is_subset(self.selected) {
            return self.stage_two_weights(set);
        }
        let w = self.closure.get(set);
        if set.iter().all(|j| w[j] <= 0.0) {
            return None;
        }
        let mut out = vec![0.0; self.k()];
        for j in set {
            out[j] = w[j];
        }
        Some(out)
    }

    /// Checks that the adaptation only selects hypotheses still open after
    /// stage one.
    pub fn check_against(&self, remaining: IndexSet) -> Result<()> {
        if self.selected.is_subset(remaining) {
            Ok(())
        } else {
            Err(Error::InvalidSubset(format!(
                "selected hypotheses {} include early-rejected or unknown hypotheses {}",
                self.selected,
                self.selected.difference(remaining)
            )))
        }
    }
}

/// `t̃ = I_1 / (I_1 + I_2)` with `I_s = (1/n_treat + 1/n_control)⁻¹`.
pub fn adapted_information_fraction(stage1: (f64, f64), stage2: (f64, f64)) -> Result<f64> {
    let info = |(a, b): (f64, f64)| -> Result<f64> {
        if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() {
            Ok(1.0 / (1.0 / a + 1.0 / b))
        } else {
            Err(Error::InvalidArgument(format!("group sizes must be positive, got ({a}, {b})")))
        }
    };
    let i1 = info(stage1)?;
    let i2 = info(stage2)?;
    Ok(i1 / (i1 + i2))
}
