use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{ClosureWeights, IndexSet, WeightingGraph};
use crate::spending::SpendingFunction;
use crate::stagewise::{CorrelationKnowledge, LocalTest};

/// Graph, correlation knowledge and error spending shared by both methods.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub graph: WeightingGraph,
    pub knowledge: CorrelationKnowledge,
    pub alpha: f64,
    /// Planned information fraction at the interim look.
    pub t: f64,
    pub spending: SpendingFunction,
    closure: Arc<ClosureWeights>,
    tests: Arc<Vec<LocalTest>>,
}

impl Design {
    pub fn new(
        graph: WeightingGraph,
        knowledge: CorrelationKnowledge,
        alpha: f64,
        t: f64,
        spending: SpendingFunction,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::OutOfRange {
                name: "alpha",
                range: "(0, 1)",
                value: alpha,
            });
        }
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::OutOfRange {
                name: "information fraction",
                range: "(0, 1)",
                value: t,
            });
        }
        if knowledge.k() != graph.k() {
            return Err(Error::DimensionMismatch {
                expected: graph.k(),
                found: knowledge.k(),
            });
        }
        let closure = graph.closure_weights()?;
        let k = graph.k();
        let mut tests = Vec::with_capacity(1 << k);
        // Slot 0 (the empty set) is never used.
        tests.push(LocalTest::new(IndexSet::EMPTY, &vec![0.0; k], &knowledge));
        for set in IndexSet::full(k).subsets() {
            tests.push(LocalTest::new(set, closure.get(set), &knowledge));
        }
        Ok(Design {
            graph,
            knowledge,
            alpha,
            t,
            spending,
            closure: Arc::new(closure),
            tests: Arc::new(tests),
        })
    }

    pub fn k(&self) -> usize {
        self.graph.k()
    }

    pub fn all(&self) -> IndexSet {
        IndexSet::full(self.k())
    }

    pub fn closure(&self) -> &ClosureWeights {
        &self.closure
    }

    pub fn shared_closure(&self) -> Arc<ClosureWeights> {
        Arc::clone(&self.closure)
    }

    /// Stage-one local test of `H_J`.
    pub fn local_test(&self, set: IndexSet) -> &LocalTest {
        &self.tests[set.bits() as usize]
    }

    pub fn alpha1(&self) -> Result<f64> {
        self.spending.spend(self.t, self.alpha)
    }
}
