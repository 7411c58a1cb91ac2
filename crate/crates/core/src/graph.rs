//! Graph-based weighting strategies.
//!
//! A [`WeightingGraph`] assigns nodal weights to `k` elementary hypotheses and
//! carries a transition matrix describing how the weight of a removed node is
//! propagated to the remaining ones. Removing every node outside an index set
//! `J` leaves the weights of the intersection hypothesis `H_J`; doing this for
//! every non-empty `J` yields the full [`ClosureWeights`] of the closed test.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest number of hypotheses for which a closure can be enumerated.
pub const MAX_HYPOTHESES: usize = 16;

/// Tolerance used when checking the weight and row-sum constraints.
pub const GRAPH_TOLERANCE: f64 = 1e-12;

/// A subset of hypothesis indices, stored as a bitmask.
///
/// Indices are zero-based internally; `Display` and serde use the one-based
/// labels `H_1, ..., H_k`.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexSet(u32);

impl IndexSet {
    pub const EMPTY: IndexSet = IndexSet(0);

    pub fn from_bits(bits: u32) -> Self {
        IndexSet(bits)
    }

    /// `{0, ..., k-1}`.
    pub fn full(k: usize) -> Self {
        debug_assert!(k <= 32);
        if k >= 32 {
            IndexSet(u32::MAX)
        } else {
            IndexSet((1u32 << k) - 1)
        }
    }

    pub fn singleton(i: usize) -> Self {
        IndexSet(1 << i)
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        IndexSet(indices.into_iter().fold(0, |acc, i| acc | (1 << i)))
    }

    /// Builds a set from one-based labels, rejecting zero and labels above `k`.
    pub fn from_labels(labels: &[usize], k: usize) -> Result<Self> {
        let mut bits = 0u32;
        for &label in labels {
            if label == 0 || label > k {
                return Err(Error::IndexOutOfRange { index: label, k });
            }
            bits |= 1 << (label - 1);
        }
        Ok(IndexSet(bits))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, i: usize) -> bool {
        i < 32 && self.0 & (1 << i) != 0
    }

    pub fn insert(&mut self, i: usize) {
        self.0 |= 1 << i;
    }

    pub fn remove(&mut self, i: usize) {
        self.0 &= !(1 << i);
    }

    pub fn union(self, other: IndexSet) -> IndexSet {
        IndexSet(self.0 | other.0)
    }

    pub fn intersection(self, other: IndexSet) -> IndexSet {
        IndexSet(self.0 & other.0)
    }

    pub fn difference(self, other: IndexSet) -> IndexSet {
        IndexSet(self.0 & !other.0)
    }

    pub fn is_subset(self, other: IndexSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn min(self) -> Option<usize> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as usize)
    }

    /// Ascending iteration over the members.
    pub fn iter(self) -> IndexSetIter {
        IndexSetIter(self.0)
    }

    /// One-based labels in ascending order.
    pub fn labels(self) -> Vec<usize> {
        self.iter().map(|i| i + 1).collect()
    }

    /// All non-empty subsets of `self`, in increasing bitmask order.
    pub fn subsets(self) -> impl Iterator<Item = IndexSet> {
        let mask = self.0;
        let mut sub = 0u32;
        let mut done = mask == 0;
        std::iter::from_fn(move || {
            if done {
                return None;
            }
            sub = sub.wrapping_sub(mask) & mask;
            if sub == 0 {
                done = true;
                None
            } else {
                Some(IndexSet(sub))
            }
        })
    }
}

pub struct IndexSetIter(u32);

impl Iterator for IndexSetIter {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let i = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(i)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.0.count_ones() as usize;
        (n, Some(n))
    }
}

impl ExactSizeIterator for IndexSetIter {}

impl IntoIterator for IndexSet {
    type Item = usize;
    type IntoIter = IndexSetIter;

    fn into_iter(self) -> IndexSetIter {
        self.iter()
    }
}

impl FromIterator<usize> for IndexSet {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        IndexSet::from_indices(iter)
    }
}

impl fmt::Display for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (n, i) in self.iter().enumerate() {
            if n > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", i + 1)?;
        }
        f.write_str("}")
    }
}

impl fmt::Debug for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Parses `{1,2,4}`, `1,2,4` or `1 2 4` (one-based labels).
impl FromStr for IndexSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let body = s.trim().trim_start_matches(['{', '(']).trim_end_matches(['}', ')']);
        let mut set = IndexSet::EMPTY;
        for tok in body.split([',', ' ', ';']).filter(|t| !t.is_empty()) {
            let label: usize = tok
                .trim()
                .parse()
                .map_err(|_| Error::InvalidSubset(format!("cannot parse {s:?}")))?;
            if label == 0 || label > 32 {
                return Err(Error::InvalidSubset(format!("label {label} in {s:?}")));
            }
            set.insert(label - 1);
        }
        Ok(set)
    }
}

impl Serialize for IndexSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.labels().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for IndexSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let labels = Vec::<usize>::deserialize(deserializer)?;
        if labels.iter().any(|&l| l == 0 || l > 32) {
            return Err(serde::de::Error::custom("hypothesis labels are 1-based and at most 32"));
        }
        Ok(IndexSet::from_indices(labels.into_iter().map(|l| l - 1)))
    }
}

/// Serialized form of a graph: hypothesis names, weights and a row-major
/// transition matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
    pub weights: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
}

/// A constraint violated by a graph.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NegativeWeight { node: usize, value: f64 },
    WeightSumAboveOne { sum: f64 },
    EdgeOutOfRange { from: usize, to: usize, value: f64 },
    NonzeroDiagonal { node: usize, value: f64 },
    RowSumAboveOne { node: usize, sum: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::NegativeWeight { node, value } => {
                write!(f, "weight of H{} is negative ({value})", node + 1)
            }
            Violation::WeightSumAboveOne { sum } => write!(f, "weights sum to {sum} > 1"),
            Violation::EdgeOutOfRange { from, to, value } => {
                write!(f, "edge H{}->H{} = {value} outside [0, 1]", from + 1, to + 1)
            }
            Violation::NonzeroDiagonal { node, value } => {
                write!(f, "self-loop on H{} = {value}", node + 1)
            }
            Violation::RowSumAboveOne { node, sum } => {
                write!(f, "outgoing edges of H{} sum to {sum} > 1", node + 1)
            }
        }
    }
}

/// Outcome of [`WeightingGraph::validate`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Nodal weights plus transition matrix over `k` hypotheses.
///
/// Removed nodes keep their index: their weight, row and column are zero and
/// they are no longer part of [`WeightingGraph::active`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightingGraph {
    names: Vec<String>,
    weights: Vec<f64>,
    transition: Vec<f64>,
    active: IndexSet,
}

impl WeightingGraph {
    /// Checks shapes and finiteness only; call [`validate`](Self::validate)
    /// for the weight constraints.
    pub fn new(weights: Vec<f64>, transition: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::InvalidGraph("graph needs at least one hypothesis".into()));
        }
        if k > 32 {
            return Err(Error::InvalidGraph(format!("{k} hypotheses exceed the index width")));
        }
        if transition.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: transition.len(),
            });
        }
        let mut flat = Vec::with_capacity(k * k);
        for row in &transition {
            if row.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    found: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        if weights.iter().chain(flat.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidGraph("weights and edges must be finite".into()));
        }
        let names = (1..=k).map(|i| format!("H{i}")).collect();
        Ok(WeightingGraph {
            names,
            weights,
            transition: flat,
            active: IndexSet::full(k),
        })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.k() {
            return Err(Error::DimensionMismatch {
                expected: self.k(),
                found: names.len(),
            });
        }
        self.names = names;
        Ok(self)
    }

    /// Graph with the given weights and no edges.
    pub fn without_edges(weights: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        WeightingGraph::new(weights, vec![vec![0.0; k]; k])
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    pub fn edge(&self, from: usize, to: usize) -> f64 {
        self.transition[from * self.k() + to]
    }

    pub fn transition_rows(&self) -> Vec<Vec<f64>> {
        self.transition.chunks(self.k()).map(<[f64]>::to_vec).collect()
    }

    /// Nodes not yet removed.
    pub fn active(&self) -> IndexSet {
        self.active
    }

    pub fn validate(&self) -> ValidationReport {
        let k = self.k();
        let mut report = ValidationReport::default();
        for (node, &value) in self.weights.iter().enumerate() {
            if value < -GRAPH_TOLERANCE {
                report.violations.push(Violation::NegativeWeight { node, value });
            }
        }
        let sum: f64 = self.weights.iter().sum();
        if sum > 1.0 + GRAPH_TOLERANCE {
            report.violations.push(Violation::WeightSumAboveOne { sum });
        } else if sum < 1.0 - GRAPH_TOLERANCE && self.active == IndexSet::full(k) {
            report
                .warnings
                .push(format!("weights sum to {sum} < 1; the closed test will not exhaust alpha"));
        }
        for from in 0..k {
            let mut row_sum = 0.0;
            for to in 0..k {
                let value = self.edge(from, to);
                row_sum += value;
                if from == to {
                    if value.abs() > GRAPH_TOLERANCE {
                        report.violations.push(Violation::NonzeroDiagonal { node: from, value });
                    }
                } else if !(-GRAPH_TOLERANCE..=1.0 + GRAPH_TOLERANCE).contains(&value) {
                    report
                        .violations
                        .push(Violation::EdgeOutOfRange { from, to, value });
                }
            }
            if row_sum > 1.0 + GRAPH_TOLERANCE {
                report
                    .violations
                    .push(Violation::RowSumAboveOne { node: from, sum: row_sum });
            }
        }
        report
    }

    fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        match report.violations.first() {
            None => Ok(()),
            Some(v) => Err(Error::InvalidGraph(v.to_string())),
        }
    }

    /// Removes node `j`, passing its weight along its outgoing edges and
    /// reconnecting the edges that ran through it.
    pub fn remove_node(&self, j: usize) -> Result<WeightingGraph> {
        let k = self.k();
        if j >= k {
            return Err(Error::IndexOutOfRange { index: j, k });
        }
        if !self.active.contains(j) {
            return Err(Error::NodeAlreadyRemoved(j + 1));
        }
        let mut next = self.clone();
        next.remove_in_place(j);
        Ok(next)
    }

    fn remove_in_place(&mut self, j: usize) {
        let k = self.k();
        let remaining = {
            let mut a = self.active;
            a.remove(j);
            a
        };
        let wj = self.weights[j];
        for l in remaining {
            self.weights[l] += wj * self.transition[j * k + l];
        }
        self.weights[j] = 0.0;

        let old = self.transition.clone();
        let g = |a: usize, b: usize| old[a * k + b];
        for l in remaining {
            let g_lj = g(l, j);
            let loop_mass = g_lj * g(j, l);
            for m in remaining {
                self.transition[l * k + m] = if l == m || loop_mass >= 1.0 {
                    0.0
                } else {
                    (g(l, m) + g_lj * g(j, m)) / (1.0 - loop_mass)
                };
            }
        }
        for i in 0..k {
            self.transition[j * k + i] = 0.0;
            self.transition[i * k + j] = 0.0;
        }
        self.active = remaining;
    }

    /// Removes every active node outside `keep`, in ascending index order.
    pub fn restrict_to(&self, keep: IndexSet) -> Result<WeightingGraph> {
        let mut g = self.clone();
        for j in self.active.difference(keep) {
            g.remove_in_place(j);
        }
        Ok(g)
    }

    /// Weights of every non-empty intersection hypothesis.
    pub fn closure_weights(&self) -> Result<ClosureWeights> {
        let k = self.k();
        if k > MAX_HYPOTHESES {
            return Err(Error::ClosureTooLarge {
                k,
                max: MAX_HYPOTHESES,
            });
        }
        self.ensure_valid()?;
        let mut data = vec![0.0; (1usize << k) * k];
        let mut full = self.clone();
        full.active = IndexSet::full(k);
        fill_closure(&full, 0, IndexSet::EMPTY, &mut data);
        Ok(ClosureWeights { k, data })
    }

    pub fn to_spec(&self) -> GraphSpec {
        GraphSpec {
            names: Some(self.names.clone()),
            weights: self.weights.clone(),
            transition: self.transition_rows(),
        }
    }
}

// Depth-first over the keep/remove decision for each index, so graphs that
// share a prefix of removals share the intermediate work. Nodes are removed
// in ascending order along every path.
fn fill_closure(graph: &WeightingGraph, index: usize, kept: IndexSet, out: &mut [f64]) {
    let k = graph.k();
    if index == k {
        if !kept.is_empty() {
            let start = kept.bits() as usize * k;
            out[start..start + k].copy_from_slice(&graph.weights);
        }
        return;
    }
    let mut keep = kept;
    keep.insert(index);
    fill_closure(graph, index + 1, keep, out);
    let mut removed = graph.clone();
    removed.remove_in_place(index);
    fill_closure(&removed, index + 1, kept, out);
}

impl TryFrom<GraphSpec> for WeightingGraph {
    type Error = Error;

    fn try_from(spec: GraphSpec) -> Result<Self> {
        let graph = WeightingGraph::new(spec.weights, spec.transition)?;
        match spec.names {
            Some(names) => graph.with_names(names),
            None => Ok(graph),
        }
    }
}

impl Serialize for WeightingGraph {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_spec().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for WeightingGraph {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let spec = GraphSpec::deserialize(deserializer)?;
        WeightingGraph::try_from(spec).map_err(serde::de::Error::custom)
    }
}

/// Weights `w_{j,J}` for every non-empty `J ⊆ {1..k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosureWeights {
    k: usize,
    data: Vec<f64>,
}

impl ClosureWeights {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Weights of `H_J` as a length-`k` vector, zero outside `J`.
    pub fn get(&self, set: IndexSet) -> &[f64] {
        assert!(!set.is_empty(), "closure weights are defined for non-empty sets");
        let start = set.bits() as usize * self.k;
        &self.data[start..start + self.k]
    }

    pub fn weight(&self, set: IndexSet, j: usize) -> f64 {
        self.get(set)[j]
    }

    /// All non-empty sets in increasing bitmask order.
    pub fn sets(&self) -> impl Iterator<Item = IndexSet> {
        IndexSet::full(self.k).subsets()
    }

    /// `(set, member, weight)` rows, the CSV export layout.
    pub fn rows(&self) -> impl Iterator<Item = (IndexSet, usize, f64)> + '_ {
        self.sets()
            .flat_map(move |set| set.iter().map(move |j| (set, j, self.weight(set, j))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn figure1() -> WeightingGraph {
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

    #[test]
    fn index_set_basics() {
        let s = IndexSet::from_indices([0, 2, 3]);
        assert_eq!(s.len(), 3);
        assert_eq!(s.to_string(), "{1,3,4}");
        assert_eq!("{1,3,4}".parse::<IndexSet>().unwrap(), s);
        assert_eq!("1 3 4".parse::<IndexSet>().unwrap(), s);
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![0, 2, 3]);
        assert_eq!(IndexSet::full(4).subsets().count(), 15);
        assert!(IndexSet::EMPTY.subsets().next().is_none());
        assert!("{0}".parse::<IndexSet>().is_err());
    }

    #[test]
    fn figure1_is_valid() {
        let report = figure1().validate();
        assert!(report.is_valid(), "{report:?}");
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn weight_sum_above_one_is_reported() {
        let g = WeightingGraph::without_edges(vec![0.6, 0.6]).unwrap();
        let report = g.validate();
        assert!(matches!(report.violations[..], [Violation::WeightSumAboveOne { .. }]));
    }

    #[test]
    fn nonzero_diagonal_is_reported() {
        let mut rows = figure1().transition_rows();
        rows[0][0] = 0.1;
        rows[0][1] = 0.4;
        let g = WeightingGraph::new(vec![0.5, 0.5, 0.0, 0.0], rows).unwrap();
        let report = g.validate();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::NonzeroDiagonal { node: 0, .. })));
    }

    #[test]
    fn row_sum_and_negative_weight_reported() {
        let g = WeightingGraph::new(
            vec![-0.1, 0.5],
            vec![vec![0.0, 1.2], vec![0.5, 0.0]],
        )
        .unwrap();
        let report = g.validate();
        assert_eq!(report.violations.len(), 3, "{report:?}");
    }

    #[test]
    fn partial_weight_sum_only_warns() {
        let g = WeightingGraph::without_edges(vec![0.3, 0.3]).unwrap();
        let report = g.validate();
        assert!(report.is_valid());
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn remove_h1_matches_figure_2b() {
        let g = figure1().remove_node(0).unwrap();
        let w = g.weights();
        assert!((w[1] - 0.75).abs() < 1e-15);
        assert!((w[2] - 0.25).abs() < 1e-15);
        assert_eq!(w[3], 0.0);
        assert!((g.edge(1, 3) - 2.0 / 3.0).abs() < 1e-15);
        assert!((g.edge(1, 2) - 1.0 / 3.0).abs() < 1e-15);
        assert!((g.edge(2, 1) - 1.0).abs() < 1e-15);
        assert!((g.edge(3, 1) - 0.5).abs() < 1e-15);
        assert!((g.edge(3, 2) - 0.5).abs() < 1e-15);
        assert!(!g.active().contains(0));
        for i in 0..4 {
            assert_eq!(g.edge(0, i), 0.0);
            assert_eq!(g.edge(i, 0), 0.0);
        }
    }

    #[test]
    fn remove_h1_h2_matches_figure_2c() {
        let g = figure1().remove_node(0).unwrap().remove_node(1).unwrap();
        assert!((g.weight(2) - 0.5).abs() < 1e-15);
        assert!((g.weight(3) - 0.5).abs() < 1e-15);
        assert!((g.edge(2, 3) - 1.0).abs() < 1e-15);
        assert!((g.edge(3, 2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn removing_twice_fails() {
        let g = figure1().remove_node(0).unwrap();
        assert_eq!(g.remove_node(0), Err(Error::NodeAlreadyRemoved(1)));
    }

    #[test]
    fn removing_isolated_node_empties_graph() {
        let g = WeightingGraph::without_edges(vec![1.0]).unwrap();
        let empty = g.remove_node(0).unwrap();
        assert!(empty.active().is_empty());
        assert_eq!(empty.weights(), &[0.0]);
    }

    #[test]
    fn closure_too_large() {
        let k = MAX_HYPOTHESES + 1;
        let g = WeightingGraph::without_edges(vec![1.0 / k as f64; k]).unwrap();
        assert!(matches!(g.closure_weights(), Err(Error::ClosureTooLarge { .. })));
    }

    #[test]
    fn closure_rejects_invalid_graph() {
        let g = WeightingGraph::without_edges(vec![0.7, 0.7]).unwrap();
        assert!(matches!(g.closure_weights(), Err(Error::InvalidGraph(_))));
    }

    #[test]
    fn closure_spot_values() {
        let c = figure1().closure_weights().unwrap();
        assert_eq!(c.get(IndexSet::from_indices([1, 2, 3]))[1..], [0.75, 0.25, 0.0]);
        let w = c.get(IndexSet::from_indices([0, 3]));
        assert_eq!((w[0], w[3]), (0.75, 0.25));
        for j in 0..4 {
            assert_eq!(c.weight(IndexSet::singleton(j), j), 1.0);
        }
        assert_eq!(c.rows().count(), 32);
    }

    #[test]
    fn serde_round_trip() {
        let g = figure1();
        let json = serde_json_like(&g);
        assert_eq!(json.weights, g.weights());
        let back = WeightingGraph::try_from(json).unwrap();
        assert_eq!(back, g);
    }

    fn serde_json_like(g: &WeightingGraph) -> GraphSpec {
        g.to_spec()
    }
}
