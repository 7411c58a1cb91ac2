//! Weighted adjusted p-values for a single stage.
//!
//! The nonparametric test is weighted Bonferroni, the parametric test
//! calibrates the weighted minimum p-value against the joint normal law of
//! the test statistics, and the mixed test applies the parametric test within
//! each block of known correlation and Bonferroni across blocks.

use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};
use crate::graph::IndexSet;
use crate::numerics::{mvn_upper_orthant_union, upper_z, CorrelationMatrix};

/// Partition of the hypotheses into blocks of known correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationKnowledge {
    k: usize,
    blocks: Vec<KnowledgeBlock>,
    block_of: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBlock {
    pub members: IndexSet,
    /// Correlation over `members` in ascending index order.
    pub corr: CorrelationMatrix,
}

impl CorrelationKnowledge {
    pub fn new(k: usize, blocks: Vec<KnowledgeBlock>) -> Result<Self> {
        let mut block_of = vec![usize::MAX; k];
        for (h, block) in blocks.iter().enumerate() {
            if block.members.is_empty() {
                return Err(Error::InvalidSubset("empty correlation block".into()));
            }
            if block.corr.dim() != block.members.len() {
                return Err(Error::DimensionMismatch {
                    expected: block.members.len(),
                    found: block.corr.dim(),
                });
            }
            for j in block.members {
                if j >= k {
                    return Err(Error::IndexOutOfRange { index: j + 1, k });
                }
                if block_of[j] != usize::MAX {
                    return Err(Error::InvalidSubset(format!(
                        "hypothesis {} appears in two correlation blocks",
                        j + 1
                    )));
                }
                block_of[j] = h;
            }
        }
        if let Some(j) = block_of.iter().position(|&b| b == usize::MAX) {
            return Err(Error::InvalidSubset(format!(
                "hypothesis {} is not covered by any correlation block",
                j + 1
            )));
        }
        Ok(CorrelationKnowledge {
            k,
            blocks,
            block_of,
        })
    }

    /// No correlations known: every hypothesis is its own block.
    pub fn all_unknown(k: usize) -> Self {
        let blocks = (0..k)
            .map(|j| KnowledgeBlock {
                members: IndexSet::singleton(j),
                corr: CorrelationMatrix::identity(1),
            })
            .collect();
        CorrelationKnowledge {
            k,
            blocks,
            block_of: (0..k).collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn blocks(&self) -> &[KnowledgeBlock] {
        &self.blocks
    }

    pub fn block_of(&self, j: usize) -> usize {
        self.block_of[j]
    }

    /// Blocks `J_h ∩ J` with their correlation submatrices; empty
    /// intersections are dropped.
    pub fn restrict(&self, set: IndexSet) -> Vec<SubBlock> {
        let mut out = Vec::new();
        for block in &self.blocks {
            let part = block.members.intersection(set);
            if part.is_empty() {
                continue;
            }
            let members: Vec<usize> = part.iter().collect();
            let positions: Vec<usize> = block
                .members
                .iter()
                .enumerate()
                .filter(|(_, j)| part.contains(*j))
                .map(|(pos, _)| pos)
                .collect();
            let corr = if positions.len() == block.members.len() {
                block.corr.clone()
            } else {
                block.corr.submatrix(&positions)
            };
            out.push(SubBlock { members, corr });
        }
        out
    }

    pub fn to_spec(&self) -> KnowledgeSpec {
        KnowledgeSpec {
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockSpec {
                    members: b.members,
                    correlation: (b.members.len() > 1).then(|| b.corr.rows()),
                    equicorrelation: None,
                })
                .collect(),
        }
    }

    pub fn from_spec(k: usize, spec: &KnowledgeSpec) -> Result<Self> {
        let mut blocks = Vec::with_capacity(spec.blocks.len());
        let mut covered = IndexSet::EMPTY;
        for b in &spec.blocks {
            let d = b.members.len();
            let corr = match (&b.correlation, b.equicorrelation) {
                (Some(rows), None) => CorrelationMatrix::new(rows.clone())?,
                (None, Some(rho)) => CorrelationMatrix::equicorrelated(d, rho)?,
                (None, None) if d == 1 => CorrelationMatrix::identity(1),
                (None, None) => {
                    return Err(Error::InvalidCorrelation(format!(
                        "block {} needs a correlation matrix or an equicorrelation",
                        b.members
                    )))
                }
                (Some(_), Some(_)) => {
                    return Err(Error::InvalidCorrelation(format!(
                        "block {} gives both a matrix and an equicorrelation",
                        b.members
                    )))
                }
            };
            covered = covered.union(b.members);
            blocks.push(KnowledgeBlock {
                members: b.members,
                corr,
            });
        }
        // Hypotheses left out of every block have unknown correlation.
        for j in IndexSet::full(k).difference(covered) {
            blocks.push(KnowledgeBlock {
                members: IndexSet::singleton(j),
                corr: CorrelationMatrix::identity(1),
            });
        }
        CorrelationKnowledge::new(k, blocks)
    }
}

/// Config form of [`CorrelationKnowledge`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeSpec {
    #[serde(default)]
    pub blocks: Vec<BlockSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub members: IndexSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equicorrelation: Option<f64>,
}

/// A block of an intersection set.
#[derive(Debug, Clone, PartialEq)]
pub struct SubBlock {
    pub members: Vec<usize>,
    pub corr: CorrelationMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageLabel {
    First,
    SecondIncremental,
    SecondCumulative,
}

impl StageLabel {
    fn name(self) -> &'static str {
        match self {
            StageLabel::First => "stage-one",
            StageLabel::SecondIncremental => "stage-two incremental",
            StageLabel::SecondCumulative => "stage-two cumulative",
        }
    }
}

/// Marginal p-values of one stage; hypotheses not observed are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMarginals {
    pub stage: StageLabel,
    p: Vec<Option<f64>>,
}

impl StageMarginals {
    pub fn new(stage: StageLabel, p: Vec<Option<f64>>) -> Result<Self> {
        for v in p.iter().flatten() {
            check_probability("p-value", *v)?;
        }
        Ok(StageMarginals { stage, p })
    }

    pub fn complete(stage: StageLabel, p: &[f64]) -> Result<Self> {
        Self::new(stage, p.iter().map(|&v| Some(v)).collect())
    }

    /// Values for the members of `observed`, `None` elsewhere.
    pub fn observed(stage: StageLabel, k: usize, observed: IndexSet, p: &[f64]) -> Result<Self> {
        if p.len() != observed.len() {
            return Err(Error::DimensionMismatch {
                expected: observed.len(),
                found: p.len(),
            });
        }
        let mut all = vec![None; k];
        for (j, &v) in observed.iter().zip(p) {
            all[j] = Some(v);
        }
        Self::new(stage, all)
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn get(&self, j: usize) -> Option<f64> {
        self.p.get(j).copied().flatten()
    }

    pub fn require(&self, j: usize) -> Result<f64> {
        self.get(j).ok_or(Error::MissingMarginal {
            stage: self.stage.name(),
            index: j + 1,
        })
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.p
    }
}

/// `min(1, min_j p_j / w_j)` over positive weights; 1 when every weight is 0.
pub fn adjusted_p_nonparam(p: &[f64], w: &[f64]) -> f64 {
    p.iter()
        .zip(w)
        .filter(|(_, &wj)| wj > 0.0)
        .map(|(&pj, &wj)| pj / wj)
        .fold(1.0, f64::min)
}

/// P(min_j P_j / w_j ≤ min_j p_j / w_j) under the joint normal law.
///
/// Zero-weight members are dropped together with their rows of `corr`.
pub fn adjusted_p_param(p: &[f64], w: &[f64], corr: &CorrelationMatrix) -> Result<f64> {
    if p.len() != w.len() || corr.dim() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            found: corr.dim().min(p.len()),
        });
    }
    let keep: Vec<usize> = (0..w.len()).filter(|&j| w[j] > 0.0).collect();
    if keep.is_empty() {
        return Ok(1.0);
    }
    let m = keep.iter().map(|&j| p[j] / w[j]).fold(f64::INFINITY, f64::min);
    if m <= 0.0 {
        return Ok(0.0);
    }
    let thresholds: Vec<f64> = keep.iter().map(|&j| upper_z((w[j] * m).min(1.0))).collect();
    let sub = if keep.len() == w.len() {
        corr.clone()
    } else {
        corr.submatrix(&keep)
    };
    Ok(mvn_upper_orthant_union(&thresholds, &sub)?.value.min(1.0))
}

/// Positions (into `p` / `w`) of one block and the block correlation.
#[derive(Debug, Clone)]
pub struct MixedBlock<'a> {
    pub positions: &'a [usize],
    pub corr: &'a CorrelationMatrix,
}

/// `min(1, min_h p_h / Σ_{j∈J_h} w_j)` with `p_h` the parametric p-value of
/// block `h`; blocks without positive weight are skipped.
pub fn adjusted_p_mixed(p: &[f64], w: &[f64], blocks: &[MixedBlock<'_>]) -> Result<f64> {
    let mut best: f64 = 1.0;
    for block in blocks {
        let bw: Vec<f64> = block.positions.iter().map(|&i| w[i]).collect();
        let total: f64 = bw.iter().sum();
        if total <= 0.0 {
            continue;
        }
        let bp: Vec<f64> = block.positions.iter().map(|&i| p[i]).collect();
        let ph = adjusted_p_param(&bp, &bw, block.corr)?;
        best = best.min(ph / total);
    }
    Ok(best.min(1.0))
}

/// Which local test applies to an intersection hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestKind {
    /// A single member carries all the weight.
    Single,
    Nonparametric,
    Parametric,
    Mixed,
}

impl TestKind {
    pub fn label(self) -> &'static str {
        match self {
            TestKind::Single => "NA",
            TestKind::Nonparametric => "Nonparametric",
            TestKind::Parametric => "Parametric",
            TestKind::Mixed => "Mixed",
        }
    }
}

/// A block of positive-weight members of an intersection set.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedBlock {
    pub members: Vec<usize>,
    pub weights: Vec<f64>,
    pub corr: CorrelationMatrix,
}

impl WeightedBlock {
    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// The local test of `H_J`: positive-weight members grouped by correlation
/// block.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTest {
    pub set: IndexSet,
    pub kind: TestKind,
    pub blocks: Vec<WeightedBlock>,
}

impl LocalTest {
    /// `weights` is indexed by hypothesis (length `k`); entries outside
    /// `set` are ignored.
    pub fn new(set: IndexSet, weights: &[f64], knowledge: &CorrelationKnowledge) -> Self {
        let positive: IndexSet = set.iter().filter(|&j| weights[j] > 0.0).collect();
        let blocks: Vec<WeightedBlock> = knowledge
            .restrict(positive)
            .into_iter()
            .map(|b| WeightedBlock {
                weights: b.members.iter().map(|&j| weights[j]).collect(),
                members: b.members,
                corr: b.corr,
            })
            .collect();
        let kind = if positive.len() <= 1 {
            TestKind::Single
        } else if blocks.iter().all(|b| b.members.len() == 1) {
            TestKind::Nonparametric
        } else if blocks.len() == 1 {
            TestKind::Parametric
        } else {
            TestKind::Mixed
        };
        LocalTest { set, kind, blocks }
    }

    pub fn positive_members(&self) -> impl Iterator<Item = usize> + '_ {
        self.blocks.iter().flat_map(|b| b.members.iter().copied())
    }

    pub fn weight_sum(&self) -> f64 {
        self.blocks.iter().map(WeightedBlock::weight_sum).sum()
    }

    /// `(lo, hi)` enclosing [`LocalTest::adjusted_p`] without any normal
    /// integral: a union probability lies between its largest term and the
    /// sum of its terms. Both ends coincide for single and nonparametric
    /// tests.
    pub fn adjusted_p_bounds(&self, p: &StageMarginals) -> Result<(f64, f64)> {
        let (mut lo, mut hi) = (1.0f64, 1.0f64);
        for b in &self.blocks {
            let mut m = f64::INFINITY;
            for (&j, &w) in b.members.iter().zip(&b.weights) {
                m = m.min(p.require(j)? / w);
            }
            let max_w = b.weights.iter().copied().fold(0.0, f64::max);
            let total = b.weight_sum();
            let (l, h) = match self.kind {
                TestKind::Single | TestKind::Nonparametric => (m, m),
                TestKind::Parametric => ((m * max_w).min(1.0), (m * total).min(1.0)),
                TestKind::Mixed => ((m * max_w).min(1.0) / total, (m * total).min(1.0) / total),
            };
            lo = lo.min(l);
            hi = hi.min(h);
        }
        Ok((lo.min(1.0), hi.min(1.0)))
    }

    /// Adjusted p-value from marginal p-values indexed by hypothesis.
    pub fn adjusted_p(&self, p: &StageMarginals) -> Result<f64> {
        match self.kind {
            TestKind::Single | TestKind::Nonparametric => {
                let mut best: f64 = 1.0;
                for b in &self.blocks {
                    for (&j, &w) in b.members.iter().zip(&b.weights) {
                        best = best.min(p.require(j)? / w);
                    }
                }
                Ok(best.min(1.0))
            }
            TestKind::Parametric => {
                let b = &self.blocks[0];
                let bp = b.members.iter().map(|&j| p.require(j)).collect::<Result<Vec<_>>>()?;
                adjusted_p_param(&bp, &b.weights, &b.corr)
            }
            TestKind::Mixed => {
                let mut best: f64 = 1.0;
                for b in &self.blocks {
                    let bp = b.members.iter().map(|&j| p.require(j)).collect::<Result<Vec<_>>>()?;
                    let ph = adjusted_p_param(&bp, &b.weights, &b.corr)?;
                    best = best.min(ph / b.weight_sum());
                }
                Ok(best.min(1.0))
            }
        }
    }
}
