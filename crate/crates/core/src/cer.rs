//! Two-stage closed testing by preserving the conditional error of every
//! intersection hypothesis.
//!
//! Each `H_J` gets pre-planned boundaries `(c_{J,1}, c_{J,2})` on the
//! weighted p-value scale. After the interim look the conditional
//! probability `B_J` of a planned stage-two rejection is computed and any
//! adapted stage-two test of `J ∩ I_2` must have the same conditional
//! rejection probability.

use rayon::prelude::*;

use crate::adaptation::{classify, Adaptation, JPlusClass};
use crate::closed_test::{elementary_rejections, lazy_closed_test, SetMemo};
use crate::design::Design;
use crate::error::{Error, Result};
use crate::graph::IndexSet;
use crate::numerics::{find_root, mvn_upper_orthant_union, std_normal_sf, two_stage_union, upper_z};
use crate::stagewise::{LocalTest, StageMarginals, TestKind, WeightedBlock};

/// Objective tolerance of the boundary solves, on the probability scale.
pub const PLAN_TOL: f64 = 1e-12;

/// Objective tolerance when matching an adapted test to `B_J`.
pub const ADAPT_TOL: f64 = 1e-12;

/// Smallest adapted boundary considered; below it the set cannot be
/// rejected for any finite data.
const MIN_BOUNDARY: f64 = 1e-300;

/// Planned boundaries of one intersection hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct SetPlan {
    pub set: IndexSet,
    pub kind: TestKind,
    /// Positive-weight members grouped by correlation block.
    pub blocks: Vec<WeightedBlock>,
    pub c1: f64,
    pub c2: f64,
}

impl SetPlan {
    /// `(j, w_j c_{J,1}, w_j c_{J,2})` for every positive-weight member.
    pub fn thresholds(&self) -> Vec<(usize, f64, f64)> {
        self.blocks
            .iter()
            .flat_map(|b| b.members.iter().zip(&b.weights))
            .map(|(&j, &w)| (j, w * self.c1, w * self.c2))
            .collect()
    }

    /// Stage-one crossing: some `p_{j,1} ≤ w_j c_{J,1}`.
    pub fn rejects_stage_one(&self, p1: &StageMarginals) -> Result<bool> {
        for b in &self.blocks {
            for (&j, &w) in b.members.iter().zip(&b.weights) {
                if p1.require(j)? <= w * self.c1 {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }
}

fn stage_one_spend(blocks: &[WeightedBlock], c1: f64) -> Result<f64> {
    let mut total = 0.0;
    for b in blocks {
        let z: Vec<f64> = b.weights.iter().map(|&w| upper_z(w * c1)).collect();
        total += mvn_upper_orthant_union(&z, &b.corr)?.value;
    }
    Ok(total)
}

fn two_stage_spend(blocks: &[WeightedBlock], c1: f64, c2: f64, t: f64) -> Result<f64> {
    let mut total = 0.0;
    for b in blocks {
        let a: Vec<f64> = b.weights.iter().map(|&w| upper_z(w * c1)).collect();
        let z: Vec<f64> = b.weights.iter().map(|&w| upper_z(w * c2)).collect();
        total += two_stage_union(&a, &z, &b.corr, &b.corr, t)?.value;
    }
    Ok(total)
}

/// Solves the stage-one and overall level equations of one local test.
///
/// Returns `(0, 0)` for a set without positive weight.
pub fn plan_boundaries(test: &LocalTest, alpha1: f64, alpha: f64, t: f64) -> Result<(f64, f64)> {
    let blocks = &test.blocks;
    if blocks.is_empty() {
        return Ok((0.0, 0.0));
    }
    let sum_w = test.weight_sum();
    let max_w = blocks
        .iter()
        .flat_map(|b| b.weights.iter().copied())
        .fold(0.0, f64::max);
    let c1 = if blocks.iter().all(|b| b.members.len() == 1) {
        alpha1 / sum_w
    } else {
        // Bonferroni and the largest single member bracket the union.
        let (lo, hi) = (alpha1 / sum_w, alpha1 / max_w);
        if hi - lo <= f64::EPSILON * hi {
            lo
        } else {
            find_root(|c| Ok(stage_one_spend(blocks, c)? - alpha1), lo, hi, PLAN_TOL)?
        }
    };
    let level = |log_c: f64| -> Result<f64> { Ok(two_stage_spend(blocks, c1, log_c.exp(), t)? - alpha) };
    let c2 = find_root(level, (alpha * 1e-6).ln(), (alpha / max_w).ln(), PLAN_TOL)?.exp();
    Ok((c1, c2))
}

/// Planned boundaries of every intersection hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosurePlan {
    pub design: Design,
    pub alpha1: f64,
    plans: Vec<SetPlan>,
}

impl ClosurePlan {
    /// Solves every set in parallel; the result does not depend on the
    /// thread count.
    pub fn new(design: Design) -> Result<Self> {
        let alpha1 = design.alpha1()?;
        let sets: Vec<IndexSet> = design.all().subsets().collect();
        let plans = sets
            .par_iter()
            .map(|&set| {
                let test = design.local_test(set);
                let (c1, c2) = plan_boundaries(test, alpha1, design.alpha, design.t)?;
                Ok(SetPlan {
                    set,
                    kind: test.kind,
                    blocks: test.blocks.clone(),
                    c1,
                    c2,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ClosurePlan { design, alpha1, plans })
    }

    pub fn k(&self) -> usize {
        self.design.k()
    }

    pub fn get(&self, set: IndexSet) -> &SetPlan {
        &self.plans[set.bits() as usize - 1]
    }

    pub fn plans(&self) -> &[SetPlan] {
        &self.plans
    }

    /// Level equation residuals `(stage one, overall)` re-evaluated from the
    /// stored boundaries.
    pub fn residuals(&self, set: IndexSet) -> Result<(f64, f64)> {
        let p = self.get(set);
        if p.blocks.is_empty() {
            return Ok((0.0, 0.0));
        }
        let r1 = stage_one_spend(&p.blocks, p.c1)? - self.alpha1;
        let r2 = two_stage_spend(&p.blocks, p.c1, p.c2, self.design.t)? - self.design.alpha;
        Ok((r1, r2))
    }
}

/// `(z(c) − √t z₁)/√(1−t)`: the incremental z-score needed for the
/// cumulative statistic to cross `c`, with the infinite cases resolved.
fn conditional_threshold(c: f64, z1: f64, t: f64) -> f64 {
    if c >= 1.0 || z1 == f64::INFINITY {
        f64::NEG_INFINITY
    } else if c <= 0.0 || z1 == f64::NEG_INFINITY {
        f64::INFINITY
    } else {
        (upper_z(c) - t.sqrt() * z1) / (1.0 - t).sqrt()
    }
}

/// P(P_{j,2} ≤ c | Z_{j,1} = z₁) when the cumulative statistic is
/// `√t Z_{j,1} + √(1−t) Z_{j,(2)}`.
pub fn conditional_stage2_tail(z1: f64, t: f64, c: f64) -> f64 {
    std_normal_sf(conditional_threshold(c, z1, t))
}

/// Sum over blocks of the conditional union probability of a stage-two
/// crossing with boundary `c`. `info[j]` is the information fraction of
/// hypothesis `j`.
fn conditional_rejection(blocks: &[WeightedBlock], z1: &[f64], info: &[f64], c: f64) -> Result<f64> {
    let mut total = 0.0;
    for b in blocks {
        if b.members.len() == 1 {
            let j = b.members[0];
            total += conditional_stage2_tail(z1[j], info[j], b.weights[0] * c);
            continue;
        }
        let x: Vec<f64> = b
            .members
            .iter()
            .zip(&b.weights)
            .map(|(&j, &w)| conditional_threshold(w * c, z1[j], info[j]))
            .collect();
        total += mvn_upper_orthant_union(&x, &b.corr)?.value;
    }
    Ok(total)
}

/// `(lo, hi)` enclosing [`conditional_rejection`] from the one-dimensional
/// tails alone; each block union lies between its largest tail and the sum
/// of its tails.
fn conditional_rejection_bounds(blocks: &[WeightedBlock], z1: &[f64], info: &[f64], c: f64) -> (f64, f64) {
    let (mut lo, mut hi) = (0.0, 0.0);
    for b in blocks {
        let (mut max, mut sum) = (0.0f64, 0.0);
        for (&j, &w) in b.members.iter().zip(&b.weights) {
            let q = conditional_stage2_tail(z1[j], info[j], w * c);
            max = max.max(q);
            sum += q;
        }
        lo += max;
        hi += sum.min(1.0);
    }
    (lo, hi)
}

/// Stage-one z-scores `z_{j,1} = Φ⁻¹(1 − p_{j,1})`, `−∞` where unobserved.
pub fn stage_one_z(p1: &StageMarginals) -> Vec<f64> {
    p1.values()
        .iter()
        .map(|p| p.map_or(f64::NEG_INFINITY, upper_z))
        .collect()
}

/// `B_J(χ₁)`: conditional probability of a planned stage-two rejection.
pub fn compute_b(plan: &ClosurePlan, set: IndexSet, z1: &[f64]) -> Result<f64> {
    let p = plan.get(set);
    let info = vec![plan.design.t; plan.k()];
    conditional_rejection(&p.blocks, z1, &info, p.c2)
}

/// The adapted stage-two test of `J ∩ I_2`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedTest {
    pub part: IndexSet,
    pub test: LocalTest,
    /// `w̃_{j,J}` indexed by hypothesis.
    pub weights: Vec<f64>,
}

impl AdaptedTest {
    /// `None` when no selected member of `set` carries weight.
    pub fn new(set: IndexSet, adaptation: &Adaptation) -> Option<Self> {
        let weights = adaptation.conditional_weights(set)?;
        let part = set.intersection(adaptation.selected);
        let test = LocalTest::new(part, &weights, &adaptation.increments);
        Some(AdaptedTest { part, test, weights })
    }

    /// Conditional rejection probability of boundary `c`.
    pub fn conditional_rejection(&self, adaptation: &Adaptation, z1: &[f64], c: f64) -> Result<f64> {
        conditional_rejection(&self.test.blocks, z1, &adaptation.info_fractions, c)
    }

    fn conditional_rejection_bounds(&self, adaptation: &Adaptation, z1: &[f64], c: f64) -> (f64, f64) {
        conditional_rejection_bounds(&self.test.blocks, z1, &adaptation.info_fractions, c)
    }

    /// `min_j p̃_{j,2} / w̃_j`: the smallest boundary the data cross.
    pub fn crossing_boundary(&self, p2: &StageMarginals) -> Result<f64> {
        let mut m = f64::INFINITY;
        for j in self.test.positive_members() {
            m = m.min(p2.require(j)? / self.weights[j]);
        }
        Ok(m)
    }

    fn max_boundary(&self) -> f64 {
        let min_w = self
            .test
            .positive_members()
            .map(|j| self.weights[j])
            .fold(f64::INFINITY, f64::min);
        1.0 / min_w
    }
}

/// Solves `F(c̃) = B_J` for the adapted boundary.
///
/// `F` is non-decreasing in `c̃`; when `B_J` is out of its range the
/// boundary is pinned to the corresponding end of `[0, 1 / min w̃]`.
pub fn adapt_boundary(b: f64, adapted: &AdaptedTest, adaptation: &Adaptation, z1: &[f64], hint: f64) -> Result<f64> {
    if b <= 0.0 {
        return Ok(0.0);
    }
    let f = |c: f64| adapted.conditional_rejection(adaptation, z1, c);
    let hi = adapted.max_boundary();
    if f(hi)? <= b {
        return Ok(hi);
    }
    let mut lo = if hint > 0.0 { (hint * 1e-2).min(hi * 0.5) } else { hi * 1e-4 };
    while f(lo)? > b {
        if lo <= MIN_BOUNDARY {
            return Ok(MIN_BOUNDARY);
        }
        lo = (lo * 1e-6).max(MIN_BOUNDARY);
    }
    let root = find_root(|x| Ok(f(x.exp())? - b), lo.ln(), hi.ln(), ADAPT_TOL * b.max(1e-3))?;
    Ok(root.exp())
}

/// Cumulative p-value over both stages with the realised information
/// fraction; inputs are clamped away from 0 and 1.
pub fn adapted_cumulative_p(p1: f64, p2_incremental: f64, t: f64) -> f64 {
    let clamp = |p: f64| p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
    std_normal_sf(t.sqrt() * upper_z(clamp(p1)) + (1.0 - t).sqrt() * upper_z(clamp(p2_incremental)))
}

/// Interim record of one intersection hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct CerSetInterim {
    pub set: IndexSet,
    pub kind: TestKind,
    pub c1: f64,
    pub c2: f64,
    pub rejected: bool,
    /// `B_J(χ₁)` for sets not rejected at stage one.
    pub b: Option<f64>,
}

impl CerSetInterim {
    /// `B_J ≥ 1`: the conditional error allows rejection without stage-two
    /// data.
    pub fn immediate(&self) -> bool {
        self.b.is_some_and(|b| b >= 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CerInterimState {
    pub p1: StageMarginals,
    pub sets: Vec<CerSetInterim>,
    pub early_rejected: IndexSet,
}

impl CerInterimState {
    pub fn record(&self, set: IndexSet) -> &CerSetInterim {
        &self.sets[set.bits() as usize - 1]
    }

    pub fn remaining(&self) -> IndexSet {
        IndexSet::full(self.p1.len()).difference(self.early_rejected)
    }

    pub fn open_sets(&self) -> Vec<IndexSet> {
        self.sets.iter().filter(|s| !s.rejected).map(|s| s.set).collect()
    }
}

/// Stage-one closed test and the conditional error of every open set.
pub fn cer_interim(plan: &ClosurePlan, p1: &StageMarginals) -> Result<CerInterimState> {
    let k = plan.k();
    if p1.len() != k {
        return Err(Error::DimensionMismatch { expected: k, found: p1.len() });
    }
    for j in 0..k {
        p1.require(j)?;
    }
    let z1 = stage_one_z(p1);
    let sets = plan
        .plans()
        .par_iter()
        .map(|sp| {
            let rejected = sp.rejects_stage_one(p1)?;
            let b = if rejected { None } else { Some(compute_b(plan, sp.set, &z1)?) };
            Ok(CerSetInterim {
                set: sp.set,
                kind: sp.kind,
                c1: sp.c1,
                c2: sp.c2,
                rejected,
                b,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let early_rejected = elementary_rejections(plan.design.all(), |s| sets[s.bits() as usize - 1].rejected);
    Ok(CerInterimState { p1: p1.clone(), sets, early_rejected })
}

/// One row of the final audit table.
#[derive(Debug, Clone, PartialEq)]
pub struct CerAuditRow {
    pub set: IndexSet,
    pub class: Option<JPlusClass>,
    pub b: Option<f64>,
    /// Tested part `J ∩ I_2`.
    pub part: Option<IndexSet>,
    pub c_tilde: Option<f64>,
    /// `(j, w̃_j c̃)`.
    pub thresholds: Vec<(usize, f64)>,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CerFinal {
    pub rejected: IndexSet,
    pub rejected_stage1: IndexSet,
    pub audit: Vec<CerAuditRow>,
}

/// Adapted boundaries of every set after the interim look, before any
/// stage-two data. Rows of sets rejected at stage one, or rejected
/// immediately because `B_J ≥ 1`, are marked rejected.
pub fn cer_adapt(plan: &ClosurePlan, state: &CerInterimState, adaptation: &Adaptation) -> Result<Vec<CerAuditRow>> {
    let remaining = state.remaining();
    adaptation.check_against(remaining)?;
    if adaptation.k() != plan.k() {
        return Err(Error::DimensionMismatch {
            expected: plan.k(),
            found: adaptation.k(),
        });
    }
    let z1 = stage_one_z(&state.p1);
    state
        .sets
        .par_iter()
        .map(|rec| adapted_row(rec, remaining, adaptation, &z1))
        .collect()
}

/// Final closed test from cumulative adapted p-values `p̃_{j,2}`, `j ∈ I_2`.
pub fn cer_final(
    plan: &ClosurePlan,
    state: &CerInterimState,
    adaptation: &Adaptation,
    p2: &StageMarginals,
) -> Result<CerFinal> {
    for j in adaptation.selected {
        p2.require(j)?;
    }
    let mut audit = cer_adapt(plan, state, adaptation)?;
    for row in &mut audit {
        for &(j, th) in &row.thresholds {
            if p2.require(j)? <= th {
                row.rejected = true;
            }
        }
    }
    let rejected = elementary_rejections(plan.design.all(), |s| audit[s.bits() as usize - 1].rejected);
    Ok(CerFinal {
        rejected,
        rejected_stage1: state.early_rejected,
        audit,
    })
}

fn adapted_row(rec: &CerSetInterim, remaining: IndexSet, adaptation: &Adaptation, z1: &[f64]) -> Result<CerAuditRow> {
    let mut row = CerAuditRow {
        set: rec.set,
        class: None,
        b: rec.b,
        part: None,
        c_tilde: None,
        thresholds: Vec::new(),
        rejected: rec.rejected,
    };
    if rec.rejected {
        return Ok(row);
    }
    let class = classify(rec.set, remaining, adaptation.selected);
    row.class = Some(class);
    let b = rec.b.unwrap_or(0.0);
    if rec.immediate() {
        row.rejected = true;
        return Ok(row);
    }
    if class == JPlusClass::B {
        return Ok(row);
    }
    let Some(adapted) = AdaptedTest::new(rec.set, adaptation) else {
        return Ok(row);
    };
    let c = adapt_boundary(b, &adapted, adaptation, z1, rec.c2)?;
    row.part = Some(adapted.part);
    row.c_tilde = Some(c);
    row.thresholds = adapted.test.positive_members().map(|j| (j, adapted.weights[j] * c)).collect();
    Ok(row)
}

/// Closed test conditional on one stage-one outcome and one adaptation,
/// evaluated lazily across many stage-two outcomes.
///
/// `B_J` and the adapted tests are computed on first use. A set decided
/// only a few times is settled by comparing `F(min p̃/w̃)` with `B_J`;
/// after [`CerConditional::SOLVE_AFTER`] uses its boundary is solved once
/// and reused.
pub struct CerConditional<'a> {
    plan: &'a ClosurePlan,
    adaptation: &'a Adaptation,
    z1: Vec<f64>,
    remaining: IndexSet,
    b: SetMemo<f64>,
    b_bounds: SetMemo<(f64, f64)>,
    adapted: Vec<Option<Option<AdaptedTest>>>,
    uses: Vec<u32>,
    boundary: SetMemo<f64>,
}

impl<'a> CerConditional<'a> {
    pub const SOLVE_AFTER: u32 = 4;

    /// `early` is `I_1r`; the adaptation must select from the rest.
    pub fn new(plan: &'a ClosurePlan, adaptation: &'a Adaptation, p1: &StageMarginals, early: IndexSet) -> Result<Self> {
        let remaining = plan.design.all().difference(early);
        adaptation.check_against(remaining)?;
        let k = plan.k();
        Ok(CerConditional {
            plan,
            adaptation,
            z1: stage_one_z(p1),
            remaining,
            b: SetMemo::new(k),
            b_bounds: SetMemo::new(k),
            adapted: vec![None; 1 << k],
            uses: vec![0; 1 << k],
            boundary: SetMemo::new(k),
        })
    }

    pub fn b(&mut self, set: IndexSet) -> Result<f64> {
        let (plan, z1) = (self.plan, &self.z1);
        self.b.get_or_try_insert(set, || compute_b(plan, set, z1))
    }

    /// Bounds on `B_J`, exact once `B_J` has been computed.
    fn b_bounds(&mut self, set: IndexSet) -> (f64, f64) {
        if let Some(b) = self.b.get(set) {
            return (b, b);
        }
        if let Some(r) = self.b_bounds.get(set) {
            return r;
        }
        let p = self.plan.get(set);
        let info = vec![self.plan.design.t; self.plan.k()];
        let r = conditional_rejection_bounds(&p.blocks, &self.z1, &info, p.c2);
        self.b_bounds.insert(set, r);
        r
    }

    /// Stage-two decision of a set not rejected at stage one.
    ///
    /// Integrals are evaluated only when the one-dimensional bounds on
    /// `B_J` and on the adapted test leave the decision open.
    pub fn rejects(&mut self, set: IndexSet, p2: &StageMarginals) -> Result<bool> {
        let (lo, hi) = self.b_bounds(set);
        if lo >= 1.0 {
            return Ok(true);
        }
        if hi <= 0.0 {
            return Ok(false);
        }
        let class_b = classify(set, self.remaining, self.adaptation.selected) == JPlusClass::B;
        if class_b || hi >= 1.0 {
            let b = self.b(set)?;
            if b >= 1.0 {
                return Ok(true);
            }
            if class_b || b <= 0.0 {
                return Ok(false);
            }
        }
        let slot = set.bits() as usize;
        if self.adapted[slot].is_none() {
            self.adapted[slot] = Some(AdaptedTest::new(set, self.adaptation));
        }
        let Some(adapted) = self.adapted[slot].as_ref().unwrap() else {
            return Ok(false);
        };
        let m = adapted.crossing_boundary(p2)?;
        if let Some(c) = self.boundary.get(set) {
            return Ok(m <= c);
        }
        let c = m.min(adapted.max_boundary());
        let (f_lo, f_hi) = adapted.conditional_rejection_bounds(self.adaptation, &self.z1, c);
        let (lo, hi) = self.b_bounds(set);
        if f_hi <= lo {
            return Ok(true);
        }
        if f_lo > hi {
            return Ok(false);
        }
        let b = self.b(set)?;
        if b <= 0.0 {
            return Ok(false);
        }
        // Re-borrow: `self.b` above needed `&mut self`.
        let adapted = self.adapted[slot].as_ref().unwrap().as_ref().unwrap();
        self.uses[slot] += 1;
        if self.uses[slot] > Self::SOLVE_AFTER {
            let c_tilde = adapt_boundary(b, adapted, self.adaptation, &self.z1, self.plan.get(set).c2)?;
            self.boundary.insert(set, c_tilde);
            return Ok(m <= c_tilde);
        }
        Ok(adapted.conditional_rejection(self.adaptation, &self.z1, c)? <= b)
    }

    /// Elementary rejections of the closed test, given the stage-one
    /// rejection status of each set. A hypothesis that was not selected is
    /// rejected only if every set containing it is.
    pub fn final_rejections(
        &mut self,
        p2: &StageMarginals,
        mut stage_one: impl FnMut(IndexSet) -> Result<bool>,
    ) -> Result<IndexSet> {
        let all = self.plan.design.all();
        lazy_closed_test(all, all, |set| {
            if stage_one(set)? {
                return Ok(true);
            }
            self.rejects(set, p2)
        })
    }
}
