//! Two-stage closed testing by inverse-normal combination of stage-wise
//! adjusted p-values.

use crate::adaptation::{classify, Adaptation, JPlusClass};
use crate::closed_test::{elementary_rejections, SetMemo};
use crate::design::Design;
use crate::error::{Error, Result};
use crate::graph::IndexSet;
use crate::numerics::{bvn_upper, find_root, std_normal_sf, upper_z};
use crate::stagewise::{LocalTest, StageMarginals, TestKind};

/// Per-set override of the stage-wise levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelOverride {
    pub set: IndexSet,
    pub alpha1: f64,
    pub alpha2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComboDesign {
    pub design: Design,
    pub nu1: f64,
    pub nu2: f64,
    alpha1: f64,
    alpha2: f64,
    overrides: Vec<LevelOverride>,
}

impl ComboDesign {
    /// Uses the combination weights `ν = (√t, √(1−t))`.
    pub fn new(design: Design) -> Result<Self> {
        let (nu1, nu2) = (design.t.sqrt(), (1.0 - design.t).sqrt());
        Self::with_weights(design, nu1, nu2)
    }

    pub fn with_weights(design: Design, nu1: f64, nu2: f64) -> Result<Self> {
        if nu1 < 0.0 || nu2 < 0.0 || (nu1 * nu1 + nu2 * nu2 - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "combination weights ({nu1}, {nu2}) must be non-negative with unit squared sum"
            )));
        }
        let alpha1 = design.alpha1()?;
        let alpha2 = solve_alpha2(design.alpha, alpha1, nu1, nu2)?;
        Ok(ComboDesign {
            design,
            nu1,
            nu2,
            alpha1,
            alpha2,
            overrides: Vec::new(),
        })
    }

    pub fn with_override(mut self, o: LevelOverride) -> Self {
        self.overrides.retain(|x| x.set != o.set);
        self.overrides.push(o);
        self
    }

    pub fn overrides(&self) -> &[LevelOverride] {
        &self.overrides
    }

    /// `(α_{J,1}, α_{J,2})`.
    pub fn levels(&self, set: IndexSet) -> (f64, f64) {
        self.overrides
            .iter()
            .find(|o| o.set == set)
            .map_or((self.alpha1, self.alpha2), |o| (o.alpha1, o.alpha2))
    }

    pub fn alpha1(&self) -> f64 {
        self.alpha1
    }

    pub fn alpha2(&self) -> f64 {
        self.alpha2
    }

    /// Stage-one adjusted p-value `p_{J,1}`.
    pub fn stage_one_p(&self, set: IndexSet, p1: &StageMarginals) -> Result<f64> {
        self.design.local_test(set).adjusted_p(p1)
    }

    /// Stage-two adjusted p-value `p_{J,(2)}` of a set that was not rejected
    /// at stage one, with the local test used (`None` when the set has no
    /// weighted selected member and is assigned p = 1).
    pub fn stage_two_p(
        &self,
        set: IndexSet,
        remaining: IndexSet,
        adaptation: &Adaptation,
        p2: &StageMarginals,
    ) -> Result<(JPlusClass, Option<TestKind>, f64)> {
        let (class, test) = self.stage_two_test(set, remaining, adaptation);
        let Some(test) = test else {
            return Ok((class, None, 1.0));
        };
        let p = test.adjusted_p(p2)?;
        Ok((class, Some(test.kind), p))
    }

    /// Local test of `J ∩ I_2`; `None` for class B sets and sets without a
    /// weighted selected member, whose stage-two p-value is 1.
    pub fn stage_two_test(
        &self,
        set: IndexSet,
        remaining: IndexSet,
        adaptation: &Adaptation,
    ) -> (JPlusClass, Option<LocalTest>) {
        let class = classify(set, remaining, adaptation.selected);
        if class == JPlusClass::B {
            return (class, None);
        }
        let Some(weights) = adaptation.stage_two_weights(set) else {
            return (class, None);
        };
        let part = set.intersection(adaptation.selected);
        (class, Some(LocalTest::new(part, &weights, &adaptation.increments)))
    }

    /// Combined p-value and decision for one set.
    pub fn combine(&self, set: IndexSet, p1: f64, p2: f64) -> (f64, bool) {
        let combined = inverse_normal_combine(p1, p2, self.nu1, self.nu2);
        (combined, combined <= self.levels(set).1)
    }
}

/// Stage-two level solving the two-stage level condition for independent
/// uniform stage-wise p-values.
pub fn solve_alpha2(alpha: f64, alpha1: f64, nu1: f64, nu2: f64) -> Result<f64> {
    if !(alpha1 > 0.0 && alpha1 < alpha) {
        return Err(Error::OutOfRange {
            name: "alpha_1",
            range: "(0, alpha)",
            value: alpha1,
        });
    }
    if nu2 <= 0.0 {
        return Err(Error::InvalidArgument("stage-two combination weight must be positive".into()));
    }
    let a = upper_z(alpha1);
    // P(Z_1 < a, ν_1 Z_1 + ν_2 Z_2 ≥ b) = Φ̄(b) − P(Z_1 ≥ a, C ≥ b).
    let level = |log_a2: f64| -> Result<f64> {
        let b = upper_z(log_a2.exp());
        Ok(alpha1 + std_normal_sf(b) - bvn_upper(a, b, nu1) - alpha)
    };
    let x = find_root(level, (alpha * 1e-8).ln(), alpha.ln(), 1e-14)?;
    Ok(x.exp())
}

/// `1 − Φ(ν_1 Φ⁻¹(1 − p_1) + ν_2 Φ⁻¹(1 − p_2))`.
///
/// A p-value of 1 with positive weight means the set can never be rejected,
/// so the result is 1 without evaluating the infinite z-score.
pub fn inverse_normal_combine(p1: f64, p2: f64, nu1: f64, nu2: f64) -> f64 {
    if (p1 >= 1.0 && nu1 > 0.0) || (p2 >= 1.0 && nu2 > 0.0) {
        return 1.0;
    }
    let z = |p: f64, nu: f64| if nu > 0.0 { nu * upper_z(p) } else { 0.0 };
    std_normal_sf(z(p1, nu1) + z(p2, nu2))
}

/// Stage-one record of one intersection set.
#[derive(Debug, Clone, PartialEq)]
pub struct ComboSetInterim {
    pub set: IndexSet,
    pub kind: TestKind,
    pub weights: Vec<f64>,
    pub p1: f64,
    pub alpha1: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComboInterimState {
    pub p1: StageMarginals,
    /// One entry per non-empty set, in increasing bitmask order.
    pub sets: Vec<ComboSetInterim>,
    /// `I_1r`.
    pub early_rejected: IndexSet,
}

impl ComboInterimState {
    pub fn record(&self, set: IndexSet) -> &ComboSetInterim {
        &self.sets[set.bits() as usize - 1]
    }

    /// `J^r`.
    pub fn rejected_sets(&self) -> Vec<IndexSet> {
        self.sets.iter().filter(|s| s.rejected).map(|s| s.set).collect()
    }

    /// `J^+`.
    pub fn open_sets(&self) -> Vec<IndexSet> {
        self.sets.iter().filter(|s| !s.rejected).map(|s| s.set).collect()
    }

    /// `I_1* = I_1 \ I_1r`.
    pub fn remaining(&self) -> IndexSet {
        IndexSet::full(self.p1.len()).difference(self.early_rejected)
    }
}

fn check_stage_one(design: &Design, p1: &StageMarginals) -> Result<()> {
    if p1.len() != design.k() {
        return Err(Error::DimensionMismatch {
            expected: design.k(),
            found: p1.len(),
        });
    }
    for j in 0..design.k() {
        p1.require(j)?;
    }
    Ok(())
}

/// Stage-one closed test: adjusted p-values of every intersection set,
/// the rejected sets and the early-rejected elementary hypotheses.
pub fn combo_interim(design: &ComboDesign, p1: &StageMarginals) -> Result<ComboInterimState> {
    let d = &design.design;
    check_stage_one(d, p1)?;
    let mut sets = Vec::with_capacity((1 << d.k()) - 1);
    for set in d.all().subsets() {
        let test = d.local_test(set);
        let p = test.adjusted_p(p1)?;
        let alpha1 = design.levels(set).0;
        sets.push(ComboSetInterim {
            set,
            kind: test.kind,
            weights: set.iter().map(|j| d.closure().weight(set, j)).collect(),
            p1: p,
            alpha1,
            rejected: p <= alpha1,
        });
    }
    let early_rejected = elementary_rejections(d.all(), |s| sets[s.bits() as usize - 1].rejected);
    Ok(ComboInterimState {
        p1: p1.clone(),
        sets,
        early_rejected,
    })
}

/// One row of the final audit table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComboAuditRow {
    pub set: IndexSet,
    pub p1: f64,
    /// `None` for sets rejected at stage one.
    pub class: Option<JPlusClass>,
    pub kind2: Option<TestKind>,
    pub p2: Option<f64>,
    pub combined: Option<f64>,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComboFinal {
    pub rejected: IndexSet,
    pub rejected_stage1: IndexSet,
    pub audit: Vec<ComboAuditRow>,
}

/// Final closed test from the stage-two incremental p-values of `I_2`.
pub fn combo_final(
    design: &ComboDesign,
    state: &ComboInterimState,
    adaptation: &Adaptation,
    p2: &StageMarginals,
) -> Result<ComboFinal> {
    let remaining = state.remaining();
    adaptation.check_against(remaining)?;
    for j in adaptation.selected {
        p2.require(j)?;
    }
    let mut audit = Vec::with_capacity(state.sets.len());
    for rec in &state.sets {
        if rec.rejected {
            audit.push(ComboAuditRow {
                set: rec.set,
                p1: rec.p1,
                class: None,
                kind2: None,
                p2: None,
                combined: None,
                rejected: true,
            });
            continue;
        }
        let (class, kind2, p2v) = design.stage_two_p(rec.set, remaining, adaptation, p2)?;
        let (combined, rejected) = design.combine(rec.set, rec.p1, p2v);
        audit.push(ComboAuditRow {
            set: rec.set,
            p1: rec.p1,
            class: Some(class),
            kind2,
            p2: Some(p2v),
            combined: Some(combined),
            rejected,
        });
    }
    let rejected = elementary_rejections(design.design.all(), |s| audit[s.bits() as usize - 1].rejected);
    Ok(ComboFinal {
        rejected,
        rejected_stage1: state.early_rejected,
        audit,
    })
}

/// Lazily evaluated two-stage closed test; each set is decided at most once.
pub struct LazyCombo<'a> {
    design: &'a ComboDesign,
    p1: &'a StageMarginals,
    stage_one: SetMemo<f64>,
}

impl<'a> LazyCombo<'a> {
    pub fn new(design: &'a ComboDesign, p1: &'a StageMarginals) -> Self {
        LazyCombo {
            design,
            p1,
            stage_one: SetMemo::new(design.design.k()),
        }
    }

    pub fn stage_one_p(&mut self, set: IndexSet) -> Result<f64> {
        let (design, p1) = (self.design, self.p1);
        self.stage_one
            .get_or_try_insert(set, || design.stage_one_p(set, p1))
    }

    /// Bounds on `p_{J,1}`, exact once the p-value has been computed.
    fn stage_one_bounds(&self, set: IndexSet) -> Result<(f64, f64)> {
        match self.stage_one.get(set) {
            Some(p) => Ok((p, p)),
            None => self.design.design.local_test(set).adjusted_p_bounds(self.p1),
        }
    }

    pub fn stage_one_rejects(&mut self, set: IndexSet) -> Result<bool> {
        let a1 = self.design.levels(set).0;
        let (lo, hi) = self.stage_one_bounds(set)?;
        if hi <= a1 {
            return Ok(true);
        }
        if lo > a1 {
            return Ok(false);
        }
        Ok(self.stage_one_p(set)? <= a1)
    }

    /// `I_1r`, evaluating only the sets needed.
    pub fn early_rejected(&mut self) -> Result<IndexSet> {
        let all = self.design.design.all();
        crate::closed_test::lazy_closed_test(all, all, |s| self.stage_one_rejects(s))
    }

    /// Elementary rejections after stage two.
    pub fn final_rejections(
        &mut self,
        early: IndexSet,
        adaptation: &Adaptation,
        p2: &StageMarginals,
    ) -> Result<IndexSet> {
        let all = self.design.design.all();
        let remaining = all.difference(early);
        let design = self.design;
        crate::closed_test::lazy_closed_test(all, all, |set| {
            if self.stage_one_rejects(set)? {
                return Ok(true);
            }
            let test = design.stage_two_test(set, remaining, adaptation).1;
            let (lo2, hi2) = match &test {
                Some(t) => t.adjusted_p_bounds(p2)?,
                None => (1.0, 1.0),
            };
            // The combination is monotone in both p-values.
            let (lo1, hi1) = self.stage_one_bounds(set)?;
            if design.combine(set, hi1, hi2).1 {
                return Ok(true);
            }
            if !design.combine(set, lo1, lo2).1 {
                return Ok(false);
            }
            let p1v = self.stage_one_p(set)?;
            let p2v = match &test {
                Some(t) if lo2 < hi2 => t.adjusted_p(p2)?,
                _ => hi2,
            };
            Ok(design.combine(set, p1v, p2v).1)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn alpha2_worked_example() {
        let a1 = crate::spending::spend_alpha1(0.5, 0.025).unwrap();
        let nu = 0.5f64.sqrt();
        let a2 = solve_alpha2(0.025, a1, nu, nu).unwrap();
        assert_abs_diff_eq!(a2, 0.0245, epsilon = 5e-4);
    }

    #[test]
    fn alpha2_tends_to_alpha() {
        let nu = 0.5f64.sqrt();
        let a2 = solve_alpha2(0.025, 1e-9, nu, nu).unwrap();
        assert_abs_diff_eq!(a2, 0.025, epsilon = 1e-7);
    }

    #[test]
    fn combine_examples() {
        let nu = 0.5f64.sqrt();
        assert_abs_diff_eq!(inverse_normal_combine(0.0410, 0.0209, nu, nu), 0.0038, epsilon = 1e-4);
        assert_abs_diff_eq!(inverse_normal_combine(0.5, 0.5, nu, nu), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(inverse_normal_combine(0.0900, 0.0448, nu, nu), 0.0158, epsilon = 1e-4);
        assert_eq!(inverse_normal_combine(0.001, 1.0, nu, nu), 1.0);
        assert_eq!(inverse_normal_combine(0.0, 0.3, nu, nu), 0.0);
    }

    #[test]
    fn combination_weights_must_be_normalised() {
        let g = crate::graph::WeightingGraph::without_edges(vec![1.0]).unwrap();
        let d = Design::new(
            g,
            crate::stagewise::CorrelationKnowledge::all_unknown(1),
            0.025,
            0.5,
            Default::default(),
        )
        .unwrap();
        assert!(ComboDesign::with_weights(d.clone(), 0.5, 0.5).is_err());
        let c = ComboDesign::new(d).unwrap();
        let o = LevelOverride {
            set: IndexSet::singleton(0),
            alpha1: 0.001,
            alpha2: 0.02,
        };
        let c = c.with_override(o);
        assert_eq!(c.levels(IndexSet::singleton(0)), (0.001, 0.02));
    }
}
