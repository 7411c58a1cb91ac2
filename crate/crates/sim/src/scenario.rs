//! Trial scenarios, group sizes and interim dropping rules.

use crate::error::{Result, SimError};
use gmcp_core::IndexSet;
use serde::{Deserialize, Serialize};

fn unit() -> f64 {
    1.0
}

/// Effect sizes of each treatment arm against control. The secondary
/// endpoint of an arm has the same effect as its primary endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    /// Primary-endpoint effect per arm, in units of `sigma`.
    pub effects: Vec<f64>,
    #[serde(default = "unit")]
    pub sigma: f64,
    /// Correlation between the two endpoints of a subject.
    pub rho: f64,
}

impl Scenario {
    pub fn new(name: impl Into<String>, effects: Vec<f64>, sigma: f64, rho: f64) -> Result<Self> {
        let s = Scenario {
            name: name.into(),
            effects,
            sigma,
            rho,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn global_null(arms: usize, rho: f64) -> Result<Self> {
        Scenario::new("null", vec![0.0; arms], 1.0, rho)
    }

    /// The first `active` arms have effect `delta`, the rest none.
    pub fn active_arms(arms: usize, active: usize, delta: f64, rho: f64) -> Result<Self> {
        let effects = (0..arms).map(|a| if a < active { delta } else { 0.0 }).collect();
        Scenario::new(format!("S{active}"), effects, 1.0, rho)
    }

    pub fn validate(&self) -> Result<()> {
        if self.effects.is_empty() || self.effects.len() > 8 {
            return Err(SimError::Config(format!("need 1 to 8 arms, got {}", self.effects.len())));
        }
        if self.effects.iter().any(|d| !d.is_finite()) {
            return Err(SimError::Config("effects must be finite".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(SimError::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(SimError::Config(format!("rho must lie in [-1, 1], got {}", self.rho)));
        }
        Ok(())
    }

    pub fn arms(&self) -> usize {
        self.effects.len()
    }

    /// Hypotheses are the primaries of every arm followed by the secondaries.
    pub fn hypotheses(&self) -> usize {
        2 * self.arms()
    }

    pub fn effect(&self, h: usize) -> f64 {
        self.effects[h % self.arms()]
    }

    pub fn false_nulls(&self) -> IndexSet {
        (0..self.hypotheses()).filter(|&h| self.effect(h) > 0.0).collect()
    }

    pub fn true_nulls(&self) -> IndexSet {
        IndexSet::full(self.hypotheses()).difference(self.false_nulls())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DroppingRule {
    Conservative,
    #[serde(alias = "moderate")]
    Normal,
    Aggressive,
    UltraAggressive,
}

impl DroppingRule {
    pub const ALL: [DroppingRule; 4] = [
        DroppingRule::Conservative,
        DroppingRule::Normal,
        DroppingRule::Aggressive,
        DroppingRule::UltraAggressive,
    ];

    /// Arms with a primary p-value at or above this are dropped.
    pub fn threshold(self) -> Option<f64> {
        match self {
            DroppingRule::Conservative => Some(0.75),
            DroppingRule::Normal => Some(0.5),
            DroppingRule::Aggressive => Some(0.25),
            DroppingRule::UltraAggressive => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DroppingRule::Conservative => "conservative",
            DroppingRule::Normal => "normal",
            DroppingRule::Aggressive => "aggressive",
            DroppingRule::UltraAggressive => "ultra_aggressive",
        }
    }
}

/// What happens when the rule would drop every arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IfAllDropped {
    /// Keep the arm with the smallest primary p-value.
    #[default]
    RetainBest,
    /// End the trial; only stage-one rejections stand.
    Stop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSizes {
    pub treatment: Vec<usize>,
    pub control: usize,
}

impl GroupSizes {
    pub fn balanced(arms: usize, n: usize) -> Self {
        GroupSizes {
            treatment: vec![n; arms],
            control: n,
        }
    }
}

/// Arms continuing to stage two and their stage-two group sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub arms: Vec<usize>,
    /// Zero for dropped arms.
    pub sizes: GroupSizes,
}

impl Selection {
    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    /// Hypotheses of the kept arms that are still open.
    pub fn hypotheses(&self, arms: usize, remaining: IndexSet) -> IndexSet {
        self.arms
            .iter()
            .flat_map(|&a| [a, a + arms])
            .collect::<IndexSet>()
            .intersection(remaining)
    }
}

fn argmin(p: &[f64], among: &[usize]) -> Option<usize> {
    among.iter().copied().min_by(|&a, &b| p[a].total_cmp(&p[b]))
}

/// Applies `rule` to the stage-one primary p-values of the `available` arms
/// and reassigns the planned stage-two subjects of dropped arms evenly over
/// the groups that continue, control first for any remainder.
pub fn apply_dropping_rule(
    rule: DroppingRule,
    primary_p: &[f64],
    available: &[usize],
    planned: &GroupSizes,
    if_all_dropped: IfAllDropped,
) -> Selection {
    let mut kept: Vec<usize> = match rule.threshold() {
        Some(th) => available.iter().copied().filter(|&a| primary_p[a] < th).collect(),
        None => argmin(primary_p, available).into_iter().collect(),
    };
    if kept.is_empty() && if_all_dropped == IfAllDropped::RetainBest {
        kept.extend(argmin(primary_p, available));
    }
    kept.sort_unstable();
    let arms = planned.treatment.len();
    if kept.is_empty() {
        return Selection {
            arms: kept,
            sizes: GroupSizes {
                treatment: vec![0; arms],
                control: 0,
            },
        };
    }
    let freed: usize = (0..arms).filter(|a| !kept.contains(a)).map(|a| planned.treatment[a]).sum();
    let groups = kept.len() + 1;
    let (share, mut extra) = (freed / groups, freed % groups);
    let mut bump = || {
        let b = usize::from(extra > 0);
        extra -= b;
        b
    };
    let control = planned.control + share + bump();
    let mut treatment = vec![0; arms];
    for &a in &kept {
        treatment[a] = planned.treatment[a] + share + bump();
    }
    Selection {
        arms: kept,
        sizes: GroupSizes { treatment, control },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [usize; 4] = [0, 1, 2, 3];

    #[test]
    fn normal_rule_drops_large_p() {
        let s = apply_dropping_rule(
            DroppingRule::Normal,
            &[0.1, 0.6, 0.2, 0.7],
            &ALL,
            &GroupSizes::balanced(4, 50),
            IfAllDropped::RetainBest,
        );
        assert_eq!(s.arms, vec![0, 2]);
        // 100 freed subjects over three groups.
        assert_eq!(s.sizes.control, 84);
        assert_eq!(s.sizes.treatment, vec![83, 0, 83, 0]);
        let remaining = IndexSet::full(8);
        assert_eq!(s.hypotheses(4, remaining), IndexSet::from_indices([0, 2, 4, 6]));
    }

    #[test]
    fn ultra_aggressive_keeps_smallest() {
        let s = apply_dropping_rule(
            DroppingRule::UltraAggressive,
            &[0.3, 0.1, 0.2, 0.4],
            &ALL,
            &GroupSizes::balanced(4, 50),
            IfAllDropped::RetainBest,
        );
        assert_eq!(s.arms, vec![1]);
        assert_eq!(s.sizes.control, 125);
        assert_eq!(s.sizes.treatment, vec![0, 125, 0, 0]);
    }

    #[test]
    fn conservative_keeps_everything() {
        let planned = GroupSizes::balanced(4, 50);
        let s = apply_dropping_rule(DroppingRule::Conservative, &[0.7, 0.1, 0.5, 0.74], &ALL, &planned, IfAllDropped::RetainBest);
        assert_eq!(s.arms, ALL.to_vec());
        assert_eq!(s.sizes, planned);
    }

    #[test]
    fn remainder_goes_to_control() {
        // Two arms of 35, one dropped: 35 freed over two groups.
        let s = apply_dropping_rule(
            DroppingRule::Aggressive,
            &[0.9, 0.1],
            &[0, 1],
            &GroupSizes::balanced(2, 35),
            IfAllDropped::RetainBest,
        );
        assert_eq!(s.sizes.control, 53);
        assert_eq!(s.sizes.treatment, vec![0, 52]);
    }

    #[test]
    fn all_dropped_policies() {
        let planned = GroupSizes::balanced(3, 50);
        let p = [0.9, 0.8, 0.95];
        let s = apply_dropping_rule(DroppingRule::Conservative, &p, &[0, 1, 2], &planned, IfAllDropped::RetainBest);
        assert_eq!(s.arms, vec![1]);
        let s = apply_dropping_rule(DroppingRule::Conservative, &p, &[0, 1, 2], &planned, IfAllDropped::Stop);
        assert!(s.is_empty());
    }

    #[test]
    fn unavailable_arms_are_never_kept() {
        let s = apply_dropping_rule(
            DroppingRule::Conservative,
            &[0.001, 0.2, 0.3, 0.4],
            &[1, 2, 3],
            &GroupSizes::balanced(4, 50),
            IfAllDropped::RetainBest,
        );
        assert_eq!(s.arms, vec![1, 2, 3]);
        assert_eq!(s.sizes.treatment, vec![0, 63, 62, 62]);
        assert_eq!(s.sizes.control, 63);
    }

    #[test]
    fn scenario_nulls() {
        let s = Scenario::active_arms(4, 2, 0.4, 0.5).unwrap();
        assert_eq!(s.false_nulls(), IndexSet::from_indices([0, 1, 4, 5]));
        assert_eq!(s.true_nulls(), IndexSet::from_indices([2, 3, 6, 7]));
        assert!(Scenario::new("x", vec![0.0], 1.0, 1.5).is_err());
        assert!(Scenario::new("x", vec![0.0], 0.0, 0.5).is_err());
    }
}
