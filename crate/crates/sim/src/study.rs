//! Two-stage trial replicates under both methods and their aggregation.

use crate::data::simulate_stage_data;
use crate::error::{Result, SimError};
use crate::report::{Estimate, PowerReport};
use crate::scenario::{apply_dropping_rule, DroppingRule, GroupSizes, IfAllDropped, Scenario, Selection};
use gmcp_core::adaptation::{adapted_information_fraction, Adaptation};
use gmcp_core::cer::{adapted_cumulative_p, CerConditional, ClosurePlan};
use gmcp_core::closed_test::elementary_rejections;
use gmcp_core::combo::{ComboDesign, LazyCombo};
use gmcp_core::design::Design;
use gmcp_core::numerics::{many_to_one_correlation, CorrelationMatrix};
use gmcp_core::spending::SpendingFunction;
use gmcp_core::stagewise::{CorrelationKnowledge, KnowledgeBlock, StageLabel, StageMarginals};
use gmcp_core::{ClosureWeights, IndexSet, WeightingGraph};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cer,
    Combo,
    Both,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Cer => "CER",
            Method::Combo => "Combo",
            Method::Both => "both",
        }
    }
}

fn default_arms() -> usize {
    4
}
fn default_n() -> usize {
    100
}
fn default_fraction() -> f64 {
    0.5
}
fn default_alpha() -> f64 {
    0.025
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    #[serde(default = "default_arms")]
    pub arms: usize,
    /// Planned subjects per group over both stages.
    #[serde(default = "default_n")]
    pub n_per_arm: usize,
    #[serde(default = "default_fraction")]
    pub interim_fraction: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub method: Method,
    pub scenario: Scenario,
    pub rule: DroppingRule,
    #[serde(default)]
    pub if_all_dropped: IfAllDropped,
    /// Whole trials simulated for the combination method.
    pub combo_replicates: usize,
    /// Stage-one draws for the conditional error method.
    pub cer_stage_one: usize,
    /// Stage-two draws per stage-one draw.
    pub cer_stage_two: usize,
    pub seed: u64,
    /// Worker threads; the global pool when absent.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.scenario.arms() != self.arms {
            return Err(SimError::Config(format!(
                "scenario has {} arms, config has {}",
                self.scenario.arms(),
                self.arms
            )));
        }
        if !(self.interim_fraction > 0.0 && self.interim_fraction < 1.0) {
            return Err(SimError::Config(format!(
                "interim_fraction must lie in (0, 1), got {}",
                self.interim_fraction
            )));
        }
        let n1 = stage_one_size(self.n_per_arm, self.interim_fraction);
        if n1 < 2 || n1 >= self.n_per_arm {
            return Err(SimError::Config(format!(
                "n_per_arm = {} leaves no room for two stages at fraction {}",
                self.n_per_arm, self.interim_fraction
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(SimError::Config(format!("alpha must lie in (0, 0.5), got {}", self.alpha)));
        }
        let cer = matches!(self.method, Method::Cer | Method::Both);
        let combo = matches!(self.method, Method::Combo | Method::Both);
        if combo && self.combo_replicates == 0 {
            return Err(SimError::Config("combo_replicates must be positive".into()));
        }
        if cer && (self.cer_stage_one == 0 || self.cer_stage_two == 0) {
            return Err(SimError::Config("cer_stage_one and cer_stage_two must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(SimError::Config("threads must be positive".into()));
        }
        Ok(())
    }
}

fn stage_one_size(n: usize, t: f64) -> usize {
    (n as f64 * t).round() as usize
}

/// Graph of the multi-arm two-endpoint study: primaries share all weight,
/// a rejected primary passes 3/4 to its secondary and the rest evenly to the
/// other primaries; a rejected secondary passes evenly to the other
/// primaries.
pub fn study_graph(arms: usize) -> Result<WeightingGraph> {
    let k = 2 * arms;
    let others = arms.saturating_sub(1) as f64;
    let mut weights = vec![0.0; k];
    let mut rows = vec![vec![0.0; k]; k];
    for a in 0..arms {
        weights[a] = 1.0 / arms as f64;
        if arms == 1 {
            rows[a][a + arms] = 1.0;
            continue;
        }
        rows[a][a + arms] = 0.75;
        for b in (0..arms).filter(|&b| b != a) {
            rows[a][b] = 0.25 / others;
            rows[a + arms][b] = 1.0 / others;
        }
    }
    Ok(WeightingGraph::new(weights, rows)?)
}

/// Dunnett-type correlation among the primaries and among the secondaries;
/// across endpoints nothing is assumed known.
pub fn endpoint_knowledge(sizes: &GroupSizes) -> Result<CorrelationKnowledge> {
    let arms = sizes.treatment.len();
    let treat: Vec<f64> = sizes.treatment.iter().map(|&n| n.max(1) as f64).collect();
    let corr = if arms == 1 {
        CorrelationMatrix::identity(1)
    } else {
        many_to_one_correlation(&treat, sizes.control.max(1) as f64)?
    };
    let blocks = (0..2)
        .map(|e| KnowledgeBlock {
            members: (e * arms..(e + 1) * arms).collect(),
            corr: corr.clone(),
        })
        .collect();
    Ok(CorrelationKnowledge::new(2 * arms, blocks)?)
}

/// Planned design shared by every replicate of a study.
pub struct StudyDesign {
    pub arms: usize,
    pub n_per_arm: usize,
    pub stage_one: usize,
    pub plan: ClosurePlan,
    pub combo: ComboDesign,
    closure: Arc<ClosureWeights>,
}

impl StudyDesign {
    pub fn new(arms: usize, n_per_arm: usize, interim_fraction: f64, alpha: f64) -> Result<Self> {
        let n1 = stage_one_size(n_per_arm, interim_fraction);
        if n1 < 2 || n1 >= n_per_arm {
            return Err(SimError::Config(format!("cannot split {n_per_arm} subjects at {interim_fraction}")));
        }
        let design = Design::new(
            study_graph(arms)?,
            endpoint_knowledge(&GroupSizes::balanced(arms, n1))?,
            alpha,
            n1 as f64 / n_per_arm as f64,
            SpendingFunction::Ldof,
        )?;
        let closure = design.shared_closure();
        Ok(StudyDesign {
            arms,
            n_per_arm,
            stage_one: n1,
            plan: ClosurePlan::new(design.clone())?,
            combo: ComboDesign::new(design)?,
            closure,
        })
    }

    pub fn for_config(config: &SimulationConfig) -> Result<Self> {
        config.validate()?;
        StudyDesign::new(config.arms, config.n_per_arm, config.interim_fraction, config.alpha)
    }

    fn design(&self) -> &Design {
        &self.plan.design
    }

    fn matches(&self, config: &SimulationConfig) -> bool {
        let d = self.design();
        self.arms == config.arms
            && self.n_per_arm == config.n_per_arm
            && self.stage_one == stage_one_size(config.n_per_arm, config.interim_fraction)
            && d.alpha == config.alpha
    }

    fn stage_one_sizes(&self) -> GroupSizes {
        GroupSizes::balanced(self.arms, self.stage_one)
    }

    fn planned_stage_two(&self) -> GroupSizes {
        GroupSizes::balanced(self.arms, self.n_per_arm - self.stage_one)
    }

    /// Arms with an open hypothesis, then the dropping rule.
    fn select(&self, config: &SimulationConfig, p1: &[f64], remaining: IndexSet) -> (Selection, IndexSet) {
        let m = self.arms;
        let available: Vec<usize> = (0..m)
            .filter(|&a| remaining.contains(a) || remaining.contains(a + m))
            .collect();
        if available.is_empty() {
            let sel = Selection {
                arms: Vec::new(),
                sizes: GroupSizes::balanced(m, 0),
            };
            return (sel, IndexSet::EMPTY);
        }
        let sel = apply_dropping_rule(config.rule, &p1[..m], &available, &self.planned_stage_two(), config.if_all_dropped);
        let hyps = sel.hypotheses(m, remaining);
        (sel, hyps)
    }

    /// Adaptation after selection: the planned graph, the realised
    /// information fractions and the stage-two correlations.
    fn adaptation(&self, sel: &Selection, selected: IndexSet) -> Result<Adaptation> {
        let m = self.arms;
        let n1 = self.stage_one as f64;
        let mut info = vec![self.design().t; 2 * m];
        for &a in &sel.arms {
            let t = adapted_information_fraction((n1, n1), (sel.sizes.treatment[a] as f64, sel.sizes.control as f64))?;
            info[a] = t;
            info[a + m] = t;
        }
        Ok(Adaptation::with_closure(
            selected,
            self.design().graph.clone(),
            self.closure.clone(),
            info,
            endpoint_knowledge(&sel.sizes)?,
        )?)
    }

    fn stage_one(&self, config: &SimulationConfig, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, StageMarginals)> {
        let p1: Vec<f64> = simulate_stage_data(&config.scenario, &self.stage_one_sizes(), rng)
            .into_iter()
            .map(|p| p.expect("every arm has stage-one data"))
            .collect();
        let marg = StageMarginals::complete(StageLabel::First, &p1)?;
        Ok((p1, marg))
    }

    /// One whole trial under the combination method.
    pub fn combo_trial(&self, config: &SimulationConfig, rng: &mut ChaCha8Rng) -> Result<IndexSet> {
        let (p1, marg) = self.stage_one(config, rng)?;
        let mut lazy = LazyCombo::new(&self.combo, &marg);
        let early = lazy.early_rejected()?;
        let (sel, selected) = self.select(config, &p1, self.design().all().difference(early));
        if selected.is_empty() {
            return Ok(early);
        }
        let a = self.adaptation(&sel, selected)?;
        let p2 = StageMarginals::new(
            StageLabel::SecondIncremental,
            mask(simulate_stage_data(&config.scenario, &sel.sizes, rng), selected),
        )?;
        Ok(lazy.final_rejections(early, &a, &p2)?)
    }

    /// One stage-one draw under the conditional error method followed by
    /// `config.cer_stage_two` independent stage-two continuations.
    pub fn cer_cluster(&self, config: &SimulationConfig, rng: &mut ChaCha8Rng) -> Result<Vec<IndexSet>> {
        let (p1, marg) = self.stage_one(config, rng)?;
        let plan = &self.plan;
        let all = self.design().all();
        let mut stage_one = vec![None; 1 << all.len()];
        let mut rejects_one = |s: IndexSet| -> gmcp_core::Result<bool> {
            let slot = &mut stage_one[s.bits() as usize];
            if slot.is_none() {
                *slot = Some(plan.get(s).rejects_stage_one(&marg)?);
            }
            Ok(slot.unwrap())
        };
        let mut err = None;
        let early = elementary_rejections(all, |s| {
            rejects_one(s).unwrap_or_else(|e| {
                err = Some(e);
                false
            })
        });
        if let Some(e) = err {
            return Err(e.into());
        }
        let (sel, selected) = self.select(config, &p1, all.difference(early));
        let reps = config.cer_stage_two;
        if selected.is_empty() {
            return Ok(vec![early; reps]);
        }
        let a = self.adaptation(&sel, selected)?;
        let mut lazy = CerConditional::new(plan, &a, &marg, early)?;
        let mut out = Vec::with_capacity(reps);
        for _ in 0..reps {
            let inc = simulate_stage_data(&config.scenario, &sel.sizes, rng);
            let cum: Vec<Option<f64>> = (0..all.len())
                .map(|j| {
                    if selected.contains(j) {
                        inc[j].map(|q| adapted_cumulative_p(p1[j], q, a.info_fractions[j]))
                    } else {
                        None
                    }
                })
                .collect();
            let p2 = StageMarginals::new(StageLabel::SecondCumulative, cum)?;
            out.push(early.union(lazy.final_rejections(&p2, &mut rejects_one)?));
        }
        Ok(out)
    }
}

fn mask(p: Vec<Option<f64>>, keep: IndexSet) -> Vec<Option<f64>> {
    p.into_iter()
        .enumerate()
        .map(|(j, q)| if keep.contains(j) { q } else { None })
        .collect()
}

/// Counter-based stream: replicate `i` always sees the same draws.
fn replicate_rng(seed: u64, i: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i);
    rng
}

/// Outcome counts of one stage-one cluster.
#[derive(Debug, Clone, Default)]
struct Tally {
    disjunctive: u64,
    conjunctive: u64,
    fwer: u64,
    per_hypothesis: Vec<u64>,
}

impl Tally {
    fn of(outcomes: &[IndexSet], scenario: &Scenario) -> Tally {
        let (fals, tru) = (scenario.false_nulls(), scenario.true_nulls());
        let mut t = Tally {
            per_hypothesis: vec![0; scenario.hypotheses()],
            ..Default::default()
        };
        for r in outcomes {
            t.disjunctive += u64::from(!r.intersection(fals).is_empty());
            t.conjunctive += u64::from(!fals.is_empty() && fals.is_subset(*r));
            t.fwer += u64::from(!r.intersection(tru).is_empty());
            for j in *r {
                t.per_hypothesis[j] += 1;
            }
        }
        t
    }
}

/// Mean over all outcomes with a standard error from the variation of the
/// cluster means (clusters of equal size).
fn clustered(counts: impl Iterator<Item = u64> + Clone, clusters: usize, per_cluster: u64) -> Estimate {
    let total = (clusters as u64 * per_cluster) as f64;
    let mean = counts.clone().sum::<u64>() as f64 / total;
    let r = per_cluster as f64;
    let se = if clusters > 1 {
        let ss: f64 = counts.map(|c| (c as f64 / r - mean).powi(2)).sum();
        (ss / (clusters - 1) as f64 / clusters as f64).sqrt()
    } else {
        0.0
    };
    Estimate { value: mean, se }
}

fn aggregate(tallies: &[Tally], config: &SimulationConfig, method: Method, per_cluster: u64) -> PowerReport {
    let s = &config.scenario;
    let c = tallies.len();
    let est = |f: &dyn Fn(&Tally) -> u64| clustered(tallies.iter().map(f), c, per_cluster);
    PowerReport {
        method,
        scenario: s.name.clone(),
        rule: config.rule,
        rho: s.rho,
        stage_one_draws: c,
        stage_two_draws: per_cluster as usize,
        disjunctive: (!s.false_nulls().is_empty()).then(|| est(&|t| t.disjunctive)),
        conjunctive: (!s.false_nulls().is_empty()).then(|| est(&|t| t.conjunctive)),
        fwer: (!s.true_nulls().is_empty()).then(|| est(&|t| t.fwer)),
        per_hypothesis: (0..s.hypotheses()).map(|j| est(&|t| t.per_hypothesis[j])).collect(),
    }
}

fn run_method(study: &StudyDesign, config: &SimulationConfig, method: Method) -> Result<PowerReport> {
    let (clusters, per) = match method {
        Method::Combo => (config.combo_replicates, 1),
        _ => (config.cer_stage_one, config.cer_stage_two),
    };
    // Streams of the two methods never overlap.
    let offset = if method == Method::Combo { 1u64 << 62 } else { 0 };
    let tallies: Vec<Tally> = (0..clusters as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(config.seed, offset + i);
            let outcomes = match method {
                Method::Combo => vec![study.combo_trial(config, &mut rng)?],
                _ => study.cer_cluster(config, &mut rng)?,
            };
            Ok(Tally::of(&outcomes, &config.scenario))
        })
        .collect::<Result<_>>()?;
    Ok(aggregate(&tallies, config, method, per as u64))
}

/// Runs the configured methods on an already prepared design.
pub fn run_study_with(study: &StudyDesign, config: &SimulationConfig) -> Result<Vec<PowerReport>> {
    config.validate()?;
    if !study.matches(config) {
        return Err(SimError::Config("prepared design does not match the config".into()));
    }
    let methods: &[Method] = match config.method {
        Method::Both => &[Method::Cer, Method::Combo],
        Method::Cer => &[Method::Cer],
        Method::Combo => &[Method::Combo],
    };
    let go = || methods.iter().map(|&m| run_method(study, config, m)).collect();
    match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(go),
        None => go(),
    }
}

pub fn run_study(config: &SimulationConfig) -> Result<Vec<PowerReport>> {
    let study = StudyDesign::for_config(config)?;
    run_study_with(&study, config)
}
