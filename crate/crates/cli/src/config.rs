//! TOML inputs: design, adaptation and simulation configs.

use crate::error::{CliError, Context, Result};
use gmcp_core::adaptation::{adapted_information_fraction, Adaptation};
use gmcp_core::combo::ComboDesign;
use gmcp_core::design::Design;
use gmcp_core::spending::SpendingFunction;
use gmcp_core::stagewise::{CorrelationKnowledge, KnowledgeSpec};
use gmcp_core::{GraphSpec, IndexSet, WeightingGraph};
use gmcp_sim::{DroppingRule, IfAllDropped, Method, Scenario, SimulationConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| CliError::Parse {
        path: path.into(),
        message: e.to_string(),
    })
}

fn checked_graph(spec: &GraphSpec, what: &str) -> Result<WeightingGraph> {
    let g = WeightingGraph::try_from(spec.clone()).context(what)?;
    let report = g.validate();
    if !report.is_valid() {
        let v: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
        return Err(CliError::Invalid(format!("{what}: {}", v.join("; "))));
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialMethod {
    Cer,
    Combo,
}

impl TrialMethod {
    pub fn label(self) -> &'static str {
        match self {
            TrialMethod::Cer => "CER",
            TrialMethod::Combo => "Combo",
        }
    }
}

/// Everything fixed before the trial starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub method: TrialMethod,
    pub alpha: f64,
    /// Planned information fraction at the interim look.
    pub information_fraction: f64,
    #[serde(default)]
    pub spending: SpendingFunction,
    /// Inverse normal weights `(ν1, ν2)`; `(√t, √(1−t))` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combination_weights: Option<[f64; 2]>,
    pub graph: GraphSpec,
    #[serde(default)]
    pub knowledge: KnowledgeSpec,
}

impl DesignConfig {
    /// The initial graph, rejected with every violated constraint listed.
    pub fn graph(&self) -> Result<WeightingGraph> {
        checked_graph(&self.graph, "graph")
    }

    pub fn knowledge(&self, k: usize) -> Result<CorrelationKnowledge> {
        CorrelationKnowledge::from_spec(k, &self.knowledge).context("knowledge")
    }

    pub fn build(&self) -> Result<Design> {
        let graph = self.graph()?;
        let knowledge = self.knowledge(graph.k())?;
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(CliError::Invalid(format!("alpha must lie in (0, 0.5), got {}", self.alpha)));
        }
        if !(self.information_fraction > 0.0 && self.information_fraction < 1.0) {
            return Err(CliError::Invalid(format!(
                "information_fraction must lie in (0, 1), got {}",
                self.information_fraction
            )));
        }
        Design::new(graph, knowledge, self.alpha, self.information_fraction, self.spending).context("design")
    }

    pub fn combo(&self, design: Design) -> Result<ComboDesign> {
        match self.combination_weights {
            Some([a, b]) => ComboDesign::with_weights(design, a, b).context("combination_weights"),
            None => ComboDesign::new(design).context("combination levels"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSizes {
    /// Per-group sizes `[treatment, control]` of stage one.
    pub stage_one: [f64; 2],
    pub stage_two: [f64; 2],
}

/// Design changes chosen at the interim analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationConfig {
    /// Hypotheses carried into stage two (1-based).
    pub selected: IndexSet,
    /// Revised graph; the planned graph when absent.
    #[serde(default)]
    pub graph: Option<GraphSpec>,
    /// One adapted information fraction per hypothesis.
    #[serde(default)]
    pub information_fractions: Option<Vec<f64>>,
    /// Common adapted information fraction of the selected hypotheses.
    #[serde(default)]
    pub information_fraction: Option<f64>,
    /// Realised sizes from which the common fraction is derived.
    #[serde(default)]
    pub sample_sizes: Option<SampleSizes>,
    /// Stage-two increment correlations; the planned ones when absent.
    #[serde(default)]
    pub increments: Option<KnowledgeSpec>,
}

impl AdaptationConfig {
    pub fn fractions(&self, design: &Design) -> Result<Vec<f64>> {
        let k = design.k();
        let given = [
            self.information_fractions.is_some(),
            self.information_fraction.is_some(),
            self.sample_sizes.is_some(),
        ];
        if given.iter().filter(|&&g| g).count() > 1 {
            return Err(CliError::Invalid(
                "give at most one of information_fractions, information_fraction and sample_sizes".into(),
            ));
        }
        if let Some(t) = &self.information_fractions {
            if t.len() != k {
                return Err(CliError::Invalid(format!(
                    "information_fractions has {} entries for {k} hypotheses",
                    t.len()
                )));
            }
            return Ok(t.clone());
        }
        let common = match (self.information_fraction, self.sample_sizes) {
            (Some(t), _) => t,
            (None, Some(s)) => adapted_information_fraction(
                (s.stage_one[0], s.stage_one[1]),
                (s.stage_two[0], s.stage_two[1]),
            )
            .context("sample_sizes")?,
            (None, None) => design.t,
        };
        Ok((0..k)
            .map(|j| if self.selected.contains(j) { common } else { design.t })
            .collect())
    }

    pub fn build(&self, design: &Design) -> Result<Adaptation> {
        let graph = match &self.graph {
            Some(g) => checked_graph(g, "adaptation graph")?,
            None => design.graph.clone(),
        };
        let increments = match &self.increments {
            Some(spec) => CorrelationKnowledge::from_spec(design.k(), spec).context("increments")?,
            None => design.knowledge.clone(),
        };
        Adaptation::new(self.selected, graph, self.fractions(design)?, increments).context("adaptation")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableKind {
    Fwer,
    Power,
}

/// Effects of the treatment arms: either the first `active` arms at `delta`
/// or explicit per-hypothesis effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub active: Option<usize>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub effects: Option<Vec<f64>>,
    #[serde(default)]
    pub sigma: Option<f64>,
}

impl ScenarioSpec {
    fn build(&self, arms: usize, rho: f64) -> Result<Scenario> {
        let mut s = match (&self.effects, self.active) {
            (Some(e), None) => Scenario::new("custom", e.clone(), self.sigma.unwrap_or(1.0), rho)?,
            (None, Some(0)) => Scenario::global_null(arms, rho)?,
            (None, Some(n)) => Scenario::active_arms(arms, n, self.delta.unwrap_or(0.4), rho)?,
            _ => return Err(CliError::Invalid("scenario needs exactly one of active and effects".into())),
        };
        if self.effects.is_none() {
            if let Some(sigma) = self.sigma {
                s.sigma = sigma;
            }
        }
        if let Some(n) = &self.name {
            s.name = n.clone();
        }
        Ok(s)
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

/// A batch of simulation runs over dropping rules and endpoint correlations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationFile {
    pub table: TableKind,
    pub method: Method,
    pub scenario: ScenarioSpec,
    pub rules: Vec<DroppingRule>,
    pub correlations: Vec<f64>,
    #[serde(default = "default_arms")]
    pub arms: usize,
    #[serde(default = "default_n")]
    pub n_per_arm: usize,
    #[serde(default = "default_fraction")]
    pub interim_fraction: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub if_all_dropped: IfAllDropped,
    #[serde(default)]
    pub combo_replicates: usize,
    #[serde(default)]
    pub cer_stage_one: usize,
    #[serde(default)]
    pub cer_stage_two: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
}

impl SimulationFile {
    /// One config per (correlation, rule), each validated. Seeds differ
    /// between runs so that cells are independent.
    pub fn runs(&self) -> Result<Vec<SimulationConfig>> {
        if self.rules.is_empty() || self.correlations.is_empty() {
            return Err(CliError::Invalid("rules and correlations must not be empty".into()));
        }
        let mut out = Vec::new();
        for (i, &rho) in self.correlations.iter().enumerate() {
            for (r, &rule) in self.rules.iter().enumerate() {
                let cell = (i * self.rules.len() + r) as u64;
                let config = SimulationConfig {
                    arms: self.arms,
                    n_per_arm: self.n_per_arm,
                    interim_fraction: self.interim_fraction,
                    alpha: self.alpha,
                    method: self.method,
                    scenario: self.scenario.build(self.arms, rho)?,
                    rule,
                    if_all_dropped: self.if_all_dropped,
                    combo_replicates: self.combo_replicates,
                    cer_stage_one: self.cer_stage_one,
                    cer_stage_two: self.cer_stage_two,
                    seed: self.seed.wrapping_add(cell.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
                    threads: self.threads,
                };
                config.validate()?;
                out.push(config);
            }
        }
        Ok(out)
    }
}
