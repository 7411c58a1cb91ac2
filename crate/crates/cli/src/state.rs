//! Versioned trial state persisted between the steps of an analysis.
//!
//! Each record downstream of the design carries the design hash and the hash
//! of the record before it, so edits to any earlier part are detected on
//! load. Numbers are written in shortest round-trip form and read back
//! bit-for-bit.

use crate::config::{AdaptationConfig, DesignConfig};
use crate::error::{CliError, Result};
use gmcp_core::stagewise::TestKind;
use gmcp_core::IndexSet;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Planned,
    Interim,
    Adapted,
    Final,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Planned => "planned",
            Stage::Interim => "interim",
            Stage::Adapted => "adapted",
            Stage::Final => "final",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    /// 1-based.
    pub hypothesis: usize,
    pub stage_one: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_two: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub set: IndexSet,
    pub kind: TestKind,
    pub weights: Vec<f64>,
    /// `c_{J,1}` (CER) or `α_{J,1}` (Combo).
    pub level_one: f64,
    pub level_two: f64,
    /// Per-hypothesis nominal levels; CER only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub thresholds: Vec<Threshold>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub design_hash: String,
    pub alpha1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combination_weights: Option<[f64; 2]>,
    pub sets: Vec<PlanRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterimRow {
    pub set: IndexSet,
    /// Stage-one adjusted p-value; Combo only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjusted_p: Option<f64>,
    /// Conditional error `B_J`; CER sets not rejected at stage one only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditional_error: Option<f64>,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterimRecord {
    pub design_hash: String,
    pub plan_hash: String,
    pub p1: Vec<f64>,
    pub early_rejected: IndexSet,
    pub remaining: IndexSet,
    pub sets: Vec<InterimRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptedRow {
    pub set: IndexSet,
    /// `A`, `B` or `C`.
    pub class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part: Option<IndexSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<TestKind>,
    /// Adapted boundary `c̃_{J,2}`; CER only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub thresholds: Vec<Threshold>,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationRecord {
    pub design_hash: String,
    pub interim_hash: String,
    pub config: AdaptationConfig,
    pub information_fractions: Vec<f64>,
    pub sets: Vec<AdaptedRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRow {
    pub set: IndexSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_one_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_two_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combined_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditional_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<f64>,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub design_hash: String,
    /// Hash of the adaptation record, or of the interim record when the
    /// trial continued unchanged.
    pub upstream_hash: String,
    /// Incremental stage-two p-values; `None` for hypotheses not continued.
    pub p2: Vec<Option<f64>>,
    /// Cumulative p-values at the adapted information fractions; CER only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cumulative_p: Option<Vec<Option<f64>>>,
    pub rejected_stage_one: IndexSet,
    pub rejected: IndexSet,
    pub sets: Vec<FinalRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialState {
    pub schema_version: u32,
    pub stage: Stage,
    pub design_hash: String,
    pub design: DesignConfig,
    pub plan: PlanRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interim: Option<InterimRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adaptation: Option<AdaptationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decisions: Option<FinalRecord>,
    /// Hash over every field above; catches edits to the latest record.
    pub checksum: String,
}

/// Hex SHA-256 of the JSON form of `value`.
pub fn digest<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("state records serialize");
    hex::encode(Sha256::digest(&bytes))
}

fn mismatch(what: &str) -> CliError {
    CliError::Integrity(format!("{what} does not match the records it was derived from"))
}

impl TrialState {
    pub fn new(design: DesignConfig, plan: PlanRecord) -> Self {
        let mut s = TrialState {
            schema_version: SCHEMA_VERSION,
            stage: Stage::Planned,
            design_hash: digest(&design),
            design,
            plan,
            interim: None,
            adaptation: None,
            decisions: None,
            checksum: String::new(),
        };
        s.seal();
        s
    }

    fn content_hash(&self) -> String {
        digest(&(
            self.schema_version,
            self.stage,
            &self.design_hash,
            &self.design,
            &self.plan,
            &self.interim,
            &self.adaptation,
            &self.decisions,
        ))
    }

    /// Recomputes the checksum after a change.
    pub fn seal(&mut self) {
        self.checksum = self.content_hash();
    }

    /// Fails unless the state is at one of `allowed`.
    pub fn require(&self, command: &str, allowed: &[Stage]) -> Result<()> {
        if allowed.contains(&self.stage) {
            Ok(())
        } else {
            let names: Vec<&str> = allowed.iter().map(|s| s.name()).collect();
            Err(CliError::Lifecycle(format!(
                "`{command}` needs a state that is {}, this one is {}",
                names.join(" or "),
                self.stage.name()
            )))
        }
    }

    /// Checks the version, hashes and that the records present fit the stage.
    pub fn verify(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Integrity(format!(
                "schema version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.checksum != self.content_hash() {
            return Err(CliError::Integrity("checksum does not match the file contents".into()));
        }
        let design = digest(&self.design);
        if self.design_hash != design {
            return Err(mismatch("design hash"));
        }
        if self.plan.design_hash != design {
            return Err(mismatch("plan"));
        }
        let present = [
            self.interim.is_some(),
            self.adaptation.is_some(),
            self.decisions.is_some(),
        ];
        let expected = match self.stage {
            Stage::Planned => [false, false, false],
            Stage::Interim => [true, false, false],
            Stage::Adapted => [true, true, false],
            // The adaptation step may be skipped.
            Stage::Final => [true, present[1], true],
        };
        if present != expected {
            return Err(CliError::Integrity(format!(
                "records present do not match the {} stage",
                self.stage.name()
            )));
        }
        if let Some(i) = &self.interim {
            if i.design_hash != design || i.plan_hash != digest(&self.plan) {
                return Err(mismatch("interim record"));
            }
        }
        if let (Some(a), Some(i)) = (&self.adaptation, &self.interim) {
            if a.design_hash != design || a.interim_hash != digest(i) {
                return Err(mismatch("adaptation record"));
            }
        }
        if let Some(f) = &self.decisions {
            let upstream = match (&self.adaptation, &self.interim) {
                (Some(a), _) => digest(a),
                (None, Some(i)) => digest(i),
                (None, None) => unreachable!("checked above"),
            };
            if f.design_hash != design || f.upstream_hash != upstream {
                return Err(mismatch("final record"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("state serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.into(),
            source,
        })?;
        let state = Self::from_json(&text).map_err(|e| CliError::Parse {
            path: path.into(),
            message: e.to_string(),
        })?;
        state.verify()?;
        Ok(state)
    }

    /// Writes through a temporary file so a failed write leaves the old
    /// state intact.
    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |source| CliError::Io {
            path: path.into(),
            source,
        };
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        std::fs::write(&tmp, self.to_json()).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }
}
