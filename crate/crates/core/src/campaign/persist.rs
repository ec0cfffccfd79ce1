//! Versioned JSON document and CSV export.

use serde::{Deserialize, Serialize};

use super::{Best, CampaignConfig, CampaignState, IterationRecord, PolicyChange, PromptRecord, Status};
use crate::error::{Error, Result};
use crate::gp::Dataset;
use crate::kernel::{Fidelity, FidelityPoint};

pub const SCHEMA_VERSION: u32 = 1;

/// On-disk form of a campaign. Observations are rows of `[x..., f, y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignDocument {
    pub schema_version: u32,
    pub seed: u64,
    pub config: CampaignConfig,
    pub initial_config: CampaignConfig,
    pub observations: Vec<Vec<f64>>,
    pub iteration: usize,
    pub best: Best,
    pub history: Vec<IterationRecord>,
    pub policy_log: Vec<PolicyChange>,
    pub prompts: Vec<PromptRecord>,
    pub status: Status,
    pub force_final_high: bool,
    pub diagnostic: Option<String>,
}

impl CampaignDocument {
    pub fn from_state(state: &CampaignState) -> Self {
        let observations = state
            .dataset
            .points
            .iter()
            .zip(&state.dataset.outputs)
            .map(|(p, &y)| {
                let mut row = p.x.clone();
                row.push(p.f.as_f64());
                row.push(y);
                row
            })
            .collect();
        CampaignDocument {
            schema_version: SCHEMA_VERSION,
            seed: state.config.rng_seed,
            config: state.config.clone(),
            initial_config: state.initial_config.clone(),
            observations,
            iteration: state.iteration,
            best: state.best.clone(),
            history: state.history.clone(),
            policy_log: state.policy_log.clone(),
            prompts: state.prompts.clone(),
            status: state.status,
            force_final_high: state.force_final_high,
            diagnostic: state.diagnostic.clone(),
        }
    }

    pub fn into_state(self) -> Result<CampaignState> {
        let d = self.config.dim();
        let mut dataset = Dataset::default();
        for (i, row) in self.observations.iter().enumerate() {
            if row.len() != d + 2 {
                return Err(Error::Dataset(format!("observation row {i} has {} entries, expected {}", row.len(), d + 2)));
            }
            let f = match row[d] {
                v if v == 0.0 => Fidelity::Low,
                v if v == 1.0 => Fidelity::High,
                v => return Err(Error::Dataset(format!("observation row {i} has fidelity {v}"))),
            };
            dataset.push(FidelityPoint::new(row[..d].to_vec(), f), row[d + 1]);
        }
        dataset.validate()?;
        Ok(CampaignState {
            config: self.config,
            initial_config: self.initial_config,
            dataset,
            iteration: self.iteration,
            best: self.best,
            history: self.history,
            policy_log: self.policy_log,
            prompts: self.prompts,
            status: self.status,
            force_final_high: self.force_final_high,
            diagnostic: self.diagnostic,
        })
    }

    /// Parses a document, checking the schema version before anything else.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Dataset("document has no schema_version".into()))?;
        if found != u64::from(SCHEMA_VERSION) {
            return Err(Error::SchemaVersion { found: found.min(u64::from(u32::MAX)) as u32, supported: SCHEMA_VERSION });
        }
        Ok(serde_json::from_value(value)?)
    }
}

impl CampaignState {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&CampaignDocument::from_state(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        CampaignDocument::from_json(text)?.into_state()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, self.to_json()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Observations as CSV with columns `x0..x{d-1}, f, y`.
pub fn observations_csv(state: &CampaignState) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let d = state.config.dim();
    let mut header: Vec<String> = (0..d).map(|m| format!("x{m}")).collect();
    header.push("f".into());
    header.push("y".into());
    w.write_record(&header)?;
    for (p, y) in state.dataset.points.iter().zip(&state.dataset.outputs) {
        let mut row: Vec<String> = p.x.iter().map(|v| v.to_string()).collect();
        row.push(p.f.index().to_string());
        row.push(y.to_string());
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Differences between two histories, ignoring wall time. Empty when equal.
pub fn history_diff(a: &[IterationRecord], b: &[IterationRecord]) -> Vec<String> {
    let mut out = Vec::new();
    if a.len() != b.len() {
        out.push(format!("length {} vs {}", a.len(), b.len()));
    }
    for (ra, rb) in a.iter().zip(b) {
        let same = ra.iteration == rb.iteration
            && ra.x == rb.x
            && ra.f == rb.f
            && ra.y.to_bits() == rb.y.to_bits()
            && ra.acquisition_max.to_bits() == rb.acquisition_max.to_bits()
            && ra.fallback == rb.fallback
            && ra.forced == rb.forced;
        if !same {
            out.push(format!(
                "iteration {}: (x={:?}, f={}, y={}) vs (x={:?}, f={}, y={})",
                ra.iteration, ra.x, ra.f, ra.y, rb.x, rb.f, rb.y
            ));
        }
    }
    out
}
