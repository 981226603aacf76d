use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use seedline_core::generated::GeneratedLine;
use seedline_core::wundt::{BandConfig, ResolvedBand};

use crate::error::ServiceError;

/// Checkpoints a session was generated with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRefs {
    pub vae: String,
    pub lm: String,
    pub vocab_hash: String,
}

/// Pool, pinned set and arrangement of one composition.
///
/// Invariants: arrangement ⊆ pinned ⊆ pool ids, no duplicate ids in the
/// pool or the arrangement, and every pool id is below `next_line_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationSession {
    pub id: String,
    pub created: String,
    pub modified: String,
    pub models: ModelRefs,
    pub band: BandConfig,
    pub resolved_band: ResolvedBand,
    pub next_line_id: u64,
    pub pool: Vec<GeneratedLine>,
    pub pinned: BTreeSet<u64>,
    pub arrangement: Vec<u64>,
}

/// Export document formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Text,
    Json,
}

impl std::str::FromStr for ExportFormat {
    type Err = ServiceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(ExportFormat::Text),
            "json" => Ok(ExportFormat::Json),
            other => Err(ServiceError::BadParams(format!("unknown export format {other:?}"))),
        }
    }
}

impl CurationSession {
    pub fn new(id: String, now: String, models: ModelRefs, band: BandConfig, resolved_band: ResolvedBand) -> Self {
        Self {
            id,
            created: now.clone(),
            modified: now,
            models,
            band,
            resolved_band,
            next_line_id: 1,
            pool: Vec::new(),
            pinned: BTreeSet::new(),
            arrangement: Vec::new(),
        }
    }

    pub fn line(&self, id: u64) -> Option<&GeneratedLine> {
        self.pool.iter().find(|l| l.id == id)
    }

    fn require_line(&self, id: u64) -> Result<&GeneratedLine, ServiceError> {
        self.line(id).ok_or(ServiceError::UnknownLine(id))
    }

    /// Appends lines, renumbering them with fresh ids. Returns the
    /// renumbered lines.
    pub fn append(&mut self, lines: Vec<GeneratedLine>) -> Vec<GeneratedLine> {
        let mut added = Vec::with_capacity(lines.len());
        for mut line in lines {
            line.id = self.next_line_id;
            self.next_line_id += 1;
            added.push(line.clone());
            self.pool.push(line);
        }
        added
    }

    pub fn pin(&mut self, id: u64) -> Result<(), ServiceError> {
        self.require_line(id)?;
        self.pinned.insert(id);
        Ok(())
    }

    /// Unpins `id` and drops it from the arrangement.
    pub fn unpin(&mut self, id: u64) -> Result<(), ServiceError> {
        self.require_line(id)?;
        self.pinned.remove(&id);
        self.arrangement.retain(|&a| a != id);
        Ok(())
    }

    /// Replaces the arrangement; it must list distinct pinned ids.
    pub fn arrange(&mut self, ids: Vec<u64>) -> Result<(), ServiceError> {
        let mut seen = BTreeSet::new();
        for &id in &ids {
            self.require_line(id)?;
            if !self.pinned.contains(&id) {
                return Err(ServiceError::NotPinned(id));
            }
            if !seen.insert(id) {
                return Err(ServiceError::DuplicateId(id));
            }
        }
        self.arrangement = ids;
        Ok(())
    }

    /// Arrangement lines joined by newlines, without a trailing newline.
    pub fn export_text(&self) -> String {
        self.arrangement
            .iter()
            .filter_map(|&id| self.line(id))
            .map(|l| l.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("session serialises")
    }

    /// Parses and validates an exported session document.
    pub fn from_json(text: &str) -> Result<Self, ServiceError> {
        let session: CurationSession =
            serde_json::from_str(text).map_err(|e| ServiceError::BadParams(format!("invalid session document: {e}")))?;
        session.check_invariants()?;
        Ok(session)
    }

    pub fn export(&self, format: ExportFormat) -> String {
        match format {
            ExportFormat::Text => self.export_text(),
            ExportFormat::Json => self.to_json(),
        }
    }

    pub fn check_invariants(&self) -> Result<(), ServiceError> {
        let mut ids = BTreeSet::new();
        for line in &self.pool {
            if !ids.insert(line.id) {
                return Err(ServiceError::Corrupt(format!("duplicate pool id {}", line.id)));
            }
            if line.id >= self.next_line_id {
                return Err(ServiceError::Corrupt(format!("pool id {} not below next id", line.id)));
            }
        }
        if let Some(id) = self.pinned.iter().find(|id| !ids.contains(id)) {
            return Err(ServiceError::Corrupt(format!("pinned id {id} not in pool")));
        }
        let mut seen = BTreeSet::new();
        for id in &self.arrangement {
            if !self.pinned.contains(id) || !seen.insert(*id) {
                return Err(ServiceError::Corrupt(format!("arrangement id {id} unpinned or repeated")));
            }
        }
        Ok(())
    }
}
