use serde::{Deserialize, Serialize};

use crate::wundt::LineScore;

/// How a pool line came to be. Every variant records the latent vector the
/// line was decoded from; `temperature` is absent for greedy decoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Prior {
        latent: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        temperature: Option<f64>,
    },
    Neighborhood {
        latent: Vec<f64>,
        origin: Vec<f64>,
        radius: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        parent: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        temperature: Option<f64>,
    },
    Interpolation {
        latent: Vec<f64>,
        /// Position along the segment, 0 at the first parent.
        t: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        parent: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        other_parent: Option<u64>,
    },
}

impl Provenance {
    pub fn latent(&self) -> &[f64] {
        match self {
            Provenance::Prior { latent, .. }
            | Provenance::Neighborhood { latent, .. }
            | Provenance::Interpolation { latent, .. } => latent,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Provenance::Prior { .. } => "prior",
            Provenance::Neighborhood { .. } => "neighborhood",
            Provenance::Interpolation { .. } => "interpolation",
        }
    }

    pub fn parent(&self) -> Option<u64> {
        match self {
            Provenance::Prior { .. } => None,
            Provenance::Neighborhood { parent, .. } | Provenance::Interpolation { parent, .. } => *parent,
        }
    }

    pub(crate) fn set_parents(&mut self, first: Option<u64>, second: Option<u64>) {
        match self {
            Provenance::Prior { .. } => {}
            Provenance::Neighborhood { parent, .. } => *parent = first,
            Provenance::Interpolation {
                parent, other_parent, ..
            } => {
                *parent = first;
                *other_parent = second;
            }
        }
    }
}

/// A decoded candidate line with its provenance and, once scored, its score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedLine {
    pub id: u64,
    pub text: String,
    pub tokens: Vec<usize>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<LineScore>,
}

impl GeneratedLine {
    pub fn with_parents(mut self, first: Option<u64>, second: Option<u64>) -> Self {
        self.provenance.set_parents(first, second);
        self
    }
}
