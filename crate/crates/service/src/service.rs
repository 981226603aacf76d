use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use seedline_core::corpus::{demo_records, load_corpus, Corpus, CorpusOptions};
use seedline_core::generated::GeneratedLine;
use seedline_core::pipeline::{reference_surprisals, scored_pool, PoolSpec};
use seedline_core::wundt::{BandConfig, BandReport, NgramIndex, ResolvedBand, Scorer, DEFAULT_NGRAM, DEFAULT_REFERENCE_SIZE};
use seedline_core::{LmModel, VaeModel};

use crate::error::ServiceError;
use crate::session::{CurationSession, ExportFormat, ModelRefs};
use crate::store::SessionStore;

pub const MAX_POOL_REQUEST: usize = 10_000;
const MAX_INTERPOLATION_STEPS: usize = 1_000;

/// Where the service finds its models and keeps its sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub vae: PathBuf,
    pub lm: PathBuf,
    /// Training corpus for novelty scoring; `None` uses the bundled demo
    /// corpus.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    pub data_dir: PathBuf,
    #[serde(default = "default_reference_size")]
    pub reference_size: usize,
    #[serde(default)]
    pub reference_seed: u64,
}

fn default_reference_size() -> usize {
    DEFAULT_REFERENCE_SIZE
}

/// Loaded, read-only models shared by every session.
pub struct Models {
    pub vae: VaeModel,
    pub lm: LmModel,
    pub index: NgramIndex,
    pub refs: ModelRefs,
}

impl Models {
    pub fn new(vae: VaeModel, lm: LmModel, corpus: &Corpus, vae_ref: String, lm_ref: String) -> Result<Self, ServiceError> {
        if lm.vocab() != vae.vocab() {
            return Err(ServiceError::CheckpointMismatch(
                "VAE and LM were trained on different vocabularies".into(),
            ));
        }
        let refs = ModelRefs {
            vae: vae_ref,
            lm: lm_ref,
            vocab_hash: vae.vocab().content_hash(),
        };
        Ok(Self {
            index: NgramIndex::from_corpus(corpus, DEFAULT_NGRAM),
            vae,
            lm,
            refs,
        })
    }

    pub fn load(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let vae = VaeModel::load(&config.vae)?;
        let lm = LmModel::load_for_vocab(&config.lm, vae.vocab())?;
        let options = CorpusOptions::default();
        let corpus = match &config.corpus {
            Some(path) => load_corpus(path, &options).map_err(|e| ServiceError::BadParams(e.to_string()))?.0,
            None => Corpus::build(&demo_records(), &options).0,
        };
        Self::new(vae, lm, &corpus, config.vae.display().to_string(), config.lm.display().to_string())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    #[serde(default)]
    pub band: Option<BandConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolRequest {
    pub n: usize,
    #[serde(default = "one")]
    pub temperature: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub apply_band: bool,
    /// Theme tag for conditional models.
    #[serde(default)]
    pub tag: Option<String>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolResponse {
    /// Lines appended by this request, with their session ids.
    pub lines: Vec<GeneratedLine>,
    pub report: BandReport,
    pub pool_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VaryMode {
    Neighborhood,
    Interpolate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaryRequest {
    pub line_id: u64,
    pub mode: VaryMode,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub other_line_id: Option<u64>,
    #[serde(default)]
    pub steps: Option<usize>,
    /// Sampling temperature; absent decodes greedily.
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaryResponse {
    pub lines: Vec<GeneratedLine>,
    pub pool_size: usize,
}

/// Curation sessions over shared models. Operations on one session are
/// serialised; different sessions proceed independently. Every committed
/// change is persisted before it becomes visible.
pub struct PoolService {
    models: Arc<Models>,
    store: SessionStore,
    sessions: Mutex<HashMap<String, Arc<Mutex<CurationSession>>>>,
    reference: OnceLock<Vec<f64>>,
    reference_size: usize,
    reference_seed: u64,
}

impl PoolService {
    pub fn open(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let models = Models::load(config)?;
        let store = SessionStore::open(&config.data_dir)?;
        Ok(Self::with_models(Arc::new(models), store, config.reference_size, config.reference_seed))
    }

    pub fn with_models(models: Arc<Models>, store: SessionStore, reference_size: usize, reference_seed: u64) -> Self {
        Self {
            models,
            store,
            sessions: Mutex::new(HashMap::new()),
            reference: OnceLock::new(),
            reference_size: reference_size.max(1),
            reference_seed,
        }
    }

    pub fn models(&self) -> &Models {
        &self.models
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }

    /// Surprisals of the reference pool (τ = 1), drawn once per service.
    fn reference(&self) -> Result<&[f64], ServiceError> {
        if let Some(r) = self.reference.get() {
            return Ok(r);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.reference_seed);
        let m = &self.models;
        let sample = reference_surprisals(&m.vae, &m.lm, self.reference_size, Some(1.0), None, &mut rng)?;
        Ok(self.reference.get_or_init(|| sample))
    }

    pub fn create_session(&self, request: CreateRequest) -> Result<CurationSession, ServiceError> {
        let band = request.band.unwrap_or_default();
        band.validate().map_err(|e| ServiceError::BadParams(e.to_string()))?;
        let reference = if band.needs_reference() { self.reference()? } else { &[] };
        let resolved = band.resolve(reference).map_err(|e| ServiceError::BadParams(e.to_string()))?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = CurationSession::new(id.clone(), now(), self.models.refs.clone(), band, resolved);
        self.store.save(&session)?;
        self.sessions
            .lock()
            .expect("session map poisoned")
            .insert(id, Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    fn handle(&self, id: &str) -> Result<Arc<Mutex<CurationSession>>, ServiceError> {
        let mut map = self.sessions.lock().expect("session map poisoned");
        if let Some(h) = map.get(id) {
            return Ok(h.clone());
        }
        let session = self.store.load(id)?;
        let handle = Arc::new(Mutex::new(session));
        map.insert(id.to_string(), handle.clone());
        Ok(handle)
    }

    pub fn get(&self, id: &str) -> Result<CurationSession, ServiceError> {
        let handle = self.handle(id)?;
        let session = handle.lock().expect("session poisoned");
        Ok(session.clone())
    }

    /// Runs `op` on a copy of the session, persists the copy and only then
    /// replaces the live session, so a failure at any step leaves the
    /// session untouched.
    fn update<R>(
        &self,
        id: &str,
        op: impl FnOnce(&mut CurationSession) -> Result<R, ServiceError>,
    ) -> Result<(R, CurationSession), ServiceError> {
        let handle = self.handle(id)?;
        let mut live = handle.lock().expect("session poisoned");
        let mut draft = live.clone();
        let out = op(&mut draft)?;
        draft.modified = now();
        debug_assert!(draft.check_invariants().is_ok());
        self.store.save(&draft)?;
        *live = draft.clone();
        Ok((out, draft))
    }

    fn require_models(&self, session: &CurationSession) -> Result<(), ServiceError> {
        if session.models.vocab_hash != self.models.refs.vocab_hash {
            return Err(ServiceError::CheckpointMismatch(format!(
                "session {} was generated with vocabulary {}, service has {}",
                session.id, session.models.vocab_hash, self.models.refs.vocab_hash
            )));
        }
        Ok(())
    }

    fn scorer(&self, band: ResolvedBand) -> Scorer<'_, f64> {
        Scorer {
            lm: &self.models.lm,
            index: &self.models.index,
            band,
        }
    }

    pub fn generate_pool(&self, id: &str, request: &PoolRequest) -> Result<PoolResponse, ServiceError> {
        if !(1..=MAX_POOL_REQUEST).contains(&request.n) {
            return Err(ServiceError::BadParams(format!("n must be in 1..={MAX_POOL_REQUEST}, got {}", request.n)));
        }
        check_temperature(request.temperature)?;
        let ((lines, report), session) = self.update(id, |s| {
            self.require_models(s)?;
            let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
            let spec = PoolSpec {
                n: request.n,
                temperature: Some(request.temperature),
                tag: request.tag.as_deref(),
                apply_band: request.apply_band,
            };
            let m = &self.models;
            let (fresh, report) = scored_pool(&m.vae, &m.lm, &m.index, s.resolved_band, spec, &mut rng)?;
            let existing: HashSet<&str> = s.pool.iter().map(|l| l.text.as_str()).collect();
            let fresh: Vec<GeneratedLine> = fresh.into_iter().filter(|l| !existing.contains(l.text.as_str())).collect();
            Ok((s.append(fresh), report))
        })?;
        Ok(PoolResponse {
            lines,
            report,
            pool_size: session.pool.len(),
        })
    }

    pub fn pin(&self, id: &str, line_id: u64) -> Result<CurationSession, ServiceError> {
        Ok(self.update(id, |s| s.pin(line_id))?.1)
    }

    pub fn unpin(&self, id: &str, line_id: u64) -> Result<CurationSession, ServiceError> {
        Ok(self.update(id, |s| s.unpin(line_id))?.1)
    }

    pub fn arrange(&self, id: &str, line_ids: Vec<u64>) -> Result<CurationSession, ServiceError> {
        Ok(self.update(id, |s| s.arrange(line_ids))?.1)
    }

    pub fn vary(&self, id: &str, request: &VaryRequest) -> Result<VaryResponse, ServiceError> {
        if let Some(t) = request.temperature {
            check_temperature(t)?;
        }
        let (lines, session) = self.update(id, |s| {
            self.require_models(s)?;
            let m = &self.models;
            let tag = request.tag.as_deref();
            let origin = s.line(request.line_id).ok_or(ServiceError::UnknownLine(request.line_id))?;
            let z0 = origin.provenance.latent().to_vec();
            let mut fresh = match request.mode {
                VaryMode::Neighborhood => {
                    let radius = request.radius.unwrap_or(0.1);
                    if !(radius > 0.0 && radius.is_finite()) {
                        return Err(ServiceError::BadParams(format!("radius must be > 0, got {radius}")));
                    }
                    let n = request.n.unwrap_or(8);
                    if !(1..=MAX_POOL_REQUEST).contains(&n) {
                        return Err(ServiceError::BadParams(format!("n must be in 1..={MAX_POOL_REQUEST}, got {n}")));
                    }
                    let mut rng = ChaCha8Rng::seed_from_u64(request.seed.unwrap_or(0));
                    m.vae
                        .sample_neighborhood(&z0, radius, n, request.temperature, &mut rng, tag)?
                        .into_iter()
                        .map(|l| l.with_parents(Some(request.line_id), None))
                        .collect::<Vec<_>>()
                }
                VaryMode::Interpolate => {
                    let other_id = request
                        .other_line_id
                        .ok_or_else(|| ServiceError::BadParams("interpolate needs other_line_id".into()))?;
                    let other = s.line(other_id).ok_or(ServiceError::UnknownLine(other_id))?;
                    let steps = request.steps.unwrap_or(5);
                    if !(2..=MAX_INTERPOLATION_STEPS).contains(&steps) {
                        return Err(ServiceError::BadParams(format!(
                            "steps must be in 2..={MAX_INTERPOLATION_STEPS}, got {steps}"
                        )));
                    }
                    m.vae
                        .interpolate(&z0, other.provenance.latent(), steps, tag)?
                        .into_iter()
                        .map(|l| l.with_parents(Some(request.line_id), Some(other_id)))
                        .collect()
                }
            };
            self.scorer(s.resolved_band).score_pool(&mut fresh)?;
            Ok(s.append(fresh))
        })?;
        Ok(VaryResponse {
            lines,
            pool_size: session.pool.len(),
        })
    }

    pub fn export(&self, id: &str, format: ExportFormat) -> Result<String, ServiceError> {
        Ok(self.get(id)?.export(format))
    }
}

fn check_temperature(t: f64) -> Result<(), ServiceError> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(ServiceError::BadParams(format!("temperature must be > 0, got {t}")))
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
