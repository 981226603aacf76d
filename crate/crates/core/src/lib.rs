//! Generation and filtering of lyric lines for a human curator.
//!
//! An LSTM-VAE proposes candidate lines from a continuous latent space, a
//! recurrent language model scores how predictable each line is, and the
//! [`wundt`] filter keeps the lines that sit between cliché and noise.
//!
//! Models are generic over [`Scalar`] (`f32` or `f64`); the aliases below fix
//! the scalar to `f64`, which is what the tools use.

pub mod baseline_lm;
pub mod corpus;
pub mod error;
pub mod generated;
pub mod lstm_vae;
pub mod numerics;
pub mod pipeline;
pub mod scalar;
pub mod wundt;

pub use baseline_lm::{train_lm, LmConfig, LmEpochMetrics, SamplerConfig};
pub use corpus::{
    build_vocabulary, encode_line, load_corpus, normalize, Corpus, CorpusError, CorpusOptions, CorpusRecord,
    TokenizedLine, Vocabulary,
};
pub use error::ModelError;
pub use generated::{GeneratedLine, Provenance};
pub use lstm_vae::{kl_divergence, reparameterize, train as train_vae, Decoding, EpochMetrics, TrainConfig, VaeConfig};
pub use numerics::{CheckpointError, ModelKind, NumericsError, OptimizerKind};
pub use scalar::Scalar;
pub use wundt::{band_filter, dedup, BandConfig, LineScore, NgramIndex, ResolvedBand, Scorer, WundtError};

pub type Tensor = numerics::Tensor<f64>;
pub type Graph = numerics::Graph<f64>;
pub type ParamStore = numerics::ParamStore<f64>;
pub type VaeModel = lstm_vae::VaeModel<f64>;
pub type LmModel = baseline_lm::LmModel<f64>;
