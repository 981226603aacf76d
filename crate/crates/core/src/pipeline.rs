//! Sample → dedup → score → band filter, shared by the CLI and the service.

use rand::Rng;

use crate::baseline_lm::LmModel;
use crate::error::ModelError;
use crate::generated::GeneratedLine;
use crate::lstm_vae::VaeModel;
use crate::scalar::Scalar;
use crate::wundt::{band_filter_scored, dedup, summary_quantiles, BandConfig, BandReport, NgramIndex, ResolvedBand, Scorer, WundtError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Band(#[from] WundtError),
}

/// Prior-sample request. `temperature = None` decodes greedily.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolSpec<'a> {
    pub n: usize,
    pub temperature: Option<f64>,
    pub tag: Option<&'a str>,
    pub apply_band: bool,
}

/// Surprisals of `size` prior samples, the reference for quantile bands.
pub fn reference_surprisals<T: Scalar, R: Rng + ?Sized>(
    vae: &VaeModel<T>,
    lm: &LmModel<T>,
    size: usize,
    temperature: Option<f64>,
    tag: Option<&str>,
    rng: &mut R,
) -> Result<Vec<f64>, ModelError> {
    let lines = vae.sample_prior(size, temperature, rng, tag)?;
    let mut out = Vec::with_capacity(size);
    for chunk in lines.chunks(256) {
        let toks: Vec<&[usize]> = chunk.iter().map(|l| l.tokens.as_slice()).collect();
        out.extend(lm.surprisals(&toks)?.into_iter().map(|s| s.to_f64_lossy()));
    }
    Ok(out)
}

/// Resolves `band`, drawing a reference sample only in quantile mode.
pub fn resolve_band<T: Scalar, R: Rng + ?Sized>(
    band: &BandConfig,
    vae: &VaeModel<T>,
    lm: &LmModel<T>,
    reference_size: usize,
    temperature: Option<f64>,
    tag: Option<&str>,
    rng: &mut R,
) -> Result<ResolvedBand, PipelineError> {
    band.validate()?;
    let reference = if band.needs_reference() {
        reference_surprisals(vae, lm, reference_size, temperature, tag, rng)?
    } else {
        Vec::new()
    };
    Ok(band.resolve(&reference)?)
}

/// Draws `spec.n` prior samples, removes duplicate texts, scores the rest
/// and, if `spec.apply_band`, keeps only in-band lines. Line ids are
/// assigned from 0 in output order; callers renumber as needed.
pub fn scored_pool<T: Scalar, R: Rng + ?Sized>(
    vae: &VaeModel<T>,
    lm: &LmModel<T>,
    index: &NgramIndex,
    band: ResolvedBand,
    spec: PoolSpec<'_>,
    rng: &mut R,
) -> Result<(Vec<GeneratedLine>, BandReport), ModelError> {
    let mut pool = dedup(vae.sample_prior(spec.n, spec.temperature, rng, spec.tag)?);
    Scorer { lm, index, band }.score_pool(&mut pool)?;
    let (mut pool, report) = if spec.apply_band {
        band_filter_scored(&pool, &band)
    } else {
        let surprisals: Vec<f64> = pool.iter().filter_map(|l| l.score.as_ref()).map(|s| s.surprisal).collect();
        let in_band = pool.iter().filter(|l| l.score.as_ref().is_some_and(|s| s.in_band)).count();
        let below = surprisals.iter().filter(|&&s| s < band.low).count();
        let report = BandReport {
            below,
            in_band,
            above: pool.len() - below - in_band,
            band,
            quantiles: summary_quantiles(&surprisals),
        };
        (pool, report)
    };
    for (i, line) in pool.iter_mut().enumerate() {
        line.id = i as u64;
    }
    Ok((pool, report))
}
