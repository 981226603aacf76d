//! Word-level LSTM variational autoencoder.
//!
//! The encoder LSTM reads a line and its final hidden state is projected to
//! the posterior mean and log-variance. The decoder LSTM starts from a state
//! projected from the latent `z`, and `z` is also concatenated to every
//! decoder input embedding. New lines come from decoding points of the latent
//! space: prior draws, small neighbourhoods of an existing line, or straight
//! segments between two lines.

mod latent;
mod train;

pub use latent::{edit_distance, kl_divergence, reparameterize, reparameterize_with, token_overlap, LatentSample};
pub use train::{kl_weight_for_epoch, train, EpochMetrics, TrainConfig};

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenizedLine, Vocabulary, EOS, PAD, SOS, UNK};
use crate::error::{check_temperature, ModelError};
use crate::generated::{GeneratedLine, Provenance};
use crate::numerics::{
    argmax, read_file, sample_index, softmax_row, standard_normal, write_file, CheckpointError, Graph, LstmCell,
    ModelKind, NodeId, ParamFile, ParamId, ParamStore, Tensor,
};
use crate::scalar::Scalar;

const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub d_embed: usize,
    pub d_hidden: usize,
    pub d_z: usize,
    pub kl_anneal_epochs: usize,
    pub word_dropout: f64,
    pub max_len: usize,
    pub conditional: bool,
    pub tag_dim: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            d_embed: 64,
            d_hidden: 128,
            d_z: 32,
            kl_anneal_epochs: 10,
            word_dropout: 0.4,
            max_len: crate::corpus::DEFAULT_MAX_LEN,
            conditional: false,
            tag_dim: 8,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [self.d_embed, self.d_hidden, self.d_z, self.max_len, self.tag_dim];
        if dims.contains(&0) {
            return Err(ModelError::InvalidConfig("all dimensions must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.word_dropout) {
            return Err(ModelError::InvalidConfig("word_dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// How the decoder picks each token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoding {
    Greedy,
    Sampled { temperature: f64 },
}

impl Decoding {
    /// `None` means greedy.
    pub fn from_temperature(temperature: Option<f64>) -> Result<Self, ModelError> {
        match temperature {
            None => Ok(Decoding::Greedy),
            Some(t) => {
                check_temperature(t)?;
                Ok(Decoding::Sampled { temperature: t })
            }
        }
    }

    fn temperature(self) -> Option<f64> {
        match self {
            Decoding::Greedy => None,
            Decoding::Sampled { temperature } => Some(temperature),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct VaeParams {
    embed: ParamId,
    tag_embed: Option<ParamId>,
    encoder: LstmCell,
    mu_w: ParamId,
    mu_b: ParamId,
    logvar_w: ParamId,
    logvar_b: ParamId,
    init_w: ParamId,
    init_b: ParamId,
    decoder: LstmCell,
    out_w: ParamId,
    out_b: ParamId,
}

impl VaeParams {
    fn bind<T: Scalar>(store: &ParamStore<T>, conditional: bool) -> Option<Self> {
        Some(Self {
            embed: store.id("embed")?,
            tag_embed: if conditional { Some(store.id("tag_embed")?) } else { None },
            encoder: LstmCell::bind(store, "encoder")?,
            mu_w: store.id("mu.w")?,
            mu_b: store.id("mu.b")?,
            logvar_w: store.id("logvar.w")?,
            logvar_b: store.id("logvar.b")?,
            init_w: store.id("init.w")?,
            init_b: store.id("init.b")?,
            decoder: LstmCell::bind(store, "decoder")?,
            out_w: store.id("out.w")?,
            out_b: store.id("out.b")?,
        })
    }
}

/// One training example: a line plus its tag index for conditional models.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub line: &'a TokenizedLine,
    pub tag: Option<usize>,
}

/// Graph nodes of a loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub recon: NodeId,
    pub kl: NodeId,
    pub objective: NodeId,
    /// Mean number of predicted tokens (words + EOS) per line in the batch.
    pub tokens_per_line: f64,
}

/// Trained or freshly initialised LSTM-VAE. Immutable once trained; share it
/// freely across threads for sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel<T> {
    config: VaeConfig,
    vocab: Vocabulary,
    tags: Vec<String>,
    store: ParamStore<T>,
    p: VaeParams,
}

impl<T: Scalar> VaeModel<T> {
    /// Random initialisation. `tags` is the tag inventory; it is ignored
    /// unless `config.conditional`.
    pub fn new<R: Rng + ?Sized>(config: VaeConfig, vocab: Vocabulary, tags: Vec<String>, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        if config.conditional && tags.is_empty() {
            return Err(ModelError::InvalidConfig("conditional model needs at least one tag".into()));
        }
        let tags = if config.conditional { tags } else { Vec::new() };
        let v = vocab.len();
        let mut store = ParamStore::new();
        let embed = store.insert_uniform("embed", &[v, config.d_embed], INIT_SCALE, rng);
        let tag_embed = config
            .conditional
            .then(|| store.insert_uniform("tag_embed", &[tags.len(), config.tag_dim], INIT_SCALE, rng));
        let tag_in = if config.conditional { config.tag_dim } else { 0 };
        let encoder = LstmCell::new(&mut store, "encoder", config.d_embed + tag_in, config.d_hidden, INIT_SCALE, rng);
        let mu_w = store.insert_uniform("mu.w", &[config.d_hidden, config.d_z], INIT_SCALE, rng);
        let mu_b = store.insert_zeros("mu.b", &[1, config.d_z]);
        let logvar_w = store.insert_uniform("logvar.w", &[config.d_hidden, config.d_z], INIT_SCALE, rng);
        let logvar_b = store.insert_zeros("logvar.b", &[1, config.d_z]);
        let cond = config.d_z + tag_in;
        let init_w = store.insert_uniform("init.w", &[cond, config.d_hidden], INIT_SCALE, rng);
        let init_b = store.insert_zeros("init.b", &[1, config.d_hidden]);
        let decoder = LstmCell::new(&mut store, "decoder", config.d_embed + cond, config.d_hidden, INIT_SCALE, rng);
        let out_w = store.insert_uniform("out.w", &[config.d_hidden, v], INIT_SCALE, rng);
        let out_b = store.insert_zeros("out.b", &[1, v]);
        Ok(Self {
            config,
            vocab,
            tags,
            store,
            p: VaeParams {
                embed,
                tag_embed,
                encoder,
                mu_w,
                mu_b,
                logvar_w,
                logvar_b,
                init_w,
                init_b,
                decoder,
                out_w,
                out_b,
            },
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn latent_dim(&self) -> usize {
        self.config.d_z
    }

    /// Resolves a tag name. Unconditional models ignore tags.
    pub fn resolve_tag(&self, tag: Option<&str>) -> Result<Option<usize>, ModelError> {
        if !self.config.conditional {
            return Ok(None);
        }
        let name = tag.ok_or(ModelError::MissingTag)?;
        self.tags
            .iter()
            .position(|t| t == name)
            .map(Some)
            .ok_or_else(|| ModelError::UnknownTag(name.to_string()))
    }

    fn tag_rows(&self, g: &mut Graph<T>, tags: &[Option<usize>]) -> Result<Option<NodeId>, ModelError> {
        let Some(table) = self.p.tag_embed else { return Ok(None) };
        let ids: Vec<usize> = tags.iter().map(|t| t.ok_or(ModelError::MissingTag)).collect::<Result<_, _>>()?;
        let table = g.param(&self.store, table);
        Ok(Some(g.gather(table, &ids)?))
    }

    /// Builds the encoder over a batch and returns the `(mu, logvar)` nodes.
    pub fn encode_graph(
        &self,
        g: &mut Graph<T>,
        lines: &[&[usize]],
        tags: &[Option<usize>],
    ) -> Result<(NodeId, NodeId), ModelError> {
        let b = lines.len();
        let hd = self.config.d_hidden;
        let tag_rows = self.tag_rows(g, tags)?;
        let embed = g.param(&self.store, self.p.embed);
        let mut h = g.constant(Tensor::zeros(&[b, hd]));
        let mut c = g.constant(Tensor::zeros(&[b, hd]));
        let steps = lines.iter().map(|l| l.len()).max().unwrap_or(0);
        for t in 0..steps {
            let ids: Vec<usize> = lines.iter().map(|l| l.get(t).copied().unwrap_or(PAD)).collect();
            let mask: Vec<bool> = lines.iter().map(|l| t < l.len()).collect();
            let mut x = g.gather(embed, &ids)?;
            if let Some(tr) = tag_rows {
                x = g.concat_cols(&[x, tr])?;
            }
            let (hn, cn) = self.p.encoder.step(g, &self.store, x, h, c)?;
            h = g.row_blend(hn, h, &mask)?;
            c = g.row_blend(cn, c, &mask)?;
        }
        let mu_w = g.param(&self.store, self.p.mu_w);
        let mu_b = g.param(&self.store, self.p.mu_b);
        let lv_w = g.param(&self.store, self.p.logvar_w);
        let lv_b = g.param(&self.store, self.p.logvar_b);
        let mu = g.linear(h, mu_w, mu_b)?;
        let logvar = g.linear(h, lv_w, lv_b)?;
        Ok((mu, logvar))
    }

    /// Decoder conditioning vector (`z`, plus tag embedding when conditional)
    /// and the initial `(h, c)` derived from it.
    fn decoder_start(
        &self,
        g: &mut Graph<T>,
        z: NodeId,
        tags: &[Option<usize>],
    ) -> Result<(NodeId, NodeId, NodeId), ModelError> {
        let cond = match self.tag_rows(g, tags)? {
            Some(tr) => g.concat_cols(&[z, tr])?,
            None => z,
        };
        let w = g.param(&self.store, self.p.init_w);
        let b = g.param(&self.store, self.p.init_b);
        let pre = g.linear(cond, w, b)?;
        let h0 = g.tanh(pre);
        let c0 = g.constant(Tensor::zeros(&[tags.len(), self.config.d_hidden]));
        Ok((cond, h0, c0))
    }

    fn decoder_step(
        &self,
        g: &mut Graph<T>,
        ids: &[usize],
        cond: NodeId,
        h: NodeId,
        c: NodeId,
    ) -> Result<(NodeId, NodeId), ModelError> {
        let embed = g.param(&self.store, self.p.embed);
        let e = g.gather(embed, ids)?;
        let x = g.concat_cols(&[e, cond])?;
        Ok(self.p.decoder.step(g, &self.store, x, h, c)?)
    }

    fn output_logits(&self, g: &mut Graph<T>, h: NodeId) -> Result<NodeId, ModelError> {
        let w = g.param(&self.store, self.p.out_w);
        let b = g.param(&self.store, self.p.out_b);
        Ok(g.linear(h, w, b)?)
    }

    /// Teacher-forced decoder cross-entropy for latents `z` (a `B×d_z` node).
    /// Decoder inputs are `SOS w1 … wn`, targets `w1 … wn EOS`; `dropped`
    /// marks inputs replaced by UNK.
    fn reconstruction_graph(
        &self,
        g: &mut Graph<T>,
        z: NodeId,
        lines: &[&[usize]],
        tags: &[Option<usize>],
        dropped: &dyn Fn(usize, usize) -> bool,
    ) -> Result<NodeId, ModelError> {
        let (cond, mut h, mut c) = self.decoder_start(g, z, tags)?;
        let steps = lines.iter().map(|l| l.len()).max().unwrap_or(0) + 1;
        let mut hs = Vec::with_capacity(steps);
        let mut targets = Vec::with_capacity(steps * lines.len());
        let mut mask = Vec::with_capacity(steps * lines.len());
        for t in 0..steps {
            let ids: Vec<usize> = lines
                .iter()
                .enumerate()
                .map(|(b, l)| match t {
                    0 => SOS,
                    _ if t - 1 < l.len() => {
                        if dropped(b, t - 1) {
                            UNK
                        } else {
                            l[t - 1]
                        }
                    }
                    _ => PAD,
                })
                .collect();
            (h, c) = self.decoder_step(g, &ids, cond, h, c)?;
            hs.push(h);
            for l in lines {
                let (target, live) = match t.cmp(&l.len()) {
                    std::cmp::Ordering::Less => (l[t], true),
                    std::cmp::Ordering::Equal => (EOS, true),
                    std::cmp::Ordering::Greater => (PAD, false),
                };
                targets.push(target);
                mask.push(live);
            }
        }
        let all_h = g.concat_rows(&hs)?;
        let logits = self.output_logits(g, all_h)?;
        Ok(g.cross_entropy(logits, &targets, &mask)?)
    }

    /// Training objective on a batch with an explicit `B×d_z` noise matrix.
    ///
    /// `recon` is mean cross-entropy per predicted token and `kl` the mean
    /// per-line KL. The objective is `recon + kl_weight·kl / tokens_per_line`,
    /// i.e. the negative ELBO divided by the batch's token count.
    pub fn loss_graph(
        &self,
        g: &mut Graph<T>,
        batch: &[Example<'_>],
        kl_weight: f64,
        eps: &Tensor<T>,
        dropped: &dyn Fn(usize, usize) -> bool,
    ) -> Result<LossNodes, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let lines: Vec<&[usize]> = batch.iter().map(|e| e.line.ids.as_slice()).collect();
        let tags: Vec<Option<usize>> = batch.iter().map(|e| e.tag).collect();
        let (mu, logvar) = self.encode_graph(g, &lines, &tags)?;

        let half_lv = g.scale(logvar, T::of(0.5));
        let sigma = g.exp(half_lv);
        let eps = g.constant(eps.clone());
        let noise = g.mul(sigma, eps)?;
        let z = g.add(mu, noise)?;

        // 0.5 · Σ (exp(lv) + mu² − 1 − lv) / B
        let var = g.exp(logvar);
        let mu2 = g.mul(mu, mu)?;
        let a = g.add(var, mu2)?;
        let a = g.sub(a, logvar)?;
        let a = g.add_scalar(a, -T::one());
        let s = g.sum(a);
        let kl = g.scale(s, T::of(0.5 / batch.len() as f64));

        let recon = self.reconstruction_graph(g, z, &lines, &tags, dropped)?;
        let tokens_per_line = lines.iter().map(|l| l.len() + 1).sum::<usize>() as f64 / lines.len() as f64;
        let weighted = g.scale(kl, T::of(kl_weight / tokens_per_line));
        let objective = g.add(recon, weighted)?;
        Ok(LossNodes {
            recon,
            kl,
            objective,
            tokens_per_line,
        })
    }

    /// `(recon, kl)` on a batch, drawing noise and word dropout from `rng`.
    pub fn loss<R: Rng + ?Sized>(
        &self,
        batch: &[Example<'_>],
        kl_weight: f64,
        word_dropout: f64,
        rng: &mut R,
    ) -> Result<(T, T), ModelError> {
        let mut g = Graph::new();
        let (nodes, _) = self.sampled_loss_graph(&mut g, batch, kl_weight, word_dropout, rng)?;
        Ok((g.value(nodes.recon).item(), g.value(nodes.kl).item()))
    }

    /// [`VaeModel::loss_graph`] with noise and dropout masks drawn from `rng`.
    /// Also returns the scalar objective value.
    pub fn sampled_loss_graph<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        batch: &[Example<'_>],
        kl_weight: f64,
        word_dropout: f64,
        rng: &mut R,
    ) -> Result<(LossNodes, T), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        if kl_weight < 0.0 {
            return Err(ModelError::BadParams("kl_weight must be ≥ 0".into()));
        }
        let eps = Tensor::new(
            vec![batch.len(), self.config.d_z],
            standard_normal(batch.len() * self.config.d_z, rng),
        )?;
        let drop: Vec<Vec<bool>> = batch
            .iter()
            .map(|e| (0..e.line.len()).map(|_| word_dropout > 0.0 && rng.random::<f64>() < word_dropout).collect())
            .collect();
        let nodes = self.loss_graph(g, batch, kl_weight, &eps, &|b, t| drop[b][t])?;
        let value = g.value(nodes.objective).item();
        Ok((nodes, value))
    }

    /// Mean per-token reconstruction NLL decoding from the posterior mean,
    /// without word dropout.
    pub fn posterior_mean_nll(&self, batch: &[Example<'_>]) -> Result<T, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let mut g = Graph::new();
        let lines: Vec<&[usize]> = batch.iter().map(|e| e.line.ids.as_slice()).collect();
        let tags: Vec<Option<usize>> = batch.iter().map(|e| e.tag).collect();
        let (mu, _) = self.encode_graph(&mut g, &lines, &tags)?;
        let recon = self.reconstruction_graph(&mut g, mu, &lines, &tags, &|_, _| false)?;
        Ok(g.value(recon).item())
    }

    /// Posterior `(mu, logvar)` of one line. Deterministic.
    pub fn encode(&self, line: &TokenizedLine, tag: Option<&str>) -> Result<(Vec<T>, Vec<T>), ModelError> {
        let tag = self.resolve_tag(tag)?;
        let mut g = Graph::new();
        let (mu, logvar) = self.encode_graph(&mut g, &[&line.ids], &[tag])?;
        Ok((g.value(mu).data().to_vec(), g.value(logvar).data().to_vec()))
    }

    /// Decodes each latent of `zs` as one batch. Stops a row at EOS or after
    /// `max_len` tokens; PAD and SOS are never emitted.
    pub fn decode_batch<R: Rng + ?Sized>(
        &self,
        zs: &[Vec<T>],
        tag: Option<usize>,
        decoding: Decoding,
        max_len: usize,
        rng: &mut R,
    ) -> Result<Vec<TokenizedLine>, ModelError> {
        if zs.is_empty() {
            return Ok(Vec::new());
        }
        if self.config.conditional && tag.is_none() {
            return Err(ModelError::MissingTag);
        }
        let d = self.config.d_z;
        if let Some(bad) = zs.iter().find(|z| z.len() != d) {
            return Err(ModelError::LatentDim {
                expected: d,
                got: bad.len(),
            });
        }
        if let Decoding::Sampled { temperature } = decoding {
            check_temperature(temperature)?;
        }
        let b = zs.len();
        let tags = vec![tag; b];
        let mut g = Graph::new();
        let z = g.constant(Tensor::new(vec![b, d], zs.concat())?);
        let (cond, mut h, mut c) = self.decoder_start(&mut g, z, &tags)?;
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); b];
        let mut done = vec![false; b];
        let mut prev = vec![SOS; b];
        for _ in 0..max_len {
            (h, c) = self.decoder_step(&mut g, &prev, cond, h, c)?;
            let logits = self.output_logits(&mut g, h)?;
            let lv = g.value(logits).clone();
            for row in 0..b {
                if done[row] {
                    prev[row] = PAD;
                    continue;
                }
                let tok = pick_token(lv.row(row), decoding, rng);
                if tok == EOS {
                    done[row] = true;
                    prev[row] = PAD;
                } else {
                    out[row].push(tok);
                    prev[row] = tok;
                }
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        Ok(out
            .into_iter()
            .map(|ids| TokenizedLine {
                text: self.vocab.decode(&ids),
                ids,
            })
            .collect())
    }

    pub fn decode_greedy(&self, z: &[T], tag: Option<&str>, max_len: usize) -> Result<TokenizedLine, ModelError> {
        let tag = self.resolve_tag(tag)?;
        // greedy decoding never touches the rng
        let mut rng = idle_rng();
        let mut lines = self.decode_batch(&[z.to_vec()], tag, Decoding::Greedy, max_len, &mut rng)?;
        Ok(lines.remove(0))
    }

    pub fn decode_sampled<R: Rng + ?Sized>(
        &self,
        z: &[T],
        tag: Option<&str>,
        temperature: f64,
        rng: &mut R,
        max_len: usize,
    ) -> Result<TokenizedLine, ModelError> {
        check_temperature(temperature)?;
        let tag = self.resolve_tag(tag)?;
        let mut lines = self.decode_batch(&[z.to_vec()], tag, Decoding::Sampled { temperature }, max_len, rng)?;
        Ok(lines.remove(0))
    }

    /// Logits of the first decoding step from `z`.
    pub fn first_step_logits(&self, z: &[T], tag: Option<&str>) -> Result<Vec<T>, ModelError> {
        let tag = self.resolve_tag(tag)?;
        let mut g = Graph::new();
        let zn = g.constant(Tensor::new(vec![1, z.len()], z.to_vec())?);
        let (cond, h, c) = self.decoder_start(&mut g, zn, &[tag])?;
        let (h, _) = self.decoder_step(&mut g, &[SOS], cond, h, c)?;
        let logits = self.output_logits(&mut g, h)?;
        Ok(g.value(logits).data().to_vec())
    }

    fn to_generated(&self, lines: Vec<TokenizedLine>, provenance: impl Fn(usize) -> Provenance) -> Vec<GeneratedLine> {
        lines
            .into_iter()
            .enumerate()
            .map(|(i, l)| GeneratedLine {
                id: i as u64,
                text: l.text,
                tokens: l.ids,
                provenance: provenance(i),
                score: None,
            })
            .collect()
    }

    /// Decodes `n` latents drawn from the standard normal prior.
    /// `temperature = None` decodes greedily.
    pub fn sample_prior<R: Rng + ?Sized>(
        &self,
        n: usize,
        temperature: Option<f64>,
        rng: &mut R,
        tag: Option<&str>,
    ) -> Result<Vec<GeneratedLine>, ModelError> {
        if n == 0 {
            return Err(ModelError::BadParams("n must be ≥ 1".into()));
        }
        let decoding = Decoding::from_temperature(temperature)?;
        let tag = self.resolve_tag(tag)?;
        let zs: Vec<Vec<T>> = (0..n).map(|_| standard_normal(self.config.d_z, rng)).collect();
        let lines = self.decode_batch(&zs, tag, decoding, self.config.max_len, rng)?;
        Ok(self.to_generated(lines, |i| Provenance::Prior {
            latent: to_f64(&zs[i]),
            temperature: decoding.temperature(),
        }))
    }

    /// Decodes `n` latents `z0 + radius·eps`.
    pub fn sample_neighborhood<R: Rng + ?Sized>(
        &self,
        z0: &[T],
        radius: f64,
        n: usize,
        temperature: Option<f64>,
        rng: &mut R,
        tag: Option<&str>,
    ) -> Result<Vec<GeneratedLine>, ModelError> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(ModelError::BadParams(format!("radius must be ≥ 0, got {radius}")));
        }
        if n == 0 {
            return Err(ModelError::BadParams("n must be ≥ 1".into()));
        }
        let decoding = Decoding::from_temperature(temperature)?;
        let tag = self.resolve_tag(tag)?;
        let r = T::of(radius);
        let zs: Vec<Vec<T>> = (0..n)
            .map(|_| {
                let eps: Vec<T> = standard_normal(z0.len(), rng);
                z0.iter().zip(eps).map(|(&z, e)| z + r * e).collect()
            })
            .collect();
        let lines = self.decode_batch(&zs, tag, decoding, self.config.max_len, rng)?;
        let origin = to_f64(z0);
        Ok(self.to_generated(lines, |i| Provenance::Neighborhood {
            latent: to_f64(&zs[i]),
            origin: origin.clone(),
            radius,
            parent: None,
            temperature: decoding.temperature(),
        }))
    }

    /// Greedy decodes at `steps` evenly spaced points from `z1` to `z2`.
    pub fn interpolate(&self, z1: &[T], z2: &[T], steps: usize, tag: Option<&str>) -> Result<Vec<GeneratedLine>, ModelError> {
        if steps < 2 {
            return Err(ModelError::BadParams("interpolation needs at least 2 steps".into()));
        }
        if z1.len() != z2.len() {
            return Err(ModelError::LatentDim {
                expected: z1.len(),
                got: z2.len(),
            });
        }
        let tag = self.resolve_tag(tag)?;
        let ts: Vec<f64> = (0..steps).map(|i| i as f64 / (steps - 1) as f64).collect();
        let zs: Vec<Vec<T>> = ts
            .iter()
            .map(|&t| {
                let (a, b) = (T::of(1.0 - t), T::of(t));
                z1.iter().zip(z2).map(|(&x, &y)| a * x + b * y).collect()
            })
            .collect();
        let mut rng = idle_rng();
        let lines = self.decode_batch(&zs, tag, Decoding::Greedy, self.config.max_len, &mut rng)?;
        Ok(self.to_generated(lines, |i| Provenance::Interpolation {
            latent: to_f64(&zs[i]),
            t: ts[i],
            parent: None,
            other_parent: None,
        }))
    }

    /// Writes the parameter file at `path` and the JSON sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        ParamFile::from_store(ModelKind::Vae, &self.store).write(path)?;
        let sidecar = Sidecar {
            kind: ModelKind::Vae,
            config: self.config,
            vocab_hash: self.vocab.content_hash(),
            vocab: self.vocab.clone(),
            tags: self.tags.clone(),
        };
        write_file(&sidecar_path(path), &serde_json::to_string_pretty(&sidecar)?)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let sidecar: Sidecar<VaeConfig> = serde_json::from_str(&read_file(&sidecar_path(path))?)?;
        sidecar.check(ModelKind::Vae)?;
        let mut rng = idle_rng();
        let mut model = Self::new(sidecar.config, sidecar.vocab, sidecar.tags, &mut rng)
            .map_err(|e| CheckpointError::Sidecar(e.to_string()))?;
        ParamFile::read(path)?.load_into(ModelKind::Vae, &mut model.store)?;
        model.p = VaeParams::bind(&model.store, model.config.conditional)
            .ok_or_else(|| CheckpointError::Sidecar("parameter layout".into()))?;
        Ok(model)
    }

    /// Loads and refuses a checkpoint built for a different vocabulary.
    pub fn load_for_vocab(path: &Path, vocab: &Vocabulary) -> Result<Self, CheckpointError> {
        let model = Self::load(path)?;
        check_vocab(&model.vocab, vocab)?;
        Ok(model)
    }
}

pub(crate) fn check_vocab(found: &Vocabulary, expected: &Vocabulary) -> Result<(), CheckpointError> {
    let (f, e) = (found.content_hash(), expected.content_hash());
    if f != e {
        return Err(CheckpointError::VocabMismatch { expected: e, found: f });
    }
    Ok(())
}

/// JSON metadata stored beside a parameter file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct Sidecar<C> {
    pub kind: ModelKind,
    pub config: C,
    pub vocab_hash: String,
    pub vocab: Vocabulary,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl<C> Sidecar<C> {
    pub fn check(&self, kind: ModelKind) -> Result<(), CheckpointError> {
        if self.kind != kind {
            return Err(CheckpointError::KindMismatch {
                expected: kind,
                found: self.kind,
            });
        }
        let actual = self.vocab.content_hash();
        if actual != self.vocab_hash {
            return Err(CheckpointError::VocabMismatch {
                expected: self.vocab_hash.clone(),
                found: actual,
            });
        }
        Ok(())
    }
}

/// `model.ckpt` → `model.ckpt.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Reads only the model kind of a checkpoint sidecar.
pub fn checkpoint_kind(path: &Path) -> Result<ModelKind, CheckpointError> {
    #[derive(Deserialize)]
    struct KindOnly {
        kind: ModelKind,
    }
    let k: KindOnly = serde_json::from_str(&read_file(&sidecar_path(path))?)?;
    Ok(k.kind)
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

/// Picks the next token from raw logits. PAD and SOS are excluded.
/// Rng for paths that never draw from it (greedy decoding, rebuilding a
/// model before its parameters are overwritten).
pub(crate) fn idle_rng() -> rand_chacha::ChaCha8Rng {
    <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0)
}

pub(crate) fn pick_token<T: Scalar, R: Rng + ?Sized>(logits: &[T], decoding: Decoding, rng: &mut R) -> usize {
    let mut masked = logits.to_vec();
    masked[PAD] = T::neg_infinity();
    masked[SOS] = T::neg_infinity();
    match decoding {
        Decoding::Greedy => argmax(&masked),
        Decoding::Sampled { temperature } => {
            let probs = softmax_row(&masked, T::of(temperature));
            sample_index(&probs, rng)
        }
    }
}
