//! Small autoregressive LSTM language model.
//!
//! It produces lines one token at a time from `SOS`, and it is the
//! instrument that measures surprisal for the band filter.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, TokenizedLine, Vocabulary, EOS, PAD, SOS};
use crate::error::{check_temperature, ModelError};
use crate::lstm_vae::{idle_rng, sidecar_path, Sidecar, TrainConfig};
use crate::numerics::{
    argmax, log_softmax_at, read_file, sample_index, softmax_row, write_file, CheckpointError, Graph, LstmCell,
    ModelKind, NodeId, Optimizer, ParamFile, ParamId, ParamStore, Tensor,
};
use crate::scalar::Scalar;

const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub d_embed: usize,
    pub d_hidden: usize,
    pub max_len: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            d_embed: 64,
            d_hidden: 128,
            max_len: crate::corpus::DEFAULT_MAX_LEN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub max_len: usize,
    pub seed: u64,
    /// Restrict sampling to the `k` most probable tokens. Off by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            max_len: crate::corpus::DEFAULT_MAX_LEN,
            seed: 7,
            top_k: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmEpochMetrics {
    pub epoch: usize,
    /// Mean next-token cross-entropy over the epoch's batches.
    pub train_ce: f64,
    pub perplexity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_perplexity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmModel<T> {
    config: LmConfig,
    vocab: Vocabulary,
    store: ParamStore<T>,
    embed: ParamId,
    cell: LstmCell,
    out_w: ParamId,
    out_b: ParamId,
}

impl<T: Scalar> LmModel<T> {
    pub fn new<R: Rng + ?Sized>(config: LmConfig, vocab: Vocabulary, rng: &mut R) -> Result<Self, ModelError> {
        if config.d_embed == 0 || config.d_hidden == 0 || config.max_len == 0 {
            return Err(ModelError::InvalidConfig("all dimensions must be ≥ 1".into()));
        }
        let v = vocab.len();
        let mut store = ParamStore::new();
        let embed = store.insert_uniform("embed", &[v, config.d_embed], INIT_SCALE, rng);
        let cell = LstmCell::new(&mut store, "lstm", config.d_embed, config.d_hidden, INIT_SCALE, rng);
        let out_w = store.insert_uniform("out.w", &[config.d_hidden, v], INIT_SCALE, rng);
        let out_b = store.insert_zeros("out.b", &[1, v]);
        Ok(Self {
            config,
            vocab,
            store,
            embed,
            cell,
            out_w,
            out_b,
        })
    }

    pub fn config(&self) -> &LmConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Runs the LSTM over `inputs` (rows padded with PAD) and returns the
    /// `(B·steps)×V` logits node, step-major.
    fn logits_graph(&self, g: &mut Graph<T>, inputs: &[Vec<usize>]) -> Result<NodeId, ModelError> {
        let b = inputs.len();
        let steps = inputs.iter().map(Vec::len).max().unwrap_or(0);
        let hd = self.config.d_hidden;
        let embed = g.param(&self.store, self.embed);
        let mut h = g.constant(Tensor::zeros(&[b, hd]));
        let mut c = g.constant(Tensor::zeros(&[b, hd]));
        let mut hs = Vec::with_capacity(steps);
        for t in 0..steps {
            let ids: Vec<usize> = inputs.iter().map(|r| r.get(t).copied().unwrap_or(PAD)).collect();
            let x = g.gather(embed, &ids)?;
            (h, c) = self.cell.step(g, &self.store, x, h, c)?;
            hs.push(h);
        }
        let all = g.concat_rows(&hs)?;
        let w = g.param(&self.store, self.out_w);
        let bias = g.param(&self.store, self.out_b);
        Ok(g.linear(all, w, bias)?)
    }

    /// Teacher-forcing layout: inputs `SOS w…`, targets `w… EOS`, step-major.
    fn teacher_forcing(lines: &[&[usize]]) -> (Vec<Vec<usize>>, Vec<usize>, Vec<bool>) {
        let steps = lines.iter().map(|l| l.len()).max().unwrap_or(0) + 1;
        let inputs: Vec<Vec<usize>> = lines
            .iter()
            .map(|l| std::iter::once(SOS).chain(l.iter().copied()).collect())
            .collect();
        let mut targets = Vec::with_capacity(steps * lines.len());
        let mut mask = Vec::with_capacity(steps * lines.len());
        for t in 0..steps {
            for l in lines {
                let (tok, live) = match t.cmp(&l.len()) {
                    std::cmp::Ordering::Less => (l[t], true),
                    std::cmp::Ordering::Equal => (EOS, true),
                    std::cmp::Ordering::Greater => (PAD, false),
                };
                targets.push(tok);
                mask.push(live);
            }
        }
        (inputs, targets, mask)
    }

    /// Mean next-token cross-entropy node over a batch of lines.
    pub fn nll_graph(&self, g: &mut Graph<T>, lines: &[&[usize]]) -> Result<NodeId, ModelError> {
        if lines.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let (inputs, targets, mask) = Self::teacher_forcing(lines);
        let logits = self.logits_graph(g, &inputs)?;
        Ok(g.cross_entropy(logits, &targets, &mask)?)
    }

    /// Token-weighted mean NLL (nats/token) over `lines`.
    pub fn mean_nll(&self, lines: &[&[usize]]) -> Result<T, ModelError> {
        let mut g = Graph::new();
        let node = self.nll_graph(&mut g, lines)?;
        Ok(g.value(node).item())
    }

    pub fn perplexity(&self, lines: &[&[usize]]) -> Result<T, ModelError> {
        Ok(self.mean_nll(lines)?.exp())
    }

    /// Per-line mean surprisal (nats/token, EOS included) at temperature 1.
    pub fn surprisals(&self, lines: &[&[usize]]) -> Result<Vec<T>, ModelError> {
        if lines.is_empty() {
            return Ok(Vec::new());
        }
        let (inputs, targets, mask) = Self::teacher_forcing(lines);
        let mut g = Graph::new();
        let logits = self.logits_graph(&mut g, &inputs)?;
        let lv = g.value(logits);
        let b = lines.len();
        let mut sums = vec![T::zero(); b];
        for (row, (&tok, &live)) in targets.iter().zip(&mask).enumerate() {
            if live {
                sums[row % b] -= log_softmax_at(lv.row(row), tok);
            }
        }
        Ok(sums
            .into_iter()
            .zip(lines)
            .map(|(s, l)| s / T::of((l.len() + 1) as f64))
            .collect())
    }

    pub fn line_surprisal(&self, line: &[usize]) -> Result<T, ModelError> {
        Ok(self.surprisals(&[line])?[0])
    }

    /// `softmax(logits / τ)` for the token after `SOS context…`.
    pub fn next_distribution(&self, context: &[usize], temperature: f64) -> Result<Vec<T>, ModelError> {
        check_temperature(temperature)?;
        let input: Vec<usize> = std::iter::once(SOS).chain(context.iter().copied()).collect();
        let mut g = Graph::new();
        let logits = self.logits_graph(&mut g, &[input])?;
        let lv = g.value(logits);
        Ok(softmax_row(lv.row(lv.rows() - 1), T::of(temperature)))
    }

    /// Ancestral sampling of `n` lines as one batch.
    pub fn generate_batch<R: Rng + ?Sized>(
        &self,
        n: usize,
        cfg: &SamplerConfig,
        rng: &mut R,
    ) -> Result<Vec<TokenizedLine>, ModelError> {
        check_temperature(cfg.temperature)?;
        self.run_decoder(n, Some(cfg), cfg.max_len, rng)
    }

    /// One line sampled from `SOS` until `EOS` or `cfg.max_len` tokens.
    pub fn generate<R: Rng + ?Sized>(&self, cfg: &SamplerConfig, rng: &mut R) -> Result<TokenizedLine, ModelError> {
        Ok(self.generate_batch(1, cfg, rng)?.remove(0))
    }

    /// [`LmModel::generate`] with an rng seeded from `cfg.seed`.
    pub fn generate_seeded(&self, cfg: &SamplerConfig) -> Result<TokenizedLine, ModelError> {
        self.generate(cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
    }

    pub fn generate_greedy(&self, max_len: usize) -> Result<TokenizedLine, ModelError> {
        let mut rng = idle_rng();
        Ok(self.run_decoder(1, None, max_len, &mut rng)?.remove(0))
    }

    fn run_decoder<R: Rng + ?Sized>(
        &self,
        n: usize,
        sampler: Option<&SamplerConfig>,
        max_len: usize,
        rng: &mut R,
    ) -> Result<Vec<TokenizedLine>, ModelError> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let hd = self.config.d_hidden;
        let mut g = Graph::new();
        let embed = g.param(&self.store, self.embed);
        let w = g.param(&self.store, self.out_w);
        let bias = g.param(&self.store, self.out_b);
        let mut h = g.constant(Tensor::zeros(&[n, hd]));
        let mut c = g.constant(Tensor::zeros(&[n, hd]));
        let mut prev = vec![SOS; n];
        let mut out = vec![Vec::new(); n];
        let mut done = vec![false; n];
        for _ in 0..max_len {
            let x = g.gather(embed, &prev)?;
            (h, c) = self.cell.step(&mut g, &self.store, x, h, c)?;
            let logits = g.linear(h, w, bias)?;
            let lv = g.value(logits).clone();
            for row in 0..n {
                if done[row] {
                    prev[row] = PAD;
                    continue;
                }
                let tok = choose(lv.row(row), sampler, rng);
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

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        ParamFile::from_store(ModelKind::Lm, &self.store).write(path)?;
        let sidecar = Sidecar {
            kind: ModelKind::Lm,
            config: self.config,
            vocab_hash: self.vocab.content_hash(),
            vocab: self.vocab.clone(),
            tags: Vec::new(),
        };
        write_file(&sidecar_path(path), &serde_json::to_string_pretty(&sidecar)?)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let sidecar: Sidecar<LmConfig> = serde_json::from_str(&read_file(&sidecar_path(path))?)?;
        sidecar.check(ModelKind::Lm)?;
        let mut rng = idle_rng();
        let mut model =
            Self::new(sidecar.config, sidecar.vocab, &mut rng).map_err(|e| CheckpointError::Sidecar(e.to_string()))?;
        ParamFile::read(path)?.load_into(ModelKind::Lm, &mut model.store)?;
        Ok(model)
    }

    pub fn load_for_vocab(path: &Path, vocab: &Vocabulary) -> Result<Self, CheckpointError> {
        let model = Self::load(path)?;
        crate::lstm_vae::check_vocab(&model.vocab, vocab)?;
        Ok(model)
    }
}

/// Greedy when `sampler` is `None`; PAD and SOS are never chosen.
fn choose<T: Scalar, R: Rng + ?Sized>(logits: &[T], sampler: Option<&SamplerConfig>, rng: &mut R) -> usize {
    let mut masked = logits.to_vec();
    masked[PAD] = T::neg_infinity();
    masked[SOS] = T::neg_infinity();
    let Some(cfg) = sampler else {
        return argmax(&masked);
    };
    if let Some(k) = cfg.top_k.filter(|&k| k > 0 && k < masked.len()) {
        let mut order: Vec<usize> = (0..masked.len()).collect();
        // stable sort keeps lower ids first among equal logits
        order.sort_by(|&a, &b| masked[b].partial_cmp(&masked[a]).unwrap_or(std::cmp::Ordering::Equal));
        for &i in &order[k..] {
            masked[i] = T::neg_infinity();
        }
    }
    sample_index(&softmax_row(&masked, T::of(cfg.temperature)), rng)
}

/// Trains on SOS-prefixed, EOS-suffixed training lines. Deterministic in
/// `train_cfg.seed`.
pub fn train_lm<T: Scalar>(
    corpus: &Corpus,
    vocab: &Vocabulary,
    config: LmConfig,
    train_cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&LmEpochMetrics),
) -> Result<(LmModel<T>, Vec<LmEpochMetrics>), ModelError> {
    if corpus.train.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    if train_cfg.batch_size == 0 || train_cfg.epochs == 0 {
        return Err(ModelError::InvalidConfig("epochs and batch_size must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut model = LmModel::<T>::new(config, vocab.clone(), &mut rng)?;
    let mut opt = Optimizer::new(train_cfg.optimizer, train_cfg.lr, train_cfg.clip, model.params());
    let validation: Vec<&[usize]> = corpus.validation_lines().map(|l| l.ids.as_slice()).collect();
    let mut order = corpus.train.clone();
    let mut history = Vec::with_capacity(train_cfg.epochs);
    for epoch in 1..=train_cfg.epochs {
        order.shuffle(&mut rng);
        let (mut ce_sum, mut tokens) = (0.0, 0usize);
        for chunk in order.chunks(train_cfg.batch_size) {
            let lines: Vec<&[usize]> = chunk.iter().map(|&i| corpus.lines[i].ids.as_slice()).collect();
            let n_tok: usize = lines.iter().map(|l| l.len() + 1).sum();
            let mut g = Graph::new();
            let loss = model.nll_graph(&mut g, &lines)?;
            let value = g.value(loss).item().to_f64_lossy();
            if !value.is_finite() {
                return Err(ModelError::Diverged { epoch });
            }
            let mut grads = g.backward(loss)?.params(model.params());
            opt.step(model.params_mut(), &mut grads);
            ce_sum += value * n_tok as f64;
            tokens += n_tok;
        }
        let train_ce = ce_sum / tokens as f64;
        let val_perplexity = if validation.is_empty() {
            None
        } else {
            Some(model.perplexity(&validation)?.to_f64_lossy())
        };
        let metrics = LmEpochMetrics {
            epoch,
            train_ce,
            perplexity: train_ce.exp(),
            val_perplexity,
        };
        on_epoch(&metrics);
        history.push(metrics);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, encode_line};
    use crate::numerics::entropy;

    fn untrained() -> LmModel<f64> {
        let vocab = build_vocabulary(&["with a shadow beside all the tears inside"], 1);
        let cfg = LmConfig {
            d_embed: 16,
            d_hidden: 16,
            max_len: 15,
        };
        LmModel::new(cfg, vocab, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn untrained_surprisal_is_near_log_vocab() {
        let lm = untrained();
        let line = encode_line("all the tears inside", lm.vocab(), 15).unwrap();
        let s = lm.line_surprisal(&line.ids).unwrap();
        let ln_v = (lm.vocab().len() as f64).ln();
        assert!((s - ln_v).abs() / ln_v < 0.1, "{s} vs {ln_v}");
    }

    #[test]
    fn batched_surprisal_matches_single() {
        let lm = untrained();
        let a = encode_line("with a shadow", lm.vocab(), 15).unwrap();
        let b = encode_line("all the tears inside beside", lm.vocab(), 15).unwrap();
        let batch = lm.surprisals(&[&a.ids, &b.ids]).unwrap();
        assert!((batch[0] - lm.line_surprisal(&a.ids).unwrap()).abs() < 1e-12);
        assert!((batch[1] - lm.line_surprisal(&b.ids).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn distributions_are_valid_and_temperature_limits_hold() {
        let lm = untrained();
        let ctx = [4, 5];
        let p = lm.next_distribution(&ctx, 1.0).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&x| x >= 0.0));

        let cold = lm.next_distribution(&ctx, 1e-6).unwrap();
        assert!(cold[argmax(&cold)] >= 1.0 - 1e-9);

        let hot = lm.next_distribution(&ctx, 1e6).unwrap();
        let (lo, hi) = hot.iter().fold((1.0f64, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        assert!(hi - lo < 1e-6);

        let e: Vec<f64> = [0.5, 1.0, 2.0]
            .iter()
            .map(|&t| entropy(&lm.next_distribution(&ctx, t).unwrap()))
            .collect();
        assert!(e[0] < e[1] && e[1] < e[2], "{e:?}");

        assert!(matches!(lm.next_distribution(&ctx, 0.0), Err(ModelError::NonPositiveTemperature(_))));
    }

    #[test]
    fn generation_is_seeded_and_cold_limit_is_greedy() {
        let lm = untrained();
        let cfg = SamplerConfig {
            seed: 99,
            ..SamplerConfig::default()
        };
        assert_eq!(lm.generate_seeded(&cfg).unwrap(), lm.generate_seeded(&cfg).unwrap());
        let cold = SamplerConfig {
            temperature: 1e-6,
            ..cfg
        };
        assert_eq!(lm.generate_seeded(&cold).unwrap(), lm.generate_greedy(15).unwrap());
    }

    #[test]
    fn top_k_restricts_support() {
        let logits = vec![0.0, 0.0, 5.0, 4.0, 3.0, 2.0, 1.0];
        let cfg = SamplerConfig {
            top_k: Some(2),
            ..SamplerConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let t = choose(&logits, Some(&cfg), &mut rng);
            assert!(t == 2 || t == 3);
        }
    }

    #[test]
    fn empty_training_split_is_rejected() {
        let (corpus, vocab) = Corpus::build(&[], &Default::default());
        let r = train_lm::<f64>(&corpus, &vocab, LmConfig::default(), &TrainConfig::default(), |_| {});
        assert!(matches!(r, Err(ModelError::EmptyCorpus)));
    }
}
