#![allow(dead_code)]

use std::sync::OnceLock;

use seedline_core::baseline_lm::{train_lm, LmConfig, LmModel};
use seedline_core::corpus::{demo_records, Corpus, CorpusOptions, CorpusRecord, Vocabulary};
use seedline_core::lstm_vae::{train, TrainConfig, VaeConfig, VaeModel};

/// VAE and LM trained with default settings on the bundled demo corpus.
pub struct DemoModels {
    pub corpus: Corpus,
    pub vocab: Vocabulary,
    pub vae: VaeModel<f64>,
    pub lm: LmModel<f64>,
}

pub fn demo_models() -> &'static DemoModels {
    static MODELS: OnceLock<DemoModels> = OnceLock::new();
    MODELS.get_or_init(|| {
        let (corpus, vocab) = Corpus::build(&demo_records(), &CorpusOptions::default());
        let cfg = TrainConfig::default();
        let (vae, _) = train(&corpus, &vocab, VaeConfig::default(), &cfg, |_| {}).unwrap();
        let (lm, _) = train_lm(&corpus, &vocab, LmConfig::default(), &cfg, |_| {}).unwrap();
        DemoModels { corpus, vocab, vae, lm }
    })
}

pub fn records(texts: &[&str]) -> Vec<CorpusRecord> {
    texts
        .iter()
        .map(|t| CorpusRecord {
            text: t.to_string(),
            tag: None,
        })
        .collect()
}

/// Corpus keeping every word (min_count 1) with no validation split.
pub fn closed_corpus(records: &[CorpusRecord]) -> (Corpus, Vocabulary) {
    Corpus::build(
        records,
        &CorpusOptions {
            min_count: 1,
            val_fraction: 0.0,
            ..CorpusOptions::default()
        },
    )
}
