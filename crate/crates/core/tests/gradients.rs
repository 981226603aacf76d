//! Finite-difference checks of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seedline_core::corpus::{Corpus, CorpusOptions, CorpusRecord};
use seedline_core::lstm_vae::{Example, VaeConfig, VaeModel};
use seedline_core::numerics::{grad_check, standard_normal, Graph, ParamStore, Tensor};
use seedline_core::baseline_lm::{LmConfig, LmModel};

const TOL: f64 = 1e-3;
const EPS: f64 = 1e-5;

fn micro_corpus() -> (Corpus, seedline_core::Vocabulary) {
    let records = ["rooted in the light", "the stars are endless tonight"]
        .iter()
        .map(|t| CorpusRecord {
            text: t.to_string(),
            tag: None,
        })
        .collect::<Vec<_>>();
    Corpus::build(
        &records,
        &CorpusOptions {
            min_count: 1,
            val_fraction: 0.0,
            ..CorpusOptions::default()
        },
    )
}

/// Moves every parameter to a random point of moderate magnitude. At the
/// small initialisation scale some gradients are ~1e-9, where central
/// differences are dominated by round-off rather than by derivative errors.
fn spread_params(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v = rng.random_range(-0.3..0.3);
        }
    }
}

fn micro_vae_config() -> VaeConfig {
    VaeConfig {
        d_embed: 8,
        d_hidden: 8,
        d_z: 4,
        ..VaeConfig::default()
    }
}

#[test]
fn vae_objective_matches_finite_differences() {
    let (corpus, vocab) = micro_corpus();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut model = VaeModel::<f64>::new(micro_vae_config(), vocab, vec![], &mut rng).unwrap();
    spread_params(model.params_mut(), &mut rng);
    let batch: Vec<Example> = corpus.lines.iter().map(|l| Example { line: l, tag: None }).collect();
    let eps = Tensor::new(vec![2, 4], standard_normal(8, &mut rng)).unwrap();
    // fixed word-dropout mask so the objective is a deterministic function
    let drop: Vec<Vec<bool>> = batch.iter().map(|e| (0..e.line.len()).map(|_| rng.random::<f64>() < 0.4).collect()).collect();
    assert!(drop.iter().flatten().any(|&d| d), "mask should drop at least one word");
    let dropped = |b: usize, t: usize| drop[b][t];

    let mut g = Graph::new();
    let nodes = model.loss_graph(&mut g, &batch, 0.7, &eps, &dropped).unwrap();
    let analytic = g.backward(nodes.objective).unwrap().params(model.params());

    let mut probe = model.clone();
    let report = grad_check(model.params(), &analytic, EPS, None, |store: &ParamStore<f64>| {
        *probe.params_mut() = store.clone();
        let mut g = Graph::new();
        let nodes = probe.loss_graph(&mut g, &batch, 0.7, &eps, &dropped).unwrap();
        g.value(nodes.objective).item()
    });
    assert!(report.coords_checked > 500);
    assert!(report.max_rel_error < TOL, "{report:?}");
}

#[test]
fn conditional_vae_objective_matches_finite_differences() {
    let records: Vec<CorpusRecord> = [("rooted in the light", "earth"), ("the stars are endless", "night")]
        .iter()
        .map(|(t, tag)| CorpusRecord {
            text: t.to_string(),
            tag: Some(tag.to_string()),
        })
        .collect();
    let (corpus, vocab) = Corpus::build(
        &records,
        &CorpusOptions {
            min_count: 1,
            val_fraction: 0.0,
            ..CorpusOptions::default()
        },
    );
    let config = VaeConfig {
        conditional: true,
        tag_dim: 3,
        ..micro_vae_config()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut model = VaeModel::<f64>::new(config, vocab, corpus.tag_inventory.clone(), &mut rng).unwrap();
    spread_params(model.params_mut(), &mut rng);
    let batch: Vec<Example> = (0..2).map(|i| Example { line: &corpus.lines[i], tag: corpus.tag_id(i) }).collect();
    let eps = Tensor::new(vec![2, 4], standard_normal(8, &mut rng)).unwrap();
    let none = |_: usize, _: usize| false;

    let mut g = Graph::new();
    let nodes = model.loss_graph(&mut g, &batch, 1.0, &eps, &none).unwrap();
    let analytic = g.backward(nodes.objective).unwrap().params(model.params());
    let mut probe = model.clone();
    let report = grad_check(model.params(), &analytic, EPS, None, |store: &ParamStore<f64>| {
        *probe.params_mut() = store.clone();
        let mut g = Graph::new();
        let nodes = probe.loss_graph(&mut g, &batch, 1.0, &eps, &none).unwrap();
        g.value(nodes.objective).item()
    });
    assert!(report.max_rel_error < TOL, "{report:?}");
}

#[test]
fn lm_objective_matches_finite_differences() {
    let (corpus, vocab) = micro_corpus();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let config = LmConfig {
        d_embed: 8,
        d_hidden: 8,
        ..LmConfig::default()
    };
    let mut model = LmModel::<f64>::new(config, vocab, &mut rng).unwrap();
    spread_params(model.params_mut(), &mut rng);
    let lines: Vec<&[usize]> = corpus.lines.iter().map(|l| l.ids.as_slice()).collect();

    let mut g = Graph::new();
    let loss = model.nll_graph(&mut g, &lines).unwrap();
    let analytic = g.backward(loss).unwrap().params(model.params());
    let mut probe = model.clone();
    let report = grad_check(model.params(), &analytic, EPS, None, |store: &ParamStore<f64>| {
        *probe.params_mut() = store.clone();
        probe.mean_nll(&lines).unwrap()
    });
    assert!(report.max_rel_error < TOL, "{report:?}");
}

/// Every graph op on random inputs, over many seeds.
#[test]
fn individual_ops_match_finite_differences() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f64>::new();
        let a = store.insert_uniform("a", &[3, 4], 1.0, &mut rng);
        let w = store.insert_uniform("w", &[4, 5], 1.0, &mut rng);
        let bias = store.insert_uniform("b", &[1, 5], 1.0, &mut rng);
        let emb = store.insert_uniform("emb", &[6, 5], 1.0, &mut rng);
        let targets = [rng.random_range(0..5), rng.random_range(0..5), rng.random_range(0..5)];
        let ids = [rng.random_range(0..6), rng.random_range(0..6), rng.random_range(0..6)];
        let mask = [true, false, true];

        let build = |store: &ParamStore<f64>, g: &mut Graph<f64>| {
            let na = g.param(store, a);
            let nw = g.param(store, w);
            let nb = g.param(store, bias);
            let ne = g.param(store, emb);
            let h = g.linear(na, nw, nb).unwrap();
            let s = g.sigmoid(h);
            let t = g.tanh(h);
            let e = g.gather(ne, &ids).unwrap();
            let m = g.mul(s, e).unwrap();
            let blend = g.row_blend(m, t, &mask).unwrap();
            let x = g.sub(blend, s).unwrap();
            let scaled = g.scale(x, 0.3);
            let ex = g.exp(scaled);
            let left = g.slice_cols(ex, 0, 2).unwrap();
            let right = g.slice_cols(ex, 2, 3).unwrap();
            let cat = g.concat_cols(&[right, left]).unwrap();
            let rows = g.concat_rows(&[cat, t]).unwrap();
            let sm = g.softmax(rows);
            // the plain sum of softmax rows is constant, so weight it
            let sq = g.mul(sm, sm).unwrap();
            let sum = g.sum(sq);
            let ce = g.cross_entropy(cat, &targets, &[true, true, false]).unwrap();
            let ce2 = g.add_scalar(ce, 0.5);
            let all = g.mul(ce2, sum).unwrap();
            g.add(all, ce).unwrap()
        };

        let mut g = Graph::new();
        let out = build(&store, &mut g);
        let analytic = g.backward(out).unwrap().params(&store);
        let report = grad_check(&store, &analytic, EPS, None, |s: &ParamStore<f64>| {
            let mut g = Graph::new();
            let out = build(s, &mut g);
            g.value(out).item()
        });
        assert!(report.max_rel_error < TOL, "seed {seed}: {report:?}");
    }
}


/// Same check over many parameter points. A step of 1e-4 keeps round-off
/// below the tolerance for the smallest (~1e-9) gradient entries, which at
/// 1e-5 can land near the 1e-8 floor of the error metric.
#[test]
fn vae_and_lm_gradients_hold_across_seeds() {
    let (corpus, vocab) = micro_corpus();
    let batch: Vec<Example> = corpus.lines.iter().map(|l| Example { line: l, tag: None }).collect();
    let lines: Vec<&[usize]> = corpus.lines.iter().map(|l| l.ids.as_slice()).collect();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut vae = VaeModel::<f64>::new(micro_vae_config(), vocab.clone(), vec![], &mut rng).unwrap();
        spread_params(vae.params_mut(), &mut rng);
        let eps = Tensor::new(vec![2, 4], standard_normal(8, &mut rng)).unwrap();
        let drop: Vec<Vec<bool>> = batch.iter().map(|e| (0..e.line.len()).map(|_| rng.random::<f64>() < 0.4).collect()).collect();
        let dropped = |b: usize, t: usize| drop[b][t];
        let mut g = Graph::new();
        let nodes = vae.loss_graph(&mut g, &batch, 0.5, &eps, &dropped).unwrap();
        let analytic = g.backward(nodes.objective).unwrap().params(vae.params());
        let mut probe = vae.clone();
        let report = grad_check(vae.params(), &analytic, 1e-4, None, |s: &ParamStore<f64>| {
            *probe.params_mut() = s.clone();
            let mut g = Graph::new();
            let nodes = probe.loss_graph(&mut g, &batch, 0.5, &eps, &dropped).unwrap();
            g.value(nodes.objective).item()
        });
        assert!(report.max_rel_error < TOL, "vae seed {seed}: {report:?}");

        let config = LmConfig {
            d_embed: 8,
            d_hidden: 8,
            ..LmConfig::default()
        };
        let mut lm = LmModel::<f64>::new(config, vocab.clone(), &mut rng).unwrap();
        spread_params(lm.params_mut(), &mut rng);
        let mut g = Graph::new();
        let loss = lm.nll_graph(&mut g, &lines).unwrap();
        let analytic = g.backward(loss).unwrap().params(lm.params());
        let mut probe = lm.clone();
        let report = grad_check(lm.params(), &analytic, 1e-4, None, |s: &ParamStore<f64>| {
            *probe.params_mut() = s.clone();
            probe.mean_nll(&lines).unwrap()
        });
        assert!(report.max_rel_error < TOL, "lm seed {seed}: {report:?}");
    }
}
