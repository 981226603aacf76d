//! Command-line contracts: exit codes, determinism, config files and
//! output formats.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_seedline");
const SMALL: [&str; 6] = ["--d-embed", "16", "--d-hidden", "32", "--epochs", "4"];

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Small {
    vae: PathBuf,
    lm: PathBuf,
}

/// Small VAE and LM trained on the demo corpus through the binary.
fn small() -> &'static Small {
    static SMALL_MODELS: OnceLock<Small> = OnceLock::new();
    SMALL_MODELS.get_or_init(|| {
        let dir = scratch("small");
        let vae = dir.join("vae.ckpt");
        let lm = dir.join("lm.ckpt");
        ok(&[&["train-vae", "--out", s(&vae), "--d-z", "8"], &SMALL[..]].concat());
        ok(&[&["train-lm", "--out", s(&lm)], &SMALL[..]].concat());
        Small { vae, lm }
    })
}

fn jsonl(bytes: &[u8]) -> Vec<Value> {
    String::from_utf8(bytes.to_vec())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn missing_corpus_is_a_usage_error() {
    let dir = scratch("missing");
    let out = run(&["train-vae", "--corpus", "/no/such/corpus.jsonl", "--out", s(&dir.join("v.ckpt"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("corpus file not found"));
    assert!(!dir.join("v.ckpt").exists());
}

#[test]
fn missing_required_flags_and_bad_values_exit_two() {
    let m = small();
    for args in [
        vec!["train-lm"],
        vec!["generate", "--vae", s(&m.vae), "--lm", s(&m.lm)],
        vec!["generate", "--vae", s(&m.vae), "--lm", s(&m.lm), "--n", "0"],
        vec!["generate", "--vae", s(&m.vae), "--lm", s(&m.lm), "--n", "5", "--temperature", "0"],
        vec!["generate", "--vae", s(&m.vae), "--lm", s(&m.lm), "--n", "5", "--band-quantiles", "0.8", "0.2"],
        vec!["generate", "--vae", "/no/such.ckpt", "--lm", s(&m.lm), "--n", "5"],
        vec!["generate", "--n", "5", "--vae", s(&m.vae), "--lm", s(&m.lm), "--band-absolute", "1", "2", "--band-quantiles", "0.2", "0.8"],
        vec!["export", "--session", "/no/such/session.json"],
        vec!["no-such-command"],
    ] {
        assert_eq!(run(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let dir = scratch("seed");
    let mut bytes = Vec::new();
    for name in ["a.ckpt", "b.ckpt"] {
        let path = dir.join(name);
        ok(&[&["train-vae", "--out", s(&path), "--seed", "7", "--d-z", "8"], &SMALL[..]].concat());
        bytes.push((std::fs::read(&path).unwrap(), std::fs::read(dir.join(format!("{name}.metrics.jsonl"))).unwrap()));
    }
    assert_eq!(bytes[0], bytes[1]);
    let other = dir.join("c.ckpt");
    ok(&[&["train-vae", "--out", s(&other), "--seed", "8", "--d-z", "8"], &SMALL[..]].concat());
    assert_ne!(std::fs::read(&other).unwrap(), bytes[0].0);
}

#[test]
fn metrics_log_has_one_record_per_epoch() {
    let m = small();
    let log = std::fs::read(format!("{}.metrics.jsonl", m.vae.display())).unwrap();
    let records = jsonl(&log);
    assert_eq!(records.len(), 4);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r["epoch"], i + 1);
        assert!(r["recon"].as_f64().unwrap() > 0.0);
        assert!(r["kl"].as_f64().unwrap() >= 0.0);
    }
    let lm_log = jsonl(&std::fs::read(format!("{}.metrics.jsonl", m.lm.display())).unwrap());
    assert_eq!(lm_log.len(), 4);
    assert!(lm_log[3]["perplexity"].as_f64().unwrap() < lm_log[0]["perplexity"].as_f64().unwrap());
}

#[test]
fn config_file_values_apply_and_flags_win() {
    let dir = scratch("config");
    let config = dir.join("run.json");
    std::fs::write(&config, r#"{"epochs": 2, "d_embed": 8, "d-hidden": 8, "seed": 3}"#).unwrap();
    let out = dir.join("lm.ckpt");
    ok(&["train-lm", "--config", s(&config), "--out", s(&out), "--seed", "5"]);
    let record: Value = serde_json::from_slice(&std::fs::read(dir.join("lm.ckpt.config.json")).unwrap()).unwrap();
    assert_eq!(record["epochs"], 2);
    assert_eq!(record["d_hidden"], 8);
    assert_eq!(record["seed"], 5);
    assert_eq!(jsonl(&std::fs::read(dir.join("lm.ckpt.metrics.jsonl")).unwrap()).len(), 2);

    // the recorded run replays to the same checkpoint
    let replay = dir.join("replay.ckpt");
    ok(&["train-lm", "--config", s(&dir.join("lm.ckpt.config.json")), "--out", s(&replay), "--metrics", s(&dir.join("r.jsonl"))]);
    assert_eq!(std::fs::read(&replay).unwrap(), std::fs::read(&out).unwrap());

    std::fs::write(&config, r#"{"epochz": 2}"#).unwrap();
    assert_eq!(run(&["train-lm", "--config", s(&config), "--out", s(&out)]).status.code(), Some(2));
    std::fs::write(&config, "not json").unwrap();
    assert_eq!(run(&["train-lm", "--config", s(&config), "--out", s(&out)]).status.code(), Some(2));
}

#[test]
fn generate_writes_scored_records_deterministically() {
    let m = small();
    let args = ["generate", "--vae", s(&m.vae), "--lm", s(&m.lm), "--n", "60", "--seed", "11", "--reference-size", "200"];
    let first = ok(&args).stdout;
    assert_eq!(ok(&args).stdout, first);
    let records = jsonl(&first);
    assert!(!records.is_empty() && records.len() <= 60);
    let mut texts = std::collections::HashSet::new();
    for r in &records {
        let keys: Vec<&str> = r.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, ["in_band", "novelty", "provenance", "surprisal", "text"]);
        assert!(texts.insert(r["text"].as_str().unwrap().to_string()));
        assert_eq!(r["provenance"]["kind"], "prior");
        assert_eq!(r["provenance"]["latent"].as_array().unwrap().len(), 8);
    }
    let other = ok(&["generate", "--vae", s(&m.vae), "--lm", s(&m.lm), "--n", "60", "--seed", "12", "--reference-size", "200"]).stdout;
    assert_ne!(other, first);
}

#[test]
fn quartile_band_keeps_about_half() {
    let m = small();
    let dir = scratch("band");
    let all = dir.join("all.jsonl");
    let kept = dir.join("kept.jsonl");
    let common = ["generate", "--vae", s(&m.vae), "--lm", s(&m.lm), "--n", "600", "--seed", "5"];
    ok(&[&common[..], &["--out", s(&all)]].concat());
    ok(&[&common[..], &["--out", s(&kept), "--band-quantiles", "0.25", "0.75"]].concat());
    let all = jsonl(&std::fs::read(all).unwrap());
    let kept = jsonl(&std::fs::read(kept).unwrap());
    assert!(kept.iter().all(|r| r["in_band"] == true));
    // without band flags the pool is unfiltered but annotated with the same band
    let annotated: Vec<&Value> = all.iter().filter(|r| r["in_band"] == true).collect();
    assert_eq!(annotated.len(), kept.len());
    let fraction = kept.len() as f64 / all.len() as f64;
    assert!((fraction - 0.5).abs() < 0.15, "kept {} of {}", kept.len(), all.len());
}

#[test]
fn mismatched_checkpoints_are_refused() {
    let m = small();
    let dir = scratch("mismatch");
    let corpus = dir.join("other.jsonl");
    std::fs::write(&corpus, "{\"text\": \"a tiny other corpus\"}\n{\"text\": \"with its own words\"}\n").unwrap();
    let lm = dir.join("lm.ckpt");
    ok(&["train-lm", "--corpus", s(&corpus), "--min-count", "1", "--val-fraction", "0", "--out", s(&lm), "--epochs", "1", "--d-embed", "4", "--d-hidden", "4"]);
    let out = run(&["generate", "--vae", s(&m.vae), "--lm", s(&lm), "--n", "5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vocabulary"));
    // an LM checkpoint is not a VAE checkpoint
    assert_eq!(run(&["generate", "--vae", s(&m.lm), "--lm", s(&m.lm), "--n", "5"]).status.code(), Some(2));
}

#[test]
fn score_reports_every_line() {
    let m = small();
    let dir = scratch("score");
    let lines = dir.join("lines.txt");
    std::fs::write(&lines, "Rooted in the light!\n\nzebra quartz violin\nthe stars are endless tonight\n").unwrap();
    let report: Value = serde_json::from_slice(&ok(&["score", "--lm", s(&m.lm), "--lines", s(&lines)]).stdout).unwrap();
    let scored = report["lines"].as_array().unwrap();
    assert_eq!(scored.len(), 3);
    assert_eq!(scored[0]["text"], "rooted in the light");
    assert_eq!(scored[1]["novelty"], 1.0);
    for line in scored {
        assert!(line["surprisal"].as_f64().unwrap() > 0.0);
    }
    for key in ["min", "q25", "q50", "q75", "max"] {
        assert!(report["quantiles"][key].is_number());
    }
    let absolute: Value =
        serde_json::from_slice(&ok(&["score", "--lm", s(&m.lm), "--lines", s(&lines), "--band-absolute", "0", "1000"]).stdout).unwrap();
    assert!(absolute["lines"].as_array().unwrap().iter().all(|l| l["in_band"] == true));

    std::fs::write(&lines, "\n\n").unwrap();
    assert_eq!(run(&["score", "--lm", s(&m.lm), "--lines", s(&lines)]).status.code(), Some(2));
    std::fs::write(&lines, "one two three four five six seven eight nine ten eleven twelve thirteen fourteen fifteen sixteen\n").unwrap();
    assert_eq!(run(&["score", "--lm", s(&m.lm), "--lines", s(&lines)]).status.code(), Some(2));
}

#[test]
fn export_prints_a_saved_session() {
    use seedline_core::generated::{GeneratedLine, Provenance};
    use seedline_core::wundt::{BandConfig, ResolvedBand};
    use seedline_service::{CurationSession, ModelRefs};

    let dir = scratch("export");
    let mut session = CurationSession::new(
        "abc".into(),
        "2026-01-01T00:00:00Z".into(),
        ModelRefs {
            vae: "v".into(),
            lm: "l".into(),
            vocab_hash: "h".into(),
        },
        BandConfig::default(),
        ResolvedBand::UNBOUNDED,
    );
    let lines = ["first line", "second line", "third line"].map(|t| GeneratedLine {
        id: 0,
        text: t.into(),
        tokens: vec![4, 5],
        provenance: Provenance::Prior {
            latent: vec![0.0],
            temperature: None,
        },
        score: None,
    });
    session.append(lines.to_vec());
    for id in [3, 1] {
        session.pin(id).unwrap();
    }
    session.arrange(vec![3, 1]).unwrap();
    let path = dir.join("abc.json");
    std::fs::write(&path, session.to_json()).unwrap();

    assert_eq!(ok(&["export", "--session", s(&path)]).stdout, b"third line\nfirst line");
    let json = ok(&["export", "--session", s(&path), "--format", "json"]).stdout;
    assert_eq!(String::from_utf8(json).unwrap(), session.to_json());
    assert_eq!(run(&["export", "--session", s(&path), "--format", "pdf"]).status.code(), Some(2));

    session.arrangement.push(2);
    std::fs::write(&path, session.to_json()).unwrap();
    assert_eq!(run(&["export", "--session", s(&path)]).status.code(), Some(2));
}
