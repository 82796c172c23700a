mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use subjcheck::config::{ProviderEntry, ProviderKind};
use subjcheck::{cmd_audit, cmd_classify, cmd_evaluate, cmd_stats, Overrides};
use subjcheck_core::corpus::ColumnMapping;
use subjcheck_core::strategies::{ClassifierSpec, DebateMode, DebateSpec, EnsembleMember, EnsembleSpec};
use subjcheck_core::{Error, Label};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_subjcheck"))
}

#[test]
fn tiny_corpus_default_run() {
    let scratch = tempfile::tempdir().unwrap();
    let mut config = common::fixture_config(scratch.path());
    config.split = "tiny".into();
    let out = cmd_classify(&config, None).unwrap();
    assert_eq!(out.predictions.len(), 5);
    assert!(out.failures.is_empty());
    // one call per sentence for a single prompt with parseable replies
    assert_eq!(out.counters.calls.calls, 5);
    assert_eq!(out.counters.calls.cache_hits, 0);
    for name in ["config.toml", "predictions.tsv", "transcripts.jsonl", "failures.jsonl", "counters.json", "report.json"] {
        assert!(out.run_dir.join(name).is_file(), "{name} missing");
    }
    let transcripts = fs::read_to_string(out.run_dir.join("transcripts.jsonl")).unwrap();
    assert_eq!(transcripts.lines().count(), 5);
    let first: serde_json::Value = serde_json::from_str(transcripts.lines().next().unwrap()).unwrap();
    assert_eq!(first["exchanges"][0]["messages"].as_array().unwrap().len(), 14);
    assert_eq!(first["exchanges"][0]["digest"].as_str().unwrap().len(), 64);
}

#[test]
fn repeated_run_is_cached_and_identical() {
    let scratch = tempfile::tempdir().unwrap();
    let config = common::fixture_config(scratch.path());
    let a = cmd_classify(&config, None).unwrap();
    let b = cmd_classify(&config, None).unwrap();
    assert_ne!(a.run_dir, b.run_dir);
    assert_eq!(a.counters.calls.calls, 50);
    assert_eq!(b.counters.calls.calls, 0);
    assert_eq!(b.counters.calls.cache_hits, 50);
    for name in ["predictions.tsv", "transcripts.jsonl", "config.toml"] {
        assert_eq!(fs::read(a.run_dir.join(name)).unwrap(), fs::read(b.run_dir.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn parallelism_does_not_change_predictions() {
    let scratch = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for p in [1, 8] {
        let mut config = common::fixture_config(&scratch.path().join(format!("p{p}")));
        config.apply(&Overrides { parallelism: Some(p), ..Overrides::default() });
        let out = cmd_classify(&config, None).unwrap();
        outputs.push(fs::read(out.predictions_path()).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn offline_miss_fails_without_calling() {
    let scratch = tempfile::tempdir().unwrap();
    let mut config = common::fixture_config(scratch.path());
    config.offline = true;
    let out = cmd_classify(&config, None).unwrap();
    assert_eq!(out.predictions.len(), 0);
    assert_eq!(out.failures.len(), 50);
    assert_eq!(out.counters.calls.calls, 0);
    assert!(out.failures[0].error.contains("offline"));
}

#[test]
fn unscripted_prompt_is_reported_per_sentence() {
    let scratch = tempfile::tempdir().unwrap();
    let mut config = common::fixture_config(scratch.path());
    config.seed = Some(7);
    let out = cmd_classify(&config, None).unwrap();
    assert_eq!(out.failures.len(), 50);
    let manifest = fs::read_to_string(out.run_dir.join("failures.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 50);
    assert!(manifest.contains("HTTP 404"));
}

#[test]
fn debate_and_ensemble_runs_follow_the_call_law() {
    for (mode, per_sentence) in [(DebateMode::SubjVsObj, 3), (DebateMode::NotSubjVsNotObj, 3), (DebateMode::FullScale, 5)] {
        let scratch = tempfile::tempdir().unwrap();
        let mut config = common::heuristic_config(scratch.path());
        config.split = "tiny".into();
        config.classifier = ClassifierSpec::Debate(DebateSpec {
            mode,
            advocate_provider: "scripted".into(),
            judge_provider: "scripted".into(),
            fallback: Label::Objective,
        });
        let out = cmd_classify(&config, None).unwrap();
        assert_eq!(out.counters.calls.calls, 5 * per_sentence, "{mode:?}");
        for p in &out.predictions {
            assert_eq!(p.transcript.as_ref().unwrap().opinions.len(), per_sentence as usize - 1);
        }
    }
}

fn five_member_ensemble() -> ClassifierSpec {
    let single = |id: &str, template: &str, k: usize| EnsembleMember {
        id: id.into(),
        spec: ClassifierSpec::SinglePrompt(
            toml::from_str(&format!("template = \"{template}\"\nprovider = \"scripted\"\nk = {k}")).unwrap(),
        ),
    };
    let debate = |id: &str, mode| EnsembleMember {
        id: id.into(),
        spec: ClassifierSpec::Debate(DebateSpec {
            mode,
            advocate_provider: "scripted".into(),
            judge_provider: "scripted".into(),
            fallback: Label::Objective,
        }),
    };
    ClassifierSpec::Ensemble(EnsembleSpec {
        members: vec![
            single("extended-6", "extended", 6),
            single("simple-0", "simple", 0),
            single("extended-2", "extended", 2),
            debate("debate-so", DebateMode::SubjVsObj),
            debate("debate-full", DebateMode::FullScale),
        ],
        tie_break: Label::Objective,
    })
}

#[test]
fn audit_ranks_disagreements() {
    let scratch = tempfile::tempdir().unwrap();
    let mut config = common::heuristic_config(scratch.path());
    config.classifier = five_member_ensemble();
    let out = cmd_audit(&config, None).unwrap();
    let entries = &out.report.entries;
    let targets = &out.classify.targets;
    let wrong = out
        .classify
        .predictions
        .iter()
        .filter(|p| targets.iter().any(|t| t.id == p.sentence_id && t.gold != Some(p.label)))
        .count();
    assert_eq!(entries.len(), wrong);
    assert!(!entries.is_empty(), "heuristic mock should miss some fixture sentences");
    assert!(entries.windows(2).all(|w| w[0].agreement >= w[1].agreement));
    assert!(entries.iter().all(|e| e.gold != e.predicted && e.votes == 5));
    assert!(entries[0].transcript_ref.starts_with("transcripts.jsonl:"));
    assert!(out.classify.run_dir.join("audit.tsv").is_file());
}

#[test]
fn audit_of_perfect_classifier_is_empty() {
    let scratch = tempfile::tempdir().unwrap();
    let dir = scratch.path();
    let gold = common::fixtures().join("dev_en.tsv");
    fs::copy(&gold, dir.join("dev_en.tsv")).unwrap();
    let raw = fs::read_to_string(&gold).unwrap();
    let mut preds = String::from("sentence_id\tlabel\n");
    for line in raw.lines().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        preds.push_str(&format!("{}\t{}\n", cols[0], cols[2]));
    }
    fs::write(dir.join("oracle.tsv"), preds).unwrap();
    let mut config = common::fixture_config(dir);
    config.classifier = ClassifierSpec::Ensemble(EnsembleSpec {
        members: vec![EnsembleMember {
            id: "oracle".into(),
            spec: ClassifierSpec::ExternalPredictions { path: dir.join("oracle.tsv") },
        }],
        tie_break: Label::Objective,
    });
    let out = cmd_audit(&config, None).unwrap();
    assert!(out.report.is_empty());
    assert_eq!(out.classify.report.as_ref().unwrap().macro_f1, 1.0);
}

#[test]
fn evaluate_examples() {
    let scratch = tempfile::tempdir().unwrap();
    let gold = common::fixtures().join("dev_en.tsv");
    let raw = fs::read_to_string(&gold).unwrap();
    let rows: Vec<(String, String)> = raw
        .lines()
        .skip(1)
        .map(|l| {
            let c: Vec<&str> = l.split('\t').collect();
            (c[0].to_string(), c[2].to_string())
        })
        .collect();

    let write = |name: &str, rows: &[(String, String)]| {
        let path = scratch.path().join(name);
        let body: String = rows.iter().map(|(id, l)| format!("{id}\t{l}\n")).collect();
        fs::write(&path, format!("sentence_id\tlabel\n{body}")).unwrap();
        path
    };

    let perfect = write("perfect.tsv", &rows);
    let r = cmd_evaluate(&perfect, &gold, &ColumnMapping::default()).unwrap();
    assert_eq!(r.macro_f1, 1.0);

    // all-OBJ predictions: SUBJ F1 is 0 by convention
    let all_obj: Vec<_> = rows.iter().map(|(id, _)| (id.clone(), "OBJ".to_string())).collect();
    let r = cmd_evaluate(&write("obj.tsv", &all_obj), &gold, &ColumnMapping::default()).unwrap();
    let n_obj = rows.iter().filter(|(_, l)| l == "OBJ").count() as f64;
    let obj_p = n_obj / rows.len() as f64;
    let obj_f1 = 2.0 * obj_p / (obj_p + 1.0);
    assert_eq!(r.subjective.f1, 0.0);
    assert!((r.macro_f1 - obj_f1 / 2.0).abs() < 1e-12);

    let short = write("short.tsv", &rows[1..]);
    match cmd_evaluate(&short, &gold, &ColumnMapping::default()) {
        Err(Error::Validation(m)) => assert!(m.contains(&rows[0].0), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn stats_examples() {
    let row = cmd_stats(&common::fixtures().join("dev_en.tsv"), &ColumnMapping::default(), None, None).unwrap();
    assert_eq!((row.language.as_str(), row.split.as_str()), ("en", "dev"));
    assert_eq!((row.stats.total, row.stats.obj, row.stats.subj), (50, 31, 19));
    assert!(!row.warnings.is_empty(), "fixture differs from the published dev counts");

    let scratch = tempfile::tempdir().unwrap();
    let empty = scratch.path().join("train_it.tsv");
    fs::write(&empty, "sentence_id\tsentence\tlabel\n").unwrap();
    let row = cmd_stats(&empty, &ColumnMapping::default(), None, None).unwrap();
    assert_eq!((row.stats.total, row.stats.obj, row.stats.subj), (0, 0, 0));
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    for f in ["train_en.tsv", "dev_en.tsv", "tiny_en.tsv", "script.jsonl"] {
        fs::copy(common::fixtures().join(f), dir.join(f)).unwrap();
    }
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn binary_exit_codes() {
    let scratch = tempfile::tempdir().unwrap();
    let base = fs::read_to_string(common::fixtures().join("run.toml")).unwrap();
    let config = write_config(scratch.path(), &base);
    let run_dir = scratch.path().join("out");

    let ok = bin()
        .args(["classify", "--config"])
        .arg(&config)
        .args(["--split", "tiny", "--run-dir"])
        .arg(&run_dir)
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.contains("calls 5"), "{stdout}");

    let second = bin()
        .args(["classify", "--offline", "--split", "tiny", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(second.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&second.stdout).contains("calls 0"));

    let odd = bin().args(["classify", "--k", "3", "--config"]).arg(&config).output().unwrap();
    assert_eq!(odd.status.code(), Some(2));

    let undefined = write_config(scratch.path(), &base.replace("provider = \"scripted\"", "provider = \"gpt\""));
    let out = bin().args(["classify", "--config"]).arg(&undefined).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gpt"));

    let config = write_config(scratch.path(), &base);
    let miss = bin().args(["classify", "--offline", "--config"]).arg(&config).output().unwrap();
    assert_eq!(miss.status.code(), Some(4));

    let preds = run_dir.join("predictions.tsv");
    let eval = bin()
        .args(["evaluate", "--predictions"])
        .arg(&preds)
        .arg("--gold")
        .arg(scratch.path().join("dev_en.tsv"))
        .output()
        .unwrap();
    assert_eq!(eval.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&eval.stderr).contains("no prediction for"));

    let eval = bin()
        .args(["evaluate", "--predictions"])
        .arg(&preds)
        .arg("--gold")
        .arg(scratch.path().join("tiny_en.tsv"))
        .output()
        .unwrap();
    assert_eq!(eval.status.code(), Some(0));
    assert!(run_dir.join("report.json").is_file());

    let stats = bin().arg("stats").arg(scratch.path().join("train_en.tsv")).output().unwrap();
    assert_eq!(stats.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&stats.stdout).contains("train"));

    let select = bin().args(["select", "--id", "dv000", "--config"]).arg(&config).output().unwrap();
    assert_eq!(select.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&select.stdout).lines().count(), 6);
}

#[test]
fn similarity_selection_with_hash_embeddings() {
    let scratch = tempfile::tempdir().unwrap();
    let mut config = common::heuristic_config(scratch.path());
    config.split = "tiny".into();
    config.embedding = Some(toml::from_str("kind = \"hash\"\ndim = 16").unwrap());
    for strategy in [subjcheck::config::StrategyName::Similar, subjcheck::config::StrategyName::Dissimilar] {
        config.strategy = Some(strategy);
        let out = cmd_classify(&config, None).unwrap();
        assert_eq!(out.predictions.len(), 5);
    }
    let summary = subjcheck::cmd_embed(&config).unwrap();
    assert_eq!(summary.sentences, 95);
    assert_eq!(summary.dim, Some(16));
}

#[test]
fn provider_entries_keep_unknown_kinds_out() {
    let entry: Result<ProviderEntry, _> = toml::from_str("kind = \"bard\"\nmodel = \"x\"");
    assert!(entry.is_err());
    let entry: ProviderEntry = toml::from_str("kind = \"scripted\"\ndefault_reply = \"OBJ\"").unwrap();
    assert_eq!(entry.kind, ProviderKind::Scripted);
}
