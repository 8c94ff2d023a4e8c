use std::fs;

use et_core::judges::StrategyKind;
use et_core::pipeline::{run, ClassifierMode, RunConfig};
use et_core::released::{load_released_dir, replay_released};
use et_core::signals::{extract_all, TextPatterns};
use et_core::synthetic::{generate, SyntheticConfig};
use et_core::Execution;

fn small(seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        n_knowable: 40,
        n_unknowable: 40,
        n_models: 3,
        ..SyntheticConfig::with_seed(seed)
    }
}

fn config(dir: &std::path::Path, out: &str) -> RunConfig {
    let mut cfg = RunConfig::new(dir.join("queries.csv"), dir.join("traces.jsonl"), dir.join(out));
    cfg.classifier = Some(ClassifierMode::Replay(dir.join("replay.jsonl")));
    cfg
}

#[test]
fn run_is_deterministic_across_execution_modes() {
    let tmp = tempfile::tempdir().unwrap();
    generate(&small(1)).write(tmp.path()).unwrap();
    let par = run(&config(tmp.path(), "par"), Execution::Parallel).unwrap();
    let seq = run(&config(tmp.path(), "seq"), Execution::Sequential).unwrap();
    assert_eq!(par.surface, seq.surface);
    assert_eq!(par.files.len(), 7);
    for (a, b) in par.files.iter().zip(&seq.files) {
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap(), "{}", a.display());
    }
    let again = run(&config(tmp.path(), "par"), Execution::Parallel).unwrap();
    assert_eq!(again.surface, par.surface);
}

#[test]
fn surface_shape_and_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = generate(&small(2));
    synth.write(tmp.path()).unwrap();
    let summary = run(&config(tmp.path(), "out"), Execution::default()).unwrap();
    let surface = summary.surface.unwrap();
    assert!(surface.is_consistent());
    assert_eq!(surface.cells.len(), 12);
    assert_eq!(surface.n_traces, 240);
    for b in [0.1, 0.2, 0.3] {
        assert_eq!(surface.get(StrategyKind::NoJudge, b), Some(surface.baseline_accuracy));
    }
    // baseline from the drawn labels, independent of the evaluator
    let counted = synth
        .labels
        .iter()
        .filter(|(k, l)| {
            let q = synth.queries.iter().find(|q| q.query_id == k.query_id).unwrap();
            match q.truth_status {
                et_core::TruthStatus::Determined => **l == et_core::Label::Correct,
                et_core::TruthStatus::Underdetermined => **l == et_core::Label::Refusal,
            }
        })
        .count();
    assert_eq!(surface.baseline_accuracy, counted as f64 / 240.0);
}

#[test]
fn validate_only_leaves_no_output() {
    let tmp = tempfile::tempdir().unwrap();
    generate(&small(3)).write(tmp.path()).unwrap();
    let mut cfg = config(tmp.path(), "out");
    cfg.validate_only = true;
    let summary = run(&cfg, Execution::default()).unwrap();
    assert_eq!(summary.n_traces, 240);
    assert!(summary.files.is_empty());
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn released_table_replay_matches_the_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = generate(&small(4));
    synth.write(tmp.path()).unwrap();
    let summary = run(&config(tmp.path(), "out"), Execution::default()).unwrap();

    let corpus = synth.corpus();
    let (_, signals) = extract_all(&corpus.traces, &TextPatterns::default(), Execution::default());
    let mut csv = String::from("query_id,model_id,knowable,label,mean_entropy,response_length\n");
    for s in &signals {
        let q = &corpus.queries[&s.key.query_id];
        let knowable = q.truth_status == et_core::TruthStatus::Determined;
        csv.push_str(&format!(
            "{},{},{},{},{:?},{}\n",
            s.key.query_id,
            s.key.model_id,
            u8::from(knowable),
            synth.labels[&s.key],
            s.mean_entropy,
            s.response_length
        ));
    }
    let released = tmp.path().join("released");
    fs::create_dir_all(&released).unwrap();
    fs::write(released.join("exp27_synthetic.csv"), csv).unwrap();

    let rows = load_released_dir(&released).unwrap().unwrap();
    let replay = replay_released(&rows, &[0.1, 0.2, 0.3], Execution::default()).unwrap();
    assert_eq!(Some(replay.surface), summary.surface);
}
