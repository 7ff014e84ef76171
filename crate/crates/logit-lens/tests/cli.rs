mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{fixtures, small_gpt2_config, write_synthetic_model};
use logit_lens::manifest::RunManifest;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_logit-lens"));
    c.env_remove("LOGIT_LENS_MODEL_DIR");
    c
}

fn run(args: &[&str], model: Option<&Path>, out: &Path) -> Output {
    let mut c = bin();
    c.args(args);
    if let Some(m) = model {
        c.arg("--model").arg(m);
    }
    c.arg("--out").arg(out);
    c.output().unwrap()
}

fn model_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_model(dir.path(), &small_gpt2_config(), 11);
    dir
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn missing_model_is_a_usage_error() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["lens", "--text", "hi"], None, out.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--model"));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn unloadable_model_exits_2() {
    let out = tempfile::tempdir().unwrap();
    let empty = tempfile::tempdir().unwrap();
    let o = run(&["lens", "--text", "hi"], Some(empty.path()), out.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.path().join("manifest.json").exists());
}

#[test]
fn nan_weights_exit_2_and_nan_activations_exit_3() {
    use logit_lens::checkpoint::{config_json, serialize_tensors};
    let cfg = small_gpt2_config();
    let out = tempfile::tempdir().unwrap();

    let nan_dir = tempfile::tempdir().unwrap();
    let mut tensors = logit_lens_core::synthetic::random_tensors(&cfg, 1, 0.2);
    tensors.get_mut("wpe.weight").unwrap().1[0] = f32::NAN;
    std::fs::write(nan_dir.path().join("model.safetensors"), serialize_tensors(&tensors, None).unwrap()).unwrap();
    std::fs::write(nan_dir.path().join("config.json"), config_json(&cfg)).unwrap();
    let o = run(&["lens", "--text", "hi"], Some(nan_dir.path()), out.path());
    assert_eq!(o.status.code(), Some(2));

    // Finite weights whose logits overflow f32.
    let big_dir = tempfile::tempdir().unwrap();
    let mut tensors = logit_lens_core::synthetic::random_tensors(&cfg, 1, 0.2);
    for v in tensors.get_mut("wte.weight").unwrap().1.iter_mut() {
        *v = v.signum() * 1e38;
    }
    std::fs::write(big_dir.path().join("model.safetensors"), serialize_tensors(&tensors, None).unwrap()).unwrap();
    std::fs::write(big_dir.path().join("config.json"), config_json(&cfg)).unwrap();
    let o = run(&["lens", "--text", "hi there"], Some(big_dir.path()), out.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn lens_writes_grid_and_manifest() {
    let model = model_dir();
    let out = tempfile::tempdir().unwrap();
    let text = "Hinton is a prominent figure";
    let o = run(&["lens", "--text", text, "--metric", "max_prob"], Some(model.path()), out.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let grid = logit_lens::report::parse_heatmap_json(&read(&out.path().join("heatmap_max_prob.json"))).unwrap();
    // "H" "inton" " is" " a" " prominent" " figure"
    assert_eq!(grid.n_rows(), 5);
    assert_eq!(grid.n_positions, 6);
    let svg = read(&out.path().join("heatmap_max_prob.svg"));
    assert_eq!(svg.matches(r#"class="cell""#).count(), 30);
    let csv = read(&out.path().join("heatmap_max_prob.csv"));
    assert_eq!(csv.lines().count(), 31);

    let manifest = RunManifest::read(&out.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.command, "lens");
    assert_eq!(manifest.outputs.len(), 3);
    assert_eq!(manifest.inputs.len(), 2);
    assert_eq!(manifest.config["text"], text);
}

#[test]
fn cross_entropy_needs_a_next_token() {
    let model = model_dir();
    let out = tempfile::tempdir().unwrap();
    let o = run(&["lens", "--text", "Hello", "--metric", "cross_entropy"], Some(model.path()), out.path());
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["lens", "--text", "Hello world", "--metric", "cross_entropy"], Some(model.path()), out.path());
    assert!(o.status.success());
    let grid = logit_lens::report::parse_heatmap_json(&read(&out.path().join("heatmap_cross_entropy.json"))).unwrap();
    assert!(grid.cells.iter().all(|c| c.value.is_some() == (c.position == 0)));
}

#[test]
fn sweep_is_reproducible_and_worker_independent() {
    let model = model_dir();
    let dataset = fixtures().join("qa50.jsonl");
    let args = |workers: &'static str| {
        vec![
            "sweep", "--dataset", dataset.to_str().unwrap(), "--k", "3", "--positions", "0,2",
            "--runs", "2", "--limit", "6", "--max-answer-tokens", "3", "--seed", "5",
            "--workers", workers,
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, w) in [(&a, "1"), (&b, "3")] {
        let argv = args(w);
        let argv: Vec<&str> = argv.iter().map(String::as_str).collect();
        let o = run(&argv, Some(model.path()), dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["sweep.json", "sweep.csv", "curves.csv"] {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
    }
    let csv = read(&a.path().join("sweep.csv"));
    assert_eq!(csv.lines().count(), 1 + 2 * 2 + 2);
    let manifest = RunManifest::read(&a.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.seed, 5);
    assert_eq!(manifest.config["n_runs"], 2);
}

#[test]
fn sweep_defaults_to_ten_runs() {
    use clap::Parser;
    use logit_lens::cli::{Cli, Command};
    let cli = Cli::try_parse_from(["logit-lens", "sweep", "--model", "m", "--dataset", "d"]).unwrap();
    let Command::Sweep(args) = cli.command else { panic!() };
    assert_eq!(args.runs, 10);
    assert_eq!(args.confidence, 0.95);
    assert_eq!(args.positions, vec![0, 2, 4]);

    let model = model_dir();
    let out = tempfile::tempdir().unwrap();
    let dataset = fixtures().join("qa50.jsonl");
    let o = run(
        &["sweep", "--dataset", dataset.to_str().unwrap(), "--k", "1", "--positions", "0", "--runs", "1", "--limit", "2", "--max-answer-tokens", "2"],
        Some(model.path()),
        out.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let bad = run(
        &["sweep", "--dataset", dataset.to_str().unwrap(), "--k", "2", "--positions", "2"],
        Some(model.path()),
        out.path(),
    );
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn probe_rows_and_state_round_trip() {
    let model = model_dir();
    let dataset = fixtures().join("currency50.jsonl");
    let live = tempfile::tempdir().unwrap();
    let o = run(
        &["probe", "--dataset", dataset.to_str().unwrap(), "--layers", "all", "--k", "2", "--epochs", "50", "--export-states"],
        Some(model.path()),
        live.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(&live.path().join("probe.csv"));
    assert_eq!(csv.lines().count(), 1 + 5);

    let replay = tempfile::tempdir().unwrap();
    let o = run(
        &["probe", "--from-states", live.path().to_str().unwrap(), "--layers", "all", "--k", "2", "--epochs", "50"],
        Some(model.path()),
        replay.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(&replay.path().join("probe.csv")), csv);
    assert_eq!(read(&replay.path().join("probe.json")), read(&live.path().join("probe.json")));

    let one = tempfile::tempdir().unwrap();
    let o = run(
        &["probe", "--from-states", live.path().to_str().unwrap(), "--layers", "4", "--epochs", "50"],
        Some(model.path()),
        one.path(),
    );
    assert!(o.status.success());
    assert_eq!(read(&one.path().join("probe.csv")).lines().count(), 2);

    let o = run(
        &["probe", "--from-states", live.path().to_str().unwrap(), "--layers", "9"],
        Some(model.path()),
        one.path(),
    );
    assert_eq!(o.status.code(), Some(1));
}
