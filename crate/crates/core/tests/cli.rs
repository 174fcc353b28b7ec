use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use seedprior::commands::content_hash;
use seedprior::world::{load_pairs, save_pairs};

const SMALL: &[&str] = &[
    "--world.items_per_genre=24",
    "--network.width=16",
    "--network.num_blocks=1",
    "--train.total_steps=200",
    "--train.warmup=20",
    "--train.batch_size=32",
    "--sampler.steps=16",
    "--eval.samples_per_query=4",
    "--eval.max_queries=12",
];

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seedprior"))
        .args(args)
        .args(SMALL)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn check_manifest(dir: &Path, command: &str) {
    let m = read_json(&dir.join("manifest.json"));
    assert_eq!(m["command"], command);
    assert!(m["config_hash"].as_str().unwrap().starts_with("sha256:"));
    assert!(m["log"]["elapsed_s"].as_f64().unwrap() >= 0.0);
    let outputs = m["outputs"].as_array().unwrap();
    assert!(!outputs.is_empty());
    for f in outputs {
        let bytes = std::fs::read(dir.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["hash"].as_str().unwrap(), content_hash(&bytes));
    }
}

#[test]
fn synth_train_sample_eval_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let (world, model, samples, metrics, sweep) = (
        tmp.path().join("world"),
        tmp.path().join("model"),
        tmp.path().join("samples"),
        tmp.path().join("metrics"),
        tmp.path().join("sweep"),
    );
    ok(&["synth", "--out", p(&world)]);
    check_manifest(&world, "synth");
    ok(&["train", "--data", p(&world), "--out", p(&model)]);
    check_manifest(&model, "train");
    assert_eq!(std::fs::read_to_string(model.join("train_log.jsonl")).unwrap().lines().count(), 100);
    let ckpt = model.join("model.ckpt");

    ok(&[
        "sample", "--ckpt", p(&ckpt), "--data", p(&world), "--omega", "2", "--steer", "3:+0.08", "--slerp",
        "genre-1:0.55", "--seed", "4", "--n-per-query", "3", "--out", p(&samples),
    ]);
    check_manifest(&samples, "sample");
    let sampler = read_json(&samples.join("sampler.json"));
    assert_eq!(sampler["omega"], 2.0);
    assert_eq!(sampler["steers"][0]["strength"], 0.08);

    let stdout = ok(&["eval", "--ckpt", p(&ckpt), "--data", p(&world), "--k-list", "10,100", "--out", p(&metrics)]);
    check_manifest(&metrics, "eval");
    let m = read_json(&metrics.join("metrics.json"));
    for key in ["fmd", "miscs", "triplet_accuracy", "entropy@10", "entropy@100", "recall@10", "recall@100"] {
        assert!(m[key].is_number(), "{key} missing from {m}");
    }
    assert_eq!(serde_json::from_str::<Value>(&stdout).unwrap(), m);

    let from_dump = tmp.path().join("dump_eval");
    ok(&["eval", "--samples", p(&samples.join("samples.emb1")), "--data", p(&world), "--out", p(&from_dump)]);
    assert_eq!(read_json(&from_dump.join("metrics.json"))["samples_per_query"], 3);

    let table = ok(&["sweep", "--ckpt", p(&ckpt), "--data", p(&world), "--omegas", "-1,0,3", "--out", p(&sweep)]);
    check_manifest(&sweep, "sweep");
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].contains("R@10") && lines[0].contains("MISCS") && lines[0].contains("H@50"));
    for w in ["-1", "0", "3"] {
        assert!(sweep.join(format!("metrics_omega_{w}.json")).exists(), "{w}");
    }
}

#[test]
fn commands_are_replayable() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["synth", "--out", p(&a)]);
    ok(&["synth", "--out", p(&b)]);
    for f in ["catalog.emb1", "pairs_train.emb1", "pairs_eval.emb1", "config.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let (ma, mb) = (tmp.path().join("ma"), tmp.path().join("mb"));
    ok(&["train", "--data", p(&a), "--out", p(&ma), "--kind", "regression"]);
    ok(&["train", "--data", p(&a), "--out", p(&mb), "--kind", "regression"]);
    assert_eq!(std::fs::read(ma.join("model.ckpt")).unwrap(), std::fs::read(mb.join("model.ckpt")).unwrap());
    let strip_log = |d: &Path| {
        let mut m = read_json(&d.join("manifest.json"));
        m.as_object_mut().unwrap().remove("log");
        m
    };
    assert_eq!(strip_log(&ma), strip_log(&mb));
}

#[test]
fn unconditional_sampling_ignores_the_query() {
    let tmp = tempfile::tempdir().unwrap();
    let (world, model) = (tmp.path().join("w"), tmp.path().join("m"));
    ok(&["synth", "--out", p(&world)]);
    ok(&["train", "--data", p(&world), "--out", p(&model)]);
    let ckpt = model.join("model.ckpt");
    let mut pairs = load_pairs(&world.join("pairs_eval.emb1")).unwrap();
    pairs.pairs.truncate(5);
    let dim = pairs.pairs[0].query.len();
    let first = tmp.path().join("q1.emb1");
    save_pairs(&first, dim, &pairs).unwrap();
    for pr in &mut pairs.pairs {
        pr.query.iter_mut().for_each(|v| *v = -3.0 * *v + 0.5);
    }
    let second = tmp.path().join("q2.emb1");
    save_pairs(&second, dim, &pairs).unwrap();

    let sample = |queries: &Path, omega: &str, out: &str| {
        let dir = tmp.path().join(out);
        ok(&[
            "sample", "--ckpt", p(&ckpt), "--data", p(&world), "--queries", p(queries), "--omega", omega, "--n-per-query",
            "2", "--out", p(&dir),
        ]);
        std::fs::read(dir.join("samples.emb1")).unwrap()
    };
    assert_eq!(sample(&first, "-1", "u1"), sample(&second, "-1", "u2"));
    assert_ne!(sample(&first, "0", "c1"), sample(&second, "0", "c2"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| run(args).status.code().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(code(&["synth", "--out", p(&out), "--train.nope=1"]), 2);
    assert_eq!(code(&["synth", "--out", p(&out), "--world.ambiguity=0"]), 2);
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{").unwrap();
    assert_eq!(code(&["--config", p(&bad), "synth", "--out", p(&out)]), 2);
    let missing = tmp.path().join("missing");
    assert_eq!(code(&["train", "--data", p(&missing), "--out", p(&out)]), 3);

    let world = tmp.path().join("w");
    ok(&["synth", "--out", p(&world)]);
    let junk = tmp.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    assert_eq!(code(&["eval", "--ckpt", p(&junk), "--data", p(&world), "--out", p(&out)]), 3);

    let o = run(&["train", "--data", p(&world), "--out", p(&out), "--train.peak_lr=1e30", "--train.total_steps=50", "--train.warmup=1"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    let stderr = String::from_utf8(o.stderr).unwrap();
    assert_eq!(stderr.trim().lines().count(), 1);
    assert!(stderr.starts_with("error: "));
}
