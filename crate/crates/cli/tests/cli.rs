use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 11

[corpus]
factors = ["gender"]
n_per_cell = 60

[generator]
n_languages = 2
filler_per_domain = 20
min_len = 6
max_len = 10
marker_prob = [0.3, 0.0]

[encoder]
max_len = 16
d_model = 8
n_layers = 1
n_heads = 2
d_ff = 16

[specialize]
learning_rates = [1e-3]
sizes = { gender = 20, age = 10 }
train = { epochs = 2 }

[finetune.train]
epochs = 2
learning_rates = [1e-3]

[grid]
factors = ["gender"]
methods = ["none", "mtl-cls"]
mono_multi = ["multi"]
domains = ["in"]
languages = [0]
portions = ["X"]
tasks = ["SA", "AC-SA"]
seeds = [0]
workers = 2

[analysis]
projection_size = 16
tsne = { perplexity = 4.0, iterations = 200 }
"#;

fn sodalab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sodalab"))
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .expect("spawn sodalab")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Run {
    _tmp: tempfile::TempDir,
    config: PathBuf,
    out: PathBuf,
}

impl Run {
    fn new(config: &str) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("run.toml");
        std::fs::write(&path, config).unwrap();
        let out = tmp.path().join("out").join("nested");
        Self {
            config: path,
            out,
            _tmp: tmp,
        }
    }

    fn run(&self, args: &[&str]) -> Output {
        let mut all = vec!["--config", self.config.to_str().unwrap(), "--out", self.out.to_str().unwrap()];
        all.extend_from_slice(args);
        sodalab(&all)
    }

    fn ok(&self, args: &[&str]) -> Output {
        let o = self.run(args);
        assert_eq!(code(&o), 0, "{args:?} failed: {}", stderr(&o));
        o
    }

    fn read(&self, rel: &str) -> String {
        std::fs::read_to_string(self.out.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

/// Byte equality of every artifact except the log and the config snapshot
/// (which records the output path).
fn assert_same_artifacts(a: &Path, b: &Path) {
    let fa = files_under(a);
    let fb = files_under(b);
    let rel = |root: &Path, fs: &[PathBuf]| -> Vec<PathBuf> {
        fs.iter().map(|f| f.strip_prefix(root).unwrap().to_path_buf()).collect()
    };
    assert_eq!(rel(a, &fa), rel(b, &fb));
    for (x, y) in fa.iter().zip(&fb) {
        let name = x.file_name().unwrap().to_str().unwrap();
        if name == "run.log" || name == "resolved_config.toml" {
            continue;
        }
        assert!(std::fs::read(x).unwrap() == std::fs::read(y).unwrap(), "{} differs", x.display());
    }
}

#[test]
fn generate_writes_manifest_and_is_reproducible() {
    let a = Run::new(TINY);
    let b = Run::new(TINY);
    a.ok(&["generate"]);
    b.ok(&["generate"]);
    let manifest = a.read("corpus/gender/manifest.csv");
    let mut lines = manifest.lines();
    assert_eq!(lines.next(), Some("language,domain,group,n_specialization,n_SA,n_TD,n_AC"));
    // 2 languages x 2 domains x 2 groups
    assert_eq!(lines.count(), 8);
    for f in ["train", "dev", "test", "specialization"] {
        assert!(!a.read(&format!("corpus/gender/{f}.jsonl")).is_empty());
    }
    assert!(a.out.join("corpus/gender/vocab.txt").exists());
    assert!(a.out.join("corpus/resolved_config.toml").exists());
    assert!(a.out.join("corpus/run.log").exists());
    assert_same_artifacts(&a.out.join("corpus"), &b.out.join("corpus"));

    let c = Run::new(TINY);
    c.ok(&["generate", "--seed", "12"]);
    assert_ne!(a.read("corpus/gender/train.jsonl"), c.read("corpus/gender/train.jsonl"));
}

#[test]
fn manifest_counts_match_corpus_files() {
    let r = Run::new(TINY);
    r.ok(&["generate"]);
    let mut spec = 0;
    let mut task = 0;
    for line in r.read("corpus/gender/manifest.csv").lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        spec += f[3].parse::<usize>().unwrap();
        task += f[4].parse::<usize>().unwrap();
        assert_eq!(f[4], f[5]);
        assert!(f[6].parse::<usize>().unwrap() <= f[4].parse::<usize>().unwrap());
    }
    let count = |f: &str| r.read(&format!("corpus/gender/{f}.jsonl")).lines().count();
    assert_eq!(spec, count("specialization"));
    assert_eq!(task, count("train") + count("dev") + count("test"));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let r = Run::new(&format!("{TINY}\n[extra]\nfoo = 1\n"));
    let o = r.run(&["generate"]);
    assert_eq!(code(&o), 1);
    let r = Run::new("[encoder]\nd_modle = 8\n");
    assert_eq!(code(&r.run(&["generate"])), 1);
}

#[test]
fn bad_arguments_exit_with_one() {
    assert_eq!(code(&sodalab(&["frobnicate"])), 1);
    assert_eq!(code(&sodalab(&["specialize", "--method", "mtl-xyz"])), 1);
    assert_eq!(code(&sodalab(&["--help"])), 0);
}

#[test]
fn missing_upstream_artifacts_name_their_producer() {
    let r = Run::new(TINY);
    let o = r.run(&["analyze"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("results.csv") && stderr(&o).contains("sodalab grid"), "{}", stderr(&o));

    let o = r.run(&["specialize"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("sodalab generate"), "{}", stderr(&o));

    r.ok(&["generate"]);
    let o = r.run(&["finetune", "--checkpoint", "/nonexistent/model.ckpt"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("sodalab specialize"), "{}", stderr(&o));
}

#[test]
fn specialize_method_flag_selects_mtl_ctx() {
    let r = Run::new(TINY);
    r.ok(&["generate"]);
    r.ok(&["specialize", "--method", "mtl-ctx"]);
    let summary: serde_json::Value = serde_json::from_str(&r.read("specialize/gender-mtl-ctx-multi-in.json")).unwrap();
    assert_eq!(summary["label"], "MTL-W (CTX)");
    assert_eq!(summary["method"], "mtl-ctx");
    let snapshot: toml::Table = toml::from_str(&r.read("specialize/resolved_config.toml")).unwrap();
    assert_eq!(snapshot["specialize"]["method"].as_str(), Some("mtl-ctx"));
    let log = r.read("specialize/gender-mtl-ctx-multi-in.train_log.jsonl");
    assert_eq!(log.lines().count(), 2);
    assert!(log.contains("eta_socio"));
}

#[test]
fn full_pipeline_is_deterministic() {
    let runs = [Run::new(TINY), Run::new(TINY)];
    for r in &runs {
        r.ok(&["generate"]);
        r.ok(&["specialize", "--method", "mtl-cls"]);
        r.ok(&[
            "finetune",
            "--task",
            "AC-SA",
            "--checkpoint",
            r.out.join("specialize/gender-mtl-cls-multi-in.ckpt").to_str().unwrap(),
        ]);
        r.ok(&["grid"]);
        r.ok(&["analyze"]);
        r.ok(&["report"]);
        r.ok(&[
            "project",
            "--checkpoint",
            r.out.join("specialize/gender-mtl-cls-multi-in.ckpt").to_str().unwrap(),
        ]);
    }
    let [a, b] = &runs;
    for dir in ["corpus", "specialize", "grid", "analysis", "report", "projection"] {
        assert!(a.out.join(dir).join("resolved_config.toml").exists(), "{dir}");
        assert!(a.out.join(dir).join("run.log").exists(), "{dir}");
        assert_same_artifacts(&a.out.join(dir), &b.out.join(dir));
    }
    // finetune records the checkpoint path, which differs between runs
    let fa: serde_json::Value = serde_json::from_str(&a.read("finetune/result.json")).unwrap();
    let fb: serde_json::Value = serde_json::from_str(&b.read("finetune/result.json")).unwrap();
    assert_eq!(fa["test_f1"], fb["test_f1"]);
    assert_eq!(fa["dev_history"], fb["dev_history"]);

    assert_eq!(a.read("grid/results.csv").lines().count(), 5);
    assert!(a.read("analysis/regression.csv").contains("RMSE:in"));
    assert!(a.read("report/tables.txt").contains("MTL-W (CLS)"));
    assert!(a.read("projection/projection.svg").starts_with("<svg"));
}

#[test]
fn resolved_config_reproduces_the_run() {
    let r = Run::new(TINY);
    r.ok(&["generate", "--seed", "5"]);
    let replay = Run::new(&r.read("corpus/resolved_config.toml"));
    replay.ok(&["generate"]);
    assert_same_artifacts(&r.out.join("corpus"), &replay.out.join("corpus"));
}

#[test]
fn grid_resume_skips_completed_cells() {
    let r = Run::new(TINY);
    r.ok(&["generate"]);
    r.ok(&["grid"]);
    let first = r.read("grid/results.csv");
    assert_eq!(first.lines().count(), 5);

    r.ok(&["grid", "--resume"]);
    assert_eq!(r.read("grid/results.csv"), first);
    assert!(r.read("grid/run.log").contains("0 new records, 4 skipped"));

    // drop one record; resume recomputes exactly that cell
    let mut lines: Vec<&str> = first.lines().collect();
    let dropped = lines.remove(2);
    std::fs::write(r.out.join("grid/results.csv"), lines.join("\n") + "\n").unwrap();
    r.ok(&["grid", "--resume"]);
    let resumed = r.read("grid/results.csv");
    assert_eq!(resumed.lines().count(), 5);
    assert_eq!(resumed.lines().last(), Some(dropped));

    // without --resume the store starts over
    r.ok(&["grid"]);
    assert!(r.read("grid/run.log").contains("4 new records, 0 skipped"));
}

#[test]
fn grid_exit_status_reflects_failed_cells() {
    // a specialization sample larger than the pool fails every specialized cell
    let config = TINY.replace("sizes = { gender = 20, age = 10 }", "sizes = { gender = 5000, age = 10 }");
    let r = Run::new(&config);
    r.ok(&["generate"]);
    let o = r.run(&["grid"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let failures = r.read("grid/failures.jsonl");
    assert_eq!(failures.lines().count(), 2);
    assert!(failures.contains("specialization pool too small"));
    // the baseline cells still succeeded
    assert_eq!(r.read("grid/results.csv").lines().count(), 3);
}
