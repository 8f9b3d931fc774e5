//! Subcommand implementations. Each command writes into `<out>/<command>/`
//! together with `resolved_config.toml` and `run.log`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use serde::Serialize;

use sodalab::analysis::{
    cluster_purity, projection_csv, projection_svg, regression_rows, render_regression_report,
    sample_projection_inputs, tsne,
};
use sodalab::corpus::{
    generate, holdout, ingest_str, sample_specialization, split, write_corpus, BalanceKey, Domain, Factor,
    LanguageSelector, Review, SplitSet, Vocabulary,
};
use sodalab::encoder::{load_checkpoint, save_checkpoint, EncoderModel};
use sodalab::finetune::{
    append_results, completed_cells, evaluate_f1, finetune, read_results, render_csv, render_text, run_grid,
    tables, vanilla_encoder, Scope, TaskSpec,
};
use sodalab::seed;
use sodalab::specialize::{train_search, TrainConfig};
use sodalab::{Error, Result};

use crate::config::RunConfig;
use crate::{logging, Cli, Command};

const SPLITS: [&str; 4] = ["train", "dev", "test", "specialization"];

pub fn run(cli: &Cli) -> Result<ExitCode> {
    let config = resolve(cli)?;
    let name = match &cli.command {
        Command::Generate => "corpus",
        Command::Specialize(_) => "specialize",
        Command::Finetune(_) => "finetune",
        Command::Grid(_) => "grid",
        Command::Analyze => "analysis",
        Command::Project(_) => "projection",
        Command::Report => "report",
    };
    let dir = config.out.join(name);
    create_dir(&dir)?;
    write_file(&dir.join("resolved_config.toml"), &config.to_toml()?)?;
    logging::init(&dir.join("run.log"))?;
    log::info!("{name}: seed {} out {}", config.seed, config.out.display());

    match &cli.command {
        Command::Generate => cmd_generate(&config, &dir)?,
        Command::Specialize(_) => cmd_specialize(&config, &dir)?,
        Command::Finetune(_) => cmd_finetune(&config, &dir)?,
        Command::Grid(_) => return cmd_grid(&config, &dir, cli.global.resume),
        Command::Analyze => cmd_analyze(&config, &dir)?,
        Command::Project(_) => cmd_project(&config, &dir)?,
        Command::Report => cmd_report(&config, &dir)?,
    }
    Ok(ExitCode::SUCCESS)
}

/// Precedence: command-line flags, then the config file, then defaults.
/// Component seeds are always derived from the root seed.
pub fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut c = RunConfig::load(cli.global.config.as_deref())?;
    if let Some(s) = cli.global.seed {
        c.seed = s;
    }
    if let Some(out) = &cli.global.out {
        c.out = out.clone();
    }
    match &cli.command {
        Command::Specialize(a) => {
            let s = &mut c.specialize;
            s.method = a.method.unwrap_or(s.method);
            s.scope = a.scope.unwrap_or(s.scope);
            s.domain = a.domain.unwrap_or(s.domain);
            s.language = a.language.unwrap_or(s.language);
            s.factor = a.factor.unwrap_or(s.factor);
        }
        Command::Finetune(a) => {
            let f = &mut c.finetune;
            if a.checkpoint.is_some() {
                f.checkpoint = a.checkpoint.clone();
            }
            f.task = a.task.unwrap_or(f.task);
            f.portion = a.portion.unwrap_or(f.portion);
            f.language = a.language.unwrap_or(f.language);
            f.factor = a.factor.unwrap_or(f.factor);
        }
        Command::Grid(a) => {
            c.grid.workers = a.workers.unwrap_or(c.grid.workers);
        }
        Command::Project(a) => {
            if a.checkpoint.is_some() {
                c.analysis.checkpoint = a.checkpoint.clone();
            }
            c.analysis.factor = a.factor.unwrap_or(c.analysis.factor);
        }
        _ => {}
    }
    c.generator.seed = component_seed(c.seed, "generate");
    c.generator.layout = None;
    c.encoder.seed = component_seed(c.seed, "encoder");
    c.specialize.train.method = c.specialize.method;
    c.specialize.train.seed = component_seed(c.seed, "specialize");
    c.finetune.train.seed = component_seed(c.seed, "finetune");
    c.analysis.tsne.seed = component_seed(c.seed, "tsne");
    c.encoder.vocab_size = c.generator.layout().vocab_size();
    Ok(c)
}

/// Kept below 2^63 so the snapshot stays a valid TOML integer.
fn component_seed(root: u64, label: &str) -> u64 {
    seed::derive(root, label) >> 1
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path, producer: &str) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            producer: format!("sodalab {producer}"),
        });
    }
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn corpus_dir(config: &RunConfig, factor: Factor) -> PathBuf {
    config.out.join("corpus").join(factor.as_str())
}

fn cmd_generate(config: &RunConfig, dir: &Path) -> Result<()> {
    for &factor in &config.corpus.factors {
        let gen = sodalab::corpus::GeneratorConfig {
            factor,
            ..config.generator.clone()
        };
        let vocab = gen.layout().vocabulary()?;
        let reviews = generate(&gen, config.corpus.n_per_cell)?;
        let splits = split(&reviews, seed::derive(config.seed, &format!("split/{factor}")), &config.corpus.split)?;
        let fdir = dir.join(factor.as_str());
        create_dir(&fdir)?;
        vocab.write(&fdir.join("vocab.txt"))?;
        for (name, part) in SPLITS.iter().zip(parts(&splits)) {
            write_corpus(&fdir.join(format!("{name}.jsonl")), part, &vocab, factor)?;
        }
        write_file(&fdir.join("manifest.csv"), &manifest(&splits, factor, config.seed)?)?;
        log::info!(
            "{factor}: {} specialization, {}/{}/{} train/dev/test reviews",
            splits.specialization.len(),
            splits.train.len(),
            splits.dev.len(),
            splits.test.len()
        );
    }
    Ok(())
}

fn parts(s: &SplitSet) -> [&Vec<Review>; 4] {
    [&s.train, &s.dev, &s.test, &s.specialization]
}

/// Counts per (language, domain, group): specialization pool, sentiment and
/// topic task data, and the group-balanced attribute-classification data.
fn manifest(splits: &SplitSet, factor: Factor, root: u64) -> Result<String> {
    type Key = (usize, Domain, usize);
    let balanced = splits.balanced(BalanceKey::Sentiment, seed::derive(root, "manifest"));
    let mut counts: BTreeMap<Key, [usize; 4]> = BTreeMap::new();
    let key = |r: &Review| (r.language, r.domain, r.group);
    for r in &splits.specialization {
        counts.entry(key(r)).or_default()[0] += 1;
    }
    for r in splits.train.iter().chain(&splits.dev).chain(&splits.test) {
        let c = counts.entry(key(r)).or_default();
        c[1] += 1;
        c[2] += 1;
    }
    for r in balanced.train.iter().chain(&balanced.dev).chain(&balanced.test) {
        counts.entry(key(r)).or_default()[3] += 1;
    }
    let labels = factor.group_labels();
    let mut out = String::from("language,domain,group,n_specialization,n_SA,n_TD,n_AC\n");
    for ((language, domain, group), [n_spec, n_sa, n_td, n_ac]) in counts {
        let _ = writeln!(out, "{language},{domain},{},{n_spec},{n_sa},{n_td},{n_ac}", labels[group]);
    }
    Ok(out)
}

/// Reads a generated corpus back; ids run on across the four files.
fn load_corpus(config: &RunConfig, factor: Factor) -> Result<SplitSet> {
    let dir = corpus_dir(config, factor);
    let vocab_path = dir.join("vocab.txt");
    read_file(&vocab_path, "generate")?;
    let vocab = Vocabulary::read(&vocab_path)?;
    if vocab.len() != config.encoder.vocab_size {
        return Err(Error::Config(format!(
            "corpus vocabulary has {} entries, generator config implies {}; regenerate the corpus",
            vocab.len(),
            config.encoder.vocab_size
        )));
    }
    let max_tokens = config.encoder.max_len - 1;
    let mut loaded = Vec::with_capacity(4);
    let mut next_id = 0u64;
    for name in SPLITS {
        let text = read_file(&dir.join(format!("{name}.jsonl")), "generate")?;
        let reviews = ingest_str(&text, &vocab, max_tokens, next_id)?;
        next_id += reviews.len() as u64;
        loaded.push(reviews);
    }
    let specialization = loaded.pop().expect("four splits");
    let test = loaded.pop().expect("four splits");
    let dev = loaded.pop().expect("four splits");
    let train = loaded.pop().expect("four splits");
    Ok(SplitSet {
        train,
        dev,
        test,
        specialization,
    })
}

#[derive(Serialize)]
struct SpecializeSummary {
    method: String,
    label: &'static str,
    factor: Factor,
    scope: Scope,
    domain: Domain,
    language: Option<usize>,
    learning_rate: f64,
    epochs_run: usize,
    stopped_early: bool,
    best_epoch: Option<usize>,
    best_dev_metric: Option<f64>,
    eta_mlm: f64,
    eta_socio: f64,
    n_train: usize,
    n_dev: usize,
}

fn checkpoint_name(config: &RunConfig) -> String {
    let s = &config.specialize;
    let mut name = format!("{}-{}-{}-{}", s.factor, s.method.as_str(), s.scope.as_str(), s.domain);
    if s.scope == Scope::Mono {
        let _ = write!(name, "-l{}", s.language);
    }
    name
}

fn cmd_specialize(config: &RunConfig, dir: &Path) -> Result<()> {
    let s = &config.specialize;
    let splits = load_corpus(config, s.factor)?;
    let selector = match s.scope {
        Scope::Mono => LanguageSelector::single(s.language),
        Scope::Multi => LanguageSelector::All,
    };
    let sample = sample_specialization(
        &splits.specialization,
        s.sizes.for_factor(s.factor),
        &selector,
        s.domain,
        seed::derive(config.seed, "specialize/sample"),
    )?;
    let (train_set, dev) = holdout(&sample, s.dev_fraction, seed::derive(config.seed, "specialize/holdout"));
    let train_config = TrainConfig {
        method: s.method,
        ..s.train.clone()
    };
    let base = EncoderModel::new(config.encoder.clone())?;
    log::info!(
        "{} on {} reviews ({} dev), learning rates {:?}",
        s.method.label(),
        train_set.len(),
        dev.len(),
        s.learning_rates
    );
    let (run, lr) = train_search(&base, &train_set, &dev, &train_config, &s.learning_rates)?;
    let name = checkpoint_name(config);
    save_checkpoint(&run.model, &dir.join(format!("{name}.ckpt")))?;
    save_checkpoint(&run.last, &dir.join(format!("{name}.last.ckpt")))?;
    write_file(&dir.join(format!("{name}.train_log.jsonl")), &run.state.log_lines()?)?;
    let summary = SpecializeSummary {
        method: s.method.as_str().to_string(),
        label: s.method.label(),
        factor: s.factor,
        scope: s.scope,
        domain: s.domain,
        language: (s.scope == Scope::Mono).then_some(s.language),
        learning_rate: lr,
        epochs_run: run.state.epochs.len(),
        stopped_early: run.state.stopped_early,
        best_epoch: run.state.stopper.best_epoch,
        best_dev_metric: run.state.stopper.best,
        eta_mlm: run.weights.eta_mlm(),
        eta_socio: run.weights.eta_socio(),
        n_train: train_set.len(),
        n_dev: dev.len(),
    };
    write_file(&dir.join(format!("{name}.json")), &to_json(&summary)?)?;
    log::info!("wrote {name}.ckpt (lr {lr})");
    Ok(())
}

#[derive(Serialize)]
struct FinetuneResult {
    task: String,
    portion: String,
    factor: Factor,
    language: usize,
    checkpoint: Option<PathBuf>,
    learning_rate: f64,
    dev_f1: f64,
    test_f1: f64,
    dev_history: Vec<f64>,
    best_epoch: Option<usize>,
    stopped_early: bool,
    n_train: usize,
    n_dev: usize,
    n_test: usize,
}

fn load_encoder(path: Option<&Path>, config: &RunConfig) -> Result<EncoderModel> {
    match path {
        Some(p) => load_checkpoint(p),
        None => vanilla_encoder(&config.encoder, config.seed),
    }
}

fn cmd_finetune(config: &RunConfig, dir: &Path) -> Result<()> {
    let f = &config.finetune;
    let spec = TaskSpec::new(f.task, f.portion, f.factor)?;
    let splits = load_corpus(config, f.factor)?;
    let model = load_encoder(f.checkpoint.as_deref(), config)?;
    let data = spec.select(&splits, f.language, seed::derive(config.seed, "finetune/task"))?;
    let outcome = finetune(&model, &spec, &data.train, &data.dev, &f.train)?;
    let test_f1 = evaluate_f1(&outcome.model, &spec, &data.test, f.train.batch_size)?;
    log::info!(
        "{} {} language {}: lr {} dev F1 {:.4} test F1 {:.4}",
        f.task,
        f.portion.label(f.factor),
        f.language,
        outcome.learning_rate,
        outcome.dev_f1,
        test_f1
    );
    let result = FinetuneResult {
        task: f.task.as_str().to_string(),
        portion: f.portion.as_str().to_string(),
        factor: f.factor,
        language: f.language,
        checkpoint: f.checkpoint.clone(),
        learning_rate: outcome.learning_rate,
        dev_f1: outcome.dev_f1,
        test_f1,
        dev_history: outcome.history,
        best_epoch: outcome.best_epoch,
        stopped_early: outcome.stopped_early,
        n_train: data.train.len(),
        n_dev: data.dev.len(),
        n_test: data.test.len(),
    };
    write_file(&dir.join("result.json"), &to_json(&result)?)
}

fn cmd_grid(config: &RunConfig, dir: &Path, resume: bool) -> Result<ExitCode> {
    let grid = config.grid_config();
    grid.validate()?;
    let results = dir.join("results.csv");
    let failures_path = dir.join("failures.jsonl");
    if !resume && results.exists() {
        log::info!("starting fresh: replacing {}", results.display());
        std::fs::remove_file(&results).map_err(|e| Error::io(&results, e))?;
    }
    let done = completed_cells(&read_results(&results)?);
    let mut data = BTreeMap::new();
    for &factor in &grid.factors {
        data.insert(factor, load_corpus(config, factor)?);
    }
    log::info!("{} cells, {} already complete", grid.cells().len(), done.len());
    let outcome = run_grid(&grid, &data, &done)?;
    append_results(&results, &outcome.records)?;
    let mut lines = String::new();
    for f in &outcome.failures {
        lines.push_str(&serde_json::to_string(f)?);
        lines.push('\n');
    }
    write_file(&failures_path, &lines)?;
    log::info!(
        "{} new records, {} skipped, {} failed",
        outcome.records.len(),
        outcome.skipped,
        outcome.failures.len()
    );
    if outcome.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        log::error!("{} cells failed; see {}", outcome.failures.len(), failures_path.display());
        Ok(ExitCode::from(2))
    }
}

fn grid_records(config: &RunConfig) -> Result<Vec<sodalab::finetune::ExperimentRecord>> {
    let path = config.out.join("grid").join("results.csv");
    read_file(&path, "grid")?;
    let records = read_results(&path)?;
    if records.is_empty() {
        return Err(Error::Data(format!("{} holds no results", path.display())));
    }
    Ok(records)
}

fn cmd_analyze(config: &RunConfig, dir: &Path) -> Result<()> {
    let records = grid_records(config)?;
    let rows = regression_rows(&records)?;
    for r in &rows {
        match &r.full {
            Ok(fit) => log::info!("{} {}: rmse {:.4} mae {:.4}", r.factor, r.task, fit.rmse, fit.mae),
            Err(e) => log::warn!("{} {}: {e}", r.factor, r.task),
        }
    }
    write_file(
        &dir.join("regression.csv"),
        &render_regression_report(&rows, config.analysis.threshold),
    )
}

#[derive(Serialize)]
struct Purity {
    n: usize,
    language_purity: f64,
    group_purity: Option<f64>,
    final_kl: Option<f64>,
    floored_rows: usize,
}

fn cmd_project(config: &RunConfig, dir: &Path) -> Result<()> {
    let a = &config.analysis;
    let ckpt = a
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::Config("project needs a checkpoint (--checkpoint or analysis.checkpoint)".into()))?;
    let model = load_checkpoint(ckpt)?;
    let splits = load_corpus(config, a.factor)?;
    let inputs = sample_projection_inputs(
        &model,
        &splits.dev,
        a.projection_size,
        seed::derive(config.seed, "projection/sample"),
    )?;
    let projection = tsne(&inputs.points, &a.tsne)?;
    if !projection.floored_rows.is_empty() {
        log::warn!("{} rows missed the target perplexity", projection.floored_rows.len());
    }
    let coords: Vec<Vec<f64>> = projection.coords.iter().map(|c| c.to_vec()).collect();
    let purity_seed = seed::derive(config.seed, "projection/purity");
    let purity = Purity {
        n: coords.len(),
        language_purity: cluster_purity(&coords, &inputs.languages, purity_seed)?,
        // Undefined when the sample holds a single group.
        group_purity: if inputs.groups.iter().any(|&g| g != inputs.groups[0]) {
            Some(cluster_purity(&coords, &inputs.groups, purity_seed)?)
        } else {
            None
        },
        final_kl: projection.kl_trace.last().copied(),
        floored_rows: projection.floored_rows.len(),
    };
    log::info!(
        "purity: language {:.3} group {:?}",
        purity.language_purity,
        purity.group_purity
    );
    write_file(&dir.join("projection.csv"), &projection_csv(&projection.coords, &inputs, a.factor))?;
    write_file(&dir.join("projection.svg"), &projection_svg(&projection.coords, &inputs, a.factor))?;
    write_file(&dir.join("purity.json"), &to_json(&purity)?)
}

fn cmd_report(config: &RunConfig, dir: &Path) -> Result<()> {
    let records = grid_records(config)?;
    let t = tables(&records);
    write_file(&dir.join("tables.txt"), &render_text(&t))?;
    write_file(&dir.join("tables.csv"), &render_csv(&t))
}
