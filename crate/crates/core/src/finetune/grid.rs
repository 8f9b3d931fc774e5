//! The experiment grid: specialize (or not), fine-tune and score every
//! requested cell, with a resumable CSV record store.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::task::{Portion, Task, TaskSpec};
use super::train::{evaluate_f1, finetune, FinetuneConfig};
use crate::corpus::{holdout, sample_specialization, Domain, Factor, LanguageSelector, SpecializationSizes, SplitSet};
use crate::encoder::{EncoderConfig, EncoderModel};
use crate::error::{Error, Result};
use crate::seed;
use crate::specialize::{train_search, Method, TrainConfig, SPECIALIZATION_LRS};

/// Specialization method of a cell; `none` fine-tunes the vanilla encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GridMethod {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "mlm")]
    Mlm,
    #[serde(rename = "mtl-cls")]
    MtlCls,
    #[serde(rename = "mtl-ctx")]
    MtlCtx,
}

impl GridMethod {
    pub const ALL: [GridMethod; 4] = [GridMethod::None, GridMethod::Mlm, GridMethod::MtlCls, GridMethod::MtlCtx];

    pub fn specialization(self) -> Option<Method> {
        match self {
            GridMethod::None => None,
            GridMethod::Mlm => Some(Method::Mlm),
            GridMethod::MtlCls => Some(Method::MtlCls),
            GridMethod::MtlCtx => Some(Method::MtlCtx),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self.specialization() {
            None => "none",
            Some(m) => m.as_str(),
        }
    }

    pub fn label(self) -> &'static str {
        match self.specialization() {
            None => "baseline",
            Some(m) => m.label(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

impl std::fmt::Display for GridMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Monolingual (specialize on the fine-tuning language only) or
/// multilingual (all languages) specialization data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Mono,
    Multi,
}

impl Scope {
    pub const ALL: [Scope; 2] = [Scope::Mono, Scope::Multi];

    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Mono => "mono",
            Scope::Multi => "multi",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Identity of one grid cell: an experiment record without its score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub language: usize,
    pub method: GridMethod,
    pub mono_multi: Scope,
    pub domain: Domain,
    pub portion: Portion,
    pub factor: Factor,
    pub task: Task,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub language: usize,
    pub method: GridMethod,
    pub mono_multi: Scope,
    pub domain: Domain,
    pub portion: Portion,
    pub factor: Factor,
    pub task: Task,
    pub seed: u64,
    /// Test macro F1 in `[0, 1]`.
    pub f1: f64,
}

pub const RESULTS_HEADER: [&str; 9] =
    ["language", "method", "mono_multi", "domain", "portion", "factor", "task", "seed", "f1"];

impl ExperimentRecord {
    pub fn new(cell: Cell, f1: f64) -> Self {
        Self {
            language: cell.language,
            method: cell.method,
            mono_multi: cell.mono_multi,
            domain: cell.domain,
            portion: cell.portion,
            factor: cell.factor,
            task: cell.task,
            seed: cell.seed,
            f1,
        }
    }

    pub fn cell(&self) -> Cell {
        Cell {
            language: self.language,
            method: self.method,
            mono_multi: self.mono_multi,
            domain: self.domain,
            portion: self.portion,
            factor: self.factor,
            task: self.task,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub factors: Vec<Factor>,
    pub methods: Vec<GridMethod>,
    pub mono_multi: Vec<Scope>,
    pub domains: Vec<Domain>,
    pub languages: Vec<usize>,
    pub portions: Vec<Portion>,
    pub tasks: Vec<Task>,
    pub seeds: Vec<u64>,
    /// Mixed into every cell seed, so one root seed drives the whole grid.
    pub root_seed: u64,
    pub encoder: EncoderConfig,
    /// Template for specialization runs; `method`, `learning_rate` and
    /// `seed` are set per cell.
    pub specialize: TrainConfig,
    pub specialize_learning_rates: Vec<f64>,
    pub specialization_sizes: SpecializationSizes,
    /// Share of each specialization sample held out for early stopping.
    pub specialization_dev_fraction: f64,
    /// Template for fine-tuning; `seed` is set per cell.
    pub finetune: FinetuneConfig,
    pub workers: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            factors: Factor::ALL.to_vec(),
            methods: GridMethod::ALL.to_vec(),
            mono_multi: Scope::ALL.to_vec(),
            domains: vec![Domain::In, Domain::Out],
            languages: (0..5).collect(),
            portions: Portion::ALL.to_vec(),
            tasks: Task::ALL.to_vec(),
            seeds: vec![0],
            root_seed: 0,
            encoder: EncoderConfig::default(),
            specialize: TrainConfig::default(),
            specialize_learning_rates: SPECIALIZATION_LRS.to_vec(),
            specialization_sizes: SpecializationSizes::default(),
            specialization_dev_fraction: 0.2,
            finetune: FinetuneConfig::default(),
            workers: 1,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.specialization_dev_fraction) || self.specialization_dev_fraction == 0.0 {
            return Err(Error::Config(format!(
                "specialization_dev_fraction {} outside (0, 1)",
                self.specialization_dev_fraction
            )));
        }
        self.encoder.validate()?;
        self.specialize.validate()?;
        self.finetune.validate()
    }

    /// Every valid cell, in a fixed order. Attribute tasks only take the
    /// mixed portion.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &factor in &self.factors {
            for &task in &self.tasks {
                for &method in &self.methods {
                    for &mono_multi in &self.mono_multi {
                        for &domain in &self.domains {
                            for &language in &self.languages {
                                for &portion in &self.portions {
                                    if TaskSpec::new(task, portion, factor).is_err() {
                                        continue;
                                    }
                                    for &seed in &self.seeds {
                                        cells.push(Cell {
                                            language,
                                            method,
                                            mono_multi,
                                            domain,
                                            portion,
                                            factor,
                                            task,
                                            seed,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        cells
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFailure {
    pub cell: Cell,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GridOutcome {
    /// New records in cell order.
    pub records: Vec<ExperimentRecord>,
    pub failures: Vec<GridFailure>,
    /// Cells already present in the store.
    pub skipped: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct SpecKey {
    factor: Factor,
    method: Method,
    scope: Scope,
    domain: Domain,
    /// The fine-tuning language for monolingual runs.
    language: Option<usize>,
    seed: u64,
}

impl SpecKey {
    fn of(cell: &Cell) -> Option<Self> {
        let method = cell.method.specialization()?;
        Some(Self {
            factor: cell.factor,
            method,
            scope: cell.mono_multi,
            domain: cell.domain,
            language: (cell.mono_multi == Scope::Mono).then_some(cell.language),
            seed: cell.seed,
        })
    }

    fn label(&self) -> String {
        let lang = self.language.map_or("all".to_string(), |l| l.to_string());
        format!("{}/{}/{}/{}/{lang}", self.factor, self.method, self.scope, self.domain)
    }
}

/// The baseline ignores domain and scope, so those cells share one run.
fn job_cell(cell: &Cell) -> Cell {
    match cell.method {
        GridMethod::None => Cell {
            domain: Domain::In,
            mono_multi: Scope::Multi,
            ..*cell
        },
        _ => *cell,
    }
}

pub fn vanilla_encoder(config: &EncoderConfig, seed: u64) -> Result<EncoderModel> {
    EncoderModel::new(EncoderConfig {
        seed: seed::derive(seed, "encoder"),
        ..config.clone()
    })
}

fn cell_seed(config: &GridConfig, seed: u64) -> u64 {
    seed::derive_indexed(config.root_seed, "grid", seed)
}

fn specialize_cell(config: &GridConfig, data: &BTreeMap<Factor, SplitSet>, key: &SpecKey) -> Result<EncoderModel> {
    let root = cell_seed(config, key.seed);
    let splits = splits_for(data, key.factor)?;
    let selector = key.language.map_or(LanguageSelector::All, LanguageSelector::single);
    let label = key.label();
    let sample = sample_specialization(
        &splits.specialization,
        config.specialization_sizes.for_factor(key.factor),
        &selector,
        key.domain,
        seed::derive(root, &format!("specialize/sample/{label}")),
    )?;
    let (train_set, dev) = holdout(
        &sample,
        config.specialization_dev_fraction,
        seed::derive(root, &format!("specialize/holdout/{label}")),
    );
    let train_config = TrainConfig {
        method: key.method,
        seed: seed::derive(root, &format!("specialize/train/{label}")),
        ..config.specialize.clone()
    };
    let base = vanilla_encoder(&config.encoder, root)?;
    let (run, lr) = train_search(&base, &train_set, &dev, &train_config, &config.specialize_learning_rates)?;
    log::info!("specialized {label} seed {} at lr {lr}", key.seed);
    Ok(run.model)
}

fn splits_for(data: &BTreeMap<Factor, SplitSet>, factor: Factor) -> Result<&SplitSet> {
    data.get(&factor)
        .ok_or_else(|| Error::Data(format!("no corpus for factor {factor}")))
}

fn finetune_cell(config: &GridConfig, data: &BTreeMap<Factor, SplitSet>, cell: &Cell, model: &EncoderModel) -> Result<f64> {
    let root = cell_seed(config, cell.seed);
    let splits = splits_for(data, cell.factor)?;
    let spec = TaskSpec::new(cell.task, cell.portion, cell.factor)?;
    let label = format!("{}/{}/{}/{}", cell.factor, cell.task, cell.portion, cell.language);
    let task_data = spec.select(splits, cell.language, seed::derive(root, &format!("task/{label}")))?;
    let ft_config = FinetuneConfig {
        seed: seed::derive(root, &format!("finetune/{label}")),
        ..config.finetune.clone()
    };
    let outcome = finetune(model, &spec, &task_data.train, &task_data.dev, &ft_config)?;
    let f1 = evaluate_f1(&outcome.model, &spec, &task_data.test, ft_config.batch_size)?;
    if !(0.0..=1.0).contains(&f1) {
        return Err(Error::Numeric(format!("F1 {f1} outside [0, 1]")));
    }
    Ok(f1)
}

/// Runs every requested cell not in `completed`. Specializations are shared
/// between the cells that need them; independent runs execute on a pool of
/// `config.workers` threads. Failing cells are reported, not fatal.
pub fn run_grid(config: &GridConfig, data: &BTreeMap<Factor, SplitSet>, completed: &BTreeSet<Cell>) -> Result<GridOutcome> {
    config.validate()?;
    let all = config.cells();
    let pending: Vec<Cell> = all.iter().filter(|c| !completed.contains(c)).copied().collect();
    let skipped = all.len() - pending.len();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;

    let spec_keys: BTreeSet<SpecKey> = pending.iter().filter_map(SpecKey::of).collect();
    let base_seeds: BTreeSet<u64> = pending
        .iter()
        .filter(|c| c.method == GridMethod::None)
        .map(|c| c.seed)
        .collect();
    let jobs: BTreeSet<Cell> = pending.iter().map(job_cell).collect();

    let (specialized, vanilla, scores) = pool.install(|| {
        let specialized: BTreeMap<SpecKey, std::result::Result<EncoderModel, String>> = spec_keys
            .par_iter()
            .map(|k| (*k, specialize_cell(config, data, k).map_err(|e| e.to_string())))
            .collect::<Vec<_>>()
            .into_iter()
            .collect();
        let vanilla: BTreeMap<u64, std::result::Result<EncoderModel, String>> = base_seeds
            .iter()
            .map(|&s| (s, vanilla_encoder(&config.encoder, cell_seed(config, s)).map_err(|e| e.to_string())))
            .collect();
        let jobs: Vec<Cell> = jobs.into_iter().collect();
        let scores: BTreeMap<Cell, std::result::Result<f64, String>> = jobs
            .par_iter()
            .map(|cell| {
                let model = match SpecKey::of(cell) {
                    Some(k) => &specialized[&k],
                    None => &vanilla[&cell.seed],
                };
                let score = match model {
                    Ok(m) => finetune_cell(config, data, cell, m).map_err(|e| e.to_string()),
                    Err(e) => Err(format!("specialization failed: {e}")),
                };
                (*cell, score)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .collect();
        (specialized, vanilla, scores)
    });
    drop((specialized, vanilla));

    let mut outcome = GridOutcome {
        skipped,
        ..Default::default()
    };
    for cell in pending {
        match &scores[&job_cell(&cell)] {
            Ok(f1) => outcome.records.push(ExperimentRecord::new(cell, *f1)),
            Err(e) => {
                log::warn!("cell {cell:?} failed: {e}");
                outcome.failures.push(GridFailure {
                    cell,
                    error: e.clone(),
                })
            }
        }
    }
    Ok(outcome)
}

/// Reads the results table; a missing file is an empty store.
pub fn read_results(path: &Path) -> Result<Vec<ExperimentRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().ne(RESULTS_HEADER) {
        return Err(Error::Schema {
            line: 1,
            message: format!("results header {:?}, expected {:?}", headers, RESULTS_HEADER),
        });
    }
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let record: ExperimentRecord = row?;
        if !(0.0..=1.0).contains(&record.f1) {
            return Err(Error::Schema {
                line: out.len() + 2,
                message: format!("f1 {} outside [0, 1]", record.f1),
            });
        }
        out.push(record);
    }
    Ok(out)
}

/// Appends records, writing the header when the file is new or empty.
pub fn append_results(path: &Path, records: &[ExperimentRecord]) -> Result<()> {
    let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut writer = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    if fresh && records.is_empty() {
        writer.write_record(RESULTS_HEADER)?;
    }
    for r in records {
        writer.serialize(r)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn completed_cells(records: &[ExperimentRecord]) -> BTreeSet<Cell> {
    records.iter().map(ExperimentRecord::cell).collect()
}
