//! Run configuration: one TOML document, every section optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sodalab::analysis::TsneConfig;
use sodalab::corpus::{Domain, Factor, GeneratorConfig, SpecializationSizes, SplitConfig};
use sodalab::encoder::EncoderConfig;
use sodalab::finetune::{FinetuneConfig, GridConfig, GridMethod, Portion, Scope, Task};
use sodalab::specialize::{Method, TrainConfig, SPECIALIZATION_LRS};
use sodalab::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every component derives its own stream from it.
    pub seed: u64,
    pub out: PathBuf,
    pub corpus: CorpusSection,
    pub generator: GeneratorConfig,
    pub encoder: EncoderConfig,
    pub specialize: SpecializeSection,
    pub finetune: FinetuneSection,
    pub grid: GridSection,
    pub analysis: AnalysisSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            corpus: CorpusSection::default(),
            generator: GeneratorConfig::default(),
            encoder: EncoderConfig::default(),
            specialize: SpecializeSection::default(),
            finetune: FinetuneSection::default(),
            grid: GridSection::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub factors: Vec<Factor>,
    /// Reviews per (language, domain, group) cell.
    pub n_per_cell: usize,
    pub split: SplitConfig,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            factors: Factor::ALL.to_vec(),
            n_per_cell: 400,
            split: SplitConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecializeSection {
    pub method: Method,
    pub factor: Factor,
    pub scope: Scope,
    pub domain: Domain,
    /// Fine-tuning language for monolingual runs.
    pub language: usize,
    pub learning_rates: Vec<f64>,
    pub sizes: SpecializationSizes,
    pub dev_fraction: f64,
    pub train: TrainConfig,
}

impl Default for SpecializeSection {
    fn default() -> Self {
        Self {
            method: Method::Mlm,
            factor: Factor::Gender,
            scope: Scope::Multi,
            domain: Domain::In,
            language: 0,
            learning_rates: SPECIALIZATION_LRS.to_vec(),
            sizes: SpecializationSizes::default(),
            dev_fraction: 0.2,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub task: Task,
    pub portion: Portion,
    pub factor: Factor,
    pub language: usize,
    /// Encoder to start from; the vanilla encoder when absent.
    pub checkpoint: Option<PathBuf>,
    pub train: FinetuneConfig,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self {
            task: Task::Sa,
            portion: Portion::Mixed,
            factor: Factor::Gender,
            language: 0,
            checkpoint: None,
            train: FinetuneConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub factors: Vec<Factor>,
    pub methods: Vec<GridMethod>,
    pub mono_multi: Vec<Scope>,
    pub domains: Vec<Domain>,
    pub languages: Vec<usize>,
    pub portions: Vec<Portion>,
    pub tasks: Vec<Task>,
    pub seeds: Vec<u64>,
    pub workers: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = GridConfig::default();
        Self {
            factors: g.factors,
            methods: g.methods,
            mono_multi: g.mono_multi,
            domains: g.domains,
            languages: g.languages,
            portions: g.portions,
            tasks: g.tasks,
            seeds: g.seeds,
            workers: g.workers,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Feature-selection threshold on regression weights.
    pub threshold: f64,
    pub projection_size: usize,
    pub factor: Factor,
    /// Encoder to project; required by `project`.
    pub checkpoint: Option<PathBuf>,
    pub tsne: TsneConfig,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            threshold: sodalab::analysis::DEFAULT_THRESHOLD,
            projection_size: 2000,
            factor: Factor::Gender,
            checkpoint: None,
            tsne: TsneConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize resolved config: {e}")))
    }

    pub fn grid_config(&self) -> GridConfig {
        let g = &self.grid;
        GridConfig {
            factors: g.factors.clone(),
            methods: g.methods.clone(),
            mono_multi: g.mono_multi.clone(),
            domains: g.domains.clone(),
            languages: g.languages.clone(),
            portions: g.portions.clone(),
            tasks: g.tasks.clone(),
            seeds: g.seeds.clone(),
            root_seed: self.seed,
            encoder: self.encoder.clone(),
            specialize: self.specialize.train.clone(),
            specialize_learning_rates: self.specialize.learning_rates.clone(),
            specialization_sizes: self.specialize.sizes.clone(),
            specialization_dev_fraction: self.specialize.dev_fraction,
            finetune: self.finetune.train.clone(),
            workers: g.workers,
        }
    }
}
