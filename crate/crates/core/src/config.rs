//! Run configuration files and named presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{AdversarialMode, LossToggles};
use crate::model::Architecture;
use crate::optim::OptimizerConfig;
use crate::synthdata::{GeneratorConfig, ViewAssignment};
use crate::trainer::TrainConfig;
use crate::types::{json_hash, DatasetSpec, Hyperparams};

/// File name of the materialized config written into every output directory.
pub const RUN_CONFIG_FILE: &str = "run_config.toml";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder_widths: Vec<usize>,
    pub embed_dim: usize,
    pub disc_widths: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder_widths: vec![64],
            embed_dim: 32,
            disc_widths: vec![16],
        }
    }
}

impl ModelConfig {
    pub fn architecture(&self, spec: DatasetSpec) -> Architecture {
        Architecture {
            spec,
            encoder_widths: self.encoder_widths.clone(),
            embed_dim: self.embed_dim,
            disc_widths: self.disc_widths.clone(),
        }
    }
}

/// Data generation, model shape, training and loss settings of one run.
/// A single `seed` drives data generation, initialization and sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: GeneratorConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub hyper: Hyperparams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        config.materialize()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    /// Copies the run seed into the sections that carry one and validates
    /// everything. Seeds set explicitly in a section must agree.
    pub fn materialize(mut self) -> Result<Self> {
        for (name, s) in [
            ("train.seed", self.train.seed),
            ("hyper.seed", self.hyper.seed),
        ] {
            if s != 0 && s != self.seed {
                return Err(Error::Config(format!(
                    "{name} = {s} conflicts with seed = {}",
                    self.seed
                )));
            }
        }
        self.train.seed = self.seed;
        self.hyper.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.data.validate().map_err(wrap)?;
        self.architecture().validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        self.hyper.validate(&self.data.spec).map_err(wrap)
    }

    pub fn architecture(&self) -> Architecture {
        self.model.architecture(self.data.spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    pub fn content_hash(&self) -> String {
        json_hash(self)
    }

    /// Writes the materialized config into `dir`.
    pub fn write_into(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RUN_CONFIG_FILE);
        let text = format!("# content hash {}\n{}", self.content_hash(), self.to_toml());
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Parses an ablation spec: `sup` (cross-entropy only), `full`, or a comma
/// list of clustering terms from `nl`, `var`, `H` added to cross-entropy and
/// the contrastive terms.
pub fn parse_ablation(spec: &str) -> Result<LossToggles> {
    match spec.trim() {
        "sup" => Ok(LossToggles::supervised_only()),
        "full" | "all" => Ok(LossToggles::all()),
        list => {
            let terms: Vec<&str> = list
                .split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .collect();
            if terms.is_empty() {
                return Err(Error::Config("empty ablation list".into()));
            }
            LossToggles::with_clustering_terms(&terms).map_err(|e| Error::Config(e.to_string()))
        }
    }
}

/// Ablation rows: supervised only, each clustering term alone, two pairs,
/// and the full objective.
pub const ABLATION_ROWS: [(&str, &str); 7] = [
    ("sup", "sup"),
    ("nl", "nl"),
    ("var", "var"),
    ("h", "H"),
    ("nl-h", "nl,H"),
    ("nl-var", "nl,var"),
    ("full", "full"),
];

/// View layouts `(name, labeled views, unlabeled views)` over three views.
pub const VIEW_LAYOUTS: [(&str, &[usize], &[usize]); 4] = [
    ("all", &[0, 1, 2], &[0, 1, 2]),
    ("unlabeled-v1", &[0, 1, 2], &[1]),
    ("labeled-v1", &[1], &[0, 1, 2]),
    ("drop-v0", &[1, 2], &[1, 2]),
];

/// Six labeled and four unlabeled classes, 16 features, separation 6.
pub fn separable_10() -> RunConfig {
    RunConfig {
        seed: 0,
        data: GeneratorConfig::new(DatasetSpec::new(6, 4, 1, 16), 200, 6.0),
        model: ModelConfig {
            encoder_widths: vec![128],
            embed_dim: 128,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            epochs: 30,
            optimizer: OptimizerConfig::Adam {
                lr: 3e-3,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            ..TrainConfig::default()
        },
        hyper: Hyperparams::default(),
        output_dir: None,
    }
}

/// A three-view layout; `vi` enables adversarial training and cross-view
/// positives.
pub fn view_layout(labeled: &[usize], unlabeled: &[usize], vi: bool) -> RunConfig {
    let mut c = separable_10();
    c.data.spec.views = 3;
    c.data.n_per_class = 300;
    c.data.view_assignment = ViewAssignment {
        labeled_views: Some(labeled.to_vec()),
        unlabeled_views: Some(unlabeled.to_vec()),
    };
    if vi {
        c.train.adversarial_mode = AdversarialMode::Uniform;
        c.train.sampler.cross_view_positives = true;
    }
    c
}

pub fn preset_names() -> Vec<String> {
    let mut names = vec!["separable-10".to_string()];
    names.extend(ABLATION_ROWS.iter().map(|(n, _)| format!("ablate-{n}")));
    for (n, _, _) in VIEW_LAYOUTS {
        names.push(format!("views-{n}"));
        names.push(format!("views-{n}+vi"));
    }
    names
}

pub fn preset(name: &str) -> Result<RunConfig> {
    if name == "separable-10" {
        return separable_10().materialize();
    }
    if let Some(row) = name.strip_prefix("ablate-") {
        if let Some((_, spec)) = ABLATION_ROWS.iter().find(|(n, _)| *n == row) {
            let mut c = separable_10();
            c.train.toggles = parse_ablation(spec)?;
            return c.materialize();
        }
    }
    if let Some(rest) = name.strip_prefix("views-") {
        let (layout, vi) = match rest.strip_suffix("+vi") {
            Some(l) => (l, true),
            None => (rest, false),
        };
        if let Some((_, l, u)) = VIEW_LAYOUTS.iter().find(|(n, _, _)| *n == layout) {
            return view_layout(l, u, vi).materialize();
        }
    }
    Err(Error::Config(format!(
        "unknown preset `{name}`; available: {}",
        preset_names().join(", ")
    )))
}
