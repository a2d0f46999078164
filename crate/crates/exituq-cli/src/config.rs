//! Flat `key = value` run configuration.
//!
//! The format is deliberately parser-free: one `key = value` pair per line,
//! `#` comments, blank lines ignored. Every run writes its fully resolved
//! configuration next to its outputs, and that echo re-parses to an equal
//! [`RunConfig`] — floats are printed with shortest-round-trip precision, so
//! nothing is lost.
//!
//! Recognized keys (all optional; defaults in parentheses):
//!
//! ```text
//! dataset            synthetic | tu:<path>      (synthetic)
//! synthetic.patients generated patient count    (2000)
//! arch.layers        graphconv | sagemean       (graphconv)
//! arch.hidden        comma-separated widths     (64,64,64)
//! arch.head_hidden   exit-head hidden width     (32)
//! arch.dropout       dropout probability        (0.5)
//! method             single | ensemble | mcdropout | selfdistill   (selfdistill)
//! distill.alpha      imitation weight           (0.6)
//! distill.lambda     feature-penalty weight     (0.04)
//! distill.epochs     training epochs            (100)
//! distill.final_plain_epochs  closing plain-CE epochs  (20)
//! distill.lr         Adam learning rate         (0.001)
//! distill.batch_size training batch size        (32)
//! distill.temperature soft-label temperature    (1)
//! ensemble.size      ensemble member count      (4)
//! mc.samples         MC-dropout passes          (100)
//! folds              cross-validation folds     (5)
//! val_fraction       validation share per fold  (0.1)
//! eval_batch_size    inference batch size       (64)
//! seed               global seed                (0)
//! out                output directory           (runs/out)
//! ood.holdout        held-out class index       (unset)
//! ```
//!
//! A relative `tu:` path is resolved against the `DISTILL_UQ_DATA`
//! environment variable when it is set, else against the working directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use exituq_core::distill::DistillConfig;
use exituq_core::evaluation::MethodKind;
use exituq_core::gnn::{ArchConfig, LayerKind};
use exituq_core::graphdata::{
    generate_admissions, read_tu_dataset, Dataset, SyntheticConfig,
};

use crate::CliError;

/// Where the graphs come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSpec {
    /// Seeded synthetic hospital-admissions graphs.
    Synthetic,
    /// A TU-format dataset directory (path as written in the config).
    Tu(String),
}

impl DatasetSpec {
    fn as_config_value(&self) -> String {
        match self {
            DatasetSpec::Synthetic => "synthetic".to_string(),
            DatasetSpec::Tu(path) => format!("tu:{path}"),
        }
    }
}

/// One experiment, fully described.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub synthetic_patients: usize,
    pub layers: LayerKind,
    pub hidden: Vec<usize>,
    pub head_hidden: usize,
    pub dropout: f64,
    pub method: MethodKind,
    pub distill: DistillConfig,
    pub ensemble_size: usize,
    pub mc_samples: usize,
    pub folds: usize,
    pub val_fraction: f64,
    pub eval_batch_size: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub ood_holdout: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::Synthetic,
            synthetic_patients: 2000,
            layers: LayerKind::GraphConv,
            hidden: vec![64, 64, 64],
            head_hidden: 32,
            dropout: 0.5,
            method: MethodKind::SelfDistill,
            distill: DistillConfig::default(),
            ensemble_size: 4,
            mc_samples: 100,
            folds: 5,
            val_fraction: 0.1,
            eval_batch_size: 64,
            seed: 0,
            out: PathBuf::from("runs/out"),
            ood_holdout: None,
        }
    }
}

fn layer_kind_name(kind: LayerKind) -> &'static str {
    match kind {
        LayerKind::GraphConv => "graphconv",
        LayerKind::SageMean => "sagemean",
    }
}

fn parse_layer_kind(s: &str) -> Result<LayerKind, String> {
    match s {
        "graphconv" => Ok(LayerKind::GraphConv),
        "sagemean" => Ok(LayerKind::SageMean),
        other => Err(format!("unknown layer kind {other:?}, expected graphconv|sagemean")),
    }
}

impl RunConfig {
    /// Parse the flat `key = value` format. Unknown and duplicated keys are
    /// errors; anything omitted keeps its default.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("config line {}: expected key = value, got {raw:?}", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|k| k == key) {
                return Err(CliError::Usage(format!(
                    "config line {}: duplicate key {key:?}",
                    lineno + 1
                )));
            }
            seen.push(key.to_string());
            cfg.apply(key, value)
                .map_err(|msg| CliError::Usage(format!("config line {}: {msg}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            value.parse().map_err(|e| format!("{key}: cannot parse {value:?}: {e}"))
        }
        match key {
            "dataset" => {
                self.dataset = if value == "synthetic" {
                    DatasetSpec::Synthetic
                } else if let Some(path) = value.strip_prefix("tu:") {
                    if path.is_empty() {
                        return Err("dataset: tu: needs a path".into());
                    }
                    DatasetSpec::Tu(path.to_string())
                } else {
                    return Err(format!("dataset: expected synthetic or tu:<path>, got {value:?}"));
                };
            }
            "synthetic.patients" => self.synthetic_patients = num(key, value)?,
            "arch.layers" => self.layers = parse_layer_kind(value)?,
            "arch.hidden" => {
                let widths: Result<Vec<usize>, String> = value
                    .split(',')
                    .map(|w| num::<usize>("arch.hidden", w.trim()))
                    .collect();
                let widths = widths?;
                if widths.is_empty() || widths.contains(&0) {
                    return Err("arch.hidden: need positive widths".into());
                }
                self.hidden = widths;
            }
            "arch.head_hidden" => self.head_hidden = num(key, value)?,
            "arch.dropout" => self.dropout = num(key, value)?,
            "method" => {
                self.method = value.parse::<MethodKind>().map_err(|e| format!("method: {e}"))?
            }
            "distill.alpha" => self.distill.alpha = num(key, value)?,
            "distill.lambda" => self.distill.lambda = num(key, value)?,
            "distill.epochs" => self.distill.epochs = num(key, value)?,
            "distill.final_plain_epochs" => self.distill.final_plain_epochs = num(key, value)?,
            "distill.lr" => self.distill.lr = num(key, value)?,
            "distill.batch_size" => self.distill.batch_size = num(key, value)?,
            "distill.temperature" => self.distill.temperature = num(key, value)?,
            "ensemble.size" => self.ensemble_size = num(key, value)?,
            "mc.samples" => self.mc_samples = num(key, value)?,
            "folds" => self.folds = num(key, value)?,
            "val_fraction" => self.val_fraction = num(key, value)?,
            "eval_batch_size" => self.eval_batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "ood.holdout" => self.ood_holdout = Some(num(key, value)?),
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Structural validation beyond per-field parsing.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut cfg = self.distill.clone();
        cfg.seed = self.seed;
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(CliError::Usage(format!("arch.dropout {} outside [0, 1]", self.dropout)));
        }
        if self.ensemble_size == 0 {
            return Err(CliError::Usage("ensemble.size must be at least 1".into()));
        }
        if self.mc_samples < 2 {
            return Err(CliError::Usage("mc.samples must be at least 2".into()));
        }
        if self.folds < 2 {
            return Err(CliError::Usage("folds must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(CliError::Usage(format!(
                "val_fraction {} outside [0, 1)",
                self.val_fraction
            )));
        }
        if self.eval_batch_size == 0 {
            return Err(CliError::Usage("eval_batch_size must be positive".into()));
        }
        if self.head_hidden == 0 {
            return Err(CliError::Usage("arch.head_hidden must be positive".into()));
        }
        if self.synthetic_patients == 0 {
            return Err(CliError::Usage("synthetic.patients must be positive".into()));
        }
        Ok(())
    }

    /// Serialize every field in a fixed order; `parse` of the result equals
    /// `self`.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dataset = {}", self.dataset.as_config_value());
        let _ = writeln!(s, "synthetic.patients = {}", self.synthetic_patients);
        let _ = writeln!(s, "arch.layers = {}", layer_kind_name(self.layers));
        let widths: Vec<String> = self.hidden.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(s, "arch.hidden = {}", widths.join(","));
        let _ = writeln!(s, "arch.head_hidden = {}", self.head_hidden);
        let _ = writeln!(s, "arch.dropout = {}", self.dropout);
        let _ = writeln!(s, "method = {}", self.method.as_str());
        let _ = writeln!(s, "distill.alpha = {}", self.distill.alpha);
        let _ = writeln!(s, "distill.lambda = {}", self.distill.lambda);
        let _ = writeln!(s, "distill.epochs = {}", self.distill.epochs);
        let _ = writeln!(s, "distill.final_plain_epochs = {}", self.distill.final_plain_epochs);
        let _ = writeln!(s, "distill.lr = {}", self.distill.lr);
        let _ = writeln!(s, "distill.batch_size = {}", self.distill.batch_size);
        let _ = writeln!(s, "distill.temperature = {}", self.distill.temperature);
        let _ = writeln!(s, "ensemble.size = {}", self.ensemble_size);
        let _ = writeln!(s, "mc.samples = {}", self.mc_samples);
        let _ = writeln!(s, "folds = {}", self.folds);
        let _ = writeln!(s, "val_fraction = {}", self.val_fraction);
        let _ = writeln!(s, "eval_batch_size = {}", self.eval_batch_size);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out = {}", self.out.display());
        if let Some(class) = self.ood_holdout {
            let _ = writeln!(s, "ood.holdout = {class}");
        }
        s
    }

    /// The distillation config with the global seed applied.
    pub fn distill_with_seed(&self) -> DistillConfig {
        DistillConfig { seed: self.seed, ..self.distill.clone() }
    }

    /// Architecture for a dataset with the given feature and class counts.
    pub fn arch_for(&self, input_dim: usize, num_classes: usize) -> ArchConfig {
        ArchConfig {
            layer_kind: self.layers,
            input_dim,
            hidden_dims: self.hidden.clone(),
            num_classes,
            head_hidden: self.head_hidden,
            dropout: self.dropout,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    /// Load (or generate) the configured dataset.
    pub fn load_dataset(&self) -> Result<Dataset, CliError> {
        match &self.dataset {
            DatasetSpec::Synthetic => {
                let cfg = SyntheticConfig { n_patients: self.synthetic_patients, seed: self.seed };
                generate_admissions(&cfg).map_err(CliError::from)
            }
            DatasetSpec::Tu(raw) => {
                let path = resolve_data_path(raw);
                let name = path
                    .file_name()
                    .and_then(|n| n.to_str())
                    .ok_or_else(|| {
                        CliError::Usage(format!("dataset path {raw:?} has no directory name"))
                    })?
                    .to_string();
                read_tu_dataset(&path, &name).map_err(CliError::from)
            }
        }
    }

    /// Write the resolved-config echo into the output directory.
    pub fn write_resolved(&self) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.out)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", self.out.display())))?;
        let path = self.out.join("config.resolved.cfg");
        std::fs::write(&path, self.to_config_string())
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}

/// Resolve a `tu:` path: absolute paths pass through; relative ones are
/// joined onto `DISTILL_UQ_DATA` when set, else used as-is.
pub fn resolve_data_path(raw: &str) -> PathBuf {
    let path = Path::new(raw);
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os("DISTILL_UQ_DATA") {
        Some(root) if !root.is_empty() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}
