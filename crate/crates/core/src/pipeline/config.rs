use crate::error::{Error, Result};
use crate::models::{MambaConfig, ModelKind, PfnConfig, TabTransformerConfig};
use crate::resample::ResampleConfig;
use crate::seed::derive_seed;
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Declarative run description, read from a flat `key = value` file.
/// Blank lines and lines starting with `#` are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub run_id: String,
    pub output: PathBuf,
    pub schema: Option<PathBuf>,
    pub data: Option<PathBuf>,
    /// Built-in synthetic table used when no data file is given:
    /// `separable` or `crash_like`.
    pub synthetic: Option<String>,
    pub synthetic_rows: usize,
    pub resample: bool,
    pub resample_after_split: bool,
    pub smote_k: usize,
    pub enn_k: usize,
    pub split: (f64, f64, f64),
    pub model: ModelKind,
    pub mamba_d_model: usize,
    pub mamba_d_token: usize,
    pub mamba_heads: usize,
    pub mamba_depth: usize,
    pub mamba_dropout: f64,
    pub mamba_query_gate: bool,
    pub tab_embed_dim: usize,
    pub tab_heads: usize,
    pub tab_layers: usize,
    pub tab_ff_dim: usize,
    pub tab_mlp_hidden: Vec<usize>,
    pub tab_dropout: f64,
    pub pfn_checkpoint: Option<PathBuf>,
    pub pfn_steps: usize,
    pub pfn_tasks_per_step: usize,
    pub pfn_lr: f64,
    pub pfn_support: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub step_size: usize,
    pub gamma: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub sankey_stages: Vec<String>,
    pub kde_features: Vec<String>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let m = MambaConfig::new(Vec::new(), 0);
        let tt = TabTransformerConfig::new(Vec::new(), 0);
        Self {
            run_id: "run".into(),
            output: PathBuf::from("report"),
            schema: None,
            data: None,
            synthetic: None,
            synthetic_rows: 3000,
            resample: true,
            resample_after_split: false,
            smote_k: 5,
            enn_k: 3,
            split: (0.6, 0.2, 0.2),
            model: ModelKind::MambaAttention,
            mamba_d_model: m.d_model,
            mamba_d_token: m.d_token,
            mamba_heads: m.heads,
            mamba_depth: m.depth,
            mamba_dropout: m.dropout,
            mamba_query_gate: m.query_gate,
            tab_embed_dim: tt.embed_dim,
            tab_heads: tt.heads,
            tab_layers: tt.layers,
            tab_ff_dim: tt.ff_dim,
            tab_mlp_hidden: tt.mlp_hidden,
            tab_dropout: tt.dropout,
            pfn_checkpoint: None,
            pfn_steps: 500,
            pfn_tasks_per_step: 8,
            pfn_lr: 1e-3,
            pfn_support: PfnConfig::default().max_support,
            lr: t.lr,
            weight_decay: t.weight_decay,
            step_size: t.step_size,
            gamma: t.gamma,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            min_delta: t.min_delta,
            sankey_stages: Vec::new(),
            kde_features: Vec::new(),
            seed: 42,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::config(format!("invalid boolean {value:?} for {key}"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::config(format!("line {}: {}", n + 1, e.root())))?;
        }
        Ok(cfg)
    }

    /// Reads a config file; relative `schema`, `data` and checkpoint paths
    /// are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.schema, &mut cfg.data, &mut cfg.pfn_checkpoint].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "run_id" => self.run_id = value.to_string(),
            "output" => self.output = PathBuf::from(value),
            "schema" => self.schema = optional_path(value),
            "data" => self.data = optional_path(value),
            "synthetic" => self.synthetic = (!value.is_empty()).then(|| value.to_string()),
            "synthetic_rows" => self.synthetic_rows = parse(key, value)?,
            "resample" => self.resample = parse_bool(key, value)?,
            "resample_after_split" => self.resample_after_split = parse_bool(key, value)?,
            "smote_k" => self.smote_k = parse(key, value)?,
            "enn_k" => self.enn_k = parse(key, value)?,
            "split" => {
                let r: Vec<f64> = parse_list(key, value)?;
                if r.len() != 3 {
                    return Err(Error::config("split needs three ratios"));
                }
                self.split = (r[0], r[1], r[2]);
            }
            "model" => self.model = value.parse()?,
            "mamba.d_model" => self.mamba_d_model = parse(key, value)?,
            "mamba.d_token" => self.mamba_d_token = parse(key, value)?,
            "mamba.heads" => self.mamba_heads = parse(key, value)?,
            "mamba.depth" => self.mamba_depth = parse(key, value)?,
            "mamba.dropout" => self.mamba_dropout = parse(key, value)?,
            "mamba.query_gate" => self.mamba_query_gate = parse_bool(key, value)?,
            "tab.embed_dim" => self.tab_embed_dim = parse(key, value)?,
            "tab.heads" => self.tab_heads = parse(key, value)?,
            "tab.layers" => self.tab_layers = parse(key, value)?,
            "tab.ff_dim" => self.tab_ff_dim = parse(key, value)?,
            "tab.mlp_hidden" => self.tab_mlp_hidden = parse_list(key, value)?,
            "tab.dropout" => self.tab_dropout = parse(key, value)?,
            "pfn.checkpoint" => self.pfn_checkpoint = optional_path(value),
            "pfn.steps" => self.pfn_steps = parse(key, value)?,
            "pfn.tasks_per_step" => self.pfn_tasks_per_step = parse(key, value)?,
            "pfn.lr" => self.pfn_lr = parse(key, value)?,
            "pfn.support" => self.pfn_support = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "step_size" => self.step_size = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "min_delta" => self.min_delta = parse(key, value)?,
            "sankey_stages" => self.sankey_stages = parse_list(key, value)?,
            "kde_features" => self.kde_features = parse_list(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(Error::config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return Err(Error::config("run_id must be a plain name"));
        }
        match (&self.data, &self.synthetic) {
            (Some(_), Some(_)) => return Err(Error::config("give either data or synthetic, not both")),
            (None, None) => return Err(Error::config("no data source: set data or synthetic")),
            (Some(_), None) if self.schema.is_none() => {
                return Err(Error::config("a data file needs a schema"))
            }
            (None, Some(s)) if s != "separable" && s != "crash_like" => {
                return Err(Error::config(format!("unknown synthetic table {s:?}")))
            }
            _ => {}
        }
        self.resample_config().validate()?;
        self.train_config().validate()?;
        self.mamba_config(Vec::new(), 1).validate()?;
        self.tab_config(Vec::new(), 1).validate()?;
        self.pfn_config().validate()?;
        if self.pfn_steps == 0 || self.pfn_tasks_per_step == 0 {
            return Err(Error::config("pfn.steps and pfn.tasks_per_step must be positive"));
        }
        Ok(())
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }

    pub fn resample_config(&self) -> ResampleConfig {
        ResampleConfig {
            smote_k: self.smote_k,
            enn_k: self.enn_k,
            seed: self.stage_seed("resample"),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            step_size: self.step_size,
            gamma: self.gamma,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            min_delta: self.min_delta,
            seed: self.stage_seed("train"),
        }
    }

    pub fn mamba_config(&self, vocab_sizes: Vec<usize>, n_continuous: usize) -> MambaConfig {
        MambaConfig {
            d_token: self.mamba_d_token,
            d_model: self.mamba_d_model,
            heads: self.mamba_heads,
            depth: self.mamba_depth,
            dropout: self.mamba_dropout,
            query_gate: self.mamba_query_gate,
            seed: self.stage_seed("init"),
            ..MambaConfig::new(vocab_sizes, n_continuous)
        }
    }

    pub fn tab_config(&self, vocab_sizes: Vec<usize>, n_continuous: usize) -> TabTransformerConfig {
        TabTransformerConfig {
            embed_dim: self.tab_embed_dim,
            heads: self.tab_heads,
            layers: self.tab_layers,
            ff_dim: self.tab_ff_dim,
            mlp_hidden: self.tab_mlp_hidden.clone(),
            dropout: self.tab_dropout,
            seed: self.stage_seed("init"),
            ..TabTransformerConfig::new(vocab_sizes, n_continuous)
        }
    }

    pub fn pfn_config(&self) -> PfnConfig {
        PfnConfig {
            max_support: self.pfn_support,
            seed: self.stage_seed("init"),
            ..PfnConfig::default()
        }
    }

    /// Directory that receives every artifact of this run.
    pub fn run_dir(&self) -> PathBuf {
        self.output.join(&self.run_id)
    }
}
