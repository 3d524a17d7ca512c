//! `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are comma
//! separated. Unknown or repeated keys are rejected. [`RunConfig::to_text`]
//! writes every key, so a resolved config reloads to the same value.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use attnboost_core::basemodel::FcnConfig;
use attnboost_core::boosting::{InitMode, TrainOptions};
use attnboost_core::gridsearch::SearchGrid;
use attnboost_core::metrics::{CoverageMode, EvalOptions};
use attnboost_core::segmentation::{GrowthMode, SegParams};
use attnboost_core::synthdata::{SceneConfig, SplitCounts};

/// Image channels plus the previous stage's posterior.
pub const INPUT_CHANNELS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub scene: SceneConfig,
    pub counts: SplitCounts,
    pub stages: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub dropout_rate: f64,
    pub boost_enabled: bool,
    pub init_mode: InitMode,
    pub propagate_between_stages: bool,
    pub max_epochs: usize,
    pub patience: usize,
    pub seg: SegParams,
    pub coverage: CoverageMode,
    pub grid: SearchGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = FcnConfig::default();
        let train = TrainOptions::default();
        Self {
            seed: 0,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            scene: SceneConfig::default(),
            counts: SplitCounts::default(),
            stages: 4,
            depth: model.depth,
            base_channels: model.base_channels,
            dropout_rate: model.dropout_rate,
            boost_enabled: train.boost_enabled,
            init_mode: train.init_mode,
            propagate_between_stages: train.propagate_between_stages,
            max_epochs: train.max_epochs,
            patience: train.patience,
            seg: SegParams::default(),
            coverage: CoverageMode::default(),
            grid: SearchGrid::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?} as a value for {key}"))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse(key, s.trim())).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("{key} must be true or false, got {v:?}")),
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

fn init_name(m: InitMode) -> &'static str {
    match m {
        InitMode::Uniform => "uniform",
        InitMode::ClassFrequency => "class_frequency",
    }
}

fn growth_name(m: GrowthMode) -> &'static str {
    match m {
        GrowthMode::Competitive => "competitive",
        GrowthMode::ForegroundOnly => "foreground_only",
    }
}

fn coverage_name(m: CoverageMode) -> &'static str {
    match m {
        CoverageMode::PerObject => "per_object",
        CoverageMode::Union => "union",
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| ConfigError { line: i + 1, message };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(err(format!("key {k} given twice")));
            }
            cfg.set(k, v).map_err(err)?;
        }
        Ok(cfg)
    }

    /// Assigns one key; the error names the problem.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "data_dir" => self.data_dir = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "width" => self.scene.width = parse(key, v)?,
            "height" => self.scene.height = parse(key, v)?,
            "n_instances" => self.scene.n_instances = parse(key, v)?,
            "touching_pair_fraction" => self.scene.touching_pair_fraction = parse(key, v)?,
            "artifact_count" => self.scene.artifact_count = parse(key, v)?,
            "noise_sigma" => self.scene.noise_sigma = parse(key, v)?,
            "halo" => self.scene.halo = parse(key, v)?,
            "min_radius" => self.scene.min_radius = parse(key, v)?,
            "max_radius" => self.scene.max_radius = parse(key, v)?,
            "train_count" => self.counts.train = parse(key, v)?,
            "val_count" => self.counts.val = parse(key, v)?,
            "test_count" => self.counts.test = parse(key, v)?,
            "stages" => self.stages = parse(key, v)?,
            "depth" => self.depth = parse(key, v)?,
            "base_channels" => self.base_channels = parse(key, v)?,
            "dropout_rate" => self.dropout_rate = parse(key, v)?,
            "boost_enabled" => self.boost_enabled = parse_bool(key, v)?,
            "init_mode" => {
                self.init_mode = match v {
                    "uniform" => InitMode::Uniform,
                    "class_frequency" => InitMode::ClassFrequency,
                    _ => return Err(format!("init_mode must be uniform or class_frequency, got {v:?}")),
                }
            }
            "propagate_between_stages" => self.propagate_between_stages = parse_bool(key, v)?,
            "max_epochs" => self.max_epochs = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "alpha" => self.seg.alpha = parse(key, v)?,
            "area_thr" => self.seg.area_thr = parse(key, v)?,
            "filter_size" => self.seg.filter_size = parse(key, v)?,
            "growth" => {
                self.seg.growth = match v {
                    "competitive" => GrowthMode::Competitive,
                    "foreground_only" => GrowthMode::ForegroundOnly,
                    _ => return Err(format!("growth must be competitive or foreground_only, got {v:?}")),
                }
            }
            "coverage" => {
                self.coverage = match v {
                    "per_object" => CoverageMode::PerObject,
                    "union" => CoverageMode::Union,
                    _ => return Err(format!("coverage must be per_object or union, got {v:?}")),
                }
            }
            "grid_alphas" => self.grid.alphas = parse_list(key, v)?,
            "grid_area_thrs" => self.grid.area_thrs = parse_list(key, v)?,
            "grid_filter_sizes" => self.grid.filter_sizes = parse_list(key, v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Every key with its current value, one documented section at a time.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        macro_rules! kv {
            ($k:expr, $v:expr) => {
                writeln!(s, "{} = {}", $k, $v).unwrap()
            };
        }
        s.push_str("# global seed for scenes, weight init and training order\n");
        kv!("seed", self.seed.to_string());
        kv!("data_dir", self.data_dir.display().to_string());
        kv!("out_dir", self.out_dir.display().to_string());
        s.push_str("\n# synthetic scenes\n");
        kv!("width", self.scene.width.to_string());
        kv!("height", self.scene.height.to_string());
        kv!("n_instances", self.scene.n_instances.to_string());
        kv!("touching_pair_fraction", self.scene.touching_pair_fraction.to_string());
        kv!("artifact_count", self.scene.artifact_count.to_string());
        kv!("noise_sigma", self.scene.noise_sigma.to_string());
        kv!("halo", self.scene.halo.to_string());
        kv!("min_radius", self.scene.min_radius.to_string());
        kv!("max_radius", self.scene.max_radius.to_string());
        kv!("train_count", self.counts.train.to_string());
        kv!("val_count", self.counts.val.to_string());
        kv!("test_count", self.counts.test.to_string());
        s.push_str("\n# model\n");
        kv!("stages", self.stages.to_string());
        kv!("depth", self.depth.to_string());
        kv!("base_channels", self.base_channels.to_string());
        kv!("dropout_rate", self.dropout_rate.to_string());
        s.push_str("\n# training\n");
        kv!("boost_enabled", self.boost_enabled.to_string());
        kv!("init_mode", init_name(self.init_mode).to_string());
        kv!("propagate_between_stages", self.propagate_between_stages.to_string());
        kv!("max_epochs", self.max_epochs.to_string());
        kv!("patience", self.patience.to_string());
        s.push_str("\n# segmentation and evaluation\n");
        kv!("alpha", self.seg.alpha.to_string());
        kv!("area_thr", self.seg.area_thr.to_string());
        kv!("filter_size", self.seg.filter_size.to_string());
        kv!("growth", growth_name(self.seg.growth).to_string());
        kv!("coverage", coverage_name(self.coverage).to_string());
        s.push_str("\n# grid search\n");
        kv!("grid_alphas", join(&self.grid.alphas));
        kv!("grid_area_thrs", join(&self.grid.area_thrs));
        kv!("grid_filter_sizes", join(&self.grid.filter_sizes));
        s
    }

    pub fn scene(&self) -> SceneConfig {
        SceneConfig {
            seed: self.seed,
            ..self.scene.clone()
        }
    }

    pub fn model(&self) -> FcnConfig {
        FcnConfig {
            depth: self.depth,
            base_channels: self.base_channels,
            dropout_rate: self.dropout_rate,
            input_channels: INPUT_CHANNELS,
            seed: self.seed,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            max_epochs: self.max_epochs,
            patience: self.patience,
            boost_enabled: self.boost_enabled,
            seed: self.seed,
            init_mode: self.init_mode,
            propagate_between_stages: self.propagate_between_stages,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            coverage: self.coverage,
        }
    }
}
