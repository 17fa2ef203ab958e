//! Flat `key=value` configuration. Keys are the field names of the core
//! configuration types; later assignments override earlier ones.

use std::path::Path;

use pcis_core::optim::TrainConfig;
use pcis_core::synth::SynthConfig;
use pcis_core::{ClusterConfig, IntraNormalization, LossConfig, ModelConfig, StructureWeighting};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Settings {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub cluster: ClusterConfig,
    pub synth: SynthConfig,
    pub threads: usize,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::usage(format!("invalid value {value:?} for {key}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v)).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn weighting_name(w: StructureWeighting) -> &'static str {
    match w {
        StructureWeighting::SigmoidDistance => "sigmoid_distance",
        StructureWeighting::Uniform => "uniform",
    }
}

fn normalization_name(n: IntraNormalization) -> &'static str {
    match n {
        IntraNormalization::Sum => "sum",
        IntraNormalization::Mean => "mean",
    }
}

/// Keys written into checkpoints: everything needed to rebuild and use a model.
pub const MODEL_KEYS: &[&str] = &[
    "embed_dim", "num_classes", "backbone_hidden", "attention_hidden", "gcn_layers", "knn_k",
    "alpha", "beta", "intra_normalization", "structure_weighting",
    "bandwidth", "merge_radius", "shift_tolerance", "max_iterations", "min_cluster_points",
];

impl Settings {
    pub fn new() -> Self {
        Self { threads: 1, ..Self::default() }
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let v = value.trim();
        match key.trim() {
            "embed_dim" => self.model.embed_dim = parse(key, v)?,
            "num_classes" => self.model.num_classes = parse(key, v)?,
            "backbone_hidden" => self.model.backbone_hidden = parse_list(key, v)?,
            "attention_hidden" => self.model.attention_hidden = parse(key, v)?,
            "gcn_layers" => self.model.gcn_layers = parse(key, v)?,
            "knn_k" => self.model.knn_k = parse(key, v)?,
            "alpha" => self.loss.alpha = parse(key, v)?,
            "beta" => self.loss.beta = parse(key, v)?,
            "intra_normalization" => {
                self.loss.intra_normalization = match v {
                    "sum" => IntraNormalization::Sum,
                    "mean" => IntraNormalization::Mean,
                    _ => return Err(CliError::usage(format!("intra_normalization must be sum or mean, got {v:?}"))),
                }
            }
            "structure_weighting" => {
                self.loss.structure_weighting = match v {
                    "sigmoid_distance" => StructureWeighting::SigmoidDistance,
                    "uniform" => StructureWeighting::Uniform,
                    _ => {
                        return Err(CliError::usage(format!(
                            "structure_weighting must be sigmoid_distance or uniform, got {v:?}"
                        )))
                    }
                }
            }
            "epochs" => self.train.epochs = parse(key, v)?,
            "lr" => self.train.lr = parse(key, v)?,
            "seed" => {
                self.train.seed = parse(key, v)?;
                self.synth.seed = self.train.seed;
            }
            "pretrain_epochs" => self.train.pretrain_epochs = parse(key, v)?,
            "max_grad_norm" => {
                self.train.max_grad_norm = if v == "none" { None } else { Some(parse(key, v)?) }
            }
            "bandwidth" => {
                // Derived cluster settings follow the bandwidth unless set later.
                let bw: f64 = parse(key, v)?;
                let old = self.cluster;
                self.cluster = ClusterConfig {
                    max_iterations: old.max_iterations,
                    min_cluster_points: old.min_cluster_points,
                    ..ClusterConfig::with_bandwidth(bw)
                };
            }
            "merge_radius" => self.cluster.merge_radius = parse(key, v)?,
            "shift_tolerance" => self.cluster.shift_tolerance = parse(key, v)?,
            "max_iterations" => self.cluster.max_iterations = parse(key, v)?,
            "min_cluster_points" => self.cluster.min_cluster_points = parse(key, v)?,
            "num_train" => self.synth.num_train = parse(key, v)?,
            "num_test" => self.synth.num_test = parse(key, v)?,
            "points_per_scene" => self.synth.points_per_scene = parse(key, v)?,
            "min_objects" => self.synth.min_objects = parse(key, v)?,
            "max_objects" => self.synth.max_objects = parse(key, v)?,
            "min_center_separation" => self.synth.min_center_separation = parse(key, v)?,
            "coord_noise" => self.synth.coord_noise = parse(key, v)?,
            "color_jitter" => self.synth.color_jitter = parse(key, v)?,
            "room" => {
                let r: Vec<f64> = parse_list(key, v)?;
                self.synth.room = r
                    .try_into()
                    .map_err(|_| CliError::usage("room needs three comma-separated extents"))?;
            }
            "floor_instance" => self.synth.floor_instance = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            other => return Err(CliError::usage(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> CliResult<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("line {}: expected key=value", n + 1)))?;
            self.set(k, v).map_err(|e| CliError::usage(format!("line {}: {}", n + 1, e.message)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.apply_text(&text).map_err(|e| e.at(path))
    }

    /// Assignments given as `key=value` strings.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> CliResult<()> {
        for p in pairs {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("override {p:?} is not key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let (m, l, t, c, s) = (&self.model, &self.loss, &self.train, &self.cluster, &self.synth);
        Some(match key {
            "embed_dim" => m.embed_dim.to_string(),
            "num_classes" => m.num_classes.to_string(),
            "backbone_hidden" => join(&m.backbone_hidden),
            "attention_hidden" => m.attention_hidden.to_string(),
            "gcn_layers" => m.gcn_layers.to_string(),
            "knn_k" => m.knn_k.to_string(),
            "alpha" => l.alpha.to_string(),
            "beta" => l.beta.to_string(),
            "intra_normalization" => normalization_name(l.intra_normalization).into(),
            "structure_weighting" => weighting_name(l.structure_weighting).into(),
            "epochs" => t.epochs.to_string(),
            "lr" => t.lr.to_string(),
            "seed" => t.seed.to_string(),
            "pretrain_epochs" => t.pretrain_epochs.to_string(),
            "max_grad_norm" => t.max_grad_norm.map_or("none".into(), |v| v.to_string()),
            "bandwidth" => c.bandwidth.to_string(),
            "merge_radius" => c.merge_radius.to_string(),
            "shift_tolerance" => c.shift_tolerance.to_string(),
            "max_iterations" => c.max_iterations.to_string(),
            "min_cluster_points" => c.min_cluster_points.to_string(),
            "num_train" => s.num_train.to_string(),
            "num_test" => s.num_test.to_string(),
            "points_per_scene" => s.points_per_scene.to_string(),
            "min_objects" => s.min_objects.to_string(),
            "max_objects" => s.max_objects.to_string(),
            "min_center_separation" => s.min_center_separation.to_string(),
            "coord_noise" => s.coord_noise.to_string(),
            "color_jitter" => s.color_jitter.to_string(),
            "room" => join(&s.room),
            "floor_instance" => s.floor_instance.to_string(),
            "threads" => self.threads.to_string(),
            _ => return None,
        })
    }

    /// `key=value` lines for `keys`, in order.
    pub fn echo(&self, keys: &[&str]) -> String {
        keys.iter()
            .filter_map(|k| self.get(k).map(|v| format!("{k}={v}\n")))
            .collect()
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.cluster.validate()?;
        if !(self.train.lr > 0.0 && self.train.lr.is_finite()) {
            return Err(CliError::usage(format!("lr must be positive, got {}", self.train.lr)));
        }
        if self.threads == 0 {
            return Err(CliError::usage("threads must be >= 1"));
        }
        Ok(())
    }
}
