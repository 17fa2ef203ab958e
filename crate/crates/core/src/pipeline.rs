//! End-to-end inference, evaluation and the loss/GCN ablation grid.

use ndarray::Array2;

use crate::cluster::{clusters_to_predictions, mean_shift, ClusterResult};
use crate::config::{ClusterConfig, LossConfig, ModelConfig, StructureWeighting};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalResult};
use crate::model::{model_forward, ModelParams};
use crate::optim::{train, TrainConfig, TrainReport};
use crate::scene::{InstancePrediction, Scene};
use crate::spatial::{build_knn_graph, KnnGraph};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneInference {
    /// Per-point argmax class.
    pub semantic: Vec<usize>,
    pub logits: Array2<f64>,
    pub initial_embeddings: Array2<f64>,
    pub refined_embeddings: Array2<f64>,
    pub clusters: ClusterResult,
    pub instances: Vec<InstancePrediction>,
}

fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (c, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Forward pass, then mean-shift over the refined embeddings.
pub fn infer_scene(
    scene: &Scene,
    params: &ModelParams,
    model_cfg: &ModelConfig,
    cluster_cfg: &ClusterConfig,
) -> Result<SceneInference> {
    params.check_config(model_cfg)?;
    if scene.num_classes != model_cfg.num_classes {
        return Err(Error::Config(format!(
            "scene {} has {} classes, model has {}",
            scene.id, scene.num_classes, model_cfg.num_classes
        )));
    }
    let graph = if model_cfg.gcn_layers == 0 {
        KnnGraph::from_rows(&[], model_cfg.knn_k)?
    } else {
        build_knn_graph(&scene.coords, model_cfg.knn_k)
            .map_err(|e| Error::Input(format!("scene {}: {e}", scene.id)))?
    };
    let trace = model_forward(scene, &graph, params)?;
    let clusters = mean_shift(&trace.refined_embeddings, cluster_cfg);
    let instances = clusters_to_predictions(&clusters, &trace.logits);
    Ok(SceneInference {
        semantic: argmax_rows(&trace.logits),
        logits: trace.logits,
        initial_embeddings: trace.initial_embeddings,
        refined_embeddings: trace.refined_embeddings,
        clusters,
        instances,
    })
}

/// Infers every scene. With `threads > 1` scenes run on a rayon pool; the
/// output is identical because scenes are independent and collected in order.
pub fn infer_all(
    scenes: &[Scene],
    params: &ModelParams,
    model_cfg: &ModelConfig,
    cluster_cfg: &ClusterConfig,
    threads: usize,
) -> Result<Vec<SceneInference>> {
    if threads <= 1 {
        return scenes.iter().map(|s| infer_scene(s, params, model_cfg, cluster_cfg)).collect();
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        scenes
            .par_iter()
            .map(|s| infer_scene(s, params, model_cfg, cluster_cfg))
            .collect()
    })
}

pub fn evaluate_inferences(inferences: &[SceneInference], scenes: &[Scene], num_classes: usize, thresholds: &[f64]) -> Result<EvalResult> {
    let preds: Vec<Vec<InstancePrediction>> = inferences.iter().map(|i| i.instances.clone()).collect();
    let semantic: Vec<Vec<usize>> = inferences.iter().map(|i| i.semantic.clone()).collect();
    evaluate(&preds, &semantic, scenes, num_classes, thresholds)
}

pub fn evaluate_model(
    scenes: &[Scene],
    params: &ModelParams,
    model_cfg: &ModelConfig,
    cluster_cfg: &ClusterConfig,
    thresholds: &[f64],
    threads: usize,
) -> Result<EvalResult> {
    let inferences = infer_all(scenes, params, model_cfg, cluster_cfg, threads)?;
    evaluate_inferences(&inferences, scenes, model_cfg.num_classes, thresholds)
}

/// Settings shared by every cell of the ablation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub cluster: ClusterConfig,
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            cluster: ClusterConfig::default(),
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub loss: StructureWeighting,
    pub gcn_layers: usize,
    pub ap50: f64,
    pub ap25: f64,
    pub miou: f64,
    pub final_total: f64,
    pub params: ModelParams,
    pub report: TrainReport,
}

impl AblationRow {
    pub fn name(&self) -> String {
        format!("{}+gcn{}", loss_name(self.loss), self.gcn_layers)
    }
}

pub fn loss_name(w: StructureWeighting) -> &'static str {
    match w {
        StructureWeighting::Uniform => "vanillaLoss",
        StructureWeighting::SigmoidDistance => "strucLoss",
    }
}

pub const ABLATION_HEADER: &str = "config\tloss\tgcn_layers\tAP@0.5\tAP@0.25\tmIoU\tfinal_total";

/// Trains and evaluates `{vanilla, structure-aware} × {0, 1, 2}` GCN layers,
/// each from the same seed.
pub fn run_ablation(
    train_set: &[Scene],
    test_set: &[Scene],
    base: &ExperimentConfig,
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(6);
    for loss in [StructureWeighting::Uniform, StructureWeighting::SigmoidDistance] {
        for gcn_layers in 0..=2 {
            let model = ModelConfig { gcn_layers, ..base.model.clone() };
            let loss_cfg = LossConfig { structure_weighting: loss, ..base.loss };
            let outcome = train(train_set, &model, &loss_cfg, &base.train, |_| {})?;
            let result = evaluate_model(test_set, &outcome.params, &model, &base.cluster, &[0.5, 0.25], base.threads)?;
            let row = AblationRow {
                loss,
                gcn_layers,
                ap50: result.map[0],
                ap25: result.map[1],
                miou: result.semantic.miou,
                final_total: outcome.report.epochs.last().map_or(f64::NAN, |e| e.total),
                params: outcome.params,
                report: outcome.report,
            };
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = format!("{ABLATION_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.9}\n",
            r.name(),
            loss_name(r.loss),
            r.gcn_layers,
            r.ap50,
            r.ap25,
            r.miou,
            r.final_total
        ));
    }
    s
}
