//! Adam and the per-scene stochastic training loop.

use std::time::Instant;

use rand::seq::SliceRandom;

use crate::config::{LossConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::loss::total_training_loss;
use crate::model::{model_backward, model_forward, parameter_group, ModelParams, ParamGradients};
use crate::rng::{stream, stream_rng};
use crate::scene::Scene;
use crate::spatial::{build_knn_graph, KnnGraph};

/// Adam with bias correction and a constant learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: ModelParams,
    pub v: ModelParams,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        Self {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub fn adam_step(params: &mut ModelParams, grads: &ParamGradients, state: &mut AdamState) -> Result<()> {
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite {
            group: format!("{} ({name})", parameter_group(&name)),
        });
    }
    if params.num_params() != grads.num_params() || params.num_params() != state.m.num_params() {
        return Err(Error::Internal("optimizer buffers do not match parameters".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    let g_all = grads.tensors();
    for ((((_, p), (_, m)), (_, v)), (_, g)) in params
        .tensors_mut()
        .into_iter()
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut())
        .zip(g_all)
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut ParamGradients, max_norm: f64) -> f64 {
    let norm = grads
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for (_, t) in grads.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Leading epochs trained on cross-entropy only (backbone pretraining).
    pub pretrain_epochs: usize,
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            lr: 0.001,
            seed: 0,
            pretrain_epochs: 0,
            max_grad_norm: None,
        }
    }
}

/// Mean loss items over one epoch's scenes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub cross_entropy: f64,
    pub sal_initial: f64,
    pub sal_refined: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub wall_seconds: f64,
}

impl TrainReport {
    /// Plain-text loss table, one row per epoch. Wall time is left out so
    /// reruns produce identical tables.
    pub fn loss_table(&self) -> String {
        let mut s = String::from("epoch\tce\tsal_initial\tsal_refined\ttotal\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{}\t{:.9}\t{:.9}\t{:.9}\t{:.9}\n",
                e.epoch, e.cross_entropy, e.sal_initial, e.sal_refined, e.total
            ));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub optimizer: AdamState,
    pub report: TrainReport,
}

/// Spatial graphs for every scene; empty placeholders when the model has no
/// GCN layers.
pub fn build_graphs(dataset: &[Scene], cfg: &ModelConfig) -> Result<Vec<KnnGraph>> {
    dataset
        .iter()
        .map(|s| {
            if cfg.gcn_layers == 0 {
                KnnGraph::from_rows(&[], cfg.knn_k)
            } else {
                build_knn_graph(&s.coords, cfg.knn_k)
                    .map_err(|e| Error::Input(format!("scene {}: {e}", s.id)))
            }
        })
        .collect()
}

/// Trains from a seeded initialization.
pub fn train(
    dataset: &[Scene],
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    let params = ModelParams::init(model_cfg, train_cfg.seed)?;
    let optimizer = AdamState::new(&params, train_cfg.lr);
    train_from(dataset, model_cfg, loss_cfg, train_cfg, params, optimizer, on_epoch)
}

/// One scene per Adam step, scenes visited in a seed-shuffled order per epoch.
pub fn train_from(
    dataset: &[Scene],
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
    mut params: ModelParams,
    mut optimizer: AdamState,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    model_cfg.validate()?;
    loss_cfg.validate()?;
    params.check_config(model_cfg)?;
    let start = Instant::now();
    let graphs = build_graphs(dataset, model_cfg)?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epochs = Vec::with_capacity(train_cfg.epochs);
    for epoch in 0..train_cfg.epochs {
        let mut rng = stream_rng(train_cfg.seed, stream::SHUFFLE, epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let pretraining = epoch < train_cfg.pretrain_epochs;
        let (mut ce, mut si, mut sr) = (0.0, 0.0, 0.0);
        for &idx in &order {
            let scene = &dataset[idx];
            let trace = model_forward(scene, &graphs[idx], &params)?;
            let mut loss = total_training_loss(
                scene,
                &trace.logits,
                &trace.initial_embeddings,
                &trace.refined_embeddings,
                loss_cfg,
            )?;
            ce += loss.cross_entropy;
            si += loss.sal_initial;
            sr += loss.sal_refined;
            if pretraining {
                loss.grad_initial.fill(0.0);
                loss.grad_refined.fill(0.0);
            }
            let (mut grads, _) = model_backward(
                &trace,
                &loss.grad_logits,
                &loss.grad_initial,
                &loss.grad_refined,
                &graphs[idx],
                &params,
            )?;
            if let Some(max) = train_cfg.max_grad_norm {
                clip_grad_norm(&mut grads, max);
            }
            adam_step(&mut params, &grads, &mut optimizer)
                .map_err(|e| match e {
                    Error::NonFinite { group } => Error::NonFinite {
                        group: format!("{group} at epoch {epoch}, scene {}", scene.id),
                    },
                    other => other,
                })?;
        }
        let n = dataset.len() as f64;
        let stats = EpochStats {
            epoch,
            cross_entropy: ce / n,
            sal_initial: si / n,
            sal_refined: sr / n,
            total: ce / n + si / n + sr / n,
        };
        on_epoch(&stats);
        epochs.push(stats);
    }
    Ok(TrainOutcome {
        params,
        optimizer,
        report: TrainReport {
            epochs,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    })
}
