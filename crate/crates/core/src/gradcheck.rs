//! Finite-difference verification of every analytic gradient path.
//!
//! Each parameter group is probed along random unit directions `d`: the
//! analytic directional derivative `<grad, d>` is compared with the central
//! difference `(L(theta + eps d) - L(theta - eps d)) / 2 eps`. A probe whose
//! perturbation flips any ReLU or hinge is redrawn, since finite differences
//! across a kink measure a one-sided slope mix rather than the derivative.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{LossConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::loss::{
    compute_instance_stats, cross_entropy, structure_aware_loss, total_training_loss,
};
use crate::model::{model_backward, model_forward, parameter_group, ForwardTrace, ModelParams};
use crate::rng::{stream, stream_rng};
use crate::scene::Scene;
use crate::spatial::{build_knn_graph, KnnGraph};

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub epsilon: f64,
    /// Largest accepted relative error.
    pub tolerance: f64,
    /// Random directions per group.
    pub directions: usize,
    /// Redraw budget per direction when a probe crosses a kink.
    pub max_redraws: usize,
    /// Test hook: scales the analytic gradient of this group by 1.1.
    pub corrupt_group: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            tolerance: 1e-4,
            directions: 3,
            max_redraws: 25,
            corrupt_group: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub group: String,
    pub max_rel_error: f64,
    pub probes: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub groups: Vec<GroupReport>,
    /// Probes discarded because they crossed a kink.
    pub redrawn: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.groups
            .iter()
            .filter(|g| !g.passed)
            .map(|g| g.group.as_str())
            .collect()
    }

    pub fn render(&self) -> String {
        let mut s = String::from("group\tmax_rel_error\tprobes\tstatus\n");
        for g in &self.groups {
            s.push_str(&format!(
                "{}\t{:.3e}\t{}\t{}\n",
                g.group,
                g.max_rel_error,
                g.probes,
                if g.passed { "pass" } else { "FAIL" }
            ));
        }
        s
    }
}

/// Relative error with an absolute floor of `1e-8` in the denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// A random scene of `n` points split into `instances` spatial clusters.
pub fn random_scene(seed: u64, n: usize, instances: usize, num_classes: usize) -> Scene {
    let mut rng = stream_rng(seed, stream::GRADCHECK, 0);
    let centers: Vec<[f64; 3]> = (0..instances.max(1))
        .map(|_| {
            [
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(0.0..2.0),
            ]
        })
        .collect();
    let classes: Vec<i32> = (0..instances.max(1))
        .map(|_| rng.random_range(0..num_classes as i32))
        .collect();
    let mut scene = Scene {
        id: format!("gradcheck_{seed}"),
        coords: Vec::with_capacity(n),
        colors: Vec::with_capacity(n),
        semantic_labels: Vec::with_capacity(n),
        instance_ids: Vec::with_capacity(n),
        num_classes,
    };
    for i in 0..n {
        let inst = i % instances.max(1);
        let c = centers[inst];
        scene.coords.push([
            c[0] + rng.random_range(-0.8..0.8),
            c[1] + rng.random_range(-0.8..0.8),
            c[2] + rng.random_range(-0.8..0.8),
        ]);
        scene.colors.push([rng.random(), rng.random(), rng.random()]);
        scene.semantic_labels.push(classes[inst]);
        scene
            .instance_ids
            .push(if instances == 0 { -1 } else { inst as i32 });
    }
    scene
}

/// Sign pattern of every kink the loss passes through.
fn kink_signature(scene: &Scene, trace: &ForwardTrace, cfg: &LossConfig) -> Vec<bool> {
    let mut sig = Vec::new();
    for z in &trace.backbone.pre_activations {
        sig.extend(z.iter().map(|&v| v > 0.0));
    }
    for layer in &trace.gcn {
        sig.extend(layer.hidden_pre.iter().map(|&v| v > 0.0));
    }
    sig.extend(hinge_signature(scene, &trace.initial_embeddings, cfg));
    sig.extend(hinge_signature(scene, &trace.refined_embeddings, cfg));
    sig
}

fn hinge_signature(scene: &Scene, emb: &Array2<f64>, cfg: &LossConfig) -> Vec<bool> {
    let stats = compute_instance_stats(scene, emb, cfg.structure_weighting);
    let mut sig: Vec<bool> = stats
        .instances
        .iter()
        .flat_map(|i| i.embedding_distances.iter().map(|&s| s > cfg.alpha))
        .collect();
    for a in &stats.instances {
        for b in &stats.instances {
            let d: f64 = a
                .embedding_mean
                .iter()
                .zip(&b.embedding_mean)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            sig.push(d < cfg.beta);
        }
    }
    sig
}

fn unit_direction(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut d: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    d.iter_mut().for_each(|v| *v /= norm);
    d
}

/// Checks the full network: total training loss against every parameter group.
pub fn check_model_gradients(
    scene: &Scene,
    graph: &KnnGraph,
    params: &ModelParams,
    loss_cfg: &LossConfig,
    opts: &GradcheckOptions,
    seed: u64,
) -> Result<GradcheckReport> {
    let eval = |p: &ModelParams| -> Result<(f64, Vec<bool>)> {
        let t = model_forward(scene, graph, p)?;
        let l = total_training_loss(scene, &t.logits, &t.initial_embeddings, &t.refined_embeddings, loss_cfg)?;
        Ok((l.value, kink_signature(scene, &t, loss_cfg)))
    };
    let trace = model_forward(scene, graph, params)?;
    let loss = total_training_loss(
        scene,
        &trace.logits,
        &trace.initial_embeddings,
        &trace.refined_embeddings,
        loss_cfg,
    )?;
    let (grads, _) = model_backward(
        &trace,
        &loss.grad_logits,
        &loss.grad_initial,
        &loss.grad_refined,
        graph,
        params,
    )?;
    let base_sig = kink_signature(scene, &trace, loss_cfg);

    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let mut groups: Vec<String> = Vec::new();
    for n in &names {
        let g = parameter_group(n);
        if !groups.contains(&g) {
            groups.push(g);
        }
    }
    let flat_grad = grads.to_flat();
    let mut offsets = Vec::new();
    let mut off = 0;
    for (n, t) in params.tensors() {
        offsets.push((parameter_group(&n), off, t.len()));
        off += t.len();
    }

    let mut rng = stream_rng(seed, stream::GRADCHECK, 1);
    let mut report = GradcheckReport {
        groups: Vec::new(),
        redrawn: 0,
    };
    let theta = params.to_flat();
    let cfg_shape = ShapeTemplate::of(params);
    for group in &groups {
        let idx: Vec<usize> = offsets
            .iter()
            .filter(|(g, _, _)| g == group)
            .flat_map(|&(_, o, l)| o..o + l)
            .collect();
        let scale = if opts.corrupt_group.as_deref() == Some(group.as_str()) {
            1.1
        } else {
            1.0
        };
        let mut max_err: f64 = 0.0;
        let mut probes = 0;
        for _ in 0..opts.directions {
            let mut accepted = None;
            for _ in 0..=opts.max_redraws {
                let d = unit_direction(idx.len(), &mut rng);
                let mut plus = theta.clone();
                let mut minus = theta.clone();
                for (k, &i) in idx.iter().enumerate() {
                    plus[i] += opts.epsilon * d[k];
                    minus[i] -= opts.epsilon * d[k];
                }
                let (lp, sp) = eval(&cfg_shape.rebuild(&plus)?)?;
                let (lm, sm) = eval(&cfg_shape.rebuild(&minus)?)?;
                if sp != base_sig || sm != base_sig {
                    report.redrawn += 1;
                    continue;
                }
                let analytic: f64 = idx
                    .iter()
                    .zip(&d)
                    .map(|(&i, dk)| scale * flat_grad[i] * dk)
                    .sum();
                let numeric = (lp - lm) / (2.0 * opts.epsilon);
                accepted = Some(relative_error(analytic, numeric));
                break;
            }
            match accepted {
                Some(e) => {
                    max_err = max_err.max(e);
                    probes += 1;
                }
                None => max_err = f64::INFINITY,
            }
        }
        report.groups.push(GroupReport {
            group: group.clone(),
            max_rel_error: max_err,
            probes,
            passed: max_err < opts.tolerance && probes > 0,
        });
    }
    Ok(report)
}

/// Parameter shapes captured from a live instance so perturbed flat vectors
/// can be rebuilt without the originating config.
struct ShapeTemplate(ModelParams);

impl ShapeTemplate {
    fn of(p: &ModelParams) -> Self {
        Self(p.clone())
    }

    fn rebuild(&self, flat: &[f64]) -> Result<ModelParams> {
        let mut p = self.0.clone();
        let mut off = 0;
        for (_, t) in p.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
        if off != flat.len() {
            return Err(Error::Internal("flat parameter length mismatch".into()));
        }
        Ok(p)
    }
}

/// Checks the loss-to-output paths directly: structure-aware loss against
/// embeddings (`loss.embeddings`) and cross-entropy against logits
/// (`loss.logits`).
pub fn check_loss_gradients(
    scene: &Scene,
    embeddings: &Array2<f64>,
    logits: &Array2<f64>,
    loss_cfg: &LossConfig,
    opts: &GradcheckOptions,
    seed: u64,
) -> Result<GradcheckReport> {
    let mut rng = stream_rng(seed, stream::GRADCHECK, 2);
    let mut report = GradcheckReport {
        groups: Vec::new(),
        redrawn: 0,
    };

    let (_, g_emb) = structure_aware_loss(scene, embeddings, loss_cfg);
    let base = hinge_signature(scene, embeddings, loss_cfg);
    let (_, g_log) = cross_entropy(logits, &scene.semantic_labels, None)?;

    for (group, point, grad) in [
        ("loss.embeddings", embeddings, &g_emb),
        ("loss.logits", logits, &g_log),
    ] {
        let scale = if opts.corrupt_group.as_deref() == Some(group) { 1.1 } else { 1.0 };
        let mut max_err: f64 = 0.0;
        let mut probes = 0;
        for _ in 0..opts.directions {
            let mut accepted = None;
            for _ in 0..=opts.max_redraws {
                let d = Array2::from_shape_vec(point.dim(), unit_direction(point.len(), &mut rng))
                    .expect("direction shape");
                let plus = point + &(&d * opts.epsilon);
                let minus = point - &(&d * opts.epsilon);
                let (lp, lm) = if group == "loss.embeddings" {
                    if hinge_signature(scene, &plus, loss_cfg) != base
                        || hinge_signature(scene, &minus, loss_cfg) != base
                    {
                        report.redrawn += 1;
                        continue;
                    }
                    (
                        structure_aware_loss(scene, &plus, loss_cfg).0,
                        structure_aware_loss(scene, &minus, loss_cfg).0,
                    )
                } else {
                    (
                        cross_entropy(&plus, &scene.semantic_labels, None)?.0,
                        cross_entropy(&minus, &scene.semantic_labels, None)?.0,
                    )
                };
                let analytic = scale * (grad * &d).sum();
                let numeric = (lp - lm) / (2.0 * opts.epsilon);
                accepted = Some(relative_error(analytic, numeric));
                break;
            }
            match accepted {
                Some(e) => {
                    max_err = max_err.max(e);
                    probes += 1;
                }
                None => max_err = f64::INFINITY,
            }
        }
        report.groups.push(GroupReport {
            group: group.to_string(),
            max_rel_error: max_err,
            probes,
            passed: max_err < opts.tolerance && probes > 0,
        });
    }
    Ok(report)
}

const EMBEDDING_GAIN: f64 = 40.0;

/// Full check on a random scene of `n_points` points and `instances`
/// instances: every parameter group plus the loss paths.
pub fn run_gradcheck(
    seed: u64,
    n_points: usize,
    instances: usize,
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport> {
    let scene = random_scene(seed, n_points, instances, model_cfg.num_classes);
    let graph = build_knn_graph(&scene.coords, model_cfg.knn_k)?;
    let mut params = ModelParams::init(model_cfg, seed)?;
    // Freshly initialized embeddings are too compact to activate the intra
    // hinge, and a zero scorer output would hide the scorer's hidden layer.
    params.embedding_head.weight *= EMBEDDING_GAIN;
    params.embedding_head.bias *= EMBEDDING_GAIN;
    let mut rng = stream_rng(seed, stream::GRADCHECK, 3);
    for layer in &mut params.gcn {
        layer.f_out.weight.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        layer.f_out.bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    }
    let mut report = check_model_gradients(&scene, &graph, &params, loss_cfg, opts, seed)?;

    let trace = model_forward(&scene, &graph, &params)?;
    let spread = &trace.initial_embeddings;
    let loss_report =
        check_loss_gradients(&scene, spread, &trace.logits, loss_cfg, opts, seed)?;
    report.groups.extend(loss_report.groups);
    report.redrawn += loss_report.redrawn;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{IntraNormalization, StructureWeighting};

    fn small_cfg(layers: usize) -> ModelConfig {
        ModelConfig {
            num_classes: 3,
            backbone_hidden: vec![12, 10],
            attention_hidden: 6,
            gcn_layers: layers,
            knn_k: 5,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn all_groups_pass_on_small_scene() {
        let r = run_gradcheck(1, 40, 3, &small_cfg(2), &LossConfig::default(), &GradcheckOptions::default()).unwrap();
        assert!(r.passed(), "{}", r.render());
        assert_eq!(r.groups.len(), 3 + 2 * 2 + 2);
    }

    #[test]
    fn sum_mode_and_uniform_weights_pass() {
        let loss = LossConfig {
            intra_normalization: IntraNormalization::Sum,
            structure_weighting: StructureWeighting::Uniform,
            ..LossConfig::default()
        };
        let r = run_gradcheck(4, 40, 4, &small_cfg(1), &loss, &GradcheckOptions::default()).unwrap();
        assert!(r.passed(), "{}", r.render());
    }

    #[test]
    fn corrupted_gradient_is_named() {
        let opts = GradcheckOptions {
            corrupt_group: Some("gcn1.W".into()),
            ..GradcheckOptions::default()
        };
        let r = run_gradcheck(2, 40, 3, &small_cfg(2), &LossConfig::default(), &opts).unwrap();
        assert_eq!(r.failures(), vec!["gcn1.W"]);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1e-12, 2e-12) < 1e-3);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
