//! Per-point MLP backbone with semantic and embedding heads.

use ndarray::{Array2, Axis};

use super::params::{Dense, ModelParams};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::scene::Scene;

/// Intermediates of one backbone evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneTrace {
    /// `N × 6`: xyz centered on the scene mean, then rgb.
    pub inputs: Array2<f64>,
    pub pre_activations: Vec<Array2<f64>>,
    /// `relu` of each pre-activation.
    pub activations: Vec<Array2<f64>>,
}

impl BackboneTrace {
    /// Backbone output features (`N × D`).
    pub fn features(&self) -> &Array2<f64> {
        self.activations.last().unwrap_or(&self.inputs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneOutput {
    pub logits: Array2<f64>,
    pub initial_embeddings: Array2<f64>,
    pub trace: BackboneTrace,
}

/// Network inputs: coordinates centered by the scene mean (still in meters)
/// followed by the colors.
pub fn input_features(scene: &Scene) -> Array2<f64> {
    let n = scene.len();
    let mut mean = [0.0; 3];
    for c in &scene.coords {
        for a in 0..3 {
            mean[a] += c[a];
        }
    }
    for m in &mut mean {
        *m /= n.max(1) as f64;
    }
    let mut x = Array2::zeros((n, ModelConfig::INPUT_DIM));
    for (i, (c, rgb)) in scene.coords.iter().zip(&scene.colors).enumerate() {
        for a in 0..3 {
            x[[i, a]] = c[a] - mean[a];
            x[[i, 3 + a]] = rgb[a];
        }
    }
    x
}

pub(crate) fn affine(x: &Array2<f64>, layer: &Dense) -> Array2<f64> {
    let mut y = x.dot(&layer.weight);
    y += &layer.bias;
    y
}

pub fn backbone_forward(scene: &Scene, params: &ModelParams) -> Result<BackboneOutput> {
    params.check_consistent()?;
    if scene.colors.len() != scene.len() {
        return Err(Error::Input("colors and coordinates differ in length".into()));
    }
    let inputs = input_features(scene);
    let mut pre_activations = Vec::with_capacity(params.backbone.len());
    let mut activations: Vec<Array2<f64>> = Vec::with_capacity(params.backbone.len());
    for layer in &params.backbone {
        let x = activations.last().unwrap_or(&inputs);
        let z = affine(x, layer);
        activations.push(z.mapv(|v| v.max(0.0)));
        pre_activations.push(z);
    }
    let trace = BackboneTrace {
        inputs,
        pre_activations,
        activations,
    };
    let features = trace.features();
    Ok(BackboneOutput {
        logits: affine(features, &params.semantic_head),
        initial_embeddings: affine(features, &params.embedding_head),
        trace,
    })
}

/// Accumulates head and backbone gradients into `grads`; returns the
/// gradient with respect to the network inputs.
pub(crate) fn backbone_backward(
    trace: &BackboneTrace,
    params: &ModelParams,
    grad_logits: &Array2<f64>,
    grad_initial: &Array2<f64>,
    grads: &mut ModelParams,
) -> Array2<f64> {
    let features = trace.features();
    let ft = features.t();
    grads.semantic_head.weight += &ft.dot(grad_logits);
    grads.semantic_head.bias += &grad_logits.sum_axis(Axis(0));
    grads.embedding_head.weight += &ft.dot(grad_initial);
    grads.embedding_head.bias += &grad_initial.sum_axis(Axis(0));

    let mut g = grad_logits.dot(&params.semantic_head.weight.t());
    g += &grad_initial.dot(&params.embedding_head.weight.t());
    for l in (0..params.backbone.len()).rev() {
        ndarray::Zip::from(&mut g)
            .and(&trace.pre_activations[l])
            .for_each(|g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
        let x = if l == 0 {
            &trace.inputs
        } else {
            &trace.activations[l - 1]
        };
        grads.backbone[l].weight += &x.t().dot(&g);
        grads.backbone[l].bias += &g.sum_axis(Axis(0));
        g = g.dot(&params.backbone[l].weight.t());
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(n: usize) -> Scene {
        Scene {
            id: "b".into(),
            coords: (0..n)
                .map(|i| [i as f64 * 0.3, (i * i) as f64 * 0.1, 1.0 - i as f64 * 0.2])
                .collect(),
            colors: (0..n).map(|i| [0.1 * i as f64 % 1.0, 0.5, 0.9]).collect(),
            semantic_labels: vec![0; n],
            instance_ids: vec![0; n],
            num_classes: 3,
        }
    }

    fn cfg() -> ModelConfig {
        ModelConfig {
            num_classes: 3,
            backbone_hidden: vec![7, 5],
            gcn_layers: 0,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn zero_params_give_zero_outputs() {
        let p = ModelParams::zeros(&cfg());
        let out = backbone_forward(&scene(6), &p).unwrap();
        assert!(out.logits.iter().all(|&v| v == 0.0));
        assert!(out.initial_embeddings.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_straight_line_evaluation() {
        let p = ModelParams::init(&cfg(), 11).unwrap();
        let s = scene(1);
        let out = backbone_forward(&s, &p).unwrap();
        // Single point: centered xyz is zero, so the input is [0, 0, 0, rgb].
        let mut x: Vec<f64> = vec![0.0, 0.0, 0.0, s.colors[0][0], s.colors[0][1], s.colors[0][2]];
        for layer in &p.backbone {
            let mut y = vec![0.0; layer.outputs()];
            for (o, yo) in y.iter_mut().enumerate() {
                let mut acc = layer.bias[o];
                for (i, xi) in x.iter().enumerate() {
                    acc += xi * layer.weight[[i, o]];
                }
                *yo = acc.max(0.0);
            }
            x = y;
        }
        for (head, got) in [
            (&p.semantic_head, out.logits.row(0).to_vec()),
            (&p.embedding_head, out.initial_embeddings.row(0).to_vec()),
        ] {
            for o in 0..head.outputs() {
                let mut acc = head.bias[o];
                for (i, xi) in x.iter().enumerate() {
                    acc += xi * head.weight[[i, o]];
                }
                assert!((acc - got[o]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn translation_leaves_outputs_unchanged() {
        let p = ModelParams::init(&cfg(), 2).unwrap();
        let s = scene(9);
        let mut moved = s.clone();
        for c in &mut moved.coords {
            for v in c.iter_mut() {
                *v += 5.0;
            }
        }
        let a = backbone_forward(&s, &p).unwrap();
        let b = backbone_forward(&moved, &p).unwrap();
        for (x, y) in a.logits.iter().zip(b.logits.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in a.initial_embeddings.iter().zip(b.initial_embeddings.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn inconsistent_params_are_rejected() {
        let mut p = ModelParams::init(&cfg(), 2).unwrap();
        p.semantic_head = Dense::zeros(4, 3);
        assert!(matches!(backbone_forward(&scene(3), &p), Err(Error::Config(_))));
    }
}
