//! The segmentation network: backbone, heads and attention-KNN refinement,
//! with exact reverse-mode gradients.

mod backbone;
mod gcn;
mod params;

pub use backbone::{backbone_forward, input_features, BackboneOutput, BackboneTrace};
pub use gcn::{
    attention_scores, gcn_layer_forward, gcn_layer_forward_traced, knn_mean, softmax, GcnTrace,
};
pub use params::{parameter_group, Dense, GcnLayerParams, ModelParams, ParamGradients};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scene::Scene;
use crate::spatial::KnnGraph;

/// Everything one forward pass computed.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub backbone: BackboneTrace,
    pub logits: Array2<f64>,
    pub initial_embeddings: Array2<f64>,
    /// One entry per GCN layer, in application order.
    pub gcn: Vec<GcnTrace>,
    pub refined_embeddings: Array2<f64>,
}

pub fn model_forward(scene: &Scene, graph: &KnnGraph, params: &ModelParams) -> Result<ForwardTrace> {
    if !params.gcn.is_empty() && graph.num_points() != scene.len() {
        return Err(Error::Input(format!(
            "graph covers {} points, scene has {}",
            graph.num_points(),
            scene.len()
        )));
    }
    let BackboneOutput {
        logits,
        initial_embeddings,
        trace: backbone,
    } = backbone_forward(scene, params)?;
    let mut gcn = Vec::with_capacity(params.gcn.len());
    for layer in &params.gcn {
        let input = gcn
            .last()
            .map_or(&initial_embeddings, |t: &GcnTrace| &t.output);
        gcn.push(gcn_layer_forward_traced(input, graph, layer));
    }
    let refined_embeddings = gcn
        .last()
        .map_or_else(|| initial_embeddings.clone(), |t| t.output.clone());
    Ok(ForwardTrace {
        backbone,
        logits,
        initial_embeddings,
        gcn,
        refined_embeddings,
    })
}

/// Reverse pass. The `grad_*` arrays are partial derivatives of some scalar
/// with respect to the three network outputs; returns the parameter
/// gradients and the gradient with respect to the `N × 6` inputs.
pub fn model_backward(
    trace: &ForwardTrace,
    grad_logits: &Array2<f64>,
    grad_initial: &Array2<f64>,
    grad_refined: &Array2<f64>,
    graph: &KnnGraph,
    params: &ModelParams,
) -> Result<(ParamGradients, Array2<f64>)> {
    if trace.gcn.len() != params.gcn.len() {
        return Err(Error::Internal(format!(
            "trace has {} GCN layers, parameters have {}",
            trace.gcn.len(),
            params.gcn.len()
        )));
    }
    if grad_logits.dim() != trace.logits.dim()
        || grad_initial.dim() != trace.initial_embeddings.dim()
        || grad_refined.dim() != trace.refined_embeddings.dim()
    {
        return Err(Error::Internal("gradient shapes do not match the trace".into()));
    }
    if trace.backbone.pre_activations.len() != params.backbone.len() {
        return Err(Error::Internal("trace does not match backbone depth".into()));
    }
    let mut grads = params.zeros_like();
    let mut g = grad_refined.clone();
    for l in (0..params.gcn.len()).rev() {
        g = gcn::gcn_layer_backward(&trace.gcn[l], graph, &params.gcn[l], &g, &mut grads.gcn[l]);
    }
    g += grad_initial;
    let grad_inputs =
        backbone::backbone_backward(&trace.backbone, params, grad_logits, &g, &mut grads);
    Ok((grads, grad_inputs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::spatial::build_knn_graph;

    fn toy_scene(n: usize) -> Scene {
        Scene {
            id: "m".into(),
            coords: (0..n)
                .map(|i| {
                    let t = i as f64;
                    [t.sin() * 2.0, (t * 1.3).cos(), t * 0.07]
                })
                .collect(),
            colors: (0..n).map(|i| [(i % 5) as f64 / 5.0, 0.3, 0.8]).collect(),
            semantic_labels: (0..n).map(|i| (i % 3) as i32).collect(),
            instance_ids: (0..n).map(|i| (i % 2) as i32).collect(),
            num_classes: 3,
        }
    }

    fn cfg(layers: usize) -> ModelConfig {
        ModelConfig {
            num_classes: 3,
            backbone_hidden: vec![8],
            attention_hidden: 5,
            gcn_layers: layers,
            knn_k: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn no_gcn_layers_means_refined_is_initial() {
        let s = toy_scene(12);
        let g = build_knn_graph(&s.coords, 4).unwrap();
        let p = ModelParams::init(&cfg(0), 1).unwrap();
        let t = model_forward(&s, &g, &p).unwrap();
        assert_eq!(t.refined_embeddings, t.initial_embeddings);
    }

    #[test]
    fn identity_layers_compose_to_identity() {
        let s = toy_scene(12);
        let g = build_knn_graph(&s.coords, 4).unwrap();
        let mut p = ModelParams::init(&cfg(2), 1).unwrap();
        for l in &mut p.gcn {
            *l = GcnLayerParams::identity(4, 5);
        }
        let t = model_forward(&s, &g, &p).unwrap();
        assert_eq!(t.refined_embeddings, t.initial_embeddings);
    }

    #[test]
    fn attention_rows_sum_to_one_and_forward_is_pure() {
        let s = toy_scene(30);
        let g = build_knn_graph(&s.coords, 4).unwrap();
        let mut p = ModelParams::init(&cfg(2), 5).unwrap();
        for l in &mut p.gcn {
            l.f_out.weight.mapv_inplace(|_| 0.7);
        }
        let t = model_forward(&s, &g, &p).unwrap();
        for layer in &t.gcn {
            for row in layer.attention.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&a| a >= 0.0));
            }
        }
        assert_eq!(t, model_forward(&s, &g, &p).unwrap());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_parameter_gradient() {
        let s = toy_scene(15);
        let g = build_knn_graph(&s.coords, 4).unwrap();
        let p = ModelParams::init(&cfg(2), 5).unwrap();
        let t = model_forward(&s, &g, &p).unwrap();
        let zl = Array2::zeros(t.logits.dim());
        let ze = Array2::zeros(t.initial_embeddings.dim());
        let (grads, gi) = model_backward(&t, &zl, &ze, &ze, &g, &p).unwrap();
        assert!(grads.to_flat().iter().all(|&v| v == 0.0));
        assert!(gi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn refined_and_initial_paths_agree_without_gcn() {
        let s = toy_scene(15);
        let g = build_knn_graph(&s.coords, 4).unwrap();
        let p = ModelParams::init(&cfg(0), 5).unwrap();
        let t = model_forward(&s, &g, &p).unwrap();
        let zl = Array2::zeros(t.logits.dim());
        let ze = Array2::zeros(t.initial_embeddings.dim());
        let up = Array2::from_shape_fn(ze.dim(), |(i, j)| (i as f64 - 3.0 * j as f64) * 0.1);
        let (a, _) = model_backward(&t, &zl, &ze, &up, &g, &p).unwrap();
        let (b, _) = model_backward(&t, &zl, &up, &ze, &g, &p).unwrap();
        assert_eq!(a.embedding_head, b.embedding_head);
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_trace_is_an_internal_error() {
        let s = toy_scene(15);
        let g = build_knn_graph(&s.coords, 4).unwrap();
        let p2 = ModelParams::init(&cfg(2), 5).unwrap();
        let p1 = ModelParams::init(&cfg(1), 5).unwrap();
        let t = model_forward(&s, &g, &p2).unwrap();
        let zl = Array2::zeros(t.logits.dim());
        let ze = Array2::zeros(t.initial_embeddings.dim());
        assert!(matches!(
            model_backward(&t, &zl, &ze, &ze, &g, &p1),
            Err(Error::Internal(_))
        ));
    }
}
