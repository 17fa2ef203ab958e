//! Graph convolution with attention-weighted KNN aggregation.
//!
//! For point `i` with spatial neighbors `j_1..j_k`, a scorer
//! `f([x_i ; x_j]) = relu([x_i ; x_j] A + a) c + c0` rates each neighbor,
//! the scores are softmax-normalized into weights, the aggregate is the
//! weighted neighbor sum, and the output is `[x_i ; aggregate] W`.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2};

use super::params::GcnLayerParams;
use crate::spatial::KnnGraph;

/// Numerically stable softmax (max-subtracted).
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|&p| (p - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Raw scores `p` and softmax weights for one center point and its `k`
/// neighbor embeddings (`k × F`).
pub fn attention_scores(
    center: ArrayView1<f64>,
    neighbors: ArrayView2<f64>,
    layer: &GcnLayerParams,
) -> (Array1<f64>, Array1<f64>) {
    let f = center.len();
    let a = &layer.f_hidden;
    let scores: Vec<f64> = neighbors
        .rows()
        .into_iter()
        .map(|nb| {
            let mut p = layer.f_out.bias[0];
            for h in 0..a.outputs() {
                let mut z = a.bias[h];
                for d in 0..f {
                    z += center[d] * a.weight[[d, h]] + nb[d] * a.weight[[f + d, h]];
                }
                p += z.max(0.0) * layer.f_out.weight[[h, 0]];
            }
            p
        })
        .collect();
    let alpha = softmax(&scores);
    (Array1::from(scores), Array1::from(alpha))
}

/// Intermediates of one layer evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnTrace {
    pub input: Array2<f64>,
    /// `N × k × H` scorer hidden pre-activations.
    pub hidden_pre: Array3<f64>,
    /// `N × k` raw scores.
    pub scores: Array2<f64>,
    /// `N × k` softmax weights; each row sums to one.
    pub attention: Array2<f64>,
    pub aggregate: Array2<f64>,
    pub output: Array2<f64>,
}

pub fn gcn_layer_forward(
    embeddings: &Array2<f64>,
    graph: &KnnGraph,
    layer: &GcnLayerParams,
) -> Array2<f64> {
    gcn_layer_forward_traced(embeddings, graph, layer).output
}

pub fn gcn_layer_forward_traced(
    embeddings: &Array2<f64>,
    graph: &KnnGraph,
    layer: &GcnLayerParams,
) -> GcnTrace {
    let (n, f) = embeddings.dim();
    let k = graph.k();
    let hdim = layer.hidden();
    let a = &layer.f_hidden.weight;
    // [x_i ; x_j] A splits into x_i A_top + x_j A_bot.
    let u = embeddings.dot(&a.slice(s![..f, ..]));
    let v = embeddings.dot(&a.slice(s![f.., ..]));
    let c = layer.f_out.weight.column(0);
    let c0 = layer.f_out.bias[0];

    let mut hidden_pre = Array3::zeros((n, k, hdim));
    let mut scores = Array2::zeros((n, k));
    let mut attention = Array2::zeros((n, k));
    let mut aggregate = Array2::zeros((n, f));
    for (i, row) in graph.rows().enumerate() {
        let mut p_row = vec![0.0; k];
        for (m, &j) in row.iter().enumerate() {
            let mut p = c0;
            for h in 0..hdim {
                let z = u[[i, h]] + v[[j, h]] + layer.f_hidden.bias[h];
                hidden_pre[[i, m, h]] = z;
                p += z.max(0.0) * c[h];
            }
            p_row[m] = p;
        }
        let alpha = softmax(&p_row);
        for (m, &j) in row.iter().enumerate() {
            scores[[i, m]] = p_row[m];
            attention[[i, m]] = alpha[m];
            for d in 0..f {
                aggregate[[i, d]] += alpha[m] * embeddings[[j, d]];
            }
        }
    }
    let w = &layer.updator;
    let mut output = embeddings.dot(&w.slice(s![..f, ..]));
    output += &aggregate.dot(&w.slice(s![f.., ..]));
    GcnTrace {
        input: embeddings.clone(),
        hidden_pre,
        scores,
        attention,
        aggregate,
        output,
    }
}

/// Gradients of one layer given `grad_out = dL/d output`: accumulates
/// parameter gradients into `grads` and returns `dL/d input`.
pub(crate) fn gcn_layer_backward(
    trace: &GcnTrace,
    graph: &KnnGraph,
    layer: &GcnLayerParams,
    grad_out: &Array2<f64>,
    grads: &mut GcnLayerParams,
) -> Array2<f64> {
    let x = &trace.input;
    let (n, f) = x.dim();
    let hdim = layer.hidden();
    let w = &layer.updator;
    let w_top = w.slice(s![..f, ..]);
    let w_bot = w.slice(s![f.., ..]);

    grads
        .updator
        .slice_mut(s![..f, ..])
        .scaled_add(1.0, &x.t().dot(grad_out));
    grads
        .updator
        .slice_mut(s![f.., ..])
        .scaled_add(1.0, &trace.aggregate.t().dot(grad_out));
    let mut grad_x = grad_out.dot(&w_top.t());
    let grad_agg = grad_out.dot(&w_bot.t());

    let c = layer.f_out.weight.column(0);
    let mut grad_u = Array2::<f64>::zeros((n, hdim));
    let mut grad_v = Array2::<f64>::zeros((n, hdim));
    let mut grad_c = vec![0.0; hdim];
    let mut grad_c0 = 0.0;
    let mut grad_a_bias = vec![0.0; hdim];
    let mut grad_alpha = vec![0.0; graph.k()];
    for (i, row) in graph.rows().enumerate() {
        let gi = grad_agg.row(i);
        for (m, &j) in row.iter().enumerate() {
            let alpha = trace.attention[[i, m]];
            let mut dot = 0.0;
            for d in 0..f {
                dot += gi[d] * x[[j, d]];
                grad_x[[j, d]] += alpha * gi[d];
            }
            grad_alpha[m] = dot;
        }
        let mean: f64 = row
            .iter()
            .enumerate()
            .map(|(m, _)| trace.attention[[i, m]] * grad_alpha[m])
            .sum();
        for (m, &j) in row.iter().enumerate() {
            let dp = trace.attention[[i, m]] * (grad_alpha[m] - mean);
            grad_c0 += dp;
            for h in 0..hdim {
                let z = trace.hidden_pre[[i, m, h]];
                if z > 0.0 {
                    grad_c[h] += dp * z;
                    let dz = dp * c[h];
                    grad_a_bias[h] += dz;
                    grad_u[[i, h]] += dz;
                    grad_v[[j, h]] += dz;
                }
            }
        }
    }
    let a = &layer.f_hidden.weight;
    grads
        .f_hidden
        .weight
        .slice_mut(s![..f, ..])
        .scaled_add(1.0, &x.t().dot(&grad_u));
    grads
        .f_hidden
        .weight
        .slice_mut(s![f.., ..])
        .scaled_add(1.0, &x.t().dot(&grad_v));
    for h in 0..hdim {
        grads.f_hidden.bias[h] += grad_a_bias[h];
        grads.f_out.weight[[h, 0]] += grad_c[h];
    }
    grads.f_out.bias[0] += grad_c0;
    grad_x += &grad_u.dot(&a.slice(s![..f, ..]).t());
    grad_x += &grad_v.dot(&a.slice(s![f.., ..]).t());
    grad_x
}

/// Plain KNN mean of neighbor embeddings.
pub fn knn_mean(embeddings: &Array2<f64>, graph: &KnnGraph) -> Array2<f64> {
    let mut out = Array2::zeros(embeddings.dim());
    for (i, row) in graph.rows().enumerate() {
        for &j in row {
            out.row_mut(i).scaled_add(1.0, &embeddings.row(j));
        }
    }
    out /= graph.k() as f64;
    out
}
