//! Training losses: semantic cross-entropy and the structure-aware
//! discriminative embedding loss, each with its exact gradient.
//!
//! For instance `i` with members `j`, spatial center `mu_p`, mean embedding
//! `mu_s`, spatial distance `d_j = |p_j - mu_p|` and embedding distance
//! `s_j = |e_j - mu_s|`:
//!
//! ```text
//! intra_i = sum_j w_j * max(s_j - alpha, 0)^2      (divided by N_i in mean mode)
//! inter_ab = max(beta - |mu_s_a - mu_s_b|, 0)^2
//! loss = (1/M) sum_i intra_i + 1/(M(M-1)) sum_{a != b} inter_ab
//! ```
//!
//! with `w_j = sigmoid(d_j)` under structure weighting and `w_j = 1` otherwise.
//! Subgradients at hinge kinks and at zero distances are taken as zero.

use ndarray::{Array2, ArrayView1};

use crate::config::{IntraNormalization, LossConfig, StructureWeighting};
use crate::error::{Error, Result};
use crate::scene::Scene;

/// Per-instance geometry and embedding statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceStat {
    pub members: Vec<usize>,
    pub spatial_center: [f64; 3],
    pub spatial_distances: Vec<f64>,
    pub structure_weights: Vec<f64>,
    pub embedding_mean: Vec<f64>,
    pub embedding_distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceStats {
    pub instances: Vec<InstanceStat>,
    pub num_points: usize,
    pub embed_dim: usize,
}

impl InstanceStats {
    pub fn num_instances(&self) -> usize {
        self.instances.len()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn norm(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Statistics of every labeled instance; points with instance id `-1` are
/// ignored.
pub fn compute_instance_stats(
    scene: &Scene,
    embeddings: &Array2<f64>,
    weighting: StructureWeighting,
) -> InstanceStats {
    let (n, f) = embeddings.dim();
    let instances = scene
        .instance_members()
        .into_iter()
        .filter(|m| !m.is_empty())
        .map(|members| {
            let count = members.len() as f64;
            let mut center = [0.0; 3];
            let mut mean = vec![0.0; f];
            for &j in &members {
                for a in 0..3 {
                    center[a] += scene.coords[j][a];
                }
                for (d, m) in mean.iter_mut().enumerate() {
                    *m += embeddings[[j, d]];
                }
            }
            center.iter_mut().for_each(|c| *c /= count);
            mean.iter_mut().for_each(|m| *m /= count);
            let spatial_distances: Vec<f64> = members
                .iter()
                .map(|&j| norm((0..3).map(|a| scene.coords[j][a] - center[a])))
                .collect();
            let structure_weights = spatial_distances
                .iter()
                .map(|&d| match weighting {
                    StructureWeighting::SigmoidDistance => sigmoid(d),
                    StructureWeighting::Uniform => 1.0,
                })
                .collect();
            let embedding_distances = members
                .iter()
                .map(|&j| norm((0..f).map(|d| embeddings[[j, d]] - mean[d])))
                .collect();
            InstanceStat {
                members,
                spatial_center: center,
                spatial_distances,
                structure_weights,
                embedding_mean: mean,
                embedding_distances,
            }
        })
        .collect();
    InstanceStats {
        instances,
        num_points: n,
        embed_dim: f,
    }
}

/// Pull term: `(1/M) sum_i intra_i` and its gradient with respect to the
/// embeddings the stats were computed from.
pub fn intra_loss(
    stats: &InstanceStats,
    embeddings: &Array2<f64>,
    cfg: &LossConfig,
) -> (f64, Array2<f64>) {
    let f = stats.embed_dim;
    let mut grad = Array2::zeros((stats.num_points, f));
    let m = stats.num_instances();
    if m == 0 {
        return (0.0, grad);
    }
    let mut value = 0.0;
    for inst in &stats.instances {
        let scale = match cfg.intra_normalization {
            IntraNormalization::Sum => 1.0,
            IntraNormalization::Mean => 1.0 / inst.members.len() as f64,
        } / m as f64;
        let mut term = 0.0;
        let mut pull_sum = vec![0.0; f];
        let mut pulls: Vec<(usize, Vec<f64>)> = Vec::new();
        for ((&j, &w), &s) in inst
            .members
            .iter()
            .zip(&inst.structure_weights)
            .zip(&inst.embedding_distances)
        {
            let h = s - cfg.alpha;
            if h <= 0.0 {
                continue;
            }
            term += w * h * h;
            if s > 0.0 {
                let coef = scale * w * 2.0 * h / s;
                let g: Vec<f64> = (0..f)
                    .map(|d| coef * (embeddings[[j, d]] - inst.embedding_mean[d]))
                    .collect();
                for d in 0..f {
                    pull_sum[d] += g[d];
                }
                pulls.push((j, g));
            }
        }
        value += scale * term;
        // The mean depends on every member: subtract the averaged pull from all.
        let nm = inst.members.len() as f64;
        for &j in &inst.members {
            for d in 0..f {
                grad[[j, d]] -= pull_sum[d] / nm;
            }
        }
        for (j, g) in pulls {
            for d in 0..f {
                grad[[j, d]] += g[d];
            }
        }
    }
    (value, grad)
}

/// Push term over ordered instance pairs, `0` when fewer than two instances.
pub fn inter_loss(stats: &InstanceStats, cfg: &LossConfig) -> (f64, Array2<f64>) {
    let f = stats.embed_dim;
    let mut grad = Array2::zeros((stats.num_points, f));
    let m = stats.num_instances();
    if m < 2 {
        return (0.0, grad);
    }
    let norm_pairs = 1.0 / (m * (m - 1)) as f64;
    let mut value = 0.0;
    let mut grad_means = vec![vec![0.0; f]; m];
    for a in 0..m {
        for b in 0..m {
            if a == b {
                continue;
            }
            let (ma, mb) = (
                &stats.instances[a].embedding_mean,
                &stats.instances[b].embedding_mean,
            );
            let dist = norm((0..f).map(|d| ma[d] - mb[d]));
            let h = cfg.beta - dist;
            if h <= 0.0 {
                continue;
            }
            value += norm_pairs * h * h;
            if dist > 0.0 {
                let coef = -2.0 * norm_pairs * h / dist;
                for d in 0..f {
                    let g = coef * (ma[d] - mb[d]);
                    grad_means[a][d] += g;
                    grad_means[b][d] -= g;
                }
            }
        }
    }
    for (inst, gm) in stats.instances.iter().zip(&grad_means) {
        let nm = inst.members.len() as f64;
        for &j in &inst.members {
            for d in 0..f {
                grad[[j, d]] += gm[d] / nm;
            }
        }
    }
    (value, grad)
}

/// Intra plus inter terms on one embedding matrix.
pub fn structure_aware_loss(
    scene: &Scene,
    embeddings: &Array2<f64>,
    cfg: &LossConfig,
) -> (f64, Array2<f64>) {
    let stats = compute_instance_stats(scene, embeddings, cfg.structure_weighting);
    let (intra, mut grad) = intra_loss(&stats, embeddings, cfg);
    let (inter, g2) = inter_loss(&stats, cfg);
    grad += &g2;
    (intra + inter, grad)
}

fn log_softmax_at(row: ArrayView1<f64>, label: usize) -> (f64, f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
    (row[label] - max - sum.ln(), sum)
}

/// Mean negative log-likelihood over the masked points (`None` = all).
pub fn cross_entropy(
    logits: &Array2<f64>,
    labels: &[i32],
    mask: Option<&[bool]>,
) -> Result<(f64, Array2<f64>)> {
    let (n, c) = logits.dim();
    if labels.len() != n || mask.is_some_and(|m| m.len() != n) {
        return Err(Error::Input("labels and mask must have one entry per point".into()));
    }
    let active = |i: usize| mask.is_none_or(|m| m[i]);
    let count = (0..n).filter(|&i| active(i)).count();
    let mut grad = Array2::zeros((n, c));
    if count == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / count as f64;
    let mut value = 0.0;
    for i in 0..n {
        if !active(i) {
            continue;
        }
        let label = labels[i];
        if label < 0 || label as usize >= c {
            return Err(Error::Input(format!(
                "label {label} at point {i} outside [0, {c})"
            )));
        }
        let row = logits.row(i);
        let (logp, sum) = log_softmax_at(row, label as usize);
        value -= logp * inv;
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for k in 0..c {
            let p = (row[k] - max).exp() / sum;
            grad[[i, k]] = inv * (p - if k == label as usize { 1.0 } else { 0.0 });
        }
    }
    Ok((value, grad))
}

/// The three training loss items and their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub value: f64,
    pub cross_entropy: f64,
    pub sal_initial: f64,
    pub sal_refined: f64,
    pub grad_logits: Array2<f64>,
    pub grad_initial: Array2<f64>,
    pub grad_refined: Array2<f64>,
}

/// `CE(logits) + SAL(initial) + SAL(refined)` with unit weights. Points with
/// a negative semantic label are left out of the cross-entropy.
pub fn total_training_loss(
    scene: &Scene,
    logits: &Array2<f64>,
    initial: &Array2<f64>,
    refined: &Array2<f64>,
    cfg: &LossConfig,
) -> Result<TotalLoss> {
    let mask: Vec<bool> = scene.semantic_labels.iter().map(|&l| l >= 0).collect();
    let (ce, grad_logits) = cross_entropy(logits, &scene.semantic_labels, Some(&mask))?;
    let (sal_initial, grad_initial) = structure_aware_loss(scene, initial, cfg);
    let (sal_refined, grad_refined) = structure_aware_loss(scene, refined, cfg);
    Ok(TotalLoss {
        value: ce + sal_initial + sal_refined,
        cross_entropy: ce,
        sal_initial,
        sal_refined,
        grad_logits,
        grad_initial,
        grad_refined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn scene(coords: Vec<[f64; 3]>, instance_ids: Vec<i32>) -> Scene {
        let n = coords.len();
        Scene {
            id: "l".into(),
            coords,
            colors: vec![[0.0; 3]; n],
            semantic_labels: vec![0; n],
            instance_ids,
            num_classes: 2,
        }
    }

    fn cfg(norm: IntraNormalization, w: StructureWeighting) -> LossConfig {
        LossConfig {
            intra_normalization: norm,
            structure_weighting: w,
            ..LossConfig::default()
        }
    }

    #[test]
    fn midpoint_stats() {
        let s = scene(vec![[0.0; 3], [2.0, 0.0, 0.0]], vec![0, 0]);
        let e = array![[1.0, 1.0], [1.0, 1.0]];
        let st = compute_instance_stats(&s, &e, StructureWeighting::SigmoidDistance);
        assert_eq!(st.instances[0].spatial_center, [1.0, 0.0, 0.0]);
        assert_eq!(st.instances[0].spatial_distances, vec![1.0, 1.0]);
        assert_eq!(st.instances[0].embedding_distances, vec![0.0, 0.0]);
    }

    #[test]
    fn intra_hand_values() {
        let s = scene(vec![[0.0; 3], [2.0, 0.0, 0.0]], vec![0, 0]);
        let e = array![[0.0, 0.0], [2.0, 0.0]];
        let c = cfg(IntraNormalization::Sum, StructureWeighting::SigmoidDistance);
        let st = compute_instance_stats(&s, &e, c.structure_weighting);
        let (v, _) = intra_loss(&st, &e, &c);
        assert!((v - 2.0 * 0.731_058_578_630_074 * 0.09).abs() < 1e-12);
        assert!((v - 0.131591).abs() < 1e-6);

        let c = cfg(IntraNormalization::Sum, StructureWeighting::Uniform);
        let st = compute_instance_stats(&s, &e, c.structure_weighting);
        assert!((intra_loss(&st, &e, &c).0 - 0.18).abs() < 1e-9);

        let c = cfg(IntraNormalization::Mean, StructureWeighting::Uniform);
        let st = compute_instance_stats(&s, &e, c.structure_weighting);
        assert!((intra_loss(&st, &e, &c).0 - 0.09).abs() < 1e-12);
    }

    #[test]
    fn intra_inactive_inside_alpha() {
        let s = scene(vec![[0.0; 3], [2.0, 0.0, 0.0], [1.0, 1.0, 0.0]], vec![0, 0, 0]);
        let e = array![[0.1, 0.0], [-0.1, 0.2], [0.0, -0.2]];
        let c = LossConfig::default();
        let st = compute_instance_stats(&s, &e, c.structure_weighting);
        let (v, g) = intra_loss(&st, &e, &c);
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn inter_hand_value_and_degenerate_cases() {
        let s = scene(vec![[0.0; 3], [5.0, 0.0, 0.0]], vec![0, 1]);
        let c = LossConfig::default();
        let e = array![[0.0, 0.0], [1.0, 0.0]];
        let st = compute_instance_stats(&s, &e, c.structure_weighting);
        assert!((inter_loss(&st, &c).0 - 0.25).abs() < 1e-12);
        let far = array![[0.0, 0.0], [1.5, 0.0]];
        let st = compute_instance_stats(&s, &far, c.structure_weighting);
        assert_eq!(inter_loss(&st, &c).0, 0.0);

        let one = scene(vec![[0.0; 3], [5.0, 0.0, 0.0]], vec![0, 0]);
        let st = compute_instance_stats(&one, &e, c.structure_weighting);
        let (v, g) = inter_loss(&st, &c);
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn composed_single_instance_value() {
        let s = scene(vec![[0.0; 3], [2.0, 0.0, 0.0]], vec![0, 0]);
        let e = array![[0.0, 0.0], [2.0, 0.0]];
        let c = cfg(IntraNormalization::Sum, StructureWeighting::SigmoidDistance);
        assert!((structure_aware_loss(&s, &e, &c).0 - 0.131591).abs() < 1e-6);
        let unlabeled = scene(vec![[0.0; 3], [2.0, 0.0, 0.0]], vec![-1, -1]);
        let (v, g) = structure_aware_loss(&unlabeled, &e, &c);
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn cross_entropy_uniform_and_confident() {
        let logits = Array2::zeros((5, 20));
        let (v, _) = cross_entropy(&logits, &[0, 3, 19, 7, 7], None).unwrap();
        assert!((v - 20f64.ln()).abs() < 1e-12);
        let confident = array![[500.0, 0.0], [0.0, 500.0]];
        let (v, g) = cross_entropy(&confident, &[0, 1], None).unwrap();
        assert!(v < 1e-100);
        assert!(g.iter().all(|x| x.abs() < 1e-100));
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_label() {
        let logits = Array2::zeros((2, 3));
        assert!(cross_entropy(&logits, &[0, 3], None).is_err());
        // Masked-out labels are never inspected.
        assert!(cross_entropy(&logits, &[0, 3], Some(&[true, false])).is_ok());
    }

    #[test]
    fn cross_entropy_matches_naive_loop() {
        let logits = array![[0.2, -1.0, 3.0], [1.5, 1.4, -0.3], [-2.0, 0.0, 0.1]];
        let labels = [2, 0, 1];
        let (v, _) = cross_entropy(&logits, &labels, None).unwrap();
        let mut want = 0.0;
        for i in 0..3 {
            let z: f64 = logits.row(i).iter().map(|v| v.exp()).sum();
            want -= (logits[[i, labels[i] as usize]].exp() / z).ln();
        }
        assert!((v - want / 3.0).abs() < 1e-14);
    }

    #[test]
    fn total_loss_without_instances_is_cross_entropy() {
        let s = scene(vec![[0.0; 3], [2.0, 0.0, 0.0]], vec![-1, -1]);
        let logits = array![[0.3, 0.1], [0.0, 1.0]];
        let e = array![[0.0, 0.0], [9.0, 0.0]];
        let t = total_training_loss(&s, &logits, &e, &e, &LossConfig::default()).unwrap();
        let (ce, _) = cross_entropy(&logits, &s.semantic_labels, None).unwrap();
        assert_eq!(t.value, ce);
    }

    #[test]
    fn total_loss_identical_embeddings_give_equal_terms() {
        let s = scene(vec![[0.0; 3], [2.0, 0.0, 0.0], [4.0, 0.0, 0.0]], vec![0, 0, 1]);
        let logits = Array2::zeros((3, 2));
        let e = array![[0.0, 0.0], [2.0, 0.0], [0.5, 0.5]];
        let t = total_training_loss(&s, &logits, &e, &e, &LossConfig::default()).unwrap();
        assert_eq!(t.sal_initial, t.sal_refined);
        assert_eq!(t.grad_initial, t.grad_refined);
    }
}
