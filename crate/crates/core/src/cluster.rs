//! Flat-kernel mean-shift over instance embeddings.

use ndarray::{Array2, ArrayView1};

use crate::config::ClusterConfig;
use crate::model::softmax;
use crate::scene::{majority, InstancePrediction};

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Cluster id per point, `-1` for points in discarded clusters.
    pub assignments: Vec<i32>,
    /// `K × F` surviving modes, row `c` for cluster `c`.
    pub modes: Array2<f64>,
    /// Iterations each seed ran before converging or hitting the cap.
    pub iterations_used: Vec<usize>,
}

impl ClusterResult {
    pub fn num_clusters(&self) -> usize {
        self.modes.nrows()
    }

    /// Member point indices per cluster.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters()];
        for (i, &a) in self.assignments.iter().enumerate() {
            if a >= 0 {
                out[a as usize].push(i);
            }
        }
        out
    }
}

fn dist2(a: ArrayView1<f64>, b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Moves one seed to the mean of all points within `bandwidth` until the
/// shift drops below the tolerance.
fn climb(points: &Array2<f64>, seed: &[f64], cfg: &ClusterConfig) -> (Vec<f64>, usize) {
    let f = points.ncols();
    let bw2 = cfg.bandwidth * cfg.bandwidth;
    let tol2 = cfg.shift_tolerance * cfg.shift_tolerance;
    let mut x = seed.to_vec();
    let mut mean = vec![0.0; f];
    for it in 1..=cfg.max_iterations {
        mean.fill(0.0);
        let mut count = 0usize;
        for p in points.rows() {
            if dist2(p, &x) <= bw2 {
                count += 1;
                for ((m, v), c) in mean.iter_mut().zip(p).zip(&x) {
                    *m += v - c;
                }
            }
        }
        // The window always holds at least one point: a window mean is no
        // farther from some member than the window radius.
        if count == 0 {
            return (x, it);
        }
        // Offsets from the current position keep a fixed point exactly fixed.
        let shift: f64 = mean.iter().map(|m| (m / count as f64).powi(2)).sum();
        for (m, c) in mean.iter_mut().zip(&x) {
            *m = c + *m / count as f64;
        }
        std::mem::swap(&mut x, &mut mean);
        if shift < tol2 {
            return (x, it);
        }
    }
    (x, cfg.max_iterations)
}

/// Every point seeds a trajectory; converged modes closer than the merge
/// radius are merged greedily in ascending seed order, points go to their
/// nearest surviving mode (ties to the lower cluster id), and clusters below
/// `min_cluster_points` are discarded.
pub fn mean_shift(embeddings: &Array2<f64>, cfg: &ClusterConfig) -> ClusterResult {
    let (n, f) = embeddings.dim();
    let mut iterations_used = Vec::with_capacity(n);
    let mut reps: Vec<Vec<f64>> = Vec::new();
    let merge2 = cfg.merge_radius * cfg.merge_radius;
    for i in 0..n {
        let seed: Vec<f64> = embeddings.row(i).to_vec();
        let (mode, iters) = climb(embeddings, &seed, cfg);
        iterations_used.push(iters);
        let close = reps.iter().any(|r| {
            r.iter().zip(&mode).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= merge2
        });
        if !close {
            reps.push(mode);
        }
    }

    let mut raw = vec![0usize; n];
    let mut counts = vec![0usize; reps.len()];
    for (i, p) in embeddings.rows().into_iter().enumerate() {
        let mut best = (f64::INFINITY, 0);
        for (c, r) in reps.iter().enumerate() {
            let d = dist2(p, r);
            if d < best.0 {
                best = (d, c);
            }
        }
        raw[i] = best.1;
        counts[best.1] += 1;
    }

    let mut relabel = vec![-1i32; reps.len()];
    let mut kept = Vec::new();
    for (c, &count) in counts.iter().enumerate() {
        if count >= cfg.min_cluster_points {
            relabel[c] = kept.len() as i32;
            kept.push(c);
        }
    }
    let mut modes = Array2::zeros((kept.len(), f));
    for (k, &c) in kept.iter().enumerate() {
        for d in 0..f {
            modes[[k, d]] = reps[c][d];
        }
    }
    ClusterResult {
        assignments: raw.iter().map(|&c| relabel[c]).collect(),
        modes,
        iterations_used,
    }
}

/// One prediction per cluster: majority vote of per-point argmax classes
/// (ties to the lower class) and mean top softmax probability.
pub fn clusters_to_predictions(result: &ClusterResult, logits: &Array2<f64>) -> Vec<InstancePrediction> {
    let per_point: Vec<(usize, f64)> = logits
        .rows()
        .into_iter()
        .map(|row| {
            let probs = softmax(row.as_slice().unwrap_or(&row.to_vec()));
            let mut best = (0, f64::NEG_INFINITY);
            for (c, &v) in row.iter().enumerate() {
                if v > best.1 {
                    best = (c, v);
                }
            }
            (best.0, probs[best.0])
        })
        .collect();
    result
        .members()
        .into_iter()
        .filter(|m| !m.is_empty())
        .map(|members| {
            let class_label = majority(members.iter().map(|&i| per_point[i].0));
            let confidence =
                members.iter().map(|&i| per_point[i].1).sum::<f64>() / members.len() as f64;
            InstancePrediction {
                point_indices: members,
                class_label,
                confidence,
            }
        })
        .collect()
}
