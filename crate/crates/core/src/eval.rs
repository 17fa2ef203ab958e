//! Instance average precision and semantic IoU.

use crate::error::{Error, Result};
use crate::scene::{InstancePrediction, Scene};

/// `|a ∩ b| / |a ∪ b|` over point index sets. Duplicates are ignored.
pub fn point_iou(a: &[usize], b: &[usize]) -> Result<f64> {
    let sorted = |v: &[usize]| {
        let mut v = v.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    };
    let (a, b) = (sorted(a), sorted(b));
    if a.is_empty() && b.is_empty() {
        return Err(Error::Input("IoU of two empty sets is undefined".into()));
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    Ok(inter as f64 / (a.len() + b.len() - inter) as f64)
}

/// Outcome of greedy matching for one class at one threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMatches {
    /// True-positive flag per prediction, in ranked order.
    pub ranked_tp: Vec<bool>,
    pub num_gt: usize,
}

impl ClassMatches {
    pub fn true_positives(&self) -> usize {
        self.ranked_tp.iter().filter(|&&t| t).count()
    }

    pub fn false_positives(&self) -> usize {
        self.ranked_tp.len() - self.true_positives()
    }

    pub fn false_negatives(&self) -> usize {
        self.num_gt - self.true_positives()
    }

    /// Area under the precision envelope, `None` without ground truth.
    pub fn average_precision(&self) -> Option<f64> {
        if self.num_gt == 0 {
            return None;
        }
        let mut precision = Vec::with_capacity(self.ranked_tp.len());
        let mut tp = 0usize;
        for (rank, &hit) in self.ranked_tp.iter().enumerate() {
            tp += hit as usize;
            precision.push(tp as f64 / (rank + 1) as f64);
        }
        for r in (0..precision.len().saturating_sub(1)).rev() {
            precision[r] = precision[r].max(precision[r + 1]);
        }
        // Recall rises by 1/num_gt exactly at the true-positive ranks.
        let sum: f64 = self
            .ranked_tp
            .iter()
            .zip(&precision)
            .filter(|(hit, _)| **hit)
            .fold(0.0, |acc, (_, p)| acc + p);
        Some(sum / self.num_gt as f64)
    }
}

/// Pools class-`class` predictions over scenes, ranks them by descending
/// confidence (ties by scene, then list position) and greedily matches each
/// to the unmatched same-scene ground-truth instance of highest IoU, counting
/// a hit when that IoU reaches `threshold`.
pub fn match_class(
    predictions: &[Vec<InstancePrediction>],
    ground_truth: &[Scene],
    class: usize,
    threshold: f64,
) -> Result<ClassMatches> {
    if predictions.len() != ground_truth.len() {
        return Err(Error::Input(format!(
            "{} prediction lists for {} scenes",
            predictions.len(),
            ground_truth.len()
        )));
    }
    let gt: Vec<Vec<Vec<usize>>> = ground_truth
        .iter()
        .map(|s| {
            s.instance_members()
                .into_iter()
                .zip(s.instance_classes())
                .filter(|(m, c)| *c == class && !m.is_empty())
                .map(|(m, _)| m)
                .collect()
        })
        .collect();
    let num_gt = gt.iter().map(Vec::len).sum();

    let mut ranked: Vec<(usize, &InstancePrediction)> = predictions
        .iter()
        .enumerate()
        .flat_map(|(s, preds)| preds.iter().map(move |p| (s, p)))
        .filter(|(_, p)| p.class_label == class)
        .collect();
    // Stable sort keeps scene/list order among equal confidences.
    ranked.sort_by(|a, b| b.1.confidence.total_cmp(&a.1.confidence));

    let mut used: Vec<Vec<bool>> = gt.iter().map(|g| vec![false; g.len()]).collect();
    let mut ranked_tp = Vec::with_capacity(ranked.len());
    for (s, pred) in ranked {
        let mut best: Option<(f64, usize)> = None;
        for (g, members) in gt[s].iter().enumerate() {
            if used[s][g] {
                continue;
            }
            let iou = point_iou(&pred.point_indices, members)?;
            if best.is_none_or(|(b, _)| iou > b) {
                best = Some((iou, g));
            }
        }
        match best {
            Some((iou, g)) if iou >= threshold => {
                used[s][g] = true;
                ranked_tp.push(true);
            }
            _ => ranked_tp.push(false),
        }
    }
    Ok(ClassMatches { ranked_tp, num_gt })
}

/// AP of one class at one IoU threshold; `None` when the class has no
/// ground-truth instance.
pub fn average_precision(
    predictions: &[Vec<InstancePrediction>],
    ground_truth: &[Scene],
    class: usize,
    threshold: f64,
) -> Result<Option<f64>> {
    Ok(match_class(predictions, ground_truth, class, threshold)?.average_precision())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticIou {
    /// `None` for classes absent from the ground truth.
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
}

/// Pooled per-class IoU of point labels; points with a negative ground-truth
/// label are ignored.
pub fn semantic_miou(
    predicted: &[Vec<usize>],
    ground_truth: &[Vec<i32>],
    num_classes: usize,
) -> Result<SemanticIou> {
    if predicted.len() != ground_truth.len() {
        return Err(Error::Input("prediction and ground-truth scene counts differ".into()));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (pred, gt) in predicted.iter().zip(ground_truth) {
        if pred.len() != gt.len() {
            return Err(Error::Input("prediction and ground-truth point counts differ".into()));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if g < 0 {
                continue;
            }
            let g = g as usize;
            if p >= num_classes || g >= num_classes {
                return Err(Error::Input(format!("label outside [0, {num_classes})")));
            }
            if p == g {
                tp[g] += 1;
            } else {
                fp[p] += 1;
                fn_[g] += 1;
            }
        }
    }
    let per_class: Vec<Option<f64>> = (0..num_classes)
        .map(|c| {
            let present = tp[c] + fn_[c] > 0;
            present.then(|| tp[c] as f64 / (tp[c] + fp[c] + fn_[c]) as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let miou = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(SemanticIou { per_class, miou })
}

/// IoU thresholds `0.50, 0.55, ..., 0.95`.
pub fn iou_sweep() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub thresholds: Vec<f64>,
    /// `[threshold][class]`, `None` for classes without ground truth.
    pub per_class_ap: Vec<Vec<Option<f64>>>,
    /// Mean AP per threshold over classes with ground truth.
    pub map: Vec<f64>,
    pub counts: Vec<Vec<MatchCounts>>,
    pub semantic: SemanticIou,
}

impl EvalResult {
    /// mAP at `threshold`, if it was evaluated.
    pub fn map_at(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| (t - threshold).abs() < 1e-12)
            .map(|i| self.map[i])
    }

    /// Tab-separated table: one row per class and threshold, then summary rows.
    pub fn to_table(&self) -> String {
        let mut s = String::from("metric\tthreshold\tclass\tvalue\ttp\tfp\tfn\n");
        let fmt = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:.6}"));
        for (ti, t) in self.thresholds.iter().enumerate() {
            for (c, ap) in self.per_class_ap[ti].iter().enumerate() {
                let k = self.counts[ti][c];
                s.push_str(&format!("AP\t{t:.2}\t{c}\t{}\t{}\t{}\t{}\n", fmt(*ap), k.tp, k.fp, k.fn_));
            }
            s.push_str(&format!("mAP\t{t:.2}\tall\t{:.6}\t\t\t\n", self.map[ti]));
        }
        for (c, iou) in self.semantic.per_class.iter().enumerate() {
            s.push_str(&format!("IoU\t\t{c}\t{}\t\t\t\n", fmt(*iou)));
        }
        s.push_str(&format!("mIoU\t\tall\t{:.6}\t\t\t\n", self.semantic.miou));
        s
    }
}

/// Full evaluation of instance predictions and semantic labels.
pub fn evaluate(
    predictions: &[Vec<InstancePrediction>],
    semantic_predictions: &[Vec<usize>],
    ground_truth: &[Scene],
    num_classes: usize,
    thresholds: &[f64],
) -> Result<EvalResult> {
    let mut per_class_ap = Vec::new();
    let mut map = Vec::new();
    let mut counts = Vec::new();
    for &t in thresholds {
        let mut aps = Vec::with_capacity(num_classes);
        let mut cs = Vec::with_capacity(num_classes);
        for c in 0..num_classes {
            let m = match_class(predictions, ground_truth, c, t)?;
            cs.push(MatchCounts {
                tp: m.true_positives(),
                fp: m.false_positives(),
                fn_: m.false_negatives(),
            });
            aps.push(m.average_precision());
        }
        let present: Vec<f64> = aps.iter().flatten().copied().collect();
        map.push(if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        });
        per_class_ap.push(aps);
        counts.push(cs);
    }
    let gt_labels: Vec<Vec<i32>> = ground_truth.iter().map(|s| s.semantic_labels.clone()).collect();
    let semantic = semantic_miou(semantic_predictions, &gt_labels, num_classes)?;
    Ok(EvalResult {
        thresholds: thresholds.to_vec(),
        per_class_ap,
        map,
        counts,
        semantic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt_scene(instance_ids: Vec<i32>, labels: Vec<i32>) -> Scene {
        let n = instance_ids.len();
        Scene {
            id: "g".into(),
            coords: vec![[0.0; 3]; n],
            colors: vec![[0.0; 3]; n],
            semantic_labels: labels,
            instance_ids,
            num_classes: 3,
        }
    }

    fn pred(points: &[usize], class: usize, conf: f64) -> InstancePrediction {
        InstancePrediction {
            point_indices: points.to_vec(),
            class_label: class,
            confidence: conf,
        }
    }

    #[test]
    fn iou_examples() {
        assert_eq!(point_iou(&[1, 2, 3], &[2, 3, 4]).unwrap(), 0.5);
        assert_eq!(point_iou(&[3, 1, 2], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(point_iou(&[1], &[2]).unwrap(), 0.0);
        assert!(point_iou(&[], &[]).is_err());
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let s = gt_scene(vec![0, 0, 1, 1, -1], vec![1, 1, 2, 2, 0]);
        let perfect = vec![vec![pred(&[0, 1], 1, 0.9), pred(&[2, 3], 2, 0.8)]];
        assert_eq!(average_precision(&perfect, std::slice::from_ref(&s), 1, 0.5).unwrap(), Some(1.0));
        assert_eq!(average_precision(&perfect, std::slice::from_ref(&s), 2, 0.5).unwrap(), Some(1.0));
        assert_eq!(average_precision(&perfect, std::slice::from_ref(&s), 0, 0.5).unwrap(), None);
        let none = vec![vec![]];
        assert_eq!(average_precision(&none, std::slice::from_ref(&s), 1, 0.5).unwrap(), Some(0.0));
    }

    #[test]
    fn duplicate_low_confidence_false_positive_keeps_full_ap() {
        let s = gt_scene(vec![0, 0, 0, -1], vec![1, 1, 1, 0]);
        let preds = vec![vec![pred(&[0, 1, 2], 1, 0.9), pred(&[3], 1, 0.5)]];
        assert_eq!(average_precision(&preds, &[s], 1, 0.5).unwrap(), Some(1.0));
    }

    #[test]
    fn false_positive_first_halves_precision() {
        let s = gt_scene(vec![0, 0, 0, -1], vec![1, 1, 1, 0]);
        let preds = vec![vec![pred(&[3], 1, 0.9), pred(&[0, 1, 2], 1, 0.5)]];
        assert_eq!(average_precision(&preds, &[s], 1, 0.5).unwrap(), Some(0.5));
    }

    #[test]
    fn semantic_examples() {
        let perfect = semantic_miou(&[vec![0, 1, 2]], &[vec![0, 1, 2]], 3).unwrap();
        assert_eq!(perfect.per_class, vec![Some(1.0); 3]);
        let all_zero = semantic_miou(&[vec![0, 0, 0, 0]], &[vec![0, 0, 1, 1]], 3).unwrap();
        assert_eq!(all_zero.per_class, vec![Some(0.5), Some(0.0), None]);
        assert_eq!(all_zero.miou, 0.25);
    }

    #[test]
    fn evaluate_table_has_summary_rows() {
        let s = gt_scene(vec![0, 0, 1, 1], vec![1, 1, 2, 2]);
        let preds = vec![vec![pred(&[0, 1], 1, 0.9), pred(&[2, 3], 2, 0.8)]];
        let r = evaluate(&preds, &[vec![1, 1, 2, 2]], &[s], 3, &[0.25, 0.5]).unwrap();
        assert_eq!(r.map_at(0.5), Some(1.0));
        assert_eq!(r.semantic.miou, 1.0);
        let table = r.to_table();
        assert!(table.starts_with("metric\tthreshold\tclass\tvalue"));
        assert!(table.contains("mAP\t0.50\tall\t1.000000"));
        assert!(table.contains("mIoU\t\tall\t1.000000"));
        assert_eq!(iou_sweep().len(), 10);
    }
}
