//! The point cloud scene model and instance predictions.

use std::collections::BTreeMap;
use std::fmt;

/// Instance id of points that belong to no instance.
pub const NO_INSTANCE: i32 = -1;

/// A labeled point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    /// Coordinates in meters.
    pub coords: Vec<[f64; 3]>,
    /// RGB, each channel in `[0, 1]`.
    pub colors: Vec<[f64; 3]>,
    pub semantic_labels: Vec<i32>,
    /// `-1` for unlabeled points, otherwise consecutive ids `0..M`.
    pub instance_ids: Vec<i32>,
    pub num_classes: usize,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Number of instances `M`, i.e. one past the largest instance id.
    pub fn num_instances(&self) -> usize {
        self.instance_ids
            .iter()
            .copied()
            .filter(|&id| id >= 0)
            .max()
            .map_or(0, |m| m as usize + 1)
    }

    /// Member point indices of every instance, indexed by instance id.
    pub fn instance_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.num_instances()];
        for (i, &id) in self.instance_ids.iter().enumerate() {
            if id >= 0 {
                members[id as usize].push(i);
            }
        }
        members
    }

    /// Class of each ground-truth instance by majority vote of its points, ties
    /// to the lower class id.
    pub fn instance_classes(&self) -> Vec<usize> {
        self.instance_members()
            .iter()
            .map(|pts| majority(pts.iter().map(|&p| self.semantic_labels[p].max(0) as usize)))
            .collect()
    }
}

pub(crate) fn majority(labels: impl Iterator<Item = usize>) -> usize {
    let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
    for l in labels {
        *votes.entry(l).or_default() += 1;
    }
    // BTreeMap iterates in ascending label order, so `>` keeps the lowest tie.
    let mut best = (0, 0);
    for (label, count) in votes {
        if count > best.1 {
            best = (label, count);
        }
    }
    best.0
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    /// Offending point index, when the violation is point-local.
    pub index: Option<usize>,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "{}[{}]: {}", self.field, i, self.reason),
            None => write!(f, "{}: {}", self.field, self.reason),
        }
    }
}

/// Checks every scene invariant and reports all violations found.
pub fn validate_scene(scene: &Scene) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = scene.coords.len();
    for (field, len) in [
        ("colors", scene.colors.len()),
        ("semantic_labels", scene.semantic_labels.len()),
        ("instance_ids", scene.instance_ids.len()),
    ] {
        if len != n {
            out.push(Violation {
                field,
                index: None,
                reason: format!("length {len} does not match {n} coordinates"),
            });
        }
    }
    if !out.is_empty() {
        return out;
    }

    for (i, c) in scene.coords.iter().enumerate() {
        if c.iter().any(|v| !v.is_finite()) {
            out.push(Violation {
                field: "coords",
                index: Some(i),
                reason: "non-finite coordinate".into(),
            });
        }
    }
    for (i, c) in scene.colors.iter().enumerate() {
        for (ch, name) in c.iter().zip(["r", "g", "b"]) {
            if !(0.0..=1.0).contains(ch) {
                out.push(Violation {
                    field: "colors",
                    index: Some(i),
                    reason: format!("channel {name} = {ch} outside [0, 1]"),
                });
            }
        }
    }
    let c = scene.num_classes as i32;
    for (i, (&label, &inst)) in scene
        .semantic_labels
        .iter()
        .zip(&scene.instance_ids)
        .enumerate()
    {
        if inst < NO_INSTANCE {
            out.push(Violation {
                field: "instance_ids",
                index: Some(i),
                reason: format!("instance id {inst} below the -1 sentinel"),
            });
        }
        if inst >= 0 && !(0..c).contains(&label) {
            out.push(Violation {
                field: "semantic_labels",
                index: Some(i),
                reason: format!("label {label} outside [0, {c}) on an instance point"),
            });
        } else if inst < 0 && label >= c {
            out.push(Violation {
                field: "semantic_labels",
                index: Some(i),
                reason: format!("label {label} outside [0, {c})"),
            });
        }
    }

    let m = scene.num_instances();
    let mut seen = vec![false; m];
    for &id in &scene.instance_ids {
        if id >= 0 {
            seen[id as usize] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        out.push(Violation {
            field: "instance_ids",
            index: None,
            reason: "non-consecutive instance ids".into(),
        });
    }
    out
}

/// Relabels instance ids to `0..M` in order of first appearance; `-1` stays.
pub fn remap_instances(scene: &Scene) -> Scene {
    let mut map: BTreeMap<i32, i32> = BTreeMap::new();
    let mut next = 0;
    let instance_ids = scene
        .instance_ids
        .iter()
        .map(|&id| {
            if id < 0 {
                return NO_INSTANCE;
            }
            *map.entry(id).or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect();
    Scene {
        instance_ids,
        ..scene.clone()
    }
}

/// One predicted instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstancePrediction {
    /// Sorted, non-empty point indices.
    pub point_indices: Vec<usize>,
    pub class_label: usize,
    pub confidence: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scene_with(instance_ids: Vec<i32>) -> Scene {
        let n = instance_ids.len();
        Scene {
            id: "t".into(),
            coords: (0..n).map(|i| [i as f64, 0.0, 0.0]).collect(),
            colors: vec![[0.5; 3]; n],
            semantic_labels: vec![1; n],
            instance_ids,
            num_classes: 3,
        }
    }

    #[test]
    fn well_formed_scene_has_no_violations() {
        assert!(validate_scene(&scene_with(vec![0, 1])).is_empty());
    }

    #[test]
    fn gap_in_instance_ids_is_reported() {
        let v = validate_scene(&scene_with(vec![0, 2]));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].reason, "non-consecutive instance ids");
    }

    #[test]
    fn out_of_range_color_names_channel() {
        let mut s = scene_with(vec![0, 1]);
        s.colors[1][2] = 1.5;
        let v = validate_scene(&s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "colors");
        assert_eq!(v[0].index, Some(1));
        assert!(v[0].reason.contains("channel b"));
    }

    #[test]
    fn non_finite_coordinate_and_bad_label() {
        let mut s = scene_with(vec![0, 0, -1]);
        s.coords[0][1] = f64::NAN;
        s.semantic_labels[1] = 7;
        let v = validate_scene(&s);
        assert_eq!(v.len(), 2);
        assert!(v.iter().any(|x| x.field == "coords" && x.index == Some(0)));
        assert!(v.iter().any(|x| x.field == "semantic_labels" && x.index == Some(1)));
    }

    #[test]
    fn remap_examples() {
        assert_eq!(
            remap_instances(&scene_with(vec![5, 5, 9, -1])).instance_ids,
            vec![0, 0, 1, -1]
        );
        assert_eq!(remap_instances(&scene_with(vec![0, 1])).instance_ids, vec![0, 1]);
        let s = remap_instances(&scene_with(vec![-1, -1]));
        assert_eq!(s.instance_ids, vec![-1, -1]);
        assert_eq!(s.num_instances(), 0);
    }

    #[test]
    fn majority_ties_go_low() {
        assert_eq!(majority([7, 2, 7, 2].into_iter()), 2);
        assert_eq!(majority([3, 3, 1].into_iter()), 3);
    }

    proptest! {
        #[test]
        fn remap_is_idempotent_and_preserves_partition(ids in prop::collection::vec(-1i32..6, 1..40)) {
            let s = scene_with(ids.clone());
            let once = remap_instances(&s);
            let twice = remap_instances(&once);
            prop_assert_eq!(&once.instance_ids, &twice.instance_ids);
            prop_assert!(validate_scene(&once).is_empty());
            for i in 0..ids.len() {
                for j in 0..ids.len() {
                    let same_before = ids[i] >= 0 && ids[i] == ids[j];
                    let same_after = once.instance_ids[i] >= 0
                        && once.instance_ids[i] == once.instance_ids[j];
                    prop_assert_eq!(same_before, same_after);
                    prop_assert_eq!(ids[i] < 0, once.instance_ids[i] < 0);
                }
            }
        }
    }
}
