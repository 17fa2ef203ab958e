//! Model, loss and clustering configuration.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Instance embedding dimension.
    pub embed_dim: usize,
    pub num_classes: usize,
    /// Hidden widths of the per-point backbone MLP.
    pub backbone_hidden: Vec<usize>,
    /// Hidden width of the attention scorer.
    pub attention_hidden: usize,
    pub gcn_layers: usize,
    pub knn_k: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 4,
            num_classes: 4,
            backbone_hidden: vec![64, 64],
            attention_hidden: 16,
            gcn_layers: 2,
            knn_k: 8,
        }
    }
}

impl ModelConfig {
    /// Number of per-point input features: centered xyz followed by rgb.
    pub const INPUT_DIM: usize = 6;

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 2 {
            return Err(Error::Config(format!(
                "embed_dim must be >= 2, got {}",
                self.embed_dim
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        if self.backbone_hidden.iter().any(|&w| w == 0) {
            return Err(Error::Config("backbone widths must be positive".into()));
        }
        if self.attention_hidden == 0 {
            return Err(Error::Config("attention_hidden must be positive".into()));
        }
        if self.gcn_layers > 3 {
            return Err(Error::Config(format!(
                "gcn_layers must be in 0..=3, got {}",
                self.gcn_layers
            )));
        }
        if self.knn_k == 0 {
            return Err(Error::Config("knn_k must be >= 1".into()));
        }
        Ok(())
    }

    /// Width of the backbone output feature.
    pub fn feature_dim(&self) -> usize {
        self.backbone_hidden
            .last()
            .copied()
            .unwrap_or(Self::INPUT_DIM)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntraNormalization {
    /// Bare per-instance sum over member points.
    Sum,
    /// Per-instance sum divided by the instance size.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructureWeighting {
    /// Weight each point by the sigmoid of its distance to the instance's spatial center.
    SigmoidDistance,
    /// Every point weighs 1 (the vanilla discriminative loss).
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Intra-instance hinge: tolerated distance to the mean embedding.
    pub alpha: f64,
    /// Inter-instance hinge: required distance between mean embeddings.
    pub beta: f64,
    pub intra_normalization: IntraNormalization,
    pub structure_weighting: StructureWeighting,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            beta: 1.5,
            intra_normalization: IntraNormalization::Mean,
            structure_weighting: StructureWeighting::SigmoidDistance,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta > self.alpha && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "loss thresholds need beta > alpha >= 0, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterConfig {
    /// Flat-kernel radius.
    pub bandwidth: f64,
    /// Converged modes closer than this are merged.
    pub merge_radius: f64,
    pub shift_tolerance: f64,
    pub max_iterations: usize,
    /// Clusters smaller than this are discarded as noise.
    pub min_cluster_points: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self::with_bandwidth(1.0)
    }
}

impl ClusterConfig {
    /// Defaults derived from a bandwidth: merge radius `bandwidth / 2` and
    /// shift tolerance `1e-3 * bandwidth`.
    pub fn with_bandwidth(bandwidth: f64) -> Self {
        Self {
            bandwidth,
            merge_radius: bandwidth / 2.0,
            shift_tolerance: 1e-3 * bandwidth,
            max_iterations: 300,
            min_cluster_points: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::Config(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth
            )));
        }
        if !(self.merge_radius > 0.0 && self.merge_radius <= self.bandwidth) {
            return Err(Error::Config(format!(
                "merge_radius must be in (0, bandwidth], got {}",
                self.merge_radius
            )));
        }
        if !(self.shift_tolerance > 0.0 && self.shift_tolerance < self.bandwidth) {
            return Err(Error::Config(format!(
                "shift_tolerance must be in (0, bandwidth), got {}",
                self.shift_tolerance
            )));
        }
        if self.max_iterations == 0 || self.min_cluster_points == 0 {
            return Err(Error::Config(
                "max_iterations and min_cluster_points must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ModelConfig::default().validate().unwrap();
        LossConfig::default().validate().unwrap();
        ClusterConfig::default().validate().unwrap();
        let c = ClusterConfig::default();
        assert_eq!(c.merge_radius, 0.5);
        assert_eq!(c.shift_tolerance, 1e-3);
    }

    #[test]
    fn rejects_bad_model_config() {
        let mut c = ModelConfig::default();
        c.embed_dim = 1;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.gcn_layers = 4;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.knn_k = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_inverted_thresholds() {
        let c = LossConfig {
            alpha: 1.5,
            beta: 0.7,
            ..LossConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
