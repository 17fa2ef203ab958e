use ndarray::{Array1, Array2};
use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

/// An affine map `x W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Uniform in `±sqrt(1 / fan_in)` for weights and bias alike.
    fn uniform(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = (1.0 / inputs as f64).sqrt();
        let mut d = Self::zeros(inputs, outputs);
        d.weight.mapv_inplace(|_| rng.random_range(-bound..=bound));
        d.bias.mapv_inplace(|_| rng.random_range(-bound..=bound));
        d
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }
}

/// One attention-KNN graph convolution: scorer `f` and bias-free updator `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayerParams {
    /// `2F × H` hidden layer of the scorer; rows `0..F` act on the center point.
    pub f_hidden: Dense,
    /// `H × 1` output of the scorer.
    pub f_out: Dense,
    /// `2F × F`; rows `0..F` act on the point itself, rows `F..2F` on its aggregate.
    pub updator: Array2<f64>,
}

impl GcnLayerParams {
    pub fn zeros(embed_dim: usize, hidden: usize) -> Self {
        Self {
            f_hidden: Dense::zeros(2 * embed_dim, hidden),
            f_out: Dense::zeros(hidden, 1),
            updator: Array2::zeros((2 * embed_dim, embed_dim)),
        }
    }

    /// Zero scorer and `W = [I; 0]`: the layer returns its input.
    pub fn identity(embed_dim: usize, hidden: usize) -> Self {
        let mut layer = Self::zeros(embed_dim, hidden);
        for i in 0..embed_dim {
            layer.updator[[i, i]] = 1.0;
        }
        layer
    }

    pub fn embed_dim(&self) -> usize {
        self.updator.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.f_hidden.outputs()
    }
}

/// All trainable tensors. Also used, shape for shape, for gradients and
/// optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub backbone: Vec<Dense>,
    pub semantic_head: Dense,
    pub embedding_head: Dense,
    pub gcn: Vec<GcnLayerParams>,
}

pub type ParamGradients = ModelParams;

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let mut widths = vec![ModelConfig::INPUT_DIM];
        widths.extend(&cfg.backbone_hidden);
        let d = cfg.feature_dim();
        Self {
            backbone: widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            semantic_head: Dense::zeros(d, cfg.num_classes),
            embedding_head: Dense::zeros(d, cfg.embed_dim),
            gcn: (0..cfg.gcn_layers)
                .map(|_| GcnLayerParams::zeros(cfg.embed_dim, cfg.attention_hidden))
                .collect(),
        }
    }

    /// Seeded initialization. The scorer's output layer starts at zero so
    /// every layer begins as a plain KNN mean.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream_rng(seed, stream::PARAM_INIT, 0);
        let mut p = Self::zeros(cfg);
        for layer in &mut p.backbone {
            *layer = Dense::uniform(layer.inputs(), layer.outputs(), &mut rng);
        }
        let d = cfg.feature_dim();
        p.semantic_head = Dense::uniform(d, cfg.num_classes, &mut rng);
        p.embedding_head = Dense::uniform(d, cfg.embed_dim, &mut rng);
        let f = cfg.embed_dim;
        for layer in &mut p.gcn {
            layer.f_hidden = Dense::uniform(2 * f, cfg.attention_hidden, &mut rng);
            let bound = (1.0 / (2 * f) as f64).sqrt();
            layer
                .updator
                .mapv_inplace(|_| rng.random_range(-bound..=bound));
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding_head.outputs()
    }

    pub fn num_classes(&self) -> usize {
        self.semantic_head.outputs()
    }

    /// Every tensor with its name, in the fixed traversal order used by
    /// checkpoints and the optimizer: backbone layers, semantic head,
    /// embedding head, then GCN layers (`f` hidden, `f` output, updator).
    /// Within a dense layer the weight (row-major) precedes the bias.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (l, d) in self.backbone.iter().enumerate() {
            out.push((format!("backbone.{l}.weight"), d.weight.as_slice().unwrap()));
            out.push((format!("backbone.{l}.bias"), d.bias.as_slice().unwrap()));
        }
        out.push(("semantic_head.weight".into(), self.semantic_head.weight.as_slice().unwrap()));
        out.push(("semantic_head.bias".into(), self.semantic_head.bias.as_slice().unwrap()));
        out.push(("embedding_head.weight".into(), self.embedding_head.weight.as_slice().unwrap()));
        out.push(("embedding_head.bias".into(), self.embedding_head.bias.as_slice().unwrap()));
        for (l, g) in self.gcn.iter().enumerate() {
            out.push((format!("gcn.{l}.f_hidden.weight"), g.f_hidden.weight.as_slice().unwrap()));
            out.push((format!("gcn.{l}.f_hidden.bias"), g.f_hidden.bias.as_slice().unwrap()));
            out.push((format!("gcn.{l}.f_out.weight"), g.f_out.weight.as_slice().unwrap()));
            out.push((format!("gcn.{l}.f_out.bias"), g.f_out.bias.as_slice().unwrap()));
            out.push((format!("gcn.{l}.updator"), g.updator.as_slice().unwrap()));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (l, d) in self.backbone.iter_mut().enumerate() {
            out.push((format!("backbone.{l}.weight"), d.weight.as_slice_mut().unwrap()));
            out.push((format!("backbone.{l}.bias"), d.bias.as_slice_mut().unwrap()));
        }
        let sh = &mut self.semantic_head;
        out.push(("semantic_head.weight".into(), sh.weight.as_slice_mut().unwrap()));
        out.push(("semantic_head.bias".into(), sh.bias.as_slice_mut().unwrap()));
        let eh = &mut self.embedding_head;
        out.push(("embedding_head.weight".into(), eh.weight.as_slice_mut().unwrap()));
        out.push(("embedding_head.bias".into(), eh.bias.as_slice_mut().unwrap()));
        for (l, g) in self.gcn.iter_mut().enumerate() {
            out.push((format!("gcn.{l}.f_hidden.weight"), g.f_hidden.weight.as_slice_mut().unwrap()));
            out.push((format!("gcn.{l}.f_hidden.bias"), g.f_hidden.bias.as_slice_mut().unwrap()));
            out.push((format!("gcn.{l}.f_out.weight"), g.f_out.weight.as_slice_mut().unwrap()));
            out.push((format!("gcn.{l}.f_out.bias"), g.f_out.bias.as_slice_mut().unwrap()));
            out.push((format!("gcn.{l}.updator"), g.updator.as_slice_mut().unwrap()));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    /// Rebuilds parameters for `cfg` from a flat payload in traversal order.
    pub fn from_flat(cfg: &ModelConfig, flat: &[f64]) -> Result<Self> {
        cfg.validate()?;
        let mut p = Self::zeros(cfg);
        let expected = p.num_params();
        if flat.len() != expected {
            return Err(Error::Config(format!(
                "parameter payload holds {} values, configuration needs {expected}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for (_, t) in p.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(p)
    }

    /// Verifies that every tensor has the shape `cfg` prescribes.
    pub fn check_config(&self, cfg: &ModelConfig) -> Result<()> {
        let want = Self::zeros(cfg);
        let got_shapes = self.shapes();
        let want_shapes = want.shapes();
        if got_shapes != want_shapes {
            return Err(Error::Config(format!(
                "parameter shapes {got_shapes:?} do not match configuration {want_shapes:?}"
            )));
        }
        Ok(())
    }

    fn shapes(&self) -> Vec<(String, usize)> {
        let mut s: Vec<(String, usize)> = self
            .tensors()
            .into_iter()
            .map(|(n, t)| (n, t.len()))
            .collect();
        for (l, d) in self.backbone.iter().enumerate() {
            s.push((format!("backbone.{l}.rows"), d.inputs()));
        }
        s.push(("semantic_head.rows".into(), self.semantic_head.inputs()));
        s.push(("embedding_head.rows".into(), self.embedding_head.inputs()));
        for (l, g) in self.gcn.iter().enumerate() {
            s.push((format!("gcn.{l}.f_hidden.rows"), g.f_hidden.inputs()));
            s.push((format!("gcn.{l}.updator.rows"), g.updator.nrows()));
        }
        s
    }

    /// Internal consistency of consecutive layer widths.
    pub(crate) fn check_consistent(&self) -> Result<()> {
        let mut width = ModelConfig::INPUT_DIM;
        for (l, d) in self.backbone.iter().enumerate() {
            if d.inputs() != width || d.bias.len() != d.outputs() {
                return Err(Error::Config(format!("backbone layer {l} has inconsistent shape")));
            }
            width = d.outputs();
        }
        for (name, head) in [("semantic_head", &self.semantic_head), ("embedding_head", &self.embedding_head)] {
            if head.inputs() != width || head.bias.len() != head.outputs() {
                return Err(Error::Config(format!("{name} expects {} inputs, backbone yields {width}", head.inputs())));
            }
        }
        let f = self.embed_dim();
        for (l, g) in self.gcn.iter().enumerate() {
            let h = g.hidden();
            if g.f_hidden.inputs() != 2 * f
                || g.f_hidden.bias.len() != h
                || g.f_out.inputs() != h
                || g.f_out.outputs() != 1
                || g.updator.dim() != (2 * f, f)
            {
                return Err(Error::Config(format!("gcn layer {l} has inconsistent shape")));
            }
        }
        Ok(())
    }

    /// First tensor holding a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
            .map(|(n, _)| n)
    }
}

/// Coarse parameter group of a tensor name: `backbone`, `semantic_head`,
/// `embedding_head`, `gcn{l}.f` or `gcn{l}.W`.
pub fn parameter_group(tensor: &str) -> String {
    let mut parts = tensor.split('.');
    match parts.next() {
        Some("gcn") => {
            let layer = parts.next().unwrap_or("?");
            match parts.next() {
                Some("updator") => format!("gcn{layer}.W"),
                _ => format!("gcn{layer}.f"),
            }
        }
        Some(head) => head.to_string(),
        None => String::new(),
    }
}
