//! Dense encoder, embedding layer, split classification head and view
//! discriminator, with hand-derived reverse-mode gradients.
//!
//! ```text
//! x -> [dense + relu]* -> dense + relu = z -> dense = logits (L labeled | U unlabeled)
//!                                         z -> [dense + relu]* -> dense -> view logits (K)
//! ```

mod checkpoint;

pub use checkpoint::{Checkpoint, Tensor};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{sharpen_unchecked, softmax_scaled};
use crate::types::{DatasetSpec, ForwardOutput, Hyperparams};

/// Network shape. Everything that determines parameter shapes lives here, so
/// its hash identifies compatible checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub spec: DatasetSpec,
    pub encoder_widths: Vec<usize>,
    pub embed_dim: usize,
    pub disc_widths: Vec<usize>,
}

impl Architecture {
    pub fn new(spec: DatasetSpec, encoder_widths: Vec<usize>, embed_dim: usize) -> Self {
        Self {
            spec,
            encoder_widths,
            embed_dim,
            disc_widths: vec![16],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.encoder_widths.is_empty() {
            return Err(Error::invalid("encoder widths must be non-empty"));
        }
        if self
            .encoder_widths
            .iter()
            .chain(&self.disc_widths)
            .any(|&w| w == 0)
            || self.embed_dim == 0
        {
            return Err(Error::invalid("layer widths must be positive"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        crate::types::json_hash(self)
    }
}

/// A fully connected layer, `y = W x + b` with `W` stored row-major as
/// `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn random(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, 1.0 / (inputs as f64).sqrt()).expect("valid std");
        Self {
            inputs,
            outputs,
            weight: (0..inputs * outputs).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        self.weight
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    fn backprop(&self, x: &[f64], dy: &[f64], grad: Option<&mut Dense>, want_dx: bool) -> Vec<f64> {
        if let Some(g) = grad {
            for ((grow, gb), &d) in g
                .weight
                .chunks_exact_mut(self.inputs)
                .zip(&mut g.bias)
                .zip(dy)
            {
                if d == 0.0 {
                    continue;
                }
                *gb += d;
                for (gw, xv) in grow.iter_mut().zip(x) {
                    *gw += d * xv;
                }
            }
        }
        if !want_dx {
            return Vec::new();
        }
        let mut dx = vec![0.0; self.inputs];
        for (row, &d) in self.weight.chunks_exact(self.inputs).zip(dy) {
            if d == 0.0 {
                continue;
            }
            for (dxi, w) in dx.iter_mut().zip(row) {
                *dxi += d * w;
            }
        }
        dx
    }
}

fn relu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

fn relu_backward(pre: &[f64], d: &mut [f64]) {
    for (di, &p) in d.iter_mut().zip(pre) {
        if p <= 0.0 {
            *di = 0.0;
        }
    }
}

/// Which side of the adversarial game a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Encoder, embedding and classification head.
    Encoder,
    Discriminator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub encoder: Vec<Dense>,
    pub embedding: Dense,
    pub head: Dense,
    pub discriminator: Vec<Dense>,
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct Trace {
    input: Vec<f64>,
    /// Pre-activations of each encoder layer followed by the embedding layer.
    pre: Vec<Vec<f64>>,
    /// Post-activations matching `pre`; the last entry is `z`.
    act: Vec<Vec<f64>>,
    pub output: ForwardOutput,
}

impl Trace {
    pub fn z(&self) -> &[f64] {
        &self.output.z
    }

    /// Sign pattern of every ReLU in this pass.
    pub fn relu_pattern(&self, out: &mut Vec<bool>) {
        for layer in &self.pre {
            out.extend(layer.iter().map(|&p| p > 0.0));
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiscTrace {
    z: Vec<f64>,
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

impl DiscTrace {
    pub fn relu_pattern(&self, out: &mut Vec<bool>) {
        for layer in &self.pre {
            out.extend(layer.iter().map(|&p| p > 0.0));
        }
    }
}

impl ModelParams {
    /// Random initialization: weights `N(0, 1/fan_in)`, zero biases.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::build(arch, |i, o| Dense::random(i, o, &mut rng)))
    }

    /// All weights and biases zero.
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        Ok(Self::build(arch, Dense::zeros))
    }

    fn build(arch: &Architecture, mut layer: impl FnMut(usize, usize) -> Dense) -> Self {
        let spec = &arch.spec;
        let mut encoder = Vec::with_capacity(arch.encoder_widths.len());
        let mut width = spec.input_dim();
        for &w in &arch.encoder_widths {
            encoder.push(layer(width, w));
            width = w;
        }
        let embedding = layer(width, arch.embed_dim);
        let head = layer(arch.embed_dim, spec.num_classes());
        let mut discriminator = Vec::with_capacity(arch.disc_widths.len() + 1);
        let mut width = arch.embed_dim;
        for &w in &arch.disc_widths {
            discriminator.push(layer(width, w));
            width = w;
        }
        discriminator.push(layer(width, spec.views));
        Self {
            arch: arch.clone(),
            encoder,
            embedding,
            head,
            discriminator,
        }
    }

    pub fn spec(&self) -> &DatasetSpec {
        &self.arch.spec
    }

    /// Named layers in a fixed order, tagged with their group.
    pub fn layers(&self) -> Vec<(String, ParamGroup, &Dense)> {
        let mut out = Vec::new();
        for (i, l) in self.encoder.iter().enumerate() {
            out.push((format!("encoder.{i}"), ParamGroup::Encoder, l));
        }
        out.push((
            "embedding".to_string(),
            ParamGroup::Encoder,
            &self.embedding,
        ));
        out.push(("head".to_string(), ParamGroup::Encoder, &self.head));
        for (i, l) in self.discriminator.iter().enumerate() {
            out.push((format!("discriminator.{i}"), ParamGroup::Discriminator, l));
        }
        out
    }

    pub fn layers_mut(&mut self) -> Vec<(ParamGroup, &mut Dense)> {
        let mut out: Vec<(ParamGroup, &mut Dense)> = Vec::new();
        for l in &mut self.encoder {
            out.push((ParamGroup::Encoder, l));
        }
        out.push((ParamGroup::Encoder, &mut self.embedding));
        out.push((ParamGroup::Encoder, &mut self.head));
        for l in &mut self.discriminator {
            out.push((ParamGroup::Discriminator, l));
        }
        out
    }

    /// Every parameter slice with its group, weights before biases per layer.
    pub fn slices_mut(&mut self) -> Vec<(ParamGroup, &mut [f64])> {
        let mut out = Vec::new();
        for (group, layer) in self.layers_mut() {
            out.push((group, layer.weight.as_mut_slice()));
            out.push((group, layer.bias.as_mut_slice()));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.layers()
            .iter()
            .map(|(_, _, l)| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Flattened parameters in [`ModelParams::slices_mut`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, _, l) in self.layers() {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn groups_flat(&self) -> Vec<ParamGroup> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, g, l) in self.layers() {
            out.extend(std::iter::repeat_n(g, l.weight.len() + l.bias.len()));
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for (_, s) in self.slices_mut() {
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers()
            .iter()
            .all(|(_, _, l)| l.weight.iter().chain(&l.bias).all(|x| x.is_finite()))
    }

    /// Forward pass that keeps intermediates for [`ModelParams::backprop`].
    pub fn forward_traced(&self, features: &[f64], hyper: &Hyperparams) -> Result<Trace> {
        let spec = self.spec();
        if features.len() != spec.input_dim() {
            return Err(Error::shape(
                "input features",
                format!("{} x {}", spec.seq_len, spec.feature_dim),
                format!("{} values", features.len()),
            ));
        }
        let mut pre = Vec::with_capacity(self.encoder.len() + 1);
        let mut act = Vec::with_capacity(self.encoder.len() + 1);
        let mut h = features.to_vec();
        for layer in self.encoder.iter().chain(std::iter::once(&self.embedding)) {
            let p = layer.apply(&h);
            let mut a = p.clone();
            relu(&mut a);
            pre.push(p);
            act.push(a.clone());
            h = a;
        }
        let z = h;
        let logits = self.head.apply(&z);
        let y_hat = softmax_scaled(&logits, 1.0);
        let y_tilde =
            sharpen_unchecked(&y_hat[spec.labeled_classes..], hyper.sr, hyper.sharpen_mode);
        Ok(Trace {
            input: features.to_vec(),
            pre,
            act,
            output: ForwardOutput {
                z,
                logits,
                y_hat,
                y_tilde,
            },
        })
    }

    pub fn forward(&self, features: &[f64], hyper: &Hyperparams) -> Result<ForwardOutput> {
        Ok(self.forward_traced(features, hyper)?.output)
    }

    /// Backpropagates `dL/dlogits` and `dL/dz` through head, embedding and
    /// encoder, accumulating into `grads`.
    pub fn backprop(
        &self,
        trace: &Trace,
        d_logits: &[f64],
        d_z: Option<&[f64]>,
        grads: &mut GradientBundle,
    ) {
        let g = &mut grads.0;
        let mut d = self
            .head
            .backprop(&trace.output.z, d_logits, Some(&mut g.head), true);
        if let Some(dz) = d_z {
            for (a, b) in d.iter_mut().zip(dz) {
                *a += b;
            }
        }
        let n = self.encoder.len();
        for idx in (0..=n).rev() {
            relu_backward(&trace.pre[idx], &mut d);
            let input = if idx == 0 {
                &trace.input
            } else {
                &trace.act[idx - 1]
            };
            let (layer, glayer) = if idx == n {
                (&self.embedding, &mut g.embedding)
            } else {
                (&self.encoder[idx], &mut g.encoder[idx])
            };
            d = layer.backprop(input, &d, Some(glayer), idx > 0);
        }
    }

    /// View probabilities for an embedding.
    pub fn forward_discriminator(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.arch.embed_dim {
            return Err(Error::shape(
                "discriminator input",
                self.arch.embed_dim,
                z.len(),
            ));
        }
        if !z.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("discriminator input".into()));
        }
        Ok(self.forward_discriminator_traced(z).probs)
    }

    pub fn forward_discriminator_traced(&self, z: &[f64]) -> DiscTrace {
        let last = self.discriminator.len() - 1;
        let mut pre = Vec::with_capacity(last);
        let mut act = Vec::with_capacity(last);
        let mut h = z.to_vec();
        for layer in &self.discriminator[..last] {
            let p = layer.apply(&h);
            let mut a = p.clone();
            relu(&mut a);
            pre.push(p);
            act.push(a.clone());
            h = a;
        }
        let logits = self.discriminator[last].apply(&h);
        DiscTrace {
            z: z.to_vec(),
            pre,
            act,
            probs: softmax_scaled(&logits, 1.0),
        }
    }

    /// Backpropagates `dL/dprobs` through the discriminator. Parameter
    /// gradients go to `grads` when given (a frozen discriminator passes
    /// `None`); returns `dL/dz` when `want_dz`.
    pub fn backprop_discriminator(
        &self,
        trace: &DiscTrace,
        d_probs: &[f64],
        mut grads: Option<&mut GradientBundle>,
        want_dz: bool,
    ) -> Vec<f64> {
        let mut d = crate::numeric::softmax_vjp(&trace.probs, d_probs);
        let last = self.discriminator.len() - 1;
        for idx in (0..=last).rev() {
            if idx < last {
                relu_backward(&trace.pre[idx], &mut d);
            }
            let input = if idx == 0 {
                &trace.z
            } else {
                &trace.act[idx - 1]
            };
            let g = grads.as_deref_mut().map(|g| &mut g.0.discriminator[idx]);
            let need_dx = idx > 0 || want_dz;
            d = self.discriminator[idx].backprop(input, &d, g, need_dx);
        }
        if want_dz {
            d
        } else {
            Vec::new()
        }
    }
}

/// Gradients with the same shape as a [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle(pub ModelParams);

impl GradientBundle {
    pub fn zeros_like(params: &ModelParams) -> Self {
        GradientBundle(ModelParams::build(&params.arch, Dense::zeros))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.0.to_flat()
    }

    pub fn is_finite(&self) -> bool {
        self.0.is_finite()
    }

    pub fn add_scaled(&mut self, other: &GradientBundle, scale: f64) {
        let theirs = other.0.layers();
        for ((_, mine), (_, _, theirs)) in self.0.layers_mut().into_iter().zip(theirs) {
            for (x, y) in mine.weight.iter_mut().zip(&theirs.weight) {
                *x += scale * y;
            }
            for (x, y) in mine.bias.iter_mut().zip(&theirs.bias) {
                *x += scale * y;
            }
        }
    }

    /// Sum of squares per group.
    pub fn sq_norm(&self, group: ParamGroup) -> f64 {
        self.0
            .layers()
            .iter()
            .filter(|(_, g, _)| *g == group)
            .map(|(_, _, l)| l.weight.iter().chain(&l.bias).map(|x| x * x).sum::<f64>())
            .sum()
    }
}
