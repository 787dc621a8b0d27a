//! The trainable model stack: embedding, classifier head, perturbation
//! generator and contrastive projection, built from affine layers with
//! hand-derived backward passes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Matrix, RngStream};
use rand_distr::{Distribution, StandardNormal};

/// Pointwise nonlinearity of an affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// One affine layer `y = act(x W + b)` with `W: in_dim x out_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl AffineLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(Error::Shape(format!(
                "bias length {} does not match weight columns {}",
                bias.len(),
                weight.cols()
            )));
        }
        if bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite bias entry".into()));
        }
        Ok(AffineLayer { weight, bias, activation })
    }

    /// Identity-initialized square layer.
    pub fn identity(dim: usize) -> Self {
        AffineLayer {
            weight: Matrix::identity(dim),
            bias: vec![0.0; dim],
            activation: Activation::Identity,
        }
    }

    /// Random init: weights N(0, 1/in_dim), zero bias.
    pub fn random(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        stream: RngStream,
    ) -> Self {
        let mut rng = stream.rng();
        let scale = 1.0 / (in_dim as f64).sqrt();
        let data: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect();
        AffineLayer {
            weight: Matrix::new(in_dim, out_dim, data).expect("finite init"),
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "layer expects {} input columns, got {}",
                self.in_dim(),
                x.cols()
            )));
        }
        let mut z = x.matmul(&self.weight)?;
        for i in 0..z.rows() {
            let row = z.row_mut(i);
            for (v, &b) in row.iter_mut().zip(&self.bias) {
                *v = self.activation.apply(*v + b);
            }
        }
        z.check_finite("affine layer forward")?;
        Ok(z)
    }
}

/// Gradients for one affine layer, shape-congruent with it.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LayerGrad {
    pub fn zeros_like(layer: &AffineLayer) -> Self {
        LayerGrad {
            weight: Matrix::zeros(layer.weight.rows(), layer.weight.cols()),
            bias: vec![0.0; layer.bias.len()],
        }
    }

    pub fn add_scaled(&mut self, other: &LayerGrad, scale: f64) -> Result<()> {
        self.weight.add_scaled(&other.weight, scale)?;
        if self.bias.len() != other.bias.len() {
            return Err(Error::Shape("bias gradient length mismatch".into()));
        }
        for (a, &b) in self.bias.iter_mut().zip(&other.bias) {
            *a += scale * b;
        }
        Ok(())
    }
}

/// A chain of affine layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineStack {
    pub layers: Vec<AffineLayer>,
}

/// Forward-pass intermediates needed by the backward pass: the input to each
/// layer and its post-activation output.
pub(crate) struct StackCache {
    inputs: Vec<Matrix>,
    outputs: Vec<Matrix>,
}

impl StackCache {
    pub(crate) fn output(&self) -> &Matrix {
        self.outputs.last().expect("non-empty stack")
    }

    pub(crate) fn layer_output(&self, idx: usize) -> &Matrix {
        &self.outputs[idx]
    }
}

impl AffineStack {
    pub fn new(layers: Vec<AffineLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("stack needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer output dim {} does not chain into input dim {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        Ok(AffineStack { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, AffineLayer::in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, AffineLayer::out_dim)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut cur = self.layers[0].forward(x)?;
        for layer in &self.layers[1..] {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    pub(crate) fn forward_cached(&self, x: &Matrix) -> Result<StackCache> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let out = layer.forward(&cur)?;
            inputs.push(cur);
            outputs.push(out.clone());
            cur = out;
        }
        Ok(StackCache { inputs, outputs })
    }

    /// Backpropagates `grad_out` (d loss / d stack output) through the cached
    /// forward pass. Optionally applies a per-layer elementwise multiplier on
    /// the way down (used for the generator's noise masks, keyed by the layer
    /// whose *output* was masked). Returns per-layer parameter gradients and
    /// the gradient with respect to the stack input.
    pub(crate) fn backward(
        &self,
        cache: &StackCache,
        grad_out: &Matrix,
        output_masks: Option<&[Option<Matrix>]>,
    ) -> Result<(Vec<LayerGrad>, Matrix)> {
        let mut grads: Vec<LayerGrad> =
            self.layers.iter().map(LayerGrad::zeros_like).collect();
        let mut upstream = grad_out.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            // masked forward replaced this layer's output y by y .* mask, so
            // the incoming gradient picks up the same factor
            if let Some(masks) = output_masks {
                if let Some(mask) = &masks[idx] {
                    for (u, &m) in upstream.data_mut().iter_mut().zip(mask.data()) {
                        *u *= m;
                    }
                }
            }
            let y = &cache.outputs[idx];
            let x = &cache.inputs[idx];
            // dz = upstream .* act'(z), with act' read off the output
            let mut dz = upstream;
            for (g, &yv) in dz.data_mut().iter_mut().zip(y.data()) {
                *g *= layer.activation.derivative_from_output(yv);
            }
            let gw = x.transpose().matmul(&dz)?;
            let mut gb = vec![0.0; layer.bias.len()];
            for i in 0..dz.rows() {
                for (b, &v) in gb.iter_mut().zip(dz.row(i)) {
                    *b += v;
                }
            }
            grads[idx] = LayerGrad { weight: gw, bias: gb };
            upstream = dz.matmul(&layer.weight.transpose())?;
        }
        Ok((grads, upstream))
    }
}

/// Perturbation generator: an affine stack from input space to input space
/// with multiplicative Gaussian noise `1 + rho * N(0,1)` on hidden-layer
/// outputs, followed by an exact projection of each row onto the squared-norm
/// ball `||xp - x||^2 <= epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub stack: AffineStack,
    /// Noise scale; 0 disables the noise.
    pub rho: f64,
    /// Perturbation budget (squared norm per row).
    pub epsilon: f64,
}

pub(crate) struct GeneratorCache {
    pub stack_cache: StackCache,
    /// One optional mask per layer, keyed by the layer whose output it scaled.
    pub masks: Vec<Option<Matrix>>,
    /// Per row: Some(scale factors) if the projection clipped the row.
    pub raw: Matrix,
    pub projected: Vec<bool>,
}

impl Generator {
    pub fn new(stack: AffineStack, rho: f64, epsilon: f64) -> Result<Self> {
        if stack.in_dim() != stack.out_dim() {
            return Err(Error::Shape(format!(
                "generator must map its input dimension to itself, got {} -> {}",
                stack.in_dim(),
                stack.out_dim()
            )));
        }
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::Domain(format!("epsilon must be finite and > 0, got {epsilon}")));
        }
        if rho < 0.0 || !rho.is_finite() {
            return Err(Error::Domain(format!("rho must be finite and >= 0, got {rho}")));
        }
        Ok(Generator { stack, rho, epsilon })
    }

    /// Identity-initialized two-layer generator.
    pub fn identity(dim: usize, rho: f64, epsilon: f64) -> Result<Self> {
        let stack = AffineStack::new(vec![AffineLayer::identity(dim), AffineLayer::identity(dim)])?;
        Generator::new(stack, rho, epsilon)
    }

    /// Samples the multiplicative noise masks for a batch of `n` rows.
    pub(crate) fn sample_masks(&self, n: usize, stream: RngStream) -> Vec<Option<Matrix>> {
        let mut rng = stream.rng();
        let last = self.stack.layers.len() - 1;
        self.stack
            .layers
            .iter()
            .enumerate()
            .map(|(idx, layer)| {
                if idx == last || self.rho == 0.0 {
                    None
                } else {
                    let data: Vec<f64> = (0..n * layer.out_dim())
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            1.0 + self.rho * z
                        })
                        .collect();
                    Some(Matrix::new(n, layer.out_dim(), data).expect("finite mask"))
                }
            })
            .collect()
    }

    /// Forward pass with explicit masks, caching intermediates for backward.
    pub(crate) fn forward_with_masks(
        &self,
        x: &Matrix,
        masks: &[Option<Matrix>],
    ) -> Result<(Matrix, GeneratorCache)> {
        // masked variant of AffineStack::forward_cached
        let mut inputs = Vec::with_capacity(self.stack.layers.len());
        let mut outputs = Vec::with_capacity(self.stack.layers.len());
        let mut cur = x.clone();
        for (idx, layer) in self.stack.layers.iter().enumerate() {
            let out = layer.forward(&cur)?;
            inputs.push(cur);
            outputs.push(out.clone());
            cur = out;
            if let Some(mask) = &masks[idx] {
                for (v, &m) in cur.data_mut().iter_mut().zip(mask.data()) {
                    *v *= m;
                }
            }
        }
        let raw = cur;
        let mut xp = raw.clone();
        let mut projected = vec![false; x.rows()];
        for i in 0..x.rows() {
            let sq: f64 = raw
                .row(i)
                .iter()
                .zip(x.row(i))
                .map(|(&r, &xi)| (r - xi) * (r - xi))
                .sum();
            if sq > self.epsilon {
                projected[i] = true;
                let scale = (self.epsilon / sq).sqrt();
                for (out, (&r, &xi)) in
                    xp.row_mut(i).iter_mut().zip(raw.row(i).iter().zip(x.row(i)))
                {
                    *out = xi + scale * (r - xi);
                }
            }
        }
        xp.check_finite("generator forward")?;
        let cache = GeneratorCache {
            stack_cache: StackCache { inputs, outputs },
            masks: masks.to_vec(),
            raw,
            projected,
        };
        Ok((xp, cache))
    }

    /// Backpropagates a gradient w.r.t. the projected output `xp` through the
    /// projection and the masked stack; returns generator parameter grads.
    pub(crate) fn backward(
        &self,
        x: &Matrix,
        cache: &GeneratorCache,
        grad_xp: &Matrix,
    ) -> Result<Vec<LayerGrad>> {
        let mut grad_raw = grad_xp.clone();
        for i in 0..x.rows() {
            if !cache.projected[i] {
                continue;
            }
            // xp = x + sqrt(eps) * delta / ||delta||, delta = raw - x
            let delta: Vec<f64> = cache
                .raw
                .row(i)
                .iter()
                .zip(x.row(i))
                .map(|(&r, &xi)| r - xi)
                .collect();
            let norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
            let unit: Vec<f64> = delta.iter().map(|d| d / norm).collect();
            let scale = self.epsilon.sqrt() / norm;
            let g = grad_xp.row(i);
            let along: f64 = unit.iter().zip(g).map(|(&u, &gv)| u * gv).sum();
            for (out, (&gv, &u)) in grad_raw.row_mut(i).iter_mut().zip(g.iter().zip(&unit)) {
                *out = scale * (gv - along * u);
            }
        }
        let (grads, _) = self.stack.backward(&cache.stack_cache, &grad_raw, Some(&cache.masks))?;
        Ok(grads)
    }
}

/// Parameters of the full model: embedding `phi`, classifier head `theta`,
/// perturbation generator and contrastive projection, plus the temperature of
/// the contrastive loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelStack {
    pub phi: AffineStack,
    pub theta: AffineStack,
    pub gen: Generator,
    /// Projection matrix (no bias) applied to embeddings for the contrastive
    /// loss.
    pub proj: Matrix,
    /// Contrastive temperature; must be positive.
    pub tau: f64,
}

/// Dimensions of a [`ModelStack`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackDims {
    pub input: usize,
    pub hidden: usize,
    pub embed: usize,
    pub classes: usize,
    pub proj: usize,
}

impl ModelStack {
    pub fn new(
        phi: AffineStack,
        theta: AffineStack,
        gen: Generator,
        proj: Matrix,
        tau: f64,
    ) -> Result<Self> {
        if theta.in_dim() != phi.out_dim() {
            return Err(Error::Shape(format!(
                "classifier expects {} inputs but embedding emits {}",
                theta.in_dim(),
                phi.out_dim()
            )));
        }
        if gen.stack.in_dim() != phi.in_dim() {
            return Err(Error::Shape(format!(
                "generator works on {} dims but embedding consumes {}",
                gen.stack.in_dim(),
                phi.in_dim()
            )));
        }
        if proj.rows() != phi.out_dim() {
            return Err(Error::Shape(format!(
                "projection expects {} rows to match embedding dim {}",
                proj.rows(),
                phi.out_dim()
            )));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Domain(format!("tau must be finite and > 0, got {tau}")));
        }
        Ok(ModelStack { phi, theta, gen, proj, tau })
    }

    /// Standard initialization: two-layer tanh embedding, affine head,
    /// identity-initialized generator, random projection.
    pub fn init(
        dims: StackDims,
        epsilon: f64,
        rho: f64,
        tau: f64,
        stream: RngStream,
    ) -> Result<Self> {
        let phi = AffineStack::new(vec![
            AffineLayer::random(dims.input, dims.hidden, Activation::Tanh, stream.split(0)),
            AffineLayer::random(dims.hidden, dims.embed, Activation::Identity, stream.split(1)),
        ])?;
        let theta = AffineStack::new(vec![AffineLayer::random(
            dims.embed,
            dims.classes,
            Activation::Identity,
            stream.split(2),
        )])?;
        let gen = Generator::identity(dims.input, rho, epsilon)?;
        let proj = AffineLayer::random(dims.embed, dims.proj, Activation::Identity, stream.split(3))
            .weight;
        ModelStack::new(phi, theta, gen, proj, tau)
    }

    pub fn input_dim(&self) -> usize {
        self.phi.in_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.phi.out_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.theta.out_dim()
    }
}

/// Deterministic embedding forward pass `phi(x)`.
pub fn forward_embed(m: &ModelStack, x: &Matrix) -> Result<Matrix> {
    m.phi.forward(x)
}

/// Class logits `theta(phi(x))`.
pub fn forward_logits(m: &ModelStack, x: &Matrix) -> Result<Matrix> {
    m.theta.forward(&m.phi.forward(x)?)
}

/// Applies the generator with fresh noise from `stream` and projects every
/// row onto the epsilon ball around its input.
pub fn generator_forward(m: &ModelStack, x: &Matrix, stream: RngStream) -> Result<Matrix> {
    let masks = m.gen.sample_masks(x.rows(), stream);
    let (xp, _) = m.gen.forward_with_masks(x, &masks)?;
    Ok(xp)
}
