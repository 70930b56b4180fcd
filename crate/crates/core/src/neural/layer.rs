use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::Tensor2D;
use crate::des::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, pre: &Tensor2D) -> Tensor2D {
        match self {
            Activation::Identity => pre.clone(),
            Activation::Relu => {
                let mut out = pre.clone();
                out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                out
            }
        }
    }

    fn backprop(self, pre: &Tensor2D, grad_out: &Tensor2D) -> Tensor2D {
        match self {
            Activation::Identity => grad_out.clone(),
            Activation::Relu => {
                let mut g = grad_out.clone();
                for (gv, &p) in g.data_mut().iter_mut().zip(pre.data()) {
                    if p <= 0.0 {
                        *gv = 0.0;
                    }
                }
                g
            }
        }
    }
}

/// Fully connected layer, weights `[out x in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Tensor2D,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

/// Factorised-Gaussian noisy layer.
///
/// The effective weight is `mu_w + sigma_w * f(eps_out) f(eps_in)^T` and the
/// effective bias `mu_b + sigma_b * f(eps_out)`, with `f(x) = sign(x) sqrt(|x|)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyDenseLayer {
    pub mu_w: Tensor2D,
    pub sigma_w: Tensor2D,
    pub mu_b: Vec<f64>,
    pub sigma_b: Vec<f64>,
    #[serde(skip)]
    pub eps_in: Vec<f64>,
    #[serde(skip)]
    pub eps_out: Vec<f64>,
    pub activation: Activation,
}

fn scale_noise(x: f64) -> f64 {
    x.signum() * x.abs().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Layer {
    Dense(DenseLayer),
    Noisy(NoisyDenseLayer),
}

fn kaiming_uniform(rng: &mut RngStream, rows: usize, cols: usize) -> Tensor2D {
    let bound = (6.0 / cols as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| (2.0 * rng.sample_uniform() - 1.0) * bound)
        .collect();
    Tensor2D::from_vec(rows, cols, data).expect("sized")
}

impl DenseLayer {
    pub fn new(input: usize, output: usize, activation: Activation, rng: &mut RngStream) -> Self {
        Self {
            weights: kaiming_uniform(rng, output, input),
            biases: vec![0.0; output],
            activation,
        }
    }

    pub fn zeroed(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weights: Tensor2D::zeros(output, input),
            biases: vec![0.0; output],
            activation,
        }
    }
}

/// Initial `sigma` scale; per-layer sigma is `SIGMA_ZERO / sqrt(fan_in)`.
pub const SIGMA_ZERO: f64 = 0.5;

impl NoisyDenseLayer {
    pub fn new(input: usize, output: usize, activation: Activation, rng: &mut RngStream) -> Self {
        let sigma = SIGMA_ZERO / (input as f64).sqrt();
        Self {
            mu_w: kaiming_uniform(rng, output, input),
            sigma_w: Tensor2D::from_vec(output, input, vec![sigma; output * input]).expect("sized"),
            mu_b: vec![0.0; output],
            sigma_b: vec![sigma; output],
            eps_in: vec![0.0; input],
            eps_out: vec![0.0; output],
            activation,
        }
    }

    pub fn zeroed(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            mu_w: Tensor2D::zeros(output, input),
            sigma_w: Tensor2D::zeros(output, input),
            mu_b: vec![0.0; output],
            sigma_b: vec![0.0; output],
            eps_in: vec![0.0; input],
            eps_out: vec![0.0; output],
            activation,
        }
    }

    fn noise_is_zero(&self) -> bool {
        self.eps_in.iter().chain(&self.eps_out).all(|&e| e == 0.0)
    }

    pub fn resample(&mut self, rng: &mut RngStream) {
        self.eps_in
            .iter_mut()
            .for_each(|e| *e = rng.sample_standard_normal());
        self.eps_out
            .iter_mut()
            .for_each(|e| *e = rng.sample_standard_normal());
    }

    pub fn zero_noise(&mut self) {
        self.eps_in.iter_mut().for_each(|e| *e = 0.0);
        self.eps_out.iter_mut().for_each(|e| *e = 0.0);
    }

    /// Drops the noise to match the mean parameters.
    pub fn to_dense(&self) -> DenseLayer {
        DenseLayer {
            weights: self.mu_w.clone(),
            biases: self.mu_b.clone(),
            activation: self.activation,
        }
    }

    fn effective(&self) -> (Cow<'_, Tensor2D>, Cow<'_, [f64]>) {
        if self.noise_is_zero() {
            return (Cow::Borrowed(&self.mu_w), Cow::Borrowed(&self.mu_b));
        }
        let f_in: Vec<f64> = self.eps_in.iter().map(|&e| scale_noise(e)).collect();
        let f_out: Vec<f64> = self.eps_out.iter().map(|&e| scale_noise(e)).collect();
        let mut w = self.mu_w.clone();
        for (o, &fo) in f_out.iter().enumerate() {
            let sig = self.sigma_w.row(o);
            for ((wv, &s), &fi) in w.row_mut(o).iter_mut().zip(sig).zip(&f_in) {
                *wv += s * fo * fi;
            }
        }
        let b = self
            .mu_b
            .iter()
            .zip(&self.sigma_b)
            .zip(&f_out)
            .map(|((&m, &s), &fo)| m + s * fo)
            .collect();
        (Cow::Owned(w), Cow::Owned(b))
    }
}

fn affine(x: &Tensor2D, w: &Tensor2D, b: &[f64]) -> Tensor2D {
    let mut out = Tensor2D::zeros(x.rows(), w.rows());
    for r in 0..x.rows() {
        let xr = x.row(r);
        for (o, ov) in out.row_mut(r).iter_mut().enumerate() {
            let dot: f64 = w.row(o).iter().zip(xr).map(|(a, b)| a * b).sum();
            *ov = dot + b[o];
        }
    }
    out
}

/// Returns `(grad_x, grad_w, grad_b)` for `pre = x W^T + b`.
fn affine_backward(
    x: &Tensor2D,
    w: &Tensor2D,
    grad_pre: &Tensor2D,
) -> (Tensor2D, Tensor2D, Vec<f64>) {
    let (out_dim, in_dim) = w.shape();
    let mut gw = Tensor2D::zeros(out_dim, in_dim);
    let mut gb = vec![0.0; out_dim];
    let mut gx = Tensor2D::zeros(x.rows(), in_dim);
    for r in 0..x.rows() {
        let xr = x.row(r);
        let gr = grad_pre.row(r);
        for o in 0..out_dim {
            let g = gr[o];
            if g == 0.0 {
                continue;
            }
            gb[o] += g;
            for (gwv, &xv) in gw.row_mut(o).iter_mut().zip(xr) {
                *gwv += g * xv;
            }
            for (gxv, &wv) in gx.row_mut(r).iter_mut().zip(w.row(o)) {
                *gxv += g * wv;
            }
        }
    }
    (gx, gw, gb)
}

/// Cached values for one layer's forward pass.
#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    pub input: Tensor2D,
    pub pre: Tensor2D,
}

impl Layer {
    pub fn input_size(&self) -> usize {
        match self {
            Layer::Dense(l) => l.weights.cols(),
            Layer::Noisy(l) => l.mu_w.cols(),
        }
    }

    pub fn output_size(&self) -> usize {
        match self {
            Layer::Dense(l) => l.weights.rows(),
            Layer::Noisy(l) => l.mu_w.rows(),
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            Layer::Dense(l) => l.activation,
            Layer::Noisy(l) => l.activation,
        }
    }

    pub fn is_noisy(&self) -> bool {
        matches!(self, Layer::Noisy(_))
    }

    fn effective(&self) -> (Cow<'_, Tensor2D>, Cow<'_, [f64]>) {
        match self {
            Layer::Dense(l) => (Cow::Borrowed(&l.weights), Cow::Borrowed(&l.biases)),
            Layer::Noisy(l) => l.effective(),
        }
    }

    pub fn forward(&self, x: &Tensor2D) -> Tensor2D {
        let (w, b) = self.effective();
        self.activation().apply(&affine(x, &w, &b))
    }

    pub(crate) fn forward_cached(&self, x: &Tensor2D) -> (Tensor2D, LayerCache) {
        let (w, b) = self.effective();
        let pre = affine(x, &w, &b);
        let out = self.activation().apply(&pre);
        (
            out,
            LayerCache {
                input: x.clone(),
                pre,
            },
        )
    }

    /// Backpropagates `grad_out` (gradient w.r.t. this layer's activated
    /// output). Returns the input gradient and one gradient vector per
    /// parameter tensor, in [`Layer::parameters`] order.
    pub(crate) fn backward(
        &self,
        cache: &LayerCache,
        grad_out: &Tensor2D,
    ) -> (Tensor2D, Vec<Vec<f64>>) {
        let grad_pre = self.activation().backprop(&cache.pre, grad_out);
        let (w, _) = self.effective();
        let (gx, gw, gb) = affine_backward(&cache.input, &w, &grad_pre);
        let grads = match self {
            Layer::Dense(_) => vec![gw.data().to_vec(), gb],
            Layer::Noisy(l) => {
                let f_in: Vec<f64> = l.eps_in.iter().map(|&e| scale_noise(e)).collect();
                let f_out: Vec<f64> = l.eps_out.iter().map(|&e| scale_noise(e)).collect();
                let mut gsw = gw.clone();
                for (o, &fo) in f_out.iter().enumerate() {
                    for (g, &fi) in gsw.row_mut(o).iter_mut().zip(&f_in) {
                        *g *= fo * fi;
                    }
                }
                let gsb = gb.iter().zip(&f_out).map(|(g, fo)| g * fo).collect();
                vec![gw.data().to_vec(), gsw.data().to_vec(), gb, gsb]
            }
        };
        (gx, grads)
    }

    pub fn parameters(&self) -> Vec<&[f64]> {
        match self {
            Layer::Dense(l) => vec![l.weights.data(), &l.biases],
            Layer::Noisy(l) => vec![l.mu_w.data(), l.sigma_w.data(), &l.mu_b, &l.sigma_b],
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Dense(l) => vec![l.weights.data_mut(), &mut l.biases],
            Layer::Noisy(l) => vec![
                l.mu_w.data_mut(),
                l.sigma_w.data_mut(),
                &mut l.mu_b,
                &mut l.sigma_b,
            ],
        }
    }

    /// Checks internal shape consistency; used when loading from disk.
    pub(crate) fn validate(&self, input: usize, output: usize) -> Result<(), String> {
        let check = |t: &Tensor2D, name: &str| -> Result<(), String> {
            if !t.is_consistent() || t.shape() != (output, input) {
                return Err(format!(
                    "{name} has shape {:?}, expected {:?}",
                    t.shape(),
                    (output, input)
                ));
            }
            Ok(())
        };
        let check_vec = |v: &[f64], name: &str| -> Result<(), String> {
            if v.len() != output {
                return Err(format!("{name} has length {}, expected {output}", v.len()));
            }
            Ok(())
        };
        match self {
            Layer::Dense(l) => {
                check(&l.weights, "weights")?;
                check_vec(&l.biases, "biases")?;
            }
            Layer::Noisy(l) => {
                check(&l.mu_w, "mu_w")?;
                check(&l.sigma_w, "sigma_w")?;
                check_vec(&l.mu_b, "mu_b")?;
                check_vec(&l.sigma_b, "sigma_b")?;
            }
        }
        if self
            .parameters()
            .iter()
            .any(|p| p.iter().any(|v| !v.is_finite()))
        {
            return Err("non-finite parameter".into());
        }
        Ok(())
    }

    /// Restores zero noise buffers after deserialisation.
    pub(crate) fn reset_noise_buffers(&mut self) {
        if let Layer::Noisy(l) = self {
            l.eps_in = vec![0.0; l.mu_w.cols()];
            l.eps_out = vec![0.0; l.mu_w.rows()];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_weight_gradient_is_outer_product() {
        let layer = Layer::Dense(DenseLayer {
            weights: Tensor2D::from_vec(2, 3, vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6]).unwrap(),
            biases: vec![0.0, 0.0],
            activation: Activation::Identity,
        });
        let x = Tensor2D::from_vec(1, 3, vec![1.0, 2.0, -1.0]).unwrap();
        let (_, cache) = layer.forward_cached(&x);
        let g = Tensor2D::from_vec(1, 2, vec![0.5, -2.0]).unwrap();
        let (_, grads) = layer.backward(&cache, &g);
        let expected: Vec<f64> = [0.5, -2.0]
            .iter()
            .flat_map(|go| x.row(0).iter().map(move |xi| go * xi))
            .collect();
        assert_eq!(grads[0], expected);
        assert_eq!(grads[1], vec![0.5, -2.0]);
    }

    #[test]
    fn noise_scaling_is_signed_sqrt() {
        assert_eq!(scale_noise(4.0), 2.0);
        assert_eq!(scale_noise(-9.0), -3.0);
        assert_eq!(scale_noise(0.0), 0.0);
    }

    #[test]
    fn zero_noise_matches_dense() {
        let mut rng = RngStream::new(4);
        let mut noisy = NoisyDenseLayer::new(3, 2, Activation::Relu, &mut rng);
        let x = Tensor2D::from_vec(2, 3, vec![0.3, -1.0, 2.0, 1.5, 0.2, -0.7]).unwrap();
        noisy.resample(&mut rng);
        let with_noise = Layer::Noisy(noisy.clone()).forward(&x);
        noisy.zero_noise();
        let dense = Layer::Dense(noisy.to_dense()).forward(&x);
        assert_eq!(Layer::Noisy(noisy).forward(&x), dense);
        assert_ne!(with_noise, dense);
    }
}
