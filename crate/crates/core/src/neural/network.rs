use serde::{Deserialize, Serialize};

use super::layer::LayerCache;
use super::{shape_err, Activation, DenseLayer, Layer, NeuralError, NoisyDenseLayer, Tensor2D};
use crate::des::RngStream;

/// Architecture descriptor; two networks with equal descriptors have
/// parameter tensors of identical shapes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkArch {
    pub input_size: usize,
    pub hidden: Vec<usize>,
    pub action_size: usize,
    pub dueling: bool,
    pub noisy: bool,
}

impl NetworkArch {
    pub fn new(input_size: usize, action_size: usize) -> Self {
        Self {
            input_size,
            hidden: vec![48, 48],
            action_size,
            dueling: false,
            noisy: false,
        }
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn dueling(mut self, on: bool) -> Self {
        self.dueling = on;
        self
    }

    pub fn noisy(mut self, on: bool) -> Self {
        self.noisy = on;
        self
    }

    /// Every layer after the first hidden layer is noisy when `noisy` is set.
    fn layer_is_noisy(&self, position: usize) -> bool {
        self.noisy && (position > 0 || self.hidden.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Head {
    Linear { layer: Layer },
    Dueling { value: Layer, advantage: Layer },
}

/// Per-parameter-tensor gradients, ordered as [`QNetwork::parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone)]
enum HeadCache {
    Linear(LayerCache),
    Dueling {
        value: LayerCache,
        advantage: LayerCache,
    },
}

#[derive(Debug, Clone)]
struct ForwardCache {
    body: Vec<LayerCache>,
    head: HeadCache,
    batch: usize,
}

/// Q-value network: ReLU body plus linear or dueling head.
#[derive(Debug, Clone)]
pub struct QNetwork {
    arch: NetworkArch,
    body: Vec<Layer>,
    head: Head,
    cache: Option<ForwardCache>,
}

fn make_layer(
    arch: &NetworkArch,
    position: usize,
    input: usize,
    output: usize,
    activation: Activation,
    rng: Option<&mut RngStream>,
) -> Layer {
    match (arch.layer_is_noisy(position), rng) {
        (true, Some(rng)) => Layer::Noisy(NoisyDenseLayer::new(input, output, activation, rng)),
        (true, None) => Layer::Noisy(NoisyDenseLayer::zeroed(input, output, activation)),
        (false, Some(rng)) => Layer::Dense(DenseLayer::new(input, output, activation, rng)),
        (false, None) => Layer::Dense(DenseLayer::zeroed(input, output, activation)),
    }
}

impl QNetwork {
    /// Randomly initialised network.
    pub fn new(arch: NetworkArch, rng: &mut RngStream) -> Self {
        Self::build(arch, Some(rng))
    }

    /// Network with every parameter set to zero.
    pub fn zeroed(arch: NetworkArch) -> Self {
        Self::build(arch, None)
    }

    fn build(arch: NetworkArch, mut rng: Option<&mut RngStream>) -> Self {
        let mut body = Vec::with_capacity(arch.hidden.len());
        let mut input = arch.input_size;
        for (pos, &width) in arch.hidden.iter().enumerate() {
            body.push(make_layer(
                &arch,
                pos,
                input,
                width,
                Activation::Relu,
                rng.as_deref_mut(),
            ));
            input = width;
        }
        let pos = arch.hidden.len();
        let head = if arch.dueling {
            let value = make_layer(
                &arch,
                pos,
                input,
                1,
                Activation::Identity,
                rng.as_deref_mut(),
            );
            let advantage = make_layer(
                &arch,
                pos,
                input,
                arch.action_size,
                Activation::Identity,
                rng.as_deref_mut(),
            );
            Head::Dueling { value, advantage }
        } else {
            Head::Linear {
                layer: make_layer(
                    &arch,
                    pos,
                    input,
                    arch.action_size,
                    Activation::Identity,
                    rng,
                ),
            }
        };
        Self {
            arch,
            body,
            head,
            cache: None,
        }
    }

    pub(crate) fn from_parts(
        arch: NetworkArch,
        mut body: Vec<Layer>,
        mut head: Head,
    ) -> Result<Self, String> {
        if body.len() != arch.hidden.len() {
            return Err(format!(
                "{} body layers for {} hidden sizes",
                body.len(),
                arch.hidden.len()
            ));
        }
        let mut input = arch.input_size;
        for (pos, (layer, &width)) in body.iter_mut().zip(&arch.hidden).enumerate() {
            if layer.is_noisy() != arch.layer_is_noisy(pos)
                || layer.activation() != Activation::Relu
            {
                return Err(format!("body layer {pos} has the wrong kind"));
            }
            layer
                .validate(input, width)
                .map_err(|e| format!("body layer {pos}: {e}"))?;
            layer.reset_noise_buffers();
            input = width;
        }
        let pos = arch.hidden.len();
        let head_noisy = arch.layer_is_noisy(pos);
        let check_head = |layer: &mut Layer, out: usize, name: &str| -> Result<(), String> {
            if layer.is_noisy() != head_noisy || layer.activation() != Activation::Identity {
                return Err(format!("{name} layer has the wrong kind"));
            }
            layer
                .validate(input, out)
                .map_err(|e| format!("{name}: {e}"))?;
            layer.reset_noise_buffers();
            Ok(())
        };
        match (&mut head, arch.dueling) {
            (Head::Linear { layer }, false) => check_head(layer, arch.action_size, "head")?,
            (Head::Dueling { value, advantage }, true) => {
                check_head(value, 1, "value")?;
                check_head(advantage, arch.action_size, "advantage")?;
            }
            _ => return Err("head type does not match architecture".into()),
        }
        Ok(Self {
            arch,
            body,
            head,
            cache: None,
        })
    }

    pub fn arch(&self) -> &NetworkArch {
        &self.arch
    }

    pub(crate) fn body(&self) -> &[Layer] {
        &self.body
    }

    pub(crate) fn head(&self) -> &Head {
        &self.head
    }

    pub fn input_size(&self) -> usize {
        self.arch.input_size
    }

    pub fn action_size(&self) -> usize {
        self.arch.action_size
    }

    pub fn is_noisy(&self) -> bool {
        self.layers().any(Layer::is_noisy)
    }

    fn layers(&self) -> impl Iterator<Item = &Layer> {
        let head: Vec<&Layer> = match &self.head {
            Head::Linear { layer } => vec![layer],
            Head::Dueling { value, advantage } => vec![value, advantage],
        };
        self.body.iter().chain(head)
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        let head: Vec<&mut Layer> = match &mut self.head {
            Head::Linear { layer } => vec![layer],
            Head::Dueling { value, advantage } => vec![value, advantage],
        };
        self.body.iter_mut().chain(head)
    }

    fn check_batch(&self, batch: &Tensor2D) -> Result<(), NeuralError> {
        if batch.cols() != self.arch.input_size {
            return Err(shape_err(
                format!("batch width {}", self.arch.input_size),
                batch.cols(),
            ));
        }
        Ok(())
    }

    fn aggregate(value: &Tensor2D, advantage: &Tensor2D) -> Tensor2D {
        let n = advantage.cols() as f64;
        let mut q = advantage.clone();
        for r in 0..q.rows() {
            let v = value.get(r, 0);
            let mean = advantage.row(r).iter().sum::<f64>() / n;
            q.row_mut(r).iter_mut().for_each(|a| *a = v + (*a - mean));
        }
        q
    }

    /// Q-values for a `[B x input_size]` batch.
    pub fn forward(&self, batch: &Tensor2D) -> Result<Tensor2D, NeuralError> {
        self.check_batch(batch)?;
        let mut h = batch.clone();
        for layer in &self.body {
            h = layer.forward(&h);
        }
        Ok(match &self.head {
            Head::Linear { layer } => layer.forward(&h),
            Head::Dueling { value, advantage } => {
                Self::aggregate(&value.forward(&h), &advantage.forward(&h))
            }
        })
    }

    /// Q-values for a single observation.
    pub fn q_values(&self, obs: &[f64]) -> Result<Vec<f64>, NeuralError> {
        let x = Tensor2D::from_vec(1, obs.len(), obs.to_vec())?;
        Ok(self.forward(&x)?.row(0).to_vec())
    }

    /// State value and raw advantages of a dueling network, `None` otherwise.
    pub fn dueling_parts(
        &self,
        batch: &Tensor2D,
    ) -> Result<Option<(Tensor2D, Tensor2D)>, NeuralError> {
        self.check_batch(batch)?;
        let Head::Dueling { value, advantage } = &self.head else {
            return Ok(None);
        };
        let mut h = batch.clone();
        for layer in &self.body {
            h = layer.forward(&h);
        }
        Ok(Some((value.forward(&h), advantage.forward(&h))))
    }

    /// Forward pass that keeps the activations needed by [`QNetwork::backward`].
    pub fn forward_cached(&mut self, batch: &Tensor2D) -> Result<Tensor2D, NeuralError> {
        self.check_batch(batch)?;
        let mut h = batch.clone();
        let mut body = Vec::with_capacity(self.body.len());
        for layer in &self.body {
            let (out, cache) = layer.forward_cached(&h);
            body.push(cache);
            h = out;
        }
        let (q, head) = match &self.head {
            Head::Linear { layer } => {
                let (out, cache) = layer.forward_cached(&h);
                (out, HeadCache::Linear(cache))
            }
            Head::Dueling { value, advantage } => {
                let (v, vc) = value.forward_cached(&h);
                let (a, ac) = advantage.forward_cached(&h);
                (
                    Self::aggregate(&v, &a),
                    HeadCache::Dueling {
                        value: vc,
                        advantage: ac,
                    },
                )
            }
        };
        self.cache = Some(ForwardCache {
            body,
            head,
            batch: batch.rows(),
        });
        Ok(q)
    }

    /// Gradients of the loss w.r.t. every parameter, given `dL/dQ`. Consumes
    /// the cache left by the last [`QNetwork::forward_cached`].
    pub fn backward(&mut self, grad_out: &Tensor2D) -> Result<Gradients, NeuralError> {
        let cache = self.cache.take().ok_or(NeuralError::NoCachedForward)?;
        if grad_out.shape() != (cache.batch, self.arch.action_size) {
            let expected = format!("{}x{}", cache.batch, self.arch.action_size);
            self.cache = Some(cache);
            return Err(shape_err(expected, format!("{:?}", grad_out.shape())));
        }
        let (mut grad_h, head_grads) = match (&self.head, &cache.head) {
            (Head::Linear { layer }, HeadCache::Linear(c)) => layer.backward(c, grad_out),
            (
                Head::Dueling { value, advantage },
                HeadCache::Dueling {
                    value: vc,
                    advantage: ac,
                },
            ) => {
                let n = grad_out.cols() as f64;
                let mut grad_v = Tensor2D::zeros(grad_out.rows(), 1);
                let mut grad_a = grad_out.clone();
                for r in 0..grad_out.rows() {
                    let total: f64 = grad_out.row(r).iter().sum();
                    grad_v.set(r, 0, total);
                    let mean = total / n;
                    grad_a.row_mut(r).iter_mut().for_each(|g| *g -= mean);
                }
                let (gh_v, mut gv) = value.backward(vc, &grad_v);
                let (gh_a, ga) = advantage.backward(ac, &grad_a);
                let mut gh = gh_v;
                for (a, b) in gh.data_mut().iter_mut().zip(gh_a.data()) {
                    *a += b;
                }
                gv.extend(ga);
                (gh, gv)
            }
            _ => unreachable!("cache built from the same head"),
        };
        let mut body_grads: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.body.len());
        for (layer, c) in self.body.iter().zip(&cache.body).rev() {
            let (gx, g) = layer.backward(c, &grad_h);
            body_grads.push(g);
            grad_h = gx;
        }
        let mut all: Vec<Vec<f64>> = body_grads.into_iter().rev().flatten().collect();
        all.extend(head_grads);
        Ok(Gradients(all))
    }

    pub fn parameters(&self) -> Vec<&[f64]> {
        self.layers().flat_map(Layer::parameters).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers_mut().flat_map(Layer::parameters_mut).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    /// Draws fresh factorised noise for every noisy layer.
    pub fn resample_noise(&mut self, rng: &mut RngStream) -> Result<(), NeuralError> {
        if !self.is_noisy() {
            return Err(NeuralError::NotNoisy);
        }
        for layer in self.layers_mut() {
            if let Layer::Noisy(l) = layer {
                l.resample(rng);
            }
        }
        Ok(())
    }

    pub fn zero_noise(&mut self) -> Result<(), NeuralError> {
        if !self.is_noisy() {
            return Err(NeuralError::NotNoisy);
        }
        for layer in self.layers_mut() {
            if let Layer::Noisy(l) = layer {
                l.zero_noise();
            }
        }
        Ok(())
    }

    /// Plain network built from the mean parameters of the noisy layers.
    pub fn mu_only(&self) -> QNetwork {
        let to_dense = |l: &Layer| match l {
            Layer::Dense(d) => Layer::Dense(d.clone()),
            Layer::Noisy(n) => Layer::Dense(n.to_dense()),
        };
        let head = match &self.head {
            Head::Linear { layer } => Head::Linear {
                layer: to_dense(layer),
            },
            Head::Dueling { value, advantage } => Head::Dueling {
                value: to_dense(value),
                advantage: to_dense(advantage),
            },
        };
        QNetwork {
            arch: NetworkArch {
                noisy: false,
                ..self.arch.clone()
            },
            body: self.body.iter().map(to_dense).collect(),
            head,
            cache: None,
        }
    }

    /// Copies every parameter of `src` into `self`. Noise buffers and any
    /// cached forward pass of `self` are left alone.
    pub fn copy_parameters_from(&mut self, src: &QNetwork) -> Result<(), NeuralError> {
        if self.arch != src.arch {
            return Err(NeuralError::ArchitectureMismatch(format!(
                "{:?} vs {:?}",
                src.arch, self.arch
            )));
        }
        for (dst, s) in self.parameters_mut().into_iter().zip(src.parameters()) {
            dst.copy_from_slice(s);
        }
        Ok(())
    }

    /// Sets every parameter to `value`.
    pub fn fill_parameters(&mut self, value: f64) {
        for p in self.parameters_mut() {
            p.iter_mut().for_each(|v| *v = value);
        }
    }
}

/// Copies parameters from `src` into `dst`.
pub fn copy_parameters(src: &QNetwork, dst: &mut QNetwork) -> Result<(), NeuralError> {
    dst.copy_parameters_from(src)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rows: &[&[f64]]) -> Tensor2D {
        Tensor2D::from_rows(rows).unwrap()
    }

    #[test]
    fn zeroed_net_outputs_zero() {
        let net = QNetwork::zeroed(NetworkArch::new(5, 9));
        let q = net.forward(&batch(&[&[1.0, -2.0, 3.0, 0.5, 7.0]])).unwrap();
        assert!(q.data().iter().all(|&v| v == 0.0));
        assert_eq!(q.cols(), 9);
    }

    fn dueling_with(value_bias: f64, adv_bias: &[f64]) -> QNetwork {
        let arch = NetworkArch::new(2, adv_bias.len())
            .with_hidden(vec![])
            .dueling(true);
        let mut net = QNetwork::zeroed(arch);
        if let Head::Dueling { value, advantage } = &mut net.head {
            let Layer::Dense(v) = value else {
                unreachable!()
            };
            v.biases = vec![value_bias];
            let Layer::Dense(a) = advantage else {
                unreachable!()
            };
            a.biases = adv_bias.to_vec();
        }
        net
    }

    #[test]
    fn dueling_aggregation_examples() {
        let x = batch(&[&[0.3, 0.4]]);
        assert_eq!(
            dueling_with(2.0, &[0.0, 0.0]).forward(&x).unwrap().row(0),
            &[2.0, 2.0]
        );
        assert_eq!(
            dueling_with(1.0, &[0.0, 1.0, 2.0])
                .forward(&x)
                .unwrap()
                .row(0),
            &[0.0, 1.0, 2.0]
        );
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let net = QNetwork::zeroed(NetworkArch::new(5, 3));
        assert!(matches!(
            net.forward(&batch(&[&[1.0, 2.0]])),
            Err(NeuralError::Shape { .. })
        ));
    }

    #[test]
    fn backward_requires_forward() {
        let mut net = QNetwork::new(NetworkArch::new(2, 2), &mut RngStream::new(0));
        let g = Tensor2D::zeros(1, 2);
        assert!(matches!(
            net.backward(&g),
            Err(NeuralError::NoCachedForward)
        ));
        net.forward_cached(&batch(&[&[1.0, 1.0]])).unwrap();
        assert!(net.backward(&Tensor2D::zeros(3, 2)).is_err());
        let grads = net.backward(&g).unwrap();
        assert_eq!(grads.max_abs(), 0.0);
        assert_eq!(grads.0.len(), net.parameters().len());
    }

    #[test]
    fn noise_ops_require_noisy_layers() {
        let mut net = QNetwork::new(NetworkArch::new(3, 2), &mut RngStream::new(0));
        assert!(matches!(net.zero_noise(), Err(NeuralError::NotNoisy)));
        assert!(matches!(
            net.resample_noise(&mut RngStream::new(1)),
            Err(NeuralError::NotNoisy)
        ));
    }

    #[test]
    fn first_hidden_layer_stays_dense() {
        let net = QNetwork::new(
            NetworkArch::new(3, 2).noisy(true).dueling(true),
            &mut RngStream::new(0),
        );
        let kinds: Vec<bool> = net.layers().map(Layer::is_noisy).collect();
        assert_eq!(kinds, vec![false, true, true, true]);
    }

    #[test]
    fn copy_is_deep_and_checked() {
        let mut rng = RngStream::new(3);
        let arch = NetworkArch::new(4, 3).dueling(true);
        let mut src = QNetwork::new(arch.clone(), &mut rng);
        let mut dst = QNetwork::new(arch, &mut rng);
        copy_parameters(&src, &mut dst).unwrap();
        let x = batch(&[&[0.1, 0.2, -0.3, 0.9]]);
        assert_eq!(src.forward(&x).unwrap(), dst.forward(&x).unwrap());
        let before = dst.forward(&x).unwrap();
        src.fill_parameters(0.25);
        assert_eq!(dst.forward(&x).unwrap(), before);

        let mut other = QNetwork::new(NetworkArch::new(4, 3).with_hidden(vec![8]), &mut rng);
        assert!(matches!(
            copy_parameters(&src, &mut other),
            Err(NeuralError::ArchitectureMismatch(_))
        ));
    }
}
