//! Shallow fully-connected encoder with batch normalization and Adam.
//!
//! Hidden layers are `dense → batch norm → ReLU`; the output layer is a plain
//! dense map producing the embedding. Weights are stored `fan_in × fan_out`
//! so a batch propagates as `X · W + b`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, shape, Error, Result};
use crate::scalar::Scalar;

/// Magic bytes opening a saved model.
pub const MODEL_MAGIC: &[u8; 8] = b"LETSNEM1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
    pub batch_norm: bool,
}

/// Architecture descriptor, also the JSON header of saved models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub layers: Vec<LayerSpec>,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Architecture {
    /// `input → hidden… → output`, ReLU and batch norm on hidden layers.
    pub fn mlp(input_dim: usize, hidden: &[usize], output_dim: usize) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(param("layer widths must be at least 1"));
        }
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| LayerSpec {
                fan_in: w[0],
                fan_out: w[1],
                activation: if l == last { Activation::Identity } else { Activation::Relu },
                batch_norm: l != last,
            })
            .collect();
        Ok(Self {
            layers,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
        })
    }

    fn validate(&self) -> Result<()> {
        let (first, last) = match (self.layers.first(), self.layers.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(param("architecture has no layers")),
        };
        if first.fan_in == 0 {
            return Err(param("input width must be at least 1"));
        }
        for pair in self.layers.windows(2) {
            if pair[0].fan_out != pair[1].fan_in {
                return Err(shape(format!(
                    "layer widths do not chain: {} -> {}",
                    pair[0].fan_out, pair[1].fan_in
                )));
            }
        }
        if last.activation != Activation::Identity || last.batch_norm {
            return Err(param("output layer must be linear without batch norm"));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || !(self.bn_eps > 0.0) {
            return Err(param("batch-norm momentum must be in [0,1) and eps positive"));
        }
        Ok(())
    }

    /// Trainable scalar count (weights, biases, batch-norm scale and shift).
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.fan_in * l.fan_out + l.fan_out + if l.batch_norm { 2 * l.fan_out } else { 0 })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub spec: LayerSpec,
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub bn: Option<BatchNorm<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

/// The encoder `Y = f(X, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    arch: Architecture,
    layers: Vec<Dense<T>>,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    input: Array2<T>,
    bn: Option<BnCache<T>>,
    /// Input to the activation function.
    pre_act: Array2<T>,
}

/// Intermediates of a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    layers: Vec<LayerCache<T>>,
    batch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub gamma: Option<Array1<T>>,
    pub beta: Option<Array1<T>>,
}

/// Gradients shaped like the model's trainables.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrads<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Flattened in the same order as [`MlpModel::parameters`].
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
            if let (Some(g), Some(b)) = (&l.gamma, &l.beta) {
                out.extend(g.iter().copied());
                out.extend(b.iter().copied());
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

impl<T: Scalar> MlpModel<T> {
    /// He-uniform weights (`U(±√(6/fan_in))`), zero biases, identity batch
    /// norm with running statistics `(0, 1)`.
    pub fn init(input_dim: usize, hidden: &[usize], output_dim: usize, seed: u64) -> Result<Self> {
        Self::from_architecture(Architecture::mlp(input_dim, hidden, output_dim)?, seed)
    }

    pub fn from_architecture(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .layers
            .iter()
            .map(|&spec| {
                let limit = (6.0 / spec.fan_in as f64).sqrt();
                let weight = Array2::from_shape_simple_fn((spec.fan_in, spec.fan_out), || {
                    T::lit(rng.gen_range(-limit..limit))
                });
                Dense {
                    spec,
                    weight,
                    bias: Array1::zeros(spec.fan_out),
                    bn: spec.batch_norm.then(|| BatchNorm {
                        gamma: Array1::ones(spec.fan_out),
                        beta: Array1::zeros(spec.fan_out),
                        running_mean: Array1::zeros(spec.fan_out),
                        running_var: Array1::ones(spec.fan_out),
                    }),
                }
            })
            .collect();
        Ok(Self { arch, layers })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.arch.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.arch.layers.last().map(|l| l.fan_out).unwrap_or(0)
    }

    pub fn parameter_count(&self) -> usize {
        self.arch.parameter_count()
    }

    /// Trainables flattened layer by layer: weight (row-major), bias, then
    /// batch-norm scale and shift when present.
    pub fn parameters(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
            if let Some(bn) = &l.bn {
                out.extend(bn.gamma.iter().copied());
                out.extend(bn.beta.iter().copied());
            }
        }
        out
    }

    pub fn set_parameters(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.parameter_count()
            )));
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|w| *w = it.next().unwrap());
            if let Some(bn) = &mut l.bn {
                bn.gamma.iter_mut().for_each(|w| *w = it.next().unwrap());
                bn.beta.iter_mut().for_each(|w| *w = it.next().unwrap());
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.nrows() == 0 {
            return Err(shape("empty batch"));
        }
        if x.ncols() != self.input_dim() {
            return Err(shape(format!(
                "batch has {} features, model expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Inference-mode projection using running batch-norm statistics. Pure.
    pub fn predict(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(&x)?;
        let eps = T::lit(self.arch.bn_eps);
        let mut h = x.to_owned();
        for l in &self.layers {
            let mut z = h.dot(&l.weight) + &l.bias;
            if let Some(bn) = &l.bn {
                let inv_std = bn.running_var.mapv(|v| T::one() / (v + eps).sqrt());
                z = (z - &bn.running_mean) * &inv_std * &bn.gamma + &bn.beta;
            }
            if l.spec.activation == Activation::Relu {
                z.mapv_inplace(|v| v.max(T::zero()));
            }
            h = z;
        }
        Ok(h)
    }

    /// Train-mode pass: batch statistics are used and folded into the running
    /// estimates; the returned cache feeds [`MlpModel::backward`].
    pub fn forward_train(&mut self, x: ArrayView2<T>) -> Result<(Array2<T>, ForwardCache<T>)> {
        self.check_input(&x)?;
        let m = x.nrows();
        if m < 2 {
            return Err(shape("train-mode forward needs a batch of at least 2 samples"));
        }
        let eps = T::lit(self.arch.bn_eps);
        let mom = T::lit(self.arch.bn_momentum);
        let mf = T::from_count(m);
        let mut h = x.to_owned();
        let mut caches = Vec::with_capacity(self.layers.len());
        for l in &mut self.layers {
            let input = h;
            let mut z = input.dot(&l.weight) + &l.bias;
            let bn_cache = if let Some(bn) = &mut l.bn {
                let mean = z.sum_axis(Axis(0)) / mf;
                let centered = &z - &mean;
                let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / mf;
                let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
                let xhat = centered * &inv_std;
                z = &xhat * &bn.gamma + &bn.beta;
                bn.running_mean = &bn.running_mean * mom + &mean * (T::one() - mom);
                bn.running_var = &bn.running_var * mom + &var * (T::one() - mom);
                Some(BnCache { xhat, inv_std })
            } else {
                None
            };
            let pre_act = z.clone();
            if l.spec.activation == Activation::Relu {
                z.mapv_inplace(|v| v.max(T::zero()));
            }
            caches.push(LayerCache {
                input,
                bn: bn_cache,
                pre_act,
            });
            h = z;
        }
        Ok((h, ForwardCache { layers: caches, batch: m }))
    }

    /// Dispatches on `mode`; inference mode returns no cache.
    pub fn forward(&mut self, x: ArrayView2<T>, mode: Mode) -> Result<(Array2<T>, Option<ForwardCache<T>>)> {
        match mode {
            Mode::Train => self.forward_train(x).map(|(y, c)| (y, Some(c))),
            Mode::Inference => self.predict(x).map(|y| (y, None)),
        }
    }

    /// Exact gradients of a scalar loss given `dL/dY` for the cached batch,
    /// including the batch-statistic terms of batch norm.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_out: ArrayView2<T>) -> Result<Gradients<T>> {
        if cache.layers.len() != self.layers.len()
            || grad_out.nrows() != cache.batch
            || grad_out.ncols() != self.output_dim()
        {
            return Err(shape("gradient does not match the cached forward pass"));
        }
        let mf = T::from_count(cache.batch);
        let mut upstream = grad_out.to_owned();
        let mut grads = Vec::with_capacity(self.layers.len());
        for (l, c) in self.layers.iter().zip(&cache.layers).rev() {
            if c.input.ncols() != l.spec.fan_in || c.pre_act.ncols() != l.spec.fan_out {
                return Err(shape("stale forward cache"));
            }
            let mut da = upstream;
            if l.spec.activation == Activation::Relu {
                da.zip_mut_with(&c.pre_act, |g, &a| {
                    if a <= T::zero() {
                        *g = T::zero();
                    }
                });
            }
            let (dz, gamma, beta) = match (&l.bn, &c.bn) {
                (Some(bn), Some(bc)) => {
                    let dgamma = (&da * &bc.xhat).sum_axis(Axis(0));
                    let dbeta = da.sum_axis(Axis(0));
                    let dxhat = &da * &bn.gamma;
                    let sum_dxhat = dxhat.sum_axis(Axis(0));
                    let sum_dxhat_xhat = (&dxhat * &bc.xhat).sum_axis(Axis(0));
                    let dz = (dxhat * mf - &sum_dxhat - &bc.xhat * &sum_dxhat_xhat) * &bc.inv_std / mf;
                    (dz, Some(dgamma), Some(dbeta))
                }
                (None, None) => (da, None, None),
                _ => return Err(shape("stale forward cache")),
            };
            let weight = c.input.t().dot(&dz);
            let bias = dz.sum_axis(Axis(0));
            upstream = dz.dot(&l.weight.t());
            grads.push(LayerGrads {
                weight,
                bias,
                gamma,
                beta,
            });
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    /// Writes the architecture JSON line followed by little-endian f64 blocks:
    /// per layer weight, bias, then scale, shift, running mean and running
    /// variance for batch-norm layers.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path.as_ref())?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        serde_json::to_writer(&mut *w, &self.arch)?;
        w.write_all(b"\n")?;
        for v in self.state_values() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
        Ok(())
    }

    fn state_values(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
            if let Some(bn) = &l.bn {
                for a in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
                    out.extend(a.iter().copied());
                }
            }
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path.as_ref())?))
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("truncated model file".into()))?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Format("not a model file".into()));
        }
        let mut line = Vec::new();
        r.read_until(b'\n', &mut line)?;
        let arch: Architecture = serde_json::from_slice(line.strip_suffix(b"\n").unwrap_or(&line))
            .map_err(|e| Error::Format(format!("bad architecture header: {e}")))?;
        let mut model = Self::from_architecture(arch, 0)?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let expected = model.state_values().len();
        if bytes.len() != expected * 8 {
            return Err(Error::Format(format!(
                "parameter payload has {} bytes, expected {}",
                bytes.len(),
                expected * 8
            )));
        }
        let mut it = bytes
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())));
        for l in &mut model.layers {
            l.weight.iter_mut().for_each(|v| *v = it.next().unwrap());
            l.bias.iter_mut().for_each(|v| *v = it.next().unwrap());
            if let Some(bn) = &mut l.bn {
                for a in [&mut bn.gamma, &mut bn.beta, &mut bn.running_mean, &mut bn.running_var] {
                    a.iter_mut().for_each(|v| *v = it.next().unwrap());
                }
                if bn.running_var.iter().any(|&v| !(v > T::zero())) {
                    return Err(Error::Format("running variance must be positive".into()));
                }
            }
        }
        Ok(model)
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment estimates live here, not in the model.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    first: Vec<T>,
    second: Vec<T>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, parameter_count: usize) -> Self {
        Self {
            config,
            first: vec![T::zero(); parameter_count],
            second: vec![T::zero(); parameter_count],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. A non-finite gradient aborts without touching the model.
    pub fn step(&mut self, model: &mut MlpModel<T>, grads: &Gradients<T>) -> Result<()> {
        let g = grads.flatten();
        if g.len() != self.first.len() {
            return Err(shape("gradient length differs from optimizer state"));
        }
        if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Training(format!("non-finite gradient at parameter {pos}")));
        }
        self.step += 1;
        let mut params = model.parameters();
        adam_update(&mut params, &g, &mut self.first, &mut self.second, &self.config, self.step)?;
        model.set_parameters(&params)
    }
}

/// In-place Adam update of flat parameters for step number `step` (1-based).
pub fn adam_update<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    first: &mut [T],
    second: &mut [T],
    cfg: &AdamConfig,
    step: u64,
) -> Result<()> {
    if step < 1 {
        return Err(param("Adam step count starts at 1"));
    }
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let lr = T::lit(cfg.lr);
    let eps = T::lit(cfg.eps);
    let c1 = T::one() - T::lit(cfg.beta1.powf(step as f64));
    let c2 = T::one() - T::lit(cfg.beta2.powf(step as f64));
    for i in 0..params.len() {
        let g = grads[i];
        first[i] = b1 * first[i] + (T::one() - b1) * g;
        second[i] = b2 * second[i] + (T::one() - b2) * g * g;
        let mhat = first[i] / c1;
        let vhat = second[i] / c2;
        params[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn default_architecture_parameter_count() {
        let m = MlpModel::<f64>::init(10, &[256, 64], 2, 3).unwrap();
        assert_eq!(m.layers().len(), 3);
        // 10·256+256 + 256·64+64 + 64·2+2 + 2·(256+64)
        assert_eq!(m.parameter_count(), 20_034);
        assert_eq!(m.parameters().len(), 20_034);
    }

    #[test]
    fn linear_encoder_and_determinism() {
        let m = MlpModel::<f64>::init(4, &[], 3, 9).unwrap();
        assert_eq!(m.layers().len(), 1);
        assert!(m.layers()[0].bn.is_none());
        assert_eq!(m, MlpModel::<f64>::init(4, &[], 3, 9).unwrap());
        assert_ne!(m, MlpModel::<f64>::init(4, &[], 3, 10).unwrap());
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut m = MlpModel::<f64>::init(2, &[], 2, 0).unwrap();
        m.layers_mut()[0].weight = Array2::eye(2);
        let x = array![[1.0, -2.0], [0.5, 3.0]];
        assert_eq!(m.predict(x.view()).unwrap(), x);
        let (y, _) = m.forward_train(x.view()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn batch_norm_standardizes_in_train_mode() {
        let mut m = MlpModel::<f64>::init(3, &[4], 1, 1).unwrap();
        let x = array![[1.0, 2.0, 0.0], [3.0, -1.0, 2.0], [0.0, 0.0, 1.0], [5.0, 1.0, -2.0]];
        let (_, cache) = m.forward_train(x.view()).unwrap();
        let pre = &cache.layers[0].pre_act;
        for col in pre.columns() {
            let mean = col.mean().unwrap();
            let var = col.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
        assert!(m.forward_train(x.slice(ndarray::s![0..1, ..])).is_err());
    }

    #[test]
    fn running_stats_converge_to_batch_stats() {
        let mut m = MlpModel::<f64>::init(3, &[5, 4], 2, 2).unwrap();
        let x = array![[1.0, 2.0, 0.0], [3.0, -1.0, 2.0], [0.0, 0.0, 1.0], [5.0, 1.0, -2.0], [2.0, 2.0, 2.0]];
        let mut last = None;
        for _ in 0..300 {
            last = Some(m.forward_train(x.view()).unwrap().0);
        }
        let infer = m.predict(x.view()).unwrap();
        let diff = (&infer - &last.unwrap()).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(diff < 1e-3, "max diff {diff}");
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut m = MlpModel::<f64>::init(3, &[4], 2, 5).unwrap();
        let x = array![[1.0, 2.0, 0.0], [3.0, -1.0, 2.0], [0.0, 0.5, 1.0]];
        let (y, c) = m.forward_train(x.view()).unwrap();
        let g = m.backward(&c, Array2::zeros(y.raw_dim()).view()).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
        assert!(m.backward(&c, Array2::zeros((2, 2)).view()).is_err());
    }

    #[test]
    fn half_squared_norm_gradient_of_linear_layer() {
        let mut m = MlpModel::<f64>::init(3, &[], 2, 4).unwrap();
        let x = array![[1.0, 2.0, 0.0], [3.0, -1.0, 2.0], [0.0, 0.5, 1.0], [1.0, 1.0, 1.0]];
        let (y, c) = m.forward_train(x.view()).unwrap();
        // L = ½‖Y‖² ⇒ dL/dY = Y, dW = XᵀY, db = Σ_rows Y
        let g = m.backward(&c, y.view()).unwrap();
        let dw = x.t().dot(&y);
        let db = y.sum_axis(Axis(0));
        for (a, b) in g.layers[0].weight.iter().zip(dw.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        for (a, b) in g.layers[0].bias.iter().zip(db.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn adam_edge_cases() {
        let mut m = MlpModel::<f64>::init(3, &[4], 2, 5).unwrap();
        let before = m.parameters();
        let zero = Gradients {
            layers: m
                .layers()
                .iter()
                .map(|l| LayerGrads {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                    gamma: l.bn.as_ref().map(|b| Array1::zeros(b.gamma.len())),
                    beta: l.bn.as_ref().map(|b| Array1::zeros(b.beta.len())),
                })
                .collect(),
        };
        let mut opt = Adam::new(AdamConfig::default(), m.parameter_count());
        opt.step(&mut m, &zero).unwrap();
        assert_eq!(m.parameters(), before);

        let mut bad = zero.clone();
        bad.layers[0].bias[0] = f64::NAN;
        assert!(matches!(opt.step(&mut m, &bad), Err(Error::Training(_))));
        assert_eq!(m.parameters(), before);

        let mut params = vec![1.0, -2.0];
        let (mut f, mut s) = (vec![0.0; 2], vec![0.0; 2]);
        let cfg = AdamConfig { lr: 0.0, ..AdamConfig::default() };
        adam_update(&mut params, &[3.0, 4.0], &mut f, &mut s, &cfg, 1).unwrap();
        assert_eq!(params, vec![1.0, -2.0]);
        assert!(adam_update(&mut params, &[3.0, 4.0], &mut f, &mut s, &cfg, 0).is_err());
    }

    #[test]
    fn adam_constant_gradient_steps_at_lr() {
        let cfg = AdamConfig::default();
        let mut p = vec![0.0];
        let (mut f, mut s) = (vec![0.0], vec![0.0]);
        let mut prev = 0.0;
        for t in 1..=5000 {
            adam_update(&mut p, &[0.37], &mut f, &mut s, &cfg, t).unwrap();
            if t == 5000 {
                assert_abs_diff_eq!(prev - p[0], cfg.lr, epsilon = 1e-8);
            }
            prev = p[0];
        }
    }

    #[test]
    fn save_load_is_bit_exact() {
        let mut m = MlpModel::<f64>::init(3, &[4, 3], 2, 8).unwrap();
        let x = array![[1.0, 2.0, 0.0], [3.0, -1.0, 2.0], [0.0, 0.5, 1.0]];
        m.forward_train(x.view()).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = MlpModel::<f64>::read_from(&buf[..]).unwrap();
        assert_eq!(back, m);
        assert!(MlpModel::<f64>::read_from(&buf[..buf.len() - 1]).is_err());
    }
}
