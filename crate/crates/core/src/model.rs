//! Linear and one-hidden-layer MLP classifiers with exact reverse-mode
//! gradients and Adam. The strategy losses supply `dL/dlogits`; this module
//! turns that into parameter gradients and updates.
//!
//! Everything is deterministic in (architecture, seed, data order, lr), and
//! checkpoints round-trip bit-exactly.

use std::path::Path;

use thiserror::Error;

use crate::numeric::{Matrix, PrngStream};

/// Hidden width of the default MLP, mirroring the d-500-c setup used for the
/// MNIST-family benchmarks.
pub const DEFAULT_HIDDEN: usize = 500;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(usize),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Linear,
    Mlp { hidden: usize },
}

impl Arch {
    pub fn mlp() -> Arch {
        Arch::Mlp { hidden: DEFAULT_HIDDEN }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Arch::Linear => "linear",
            Arch::Mlp { .. } => "mlp",
        }
    }
}

/// One dense layer; weights are stored input-major (`in_dim` x `out_dim`) so
/// the forward pass is a plain row-major matmul.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Matrix,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    arch: Arch,
    d: usize,
    k: usize,
    layers: Vec<Layer>,
}

/// Intermediate activations kept from a forward pass for the backward pass.
#[derive(Debug)]
pub struct ForwardCache {
    /// Hidden pre-activations (MLP only): needed for the ReLU mask.
    hidden_pre: Option<Matrix>,
    /// Hidden activations (MLP only): needed for the output-layer gradient.
    hidden_act: Option<Matrix>,
    batch: usize,
}

/// Parameter gradients, one flat tensor per entry of [`MlpModel::params`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl MlpModel {
    /// Weights drawn uniformly from [-1/sqrt(fan_in), +1/sqrt(fan_in)],
    /// biases zero. Bounded initial logits keep the exponential-family losses
    /// finite at step zero.
    pub fn init(arch: Arch, d: usize, k: usize, seed: u64) -> MlpModel {
        assert!(d >= 1 && k >= 2, "model needs d >= 1 and k >= 2");
        let mut rng = PrngStream::new(seed);
        let dims: Vec<(usize, usize)> = match arch {
            Arch::Linear => vec![(d, k)],
            Arch::Mlp { hidden } => vec![(d, hidden), (hidden, k)],
        };
        let layers = dims
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut w = Matrix::zeros(fan_in, fan_out);
                for v in w.data_mut() {
                    *v = (2.0 * rng.next_f64() - 1.0) * bound;
                }
                Layer { w, b: vec![0.0; fan_out] }
            })
            .collect();
        MlpModel { arch, d, k, layers }
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.d
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.data().len() + l.b.len()).sum()
    }

    /// Flat views over every parameter tensor, in a fixed order
    /// (layer 0 weights, layer 0 bias, layer 1 weights, ...).
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &self.layers {
            out.push(layer.w.data());
            out.push(layer.b.as_slice());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &mut self.layers {
            out.push(layer.w.data_mut());
            out.push(layer.b.as_mut_slice());
        }
        out
    }

    /// Batch forward pass: returns N x K logits plus the cache consumed by
    /// [`backward`](Self::backward).
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ForwardCache), ModelError> {
        if x.cols() != self.d {
            return Err(ModelError::ShapeMismatch(format!(
                "input width {} does not match model input dim {}",
                x.cols(),
                self.d
            )));
        }
        match self.arch {
            Arch::Linear => {
                let logits = affine(x, &self.layers[0]);
                Ok((logits, ForwardCache { hidden_pre: None, hidden_act: None, batch: x.rows() }))
            }
            Arch::Mlp { .. } => {
                let z1 = affine(x, &self.layers[0]);
                let mut h = z1.clone();
                for v in h.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                let logits = affine(&h, &self.layers[1]);
                Ok((
                    logits,
                    ForwardCache { hidden_pre: Some(z1), hidden_act: Some(h), batch: x.rows() },
                ))
            }
        }
    }

    /// Exact reverse-mode gradients for the batch that produced `cache`.
    /// `dlogits` must carry any batch-mean scaling already (the strategy
    /// losses do). The ReLU subgradient at exactly zero is zero.
    pub fn backward(
        &self,
        x: &Matrix,
        cache: &ForwardCache,
        dlogits: &Matrix,
    ) -> Result<Gradients, ModelError> {
        if dlogits.rows() != cache.batch || dlogits.cols() != self.k {
            return Err(ModelError::ShapeMismatch(format!(
                "dlogits is {}x{}, expected {}x{}",
                dlogits.rows(),
                dlogits.cols(),
                cache.batch,
                self.k
            )));
        }
        if x.rows() != cache.batch {
            return Err(ModelError::ShapeMismatch("cache does not match batch".into()));
        }
        match self.arch {
            Arch::Linear => {
                let dw = x.matmul_transpose_a(dlogits);
                let db = column_sums(dlogits);
                Ok(Gradients { tensors: vec![dw.data().to_vec(), db] })
            }
            Arch::Mlp { .. } => {
                let h = cache.hidden_act.as_ref().expect("mlp cache");
                let z1 = cache.hidden_pre.as_ref().expect("mlp cache");
                let dw2 = h.matmul_transpose_a(dlogits);
                let db2 = column_sums(dlogits);
                let mut dz1 = dlogits.matmul_transpose_b(&self.layers[1].w);
                for (g, &z) in dz1.data_mut().iter_mut().zip(z1.data()) {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                }
                let dw1 = x.matmul_transpose_a(&dz1);
                let db1 = column_sums(&dz1);
                Ok(Gradients {
                    tensors: vec![dw1.data().to_vec(), db1, dw2.data().to_vec(), db2],
                })
            }
        }
    }

    /// Argmax prediction per row, ties broken toward the lowest class index.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>, ModelError> {
        let (logits, _) = self.forward(x)?;
        Ok(argmax_rows(&logits))
    }

    /// Exact binary serialization (f64 bits are preserved).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MODEL_MAGIC);
        buf.push(match self.arch {
            Arch::Linear => 0,
            Arch::Mlp { .. } => 1,
        });
        let hidden = match self.arch {
            Arch::Linear => 0,
            Arch::Mlp { hidden } => hidden,
        };
        for v in [self.d as u64, self.k as u64, hidden as u64] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for layer in &self.layers {
            for &v in layer.w.data() {
                buf.extend_from_slice(&v.to_bits().to_le_bytes());
            }
            for &v in &layer.b {
                buf.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<MlpModel, ModelError> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(MODEL_MAGIC.len())?;
        if magic != MODEL_MAGIC {
            return Err(ModelError::Corrupt("bad model magic".into()));
        }
        let tag = r.take(1)?[0];
        let d = r.u64()? as usize;
        let k = r.u64()? as usize;
        let hidden = r.u64()? as usize;
        let arch = match tag {
            0 => Arch::Linear,
            1 => Arch::Mlp { hidden },
            other => return Err(ModelError::Corrupt(format!("unknown arch tag {other}"))),
        };
        let dims: Vec<(usize, usize)> = match arch {
            Arch::Linear => vec![(d, k)],
            Arch::Mlp { hidden } => vec![(d, hidden), (hidden, k)],
        };
        let mut layers = Vec::with_capacity(dims.len());
        for (fan_in, fan_out) in dims {
            let mut w = Matrix::zeros(fan_in, fan_out);
            for v in w.data_mut() {
                *v = r.f64()?;
            }
            let mut b = vec![0.0; fan_out];
            for v in b.iter_mut() {
                *v = r.f64()?;
            }
            layers.push(Layer { w, b });
        }
        r.expect_end()?;
        Ok(MlpModel { arch, d, k, layers })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<MlpModel, ModelError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

const MODEL_MAGIC: &[u8] = b"CLLMODL1";

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelError::Corrupt("unexpected end of data".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub(crate) fn expect_end(&self) -> Result<(), ModelError> {
        if self.pos != self.bytes.len() {
            return Err(ModelError::Corrupt("trailing bytes".into()));
        }
        Ok(())
    }

    pub(crate) fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn affine(x: &Matrix, layer: &Layer) -> Matrix {
    let mut out = x.matmul(&layer.w);
    for i in 0..out.rows() {
        for (v, &b) in out.row_mut(i).iter_mut().zip(&layer.b) {
            *v += b;
        }
    }
    out
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (s, &v) in out.iter_mut().zip(m.row(i)) {
            *s += v;
        }
    }
    out
}

/// Row-wise argmax with ties broken toward the lowest index.
pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Adam optimizer state. One (m, v) pair per parameter tensor; the tensor
/// list may extend beyond the model (the trainable transition layer of CPE-T
/// is updated by the same instance).
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(tensor_sizes: &[usize], lr: f64) -> AdamState {
        AdamState {
            m: tensor_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: tensor_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn for_model(model: &MlpModel, lr: f64) -> AdamState {
        let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
        Self::new(&sizes, lr)
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One Adam update. The step counter increments before bias correction.
    pub fn step(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &[&[f64]],
    ) -> Result<(), ModelError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "optimizer holds {} tensors, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (idx, g) in grads.iter().enumerate() {
            if g.len() != self.m[idx].len() {
                return Err(ModelError::ShapeMismatch(format!(
                    "gradient tensor {idx} has {} entries, expected {}",
                    g.len(),
                    self.m[idx].len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteGradient(idx));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..param.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_shapes_and_counts() {
        let m = MlpModel::init(Arch::Linear, 2, 3, 0);
        assert_eq!(m.param_count(), 2 * 3 + 3);
        assert!(m.layers()[0].b.iter().all(|&b| b == 0.0));

        let m = MlpModel::init(Arch::mlp(), 784, 10, 0);
        assert_eq!(m.param_count(), 784 * 500 + 500 + 500 * 10 + 10);
        assert_eq!(m.param_count(), 397_510);

        // Fan-in bound honored.
        let bound = 1.0 / (784.0_f64).sqrt();
        assert!(m.layers()[0].w.data().iter().all(|&v| v.abs() <= bound));
    }

    #[test]
    fn init_deterministic_in_seed() {
        let a = MlpModel::init(Arch::mlp(), 20, 5, 77);
        let b = MlpModel::init(Arch::mlp(), 20, 5, 77);
        assert_eq!(a, b);
        let c = MlpModel::init(Arch::mlp(), 20, 5, 78);
        assert_ne!(a, c);
    }

    #[test]
    fn linear_identity_forward() {
        let mut m = MlpModel::init(Arch::Linear, 3, 3, 0);
        for v in m.layers[0].w.data_mut() {
            *v = 0.0;
        }
        for i in 0..3 {
            m.layers[0].w[(i, i)] = 1.0;
        }
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let (logits, _) = m.forward(&x).unwrap();
        assert_eq!(logits.row(0), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn mlp_zero_first_layer_gives_constant_logits() {
        let mut m = MlpModel::init(Arch::Mlp { hidden: 7 }, 4, 3, 1);
        for v in m.layers[0].w.data_mut() {
            *v = 0.0;
        }
        m.layers[1].b = vec![0.5, -0.25, 0.125];
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.0, 4.0], vec![0.0; 4]]).unwrap();
        let (logits, _) = m.forward(&x).unwrap();
        for i in 0..2 {
            assert_eq!(logits.row(i), &[0.5, -0.25, 0.125]);
        }
    }

    #[test]
    fn batch_shape_and_mismatch() {
        let m = MlpModel::init(Arch::mlp(), 6, 4, 0);
        let x = Matrix::zeros(9, 6);
        let (logits, _) = m.forward(&x).unwrap();
        assert_eq!((logits.rows(), logits.cols()), (9, 4));
        assert!(m.forward(&Matrix::zeros(2, 5)).is_err());
    }

    #[test]
    fn linear_backward_closed_form() {
        // Single sample: dL/dW = x (outer) dL/dlogits, dL/db = dL/dlogits.
        let m = MlpModel::init(Arch::Linear, 2, 3, 9);
        let x = Matrix::from_rows(&[vec![0.5, -1.5]]).unwrap();
        let (_, cache) = m.forward(&x).unwrap();
        let dl = Matrix::from_rows(&[vec![0.1, -0.2, 0.3]]).unwrap();
        let grads = m.backward(&x, &cache, &dl).unwrap();
        let dw = &grads.tensors[0];
        for i in 0..2 {
            for j in 0..3 {
                let expect = x.row(0)[i] * dl.row(0)[j];
                assert!((dw[i * 3 + j] - expect).abs() < 1e-15);
            }
        }
        assert_eq!(grads.tensors[1], vec![0.1, -0.2, 0.3]);
    }

    #[test]
    fn zero_dlogits_zero_grads() {
        let m = MlpModel::init(Arch::Mlp { hidden: 5 }, 3, 4, 2);
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let (_, cache) = m.forward(&x).unwrap();
        let grads = m.backward(&x, &cache, &Matrix::zeros(1, 4)).unwrap();
        for t in &grads.tensors {
            assert!(t.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn backward_matches_finite_differences_on_quadratic() {
        // L = sum(logits^2)/2 has dL/dlogits = logits; checks the chain
        // through ReLU and both layers without involving any strategy.
        let arch = Arch::Mlp { hidden: 6 };
        let model = MlpModel::init(arch, 4, 3, 5);
        let x = Matrix::from_rows(&[
            vec![0.2, -0.4, 0.6, 1.0],
            vec![-0.3, 0.5, -0.7, 0.1],
        ])
        .unwrap();
        let loss = |m: &MlpModel| -> f64 {
            let (logits, _) = m.forward(&x).unwrap();
            logits.data().iter().map(|v| v * v).sum::<f64>() / 2.0
        };
        let (logits, cache) = model.forward(&x).unwrap();
        let grads = model.backward(&x, &cache, &logits).unwrap();

        let eps = 1e-6;
        let flat_grads: Vec<f64> = grads.tensors.concat();
        let mut idx = 0;
        for tensor in 0..4 {
            let len = model.params()[tensor].len();
            for i in 0..len {
                let mut plus = model.clone();
                plus.params_mut()[tensor][i] += eps;
                let mut minus = model.clone();
                minus.params_mut()[tensor][i] -= eps;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                let an = flat_grads[idx];
                let denom = fd.abs().max(an.abs()).max(1e-8);
                assert!(
                    ((fd - an) / denom).abs() < 1e-5,
                    "tensor {tensor} index {i}: fd {fd} vs analytic {an}"
                );
                idx += 1;
            }
        }
    }

    #[test]
    fn adam_hand_values() {
        // theta=0, g=1, lr=1e-3, first step: m_hat = v_hat = 1, so the update
        // is -lr / (1 + eps).
        let mut theta = [0.0_f64];
        let mut state = AdamState::new(&[1], 1e-3);
        let g = [1.0_f64];
        state.step(&mut [&mut theta], &[&g]).unwrap();
        assert!((theta[0] + 1e-3).abs() < 1e-9);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_zero_gradient_is_noop_and_nonfinite_rejected() {
        let mut theta = [0.5_f64, -0.5];
        let mut state = AdamState::new(&[2], 1e-2);
        let g = [0.0_f64, 0.0];
        state.step(&mut [&mut theta], &[&g]).unwrap();
        assert_eq!(theta, [0.5, -0.5]);

        let bad = [f64::NAN, 0.0];
        assert!(matches!(
            state.step(&mut [&mut theta], &[&bad]),
            Err(ModelError::NonFiniteGradient(0))
        ));
    }

    #[test]
    fn adam_trajectory_deterministic() {
        let run = || {
            let mut model = MlpModel::init(Arch::Mlp { hidden: 8 }, 3, 4, 42);
            let mut state = AdamState::for_model(&model, 1e-3);
            let x = Matrix::from_rows(&[vec![0.1, 0.2, 0.3], vec![-0.1, 0.0, 0.4]]).unwrap();
            for _ in 0..100 {
                let (logits, cache) = model.forward(&x).unwrap();
                let grads = model.backward(&x, &cache, &logits).unwrap();
                let refs: Vec<&[f64]> = grads.tensors.iter().map(|t| t.as_slice()).collect();
                let mut params = model.params_mut();
                state.step(&mut params, &refs).unwrap();
            }
            model
        };
        let a = run();
        let b = run();
        let bits = |m: &MlpModel| -> Vec<u64> {
            m.params().concat().iter().map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn predict_tie_break_and_shift_invariance() {
        let logits = Matrix::from_rows(&[
            vec![0.1, 0.9, 0.3],
            vec![0.5, 0.5, 0.1],
            vec![-1.0, -1.0, -1.0],
        ])
        .unwrap();
        assert_eq!(argmax_rows(&logits), vec![1, 0, 0]);

        let mut shifted = logits.clone();
        for i in 0..shifted.rows() {
            for v in shifted.row_mut(i) {
                *v += 123.25;
            }
        }
        assert_eq!(argmax_rows(&shifted), argmax_rows(&logits));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let model = MlpModel::init(Arch::Mlp { hidden: 13 }, 9, 5, 31);
        let bytes = model.to_bytes();
        let restored = MlpModel::from_bytes(&bytes).unwrap();
        let a: Vec<u64> = model.params().concat().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = restored.params().concat().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(restored.arch(), model.arch());

        assert!(MlpModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut garbled = bytes.clone();
        garbled[0] = b'X';
        assert!(MlpModel::from_bytes(&garbled).is_err());
    }
}
