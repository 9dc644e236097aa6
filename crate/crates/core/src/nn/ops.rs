//! Dense, normalization, activation, pooling and dropout operators with
//! their backward passes.

use rand::Rng;

use super::gemm::{gemm, View};
use super::{Matrix, Tensor4};
use crate::error::{Error, Result};
use crate::seed::rng_from;

/// `y = x·w + b` with `x: [batch, in]`, `w: [in, out]`.
pub fn dense(x: &Matrix, w: &Matrix, b: Option<&[f64]>) -> Result<Matrix> {
    if x.cols() != w.rows() {
        return Err(Error::shape(format!(
            "dense: input width {} does not match weights {}x{}",
            x.cols(),
            w.rows(),
            w.cols()
        )));
    }
    if let Some(b) = b {
        if b.len() != w.cols() {
            return Err(Error::shape(format!(
                "dense: bias has {} entries, expected {}",
                b.len(),
                w.cols()
            )));
        }
    }
    let (m, k, n) = (x.rows(), x.cols(), w.cols());
    let mut y = Matrix::zeros(m, n);
    if let Some(b) = b {
        for r in 0..m {
            y.data_mut()[r * n..(r + 1) * n].copy_from_slice(b);
        }
    }
    let beta = if b.is_some() { 1.0 } else { 0.0 };
    gemm(m, k, n, 1.0, View::rm(x.data(), k), View::rm(w.data(), n), beta, y.data_mut());
    Ok(y)
}

#[derive(Clone, Debug)]
pub struct DenseGrads {
    pub dx: Matrix,
    pub dw: Matrix,
    pub db: Vec<f64>,
}

pub fn dense_backward(x: &Matrix, w: &Matrix, dy: &Matrix) -> Result<DenseGrads> {
    if dy.rows() != x.rows() || dy.cols() != w.cols() || x.cols() != w.rows() {
        return Err(Error::shape("dense backward: shape mismatch"));
    }
    let (m, k, n) = (x.rows(), x.cols(), w.cols());
    let mut dx = Matrix::zeros(m, k);
    let mut dw = Matrix::zeros(k, n);
    gemm(m, n, k, 1.0, View::rm(dy.data(), n), View::rm_t(w.data(), n), 0.0, dx.data_mut());
    gemm(k, m, n, 1.0, View::rm_t(x.data(), k), View::rm(dy.data(), n), 0.0, dw.data_mut());
    let mut db = vec![0.0; n];
    for r in 0..m {
        for (acc, v) in db.iter_mut().zip(dy.row(r)) {
            *acc += v;
        }
    }
    Ok(DenseGrads { dx, dw, db })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const BN_EPS: f64 = 1e-5;

/// Intermediate values kept by a training-mode batch norm for its backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    xhat: Tensor4,
    inv_std: Vec<f64>,
    mode: Mode,
}

/// Batch statistics of a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    pub count: usize,
}

/// Per-channel normalization followed by `gamma·x̂ + beta`. In train mode
/// statistics come from the batch (returned for the running-average update);
/// in eval mode from `running`.
pub fn batchnorm2d(
    x: &Tensor4,
    gamma: &[f64],
    beta: &[f64],
    mode: Mode,
    running: (&[f64], &[f64]),
) -> Result<(Tensor4, BatchNormCache, Option<BatchStats>)> {
    let ch = x.channels();
    if gamma.len() != ch || beta.len() != ch || running.0.len() != ch || running.1.len() != ch {
        return Err(Error::shape(format!("batchnorm2d: expected {ch} channel parameters")));
    }
    if mode == Mode::Train && x.batch() < 2 {
        return Err(Error::validation("batchnorm2d: training mode needs a batch of at least 2"));
    }
    let plane = x.height() * x.width();
    let count = x.batch() * plane;
    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0; ch];
            let mut var = vec![0.0; ch];
            for n in 0..x.batch() {
                let item = x.item(n);
                for c in 0..ch {
                    mean[c] += item[c * plane..(c + 1) * plane].iter().sum::<f64>();
                }
            }
            for m in &mut mean {
                *m /= count as f64;
            }
            for n in 0..x.batch() {
                let item = x.item(n);
                for c in 0..ch {
                    var[c] += item[c * plane..(c + 1) * plane]
                        .iter()
                        .map(|v| (v - mean[c]) * (v - mean[c]))
                        .sum::<f64>();
                }
            }
            for v in &mut var {
                *v /= count as f64;
            }
            (mean, var)
        }
        Mode::Eval => (running.0.to_vec(), running.1.to_vec()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = Tensor4::zeros(x.shape());
    let mut y = Tensor4::zeros(x.shape());
    for n in 0..x.batch() {
        let src = x.item(n);
        let xh = xhat.item_mut(n);
        for c in 0..ch {
            for i in c * plane..(c + 1) * plane {
                xh[i] = (src[i] - mean[c]) * inv_std[c];
            }
        }
        let xh = xhat.item(n).to_vec();
        let dst = y.item_mut(n);
        for c in 0..ch {
            for i in c * plane..(c + 1) * plane {
                dst[i] = gamma[c] * xh[i] + beta[c];
            }
        }
    }
    let stats = (mode == Mode::Train).then_some(BatchStats { mean, var, count });
    Ok((y, BatchNormCache { xhat, inv_std, mode }, stats))
}

pub struct BatchNormGrads {
    pub dx: Tensor4,
    pub dgamma: Vec<f64>,
    pub dbeta: Vec<f64>,
}

pub fn batchnorm2d_backward(cache: &BatchNormCache, gamma: &[f64], dy: &Tensor4) -> Result<BatchNormGrads> {
    if dy.shape() != cache.xhat.shape() {
        return Err(Error::shape("batchnorm2d backward: shape mismatch"));
    }
    let ch = dy.channels();
    let plane = dy.height() * dy.width();
    let count = (dy.batch() * plane) as f64;
    let mut dgamma = vec![0.0; ch];
    let mut dbeta = vec![0.0; ch];
    for n in 0..dy.batch() {
        let g = dy.item(n);
        let xh = cache.xhat.item(n);
        for c in 0..ch {
            for i in c * plane..(c + 1) * plane {
                dgamma[c] += g[i] * xh[i];
                dbeta[c] += g[i];
            }
        }
    }
    let mut dx = Tensor4::zeros(dy.shape());
    for n in 0..dy.batch() {
        let g = dy.item(n);
        let xh = cache.xhat.item(n);
        let out = dx.item_mut(n);
        for c in 0..ch {
            let scale = gamma[c] * cache.inv_std[c];
            for i in c * plane..(c + 1) * plane {
                out[i] = match cache.mode {
                    Mode::Train => {
                        scale * (g[i] - dbeta[c] / count - xh[i] * dgamma[c] / count)
                    }
                    Mode::Eval => scale * g[i],
                };
            }
        }
    }
    Ok(BatchNormGrads { dx, dgamma, dbeta })
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn leaky_relu(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        alpha * x
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => relu(x),
            Activation::LeakyRelu(a) => leaky_relu(x, a),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(a) => {
                if x > 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn forward(self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| self.apply(v)).collect()
    }

    pub fn backward(self, x: &[f64], y: &[f64], dy: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(y)
            .zip(dy)
            .map(|((&xi, &yi), &g)| g * self.derivative(xi, yi))
            .collect()
    }
}

/// 2×2 max pooling with stride 2. Returns the output and, for every output
/// element, the flat input index of its maximum (first index on ties).
pub fn maxpool2d(x: &Tensor4) -> Result<(Tensor4, Vec<usize>)> {
    if x.height() % 2 != 0 || x.width() % 2 != 0 {
        return Err(Error::shape(format!(
            "maxpool2d: spatial dims {}x{} are not divisible by 2",
            x.height(),
            x.width()
        )));
    }
    let (oh, ow) = (x.height() / 2, x.width() / 2);
    let mut y = Tensor4::zeros([x.batch(), x.channels(), oh, ow]);
    let mut arg = Vec::with_capacity(y.len());
    let w = x.width();
    let data = x.data();
    let mut o = 0;
    for n in 0..x.batch() {
        for c in 0..x.channels() {
            let base = (n * x.channels() + c) * x.height() * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let candidates = [
                        base + 2 * oy * w + 2 * ox,
                        base + 2 * oy * w + 2 * ox + 1,
                        base + (2 * oy + 1) * w + 2 * ox,
                        base + (2 * oy + 1) * w + 2 * ox + 1,
                    ];
                    let mut best = candidates[0];
                    for &idx in &candidates[1..] {
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                    y.data_mut()[o] = data[best];
                    arg.push(best);
                    o += 1;
                }
            }
        }
    }
    Ok((y, arg))
}

pub fn maxpool2d_backward(input_shape: [usize; 4], argmax: &[usize], dy: &Tensor4) -> Result<Tensor4> {
    if argmax.len() != dy.len() {
        return Err(Error::shape("maxpool2d backward: index/gradient length mismatch"));
    }
    let mut dx = Tensor4::zeros(input_shape);
    for (&idx, &g) in argmax.iter().zip(dy.data()) {
        dx.data_mut()[idx] += g;
    }
    Ok(dx)
}

/// Inverted dropout. Returns the output and the multiplicative mask (zero or
/// `1/(1−rate)`); eval mode and `rate == 0` are the identity with no mask.
pub fn dropout(x: &[f64], rate: f64, mode: Mode, seed: u64) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::validation(format!("dropout rate must be in [0,1), got {rate}")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.to_vec(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let mut rng = rng_from(seed);
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let y = x.iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok((y, Some(mask)))
}

pub fn dropout_backward(mask: Option<&[f64]>, dy: &[f64]) -> Vec<f64> {
    match mask {
        Some(m) => dy.iter().zip(m).map(|(g, k)| g * k).collect(),
        None => dy.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_values() {
        assert_eq!(relu(-1.0), 0.0);
        assert_eq!(relu(2.0), 2.0);
        assert_eq!(leaky_relu(-1.0, 0.2), -0.2);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!(sigmoid(30.0) < 1.0 && sigmoid(-30.0) > 0.0);
    }

    #[test]
    fn dense_identity() {
        let x = Matrix::from_fn(2, 3, |r, c| (r * 3 + c) as f64);
        let w = Matrix::from_fn(3, 3, |r, c| if r == c { 1.0 } else { 0.0 });
        assert_eq!(dense(&x, &w, Some(&[0.0; 3])).unwrap(), x);
        assert!(dense(&x, &Matrix::zeros(2, 3), None).is_err());
    }

    #[test]
    fn batchnorm_standardized_input_unchanged() {
        // two items, one channel: values symmetric with unit population variance
        let x = Tensor4::new([2, 1, 1, 2], vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let (y, _, stats) = batchnorm2d(&x, &[1.0], &[0.0], Mode::Train, (&[0.0], &[1.0])).unwrap();
        assert!(stats.is_some());
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn batchnorm_constant_channel_maps_to_beta() {
        let x = Tensor4::filled([3, 1, 2, 2], 4.2);
        let (y, _, _) = batchnorm2d(&x, &[2.0], &[0.3], Mode::Train, (&[0.0], &[1.0])).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn batchnorm_output_moments() {
        let x = Tensor4::from_fn([4, 2, 3, 3], |[n, c, y, x]| ((n * 13 + c * 5 + y * 3 + x) as f64).sin() * 3.0 + 1.0);
        let (gamma, beta) = ([1.5, 0.5], [0.2, -0.7]);
        let (y, _, _) = batchnorm2d(&x, &gamma, &beta, Mode::Train, (&[0.0; 2], &[1.0; 2])).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|n| y.item(n)[c * 9..(c + 1) * 9].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert!((mean - beta[c]).abs() < 1e-5);
            assert!((var - gamma[c] * gamma[c]).abs() < 1e-5 * gamma[c] * gamma[c] * 10.0);
        }
    }

    #[test]
    fn batchnorm_train_needs_two_items() {
        let x = Tensor4::zeros([1, 1, 4, 4]);
        assert!(batchnorm2d(&x, &[1.0], &[0.0], Mode::Train, (&[0.0], &[1.0])).is_err());
        assert!(batchnorm2d(&x, &[1.0], &[0.0], Mode::Eval, (&[0.0], &[1.0])).is_ok());
    }

    #[test]
    fn maxpool_shapes_and_ties() {
        let x = Tensor4::filled([1, 2, 64, 64], 0.4);
        let (y, arg) = maxpool2d(&x).unwrap();
        assert_eq!(y.shape(), [1, 2, 32, 32]);
        assert!(y.data().iter().all(|&v| v == 0.4));
        // first index wins ties
        assert_eq!(arg[0], 0);
        assert!(maxpool2d(&Tensor4::zeros([1, 1, 5, 4])).is_err());
    }

    #[test]
    fn dropout_modes() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(dropout(&x, 0.5, Mode::Eval, 1).unwrap().0, x);
        assert_eq!(dropout(&x, 0.0, Mode::Train, 1).unwrap().0, x);
        let (y, mask) = dropout(&x, 0.5, Mode::Train, 1).unwrap();
        let mask = mask.unwrap();
        for ((a, b), m) in y.iter().zip(&x).zip(&mask) {
            assert!(*m == 0.0 || *m == 2.0);
            assert_eq!(*a, b * m);
        }
        assert_eq!(dropout(&x, 0.5, Mode::Train, 1).unwrap().0, y);
        assert!(dropout(&x, 1.0, Mode::Train, 1).is_err());
    }

    #[test]
    fn dropout_keep_fraction_concentrates() {
        // Binomial(1e6, 0.5) has sd 500, so ±2% (20 000) is 40 sd.
        let x = vec![1.0; 1_000_000];
        let (_, mask) = dropout(&x, 0.5, Mode::Train, 99).unwrap();
        let kept = mask.unwrap().iter().filter(|&&m| m > 0.0).count() as f64 / 1e6;
        assert!((kept - 0.5).abs() < 0.02, "kept fraction {kept}");
    }
}
