//! Stateful layer wrappers: each owns its parameters, accumulates gradients
//! and caches whatever its backward pass needs from the last forward.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::conv::{conv2d, conv2d_backward, conv2d_transpose, conv2d_transpose_backward};
use super::ops::{
    batchnorm2d, batchnorm2d_backward, dense, dense_backward, maxpool2d, maxpool2d_backward,
    Activation, BatchNormCache, Mode,
};
use super::{Matrix, NamedTensor, ParamMut, Tensor4};
use crate::error::{Error, Result};

/// Weight initialisation schemes.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Normal(f64),
    /// He-uniform with the given fan-in.
    HeUniform(usize),
}

impl Init {
    pub fn fill(self, buf: &mut [f64], rng: &mut impl Rng) {
        match self {
            Init::Zeros => buf.fill(0.0),
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("finite std");
                for v in buf {
                    *v = dist.sample(rng);
                }
            }
            Init::HeUniform(fan_in) => {
                let bound = (6.0 / fan_in as f64).sqrt();
                for v in buf {
                    *v = rng.random_range(-bound..bound);
                }
            }
        }
    }
}

fn missing_cache(layer: &str) -> Error {
    Error::Training(format!("{layer}: backward called without a cached forward pass"))
}

#[derive(Clone, Debug)]
pub struct Conv2dLayer {
    pub name: String,
    pub weight: Tensor4,
    pub bias: Option<Vec<f64>>,
    pub stride: usize,
    pub padding: usize,
    dweight: Tensor4,
    dbias: Vec<f64>,
    input: Option<Tensor4>,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let mut weight = Tensor4::zeros([out_ch, in_ch, k, k]);
        init.fill(weight.data_mut(), rng);
        Self {
            name: name.to_string(),
            dweight: Tensor4::zeros(weight.shape()),
            weight,
            bias: bias.then(|| vec![0.0; out_ch]),
            dbias: vec![0.0; out_ch],
            stride,
            padding,
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor4) -> Result<Tensor4> {
        conv2d(x, &self.weight, self.bias.as_deref(), self.stride, self.padding)
    }

    pub fn backward(&mut self, dy: &Tensor4) -> Result<Tensor4> {
        let x = self.input.as_ref().ok_or_else(|| missing_cache(&self.name))?;
        let g = conv2d_backward(x, &self.weight, self.stride, self.padding, dy)?;
        add_into(self.dweight.data_mut(), g.dw.data());
        if self.bias.is_some() {
            add_into(&mut self.dbias, &g.db);
        }
        Ok(g.dx)
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = vec![ParamMut {
            name: format!("{}.weight", self.name),
            shape: self.weight.shape().to_vec(),
            value: self.weight.data_mut(),
            grad: self.dweight.data_mut(),
        }];
        if let Some(b) = self.bias.as_mut() {
            out.push(ParamMut {
                name: format!("{}.bias", self.name),
                shape: vec![b.len()],
                value: b,
                grad: &mut self.dbias,
            });
        }
        out
    }

    pub fn tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out = vec![NamedTensor::new(format!("{}.weight", self.name), self.weight.shape().to_vec(), self.weight.data())];
        if let Some(b) = &self.bias {
            out.push(NamedTensor::new(format!("{}.bias", self.name), vec![b.len()], b));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = vec![(format!("{}.weight", self.name), self.weight.data_mut())];
        if let Some(b) = self.bias.as_mut() {
            out.push((format!("{}.bias", self.name), b.as_mut_slice()));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2dLayer {
    pub name: String,
    /// `[in_ch, out_ch, k, k]`.
    pub weight: Tensor4,
    pub bias: Option<Vec<f64>>,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
    dweight: Tensor4,
    dbias: Vec<f64>,
    input: Option<Tensor4>,
}

impl ConvTranspose2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        bias: bool,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let mut weight = Tensor4::zeros([in_ch, out_ch, k, k]);
        init.fill(weight.data_mut(), rng);
        Self {
            name: name.to_string(),
            dweight: Tensor4::zeros(weight.shape()),
            weight,
            bias: bias.then(|| vec![0.0; out_ch]),
            dbias: vec![0.0; out_ch],
            stride,
            padding,
            output_padding,
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor4) -> Result<Tensor4> {
        conv2d_transpose(
            x,
            &self.weight,
            self.bias.as_deref(),
            self.stride,
            self.padding,
            self.output_padding,
        )
    }

    pub fn backward(&mut self, dy: &Tensor4) -> Result<Tensor4> {
        let x = self.input.as_ref().ok_or_else(|| missing_cache(&self.name))?;
        let g = conv2d_transpose_backward(x, &self.weight, self.stride, self.padding, self.output_padding, dy)?;
        add_into(self.dweight.data_mut(), g.dw.data());
        if self.bias.is_some() {
            add_into(&mut self.dbias, &g.db);
        }
        Ok(g.dx)
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = vec![ParamMut {
            name: format!("{}.weight", self.name),
            shape: self.weight.shape().to_vec(),
            value: self.weight.data_mut(),
            grad: self.dweight.data_mut(),
        }];
        if let Some(b) = self.bias.as_mut() {
            out.push(ParamMut {
                name: format!("{}.bias", self.name),
                shape: vec![b.len()],
                value: b,
                grad: &mut self.dbias,
            });
        }
        out
    }

    pub fn tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out = vec![NamedTensor::new(format!("{}.weight", self.name), self.weight.shape().to_vec(), self.weight.data())];
        if let Some(b) = &self.bias {
            out.push(NamedTensor::new(format!("{}.bias", self.name), vec![b.len()], b));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = vec![(format!("{}.weight", self.name), self.weight.data_mut())];
        if let Some(b) = self.bias.as_mut() {
            out.push((format!("{}.bias", self.name), b.as_mut_slice()));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub name: String,
    /// `[in, out]`.
    pub weight: Matrix,
    pub bias: Option<Vec<f64>>,
    dweight: Matrix,
    dbias: Vec<f64>,
    input: Option<Matrix>,
}

impl DenseLayer {
    pub fn new(name: &str, inputs: usize, outputs: usize, bias: bool, init: Init, rng: &mut impl Rng) -> Self {
        let mut weight = Matrix::zeros(inputs, outputs);
        init.fill(weight.data_mut(), rng);
        Self {
            name: name.to_string(),
            dweight: Matrix::zeros(inputs, outputs),
            weight,
            bias: bias.then(|| vec![0.0; outputs]),
            dbias: vec![0.0; outputs],
            input: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        dense(x, &self.weight, self.bias.as_deref())
    }

    pub fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        let x = self.input.as_ref().ok_or_else(|| missing_cache(&self.name))?;
        let g = dense_backward(x, &self.weight, dy)?;
        add_into(self.dweight.data_mut(), g.dw.data());
        if self.bias.is_some() {
            add_into(&mut self.dbias, &g.db);
        }
        Ok(g.dx)
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = vec![ParamMut {
            name: format!("{}.weight", self.name),
            shape: vec![self.weight.rows(), self.weight.cols()],
            value: self.weight.data_mut(),
            grad: self.dweight.data_mut(),
        }];
        if let Some(b) = self.bias.as_mut() {
            out.push(ParamMut {
                name: format!("{}.bias", self.name),
                shape: vec![b.len()],
                value: b,
                grad: &mut self.dbias,
            });
        }
        out
    }

    pub fn tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out = vec![NamedTensor::new(
            format!("{}.weight", self.name),
            vec![self.weight.rows(), self.weight.cols()],
            self.weight.data(),
        )];
        if let Some(b) = &self.bias {
            out.push(NamedTensor::new(format!("{}.bias", self.name), vec![b.len()], b));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = vec![(format!("{}.weight", self.name), self.weight.data_mut())];
        if let Some(b) = self.bias.as_mut() {
            out.push((format!("{}.bias", self.name), b.as_mut_slice()));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2dLayer {
    pub name: String,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    dgamma: Vec<f64>,
    dbeta: Vec<f64>,
    cache: Option<BatchNormCache>,
}

impl BatchNorm2dLayer {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            dgamma: vec![0.0; channels],
            dbeta: vec![0.0; channels],
            cache: None,
        }
    }

    /// Training forward; running statistics move only when `track` is set.
    pub fn forward(&mut self, x: &Tensor4, track: bool) -> Result<Tensor4> {
        let (y, cache, stats) = batchnorm2d(
            x,
            &self.gamma,
            &self.beta,
            Mode::Train,
            (&self.running_mean, &self.running_var),
        )?;
        if let (true, Some(stats)) = (track, stats) {
            let unbias = stats.count as f64 / (stats.count as f64 - 1.0).max(1.0);
            for c in 0..self.gamma.len() {
                self.running_mean[c] = (1.0 - self.momentum) * self.running_mean[c] + self.momentum * stats.mean[c];
                self.running_var[c] =
                    (1.0 - self.momentum) * self.running_var[c] + self.momentum * stats.var[c] * unbias;
            }
        }
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor4) -> Result<Tensor4> {
        let (y, _, _) = batchnorm2d(
            x,
            &self.gamma,
            &self.beta,
            Mode::Eval,
            (&self.running_mean, &self.running_var),
        )?;
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor4) -> Result<Tensor4> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache(&self.name))?;
        let g = batchnorm2d_backward(cache, &self.gamma, dy)?;
        add_into(&mut self.dgamma, &g.dgamma);
        add_into(&mut self.dbeta, &g.dbeta);
        Ok(g.dx)
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let n = self.gamma.len();
        vec![
            ParamMut {
                name: format!("{}.gamma", self.name),
                shape: vec![n],
                value: &mut self.gamma,
                grad: &mut self.dgamma,
            },
            ParamMut {
                name: format!("{}.beta", self.name),
                shape: vec![n],
                value: &mut self.beta,
                grad: &mut self.dbeta,
            },
        ]
    }

    pub fn tensors(&self) -> Vec<NamedTensor<'_>> {
        let n = vec![self.gamma.len()];
        vec![
            NamedTensor::new(format!("{}.gamma", self.name), n.clone(), &self.gamma),
            NamedTensor::new(format!("{}.beta", self.name), n.clone(), &self.beta),
            NamedTensor::new(format!("{}.running_mean", self.name), n.clone(), &self.running_mean),
            NamedTensor::new(format!("{}.running_var", self.name), n, &self.running_var),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            (format!("{}.gamma", self.name), self.gamma.as_mut_slice()),
            (format!("{}.beta", self.name), self.beta.as_mut_slice()),
            (format!("{}.running_mean", self.name), self.running_mean.as_mut_slice()),
            (format!("{}.running_var", self.name), self.running_var.as_mut_slice()),
        ]
    }
}

/// Elementwise activation that remembers its last input and output.
#[derive(Clone, Debug)]
pub struct ActivationLayer {
    pub act: Activation,
    cache: Option<(Vec<f64>, Vec<f64>)>,
}

impl ActivationLayer {
    pub fn new(act: Activation) -> Self {
        Self { act, cache: None }
    }

    pub fn forward(&mut self, x: &[f64]) -> Vec<f64> {
        let y = self.act.forward(x);
        self.cache = Some((x.to_vec(), y.clone()));
        y
    }

    pub fn backward(&mut self, dy: &[f64]) -> Result<Vec<f64>> {
        let (x, y) = self.cache.as_ref().ok_or_else(|| missing_cache("activation"))?;
        if dy.len() != x.len() {
            return Err(Error::shape("activation backward: length mismatch"));
        }
        Ok(self.act.backward(x, y, dy))
    }
}

#[derive(Clone, Debug, Default)]
pub struct MaxPoolLayer {
    cache: Option<([usize; 4], Vec<usize>)>,
}

impl MaxPoolLayer {
    pub fn forward(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let (y, arg) = maxpool2d(x)?;
        self.cache = Some((x.shape(), arg));
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor4) -> Result<Tensor4> {
        let (shape, arg) = self.cache.as_ref().ok_or_else(|| missing_cache("maxpool"))?;
        maxpool2d_backward(*shape, arg, dy)
    }
}

/// Applies an activation to a tensor in place of its data.
pub fn activate_tensor(layer: &mut ActivationLayer, x: Tensor4) -> Tensor4 {
    let shape = x.shape();
    Tensor4::new(shape, layer.forward(x.data())).expect("activation preserves shape")
}

pub fn activate_tensor_backward(layer: &mut ActivationLayer, dy: &Tensor4) -> Result<Tensor4> {
    Tensor4::new(dy.shape(), layer.backward(dy.data())?)
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

/// Zeroes every gradient buffer in `params`.
pub fn zero_grads(params: &mut [ParamMut<'_>]) {
    for p in params {
        p.grad.fill(0.0);
    }
}
