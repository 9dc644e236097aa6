//! Unconditional DCGAN, one per lesion class.
//!
//! Generator: latent (100) → dense → 4×4×c0 → three 5×5 stride-2 transposed
//! convolutions with batch norm and ReLU → 5×5 transposed convolution to one
//! channel → tanh. Discriminator mirrors it with strided convolutions,
//! leaky ReLU (0.2) and a single output logit. Images live in [−1,1] inside
//! this module and are mapped back to [0,1] by [`synthesize`].

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data_model::{Dataset, GrayImage, LesionClass, LesionRoi, Provenance, DEFAULT_MARGIN_FRAC, ROI_SIZE};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{self, Checkpoint};
use crate::nn::layers::{activate_tensor, activate_tensor_backward};
use crate::nn::{
    adam_step, bce_with_logits, sigmoid, Activation, ActivationLayer, AdamConfig, AdamState, BatchNorm2dLayer,
    Conv2dLayer, ConvTranspose2dLayer, DenseLayer, Init, Matrix, NamedTensor, ParamMut, Tensor4,
};
use crate::seed::{derive_seed, rng_from, sha256_hex};

pub const LATENT_DIM: usize = 100;
/// Channel widths of the full-size networks, from the 4×4 stage outwards.
pub const PAPER_CHANNELS: [usize; 4] = [1024, 512, 256, 128];
const KERNEL: usize = 5;
const LEAK: f64 = 0.2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentPrior {
    #[default]
    Uniform,
    Normal,
}

/// Draws a `[batch, LATENT_DIM]` latent matrix.
pub fn sample_latent(batch: usize, prior: LatentPrior, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(batch, LATENT_DIM, |_, _| match prior {
        LatentPrior::Uniform => rng.random_range(-1.0..=1.0),
        LatentPrior::Normal => rng.sample(StandardNormal),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Write a generator checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub latent: LatentPrior,
    pub channels: [usize; 4],
    /// Discriminator updates per generator update.
    pub d_steps: usize,
    pub init_std: f64,
    /// Caps the number of steps per epoch; 0 means a full pass.
    pub max_steps_per_epoch: usize,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            batch_size: 64,
            adam: AdamConfig {
                lr: 2e-4,
                beta1: 0.5,
                beta2: 0.999,
                eps: 1e-8,
            },
            seed: 0,
            checkpoint_every: 0,
            latent: LatentPrior::Uniform,
            channels: PAPER_CHANNELS,
            d_steps: 1,
            init_std: 0.02,
            max_steps_per_epoch: 0,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::validation("GAN batch size must be at least 2"));
        }
        if self.channels.contains(&0) {
            return Err(Error::validation("GAN channel widths must be positive"));
        }
        if self.d_steps == 0 {
            return Err(Error::validation("d_steps must be at least 1"));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

fn weight_init(cfg_std: f64) -> Init {
    Init::Normal(cfg_std)
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub channels: [usize; 4],
    dense: DenseLayer,
    bn0: BatchNorm2dLayer,
    act0: ActivationLayer,
    up: Vec<(ConvTranspose2dLayer, BatchNorm2dLayer, ActivationLayer)>,
    out: ConvTranspose2dLayer,
    tanh: ActivationLayer,
}

impl Generator {
    pub fn new(channels: [usize; 4], init_std: f64, rng: &mut impl Rng) -> Self {
        let init = weight_init(init_std);
        let c = channels;
        let dense = DenseLayer::new("g.dense", LATENT_DIM, 16 * c[0], false, init, rng);
        let up = (0..3)
            .map(|i| {
                (
                    ConvTranspose2dLayer::new(&format!("g.up{i}"), c[i], c[i + 1], KERNEL, 2, 2, 1, false, init, rng),
                    BatchNorm2dLayer::new(&format!("g.bn{}", i + 1), c[i + 1]),
                    ActivationLayer::new(Activation::Relu),
                )
            })
            .collect();
        let out = ConvTranspose2dLayer::new("g.out", c[3], 1, KERNEL, 2, 2, 1, true, init, rng);
        Self {
            channels,
            dense,
            bn0: BatchNorm2dLayer::new("g.bn0", c[0]),
            act0: ActivationLayer::new(Activation::Relu),
            up,
            out,
            tanh: ActivationLayer::new(Activation::Tanh),
        }
    }

    fn check_latent(z: &Matrix) -> Result<()> {
        if z.cols() != LATENT_DIM {
            return Err(Error::shape(format!("latent width must be {LATENT_DIM}, got {}", z.cols())));
        }
        z.ensure_finite("latent")
    }

    /// Training-mode forward (batch statistics, running stats updated).
    pub fn forward(&mut self, z: &Matrix) -> Result<Tensor4> {
        Self::check_latent(z)?;
        let h = self.dense.forward(z)?.into_tensor(self.channels[0], 4, 4)?;
        let h = self.bn0.forward(&h, true)?;
        let mut h = activate_tensor(&mut self.act0, h);
        for (conv, bn, act) in &mut self.up {
            let y = conv.forward(&h)?;
            let y = bn.forward(&y, true)?;
            h = activate_tensor(act, y);
        }
        let y = self.out.forward(&h)?;
        Ok(activate_tensor(&mut self.tanh, y))
    }

    /// Backpropagates `d loss / d output`; returns the latent gradient.
    pub fn backward(&mut self, dy: &Tensor4) -> Result<Matrix> {
        let d = activate_tensor_backward(&mut self.tanh, dy)?;
        let mut d = self.out.backward(&d)?;
        for (conv, bn, act) in self.up.iter_mut().rev() {
            let g = activate_tensor_backward(act, &d)?;
            let g = bn.backward(&g)?;
            d = conv.backward(&g)?;
        }
        let g = activate_tensor_backward(&mut self.act0, &d)?;
        let g = self.bn0.backward(&g)?;
        self.dense.backward(&g.flatten())
    }

    /// Eval-mode forward; also returns the shape after every stage.
    pub fn infer_traced(&self, z: &Matrix) -> Result<(Tensor4, Vec<[usize; 4]>)> {
        Self::check_latent(z)?;
        let mut trace = Vec::with_capacity(5);
        let h = self.dense.infer(z)?.into_tensor(self.channels[0], 4, 4)?;
        let mut h = self.bn0.infer(&h)?.map(|v| v.max(0.0));
        trace.push(h.shape());
        for (conv, bn, _) in &self.up {
            h = bn.infer(&conv.infer(&h)?)?.map(|v| v.max(0.0));
            trace.push(h.shape());
        }
        let y = self.out.infer(&h)?.map(f64::tanh);
        trace.push(y.shape());
        Ok((y, trace))
    }

    pub fn infer(&self, z: &Matrix) -> Result<Tensor4> {
        Ok(self.infer_traced(z)?.0)
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = self.dense.params_mut();
        out.extend(self.bn0.params_mut());
        for (conv, bn, _) in &mut self.up {
            out.extend(conv.params_mut());
            out.extend(bn.params_mut());
        }
        out.extend(self.out.params_mut());
        out
    }

    pub fn tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out = self.dense.tensors();
        out.extend(self.bn0.tensors());
        for (conv, bn, _) in &self.up {
            out.extend(conv.tensors());
            out.extend(bn.tensors());
        }
        out.extend(self.out.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = self.dense.tensors_mut();
        out.extend(self.bn0.tensors_mut());
        for (conv, bn, _) in &mut self.up {
            out.extend(conv.tensors_mut());
            out.extend(bn.tensors_mut());
        }
        out.extend(self.out.tensors_mut());
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.tensors())
    }

    /// Rebuilds a generator from a checkpoint; widths are read from the
    /// stored shapes.
    pub fn from_checkpoint(ck: &Checkpoint, path: &Path) -> Result<Self> {
        let shape_of = |name: &str| {
            ck.entries
                .iter()
                .find(|e| e.name == name)
                .map(|e| e.shape.clone())
                .ok_or_else(|| Error::Checkpoint {
                    path: path.to_path_buf(),
                    message: format!("missing tensor {name}"),
                })
        };
        let mut channels = [0; 4];
        for i in 0..3 {
            let s = shape_of(&format!("g.up{i}.weight"))?;
            channels[i] = s[0];
            channels[i + 1] = s[1];
        }
        let mut g = Generator::new(channels, 0.02, &mut rng_from(0));
        ck.restore(g.tensors_mut(), path)?;
        Ok(g)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&checkpoint::load(path)?, path)
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub channels: [usize; 4],
    first: Conv2dLayer,
    first_act: ActivationLayer,
    down: Vec<(Conv2dLayer, BatchNorm2dLayer, ActivationLayer)>,
    head: DenseLayer,
}

impl Discriminator {
    /// `channels` uses the generator's ordering; the discriminator walks it
    /// in reverse (input side has the fewest channels).
    pub fn new(channels: [usize; 4], init_std: f64, rng: &mut impl Rng) -> Self {
        let init = weight_init(init_std);
        let c = [channels[3], channels[2], channels[1], channels[0]];
        let first = Conv2dLayer::new("d.conv0", 1, c[0], KERNEL, 2, 2, true, init, rng);
        let down = (0..3)
            .map(|i| {
                (
                    Conv2dLayer::new(&format!("d.conv{}", i + 1), c[i], c[i + 1], KERNEL, 2, 2, false, init, rng),
                    BatchNorm2dLayer::new(&format!("d.bn{}", i + 1), c[i + 1]),
                    ActivationLayer::new(Activation::LeakyRelu(LEAK)),
                )
            })
            .collect();
        let head = DenseLayer::new("d.head", 16 * c[3], 1, true, init, rng);
        Self {
            channels,
            first,
            first_act: ActivationLayer::new(Activation::LeakyRelu(LEAK)),
            down,
            head,
        }
    }

    /// Zeroes the output layer so every input scores exactly 0.5.
    pub fn zero_output_layer(&mut self) {
        self.head.weight.data_mut().fill(0.0);
        if let Some(b) = self.head.bias.as_mut() {
            b.fill(0.0);
        }
    }

    fn check_input(x: &Tensor4) -> Result<()> {
        let [_, c, h, w] = x.shape();
        if c != 1 || h != ROI_SIZE || w != ROI_SIZE {
            return Err(Error::shape(format!(
                "discriminator expects (batch,1,{ROI_SIZE},{ROI_SIZE}), got {:?}",
                x.shape()
            )));
        }
        x.ensure_finite("discriminator input")
    }

    /// Training-mode forward returning one logit per item. Running batch-norm
    /// statistics move only when `track` is set.
    pub fn forward(&mut self, x: &Tensor4, track: bool) -> Result<Vec<f64>> {
        Self::check_input(x)?;
        let h = self.first.forward(x)?;
        let mut h = activate_tensor(&mut self.first_act, h);
        for (conv, bn, act) in &mut self.down {
            let y = conv.forward(&h)?;
            let y = bn.forward(&y, track)?;
            h = activate_tensor(act, y);
        }
        Ok(self.head.forward(&h.flatten())?.data().to_vec())
    }

    /// Backpropagates logit gradients; returns the input gradient.
    pub fn backward(&mut self, dlogits: &[f64]) -> Result<Tensor4> {
        let dy = Matrix::new(dlogits.len(), 1, dlogits.to_vec())?;
        let c = self.down.last().expect("three stages").1.gamma.len();
        let mut d = self.head.backward(&dy)?.into_tensor(c, 4, 4)?;
        for (conv, bn, act) in self.down.iter_mut().rev() {
            let g = activate_tensor_backward(act, &d)?;
            let g = bn.backward(&g)?;
            d = conv.backward(&g)?;
        }
        let g = activate_tensor_backward(&mut self.first_act, &d)?;
        self.first.backward(&g)
    }

    /// Eval-mode logits plus the shape after every stage.
    pub fn infer_traced(&self, x: &Tensor4) -> Result<(Vec<f64>, Vec<[usize; 4]>)> {
        Self::check_input(x)?;
        let leak = |v: f64| if v > 0.0 { v } else { LEAK * v };
        let mut trace = Vec::with_capacity(5);
        let mut h = self.first.infer(x)?.map(leak);
        trace.push(h.shape());
        for (conv, bn, _) in &self.down {
            h = bn.infer(&conv.infer(&h)?)?.map(leak);
            trace.push(h.shape());
        }
        let logits = self.head.infer(&h.flatten())?;
        trace.push([logits.rows(), logits.cols(), 1, 1]);
        Ok((logits.data().to_vec(), trace))
    }

    /// Eval-mode probability of being real, one per item.
    pub fn probabilities(&self, x: &Tensor4) -> Result<Vec<f64>> {
        Ok(self.infer_traced(x)?.0.into_iter().map(sigmoid).collect())
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = self.first.params_mut();
        for (conv, bn, _) in &mut self.down {
            out.extend(conv.params_mut());
            out.extend(bn.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }

    pub fn tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out = self.first.tensors();
        for (conv, bn, _) in &self.down {
            out.extend(conv.tensors());
            out.extend(bn.tensors());
        }
        out.extend(self.head.tensors());
        out
    }
}

fn zero_grads(params: &mut [ParamMut<'_>]) {
    for p in params {
        p.grad.fill(0.0);
    }
}

fn check_logits(logits: &[f64], what: &str) -> Result<()> {
    if logits.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Training(format!("non-finite discriminator output on {what} batch")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub d_loss: f64,
    pub g_loss: f64,
}

/// Generator, discriminator and their optimizer state.
pub struct GanTrainer {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub d_adam: AdamConfig,
    pub g_adam: AdamConfig,
    pub latent: LatentPrior,
    d_state: AdamState,
    g_state: AdamState,
}

impl GanTrainer {
    pub fn new(cfg: &GanTrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_from(derive_seed(cfg.seed, &["gan", "init"]));
        let generator = Generator::new(cfg.channels, cfg.init_std, &mut rng);
        let discriminator = Discriminator::new(cfg.channels, cfg.init_std, &mut rng);
        Ok(Self::from_parts(generator, discriminator, cfg))
    }

    pub fn from_parts(generator: Generator, discriminator: Discriminator, cfg: &GanTrainConfig) -> Self {
        Self {
            generator,
            discriminator,
            d_adam: cfg.adam,
            g_adam: cfg.adam,
            latent: cfg.latent,
            d_state: AdamState::new(),
            g_state: AdamState::new(),
        }
    }

    /// Fresh fake batch from the generator in training mode; its forward
    /// cache is kept for [`GanTrainer::generator_substep`].
    pub fn generate_fake(&mut self, batch: usize, rng: &mut impl Rng) -> Result<Tensor4> {
        let z = sample_latent(batch, self.latent, rng);
        let fake = self.generator.forward(&z)?;
        fake.ensure_finite("generator output")
            .map_err(|_| Error::Training("non-finite generator output".into()))?;
        Ok(fake)
    }

    /// Updates only the discriminator on `bce(D(real),1) + bce(D(fake),0)`.
    pub fn discriminator_substep(&mut self, real: &Tensor4, fake: &Tensor4) -> Result<f64> {
        let d = &mut self.discriminator;
        zero_grads(&mut d.params_mut());
        let logits = d.forward(real, true)?;
        check_logits(&logits, "real")?;
        let (loss_real, grad) = bce_with_logits(&logits, &vec![1.0; logits.len()])?;
        d.backward(&grad)?;
        let logits = d.forward(fake, true)?;
        check_logits(&logits, "fake")?;
        let (loss_fake, grad) = bce_with_logits(&logits, &vec![0.0; logits.len()])?;
        d.backward(&grad)?;
        adam_step(&mut d.params_mut(), &mut self.d_state, &self.d_adam)?;
        Ok(loss_real + loss_fake)
    }

    /// Updates only the generator on the non-saturating loss
    /// `bce(D(fake),1)`; `fake` must be the last output of
    /// [`GanTrainer::generate_fake`]. Discriminator weights and running
    /// statistics are left untouched.
    pub fn generator_substep(&mut self, fake: &Tensor4) -> Result<f64> {
        let logits = self.discriminator.forward(fake, false)?;
        check_logits(&logits, "generator")?;
        let (loss, grad) = bce_with_logits(&logits, &vec![1.0; logits.len()])?;
        let dfake = self.discriminator.backward(&grad)?;
        zero_grads(&mut self.discriminator.params_mut());
        let g = &mut self.generator;
        zero_grads(&mut g.params_mut());
        g.backward(&dfake)?;
        adam_step(&mut g.params_mut(), &mut self.g_state, &self.g_adam)?;
        Ok(loss)
    }

    /// One adversarial step: `d_steps` discriminator updates, then one
    /// generator update on the last fake batch.
    pub fn step(&mut self, real: &Tensor4, d_steps: usize, rng: &mut impl Rng) -> Result<StepLosses> {
        let batch = real.batch();
        let mut fake = self.generate_fake(batch, rng)?;
        let mut d_loss = self.discriminator_substep(real, &fake)?;
        for _ in 1..d_steps {
            fake = self.generate_fake(batch, rng)?;
            d_loss = self.discriminator_substep(real, &fake)?;
        }
        let g_loss = self.generator_substep(&fake)?;
        if !(d_loss.is_finite() && g_loss.is_finite()) {
            return Err(Error::Training(format!("non-finite loss: d={d_loss} g={g_loss}")));
        }
        Ok(StepLosses { d_loss, g_loss })
    }
}

/// Maps a [0,1] image to the generator's [−1,1] range.
pub fn to_gan_range(img: &GrayImage) -> Vec<f64> {
    img.data().iter().map(|v| 2.0 * v - 1.0).collect()
}

/// Stacks equally sized [−1,1] images into a `(batch,1,64,64)` tensor.
pub fn stack_batch(images: &[&[f64]]) -> Result<Tensor4> {
    let mut data = Vec::with_capacity(images.len() * ROI_SIZE * ROI_SIZE);
    for img in images {
        data.extend_from_slice(img);
    }
    Tensor4::new([images.len(), 1, ROI_SIZE, ROI_SIZE], data)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
}

/// Metadata written next to a generator checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSidecar {
    pub class: LesionClass,
    pub epoch: usize,
    pub seed: u64,
    pub config_hash: String,
    pub checkpoint_id: String,
}

#[derive(Clone, Debug)]
pub struct TrainedGenerator {
    pub generator: Generator,
    pub class: LesionClass,
    pub history: Vec<EpochLog>,
    /// Content hash of the final checkpoint bytes.
    pub checkpoint_id: String,
}

/// Content-derived identifier of a generator's parameters.
pub fn checkpoint_id(generator: &Generator) -> Result<String> {
    let bytes = checkpoint::encode(&generator.tensors())?;
    Ok(sha256_hex(&bytes)[..16].to_string())
}

fn single_class(pool: &Dataset) -> Result<LesionClass> {
    let first = pool
        .items
        .first()
        .ok_or_else(|| Error::validation("GAN training pool is empty"))?
        .label;
    if pool.items.iter().any(|r| r.label != first) {
        return Err(Error::validation(format!(
            "GAN training pool {} mixes lesion classes; train one generator per class",
            pool.name
        )));
    }
    Ok(first)
}

fn write_generator(g: &Generator, dir: &Path, stem: &str, sidecar: &GeneratorSidecar) -> Result<()> {
    g.save(&dir.join(format!("{stem}.ck")))?;
    let json = dir.join(format!("{stem}.json"));
    fs::write(&json, serde_json::to_vec_pretty(sidecar)?).map_err(|e| Error::io(&json, e))
}

/// Trains one generator on a single-class pool. Real items are converted
/// with `margin_frac`; derived items are used as stored. With `out_dir`
/// set, writes `history.csv`, periodic and final checkpoints with JSON
/// sidecars, and on a numerical failure a `diagnostics.ck` of both networks.
pub fn train_gan(
    pool: &Dataset,
    cfg: &GanTrainConfig,
    margin_frac: f64,
    out_dir: Option<&Path>,
) -> Result<TrainedGenerator> {
    let class = single_class(pool)?;
    let mut trainer = GanTrainer::new(cfg)?;
    let images: Vec<Vec<f64>> = pool
        .items
        .iter()
        .map(|r| r.model_input(margin_frac).map(|img| to_gan_range(&img)))
        .collect::<Result<_>>()?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut rng: ChaCha8Rng = rng_from(derive_seed(cfg.seed, &["gan", "train"]));
    let batch = cfg.batch_size.min(images.len());
    if batch < 2 {
        return Err(Error::validation("GAN training needs at least two images"));
    }
    let config_hash = cfg.hash();
    let sidecar = |epoch, id: String| GeneratorSidecar {
        class,
        epoch,
        seed: cfg.seed,
        config_hash: config_hash.clone(),
        checkpoint_id: id,
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..images.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut steps = order.len() / batch;
        if cfg.max_steps_per_epoch > 0 {
            steps = steps.min(cfg.max_steps_per_epoch);
        }
        let (mut d_sum, mut g_sum) = (0.0, 0.0);
        for chunk in order.chunks_exact(batch).take(steps) {
            let refs: Vec<&[f64]> = chunk.iter().map(|&i| images[i].as_slice()).collect();
            let real = stack_batch(&refs)?;
            let losses = match trainer.step(&real, cfg.d_steps, &mut rng) {
                Ok(l) => l,
                Err(e @ Error::Training(_)) => {
                    if let Some(dir) = out_dir {
                        let mut all = trainer.generator.tensors();
                        all.extend(trainer.discriminator.tensors());
                        checkpoint::save(&dir.join("diagnostics.ck"), &all)?;
                    }
                    log::error!("event=gan_abort class={} epoch={epoch} error=\"{e}\"", class.name());
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            d_sum += losses.d_loss;
            g_sum += losses.g_loss;
        }
        let log = EpochLog {
            epoch,
            d_loss: d_sum / steps as f64,
            g_loss: g_sum / steps as f64,
        };
        log::debug!(
            "event=gan_epoch class={} epoch={epoch} d_loss={:.5} g_loss={:.5}",
            class.name(),
            log.d_loss,
            log.g_loss
        );
        history.push(log);
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && epoch != cfg.epochs {
                let id = checkpoint_id(&trainer.generator)?;
                write_generator(&trainer.generator, dir, &format!("generator_epoch{epoch:04}"), &sidecar(epoch, id))?;
            }
        }
    }
    let id = checkpoint_id(&trainer.generator)?;
    if let Some(dir) = out_dir {
        write_generator(&trainer.generator, dir, "generator", &sidecar(cfg.epochs, id.clone()))?;
        let path = dir.join("history.csv");
        let mut w = csv::Writer::from_path(&path)?;
        for h in &history {
            w.serialize(h)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(TrainedGenerator {
        generator: trainer.generator,
        class,
        history,
        checkpoint_id: id,
    })
}

/// Diameter recorded on synthetic samples: the lesion extent implied by the
/// canonical view at the default margin.
pub fn synthetic_diameter() -> f64 {
    ROI_SIZE as f64 / (1.0 + 2.0 * DEFAULT_MARGIN_FRAC)
}

/// Draws `n` images from `generator` (eval mode) as [0,1] synthetic ROIs.
pub fn synthesize(
    generator: &Generator,
    class: LesionClass,
    checkpoint_id: &str,
    n: usize,
    prior: LatentPrior,
    seed: u64,
) -> Result<Vec<LesionRoi>> {
    if n == 0 {
        return Err(Error::validation("synthesize needs n ≥ 1"));
    }
    let mut rng = rng_from(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let b = (n - out.len()).min(64);
        let images = generator.infer(&sample_latent(b, prior, &mut rng))?;
        for i in 0..b {
            let data = images.item(i).iter().map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0)).collect();
            let index = out.len();
            out.push(LesionRoi {
                pixels: GrayImage::new(ROI_SIZE, ROI_SIZE, data)?,
                diameter_px: synthetic_diameter(),
                label: class,
                patient_id: format!("synthetic-{}", class.name().to_lowercase()),
                lesion_id: format!("synth-{}-{checkpoint_id}-{index:05}", class.name().to_lowercase()),
                provenance: Provenance::Synthetic {
                    checkpoint_id: checkpoint_id.to_string(),
                    index,
                },
            });
        }
    }
    Ok(out)
}

/// Tiles up to 64 images into an 8×8 grid for visual inspection.
pub fn tile_grid(rois: &[LesionRoi]) -> GrayImage {
    let side = 8 * ROI_SIZE;
    let mut grid = GrayImage::filled(side, side, 0.0);
    for (k, roi) in rois.iter().take(64).enumerate() {
        let (gr, gc) = (k / 8 * ROI_SIZE, k % 8 * ROI_SIZE);
        for r in 0..ROI_SIZE.min(roi.height()) {
            for c in 0..ROI_SIZE.min(roi.width()) {
                grid.set(gr + r, gc + c, roi.pixels.get(r, c));
            }
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: [usize; 4] = [8, 4, 4, 2];

    fn tiny_cfg() -> GanTrainConfig {
        GanTrainConfig {
            channels: TINY,
            batch_size: 4,
            epochs: 1,
            ..GanTrainConfig::default()
        }
    }

    #[test]
    fn batch_of_seven_has_output_shape() {
        let g = Generator::new(TINY, 0.02, &mut rng_from(1));
        let z = sample_latent(7, LatentPrior::Uniform, &mut rng_from(2));
        let y = g.infer(&z).unwrap();
        assert_eq!(y.shape(), [7, 1, 64, 64]);
        assert!(y.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn wrong_latent_width_is_a_shape_error() {
        let g = Generator::new(TINY, 0.02, &mut rng_from(1));
        assert!(matches!(g.infer(&Matrix::zeros(2, 99)), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_head_scores_one_half() {
        let mut d = Discriminator::new(TINY, 0.02, &mut rng_from(3));
        d.zero_output_layer();
        let x = Tensor4::from_fn([3, 1, 64, 64], |[n, _, r, c]| ((n + r * c) % 7) as f64 / 3.5 - 1.0);
        assert!(d.probabilities(&x).unwrap().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn latent_priors_respect_their_support() {
        let z = sample_latent(50, LatentPrior::Uniform, &mut rng_from(4));
        assert!(z.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let n = sample_latent(50, LatentPrior::Normal, &mut rng_from(4));
        assert!(n.data().iter().any(|v| v.abs() > 1.0));
    }

    #[test]
    fn closed_form_losses_when_d_is_one_half() {
        let cfg = tiny_cfg();
        let mut t = GanTrainer::new(&cfg).unwrap();
        t.discriminator.zero_output_layer();
        t.d_adam.lr = 0.0;
        let real = Tensor4::filled([4, 1, 64, 64], 0.3);
        let l = t.step(&real, 1, &mut rng_from(5)).unwrap();
        let ln2 = 2f64.ln();
        assert!((l.d_loss - 2.0 * ln2).abs() < 1e-12);
        assert!((l.g_loss - ln2).abs() < 1e-12);
    }

    #[test]
    fn substeps_freeze_the_other_network() {
        let mut t = GanTrainer::new(&tiny_cfg()).unwrap();
        let real = Tensor4::filled([4, 1, 64, 64], -0.2);
        let mut rng = rng_from(6);
        let snapshot = |n: Vec<NamedTensor<'_>>| n.iter().flat_map(|t| t.data.to_vec()).collect::<Vec<f64>>();

        let fake = t.generate_fake(4, &mut rng).unwrap();
        let g0 = snapshot(t.generator.tensors());
        let d0 = snapshot(t.discriminator.tensors());
        t.discriminator_substep(&real, &fake).unwrap();
        assert_eq!(g0, snapshot(t.generator.tensors()));
        let d1 = snapshot(t.discriminator.tensors());
        assert_ne!(d0, d1);
        t.generator_substep(&fake).unwrap();
        assert_eq!(d1, snapshot(t.discriminator.tensors()));
        assert_ne!(g0, snapshot(t.generator.tensors()));
    }

    #[test]
    fn step_is_reproducible() {
        let real = Tensor4::from_fn([4, 1, 64, 64], |[n, _, r, _]| (n + r) as f64 / 70.0 - 0.5);
        let run = || {
            let mut t = GanTrainer::new(&tiny_cfg()).unwrap();
            let l = t.step(&real, 1, &mut rng_from(9)).unwrap();
            (l, checkpoint_id(&t.generator).unwrap())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mixed_class_pool_is_rejected() {
        let mk = |label| LesionRoi {
            pixels: GrayImage::filled(64, 64, 0.5),
            diameter_px: 40.0,
            label,
            patient_id: "p".into(),
            lesion_id: format!("{label:?}"),
            provenance: Provenance::Real,
        };
        let pool = Dataset::new("mixed", vec![mk(LesionClass::Cyst), mk(LesionClass::Hemangioma)]);
        assert!(matches!(
            train_gan(&pool, &tiny_cfg(), 0.25, None),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn synthesize_is_deterministic_and_labeled() {
        let g = Generator::new(TINY, 0.02, &mut rng_from(1));
        let a = synthesize(&g, LesionClass::Cyst, "abc", 5, LatentPrior::Uniform, 11).unwrap();
        let b = synthesize(&g, LesionClass::Cyst, "abc", 5, LatentPrior::Uniform, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|r| r.label == LesionClass::Cyst && r.pixels.all_in_unit_range()));
        assert!(synthesize(&g, LesionClass::Cyst, "abc", 0, LatentPrior::Uniform, 11).is_err());
    }

    #[test]
    fn checkpoint_round_trip_preserves_widths() {
        let dir = tempfile::tempdir().unwrap();
        let g = Generator::new(TINY, 0.02, &mut rng_from(1));
        let path = dir.path().join("g.ck");
        g.save(&path).unwrap();
        let back = Generator::load(&path).unwrap();
        assert_eq!(back.channels, TINY);
        let z = sample_latent(2, LatentPrior::Uniform, &mut rng_from(3));
        let (a, b) = (g.infer(&z).unwrap(), back.infer(&z).unwrap());
        let max = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(max < 1e-4);
    }
}
