//! Three-class lesion CNN: three conv(3×3)+ReLU+maxpool stages, a hidden
//! dense layer with ReLU and dropout, and a 3-way softmax head.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::{Dataset, GrayImage, LesionClass, Provenance, ROI_SIZE};
use crate::error::{Error, Result};
use crate::experiment::metrics::ConfusionMatrix;
use crate::nn::checkpoint::{self, Checkpoint};
use crate::nn::layers::{activate_tensor, activate_tensor_backward};
use crate::nn::{
    adam_step, dropout, dropout_backward, softmax, softmax_crossentropy, Activation, ActivationLayer,
    AdamConfig, AdamState, Conv2dLayer, DenseLayer, Init, Matrix, MaxPoolLayer, Mode, NamedTensor,
    ParamMut, Tensor4,
};
use crate::seed::{derive_seed, rng_from, sha256_hex};

pub const NUM_CLASSES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    /// Output channels of the three conv stages.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub dense_hidden: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            channels: vec![32, 64, 128],
            kernel: 3,
            dense_hidden: 256,
            dropout: 0.5,
            batch_size: 64,
            lr: 1e-3,
            epochs: 150,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != 3 {
            return Err(Error::validation(format!(
                "classifier needs exactly three conv stages, got {}",
                self.channels.len()
            )));
        }
        if self.channels.contains(&0) || self.dense_hidden == 0 {
            return Err(Error::validation("classifier widths must be positive"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::validation("classifier kernel size must be odd"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("classifier batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation("dropout rate must be in [0,1)"));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

#[derive(Clone, Debug)]
struct Stage {
    conv: Conv2dLayer,
    act: ActivationLayer,
    pool: MaxPoolLayer,
}

#[derive(Clone, Debug)]
pub struct Classifier {
    pub config: ClassifierConfig,
    stages: Vec<Stage>,
    hidden: DenseLayer,
    hidden_act: ActivationLayer,
    head: DenseLayer,
    mask: Option<Vec<f64>>,
    flat_shape: [usize; 3],
}

/// Builds a freshly initialized classifier (He-uniform weights, zero
/// biases) from `config.seed`.
pub fn build_classifier(config: &ClassifierConfig) -> Result<Classifier> {
    config.validate()?;
    let mut rng = rng_from(derive_seed(config.seed, &["classifier", "init"]));
    let k = config.kernel;
    let mut stages = Vec::with_capacity(3);
    let mut in_ch = 1;
    for (i, &out_ch) in config.channels.iter().enumerate() {
        let conv = Conv2dLayer::new(
            &format!("c.conv{i}"),
            in_ch,
            out_ch,
            k,
            1,
            k / 2,
            true,
            Init::HeUniform(in_ch * k * k),
            &mut rng,
        );
        stages.push(Stage {
            conv,
            act: ActivationLayer::new(Activation::Relu),
            pool: MaxPoolLayer::default(),
        });
        in_ch = out_ch;
    }
    let side = ROI_SIZE / 8;
    let flat = in_ch * side * side;
    let hidden = DenseLayer::new("c.fc1", flat, config.dense_hidden, true, Init::HeUniform(flat), &mut rng);
    let head = DenseLayer::new(
        "c.fc2",
        config.dense_hidden,
        NUM_CLASSES,
        true,
        Init::HeUniform(config.dense_hidden),
        &mut rng,
    );
    Ok(Classifier {
        config: config.clone(),
        stages,
        hidden,
        hidden_act: ActivationLayer::new(Activation::Relu),
        head,
        mask: None,
        flat_shape: [in_ch, side, side],
    })
}

impl Classifier {
    fn check_input(x: &Tensor4) -> Result<()> {
        let [_, c, h, w] = x.shape();
        if c != 1 || h != ROI_SIZE || w != ROI_SIZE {
            return Err(Error::shape(format!(
                "classifier expects (batch,1,{ROI_SIZE},{ROI_SIZE}), got {:?}",
                x.shape()
            )));
        }
        x.ensure_finite("classifier input")
    }

    /// Training forward with dropout drawn from `dropout_seed`; returns logits.
    pub fn forward(&mut self, x: &Tensor4, dropout_seed: u64) -> Result<Matrix> {
        Self::check_input(x)?;
        let mut h = x.clone();
        for s in &mut self.stages {
            let y = s.conv.forward(&h)?;
            let y = activate_tensor(&mut s.act, y);
            h = s.pool.forward(&y)?;
        }
        let a = self.hidden.forward(&h.flatten())?;
        let a = self.hidden_act.forward(a.data());
        let (d, mask) = dropout(&a, self.config.dropout, Mode::Train, dropout_seed)?;
        self.mask = mask;
        let d = Matrix::new(x.batch(), self.config.dense_hidden, d)?;
        self.head.forward(&d)
    }

    pub fn backward(&mut self, dlogits: &Matrix) -> Result<Tensor4> {
        let g = self.head.backward(dlogits)?;
        let g = dropout_backward(self.mask.as_deref(), g.data());
        let g = self.hidden_act.backward(&g)?;
        let g = Matrix::new(dlogits.rows(), self.config.dense_hidden, g)?;
        let [c, h, w] = self.flat_shape;
        let mut d = self.hidden.backward(&g)?.into_tensor(c, h, w)?;
        for s in self.stages.iter_mut().rev() {
            let g = s.pool.backward(&d)?;
            let g = activate_tensor_backward(&mut s.act, &g)?;
            d = s.conv.backward(&g)?;
        }
        Ok(d)
    }

    /// Eval-mode logits plus the shape after every conv stage.
    pub fn infer_traced(&self, x: &Tensor4) -> Result<(Matrix, Vec<[usize; 4]>)> {
        Self::check_input(x)?;
        let mut trace = Vec::with_capacity(3);
        let mut h = x.clone();
        for s in &self.stages {
            let y = s.conv.infer(&h)?.map(|v| v.max(0.0));
            h = crate::nn::maxpool2d(&y)?.0;
            trace.push(h.shape());
        }
        let a = self.hidden.infer(&h.flatten())?;
        let a = Matrix::new(a.rows(), a.cols(), a.data().iter().map(|v| v.max(0.0)).collect())?;
        Ok((self.head.infer(&a)?, trace))
    }

    pub fn logits(&self, x: &Tensor4) -> Result<Matrix> {
        Ok(self.infer_traced(x)?.0)
    }

    /// Softmax probabilities for a batch, one row per item.
    pub fn probabilities(&self, x: &Tensor4) -> Result<Matrix> {
        Ok(softmax(&self.logits(x)?))
    }

    /// Zeroes the output layer, making every prediction uniform.
    pub fn zero_head(&mut self) {
        self.head.weight.data_mut().fill(0.0);
        if let Some(b) = self.head.bias.as_mut() {
            b.fill(0.0);
        }
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        for s in &mut self.stages {
            out.extend(s.conv.params_mut());
        }
        out.extend(self.hidden.params_mut());
        out.extend(self.head.params_mut());
        out
    }

    pub fn tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out = Vec::new();
        for s in &self.stages {
            out.extend(s.conv.tensors());
        }
        out.extend(self.hidden.tensors());
        out.extend(self.head.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for s in &mut self.stages {
            out.extend(s.conv.tensors_mut());
        }
        out.extend(self.hidden.tensors_mut());
        out.extend(self.head.tensors_mut());
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.tensors())
    }

    /// Restores weights saved by [`Classifier::save`] into a model built
    /// from `config`.
    pub fn load(path: &Path, config: &ClassifierConfig) -> Result<Self> {
        let ck: Checkpoint = checkpoint::load(path)?;
        let mut model = build_classifier(config)?;
        ck.restore(model.tensors_mut(), path)?;
        Ok(model)
    }
}

fn image_tensor(images: &[&GrayImage]) -> Result<Tensor4> {
    let mut data = Vec::with_capacity(images.len() * ROI_SIZE * ROI_SIZE);
    for img in images {
        if img.height() != ROI_SIZE || img.width() != ROI_SIZE {
            return Err(Error::shape(format!(
                "classifier input must be {ROI_SIZE}x{ROI_SIZE}, got {}x{}",
                img.height(),
                img.width()
            )));
        }
        data.extend_from_slice(img.data());
    }
    Tensor4::new([images.len(), 1, ROI_SIZE, ROI_SIZE], data)
}

/// Class probabilities for one 64×64 [0,1] image.
pub fn predict(model: &Classifier, roi: &GrayImage) -> Result<[f64; 3]> {
    let p = model.probabilities(&image_tensor(&[roi])?)?;
    Ok([p.at(0, 0), p.at(0, 1), p.at(0, 2)])
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Predicted classes for a list of 64×64 images, evaluated in chunks.
pub fn predict_classes(model: &Classifier, images: &[GrayImage]) -> Result<Vec<LesionClass>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(128) {
        let refs: Vec<&GrayImage> = chunk.iter().collect();
        let logits = model.logits(&image_tensor(&refs)?)?;
        for r in 0..logits.rows() {
            out.push(LesionClass::from_index(argmax(logits.row(r))).expect("three logits"));
        }
    }
    Ok(out)
}

/// Confusion matrix of `model` on a test set of real lesions only.
pub fn evaluate(model: &Classifier, test_set: &Dataset, margin_frac: f64) -> Result<ConfusionMatrix> {
    if let Some(bad) = test_set.items.iter().find(|r| r.provenance != Provenance::Real) {
        return Err(Error::validation(format!(
            "test set {} contains a {} sample ({}); only real lesions may be evaluated",
            test_set.name,
            bad.provenance.kind(),
            bad.sample_key()
        )));
    }
    let images: Vec<GrayImage> = test_set
        .items
        .iter()
        .map(|r| r.model_input(margin_frac))
        .collect::<Result<_>>()?;
    let preds = predict_classes(model, &images)?;
    let mut cm = ConfusionMatrix::default();
    for (roi, p) in test_set.items.iter().zip(preds) {
        cm.record(roi.label, p);
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
}

pub struct TrainedClassifier {
    pub model: Classifier,
    pub history: Vec<EpochRecord>,
}

/// Trains from scratch with Adam on mini-batches reshuffled every epoch.
/// Single-threaded and bit-reproducible for a fixed config.
pub fn train_classifier(train_set: &Dataset, config: &ClassifierConfig, margin_frac: f64) -> Result<TrainedClassifier> {
    let mut model = build_classifier(config)?;
    if train_set.is_empty() {
        return Err(Error::validation("classifier training set is empty"));
    }
    let counts = train_set.class_counts();
    if let Some(c) = (0..3).find(|&c| counts[c] == 0) {
        return Err(Error::validation(format!(
            "classifier training set {} has no {} samples",
            train_set.name,
            LesionClass::from_index(c).expect("index < 3").name()
        )));
    }
    let images: Vec<GrayImage> = train_set
        .items
        .iter()
        .map(|r| r.model_input(margin_frac))
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = train_set.items.iter().map(|r| r.label.index()).collect();
    let adam = AdamConfig::with_lr(config.lr);
    let mut state = AdamState::new();
    let mut rng = rng_from(derive_seed(config.seed, &["classifier", "train"]));
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let refs: Vec<&GrayImage> = chunk.iter().map(|&i| &images[i]).collect();
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let x = image_tensor(&refs)?;
            for p in &mut model.params_mut() {
                p.grad.fill(0.0);
            }
            let logits = model.forward(&x, rng.random())?;
            let (loss, grad) = softmax_crossentropy(&logits, &y)
                .map_err(|e| Error::Training(format!("epoch {epoch}: {e}")))?;
            model.backward(&grad)?;
            adam_step(&mut model.params_mut(), &mut state, &adam)?;
            loss_sum += loss * chunk.len() as f64;
            correct += (0..chunk.len()).filter(|&r| argmax(logits.row(r)) == y[r]).count();
        }
        let n = images.len() as f64;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
        };
        if !rec.train_loss.is_finite() {
            return Err(Error::Training(format!("non-finite training loss at epoch {epoch}")));
        }
        log::debug!(
            "event=clf_epoch set={} epoch={epoch} loss={:.5} acc={:.4}",
            train_set.name,
            rec.train_loss,
            rec.train_acc
        );
        history.push(rec);
    }
    Ok(TrainedClassifier { model, history })
}

pub fn write_history(history: &[EpochRecord], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for h in history {
        w.serialize(h)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
