//! Second stage: a pluggable classifier, its training harness, ranked
//! prediction and Grad-CAM attention maps.

mod convnet;

use std::fs;
use std::path::Path;

use image::RgbImage;
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmentationConfig, GeometricOps};
use crate::error::{Error, Result};
use crate::imaging::Tensor;
use crate::jsonl;
use crate::split::AuditCertificate;

pub use convnet::{Architecture, ConvNet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd { momentum: f32, weight_decay: f32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Linear warm-up, then cosine decay to zero at the last step.
    Cosine { warmup_epochs: u32 },
    /// Multiply by `gamma` every `every` epochs.
    Step { every: u32, gamma: f32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub input_side: u32,
    pub epochs: u32,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub learning_rate: f32,
    pub schedule: LrSchedule,
    /// `None` trains on the images as given.
    pub augmentation: Option<AugmentationConfig>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            input_side: 1024,
            epochs: 30,
            batch_size: 64,
            optimizer: Optimizer::Sgd {
                momentum: 0.9,
                weight_decay: 5e-4,
            },
            learning_rate: 0.05,
            schedule: LrSchedule::Cosine { warmup_epochs: 1 },
            augmentation: Some(AugmentationConfig::geometric_only()),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_side == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("input_side, epochs and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if let Some(a) = &self.augmentation {
            a.validate()?;
        }
        Ok(())
    }

    /// Learning rate at a fractional position `t` (in epochs) of training.
    pub fn lr_at(&self, t: f32) -> f32 {
        let total = self.epochs as f32;
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine { warmup_epochs } => {
                let warm = (warmup_epochs as f32).min(total);
                if t < warm {
                    self.learning_rate * (t + 1e-3) / warm
                } else {
                    let progress = ((t - warm) / (total - warm).max(1e-6)).clamp(0.0, 1.0);
                    self.learning_rate * 0.5 * (1.0 + (std::f32::consts::PI * progress).cos())
                }
            }
            LrSchedule::Step { every, gamma } => self.learning_rate * gamma.powi((t as u32 / every.max(1)) as i32),
        }
    }
}

/// Square images of `input_side` with class indices into `classes`.
#[derive(Debug, Clone, Default)]
pub struct TrainingData {
    pub classes: Vec<String>,
    pub samples: Vec<(RgbImage, usize)>,
    /// Hash of the class scheme the labels came from.
    pub scheme_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u32,
    pub loss: f64,
    pub train_accuracy: f64,
    pub learning_rate: f32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

/// Metadata stored next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub backend: String,
    pub architecture: Architecture,
    pub classes: Vec<String>,
    pub input_side: u32,
    pub scheme_hash: String,
    pub train_config: TrainConfig,
    pub audit_hash: String,
    pub weights_hash: String,
}

/// A trained model. Implementations must be safe to share across threads.
pub trait Classifier: Send + Sync {
    fn classes(&self) -> &[String];
    fn input_side(&self) -> u32;
    /// Probabilities in class order.
    fn predict_proba(&self, image: &Tensor) -> Result<Vec<f32>>;

    /// Last feature maps and the gradient of `class`'s score with respect to
    /// them, both `C x h x w`.
    fn activation_and_gradient(&self, _image: &Tensor, _class: usize) -> Result<(Tensor, Tensor)> {
        Err(Error::Unsupported("activation gradients"))
    }

    fn weights_hash(&self) -> String;
}

/// Something that can fit a [`Classifier`].
pub trait ClassifierBackend {
    fn name(&self) -> &str;
    fn fit(&self, data: &TrainingData, config: &TrainConfig) -> Result<(Box<dyn Classifier>, TrainLog)>;
}

/// The reference convolutional network as a trained classifier.
#[derive(Debug, Clone)]
pub struct ConvNetClassifier {
    pub net: ConvNet,
    pub classes: Vec<String>,
    pub input_side: u32,
}

impl ConvNetClassifier {
    fn check(&self, image: &Tensor) -> Result<()> {
        let side = self.input_side as usize;
        if image.shape() != (3, side, side) {
            let (c, h, w) = image.shape();
            return Err(Error::invalid(format!(
                "model expects 3x{side}x{side} input, got {c}x{h}x{w}; extract ROI crops first"
            )));
        }
        Ok(())
    }

    pub fn weights_bytes(&self) -> Vec<u8> {
        self.net.params.iter().flat_map(|p| p.to_le_bytes()).collect()
    }

    /// Writes `weights.bin` and `model.json` into `dir`.
    pub fn save(&self, dir: &Path, meta: &ModelMeta) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let weights = dir.join("weights.bin");
        fs::write(&weights, self.weights_bytes()).map_err(|e| Error::io(&weights, e))?;
        jsonl::write_json(&dir.join("model.json"), meta)
    }

    pub fn load(dir: &Path) -> Result<(Self, ModelMeta)> {
        let meta: ModelMeta = jsonl::read_json(&dir.join("model.json"))?;
        let path = dir.join("weights.bin");
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::invalid(format!("{}: truncated weights", path.display())));
        }
        let params = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let net = ConvNet::from_params(meta.architecture.clone(), params)
            .ok_or_else(|| Error::invalid(format!("{}: weight count does not match architecture", path.display())))?;
        let model = Self {
            net,
            classes: meta.classes.clone(),
            input_side: meta.input_side,
        };
        if model.weights_hash() != meta.weights_hash {
            return Err(Error::invalid(format!("{}: weights hash mismatch", path.display())));
        }
        Ok((model, meta))
    }
}

impl Classifier for ConvNetClassifier {
    fn classes(&self) -> &[String] {
        &self.classes
    }

    fn input_side(&self) -> u32 {
        self.input_side
    }

    fn predict_proba(&self, image: &Tensor) -> Result<Vec<f32>> {
        self.check(image)?;
        Ok(convnet::softmax(&self.net.forward(&image.data, image.height, image.width).logits))
    }

    fn activation_and_gradient(&self, image: &Tensor, class: usize) -> Result<(Tensor, Tensor)> {
        self.check(image)?;
        if class >= self.classes.len() {
            return Err(Error::invalid(format!("class index {class} out of range")));
        }
        let (act, grad, (h, w)) = self.net.activation_and_gradient(&image.data, image.height, image.width, class);
        let c = act.len() / (h * w);
        let wrap = |data| Tensor { channels: c, height: h, width: w, data };
        Ok((wrap(act), wrap(grad)))
    }

    fn weights_hash(&self) -> String {
        jsonl::bytes_hash(&self.weights_bytes())
    }
}

/// Trains [`ConvNet`] with minibatch SGD on soft-label cross-entropy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceCnn {
    pub channels: Vec<usize>,
}

impl Default for ReferenceCnn {
    fn default() -> Self {
        Self { channels: vec![8, 16] }
    }
}

impl ReferenceCnn {
    pub fn fit_convnet(&self, data: &TrainingData, config: &TrainConfig) -> Result<(ConvNetClassifier, TrainLog)> {
        let side = config.input_side as usize;
        let n_classes = data.classes.len();
        let arch = Architecture {
            channels: self.channels.clone(),
            n_classes,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut net = ConvNet::init(arch, &mut rng);
        let Optimizer::Sgd { momentum, weight_decay } = config.optimizer;
        let mut velocity = vec![0.0f32; net.n_params()];
        let n = data.samples.len();
        let steps_per_epoch = n.div_ceil(config.batch_size);
        let mut log = TrainLog::default();
        let aug = config.augmentation.clone();

        for epoch in 0..config.epochs {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ (0x9e37_79b9 + u64::from(epoch))));
            let (mut loss_sum, mut correct) = (0.0f64, 0usize);
            let mut lr = 0.0;
            for (step, batch) in order.chunks(config.batch_size).enumerate() {
                // Per-sample inputs: augmented image tensor and soft label.
                let inputs: Vec<(Tensor, Vec<f32>, usize)> = batch
                    .par_iter()
                    .enumerate()
                    .map(|(i, &idx)| {
                        let (img, label) = &data.samples[idx];
                        let stream = u64::from(epoch) * n as u64 + (step * config.batch_size + i) as u64;
                        let img = match &aug {
                            Some(a) => {
                                let mut srng = augment::sample_rng(config.seed ^ a.seed, stream);
                                GeometricOps::draw(a, &mut srng).apply(img, a).expect("square training image")
                            }
                            None => img.clone(),
                        };
                        let mut y = vec![0.0f32; n_classes];
                        y[*label] = 1.0;
                        (Tensor::from_rgb(&img), y, *label)
                    })
                    .collect();
                let inputs = match &aug {
                    Some(a) if a.mixup_enabled && inputs.len() > 1 => {
                        let mut brng = augment::sample_rng(config.seed ^ a.seed ^ 0x5eed, (u64::from(epoch) << 32) | step as u64);
                        let mut partner: Vec<usize> = (0..inputs.len()).collect();
                        partner.shuffle(&mut brng);
                        (0..inputs.len())
                            .map(|i| {
                                let lambda = augment::draw_lambda(a.mixup_mode, a.mixup_alpha, &mut brng);
                                let (x, y) = augment::mix_pair(
                                    (&inputs[i].0, &inputs[i].1),
                                    (&inputs[partner[i]].0, &inputs[partner[i]].1),
                                    lambda,
                                );
                                (x, y, inputs[i].2)
                            })
                            .collect()
                    }
                    _ => inputs,
                };

                let per_sample: Vec<(Vec<f32>, f64, bool)> = inputs
                    .par_iter()
                    .map(|(x, y, label)| {
                        let cache = net.forward(&x.data, side, side);
                        let p = convnet::softmax(&cache.logits);
                        let loss: f64 = y.iter().zip(&p).map(|(t, q)| -f64::from(*t) * f64::from(q.max(1e-12)).ln()).sum();
                        let argmax = p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i);
                        let dlogits: Vec<f32> = p.iter().zip(y).map(|(q, t)| q - t).collect();
                        let mut g = vec![0.0f32; net.n_params()];
                        net.backward(&cache, &dlogits, &mut g);
                        (g, loss, argmax == *label)
                    })
                    .collect();

                // Fixed-order reduction keeps results independent of thread count.
                let mut grad = vec![0.0f32; net.n_params()];
                for (g, loss, ok) in &per_sample {
                    for (a, b) in grad.iter_mut().zip(g) {
                        *a += b;
                    }
                    loss_sum += loss;
                    correct += usize::from(*ok);
                }
                let scale = 1.0 / batch.len() as f32;
                lr = config.lr_at(epoch as f32 + step as f32 / steps_per_epoch as f32);
                for ((p, v), g) in net.params.iter_mut().zip(&mut velocity).zip(&grad) {
                    let g = g * scale + weight_decay * *p;
                    *v = momentum * *v + g;
                    *p -= lr * *v;
                }
            }
            let entry = EpochLog {
                epoch: epoch + 1,
                loss: loss_sum / n as f64,
                train_accuracy: correct as f64 / n as f64,
                learning_rate: lr,
            };
            info!(
                "epoch {}/{}: loss {:.4}, train accuracy {:.3}",
                entry.epoch, config.epochs, entry.loss, entry.train_accuracy
            );
            log.epochs.push(entry);
        }
        let model = ConvNetClassifier {
            net,
            classes: data.classes.clone(),
            input_side: config.input_side,
        };
        Ok((model, log))
    }
}

impl ClassifierBackend for ReferenceCnn {
    fn name(&self) -> &str {
        "reference_cnn"
    }

    fn fit(&self, data: &TrainingData, config: &TrainConfig) -> Result<(Box<dyn Classifier>, TrainLog)> {
        let (model, log) = self.fit_convnet(data, config)?;
        Ok((Box::new(model), log))
    }
}

fn check_training_data(data: &TrainingData, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    if data.classes.is_empty() {
        return Err(Error::invalid("no classes to train"));
    }
    let mut counts = vec![0usize; data.classes.len()];
    for (img, label) in &data.samples {
        if *label >= counts.len() {
            return Err(Error::invalid(format!("label index {label} out of range")));
        }
        if img.dimensions() != (config.input_side, config.input_side) {
            let (w, h) = img.dimensions();
            return Err(Error::invalid(format!(
                "training image is {w}x{h}, expected {0}x{0}",
                config.input_side
            )));
        }
        counts[*label] += 1;
    }
    if let Some(i) = counts.iter().position(|c| *c == 0) {
        return Err(Error::EmptyClass(data.classes[i].clone()));
    }
    Ok(())
}

/// Trains the reference network. Refuses to run without a clean audit of
/// the split the data came from.
pub fn train(
    data: &TrainingData,
    audit: Option<&AuditCertificate>,
    config: &TrainConfig,
    backend: &ReferenceCnn,
) -> Result<(ConvNetClassifier, ModelMeta, TrainLog)> {
    let audit = audit.ok_or(Error::UnauditedSplit)?;
    check_training_data(data, config)?;
    let (model, log) = backend.fit_convnet(data, config)?;
    let meta = ModelMeta {
        backend: backend_name(backend),
        architecture: model.net.arch.clone(),
        classes: model.classes.clone(),
        input_side: config.input_side,
        scheme_hash: data.scheme_hash.clone(),
        train_config: config.clone(),
        audit_hash: audit.assignment_hash.clone(),
        weights_hash: model.weights_hash(),
    };
    Ok((model, meta, log))
}

/// Same preconditions as [`train`], for any backend.
pub fn train_with(
    data: &TrainingData,
    audit: Option<&AuditCertificate>,
    config: &TrainConfig,
    backend: &dyn ClassifierBackend,
) -> Result<(Box<dyn Classifier>, TrainLog)> {
    audit.ok_or(Error::UnauditedSplit)?;
    check_training_data(data, config)?;
    backend.fit(data, config)
}

fn backend_name(backend: &ReferenceCnn) -> String {
    ClassifierBackend::name(backend).to_string()
}

/// `(class, probability)` by descending probability, ties by class name.
pub fn predict(model: &dyn Classifier, image: &RgbImage) -> Result<Vec<(String, f32)>> {
    let probs = model.predict_proba(&Tensor::from_rgb(image))?;
    let mut ranked: Vec<(String, f32)> = model.classes().iter().cloned().zip(probs).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

/// A `height x width` map with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Heatmap {
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    /// Grey-scale rendering, brightest where attention is highest.
    pub fn to_image(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let v = (self.at(x as usize, y as usize) * 255.0).round() as u8;
            image::Rgb([v, v, v])
        })
    }
}

fn upsample(map: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; out_h * out_w];
    for v in 0..out_h {
        let y = ((v as f64 + 0.5) * h as f64 / out_h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let (y0, fy) = (y.floor() as usize, (y - y.floor()) as f32);
        let y1 = (y0 + 1).min(h - 1);
        for u in 0..out_w {
            let x = ((u as f64 + 0.5) * w as f64 / out_w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
            let (x0, fx) = (x.floor() as usize, (x - x.floor()) as f32);
            let x1 = (x0 + 1).min(w - 1);
            let top = map[y0 * w + x0] * (1.0 - fx) + map[y0 * w + x1] * fx;
            let bottom = map[y1 * w + x0] * (1.0 - fx) + map[y1 * w + x1] * fx;
            out[v * out_w + u] = top * (1.0 - fy) + bottom * fy;
        }
    }
    out
}

/// Grad-CAM for `class`: feature maps weighted by their spatially averaged
/// gradients, rectified, upsampled to the input and scaled to a maximum of
/// one. Vanishing gradients give an all-zero map.
pub fn gradcam(model: &dyn Classifier, image: &RgbImage, class: &str) -> Result<Heatmap> {
    let idx = model
        .classes()
        .iter()
        .position(|c| c == class)
        .ok_or_else(|| Error::invalid(format!("unknown class {class:?}")))?;
    let input = Tensor::from_rgb(image);
    let (act, grad) = model.activation_and_gradient(&input, idx)?;
    let (c, h, w) = act.shape();
    let plane = h * w;
    let mut cam = vec![0.0f32; plane];
    for k in 0..c {
        let alpha = grad.data[k * plane..(k + 1) * plane].iter().sum::<f32>() / plane as f32;
        for (m, a) in cam.iter_mut().zip(&act.data[k * plane..(k + 1) * plane]) {
            *m += alpha * a;
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    let mut data = upsample(&cam, h, w, input.height, input.width);
    let max = data.iter().copied().fold(0.0f32, f32::max);
    if max > 0.0 {
        data.iter_mut().for_each(|v| *v = (*v / max).clamp(0.0, 1.0));
    }
    Ok(Heatmap {
        width: input.width,
        height: input.height,
        data,
    })
}

#[cfg(test)]
mod tests {
    use image::Rgb;

    use super::*;
    use crate::split::{AuditCertificate, SplitPolicy};

    fn cert() -> AuditCertificate {
        AuditCertificate {
            policy: SplitPolicy::DifferentFarm,
            assignment_hash: "abc".into(),
        }
    }

    fn two_color_data(n: usize, side: u32) -> TrainingData {
        let mut samples = Vec::new();
        for i in 0..n {
            let label = i % 2;
            let shade = (i * 7 % 40) as u8;
            let color = if label == 0 { Rgb([200, 40 + shade, 40]) } else { Rgb([40, 40 + shade, 200]) };
            samples.push((RgbImage::from_pixel(side, side, color), label));
        }
        TrainingData {
            classes: vec!["red".into(), "blue".into()],
            samples,
            scheme_hash: "s".into(),
        }
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            input_side: 8,
            epochs: 8,
            batch_size: 8,
            learning_rate: 0.05,
            augmentation: Some(AugmentationConfig::geometric_only()),
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_data_is_learned() {
        let data = two_color_data(40, 8);
        let (model, meta, log) = train(&data, Some(&cert()), &small_config(), &ReferenceCnn { channels: vec![4, 4] }).unwrap();
        assert!(log.epochs.last().unwrap().train_accuracy >= 0.99, "{log:?}");
        assert_eq!(meta.classes, ["red", "blue"]);
        assert_eq!(meta.audit_hash, "abc");
        let ranked = predict(&model, &RgbImage::from_pixel(8, 8, Rgb([210, 50, 30]))).unwrap();
        assert_eq!(ranked[0].0, "red");
        assert!((ranked.iter().map(|r| r.1).sum::<f32>() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn training_is_deterministic() {
        let data = two_color_data(16, 8);
        let mut cfg = small_config();
        cfg.epochs = 2;
        cfg.augmentation = Some(AugmentationConfig::default());
        let backend = ReferenceCnn { channels: vec![4] };
        let a = train(&data, Some(&cert()), &cfg, &backend).unwrap().0;
        let b = train(&data, Some(&cert()), &cfg, &backend).unwrap().0;
        assert_eq!(a.weights_hash(), b.weights_hash());
    }

    #[test]
    fn preconditions_are_enforced() {
        let data = two_color_data(4, 8);
        let cfg = small_config();
        let backend = ReferenceCnn::default();
        assert!(matches!(train(&data, None, &cfg, &backend), Err(Error::UnauditedSplit)));
        let mut empty = data.clone();
        empty.classes.push("ghost".into());
        assert!(matches!(train(&empty, Some(&cert()), &cfg, &backend), Err(Error::EmptyClass(c)) if c == "ghost"));
        let mut wrong = data;
        wrong.samples[0].0 = RgbImage::new(9, 9);
        assert!(train(&wrong, Some(&cert()), &cfg, &backend).is_err());
    }

    #[test]
    fn prediction_checks_size_and_breaks_ties_by_name() {
        let model = ConvNetClassifier {
            net: ConvNet::constant(Architecture { channels: vec![2], n_classes: 3 }, 0.1),
            classes: vec!["b".into(), "c".into(), "a".into()],
            input_side: 6,
        };
        let ranked = predict(&model, &RgbImage::new(6, 6)).unwrap();
        assert_eq!(ranked.iter().map(|r| r.0.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
        assert!(ranked.iter().all(|r| (r.1 - 1.0 / 3.0).abs() < 1e-6));
        assert!(predict(&model, &RgbImage::new(7, 7)).is_err());
    }

    #[test]
    fn artifact_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = two_color_data(8, 8);
        let mut cfg = small_config();
        cfg.epochs = 1;
        let (model, meta, _) = train(&data, Some(&cert()), &cfg, &ReferenceCnn { channels: vec![4] }).unwrap();
        model.save(dir.path(), &meta).unwrap();
        let (loaded, loaded_meta) = ConvNetClassifier::load(dir.path()).unwrap();
        assert_eq!(loaded_meta, meta);
        assert_eq!(loaded.net, model.net);
        fs::write(dir.path().join("weights.bin"), [0u8; 8]).unwrap();
        assert!(ConvNetClassifier::load(dir.path()).is_err());
    }

    /// Brightness detector: positive conv weights, negative bias, so only
    /// bright pixels activate, and one class reads that activation.
    fn brightness_model(side: u32) -> ConvNetClassifier {
        let arch = Architecture { channels: vec![1], n_classes: 2 };
        let mut params = vec![0.1f32; 27];
        params.push(-2.0);
        params.extend([1.0, -1.0, 0.0, 0.0]);
        ConvNetClassifier {
            net: ConvNet::from_params(arch, params).unwrap(),
            classes: vec!["spot".into(), "none".into()],
            input_side: side,
        }
    }

    #[test]
    fn gradcam_concentrates_on_the_keyed_quadrant() {
        let side = 32;
        let mut img = RgbImage::from_pixel(side, side, Rgb([30, 30, 30]));
        for y in 4..12 {
            for x in 20..28 {
                img.put_pixel(x, y, Rgb([255, 255, 255]));
            }
        }
        let model = brightness_model(side);
        let map = gradcam(&model, &img, "spot").unwrap();
        assert_eq!((map.width, map.height), (32, 32));
        assert!((map.max() - 1.0).abs() < 1e-6);
        let total: f32 = map.data.iter().sum();
        let quadrant: f32 = (0..16).flat_map(|y| (16..32).map(move |x| (x, y))).map(|(x, y)| map.at(x, y)).sum();
        assert!(quadrant / total >= 0.7, "{}", quadrant / total);
        // The other class has negative weight on the only feature map.
        assert_eq!(gradcam(&model, &img, "none").unwrap().max(), 0.0);
        assert!(gradcam(&model, &img, "ghost").is_err());
    }

    #[test]
    fn lr_schedules() {
        let mut cfg = TrainConfig { epochs: 10, learning_rate: 0.1, ..TrainConfig::default() };
        assert!(cfg.lr_at(0.0) < 0.01);
        assert!((cfg.lr_at(1.0) - 0.1).abs() < 1e-6);
        assert!(cfg.lr_at(10.0).abs() < 1e-6);
        cfg.schedule = LrSchedule::Step { every: 3, gamma: 0.5 };
        assert!((cfg.lr_at(6.5) - 0.025).abs() < 1e-6);
    }
}
