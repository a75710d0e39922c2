//! Alternating adversarial training: per iteration one discriminator Adam
//! step on the real/fake pair, then one generator Adam step.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{discriminator_loss, generator_loss, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, LossWeights, IMAGE_SIZE};
use crate::data::{resize_bilinear, resize_nearest, Mask, Raster, Sample};
use crate::eval::postprocess;
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::tensor::{Adam, AdamConfig, Graph, RngStream, Tensor};

const STREAM_INIT_G: u64 = 1;
const STREAM_INIT_D: u64 = 2;
const STREAM_DROPOUT: u64 = 3;
const STREAM_SHUFFLE: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 8,
            lr: 2e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epochs, batch size and learning rate must be positive (got {}, {}, {})",
                self.epochs, self.batch_size, self.lr
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Loss values of one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub gen_loss: f64,
    pub disc_loss: f64,
    pub l1: f64,
    pub ssim_term: f64,
    pub adv_term: f64,
}

/// Per-epoch means of [`StepLosses`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub gen_loss: f64,
    pub disc_loss: f64,
    pub l1: f64,
    pub ssim_term: f64,
    pub adv_term: f64,
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Stack samples into `[N,1,96,96]` image and mask tensors.
pub fn batch_tensors(samples: &[&Sample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let plane = IMAGE_SIZE * IMAGE_SIZE;
    let mut images = Vec::with_capacity(samples.len() * plane);
    let mut masks = Vec::with_capacity(samples.len() * plane);
    for s in samples {
        if (s.image.width(), s.image.height()) != (IMAGE_SIZE, IMAGE_SIZE) {
            return Err(Error::NotPreprocessed {
                expected: IMAGE_SIZE,
                got_h: s.image.height(),
                got_w: s.image.width(),
            });
        }
        images.extend_from_slice(s.image.data());
        masks.extend(s.mask.data().iter().map(|&v| v as f32));
    }
    let shape = [samples.len(), 1, IMAGE_SIZE, IMAGE_SIZE];
    Ok((Tensor::from_vec(&shape, images)?, Tensor::from_vec(&shape, masks)?))
}

/// Shuffled batches for one epoch. A trailing batch of one sample is folded
/// into the previous batch so batch statistics never see a single sample.
fn epoch_batches(n: usize, batch: usize, rng: &mut RngStream) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut out: Vec<Vec<usize>> = order.chunks(batch).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

pub struct Trainer {
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub config: TrainConfig,
    pub weights: LossWeights,
    opt_g: Adam<f32>,
    opt_d: Adam<f32>,
    dropout_rng: RngStream,
    shuffle_rng: RngStream,
    epoch: usize,
    iteration: usize,
    pub history: Vec<EpochRecord>,
}

impl Trainer {
    pub fn new(config: TrainConfig, weights: LossWeights, gen: GeneratorConfig, disc: DiscriminatorConfig) -> Result<Self> {
        config.validate()?;
        weights.validate()?;
        let root = RngStream::new(config.seed);
        let generator = Generator::new(gen, &mut root.substream(STREAM_INIT_G))?;
        let discriminator = Discriminator::new(disc, &mut root.substream(STREAM_INIT_D))?;
        let opt_g = Adam::new(config.adam(), &generator.store);
        let opt_d = Adam::new(config.adam(), &discriminator.store);
        Ok(Self {
            generator,
            discriminator,
            config,
            weights,
            opt_g,
            opt_d,
            dropout_rng: root.substream(STREAM_DROPOUT),
            shuffle_rng: root.substream(STREAM_SHUFFLE),
            epoch: 0,
            iteration: 0,
            history: Vec::new(),
        })
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Iterations completed so far.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    fn finite(&self, what: &'static str, v: f64) -> Result<f64> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteLoss {
                what,
                epoch: self.epoch + 1,
                iteration: self.iteration + 1,
            })
        }
    }

    /// One discriminator update followed by one generator update.
    pub fn step(&mut self, images: &Tensor<f32>, masks: &Tensor<f32>) -> Result<StepLosses> {
        let mut gg = Graph::new();
        let x = gg.constant(images.clone());
        let y = gg.constant(masks.clone());
        let m = self.generator.forward(&mut gg, x, &mut self.dropout_rng, Mode::TRAIN)?;

        // Discriminator on (x, y) versus (x, G(x)) with the fake detached.
        let mut gd = Graph::new();
        let xd = gd.constant(images.clone());
        let real = gd.constant(masks.clone());
        let fake = gd.constant(gg.value(m).clone());
        let d_real = self.discriminator.forward(&mut gd, xd, real, Mode::TRAIN)?;
        let d_fake = self.discriminator.forward(&mut gd, xd, fake, Mode::TRAIN)?;
        let ld = discriminator_loss(&mut gd, d_real, d_fake);
        let disc_loss = self.finite("discriminator loss", gd.value(ld).item() as f64)?;
        let grads = gd.backward(ld)?.into_params(&gd);
        // The graph shares parameter storage; release it so the update
        // writes in place instead of copying every tensor.
        drop(gd);
        self.opt_d.step(&mut self.discriminator.store, &grads)?;

        // Generator through the freshly updated, frozen discriminator.
        let d_out = self.discriminator.forward(&mut gg, x, m, Mode::TRAIN_FROZEN)?;
        let lg = generator_loss(&mut gg, d_out, m, y, self.weights)?;
        let gen_loss = self.finite("generator loss", gg.value(lg.total).item() as f64)?;
        let losses = StepLosses {
            gen_loss,
            disc_loss,
            l1: gg.value(lg.l1).item() as f64,
            ssim_term: gg.value(lg.ssim_term).item() as f64,
            adv_term: gg.value(lg.adversarial).item() as f64,
        };
        let grads = gg.backward(lg.total)?.into_params(&gg);
        drop(gg);
        self.opt_g.step(&mut self.generator.store, &grads)?;

        self.iteration += 1;
        Ok(losses)
    }

    /// Train on `data` for up to `max_iterations` steps within one epoch;
    /// returns the losses of the steps taken.
    fn epoch_steps(&mut self, data: &[Sample], max_iterations: usize) -> Result<Vec<StepLosses>> {
        if data.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let batches = epoch_batches(data.len(), self.config.batch_size, &mut self.shuffle_rng);
        let mut out = Vec::with_capacity(batches.len());
        for idx in batches.iter().take(max_iterations) {
            let refs: Vec<&Sample> = idx.iter().map(|&i| &data[i]).collect();
            let (images, masks) = batch_tensors(&refs)?;
            out.push(self.step(&images, &masks)?);
        }
        Ok(out)
    }

    fn record(&mut self, steps: &[StepLosses]) -> EpochRecord {
        let n = steps.len().max(1) as f64;
        let mean = |f: fn(&StepLosses) -> f64| steps.iter().map(f).sum::<f64>() / n;
        self.epoch += 1;
        let r = EpochRecord {
            epoch: self.epoch,
            gen_loss: mean(|s| s.gen_loss),
            disc_loss: mean(|s| s.disc_loss),
            l1: mean(|s| s.l1),
            ssim_term: mean(|s| s.ssim_term),
            adv_term: mean(|s| s.adv_term),
        };
        self.history.push(r);
        r
    }

    pub fn run_epoch(&mut self, data: &[Sample]) -> Result<EpochRecord> {
        let steps = self.epoch_steps(data, usize::MAX)?;
        let r = self.record(&steps);
        log::info!(
            "epoch {} gen {:.4} disc {:.4} l1 {:.4} ssim {:.4} adv {:.4}",
            r.epoch,
            r.gen_loss,
            r.disc_loss,
            r.l1,
            r.ssim_term,
            r.adv_term
        );
        Ok(r)
    }

    /// `config.epochs` full passes over `data`.
    pub fn fit(&mut self, data: &[Sample]) -> Result<&[EpochRecord]> {
        for _ in 0..self.config.epochs {
            self.run_epoch(data)?;
        }
        Ok(&self.history)
    }

    /// Exactly `iterations` steps, reshuffling at every epoch boundary; a
    /// partially consumed final epoch is recorded like a full one.
    pub fn fit_iterations(&mut self, data: &[Sample], iterations: usize) -> Result<&[EpochRecord]> {
        let mut left = iterations;
        while left > 0 {
            let steps = self.epoch_steps(data, left)?;
            left -= steps.len();
            self.record(&steps);
        }
        Ok(&self.history)
    }

    pub fn into_generator(self) -> Generator<f32> {
        self.generator
    }
}

/// Probability map of one preprocessed image (inference-mode batch norm,
/// dropout drawn from `rng`).
pub fn predict(generator: &mut Generator<f32>, images: &Tensor<f32>, rng: &mut RngStream) -> Result<Tensor<f32>> {
    let mut g = Graph::new();
    let x = g.constant(images.clone());
    let m = generator.forward(&mut g, x, rng, Mode::INFER)?;
    Ok(g.value(m).clone())
}

/// Predict masks for preprocessed samples in batches of `batch`, thresholded
/// at 0.5 (no morphology).
pub fn predict_masks(generator: &mut Generator<f32>, samples: &[Sample], batch: usize, rng: &mut RngStream) -> Result<Vec<Mask>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (images, _) = batch_tensors(&refs)?;
        let probs = predict(generator, &images, rng)?;
        for plane in probs.data().chunks(IMAGE_SIZE * IMAGE_SIZE) {
            out.push(Mask::threshold(IMAGE_SIZE, IMAGE_SIZE, plane, 0.5)?);
        }
    }
    Ok(out)
}

/// Full inference path for images of any extent: resample to the network
/// input, predict, post-process, and resample the mask back. Dropout noise
/// is drawn from `rng` batch by batch, so results depend on `batch`.
pub fn segment_images(generator: &mut Generator<f32>, images: &[Raster], batch: usize, rng: &mut RngStream) -> Result<Vec<Mask>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        let mut data = Vec::with_capacity(chunk.len() * IMAGE_SIZE * IMAGE_SIZE);
        for img in chunk {
            let r = if img.width() == IMAGE_SIZE && img.height() == IMAGE_SIZE {
                img.clone()
            } else {
                resize_bilinear(img, IMAGE_SIZE, IMAGE_SIZE)
            };
            data.extend(r.data().iter().map(|v| v.clamp(0.0, 1.0)));
        }
        let x = Tensor::from_vec(&[chunk.len(), 1, IMAGE_SIZE, IMAGE_SIZE], data)?;
        let probs = predict(generator, &x, rng)?;
        for (img, plane) in chunk.iter().zip(probs.data().chunks(IMAGE_SIZE * IMAGE_SIZE)) {
            let m = postprocess(IMAGE_SIZE, IMAGE_SIZE, plane)?;
            out.push(if img.width() == IMAGE_SIZE && img.height() == IMAGE_SIZE {
                m
            } else {
                resize_nearest(&m, img.width(), img.height())
            });
        }
    }
    Ok(out)
}
