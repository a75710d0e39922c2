mod discriminator;
mod generator;
mod loss;
mod train;

pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use generator::{Generator, GeneratorConfig, GeneratorTrace, Skip};
pub use loss::{
    discriminator_loss, gaussian_window, generator_loss, ssim, GeneratorLoss, LossWeights, LOG_CLAMP, SSIM_SIGMA, SSIM_WINDOW,
};
pub use train::{
    batch_tensors, predict, predict_masks, segment_images, write_history, EpochRecord, StepLosses, TrainConfig, Trainer,
};

/// Network input and output side length.
pub const IMAGE_SIZE: usize = 96;
