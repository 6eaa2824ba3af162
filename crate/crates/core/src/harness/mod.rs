//! Training orchestration: modes, the step loop, evaluation, sweeps and
//! on-disk artifacts.

mod checkpoint;
mod config;
mod log;
mod sweep;
mod train;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointRecord, NamedArray, NamedBytes, FORMAT_VERSION, MAGIC,
};
pub use config::{
    resolve_mode, Mode, ResolvedMode, TrainingConfig, DATA_SEED_OFFSET, DUMP_SEED_OFFSET, EVAL_SEED_OFFSET,
    INIT_SEED_OFFSET, SUBSET_SEED_OFFSET, TRAIN_SEED_OFFSET,
};
pub use log::{LogRow, MetricsLog, METRICS_HEADER};
pub use sweep::{sweep, write_sweep_csv, SweepAxis, SweepRow, SWEEP_HEADER};
pub use train::{resume, train, StepLosses, TrainOutcome, Trainer};

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;
use crate::data::ClassConditionalDataset;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_sets, FeatureSet, MetricOptions, MetricsReport};
use crate::nets::GeneratorParams;

/// Anything that maps latents and class ids to samples.
pub trait SampleSource {
    fn latent_dim(&self) -> usize;
    fn generate(&self, z: &Tensor, labels: &[usize], lambda: f64) -> Result<Tensor>;
}

impl SampleSource for GeneratorParams {
    fn latent_dim(&self) -> usize {
        GeneratorParams::latent_dim(self)
    }

    fn generate(&self, z: &Tensor, labels: &[usize], lambda: f64) -> Result<Tensor> {
        self.sample(z, labels, lambda)
    }
}

/// `batch × dim` standard normal draws.
pub fn latent_batch<R: rand::Rng + ?Sized>(rng: &mut R, batch: usize, dim: usize) -> Result<Tensor> {
    let data = (0..batch * dim).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(batch, dim, data)
}

/// Labeled fakes, `n_per_class` for every class in class-major order.
pub fn generate_labeled(
    source: &dyn SampleSource,
    lambda: f64,
    num_classes: usize,
    n_per_class: usize,
    rng: &mut ChaCha8Rng,
) -> Result<FeatureSet> {
    if n_per_class < 1 {
        return Err(Error::contract("n_fake_per_class must be >= 1"));
    }
    let labels: Vec<usize> = (0..num_classes)
        .flat_map(|c| std::iter::repeat_n(c, n_per_class))
        .collect();
    let z = latent_batch(rng, labels.len(), source.latent_dim())?;
    let x = source.generate(&z, &labels, lambda)?;
    let (_, dim) = x.dims2()?;
    FeatureSet::new(dim, x.into_data(), Some(labels))
}

/// Stream for evaluation or dump draws at `step`, independent of training.
pub fn step_rng(seed: u64, offset: u64, step: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(offset));
    rng.set_stream(step);
    rng
}

/// Generates fresh samples at `lambda_eval` and scores them against the whole dataset.
pub fn evaluate(
    source: &dyn SampleSource,
    lambda_eval: f64,
    dataset: &ClassConditionalDataset,
    n_fake_per_class: usize,
    rng: &mut ChaCha8Rng,
    options: &MetricOptions,
    step: u64,
) -> Result<MetricsReport> {
    let fake = generate_labeled(source, lambda_eval, dataset.num_classes(), n_fake_per_class, rng)?;
    evaluate_sets(dataset, &fake, options, step)
}
