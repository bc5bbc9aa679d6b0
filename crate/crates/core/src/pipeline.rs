//! Keypoints to datasets to trained models to scores, in one place.

use crate::dataset::{build_windows, AbnormalRange, Dataset, WindowSpec};
use crate::error::Result;
use crate::evalkit::{roc_curve, score_dataset, RocCurve, ScoreSeries};
use crate::models::{Architecture, ModelCheckpoint, ModelConfig};
use crate::poseio::{preprocess_records, FrameRecord, KeypointFrame, LimbTopology, PreprocessConfig, PreprocessReport, SkeletonImage};
use crate::synthgen::{test_corpus, training_corpus};
use crate::trainer::{train_with, EpochReport, LossLog, TrainConfig};

/// Preprocesses detected frames with the BODY_25 limb set.
pub fn images_from_frames(frames: &[KeypointFrame], config: &PreprocessConfig) -> (Vec<SkeletonImage>, PreprocessReport) {
    let records: Vec<_> = frames.iter().cloned().map(FrameRecord::Detected).collect();
    preprocess_records(&records, config, &LimbTopology::body25())
}

/// The dataset an architecture consumes: windows of `window` frames for the
/// LSTM-VAE, single frames otherwise. Labeled when `ranges` is given.
pub fn dataset_for(
    arch: Architecture,
    images: &[SkeletonImage],
    window: usize,
    ranges: Option<&[AbnormalRange]>,
) -> Result<Dataset> {
    if !arch.consumes_windows() {
        return Dataset::from_frames(images, ranges);
    }
    let spec = WindowSpec::new(window)?;
    let windows = build_windows(images, spec);
    match ranges {
        Some(r) => Dataset::from_labeled(crate::dataset::label_windows(&windows, r)?, window),
        None => Dataset::from_windows(windows, window),
    }
}

/// Settings of the seeded synthetic train-and-detect experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticExperiment {
    pub seed: u64,
    pub epochs: usize,
    /// `None` picks the architecture's default batch size.
    pub batch_size: Option<usize>,
    pub model: ModelConfig,
    pub preprocess: PreprocessConfig,
}

impl Default for SyntheticExperiment {
    fn default() -> Self {
        Self {
            seed: 7,
            epochs: 10,
            batch_size: None,
            model: ModelConfig::default(),
            preprocess: PreprocessConfig::default(),
        }
    }
}

pub struct ExperimentOutcome {
    pub checkpoint: ModelCheckpoint,
    pub loss: LossLog,
    pub train_items: usize,
    pub scores: ScoreSeries,
    pub roc: RocCurve,
}

/// Prepared training and test data, shared by several architectures.
pub struct SyntheticData {
    pub train_images: Vec<SkeletonImage>,
    pub test_images: Vec<SkeletonImage>,
    pub test_ranges: Vec<AbnormalRange>,
}

impl SyntheticData {
    pub fn generate(seed: u64, preprocess: &PreprocessConfig) -> Result<Self> {
        let train = training_corpus(seed).generate()?;
        let test = test_corpus(seed).generate()?;
        Ok(Self {
            train_images: images_from_frames(&train.frames, preprocess).0,
            test_images: images_from_frames(&test.frames, preprocess).0,
            test_ranges: test.ranges,
        })
    }
}

impl SyntheticExperiment {
    pub fn train_config(&self, arch: Architecture) -> TrainConfig {
        let mut c = TrainConfig::for_architecture(arch);
        c.epochs = self.epochs;
        c.seed = self.seed;
        if let Some(b) = self.batch_size {
            c.batch_size = b;
        }
        c
    }

    /// Trains `arch` on the normal-only corpus and scores the labeled test
    /// corpus frame by frame.
    pub fn run(
        &self,
        arch: Architecture,
        data: &SyntheticData,
        on_epoch: impl FnMut(&EpochReport),
    ) -> Result<ExperimentOutcome> {
        let train = dataset_for(arch, &data.train_images, self.model.window, None)?;
        let test = dataset_for(arch, &data.test_images, self.model.window, Some(&data.test_ranges))?;
        let (checkpoint, loss) = train_with(arch, &train, &self.train_config(arch), &self.model, on_epoch)?;
        let scores = score_dataset(&checkpoint, &test, false)?;
        let roc = roc_curve(&scores.labeled_scores())?;
        Ok(ExperimentOutcome {
            checkpoint,
            loss,
            train_items: train.len(),
            scores,
            roc,
        })
    }
}
