//! Segment sampling, mini-batch training, video-level prediction and
//! two-stream fusion.

use std::fmt::Write as _;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::aggregate::SegmentSet;
use crate::config::TrainConfig;
use crate::dataset::{FeatureDataset, VideoRecord};
use crate::error::{Result, TleError};
use crate::head::{argmax, softmax};
use crate::model::{ParamGrads, TleModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// One uniformly random index per part.
    Train,
    /// The central index of each part.
    Test,
}

/// Splits `0..len` into `k` contiguous parts; the first `len % k` parts
/// get one extra element. Returns `(start, end)` pairs, `end` exclusive.
pub fn segment_parts(len: usize, k: usize) -> Vec<(usize, usize)> {
    let base = len / k;
    let extra = len % k;
    let mut start = 0;
    (0..k)
        .map(|i| {
            let size = base + usize::from(i < extra);
            let part = (start, start + size);
            start += size;
            part
        })
        .collect()
}

fn check_length(video: &VideoRecord, k: usize) -> Result<()> {
    if k < 2 {
        return Err(TleError::InvalidArgument(format!("need at least 2 segments, got {k}")));
    }
    if video.len() < k {
        return Err(TleError::InsufficientMaps {
            needed: k,
            available: video.len(),
        });
    }
    Ok(())
}

/// Frame indices chosen for each of the `k` parts.
pub fn segment_indices<R: Rng>(len: usize, k: usize, mode: SampleMode, rng: &mut R) -> Vec<usize> {
    segment_parts(len, k)
        .into_iter()
        .map(|(start, end)| match mode {
            SampleMode::Train => rng.gen_range(start..end),
            SampleMode::Test => (start + end - 1) / 2,
        })
        .collect()
}

pub fn sample_segments<R: Rng>(video: &VideoRecord, k: usize, mode: SampleMode, rng: &mut R) -> Result<SegmentSet> {
    check_length(video, k)?;
    let idx = segment_indices(video.len(), k, mode, rng);
    SegmentSet::new(idx.into_iter().map(|i| video.maps()[i].clone()).collect())
}

/// Indices for test group `group` of `groups`: evenly spaced positions
/// inside each part. A single group picks the part centers.
pub fn group_indices(len: usize, k: usize, group: usize, groups: usize) -> Vec<usize> {
    segment_parts(len, k)
        .into_iter()
        .map(|(start, end)| {
            let size = end - start;
            start + ((2 * group + 1) * size - 1) / (2 * groups)
        })
        .collect()
}

/// Averages the logits of `groups` deterministic segment sets; ties in the
/// arg-max go to the lowest class index.
pub fn predict_video(model: &TleModel, video: &VideoRecord, groups: usize) -> Result<(usize, Vec<f64>)> {
    let k = model.config().segments;
    check_length(video, k)?;
    if groups == 0 {
        return Err(TleError::InvalidArgument("need at least one test group".into()));
    }
    let mut acc = vec![0.0; model.classes()];
    for g in 0..groups {
        let idx = group_indices(video.len(), k, g, groups);
        let set = SegmentSet::new(idx.into_iter().map(|i| video.maps()[i].clone()).collect())?;
        for (a, l) in acc.iter_mut().zip(model.logits(&set)?) {
            *a += l;
        }
    }
    let scores: Vec<f64> = acc.into_iter().map(|a| a / groups as f64).collect();
    Ok((argmax(&scores), scores))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FuseMode {
    /// Average pre-softmax scores.
    Logits,
    /// Average softmax probabilities.
    Probabilities,
}

/// Weighted mean of two score vectors: `w·spatial + (1 − w)·temporal`.
pub fn fuse_streams_weighted(spatial: &[f64], temporal: &[f64], spatial_weight: f64, mode: FuseMode) -> Result<Vec<f64>> {
    if spatial.len() != temporal.len() {
        return Err(TleError::LengthMismatch {
            expected: spatial.len(),
            found: temporal.len(),
        });
    }
    if !(0.0..=1.0).contains(&spatial_weight) {
        return Err(TleError::InvalidArgument(format!("fusion weight must lie in [0, 1], got {spatial_weight}")));
    }
    let (a, b) = match mode {
        FuseMode::Logits => (spatial.to_vec(), temporal.to_vec()),
        FuseMode::Probabilities => (softmax(spatial), softmax(temporal)),
    };
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| spatial_weight * x + (1.0 - spatial_weight) * y)
        .collect())
}

/// Equal-weight average of the two streams' pre-softmax scores.
pub fn fuse_streams(spatial: &[f64], temporal: &[f64]) -> Result<Vec<f64>> {
    if spatial.len() != temporal.len() {
        return Err(TleError::LengthMismatch {
            expected: spatial.len(),
            found: temporal.len(),
        });
    }
    Ok(spatial.iter().zip(temporal).map(|(a, b)| (a + b) / 2.0).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub iter: u64,
    pub phase: &'static str,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub epoch: u64,
    pub split: String,
    pub accuracy: f64,
}

/// Training metrics: one line per iteration and one per evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub iters: Vec<IterRecord>,
    pub evals: Vec<EvalRecord>,
}

impl TrainLog {
    /// Lines `iter,phase,loss,lr` then `epoch,split,accuracy`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.iters {
            let _ = writeln!(s, "{},{},{},{}", r.iter, r.phase, r.loss, r.lr);
        }
        for e in &self.evals {
            let _ = writeln!(s, "{},{},{}", e.epoch, e.split, e.accuracy);
        }
        s
    }

    pub fn append_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    /// Mean loss over consecutive non-overlapping windows.
    pub fn windowed_loss(&self, window: usize) -> Vec<f64> {
        self.iters
            .chunks_exact(window)
            .map(|c| c.iter().map(|r| r.loss).sum::<f64>() / window as f64)
            .collect()
    }
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Video order for one pass over the data. Reseeded per epoch from the
/// global seed, so any iteration can be reconstructed without replaying.
fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, epoch));
    order.shuffle(&mut rng);
    order
}

fn slot_rng(seed: u64, epoch: u64, slot: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, epoch));
    rng.set_stream(slot as u64 + 1);
    rng
}

fn check_compatible(model: &TleModel, dataset: &FeatureDataset) -> Result<()> {
    if dataset.classes() != model.classes() {
        return Err(TleError::DimensionMismatch(format!(
            "model has {} classes, dataset has {}",
            model.classes(),
            dataset.classes()
        )));
    }
    let shape = dataset.uniform_shape()?;
    if shape != model.input_shape() {
        return Err(TleError::DimensionMismatch(format!(
            "model expects {} feature maps, dataset has {shape}",
            model.input_shape()
        )));
    }
    Ok(())
}

/// Fresh model sized for `dataset`, trained for the full schedule.
pub fn train(dataset: &FeatureDataset, config: &TrainConfig) -> Result<(TleModel, TrainLog)> {
    let mut model = TleModel::new(config.clone(), dataset.uniform_shape()?, dataset.classes())?;
    let log = train_steps(&mut model, dataset, u64::MAX)?;
    Ok((model, log))
}

/// Runs up to `max_steps` further iterations, stopping at the end of the
/// schedule. The model's iteration counter and momentum buffers carry all
/// state, so training can stop, be saved, and resume bit-identically.
pub fn train_steps(model: &mut TleModel, dataset: &FeatureDataset, max_steps: u64) -> Result<TrainLog> {
    if dataset.is_empty() {
        return Err(TleError::EmptyDataset);
    }
    check_compatible(model, dataset)?;
    let cfg = model.config().clone();
    let k = cfg.segments;
    if let Some(v) = dataset.videos().iter().find(|v| v.len() < k) {
        return Err(TleError::InsufficientMaps {
            needed: k,
            available: v.len(),
        });
    }
    let n = dataset.len();
    let batch = cfg.batch_size;
    let end = cfg.total_iters().min(model.iteration().saturating_add(max_steps));
    let mut log = TrainLog::default();
    let mut order_cache: Option<(u64, Vec<usize>)> = None;
    let mut epoch_hits = (0usize, 0usize);
    let mut current_epoch = (model.iteration() * batch as u64) / n as u64;

    while model.iteration() < end {
        let iter = model.iteration();
        let (phase, _) = cfg.phase_at(iter);
        let lr = cfg.learning_rate_at(iter);
        let train_encoder = model.encoder_trains_in(phase);

        let mut picks = Vec::with_capacity(batch);
        for b in 0..batch {
            let pos = iter * batch as u64 + b as u64;
            let epoch = pos / n as u64;
            let slot = (pos % n as u64) as usize;
            if order_cache.as_ref().map(|(e, _)| *e) != Some(epoch) {
                order_cache = Some((epoch, epoch_order(cfg.seed, epoch, n)));
            }
            let video = order_cache.as_ref().expect("cached above").1[slot];
            picks.push((epoch, slot, video));
        }

        let results = picks
            .par_iter()
            .map(|&(epoch, slot, video)| {
                let v = &dataset.videos()[video];
                let mut rng = slot_rng(cfg.seed, epoch, slot);
                let set = sample_segments(v, k, SampleMode::Train, &mut rng)?;
                let back = model.backward(&set, v.label, train_encoder, false)?;
                Ok((epoch, argmax(&back.logits) == v.label, back))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut total: Option<ParamGrads> = None;
        let mut loss = 0.0;
        for (epoch, correct, back) in &results {
            if *epoch != current_epoch {
                if epoch_hits.1 > 0 {
                    log.evals.push(EvalRecord {
                        epoch: current_epoch,
                        split: "train".into(),
                        accuracy: epoch_hits.0 as f64 / epoch_hits.1 as f64,
                    });
                }
                current_epoch = *epoch;
                epoch_hits = (0, 0);
            }
            epoch_hits.0 += usize::from(*correct);
            epoch_hits.1 += 1;
            loss += back.loss;
            match &mut total {
                None => total = Some(back.params.clone()),
                Some(t) => t.add_assign(&back.params),
            }
        }
        let mut grads = total.expect("batch is nonempty");
        grads.scale(1.0 / batch as f64);
        if grads.to_vec().iter().any(|g| !g.is_finite()) {
            return Err(TleError::InvalidArgument(format!("non-finite gradient at iteration {iter}")));
        }
        model.sgd_step(&grads, lr)?;
        model.advance_iteration();
        log.iters.push(IterRecord {
            iter,
            phase: phase.name(),
            loss: loss / batch as f64,
            lr,
        });
    }
    if epoch_hits.1 > 0 {
        log.evals.push(EvalRecord {
            epoch: current_epoch,
            split: "train".into(),
            accuracy: epoch_hits.0 as f64 / epoch_hits.1 as f64,
        });
    }
    Ok(log)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoPrediction {
    pub id: String,
    pub label: usize,
    pub predicted: usize,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `(correct, total)` per class.
    pub per_class: Vec<(usize, usize)>,
    pub predictions: Vec<VideoPrediction>,
}

/// Video-level accuracy with `groups` segment groups per video.
pub fn evaluate(model: &TleModel, dataset: &FeatureDataset, groups: usize) -> Result<EvalReport> {
    check_compatible(model, dataset)?;
    let predictions = dataset
        .videos()
        .par_iter()
        .map(|v| {
            let (predicted, scores) = predict_video(model, v, groups)?;
            Ok(VideoPrediction {
                id: v.id.clone(),
                label: v.label,
                predicted,
                scores,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(report_from(predictions, dataset.classes()))
}

pub(crate) fn report_from(predictions: Vec<VideoPrediction>, classes: usize) -> EvalReport {
    let mut per_class = vec![(0, 0); classes];
    for p in &predictions {
        per_class[p.label].1 += 1;
        per_class[p.label].0 += usize::from(p.predicted == p.label);
    }
    let correct: usize = per_class.iter().map(|c| c.0).sum();
    EvalReport {
        accuracy: correct as f64 / predictions.len().max(1) as f64,
        per_class,
        predictions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EncoderKind;
    use crate::dataset::{synth_dataset, Split, StreamTag, SynthConfig};
    use crate::tensor::{FeatureMap, Shape};

    fn video(n: usize) -> VideoRecord {
        let maps = (0..n)
            .map(|i| FeatureMap::from_dims(1, 1, 1, vec![i as f64]).unwrap())
            .collect();
        VideoRecord::new("v", 0, StreamTag::Spatial, maps).unwrap()
    }

    fn picked(set: &SegmentSet) -> Vec<usize> {
        set.segments().iter().map(|m| m.values()[0] as usize).collect()
    }

    #[test]
    fn test_mode_centers() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_segments(&video(30), 3, SampleMode::Test, &mut rng).unwrap();
        assert_eq!(picked(&s), vec![4, 14, 24]);
    }

    #[test]
    fn singleton_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for mode in [SampleMode::Train, SampleMode::Test] {
            let s = sample_segments(&video(3), 3, mode, &mut rng).unwrap();
            assert_eq!(picked(&s), vec![0, 1, 2]);
        }
    }

    #[test]
    fn remainder_goes_first() {
        let sizes: Vec<usize> = segment_parts(10, 3).iter().map(|(a, b)| b - a).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
    }

    #[test]
    fn train_mode_stays_in_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let idx = segment_indices(10, 3, SampleMode::Train, &mut rng);
            assert!(idx[0] < 4 && (4..7).contains(&idx[1]) && (7..10).contains(&idx[2]));
        }
    }

    #[test]
    fn too_few_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_segments(&video(2), 3, SampleMode::Test, &mut rng),
            Err(TleError::InsufficientMaps { needed: 3, available: 2 })
        ));
    }

    #[test]
    fn one_group_is_the_test_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for n in 3..40 {
            let s = sample_segments(&video(n), 3, SampleMode::Test, &mut rng).unwrap();
            assert_eq!(group_indices(n, 3, 0, 1), picked(&s));
        }
        assert_eq!(group_indices(30, 3, 0, 5), vec![0, 10, 20]);
        assert_eq!(group_indices(30, 3, 4, 5), vec![8, 18, 28]);
    }

    #[test]
    fn fusion_examples() {
        assert_eq!(fuse_streams(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(fuse_streams(&[2.0, 0.0], &[0.0, 2.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(argmax(&fuse_streams(&[10.0, 0.0], &[0.0, 1.0]).unwrap()), 0);
        assert!(fuse_streams(&[1.0], &[1.0, 2.0]).is_err());
        let w = fuse_streams_weighted(&[2.0, 0.0], &[0.0, 2.0], 0.75, FuseMode::Logits).unwrap();
        assert_eq!(w, vec![1.5, 0.5]);
        let p = fuse_streams_weighted(&[0.0, 0.0], &[0.0, 0.0], 0.5, FuseMode::Probabilities).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    fn small_data() -> FeatureDataset {
        let cfg = SynthConfig {
            classes: 3,
            videos_per_class: 4,
            frames: 6,
            shape: Shape::new(2, 2, 3).unwrap(),
            ..Default::default()
        };
        synth_dataset(&cfg, Split::Train).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            sketch_dim: 16,
            max_iters: 30,
            lr_step: 10,
            batch_size: 4,
            learning_rate: 0.5,
            ..Default::default()
        }
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let data = small_data();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..small_config()
        };
        let (model, log) = train(&data, &cfg).unwrap();
        assert!(model.parameter_vector(true).iter().all(|&p| p == 0.0));
        let first = log.iters[0].loss;
        assert!(log.iters.iter().all(|r| r.loss == first));
        assert!((first - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic() {
        let data = small_data();
        let (a, la) = train(&data, &small_config()).unwrap();
        let (b, lb) = train(&data, &small_config()).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn stepwise_equals_straight_through() {
        let data = small_data();
        for encoder in [EncoderKind::TensorSketch, EncoderKind::Fc] {
            let cfg = TrainConfig {
                encoder,
                ..small_config()
            };
            let (straight, _) = train(&data, &cfg).unwrap();
            let mut model = TleModel::new(cfg, data.uniform_shape().unwrap(), 3).unwrap();
            train_steps(&mut model, &data, 13).unwrap();
            assert_eq!(model.iteration(), 13);
            train_steps(&mut model, &data, u64::MAX).unwrap();
            assert_eq!(model, straight);
        }
    }

    #[test]
    fn log_lines() {
        let data = small_data();
        let (_, log) = train(&data, &small_config()).unwrap();
        assert_eq!(log.iters.len(), 30);
        let text = log.to_text();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with("0,head,"), "{first}");
        assert!(text.lines().any(|l| l.contains(",train,")));
    }

    #[test]
    fn constant_logits_pick_class_zero() {
        let data = small_data();
        let model = TleModel::new(small_config(), data.uniform_shape().unwrap(), 3).unwrap();
        let report = evaluate(&model, &data, 5).unwrap();
        assert!(report.predictions.iter().all(|p| p.predicted == 0));
        assert!((report.accuracy - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_group_matches_forward() {
        let data = small_data();
        let (model, _) = train(&data, &small_config()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for v in data.videos() {
            let set = sample_segments(v, 3, SampleMode::Test, &mut rng).unwrap();
            let (_, logits) = model.forward_video(&set, v.label).unwrap();
            let (pred, scores) = predict_video(&model, v, 1).unwrap();
            assert_eq!(scores, logits);
            assert_eq!(pred, argmax(&logits));
        }
    }

    #[test]
    fn incompatible_model_rejected() {
        let data = small_data();
        let model = TleModel::new(small_config(), data.uniform_shape().unwrap(), 4).unwrap();
        assert!(matches!(evaluate(&model, &data, 1), Err(TleError::DimensionMismatch(_))));
    }
}
