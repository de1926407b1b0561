//! Central finite-difference oracle and the gradient-check suites for every
//! backward pass in the crate.
//!
//! Each suite draws random instances, reduces the operation to a scalar by
//! contracting its output with a random probe vector, and compares the
//! analytic gradient against `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h`. Relative
//! error per coordinate is `|a − n| / max(|a|, |n|, 1e-8)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::aggregate::{aggregate_backward, aggregate_forward, AggregationMode, SegmentSet};
use crate::bilinear::{bilinear_backward, bilinear_forward};
use crate::config::{EncoderKind, TrainConfig};
use crate::dataset::{FeatureDataset, Split, StreamTag, VideoRecord};
use crate::error::{Result, TleError};
use crate::head::{softmax, softmax_cross_entropy, Affine, FcEncoder};
use crate::model::TleModel;
use crate::normalize::{l2_normalize, l2_normalize_backward, signed_sqrt, signed_sqrt_backward};
use crate::sketch::{SketchPath, TensorSketchEncoder};
use crate::tensor::{EncodedVector, FeatureMap, Shape};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TRIALS: usize = 50;
/// Minimum `|y|` for instances that pass through the signed square root.
pub const SIGNED_SQRT_MARGIN: f64 = 0.1;
/// Share of exact zeros planted in product-aggregation instances.
const PRODUCT_ZERO_RATE: f64 = 0.1;

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff<F>(f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = f(&probe);
        probe[i] = orig - step;
        let minus = f(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(TleError::NonFiniteEvaluation { coordinate: i });
        }
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateCheck {
    pub analytic: f64,
    pub numeric: f64,
    pub abs_error: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub trial: usize,
    pub coordinates: Vec<CoordinateCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradReport {
    pub fn compare(trial: usize, analytic: &[f64], numeric: &[f64], tolerance: f64) -> Self {
        assert_eq!(analytic.len(), numeric.len());
        let coordinates: Vec<CoordinateCheck> = analytic
            .iter()
            .zip(numeric)
            .map(|(&a, &n)| CoordinateCheck {
                analytic: a,
                numeric: n,
                abs_error: (a - n).abs(),
                rel_error: relative_error(a, n),
            })
            .collect();
        let max_rel_error = coordinates.iter().map(|c| c.rel_error).fold(0.0, f64::max);
        GradReport {
            trial,
            coordinates,
            max_rel_error,
            tolerance,
            passed: max_rel_error <= tolerance,
        }
    }
}

type Objective = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// One randomized instance: a scalar objective, the point to differentiate
/// at, the analytic gradient there, and the inputs needed to replay it.
pub struct GradProblem {
    pub point: Vec<f64>,
    pub analytic: Vec<f64>,
    pub objective: Objective,
    pub replay: Vec<FeatureMap>,
}

/// Outcome of one suite. Reports stop at the first failing trial.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub tolerance: f64,
    pub reports: Vec<GradReport>,
    pub failed_trial: Option<usize>,
    /// The failing instance, one single-map video per input.
    pub replay: Option<FeatureDataset>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.failed_trial.is_none()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }
}

fn replay_dataset(name: &str, trial: usize, maps: &[FeatureMap]) -> Result<FeatureDataset> {
    let videos = maps
        .iter()
        .enumerate()
        .map(|(i, m)| VideoRecord::new(format!("{name}/trial{trial}/input{i}"), 0, StreamTag::Spatial, vec![m.clone()]))
        .collect::<Result<Vec<_>>>()?;
    FeatureDataset::new(1, videos, Split::Test)
}

/// Runs `trials` instances from `generate`. Trial `t` draws from a ChaCha8
/// stream keyed by `(seed, t)`, so outcomes do not depend on scheduling.
pub fn check<G>(name: &str, generate: G, tolerance: f64, trials: usize, step: f64, seed: u64) -> Result<CheckOutcome>
where
    G: Fn(&mut ChaCha8Rng) -> Result<GradProblem> + Sync,
{
    let runs = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let problem = generate(&mut rng)?;
            let numeric = finite_diff(&problem.objective, &problem.point, step)?;
            Ok((GradReport::compare(t, &problem.analytic, &numeric, tolerance), problem.replay))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut reports = Vec::new();
    let mut failed_trial = None;
    let mut replay = None;
    for (report, maps) in runs {
        let ok = report.passed;
        let trial = report.trial;
        reports.push(report);
        if !ok {
            failed_trial = Some(trial);
            replay = Some(replay_dataset(name, trial, &maps)?);
            break;
        }
    }
    Ok(CheckOutcome {
        name: name.to_owned(),
        tolerance,
        reports,
        failed_trial,
        replay,
    })
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for term in values {
        let t = sum + term;
        comp += if sum.abs() >= term.abs() {
            (sum - t) + term
        } else {
            (term - t) + sum
        };
        sum = t;
    }
    sum + comp
}

/// Probe inner product. Compensated so that the objective's own rounding
/// does not swamp small gradient coordinates.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    compensated_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Entries with magnitude in `[lo, hi)` and a random sign. Keeps gradient
/// coordinates well above the finite-difference roundoff floor.
fn signed_magnitudes(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.gen_range(lo..hi);
            if rng.gen() {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn probe_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    signed_magnitudes(rng, n, 0.5, 1.0)
}

fn random_shape(rng: &mut ChaCha8Rng, max_h: usize, max_w: usize, max_c: usize) -> Shape {
    Shape {
        height: rng.gen_range(1..=max_h),
        width: rng.gen_range(1..=max_w),
        channels: rng.gen_range(1..=max_c),
    }
}

fn vector_map(v: &[f64]) -> FeatureMap {
    FeatureMap::from_dims(1, 1, v.len(), v.to_vec()).expect("finite probe vector")
}

fn split_segments(x: &[f64], shape: Shape) -> SegmentSet {
    SegmentSet::new(
        x.chunks(shape.len())
            .map(|c| FeatureMap::new(shape, c.to_vec()).expect("finite perturbed input"))
            .collect(),
    )
    .expect("consistent segments")
}

/// Segments whose per-element arg-max leads by more than `margin`.
fn separated_segments(rng: &mut ChaCha8Rng, k: usize, shape: Shape, margin: f64) -> Vec<f64> {
    let n = shape.len();
    let mut out = vec![0.0; k * n];
    for i in 0..n {
        let winner = rng.gen_range(0..k);
        let top = rng.gen_range(-1.0..1.0);
        for j in 0..k {
            out[j * n + i] = if j == winner {
                top
            } else {
                top - margin - rng.gen_range(0.0..1.0)
            };
        }
    }
    out
}

/// Aggregation backward for one mode; `corrupt` flips the analytic sign.
pub fn aggregation_problem(rng: &mut ChaCha8Rng, mode: AggregationMode, corrupt: bool) -> Result<GradProblem> {
    let k = rng.gen_range(2..=4);
    let shape = random_shape(rng, 3, 3, 5);
    let point = match mode {
        AggregationMode::Maximum => separated_segments(rng, k, shape, 4.0 * DEFAULT_STEP),
        AggregationMode::Average => signed_magnitudes(rng, k * shape.len(), 0.5, 1.5),
        AggregationMode::Product => signed_magnitudes(rng, k * shape.len(), 0.5, 1.5)
            .into_iter()
            .map(|v| if rng.gen_bool(PRODUCT_ZERO_RATE) { 0.0 } else { v })
            .collect(),
    };
    let probe = probe_vector(rng, shape.len());
    let set = split_segments(&point, shape);
    let upstream = FeatureMap::new(shape, probe.clone())?;
    let sign = if corrupt { -1.0 } else { 1.0 };
    let analytic = aggregate_backward(&set, mode, &upstream)?
        .into_iter()
        .flat_map(|m| m.into_values())
        .map(|v| sign * v)
        .collect();
    let mut replay = set.into_segments();
    replay.push(upstream);
    Ok(GradProblem {
        point,
        analytic,
        objective: Box::new(move |x| {
            let out = aggregate_forward(&split_segments(x, shape), mode).expect("valid segments");
            dot(out.values(), &probe)
        }),
        replay,
    })
}

pub fn bilinear_problem(rng: &mut ChaCha8Rng) -> Result<GradProblem> {
    let shape = random_shape(rng, 3, 3, 5);
    let point = uniform(rng, shape.len(), -1.0, 1.0);
    let c = shape.channels;
    let probe = probe_vector(rng, c * c);
    let x = FeatureMap::new(shape, point.clone())?;
    let analytic = bilinear_backward(&x, &EncodedVector::new(probe.clone())?)?.into_values();
    let replay = vec![x, vector_map(&probe)];
    Ok(GradProblem {
        point,
        analytic,
        objective: Box::new(move |v| {
            let m = FeatureMap::new(shape, v.to_vec()).expect("finite");
            dot(bilinear_forward(&m).values(), &probe)
        }),
        replay,
    })
}

pub fn tensor_sketch_problem(rng: &mut ChaCha8Rng) -> Result<GradProblem> {
    let shape = random_shape(rng, 3, 3, 6);
    let d = rng.gen_range(2..=20);
    let encoder = TensorSketchEncoder::new(shape.channels, d, rng.gen())?;
    let point = uniform(rng, shape.len(), -1.0, 1.0);
    let probe = probe_vector(rng, d);
    let path = if rng.gen() { SketchPath::Fft } else { SketchPath::Direct };
    let x = FeatureMap::new(shape, point.clone())?;
    let analytic = encoder.backward_with(&x, &EncodedVector::new(probe.clone())?, path)?.into_values();
    let replay = vec![x, vector_map(&probe)];
    Ok(GradProblem {
        point,
        analytic,
        objective: Box::new(move |v| {
            let m = FeatureMap::new(shape, v.to_vec()).expect("finite");
            dot(encoder.forward_with(&m, path).expect("channels match").values(), &probe)
        }),
        replay,
    })
}

pub fn signed_sqrt_problem(rng: &mut ChaCha8Rng) -> Result<GradProblem> {
    let n = rng.gen_range(1..=16);
    let point: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.gen_range(SIGNED_SQRT_MARGIN..3.0);
            if rng.gen() {
                m
            } else {
                -m
            }
        })
        .collect();
    let probe = probe_vector(rng, n);
    let analytic = signed_sqrt_backward(&point, &probe);
    let replay = vec![vector_map(&point), vector_map(&probe)];
    Ok(GradProblem {
        point,
        analytic,
        objective: Box::new(move |v| dot(&signed_sqrt(v), &probe)),
        replay,
    })
}

pub fn l2_problem(rng: &mut ChaCha8Rng) -> Result<GradProblem> {
    let n = rng.gen_range(1..=16);
    let point = uniform(rng, n, -2.0, 2.0);
    let probe = probe_vector(rng, n);
    let analytic = l2_normalize_backward(&point, &probe);
    let replay = vec![vector_map(&point), vector_map(&probe)];
    Ok(GradProblem {
        point,
        analytic,
        objective: Box::new(move |v| dot(&l2_normalize(v), &probe)),
        replay,
    })
}

/// FC encoder: gradient with respect to the input and every parameter.
pub fn fc_problem(rng: &mut ChaCha8Rng) -> Result<GradProblem> {
    let shape = random_shape(rng, 2, 2, 3);
    let n_in = shape.len();
    let n_out = rng.gen_range(1..=6);
    let x = signed_magnitudes(rng, n_in, 0.5, 1.0);
    let w = uniform(rng, n_out * n_in, -1.0, 1.0);
    let b = uniform(rng, n_out, -1.0, 1.0);
    let probe = probe_vector(rng, n_out);
    let enc = FcEncoder::new(Affine::from_parts(n_out, n_in, w.clone(), b.clone())?);
    let map = FeatureMap::new(shape, x.clone())?;
    let (dx, grads) = enc.backward(&map, &EncodedVector::new(probe.clone())?)?;
    let mut point = x;
    point.extend(&w);
    point.extend(&b);
    let mut analytic = dx.into_values();
    analytic.extend(grads.weights);
    analytic.extend(grads.bias);
    let replay = vec![map, vector_map(&w), vector_map(&b), vector_map(&probe)];
    Ok(GradProblem {
        point,
        analytic,
        objective: Box::new(move |v| {
            let (xv, rest) = v.split_at(n_in);
            let (wv, bv) = rest.split_at(n_out * n_in);
            let layer = Affine::from_parts(n_out, n_in, wv.to_vec(), bv.to_vec()).expect("finite");
            dot(&layer.forward(xv).expect("sized"), &probe)
        }),
        replay,
    })
}

/// Classifier: linear head followed by softmax cross-entropy, checked with
/// respect to features, weights and bias.
pub fn classifier_problem(rng: &mut ChaCha8Rng) -> Result<GradProblem> {
    let classes = rng.gen_range(2..=6);
    let d = rng.gen_range(1..=8);
    let label = rng.gen_range(0..classes);
    let y = signed_magnitudes(rng, d, 0.5, 1.0);
    let w = uniform(rng, classes * d, -0.3, 0.3);
    let b = uniform(rng, classes, -0.5, 0.5);
    let layer = Affine::from_parts(classes, d, w.clone(), b.clone())?;
    let logits = layer.forward(&y)?;
    let p0 = softmax(&logits);
    let (_, dlogits) = softmax_cross_entropy(&logits, label)?;
    let (dy, grads) = layer.backward(&y, &dlogits)?;
    let mut point = y.clone();
    point.extend(&w);
    point.extend(&b);
    let mut analytic = dy;
    analytic.extend(grads.weights);
    analytic.extend(grads.bias);
    let replay = vec![vector_map(&y), vector_map(&w), vector_map(&b)];
    Ok(GradProblem {
        point,
        analytic,
        objective: Box::new(move |v| {
            // Loss change from the base point, evaluated without cancellation:
            // logit deltas term by term, then ln(Σ p₀ exp Δz) via ln_1p/expm1.
            let (yv, rest) = v.split_at(d);
            let (wv, bv) = rest.split_at(classes * d);
            let dz: Vec<f64> = (0..classes)
                .map(|c| {
                    let terms = (0..d).map(|j| {
                        let (w1, y1) = (wv[c * d + j], yv[j]);
                        let (w0, y0) = (w[c * d + j], y[j]);
                        (w1 - w0) * y1 + w0 * (y1 - y0)
                    });
                    compensated_sum(terms.chain([bv[c] - b[c]]))
                })
                .collect();
            compensated_sum(p0.iter().zip(&dz).map(|(p, z)| p * z.exp_m1())).ln_1p() - dz[label]
        }),
        replay,
    })
}

/// Whole chain aggregate → encode → signed sqrt → L2 → linear →
/// cross-entropy, differentiated with respect to every segment input and
/// every trainable parameter. Instances are redrawn until all pooled
/// entries satisfy `|y| > 0.1`.
pub fn pipeline_problem(rng: &mut ChaCha8Rng, encoder: EncoderKind) -> Result<GradProblem> {
    loop {
        let k = rng.gen_range(2..=3);
        let shape = random_shape(rng, 2, 2, 6);
        let mode = [AggregationMode::Average, AggregationMode::Product][rng.gen_range(0..2)];
        let classes = rng.gen_range(2..=4);
        let cfg = TrainConfig {
            segments: k,
            aggregation: mode,
            encoder,
            sketch_dim: rng.gen_range(4..=16),
            fc_dim: rng.gen_range(2..=6),
            seed: rng.gen(),
            ..Default::default()
        };
        let mut model = TleModel::new(cfg, shape, classes)?;
        let n_params = model.parameter_vector(true).len();
        let params = uniform(rng, n_params, -0.5, 0.5);
        model.set_parameter_vector(&params, true)?;
        let inputs = uniform(rng, k * shape.len(), 0.3, 1.5);
        let set = split_segments(&inputs, shape);
        let label = rng.gen_range(0..classes);

        if encoder.normalizes() {
            let aggregated = aggregate_forward(&set, mode)?;
            let pooled = model.encoder().forward(&aggregated)?;
            if pooled.values().iter().any(|v| v.abs() <= SIGNED_SQRT_MARGIN) {
                continue;
            }
        }

        let back = model.backward(&set, label, true, true)?;
        let mut analytic: Vec<f64> = back
            .segments
            .expect("input gradients requested")
            .into_iter()
            .flat_map(|m| m.into_values())
            .collect();
        analytic.extend(back.params.to_vec());
        let mut point = inputs;
        point.extend(&params);
        let n_inputs = k * shape.len();
        let replay = set.into_segments();
        return Ok(GradProblem {
            point,
            analytic,
            objective: Box::new(move |v| {
                let (xv, pv) = v.split_at(n_inputs);
                let mut m = model.clone();
                m.set_parameter_vector(pv, true).expect("sized");
                m.forward_video(&split_segments(xv, shape), label).expect("consistent").0
            }),
            replay,
        });
    }
}

type Generator = Box<dyn Fn(&mut ChaCha8Rng) -> Result<GradProblem> + Sync + Send>;

/// A named suite with its tolerance.
pub struct Suite {
    pub name: &'static str,
    pub tolerance: f64,
    generate: Generator,
}

impl Suite {
    pub fn run(&self, trials: usize, step: f64, seed: u64) -> Result<CheckOutcome> {
        check(self.name, &self.generate, self.tolerance, trials, step, seed)
    }
}

/// Every backward pass in the crate. Component suites use 1e-6 except the
/// tensor sketch (1e-5); the composed pipelines use 1e-4.
pub fn all_suites() -> Vec<Suite> {
    fn suite<F>(name: &'static str, tolerance: f64, f: F) -> Suite
    where
        F: Fn(&mut ChaCha8Rng) -> Result<GradProblem> + Sync + Send + 'static,
    {
        Suite {
            name,
            tolerance,
            generate: Box::new(f),
        }
    }
    vec![
        suite("aggregate_average", 1e-6, |r| aggregation_problem(r, AggregationMode::Average, false)),
        suite("aggregate_maximum", 1e-6, |r| aggregation_problem(r, AggregationMode::Maximum, false)),
        suite("aggregate_product", 1e-6, |r| aggregation_problem(r, AggregationMode::Product, false)),
        suite("bilinear", 1e-6, bilinear_problem),
        suite("tensor_sketch", 1e-5, tensor_sketch_problem),
        suite("signed_sqrt", 1e-6, signed_sqrt_problem),
        suite("l2_normalize", 1e-6, l2_problem),
        suite("fc_encoder", 1e-6, fc_problem),
        suite("classifier", 1e-6, classifier_problem),
        suite("pipeline_bilinear", 1e-4, |r| pipeline_problem(r, EncoderKind::Bilinear)),
        suite("pipeline_tensor_sketch", 1e-4, |r| pipeline_problem(r, EncoderKind::TensorSketch)),
        suite("pipeline_fc", 1e-4, |r| pipeline_problem(r, EncoderKind::Fc)),
    ]
}
