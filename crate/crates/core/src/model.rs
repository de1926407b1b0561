//! The TLE model: aggregation, encoding, normalization and classification
//! over K segments that share one parameter set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aggregate::{aggregate_backward, aggregate_forward, SegmentSet};
use crate::bilinear::{bilinear_backward, bilinear_dim, bilinear_forward};
use crate::config::{EncoderKind, Phase, TrainConfig};
use crate::error::{Result, TleError};
use crate::head::{softmax_cross_entropy, Affine, AffineGrads, ClassifierHead, FcEncoder};
use crate::normalize::{l2_normalize, l2_normalize_backward, signed_sqrt, signed_sqrt_backward};
use crate::optim::sgd_update;
use crate::sketch::TensorSketchEncoder;
use crate::tensor::{EncodedVector, FeatureMap, Shape};

/// Stream offset separating the FC initializer from other seeded draws.
const FC_INIT_STREAM: u64 = 0x6663_696e_6974;

#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    Bilinear { channels: usize },
    TensorSketch(TensorSketchEncoder),
    Fc(FcEncoder),
}

impl Encoder {
    pub fn kind(&self) -> EncoderKind {
        match self {
            Encoder::Bilinear { .. } => EncoderKind::Bilinear,
            Encoder::TensorSketch(_) => EncoderKind::TensorSketch,
            Encoder::Fc(_) => EncoderKind::Fc,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Encoder::Bilinear { channels } => bilinear_dim(*channels),
            Encoder::TensorSketch(ts) => ts.output_dim(),
            Encoder::Fc(fc) => fc.output_dim(),
        }
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<EncodedVector> {
        match self {
            Encoder::Bilinear { channels } => {
                if x.shape().channels != *channels {
                    return Err(TleError::DimensionMismatch(format!(
                        "bilinear encoder expects {channels} channels, input has {}",
                        x.shape().channels
                    )));
                }
                Ok(bilinear_forward(x))
            }
            Encoder::TensorSketch(ts) => ts.forward(x),
            Encoder::Fc(fc) => fc.forward(x),
        }
    }
}

/// Gradients of the trainable parameters. `fc` is `None` when the encoder
/// has no parameters or they are frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub head: AffineGrads,
    pub fc: Option<AffineGrads>,
}

impl ParamGrads {
    pub fn add_assign(&mut self, other: &ParamGrads) {
        self.head.add_assign(&other.head);
        match (&mut self.fc, &other.fc) {
            (Some(a), Some(b)) => a.add_assign(b),
            (None, None) => {}
            _ => panic!("mismatched gradient structure"),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.head.scale(factor);
        if let Some(fc) = &mut self.fc {
            fc.scale(factor);
        }
    }

    /// Flat view in the order head weights, head bias, fc weights, fc bias.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.head.weights.clone();
        v.extend(&self.head.bias);
        if let Some(fc) = &self.fc {
            v.extend(&fc.weights);
            v.extend(&fc.bias);
        }
        v
    }
}

/// Output of a full forward and backward pass on one segment set.
#[derive(Debug, Clone)]
pub struct Backward {
    pub loss: f64,
    pub logits: Vec<f64>,
    pub params: ParamGrads,
    /// Per-segment input gradients, when requested.
    pub segments: Option<Vec<FeatureMap>>,
}

/// Momentum buffers and the global iteration counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub iteration: u64,
    pub head: AffineGrads,
    pub fc: Option<AffineGrads>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TleModel {
    config: TrainConfig,
    input_shape: Shape,
    encoder: Encoder,
    head: ClassifierHead,
    optim: OptimState,
}

struct Trace {
    aggregated: FeatureMap,
    encoded: Vec<f64>,
    rooted: Vec<f64>,
    features: Vec<f64>,
    logits: Vec<f64>,
}

impl TleModel {
    /// Fresh model: zero classifier head, sketch tables from `config.seed`,
    /// FC weights uniform in `±√(3/n_in)`.
    pub fn new(config: TrainConfig, input_shape: Shape, classes: usize) -> Result<Self> {
        config.validate()?;
        let c = input_shape.channels;
        let encoder = match config.encoder {
            EncoderKind::Bilinear => Encoder::Bilinear { channels: c },
            EncoderKind::TensorSketch => {
                Encoder::TensorSketch(TensorSketchEncoder::new(c, config.sketch_dim, config.seed)?)
            }
            EncoderKind::Fc => {
                let n_in = input_shape.len();
                let bound = (3.0 / n_in as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(FC_INIT_STREAM);
                let weights = (0..config.fc_dim * n_in).map(|_| rng.gen_range(-bound..bound)).collect();
                Encoder::Fc(FcEncoder::new(Affine::from_parts(
                    config.fc_dim,
                    n_in,
                    weights,
                    vec![0.0; config.fc_dim],
                )?))
            }
        };
        let head = ClassifierHead::zeros(classes, encoder.output_dim())?;
        Self::from_parts(config, input_shape, encoder, head, None)
    }

    /// Assembles a model, checking that component dimensions agree.
    pub fn from_parts(
        config: TrainConfig,
        input_shape: Shape,
        encoder: Encoder,
        head: ClassifierHead,
        optim: Option<OptimState>,
    ) -> Result<Self> {
        config.validate()?;
        if encoder.kind() != config.encoder {
            return Err(TleError::DimensionMismatch(format!(
                "config names encoder {} but model carries {}",
                config.encoder,
                encoder.kind()
            )));
        }
        match &encoder {
            Encoder::Bilinear { channels } if *channels != input_shape.channels => {
                return Err(TleError::DimensionMismatch("bilinear channels differ from input shape".into()))
            }
            Encoder::TensorSketch(ts) if ts.input_dim() != input_shape.channels => {
                return Err(TleError::DimensionMismatch("sketch input dim differs from input channels".into()))
            }
            Encoder::Fc(fc) if fc.input_dim() != input_shape.len() => {
                return Err(TleError::DimensionMismatch("fc input dim differs from h·w·c".into()))
            }
            _ => {}
        }
        if head.dim() != encoder.output_dim() {
            return Err(TleError::DimensionMismatch(format!(
                "encoder emits {} features, classifier expects {}",
                encoder.output_dim(),
                head.dim()
            )));
        }
        let fresh = OptimState {
            iteration: 0,
            head: AffineGrads::zeros_like(head.layer()),
            fc: match &encoder {
                Encoder::Fc(fc) => Some(AffineGrads::zeros_like(fc.layer())),
                _ => None,
            },
        };
        let optim = match optim {
            None => fresh,
            Some(o) => {
                let same = |a: &AffineGrads, b: &AffineGrads| {
                    a.weights.len() == b.weights.len() && a.bias.len() == b.bias.len()
                };
                let fc_ok = match (&o.fc, &fresh.fc) {
                    (Some(a), Some(b)) => same(a, b),
                    (None, None) => true,
                    _ => false,
                };
                if !same(&o.head, &fresh.head) || !fc_ok {
                    return Err(TleError::DimensionMismatch("momentum buffers do not match parameters".into()));
                }
                o
            }
        };
        Ok(TleModel {
            config,
            input_shape,
            encoder,
            head,
            optim,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn head(&self) -> &ClassifierHead {
        &self.head
    }

    pub fn classes(&self) -> usize {
        self.head.classes()
    }

    pub fn optim(&self) -> &OptimState {
        &self.optim
    }

    pub fn iteration(&self) -> u64 {
        self.optim.iteration
    }

    pub(crate) fn advance_iteration(&mut self) {
        self.optim.iteration += 1;
    }

    fn check_segments(&self, s: &SegmentSet) -> Result<()> {
        if s.shape() != self.input_shape {
            return Err(TleError::shape(self.input_shape, s.shape()));
        }
        Ok(())
    }

    fn trace(&self, s: &SegmentSet) -> Result<Trace> {
        self.check_segments(s)?;
        let aggregated = aggregate_forward(s, self.config.aggregation)?;
        let encoded = self.encoder.forward(&aggregated)?.into_values();
        let (rooted, features) = if self.encoder.kind().normalizes() {
            let rooted = signed_sqrt(&encoded);
            let features = l2_normalize(&rooted);
            (rooted, features)
        } else {
            (Vec::new(), encoded.clone())
        };
        let logits = self.head.logits(&features)?;
        Ok(Trace {
            aggregated,
            encoded,
            rooted,
            features,
            logits,
        })
    }

    /// Pooled, normalized feature vector fed to the classifier.
    pub fn features(&self, s: &SegmentSet) -> Result<Vec<f64>> {
        Ok(self.trace(s)?.features)
    }

    pub fn logits(&self, s: &SegmentSet) -> Result<Vec<f64>> {
        Ok(self.trace(s)?.logits)
    }

    /// Loss and logits for one segment set.
    pub fn forward_video(&self, s: &SegmentSet, label: usize) -> Result<(f64, Vec<f64>)> {
        let logits = self.logits(s)?;
        let (loss, _) = softmax_cross_entropy(&logits, label)?;
        Ok((loss, logits))
    }

    /// Forward and backward pass. `train_encoder` requests FC encoder
    /// gradients; `input_grads` requests per-segment gradients.
    pub fn backward(&self, s: &SegmentSet, label: usize, train_encoder: bool, input_grads: bool) -> Result<Backward> {
        let t = self.trace(s)?;
        let (loss, dlogits) = softmax_cross_entropy(&t.logits, label)?;
        let (dfeatures, head_grads) = self.head.layer().backward(&t.features, &dlogits)?;
        let dencoded = if self.encoder.kind().normalizes() {
            let drooted = l2_normalize_backward(&t.rooted, &dfeatures);
            signed_sqrt_backward(&t.encoded, &drooted)
        } else {
            dfeatures
        };

        let mut fc_grads = None;
        let mut segments = None;
        let fc_trainable = train_encoder && matches!(self.encoder, Encoder::Fc(_));
        if fc_trainable || input_grads {
            let upstream = EncodedVector::from_raw(dencoded);
            let daggregated = match &self.encoder {
                Encoder::Bilinear { .. } => {
                    if input_grads {
                        Some(bilinear_backward(&t.aggregated, &upstream)?)
                    } else {
                        None
                    }
                }
                Encoder::TensorSketch(ts) => {
                    if input_grads {
                        Some(ts.backward(&t.aggregated, &upstream)?)
                    } else {
                        None
                    }
                }
                Encoder::Fc(fc) => {
                    let (dx, g) = fc.backward(&t.aggregated, &upstream)?;
                    if fc_trainable {
                        fc_grads = Some(g);
                    }
                    Some(dx)
                }
            };
            if input_grads {
                let dx = daggregated.expect("input gradient computed above");
                segments = Some(aggregate_backward(s, self.config.aggregation, &dx)?);
            }
        }

        Ok(Backward {
            loss,
            logits: t.logits,
            params: ParamGrads {
                head: head_grads,
                fc: fc_grads,
            },
            segments,
        })
    }

    /// Whether the encoder parameters train in `phase`.
    pub fn encoder_trains_in(&self, phase: Phase) -> bool {
        phase == Phase::Full && matches!(self.encoder, Encoder::Fc(_))
    }

    /// Trainable parameters in the order of [`ParamGrads::to_vec`].
    pub fn parameter_vector(&self, include_encoder: bool) -> Vec<f64> {
        let mut v = self.head.layer().weights().to_vec();
        v.extend(self.head.layer().bias());
        if include_encoder {
            if let Encoder::Fc(fc) = &self.encoder {
                v.extend(fc.layer().weights());
                v.extend(fc.layer().bias());
            }
        }
        v
    }

    /// Inverse of [`parameter_vector`](Self::parameter_vector).
    pub fn set_parameter_vector(&mut self, values: &[f64], include_encoder: bool) -> Result<()> {
        let expected = self.parameter_vector(include_encoder).len();
        if values.len() != expected {
            return Err(TleError::LengthMismatch {
                expected,
                found: values.len(),
            });
        }
        let mut rest = values;
        let mut fill = |layer: &mut Affine| {
            let (w, b) = layer.params_mut();
            let (vw, r) = rest.split_at(w.len());
            let (vb, r) = r.split_at(b.len());
            w.copy_from_slice(vw);
            b.copy_from_slice(vb);
            rest = r;
        };
        fill(self.head.layer_mut());
        if include_encoder {
            if let Encoder::Fc(fc) = &mut self.encoder {
                fill(fc.layer_mut());
            }
        }
        Ok(())
    }

    /// Momentum SGD step on the head and, when `grads.fc` is present, the
    /// FC encoder. Uses the configured momentum and weight decay.
    pub fn sgd_step(&mut self, grads: &ParamGrads, lr: f64) -> Result<()> {
        let momentum = self.config.momentum;
        let wd = self.config.weight_decay;
        let check = |layer: &Affine, g: &AffineGrads| {
            if g.weights.len() != layer.weights().len() || g.bias.len() != layer.bias().len() {
                Err(TleError::DimensionMismatch("gradient shape differs from parameters".into()))
            } else {
                Ok(())
            }
        };
        check(self.head.layer(), &grads.head)?;
        if let Some(g) = &grads.fc {
            match &self.encoder {
                Encoder::Fc(fc) => check(fc.layer(), g)?,
                _ => return Err(TleError::DimensionMismatch("encoder has no trainable parameters".into())),
            }
        }

        let buf = &mut self.optim.head;
        let (w, b) = self.head.layer_mut().params_mut();
        sgd_update(w, &mut buf.weights, &grads.head.weights, lr, momentum, wd)?;
        sgd_update(b, &mut buf.bias, &grads.head.bias, lr, momentum, wd)?;
        if let (Some(g), Encoder::Fc(fc), Some(buf)) = (&grads.fc, &mut self.encoder, &mut self.optim.fc) {
            let (w, b) = fc.layer_mut().params_mut();
            sgd_update(w, &mut buf.weights, &g.weights, lr, momentum, wd)?;
            sgd_update(b, &mut buf.bias, &g.bias, lr, momentum, wd)?;
        }
        Ok(())
    }
}
