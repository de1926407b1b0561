//! Temporal linear encoding for video classification.
//!
//! Feature maps from K temporal segments of a video are combined
//! element-wise ([`aggregate`]), pooled into a fixed-length descriptor by
//! full bilinear pooling ([`bilinear`]), a Tensor Sketch projection
//! ([`sketch`]) or a fully-connected layer ([`head::FcEncoder`]), normalized
//! ([`normalize`]), and classified with a softmax head. Every stage has an
//! exact backward pass, checked against finite differences in
//! [`gradcheck`]. [`train`] drives mini-batch SGD and video-level
//! evaluation; [`dataset`] and [`model_io`] handle persistence.

pub mod aggregate;
pub mod bench;
pub mod bilinear;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fft;
pub mod gradcheck;
pub mod head;
pub mod logits;
pub mod model;
pub mod model_io;
pub mod normalize;
pub mod optim;
pub mod sketch;
pub mod tensor;
pub mod train;

pub use aggregate::{aggregate_backward, aggregate_forward, AggregationMode, SegmentSet};
pub use bilinear::{bilinear_backward, bilinear_forward};
pub use config::{EncoderKind, Phase, TrainConfig};
pub use dataset::{read_dataset, synth_dataset, write_dataset, FeatureDataset, Split, StreamTag, SynthConfig, VideoRecord};
pub use error::{Result, TleError};
pub use model::TleModel;
pub use model_io::{load_model, save_model};
pub use sketch::{count_sketch_apply, tensor_sketch_backward, tensor_sketch_forward, SketchParams, SketchPath, TensorSketchEncoder};
pub use tensor::{EncodedVector, FeatureMap, Shape};
pub use train::{evaluate, fuse_streams, predict_video, sample_segments, train, train_steps, SampleMode};
