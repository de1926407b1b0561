//! Labeled feature-map datasets, the TLEF binary format, and the synthetic
//! generator.
//!
//! TLEF layout, all integers and reals little-endian:
//!
//! ```text
//! magic        4 bytes  "TLEF"
//! version      u16      1
//! classes      u32
//! videos       u32
//! per video:
//!   id_len     u32, then id_len bytes of UTF-8
//!   label      u32
//!   stream     u8       0 = spatial, 1 = temporal
//!   maps       u32
//!   h, w, c    u32 each
//!   values     maps·h·w·c f32
//! ```
//!
//! Values are stored at 32-bit precision and widened to `f64` on load.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use byteorder::{LittleEndian, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TleError};
use crate::tensor::{FeatureMap, Shape};

pub const DATASET_MAGIC: &[u8; 4] = b"TLEF";
pub const DATASET_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamTag {
    Spatial,
    Temporal,
}

impl StreamTag {
    pub fn code(self) -> u8 {
        match self {
            StreamTag::Spatial => 0,
            StreamTag::Temporal => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(StreamTag::Spatial),
            1 => Some(StreamTag::Temporal),
            _ => None,
        }
    }
}

impl fmt::Display for StreamTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StreamTag::Spatial => "spatial",
            StreamTag::Temporal => "temporal",
        })
    }
}

impl FromStr for StreamTag {
    type Err = TleError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial" | "rgb" => Ok(StreamTag::Spatial),
            "temporal" | "flow" => Ok(StreamTag::Temporal),
            other => Err(TleError::InvalidArgument(format!("unknown stream `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = TleError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(TleError::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

/// One video: an ordered list of per-frame (or per-clip) feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub label: usize,
    pub stream: StreamTag,
    maps: Vec<FeatureMap>,
}

impl VideoRecord {
    pub fn new(id: impl Into<String>, label: usize, stream: StreamTag, maps: Vec<FeatureMap>) -> Result<Self> {
        let Some(first) = maps.first() else {
            return Err(TleError::InvalidArgument("a video needs at least one feature map".into()));
        };
        let shape = first.shape();
        if let Some(bad) = maps.iter().find(|m| m.shape() != shape) {
            return Err(TleError::shape(shape, bad.shape()));
        }
        Ok(VideoRecord {
            id: id.into(),
            label,
            stream,
            maps,
        })
    }

    pub fn maps(&self) -> &[FeatureMap] {
        &self.maps
    }

    pub fn shape(&self) -> Shape {
        self.maps[0].shape()
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    classes: usize,
    class_names: Vec<String>,
    videos: Vec<VideoRecord>,
    pub split: Split,
}

impl FeatureDataset {
    /// Validates labels and nonemptiness. Class names default to `class_<i>`.
    pub fn new(classes: usize, videos: Vec<VideoRecord>, split: Split) -> Result<Self> {
        if videos.is_empty() {
            return Err(TleError::EmptyDataset);
        }
        if classes == 0 {
            return Err(TleError::InvalidArgument("class count must be positive".into()));
        }
        if let Some(v) = videos.iter().find(|v| v.label >= classes) {
            return Err(TleError::LabelOutOfRange {
                label: v.label,
                classes,
            });
        }
        Ok(FeatureDataset {
            classes,
            class_names: (0..classes).map(|i| format!("class_{i}")).collect(),
            videos,
            split,
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.classes {
            return Err(TleError::LengthMismatch {
                expected: self.classes,
                found: names.len(),
            });
        }
        self.class_names = names;
        Ok(self)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn videos(&self) -> &[VideoRecord] {
        &self.videos
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    /// Shape shared by every video, or an error if videos disagree.
    pub fn uniform_shape(&self) -> Result<Shape> {
        let shape = self.videos[0].shape();
        if let Some(v) = self.videos.iter().find(|v| v.shape() != shape) {
            return Err(TleError::shape(shape, v.shape()));
        }
        Ok(shape)
    }

    /// Serializes into TLEF bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let u32_of = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| TleError::InvalidArgument(format!("{what} {v} exceeds u32")))
        };
        w.write_all(DATASET_MAGIC)?;
        w.write_u16::<LittleEndian>(DATASET_VERSION)?;
        w.write_u32::<LittleEndian>(u32_of(self.classes, "class count")?)?;
        w.write_u32::<LittleEndian>(u32_of(self.videos.len(), "video count")?)?;
        for v in &self.videos {
            w.write_u32::<LittleEndian>(u32_of(v.id.len(), "id length")?)?;
            w.write_all(v.id.as_bytes())?;
            w.write_u32::<LittleEndian>(u32_of(v.label, "label")?)?;
            w.write_u8(v.stream.code())?;
            w.write_u32::<LittleEndian>(u32_of(v.maps.len(), "map count")?)?;
            let s = v.shape();
            for d in [s.height, s.width, s.channels] {
                w.write_u32::<LittleEndian>(u32_of(d, "dimension")?)?;
            }
            for m in &v.maps {
                for &x in m.values() {
                    w.write_f32::<LittleEndian>(x as f32)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Parses TLEF bytes. Every error carries the byte offset where it
    /// was detected.
    pub fn from_bytes(bytes: &[u8], split: Split) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != DATASET_MAGIC {
            return Err(TleError::MagicMismatch {
                found: magic.try_into().expect("four bytes"),
            });
        }
        let version = r.u16()?;
        if version != DATASET_VERSION {
            return Err(TleError::UnsupportedVersion {
                found: version,
                supported: DATASET_VERSION,
            });
        }
        let classes = r.u32()? as usize;
        let count = r.u32()? as usize;
        if count == 0 {
            return Err(TleError::EmptyDataset);
        }
        let mut videos = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let id_len = r.u32()? as usize;
            let id_at = r.pos;
            let id = std::str::from_utf8(r.take(id_len)?)
                .map_err(|_| TleError::Malformed {
                    offset: id_at as u64,
                    message: "video id is not UTF-8".into(),
                })?
                .to_owned();
            let label_at = r.pos;
            let label = r.u32()? as usize;
            if label >= classes {
                return Err(TleError::Malformed {
                    offset: label_at as u64,
                    message: format!("label {label} out of range for {classes} classes"),
                });
            }
            let stream_at = r.pos;
            let stream = StreamTag::from_code(r.u8()?).ok_or_else(|| TleError::Malformed {
                offset: stream_at as u64,
                message: "unknown stream tag".into(),
            })?;
            let maps_at = r.pos;
            let maps = r.u32()? as usize;
            let (h, w, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
            if maps == 0 || h == 0 || w == 0 || c == 0 {
                return Err(TleError::Malformed {
                    offset: maps_at as u64,
                    message: format!("zero-sized video: {maps} maps of {h}x{w}x{c}"),
                });
            }
            let per_map = h
                .checked_mul(w)
                .and_then(|v| v.checked_mul(c))
                .ok_or(TleError::ShapeOverflow { offset: maps_at as u64 })?;
            let total_bytes = per_map
                .checked_mul(maps)
                .and_then(|v| v.checked_mul(4))
                .ok_or(TleError::ShapeOverflow { offset: maps_at as u64 })?;
            r.ensure(total_bytes)?;
            let shape = Shape::new(h, w, c)?;
            let mut fmaps = Vec::with_capacity(maps);
            for _ in 0..maps {
                let at = r.pos;
                let raw = r.take(per_map * 4)?;
                let values: Vec<f64> = raw
                    .chunks_exact(4)
                    .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("four bytes"))))
                    .collect();
                let map = FeatureMap::new(shape, values).map_err(|e| match e {
                    TleError::NonFinite { index } => TleError::Malformed {
                        offset: (at + index * 4) as u64,
                        message: "non-finite feature value".into(),
                    },
                    other => other,
                })?;
                fmaps.push(map);
            }
            videos.push(VideoRecord::new(id, label, stream, fmaps)?);
        }
        if r.pos != bytes.len() {
            return Err(TleError::Malformed {
                offset: r.pos as u64,
                message: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        FeatureDataset::new(classes, videos, split)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn ensure(&self, n: usize) -> Result<()> {
        let left = self.bytes.len() - self.pos;
        if n > left {
            return Err(TleError::Truncated {
                offset: self.bytes.len() as u64,
                needed: (n - left) as u64,
            });
        }
        Ok(())
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        self.ensure(n)?;
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("two bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }
}

pub fn write_dataset(dataset: &FeatureDataset, path: impl AsRef<Path>) -> Result<()> {
    dataset.write_to(BufWriter::new(File::create(path)?))
}

/// Reads a TLEF file. The format carries no split tag, so the caller's
/// intent is recorded as [`Split::Train`]; override `split` as needed.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<FeatureDataset> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    FeatureDataset::from_bytes(&bytes, Split::Train)
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub videos_per_class: usize,
    pub frames: usize,
    pub shape: Shape,
    /// Noise multiplier; 0 yields frames identical to the class template.
    pub difficulty: f64,
    pub seed: u64,
    pub stream: StreamTag,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 5,
            videos_per_class: 20,
            frames: 12,
            shape: Shape {
                height: 4,
                width: 4,
                channels: 8,
            },
            difficulty: 0.3,
            seed: 0,
            stream: StreamTag::Spatial,
        }
    }
}

/// Fraction of template entries that are active.
const TEMPLATE_DENSITY: f64 = 0.3;
/// Probability that a frame entry carries a transient distractor spike.
const SPIKE_RATE: f64 = 0.2;
/// Largest spike magnitude before scaling by difficulty.
const SPIKE_SCALE: f64 = 3.0;
/// Dense noise amplitude before scaling by difficulty.
const JITTER_SCALE: f64 = 0.3;

/// Generates a labeled dataset.
///
/// Each class owns a sparse nonnegative template over `h × w × c`: an
/// entry is active with probability 0.3 and then drawn from `U(0.5, 1.5)`.
/// A frame is `template + difficulty·noise`, where the noise mixes dense
/// uniform jitter in `±0.3` with transient spikes (probability 0.2, value
/// `U(0, 3)`) that land on random entries of single frames. Templates
/// depend on `seed` only; frame noise also depends on `split`, so the train
/// and test splits share classes but not samples.
pub fn synth_dataset(cfg: &SynthConfig, split: Split) -> Result<FeatureDataset> {
    if cfg.classes < 2 || cfg.videos_per_class == 0 || cfg.frames == 0 || cfg.shape.is_empty() {
        return Err(TleError::InvalidArgument(format!(
            "degenerate synthetic config: {} classes, {} videos/class, {} frames",
            cfg.classes, cfg.videos_per_class, cfg.frames
        )));
    }
    if !(cfg.difficulty >= 0.0 && cfg.difficulty.is_finite()) {
        return Err(TleError::InvalidArgument(format!("difficulty must be nonnegative, got {}", cfg.difficulty)));
    }
    let n = cfg.shape.len();
    let mut template_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let templates: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| {
            (0..n)
                .map(|_| {
                    if template_rng.gen_bool(TEMPLATE_DENSITY) {
                        template_rng.gen_range(0.5..1.5)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(match split {
        Split::Train => 1,
        Split::Test => 2,
    });
    let mut videos = Vec::with_capacity(cfg.classes * cfg.videos_per_class);
    for v in 0..cfg.videos_per_class {
        for (label, template) in templates.iter().enumerate() {
            let maps = (0..cfg.frames)
                .map(|_| {
                    let values = template
                        .iter()
                        .map(|&t| {
                            let jitter = noise_rng.gen_range(-JITTER_SCALE..=JITTER_SCALE);
                            let spike = if noise_rng.gen_bool(SPIKE_RATE) {
                                noise_rng.gen_range(0.0..SPIKE_SCALE)
                            } else {
                                0.0
                            };
                            // quantized so the values survive a TLEF round trip
                            f64::from((t + cfg.difficulty * (jitter + spike)) as f32)
                        })
                        .collect();
                    FeatureMap::new(cfg.shape, values)
                })
                .collect::<Result<Vec<_>>>()?;
            let id = format!("{split}_c{label}_v{v}");
            videos.push(VideoRecord::new(id, label, cfg.stream, maps)?);
        }
    }
    FeatureDataset::new(cfg.classes, videos, split)
}
