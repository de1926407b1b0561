//! Model persistence.
//!
//! Layout, little-endian:
//!
//! ```text
//! magic "TLEM", version u16
//! config_len u32, config text (key = value lines)
//! iteration u64
//! h, w, c u32; classes u32
//! encoder tag u8: 0 bilinear | 1 tensor sketch | 2 fc
//!   sketch: c u32, d u32, seed₁ u64, seed₂ u64
//!   fc:     rows u32, cols u32, weights, bias, momentum weights, momentum bias (f64)
//! head: rows u32, cols u32, weights, bias, momentum weights, momentum bias (f64)
//! ```
//!
//! Sketch tables are regenerated from their seeds on load.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::config::TrainConfig;
use crate::error::{Result, TleError};
use crate::head::{Affine, AffineGrads, ClassifierHead, FcEncoder};
use crate::model::{Encoder, OptimState, TleModel};
use crate::sketch::TensorSketchEncoder;
use crate::tensor::Shape;

pub const MODEL_MAGIC: &[u8; 4] = b"TLEM";
pub const MODEL_VERSION: u16 = 1;

fn write_affine<W: Write>(w: &mut W, layer: &Affine, buf: &AffineGrads) -> Result<()> {
    w.write_u32::<LittleEndian>(layer.rows() as u32)?;
    w.write_u32::<LittleEndian>(layer.cols() as u32)?;
    for slice in [layer.weights(), layer.bias(), &buf.weights, &buf.bias] {
        for &v in slice {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn model_to_bytes(model: &TleModel) -> Result<Vec<u8>> {
    let mut w = Vec::new();
    w.write_all(MODEL_MAGIC)?;
    w.write_u16::<LittleEndian>(MODEL_VERSION)?;
    let text = model.config().to_text();
    w.write_u32::<LittleEndian>(text.len() as u32)?;
    w.write_all(text.as_bytes())?;
    w.write_u64::<LittleEndian>(model.iteration())?;
    let s = model.input_shape();
    for d in [s.height, s.width, s.channels, model.classes()] {
        w.write_u32::<LittleEndian>(d as u32)?;
    }
    match model.encoder() {
        Encoder::Bilinear { .. } => w.write_u8(0)?,
        Encoder::TensorSketch(ts) => {
            w.write_u8(1)?;
            w.write_u32::<LittleEndian>(ts.input_dim() as u32)?;
            w.write_u32::<LittleEndian>(ts.output_dim() as u32)?;
            w.write_u64::<LittleEndian>(ts.first().seed())?;
            w.write_u64::<LittleEndian>(ts.second().seed())?;
        }
        Encoder::Fc(fc) => {
            w.write_u8(2)?;
            let buf = model.optim().fc.as_ref().expect("fc encoder has momentum buffers");
            write_affine(&mut w, fc.layer(), buf)?;
        }
    }
    write_affine(&mut w, model.head().layer(), &model.optim().head)?;
    Ok(w)
}

struct Reader<'a> {
    inner: &'a [u8],
    total: usize,
}

impl Reader<'_> {
    fn offset(&self) -> u64 {
        (self.total - self.inner.len()) as u64
    }

    fn need(&self, n: usize) -> Result<()> {
        if self.inner.len() < n {
            return Err(TleError::Truncated {
                offset: self.total as u64,
                needed: (n - self.inner.len()) as u64,
            });
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        self.need(1)?;
        Ok(self.inner.read_u8()?)
    }

    fn u32(&mut self) -> Result<usize> {
        self.need(4)?;
        Ok(self.inner.read_u32::<LittleEndian>()? as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        self.need(8)?;
        Ok(self.inner.read_u64::<LittleEndian>()?)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n.checked_mul(8).ok_or(TleError::ShapeOverflow { offset: self.offset() })?;
        self.need(bytes)?;
        let mut out = vec![0.0; n];
        self.inner.read_f64_into::<LittleEndian>(&mut out)?;
        Ok(out)
    }

    fn affine(&mut self) -> Result<(Affine, AffineGrads)> {
        let at = self.offset();
        let rows = self.u32()?;
        let cols = self.u32()?;
        let n = rows.checked_mul(cols).ok_or(TleError::ShapeOverflow { offset: at })?;
        let weights = self.f64s(n)?;
        let bias = self.f64s(rows)?;
        let mw = self.f64s(n)?;
        let mb = self.f64s(rows)?;
        let layer = Affine::from_parts(rows, cols, weights, bias).map_err(|e| TleError::Malformed {
            offset: at,
            message: e.to_string(),
        })?;
        Ok((layer, AffineGrads { weights: mw, bias: mb }))
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<TleModel> {
    let mut r = Reader {
        inner: bytes,
        total: bytes.len(),
    };
    r.need(4)?;
    let mut magic = [0u8; 4];
    r.inner.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(TleError::MagicMismatch { found: magic });
    }
    r.need(2)?;
    let version = r.inner.read_u16::<LittleEndian>()?;
    if version != MODEL_VERSION {
        return Err(TleError::UnsupportedVersion {
            found: version,
            supported: MODEL_VERSION,
        });
    }
    let len = r.u32()?;
    r.need(len)?;
    let at = r.offset();
    let (text, rest) = r.inner.split_at(len);
    r.inner = rest;
    let text = std::str::from_utf8(text).map_err(|_| TleError::Malformed {
        offset: at,
        message: "config is not UTF-8".into(),
    })?;
    let config = TrainConfig::parse(text)?;
    let iteration = r.u64()?;
    let at = r.offset();
    let (h, w, c, classes) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    let shape = Shape::new(h, w, c).map_err(|e| TleError::Malformed {
        offset: at,
        message: e.to_string(),
    })?;
    let tag_at = r.offset();
    let (encoder, fc_buf) = match r.u8()? {
        0 => (Encoder::Bilinear { channels: c }, None),
        1 => {
            let (ci, d) = (r.u32()?, r.u32()?);
            let (s1, s2) = (r.u64()?, r.u64()?);
            (Encoder::TensorSketch(TensorSketchEncoder::from_seeds(ci, d, s1, s2)?), None)
        }
        2 => {
            let (layer, buf) = r.affine()?;
            (Encoder::Fc(FcEncoder::new(layer)), Some(buf))
        }
        other => {
            return Err(TleError::Malformed {
                offset: tag_at,
                message: format!("unknown encoder tag {other}"),
            })
        }
    };
    let (layer, head_buf) = r.affine()?;
    if layer.rows() != classes {
        return Err(TleError::DimensionMismatch(format!(
            "header declares {classes} classes, classifier has {}",
            layer.rows()
        )));
    }
    if !r.inner.is_empty() {
        return Err(TleError::Malformed {
            offset: r.offset(),
            message: format!("{} trailing bytes", r.inner.len()),
        });
    }
    let head = ClassifierHead::from_layer(layer)?;
    let optim = OptimState {
        iteration,
        head: head_buf,
        fc: fc_buf,
    };
    TleModel::from_parts(config, shape, encoder, head, Some(optim))
}

pub fn save_model(model: &TleModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&model_to_bytes(model)?)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TleModel> {
    model_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EncoderKind;

    fn model(kind: EncoderKind) -> TleModel {
        let cfg = TrainConfig {
            encoder: kind,
            sketch_dim: 10,
            fc_dim: 4,
            ..Default::default()
        };
        let mut m = TleModel::new(cfg, Shape::new(2, 1, 3).unwrap(), 3).unwrap();
        let n = m.parameter_vector(true).len();
        let p: Vec<f64> = (0..n).map(|i| (i as f64).sin() / 3.0).collect();
        m.set_parameter_vector(&p, true).unwrap();
        m
    }

    #[test]
    fn round_trip_every_encoder() {
        for kind in [EncoderKind::Bilinear, EncoderKind::TensorSketch, EncoderKind::Fc] {
            let m = model(kind);
            let bytes = model_to_bytes(&m).unwrap();
            let back = model_from_bytes(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(model_to_bytes(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn rejects_corruption() {
        let bytes = model_to_bytes(&model(EncoderKind::TensorSketch)).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(model_from_bytes(&bad), Err(TleError::MagicMismatch { .. })));
        assert!(matches!(model_from_bytes(&bytes[..bytes.len() - 1]), Err(TleError::Truncated { .. })));
        let mut bad = bytes.clone();
        bad.extend([0, 0]);
        assert!(matches!(model_from_bytes(&bad), Err(TleError::Malformed { .. })));
        let mut bad = bytes;
        bad[4] = 2;
        assert!(matches!(model_from_bytes(&bad), Err(TleError::UnsupportedVersion { .. })));
    }
}
