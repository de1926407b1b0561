//! Training configuration and its plain-text `key = value` form.

use std::fmt;
use std::str::FromStr;

use crate::aggregate::AggregationMode;
use crate::error::{Result, TleError};
use crate::sketch::DEFAULT_SKETCH_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncoderKind {
    Bilinear,
    TensorSketch,
    Fc,
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Bilinear => "bilinear",
            EncoderKind::TensorSketch => "tensor_sketch",
            EncoderKind::Fc => "fc",
        }
    }

    /// Whether pooled features go through signed sqrt and L2 normalization.
    pub fn normalizes(self) -> bool {
        !matches!(self, EncoderKind::Fc)
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncoderKind {
    type Err = TleError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "bilinear" => Ok(EncoderKind::Bilinear),
            "tensor_sketch" | "sketch" | "ts" | "compact" => Ok(EncoderKind::TensorSketch),
            "fc" | "fc_pooling" => Ok(EncoderKind::Fc),
            other => Err(TleError::InvalidArgument(format!("unknown encoder `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Number of temporal segments K.
    pub segments: usize,
    pub aggregation: AggregationMode,
    pub encoder: EncoderKind,
    pub sketch_dim: usize,
    pub fc_dim: usize,
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate every `lr_step` iterations.
    pub lr_decay: f64,
    pub lr_step: usize,
    /// Iterations per training phase.
    pub max_iters: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Train the head alone before training every parameter. Only has an
    /// effect when the encoder has trainable parameters.
    pub two_step: bool,
    /// Segment groups averaged per video at test time.
    pub test_groups: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            segments: 3,
            aggregation: AggregationMode::Product,
            encoder: EncoderKind::TensorSketch,
            sketch_dim: DEFAULT_SKETCH_DIM,
            fc_dim: 64,
            learning_rate: 0.1,
            lr_decay: 0.1,
            lr_step: 400,
            max_iters: 1200,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 15,
            seed: 0,
            two_step: true,
            test_groups: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Only the classifier head trains.
    Head,
    /// Every trainable parameter trains.
    Full,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Head => "head",
            Phase::Full => "full",
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(TleError::InvalidArgument(msg));
        if self.segments < 2 {
            return fail(format!("segments must be at least 2, got {}", self.segments));
        }
        if self.sketch_dim == 0 || self.fc_dim == 0 {
            return fail("encoder dimensions must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate must be finite and nonnegative, got {}", self.learning_rate));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if self.lr_step == 0 {
            return fail("lr_step must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight decay must be nonnegative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 || self.test_groups == 0 {
            return fail("batch_size and test_groups must be positive".into());
        }
        Ok(())
    }

    /// Training phases in order.
    pub fn phases(&self) -> Vec<Phase> {
        if self.encoder == EncoderKind::Fc && self.two_step {
            vec![Phase::Head, Phase::Full]
        } else if self.encoder == EncoderKind::Fc {
            vec![Phase::Full]
        } else {
            // frozen encoders leave only the head to train
            vec![Phase::Head]
        }
    }

    pub fn total_iters(&self) -> u64 {
        self.phases().len() as u64 * self.max_iters as u64
    }

    /// Phase active at a global iteration, with the iteration index inside it.
    pub fn phase_at(&self, iteration: u64) -> (Phase, u64) {
        let phases = self.phases();
        let per = self.max_iters.max(1) as u64;
        let idx = ((iteration / per) as usize).min(phases.len() - 1);
        (phases[idx], iteration - idx as u64 * per)
    }

    /// Step-decay learning rate; restarts at each phase boundary.
    pub fn learning_rate_at(&self, iteration: u64) -> f64 {
        let (_, local) = self.phase_at(iteration);
        let drops = (local / self.lr_step as u64) as i32;
        self.learning_rate * self.lr_decay.powi(drops)
    }

    pub fn to_text(&self) -> String {
        format!(
            "segments = {}\naggregation = {}\nencoder = {}\nsketch_dim = {}\nfc_dim = {}\nlr = {}\nlr_decay = {}\nlr_step = {}\nmax_iters = {}\nmomentum = {}\nweight_decay = {}\nbatch_size = {}\nseed = {}\ntwo_step = {}\ntest_groups = {}\n",
            self.segments,
            self.aggregation,
            self.encoder,
            self.sketch_dim,
            self.fc_dim,
            self.learning_rate,
            self.lr_decay,
            self.lr_step,
            self.max_iters,
            self.momentum,
            self.weight_decay,
            self.batch_size,
            self.seed,
            self.two_step,
            self.test_groups,
        )
    }

    /// Parses `key = value` lines on top of the defaults. Blank lines and
    /// `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| TleError::Config {
                line: i + 1,
                message: format!("expected key = value, got `{line}`"),
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| TleError::Config {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| TleError::InvalidArgument(format!("bad value `{value}` for `{key}`")))
        }
        match key {
            "segments" | "k" => self.segments = num(key, value)?,
            "aggregation" => self.aggregation = value.parse()?,
            "encoder" => self.encoder = value.parse()?,
            "sketch_dim" => self.sketch_dim = num(key, value)?,
            "fc_dim" => self.fc_dim = num(key, value)?,
            "lr" | "learning_rate" => self.learning_rate = num(key, value)?,
            "lr_decay" => self.lr_decay = num(key, value)?,
            "lr_step" => self.lr_step = num(key, value)?,
            "max_iters" => self.max_iters = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "two_step" => self.two_step = num(key, value)?,
            "test_groups" => self.test_groups = num(key, value)?,
            other => return Err(TleError::InvalidArgument(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let cfg = TrainConfig {
            learning_rate: 0.123456789012345,
            weight_decay: 5e-4,
            encoder: EncoderKind::Fc,
            aggregation: AggregationMode::Maximum,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn parse_errors_carry_line() {
        let err = TrainConfig::parse("lr = 0.1\nbogus = 3\n").unwrap_err();
        assert!(matches!(err, TleError::Config { line: 2, .. }), "{err}");
        assert!(TrainConfig::parse("lr_decay = 2").is_err());
        assert!(TrainConfig::parse("segments = 1").is_err());
        let cfg = TrainConfig::parse("# comment\n\nsegments = 4 # trailing\n").unwrap();
        assert_eq!(cfg.segments, 4);
    }

    #[test]
    fn schedule_is_monotone_and_drops_by_factor() {
        let cfg = TrainConfig {
            learning_rate: 1.0,
            lr_decay: 0.1,
            lr_step: 10,
            max_iters: 35,
            ..Default::default()
        };
        let mut prev = f64::INFINITY;
        for it in 0..cfg.total_iters() {
            let lr = cfg.learning_rate_at(it);
            assert!(lr <= prev);
            if it > 0 && it % 10 == 0 {
                assert!((lr - prev * 0.1).abs() <= 1e-15 * prev);
            } else if it > 0 {
                assert_eq!(lr, prev);
            }
            prev = lr;
        }
    }

    #[test]
    fn phases_per_encoder() {
        let mut cfg = TrainConfig::default();
        assert_eq!(cfg.phases(), vec![Phase::Head]);
        cfg.encoder = EncoderKind::Fc;
        assert_eq!(cfg.phases(), vec![Phase::Head, Phase::Full]);
        cfg.max_iters = 10;
        assert_eq!(cfg.phase_at(9), (Phase::Head, 9));
        assert_eq!(cfg.phase_at(10), (Phase::Full, 0));
        assert_eq!(cfg.total_iters(), 20);
    }
}
