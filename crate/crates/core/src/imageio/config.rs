use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::seams::ValueScale;

/// Keys accepted by [`read_config`].
pub const CONFIG_KEYS: &[&str] = &[
    "depth",
    "channels",
    "heads",
    "face_size",
    "patch",
    "latent_channels",
    "rope_base",
    "vocab",
    "cond_tokens",
    "mlp_ratio",
    "batch_size",
    "steps",
    "lr",
    "optimizer",
    "seed",
    "n_scenes",
    "sampler_steps",
    "blend_iterations",
    "band_frac",
    "value_scale",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        })
    }
}

/// Every tunable of the toy pipeline, read from `key = value` text.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub depth: usize,
    pub channels: usize,
    pub heads: usize,
    /// Side of a face latent in pixels.
    pub face_size: usize,
    pub patch: usize,
    pub latent_channels: usize,
    pub rope_base: f64,
    pub vocab: usize,
    pub cond_tokens: usize,
    pub mlp_ratio: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub n_scenes: usize,
    pub sampler_steps: usize,
    pub blend_iterations: usize,
    pub band_frac: f64,
    pub value_scale: ValueScale,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            depth: 4,
            channels: 24,
            heads: 2,
            face_size: 16,
            patch: 2,
            latent_channels: 3,
            rope_base: 10_000.0,
            vocab: 4,
            cond_tokens: 4,
            mlp_ratio: 2,
            batch_size: 2,
            steps: 2000,
            lr: 1e-2,
            optimizer: Optimizer::Adam,
            seed: 7,
            n_scenes: 256,
            sampler_steps: 50,
            blend_iterations: 200,
            band_frac: 0.01,
            value_scale: ValueScale::Byte,
        }
    }
}

impl RunConfig {
    /// Tokens per face implied by `face_size` and `patch`.
    pub fn tokens_per_face(&self) -> usize {
        (self.face_size / self.patch.max(1)).pow(2)
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("depth", self.depth),
            ("channels", self.channels),
            ("heads", self.heads),
            ("face_size", self.face_size),
            ("patch", self.patch),
            ("latent_channels", self.latent_channels),
            ("vocab", self.vocab),
            ("cond_tokens", self.cond_tokens),
            ("mlp_ratio", self.mlp_ratio),
            ("batch_size", self.batch_size),
            ("steps", self.steps),
            ("n_scenes", self.n_scenes),
            ("sampler_steps", self.sampler_steps),
            ("blend_iterations", self.blend_iterations),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.channels.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "channels ({}) must be divisible by heads ({})",
                self.channels, self.heads
            )));
        }
        if !self.head_dim().is_multiple_of(6) {
            return Err(Error::Config(format!(
                "head dimension {} must be divisible by 6 for spherical rotary embedding",
                self.head_dim()
            )));
        }
        if !self.face_size.is_multiple_of(self.patch) {
            return Err(Error::Config(format!(
                "face_size ({}) must be a multiple of patch ({})",
                self.face_size, self.patch
            )));
        }
        if !(self.rope_base.is_finite() && self.rope_base > 1.0) {
            return Err(Error::Config(format!("rope_base {} must exceed 1", self.rope_base)));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("lr {} must be finite and >= 0", self.lr)));
        }
        if !(self.band_frac > 0.0 && self.band_frac <= 0.5) {
            return Err(Error::Config(format!("band_frac {} outside (0, 0.5]", self.band_frac)));
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: line_no,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            if !CONFIG_KEYS.contains(&key) {
                return Err(err(format!(
                    "unknown key {key:?}; valid keys: {}",
                    CONFIG_KEYS.join(", ")
                )));
            }
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key {key:?}")));
            }
            cfg.set(key, value).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("invalid value {value:?} for {key}"))
        }
        // Integers go through i64 so that negative counts reach validation.
        let count = |v: &str| -> std::result::Result<usize, String> {
            let n: i64 = num(key, v)?;
            usize::try_from(n).map_err(|_| format!("{key} must be non-negative, got {n}"))
        };
        match key {
            "depth" => self.depth = count(value)?,
            "channels" => self.channels = count(value)?,
            "heads" => self.heads = count(value)?,
            "face_size" => self.face_size = count(value)?,
            "patch" => self.patch = count(value)?,
            "latent_channels" => self.latent_channels = count(value)?,
            "rope_base" => self.rope_base = num(key, value)?,
            "vocab" => self.vocab = count(value)?,
            "cond_tokens" => self.cond_tokens = count(value)?,
            "mlp_ratio" => self.mlp_ratio = count(value)?,
            "batch_size" => self.batch_size = count(value)?,
            "steps" => self.steps = count(value)?,
            "lr" => self.lr = num(key, value)?,
            "optimizer" => {
                self.optimizer = match value {
                    "sgd" => Optimizer::Sgd,
                    "adam" => Optimizer::Adam,
                    _ => return Err(format!("optimizer must be sgd or adam, got {value:?}")),
                }
            }
            "seed" => self.seed = num(key, value)?,
            "n_scenes" => self.n_scenes = count(value)?,
            "sampler_steps" => self.sampler_steps = count(value)?,
            "blend_iterations" => self.blend_iterations = count(value)?,
            "band_frac" => self.band_frac = num(key, value)?,
            "value_scale" => self.value_scale = value.parse().map_err(|e: Error| e.to_string())?,
            _ => unreachable!("key checked against CONFIG_KEYS"),
        }
        Ok(())
    }

    /// Renders the config back into the text format, one key per line.
    pub fn to_text(&self) -> String {
        let scale = match self.value_scale {
            ValueScale::Unit => "unit",
            ValueScale::Byte => "byte",
        };
        format!(
            "depth = {}\nchannels = {}\nheads = {}\nface_size = {}\npatch = {}\nlatent_channels = {}\n\
             rope_base = {:?}\nvocab = {}\ncond_tokens = {}\nmlp_ratio = {}\nbatch_size = {}\nsteps = {}\n\
             lr = {:?}\noptimizer = {}\nseed = {}\nn_scenes = {}\nsampler_steps = {}\nblend_iterations = {}\n\
             band_frac = {:?}\nvalue_scale = {}\n",
            self.depth,
            self.channels,
            self.heads,
            self.face_size,
            self.patch,
            self.latent_channels,
            self.rope_base,
            self.vocab,
            self.cond_tokens,
            self.mlp_ratio,
            self.batch_size,
            self.steps,
            self.lr,
            self.optimizer,
            self.seed,
            self.n_scenes,
            self.sampler_steps,
            self.blend_iterations,
            self.band_frac,
            scale,
        )
    }
}

pub fn read_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::parse(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::parse(text, Path::new("cfg.txt"))
    }

    #[test]
    fn empty_config_is_default() {
        assert_eq!(parse("").unwrap(), RunConfig::default());
        assert_eq!(parse("# only a comment\n\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn values_are_read() {
        let cfg = parse("depth = 2\nchannels=12 # tiny\nlr = 0.5\noptimizer = sgd\nvalue_scale = unit\n").unwrap();
        assert_eq!(cfg.depth, 2);
        assert_eq!(cfg.channels, 12);
        assert_eq!(cfg.lr, 0.5);
        assert_eq!(cfg.optimizer, Optimizer::Sgd);
        assert_eq!(cfg.value_scale, ValueScale::Unit);
    }

    #[test]
    fn duplicate_key_reports_line() {
        let err = parse("depth = 2\n\ndepth = 3\n").unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("duplicate"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = parse("depht = 2").unwrap_err().to_string();
        assert!(err.contains("depht"));
        assert!(err.contains("rope_base"));
    }

    #[test]
    fn negative_steps_rejected() {
        assert!(parse("steps = -1").is_err());
        assert!(matches!(parse("steps = 0").unwrap_err(), Error::Config(_)));
    }

    #[test]
    fn head_dim_must_split_into_three_axes() {
        assert!(parse("channels = 24\nheads = 3").is_err());
        assert!(parse("channels = 24\nheads = 5").is_err());
        assert!(parse("channels = 24\nheads = 4").is_ok());
    }

    #[test]
    fn text_round_trip() {
        let cfg = parse("depth = 3\nlr = 0.0025\nseed = 99\n").unwrap();
        assert_eq!(parse(&cfg.to_text()).unwrap(), cfg);
    }
}
