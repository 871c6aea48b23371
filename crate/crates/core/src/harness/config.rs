//! Flat `key = value` run configuration. Keys mirror the CLI flags, with
//! dashes and underscores interchangeable. `#` starts a comment.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::dtc::{CompressionConfig, CompressionMethod, DEFAULT_POOL_WINDOW, DEFAULT_TARGET_TOKENS};
use crate::error::{Error, Result};
use crate::harness::predictor::{PredictorKind, PredictorSpec};
use crate::harness::synthetic::VideoProfile;
use crate::ifs::DEFAULT_SIGMA;
use crate::metrics::{MapProtocol, DEFAULT_MAP_TAUS, DEFAULT_R1_TAUS};
use crate::timecode::SchemeChoice;

pub const DEFAULT_PROMPT: &str =
    "Given the video and the query, find the relevant moments as [[start, end], ...].";

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub k: usize,
    pub sigma: f64,
    pub method: CompressionMethod,
    pub target_tokens: usize,
    pub pool_window: usize,
    /// Q-Former stand-in output shape; `None` passes patches through unchanged.
    pub queries: Option<usize>,
    pub query_dim: usize,
    /// Language-space width; `None` uses the identity projector.
    pub projector_dim: Option<usize>,
    pub model_seed: u64,
    pub scheme: SchemeChoice,
    pub special_tokens: bool,
    pub prompt: String,
    pub predictor: PredictorSpec,
    pub taus_r1: Vec<f64>,
    pub taus_map: Vec<f64>,
    pub map_protocol: MapProtocol,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 32,
            sigma: DEFAULT_SIGMA,
            method: CompressionMethod::VarianceSelect,
            target_tokens: DEFAULT_TARGET_TOKENS,
            pool_window: DEFAULT_POOL_WINDOW,
            queries: Some(32),
            query_dim: 8,
            projector_dim: None,
            model_seed: 0,
            scheme: SchemeChoice::Auto,
            special_tokens: true,
            prompt: DEFAULT_PROMPT.to_owned(),
            predictor: PredictorSpec::default(),
            taus_r1: DEFAULT_R1_TAUS.to_vec(),
            taus_map: DEFAULT_MAP_TAUS.to_vec(),
            map_protocol: MapProtocol::PerQuery,
        }
    }
}

impl PipelineConfig {
    pub fn compression(&self) -> CompressionConfig {
        CompressionConfig {
            method: self.method,
            target_tokens: self.target_tokens,
            pool_window: self.pool_window,
        }
    }
}

/// Pipeline settings plus the synthetic-data and execution settings used by `simulate`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub video: VideoProfile,
    pub videos: usize,
    pub seed: u64,
    /// Worker threads; 0 lets the pool decide.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            video: VideoProfile::default(),
            videos: 100,
            seed: 0,
            workers: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::arg(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::arg(format!("bad value `{value}` for `{key}`"))),
    }
}

/// Parses `0.5,0.7`.
pub fn parse_thresholds(value: &str) -> Result<Vec<f64>> {
    let taus = value
        .split(',')
        .map(|t| {
            let t = t.trim();
            let v: f64 = t.parse().map_err(|_| Error::arg(format!("bad threshold `{t}`")))?;
            if (0.0..=1.0).contains(&v) {
                Ok(v)
            } else {
                Err(Error::arg(format!("threshold {v} outside [0, 1]")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    if taus.is_empty() {
        return Err(Error::arg("empty threshold list"));
    }
    Ok(taus)
}

fn optional_dim(key: &str, value: &str) -> Result<Option<usize>> {
    match value {
        "none" | "identity" | "0" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let p = &mut self.pipeline;
        let v = &mut self.video;
        match key.as_str() {
            "k" => p.k = parse(&key, value)?,
            "sigma" => p.sigma = parse(&key, value)?,
            "method" => p.method = value.parse()?,
            "target_tokens" => p.target_tokens = parse(&key, value)?,
            "pool_window" => p.pool_window = parse(&key, value)?,
            "queries" => p.queries = optional_dim(&key, value)?,
            "query_dim" => p.query_dim = parse(&key, value)?,
            "projector_dim" => p.projector_dim = optional_dim(&key, value)?,
            "model_seed" => p.model_seed = parse(&key, value)?,
            "scheme" => p.scheme = value.parse()?,
            "special_tokens" => p.special_tokens = parse_bool(&key, value)?,
            "prompt" => p.prompt = value.to_owned(),
            "predictor" => {
                let kind: PredictorKind = value.parse()?;
                // keep a previously configured fixed output
                if !matches!((&kind, &p.predictor.kind), (PredictorKind::FixedString(_), PredictorKind::FixedString(_))) {
                    p.predictor.kind = kind;
                }
            }
            "fixed_output" => p.predictor.kind = PredictorKind::FixedString(value.to_owned()),
            "jitter_frac" => p.predictor.jitter_frac = parse(&key, value)?,
            "corruption_rate" => p.predictor.corruption_rate = parse(&key, value)?,
            "predictor_seed" => p.predictor.seed = parse(&key, value)?,
            "r1" => p.taus_r1 = parse_thresholds(value)?,
            "map" => p.taus_map = parse_thresholds(value)?,
            "map_protocol" => p.map_protocol = value.parse()?,
            "frames" | "n_frames" => v.n_frames = parse(&key, value)?,
            "patches" => v.n_patches = parse(&key, value)?,
            "dim" => v.dim = parse(&key, value)?,
            "duration" => v.duration = parse(&key, value)?,
            "max_segments" => v.max_segments = parse(&key, value)?,
            "min_segment_len" => v.min_segment_len = parse(&key, value)?,
            "level_gap" => v.level_gap = parse(&key, value)?,
            "noise_std" => v.noise_std = parse(&key, value)?,
            "videos" => self.videos = parse(&key, value)?,
            "seed" => self.seed = parse(&key, value)?,
            "workers" => self.workers = parse(&key, value)?,
            other => return Err(Error::arg(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(key, value).map_err(|e| Error::Config {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Charades-scale settings: 60 frames over ~30 s, 32 key frames,
    /// 32 queries compressed to 16, relative-index time tokens.
    pub fn charades_profile() -> Self {
        let mut cfg = Self::default();
        cfg.video.n_frames = 60;
        cfg.video.duration = 30.0;
        cfg.pipeline.k = 32;
        cfg.pipeline.queries = Some(32);
        cfg.pipeline.target_tokens = 16;
        cfg.pipeline.method = CompressionMethod::VarianceSelect;
        cfg.pipeline.scheme = SchemeChoice::Index;
        cfg
    }

    /// QVHighlights-scale settings: 80 frames over 150 s, 32 key frames.
    pub fn qvhighlights_profile() -> Self {
        let mut cfg = Self::default();
        cfg.video.n_frames = 80;
        cfg.video.duration = 150.0;
        cfg.pipeline.k = 32;
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let mut cfg = RunConfig::default();
        cfg.apply_text(
            "# comment\nk = 8\nmethod = avgpool\nr1 = 0.3, 0.5\nscheme=timestamp\n\npredictor = jitter_gt # inline\n",
        )
        .unwrap();
        assert_eq!(cfg.pipeline.k, 8);
        assert_eq!(cfg.pipeline.method, CompressionMethod::AveragePooling);
        assert_eq!(cfg.pipeline.taus_r1, vec![0.3, 0.5]);
        assert_eq!(cfg.pipeline.scheme, SchemeChoice::Timestamp);
        assert_eq!(cfg.pipeline.predictor.kind, PredictorKind::JitterGt);
        cfg.set("k", "12").unwrap();
        assert_eq!(cfg.pipeline.k, 12);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.apply_text("k = 3\nbogus = 1\n"), Err(Error::Config { line: 2, .. })));
        assert!(matches!(cfg.apply_text("just words"), Err(Error::Config { line: 1, .. })));
        assert!(cfg.set("r1", "0.5,1.5").is_err());
    }

    #[test]
    fn fixed_output_survives_predictor_key() {
        let mut cfg = RunConfig::default();
        cfg.set("fixed-output", "[[1, 2]]").unwrap();
        cfg.set("predictor", "fixed_string").unwrap();
        assert_eq!(cfg.pipeline.predictor.kind, PredictorKind::FixedString("[[1, 2]]".into()));
    }
}
