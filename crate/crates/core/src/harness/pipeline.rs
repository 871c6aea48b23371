//! One query through every stage: frame selection, the query-encoder
//! stand-in, token compression, time encoding, prediction, parsing,
//! decoding and scoring.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dtc::{compress_and_project, IdentityProjector, LinearProjector, Projector};
use crate::error::{Error, Result};
use crate::harness::config::PipelineConfig;
use crate::harness::predictor::{MomentPredictor, PredictorInput};
use crate::ifs::{run_ifs, FrameSplit};
use crate::metrics::EvalPair;
use crate::postprocess::{post_process, ParsedPrediction};
use crate::records::{Moment, SamplingPlan, VideoRecord};
use crate::tensor::{FrameTensor, QueryTensor};
use crate::timecode::{build_language_sequence, encode_times, resolve_scheme, TimeKind};

fn seeded_matrix(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0 / (cols as f64).sqrt()).unwrap();
    (0..rows * cols).map(|_| normal.sample(&mut rng)).collect()
}

/// Deterministic stand-in for the query encoder: maps each `P × D0` frame
/// slab to a `Q × D1` block, either unchanged or through a fixed seeded
/// linear map.
#[derive(Debug, Clone)]
pub enum MockQFormer {
    Identity,
    Linear {
        in_len: usize,
        n_queries: usize,
        query_dim: usize,
        weights: Vec<f64>,
    },
}

impl MockQFormer {
    pub fn linear(in_len: usize, n_queries: usize, query_dim: usize, seed: u64) -> Result<Self> {
        if in_len == 0 || n_queries == 0 || query_dim == 0 {
            return Err(Error::arg("query encoder dimensions must be >= 1"));
        }
        Ok(Self::Linear {
            in_len,
            n_queries,
            query_dim,
            weights: seeded_matrix(n_queries * query_dim, in_len, seed),
        })
    }

    pub fn from_config(cfg: &PipelineConfig, n_patches: usize, dim: usize) -> Result<Self> {
        match cfg.queries {
            None => Ok(Self::Identity),
            Some(q) => Self::linear(n_patches * dim, q, cfg.query_dim, cfg.model_seed),
        }
    }

    pub fn encode(&self, frames: &FrameTensor) -> Result<QueryTensor> {
        match self {
            Self::Identity => Ok(frames.clone()),
            Self::Linear {
                in_len,
                n_queries,
                query_dim,
                weights,
            } => {
                if frames.frame_len() != *in_len {
                    return Err(Error::Shape(format!(
                        "query encoder expects {in_len} values per frame, got {}",
                        frames.frame_len()
                    )));
                }
                let mut data = Vec::with_capacity(frames.n_frames() * n_queries * query_dim);
                for slab in frames.frames() {
                    data.extend(
                        weights
                            .chunks_exact(*in_len)
                            .map(|row| row.iter().zip(slab).map(|(w, x)| w * x).sum::<f64>()),
                    );
                }
                QueryTensor::new(frames.n_frames(), *n_queries, *query_dim, data)
            }
        }
    }
}

pub fn projector_from_config(cfg: &PipelineConfig, input_dim: usize) -> Result<Box<dyn Projector>> {
    Ok(match cfg.projector_dim {
        None => Box::new(IdentityProjector),
        Some(out) => Box::new(LinearProjector::new(
            input_dim,
            out,
            seeded_matrix(out, input_dim, cfg.model_seed ^ 0x5eed),
        )?),
    })
}

pub const STAGES: [&str; 8] = [
    "ifs", "qformer", "dtc", "encode", "predict", "parse", "decode", "metrics",
];

/// Accumulated wall time per stage, in [`STAGES`] order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageTimings {
    pub stages: [Duration; 8],
    /// Wall time around the whole run, including any overhead between stages.
    pub wall: Duration,
}

impl StageTimings {
    pub fn stage_sum(&self) -> Duration {
        self.stages.iter().sum()
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, b) in self.stages.iter_mut().zip(&other.stages) {
            *a += *b;
        }
        self.wall += other.wall;
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, Duration)> + '_ {
        STAGES.iter().copied().zip(self.stages.iter().copied())
    }
}

/// Everything one pipeline run produced.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub split: FrameSplit,
    pub scheme_kind: TimeKind,
    pub total_tokens: usize,
    pub sequence_len: usize,
    pub raw_prediction: String,
    pub parsed: ParsedPrediction,
    pub moments: Vec<Moment>,
    pub pair: EvalPair,
    pub timings: StageTimings,
}

fn timed<T>(slot: &mut Duration, f: impl FnOnce() -> T) -> T {
    let t0 = Instant::now();
    let out = f();
    *slot += t0.elapsed();
    out
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Invariant(msg()))
    }
}

pub fn run_pipeline(
    frames: &FrameTensor,
    record: &VideoRecord,
    cfg: &PipelineConfig,
    qformer: &MockQFormer,
    projector: &dyn Projector,
    predictor: &dyn MomentPredictor,
) -> Result<PipelineOutput> {
    let start = Instant::now();
    let mut t = StageTimings::default();
    let n = frames.n_frames();

    let (split, _profile) = timed(&mut t.stages[0], || run_ifs(frames, cfg.sigma, cfg.k))
        .map_err(|e| e.in_stage("ifs"))?;
    split.validate(n).map_err(|e| e.in_stage("ifs"))?;
    check(split.key_indices.first() == Some(&0), || "frame 0 is not a key frame".into())
        .map_err(|e| e.in_stage("ifs"))?;

    let (key_q, nonkey_q) = timed(&mut t.stages[1], || -> Result<_> {
        let queries = qformer.encode(frames)?;
        let key = queries.select_frames(&split.key_indices)?;
        let nonkey = if split.nonkey_indices.is_empty() {
            None
        } else {
            Some(queries.select_frames(&split.nonkey_indices)?)
        };
        Ok((key, nonkey))
    })
    .map_err(|e| e.in_stage("qformer"))?;

    let compression = cfg.compression();
    let language = timed(&mut t.stages[2], || {
        compress_and_project(Some(&key_q), nonkey_q.as_ref(), &split, &compression, projector)
    })
    .map_err(|e| e.in_stage("dtc"))?;
    let q = key_q.n_tokens();
    let per_nonkey = compression.tokens_after(q).map_err(|e| e.in_stage("dtc"))?;
    let k = split.k();
    check(language.total_tokens() == k * q + (n - k) * per_nonkey, || {
        format!(
            "token count {} != {k}*{q} + {}*{per_nonkey}",
            language.total_tokens(),
            n - k
        )
    })
    .map_err(|e| e.in_stage("dtc"))?;

    let (scheme, sequence) = timed(&mut t.stages[3], || -> Result<_> {
        let plan = SamplingPlan::uniform(n, record.duration)?;
        let scheme = resolve_scheme(cfg.scheme, &plan);
        let times = encode_times(&scheme, &plan);
        let seq = build_language_sequence(&times, &language, &record.query, &cfg.prompt, cfg.special_tokens)?;
        Ok((scheme, seq))
    })
    .map_err(|e| e.in_stage("encode"))?;
    let per_frame = if cfg.special_tokens { 6 } else { 2 };
    check(sequence.len() == per_frame * n + 2, || {
        format!("sequence has {} elements, expected {}", sequence.len(), per_frame * n + 2)
    })
    .map_err(|e| e.in_stage("encode"))?;

    let raw_prediction = timed(&mut t.stages[4], || {
        predictor.predict(&PredictorInput {
            sequence: &sequence,
            scheme: &scheme,
            record,
        })
    });

    let parsed = timed(&mut t.stages[5], || post_process(&raw_prediction));
    check(
        !parsed.moments.is_empty() && parsed.moments.iter().all(|(s, e)| s <= e),
        || format!("parser produced an invalid moment list from {raw_prediction:?}"),
    )
    .map_err(|e| e.in_stage("parse"))?;

    let moments = timed(&mut t.stages[6], || crate::timecode::decode_moments(&parsed.moments, &scheme));

    let pair = timed(&mut t.stages[7], || EvalPair::new(moments.clone(), record.ground_truth.clone()))
        .map_err(|e| e.in_stage("metrics"))?;

    t.wall = start.elapsed();
    Ok(PipelineOutput {
        split,
        scheme_kind: scheme.kind,
        total_tokens: language.total_tokens(),
        sequence_len: sequence.len(),
        raw_prediction,
        parsed,
        moments,
        pair,
        timings: t,
    })
}
