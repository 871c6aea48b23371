//! Batch execution over many videos, on disk or synthetic.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::harness::pipeline::{projector_from_config, run_pipeline, MockQFormer, PipelineOutput, StageTimings};
use crate::harness::predictor::MockPredictor;
use crate::harness::synthetic::{generate_synthetic, SyntheticSpec};
use crate::metrics::{corpus_average_precision, EvalPair, EvalReport, MapProtocol, MetricAccumulator};
use crate::records::{load_records, save_records, VideoRecord};
use crate::tensor::{load_frame_tensor, save_frame_tensor, FrameTensor};

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub report: EvalReport,
    pub timings: StageTimings,
    pub outputs: Vec<PipelineOutput>,
}

impl SuiteResult {
    /// The report as pretty JSON. Contains no timings, so identical inputs
    /// give identical bytes.
    pub fn report_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.report.to_json()).unwrap();
        s.push('\n');
        s
    }

    pub fn timings_json(&self) -> serde_json::Value {
        let stages: serde_json::Map<String, serde_json::Value> = self
            .timings
            .named()
            .map(|(name, d)| (name.to_owned(), json!(d.as_secs_f64())))
            .collect();
        json!({
            "stages_s": stages,
            "stage_sum_s": self.timings.stage_sum().as_secs_f64(),
            "wall_s": self.timings.wall.as_secs_f64(),
        })
    }
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::arg(format!("cannot start worker pool: {e}")))
}

/// Runs every `(frames, record)` job and folds the results in input order.
fn run_jobs<J, F>(cfg: &RunConfig, jobs: Vec<J>, load: F) -> Result<SuiteResult>
where
    J: Send,
    F: Fn(J) -> Result<(FrameTensor, VideoRecord)> + Sync,
{
    if jobs.is_empty() {
        return Err(Error::NoQueries);
    }
    cfg.pipeline.predictor.validate()?;
    let start = Instant::now();
    let p = &cfg.pipeline;
    let predictor = MockPredictor::new(p.predictor.clone())?;
    let outputs: Vec<PipelineOutput> = thread_pool(cfg.workers)?.install(|| {
        jobs.into_par_iter()
            .map(|job| {
                let (frames, record) = load(job)?;
                let qformer = MockQFormer::from_config(p, frames.n_tokens(), frames.dim())?;
                let d1 = match p.queries {
                    Some(_) => p.query_dim,
                    None => frames.dim(),
                };
                let projector = projector_from_config(p, d1)?;
                run_pipeline(&frames, &record, p, &qformer, projector.as_ref(), &predictor)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut acc = MetricAccumulator::new(&p.taus_r1, &p.taus_map);
    let mut timings = StageTimings::default();
    for out in &outputs {
        acc.add(&out.pair);
        timings.merge(&out.timings);
    }
    let mut report = acc.report()?;
    if p.map_protocol == MapProtocol::Corpus {
        let pairs: Vec<EvalPair> = outputs.iter().map(|o| o.pair.clone()).collect();
        report.map = p
            .taus_map
            .iter()
            .map(|&t| Ok((t, 100.0 * corpus_average_precision(&pairs, t)?)))
            .collect::<Result<_>>()?;
        report.protocol = MapProtocol::Corpus;
    }
    timings.wall = start.elapsed();
    Ok(SuiteResult {
        report,
        timings,
        outputs,
    })
}

/// Evaluates every record against `<frames_dir>/<video_id>.mreb`.
pub fn run_suite(
    records_path: impl AsRef<Path>,
    frames_dir: impl AsRef<Path>,
    config_path: Option<&Path>,
) -> Result<SuiteResult> {
    let cfg = match config_path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    run_suite_with(records_path, frames_dir, &cfg)
}

pub fn run_suite_with(
    records_path: impl AsRef<Path>,
    frames_dir: impl AsRef<Path>,
    cfg: &RunConfig,
) -> Result<SuiteResult> {
    let records = load_records(records_path)?;
    let dir = frames_dir.as_ref();
    run_jobs(cfg, records, |record| {
        let frames = load_frame_tensor(dir.join(format!("{}.mreb", record.video_id)))?;
        Ok((frames, record))
    })
}

/// Per-video synthetic specs drawn from `cfg.seed`.
pub fn synthetic_specs(cfg: &RunConfig) -> Result<Vec<SyntheticSpec>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.videos)
        .map(|i| SyntheticSpec::random(format!("synth_{i:05}"), &cfg.video, rng.random()))
        .collect()
}

/// Generates `cfg.videos` synthetic videos and runs the pipeline on each.
pub fn simulate(cfg: &RunConfig) -> Result<SuiteResult> {
    run_jobs(cfg, synthetic_specs(cfg)?, |spec| generate_synthetic(&spec))
}

/// Writes the synthetic dataset as `records.jsonl` plus one MREB file per video.
pub fn write_synthetic_dataset(cfg: &RunConfig, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(cfg.videos);
    for spec in synthetic_specs(cfg)? {
        let (frames, record) = generate_synthetic(&spec)?;
        save_frame_tensor(&frames, dir.join(format!("{}.mreb", record.video_id)))?;
        records.push(record);
    }
    save_records(&records, dir.join("records.jsonl"))
}
