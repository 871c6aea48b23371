use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use vmr_core::dtc::{
    adaptive_average_pool, average_pool, compress_and_project, variance_select, CompressionConfig,
    CompressionMethod, TokenBlock,
};
use vmr_core::harness::config::parse_thresholds;
use vmr_core::harness::pipeline::projector_from_config;
use vmr_core::harness::{simulate, write_synthetic_dataset, MockQFormer, RunConfig};
use vmr_core::ifs::{run_ifs, ChangeProfile, DEFAULT_SIGMA};
use vmr_core::metrics::{evaluate, EvalPair, MapProtocol, DEFAULT_MAP_TAUS, DEFAULT_R1_TAUS};
use vmr_core::postprocess::{post_process, render};
use vmr_core::records::{load_predictions, load_records, PredictionPayload};
use vmr_core::timecode::{build_language_sequence, encode_times, resolve_scheme};
use vmr_core::{load_frame_tensor, save_frame_tensor, Moment, QueryTensor, SamplingPlan, Tensor3};

/// Moment retrieval toolkit: frame selection, token compression, time
/// encoding, output parsing and evaluation.
#[derive(Parser)]
#[command(name = "vmr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pick key frames from an N×P×D frame tensor.
    Select(SelectArgs),
    /// Compress non-key query tokens.
    Compress(CompressArgs),
    /// Serialize the interleaved time/frame sequence for each record.
    Encode(EncodeArgs),
    /// Parse raw predictor output, one prediction per line.
    Parse(ParseArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Generate synthetic videos and run the whole pipeline.
    Simulate(SimulateArgs),
    /// Dump the frame-change profile as CSV.
    Profile(ProfileArgs),
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompressArgs {
    /// Key-frame query tensor; passed through unchanged and only used for the token count.
    #[arg(long)]
    keys: Option<PathBuf>,
    #[arg(long)]
    nonkeys: PathBuf,
    #[arg(long, default_value = "variance")]
    method: CompressionMethod,
    #[arg(long, default_value_t = 16)]
    target_tokens: usize,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the kept query indices; defaults to `<out>.json`.
    #[arg(long)]
    sidecar: Option<PathBuf>,
}

/// Pipeline settings shared by `encode` and `simulate`.
#[derive(Args)]
struct PipelineArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a named profile: charades or qvhighlights.
    #[arg(long)]
    preset: Option<String>,
    /// Override a config key, e.g. `--set k=60`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    target_tokens: Option<usize>,
    #[arg(long)]
    scheme: Option<String>,
}

impl PipelineArgs {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match self.preset.as_deref() {
            None => RunConfig::default(),
            Some("charades") => RunConfig::charades_profile(),
            Some("qvhighlights") => RunConfig::qvhighlights_profile(),
            Some(other) => bail!("unknown preset `{other}`"),
        };
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_text(&text)
                .with_context(|| format!("in {}", path.display()))?;
        }
        let flags = [
            ("k", self.k.map(|v| v.to_string())),
            ("sigma", self.sigma.map(|v| v.to_string())),
            ("method", self.method.clone()),
            ("target_tokens", self.target_tokens.map(|v| v.to_string())),
            ("scheme", self.scheme.clone()),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        for kv in &self.overrides {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| anyhow!("expected KEY=VALUE, got `{kv}`"))?;
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    records: PathBuf,
    /// One MREB file used for every record, or a directory of `<video_id>.mreb`.
    #[arg(long)]
    frames: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ParseArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Comma-separated IoU thresholds for R1.
    #[arg(long)]
    r1: Option<String>,
    /// Comma-separated IoU thresholds for mAP.
    #[arg(long)]
    map: Option<String>,
    #[arg(long, default_value = "per-query")]
    map_protocol: MapProtocol,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    videos: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Report JSON; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-stage timings as JSON here.
    #[arg(long)]
    timings: Option<PathBuf>,
    /// Also write the generated dataset (records.jsonl plus MREB files) here.
    #[arg(long)]
    emit_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
    /// Mark the k selected key frames in an extra column.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write(path, s)
}

fn cmd_select(a: SelectArgs) -> Result<()> {
    let frames = load_frame_tensor(&a.input)?;
    let (split, profile) = run_ifs(&frames, a.sigma, a.k)?;
    write_json(
        &a.out,
        &json!({
            "key_indices": split.key_indices,
            "nonkey_indices": split.nonkey_indices,
            "smoothed": profile.smoothed,
        }),
    )
}

fn block_of(t: &QueryTensor, f: usize) -> Result<TokenBlock> {
    Ok(TokenBlock::new(t.n_tokens(), t.dim(), t.frame(f).to_vec())?)
}

fn cmd_compress(a: CompressArgs) -> Result<()> {
    let nonkey = load_frame_tensor(&a.nonkeys)?;
    let q = nonkey.n_tokens();
    let cfg = CompressionConfig::for_target(a.method, q, a.target_tokens)?;
    let per_frame = cfg.tokens_after(q)?;

    let (compressed, kept) = match cfg.method {
        CompressionMethod::None => (nonkey.clone(), None),
        CompressionMethod::VarianceSelect if nonkey.n_frames() >= 2 => {
            let (t, kept) = variance_select(&nonkey, per_frame)?;
            (t, Some(kept))
        }
        method => {
            let mut data = Vec::with_capacity(nonkey.n_frames() * per_frame * nonkey.dim());
            for f in 0..nonkey.n_frames() {
                let block = block_of(&nonkey, f)?;
                let pooled = match method {
                    CompressionMethod::AveragePooling => average_pool(&block, cfg.pool_window)?,
                    _ => adaptive_average_pool(&block, per_frame)?,
                };
                data.extend(pooled.data);
            }
            (Tensor3::new(nonkey.n_frames(), per_frame, nonkey.dim(), data)?, None)
        }
    };
    save_frame_tensor(&compressed, &a.out)?;

    let mut meta = json!({
        "method": cfg.method.to_string(),
        "tokens_per_nonkey_frame": per_frame,
        "nonkey_frames": nonkey.n_frames(),
    });
    if let Some(keys_path) = &a.keys {
        let keys = load_frame_tensor(keys_path)?;
        if (keys.n_tokens(), keys.dim()) != (q, nonkey.dim()) {
            bail!("key and non-key tensors differ in query count or dim");
        }
        meta["key_frames"] = json!(keys.n_frames());
        meta["total_tokens"] = json!(keys.n_frames() * q + nonkey.n_frames() * per_frame);
    }
    if let Some(kept) = kept {
        meta["kept_query_indices"] = json!(kept);
        let sidecar = a.sidecar.unwrap_or_else(|| {
            let mut p = a.out.clone().into_os_string();
            p.push(".json");
            p.into()
        });
        write_json(&sidecar, &meta)?;
    }
    println!("{meta}");
    Ok(())
}

fn cmd_encode(a: EncodeArgs) -> Result<()> {
    let cfg = a.pipeline.run_config()?.pipeline;
    let records = load_records(&a.records)?;
    let shared = if a.frames.is_dir() {
        None
    } else {
        Some(load_frame_tensor(&a.frames)?)
    };
    let mut out = String::new();
    for record in &records {
        let owned;
        let frames = match &shared {
            Some(t) => t,
            None => {
                owned = load_frame_tensor(a.frames.join(format!("{}.mreb", record.video_id)))?;
                &owned
            }
        };
        let (split, _) = run_ifs(frames, cfg.sigma, cfg.k)?;
        let queries = MockQFormer::from_config(&cfg, frames.n_tokens(), frames.dim())?.encode(frames)?;
        let key = queries.select_frames(&split.key_indices)?;
        let nonkey = if split.nonkey_indices.is_empty() {
            None
        } else {
            Some(queries.select_frames(&split.nonkey_indices)?)
        };
        let projector = projector_from_config(&cfg, queries.dim())?;
        let language =
            compress_and_project(Some(&key), nonkey.as_ref(), &split, &cfg.compression(), projector.as_ref())?;
        let plan = SamplingPlan::uniform(frames.n_frames(), record.duration)?;
        let scheme = resolve_scheme(cfg.scheme, &plan);
        let times = encode_times(&scheme, &plan);
        let seq = build_language_sequence(&times, &language, &record.query, &cfg.prompt, cfg.special_tokens)?;
        writeln!(out, "{seq}")?;
    }
    write(&a.out, out)
}

fn cmd_parse(a: ParseArgs) -> Result<()> {
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let parsed = post_process(line);
        let moments: Vec<[f64; 2]> = parsed.moments.iter().map(|&(s, e)| [s, e]).collect();
        let row = json!({
            "line_no": i + 1,
            "moments": moments,
            "was_fallback": parsed.was_fallback,
            "canonical": render(&parsed),
        });
        writeln!(out, "{row}")?;
    }
    write(&a.out, out)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let gt = load_records(&a.gt)?;
    let preds = load_predictions(&a.pred)?;
    let mut by_query: HashMap<(&str, &str), &PredictionPayload> = HashMap::new();
    let mut by_video: HashMap<&str, Vec<&PredictionPayload>> = HashMap::new();
    for p in &preds {
        match &p.query {
            Some(q) => {
                by_query.insert((&p.video_id, q), &p.prediction);
            }
            None => by_video.entry(&p.video_id).or_default().push(&p.prediction),
        }
    }

    let mut pairs = Vec::with_capacity(gt.len());
    for record in &gt {
        let payload = match by_query.get(&(record.video_id.as_str(), record.query.as_str())) {
            Some(p) => *p,
            None => match by_video.get(record.video_id.as_str()).map(Vec::as_slice) {
                Some([p]) => *p,
                Some(_) => bail!(
                    "several predictions for video `{}` without a query to tell them apart",
                    record.video_id
                ),
                None => bail!(
                    "no prediction for video `{}`, query {:?}",
                    record.video_id,
                    record.query
                ),
            },
        };
        let raw_pairs = match payload {
            PredictionPayload::Raw(text) => post_process(text).moments,
            PredictionPayload::Moments(m) => m.clone(),
        };
        let moments = raw_pairs
            .into_iter()
            .map(|(s, e)| Moment::new(s, e).normalized(record.duration))
            .collect();
        pairs.push(EvalPair::new(moments, record.ground_truth.clone())?);
    }

    let taus = |arg: Option<String>, default: &[f64]| match arg {
        Some(s) => parse_thresholds(&s),
        None => Ok(default.to_vec()),
    };
    let r1 = taus(a.r1, &DEFAULT_R1_TAUS)?;
    let map = taus(a.map, &DEFAULT_MAP_TAUS)?;
    let report = evaluate(&pairs, &r1, &map, a.map_protocol)?;
    write_json(&a.out, &report.to_json())
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg = a.pipeline.run_config()?;
    if let Some(v) = a.videos {
        cfg.videos = v;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    if let Some(dir) = &a.emit_dir {
        write_synthetic_dataset(&cfg, dir)?;
    }
    let result = simulate(&cfg)?;
    match &a.out {
        Some(path) => write(path, result.report_json())?,
        None => print!("{}", result.report_json()),
    }
    if let Some(path) = &a.timings {
        write_json(path, &result.timings_json())?;
    }
    Ok(())
}

fn cmd_profile(a: ProfileArgs) -> Result<()> {
    let frames = load_frame_tensor(&a.input)?;
    let (key_mask, profile) = match a.k {
        Some(k) => {
            let (split, profile) = run_ifs(&frames, a.sigma, k)?;
            (Some(split.key_mask()), profile)
        }
        None => {
            let deltas = vmr_core::ifs::frame_deltas(&frames)?;
            let raw = vmr_core::ifs::change_norms(&deltas);
            (None, ChangeProfile::from_raw(raw, a.sigma)?)
        }
    };
    let mut out = String::from(if key_mask.is_some() {
        "frame,raw,smoothed,key\n"
    } else {
        "frame,raw,smoothed\n"
    });
    for (i, (r, s)) in profile.raw.iter().zip(&profile.smoothed).enumerate() {
        write!(out, "{i},{r},{s}")?;
        if let Some(mask) = &key_mask {
            write!(out, ",{}", u8::from(mask[i]))?;
        }
        out.push('\n');
    }
    write(&a.out, out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Select(a) => cmd_select(a),
        Command::Compress(a) => cmd_compress(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Parse(a) => cmd_parse(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Profile(a) => cmd_profile(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let invariant = err
        .chain()
        .filter_map(|e| e.downcast_ref::<vmr_core::Error>())
        .any(vmr_core::Error::is_invariant_violation);
    if invariant {
        2
    } else {
        1
    }
}

/// Joins the error chain, skipping causes the previous message already quotes.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
