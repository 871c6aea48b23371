//! Time tokens, the interleaved multimodal sequence, and mapping predicted
//! time values back to seconds.
//!
//! When at least one frame is sampled per second of video, adjacent
//! timestamps can round to the same integer, so frames are labelled with
//! their 1-based position instead. Sparser sampling uses rounded seconds.

use std::fmt;
use std::str::FromStr;

use crate::dtc::LanguageSequence;
use crate::error::{Error, Result};
use crate::records::{Moment, SamplingPlan};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeKind {
    /// Tokens `"1"..="N"`.
    RelativeIndex,
    /// Timestamps rounded half-up to whole seconds.
    RoundedTimestamp,
    /// Frame numbers in the native frame stream, `round(t · fps)`.
    AbsoluteIndex { fps: f64 },
}

/// How the caller wants the scheme picked.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SchemeChoice {
    #[default]
    Auto,
    Index,
    Timestamp,
    Absolute { fps: f64 },
}

impl FromStr for SchemeChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "index" => Ok(Self::Index),
            "timestamp" => Ok(Self::Timestamp),
            other => match other.strip_prefix("absolute:") {
                Some(fps) => {
                    let fps: f64 = fps
                        .parse()
                        .map_err(|_| Error::arg(format!("bad fps in `{other}`")))?;
                    if !(fps > 0.0 && fps.is_finite()) {
                        return Err(Error::arg("fps must be > 0"));
                    }
                    Ok(Self::Absolute { fps })
                }
                None => Err(Error::arg(format!(
                    "unknown scheme `{other}` (auto|index|timestamp|absolute:<fps>)"
                ))),
            },
        }
    }
}

impl fmt::Display for SchemeChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Auto => f.write_str("auto"),
            Self::Index => f.write_str("index"),
            Self::Timestamp => f.write_str("timestamp"),
            Self::Absolute { fps } => write!(f, "absolute:{fps}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeScheme {
    pub kind: TimeKind,
    /// Seconds of each sampled frame, indexed by 1-based token minus one.
    pub index_to_seconds: Vec<f64>,
    pub duration: f64,
}

impl TimeScheme {
    pub fn n_frames(&self) -> usize {
        self.index_to_seconds.len()
    }

    pub fn is_relative_index(&self) -> bool {
        self.kind == TimeKind::RelativeIndex
    }
}

/// Relative indices when `N / T >= 1`, rounded timestamps otherwise.
pub fn choose_scheme(plan: &SamplingPlan) -> TimeScheme {
    let kind = if plan.rate() >= 1.0 {
        TimeKind::RelativeIndex
    } else {
        TimeKind::RoundedTimestamp
    };
    scheme_of(kind, plan)
}

pub fn resolve_scheme(choice: SchemeChoice, plan: &SamplingPlan) -> TimeScheme {
    match choice {
        SchemeChoice::Auto => choose_scheme(plan),
        SchemeChoice::Index => scheme_of(TimeKind::RelativeIndex, plan),
        SchemeChoice::Timestamp => scheme_of(TimeKind::RoundedTimestamp, plan),
        SchemeChoice::Absolute { fps } => scheme_of(TimeKind::AbsoluteIndex { fps }, plan),
    }
}

fn scheme_of(kind: TimeKind, plan: &SamplingPlan) -> TimeScheme {
    TimeScheme {
        kind,
        index_to_seconds: plan.timestamps().to_vec(),
        duration: plan.duration(),
    }
}

pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// One time-token text per sampled frame.
pub fn encode_times(scheme: &TimeScheme, plan: &SamplingPlan) -> Vec<String> {
    match scheme.kind {
        TimeKind::RelativeIndex => (1..=plan.n_frames()).map(|i| i.to_string()).collect(),
        TimeKind::RoundedTimestamp => {
            let max = plan.duration().floor();
            plan.timestamps()
                .iter()
                .map(|&t| format!("{}", round_half_up(t).clamp(0.0, max) as i64))
                .collect()
        }
        TimeKind::AbsoluteIndex { fps } => plan
            .timestamps()
            .iter()
            .map(|&t| format!("{}", round_half_up(t * fps) as i64))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecialToken {
    TimeBegin,
    TimeEnd,
    FrameBegin,
    FrameEnd,
}

impl SpecialToken {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::TimeBegin => "<time_begin>",
            Self::TimeEnd => "<time_end>",
            Self::FrameBegin => "<frame_begin>",
            Self::FrameEnd => "<frame_end>",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SequenceElement {
    Special(SpecialToken),
    Time(String),
    /// Frame `index` of the language sequence, holding `n_tokens` embeddings.
    Frame { index: usize, n_tokens: usize },
    Query(String),
    Prompt(String),
}

impl fmt::Display for SequenceElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Special(s) => f.write_str(s.as_str()),
            Self::Time(t) | Self::Query(t) | Self::Prompt(t) => f.write_str(t),
            Self::Frame { index, n_tokens } => write!(f, "<frame:{index}:{n_tokens}>"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterleavedSequence {
    pub elements: Vec<SequenceElement>,
}

impl InterleavedSequence {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Text plus embedding tokens the sequence occupies, counting each
    /// text element as one token.
    pub fn token_footprint(&self) -> usize {
        self.elements
            .iter()
            .map(|e| match e {
                SequenceElement::Frame { n_tokens, .. } => *n_tokens,
                _ => 1,
            })
            .sum()
    }
}

impl fmt::Display for InterleavedSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.elements.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

/// `[T_B, t_1, T_E, F_B, f_1, F_E, …, q, p]`, or `[t_1, f_1, …, q, p]`
/// without special tokens.
pub fn build_sequence(
    times: &[String],
    token_counts: &[usize],
    query: &str,
    prompt: &str,
    special_tokens: bool,
) -> Result<InterleavedSequence> {
    if times.len() != token_counts.len() {
        return Err(Error::arg(format!(
            "{} time tokens for {} frames",
            times.len(),
            token_counts.len()
        )));
    }
    use SequenceElement::*;
    let per_frame = if special_tokens { 6 } else { 2 };
    let mut elements = Vec::with_capacity(per_frame * times.len() + 2);
    for (index, (t, &n_tokens)) in times.iter().zip(token_counts).enumerate() {
        if special_tokens {
            elements.extend([
                Special(SpecialToken::TimeBegin),
                Time(t.clone()),
                Special(SpecialToken::TimeEnd),
                Special(SpecialToken::FrameBegin),
                Frame { index, n_tokens },
                Special(SpecialToken::FrameEnd),
            ]);
        } else {
            elements.extend([Time(t.clone()), Frame { index, n_tokens }]);
        }
    }
    elements.push(Query(query.to_owned()));
    elements.push(Prompt(prompt.to_owned()));
    Ok(InterleavedSequence { elements })
}

pub fn build_language_sequence(
    times: &[String],
    frames: &LanguageSequence,
    query: &str,
    prompt: &str,
    special_tokens: bool,
) -> Result<InterleavedSequence> {
    build_sequence(times, &frames.token_counts(), query, prompt, special_tokens)
}

/// Maps predicted `(start, end)` values to seconds.
///
/// Relative indices are rounded half-up, clamped to `1..=N` and looked up;
/// timestamps are clamped to `[0, duration]`.
pub fn decode_moments(pairs: &[(f64, f64)], scheme: &TimeScheme) -> Vec<Moment> {
    let duration = scheme.duration;
    let to_seconds = |v: f64| -> f64 {
        match scheme.kind {
            TimeKind::RelativeIndex => {
                let n = scheme.n_frames();
                let idx = round_half_up(v).clamp(1.0, n as f64) as usize;
                scheme.index_to_seconds[idx - 1]
            }
            TimeKind::RoundedTimestamp => v.clamp(0.0, duration),
            TimeKind::AbsoluteIndex { fps } => (v / fps).clamp(0.0, duration),
        }
    };
    pairs
        .iter()
        .map(|&(s, e)| Moment::new(to_seconds(s), to_seconds(e)).ordered())
        .collect()
}

/// The value a perfect predictor would emit for `seconds` under `scheme`.
pub fn seconds_to_time_value(seconds: f64, scheme: &TimeScheme) -> f64 {
    match scheme.kind {
        TimeKind::RelativeIndex => {
            let i = scheme
                .index_to_seconds
                .partition_point(|&t| t < seconds)
                .min(scheme.n_frames() - 1);
            let nearest = if i > 0
                && (seconds - scheme.index_to_seconds[i - 1]).abs()
                    <= (scheme.index_to_seconds[i] - seconds).abs()
            {
                i - 1
            } else {
                i
            };
            (nearest + 1) as f64
        }
        TimeKind::RoundedTimestamp => seconds,
        TimeKind::AbsoluteIndex { fps } => seconds * fps,
    }
}
