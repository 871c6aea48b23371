//! Predictor interface and mock predictors standing in for the language model.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::postprocess::format_number;
use crate::records::VideoRecord;
use crate::timecode::{seconds_to_time_value, InterleavedSequence, TimeKind, TimeScheme};

/// Everything a predictor sees for one query.
pub struct PredictorInput<'a> {
    pub sequence: &'a InterleavedSequence,
    pub scheme: &'a TimeScheme,
    /// Mocks read the ground truth from here; a real model must not.
    pub record: &'a VideoRecord,
}

pub trait MomentPredictor: Send + Sync {
    /// Raw output text, expected to look like `[[start, end], ...]`.
    fn predict(&self, input: &PredictorInput<'_>) -> String;
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictorKind {
    /// Emits the ground truth in the scheme's time units.
    EchoGt,
    /// Ground truth with each endpoint shifted by up to `jitter_frac` of the moment length.
    JitterGt,
    /// Ground truth with recoverable formatting damage.
    CorruptFormat,
    FixedString(String),
}

impl FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "echo_gt" => Ok(Self::EchoGt),
            "jitter_gt" => Ok(Self::JitterGt),
            "corrupt_format" => Ok(Self::CorruptFormat),
            "fixed_string" => Ok(Self::FixedString(String::new())),
            other => Err(Error::arg(format!("unknown predictor `{other}`"))),
        }
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::EchoGt => "echo_gt",
            Self::JitterGt => "jitter_gt",
            Self::CorruptFormat => "corrupt_format",
            Self::FixedString(_) => "fixed_string",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorSpec {
    pub kind: PredictorKind,
    pub jitter_frac: f64,
    pub corruption_rate: f64,
    pub seed: u64,
}

impl Default for PredictorSpec {
    fn default() -> Self {
        Self {
            kind: PredictorKind::EchoGt,
            jitter_frac: 0.0,
            corruption_rate: 0.0,
            seed: 0,
        }
    }
}

impl PredictorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.jitter_frac) {
            return Err(Error::arg(format!(
                "jitter_frac must be in [0, 0.5), got {}",
                self.jitter_frac
            )));
        }
        if !(0.0..=1.0).contains(&self.corruption_rate) {
            return Err(Error::arg(format!(
                "corruption_rate must be in [0, 1], got {}",
                self.corruption_rate
            )));
        }
        Ok(())
    }
}

/// Formatting failures seen in real model output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corruption {
    /// `[[a, b], [c, d]`: final bracket lost.
    DropClosingBracket,
    /// `[[a, b][c, d]]`: separator between windows lost.
    DropWindowComma,
    /// Trailing end-of-sequence marker.
    AppendEndMarker,
    /// `[[b, a]]`: endpoints reversed.
    SwapEndpoints,
    /// Nothing at all. The parser cannot recover from this one.
    Empty,
}

impl Corruption {
    pub const RECOVERABLE: [Corruption; 4] = [
        Corruption::DropClosingBracket,
        Corruption::DropWindowComma,
        Corruption::AppendEndMarker,
        Corruption::SwapEndpoints,
    ];
}

/// Renders pairs as `[[a, b], [c, d]]`, applying the given corruptions.
pub fn render_with(pairs: &[(f64, f64)], corruptions: &[Corruption]) -> String {
    if corruptions.contains(&Corruption::Empty) {
        return String::new();
    }
    let swap = corruptions.contains(&Corruption::SwapEndpoints);
    let sep = if corruptions.contains(&Corruption::DropWindowComma) { "" } else { ", " };
    let windows: Vec<String> = pairs
        .iter()
        .map(|&(a, b)| {
            let (a, b) = if swap { (b, a) } else { (a, b) };
            format!("[{}, {}]", format_number(a), format_number(b))
        })
        .collect();
    let mut out = format!("[{}", windows.join(sep));
    if !corruptions.contains(&Corruption::DropClosingBracket) {
        out.push(']');
    }
    if corruptions.contains(&Corruption::AppendEndMarker) {
        out.push_str("</s>");
    }
    out
}

/// FNV-1a, used to give each video its own reproducible random stream.
fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[derive(Debug, Clone)]
pub struct MockPredictor {
    spec: PredictorSpec,
}

impl MockPredictor {
    pub fn new(spec: PredictorSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }

    fn rng_for(&self, record: &VideoRecord) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(
            self.spec.seed ^ stable_hash(&record.video_id) ^ stable_hash(&record.query).rotate_left(17),
        )
    }

    fn ground_truth_values(input: &PredictorInput<'_>) -> Vec<(f64, f64)> {
        input
            .record
            .ground_truth
            .iter()
            .map(|m| {
                (
                    seconds_to_time_value(m.start, input.scheme),
                    seconds_to_time_value(m.end, input.scheme),
                )
            })
            .collect()
    }

    fn jitter(&self, pairs: &mut [(f64, f64)], scheme: &TimeScheme, rng: &mut ChaCha8Rng) {
        let frac = self.spec.jitter_frac;
        // index tokens are integers; truncation keeps every shift within the bound
        let integral = matches!(scheme.kind, TimeKind::RelativeIndex | TimeKind::AbsoluteIndex { .. });
        for (s, e) in pairs.iter_mut() {
            let reach = frac * (*e - *s);
            let mut shift = || {
                let d: f64 = if reach > 0.0 { rng.random_range(-reach..=reach) } else { 0.0 };
                if integral { d.trunc() } else { d }
            };
            let (ds, de) = (shift(), shift());
            *s += ds;
            *e += de;
        }
    }
}

impl MomentPredictor for MockPredictor {
    fn predict(&self, input: &PredictorInput<'_>) -> String {
        let mut rng = self.rng_for(input.record);
        match &self.spec.kind {
            PredictorKind::FixedString(s) => s.clone(),
            PredictorKind::EchoGt => render_with(&Self::ground_truth_values(input), &[]),
            PredictorKind::JitterGt => {
                let mut pairs = Self::ground_truth_values(input);
                self.jitter(&mut pairs, input.scheme, &mut rng);
                render_with(&pairs, &[])
            }
            PredictorKind::CorruptFormat => {
                let pairs = Self::ground_truth_values(input);
                let corruptions: Vec<Corruption> = if rng.random_bool(self.spec.corruption_rate) {
                    // skip corruptions that would leave this output unchanged
                    let applicable: Vec<Corruption> = Corruption::RECOVERABLE
                        .into_iter()
                        .filter(|c| match c {
                            Corruption::DropWindowComma => pairs.len() > 1,
                            Corruption::SwapEndpoints => pairs.iter().any(|(a, b)| a != b),
                            _ => true,
                        })
                        .collect();
                    let mut picked: Vec<Corruption> =
                        applicable.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
                    if picked.is_empty() {
                        picked.push(applicable[rng.random_range(0..applicable.len())]);
                    }
                    picked
                } else {
                    Vec::new()
                };
                render_with(&pairs, &corruptions)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postprocess::post_process;

    #[test]
    fn corruption_shapes() {
        let pairs = [(1.5, 4.3), (6.7, 9.2)];
        assert_eq!(render_with(&pairs, &[]), "[[1.5, 4.3], [6.7, 9.2]]");
        assert_eq!(
            render_with(&pairs, &[Corruption::DropClosingBracket]),
            "[[1.5, 4.3], [6.7, 9.2]"
        );
        assert_eq!(
            render_with(&pairs, &[Corruption::DropWindowComma]),
            "[[1.5, 4.3][6.7, 9.2]]"
        );
        assert_eq!(
            render_with(&pairs, &[Corruption::AppendEndMarker, Corruption::SwapEndpoints]),
            "[[4.3, 1.5], [9.2, 6.7]]</s>"
        );
        assert_eq!(render_with(&pairs, &[Corruption::Empty]), "");
    }

    #[test]
    fn every_recoverable_combination_parses_back() {
        let pairs = vec![(1.5, 4.3), (6.7, 9.2), (10.0, 12.0)];
        for mask in 0u8..16 {
            let picked: Vec<Corruption> = Corruption::RECOVERABLE
                .into_iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, c)| c)
                .collect();
            assert_eq!(post_process(&render_with(&pairs, &picked)).moments, pairs);
        }
    }

    #[test]
    fn spec_bounds() {
        let bad = PredictorSpec { jitter_frac: 0.5, ..Default::default() };
        assert!(MockPredictor::new(bad).is_err());
        let bad = PredictorSpec { corruption_rate: 1.5, ..Default::default() };
        assert!(MockPredictor::new(bad).is_err());
    }
}
