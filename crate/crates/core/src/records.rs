//! Dataset records, moments, sampling plans and the JSON-lines file formats.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// A `(start, end)` interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moment {
    pub start: f64,
    pub end: f64,
}

impl Moment {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    /// Swaps reversed endpoints.
    pub fn ordered(self) -> Self {
        if self.start > self.end {
            Self::new(self.end, self.start)
        } else {
            self
        }
    }

    /// Orders the endpoints and clamps both into `[0, duration]`.
    pub fn normalized(self, duration: f64) -> Self {
        let m = self.ordered();
        Self::new(m.start.clamp(0.0, duration), m.end.clamp(0.0, duration))
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.len() <= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub duration: f64,
    pub query: String,
    #[serde(rename = "moments")]
    pub ground_truth: Vec<Moment>,
}

impl VideoRecord {
    /// Validates the duration and normalizes every ground-truth moment.
    pub fn new(
        video_id: impl Into<String>,
        duration: f64,
        query: impl Into<String>,
        ground_truth: Vec<Moment>,
    ) -> Result<Self> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::arg(format!("duration must be > 0, got {duration}")));
        }
        if ground_truth
            .iter()
            .any(|m| !m.start.is_finite() || !m.end.is_finite())
        {
            return Err(Error::arg("ground-truth moment is not finite"));
        }
        Ok(Self {
            video_id: video_id.into(),
            duration,
            query: query.into(),
            ground_truth: ground_truth
                .into_iter()
                .map(|m| m.normalized(duration))
                .collect(),
        })
    }

    pub fn normalized(&self) -> Self {
        Self {
            ground_truth: self
                .ground_truth
                .iter()
                .map(|m| m.normalized(self.duration))
                .collect(),
            ..self.clone()
        }
    }

    pub fn to_json_line(&self) -> String {
        let moments: Vec<[f64; 2]> = self.ground_truth.iter().map(|m| [m.start, m.end]).collect();
        serde_json::json!({
            "video_id": self.video_id,
            "duration": self.duration,
            "query": self.query,
            "moments": moments,
        })
        .to_string()
    }
}

/// Frame timestamps for one video. Timestamps are strictly increasing and lie in `[0, duration]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    duration: f64,
    timestamps: Vec<f64>,
}

impl SamplingPlan {
    pub fn new(duration: f64, timestamps: Vec<f64>) -> Result<Self> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::arg(format!("duration must be > 0, got {duration}")));
        }
        if timestamps.is_empty() {
            return Err(Error::arg("sampling plan needs at least one frame"));
        }
        if timestamps
            .iter()
            .any(|&t| !t.is_finite() || t < 0.0 || t > duration)
        {
            return Err(Error::arg("timestamps must lie within [0, duration]"));
        }
        if timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::arg("timestamps must be strictly increasing"));
        }
        Ok(Self {
            duration,
            timestamps,
        })
    }

    /// `n` frames at the centres of `n` equal bins: `t_i = (i + 0.5) · T / n`.
    pub fn uniform(n_frames: usize, duration: f64) -> Result<Self> {
        if n_frames == 0 {
            return Err(Error::arg("sampling plan needs at least one frame"));
        }
        let step = duration / n_frames as f64;
        Self::new(
            duration,
            (0..n_frames).map(|i| (i as f64 + 0.5) * step).collect(),
        )
    }

    pub fn n_frames(&self) -> usize {
        self.timestamps.len()
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    /// Sampled frames per second of video, `N / T`.
    pub fn rate(&self) -> f64 {
        self.n_frames() as f64 / self.duration
    }
}

/// A line of a predictions file.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub video_id: String,
    pub query: Option<String>,
    pub prediction: PredictionPayload,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictionPayload {
    /// Unparsed predictor text.
    Raw(String),
    /// Already-structured `[start, end]` pairs.
    Moments(Vec<(f64, f64)>),
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_owned()))
        .filter(|(_, l)| !l.is_empty())
        .collect())
}

fn field<'a>(obj: &'a Value, line: usize, name: &'static str) -> Result<&'a Value> {
    obj.get(name)
        .ok_or(Error::MissingField { line, field: name })
}

fn string_field(obj: &Value, line: usize, name: &'static str) -> Result<String> {
    field(obj, line, name)?
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| Error::Record {
            line,
            message: format!("`{name}` must be a string"),
        })
}

fn pairs_field(obj: &Value, line: usize, name: &'static str) -> Result<Vec<(f64, f64)>> {
    let bad = || Error::Record {
        line,
        message: format!("`{name}` must be an array of [start, end] number pairs"),
    };
    field(obj, line, name)?
        .as_array()
        .ok_or_else(bad)?
        .iter()
        .map(|pair| match pair.as_array().map(Vec::as_slice) {
            Some([a, b]) => match (a.as_f64(), b.as_f64()) {
                (Some(a), Some(b)) => Ok((a, b)),
                _ => Err(bad()),
            },
            _ => Err(bad()),
        })
        .collect()
}

fn parse_object(line: usize, text: &str) -> Result<Value> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Record {
        line,
        message: format!("malformed JSON: {e}"),
    })?;
    if !value.is_object() {
        return Err(Error::Record {
            line,
            message: "expected a JSON object".into(),
        });
    }
    Ok(value)
}

pub fn parse_record_line(line: usize, text: &str) -> Result<VideoRecord> {
    let obj = parse_object(line, text)?;
    let video_id = string_field(&obj, line, "video_id")?;
    let duration = field(&obj, line, "duration")?
        .as_f64()
        .ok_or_else(|| Error::Record {
            line,
            message: "`duration` must be a number".into(),
        })?;
    let query = string_field(&obj, line, "query")?;
    let moments = pairs_field(&obj, line, "moments")?
        .into_iter()
        .map(|(s, e)| Moment::new(s, e))
        .collect();
    VideoRecord::new(video_id, duration, query, moments).map_err(|e| Error::Record {
        line,
        message: e.to_string(),
    })
}

/// Reads a records file, one JSON object per line. Blank lines are skipped.
pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<VideoRecord>> {
    read_lines(path.as_ref())?
        .into_iter()
        .map(|(line, text)| parse_record_line(line, &text))
        .collect()
}

pub fn save_records(records: &[VideoRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_json_line());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn parse_prediction_line(line: usize, text: &str) -> Result<PredictionRecord> {
    let obj = parse_object(line, text)?;
    let video_id = string_field(&obj, line, "video_id")?;
    let query = match obj.get("query") {
        Some(_) => Some(string_field(&obj, line, "query")?),
        None => None,
    };
    let prediction = if obj.get("pred_raw").is_some() {
        PredictionPayload::Raw(string_field(&obj, line, "pred_raw")?)
    } else if obj.get("pred_moments").is_some() {
        PredictionPayload::Moments(pairs_field(&obj, line, "pred_moments")?)
    } else {
        return Err(Error::MissingField {
            line,
            field: "pred_raw",
        });
    };
    Ok(PredictionRecord {
        video_id,
        query,
        prediction,
    })
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    read_lines(path.as_ref())?
        .into_iter()
        .map(|(line, text)| parse_prediction_line(line, &text))
        .collect()
}
