//! Synthetic videos made of constant-feature segments with planted boundaries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::records::{Moment, SamplingPlan, VideoRecord};
use crate::tensor::FrameTensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start_frame: usize,
    /// Exclusive.
    pub end_frame: usize,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub video_id: String,
    pub query: String,
    pub n_frames: usize,
    pub n_patches: usize,
    pub dim: usize,
    pub duration: f64,
    pub segments: Vec<Segment>,
    pub noise_std: f64,
    pub seed: u64,
}

/// Parameters for drawing random [`SyntheticSpec`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoProfile {
    pub n_frames: usize,
    pub n_patches: usize,
    pub dim: usize,
    pub duration: f64,
    pub max_segments: usize,
    pub min_segment_len: usize,
    /// Segments alternate between levels `0` and `level_gap`.
    pub level_gap: f64,
    pub noise_std: f64,
}

impl Default for VideoProfile {
    fn default() -> Self {
        Self {
            n_frames: 60,
            n_patches: 4,
            dim: 16,
            duration: 30.0,
            max_segments: 4,
            min_segment_len: 4,
            level_gap: 1.0,
            noise_std: 0.01,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 2 || self.n_patches == 0 || self.dim == 0 {
            return Err(Error::arg("synthetic video needs >= 2 frames and non-empty slabs"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::arg("noise_std must be >= 0"));
        }
        let mut expected_start = 0;
        for s in &self.segments {
            if s.start_frame != expected_start || s.end_frame <= s.start_frame || !s.level.is_finite() {
                return Err(Error::arg("segments must be non-empty and tile the frames in order"));
            }
            expected_start = s.end_frame;
        }
        if expected_start != self.n_frames {
            return Err(Error::arg("segments must cover every frame"));
        }
        if self.ground_truth_segments().iter().any(|s| s.end_frame - s.start_frame < 2) {
            return Err(Error::arg("ground-truth segments need at least 2 frames"));
        }
        Ok(())
    }

    /// Segments reported as ground truth: all but the leading one, or the
    /// only segment when there is just one.
    pub fn ground_truth_segments(&self) -> &[Segment] {
        if self.segments.len() > 1 {
            &self.segments[1..]
        } else {
            &self.segments
        }
    }

    /// First frame of every segment after the first.
    pub fn boundaries(&self) -> Vec<usize> {
        self.segments.iter().skip(1).map(|s| s.start_frame).collect()
    }

    /// Draws segment lengths of at least `min_segment_len` frames with
    /// alternating levels.
    pub fn random(
        video_id: impl Into<String>,
        profile: &VideoProfile,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = profile.n_frames;
        let min_len = profile.min_segment_len.max(2);
        let max_segments = profile.max_segments.clamp(1, (n / min_len).max(1));
        if n < min_len {
            return Err(Error::arg("too few frames for the minimum segment length"));
        }
        let count = rng.random_range(1..=max_segments);
        let mut lengths = vec![min_len; count];
        for _ in 0..n - count * min_len {
            lengths[rng.random_range(0..count)] += 1;
        }
        let mut start = 0;
        let segments = lengths
            .iter()
            .enumerate()
            .map(|(i, &len)| {
                let s = Segment {
                    start_frame: start,
                    end_frame: start + len,
                    level: if i % 2 == 0 { 0.0 } else { profile.level_gap },
                };
                start += len;
                s
            })
            .collect();
        let spec = Self {
            video_id: video_id.into(),
            query: format!("synthetic event with {count} segments"),
            n_frames: n,
            n_patches: profile.n_patches,
            dim: profile.dim,
            duration: profile.duration,
            segments,
            noise_std: profile.noise_std,
            seed: rng.random(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Frames of a segment share `level · base` plus Gaussian noise, with one
/// standard-normal `base` vector per video. Ground truth spans run from the
/// first to the last sampled timestamp of each ground-truth segment.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(FrameTensor, VideoRecord)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let slab = spec.n_patches * spec.dim;
    let base: Vec<f64> = (0..slab).map(|_| StandardNormal.sample(&mut rng)).collect();
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::arg(e.to_string()))?;
    let mut data = Vec::with_capacity(spec.n_frames * slab);
    for seg in &spec.segments {
        for _ in seg.start_frame..seg.end_frame {
            data.extend(base.iter().map(|b| {
                let jitter = if spec.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                seg.level * b + jitter
            }));
        }
    }
    let frames = FrameTensor::new(spec.n_frames, spec.n_patches, spec.dim, data)?;
    let plan = SamplingPlan::uniform(spec.n_frames, spec.duration)?;
    let ts = plan.timestamps();
    let gt = spec
        .ground_truth_segments()
        .iter()
        .map(|s| Moment::new(ts[s.start_frame], ts[s.end_frame - 1]))
        .collect();
    let record = VideoRecord::new(spec.video_id.clone(), spec.duration, spec.query.clone(), gt)?;
    Ok((frames, record))
}
