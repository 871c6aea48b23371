//! Informative frame selection.
//!
//! Frames are scored by the norm of their difference to the previous frame,
//! the scores are smoothed with a Gaussian, and the `k` highest-scoring
//! frames become key frames. Frame 0 has no predecessor and is given the
//! largest raw score, so it is always selected.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::FrameTensor;

pub const DEFAULT_SIGMA: f64 = 1.0;

/// Raw and smoothed per-frame change scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangeProfile {
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub sigma: f64,
}

impl ChangeProfile {
    /// Smooths `raw` (whose entry 0 is already the max of the rest).
    pub fn from_raw(raw: Vec<f64>, sigma: f64) -> Result<Self> {
        let smoothed = gaussian_smooth(&raw, sigma)?;
        Ok(Self {
            raw,
            smoothed,
            sigma,
        })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FrameSplit {
    pub key_indices: Vec<usize>,
    pub nonkey_indices: Vec<usize>,
}

impl FrameSplit {
    pub fn k(&self) -> usize {
        self.key_indices.len()
    }

    pub fn n_frames(&self) -> usize {
        self.key_indices.len() + self.nonkey_indices.len()
    }

    /// `mask[i]` is true when frame `i` is a key frame.
    pub fn key_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n_frames()];
        for &i in &self.key_indices {
            mask[i] = true;
        }
        mask
    }

    /// Checks that both lists are sorted, disjoint and cover `0..n`.
    pub fn validate(&self, n_frames: usize) -> Result<()> {
        let sorted = |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]);
        if !sorted(&self.key_indices) || !sorted(&self.nonkey_indices) {
            return Err(Error::Invariant("frame split lists are not sorted".into()));
        }
        if self.n_frames() != n_frames {
            return Err(Error::Invariant(format!(
                "frame split covers {} frames, expected {n_frames}",
                self.n_frames()
            )));
        }
        let mut seen = vec![false; n_frames];
        for &i in self.key_indices.iter().chain(&self.nonkey_indices) {
            if i >= n_frames || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Invariant(format!(
                    "frame {i} is out of range or listed twice"
                )));
            }
        }
        Ok(())
    }
}

/// Per-frame differences to the previous frame. Frame 0 gets an all-zero slab.
pub fn frame_deltas(frames: &FrameTensor) -> Result<FrameTensor> {
    let n = frames.n_frames();
    if n < 2 {
        return Err(Error::arg(format!(
            "frame differencing needs at least 2 frames, got {n}"
        )));
    }
    let len = frames.frame_len();
    let mut data = vec![0.0; n * len];
    for i in 1..n {
        let (prev, cur) = (frames.frame(i - 1), frames.frame(i));
        for (out, (c, p)) in data[i * len..(i + 1) * len]
            .iter_mut()
            .zip(cur.iter().zip(prev))
        {
            *out = c - p;
        }
    }
    FrameTensor::new(n, frames.n_tokens(), frames.dim(), data)
}

/// Frobenius norm of every delta slab; entry 0 is replaced by the max of the rest.
pub fn change_norms(deltas: &FrameTensor) -> Vec<f64> {
    let mut norms: Vec<f64> = deltas
        .frames()
        .map(|slab| slab.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    norms[0] = norms[1..].iter().copied().fold(0.0, f64::max);
    norms
}

/// Truncated Gaussian kernel of radius `ceil(3σ)`, normalized to sum 1.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::arg(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(vec![1.0]);
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let denom = 2.0 * sigma * sigma;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|x| (-((x * x) as f64) / denom).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    for w in &mut kernel {
        *w /= sum;
    }
    Ok(kernel)
}

/// Maps any integer offset into `0..n` by half-sample symmetric reflection
/// (`d c b a | a b c d | d c b a`), repeating as often as needed.
fn reflect_index(i: i64, n: usize) -> usize {
    let n = n as i64;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

/// Convolves `signal` with the kernel under reflect padding.
pub fn convolve_reflect(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n = signal.len();
    if n == 0 {
        return Vec::new();
    }
    let radius = (kernel.len() / 2) as i64;
    (0..n as i64)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, w)| w * signal[reflect_index(i + j as i64 - radius, n)])
                .sum()
        })
        .collect()
}

/// Smooths entries `1..` of `scores`; entry 0 passes through untouched.
pub fn gaussian_smooth(scores: &[f64], sigma: f64) -> Result<Vec<f64>> {
    let kernel = gaussian_kernel(sigma)?;
    let Some((&first, rest)) = scores.split_first() else {
        return Ok(Vec::new());
    };
    let mut out = Vec::with_capacity(scores.len());
    out.push(first);
    if sigma == 0.0 {
        out.extend_from_slice(rest);
    } else {
        // a normalized kernel averages, so results stay within the input range up to rounding
        let (lo, hi) = rest
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        out.extend(convolve_reflect(rest, &kernel).into_iter().map(|v| v.clamp(lo, hi)));
    }
    Ok(out)
}

/// Indices of the `k` largest values, ties broken toward the lower index,
/// returned in ascending index order.
pub(crate) fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

pub fn select_key_frames(profile: &ChangeProfile, k: usize) -> Result<FrameSplit> {
    let n = profile.smoothed.len();
    if k == 0 || k > n {
        return Err(Error::arg(format!("k must be in 1..={n}, got {k}")));
    }
    let key_indices = top_k_indices(&profile.smoothed, k);
    let mut is_key = vec![false; n];
    for &i in &key_indices {
        is_key[i] = true;
    }
    let nonkey_indices = (0..n).filter(|&i| !is_key[i]).collect();
    Ok(FrameSplit {
        key_indices,
        nonkey_indices,
    })
}

/// Scores, smooths and splits a video's frames.
pub fn run_ifs(frames: &FrameTensor, sigma: f64, k: usize) -> Result<(FrameSplit, ChangeProfile)> {
    let deltas = frame_deltas(frames)?;
    let profile = ChangeProfile::from_raw(change_norms(&deltas), sigma)?;
    let split = select_key_frames(&profile, k)?;
    Ok((split, profile))
}
