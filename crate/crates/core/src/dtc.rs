//! Dynamic token compression for non-key frames, and projection of every
//! frame's token block into the language space.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ifs::{top_k_indices, FrameSplit};
use crate::tensor::QueryTensor;

pub const DEFAULT_TARGET_TOKENS: usize = 16;
pub const DEFAULT_POOL_WINDOW: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressionMethod {
    None,
    AveragePooling,
    VarianceSelect,
}

impl FromStr for CompressionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "avgpool" | "average_pooling" => Ok(Self::AveragePooling),
            "variance" | "variance_select" => Ok(Self::VarianceSelect),
            other => Err(Error::arg(format!("unknown compression method `{other}`"))),
        }
    }
}

impl fmt::Display for CompressionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::AveragePooling => "avgpool",
            Self::VarianceSelect => "variance",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CompressionConfig {
    pub method: CompressionMethod,
    /// Tokens kept per non-key frame by variance selection.
    pub target_tokens: usize,
    pub pool_window: usize,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self::variance_select(DEFAULT_TARGET_TOKENS)
    }
}

impl CompressionConfig {
    pub fn none() -> Self {
        Self {
            method: CompressionMethod::None,
            target_tokens: usize::MAX,
            pool_window: 1,
        }
    }

    pub fn average_pooling(window: usize) -> Self {
        Self {
            method: CompressionMethod::AveragePooling,
            target_tokens: usize::MAX,
            pool_window: window,
        }
    }

    pub fn variance_select(target_tokens: usize) -> Self {
        Self {
            method: CompressionMethod::VarianceSelect,
            target_tokens,
            pool_window: DEFAULT_POOL_WINDOW,
        }
    }

    /// Builds a config that compresses `n_queries` tokens to exactly `target`.
    /// Average pooling only reaches targets of the form `ceil(Q / w)`.
    pub fn for_target(method: CompressionMethod, n_queries: usize, target: usize) -> Result<Self> {
        if target == 0 || target > n_queries {
            return Err(Error::arg(format!(
                "target tokens must be in 1..={n_queries}, got {target}"
            )));
        }
        match method {
            CompressionMethod::None => Ok(Self::none()),
            CompressionMethod::VarianceSelect => Ok(Self::variance_select(target)),
            CompressionMethod::AveragePooling => {
                let window = n_queries.div_ceil(target);
                if n_queries.div_ceil(window) != target {
                    return Err(Error::arg(format!(
                        "average pooling cannot turn {n_queries} tokens into {target}"
                    )));
                }
                Ok(Self::average_pooling(window))
            }
        }
    }

    /// Tokens per compressed non-key frame for `n_queries` input tokens.
    pub fn tokens_after(&self, n_queries: usize) -> Result<usize> {
        self.validate(n_queries)?;
        Ok(match self.method {
            CompressionMethod::None => n_queries,
            CompressionMethod::AveragePooling => n_queries.div_ceil(self.pool_window),
            CompressionMethod::VarianceSelect => self.target_tokens,
        })
    }

    pub fn validate(&self, n_queries: usize) -> Result<()> {
        match self.method {
            CompressionMethod::None => Ok(()),
            CompressionMethod::AveragePooling if self.pool_window == 0 => {
                Err(Error::arg("pool window must be >= 1"))
            }
            CompressionMethod::AveragePooling => Ok(()),
            CompressionMethod::VarianceSelect
                if self.target_tokens == 0 || self.target_tokens > n_queries =>
            {
                Err(Error::arg(format!(
                    "target tokens must be in 1..={n_queries}, got {}",
                    self.target_tokens
                )))
            }
            CompressionMethod::VarianceSelect => Ok(()),
        }
    }
}

/// A frame's `n_tokens × dim` token block.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBlock {
    pub n_tokens: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl TokenBlock {
    pub fn new(n_tokens: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_tokens * dim {
            return Err(Error::Shape(format!(
                "token block has {} values, expected {n_tokens}x{dim}",
                data.len()
            )));
        }
        Ok(Self {
            n_tokens,
            dim,
            data,
        })
    }

    pub fn token(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Mean of tokens `[j·w, min((j+1)·w, Q))` for every `j`.
pub fn average_pool(block: &TokenBlock, window: usize) -> Result<TokenBlock> {
    if window == 0 {
        return Err(Error::arg("pool window must be >= 1"));
    }
    let groups = (0..block.n_tokens.div_ceil(window))
        .map(|j| (j * window, ((j + 1) * window).min(block.n_tokens)));
    pool_groups(block, groups)
}

/// Average pooling into exactly `target` groups of near-equal size.
pub fn adaptive_average_pool(block: &TokenBlock, target: usize) -> Result<TokenBlock> {
    let q = block.n_tokens;
    if target == 0 || target > q {
        return Err(Error::arg(format!("target tokens must be in 1..={q}, got {target}")));
    }
    let groups = (0..target).map(|j| (j * q / target, ((j + 1) * q).div_ceil(target)));
    pool_groups(block, groups)
}

fn pool_groups(
    block: &TokenBlock,
    groups: impl ExactSizeIterator<Item = (usize, usize)>,
) -> Result<TokenBlock> {
    let dim = block.dim;
    let n_out = groups.len();
    let mut data = Vec::with_capacity(n_out * dim);
    for (lo, hi) in groups {
        let count = (hi - lo) as f64;
        for d in 0..dim {
            data.push((lo..hi).map(|t| block.data[t * dim + d]).sum::<f64>() / count);
        }
    }
    TokenBlock::new(n_out, dim, data)
}

/// Per-query variance across frames: the mean over dims of the population
/// variance of that dim.
pub fn query_variances(nonkey: &QueryTensor) -> Result<Vec<f64>> {
    let n = nonkey.n_frames();
    if n < 2 {
        return Err(Error::arg(format!(
            "query variance needs at least 2 frames, got {n}"
        )));
    }
    let (q, dim) = (nonkey.n_tokens(), nonkey.dim());
    let nf = n as f64;
    Ok((0..q)
        .map(|qi| {
            let total: f64 = (0..dim)
                .map(|d| {
                    let mean = (0..n).map(|f| nonkey.token(f, qi)[d]).sum::<f64>() / nf;
                    (0..n)
                        .map(|f| (nonkey.token(f, qi)[d] - mean).powi(2))
                        .sum::<f64>()
                        / nf
                })
                .sum();
            total / dim as f64
        })
        .collect())
}

/// Keeps the `t` highest-variance queries in every non-key frame.
/// Returns the compressed tensor and the kept query indices, ascending.
pub fn variance_select(nonkey: &QueryTensor, t: usize) -> Result<(QueryTensor, Vec<usize>)> {
    let q = nonkey.n_tokens();
    if t == 0 || t > q {
        return Err(Error::arg(format!("t must be in 1..={q}, got {t}")));
    }
    let kept = top_k_indices(&query_variances(nonkey)?, t);
    let dim = nonkey.dim();
    let mut data = Vec::with_capacity(nonkey.n_frames() * t * dim);
    for f in 0..nonkey.n_frames() {
        for &qi in &kept {
            data.extend_from_slice(nonkey.token(f, qi));
        }
    }
    Ok((QueryTensor::new(nonkey.n_frames(), t, dim, data)?, kept))
}

/// Maps token vectors from the query space into the language space.
///
/// Implementations must be pure so that pipeline runs are reproducible.
pub trait Projector: Send + Sync {
    /// Output width for inputs of width `input_dim`.
    fn output_dim(&self, input_dim: usize) -> Result<usize>;
    fn project(&self, token: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityProjector;

impl Projector for IdentityProjector {
    fn output_dim(&self, input_dim: usize) -> Result<usize> {
        Ok(input_dim)
    }

    fn project(&self, token: &[f64], out: &mut [f64]) {
        out.copy_from_slice(token);
    }
}

/// Dense `out_dim × in_dim` linear map.
#[derive(Debug, Clone)]
pub struct LinearProjector {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
}

impl LinearProjector {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != in_dim * out_dim || in_dim == 0 || out_dim == 0 {
            return Err(Error::Shape(format!(
                "projector weights: {} values for {out_dim}x{in_dim}",
                weights.len()
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
        })
    }
}

impl Projector for LinearProjector {
    fn output_dim(&self, input_dim: usize) -> Result<usize> {
        if input_dim != self.in_dim {
            return Err(Error::Shape(format!(
                "projector expects dim {}, got {input_dim}",
                self.in_dim
            )));
        }
        Ok(self.out_dim)
    }

    fn project(&self, token: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(self.in_dim)) {
            *o = row.iter().zip(token).map(|(w, x)| w * x).sum();
        }
    }
}

/// The per-frame language-space token blocks, in video order.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageSequence {
    pub per_frame: Vec<TokenBlock>,
    pub key_mask: Vec<bool>,
    /// Query indices kept by variance selection, when it ran.
    pub kept_query_indices: Option<Vec<usize>>,
}

impl LanguageSequence {
    pub fn n_frames(&self) -> usize {
        self.per_frame.len()
    }

    pub fn total_tokens(&self) -> usize {
        self.per_frame.iter().map(|b| b.n_tokens).sum()
    }

    pub fn token_counts(&self) -> Vec<usize> {
        self.per_frame.iter().map(|b| b.n_tokens).collect()
    }
}

fn tensor_blocks(t: &QueryTensor) -> Vec<TokenBlock> {
    t.frames()
        .map(|slab| TokenBlock {
            n_tokens: t.n_tokens(),
            dim: t.dim(),
            data: slab.to_vec(),
        })
        .collect()
}

fn compress_nonkey(
    nonkey: &QueryTensor,
    cfg: &CompressionConfig,
) -> Result<(Vec<TokenBlock>, Option<Vec<usize>>)> {
    match cfg.method {
        CompressionMethod::None => Ok((tensor_blocks(nonkey), None)),
        CompressionMethod::AveragePooling => Ok((
            tensor_blocks(nonkey)
                .iter()
                .map(|b| average_pool(b, cfg.pool_window))
                .collect::<Result<_>>()?,
            None,
        )),
        // a lone non-key frame has no variance to rank, so it is pooled down to T instead
        CompressionMethod::VarianceSelect if nonkey.n_frames() < 2 => Ok((
            tensor_blocks(nonkey)
                .iter()
                .map(|b| adaptive_average_pool(b, cfg.target_tokens))
                .collect::<Result<_>>()?,
            None,
        )),
        CompressionMethod::VarianceSelect => {
            let (compressed, kept) = variance_select(nonkey, cfg.target_tokens)?;
            Ok((tensor_blocks(&compressed), Some(kept)))
        }
    }
}

fn project_block(block: &TokenBlock, projector: &dyn Projector, out_dim: usize) -> TokenBlock {
    let mut data = vec![0.0; block.n_tokens * out_dim];
    for (t, out) in data.chunks_exact_mut(out_dim).enumerate() {
        projector.project(block.token(t), out);
    }
    TokenBlock {
        n_tokens: block.n_tokens,
        dim: out_dim,
        data,
    }
}

/// Compresses the non-key frames, projects every block, and restores video order.
///
/// `key` holds the frames listed in `split.key_indices` (in that order) and
/// `nonkey` those in `split.nonkey_indices`; either may be `None` when the
/// corresponding list is empty.
pub fn compress_and_project(
    key: Option<&QueryTensor>,
    nonkey: Option<&QueryTensor>,
    split: &FrameSplit,
    cfg: &CompressionConfig,
    projector: &dyn Projector,
) -> Result<LanguageSequence> {
    let frames_of = |t: Option<&QueryTensor>| t.map_or(0, QueryTensor::n_frames);
    if frames_of(key) != split.key_indices.len() || frames_of(nonkey) != split.nonkey_indices.len()
    {
        return Err(Error::Shape(format!(
            "split has {} key and {} non-key frames, tensors have {} and {}",
            split.key_indices.len(),
            split.nonkey_indices.len(),
            frames_of(key),
            frames_of(nonkey)
        )));
    }
    let (q, d1) = match (key, nonkey) {
        (Some(k), Some(n)) if (k.n_tokens(), k.dim()) != (n.n_tokens(), n.dim()) => {
            return Err(Error::Shape(
                "key and non-key tensors differ in query count or dim".into(),
            ))
        }
        (Some(t), _) | (None, Some(t)) => (t.n_tokens(), t.dim()),
        (None, None) => return Err(Error::arg("no frames to compress")),
    };
    cfg.validate(q)?;
    let out_dim = projector.output_dim(d1)?;

    let key_blocks = key.map(tensor_blocks).unwrap_or_default();
    let (nonkey_blocks, kept) = match nonkey {
        Some(t) => compress_nonkey(t, cfg)?,
        None => (Vec::new(), None),
    };

    let n = split.n_frames();
    let mut slots: Vec<Option<TokenBlock>> = vec![None; n];
    for (&i, b) in split.key_indices.iter().zip(&key_blocks) {
        slots[i] = Some(project_block(b, projector, out_dim));
    }
    for (&i, b) in split.nonkey_indices.iter().zip(&nonkey_blocks) {
        slots[i] = Some(project_block(b, projector, out_dim));
    }
    let per_frame = slots
        .into_iter()
        .enumerate()
        .map(|(i, b)| b.ok_or_else(|| Error::Invariant(format!("frame {i} missing after compression"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(LanguageSequence {
        per_frame,
        key_mask: split.key_mask(),
        kept_query_indices: kept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn block(tokens: &[&[f64]]) -> TokenBlock {
        let dim = tokens[0].len();
        TokenBlock::new(tokens.len(), dim, tokens.concat()).unwrap()
    }

    fn random_tensor(rng: &mut ChaCha8Rng, n: usize, q: usize, d: usize) -> QueryTensor {
        QueryTensor::new(n, q, d, (0..n * q * d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn pool_pairs() {
        let b = block(&[&[2.0], &[4.0], &[6.0], &[8.0]]);
        assert_eq!(average_pool(&b, 2).unwrap().data, vec![3.0, 7.0]);
    }

    #[test]
    fn pool_of_identical_tokens() {
        let tok: &[f64] = &[1.5, -2.0];
        let b = block(&[tok; 6]);
        let out = average_pool(&b, 2).unwrap();
        assert_eq!(out.n_tokens, 3);
        assert!(out.data.chunks(2).all(|t| t == [1.5, -2.0]));
    }

    #[test]
    fn odd_count_keeps_last_token() {
        let b = block(&[&[1.0], &[3.0], &[5.0], &[7.0], &[11.0]]);
        let out = average_pool(&b, 2).unwrap();
        assert_eq!(out.data, vec![2.0, 6.0, 11.0]);
        assert!(average_pool(&b, 0).is_err());
        assert_eq!(average_pool(&b, 1).unwrap(), b);
    }

    #[test]
    fn adaptive_pool_hits_target() {
        let b = block(&[&[1.0], &[2.0], &[3.0], &[4.0], &[5.0]]);
        for t in 1..=5 {
            assert_eq!(adaptive_average_pool(&b, t).unwrap().n_tokens, t);
        }
        assert_eq!(adaptive_average_pool(&b, 5).unwrap(), b);
    }

    #[test]
    fn variances() {
        // one query, two dims, two frames: (0,0) then (2,0)
        let t = QueryTensor::new(2, 1, 2, vec![0.0, 0.0, 2.0, 0.0]).unwrap();
        assert_eq!(query_variances(&t).unwrap(), vec![0.5]);
        let constant = QueryTensor::new(3, 1, 2, vec![1.0, 4.0, 1.0, 4.0, 1.0, 4.0]).unwrap();
        assert_eq!(query_variances(&constant).unwrap(), vec![0.0]);
        let one = QueryTensor::new(1, 1, 1, vec![1.0]).unwrap();
        assert!(query_variances(&one).is_err());
    }

    #[test]
    fn variance_scales_quadratically() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_tensor(&mut rng, 5, 4, 3);
        let v = query_variances(&t).unwrap();
        let v3 = query_variances(&t.map_values(|x| 3.0 * x).unwrap()).unwrap();
        for (a, b) in v.iter().zip(&v3) {
            assert!((b - 9.0 * a).abs() < 1e-12);
        }
    }

    #[test]
    fn selection_tie_rule() {
        // per-query variances 0.9, 0.1, 0.5, 0.5 across two frames (population variance = (a-b)^2/4)
        let spread = [0.9f64, 0.1, 0.5, 0.5].map(|v| 2.0 * v.sqrt());
        let mut data = vec![0.0; 4];
        data.extend(spread);
        let t = QueryTensor::new(2, 4, 1, data).unwrap();
        let (out, kept) = variance_select(&t, 2).unwrap();
        assert_eq!(kept, vec![0, 2]);
        assert_eq!(out.token(1, 1), &[spread[2]]);

        let flat = QueryTensor::new(2, 4, 1, vec![0.0; 8]).unwrap();
        assert_eq!(variance_select(&flat, 2).unwrap().1, vec![0, 1]);
        let (same, _) = variance_select(&t, 4).unwrap();
        assert_eq!(same, t);
        assert!(variance_select(&t, 0).is_err());
        assert!(variance_select(&t, 5).is_err());
    }

    #[test]
    fn charades_token_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let split = FrameSplit {
            key_indices: (0..32).collect(),
            nonkey_indices: (32..60).collect(),
        };
        let key = random_tensor(&mut rng, 32, 32, 4);
        let nonkey = random_tensor(&mut rng, 28, 32, 4);
        let seq = compress_and_project(
            Some(&key),
            Some(&nonkey),
            &split,
            &CompressionConfig::variance_select(16),
            &IdentityProjector,
        )
        .unwrap();
        assert_eq!(seq.total_tokens(), 1472);
    }

    #[test]
    fn none_method_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let split = FrameSplit {
            key_indices: vec![0, 2],
            nonkey_indices: vec![1, 3],
        };
        let key = random_tensor(&mut rng, 2, 3, 2);
        let nonkey = random_tensor(&mut rng, 2, 3, 2);
        let seq = compress_and_project(
            Some(&key),
            Some(&nonkey),
            &split,
            &CompressionConfig::none(),
            &IdentityProjector,
        )
        .unwrap();
        assert_eq!(seq.total_tokens(), 4 * 3);
        assert_eq!(seq.per_frame[0].data, key.frame(0));
        assert_eq!(seq.per_frame[1].data, nonkey.frame(0));
        assert_eq!(seq.per_frame[2].data, key.frame(1));
        assert_eq!(seq.per_frame[3].data, nonkey.frame(1));
        assert_eq!(seq.key_mask, vec![true, false, true, false]);
    }

    #[test]
    fn projector_shape_checks() {
        let split = FrameSplit {
            key_indices: vec![0],
            nonkey_indices: vec![],
        };
        let key = QueryTensor::new(1, 2, 3, vec![1.0; 6]).unwrap();
        let wrong = LinearProjector::new(4, 5, vec![0.0; 20]).unwrap();
        assert!(compress_and_project(Some(&key), None, &split, &CompressionConfig::none(), &wrong).is_err());
        let right = LinearProjector::new(3, 5, vec![1.0; 15]).unwrap();
        let seq = compress_and_project(Some(&key), None, &split, &CompressionConfig::none(), &right).unwrap();
        assert_eq!((seq.per_frame[0].n_tokens, seq.per_frame[0].dim), (2, 5));
        assert!(seq.per_frame[0].data.iter().all(|&v| v == 3.0));
    }

    #[test]
    fn single_nonkey_frame_still_hits_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let split = FrameSplit {
            key_indices: vec![0, 1],
            nonkey_indices: vec![2],
        };
        let key = random_tensor(&mut rng, 2, 8, 2);
        let nonkey = random_tensor(&mut rng, 1, 8, 2);
        let seq = compress_and_project(
            Some(&key),
            Some(&nonkey),
            &split,
            &CompressionConfig::variance_select(3),
            &IdentityProjector,
        )
        .unwrap();
        assert_eq!(seq.token_counts(), vec![8, 8, 3]);
    }

    #[test]
    fn for_target_rules() {
        assert_eq!(
            CompressionConfig::for_target(CompressionMethod::AveragePooling, 32, 16).unwrap().pool_window,
            2
        );
        assert!(CompressionConfig::for_target(CompressionMethod::AveragePooling, 32, 24).is_err());
        assert!(CompressionConfig::for_target(CompressionMethod::VarianceSelect, 32, 33).is_err());
    }

    proptest! {
        #[test]
        fn token_count_law(
            n in 2usize..10, q in 1usize..9, d in 1usize..4, seed: u64,
            k_frac in 0.0f64..1.0, t_frac in 0.0f64..1.0, method in 0u8..3,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = 1 + ((n - 1) as f64 * k_frac) as usize;
            let t = 1 + ((q - 1) as f64 * t_frac) as usize;
            let cfg = match method {
                0 => CompressionConfig::none(),
                1 => CompressionConfig::average_pooling(1 + t % 3),
                _ => CompressionConfig::variance_select(t),
            };
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by_key(|_| rng.random::<u32>());
            let mut key_indices = idx[..k].to_vec();
            let mut nonkey_indices = idx[k..].to_vec();
            key_indices.sort();
            nonkey_indices.sort();
            let split = FrameSplit { key_indices, nonkey_indices };
            let key = random_tensor(&mut rng, k, q, d);
            let nonkey = (k < n).then(|| random_tensor(&mut rng, n - k, q, d));
            let seq = compress_and_project(Some(&key), nonkey.as_ref(), &split, &cfg, &IdentityProjector).unwrap();
            let t_after = cfg.tokens_after(q).unwrap();
            prop_assert_eq!(seq.total_tokens(), k * q + (n - k) * t_after);
            for (i, &ki) in split.key_indices.iter().enumerate() {
                prop_assert_eq!(&seq.per_frame[ki].data[..], key.frame(i));
            }
        }

        #[test]
        fn selection_ignores_frame_order(n in 2usize..8, q in 1usize..8, d in 1usize..4, seed: u64, t_frac in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = 1 + ((q - 1) as f64 * t_frac) as usize;
            let tensor = random_tensor(&mut rng, n, q, d);
            let mut order: Vec<usize> = (0..n).collect();
            order.reverse();
            order.rotate_left(seed as usize % n);
            let permuted = tensor.select_frames(&order).unwrap();
            prop_assert_eq!(variance_select(&tensor, t).unwrap().1, variance_select(&permuted, t).unwrap().1);
        }
    }
}
