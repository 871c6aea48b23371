//! Dense `frames × tokens × dim` embedding tensors and the MREB file format.
//!
//! MREB layout, all little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "MREB"
//! 4       2     version (u16, = 1)
//! 6       2     reserved (u16, = 0)
//! 8       4     frames (u32)
//! 12      4     tokens per frame, patches or queries (u32)
//! 16      4     dim (u32)
//! 20      4·n   f32 payload, frame-major, then token, then dim
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"MREB";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;

/// Row-major `n_frames × n_tokens × dim` tensor of finite reals.
///
/// The middle axis holds image patches for a [`FrameTensor`] and Q-Former
/// style queries for a [`QueryTensor`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    n_frames: usize,
    n_tokens: usize,
    dim: usize,
    data: Vec<f64>,
}

/// Per-frame visual features, `N × P × D0`.
pub type FrameTensor = Tensor3;
/// Per-frame query embeddings, `N × Q × D1`.
pub type QueryTensor = Tensor3;

impl Tensor3 {
    pub fn new(n_frames: usize, n_tokens: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if n_frames == 0 || n_tokens == 0 || dim == 0 {
            return Err(Error::Shape(format!(
                "all dimensions must be >= 1, got {n_frames}x{n_tokens}x{dim}"
            )));
        }
        let expected = n_frames
            .checked_mul(n_tokens)
            .and_then(|v| v.checked_mul(dim))
            .ok_or_else(|| Error::Shape("dimension product overflows".into()))?;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "data length {} does not match {n_frames}x{n_tokens}x{dim} = {expected}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            n_frames,
            n_tokens,
            dim,
            data,
        })
    }

    pub fn zeros(n_frames: usize, n_tokens: usize, dim: usize) -> Result<Self> {
        Self::new(n_frames, n_tokens, dim, vec![0.0; n_frames * n_tokens * dim])
    }

    /// Builds a tensor from per-frame slabs of `n_tokens * dim` values each.
    pub fn from_frames<'a, I>(n_tokens: usize, dim: usize, frames: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut data = Vec::new();
        let mut n_frames = 0;
        for slab in frames {
            if slab.len() != n_tokens * dim {
                return Err(Error::Shape(format!(
                    "frame slab has {} values, expected {}",
                    slab.len(),
                    n_tokens * dim
                )));
            }
            data.extend_from_slice(slab);
            n_frames += 1;
        }
        Self::new(n_frames, n_tokens, dim, data)
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n_frames, self.n_tokens, self.dim)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn frame_len(&self) -> usize {
        self.n_tokens * self.dim
    }

    /// The `n_tokens × dim` slab of frame `i`.
    pub fn frame(&self, i: usize) -> &[f64] {
        let len = self.frame_len();
        &self.data[i * len..(i + 1) * len]
    }

    /// One token vector of frame `i`.
    pub fn token(&self, frame: usize, token: usize) -> &[f64] {
        let start = (frame * self.n_tokens + token) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.frame_len())
    }

    /// Gathers the listed frames, in the given order, into a new tensor.
    pub fn select_frames(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n_frames) {
            return Err(Error::arg(format!(
                "frame index {bad} out of range for {} frames",
                self.n_frames
            )));
        }
        Self::from_frames(
            self.n_tokens,
            self.dim,
            indices.iter().map(|&i| self.frame(i)),
        )
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.n_frames,
            self.n_tokens,
            self.dim,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Serializes to MREB bytes. Values are narrowed to f32.
    pub fn to_mreb_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        for d in [self.n_frames, self.n_tokens, self.dim] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_mreb_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            if bytes.len() >= 4 && bytes[..4] != MAGIC {
                return Err(Error::BadMagic(bytes[..4].try_into().unwrap()));
            }
            return Err(Error::Truncated {
                expected: HEADER_LEN,
                actual: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let read_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let (n, p, d) = (read_u32(8), read_u32(12), read_u32(16));
        let count = n
            .checked_mul(p)
            .and_then(|v| v.checked_mul(d))
            .ok_or_else(|| Error::Shape("header dimensions overflow".into()))?;
        let expected = HEADER_LEN + 4 * count;
        let actual = bytes.len();
        if actual < expected {
            return Err(Error::Truncated { expected, actual });
        }
        if actual > expected {
            return Err(Error::TrailingBytes {
                extra: actual - expected,
            });
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Self::new(n, p, d, data)
    }
}

pub fn load_frame_tensor(path: impl AsRef<Path>) -> Result<FrameTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor3::from_mreb_bytes(&bytes)
}

pub fn save_frame_tensor(tensor: &FrameTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.to_mreb_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(n: u32, p: u32, d: u32) -> Vec<u8> {
        let mut b = b"MREB".to_vec();
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&0u16.to_le_bytes());
        for v in [n, p, d] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn smallest_well_formed_file() {
        let mut bytes = header(2, 1, 3);
        for v in [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let t = Tensor3::from_mreb_bytes(&bytes).unwrap();
        assert_eq!(t.shape(), (2, 1, 3));
        assert_eq!(t.frame(1), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn missing_value_is_truncation() {
        let mut bytes = header(2, 1, 3);
        for v in [1.0f32, 2.0, 3.0, 4.0, 5.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(
            Tensor3::from_mreb_bytes(&bytes),
            Err(Error::Truncated {
                expected: 44,
                actual: 40
            })
        ));
    }

    #[test]
    fn distinct_errors() {
        let mut bad_magic = header(1, 1, 1);
        bad_magic[0] = b'X';
        bad_magic.extend_from_slice(&0f32.to_le_bytes());
        assert!(matches!(
            Tensor3::from_mreb_bytes(&bad_magic),
            Err(Error::BadMagic(_))
        ));

        let mut bad_version = header(1, 1, 1);
        bad_version[4] = 2;
        bad_version.extend_from_slice(&0f32.to_le_bytes());
        assert!(matches!(
            Tensor3::from_mreb_bytes(&bad_version),
            Err(Error::UnsupportedVersion(2))
        ));

        let mut nan = header(1, 1, 1);
        nan.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            Tensor3::from_mreb_bytes(&nan),
            Err(Error::NonFinite { index: 0 })
        ));

        let mut trailing = header(1, 1, 1);
        trailing.extend_from_slice(&[0; 5]);
        assert!(matches!(
            Tensor3::from_mreb_bytes(&trailing),
            Err(Error::TrailingBytes { extra: 1 })
        ));

        let zero = header(0, 1, 1);
        assert!(matches!(
            Tensor3::from_mreb_bytes(&zero),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn one_value_file_is_24_bytes() {
        let t = Tensor3::new(1, 1, 1, vec![0.0]).unwrap();
        let bytes = t.to_mreb_bytes();
        assert_eq!(bytes.len(), HEADER_LEN + 4);
        assert_eq!(bytes.len(), 24);
        assert_eq!(&bytes[..4], b"MREB");
    }

    #[test]
    fn save_to_unwritable_path_is_io_error() {
        let t = Tensor3::new(1, 1, 1, vec![0.0]).unwrap();
        let err = save_frame_tensor(&t, "/nonexistent-dir/x/y.mreb").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn constructor_rejects_bad_shapes() {
        assert!(Tensor3::new(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(Tensor3::new(1, 0, 2, vec![]).is_err());
        assert!(matches!(
            Tensor3::new(1, 1, 2, vec![0.0, f64::INFINITY]),
            Err(Error::NonFinite { index: 1 })
        ));
    }

    proptest! {
        #[test]
        fn file_round_trip_is_bitwise(
            (n, p, d, values) in (1usize..=8, 1usize..=8, 1usize..=8)
                .prop_flat_map(|(n, p, d)| {
                    (Just(n), Just(p), Just(d),
                     proptest::collection::vec(-1.0e6f32..1.0e6, n * p * d))
                })
        ) {
            let t = Tensor3::new(n, p, d, values.iter().map(|&v| v as f64).collect()).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("t.mreb");
            save_frame_tensor(&t, &path).unwrap();
            let back = load_frame_tensor(&path).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn wrong_payload_length_rejected(n in 1u32..5, p in 1u32..5, d in 1u32..5, delta in 1usize..9) {
            let count = (n * p * d) as usize;
            let mut bytes = header(n, p, d);
            let payload = if delta % 2 == 0 { count * 4 + delta } else { (count * 4).saturating_sub(delta) };
            bytes.extend(std::iter::repeat_n(0u8, payload));
            prop_assert!(Tensor3::from_mreb_bytes(&bytes).is_err());
        }
    }
}
