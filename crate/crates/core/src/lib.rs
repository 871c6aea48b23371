//! Non-neural building blocks for LLM-based video moment retrieval.
//!
//! - [`ifs`]: pick key frames from adjacent-frame feature change
//! - [`dtc`]: compress non-key frame tokens, project into the language space
//! - [`timecode`]: time tokens, interleaved input sequence, index-to-seconds decoding
//! - [`postprocess`]: recover moment lists from malformed model output
//! - [`metrics`]: temporal IoU, R1@τ, mIoU, mAP@τ
//! - [`harness`]: synthetic data, mock predictors, end-to-end runs

pub mod dtc;
pub mod error;
pub mod harness;
pub mod ifs;
pub mod metrics;
pub mod postprocess;
pub mod records;
pub mod tensor;
pub mod timecode;

pub use error::{Error, Result};
pub use records::{Moment, SamplingPlan, VideoRecord};
pub use tensor::{load_frame_tensor, save_frame_tensor, FrameTensor, QueryTensor, Tensor3};
