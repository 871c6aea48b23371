//! Shared inputs for the criterion benches.

use vmr_core::harness::{generate_synthetic, SyntheticSpec, VideoProfile};
use vmr_core::{FrameTensor, VideoRecord};

/// A reproducible synthetic video at the given scale.
pub fn video(n_frames: usize, seed: u64) -> (FrameTensor, VideoRecord) {
    let profile = VideoProfile {
        n_frames,
        ..VideoProfile::default()
    };
    let spec = SyntheticSpec::random(format!("bench_{seed}"), &profile, seed).expect("valid profile");
    generate_synthetic(&spec).expect("valid spec")
}
