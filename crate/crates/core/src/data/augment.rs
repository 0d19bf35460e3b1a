//! Training-time augmentation: additive Gaussian noise at a random SNR,
//! then one contiguous time mask.
//!
//! SNR is measured over the feature matrix: signal power is the mean square
//! of all cells.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::FeatureSequence;
use crate::tensor::Tensor;

pub const SNR_RANGE_DB: (f64, f64) = (10.0, 30.0);
pub const MASK_RATIO_RANGE: (f64, f64) = (0.10, 0.15);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentInfo {
    pub snr_db: f64,
    pub mask_start: usize,
    pub mask_len: usize,
}

pub fn augment<R: Rng + ?Sized>(x: &FeatureSequence, rng: &mut R) -> FeatureSequence {
    FeatureSequence {
        frames: augment_frames(&x.frames, rng).0,
        frame_rate: x.frame_rate,
    }
}

/// Returns the augmented frames and the sampled parameters, or the input
/// unchanged (and `None`) when it has no energy or no frames.
pub fn augment_frames<R: Rng + ?Sized>(frames: &Tensor, rng: &mut R) -> (Tensor, Option<AugmentInfo>) {
    if frames.numel() == 0 || signal_power(frames) == 0.0 {
        return (frames.clone(), None);
    }
    let snr_db = rng.random_range(SNR_RANGE_DB.0..=SNR_RANGE_DB.1);
    let noisy = add_noise(frames, snr_db, rng);
    let ratio = rng.random_range(MASK_RATIO_RANGE.0..=MASK_RATIO_RANGE.1);
    let (masked, mask_start, mask_len) = time_mask(&noisy, ratio, rng);
    (
        masked,
        Some(AugmentInfo {
            snr_db,
            mask_start,
            mask_len,
        }),
    )
}

pub fn signal_power(frames: &Tensor) -> f64 {
    let n = frames.numel();
    if n == 0 {
        return 0.0;
    }
    frames.data().iter().map(|v| v * v).sum::<f64>() / n as f64
}

/// Adds i.i.d. N(0, P / 10^(snr/10)) noise, P being the signal power.
pub fn add_noise<R: Rng + ?Sized>(frames: &Tensor, snr_db: f64, rng: &mut R) -> Tensor {
    let power = signal_power(frames);
    let mut out = frames.clone();
    if power == 0.0 {
        return out;
    }
    let std = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let normal = Normal::new(0.0, std).expect("finite positive std");
    for v in out.data_mut() {
        *v += normal.sample(rng);
    }
    out
}

/// Zeroes `round(ratio·T)` consecutive frames at a uniform random start.
pub fn time_mask<R: Rng + ?Sized>(frames: &Tensor, ratio: f64, rng: &mut R) -> (Tensor, usize, usize) {
    let t = frames.rows();
    let len = ((ratio * t as f64).round() as usize).min(t);
    let start = rng.random_range(0..=t - len);
    let mut out = frames.clone();
    let cols = frames.cols();
    out.data_mut()[start * cols..(start + len) * cols].fill(0.0);
    (out, start, len)
}
