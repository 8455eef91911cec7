use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compute::Tensor;

/// Time and frequency masking. Each mask has a width drawn uniformly from
/// `0..=max_*_width` and a uniformly placed start.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecAugmentConfig {
    pub time_masks: usize,
    pub max_time_width: usize,
    pub freq_masks: usize,
    pub max_freq_width: usize,
}

impl Default for SpecAugmentConfig {
    fn default() -> Self {
        Self {
            time_masks: 2,
            max_time_width: 10,
            freq_masks: 2,
            max_freq_width: 4,
        }
    }
}

impl SpecAugmentConfig {
    pub fn disabled() -> Self {
        Self {
            time_masks: 0,
            max_time_width: 0,
            freq_masks: 0,
            max_freq_width: 0,
        }
    }
}

/// Zeroes the chosen bands of a `[T, F]` matrix; everything else is copied.
pub fn spec_augment<R: Rng>(features: &Tensor, config: &SpecAugmentConfig, rng: &mut R) -> Tensor {
    let (t, f) = (features.rows(), features.cols());
    let mut out = features.clone();
    let data = out.data_mut();
    for _ in 0..config.time_masks {
        let (start, width) = band(rng, t, config.max_time_width);
        data[start * f..(start + width) * f].fill(0.0);
    }
    for _ in 0..config.freq_masks {
        let (start, width) = band(rng, f, config.max_freq_width);
        for row in data.chunks_exact_mut(f) {
            row[start..start + width].fill(0.0);
        }
    }
    out
}

fn band<R: Rng>(rng: &mut R, extent: usize, max_width: usize) -> (usize, usize) {
    let width = rng.gen_range(0..=max_width.min(extent));
    let start = rng.gen_range(0..=extent - width);
    (start, width)
}
