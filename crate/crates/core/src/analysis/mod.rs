//! Feature-map and receptive-field diagnostics.

mod dictionary;
mod erf;

pub use dictionary::{
    dictionary_complexity, learn_dictionary, omp, ComplexityConfig, ComplexityCurve, Dictionary, SparseCode,
    DEFAULT_ITERS, DEFAULT_REL_TOL, DEFAULT_SPARSITY,
};
pub use erf::{erf_curve, ErfCurve, ErfRegion, ERF_THRESHOLDS};

use serde::Serialize;

use crate::cam::{gap, ClassifierWeights, FeatureMapStack};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Raw activation level above which a pixel counts as active.
pub const DEFAULT_RAW_THRESHOLD: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelStat<T> {
    pub channel: usize,
    pub weight: T,
    pub activation_area: f64,
    pub gap_value: T,
}

/// Fraction of pixels strictly above `raw_threshold`, on raw activations.
pub fn activation_area<T: Scalar>(channel: &[T], raw_threshold: T) -> f64 {
    if channel.is_empty() {
        return 0.0;
    }
    channel.iter().filter(|&&v| v > raw_threshold).count() as f64 / channel.len() as f64
}

/// One row per channel pairing its class weight with its activation area
/// and pooled value.
pub fn channel_stats<T: Scalar>(
    f: &FeatureMapStack<T>,
    w: &ClassifierWeights<T>,
    class_index: usize,
    raw_threshold: T,
) -> Result<Vec<ChannelStat<T>>> {
    if f.channels() != w.channels() {
        return Err(Error::DimensionMismatch(format!(
            "stack has {} channels, weights have {}",
            f.channels(),
            w.channels()
        )));
    }
    let weights = w.class_column(class_index)?;
    let g = gap(f);
    Ok(weights
        .into_iter()
        .zip(g.0)
        .enumerate()
        .map(|(n, (weight, gap_value))| ChannelStat {
            channel: n,
            weight,
            activation_area: activation_area(f.channel(n), raw_threshold),
            gap_value,
        })
        .collect())
}
