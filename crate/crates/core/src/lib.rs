//! Localization maps from exported CNN feature maps: class activation maps,
//! PC1 maps, MaxBoxAcc/MaxBoxAccV2 scoring, and feature-map diagnostics
//! (activation area, pooled value vs weight, effective receptive field
//! size, dictionary-learning complexity).
//!
//! The numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common instantiations.

// `!(x > y)` guards are meant to catch NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cam;
pub mod cli;
mod error;
pub mod linalg;
pub mod localization;
pub mod manifest;
pub mod pca;
mod scalar;
pub mod scoring;
pub mod tensor;

pub use cam::{cam, gap, logit_from_gap, ClassifierWeights, FeatureMapStack, GapVector, Heatmap, WeightFilter};
pub use error::{Error, Result};
pub use localization::{
    binarize, boxes_from_binary, connected_components, iou, normalize, BBox, BinaryMap, BoxMode, BoxSet, Component,
};
pub use manifest::{load_manifest, DatasetManifest, ImageEntry, ImageSize, Split};
pub use pca::{batch_contribution_rates, pc1_localize, pca_pc1, Pc1Localization, PcaResult};
pub use scalar::Scalar;
pub use scoring::{
    boxacc_v1, fixed_threshold_boxacc, max_boxacc, select_operating_threshold, ScoreReport, SweepConfig, Variant,
};
pub use tensor::{load_tensor, write_tensor, DType, Tensor};

pub type FeatureMapStackF32 = FeatureMapStack<f32>;
pub type FeatureMapStackF64 = FeatureMapStack<f64>;
pub type ClassifierWeightsF32 = ClassifierWeights<f32>;
pub type ClassifierWeightsF64 = ClassifierWeights<f64>;
pub type HeatmapF32 = Heatmap<f32>;
pub type HeatmapF64 = Heatmap<f64>;
pub type PcaResultF32 = PcaResult<f32>;
pub type PcaResultF64 = PcaResult<f64>;
