//! MaxBoxAcc (V1) and MaxBoxAccV2 box-accuracy protocols.
//!
//! V1 takes the largest connected component at each threshold and counts an
//! image as correct when its box reaches IoU 0.5 against the best-matching
//! ground-truth box. V2 considers every component and averages the hit rate
//! over IoU cutoffs {0.3, 0.5, 0.7}. Both are maximized over a grid of
//! binarization thresholds. All counts are integers, so results do not
//! depend on evaluation order or thread count.

use std::collections::HashMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cam::Heatmap;
use crate::error::{Error, Result};
use crate::localization::{binarize, boxes_from_components, connected_components, normalize, BoxMode};
use crate::manifest::{DatasetManifest, ImageEntry, Split};
use crate::scalar::Scalar;

pub const DEFAULT_GRID_POINTS: usize = 101;
pub const DELTA_V1: f64 = 0.5;
pub const DELTAS_V2: [f64; 3] = [0.3, 0.5, 0.7];

pub type HeatmapSet<T> = HashMap<String, Heatmap<T>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    V1,
    V2,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::V1 => "v1",
            Variant::V2 => "v2",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub tau_grid: Vec<f64>,
    pub delta_v1: f64,
    pub delta_v2_set: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig::with_points(DEFAULT_GRID_POINTS).expect("default grid is valid")
    }
}

impl SweepConfig {
    /// Evenly spaced grid `0, 1/(points-1), ..., 1`.
    pub fn with_points(points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::InvalidConfig(format!("tau grid needs at least 2 points, got {points}")));
        }
        let last = (points - 1) as f64;
        Self::new((0..points).map(|i| i as f64 / last).collect(), DELTA_V1, DELTAS_V2.to_vec())
    }

    pub fn new(tau_grid: Vec<f64>, delta_v1: f64, delta_v2_set: Vec<f64>) -> Result<Self> {
        let cfg = SweepConfig { tau_grid, delta_v1, delta_v2_set };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau_grid.is_empty() {
            return Err(Error::InvalidConfig("empty tau grid".into()));
        }
        if self.tau_grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidConfig("tau grid must lie in [0, 1]".into()));
        }
        if self.tau_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("tau grid must be strictly ascending".into()));
        }
        let in_unit = |d: &f64| *d > 0.0 && *d < 1.0;
        if !in_unit(&self.delta_v1) || self.delta_v2_set.is_empty() || !self.delta_v2_set.iter().all(in_unit) {
            return Err(Error::InvalidConfig("IoU cutoffs must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Known MaxBoxAcc values of fine-tuned RepLKNet-31B exports on
/// CUB-200-2011, as fractions. Only meaningful when scoring such exports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceScore {
    ReplknetCam,
    ReplknetPc1,
}

impl ReferenceScore {
    pub fn value(self, variant: Variant) -> f64 {
        match (self, variant) {
            (ReferenceScore::ReplknetCam, Variant::V1) => 0.9099,
            (ReferenceScore::ReplknetCam, Variant::V2) => 0.7672,
            (ReferenceScore::ReplknetPc1, Variant::V1) => 0.936,
            (ReferenceScore::ReplknetPc1, Variant::V2) => 0.804,
        }
    }
}

/// Best IoU of one image at every grid threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSweep {
    /// Largest component box vs best gt box.
    pub largest: Vec<f64>,
    /// Best pair over all component boxes × gt boxes.
    pub all: Vec<f64>,
}

pub fn sweep_image<T: Scalar>(heatmap: &Heatmap<T>, entry: &ImageEntry, taus: &[f64]) -> Result<ImageSweep> {
    let normalized;
    let h = if heatmap.is_normalized() {
        heatmap
    } else {
        normalized = normalize(heatmap);
        &normalized
    };
    if (entry.image_size.width as usize) < h.width() || (entry.image_size.height as usize) < h.height() {
        return Err(Error::DimensionMismatch(format!(
            "image {}: heatmap {}x{} larger than image",
            entry.image_id,
            h.height(),
            h.width()
        )));
    }
    let mut largest = Vec::with_capacity(taus.len());
    let mut all = Vec::with_capacity(taus.len());
    for &tau in taus {
        let components = connected_components(&binarize(h, tau)?);
        let boxes = |mode| boxes_from_components(&components, h.height(), h.width(), mode, entry.image_size);
        largest.push(boxes(BoxMode::LargestOnly).best_iou(&entry.gt_boxes));
        all.push(boxes(BoxMode::AllComponents).best_iou(&entry.gt_boxes));
    }
    Ok(ImageSweep { largest, all })
}

fn sweep_split<T: Scalar>(heatmaps: &HeatmapSet<T>, entries: &[&ImageEntry], taus: &[f64]) -> Result<Vec<ImageSweep>> {
    entries
        .par_iter()
        .map(|e| {
            let h = heatmaps.get(&e.image_id).ok_or_else(|| Error::MissingHeatmap(e.image_id.clone()))?;
            sweep_image(h, e, taus)
        })
        .collect()
}

fn hits(sweeps: &[ImageSweep], t: usize, variant: Variant, delta: f64) -> usize {
    sweeps
        .iter()
        .filter(|s| {
            let v = match variant {
                Variant::V1 => s.largest[t],
                Variant::V2 => s.all[t],
            };
            v >= delta
        })
        .count()
}

fn boxacc_at(sweeps: &[ImageSweep], t: usize, variant: Variant, cfg: &SweepConfig) -> f64 {
    let n = sweeps.len();
    match variant {
        Variant::V1 => hits(sweeps, t, variant, cfg.delta_v1) as f64 / n as f64,
        Variant::V2 => {
            let total: usize = cfg.delta_v2_set.iter().map(|&d| hits(sweeps, t, variant, d)).sum();
            total as f64 / (n * cfg.delta_v2_set.len()) as f64
        }
    }
}

fn non_empty<'a>(entries: &'a [&'a ImageEntry], split: &str) -> Result<&'a [&'a ImageEntry]> {
    if entries.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    Ok(entries)
}

/// Fraction of images whose largest-component box at `tau` reaches IoU 0.5.
pub fn boxacc_v1<T: Scalar>(heatmaps: &HeatmapSet<T>, entries: &[&ImageEntry], tau: f64) -> Result<f64> {
    let cfg = SweepConfig::default();
    let sweeps = sweep_split(heatmaps, non_empty(entries, "<entries>")?, &[tau])?;
    Ok(boxacc_at(&sweeps, 0, Variant::V1, &cfg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub tau: f64,
    pub boxacc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageIou {
    pub image_id: String,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub variant: Variant,
    pub split: String,
    pub images: usize,
    pub max_boxacc: f64,
    pub argmax_tau: f64,
    pub boxacc_curve: Vec<CurvePoint>,
    /// Per-image best IoU at `argmax_tau` (the V1 or V2 notion of best).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_image_iou: Option<Vec<ImageIou>>,
}

/// Peak of a curve; ties go to the smallest threshold.
fn curve_peak(curve: &[CurvePoint]) -> (usize, f64) {
    curve
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, p)| if p.boxacc > bv { (i, p.boxacc) } else { (bi, bv) })
}

pub fn max_boxacc<T: Scalar>(
    heatmaps: &HeatmapSet<T>,
    entries: &[&ImageEntry],
    split: &str,
    cfg: &SweepConfig,
    variant: Variant,
) -> Result<ScoreReport> {
    cfg.validate()?;
    let sweeps = sweep_split(heatmaps, non_empty(entries, split)?, &cfg.tau_grid)?;
    let curve: Vec<CurvePoint> = cfg
        .tau_grid
        .iter()
        .enumerate()
        .map(|(t, &tau)| CurvePoint { tau, boxacc: boxacc_at(&sweeps, t, variant, cfg) })
        .collect();
    let (best, max) = curve_peak(&curve);
    let per_image = entries
        .iter()
        .zip(&sweeps)
        .map(|(e, s)| ImageIou {
            image_id: e.image_id.clone(),
            iou: match variant {
                Variant::V1 => s.largest[best],
                Variant::V2 => s.all[best],
            },
        })
        .collect();
    Ok(ScoreReport {
        variant,
        split: split.to_string(),
        images: entries.len(),
        max_boxacc: max,
        argmax_tau: curve[best].tau,
        boxacc_curve: curve,
        per_image_iou: Some(per_image),
    })
}

/// Operating threshold chosen on the fullsup split.
pub fn select_operating_threshold<T: Scalar>(
    heatmaps_fullsup: &HeatmapSet<T>,
    fullsup: &[&ImageEntry],
    cfg: &SweepConfig,
    variant: Variant,
) -> Result<f64> {
    Ok(max_boxacc(heatmaps_fullsup, fullsup, Split::TrainFullsup.name(), cfg, variant)?.argmax_tau)
}

/// BoxAcc on the test split at a fixed, previously selected threshold.
pub fn fixed_threshold_boxacc<T: Scalar>(
    heatmaps_test: &HeatmapSet<T>,
    test: &[&ImageEntry],
    tau: f64,
    cfg: &SweepConfig,
    variant: Variant,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::TauOutOfRange(tau));
    }
    let sweeps = sweep_split(heatmaps_test, non_empty(test, Split::Test.name())?, &[tau])?;
    Ok(boxacc_at(&sweeps, 0, variant, cfg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Threshold from train_fullsup, number from test.
    Honest,
    /// Threshold searched on test itself.
    Optimistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub variant: Variant,
    pub protocol_requested: Protocol,
    /// True when the threshold was searched on the split it is reported on,
    /// either by request or because no fullsup split exists.
    pub optimistic: bool,
    pub tau_grid_points: usize,
    pub operating_tau: f64,
    pub operating_split: String,
    /// BoxAcc on test at `operating_tau`.
    pub final_boxacc: f64,
    pub test: ScoreReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fullsup: Option<ScoreReport>,
}

pub fn evaluate_protocol<T: Scalar>(
    heatmaps: &HeatmapSet<T>,
    manifest: &DatasetManifest,
    cfg: &SweepConfig,
    variant: Variant,
    protocol: Protocol,
) -> Result<ProtocolReport> {
    let test = manifest.split(Split::Test);
    let fullsup = manifest.split(Split::TrainFullsup);
    let test_report = max_boxacc(heatmaps, &test, Split::Test.name(), cfg, variant)?;

    let honest = protocol == Protocol::Honest && !fullsup.is_empty();
    let (fullsup_report, operating_tau, final_boxacc) = if honest {
        let fs = max_boxacc(heatmaps, &fullsup, Split::TrainFullsup.name(), cfg, variant)?;
        let tau = fs.argmax_tau;
        let idx = cfg.tau_grid.iter().position(|&t| t == tau).expect("argmax lies on the grid");
        let at = test_report.boxacc_curve[idx].boxacc;
        (Some(fs), tau, at)
    } else {
        (None, test_report.argmax_tau, test_report.max_boxacc)
    };

    Ok(ProtocolReport {
        variant,
        protocol_requested: protocol,
        optimistic: !honest,
        tau_grid_points: cfg.tau_grid.len(),
        operating_tau,
        operating_split: if honest { Split::TrainFullsup } else { Split::Test }.name().to_string(),
        final_boxacc,
        test: test_report,
        fullsup: fullsup_report,
    })
}
