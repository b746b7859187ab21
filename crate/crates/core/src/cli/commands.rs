use std::collections::BTreeSet;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::plot::{self, Chart};
use super::{CamArgs, Command, ComplexityArgs, ErfArgs, GlobalOpts, ImageSelection, Pc1Args, ScoreArgs, SplitArg, StatsArgs};
use crate::analysis::{channel_stats, dictionary_complexity, erf_curve, ComplexityConfig, ERF_THRESHOLDS};
use crate::cam::{cam, ClassifierWeights, FeatureMapStack, Heatmap, WeightFilter};
use crate::error::{Error, Result};
use crate::localization::normalize;
use crate::manifest::{load_manifest, DatasetManifest, ImageEntry, Split};
use crate::pca::{batch_contribution_rates, pc1_localize};
use crate::scalar::Scalar;
use crate::scoring::{evaluate_protocol, HeatmapSet, ProtocolReport, ReferenceScore, SweepConfig};
use crate::tensor::{load_tensor, write_tensor, DType};

pub(super) fn dispatch<T: Scalar>(g: &GlobalOpts, cmd: &Command) -> Result<()> {
    match cmd {
        Command::Cam(a) => run_cam::<T>(g, a),
        Command::Pc1(a) => run_pc1::<T>(g, a),
        Command::Score(a) => run_score::<T>(g, a),
        Command::Stats(a) => run_stats::<T>(g, a),
        Command::Erf(a) => run_erf::<T>(g, a),
        Command::Complexity(a) => run_complexity::<T>(g, a),
    }
}

/// File name of a saved heatmap; path separators in ids are replaced.
pub fn heatmap_file(image_id: &str, kind: &str) -> String {
    let safe: String = image_id.chars().map(|c| if matches!(c, '/' | '\\') { '_' } else { c }).collect();
    format!("{safe}.{kind}.npy")
}

fn require_manifest(g: &GlobalOpts) -> Result<DatasetManifest> {
    let path = g.manifest.as_ref().ok_or_else(|| Error::InvalidConfig("--manifest is required".into()))?;
    load_manifest(path)
}

fn select<'a>(m: &'a DatasetManifest, sel: &ImageSelection) -> Result<Vec<&'a ImageEntry>> {
    let mut entries: Vec<&ImageEntry> = match sel.split {
        Some(s) => m.split(match s {
            SplitArg::TrainWeaksup => Split::TrainWeaksup,
            SplitArg::TrainFullsup => Split::TrainFullsup,
            SplitArg::Test => Split::Test,
        }),
        None => m.entries().iter().collect(),
    };
    if let Some(ids) = &sel.images {
        for id in ids {
            if m.get(id).is_none() {
                return Err(Error::SchemaError(format!("unknown image id {id}")));
            }
        }
        let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        entries.retain(|e| wanted.contains(e.image_id.as_str()));
    }
    Ok(entries)
}

fn load_weights<T: Scalar>(m: &DatasetManifest, explicit: Option<&PathBuf>) -> Result<(ClassifierWeights<T>, DType)> {
    let path = explicit
        .or(m.weights_path.as_ref())
        .ok_or_else(|| Error::InvalidConfig("no classifier weights: pass --weights or set `weights` in the manifest".into()))?;
    let t = load_tensor(path)?;
    let w = ClassifierWeights::from_tensor(&t)?;
    if w.classes() != m.class_count {
        return Err(Error::DimensionMismatch(format!(
            "weights have {} classes, manifest declares {}",
            w.classes(),
            m.class_count
        )));
    }
    Ok((w, t.dtype()))
}

fn load_stack<T: Scalar>(e: &ImageEntry) -> Result<(FeatureMapStack<T>, DType)> {
    let t = load_tensor(&e.featuremap_path)?;
    Ok((FeatureMapStack::from_tensor(&t)?, t.dtype()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn precision_name<T: Scalar>() -> DType {
    T::DTYPE
}

/// Full-precision, round-trippable text for CSV cells.
fn num<V: Display>(v: V) -> String {
    v.to_string()
}

#[derive(Debug, Serialize)]
struct IndexEntry {
    image_id: String,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pc1_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    edge_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    flipped: Option<bool>,
}

impl IndexEntry {
    fn ok(image_id: &str, file: Option<String>) -> Self {
        IndexEntry { image_id: image_id.into(), status: "ok", file, error: None, pc1_rate: None, edge_mean: None, flipped: None }
    }

    fn failed(image_id: &str, err: &Error) -> Self {
        IndexEntry {
            image_id: image_id.into(),
            status: "error",
            file: None,
            error: Some(err.to_string()),
            pc1_rate: None,
            edge_mean: None,
            flipped: None,
        }
    }
}

#[derive(Debug, Serialize)]
struct OutputIndex<'a> {
    command: &'a str,
    precision: DType,
    input_dtypes: BTreeSet<DType>,
    #[serde(skip_serializing_if = "Option::is_none")]
    class_policy: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    filter: Option<WeightFilter>,
    warnings: bool,
    failed: usize,
    images: Vec<IndexEntry>,
}

impl<'a> OutputIndex<'a> {
    fn new<T: Scalar>(command: &'a str, images: Vec<IndexEntry>, input_dtypes: BTreeSet<DType>) -> Self {
        let failed = images.iter().filter(|e| e.status != "ok").count();
        OutputIndex {
            command,
            precision: precision_name::<T>(),
            input_dtypes,
            class_policy: None,
            filter: None,
            warnings: failed > 0,
            failed,
            images,
        }
    }
}

fn warn_failures(index: &OutputIndex) {
    if index.warnings {
        eprintln!("warning: {} of {} images failed; see the index file", index.failed, index.images.len());
    }
}

fn run_cam<T: Scalar>(g: &GlobalOpts, a: &CamArgs) -> Result<()> {
    let filter = a.weight_filter()?;
    let m = require_manifest(g)?;
    let entries = select(&m, &a.selection)?;
    let (w, wdtype) = load_weights::<T>(&m, a.weights.as_ref())?;

    let results: Vec<Result<(Heatmap<T>, DType)>> = entries
        .par_iter()
        .map(|e| {
            let (f, dtype) = load_stack::<T>(e)?;
            Ok((normalize(&cam(&f, &w, e.class_index, filter)?), dtype))
        })
        .collect();

    let mut dtypes = BTreeSet::from([wdtype]);
    let mut index = Vec::with_capacity(entries.len());
    for (e, r) in entries.iter().zip(results) {
        match r {
            Ok((h, dtype)) => {
                dtypes.insert(dtype);
                let file = heatmap_file(&e.image_id, "cam");
                write_tensor(g.out.join(&file), &h.to_tensor()?)?;
                index.push(IndexEntry::ok(&e.image_id, Some(file)));
            }
            Err(err) => index.push(IndexEntry::failed(&e.image_id, &err)),
        }
    }
    let mut out = OutputIndex::new::<T>("cam", index, dtypes);
    out.class_policy = Some("ground_truth");
    out.filter = Some(filter);
    write_json(&g.out.join("cam_index.json"), &out)?;
    warn_failures(&out);
    Ok(())
}

fn run_pc1<T: Scalar>(g: &GlobalOpts, a: &Pc1Args) -> Result<()> {
    let m = require_manifest(g)?;
    let entries = select(&m, &a.selection)?;
    let results: Vec<_> = entries
        .par_iter()
        .map(|e| {
            let (f, dtype) = load_stack::<T>(e)?;
            Ok((pc1_localize(&f)?, dtype))
        })
        .collect::<Vec<Result<_>>>();

    let mut dtypes = BTreeSet::new();
    let mut index = Vec::new();
    let mut rates = csv::Writer::from_path(g.out.join("contribution_rates.csv"))?;
    rates.write_record(["image_id", "component", "rate"])?;
    let mut pc1_rates = Vec::new();
    for (e, r) in entries.iter().zip(results) {
        match r {
            Ok((loc, dtype)) => {
                dtypes.insert(dtype);
                let file = heatmap_file(&e.image_id, "pc1");
                write_tensor(g.out.join(&file), &normalize(&loc.polarity_corrected_map).to_tensor()?)?;
                for (k, rate) in loc.pca.contribution_rates.iter().enumerate() {
                    rates.write_record([e.image_id.clone(), k.to_string(), num(rate)])?;
                }
                let rate = loc.pca.contribution_rates[0].as_f64();
                pc1_rates.push(rate);
                let mut entry = IndexEntry::ok(&e.image_id, Some(file));
                entry.pc1_rate = Some(rate);
                entry.edge_mean = Some(loc.edge_mean);
                entry.flipped = Some(loc.flipped);
                index.push(entry);
            }
            Err(err) => index.push(IndexEntry::failed(&e.image_id, &err)),
        }
    }
    rates.flush()?;
    let chart = Chart::new("PC1 contribution rate", "contribution rate", "images");
    fs::write(g.out.join("pc1_rates.svg"), plot::histogram(&chart, &pc1_rates, 20, 0.0, 1.0))?;
    let out = OutputIndex::new::<T>("pc1", index, dtypes);
    write_json(&g.out.join("pc1_index.json"), &out)?;
    warn_failures(&out);

    if a.batch {
        let ok: Vec<&ImageEntry> =
            entries.iter().zip(&out.images).filter(|(_, i)| i.status == "ok").map(|(e, _)| *e).collect();
        let stacks: Vec<FeatureMapStack<T>> =
            ok.par_iter().map(|e| load_stack::<T>(e).map(|(f, _)| f)).collect::<Result<_>>()?;
        let rates = batch_contribution_rates(&stacks)?;
        let mut w = csv::Writer::from_path(g.out.join("batch_contribution_rates.csv"))?;
        w.write_record(["component", "rate"])?;
        for (k, r) in rates.iter().enumerate() {
            w.write_record([k.to_string(), num(r)])?;
        }
        w.flush()?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ReferenceComparison {
    name: ReferenceScore,
    value: f64,
    /// `final_boxacc - value`.
    difference: f64,
}

#[derive(Debug, Serialize)]
struct ScoreFile<'a> {
    heatmap_kind: &'a str,
    precision: DType,
    heatmap_dtypes: BTreeSet<DType>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference: Option<ReferenceComparison>,
    #[serde(flatten)]
    report: ProtocolReport,
}

fn run_score<T: Scalar>(g: &GlobalOpts, a: &ScoreArgs) -> Result<()> {
    let m = require_manifest(g)?;
    let cfg = SweepConfig::with_points(a.grid)?;
    let mut needed: Vec<&ImageEntry> = m.split(Split::Test);
    needed.extend(m.split(Split::TrainFullsup));
    if needed.is_empty() {
        return Err(Error::EmptySplit(Split::Test.name().into()));
    }

    let loaded: Vec<(String, Heatmap<T>, DType)> = needed
        .par_iter()
        .map(|e| {
            let path = a.heatmaps.join(heatmap_file(&e.image_id, &a.kind));
            if !path.exists() {
                return Err(Error::MissingHeatmap(e.image_id.clone()));
            }
            let t = load_tensor(&path)?;
            let &[rows, cols] = t.shape() else {
                return Err(Error::DimensionMismatch(format!("{}: expected a 2-D heatmap", path.display())));
            };
            Ok((e.image_id.clone(), Heatmap::new(rows, cols, t.to_vec())?, t.dtype()))
        })
        .collect::<Result<_>>()?;
    let dtypes: BTreeSet<DType> = loaded.iter().map(|(_, _, d)| *d).collect();
    let heatmaps: HeatmapSet<T> = loaded.into_iter().map(|(id, h, _)| (id, h)).collect();

    let report = evaluate_protocol(&heatmaps, &m, &cfg, a.variant.into(), a.protocol.into())?;

    let mut curve = csv::Writer::from_path(g.out.join("curve.csv"))?;
    curve.write_record(["tau", "boxacc_test", "boxacc_fullsup"])?;
    for (i, p) in report.test.boxacc_curve.iter().enumerate() {
        let fullsup = report.fullsup.as_ref().map(|f| num(f.boxacc_curve[i].boxacc)).unwrap_or_default();
        curve.write_record([num(p.tau), num(p.boxacc), fullsup])?;
    }
    curve.flush()?;

    let points: Vec<(f64, f64)> = report.test.boxacc_curve.iter().map(|p| (p.tau, p.boxacc)).collect();
    let title = format!("BoxAcc ({}) on test", report.variant);
    fs::write(g.out.join("curve.svg"), plot::line(&Chart::new(&title, "threshold", "BoxAcc"), &points))?;

    if report.optimistic {
        eprintln!("note: operating threshold searched on the test split (optimistic protocol)");
    }
    let reference = a.reference.map(|r| {
        let name = ReferenceScore::from(r);
        let value = name.value(report.variant);
        ReferenceComparison { name, value, difference: report.final_boxacc - value }
    });
    let file = ScoreFile { heatmap_kind: &a.kind, precision: precision_name::<T>(), heatmap_dtypes: dtypes, reference, report };
    write_json(&g.out.join("report.json"), &file)
}

fn run_stats<T: Scalar>(g: &GlobalOpts, a: &StatsArgs) -> Result<()> {
    let m = require_manifest(g)?;
    let entries = select(&m, &a.selection)?;
    let (w, wdtype) = load_weights::<T>(&m, a.weights.as_ref())?;
    let threshold = T::lit(a.raw_threshold);
    let results: Vec<Result<_>> = entries
        .par_iter()
        .map(|e| {
            let (f, dtype) = load_stack::<T>(e)?;
            Ok((channel_stats(&f, &w, e.class_index, threshold)?, dtype))
        })
        .collect();

    let mut csv_out = csv::Writer::from_path(g.out.join("channel_stats.csv"))?;
    csv_out.write_record(["image_id", "channel", "weight", "area", "gap"])?;
    let (mut area_pts, mut gap_pts) = (Vec::new(), Vec::new());
    let mut dtypes = BTreeSet::from([wdtype]);
    let mut index = Vec::new();
    for (e, r) in entries.iter().zip(results) {
        match r {
            Ok((rows, dtype)) => {
                dtypes.insert(dtype);
                for s in rows {
                    csv_out.write_record([
                        e.image_id.clone(),
                        s.channel.to_string(),
                        num(s.weight),
                        num(s.activation_area),
                        num(s.gap_value),
                    ])?;
                    area_pts.push((s.weight.as_f64(), s.activation_area));
                    gap_pts.push((s.weight.as_f64(), s.gap_value.as_f64()));
                }
                index.push(IndexEntry::ok(&e.image_id, None));
            }
            Err(err) => index.push(IndexEntry::failed(&e.image_id, &err)),
        }
    }
    csv_out.flush()?;
    let area_title = format!("Activation area (> {}) vs weight", a.raw_threshold);
    fs::write(g.out.join("area_vs_weight.svg"), plot::scatter(&Chart::new(&area_title, "weight", "activation area"), &area_pts))?;
    fs::write(g.out.join("gap_vs_weight.svg"), plot::scatter(&Chart::new("GAP value vs weight", "weight", "GAP value"), &gap_pts))?;
    let out = OutputIndex::new::<T>("stats", index, dtypes);
    write_json(&g.out.join("stats_index.json"), &out)?;
    warn_failures(&out);
    Ok(())
}

fn run_erf<T: Scalar>(g: &GlobalOpts, a: &ErfArgs) -> Result<()> {
    let t = load_tensor(&a.map)?;
    let (h, w) = match *t.shape() {
        [h, w] | [1, h, w] => (h, w),
        ref s => return Err(Error::DimensionMismatch(format!("contribution map must be (H, W), got {s:?}"))),
    };
    let curve = erf_curve(&t.to_vec::<T>(), h, w, &ERF_THRESHOLDS, a.region.into())?;

    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(["threshold", "area_ratio"])?;
    for (t, r) in curve.thresholds.iter().zip(&curve.area_ratios) {
        out.write_record([num(t), num(r)])?;
    }
    out.write_record(["auc".to_string(), num(curve.auc)])?;
    let bytes = out.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    fs::write(g.out.join("erf.csv"), bytes)?;

    let points: Vec<(f64, f64)> = curve.thresholds.iter().copied().zip(curve.area_ratios.iter().copied()).collect();
    let title = format!("ERF area ratio (AUC {:.6})", curve.auc);
    fs::write(g.out.join("erf.svg"), plot::line(&Chart::new(&title, "contribution threshold", "area ratio"), &points))?;
    write_json(
        &g.out.join("erf.json"),
        &ErfFile { precision: precision_name::<T>(), auc_method: ERF_AUC_METHOD, curve },
    )
}

const ERF_AUC_METHOD: &str = "trapezoid over the listed thresholds divided by their range";

#[derive(Debug, Serialize)]
struct ErfFile {
    precision: DType,
    auc_method: &'static str,
    #[serde(flatten)]
    curve: crate::analysis::ErfCurve,
}

#[derive(Debug, Serialize)]
struct ComplexityFile<'a> {
    precision: DType,
    seed: u64,
    train_maps: usize,
    test_maps: usize,
    map_len: usize,
    config: &'a ComplexityConfig,
    curve: crate::analysis::ComplexityCurve,
}

fn run_complexity<T: Scalar>(g: &GlobalOpts, a: &ComplexityArgs) -> Result<()> {
    if !(a.train_fraction > 0.0 && a.train_fraction < 1.0) {
        return Err(Error::InvalidConfig("--train-fraction must lie in (0, 1)".into()));
    }
    let m = require_manifest(g)?;
    let entries = select(&m, &a.selection)?;
    let stacks: Vec<FeatureMapStack<T>> =
        entries.par_iter().map(|e| load_stack::<T>(e).map(|(f, _)| f)).collect::<Result<_>>()?;

    let mut maps: Vec<Vec<T>> = Vec::new();
    let mut map_len = None;
    for f in &stacks {
        if *map_len.get_or_insert(f.area()) != f.area() {
            return Err(Error::DimensionMismatch("feature maps of different spatial sizes".into()));
        }
        for n in 0..f.channels() {
            let ch = f.channel(n);
            if ch.iter().any(|v| *v != T::zero()) {
                maps.push(ch.to_vec());
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    maps.shuffle(&mut rng);
    maps.truncate(a.max_maps);
    if maps.len() < 2 {
        return Err(Error::InsufficientSamples(format!("{} nonzero channel maps", maps.len())));
    }
    let n_train = ((maps.len() as f64 * a.train_fraction).round() as usize).clamp(1, maps.len() - 1);
    let (train, test) = maps.split_at(n_train);

    let mut cfg = ComplexityConfig::new(a.components.clone());
    cfg.sparsity = a.sparsity;
    cfg.max_iters = a.iters;
    let curve = dictionary_complexity(train, test, &cfg)?;

    let mut out = csv::Writer::from_path(g.out.join("complexity.csv"))?;
    out.write_record(["K", "mse"])?;
    for (k, e) in curve.component_counts.iter().zip(&curve.reconstruction_errors) {
        out.write_record([k.to_string(), num(e)])?;
    }
    out.flush()?;
    let points: Vec<(f64, f64)> =
        curve.component_counts.iter().zip(&curve.reconstruction_errors).map(|(&k, &e)| (k as f64, e)).collect();
    let chart = Chart::new("Held-out reconstruction error", "dictionary atoms", "MSE");
    fs::write(g.out.join("complexity.svg"), plot::line(&chart, &points))?;
    write_json(
        &g.out.join("complexity.json"),
        &ComplexityFile {
            precision: precision_name::<T>(),
            seed: g.seed,
            train_maps: train.len(),
            test_maps: test.len(),
            map_len: map_len.unwrap_or(0),
            config: &cfg,
            curve,
        },
    )
}
