use std::collections::HashMap;
use std::path::{Path, PathBuf};

use proptest::prelude::*;
use wsol::scoring::HeatmapSet;
use wsol::tensor::{decode_tensor, encode_tensor};
use wsol::{
    binarize, fixed_threshold_boxacc, iou, max_boxacc, normalize, BBox, Heatmap, ImageEntry, ImageSize, SweepConfig,
    Tensor, Variant,
};

fn bbox() -> impl Strategy<Value = BBox> {
    (0u32..50, 0u32..50, 1u32..30, 1u32..30).prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

fn heatmap() -> impl Strategy<Value = Heatmap<f64>> {
    (1usize..10, 1usize..10)
        .prop_flat_map(|(r, c)| proptest::collection::vec(-100.0f64..100.0, r * c).prop_map(move |v| (r, c, v)))
        .prop_map(|(r, c, v)| Heatmap::new(r, c, v).unwrap())
}

fn scored_set() -> impl Strategy<Value = (HeatmapSet<f64>, Vec<ImageEntry>)> {
    proptest::collection::vec((heatmap(), 0u32..4, 0u32..4, 1u32..5, 1u32..5), 1..6).prop_map(|items| {
        let mut set = HashMap::new();
        let mut entries = Vec::new();
        for (k, (h, x, y, w, hh)) in items.into_iter().enumerate() {
            let id = format!("i{k}");
            // 4 px per cell
            let size = ImageSize { width: 4 * h.width() as u32, height: 4 * h.height() as u32 };
            let gt = BBox::new(x, y, (x + 4 * w).min(size.width).max(x + 1), (y + 4 * hh).min(size.height).max(y + 1));
            let gt = gt.filter(|b| b.x_max <= size.width && b.y_max <= size.height);
            let gt = gt.unwrap_or(BBox::new(0, 0, size.width, size.height).unwrap());
            entries.push(ImageEntry {
                image_id: id.clone(),
                class_index: 0,
                image_size: size,
                featuremap_path: PathBuf::new(),
                gt_boxes: vec![gt],
            });
            set.insert(id, h);
        }
        (set, entries)
    })
}

proptest! {
    #[test]
    fn tensor_round_trip(shape in proptest::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
        let count: usize = shape.iter().product();
        let values: Vec<f64> = (0..count).map(|i| f64::from_bits(seed.rotate_left(i as u32) >> 2) * if i % 2 == 0 { 1.0 } else { -1.0 })
            .map(|v| if v.is_finite() { v } else { 0.0 })
            .collect();
        let t = Tensor::from_vec(shape, values).unwrap();
        let back = decode_tensor(&encode_tensor(&t), Path::new("p")).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        let bits = |t: &Tensor| t.to_vec::<f64>().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&t));
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let (x, y) = (iou(&a, &b), iou(&b, &a));
        prop_assert_eq!(x, y);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn binarization_shrinks_with_threshold(h in heatmap(), t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
        let n = normalize(&h);
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let (a, b) = (binarize(&n, lo).unwrap(), binarize(&n, hi).unwrap());
        prop_assert!(a.bits().iter().zip(b.bits()).all(|(&x, &y)| x || !y));
    }

    #[test]
    fn scores_are_scale_invariant((set, entries) in scored_set(), alpha in 0.01f64..100.0) {
        let refs: Vec<&ImageEntry> = entries.iter().collect();
        let cfg = SweepConfig::default();
        let scaled: HeatmapSet<f64> = set.iter().map(|(k, h)| (k.clone(), h.map(|v| v * alpha))).collect();
        for variant in [Variant::V1, Variant::V2] {
            let a = max_boxacc(&set, &refs, "p", &cfg, variant).unwrap();
            let b = max_boxacc(&scaled, &refs, "p", &cfg, variant).unwrap();
            // min-max normalization can round differently by an ulp, so
            // compare the peak value rather than every grid point
            prop_assert_eq!(a.max_boxacc, b.max_boxacc);
        }
    }

    #[test]
    fn maximum_dominates_any_fixed_threshold((set, entries) in scored_set(), tau in 0.0f64..=1.0) {
        let refs: Vec<&ImageEntry> = entries.iter().collect();
        let cfg = SweepConfig::default();
        for variant in [Variant::V1, Variant::V2] {
            let best = max_boxacc(&set, &refs, "p", &cfg, variant).unwrap();
            let grid_tau = cfg.tau_grid[(tau * 100.0).round() as usize];
            let fixed = fixed_threshold_boxacc(&set, &refs, grid_tau, &cfg, variant).unwrap();
            prop_assert!(best.max_boxacc >= fixed);
        }
    }

    #[test]
    fn finer_grid_never_scores_lower((set, entries) in scored_set()) {
        let refs: Vec<&ImageEntry> = entries.iter().collect();
        let coarse = SweepConfig::with_points(11).unwrap();
        let fine = SweepConfig::with_points(101).unwrap();
        for variant in [Variant::V1, Variant::V2] {
            let c = max_boxacc(&set, &refs, "p", &coarse, variant).unwrap();
            let f = max_boxacc(&set, &refs, "p", &fine, variant).unwrap();
            prop_assert!(f.max_boxacc >= c.max_boxacc);
        }
    }
}
