//! Heatmap to box conversion: normalization, thresholding, 4-connected
//! components, upscaling to image pixels, and IoU.

use serde::{Deserialize, Serialize};

use crate::cam::Heatmap;
use crate::error::{Error, Result};
use crate::manifest::ImageSize;
use crate::scalar::Scalar;

/// Axis-aligned box in pixels, half-open: `[x_min, x_max) × [y_min, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BBox {
    /// `None` for empty or inverted boxes.
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Option<Self> {
        (x_min < x_max && y_min < y_max).then_some(BBox { x_min, y_min, x_max, y_max })
    }

    pub fn width(&self) -> u64 {
        (self.x_max - self.x_min) as u64
    }

    pub fn height(&self) -> u64 {
        (self.y_max - self.y_min) as u64
    }

    pub fn area(&self) -> u64 {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &BBox) -> u64 {
        let w = self.x_max.min(other.x_max).saturating_sub(self.x_min.max(other.x_min));
        let h = self.y_max.min(other.y_max).saturating_sub(self.y_min.max(other.y_min));
        w as u64 * h as u64
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMap {
    height: usize,
    width: usize,
    bits: Vec<bool>,
    threshold_used: f64,
}

impl BinaryMap {
    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>, threshold_used: f64) -> Self {
        assert_eq!(bits.len(), height * width, "bit grid does not match {height}x{width}");
        BinaryMap { height, width, bits, threshold_used }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn threshold_used(&self) -> f64 {
        self.threshold_used
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Min-max rescale to `[0, 1]`. A constant map becomes all zeros.
pub fn normalize<T: Scalar>(h: &Heatmap<T>) -> Heatmap<T> {
    let (lo, hi) = h.min_max();
    let values = if hi > lo {
        let range = hi - lo;
        h.values().iter().map(|&v| (v - lo) / range).collect()
    } else {
        vec![T::zero(); h.values().len()]
    };
    Heatmap::from_parts(h.height(), h.width(), values, true)
}

/// `bit = h >= tau` on a normalized heatmap.
pub fn binarize<T: Scalar>(h: &Heatmap<T>, tau: f64) -> Result<BinaryMap> {
    if !h.is_normalized() {
        return Err(Error::NotNormalized);
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::TauOutOfRange(tau));
    }
    let t = T::lit(tau);
    let bits = h.values().iter().map(|&v| v >= t).collect();
    Ok(BinaryMap::from_bits(h.height(), h.width(), bits, tau))
}

/// Box on the heatmap grid, in cells, half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridBox {
    pub col_min: usize,
    pub row_min: usize,
    pub col_max: usize,
    pub row_max: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    /// Row-major flat indices, ascending.
    pub pixels: Vec<usize>,
    pub bbox: GridBox,
}

impl Component {
    pub fn pixel_count(&self) -> usize {
        self.pixels.len()
    }
}

/// 4-connected components of the set bits, largest first. Ties keep
/// raster order of each component's first pixel.
pub fn connected_components(b: &BinaryMap) -> Vec<Component> {
    let (h, w) = (b.height, b.width);
    let mut label = vec![usize::MAX; h * w];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !b.bits[start] || label[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        label[start] = id;
        stack.push(start);
        let mut pixels = Vec::new();
        let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(p) = stack.pop() {
            pixels.push(p);
            let (r, c) = (p / w, p % w);
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
            let mut visit = |q: usize| {
                if b.bits[q] && label[q] == usize::MAX {
                    label[q] = id;
                    stack.push(q);
                }
            };
            if r > 0 {
                visit(p - w);
            }
            if r + 1 < h {
                visit(p + w);
            }
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < w {
                visit(p + 1);
            }
        }
        pixels.sort_unstable();
        out.push(Component {
            pixels,
            bbox: GridBox { col_min: c0, row_min: r0, col_max: c1 + 1, row_max: r1 + 1 },
        });
    }
    // stable: equal sizes stay in discovery (raster) order
    out.sort_by_key(|c| std::cmp::Reverse(c.pixel_count()));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxMode {
    LargestOnly,
    AllComponents,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BoxSet {
    boxes: Vec<BBox>,
    areas: Vec<u64>,
}

impl BoxSet {
    pub fn new(boxes: Vec<BBox>) -> Self {
        let areas = boxes.iter().map(BBox::area).collect();
        BoxSet { boxes, areas }
    }

    pub fn boxes(&self) -> &[BBox] {
        &self.boxes
    }

    pub fn areas(&self) -> &[u64] {
        &self.areas
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    /// Best IoU of any box here against any box in `gt`; 0 when either is empty.
    pub fn best_iou(&self, gt: &[BBox]) -> f64 {
        self.boxes
            .iter()
            .flat_map(|p| gt.iter().map(move |g| iou(p, g)))
            .fold(0.0, f64::max)
    }
}

/// Grid box scaled to image pixels, rounding mins down and maxes up.
pub fn scale_box(b: &GridBox, grid_height: usize, grid_width: usize, image: ImageSize) -> BBox {
    let (iw, ih) = (image.width as u64, image.height as u64);
    let (gw, gh) = (grid_width as u64, grid_height as u64);
    let x_min = (b.col_min as u64 * iw) / gw;
    let y_min = (b.row_min as u64 * ih) / gh;
    let x_max = (b.col_max as u64 * iw).div_ceil(gw);
    let y_max = (b.row_max as u64 * ih).div_ceil(gh);
    BBox { x_min: x_min as u32, y_min: y_min as u32, x_max: x_max as u32, y_max: y_max as u32 }
}

pub fn boxes_from_components(
    components: &[Component],
    grid_height: usize,
    grid_width: usize,
    mode: BoxMode,
    image: ImageSize,
) -> BoxSet {
    let take = match mode {
        BoxMode::LargestOnly => components.len().min(1),
        BoxMode::AllComponents => components.len(),
    };
    BoxSet::new(components[..take].iter().map(|c| scale_box(&c.bbox, grid_height, grid_width, image)).collect())
}

pub fn boxes_from_binary(b: &BinaryMap, mode: BoxMode, image: ImageSize) -> Result<BoxSet> {
    if (image.width as usize) < b.width || (image.height as usize) < b.height {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} image is smaller than the {}x{} map",
            image.width, image.height, b.width, b.height
        )));
    }
    let components = connected_components(b);
    Ok(boxes_from_components(&components, b.height, b.width, mode, image))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(rows: &[&str]) -> BinaryMap {
        let w = rows[0].len();
        let b = rows.iter().flat_map(|r| r.chars().map(|c| c == '1')).collect();
        BinaryMap::from_bits(rows.len(), w, b, 0.5)
    }

    const IMG384: ImageSize = ImageSize { width: 384, height: 384 };

    #[test]
    fn normalize_examples() {
        let h = Heatmap::new(2, 2, vec![0.0, 5.0, 10.0, 20.0]).unwrap();
        let n = normalize(&h);
        assert_eq!(n.values(), &[0.0, 0.25, 0.5, 1.0]);
        assert!(n.is_normalized());
        assert_eq!(normalize(&n), n);
        let c = normalize(&Heatmap::new(1, 3, vec![4.0; 3]).unwrap());
        assert_eq!(c.values(), &[0.0; 3]);
        assert!(c.is_normalized());
    }

    #[test]
    fn binarize_edges() {
        let h = normalize(&Heatmap::new(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap());
        assert_eq!(binarize(&h, 0.0).unwrap().count_ones(), 4);
        assert_eq!(binarize(&h, 1.0).unwrap().count_ones(), 1);
        assert_eq!(binarize(&h, f64::from_bits(1.0f64.to_bits() - 1)).unwrap().count_ones(), 1);
        assert!(matches!(binarize(&h, 1.5), Err(Error::TauOutOfRange(_))));
        let raw = Heatmap::new(1, 1, vec![0.0]).unwrap();
        assert!(matches!(binarize(&raw, 0.5), Err(Error::NotNormalized)));
    }

    #[test]
    fn block_component() {
        let m = bits(&["00000", "00000", "01100", "01100", "00000"]);
        let cc = connected_components(&m);
        assert_eq!(cc.len(), 1);
        assert_eq!(cc[0].bbox, GridBox { col_min: 1, row_min: 2, col_max: 3, row_max: 4 });
        assert_eq!(cc[0].pixel_count(), 4);
    }

    #[test]
    fn diagonal_pixels_are_separate() {
        let cc = connected_components(&bits(&["10", "01"]));
        assert_eq!(cc.len(), 2);
        let cc = connected_components(&bits(&["0000", "0000"]));
        assert!(cc.is_empty());
    }

    #[test]
    fn components_sorted_by_size() {
        let cc = connected_components(&bits(&["1001", "0001", "1101"]));
        let sizes: Vec<_> = cc.iter().map(Component::pixel_count).collect();
        assert_eq!(sizes, vec![3, 2, 1]);
    }

    #[test]
    fn upscaling() {
        let full = BinaryMap::from_bits(12, 12, vec![true; 144], 0.0);
        let b = boxes_from_binary(&full, BoxMode::LargestOnly, IMG384).unwrap();
        assert_eq!(b.boxes(), &[BBox { x_min: 0, y_min: 0, x_max: 384, y_max: 384 }]);

        let mut one = vec![false; 144];
        one[0] = true;
        let b = boxes_from_binary(&BinaryMap::from_bits(12, 12, one, 0.5), BoxMode::AllComponents, IMG384).unwrap();
        assert_eq!(b.boxes(), &[BBox { x_min: 0, y_min: 0, x_max: 32, y_max: 32 }]);
        assert_eq!(b.areas(), &[1024]);

        let empty = BinaryMap::from_bits(12, 12, vec![false; 144], 1.0);
        assert!(boxes_from_binary(&empty, BoxMode::AllComponents, IMG384).unwrap().is_empty());
    }

    #[test]
    fn outward_rounding() {
        // 3 cells onto 10 pixels: cell 1 spans [3.33, 6.67) -> [3, 7)
        let g = GridBox { col_min: 1, row_min: 1, col_max: 2, row_max: 2 };
        let b = scale_box(&g, 3, 3, ImageSize { width: 10, height: 10 });
        assert_eq!(b, BBox { x_min: 3, y_min: 3, x_max: 7, y_max: 7 });
    }

    #[test]
    fn image_smaller_than_map() {
        let m = BinaryMap::from_bits(4, 4, vec![true; 16], 0.0);
        assert!(boxes_from_binary(&m, BoxMode::LargestOnly, ImageSize { width: 3, height: 8 }).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0, 0, 2, 2).unwrap();
        let b = BBox::new(1, 0, 3, 2).unwrap();
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(5, 5, 6, 6).unwrap()), 0.0);
        assert_eq!(iou(&a, &b), 1.0 / 3.0);
        assert!(BBox::new(2, 0, 2, 1).is_none());
    }
}
