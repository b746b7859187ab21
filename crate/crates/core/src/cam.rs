//! Global average pooling and class activation maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{ordered_sum, Scalar};
use crate::tensor::Tensor;

/// Final-layer activations of one image: `channels` maps of `height × width`,
/// stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapStack<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureMapStack<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::DimensionMismatch(format!(
                "feature map stack needs N, I, J >= 1, got ({channels}, {height}, {width})"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::DimensionMismatch(format!(
                "({channels}, {height}, {width}) stack needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData { index });
        }
        Ok(FeatureMapStack { channels, height, width, data })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [n, i, j] => Self::new(n, i, j, t.to_vec()),
            ref shape => Err(Error::DimensionMismatch(format!("expected (N, I, J) tensor, got {shape:?}"))),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Pixels per channel.
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, n: usize) -> &[T] {
        let a = self.area();
        &self.data[n * a..(n + 1) * a]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        FeatureMapStack { data: self.data.iter().map(|&v| f(v)).collect(), ..*self }
    }
}

/// Fully connected weights `W[n, c]` from pooled channel `n` to class `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierWeights<T> {
    channels: usize,
    classes: usize,
    data: Vec<T>,
}

impl<T: Scalar> ClassifierWeights<T> {
    pub fn new(channels: usize, classes: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 || classes == 0 || data.len() != channels * classes {
            return Err(Error::DimensionMismatch(format!(
                "weights ({channels}, {classes}) with {} values",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData { index });
        }
        Ok(ClassifierWeights { channels, classes, data })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [n, c] => Self::new(n, c, t.to_vec()),
            ref shape => Err(Error::DimensionMismatch(format!("expected (N, C) weights, got {shape:?}"))),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn get(&self, channel: usize, class: usize) -> T {
        self.data[channel * self.classes + class]
    }

    /// Column of weights for one class.
    pub fn class_column(&self, class: usize) -> Result<Vec<T>> {
        self.check_class(class)?;
        Ok((0..self.channels).map(|n| self.get(n, class)).collect())
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.classes {
            return Err(Error::ClassOutOfRange { index: class, classes: self.classes });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapVector<T>(pub Vec<T>);

impl<T> GapVector<T> {
    pub fn values(&self) -> &[T] {
        &self.0
    }
}

/// Single-channel localization map over the feature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap<T> {
    height: usize,
    width: usize,
    values: Vec<T>,
    normalized: bool,
}

impl<T: Scalar> Heatmap<T> {
    pub fn new(height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{height}x{width} heatmap with {} values",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData { index });
        }
        Ok(Heatmap { height, width, values, normalized: false })
    }

    /// Wraps values already in `[0, 1]` (for example a map written by `cam`
    /// and read back). Verifies the normalization invariant.
    pub fn new_normalized(height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        let mut h = Self::new(height, width, values)?;
        let (lo, hi) = h.min_max();
        let all_zero = hi == T::zero() && lo == T::zero();
        if !all_zero && (lo != T::zero() || hi != T::one()) {
            return Err(Error::NotNormalized);
        }
        h.normalized = true;
        Ok(h)
    }

    pub(crate) fn from_parts(height: usize, width: usize, values: Vec<T>, normalized: bool) -> Self {
        debug_assert_eq!(values.len(), height * width);
        Heatmap { height, width, values, normalized }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> T {
        self.values[row * self.width + col]
    }

    pub fn min_max(&self) -> (T, T) {
        self.values
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> T {
        ordered_sum(self.values.iter().copied()) / T::lit(self.values.len() as f64)
    }

    /// Elementwise transform; the result is unnormalized.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Heatmap::from_parts(self.height, self.width, self.values.iter().map(|&v| f(v)).collect(), false)
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::from_vec(vec![self.height, self.width], self.values.clone())
    }
}

/// Which channels contribute to a CAM, selected by their class weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum WeightFilter {
    All,
    /// `w > 0`
    PositiveOnly,
    /// `w < 0`
    NegativeOnly,
    /// `lo < w <= hi`
    Band { lo: f64, hi: f64 },
}

impl WeightFilter {
    pub fn band(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::InvalidConfig(format!("weight band needs lo < hi, got ({lo}, {hi}]")));
        }
        Ok(WeightFilter::Band { lo, hi })
    }

    pub fn selects<T: Scalar>(&self, w: T) -> bool {
        match *self {
            WeightFilter::All => true,
            WeightFilter::PositiveOnly => w > T::zero(),
            WeightFilter::NegativeOnly => w < T::zero(),
            WeightFilter::Band { lo, hi } => {
                let w = w.as_f64();
                lo < w && w <= hi
            }
        }
    }
}

pub fn gap<T: Scalar>(f: &FeatureMapStack<T>) -> GapVector<T> {
    let area = T::lit(f.area() as f64);
    GapVector((0..f.channels()).map(|n| ordered_sum(f.channel(n).iter().copied()) / area).collect())
}

fn check_pair<T: Scalar>(f: &FeatureMapStack<T>, w: &ClassifierWeights<T>) -> Result<()> {
    if f.channels() != w.channels() {
        return Err(Error::DimensionMismatch(format!(
            "stack has {} channels, weights have {}",
            f.channels(),
            w.channels()
        )));
    }
    Ok(())
}

/// Unnormalized class activation map `Σ_{n selected} W[n,c] · F_n`.
pub fn cam<T: Scalar>(
    f: &FeatureMapStack<T>,
    w: &ClassifierWeights<T>,
    class_index: usize,
    filter: WeightFilter,
) -> Result<Heatmap<T>> {
    check_pair(f, w)?;
    let column = w.class_column(class_index)?;
    let mut acc = vec![T::zero(); f.area()];
    let mut selected = 0;
    for (n, &wn) in column.iter().enumerate() {
        if !filter.selects(wn) {
            continue;
        }
        selected += 1;
        for (a, &v) in acc.iter_mut().zip(f.channel(n)) {
            *a = *a + wn * v;
        }
    }
    if selected == 0 {
        return Err(Error::EmptySelection);
    }
    Ok(Heatmap::from_parts(f.height(), f.width(), acc, false))
}

/// Class logit from pooled features, `Σ_n W[n,c] · G_n`.
pub fn logit_from_gap<T: Scalar>(g: &GapVector<T>, w: &ClassifierWeights<T>, class_index: usize) -> Result<T> {
    if g.0.len() != w.channels() {
        return Err(Error::DimensionMismatch(format!(
            "GAP vector of length {} against {} weight rows",
            g.0.len(),
            w.channels()
        )));
    }
    let column = w.class_column(class_index)?;
    Ok(ordered_sum(column.iter().zip(&g.0).map(|(&wn, &gn)| wn * gn)))
}
