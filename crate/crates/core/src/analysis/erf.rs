use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Contribution fractions at which the high-contribution area is measured.
pub const ERF_THRESHOLDS: [f64; 11] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErfRegion {
    /// Smallest square around the map center holding the mass.
    CenteredSquare,
    /// Fewest pixels, taken in descending order of contribution.
    TopPixels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErfCurve {
    pub region: ErfRegion,
    pub thresholds: Vec<f64>,
    pub area_ratios: Vec<f64>,
    /// Trapezoidal area under `area_ratios` over the threshold range,
    /// divided by the length of that range.
    pub auc: f64,
}

/// Area ratios of the high-contribution region of an aggregated gradient
/// map, one per threshold `t`: the region must hold at least `t` of the
/// total contribution.
pub fn erf_curve<T: Scalar>(
    map: &[T],
    height: usize,
    width: usize,
    thresholds: &[f64],
    region: ErfRegion,
) -> Result<ErfCurve> {
    if height == 0 || width == 0 || map.len() != height * width {
        return Err(Error::DimensionMismatch(format!("{height}x{width} map with {} values", map.len())));
    }
    if thresholds.is_empty()
        || thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0))
        || thresholds.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::InvalidConfig("ERF thresholds must be strictly ascending in (0, 1]".into()));
    }
    let values: Vec<f64> = map.iter().map(|v| v.as_f64()).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteData { index: i });
    }
    if let Some(i) = values.iter().position(|&v| v < 0.0) {
        return Err(Error::NegativeContribution(i));
    }
    let total: f64 = values.iter().sum();
    if total == 0.0 {
        return Err(Error::AllZeroContribution);
    }

    // (cumulative mass, covered pixels) for each region in growth order
    let growth = match region {
        ErfRegion::CenteredSquare => square_growth(&values, height, width),
        ErfRegion::TopPixels => top_pixel_growth(&values),
    };
    let pixels = (height * width) as f64;
    let area_ratios = thresholds
        .iter()
        .map(|&t| {
            let target = t * total;
            growth
                .iter()
                .find(|(mass, _)| *mass >= target)
                .map_or(1.0, |&(_, covered)| covered as f64 / pixels)
        })
        .collect::<Vec<_>>();

    let auc = normalized_trapezoid(thresholds, &area_ratios);
    Ok(ErfCurve { region, thresholds: thresholds.to_vec(), area_ratios, auc })
}

/// Centered squares of side 1, 2, ... clipped to the map. Each square
/// contains the previous one, so mass is accumulated ring by ring.
fn square_growth(values: &[f64], height: usize, width: usize) -> Vec<(f64, usize)> {
    let (cr, cc) = ((height / 2) as isize, (width / 2) as isize);
    let span = |center: isize, side: isize, limit: usize| {
        let lo = (center - side / 2).max(0) as usize;
        let hi = ((center - side / 2 + side).max(0) as usize).min(limit);
        (lo, hi)
    };
    let mut out = Vec::with_capacity(height.max(width));
    let mut mass = 0.0;
    let (mut r0, mut r1, mut c0, mut c1) = (0usize, 0usize, 0usize, 0usize);
    for side in 1..=height.max(width) as isize {
        let (nr0, nr1) = span(cr, side, height);
        let (nc0, nc1) = span(cc, side, width);
        for r in nr0..nr1 {
            for c in nc0..nc1 {
                let inside_old = r >= r0 && r < r1 && c >= c0 && c < c1;
                if !inside_old {
                    mass += values[r * width + c];
                }
            }
        }
        (r0, r1, c0, c1) = (nr0, nr1, nc0, nc1);
        out.push((mass, (r1 - r0) * (c1 - c0)));
    }
    out
}

fn top_pixel_growth(values: &[f64]) -> Vec<(f64, usize)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut mass = 0.0;
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            mass += v;
            (mass, i + 1)
        })
        .collect()
}

/// Written as `first + Σ increment × remaining-fraction` so a constant
/// curve integrates to exactly its value and the result never exceeds the
/// last point of a nondecreasing curve.
fn normalized_trapezoid(t: &[f64], y: &[f64]) -> f64 {
    let n = t.len();
    if n == 1 {
        return y[0];
    }
    let (first, last) = (t[0], t[n - 1]);
    let range = last - first;
    y[0] + (0..n - 1)
        .map(|i| {
            let mid = 0.5 * (t[i] + t[i + 1]);
            (y[i + 1] - y[i]) * (last - mid) / range
        })
        .sum::<f64>()
}
