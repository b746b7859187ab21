//! Principal component analysis of a feature-map stack and the PC1
//! localizer built on it.
//!
//! Spatial locations are the samples and channels are the variables, so
//! every principal component projects back onto an `I × J` image.

use crate::cam::{FeatureMapStack, Heatmap};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, symmetric_eigen};
use crate::localization::BinaryMap;
use crate::scalar::{ordered_sum, Scalar};

/// Convergence tolerance of the Jacobi eigensolver.
pub const EIGEN_TOL: f64 = 1e-10;

/// Polarity decision boundary on the mean of the binarized edge pixels.
pub const EDGE_MEAN_CUTOFF: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct PcaDecomposition<T> {
    pub height: usize,
    pub width: usize,
    pub channel_means: Vec<T>,
    /// Per-component variance, descending, clamped at zero.
    pub variances: Vec<T>,
    /// Unit channel-space directions for every component with nonzero variance.
    pub components: Vec<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct PcaResult<T> {
    pub pc1_map: Heatmap<T>,
    /// Explained-variance ratios, descending; length `min(N, I·J)`.
    pub contribution_rates: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct Pc1Localization<T> {
    pub pca: PcaResult<T>,
    /// PC1 map, negated when the edge rule says the object came out dark.
    /// Unnormalized.
    pub polarity_corrected_map: Heatmap<T>,
    /// Object mask: corrected map strictly above its own mean.
    pub binary_map: BinaryMap,
    /// Mean of the raw (pre-correction) binary map over the outer edge.
    pub edge_mean: f64,
    pub flipped: bool,
}

fn centered_channels<T: Scalar>(f: &FeatureMapStack<T>) -> (Vec<T>, Vec<Vec<T>>) {
    let area = T::lit(f.area() as f64);
    let means: Vec<T> = (0..f.channels()).map(|n| ordered_sum(f.channel(n).iter().copied()) / area).collect();
    let centered = (0..f.channels()).map(|n| f.channel(n).iter().map(|&v| v - means[n]).collect()).collect();
    (means, centered)
}

/// Full eigendecomposition of the channel covariance. Uses the `N × N`
/// covariance when `N <= I·J` and the `I·J × I·J` Gram matrix otherwise.
pub fn pca<T: Scalar>(f: &FeatureMapStack<T>) -> Result<PcaDecomposition<T>> {
    let n = f.channels();
    let p = f.area();
    if n < 2 || p < 2 {
        return Err(Error::DimensionMismatch(format!("PCA needs N >= 2 and I*J >= 2, got N={n}, I*J={p}")));
    }
    let (means, centered) = centered_channels(f);

    let scale = f.as_slice().iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let floor = T::lit((n * p) as f64) * (T::lit(4.0) * T::epsilon() * scale).powi(2);
    let total: T = ordered_sum(centered.iter().map(|c| dot(c, c)));
    if !(total > floor) {
        return Err(Error::DegenerateStack);
    }

    let dof = T::lit((p - 1) as f64);
    let (variances, components) = if n <= p {
        let mut cov = vec![T::zero(); n * n];
        for a in 0..n {
            for b in a..n {
                let c = dot(&centered[a], &centered[b]) / dof;
                cov[a * n + b] = c;
                cov[b * n + a] = c;
            }
        }
        let eig = symmetric_eigen(&cov, n, EIGEN_TOL);
        (eig.values, eig.vectors)
    } else {
        let mut gram = vec![T::zero(); p * p];
        for s in 0..p {
            for t in s..p {
                let g = ordered_sum(centered.iter().map(|c| c[s] * c[t])) / dof;
                gram[s * p + t] = g;
                gram[t * p + s] = g;
            }
        }
        let eig = symmetric_eigen(&gram, p, EIGEN_TOL);
        // map each sample-space eigenvector back to channel space
        let vectors = eig
            .vectors
            .iter()
            .map(|u| {
                let v: Vec<T> = centered.iter().map(|c| dot(c, u)).collect();
                let len = norm(&v);
                v.into_iter().map(|x| x / len).collect()
            })
            .collect();
        (eig.values, vectors)
    };

    let top = variances[0];
    let mut kept_vars = Vec::with_capacity(variances.len());
    let mut kept = Vec::new();
    for (var, vec) in variances.into_iter().zip(components) {
        let var = var.max(T::zero());
        if var > top * T::epsilon() * T::lit(n.max(p) as f64) && vec.iter().all(|x| x.is_finite()) {
            kept.push(vec);
        }
        kept_vars.push(var);
    }
    Ok(PcaDecomposition {
        height: f.height(),
        width: f.width(),
        channel_means: means,
        variances: kept_vars,
        components: kept,
    })
}

impl<T: Scalar> PcaDecomposition<T> {
    pub fn contribution_rates(&self) -> Vec<T> {
        let total = ordered_sum(self.variances.iter().copied());
        self.variances.iter().map(|&v| v / total).collect()
    }

    /// Projection scores of the centered stack on component `k`, one per pixel.
    pub fn scores(&self, f: &FeatureMapStack<T>, k: usize) -> Vec<T> {
        let dir = &self.components[k];
        let mut out = vec![T::zero(); f.area()];
        for (n, &w) in dir.iter().enumerate() {
            let mean = self.channel_means[n];
            for (o, &v) in out.iter_mut().zip(f.channel(n)) {
                *o = *o + (v - mean) * w;
            }
        }
        out
    }

    /// Centered stack rebuilt from the scores on every retained component,
    /// channel-major like the input.
    pub fn reconstruct_centered(&self, f: &FeatureMapStack<T>) -> Vec<T> {
        let area = f.area();
        let mut out = vec![T::zero(); f.channels() * area];
        for k in 0..self.components.len() {
            let s = self.scores(f, k);
            for (n, &w) in self.components[k].iter().enumerate() {
                for (o, &sv) in out[n * area..(n + 1) * area].iter_mut().zip(&s) {
                    *o = *o + sv * w;
                }
            }
        }
        out
    }
}

pub fn pca_pc1<T: Scalar>(f: &FeatureMapStack<T>) -> Result<PcaResult<T>> {
    let decomposition = pca(f)?;
    let pc1 = decomposition.scores(f, 0);
    Ok(PcaResult {
        pc1_map: Heatmap::new(f.height(), f.width(), pc1)?,
        contribution_rates: decomposition.contribution_rates(),
    })
}

/// Contribution rates of a single PCA fit across several stacks, with
/// every spatial location of every stack pooled as one sample. Channel
/// means are taken over the pool.
pub fn batch_contribution_rates<T: Scalar>(stacks: &[FeatureMapStack<T>]) -> Result<Vec<T>> {
    let Some(first) = stacks.first() else {
        return Err(Error::InsufficientSamples("no stacks to pool".into()));
    };
    let n = first.channels();
    if let Some(s) = stacks.iter().find(|s| s.channels() != n) {
        return Err(Error::DimensionMismatch(format!("stacks with {n} and {} channels", s.channels())));
    }
    let total: usize = stacks.iter().map(|s| s.area()).sum();
    let mut data = Vec::with_capacity(n * total);
    for c in 0..n {
        for s in stacks {
            data.extend_from_slice(s.channel(c));
        }
    }
    Ok(pca(&FeatureMapStack::new(n, 1, total, data)?)?.contribution_rates())
}

/// Flat indices of the outer ring of a `height × width` grid.
pub fn edge_indices(height: usize, width: usize) -> Vec<usize> {
    (0..height)
        .flat_map(|r| (0..width).map(move |c| (r, c)))
        .filter(|&(r, c)| r == 0 || c == 0 || r + 1 == height || c + 1 == width)
        .map(|(r, c)| r * width + c)
        .collect()
}

fn above_mean<T: Scalar>(map: &Heatmap<T>) -> (T, Vec<bool>) {
    let mean = map.mean();
    (mean, map.values().iter().map(|&v| v > mean).collect())
}

/// Steps two to four of the PC1 localizer on an already computed PC1 map:
/// binarize at the pixel mean, average the binary edge ring, and negate the
/// map when the edges are mostly "on". Returns
/// `(corrected map, object mask, edge mean, flipped)`.
///
/// An edge mean of exactly one half is resolved by the sign of the map's
/// third central moment, so that negating the input never changes the mask.
pub fn polarity_correct<T: Scalar>(pc1: &Heatmap<T>) -> (Heatmap<T>, BinaryMap, f64, bool) {
    let (mean, bits) = above_mean(pc1);
    let edges = edge_indices(pc1.height(), pc1.width());
    let on = edges.iter().filter(|&&i| bits[i]).count();
    let edge_mean = on as f64 / edges.len() as f64;

    let flipped = if edge_mean == EDGE_MEAN_CUTOFF {
        ordered_sum(pc1.values().iter().map(|&v| (v - mean).powi(3))) < T::zero()
    } else {
        edge_mean > EDGE_MEAN_CUTOFF
    };
    let corrected = if flipped { pc1.map(|v| -v) } else { pc1.clone() };

    let (cmean, cbits) = above_mean(&corrected);
    let (lo, hi) = corrected.min_max();
    let rel = if hi > lo { ((cmean - lo) / (hi - lo)).as_f64() } else { 0.0 };
    let mask = BinaryMap::from_bits(corrected.height(), corrected.width(), cbits, rel.clamp(0.0, 1.0));
    (corrected, mask, edge_mean, flipped)
}

pub fn pc1_localize<T: Scalar>(f: &FeatureMapStack<T>) -> Result<Pc1Localization<T>> {
    let pca = pca_pc1(f)?;
    let (polarity_corrected_map, binary_map, edge_mean, flipped) = polarity_correct(&pca.pc1_map);
    Ok(Pc1Localization { pca, polarity_corrected_map, binary_map, edge_mean, flipped })
}
