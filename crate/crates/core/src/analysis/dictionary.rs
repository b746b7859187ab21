//! Sparse dictionary learning used to measure how hard a set of feature
//! maps is to compress: orthogonal matching pursuit for the codes, the
//! method-of-optimal-directions least-squares step for the atoms.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Cholesky};
use crate::scalar::Scalar;

pub const DEFAULT_SPARSITY: usize = 5;
pub const DEFAULT_ITERS: usize = 20;
pub const DEFAULT_REL_TOL: f64 = 1e-6;

/// Unit-norm atoms of a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary<T> {
    dim: usize,
    atoms: Vec<Vec<T>>,
}

impl<T: Scalar> Dictionary<T> {
    /// Atoms are L2-normalized; zero atoms are rejected.
    pub fn new(dim: usize, atoms: Vec<Vec<T>>) -> Result<Self> {
        let atoms = atoms
            .into_iter()
            .enumerate()
            .map(|(i, a)| {
                if a.len() != dim {
                    return Err(Error::DimensionMismatch(format!("atom {i} has length {}, expected {dim}", a.len())));
                }
                unit(a).ok_or_else(|| Error::InvalidConfig(format!("atom {i} has zero norm")))
            })
            .collect::<Result<_>>()?;
        Ok(Dictionary { dim, atoms })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[Vec<T>] {
        &self.atoms
    }
}

fn unit<T: Scalar>(mut v: Vec<T>) -> Option<Vec<T>> {
    let n = norm(&v);
    if !(n > T::zero()) {
        return None;
    }
    v.iter_mut().for_each(|x| *x = *x / n);
    Some(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode<T> {
    /// Atom indices in selection order.
    pub support: Vec<usize>,
    pub coefficients: Vec<T>,
    pub residual: Vec<T>,
}

impl<T: Scalar> SparseCode<T> {
    pub fn residual_sq(&self) -> T {
        dot(&self.residual, &self.residual)
    }
}

/// Greedy orthogonal matching pursuit with at most `sparsity` atoms.
/// Coefficients are the least-squares fit on the selected support.
pub fn omp<T: Scalar>(dict: &Dictionary<T>, x: &[T], sparsity: usize) -> SparseCode<T> {
    assert_eq!(x.len(), dict.dim, "vector length does not match dictionary");
    let stop = norm(x) * T::lit(1e-12);
    let mut support: Vec<usize> = Vec::new();
    let mut coefficients: Vec<T> = Vec::new();
    let mut residual = x.to_vec();
    let limit = sparsity.min(dict.len());

    while support.len() < limit && norm(&residual) > stop {
        let mut best: Option<(usize, T)> = None;
        for (k, atom) in dict.atoms.iter().enumerate() {
            if support.contains(&k) {
                continue;
            }
            let c = dot(&residual, atom).abs();
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((k, c));
            }
        }
        let Some((k, corr)) = best else { break };
        if !(corr > T::zero()) {
            break;
        }
        support.push(k);

        let s = support.len();
        let mut gram = vec![T::zero(); s * s];
        let mut rhs = vec![T::zero(); s];
        for (i, &a) in support.iter().enumerate() {
            rhs[i] = dot(&dict.atoms[a], x);
            for (j, &b) in support.iter().enumerate() {
                gram[i * s + j] = dot(&dict.atoms[a], &dict.atoms[b]);
            }
        }
        let Some(chol) = Cholesky::factor(&gram, s) else {
            // new atom is numerically dependent on the support
            support.pop();
            break;
        };
        coefficients = chol.solve(&rhs);
        residual = x.to_vec();
        for (&a, &c) in support.iter().zip(&coefficients) {
            for (r, &d) in residual.iter_mut().zip(&dict.atoms[a]) {
                *r = *r - c * d;
            }
        }
    }
    SparseCode { support, coefficients, residual }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComplexityConfig {
    /// Dictionary sizes, strictly ascending.
    pub component_counts: Vec<usize>,
    pub sparsity: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl ComplexityConfig {
    pub fn new(component_counts: Vec<usize>) -> Self {
        ComplexityConfig { component_counts, sparsity: DEFAULT_SPARSITY, max_iters: DEFAULT_ITERS, rel_tol: DEFAULT_REL_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityCurve {
    pub component_counts: Vec<usize>,
    /// Mean squared reconstruction error per element on the held-out maps.
    pub reconstruction_errors: Vec<f64>,
    pub sparsity: usize,
    /// Alternation rounds actually run for each dictionary size.
    pub iterations: Vec<usize>,
}

/// Held-out reconstruction error as a function of dictionary size.
///
/// Dictionaries are grown: the dictionary for each size keeps the atoms
/// learned for the previous size fixed, starts its new atoms from the next
/// training maps in order, and refines only those. Each held-out map keeps
/// the better of its fresh pursuit code and the code it had at the previous
/// size (still valid, since those atoms are unchanged), so the error never
/// increases with size.
pub fn dictionary_complexity<T: Scalar>(
    train_maps: &[Vec<T>],
    test_maps: &[Vec<T>],
    cfg: &ComplexityConfig,
) -> Result<ComplexityCurve> {
    if train_maps.is_empty() || test_maps.is_empty() {
        return Err(Error::InsufficientSamples("need at least one training and one held-out map".into()));
    }
    if cfg.sparsity == 0 || cfg.max_iters == 0 {
        return Err(Error::InvalidConfig("sparsity and iteration count must be positive".into()));
    }
    if cfg.component_counts.is_empty()
        || cfg.component_counts[0] == 0
        || cfg.component_counts.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::InvalidConfig("component counts must be positive and strictly ascending".into()));
    }
    let max_k = *cfg.component_counts.last().unwrap();
    if max_k > train_maps.len() {
        return Err(Error::InsufficientSamples(format!(
            "{max_k} atoms requested from {} training maps",
            train_maps.len()
        )));
    }
    let dim = train_maps[0].len();
    let normalize_all = |maps: &[Vec<T>], what: &str| -> Result<Vec<Vec<T>>> {
        maps.iter()
            .enumerate()
            .map(|(i, m)| {
                if m.len() != dim {
                    return Err(Error::DimensionMismatch(format!("{what} map {i} has length {}, expected {dim}", m.len())));
                }
                unit(m.clone()).ok_or_else(|| Error::InsufficientSamples(format!("{what} map {i} has zero norm")))
            })
            .collect()
    };
    let train = normalize_all(train_maps, "training")?;
    let test = normalize_all(test_maps, "held-out")?;

    let mut dict = Dictionary { dim, atoms: Vec::new() };
    let mut carried: Vec<T> = vec![T::infinity(); test.len()];
    let mut errors = Vec::with_capacity(cfg.component_counts.len());
    let mut iterations = Vec::with_capacity(cfg.component_counts.len());

    for &k in &cfg.component_counts {
        let frozen = dict.len();
        dict.atoms.extend(train[frozen..k].iter().cloned());
        iterations.push(refine(&mut dict, frozen, &train, cfg));

        let mut total = T::zero();
        for (x, best) in test.iter().zip(carried.iter_mut()) {
            let fresh = omp(&dict, x, cfg.sparsity).residual_sq();
            *best = best.min(fresh);
            total = total + *best;
        }
        errors.push((total / T::lit((test.len() * dim) as f64)).as_f64());
    }

    Ok(ComplexityCurve {
        component_counts: cfg.component_counts.clone(),
        reconstruction_errors: errors,
        sparsity: cfg.sparsity,
        iterations,
    })
}

/// Learns a single `atoms`-atom dictionary from L2-normalized copies of
/// `train_maps`, starting from the first `atoms` maps.
pub fn learn_dictionary<T: Scalar>(train_maps: &[Vec<T>], atoms: usize, cfg: &ComplexityConfig) -> Result<Dictionary<T>> {
    if atoms == 0 || atoms > train_maps.len() {
        return Err(Error::InsufficientSamples(format!(
            "{atoms} atoms requested from {} training maps",
            train_maps.len()
        )));
    }
    let dim = train_maps[0].len();
    let train = Dictionary::new(dim, train_maps.to_vec())
        .map_err(|e| Error::InsufficientSamples(e.to_string()))?
        .atoms;
    let mut dict = Dictionary { dim, atoms: train[..atoms].to_vec() };
    refine(&mut dict, 0, &train, cfg);
    Ok(dict)
}

/// Alternates pursuit coding of the training maps with a least-squares
/// update of atoms `frozen..`. Returns the number of rounds run.
fn refine<T: Scalar>(dict: &mut Dictionary<T>, frozen: usize, train: &[Vec<T>], cfg: &ComplexityConfig) -> usize {
    let dim = dict.dim;
    let mut prev_err: Option<T> = None;
    for round in 1..=cfg.max_iters {
        let codes: Vec<SparseCode<T>> = train.iter().map(|x| omp(dict, x, cfg.sparsity)).collect();
        let err = crate::scalar::ordered_sum(codes.iter().map(SparseCode::residual_sq));
        if let Some(p) = prev_err {
            if (p - err).abs() <= T::lit(cfg.rel_tol) * p {
                return round;
            }
        }
        prev_err = Some(err);

        // atoms being learned that some code actually uses
        let used: Vec<usize> = (frozen..dict.len())
            .filter(|a| codes.iter().any(|c| c.support.contains(a)))
            .collect();
        if used.is_empty() {
            return round;
        }
        let m = used.len();
        let slot = |atom: usize| used.iter().position(|&u| u == atom);

        // target for the learned atoms: data minus everything else in the code
        let mut gram = vec![T::zero(); m * m];
        let mut cross = vec![T::zero(); dim * m];
        for (x, code) in train.iter().zip(&codes) {
            let mut target = x.clone();
            let mut own: Vec<(usize, T)> = Vec::new();
            for (&a, &c) in code.support.iter().zip(&code.coefficients) {
                match slot(a) {
                    Some(s) => own.push((s, c)),
                    None => {
                        for (t, &d) in target.iter_mut().zip(&dict.atoms[a]) {
                            *t = *t - c * d;
                        }
                    }
                }
            }
            for &(i, ci) in &own {
                for &(j, cj) in &own {
                    gram[i * m + j] = gram[i * m + j] + ci * cj;
                }
                for (d, &t) in target.iter().enumerate() {
                    cross[d * m + i] = cross[d * m + i] + t * ci;
                }
            }
        }
        let trace = (0..m).map(|i| gram[i * m + i]).fold(T::zero(), |s, v| s + v);
        let ridge = trace * T::epsilon() * T::lit(m as f64);
        for i in 0..m {
            gram[i * m + i] = gram[i * m + i] + ridge;
        }
        let Some(chol) = Cholesky::factor(&gram, m) else {
            return round;
        };
        let mut updated = vec![vec![T::zero(); dim]; m];
        for d in 0..dim {
            let row = chol.solve(&cross[d * m..(d + 1) * m]);
            for (i, v) in row.into_iter().enumerate() {
                updated[i][d] = v;
            }
        }
        for (&atom, new) in used.iter().zip(updated) {
            if let Some(a) = unit(new) {
                dict.atoms[atom] = a;
            }
        }
    }
    cfg.max_iters
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vecs(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn omp_recovers_single_atom() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dict = Dictionary::new(16, random_vecs(&mut rng, 8, 16)).unwrap();
        let x: Vec<f64> = dict.atoms()[5].iter().map(|v| 3.0 * v).collect();
        let code = omp(&dict, &x, 5);
        assert_eq!(code.support, vec![5]);
        assert!((code.coefficients[0] - 3.0).abs() < 1e-12);
        assert!(code.residual_sq().sqrt() <= 1e-10);
    }

    #[test]
    fn omp_full_support_is_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let atoms = random_vecs(&mut rng, 3, 6);
        let dict = Dictionary::new(6, atoms).unwrap();
        let x: Vec<f64> = (0..6).map(|i| (i as f64).sin()).collect();
        let code = omp(&dict, &x, 3);
        // residual of a least-squares fit is orthogonal to every atom
        for a in dict.atoms() {
            assert!(dot(&code.residual, a).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let maps = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let e = dictionary_complexity(&maps, &maps, &ComplexityConfig::new(vec![3]));
        assert!(matches!(e, Err(Error::InsufficientSamples(_))));
        let e = dictionary_complexity(&maps, &maps, &ComplexityConfig::new(vec![2, 1]));
        assert!(matches!(e, Err(Error::InvalidConfig(_))));
        let e = dictionary_complexity(&maps, &[vec![0.0, 0.0]], &ComplexityConfig::new(vec![1]));
        assert!(matches!(e, Err(Error::InsufficientSamples(_))));
        let e = dictionary_complexity::<f64>(&[], &maps, &ComplexityConfig::new(vec![1]));
        assert!(matches!(e, Err(Error::InsufficientSamples(_))));
    }

    #[test]
    fn exact_copies_reconstruct() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let train = random_vecs(&mut rng, 10, 12);
        let cfg = ComplexityConfig::new(vec![4]);
        let dict = learn_dictionary(&train, 4, &cfg).unwrap();
        for atom in dict.atoms() {
            let x: Vec<f64> = atom.iter().map(|v| -2.0 * v).collect();
            assert!(omp(&dict, &x, 1).residual_sq() <= 1e-16);
        }
    }
}
