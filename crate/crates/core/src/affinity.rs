//! Conditional neighbor probabilities in input and embedding space.
//!
//! Input-space rows use a Gaussian kernel whose bandwidth is calibrated per
//! anchor to a perplexity target; the compression factor then shifts mass
//! toward adjacency-connected samples. Embedding-space rows use a Student-t
//! kernel with one degree of freedom. All rows are conditional (normalized per
//! anchor, never symmetrized).

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{param, shape, Error, Result};
use crate::graph::SparseAdjacency;
use crate::scalar::{squared_distance, Scalar};

/// Lower bound applied to every off-diagonal probability.
pub const PROB_FLOOR: f64 = 1e-12;

/// Acceptable absolute perplexity error for a calibrated row.
pub const PERPLEXITY_TOL: f64 = 1e-3;

const SIGMA_MIN: f64 = 1e-20;
const SIGMA_MAX: f64 = 1e20;
const MAX_BISECTIONS: usize = 100;

/// Outcome of a bandwidth search for one anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaCalibration<T> {
    pub sigma: T,
    /// Perplexity reached at `sigma`.
    pub perplexity: T,
    /// `false` when the target could not be met within tolerance; `sigma` is
    /// then the best value found.
    pub converged: bool,
}

/// One anchor's probability row.
#[derive(Debug, Clone, Copy)]
pub struct AffinityRow<'a, T> {
    pub anchor: usize,
    pub probs: ArrayView1<'a, T>,
    pub sigma: Option<T>,
}

/// Per-anchor conditional probabilities for a batch, stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityRows<T> {
    probs: Array2<T>,
    sigmas: Option<Vec<T>>,
    unconverged: usize,
}

impl<T: Scalar> AffinityRows<T> {
    /// Wraps a square row-stochastic matrix with zero diagonal.
    pub fn from_probs(probs: Array2<T>) -> Result<Self> {
        let m = probs.nrows();
        if probs.ncols() != m {
            return Err(shape("affinity matrix must be square"));
        }
        for (i, row) in probs.outer_iter().enumerate() {
            if row[i] != T::zero() {
                return Err(param(format!("anchor entry of row {i} is not zero")));
            }
            if row.iter().any(|&p| !(p >= T::zero())) {
                return Err(param(format!("row {i} has a negative or NaN entry")));
            }
            let s = row.sum();
            if m > 1 && (s - T::one()).abs() > T::lit(1e-9) {
                return Err(param(format!("row {i} sums to {s}, not 1")));
            }
        }
        Ok(Self {
            probs,
            sigmas: None,
            unconverged: 0,
        })
    }

    pub fn m(&self) -> usize {
        self.probs.nrows()
    }

    pub fn probs(&self) -> &Array2<T> {
        &self.probs
    }

    pub fn row(&self, i: usize) -> AffinityRow<'_, T> {
        AffinityRow {
            anchor: i,
            probs: self.probs.row(i),
            sigma: self.sigmas.as_ref().map(|s| s[i]),
        }
    }

    pub fn sigmas(&self) -> Option<&[T]> {
        self.sigmas.as_deref()
    }

    /// Number of rows whose perplexity target was unattainable.
    pub fn unconverged(&self) -> usize {
        self.unconverged
    }
}

/// Gaussian conditional row over candidate distances for bandwidth `sigma`.
/// Distances are shifted by their minimum so the nearest candidate keeps
/// weight 1 for any bandwidth.
fn gaussian_row<T: Scalar>(dist_sq: &[T], dmin: T, sigma: T, out: &mut [T]) {
    let two_var = T::lit(2.0) * sigma * sigma;
    let mut z = T::zero();
    for (o, &d) in out.iter_mut().zip(dist_sq) {
        let shifted = d - dmin;
        *o = if shifted <= T::zero() {
            T::one()
        } else {
            (-shifted / two_var).exp()
        };
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

/// `2^H` with `H` the Shannon entropy in bits, computed as `exp(H_nats)`.
fn perplexity_of<T: Scalar>(p: &[T]) -> T {
    let h: T = p
        .iter()
        .filter(|&&v| v > T::zero())
        .map(|&v| -v * v.ln())
        .sum();
    h.exp()
}

/// Bisection on `ln σ` over `[1e-20, 1e20]` until the row's perplexity is
/// within tolerance of `perplexity`.
///
/// `dist_sq` holds squared distances from the anchor to each candidate (the
/// anchor itself excluded). Perplexity grows monotonically with σ, from 1 (or
/// the count of tied nearest candidates) up to `dist_sq.len()`.
pub fn calibrate_sigma<T: Scalar>(dist_sq: &[T], perplexity: T) -> Result<SigmaCalibration<T>> {
    if dist_sq.len() < 2 {
        return Err(param("sigma calibration needs at least 2 candidates"));
    }
    if !(perplexity > T::one()) {
        return Err(param(format!("perplexity must exceed 1, got {perplexity}")));
    }
    if dist_sq.iter().any(|&d| !(d >= T::zero()) || !d.is_finite()) {
        return Err(param("distances must be finite and non-negative"));
    }
    if dist_sq.iter().all(|&d| d == T::zero()) {
        return Err(Error::Degenerate("all candidate distances are zero".into()));
    }
    let dmin = dist_sq.iter().copied().fold(T::infinity(), T::min);
    let mut p = vec![T::zero(); dist_sq.len()];
    let (mut lo, mut hi) = (T::lit(SIGMA_MIN).ln(), T::lit(SIGMA_MAX).ln());
    let mut best: Option<(T, T, T)> = None; // (error, sigma, perplexity)
    let inner_tol = T::lit(PERPLEXITY_TOL * 1e-3);

    for _ in 0..MAX_BISECTIONS {
        let mid = (lo + hi) / T::lit(2.0);
        let sigma = mid.exp();
        gaussian_row(dist_sq, dmin, sigma, &mut p);
        let perp = perplexity_of(&p);
        let err = (perp - perplexity).abs();
        if best.is_none_or(|(e, _, _)| err < e) {
            best = Some((err, sigma, perp));
        }
        if err <= inner_tol {
            break;
        }
        if perp > perplexity {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (err, sigma, perp) = best.expect("at least one bisection step");
    Ok(SigmaCalibration {
        sigma,
        perplexity: perp,
        converged: err <= T::lit(PERPLEXITY_TOL),
    })
}

/// Dense squared Euclidean distance matrix between rows.
pub fn pairwise_sq_distances<T: Scalar>(x: ArrayView2<T>) -> Array2<T> {
    let m = x.nrows();
    let rows: Vec<Vec<T>> = x.outer_iter().map(|r| r.to_vec()).collect();
    let mut d = Array2::zeros((m, m));
    for i in 0..m {
        for j in (i + 1)..m {
            let v = squared_distance(&rows[i], &rows[j]);
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Raises every off-diagonal entry to [`PROB_FLOOR`] and renormalizes rows
/// that changed.
pub fn apply_floor<T: Scalar>(probs: &mut Array2<T>) {
    let floor = T::lit(PROB_FLOOR);
    for (i, mut row) in probs.outer_iter_mut().enumerate() {
        let mut changed = false;
        for (j, p) in row.iter_mut().enumerate() {
            if j != i && *p < floor {
                *p = floor;
                changed = true;
            }
        }
        if changed {
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
    }
}

/// Gaussian conditional probabilities with per-anchor calibrated bandwidth.
///
/// A two-sample batch yields indicator rows; an anchor whose candidates all
/// coincide with it gets a uniform row.
pub fn conditional_p<T: Scalar>(x: ArrayView2<T>, perplexity: T) -> Result<AffinityRows<T>> {
    let m = x.nrows();
    if m < 2 {
        return Err(param("conditional probabilities need at least 2 samples"));
    }
    if !(perplexity > T::one()) {
        return Err(param(format!("perplexity must exceed 1, got {perplexity}")));
    }
    let dist = pairwise_sq_distances(x);
    let mut probs = Array2::zeros((m, m));
    let mut sigmas = Vec::with_capacity(m);
    let mut unconverged = 0;
    let mut cand = Vec::with_capacity(m - 1);
    let mut row = vec![T::zero(); m - 1];
    for i in 0..m {
        cand.clear();
        cand.extend((0..m).filter(|&j| j != i).map(|j| dist[[i, j]]));
        let sigma = if m == 2 || cand.iter().all(|&d| d == T::zero()) {
            row.fill(T::one() / T::from_count(m - 1));
            T::infinity()
        } else {
            let cal = calibrate_sigma(&cand, perplexity)?;
            if !cal.converged {
                unconverged += 1;
            }
            let dmin = cand.iter().copied().fold(T::infinity(), T::min);
            gaussian_row(&cand, dmin, cal.sigma, &mut row);
            cal.sigma
        };
        let mut out = probs.row_mut(i);
        for (slot, &v) in (0..m).filter(|&j| j != i).zip(&row) {
            out[slot] = v;
        }
        sigmas.push(sigma);
    }
    apply_floor(&mut probs);
    Ok(AffinityRows {
        probs,
        sigmas: Some(sigmas),
        unconverged,
    })
}

/// Compression-factor reweighting: multiply each entry whose pair is adjacent
/// by `cf`, then renormalize the row. `cf = 1` returns the input unchanged.
pub fn compress<T: Scalar>(rows: &AffinityRows<T>, adj: &SparseAdjacency, cf: T) -> Result<AffinityRows<T>> {
    if !(cf >= T::one()) {
        return Err(param(format!("compression factor must be >= 1, got {cf}")));
    }
    let m = rows.m();
    if adj.n() != m {
        return Err(shape(format!(
            "adjacency has {} nodes, affinity batch has {m}",
            adj.n()
        )));
    }
    if cf == T::one() {
        return Ok(rows.clone());
    }
    let boost = cf - T::one();
    let mut probs = rows.probs.clone();
    for (i, mut row) in probs.outer_iter_mut().enumerate() {
        for j in adj.neighbors(i) {
            row[j] *= boost + T::one();
        }
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    apply_floor(&mut probs);
    Ok(AffinityRows {
        probs,
        sigmas: rows.sigmas.clone(),
        unconverged: rows.unconverged,
    })
}

/// Student-t kernel weights `(1 + ‖y_i − y_j‖²)⁻¹` with a zero diagonal.
pub fn student_t_kernel<T: Scalar>(y: ArrayView2<T>) -> Array2<T> {
    let mut w = pairwise_sq_distances(y);
    let m = w.nrows();
    for i in 0..m {
        for j in 0..m {
            w[[i, j]] = if i == j {
                T::zero()
            } else {
                T::one() / (T::one() + w[[i, j]])
            };
        }
    }
    w
}

/// Heavy-tailed conditional probabilities of the embedding.
pub fn conditional_q<T: Scalar>(y: ArrayView2<T>) -> Result<AffinityRows<T>> {
    if y.nrows() < 2 {
        return Err(param("conditional probabilities need at least 2 samples"));
    }
    let w = student_t_kernel(y);
    let sums = w.sum_axis(Axis(1));
    let mut probs = w;
    for (mut row, &s) in probs.outer_iter_mut().zip(sums.iter()) {
        row.mapv_inplace(|v| v / s);
    }
    apply_floor(&mut probs);
    Ok(AffinityRows {
        probs,
        sigmas: None,
        unconverged: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{label_adjacency, AdjacencyMode};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn equidistant_neighbors_are_uniform() {
        let d = [2.0; 5];
        let c = calibrate_sigma(&d, 5.0 - 1e-9).unwrap();
        let mut p = [0.0; 5];
        gaussian_row(&d, 2.0, c.sigma, &mut p);
        for v in p {
            assert_abs_diff_eq!(v, 0.2, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(perplexity_of(&p), 5.0, epsilon = 1e-9);
    }

    #[test]
    fn full_perplexity_goes_to_upper_bracket() {
        let d = [1.0f64, 4.0];
        let c = calibrate_sigma(&d, 2.0).unwrap();
        assert!(c.sigma > 1e3, "sigma = {}", c.sigma);
        let mut p = [0.0f64; 2];
        gaussian_row(&d, 1.0, c.sigma, &mut p);
        assert!((p[0] - 0.5).abs() < 1e-6 && (p[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn low_perplexity_concentrates() {
        // Oracle: with two candidates the row is (a, 1 - a) and the target
        // fixes the binary entropy, so solve exp(H(a)) = 1.2 on a in (0.5, 1).
        let h = |a: f64| -(a * a.ln()) - (1.0 - a) * (1.0 - a).ln();
        let (mut lo, mut hi) = (0.5, 1.0 - 1e-15);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(mid).exp() > 1.2 { lo = mid } else { hi = mid }
        }
        let oracle = 0.5 * (lo + hi);
        assert!(oracle > 0.95 && oracle < 0.96);

        let d = [1.0, 100.0];
        let c = calibrate_sigma(&d, 1.2).unwrap();
        assert!(c.converged);
        let mut p = [0.0; 2];
        gaussian_row(&d, 1.0, c.sigma, &mut p);
        assert_abs_diff_eq!(p[0], oracle, epsilon = 1e-4);
    }

    #[test]
    fn calibration_errors() {
        assert!(matches!(calibrate_sigma(&[0.0, 0.0], 1.5), Err(Error::Degenerate(_))));
        assert!(calibrate_sigma(&[1.0, 2.0], 1.0).is_err());
        assert!(calibrate_sigma(&[1.0], 1.5).is_err());
        // unattainable target: flagged, not an error
        let c = calibrate_sigma(&[1.0, 2.0, 3.0], 7.0).unwrap();
        assert!(!c.converged);
    }

    #[test]
    fn conditional_p_examples() {
        let x = array![[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0]];
        let p = conditional_p(x.view(), 1.5).unwrap();
        assert_eq!(p.probs()[[0, 0]], 0.0);
        assert_abs_diff_eq!(p.probs()[[0, 1]], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.probs()[[0, 2]], 0.5, epsilon = 1e-12);

        let two = conditional_p(array![[0.0], [5.0]].view(), 30.0).unwrap();
        assert_eq!(two.probs(), &array![[0.0, 1.0], [1.0, 0.0]]);

        let line = conditional_p(array![[0.0], [1.0], [3.0]].view(), 1.5).unwrap();
        let r = line.row(0);
        assert!(r.probs[1] > r.probs[2] && r.probs[2] > 0.0);
        assert!(r.sigma.unwrap() > 0.0);

        let same = conditional_p(array![[1.0], [1.0], [1.0], [1.0]].view(), 2.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 0.0 } else { 1.0 / 3.0 };
                assert_abs_diff_eq!(same.probs()[[i, j]], want, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn compress_examples() {
        let rows = AffinityRows::from_probs(array![[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]]).unwrap();
        let adj = SparseAdjacency::from_edges(3, &[(0, 1)], AdjacencyMode::Label).unwrap();
        let c = compress(&rows, &adj, 3.0).unwrap();
        assert_abs_diff_eq!(c.probs()[[0, 1]], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(c.probs()[[0, 2]], 0.25, epsilon = 1e-15);
        // node 2 has no neighbors: unchanged
        assert_eq!(c.probs().row(2), rows.probs().row(2));

        assert_eq!(compress(&rows, &adj, 1.0).unwrap(), rows);
        let full = label_adjacency(&[Some(0); 3]).unwrap();
        let c = compress(&rows, &full, 50.0).unwrap();
        for (a, b) in c.probs().iter().zip(rows.probs().iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        assert!(compress(&rows, &adj, 0.5).is_err());
        let wrong = SparseAdjacency::from_edges(4, &[], AdjacencyMode::Knn).unwrap();
        assert!(compress(&rows, &wrong, 2.0).is_err());
    }

    #[test]
    fn conditional_q_examples() {
        let q = conditional_q(array![[0.0], [0.0], [1.0]].view()).unwrap();
        assert_abs_diff_eq!(q.probs()[[0, 1]], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.probs()[[0, 2]], 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(q.probs()[[0, 0]], 0.0);

        let same = conditional_q(Array2::from_shape_fn((5, 2), |(_, j)| [2.0, 1.0][j]).view()).unwrap();
        assert!(same.probs().indexed_iter().all(|((i, j), &v)| {
            if i == j { v == 0.0 } else { (v - 0.25f64).abs() < 1e-15 }
        }));
        let two = conditional_q(array![[0.0], [3.0]].view()).unwrap();
        assert_eq!(two.probs(), &array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn floor_keeps_rows_stochastic() {
        let mut p = array![[0.0, 1.0, 0.0], [0.5, 0.0, 0.5], [1.0, 0.0, 0.0]];
        apply_floor(&mut p);
        for row in p.outer_iter() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-15);
        }
        assert!(p[[0, 2]] >= 0.999e-12);
    }

    #[test]
    fn f32_path_works() {
        let x = array![[0.0f32, 1.0], [1.0, 0.5], [2.0, 2.0], [0.5, 0.5]];
        let p = conditional_p(x.view(), 2.0f32).unwrap();
        for row in p.probs().outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-5);
        }
    }
}
