//! Embedding quality: linear SVM accuracy and Cohen's kappa on a held-out
//! split, leave-one-out kNN accuracy, and a PCA baseline.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{stratified_split, Split};
use crate::error::{param, shape, Result};
use crate::scalar::{squared_distance, Scalar};

/// Settings for the one-vs-rest linear SVM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmConfig {
    /// L2 regularization strength; 0 trains an unregularized hinge model.
    pub c: f64,
    pub epochs: usize,
    /// Initial step size of the decaying schedule.
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1e-3,
            epochs: 60,
            learning_rate: 0.1,
            seed: 0,
        }
    }
}

/// One-vs-rest linear classifier over standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm<T> {
    mean: Array1<T>,
    scale: Array1<T>,
    /// One row of weights per class.
    weights: Array2<T>,
    bias: Array1<T>,
    pub warnings: Vec<String>,
}

impl<T: Scalar> LinearSvm<T> {
    pub fn classes(&self) -> usize {
        self.weights.nrows()
    }

    /// Per-class decision values.
    pub fn decision(&self, x: ArrayView2<T>) -> Array2<T> {
        let z = (&x - &self.mean) / &self.scale;
        z.dot(&self.weights.t()) + &self.bias
    }

    /// Highest-scoring class per row; ties go to the smaller class id.
    pub fn predict(&self, x: ArrayView2<T>) -> Vec<usize> {
        self.decision(x)
            .outer_iter()
            .map(|row| {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

/// Trains one binary hinge-loss classifier per class on the rows selected by
/// `train_mask`, by stochastic subgradient descent on
/// `(c/2)‖w‖² + mean(max(0, 1 − y(w·x + b)))`. All binary problems share the
/// same seeded visiting order, and the returned weights average the iterates
/// of the second half of training.
pub fn linear_svm_train<T: Scalar>(
    x: ArrayView2<T>,
    labels: &[usize],
    train_mask: &[bool],
    config: &SvmConfig,
) -> Result<LinearSvm<T>> {
    if labels.len() != x.nrows() || train_mask.len() != x.nrows() {
        return Err(shape("labels and mask must match the number of rows"));
    }
    if !(config.c >= 0.0) || config.epochs == 0 || !(config.learning_rate > 0.0) {
        return Err(param("invalid SVM settings"));
    }
    let rows: Vec<usize> = (0..x.nrows()).filter(|&i| train_mask[i]).collect();
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let present = {
        let mut seen = vec![false; classes];
        rows.iter().for_each(|&i| seen[labels[i]] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if present < 2 {
        return Err(param("SVM training split must contain at least 2 classes"));
    }
    let mut warnings = Vec::new();
    if config.c == 0.0 {
        warnings.push("c = 0: training an unregularized hinge model".to_owned());
    }

    let train = x.select(Axis(0), &rows);
    let nf = T::from_count(rows.len());
    let mean = train.sum_axis(Axis(0)) / nf;
    let var = (&train - &mean).mapv(|v| v * v).sum_axis(Axis(0)) / nf;
    let scale = var.mapv(|v| if v > T::lit(1e-24) { v.sqrt() } else { T::one() });
    let z = (&train - &mean) / &scale;
    let y: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();

    let d = x.ncols();
    let n = rows.len();
    let lam = T::lit(config.c);
    let eta0 = T::lit(config.learning_rate);
    let mut weights = Array2::zeros((classes, d));
    let mut bias = Array1::zeros(classes);
    let mut avg_w: Array2<T> = Array2::zeros((classes, d));
    let mut avg_b: Array1<T> = Array1::zeros(classes);
    let mut averaged = 0usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut t = 0usize;
    let avg_from = config.epochs / 2;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = eta0 / (T::one() + T::from_count(t) / T::from_count(n)).sqrt();
            let zi = z.row(i);
            for k in 0..classes {
                let target = if y[i] == k { T::one() } else { -T::one() };
                let mut w = weights.row_mut(k);
                let margin = target * (w.dot(&zi) + bias[k]);
                if lam > T::zero() {
                    w *= T::one() - eta * lam;
                }
                if margin < T::one() {
                    w.scaled_add(eta * target, &zi);
                    bias[k] += eta * target;
                }
            }
        }
        if epoch >= avg_from {
            avg_w += &weights;
            avg_b += &bias;
            averaged += 1;
        }
    }
    let count = T::from_count(averaged.max(1));
    Ok(LinearSvm {
        mean,
        scale,
        weights: avg_w / count,
        bias: avg_b / count,
        warnings,
    })
}

/// Serialized evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub kappa: f64,
    /// Recall per class on the test split; `None` for classes without test
    /// samples.
    pub per_class: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub split: SplitDescriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDescriptor {
    pub train_fraction: f64,
    pub seed: u64,
    pub train: usize,
    pub test: usize,
}

/// `(p_o − p_e) / (1 − p_e)` with `p_e` from the products of the marginals.
/// A degenerate `p_e = 1` yields 1 for perfect agreement and 0 otherwise.
pub fn cohen_kappa(confusion: &[Vec<usize>]) -> f64 {
    let total: usize = confusion.iter().flatten().sum();
    if total == 0 {
        return 0.0;
    }
    let tf = total as f64;
    let k = confusion.len();
    let diag: usize = (0..k).map(|i| confusion[i][i]).sum();
    let po = diag as f64 / tf;
    let pe: f64 = (0..k)
        .map(|c| {
            let row: usize = confusion[c].iter().sum();
            let col: usize = confusion.iter().map(|r| r[c]).sum();
            (row as f64 / tf) * (col as f64 / tf)
        })
        .sum();
    if (1.0 - pe).abs() < 1e-15 {
        return if po == 1.0 { 1.0 } else { 0.0 };
    }
    (po - pe) / (1.0 - pe)
}

/// Builds a report from true and predicted classes.
pub fn report_from_predictions(
    truth: &[usize],
    predicted: &[usize],
    classes: usize,
    split: SplitDescriptor,
) -> EvalReport {
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        confusion[t][p] += 1;
    }
    let total = truth.len().max(1) as f64;
    let diag: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let per_class = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[c] as f64 / n as f64)
        })
        .collect();
    EvalReport {
        accuracy: diag as f64 / total,
        kappa: cohen_kappa(&confusion),
        per_class,
        confusion,
        split,
    }
}

/// Stratified seeded split, SVM fit on the training side, report on the test
/// side. Unlabelled samples are ignored.
pub fn evaluate<T: Scalar>(
    embeddings: ArrayView2<T>,
    labels: &[Option<usize>],
    train_fraction: f64,
    seed: u64,
) -> Result<EvalReport> {
    let split = stratified_split(labels, train_fraction, seed)?;
    let svm = SvmConfig {
        seed,
        ..SvmConfig::default()
    };
    evaluate_split(embeddings, labels, &split, train_fraction, &svm)
}

/// [`evaluate`] with a caller-provided split and SVM settings.
pub fn evaluate_split<T: Scalar>(
    embeddings: ArrayView2<T>,
    labels: &[Option<usize>],
    split: &Split,
    train_fraction: f64,
    svm: &SvmConfig,
) -> Result<EvalReport> {
    if labels.len() != embeddings.nrows() {
        return Err(shape("labels and embeddings differ in length"));
    }
    let classes = labels.iter().flatten().map(|&c| c + 1).max().unwrap_or(0);
    let dense: Vec<usize> = labels.iter().map(|l| l.unwrap_or(0)).collect();
    let mut mask = vec![false; labels.len()];
    for &i in &split.train {
        if labels[i].is_none() {
            return Err(param(format!("training sample {i} is unlabelled")));
        }
        mask[i] = true;
    }
    let model = linear_svm_train(embeddings, &dense, &mask, svm)?;
    let test = embeddings.select(Axis(0), &split.test);
    let predicted = model.predict(test.view());
    let truth: Vec<usize> = split.test.iter().map(|&i| dense[i]).collect();
    Ok(report_from_predictions(
        &truth,
        &predicted,
        classes,
        SplitDescriptor {
            train_fraction,
            seed: svm.seed,
            train: split.train.len(),
            test: split.test.len(),
        },
    ))
}

/// Leave-one-out k-nearest-neighbor accuracy. Neighbors are ordered by
/// distance then index; the vote goes to the most frequent class, ties to
/// the smaller class id.
pub fn knn_classify_accuracy<T: Scalar>(embeddings: ArrayView2<T>, labels: &[usize], k: usize) -> Result<f64> {
    let n = embeddings.nrows();
    if labels.len() != n {
        return Err(shape("labels and embeddings differ in length"));
    }
    if k < 1 || k >= n {
        return Err(param(format!("k must satisfy 1 <= k < n (k = {k}, n = {n})")));
    }
    let rows: Vec<Vec<T>> = embeddings.outer_iter().map(|r| r.to_vec()).collect();
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut correct = 0;
    let mut cand: Vec<(T, usize)> = Vec::with_capacity(n);
    let mut votes = vec![0usize; classes];
    for i in 0..n {
        cand.clear();
        cand.extend((0..n).filter(|&j| j != i).map(|j| (squared_distance(&rows[i], &rows[j]), j)));
        cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
        votes.fill(0);
        for &(_, j) in &cand[..k] {
            votes[labels[j]] += 1;
        }
        let mut best = 0;
        for c in 1..classes {
            if votes[c] > votes[best] {
                best = c;
            }
        }
        if best == labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / n as f64)
}

/// Principal axes of a centered data matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca<T> {
    pub mean: Array1<T>,
    /// `d × e`, orthonormal columns ordered by decreasing variance.
    pub components: Array2<T>,
    pub variances: Vec<T>,
}

impl<T: Scalar> Pca<T> {
    /// Top-`e` eigenvectors of the population covariance by orthogonal
    /// iteration with a final Rayleigh–Ritz rotation. Each component is
    /// signed so its largest-magnitude loading is positive.
    pub fn fit(x: ArrayView2<T>, e: usize) -> Result<Self> {
        let (n, d) = x.dim();
        if e < 1 || e > d {
            return Err(param(format!("target dimension {e} must lie in 1..={d}")));
        }
        if n < 1 {
            return Err(shape("PCA needs at least one sample"));
        }
        let mean = x.sum_axis(Axis(0)) / T::from_count(n);
        let xc = &x - &mean;
        let cov = xc.t().dot(&xc) / T::from_count(n);

        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut q = Array2::from_shape_simple_fn((d, e), || T::lit(rng.sample::<f64, _>(StandardNormal)));
        orthonormalize(&mut q);
        let tol = T::lit(1e-13);
        for _ in 0..5000 {
            let mut next = cov.dot(&q);
            orthonormalize(&mut next);
            // residual of projecting the new basis onto the old subspace
            let proj = q.dot(&q.t().dot(&next));
            let delta = (&next - &proj).iter().fold(T::zero(), |a, &v| a.max(v.abs()));
            q = next;
            if delta < tol {
                break;
            }
        }
        let small = q.t().dot(&cov).dot(&q);
        let (vals, vecs) = symmetric_eigen(&small);
        let mut order: Vec<usize> = (0..e).collect();
        order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
        let rotated = q.dot(&vecs);
        let mut components = Array2::zeros((d, e));
        let mut variances = Vec::with_capacity(e);
        for (dst, &src) in order.iter().enumerate() {
            let mut col = rotated.column(src).to_owned();
            let lead = col
                .iter()
                .enumerate()
                .fold(0, |b, (i, v)| if v.abs() > col[b].abs() { i } else { b });
            if col[lead] < T::zero() {
                col.mapv_inplace(|v| -v);
            }
            components.column_mut(dst).assign(&col);
            variances.push(vals[src].max(T::zero()));
        }
        Ok(Self {
            mean,
            components,
            variances,
        })
    }

    pub fn transform(&self, x: ArrayView2<T>) -> Array2<T> {
        (&x - &self.mean).dot(&self.components)
    }
}

/// Projection onto the top `e` principal components.
pub fn pca_project<T: Scalar>(x: ArrayView2<T>, e: usize) -> Result<Array2<T>> {
    Ok(Pca::fit(x, e)?.transform(x))
}

/// Modified Gram–Schmidt, applied twice. Columns that vanish are replaced by
/// the standard basis vector with the largest residual.
fn orthonormalize<T: Scalar>(q: &mut Array2<T>) {
    let (d, e) = q.dim();
    for _pass in 0..2 {
        for j in 0..e {
            for i in 0..j {
                let (qi, mut qj) = (q.column(i).to_owned(), q.column_mut(j));
                let r = qi.dot(&qj);
                qj.scaled_add(-r, &qi);
            }
            let norm = q.column(j).dot(&q.column(j)).sqrt();
            if norm > T::lit(1e-150) && norm.is_finite() {
                q.column_mut(j).mapv_inplace(|v| v / norm);
                continue;
            }
            // replacement from the standard basis
            let mut best: Option<(T, Array1<T>)> = None;
            for b in 0..d {
                let mut v = Array1::zeros(d);
                v[b] = T::one();
                for i in 0..j {
                    let qi = q.column(i);
                    let r = qi.dot(&v);
                    v.scaled_add(-r, &qi);
                }
                let nv = v.dot(&v).sqrt();
                if best.as_ref().is_none_or(|(bn, _)| nv > *bn) {
                    best = Some((nv, v));
                }
            }
            let (nv, v) = best.expect("d >= 1");
            q.column_mut(j).assign(&(v / nv));
        }
    }
}

/// Cyclic Jacobi eigen-decomposition of a small symmetric matrix. Returns
/// eigenvalues and eigenvectors as columns.
fn symmetric_eigen<T: Scalar>(a: &Array2<T>) -> (Vec<T>, Array2<T>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Array2::eye(n);
    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]] * m[[i, j]])
            .sum();
        let scale: T = m.iter().map(|&x| x * x).sum();
        if off <= T::lit(1e-30) * scale || off == T::zero() {
            break;
        }
        for p in 0..n {
            for r in (p + 1)..n {
                let apr = m[[p, r]];
                if apr == T::zero() {
                    continue;
                }
                let theta = (m[[r, r]] - m[[p, p]]) / (T::lit(2.0) * apr);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkr) = (m[[k, p]], m[[k, r]]);
                    m[[k, p]] = c * mkp - s * mkr;
                    m[[k, r]] = s * mkp + c * mkr;
                }
                for k in 0..n {
                    let (mpk, mrk) = (m[[p, k]], m[[r, k]]);
                    m[[p, k]] = c * mpk - s * mrk;
                    m[[r, k]] = s * mpk + c * mrk;
                }
                for k in 0..n {
                    let (vkp, vkr) = (v[[k, p]], v[[k, r]]);
                    v[[k, p]] = c * vkp - s * vkr;
                    v[[k, r]] = s * vkp + c * vkr;
                }
            }
        }
    }
    ((0..n).map(|i| m[[i, i]]).collect(), v)
}

/// Convenience: the split used by [`evaluate`], exposed so callers can keep
/// test samples out of embedding training.
pub fn evaluation_split(labels: &[Option<usize>], train_fraction: f64, seed: u64) -> Result<Split> {
    stratified_split(labels, train_fraction, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn two_clouds() -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, cx) in [(0usize, -1.0f64), (1, 1.0)] {
            for _ in 0..40 {
                let jitter: f64 = rng.gen_range(-0.4..0.4);
                let y: f64 = rng.gen_range(-3.0..3.0);
                rows.extend([cx * (1.0 + jitter.abs()), y]);
                labels.push(c);
            }
        }
        (Array2::from_shape_vec((80, 2), rows).unwrap(), labels)
    }

    #[test]
    fn separable_clouds_are_fit_perfectly() {
        let (x, y) = two_clouds();
        let svm = linear_svm_train(x.view(), &y, &[true; 80], &SvmConfig::default()).unwrap();
        assert_eq!(svm.predict(x.view()), y);
    }

    #[test]
    fn flipping_labels_flips_predictions() {
        let (x, y) = two_clouds();
        let flipped: Vec<usize> = y.iter().map(|&c| 1 - c).collect();
        let mask = vec![true; 80];
        let a = linear_svm_train(x.view(), &y, &mask, &SvmConfig::default()).unwrap();
        let b = linear_svm_train(x.view(), &flipped, &mask, &SvmConfig::default()).unwrap();
        let pa = a.predict(x.view());
        let pb = b.predict(x.view());
        assert!(pa.iter().zip(&pb).all(|(&u, &v)| u == 1 - v));
    }

    #[test]
    fn unregularized_svm_warns_and_single_class_fails() {
        let (x, y) = two_clouds();
        let cfg = SvmConfig { c: 0.0, ..SvmConfig::default() };
        let svm = linear_svm_train(x.view(), &y, &[true; 80], &cfg).unwrap();
        assert_eq!(svm.warnings.len(), 1);
        let mask: Vec<bool> = y.iter().map(|&c| c == 0).collect();
        assert!(linear_svm_train(x.view(), &y, &mask, &cfg).is_err());
    }

    #[test]
    fn kappa_examples() {
        assert_abs_diff_eq!(cohen_kappa(&[vec![1, 1], vec![1, 1]]), 0.0);
        assert_abs_diff_eq!(cohen_kappa(&[vec![5, 0], vec![0, 3]]), 1.0);
        let r = report_from_predictions(
            &[0, 0, 1, 1],
            &[0, 1, 0, 1],
            2,
            SplitDescriptor { train_fraction: 0.5, seed: 0, train: 4, test: 4 },
        );
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.kappa, 0.0);
        assert_eq!(r.confusion, vec![vec![1, 1], vec![1, 1]]);
    }

    #[test]
    fn chance_predictions_have_near_zero_kappa() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth: Vec<usize> = (0..20_000).map(|i| i % 2).collect();
        let pred: Vec<usize> = (0..20_000).map(|_| rng.gen_range(0..2)).collect();
        let r = report_from_predictions(&truth, &pred, 2, SplitDescriptor { train_fraction: 0.5, seed: 0, train: 0, test: 0 });
        assert!(r.kappa.abs() < 0.03, "kappa {}", r.kappa);
    }

    #[test]
    fn evaluate_perfect_separation() {
        let (x, y) = two_clouds();
        let labels: Vec<Option<usize>> = y.iter().map(|&c| Some(c)).collect();
        let r = evaluate(x.view(), &labels, 0.7, 3).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.kappa, 1.0);
        assert_eq!(r.split.train + r.split.test, 80);
        assert_eq!(r, evaluate(x.view(), &labels, 0.7, 3).unwrap());
        let lonely = [Some(0), Some(0), Some(1)];
        assert!(evaluate(array![[0.0], [1.0], [2.0]].view(), &lonely, 0.5, 0).is_err());
    }

    #[test]
    fn knn_examples() {
        let x = array![[0.0], [0.0], [5.0], [5.0], [9.0], [9.0]];
        assert_eq!(knn_classify_accuracy(x.view(), &[0, 0, 1, 1, 2, 2], 1).unwrap(), 1.0);
        // identical points, index tie-break: 0→1, 1→0, 2→0, 3→0
        let same = array![[1.0], [1.0], [1.0], [1.0]];
        let acc = knn_classify_accuracy(same.view(), &[0, 1, 1, 0], 1).unwrap();
        // 0 sees 1 (class 1, wrong); 1 sees 0 (wrong); 2 sees 0 (wrong); 3 sees 0 (right)
        assert_eq!(acc, 0.25);
        // k = n−1 on balanced classes: each sample sees the other class in the
        // majority, so the vote is always wrong
        let bal = array![[0.0], [1.0], [2.0], [3.0]];
        assert_eq!(knn_classify_accuracy(bal.view(), &[0, 0, 1, 1], 3).unwrap(), 0.0);
        assert!(knn_classify_accuracy(bal.view(), &[0, 0, 1, 1], 4).is_err());
    }

    #[test]
    fn pca_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_simple_fn((200, 2), || rng.sample::<f64, _>(StandardNormal));
        let y = pca_project(x.view(), 2).unwrap();
        let var = |m: &Array2<f64>| {
            let c = m - &m.mean_axis(Axis(0)).unwrap();
            c.mapv(|v| v * v).sum() / m.nrows() as f64
        };
        assert_abs_diff_eq!(var(&x), var(&y), epsilon = 1e-9);

        let t: Vec<f64> = (0..30).map(|i| i as f64 * 0.37 - 4.0).collect();
        let line = Array2::from_shape_fn((30, 3), |(i, j)| t[i] * [1.0, -2.0, 0.5][j] + 3.0);
        let p = pca_project(line.view(), 1).unwrap();
        for i in 0..30 {
            for j in 0..30 {
                let dx = squared_distance(line.row(i).as_slice().unwrap(), line.row(j).as_slice().unwrap()).sqrt();
                assert_abs_diff_eq!(dx, (p[[i, 0]] - p[[j, 0]]).abs(), epsilon = 1e-9);
            }
        }
        let pca = Pca::fit(line.view(), 3).unwrap();
        let gram = pca.components.t().dot(&pca.components);
        for ((i, j), &v) in gram.indexed_iter() {
            assert_abs_diff_eq!(v, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-9);
        }
        assert!(pca_project(line.view(), 4).is_err());
    }
}
