use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::linalg::{dot, symmetric_eigen};
use crate::error::{Error, Result};
use crate::io::Dataset;
use crate::network::{Mode, Network};
use crate::tensor::{matmul, Scalar};

/// Row-major `(rows, cols)` matrix of per-sample features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn select_cols(&self, keep: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(self.rows * keep.len());
        for i in 0..self.rows {
            let row = self.row(i);
            data.extend(keep.iter().map(|&c| row[c]));
        }
        FeatureMatrix {
            rows: self.rows,
            cols: keep.len(),
            data,
        }
    }

    fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    fn transpose(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }
}

/// Spatially averaged merged features `Phi_j x` at each tapped depth, eval
/// mode, computed in chunks of `batch` samples.
pub fn extract_features<T: Scalar>(
    net: &Network<T>,
    data: &Dataset<T>,
    taps: &[usize],
    batch: usize,
) -> Result<Vec<FeatureMatrix>> {
    let shapes = net.config().depth_shapes();
    if let Some(&bad) = taps.iter().find(|&&j| j >= shapes.len()) {
        return Err(Error::InvalidArgument(format!(
            "tap depth {bad} exceeds network depth {}",
            net.depth()
        )));
    }
    let mut out: Vec<FeatureMatrix> = taps
        .iter()
        .map(|&j| FeatureMatrix {
            rows: 0,
            cols: shapes[j][0],
            data: Vec::with_capacity(data.len() * shapes[j][0]),
        })
        .collect();
    let batch = batch.max(1);
    for start in (0..data.len()).step_by(batch) {
        let idx: Vec<usize> = (start..(start + batch).min(data.len())).collect();
        let (x, _) = data.batch(&idx);
        let (_, tapped) = net.forward(&x, Mode::Eval, taps)?;
        for (m, t) in out.iter_mut().zip(&tapped) {
            let hw = t.height() * t.width();
            m.data.extend(
                t.data()
                    .chunks(hw)
                    .map(|plane| plane.iter().map(|v| v.as_f64()).sum::<f64>() / hw as f64),
            );
            m.rows += t.batch();
        }
    }
    Ok(out)
}

/// Per-feature affine map fitted on the train split. Features whose train
/// standard deviation is zero are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub keep: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(train: &FeatureMatrix) -> Result<Self> {
        if train.rows == 0 {
            return Err(Error::EmptyInput("standardize"));
        }
        let n = train.rows as f64;
        let (mut keep, mut mean, mut std) = (Vec::new(), Vec::new(), Vec::new());
        for c in 0..train.cols {
            let m = (0..train.rows)
                .map(|i| train.data[i * train.cols + c])
                .sum::<f64>()
                / n;
            let var = (0..train.rows)
                .map(|i| (train.data[i * train.cols + c] - m).powi(2))
                .sum::<f64>()
                / n;
            let s = var.sqrt();
            if s > 1e-12 * m.abs().max(1.0) {
                keep.push(c);
                mean.push(m);
                std.push(s);
            }
        }
        let dropped = train.cols - keep.len();
        if dropped > 0 {
            warn!(
                "standardize: dropped {dropped} of {} features with zero variance",
                train.cols
            );
        }
        if keep.is_empty() {
            return Err(Error::InvalidArgument(
                "every feature has zero variance".into(),
            ));
        }
        Ok(Self { keep, mean, std })
    }

    pub fn apply(&self, f: &FeatureMatrix) -> FeatureMatrix {
        let mut out = f.select_cols(&self.keep);
        for row in out.data.chunks_mut(out.cols) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    /// Candidate l2 strengths; the first best on the held-out fifth wins.
    pub lambdas: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
    /// Samples per forward pass during feature extraction.
    pub batch: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![1e-4, 1e-3, 1e-2, 1e-1],
            iterations: 300,
            seed: 0,
            batch: 100,
        }
    }
}

/// Multinomial logistic regression `softmax(x W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub dim: usize,
    pub classes: usize,
    /// Row-major `(dim, classes)`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearClassifier {
    /// Minimizes mean cross-entropy plus `lambda/2 ||W||^2` by full-batch
    /// accelerated gradient descent with step `1/L` and a function-value
    /// restart of the momentum.
    pub fn fit(
        x: &FeatureMatrix,
        labels: &[usize],
        classes: usize,
        lambda: f64,
        iterations: usize,
    ) -> Self {
        let (n, d, k) = (x.rows, x.cols, classes);
        let xt = x.transpose();
        let lipschitz = 0.5 * (top_eigen_gram(x, &xt) + n as f64) / n as f64 + lambda;
        let step = 1.0 / lipschitz;
        let objective_and_grad = |w: &[f64], b: &[f64]| -> (f64, Vec<f64>, Vec<f64>) {
            let mut logits = matmul(n, d, k, &x.data, w);
            let mut loss = 0.0;
            for (row, &y) in logits.chunks_mut(k).zip(labels) {
                row.iter_mut().zip(b).for_each(|(z, bb)| *z += bb);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
                loss += z.ln() + max - row[y];
                for (c, v) in row.iter_mut().enumerate() {
                    *v = ((*v - max).exp() / z - if c == y { 1.0 } else { 0.0 }) / n as f64;
                }
            }
            let mut gw = matmul(d, n, k, &xt, &logits);
            gw.iter_mut().zip(w).for_each(|(g, wv)| *g += lambda * wv);
            let mut gb = vec![0.0; k];
            for row in logits.chunks(k) {
                gb.iter_mut().zip(row).for_each(|(g, r)| *g += r);
            }
            let reg = 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
            (loss / n as f64 + reg, gw, gb)
        };
        let (mut w, mut b) = (vec![0.0; d * k], vec![0.0; k]);
        let (mut yw, mut yb) = (w.clone(), b.clone());
        let mut theta = 1.0f64;
        let mut last = f64::INFINITY;
        for _ in 0..iterations {
            let (f_y, gw, gb) = objective_and_grad(&yw, &yb);
            let nw: Vec<f64> = yw.iter().zip(&gw).map(|(v, g)| v - step * g).collect();
            let nb: Vec<f64> = yb.iter().zip(&gb).map(|(v, g)| v - step * g).collect();
            if f_y > last {
                // restart: drop the momentum and step from the last iterate
                theta = 1.0;
                yw = w.clone();
                yb = b.clone();
                last = f64::INFINITY;
                continue;
            }
            last = f_y;
            let next_theta = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            let beta = (theta - 1.0) / next_theta;
            yw = nw.iter().zip(&w).map(|(a, p)| a + beta * (a - p)).collect();
            yb = nb.iter().zip(&b).map(|(a, p)| a + beta * (a - p)).collect();
            w = nw;
            b = nb;
            theta = next_theta;
        }
        Self {
            dim: d,
            classes: k,
            weight: w,
            bias: b,
        }
    }

    /// Argmax class per row, ties to the lowest index.
    pub fn predict(&self, x: &FeatureMatrix) -> Vec<usize> {
        let logits = matmul(x.rows, x.cols, self.classes, &x.data, &self.weight);
        logits
            .chunks(self.classes)
            .map(|row| {
                let mut best = 0;
                for c in 1..self.classes {
                    if row[c] + self.bias[c] > row[best] + self.bias[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

/// Largest eigenvalue of `X^T X` by power iteration, inflated 5% so the
/// derived step size stays on the safe side of the true curvature.
fn top_eigen_gram(x: &FeatureMatrix, xt: &[f64]) -> f64 {
    let (n, d) = (x.rows, x.cols);
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0;
    for _ in 0..50 {
        let xv = matmul(n, d, 1, &x.data, &v);
        let w = matmul(d, n, 1, xt, &xv);
        lambda = dot(&v, &w);
        let norm = dot(&w, &w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v = w.into_iter().map(|a| a / norm).collect();
    }
    1.05 * lambda
}

/// 1-nearest-neighbour labels under the Euclidean distance, ties to the
/// lowest train index.
pub fn nearest_neighbour(
    train: &FeatureMatrix,
    train_labels: &[usize],
    test: &FeatureMatrix,
) -> Vec<usize> {
    let d = train.cols;
    let train_sq: Vec<f64> = (0..train.rows)
        .map(|i| dot(train.row(i), train.row(i)))
        .collect();
    let train_t = train.transpose();
    let mut out = Vec::with_capacity(test.rows);
    const CHUNK: usize = 256;
    for start in (0..test.rows).step_by(CHUNK) {
        let rows = CHUNK.min(test.rows - start);
        let block = &test.data[start * d..(start + rows) * d];
        let cross = matmul(rows, d, train.rows, block, &train_t);
        for row in cross.chunks(train.rows) {
            // ||a||^2 is common to the row and omitted
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in row.iter().enumerate() {
                let dist = train_sq[j] - 2.0 * c;
                if dist < best_d {
                    best_d = dist;
                    best = j;
                }
            }
            out.push(train_labels[best]);
        }
    }
    out
}

fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

/// Picks lambda on a held-out fifth of the train split, refits on all of
/// it, and returns `(linear accuracy, 1-NN accuracy, lambda)` on the test
/// split.
fn classify(
    train: &FeatureMatrix,
    train_labels: &[usize],
    test: &FeatureMatrix,
    test_labels: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
) -> Result<(f64, f64, f64)> {
    if cfg.lambdas.is_empty() {
        return Err(Error::InvalidArgument(
            "no regularization candidates".into(),
        ));
    }
    let mut order: Vec<usize> = (0..train.rows).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let held = (train.rows / 5).max(1).min(train.rows.saturating_sub(1));
    let lambda = if held == 0 || cfg.lambdas.len() == 1 {
        cfg.lambdas[0]
    } else {
        let (val_idx, fit_idx) = order.split_at(held);
        let fit = train.select_rows(fit_idx);
        let fit_labels: Vec<usize> = fit_idx.iter().map(|&i| train_labels[i]).collect();
        let val = train.select_rows(val_idx);
        let val_labels: Vec<usize> = val_idx.iter().map(|&i| train_labels[i]).collect();
        let mut best = (f64::NEG_INFINITY, cfg.lambdas[0]);
        for &l in &cfg.lambdas {
            let clf = LinearClassifier::fit(&fit, &fit_labels, classes, l, cfg.iterations);
            let acc = accuracy(&clf.predict(&val), &val_labels);
            if acc > best.0 {
                best = (acc, l);
            }
        }
        best.1
    };
    let clf = LinearClassifier::fit(train, train_labels, classes, lambda, cfg.iterations);
    let linear = accuracy(&clf.predict(test), test_labels);
    let nn1 = accuracy(&nearest_neighbour(train, train_labels, test), test_labels);
    Ok((linear, nn1, lambda))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub depth: usize,
    pub feature_dim: usize,
    pub linear_accuracy: f64,
    pub nn1_accuracy: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub rows: Vec<ProbeRow>,
}

fn check_splits<T: Scalar>(train: &Dataset<T>, test: &Dataset<T>) -> Result<()> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyInput("probe"));
    }
    if train.num_classes != test.num_classes {
        return Err(Error::InvalidArgument(format!(
            "train has {} classes, test {}",
            train.num_classes, test.num_classes
        )));
    }
    Ok(())
}

/// Linear and 1-NN test accuracy of standardized, spatially averaged
/// features at each tapped depth.
pub fn depth_probe<T: Scalar>(
    net: &Network<T>,
    train: &Dataset<T>,
    test: &Dataset<T>,
    taps: &[usize],
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    check_splits(train, test)?;
    let f_train = extract_features(net, train, taps, cfg.batch)?;
    let f_test = extract_features(net, test, taps, cfg.batch)?;
    let mut rows = Vec::with_capacity(taps.len());
    for ((&depth, tr), te) in taps.iter().zip(&f_train).zip(&f_test) {
        let st = Standardizer::fit(tr)?;
        let (tr, te) = (st.apply(tr), st.apply(te));
        let (linear, nn1, lambda) = classify(
            &tr,
            &train.labels,
            &te,
            &test.labels,
            train.num_classes,
            cfg,
        )?;
        info!(
            "probe depth {depth}: dim {} linear {linear:.4} 1-nn {nn1:.4}",
            tr.cols
        );
        rows.push(ProbeRow {
            depth,
            feature_dim: tr.cols,
            linear_accuracy: linear,
            nn1_accuracy: nn1,
            lambda,
        });
    }
    Ok(ProbeReport { rows })
}

/// Orthogonal projector onto the leading principal components of a
/// standardized feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub dim: usize,
    /// Covariance eigenvalues, nonincreasing.
    pub variances: Vec<f64>,
    /// Column-major principal directions: component `k` is
    /// `components[k * dim..(k + 1) * dim]`.
    pub components: Vec<f64>,
}

impl PcaModel {
    /// Eigen-decomposition (Jacobi) of the covariance of centred `x`.
    pub fn fit(x: &FeatureMatrix) -> Result<Self> {
        if x.rows < 2 {
            return Err(Error::InvalidArgument(
                "PCA needs at least 2 samples".into(),
            ));
        }
        let d = x.cols;
        let mean: Vec<f64> = (0..d)
            .map(|c| (0..x.rows).map(|i| x.data[i * d + c]).sum::<f64>() / x.rows as f64)
            .collect();
        let mut centred = x.clone();
        for row in centred.data.chunks_mut(d) {
            row.iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
        }
        let ct = centred.transpose();
        let mut cov = matmul(d, x.rows, d, &ct, &centred.data);
        cov.iter_mut().for_each(|v| *v /= (x.rows - 1) as f64);
        let (mut variances, vecs) = symmetric_eigen(&cov, d);
        variances.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut components = vec![0.0; d * d];
        for k in 0..d {
            for i in 0..d {
                components[k * d + i] = vecs[i * d + k];
            }
        }
        Ok(Self {
            dim: d,
            variances,
            components,
        })
    }

    /// Fraction of total variance carried by each component.
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        let total: f64 = self.variances.iter().sum();
        self.variances
            .iter()
            .map(|v| if total > 0.0 { v / total } else { 0.0 })
            .collect()
    }

    fn check(&self, d: usize) -> Result<()> {
        if d == 0 || d > self.dim {
            return Err(Error::InvalidArgument(format!(
                "projection rank {d} outside 1..={}",
                self.dim
            )));
        }
        Ok(())
    }

    /// Coordinates of each row in the leading `d` components, `(rows, d)`.
    pub fn coordinates(&self, x: &FeatureMatrix, d: usize) -> Result<FeatureMatrix> {
        self.check(d)?;
        // components are stored component-major, so the (dim, d) basis is their transpose
        let mut basis = vec![0.0; self.dim * d];
        for k in 0..d {
            for i in 0..self.dim {
                basis[i * d + k] = self.components[k * self.dim + i];
            }
        }
        Ok(FeatureMatrix {
            rows: x.rows,
            cols: d,
            data: matmul(x.rows, self.dim, d, &x.data, &basis),
        })
    }

    /// `pi_d f`: the projection of each row onto the leading `d` components,
    /// expressed in the original coordinates.
    pub fn project(&self, x: &FeatureMatrix, d: usize) -> Result<FeatureMatrix> {
        let z = self.coordinates(x, d)?;
        Ok(FeatureMatrix {
            rows: x.rows,
            cols: self.dim,
            data: matmul(
                x.rows,
                d,
                self.dim,
                &z.data,
                &self.components[..d * self.dim],
            ),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaRow {
    pub d: usize,
    pub linear_accuracy: f64,
    pub nn1_accuracy: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaReport {
    pub depth: usize,
    pub feature_dim: usize,
    pub rows: Vec<PcaRow>,
    /// Per-component fraction of the train variance, nonincreasing.
    pub explained_variance: Vec<f64>,
}

/// Probe accuracy after projecting standardized features at `depth` onto
/// the leading `d` principal components of the train split, for each `d`.
///
/// Both classifiers are run on the `d` coordinates in the principal basis.
/// The 1-NN distances are identical to those of `pi_d f` in the original
/// space, and the regularized linear fit is too because the basis is
/// orthonormal.
pub fn pca_probe<T: Scalar>(
    net: &Network<T>,
    train: &Dataset<T>,
    test: &Dataset<T>,
    depth: usize,
    d_list: &[usize],
    cfg: &ProbeConfig,
) -> Result<PcaReport> {
    check_splits(train, test)?;
    let f_train = extract_features(net, train, &[depth], cfg.batch)?.remove(0);
    let f_test = extract_features(net, test, &[depth], cfg.batch)?.remove(0);
    let st = Standardizer::fit(&f_train)?;
    let (tr, te) = (st.apply(&f_train), st.apply(&f_test));
    let pca = PcaModel::fit(&tr)?;
    for &d in d_list {
        pca.check(d)?;
    }
    let mut rows = Vec::with_capacity(d_list.len());
    for &d in d_list {
        let (ztr, zte) = (pca.coordinates(&tr, d)?, pca.coordinates(&te, d)?);
        let (linear, nn1, lambda) = classify(
            &ztr,
            &train.labels,
            &zte,
            &test.labels,
            train.num_classes,
            cfg,
        )?;
        info!("pca depth {depth} d {d}: linear {linear:.4} 1-nn {nn1:.4}");
        rows.push(PcaRow {
            d,
            linear_accuracy: linear,
            nn1_accuracy: nn1,
            lambda,
        });
    }
    Ok(PcaReport {
        depth,
        feature_dim: tr.cols,
        rows,
        explained_variance: pca.explained_variance_ratio(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    /// Three Gaussian blobs in `d` dims, separable along the first axis.
    fn blobs(n: usize, d: usize, seed: u64) -> (FeatureMatrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut data = Vec::with_capacity(n * d);
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        for &y in &labels {
            for c in 0..d {
                let shift = if c == 0 { 6.0 * y as f64 } else { 0.0 };
                data.push(shift + normal.sample(&mut rng));
            }
        }
        (
            FeatureMatrix {
                rows: n,
                cols: d,
                data,
            },
            labels,
        )
    }

    #[test]
    fn linear_classifier_separates_blobs() {
        let (x, y) = blobs(300, 5, 1);
        let clf = LinearClassifier::fit(&x, &y, 3, 1e-3, 200);
        assert!(accuracy(&clf.predict(&x), &y) > 0.97);
    }

    #[test]
    fn nearest_neighbour_recovers_train_labels_and_breaks_ties_low() {
        let (x, y) = blobs(60, 4, 2);
        assert_eq!(nearest_neighbour(&x, &y, &x), y);
        let train = FeatureMatrix {
            rows: 2,
            cols: 1,
            data: vec![-1.0, 1.0],
        };
        let test = FeatureMatrix {
            rows: 1,
            cols: 1,
            data: vec![0.0],
        };
        assert_eq!(nearest_neighbour(&train, &[7, 3], &test), vec![7]);
    }

    #[test]
    fn standardizer_drops_constant_features() {
        let x = FeatureMatrix {
            rows: 3,
            cols: 2,
            data: vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0],
        };
        let st = Standardizer::fit(&x).unwrap();
        assert_eq!(st.keep, vec![0]);
        let z = st.apply(&x);
        assert_eq!(z.cols, 1);
        assert!(z.data.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn projector_is_idempotent_and_full_rank_is_identity() {
        let (x, _) = blobs(50, 6, 3);
        let pca = PcaModel::fit(&x).unwrap();
        assert!(pca.variances.windows(2).all(|w| w[0] >= w[1]));
        let p = pca.project(&x, 3).unwrap();
        let pp = pca.project(&p, 3).unwrap();
        let diff: f64 = p
            .data
            .iter()
            .zip(&pp.data)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = x.data.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(diff <= 1e-12 * norm);
        let full = pca.project(&x, 6).unwrap();
        assert!(full
            .data
            .iter()
            .zip(&x.data)
            .all(|(a, b)| (a - b).abs() < 1e-10));
        assert!(pca.project(&x, 7).is_err());
    }

    #[test]
    fn rotation_leaves_the_probe_unchanged() {
        let (x, y) = blobs(150, 4, 4);
        let (t, ty) = blobs(90, 4, 5);
        let cfg = ProbeConfig::default();
        let direct = classify(&x, &y, &t, &ty, 3, &cfg).unwrap();
        let pca = PcaModel::fit(&x).unwrap();
        let rotated = classify(
            &pca.coordinates(&x, 4).unwrap(),
            &y,
            &pca.coordinates(&t, 4).unwrap(),
            &ty,
            3,
            &cfg,
        )
        .unwrap();
        assert!((direct.0 - rotated.0).abs() <= 0.005);
        assert_eq!(direct.1, rotated.1);
    }
}
