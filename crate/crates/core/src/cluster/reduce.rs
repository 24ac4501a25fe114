//! Dimensionality reduction ahead of mixture clustering.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ClusterError;
use crate::model::ReducerKind;

/// Row-major `rows × cols` matrix of finite values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub reducer_kind: ReducerKind,
    /// Set when every input vector was identical; `data` is then all zeros.
    pub degenerate: bool,
}

impl ReducedMatrix {
    /// Wraps raw coordinates without reduction.
    pub fn from_rows(rows: &[Vec<f64>], reducer_kind: ReducerKind) -> Result<Self, ClusterError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(ClusterError::DimensionMismatch);
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ClusterError::NonFinite);
        }
        Ok(Self { rows: rows.len(), cols, data, reducer_kind, degenerate: false })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Copies the listed rows into a new matrix.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: indices.len(), cols: self.cols, data, reducer_kind: self.reducer_kind, degenerate: self.degenerate }
    }

    pub fn centroid(&self, indices: &[usize]) -> Vec<f64> {
        let mut c = vec![0.0; self.cols];
        for &i in indices {
            for (acc, v) in c.iter_mut().zip(self.row(i)) {
                *acc += v;
            }
        }
        let n = indices.len().max(1) as f64;
        c.iter_mut().for_each(|v| *v /= n);
        c
    }
}

/// Target dimensionality: `min(reducer_dims, n - 1, input_dim)`.
pub fn output_dims(n: usize, input_dim: usize, reducer_dims: usize) -> usize {
    reducer_dims.min(n.saturating_sub(1)).min(input_dim).max(1)
}

fn check_input(vectors: &[Vec<f64>]) -> Result<usize, ClusterError> {
    if vectors.len() < 2 {
        return Err(ClusterError::TooFewPoints(vectors.len()));
    }
    let dim = vectors[0].len();
    if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
        return Err(ClusterError::DimensionMismatch);
    }
    if vectors.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ClusterError::NonFinite);
    }
    Ok(dim)
}

fn all_identical(vectors: &[Vec<f64>]) -> bool {
    vectors.iter().all(|v| v == &vectors[0])
}

fn zero_matrix(rows: usize, cols: usize, kind: ReducerKind) -> ReducedMatrix {
    tracing::warn!(rows, "all input vectors identical; reduction is degenerate");
    ReducedMatrix { rows, cols, data: vec![0.0; rows * cols], reducer_kind: kind, degenerate: true }
}

pub fn reduce(vectors: &[Vec<f64>], kind: ReducerKind, reducer_dims: usize, seed: u64) -> Result<ReducedMatrix, ClusterError> {
    let dim = check_input(vectors)?;
    let out_dims = output_dims(vectors.len(), dim, reducer_dims);
    if all_identical(vectors) {
        return Ok(zero_matrix(vectors.len(), out_dims, kind));
    }
    match kind {
        ReducerKind::Pca => Ok(pca(vectors, out_dims).0),
        ReducerKind::UmapLike => Ok(umap_distinct(vectors, out_dims, seed)),
    }
}

/// The layout optimizer would push exact duplicates apart; embed each
/// distinct row once and give duplicates the same coordinates.
fn umap_distinct(vectors: &[Vec<f64>], out_dims: usize, seed: u64) -> ReducedMatrix {
    let mut slot: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
    let mut distinct: Vec<Vec<f64>> = Vec::new();
    let owner: Vec<usize> = vectors
        .iter()
        .map(|v| {
            let key: Vec<u64> = v.iter().map(|x| (x + 0.0).to_bits()).collect();
            *slot.entry(key).or_insert_with(|| {
                distinct.push(v.clone());
                distinct.len() - 1
            })
        })
        .collect();
    if distinct.len() == vectors.len() {
        return umap_like(vectors, out_dims, seed);
    }
    let inner_dims = output_dims(distinct.len(), vectors[0].len(), out_dims);
    let small = umap_like(&distinct, inner_dims, seed);
    let mut data = Vec::with_capacity(vectors.len() * out_dims);
    for &o in &owner {
        data.extend_from_slice(small.row(o));
        data.extend(std::iter::repeat_n(0.0, out_dims - inner_dims));
    }
    ReducedMatrix { rows: vectors.len(), cols: out_dims, data, reducer_kind: ReducerKind::UmapLike, degenerate: small.degenerate }
}

/// Principal component scores and loadings (columns of the returned matrix are
/// unit loading vectors in input space). The largest-magnitude coordinate of
/// each loading vector is positive.
pub fn pca(vectors: &[Vec<f64>], out_dims: usize) -> (ReducedMatrix, DMatrix<f64>) {
    let n = vectors.len();
    let dim = vectors[0].len();
    let mut mean = vec![0.0; dim];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, dim, |i, j| vectors[i][j] - mean[j]);

    let mut loadings = DMatrix::<f64>::zeros(dim, out_dims);
    if n <= dim {
        let eig = SymmetricEigen::new(&centered * centered.transpose());
        let order = descending(eig.eigenvalues.as_slice());
        for (c, &idx) in order.iter().take(out_dims).enumerate() {
            let lambda = eig.eigenvalues[idx];
            if lambda <= 1e-12 {
                continue;
            }
            let v = centered.transpose() * eig.eigenvectors.column(idx) / lambda.sqrt();
            loadings.set_column(c, &v);
        }
    } else {
        let eig = SymmetricEigen::new(centered.transpose() * &centered);
        let order = descending(eig.eigenvalues.as_slice());
        for (c, &idx) in order.iter().take(out_dims).enumerate() {
            loadings.set_column(c, &eig.eigenvectors.column(idx));
        }
    }
    for c in 0..out_dims {
        let col = loadings.column(c);
        let mut best = 0;
        for j in 0..dim {
            if col[j].abs() > col[best].abs() {
                best = j;
            }
        }
        if col[best] < 0.0 {
            loadings.column_mut(c).neg_mut();
        }
    }
    let scores = &centered * &loadings;
    let data = (0..n).flat_map(|i| (0..out_dims).map(move |j| (i, j))).map(|(i, j)| scores[(i, j)]).collect();
    (ReducedMatrix { rows: n, cols: out_dims, data, reducer_kind: ReducerKind::Pca, degenerate: false }, loadings)
}

fn descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

const UMAP_EPOCHS: usize = 200;
const UMAP_A: f64 = 1.577;
const UMAP_B: f64 = 0.895;
const UMAP_NEGATIVES: usize = 5;
const UMAP_CLIP: f64 = 4.0;
const UMAP_INIT_SCALE: f64 = 10.0;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Symmetrized fuzzy k-nearest-neighbour graph as a weighted edge list.
fn fuzzy_graph(vectors: &[Vec<f64>], n_neighbors: usize) -> Vec<(usize, usize, f64)> {
    let n = vectors.len();
    let target = (n_neighbors as f64).log2().max(f64::MIN_POSITIVE);
    let mut directed = vec![std::collections::BTreeMap::<usize, f64>::new(); n];
    for i in 0..n {
        let mut dists: Vec<(f64, usize)> =
            (0..n).filter(|&j| j != i).map(|j| (sq_dist(&vectors[i], &vectors[j]).sqrt(), j)).collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        dists.truncate(n_neighbors);
        let rho = dists.iter().map(|d| d.0).find(|&d| d > 0.0).unwrap_or(0.0);
        let mass = |sigma: f64| dists.iter().map(|(d, _)| (-(d - rho).max(0.0) / sigma).exp()).sum::<f64>();
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut sigma = 1.0;
        for _ in 0..64 {
            let m = mass(sigma);
            if (m - target).abs() < 1e-5 {
                break;
            }
            if m > target {
                hi = sigma;
                sigma = (lo + hi) / 2.0;
            } else {
                lo = sigma;
                sigma = if hi.is_finite() { (lo + hi) / 2.0 } else { sigma * 2.0 };
            }
        }
        let sigma = sigma.max(1e-3 * dists.iter().map(|d| d.0).sum::<f64>() / dists.len().max(1) as f64).max(1e-12);
        for (d, j) in dists {
            directed[i].insert(j, (-(d - rho).max(0.0) / sigma).exp());
        }
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for (&j, &w_ij) in &directed[i] {
            let w_ji = directed[j].get(&i).copied().unwrap_or(0.0);
            if i < j || w_ji == 0.0 {
                let (a, b) = if i < j { (i, j) } else { (j, i) };
                let w = w_ij + w_ji - w_ij * w_ji;
                if w > 0.0 {
                    edges.push((a, b, w));
                }
            }
        }
    }
    edges.sort_by_key(|e| (e.0, e.1));
    edges.dedup_by(|x, y| x.0 == y.0 && x.1 == y.1);
    edges
}

fn clip(v: f64) -> f64 {
    v.clamp(-UMAP_CLIP, UMAP_CLIP)
}

/// Neighbour-graph embedding: fuzzy k-NN graph, PCA initialization and a fixed
/// number of stochastic layout epochs.
pub fn umap_like(vectors: &[Vec<f64>], out_dims: usize, seed: u64) -> ReducedMatrix {
    let n = vectors.len();
    let n_neighbors = 15.min(n - 1);
    let edges = fuzzy_graph(vectors, n_neighbors);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (init, _) = pca(vectors, out_dims);
    let max_abs = init.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut y: Vec<f64> = if max_abs > 0.0 {
        init.data.iter().map(|v| v / max_abs * UMAP_INIT_SCALE).collect()
    } else {
        (0..n * out_dims).map(|_| rng.gen_range(-UMAP_INIT_SCALE..UMAP_INIT_SCALE)).collect()
    };

    let w_max = edges.iter().fold(0.0f64, |m, e| m.max(e.2));
    let period: Vec<f64> = edges.iter().map(|e| w_max / e.2).collect();
    let mut next_due = period.clone();
    let d = out_dims;
    let mut delta = vec![0.0; d];
    for epoch in 0..UMAP_EPOCHS {
        let alpha = 1.0 - epoch as f64 / UMAP_EPOCHS as f64;
        for (e, &(i, j, _)) in edges.iter().enumerate() {
            if next_due[e] > (epoch + 1) as f64 {
                continue;
            }
            next_due[e] += period[e];

            let d2: f64 = (0..d).map(|c| (y[i * d + c] - y[j * d + c]).powi(2)).sum();
            if d2 > 0.0 {
                let coef = -2.0 * UMAP_A * UMAP_B * d2.powf(UMAP_B - 1.0) / (1.0 + UMAP_A * d2.powf(UMAP_B));
                for c in 0..d {
                    delta[c] = clip(coef * (y[i * d + c] - y[j * d + c])) * alpha;
                }
                for c in 0..d {
                    y[i * d + c] += delta[c];
                    y[j * d + c] -= delta[c];
                }
            }
            for _ in 0..UMAP_NEGATIVES {
                let k = rng.gen_range(0..n);
                if k == i {
                    continue;
                }
                let d2: f64 = (0..d).map(|c| (y[i * d + c] - y[k * d + c]).powi(2)).sum();
                for c in 0..d {
                    let g = if d2 > 0.0 {
                        let coef = 2.0 * UMAP_B / ((0.001 + d2) * (1.0 + UMAP_A * d2.powf(UMAP_B)));
                        clip(coef * (y[i * d + c] - y[k * d + c]))
                    } else {
                        UMAP_CLIP
                    };
                    y[i * d + c] += g * alpha;
                }
            }
        }
    }
    ReducedMatrix { rows: n, cols: d, data: y, reducer_kind: ReducerKind::UmapLike, degenerate: false }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planar_points() -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let origin: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (0..40)
            .map(|_| {
                let (a, b) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
                (0..64).map(|j| origin[j] + a * u[j] + b * v[j]).collect()
            })
            .collect()
    }

    #[test]
    fn identical_vectors_are_degenerate() {
        let m = reduce(&vec![vec![0.5, 0.5, 0.1]; 3], ReducerKind::UmapLike, 10, 0).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.cols, 2);
        assert!(m.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(reduce(&[vec![1.0]], ReducerKind::Pca, 2, 0), Err(ClusterError::TooFewPoints(1))));
    }

    #[test]
    fn pca_reconstructs_planar_points() {
        let pts = planar_points();
        let (m, loadings) = pca(&pts, 2);
        let mean: Vec<f64> = (0..64).map(|j| pts.iter().map(|p| p[j]).sum::<f64>() / pts.len() as f64).collect();
        let mut worst = 0.0f64;
        for (i, p) in pts.iter().enumerate() {
            for j in 0..64 {
                let rec = mean[j] + m.row(i)[0] * loadings[(j, 0)] + m.row(i)[1] * loadings[(j, 1)];
                worst = worst.max((rec - p[j]).abs());
            }
        }
        assert!(worst <= 1e-6, "{worst}");
    }

    #[test]
    fn pca_gram_route_preserves_planar_distances() {
        // 10 points in 64 dimensions: n < dim takes the Gram-matrix route
        let pts: Vec<Vec<f64>> = planar_points().into_iter().take(10).collect();
        let (gram, _) = pca(&pts, 2);
        for i in 0..10 {
            for j in 0..10 {
                let d_in = sq_dist(&pts[i], &pts[j]);
                let d_out = sq_dist(gram.row(i), gram.row(j));
                assert!((d_in - d_out).abs() < 1e-6 * (1.0 + d_in));
            }
        }
    }

    #[test]
    fn umap_is_seed_deterministic() {
        let pts = planar_points();
        let a = reduce(&pts, ReducerKind::UmapLike, 5, 42).unwrap();
        let b = reduce(&pts, ReducerKind::UmapLike, 5, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cols, 5);
        assert!(a.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dims_are_clamped() {
        assert_eq!(output_dims(3, 64, 10), 2);
        assert_eq!(output_dims(100, 4, 10), 4);
        assert_eq!(output_dims(100, 64, 10), 10);
    }

    #[test]
    fn duplicates_share_coordinates() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let base: Vec<Vec<f64>> = (0..12).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let rows: Vec<Vec<f64>> = base.iter().flat_map(|r| [r.clone(), r.clone(), r.clone()]).collect();
        let m = reduce(&rows, ReducerKind::UmapLike, 10, 1).unwrap();
        assert_eq!((m.rows, m.cols), (36, 6));
        for i in 0..12 {
            assert_eq!(m.row(3 * i), m.row(3 * i + 1));
            assert_eq!(m.row(3 * i), m.row(3 * i + 2));
        }
    }
}

