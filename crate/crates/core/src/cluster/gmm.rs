//! Diagonal-covariance Gaussian mixture fitted by expectation maximization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClusterError, ReducedMatrix};

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 200;
pub const TOLERANCE: f64 = 1e-4;
pub const MAX_REPAIRS: usize = 3;
const COLLAPSE_MASS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub n_components: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    /// Log-likelihood after each E-step since the last component repair.
    pub log_likelihood_trace: Vec<f64>,
    pub repairs: usize,
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl GmmModel {
    fn component_log_density(&self, k: usize, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((xi, m), v) in x.iter().zip(&self.means[k]).zip(&self.variances[k]) {
            acc += (2.0 * std::f64::consts::PI * v).ln() + (xi - m) * (xi - m) / v;
        }
        -0.5 * acc
    }

    /// `log(w_k) + log N(x | mu_k, var_k)` for every component.
    pub fn joint_log_densities(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_components).map(|k| self.weights[k].ln() + self.component_log_density(k, x)).collect()
    }

    /// Log posterior responsibilities, one row per point.
    pub fn log_responsibilities(&self, m: &ReducedMatrix) -> Vec<Vec<f64>> {
        (0..m.rows)
            .map(|i| {
                let mut joint = self.joint_log_densities(m.row(i));
                let norm = log_sum_exp(&joint);
                joint.iter_mut().for_each(|v| *v -= norm);
                joint
            })
            .collect()
    }

    /// Most responsible component per point; ties go to the lowest id.
    pub fn predict(&self, m: &ReducedMatrix) -> Vec<usize> {
        (0..m.rows)
            .map(|i| {
                let joint = self.joint_log_densities(m.row(i));
                let mut best = 0;
                for (k, v) in joint.iter().enumerate() {
                    if *v > joint[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }

    pub fn log_likelihood(&self, m: &ReducedMatrix) -> f64 {
        (0..m.rows).map(|i| log_sum_exp(&self.joint_log_densities(m.row(i)))).sum()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: first centre uniform, then proportional to squared
/// distance to the nearest chosen centre. When every remaining distance is
/// zero the lowest unchosen index is taken.
fn kmeans_pp(m: &ReducedMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut chosen = vec![rng.gen_range(0..m.rows)];
    let mut nearest: Vec<f64> = (0..m.rows).map(|i| sq_dist(m.row(i), m.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, d) in nearest.iter().enumerate() {
                if *d > 0.0 {
                    pick = Some(i);
                    if target < *d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.expect("positive total has a positive entry")
        } else {
            (0..m.rows).find(|i| !chosen.contains(i)).expect("k <= rows")
        };
        chosen.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(m.row(i), m.row(next)));
        }
    }
    chosen
}

fn global_variance(m: &ReducedMatrix) -> Vec<f64> {
    let all: Vec<usize> = (0..m.rows).collect();
    let mean = m.centroid(&all);
    (0..m.cols)
        .map(|c| {
            let v = (0..m.rows).map(|i| (m.row(i)[c] - mean[c]).powi(2)).sum::<f64>() / m.rows as f64;
            v.max(VARIANCE_FLOOR)
        })
        .collect()
}

/// Returns responsibilities (row-major, n × k) and the log-likelihood.
fn e_step(model: &GmmModel, m: &ReducedMatrix) -> (Vec<f64>, f64) {
    let k = model.n_components;
    let mut resp = vec![0.0; m.rows * k];
    let mut ll = 0.0;
    for i in 0..m.rows {
        let joint = model.joint_log_densities(m.row(i));
        let norm = log_sum_exp(&joint);
        ll += norm;
        for c in 0..k {
            resp[i * k + c] = (joint[c] - norm).exp();
        }
    }
    (resp, ll)
}

fn component_mass(resp: &[f64], n: usize, k: usize) -> Vec<f64> {
    let mut mass = vec![0.0; k];
    for i in 0..n {
        for c in 0..k {
            mass[c] += resp[i * k + c];
        }
    }
    mass
}

fn m_step(model: &mut GmmModel, m: &ReducedMatrix, resp: &[f64]) {
    let k = model.n_components;
    let mass = component_mass(resp, m.rows, k);
    for c in 0..k {
        model.weights[c] = mass[c] / m.rows as f64;
        if mass[c] < COLLAPSE_MASS {
            continue;
        }
        let mut mean = vec![0.0; m.cols];
        for i in 0..m.rows {
            let r = resp[i * k + c];
            for (acc, x) in mean.iter_mut().zip(m.row(i)) {
                *acc += r * x;
            }
        }
        mean.iter_mut().for_each(|v| *v /= mass[c]);
        let mut var = vec![0.0; m.cols];
        for i in 0..m.rows {
            let r = resp[i * k + c];
            for ((acc, x), mu) in var.iter_mut().zip(m.row(i)).zip(&mean) {
                *acc += r * (x - mu) * (x - mu);
            }
        }
        var.iter_mut().for_each(|v| *v = (*v / mass[c]).max(VARIANCE_FLOOR));
        model.means[c] = mean;
        model.variances[c] = var;
    }
    let total: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= total);
}

/// Fits `n_components` diagonal Gaussians. Deterministic for a given seed.
pub fn fit_gmm(m: &ReducedMatrix, n_components: usize, seed: u64) -> Result<GmmModel, ClusterError> {
    if n_components == 0 || n_components > m.rows {
        return Err(ClusterError::BadComponentCount { requested: n_components, rows: m.rows });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres = kmeans_pp(m, n_components, &mut rng);
    let base_var = global_variance(m);
    let mut model = GmmModel {
        n_components,
        weights: vec![1.0 / n_components as f64; n_components],
        means: centres.iter().map(|&i| m.row(i).to_vec()).collect(),
        variances: vec![base_var.clone(); n_components],
        log_likelihood_trace: Vec::new(),
        repairs: 0,
    };

    // Hard-assign every point to its nearest centre and take one M-step from
    // those one-hot responsibilities.
    let mut hard = vec![0.0; m.rows * n_components];
    for i in 0..m.rows {
        let mut best = 0;
        for c in 1..n_components {
            if sq_dist(m.row(i), &model.means[c]) < sq_dist(m.row(i), &model.means[best]) {
                best = c;
            }
        }
        hard[i * n_components + best] = 1.0;
    }
    m_step(&mut model, m, &hard);

    let (mut resp, ll) = e_step(&model, m);
    model.log_likelihood_trace.push(ll);
    for _ in 0..MAX_ITERATIONS {
        let mass = component_mass(&resp, m.rows, n_components);
        if let Some(dead) = mass.iter().position(|&w| w < COLLAPSE_MASS) {
            if model.repairs < MAX_REPAIRS {
                repair(&mut model, m, dead, &base_var);
                let (r, ll) = e_step(&model, m);
                resp = r;
                model.log_likelihood_trace.clear();
                model.log_likelihood_trace.push(ll);
                continue;
            }
        }
        m_step(&mut model, m, &resp);
        let (r, ll) = e_step(&model, m);
        resp = r;
        let prev = *model.log_likelihood_trace.last().expect("trace non-empty");
        model.log_likelihood_trace.push(ll);
        if (ll - prev).abs() < TOLERANCE {
            break;
        }
    }
    Ok(model)
}

/// Moves a collapsed component onto the point the mixture explains worst.
fn repair(model: &mut GmmModel, m: &ReducedMatrix, dead: usize, base_var: &[f64]) {
    let mut worst = 0;
    let mut worst_ll = f64::INFINITY;
    for i in 0..m.rows {
        let ll = log_sum_exp(&model.joint_log_densities(m.row(i)));
        if ll < worst_ll {
            worst_ll = ll;
            worst = i;
        }
    }
    tracing::debug!(component = dead, point = worst, "re-initializing collapsed component");
    model.means[dead] = m.row(worst).to_vec();
    model.variances[dead] = base_var.to_vec();
    model.weights[dead] = 1.0 / model.n_components as f64;
    let total: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= total);
    model.repairs += 1;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ReducerKind;
    use rand_distr::{Distribution, Normal};

    fn normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
        Normal::new(mean, sd).unwrap().sample(rng)
    }

    fn matrix(rows: Vec<Vec<f64>>) -> ReducedMatrix {
        ReducedMatrix::from_rows(&rows, ReducerKind::Pca).unwrap()
    }

    #[test]
    fn single_component_mean_is_centroid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..37).map(|_| vec![rng.gen_range(-5.0..5.0), rng.gen_range(0.0..1.0)]).collect();
        let m = matrix(rows.clone());
        let model = fit_gmm(&m, 1, 9).unwrap();
        for c in 0..2 {
            let centroid = rows.iter().map(|r| r[c]).sum::<f64>() / rows.len() as f64;
            assert!((model.means[0][c] - centroid).abs() < 1e-9);
        }
        assert!((model.weights[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recovers_two_gaussians() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![normal(&mut rng, if i < 50 { 0.0 } else { 10.0 }, 0.5)]).collect();
        let model = fit_gmm(&matrix(rows), 2, 1).unwrap();
        let mut means: Vec<f64> = model.means.iter().map(|m| m[0]).collect();
        means.sort_by(f64::total_cmp);
        assert!(means[0].abs() < 0.3 && (means[1] - 10.0).abs() < 0.3, "{means:?}");
    }

    #[test]
    fn trace_is_monotone_and_weights_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..80).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let m = matrix(rows);
        for seed in 0..10 {
            let model = fit_gmm(&m, 4, seed).unwrap();
            assert!(model.log_likelihood_trace.windows(2).all(|w| w[1] >= w[0] - 1e-8));
            assert!((model.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(model.variances.iter().flatten().all(|v| *v >= VARIANCE_FLOOR));
        }
    }

    #[test]
    fn identical_points_do_not_blow_up() {
        let m = matrix(vec![vec![0.0, 0.0]; 13]);
        let model = fit_gmm(&m, 3, 0).unwrap();
        assert!(model.predict(&m).iter().all(|&l| l == 0));
    }

    #[test]
    fn rejects_bad_component_counts() {
        let m = matrix(vec![vec![0.0], vec![1.0]]);
        assert!(fit_gmm(&m, 3, 0).is_err());
        assert!(fit_gmm(&m, 0, 0).is_err());
    }
}
