//! Independent oracles shared by the integration tests. None of them call the
//! library's loss, geometry or training code.
#![allow(dead_code)]

use kcl_core::FiniteWorld;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// Population KCL of the linear kernel when every point of cluster i maps to
/// `u[i]`, summed directly over point pairs. Labels pick the cluster.
pub fn collapsed_linear_kcl(world: &FiniteWorld, u: &[Vec<f64>], lambda: f64) -> f64 {
    let n = world.len();
    let y = world.labels();
    let mut pos = 0.0;
    let mut neg = 0.0;
    for x in 0..n {
        for xp in 0..n {
            let k = dot(&u[y[x]], &u[y[xp]]);
            pos += world.pair_mass(x, xp) * k;
            neg += world.point_mass(x) * world.point_mass(xp) * k;
        }
    }
    -pos + lambda * neg
}

/// Best collapsed configuration of `k` unit vectors in R^d: random restarts of
/// projected gradient descent with a numerically differentiated objective.
pub fn brute_force_k_vectors(world: &FiniteWorld, k: usize, d: usize, lambda: f64, restarts: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    for _ in 0..restarts {
        let mut u: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                normalize(&mut v);
                v
            })
            .collect();
        let mut step = 0.2;
        let mut value = collapsed_linear_kcl(world, &u, lambda);
        for _ in 0..400 {
            let h = 1e-6;
            let mut grad = vec![vec![0.0; d]; k];
            for i in 0..k {
                for j in 0..d {
                    let mut up = u.clone();
                    up[i][j] += h;
                    let mut dn = u.clone();
                    dn[i][j] -= h;
                    grad[i][j] = (collapsed_linear_kcl(world, &up, lambda) - collapsed_linear_kcl(world, &dn, lambda)) / (2.0 * h);
                }
            }
            let mut cand = u.clone();
            for i in 0..k {
                for j in 0..d {
                    cand[i][j] -= step * grad[i][j];
                }
                normalize(&mut cand[i]);
            }
            let v = collapsed_linear_kcl(world, &cand, lambda);
            if v < value {
                u = cand;
                value = v;
            } else {
                step *= 0.5;
            }
        }
        best = best.min(value);
    }
    best
}

/// Nearest explicit mean in feature space; error is the mass of points whose
/// label differs from the predicted cluster. Ties go to the label.
pub fn explicit_mean_classifier_error(world: &FiniteWorld, features: &[Vec<f64>]) -> f64 {
    let clusters = world.clusters();
    let dim = features[0].len();
    let means: Vec<Vec<f64>> = clusters
        .iter()
        .map(|c| {
            let mass: f64 = c.iter().map(|&x| world.point_mass(x)).sum();
            let mut m = vec![0.0; dim];
            for &x in c {
                for j in 0..dim {
                    m[j] += world.point_mass(x) * features[x][j] / mass;
                }
            }
            m
        })
        .collect();
    let mut err = 0.0;
    for x in 0..world.len() {
        let dist: Vec<f64> = means.iter().map(|m| features[x].iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum()).collect();
        let label = world.labels()[x];
        let best = dist.iter().cloned().fold(f64::INFINITY, f64::min);
        if dist[label] > best + 1e-9 * best.abs().max(1.0) {
            err += world.point_mass(x);
        }
    }
    err
}

/// Feature map of ψ(t) = t²: vec(f fᵀ).
pub fn quadratic_features(f: &[f64]) -> Vec<f64> {
    f.iter().flat_map(|a| f.iter().map(move |b| a * b)).collect()
}

/// 𝔞 and 𝔠 for explicit features, straight from their definitions.
pub fn explicit_a_c(world: &FiniteWorld, features: &[Vec<f64>]) -> (f64, f64) {
    let clusters = world.clusters();
    let pw = |x: usize| world.point_mass(x);
    let mut a = 0.0;
    for c in clusters {
        for &x in c {
            for &xp in c {
                let d: f64 = features[x].iter().zip(&features[xp]).map(|(p, q)| (p - q) * (p - q)).sum();
                a += pw(x) * pw(xp) * d;
            }
        }
    }
    let dim = features[0].len();
    let sums: Vec<Vec<f64>> = clusters
        .iter()
        .map(|c| {
            let mut s = vec![0.0; dim];
            for &x in c {
                for j in 0..dim {
                    s[j] += pw(x) * features[x][j];
                }
            }
            s
        })
        .collect();
    let mut c = 0.0;
    for i in 0..clusters.len() {
        for j in 0..clusters.len() {
            if i != j {
                c += dot(&sums[i], &sums[j]);
            }
        }
    }
    (a, c)
}

pub fn random_unit_rows(n: usize, d: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            normalize(&mut v);
            v
        })
        .collect()
}
