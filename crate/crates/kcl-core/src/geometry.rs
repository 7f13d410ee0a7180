//! Cluster-mean geometry in the RKHS, computed through the kernel trick.

use serde::{Deserialize, Serialize};

use crate::encoders::{Embedding, Encoder};
use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::real::{dot, Real};
use crate::similarity::ClusterStructure;
use crate::worlds::FiniteWorld;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterGeometry<T> {
    /// ⟨μᵢ(f), μⱼ(f)⟩ in H_k.
    pub mu_gram: Vec<Vec<T>>,
    /// 𝔞(f) = Σᵢ E₋[‖h(f(x)) − h(f(x'))‖²; Mᵢ×Mᵢ].
    pub a_value: T,
    /// 𝔠(f) = Σ_{i≠j} P(Mᵢ)P(Mⱼ)⟨μᵢ, μⱼ⟩.
    pub c_value: T,
    /// minᵢ≠ⱼ ‖μᵢ − μⱼ‖², absent when K < 2.
    pub delta_min: Option<T>,
    pub masses: Vec<T>,
}

impl<T: Real> ClusterGeometry<T> {
    pub fn mean_sq_distance(&self, i: usize, j: usize) -> T {
        self.mu_gram[i][i] + self.mu_gram[j][j] - T::lit(2.0) * self.mu_gram[i][j]
    }
}

/// Geometry from a precomputed N×N kernel Gram matrix of the encoded world.
pub fn geometry_from_gram<T: Real>(
    world: &FiniteWorld<T>,
    gram: &[T],
    kernel: &Kernel<T>,
    structure: &ClusterStructure<T>,
) -> Result<ClusterGeometry<T>> {
    let clusters = structure.clusters(world)?;
    if clusters.is_empty() {
        return Err(Error::Structure("no clusters".into()));
    }
    let masses = structure.masses(world)?;
    let pw = world.point_masses();
    let n = world.len();
    let k = clusters.len();
    let two = T::lit(2.0);
    let psi1 = kernel.psi_one();

    let mut raw = vec![vec![T::zero(); k]; k];
    for i in 0..k {
        for j in i..k {
            let mut s = T::zero();
            for &x in clusters[i] {
                let mut row = T::zero();
                for &xp in clusters[j] {
                    row += gram[x * n + xp] * pw[xp];
                }
                s += row * pw[x];
            }
            raw[i][j] = s;
            raw[j][i] = s;
        }
    }
    let mut a_value = T::zero();
    for i in 0..k {
        a_value += two * psi1 * masses[i] * masses[i] - two * raw[i][i];
    }
    let mut c_value = T::zero();
    for i in 0..k {
        for j in 0..k {
            if i != j {
                c_value += raw[i][j];
            }
        }
    }
    let mu_gram: Vec<Vec<T>> = (0..k).map(|i| (0..k).map(|j| raw[i][j] / (masses[i] * masses[j])).collect()).collect();
    let mut geometry = ClusterGeometry { mu_gram, a_value, c_value, delta_min: None, masses };
    for i in 0..k {
        for j in i + 1..k {
            let d = geometry.mean_sq_distance(i, j);
            geometry.delta_min = Some(geometry.delta_min.map_or(d, |m: T| m.min(d)));
        }
    }
    Ok(geometry)
}

pub fn cluster_geometry<T: Real, E: Encoder<T> + ?Sized>(
    world: &FiniteWorld<T>,
    encoder: &E,
    kernel: &Kernel<T>,
    structure: &ClusterStructure<T>,
) -> Result<ClusterGeometry<T>> {
    let gram = encoder.embed(world)?.gram(kernel);
    geometry_from_gram(world, &gram, kernel, structure)
}

/// ‖h(f(x)) − μᵢ(f)‖² for every point x (rows) and cluster i (columns).
pub fn distances_to_means<T: Real>(
    world: &FiniteWorld<T>,
    gram: &[T],
    kernel: &Kernel<T>,
    structure: &ClusterStructure<T>,
    geometry: &ClusterGeometry<T>,
) -> Result<Vec<Vec<T>>> {
    let clusters = structure.clusters(world)?;
    let pw = world.point_masses();
    let n = world.len();
    let two = T::lit(2.0);
    Ok((0..n)
        .map(|x| {
            clusters
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let cross = c.iter().fold(T::zero(), |s, &xp| s + gram[x * n + xp] * pw[xp]) / geometry.masses[i];
                    kernel.psi_one() + geometry.mu_gram[i][i] - two * cross
                })
                .collect()
        })
        .collect())
}

/// Nearest-mean assignment. Clusters within a relative `EXACT_TOL` of the
/// minimum count as tied; a tie resolves to `target` when it is among the
/// minimizers and to the lowest index otherwise.
pub fn nearest_mean<T: Real>(distances: &[T], target: usize) -> usize {
    let min = distances.iter().copied().fold(T::infinity(), T::min);
    let tol = T::lit(T::EXACT_TOL) * (T::one() + min.abs());
    let tied = |i: usize| distances[i] - min <= tol;
    if target < distances.len() && tied(target) {
        target
    } else {
        (0..distances.len()).find(|&i| tied(i)).expect("nonempty distances")
    }
}

fn classification_error<T: Real>(
    world: &FiniteWorld<T>,
    gram: &[T],
    kernel: &Kernel<T>,
    structure: &ClusterStructure<T>,
    targets: &[usize],
) -> Result<T> {
    if structure.k() < 2 {
        return Err(Error::TooFewClusters(structure.k()));
    }
    let geometry = geometry_from_gram(world, gram, kernel, structure)?;
    let distances = distances_to_means(world, gram, kernel, structure, &geometry)?;
    let pw = world.point_masses();
    Ok((0..world.len()).filter(|&x| nearest_mean(&distances[x], targets[x]) != targets[x]).fold(T::zero(), |s, x| s + pw[x]))
}

fn structure_labels<T: Real>(world: &FiniteWorld<T>, structure: &ClusterStructure<T>) -> Result<Vec<usize>> {
    structure
        .labels(world)
        .into_iter()
        .enumerate()
        .map(|(x, l)| {
            l.ok_or(Error::LabelOutsideCluster {
                point: world.points()[x].id.clone(),
                label: world.labels().get(x).copied().unwrap_or(usize::MAX),
            })
        })
        .collect()
}

pub fn mean_classifier_error_from_gram<T: Real>(
    world: &FiniteWorld<T>,
    gram: &[T],
    kernel: &Kernel<T>,
    structure: &ClusterStructure<T>,
) -> Result<T> {
    if world.labels().is_empty() {
        return Err(Error::Structure("world has no labels".into()));
    }
    let targets = structure_labels(world, structure)?;
    classification_error(world, gram, kernel, structure, &targets)
}

/// P_X-mass of points the nearest-mean classifier assigns to a cluster other than y(x).
pub fn mean_classifier_error<T: Real, E: Encoder<T> + ?Sized>(
    world: &FiniteWorld<T>,
    encoder: &E,
    kernel: &Kernel<T>,
    structure: &ClusterStructure<T>,
) -> Result<T> {
    let gram = encoder.embed(world)?.gram(kernel);
    mean_classifier_error_from_gram(world, &gram, kernel, structure)
}

/// Labeling ỹ(x) = i on M̃ᵢ, after checking M̃ᵢ ⊆ Mᵢ, disjointness and coverage.
pub fn partition_labels<T: Real>(world: &FiniteWorld<T>, structure: &ClusterStructure<T>, partition: &[Vec<usize>]) -> Result<Vec<usize>> {
    let clusters = structure.clusters(world)?;
    if partition.len() != clusters.len() {
        return Err(Error::Partition(format!("{} cells for {} clusters", partition.len(), clusters.len())));
    }
    let mut labels = vec![usize::MAX; world.len()];
    for (i, cell) in partition.iter().enumerate() {
        for &x in cell {
            if x >= world.len() {
                return Err(Error::Partition(format!("cell {i}: point index {x} out of range")));
            }
            if !clusters[i].contains(&x) {
                return Err(Error::Partition(format!("point {} of cell {i} lies outside cluster {i}", world.points()[x].id)));
            }
            if labels[x] != usize::MAX {
                return Err(Error::Partition(format!("point {} is in two cells", world.points()[x].id)));
            }
            labels[x] = i;
        }
    }
    if let Some(x) = labels.iter().position(|&l| l == usize::MAX) {
        return Err(Error::Partition(format!("point {} is in no cell", world.points()[x].id)));
    }
    Ok(labels)
}

pub fn custom_partition_error_from_gram<T: Real>(
    world: &FiniteWorld<T>,
    gram: &[T],
    kernel: &Kernel<T>,
    structure: &ClusterStructure<T>,
    partition: &[Vec<usize>],
) -> Result<T> {
    let targets = partition_labels(world, structure, partition)?;
    classification_error(world, gram, kernel, structure, &targets)
}

/// Nearest-mean error against the labeling induced by a partition M̃ᵢ ⊆ Mᵢ.
pub fn custom_partition_error<T: Real, E: Encoder<T> + ?Sized>(
    world: &FiniteWorld<T>,
    encoder: &E,
    kernel: &Kernel<T>,
    structure: &ClusterStructure<T>,
    partition: &[Vec<usize>],
) -> Result<T> {
    let gram = encoder.embed(world)?.gram(kernel);
    custom_partition_error_from_gram(world, &gram, kernel, structure, partition)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Connectivity {
    pub cluster: usize,
    /// Q_M(g).
    pub q: f64,
    /// minᵢ P(Mᵢ)²/P₊(Mᵢ×Mᵢ).
    pub c: f64,
    /// minᵢ P(Mᵢ)(2P(Mᵢ) − 1), present when every P(Mᵢ) > ½.
    pub c_fallback: Option<f64>,
    pub delta_plus_lambda: f64,
    /// c·(δ + λ).
    pub lower_bound: f64,
    pub slack: f64,
}

/// Q_M(g) for g(x) = headᵀf(x) on cluster `cluster`, with its certified lower bound.
pub fn inner_cluster_connectivity<T: Real>(
    world: &FiniteWorld<T>,
    embedding: &Embedding<T>,
    head: &[T],
    structure: &ClusterStructure<T>,
    cluster: usize,
) -> Result<Connectivity> {
    if head.len() != embedding.dim() {
        return Err(Error::Dimension { expected: embedding.dim(), got: head.len() });
    }
    let clusters = structure.clusters(world)?;
    let masses = structure.masses(world)?;
    let members = *clusters.get(cluster).ok_or_else(|| Error::Structure(format!("cluster {cluster} out of range")))?;
    let g: Vec<T> = (0..world.len()).map(|x| dot(head, embedding.row(x))).collect();
    let pw = world.point_masses();
    let pos_mass =
        |c: &[usize]| c.iter().flat_map(|&x| c.iter().map(move |&xp| (x, xp))).fold(T::zero(), |s, (x, xp)| s + world.pair_mass(x, xp));

    let (mut num, mut den) = (T::zero(), T::zero());
    for &x in members {
        for &xp in members {
            let d = g[x] - g[xp];
            num += world.pair_mass(x, xp) * d * d;
            den += pw[x] * pw[xp] * d * d;
        }
    }
    let scale = g.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if !(den > T::lit(T::EXACT_TOL) * T::lit(T::EXACT_TOL) * (T::one() + scale * scale)) {
        return Err(Error::DenominatorZero(cluster));
    }
    let p = masses[cluster];
    let q = (num / pos_mass(members)) / (den / (p * p));
    let c = clusters.iter().zip(&masses).map(|(c, &m)| m * m / pos_mass(c)).fold(T::infinity(), T::min);
    let c_fallback = masses
        .iter()
        .all(|&m| m > T::lit(0.5))
        .then(|| masses.iter().map(|&m| m * (T::lit(2.0) * m - T::one())).fold(T::infinity(), T::min).f64());
    let dl = structure.delta + structure.lambda;
    let lower = c * dl;
    Ok(Connectivity {
        cluster,
        q: q.f64(),
        c: c.f64(),
        c_fallback,
        delta_plus_lambda: dl.f64(),
        lower_bound: lower.f64(),
        slack: (q - lower).f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::TableEncoder;
    use crate::worlds::{build_disjoint_balls, build_overlap_balls, BallWorldSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_balls() -> (FiniteWorld<f64>, ClusterStructure<f64>) {
        let w = build_disjoint_balls(&BallWorldSpec::disjoint(2, 3)).unwrap();
        let s = ClusterStructure::new(&w, 1.0, 1.0);
        (w, s)
    }

    #[test]
    fn constant_encoder_geometry() {
        let (w, s) = two_balls();
        let e = TableEncoder::constant(w.len(), vec![0.0, 1.0]).unwrap();
        let g = cluster_geometry(&w, &e, &Kernel::linear(), &s).unwrap();
        for row in &g.mu_gram {
            for v in row {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
        assert!(g.a_value.abs() < 1e-12);
        assert!((g.c_value - 0.5).abs() < 1e-12);
        assert!(g.delta_min.unwrap().abs() < 1e-12);
    }

    #[test]
    fn antipodal_geometry_and_error() {
        let (w, s) = two_balls();
        let e = TableEncoder::by_label(&w, &[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let lin = Kernel::linear();
        let g = cluster_geometry(&w, &e, &lin, &s).unwrap();
        let expected = [[1.0, -1.0], [-1.0, 1.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((g.mu_gram[i][j] - expected[i][j]).abs() < 1e-12);
            }
        }
        assert!(g.a_value.abs() < 1e-12);
        assert!((g.c_value + 0.5).abs() < 1e-12);
        assert!((g.delta_min.unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(mean_classifier_error(&w, &e, &lin, &s).unwrap(), 0.0);
    }

    #[test]
    fn constant_encoder_ties_resolve_to_label() {
        let (w, s) = two_balls();
        let e = TableEncoder::constant(w.len(), vec![1.0, 0.0]).unwrap();
        assert_eq!(mean_classifier_error(&w, &e, &Kernel::linear(), &s).unwrap(), 0.0);
    }

    #[test]
    fn single_cluster_has_no_cross_term() {
        let w: FiniteWorld<f64> = build_disjoint_balls(&BallWorldSpec::disjoint(1, 4)).unwrap();
        let s = ClusterStructure::new(&w, 1.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = TableEncoder::random(w.len(), 3, &mut rng);
        let g = cluster_geometry(&w, &e, &Kernel::linear(), &s).unwrap();
        assert_eq!(g.c_value, 0.0);
        assert!(g.delta_min.is_none());
        assert!(matches!(mean_classifier_error(&w, &e, &Kernel::linear(), &s), Err(Error::TooFewClusters(1))));
    }

    #[test]
    fn linear_kernel_means_match_explicit_features() {
        let w: FiniteWorld<f64> = build_disjoint_balls(&BallWorldSpec::disjoint(3, 4)).unwrap();
        let s = ClusterStructure::new(&w, 1.0, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let e = TableEncoder::random(w.len(), 4, &mut rng);
        let emb = e.embed(&w).unwrap();
        let g = cluster_geometry(&w, &e, &Kernel::linear(), &s).unwrap();
        let means: Vec<Vec<f64>> = w
            .clusters()
            .iter()
            .zip(w.masses())
            .map(|(c, m)| (0..4).map(|d| c.iter().map(|&x| emb.row(x)[d] * w.point_mass(x)).sum::<f64>() / m).collect())
            .collect();
        for i in 0..3 {
            for j in 0..3 {
                assert!((g.mu_gram[i][j] - dot(&means[i], &means[j])).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn partition_errors() {
        let w: FiniteWorld<f64> = build_overlap_balls(&BallWorldSpec::overlap(1)).unwrap();
        let s = ClusterStructure::new(&w, 1.0, 0.0);
        // A, C, B; clusters {A, C} and {C, B}
        let own = vec![vec![0, 1], vec![2]];
        let moved = vec![vec![0], vec![1, 2]];
        let e = TableEncoder::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let lin = Kernel::linear();
        assert_eq!(custom_partition_error(&w, &e, &lin, &s, &own).unwrap(), mean_classifier_error(&w, &e, &lin, &s).unwrap());
        // μ₁ and μ₂ mirror each other across e₂, so C ties and follows ỹ.
        assert_eq!(custom_partition_error(&w, &e, &lin, &s, &moved).unwrap(), 0.0);
        assert!(matches!(custom_partition_error(&w, &e, &lin, &s, &[vec![0, 2], vec![1]]), Err(Error::Partition(_))));
        assert!(matches!(custom_partition_error(&w, &e, &lin, &s, &[vec![0], vec![2]]), Err(Error::Partition(_))));
        assert!(matches!(custom_partition_error(&w, &e, &lin, &s, &[vec![0, 1], vec![1, 2]]), Err(Error::Partition(_))));
    }

    #[test]
    fn connectivity_examples() {
        let w: FiniteWorld<f64> = build_disjoint_balls(&BallWorldSpec::disjoint(3, 4)).unwrap();
        let s = ClusterStructure::tight(&w, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let emb = TableEncoder::random(w.len(), 3, &mut rng).embed(&w).unwrap();
        let r = inner_cluster_connectivity(&w, &emb, &[0.3, -0.2, 0.9], &s, 1).unwrap();
        assert!((r.delta_plus_lambda - 3.0).abs() < 1e-12);
        assert!(r.slack >= -1e-9, "{r:?}");
        let constant = TableEncoder::constant(w.len(), vec![1.0, 0.0, 0.0]).unwrap().embed(&w).unwrap();
        assert!(matches!(inner_cluster_connectivity(&w, &constant, &[1.0, 0.0, 0.0], &s, 0), Err(Error::DenominatorZero(0))));

        let one: FiniteWorld<f64> = build_disjoint_balls(&BallWorldSpec::disjoint(1, 4)).unwrap();
        let s1 = ClusterStructure::tight(&one, 0.5).unwrap();
        let emb1 = TableEncoder::random(one.len(), 2, &mut rng).embed(&one).unwrap();
        let r1 = inner_cluster_connectivity(&one, &emb1, &[1.0, 0.5], &s1, 0).unwrap();
        assert_eq!(r1.c_fallback, Some(1.0));
        assert!((r1.c - 1.0).abs() < 1e-12);
    }
}
