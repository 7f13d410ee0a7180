//! Statistical similarity sim(x, x'; λ), cluster-assumption verification and
//! the remainder R(λ).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::real::{sum, Real};
use crate::worlds::FiniteWorld;

/// Candidate cluster structure (δ, K, M₁..M_K, y). Clusters are referenced by
/// index into the world's cluster list; the labeling is the world's.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterStructure<T> {
    pub lambda: T,
    pub delta: T,
    pub cluster_ids: Vec<usize>,
}

impl<T: Real> ClusterStructure<T> {
    /// Uses every cluster of the world.
    pub fn new(world: &FiniteWorld<T>, lambda: T, delta: T) -> Self {
        Self { lambda, delta, cluster_ids: (0..world.clusters().len()).collect() }
    }

    /// δ set to the tightest admissible value.
    pub fn tight(world: &FiniteWorld<T>, lambda: T) -> Result<Self> {
        let delta = max_admissible_delta(world, world.clusters(), lambda)?;
        Ok(Self::new(world, lambda, delta))
    }

    pub fn k(&self) -> usize {
        self.cluster_ids.len()
    }

    pub fn clusters<'a>(&self, world: &'a FiniteWorld<T>) -> Result<Vec<&'a [usize]>> {
        self.cluster_ids
            .iter()
            .map(|&i| world.clusters().get(i).map(|c| c.as_slice()).ok_or_else(|| Error::Structure(format!("cluster id {i} out of range"))))
            .collect()
    }

    pub fn masses(&self, world: &FiniteWorld<T>) -> Result<Vec<T>> {
        self.cluster_ids
            .iter()
            .map(|&i| world.masses().get(i).copied().ok_or_else(|| Error::Structure(format!("cluster id {i} out of range"))))
            .collect()
    }

    /// y(x) as a position into `cluster_ids`, or None when the world's label
    /// refers to a cluster outside the structure.
    pub fn labels(&self, world: &FiniteWorld<T>) -> Vec<Option<usize>> {
        world.labels().iter().map(|l| self.cluster_ids.iter().position(|c| c == l)).collect()
    }
}

/// sim(x, x'; λ) = w(x, x') / (w(x) w(x')) − λ.
pub fn sim<T: Real>(world: &FiniteWorld<T>, x: usize, xp: usize, lambda: T) -> T {
    world.joint(x, xp) / (world.marginal(x) * world.marginal(xp)) - lambda
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityCheck {
    pub pass: bool,
    pub delta: f64,
    pub min_sim: f64,
    pub slack: f64,
    pub worst_pair: Option<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// (A): the clusters cover every point.
    pub coverage: ConditionCheck,
    /// (B): sim ≥ δ on every same-cluster pair.
    pub similarity: SimilarityCheck,
    /// (C): y(x) names a cluster containing x.
    pub labeling: ConditionCheck,
    /// δ > −λ, so that (B) forces positive joint mass inside clusters.
    pub nonvacuous: bool,
    pub pass: bool,
}

impl AssumptionReport {
    pub fn failing_conditions(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.coverage.pass {
            out.push(format!("(A) coverage: {}", self.coverage.detail));
        }
        if !self.similarity.pass {
            let pair = self.similarity.worst_pair.as_ref().map(|(a, b)| format!(" at ({a}, {b})")).unwrap_or_default();
            out.push(format!(
                "(B) similarity: min sim {} < delta {}{pair}, slack {}",
                self.similarity.min_sim, self.similarity.delta, self.similarity.slack
            ));
        }
        if !self.labeling.pass {
            out.push(format!("(C) labeling: {}", self.labeling.detail));
        }
        out
    }
}

pub fn verify_assumption<T: Real>(world: &FiniteWorld<T>, structure: &ClusterStructure<T>) -> Result<AssumptionReport> {
    let clusters = structure.clusters(world)?;
    let n = world.len();
    let mut covered = vec![false; n];
    for c in &clusters {
        for &x in *c {
            covered[x] = true;
        }
    }
    let coverage = if clusters.is_empty() {
        ConditionCheck { pass: false, detail: "incomplete structure: no clusters".into() }
    } else if let Some(x) = covered.iter().position(|c| !c) {
        ConditionCheck { pass: false, detail: format!("point {} is in no cluster", world.points()[x].id) }
    } else {
        ConditionCheck { pass: true, detail: String::new() }
    };

    let mut min_sim = T::infinity();
    let mut worst = None;
    for c in &clusters {
        for &x in *c {
            for &xp in *c {
                let s = sim(world, x, xp, structure.lambda);
                if s < min_sim {
                    min_sim = s;
                    worst = Some((x, xp));
                }
            }
        }
    }
    let slack = min_sim - structure.delta;
    let similarity = SimilarityCheck {
        pass: !clusters.is_empty() && slack.f64() >= -T::EXACT_TOL,
        delta: structure.delta.f64(),
        min_sim: min_sim.f64(),
        slack: slack.f64(),
        worst_pair: worst.map(|(a, b)| (world.points()[a].id.clone(), world.points()[b].id.clone())),
    };

    let labels = structure.labels(world);
    let labeling = if clusters.is_empty() || labels.is_empty() {
        ConditionCheck { pass: false, detail: "incomplete structure: no labels".into() }
    } else if let Some(x) = (0..n).find(|&x| labels[x].map_or(true, |l| !clusters[l].contains(&x))) {
        ConditionCheck { pass: false, detail: format!("label of point {} is not a cluster containing it", world.points()[x].id) }
    } else {
        ConditionCheck { pass: true, detail: String::new() }
    };

    let pass = coverage.pass && similarity.pass && labeling.pass;
    Ok(AssumptionReport { coverage, similarity, labeling, nonvacuous: structure.delta > -structure.lambda, pass })
}

/// minᵢ min_{x,x'∈Mᵢ} sim(x, x'; λ): the largest δ for which (B) holds.
pub fn max_admissible_delta<T: Real>(world: &FiniteWorld<T>, clusters: &[Vec<usize>], lambda: T) -> Result<T> {
    if clusters.is_empty() {
        return Err(Error::Structure("no clusters given".into()));
    }
    let mut best = T::infinity();
    for (i, c) in clusters.iter().enumerate() {
        if c.is_empty() {
            return Err(Error::EmptyCluster(i));
        }
        for &x in c {
            for &xp in c {
                best = best.min(sim(world, x, xp, lambda));
            }
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RLambdaBreakdown<T> {
    /// (M_k/2)·Σ_{i≠j} P₊((Mᵢ∩Mⱼ)×(Mᵢ∩Mⱼ)).
    pub overlap_term: T,
    /// λψ(1)·Σᵢ P(Mᵢ)(1 − P(Mᵢ)).
    pub mass_term: T,
    /// (1 − λ)ψ(1).
    pub const_term: T,
    pub total: T,
    /// λψ(1)·(Σ_{i≠j} P(Mᵢ)P(Mⱼ) − Σᵢ P(Mᵢ)(1 − P(Mᵢ))) = λψ(1)(S² − S) with
    /// S = Σᵢ P(Mᵢ). Zero for a partition; positive when clusters overlap, where
    /// it is the amount by which `total` under-states the cross-cluster term.
    pub cross_mass_gap: T,
}

pub fn r_lambda<T: Real>(world: &FiniteWorld<T>, structure: &ClusterStructure<T>, kernel: &Kernel<T>) -> Result<RLambdaBreakdown<T>> {
    let clusters = structure.clusters(world)?;
    let masses = structure.masses(world)?;
    let membership = world.membership();
    let ids = &structure.cluster_ids;
    let mut overlap = T::zero();
    for a in 0..clusters.len() {
        for b in 0..clusters.len() {
            if a == b {
                continue;
            }
            let inter: Vec<usize> = clusters[a].iter().copied().filter(|&x| membership[ids[b]][x]).collect();
            overlap += sum(inter.iter().flat_map(|&x| inter.iter().map(move |&xp| (x, xp))).map(|(x, xp)| world.pair_mass(x, xp)));
        }
    }
    let lambda = structure.lambda;
    let psi1 = kernel.psi_one();
    let overlap_term = kernel.m_k() / T::lit(2.0) * overlap;
    let mass_term = lambda * psi1 * sum(masses.iter().map(|&p| p * (T::one() - p)));
    let const_term = (T::one() - lambda) * psi1;
    let s = sum(masses.iter().copied());
    Ok(RLambdaBreakdown {
        overlap_term,
        mass_term,
        const_term,
        total: overlap_term + mass_term + const_term,
        cross_mass_gap: lambda * psi1 * (s * s - s),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worlds::{build_disjoint_balls, build_overlap_balls, BallWorldSpec};

    fn balls(k: usize, res: usize) -> FiniteWorld<f64> {
        build_disjoint_balls(&BallWorldSpec::disjoint(k, res)).unwrap()
    }

    #[test]
    fn sim_examples() {
        let w = balls(3, 2);
        assert_eq!(sim(&w, 0, 1, 1.0), 2.0);
        assert_eq!(sim(&w, 0, 2, 1.0), -1.0);
        assert_eq!(sim(&w, 0, 5, 3.5), -3.5);
        let w2 = balls(2, 2);
        assert_eq!(sim(&w2, 0, 1, 1.0), 1.0);
        assert_eq!(sim(&w2, 0, 3, 1.0), -1.0);
        let single = balls(1, 4);
        for x in 0..4 {
            for xp in 0..4 {
                assert_eq!(sim(&single, x, xp, 0.25), 0.75);
            }
        }
    }

    #[test]
    fn overlap_sim_cases() {
        let w: FiniteWorld<f64> = build_overlap_balls(&BallWorldSpec::overlap(1)).unwrap();
        // points: A, C, B
        for (lambda, expected) in [(1.0, [1.0, -1.0, 0.0]), (0.0, [2.0, 0.0, 1.0])] {
            assert!((sim(&w, 0, 0, lambda) - expected[0]).abs() < 1e-15);
            assert!((sim(&w, 0, 2, lambda) - expected[1]).abs() < 1e-15);
            assert!((sim(&w, 1, 1, lambda) - expected[2]).abs() < 1e-15);
            assert!((sim(&w, 0, 1, lambda) - expected[2]).abs() < 1e-15);
        }
        for lambda in [0.0, 0.5, 1.0, 3.0] {
            let d = max_admissible_delta(&w, w.clusters(), lambda).unwrap();
            assert!((d - (1.0 - lambda)).abs() < 1e-15);
        }
    }

    #[test]
    fn verify_examples() {
        let w = balls(3, 2);
        let lambda = 1.0;
        let ok = verify_assumption(&w, &ClusterStructure::new(&w, lambda, 3.0 - lambda)).unwrap();
        assert!(ok.pass, "{ok:?}");
        assert_eq!(ok.similarity.slack, 0.0);
        let bad = verify_assumption(&w, &ClusterStructure::new(&w, lambda, 3.0 - lambda + 0.1)).unwrap();
        assert!(!bad.pass);
        assert!((bad.similarity.slack + 0.1).abs() < 1e-12);

        let o: FiniteWorld<f64> = build_overlap_balls(&BallWorldSpec::overlap(2)).unwrap();
        assert!(verify_assumption(&o, &ClusterStructure::new(&o, 0.5, 0.5)).unwrap().pass);
        let fail = verify_assumption(&o, &ClusterStructure::new(&o, 0.5, 1.5)).unwrap();
        assert!(!fail.pass);
        let (a, b) = fail.similarity.worst_pair.clone().unwrap();
        assert!(a.starts_with('A') || a.starts_with('C'));
        assert!(b.starts_with('C') || a.starts_with('C'));
    }

    #[test]
    fn max_delta_examples() {
        let w = balls(4, 3);
        assert_eq!(max_admissible_delta(&w, w.clusters(), 2.0).unwrap(), 2.0);
        let single = balls(1, 3);
        assert_eq!(max_admissible_delta(&single, single.clusters(), 0.3).unwrap(), 0.7);
        assert!(matches!(max_admissible_delta(&w, &[vec![0], vec![]], 1.0), Err(Error::EmptyCluster(1))));
        let o: FiniteWorld<f64> = build_overlap_balls(&BallWorldSpec::overlap(3)).unwrap();
        assert!((max_admissible_delta(&o, o.clusters(), 0.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn r_lambda_examples() {
        let w = balls(2, 3);
        let lin = Kernel::linear();
        let r = r_lambda(&w, &ClusterStructure::new(&w, 1.0, 1.0), &lin).unwrap();
        assert_eq!(r.overlap_term, 0.0);
        assert!((r.mass_term - 0.5).abs() < 1e-15);
        assert_eq!(r.const_term, 0.0);
        assert!((r.total - 0.5).abs() < 1e-15);
        assert!(r.cross_mass_gap.abs() < 1e-15);

        let r0 = r_lambda(&w, &ClusterStructure::new(&w, 0.0, 2.0), &Kernel::quadratic()).unwrap();
        assert_eq!(r0.total, 1.0);

        let o: FiniteWorld<f64> = build_overlap_balls(&BallWorldSpec::overlap(2)).unwrap();
        let ro = r_lambda(&o, &ClusterStructure::new(&o, 1.0, 0.0), &lin).unwrap();
        // P₊(C×C) = c² = 1/16, counted for (1,2) and (2,1), times M_k/2 = 2.
        assert!((ro.overlap_term - 0.25).abs() < 1e-14, "{ro:?}");
        assert!(ro.cross_mass_gap > 0.0);
    }

    #[test]
    fn missing_clusters_are_reported() {
        let w = FiniteWorld::<f64>::from_json(r#"{"points":[{"id":"a","nu":0.5},{"id":"b","nu":0.5}],"joint":[[1,1],[1,1]]}"#).unwrap();
        let rep = verify_assumption(&w, &ClusterStructure::new(&w, 1.0, 0.0)).unwrap();
        assert!(!rep.pass);
        assert!(rep.coverage.detail.contains("incomplete"));
    }
}
