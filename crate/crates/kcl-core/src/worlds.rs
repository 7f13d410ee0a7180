//! Finite augmentation worlds: points with base measure ν, a joint positive-pair
//! density w(x, x') with respect to ν⊗ν, clusters and labels.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{sum, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point<T> {
    pub id: String,
    pub coords: Vec<T>,
    pub nu: T,
}

/// A validated finite world. Immutable after construction.
#[derive(Clone, Debug)]
pub struct FiniteWorld<T: Real> {
    points: Vec<Point<T>>,
    joint: Vec<T>,
    marginal: Vec<T>,
    point_mass: Vec<T>,
    clusters: Vec<Vec<usize>>,
    labels: Vec<usize>,
    masses: Vec<T>,
}

impl<T: Real> FiniteWorld<T> {
    /// Validates every invariant: nonnegative entries, symmetric joint,
    /// Σ w(x,x')ν(x)ν(x') = 1, positive marginal, cluster coverage and
    /// labels inside their clusters. `clusters` may be empty, in which case
    /// `labels` must be empty too.
    pub fn new(points: Vec<Point<T>>, joint: Vec<T>, clusters: Vec<Vec<usize>>, labels: Vec<usize>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::Schema("world has no points".into()));
        }
        if joint.len() != n * n {
            return Err(Error::Schema(format!("joint has {} entries, expected {}x{}", joint.len(), n, n)));
        }
        for p in &points {
            if !(p.nu >= T::zero()) || !p.nu.is_finite() {
                return Err(Error::Schema(format!("point {} has invalid nu {}", p.id, p.nu)));
            }
        }
        for (idx, v) in joint.iter().enumerate() {
            if !(*v >= T::zero()) || !v.is_finite() {
                let (i, j) = (idx / n, idx % n);
                return Err(Error::Schema(format!("joint({}, {}) = {v} is not a nonnegative number", points[i].id, points[j].id)));
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (joint[i * n + j], joint[j * n + i]);
                if (a - b).abs().f64() > T::EXACT_TOL * a.max(b).max(T::one()).f64() {
                    return Err(Error::Symmetry { a: points[i].id.clone(), b: points[j].id.clone(), ab: a.f64(), ba: b.f64() });
                }
            }
        }
        let total = sum((0..n).flat_map(|i| {
            let joint = &joint;
            let points = &points;
            (0..n).map(move |j| joint[i * n + j] * points[i].nu * points[j].nu)
        }));
        if (total - T::one()).abs().f64() > T::EXACT_TOL {
            return Err(Error::Normalization { total: total.f64() });
        }
        let marginal: Vec<T> = (0..n).map(|i| sum((0..n).map(|j| joint[i * n + j] * points[j].nu))).collect();
        for (i, m) in marginal.iter().enumerate() {
            if !(*m > T::zero()) {
                return Err(Error::ZeroMarginal { point: points[i].id.clone(), value: m.f64() });
            }
        }
        let point_mass: Vec<T> = (0..n).map(|i| marginal[i] * points[i].nu).collect();

        let mut covered = vec![false; n];
        for (c, members) in clusters.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::EmptyCluster(c));
            }
            for &x in members {
                if x >= n {
                    return Err(Error::Schema(format!("cluster {c} references point index {x} out of range")));
                }
                covered[x] = true;
            }
        }
        if !clusters.is_empty() {
            if let Some(x) = covered.iter().position(|c| !c) {
                return Err(Error::ClusterCoverage { point: points[x].id.clone() });
            }
            if labels.len() != n {
                return Err(Error::Schema(format!("{} labels for {} points", labels.len(), n)));
            }
            for (x, &l) in labels.iter().enumerate() {
                if l >= clusters.len() || !clusters[l].contains(&x) {
                    return Err(Error::LabelOutsideCluster { point: points[x].id.clone(), label: l });
                }
            }
        } else if !labels.is_empty() {
            return Err(Error::Schema("labels given without clusters".into()));
        }
        let mut clusters = clusters;
        for c in &mut clusters {
            c.sort_unstable();
            c.dedup();
        }
        let masses = clusters.iter().map(|c| sum(c.iter().map(|&x| point_mass[x]))).collect();
        Ok(Self { points, joint, marginal, point_mass, clusters, labels, masses })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point<T>] {
        &self.points
    }

    pub fn nu(&self, x: usize) -> T {
        self.points[x].nu
    }

    /// w(x, x').
    pub fn joint(&self, x: usize, xp: usize) -> T {
        self.joint[x * self.len() + xp]
    }

    pub fn joint_matrix(&self) -> &[T] {
        &self.joint
    }

    /// w(x) = Σ_{x'} w(x, x')ν(x').
    pub fn marginal(&self, x: usize) -> T {
        self.marginal[x]
    }

    /// P_X({x}) = w(x)ν(x).
    pub fn point_mass(&self, x: usize) -> T {
        self.point_mass[x]
    }

    pub fn point_masses(&self) -> &[T] {
        &self.point_mass
    }

    /// P₊({(x, x')}) = w(x, x')ν(x)ν(x').
    pub fn pair_mass(&self, x: usize, xp: usize) -> T {
        self.joint(x, xp) * self.points[x].nu * self.points[xp].nu
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// P_X(M_i) for each cluster.
    pub fn masses(&self) -> &[T] {
        &self.masses
    }

    pub fn has_clusters(&self) -> bool {
        !self.clusters.is_empty()
    }

    /// Membership matrix: `m[i][x]` is true iff x ∈ M_i.
    pub fn membership(&self) -> Vec<Vec<bool>> {
        self.clusters
            .iter()
            .map(|c| {
                let mut row = vec![false; self.len()];
                for &x in c {
                    row[x] = true;
                }
                row
            })
            .collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.points.iter().position(|p| p.id == id)
    }

    /// The same world with point `i` moved to position `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.len();
        if perm.len() != n {
            return Err(Error::Dimension { expected: n, got: perm.len() });
        }
        let mut points = self.points.clone();
        let mut joint = vec![T::zero(); n * n];
        for i in 0..n {
            points[perm[i]] = self.points[i].clone();
            for j in 0..n {
                joint[perm[i] * n + perm[j]] = self.joint(i, j);
            }
        }
        let clusters = self.clusters.iter().map(|c| c.iter().map(|&x| perm[x]).collect()).collect();
        let mut labels = vec![0; if self.labels.is_empty() { 0 } else { n }];
        for (i, &l) in self.labels.iter().enumerate() {
            labels[perm[i]] = l;
        }
        Self::new(points, joint, clusters, labels)
    }

    /// Copy with a different clustering, validated like a fresh world.
    pub fn with_clusters(&self, clusters: Vec<Vec<usize>>, labels: Vec<usize>) -> Result<Self> {
        Self::new(self.points.clone(), self.joint.clone(), clusters, labels)
    }

    pub fn to_file(&self) -> WorldFile {
        let n = self.len();
        WorldFile {
            points: self
                .points
                .iter()
                .map(|p| PointFile { id: PointId::Name(p.id.clone()), coords: p.coords.iter().map(|c| c.f64()).collect(), nu: p.nu.f64() })
                .collect(),
            joint: (0..n).map(|i| (0..n).map(|j| self.joint(i, j).f64()).collect()).collect(),
            clusters: if self.clusters.is_empty() {
                None
            } else {
                Some(self.clusters.iter().map(|c| c.iter().map(|&x| PointId::Name(self.points[x].id.clone())).collect()).collect())
            },
            labels: if self.labels.is_empty() { None } else { Some(self.labels.clone()) },
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: WorldFile = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        file.into_world()
    }
}

/// Point identifier as written in a world file: a string or an integer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointId {
    Name(String),
    Number(u64),
}

impl fmt::Display for PointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PointId::Name(s) => f.write_str(s),
            PointId::Number(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointFile {
    pub id: PointId,
    #[serde(default)]
    pub coords: Vec<f64>,
    pub nu: f64,
}

/// On-disk world schema. `joint` is a row-major matrix of density values,
/// `clusters` lists point ids, `labels` holds one zero-based cluster index per point.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldFile {
    pub points: Vec<PointFile>,
    pub joint: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<Vec<Vec<PointId>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
}

impl WorldFile {
    pub fn into_world<T: Real>(self) -> Result<FiniteWorld<T>> {
        let n = self.points.len();
        let mut index = BTreeMap::new();
        for (i, p) in self.points.iter().enumerate() {
            if index.insert(p.id.to_string(), i).is_some() {
                return Err(Error::Schema(format!("duplicate point id {}", p.id)));
            }
        }
        if self.joint.len() != n || self.joint.iter().any(|r| r.len() != n) {
            return Err(Error::Schema(format!("joint must be a {n}x{n} matrix")));
        }
        let points = self
            .points
            .into_iter()
            .map(|p| Point { id: p.id.to_string(), coords: p.coords.into_iter().map(T::lit).collect(), nu: T::lit(p.nu) })
            .collect();
        let joint = self.joint.into_iter().flatten().map(T::lit).collect();
        let clusters = self
            .clusters
            .unwrap_or_default()
            .into_iter()
            .map(|c| {
                c.into_iter()
                    .map(|id| {
                        index
                            .get(&id.to_string())
                            .copied()
                            .ok_or_else(|| Error::Schema(format!("cluster references unknown point id {id}")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        FiniteWorld::new(points, joint, clusters, self.labels.unwrap_or_default())
    }
}

pub fn load_world<T: Real>(path: impl AsRef<Path>) -> Result<FiniteWorld<T>> {
    let text = std::fs::read_to_string(path)?;
    FiniteWorld::from_json(&text)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapMode {
    Disjoint,
    TwoBallOverlap,
}

/// Parameters of a ball world. In overlap mode `k` must be 2, `radius` is r,
/// the centers sit 3r apart and the augmentation balls have radius 2r.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallWorldSpec {
    pub k: usize,
    pub p: usize,
    pub radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<Vec<f64>>>,
    pub overlap_mode: OverlapMode,
    pub resolution: usize,
}

impl BallWorldSpec {
    pub fn disjoint(k: usize, resolution: usize) -> Self {
        Self { k, p: 2, radius: 1.0, centers: None, overlap_mode: OverlapMode::Disjoint, resolution }
    }

    pub fn overlap(resolution: usize) -> Self {
        Self { k: 2, p: 1, radius: 1.0, centers: None, overlap_mode: OverlapMode::TwoBallOverlap, resolution }
    }

    pub fn build<T: Real>(&self) -> Result<FiniteWorld<T>> {
        match self.overlap_mode {
            OverlapMode::Disjoint => build_disjoint_balls(self),
            OverlapMode::TwoBallOverlap => build_overlap_balls(self),
        }
    }
}

fn cell_offset(j: usize, res: usize, p: usize, r: f64) -> Vec<f64> {
    let mut v = vec![0.0; p];
    if p == 1 {
        v[0] = r * (2.0 * (j as f64 + 0.5) / res as f64 - 1.0);
    } else {
        let rad = r * ((j as f64 + 0.5) / res as f64).sqrt();
        let theta = j as f64 * 2.399_963_229_728_653;
        v[0] = rad * theta.cos();
        v[1] = rad * theta.sin();
    }
    v
}

/// K disjoint balls of equal radius, each cut into `resolution` cells of
/// equal ν. Same-ball pairs have w = K and cross pairs w = 0, so w(x) = 1,
/// sim = K·1[same ball] − λ and every cluster has mass 1/K.
pub fn build_disjoint_balls<T: Real>(spec: &BallWorldSpec) -> Result<FiniteWorld<T>> {
    if spec.overlap_mode != OverlapMode::Disjoint {
        return Err(Error::Construction("build_disjoint_balls needs disjoint mode".into()));
    }
    let (k, res, p, r) = (spec.k, spec.resolution, spec.p, spec.radius);
    if k == 0 || res == 0 || p == 0 {
        return Err(Error::Construction("k, resolution and p must be at least 1".into()));
    }
    if !(r > 0.0) {
        return Err(Error::Construction(format!("radius must be positive, got {r}")));
    }
    let centers = match &spec.centers {
        Some(c) => {
            if c.len() != k || c.iter().any(|v| v.len() != p) {
                return Err(Error::Construction(format!("need {k} centers of dimension {p}")));
            }
            c.clone()
        }
        None => (0..k)
            .map(|i| {
                let mut v = vec![0.0; p];
                v[0] = 3.0 * r * i as f64;
                v
            })
            .collect(),
    };
    for i in 0..k {
        for j in (i + 1)..k {
            let d2: f64 = centers[i].iter().zip(&centers[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2.sqrt() <= 2.0 * r {
                return Err(Error::Construction(format!("balls {i} and {j} overlap: center distance {} <= 2r = {}", d2.sqrt(), 2.0 * r)));
            }
        }
    }
    let n = k * res;
    let nu = T::one() / T::lit(n as f64);
    let mut points = Vec::with_capacity(n);
    for (b, c) in centers.iter().enumerate() {
        for j in 0..res {
            let off = cell_offset(j, res, p, r);
            points.push(Point { id: format!("b{b}c{j}"), coords: c.iter().zip(&off).map(|(a, o)| T::lit(a + o)).collect(), nu });
        }
    }
    let kk = T::lit(k as f64);
    let mut joint = vec![T::zero(); n * n];
    for x in 0..n {
        for xp in 0..n {
            if x / res == xp / res {
                joint[x * n + xp] = kk;
            }
        }
    }
    let clusters = (0..k).map(|b| (b * res..(b + 1) * res).collect()).collect();
    let labels = (0..n).map(|x| x / res).collect();
    FiniteWorld::new(points, joint, clusters, labels)
}

/// vol(B(v₁;2r) ∩ B(v₂;2r)) / vol(B(·;2r)) for centers 3r apart in R^p:
/// twice a cap of height r/2, I_{7/16}((p+1)/2, 1/2).
pub fn overlap_fraction(p: usize) -> f64 {
    let (big_r, h) = (2.0, 0.5);
    let x = (2.0 * big_r * h - h * h) / (big_r * big_r);
    statrs::function::beta::beta_reg((p as f64 + 1.0) / 2.0, 0.5, x)
}

/// Two augmentation balls of radius 2r around centers 3r apart, split into the
/// regions A = B₁ \ B₂, C = B₁ ∩ B₂ and B = B₂ \ B₁, each cut into `resolution`
/// equal-ν cells. With the ball volume normalized to one, ν(A) = ν(B) = 1 − c and
/// ν(C) = c; w(x, x') = ½(1[both in B₁] + 1[both in B₂]). Points in C are labeled 0.
pub fn build_overlap_balls<T: Real>(spec: &BallWorldSpec) -> Result<FiniteWorld<T>> {
    if spec.overlap_mode != OverlapMode::TwoBallOverlap {
        return Err(Error::Construction("build_overlap_balls needs two-ball-overlap mode".into()));
    }
    let (res, p, r) = (spec.resolution, spec.p, spec.radius);
    if !(r > 0.0) {
        return Err(Error::Construction(format!("radius must be positive, got {r}")));
    }
    if spec.k != 2 || res == 0 || p == 0 {
        return Err(Error::Construction("overlap mode needs k = 2, resolution >= 1, p >= 1".into()));
    }
    let v1 = spec.centers.as_ref().map(|c| c[0].clone()).unwrap_or_else(|| vec![0.0; p]);
    let c = overlap_fraction(p);
    // region 0 = A, 1 = C, 2 = B
    let region_nu = [1.0 - c, c, 1.0 - c];
    let region_span = [(-2.0 * r, r), (r, 2.0 * r), (2.0 * r, 5.0 * r)];
    let mut points = Vec::with_capacity(3 * res);
    let mut region = Vec::with_capacity(3 * res);
    for (g, name) in ["A", "C", "B"].iter().enumerate() {
        let (lo, hi) = region_span[g];
        for j in 0..res {
            let mut coords: Vec<T> = v1.iter().map(|&a| T::lit(a)).collect();
            coords[0] += T::lit(lo + (hi - lo) * (j as f64 + 0.5) / res as f64);
            points.push(Point { id: format!("{name}{j}"), coords, nu: T::lit(region_nu[g] / res as f64) });
            region.push(g);
        }
    }
    let n = points.len();
    let in_b1 = |g: usize| g <= 1;
    let in_b2 = |g: usize| g >= 1;
    let half = T::lit(0.5);
    let mut joint = vec![T::zero(); n * n];
    for x in 0..n {
        for xp in 0..n {
            let (a, b) = (region[x], region[xp]);
            let mut v = T::zero();
            if in_b1(a) && in_b1(b) {
                v += half;
            }
            if in_b2(a) && in_b2(b) {
                v += half;
            }
            joint[x * n + xp] = v;
        }
    }
    let m1 = (0..n).filter(|&x| in_b1(region[x])).collect();
    let m2 = (0..n).filter(|&x| in_b2(region[x])).collect();
    let labels = region.iter().map(|&g| if g <= 1 { 0 } else { 1 }).collect();
    FiniteWorld::new(points, joint, vec![m1, m2], labels)
}

/// Parameters for a random latent-class world: cluster i is the support of
/// latent source i; `shared` extra points per cluster also belong to the next
/// cluster, which makes the covering overlap.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RandomWorldSpec {
    pub k: usize,
    pub points_per_cluster: usize,
    pub shared: usize,
}

/// P₊(x, x') = Σ_l p̄_l q_l(x) q_l(x') with random source weights p̄ and random
/// conditionals q_l supported on cluster l, and random ν. Symmetric and
/// normalized by construction.
pub fn random_world<T: Real, R: Rng + ?Sized>(spec: &RandomWorldSpec, rng: &mut R) -> Result<FiniteWorld<T>> {
    let (k, m, s) = (spec.k, spec.points_per_cluster, spec.shared);
    if k == 0 || m == 0 {
        return Err(Error::Construction("random world needs k >= 1 and points_per_cluster >= 1".into()));
    }
    let n = k * m + if k > 1 { k * s } else { 0 };
    let mut clusters: Vec<Vec<usize>> = (0..k).map(|i| (i * m..(i + 1) * m).collect()).collect();
    if k > 1 {
        for i in 0..k {
            for t in 0..s {
                let x = k * m + i * s + t;
                clusters[i].push(x);
                clusters[(i + 1) % k].push(x);
            }
        }
    }
    let nu: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..2.0)).collect();
    let pbar: Vec<f64> = {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.3..1.0)).collect();
        let t: f64 = raw.iter().sum();
        raw.iter().map(|v| v / t).collect()
    };
    let mut pplus = vec![0.0; n * n];
    for (l, c) in clusters.iter().enumerate() {
        let raw: Vec<f64> = c.iter().map(|_| rng.random_range(0.2..1.0)).collect();
        let t: f64 = raw.iter().sum();
        let q: Vec<f64> = raw.iter().map(|r| r / t).collect();
        for (a, &x) in c.iter().enumerate() {
            for (b, &xp) in c.iter().enumerate() {
                pplus[x * n + xp] += pbar[l] * (q[a] * q[b]);
            }
        }
    }
    let total: f64 = pplus.iter().sum();
    let points = (0..n).map(|x| Point { id: format!("p{x}"), coords: vec![T::lit(x as f64)], nu: T::lit(nu[x]) }).collect();
    let joint = (0..n * n).map(|i| T::lit(pplus[i] / total / (nu[i / n] * nu[i % n]))).collect();
    let labels = (0..n).map(|x| clusters.iter().position(|c| c.contains(&x)).unwrap_or(0)).collect();
    FiniteWorld::new(points, joint, clusters, labels)
}

/// Seeded sampler for i.i.d. draws from P₊ and P_X by cumulative-table inversion.
#[derive(Clone, Debug)]
pub struct PairSampler {
    n: usize,
    pair_cdf: Vec<f64>,
    point_cdf: Vec<f64>,
}

fn cdf(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

fn invert(cdf: &[f64], u: f64) -> usize {
    let u = u * cdf[cdf.len() - 1];
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

impl PairSampler {
    pub fn new<T: Real>(world: &FiniteWorld<T>) -> Self {
        let n = world.len();
        let pair_cdf = cdf((0..n * n).map(|i| world.pair_mass(i / n, i % n).f64()));
        let point_cdf = cdf((0..n).map(|x| world.point_mass(x).f64()));
        Self { n, pair_cdf, point_cdf }
    }

    pub fn pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let i = invert(&self.pair_cdf, rng.random::<f64>());
        (i / self.n, i % self.n)
    }

    pub fn point<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        invert(&self.point_cdf, rng.random::<f64>())
    }

    pub fn pairs<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<(usize, usize)> {
        (0..n).map(|_| self.pair(rng)).collect()
    }
}

/// n i.i.d. positive pairs from w(x,x')ν⊗ν, reproducible per seed.
pub fn sample_positive_pairs<T: Real>(world: &FiniteWorld<T>, n: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if n < 2 {
        return Err(Error::TooFewPairs(n));
    }
    if n % 2 != 0 {
        return Err(Error::OddSampleCount(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(PairSampler::new(world).pairs(&mut rng, n))
}
