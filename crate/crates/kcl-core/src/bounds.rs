//! Checkers for the decomposition, equality, classification, generalization,
//! surrogate and normalized-cut statements. Each produces a [`BoundReport`].

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::{Embedding, Encoder, TableEncoder, MEANINGFUL_TOL};
use crate::error::{Error, Result};
use crate::geometry::{custom_partition_error_from_gram, geometry_from_gram, mean_classifier_error_from_gram, ClusterGeometry};
use crate::kernels::Kernel;
use crate::objectives::{population_kcl_from_gram, Z99};
use crate::real::Real;
use crate::similarity::{r_lambda, sim, verify_assumption, ClusterStructure};
use crate::worlds::{FiniteWorld, PairSampler};

/// Tolerance for checks whose terms are all exact sums.
pub const EXACT_CHECK_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    /// "<=" or "==".
    pub relation: String,
    pub lhs: f64,
    pub rhs: f64,
    /// rhs − lhs.
    pub slack: f64,
    pub pass: bool,
    pub tol: f64,
    pub components: BTreeMap<String, f64>,
    /// Half-width of the Monte-Carlo terms, zero when everything is exact.
    pub estimator_noise: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl BoundReport {
    /// lhs ≤ rhs, passing when slack ≥ −tol.
    pub fn inequality(name: &str, lhs: f64, rhs: f64) -> Self {
        Self::build(name, "<=", lhs, rhs)
    }

    /// lhs = rhs, passing when |slack| ≤ tol.
    pub fn equality(name: &str, lhs: f64, rhs: f64) -> Self {
        Self::build(name, "==", lhs, rhs)
    }

    fn build(name: &str, relation: &str, lhs: f64, rhs: f64) -> Self {
        let mut r = Self {
            name: name.to_string(),
            relation: relation.to_string(),
            lhs,
            rhs,
            slack: rhs - lhs,
            pass: false,
            tol: EXACT_CHECK_TOL,
            components: BTreeMap::new(),
            estimator_noise: 0.0,
            notes: Vec::new(),
        };
        r.refresh();
        r
    }

    fn refresh(&mut self) {
        let finite = self.slack.is_finite();
        self.pass = finite && if self.relation == "==" { self.slack.abs() <= self.tol } else { self.slack >= -self.tol };
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self.refresh();
        self
    }

    /// Widens the tolerance by a Monte-Carlo half-width.
    pub fn with_noise(mut self, half_width: f64) -> Self {
        self.estimator_noise = half_width;
        self.tol = EXACT_CHECK_TOL + half_width;
        self.refresh();
        self
    }

    pub fn with_component(mut self, key: &str, value: f64) -> Self {
        self.components.insert(key.to_string(), value);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }
}

fn require_assumption<T: Real>(world: &FiniteWorld<T>, structure: &ClusterStructure<T>) -> Result<()> {
    let report = verify_assumption(world, structure)?;
    if report.pass {
        Ok(())
    } else {
        Err(Error::AssumptionViolated(report.failing_conditions().join("; ")))
    }
}

fn geometry_components(report: BoundReport, g: &ClusterGeometry<impl Real>) -> BoundReport {
    let r = report.with_component("a", g.a_value.f64()).with_component("c", g.c_value.f64());
    match g.delta_min {
        Some(d) => r.with_component("delta_min", d.f64()),
        None => r,
    }
}

/// (δ/2)𝔞(f) + λ𝔠(f) ≤ L_KCL(f; λ) + R(λ), given the kernel Gram matrix of the
/// encoded world. The caller is responsible for the cluster assumption.
pub fn decomposition_from_gram<T: Real>(
    world: &FiniteWorld<T>,
    gram: &[T],
    kernel: &Kernel<T>,
    structure: &ClusterStructure<T>,
) -> Result<BoundReport> {
    let g = geometry_from_gram(world, gram, kernel, structure)?;
    let loss = population_kcl_from_gram(world, gram, structure.lambda);
    let r = r_lambda(world, structure, kernel)?;
    let lhs = structure.delta / T::lit(2.0) * g.a_value + structure.lambda * g.c_value;
    let rhs = loss.value + r.total;
    let mut report = BoundReport::inequality("decomposition", lhs.f64(), rhs.f64())
        .with_component("loss", loss.value.f64())
        .with_component("r_total", r.total.f64())
        .with_component("r_overlap", r.overlap_term.f64())
        .with_component("r_mass", r.mass_term.f64())
        .with_component("r_const", r.const_term.f64())
        .with_component("cross_mass_gap", r.cross_mass_gap.f64())
        .with_component("slack_with_cross_mass", (rhs - lhs + r.cross_mass_gap).f64())
        .with_component("delta", structure.delta.f64())
        .with_component("lambda", structure.lambda.f64());
    report = geometry_components(report, &g);
    if r.cross_mass_gap.f64() > EXACT_CHECK_TOL {
        report = report.with_note(
            "clusters overlap: the mass term λψ(1)Σ P(1−P) under-counts the cross-cluster mass \
             λψ(1)Σ_{i≠j} P_i P_j by cross_mass_gap; slack_with_cross_mass uses the full cross term",
        );
    }
    Ok(report)
}

pub fn check_decomposition<T: Real, E: Encoder<T> + ?Sized>(
    world: &FiniteWorld<T>,
    encoder: &E,
    kernel: &Kernel<T>,
    structure: &ClusterStructure<T>,
) -> Result<BoundReport> {
    require_assumption(world, structure)?;
    decomposition_from_gram(world, &encoder.embed(world)?.gram(kernel), kernel, structure)
}

/// Disjoint clusters, zero cross-cluster joint, sim = δ on every same-cluster pair.
pub fn equality_hypotheses<T: Real>(world: &FiniteWorld<T>, structure: &ClusterStructure<T>) -> Result<()> {
    require_assumption(world, structure)?;
    let clusters = structure.clusters(world)?;
    let mut owner = vec![None; world.len()];
    let mut failed = Vec::new();
    let mut overlap = None;
    for (i, c) in clusters.iter().enumerate() {
        for &x in *c {
            if owner[x].is_some() && overlap.is_none() {
                overlap = Some(x);
            }
            owner[x] = Some(i);
        }
    }
    if let Some(x) = overlap {
        failed.push(format!("clusters overlap at point {}", world.points()[x].id));
    }
    let tol = |v: T| T::lit(T::EXACT_TOL) * (T::one() + v.abs());
    let mut cross = None;
    'outer: for (i, ci) in clusters.iter().enumerate() {
        for (j, cj) in clusters.iter().enumerate() {
            if i == j {
                continue;
            }
            for &x in *ci {
                for &xp in *cj {
                    if world.joint(x, xp) > tol(T::zero()) {
                        cross = Some((x, xp));
                        break 'outer;
                    }
                }
            }
        }
    }
    if let Some((x, xp)) = cross {
        failed.push(format!("nonzero cross-cluster joint w({}, {})", world.points()[x].id, world.points()[xp].id));
    }
    let mut off = None;
    'sim: for c in &clusters {
        for &x in *c {
            for &xp in *c {
                let s = sim(world, x, xp, structure.lambda);
                if (s - structure.delta).abs() > tol(structure.delta) {
                    off = Some((x, xp, s));
                    break 'sim;
                }
            }
        }
    }
    if let Some((x, xp, s)) = off {
        failed.push(format!(
            "sim({}, {}) = {} differs from delta = {} (sim not constant at delta within clusters)",
            world.points()[x].id,
            world.points()[xp].id,
            s,
            structure.delta
        ));
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Hypothesis(failed))
    }
}

/// |L_KCL − ((δ/2)𝔞 + λ𝔠 − R(λ))| ≤ tol, after the hypothesis checks.
pub fn check_equality_case<T: Real, E: Encoder<T> + ?Sized>(
    world: &FiniteWorld<T>,
    encoder: &E,
    kernel: &Kernel<T>,
    structure: &ClusterStructure<T>,
) -> Result<BoundReport> {
    equality_hypotheses(world, structure)?;
    equality_from_gram(world, &encoder.embed(world)?.gram(kernel), kernel, structure)
}

pub fn equality_from_gram<T: Real>(
    world: &FiniteWorld<T>,
    gram: &[T],
    kernel: &Kernel<T>,
    structure: &ClusterStructure<T>,
) -> Result<BoundReport> {
    let d = decomposition_from_gram(world, gram, kernel, structure)?;
    let mut r = BoundReport::equality("equality-case", d.lhs, d.rhs);
    r.components = d.components;
    Ok(r)
}

fn meaningful_delta<T: Real>(g: &ClusterGeometry<T>) -> Result<T> {
    let dm = g.delta_min.ok_or(Error::TooFewClusters(g.masses.len()))?;
    if dm.f64() > MEANINGFUL_TOL {
        Ok(dm)
    } else {
        Err(Error::NotMeaningful { delta_min: dm.f64(), tol: MEANINGFUL_TOL })
    }
}

/// 8(K−1)/(Δ_min·minᵢ P(Mᵢ)).
fn classification_coefficient<T: Real>(g: &ClusterGeometry<T>, dm: T) -> T {
    let k = T::lit(g.masses.len() as f64);
    let min_p = g.masses.iter().copied().fold(T::infinity(), T::min);
    T::lit(8.0) * (k - T::one()) / (dm * min_p)
}

/// Mean-classifier error ≤ 8(K−1)𝔞(f)/(Δ_min(f)·minᵢ P(Mᵢ)) for a meaningful encoder.
/// With `partition`, the error is measured against the labeling it induces.
pub fn classification_from_gram<T: Real>(
    world: &FiniteWorld<T>,
    gram: &[T],
    kernel: &Kernel<T>,
    structure: &ClusterStructure<T>,
    partition: Option<&[Vec<usize>]>,
) -> Result<BoundReport> {
    let g = geometry_from_gram(world, gram, kernel, structure)?;
    let dm = meaningful_delta(&g)?;
    let err = match partition {
        Some(p) => custom_partition_error_from_gram(world, gram, kernel, structure, p)?,
        None => mean_classifier_error_from_gram(world, gram, kernel, structure)?,
    };
    let name = if partition.is_some() { "classification-partition" } else { "classification" };
    let report = BoundReport::inequality(name, err.f64(), (classification_coefficient(&g, dm) * g.a_value).f64())
        .with_component("min_mass", g.masses.iter().copied().fold(T::infinity(), T::min).f64())
        .with_component("k", g.masses.len() as f64);
    Ok(geometry_components(report, &g))
}

pub fn check_classification_bound<T: Real, E: Encoder<T> + ?Sized>(
    world: &FiniteWorld<T>,
    encoder: &E,
    kernel: &Kernel<T>,
    structure: &ClusterStructure<T>,
) -> Result<BoundReport> {
    classification_from_gram(world, &encoder.embed(world)?.gram(kernel), kernel, structure, None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenBoundConfig {
    /// Pairs per sample; even.
    pub n: usize,
    pub epsilon: f64,
    pub lambda: f64,
    pub rademacher_draws: usize,
    /// Random permutations tried besides the identity.
    pub permutation_samples: usize,
    /// Size of the random proxy class standing in for F.
    pub class_size: usize,
    /// Output dimension of the proxy encoders.
    pub dim: usize,
    pub seed: u64,
}

impl Default for GenBoundConfig {
    fn default() -> Self {
        Self { n: 64, epsilon: 0.1, lambda: 1.0, rademacher_draws: 200, permutation_samples: 8, class_size: 1000, dim: 4, seed: 0 }
    }
}

impl GenBoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.n % 2 != 0 {
            return Err(Error::OddSampleCount(self.n));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::Config(format!("epsilon must lie in (0, 1/2), got {}", self.epsilon)));
        }
        if self.rademacher_draws < 2 || self.class_size == 0 || self.dim == 0 {
            return Err(Error::Config("rademacher_draws >= 2, class_size >= 1 and dim >= 1 are required".into()));
        }
        Ok(())
    }
}

/// Independent generator for stream `stream` of a seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A finite set of encoders standing in for the class F, held as the N×N
/// inner-product tables q(x, x') = f(x)ᵀf(x').
#[derive(Clone, Debug)]
pub struct ProxyClass<T> {
    n_points: usize,
    tables: Vec<Vec<T>>,
}

impl<T: Real> ProxyClass<T> {
    pub fn from_embeddings(embeddings: &[Embedding<T>]) -> Result<Self> {
        let n_points = embeddings.first().map_or(0, |e| e.len());
        if embeddings.iter().any(|e| e.len() != n_points) {
            return Err(Error::Config("proxy encoders disagree on the number of points".into()));
        }
        Ok(Self { n_points, tables: embeddings.iter().map(|e| e.inner_products()).collect() })
    }

    /// `size` random table encoders with i.i.d. normal initialization.
    pub fn random_tables(world: &FiniteWorld<T>, size: usize, dim: usize, seed: u64) -> Result<Self> {
        let embeddings = (0..size)
            .map(|i| TableEncoder::random(world.len(), dim, &mut stream_rng(seed, i as u64)).embed(world))
            .collect::<Result<Vec<_>>>()?;
        Self::from_embeddings(&embeddings)
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    /// Tables of k(f(x), f(x')) for every member.
    pub fn kernel_tables(&self, kernel: &Kernel<T>) -> Vec<Vec<T>> {
        self.tables.iter().map(|t| t.iter().map(|v| kernel.psi_dot(*v)).collect()).collect()
    }

    fn sup_signed(&self, idx: &[(usize, usize)], sigma: &[bool], scale: f64) -> f64 {
        let n = self.n_points;
        self.tables
            .iter()
            .map(|t| {
                idx.iter().zip(sigma).fold(0.0, |s, (&(a, b), &pos)| {
                    let q = t[a * n + b].f64();
                    if pos {
                        s + q
                    } else {
                        s - q
                    }
                }) * scale
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (k - 1.0).max(1.0);
    (mean, (var / k).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RademacherEstimate {
    pub n: usize,
    pub r_plus: f64,
    pub r_plus_se: f64,
    /// Largest estimate over the identity and the sampled permutations.
    pub r_minus: f64,
    pub r_minus_identity: f64,
    pub r_minus_identity_se: f64,
    /// Estimate per permutation, identity first.
    pub r_minus_per_permutation: Vec<f64>,
    /// Upper 99% confidence values, capped at the trivial bound 1.
    pub r_plus_upper: f64,
    pub r_minus_upper: f64,
    pub class_size: usize,
    pub notes: Vec<String>,
}

/// Monte-Carlo estimates of ℛₙ⁺(Q) and ℛ_{n/2}⁻(Q; s) over a proxy class.
/// Draw `t` uses stream `t` of `cfg.seed`, shared across permutations.
pub fn estimate_rademacher<T: Real>(world: &FiniteWorld<T>, class: &ProxyClass<T>, cfg: &GenBoundConfig) -> Result<RademacherEstimate> {
    cfg.validate()?;
    let n = cfg.n;
    let sampler = PairSampler::new(world);
    let mut perm_rng = stream_rng(cfg.seed, u64::MAX);
    let mut perms: Vec<Vec<usize>> = vec![(0..n).collect()];
    for _ in 0..cfg.permutation_samples {
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(&mut perm_rng);
        perms.push(p);
    }
    let draws: Vec<(f64, Vec<f64>)> = (0..cfg.rademacher_draws)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(cfg.seed, t as u64);
            let pairs = sampler.pairs(&mut rng, n);
            let sigma: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            let plus = class.sup_signed(&pairs, &sigma, 1.0 / n as f64);
            let sigma_half = &sigma[..n / 2];
            let minus = perms
                .iter()
                .map(|s| {
                    let idx: Vec<(usize, usize)> = (0..n / 2).map(|i| (pairs[s[2 * i]].0, pairs[s[2 * i + 1]].1)).collect();
                    class.sup_signed(&idx, sigma_half, 2.0 / n as f64)
                })
                .collect();
            (plus, minus)
        })
        .collect();
    let plus: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let (r_plus, r_plus_se) = mean_se(&plus);
    let per_perm: Vec<(f64, f64)> = (0..perms.len()).map(|p| mean_se(&draws.iter().map(|d| d.1[p]).collect::<Vec<_>>())).collect();
    let r_minus = per_perm.iter().map(|m| m.0).fold(f64::NEG_INFINITY, f64::max);
    let (r_minus_identity, r_minus_identity_se) = per_perm[0];
    Ok(RademacherEstimate {
        n,
        r_plus,
        r_plus_se,
        r_minus,
        r_minus_identity,
        r_minus_identity_se,
        r_minus_per_permutation: per_perm.iter().map(|m| m.0).collect(),
        r_plus_upper: (r_plus + Z99 * r_plus_se).min(1.0),
        r_minus_upper: (r_minus_identity + Z99 * r_minus_identity_se).max(r_minus).min(1.0),
        class_size: class.len(),
        notes: vec![
            format!("proxy class of {} random table encoders; suprema over it under-estimate the class supremum", class.len()),
            format!("r_minus is a max over the identity and {} sampled permutations, not over all of S_n", cfg.permutation_samples),
            "each permutation pairs disjoint indices, so every block sum has the same i.i.d. law; r_minus_upper is a 99% upper confidence value".into(),
        ],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenTerms {
    pub rademacher_term: f64,
    pub positive_concentration: f64,
    pub negative_concentration: f64,
    pub total: f64,
}

/// Gen(n, λ, ε) = 2ρ(ℛ⁺ + λℛ⁻) + √(2b²log(2/ε)/n) + λ√(10b²log(2/ε)/n).
pub fn gen_bound<T: Real>(kernel: &Kernel<T>, n: usize, lambda: f64, epsilon: f64, r_plus: f64, r_minus: f64) -> GenTerms {
    let (rho, b) = (kernel.rho().f64(), kernel.b().f64());
    let log_term = (2.0 / epsilon).ln() / n as f64;
    let rademacher_term = 2.0 * rho * (r_plus + lambda * r_minus);
    let positive_concentration = (2.0 * b * b * log_term).sqrt();
    let negative_concentration = lambda * (10.0 * b * b * log_term).sqrt();
    GenTerms {
        rademacher_term,
        positive_concentration,
        negative_concentration,
        total: rademacher_term + positive_concentration + negative_concentration,
    }
}

/// 99% one-sided binomial allowance for an observed rate against `p` over `trials`.
pub fn binomial_slack(p: f64, trials: usize) -> f64 {
    Z99 * (p * (1.0 - p) / trials as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationOutcome {
    pub report: BoundReport,
    pub rademacher: RademacherEstimate,
    pub gen: GenTerms,
    pub gen_conservative: GenTerms,
    /// Per trial: (sup (L − L̂), sup (L̂ − L)) over the proxy class.
    pub deviations: Vec<(f64, f64)>,
}

/// Over `trials` independent samples, the fraction where sup_f |L̂_KCL − L_KCL|
/// over the proxy class exceeds Gen must stay within ε plus the 99% binomial allowance.
pub fn check_generalization<T: Real>(
    world: &FiniteWorld<T>,
    kernel: &Kernel<T>,
    cfg: &GenBoundConfig,
    trials: usize,
) -> Result<GeneralizationOutcome> {
    cfg.validate()?;
    if trials == 0 {
        return Err(Error::Config("at least one trial is required".into()));
    }
    let class = ProxyClass::random_tables(world, cfg.class_size, cfg.dim, cfg.seed)?;
    let rademacher = estimate_rademacher(world, &class, cfg)?;
    let gen = gen_bound(kernel, cfg.n, cfg.lambda, cfg.epsilon, rademacher.r_plus, rademacher.r_minus);
    let gen_conservative = gen_bound(kernel, cfg.n, cfg.lambda, cfg.epsilon, rademacher.r_plus_upper, rademacher.r_minus_upper);

    let np = world.len();
    let lambda = T::lit(cfg.lambda);
    let ktables = class.kernel_tables(kernel);
    let population: Vec<f64> = ktables.iter().map(|t| population_kcl_from_gram(world, t, lambda).value.f64()).collect();
    let sampler = PairSampler::new(world);
    let n = cfg.n as f64;
    let deviations: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(cfg.seed ^ 0x5eed_7a1a, t as u64);
            let pairs = sampler.pairs(&mut rng, cfg.n);
            let (mut ca, mut cb) = (vec![0.0; np], vec![0.0; np]);
            for &(a, b) in &pairs {
                ca[a] += 1.0;
                cb[b] += 1.0;
            }
            let active_a: Vec<usize> = (0..np).filter(|&x| ca[x] > 0.0).collect();
            let active_b: Vec<usize> = (0..np).filter(|&x| cb[x] > 0.0).collect();
            let (mut up, mut down) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (table, pop) in ktables.iter().zip(&population) {
                let diag: f64 = pairs.iter().map(|&(a, b)| table[a * np + b].f64()).sum();
                let all: f64 =
                    active_a.iter().map(|&x| ca[x] * active_b.iter().map(|&xp| cb[xp] * table[x * np + xp].f64()).sum::<f64>()).sum();
                let emp = -diag / n + cfg.lambda * (all - diag) / (n * (n - 1.0));
                up = up.max(pop - emp);
                down = down.max(emp - pop);
            }
            (up, down)
        })
        .collect();
    let rate = |f: &dyn Fn(&(f64, f64)) -> bool| deviations.iter().filter(|d| f(d)).count() as f64 / trials as f64;
    let g = gen.total;
    let upper_rate = rate(&|d| d.0 > g);
    let lower_rate = rate(&|d| d.1 > g);
    let abs_rate = rate(&|d| d.0.max(d.1) > g);
    let allowance = cfg.epsilon + binomial_slack(cfg.epsilon, trials);
    let max_dev = deviations.iter().map(|d| d.0.max(d.1)).fold(0.0, f64::max);
    let mean_dev = deviations.iter().map(|d| d.0.max(d.1)).sum::<f64>() / trials as f64;
    let report = BoundReport::inequality("generalization", abs_rate, allowance)
        .with_tol(0.0)
        .with_component("n", cfg.n as f64)
        .with_component("epsilon", cfg.epsilon)
        .with_component("lambda", cfg.lambda)
        .with_component("trials", trials as f64)
        .with_component("gen", g)
        .with_component("gen_conservative", gen_conservative.total)
        .with_component("r_plus", rademacher.r_plus)
        .with_component("r_minus", rademacher.r_minus)
        .with_component("upper_violation_rate", upper_rate)
        .with_component("lower_violation_rate", lower_rate)
        .with_component("two_sided_violation_rate", abs_rate)
        .with_component("max_sup_deviation", max_dev)
        .with_component("mean_sup_deviation", mean_dev)
        .with_note("Rademacher terms are estimated on a finite proxy class")
        .with_note("the violation rate counts trials where either one-sided supremum exceeds Gen");
    Ok(GeneralizationOutcome { report, rademacher, gen, gen_conservative, deviations })
}

/// Error of f̂ ≤ 8(K−1)/(Δ_min(f̂)·min P)·(L_KCL(f) + (1 − δ/2)𝔞(f̂) − λ𝔠(f̂) + R(λ) + 2Gen),
/// with f the reference and f̂ the trained encoder.
pub fn check_surrogate<T: Real>(
    world: &FiniteWorld<T>,
    kernel: &Kernel<T>,
    structure: &ClusterStructure<T>,
    gen: f64,
    reference: &Embedding<T>,
    trained: &Embedding<T>,
) -> Result<BoundReport> {
    require_assumption(world, structure)?;
    let trained_gram = trained.gram(kernel);
    let g = geometry_from_gram(world, &trained_gram, kernel, structure)?;
    let dm = meaningful_delta(&g)?;
    let err = mean_classifier_error_from_gram(world, &trained_gram, kernel, structure)?;
    let reference_loss = population_kcl_from_gram(world, &reference.gram(kernel), structure.lambda).value;
    let r = r_lambda(world, structure, kernel)?;
    let inner = reference_loss + (T::one() - structure.delta / T::lit(2.0)) * g.a_value - structure.lambda * g.c_value
        + r.total
        + T::lit(2.0 * gen);
    let rhs = classification_coefficient(&g, dm) * inner;
    let report = BoundReport::inequality("surrogate", err.f64(), rhs.f64())
        .with_component("reference_loss", reference_loss.f64())
        .with_component("r_total", r.total.f64())
        .with_component("gen", gen)
        .with_component("inner", inner.f64())
        .with_component("lambda", structure.lambda.f64())
        .with_component("delta", structure.delta.f64());
    Ok(geometry_components(report, &g))
}

/// Trace identity −L_KCL = Σ pw·pw·sim·k and the normalized-cut rearrangement for the
/// partition `cells` (disjoint, covering, each of positive volume).
pub fn check_normalized_cut<T: Real>(
    world: &FiniteWorld<T>,
    gram: &[T],
    lambda: T,
    cells: &[Vec<usize>],
) -> Result<(BoundReport, BoundReport)> {
    let n = world.len();
    let pw = world.point_masses();
    let mut owner = vec![usize::MAX; n];
    for (i, c) in cells.iter().enumerate() {
        if c.is_empty() {
            return Err(Error::EmptyCluster(i));
        }
        for &x in c {
            if x >= n || owner[x] != usize::MAX {
                return Err(Error::Partition(format!("cell {i}: point {x} is out of range or repeated")));
            }
            owner[x] = i;
        }
    }
    if let Some(x) = owner.iter().position(|&o| o == usize::MAX) {
        return Err(Error::Partition(format!("point {} is in no cell", world.points()[x].id)));
    }

    let loss = population_kcl_from_gram(world, gram, lambda);
    let mut trace_side = T::zero();
    for x in 0..n {
        for xp in 0..n {
            trace_side += pw[x] * pw[xp] * sim(world, x, xp, lambda) * gram[x * n + xp];
        }
    }
    let trace = BoundReport::equality("ncut-trace", trace_side.f64(), (-loss.value).f64())
        .with_component("loss", loss.value.f64())
        .with_component("lambda", lambda.f64());

    let k = cells.len();
    let vol: Vec<T> = cells.iter().map(|c| c.iter().fold(T::zero(), |s, &x| s + pw[x])).collect();
    if let Some(i) = vol.iter().position(|v| !(*v > T::zero())) {
        return Err(Error::Partition(format!("cell {i} has zero volume")));
    }
    let mut cut = T::zero();
    for (i, c) in cells.iter().enumerate() {
        let mut w = T::zero();
        for &x in c {
            for xp in (0..n).filter(|&xp| owner[xp] != i) {
                w += sim(world, x, xp, lambda) * pw[x] * pw[xp];
            }
        }
        cut += w / vol[i];
    }
    // A[x][x'] = sim(x, x')·P_X(x') acts on L²(P_X); U[x][i] = 1[x ∈ Vᵢ]/√vol(Vᵢ).
    let a: Vec<T> = (0..n * n).map(|idx| sim(world, idx / n, idx % n, lambda) * pw[idx % n]).collect();
    let u: Vec<T> = (0..n * k).map(|idx| if owner[idx / k] == idx % k { T::one() / vol[idx % k].sqrt() } else { T::zero() }).collect();
    let mut tr = T::zero();
    for i in 0..k {
        for x in 0..n {
            let au = (0..n).fold(T::zero(), |s, xp| s + a[x * n + xp] * u[xp * k + i]);
            tr += pw[x] * u[x * k + i] * au;
        }
    }
    let identity_rhs = -tr + (T::one() - lambda) * T::lit(k as f64);
    let ncut = BoundReport::equality("ncut-identity", cut.f64(), identity_rhs.f64())
        .with_component("trace", tr.f64())
        .with_component("k", k as f64)
        .with_component("lambda", lambda.f64());
    Ok((trace, ncut))
}

/// Random partition of the world's points into `k` nonempty cells.
pub fn random_partition<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut cells = vec![Vec::new(); k];
    for (pos, &x) in order.iter().enumerate() {
        let cell = if pos < k { pos } else { rng.random_range(0..k) };
        cells[cell].push(x);
    }
    for c in &mut cells {
        c.sort_unstable();
    }
    cells
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worlds::{build_disjoint_balls, build_overlap_balls, BallWorldSpec};

    fn two_balls() -> FiniteWorld<f64> {
        build_disjoint_balls(&BallWorldSpec::disjoint(2, 3)).unwrap()
    }

    #[test]
    fn report_semantics() {
        let r = BoundReport::inequality("x", 1.0, 1.0 - 5e-10);
        assert!(r.pass);
        assert!(!BoundReport::inequality("x", 1.0, 0.9).pass);
        assert!(BoundReport::equality("x", 1.0, 1.0 + 5e-10).pass);
        assert!(!BoundReport::equality("x", 1.0, 1.1).pass);
        assert!(BoundReport::inequality("x", 1.0, 0.95).with_noise(0.1).pass);
        assert!(!BoundReport::inequality("x", f64::NAN, 0.0).pass);
        let text = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<BoundReport>(&text).unwrap(), r);
    }

    #[test]
    fn decomposition_hand_examples() {
        let w = two_balls();
        let s = ClusterStructure::new(&w, 1.0, 1.0);
        let lin = Kernel::linear();
        let c = TableEncoder::constant(w.len(), vec![1.0, 0.0]).unwrap();
        let r = check_decomposition(&w, &c, &lin, &s).unwrap();
        assert!((r.lhs - 0.5).abs() < 1e-12 && (r.rhs - 0.5).abs() < 1e-12);
        let a = TableEncoder::by_label(&w, &[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let r = check_decomposition(&w, &a, &lin, &s).unwrap();
        assert!((r.lhs + 0.5).abs() < 1e-12 && (r.rhs + 0.5).abs() < 1e-12);
        assert!(r.slack.abs() < 1e-12);
        let bad = ClusterStructure::new(&w, 1.0, 1.5);
        assert!(matches!(check_decomposition(&w, &c, &lin, &bad), Err(Error::AssumptionViolated(m)) if m.contains("(B)")));
    }

    #[test]
    fn equality_hypothesis_failures() {
        let o: FiniteWorld<f64> = build_overlap_balls(&BallWorldSpec::overlap(1)).unwrap();
        let s = ClusterStructure::tight(&o, 1.0).unwrap();
        let c = TableEncoder::constant(o.len(), vec![1.0]).unwrap();
        match check_equality_case(&o, &c, &Kernel::linear(), &s) {
            Err(Error::Hypothesis(list)) => assert!(list.iter().any(|m| m.contains("overlap"))),
            other => panic!("{other:?}"),
        }
        let w = two_balls();
        let mut file = w.to_file();
        file.joint[0][1] += 0.5;
        file.joint[1][0] += 0.5;
        file.joint[0][0] -= 1.0;
        let p = file.into_world::<f64>().unwrap();
        let s = ClusterStructure::tight(&p, 1.0).unwrap();
        let e = TableEncoder::constant(p.len(), vec![1.0]).unwrap();
        match check_equality_case(&p, &e, &Kernel::linear(), &s) {
            Err(Error::Hypothesis(list)) => assert!(list.len() == 1 && list[0].contains("not constant"), "{list:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn antipodal_classification_point() {
        let w = two_balls();
        let s = ClusterStructure::new(&w, 1.0, 1.0);
        let a = TableEncoder::by_label(&w, &[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let r = check_classification_bound(&w, &a, &Kernel::linear(), &s).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
        assert!(r.pass);
        let c = TableEncoder::constant(w.len(), vec![1.0, 0.0]).unwrap();
        assert!(matches!(check_classification_bound(&w, &c, &Kernel::linear(), &s), Err(Error::NotMeaningful { .. })));
    }

    #[test]
    fn gen_bound_arithmetic() {
        let lin = Kernel::<f64>::linear();
        let a = gen_bound(&lin, 64, 0.0, 0.1, 0.2, 0.3);
        assert_eq!(a.negative_concentration, 0.0);
        assert!((a.rademacher_term - 0.4).abs() < 1e-15);
        let b = gen_bound(&lin, 128, 0.0, 0.1, 0.2, 0.3);
        assert!((a.positive_concentration / b.positive_concentration - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rademacher_single_encoder_is_centered() {
        let w = two_balls();
        let class = ProxyClass::random_tables(&w, 1, 3, 1).unwrap();
        let cfg = GenBoundConfig { n: 32, rademacher_draws: 2000, permutation_samples: 0, ..Default::default() };
        let est = estimate_rademacher(&w, &class, &cfg).unwrap();
        assert!(est.r_plus.abs() <= 3.0 * est.r_plus_se, "{est:?}");
    }

    #[test]
    fn permutation_max_is_monotone() {
        let w = two_balls();
        let class = ProxyClass::random_tables(&w, 20, 3, 2).unwrap();
        let one = GenBoundConfig { n: 16, rademacher_draws: 50, permutation_samples: 0, ..Default::default() };
        let many = GenBoundConfig { permutation_samples: 64, ..one.clone() };
        let a = estimate_rademacher(&w, &class, &one).unwrap();
        let b = estimate_rademacher(&w, &class, &many).unwrap();
        assert_eq!(a.r_minus_identity, b.r_minus_identity);
        assert!(b.r_minus >= a.r_minus);
    }

    #[test]
    fn ncut_on_balls() {
        let w = two_balls();
        let gram = TableEncoder::random(w.len(), 3, &mut stream_rng(3, 0)).embed(&w).unwrap().gram(&Kernel::linear());
        let (t, c) = check_normalized_cut(&w, &gram, 1.0, w.clusters()).unwrap();
        assert!(t.pass && c.pass, "{t:?} {c:?}");
        // balls as cells: W(Vᵢ, Vᵢᶜ) = −λ·P(Vᵢ)P(Vᵢᶜ), so the cut sum is −λ(K − 1).
        assert!((c.lhs + 1.0).abs() < 1e-12);
        let all: Vec<usize> = (0..w.len()).collect();
        let (_, single) = check_normalized_cut(&w, &gram, 0.5, &[all]).unwrap();
        assert_eq!(single.lhs, 0.0);
        assert!(single.pass);
        assert!(matches!(check_normalized_cut(&w, &gram, 1.0, &[vec![0, 1, 2], vec![]]), Err(Error::EmptyCluster(1))));
    }
}
