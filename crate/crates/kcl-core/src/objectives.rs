//! Population and empirical contrastive losses on finite worlds, and the
//! inequalities that relate them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::BoundReport;
use crate::encoders::{Embedding, Encoder};
use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::real::Real;
use crate::worlds::{FiniteWorld, PairSampler};

/// z-value of the two-sided 99% normal interval.
pub const Z99: f64 = 2.576;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Estimator {
    Exact,
    MonteCarlo { samples: usize, seed: u64, half_width: f64 },
}

impl Estimator {
    pub fn half_width(&self) -> f64 {
        match self {
            Estimator::Exact => 0.0,
            Estimator::MonteCarlo { half_width, .. } => *half_width,
        }
    }
}

/// value = −positive_term + λ·negative_term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossValue<T> {
    pub value: T,
    pub positive_term: T,
    pub negative_term: T,
    pub estimator: Estimator,
}

impl<T: Real> LossValue<T> {
    fn exact(positive_term: T, negative_term: T, lambda: T) -> Self {
        Self { value: -positive_term + lambda * negative_term, positive_term, negative_term, estimator: Estimator::Exact }
    }
}

/// Exact L_KCL from the N×N kernel Gram matrix of the encoded world.
pub fn population_kcl_from_gram<T: Real>(world: &FiniteWorld<T>, gram: &[T], lambda: T) -> LossValue<T> {
    let n = world.len();
    let pw = world.point_masses();
    let (mut pos, mut neg) = (T::zero(), T::zero());
    for x in 0..n {
        let (mut p_row, mut n_row) = (T::zero(), T::zero());
        for xp in 0..n {
            let k = gram[x * n + xp];
            p_row += world.joint(x, xp) * world.nu(xp) * k;
            n_row += pw[xp] * k;
        }
        pos += p_row * world.nu(x);
        neg += n_row * pw[x];
    }
    LossValue::exact(pos, neg, lambda)
}

/// L_KCL(f; λ) = −E₊[k(f(x), f(x⁺))] + λE₋[k(f(x), f(x⁻))] by exact double sums.
pub fn population_kcl<T: Real, E: Encoder<T> + ?Sized>(
    world: &FiniteWorld<T>,
    encoder: &E,
    kernel: &Kernel<T>,
    lambda: T,
) -> Result<LossValue<T>> {
    Ok(population_kcl_from_gram(world, &encoder.embed(world)?.gram(kernel), lambda))
}

/// Empirical loss over sampled index pairs, given the N×N Gram matrix.
/// The cross term sums over i ≠ j only.
pub fn empirical_kcl_from_gram<T: Real>(n_points: usize, gram: &[T], pairs: &[(usize, usize)], lambda: T) -> Result<LossValue<T>> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::TooFewPairs(n));
    }
    let diag = pairs.iter().fold(T::zero(), |s, &(a, b)| s + gram[a * n_points + b]);
    let all = if n * n <= n_points * n_points {
        pairs.iter().fold(T::zero(), |s, &(a, _)| pairs.iter().fold(s, |s, &(_, b)| s + gram[a * n_points + b]))
    } else {
        let (mut ca, mut cb) = (vec![0usize; n_points], vec![0usize; n_points]);
        for &(a, b) in pairs {
            ca[a] += 1;
            cb[b] += 1;
        }
        let mut s = T::zero();
        for x in (0..n_points).filter(|&x| ca[x] > 0) {
            let row = (0..n_points).filter(|&xp| cb[xp] > 0).fold(T::zero(), |r, xp| r + T::lit(cb[xp] as f64) * gram[x * n_points + xp]);
            s += T::lit(ca[x] as f64) * row;
        }
        s
    };
    let nf = T::lit(n as f64);
    let pos = diag / nf;
    let neg = (all - diag) / (nf * (nf - T::one()));
    Ok(LossValue::exact(pos, neg, lambda))
}

/// L̂_KCL = −(1/n)Σᵢ k(f(Xᵢ), f(Xᵢ')) + λ/(n(n−1))·Σ_{i≠j} k(f(Xᵢ), f(Xⱼ')).
pub fn empirical_kcl<T: Real, E: Encoder<T> + ?Sized>(
    world: &FiniteWorld<T>,
    pairs: &[(usize, usize)],
    encoder: &E,
    kernel: &Kernel<T>,
    lambda: T,
) -> Result<LossValue<T>> {
    if pairs.len() < 2 {
        return Err(Error::TooFewPairs(pairs.len()));
    }
    let gram = encoder.embed(world)?.gram(kernel);
    empirical_kcl_from_gram(world.len(), &gram, pairs, lambda)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoNceConfig<T> {
    pub tau: T,
    pub m: usize,
    pub lambda: T,
}

impl<T: Real> InfoNceConfig<T> {
    pub fn new(tau: T, m: usize, lambda: T) -> Result<Self> {
        if !(tau > T::zero()) || !tau.is_finite() {
            return Err(Error::Config(format!("tau must be positive, got {tau}")));
        }
        if m < 1 {
            return Err(Error::Config("at least one negative sample is required".into()));
        }
        Ok(Self { tau, m, lambda })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NceVariant {
    /// L_NCE: positive logit inside the log, unit weight.
    Standard,
    /// L̃_NCE(τ, λ): positive logit inside the log, weight λ.
    Decoupled,
    /// L̃_∞-NCE(τ, λ): λE_x[log E_{x'}[e^{f(x)ᵀf(x')/τ}]].
    Asymptotic,
    /// Negatives only inside the log, weight λ.
    Dcl,
}

/// How the M-negative expectation is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeSampling {
    /// Largest number of negative multisets summed exactly.
    pub max_exact_terms: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for NegativeSampling {
    fn default() -> Self {
        Self { max_exact_terms: 100_000, samples: 4096, seed: 0 }
    }
}

/// C(m + k − 1, k − 1) as f64.
fn multiset_count(k: usize, m: usize) -> f64 {
    (1..k).fold(1.0, |acc, i| acc * (m + i) as f64 / i as f64)
}

/// Every multiset of `m` draws from the support with its multinomial probability,
/// returned as (probability, Σ counts·e^{logit − shift}).
fn enumerate_negatives<T: Real>(support: &[(T, T)], m: usize) -> Vec<(T, T)> {
    let ln_fact: Vec<f64> = (0..=m)
        .scan(0.0, |s, i| {
            if i > 0 {
                *s += (i as f64).ln();
            }
            Some(*s)
        })
        .collect();
    let ln_p: Vec<f64> = support.iter().map(|(p, _)| p.f64().ln()).collect();
    let mut out = Vec::new();
    let mut counts = vec![0usize; support.len()];
    fn rec<T: Real>(
        idx: usize,
        left: usize,
        counts: &mut Vec<usize>,
        support: &[(T, T)],
        ln_p: &[f64],
        ln_fact: &[f64],
        m: usize,
        out: &mut Vec<(T, T)>,
    ) {
        if idx + 1 == support.len() {
            counts[idx] = left;
            let mut lp = ln_fact[m];
            let mut s = T::zero();
            for (j, &c) in counts.iter().enumerate() {
                if c > 0 {
                    lp += c as f64 * ln_p[j] - ln_fact[c];
                    s += T::lit(c as f64) * support[j].1;
                }
            }
            out.push((T::lit(lp.exp()), s));
            return;
        }
        for c in 0..=left {
            counts[idx] = c;
            rec(idx + 1, left - c, counts, support, ln_p, ln_fact, m, out);
        }
    }
    rec(0, m, &mut counts, support, &ln_p, &ln_fact, m, &mut out);
    out
}

/// E₊[f(x)ᵀf(x⁺)]/τ and the variant's log term, from inner products.
fn nce_terms<T: Real>(
    world: &FiniteWorld<T>,
    ip: &[T],
    tau: T,
    m: usize,
    variant: NceVariant,
    sampling: &NegativeSampling,
) -> (T, T, Estimator) {
    let n = world.len();
    let pw = world.point_masses();
    let logit = |x: usize, xp: usize| ip[x * n + xp] / tau;
    let mut pos = T::zero();
    for x in 0..n {
        for xp in 0..n {
            pos += world.pair_mass(x, xp) * logit(x, xp);
        }
    }
    let shift = T::one() / tau;
    let exps: Vec<T> = ip.iter().map(|v| (*v / tau - shift).exp()).collect();

    if variant == NceVariant::Asymptotic {
        let mut neg = T::zero();
        for x in 0..n {
            let inner = (0..n).fold(T::zero(), |s, xp| s + pw[xp] * exps[x * n + xp]);
            neg += pw[x] * (inner.ln() + shift);
        }
        return (pos, neg, Estimator::Exact);
    }

    let with_positive = matches!(variant, NceVariant::Standard | NceVariant::Decoupled);
    let support_idx: Vec<usize> = (0..n).filter(|&x| pw[x] > T::zero()).collect();
    let log_term = |x: usize, xplus: usize, s: T| -> T {
        let v = if with_positive { exps[x * n + xplus] + s } else { s };
        v.ln() + shift
    };

    if multiset_count(support_idx.len(), m) <= sampling.max_exact_terms as f64 {
        let mut neg = T::zero();
        for x in 0..n {
            let support: Vec<(T, T)> = support_idx.iter().map(|&j| (pw[j], exps[x * n + j])).collect();
            let multisets = enumerate_negatives(&support, m);
            if with_positive {
                for xplus in 0..n {
                    let pm = world.pair_mass(x, xplus);
                    if pm > T::zero() {
                        let e = multisets.iter().fold(T::zero(), |a, (p, s)| a + *p * log_term(x, xplus, *s));
                        neg += pm * e;
                    }
                }
            } else {
                let e = multisets.iter().fold(T::zero(), |a, (p, s)| a + *p * log_term(x, x, *s));
                neg += pw[x] * e;
            }
        }
        return (pos, neg, Estimator::Exact);
    }

    let sampler = PairSampler::new(world);
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let mut ys = Vec::with_capacity(sampling.samples);
    for _ in 0..sampling.samples {
        let mut y = T::zero();
        for x in 0..n {
            let s = (0..m).fold(T::zero(), |a, _| a + exps[x * n + sampler.point(&mut rng)]);
            if with_positive {
                for xplus in 0..n {
                    let pm = world.pair_mass(x, xplus);
                    if pm > T::zero() {
                        y += pm * log_term(x, xplus, s);
                    }
                }
            } else {
                y += pw[x] * log_term(x, x, s);
            }
        }
        ys.push(y.f64());
    }
    let k = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / k;
    let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / (k - 1.0).max(1.0);
    let half_width = Z99 * (var / k).sqrt();
    (pos, T::lit(mean), Estimator::MonteCarlo { samples: sampling.samples, seed: sampling.seed, half_width })
}

/// InfoNCE-family loss from the encoded world. `positive_term` is E₊[f(x)ᵀf(x⁺)/τ]
/// and `negative_term` the expected log term; the standard variant uses unit weight.
pub fn info_nce_from_embedding<T: Real>(
    world: &FiniteWorld<T>,
    embedding: &Embedding<T>,
    cfg: &InfoNceConfig<T>,
    variant: NceVariant,
    sampling: &NegativeSampling,
) -> LossValue<T> {
    let ip = embedding.inner_products();
    info_nce_from_inner_products(world, &ip, cfg, variant, sampling)
}

fn info_nce_from_inner_products<T: Real>(
    world: &FiniteWorld<T>,
    ip: &[T],
    cfg: &InfoNceConfig<T>,
    variant: NceVariant,
    sampling: &NegativeSampling,
) -> LossValue<T> {
    let (pos, neg, estimator) = nce_terms(world, ip, cfg.tau, cfg.m, variant, sampling);
    let weight = if variant == NceVariant::Standard { T::one() } else { cfg.lambda };
    LossValue { value: -pos + weight * neg, positive_term: pos, negative_term: neg, estimator }
}

pub fn info_nce<T: Real, E: Encoder<T> + ?Sized>(
    world: &FiniteWorld<T>,
    encoder: &E,
    cfg: &InfoNceConfig<T>,
    variant: NceVariant,
    sampling: &NegativeSampling,
) -> Result<LossValue<T>> {
    Ok(info_nce_from_embedding(world, &encoder.embed(world)?, cfg, variant, sampling))
}

/// L_SCL(f) = −2E₊[f(x)ᵀf(x⁺)] + E₋[(f(x)ᵀf(x⁻))²].
pub fn spectral_contrastive_from_embedding<T: Real>(world: &FiniteWorld<T>, embedding: &Embedding<T>) -> LossValue<T> {
    let ip = embedding.inner_products();
    let sq: Vec<T> = ip.iter().map(|v| *v * *v).collect();
    let pos = population_kcl_from_gram(world, &ip, T::zero()).positive_term;
    let neg = population_kcl_from_gram(world, &sq, T::zero()).negative_term;
    let two = T::lit(2.0);
    LossValue { value: -two * pos + neg, positive_term: two * pos, negative_term: neg, estimator: Estimator::Exact }
}

pub fn spectral_contrastive<T: Real, E: Encoder<T> + ?Sized>(world: &FiniteWorld<T>, encoder: &E) -> Result<LossValue<T>> {
    Ok(spectral_contrastive_from_embedding(world, &encoder.embed(world)?))
}

/// The linear-KCL/InfoNCE inequalities at (τ, M, λ) and L_QKCL(f; ½) ≤ ½L_SCL(f) + ¼.
pub fn check_loss_relations<T: Real>(
    world: &FiniteWorld<T>,
    embedding: &Embedding<T>,
    cfg: &InfoNceConfig<T>,
    sampling: &NegativeSampling,
) -> Vec<BoundReport> {
    let ip = embedding.inner_products();
    let sq: Vec<T> = ip.iter().map(|v| *v * *v).collect();
    let tau = cfg.tau;
    let log_inv_m = -(cfg.m as f64).ln();
    let lin = |lambda: T| population_kcl_from_gram(world, &ip, lambda).value / tau;
    let nce = |variant: NceVariant| info_nce_from_inner_products(world, &ip, cfg, variant, sampling);
    let lambda = cfg.lambda.f64();
    let mut out = Vec::new();

    let mut push = |name: &str, weight: f64, lhs: f64, rhs: f64, loss: &LossValue<T>, offset: f64| {
        out.push(
            BoundReport::inequality(name, lhs, rhs)
                .with_noise(loss.estimator.half_width() * weight.abs())
                .with_component("lin_kcl_over_tau", lhs)
                .with_component("nce_value", loss.value.f64())
                .with_component("log_offset", offset)
                .with_component("tau", tau.f64())
                .with_component("m", cfg.m as f64)
                .with_component("lambda", weight),
        );
    };

    let standard = nce(NceVariant::Standard);
    push("infonce", 1.0, lin(T::one()).f64(), standard.value.f64() + log_inv_m, &standard, log_inv_m);
    let decoupled = nce(NceVariant::Decoupled);
    let lhs = lin(cfg.lambda).f64();
    push("decoupled-infonce", lambda, lhs, decoupled.value.f64() + lambda * log_inv_m, &decoupled, lambda * log_inv_m);
    let asym = nce(NceVariant::Asymptotic);
    push("decoupled-asymptotic", lambda, lhs, asym.value.f64(), &asym, 0.0);
    let dcl = nce(NceVariant::Dcl);
    push("decoupled-dcl", lambda, lhs, dcl.value.f64() + lambda * log_inv_m, &dcl, lambda * log_inv_m);

    let qkcl = population_kcl_from_gram(world, &sq, T::lit(0.5)).value.f64();
    let scl = spectral_contrastive_from_embedding(world, embedding).value.f64();
    out.push(
        BoundReport::inequality("quadratic-kcl-vs-spectral", qkcl, 0.5 * scl + 0.25)
            .with_component("qkcl_half", qkcl)
            .with_component("scl", scl),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::TableEncoder;
    use crate::worlds::{build_disjoint_balls, BallWorldSpec};
    use rand::SeedableRng;

    fn two_balls() -> FiniteWorld<f64> {
        build_disjoint_balls(&BallWorldSpec::disjoint(2, 2)).unwrap()
    }

    fn antipodal(w: &FiniteWorld<f64>) -> TableEncoder<f64> {
        TableEncoder::by_label(w, &[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap()
    }

    #[test]
    fn kcl_examples() {
        let w = two_balls();
        let lin = Kernel::linear();
        let c = TableEncoder::constant(w.len(), vec![0.0, 1.0]).unwrap();
        assert!(population_kcl(&w, &c, &lin, 1.0).unwrap().value.abs() < 1e-15);
        let a = population_kcl(&w, &antipodal(&w), &lin, 1.0).unwrap();
        assert!((a.value + 1.0).abs() < 1e-15);
        assert!(a.negative_term.abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = TableEncoder::random(w.len(), 3, &mut rng);
        let l0 = population_kcl(&w, &r, &Kernel::quadratic(), 0.0).unwrap();
        assert_eq!(l0.value, -l0.positive_term);
    }

    #[test]
    fn empirical_examples() {
        let w = two_balls();
        let c = TableEncoder::constant(w.len(), vec![1.0, 0.0]).unwrap();
        let pairs = [(0, 1), (2, 3), (1, 1)];
        let v = empirical_kcl(&w, &pairs, &c, &Kernel::linear(), 0.7).unwrap();
        assert!((v.value - (-1.0 + 0.7)).abs() < 1e-15);
        assert!(matches!(empirical_kcl(&w, &pairs[..1], &c, &Kernel::linear(), 1.0), Err(Error::TooFewPairs(1))));

        // n = 2: f(X₁) = e₁, f(X₁') = e₂, f(X₂) = (e₁+e₂)/√2, f(X₂') = e₁.
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let t = TableEncoder::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![s, s], vec![1.0, 0.0]]).unwrap();
        let v = empirical_kcl(&w, &[(0, 1), (2, 3)], &t, &Kernel::linear(), 1.0).unwrap();
        let positive = (0.0 + s) / 2.0;
        let cross = (1.0 + s) / 2.0;
        assert!((v.value - (-positive + cross)).abs() < 1e-15);
    }

    #[test]
    fn empirical_count_path_matches_direct() {
        let w = two_balls();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let e = TableEncoder::random(w.len(), 3, &mut rng);
        let gram = e.embed(&w).unwrap().gram(&Kernel::gaussian(0.5).unwrap());
        let pairs = crate::worlds::sample_positive_pairs(&w, 40, 1).unwrap();
        let fast = empirical_kcl_from_gram(w.len(), &gram, &pairs, 1.3).unwrap();
        let mut cross = 0.0;
        for (i, &(a, _)) in pairs.iter().enumerate() {
            for (j, &(_, b)) in pairs.iter().enumerate() {
                if i != j {
                    cross += gram[a * 4 + b];
                }
            }
        }
        assert!((fast.negative_term - cross / (40.0 * 39.0)).abs() < 1e-13);
    }

    #[test]
    fn infonce_examples() {
        let w = two_balls();
        let c = TableEncoder::constant(w.len(), vec![1.0, 0.0]).unwrap().embed(&w).unwrap();
        let s = NegativeSampling::default();
        for m in [1, 3, 8] {
            let cfg = InfoNceConfig::new(0.1, m, 1.0).unwrap();
            let v = info_nce_from_embedding(&w, &c, &cfg, NceVariant::Standard, &s);
            assert!((v.value - ((m + 1) as f64).ln()).abs() < 1e-10, "{m}: {v:?}");
            assert_eq!(v.estimator, Estimator::Exact);
        }
        let cfg = InfoNceConfig::new(0.1, 8, 1.0).unwrap();
        let v = info_nce_from_embedding(&w, &c, &cfg, NceVariant::Asymptotic, &s);
        assert!(v.value.abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = TableEncoder::random(w.len(), 3, &mut rng).embed(&w).unwrap();
        let cfg = InfoNceConfig::new(1e3, 4, 1.0).unwrap();
        let v = info_nce_from_embedding(&w, &r, &cfg, NceVariant::Standard, &s);
        assert!((v.value - 5f64.ln()).abs() < 1e-3);
        assert!(InfoNceConfig::new(0.0, 1, 1.0).is_err());
        assert!(InfoNceConfig::new(1.0, 0, 1.0).is_err());
    }

    #[test]
    fn monte_carlo_agrees_with_enumeration() {
        let w = two_balls();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = TableEncoder::random(w.len(), 3, &mut rng).embed(&w).unwrap();
        let cfg = InfoNceConfig::new(0.5, 6, 1.5).unwrap();
        for variant in [NceVariant::Decoupled, NceVariant::Dcl] {
            let exact = info_nce_from_embedding(&w, &r, &cfg, variant, &NegativeSampling::default());
            let mc = info_nce_from_embedding(&w, &r, &cfg, variant, &NegativeSampling { max_exact_terms: 0, samples: 20_000, seed: 4 });
            let hw = mc.estimator.half_width();
            assert!(hw > 0.0);
            assert!((exact.negative_term - mc.negative_term).abs() <= 2.0 * hw, "{exact:?} {mc:?}");
        }
    }

    #[test]
    fn spectral_examples() {
        let w = two_balls();
        let c = TableEncoder::constant(w.len(), vec![1.0, 0.0]).unwrap();
        assert!((spectral_contrastive(&w, &c).unwrap().value + 1.0).abs() < 1e-15);
        assert!((spectral_contrastive(&w, &antipodal(&w)).unwrap().value + 1.0).abs() < 1e-15);
        let o = TableEncoder::by_label(&w, &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((spectral_contrastive(&w, &o).unwrap().value + 1.5).abs() < 1e-15);
    }

    #[test]
    fn relation_examples() {
        let w = two_balls();
        let c = TableEncoder::constant(w.len(), vec![1.0, 0.0]).unwrap().embed(&w).unwrap();
        let cfg = InfoNceConfig::new(0.1, 8, 1.0).unwrap();
        let reports = check_loss_relations(&w, &c, &cfg, &NegativeSampling::default());
        let eq4 = reports.iter().find(|r| r.name == "infonce").unwrap();
        assert!((eq4.slack - (9.0f64 / 8.0).ln()).abs() < 1e-10);
        let q = reports.iter().find(|r| r.name == "quadratic-kcl-vs-spectral").unwrap();
        assert!((q.lhs + 0.5).abs() < 1e-15);
        assert!((q.rhs + 0.25).abs() < 1e-15);
        assert!((q.slack - 0.25).abs() < 1e-15);
        assert!(reports.iter().all(|r| r.pass));
    }

    #[test]
    fn multiset_enumeration_is_a_distribution() {
        let support = [(0.2, 1.0), (0.5, 2.0), (0.3, 0.5)];
        let all = enumerate_negatives::<f64>(&support, 5);
        assert_eq!(all.len() as f64, multiset_count(3, 5));
        assert!((all.iter().map(|(p, _)| p).sum::<f64>() - 1.0).abs() < 1e-14);
        let mean: f64 = all.iter().map(|(p, s)| p * s).sum();
        assert!((mean - 5.0 * (0.2 + 1.0 + 0.15)).abs() < 1e-13);
    }
}
