//! Projected stochastic gradient descent on the empirical KCL loss.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::stream_rng;
use crate::encoders::{TableEncoder, Trainable, MEANINGFUL_TOL};
use crate::error::{Error, Result};
use crate::geometry::{geometry_from_gram, mean_classifier_error_from_gram};
use crate::kernels::{Kernel, KernelSpec};
use crate::objectives::{empirical_kcl_from_gram, population_kcl_from_gram};
use crate::real::{dot, Real};
use crate::similarity::ClusterStructure;
use crate::worlds::{FiniteWorld, PairSampler};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Pairs per step; even.
    pub batch_n: usize,
    pub lambda: f64,
    pub seed: u64,
    pub kernel: KernelSpec,
    pub track_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 2000, lr: 0.1, batch_n: 64, lambda: 1.0, seed: 0, kernel: KernelSpec::new("linear"), track_every: 100 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_n < 2 || self.batch_n % 2 != 0 {
            return Err(Error::OddSampleCount(self.batch_n));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.track_every == 0 {
            return Err(Error::Config("track_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    /// L̂_KCL on a fixed held-out pair set.
    pub empirical_loss: f64,
    pub population_loss: f64,
    pub a: Option<f64>,
    pub c: Option<f64>,
    pub delta_min: Option<f64>,
    pub error: Option<f64>,
    pub lambda: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainTrace {
    pub fn to_csv(&self) -> Result<String> {
        to_csv(&self.rows)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        Ok(Self { rows: from_csv(text)? })
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }
}

fn to_csv<S: Serialize>(rows: &[S]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
}

/// Lines starting with `#` are skipped, so reports may carry a config header.
fn from_csv<S: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<S>> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes()).deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training diverged at step {step}: non-finite loss")]
    Diverged { step: usize, trace: TrainTrace },
    #[error(transparent)]
    Core(#[from] Error),
}

/// L̂_KCL over index pairs and its gradient with respect to the encoder parameters.
/// The loss is Σ C[x][x']·ψ(f(x)ᵀf(x')) with C[x][x'] = −P[x][x']/n + λ/(n(n−1))·(c_a[x]c_b[x'] − P[x][x']),
/// P the pair counts and c_a, c_b the first- and second-view counts.
pub fn batch_loss_and_grad<T: Real, E: Trainable<T>>(
    world: &FiniteWorld<T>,
    encoder: &E,
    kernel: &Kernel<T>,
    pairs: &[(usize, usize)],
    lambda: T,
) -> Result<(T, Vec<T>)> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::TooFewPairs(n));
    }
    let np = world.len();
    let coef = pair_coefficients(np, pairs, lambda);
    let emb = encoder.embed(world)?;
    let d = emb.dim();
    let active: Vec<usize> = (0..np).filter(|&x| (0..np).any(|xp| !coef[x * np + xp].is_zero() || !coef[xp * np + x].is_zero())).collect();
    let mut loss = T::zero();
    let mut out = vec![T::zero(); np * d];
    for &x in &active {
        for &xp in &active {
            let c = coef[x * np + xp];
            if c.is_zero() {
                continue;
            }
            let t = dot(emb.row(x), emb.row(xp));
            loss += c * kernel.psi(t);
            let g = c * kernel.psi_prime(t);
            for j in 0..d {
                let (fx, fxp) = (emb.row(x)[j], emb.row(xp)[j]);
                out[x * d + j] += g * fxp;
                out[xp * d + j] += g * fx;
            }
        }
    }
    let grad = encoder.backprop(world, &out)?;
    Ok((loss, grad))
}

fn pair_coefficients<T: Real>(np: usize, pairs: &[(usize, usize)], lambda: T) -> Vec<T> {
    let nf = T::lit(pairs.len() as f64);
    let mut p = vec![0usize; np * np];
    let (mut ca, mut cb) = (vec![0usize; np], vec![0usize; np]);
    for &(a, b) in pairs {
        p[a * np + b] += 1;
        ca[a] += 1;
        cb[b] += 1;
    }
    let cross = lambda / (nf * (nf - T::one()));
    (0..np * np)
        .map(|idx| {
            let pc = T::lit(p[idx] as f64);
            -pc / nf + cross * (T::lit((ca[idx / np] * cb[idx % np]) as f64) - pc)
        })
        .collect()
}

/// Loss only, evaluated the same way as in [`batch_loss_and_grad`].
pub fn batch_loss<T: Real, E: Trainable<T>>(
    world: &FiniteWorld<T>,
    encoder: &E,
    kernel: &Kernel<T>,
    pairs: &[(usize, usize)],
    lambda: T,
) -> Result<T> {
    let np = world.len();
    let coef = pair_coefficients(np, pairs, lambda);
    let emb = encoder.embed(world)?;
    let mut loss = T::zero();
    for x in 0..np {
        for xp in 0..np {
            let c = coef[x * np + xp];
            if !c.is_zero() {
                loss += c * kernel.psi(dot(emb.row(x), emb.row(xp)));
            }
        }
    }
    Ok(loss)
}

/// ‖g_analytic − g_fd‖₂ / max(‖g_analytic‖₂, ‖g_fd‖₂) with central differences of step `h`.
pub fn gradient_check<T: Real, E: Trainable<T>>(
    world: &FiniteWorld<T>,
    encoder: &E,
    kernel: &Kernel<T>,
    pairs: &[(usize, usize)],
    lambda: T,
    h: f64,
) -> Result<f64> {
    let (_, analytic) = batch_loss_and_grad(world, encoder, kernel, pairs, lambda)?;
    let base = encoder.params();
    let mut probe = encoder.clone();
    let mut fd = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + T::lit(h);
        probe.set_params(&p);
        let up = batch_loss(world, &probe, kernel, pairs, lambda)?.f64();
        p[i] = base[i] - T::lit(h);
        probe.set_params(&p);
        let down = batch_loss(world, &probe, kernel, pairs, lambda)?.f64();
        fd.push((up - down) / (2.0 * h));
    }
    let diff = analytic.iter().zip(&fd).map(|(a, b)| (a.f64() - b).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a.f64().powi(2)).sum::<f64>().sqrt();
    let nf = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
    let scale = na.max(nf);
    Ok(if scale == 0.0 { 0.0 } else { diff / scale })
}

fn trace_row<T: Real, E: Trainable<T>>(
    world: &FiniteWorld<T>,
    encoder: &E,
    kernel: &Kernel<T>,
    held_out: &[(usize, usize)],
    lambda: T,
    step: usize,
) -> Result<TraceRow> {
    let gram = encoder.embed(world)?.gram(kernel);
    let (mut a, mut c, mut delta_min, mut error) = (None, None, None, None);
    if world.has_clusters() {
        let structure = ClusterStructure::new(world, lambda, T::zero());
        let g = geometry_from_gram(world, &gram, kernel, &structure)?;
        a = Some(g.a_value.f64());
        c = Some(g.c_value.f64());
        delta_min = g.delta_min.map(|v| v.f64());
        if structure.k() >= 2 {
            error = Some(mean_classifier_error_from_gram(world, &gram, kernel, &structure)?.f64());
        }
    }
    Ok(TraceRow {
        step,
        empirical_loss: empirical_kcl_from_gram(world.len(), &gram, held_out, lambda)?.value.f64(),
        population_loss: population_kcl_from_gram(world, &gram, lambda).value.f64(),
        a,
        c,
        delta_min,
        error,
        lambda: lambda.f64(),
    })
}

/// Size of the fixed held-out pair set, in batches.
const HELD_OUT_BATCHES: usize = 4;

/// Runs `cfg.steps` projected SGD steps from `init`, one fresh batch per step.
/// Deterministic for a given seed.
pub fn train<T: Real, E: Trainable<T>>(
    world: &FiniteWorld<T>,
    init: &E,
    cfg: &TrainConfig,
) -> std::result::Result<(E, TrainTrace), TrainError> {
    cfg.validate()?;
    let kernel = Kernel::<T>::from_spec(&cfg.kernel)?;
    let lambda = T::lit(cfg.lambda);
    let sampler = PairSampler::new(world);
    let held_out = sampler.pairs(&mut stream_rng(cfg.seed, 1), cfg.batch_n * HELD_OUT_BATCHES);
    let mut rng = stream_rng(cfg.seed, 0);
    let mut encoder = init.clone();
    let mut trace = TrainTrace { rows: vec![trace_row(world, &encoder, &kernel, &held_out, lambda, 0)?] };
    let lr = T::lit(cfg.lr);
    for step in 1..=cfg.steps {
        let pairs = sampler.pairs(&mut rng, cfg.batch_n);
        let (loss, grad) = batch_loss_and_grad(world, &encoder, &kernel, &pairs, lambda)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::Diverged { step, trace });
        }
        let params: Vec<T> = encoder.params().iter().zip(&grad).map(|(p, g)| *p - lr * *g).collect();
        encoder.set_params(&params);
        encoder.project();
        if step % cfg.track_every == 0 || step == cfg.steps {
            let row = trace_row(world, &encoder, &kernel, &held_out, lambda, step)?;
            if !row.population_loss.is_finite() || !row.empirical_loss.is_finite() {
                return Err(TrainError::Diverged { step, trace });
            }
            trace.rows.push(row);
        }
    }
    Ok((encoder, trace))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub seed: u64,
    pub population_loss: f64,
    pub empirical_loss: f64,
    pub a: Option<f64>,
    pub c: Option<f64>,
    pub delta_min: Option<f64>,
    pub error: Option<f64>,
    /// Δ_min at or below the meaningfulness threshold.
    pub collapsed: bool,
}

/// One table encoder of dimension `dim` per λ, each initialized from stream
/// `index` of `cfg.seed`, trained in parallel.
pub fn lambda_sweep<T: Real>(
    world: &FiniteWorld<T>,
    lambdas: &[f64],
    dim: usize,
    cfg: &TrainConfig,
) -> std::result::Result<Vec<SweepRow>, TrainError> {
    lambdas
        .par_iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let init = TableEncoder::<T>::random(world.len(), dim, &mut stream_rng(cfg.seed, 1000 + i as u64));
            let run = TrainConfig { lambda, ..cfg.clone() };
            let (_, trace) = train(world, &init, &run)?;
            let last = trace.last().expect("trace has the initial row").clone();
            Ok(SweepRow {
                lambda,
                seed: cfg.seed,
                population_loss: last.population_loss,
                empirical_loss: last.empirical_loss,
                a: last.a,
                c: last.c,
                delta_min: last.delta_min,
                error: last.error,
                collapsed: last.delta_min.is_some_and(|d| d <= MEANINGFUL_TOL),
            })
        })
        .collect()
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> Result<String> {
    to_csv(rows)
}

pub fn sweep_from_csv(text: &str) -> Result<Vec<SweepRow>> {
    from_csv(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{Encoder, MlpEncoder};
    use crate::worlds::{build_disjoint_balls, sample_positive_pairs, BallWorldSpec};

    fn world() -> FiniteWorld<f64> {
        build_disjoint_balls(&BallWorldSpec::disjoint(3, 2)).unwrap()
    }

    #[test]
    fn batch_loss_matches_empirical_kcl() {
        let w = world();
        let e = TableEncoder::random(w.len(), 3, &mut stream_rng(1, 0));
        let pairs = sample_positive_pairs(&w, 10, 3).unwrap();
        for kernel in [Kernel::linear(), Kernel::quadratic(), Kernel::gaussian(0.5).unwrap()] {
            let (loss, _) = batch_loss_and_grad(&w, &e, &kernel, &pairs, 1.7).unwrap();
            let reference = crate::objectives::empirical_kcl(&w, &pairs, &e, &kernel, 1.7).unwrap();
            assert!((loss - reference.value).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let w = world();
        let pairs = sample_positive_pairs(&w, 8, 5).unwrap();
        let table = TableEncoder::random(w.len(), 3, &mut stream_rng(2, 0));
        let mlp = MlpEncoder::random(2, &[5], 3, &mut stream_rng(2, 1));
        for kernel in [Kernel::linear(), Kernel::quadratic(), Kernel::gaussian(1.0).unwrap()] {
            assert!(gradient_check(&w, &table, &kernel, &pairs, 1.0, 1e-5).unwrap() < 1e-5);
            assert!(gradient_check(&w, &mlp, &kernel, &pairs, 0.5, 1e-5).unwrap() < 1e-5);
        }
    }

    #[test]
    fn zero_steps_is_identity_and_runs_are_deterministic() {
        let w = world();
        let init = TableEncoder::random(w.len(), 3, &mut stream_rng(4, 0));
        let cfg = TrainConfig { steps: 0, ..Default::default() };
        let (out, trace) = train(&w, &init, &cfg).unwrap();
        assert_eq!(out, init);
        assert_eq!(trace.rows.len(), 1);
        let cfg = TrainConfig { steps: 50, track_every: 10, ..Default::default() };
        let (a, ta) = train(&w, &init, &cfg).unwrap();
        let (b, tb) = train(&w, &init, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(ta.rows.len(), 6);
    }

    #[test]
    fn held_out_loss_decreases() {
        let w = world();
        let init = TableEncoder::random(w.len(), 3, &mut stream_rng(6, 0));
        let cfg = TrainConfig { steps: 300, lr: 0.02, ..Default::default() };
        let (_, trace) = train(&w, &init, &cfg).unwrap();
        assert!(trace.rows.last().unwrap().empirical_loss < trace.rows[0].empirical_loss);
    }

    #[test]
    fn divergence_is_reported() {
        let w = world();
        let init = TableEncoder::random(w.len(), 3, &mut stream_rng(7, 0));
        let cfg = TrainConfig { steps: 10, lr: f64::MAX, track_every: 1, ..Default::default() };
        match train(&w, &init, &cfg) {
            Err(TrainError::Diverged { trace, .. }) => assert!(!trace.rows.is_empty()),
            Err(TrainError::Core(Error::DegenerateEncoder { .. })) => {}
            other => panic!("{:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn config_validation() {
        assert!(matches!(TrainConfig { batch_n: 7, ..Default::default() }.validate(), Err(Error::OddSampleCount(7))));
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn sweep_csv_round_trip() {
        let w = world();
        let cfg = TrainConfig { steps: 20, ..Default::default() };
        let rows = lambda_sweep(&w, &[0.0, 1.0, 2.0], 3, &cfg).unwrap();
        assert_eq!(rows.len(), 3);
        let back = sweep_from_csv(&sweep_to_csv(&rows).unwrap()).unwrap();
        assert_eq!(back, rows);
        let emb = TableEncoder::random(w.len(), 2, &mut stream_rng(0, 0)).embed(&w).unwrap();
        assert_eq!(emb.len(), w.len());
    }
}
