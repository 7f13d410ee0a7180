//! Sphere kernels k(z, z') = ψ(zᵀz') and the RKHS primitives built on them.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{dot, norm, Real};

type ScalarFn<T> = Arc<dyn Fn(T) -> T + Send + Sync>;

#[derive(Clone)]
enum Profile<T> {
    Linear,
    Quadratic,
    Gaussian { sigma2: T },
    Custom { psi: ScalarFn<T>, psi_prime: ScalarFn<T> },
}

/// Name plus hyperparameters; enough to rebuild a built-in kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl KernelSpec {
    pub fn new(name: &str) -> Self {
        Self { name: name.to_string(), params: BTreeMap::new() }
    }

    pub fn gaussian(sigma2: f64) -> Self {
        let mut s = Self::new("gaussian");
        s.params.insert("sigma2".into(), sigma2);
        s
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)?;
        for (k, v) in &self.params {
            write!(f, ":{k}={v}")?;
        }
        Ok(())
    }
}

/// A positive-definite kernel on the unit sphere together with the constants
/// the bounds need: Lipschitz constant ρ of ψ, ψ(1), b = sup|k| and
/// M_k = sup ‖h(z) − h(z')‖² = 2ψ(1) − 2 min ψ.
#[derive(Clone)]
pub struct Kernel<T: Real> {
    name: String,
    profile: Profile<T>,
    rho: T,
    psi_one: T,
    b: T,
    m_k: T,
    params: BTreeMap<String, f64>,
}

impl<T: Real> fmt::Debug for Kernel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("rho", &self.rho)
            .field("psi_one", &self.psi_one)
            .field("b", &self.b)
            .field("m_k", &self.m_k)
            .finish()
    }
}

/// Numerically located extrema of ψ and |ψ'| over [−1, 1].
#[derive(Clone, Copy, Debug)]
pub struct ProfileExtrema {
    pub min_psi: f64,
    pub max_abs_psi: f64,
    pub max_abs_psi_prime: f64,
}

const GRID: usize = 4000;

fn grid_t(i: usize) -> f64 {
    (2.0 * i as f64 - GRID as f64) / GRID as f64
}

/// Grid search over [−1, 1] refined by golden-section search around the best cell.
fn maximize(f: impl Fn(f64) -> f64) -> f64 {
    let (mut best_i, mut best) = (0, f(grid_t(0)));
    for i in 1..=GRID {
        let v = f(grid_t(i));
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let (mut lo, mut hi) = (grid_t(best_i.saturating_sub(1)), grid_t((best_i + 1).min(GRID)));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if f(a) >= f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    best.max(f(0.5 * (lo + hi)))
}

impl<T: Real> Kernel<T> {
    pub fn linear() -> Self {
        Self::builtin("linear", Profile::Linear, T::one(), T::lit(4.0), BTreeMap::new())
    }

    pub fn quadratic() -> Self {
        Self::builtin("quadratic", Profile::Quadratic, T::lit(2.0), T::lit(2.0), BTreeMap::new())
    }

    /// ψ(t) = exp(−(2 − 2t)/σ²), i.e. exp(−‖z − z'‖²/σ²) on the sphere.
    pub fn gaussian(sigma2: T) -> Result<Self> {
        if !(sigma2 > T::zero()) || !sigma2.is_finite() {
            return Err(Error::Kernel(format!("gaussian bandwidth must be positive, got {sigma2}")));
        }
        let two = T::lit(2.0);
        let m_k = two - two * (-T::lit(4.0) / sigma2).exp();
        let mut params = BTreeMap::new();
        params.insert("sigma2".to_string(), sigma2.f64());
        Ok(Self::builtin("gaussian", Profile::Gaussian { sigma2 }, two / sigma2, m_k, params))
    }

    fn builtin(name: &str, profile: Profile<T>, rho: T, m_k: T, params: BTreeMap<String, f64>) -> Self {
        let k = Self { name: name.to_string(), profile, rho, psi_one: T::one(), b: T::one(), m_k, params };
        let ext = k.extrema();
        let tol = 1e-9 * (1.0 + k.rho.f64());
        debug_assert!((ext.max_abs_psi_prime - k.rho.f64()).abs() <= tol, "{name}: rho");
        debug_assert!((ext.max_abs_psi - k.b.f64()).abs() <= tol, "{name}: b");
        debug_assert!((2.0 - 2.0 * ext.min_psi - k.m_k.f64()).abs() <= tol.max(T::EXACT_TOL), "{name}: m_k");
        k
    }

    /// A user-supplied profile. ψ(1), b and M_k are derived numerically; the
    /// claimed ρ must dominate sup|ψ'|, ψ' must agree with finite differences
    /// and a random Gram matrix must be positive semidefinite.
    pub fn custom(
        name: &str,
        psi: impl Fn(T) -> T + Send + Sync + 'static,
        psi_prime: impl Fn(T) -> T + Send + Sync + 'static,
        rho: T,
    ) -> Result<Self> {
        let psi: ScalarFn<T> = Arc::new(psi);
        let psi_prime: ScalarFn<T> = Arc::new(psi_prime);
        let psi_one = psi(T::one());
        let mut k = Self {
            name: name.to_string(),
            profile: Profile::Custom { psi, psi_prime },
            rho,
            psi_one,
            b: T::zero(),
            m_k: T::zero(),
            params: BTreeMap::new(),
        };
        let ext = k.extrema();
        if !ext.min_psi.is_finite() || !ext.max_abs_psi_prime.is_finite() {
            return Err(Error::Kernel(format!("{name}: profile is not finite on [-1, 1]")));
        }
        if rho.f64() + 1e-9 < ext.max_abs_psi_prime {
            return Err(Error::Kernel(format!("{name}: claimed rho {rho} is below sup|psi'| = {}", ext.max_abs_psi_prime)));
        }
        k.b = T::lit(ext.max_abs_psi);
        k.m_k = T::lit(2.0) * psi_one - T::lit(2.0 * ext.min_psi);
        let worst = k.derivative_check(100, 0);
        if worst > 1e-4 {
            return Err(Error::Kernel(format!("{name}: psi' disagrees with finite differences (rel {worst:e})")));
        }
        let eig = k.gram_min_eigenvalue(16, 3, 0);
        if eig < -1e-8 {
            return Err(Error::Kernel(format!("{name}: Gram matrix has eigenvalue {eig:e}")));
        }
        Ok(k)
    }

    pub fn from_spec(spec: &KernelSpec) -> Result<Self> {
        match spec.name.as_str() {
            "linear" => Ok(Self::linear()),
            "quadratic" => Ok(Self::quadratic()),
            "gaussian" => {
                let s = spec.params.get("sigma2").copied().unwrap_or(1.0);
                Self::gaussian(T::lit(s))
            }
            other => Err(Error::Kernel(format!("unknown kernel '{other}' (linear, quadratic, gaussian)"))),
        }
    }

    pub fn spec(&self) -> KernelSpec {
        KernelSpec { name: self.name.clone(), params: self.params.clone() }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn rho(&self) -> T {
        self.rho
    }

    pub fn psi_one(&self) -> T {
        self.psi_one
    }

    pub fn b(&self) -> T {
        self.b
    }

    pub fn m_k(&self) -> T {
        self.m_k
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.profile, Profile::Linear)
    }

    pub fn psi(&self, t: T) -> T {
        match &self.profile {
            Profile::Linear => t,
            Profile::Quadratic => t * t,
            Profile::Gaussian { sigma2 } => (-(T::lit(2.0) - T::lit(2.0) * t) / *sigma2).exp(),
            Profile::Custom { psi, .. } => psi(t),
        }
    }

    pub fn psi_prime(&self, t: T) -> T {
        match &self.profile {
            Profile::Linear => T::one(),
            Profile::Quadratic => T::lit(2.0) * t,
            Profile::Gaussian { sigma2 } => T::lit(2.0) / *sigma2 * (-(T::lit(2.0) - T::lit(2.0) * t) / *sigma2).exp(),
            Profile::Custom { psi_prime, .. } => psi_prime(t),
        }
    }

    /// ψ of an inner product between unit vectors, with rounding drift clamped.
    pub fn psi_dot(&self, t: T) -> T {
        self.psi(t.max(-T::one()).min(T::one()))
    }

    /// k(z, z') = ψ(zᵀz'). Inputs within the unit-norm tolerance are renormalized.
    pub fn evaluate(&self, z: &[T], zp: &[T]) -> Result<T> {
        if z.len() != zp.len() {
            return Err(Error::Dimension { expected: z.len(), got: zp.len() });
        }
        let nz = unit_norm(z, "z")?;
        let nzp = unit_norm(zp, "z'")?;
        Ok(self.psi_dot(dot(z, zp) / (nz * nzp)))
    }

    /// ‖h(z) − h(z')‖² = 2ψ(1) − 2k(z, z').
    pub fn rkhs_sq_distance(&self, z: &[T], zp: &[T]) -> Result<T> {
        let k = self.evaluate(z, zp)?;
        Ok(T::lit(2.0) * self.psi_one - T::lit(2.0) * k)
    }

    pub fn extrema(&self) -> ProfileExtrema {
        let psi = |t: f64| self.psi(T::lit(t)).f64();
        let dpsi = |t: f64| self.psi_prime(T::lit(t)).f64();
        ProfileExtrema {
            min_psi: -maximize(|t| -psi(t)),
            max_abs_psi: maximize(|t| psi(t).abs()),
            max_abs_psi_prime: maximize(|t| dpsi(t).abs()),
        }
    }

    /// Largest relative error between ψ' and a central difference of ψ over
    /// `samples` points drawn from (−1, 1).
    pub fn derivative_check(&self, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let t: f64 = rng.random_range(-0.999..0.999);
            let fd = (self.psi(T::lit(t + h)).f64() - self.psi(T::lit(t - h)).f64()) / (2.0 * h);
            let an = self.psi_prime(T::lit(t)).f64();
            let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        worst
    }

    /// Smallest eigenvalue of the Gram matrix of `n` random unit vectors in R^d.
    pub fn gram_min_eigenvalue(&self, n: usize, d: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<T>> = (0..n).map(|_| random_unit(&mut rng, d)).collect();
        let g = DMatrix::from_fn(n, n, |i, j| self.psi_dot(dot(&pts[i], &pts[j])).f64());
        SymmetricEigen::new(g).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn unit_norm<T: Real>(z: &[T], which: &'static str) -> Result<T> {
    let n = norm(z);
    if !((n - T::one()).abs().f64() <= T::UNIT_TOL) {
        return Err(Error::NotUnit { which, norm: n.f64(), tol: T::UNIT_TOL });
    }
    Ok(n)
}

/// Uniform draw from S^{d−1} (normalized Gaussian).
pub fn random_unit<T: Real, R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<T> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.iter().map(|x| T::lit(x / n)).collect();
        }
    }
}
