//! Sphere-valued encoders f(x) = f₀(x)/‖f₀(x)‖: a per-point table and a small
//! MLP on point coordinates.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::cluster_geometry;
use crate::kernels::Kernel;
use crate::real::{dot, norm, Real};
use crate::similarity::ClusterStructure;
use crate::worlds::FiniteWorld;

/// Smallest admissible pre-normalization norm.
pub const NORM_FLOOR: f64 = 1e-6;
/// Δ_min threshold above which an encoder counts as meaningful.
pub const MEANINGFUL_TOL: f64 = 1e-8;

/// Encoded world: one unit vector per point, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding<T> {
    d: usize,
    rows: Vec<T>,
}

impl<T: Real> Embedding<T> {
    /// Rows must be unit vectors within the unit-norm tolerance; they are renormalized.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        let mut flat = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::Dimension { expected: d, got: r.len() });
            }
            let n = norm(r);
            if (n - T::one()).abs().f64() > T::UNIT_TOL {
                return Err(Error::NotUnit { which: "embedding row", norm: n.f64(), tol: T::UNIT_TOL });
            }
            flat.extend(r.iter().map(|v| *v / n));
        }
        Ok(Self { d, rows: flat })
    }

    pub fn len(&self) -> usize {
        if self.d == 0 {
            0
        } else {
            self.rows.len() / self.d
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, x: usize) -> &[T] {
        &self.rows[x * self.d..(x + 1) * self.d]
    }

    /// N×N matrix of k(f(x), f(x')).
    pub fn gram(&self, kernel: &Kernel<T>) -> Vec<T> {
        let n = self.len();
        let mut g = vec![T::zero(); n * n];
        for x in 0..n {
            for xp in x..n {
                let v = kernel.psi_dot(dot(self.row(x), self.row(xp)));
                g[x * n + xp] = v;
                g[xp * n + x] = v;
            }
        }
        g
    }

    /// N×N matrix of f(x)ᵀf(x').
    pub fn inner_products(&self) -> Vec<T> {
        let n = self.len();
        let mut g = vec![T::zero(); n * n];
        for x in 0..n {
            for xp in x..n {
                let v = dot(self.row(x), self.row(xp));
                g[x * n + xp] = v;
                g[xp * n + x] = v;
            }
        }
        g
    }
}

pub trait Encoder<T: Real> {
    fn dim(&self) -> usize;

    /// f(x) for point index `x` of `world`.
    fn encode(&self, world: &FiniteWorld<T>, x: usize) -> Result<Vec<T>>;

    fn embed(&self, world: &FiniteWorld<T>) -> Result<Embedding<T>> {
        let d = self.dim();
        let mut rows = Vec::with_capacity(world.len() * d);
        for x in 0..world.len() {
            rows.extend(self.encode(world, x)?);
        }
        Ok(Embedding { d, rows })
    }
}

impl<T: Real> Encoder<T> for Embedding<T> {
    fn dim(&self) -> usize {
        self.d
    }

    fn encode(&self, world: &FiniteWorld<T>, x: usize) -> Result<Vec<T>> {
        if self.len() != world.len() {
            return Err(Error::Dimension { expected: world.len(), got: self.len() });
        }
        Ok(self.row(x).to_vec())
    }

    fn embed(&self, world: &FiniteWorld<T>) -> Result<Embedding<T>> {
        if self.len() != world.len() {
            return Err(Error::Dimension { expected: world.len(), got: self.len() });
        }
        Ok(self.clone())
    }
}

fn normalized<T: Real>(v: &[T], floor: T, world: &FiniteWorld<T>, x: usize) -> Result<Vec<T>> {
    let n = norm(v);
    if !(n >= floor) {
        return Err(Error::DegenerateEncoder { point: world.points()[x].id.clone(), norm: n.f64(), floor: floor.f64() });
    }
    Ok(v.iter().map(|c| *c / n).collect())
}

/// Gradient of a loss through f = f₀/‖f₀‖: (I − ffᵀ)g/‖f₀‖.
fn through_normalization<T: Real>(f0: &[T], g: &[T]) -> Vec<T> {
    let n = norm(f0);
    let f: Vec<T> = f0.iter().map(|v| *v / n).collect();
    let fg = dot(&f, g);
    g.iter().zip(&f).map(|(gi, fi)| (*gi - fg * *fi) / n).collect()
}

/// Encoders whose parameters the trainer can update.
pub trait Trainable<T: Real>: Encoder<T> + Clone {
    fn params(&self) -> Vec<T>;
    fn set_params(&mut self, params: &[T]);
    /// dL/dθ given dL/df(x) for every point (rows of `out_grad`, N×d).
    fn backprop(&self, world: &FiniteWorld<T>, out_grad: &[T]) -> Result<Vec<T>>;
    /// Projection applied after each step.
    fn project(&mut self);
}

/// f₀(x) is a free parameter vector per point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableEncoder<T> {
    pub d: usize,
    pub vectors: Vec<Vec<T>>,
    pub norm_floor: T,
}

impl<T: Real> TableEncoder<T> {
    pub fn new(vectors: Vec<Vec<T>>) -> Result<Self> {
        let d = vectors.first().map_or(0, |v| v.len());
        if d == 0 || vectors.iter().any(|v| v.len() != d) {
            return Err(Error::Encoder("table vectors must share a positive dimension".into()));
        }
        Ok(Self { d, vectors, norm_floor: T::lit(NORM_FLOOR) })
    }

    /// I.i.d. standard normal entries, each row normalized.
    pub fn random<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Self {
        let vectors = (0..n)
            .map(|_| loop {
                let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let nn = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                if nn > NORM_FLOOR {
                    break v.iter().map(|a| T::lit(a / nn)).collect();
                }
            })
            .collect();
        Self { d, vectors, norm_floor: T::lit(NORM_FLOOR) }
    }

    /// Every point of cluster `y(x)` mapped to `per_label[y(x)]`.
    pub fn by_label(world: &FiniteWorld<T>, per_label: &[Vec<T>]) -> Result<Self> {
        if world.labels().is_empty() {
            return Err(Error::Encoder("world has no labels".into()));
        }
        Self::new(world.labels().iter().map(|&l| per_label[l].clone()).collect())
    }

    pub fn constant(n: usize, v: Vec<T>) -> Result<Self> {
        Self::new(vec![v; n])
    }
}

impl<T: Real> Encoder<T> for TableEncoder<T> {
    fn dim(&self) -> usize {
        self.d
    }

    fn encode(&self, world: &FiniteWorld<T>, x: usize) -> Result<Vec<T>> {
        let v = self.vectors.get(x).ok_or(Error::Dimension { expected: world.len(), got: self.vectors.len() })?;
        normalized(v, self.norm_floor, world, x)
    }
}

impl<T: Real> Trainable<T> for TableEncoder<T> {
    fn params(&self) -> Vec<T> {
        self.vectors.iter().flatten().copied().collect()
    }

    fn set_params(&mut self, params: &[T]) {
        for (x, v) in self.vectors.iter_mut().enumerate() {
            v.copy_from_slice(&params[x * self.d..(x + 1) * self.d]);
        }
    }

    fn backprop(&self, world: &FiniteWorld<T>, out_grad: &[T]) -> Result<Vec<T>> {
        let d = self.d;
        let mut g = Vec::with_capacity(self.vectors.len() * d);
        for (x, v) in self.vectors.iter().enumerate() {
            if norm(v) < self.norm_floor {
                normalized(v, self.norm_floor, world, x)?;
            }
            g.extend(through_normalization(v, &out_grad[x * d..(x + 1) * d]));
        }
        Ok(g)
    }

    fn project(&mut self) {
        for v in &mut self.vectors {
            let n = norm(v);
            if n >= self.norm_floor {
                for c in v.iter_mut() {
                    *c /= n;
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply<T: Real>(self, v: T) -> T {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output<T: Real>(self, out: T) -> T {
        match self {
            Activation::Tanh => T::one() - out * out,
            Activation::Identity => T::one(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer<T> {
    /// out × in, row-major by output unit.
    pub weights: Vec<Vec<T>>,
    pub bias: Vec<T>,
}

impl<T: Real> Layer<T> {
    fn forward(&self, input: &[T]) -> Vec<T> {
        self.weights.iter().zip(&self.bias).map(|(w, b)| dot(w, input) + *b).collect()
    }
}

/// f₀(x) = W_L σ(… σ(W₁ coords(x) + b₁) …) + b_L with a smooth σ on hidden layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpEncoder<T> {
    pub layers: Vec<Layer<T>>,
    pub activation: Activation,
    pub norm_floor: T,
}

impl<T: Real> MlpEncoder<T> {
    pub fn new(layers: Vec<Layer<T>>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Encoder("MLP needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.bias.len() || l.weights.is_empty() {
                return Err(Error::Encoder(format!("layer {i}: weights and bias disagree")));
            }
            let fan_in = l.weights[0].len();
            if l.weights.iter().any(|r| r.len() != fan_in) {
                return Err(Error::Encoder(format!("layer {i}: ragged weight matrix")));
            }
            if i > 0 && fan_in != layers[i - 1].bias.len() {
                return Err(Error::Encoder(format!("layer {i}: input width {fan_in} does not match previous output")));
            }
        }
        Ok(Self { layers, activation, norm_floor: T::lit(NORM_FLOOR) })
    }

    /// Uniform fan-in initialization U(−1/√fan_in, 1/√fan_in) for weights and biases.
    pub fn random<R: Rng + ?Sized>(input: usize, hidden: &[usize], d: usize, rng: &mut R) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(d);
        let layers = widths
            .windows(2)
            .map(|w| {
                let s = 1.0 / (w[0] as f64).sqrt();
                Layer {
                    weights: (0..w[1]).map(|_| (0..w[0]).map(|_| T::lit(rng.random_range(-s..s))).collect()).collect(),
                    bias: (0..w[1]).map(|_| T::lit(rng.random_range(-s..s))).collect(),
                }
            })
            .collect();
        Self { layers, activation: Activation::Tanh, norm_floor: T::lit(NORM_FLOOR) }
    }

    /// Layer outputs; the last entry is the pre-normalization f₀.
    fn activations(&self, input: &[T]) -> Vec<Vec<T>> {
        let mut acts = vec![input.to_vec()];
        for (i, l) in self.layers.iter().enumerate() {
            let mut out = l.forward(acts.last().expect("input present"));
            if i + 1 < self.layers.len() {
                for v in &mut out {
                    *v = self.activation.apply(*v);
                }
            }
            acts.push(out);
        }
        acts
    }

    pub fn pre_normalized(&self, input: &[T]) -> Vec<T> {
        self.activations(input).pop().expect("output present")
    }

    fn input_dim(&self) -> usize {
        self.layers[0].weights[0].len()
    }
}

impl<T: Real> Encoder<T> for MlpEncoder<T> {
    fn dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.bias.len())
    }

    fn encode(&self, world: &FiniteWorld<T>, x: usize) -> Result<Vec<T>> {
        let coords = &world.points()[x].coords;
        if coords.len() != self.input_dim() {
            return Err(Error::Dimension { expected: self.input_dim(), got: coords.len() });
        }
        normalized(&self.pre_normalized(coords), self.norm_floor, world, x)
    }
}

impl<T: Real> Trainable<T> for MlpEncoder<T> {
    fn params(&self) -> Vec<T> {
        let mut p = Vec::new();
        for l in &self.layers {
            for r in &l.weights {
                p.extend_from_slice(r);
            }
            p.extend_from_slice(&l.bias);
        }
        p
    }

    fn set_params(&mut self, params: &[T]) {
        let mut i = 0;
        for l in &mut self.layers {
            for r in &mut l.weights {
                let m = r.len();
                r.copy_from_slice(&params[i..i + m]);
                i += m;
            }
            let m = l.bias.len();
            l.bias.copy_from_slice(&params[i..i + m]);
            i += m;
        }
    }

    fn backprop(&self, world: &FiniteWorld<T>, out_grad: &[T]) -> Result<Vec<T>> {
        let d = self.dim();
        let mut grads: Vec<(Vec<Vec<T>>, Vec<T>)> = self
            .layers
            .iter()
            .map(|l| (vec![vec![T::zero(); l.weights[0].len()]; l.weights.len()], vec![T::zero(); l.bias.len()]))
            .collect();
        for x in 0..world.len() {
            let g = &out_grad[x * d..(x + 1) * d];
            if g.iter().all(|v| v.is_zero()) {
                continue;
            }
            let acts = self.activations(&world.points()[x].coords);
            let f0 = acts.last().expect("output present");
            normalized(f0, self.norm_floor, world, x)?;
            let mut delta = through_normalization(f0, g);
            for li in (0..self.layers.len()).rev() {
                if li + 1 < self.layers.len() {
                    for (dv, out) in delta.iter_mut().zip(&acts[li + 1]) {
                        *dv *= self.activation.derivative_from_output(*out);
                    }
                }
                let input = &acts[li];
                let (gw, gb) = &mut grads[li];
                for (o, dv) in delta.iter().enumerate() {
                    gb[o] += *dv;
                    for (i, a) in input.iter().enumerate() {
                        gw[o][i] += *dv * *a;
                    }
                }
                if li > 0 {
                    let w = &self.layers[li].weights;
                    delta = (0..input.len()).map(|i| delta.iter().enumerate().fold(T::zero(), |s, (o, dv)| s + *dv * w[o][i])).collect();
                }
            }
        }
        let mut flat = Vec::new();
        for (gw, gb) in grads {
            for r in gw {
                flat.extend(r);
            }
            flat.extend(gb);
        }
        Ok(flat)
    }

    fn project(&mut self) {}
}

/// Serializable encoder checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Checkpoint<T> {
    Table(TableEncoder<T>),
    Mlp(MlpEncoder<T>),
}

impl<T: Real> Encoder<T> for Checkpoint<T> {
    fn dim(&self) -> usize {
        match self {
            Checkpoint::Table(e) => e.dim(),
            Checkpoint::Mlp(e) => e.dim(),
        }
    }

    fn encode(&self, world: &FiniteWorld<T>, x: usize) -> Result<Vec<T>> {
        match self {
            Checkpoint::Table(e) => e.encode(world, x),
            Checkpoint::Mlp(e) => e.encode(world, x),
        }
    }
}

/// Δ_min(f) > `MEANINGFUL_TOL`, together with Δ_min itself.
pub fn is_meaningful<T: Real, E: Encoder<T> + ?Sized>(
    encoder: &E,
    world: &FiniteWorld<T>,
    structure: &ClusterStructure<T>,
    kernel: &Kernel<T>,
) -> Result<(bool, T)> {
    if structure.k() < 2 {
        return Err(Error::TooFewClusters(structure.k()));
    }
    let g = cluster_geometry(world, encoder, kernel, structure)?;
    let dm = g.delta_min.expect("K >= 2");
    Ok((dm.f64() > MEANINGFUL_TOL, dm))
}
