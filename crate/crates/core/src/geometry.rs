//! Flat-torus geometry: normalized lattices, periodic grids, quadrature,
//! spectral Laplacian/Poisson operators and even-symmetry projection.
//!
//! Fields are stored in lattice coordinates: node `(j, k)` of an `n × n`
//! grid sits at `x = (j/n)·ω1 + (k/n)·ω2`.  The Euclidean metric only enters
//! through the dual-lattice norm used by the spectral multipliers.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{MfeError, Result};

const TWO_PI: f64 = 2.0 * PI;

/// A flat torus `ℂ / (ℤω1 + ℤω2)` normalized to unit area.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TorusLattice {
    omega1: Complex64,
    omega2: Complex64,
    // Lagrange-reduced basis of the same lattice, positively oriented.
    b1: Complex64,
    b2: Complex64,
}

impl TorusLattice {
    /// Builds the lattice spanned by `omega1, omega2`, uniformly rescaled so
    /// that `Im(conj(ω1)·ω2) = 1`.
    pub fn new(omega1: Complex64, omega2: Complex64) -> Result<Self> {
        if !(omega1.norm().is_finite() && omega2.norm().is_finite()) {
            return Err(MfeError::InvalidLattice("non-finite period".into()));
        }
        if omega1.norm() == 0.0 || omega2.norm() == 0.0 {
            return Err(MfeError::InvalidLattice("zero period".into()));
        }
        let tau = omega2 / omega1;
        if !(tau.im > 0.0) {
            return Err(MfeError::InvalidLattice(format!("Im(omega2/omega1) = {} must be positive", tau.im)));
        }
        let area = (omega1.conj() * omega2).im;
        let scale = 1.0 / area.sqrt();
        let omega1 = omega1 * scale;
        let omega2 = omega2 * scale;
        let (b1, b2) = lagrange_reduce(omega1, omega2);
        let lattice = Self { omega1, omega2, b1, b2 };
        lattice.check_biorthogonal()?;
        Ok(lattice)
    }

    pub fn square() -> Self {
        Self::new(Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)).expect("unit square is valid")
    }

    /// Lattice with shape `tau = ω2/ω1` and `ω1` real.
    pub fn from_tau(tau: Complex64) -> Result<Self> {
        Self::new(Complex64::new(1.0, 0.0), tau)
    }

    pub fn omega1(&self) -> Complex64 {
        self.omega1
    }

    pub fn omega2(&self) -> Complex64 {
        self.omega2
    }

    pub fn area(&self) -> f64 {
        (self.omega1.conj() * self.omega2).im
    }

    pub fn tau(&self) -> Complex64 {
        self.omega2 / self.omega1
    }

    /// Shortest positively oriented basis of the lattice.
    pub fn reduced_basis(&self) -> (Complex64, Complex64) {
        (self.b1, self.b2)
    }

    /// Dual basis `d1 = −iω2`, `d2 = iω1`, satisfying `Re(ωi·conj(dj)) = δij`.
    pub fn dual(&self) -> [Complex64; 2] {
        dual_of(self.omega1, self.omega2)
    }

    /// True when the periods are orthogonal (rectangular torus).
    pub fn is_rectangular(&self) -> bool {
        (self.omega1.conj() * self.omega2).re.abs() < 1e-14 * self.omega1.norm() * self.omega2.norm()
    }

    /// Shortest period length.
    pub fn min_period(&self) -> f64 {
        self.b1.norm()
    }

    pub fn max_period(&self) -> f64 {
        self.omega1.norm().max(self.omega2.norm())
    }

    pub fn to_complex(&self, p: TorusPoint) -> Complex64 {
        self.omega1 * p.s + self.omega2 * p.t
    }

    /// Lattice coordinates `(s, t)` of `z = sω1 + tω2` (not wrapped).
    pub fn coords(&self, z: Complex64) -> (f64, f64) {
        let [d1, d2] = self.dual();
        ((z * d1.conj()).re, (z * d2.conj()).re)
    }

    /// Shortest representative of `v` modulo the lattice.
    pub fn min_image(&self, v: Complex64) -> Complex64 {
        let [e1, e2] = dual_of(self.b1, self.b2);
        let a = (v * e1.conj()).re.round();
        let b = (v * e2.conj()).re.round();
        let base = v - self.b1 * a - self.b2 * b;
        let mut best = base;
        for da in -1..=1 {
            for db in -1..=1 {
                let cand = base - self.b1 * da as f64 - self.b2 * db as f64;
                if cand.norm_sqr() < best.norm_sqr() {
                    best = cand;
                }
            }
        }
        best
    }

    /// Shortest displacement `x − y` modulo the lattice.
    pub fn displacement(&self, x: TorusPoint, y: TorusPoint) -> Complex64 {
        self.min_image(self.to_complex(x) - self.to_complex(y))
    }

    /// Covering bound: no point is farther than this from the nearest lattice point.
    pub fn diameter_bound(&self) -> f64 {
        0.5 * (self.b1.norm() + self.b2.norm())
    }

    fn check_biorthogonal(&self) -> Result<()> {
        let w = [self.omega1, self.omega2];
        let d = self.dual();
        for i in 0..2 {
            for j in 0..2 {
                let target = if i == j { 1.0 } else { 0.0 };
                let got = (w[i] * d[j].conj()).re;
                if (got - target).abs() > 1e-12 {
                    return Err(MfeError::InvalidLattice(format!("dual basis not biorthogonal: <w{}, d{}> = {got}", i + 1, j + 1)));
                }
            }
        }
        Ok(())
    }
}

fn dual_of(w1: Complex64, w2: Complex64) -> [Complex64; 2] {
    let i = Complex64::new(0.0, 1.0);
    [-i * w2, i * w1]
}

fn lagrange_reduce(mut b1: Complex64, mut b2: Complex64) -> (Complex64, Complex64) {
    loop {
        if b2.norm_sqr() < b1.norm_sqr() {
            std::mem::swap(&mut b1, &mut b2);
        }
        let mu = (b2 * b1.conj()).re / b1.norm_sqr();
        if mu.abs() <= 0.5 {
            break;
        }
        b2 -= b1 * mu.round();
    }
    if (b1.conj() * b2).im < 0.0 {
        b2 = -b2;
    }
    (b1, b2)
}

/// Shortest-image distance between two torus points.
pub fn torus_distance(lattice: &TorusLattice, x: TorusPoint, y: TorusPoint) -> f64 {
    lattice.displacement(x, y).norm()
}

/// A point on the torus in lattice coordinates, canonically in `[0,1)²`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct TorusPoint {
    pub s: f64,
    pub t: f64,
}

impl TorusPoint {
    pub fn new(s: f64, t: f64) -> Self {
        Self { s: wrap_unit(s), t: wrap_unit(t) }
    }

    pub fn origin() -> Self {
        Self { s: 0.0, t: 0.0 }
    }

    pub fn from_complex(lattice: &TorusLattice, z: Complex64) -> Self {
        let (s, t) = lattice.coords(z);
        Self::new(s, t)
    }

    pub fn neg(self) -> Self {
        Self::new(-self.s, -self.t)
    }
}

fn wrap_unit(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    // rem_euclid can round up to exactly 1.0 for tiny negative inputs.
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Grid resolution; `n` is even so that `z ↦ −z` maps nodes to nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridSpec {
    n: usize,
}

impl GridSpec {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 || n % 2 != 0 {
            return Err(MfeError::Precondition(format!("grid size n = {n} must be a positive even integer")));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Grid spacing along each period, in length units.
    pub fn spacing(&self, lattice: &TorusLattice) -> f64 {
        lattice.max_period() / self.n as f64
    }
}

/// Real scalar field on an `n × n` periodic grid, row-major in `(j, k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    spec: GridSpec,
    lattice: TorusLattice,
    values: Vec<f64>,
}

impl GridField {
    pub fn zeros(lattice: TorusLattice, spec: GridSpec) -> Self {
        Self::constant(lattice, spec, 0.0)
    }

    pub fn constant(lattice: TorusLattice, spec: GridSpec, c: f64) -> Self {
        Self { spec, lattice, values: vec![c; spec.n * spec.n] }
    }

    pub fn from_values(lattice: TorusLattice, spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.n * spec.n {
            return Err(MfeError::Precondition(format!("expected {} values, got {}", spec.n * spec.n, values.len())));
        }
        Ok(Self { spec, lattice, values })
    }

    /// Samples `f(s, t)` at every node.
    pub fn from_fn(lattice: TorusLattice, spec: GridSpec, f: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        let n = spec.n;
        let h = 1.0 / n as f64;
        let mut values = vec![0.0; n * n];
        values.par_chunks_mut(n).enumerate().for_each(|(j, row)| {
            for (k, v) in row.iter_mut().enumerate() {
                *v = f(j as f64 * h, k as f64 * h);
            }
        });
        Self { spec, lattice, values }
    }

    /// Samples `f(v)` where `v` is the shortest displacement from `center` to each node.
    pub fn from_displacement(lattice: TorusLattice, spec: GridSpec, center: TorusPoint, f: impl Fn(Complex64) -> f64 + Sync) -> Self {
        let c = lattice.to_complex(center);
        Self::from_fn(lattice, spec, |s, t| {
            let x = lattice.omega1 * s + lattice.omega2 * t;
            f(lattice.min_image(x - c))
        })
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn lattice(&self) -> &TorusLattice {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.values[j * self.spec.n + k]
    }

    /// Value at node indices taken modulo `n`.
    pub fn get_wrapped(&self, j: isize, k: isize) -> f64 {
        let n = self.spec.n as isize;
        self.get(j.rem_euclid(n) as usize, k.rem_euclid(n) as usize)
    }

    pub fn node_point(&self, j: usize, k: usize) -> TorusPoint {
        let n = self.spec.n as f64;
        TorusPoint::new(j as f64 / n, k as f64 / n)
    }

    /// Nearest grid node to a torus point.
    pub fn nearest_node(&self, p: TorusPoint) -> (usize, usize) {
        let n = self.spec.n;
        let j = (p.s * n as f64).round() as usize % n;
        let k = (p.t * n as f64).round() as usize % n;
        (j, k)
    }

    pub fn same_grid(&self, other: &GridField) -> bool {
        self.spec == other.spec && self.lattice == other.lattice
    }

    fn assert_same_grid(&self, other: &GridField) {
        assert!(self.same_grid(other), "fields live on different grids");
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        let values = self.values.par_iter().map(|&v| f(v)).collect();
        Self { spec: self.spec, lattice: self.lattice, values }
    }

    pub fn zip_map(&self, other: &GridField, f: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        self.assert_same_grid(other);
        let values = self.values.par_iter().zip(other.values.par_iter()).map(|(&a, &b)| f(a, b)).collect();
        Self { spec: self.spec, lattice: self.lattice, values }
    }

    pub fn add(&self, other: &GridField) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &GridField) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn add_scalar(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }

    /// `self += a·other`.
    pub fn axpy(&mut self, a: f64, other: &GridField) {
        self.assert_same_grid(other);
        self.values.par_iter_mut().zip(other.values.par_iter()).for_each(|(x, &y)| *x += a * y);
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest value and its node; ties resolve to the first node in row-major order.
    pub fn argmax(&self) -> (usize, usize, f64) {
        let n = self.spec.n;
        let mut best = (0, f64::NEG_INFINITY);
        for (i, &v) in self.values.iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        (best.0 / n, best.0 % n, best.1)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Discrete `L²(T)` inner product `(1/n²)·Σ f·g`.
    pub fn dot(&self, other: &GridField) -> f64 {
        self.assert_same_grid(other);
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        s / (self.values.len() as f64)
    }

    /// Discrete `L²(T)` norm.
    pub fn l2_norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Translates by whole grid cells: `g(j, k) = f(j − dj, k − dk)`.
    pub fn shift(&self, dj: isize, dk: isize) -> Self {
        let n = self.spec.n;
        let mut values = vec![0.0; n * n];
        for j in 0..n {
            for k in 0..n {
                values[j * n + k] = self.get_wrapped(j as isize - dj, k as isize - dk);
            }
        }
        Self { spec: self.spec, lattice: self.lattice, values }
    }

    /// Index of the node `−z` for node `(j, k)`.
    pub fn mirror_index(&self, j: usize, k: usize) -> (usize, usize) {
        let n = self.spec.n;
        ((n - j) % n, (n - k) % n)
    }
}

/// Periodic trapezoid rule over the unit-area torus.
pub fn integrate(f: &GridField) -> f64 {
    f.values.iter().sum::<f64>() / f.values.len() as f64
}

/// Even part `g(z) = (f(z) + f(−z))/2`; exactly even at nodes and idempotent.
pub fn symmetrize_even(f: &GridField) -> GridField {
    let n = f.spec.n;
    let mut values = vec![0.0; n * n];
    for j in 0..n {
        for k in 0..n {
            let (mj, mk) = f.mirror_index(j, k);
            values[j * n + k] = 0.5 * (f.get(j, k) + f.get(mj, mk));
        }
    }
    GridField { spec: f.spec, lattice: f.lattice, values }
}

/// Largest violation of `f(z) = f(−z)` over the grid.
pub fn evenness_defect(f: &GridField) -> f64 {
    let n = f.spec.n;
    let mut worst = 0.0_f64;
    for j in 0..n {
        for k in 0..n {
            let (mj, mk) = f.mirror_index(j, k);
            worst = worst.max((f.get(j, k) - f.get(mj, mk)).abs());
        }
    }
    worst
}

/// Spectral operators on a fixed `(lattice, n)` grid.
///
/// Forward transforms leave coefficients in transposed order: mode
/// `(a, b)` (frequency `a` along `s`, `b` along `t`) sits at `b·n + a`.
pub struct Spectral {
    n: usize,
    lattice: TorusLattice,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    // |k*|² per mode, transposed order; Nyquist rows/columns drop the cross term.
    k2: Vec<f64>,
}

type SpectralKey = (usize, [u64; 4]);

fn spectral_cache() -> &'static Mutex<HashMap<SpectralKey, Arc<Spectral>>> {
    static CACHE: OnceLock<Mutex<HashMap<SpectralKey, Arc<Spectral>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

impl Spectral {
    pub fn new(lattice: TorusLattice, spec: GridSpec) -> Self {
        let n = spec.n;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let [d1, d2] = lattice.dual();
        let (d11, d22, d12) = (d1.norm_sqr(), d2.norm_sqr(), (d1 * d2.conj()).re);
        let half = n / 2;
        let signed = |a: usize| if a <= half { a as f64 } else { a as f64 - n as f64 };
        let mut k2 = vec![0.0; n * n];
        for b in 0..n {
            for a in 0..n {
                let (k1, kk2) = (signed(a), signed(b));
                let cross = if a == half || b == half { 0.0 } else { 2.0 * k1 * kk2 * d12 };
                k2[b * n + a] = k1 * k1 * d11 + kk2 * kk2 * d22 + cross;
            }
        }
        Self { n, lattice, fwd, inv, k2 }
    }

    /// Shared instance for `(lattice, spec)`, built once per process.
    pub fn shared(lattice: &TorusLattice, spec: GridSpec) -> Arc<Spectral> {
        let key =
            (spec.n, [lattice.omega1.re.to_bits(), lattice.omega1.im.to_bits(), lattice.omega2.re.to_bits(), lattice.omega2.im.to_bits()]);
        let mut cache = spectral_cache().lock().expect("spectral cache poisoned");
        cache.entry(key).or_insert_with(|| Arc::new(Spectral::new(*lattice, spec))).clone()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `|k*|²` of each mode in transposed coefficient order.
    pub fn wavenumber_sq(&self) -> &[f64] {
        &self.k2
    }

    fn check(&self, f: &GridField) {
        assert!(f.spec.n == self.n && f.lattice == self.lattice, "field does not match spectral grid");
    }

    fn rows(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        let scratch_len = fft.get_inplace_scratch_len();
        data.par_chunks_mut(n)
            .for_each_init(|| vec![Complex64::new(0.0, 0.0); scratch_len], |scratch, row| fft.process_with_scratch(row, scratch));
    }

    /// Unnormalized 2D DFT, transposed output order.
    pub fn forward(&self, f: &GridField) -> Vec<Complex64> {
        self.check(f);
        let mut data: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.rows(&mut data, &self.fwd);
        let mut t = transpose(&data, self.n);
        self.rows(&mut t, &self.fwd);
        t
    }

    /// Inverse of [`Spectral::forward`] including the `1/n²` normalization; returns the real part.
    pub fn inverse(&self, mut coeffs: Vec<Complex64>) -> GridField {
        let n = self.n;
        self.rows(&mut coeffs, &self.inv);
        let mut data = transpose(&coeffs, n);
        self.rows(&mut data, &self.inv);
        let norm = 1.0 / (n * n) as f64;
        let values = data.iter().map(|c| c.re * norm).collect();
        GridField { spec: GridSpec { n }, lattice: self.lattice, values }
    }

    /// Applies a Fourier multiplier given as a function of `|k*|²`.
    pub fn apply(&self, f: &GridField, m: impl Fn(f64) -> f64 + Sync) -> GridField {
        let mut c = self.forward(f);
        c.par_iter_mut().zip(self.k2.par_iter()).for_each(|(c, &k2)| *c *= m(k2));
        self.inverse(c)
    }

    pub fn laplacian(&self, f: &GridField) -> GridField {
        self.apply(f, |k2| -4.0 * PI * PI * k2)
    }

    /// Zero-mean solution of `−Δu = rhs`; the mean of `rhs` must vanish.
    pub fn solve_poisson(&self, rhs: &GridField) -> Result<GridField> {
        let mean = integrate(rhs);
        let scale = rhs.values.iter().map(|v| v.abs()).sum::<f64>() / rhs.values.len() as f64;
        if mean.abs() > 1e-10 * scale.max(1.0) {
            return Err(MfeError::Precondition(format!("Poisson right-hand side has mean {mean:e}")));
        }
        Ok(self.apply(rhs, |k2| if k2 == 0.0 { 0.0 } else { 1.0 / (4.0 * PI * PI * k2) }))
    }

    /// `(−Δ + c)⁻¹` for `c > 0`.
    pub fn shifted_inverse(&self, f: &GridField, c: f64) -> GridField {
        self.apply(f, |k2| 1.0 / (4.0 * PI * PI * k2 + c))
    }

    /// `∫|∇f|²` from the Fourier coefficients.
    pub fn dirichlet_energy(&self, f: &GridField) -> f64 {
        let c = self.forward(f);
        let n4 = ((self.n * self.n) as f64).powi(2);
        c.iter().zip(&self.k2).map(|(c, &k2)| 4.0 * PI * PI * k2 * c.norm_sqr()).sum::<f64>() / n4
    }

    /// Trigonometric interpolant of a field (given by its coefficients) at an arbitrary point.
    /// Nyquist modes are treated as cosines so the interpolant is real.
    pub fn interpolate(&self, coeffs: &[Complex64], p: TorusPoint) -> f64 {
        let n = self.n;
        let half = n / 2;
        let phase = |x: f64, a: usize| -> Complex64 {
            let k = if a <= half { a as f64 } else { a as f64 - n as f64 };
            if a == half {
                Complex64::new((TWO_PI * k * x).cos(), 0.0)
            } else {
                Complex64::from_polar(1.0, TWO_PI * k * x)
            }
        };
        let es: Vec<Complex64> = (0..n).map(|a| phase(p.s, a)).collect();
        let mut total = Complex64::new(0.0, 0.0);
        for b in 0..n {
            let row = &coeffs[b * n..(b + 1) * n];
            let inner: Complex64 = row.iter().zip(&es).map(|(c, e)| c * e).sum();
            total += inner * phase(p.t, b);
        }
        total.re / (n * n) as f64
    }
}

fn transpose(data: &[Complex64], n: usize) -> Vec<Complex64> {
    const BLOCK: usize = 32;
    let mut out = vec![Complex64::new(0.0, 0.0); n * n];
    for jb in (0..n).step_by(BLOCK) {
        for kb in (0..n).step_by(BLOCK) {
            for j in jb..(jb + BLOCK).min(n) {
                for k in kb..(kb + BLOCK).min(n) {
                    out[k * n + j] = data[j * n + k];
                }
            }
        }
    }
    out
}

pub fn laplacian(f: &GridField) -> GridField {
    Spectral::shared(&f.lattice, f.spec).laplacian(f)
}

pub fn solve_poisson(rhs: &GridField) -> Result<GridField> {
    Spectral::shared(&rhs.lattice, rhs.spec).solve_poisson(rhs)
}

const TBF_MAGIC: &[u8; 4] = b"TBF1";

/// Writes a field dump: magic, `u32` n, `ω1`, `ω2` as little-endian `f64`s, then values row-major.
pub fn write_field(path: &Path, f: &GridField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TBF_MAGIC)?;
    w.write_all(&(f.spec.n as u32).to_le_bytes())?;
    for x in [f.lattice.omega1.re, f.lattice.omega1.im, f.lattice.omega2.re, f.lattice.omega2.im] {
        w.write_all(&x.to_le_bytes())?;
    }
    for v in &f.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<GridField> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TBF_MAGIC {
        return Err(MfeError::Precondition(format!("{} is not a field dump", path.display())));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let n = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    let mut next = |r: &mut BufReader<File>| -> Result<f64> {
        r.read_exact(&mut b8)?;
        Ok(f64::from_le_bytes(b8))
    };
    let header: Vec<f64> = (0..4).map(|_| next(&mut r)).collect::<Result<_>>()?;
    let lattice = TorusLattice::new(Complex64::new(header[0], header[1]), Complex64::new(header[2], header[3]))?;
    let spec = GridSpec::new(n)?;
    let values = (0..n * n).map(|_| next(&mut r)).collect::<Result<Vec<_>>>()?;
    GridField::from_values(lattice, spec, values)
}
