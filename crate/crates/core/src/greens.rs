//! Torus Green's function `−ΔG = δ₀ − 1`, `∫G = 0`, from its theta-product
//! representation, together with the blow-up functionals built from it.
//!
//! With a reduced basis `b1, b2` (`Im(conj(b1)·b2) = 1`), `τ = b2/b1`,
//! `ζ = v/b1` and `e(w) = exp(2πiw)`:
//!
//! ```text
//! G(v) = |v|²/4 − Re(conj(b1)/b1 · v²)/4 − Im(ζ)/2 + Im(τ)/12
//!        − (1/2π)·log|1 − e(ζ)|
//!        − (1/2π)·Σ_{n≥1} log|1 − e(nτ + ζ)| + log|1 − e(nτ − ζ)|
//! ```
//!
//! evaluated at the shortest representative `v` of the displacement.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix4, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{MfeError, Result};
use crate::geometry::{TorusLattice, TorusPoint};

pub mod oracle;

const TWO_PI: f64 = 2.0 * PI;
const EIGHT_PI: f64 = 8.0 * PI;
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Which half-period carries the second blow-up point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HalfPeriod {
    /// `ω1/2`
    W1Half,
    /// `ω2/2`
    W2Half,
    /// `(ω1 + ω2)/2`
    Diag,
}

impl HalfPeriod {
    pub const ALL: [HalfPeriod; 3] = [HalfPeriod::W1Half, HalfPeriod::W2Half, HalfPeriod::Diag];

    pub fn point(self) -> TorusPoint {
        match self {
            HalfPeriod::W1Half => TorusPoint::new(0.5, 0.0),
            HalfPeriod::W2Half => TorusPoint::new(0.0, 0.5),
            HalfPeriod::Diag => TorusPoint::new(0.5, 0.5),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HalfPeriod::W1Half => "w1half",
            HalfPeriod::W2Half => "w2half",
            HalfPeriod::Diag => "diag",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "w1half" => Some(HalfPeriod::W1Half),
            "w2half" => Some(HalfPeriod::W2Half),
            "diag" => Some(HalfPeriod::Diag),
            _ => None,
        }
    }
}

/// Blow-up configuration `p1 = 0`, `p2` a half-period.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlowupPair {
    pub lattice: TorusLattice,
    pub which: HalfPeriod,
}

impl BlowupPair {
    pub fn new(lattice: TorusLattice, which: HalfPeriod) -> Self {
        Self { lattice, which }
    }

    pub fn p1(&self) -> TorusPoint {
        TorusPoint::origin()
    }

    pub fn p2(&self) -> TorusPoint {
        self.which.point()
    }

    pub fn point(&self, i: usize) -> TorusPoint {
        if i == 1 {
            self.p1()
        } else {
            self.p2()
        }
    }

    /// `d(p1, p2)`.
    pub fn separation(&self) -> f64 {
        self.lattice.displacement(self.p2(), self.p1()).norm()
    }
}

/// Evaluator for `G`, its regular part `R(v) = G(v) + (1/2π)·log|v|`, and derivatives.
#[derive(Clone, Debug)]
pub struct GreensEvaluator {
    lattice: TorusLattice,
    b1: Complex64,
    tau: Complex64,
    nome_pow: Vec<Complex64>,
    tail_tol: f64,
}

/// Value, Cartesian gradient and Hessian of a real function of `v`.
#[derive(Clone, Copy, Debug, Default)]
struct Jet {
    value: f64,
    grad: [f64; 2],
    hess: [[f64; 2]; 2],
}

impl Jet {
    /// Adds `Re F` given `F`, `F'`, `F''` of an analytic `F`.
    fn add_analytic(&mut self, f: f64, d1: Complex64, d2: Complex64) {
        self.value += f;
        self.grad[0] += d1.re;
        self.grad[1] -= d1.im;
        self.hess[0][0] += d2.re;
        self.hess[0][1] -= d2.im;
        self.hess[1][0] -= d2.im;
        self.hess[1][1] -= d2.re;
    }
}

/// First or second derivative of `G` or `R`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Derivative {
    Gradient([f64; 2]),
    Hessian([[f64; 2]; 2]),
}

/// `e^z − 1` without cancellation for small `|z|`.
pub fn cexpm1(z: Complex64) -> Complex64 {
    let (a, b) = (z.re, z.im);
    let s = (0.5 * b).sin();
    Complex64::new(a.exp_m1() * b.cos() - 2.0 * s * s, a.exp() * b.sin())
}

/// `log|1 − q|` without cancellation for small `|q|`.
fn log_abs_one_minus(q: Complex64) -> f64 {
    0.5 * (-2.0 * q.re + q.norm_sqr()).ln_1p()
}

/// `g(w) = 1/(e^w − 1) − 1/w` and `g'(w)`, analytic at `w = 0`.
fn bernoulli_g(w: Complex64) -> (Complex64, Complex64) {
    if w.norm() < 0.25 {
        let w2 = w * w;
        let g = -0.5 + w * (1.0 / 12.0 + w2 * (-1.0 / 720.0 + w2 * (1.0 / 30240.0 + w2 * (-1.0 / 1209600.0 + w2 / 47900160.0))));
        let dg = 1.0 / 12.0 + w2 * (-3.0 / 720.0 + w2 * (5.0 / 30240.0 + w2 * (-7.0 / 1209600.0 + w2 * 9.0 / 47900160.0)));
        (g, dg)
    } else {
        let em1 = cexpm1(w);
        let g = 1.0 / em1 - 1.0 / w;
        let dg = -(em1 + 1.0) / (em1 * em1) + 1.0 / (w * w);
        (g, dg)
    }
}

impl GreensEvaluator {
    pub const DEFAULT_TAIL_TOL: f64 = 1e-16;

    pub fn new(lattice: TorusLattice) -> Self {
        Self::with_tail_tol(lattice, Self::DEFAULT_TAIL_TOL)
    }

    pub fn with_tail_tol(lattice: TorusLattice, tail_tol: f64) -> Self {
        let (b1, b2) = lattice.reduced_basis();
        let tau = b2 / b1;
        let nome = (-TWO_PI * tau.im).exp();
        let m = (tail_tol.ln() / nome.ln()).ceil() as usize + 2;
        let nome_pow = (1..=m).map(|k| (TWO_PI * I * tau * k as f64).exp()).collect();
        Self { lattice, b1, tau, nome_pow, tail_tol }
    }

    pub fn lattice(&self) -> &TorusLattice {
        &self.lattice
    }

    /// Shape parameter of the reduced basis.
    pub fn tau(&self) -> Complex64 {
        self.tau
    }

    /// Number of retained product terms `M`.
    pub fn product_terms(&self) -> usize {
        self.nome_pow.len()
    }

    pub fn tail_tol(&self) -> f64 {
        self.tail_tol
    }

    /// Smooth part: polynomial plus the product over `n ≥ 1`.
    fn smooth_jet(&self, v: Complex64) -> Jet {
        let b1 = self.b1;
        let bb = b1.conj() / b1;
        let zeta = v / b1;
        let mut jet = Jet::default();
        // |v|²/4
        jet.value += 0.25 * v.norm_sqr();
        jet.grad[0] += 0.5 * v.re;
        jet.grad[1] += 0.5 * v.im;
        jet.hess[0][0] += 0.5;
        jet.hess[1][1] += 0.5;
        // Re(−B v²/4 + i v/(2 b1)) + Im(τ)/12
        let f = -bb * v * v * 0.25 + I * v / (2.0 * b1);
        jet.add_analytic(f.re + self.tau.im / 12.0, -bb * v * 0.5 + I / (2.0 * b1), -bb * 0.5);
        let ez = (TWO_PI * I * zeta).exp();
        let emz = 1.0 / ez;
        let c1 = I / b1;
        let c2 = -TWO_PI / (b1 * b1);
        for q in &self.nome_pow {
            let a = q * ez;
            let b = q * emz;
            let value = -(log_abs_one_minus(a) + log_abs_one_minus(b)) / TWO_PI;
            let (ra, rb) = (1.0 / (1.0 - a), 1.0 / (1.0 - b));
            let d1 = c1 * (a * ra - b * rb);
            let d2 = c2 * (a * ra * ra + b * rb * rb);
            jet.add_analytic(value, d1, d2);
        }
        jet
    }

    /// `−(1/2π)·log|1 − e(ζ)|` with derivatives.
    fn singular_jet(&self, v: Complex64) -> Jet {
        let w = TWO_PI * I * v / self.b1;
        let em1 = cexpm1(w);
        let e = em1 + 1.0;
        let mut jet = Jet::default();
        let d1 = -(I / self.b1) * e / em1;
        let d2 = -TWO_PI / (self.b1 * self.b1) * e / (em1 * em1);
        jet.add_analytic(-em1.norm().ln() / TWO_PI, d1, d2);
        jet
    }

    /// `−(1/2π)·log|1 − e(ζ)| + (1/2π)·log|v|`, regular at `v = 0`.
    fn desingularized_jet(&self, v: Complex64) -> Jet {
        let b1 = self.b1;
        let w = TWO_PI * I * v / b1;
        let value = if v.norm() == 0.0 { -(TWO_PI / b1.norm()).ln() / TWO_PI } else { -(cexpm1(w) / v).norm().ln() / TWO_PI };
        let (g, dg) = bernoulli_g(w);
        let d1 = (I / b1) * (-1.0 - g);
        let d2 = TWO_PI / (b1 * b1) * dg;
        let mut jet = Jet::default();
        jet.add_analytic(value, d1, d2);
        jet
    }

    fn checked_image(&self, v: Complex64) -> Result<Complex64> {
        let v = self.lattice.min_image(v);
        if v.norm() < 1e-12 * self.b1.norm() {
            return Err(MfeError::Singularity(format!("G is singular at lattice points (|v| = {:e}); use the regular part", v.norm())));
        }
        Ok(v)
    }

    fn green_jet(&self, v: Complex64) -> Result<Jet> {
        let v = self.checked_image(v)?;
        let mut jet = self.smooth_jet(v);
        let s = self.singular_jet(v);
        jet.value += s.value;
        for i in 0..2 {
            jet.grad[i] += s.grad[i];
            for j in 0..2 {
                jet.hess[i][j] += s.hess[i][j];
            }
        }
        Ok(jet)
    }

    fn regular_jet(&self, v: Complex64) -> Jet {
        let v = self.lattice.min_image(v);
        let mut jet = self.smooth_jet(v);
        let s = self.desingularized_jet(v);
        jet.value += s.value;
        for i in 0..2 {
            jet.grad[i] += s.grad[i];
            for j in 0..2 {
                jet.hess[i][j] += s.hess[i][j];
            }
        }
        jet
    }

    /// `G(v)` for a displacement `v ∈ ℂ` (any representative).
    pub fn green_at(&self, v: Complex64) -> Result<f64> {
        let v = self.checked_image(v)?;
        Ok(self.smooth_jet_value(v) - cexpm1(TWO_PI * I * v / self.b1).norm().ln() / TWO_PI)
    }

    fn smooth_jet_value(&self, v: Complex64) -> f64 {
        let b1 = self.b1;
        let zeta = v / b1;
        let mut value = 0.25 * v.norm_sqr() - 0.25 * (b1.conj() / b1 * v * v).re - 0.5 * zeta.im + self.tau.im / 12.0;
        let ez = (TWO_PI * I * zeta).exp();
        let emz = 1.0 / ez;
        let mut sum = 0.0;
        for q in &self.nome_pow {
            sum += log_abs_one_minus(q * ez) + log_abs_one_minus(q * emz);
        }
        value -= sum / TWO_PI;
        value
    }

    /// `R(v) = G(v) + (1/2π)·log|v|` at the shortest representative; finite at 0.
    pub fn regular_at(&self, v: Complex64) -> f64 {
        let v = self.lattice.min_image(v);
        let b1 = self.b1;
        let s = if v.norm() == 0.0 { -(TWO_PI / b1.norm()).ln() / TWO_PI } else { -(cexpm1(TWO_PI * I * v / b1) / v).norm().ln() / TWO_PI };
        self.smooth_jet_value(v) + s
    }

    pub fn green_gradient_at(&self, v: Complex64) -> Result<[f64; 2]> {
        Ok(self.green_jet(v)?.grad)
    }

    pub fn green_hessian_at(&self, v: Complex64) -> Result<[[f64; 2]; 2]> {
        Ok(self.green_jet(v)?.hess)
    }

    pub fn regular_gradient_at(&self, v: Complex64) -> [f64; 2] {
        self.regular_jet(v).grad
    }

    pub fn regular_hessian_at(&self, v: Complex64) -> [[f64; 2]; 2] {
        self.regular_jet(v).hess
    }

    pub fn green_value(&self, z: TorusPoint) -> Result<f64> {
        self.green_at(self.lattice.to_complex(z))
    }

    pub fn green_regular(&self, z: TorusPoint) -> f64 {
        self.regular_at(self.lattice.to_complex(z))
    }

    /// Cartesian gradient (`order = 1`) or Hessian (`order = 2`) of `G`.
    pub fn green_derivatives(&self, z: TorusPoint, order: u8) -> Result<Derivative> {
        let jet = self.green_jet(self.lattice.to_complex(z))?;
        match order {
            1 => Ok(Derivative::Gradient(jet.grad)),
            2 => Ok(Derivative::Hessian(jet.hess)),
            _ => Err(MfeError::Precondition(format!("derivative order {order} not in {{1, 2}}"))),
        }
    }

    /// Cartesian gradient or Hessian of `R`, valid everywhere.
    pub fn regular_derivatives(&self, z: TorusPoint, order: u8) -> Result<Derivative> {
        let jet = self.regular_jet(self.lattice.to_complex(z));
        match order {
            1 => Ok(Derivative::Gradient(jet.grad)),
            2 => Ok(Derivative::Hessian(jet.hess)),
            _ => Err(MfeError::Precondition(format!("derivative order {order} not in {{1, 2}}"))),
        }
    }

    /// `R(0)`.
    pub fn r0(&self) -> f64 {
        self.regular_at(Complex64::new(0.0, 0.0))
    }

    /// `∇²R(0)`.
    pub fn r0_hessian(&self) -> [[f64; 2]; 2] {
        self.regular_hessian_at(Complex64::new(0.0, 0.0))
    }

    /// `G*_i(x) = 8πR(x − p_i) + 8πG(x − p_j)`, `j ≠ i`.
    pub fn g_star(&self, pair: &BlowupPair, i: usize, x: TorusPoint) -> Result<f64> {
        let (pi, pj) = (pair.point(i), pair.point(3 - i));
        let vi = self.lattice.displacement(x, pi);
        let vj = self.lattice.displacement(x, pj);
        Ok(EIGHT_PI * (self.regular_at(vi) + self.green_at(vj)?))
    }

    /// Cartesian gradient of `G*_i`.
    pub fn g_star_gradient(&self, pair: &BlowupPair, i: usize, x: TorusPoint) -> Result<[f64; 2]> {
        let (pi, pj) = (pair.point(i), pair.point(3 - i));
        let gr = self.regular_gradient_at(self.lattice.displacement(x, pi));
        let gg = self.green_gradient_at(self.lattice.displacement(x, pj))?;
        Ok([EIGHT_PI * (gr[0] + gg[0]), EIGHT_PI * (gr[1] + gg[1])])
    }

    /// Cartesian Hessian of `G*_i`.
    pub fn g_star_hessian(&self, pair: &BlowupPair, i: usize, x: TorusPoint) -> Result<[[f64; 2]; 2]> {
        let (pi, pj) = (pair.point(i), pair.point(3 - i));
        let hr = self.regular_hessian_at(self.lattice.displacement(x, pi));
        let hg = self.green_hessian_at(self.lattice.displacement(x, pj))?;
        let mut h = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                h[a][b] = EIGHT_PI * (hr[a][b] + hg[a][b]);
            }
        }
        Ok(h)
    }

    /// `l(p) = Σ_i 16π·e^{G*_i(p_i)}`.
    pub fn l_of_p(&self, pair: &BlowupPair) -> Result<f64> {
        let mut l = 0.0;
        for i in 1..=2 {
            l += 16.0 * PI * self.g_star(pair, i, pair.point(i))?.exp();
        }
        Ok(l)
    }

    /// `f2(x1, x2) = 8πR(0) + 8πG(x1 − x2)` and its Cartesian gradient `(∂x1, ∂x2)`.
    pub fn f2_gradient(&self, x1: Complex64, x2: Complex64) -> Result<(f64, [f64; 4])> {
        let v = x1 - x2;
        let value = EIGHT_PI * (self.r0() + self.green_at(v)?);
        let g = self.green_gradient_at(v)?;
        Ok((value, [EIGHT_PI * g[0], EIGHT_PI * g[1], -EIGHT_PI * g[0], -EIGHT_PI * g[1]]))
    }

    /// `f2` and its Hessian in `(x1.re, x1.im, x2.re, x2.im)`, by central differences
    /// of the analytic gradient (step `1e-5` times the shortest period).
    pub fn f2_and_hessian(&self, x1: TorusPoint, x2: TorusPoint) -> Result<(f64, Matrix4<f64>)> {
        let z1 = self.lattice.to_complex(x1);
        let z2 = self.lattice.to_complex(x2);
        if self.lattice.min_image(z1 - z2).norm() < 1e-9 {
            return Err(MfeError::Singularity("f2 undefined for coincident points".into()));
        }
        let (value, _) = self.f2_gradient(z1, z2)?;
        let h = 1e-5 * self.lattice.min_period();
        let mut hess = Matrix4::zeros();
        for c in 0..4 {
            let mut dz = [Complex64::new(0.0, 0.0); 2];
            let unit = if c % 2 == 0 { Complex64::new(h, 0.0) } else { Complex64::new(0.0, h) };
            dz[c / 2] = unit;
            let (_, gp) = self.f2_gradient(z1 + dz[0], z2 + dz[1])?;
            let (_, gm) = self.f2_gradient(z1 - dz[0], z2 - dz[1])?;
            for r in 0..4 {
                hess[(r, c)] = (gp[r] - gm[r]) / (2.0 * h);
            }
        }
        let sym = (hess + hess.transpose()) * 0.5;
        Ok((value, sym))
    }
}

/// Blow-up functionals at the configuration `(p1, p2)`.
#[derive(Clone, Debug)]
pub struct StarData {
    pub gstar_at_p: [f64; 2],
    pub gstar_grad_at_p: [[f64; 2]; 2],
    pub l_value: f64,
    pub f2_value: f64,
    pub f2_hessian: Matrix4<f64>,
}

impl StarData {
    pub fn compute(ev: &GreensEvaluator, pair: &BlowupPair) -> Result<Self> {
        let g1 = ev.g_star(pair, 1, pair.p1())?;
        let g2 = ev.g_star(pair, 2, pair.p2())?;
        let d1 = ev.g_star_gradient(pair, 1, pair.p1())?;
        let d2 = ev.g_star_gradient(pair, 2, pair.p2())?;
        let (f2_value, f2_hessian) = ev.f2_and_hessian(pair.p1(), pair.p2())?;
        Ok(Self { gstar_at_p: [g1, g2], gstar_grad_at_p: [d1, d2], l_value: ev.l_of_p(pair)?, f2_value, f2_hessian })
    }

    /// Eigenvalues of the `f2` Hessian, ascending by magnitude.
    pub fn f2_hessian_eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.f2_hessian).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        ev
    }
}

/// Morse type of a critical point of `G`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CriticalKind {
    Min,
    Max,
    Saddle,
    Degenerate,
}

impl CriticalKind {
    pub fn name(self) -> &'static str {
        match self {
            CriticalKind::Min => "min",
            CriticalKind::Max => "max",
            CriticalKind::Saddle => "saddle",
            CriticalKind::Degenerate => "degenerate",
        }
    }
}

#[derive(Clone, Debug)]
pub struct CriticalPoint {
    pub point: TorusPoint,
    pub kind: CriticalKind,
    pub hessian_eigenvalues: [f64; 2],
    pub gradient_norm: f64,
}

#[derive(Clone, Debug)]
pub struct CriticalSearch {
    pub points: Vec<CriticalPoint>,
    /// Seeds from which Newton did not reach `|∇G| < 1e-10`.
    pub failed_seeds: Vec<TorusPoint>,
}

/// Uniform `k × k` seed grid in lattice coordinates.
pub fn seed_grid(k: usize) -> Vec<TorusPoint> {
    let mut seeds = Vec::with_capacity(k * k);
    for a in 0..k {
        for b in 0..k {
            seeds.push(TorusPoint::new((a as f64 + 0.5) / k as f64, (b as f64 + 0.5) / k as f64));
        }
    }
    seeds
}

fn classify(h: [[f64; 2]; 2]) -> (CriticalKind, [f64; 2]) {
    let m = Matrix2::new(h[0][0], h[0][1], h[1][0], h[1][1]);
    let e = SymmetricEigen::new(m).eigenvalues;
    let (a, b) = (e[0].min(e[1]), e[0].max(e[1]));
    let kind = if a.abs() < 1e-8 || b.abs() < 1e-8 {
        CriticalKind::Degenerate
    } else if a > 0.0 {
        CriticalKind::Min
    } else if b < 0.0 {
        CriticalKind::Max
    } else {
        CriticalKind::Saddle
    };
    (kind, [a, b])
}

/// Critical points of `G` by Newton's method from each seed, deduplicated modulo
/// the lattice. The three half-periods are always seeded first.
pub fn find_critical_points(ev: &GreensEvaluator, seeds: &[TorusPoint]) -> CriticalSearch {
    let lattice = *ev.lattice();
    let scale = lattice.min_period();
    let mut all: Vec<TorusPoint> = HalfPeriod::ALL.iter().map(|h| h.point()).collect();
    all.extend_from_slice(seeds);
    let mut points: Vec<CriticalPoint> = Vec::new();
    let mut failed_seeds = Vec::new();
    for seed in all {
        let mut z = lattice.to_complex(seed);
        let mut converged = false;
        for _ in 0..60 {
            let Ok(jet) = ev.green_jet(z) else { break };
            let gnorm = jet.grad[0].hypot(jet.grad[1]);
            if gnorm < 1e-13 {
                converged = true;
                break;
            }
            let h = Matrix2::new(jet.hess[0][0], jet.hess[0][1], jet.hess[1][0], jet.hess[1][1]);
            let Some(inv) = h.try_inverse() else { break };
            let step = inv * nalgebra::Vector2::new(jet.grad[0], jet.grad[1]);
            let mut dz = Complex64::new(step[0], step[1]);
            // Keep steps inside the cell so Newton cannot jump across the singularity.
            let cap = 0.1 * scale;
            if dz.norm() > cap {
                dz *= cap / dz.norm();
            }
            z -= dz;
            z = lattice.min_image(z);
            if z.norm() < 1e-3 * scale {
                break;
            }
        }
        if !converged {
            if let Ok(g) = ev.green_gradient_at(z) {
                converged = g[0].hypot(g[1]) < 1e-10;
            }
        }
        if !converged {
            failed_seeds.push(seed);
            continue;
        }
        let p = TorusPoint::from_complex(&lattice, z);
        if points.iter().any(|q| lattice.displacement(p, q.point).norm() < 1e-7 * scale) {
            continue;
        }
        let jet = ev.green_jet(z).expect("converged away from the singularity");
        let (kind, eig) = classify(jet.hess);
        points.push(CriticalPoint { point: p, kind, hessian_eigenvalues: eig, gradient_norm: jet.grad[0].hypot(jet.grad[1]) });
    }
    CriticalSearch { points, failed_seeds }
}

/// Iterates and extrapolation of the renormalized mass coefficient `D(p)`.
#[derive(Clone, Debug)]
pub struct DReport {
    /// `(r, D(r))` with `D(r) = Σ_i e^{G*_i(p_i)}(∫_{M_i∖B(p_i,r_i)} e^{Φ_i} − π/r_i²)`.
    pub iterates: Vec<(f64, f64)>,
    /// Coefficient of `log(1/r)` predicted from `ΔG*_i = 16π`: `16π²·e^{G*_1(p1)}`.
    pub log_coefficient_predicted: f64,
    /// Same coefficient fitted from the last two iterates.
    pub log_coefficient_fitted: f64,
    /// `D(r) − predicted·log(1/r)` extrapolated to `r → 0` assuming an `O(r²)` remainder.
    pub finite_part: f64,
    /// Change in the extrapolated finite part between the last two iterate pairs.
    pub error_estimate: f64,
}

const GL16: [(f64, f64); 8] = [
    (0.0950125098376374, 0.1894506104550685),
    (0.2816035507792589, 0.1826034150449236),
    (0.4580167776572274, 0.1691565193950025),
    (0.6178762444026438, 0.1495959888165767),
    (0.7554044083550030, 0.1246289712555339),
    (0.8656312023878318, 0.0951585116824928),
    (0.9445750230732326, 0.0622535239386479),
    (0.9894009349916499, 0.0271524594117541),
];

/// Composite 16-point Gauss–Legendre rule on `[a, b]` with panels of width at most `width`.
fn gauss_legendre(a: f64, b: f64, width: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let panels = (((b - a) / width).ceil() as usize).max(1);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        for &(x, w) in &GL16 {
            total += w * (f(mid - 0.5 * h * x) + f(mid + 0.5 * h * x));
        }
    }
    0.5 * h * total
}

fn smooth_step(x: f64) -> f64 {
    // C^∞ transition from 1 (x ≤ 0) to 0 (x ≥ 1).
    let psi = |y: f64| if y > 0.0 { (-1.0 / y).exp() } else { 0.0 };
    let a = psi(1.0 - x);
    let b = psi(x);
    a / (a + b)
}

struct DQuadrature<'a> {
    ev: &'a GreensEvaluator,
    pair: &'a BlowupPair,
    gstar: f64,
    /// Partition radius: `χ_i = 1` on `B(p_i, a)`, `0` outside `B(p_i, 2a)`.
    a: f64,
}

impl DQuadrature<'_> {
    fn phi(&self, x: Complex64) -> Result<f64> {
        let p2 = self.ev.lattice.to_complex(self.pair.p2());
        Ok(EIGHT_PI * (self.ev.green_at(x)? + self.ev.green_at(x - p2)?) - self.gstar)
    }

    fn chi(&self, rho: f64) -> f64 {
        smooth_step(rho / self.a - 1.0)
    }

    /// `∫_{r_in < |x − p_i| < r_out} e^Φ·χ_i` in log-polar coordinates.
    fn polar(&self, i: usize, r_in: f64, r_out: f64, with_chi: bool) -> Result<f64> {
        let center = self.ev.lattice.to_complex(self.pair.point(i));
        let pj = self.ev.lattice.to_complex(self.pair.point(3 - i));
        let n_theta = 64;
        let mut err = None;
        let total = gauss_legendre(r_in.ln(), r_out.ln(), 0.25, |s| {
            let rho = s.exp();
            let mut ring = 0.0;
            for m in 0..n_theta {
                let th = TWO_PI * m as f64 / n_theta as f64;
                let y = Complex64::from_polar(rho, th);
                // e^Φ = ρ^{-4}·exp(8πR(y) + 8πG(y + p_i − p_j) − G*)
                let g = self.ev.green_at(y + center - pj);
                match g {
                    Ok(g) => ring += (EIGHT_PI * (self.ev.regular_at(y) + g) - self.gstar).exp(),
                    Err(e) => err = Some(e),
                }
            }
            let chi = if with_chi { self.chi(rho) } else { 1.0 };
            ring * TWO_PI / n_theta as f64 * chi / (rho * rho)
        });
        match err {
            Some(e) => Err(e),
            None => Ok(total),
        }
    }

    /// `∫_T e^Φ·(1 − χ1 − χ2)` by the periodic trapezoid rule.
    fn smooth_part(&self, n: usize) -> Result<f64> {
        let lattice = self.ev.lattice;
        let p2 = lattice.to_complex(self.pair.p2());
        let mut total = 0.0;
        for j in 0..n {
            for k in 0..n {
                let x = lattice.to_complex(TorusPoint::new(j as f64 / n as f64, k as f64 / n as f64));
                let d1 = lattice.min_image(x).norm();
                let d2 = lattice.min_image(x - p2).norm();
                let w = 1.0 - self.chi(d1) - self.chi(d2);
                if w > 0.0 {
                    total += w * self.phi(x)?.exp();
                }
            }
        }
        Ok(total / (n * n) as f64)
    }
}

/// Annulus integral `∫_{r_in < d(x,p_i) < r_out} e^{Φ_i}` (no cutoff), used to
/// validate the `d⁻⁴` singular behaviour behind the counterterm.
pub fn d_annulus_integral(ev: &GreensEvaluator, pair: &BlowupPair, i: usize, r_in: f64, r_out: f64) -> Result<f64> {
    let gstar = ev.g_star(pair, 1, pair.p1())?;
    let q = DQuadrature { ev, pair, gstar, a: pair.separation() / 4.0 };
    q.polar(i, r_in, r_out, false)
}

/// Per-ball contributions `∫_{B(p_i,2a)∖B(p_i,r_i)} e^Φ χ_i` for `i = 1, 2`.
pub fn d_ball_contributions(ev: &GreensEvaluator, pair: &BlowupPair, r: f64) -> Result<[f64; 2]> {
    let gstar = ev.g_star(pair, 1, pair.p1())?;
    let a = pair.separation() / 4.0;
    let q = DQuadrature { ev, pair, gstar, a };
    let ri = r * (8.0 * gstar.exp()).sqrt();
    Ok([q.polar(1, ri, 2.0 * a, true)?, q.polar(2, ri, 2.0 * a, true)?])
}

/// `D(p)` at each `r` (strictly decreasing), with `r_i = r·√(8e^{G*_i(p_i)})`.
///
/// Because `G*_1(p1) = G*_2(p2)`, both `Φ_i` coincide and the cell split is
/// immaterial: `D(r) = e^{G*}(∫_{T∖∪B(p_i,r_i)} e^Φ − 2π/r_i²)`. The integrand
/// behaves like `d⁻⁴(1 + 4π d² + …)` near each `p_i`, so `D(r)` grows like
/// `16π²e^{G*}·log(1/r)`; the report separates that term from the finite part.
pub fn d_of_p(ev: &GreensEvaluator, pair: &BlowupPair, r_values: &[f64], grid_n: usize) -> Result<DReport> {
    if r_values.len() < 2 {
        return Err(MfeError::Precondition("need at least two radii".into()));
    }
    if r_values.windows(2).any(|w| !(w[1] < w[0])) || r_values.iter().any(|&r| !(r > 0.0)) {
        return Err(MfeError::Precondition("radii must be positive and strictly decreasing".into()));
    }
    let gstar = ev.g_star(pair, 1, pair.p1())?;
    let a = pair.separation() / 4.0;
    let scale = (8.0 * gstar.exp()).sqrt();
    if r_values[0] * scale >= 0.5 * a {
        return Err(MfeError::Precondition(format!(
            "excluded disk radius {} does not fit inside the cell (limit {})",
            r_values[0] * scale,
            0.5 * a
        )));
    }
    let q = DQuadrature { ev, pair, gstar, a };
    let smooth = q.smooth_part(grid_n)?;
    let mut iterates = Vec::with_capacity(r_values.len());
    for &r in r_values {
        let ri = r * scale;
        let inner = q.polar(1, ri, 2.0 * a, true)? + q.polar(2, ri, 2.0 * a, true)?;
        let d = gstar.exp() * (smooth + inner - 2.0 * PI / (ri * ri));
        iterates.push((r, d));
    }
    let predicted = 16.0 * PI * PI * gstar.exp();
    let k = iterates.len();
    let (ra, da) = iterates[k - 2];
    let (rb, db) = iterates[k - 1];
    let fitted = (db - da) / (ra / rb).ln();
    let finite = |(r, d): (f64, f64)| d - predicted * (1.0 / r).ln();
    let extrapolate = |x: (f64, f64), y: (f64, f64)| {
        let (fa, fb) = (finite(x), finite(y));
        (fb * x.0 * x.0 - fa * y.0 * y.0) / (x.0 * x.0 - y.0 * y.0)
    };
    let finite_part = extrapolate(iterates[k - 2], iterates[k - 1]);
    let error_estimate = if k >= 3 {
        (finite_part - extrapolate(iterates[k - 3], iterates[k - 2])).abs()
    } else {
        (finite_part - finite(iterates[k - 1])).abs()
    };
    Ok(DReport { iterates, log_coefficient_predicted: predicted, log_coefficient_fitted: fitted, finite_part, error_estimate })
}
