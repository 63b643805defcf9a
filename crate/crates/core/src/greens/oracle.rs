//! Independent spectral construction of `G` for cross-validation of the series.
//!
//! A Gaussian mollifier of width two grid cells replaces `δ₀`; `−Δu = δ_σ − 1`
//! is solved spectrally and `u` is evaluated off-grid by trigonometric
//! interpolation. Away from the origin `u − G` is a constant (the Gaussian
//! smoothing of a function with `ΔG = 1`), removed by mean matching.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Derivative, GreensEvaluator, HalfPeriod};
use crate::error::Result;
use crate::geometry::{GridField, GridSpec, Spectral, TorusLattice, TorusPoint};

pub struct SpectralGreen {
    spectral: Arc<Spectral>,
    coeffs: Vec<Complex64>,
}

impl SpectralGreen {
    pub fn new(lattice: TorusLattice, n: usize) -> Result<Self> {
        let spec = GridSpec::new(n)?;
        let sigma = 2.0 * spec.spacing(&lattice);
        let bump = GridField::from_displacement(lattice, spec, TorusPoint::origin(), |v| (-v.norm_sqr() / (2.0 * sigma * sigma)).exp());
        let mass = crate::geometry::integrate(&bump);
        let rhs = bump.map(|b| b / mass - 1.0);
        let spectral = Spectral::shared(&lattice, spec);
        let u = spectral.solve_poisson(&rhs)?;
        let coeffs = spectral.forward(&u);
        Ok(Self { spectral, coeffs })
    }

    pub fn eval(&self, p: TorusPoint) -> f64 {
        self.spectral.interpolate(&self.coeffs, p)
    }
}

#[derive(Clone, Debug)]
pub struct OracleComparison {
    pub samples: usize,
    /// Constant removed by mean matching (series minus oracle).
    pub mean_shift: f64,
    pub max_abs_error: f64,
    /// `max_abs_error / max |G|` over the samples.
    pub max_rel_error: f64,
}

/// Random sample points at distance at least `min_dist` from the origin.
pub fn sample_points(lattice: &TorusLattice, count: usize, min_dist: f64, seed: u64) -> Vec<TorusPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let p = TorusPoint::new(rng.random::<f64>(), rng.random::<f64>());
        if lattice.displacement(p, TorusPoint::origin()).norm() > min_dist {
            out.push(p);
        }
    }
    out
}

pub fn compare_with_series(ev: &GreensEvaluator, n: usize, points: &[TorusPoint]) -> Result<OracleComparison> {
    let oracle = SpectralGreen::new(*ev.lattice(), n)?;
    let series: Vec<f64> = points.iter().map(|&p| ev.green_value(p)).collect::<Result<_>>()?;
    let spectral: Vec<f64> = points.iter().map(|&p| oracle.eval(p)).collect();
    let shift = series.iter().zip(&spectral).map(|(a, b)| a - b).sum::<f64>() / points.len() as f64;
    let max_abs = series.iter().zip(&spectral).map(|(a, b)| (a - b - shift).abs()).fold(0.0, f64::max);
    let scale = series.iter().map(|g| g.abs()).fold(0.0, f64::max);
    Ok(OracleComparison { samples: points.len(), mean_shift: shift, max_abs_error: max_abs, max_rel_error: max_abs / scale })
}

/// One line of the Green's function self-test.
#[derive(Clone, Debug)]
pub struct SelfTestItem {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl SelfTestItem {
    fn new(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self { name: name.into(), measured, tolerance, pass: measured.is_finite() && measured < tolerance }
    }
}

/// Oracle equivalence on the square and a sheared torus, plus the symmetry
/// and criticality identities of `G`.
pub fn selftest(n: usize, seed: u64) -> Result<Vec<SelfTestItem>> {
    let mut items = Vec::new();
    let square = TorusLattice::square();
    let sheared = TorusLattice::new(Complex64::new(1.0, 0.0), Complex64::new(0.3, 0.8))?;
    for (label, lattice) in [("square", square), ("sheared", sheared)] {
        let ev = GreensEvaluator::new(lattice);
        let pts = sample_points(&lattice, 100, 0.05, seed);
        let cmp = compare_with_series(&ev, n, &pts)?;
        items.push(SelfTestItem::new(format!("oracle_rel_error_{label}"), cmp.max_rel_error, 1e-6));

        let mut even = 0.0_f64;
        let mut conj = 0.0_f64;
        for &p in &pts {
            let z = lattice.to_complex(p);
            let g = ev.green_at(z)?;
            even = even.max((g - ev.green_at(-z)?).abs());
            if lattice.is_rectangular() {
                conj = conj.max((g - ev.green_at(z.conj())?).abs());
            }
        }
        items.push(SelfTestItem::new(format!("even_symmetry_{label}"), even, 1e-12));
        if lattice.is_rectangular() {
            items.push(SelfTestItem::new(format!("reflection_symmetry_{label}"), conj, 1e-12));
        }
        let mut grad = 0.0_f64;
        for h in HalfPeriod::ALL {
            if let Derivative::Gradient(g) = ev.green_derivatives(h.point(), 1)? {
                grad = grad.max(g[0].hypot(g[1]));
            }
        }
        items.push(SelfTestItem::new(format!("half_period_gradient_{label}"), grad, 1e-10));
    }
    Ok(items)
}

/// `∫_{B(0,R)} 16π/(1+2π r²)²` in closed form: `8π·(1 − 1/(1 + 2πR²))`.
pub fn bubble_mass_within(radius: f64) -> f64 {
    8.0 * PI * (1.0 - 1.0 / (1.0 + 2.0 * PI * radius * radius))
}
