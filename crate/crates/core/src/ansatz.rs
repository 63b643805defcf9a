//! Two-bubble approximate solution `w_λ = w_{λ,1} + w_{λ,2} + w̄_λ`, its
//! residual and energy, and the expansions it is expected to satisfy.
//!
//! Each `w_{λ,i}` solves `−Δw = f_i − m0` with the cut-off bubble
//! `f_i = 16πe^λ/(1 + 2πe^λ d(x,p_i)²)² · η(d(x,p_i)/R0)`, and
//! `w̄_λ = −λ + log(4/π) − 8πR(0) − 8πG(p1 − p2)`.

use std::f64::consts::PI;

use crate::error::{MfeError, Result};
use crate::geometry::{integrate, torus_distance, GridField, GridSpec, Spectral, TorusLattice, TorusPoint};
use crate::greens::{BlowupPair, GreensEvaluator};

const TWO_PI: f64 = 2.0 * PI;
const EIGHT_PI: f64 = 8.0 * PI;

/// Grid points required across the bubble core radius `(2πe^λ)^{-1/2}`.
pub const POINTS_PER_CORE: f64 = 2.0;

/// Largest `u` accepted before `e^u` is considered an overflow risk.
pub const EXP_GUARD: f64 = 700.0;

/// Root `λ > 1` of `c·λ·e^{−λ} = eps` (the decreasing branch).
pub fn solve_lambda_law(c: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < c / std::f64::consts::E) {
        return Err(MfeError::Precondition(format!("eps = {eps} outside (0, {}) for the law {c}·λe^(−λ) = eps", c / std::f64::consts::E)));
    }
    let f = |l: f64| (c * l).ln() - l - eps.ln();
    let (mut lo, mut hi) = (1.0, 2.0);
    while f(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    let mut l = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fl = f(l);
        if fl > 0.0 {
            lo = l;
        } else {
            hi = l;
        }
        let newton = l - fl / (1.0 / l - 1.0);
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - l).abs() <= 1e-15 * l {
            return Ok(next);
        }
        l = next;
    }
    Ok(l)
}

/// `(λ1, λ2)` with `16πλ1e^{−λ1} = ε` and `64πλ2e^{−λ2} = ε`.
pub fn lambda_bracket(eps: f64) -> Result<(f64, f64)> {
    if !(eps > 0.0 && eps < 16.0 * PI / std::f64::consts::E) {
        return Err(MfeError::Precondition(format!("eps = {eps} outside (0, 16π/e)")));
    }
    Ok((solve_lambda_law(16.0 * PI, eps)?, solve_lambda_law(64.0 * PI, eps)?))
}

/// Scale paired with `eps` by the leading-order law `ε = 32πλe^{−λ}`.
pub fn default_lambda(eps: f64) -> Result<f64> {
    solve_lambda_law(32.0 * PI, eps)
}

/// `ε = 32πλe^{−λ}`.
pub fn eps_for_lambda(lambda: f64) -> f64 {
    32.0 * PI * lambda * (-lambda).exp()
}

/// Cut-off profile: 1 on `[0,1]`, `1 − 3(s−1)² + 2(s−1)³` on `[1,2]`, 0 beyond.
pub fn eta_profile(s: f64) -> f64 {
    if s <= 1.0 {
        1.0
    } else if s >= 2.0 {
        0.0
    } else {
        let x = s - 1.0;
        1.0 - 3.0 * x * x + 2.0 * x * x * x
    }
}

pub fn eta_profile_derivative(s: f64) -> f64 {
    if s <= 1.0 || s >= 2.0 {
        0.0
    } else {
        let x = s - 1.0;
        -6.0 * x + 6.0 * x * x
    }
}

/// `η_{t,a}(x) = η(d(x,a)/t)`.
pub fn cutoff_eta(lattice: &TorusLattice, t: f64, a: TorusPoint, x: TorusPoint) -> f64 {
    eta_profile(torus_distance(lattice, x, a) / t)
}

/// Default cut-off radius: `0.125·(shortest period)`, reduced to `0.24·d(p1,p2)` when needed
/// so that `4R0 < d(p1,p2)` holds strictly.
pub fn default_r0(pair: &BlowupPair) -> f64 {
    (0.125 * pair.lattice.min_period()).min(0.24 * pair.separation())
}

/// Smallest even `n` resolving the core at scale `λ`.
pub fn min_resolution(lattice: &TorusLattice, lambda: f64) -> usize {
    let need = POINTS_PER_CORE * lattice.max_period() * (TWO_PI * lambda.exp()).sqrt();
    let n = need.ceil() as usize;
    n + n % 2
}

pub fn check_resolution(lattice: &TorusLattice, n: usize, lambda: f64) -> Result<()> {
    let need = min_resolution(lattice, lambda);
    if n < need {
        return Err(MfeError::Resolution(format!("n = {n} under-resolves the bubble core at lambda = {lambda:.4}; need n >= {need}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct AnsatzConfig {
    pub eps: f64,
    pub lambda: f64,
    pub r0: f64,
    pub pair: BlowupPair,
    pub spec: GridSpec,
}

impl AnsatzConfig {
    /// `λ` from `ε = 32πλe^{−λ}`, default `R0`.
    pub fn new(pair: BlowupPair, eps: f64, spec: GridSpec) -> Result<Self> {
        let lambda = default_lambda(eps)?;
        Ok(Self { eps, lambda, r0: default_r0(&pair), pair, spec })
    }

    /// Fixed `λ`, with `ε = 32πλe^{−λ}`.
    pub fn at_lambda(pair: BlowupPair, lambda: f64, spec: GridSpec) -> Self {
        Self { eps: eps_for_lambda(lambda), lambda, r0: default_r0(&pair), pair, spec }
    }

    pub fn rho(&self) -> f64 {
        16.0 * PI + self.eps
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.lambda > 0.0 && self.r0 > 0.0) {
            return Err(MfeError::Precondition("eps, lambda and r0 must be positive".into()));
        }
        let d = self.pair.separation();
        if !(4.0 * self.r0 < d) {
            return Err(MfeError::Precondition(format!("4·r0 = {} must be below d(p1,p2) = {d}", 4.0 * self.r0)));
        }
        check_resolution(&self.pair.lattice, self.spec.n(), self.lambda)
    }
}

/// The bubble `16πe^λ/(1 + 2πe^λ r²)²`.
pub fn bubble(lambda: f64, r2: f64) -> f64 {
    let e = lambda.exp();
    16.0 * PI * e / (1.0 + TWO_PI * e * r2).powi(2)
}

/// `f_i` sampled on the grid.
pub fn build_bubble_rhs(cfg: &AnsatzConfig, i: usize) -> Result<GridField> {
    cfg.validate()?;
    let (lambda, r0) = (cfg.lambda, cfg.r0);
    Ok(GridField::from_displacement(cfg.pair.lattice, cfg.spec, cfg.pair.point(i), |v| {
        let r2 = v.norm_sqr();
        bubble(lambda, r2) * eta_profile(r2.sqrt() / r0)
    }))
}

#[derive(Clone, Debug)]
pub struct AnsatzField {
    pub w: GridField,
    pub parts: [GridField; 2],
    pub wbar: f64,
    pub m0: f64,
    pub lambda: f64,
    pub eps: f64,
}

impl AnsatzField {
    /// `w_λ − log∫e^{w_λ}`: the same profile in the gauge `∫e^u = 1`.
    pub fn normalized(&self) -> Result<GridField> {
        let m = log_integral_exp(&self.w)?;
        Ok(self.w.add_scalar(-m))
    }
}

pub fn build_ansatz(cfg: &AnsatzConfig) -> Result<AnsatzField> {
    let ev = GreensEvaluator::new(cfg.pair.lattice);
    let spectral = Spectral::shared(&cfg.pair.lattice, cfg.spec);
    let mut parts = Vec::with_capacity(2);
    let mut m0 = 0.0;
    for i in 1..=2 {
        let f = build_bubble_rhs(cfg, i)?;
        let mi = integrate(&f);
        if i == 1 {
            m0 = mi;
        }
        parts.push(spectral.solve_poisson(&f.add_scalar(-mi))?);
    }
    let g12 = ev.green_value(cfg.pair.p2())?;
    let wbar = -cfg.lambda + (4.0 / PI).ln() - EIGHT_PI * ev.r0() - EIGHT_PI * g12;
    let w = parts[0].add(&parts[1]).add_scalar(wbar);
    let [p1, p2]: [GridField; 2] = parts.try_into().expect("two parts");
    Ok(AnsatzField { w, parts: [p1, p2], wbar, m0, lambda: cfg.lambda, eps: cfg.eps })
}

fn check_exp_guard(u: &GridField) -> Result<f64> {
    let m = u.max_value();
    if !(m < EXP_GUARD) || !u.is_finite() {
        return Err(MfeError::Precondition(format!("max u = {m} risks overflow in e^u")));
    }
    Ok(m)
}

/// `log∫e^u`, computed with the maximum factored out.
pub fn log_integral_exp(u: &GridField) -> Result<f64> {
    let m = check_exp_guard(u)?;
    Ok(m + integrate(&u.map(|v| (v - m).exp())).ln())
}

/// `S_ρ(u) = Δu + ρ(e^u/∫e^u − 1)`.
pub fn s_rho(u: &GridField, rho: f64) -> Result<GridField> {
    let lie = log_integral_exp(u)?;
    let lap = Spectral::shared(u.lattice(), u.spec()).laplacian(u);
    Ok(lap.zip_map(u, |l, v| l + rho * ((v - lie).exp() - 1.0)))
}

/// `J_ρ(u) = ½∫|∇u|² − ρ·log∫e^u + ρ∫u`.
pub fn energy(u: &GridField, rho: f64) -> Result<f64> {
    let lie = log_integral_exp(u)?;
    let dirichlet = Spectral::shared(u.lattice(), u.spec()).dirichlet_energy(u);
    Ok(0.5 * dirichlet - rho * lie + rho * integrate(u))
}

/// Closed-form energy of `w_λ` up to `O(e^{−λ})`:
/// `−64π²(R(0)+G(p1−p2)) − 16π·log2π − 16π − ελ − 32πλe^{−λ} − ε(2·log2π + 8πR(0) + 8πG(p1−p2))`.
///
/// The `ε` bracket follows from `∫w_λ = w̄_λ` and `∫e^{w_λ} = 16π(1 + O(λe^{−λ}))`.
pub fn energy_closed_form(r0: f64, g12: f64, eps: f64, lambda: f64) -> f64 {
    let l2p = TWO_PI.ln();
    -64.0 * PI * PI * (r0 + g12)
        - 16.0 * PI * l2p
        - 16.0 * PI
        - eps * lambda
        - 32.0 * PI * lambda * (-lambda).exp()
        - eps * (2.0 * l2p + EIGHT_PI * r0 + EIGHT_PI * g12)
}

/// The same expansion with the opposite sign on the `8π(R(0)+G)` part of the `ε` bracket.
pub fn energy_closed_form_alt_sign(r0: f64, g12: f64, eps: f64, lambda: f64) -> f64 {
    energy_closed_form(r0, g12, eps, lambda) + 2.0 * eps * EIGHT_PI * (r0 + g12)
}

/// Maximizer of `−ελ − 32πλe^{−λ}` in `λ`: the root of `ε = 32π(λ − 1)e^{−λ}` with `λ > 2`.
pub fn closed_form_maximizer(eps: f64) -> Result<f64> {
    // 32π(λ−1)e^{−λ} = ε ⇔ 32π·μ·e^{−μ} = ε·e with μ = λ − 1.
    Ok(1.0 + solve_lambda_law(32.0 * PI, eps * std::f64::consts::E)?)
}

/// Defects of the expansions of `w_λ`, in absolute units.
#[derive(Clone, Debug)]
pub struct ExpansionReport {
    pub lambda: f64,
    /// `w_{λ,i}(p_i) − (2λ + 2log2π + 8πR(0) + λe^{−λ})`.
    pub center_defect: [f64; 2],
    /// `max |w_{λ,i}(x) − 8πG(p_i − x) − λe^{−λ}|` over `d(x,p_i) ≥ 2R0`.
    pub outer_defect: f64,
    /// `max |w_λ(p_i + e^{−λ/2}z) − inner model|` over nodes with `|z| ≤ z_max`.
    pub inner_defect: f64,
    pub inner_defect_at: [f64; 2],
    pub inner_z_max: f64,
    pub inner_nodes: usize,
}

/// `4π·zᵀ(∇²R(0) + ∇²G(p1−p2))z`, the quadratic correction of the inner expansion.
pub fn inner_quadratic(ev: &GreensEvaluator, pair: &BlowupPair) -> Result<[[f64; 2]; 2]> {
    let hr = ev.r0_hessian();
    let hg = ev.green_hessian_at(pair.lattice.to_complex(pair.p2()))?;
    let mut q = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            q[a][b] = 4.0 * PI * (hr[a][b] + hg[a][b]);
        }
    }
    Ok(q)
}

/// Inner model `log(16πe^λ/(1+2π|z|²)²) + e^{−λ}·zᵀQz + 2λe^{−λ}`.
pub fn inner_model(lambda: f64, q: &[[f64; 2]; 2], z: [f64; 2]) -> f64 {
    let r2 = z[0] * z[0] + z[1] * z[1];
    let quad = q[0][0] * z[0] * z[0] + 2.0 * q[0][1] * z[0] * z[1] + q[1][1] * z[1] * z[1];
    let el = (-lambda).exp();
    (16.0 * PI).ln() + lambda - 2.0 * (1.0 + TWO_PI * r2).ln() + el * quad + 2.0 * lambda * el
}

pub fn check_expansions(a: &AnsatzField, cfg: &AnsatzConfig, z_max: f64) -> Result<ExpansionReport> {
    let ev = GreensEvaluator::new(cfg.pair.lattice);
    let lattice = cfg.pair.lattice;
    let lambda = cfg.lambda;
    let el = (-lambda).exp();
    let n = cfg.spec.n();

    let center_model = 2.0 * lambda + 2.0 * TWO_PI.ln() + EIGHT_PI * ev.r0() + lambda * el;
    let mut center_defect = [0.0; 2];
    for i in 0..2 {
        let (j, k) = a.parts[i].nearest_node(cfg.pair.point(i + 1));
        center_defect[i] = a.parts[i].get(j, k) - center_model;
    }

    let mut outer_defect = 0.0_f64;
    for i in 0..2 {
        let p = lattice.to_complex(cfg.pair.point(i + 1));
        for j in 0..n {
            for k in 0..n {
                let x = lattice.to_complex(a.w.node_point(j, k));
                let v = lattice.min_image(x - p);
                if v.norm() < 2.0 * cfg.r0 {
                    continue;
                }
                let model = EIGHT_PI * ev.green_at(v)? + lambda * el;
                outer_defect = outer_defect.max((a.parts[i].get(j, k) - model).abs());
            }
        }
    }

    let q = inner_quadratic(&ev, &cfg.pair)?;
    let scale = (0.5 * lambda).exp();
    let mut inner_defect = 0.0_f64;
    let mut inner_defect_at = [0.0; 2];
    let mut inner_nodes = 0;
    for i in 0..2 {
        let p = lattice.to_complex(cfg.pair.point(i + 1));
        for j in 0..n {
            for k in 0..n {
                let x = lattice.to_complex(a.w.node_point(j, k));
                let v = lattice.min_image(x - p);
                let z = v * scale;
                if z.norm() > z_max || v.norm() >= cfg.r0 {
                    continue;
                }
                inner_nodes += 1;
                let d = (a.w.get(j, k) - inner_model(lambda, &q, [z.re, z.im])).abs();
                if d > inner_defect {
                    inner_defect = d;
                    inner_defect_at = [z.re, z.im];
                }
            }
        }
    }
    Ok(ExpansionReport { lambda, center_defect, outer_defect, inner_defect, inner_defect_at, inner_z_max: z_max, inner_nodes })
}

/// Observed constants of the pointwise bounds on `w_λ` and its residual.
#[derive(Clone, Debug)]
pub struct AnsatzBounds {
    /// `sup |S_ρ(w_λ)| / (λe^{−λ})` over `d(x,p_i) ≥ R0` for both `i`.
    pub outer_residual_constant: f64,
    pub outer_residual_sup: f64,
    /// `sup |S_ρ(w_λ)|` inside the balls `B(p_i, R0)`.
    pub inner_residual_sup: f64,
    /// `∫e^{w_λ}/(16π)`.
    pub mass_ratio: f64,
    /// Smallest `C` with `e^{w_λ} ≤ Σ_i U_i(1 + θ)`, `|θ| ≤ C e^{−λ/2} Σ_i (e^{λ/2}d_i + 1)`.
    pub theta_constant: f64,
    /// `sup e^{w_λ}/e^{−λ}` over `d(x,p_i) ≥ R0` for both `i`.
    pub off_core_constant: f64,
}

pub fn ansatz_bounds(a: &AnsatzField, cfg: &AnsatzConfig) -> Result<AnsatzBounds> {
    let lattice = cfg.pair.lattice;
    let lambda = cfg.lambda;
    let el = (-lambda).exp();
    let res = s_rho(&a.w, cfg.rho())?;
    let n = cfg.spec.n();
    let p = [lattice.to_complex(cfg.pair.p1()), lattice.to_complex(cfg.pair.p2())];
    let (mut outer, mut inner, mut theta_c, mut off_core) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for j in 0..n {
        for k in 0..n {
            let x = lattice.to_complex(a.w.node_point(j, k));
            let d = [lattice.min_image(x - p[0]).norm(), lattice.min_image(x - p[1]).norm()];
            let r = res.get(j, k).abs();
            let ew = a.w.get(j, k).exp();
            if d[0] >= cfg.r0 && d[1] >= cfg.r0 {
                outer = outer.max(r);
                off_core = off_core.max(ew / el);
            } else {
                inner = inner.max(r);
            }
            let u_sum = bubble(lambda, d[0] * d[0]) + bubble(lambda, d[1] * d[1]);
            let theta = (ew / u_sum - 1.0).max(0.0);
            let envelope = el.sqrt() * ((d[0] / el.sqrt() + 1.0) + (d[1] / el.sqrt() + 1.0));
            theta_c = theta_c.max(theta / envelope);
        }
    }
    let mass_ratio = a.w.values().iter().map(|v| v.exp()).sum::<f64>() / (n * n) as f64 / (16.0 * PI);
    Ok(AnsatzBounds {
        outer_residual_constant: outer / (lambda * el),
        outer_residual_sup: outer,
        inner_residual_sup: inner,
        mass_ratio,
        theta_constant: theta_c,
        off_core_constant: off_core,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::evenness_defect;
    use crate::greens::oracle::bubble_mass_within;
    use crate::greens::HalfPeriod;
    use num_complex::Complex64;

    fn square_pair(h: HalfPeriod) -> BlowupPair {
        BlowupPair::new(TorusLattice::square(), h)
    }

    #[test]
    fn bracket_examples() {
        let target = 16.0 * PI * 10.0 * (-10.0f64).exp();
        let (l1, l2) = lambda_bracket(target).unwrap();
        assert!((l1 - 10.0).abs() < 1e-12);
        assert!(l1 < l2);
        let (l1, l2) = lambda_bracket(0.1).unwrap();
        let bisect = |c: f64| {
            let (mut lo, mut hi) = (1.0, 50.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if c * mid * (-mid).exp() > 0.1 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        assert!((l1 - bisect(16.0 * PI)).abs() < 1e-10);
        assert!((l2 - bisect(64.0 * PI)).abs() < 1e-10);
        for (c, l) in [(16.0 * PI, l1), (64.0 * PI, l2)] {
            assert!((c * l * (-l).exp() / 0.1 - 1.0).abs() < 1e-12);
        }
        assert!(lambda_bracket(0.0).is_err());
        assert!(lambda_bracket(20.0).is_err());
    }

    #[test]
    fn default_lambda_sits_inside_bracket() {
        for eps in [0.2, 0.1, 0.05, 1e-3] {
            let (l1, l2) = lambda_bracket(eps).unwrap();
            let l = default_lambda(eps).unwrap();
            assert!(l1 < l && l < l2);
            assert!((eps_for_lambda(l) / eps - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cutoff_examples() {
        let l = TorusLattice::square();
        let a = TorusPoint::origin();
        let t = 0.1;
        assert_eq!(cutoff_eta(&l, t, a, a), 1.0);
        assert_eq!(cutoff_eta(&l, t, a, TorusPoint::new(0.3, 0.0)), 0.0);
        let mid = cutoff_eta(&l, t, a, TorusPoint::new(0.15, 0.0));
        assert!(mid > 0.0 && mid < 1.0);
        let worst = (0..=1000).map(|k| eta_profile_derivative(1.0 + k as f64 / 1000.0).abs()).fold(0.0, f64::max);
        assert!(worst <= 2.0);
        for k in 0..100 {
            let s = 1.0 + k as f64 / 100.0;
            assert!(eta_profile(s + 0.01) <= eta_profile(s));
        }
    }

    #[test]
    fn default_r0_keeps_supports_disjoint() {
        for lat in [TorusLattice::square(), TorusLattice::new(Complex64::new(1.0, 0.0), Complex64::new(0.3, 0.8)).unwrap()] {
            for h in HalfPeriod::ALL {
                let pair = BlowupPair::new(lat, h);
                assert!(4.0 * default_r0(&pair) < pair.separation());
            }
        }
    }

    #[test]
    fn resolution_rule() {
        let l = TorusLattice::square();
        assert!(check_resolution(&l, 1024, 10.0).is_ok());
        assert!(check_resolution(&l, 512, default_lambda(0.1).unwrap()).is_ok());
        assert!(matches!(check_resolution(&l, 256, default_lambda(1e-6).unwrap()), Err(MfeError::Resolution(_))));
        let cfg = AnsatzConfig::at_lambda(square_pair(HalfPeriod::Diag), 12.0, GridSpec::new(128).unwrap());
        assert!(matches!(build_bubble_rhs(&cfg, 1), Err(MfeError::Resolution(_))));
    }

    /// `∫ bubble·η(r/R0)` by midpoint quadrature in r.
    fn radial_mass(lambda: f64, r0: f64) -> f64 {
        let steps = 400_000;
        let h = 2.0 * r0 / steps as f64;
        (0..steps)
            .map(|k| {
                let r = (k as f64 + 0.5) * h;
                bubble(lambda, r * r) * eta_profile(r / r0) * TWO_PI * r * h
            })
            .sum()
    }

    #[test]
    fn bubble_rhs_center_and_mass() {
        let mut scaled = Vec::new();
        for (lambda, n) in [(8.0, 512), (10.0, 1024)] {
            let cfg = AnsatzConfig::at_lambda(square_pair(HalfPeriod::Diag), lambda, GridSpec::new(n).unwrap());
            let f = build_bubble_rhs(&cfg, 1).unwrap();
            assert!((f.get(0, 0) - 16.0 * PI * lambda.exp()).abs() < 1e-9 * f.get(0, 0));
            let m0 = integrate(&f);
            assert!((m0 / radial_mass(lambda, cfg.r0) - 1.0).abs() < 1e-6, "m0 = {m0} oracle {}", radial_mass(lambda, cfg.r0));
            let f2 = build_bubble_rhs(&cfg, 2).unwrap();
            assert!((integrate(&f2) - m0).abs() < 1e-10 * m0);
            scaled.push((8.0 * PI - m0) * lambda.exp());
        }
        // The mass deficit is O(e^{−λ}) with a constant set by R0 alone.
        assert!((scaled[0] / scaled[1] - 1.0).abs() < 0.01, "{scaled:?}");
    }

    #[test]
    fn bubble_radial_integral_oracle() {
        // Radial quadrature on [0, R0] plus the closed-form tail equals 8π.
        let lambda = 8.0;
        let r0 = 0.125;
        let steps = 200_000;
        let h = r0 / steps as f64;
        let mut inner = 0.0;
        for k in 0..steps {
            let r = (k as f64 + 0.5) * h;
            inner += bubble(lambda, r * r) * TWO_PI * r * h;
        }
        let rescaled = r0 * (0.5 * lambda).exp();
        let tail = 8.0 * PI - bubble_mass_within(rescaled);
        assert!((inner + tail - 8.0 * PI).abs() < 1e-6);
    }

    #[test]
    fn ansatz_invariants() {
        let cfg = AnsatzConfig::at_lambda(square_pair(HalfPeriod::W1Half), 6.0, GridSpec::new(256).unwrap());
        let a = build_ansatz(&cfg).unwrap();
        for p in &a.parts {
            assert!(integrate(p).abs() < 1e-10);
        }
        let sum = a.parts[0].add(&a.parts[1]).add_scalar(a.wbar);
        assert_eq!(sum.values(), a.w.values());
        assert!(evenness_defect(&a.w) < 1e-11);
        let b = ansatz_bounds(&a, &cfg).unwrap();
        assert!((0.9..1.1).contains(&b.mass_ratio), "{}", b.mass_ratio);
    }

    #[test]
    fn s_rho_and_energy_trivial_cases() {
        let l = TorusLattice::square();
        let spec = GridSpec::new(16).unwrap();
        let c = GridField::constant(l, spec, 1.7);
        assert!(s_rho(&c, 30.0).unwrap().sup_norm() < 1e-12);
        assert!(energy(&GridField::zeros(l, spec), 50.0).unwrap().abs() < 1e-14);
        assert!(energy(&c, 50.0).unwrap().abs() < 1e-12);
        let u = GridField::from_fn(l, spec, |s, t| (TWO_PI * s).sin() + 0.3 * (TWO_PI * (s + t)).cos());
        assert!(integrate(&s_rho(&u, 12.0).unwrap()).abs() < 1e-10);
        let hot = GridField::constant(l, spec, 800.0);
        assert!(s_rho(&hot, 1.0).is_err());
    }

    #[test]
    fn energy_maximizer_matches_direct_optimization() {
        for eps in [0.2, 0.1, 0.05] {
            let lstar = closed_form_maximizer(eps).unwrap();
            let j = |l: f64| energy_closed_form(-0.2, -0.05, eps, l);
            let h = 1e-4;
            assert!(j(lstar) > j(lstar - h) && j(lstar) > j(lstar + h));
            let (l1, l2) = lambda_bracket(eps).unwrap();
            assert!(l1 < lstar && lstar < l2);
        }
    }
    #[test]
    fn quadratic_form_trace() {
        let pair = square_pair(HalfPeriod::Diag);
        let ev = GreensEvaluator::new(pair.lattice);
        let h = ev.r0_hessian();
        assert!((4.0 * PI * (h[0][0] + h[1][1]) * 2.0 - 8.0 * PI).abs() < 1e-8);
        // At z = 0 the inner model is the center value plus the other bubble and w̄.
        let q = inner_quadratic(&ev, &pair).unwrap();
        let l: f64 = 9.0;
        assert!((inner_model(l, &q, [0.0, 0.0]) - ((16.0 * PI).ln() + l + 2.0 * l * (-l).exp())).abs() < 1e-12);
    }

    #[test]
    fn expansions_at_lambda_8() {
        let pair = square_pair(HalfPeriod::Diag);
        let cfg = AnsatzConfig::at_lambda(pair, 8.0, GridSpec::new(512).unwrap());
        let a = build_ansatz(&cfg).unwrap();
        let el = (-8.0f64).exp();
        let rep = check_expansions(&a, &cfg, 10.0).unwrap();
        assert!(rep.center_defect.iter().all(|d| d.abs() < 5.0 * el), "{rep:?}");
        assert!(rep.inner_nodes > 1000);

        // Away from p1 the defect is −(8π − m0)·G plus a constant.
        let ev = GreensEvaluator::new(pair.lattice);
        let deficit = 8.0 * PI - a.m0;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for j in (0..512).step_by(7) {
            for k in (0..512).step_by(5) {
                let v = pair.lattice.min_image(pair.lattice.to_complex(a.w.node_point(j, k)));
                if v.norm() < 2.0 * cfg.r0 {
                    continue;
                }
                let g = ev.green_at(v).unwrap();
                let d = a.parts[0].get(j, k) - 8.0 * PI * g - 8.0 * el + deficit * g;
                lo = lo.min(d);
                hi = hi.max(d);
            }
        }
        assert!(hi - lo < 1e-2 * el, "{lo} {hi}");

        let b = ansatz_bounds(&a, &cfg).unwrap();
        assert!(b.outer_residual_constant < 1e3);
        let j = energy(&a.w, cfg.rho()).unwrap();
        let jc = energy_closed_form(ev.r0(), ev.green_value(pair.p2()).unwrap(), cfg.eps, 8.0);
        assert!((j - jc).abs() < 20.0 * el, "{}", (j - jc) / el);
    }
}
