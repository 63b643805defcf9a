//! Blow-up data extracted from solutions, the asymptotic identities they are
//! expected to satisfy, the uniqueness and half-torus experiments, and the
//! JSON verification report.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MfeError, Result};
use crate::geometry::{integrate, symmetrize_even, GridField, GridSpec, Spectral, TorusLattice, TorusPoint};
use crate::greens::{BlowupPair, GreensEvaluator, HalfPeriod, StarData};
use crate::solver::{initial_guess, newton_solve, Branch, SolutionRecord, SolverOptions};

const EIGHT_PI: f64 = 8.0 * PI;

/// Default ball radius `δ = d(p1,p2)/4`.
pub fn default_delta(pair: &BlowupPair) -> f64 {
    0.25 * pair.separation()
}

#[derive(Clone, Debug, Serialize)]
pub struct BlowupDiagnostics {
    pub delta: f64,
    pub rho: f64,
    /// `λ_{n,i}`: the sub-grid maximum of `u` over `B(p_i, δ)`.
    pub lambda_i: [f64; 2],
    pub x_i: [TorusPoint; 2],
    /// `ρ∫_{B(p_i,δ)} e^u`.
    pub local_masses: [f64; 2],
    /// Local masses normalized by `∫e^u`.
    pub concentration: [f64; 2],
    pub total_mass_defect: f64,
    pub mean_u: f64,
    pub gstar_at_x: [f64; 2],
    pub gstar_grad_norm: [f64; 2],
    /// Operator norm of `∇²G*_i(x_{n,i})`.
    pub gstar_hessian_norm: [f64; 2],
    pub inner_error_sup: [f64; 2],
    pub outer_error_sup: f64,
    pub spacing: f64,
}

/// Vertex of the quadratic fitted to the 3×3 stencil around `(j, k)`, as
/// offsets in grid units (clamped to one cell) and the interpolated value.
fn quadratic_peak(u: &GridField, j: usize, k: usize) -> (f64, f64, f64) {
    let (j, k) = (j as isize, k as isize);
    let f = |a: isize, b: isize| u.get_wrapped(j + a, k + b);
    let c = f(0, 0);
    let gx = 0.5 * (f(1, 0) - f(-1, 0));
    let gy = 0.5 * (f(0, 1) - f(0, -1));
    let hxx = f(1, 0) - 2.0 * c + f(-1, 0);
    let hyy = f(0, 1) - 2.0 * c + f(0, -1);
    let hxy = 0.25 * (f(1, 1) - f(1, -1) - f(-1, 1) + f(-1, -1));
    let det = hxx * hyy - hxy * hxy;
    if !(det > 0.0 && hxx < 0.0) {
        return (0.0, 0.0, c);
    }
    let dx = (-(hyy * gx - hxy * gy) / det).clamp(-1.0, 1.0);
    let dy = (-(hxx * gy - hxy * gx) / det).clamp(-1.0, 1.0);
    let value = c + gx * dx + gy * dy + 0.5 * (hxx * dx * dx + 2.0 * hxy * dx * dy + hyy * dy * dy);
    (dx, dy, value)
}

fn hessian_norm(h: [[f64; 2]; 2]) -> f64 {
    let m = 0.5 * (h[0][0] + h[1][1]);
    let r = (0.25 * (h[0][0] - h[1][1]).powi(2) + h[0][1] * h[1][0]).max(0.0).sqrt();
    (m.abs() + r).max((m - r).abs())
}

/// Locates `x_{n,i}` and `λ_{n,i}` in each `B(p_i, δ)` and computes the local
/// masses and the inner/outer errors of the expansion around the bubbles.
pub fn detect_blowup(u: &GridField, rho: f64, pair: &BlowupPair, delta: f64) -> Result<BlowupDiagnostics> {
    let sep = pair.separation();
    if !(delta > 0.0 && delta < 0.5 * sep) {
        return Err(MfeError::Precondition(format!("delta = {delta} must lie in (0, d(p1,p2)/2 = {})", 0.5 * sep)));
    }
    let lattice = pair.lattice;
    let ev = GreensEvaluator::new(lattice);
    let n = u.n();
    let h = u.spec().spacing(&lattice);
    let total = integrate(&u.map(f64::exp));

    let mut lambda_i = [0.0; 2];
    let mut x_i = [TorusPoint::origin(); 2];
    let mut local_masses = [0.0; 2];
    let mut gstar_at_x = [0.0; 2];
    let mut gstar_grad_norm = [0.0; 2];
    let mut gstar_hessian_norm = [0.0; 2];
    for i in 0..2 {
        let p = pair.point(i + 1);
        let (mut best, mut best_d) = ((0, 0), f64::NEG_INFINITY);
        let mut best_dist = 0.0;
        let mut mass = 0.0;
        for j in 0..n {
            for k in 0..n {
                let d = lattice.displacement(u.node_point(j, k), p).norm();
                if d < delta {
                    let v = u.get(j, k);
                    mass += v.exp();
                    if v > best_d {
                        best_d = v;
                        best = (j, k);
                        best_dist = d;
                    }
                }
            }
        }
        if best_dist > delta - 1.5 * h {
            return Err(MfeError::NotBlownUp(i + 1));
        }
        let (dj, dk, value) = quadratic_peak(u, best.0, best.1);
        let node = u.node_point(best.0, best.1);
        let x = TorusPoint::new(node.s + dj / n as f64, node.t + dk / n as f64);
        lambda_i[i] = value;
        x_i[i] = x;
        local_masses[i] = rho * mass / (n * n) as f64;
        gstar_at_x[i] = ev.g_star(pair, i + 1, x)?;
        let g = ev.g_star_gradient(pair, i + 1, x)?;
        gstar_grad_norm[i] = g[0].hypot(g[1]);
        gstar_hessian_norm[i] = hessian_norm(ev.g_star_hessian(pair, i + 1, x)?);
    }

    // η_{n,i} = u − U_{n,i} − (G*_i − G*_i(x_{n,i})) on B(x_{n,i}, δ);
    // ω_n = u − Σρ_{n,i}G(· − x_{n,i}) − ∫u off both B(p_i, δ).
    let mean_u = integrate(u);
    let mut inner_error_sup = [0.0_f64; 2];
    let mut outer_error_sup = 0.0_f64;
    for j in 0..n {
        for k in 0..n {
            let x = u.node_point(j, k);
            let v = u.get(j, k);
            let mut outside = true;
            for i in 0..2 {
                if lattice.displacement(x, pair.point(i + 1)).norm() < delta {
                    outside = false;
                }
                let r = lattice.displacement(x, x_i[i]).norm();
                if r < delta {
                    let el = lambda_i[i].exp();
                    let bubble = lambda_i[i] - 2.0 * (1.0 + rho / 8.0 * el * r * r).ln();
                    let eta = v - bubble - (ev.g_star(pair, i + 1, x)? - gstar_at_x[i]);
                    inner_error_sup[i] = inner_error_sup[i].max(eta.abs());
                }
            }
            if outside {
                let mut model = mean_u;
                for i in 0..2 {
                    model += local_masses[i] * ev.green_at(lattice.displacement(x, x_i[i]))?;
                }
                outer_error_sup = outer_error_sup.max((v - model).abs());
            }
        }
    }

    Ok(BlowupDiagnostics {
        delta,
        rho,
        lambda_i,
        x_i,
        local_masses,
        concentration: local_masses.map(|m| m / total),
        total_mass_defect: rho - 16.0 * PI,
        mean_u,
        gstar_at_x,
        gstar_grad_norm,
        gstar_hessian_norm,
        inner_error_sup,
        outer_error_sup,
        spacing: h,
    })
}

pub fn detect_blowup_record(rec: &SolutionRecord, delta: f64) -> Result<BlowupDiagnostics> {
    detect_blowup(&rec.u, rec.rho, &rec.pair, delta)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    /// The experiment could not be carried out (e.g. a solve failed).
    Inconclusive,
    /// Reported without a gate.
    Info,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub name: String,
    /// The identity or estimate being tested.
    pub reference: String,
    pub measured: f64,
    pub predicted: f64,
    /// Dimensionless comparison of `measured` against `predicted`.
    pub ratio: f64,
    pub verdict: Verdict,
    pub note: String,
}

impl CheckEntry {
    pub fn new(name: impl Into<String>, reference: impl Into<String>, measured: f64, predicted: f64, ratio: f64, pass: bool) -> Self {
        let ratio = if ratio.is_finite() { ratio } else { f64::MAX };
        Self {
            name: name.into(),
            reference: reference.into(),
            measured,
            predicted,
            ratio,
            verdict: if pass { Verdict::Pass } else { Verdict::Fail },
            note: String::new(),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    pub fn with_verdict(mut self, verdict: Verdict) -> Self {
        self.verdict = verdict;
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

fn local_mass_ratio(diag: &BlowupDiagnostics, i: usize) -> f64 {
    let l = diag.lambda_i[i];
    (diag.local_masses[i] - EIGHT_PI) / (16.0 * PI * l * (-l).exp())
}

/// `(ρ_{n,i} − 8π)/(16πλ_{n,i}e^{−λ_{n,i}}) ∈ [0.6, 1.4]`.
pub fn check_local_mass(diag: &BlowupDiagnostics) -> Vec<CheckEntry> {
    (0..2)
        .map(|i| {
            let l = diag.lambda_i[i];
            let r = local_mass_ratio(diag, i);
            CheckEntry::new(
                format!("local_mass_{}", i + 1),
                "local mass: rho_i - 8pi = 16pi lambda_i e^-lambda_i + O(e^-lambda_i)",
                diag.local_masses[i] - EIGHT_PI,
                16.0 * PI * l * (-l).exp(),
                r,
                (0.6..=1.4).contains(&r),
            )
        })
        .collect()
}

/// `ρ∫_{B(p_i,δ)}e^u / ∫e^u` within `tol` (relative) of `8π`.
pub fn check_mass_concentration(diag: &BlowupDiagnostics, tol: f64) -> Vec<CheckEntry> {
    (0..2)
        .map(|i| {
            let r = diag.concentration[i] / EIGHT_PI;
            CheckEntry::new(
                format!("mass_concentration_{}", i + 1),
                "concentration: rho e^u / int e^u -> 8pi (delta_p1 + delta_p2)",
                diag.concentration[i],
                EIGHT_PI,
                r,
                (r - 1.0).abs() <= tol,
            )
        })
        .collect()
}

/// `(ρ − 16π)e^{G*_1(p1)} / (λ_{n,1}e^{−λ_{n,1}}·l(p)) ∈ [0.65, 1.35]`.
pub fn check_total_mass(diag: &BlowupDiagnostics, star: &StarData) -> CheckEntry {
    let l1 = diag.lambda_i[0];
    let predicted = l1 * (-l1).exp() * star.l_value / star.gstar_at_p[0].exp();
    let r = diag.total_mass_defect / predicted;
    CheckEntry::new(
        "total_mass",
        "total mass: rho - 16pi = lambda_1 e^-lambda_1 l(p) / e^G*_1(p1) + O(e^-lambda_1)",
        diag.total_mass_defect,
        predicted,
        r,
        (0.65..=1.35).contains(&r),
    )
}

/// `λ_{n,i} + ∫u + 2log(ρ/8) + G*_i(x_{n,i}) = −(32π/ρ)λ²e^{−λ} + O(λe^{−λ})`.
pub fn check_mean_identity(diag: &BlowupDiagnostics) -> Vec<CheckEntry> {
    (0..2)
        .map(|i| {
            let l = diag.lambda_i[i];
            let lhs = l + diag.mean_u + 2.0 * (diag.rho / 8.0).ln() + diag.gstar_at_x[i];
            let rhs = -32.0 * PI / diag.rho * l * l * (-l).exp();
            let bound = 5.0 * l * (-l).exp();
            let defect = lhs - rhs;
            CheckEntry::new(
                format!("mean_identity_{}", i + 1),
                "mean identity: lambda_i + int u + 2 log(rho/8) + G*_i(x_i) = -(32pi/rho) lambda_i^2 e^-lambda_i + O(lambda_i e^-lambda_i)",
                lhs,
                rhs,
                defect / bound,
                defect.abs() <= bound,
            )
            .with_note(format!("defect {defect:.6e}, bound 5 lambda e^-lambda = {bound:.6e}"))
        })
        .collect()
}

/// `|∇G*_i(x_{n,i})| ≤ 10λ_{n,i}e^{−λ_{n,i}}` plus the location floor `‖∇²G*_i‖·h/2`.
pub fn check_pohozaev_gradient(diag: &BlowupDiagnostics) -> Vec<CheckEntry> {
    (0..2)
        .map(|i| {
            let l = diag.lambda_i[i];
            let floor = 0.5 * diag.gstar_hessian_norm[i] * diag.spacing;
            let bound = 10.0 * l * (-l).exp() + floor;
            CheckEntry::new(
                format!("pohozaev_gradient_{}", i + 1),
                "Pohozaev: grad G*_i(x_i) = O(lambda_i e^-lambda_i)",
                diag.gstar_grad_norm[i],
                bound,
                diag.gstar_grad_norm[i] / bound,
                diag.gstar_grad_norm[i] <= bound,
            )
            .with_note(format!("grid floor {floor:.3e}"))
        })
        .collect()
}

/// `sup|η_{n,i}| ≤ 20λ²e^{−λ}` and `sup|ω_n| ≤ 20e^{−λ/2}`.
pub fn inner_outer_errors(diag: &BlowupDiagnostics) -> Vec<CheckEntry> {
    let mut out: Vec<CheckEntry> = (0..2)
        .map(|i| {
            let l = diag.lambda_i[i];
            let bound = 20.0 * l * l * (-l).exp();
            CheckEntry::new(
                format!("inner_error_{}", i + 1),
                "inner error: eta_i = O(lambda_i^2 e^-lambda_i) on B(x_i, delta)",
                diag.inner_error_sup[i],
                bound,
                diag.inner_error_sup[i] / bound,
                diag.inner_error_sup[i] <= bound,
            )
        })
        .collect();
    let l = diag.lambda_i[0].max(diag.lambda_i[1]);
    let bound = 20.0 * (-0.5 * l).exp();
    out.push(CheckEntry::new(
        "outer_error",
        "outer error: omega = O(e^-lambda/2) off the balls B(p_i, delta)",
        diag.outer_error_sup,
        bound,
        diag.outer_error_sup / bound,
        diag.outer_error_sup <= bound,
    ));
    out
}

/// `e^{λ_{n,2}}e^{G*_2(x_{n,2})} / (e^{λ_{n,1}}e^{G*_1(x_{n,1})}) ∈ [1 − 20e^{−λ/2}, 1 + 20e^{−λ/2}]`.
pub fn check_equal_height(diag: &BlowupDiagnostics) -> CheckEntry {
    let r = (diag.lambda_i[1] + diag.gstar_at_x[1] - diag.lambda_i[0] - diag.gstar_at_x[0]).exp();
    let tol = 20.0 * (-0.5 * diag.lambda_i[0]).exp();
    CheckEntry::new("equal_height", "equal height: e^lambda_i e^G*_i(x_i) agree to 1 + O(e^-lambda/2)", r, 1.0, r, (r - 1.0).abs() <= tol)
}

/// `|∫e^u − 1| < 1e−8`, residual and evenness of a record.
pub fn check_record(rec: &SolutionRecord, newton_tol: f64) -> Vec<CheckEntry> {
    let even = crate::geometry::evenness_defect(&rec.u);
    vec![
        CheckEntry::new(
            "mass_normalization",
            "normalization int e^u = 1 at solutions",
            rec.mass_check,
            1.0,
            rec.mass_check,
            (rec.mass_check - 1.0).abs() < 1e-8,
        ),
        CheckEntry::new(
            "residual",
            "scaled residual below the Newton tolerance",
            rec.residual_sup,
            newton_tol,
            rec.residual_sup / newton_tol,
            rec.residual_sup <= newton_tol,
        )
        .with_note(format!("absolute sup residual {:.3e}", rec.residual_abs)),
        CheckEntry::new("even_symmetry", "u(z) = u(-z)", even, 0.0, even / 1e-11, even < 1e-11),
    ]
}

/// `ε/(32πλ_{n,1}e^{−λ_{n,1}})` for a record.
pub fn scaling_ratio(rec: &SolutionRecord, diag: &BlowupDiagnostics) -> f64 {
    let l = diag.lambda_i[0];
    rec.eps / (32.0 * PI * l * (-l).exp())
}

fn monotone_toward_one(values: &[f64]) -> bool {
    values.windows(2).all(|w| (w[1] - 1.0).abs() < (w[0] - 1.0).abs())
}

/// Trend checks along a branch (records ordered by decreasing `ε`).
pub fn check_branch_trends(branch: &Branch, diags: &[BlowupDiagnostics]) -> Vec<CheckEntry> {
    let recs = &branch.records;
    let scaling: Vec<f64> = recs.iter().zip(diags).map(|(r, d)| scaling_ratio(r, d)).collect();
    let local: Vec<f64> = diags.iter().map(|d| local_mass_ratio(d, 0)).collect();
    let lambdas: Vec<f64> = recs.iter().map(|r| r.lambda_max).collect();
    let last = |v: &[f64]| v.last().copied().unwrap_or(f64::NAN);
    vec![
        CheckEntry::new(
            "branch_scaling_law",
            "scaling law eps = (32pi + o(1)) lambda e^-lambda along the branch",
            last(&scaling),
            1.0,
            last(&scaling),
            scaling.iter().all(|r| (0.65..=1.35).contains(r)) && monotone_toward_one(&scaling),
        )
        .with_note(format!("ratios {scaling:?}")),
        CheckEntry::new(
            "branch_local_mass_trend",
            "local mass ratio sharpens toward 1 as eps decreases",
            last(&local),
            1.0,
            last(&local),
            local.iter().all(|r| (0.6..=1.4).contains(r)) && monotone_toward_one(&local),
        )
        .with_note(format!("ratios {local:?}")),
        CheckEntry::new(
            "branch_lambda_increasing",
            "u(p_i) -> +infinity as eps -> 0",
            last(&lambdas),
            lambdas.first().copied().unwrap_or(f64::NAN),
            last(&lambdas) / lambdas.first().copied().unwrap_or(f64::NAN),
            lambdas.windows(2).all(|w| w[1] > w[0]),
        )
        .with_note(format!("lambda_max {lambdas:?}")),
    ]
}

/// Smooth random even fields with sup-norm `amplitude`.
pub fn random_even_perturbations(lattice: TorusLattice, spec: GridSpec, count: usize, amplitude: f64, seed: u64) -> Vec<GridField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let modes: Vec<(f64, f64, f64, f64)> = (0..6)
                .map(|_| {
                    let a = rng.random_range(-3i32..=3) as f64;
                    let b = rng.random_range(-3i32..=3) as f64;
                    (a, b, rng.random::<f64>() - 0.5, rng.random::<f64>() * 2.0 * PI)
                })
                .collect();
            let f = GridField::from_fn(lattice, spec, |s, t| {
                modes.iter().map(|&(a, b, c, ph)| c * (2.0 * PI * (a * s + b * t) + ph).cos()).sum()
            });
            let f = symmetrize_even(&f);
            let m = f.sup_norm();
            if m > 0.0 {
                f.scale(amplitude / m)
            } else {
                f
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct UniquenessOutcome {
    pub converged: usize,
    pub attempted: usize,
    pub max_pairwise: f64,
    pub entry: CheckEntry,
}

/// Newton from `w_λ + perturbation` for each perturbation (after even
/// symmetrization); passes iff all runs converge and agree within `1e−8`.
pub fn uniqueness_experiment(
    pair: BlowupPair,
    eps: f64,
    spec: GridSpec,
    perturbations: &[GridField],
    opts: &SolverOptions,
) -> Result<UniquenessOutcome> {
    if let Some(p) = perturbations.iter().find(|p| p.sup_norm() > 0.3 + 1e-12) {
        return Err(MfeError::Precondition(format!("perturbation sup-norm {} exceeds 0.3", p.sup_norm())));
    }
    let (w, cfg) = initial_guess(pair, eps, spec)?;
    let opts = opts.for_eps(eps);
    let mut sols = Vec::new();
    let mut failures = Vec::new();
    let mut starts = vec![GridField::zeros(pair.lattice, spec)];
    starts.extend(perturbations.iter().map(symmetrize_even));
    for (k, p) in starts.iter().enumerate() {
        match newton_solve(&w.add(p), cfg.rho(), &opts) {
            Ok(out) => sols.push(out.u),
            Err(e) => failures.push(format!("start {k}: {e}")),
        }
    }
    let mut max_pairwise = 0.0_f64;
    for a in 0..sols.len() {
        for b in a + 1..sols.len() {
            max_pairwise = max_pairwise.max(sols[a].sub(&sols[b]).sup_norm());
        }
    }
    let attempted = starts.len();
    let mut entry = CheckEntry::new(
        format!("uniqueness_{}", pair.which.name()),
        "local uniqueness of evenly symmetric two-point blow-up solutions",
        max_pairwise,
        1e-8,
        max_pairwise / 1e-8,
        max_pairwise < 1e-8,
    )
    .with_note(format!("{} of {attempted} starts converged", sols.len()));
    if !failures.is_empty() {
        entry = entry.with_verdict(Verdict::Inconclusive).with_note(failures.join("; "));
    } else if max_pairwise >= 1e-8 {
        entry = entry.with_note(format!("distinct solutions found: max pairwise sup difference {max_pairwise:.3e}"));
    }
    Ok(UniquenessOutcome { converged: sols.len(), attempted, max_pairwise, entry })
}

/// Grid shift realizing translation by the half-period `p2`.
fn half_period_shift(which: HalfPeriod, n: usize) -> (isize, isize) {
    let h = (n / 2) as isize;
    match which {
        HalfPeriod::W1Half => (h, 0),
        HalfPeriod::W2Half => (0, h),
        HalfPeriod::Diag => (h, h),
    }
}

/// Translation invariance by `p2`, and for `p2 = ω1/2` the comparison with the
/// one-point problem on the half lattice rescaled to unit area.
///
/// `u` is `ω1/2`-periodic, so `v(y) = u(y/√2)` lives on the lattice
/// `(ω1/√2, √2ω2)` of unit area and solves `Δv + (ρ/2)(e^v − 1) = 0` with
/// `∫e^v = 1`: no additive gauge shift is needed in this normalization. On an
/// `n`-grid over the half lattice, node `(2a, k)` coincides with node `(a, k)`
/// of the original grid.
pub fn halftorus_check(rec: &SolutionRecord, opts: &SolverOptions) -> Result<Vec<CheckEntry>> {
    let n = rec.u.n();
    let (dj, dk) = half_period_shift(rec.pair.which, n);
    let shifted = rec.u.shift(dj, dk);
    let defect = rec.u.sub(&shifted).sup_norm();
    let bound = 100.0 * opts.newton_tol;
    let mut out = vec![CheckEntry::new(
        format!("halftorus_translation_{}", rec.pair.which.name()),
        "translation invariance u(z) = u(z + p2)",
        defect,
        bound,
        defect / bound,
        defect < bound,
    )];
    if rec.pair.which != HalfPeriod::W1Half {
        return Ok(out);
    }

    let lattice = rec.pair.lattice;
    let s2 = 2f64.sqrt();
    let half = TorusLattice::new(lattice.omega1() / s2, lattice.omega2() * s2)?;
    let spec = rec.u.spec();
    // Spectral transfer: the s-frequencies of u are even; frequency 2a of u is frequency a of v.
    let sp = Spectral::shared(&lattice, spec);
    let coeffs = sp.forward(&rec.u);
    let mut vc = vec![Complex64::new(0.0, 0.0); n * n];
    let freq = |i: usize| if i < n / 2 { i as isize } else { i as isize - n as isize };
    let idx = |f: isize| ((f + n as isize) % n as isize) as usize;
    for b in 0..n {
        for a in 0..n {
            let fa = freq(a);
            if fa % 2 != 0 {
                continue;
            }
            let fv = fa / 2;
            if fv.unsigned_abs() >= n / 2 {
                continue;
            }
            vc[b * n + idx(fv)] += coeffs[b * n + a];
        }
    }
    let v0 = Spectral::shared(&half, spec).inverse(vc);
    let v0 = GridField::from_values(half, spec, v0.into_values())?;
    let odd_content: f64 = {
        let mut e = 0.0;
        for b in 0..n {
            for a in 0..n {
                if freq(a) % 2 != 0 {
                    e += coeffs[b * n + a].norm_sqr();
                }
            }
        }
        (e / coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>()).sqrt()
    };

    let sol = newton_solve(&v0, rec.rho / 2.0, opts);
    let entry = match sol {
        Ok(out) => {
            let mut worst = 0.0_f64;
            for a in 0..n / 2 {
                for k in 0..n {
                    worst = worst.max((out.u.get(2 * a, k) - rec.u.get(a, k)).abs());
                }
            }
            CheckEntry::new(
                "halftorus_one_point_resolve",
                "half torus: the solution is a one-point blow-up solution on the rescaled half lattice",
                worst,
                1e-6,
                worst / 1e-6,
                worst < 1e-6,
            )
            .with_note(format!(
                "rho/2 = {:.12}, odd-frequency content {odd_content:.3e}, mass {:.12}",
                rec.rho / 2.0,
                integrate(&out.u.map(f64::exp))
            ))
        }
        Err(e) => CheckEntry::new("halftorus_one_point_resolve", "half torus one-point re-solve", f64::NAN, 1e-6, f64::NAN, false)
            .with_verdict(Verdict::Inconclusive)
            .with_note(e.to_string()),
    };
    out.push(entry);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub git_describe: String,
    pub config_hash: String,
    pub checks: Vec<CheckEntry>,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| matches!(c.verdict, Verdict::Pass | Verdict::Info))
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| MfeError::Config(format!("report parse: {e}")))
    }
}

/// Rounds to 15 significant digits.
pub fn sig15(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.14e}").parse().unwrap_or(x)
}

/// Report with every number rounded to 15 significant digits, serialized as pretty JSON.
pub fn emit_report(entries: &[CheckEntry], git_describe: &str, config_hash: &str) -> (VerificationReport, String) {
    let checks = entries
        .iter()
        .map(|e| CheckEntry { measured: sig15(e.measured), predicted: sig15(e.predicted), ratio: sig15(e.ratio), ..e.clone() })
        .collect();
    let report = VerificationReport { git_describe: git_describe.to_string(), config_hash: config_hash.to_string(), checks };
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    (report, text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::{build_ansatz, AnsatzConfig};
    use crate::geometry::evenness_defect;

    fn diag_pair() -> BlowupPair {
        BlowupPair::new(TorusLattice::square(), HalfPeriod::Diag)
    }

    #[test]
    fn quadratic_peak_recovers_offset() {
        let l = TorusLattice::square();
        let spec = GridSpec::new(64).unwrap();
        let (x0, y0) = (0.3 / 64.0, -0.2 / 64.0);
        let u = GridField::from_fn(l, spec, |s, t| {
            let (ds, dt) = (s - x0 - (s - x0).round(), t - y0 - (t - y0).round());
            5.0 - 1000.0 * (ds * ds + dt * dt)
        });
        let (dx, dy, v) = quadratic_peak(&u, 0, 0);
        assert!((dx - 0.3).abs() < 1e-9 && (dy + 0.2).abs() < 1e-9);
        assert!((v - 5.0).abs() < 1e-9);
    }

    #[test]
    fn detect_on_ansatz() {
        let pair = diag_pair();
        let cfg = AnsatzConfig::at_lambda(pair, 8.0, GridSpec::new(512).unwrap());
        let a = build_ansatz(&cfg).unwrap();
        let d = detect_blowup(&a.w, cfg.rho(), &pair, default_delta(&pair)).unwrap();
        let el = (-8.0f64).exp();
        for i in 0..2 {
            assert!((d.lambda_i[i] - (8.0 + (16.0 * PI).ln())).abs() < 20.0 * 8.0 * el, "{:?}", d.lambda_i);
            assert!(pair.lattice.displacement(d.x_i[i], pair.point(i + 1)).norm() < 1e-12);
            assert!(d.gstar_grad_norm[i] < 1e-9);
        }
        assert!((d.local_masses[0] - d.local_masses[1]).abs() < 1e-9 * d.local_masses[0]);
        assert!(check_pohozaev_gradient(&d).iter().all(|e| e.passed()));
        assert!(detect_blowup(&a.w, cfg.rho(), &pair, 0.5).is_err());
    }

    #[test]
    fn not_blown_up_for_flat_field() {
        let pair = diag_pair();
        let u = GridField::from_fn(pair.lattice, GridSpec::new(32).unwrap(), |s, _| (2.0 * PI * s).cos());
        assert!(matches!(detect_blowup(&u, 50.0, &pair, 0.1), Err(MfeError::NotBlownUp(_))));
    }

    #[test]
    fn pohozaev_negative_control() {
        let pair = diag_pair();
        let cfg = AnsatzConfig::at_lambda(pair, 6.0, GridSpec::new(256).unwrap());
        let a = build_ansatz(&cfg).unwrap();
        let mut d = detect_blowup(&a.w, cfg.rho(), &pair, default_delta(&pair)).unwrap();
        let ev = GreensEvaluator::new(pair.lattice);
        // Displace x_1 by 0.01 along the direction of largest curvature.
        let x = TorusPoint::new(0.01, 0.0);
        let g = ev.g_star_gradient(&pair, 1, x).unwrap();
        d.gstar_grad_norm[0] = g[0].hypot(g[1]);
        assert!(!check_pohozaev_gradient(&d)[0].passed());
    }

    #[test]
    fn perturbations_are_even_and_bounded() {
        let l = TorusLattice::square();
        let spec = GridSpec::new(32).unwrap();
        let ps = random_even_perturbations(l, spec, 3, 0.2, 11);
        for p in &ps {
            assert!(evenness_defect(p) < 1e-15);
            assert!((p.sup_norm() - 0.2).abs() < 1e-12);
        }
        assert_eq!(ps[0].values(), random_even_perturbations(l, spec, 3, 0.2, 11)[0].values());
    }

    #[test]
    fn report_roundtrip_and_determinism() {
        let (r, text) = emit_report(&[], "v0", "abc");
        assert!(r.checks.is_empty());
        assert_eq!(VerificationReport::parse(&text).unwrap(), r);
        let e = CheckEntry::new("x", "ref", 1.0 / 3.0, 2.0, 0.123456789012345678, true);
        let (r1, t1) = emit_report(&[e.clone()], "v0", "abc");
        let (_, t2) = emit_report(&[e], "v0", "abc");
        assert_eq!(t1, t2);
        assert_eq!(VerificationReport::parse(&t1).unwrap(), r1);
        assert_eq!(r1.checks[0].measured, 0.333333333333333);
    }

    #[test]
    fn solution_diagnostics_small_grid() {
        let pair = diag_pair();
        let spec = GridSpec::new(256).unwrap();
        let rec = crate::solver::solve_from_ansatz(pair, 0.5, spec, &SolverOptions::default()).unwrap();
        let d = detect_blowup_record(&rec, default_delta(&pair)).unwrap();
        assert!((d.lambda_i[0] - d.lambda_i[1]).abs() < 1e-8);
        assert!((d.local_masses[0] - d.local_masses[1]).abs() < 1e-8);
        assert!(d.local_masses.iter().all(|&m| m > 0.0 && m < rec.rho));
        let l = check_local_mass(&d);
        assert!((l[0].ratio - l[1].ratio).abs() < 1e-6);
        let m = check_mean_identity(&d);
        assert!((m[0].measured - m[1].measured).abs() < 1e-8);
        assert!(m[0].measured < 0.0);
        let h = halftorus_check(&rec, &SolverOptions::default()).unwrap();
        assert!(h[0].passed(), "{h:?}");
    }
}
