//! Newton–Krylov solution of `Δu + ρ(e^u − 1) = 0` (the gauge in which
//! `∫e^u = 1` holds automatically), continuation in `ε`, eigenanalysis of the
//! linearization and the reduced-energy scan.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ansatz::{build_ansatz, closed_form_maximizer, default_lambda, default_r0, energy, lambda_bracket, AnsatzConfig, EXP_GUARD};
use crate::error::{MfeError, Result};
use crate::geometry::{integrate, symmetrize_even, GridField, GridSpec, Spectral, TorusPoint};
use crate::greens::BlowupPair;
use crate::krylov::minres;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Bound on the scaled residual `sup|F(u)| / (ρ·max(1, sup e^u))`.
    pub newton_tol: f64,
    pub max_newton: usize,
    pub krylov_tol: f64,
    pub krylov_max_iter: usize,
    /// Initial step length; halved at most `max_halvings` times until the
    /// natural monotonicity test `‖J(u)⁻¹F(u + tv)‖ < ‖v‖` holds.
    pub damping: f64,
    pub max_halvings: usize,
    pub enforce_even: bool,
    /// For `ε` at or below this value the Krylov tolerance is relaxed to `relaxed_krylov_tol`.
    pub relax_below_eps: f64,
    pub relaxed_krylov_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            max_newton: 30,
            krylov_tol: 1e-8,
            krylov_max_iter: 2000,
            damping: 1.0,
            max_halvings: 10,
            enforce_even: true,
            relax_below_eps: 0.05,
            relaxed_krylov_tol: 1e-6,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.newton_tol > 0.0
            && self.krylov_tol > 0.0
            && self.relaxed_krylov_tol > 0.0
            && self.max_newton >= 1
            && self.krylov_max_iter >= 1
            && self.damping > 0.0
            && self.damping <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(MfeError::Precondition("solver tolerances must be positive, iteration limits ≥ 1, damping in (0,1]".into()))
        }
    }

    /// Options actually used at a given `ε`.
    pub fn for_eps(&self, eps: f64) -> Self {
        let mut o = self.clone();
        if eps <= self.relax_below_eps {
            o.krylov_tol = o.krylov_tol.max(o.relaxed_krylov_tol);
        }
        o
    }
}

/// `F(u) = Δu + ρ(e^u − 1)` with its absolute and scaled sup-norms.
pub fn residual(u: &GridField, rho: f64) -> Result<(GridField, f64, f64)> {
    let m = u.max_value();
    if !(m < EXP_GUARD) || !u.is_finite() {
        return Err(MfeError::Precondition(format!("max u = {m} risks overflow in e^u")));
    }
    let sp = Spectral::shared(u.lattice(), u.spec());
    let f = sp.laplacian(u).zip_map(u, |l, v| l + rho * (v.exp() - 1.0));
    let abs = f.sup_norm();
    Ok((f, abs, abs / (rho * m.exp().max(1.0))))
}

#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    pub u: GridField,
    /// Scaled residual at the returned iterate.
    pub residual_sup: f64,
    pub residual_abs: f64,
    pub iterations: usize,
    /// Scaled residual before each step and at the end.
    pub history: Vec<f64>,
    pub krylov_iterations: Vec<usize>,
    pub step_lengths: Vec<f64>,
    /// `‖J(u_k)⁻¹F(u_k)‖` of each accepted step.
    pub natural_history: Vec<f64>,
}

pub fn newton_solve(u0: &GridField, rho: f64, opts: &SolverOptions) -> Result<NewtonOutcome> {
    opts.validate()?;
    if !(rho > 0.0) {
        return Err(MfeError::Precondition(format!("rho = {rho} must be positive")));
    }
    if !u0.is_finite() {
        return Err(MfeError::Precondition("initial guess is not finite".into()));
    }
    let sp = Spectral::shared(u0.lattice(), u0.spec());
    let mut u = if opts.enforce_even { symmetrize_even(u0) } else { u0.clone() };
    let (mut f, mut abs, mut scaled) = residual(&u, rho)?;
    let mut history = vec![scaled];
    let mut krylov_iterations = Vec::new();
    let mut step_lengths = Vec::new();
    let mut natural_history = Vec::new();

    for it in 0..opts.max_newton {
        if scaled <= opts.newton_tol {
            return Ok(NewtonOutcome {
                u,
                residual_sup: scaled,
                residual_abs: abs,
                iterations: it,
                history,
                krylov_iterations,
                step_lengths,
                natural_history,
            });
        }
        // (−Δ − ρe^u)v = F, so that u + v is the Newton update.
        let eu = u.map(f64::exp);
        // The odd translation modes are (near-)kernel; with `enforce_even` the
        // iteration stays in the even subspace so rounding cannot feed them.
        let a = |v: &GridField| {
            let av = sp.laplacian(v).zip_map(&eu.zip_map(v, |e, x| e * x), |d, ev| -d - rho * ev);
            if opts.enforce_even {
                symmetrize_even(&av)
            } else {
                av
            }
        };
        let solve = |rhs: &GridField, step: usize| -> Result<(GridField, usize)> {
            let rhs = if opts.enforce_even { symmetrize_even(rhs) } else { rhs.clone() };
            let (v, st) = minres(a, |r| sp.shifted_inverse(r, 1.0), &rhs, opts.krylov_tol, opts.krylov_max_iter)?;
            if !st.converged {
                return Err(MfeError::LinearSolver(format!(
                    "MINRES stagnated at relative residual {:.3e} after {} iterations (Newton step {step})",
                    st.relative_residual, st.iterations
                )));
            }
            Ok((if opts.enforce_even { symmetrize_even(&v) } else { v }, st.iterations))
        };
        let (v, kits) = solve(&f, it + 1)?;
        krylov_iterations.push(kits);
        let vnorm = v.l2_norm();

        // Natural monotonicity test: the simplified correction J(u)⁻¹F(u + tv)
        // must be shorter than the full correction.
        let mut t = opts.damping;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let mut trial = u.clone();
            trial.axpy(t, &v);
            if trial.max_value() < EXP_GUARD && trial.is_finite() {
                let (tf, ta, ts) = residual(&trial, rho)?;
                let (vbar, _) = solve(&tf, it + 1)?;
                if vbar.l2_norm() < vnorm || ts <= opts.newton_tol {
                    accepted = Some((trial, tf, ta, ts));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((nu, nf, na, ns)) = accepted else {
            return Err(MfeError::Divergence { history });
        };
        step_lengths.push(t);
        natural_history.push(vnorm);
        u = nu;
        f = nf;
        abs = na;
        scaled = ns;
        history.push(scaled);
    }
    if scaled <= opts.newton_tol {
        return Ok(NewtonOutcome {
            u,
            residual_sup: scaled,
            residual_abs: abs,
            iterations: opts.max_newton,
            history,
            krylov_iterations,
            step_lengths,
            natural_history,
        });
    }
    Err(MfeError::Divergence { history })
}

#[derive(Clone, Debug)]
pub struct SolutionRecord {
    pub u: GridField,
    pub pair: BlowupPair,
    pub rho: f64,
    pub eps: f64,
    /// Scale `λ` of the ansatz the solve started from.
    pub ansatz_lambda: f64,
    pub lambda_max: f64,
    pub max_points: [TorusPoint; 2],
    pub residual_sup: f64,
    pub residual_abs: f64,
    pub energy: f64,
    pub mass_check: f64,
    pub newton_iters: usize,
    pub history: Vec<f64>,
    pub natural_history: Vec<f64>,
    pub krylov_iterations: Vec<usize>,
}

/// JSON-friendly summary of a record (the field itself is dumped separately).
#[derive(Clone, Debug, Serialize)]
pub struct RecordMeta {
    pub n: usize,
    pub omega1: [f64; 2],
    pub omega2: [f64; 2],
    pub pair: &'static str,
    pub rho: f64,
    pub eps: f64,
    pub ansatz_lambda: f64,
    pub lambda_max: f64,
    pub max_points: [[f64; 2]; 2],
    pub residual_sup: f64,
    pub residual_abs: f64,
    pub energy: f64,
    pub mass_check: f64,
    pub newton_iters: usize,
    pub history: Vec<f64>,
    pub natural_history: Vec<f64>,
    pub krylov_iterations: Vec<usize>,
}

/// Grid maximum of `u` over the nodes nearer to `p_i` than to the other point.
pub fn voronoi_max(u: &GridField, pair: &BlowupPair, i: usize) -> (usize, usize, f64) {
    let lattice = pair.lattice;
    let (pi, pj) = (pair.point(i), pair.point(3 - i));
    let n = u.n();
    let mut best = (0, 0, f64::NEG_INFINITY);
    for j in 0..n {
        for k in 0..n {
            let v = u.get(j, k);
            if v > best.2 {
                let x = u.node_point(j, k);
                if lattice.displacement(x, pi).norm() <= lattice.displacement(x, pj).norm() {
                    best = (j, k, v);
                }
            }
        }
    }
    best
}

impl SolutionRecord {
    pub fn new(outcome: NewtonOutcome, pair: BlowupPair, eps: f64, ansatz_lambda: f64) -> Result<Self> {
        let u = outcome.u;
        let rho = 16.0 * PI + eps;
        let max_points = [1, 2].map(|i| {
            let (j, k, _) = voronoi_max(&u, &pair, i);
            u.node_point(j, k)
        });
        let energy = energy(&u, rho)?;
        let mass_check = integrate(&u.map(f64::exp));
        Ok(Self {
            lambda_max: u.max_value(),
            u,
            pair,
            rho,
            eps,
            ansatz_lambda,
            max_points,
            residual_sup: outcome.residual_sup,
            residual_abs: outcome.residual_abs,
            energy,
            mass_check,
            newton_iters: outcome.iterations,
            history: outcome.history,
            natural_history: outcome.natural_history,
            krylov_iterations: outcome.krylov_iterations,
        })
    }

    pub fn meta(&self) -> RecordMeta {
        let l = self.pair.lattice;
        RecordMeta {
            n: self.u.n(),
            omega1: [l.omega1().re, l.omega1().im],
            omega2: [l.omega2().re, l.omega2().im],
            pair: self.pair.which.name(),
            rho: self.rho,
            eps: self.eps,
            ansatz_lambda: self.ansatz_lambda,
            lambda_max: self.lambda_max,
            max_points: self.max_points.map(|p| [p.s, p.t]),
            residual_sup: self.residual_sup,
            residual_abs: self.residual_abs,
            energy: self.energy,
            mass_check: self.mass_check,
            newton_iters: self.newton_iters,
            history: self.history.clone(),
            natural_history: self.natural_history.clone(),
            krylov_iterations: self.krylov_iterations.clone(),
        }
    }
}

/// The ansatz at `ε` (default `λ`, `R0`) in the `∫e^u = 1` gauge.
pub fn initial_guess(pair: BlowupPair, eps: f64, spec: GridSpec) -> Result<(GridField, AnsatzConfig)> {
    let cfg = AnsatzConfig::new(pair, eps, spec)?;
    Ok((build_ansatz(&cfg)?.normalized()?, cfg))
}

pub fn solve_from_ansatz(pair: BlowupPair, eps: f64, spec: GridSpec, opts: &SolverOptions) -> Result<SolutionRecord> {
    let (u0, cfg) = initial_guess(pair, eps, spec)?;
    let out = newton_solve(&u0, cfg.rho(), &opts.for_eps(eps))?;
    SolutionRecord::new(out, pair, eps, cfg.lambda)
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub pair: BlowupPair,
    pub spec: GridSpec,
    pub records: Vec<SolutionRecord>,
}

pub struct BranchRun {
    pub branch: Branch,
    /// The `ε` at which the branch stopped, with the error.
    pub failure: Option<(f64, MfeError)>,
}

/// Solves along a strictly decreasing list of `ε`, warm-starting each point
/// from the previous solution plus the change of the normalized ansatz.
pub fn continue_branch(pair: BlowupPair, spec: GridSpec, eps_list: &[f64], opts: &SolverOptions) -> Result<BranchRun> {
    if eps_list.is_empty() || eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(MfeError::Precondition("eps list must be non-empty and strictly decreasing".into()));
    }
    for &eps in eps_list {
        crate::ansatz::check_resolution(&pair.lattice, spec.n(), default_lambda(eps)?)?;
    }
    let mut branch = Branch { pair, spec, records: Vec::new() };
    let mut prev: Option<GridField> = None;
    for &eps in eps_list {
        let step = (|| -> Result<(SolutionRecord, GridField)> {
            let (w, cfg) = initial_guess(pair, eps, spec)?;
            let u0 = match (&prev, branch.records.last()) {
                (Some(w_old), Some(rec)) => rec.u.add(&w.sub(w_old)),
                _ => w.clone(),
            };
            let out = newton_solve(&u0, cfg.rho(), &opts.for_eps(eps))?;
            Ok((SolutionRecord::new(out, pair, eps, cfg.lambda)?, w))
        })();
        match step {
            Ok((rec, w)) => {
                branch.records.push(rec);
                prev = Some(w);
            }
            Err(e) => return Ok(BranchRun { branch, failure: Some((eps, e)) }),
        }
    }
    Ok(BranchRun { branch, failure: None })
}

/// `ℒv = Δv + ρ(e^u/∫e^u)v`.
pub fn linearized_apply(u: &GridField, rho: f64, v: &GridField) -> Result<GridField> {
    let lie = crate::ansatz::log_integral_exp(u)?;
    let weight = u.map(|x| rho * (x - lie).exp());
    Ok(linearized_with_weight(&weight, v))
}

fn linearized_with_weight(weight: &GridField, v: &GridField) -> GridField {
    let sp = Spectral::shared(v.lattice(), v.spec());
    sp.laplacian(v).zip_map(&weight.zip_map(v, |w, x| w * x), |d, wv| d + wv)
}

#[derive(Clone, Debug)]
pub struct Eigenpair {
    pub value: f64,
    pub field: GridField,
    /// Backward error `‖ℒx − μx‖ / ‖ℒ‖` for unit `x`, with `‖ℒ‖` bounded by its symbol.
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct EigenOptions {
    pub inner_tol: f64,
    /// Residual of the Ritz pairs of `ℒ⁻¹`, relative to its largest Ritz value.
    pub tol: f64,
    /// Number of vectors the operator is applied to per expansion; bounds the multiplicities resolved.
    pub block: usize,
    pub max_basis: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { inner_tol: 1e-9, tol: 1e-7, block: 6, max_basis: 120, seed: 7 }
    }
}

/// Orthogonalizes `w` against `basis` (twice) and normalizes; `None` if it vanishes.
fn orthonormalize_against(mut w: GridField, basis: &[GridField]) -> Option<GridField> {
    let before = w.l2_norm();
    for _ in 0..2 {
        for b in basis {
            let c = b.dot(&w);
            w.axpy(-c, b);
        }
    }
    let after = w.l2_norm();
    (after > 1e-10 * before && after > 0.0).then(|| w.scale(1.0 / after))
}

/// The `k` eigenpairs of smallest `|μ|` of the discretized `ℒ` at `u`, by
/// shift-invert (shift 0) block Krylov iteration with full orthogonalization
/// and Rayleigh–Ritz extraction.
pub fn small_eigenpairs(u: &GridField, rho: f64, k: usize, opts: &EigenOptions) -> Result<Vec<Eigenpair>> {
    if k == 0 || k > 12 {
        return Err(MfeError::Precondition(format!("k = {k} must be in 1..=12")));
    }
    let lie = crate::ansatz::log_integral_exp(u)?;
    let weight = u.map(|x| rho * (x - lie).exp());
    let sp = Spectral::shared(u.lattice(), u.spec());
    let op = |v: &GridField| linearized_with_weight(&weight, v);
    let op_norm = 4.0 * PI * PI * sp.wavenumber_sq().iter().fold(0.0_f64, |a, &b| a.max(b)) + weight.max_value();
    let invert = |v: &GridField| -> Result<GridField> {
        let (x, st) = minres(op, |r| sp.shifted_inverse(r, 1.0), v, opts.inner_tol, 5000)?;
        // Near the kernel the attainable accuracy sits above `inner_tol`; the
        // outer iteration checks true residuals, so a modest floor is accepted.
        if !(st.converged || st.relative_residual < 1e3 * opts.inner_tol) {
            return Err(MfeError::Eigen(format!("inner solve stagnated at {:.3e}", st.relative_residual)));
        }
        Ok(x)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let len = u.values().len();
    let mut basis: Vec<GridField> = Vec::new();
    let mut images: Vec<GridField> = Vec::new();
    let mut pending: Vec<GridField> = Vec::new();
    for _ in 0..opts.block.max(1) {
        let r = GridField::from_values(*u.lattice(), u.spec(), (0..len).map(|_| rng.random::<f64>() - 0.5).collect())?;
        if let Some(q) = orthonormalize_against(r, &pending) {
            pending.push(q);
        }
    }

    loop {
        let fresh: Vec<GridField> = pending.drain(..).collect();
        for q in fresh {
            images.push(invert(&q)?);
            basis.push(q);
        }
        let m = basis.len();
        let mut h = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v = 0.5 * (basis[i].dot(&images[j]) + basis[j].dot(&images[i]));
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].abs().total_cmp(&eig.eigenvalues[a].abs()));
        let wanted: Vec<usize> = order.iter().copied().take(k).collect();
        let theta_max = eig.eigenvalues[order[0]].abs();

        let combine = |fields: &[GridField], c: usize| {
            let mut x = GridField::zeros(*u.lattice(), u.spec());
            for (i, f) in fields.iter().enumerate() {
                x.axpy(eig.eigenvectors[(i, c)], f);
            }
            x
        };
        let mut residuals = Vec::with_capacity(wanted.len());
        let mut worst = 0.0_f64;
        for &c in &wanted {
            let theta = eig.eigenvalues[c];
            let x = combine(&basis, c);
            let r = combine(&images, c).zip_map(&x, |tx, xx| tx - theta * xx);
            worst = worst.max(r.l2_norm() / (theta_max * x.l2_norm()));
            residuals.push(r);
        }
        let converged = m >= k && worst <= opts.tol;
        if converged || m + opts.block > opts.max_basis {
            if m < k {
                return Err(MfeError::Eigen(format!("Krylov space exhausted at dimension {m} < k = {k}")));
            }
            if !converged {
                return Err(MfeError::Eigen(format!("block Krylov did not converge within {m} vectors (worst residual {worst:.3e})")));
            }
            let mut out: Vec<Eigenpair> = wanted
                .iter()
                .map(|&c| {
                    let mut x = combine(&basis, c);
                    x = x.scale(1.0 / x.l2_norm());
                    let mu = 1.0 / eig.eigenvalues[c];
                    let res = op(&x).zip_map(&x, |a, b| a - mu * b).l2_norm() / op_norm;
                    Eigenpair { value: mu, field: x, residual: res }
                })
                .collect();
            out.sort_by(|a, b| a.value.abs().total_cmp(&b.value.abs()));
            return Ok(out);
        }
        // Expand with the Ritz residuals of the wanted pairs (block Krylov direction).
        let mut all = basis.clone();
        for r in residuals.into_iter().take(opts.block.max(1)) {
            if let Some(q) = orthonormalize_against(r, &all) {
                all.push(q.clone());
                pending.push(q);
            }
        }
        if pending.is_empty() {
            return Err(MfeError::Eigen("Krylov space stopped growing".into()));
        }
    }
}

/// `ψ_{i,k}` of the rescaled variable `z = e^{λ/2}(x − p_i)`.
pub fn kernel_functions(i: usize, k: usize, lambda: f64, pair: &BlowupPair, spec: GridSpec) -> Result<GridField> {
    if !(i == 1 || i == 2) || k > 2 {
        return Err(MfeError::Precondition(format!("kernel function index ({i}, {k}) out of range")));
    }
    let scale = (0.5 * lambda).exp();
    let c = (2.0 * PI).sqrt();
    let raw = GridField::from_displacement(pair.lattice, spec, pair.point(i), |v| {
        let z = v * scale;
        let d = 1.0 + 2.0 * PI * z.norm_sqr();
        match k {
            0 => (2.0 - d) / d,
            1 => c * z.re / d,
            _ => c * z.im / d,
        }
    });
    // Nodes equidistant from two images of p_i get an arbitrary representative;
    // restore exact parity about p_i (a grid node) by reflecting the samples.
    let n = spec.n();
    let (ci, ck) = raw.nearest_node(pair.point(i));
    let sign = if k == 0 { 1.0 } else { -1.0 };
    let mut values = vec![0.0; n * n];
    for j in 0..n {
        for l in 0..n {
            let (mj, ml) = ((2 * ci + 2 * n - j) % n, (2 * ck + 2 * n - l) % n);
            values[j * n + l] = 0.5 * (raw.get(j, l) + sign * raw.get(mj, ml));
        }
    }
    GridField::from_values(pair.lattice, spec, values)
}

/// Relative 2-norm of the projection of `f`, restricted to `B(p1,r) ∪ B(p2,r)`,
/// onto the span of the six `ψ_{i,k}` restricted the same way.
pub fn kernel_projection(f: &GridField, pair: &BlowupPair, lambda: f64, r: f64) -> Result<f64> {
    let lattice = pair.lattice;
    let mask = GridField::from_fn(lattice, f.spec(), |s, t| {
        let x = TorusPoint::new(s, t);
        let near = (1..=2).any(|i| lattice.displacement(x, pair.point(i)).norm() < r);
        if near {
            1.0
        } else {
            0.0
        }
    });
    let restrict = |g: &GridField| g.zip_map(&mask, |a, m| a * m);
    let target = restrict(f);
    let norm = target.l2_norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let mut ortho: Vec<GridField> = Vec::new();
    for i in 1..=2 {
        for k in 0..3 {
            let mut g = restrict(&kernel_functions(i, k, lambda, pair, f.spec())?);
            for _ in 0..2 {
                for o in &ortho {
                    let c = o.dot(&g);
                    g.axpy(-c, o);
                }
            }
            let gn = g.l2_norm();
            if gn > 1e-12 {
                ortho.push(g.scale(1.0 / gn));
            }
        }
    }
    let proj2: f64 = ortho.iter().map(|o| o.dot(&target).powi(2)).sum();
    Ok(proj2.sqrt() / norm)
}

/// `‖f‖_* = sup |f| / (Σ_j (1 + e^{λ/2}d(x,p_j))^{−3} + e^{−λ})`.
pub fn star_norm(f: &GridField, pair: &BlowupPair, lambda: f64) -> f64 {
    let lattice = pair.lattice;
    let scale = (0.5 * lambda).exp();
    let floor = (-lambda).exp();
    let n = f.n();
    let mut best = 0.0_f64;
    for j in 0..n {
        for k in 0..n {
            let x = f.node_point(j, k);
            let w: f64 = (1..=2).map(|i| (1.0 + scale * lattice.displacement(x, pair.point(i)).norm()).powi(-3)).sum::<f64>() + floor;
            best = best.max(f.get(j, k).abs() / w);
        }
    }
    best
}

#[derive(Clone, Debug, Serialize)]
pub struct EnergyScan {
    pub eps: f64,
    /// `(λ, J_ρ(w_λ))`.
    pub table: Vec<(f64, f64)>,
    pub lambda_star: f64,
    /// Maximizer of `−ελ − 32πλe^{−λ}`.
    pub closed_form_star: f64,
    pub bracket: (f64, f64),
    /// The discrete maximum sits at an end of the grid.
    pub boundary_warning: bool,
    /// Largest shift of `λ*` when `J` is perturbed by `±e^{−λ}`.
    pub sensitivity: f64,
}

fn parabola_vertex(x: [f64; 3], y: [f64; 3]) -> f64 {
    let d1 = (y[1] - y[0]) / (x[1] - x[0]);
    let d2 = (y[2] - y[1]) / (x[2] - x[1]);
    let curv = (d2 - d1) / (x[2] - x[0]);
    if curv == 0.0 {
        return x[1];
    }
    0.5 * (x[0] + x[1]) - d1 / (2.0 * curv)
}

fn discrete_maximizer(table: &[(f64, f64)]) -> (f64, bool) {
    let (imax, _) = table.iter().enumerate().max_by(|a, b| a.1 .1.total_cmp(&b.1 .1)).expect("non-empty");
    if imax == 0 || imax + 1 == table.len() {
        return (table[imax].0, true);
    }
    let x = [table[imax - 1].0, table[imax].0, table[imax + 1].0];
    let y = [table[imax - 1].1, table[imax].1, table[imax + 1].1];
    (parabola_vertex(x, y), false)
}

/// `J_ρ(w_λ)` over `lambda_grid` at fixed `ε`, and its interior maximizer.
pub fn reduced_energy_scan(pair: BlowupPair, spec: GridSpec, eps: f64, lambda_grid: &[f64]) -> Result<EnergyScan> {
    let bracket = lambda_bracket(eps)?;
    if lambda_grid.len() < 3 || lambda_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(MfeError::Precondition("lambda grid needs ≥ 3 increasing values".into()));
    }
    if lambda_grid.iter().any(|&l| !(l > bracket.0 && l < bracket.1)) {
        return Err(MfeError::Precondition(format!("lambda grid must lie inside ({}, {})", bracket.0, bracket.1)));
    }
    let rho = 16.0 * PI + eps;
    let mut table = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let cfg = AnsatzConfig { eps, lambda, r0: default_r0(&pair), pair, spec };
        let a = build_ansatz(&cfg)?;
        table.push((lambda, energy(&a.w, rho)?));
    }
    let (lambda_star, boundary_warning) = discrete_maximizer(&table);
    let mut sensitivity = 0.0_f64;
    for sign in [-1.0, 1.0] {
        let perturbed: Vec<(f64, f64)> = table.iter().map(|&(l, j)| (l, j + sign * (-l).exp())).collect();
        sensitivity = sensitivity.max((discrete_maximizer(&perturbed).0 - lambda_star).abs());
    }
    Ok(EnergyScan { eps, table, lambda_star, closed_form_star: closed_form_maximizer(eps)?, bracket, boundary_warning, sensitivity })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{evenness_defect, TorusLattice};
    use crate::greens::HalfPeriod;

    #[test]
    fn trivial_solution_at_small_rho() {
        let l = TorusLattice::square();
        let spec = GridSpec::new(32).unwrap();
        let out = newton_solve(&GridField::zeros(l, spec), 1.0, &SolverOptions::default()).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.u.sup_norm() < 1e-14);
        let u0 = GridField::from_fn(l, spec, |s, t| 0.2 * (2.0 * PI * s).cos() * (2.0 * PI * t).cos());
        let out = newton_solve(&u0, 1.0, &SolverOptions::default()).unwrap();
        assert!(out.u.sup_norm() < 1e-9, "{}", out.u.sup_norm());
        assert!(out.history.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn rejects_bad_inputs() {
        let l = TorusLattice::square();
        let spec = GridSpec::new(8).unwrap();
        let z = GridField::zeros(l, spec);
        assert!(newton_solve(&z, -1.0, &SolverOptions::default()).is_err());
        let o = SolverOptions { damping: 0.0, ..Default::default() };
        assert!(newton_solve(&z, 1.0, &o).is_err());
        let nan = GridField::constant(l, spec, f64::NAN);
        assert!(newton_solve(&nan, 1.0, &SolverOptions::default()).is_err());
    }

    #[test]
    fn linearized_apply_properties() {
        let l = TorusLattice::square();
        let spec = GridSpec::new(64).unwrap();
        let u = GridField::from_fn(l, spec, |s, t| (2.0 * PI * s).cos() + 0.5 * (2.0 * PI * (s - t)).cos());
        let v1 = GridField::from_fn(l, spec, |s, t| (4.0 * PI * t).sin() * s.sin());
        let v2 = GridField::from_fn(l, spec, |s, _| (2.0 * PI * s).cos());
        let rho = 20.0;
        assert_eq!(linearized_apply(&u, rho, &GridField::zeros(l, spec)).unwrap().sup_norm(), 0.0);
        let lhs = linearized_apply(&u, rho, &v1.add(&v2.scale(2.0))).unwrap();
        let rhs = linearized_apply(&u, rho, &v1).unwrap().add(&linearized_apply(&u, rho, &v2).unwrap().scale(2.0));
        assert!(lhs.sub(&rhs).sup_norm() < 1e-12 * lhs.sup_norm().max(1.0));

        // Directional derivative of Δu + ρe^u/∫e^u with ∫e^u frozen.
        let h = 1e-6;
        let lie = crate::ansatz::log_integral_exp(&u).unwrap();
        let g = |w: &GridField| Spectral::shared(&l, spec).laplacian(w).zip_map(w, |d, x| d + rho * (x - lie).exp());
        let mut up = u.clone();
        up.axpy(h, &v1);
        let mut um = u.clone();
        um.axpy(-h, &v1);
        let fd = g(&up).sub(&g(&um)).scale(0.5 / h);
        let exact = linearized_apply(&u, rho, &v1).unwrap();
        assert!(fd.sub(&exact).sup_norm() < 1e-5 * exact.sup_norm());

        let one = linearized_apply(&u, rho, &GridField::constant(l, spec, 1.0)).unwrap();
        assert!(one.values().iter().all(|&x| x > 0.0));
    }

    #[test]
    fn eigenpairs_constant_coefficient() {
        let l = TorusLattice::square();
        let spec = GridSpec::new(32).unwrap();
        let eig = small_eigenpairs(&GridField::zeros(l, spec), 1.0, 3, &EigenOptions::default()).unwrap();
        assert!((eig[0].value - 1.0).abs() < 1e-8, "{}", eig[0].value);
        let next = 1.0 - 4.0 * PI * PI;
        assert!((eig[1].value - next).abs() < 1e-8 && (eig[2].value - next).abs() < 1e-8);
        assert!(eig.iter().all(|e| e.residual < 1e-6), "{:?}", eig.iter().map(|e| e.residual).collect::<Vec<_>>());
    }

    #[test]
    fn kernel_function_values_and_parity() {
        let pair = BlowupPair::new(TorusLattice::square(), HalfPeriod::Diag);
        let spec = GridSpec::new(256).unwrap();
        let lambda = 6.0;
        let psi0 = kernel_functions(1, 0, lambda, &pair, spec).unwrap();
        assert!((psi0.get(0, 0) - 1.0).abs() < 1e-15);
        // ψ_{1,0} changes sign at |z| = 1/√(2π), i.e. |x| = e^{−λ/2}/√(2π).
        let r = (-0.5 * lambda).exp() / (2.0 * PI).sqrt();
        let h = spec.spacing(&pair.lattice);
        let (j_in, j_out) = ((0.5 * r / h).floor() as usize, (2.0 * r / h).ceil() as usize);
        assert!(psi0.get(j_in, 0) > 0.0 && psi0.get(j_out, 0) < 0.0);
        let even = GridField::from_fn(pair.lattice, spec, |s, t| (2.0 * PI * s).cos() + (2.0 * PI * (s + t)).cos());
        for k in [1, 2] {
            for i in [1, 2] {
                let psi = kernel_functions(i, k, lambda, &pair, spec).unwrap();
                assert!(psi.dot(&even).abs() < 1e-12);
            }
        }
        assert!(kernel_functions(3, 0, lambda, &pair, spec).is_err());
    }

    #[test]
    fn kernel_functions_solve_linearized_limit() {
        // Δ_z ψ + 16π/(1+2π|z|²)² ψ on a fine square patch |z| ≤ 20, by fourth-order differences.
        let h = 0.01;
        let m = (20.0 / h) as i64;
        let psi = |k: usize, z1: f64, z2: f64| {
            let d = 1.0 + 2.0 * PI * (z1 * z1 + z2 * z2);
            match k {
                0 => (2.0 - d) / d,
                1 => (2.0 * PI).sqrt() * z1 / d,
                _ => (2.0 * PI).sqrt() * z2 / d,
            }
        };
        for k in 0..3 {
            let mut worst = 0.0_f64;
            for a in (-m..=m).step_by(37) {
                for b in (-m..=m).step_by(41) {
                    let (z1, z2) = (a as f64 * h, b as f64 * h);
                    if z1.hypot(z2) > 20.0 {
                        continue;
                    }
                    let f = |dx: f64, dy: f64| psi(k, z1 + dx, z2 + dy);
                    let d2 =
                        |g: &dyn Fn(f64) -> f64| (-g(2.0 * h) + 16.0 * g(h) - 30.0 * g(0.0) + 16.0 * g(-h) - g(-2.0 * h)) / (12.0 * h * h);
                    let lap = d2(&|s| f(s, 0.0)) + d2(&|s| f(0.0, s));
                    let r = lap + 16.0 * PI / (1.0 + 2.0 * PI * (z1 * z1 + z2 * z2)).powi(2) * f(0.0, 0.0);
                    worst = worst.max(r.abs());
                }
            }
            assert!(worst < 1e-4, "k = {k}: {worst}");
        }
    }

    #[test]
    fn star_norm_examples() {
        let pair = BlowupPair::new(TorusLattice::square(), HalfPeriod::Diag);
        let spec = GridSpec::new(64).unwrap();
        let lambda = 8.0;
        assert_eq!(star_norm(&GridField::zeros(pair.lattice, spec), &pair, lambda), 0.0);
        let one = star_norm(&GridField::constant(pair.lattice, spec, 1.0), &pair, lambda);
        assert!(one <= lambda.exp() && one > 0.5 * lambda.exp(), "{one}");
    }

    #[test]
    fn ansatz_newton_converges_and_stays_even() {
        let pair = BlowupPair::new(TorusLattice::square(), HalfPeriod::Diag);
        let spec = GridSpec::new(128).unwrap();
        let rec = solve_from_ansatz(pair, 1.0, spec, &SolverOptions::default()).unwrap();
        assert!(rec.residual_sup <= 1e-10);
        assert!((rec.mass_check - 1.0).abs() < 1e-8, "{}", rec.mass_check);
        assert!(evenness_defect(&rec.u) < 1e-11);
        assert!(rec.newton_iters <= 10);
        for i in 0..2 {
            let d = pair.lattice.displacement(rec.max_points[i], pair.point(i + 1)).norm();
            assert!(d < 3.0 * spec.spacing(&pair.lattice));
        }
        let f = rec.u.clone();
        for i in [1, 2] {
            for k in [1, 2] {
                let psi = kernel_functions(i, k, rec.lambda_max, &pair, spec).unwrap();
                assert!(psi.dot(&f).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn branch_singleton_matches_direct_solve() {
        let pair = BlowupPair::new(TorusLattice::square(), HalfPeriod::Diag);
        let spec = GridSpec::new(128).unwrap();
        let opts = SolverOptions::default();
        let run = continue_branch(pair, spec, &[1.0], &opts).unwrap();
        assert!(run.failure.is_none());
        let direct = solve_from_ansatz(pair, 1.0, spec, &opts).unwrap();
        assert_eq!(run.branch.records[0].u.values(), direct.u.values());
        assert!(continue_branch(pair, spec, &[0.5, 1.0], &opts).is_err());
    }

    #[test]
    fn parabola_vertex_exact_for_quadratics() {
        let f = |x: f64| -(x - 8.37).powi(2) + 2.0;
        let x = [8.0, 8.5, 9.0];
        assert!((parabola_vertex(x, x.map(f)) - 8.37).abs() < 1e-12);
        let table: Vec<(f64, f64)> = [8.0, 8.2, 8.4].iter().map(|&l| (l, l)).collect();
        assert!(discrete_maximizer(&table).1);
    }
}
