//! Preconditioned MINRES for symmetric (possibly indefinite) operators on grid fields.
//!
//! The preconditioner must be symmetric positive definite. The iteration
//! minimizes the `M^{-1}`-norm of the residual; convergence is declared on the
//! plain Euclidean residual `‖b − Ax‖ ≤ tol·‖b‖`, which is re-checked
//! explicitly before returning. Iteration stops early once the true residual
//! stalls at its rounding floor.

use crate::error::{MfeError, Result};
use crate::geometry::GridField;

#[derive(Clone, Debug)]
pub struct KrylovStats {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

pub fn minres(
    apply: impl Fn(&GridField) -> GridField,
    precondition: impl Fn(&GridField) -> GridField,
    b: &GridField,
    tol: f64,
    max_iter: usize,
) -> Result<(GridField, KrylovStats)> {
    let bnorm = b.l2_norm();
    let mut x = GridField::zeros(*b.lattice(), b.spec());
    if bnorm == 0.0 {
        return Ok((x, KrylovStats { iterations: 0, relative_residual: 0.0, converged: true }));
    }

    // Paige–Saunders recurrences.
    let mut r1 = b.clone();
    let mut y = precondition(b);
    let mut beta1 = b.dot(&y);
    if !(beta1 > 0.0) {
        return Err(MfeError::LinearSolver("preconditioner is not positive definite".into()));
    }
    beta1 = beta1.sqrt();
    let mut r2 = r1.clone();
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln) = (0.0, 0.0);
    let mut phibar = beta1;
    let (mut cs, mut sn) = (-1.0, 0.0);
    let mut w = GridField::zeros(*b.lattice(), b.spec());
    let mut w2 = w.clone();

    let mut stats = KrylovStats { iterations: 0, relative_residual: 1.0, converged: false };
    // The estimate `phibar` is in the preconditioned norm; check the true residual when it is small.
    let mut check_every = 0usize;
    // Stall: no halving of the true residual over `STALL_WINDOW` iterations.
    const STALL_WINDOW: usize = 25;
    let (mut best, mut best_itn) = (f64::INFINITY, 0usize);
    for itn in 1..=max_iter {
        let s = 1.0 / beta;
        let v = y.scale(s);
        let mut yy = apply(&v);
        if itn >= 2 {
            yy.axpy(-beta / oldb, &r1);
        }
        let alfa = v.dot(&yy);
        yy.axpy(-alfa / beta, &r2);
        r1 = std::mem::replace(&mut r2, yy);
        y = precondition(&r2);
        oldb = beta;
        let b2 = r2.dot(&y);
        if b2 < 0.0 {
            return Err(MfeError::LinearSolver("preconditioner is not positive definite".into()));
        }
        beta = b2.sqrt();

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::MIN_POSITIVE);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        let denom = 1.0 / gamma;
        let w1 = std::mem::replace(&mut w2, w);
        w = v.zip_map(&w1, |vi, a| vi - oldeps * a);
        w.axpy(-delta, &w2);
        w = w.scale(denom);
        x.axpy(phi, &w);

        stats.iterations = itn;
        let est = phibar / beta1;
        if !est.is_finite() {
            return Err(MfeError::LinearSolver("MINRES breakdown (non-finite residual)".into()));
        }
        check_every += 1;
        if est <= tol || beta == 0.0 || check_every >= 50 {
            check_every = 0;
            let rel = b.sub(&apply(&x)).l2_norm() / bnorm;
            if rel < 0.5 * best {
                best = rel;
                best_itn = itn;
            }
            let stalled = itn - best_itn >= STALL_WINDOW;
            stats.relative_residual = rel;
            if rel <= tol || beta == 0.0 || stalled {
                stats.converged = rel <= tol;
                return Ok((x, stats));
            }
        }
    }
    stats.relative_residual = b.sub(&apply(&x)).l2_norm() / bnorm;
    stats.converged = stats.relative_residual <= tol;
    Ok((x, stats))
}
