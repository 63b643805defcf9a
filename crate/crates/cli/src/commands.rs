//! Subcommand bodies. Each returns the check entries it produced and, if the
//! computation stopped early, the error; artifacts are written as they appear.

use std::fmt::Write as _;

use rayon::prelude::*;

use torus_mfe::ansatz::{ansatz_bounds, build_ansatz, check_expansions, energy, energy_closed_form, AnsatzConfig};
use torus_mfe::diagnostics::{
    check_branch_trends, check_equal_height, check_local_mass, check_mass_concentration, check_mean_identity, check_pohozaev_gradient,
    check_record, check_total_mass, detect_blowup_record, halftorus_check, inner_outer_errors, random_even_perturbations, scaling_ratio,
    uniqueness_experiment, BlowupDiagnostics, CheckEntry, Verdict,
};
use torus_mfe::geometry::TorusPoint;
use torus_mfe::greens::{find_critical_points, oracle, seed_grid, BlowupPair, Derivative, GreensEvaluator, HalfPeriod, StarData};
use torus_mfe::solver::{continue_branch, solve_from_ansatz, Branch, SolutionRecord};
use torus_mfe::{MfeError, Result};

use crate::config::RunConfig;
use crate::output::{record_name, RunDir};

#[derive(Default)]
pub struct Outcome {
    pub entries: Vec<CheckEntry>,
    pub error: Option<MfeError>,
}

impl Outcome {
    fn extend(&mut self, other: Outcome) {
        self.entries.extend(other.entries);
        if self.error.is_none() {
            self.error = other.error;
        }
    }

    fn fail(mut self, e: MfeError) -> Self {
        self.error.get_or_insert(e);
        self
    }
}

fn tagged(entries: Vec<CheckEntry>, tag: &str) -> Vec<CheckEntry> {
    entries
        .into_iter()
        .map(|mut e| {
            e.name = format!("{}@{tag}", e.name);
            e
        })
        .collect()
}

fn info(name: &str, reference: &str, value: f64) -> CheckEntry {
    CheckEntry::new(name, reference, value, value, 1.0, true).with_verdict(Verdict::Info)
}

pub fn green_eval(cfg: &RunConfig, s: f64, t: f64) -> Result<String> {
    let ev = GreensEvaluator::new(cfg.lattice()?);
    let p = TorusPoint::new(s, t);
    let mut out = serde_json::Map::new();
    out.insert("s".into(), s.into());
    out.insert("t".into(), t.into());
    out.insert("green".into(), ev.green_value(p)?.into());
    out.insert("regular".into(), ev.green_regular(p).into());
    if let Derivative::Gradient(g) = ev.green_derivatives(p, 1)? {
        out.insert("gradient".into(), serde_json::json!(g));
    }
    if let Derivative::Hessian(h) = ev.green_derivatives(p, 2)? {
        out.insert("hessian".into(), serde_json::json!(h));
    }
    Ok(serde_json::to_string_pretty(&out).expect("json"))
}

pub fn green_selftest(cfg: &RunConfig) -> Outcome {
    match oracle::selftest(cfg.n, cfg.seed) {
        Ok(items) => Outcome {
            entries: items
                .into_iter()
                .map(|it| {
                    CheckEntry::new(
                        it.name,
                        "series evaluation against the spectral Poisson oracle and symmetry identities",
                        it.measured,
                        it.tolerance,
                        it.measured / it.tolerance,
                        it.pass,
                    )
                })
                .collect(),
            error: None,
        },
        Err(e) => Outcome::default().fail(e),
    }
}

pub fn green_critical(cfg: &RunConfig, seeds: usize) -> Result<(String, Outcome)> {
    let lattice = cfg.lattice()?;
    let ev = GreensEvaluator::new(lattice);
    let search = find_critical_points(&ev, &seed_grid(seeds));
    let mut table = String::from("s,t,kind,hessian_1,hessian_2,gradient_norm\n");
    for c in &search.points {
        let _ = writeln!(
            table,
            "{},{},{},{:e},{:e},{:e}",
            c.point.s,
            c.point.t,
            c.kind.name(),
            c.hessian_eigenvalues[0],
            c.hessian_eigenvalues[1],
            c.gradient_norm
        );
    }
    let mut entries = vec![info("critical_points_found", "critical points of G", search.points.len() as f64)];
    let found_half =
        HalfPeriod::ALL.iter().filter(|h| search.points.iter().any(|c| lattice.displacement(c.point, h.point()).norm() < 1e-8)).count();
    entries.push(CheckEntry::new(
        "half_periods_critical",
        "the three half-periods are critical points of G",
        found_half as f64,
        3.0,
        found_half as f64 / 3.0,
        found_half == 3,
    ));
    Ok((table, Outcome { entries, error: None }))
}

/// Expansion defects, residual bounds and the energy of `w_λ` for each `ε`
/// (or at a fixed `λ`).
pub fn ansatz(cfg: &RunConfig, dir: &RunDir, lambda: Option<f64>) -> Outcome {
    let mut out = Outcome::default();
    let (pair, spec) = match (cfg.blowup_pair(), cfg.grid()) {
        (Ok(p), Ok(s)) => (p, s),
        (Err(e), _) | (_, Err(e)) => return out.fail(e),
    };
    let configs: Vec<Result<AnsatzConfig>> = match lambda {
        Some(l) => vec![Ok(AnsatzConfig::at_lambda(pair, l, spec))],
        None => cfg.eps_values().into_iter().map(|e| AnsatzConfig::new(pair, e, spec)).collect(),
    };
    for c in configs {
        match c.and_then(|c| ansatz_entries(&c, dir)) {
            Ok(es) => out.entries.extend(es),
            Err(e) => return out.fail(e),
        }
    }
    out
}

fn ansatz_entries(c: &AnsatzConfig, dir: &RunDir) -> Result<Vec<CheckEntry>> {
    c.validate()?;
    let a = build_ansatz(c)?;
    dir.write_field(&format!("ansatz_{}_lambda{}", c.pair.which.name(), c.lambda), &a.w)?;
    let el = (-c.lambda).exp();
    let exp = check_expansions(&a, c, 10.0)?;
    let bounds = ansatz_bounds(&a, c)?;
    let ev = GreensEvaluator::new(c.pair.lattice);
    let g12 = ev.green_value(c.pair.p2())?;
    let closed = energy_closed_form(ev.r0(), g12, c.eps, c.lambda);
    let j = energy(&a.w, c.rho())?;
    let gate = |name: &str, reference: &str, defect: f64, bound: f64| {
        CheckEntry::new(name, reference, defect, bound, defect / bound, defect.abs() <= bound)
    };
    let center = exp.center_defect[0].abs().max(exp.center_defect[1].abs());
    let entries = vec![
        gate("ansatz_center", "center value w(p_i) = 2 lambda + 2 log 2pi + 8pi R(0) + lambda e^-lambda + O(e^-lambda)", center, 5.0 * el),
        gate("ansatz_inner", "inner expansion on |z| <= 10", exp.inner_defect, 5.0 * el),
        gate("ansatz_outer", "outer expansion w_i = 8pi G + lambda e^-lambda + O(e^-lambda) away from p_i", exp.outer_defect, 5.0 * el),
        gate("ansatz_residual_constant", "outer residual S(w) = O(lambda e^-lambda)", bounds.outer_residual_constant, 1e3),
        gate("ansatz_energy", "energy expansion of J(w_lambda)", j - closed, 20.0 * el),
        info("ansatz_mass_ratio", "int e^w / 16pi = 1 + O(lambda e^-lambda)", bounds.mass_ratio),
        info("ansatz_theta_constant", "e^w = sum U_i (1 + theta)", bounds.theta_constant),
        info("ansatz_off_core_constant", "e^w = O(e^-lambda) off the cores", bounds.off_core_constant),
    ];
    Ok(tagged(entries, &format!("lambda={}", c.lambda)))
}

pub fn solve(cfg: &RunConfig, dir: &RunDir) -> (Vec<SolutionRecord>, Outcome) {
    let mut out = Outcome::default();
    let mut recs = Vec::new();
    let (pair, spec) = match (cfg.blowup_pair(), cfg.grid()) {
        (Ok(p), Ok(s)) => (p, s),
        (Err(e), _) | (_, Err(e)) => return (recs, out.fail(e)),
    };
    for eps in cfg.eps_values() {
        match solve_from_ansatz(pair, eps, spec, &cfg.solver) {
            Ok(rec) => {
                if let Err(e) = dir.write_record(&record_name("solve", &cfg.pair, eps), &rec) {
                    return (recs, out.fail(e));
                }
                out.entries.extend(tagged(check_record(&rec, cfg.solver.newton_tol), &format!("eps={eps}")));
                recs.push(rec);
            }
            Err(e) => return (recs, out.fail(e)),
        }
    }
    (recs, out)
}

fn csv_row(rec: &SolutionRecord, diag: Option<&BlowupDiagnostics>) -> String {
    let (lam1, scale, local, mean) = match diag {
        Some(d) => {
            let lm = &check_local_mass(d)[0];
            let mi = &check_mean_identity(d)[0];
            (d.lambda_i[0], scaling_ratio(rec, d), lm.ratio, mi.measured - mi.predicted)
        }
        None => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
    };
    format!(
        "{},{},{},{},{},{},{:e},{:e},{},{},{},{:e}\n",
        rec.eps,
        rec.rho,
        rec.ansatz_lambda,
        rec.lambda_max,
        lam1,
        rec.energy,
        rec.residual_sup,
        rec.residual_abs,
        rec.newton_iters,
        scale,
        local,
        mean
    )
}

/// Continuation over the configured `ε` list; writes records and `branch.csv`.
pub fn branch(cfg: &RunConfig, dir: &RunDir) -> (Option<Branch>, Vec<BlowupDiagnostics>, Outcome) {
    let mut out = Outcome::default();
    let (pair, spec) = match (cfg.blowup_pair(), cfg.grid()) {
        (Ok(p), Ok(s)) => (p, s),
        (Err(e), _) | (_, Err(e)) => return (None, vec![], out.fail(e)),
    };
    let run = match continue_branch(pair, spec, &cfg.eps_values(), &cfg.solver) {
        Ok(r) => r,
        Err(e) => return (None, vec![], out.fail(e)),
    };
    let delta = cfg.delta_fraction * pair.separation();
    let mut csv = String::from("eps,rho,ansatz_lambda,lambda_max,lambda_1,energy,residual_sup,residual_abs,newton_iters,scaling_ratio,local_mass_ratio,mean_identity_defect\n");
    let mut diags = Vec::new();
    for rec in &run.branch.records {
        if let Err(e) = dir.write_record(&record_name("branch", &cfg.pair, rec.eps), rec) {
            return (None, diags, out.fail(e));
        }
        out.entries.extend(tagged(check_record(rec, cfg.solver.newton_tol), &format!("eps={}", rec.eps)));
        let d = detect_blowup_record(rec, delta);
        csv.push_str(&csv_row(rec, d.as_ref().ok()));
        match d {
            Ok(d) => diags.push(d),
            Err(e) => out = out.fail(e),
        }
    }
    if let Err(e) = dir.write_text("branch.csv", &csv) {
        out = out.fail(e);
    }
    if let Some((eps, e)) = run.failure {
        eprintln!("branch stopped at eps = {eps}");
        out = out.fail(e);
    }
    (Some(run.branch), diags, out)
}

/// Branch plus every asymptotic identity at each point and the trend checks.
pub fn asymptotics(cfg: &RunConfig, dir: &RunDir) -> (Option<Branch>, Outcome) {
    let (br, diags, mut out) = branch(cfg, dir);
    let Some(br) = br else { return (None, out) };
    let star = match cfg.blowup_pair().and_then(|p| StarData::compute(&GreensEvaluator::new(p.lattice), &p)) {
        Ok(s) => s,
        Err(e) => return (Some(br), out.fail(e)),
    };
    for (rec, d) in br.records.iter().zip(&diags) {
        let mut es = check_local_mass(d);
        es.extend(check_mass_concentration(d, cfg.checks.concentration_tol));
        es.push(check_total_mass(d, &star));
        es.extend(check_mean_identity(d));
        es.extend(check_pohozaev_gradient(d));
        es.extend(inner_outer_errors(d));
        es.push(check_equal_height(d));
        let lam_gap = (d.lambda_i[0] - d.lambda_i[1]).abs();
        es.push(CheckEntry::new("lambda_gap", "|lambda_1 - lambda_2| bounded", lam_gap, 0.5, lam_gap / 0.5, lam_gap < 0.5));
        out.entries.extend(tagged(es, &format!("eps={}", rec.eps)));
    }
    if diags.len() == br.records.len() {
        out.entries.extend(check_branch_trends(&br, &diags));
    }
    (Some(br), out)
}

pub fn uniqueness(cfg: &RunConfig) -> Outcome {
    let mut out = Outcome::default();
    let (lattice, spec, which) = match (cfg.lattice(), cfg.grid(), cfg.half_period()) {
        (Ok(l), Ok(s), Ok(w)) => (l, s, w),
        (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => return out.fail(e),
    };
    let pairs: Vec<HalfPeriod> = if cfg.checks.uniqueness_all_pairs { HalfPeriod::ALL.to_vec() } else { vec![which] };
    let ps = random_even_perturbations(lattice, spec, cfg.checks.perturbations, cfg.checks.perturbation_amplitude, cfg.seed);
    for eps in cfg.eps_values() {
        let results: Vec<Result<CheckEntry>> = pairs
            .par_iter()
            .map(|&h| uniqueness_experiment(BlowupPair::new(lattice, h), eps, spec, &ps, &cfg.solver).map(|u| u.entry))
            .collect();
        for r in results {
            match r {
                Ok(e) => out.entries.extend(tagged(vec![e], &format!("eps={eps}"))),
                Err(e) => return out.fail(e),
            }
        }
    }
    out
}

pub fn halftorus(cfg: &RunConfig, recs: &[SolutionRecord]) -> Outcome {
    let mut out = Outcome::default();
    for rec in recs {
        match halftorus_check(rec, &cfg.solver.for_eps(rec.eps)) {
            Ok(es) => out.entries.extend(tagged(es, &format!("eps={}", rec.eps))),
            Err(e) => return out.fail(e),
        }
    }
    out
}

/// The full pipeline: branch with asymptotics, then the optional experiments.
pub fn run_all(cfg: &RunConfig, dir: &RunDir) -> Outcome {
    let mut out = Outcome::default();
    let recs = if cfg.checks.asymptotics {
        let (br, o) = asymptotics(cfg, dir);
        out.extend(o);
        br.map(|b| b.records).unwrap_or_default()
    } else {
        let (br, _, o) = branch(cfg, dir);
        out.extend(o);
        br.map(|b| b.records).unwrap_or_default()
    };
    if out.error.is_some() {
        return out;
    }
    if cfg.checks.halftorus {
        out.extend(halftorus(cfg, &recs));
    }
    if cfg.checks.uniqueness && out.error.is_none() {
        out.extend(uniqueness(cfg));
    }
    out
}
