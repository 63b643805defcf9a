//! Acceptance suite: one PASS/FAIL line per criterion, then a single verdict.
//!
//! Run with `cargo test -p torus-mfe --test acceptance -- --nocapture` to see
//! the lines as they are produced.

use std::f64::consts::PI;
use std::time::Instant;

use num_complex::Complex64;

use torus_mfe::ansatz::{
    ansatz_bounds, build_ansatz, check_expansions, default_r0, energy, energy_closed_form, lambda_bracket, AnsatzBounds, AnsatzConfig,
    ExpansionReport,
};
use torus_mfe::diagnostics::{
    check_branch_trends, check_local_mass, check_mass_concentration, check_mean_identity, default_delta, detect_blowup_record,
    halftorus_check, random_even_perturbations, scaling_ratio, uniqueness_experiment, CheckEntry,
};
use torus_mfe::geometry::{GridSpec, TorusLattice};
use torus_mfe::greens::oracle::{compare_with_series, sample_points};
use torus_mfe::greens::{BlowupPair, Derivative, GreensEvaluator, HalfPeriod, StarData};
use torus_mfe::solver::{
    continue_branch, kernel_projection, reduced_energy_scan, small_eigenpairs, solve_from_ansatz, EigenOptions, SolverOptions,
};

struct Line {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn report(lines: &mut Vec<Line>, id: usize, title: &'static str, pass: bool, detail: String) {
    println!("{} criterion {id:>2} {title}: {detail}", if pass { "PASS" } else { "FAIL" });
    lines.push(Line { id, title, pass, detail });
}

fn sheared() -> TorusLattice {
    TorusLattice::from_tau(Complex64::new(0.3, 0.8)).unwrap()
}

fn square_diag() -> BlowupPair {
    BlowupPair::new(TorusLattice::square(), HalfPeriod::Diag)
}

fn within_factor(ratio: f64, lo: f64, hi: f64) -> bool {
    ratio >= lo && ratio <= hi
}

fn monotone_toward_one(v: &[f64]) -> bool {
    v.windows(2).all(|w| (w[1] - 1.0).abs() < (w[0] - 1.0).abs())
}

fn c1_oracle(lines: &mut Vec<Line>) {
    let start = Instant::now();
    let mut worst = 0.0_f64;
    let mut parts = Vec::new();
    for (label, lattice) in [("square", TorusLattice::square()), ("sheared", sheared())] {
        let ev = GreensEvaluator::new(lattice);
        let pts = sample_points(&lattice, 100, 0.05, 2024);
        let cmp = compare_with_series(&ev, 512, &pts).unwrap();
        worst = worst.max(cmp.max_rel_error);
        parts.push(format!("{label} {:.2e}", cmp.max_rel_error));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 1e-6 && secs < 30.0;
    report(
        lines,
        1,
        "Green's function oracle equivalence",
        pass,
        format!("max rel error {} (< 1e-6), {secs:.1} s (< 30 s)", parts.join(", ")),
    );
}

fn c2_symmetries(lines: &mut Vec<Line>) {
    let rectangle = TorusLattice::from_tau(Complex64::new(0.0, 1.7)).unwrap();
    let (mut even, mut conj, mut grad) = (0.0_f64, 0.0_f64, 0.0_f64);
    for lattice in [TorusLattice::square(), sheared(), rectangle] {
        let ev = GreensEvaluator::new(lattice);
        for p in sample_points(&lattice, 100, 0.05, 7) {
            let z = lattice.to_complex(p);
            let g = ev.green_at(z).unwrap();
            even = even.max((g - ev.green_at(-z).unwrap()).abs());
            if lattice.is_rectangular() {
                conj = conj.max((g - ev.green_at(z.conj()).unwrap()).abs());
            }
        }
        for h in HalfPeriod::ALL {
            if let Derivative::Gradient(g) = ev.green_derivatives(h.point(), 1).unwrap() {
                grad = grad.max(g[0].hypot(g[1]));
            }
        }
    }
    let pass = even <= 1e-12 && conj <= 1e-12 && grad <= 1e-10;
    report(
        lines,
        2,
        "Green's function symmetries",
        pass,
        format!("|G(z)-G(-z)| {even:.2e}, |G(z)-G(conj z)| {conj:.2e} (<= 1e-12); |grad G| at half-periods {grad:.2e} (<= 1e-10)"),
    );
}

fn c3_identities(lines: &mut Vec<Line>) {
    let (mut l_err, mut g_err, mut min_small) = (0.0_f64, 0.0_f64, usize::MAX);
    for lattice in [TorusLattice::square(), sheared()] {
        let ev = GreensEvaluator::new(lattice);
        for h in HalfPeriod::ALL {
            let pair = BlowupPair::new(lattice, h);
            let star = StarData::compute(&ev, &pair).unwrap();
            let expected = 32.0 * PI * star.gstar_at_p[0].exp();
            l_err = l_err.max(((star.l_value - expected) / expected).abs());
            g_err = g_err.max((star.gstar_at_p[0] - star.gstar_at_p[1]).abs());
            let small = star.f2_hessian_eigenvalues().iter().filter(|e| e.abs() < 1e-6).count();
            min_small = min_small.min(small);
        }
    }
    let pass = l_err <= 1e-10 && g_err <= 1e-12 && min_small >= 2;
    report(
        lines,
        3,
        "functional identities",
        pass,
        format!("l(p) vs 32pi e^G*_1 rel {l_err:.2e} (<= 1e-10); |G*_1 - G*_2| {g_err:.2e} (<= 1e-12); min # |f2 Hessian eig| < 1e-6: {min_small} (>= 2)"),
    );
}

struct AnsatzData {
    lambda: f64,
    exp: ExpansionReport,
    bounds: AnsatzBounds,
    energy_defect: f64,
    secs: f64,
}

fn ansatz_data(lambda: f64, n: usize) -> AnsatzData {
    let start = Instant::now();
    let pair = square_diag();
    let cfg = AnsatzConfig::at_lambda(pair, lambda, GridSpec::new(n).unwrap());
    cfg.validate().unwrap();
    let a = build_ansatz(&cfg).unwrap();
    let exp = check_expansions(&a, &cfg, 10.0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let bounds = ansatz_bounds(&a, &cfg).unwrap();
    let ev = GreensEvaluator::new(pair.lattice);
    let closed = energy_closed_form(ev.r0(), ev.green_value(pair.p2()).unwrap(), cfg.eps, lambda);
    let energy_defect = energy(&a.w, cfg.rho()).unwrap() - closed;
    AnsatzData { lambda, exp, bounds, energy_defect, secs }
}

fn c4_expansions(lines: &mut Vec<Line>, a8: &AnsatzData, a10: &AnsatzData) {
    let defects: [(&str, fn(&AnsatzData) -> f64); 3] = [
        ("center", |a| a.exp.center_defect[0].abs().max(a.exp.center_defect[1].abs())),
        ("inner", |a| a.exp.inner_defect),
        ("outer", |a| a.exp.outer_defect),
    ];
    let (lo, hi) = ((-2.0_f64).exp() / 4.0, 4.0 * (-2.0_f64).exp());
    let mut pass = a8.secs < 120.0 && a10.secs < 120.0;
    let mut parts = Vec::new();
    for (name, f) in defects {
        let (d8, d10) = (f(a8), f(a10));
        let s8 = d8 / (-a8.lambda).exp();
        let s10 = d10 / (-a10.lambda).exp();
        let decay = d10 / d8;
        let ok = s8 < 5.0 && within_factor(decay, lo, hi);
        pass &= ok;
        parts.push(format!("{name} {s8:.2}e^-l at 8, {s10:.2}e^-l at 10, decay {decay:.4} [{}]", if ok { "ok" } else { "fails" }));
    }
    report(
        lines,
        4,
        "ansatz expansions",
        pass,
        format!("{} (gate < 5e^-l at l = 8, decay in [{lo:.4}, {hi:.4}]; build {:.0}/{:.0} s)", parts.join("; "), a8.secs, a10.secs),
    );
}

fn c5_residual(lines: &mut Vec<Line>, data: &[&AnsatzData]) {
    let c = data.iter().map(|a| a.bounds.outer_residual_constant).fold(0.0_f64, f64::max);
    let each: Vec<String> = data.iter().map(|a| format!("{:.1} at {}", a.bounds.outer_residual_constant, a.lambda)).collect();
    report(lines, 5, "residual bound", c <= 1e3, format!("C = {c:.1} (<= 1e3); {}", each.join(", ")));
}

fn c6_energy(lines: &mut Vec<Line>, a8: &AnsatzData, a10: &AnsatzData) {
    let (d8, d10) = (a8.energy_defect.abs(), a10.energy_defect.abs());
    let decay = d10 / d8;
    let (lo, hi) = ((-2.0_f64).exp() / 3.0, 3.0 * (-2.0_f64).exp());
    let pass = d8 <= 20.0 * (-8.0_f64).exp() && d10 <= 20.0 * (-10.0_f64).exp() && within_factor(decay, lo, hi);
    report(
        lines,
        6,
        "energy expansion",
        pass,
        format!(
            "|defect| {:.2}e^-l at 8, {:.2}e^-l at 10 (<= 20); decay {decay:.4} in [{lo:.4}, {hi:.4}]",
            d8 / (-8.0_f64).exp(),
            d10 / (-10.0_f64).exp()
        ),
    );
}

fn c7_to_c9_branch(lines: &mut Vec<Line>) {
    let pair = square_diag();
    let eps = [0.2, 0.1, 0.05];
    let start = Instant::now();
    let run = continue_branch(pair, GridSpec::new(1024).unwrap(), &eps, &SolverOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    if let Some((e, err)) = &run.failure {
        let msg = format!("branch stopped at eps = {e}: {err}");
        report(lines, 7, "existence and scaling law", false, msg.clone());
        report(lines, 8, "local mass", false, msg.clone());
        report(lines, 9, "mean identity", false, msg);
        return;
    }
    let recs = &run.branch.records;
    let diags: Vec<_> = recs.iter().map(|r| detect_blowup_record(r, default_delta(&pair)).unwrap()).collect();

    let residual = recs.iter().map(|r| r.residual_sup).fold(0.0_f64, f64::max);
    let scaling: Vec<f64> = recs.iter().zip(&diags).map(|(r, d)| scaling_ratio(r, d)).collect();
    let pass7 = recs.len() == eps.len()
        && residual < 1e-10
        && scaling.iter().all(|r| within_factor(*r, 0.65, 1.35))
        && monotone_toward_one(&scaling)
        && secs < 900.0;
    report(
        lines,
        7,
        "existence and scaling law",
        pass7,
        format!("max residual {residual:.2e} (< 1e-10); ratios {scaling:.4?} in [0.65, 1.35], monotone toward 1; {secs:.0} s (< 900 s)"),
    );

    let mut local: Vec<CheckEntry> = diags.iter().flat_map(check_local_mass).collect();
    local.extend(check_branch_trends(&run.branch, &diags).into_iter().filter(|e| e.name == "branch_local_mass_trend"));
    let conc = check_mass_concentration(diags.last().unwrap(), 0.05);
    let ratios: Vec<String> = diags.iter().map(|d| format!("{:.3}", check_local_mass(d)[0].ratio)).collect();
    let conc_ratio: Vec<String> = conc.iter().map(|e| format!("{:.4}", e.ratio)).collect();
    let pass8 = local.iter().chain(&conc).all(CheckEntry::passed);
    report(
        lines,
        8,
        "local mass",
        pass8,
        format!(
            "ratios [{}] in [0.6, 1.4], monotone toward 1; concentration/8pi at eps = 0.05 [{}] within 5%",
            ratios.join(", "),
            conc_ratio.join(", ")
        ),
    );

    let mean: Vec<CheckEntry> = diags.iter().flat_map(check_mean_identity).collect();
    let scaled: Vec<String> = mean
        .iter()
        .step_by(2)
        .zip(&diags)
        .map(|(e, d)| {
            let l = d.lambda_i[0];
            format!("{:.2}", (e.measured - e.predicted).abs() / (l * (-l).exp()))
        })
        .collect();
    report(lines, 9, "mean identity", mean.iter().all(CheckEntry::passed), format!("|defect| / (l e^-l) [{}] (<= 5)", scaled.join(", ")));
}

fn c10_uniqueness(lines: &mut Vec<Line>) {
    let lattice = TorusLattice::square();
    let spec = GridSpec::new(512).unwrap();
    let ps = random_even_perturbations(lattice, spec, 5, 0.3, 2024);
    let mut pass = true;
    let mut parts = Vec::new();
    for h in HalfPeriod::ALL {
        let out = uniqueness_experiment(BlowupPair::new(lattice, h), 0.1, spec, &ps, &SolverOptions::default()).unwrap();
        pass &= out.converged == out.attempted && out.max_pairwise <= 1e-8;
        parts.push(format!("{} {}/{} converged, max diff {:.2e}", h.name(), out.converged, out.attempted, out.max_pairwise));
    }
    report(lines, 10, "uniqueness experiment", pass, format!("{} (<= 1e-8)", parts.join("; ")));
}

fn c11_halftorus(lines: &mut Vec<Line>) {
    let lattice = TorusLattice::square();
    let spec = GridSpec::new(1024).unwrap();
    let opts = SolverOptions::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for h in HalfPeriod::ALL {
        let rec = solve_from_ansatz(BlowupPair::new(lattice, h), 0.1, spec, &opts).unwrap();
        for e in halftorus_check(&rec, &opts.for_eps(0.1)).unwrap() {
            pass &= e.passed();
            parts.push(format!("{} {:.2e}", e.name, e.measured));
        }
    }
    report(lines, 11, "half-torus identity", pass, format!("{} (translation < 1e-8, rescaled match < 1e-6)", parts.join(", ")));
}

/// `Δ_z ψ + 16π/(1+2π|z|²)² ψ` by fourth-order differences on `|z| ≤ 20`.
fn kernel_profile_residual() -> f64 {
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
    let mut worst = 0.0_f64;
    for k in 0..3 {
        for a in (-m..=m).step_by(37) {
            for b in (-m..=m).step_by(41) {
                let (z1, z2) = (a as f64 * h, b as f64 * h);
                if z1.hypot(z2) > 20.0 {
                    continue;
                }
                let f = |dx: f64, dy: f64| psi(k, z1 + dx, z2 + dy);
                let d2 = |g: &dyn Fn(f64) -> f64| (-g(2.0 * h) + 16.0 * g(h) - 30.0 * g(0.0) + 16.0 * g(-h) - g(-2.0 * h)) / (12.0 * h * h);
                let lap = d2(&|s| f(s, 0.0)) + d2(&|s| f(0.0, s));
                let r = lap + 16.0 * PI / (1.0 + 2.0 * PI * (z1 * z1 + z2 * z2)).powi(2) * f(0.0, 0.0);
                worst = worst.max(r.abs());
            }
        }
    }
    worst
}

fn c12_kernel(lines: &mut Vec<Line>) {
    let residual = kernel_profile_residual();
    let pair = square_diag();
    let lambda = 8.0;
    let spec = GridSpec::new(512).unwrap();
    let cfg = AnsatzConfig::at_lambda(pair, lambda, spec);
    let a = build_ansatz(&cfg).unwrap();
    let eig = small_eigenpairs(&a.w, cfg.rho(), 8, &EigenOptions::default()).unwrap();
    let gap = eig[6].value.abs() / eig[5].value.abs();
    let r = default_r0(&pair);
    let proj: Vec<f64> = eig[..6].iter().map(|e| kernel_projection(&e.field, &pair, lambda, r).unwrap()).collect();
    let min_proj = proj.iter().copied().fold(f64::INFINITY, f64::min);
    let pass = residual < 1e-4 && gap >= 5.0 && min_proj >= 0.95;
    let mus: Vec<String> = eig.iter().map(|e| format!("{:.3}", e.value)).collect();
    let ps: Vec<String> = proj.iter().map(|p| format!("{p:.3}")).collect();
    report(
        lines,
        12,
        "kernel structure",
        pass,
        format!(
            "profile residual {residual:.2e} (< 1e-4); mu [{}]; gap |mu7|/|mu6| {gap:.3} (>= 5); projections [{}] (>= 0.95)",
            mus.join(", "),
            ps.join(", ")
        ),
    );
}

fn c13_selection(lines: &mut Vec<Line>) {
    let eps = 0.1;
    let step = 0.1; // grid is k/10
    let (l1, l2) = lambda_bracket(eps).unwrap();
    let first = (l1 / step).floor() as i64 + 1;
    let grid: Vec<f64> = (first..).map(|k| k as f64 / 10.0).take_while(|&l| l < l2).collect();
    let scan = reduced_energy_scan(square_diag(), GridSpec::new(1024).unwrap(), eps, &grid).unwrap();
    let miss = (scan.lambda_star - scan.closed_form_star).abs();
    let pass = miss <= step && scan.lambda_star > l1 && scan.lambda_star < l2 && !scan.boundary_warning;
    report(
        lines,
        13,
        "reduced-energy selection",
        pass,
        format!(
            "scan l* {:.4}, closed form {:.4}, |diff| {miss:.4} (<= {step}); bracket ({l1:.4}, {l2:.4}); grid {:.1}..{:.1}{}",
            scan.lambda_star,
            scan.closed_form_star,
            grid[0],
            grid[grid.len() - 1],
            if scan.boundary_warning { ", maximum on the grid boundary" } else { "" }
        ),
    );
}

#[test]
fn acceptance_criteria() {
    let mut lines = Vec::new();
    c1_oracle(&mut lines);
    c2_symmetries(&mut lines);
    c3_identities(&mut lines);
    let a8 = ansatz_data(8.0, 1024);
    let a9 = ansatz_data(9.0, 1024);
    let a10 = ansatz_data(10.0, 1024);
    c4_expansions(&mut lines, &a8, &a10);
    c5_residual(&mut lines, &[&a8, &a9, &a10]);
    c6_energy(&mut lines, &a8, &a10);
    c7_to_c9_branch(&mut lines);
    c10_uniqueness(&mut lines);
    c11_halftorus(&mut lines);
    c12_kernel(&mut lines);
    c13_selection(&mut lines);

    lines.sort_by_key(|l| l.id);
    println!("\nacceptance summary");
    for l in &lines {
        println!("{} criterion {:>2} {}", if l.pass { "PASS" } else { "FAIL" }, l.id, l.title);
    }
    let failed: Vec<String> = lines.iter().filter(|l| !l.pass).map(|l| format!("{} ({}): {}", l.id, l.title, l.detail)).collect();
    assert!(failed.is_empty(), "failing criteria:\n{}", failed.join("\n"));
}
