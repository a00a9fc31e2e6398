//! The six experiments. Each fills a [`Report`] and writes its artifacts.

use anyhow::{bail, Context, Result};
use ndarray::Array1;
use sclm_core::flux::{
    check_geometry_compatibility, check_noise_assumptions, compatibility_tolerance, default_probes,
};
use sclm_core::kinetic::{
    contraction_experiment, entropy_audit, entropy_defect, estimate_kinetic_measure,
    QuadraticEntropy, TestBank, XiGrid,
};
use sclm_core::solver::{energy_report, run_ensemble, run_path, MIN_ENERGY_PATHS};
use sclm_core::stats::{log_log_slope, pairwise_sum, rms};
use sclm_core::stochastic::{
    product_rule_residual, sample_wiener, verify_ito_isometry, TimeGrid, MIN_ISOMETRY_PATHS,
};

use crate::config::{validate_ladder, RunConfig};
use crate::output::{fmt, OutputDir, Report};
use crate::setup::{self, Setup};

/// Upper bound on negative kinetic-measure mass as a fraction of the total.
pub const KINETIC_NEGATIVE_FRACTION: f64 = 0.05;
/// Accepted range of the product-rule residual exponent.
pub const PRODUCT_RULE_EXPONENT: (f64, f64) = (0.4, 0.6);
/// Per-path monitor files are written for at most this many paths.
const MAX_MONITOR_FILES: usize = 64;

fn paths(cfg: &RunConfig, default: usize) -> usize {
    cfg.experiment.paths.unwrap_or(default)
}

fn terminal_nodal(s: &Setup, path: &sclm_core::solver::SolutionPath) -> Array1<f64> {
    path.nodal(&s.problem.basis, path.coefficients.len() - 1)
}

pub fn simulate(cfg: &RunConfig, out: &mut OutputDir, report: &mut Report) -> Result<()> {
    let s = setup::build(cfg)?;
    let n = paths(cfg, 1);
    let ens = run_ensemble(&s.problem, &s.solver, &s.u0, n)?;
    for (id, p) in ens.iter().enumerate().take(MAX_MONITOR_FILES) {
        out.monitors(&format!("monitors/path_{id:04}.csv"), &p.monitors)?;
    }
    let first = &ens[0];
    let u0 = first.nodal(&s.problem.basis, 0);
    let u_t = terminal_nodal(&s, first);
    let t_end = *first.times.last().expect("times");
    out.fields("fields.csv", &[0.0, t_end], &[u0, u_t])?;
    out.coefficients("coefficients.csv", &first.times, &first.coefficients)?;

    let terminal: Vec<f64> = ens
        .iter()
        .map(|p| p.monitors.last().expect("monitors").l2)
        .collect();
    let mass0 = first.monitors[0].mass;
    let mass_drift = first
        .monitors
        .iter()
        .map(|m| (m.mass - mass0).abs())
        .fold(0.0, f64::max);
    let warnings: usize = ens.iter().map(|p| p.warnings.len()).sum();
    report.metric("paths", n);
    report.metric("steps", s.solver.grid.steps());
    report.metric("modes", s.problem.basis.len());
    report.metric("terminal_l2_path0", terminal[0]);
    report.metric("terminal_l2_mean", pairwise_sum(&terminal) / n as f64);
    report.metric("mass_drift_path0", mass_drift);
    report.metric("warnings", warnings);
    report.check("no_guard_warnings", warnings == 0);
    if s.problem.noise.is_zero() {
        report.check("mass_conserved", mass_drift <= 1e-8);
        if s.problem.flux.is_zero() {
            let monotone = ens
                .iter()
                .all(|p| p.monitors.windows(2).all(|w| w[1].l2 <= w[0].l2));
            report.check("l2_nonincreasing", monotone);
        }
    }
    if n >= MIN_ENERGY_PATHS {
        let e = energy_report(&ens)?;
        report.metric("energy_terminal_sq", e.terminal_energy_sq);
        report.metric("energy_dissipation", e.dissipation);
    }
    Ok(())
}

pub fn check_flux(cfg: &RunConfig, out: &mut OutputDir, report: &mut Report) -> Result<()> {
    let s = setup::build(cfg)?;
    let m = &s.problem.manifold;
    let radius = cfg.experiment.probe_radius.unwrap_or(cfg.solver.radius);
    let tol = compatibility_tolerance(m);
    let compat =
        check_geometry_compatibility(m, s.problem.flux.as_ref(), &default_probes(radius), tol)?;
    let noise =
        check_noise_assumptions(m, s.problem.noise.as_ref(), s.problem.flux.as_ref(), radius)?;
    report.metric("max_residual", compat.max_residual);
    report.metric("tolerance", compat.tolerance);
    report.metric("probes", compat.probes);
    report.metric("noise", &noise);
    report.check("geometry_compatible", compat.pass);
    report.check("noise_support", noise.support_ok);
    if let Some(note) = &noise.note {
        log::warn!("{note}");
    }
    out.json(
        "flux_report.json",
        &serde_json::json!({ "compatibility": compat, "noise": noise }),
    )?;
    Ok(())
}

pub fn viscosity_sweep(cfg: &RunConfig, out: &mut OutputDir, report: &mut Report) -> Result<()> {
    let ladder = cfg
        .experiment
        .ladder
        .clone()
        .context("viscosity-sweep needs experiment.ladder")?;
    validate_ladder(&ladder)?;
    let n = paths(cfg, 1);
    let mut terminals: Vec<Vec<Array1<f64>>> = Vec::new();
    let mut defects = Vec::new();
    let mut warnings = 0;
    let mut base = None;
    for &eps in &ladder {
        let mut c = cfg.clone();
        c.solver.epsilon = eps;
        let s = setup::build(&c)?;
        let ens = run_ensemble(&s.problem, &s.solver, &s.u0, n)
            .with_context(|| format!("rung epsilon = {eps}"))?;
        warnings += ens.iter().map(|p| p.warnings.len()).sum::<usize>();
        let totals: Vec<f64> = ens
            .iter()
            .map(|p| entropy_defect(&s.problem, p, &QuadraticEntropy).map(|d| d.total()))
            .collect::<sclm_core::Result<_>>()?;
        defects.push(pairwise_sum(&totals) / n as f64);
        terminals.push(ens.iter().map(|p| terminal_nodal(&s, p)).collect());
        base.get_or_insert(s);
    }
    let m = &base.expect("non-empty ladder").problem.manifold;
    let distances: Vec<f64> = terminals
        .windows(2)
        .map(|w| {
            let d: Vec<f64> = w[0]
                .iter()
                .zip(&w[1])
                .map(|(a, b)| m.l1_norm((a - b).as_slice().expect("contiguous")))
                .collect();
            pairwise_sum(&d) / n as f64
        })
        .collect();
    let rows: Vec<Vec<String>> = ladder
        .iter()
        .enumerate()
        .map(|(i, &eps)| {
            let d = distances.get(i).map(|&v| fmt(v)).unwrap_or_default();
            vec![fmt(eps), d, fmt(defects[i])]
        })
        .collect();
    out.csv(
        "sweep.csv",
        &["epsilon", "l1_to_next", "defect_total"],
        &rows,
    )?;
    report.metric("ladder", &ladder);
    report.metric("pairwise_l1", &distances);
    report.metric("defect_totals", &defects);
    report.metric("warnings", warnings);
    report.check(
        "distances_decreasing",
        distances.windows(2).all(|w| w[1] < w[0]),
    );
    report.check("no_guard_warnings", warnings == 0);
    Ok(())
}

pub fn contraction(cfg: &RunConfig, out: &mut OutputDir, report: &mut Report) -> Result<()> {
    let s = setup::build(cfg)?;
    let m = &s.problem.manifold;
    let a = cfg.experiment.perturbation;
    let bump = m.sample(|x| {
        let along = if m.is_periodic() { x[0] } else { x[1] };
        (2.0 * along).cos()
    });
    let u2: Vec<f64> = s.u0.iter().zip(&bump).map(|(u, b)| u + a * b).collect();
    let xi = XiGrid::new(cfg.solver.radius, cfg.experiment.xi_cells)?;
    let n = paths(cfg, 64);
    let r = contraction_experiment(
        &s.problem,
        &s.solver,
        &s.solver,
        &s.u0,
        &u2,
        n,
        xi,
        cfg.experiment.stability_constant,
    )?;
    let first = run_path(&s.problem, &s.solver, &s.u0)?;
    let defect = entropy_defect(&s.problem, &first, &QuadraticEntropy)?;
    let rows: Vec<Vec<String>> = r
        .times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let dmin = if k == 0 {
                0.0
            } else {
                defect.running_min[k - 1]
            };
            vec![fmt(t), fmt(r.mean_distance[k]), fmt(dmin)]
        })
        .collect();
    out.csv("kinetic.csv", &["t", "D", "defect_min"], &rows)?;
    report.metric("paths", n);
    report.metric("ratio", r.ratio);
    report.metric("max_ratio", r.max_ratio);
    report.metric("lhs_terminal", r.lhs_terminal);
    report.metric("rhs_initial", r.rhs_initial);
    report.metric("layer_cake_error", r.layer_cake_error);
    report.metric("layer_cake_tolerance", r.layer_cake_tolerance);
    report.metric("identical_data", r.identical_data);
    report.check("contraction", r.pass);
    Ok(())
}

pub fn isometry(cfg: &RunConfig, out: &mut OutputDir, report: &mut Report) -> Result<()> {
    let n = paths(cfg, 10_000);
    if n < MIN_ISOMETRY_PATHS {
        bail!("isometry needs at least {MIN_ISOMETRY_PATHS} paths, got {n}");
    }
    let steps = cfg.experiment.isometry_steps;
    let grid = TimeGrid::new(cfg.solver.t_final, steps)?;
    let seed = cfg.seed;
    let constant = verify_ito_isometry(|_| vec![1.0; steps], n, grid, seed)?;
    let wiener = verify_ito_isometry(|w| w.cumulative[..steps].to_vec(), n, grid, seed)?;
    let zero = verify_ito_isometry(|_| vec![0.0; steps], n, grid, seed)?;
    let mut rows = Vec::new();
    for (name, r) in [
        ("constant", &constant),
        ("wiener", &wiener),
        ("zero", &zero),
    ] {
        report.metric(&format!("isometry_{name}"), r);
        report.check(&format!("isometry_{name}"), r.pass);
        rows.push(vec![
            name.to_string(),
            fmt(r.lhs.mean),
            fmt(r.rhs.mean),
            fmt(r.lhs.stderr),
        ]);
    }
    out.csv(
        "isometry.csv",
        &["generator", "lhs", "rhs", "lhs_stderr"],
        &rows,
    )?;

    // X = Y = W: the residual is Σ ΔW² − T with RMS √(2T dt)
    let rule_paths = n.min(1000);
    let dts: Vec<f64> = (6..=10).map(|k| 2f64.powi(-k)).collect();
    let mut rmss = Vec::new();
    for &dt in &dts {
        let g = TimeGrid::from_dt(1.0, dt)?;
        let ones = vec![1.0; g.steps()];
        let res: Vec<f64> = (0..rule_paths as u64)
            .map(|id| {
                let w = sample_wiener(seed, id, g);
                product_rule_residual(&w.cumulative, &w.cumulative, &ones, &ones, g)
            })
            .collect::<sclm_core::Result<_>>()?;
        rmss.push(rms(&res));
    }
    let slope = log_log_slope(&dts, &rmss);
    report.metric("product_rule_rms", &rmss);
    report.metric("product_rule_exponent", slope);
    report.check(
        "product_rule_exponent",
        (PRODUCT_RULE_EXPONENT.0..=PRODUCT_RULE_EXPONENT.1).contains(&slope),
    );
    Ok(())
}

fn block_steps(cfg: &RunConfig, steps: usize) -> Result<usize> {
    match cfg.experiment.kinetic_block_steps {
        Some(b) if b > 0 && steps % b == 0 => Ok(b),
        Some(b) => bail!("experiment.kinetic_block_steps = {b} does not divide {steps} steps"),
        None => {
            let mut b = (steps / 10).max(1);
            while steps % b != 0 {
                b -= 1;
            }
            Ok(b)
        }
    }
}

pub fn entropy_audit_run(cfg: &RunConfig, out: &mut OutputDir, report: &mut Report) -> Result<()> {
    let base = setup::manifold(cfg)?;
    if setup::initial_profile(cfg, &base).is_none() {
        bail!("entropy-audit refines the grid and needs closed-form initial data, not a file");
    }
    let levels = (0..cfg.experiment.audit_levels as u32)
        .map(|l| {
            let s = setup::build(&setup::refined(cfg, l))?;
            Ok((s.problem, s.solver))
        })
        .collect::<Result<Vec<_>>>()?;
    let profile = setup::initial_profile(cfg, &base).expect("checked above");
    let audit = entropy_audit(&levels, profile, &QuadraticEntropy, paths(cfg, 8))?;
    let rows: Vec<Vec<String>> = (0..audit.dts.len())
        .map(|i| {
            vec![
                i.to_string(),
                fmt(audit.dts[i]),
                fmt(audit.spacings[i]),
                fmt(audit.negative_parts[i]),
                fmt(audit.totals[i]),
            ]
        })
        .collect();
    out.csv(
        "entropy_audit.csv",
        &["level", "dt", "h", "negative_part", "defect_total"],
        &rows,
    )?;
    report.metric("audit", &audit);
    report.check("entropy_audit", audit.pass);

    let s = setup::build(cfg)?;
    let path = run_path(&s.problem, &s.solver, &s.u0)?;
    let p = cfg.experiment.kinetic_patches;
    let bank = TestBank {
        patches: [p, if s.problem.manifold.dim() == 2 { p } else { 1 }],
        block_steps: block_steps(cfg, s.solver.grid.steps())?,
        xi: XiGrid::new(cfg.solver.radius, cfg.experiment.kinetic_cells)?,
    };
    let k = estimate_kinetic_measure(&s.problem, &path, &bank)?;
    out.json("kinetic_measure.json", &k)?;
    report.metric("kinetic_negative_fraction", k.negative_fraction);
    report.metric("kinetic_relative_mass", k.relative_mass);
    report.metric("kinetic_total_mass", k.total_mass);
    report.metric("kinetic_condition_number", k.condition_number);
    report.check(
        "kinetic_measure_nonnegative",
        k.negative_fraction <= KINETIC_NEGATIVE_FRACTION,
    );
    Ok(())
}
