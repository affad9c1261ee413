//! The subcommands. Each writes its CSVs into an [`Output`] and returns
//! whether its checks passed; numerical breakdowns surface as errors.

use levy_parametrix::density::{check_envelope, DensityTable, EnvelopeParams};
use levy_parametrix::field::{validate_a0, validation_lattice};
use levy_parametrix::levy::{check_assumptions, check_equivalence_h_psi, log_grid, verify_model_scaling};
use levy_parametrix::montecarlo::{compare, estimate_many};
use levy_parametrix::parametrix::{
    p_rows, picard_step, q0_rows, sum_q, u_rows_with_hat, AssemblyConfig, CellOperators, KernelSetup, TimeMesh, TimeSlice,
};
use levy_parametrix::semigroup::{holder_estimate, smoothing_estimate, PowerFit, Semigroup, TestFunction};
use levy_parametrix::truncation::{lambda_zero, validate_taper};

use crate::error::Result;
use crate::experiment::Experiment;
use crate::output::{num, Output};

/// Local averages of u above this are flagged: the lattice cannot tell a
/// density singularity from a large finite value.
pub const LARGE_DENSITY: f64 = 1e6;

/// Relative slack allowed on fitted exponents.
pub const SLOPE_SLACK: f64 = 0.15;

fn check_row(rows: &mut Vec<Vec<String>>, check: &str, subject: &str, value: f64, threshold: f64, pass: bool) -> bool {
    rows.push(vec![check.into(), "check".into(), subject.into(), num(value), num(threshold), pass.to_string()]);
    pass
}

/// A reported quantity that does not decide the verdict.
fn diagnostic_row(rows: &mut Vec<Vec<String>>, check: &str, subject: &str, value: f64, threshold: f64, pass: bool) {
    rows.push(vec![check.into(), "diagnostic".into(), subject.into(), num(value), num(threshold), pass.to_string()]);
}

/// Model, truncation, density and field checks; `validation.csv`.
pub fn validate(exp: &Experiment, out: &mut Output) -> Result<bool> {
    let cfg = &exp.config;
    let mut rows = Vec::new();
    let mut ok = true;
    out.stage("validate: models");
    ok &= check_row(&mut rows, "mode", if exp.mode == levy_parametrix::parametrix::AssumptionMode::Z1 { "z1" } else { "z2" }, exp.alpha, exp.beta, true);
    ok &= check_row(&mut rows, "delta", "all", exp.delta, cfg.truncation.delta0, exp.delta <= cfg.truncation.delta0);
    let lambdas = log_grid(1.0, 1e3, 25);
    let thetas = log_grid(1e-3, 1e3, 31);
    let radii = log_grid(1e-3, 1e2, 64);
    for (i, (m, tm)) in exp.models.iter().zip(&exp.truncated).enumerate() {
        let subject = format!("coord{i}");
        let s = verify_model_scaling(m, &lambdas, &thetas)?;
        ok &= check_row(&mut rows, "scaling_lower", &subject, s.c_lower_candidate, m.c_lower, !s.lower_violated);
        ok &= check_row(&mut rows, "scaling_upper", &subject, s.c_upper_candidate, m.c_upper, !s.upper_violated);
        let eq = check_equivalence_h_psi(m, &radii)?;
        ok &= check_row(&mut rows, "h_psi_equivalence", &subject, if eq { 1.0 } else { 0.0 }, 1.0, eq);
        let a = check_assumptions(m, m.eta4)?;
        ok &= check_row(&mut rows, "levy_density_assumptions", &subject, a.grid_points as f64, a.grid_hi, a.passed());
        let t = validate_taper(tm);
        ok &= check_row(&mut rows, "taper", &subject, t.c1_mismatch, t.monotone_margin, t.passed());
    }
    out.stage("validate: densities");
    let grid = exp.grid()?;
    for (i, tm) in exp.truncated.iter().enumerate() {
        let subject = format!("coord{i}");
        let table = DensityTable::compute(tm, &cfg.density.times, grid.half_width, grid.n)?;
        for (k, t) in table.times.iter().enumerate() {
            let mass = (table.mass(k) - 1.0).abs();
            ok &= check_row(&mut rows, &format!("density_mass_t={t}"), &subject, mass, 1e-6, mass <= 1e-6);
            let even = table.evenness_defect(k);
            ok &= check_row(&mut rows, &format!("density_evenness_t={t}"), &subject, even, 1e-10, even <= 1e-10);
        }
        let env = EnvelopeParams::new(&tm.base, cfg.truncation.epsilon, 1.0, exp.models.len(), exp.alpha, exp.beta)?;
        let e = check_envelope(&table, &env)?;
        // The envelope constant depends on the horizon, and the truncated law
        // turns Gaussian once t exceeds the truncation scale, so growth of the
        // ratios across times is expected; only finiteness is required.
        let max_ratio = e.ratios.iter().flatten().cloned().fold(0.0, f64::max);
        ok &= check_row(&mut rows, "envelope_ratio_finite", &subject, max_ratio, f64::INFINITY, e.finite);
        let spread = e.spread.iter().cloned().fold(0.0, f64::max);
        diagnostic_row(&mut rows, "envelope_ratio_spread", &subject, spread, 3.0, e.stable);
    }
    out.stage("validate: field");
    let a0 = validate_a0(&exp.field, &validation_lattice(exp.models.len(), cfg.mesh.half_width, 41))?;
    ok &= check_row(&mut rows, "field_bounded", "A", a0.max_entry, exp.field.eta1, a0.bounded);
    ok &= check_row(&mut rows, "field_determinant", "A", a0.min_det, exp.field.eta2, a0.determinant);
    ok &= check_row(&mut rows, "field_lipschitz", "A", a0.max_lipschitz, exp.field.eta3, a0.lipschitz);
    let l0 = lambda_zero(&exp.truncated);
    ok &= check_row(&mut rows, "long_jump_rate", "all", l0, f64::INFINITY, l0.is_finite() && l0 > 0.0);
    out.write_csv("validation.csv", &["check", "kind", "subject", "value", "threshold", "pass"], &rows)?;
    Ok(ok)
}

/// Truncated 1-D densities: `density_coord{i}.csv` and `density_summary.csv`.
pub fn density(exp: &Experiment, out: &mut Output) -> Result<bool> {
    let cfg = &exp.config.density;
    let grid = exp.grid()?;
    let mut summary = Vec::new();
    let mut ok = true;
    for (i, tm) in exp.truncated.iter().enumerate() {
        out.stage(&format!("density: coordinate {i}"));
        let table = DensityTable::compute(tm, &cfg.times, grid.half_width, grid.n)?;
        let mut rows = Vec::new();
        for (k, t) in table.times.iter().enumerate() {
            let mass = (table.mass(k) - 1.0).abs();
            let even = table.evenness_defect(k);
            ok &= mass <= 1e-6 && even <= 1e-10;
            summary.push(vec![i.to_string(), num(*t), num(mass), num(even), num(table.min_raw[k]), num(table.tail_rate[k])]);
            for r in table.csv_rows(k).step_by(cfg.stride).filter(|r| r[0].abs() <= cfg.x_max) {
                rows.push(vec![num(*t), num(r[0]), num(r[1]), num(r[2]), num(r[3]), num(mass)]);
            }
        }
        out.write_csv(&format!("density_coord{i}.csv"), &["t", "x", "g", "g_x", "g_xx", "mass_defect"], &rows)?;
    }
    out.write_csv(
        "density_summary.csv",
        &["coord", "t", "mass_defect", "evenness_defect", "min_raw", "tail_rate"],
        &summary,
    )?;
    Ok(ok)
}

fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Duhamel kernel u, frozen kernel p and the Picard terms qₙ at the probes:
/// `kernel.csv` and `picard.csv`.
pub fn kernel(exp: &Experiment, out: &mut Output) -> Result<bool> {
    let kc = &exp.config.kernel;
    let setup = exp.setup()?;
    let lat = exp.lattice()?;
    let cfg = AssemblyConfig { hat_moments: true, ..exp.assembly() };
    let mesh = TimeMesh::new(kc.dt, kc.cells)?;
    out.stage("kernel: cell operators");
    let ops = CellOperators::assemble(&setup, &lat, mesh, &cfg)?;
    let scale_pow = (setup.dim() as f64 + setup.beta) / setup.alpha;
    let mut krows = Vec::new();
    let mut prows = Vec::new();
    let mut ok = true;
    for x in &kc.probes {
        out.stage(&format!("kernel: probe {x:?}"));
        let (u, hat) = u_rows_with_hat(&setup, &lat, &ops, *x, &cfg)?;
        let p = p_rows(&setup, &lat, &mesh, *x, &cfg)?;
        let q0 = q0_rows(&setup, &lat, &mesh, *x, &cfg)?;
        for &t in &kc.times {
            let k = mesh.index(t)?;
            let slice = TimeSlice::new(&setup, t, &lat, cfg.order_q, &cfg)?;
            let diff: Vec<f64> = u.rows[k].iter().zip(&p.rows[k]).map(|(a, b)| a - b).collect();
            let local = hat.nodal_density(&lat, k);
            let u_min = local.iter().cloned().fold(f64::INFINITY, f64::min);
            let u_max = local.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let q = sum_q(&ops, &q0, k, exp.config.tolerances.rtol)?;
            let mass = u.mass(k);
            // Positivity of the local averages needs the spacing below the
            // kernel width; it is reported, not enforced.
            ok &= (mass - 1.0).abs() <= 1e-3;
            krows.push(vec![
                num(x[0]),
                num(x[1]),
                num(t),
                num(p.mass(k)),
                num(mass),
                num(u_min),
                num(u_max),
                (u_max > LARGE_DENSITY).to_string(),
                num(sup_abs(&diff) / sup_abs(&p.rows[k])),
                num(slice.q0_l1(&setup.field, *x, cfg.prune)),
                num(slice.q0_max(&setup.field, *x, cfg.prune) * t.powf(scale_pow)),
                q.n_terms.to_string(),
            ]);
        }
        let mut term = q0.clone();
        let mut norms: Vec<f64> = (0..=mesh.cells).map(|k| term.l1(k)).collect();
        for n in 0..kc.picard_terms {
            if n > 0 {
                term = picard_step(&ops, &term, n)?;
            }
            for k in 1..=mesh.cells {
                let l1 = term.l1(k);
                let ratio = if n == 0 { f64::NAN } else { l1 / norms[k] };
                prows.push(vec![num(x[0]), num(x[1]), n.to_string(), num(mesh.time(k)), num(l1), num(ratio)]);
                norms[k] = l1;
            }
        }
    }
    out.write_csv(
        "kernel.csv",
        &["x1", "x2", "t", "p_mass", "u_mass", "u_min", "u_max", "u_large", "u_minus_p_rel", "q0_l1", "q0_max_scaled", "q_terms"],
        &krows,
    )?;
    out.write_csv("picard.csv", &["x1", "x2", "n", "t", "l1", "ratio"], &prows)?;
    Ok(ok)
}

/// Tₜf at arbitrary points for each requested time: `values[i][p]` for
/// times[i] and points[p]. Times must be multiples of the step.
pub fn probe_values(
    sg: &Semigroup,
    setup: &KernelSetup,
    f: &TestFunction,
    times: &[f64],
    points: &[[f64; 2]],
    cfg: &AssemblyConfig,
) -> Result<Vec<Vec<f64>>> {
    let mut values = probe_nodal(sg, setup, &f.sample(&sg.lattice()), times, points, cfg)?;
    for (t, v) in times.iter().zip(values.iter_mut()) {
        if sg.steps_for(*t)? == 0 {
            *v = points.iter().map(|x| f.eval(x)).collect();
        }
    }
    Ok(values)
}

/// As [`probe_values`] for nodal data; t = 0 returns the interpolant.
pub fn probe_nodal(
    sg: &Semigroup,
    setup: &KernelSetup,
    f: &[f64],
    times: &[f64],
    points: &[[f64; 2]],
    cfg: &AssemblyConfig,
) -> Result<Vec<Vec<f64>>> {
    let lat = sg.lattice();
    let steps: Vec<usize> = times.iter().map(|t| sg.steps_for(*t)).collect::<levy_parametrix::error::Result<_>>()?;
    let rows: Vec<Vec<f64>> = points.iter().map(|x| sg.point_row(setup, *x, cfg)).collect::<levy_parametrix::error::Result<_>>()?;
    let last = steps.iter().copied().max().unwrap_or(0);
    let mut values: Vec<Vec<f64>> = steps
        .iter()
        .map(|_| points.iter().map(|x| lat.interpolate(f, *x)).collect())
        .collect();
    sg.evolve(f, last.saturating_sub(1), |k, v| {
        for (i, s) in steps.iter().enumerate() {
            if *s == k + 1 {
                values[i] = rows.iter().map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum()).collect();
            }
        }
        Ok(())
    })?;
    Ok(values)
}

/// Tₜf at the probes for each test function, conservation Tₜ1 and the
/// interlacing-series term norms: `semigroup.csv`, `semigroup_checks.csv`
/// and `psi_terms.csv`.
pub fn semigroup(exp: &Experiment, out: &mut Output) -> Result<bool> {
    let sc = &exp.config.semigroup;
    let setup = exp.setup()?;
    let cfg = exp.assembly();
    out.stage("semigroup: assembly");
    let sg = exp.semigroup(&setup)?;
    let mut rows = Vec::new();
    for f in &sc.functions {
        out.stage(&format!("semigroup: {}", f.name()));
        let v = probe_values(&sg, &setup, f, &sc.times, &sc.probes, &cfg)?;
        for (t, vals) in sc.times.iter().zip(&v) {
            for (x, val) in sc.probes.iter().zip(vals) {
                rows.push(vec![f.name().to_string(), num(*t), num(x[0]), num(x[1]), num(*val)]);
            }
        }
    }
    out.write_csv("semigroup.csv", &["function", "t", "x1", "x2", "value"], &rows)?;
    out.stage("semigroup: conservation");
    let cons = probe_nodal(&sg, &setup, &vec![1.0; sg.lattice().len()], &sc.times, &sc.probes, &cfg)?;
    let mut checks = Vec::new();
    let mut ok = true;
    for (t, vals) in sc.times.iter().zip(&cons) {
        let dev = vals.iter().fold(0.0f64, |m, v| m.max((v - 1.0).abs()));
        ok &= dev <= 1e-3;
        checks.push(vec![num(*t), "conservation".into(), num(dev), num(1e-3), (dev <= 1e-3).to_string()]);
    }
    out.write_csv("semigroup_checks.csv", &["t", "check", "value", "threshold", "pass"], &checks)?;
    if let Some(f) = sc.functions.first() {
        out.stage("semigroup: series terms");
        let t = *sc.times.last().unwrap_or(&exp.config.mesh.dt);
        let tol = &exp.config.tolerances;
        let res = sg.psi_series(&f.sample(&sg.lattice()), sg.steps_for(t)?, tol.series_rtol, tol.series_cap)?;
        let lt = res.lambda0 * t;
        let mut weight = (-lt).exp();
        let terms: Vec<Vec<String>> = res
            .term_norms
            .iter()
            .enumerate()
            .map(|(n, s)| {
                if n > 0 {
                    weight *= lt / n as f64;
                }
                vec![n.to_string(), num(t), num(*s), num(weight * s)]
            })
            .collect();
        out.write_csv("psi_terms.csv", &["n", "t", "sup_norm", "weighted_sup_norm"], &terms)?;
    }
    Ok(ok)
}

/// Parametrix Tₜf against Euler Monte Carlo at the probes: `mc_compare.csv`.
pub fn mc_compare(exp: &Experiment, out: &mut Output) -> Result<bool> {
    let sc = &exp.config.semigroup;
    let mc = &exp.config.mc;
    let sim = exp.sim_config()?;
    let setup = exp.setup()?;
    let cfg = exp.assembly();
    out.stage("mc-compare: assembly");
    let sg = exp.semigroup(&setup)?;
    let mut tvals = Vec::new();
    for f in &sc.functions {
        out.stage(&format!("mc-compare: parametrix {}", f.name()));
        tvals.push(probe_values(&sg, &setup, f, &[mc.time], &sc.probes, &cfg)?.remove(0));
    }
    let closures: Vec<Box<dyn Fn(&[f64]) -> f64 + Sync>> = sc
        .functions
        .iter()
        .map(|f| {
            let f = f.clone();
            Box::new(move |x: &[f64]| f.eval(x)) as Box<dyn Fn(&[f64]) -> f64 + Sync>
        })
        .collect();
    let fs: Vec<&(dyn Fn(&[f64]) -> f64 + Sync)> = closures.iter().map(|b| b.as_ref()).collect();
    let mut rows = Vec::new();
    let mut ok = true;
    for (p, x) in sc.probes.iter().enumerate() {
        out.stage(&format!("mc-compare: paths from {x:?}"));
        let est = estimate_many(&exp.field, &exp.models, x, &fs, mc.time, &sim)?;
        for ((f, e), tv) in sc.functions.iter().zip(&est).zip(&tvals) {
            let r = compare(tv[p], e, mc.model_tol * f.sup_norm());
            ok &= r.pass;
            rows.push(vec![
                f.name().to_string(),
                num(x[0]),
                num(x[1]),
                num(mc.time),
                num(tv[p]),
                num(e.mean),
                num(e.stderr),
                num(r.diff),
                num(r.z),
                r.pass.to_string(),
            ]);
        }
    }
    out.write_csv(
        "mc_compare.csv",
        &["function", "x1", "x2", "t", "parametrix", "mc_mean", "mc_stderr", "diff", "z", "pass"],
        &rows,
    )?;
    Ok(ok)
}

/// Point pairs centred on `center` along `direction` with the given separations.
pub fn holder_pairs(center: [f64; 2], direction: [f64; 2], separations: &[f64], scale: f64) -> Vec<([f64; 2], [f64; 2])> {
    separations
        .iter()
        .map(|s| {
            let h = 0.5 * s * scale;
            (
                [center[0] - h * direction[0], center[1] - h * direction[1]],
                [center[0] + h * direction[0], center[1] + h * direction[1]],
            )
        })
        .collect()
}

/// Hölder quotients and smoothing decay: `holder.csv` and `fits.csv`.
pub fn holder_scan(exp: &Experiment, out: &mut Output) -> Result<bool> {
    let hc = &exp.config.holder;
    let setup = exp.setup()?;
    let cfg = exp.assembly();
    out.stage("holder-scan: assembly");
    let sg = exp.semigroup(&setup)?;
    out.stage("holder-scan: quotients");
    let full = holder_estimate(&sg, &setup, &hc.function, &hc.times, &holder_pairs(hc.center, hc.direction, &hc.separations, 1.0), hc.gamma, &cfg)?;
    let half = holder_estimate(&sg, &setup, &hc.function, &hc.times, &holder_pairs(hc.center, hc.direction, &hc.separations, 0.5), hc.gamma, &cfg)?;
    out.stage("holder-scan: smoothing");
    let bump = TestFunction::unit_mass_bump([0.0, 0.0], hc.smoothing_width);
    let smooth = smoothing_estimate(&sg, &setup, &bump, &hc.smoothing_times, &hc.smoothing_probes, hc.smoothing_gamma, &cfg)?;
    let mut rows = Vec::new();
    for (name, fit) in [("holder", &full), ("holder_halved", &half), ("smoothing", &smooth)] {
        for (t, v) in fit.times.iter().zip(&fit.values) {
            rows.push(vec![name.to_string(), num(*t), num(*v)]);
        }
    }
    out.write_csv("holder.csv", &["estimate", "t", "value"], &rows)?;
    let halving = halving_ratio(&full, &half);
    let holder_ok = full.relative_error() <= SLOPE_SLACK;
    let halving_ok = halving <= 2.0;
    let smooth_ok = smooth.slope <= smooth.target * (1.0 - SLOPE_SLACK);
    let fit_row = |name: &str, f: &PowerFit, pass: bool| {
        vec![name.to_string(), num(f.slope), num(f.target), num(f.relative_error()), pass.to_string()]
    };
    let fits = vec![
        fit_row("holder", &full, holder_ok),
        vec!["holder_halving".into(), num(halving), num(2.0), num(f64::NAN), halving_ok.to_string()],
        fit_row("smoothing", &smooth, smooth_ok),
    ];
    out.write_csv("fits.csv", &["estimate", "slope", "target", "relative_error", "pass"], &fits)?;
    Ok(holder_ok && halving_ok && smooth_ok)
}

/// Largest factor between the quotients of two scans at equal times.
pub fn halving_ratio(a: &PowerFit, b: &PowerFit) -> f64 {
    a.values.iter().zip(&b.values).map(|(x, y)| (x / y).max(y / x)).fold(1.0, f64::max)
}
