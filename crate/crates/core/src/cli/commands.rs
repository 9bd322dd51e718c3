use std::time::Instant;

use nalgebra::Vector3;
use serde_json::json;

use crate::analysis::{
    angular_momentum_series, convergence_study, energy_series, fitted_order, micro_refinement_study,
    reference_trajectory, stability_report, ConvergenceTable,
};
use crate::model::{validate_system, MultirateSystem, State, TimeGrid, Trajectory};
use crate::solver::{certify, integrate, SolverConfig};
use crate::systems::{build_fpu, build_spring_ring, probe_states};

use super::config::{RunOptions, SystemKind};
use super::output::{header, indexed, num, OutputDir};
use super::CliError;

const DEFAULT_SWEEP: [f64; 5] = [0.05, 0.025, 0.0125, 0.00625, 0.003125];
const DEFAULT_BENCH_RATIOS: [usize; 5] = [1, 5, 10, 50, 100];

fn build_system(opts: &RunOptions) -> Result<(MultirateSystem, State), CliError> {
    match opts.system() {
        SystemKind::Fpu => build_fpu(&opts.fpu.clone().unwrap_or_default()),
        SystemKind::SpringRing => build_spring_ring(&opts.spring_ring.clone().unwrap_or_default()),
    }
    .map_err(CliError::from_library)
}

fn solver_config(opts: &RunOptions) -> Result<SolverConfig, CliError> {
    let c = SolverConfig {
        newton_tol: opts.tol.unwrap_or(1e-9),
        linear_solver: opts.linear_solver(),
        ..SolverConfig::default()
    };
    c.validate().map_err(CliError::from_library)?;
    Ok(c)
}

fn describe(opts: &RunOptions, sys: &MultirateSystem) -> Result<serde_json::Value, CliError> {
    Ok(json!({
        "options": opts,
        "system": opts.system(),
        "n_slow": sys.n_slow(),
        "n_fast": sys.n_fast(),
        "quadrature": opts.quadrature()?,
        "mode": opts.mode(),
        "solver": solver_config(opts)?,
    }))
}

fn write_trajectory(out: &mut OutputDir, traj: &Trajectory) -> Result<(), CliError> {
    let (ns, nf) = (traj.slow_q.dim(), traj.fast_q.dim());
    let cols: Vec<String> = ["t", "k", "m"]
        .into_iter()
        .map(String::from)
        .chain(indexed("q_slow", ns))
        .chain(indexed("q_fast", nf))
        .chain(indexed("p_slow", ns))
        .chain(indexed("p_fast", nf))
        .collect();
    let grid = traj.grid;
    let p = grid.micro_per_macro();
    let rows = (0..traj.fast_q.len()).map(|j| {
        let (k, m) = (j / p, j % p);
        let theta = m as f64 / p as f64;
        let mut row = vec![num(grid.fast_node_time(j)), k.to_string(), m.to_string()];
        // slow positions are linear between macro nodes, slow momenta only exist on them
        let a = traj.slow_q.row(k);
        if m == 0 {
            row.extend(a.iter().map(|&x| num(x)));
        } else {
            let b = traj.slow_q.row(k + 1);
            row.extend(a.iter().zip(b).map(|(x, y)| num((1.0 - theta) * x + theta * y)));
        }
        row.extend(traj.fast_q.row(j).iter().map(|&x| num(x)));
        if m == 0 {
            row.extend(traj.slow_p.row(k).iter().map(|&x| num(x)));
        } else {
            row.extend(std::iter::repeat_n(String::new(), ns));
        }
        row.extend(traj.fast_p.row(j).iter().map(|&x| num(x)));
        row
    });
    out.csv("trajectory.csv", &cols, rows)
}

pub fn simulate(opts: &RunOptions) -> Result<String, CliError> {
    let (sys, x0) = build_system(opts)?;
    let quad = opts.quadrature()?;
    let macro_step = opts.macro_step()?;
    let p = opts.ratio()?;
    let t_end = opts.t_end.unwrap_or(100.0 * macro_step);
    let grid = TimeGrid::spanning(macro_step, p, 0.0, t_end).map_err(CliError::from_library)?;
    let config = solver_config(opts)?;

    let started = Instant::now();
    let (traj, steps, failure) = match integrate(&x0, &sys, &quad, &grid, &config, opts.mode()) {
        Ok(run) => (run.trajectory, run.steps, None),
        Err(f) => {
            if let e @ CliError::Config(_) = CliError::from_library(f.error.clone()) {
                return Err(e);
            }
            (f.partial, f.steps, Some((f.step, f.error)))
        }
    };
    let wall = started.elapsed();

    let mut out = OutputDir::create(&opts.out_dir())?;
    write_trajectory(&mut out, &traj)?;
    let energy = energy_series(&traj, &sys);
    let mut cols = header(&["t", "kinetic", "slow_potential", "fast_potential", "total"]);
    if energy.stiff_total.is_some() {
        cols.push("stiff_total".into());
    }
    let rows = (0..energy.times.len()).map(|i| {
        let mut r: Vec<String> = [
            energy.times[i],
            energy.kinetic[i],
            energy.slow_potential[i],
            energy.fast_potential[i],
            energy.total[i],
        ]
        .iter()
        .map(|&x| num(x))
        .collect();
        if let Some(s) = &energy.stiff_total {
            r.push(num(s[i]));
        }
        r
    });
    out.csv("energy.csv", &cols, rows)?;
    if opts.system() == SystemKind::SpringRing {
        let l3 = angular_momentum_series(&traj, &sys, &Vector3::z()).map_err(CliError::from_library)?;
        let rows = energy.times.iter().zip(&l3).map(|(t, l)| vec![num(*t), num(*l)]);
        out.csv("angular_momentum.csv", &header(&["t", "angular_momentum_e3"]), rows)?;
    }

    let cert = certify(&traj, &sys, &quad).ok();
    let completed = steps.len();
    let iters: usize = steps.iter().map(|s| s.newton_iters).sum();
    let body = json!({
        "settings": describe(opts, &sys)?,
        "grid": {
            "dT": grid.macro_step(),
            "dt": grid.micro_step(),
            "p": p,
            "t_end": grid.t_end(),
            "macro_steps": grid.n_macro(),
        },
        "results": {
            "completed_macro_steps": completed,
            "newton_iterations": iters,
            "max_residual": steps.iter().map(|s| s.residual_norm).fold(0.0, f64::max),
            "wall_time_s": wall.as_secs_f64(),
            "solve_time_s": steps.iter().map(|s| s.solve_time.as_secs_f64()).sum::<f64>(),
            "jacobian_time_s": steps.iter().map(|s| s.jacobian_time.as_secs_f64()).sum::<f64>(),
            "energy_max_relative_deviation": energy.max_relative_deviation(),
            "certificate": cert,
        },
        "failure": failure.as_ref().map(|(k, e)| json!({ "macro_step": k, "message": e.to_string() })),
    });
    let status = if failure.is_some() { "diverged" } else { "complete" };
    let manifest = out.finish("simulate", status, body)?;
    match failure {
        Some((k, e)) => Err(CliError::Divergence(format!(
            "macro step {k}: {e}; partial outputs in {}",
            opts.out_dir().display()
        ))),
        None => Ok(format!(
            "simulated {completed} macro steps, {iters} Newton iterations; manifest {}",
            manifest.display()
        )),
    }
}

fn write_table(out: &mut OutputDir, table: &ConvergenceTable) -> Result<(), CliError> {
    let cols = header(&[
        "step", "dT", "p", "err_q_mac", "err_p_mac", "err_q_mic", "err_p_mic", "order_q_mac", "order_p_mac",
        "order_q_mic", "order_p_mic", "failure",
    ]);
    let order = |v: &[f64], i: usize| if i == 0 { String::new() } else { num(v[i - 1]) };
    let rows = (0..table.len()).map(|i| {
        vec![
            num(table.steps[i]),
            num(table.macro_steps[i]),
            table.micro_per_macro[i].to_string(),
            num(table.errors_q_mac[i]),
            num(table.errors_p_mac[i]),
            num(table.errors_q_mic[i]),
            num(table.errors_p_mic[i]),
            order(&table.orders_q_mac, i),
            order(&table.orders_p_mac, i),
            order(&table.orders_q_mic, i),
            order(&table.orders_p_mic, i),
            table.failures[i].clone().unwrap_or_default(),
        ]
    });
    out.csv("convergence.csv", &cols, rows)
}

pub fn converge(opts: &RunOptions) -> Result<String, CliError> {
    let (sys, x0) = build_system(opts)?;
    let quad = opts.quadrature()?;
    let config = solver_config(opts)?;
    let t_end = opts.t_end.unwrap_or(0.5);
    let ref_step = opts.ref_step.unwrap_or(1e-5);
    let mode = opts.mode();

    let reference = reference_trajectory(&sys, &x0, &quad, ref_step, t_end, &config).map_err(CliError::from_library)?;
    let ratios = opts.ratios.clone().unwrap_or_else(|| vec![5]);
    let (kind, table) = if ratios.len() > 1 {
        let h = opts.macro_step()?;
        let t = micro_refinement_study(&sys, &x0, &quad, mode, h, &ratios, t_end, &reference, &config);
        ("micro-refinement", t)
    } else {
        let steps = opts.macro_steps.clone().unwrap_or_else(|| DEFAULT_SWEEP.to_vec());
        let t = convergence_study(&sys, &x0, &quad, mode, ratios[0], &steps, t_end, &reference, &config);
        ("macro-refinement", t)
    };
    let table = table.map_err(CliError::from_library)?;

    let mut out = OutputDir::create(&opts.out_dir())?;
    write_table(&mut out, &table)?;
    let fitted = json!({
        "q_mac": fitted_order(&table.steps, &table.errors_q_mac),
        "p_mac": fitted_order(&table.steps, &table.errors_p_mac),
        "q_mic": fitted_order(&table.steps, &table.errors_q_mic),
        "p_mic": fitted_order(&table.steps, &table.errors_p_mic),
    });
    out.json("convergence.json", &json!({ "study": kind, "table": table, "fitted_orders": fitted }))?;
    let body = json!({
        "settings": describe(opts, &sys)?,
        "study": kind,
        "t_end": t_end,
        "reference": {
            "dT": ref_step,
            "p": 1,
            "quadrature": quad,
            "explicit": quad.is_explicit_solvable(1),
        },
        "failed_rows": table.failures.iter().filter(|f| f.is_some()).count(),
    });
    out.finish("converge", "complete", body)?;
    Ok(format!("{} rows, fitted macro q order {}", table.len(), fitted["q_mac"]))
}

pub fn stability(opts: &RunOptions) -> Result<String, CliError> {
    let rule = opts.rule();
    let omega = opts.omega.unwrap_or(1.0);
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(CliError::Config("--omega must be positive".into()));
    }
    let ratios = opts.ratios.clone().unwrap_or_else(|| (1..=10).collect());
    let steps = opts
        .macro_steps
        .clone()
        .unwrap_or_else(|| (1..=400).map(|i| i as f64 * 0.02 / omega).collect());
    if ratios.contains(&0) || steps.iter().any(|h| !(*h > 0.0)) {
        return Err(CliError::Config("stability grid needs p >= 1 and dT > 0".into()));
    }
    let cols = header(&["omega_dT", "omega_dt", "p", "trace", "determinant", "stable", "analytic_bound", "omega_dT_limit"]);
    let mut rows = Vec::with_capacity(ratios.len() * steps.len());
    let mut stable = 0;
    for &p in &ratios {
        for &h in &steps {
            let r = stability_report(omega, h, p, rule);
            stable += r.stable as usize;
            rows.push(vec![
                num(r.omega_dt),
                num(r.omega_dt / p as f64),
                p.to_string(),
                num(r.trace),
                num(r.determinant),
                r.stable.to_string(),
                num(r.analytic_bound),
                num(r.analytic_bound.sqrt()),
            ]);
        }
    }
    let n = rows.len();
    let mut out = OutputDir::create(&opts.out_dir())?;
    out.csv("stability.csv", &cols, rows)?;
    let body = json!({ "rule": rule, "omega": omega, "p": ratios, "dT": steps });
    out.finish("stability", "complete", body)?;
    Ok(format!("{stable} of {n} grid points stable"))
}

pub fn bench(opts: &RunOptions) -> Result<String, CliError> {
    let (sys, x0) = build_system(opts)?;
    let quad = opts.quadrature()?;
    let config = solver_config(opts)?;
    let dt = opts.micro_step.unwrap_or(0.001);
    let t_end = opts.t_end.unwrap_or(10.0);
    let ratios = opts.ratios.clone().unwrap_or_else(|| DEFAULT_BENCH_RATIOS.to_vec());
    let cols = header(&[
        "p", "dT", "dt", "macro_steps", "wall_time_s", "newton_iterations", "t_dx_per_macro_s",
        "t_jacobi_per_macro_s", "failure",
    ]);
    let mut rows = Vec::new();
    // rows run one after another so timings do not compete for cores
    for &p in &ratios {
        let grid = TimeGrid::spanning(p as f64 * dt, p, 0.0, t_end).map_err(CliError::from_library)?;
        let started = Instant::now();
        let result = integrate(&x0, &sys, &quad, &grid, &config, opts.mode());
        let wall = started.elapsed().as_secs_f64();
        let (steps, failure) = match result {
            Ok(run) => (run.steps, String::new()),
            Err(f) => {
                let msg = f.to_string();
                (f.steps, msg)
            }
        };
        let n = steps.len().max(1) as f64;
        rows.push(vec![
            p.to_string(),
            num(grid.macro_step()),
            num(dt),
            grid.n_macro().to_string(),
            num(wall),
            steps.iter().map(|s| s.newton_iters).sum::<usize>().to_string(),
            num(steps.iter().map(|s| s.solve_time.as_secs_f64()).sum::<f64>() / n),
            num(steps.iter().map(|s| s.jacobian_time.as_secs_f64()).sum::<f64>() / n),
            failure,
        ]);
    }
    let n = rows.len();
    let mut out = OutputDir::create(&opts.out_dir())?;
    out.csv("bench.csv", &cols, rows)?;
    let body = json!({ "settings": describe(opts, &sys)?, "dt": dt, "t_end": t_end, "p": ratios });
    out.finish("bench", "complete", body)?;
    Ok(format!("{n} benchmark rows"))
}

pub fn validate(opts: &RunOptions) -> Result<String, CliError> {
    let (sys, x0) = build_system(opts)?;
    let seed = opts.seed.unwrap_or(0);
    let count = opts.probes.unwrap_or(100);
    let probes = probe_states(&x0, 0.5, count, seed);
    let report = validate_system(&sys, &probes, 1e-6).map_err(CliError::from_library)?;
    let cols = header(&["probe", "slow_dq_slow", "slow_dq_fast", "fast_dq_fast", "diagnostic"]);
    let rows = report.probes.iter().map(|r| {
        vec![
            r.index.to_string(),
            num(r.slow_dq_slow),
            num(r.slow_dq_fast),
            num(r.fast_dq_fast),
            r.diagnostic.clone().unwrap_or_default(),
        ]
    });
    let mut out = OutputDir::create(&opts.out_dir())?;
    out.csv("validation.csv", &cols, rows)?;
    let body = json!({
        "system": opts.system(),
        "seed": seed,
        "probes": count,
        "spread": 0.5,
        "fd_step": 1e-6,
        "max_deviation": report.max_deviation,
        "tolerance": report.tolerance,
        "passed": report.passed,
    });
    let status = if report.passed { "passed" } else { "failed" };
    out.finish("validate", status, body)?;
    if report.passed {
        Ok(format!("{count} probes passed, max deviation {:e}", report.max_deviation))
    } else {
        Err(CliError::Config(format!(
            "gradient check failed: max deviation {:e} above {:e}",
            report.max_deviation, report.tolerance
        )))
    }
}
