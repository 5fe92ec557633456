//! The four subcommands. Each writes its outputs and returns a verdict.

use nsfde::coupling::{cauchy_ladder, nonexplosion_scan};
use nsfde::em_scheme::run;
use nsfde::estimates::{growth_report, moment_curve};
use nsfde::model::checks::{check_a1, check_a2, check_a3, check_lemma};
use nsfde::stats::Proportion;
use nsfde::{
    BoundConstants64, BrownianDriver, CauchyReport, CheckReport, CouplingConfig, GrowthReport, Model, NonExplosionTable,
    NeutralTerm, SegmentSampler,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Setup;
use crate::output::{fmt_f64, OutputDir};

/// Paths simulated per batch before their rows are written.
const WRITE_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
        }
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

#[derive(Serialize)]
struct CheckOutput {
    model: String,
    trials: usize,
    radius: f64,
    slack: f64,
    reports: Vec<CheckReport<f64>>,
    pass: bool,
}

pub fn check(setup: &Setup, out: &mut OutputDir) -> Result<Verdict, String> {
    let cfg = &setup.config;
    let c = &cfg.check;
    let model = &setup.model;
    let sampler = |offset: u64| SegmentSampler::new(model.dim(), cfg.r, c.radius, cfg.seed.wrapping_add(offset));
    let mut a3_sampler = sampler(0);
    if c.spike && matches!(model.params().neutral, NeutralTerm::PointDelay { .. }) {
        a3_sampler = a3_sampler.with_spike(-cfg.tau, 0.5);
    }
    let declared_l = c.l_r.unwrap_or_else(|| model.analytic_monotonicity());
    let reports = vec![
        check_a3(model, &mut a3_sampler, c.trials, c.slack).map_err(err)?,
        check_a1(model, &mut sampler(1), declared_l, c.trials, c.slack).map_err(err)?,
        check_a2(model, &mut sampler(2), c.trials, c.slack).map_err(err)?,
        check_lemma(model, &mut sampler(3), c.trials, c.slack).map_err(err)?,
    ];
    let pass = reports.iter().all(|r| r.pass);
    out.write_json(
        "check_report.json",
        &CheckOutput {
            model: model.name().to_string(),
            trials: c.trials,
            radius: c.radius,
            slack: c.slack,
            reports,
            pass,
        },
    )?;
    Ok(Verdict::from_bool(pass))
}

#[derive(Serialize, Default)]
struct Diagnostics {
    paths: usize,
    n: u32,
    steps: usize,
    horizon: f64,
    radius: f64,
    xi_norm: f64,
    loc1_violations: usize,
    loc2_violations: usize,
    drift_bound_violations: usize,
    max_fixed_point_iterations: usize,
    max_fixed_point_residual: f64,
    stopped: Option<Proportion>,
    halted_paths: usize,
    pass: bool,
}

pub fn simulate(setup: &Setup, out: &mut OutputDir) -> Result<Verdict, String> {
    let cfg = &setup.config;
    let model = &setup.model;
    let runc = &setup.run;
    let steps = runc.steps();
    let d = model.dim();
    let keep = cfg.simulate.trajectory_paths.unwrap_or(cfg.paths).min(cfg.paths);
    let driver = BrownianDriver::new(cfg.seed, runc.n, model.noise_dim());

    let name = "trajectories.csv";
    let mut csv = out.csv(name)?;
    let mut header = vec!["time".to_string(), "path_id".to_string()];
    header.extend((0..d).map(|i| format!("x_{i}")));
    header.extend(["seg_norm", "running_sup_abs2", "stopped_flag"].map(String::from));
    csv.write_record(&header).map_err(err)?;

    let mut diag = Diagnostics {
        paths: cfg.paths,
        n: runc.n,
        steps,
        horizon: runc.horizon,
        radius: runc.radius,
        xi_norm: setup.xi_norm,
        ..Default::default()
    };
    let mut stopped = 0usize;
    for start in (0..cfg.paths).step_by(WRITE_BATCH) {
        let ids: Vec<u64> = (start as u64..(start + WRITE_BATCH).min(cfg.paths) as u64).collect();
        let outcomes: Vec<_> = ids
            .par_iter()
            .map(|&id| {
                let mut stream = driver.stream::<f64>(id);
                let mut level = stream.level(runc.n)?;
                run(model, setup.init.clone(), runc, &mut level)
            })
            .collect::<Result<_, _>>()
            .map_err(err)?;
        for (&id, o) in ids.iter().zip(&outcomes) {
            diag.loc1_violations += o.loc1_violations();
            diag.loc2_violations += o.loc2_violations();
            if o.drift_within_bound() == Some(false) {
                diag.drift_bound_violations += 1;
            }
            for r in &o.records {
                diag.max_fixed_point_iterations = diag.max_fixed_point_iterations.max(r.iterations);
                diag.max_fixed_point_residual = diag.max_fixed_point_residual.max(r.residual);
            }
            stopped += usize::from(o.monitor.stopped());
            diag.halted_paths += usize::from(o.halted());
            if (id as usize) >= keep {
                continue;
            }
            let stop = o.monitor.stop_step();
            let mut sup = 0.0f64;
            for j in 0..=steps {
                let x = o.absorbed_value(j);
                sup = sup.max(x.iter().map(|v| v * v).sum());
                let mut row = vec![fmt_f64(o.time(j)), id.to_string()];
                row.extend(x.iter().map(|&v| fmt_f64(v)));
                row.push(fmt_f64(o.absorbed_norm(j)));
                row.push(fmt_f64(sup));
                row.push(u8::from(stop.is_some_and(|s| s <= j)).to_string());
                csv.write_record(&row).map_err(err)?;
            }
        }
    }
    out.finish_csv(name, csv)?;
    diag.stopped = Some(Proportion::wilson95(stopped, cfg.paths));
    diag.pass = diag.loc1_violations == 0 && diag.loc2_violations == 0 && diag.drift_bound_violations == 0;
    let pass = diag.pass;
    out.write_json("diagnostics.json", &diag)?;
    Ok(Verdict::from_bool(pass))
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn common_fine(levels: &[u32]) -> Result<u32, String> {
    let mut l = 1u64;
    for &n in levels {
        l = l / gcd(l, n as u64) * n as u64;
        if l > u32::MAX as u64 {
            return Err("converge.levels: common refinement exceeds u32".into());
        }
    }
    Ok(l as u32)
}

#[derive(Serialize)]
struct ConvergeOutput {
    levels: Vec<u32>,
    fine: u32,
    paths: usize,
    reports: Vec<CauchyReport>,
    median_nonincreasing: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    nonexplosion: Option<NonExplosionTable>,
    pass: bool,
}

pub fn converge(setup: &Setup, out: &mut OutputDir) -> Result<Verdict, String> {
    let cfg = &setup.config;
    let levels = &cfg.converge.levels;
    let mut all = levels.clone();
    all.push(setup.run.n);
    let fine = common_fine(&all)?;
    let coupling = CouplingConfig {
        run: setup.run.clone(),
        fine,
        paths: cfg.paths,
        seed: cfg.seed,
        epsilons: cfg.converge.epsilons.clone(),
    };
    let reports = cauchy_ladder(&setup.model, setup.init.clone(), levels, &coupling).map_err(err)?;

    let name = "distances.csv";
    let mut csv = out.csv(name)?;
    csv.write_record(["path_id", "n", "m", "sup_distance", "stopped_n", "stopped_m"])
        .map_err(err)?;
    for rep in &reports {
        for p in &rep.distances {
            csv.write_record([
                p.path_id.to_string(),
                p.n.to_string(),
                p.m.to_string(),
                fmt_f64(p.sup_distance),
                u8::from(p.stopped_n).to_string(),
                u8::from(p.stopped_m).to_string(),
            ])
            .map_err(err)?;
        }
    }
    out.finish_csv(name, csv)?;

    let median_nonincreasing = reports.windows(2).all(|w| w[1].median_distance <= w[0].median_distance);
    let nonexplosion = if cfg.converge.radius_multipliers.is_empty() {
        None
    } else {
        let radii: Vec<f64> = cfg.converge.radius_multipliers.iter().map(|m| m * setup.xi_norm).collect();
        let table = nonexplosion_scan(&setup.model, setup.init.clone(), setup.run.n, &radii, &coupling).map_err(err)?;
        out.write_json("nonexplosion.json", &table)?;
        Some(table)
    };
    let scan_ok = nonexplosion
        .as_ref()
        .is_none_or(|t| t.monotone && t.rows.iter().all(|r| r.dominated));
    let pass = median_nonincreasing && scan_ok;
    out.write_json(
        "cauchy_report.json",
        &ConvergeOutput {
            levels: levels.clone(),
            fine,
            paths: cfg.paths,
            reports,
            median_nonincreasing,
            nonexplosion,
            pass,
        },
    )?;
    Ok(Verdict::from_bool(pass))
}

#[derive(Serialize)]
struct BoundsOutput {
    constants: BoundConstants64,
    paths: usize,
    n: u32,
    moment_pass: bool,
    relative_stderr: f64,
    max_ratio_to_envelope: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    growth: Option<GrowthReport>,
    pass: bool,
}

pub fn bounds(setup: &Setup, out: &mut OutputDir) -> Result<Verdict, String> {
    let cfg = &setup.config;
    let model = &setup.model;
    let xi_sq = cfg.bounds.xi_norm_sq.unwrap_or(setup.xi_norm * setup.xi_norm);
    let (k, l) = (model.contraction(), model.coercivity());
    let constants = BoundConstants64::new(k, l, cfg.r, cfg.horizon, xi_sq).map_err(err)?;
    let curve = moment_curve(model, setup.init.clone(), &setup.run, &constants, cfg.paths, cfg.seed).map_err(err)?;

    let name = "moment_curve.csv";
    let mut csv = out.csv(name)?;
    csv.write_record(["time", "estimate", "stderr", "envelope"]).map_err(err)?;
    for i in 0..curve.times.len() {
        csv.write_record([
            fmt_f64(curve.times[i]),
            fmt_f64(curve.estimate[i]),
            fmt_f64(curve.stderr[i]),
            fmt_f64(curve.envelope[i]),
        ])
        .map_err(err)?;
    }
    out.finish_csv(name, csv)?;

    let max_ratio = curve
        .estimate
        .iter()
        .zip(&curve.log_envelope)
        .map(|(&e, &le)| if e > 0.0 { (e.ln() - le).exp() } else { 0.0 })
        .fold(0.0, f64::max);
    let growth = if cfg.bounds.growth_horizon >= 8.0 {
        let mut gcfg = setup.run.clone();
        gcfg.horizon = cfg.bounds.growth_horizon;
        let gconst = BoundConstants64::new(k, l, cfg.r, gcfg.horizon, xi_sq).map_err(err)?;
        let paths = cfg.bounds.growth_paths.unwrap_or(cfg.paths);
        Some(growth_report(model, setup.init.clone(), &gcfg, &gconst, cfg.epsilon, paths, cfg.seed).map_err(err)?)
    } else {
        None
    };
    let pass = curve.pass && growth.as_ref().is_none_or(|g| g.pass);
    out.write_json(
        "bounds_report.json",
        &BoundsOutput {
            constants,
            paths: curve.paths,
            n: setup.run.n,
            moment_pass: curve.pass,
            relative_stderr: curve.relative_stderr,
            max_ratio_to_envelope: max_ratio,
            growth,
            pass,
        },
    )?;
    Ok(Verdict::from_bool(pass))
}
