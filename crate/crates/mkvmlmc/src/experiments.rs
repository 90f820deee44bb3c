//! One function per subcommand. Each returns a [`Report`] and leaves
//! writing to [`crate::output::write_report`].

use mkvmlmc_core::brownian::sample_lattice;
use mkvmlmc_core::mlmc::{estimate_level_stats, run_mlmc, telescoping_check, MlmcConfig, MlmcResult};
use mkvmlmc_core::particles::{moment_report, EnsembleState, MomentReport};
use mkvmlmc_core::rng::derive_seed;
use mkvmlmc_core::schemes::{run_antithetic_pair, PathSimulator, Scheme};
use mkvmlmc_core::stats::{log2_slope, Welford};
use mkvmlmc_core::{Executor, Taming, TimeGrid};
use serde_json::json;

use crate::config::{Experiment, Resolved};
use crate::error::AppError;
use crate::levy;
use crate::output::{cell, Fit, Report, Table};

const STRONG: u64 = 0x5354_524f;
const VARIANCE: u64 = 0x5641_5249;
const MEAN: u64 = 0x4d45_414e;
const COMPLEXITY: u64 = 0x434f_4d50;
const MOMENTS: u64 = 0x4d4f_4d45;

pub fn run<E: Executor>(r: &Resolved, exec: &E) -> Result<Report, AppError> {
    match r.experiment {
        Experiment::Simulate => simulate(r, exec),
        Experiment::StrongConvergence => strong_convergence(r, exec),
        Experiment::VarianceDecay => variance_decay(r, exec),
        Experiment::MeanDecay => mean_decay(r, exec),
        Experiment::Complexity => complexity(r, exec),
        Experiment::LevyValidate => levy_validate(r, exec),
        Experiment::Moments => moments(r, exec),
        Experiment::Mlmc => mlmc(r, exec),
    }
}

fn fit(series: impl Into<String>, quantity: &str, levels: &[usize], values: &[f64]) -> Fit {
    Fit {
        series: series.into(),
        quantity: quantity.into(),
        level_min: levels.first().copied().unwrap_or(0),
        level_max: levels.last().copied().unwrap_or(0),
        slope: log2_slope(levels, values),
    }
}

pub fn simulate<E: Executor>(r: &Resolved, exec: &E) -> Result<Report, AppError> {
    let o = &r.config.experiment.simulate;
    let grid = r.hierarchy.grid(o.level);
    r.sim.validate(&grid)?;
    let ens = r.sim.simulate(exec, r.seed(), r.config.mlmc.particles, &grid)?;
    let mut traj = Table::new("simulate", &["particle", "node", "time", "value"]);
    for i in 0..o.dump_particles.min(ens.n_particles()) {
        for (q, v) in ens.trajectory(i) {
            traj.push(vec![cell(i), cell(q), cell(grid.time(q)), cell(v)]);
        }
    }
    let rep = moment_report(&ens, o.moment_p)?;
    let mut mom = Table::new("simulate-moments", &["node", "time", "p", "moment"]);
    for (q, t, m) in &rep.rows {
        mom.push(vec![cell(q), cell(t), cell(rep.p), cell(m)]);
    }
    Ok(Report {
        tables: vec![traj, mom],
        ..Report::default()
    })
}

/// Mean and standard error of per-replication values.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let mut w = Welford::new();
    for &x in xs {
        w.push(x);
    }
    (w.mean(), if xs.len() > 1 { w.std_err() } else { f64::NAN })
}

fn rms_diff(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (s / a.len() as f64).sqrt()
}

pub fn strong_convergence<E: Executor>(r: &Resolved, exec: &E) -> Result<Report, AppError> {
    let g = &r.config.grid;
    let levels: Vec<usize> = r.levels().collect();
    if levels.len() < 3 || g.min_level == 0 {
        return Err(AppError::invalid(
            "strong convergence needs at least three levels starting at 1 or above",
        ));
    }
    let s = &r.config.experiment.strong;
    let finest = s.reference == "finest";
    let top = if finest {
        s.reference_level.unwrap_or(g.max_level + 2)
    } else {
        g.max_level
    };
    let top_grid = r.hierarchy.grid(top);
    r.sim.validate(&top_grid)?;
    r.reference.validate(&top_grid)?;
    let n = r.config.mlmc.particles;
    let reps = r.config.experiment.replications;
    let first = if finest { g.min_level } else { g.min_level - 1 };

    let mut rmse = vec![Vec::with_capacity(reps); levels.len()];
    for rep in 0..reps {
        let lattice = sample_lattice(derive_seed(r.seed(), &[STRONG, rep as u64]), n, &top_grid)?;
        let areas = r.sim.areas(exec, &lattice)?;
        let terminal = |l: usize| -> Result<Vec<f64>, AppError> {
            Ok(r.sim.run(exec, &lattice, &areas, &r.hierarchy.grid(l))?.terminal().to_vec())
        };
        let reference = if finest {
            let areas = r.reference.areas(exec, &lattice)?;
            Some(r.reference.run(exec, &lattice, &areas, &top_grid)?.terminal().to_vec())
        } else {
            None
        };
        let mut prev = if finest { None } else { Some(terminal(first)?) };
        for (slot, &l) in levels.iter().enumerate() {
            let y = terminal(l)?;
            let other = match (&reference, &prev) {
                (Some(refp), _) => refp,
                (None, Some(p)) => p,
                (None, None) => unreachable!("one comparison path is always set"),
            };
            rmse[slot].push(rms_diff(&y, other));
            if !finest {
                prev = Some(y);
            }
        }
    }

    let mut t = Table::new(
        "strong-convergence",
        &["level", "steps", "delta", "compared_with", "rmse", "rmse_se", "replications"],
    );
    let mut means = Vec::new();
    for (slot, &l) in levels.iter().enumerate() {
        let (m, se) = mean_se(&rmse[slot]);
        means.push(m);
        let grid = r.hierarchy.grid(l);
        t.push(vec![
            cell(l),
            cell(grid.steps()),
            cell(grid.mesh()),
            cell(if finest { top } else { l - 1 }),
            cell(m),
            cell(se),
            cell(reps),
        ]);
    }
    Ok(Report {
        tables: vec![t],
        fits: vec![fit(r.sim.scheme.id(), "rmse", &levels, &means)],
        documents: Vec::new(),
    })
}

fn level_row(series: &str, n: usize, samples: u64, l: usize, mean: f64, variance: f64, cost: u64) -> Vec<String> {
    vec![
        series.to_string(),
        cell(n),
        cell(l),
        cell(samples),
        cell(mean),
        cell(variance),
        cell(cost),
    ]
}

/// `E|Ȳ^f(T) − Y^c(T)|²` per level by direct simulation of antithetic triples.
fn pathwise_antithetic_error<E: Executor>(
    sim: &PathSimulator,
    r: &Resolved,
    exec: &E,
    level: usize,
    n: usize,
    reps: usize,
) -> Result<(f64, f64), AppError> {
    let per_rep = exec.map(reps, |k| -> Result<f64, AppError> {
        let seed = derive_seed(r.seed(), &[VARIANCE, 1, level as u64, k as u64]);
        let pair = run_antithetic_pair(sim, &r.hierarchy, seed, level, n)?;
        let avg = pair.averaged_terminal();
        let d = rms_diff(&avg, pair.coarse.terminal());
        Ok(d * d)
    });
    let xs = per_rep.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(mean_se(&xs))
}

pub fn variance_decay<E: Executor>(r: &Resolved, exec: &E) -> Result<Report, AppError> {
    let levels: Vec<usize> = r.levels().collect();
    if levels.first() == Some(&0) {
        return Err(AppError::invalid("variance decay starts at level 1 or above"));
    }
    let m = &r.config.mlmc;
    let k = m.samples_per_level;
    let mut t = Table::new("variance-decay", &["series", "n", "level", "samples", "mean", "variance", "cost"]);
    let mut fits = Vec::new();
    let coupling = r.coupling.id();
    for &n in &m.particle_counts {
        let s = r.sampler(n);
        let master = derive_seed(r.seed(), &[VARIANCE, 0, n as u64]);
        let mut corr = Vec::new();
        let mut plain = Vec::new();
        for &l in &levels {
            let st = estimate_level_stats(&s, exec, l, k, master)?;
            t.push(level_row(coupling, n, k, l, st.mean, st.variance, st.cost));
            let plain_cost = (n * r.hierarchy.steps(l)) as u64;
            t.push(level_row(
                "standard-mc",
                n,
                k,
                l,
                st.fine_only_mean,
                st.fine_only_variance,
                plain_cost,
            ));
            corr.push(st.variance);
            plain.push(st.fine_only_variance);
        }
        fits.push(fit(format!("{coupling}-n{n}"), "variance", &levels, &corr));
        fits.push(fit(format!("standard-mc-n{n}"), "variance", &levels, &plain));
    }

    let n = m.particles;
    if r.coupling != mkvmlmc_core::mlmc::Coupling::Standard {
        let s = r.standard_sampler(n);
        let master = derive_seed(r.seed(), &[VARIANCE, 2, n as u64]);
        let mut var = Vec::new();
        for &l in &levels {
            let st = estimate_level_stats(&s, exec, l, k, master)?;
            t.push(level_row("standard", n, k, l, st.mean, st.variance, st.cost));
            var.push(st.variance);
        }
        fits.push(fit(format!("standard-n{n}"), "variance", &levels, &var));
    }

    let mut tables = vec![t];
    if r.sim.scheme == Scheme::AntitheticCoarse {
        let reps = r.config.experiment.replications;
        let mut p = Table::new(
            "variance-decay-pathwise",
            &["level", "n", "replications", "mean_sq_diff", "mean_sq_diff_se"],
        );
        let mut vals = Vec::new();
        for &l in &levels {
            let (mean, se) = pathwise_antithetic_error(&r.sim, r, exec, l, n, reps)?;
            p.push(vec![cell(l), cell(n), cell(reps), cell(mean), cell(se)]);
            vals.push(mean);
        }
        fits.push(fit(format!("pathwise-n{n}"), "mean_sq_diff", &levels, &vals));
        tables.push(p);
    }
    Ok(Report {
        tables,
        fits,
        documents: Vec::new(),
    })
}

pub fn mean_decay<E: Executor>(r: &Resolved, exec: &E) -> Result<Report, AppError> {
    let levels: Vec<usize> = r.levels().collect();
    if levels.first() == Some(&0) {
        return Err(AppError::invalid("mean decay starts at level 1 or above"));
    }
    let n = r.config.mlmc.particles;
    let k = r.config.mlmc.samples_per_level;
    let main = r.sampler(n);
    let standard = r.standard_sampler(n);
    let mut t = Table::new(
        "mean-decay",
        &[
            "level",
            "samples",
            "coupled_mean",
            "coupled_se",
            "standard_mean",
            "standard_se",
            "difference",
            "combined_se",
        ],
    );
    let (mut a_abs, mut s_abs) = (Vec::new(), Vec::new());
    for &l in &levels {
        let a = estimate_level_stats(&main, exec, l, k, derive_seed(r.seed(), &[MEAN, 0]))?;
        let s = estimate_level_stats(&standard, exec, l, k, derive_seed(r.seed(), &[MEAN, 1]))?;
        let combined = (a.std_err().powi(2) + s.std_err().powi(2)).sqrt();
        t.push(vec![
            cell(l),
            cell(k),
            cell(a.mean),
            cell(a.std_err()),
            cell(s.mean),
            cell(s.std_err()),
            cell(a.mean - s.mean),
            cell(combined),
        ]);
        a_abs.push(a.mean.abs());
        s_abs.push(s.mean.abs());
    }

    let o = &r.config.experiment.telescoping;
    let tr = telescoping_check(&main, exec, o.level, o.samples, derive_seed(r.seed(), &[MEAN, 2]))?;
    let mut tel = Table::new("mean-decay-telescoping", &["quantity", "level", "samples", "mean", "se"]);
    for (q, m, se) in [
        ("standalone", tr.standalone_mean, tr.standalone_se),
        ("coarse-leg", tr.coarse_leg_mean, tr.coarse_leg_se),
        ("difference", tr.difference, tr.combined_se),
        ("averaged-fine-leg", tr.fine_leg_mean, tr.fine_leg_se),
        ("fine-only", tr.fine_only_mean, tr.fine_only_se),
    ] {
        tel.push(vec![q.to_string(), cell(tr.level), cell(tr.samples), cell(m), cell(se)]);
    }
    Ok(Report {
        tables: vec![t, tel],
        fits: vec![
            fit(r.coupling.id(), "abs_mean", &levels, &a_abs),
            fit("standard", "abs_mean", &levels, &s_abs),
        ],
        documents: Vec::new(),
    })
}

fn level_table(name: &str, res: &MlmcResult) -> Table {
    let mut t = Table::new(name, &["l", "K_l", "mean", "variance", "cost"]);
    for s in &res.levels {
        t.push(vec![cell(s.level), cell(s.samples), cell(s.mean), cell(s.variance), cell(s.cost)]);
    }
    t
}

pub fn complexity<E: Executor>(r: &Resolved, exec: &E) -> Result<Report, AppError> {
    let n = r.config.mlmc.particles;
    let sampler = r.sampler(n);
    let mut t = Table::new(
        "complexity",
        &[
            "epsilon",
            "total_work",
            "eps2_work",
            "finest_level",
            "estimate",
            "std_err",
            "bias_proxy",
            "converged",
        ],
    );
    let mut detail = Table::new("complexity-levels", &["epsilon", "l", "K_l", "mean", "variance", "cost"]);
    for (i, &eps) in r.config.mlmc.epsilons.iter().enumerate() {
        let cfg = MlmcConfig {
            epsilon: eps,
            master_seed: derive_seed(r.seed(), &[COMPLEXITY, i as u64]),
            ..r.mlmc
        };
        let res = run_mlmc(&cfg, &sampler, exec)?;
        t.push(vec![
            cell(eps),
            cell(res.total_work),
            cell(eps * eps * res.total_work as f64),
            cell(res.levels.last().map_or(0, |s| s.level)),
            cell(res.estimate),
            cell(res.estimator_variance.sqrt()),
            cell(res.bias_proxy),
            cell(res.converged),
        ]);
        for row in level_table("", &res).rows {
            let mut full = vec![cell(eps)];
            full.extend(row);
            detail.push(full);
        }
    }
    Ok(Report {
        tables: vec![t, detail],
        ..Report::default()
    })
}

pub fn levy_validate<E: Executor>(r: &Resolved, exec: &E) -> Result<Report, AppError> {
    let o = &r.config.experiment.levy;
    let v = levy::validate(exec, r.seed(), o.delta, &o.r_values, o.substeps, o.samples)?;
    let mut t = Table::new(
        "levy-validate",
        &["delta", "r", "mse_vs_oracle", "ratio_to_2r", "oracle_substeps", "n_samples"],
    );
    for &(q, mse) in &v.mse {
        let ratio = v.ratio(q).map(cell).unwrap_or_default();
        t.push(vec![cell(v.delta), cell(q), cell(mse), ratio, cell(v.substeps), cell(v.samples)]);
    }
    let mut checks = Table::new("levy-validate-checks", &["check", "value"]);
    checks.push(vec!["chen_residual".into(), cell(v.chen_residual)]);
    checks.push(vec!["diagonal_mse".into(), cell(v.diagonal_mse)]);
    Ok(Report {
        tables: vec![t, checks],
        ..Report::default()
    })
}

/// Outcome of one moment-stability run.
struct MomentRun {
    series: String,
    steps: usize,
    report: Option<MomentReport>,
    /// Set when the run aborted on a non-finite state.
    abort: Option<String>,
}

impl MomentRun {
    fn running_max(&self) -> f64 {
        self.report.as_ref().map_or(f64::INFINITY, |r| r.running_max)
    }

    fn terminal(&self) -> f64 {
        self.report
            .as_ref()
            .and_then(|r| r.rows.last())
            .map_or(f64::INFINITY, |row| row.2)
    }

    fn finite(&self) -> bool {
        self.report.as_ref().is_some_and(|r| r.all_finite)
    }
}

pub fn moments<E: Executor>(r: &Resolved, exec: &E) -> Result<Report, AppError> {
    let o = &r.config.experiment.moments;
    let g = &r.config.grid;
    let n = r.config.mlmc.particles;
    let mut all_steps = o.steps.clone();
    if o.untamed_steps > 0 {
        all_steps.push(o.untamed_steps);
    }
    let finest = *all_steps.iter().max().expect("validated non-empty");
    if all_steps.iter().any(|&m| m == 0 || finest % m != 0) {
        return Err(AppError::invalid("moment step counts must divide the largest one"));
    }
    let grid_of = |m: usize| TimeGrid::new(g.horizon, g.tau, m, 0);
    let lattice = sample_lattice(derive_seed(r.seed(), &[MOMENTS]), n, &grid_of(finest)?)?;

    let run = |sim: &PathSimulator, series: String, m: usize| -> Result<MomentRun, AppError> {
        let grid = grid_of(m)?;
        sim.validate(&grid)?;
        let outcome: Result<EnsembleState, mkvmlmc_core::Error> =
            sim.areas(exec, &lattice).and_then(|a| sim.run(exec, &lattice, &a, &grid));
        match outcome {
            Ok(ens) => Ok(MomentRun {
                series,
                steps: m,
                report: Some(moment_report(&ens, o.p)?),
                abort: None,
            }),
            Err(e) if e.is_numerical() => Ok(MomentRun {
                series,
                steps: m,
                report: None,
                abort: Some(e.to_string()),
            }),
            Err(e) => Err(e.into()),
        }
    };

    let tamed_series = format!("tamed-{}", r.sim.scheme.id());
    let mut runs = Vec::new();
    for &m in &o.steps {
        runs.push(run(&r.sim, tamed_series.clone(), m)?);
    }
    let mut summary = serde_json::Map::new();
    let tamed_max: Vec<f64> = runs.iter().map(MomentRun::running_max).collect();
    let hi = tamed_max.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = tamed_max.iter().copied().fold(f64::INFINITY, f64::min);
    summary.insert("tamed_all_finite".into(), json!(runs.iter().all(MomentRun::finite)));
    summary.insert("tamed_relative_variation".into(), json!(hi / lo - 1.0));

    if o.untamed_steps > 0 {
        let mut euler = r.sim.clone();
        euler.scheme = Scheme::Euler;
        euler.taming = if r.sim.taming == Taming::None { Taming::Scheme1 } else { r.sim.taming };
        let tamed = run(&euler, "tamed-euler".into(), o.untamed_steps)?;
        euler.taming = Taming::None;
        let untamed = run(&euler, "untamed-euler".into(), o.untamed_steps)?;
        let finite = untamed.finite();
        summary.insert("untamed_all_finite".into(), json!(finite));
        summary.insert(
            "untamed_growth".into(),
            json!(finite.then(|| untamed.running_max() / tamed.running_max())),
        );
        summary.insert("untamed_abort".into(), json!(untamed.abort));
        runs.push(tamed);
        runs.push(untamed);
    }

    let mut t = Table::new(
        "moments",
        &["series", "steps", "p", "running_max", "terminal_moment", "all_finite"],
    );
    let mut nodes = Table::new("moments-nodes", &["series", "steps", "node", "time", "p", "moment"]);
    for run in &runs {
        t.push(vec![
            run.series.clone(),
            cell(run.steps),
            cell(o.p),
            cell(run.running_max()),
            cell(run.terminal()),
            cell(run.finite()),
        ]);
        if let Some(rep) = &run.report {
            for (q, time, m) in &rep.rows {
                nodes.push(vec![run.series.clone(), cell(run.steps), cell(q), cell(time), cell(o.p), cell(m)]);
            }
        }
    }
    Ok(Report {
        tables: vec![t, nodes],
        fits: Vec::new(),
        documents: vec![("moments-summary.json".into(), serde_json::Value::Object(summary))],
    })
}

pub fn mlmc<E: Executor>(r: &Resolved, exec: &E) -> Result<Report, AppError> {
    let res = run_mlmc(&r.mlmc, &r.sampler(r.config.mlmc.particles), exec)?;
    let se = res.estimator_variance.sqrt();
    let mut t = Table::new(
        "mlmc",
        &["estimate", "std_err", "total_work", "epsilon", "bias_proxy", "finest_level", "converged"],
    );
    t.push(vec![
        cell(res.estimate),
        cell(se),
        cell(res.total_work),
        cell(res.epsilon),
        cell(res.bias_proxy),
        cell(res.levels.last().map_or(0, |s| s.level)),
        cell(res.converged),
    ]);
    let summary = json!({
        "estimate": res.estimate,
        "total_work": res.total_work,
        "epsilon": res.epsilon,
        "bias_proxy": res.bias_proxy,
        "estimator_variance": res.estimator_variance,
        "std_err": se,
        "converged": res.converged,
        "seed": r.seed(),
    });
    Ok(Report {
        tables: vec![level_table("levels", &res), t],
        fits: Vec::new(),
        documents: vec![("summary.json".into(), summary)],
    })
}
