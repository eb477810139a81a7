use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::json;

use super::config::{CompareAgainst, Format, RunConfig};
use super::{CommonArgs, Failure, RatesArgs};
use crate::analysis::{
    equivariance_test, generator_identity_check, histogram, pv_equivalence_check, target_distribution,
    EquivarianceReport,
};
use crate::error::{Error, Result};
use crate::flow::{grid_velocity, integrate_dirac_path, velocity_bohm, FlowParams};
use crate::fockgrid::{Configuration, FockVector, GuidingState};
use crate::jumps::{jump_rates, lattice_rates, JumpKind};
use crate::model::{build_dirac, InitialState, ModelMode, OperatorBlocks};
use crate::process::{
    write_jsonl, JsonlHeader, ProcessMode, Simulation, Status, Trajectory, TRAJECTORY_SCHEMA_VERSION,
};
use crate::propagator::{evolve as evolve_state, evolve_on_mesh, Method};

const SCHEMA_VERSION: u32 = 1;

/// Largest share of failed trajectories a `simulate` run may have.
const MAX_FAILURE_FRACTION: f64 = 0.01;

struct Context {
    config: RunConfig,
    hash: String,
    out_dir: PathBuf,
    parallelism: Option<usize>,
}

impl Context {
    fn load(args: &CommonArgs) -> std::result::Result<Self, Failure> {
        if !args.config.exists() {
            return Err(Failure {
                code: 1,
                message: format!("config file {} not found", args.config.display()),
            });
        }
        let mut config = RunConfig::load(&args.config)?;
        if let Some(seed) = args.seed {
            config.process.root_seed = seed;
        }
        if let Some(m) = args.trajectories {
            config.process.trajectories = m;
        }
        if let Some(dir) = &args.out_dir {
            config.output.directory = dir.clone();
        }
        if args.parallelism == Some(0) {
            return Err(Error::validation("parallelism", "must be at least 1").into());
        }
        config.validate()?;
        let hash = config.hash();
        let out_dir = config.output.directory.clone();
        fs::create_dir_all(&out_dir).map_err(Error::from)?;
        Ok(Context {
            config,
            hash,
            out_dir,
            parallelism: args.parallelism,
        })
    }

    fn require_fock(&self) -> Result<()> {
        if self.config.model.mode != ModelMode::SchrodingerFock {
            return Err(Error::validation(
                "model.mode",
                "this command needs schrodinger_fock; use dirac-demo for dirac_1p",
            ));
        }
        Ok(())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn wants(&self, f: Format) -> bool {
        self.config.output.wants(f)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.path(name), text)?;
        Ok(())
    }

    fn write_csv(&self, name: &str, header: &str, body: &str) -> Result<()> {
        fs::write(
            self.path(name),
            format!("# config_hash={}\n{header}\n{body}", self.hash),
        )?;
        Ok(())
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn sites_field(sites: &[usize]) -> String {
    sites.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(" ")
}

fn complex_pairs(v: &[num_complex::Complex64]) -> Vec<[f64; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

fn setup(ctx: &Context) -> Result<(OperatorBlocks, FockVector, Method)> {
    ctx.require_fock()?;
    let ops = OperatorBlocks::build(&ctx.config.model)?;
    let psi0 = ctx.config.initial_state.build(*ops.space())?;
    let method = ctx.config.method_for(ops.space().dim());
    Ok((ops, psi0, method))
}

pub(crate) fn evolve(args: &CommonArgs) -> std::result::Result<(), Failure> {
    let ctx = Context::load(args)?;
    let (ops, psi0, method) = setup(&ctx)?;
    let mut times = ctx.config.sample_times();
    if times[0] != 0.0 {
        times.insert(0, 0.0);
    }
    let plan = crate::propagator::PropagatorPlan {
        sample_times: times,
        ..ctx.config.propagator_plan(method)
    };
    let series = evolve_state(&psi0, &ops, &plan)?;
    let e0 = ops.energy(&psi0);
    let space = *ops.space();
    let mut norms = String::new();
    let mut velocities = String::new();
    let mut snapshots = Vec::new();
    let params = FlowParams::from(&ops);
    let (mut norm_drift, mut energy_drift) = (0.0f64, 0.0f64);
    for (t, psi) in series.times.iter().zip(&series.states) {
        let norm = psi.norm();
        let energy = ops.energy(psi);
        norm_drift = norm_drift.max((norm - 1.0).abs());
        energy_drift = energy_drift.max((energy - e0).abs());
        let masses: Vec<f64> = (0..=space.n_max()).map(|n| psi.sector_norm_sqr(n)).collect();
        let _ = writeln!(
            norms,
            "{t:?},{norm:?},{energy:?},{:?},{:?},{}",
            norm - 1.0,
            energy - e0,
            masses.iter().map(|m| format!("{m:?}")).collect::<Vec<_>>().join(",")
        );
        let guide = GuidingState::new(psi.clone());
        for n in 1..=space.n_max() {
            for idx in 0..space.block_len(n) {
                let sites = space.decode(n, idx);
                let v = match grid_velocity(&guide, &params, &sites) {
                    Ok(v) => v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" "),
                    Err(Error::Node { .. }) => "node".to_string(),
                    Err(e) => return Err(e.into()),
                };
                let _ = writeln!(velocities, "{t:?},{n},{},{v}", sites_field(&sites));
            }
        }
        snapshots.push(json!({
            "t": t,
            "norm": norm,
            "energy": energy,
            "sector_masses": masses,
            "sectors": (0..=space.n_max()).map(|n| complex_pairs(psi.block(n))).collect::<Vec<_>>(),
        }));
    }
    if ctx.wants(Format::Json) {
        ctx.write_json(
            "psi_snapshots.json",
            &json!({
                "schema_version": SCHEMA_VERSION,
                "config_hash": ctx.hash,
                "method": method,
                "grid": space.grid(),
                "n_max": space.n_max(),
                "snapshots": snapshots,
            }),
        )?;
    }
    if ctx.wants(Format::Csv) {
        let masses = (0..=space.n_max())
            .map(|n| format!("mass_{n}"))
            .collect::<Vec<_>>()
            .join(",");
        ctx.write_csv(
            "norms.csv",
            &format!("t,norm,energy,norm_drift,energy_drift,{masses}"),
            &norms,
        )?;
        ctx.write_csv("velocity_field.csv", "t,sector,sites,velocities", &velocities)?;
    }
    println!(
        "evolved {} states with {:?}: max |norm - 1| = {norm_drift:.3e}, max energy drift = {energy_drift:.3e}",
        series.states.len(),
        method
    );
    Ok(())
}

struct EnsembleRun {
    ensemble: Vec<Trajectory>,
    /// The state each sample time is compared against.
    targets: Vec<(f64, FockVector)>,
    report: EquivarianceReport,
}

fn run_and_test(ctx: &Context, ops: &OperatorBlocks, psi0: &FockVector, method: Method) -> Result<EnsembleRun> {
    let cfg = &ctx.config;
    let sim = Simulation::new(ops, psi0, cfg.process_plan(), method)?;
    let ensemble = sim.run_ensemble(cfg.process.trajectories, cfg.process.root_seed, ctx.parallelism)?;
    let targets: Vec<(f64, FockVector)> = cfg
        .sample_times()
        .into_iter()
        .map(|t| {
            let psi = match cfg.analysis.compare_against {
                CompareAgainst::Evolved => sim.mesh().state(sim.mesh().index_of(t).expect("sample time on mesh")),
                CompareAgainst::Initial => psi0,
            };
            (t, psi.clone())
        })
        .collect();
    let refs: Vec<(f64, &FockVector)> = targets.iter().map(|(t, p)| (*t, p)).collect();
    let report = equivariance_test(
        &ensemble,
        &refs,
        &cfg.analysis.thresholds(),
        cfg.analysis.coarse_factor,
        Some(cfg.process.dt),
    )?;
    Ok(EnsembleRun {
        ensemble,
        targets,
        report,
    })
}

fn failures_json(ensemble: &[Trajectory]) -> Vec<serde_json::Value> {
    ensemble
        .iter()
        .filter_map(|t| match &t.status {
            Status::Failed { t: time, reason } => {
                Some(json!({"index": t.index, "seed": t.seed, "t": time, "reason": reason}))
            }
            Status::Completed => None,
        })
        .collect()
}

pub(crate) fn simulate(args: &CommonArgs) -> std::result::Result<(), Failure> {
    let ctx = Context::load(args)?;
    let (ops, psi0, method) = setup(&ctx)?;
    let cfg = &ctx.config;
    let run = run_and_test(&ctx, &ops, &psi0, method)?;
    if ctx.wants(Format::Jsonl) {
        let header = JsonlHeader {
            schema_version: TRAJECTORY_SCHEMA_VERSION,
            config_hash: ctx.hash.clone(),
            root_seed: cfg.process.root_seed,
            trajectories: run.ensemble.len(),
            created_unix: unix_now(),
        };
        let file = fs::File::create(ctx.path("trajectories.jsonl")).map_err(Error::from)?;
        write_jsonl(BufWriter::new(file), &header, &run.ensemble)?;
    }
    if ctx.wants(Format::Csv) {
        let grid = ops.space().grid();
        let coarse = cfg.analysis.coarse_factor;
        let mut body = String::new();
        for (t, target_psi) in &run.targets {
            let t = *t;
            let target = target_distribution(target_psi, coarse)?;
            let samples: Vec<&[f64]> = run
                .ensemble
                .iter()
                .filter(|tr| !tr.is_failed())
                .filter_map(|tr| tr.sample_at(t).map(|s| s.positions.as_slice()))
                .collect();
            let counts = histogram(grid, samples.iter().copied(), coarse);
            let m = samples.len().max(1) as f64;
            let atoms: BTreeSet<_> = target.keys().chain(counts.keys()).cloned().collect();
            for atom in atoms {
                let _ = writeln!(
                    body,
                    "{t:?},{},{},{:?},{:?}",
                    atom.sector(),
                    sites_field(atom.sites()),
                    counts.get(&atom).copied().unwrap_or(0) as f64 / m,
                    target.get(&atom).copied().unwrap_or(0.0)
                );
            }
        }
        ctx.write_csv("histograms.csv", "t,sector,sites,empirical,target", &body)?;
    }
    let count = |k: JumpKind| {
        run.ensemble
            .iter()
            .flat_map(|t| &t.events)
            .filter(|e| e.kind == k)
            .count()
    };
    let failed = run.report.failed;
    let fraction = failed as f64 / run.ensemble.len() as f64;
    if ctx.wants(Format::Json) {
        ctx.write_json(
            "summary.json",
            &json!({
                "schema_version": SCHEMA_VERSION,
                "config_hash": ctx.hash,
                "trajectories": run.ensemble.len(),
                "failed": failed,
                "failure_fraction": fraction,
                "failures": failures_json(&run.ensemble),
                "events": {
                    "creation": count(JumpKind::Creation),
                    "annihilation": count(JumpKind::Annihilation),
                    "hop": count(JumpKind::Hop),
                },
                "equivariance": run.report,
            }),
        )?;
    }
    println!(
        "{} trajectories, {failed} failed; events: {} creation, {} annihilation, {} hop",
        run.ensemble.len(),
        count(JumpKind::Creation),
        count(JumpKind::Annihilation),
        count(JumpKind::Hop)
    );
    for r in &run.report.times {
        println!(
            "t = {}: TV = {:.4}, chi-square p = {:.4}",
            r.t, r.tv, r.chi_square.p_value
        );
    }
    if fraction >= MAX_FAILURE_FRACTION {
        return Err(Failure::verification(format!(
            "{failed} of {} trajectories failed (limit {:.0}%)",
            run.ensemble.len(),
            100.0 * MAX_FAILURE_FRACTION
        )));
    }
    Ok(())
}

/// Grid configurations used for the formula comparisons: every
/// configuration of small spaces, an even spread otherwise.
fn probe_configurations(ops: &OperatorBlocks) -> Vec<Vec<usize>> {
    const LIMIT: usize = 200;
    let atoms = ops.space().all_atoms();
    let stride = atoms.len().div_ceil(LIMIT).max(1);
    atoms.into_iter().step_by(stride).map(|a| a.sites().to_vec()).collect()
}

pub(crate) fn verify(args: &CommonArgs) -> std::result::Result<(), Failure> {
    let ctx = Context::load(args)?;
    let (ops, psi0, method) = setup(&ctx)?;
    let cfg = &ctx.config;
    let series = evolve_state(&psi0, &ops, &cfg.propagator_plan(method))?;
    let identities = series
        .times
        .iter()
        .zip(&series.states)
        .map(|(t, psi)| Ok((*t, generator_identity_check(psi, &ops)?)))
        .collect::<Result<Vec<_>>>()?;
    let last = series.states.last().expect("at least one sample time");
    let pv = pv_equivalence_check(last, &ops, &probe_configurations(&ops))?;
    let run = run_and_test(&ctx, &ops, &psi0, method)?;
    let identity_ok = identities.iter().all(|(_, r)| r.passed);
    let passed = identity_ok && pv.passed && run.report.passed;
    let mut text = String::new();
    for (t, r) in &identities {
        let _ = writeln!(
            text,
            "generator identity t={t}: max error {:.3e} (tolerance {:.0e}) {}",
            r.max_error,
            r.tolerance,
            verdict(r.passed)
        );
    }
    for c in &pv.checks {
        let _ = writeln!(
            text,
            "{}: {:.3e} (tolerance {:.0e}) {}",
            c.name,
            c.value,
            c.tolerance,
            verdict(c.passed)
        );
    }
    for r in &run.report.times {
        let _ = writeln!(
            text,
            "equivariance t={}: TV {:.4} (max {}), chi-square p {:.4} (min {}) over {} samples {}",
            r.t,
            r.tv,
            run.report.thresholds.tv_max,
            r.chi_square.p_value,
            run.report.thresholds.p_min,
            r.samples,
            verdict(r.passed)
        );
    }
    let _ = writeln!(
        text,
        "failed trajectories excluded: {} of {}",
        run.report.failed, run.report.ensemble_size
    );
    let _ = writeln!(text, "overall: {}", verdict(passed));
    if ctx.wants(Format::Json) {
        ctx.write_json(
            "verify_report.json",
            &json!({
                "schema_version": SCHEMA_VERSION,
                "config_hash": ctx.hash,
                "generator_identity": identities.iter().map(|(t, r)| json!({"t": t, "report": r})).collect::<Vec<_>>(),
                "pv_equivalence": pv,
                "equivariance": run.report,
                "failures": failures_json(&run.ensemble),
                "passed": passed,
            }),
        )?;
    }
    fs::write(
        ctx.path("verify_report.txt"),
        format!("config_hash={}\n{text}", ctx.hash),
    )
    .map_err(Error::from)?;
    print!("{text}");
    if passed {
        Ok(())
    } else {
        Err(Failure::verification("verification failed"))
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

pub(crate) fn rates(args: &RatesArgs) -> std::result::Result<(), Failure> {
    let ctx = Context::load(&args.common)?;
    let (ops, psi0, method) = setup(&ctx)?;
    let grid = *ops.space().grid();
    if !(args.time.is_finite() && args.time >= 0.0) {
        return Err(Error::validation("time", "must be nonnegative").into());
    }
    let q = Configuration::new(args.positions.clone(), &grid)?;
    if q.len() > ops.space().n_max() {
        return Err(Error::validation("positions", "more particles than n_max").into());
    }
    let plan = crate::propagator::PropagatorPlan {
        sample_times: vec![args.time],
        t_final: args.time,
        ..ctx.config.propagator_plan(method)
    };
    let psi = evolve_state(&psi0, &ops, &plan)?.states.remove(0);
    let guide = GuidingState::new(psi);
    let row = match ctx.config.process.mode {
        ProcessMode::Continuum => jump_rates(&guide, &ops, &q)?,
        ProcessMode::Lattice => lattice_rates(&guide, &ops, &q)?,
    };
    let velocity = if q.is_empty() {
        None
    } else {
        match velocity_bohm(&guide, &FlowParams::from(&ops), &q) {
            Ok(v) => Some(v.velocity),
            Err(Error::Node { .. }) => None,
            Err(e) => return Err(e.into()),
        }
    };
    let out = json!({
        "schema_version": SCHEMA_VERSION,
        "config_hash": ctx.hash,
        "t": args.time,
        "mode": ctx.config.process.mode,
        "positions": q.positions(),
        "rates": row,
        "velocity": velocity,
    });
    if ctx.wants(Format::Json) {
        ctx.write_json("rates.json", &out)?;
    }
    // A closed pipe (e.g. `| head`) is not an error for this command.
    let _ = writeln!(
        std::io::stdout().lock(),
        "{}",
        serde_json::to_string_pretty(&out).map_err(Error::from)?
    );
    Ok(())
}

pub(crate) fn dirac_demo(args: &CommonArgs) -> std::result::Result<(), Failure> {
    let ctx = Context::load(args)?;
    let cfg = &ctx.config;
    if cfg.model.mode != ModelMode::Dirac1p {
        return Err(Error::validation("model.mode", "dirac-demo needs dirac_1p").into());
    }
    let grid = cfg.model.grid;
    let spinor = cfg.initial_state.build_spinor(&grid)?;
    let InitialState::SpinorPacket { center, .. } = cfg.initial_state else {
        unreachable!("build_spinor accepted the state")
    };
    let h = build_dirac(&grid, &cfg.model.dirac, cfg.model.hbar);
    let plan = cfg.process_plan();
    plan.validate()?;
    let steps = plan.steps();
    let method = cfg.method_for(2 * grid.n_sites());
    let states = evolve_on_mesh(&h, cfg.model.hbar, &spinor, method, plan.dt / 2.0, 2 * steps + 1)?;
    let path = integrate_dirac_path(&states, plan.dt / 2.0, &grid, cfg.model.dirac.c, center)?;
    let c = cfg.model.dirac.c;
    let violations = path.iter().filter(|p| p.v.abs() > c * (1.0 + 1e-12)).count();
    if ctx.wants(Format::Csv) {
        let mut body = String::new();
        for p in &path {
            let _ = writeln!(body, "{:?},{:?},{:?}", p.t, p.x, p.v);
        }
        ctx.write_csv("dirac_path.csv", "t,x,v", &body)?;
    }
    let vmax = path.iter().map(|p| p.v.abs()).fold(0.0, f64::max);
    println!(
        "{} path points, max |v| = {vmax} (c = {c}), {violations} exceed c",
        path.len()
    );
    if violations > 0 {
        return Err(Failure::verification(format!(
            "{violations} path points move faster than c"
        )));
    }
    Ok(())
}
