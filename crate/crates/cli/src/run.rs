use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use mptp_core::bridge::{average_paths, perturb_path, simulate_bridge, BridgeConfig, BridgeVariant};
use mptp_core::inverse::{
    train_nonparametric, train_parametric, DriftAnchor, NonParamConfig, ObservationSet, ParamInverseConfig,
};
use mptp_core::pinn::{train_forward, ForwardConfig};
use mptp_core::{
    fw_action, fw_energy_profile, om_action, solve_el_collocation, CollocationProblem, DriftModel, ElResidualSpec,
    Error, Framework, NoiseSpec, PathSample,
};
use serde_json::{json, Map, Value};

use crate::config::{
    BridgeSolver, ExperimentConfig, ForwardSolver, NonParamSolver, ObservationSpec, OracleSolver, ParamSolver,
};
use crate::io;
use crate::{report, CliError, Command};

#[derive(Debug, Clone)]
pub struct Overrides {
    pub command: Command,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub result: Value,
}

/// What a command hands back for `result.json`.
pub(crate) struct Payload {
    pub fields: Map<String, Value>,
    /// Set when the run finished with partial artifacts after a numerical
    /// failure.
    pub failure: Option<String>,
}

impl Payload {
    fn ok(fields: Map<String, Value>) -> Self {
        Self { fields, failure: None }
    }
}

pub(crate) struct Ctx<'a> {
    pub cfg: &'a ExperimentConfig,
    pub base: &'a Path,
    pub out: &'a Path,
    pub seed: u64,
}

impl Ctx<'_> {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

/// Runs one experiment and writes `result.json` into the output directory.
/// Numerical failures still write their partial artifacts before the
/// error is returned.
pub fn run_experiment(config_path: &Path, ov: &Overrides) -> Result<RunOutcome, CliError> {
    let (cfg, mut echo) = ExperimentConfig::load(config_path)?;
    if let Some(c) = cfg.command {
        if c != ov.command {
            return Err(CliError::Config(format!(
                "config is for `{}` but `{}` was requested",
                c.name(),
                ov.command.name()
            )));
        }
    }
    let base = config_path.parent().unwrap_or(Path::new("."));
    let out = match (&ov.out, &cfg.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => base.join(o),
        (None, None) => return Err(CliError::Config("no output directory: set `output_dir` or pass --out".into())),
    };
    let seed = ov.seed.unwrap_or(cfg.seed);
    echo["seed"] = json!(seed);
    std::fs::create_dir_all(&out).map_err(|e| CliError::File { path: out.clone(), source: e })?;

    let ctx = Ctx { cfg: &cfg, base, out: &out, seed };
    let start = Instant::now();
    info!("{} -> {}", ov.command.name(), out.display());
    let payload = match ov.command {
        Command::Forward => forward(&ctx)?,
        Command::Oracle => oracle(&ctx)?,
        Command::Bridge => bridge(&ctx)?,
        Command::InverseParam => inverse_param(&ctx)?,
        Command::InverseNonparam => inverse_nonparam(&ctx)?,
        Command::Report => report::report(&ctx)?,
    };
    let mut result = payload.fields;
    result.insert("command".into(), json!(ov.command.name()));
    result.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    result.insert("seed".into(), json!(seed));
    result.insert("status".into(), json!(if payload.failure.is_some() { "diverged" } else { "ok" }));
    result.insert("failure".into(), json!(payload.failure));
    result.insert("config".into(), echo);
    result.insert("wall_time_s".into(), json!(start.elapsed().as_secs_f64()));
    let result = Value::Object(result);
    std::fs::write(out.join("result.json"), serde_json::to_string_pretty(&result)?)?;
    if let Some(msg) = payload.failure {
        return Err(CliError::Divergence(msg));
    }
    Ok(RunOutcome { output_dir: out, result })
}

fn path_action(path: &PathSample, model: &DriftModel, noise: &NoiseSpec) -> Result<f64, CliError> {
    Ok(match noise.framework {
        Framework::Fw => fw_action(path, model)?,
        Framework::Om => om_action(path, model, noise)?,
    })
}

fn forward(ctx: &Ctx) -> Result<Payload, CliError> {
    let cfg = ctx.cfg;
    let s: ForwardSolver = cfg.solver()?;
    let model = cfg.system()?.clone();
    let noise = cfg.noise()?;
    let bc = cfg.bc()?.clone();
    let mut fc = ForwardConfig::new(model.clone(), noise.clone(), bc.clone());
    fc.seed = ctx.seed;
    fc.m = s.m.unwrap_or(fc.m);
    fc.lambda_r = s.lambda_r.unwrap_or(fc.lambda_r);
    fc.lambda_b = s.lambda_b.unwrap_or(fc.lambda_b);
    fc.iterations = s.iterations.unwrap_or(fc.iterations);
    fc.lr = s.lr.unwrap_or(fc.lr);
    fc.hidden = s.hidden.unwrap_or(fc.hidden);
    fc.regularizer = s.regularizer;
    fc.output_nodes = s.output_nodes.unwrap_or(fc.output_nodes);
    fc.record_every = s.record_every.unwrap_or(fc.record_every);

    let run = train_forward(&fc)?;
    io::write_path(&ctx.out.join("path.csv"), &run.path)?;
    io::write_forward_history(&ctx.out.join("history.csv"), &run.history)?;
    run.net.save(&ctx.out.join("net.json"))?;

    let p = &run.path;
    let boundary_error: f64 = [(p.state(0), &bc.x0), (p.state(p.len() - 1), &bc.xt)]
        .iter()
        .map(|(a, b)| a.iter().zip(b.iter()).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt())
        .sum();
    let mut f = Map::new();
    if let Some(r) = run.history.last() {
        f.insert(
            "final_losses".into(),
            json!({"total": r.total, "residual": r.residual, "boundary": r.boundary, "regularizer": r.regularizer}),
        );
    }
    f.insert("metrics".into(), json!({"boundary_error": boundary_error, "action": path_action(p, &model, &noise)?}));
    f.insert("path_file".into(), json!("path.csv"));
    f.insert("history_file".into(), json!("history.csv"));
    f.insert("diverged_at".into(), json!(run.diverged_at));
    let failure = run.diverged_at.map(|i| format!("non-finite loss at iteration {i}"));
    Ok(Payload { fields: f, failure })
}

fn collocation_problem(
    cfg: &ExperimentConfig,
    n: Option<usize>,
    continuation: Option<usize>,
) -> Result<CollocationProblem, CliError> {
    let spec = ElResidualSpec::new(cfg.system()?.clone(), cfg.noise()?)?;
    let mut p = CollocationProblem::new(spec, cfg.bc()?.clone(), n.unwrap_or(2001))?;
    p.continuation_steps = continuation.unwrap_or(p.continuation_steps);
    Ok(p)
}

fn oracle(ctx: &Ctx) -> Result<Payload, CliError> {
    let cfg = ctx.cfg;
    let s: OracleSolver = cfg.solver()?;
    let mut p = collocation_problem(cfg, s.n, s.continuation_steps)?;
    p.tol = s.tol.unwrap_or(p.tol);
    p.max_newton_iters = s.max_newton_iters.unwrap_or(p.max_newton_iters);
    p.validate()?;
    let model = cfg.system()?;
    let noise = cfg.noise()?;
    let mut f = Map::new();
    f.insert("path_file".into(), json!("path.csv"));
    let (path, failure) = match solve_el_collocation(&p, None) {
        Ok(sol) => {
            f.insert("max_residual".into(), json!(sol.max_residual));
            f.insert("newton_iterations".into(), json!(sol.newton_iterations));
            (sol.path, None)
        }
        Err(e @ Error::Stagnation { .. }) => {
            let msg = e.to_string();
            let Error::Stagnation { best, residual, .. } = e else { unreachable!() };
            f.insert("max_residual".into(), json!(residual));
            (*best, Some(msg))
        }
        Err(e) => return Err(e.into()),
    };
    io::write_path(&ctx.out.join("path.csv"), &path)?;
    let mut metrics = json!({"action": path_action(&path, model, &noise)?});
    if noise.framework == Framework::Fw && noise.amplitudes.iter().all(|&a| a == 1.0) {
        let e = fw_energy_profile(&path, model)?;
        let spread = e.iter().copied().fold(f64::NEG_INFINITY, f64::max) - e.iter().copied().fold(f64::INFINITY, f64::min);
        metrics["energy_spread"] = json!(spread);
    }
    f.insert("metrics".into(), metrics);
    Ok(Payload { fields: f, failure })
}

fn bridge_config(cfg: &ExperimentConfig, s: &BridgeSolver, seed: u64) -> Result<BridgeConfig, CliError> {
    let variant = s.variant.unwrap_or(match cfg.noise()?.framework {
        Framework::Fw => BridgeVariant::FwSmallNoise,
        Framework::Om => BridgeVariant::OmShortTime,
    });
    let mut bc = BridgeConfig::new(cfg.system()?.clone(), cfg.bc()?.clone(), variant);
    bc.eps = s.eps.unwrap_or(bc.eps);
    bc.n_steps = s.n_steps.unwrap_or(bc.n_steps);
    bc.n_paths = s.n_paths.unwrap_or(bc.n_paths);
    bc.n_quad = s.n_quad.unwrap_or(bc.n_quad);
    bc.seed = seed;
    bc.validate()?;
    Ok(bc)
}

fn bridge(ctx: &Ctx) -> Result<Payload, CliError> {
    let s: BridgeSolver = ctx.cfg.solver()?;
    let bc = bridge_config(ctx.cfg, &s, ctx.seed)?;
    let ens = simulate_bridge(&bc)?;
    let dir = ctx.out.join("ensemble");
    for (i, p) in ens.paths.iter().enumerate() {
        io::write_path(&dir.join(format!("path_{i:03}.csv")), p)?;
    }
    let mut f = Map::new();
    let failures: Vec<Value> =
        ens.failures.iter().map(|e| json!({"path_index": e.path_index, "step": e.step})).collect();
    f.insert("n_paths".into(), json!(ens.paths.len()));
    f.insert("failures".into(), Value::Array(failures));
    if ens.paths.is_empty() {
        return Ok(Payload { fields: f, failure: Some("every bridge path became non-finite".into()) });
    }
    let mean = average_paths(&ens.paths)?;
    io::write_path(&dir.join("mean.csv"), &mean)?;
    io::write_path(&ctx.out.join("path.csv"), &mean)?;
    f.insert("path_file".into(), json!("path.csv"));
    f.insert("variant".into(), serde_json::to_value(bc.variant)?);
    f.insert("eps".into(), json!(bc.eps));
    Ok(Payload::ok(f))
}

/// Observations for the inverse commands; synthetic sources are generated
/// from `system` and optionally perturbed with multiplicative noise.
fn observations(ctx: &Ctx, spec: &ObservationSpec) -> Result<ObservationSet, CliError> {
    let cfg = ctx.cfg;
    let (path, n_obs, eta) = match spec {
        ObservationSpec::File { path } => return io::read_observations(&ctx.resolve(path)),
        ObservationSpec::Oracle { n_obs, nodes, continuation_steps, eta } => {
            let p = collocation_problem(cfg, *nodes, *continuation_steps)?;
            (solve_el_collocation(&p, None)?.path, *n_obs, *eta)
        }
        ObservationSpec::BridgeMean { n_obs, bridge, eta } => {
            let ens = simulate_bridge(&bridge_config(cfg, bridge, ctx.seed)?)?;
            if ens.paths.is_empty() {
                return Err(CliError::Divergence("every bridge path became non-finite".into()));
            }
            (average_paths(&ens.paths)?, *n_obs, *eta)
        }
    };
    let obs = ObservationSet::subsample(&path, n_obs)?.to_path()?;
    let obs = if eta > 0.0 { perturb_path(&obs, eta, ctx.seed)? } else { obs };
    Ok(ObservationSet::from_path(&obs)?)
}

fn inverse_param(ctx: &Ctx) -> Result<Payload, CliError> {
    let cfg = ctx.cfg;
    let s: ParamSolver = cfg.solver()?;
    let truth = cfg.system()?;
    let kind = truth.kind();
    let names = kind.param_names();
    for k in s.beta_init.keys().chain(s.trainable.iter().flatten()) {
        if !names.contains(&k.as_str()) {
            return Err(CliError::Config(format!("unknown parameter `{k}` for {}", kind.name())));
        }
    }
    let init = names
        .iter()
        .map(|n| s.beta_init.get(*n).copied().ok_or_else(|| CliError::Config(format!("beta_init is missing `{n}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    let mut pc = ParamInverseConfig::new(kind, truth.dim(), cfg.noise()?, init);
    if let Some(t) = &s.trainable {
        pc.trainable = names.iter().map(|n| t.iter().any(|x| x == n)).collect();
    }
    pc.lambda_r = s.lambda_r.unwrap_or(pc.lambda_r);
    pc.lambda_d = s.lambda_d.unwrap_or(pc.lambda_d);
    pc.iterations = s.iterations.unwrap_or(pc.iterations);
    pc.lr = s.lr.unwrap_or(pc.lr);
    pc.beta_lr = s.beta_lr.or(pc.beta_lr);
    pc.m = s.m.unwrap_or(pc.m);
    pc.hidden = s.hidden.unwrap_or(pc.hidden);
    pc.record_every = s.record_every.unwrap_or(pc.record_every);
    pc.seed = ctx.seed;

    let obs = observations(ctx, &s.observations)?;
    io::write_path(&ctx.out.join("observations.csv"), &obs.to_path()?)?;
    let run = train_parametric(&pc, &obs)?;
    io::write_path(&ctx.out.join("path.csv"), &run.path)?;
    io::write_param_history(&ctx.out.join("history.csv"), names, &run.history)?;
    run.net.save(&ctx.out.join("net.json"))?;

    let named = |v: &[f64]| -> Map<String, Value> { names.iter().zip(v).map(|(n, x)| (n.to_string(), json!(x))).collect() };
    let rel: Vec<f64> = run
        .beta
        .iter()
        .zip(truth.params())
        .map(|(b, t)| if *t == 0.0 { b.abs() } else { ((b - t) / t).abs() })
        .collect();
    let mut f = Map::new();
    f.insert("beta".into(), Value::Object(named(&run.beta)));
    f.insert("truth".into(), Value::Object(named(truth.params())));
    f.insert("rel_error".into(), Value::Object(named(&rel)));
    if let Some(r) = run.history.last() {
        f.insert("final_losses".into(), json!({"total": r.total, "residual": r.residual, "data": r.data}));
    }
    f.insert("path_file".into(), json!("path.csv"));
    f.insert("history_file".into(), json!("history.csv"));
    f.insert("diverged_at".into(), json!(run.diverged_at));
    let failure = run.diverged_at.map(|i| format!("non-finite loss at iteration {i}"));
    Ok(Payload { fields: f, failure })
}

fn inverse_nonparam(ctx: &Ctx) -> Result<Payload, CliError> {
    let cfg = ctx.cfg;
    let s: NonParamSolver = cfg.solver()?;
    let truth = cfg.system()?;
    let noise = cfg.noise()?;
    let mut anchors = match &s.anchors.file {
        Some(p) => io::read_anchors(&ctx.resolve(p))?,
        None => Vec::new(),
    };
    for &x in s.anchors.at.iter().flatten() {
        anchors.push(DriftAnchor { x: vec![x], f: truth.drift(&[x])? });
    }
    let obs = observations(ctx, &s.observations)?.with_anchors(anchors)?;
    let mut nc = NonParamConfig { seed: ctx.seed, ..NonParamConfig::default() };
    nc.hidden = s.hidden.unwrap_or(nc.hidden);
    nc.gamma1 = s.gamma1.unwrap_or(nc.gamma1);
    nc.gamma2 = s.gamma2.unwrap_or(nc.gamma2);
    nc.iterations = s.iterations.unwrap_or(nc.iterations);
    nc.lr = s.lr.unwrap_or(nc.lr);
    nc.record_every = s.record_every.unwrap_or(nc.record_every);

    io::write_path(&ctx.out.join("observations.csv"), &obs.to_path()?)?;
    io::write_anchors(&ctx.out.join("anchors.csv"), &obs.anchors)?;
    let run = train_nonparametric(&obs, &noise, &nc)?;
    io::write_nonparam_history(&ctx.out.join("history.csv"), &run.history)?;
    run.drift.net().save(&ctx.out.join("net.json"))?;

    // learned and true drift over the observed range
    let lo = obs.states().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = obs.states().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = s.curve_nodes.unwrap_or(201).max(2);
    let mut rows = Vec::with_capacity(n);
    let (mut sq, mut linf) = (0.0, 0.0f64);
    for i in 0..n {
        let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        let (fl, ft) = (run.drift.drift(x)?, truth.drift(&[x])?[0]);
        sq += (fl - ft).powi(2);
        linf = linf.max((fl - ft).abs());
        rows.push(vec![io::fmt(x), io::fmt(fl), io::fmt(ft)]);
    }
    io::write_table(&ctx.out.join("drift.csv"), &["x", "f_learned", "f_true"], &rows)?;

    let mut f = Map::new();
    if let Some(r) = run.history.last() {
        f.insert(
            "final_losses".into(),
            json!({"total": r.total, "ode": r.ode, "drift": r.drift, "weight": r.weight}),
        );
    }
    f.insert("metrics".into(), json!({"drift_rmse": (sq / n as f64).sqrt(), "drift_linf": linf, "range": [lo, hi]}));
    f.insert("drift_file".into(), json!("drift.csv"));
    f.insert("history_file".into(), json!("history.csv"));
    f.insert("diverged_at".into(), json!(run.diverged_at));
    let failure = run.diverged_at.map(|i| format!("non-finite loss at iteration {i}"));
    Ok(Payload { fields: f, failure })
}
