use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use polymatch::baselines::{aggregate_ave, aggregate_pwe, PairwiseLossKind};
use polymatch::experiments::bench::{run_bench, BenchGrid, BenchRecord};
use polymatch::experiments::flow::{run_flow, FlowConfig, FlowInit};
use polymatch::experiments::train::{run_train, SyntheticTrainConfig, TrainLoss, TrainMetrics};
use polymatch::io::{load_embeddings, load_tensor, save_embeddings, save_tensor};
use polymatch::{m3g, m3g_gradient, mm_sinkhorn, Error, MultiwayCost, SolverConfig};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::args::{BenchArgs, Command, CompareArgs, FlowArgs, M3gArgs, SolveArgs, TrainArgs, TrainOptions};

#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Invalid(e.to_string())
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Invalid(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

pub fn run(command: Command) -> CliResult {
    match command {
        Command::Solve(a) => solve(with_config(a, |a| &mut a.common)?),
        Command::M3g(a) => score(with_config(a, |a| &mut a.common)?),
        Command::Flow(a) => flow(with_config(a, |a| &mut a.common)?),
        Command::Train(a) => train(with_config(a, |a| &mut a.common)?),
        Command::Bench(a) => bench(with_config(a, |a| &mut a.common)?),
        Command::Compare(a) => compare(with_config(a, |a| &mut a.common)?),
    }
}

/// Fills unset flags from the `--config` JSON object. Keys must name
/// existing flags.
fn with_config<T>(args: T, common: impl Fn(&mut T) -> &mut crate::args::Common) -> CliResult<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let mut args = args;
    let Some(path) = common(&mut args).config.clone() else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Invalid(format!("--config {}: {e}", path.display())))?;
    let file: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Invalid(format!("--config {}: {e}", path.display())))?;
    let Value::Object(mut merged) = file else {
        return Err(CliError::Invalid(format!("--config {}: expected a JSON object", path.display())));
    };
    let known = as_object(&T::default())?;
    if let Some(key) = merged.keys().find(|k| !known.contains_key(*k)) {
        return Err(CliError::Invalid(format!("--config {}: unknown field `{key}`", path.display())));
    }
    for (key, value) in as_object(&args)? {
        if !value.is_null() {
            merged.insert(key, value);
        }
    }
    let saved = std::mem::take(common(&mut args));
    let mut out: T = serde_json::from_value(Value::Object(merged))
        .map_err(|e| CliError::Invalid(format!("--config {}: {e}", path.display())))?;
    *common(&mut out) = saved;
    Ok(out)
}

fn as_object<T: Serialize>(value: &T) -> CliResult<Map<String, Value>> {
    match serde_json::to_value(value) {
        Ok(Value::Object(map)) => Ok(map),
        _ => Err(CliError::Invalid("arguments do not serialize to an object".into())),
    }
}

fn required<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Invalid(format!("missing required flag --{flag}")))
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| CliError::Invalid(format!("--out {}: {e}", path.display()))),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn emit_json(out: Option<&Path>, value: &impl Serialize) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Invalid(e.to_string()))?;
    text.push('\n');
    emit(out, &text)
}

fn solver_config(epsilon: Option<f64>, tol: Option<f64>, max_iters: Option<usize>) -> SolverConfig {
    let base = SolverConfig::default();
    SolverConfig::new(epsilon.unwrap_or(base.epsilon))
        .with_tolerance(tol.unwrap_or(base.tolerance))
        .with_max_iterations(max_iters.unwrap_or(base.max_iterations))
}

fn solve(a: SolveArgs) -> CliResult {
    let cost = load_tensor(required(a.cost_file, "cost-file")?)?;
    let cfg = solver_config(a.epsilon, a.tol, a.max_iters);
    let report = mm_sinkhorn(&cost, &cfg)?;
    if let Some(path) = &a.coupling {
        save_tensor(path, &report.coupling)?;
    }
    let potentials: Vec<Vec<f64>> = report
        .potentials
        .as_array()
        .outer_iter()
        .map(|row| row.to_vec())
        .collect();
    emit_json(
        a.common.out.as_deref(),
        &json!({
            "k": cost.shape().k(),
            "n": cost.shape().n(),
            "epsilon": cfg.epsilon,
            "ot_value": report.ot_value,
            "iterations": report.iterations,
            "delta": report.marginal_deviation,
            "marginal_deviation": report.marginal_deviation,
            "converged": report.converged,
            "duality_gap": report.duality_gap(&cost)?,
            "potentials": potentials,
        }),
    )
}

fn score(a: M3gArgs) -> CliResult {
    let x = load_embeddings(required(a.embeddings, "embeddings")?)?;
    let cost = MultiwayCost::from_label(a.cost.as_deref().unwrap_or("cv"))?;
    let cfg = solver_config(a.epsilon, a.tol, a.max_iters);
    let (result, gradient_norm) = match &a.grad {
        Some(path) => {
            let g = m3g_gradient(&x, &cost, &cfg)?;
            save_embeddings(path, g.gradient.as_array())?;
            let norm = g.gradient.norm();
            (g.result, Some(norm))
        }
        None => (m3g(&x, &cost, &cfg)?, None),
    };
    if !result.loss.is_finite() {
        return Err(CliError::Numerical(format!("loss is {}", result.loss)));
    }
    let d = &result.diagnostics;
    emit_json(
        a.common.out.as_deref(),
        &json!({
            "k": x.k(),
            "n": x.n(),
            "d": x.d(),
            "cost": cost.label(),
            "epsilon": cfg.epsilon,
            "loss": result.loss,
            "ground_truth_cost": result.ground_truth_cost,
            "primal_value": result.primal_value,
            "ot_value": result.ot_value,
            "delta": d.delta,
            "iterations": d.iterations,
            "converged": d.converged,
            "clamped_entries": d.clamped_entries,
            "gradient_norm": gradient_norm,
        }),
    )
}

fn flow(a: FlowArgs) -> CliResult {
    let mut cfg = match a.preset.as_deref() {
        Some("paper_fig1") => FlowConfig::paper_fig1(),
        Some(other) => return Err(CliError::Invalid(format!("--preset: unknown preset {other:?}"))),
        None => FlowConfig {
            n: 8,
            k: 3,
            d: 3,
            epsilon: 0.2,
            cost: "cv".into(),
            step_size: 0.05,
            steps: 100,
            seed: 0,
            init: FlowInit::RandomSphere,
            tolerance: 1e-6,
            max_iterations: 10_000,
        },
    };
    macro_rules! set {
        ($($field:ident <- $value:expr),*) => {$(if let Some(v) = $value { cfg.$field = v; })*};
    }
    set!(n <- a.n, k <- a.k, d <- a.d, epsilon <- a.epsilon, cost <- a.cost,
        step_size <- a.step_size, steps <- a.steps, seed <- a.seed,
        tolerance <- a.tol, max_iterations <- a.max_iters);
    let trajectory = match run_flow(&cfg) {
        Ok(t) => t,
        Err(Error::Diverged { step, last_finite }) => {
            let dump = dump_path(a.common.out.as_deref());
            save_embeddings(&dump, &last_finite)?;
            return Err(CliError::Numerical(format!(
                "flow diverged at step {step}; last finite state written to {}",
                dump.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(path) = &a.final_embeddings {
        save_embeddings(path, trajectory.final_embeddings.as_array())?;
    }
    emit(a.common.out.as_deref(), &trajectory.to_csv())
}

fn dump_path(out: Option<&Path>) -> PathBuf {
    match out {
        Some(p) => p.with_extension("diverged.pme"),
        None => PathBuf::from("flow.diverged.pme"),
    }
}

fn train_config(opts: &TrainOptions, loss: TrainLoss) -> SyntheticTrainConfig {
    let mut cfg = SyntheticTrainConfig {
        loss,
        ..Default::default()
    };
    macro_rules! set {
        ($($field:ident),*) => {$(if let Some(v) = opts.$field { cfg.$field = v; })*};
    }
    set!(clusters, samples_per_cluster, test_per_cluster, views, input_dim, hidden_dim,
        embed_dim, view_noise, epochs, batch, learning_rate, momentum, ema, epsilon, tau, seed);
    cfg
}

fn train_one(cfg: &SyntheticTrainConfig) -> CliResult<TrainMetrics> {
    let metrics = run_train(cfg)?;
    if !metrics.final_train_loss.is_finite() && cfg.epochs > 0 {
        return Err(CliError::Numerical(format!("training loss is {}", metrics.final_train_loss)));
    }
    Ok(metrics)
}

fn train(a: TrainArgs) -> CliResult {
    let loss = TrainLoss::from_label(a.loss.as_deref().unwrap_or("m3g"))?;
    let cfg = train_config(&a.train, loss);
    let metrics = train_one(&cfg)?;
    emit_json(a.common.out.as_deref(), &json!({ "config": cfg, "metrics": metrics }))
}

fn bench(a: BenchArgs) -> CliResult {
    let mut grid = BenchGrid::default();
    macro_rules! set {
        ($($field:ident <- $value:expr),*) => {$(if let Some(v) = $value { grid.$field = v; })*};
    }
    set!(ns <- a.n, ks <- a.k, epsilons <- a.epsilon, d <- a.d, cost <- a.cost,
        tolerance <- a.tol, max_iterations <- a.max_iters, max_elements <- a.max_elements,
        seed <- a.seed);
    grid.validate()?;
    let mut sink: Box<dyn Write> = match &a.common.out {
        Some(path) => Box::new(
            fs::File::create(path).map_err(|e| CliError::Invalid(format!("--out {}: {e}", path.display())))?,
        ),
        None => Box::new(io::stdout()),
    };
    writeln!(sink, "{}", BenchRecord::CSV_HEADER)?;
    sink.flush()?;
    let summary = run_bench(&grid, |record| {
        sink.write_all(format!("{}\n", record.csv_row()).as_bytes())?;
        sink.flush()?;
        Ok(())
    })?;
    for (n, k) in &summary.skipped {
        eprintln!("skipped n={n} k={k}: tensor exceeds {} entries", grid.max_elements);
    }
    if let Some(v) = summary.violations.first() {
        return Err(CliError::Numerical(format!(
            "{} monotonicity violation(s); first at n={} k={}: epsilon={} took {} iterations, epsilon={} took {}",
            summary.violations.len(),
            v.n,
            v.k,
            v.small_epsilon,
            v.small_iterations,
            v.large_epsilon,
            v.large_iterations
        )));
    }
    Ok(())
}

fn compare(a: CompareArgs) -> CliResult {
    let losses = match &a.losses {
        Some(labels) => labels
            .iter()
            .map(|l| TrainLoss::from_label(l))
            .collect::<Result<Vec<_>, _>>()?,
        None => TrainLoss::ALL.to_vec(),
    };
    let base = train_config(&a.train, TrainLoss::M3g);
    let rows: Vec<Value> = match &a.embeddings {
        Some(path) => {
            let x = load_embeddings(path)?;
            let solver = SolverConfig::new(base.epsilon);
            let infonce = PairwiseLossKind::infonce(base.tau);
            losses
                .iter()
                .map(|&loss| {
                    let value = match loss {
                        TrainLoss::M3g => m3g(&x, &MultiwayCost::cv(), &solver)?.loss,
                        TrainLoss::InfoncePwe => aggregate_pwe(x.as_array(), infonce)?,
                        TrainLoss::InfonceAve => aggregate_ave(x.as_array(), infonce, false)?,
                        TrainLoss::ByolPwe => aggregate_pwe(x.as_array(), PairwiseLossKind::Byol)?,
                        TrainLoss::ByolAve => aggregate_ave(x.as_array(), PairwiseLossKind::Byol, false)?,
                    };
                    Ok(json!({ "loss": loss.label(), "value": value }))
                })
                .collect::<CliResult<_>>()?
        }
        None => losses
            .iter()
            .map(|&loss| {
                let cfg = SyntheticTrainConfig { loss, ..base.clone() };
                Ok(json!({ "loss": loss.label(), "metrics": train_one(&cfg)? }))
            })
            .collect::<CliResult<_>>()?,
    };
    let mode = if a.embeddings.is_some() { "score" } else { "train" };
    emit_json(a.common.out.as_deref(), &json!({ "mode": mode, "results": rows }))
}
