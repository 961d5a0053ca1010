//! Command-line front end: eight subcommands over one validated
//! configuration.
//!
//! Configuration precedence, lowest to highest: built-in defaults, the
//! `--config` JSON file, `PROGEX_*` environment variables (double
//! underscore for nesting, e.g. `PROGEX_TRAIN__LR=0.001`), repeated
//! `--set key=value` flags, then the dedicated flags such as `--seed`.
//! The fully resolved document is validated before any command touches
//! the filesystem, so an invalid configuration never partially runs.
//!
//! Exit codes: 0 success, 1 user error, 2 internal error.

use std::collections::BTreeSet;
use std::fs;
use std::io::Read;
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand_chacha::ChaCha8Rng;

use crate::config::{prepare_run_dir, RunConfig, TrainTarget};
use crate::dsl::{
    format_program, parse_program, validate_program, Dialect, OutputType, Program, Severity,
};
use crate::executor::{argmax, Model, PolicyStepper};
use crate::gridworld::{resolve_action, GridWorld};
use crate::oracle::{execute_reasoning, plan, TraceItem, Value};
use crate::rng::seeded_rng;
use crate::scene::{vocab, SceneGraph};
use crate::taskgen::{
    build_ambiguity_split, build_policy_split, build_reasoning_split, sample_env,
    sample_policy_instance, sample_scene, read_policy_split, read_reasoning_split,
    write_policy_split, write_reasoning_split, DatasetManifest,
};
use crate::tensor::checkpoint;
use crate::train::{
    self, evaluate_policy, evaluate_reasoning, prepare_policy, prepare_reasoning, train_policy_a2c,
    train_policy_bc, train_reasoning, MetricRow, SceneFeaturizer,
};

/// A failure with an exit code attached: user errors exit 1, internal
/// errors exit 2.
#[derive(Debug)]
pub enum CliError {
    User(String),
    Internal(String),
}

impl CliError {
    fn user(msg: impl Into<String>) -> CliError {
        CliError::User(msg.into())
    }
}

type CliResult = Result<(), CliError>;

fn user_io(path: &Path, e: std::io::Error) -> CliError {
    CliError::User(format!("{}: {e}", path.display()))
}

fn internal_io(what: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Internal(format!("{what}: {e}"))
}

#[derive(Parser)]
#[command(name = "progex", version, about = "Program-guided neural executor toolkit")]
struct Cli {
    /// JSON configuration file; flags and PROGEX_* variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration field by dotted path, e.g.
    /// --set train.lr=0.001. May repeat.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Program dialect: policy or reasoning.
    #[arg(long, global = true)]
    dialect: Option<String>,
    /// Master seed; every random stream derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data-parallel work.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for run artifacts.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Directory holding generated splits.
    #[arg(long, global = true)]
    dataset_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse programs and print their syntax trees as JSON.
    Parse(FileArgs),
    /// Reprint programs in canonical form.
    Fmt(FileArgs),
    /// Validate programs and print diagnostics.
    Check(FileArgs),
    /// Generate train and test splits with manifests.
    Gen,
    /// Run the neural executor on one program.
    Exec(ExecArgs),
    /// Run the symbolic machines on one program.
    Oracle(OracleArgs),
    /// Train a model; writes checkpoint, metrics and history.
    Train(TrainArgs),
    /// Evaluate a checkpoint; writes per-split metrics.
    Eval(EvalArgs),
}

#[derive(Args)]
struct FileArgs {
    /// Program files; `-` reads standard input.
    #[arg(required = true)]
    files: Vec<PathBuf>,
}

#[derive(Args)]
struct ExecArgs {
    /// Program file; `-` reads standard input.
    file: PathBuf,
    /// Scene JSON for reasoning programs; sampled from the seed when absent.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Grid JSON for policy programs; sampled from the seed when absent.
    #[arg(long)]
    env: Option<PathBuf>,
    /// Use the symbolic machines instead of the neural executor.
    #[arg(long)]
    oracle: bool,
    /// Print the grid after every environment step.
    #[arg(long)]
    render: bool,
    /// Checkpoint base path to load weights from.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Drop one guidance channel: structure or semantic.
    #[arg(long)]
    ablate: Option<String>,
    /// Execution schedule: seq or par.
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Args)]
struct OracleArgs {
    /// Program file; `-` reads standard input.
    file: PathBuf,
    /// Scene JSON for reasoning programs; sampled from the seed when absent.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Grid JSON for policy programs; sampled from the seed when absent.
    #[arg(long)]
    env: Option<PathBuf>,
    /// Print the grid after every environment step.
    #[arg(long)]
    render: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Training target: dense, partial or rl.
    #[arg(long)]
    target: Option<String>,
    /// Checkpoint base path to resume from.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint base path to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
}

/// Entry point behind `main`: parses arguments, resolves and validates
/// the configuration, runs the command and maps failures to exit codes.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.exit_code() == 0 { 0 } else { 1 };
            let _ = e.print();
            return code;
        }
    };
    match std::panic::catch_unwind(AssertUnwindSafe(|| dispatch(cli))) {
        Ok(Ok(())) => 0,
        Ok(Err(CliError::User(msg))) => {
            eprintln!("error: {msg}");
            1
        }
        Ok(Err(CliError::Internal(msg))) => {
            eprintln!("internal error: {msg}");
            2
        }
        // The default panic hook has already printed the payload.
        Err(_) => 2,
    }
}

fn apply_override(cfg: RunConfig, key: &str, value: &str) -> Result<RunConfig, CliError> {
    cfg.with_override(key, value).map_err(CliError::User)
}

/// Defaults, then file, then environment, then --set, then flags.
fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(CliError::User)?,
        None => RunConfig::default(),
    };
    let mut env: Vec<(String, String)> = std::env::vars()
        .filter(|(k, _)| k.starts_with("PROGEX_"))
        .collect();
    env.sort();
    for (key, value) in env {
        let dotted = key["PROGEX_".len()..].to_lowercase().replace("__", ".");
        cfg = apply_override(cfg, &dotted, &value)
            .map_err(|e| match e {
                CliError::User(m) => CliError::User(format!("environment variable {key}: {m}")),
                other => other,
            })?;
    }
    for pair in &cli.sets {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| CliError::user(format!("--set needs KEY=VALUE, got '{pair}'")))?;
        cfg = apply_override(cfg, key, value)?;
    }
    if let Some(d) = &cli.dialect {
        cfg = apply_override(cfg, "dialect", d)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = Some(threads);
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = Some(dir.clone());
    }
    if let Some(dir) = &cli.dataset_dir {
        cfg.dataset_dir = Some(dir.clone());
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> CliResult {
    let mut cfg = resolve_config(&cli)?;
    cfg.subcommand = Some(
        match &cli.command {
            Command::Parse(_) => "parse",
            Command::Fmt(_) => "fmt",
            Command::Check(_) => "check",
            Command::Gen => "gen",
            Command::Exec(_) => "exec",
            Command::Oracle(_) => "oracle",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
        }
        .to_string(),
    );
    // Command flags that live in the config document.
    match &cli.command {
        Command::Exec(args) => {
            if let Some(mode) = &args.mode {
                cfg = apply_override(cfg, "train.mode", &canon_mode(mode)?)?;
            }
            if let Some(ablate) = &args.ablate {
                cfg = apply_override(cfg, "model.guidance", &canon_ablate(ablate)?)?;
            }
        }
        Command::Train(args) => {
            if let Some(target) = &args.target {
                cfg = apply_override(cfg, "train.target", target)?;
            }
        }
        _ => {}
    }
    cfg.validate().map_err(|errs| {
        CliError::User(format!("invalid configuration:\n  {}", errs.join("\n  ")))
    })?;
    if let Some(threads) = cfg.threads {
        // Fails when a pool already exists, which only happens in-process
        // during tests; the run still works on the existing pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match cli.command {
        Command::Parse(args) => cmd_parse(&cfg, &args),
        Command::Fmt(args) => cmd_fmt(&cfg, &args),
        Command::Check(args) => cmd_check(&cfg, &args),
        Command::Gen => cmd_gen(&cfg),
        Command::Exec(args) => cmd_exec(&cfg, &args),
        Command::Oracle(args) => cmd_exec(
            &cfg,
            &ExecArgs {
                file: args.file,
                scene: args.scene,
                env: args.env,
                oracle: true,
                render: args.render,
                checkpoint: None,
                ablate: None,
                mode: None,
            },
        ),
        Command::Train(args) => cmd_train(&cfg, &args),
        Command::Eval(args) => cmd_eval(&cfg, &args),
    }
}

fn canon_mode(raw: &str) -> Result<String, CliError> {
    match raw {
        "seq" | "sequential" => Ok("sequential".into()),
        "par" | "parallel" => Ok("parallel".into()),
        other => Err(CliError::user(format!(
            "--mode must be seq or par, got '{other}'"
        ))),
    }
}

fn canon_ablate(raw: &str) -> Result<String, CliError> {
    match raw {
        "structure" => Ok("no_structure".into()),
        "semantic" => Ok("no_semantic".into()),
        "none" => Ok("full".into()),
        other => Err(CliError::user(format!(
            "--ablate must be structure, semantic or none, got '{other}'"
        ))),
    }
}

fn read_source(path: &Path) -> Result<String, CliError> {
    if path.as_os_str() == "-" {
        let mut buf = String::new();
        std::io::stdin()
            .read_to_string(&mut buf)
            .map_err(|e| CliError::user(format!("stdin: {e}")))?;
        Ok(buf)
    } else {
        fs::read_to_string(path).map_err(|e| user_io(path, e))
    }
}

fn parse_file(path: &Path, dialect: Dialect) -> Result<Program, CliError> {
    let src = read_source(path)?;
    parse_program(&src, dialect)
        .map_err(|e| CliError::user(format!("{}: {e}", path.display())))
}

// ------------------------------------------------------------- commands

fn cmd_parse(cfg: &RunConfig, args: &FileArgs) -> CliResult {
    let mut failures = 0usize;
    for path in &args.files {
        match parse_file(path, cfg.dialect) {
            Ok(program) => {
                let json = serde_json::to_string_pretty(&program)
                    .map_err(|e| internal_io("serializing syntax tree", e))?;
                println!("{json}");
            }
            Err(CliError::User(msg)) => {
                eprintln!("{msg}");
                failures += 1;
            }
            Err(other) => return Err(other),
        }
    }
    if failures > 0 {
        return Err(CliError::user(format!(
            "{failures} of {} programs failed to parse",
            args.files.len()
        )));
    }
    Ok(())
}

fn cmd_fmt(cfg: &RunConfig, args: &FileArgs) -> CliResult {
    for path in &args.files {
        let program = parse_file(path, cfg.dialect)?;
        print!("{}", format_program(&program));
    }
    Ok(())
}

fn cmd_check(cfg: &RunConfig, args: &FileArgs) -> CliResult {
    let mut errors = 0usize;
    for path in &args.files {
        match parse_file(path, cfg.dialect) {
            Ok(program) => {
                for d in validate_program(&program) {
                    let severity = match d.severity {
                        Severity::Error => {
                            errors += 1;
                            "error"
                        }
                        Severity::Warning => "warning",
                    };
                    println!("{}:{}: {severity}: {}", path.display(), d.position, d.message);
                }
            }
            Err(CliError::User(msg)) => {
                println!("{msg}");
                errors += 1;
            }
            Err(other) => return Err(other),
        }
    }
    if errors > 0 {
        return Err(CliError::user(format!("{errors} errors")));
    }
    Ok(())
}

fn merge_manifest(into: &mut DatasetManifest, extra: DatasetManifest) {
    into.count += extra.count;
    into.ids.extend(extra.ids);
    for (k, v) in extra.token_histogram {
        *into.token_histogram.entry(k).or_insert(0) += v;
    }
    for (k, v) in extra.control_histogram {
        *into.control_histogram.entry(k).or_insert(0) += v;
    }
    for (k, v) in extra.answer_histogram {
        *into.answer_histogram.entry(k).or_insert(0) += v;
    }
}

fn cmd_gen(cfg: &RunConfig) -> CliResult {
    let dir = cfg
        .dataset_dir
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| CliError::user("gen needs --dataset-dir or --out-dir"))?;
    let mut resolved = cfg.clone();
    resolved.dataset_dir = Some(dir.clone());
    prepare_run_dir(&dir, &resolved).map_err(|e| internal_io("preparing dataset dir", e))?;
    let counts = [("train", cfg.gen.train_count), ("test", cfg.gen.test_count)];
    let mut used = BTreeSet::new();
    let mut texts: Vec<BTreeSet<String>> = Vec::new();
    match cfg.dialect {
        Dialect::Policy => {
            let ranges = cfg.gen.env_preset.ranges();
            let constraints = cfg.gen.task_preset.constraints();
            for (split, count) in counts {
                let (instances, man) =
                    build_policy_split(cfg.seed, split, count, &ranges, &constraints, &mut used);
                write_policy_split(&dir, &instances, &man)
                    .map_err(|e| internal_io("writing split", e))?;
                texts.push(instances.iter().map(|x| x.text.clone()).collect());
                println!("{split}: {} programs -> {}", man.count, dir.display());
            }
        }
        Dialect::Reasoning => {
            let ranges = cfg.gen.scene_ranges();
            let constraints = cfg.gen.reason_preset.constraints();
            for (split, count) in counts {
                let ambiguous = (count as f64 * cfg.gen.ambiguity_share).round() as usize;
                let plain = count - ambiguous;
                let (mut instances, mut man) = build_reasoning_split(
                    cfg.seed,
                    split,
                    plain,
                    &ranges,
                    &constraints,
                    cfg.gen.answer_cap,
                    &mut used,
                );
                if ambiguous > 0 {
                    let (mut extra, mut eman) =
                        build_ambiguity_split(cfg.seed, split, ambiguous, &ranges, &mut used);
                    // Ids are renamed so the two generators cannot collide.
                    for inst in &mut extra {
                        inst.id = format!("amb-{}", inst.id);
                        inst.scene.id = inst.id.clone();
                    }
                    eman.ids = extra.iter().map(|x| x.id.clone()).collect();
                    instances.append(&mut extra);
                    merge_manifest(&mut man, eman);
                }
                write_reasoning_split(&dir, &instances, &man)
                    .map_err(|e| internal_io("writing split", e))?;
                texts.push(instances.iter().map(|x| x.text.clone()).collect());
                println!("{split}: {} programs -> {}", man.count, dir.display());
            }
        }
    }
    let overlap = texts[0].intersection(&texts[1]).count();
    println!("overlap: {overlap}");
    if overlap > 0 {
        return Err(CliError::Internal(format!(
            "{overlap} programs appear in both splits"
        )));
    }
    Ok(())
}

/// Model shape and master seed for a checkpoint: the configuration echoed
/// into the checkpoint wins over the command line, since the weights only
/// fit the shape they were trained with.
fn checkpoint_run_config(base: &Path) -> Result<Option<RunConfig>, CliError> {
    let manifest_path = base.with_extension("json");
    if !manifest_path.exists() {
        return Err(CliError::user(format!(
            "checkpoint manifest {} does not exist",
            manifest_path.display()
        )));
    }
    let text = fs::read_to_string(&manifest_path).map_err(|e| user_io(&manifest_path, e))?;
    let doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| internal_io("checkpoint manifest", e))?;
    match doc.get("extra").and_then(|x| x.get("config")) {
        Some(echo) => {
            let cfg: RunConfig = serde_json::from_value(echo.clone())
                .map_err(|e| internal_io("checkpoint config echo", e))?;
            Ok(Some(cfg))
        }
        None => Ok(None),
    }
}

fn load_model(cfg: &RunConfig, base: Option<&Path>) -> Result<(Model, RunConfig), CliError> {
    let effective = match base {
        Some(base) => checkpoint_run_config(base)?.unwrap_or_else(|| cfg.clone()),
        None => cfg.clone(),
    };
    let mut shape = effective.clone();
    // Ablation still applies to loaded weights; the guidance channel is
    // a runtime switch, not part of the parameter shape.
    shape.model.guidance = cfg.model.guidance;
    let mut model = Model::new(shape.model.to_model_config(shape.dialect, shape.seed));
    if let Some(base) = base {
        checkpoint::load_into(&mut model.store, base)
            .map_err(|e| CliError::user(format!("loading checkpoint: {e}")))?;
    }
    Ok((model, shape))
}

fn load_scene(cfg: &RunConfig, path: Option<&Path>) -> Result<SceneGraph, CliError> {
    match path {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| user_io(path, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::user(format!("{}: {e}", path.display())))
        }
        None => {
            let mut rng = seeded_rng(cfg.seed, "cli-scene", 0);
            Ok(sample_scene(&mut rng, "cli-scene".into(), &cfg.gen.scene_ranges()))
        }
    }
}

fn load_env(cfg: &RunConfig, path: Option<&Path>) -> Result<GridWorld, CliError> {
    match path {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| user_io(path, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::user(format!("{}: {e}", path.display())))
        }
        None => {
            let mut rng = seeded_rng(cfg.seed, "cli-env", 0);
            Ok(sample_env(&mut rng, &cfg.gen.env_preset.ranges()))
        }
    }
}

fn value_text(v: &Value) -> String {
    match v {
        Value::Objects(ids) => format!(
            "objects [{}]",
            ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ")
        ),
        Value::Bool(b) => b.to_string(),
        Value::Word(w) => w.clone(),
    }
}

fn decode_text(out: OutputType, dist: &[f64]) -> String {
    match out {
        OutputType::Boolean => (argmax(dist) == 1).to_string(),
        OutputType::Answer => vocab::answer_words()[argmax(dist)].to_string(),
        OutputType::Objects => {
            let ids: Vec<String> = dist
                .iter()
                .enumerate()
                .filter(|(_, p)| **p > 0.5)
                .map(|(i, _)| i.to_string())
                .collect();
            format!("objects [{}]", ids.join(", "))
        }
        OutputType::Action => format!("action {}", argmax(dist)),
    }
}

fn cmd_exec(cfg: &RunConfig, args: &ExecArgs) -> CliResult {
    let program = parse_file(&args.file, cfg.dialect)?;
    match cfg.dialect {
        Dialect::Reasoning => {
            let scene = load_scene(cfg, args.scene.as_deref())?;
            if args.oracle {
                let values = execute_reasoning(&program, &scene)
                    .map_err(|e| CliError::user(format!("oracle failed: {e}")))?;
                for (i, v) in values.iter().enumerate() {
                    println!("routine {} -> {}", i + 1, value_text(v));
                }
                println!("final: {}", value_text(values.last().expect("non-empty")));
            } else {
                let (model, shape) = load_model(cfg, args.checkpoint.as_deref())?;
                let featurizer = SceneFeaturizer::new(&model, shape.seed);
                let features = featurizer.features(&scene);
                let eval = model.run_reasoning_values(&program, &features, cfg.train.mode);
                for (pos, out, dist) in &eval.outputs {
                    println!("routine {pos} -> {}", decode_text(*out, dist));
                }
                let (out, dist) = eval.final_output();
                println!("steps: {}", eval.steps);
                println!("final: {}", decode_text(out, dist));
            }
        }
        Dialect::Policy => {
            let env = load_env(cfg, args.env.as_deref())?;
            if args.render {
                println!("{}", env.render());
            }
            if args.oracle {
                let outcome = plan(&program, &env);
                if args.render {
                    render_trace(&program, &env, &outcome.trace);
                }
                println!("feasible: {}", outcome.feasible);
                println!("steps: {}", outcome.actions_used);
                println!("control evals: {}", outcome.control_evals);
                let visited: Vec<String> =
                    outcome.visited.iter().map(|p| p.to_string()).collect();
                println!("visited: {}", visited.join(" "));
            } else {
                let (model, _) = load_model(cfg, args.checkpoint.as_deref())?;
                let mut stepper = PolicyStepper::with_budgets(
                    &model,
                    program,
                    env,
                    cfg.rl.action_budget,
                    cfg.rl.control_budget,
                );
                while let Some(outcome) = stepper.step(&model, None) {
                    if args.render && outcome.replay.out_type == OutputType::Action {
                        println!("{}", stepper.env.render());
                    }
                }
                println!("completed: {}", stepper.completed());
                println!("steps: {}", stepper.env_steps);
                println!("control evals: {}", stepper.control_evals);
            }
        }
    }
    Ok(())
}

/// Replay a planner trace against a copy of the world, printing each
/// frame.
fn render_trace(program: &Program, start: &GridWorld, trace: &[TraceItem]) {
    let mut env = start.clone();
    for item in trace {
        if let TraceItem::Act { position, action_index, .. } = item {
            let kind = &program.routine(*position).kind;
            env.step(resolve_action(*action_index, kind));
            println!("{}", env.render());
        }
    }
}

fn default_out_dir(cfg: &RunConfig) -> PathBuf {
    let sub = cfg.subcommand.as_deref().unwrap_or("run");
    PathBuf::from(format!("runs/{sub}-seed{}", cfg.seed))
}

fn dataset_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    cfg.dataset_dir
        .clone()
        .ok_or_else(|| CliError::user("this command needs --dataset-dir (see gen)"))
}

fn print_fit_history(report: &train::FitReport) {
    for log in &report.history {
        let acc = log
            .accuracy
            .map(|a| format!("{a:.3}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "epoch {} loss {:.4} lr {:.2e} acc {acc} {:.1}s",
            log.epoch, log.mean_loss, log.lr, log.seconds
        );
    }
    println!(
        "final accuracy {:.3} ({} epochs, {:.1}s)",
        report.final_accuracy, report.epochs_run, report.seconds
    );
}

fn write_history<T: serde::Serialize>(path: &Path, rows: &[T]) -> CliResult {
    for row in rows {
        train::append_jsonl(path, row).map_err(|e| internal_io("writing history", e))?;
    }
    Ok(())
}

fn save_checkpoint(
    base: &Path,
    model: &Model,
    cfg: &RunConfig,
    extra: serde_json::Value,
) -> CliResult {
    let mut extra = extra;
    extra["config"] = serde_json::to_value(cfg).expect("config serializes");
    checkpoint::save(&model.store, &extra, base).map_err(|e| internal_io("saving checkpoint", e))
}

fn cmd_train(cfg: &RunConfig, args: &TrainArgs) -> CliResult {
    let data_dir = dataset_dir(cfg)?;
    let out = cfg.out_dir.clone().unwrap_or_else(|| default_out_dir(cfg));
    let mut resolved = cfg.clone();
    resolved.out_dir = Some(out.clone());
    prepare_run_dir(&out, &resolved).map_err(|e| internal_io("preparing run dir", e))?;
    let ckpt = out.join("checkpoint");

    // Resume: weights, optimizer state and epoch counter all come from
    // the checkpoint, so the continued run retraces the original one.
    let mut start_epoch = 0usize;
    let mut env_steps_done = 0usize;
    let (mut model, shape) = match &args.resume {
        Some(base) => {
            let (model, shape) = load_model(cfg, Some(base))?;
            let manifest: serde_json::Value = serde_json::from_str(
                &fs::read_to_string(base.with_extension("json"))
                    .map_err(|e| user_io(&base.with_extension("json"), e))?,
            )
            .map_err(|e| internal_io("checkpoint manifest", e))?;
            start_epoch = manifest["extra"]["epochs_run"].as_u64().unwrap_or(0) as usize;
            env_steps_done = manifest["extra"]["env_steps"].as_u64().unwrap_or(0) as usize;
            (model, shape)
        }
        None => load_model(cfg, None)?,
    };

    match (cfg.dialect, cfg.train.target) {
        (Dialect::Reasoning, TrainTarget::Dense | TrainTarget::Partial) => {
            let (train_raw, _) =
                read_reasoning_split(&data_dir, "train").map_err(|e| internal_io("reading train split", e))?;
            let (test_raw, _) =
                read_reasoning_split(&data_dir, "test").map_err(|e| internal_io("reading test split", e))?;
            let featurizer = SceneFeaturizer::new(&model, shape.seed);
            let train_set = prepare_reasoning(&featurizer, &train_raw);
            let test_set = prepare_reasoning(&featurizer, &test_raw);
            let mut fit_cfg = cfg.train.to_fit_config(shape.seed);
            fit_cfg.start_epoch = start_epoch;
            if start_epoch >= fit_cfg.epochs {
                return Err(CliError::user(format!(
                    "checkpoint already trained {start_epoch} of {} epochs",
                    fit_cfg.epochs
                )));
            }
            let report = train_reasoning(&mut model, &train_set, &test_set, &fit_cfg);
            print_fit_history(&report);
            write_history(&out.join("history.jsonl"), &report.history)?;
            save_checkpoint(
                &ckpt,
                &model,
                &resolved,
                serde_json::json!({"epochs_run": start_epoch + report.epochs_run}),
            )?;
            let metrics = reasoning_metric_rows(&model, cfg, &train_set, &test_set);
            train::write_metrics_csv(&out.join("metrics.csv"), &metrics)
                .map_err(|e| internal_io("writing metrics", e))?;
            println!("checkpoint -> {}", ckpt.display());
        }
        (Dialect::Policy, TrainTarget::Dense) => {
            let (train_raw, _) =
                read_policy_split(&data_dir, "train").map_err(|e| internal_io("reading train split", e))?;
            let (test_raw, _) =
                read_policy_split(&data_dir, "test").map_err(|e| internal_io("reading test split", e))?;
            let train_set = prepare_policy(&train_raw);
            let test_set = prepare_policy(&test_raw);
            let mut fit_cfg = cfg.train.to_fit_config(shape.seed);
            fit_cfg.start_epoch = start_epoch;
            if start_epoch >= fit_cfg.epochs {
                return Err(CliError::user(format!(
                    "checkpoint already trained {start_epoch} of {} epochs",
                    fit_cfg.epochs
                )));
            }
            let report = train_policy_bc(&mut model, &train_set, &test_set, &fit_cfg);
            print_fit_history(&report);
            write_history(&out.join("history.jsonl"), &report.history)?;
            save_checkpoint(
                &ckpt,
                &model,
                &resolved,
                serde_json::json!({"epochs_run": start_epoch + report.epochs_run}),
            )?;
            let metrics = policy_metric_rows(&model, cfg, &train_set, &test_set);
            train::write_metrics_csv(&out.join("metrics.csv"), &metrics)
                .map_err(|e| internal_io("writing metrics", e))?;
            println!("checkpoint -> {}", ckpt.display());
        }
        (Dialect::Policy, TrainTarget::Rl) => {
            let (test_raw, _) =
                read_policy_split(&data_dir, "test").map_err(|e| internal_io("reading test split", e))?;
            let test_set = prepare_policy(&test_raw);
            let mut a2c = cfg.rl.to_a2c_config(shape.seed);
            if env_steps_done > 0 {
                a2c.max_env_steps = a2c.max_env_steps.saturating_sub(env_steps_done);
            }
            let ranges = cfg.gen.env_preset.ranges();
            let constraints = cfg.gen.task_preset.constraints();
            let counter = std::sync::atomic::AtomicUsize::new(0);
            let sampler = |rng: &mut ChaCha8Rng| {
                let n = counter.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                sample_policy_instance(rng, format!("rl-{n:07}"), &ranges, &constraints, 5000)
            };
            let report = train_policy_a2c(&mut model, &sampler, &test_set, &a2c);
            for log in &report.history {
                println!(
                    "steps {} episodes {} recent {:.3} eval {:.3} loss {:.4} {:.1}s",
                    log.env_steps,
                    log.episodes,
                    log.recent_completion,
                    log.eval_completion,
                    log.mean_loss,
                    log.seconds
                );
            }
            println!(
                "final completion {:.3} ({} env steps, {:.1}s)",
                report.final_completion, report.env_steps, report.seconds
            );
            write_history(&out.join("history.jsonl"), &report.history)?;
            save_checkpoint(
                &ckpt,
                &model,
                &resolved,
                serde_json::json!({"env_steps": env_steps_done + report.env_steps}),
            )?;
            let rows = vec![MetricRow {
                split: "test".into(),
                metric: "completion".into(),
                value: report.final_completion,
                seed: cfg.seed,
            }];
            train::write_metrics_csv(&out.join("metrics.csv"), &rows)
                .map_err(|e| internal_io("writing metrics", e))?;
            println!("checkpoint -> {}", ckpt.display());
        }
        (dialect, target) => {
            return Err(CliError::user(format!(
                "target {target:?} does not apply to {dialect:?} programs"
            )))
        }
    }
    Ok(())
}

fn reasoning_metric_rows(
    model: &Model,
    cfg: &RunConfig,
    train_set: &[train::PreparedReason],
    test_set: &[train::PreparedReason],
) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for (split, items) in [("train", train_set), ("test", test_set)] {
        let m = evaluate_reasoning(model, items, cfg.train.mode);
        rows.push(MetricRow {
            split: split.into(),
            metric: "final_accuracy".into(),
            value: m.final_accuracy(),
            seed: cfg.seed,
        });
        rows.push(MetricRow {
            split: split.into(),
            metric: "routine_accuracy".into(),
            value: m.routine_accuracy(),
            seed: cfg.seed,
        });
    }
    rows
}

fn policy_metric_rows(
    model: &Model,
    cfg: &RunConfig,
    train_set: &[train::PreparedPolicy],
    test_set: &[train::PreparedPolicy],
) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for (split, items) in [("train", train_set), ("test", test_set)] {
        let m = evaluate_policy(model, items);
        rows.push(MetricRow {
            split: split.into(),
            metric: "completion".into(),
            value: m.completion(),
            seed: cfg.seed,
        });
    }
    rows
}

fn cmd_eval(cfg: &RunConfig, args: &EvalArgs) -> CliResult {
    let data_dir = dataset_dir(cfg)?;
    let out = cfg.out_dir.clone().unwrap_or_else(|| default_out_dir(cfg));
    let mut resolved = cfg.clone();
    resolved.out_dir = Some(out.clone());
    prepare_run_dir(&out, &resolved).map_err(|e| internal_io("preparing run dir", e))?;
    let (model, shape) = load_model(cfg, Some(&args.checkpoint))?;
    let rows = match shape.dialect {
        Dialect::Reasoning => {
            let (train_raw, _) =
                read_reasoning_split(&data_dir, "train").map_err(|e| internal_io("reading train split", e))?;
            let (test_raw, _) =
                read_reasoning_split(&data_dir, "test").map_err(|e| internal_io("reading test split", e))?;
            let featurizer = SceneFeaturizer::new(&model, shape.seed);
            let train_set = prepare_reasoning(&featurizer, &train_raw);
            let test_set = prepare_reasoning(&featurizer, &test_raw);
            reasoning_metric_rows(&model, cfg, &train_set, &test_set)
        }
        Dialect::Policy => {
            let (train_raw, _) =
                read_policy_split(&data_dir, "train").map_err(|e| internal_io("reading train split", e))?;
            let (test_raw, _) =
                read_policy_split(&data_dir, "test").map_err(|e| internal_io("reading test split", e))?;
            let train_set = prepare_policy(&train_raw);
            let test_set = prepare_policy(&test_raw);
            policy_metric_rows(&model, cfg, &train_set, &test_set)
        }
    };
    for row in &rows {
        println!("{} {} {:.4}", row.split, row.metric, row.value);
    }
    let path = out.join("metrics.csv");
    train::write_metrics_csv(&path, &rows).map_err(|e| internal_io("writing metrics", e))?;
    println!("metrics -> {}", path.display());
    Ok(())
}
