//! Supervised fitting, advantage actor-critic, and the evaluation
//! harness.
//!
//! Reasoning programs train against exact per-routine values from the
//! symbolic executor, either densely (every routine) or partially (the
//! sink only). Policy programs train either by teacher forcing against
//! planner traces or by actor-critic on sampled episodes. All drivers
//! accumulate per-example gradients over a fixed number of chunks so
//! results do not depend on thread scheduling.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsl::{format_program, OutputType, Program};
use crate::executor::{argmax, ExecMode, Model, PolicyStepper, ReplayStep, StepOutcome};
use crate::gridworld::GridWorld;
use crate::oracle::{TraceItem, Value, MAX_CONTROL_EVALS};
use crate::rng::{derive_seed, seeded_rng};
use crate::scene::{vocab, FeatureCodebook, SceneGraph};
use crate::taskgen::{PolicyInstance, ReasoningInstance};
use crate::tensor::gradcheck::{GradCheckReport, REL_ERR_FLOOR};
use crate::tensor::params::AdamConfig;
use crate::tensor::{Gradients, Matrix, Tape, Var};

// ------------------------------------------------------------- targets

/// How much of a reasoning program is supervised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Supervision {
    /// Every routine's output trains against its exact value.
    Dense,
    /// Only the sink routine trains; intermediate rows learn indirectly.
    Partial,
}

/// Training target for one exact value: an indicator row the matching
/// head should produce.
pub fn value_target(model: &Model, value: &Value) -> (OutputType, Matrix) {
    match value {
        Value::Bool(b) => {
            let mut t = Matrix::zeros(1, 2);
            t.data[*b as usize] = 1.0;
            (OutputType::Boolean, t)
        }
        Value::Word(w) => {
            let words = vocab::answer_words();
            let mut t = Matrix::zeros(1, words.len());
            let i = vocab::answer_index(w).expect("answer outside the vocabulary");
            t.data[i] = 1.0;
            (OutputType::Answer, t)
        }
        Value::Objects(ids) => {
            let mut t = Matrix::zeros(1, model.cfg.n_slots);
            for &id in ids {
                assert!(id < model.cfg.n_slots, "object id {id} has no slot");
                t.data[id] = 1.0;
            }
            (OutputType::Objects, t)
        }
    }
}

// -------------------------------------------------------------- losses

fn mean_of(tape: &mut Tape, terms: &[Var]) -> Var {
    assert!(!terms.is_empty(), "loss over zero terms");
    let mut acc = terms[0];
    for t in &terms[1..] {
        acc = tape.add(acc, *t);
    }
    tape.scale(acc, 1.0 / terms.len() as f64)
}

/// Mean squared error of decoded outputs against exact values, averaged
/// over the supervised routines. `outputs[i]` is the value of the
/// routine at position `i + 1`.
pub fn reasoning_loss(
    model: &Model,
    tape: &mut Tape,
    program: &Program,
    features: &Matrix,
    outputs: &[Value],
    supervision: Supervision,
    mode: ExecMode,
) -> Var {
    let run = model.run_reasoning(tape, program, features, mode);
    let mut terms = Vec::with_capacity(run.outputs.len());
    for (pos, out, dist) in &run.outputs {
        if supervision == Supervision::Partial && *pos != run.sink {
            continue;
        }
        let (want, target) = value_target(model, &outputs[*pos - 1]);
        debug_assert_eq!(*out, want, "routine at {pos} decodes the wrong head");
        terms.push(tape.mse_vs_const(*dist, &target));
    }
    mean_of(tape, &terms)
}

/// Mean squared error of every teacher-forced step against the
/// planner's decision.
pub fn policy_bc_loss(
    model: &Model,
    tape: &mut Tape,
    program: &Program,
    start: &GridWorld,
    trace: &[TraceItem],
) -> Var {
    let run = model.run_policy_forced(tape, program, start, trace);
    let mut terms = Vec::with_capacity(run.steps.len());
    for step in &run.steps {
        let mut target = Matrix::zeros(1, model.head_arity(step.out_type));
        target.data[step.target] = 1.0;
        terms.push(tape.mse_vs_const(step.dist, &target));
    }
    mean_of(tape, &terms)
}

// ------------------------------------------------------------ features

/// Deterministic scene featurization shared by training and evaluation:
/// one codebook per (width, slots, master seed), with per-scene
/// observation noise derived from the scene id.
pub struct SceneFeaturizer {
    codebook: FeatureCodebook,
    master: u64,
}

impl SceneFeaturizer {
    pub fn new(model: &Model, master: u64) -> SceneFeaturizer {
        SceneFeaturizer {
            codebook: FeatureCodebook::new(
                model.cfg.d(),
                model.cfg.n_slots,
                derive_seed(master, "feature-codebook", 0),
            ),
            master,
        }
    }

    pub fn features(&self, scene: &SceneGraph) -> Matrix {
        self.codebook.featurize(scene, derive_seed(self.master, &scene.id, 1))
    }
}

// ------------------------------------------------------- prepared data

/// A reasoning instance parsed and featurized once for a whole run.
pub struct PreparedReason {
    pub program: Program,
    pub features: Matrix,
    pub outputs: Vec<Value>,
}

pub fn prepare_reasoning(
    featurizer: &SceneFeaturizer,
    items: &[ReasoningInstance],
) -> Vec<PreparedReason> {
    items
        .par_iter()
        .map(|inst| PreparedReason {
            program: inst.program(),
            features: featurizer.features(&inst.scene),
            outputs: inst.outputs.clone(),
        })
        .collect()
}

/// A policy instance parsed once for a whole run.
pub struct PreparedPolicy {
    pub program: Program,
    pub env: GridWorld,
    pub trace: Vec<TraceItem>,
}

pub fn prepare_policy(items: &[PolicyInstance]) -> Vec<PreparedPolicy> {
    items
        .par_iter()
        .map(|inst| PreparedPolicy {
            program: inst.program(),
            env: inst.env.clone(),
            trace: inst.trace.clone(),
        })
        .collect()
}

// ----------------------------------------------------------- metrics

/// Whether a decoded distribution names the exact value: argmax for the
/// categorical heads, 0.5-thresholded set equality for object sets.
pub fn prediction_matches(dist: &[f64], out: OutputType, value: &Value) -> bool {
    match value {
        Value::Bool(b) => out == OutputType::Boolean && (argmax(dist) == 1) == *b,
        Value::Word(w) => {
            out == OutputType::Answer && vocab::answer_index(w) == Some(argmax(dist))
        }
        Value::Objects(ids) => {
            let chosen: Vec<usize> = dist
                .iter()
                .enumerate()
                .filter_map(|(i, &p)| (p > 0.5).then_some(i))
                .collect();
            out == OutputType::Objects && chosen == *ids
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReasonMetrics {
    pub n: usize,
    /// Instances whose sink output named the exact answer.
    pub final_correct: usize,
    pub routine_total: usize,
    pub routine_correct: usize,
}

impl ReasonMetrics {
    pub fn final_accuracy(&self) -> f64 {
        self.final_correct as f64 / self.n.max(1) as f64
    }

    pub fn routine_accuracy(&self) -> f64 {
        self.routine_correct as f64 / self.routine_total.max(1) as f64
    }
}

pub fn evaluate_reasoning(
    model: &Model,
    items: &[PreparedReason],
    mode: ExecMode,
) -> ReasonMetrics {
    let (final_correct, routine_total, routine_correct) = items
        .par_iter()
        .map(|item| {
            let run = model.run_reasoning_values(&item.program, &item.features, mode);
            let mut correct = 0usize;
            for (pos, out, dist) in &run.outputs {
                if prediction_matches(dist, *out, &item.outputs[*pos - 1]) {
                    correct += 1;
                }
            }
            let (out, dist) = run.final_output();
            let fin = prediction_matches(dist, out, item.outputs.last().unwrap()) as usize;
            (fin, run.outputs.len(), correct)
        })
        .reduce(|| (0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    ReasonMetrics {
        n: items.len(),
        final_correct,
        routine_total,
        routine_correct,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyMetrics {
    pub n: usize,
    pub completed: usize,
    pub env_steps: usize,
}

impl PolicyMetrics {
    pub fn completion(&self) -> f64 {
        self.completed as f64 / self.n.max(1) as f64
    }
}

/// Greedy episode completion rate over a held-out set.
pub fn evaluate_policy(model: &Model, items: &[PreparedPolicy]) -> PolicyMetrics {
    let (completed, env_steps) = items
        .par_iter()
        .map(|item| {
            let report = model.run_policy_greedy(&item.program, &item.env);
            (report.completed as usize, report.env_steps)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    PolicyMetrics {
        n: items.len(),
        completed,
        env_steps,
    }
}

// ----------------------------------------------------------- fitting

/// Supervised fitting schedule.
#[derive(Debug, Clone)]
pub struct FitConfig {
    /// Total epochs for the whole schedule, counting any already done.
    pub epochs: usize,
    /// First epoch index to run. A resumed run sets this to the number
    /// of epochs already trained and continues the original shuffle and
    /// learning-rate schedule from there.
    pub start_epoch: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Multiplicative learning-rate factor applied after each epoch.
    pub lr_decay: f64,
    pub supervision: Supervision,
    pub mode: ExecMode,
    pub shuffle_seed: u64,
    /// Stop once held-out accuracy reaches this.
    pub target_accuracy: Option<f64>,
    /// Wall-clock budget for the whole fit, checked between batches.
    pub time_limit: Option<Duration>,
    /// Evaluate the held-out set every this many epochs; the last epoch
    /// always evaluates.
    pub eval_every: usize,
    /// Per-batch gradient chunks. Fixed so the reduction order, and
    /// therefore the result, does not depend on thread scheduling.
    pub chunks: usize,
}

impl FitConfig {
    pub fn reasoning_desk(seed: u64) -> FitConfig {
        FitConfig {
            epochs: 20,
            start_epoch: 0,
            batch_size: 32,
            adam: AdamConfig {
                lr: 2e-3,
                weight_decay: 0.01,
                ..AdamConfig::default()
            },
            lr_decay: 0.8,
            supervision: Supervision::Dense,
            mode: ExecMode::Parallel,
            shuffle_seed: seed,
            target_accuracy: None,
            time_limit: None,
            eval_every: 1,
            chunks: 16,
        }
    }

    pub fn policy_desk(seed: u64) -> FitConfig {
        FitConfig {
            epochs: 12,
            start_epoch: 0,
            batch_size: 16,
            adam: AdamConfig {
                lr: 1e-3,
                weight_decay: 0.01,
                ..AdamConfig::default()
            },
            lr_decay: 0.85,
            supervision: Supervision::Dense,
            mode: ExecMode::Sequential,
            shuffle_seed: seed,
            target_accuracy: None,
            time_limit: None,
            eval_every: 1,
            chunks: 16,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Learning rate the epoch ran at.
    pub lr: f64,
    pub accuracy: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs_run: usize,
    pub history: Vec<EpochLog>,
    pub final_accuracy: f64,
    pub reached_target: bool,
    pub seconds: f64,
}

/// Decoupled weight decay applies to projection weights only; biases
/// and the token embedding stay unregularized.
fn decays(name: &str) -> bool {
    !(name.ends_with(".b1") || name.ends_with(".b2") || name == "embed")
}

fn chunk_size(len: usize, chunks: usize) -> usize {
    let chunks = chunks.max(1);
    ((len + chunks - 1) / chunks).max(1)
}

/// Mean gradient and mean loss of one minibatch, accumulated over a
/// fixed chunk layout and reduced in chunk order.
fn batch_gradients<I: Sync>(
    model: &Model,
    items: &[I],
    batch: &[usize],
    chunks: usize,
    loss_of: &(impl Fn(&Model, &mut Tape, &I) -> Var + Sync),
) -> (Gradients, f64) {
    let pieces: Vec<(Gradients, f64)> = batch
        .par_chunks(chunk_size(batch.len(), chunks))
        .map(|part| {
            let mut acc = Gradients::zeros_like(&model.store);
            let mut losses = 0.0;
            for &i in part {
                let mut tape = Tape::new();
                let loss = loss_of(model, &mut tape, &items[i]);
                losses += tape.scalar(loss);
                acc.add_assign(&tape.backward(loss, &model.store));
            }
            (acc, losses)
        })
        .collect();
    let mut total = Gradients::zeros_like(&model.store);
    let mut losses = 0.0;
    for (g, l) in &pieces {
        total.add_assign(g);
        losses += l;
    }
    let scale = 1.0 / batch.len().max(1) as f64;
    total.scale_assign(scale);
    (total, losses * scale)
}

fn fit<I: Sync>(
    model: &mut Model,
    items: &[I],
    cfg: &FitConfig,
    loss_of: &(impl Fn(&Model, &mut Tape, &I) -> Var + Sync),
    accuracy_of: &impl Fn(&Model) -> f64,
) -> FitReport {
    assert!(!items.is_empty(), "nothing to fit");
    let start = Instant::now();
    let decay_mask: Vec<bool> = (0..model.store.len())
        .map(|id| decays(model.store.name(id)))
        .collect();
    let mut adam = cfg.adam.clone();
    // Repeated multiplication, not a power, so a resumed run reaches
    // bitwise the same learning rate the uninterrupted run would have.
    for _ in 0..cfg.start_epoch {
        adam.lr *= cfg.lr_decay;
    }
    let mut history: Vec<EpochLog> = Vec::new();
    let mut reached = false;
    'epochs: for epoch in cfg.start_epoch..cfg.epochs {
        let epoch_start = Instant::now();
        let lr = adam.lr;
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut seeded_rng(cfg.shuffle_seed, "fit-shuffle", epoch as u64));
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            if let Some(limit) = cfg.time_limit {
                if start.elapsed() >= limit {
                    break 'epochs;
                }
            }
            let (grads, batch_loss) = batch_gradients(model, items, batch, cfg.chunks, loss_of);
            assert!(
                batch_loss.is_finite(),
                "non-finite loss at epoch {epoch} after {seen} examples"
            );
            model.store.adam_step(&grads, &adam, |id| decay_mask[id]);
            loss_sum += batch_loss * batch.len() as f64;
            seen += batch.len();
        }
        adam.lr *= cfg.lr_decay;
        let evaluate = (epoch + 1) % cfg.eval_every.max(1) == 0 || epoch + 1 == cfg.epochs;
        let accuracy = evaluate.then(|| accuracy_of(model));
        history.push(EpochLog {
            epoch,
            mean_loss: loss_sum / seen.max(1) as f64,
            lr,
            accuracy,
            seconds: epoch_start.elapsed().as_secs_f64(),
        });
        if let (Some(acc), Some(target)) = (accuracy, cfg.target_accuracy) {
            if acc >= target {
                reached = true;
                break;
            }
        }
    }
    let final_accuracy = history
        .iter()
        .rev()
        .find_map(|log| log.accuracy)
        .unwrap_or_else(|| accuracy_of(model));
    FitReport {
        epochs_run: history.len(),
        history,
        final_accuracy,
        reached_target: reached,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Fit a reasoning model against exact values; accuracy is held-out
/// final-answer accuracy.
pub fn train_reasoning(
    model: &mut Model,
    train: &[PreparedReason],
    held_out: &[PreparedReason],
    cfg: &FitConfig,
) -> FitReport {
    let supervision = cfg.supervision;
    let mode = cfg.mode;
    fit(
        model,
        train,
        cfg,
        &|m: &Model, tape: &mut Tape, item: &PreparedReason| {
            reasoning_loss(m, tape, &item.program, &item.features, &item.outputs, supervision, mode)
        },
        &|m: &Model| evaluate_reasoning(m, held_out, mode).final_accuracy(),
    )
}

/// Fit a policy model by teacher forcing against planner traces;
/// accuracy is held-out greedy completion. Instances whose trace is
/// empty (everything pre-satisfied) have nothing to teach and are
/// skipped.
pub fn train_policy_bc(
    model: &mut Model,
    train: &[PreparedPolicy],
    held_out: &[PreparedPolicy],
    cfg: &FitConfig,
) -> FitReport {
    let teachable: Vec<&PreparedPolicy> = train.iter().filter(|p| !p.trace.is_empty()).collect();
    fit(
        model,
        &teachable,
        cfg,
        &|m: &Model, tape: &mut Tape, item: &&PreparedPolicy| {
            policy_bc_loss(m, tape, &item.program, &item.env, &item.trace)
        },
        &|m: &Model| evaluate_policy(m, held_out).completion(),
    )
}

// -------------------------------------------------------- actor-critic

/// Advantage actor-critic schedule: synchronous envs, fixed windows,
/// bootstrapped returns.
#[derive(Debug, Clone)]
pub struct A2cConfig {
    pub envs: usize,
    /// Steps acted per environment between updates; windows truncate at
    /// episode ends.
    pub window: usize,
    pub gamma: f64,
    pub entropy_beta: f64,
    pub value_coeff: f64,
    pub adam: AdamConfig,
    /// Environment-step budget for the whole run.
    pub max_env_steps: usize,
    /// Per-episode environment-step budget.
    pub action_budget: usize,
    /// Per-episode control-evaluation budget.
    pub control_budget: usize,
    /// Extra reward each time an action routine finishes; zero keeps
    /// the sparse task reward only.
    pub routine_bonus: f64,
    /// Evaluate held-out completion roughly every this many environment
    /// steps; zero disables mid-run evaluation.
    pub eval_every: usize,
    pub target_completion: Option<f64>,
    pub seed: u64,
    /// Parallel gradient chunks over the env set; fixed for determinism.
    pub chunks: usize,
    pub time_limit: Option<Duration>,
}

impl A2cConfig {
    pub fn desk(seed: u64) -> A2cConfig {
        A2cConfig {
            envs: 64,
            window: 5,
            gamma: 0.99,
            entropy_beta: 0.1,
            value_coeff: 0.5,
            adam: AdamConfig::default(),
            max_env_steps: 2_000_000,
            action_budget: 100,
            control_budget: MAX_CONTROL_EVALS,
            routine_bonus: 0.0,
            eval_every: 50_000,
            target_completion: None,
            seed,
            chunks: 16,
            time_limit: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct A2cLog {
    pub env_steps: usize,
    pub updates: usize,
    pub episodes: usize,
    /// Completion rate over episodes finished since the previous log.
    pub recent_completion: f64,
    pub mean_loss: f64,
    pub eval_completion: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct A2cReport {
    pub env_steps: usize,
    pub updates: usize,
    pub episodes: usize,
    pub history: Vec<A2cLog>,
    pub final_completion: f64,
    pub reached_target: bool,
    pub seconds: f64,
}

/// Shannon entropy of a 1×k distribution on the tape.
pub fn dist_entropy(tape: &mut Tape, dist: Var) -> Var {
    let shifted = tape.add_scalar(dist, 1e-12);
    let logs = tape.log(shifted);
    let plogp = tape.hadamard(dist, logs);
    let sum = tape.sum_all(plogp);
    tape.scale(sum, -1.0)
}

struct EnvSlot {
    gen_rng: ChaCha8Rng,
    act_rng: ChaCha8Rng,
    program: Program,
    stepper: PolicyStepper,
}

#[derive(Debug, Default, Clone, Copy)]
struct WindowStats {
    env_steps: usize,
    episodes: usize,
    completed: usize,
    loss: f64,
}

impl WindowStats {
    fn merge(&mut self, other: WindowStats) {
        self.env_steps += other.env_steps;
        self.episodes += other.episodes;
        self.completed += other.completed;
        self.loss += other.loss;
    }
}

fn respawn(
    model: &Model,
    slot: &mut EnvSlot,
    cfg: &A2cConfig,
    sampler: &impl Fn(&mut ChaCha8Rng) -> PolicyInstance,
) {
    let inst = sampler(&mut slot.gen_rng);
    slot.program = inst.program();
    slot.stepper = PolicyStepper::with_budgets(
        model,
        slot.program.clone(),
        inst.env,
        cfg.action_budget,
        cfg.control_budget,
    );
}

/// Act one window in a slot, replay it on the tape, and accumulate the
/// gradient of the combined actor, critic and entropy loss into `acc`.
fn window_pass_into(
    model: &Model,
    slot: &mut EnvSlot,
    cfg: &A2cConfig,
    sampler: &impl Fn(&mut ChaCha8Rng) -> PolicyInstance,
    acc: &mut Gradients,
) -> WindowStats {
    let mut stats = WindowStats::default();
    let mut guard = 64;
    while slot.stepper.finished.is_some() {
        respawn(model, slot, cfg, sampler);
        if slot.stepper.finished.is_some() {
            // Ended at spawn: every routine was already satisfied.
            stats.episodes += 1;
            stats.completed += slot.stepper.completed() as usize;
        }
        guard -= 1;
        assert!(guard > 0, "sampler keeps producing episodes that end at spawn");
    }

    let z0 = slot.stepper.z.clone();
    let mut outcomes: Vec<StepOutcome> = Vec::with_capacity(cfg.window);
    for _ in 0..cfg.window {
        let out = slot
            .stepper
            .step(model, Some(&mut slot.act_rng))
            .expect("episode is live");
        let terminal = out.terminal;
        outcomes.push(out);
        if terminal {
            break;
        }
    }
    let bootstrap = slot.stepper.peek_value(model);
    let mut returns = vec![0.0; outcomes.len()];
    let mut ret = bootstrap;
    for (i, out) in outcomes.iter().enumerate().rev() {
        let shaped = out.reward + cfg.routine_bonus * (out.routine_done as i32 as f64);
        ret = shaped + cfg.gamma * ret;
        returns[i] = ret;
    }
    stats.env_steps = outcomes
        .iter()
        .filter(|o| o.replay.out_type == OutputType::Action)
        .count();
    if outcomes.last().map(|o| o.terminal) == Some(true) {
        stats.episodes += 1;
        stats.completed += slot.stepper.completed() as usize;
    }

    let mut tape = Tape::new();
    let replays: Vec<ReplayStep> = outcomes.iter().map(|o| o.replay.clone()).collect();
    let pairs = model.run_policy_window(&mut tape, &slot.program, &z0, &replays);
    let mut total: Option<Var> = None;
    for ((dist, value), (outcome, ret)) in pairs.iter().zip(outcomes.iter().zip(&returns)) {
        // The advantage is a plain number: the critic trains only
        // through its own squared-error term.
        let advantage = ret - tape.scalar(*value);
        let mut pick = Matrix::zeros(1, model.head_arity(outcome.replay.out_type));
        pick.data[outcome.replay.choice] = 1.0;
        let pick = tape.constant(pick);
        let chosen = tape.hadamard(*dist, pick);
        let prob = tape.sum_all(chosen);
        let prob = tape.add_scalar(prob, 1e-12);
        let score = tape.log(prob);
        let policy_term = tape.scale(score, -advantage);
        let err = tape.add_scalar(*value, -ret);
        let err2 = tape.hadamard(err, err);
        let value_term = tape.scale(err2, cfg.value_coeff);
        let ent = dist_entropy(&mut tape, *dist);
        let entropy_term = tape.scale(ent, -cfg.entropy_beta);
        let mut term = tape.add(policy_term, value_term);
        term = tape.add(term, entropy_term);
        total = Some(match total {
            Some(t) => tape.add(t, term),
            None => term,
        });
    }
    let total = total.expect("window has at least one step");
    let total = tape.scale(total, 1.0 / (cfg.envs * cfg.window) as f64);
    let loss = tape.scalar(total);
    if !loss.is_finite() {
        panic!(
            "non-finite actor-critic loss {loss} on '{}' after {} episode env steps; \
             returns {:?}, rewards {:?}",
            format_program(&slot.program),
            slot.stepper.env_steps,
            returns,
            outcomes.iter().map(|o| o.reward).collect::<Vec<_>>(),
        );
    }
    stats.loss = loss;
    acc.add_assign(&tape.backward(total, &model.store));
    stats
}

/// Advantage actor-critic over sampled episodes. `sampler` draws a
/// fresh task from its slot-local generator whenever an episode ends,
/// so runs are deterministic for a fixed config.
pub fn train_policy_a2c(
    model: &mut Model,
    sampler: &(impl Fn(&mut ChaCha8Rng) -> PolicyInstance + Sync),
    held_out: &[PreparedPolicy],
    cfg: &A2cConfig,
) -> A2cReport {
    assert!(cfg.envs > 0 && cfg.window > 0);
    let start = Instant::now();
    let decay_mask: Vec<bool> = (0..model.store.len())
        .map(|id| decays(model.store.name(id)))
        .collect();
    let mut slots: Vec<EnvSlot> = (0..cfg.envs)
        .map(|i| {
            let mut gen_rng = seeded_rng(cfg.seed, "a2c-gen", i as u64);
            let act_rng = seeded_rng(cfg.seed, "a2c-act", i as u64);
            let inst = sampler(&mut gen_rng);
            let program = inst.program();
            let stepper = PolicyStepper::with_budgets(
                model,
                program.clone(),
                inst.env,
                cfg.action_budget,
                cfg.control_budget,
            );
            EnvSlot {
                gen_rng,
                act_rng,
                program,
                stepper,
            }
        })
        .collect();
    let per_chunk = chunk_size(cfg.envs, cfg.chunks);

    let mut env_steps = 0usize;
    let mut updates = 0usize;
    let mut episodes = 0usize;
    let mut recent = (0usize, 0usize);
    let mut loss_sum = 0.0;
    let mut loss_updates = 0usize;
    let mut next_eval = cfg.eval_every.max(1);
    let mut history: Vec<A2cLog> = Vec::new();
    let mut reached = false;

    while env_steps < cfg.max_env_steps {
        if let Some(limit) = cfg.time_limit {
            if start.elapsed() >= limit {
                break;
            }
        }
        if updates > cfg.max_env_steps {
            // Only reachable when episodes never act; stop rather than
            // spin on control evaluations forever.
            break;
        }
        let model_ref: &Model = model;
        let results: Vec<(Gradients, WindowStats)> = slots
            .par_chunks_mut(per_chunk)
            .map(|group| {
                let mut acc = Gradients::zeros_like(&model_ref.store);
                let mut stats = WindowStats::default();
                for slot in group {
                    stats.merge(window_pass_into(model_ref, slot, cfg, sampler, &mut acc));
                }
                (acc, stats)
            })
            .collect();
        let mut grads = Gradients::zeros_like(&model.store);
        let mut stats = WindowStats::default();
        for (g, s) in &results {
            grads.add_assign(g);
            stats.merge(*s);
        }
        model.store.adam_step(&grads, &cfg.adam, |id| decay_mask[id]);
        updates += 1;
        env_steps += stats.env_steps;
        episodes += stats.episodes;
        recent = (recent.0 + stats.completed, recent.1 + stats.episodes);
        loss_sum += stats.loss;
        loss_updates += 1;

        if cfg.eval_every > 0 && env_steps >= next_eval {
            while next_eval <= env_steps {
                next_eval += cfg.eval_every;
            }
            let eval = evaluate_policy(model, held_out).completion();
            history.push(A2cLog {
                env_steps,
                updates,
                episodes,
                recent_completion: recent.0 as f64 / recent.1.max(1) as f64,
                mean_loss: loss_sum / loss_updates.max(1) as f64,
                eval_completion: eval,
                seconds: start.elapsed().as_secs_f64(),
            });
            recent = (0, 0);
            loss_sum = 0.0;
            loss_updates = 0;
            if cfg.target_completion.is_some_and(|t| eval >= t) {
                reached = true;
                break;
            }
        }
    }
    let final_completion = evaluate_policy(model, held_out).completion();
    A2cReport {
        env_steps,
        updates,
        episodes,
        history,
        final_completion,
        reached_target: reached,
        seconds: start.elapsed().as_secs_f64(),
    }
}

// ------------------------------------------------------ gradient check

/// Central-difference check of `f`'s gradients over every parameter in
/// the model. Mirrors the standalone checker; lives here because the
/// model owns its store.
pub fn grad_check_model(
    model: &mut Model,
    f: &dyn Fn(&Model, &mut Tape) -> Var,
    eps: f64,
) -> GradCheckReport {
    let mut tape = Tape::new();
    let loss = f(model, &mut tape);
    let min_relu = tape.min_relu_input_abs();
    let analytic = tape.backward(loss, &model.store);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_entry: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        entries_checked: 0,
        min_relu_input_abs: min_relu,
    };
    for id in 0..model.store.len() {
        let (r, c) = model.store.shape(id);
        for i in 0..r * c {
            let orig = model.store.value(id).data[i];
            model.store.value_mut(id).data[i] = orig + eps;
            let fp = {
                let mut t = Tape::new();
                let l = f(model, &mut t);
                t.scalar(l)
            };
            model.store.value_mut(id).data[i] = orig - eps;
            let fm = {
                let mut t = Tape::new();
                let l = f(model, &mut t);
                t.scalar(l)
            };
            model.store.value_mut(id).data[i] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let g = analytic.by_id[id].data[i];
            let rel = (g - numeric).abs() / (g.abs() + REL_ERR_FLOOR);
            report.entries_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = model.store.name(id).to_string();
                report.worst_entry = i;
                report.analytic_at_worst = g;
                report.numeric_at_worst = numeric;
            }
        }
    }
    report
}

// ------------------------------------------------------------- output

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRow {
    pub split: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

/// Write rows as `split,metric,value,seed` with a header line.
pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> std::io::Result<()> {
    let mut out = String::from("split,metric,value,seed\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.split, r.metric, r.value, r.seed)
            .expect("writing to a String cannot fail");
    }
    fs::write(path, out)
}

/// Append one JSON object as a line, creating the file on first use.
pub fn append_jsonl<T: Serialize>(path: &Path, row: &T) -> std::io::Result<()> {
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(file, "{}", serde_json::to_string(row)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_program, Dialect, Item};
    use crate::executor::{GuidanceMode, ModelConfig};
    use crate::gridworld::Cell;
    use crate::oracle::{execute_reasoning, plan};
    use crate::scene::{compute_relations, SceneObject};
    use crate::taskgen::{
        sample_policy_instance, sample_reasoning_instance, EnvRanges, PolicyConstraints,
        ReasoningConstraints, SceneRanges,
    };
    use std::collections::BTreeMap;

    fn tiny_reasoning_model(seed: u64) -> Model {
        let mut cfg = ModelConfig::reasoning_desk(seed);
        cfg.d_token = 4;
        cfg.heads = 2;
        cfg.head_hidden = 16;
        cfg.n_slots = 8;
        cfg.guidance = GuidanceMode::Full;
        Model::new(cfg)
    }

    fn tiny_policy_model(seed: u64) -> Model {
        let mut cfg = ModelConfig::policy_desk(seed);
        cfg.d_token = 4;
        cfg.heads = 2;
        cfg.head_hidden = 16;
        cfg.encoder_hidden = 16;
        Model::new(cfg)
    }

    fn toy_scene() -> SceneGraph {
        let mk = |id: usize, name: &str, color: &str, cx: f64, cy: f64| {
            let mut attrs = BTreeMap::new();
            attrs.insert("color".to_string(), color.to_string());
            attrs.insert("material".to_string(), "wooden".to_string());
            attrs.insert("shape".to_string(), "round".to_string());
            SceneObject {
                id,
                name: name.into(),
                attrs,
                bbox: [cx - 0.05, cy - 0.05, 0.1, 0.1],
            }
        };
        let objects = vec![
            mk(0, "bag", "red", 0.2, 0.5),
            mk(1, "bag", "blue", 0.8, 0.5),
            mk(2, "bottle", "green", 0.5, 0.2),
        ];
        let relations = compute_relations(&objects);
        SceneGraph {
            id: "train-toy".into(),
            scene: "indoors".into(),
            objects,
            relations,
        }
    }

    /// One gold cell under the agent; `Mine(gold)` ends the episode in
    /// a single step, so every action is a one-armed bandit pull.
    fn bandit_instance() -> PolicyInstance {
        let mut env = GridWorld::empty(3);
        env.agent = (1, 1);
        env.set_cell(1, 1, Cell::Item(Item::Gold));
        let program = parse_program("Mine(gold);", Dialect::Policy).unwrap();
        let outcome = plan(&program, &env);
        assert!(outcome.feasible);
        PolicyInstance {
            id: "bandit".into(),
            text: format_program(&program),
            env,
            trace: outcome.trace,
            visited: outcome.visited,
        }
    }

    #[test]
    fn dense_and_partial_agree_on_a_single_routine_program() {
        let model = tiny_reasoning_model(31);
        let program = parse_program("Select(bag)", Dialect::Reasoning).unwrap();
        let scene = toy_scene();
        let outputs = execute_reasoning(&program, &scene).unwrap();
        let featurizer = SceneFeaturizer::new(&model, 5);
        let features = featurizer.features(&scene);
        let mut dense_tape = Tape::new();
        let dense = reasoning_loss(
            &model,
            &mut dense_tape,
            &program,
            &features,
            &outputs,
            Supervision::Dense,
            ExecMode::Sequential,
        );
        let mut partial_tape = Tape::new();
        let partial = reasoning_loss(
            &model,
            &mut partial_tape,
            &program,
            &features,
            &outputs,
            Supervision::Partial,
            ExecMode::Sequential,
        );
        assert_eq!(dense_tape.scalar(dense), partial_tape.scalar(partial));
    }

    #[test]
    fn value_targets_are_indicator_rows() {
        let model = tiny_reasoning_model(32);
        let (out, t) = value_target(&model, &Value::Bool(true));
        assert_eq!(out, OutputType::Boolean);
        assert_eq!(t.data, vec![0.0, 1.0]);
        let (out, t) = value_target(&model, &Value::Objects(vec![0, 2]));
        assert_eq!(out, OutputType::Objects);
        assert_eq!(t.data[0], 1.0);
        assert_eq!(t.data[1], 0.0);
        assert_eq!(t.data[2], 1.0);
        let (out, t) = value_target(&model, &Value::Word("red".into()));
        assert_eq!(out, OutputType::Answer);
        assert_eq!(t.data.iter().sum::<f64>(), 1.0);
        assert_eq!(t.data[vocab::answer_index("red").unwrap()], 1.0);
    }

    #[test]
    fn fitting_reduces_dense_loss() {
        let mut model = tiny_reasoning_model(33);
        let featurizer = SceneFeaturizer::new(&model, 7);
        let mut rng = seeded_rng(40, "train-test", 0);
        let instances: Vec<ReasoningInstance> = (0..12)
            .map(|i| {
                sample_reasoning_instance(
                    &mut rng,
                    format!("fit-{i}"),
                    &SceneRanges::desk(),
                    &ReasoningConstraints::standard(),
                    200,
                )
            })
            .collect();
        let prepared = prepare_reasoning(&featurizer, &instances);
        let mut cfg = FitConfig::reasoning_desk(40);
        cfg.epochs = 6;
        cfg.batch_size = 6;
        cfg.adam.lr = 3e-3;
        cfg.lr_decay = 0.9;
        cfg.chunks = 4;
        cfg.mode = ExecMode::Sequential;
        cfg.eval_every = 6;
        let report = train_reasoning(&mut model, &prepared, &prepared, &cfg);
        assert_eq!(report.epochs_run, 6);
        let first = report.history.first().unwrap().mean_loss;
        let last = report.history.last().unwrap().mean_loss;
        assert!(last < first, "loss went {first} -> {last}");
    }

    #[test]
    fn teacher_forcing_reduces_policy_loss() {
        let mut model = tiny_policy_model(34);
        let mut rng = seeded_rng(41, "train-test", 1);
        let instances: Vec<PolicyInstance> = (0..6)
            .map(|i| {
                sample_policy_instance(
                    &mut rng,
                    format!("bc-{i}"),
                    &EnvRanges::desk(),
                    &PolicyConstraints::supervised(),
                    200,
                )
            })
            .collect();
        let prepared = prepare_policy(&instances);
        let mut cfg = FitConfig::policy_desk(41);
        cfg.epochs = 5;
        cfg.batch_size = 3;
        cfg.adam.lr = 2e-3;
        cfg.chunks = 3;
        cfg.eval_every = 5;
        let report = train_policy_bc(&mut model, &prepared, &prepared, &cfg);
        let first = report.history.first().unwrap().mean_loss;
        let last = report.history.last().unwrap().mean_loss;
        assert!(last < first, "loss went {first} -> {last}");
    }

    #[test]
    fn entropy_of_a_uniform_distribution_is_ln_k() {
        let mut tape = Tape::new();
        let dist = tape.constant(Matrix::from_vec(1, 4, vec![0.25; 4]));
        let ent = dist_entropy(&mut tape, dist);
        assert!((tape.scalar(ent) - 4.0_f64.ln()).abs() < 1e-9);
    }

    /// The sampled policy-gradient estimator matches the closed-form
    /// expectation on a one-step bandit: for the action head's output
    /// bias, grad of -log pi(a) * (R(a) - V) averaged over samples must
    /// approach sum_a pi(a) (R(a) - V) (pi - onehot(a)).
    #[test]
    fn policy_gradient_estimator_is_unbiased_on_the_bandit() {
        let model = tiny_policy_model(35);
        let inst = bandit_instance();
        let program = inst.program();

        // The state is fixed, so pi and V are single forward passes.
        let mut probe = PolicyStepper::with_budgets(&model, program.clone(), inst.env.clone(), 1, 8);
        let v = probe.peek_value(&model);
        let pi = probe.step(&model, None).unwrap().dist;
        assert_eq!(pi.len(), 8);
        let reward_of = |a: usize| if a == 4 { 1.0 } else { 0.0 };
        let expected: Vec<f64> = (0..8)
            .map(|j| {
                (0..8)
                    .map(|a| pi[a] * (reward_of(a) - v) * (pi[j] - ((a == j) as i32 as f64)))
                    .sum()
            })
            .collect();

        let b2 = model.store.find("head.action.b2").unwrap();
        let n = 6000;
        let mut rng = seeded_rng(35, "bandit-samples", 0);
        let mut sum = vec![0.0; 8];
        let mut sumsq = vec![0.0; 8];
        for _ in 0..n {
            let mut stepper =
                PolicyStepper::with_budgets(&model, program.clone(), inst.env.clone(), 1, 8);
            let z0 = stepper.z.clone();
            let out = stepper.step(&model, Some(&mut rng)).unwrap();
            assert!(out.terminal);
            let mut tape = Tape::new();
            let pairs = model.run_policy_window(&mut tape, &program, &z0, &[out.replay.clone()]);
            let (dist, value) = pairs[0];
            let advantage = out.reward - tape.scalar(value);
            let mut pick = Matrix::zeros(1, 8);
            pick.data[out.replay.choice] = 1.0;
            let pick = tape.constant(pick);
            let chosen = tape.hadamard(dist, pick);
            let prob = tape.sum_all(chosen);
            let prob = tape.add_scalar(prob, 1e-12);
            let score = tape.log(prob);
            let loss = tape.scale(score, -advantage);
            let grads = tape.backward(loss, &model.store);
            for (j, g) in grads.by_id[b2].data.iter().enumerate() {
                sum[j] += g;
                sumsq[j] += g * g;
            }
        }
        for j in 0..8 {
            let mean = sum[j] / n as f64;
            let var = (sumsq[j] / n as f64 - mean * mean).max(0.0);
            let se = (var / n as f64).sqrt();
            let err = (mean - expected[j]).abs();
            assert!(
                err <= 3.0 * se + 1e-9,
                "entry {j}: sampled {mean} vs expected {} is {err} > 3 x {se}",
                expected[j]
            );
        }
    }

    #[test]
    fn actor_critic_learns_the_one_step_bandit() {
        let mut model = tiny_policy_model(36);
        let sampler = |_rng: &mut ChaCha8Rng| bandit_instance();
        let held_out = prepare_policy(&[bandit_instance()]);
        let mut cfg = A2cConfig::desk(36);
        cfg.envs = 16;
        cfg.chunks = 4;
        cfg.window = 4;
        cfg.adam.lr = 5e-3;
        cfg.entropy_beta = 0.01;
        cfg.action_budget = 1;
        cfg.control_budget = 8;
        cfg.max_env_steps = 8_000;
        cfg.eval_every = 320;
        cfg.target_completion = Some(1.0);
        let report = train_policy_a2c(&mut model, &sampler, &held_out, &cfg);
        assert!(
            report.reached_target,
            "completion {} after {} env steps",
            report.final_completion, report.env_steps
        );
        assert_eq!(report.final_completion, 1.0);
        assert!(report.episodes > 0);
    }

    #[test]
    fn actor_critic_runs_are_deterministic() {
        let run = || {
            let mut model = tiny_policy_model(37);
            let sampler = |rng: &mut ChaCha8Rng| {
                sample_policy_instance(
                    rng,
                    "rl".into(),
                    &EnvRanges::desk(),
                    &PolicyConstraints::reinforcement(),
                    200,
                )
            };
            let held_out = prepare_policy(&[bandit_instance()]);
            let mut cfg = A2cConfig::desk(37);
            cfg.envs = 8;
            cfg.chunks = 3;
            cfg.window = 3;
            cfg.max_env_steps = 60;
            cfg.eval_every = 0;
            let report = train_policy_a2c(&mut model, &sampler, &held_out, &cfg);
            (model, report)
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(r1.env_steps, r2.env_steps);
        assert_eq!(r1.updates, r2.updates);
        assert_eq!(m1.store.len(), m2.store.len());
        for id in 0..m1.store.len() {
            assert_eq!(
                m1.store.value(id).data,
                m2.store.value(id).data,
                "parameter {} diverged across identical runs",
                m1.store.name(id)
            );
        }
    }

    #[test]
    fn model_gradients_match_finite_differences() {
        let mut cfg = ModelConfig::reasoning_desk(38);
        cfg.d_token = 2;
        cfg.heads = 2;
        cfg.head_hidden = 4;
        cfg.n_slots = 3;
        let mut model = Model::new(cfg);
        let program = parse_program("Select(bag); Exist[1]", Dialect::Reasoning).unwrap();
        let scene = toy_scene();
        let outputs = execute_reasoning(&program, &scene).unwrap();
        let featurizer = SceneFeaturizer::new(&model, 9);
        let features = featurizer.features(&scene);
        let f = move |m: &Model, tape: &mut Tape| {
            reasoning_loss(
                m,
                tape,
                &program,
                &features,
                &outputs,
                Supervision::Dense,
                ExecMode::Sequential,
            )
        };
        let report = grad_check_model(&mut model, &f, 1e-5);
        assert!(report.entries_checked > 500);
        assert!(
            report.max_rel_err <= 1e-4,
            "max rel err {} at {}[{}] (analytic {}, numeric {})",
            report.max_rel_err,
            report.worst_param,
            report.worst_entry,
            report.analytic_at_worst,
            report.numeric_at_worst
        );
    }

    #[test]
    fn metrics_files_round_trip() {
        let dir = std::env::temp_dir().join(format!("train-metrics-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let csv = dir.join("metrics.csv");
        write_metrics_csv(
            &csv,
            &[MetricRow {
                split: "test".into(),
                metric: "final_accuracy".into(),
                value: 0.5,
                seed: 3,
            }],
        )
        .unwrap();
        let text = fs::read_to_string(&csv).unwrap();
        assert!(text.starts_with("split,metric,value,seed\n"));
        assert!(text.contains("test,final_accuracy,0.5,3"));

        let jsonl = dir.join("log.jsonl");
        append_jsonl(&jsonl, &serde_json::json!({"a": 1})).unwrap();
        append_jsonl(&jsonl, &serde_json::json!({"a": 2})).unwrap();
        let lines = fs::read_to_string(&jsonl).unwrap();
        assert_eq!(lines.lines().count(), 2);
        fs::remove_dir_all(&dir).ok();
    }
}
