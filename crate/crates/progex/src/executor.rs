//! The learned executor: a result matrix refined by attention under
//! program guidance, typed decoding heads, and the drivers that run
//! whole programs against a scene or a gridworld.
//!
//! One inference step is three attention sites applied to the result
//! matrix `Z` (one row per executable routine, zero at the start):
//! cross-attention into the semantic matrix, masked self-attention under
//! the transition mask, cross-attention into the specification. Only the
//! rows of currently active routines are rewritten by a step; every
//! other row keeps the result stored when its routine last executed.
//! Frozen rows are what make the parallel schedule agree with the
//! sequential one: a routine reads its parents' stored rows, which are
//! identical under any schedule that respects dependencies.
//!
//! Every forward exists twice: on the tape (for gradients) and on plain
//! matrices (for acting and evaluation). Tests pin the two to each other.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsl::{Dialect, OutputType, Program, Vocabulary, TOKEN_BUDGET};
use crate::flow::{parallel_waves, sequential_waves, FlowKind, FlowTargets, PointerState};
use crate::gridworld::{
    resolve_action, GridWorld, ProgramMonitor, ACTION_HEAD, CELL_FEATURES, INVENTORY_FEATURES,
};
use crate::guidance::{
    declared_parents, open_mask, positional_encoding, semantic_matrix, semantic_matrix_values,
    transition_mask,
};
use crate::oracle::{TraceItem, MAX_CONTROL_EVALS, MAX_PLAN_ACTIONS};
use crate::rng::seeded_rng;
use crate::scene::vocab;
use crate::tensor::attention::{attention, attention_forward, AttentionParams};
use crate::tensor::mlp::Mlp;
use crate::tensor::params::{Init, ParamStore};
use crate::tensor::{softmax_rows, Matrix, Tape, Var};

/// Which guidance channels reach the attention trunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMode {
    /// Semantic matrix and transition mask both active.
    Full,
    /// Transition mask replaced by an all-open mask; routine identity
    /// still reaches the model through the semantic matrix.
    NoStructure,
    /// Semantic matrix (including its positional rows) replaced by
    /// zeros; the mask still gates message passing.
    NoSemantic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dialect: Dialect,
    /// Width of one token embedding. The model width is
    /// `TOKEN_BUDGET * d_token`, so the semantic rows need no extra
    /// projection.
    pub d_token: usize,
    pub heads: usize,
    /// Stacked attention blocks per inference step.
    pub blocks: usize,
    /// Hidden width of the decoding-head MLPs.
    pub head_hidden: usize,
    /// Hidden width of the gridworld encoder MLPs (policy dialect only).
    pub encoder_hidden: usize,
    /// Object slots in a scene specification (reasoning dialect only);
    /// the arity of the object head.
    pub n_slots: usize,
    pub guidance: GuidanceMode,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl ModelConfig {
    /// Model width: semantic rows are `TOKEN_BUDGET` concatenated token
    /// embeddings.
    pub fn d(&self) -> usize {
        TOKEN_BUDGET * self.d_token
    }

    pub fn reasoning_desk(seed: u64) -> ModelConfig {
        ModelConfig {
            dialect: Dialect::Reasoning,
            d_token: 16,
            heads: 8,
            blocks: 1,
            head_hidden: 64,
            encoder_hidden: 64,
            n_slots: 8,
            guidance: GuidanceMode::Full,
            seed,
        }
    }

    pub fn policy_desk(seed: u64) -> ModelConfig {
        ModelConfig {
            dialect: Dialect::Policy,
            d_token: 16,
            heads: 8,
            blocks: 1,
            head_hidden: 64,
            encoder_hidden: 64,
            n_slots: 0,
            guidance: GuidanceMode::Full,
            seed,
        }
    }
}

/// One attention block: semantic cross-attention, masked
/// self-attention, specification cross-attention.
#[derive(Debug, Clone)]
struct Block {
    semantic: AttentionParams,
    refine: AttentionParams,
    spec: AttentionParams,
}

#[derive(Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    embed: usize,
    blocks: Vec<Block>,
    head_bool: Mlp,
    head_action: Option<Mlp>,
    head_objects: Option<Mlp>,
    head_answer: Option<Mlp>,
    head_value: Option<Mlp>,
    enc_cell: Option<Mlp>,
    enc_inventory: Option<Mlp>,
}

impl Model {
    /// Build a model with freshly initialized parameters. Creation
    /// order is fixed, so a store built from the same config accepts
    /// any checkpoint written by a model with that config.
    pub fn new(cfg: ModelConfig) -> Model {
        assert!(cfg.d_token > 0 && cfg.blocks > 0);
        let d = cfg.d();
        assert!(d % cfg.heads == 0, "width {d} not divisible by {} heads", cfg.heads);
        let vocab = Vocabulary::for_dialect(cfg.dialect);
        let mut rng = seeded_rng(cfg.seed, "model-init", 0);
        let mut store = ParamStore::new();
        let embed = store.add("embed", vocab.len(), cfg.d_token, Init::Glorot, &mut rng);
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for b in 0..cfg.blocks {
            blocks.push(Block {
                semantic: AttentionParams::learned(
                    &mut store,
                    &mut rng,
                    &format!("block{b}.semantic"),
                    d,
                    cfg.heads,
                ),
                refine: AttentionParams::learned(
                    &mut store,
                    &mut rng,
                    &format!("block{b}.refine"),
                    d,
                    cfg.heads,
                ),
                spec: AttentionParams::learned(
                    &mut store,
                    &mut rng,
                    &format!("block{b}.spec"),
                    d,
                    cfg.heads,
                ),
            });
        }
        let head_bool = Mlp::new(&mut store, &mut rng, "head.bool", d, cfg.head_hidden, 2);
        let mut head_action = None;
        let mut head_objects = None;
        let mut head_answer = None;
        let mut head_value = None;
        let mut enc_cell = None;
        let mut enc_inventory = None;
        match cfg.dialect {
            Dialect::Policy => {
                head_action = Some(Mlp::new(
                    &mut store,
                    &mut rng,
                    "head.action",
                    d,
                    cfg.head_hidden,
                    ACTION_HEAD,
                ));
                head_value = Some(Mlp::new(&mut store, &mut rng, "head.value", d, cfg.head_hidden, 1));
                enc_cell = Some(Mlp::new(
                    &mut store,
                    &mut rng,
                    "encode.cell",
                    CELL_FEATURES,
                    cfg.encoder_hidden,
                    d,
                ));
                enc_inventory = Some(Mlp::new(
                    &mut store,
                    &mut rng,
                    "encode.inventory",
                    INVENTORY_FEATURES,
                    cfg.encoder_hidden,
                    d,
                ));
            }
            Dialect::Reasoning => {
                assert!(cfg.n_slots > 0, "reasoning model needs object slots");
                head_objects = Some(Mlp::new(
                    &mut store,
                    &mut rng,
                    "head.objects",
                    d,
                    cfg.head_hidden,
                    cfg.n_slots,
                ));
                head_answer = Some(Mlp::new(
                    &mut store,
                    &mut rng,
                    "head.answer",
                    d,
                    cfg.head_hidden,
                    vocab::answer_words().len(),
                ));
            }
        }
        Model {
            cfg,
            vocab,
            store,
            embed,
            blocks,
            head_bool,
            head_action,
            head_objects,
            head_answer,
            head_value,
            enc_cell,
            enc_inventory,
        }
    }

    fn head(&self, out: OutputType) -> &Mlp {
        match out {
            OutputType::Boolean => &self.head_bool,
            OutputType::Action => self.head_action.as_ref().expect("no action head"),
            OutputType::Objects => self.head_objects.as_ref().expect("no objects head"),
            OutputType::Answer => self.head_answer.as_ref().expect("no answer head"),
        }
    }

    /// Arity of the distribution a head produces.
    pub fn head_arity(&self, out: OutputType) -> usize {
        self.head(out).d_out
    }

    /// Semantic guidance rows for a program, honoring the ablation.
    pub fn semantic_rows(&self, tape: &mut Tape, program: &Program) -> Var {
        match self.cfg.guidance {
            GuidanceMode::NoSemantic => {
                tape.constant(Matrix::zeros(program.n_exec(), self.cfg.d()))
            }
            _ => semantic_matrix(
                tape,
                &self.store,
                self.embed,
                program,
                &self.vocab,
                TOKEN_BUDGET,
                true,
            )
            .expect("program tokens outside the model vocabulary"),
        }
    }

    /// The same rows as [`Model::semantic_rows`] without a tape.
    pub fn semantic_rows_values(&self, program: &Program) -> Matrix {
        match self.cfg.guidance {
            GuidanceMode::NoSemantic => Matrix::zeros(program.n_exec(), self.cfg.d()),
            _ => semantic_matrix_values(
                self.store.value(self.embed),
                program,
                &self.vocab,
                TOKEN_BUDGET,
                true,
            )
            .expect("program tokens outside the model vocabulary"),
        }
    }

    /// Transition mask for the active positions, honoring the ablation.
    pub fn mask_for(
        &self,
        program: &Program,
        active: &[usize],
        parents_of: impl Fn(usize) -> Vec<usize>,
    ) -> Matrix {
        match self.cfg.guidance {
            GuidanceMode::NoStructure => open_mask(program.n_exec()),
            _ => transition_mask(program, active, parents_of),
        }
    }

    /// A static scene specification: object features enter the trunk as
    /// they are, one row per slot.
    pub fn encode_scene(&self, tape: &mut Tape, features: &Matrix) -> Var {
        assert_eq!(features.cols, self.cfg.d(), "scene feature width");
        tape.constant(features.clone())
    }

    /// Gridworld specification rows: an MLP over per-cell features plus
    /// a broadcast MLP over the inventory.
    pub fn encode_grid(&self, tape: &mut Tape, cells: &Matrix, inventory: &[f64]) -> Var {
        let enc_cell = self.enc_cell.as_ref().expect("no grid encoder");
        let enc_inv = self.enc_inventory.as_ref().expect("no inventory encoder");
        let c = tape.constant(cells.clone());
        let rows = enc_cell.forward(tape, &self.store, c);
        let inv = tape.constant(Matrix::from_vec(1, inventory.len(), inventory.to_vec()));
        let inv_row = enc_inv.forward(tape, &self.store, inv);
        tape.add_row_broadcast(rows, inv_row)
    }

    /// The same rows as [`Model::encode_grid`] without a tape.
    pub fn encode_grid_values(&self, cells: &Matrix, inventory: &[f64]) -> Matrix {
        let enc_cell = self.enc_cell.as_ref().expect("no grid encoder");
        let enc_inv = self.enc_inventory.as_ref().expect("no inventory encoder");
        let rows = enc_cell.forward_values(&self.store, cells);
        let inv = Matrix::from_vec(1, inventory.len(), inventory.to_vec());
        let inv_row = enc_inv.forward_values(&self.store, &inv);
        let mut out = rows;
        for i in 0..out.rows {
            for (v, b) in out.row_mut(i).iter_mut().zip(&inv_row.data) {
                *v += b;
            }
        }
        out
    }

    /// One inference step on the tape. Returns the merged result matrix
    /// (active rows rewritten, others kept) and the full refreshed
    /// matrix the active rows were taken from.
    pub fn infer_step(
        &self,
        tape: &mut Tape,
        z: Var,
        semantic: Var,
        mask: &Matrix,
        spec: Var,
        active_rows: &[usize],
    ) -> (Var, Var) {
        let n = tape.value(z).rows;
        let d = self.cfg.d();
        let pe = tape.constant(positional_encoding(n, d));
        let mut current = z;
        for block in &self.blocks {
            let q = tape.add(current, pe);
            let h1 = attention(tape, &self.store, &block.semantic, q, semantic, None);
            let h2 = attention(tape, &self.store, &block.refine, h1, h1, Some(mask));
            current = attention(tape, &self.store, &block.spec, h2, spec, None);
        }
        let fresh = current;
        let take = tape.constant(row_indicator(n, d, active_rows, 1.0));
        let keep = tape.constant(row_indicator(n, d, active_rows, 0.0));
        let kept = tape.hadamard(z, keep);
        let taken = tape.hadamard(fresh, take);
        (tape.add(kept, taken), fresh)
    }

    /// The same step as [`Model::infer_step`] without a tape.
    pub fn infer_step_values(
        &self,
        z: &Matrix,
        semantic: &Matrix,
        mask: &Matrix,
        spec: &Matrix,
        active_rows: &[usize],
    ) -> (Matrix, Matrix) {
        let n = z.rows;
        let d = self.cfg.d();
        let pe = positional_encoding(n, d);
        let mut current = z.clone();
        for block in &self.blocks {
            let q = current.add(&pe);
            let h1 = attention_forward(&self.store, &block.semantic, &q, semantic, None);
            let h2 = attention_forward(&self.store, &block.refine, &h1, &h1, Some(mask));
            current = attention_forward(&self.store, &block.spec, &h2, spec, None);
        }
        let mut merged = z.clone();
        for &r in active_rows {
            merged.row_mut(r).copy_from_slice(current.row(r));
        }
        (merged, current)
    }

    /// Decode one result row through the head for its output type. The
    /// object head emits independent per-slot probabilities; every
    /// other head emits a distribution.
    pub fn decode(&self, tape: &mut Tape, fresh: Var, row: usize, out: OutputType) -> Var {
        let zr = tape.select_rows(fresh, &[row]);
        let logits = self.head(out).forward(tape, &self.store, zr);
        match out {
            OutputType::Objects => tape.sigmoid(logits),
            _ => tape.softmax_rows(logits),
        }
    }

    /// The same decoding as [`Model::decode`] without a tape.
    pub fn decode_values(&self, fresh: &Matrix, row: usize, out: OutputType) -> Vec<f64> {
        let zr = Matrix::from_vec(1, fresh.cols, fresh.row(row).to_vec());
        let logits = self.head(out).forward_values(&self.store, &zr);
        match out {
            OutputType::Objects => logits.data.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
            _ => softmax_rows(&logits).expect("head softmax").data,
        }
    }

    /// Scalar state-value estimate from one result row (policy dialect).
    pub fn state_value(&self, tape: &mut Tape, fresh: Var, row: usize) -> Var {
        let zr = tape.select_rows(fresh, &[row]);
        self.head_value
            .as_ref()
            .expect("no value head")
            .forward(tape, &self.store, zr)
    }

    /// The same estimate as [`Model::state_value`] without a tape.
    pub fn state_value_values(&self, fresh: &Matrix, row: usize) -> f64 {
        let zr = Matrix::from_vec(1, fresh.cols, fresh.row(row).to_vec());
        self.head_value
            .as_ref()
            .expect("no value head")
            .forward_values(&self.store, &zr)
            .get(0, 0)
    }
}

fn row_indicator(n: usize, d: usize, rows: &[usize], value_in_rows: f64) -> Matrix {
    let mut m = Matrix::from_fn(n, d, |_, _| 1.0 - value_in_rows);
    for &r in rows {
        for v in m.row_mut(r) {
            *v = value_in_rows;
        }
    }
    m
}

/// Schedule for reasoning programs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    /// One routine per inference step, in position order.
    Sequential,
    /// Whole dependency levels per inference step.
    Parallel,
}

/// A reasoning execution on the tape: one decoded distribution per
/// routine, in execution order.
pub struct ReasoningRun {
    /// `(position, output type, decoded distribution)` in execution
    /// order.
    pub outputs: Vec<(usize, OutputType, Var)>,
    /// Inference steps taken (waves in parallel mode).
    pub steps: usize,
    /// Position of the program's final routine.
    pub sink: usize,
    pub final_z: Var,
}

impl ReasoningRun {
    pub fn output_of(&self, position: usize) -> (OutputType, Var) {
        self.outputs
            .iter()
            .find(|(p, _, _)| *p == position)
            .map(|(_, t, v)| (*t, *v))
            .expect("position never executed")
    }

    pub fn final_output(&self) -> (OutputType, Var) {
        self.output_of(self.sink)
    }
}

/// A reasoning execution on plain matrices.
pub struct ReasoningEval {
    pub outputs: Vec<(usize, OutputType, Vec<f64>)>,
    pub steps: usize,
    pub sink: usize,
}

impl ReasoningEval {
    pub fn final_output(&self) -> (OutputType, &[f64]) {
        self.outputs
            .iter()
            .find(|(p, _, _)| *p == self.sink)
            .map(|(_, t, v)| (*t, v.as_slice()))
            .expect("sink never executed")
    }
}

fn reasoning_schedule(program: &Program, mode: ExecMode) -> Vec<Vec<usize>> {
    match mode {
        ExecMode::Sequential => sequential_waves(program),
        ExecMode::Parallel => parallel_waves(program),
    }
}

impl Model {
    /// Execute a reasoning program over a static scene specification on
    /// the tape, decoding every routine's output at the step it runs.
    pub fn run_reasoning(
        &self,
        tape: &mut Tape,
        program: &Program,
        features: &Matrix,
        mode: ExecMode,
    ) -> ReasoningRun {
        assert_eq!(program.dialect, Dialect::Reasoning);
        let schedule = reasoning_schedule(program, mode);
        let semantic = self.semantic_rows(tape, program);
        let spec = self.encode_scene(tape, features);
        let n = program.n_exec();
        let mut z = tape.constant(Matrix::zeros(n, self.cfg.d()));
        let parents = declared_parents(program);
        let mut outputs = Vec::with_capacity(n);
        let mut steps = 0;
        for wave in &schedule {
            let mask = self.mask_for(program, wave, &parents);
            let rows: Vec<usize> = wave.iter().map(|&p| program.exec_row(p).unwrap()).collect();
            let (merged, fresh) = self.infer_step(tape, z, semantic, &mask, spec, &rows);
            for (&p, &r) in wave.iter().zip(&rows) {
                let out = program.routine(p).kind.output_type().expect("marker in schedule");
                outputs.push((p, out, self.decode(tape, fresh, r, out)));
            }
            z = merged;
            steps += 1;
        }
        let sink = program.routines.last().expect("empty program").index;
        ReasoningRun {
            outputs,
            steps,
            sink,
            final_z: z,
        }
    }

    /// The same execution as [`Model::run_reasoning`] without a tape.
    pub fn run_reasoning_values(
        &self,
        program: &Program,
        features: &Matrix,
        mode: ExecMode,
    ) -> ReasoningEval {
        assert_eq!(program.dialect, Dialect::Reasoning);
        let schedule = reasoning_schedule(program, mode);
        let semantic = self.semantic_rows_values(program);
        let n = program.n_exec();
        let mut z = Matrix::zeros(n, self.cfg.d());
        let parents = declared_parents(program);
        let mut outputs = Vec::with_capacity(n);
        let mut steps = 0;
        for wave in &schedule {
            let mask = self.mask_for(program, wave, &parents);
            let rows: Vec<usize> = wave.iter().map(|&p| program.exec_row(p).unwrap()).collect();
            let (merged, fresh) = self.infer_step_values(&z, &semantic, &mask, features, &rows);
            for (&p, &r) in wave.iter().zip(&rows) {
                let out = program.routine(p).kind.output_type().expect("marker in schedule");
                outputs.push((p, out, self.decode_values(&fresh, r, out)));
            }
            z = merged;
            steps += 1;
        }
        let sink = program.routines.last().expect("empty program").index;
        ReasoningEval {
            outputs,
            steps,
            sink,
        }
    }
}

/// Everything needed to replay one acted policy step on the tape.
#[derive(Debug, Clone)]
pub struct ReplayStep {
    pub position: usize,
    /// Previously executed routine, the mask parent of this step.
    pub parent: Option<usize>,
    pub out_type: OutputType,
    /// Head index the actor chose.
    pub choice: usize,
    /// Cell features observed before the step.
    pub cells: Matrix,
    /// Inventory features observed before the step.
    pub inventory: Vec<f64>,
}

/// One acted policy step: the replay payload plus what happened.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub replay: ReplayStep,
    /// Decoded head distribution at acting time.
    pub dist: Vec<f64>,
    pub reward: f64,
    /// True when an action routine met its ending condition this step.
    pub routine_done: bool,
    /// True when this step ended the episode.
    pub terminal: bool,
}

/// Free-running policy execution state. The model's own pointer decides
/// branches from the boolean head; a [`ProgramMonitor`] fed the true
/// environment feedback judges completion.
pub struct PolicyStepper {
    pub program: Program,
    flow: FlowTargets,
    pub state: PointerState,
    judge: ProgramMonitor,
    pub env: GridWorld,
    pub z: Matrix,
    semantic: Matrix,
    pub env_steps: usize,
    pub control_evals: usize,
    action_budget: usize,
    control_budget: usize,
    /// `Some(success)` once the episode is over.
    pub finished: Option<bool>,
}

impl PolicyStepper {
    pub fn new(model: &Model, program: Program, env: GridWorld) -> PolicyStepper {
        PolicyStepper::with_budgets(model, program, env, MAX_PLAN_ACTIONS, MAX_CONTROL_EVALS)
    }

    pub fn with_budgets(
        model: &Model,
        program: Program,
        env: GridWorld,
        action_budget: usize,
        control_budget: usize,
    ) -> PolicyStepper {
        assert_eq!(program.dialect, Dialect::Policy);
        let judge = ProgramMonitor::new(&program, &env);
        let semantic = model.semantic_rows_values(&program);
        let z = Matrix::zeros(program.n_exec(), model.cfg.d());
        let flow = FlowTargets::compute(&program);
        let mut s = PolicyStepper {
            program,
            flow,
            state: PointerState::start(),
            judge,
            env,
            z,
            semantic,
            env_steps: 0,
            control_evals: 0,
            action_budget,
            control_budget,
            finished: None,
        };
        s.skip_satisfied();
        s.settle();
        s
    }

    /// Zero-step skips: a `Goto` whose target is already under the
    /// agent consumes no inference step and stays invisible to the
    /// result matrix, exactly as in the planner.
    fn skip_satisfied(&mut self) {
        let mut guard = 2 * self.program.len() + 4;
        while let Some(pos) = self.state.position() {
            let kind = &self.program.routine(pos).kind;
            let is_action = matches!(self.flow.kind(pos), FlowKind::Action { .. });
            if is_action && self.env.pre_satisfied(kind) {
                self.state.advance_action(&self.flow, pos, true, false);
                guard -= 1;
                assert!(guard > 0, "pre-satisfied skips cycled");
                continue;
            }
            break;
        }
    }

    fn settle(&mut self) {
        if self.finished.is_some() {
            return;
        }
        if self.judge.completed() {
            self.finished = Some(true);
        } else if self.judge.failed() || self.state.done() {
            // The judge diverged, or the model believes the program is
            // over while the environment disagrees.
            self.finished = Some(false);
        } else if self.env_steps >= self.action_budget || self.control_evals >= self.control_budget
        {
            self.finished = Some(false);
        }
    }

    pub fn completed(&self) -> bool {
        self.finished == Some(true)
    }

    /// Run one inference step. Actions are sampled from the head
    /// distribution when `rng` is given, taken by argmax otherwise.
    /// Returns `None` once the episode is over.
    pub fn step(&mut self, model: &Model, rng: Option<&mut ChaCha8Rng>) -> Option<StepOutcome> {
        if self.finished.is_some() {
            return None;
        }
        let pos = self.state.position().expect("settle missed a finished pointer");
        let kind = self.program.routine(pos).kind.clone();
        let parent = self.state.prev_executed;
        let cells = self.env.encode_cells();
        let inventory = self.env.encode_inventory();
        let spec = model.encode_grid_values(&cells, &inventory);
        let mask = model.mask_for(&self.program, &[pos], |_| parent.into_iter().collect());
        let row = self.program.exec_row(pos).expect("pointer on a marker");
        let (merged, fresh) =
            model.infer_step_values(&self.z, &self.semantic, &mask, &spec, &[row]);
        let out_type = kind.output_type().expect("pointer on a marker");
        let dist = model.decode_values(&fresh, row, out_type);
        let choice = match rng {
            Some(r) => sample_index(&dist, r),
            None => argmax(&dist),
        };
        self.z = merged;
        let mut reward = 0.0;
        let mut routine_done = false;
        match self.flow.kind(pos) {
            FlowKind::Branch { .. } | FlowKind::Loop { .. } => {
                self.control_evals += 1;
                self.state.advance_branch(&self.flow, pos, choice == 1);
            }
            FlowKind::Action { .. } => {
                self.env_steps += 1;
                let action = resolve_action(choice, &kind);
                let feedback = self.env.step(action);
                self.judge.observe(&self.program, &self.env, &feedback);
                let done = self.env.ending_met(&kind, &feedback);
                self.state.advance_action(&self.flow, pos, done, true);
                routine_done = done;
                if self.judge.completed() {
                    reward = 1.0;
                }
            }
            FlowKind::Marker => unreachable!("pointer on a marker"),
        }
        self.skip_satisfied();
        self.settle();
        Some(StepOutcome {
            replay: ReplayStep {
                position: pos,
                parent,
                out_type,
                choice,
                cells,
                inventory,
            },
            dist,
            reward,
            routine_done,
            terminal: self.finished.is_some(),
        })
    }

    /// Value estimate of the current state, zero when the episode is
    /// over. Does not advance anything.
    pub fn peek_value(&self, model: &Model) -> f64 {
        if self.finished.is_some() {
            return 0.0;
        }
        let pos = self.state.position().unwrap();
        let parent = self.state.prev_executed;
        let cells = self.env.encode_cells();
        let inventory = self.env.encode_inventory();
        let spec = model.encode_grid_values(&cells, &inventory);
        let mask = model.mask_for(&self.program, &[pos], |_| parent.into_iter().collect());
        let row = self.program.exec_row(pos).unwrap();
        let (_, fresh) = model.infer_step_values(&self.z, &self.semantic, &mask, &spec, &[row]);
        model.state_value_values(&fresh, row)
    }
}

/// Index of the largest entry; ties go to the earliest.
pub fn argmax(dist: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in dist.iter().enumerate() {
        if *v > dist[best] {
            best = i;
        }
    }
    best
}

fn sample_index(dist: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = dist.iter().sum();
    let mut u = rng.gen_range(0.0..1.0) * total;
    for (i, v) in dist.iter().enumerate() {
        u -= v;
        if u <= 0.0 {
            return i;
        }
    }
    dist.len() - 1
}

/// Summary of one greedy policy episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub completed: bool,
    pub env_steps: usize,
    pub control_evals: usize,
}

impl Model {
    /// Run one episode with argmax decisions; completion is judged by
    /// the environment-side monitor, not the model's own pointer.
    pub fn run_policy_greedy(&self, program: &Program, env: &GridWorld) -> EpisodeReport {
        let mut stepper = PolicyStepper::new(self, program.clone(), env.clone());
        while stepper.step(self, None).is_some() {}
        EpisodeReport {
            completed: stepper.completed(),
            env_steps: stepper.env_steps,
            control_evals: stepper.control_evals,
        }
    }
}

/// One teacher-forced step: the decoded distribution and the index the
/// oracle chose.
pub struct ForcedStep {
    pub position: usize,
    pub out_type: OutputType,
    pub target: usize,
    pub dist: Var,
}

/// A teacher-forced policy execution on the tape.
pub struct ForcedRun {
    pub steps: Vec<ForcedStep>,
    pub final_z: Var,
}

impl Model {
    /// Replay a planner trace on the tape: the model decodes every step
    /// while the oracle's decisions drive the environment and the
    /// pointer. The trace must come from this exact program and start
    /// state.
    pub fn run_policy_forced(
        &self,
        tape: &mut Tape,
        program: &Program,
        start: &GridWorld,
        trace: &[TraceItem],
    ) -> ForcedRun {
        assert_eq!(program.dialect, Dialect::Policy);
        let flow = FlowTargets::compute(program);
        let mut state = PointerState::start();
        let mut env = start.clone();
        let semantic = self.semantic_rows(tape, program);
        let n = program.n_exec();
        let mut z = tape.constant(Matrix::zeros(n, self.cfg.d()));
        skip_satisfied_forced(&mut state, &flow, program, &env);
        let mut steps = Vec::with_capacity(trace.len());
        for item in trace {
            let pos = state.position().expect("trace outlives the program");
            let parent = state.prev_executed;
            let cells = env.encode_cells();
            let inventory = env.encode_inventory();
            let spec = self.encode_grid(tape, &cells, &inventory);
            let mask = self.mask_for(program, &[pos], |_| parent.into_iter().collect());
            let row = program.exec_row(pos).expect("pointer on a marker");
            let (merged, fresh) = self.infer_step(tape, z, semantic, &mask, spec, &[row]);
            z = merged;
            match item {
                TraceItem::Branch { position, truth } => {
                    assert_eq!(*position, pos, "trace and pointer disagree");
                    let dist = self.decode(tape, fresh, row, OutputType::Boolean);
                    steps.push(ForcedStep {
                        position: pos,
                        out_type: OutputType::Boolean,
                        target: *truth as usize,
                        dist,
                    });
                    state.advance_branch(&flow, pos, *truth);
                }
                TraceItem::Act {
                    position,
                    action_index,
                    finished,
                } => {
                    assert_eq!(*position, pos, "trace and pointer disagree");
                    let dist = self.decode(tape, fresh, row, OutputType::Action);
                    steps.push(ForcedStep {
                        position: pos,
                        out_type: OutputType::Action,
                        target: *action_index,
                        dist,
                    });
                    let kind = &program.routine(pos).kind;
                    let action = resolve_action(*action_index, kind);
                    let feedback = env.step(action);
                    let done = env.ending_met(kind, &feedback);
                    debug_assert_eq!(done, *finished, "replay diverged from the planner");
                    state.advance_action(&flow, pos, done, true);
                }
            }
            skip_satisfied_forced(&mut state, &flow, program, &env);
        }
        assert!(state.done(), "trace ended before the program did");
        ForcedRun { steps, final_z: z }
    }

    /// Recompute an acted window on the tape from its replay payloads.
    /// Returns one `(distribution, value)` pair per step. `z0` is the
    /// result matrix as it stood before the window's first step.
    pub fn run_policy_window(
        &self,
        tape: &mut Tape,
        program: &Program,
        z0: &Matrix,
        window: &[ReplayStep],
    ) -> Vec<(Var, Var)> {
        let semantic = self.semantic_rows(tape, program);
        let mut z = tape.constant(z0.clone());
        let mut out = Vec::with_capacity(window.len());
        for step in window {
            let spec = self.encode_grid(tape, &step.cells, &step.inventory);
            let mask = self.mask_for(program, &[step.position], |_| {
                step.parent.into_iter().collect()
            });
            let row = program.exec_row(step.position).expect("replay on a marker");
            let (merged, fresh) = self.infer_step(tape, z, semantic, &mask, spec, &[row]);
            z = merged;
            let dist = self.decode(tape, fresh, row, step.out_type);
            let value = self.state_value(tape, fresh, row);
            out.push((dist, value));
        }
        out
    }
}

fn skip_satisfied_forced(
    state: &mut PointerState,
    flow: &FlowTargets,
    program: &Program,
    env: &GridWorld,
) {
    let mut guard = 2 * program.len() + 4;
    while let Some(pos) = state.position() {
        let kind = &program.routine(pos).kind;
        if matches!(flow.kind(pos), FlowKind::Action { .. }) && env.pre_satisfied(kind) {
            state.advance_action(flow, pos, true, false);
            guard -= 1;
            assert!(guard > 0, "pre-satisfied skips cycled");
            continue;
        }
        break;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_program;
    use crate::oracle;
    use crate::scene::{FeatureCodebook, SceneGraph, SceneObject};
    use crate::taskgen::{sample_policy_instance, EnvRanges, PolicyConstraints};
    use std::collections::BTreeMap;

    fn toy_scene() -> SceneGraph {
        let mk = |id: usize, name: &str, color: &str, cx: f64, cy: f64| {
            let mut attrs = BTreeMap::new();
            attrs.insert("color".to_string(), color.to_string());
            attrs.insert("material".to_string(), "leather".to_string());
            attrs.insert("shape".to_string(), "square".to_string());
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
        let relations = crate::scene::compute_relations(&objects);
        SceneGraph {
            id: "toy".into(),
            scene: "indoors".into(),
            objects,
            relations,
        }
    }

    fn reasoning_model(seed: u64, guidance: GuidanceMode) -> Model {
        let mut cfg = ModelConfig::reasoning_desk(seed);
        cfg.d_token = 4;
        cfg.heads = 2;
        cfg.head_hidden = 16;
        cfg.n_slots = 4;
        cfg.guidance = guidance;
        Model::new(cfg)
    }

    fn policy_model(seed: u64) -> Model {
        let mut cfg = ModelConfig::policy_desk(seed);
        cfg.d_token = 4;
        cfg.heads = 2;
        cfg.head_hidden = 16;
        cfg.encoder_hidden = 16;
        Model::new(cfg)
    }

    fn features_for(model: &Model, scene: &SceneGraph) -> Matrix {
        FeatureCodebook::new(model.cfg.d(), model.cfg.n_slots, 77).featurize(scene, 3)
    }

    #[test]
    fn tape_and_plain_forwards_agree() {
        let model = reasoning_model(3, GuidanceMode::Full);
        let program = parse_program(
            "Select(bag); Filter_color(red)[1]; Query_shape()[2]",
            Dialect::Reasoning,
        )
        .unwrap();
        let feats = features_for(&model, &toy_scene());
        let mut tape = Tape::new();
        let run = model.run_reasoning(&mut tape, &program, &feats, ExecMode::Sequential);
        let eval = model.run_reasoning_values(&program, &feats, ExecMode::Sequential);
        assert_eq!(run.outputs.len(), eval.outputs.len());
        for ((p1, t1, var), (p2, t2, vals)) in run.outputs.iter().zip(&eval.outputs) {
            assert_eq!((p1, t1), (p2, t2));
            let taped = &tape.value(*var).data;
            assert_eq!(taped.len(), vals.len());
            for (a, b) in taped.iter().zip(vals) {
                assert!((a - b).abs() <= 1e-12, "tape {a} vs plain {b}");
            }
        }
    }

    #[test]
    fn distributions_are_normalized_and_objects_are_probabilities() {
        let model = reasoning_model(4, GuidanceMode::Full);
        let program = parse_program(
            "Select(bag); Filter_color(red)[1]; Exist[2]",
            Dialect::Reasoning,
        )
        .unwrap();
        let feats = features_for(&model, &toy_scene());
        let eval = model.run_reasoning_values(&program, &feats, ExecMode::Parallel);
        for (p, out, dist) in &eval.outputs {
            match out {
                OutputType::Objects => {
                    assert_eq!(dist.len(), model.cfg.n_slots);
                    assert!(dist.iter().all(|v| (0.0..=1.0).contains(v)), "slot prob at {p}");
                }
                _ => {
                    let sum: f64 = dist.iter().sum();
                    assert!((sum - 1.0).abs() < 1e-9, "head at {p} sums to {sum}");
                }
            }
        }
    }

    /// A routine's result row is a function of its own position, the
    /// specification and its parents' stored rows, so grouping
    /// independent routines into one step cannot change any output.
    #[test]
    fn parallel_execution_matches_sequential_exactly() {
        let model = reasoning_model(5, GuidanceMode::Full);
        let scene = toy_scene();
        let feats = features_for(&model, &scene);
        for src in [
            "Select(bag); Filter_color(red)[1]; Query_shape()[2]",
            "Select(bag); Select(bottle); Verify_relation(left)[1,2]",
            "Select(bag); Select(bottle); Exist[1]; Exist[2]; And[3,4]",
            "Select(bag); Filter_color(blue)[1]; Select(bottle); Relate(left)[3]; Common_color[2,4]",
        ] {
            let program = parse_program(src, Dialect::Reasoning).unwrap();
            let seq = model.run_reasoning_values(&program, &feats, ExecMode::Sequential);
            let par = model.run_reasoning_values(&program, &feats, ExecMode::Parallel);
            assert_eq!(seq.outputs.len(), par.outputs.len());
            for (p, out, seq_dist) in &seq.outputs {
                let par_dist = par
                    .outputs
                    .iter()
                    .find(|(q, _, _)| q == p)
                    .map(|(_, _, v)| v)
                    .unwrap();
                for (a, b) in seq_dist.iter().zip(par_dist) {
                    assert_eq!(a, b, "{src}: routine {p} ({out:?}) differs across schedules");
                }
            }
            assert_eq!(seq.steps, program.n_exec());
            let levels = parallel_waves(&program).len();
            assert_eq!(par.steps, levels);
        }
    }

    #[test]
    fn finished_rows_keep_their_stored_results() {
        let model = reasoning_model(6, GuidanceMode::Full);
        let program = parse_program(
            "Select(bag); Filter_color(red)[1]; Query_shape()[2]",
            Dialect::Reasoning,
        )
        .unwrap();
        let feats = features_for(&model, &toy_scene());
        let semantic = model.semantic_rows_values(&program);
        let parents = declared_parents(&program);
        let mut z = Matrix::zeros(3, model.cfg.d());
        for wave in sequential_waves(&program) {
            let mask = model.mask_for(&program, &wave, &parents);
            let rows: Vec<usize> = wave.iter().map(|&p| program.exec_row(p).unwrap()).collect();
            let before = z.clone();
            let (merged, _) = model.infer_step_values(&z, &semantic, &mask, &feats, &rows);
            for r in 0..3 {
                if !rows.contains(&r) {
                    assert_eq!(merged.row(r), before.row(r), "row {r} moved while inactive");
                }
            }
            z = merged;
        }
        for r in 0..3 {
            assert!(z.row(r).iter().any(|v| *v != 0.0), "row {r} never written");
        }
    }

    /// With the semantic channel zeroed the run cannot depend on the
    /// program text; with the mask open it cannot depend on declared
    /// parent indices. The full model depends on both.
    #[test]
    fn ablations_cut_the_matching_information_channel() {
        let scene = toy_scene();
        let a = parse_program("Select(bag); Query_color()[1]", Dialect::Reasoning).unwrap();
        let b = parse_program("Select(dog); Query_shape()[1]", Dialect::Reasoning).unwrap();

        let blind = reasoning_model(7, GuidanceMode::NoSemantic);
        let feats = features_for(&blind, &scene);
        let da = blind.run_reasoning_values(&a, &feats, ExecMode::Sequential);
        let db = blind.run_reasoning_values(&b, &feats, ExecMode::Sequential);
        assert_eq!(
            da.final_output().1,
            db.final_output().1,
            "no-semantic run distinguished two programs"
        );

        let full = reasoning_model(7, GuidanceMode::Full);
        let fa = full.run_reasoning_values(&a, &feats, ExecMode::Sequential);
        let fb = full.run_reasoning_values(&b, &feats, ExecMode::Sequential);
        assert_ne!(fa.final_output().1, fb.final_output().1);

        // Same tokens, different parent: only the mask tells them apart.
        let k1 = parse_program(
            "Select(bag); Select(bottle); Query_color()[1]",
            Dialect::Reasoning,
        )
        .unwrap();
        let k2 = parse_program(
            "Select(bag); Select(bottle); Query_color()[2]",
            Dialect::Reasoning,
        )
        .unwrap();
        let open = reasoning_model(7, GuidanceMode::NoStructure);
        let o1 = open.run_reasoning_values(&k1, &feats, ExecMode::Sequential);
        let o2 = open.run_reasoning_values(&k2, &feats, ExecMode::Sequential);
        assert_eq!(
            o1.final_output().1,
            o2.final_output().1,
            "no-structure run distinguished parent indices"
        );
        let f1 = full.run_reasoning_values(&k1, &feats, ExecMode::Sequential);
        let f2 = full.run_reasoning_values(&k2, &feats, ExecMode::Sequential);
        assert_ne!(f1.final_output().1, f2.final_output().1);
    }

    #[test]
    fn paper_scale_shapes_flow_through_one_step() {
        let cfg = ModelConfig {
            dialect: Dialect::Reasoning,
            d_token: 256,
            heads: 8,
            blocks: 1,
            head_hidden: 32,
            encoder_hidden: 32,
            n_slots: 50,
            guidance: GuidanceMode::Full,
            seed: 1,
        };
        assert_eq!(cfg.d(), 2048);
        let model = Model::new(cfg);
        let program = parse_program(
            "Select(bag); Filter_color(red)[1]; Query_shape()[2]",
            Dialect::Reasoning,
        )
        .unwrap();
        let spec = Matrix::from_fn(50, 2048, |i, j| ((i * 31 + j) % 17) as f64 * 0.01);
        let semantic = model.semantic_rows_values(&program);
        assert_eq!((semantic.rows, semantic.cols), (3, 2048));
        let mask = model.mask_for(&program, &[1], &declared_parents(&program));
        let z = Matrix::zeros(3, 2048);
        let (merged, fresh) = model.infer_step_values(&z, &semantic, &mask, &spec, &[0]);
        assert_eq!((merged.rows, merged.cols), (3, 2048));
        assert!(fresh.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn forced_run_follows_the_planner_trace() {
        let model = policy_model(8);
        let mut rng = seeded_rng(21, "executor-test", 0);
        let instance = sample_policy_instance(
            &mut rng,
            "t0".into(),
            &EnvRanges::desk(),
            &PolicyConstraints::supervised(),
            200,
        );
        let program = instance.program();
        let mut tape = Tape::new();
        let run = model.run_policy_forced(&mut tape, &program, &instance.env, &instance.trace);
        assert_eq!(run.steps.len(), instance.trace.len());
        for (step, item) in run.steps.iter().zip(&instance.trace) {
            let (want_pos, want_target) = match item {
                TraceItem::Branch { position, truth } => (*position, *truth as usize),
                TraceItem::Act {
                    position,
                    action_index,
                    ..
                } => (*position, *action_index),
            };
            assert_eq!(step.position, want_pos);
            assert_eq!(step.target, want_target);
            let dist = tape.value(step.dist);
            let sum: f64 = dist.data.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn greedy_episode_terminates_and_reports() {
        let model = policy_model(9);
        let mut rng = seeded_rng(22, "executor-test", 1);
        let instance = sample_policy_instance(
            &mut rng,
            "t1".into(),
            &EnvRanges::desk(),
            &PolicyConstraints::supervised(),
            200,
        );
        let program = instance.program();
        let report = model.run_policy_greedy(&program, &instance.env);
        assert!(report.env_steps <= MAX_PLAN_ACTIONS);
        assert!(report.control_evals <= MAX_CONTROL_EVALS);

        // A single already-satisfied Goto completes with no steps.
        let trivial = parse_program("Goto(0, 0);", Dialect::Policy).unwrap();
        let mut env = GridWorld::empty(4);
        env.agent = (0, 0);
        let report = model.run_policy_greedy(&trivial, &env);
        assert!(report.completed);
        assert_eq!(report.env_steps, 0);
        assert_eq!(report.control_evals, 0);
    }

    /// The replay payload recorded while acting must reproduce the
    /// acted distributions exactly when re-run on the tape.
    #[test]
    fn window_replay_reproduces_acting() {
        let model = policy_model(10);
        let mut rng = seeded_rng(23, "executor-test", 2);
        let instance = sample_policy_instance(
            &mut rng,
            "t2".into(),
            &EnvRanges::desk(),
            &PolicyConstraints::reinforcement(),
            200,
        );
        let program = instance.program();
        let mut stepper = PolicyStepper::new(&model, program.clone(), instance.env.clone());
        let z0 = stepper.z.clone();
        let mut acted = Vec::new();
        let mut sample_rng = seeded_rng(23, "executor-test-actions", 0);
        for _ in 0..5 {
            match stepper.step(&model, Some(&mut sample_rng)) {
                Some(outcome) => acted.push(outcome),
                None => break,
            }
        }
        assert!(!acted.is_empty());
        let window: Vec<ReplayStep> = acted.iter().map(|o| o.replay.clone()).collect();
        let mut tape = Tape::new();
        let replayed = model.run_policy_window(&mut tape, &program, &z0, &window);
        assert_eq!(replayed.len(), acted.len());
        for ((dist_var, value_var), outcome) in replayed.iter().zip(&acted) {
            let dist = &tape.value(*dist_var).data;
            assert_eq!(dist.len(), outcome.dist.len());
            for (a, b) in dist.iter().zip(&outcome.dist) {
                assert!((a - b).abs() <= 1e-12, "replayed {a} vs acted {b}");
            }
            assert!(tape.scalar(*value_var).is_finite());
        }
    }

    #[test]
    fn gradients_reach_the_embedding_and_every_attention_site() {
        let model = reasoning_model(11, GuidanceMode::Full);
        let program = parse_program(
            "Select(bag); Filter_color(red)[1]; Query_shape()[2]",
            Dialect::Reasoning,
        )
        .unwrap();
        let feats = features_for(&model, &toy_scene());
        let mut tape = Tape::new();
        let run = model.run_reasoning(&mut tape, &program, &feats, ExecMode::Parallel);
        let (_, final_var) = run.final_output();
        let target = Matrix::zeros(1, model.head_arity(OutputType::Answer));
        let loss = tape.mse_vs_const(final_var, &target);
        let grads = tape.backward(loss, &model.store);
        let embed_grad = grads.by_id[model.embed].max_abs();
        assert!(embed_grad > 0.0, "no gradient reached the embedding table");
        for name in [
            "block0.semantic.wq",
            "block0.refine.wq",
            "block0.spec.wq",
            "head.answer.w1",
        ] {
            let id = model.store.find(name).unwrap();
            assert!(grads.by_id[id].max_abs() > 0.0, "no gradient at {name}");
        }
    }

    #[test]
    fn oracle_outputs_agree_across_schedules_on_dags() {
        let scene = toy_scene();
        for src in [
            "Select(bag); Select(bottle); Verify_relation(left)[1,2]",
            "Select(bag); Filter_color(red)[1]; Select(bottle); Exist[2]; Exist[3]; Or[4,5]",
        ] {
            let program = parse_program(src, Dialect::Reasoning).unwrap();
            let outputs = oracle::execute_reasoning(&program, &scene).unwrap();
            // The oracle evaluates in position order; replaying the
            // parallel schedule must visit every position exactly once
            // and end on the sink.
            let waves = parallel_waves(&program);
            let mut seen = vec![false; program.len() + 1];
            for wave in &waves {
                for &p in wave {
                    assert!(!seen[p]);
                    seen[p] = true;
                    for &q in &program.routine(p).parents {
                        assert!(seen[q], "parent {q} scheduled after {p}");
                    }
                }
            }
            assert!(seen[1..].iter().all(|s| *s));
            assert_eq!(outputs.len(), program.len());
        }
    }
}
