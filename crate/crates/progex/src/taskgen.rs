//! Synthetic task generation.
//!
//! Samples programs from both dialects together with worlds they are
//! solvable in, then materializes train and test splits to disk. Every
//! emitted instance is oracle-checked: policy programs carry a feasible
//! planner trace, reasoning programs carry the exact per-routine values.
//!
//! Item seeds derive from the master seed and the item index, so a split
//! is reproducible regardless of how generation is scheduled.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsl::{
    format_program, has_errors, parse_program, validate_program, AttrCat, CondItem, Dialect, Item,
    OutputType, Program, Routine, RoutineKind, Shape,
};
use crate::gridworld::{generate, Cell, EnvConfig, GridWorld};
use crate::oracle::{execute_reasoning, plan, TraceItem, Value};
use crate::rng::seeded_rng;
use crate::scene::{compute_relations, vocab as sv, SceneGraph, SceneObject};

// ------------------------------------------------------------ instances

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyInstance {
    pub id: String,
    /// Canonical program text; parse it to recover the program.
    pub text: String,
    /// Start state of the world.
    pub env: GridWorld,
    /// Optimal trace from the planner. Replaying it completes the task.
    pub trace: Vec<TraceItem>,
    pub visited: Vec<usize>,
}

impl PolicyInstance {
    pub fn program(&self) -> Program {
        parse_program(&self.text, Dialect::Policy).expect("stored text is canonical")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningInstance {
    pub id: String,
    pub text: String,
    pub scene: SceneGraph,
    /// Exact value of every routine; the last is the answer.
    pub outputs: Vec<Value>,
}

impl ReasoningInstance {
    pub fn program(&self) -> Program {
        parse_program(&self.text, Dialect::Reasoning).expect("stored text is canonical")
    }

    pub fn answer(&self) -> &Value {
        self.outputs.last().expect("programs are non-empty")
    }
}

/// Histogram label of a final value.
pub fn answer_label(v: &Value) -> String {
    match v {
        Value::Word(w) => w.clone(),
        Value::Bool(b) => b.to_string(),
        Value::Objects(ids) => format!("objects:{}", ids.len()),
    }
}

// ----------------------------------------------------------- env ranges

/// Ranges the per-instance world is drawn from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvRanges {
    pub n: (usize, usize),
    pub river_prob: f64,
    pub walls: (usize, usize),
    pub merchants: (usize, usize),
    /// Ground count range per item kind that appears.
    pub items_per_kind: (usize, usize),
    /// Chance of starting with one shape in the inventory.
    pub shape_inventory_prob: f64,
}

impl EnvRanges {
    /// Small flat worlds for supervised policy training.
    pub fn desk() -> EnvRanges {
        EnvRanges {
            n: (5, 6),
            river_prob: 0.0,
            walls: (0, 2),
            merchants: (1, 2),
            items_per_kind: (1, 3),
            shape_inventory_prob: 0.6,
        }
    }

    /// Varied worlds with rivers, for oracle cross-checking.
    pub fn rich() -> EnvRanges {
        EnvRanges {
            n: (5, 8),
            river_prob: 0.35,
            walls: (0, 3),
            merchants: (0, 2),
            items_per_kind: (1, 3),
            shape_inventory_prob: 0.5,
        }
    }
}

pub fn sample_env(rng: &mut ChaCha8Rng, ranges: &EnvRanges) -> GridWorld {
    let mut items = BTreeMap::new();
    // Always some gold and wood; iron and one shape kind are occasional.
    items.insert(Item::Gold, rng.gen_range(ranges.items_per_kind.0..=ranges.items_per_kind.1));
    items.insert(Item::Wood, rng.gen_range(ranges.items_per_kind.0..=ranges.items_per_kind.1));
    if rng.gen_bool(0.5) {
        items.insert(Item::Iron, rng.gen_range(1..=ranges.items_per_kind.1.max(1)));
    }
    if rng.gen_bool(0.3) {
        let shape = *[Item::Triangle, Item::Circle, Item::Rectangle]
            .choose(rng)
            .unwrap();
        items.insert(shape, 1);
    }
    let mut initial_inventory = BTreeMap::new();
    if rng.gen_bool(ranges.shape_inventory_prob) {
        let shape = Shape::ALL.choose(rng).unwrap();
        initial_inventory.insert(shape.item(), rng.gen_range(1..=2u32));
    }
    let cfg = EnvConfig {
        n: rng.gen_range(ranges.n.0..=ranges.n.1),
        merchants: rng.gen_range(ranges.merchants.0..=ranges.merchants.1),
        river: rng.gen_bool(ranges.river_prob),
        walls: rng.gen_range(ranges.walls.0..=ranges.walls.1),
        items,
        initial_inventory,
    };
    generate(&cfg, rng)
}

// ------------------------------------------------- policy program sampler

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyConstraints {
    pub max_depth: usize,
    /// Bound on executable routines (actions plus controls).
    pub max_routines: usize,
    pub min_control: usize,
    pub max_control: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
}

impl PolicyConstraints {
    pub fn standard() -> PolicyConstraints {
        PolicyConstraints {
            max_depth: 2,
            max_routines: 8,
            min_control: 0,
            max_control: 3,
            min_tokens: 0,
            max_tokens: 60,
        }
    }

    /// Short flat programs for supervised policy training.
    pub fn supervised() -> PolicyConstraints {
        PolicyConstraints {
            max_depth: 2,
            max_routines: 6,
            min_control: 0,
            max_control: 2,
            min_tokens: 0,
            max_tokens: 40,
        }
    }

    /// Tiny action-only programs for reinforcement learning.
    pub fn reinforcement() -> PolicyConstraints {
        PolicyConstraints {
            max_depth: 1,
            max_routines: 3,
            min_control: 0,
            max_control: 0,
            min_tokens: 0,
            max_tokens: 12,
        }
    }

    /// Longer split: strictly more than eighty tokens.
    pub fn longer() -> PolicyConstraints {
        PolicyConstraints {
            max_depth: 2,
            max_routines: 40,
            min_control: 0,
            max_control: 10,
            min_tokens: 81,
            max_tokens: 170,
        }
    }

    /// Complex split: strictly more than four control routines.
    pub fn complex() -> PolicyConstraints {
        PolicyConstraints {
            max_depth: 3,
            max_routines: 18,
            min_control: 5,
            max_control: 9,
            min_tokens: 0,
            max_tokens: 130,
        }
    }

    /// Deeply nested programs for interpreter cross-checks.
    pub fn nested() -> PolicyConstraints {
        PolicyConstraints {
            max_depth: 3,
            max_routines: 12,
            min_control: 0,
            max_control: 5,
            min_tokens: 0,
            max_tokens: 90,
        }
    }

    fn check(&self, program: &Program) -> bool {
        let tokens = program.token_count();
        let control = program.control_count();
        program.n_exec() <= self.max_routines
            && control >= self.min_control
            && control <= self.max_control
            && tokens >= self.min_tokens
            && tokens <= self.max_tokens
    }
}

/// What the sampler may mention, scanned once from the world.
struct EnvProfile {
    ground: Vec<Item>,
    held_shapes: Vec<Shape>,
    merchant: bool,
    river: bool,
    passable: Vec<(u8, u8)>,
    empty: Vec<(u8, u8)>,
}

impl EnvProfile {
    fn scan(env: &GridWorld) -> EnvProfile {
        let mut ground = BTreeSet::new();
        let mut merchant = false;
        let mut river = false;
        let mut passable = Vec::new();
        let mut empty = Vec::new();
        for y in 0..env.n as u8 {
            for x in 0..env.n as u8 {
                match env.cell(x, y) {
                    Cell::Item(i) => {
                        ground.insert(i);
                    }
                    Cell::Merchant => merchant = true,
                    Cell::River => river = true,
                    _ => {}
                }
                if env.passable(x, y) {
                    passable.push((x, y));
                }
                if env.cell(x, y) == Cell::Empty && (x, y) != env.agent {
                    empty.push((x, y));
                }
            }
        }
        let held_shapes = Shape::ALL
            .into_iter()
            .filter(|s| env.item_count(s.item()) > 0)
            .collect();
        EnvProfile {
            ground: ground.into_iter().collect(),
            held_shapes,
            merchant,
            river,
            passable,
            empty,
        }
    }
}

struct PolicySampler<'a> {
    rng: &'a mut ChaCha8Rng,
    profile: EnvProfile,
    c: PolicyConstraints,
    routines: usize,
    control: usize,
    tokens: usize,
}

impl PolicySampler<'_> {
    fn room(&self, routines: usize, tokens: usize) -> bool {
        self.routines + routines <= self.c.max_routines && self.tokens + tokens <= self.c.max_tokens
    }

    fn charge(&mut self, routines: usize, control: usize, tokens: usize) {
        self.routines += routines;
        self.control += control;
        self.tokens += tokens;
    }

    fn coord(&mut self, cells: &[(u8, u8)]) -> Option<(u8, u8)> {
        cells.iter().copied().filter(|&(x, y)| x <= 9 && y <= 9).collect::<Vec<_>>().choose(self.rng).copied()
    }

    /// One action statement, or a short action pair. Empty when nothing fits.
    fn actions(&mut self) -> Vec<String> {
        let mut options: Vec<u8> = vec![];
        if !self.profile.ground.is_empty() && self.room(1, 2) {
            options.push(0); // Mine
        }
        if !self.profile.passable.is_empty() && self.room(1, 3) {
            options.push(1);
            options.push(1); // Goto, twice the weight: always executable
        }
        if !self.profile.ground.is_empty() && self.profile.merchant && self.room(2, 4) {
            options.push(2); // Mine then Sell
        }
        if !self.profile.held_shapes.is_empty() && !self.profile.empty.is_empty() && self.room(1, 4)
        {
            options.push(3); // Place
        }
        if self.profile.river && self.room(1, 1) {
            options.push(4); // BuildBridge
        }
        let Some(&pick) = options.choose(self.rng) else {
            return vec![];
        };
        match pick {
            0 => {
                let item = *self.profile.ground.choose(self.rng).unwrap();
                self.charge(1, 0, 2);
                vec![format!("Mine({});", item.word())]
            }
            1 => {
                let Some((x, y)) = self.coord(&self.profile.passable.clone()) else {
                    return vec![];
                };
                self.charge(1, 0, 3);
                vec![format!("Goto({x},{y});")]
            }
            2 => {
                let item = *self.profile.ground.choose(self.rng).unwrap();
                self.charge(2, 0, 4);
                vec![
                    format!("Mine({});", item.word()),
                    format!("Sell({});", item.word()),
                ]
            }
            3 => {
                let shape = *self.profile.held_shapes.choose(self.rng).unwrap();
                let Some((x, y)) = self.coord(&self.profile.empty.clone()) else {
                    return vec![];
                };
                self.charge(1, 0, 4);
                vec![format!("Place({},{x},{y});", shape.word())]
            }
            _ => {
                self.charge(1, 0, 1);
                vec!["BuildBridge();".to_string()]
            }
        }
    }

    fn condition(&mut self) -> (String, usize) {
        match self.rng.gen_range(0..3u8) {
            0 => {
                let item = CondItem::ALL.choose(self.rng).unwrap();
                (format!("is_there[{}]", item.word()), 3)
            }
            1 => {
                let item = CondItem::ALL.choose(self.rng).unwrap();
                let op = ["=", ">", ">=", "<", "<="].choose(self.rng).unwrap();
                let k = self.rng.gen_range(0..=4u8);
                (format!("env[{}]{op}{k}", item.word()), 5)
            }
            _ => {
                let item = [CondItem::Gold, CondItem::Wood, CondItem::Iron]
                    .choose(self.rng)
                    .unwrap();
                let op = ["=", ">", ">=", "<", "<="].choose(self.rng).unwrap();
                let k = self.rng.gen_range(0..=3u8);
                (format!("agent[{}]{op}{k}", item.word()), 5)
            }
        }
    }

    /// `While` bodies must shrink their own condition, so loops come from
    /// fixed templates rather than free sampling.
    fn while_stmt(&mut self, depth: usize) -> Option<String> {
        let mut forms: Vec<u8> = vec![];
        if !self.profile.ground.is_empty() && self.room(2, 7) {
            forms.push(0); // While(env[i]>0) { Mine(i); }
            forms.push(1); // While(agent[i]<k) { Mine(i); }
        }
        if !self.profile.ground.is_empty() && self.profile.merchant && self.room(3, 11) {
            forms.push(2); // Mine(i); While(agent[i]>0) { Sell(i); }
        }
        let form = *forms.choose(self.rng)?;
        let item = *self.profile.ground.choose(self.rng).unwrap();
        let w = item.word();
        match form {
            0 => {
                self.charge(2, 1, 7);
                let mut body = vec![format!("Mine({w});")];
                if depth + 1 < self.c.max_depth && self.rng.gen_bool(0.35) {
                    body.extend(self.stmt(depth + 1));
                }
                Some(format!("While(env[{w}]>0){{ {} }}", body.join(" ")))
            }
            1 => {
                let k = self.rng.gen_range(1..=2u8);
                self.charge(2, 1, 7);
                Some(format!("While(agent[{w}]<{k}){{ Mine({w}); }}"))
            }
            _ => {
                self.charge(3, 1, 9);
                Some(format!(
                    "Mine({w}); While(agent[{w}]>0){{ Sell({w}); }}"
                ))
            }
        }
    }

    fn if_stmt(&mut self, depth: usize) -> Option<String> {
        let (cond, cond_tokens) = self.condition();
        if !self.room(2, cond_tokens + 2) {
            return None;
        }
        self.charge(1, 1, cond_tokens);
        let mut then_body = self.stmt(depth + 1);
        if then_body.is_empty() {
            then_body = vec!["Goto(0,0);".to_string()];
            self.charge(1, 0, 3);
        }
        if self.rng.gen_bool(0.4) && self.room(1, 3) {
            let mut else_body = self.stmt(depth + 1);
            if else_body.is_empty() {
                else_body = vec!["Goto(1,1);".to_string()];
                self.charge(1, 0, 3);
            }
            Some(format!(
                "If({cond}){{ {} }}Else{{ {} }}",
                then_body.join(" "),
                else_body.join(" ")
            ))
        } else {
            Some(format!("If({cond}){{ {} }}", then_body.join(" ")))
        }
    }

    /// One statement (possibly a template pair) at `depth`.
    fn stmt(&mut self, depth: usize) -> Vec<String> {
        let control_ok = self.control < self.c.max_control && depth < self.c.max_depth;
        let want_control = self.control < self.c.min_control;
        let p_control = if want_control {
            0.8
        } else {
            0.5 * 0.5f64.powi(depth as i32)
        };
        if control_ok && self.rng.gen_bool(p_control) {
            let made = if self.rng.gen_bool(0.5) {
                self.while_stmt(depth)
            } else {
                self.if_stmt(depth)
            };
            if let Some(s) = made {
                return vec![s];
            }
        }
        self.actions()
    }
}

/// Grammar-directed program sampling against a fixed world. `None` when
/// the draw misses the constraints; callers retry with the same rng.
pub fn sample_policy_program(
    rng: &mut ChaCha8Rng,
    env: &GridWorld,
    constraints: &PolicyConstraints,
) -> Option<Program> {
    let mut s = PolicySampler {
        rng,
        profile: EnvProfile::scan(env),
        c: constraints.clone(),
        routines: 0,
        control: 0,
        tokens: 0,
    };
    let mut parts: Vec<String> = Vec::new();
    loop {
        let made = s.stmt(0);
        if made.is_empty() {
            break;
        }
        parts.extend(made);
        if s.tokens >= s.c.min_tokens && s.rng.gen_bool(0.3) {
            break;
        }
        if s.routines >= s.c.max_routines || s.tokens + 7 > s.c.max_tokens {
            break;
        }
    }
    if parts.is_empty() {
        return None;
    }
    let text = parts.join(" ");
    let program = parse_program(&text, Dialect::Policy).ok()?;
    if has_errors(&validate_program(&program)) || !constraints.check(&program) {
        return None;
    }
    Some(program)
}

/// Sample a `(world, program)` pair the planner can finish, with its
/// optimal trace. Panics after `attempts` straight failures.
pub fn sample_policy_instance(
    rng: &mut ChaCha8Rng,
    id: String,
    ranges: &EnvRanges,
    constraints: &PolicyConstraints,
    attempts: usize,
) -> PolicyInstance {
    for _ in 0..attempts {
        let env = sample_env(rng, ranges);
        let Some(program) = sample_policy_program(rng, &env, constraints) else {
            continue;
        };
        let outcome = plan(&program, &env);
        if !outcome.feasible || outcome.visited.is_empty() {
            continue;
        }
        return PolicyInstance {
            id,
            text: format_program(&program),
            env,
            trace: outcome.trace,
            visited: outcome.visited,
        };
    }
    panic!("no feasible policy instance within {attempts} attempts");
}

// ---------------------------------------------- reasoning program sampler

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReasoningConstraints {
    pub min_routines: usize,
    pub max_routines: usize,
    /// Required final output type; `None` mixes all of them.
    pub final_output: Option<OutputType>,
}

impl ReasoningConstraints {
    pub fn standard() -> ReasoningConstraints {
        ReasoningConstraints {
            min_routines: 2,
            max_routines: 7,
            final_output: None,
        }
    }

    /// Word-answer programs only.
    pub fn answers() -> ReasoningConstraints {
        ReasoningConstraints {
            min_routines: 2,
            max_routines: 6,
            final_output: Some(OutputType::Answer),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneRanges {
    pub min_objects: usize,
    pub max_objects: usize,
}

impl SceneRanges {
    pub fn desk() -> SceneRanges {
        SceneRanges {
            min_objects: 3,
            max_objects: 7,
        }
    }
}

pub fn sample_scene(rng: &mut ChaCha8Rng, id: String, ranges: &SceneRanges) -> SceneGraph {
    let n = rng.gen_range(ranges.min_objects..=ranges.max_objects);
    let scene = sv::SCENES.choose(rng).unwrap().to_string();
    let mut objects = Vec::with_capacity(n);
    for oid in 0..n {
        let name = sv::NAMES.choose(rng).unwrap().to_string();
        let mut attrs = BTreeMap::new();
        attrs.insert("color".into(), sv::COLORS.choose(rng).unwrap().to_string());
        attrs.insert(
            "material".into(),
            sv::MATERIALS.choose(rng).unwrap().to_string(),
        );
        attrs.insert("shape".into(), sv::SHAPES.choose(rng).unwrap().to_string());
        if matches!(name.as_str(), "person" | "dog" | "cat") {
            attrs.insert(
                "activity".into(),
                sv::ACTIVITIES.choose(rng).unwrap().to_string(),
            );
        }
        let w = rng.gen_range(0.05..0.2);
        let h = rng.gen_range(0.05..0.2);
        let x = rng.gen_range(0.0..1.0 - w);
        let y = rng.gen_range(0.0..1.0 - h);
        objects.push(SceneObject {
            id: oid,
            name,
            attrs,
            bbox: [x, y, w, h],
        });
    }
    let relations = compute_relations(&objects);
    SceneGraph {
        id,
        scene,
        objects,
        relations,
    }
}

/// Builds one routine DAG over a fixed scene, tracking the exact object
/// set at the head of each chain so intermediate results stay non-empty.
struct ReasonBuilder<'a, 'r> {
    rng: &'r mut ChaCha8Rng,
    scene: &'a SceneGraph,
    routines: Vec<Routine>,
}

impl ReasonBuilder<'_, '_> {
    fn push(&mut self, kind: RoutineKind, parents: Vec<usize>) -> usize {
        let index = self.routines.len() + 1;
        self.routines.push(Routine {
            index,
            kind,
            parents,
        });
        index
    }

    fn attr(&self, id: usize, cat: AttrCat) -> Option<String> {
        self.scene.attr_of(self.scene.object(id).unwrap(), cat)
    }

    /// Select plus up to `extends` refinements; the returned set is the
    /// exact oracle value of the chain head and never empty.
    fn chain(&mut self, extends: usize) -> (usize, Vec<usize>) {
        let name = self.scene.objects.choose(self.rng).unwrap().name.clone();
        let mut current: Vec<usize> = self
            .scene
            .objects
            .iter()
            .filter(|o| o.name == name)
            .map(|o| o.id)
            .collect();
        let mut pos = self.push(RoutineKind::Select { name }, vec![]);
        for _ in 0..extends {
            match self.rng.gen_range(0..3u8) {
                0 => {
                    let anchor = *current.choose(self.rng).unwrap();
                    let mut cats = vec![AttrCat::Color, AttrCat::Material, AttrCat::Shape, AttrCat::Position];
                    if self.attr(anchor, AttrCat::Activity).is_some() {
                        cats.push(AttrCat::Activity);
                    }
                    let cat = *cats.choose(self.rng).unwrap();
                    let value = self.attr(anchor, cat).unwrap();
                    current.retain(|&id| self.attr(id, cat).as_deref() == Some(&value));
                    pos = self.push(RoutineKind::Filter { cat, value }, vec![pos]);
                }
                1 => {
                    let mut rels: Vec<&str> = sv::RELATIONS.to_vec();
                    rels.shuffle(self.rng);
                    let mut applied = false;
                    for rel in rels {
                        let next: Vec<usize> = self
                            .scene
                            .objects
                            .iter()
                            .map(|o| o.id)
                            .filter(|&o| {
                                current.iter().any(|&i| self.scene.has_relation(o, rel, i))
                            })
                            .collect();
                        if !next.is_empty() {
                            current = next;
                            pos = self.push(
                                RoutineKind::Relate {
                                    relation: rel.to_string(),
                                },
                                vec![pos],
                            );
                            applied = true;
                            break;
                        }
                    }
                    if !applied {
                        break;
                    }
                }
                _ => {
                    let mut rels: Vec<&str> = sv::RELATIONS.to_vec();
                    rels.shuffle(self.rng);
                    let mut applied = false;
                    for rel in rels {
                        let next: Vec<usize> = self
                            .scene
                            .objects
                            .iter()
                            .map(|o| o.id)
                            .filter(|&o| {
                                current.iter().any(|&i| self.scene.has_relation(i, rel, o))
                            })
                            .collect();
                        if !next.is_empty() {
                            current = next;
                            pos = self.push(
                                RoutineKind::InverseRelate {
                                    relation: rel.to_string(),
                                },
                                vec![pos],
                            );
                            applied = true;
                            break;
                        }
                    }
                    if !applied {
                        break;
                    }
                }
            }
        }
        (pos, current)
    }

    /// A chain that may legitimately end empty, for `Exist`.
    fn chain_maybe_empty(&mut self, extends: usize) -> usize {
        if self.rng.gen_bool(0.45) {
            let (pos, current) = self.chain(extends.saturating_sub(1));
            // Filter by a value no member has, emptying the set.
            let cat = *[AttrCat::Color, AttrCat::Shape].choose(self.rng).unwrap();
            let present: BTreeSet<String> = current
                .iter()
                .filter_map(|&id| self.attr(id, cat))
                .collect();
            let absent: Vec<&str> = sv::values_of(cat)
                .iter()
                .copied()
                .filter(|v| !present.contains(*v))
                .collect();
            match absent.choose(self.rng) {
                Some(v) => self.push(
                    RoutineKind::Filter {
                        cat,
                        value: v.to_string(),
                    },
                    vec![pos],
                ),
                None => pos,
            }
        } else {
            self.chain(extends).0
        }
    }

    fn finish_answer(&mut self, extends: usize) {
        match self.rng.gen_range(0..10u8) {
            0..=4 => {
                let (pos, ids) = self.chain(extends);
                let cats = [
                    AttrCat::Name,
                    AttrCat::Color,
                    AttrCat::Shape,
                    AttrCat::Scene,
                    AttrCat::Position,
                ];
                let cat = *cats.choose(self.rng).unwrap();
                debug_assert!(self.attr(ids[0], cat).is_some());
                self.push(RoutineKind::Query { cat }, vec![pos]);
            }
            5..=7 => {
                let (pos, ids) = self.chain(extends);
                let cats = [
                    AttrCat::Name,
                    AttrCat::Scene,
                    AttrCat::Color,
                    AttrCat::Shape,
                    AttrCat::Position,
                ];
                let cat = *cats.choose(self.rng).unwrap();
                let value = self.attr(ids[0], cat).unwrap();
                let distractor = sv::values_of(cat)
                    .iter()
                    .filter(|v| **v != value)
                    .collect::<Vec<_>>()
                    .choose(self.rng)
                    .unwrap()
                    .to_string();
                let (a, b) = if self.rng.gen_bool(0.5) {
                    (value, distractor)
                } else {
                    (distractor, value)
                };
                self.push(RoutineKind::Choose { cat, a, b }, vec![pos]);
            }
            _ => {
                let mark = self.routines.len();
                let (pa, ia) = self.chain(extends / 2);
                let (pb, ib) = self.chain(extends - extends / 2);
                let agreeing = [AttrCat::Color, AttrCat::Material]
                    .into_iter()
                    .find(|&cat| {
                        let a = self.attr(ia[0], cat);
                        a.is_some() && a == self.attr(ib[0], cat)
                    });
                match agreeing {
                    Some(cat) => {
                        self.push(RoutineKind::Common { cat }, vec![pa, pb]);
                    }
                    None => {
                        // No shared attribute this draw; rebuild as a
                        // single-chain query so the output stays a word.
                        self.routines.truncate(mark);
                        let (pos, ids) = self.chain(extends);
                        let cat = *[AttrCat::Name, AttrCat::Color, AttrCat::Shape]
                            .choose(self.rng)
                            .unwrap();
                        debug_assert!(self.attr(ids[0], cat).is_some());
                        self.push(RoutineKind::Query { cat }, vec![pos]);
                    }
                }
            }
        }
    }

    fn finish_boolean(&mut self, extends: usize) {
        match self.rng.gen_range(0..10u8) {
            0..=2 => {
                let (pos, ids) = self.chain(extends);
                let cat = *[AttrCat::Color, AttrCat::Shape, AttrCat::Scene]
                    .choose(self.rng)
                    .unwrap();
                let value = if self.rng.gen_bool(0.6) {
                    self.attr(ids[0], cat).unwrap()
                } else {
                    sv::values_of(cat).choose(self.rng).unwrap().to_string()
                };
                self.push(RoutineKind::Verify { cat, value }, vec![pos]);
            }
            3..=4 => {
                let (pa, _) = self.chain(extends / 2);
                let (pb, _) = self.chain(extends - extends / 2);
                let relation = sv::RELATIONS.choose(self.rng).unwrap().to_string();
                self.push(RoutineKind::VerifyRelation { relation }, vec![pa, pb]);
            }
            5..=6 => {
                let pos = self.chain_maybe_empty(extends);
                self.push(RoutineKind::Exist, vec![pos]);
            }
            7 => {
                let (pa, _) = self.chain(extends / 2);
                let (pb, _) = self.chain(extends - extends / 2);
                let cat = *[AttrCat::Name, AttrCat::Color].choose(self.rng).unwrap();
                self.push(RoutineKind::Same { cat }, vec![pa, pb]);
            }
            8 => {
                let (pa, _) = self.chain(extends / 2);
                let (pb, _) = self.chain(extends - extends / 2);
                let cat = *[AttrCat::Name, AttrCat::Color, AttrCat::Material]
                    .choose(self.rng)
                    .unwrap();
                self.push(RoutineKind::Different { cat }, vec![pa, pb]);
            }
            _ => {
                let a = self.chain_maybe_empty(0);
                let ea = self.push(RoutineKind::Exist, vec![a]);
                let b = self.chain_maybe_empty(0);
                let eb = self.push(RoutineKind::Exist, vec![b]);
                let kind = if self.rng.gen_bool(0.5) {
                    RoutineKind::And
                } else {
                    RoutineKind::Or
                };
                self.push(kind, vec![ea, eb]);
            }
        }
    }
}

/// Sample a reasoning program against `scene`. `None` when the draw
/// misses the length bounds; callers retry with the same rng.
pub fn sample_reasoning_program(
    rng: &mut ChaCha8Rng,
    scene: &SceneGraph,
    constraints: &ReasoningConstraints,
) -> Option<(Program, Vec<Value>)> {
    let budget = rng.gen_range(constraints.min_routines..=constraints.max_routines);
    let output = match constraints.final_output {
        Some(o) => o,
        None => *[OutputType::Answer, OutputType::Boolean, OutputType::Objects]
            .choose(rng)
            .unwrap(),
    };
    let mut b = ReasonBuilder {
        rng,
        scene,
        routines: Vec::new(),
    };
    match output {
        OutputType::Answer => b.finish_answer(budget.saturating_sub(2)),
        OutputType::Boolean => b.finish_boolean(budget.saturating_sub(2)),
        OutputType::Objects => {
            b.chain(budget.saturating_sub(1));
        }
        OutputType::Action => unreachable!("actions belong to the policy dialect"),
    }
    let program = Program {
        dialect: Dialect::Reasoning,
        routines: b.routines,
        body: vec![],
    };
    let n = program.len();
    if n < constraints.min_routines || n > constraints.max_routines {
        return None;
    }
    debug_assert!(
        !has_errors(&validate_program(&program)),
        "sampled program fails validation: {}",
        format_program(&program)
    );
    let outputs = execute_reasoning(&program, scene).expect("builder keeps programs evaluable");
    if let Some(want) = constraints.final_output {
        debug_assert_eq!(program.routines.last().unwrap().kind.output_type(), Some(want));
    }
    Some((program, outputs))
}

/// Sample a scene and a program over it.
pub fn sample_reasoning_instance(
    rng: &mut ChaCha8Rng,
    id: String,
    scene_ranges: &SceneRanges,
    constraints: &ReasoningConstraints,
    attempts: usize,
) -> ReasoningInstance {
    for attempt in 0..attempts {
        let scene_id = format!("{id}-s{attempt}");
        let scene = sample_scene(rng, scene_id, scene_ranges);
        let Some((program, outputs)) = sample_reasoning_program(rng, &scene, constraints) else {
            continue;
        };
        return ReasoningInstance {
            id,
            text: format_program(&program),
            scene,
            outputs,
        };
    }
    panic!("no reasoning instance within {attempts} attempts");
}

/// Three-routine programs whose answer is decided entirely by which of
/// two sibling chains the final routine points at. The two candidate
/// answers always differ, so ignoring program structure caps accuracy.
pub fn sample_sibling_ambiguity_instance(
    rng: &mut ChaCha8Rng,
    id: String,
    scene_ranges: &SceneRanges,
    attempts: usize,
) -> ReasoningInstance {
    for attempt in 0..attempts {
        let scene_id = format!("{id}-s{attempt}");
        let scene = sample_scene(rng, scene_id, scene_ranges);
        let cat = *[AttrCat::Color, AttrCat::Shape, AttrCat::Position]
            .choose(rng)
            .unwrap();
        // Two distinct names whose representatives disagree under `cat`.
        let mut names: Vec<&String> = scene.objects.iter().map(|o| &o.name).collect();
        names.sort();
        names.dedup();
        if names.len() < 2 {
            continue;
        }
        let mut pairs = Vec::new();
        for a in &names {
            for b in &names {
                if a < b {
                    pairs.push((a.to_string(), b.to_string()));
                }
            }
        }
        pairs.shuffle(rng);
        let rep_of = |name: &str| scene.objects.iter().find(|o| &o.name == name).unwrap();
        let Some((na, nb)) = pairs.into_iter().find(|(a, b)| {
            let va = scene.attr_of(rep_of(a), cat);
            let vb = scene.attr_of(rep_of(b), cat);
            va.is_some() && vb.is_some() && va != vb
        }) else {
            continue;
        };
        let k = rng.gen_range(1..=2usize);
        let routines = vec![
            Routine {
                index: 1,
                kind: RoutineKind::Select { name: na },
                parents: vec![],
            },
            Routine {
                index: 2,
                kind: RoutineKind::Select { name: nb },
                parents: vec![],
            },
            Routine {
                index: 3,
                kind: RoutineKind::Query { cat },
                parents: vec![k],
            },
        ];
        let program = Program {
            dialect: Dialect::Reasoning,
            routines,
            body: vec![],
        };
        // The unused sibling keeps validation's unique-sink rule out of
        // this dataset on purpose; executors never require it.
        let outputs = execute_reasoning(&program, &scene).expect("selects never fail");
        return ReasoningInstance {
            id,
            text: format_program(&program),
            scene,
            outputs,
        };
    }
    panic!("no ambiguity instance within {attempts} attempts");
}

// ------------------------------------------------------------- datasets

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: String,
    pub dialect: Dialect,
    pub seed: u64,
    pub count: usize,
    pub ids: Vec<String>,
    /// Program token count -> number of programs.
    pub token_histogram: BTreeMap<usize, usize>,
    /// `If`/`While` routine count -> number of programs.
    pub control_histogram: BTreeMap<usize, usize>,
    /// Final answer label -> number of programs.
    pub answer_histogram: BTreeMap<String, usize>,
}

fn manifest(split: &str, dialect: Dialect, seed: u64) -> DatasetManifest {
    DatasetManifest {
        split: split.to_string(),
        dialect,
        seed,
        count: 0,
        ids: vec![],
        token_histogram: BTreeMap::new(),
        control_histogram: BTreeMap::new(),
        answer_histogram: BTreeMap::new(),
    }
}

impl DatasetManifest {
    fn record(&mut self, id: &str, program: &Program, answer: Option<&Value>) {
        self.count += 1;
        self.ids.push(id.to_string());
        *self.token_histogram.entry(program.token_count()).or_insert(0) += 1;
        *self
            .control_histogram
            .entry(program.control_count())
            .or_insert(0) += 1;
        if let Some(v) = answer {
            *self.answer_histogram.entry(answer_label(v)).or_insert(0) += 1;
        }
    }
}

/// Build one policy split. `used` holds program texts already claimed by
/// other splits; every program generated here is added to it, keeping
/// all splits disjoint by program identity.
pub fn build_policy_split(
    master: u64,
    split: &str,
    count: usize,
    ranges: &EnvRanges,
    constraints: &PolicyConstraints,
    used: &mut BTreeSet<String>,
) -> (Vec<PolicyInstance>, DatasetManifest) {
    let tag = format!("policy:{split}");
    let mut out = Vec::with_capacity(count);
    let mut man = manifest(split, Dialect::Policy, master);
    for i in 0..count as u64 {
        let mut rng = seeded_rng(master, &tag, i);
        let mut instance = None;
        for _ in 0..400 {
            let cand = sample_policy_instance(
                &mut rng,
                format!("{split}-{i:05}"),
                ranges,
                constraints,
                200,
            );
            if used.insert(cand.text.clone()) {
                instance = Some(cand);
                break;
            }
        }
        let instance = instance.expect("program space exhausted for split");
        man.record(&instance.id, &instance.program(), None);
        out.push(instance);
    }
    (out, man)
}

/// Build one reasoning split. `answer_cap` bounds any single answer
/// label's share of the split; labels over the cap are re-drawn.
pub fn build_reasoning_split(
    master: u64,
    split: &str,
    count: usize,
    scene_ranges: &SceneRanges,
    constraints: &ReasoningConstraints,
    answer_cap: f64,
    used: &mut BTreeSet<String>,
) -> (Vec<ReasoningInstance>, DatasetManifest) {
    let tag = format!("reasoning:{split}");
    let cap = ((count as f64 * answer_cap).ceil() as usize).max(2);
    let mut out = Vec::with_capacity(count);
    let mut man = manifest(split, Dialect::Reasoning, master);
    let mut label_counts: BTreeMap<String, usize> = BTreeMap::new();
    for i in 0..count as u64 {
        let mut rng = seeded_rng(master, &tag, i);
        let mut instance = None;
        for _ in 0..600 {
            let cand = sample_reasoning_instance(
                &mut rng,
                format!("{split}-{i:05}"),
                scene_ranges,
                constraints,
                200,
            );
            let label = answer_label(cand.answer());
            if label_counts.get(&label).copied().unwrap_or(0) >= cap {
                continue;
            }
            if used.insert(cand.text.clone()) {
                *label_counts.entry(label).or_insert(0) += 1;
                instance = Some(cand);
                break;
            }
        }
        let instance = instance.expect("program space exhausted for split");
        man.record(&instance.id, &instance.program(), Some(instance.answer()));
        out.push(instance);
    }
    (out, man)
}

/// Build one sibling-ambiguity split. Identity here is the program text
/// plus the scene, since the template space is small by design.
pub fn build_ambiguity_split(
    master: u64,
    split: &str,
    count: usize,
    scene_ranges: &SceneRanges,
    used: &mut BTreeSet<String>,
) -> (Vec<ReasoningInstance>, DatasetManifest) {
    let tag = format!("ambiguity:{split}");
    let mut out = Vec::with_capacity(count);
    let mut man = manifest(split, Dialect::Reasoning, master);
    for i in 0..count as u64 {
        let mut rng = seeded_rng(master, &tag, i);
        let mut instance = None;
        for _ in 0..400 {
            let cand = sample_sibling_ambiguity_instance(
                &mut rng,
                format!("{split}-{i:05}"),
                scene_ranges,
                200,
            );
            let key = format!(
                "{}\n{}",
                cand.text,
                serde_json::to_string(&cand.scene).unwrap()
            );
            if used.insert(key) {
                instance = Some(cand);
                break;
            }
        }
        let instance = instance.expect("instance space exhausted for split");
        man.record(&instance.id, &instance.program(), Some(instance.answer()));
        out.push(instance);
    }
    (out, man)
}

// ------------------------------------------------------------------- IO

#[derive(Serialize, Deserialize)]
struct ProgramRecord {
    id: String,
    dialect: Dialect,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct SceneRecord {
    id: String,
    scene: SceneGraph,
    outputs: Vec<Value>,
}

#[derive(Serialize, Deserialize)]
struct TraceRecord {
    id: String,
    env: GridWorld,
    trace: Vec<TraceItem>,
    visited: Vec<usize>,
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl Iterator<Item = T>) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> std::io::Result<Vec<T>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn write_policy_split(
    dir: &Path,
    instances: &[PolicyInstance],
    man: &DatasetManifest,
) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let split = &man.split;
    write_jsonl(
        &dir.join(format!("{split}.programs.jsonl")),
        instances.iter().map(|x| ProgramRecord {
            id: x.id.clone(),
            dialect: Dialect::Policy,
            text: x.text.clone(),
        }),
    )?;
    write_jsonl(
        &dir.join(format!("{split}.traces.jsonl")),
        instances.iter().map(|x| TraceRecord {
            id: x.id.clone(),
            env: x.env.clone(),
            trace: x.trace.clone(),
            visited: x.visited.clone(),
        }),
    )?;
    fs::write(
        dir.join(format!("{split}.manifest.json")),
        serde_json::to_string_pretty(man)?,
    )
}

pub fn read_policy_split(dir: &Path, split: &str) -> std::io::Result<(Vec<PolicyInstance>, DatasetManifest)> {
    let programs: Vec<ProgramRecord> = read_jsonl(&dir.join(format!("{split}.programs.jsonl")))?;
    let traces: Vec<TraceRecord> = read_jsonl(&dir.join(format!("{split}.traces.jsonl")))?;
    let man: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(format!("{split}.manifest.json")))?)?;
    assert_eq!(programs.len(), traces.len(), "program and trace files disagree");
    let out = programs
        .into_iter()
        .zip(traces)
        .map(|(p, t)| {
            assert_eq!(p.id, t.id, "program and trace rows out of order");
            PolicyInstance {
                id: p.id,
                text: p.text,
                env: t.env,
                trace: t.trace,
                visited: t.visited,
            }
        })
        .collect();
    Ok((out, man))
}

pub fn write_reasoning_split(
    dir: &Path,
    instances: &[ReasoningInstance],
    man: &DatasetManifest,
) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let split = &man.split;
    write_jsonl(
        &dir.join(format!("{split}.programs.jsonl")),
        instances.iter().map(|x| ProgramRecord {
            id: x.id.clone(),
            dialect: Dialect::Reasoning,
            text: x.text.clone(),
        }),
    )?;
    write_jsonl(
        &dir.join(format!("{split}.scenes.jsonl")),
        instances.iter().map(|x| SceneRecord {
            id: x.id.clone(),
            scene: x.scene.clone(),
            outputs: x.outputs.clone(),
        }),
    )?;
    fs::write(
        dir.join(format!("{split}.manifest.json")),
        serde_json::to_string_pretty(man)?,
    )
}

pub fn read_reasoning_split(
    dir: &Path,
    split: &str,
) -> std::io::Result<(Vec<ReasoningInstance>, DatasetManifest)> {
    let programs: Vec<ProgramRecord> = read_jsonl(&dir.join(format!("{split}.programs.jsonl")))?;
    let scenes: Vec<SceneRecord> = read_jsonl(&dir.join(format!("{split}.scenes.jsonl")))?;
    let man: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(format!("{split}.manifest.json")))?)?;
    assert_eq!(programs.len(), scenes.len(), "program and scene files disagree");
    let out = programs
        .into_iter()
        .zip(scenes)
        .map(|(p, s)| {
            assert_eq!(p.id, s.id, "program and scene rows out of order");
            ReasoningInstance {
                id: p.id,
                text: p.text,
                scene: s.scene,
                outputs: s.outputs,
            }
        })
        .collect();
    Ok((out, man))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::Stmt;

    #[test]
    fn policy_sampler_honors_constraints() {
        let c = PolicyConstraints::standard();
        let ranges = EnvRanges::desk();
        let mut made = 0;
        for i in 0..80u64 {
            let mut rng = seeded_rng(7, "pol", i);
            let env = sample_env(&mut rng, &ranges);
            if let Some(p) = sample_policy_program(&mut rng, &env, &c) {
                assert!(p.n_exec() <= c.max_routines);
                assert!(p.control_count() <= c.max_control);
                assert!(p.token_count() <= c.max_tokens);
                assert!(!has_errors(&validate_program(&p)));
                made += 1;
            }
        }
        assert!(made >= 40, "sampler too lossy: {made}/80");
    }

    #[test]
    fn longer_and_complex_presets_hold_their_predicates() {
        let ranges = EnvRanges::desk();
        for i in 0..12u64 {
            let mut rng = seeded_rng(11, "longer", i);
            let inst = sample_policy_instance(
                &mut rng,
                format!("l{i}"),
                &ranges,
                &PolicyConstraints::longer(),
                500,
            );
            assert!(inst.program().token_count() > 80);
        }
        for i in 0..12u64 {
            let mut rng = seeded_rng(11, "complex", i);
            let inst = sample_policy_instance(
                &mut rng,
                format!("c{i}"),
                &ranges,
                &PolicyConstraints::complex(),
                500,
            );
            assert!(inst.program().control_count() > 4);
        }
    }

    #[test]
    fn nested_control_actually_appears() {
        let ranges = EnvRanges::rich();
        let c = PolicyConstraints::nested();
        fn has_nested(stmts: &[Stmt]) -> bool {
            fn control_inside(stmts: &[Stmt]) -> bool {
                stmts.iter().any(|s| matches!(s, Stmt::If { .. } | Stmt::While { .. }))
            }
            stmts.iter().any(|s| match s {
                Stmt::If {
                    then_body,
                    else_body,
                    ..
                } => {
                    control_inside(then_body)
                        || control_inside(else_body)
                        || has_nested(then_body)
                        || has_nested(else_body)
                }
                Stmt::While { body, .. } => control_inside(body) || has_nested(body),
                Stmt::Act { .. } => false,
            })
        }
        let mut nested = 0;
        let mut total = 0;
        for i in 0..150u64 {
            let mut rng = seeded_rng(13, "nest", i);
            let env = sample_env(&mut rng, &ranges);
            if let Some(p) = sample_policy_program(&mut rng, &env, &c) {
                total += 1;
                if has_nested(&p.body) {
                    nested += 1;
                }
            }
        }
        assert!(total >= 60, "sampler too lossy: {total}");
        assert!(nested * 10 >= total, "nesting too rare: {nested}/{total}");
    }

    #[test]
    fn policy_split_is_feasible_deduped_and_deterministic() {
        let mut used = BTreeSet::new();
        let (a, man) = build_policy_split(
            99,
            "train",
            25,
            &EnvRanges::desk(),
            &PolicyConstraints::supervised(),
            &mut used,
        );
        let mut used2 = BTreeSet::new();
        let (b, _) = build_policy_split(
            99,
            "train",
            25,
            &EnvRanges::desk(),
            &PolicyConstraints::supervised(),
            &mut used2,
        );
        assert_eq!(a, b);
        assert_eq!(man.count, 25);
        assert_eq!(used.len(), 25);
        assert_eq!(man.token_histogram.values().sum::<usize>(), 25);
        for inst in &a {
            let outcome = plan(&inst.program(), &inst.env);
            assert!(outcome.feasible);
            assert_eq!(outcome.trace, inst.trace);
        }
        // A second split must avoid every text the first split claimed.
        let (test, _) = build_policy_split(
            99,
            "test",
            10,
            &EnvRanges::desk(),
            &PolicyConstraints::supervised(),
            &mut used,
        );
        let train_texts: BTreeSet<_> = a.iter().map(|x| &x.text).collect();
        assert!(test.iter().all(|x| !train_texts.contains(&x.text)));
    }

    #[test]
    fn reasoning_split_balances_answers() {
        let mut used = BTreeSet::new();
        let (insts, man) = build_reasoning_split(
            5,
            "train",
            60,
            &SceneRanges::desk(),
            &ReasoningConstraints::answers(),
            0.15,
            &mut used,
        );
        assert_eq!(insts.len(), 60);
        let cap = (60.0f64 * 0.15).ceil() as usize;
        for (label, n) in &man.answer_histogram {
            assert!(*n <= cap, "label {label} over cap: {n}");
        }
        for inst in &insts {
            let p = inst.program();
            assert_eq!(
                p.routines.last().unwrap().kind.output_type(),
                Some(OutputType::Answer)
            );
            assert!(!has_errors(&validate_program(&p)));
            assert_eq!(execute_reasoning(&p, &inst.scene).unwrap(), inst.outputs);
        }
    }

    #[test]
    fn mixed_reasoning_split_validates_and_reruns() {
        let mut used = BTreeSet::new();
        let (insts, _) = build_reasoning_split(
            6,
            "mixed",
            40,
            &SceneRanges::desk(),
            &ReasoningConstraints::standard(),
            0.5,
            &mut used,
        );
        for inst in &insts {
            let p = inst.program();
            assert!(!has_errors(&validate_program(&p)));
            assert_eq!(execute_reasoning(&p, &inst.scene).unwrap(), inst.outputs);
        }
    }

    #[test]
    fn ambiguity_answers_flip_with_the_parent() {
        let mut used = BTreeSet::new();
        let (insts, _) =
            build_ambiguity_split(42, "train", 30, &SceneRanges::desk(), &mut used);
        for inst in &insts {
            let mut p = inst.program();
            assert_eq!(p.len(), 3);
            let k = p.routines[2].parents[0];
            let flipped = if k == 1 { 2 } else { 1 };
            p.routines[2].parents = vec![flipped];
            let other = execute_reasoning(&p, &inst.scene).unwrap();
            assert_ne!(
                other.last().unwrap(),
                inst.answer(),
                "answer must depend on the parent: {}",
                inst.text
            );
        }
    }

    #[test]
    fn split_io_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut used = BTreeSet::new();
        let (pol, pman) = build_policy_split(
            3,
            "t",
            6,
            &EnvRanges::desk(),
            &PolicyConstraints::supervised(),
            &mut used,
        );
        write_policy_split(dir.path(), &pol, &pman).unwrap();
        let (pol2, pman2) = read_policy_split(dir.path(), "t").unwrap();
        assert_eq!(pol, pol2);
        assert_eq!(pman, pman2);

        let mut used = BTreeSet::new();
        let (rea, rman) = build_reasoning_split(
            4,
            "t",
            6,
            &SceneRanges::desk(),
            &ReasoningConstraints::standard(),
            0.9,
            &mut used,
        );
        write_reasoning_split(dir.path(), &rea, &rman).unwrap();
        let (rea2, rman2) = read_reasoning_split(dir.path(), "t").unwrap();
        assert_eq!(rea, rea2);
        assert_eq!(rman, rman2);
    }
}
