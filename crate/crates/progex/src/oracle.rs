//! Symbolic oracles.
//!
//! For the policy dialect: shortest paths, an optimal planner that
//! executes a program with true condition values, and an independent
//! tree-walking interpreter used to cross-check the pointer machine.
//! Both interpreters share the same per-routine action planning, so any
//! disagreement between them isolates a control-flow bug.
//!
//! For the reasoning dialect: exact evaluation over a scene graph,
//! producing the per-routine ground truth the dense loss trains against.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{AttrCat, Program, RoutineKind, Stmt};
use crate::flow::{FlowKind, FlowTargets, PointerState};
use crate::gridworld::{Action, Cell, EnvFeedback, GridWorld};
use crate::scene::SceneGraph;

/// Environment-step budget for one program execution. Shared by the
/// planner, the reference interpreter and learned-policy episodes.
pub const MAX_PLAN_ACTIONS: usize = 300;
/// Condition-evaluation budget; a program past it is looping without
/// acting and can never finish.
pub const MAX_CONTROL_EVALS: usize = 1000;

// ---------------------------------------------------------------- paths

fn manhattan(a: (u8, u8), b: (u8, u8)) -> usize {
    (a.0 as i32 - b.0 as i32).unsigned_abs() as usize
        + (a.1 as i32 - b.1 as i32).unsigned_abs() as usize
}

const DIRS: [(i32, i32, Action); 4] = [
    (0, -1, Action::Up),
    (0, 1, Action::Down),
    (-1, 0, Action::Left),
    (1, 0, Action::Right),
];

/// Shortest move sequence from `from` to the nearest cell satisfying
/// `goal`, or `None` when no goal cell is reachable. Goal cells are
/// tried in row-major order and the first one at minimal distance wins,
/// so results are deterministic.
pub fn astar(env: &GridWorld, from: (u8, u8), goal: impl Fn(u8, u8) -> bool) -> Option<Vec<Action>> {
    let n = env.n;
    let mut best: Option<Vec<Action>> = None;
    for y in 0..n as u8 {
        for x in 0..n as u8 {
            if !goal(x, y) {
                continue;
            }
            if let Some(path) = point_to_point(env, from, (x, y)) {
                let better = match &best {
                    Some(b) => path.len() < b.len(),
                    None => true,
                };
                if better {
                    best = Some(path);
                }
            }
        }
    }
    best
}

/// A* between two fixed cells with the Manhattan heuristic.
fn point_to_point(env: &GridWorld, from: (u8, u8), to: (u8, u8)) -> Option<Vec<Action>> {
    if from == to {
        return Some(vec![]);
    }
    if !env.passable(to.0, to.1) {
        return None;
    }
    let n = env.n;
    let idx = |p: (u8, u8)| p.1 as usize * n + p.0 as usize;
    let mut g = vec![usize::MAX; n * n];
    let mut came: Vec<Option<(u8, u8, Action)>> = vec![None; n * n];
    // (f, insertion tick, position); the tick makes pop order total.
    let mut heap: BinaryHeap<Reverse<(usize, usize, u8, u8)>> = BinaryHeap::new();
    let mut tick = 0usize;
    g[idx(from)] = 0;
    heap.push(Reverse((manhattan(from, to), tick, from.0, from.1)));
    while let Some(Reverse((_, _, x, y))) = heap.pop() {
        let here = (x, y);
        if here == to {
            let mut path = Vec::new();
            let mut cur = here;
            while cur != from {
                let (px, py, a) = came[idx(cur)].unwrap();
                path.push(a);
                cur = (px, py);
            }
            path.reverse();
            return Some(path);
        }
        let gh = g[idx(here)];
        for (dx, dy, action) in DIRS {
            let nx = x as i32 + dx;
            let ny = y as i32 + dy;
            if !env.in_bounds(nx, ny) || !env.passable(nx as u8, ny as u8) {
                continue;
            }
            let np = (nx as u8, ny as u8);
            if gh + 1 < g[idx(np)] {
                g[idx(np)] = gh + 1;
                came[idx(np)] = Some((x, y, action));
                tick += 1;
                heap.push(Reverse((gh + 1 + manhattan(np, to), tick, np.0, np.1)));
            }
        }
    }
    None
}

/// Breadth-first shortest distance to any goal cell. Written without
/// reference to [`astar`] so the two can check each other.
pub fn bfs_distance(env: &GridWorld, from: (u8, u8), goal: impl Fn(u8, u8) -> bool) -> Option<usize> {
    let n = env.n;
    let idx = |p: (u8, u8)| p.1 as usize * n + p.0 as usize;
    if goal(from.0, from.1) {
        return Some(0);
    }
    let mut dist = vec![usize::MAX; n * n];
    dist[idx(from)] = 0;
    let mut q = VecDeque::new();
    q.push_back(from);
    while let Some((x, y)) = q.pop_front() {
        let d = dist[idx((x, y))];
        for (dx, dy, _) in DIRS {
            let nx = x as i32 + dx;
            let ny = y as i32 + dy;
            if !env.in_bounds(nx, ny) || !env.passable(nx as u8, ny as u8) {
                continue;
            }
            let np = (nx as u8, ny as u8);
            if dist[idx(np)] != usize::MAX {
                continue;
            }
            dist[idx(np)] = d + 1;
            if goal(np.0, np.1) {
                return Some(d + 1);
            }
            q.push_back(np);
        }
    }
    None
}

// -------------------------------------------------------------- planner

/// One supervised step of a planner trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum TraceItem {
    /// Environment action taken while `position` is pointed at.
    Act {
        position: usize,
        action_index: usize,
        finished: bool,
    },
    /// Control routine evaluated to `truth`. Consumes no environment step.
    Branch { position: usize, truth: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerOutcome {
    pub feasible: bool,
    pub trace: Vec<TraceItem>,
    /// Routine positions in execution order: one entry per control
    /// evaluation and per completed action routine. Zero-step `Goto`
    /// skips appear nowhere.
    pub visited: Vec<usize>,
    pub actions_used: usize,
    pub control_evals: usize,
    pub env: GridWorld,
}

/// What one action routine needs from the grid.
fn plan_one_routine(
    env: &mut GridWorld,
    kind: &RoutineKind,
    remaining: &mut usize,
) -> Option<Vec<(Action, EnvFeedback)>> {
    let (path, follow) = match kind {
        RoutineKind::Mine { item } => {
            let want = *item;
            let path = astar(env, env.agent, |x, y| env.cell(x, y) == Cell::Item(want))?;
            (path, Some(Action::Mine))
        }
        RoutineKind::Sell { item } => {
            if env.item_count(*item) == 0 {
                return None;
            }
            let path = astar(env, env.agent, |x, y| env.cell(x, y) == Cell::Merchant)?;
            (path, Some(Action::Sell(*item)))
        }
        RoutineKind::Place { shape, x, y } => {
            if env.item_count(shape.item()) == 0
                || !env.in_bounds(*x as i32, *y as i32)
                || env.cell(*x, *y) != Cell::Empty
            {
                return None;
            }
            let (tx, ty) = (*x, *y);
            let path = astar(env, env.agent, |px, py| (px, py) == (tx, ty))?;
            (path, Some(Action::Place(*shape)))
        }
        RoutineKind::BuildBridge => {
            let path = astar(env, env.agent, |x, y| {
                env.passable(x, y)
                    && DIRS.iter().any(|(dx, dy, _)| {
                        let nx = x as i32 + dx;
                        let ny = y as i32 + dy;
                        env.in_bounds(nx, ny) && env.cell(nx as u8, ny as u8) == Cell::River
                    })
            })?;
            (path, Some(Action::BuildBridge))
        }
        RoutineKind::Goto { x, y } => {
            if !env.in_bounds(*x as i32, *y as i32) {
                return None;
            }
            let (tx, ty) = (*x, *y);
            let path = astar(env, env.agent, |px, py| (px, py) == (tx, ty))?;
            (path, None)
        }
        other => panic!("not an action routine: {other:?}"),
    };
    let total = path.len() + follow.iter().len();
    if total > *remaining {
        return None;
    }
    *remaining -= total;
    let mut steps = Vec::with_capacity(total);
    for a in path {
        let f = env.step(a);
        debug_assert_eq!(f.event, crate::gridworld::Event::Moved);
        steps.push((a, f));
    }
    if let Some(a) = follow {
        let f = env.step(a);
        steps.push((a, f));
    }
    debug_assert!(
        env.ending_met(kind, &steps.last().unwrap().1),
        "planned routine did not finish: {kind:?}"
    );
    Some(steps)
}

/// Execute a program optimally by driving the pointer machine with true
/// condition values and planned actions.
pub fn plan(program: &Program, start: &GridWorld) -> PlannerOutcome {
    let flow = FlowTargets::compute(program);
    let mut env = start.clone();
    let mut state = PointerState::start();
    let mut trace = Vec::new();
    let mut visited = Vec::new();
    let mut remaining = MAX_PLAN_ACTIONS;
    let mut evals = 0usize;
    let mut feasible = true;
    while let Some(pos) = state.position() {
        let kind = &program.routine(pos).kind;
        match flow.kind(pos) {
            FlowKind::Branch { .. } | FlowKind::Loop { .. } => {
                if evals == MAX_CONTROL_EVALS {
                    feasible = false;
                    break;
                }
                evals += 1;
                let cond = match kind {
                    RoutineKind::If { cond }
                    | RoutineKind::IfElse { cond }
                    | RoutineKind::While { cond } => cond,
                    other => panic!("control flow on {other:?}"),
                };
                let truth = env.eval_condition(cond);
                visited.push(pos);
                trace.push(TraceItem::Branch { position: pos, truth });
                state.advance_branch(&flow, pos, truth);
            }
            FlowKind::Action { .. } => {
                if env.pre_satisfied(kind) {
                    state.advance_action(&flow, pos, true, false);
                    continue;
                }
                match plan_one_routine(&mut env, kind, &mut remaining) {
                    Some(steps) => {
                        let last = steps.len() - 1;
                        for (i, (a, _)) in steps.iter().enumerate() {
                            trace.push(TraceItem::Act {
                                position: pos,
                                action_index: a.head_index(),
                                finished: i == last,
                            });
                        }
                        visited.push(pos);
                        state.advance_action(&flow, pos, true, true);
                    }
                    None => {
                        feasible = false;
                        break;
                    }
                }
            }
            FlowKind::Marker => unreachable!("pointer on marker at {pos}"),
        }
    }
    PlannerOutcome {
        feasible,
        trace,
        visited,
        actions_used: MAX_PLAN_ACTIONS - remaining,
        control_evals: evals,
        env,
    }
}

/// Reference interpreter: recursive descent over the statement tree,
/// sharing [`plan_one_routine`] with the planner but none of its
/// control-flow machinery.
pub fn reference_run(program: &Program, start: &GridWorld) -> (bool, Vec<usize>) {
    struct Walk {
        env: GridWorld,
        visited: Vec<usize>,
        remaining: usize,
        evals: usize,
        feasible: bool,
    }
    impl Walk {
        fn block(&mut self, stmts: &[Stmt]) {
            for stmt in stmts {
                if !self.feasible {
                    return;
                }
                match stmt {
                    Stmt::Act { index, kind } => {
                        if self.env.pre_satisfied(kind) {
                            continue;
                        }
                        match plan_one_routine(&mut self.env, kind, &mut self.remaining) {
                            Some(_) => self.visited.push(*index),
                            None => self.feasible = false,
                        }
                    }
                    Stmt::If {
                        index,
                        cond,
                        then_body,
                        else_body,
                        ..
                    } => {
                        if !self.tick() {
                            return;
                        }
                        self.visited.push(*index);
                        if self.env.eval_condition(cond) {
                            self.block(then_body);
                        } else {
                            self.block(else_body);
                        }
                    }
                    Stmt::While { index, cond, body, .. } => loop {
                        if !self.tick() {
                            return;
                        }
                        self.visited.push(*index);
                        if !self.env.eval_condition(cond) {
                            break;
                        }
                        self.block(body);
                        if !self.feasible {
                            return;
                        }
                    },
                }
            }
        }

        fn tick(&mut self) -> bool {
            if self.evals == MAX_CONTROL_EVALS {
                self.feasible = false;
                return false;
            }
            self.evals += 1;
            true
        }
    }
    let mut w = Walk {
        env: start.clone(),
        visited: Vec::new(),
        remaining: MAX_PLAN_ACTIONS,
        evals: 0,
        feasible: true,
    };
    w.block(&program.body);
    (w.feasible, w.visited)
}

// ------------------------------------------------------- scene reasoning

/// Result of one reasoning routine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Value {
    /// Object ids, ascending.
    Objects(Vec<usize>),
    Bool(bool),
    Word(String),
}

impl Value {
    pub fn as_objects(&self) -> &[usize] {
        match self {
            Value::Objects(ids) => ids,
            other => panic!("expected objects, got {other:?}"),
        }
    }

    pub fn as_bool(&self) -> bool {
        match self {
            Value::Bool(b) => *b,
            other => panic!("expected boolean, got {other:?}"),
        }
    }

    pub fn as_word(&self) -> &str {
        match self {
            Value::Word(w) => w,
            other => panic!("expected a word, got {other:?}"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ReasonError {
    #[error("routine {position}: input is empty")]
    EmptyInput { position: usize },
    #[error("routine {position}: inputs share no value")]
    NoCommonValue { position: usize },
    #[error("routine {position}: {matches} of the two choices match")]
    ChooseAmbiguous { position: usize, matches: usize },
}

/// Evaluate a reasoning program exactly. Returns one value per
/// position; the last is the program's answer.
pub fn execute_reasoning(program: &Program, scene: &SceneGraph) -> Result<Vec<Value>, ReasonError> {
    let mut results: Vec<Value> = Vec::with_capacity(program.len());
    for r in &program.routines {
        let pos = r.index;
        let parent = |k: usize| &results[r.parents[k] - 1];
        // Representative object: the lowest id in a set.
        let rep = |ids: &[usize]| -> Result<usize, ReasonError> {
            ids.first().copied().ok_or(ReasonError::EmptyInput { position: pos })
        };
        let attr = |id: usize, cat: AttrCat| -> Option<String> {
            scene.attr_of(scene.object(id).unwrap(), cat)
        };
        let v = match &r.kind {
            RoutineKind::Select { name } => Value::Objects(
                scene
                    .objects
                    .iter()
                    .filter(|o| &o.name == name)
                    .map(|o| o.id)
                    .collect(),
            ),
            RoutineKind::Filter { cat, value } => Value::Objects(
                parent(0)
                    .as_objects()
                    .iter()
                    .copied()
                    .filter(|&id| attr(id, *cat).as_deref() == Some(value))
                    .collect(),
            ),
            RoutineKind::Relate { relation } => {
                let input = parent(0).as_objects();
                Value::Objects(
                    scene
                        .objects
                        .iter()
                        .map(|o| o.id)
                        .filter(|&o| input.iter().any(|&i| scene.has_relation(o, relation, i)))
                        .collect(),
                )
            }
            RoutineKind::InverseRelate { relation } => {
                let input = parent(0).as_objects();
                Value::Objects(
                    scene
                        .objects
                        .iter()
                        .map(|o| o.id)
                        .filter(|&o| input.iter().any(|&i| scene.has_relation(i, relation, o)))
                        .collect(),
                )
            }
            RoutineKind::Verify { cat, value } => {
                let input = parent(0).as_objects();
                Value::Bool(
                    !input.is_empty()
                        && input
                            .iter()
                            .all(|&id| attr(id, *cat).as_deref() == Some(value)),
                )
            }
            RoutineKind::VerifyRelation { relation } => {
                let a = parent(0).as_objects();
                let b = parent(1).as_objects();
                Value::Bool(
                    a.iter()
                        .any(|&s| b.iter().any(|&o| scene.has_relation(s, relation, o))),
                )
            }
            RoutineKind::Query { cat } => {
                let id = rep(parent(0).as_objects())?;
                Value::Word(attr(id, *cat).expect("queryable categories are always present"))
            }
            RoutineKind::Common { cat } => {
                let a = attr(rep(parent(0).as_objects())?, *cat);
                let b = attr(rep(parent(1).as_objects())?, *cat);
                match (a, b) {
                    (Some(x), Some(y)) if x == y => Value::Word(x),
                    _ => return Err(ReasonError::NoCommonValue { position: pos }),
                }
            }
            RoutineKind::Different { cat } => {
                let a = attr(rep(parent(0).as_objects())?, *cat);
                let b = attr(rep(parent(1).as_objects())?, *cat);
                Value::Bool(a != b || a.is_none())
            }
            RoutineKind::Same { cat } => {
                let a = attr(rep(parent(0).as_objects())?, *cat);
                let b = attr(rep(parent(1).as_objects())?, *cat);
                Value::Bool(a.is_some() && a == b)
            }
            RoutineKind::Choose { cat, a, b } => {
                let v = attr(rep(parent(0).as_objects())?, *cat)
                    .expect("choosable categories are always present");
                let matches = (v == *a) as usize + (v == *b) as usize;
                if matches != 1 {
                    return Err(ReasonError::ChooseAmbiguous { position: pos, matches });
                }
                Value::Word(if v == *a { a.clone() } else { b.clone() })
            }
            RoutineKind::And => Value::Bool(parent(0).as_bool() && parent(1).as_bool()),
            RoutineKind::Or => Value::Bool(parent(0).as_bool() || parent(1).as_bool()),
            RoutineKind::Exist => Value::Bool(!parent(0).as_objects().is_empty()),
            other => panic!("not a reasoning routine: {other:?}"),
        };
        results.push(v);
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_program, Dialect, Item};
    use crate::gridworld::{generate, EnvConfig, ProgramMonitor};
    use crate::rng::seeded_rng;
    use crate::scene::SceneObject;
    use rand::Rng;

    #[test]
    fn astar_matches_bfs_on_random_worlds() {
        for i in 0..40 {
            let mut rng = seeded_rng(21, "astar", i);
            let cfg = EnvConfig {
                n: 5 + (i % 4) as usize,
                river: i % 3 == 0,
                walls: (i % 5) as usize,
                ..EnvConfig::small()
            };
            let env = generate(&cfg, &mut rng);
            let goal = |x: u8, y: u8| env.cell(x, y) == Cell::Merchant;
            let a = astar(&env, env.agent, goal);
            let b = bfs_distance(&env, env.agent, goal);
            assert_eq!(a.as_ref().map(|p| p.len()), b, "world {i}");
            if let Some(path) = a {
                let mut sim = env.clone();
                for step in path {
                    assert_eq!(sim.step(step).event, crate::gridworld::Event::Moved);
                }
                assert!(goal(sim.agent.0, sim.agent.1));
            }
        }
    }

    fn flat_world() -> GridWorld {
        let mut w = GridWorld::empty(5);
        w.set_cell(4, 4, Cell::Item(Item::Gold));
        w.set_cell(0, 4, Cell::Item(Item::Gold));
        w.set_cell(2, 0, Cell::Merchant);
        w.agent = (2, 2);
        w
    }

    #[test]
    fn planner_executes_a_loop_to_depletion() {
        let program = parse_program(
            "While(env[gold]>0){ Mine(gold); } Goto(2,0);",
            Dialect::Policy,
        )
        .unwrap();
        let out = plan(&program, &flat_world());
        assert!(out.feasible);
        // While true, Mine, While true, Mine, While false, Goto.
        assert_eq!(out.visited, vec![1, 2, 1, 2, 1, 4]);
        assert_eq!(out.env.item_count(Item::Gold), 2);
        assert_eq!(out.env.agent, (2, 0));
        assert_eq!(out.env.env_count(crate::dsl::CondItem::Gold), 0);
    }

    #[test]
    fn planner_trace_replays_to_completion() {
        let program = parse_program(
            "Mine(gold); If(agent[gold]>=1){ Goto(2,0); Sell(gold); }",
            Dialect::Policy,
        )
        .unwrap();
        let start = flat_world();
        let out = plan(&program, &start);
        assert!(out.feasible);
        let mut env = start;
        let mut monitor = ProgramMonitor::new(&program, &env);
        for item in &out.trace {
            if let TraceItem::Act { position, action_index, .. } = item {
                let kind = &program.routine(*position).kind;
                let action = crate::gridworld::resolve_action(*action_index, kind);
                let f = env.step(action);
                monitor.observe(&program, &env, &f);
            }
        }
        assert!(monitor.completed());
    }

    #[test]
    fn pointer_machine_agrees_with_tree_walk() {
        let srcs = [
            "Mine(gold); Sell(gold);",
            "While(env[gold]>0){ Mine(gold); } Goto(2,0);",
            "If(is_there[merchant]){ Mine(gold); Goto(2,0); Sell(gold); }Else{ Mine(gold); }",
            "While(agent[gold]<2){ Mine(gold); If(env[gold]=1){ Goto(0,0); } }",
            "Goto(2,2); Mine(gold);",
        ];
        for src in srcs {
            let program = parse_program(src, Dialect::Policy).unwrap();
            let start = flat_world();
            let out = plan(&program, &start);
            let (feasible, visited) = reference_run(&program, &start);
            assert_eq!(out.feasible, feasible, "{src}");
            assert_eq!(out.visited, visited, "{src}");
        }
    }

    #[test]
    fn infeasible_programs_agree_too() {
        // No merchant in this world and nothing to sell.
        let mut w = GridWorld::empty(4);
        w.agent = (0, 0);
        let program = parse_program("Sell(gold);", Dialect::Policy).unwrap();
        let out = plan(&program, &w);
        let (feasible, _) = reference_run(&program, &w);
        assert!(!out.feasible);
        assert!(!feasible);
        // A loop that can never end exhausts the evaluation budget.
        let spin = parse_program(
            "While(env[merchant]=0){ If(env[merchant]>0){ Goto(0,0); } }",
            Dialect::Policy,
        )
        .unwrap();
        let out = plan(&spin, &w);
        let (feasible, _) = reference_run(&spin, &w);
        assert!(!out.feasible);
        assert!(!feasible);
        assert_eq!(out.control_evals, MAX_CONTROL_EVALS);
    }

    fn toy_scene() -> SceneGraph {
        let obj = |id: usize, name: &str, color: &str, material: &str, bbox: [f64; 4]| {
            let mut attrs = std::collections::BTreeMap::new();
            attrs.insert("color".to_string(), color.to_string());
            attrs.insert("material".to_string(), material.to_string());
            attrs.insert("shape".to_string(), "round".to_string());
            SceneObject {
                id,
                name: name.to_string(),
                attrs,
                bbox,
            }
        };
        let objects = vec![
            obj(0, "bag", "red", "leather", [0.05, 0.4, 0.1, 0.1]),
            obj(1, "bag", "blue", "fabric", [0.8, 0.4, 0.1, 0.1]),
            obj(2, "bottle", "red", "glass", [0.45, 0.1, 0.1, 0.1]),
        ];
        let relations = crate::scene::compute_relations(&objects);
        SceneGraph {
            id: "toy".into(),
            scene: "indoors".into(),
            objects,
            relations,
        }
    }

    #[test]
    fn reasoning_oracle_core_routines() {
        let scene = toy_scene();
        let run = |src: &str| {
            let p = parse_program(src, Dialect::Reasoning).unwrap();
            execute_reasoning(&p, &scene).unwrap().last().unwrap().clone()
        };
        assert_eq!(run("Select(bag)"), Value::Objects(vec![0, 1]));
        assert_eq!(
            run("Select(bag); Filter_color(red)[1]"),
            Value::Objects(vec![0])
        );
        assert_eq!(
            run("Select(bag); Filter_material(leather)[1]; Query_color()[2]"),
            Value::Word("red".into())
        );
        // Object 0 sits left of both others.
        assert_eq!(
            run("Select(bottle); Relate(left)[1]"),
            Value::Objects(vec![0])
        );
        assert_eq!(
            run("Select(bag); Filter_color(red)[1]; InverseRelate(left)[2]"),
            Value::Objects(vec![1, 2])
        );
        assert_eq!(
            run("Select(bag); Select(bottle); Verify_relation(left)[1,2]"),
            Value::Bool(true)
        );
        assert_eq!(
            run("Select(bag); Select(bottle); Verify_relation(above)[1,2]"),
            Value::Bool(false)
        );
        assert_eq!(run("Select(bag); Verify_color(red)[1]"), Value::Bool(false));
        assert_eq!(
            run("Select(bag); Filter_material(fabric)[1]; Verify_color(blue)[2]"),
            Value::Bool(true)
        );
        assert_eq!(
            run("Select(bag); Select(bottle); Common_color()[1,2]"),
            Value::Word("red".into())
        );
        assert_eq!(
            run("Select(bag); Select(bottle); Different_name()[1,2]"),
            Value::Bool(true)
        );
        assert_eq!(
            run("Select(bag); Select(bottle); Same_color()[1,2]"),
            Value::Bool(true)
        );
        assert_eq!(
            run("Select(bottle); Choose_color(red,blue)[1]"),
            Value::Word("red".into())
        );
        assert_eq!(
            run("Select(bag); Filter_color(green)[1]; Exist()[2]"),
            Value::Bool(false)
        );
        assert_eq!(
            run("Select(bag); Exist()[1]; Select(bottle); Exist()[3]; And()[2,4]"),
            Value::Bool(true)
        );
        assert_eq!(run("Select(bag); Query_scene()[1]"), Value::Word("indoors".into()));
        assert_eq!(run("Select(bottle); Query_position()[1]"), Value::Word("top".into()));
    }

    #[test]
    fn reasoning_oracle_reports_degenerate_cases() {
        let scene = toy_scene();
        let fail = |src: &str| {
            let p = parse_program(src, Dialect::Reasoning).unwrap();
            execute_reasoning(&p, &scene).unwrap_err()
        };
        assert_eq!(
            fail("Select(dog); Query_color()[1]"),
            ReasonError::EmptyInput { position: 2 }
        );
        assert_eq!(
            fail("Select(bag); Select(bottle); Common_material()[1,2]"),
            ReasonError::NoCommonValue { position: 3 }
        );
        assert_eq!(
            fail("Select(bottle); Choose_color(blue,green)[1]"),
            ReasonError::ChooseAmbiguous { position: 2, matches: 0 }
        );
    }

    #[test]
    fn planner_respects_budget_on_long_grinds() {
        let mut w = GridWorld::empty(8);
        w.agent = (0, 0);
        for y in 0..8u8 {
            for x in 0..8u8 {
                if (x + y) % 2 == 0 && (x, y) != (0, 0) {
                    w.set_cell(x, y, Cell::Item(Item::Wood));
                }
            }
        }
        // 31 wood cells, each a walk plus a mine; the budget holds.
        let program = parse_program("While(env[wood]>0){ Mine(wood); }", Dialect::Policy).unwrap();
        let out = plan(&program, &w);
        assert!(out.feasible);
        assert!(out.actions_used <= MAX_PLAN_ACTIONS);
        assert_eq!(out.env.env_count(crate::dsl::CondItem::Wood), 0);
        assert_eq!(out.env.item_count(Item::Wood), 31);
        let (feasible, visited) = reference_run(&program, &w);
        assert!(feasible);
        assert_eq!(out.visited, visited);
    }

    #[test]
    fn random_worlds_keep_interpreters_aligned() {
        let srcs = [
            "Mine(gold); Sell(gold);",
            "While(env[wood]>0){ Mine(wood); } If(agent[wood]>=2){ Sell(wood); }",
            "If(is_there[river]){ BuildBridge(); }Else{ Goto(1,1); }",
            "While(agent[gold]<1){ Mine(gold); } Place(triangle,3,3);",
        ];
        let mut agree = 0;
        for i in 0..60u64 {
            let mut rng = seeded_rng(33, "xcheck", i);
            let cfg = EnvConfig {
                n: 5 + (i % 4) as usize,
                river: i % 4 == 1,
                walls: (i % 3) as usize,
                ..EnvConfig::small()
            };
            let mut env = generate(&cfg, &mut rng);
            if i % 2 == 0 {
                env.inventory.insert(Item::Gold, rng.gen_range(0..3));
                env.inventory.insert(Item::Triangle, 1);
            }
            for src in srcs {
                let program = parse_program(src, Dialect::Policy).unwrap();
                let out = plan(&program, &env);
                let (feasible, visited) = reference_run(&program, &env);
                assert_eq!(out.feasible, feasible, "world {i} {src}");
                assert_eq!(out.visited, visited, "world {i} {src}");
                agree += 1;
            }
        }
        assert_eq!(agree, 240);
    }
}
