//! Square gridworld the policy dialect acts in.
//!
//! Cells hold at most one feature: an item to mine, water, a bridge, a
//! wall or a merchant. The agent walks the four directions, mines the
//! cell under it, sells at merchants, places shapes it holds and bridges
//! adjacent rivers. Coordinates are `(x, y)` with `x` the column and
//! `y` the row, both 0-based; `Goto(x,y)` uses the same convention.
//!
//! The module also evaluates symbolic conditions against the true state
//! and hosts [`ProgramMonitor`], which tracks how far a program's true
//! execution has progressed. The monitor defines task success: the
//! sparse reward is +1 exactly when it reaches the end of the program.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsl::{CondItem, CondSubject, Condition, Item, Program, RoutineKind, Shape};
use crate::flow::{FlowKind, FlowTargets, PointerState};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cell {
    Empty,
    Item(Item),
    River,
    Bridge,
    Wall,
    Merchant,
}

impl Cell {
    pub fn passable(self) -> bool {
        !matches!(self, Cell::River | Cell::Wall)
    }

    /// Index into the per-cell one-hot block.
    pub fn kind_index(self) -> usize {
        match self {
            Cell::Empty => 0,
            Cell::Item(Item::Gold) => 1,
            Cell::Item(Item::Wood) => 2,
            Cell::Item(Item::Iron) => 3,
            Cell::Item(Item::Triangle) => 4,
            Cell::Item(Item::Circle) => 5,
            Cell::Item(Item::Rectangle) => 6,
            Cell::River => 7,
            Cell::Bridge => 8,
            Cell::Wall => 9,
            Cell::Merchant => 10,
        }
    }
}

/// Number of distinct cell kinds in the one-hot block.
pub const CELL_KINDS: usize = 11;
/// Per-cell encoder features: kind one-hot, agent flag, normalized
/// coordinates, and two sine/cosine frequencies per axis.
pub const CELL_FEATURES: usize = CELL_KINDS + 1 + 2 + 8;
/// Inventory features: per item, a one-hot bucket over counts 0..=5.
pub const INVENTORY_FEATURES: usize = 6 * 6;

/// Environment actions. Selling and placing carry their parameter,
/// resolved from the pointed routine by [`resolve_action`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Mine,
    Sell(Item),
    Place(Shape),
    BuildBridge,
}

/// Size of the action output head.
pub const ACTION_HEAD: usize = 8;

impl Action {
    /// Index in the action head: direction, mine, sell, place, bridge.
    pub fn head_index(self) -> usize {
        match self {
            Action::Up => 0,
            Action::Down => 1,
            Action::Left => 2,
            Action::Right => 3,
            Action::Mine => 4,
            Action::Sell(_) => 5,
            Action::Place(_) => 6,
            Action::BuildBridge => 7,
        }
    }
}

/// Turn a head index into a concrete action. Parameters come from the
/// pointed routine; a sell or place emitted under a routine that does
/// not carry the parameter degrades to a default and can only fail in
/// the environment.
pub fn resolve_action(index: usize, kind: &RoutineKind) -> Action {
    match index {
        0 => Action::Up,
        1 => Action::Down,
        2 => Action::Left,
        3 => Action::Right,
        4 => Action::Mine,
        5 => Action::Sell(match kind {
            RoutineKind::Sell { item } => *item,
            RoutineKind::Mine { item } => *item,
            _ => Item::Gold,
        }),
        6 => Action::Place(match kind {
            RoutineKind::Place { shape, .. } => *shape,
            _ => Shape::Triangle,
        }),
        7 => Action::BuildBridge,
        other => panic!("action head index {other} out of range"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Moved,
    Blocked,
    Mined { item: Item },
    MineFailed,
    Sold { item: Item },
    SellFailed,
    Placed { shape: Shape, x: u8, y: u8 },
    PlaceFailed,
    BridgeBuilt { x: u8, y: u8 },
    BridgeFailed,
}

/// What one environment step reported back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvFeedback {
    pub event: Event,
    /// Agent position after the step.
    pub agent: (u8, u8),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridWorld {
    pub n: usize,
    /// Row-major cells: index `y * n + x`.
    pub cells: Vec<Cell>,
    pub agent: (u8, u8),
    pub inventory: BTreeMap<Item, u32>,
    /// Environment steps taken so far.
    pub steps: usize,
}

impl GridWorld {
    pub fn empty(n: usize) -> GridWorld {
        assert!((2..=10).contains(&n), "grid size {n} out of range");
        GridWorld {
            n,
            cells: vec![Cell::Empty; n * n],
            agent: (0, 0),
            inventory: BTreeMap::new(),
            steps: 0,
        }
    }

    pub fn cell(&self, x: u8, y: u8) -> Cell {
        self.cells[y as usize * self.n + x as usize]
    }

    pub fn set_cell(&mut self, x: u8, y: u8, cell: Cell) {
        self.cells[y as usize * self.n + x as usize] = cell;
    }

    pub fn in_bounds(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.n && (y as usize) < self.n
    }

    pub fn passable(&self, x: u8, y: u8) -> bool {
        self.cell(x, y).passable()
    }

    pub fn item_count(&self, item: Item) -> u32 {
        self.inventory.get(&item).copied().unwrap_or(0)
    }

    fn add_item(&mut self, item: Item, delta: i64) {
        let e = self.inventory.entry(item).or_insert(0);
        *e = (*e as i64 + delta).max(0) as u32;
    }

    /// Apply one action. Every call advances the step counter, even
    /// when the action fails.
    pub fn step(&mut self, action: Action) -> EnvFeedback {
        self.steps += 1;
        let event = match action {
            Action::Up | Action::Down | Action::Left | Action::Right => {
                let (dx, dy) = match action {
                    Action::Up => (0, -1),
                    Action::Down => (0, 1),
                    Action::Left => (-1, 0),
                    _ => (1, 0),
                };
                let nx = self.agent.0 as i32 + dx;
                let ny = self.agent.1 as i32 + dy;
                if self.in_bounds(nx, ny) && self.passable(nx as u8, ny as u8) {
                    self.agent = (nx as u8, ny as u8);
                    Event::Moved
                } else {
                    Event::Blocked
                }
            }
            Action::Mine => {
                let (x, y) = self.agent;
                match self.cell(x, y) {
                    Cell::Item(item) => {
                        self.set_cell(x, y, Cell::Empty);
                        self.add_item(item, 1);
                        Event::Mined { item }
                    }
                    _ => Event::MineFailed,
                }
            }
            Action::Sell(item) => {
                let (x, y) = self.agent;
                if self.cell(x, y) == Cell::Merchant && self.item_count(item) > 0 {
                    self.add_item(item, -1);
                    Event::Sold { item }
                } else {
                    Event::SellFailed
                }
            }
            Action::Place(shape) => {
                let (x, y) = self.agent;
                if self.cell(x, y) == Cell::Empty && self.item_count(shape.item()) > 0 {
                    self.set_cell(x, y, Cell::Item(shape.item()));
                    self.add_item(shape.item(), -1);
                    Event::Placed { shape, x, y }
                } else {
                    Event::PlaceFailed
                }
            }
            Action::BuildBridge => {
                // Up, down, left, right priority; first river wins.
                let (x, y) = self.agent;
                let mut built = None;
                for (dx, dy) in [(0i32, -1i32), (0, 1), (-1, 0), (1, 0)] {
                    let nx = x as i32 + dx;
                    let ny = y as i32 + dy;
                    if self.in_bounds(nx, ny) && self.cell(nx as u8, ny as u8) == Cell::River {
                        self.set_cell(nx as u8, ny as u8, Cell::Bridge);
                        built = Some((nx as u8, ny as u8));
                        break;
                    }
                }
                match built {
                    Some((bx, by)) => {
                        // Wood goes into the bridge when the agent has any.
                        if self.item_count(Item::Wood) > 0 {
                            self.add_item(Item::Wood, -1);
                        }
                        Event::BridgeBuilt { x: bx, y: by }
                    }
                    None => Event::BridgeFailed,
                }
            }
        };
        EnvFeedback {
            event,
            agent: self.agent,
        }
    }

    /// Count backing `env[item]` conditions.
    pub fn env_count(&self, item: CondItem) -> u32 {
        let target = |cell: Cell| match item {
            CondItem::Gold => cell == Cell::Item(Item::Gold),
            CondItem::Wood => cell == Cell::Item(Item::Wood),
            CondItem::Iron => cell == Cell::Item(Item::Iron),
            CondItem::Bridge => cell == Cell::Bridge,
            CondItem::River => cell == Cell::River,
            CondItem::Merchant => cell == Cell::Merchant,
            CondItem::Wall => cell == Cell::Wall,
            CondItem::Flat => cell == Cell::Empty,
        };
        self.cells.iter().filter(|&&c| target(c)).count() as u32
    }

    /// Count backing `agent[item]` conditions. Only minable items can
    /// sit in the inventory; other words count zero.
    pub fn agent_count(&self, item: CondItem) -> u32 {
        let item = match item {
            CondItem::Gold => Item::Gold,
            CondItem::Wood => Item::Wood,
            CondItem::Iron => Item::Iron,
            _ => return 0,
        };
        self.item_count(item)
    }

    /// Truth of a condition in the current state.
    pub fn eval_condition(&self, cond: &Condition) -> bool {
        let count = match cond.subject {
            CondSubject::Agent => self.agent_count(cond.item),
            CondSubject::Env | CondSubject::IsThere => self.env_count(cond.item),
        };
        cond.op.eval(count as i64, cond.number as i64)
    }

    /// Whether a routine's ending condition is met by this feedback.
    /// `Goto` is state-based; everything else keys on the event.
    pub fn ending_met(&self, kind: &RoutineKind, feedback: &EnvFeedback) -> bool {
        match kind {
            RoutineKind::Mine { item } => feedback.event == Event::Mined { item: *item },
            RoutineKind::Sell { item } => feedback.event == Event::Sold { item: *item },
            RoutineKind::Place { shape, x, y } => {
                feedback.event
                    == Event::Placed {
                        shape: *shape,
                        x: *x,
                        y: *y,
                    }
            }
            RoutineKind::BuildBridge => matches!(feedback.event, Event::BridgeBuilt { .. }),
            RoutineKind::Goto { x, y } => self.agent == (*x, *y),
            other => panic!("no ending condition for {other:?}"),
        }
    }

    /// True when the pointer may skip this routine without an inference
    /// step: only `Goto` whose target is already under the agent.
    pub fn pre_satisfied(&self, kind: &RoutineKind) -> bool {
        matches!(kind, RoutineKind::Goto { x, y } if self.agent == (*x, *y))
    }

    /// Per-cell feature rows for the specification encoder, `n*n` rows
    /// of [`CELL_FEATURES`] columns, cell order matching `cells`.
    pub fn encode_cells(&self) -> Matrix {
        let n = self.n;
        let mut m = Matrix::zeros(n * n, CELL_FEATURES);
        for y in 0..n {
            for x in 0..n {
                let row = m.row_mut(y * n + x);
                row[self.cell(x as u8, y as u8).kind_index()] = 1.0;
                if self.agent == (x as u8, y as u8) {
                    row[CELL_KINDS] = 1.0;
                }
                let fx = x as f64 / n as f64;
                let fy = y as f64 / n as f64;
                row[CELL_KINDS + 1] = fx;
                row[CELL_KINDS + 2] = fy;
                let mut k = CELL_KINDS + 3;
                for freq in [1.0, 2.0] {
                    for v in [fx, fy] {
                        row[k] = (freq * std::f64::consts::PI * v).sin();
                        row[k + 1] = (freq * std::f64::consts::PI * v).cos();
                        k += 2;
                    }
                }
            }
        }
        m
    }

    /// Inventory bucket features: per item a one-hot over counts 0..=5,
    /// counts above five sharing the last bucket.
    pub fn encode_inventory(&self) -> Vec<f64> {
        let mut v = vec![0.0; INVENTORY_FEATURES];
        for (i, item) in Item::ALL.iter().enumerate() {
            let c = (self.item_count(*item) as usize).min(5);
            v[i * 6 + c] = 1.0;
        }
        v
    }

    /// ASCII rendering, one row per line, agent drawn as `A`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for y in 0..self.n {
            for x in 0..self.n {
                let ch = if self.agent == (x as u8, y as u8) {
                    'A'
                } else {
                    match self.cell(x as u8, y as u8) {
                        Cell::Empty => '.',
                        Cell::Item(Item::Gold) => 'g',
                        Cell::Item(Item::Wood) => 'w',
                        Cell::Item(Item::Iron) => 'i',
                        Cell::Item(Item::Triangle) => 't',
                        Cell::Item(Item::Circle) => 'c',
                        Cell::Item(Item::Rectangle) => 'r',
                        Cell::River => '~',
                        Cell::Bridge => '=',
                        Cell::Wall => '#',
                        Cell::Merchant => 'M',
                    }
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }
}

/// Layout parameters for generated worlds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Grid side length.
    pub n: usize,
    pub merchants: usize,
    /// Carve one straight river across the grid.
    pub river: bool,
    pub walls: usize,
    /// Items scattered on the ground.
    pub items: BTreeMap<Item, usize>,
    /// Items the agent starts with.
    pub initial_inventory: BTreeMap<Item, u32>,
}

impl EnvConfig {
    pub fn small() -> EnvConfig {
        let mut items = BTreeMap::new();
        items.insert(Item::Gold, 2);
        items.insert(Item::Wood, 2);
        items.insert(Item::Iron, 1);
        EnvConfig {
            n: 5,
            merchants: 2,
            river: false,
            walls: 1,
            items,
            initial_inventory: BTreeMap::new(),
        }
    }
}

/// Generate a world from the layout parameters. All randomness comes
/// from `rng`; a fixed seed reproduces the same world.
pub fn generate(cfg: &EnvConfig, rng: &mut ChaCha8Rng) -> GridWorld {
    let n = cfg.n;
    let mut w = GridWorld::empty(n);
    if cfg.river {
        let vertical = rng.gen_bool(0.5);
        let c = rng.gen_range(1..n - 1) as u8;
        for k in 0..n as u8 {
            if vertical {
                w.set_cell(c, k, Cell::River);
            } else {
                w.set_cell(k, c, Cell::River);
            }
        }
    }
    let place_on_empty = |w: &mut GridWorld, rng: &mut ChaCha8Rng, cell: Cell| -> bool {
        let empties: Vec<(u8, u8)> = (0..n * n)
            .filter(|&i| w.cells[i] == Cell::Empty)
            .map(|i| ((i % n) as u8, (i / n) as u8))
            .collect();
        if empties.is_empty() {
            return false;
        }
        let (x, y) = empties[rng.gen_range(0..empties.len())];
        w.set_cell(x, y, cell);
        true
    };
    for _ in 0..cfg.walls {
        place_on_empty(&mut w, rng, Cell::Wall);
    }
    for (item, count) in &cfg.items {
        for _ in 0..*count {
            place_on_empty(&mut w, rng, Cell::Item(*item));
        }
    }
    for _ in 0..cfg.merchants {
        place_on_empty(&mut w, rng, Cell::Merchant);
    }
    let open: Vec<(u8, u8)> = (0..n * n)
        .filter(|&i| w.cells[i].passable())
        .map(|i| ((i % n) as u8, (i / n) as u8))
        .collect();
    w.agent = open[rng.gen_range(0..open.len())];
    w.inventory = cfg.initial_inventory.clone();
    w
}

/// How far the true execution of a program has progressed, judged from
/// the real environment state. Control routines advance on their true
/// condition values, action routines on their ending conditions. A +1
/// reward is due exactly when the monitor completes.
#[derive(Debug, Clone)]
pub struct ProgramMonitor {
    flow: FlowTargets,
    state: PointerState,
    /// Set when the pointer cycles through control routines without any
    /// possible environment step in between; the program diverges.
    stuck: bool,
}

impl ProgramMonitor {
    pub fn new(program: &Program, env: &GridWorld) -> ProgramMonitor {
        let mut m = ProgramMonitor {
            flow: FlowTargets::compute(program),
            state: PointerState::start(),
            stuck: false,
        };
        m.chase(program, env);
        m
    }

    /// Position of the action routine the monitor is waiting on.
    pub fn current(&self) -> Option<usize> {
        self.state.position()
    }

    pub fn completed(&self) -> bool {
        self.state.done() && !self.stuck
    }

    pub fn failed(&self) -> bool {
        self.stuck
    }

    /// Feed one environment step. `env` is the state after the step.
    pub fn observe(&mut self, program: &Program, env: &GridWorld, feedback: &EnvFeedback) {
        if self.state.done() || self.stuck {
            return;
        }
        let pos = self.state.position().unwrap();
        let kind = &program.routine(pos).kind;
        if env.ending_met(kind, feedback) {
            self.state.advance_action(&self.flow, pos, true, true);
            self.chase(program, env);
        }
    }

    /// Advance through control routines and pre-satisfied `Goto`s until
    /// an environment step is required or the program ends. The state
    /// cannot change during the chase, so visiting more positions than
    /// the program has means an infinite control loop.
    fn chase(&mut self, program: &Program, env: &GridWorld) {
        let mut budget = 2 * program.len() + 4;
        while let Some(pos) = self.state.position() {
            let kind = &program.routine(pos).kind;
            match self.flow.kind(pos) {
                FlowKind::Branch { .. } | FlowKind::Loop { .. } => {
                    let cond = match kind {
                        RoutineKind::If { cond }
                        | RoutineKind::IfElse { cond }
                        | RoutineKind::While { cond } => cond,
                        other => panic!("control flow on {other:?}"),
                    };
                    let truth = env.eval_condition(cond);
                    self.state.advance_branch(&self.flow, pos, truth);
                }
                FlowKind::Action { .. } => {
                    if env.pre_satisfied(kind) {
                        self.state.advance_action(&self.flow, pos, true, false);
                    } else {
                        return;
                    }
                }
                FlowKind::Marker => unreachable!("pointer on marker at {pos}"),
            }
            if budget == 0 {
                self.stuck = true;
                return;
            }
            budget -= 1;
        }
    }
}
