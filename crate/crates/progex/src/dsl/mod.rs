//! Program representation for both DSL dialects.
//!
//! The policy dialect drives a gridworld agent: action routines plus
//! `If`/`While` control flow with bracketed conditions over the agent
//! inventory and the environment. The reasoning dialect is a DAG of
//! query routines over a scene graph, with explicit parent lists.
//!
//! A parsed [`Program`] keeps two synchronized views: the nested
//! statement tree (policy only, used by the symbolic interpreter) and a
//! flat, 1-based routine list (used by guidance matrices and the pointer
//! machine). `While` bodies are closed by an explicit [`RoutineKind::LoopEnd`]
//! marker routine that occupies a program position but is excluded from
//! guidance matrices and never executes a step itself.

mod parse;
mod print;
mod validate;

pub use parse::parse_program;
pub use print::format_program;
pub use validate::{has_errors, validate_program, Diagnostic, Severity, TOKEN_BUDGET};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DslError {
    #[error("{line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("unknown token {0:?} for this dialect's vocabulary")]
    UnknownToken(String),
    #[error("routine at position {position} has {found} tokens, budget is {budget}")]
    TokenBudget {
        position: usize,
        found: usize,
        budget: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dialect {
    Policy,
    Reasoning,
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dialect::Policy => write!(f, "policy"),
            Dialect::Reasoning => write!(f, "reasoning"),
        }
    }
}

/// Items an agent can mine, hold and sell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Item {
    Gold,
    Wood,
    Iron,
    Triangle,
    Circle,
    Rectangle,
}

impl Item {
    pub const ALL: [Item; 6] = [
        Item::Gold,
        Item::Wood,
        Item::Iron,
        Item::Triangle,
        Item::Circle,
        Item::Rectangle,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Item::Gold => "gold",
            Item::Wood => "wood",
            Item::Iron => "iron",
            Item::Triangle => "triangle",
            Item::Circle => "circle",
            Item::Rectangle => "rectangle",
        }
    }

    pub fn from_word(w: &str) -> Option<Item> {
        Item::ALL.into_iter().find(|i| i.word() == w)
    }
}

/// Placeable shapes (the subset of items the `Place` routine accepts).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Triangle,
    Circle,
    Rectangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Triangle, Shape::Circle, Shape::Rectangle];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Triangle => "triangle",
            Shape::Circle => "circle",
            Shape::Rectangle => "rectangle",
        }
    }

    pub fn from_word(w: &str) -> Option<Shape> {
        Shape::ALL.into_iter().find(|s| s.word() == w)
    }

    pub fn item(self) -> Item {
        match self {
            Shape::Triangle => Item::Triangle,
            Shape::Circle => Item::Circle,
            Shape::Rectangle => Item::Rectangle,
        }
    }
}

/// Things a condition may count: inventory or grid contents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CondItem {
    Gold,
    Wood,
    Iron,
    Bridge,
    River,
    Merchant,
    Wall,
    Flat,
}

impl CondItem {
    pub const ALL: [CondItem; 8] = [
        CondItem::Gold,
        CondItem::Wood,
        CondItem::Iron,
        CondItem::Bridge,
        CondItem::River,
        CondItem::Merchant,
        CondItem::Wall,
        CondItem::Flat,
    ];

    pub fn word(self) -> &'static str {
        match self {
            CondItem::Gold => "gold",
            CondItem::Wood => "wood",
            CondItem::Iron => "iron",
            CondItem::Bridge => "bridge",
            CondItem::River => "river",
            CondItem::Merchant => "merchant",
            CondItem::Wall => "wall",
            CondItem::Flat => "flat",
        }
    }

    pub fn from_word(w: &str) -> Option<CondItem> {
        CondItem::ALL.into_iter().find(|i| i.word() == w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    Gt,
    Ge,
    Eq,
    Lt,
    Le,
}

impl CmpOp {
    pub fn word(self) -> &'static str {
        match self {
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
        }
    }

    pub fn eval(self, lhs: i64, rhs: i64) -> bool {
        match self {
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Eq => lhs == rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CondSubject {
    Agent,
    Env,
    IsThere,
}

/// `agent[item] op n`, `env[item] op n`, or the sugar `is_there[item]`
/// (equivalent to `env[item] > 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub subject: CondSubject,
    pub item: CondItem,
    pub op: CmpOp,
    pub number: u8,
}

impl Condition {
    pub fn is_there(item: CondItem) -> Condition {
        Condition {
            subject: CondSubject::IsThere,
            item,
            op: CmpOp::Gt,
            number: 0,
        }
    }
}

/// Attribute categories of the reasoning dialect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttrCat {
    Name,
    Color,
    Material,
    Shape,
    Scene,
    Activity,
    Position,
}

impl AttrCat {
    pub fn word(self) -> &'static str {
        match self {
            AttrCat::Name => "name",
            AttrCat::Color => "color",
            AttrCat::Material => "material",
            AttrCat::Shape => "shape",
            AttrCat::Scene => "scene",
            AttrCat::Activity => "activity",
            AttrCat::Position => "position",
        }
    }

    pub fn from_word(w: &str) -> Option<AttrCat> {
        [
            AttrCat::Name,
            AttrCat::Color,
            AttrCat::Material,
            AttrCat::Shape,
            AttrCat::Scene,
            AttrCat::Activity,
            AttrCat::Position,
        ]
        .into_iter()
        .find(|c| c.word() == w)
    }
}

/// What a routine produces each execution step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputType {
    /// Two-way truth value.
    Boolean,
    /// One of the eight environment actions.
    Action,
    /// Per-object membership probabilities.
    Objects,
    /// One token from the answer vocabulary.
    Answer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RoutineKind {
    // Policy dialect.
    Mine { item: Item },
    BuildBridge,
    Goto { x: u8, y: u8 },
    Place { shape: Shape, x: u8, y: u8 },
    Sell { item: Item },
    If { cond: Condition },
    IfElse { cond: Condition },
    While { cond: Condition },
    /// Marker closing a `While` body. Occupies a position, never runs.
    LoopEnd,

    // Reasoning dialect.
    Select { name: String },
    Filter { cat: AttrCat, value: String },
    Choose { cat: AttrCat, a: String, b: String },
    Verify { cat: AttrCat, value: String },
    VerifyRelation { relation: String },
    Relate { relation: String },
    InverseRelate { relation: String },
    Query { cat: AttrCat },
    Common { cat: AttrCat },
    Different { cat: AttrCat },
    Same { cat: AttrCat },
    And,
    Or,
    Exist,
}

impl RoutineKind {
    /// The output type, or `None` for the loop-end marker.
    pub fn output_type(&self) -> Option<OutputType> {
        use RoutineKind::*;
        Some(match self {
            Mine { .. } | BuildBridge | Goto { .. } | Place { .. } | Sell { .. } => {
                OutputType::Action
            }
            If { .. } | IfElse { .. } | While { .. } => OutputType::Boolean,
            LoopEnd => return None,
            Select { .. } | Filter { .. } | Relate { .. } | InverseRelate { .. } => {
                OutputType::Objects
            }
            Verify { .. } | VerifyRelation { .. } | Different { .. } | Same { .. } | And | Or
            | Exist => OutputType::Boolean,
            Choose { .. } | Query { .. } | Common { .. } => OutputType::Answer,
        })
    }

    /// How many parent inputs a reasoning routine consumes.
    pub fn parent_arity(&self) -> usize {
        use RoutineKind::*;
        match self {
            Select { .. } => 0,
            Filter { .. } | Choose { .. } | Verify { .. } | Relate { .. }
            | InverseRelate { .. } | Query { .. } | Exist => 1,
            VerifyRelation { .. } | Common { .. } | Different { .. } | Same { .. } | And | Or => 2,
            _ => 0,
        }
    }

    /// Output type each parent must provide (reasoning dialect).
    pub fn parent_input_type(&self) -> Option<OutputType> {
        use RoutineKind::*;
        match self {
            And | Or => Some(OutputType::Boolean),
            Filter { .. } | Choose { .. } | Verify { .. } | VerifyRelation { .. }
            | Relate { .. } | InverseRelate { .. } | Query { .. } | Common { .. }
            | Different { .. } | Same { .. } | Exist => Some(OutputType::Objects),
            _ => None,
        }
    }

    pub fn is_control(&self) -> bool {
        matches!(
            self,
            RoutineKind::If { .. } | RoutineKind::IfElse { .. } | RoutineKind::While { .. }
        )
    }

    pub fn is_marker(&self) -> bool {
        matches!(self, RoutineKind::LoopEnd)
    }

    /// Token sequence embedded by the semantic matrix: the kind word
    /// followed by argument words. Parent indices are deliberately not
    /// tokens; structure travels through the transition mask instead.
    pub fn tokens(&self) -> Vec<String> {
        use RoutineKind::*;
        let s = |x: &str| x.to_string();
        match self {
            Mine { item } => vec![s("Mine"), s(item.word())],
            BuildBridge => vec![s("BuildBridge")],
            Goto { x, y } => vec![s("Goto"), x.to_string(), y.to_string()],
            Place { shape, x, y } => {
                vec![s("Place"), s(shape.word()), x.to_string(), y.to_string()]
            }
            Sell { item } => vec![s("Sell"), s(item.word())],
            If { cond } | IfElse { cond } => cond_tokens("If", cond),
            While { cond } => cond_tokens("While", cond),
            LoopEnd => vec![s("EndLoop")],
            Select { name } => vec![s("Select"), s(name)],
            Filter { cat, value } => vec![format!("Filter_{}", cat.word()), s(value)],
            Choose { cat, a, b } => vec![format!("Choose_{}", cat.word()), s(a), s(b)],
            Verify { cat, value } => vec![format!("Verify_{}", cat.word()), s(value)],
            VerifyRelation { relation } => vec![s("Verify_relation"), s(relation)],
            Relate { relation } => vec![s("Relate"), s(relation)],
            InverseRelate { relation } => vec![s("InverseRelate"), s(relation)],
            Query { cat } => vec![format!("Query_{}", cat.word())],
            Common { cat } => vec![format!("Common_{}", cat.word())],
            Different { cat } => vec![format!("Different_{}", cat.word())],
            Same { cat } => vec![format!("Same_{}", cat.word())],
            And => vec![s("And")],
            Or => vec![s("Or")],
            Exist => vec![s("Exist")],
        }
    }
}

fn cond_tokens(kw: &str, cond: &Condition) -> Vec<String> {
    match cond.subject {
        CondSubject::IsThere => vec![
            kw.to_string(),
            "is_there".to_string(),
            cond.item.word().to_string(),
        ],
        CondSubject::Agent | CondSubject::Env => vec![
            kw.to_string(),
            if cond.subject == CondSubject::Agent {
                "agent".to_string()
            } else {
                "env".to_string()
            },
            cond.item.word().to_string(),
            cond.op.word().to_string(),
            cond.number.to_string(),
        ],
    }
}

/// One routine at a fixed 1-based program position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Routine {
    pub index: usize,
    pub kind: RoutineKind,
    /// Parent positions (reasoning dialect; empty for policy, where the
    /// parent is the previously executed routine at run time).
    pub parents: Vec<usize>,
}

impl Routine {
    pub fn tokens(&self) -> Vec<String> {
        self.kind.tokens()
    }
}

/// Nested statement view of a policy program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Stmt {
    Act {
        index: usize,
        kind: RoutineKind,
    },
    If {
        index: usize,
        cond: Condition,
        then_body: Vec<Stmt>,
        else_body: Vec<Stmt>,
        has_else: bool,
    },
    While {
        index: usize,
        cond: Condition,
        body: Vec<Stmt>,
        /// Position of the matching loop-end marker.
        end_index: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Program {
    pub dialect: Dialect,
    /// Flat routine list; `routines[k].index == k + 1`.
    pub routines: Vec<Routine>,
    /// Statement tree (policy dialect; empty for reasoning).
    pub body: Vec<Stmt>,
}

impl Program {
    /// Total number of program positions, markers included.
    pub fn len(&self) -> usize {
        self.routines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routines.is_empty()
    }

    pub fn routine(&self, position: usize) -> &Routine {
        assert!(
            position >= 1 && position <= self.routines.len(),
            "position {position} out of range 1..={}",
            self.routines.len()
        );
        &self.routines[position - 1]
    }

    /// Positions of executable (non-marker) routines, in program order.
    pub fn exec_positions(&self) -> Vec<usize> {
        self.routines
            .iter()
            .filter(|r| !r.kind.is_marker())
            .map(|r| r.index)
            .collect()
    }

    /// Guidance-matrix row of a position, `None` for markers.
    pub fn exec_row(&self, position: usize) -> Option<usize> {
        if self.routine(position).kind.is_marker() {
            return None;
        }
        Some(
            self.routines[..position - 1]
                .iter()
                .filter(|r| !r.kind.is_marker())
                .count(),
        )
    }

    /// Number of guidance rows (executable routines).
    pub fn n_exec(&self) -> usize {
        self.routines.iter().filter(|r| !r.kind.is_marker()).count()
    }

    /// Sum of routine token counts over executable routines.
    pub fn token_count(&self) -> usize {
        self.routines
            .iter()
            .filter(|r| !r.kind.is_marker())
            .map(|r| r.tokens().len())
            .sum()
    }

    /// Number of `If`/`While` routines.
    pub fn control_count(&self) -> usize {
        self.routines.iter().filter(|r| r.kind.is_control()).count()
    }
}

/// Token-to-id mapping shared by a dialect's programs. Id 0 is padding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub dialect: Dialect,
    pub tokens: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

pub const PAD_TOKEN: &str = "<pad>";

impl Vocabulary {
    fn from_tokens(dialect: Dialect, mut tokens: Vec<String>) -> Vocabulary {
        let mut seen = std::collections::BTreeSet::new();
        tokens.retain(|t| seen.insert(t.clone()));
        let mut all = vec![PAD_TOKEN.to_string()];
        all.extend(tokens);
        let index = all
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            dialect,
            tokens: all,
            index,
        }
    }

    /// Rebuild the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn policy() -> Vocabulary {
        let mut t: Vec<String> = vec![
            "Mine",
            "BuildBridge",
            "Goto",
            "Place",
            "Sell",
            "If",
            "While",
            "EndLoop",
            "agent",
            "env",
            "is_there",
        ]
        .into_iter()
        .map(String::from)
        .collect();
        for i in Item::ALL {
            t.push(i.word().into());
        }
        for c in CondItem::ALL {
            t.push(c.word().into());
        }
        for op in [CmpOp::Gt, CmpOp::Ge, CmpOp::Eq, CmpOp::Lt, CmpOp::Le] {
            t.push(op.word().into());
        }
        for n in 0..10 {
            t.push(n.to_string());
        }
        Vocabulary::from_tokens(Dialect::Policy, t)
    }

    pub fn reasoning() -> Vocabulary {
        use crate::scene::vocab as sv;
        let mut t: Vec<String> = Vec::new();
        t.push("Select".into());
        for cat in ["color", "material", "shape", "activity", "position"] {
            t.push(format!("Filter_{cat}"));
        }
        for cat in ["name", "scene", "color", "shape", "position"] {
            t.push(format!("Choose_{cat}"));
        }
        for cat in ["color", "shape", "scene"] {
            t.push(format!("Verify_{cat}"));
        }
        t.push("Verify_relation".into());
        t.push("Relate".into());
        t.push("InverseRelate".into());
        for cat in ["name", "color", "shape", "scene", "position"] {
            t.push(format!("Query_{cat}"));
        }
        for cat in ["color", "material"] {
            t.push(format!("Common_{cat}"));
        }
        for cat in ["name", "color", "material"] {
            t.push(format!("Different_{cat}"));
        }
        for cat in ["name", "color"] {
            t.push(format!("Same_{cat}"));
        }
        t.push("And".into());
        t.push("Or".into());
        t.push("Exist".into());
        for w in sv::all_words() {
            t.push(w.to_string());
        }
        Vocabulary::from_tokens(Dialect::Reasoning, t)
    }

    pub fn for_dialect(dialect: Dialect) -> Vocabulary {
        match dialect {
            Dialect::Policy => Vocabulary::policy(),
            Dialect::Reasoning => Vocabulary::reasoning(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    /// Ids of a routine's tokens padded to `budget` with the pad id 0.
    pub fn routine_token_ids(
        &self,
        routine: &Routine,
        budget: usize,
    ) -> Result<Vec<usize>, DslError> {
        let words = routine.tokens();
        if words.len() > budget {
            return Err(DslError::TokenBudget {
                position: routine.index,
                found: words.len(),
                budget,
            });
        }
        let mut ids = Vec::with_capacity(budget);
        for w in &words {
            ids.push(self.id(w).ok_or_else(|| DslError::UnknownToken(w.clone()))?);
        }
        ids.resize(budget, 0);
        Ok(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabularies_have_pad_at_zero_and_unique_tokens() {
        for vocab in [Vocabulary::policy(), Vocabulary::reasoning()] {
            assert_eq!(vocab.token(0), Some(PAD_TOKEN));
            let mut set = std::collections::BTreeSet::new();
            for t in &vocab.tokens {
                assert!(set.insert(t.clone()), "duplicate token {t}");
            }
            for (i, t) in vocab.tokens.iter().enumerate() {
                assert_eq!(vocab.id(t), Some(i));
            }
        }
    }

    #[test]
    fn vocabulary_json_round_trip() {
        let vocab = Vocabulary::policy();
        let json = serde_json::to_string(&vocab).unwrap();
        let mut back: Vocabulary = serde_json::from_str(&json).unwrap();
        back.reindex();
        assert_eq!(back.tokens, vocab.tokens);
        assert_eq!(back.id("Mine"), vocab.id("Mine"));
    }

    #[test]
    fn routine_tokens_fit_default_budget() {
        let r = Routine {
            index: 1,
            kind: RoutineKind::If {
                cond: Condition {
                    subject: CondSubject::Agent,
                    item: CondItem::Gold,
                    op: CmpOp::Ge,
                    number: 2,
                },
            },
            parents: vec![],
        };
        let vocab = Vocabulary::policy();
        let ids = vocab.routine_token_ids(&r, 8).unwrap();
        assert_eq!(ids.len(), 8);
        assert_eq!(vocab.token(ids[0]), Some("If"));
        assert_eq!(vocab.token(ids[4]), Some("2"));
        assert_eq!(ids[5], 0);
    }
}
