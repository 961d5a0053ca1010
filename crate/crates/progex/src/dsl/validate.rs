//! Static program checks beyond grammar: vocabulary coverage, token
//! budget, parent topology and arity, sink uniqueness, type agreement.

use super::*;
use crate::scene::vocab as sv;

/// Tokens one routine may occupy in the semantic matrix.
pub const TOKEN_BUDGET: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// 1-based program position, 0 for whole-program findings.
    pub position: usize,
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    fn error(position: usize, message: impl Into<String>) -> Diagnostic {
        Diagnostic {
            position,
            severity: Severity::Error,
            message: message.into(),
        }
    }

    fn warning(position: usize, message: impl Into<String>) -> Diagnostic {
        Diagnostic {
            position,
            severity: Severity::Warning,
            message: message.into(),
        }
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

pub fn validate_program(program: &Program) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    if program.routines.is_empty() {
        diags.push(Diagnostic::error(0, "program has no routines"));
        return diags;
    }
    for (k, r) in program.routines.iter().enumerate() {
        if r.index != k + 1 {
            diags.push(Diagnostic::error(
                k + 1,
                format!("routine index {} does not match position {}", r.index, k + 1),
            ));
        }
    }

    let vocab = Vocabulary::for_dialect(program.dialect);
    for r in &program.routines {
        if r.kind.is_marker() {
            continue;
        }
        match vocab.routine_token_ids(r, TOKEN_BUDGET) {
            Ok(_) => {}
            Err(DslError::TokenBudget { found, budget, .. }) => {
                diags.push(Diagnostic::error(
                    r.index,
                    format!("routine has {found} tokens, budget is {budget}"),
                ));
            }
            Err(DslError::UnknownToken(t)) => {
                diags.push(Diagnostic::error(
                    r.index,
                    format!("token {t:?} is not in the {} vocabulary", program.dialect),
                ));
            }
            Err(e) => diags.push(Diagnostic::error(r.index, e.to_string())),
        }
    }

    match program.dialect {
        Dialect::Policy => validate_policy(program, &mut diags),
        Dialect::Reasoning => validate_reasoning(program, &mut diags),
    }
    diags
}

fn validate_policy(program: &Program, diags: &mut Vec<Diagnostic>) {
    for r in &program.routines {
        if !r.parents.is_empty() {
            diags.push(Diagnostic::error(
                r.index,
                "policy routines must not declare parents",
            ));
        }
        let policy_kind = matches!(
            r.kind,
            RoutineKind::Mine { .. }
                | RoutineKind::BuildBridge
                | RoutineKind::Goto { .. }
                | RoutineKind::Place { .. }
                | RoutineKind::Sell { .. }
                | RoutineKind::If { .. }
                | RoutineKind::IfElse { .. }
                | RoutineKind::While { .. }
                | RoutineKind::LoopEnd
        );
        if !policy_kind {
            diags.push(Diagnostic::error(
                r.index,
                "reasoning routine in a policy program",
            ));
        }
        if let RoutineKind::While { cond } = &r.kind {
            if trivially_true(cond) {
                diags.push(Diagnostic::warning(
                    r.index,
                    format!(
                        "loop condition {} can never become false",
                        super::print::format_cond(cond)
                    ),
                ));
            }
        }
    }
    if program.body.is_empty() {
        diags.push(Diagnostic::error(0, "policy program has no statement tree"));
    }
}

/// Conditions whose truth no action can change to false.
fn trivially_true(cond: &Condition) -> bool {
    match cond.op {
        CmpOp::Ge => cond.number == 0 && cond.subject == CondSubject::Agent,
        _ => false,
    }
}

fn validate_reasoning(program: &Program, diags: &mut Vec<Diagnostic>) {
    let n = program.routines.len();
    let mut is_parent = vec![false; n + 1];
    for r in &program.routines {
        let policy_kind = matches!(
            r.kind,
            RoutineKind::Mine { .. }
                | RoutineKind::BuildBridge
                | RoutineKind::Goto { .. }
                | RoutineKind::Place { .. }
                | RoutineKind::Sell { .. }
                | RoutineKind::If { .. }
                | RoutineKind::IfElse { .. }
                | RoutineKind::While { .. }
                | RoutineKind::LoopEnd
        );
        if policy_kind {
            diags.push(Diagnostic::error(
                r.index,
                "policy routine in a reasoning program",
            ));
            continue;
        }
        let arity = r.kind.parent_arity();
        if r.parents.len() != arity {
            diags.push(Diagnostic::error(
                r.index,
                format!("expected {arity} parent(s), found {}", r.parents.len()),
            ));
        }
        for &p in &r.parents {
            if p == 0 || p > n {
                diags.push(Diagnostic::error(
                    r.index,
                    format!("parent {p} is outside 1..={n}"),
                ));
                continue;
            }
            if p >= r.index {
                diags.push(Diagnostic::error(
                    r.index,
                    format!("parent {p} does not precede routine {}", r.index),
                ));
                continue;
            }
            is_parent[p] = true;
            if let Some(want) = r.kind.parent_input_type() {
                let got = program.routine(p).kind.output_type();
                if got != Some(want) {
                    diags.push(Diagnostic::error(
                        r.index,
                        format!(
                            "parent {p} produces {got:?}, routine {} consumes {want:?}",
                            r.index
                        ),
                    ));
                }
            }
        }
        check_reasoning_words(r, diags);
    }

    let sinks: Vec<usize> = (1..=n).filter(|&i| !is_parent[i]).collect();
    if sinks != vec![n] {
        diags.push(Diagnostic::error(
            0,
            format!("expected the last routine to be the only sink, sinks are {sinks:?}"),
        ));
    }
    if n > 0 && !matches!(program.routines[0].kind, RoutineKind::Select { .. }) {
        diags.push(Diagnostic::error(1, "a reasoning program starts with Select"));
    }
}

/// Argument words must belong to the category they are used with;
/// vocabulary coverage alone would accept a color word as a material.
fn check_reasoning_words(r: &Routine, diags: &mut Vec<Diagnostic>) {
    use RoutineKind::*;
    let mut check = |cat: AttrCat, word: &str| {
        if !sv::values_of(cat).contains(&word) {
            diags.push(Diagnostic::error(
                r.index,
                format!("{word:?} is not a {} word", cat.word()),
            ));
        }
    };
    match &r.kind {
        Select { name } => check(AttrCat::Name, name),
        Filter { cat, value } | Verify { cat, value } => check(*cat, value),
        Choose { cat, a, b } => {
            check(*cat, a);
            check(*cat, b);
        }
        VerifyRelation { relation } | Relate { relation } | InverseRelate { relation } => {
            if !sv::RELATIONS.contains(&relation.as_str()) {
                diags.push(Diagnostic::error(
                    r.index,
                    format!("{relation:?} is not a relation word"),
                ));
            }
        }
        _ => {}
    }
}
