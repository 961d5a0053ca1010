//! Control flow over program positions: static successor targets and the
//! pointer state the executor and the symbolic planner both drive.
//!
//! Successors are precomputed from the statement tree once per program.
//! Loop-end markers are resolved away at this stage: the last statement
//! of a `While` body falls through directly to the `While` position, so
//! a marker is never the target of any move and never executes.

use serde::{Deserialize, Serialize};

use crate::dsl::{Program, Stmt};

/// Where the pointer can go: a 1-based program position or past the end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Position(usize),
    End,
}

/// Per-position successor structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FlowKind {
    /// Non-control routine: one fall-through taken when it finishes.
    Action { next: Target },
    /// `If` / `IfElse`: branch on the decoded truth value.
    Branch { on_true: usize, on_false: Target },
    /// `While`: enter the body on true, leave on false.
    Loop { body: usize, exit: Target },
    /// Loop-end marker. Never targeted, never executed.
    Marker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTargets {
    kinds: Vec<FlowKind>,
}

impl FlowTargets {
    pub fn compute(program: &Program) -> FlowTargets {
        let mut kinds = vec![FlowKind::Marker; program.len()];
        match program.dialect {
            crate::dsl::Dialect::Policy => {
                walk(&program.body, Target::End, &mut kinds);
            }
            crate::dsl::Dialect::Reasoning => {
                // Reasoning programs run positions in order; control never
                // branches. The wave schedule below handles parallelism.
                for r in &program.routines {
                    let next = if r.index == program.len() {
                        Target::End
                    } else {
                        Target::Position(r.index + 1)
                    };
                    kinds[r.index - 1] = FlowKind::Action { next };
                }
            }
        }
        FlowTargets { kinds }
    }

    pub fn kind(&self, position: usize) -> &FlowKind {
        &self.kinds[position - 1]
    }
}

fn walk(stmts: &[Stmt], cont: Target, kinds: &mut Vec<FlowKind>) {
    for (i, stmt) in stmts.iter().enumerate() {
        let after = match stmts.get(i + 1) {
            Some(next) => Target::Position(stmt_entry(next)),
            None => cont,
        };
        match stmt {
            Stmt::Act { index, .. } => {
                kinds[index - 1] = FlowKind::Action { next: after };
            }
            Stmt::If {
                index,
                then_body,
                else_body,
                has_else,
                ..
            } => {
                let on_true = stmt_entry(&then_body[0]);
                let on_false = if *has_else {
                    Target::Position(stmt_entry(&else_body[0]))
                } else {
                    after
                };
                kinds[index - 1] = FlowKind::Branch { on_true, on_false };
                walk(then_body, after, kinds);
                if *has_else {
                    walk(else_body, after, kinds);
                }
            }
            Stmt::While { index, body, .. } => {
                kinds[index - 1] = FlowKind::Loop {
                    body: stmt_entry(&body[0]),
                    exit: after,
                };
                // The body's last statement loops back to the condition.
                walk(body, Target::Position(*index), kinds);
            }
        }
    }
}

fn stmt_entry(stmt: &Stmt) -> usize {
    match stmt {
        Stmt::Act { index, .. } | Stmt::If { index, .. } | Stmt::While { index, .. } => *index,
    }
}

/// Pointer over one program during sequential execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointerState {
    pub pointer: Target,
    /// Last position that produced a result; the run-time parent of the
    /// next step in the policy dialect.
    pub prev_executed: Option<usize>,
}

impl PointerState {
    pub fn start() -> PointerState {
        PointerState {
            pointer: Target::Position(1),
            prev_executed: None,
        }
    }

    pub fn position(&self) -> Option<usize> {
        match self.pointer {
            Target::Position(p) => Some(p),
            Target::End => None,
        }
    }

    pub fn done(&self) -> bool {
        self.pointer == Target::End
    }

    /// Move past a non-control routine. `finished` is its ending
    /// condition; an unfinished routine keeps the pointer in place and
    /// runs again next step. `record` is false for zero-step skips,
    /// which consume no inference step and therefore leave the
    /// previously executed routine unchanged.
    pub fn advance_action(&mut self, flow: &FlowTargets, position: usize, finished: bool, record: bool) {
        debug_assert_eq!(self.pointer, Target::Position(position));
        if record {
            self.prev_executed = Some(position);
        }
        if !finished {
            return;
        }
        match flow.kind(position) {
            FlowKind::Action { next } => self.pointer = *next,
            other => panic!("advance_action on {other:?} at {position}"),
        }
    }

    /// Move past a control routine given its decoded truth value.
    pub fn advance_branch(&mut self, flow: &FlowTargets, position: usize, truth: bool) {
        debug_assert_eq!(self.pointer, Target::Position(position));
        self.prev_executed = Some(position);
        self.pointer = match flow.kind(position) {
            FlowKind::Branch { on_true, on_false } => {
                if truth {
                    Target::Position(*on_true)
                } else {
                    *on_false
                }
            }
            FlowKind::Loop { body, exit } => {
                if truth {
                    Target::Position(*body)
                } else {
                    *exit
                }
            }
            other => panic!("advance_branch on {other:?} at {position}"),
        };
    }
}

/// Wave schedule for reasoning programs: wave `k` holds the positions
/// whose parents all sit in earlier waves. Executing wave by wave runs
/// independent routines in the same inference step; the number of waves
/// is the length of the longest dependency chain.
pub fn parallel_waves(program: &Program) -> Vec<Vec<usize>> {
    let n = program.len();
    let mut level = vec![0usize; n + 1];
    let mut max_level = 0;
    for r in &program.routines {
        let l = r
            .parents
            .iter()
            .map(|&p| level[p] + 1)
            .max()
            .unwrap_or(0);
        level[r.index] = l;
        max_level = max_level.max(l);
    }
    let mut waves = vec![Vec::new(); max_level + 1];
    for r in &program.routines {
        waves[level[r.index]].push(r.index);
    }
    waves
}

/// Singleton waves in position order: the sequential schedule.
pub fn sequential_waves(program: &Program) -> Vec<Vec<usize>> {
    program.routines.iter().map(|r| vec![r.index]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_program, Dialect};

    fn flow_of(src: &str) -> (Program, FlowTargets) {
        let p = parse_program(src, Dialect::Policy).unwrap();
        let f = FlowTargets::compute(&p);
        (p, f)
    }

    #[test]
    fn straight_line_chains_to_end() {
        let (_, f) = flow_of("Mine(gold); Sell(gold); BuildBridge();");
        assert_eq!(f.kind(1), &FlowKind::Action { next: Target::Position(2) });
        assert_eq!(f.kind(2), &FlowKind::Action { next: Target::Position(3) });
        assert_eq!(f.kind(3), &FlowKind::Action { next: Target::End });
    }

    #[test]
    fn while_body_loops_back_and_marker_is_never_a_target() {
        let (p, f) = flow_of("While(env[gold]>0){ Mine(gold); Sell(gold); } BuildBridge();");
        // Positions: 1 While, 2 Mine, 3 Sell, 4 marker, 5 BuildBridge.
        assert_eq!(f.kind(1), &FlowKind::Loop { body: 2, exit: Target::Position(5) });
        assert_eq!(f.kind(3), &FlowKind::Action { next: Target::Position(1) });
        assert_eq!(f.kind(4), &FlowKind::Marker);
        for pos in 1..=p.len() {
            let targets: Vec<Target> = match f.kind(pos) {
                FlowKind::Action { next } => vec![*next],
                FlowKind::Branch { on_true, on_false } => {
                    vec![Target::Position(*on_true), *on_false]
                }
                FlowKind::Loop { body, exit } => vec![Target::Position(*body), *exit],
                FlowKind::Marker => vec![],
            };
            for t in targets {
                if let Target::Position(q) = t {
                    assert!(
                        !p.routine(q).kind.is_marker(),
                        "position {pos} targets marker {q}"
                    );
                }
            }
        }
    }

    #[test]
    fn branch_targets_rejoin_after_else() {
        let (_, f) = flow_of(
            "If(agent[gold]>=1){ Sell(gold); }Else{ Mine(gold); } Goto(2,2);",
        );
        // Positions: 1 IfElse, 2 Sell, 3 Mine, 4 Goto.
        assert_eq!(f.kind(1), &FlowKind::Branch { on_true: 2, on_false: Target::Position(3) });
        assert_eq!(f.kind(2), &FlowKind::Action { next: Target::Position(4) });
        assert_eq!(f.kind(3), &FlowKind::Action { next: Target::Position(4) });
    }

    #[test]
    fn nested_loop_if_falls_back_to_loop_head() {
        let (_, f) = flow_of(
            "While(agent[gold]<2){ Mine(gold); If(env[merchant]>0){ Sell(gold); } }",
        );
        // Positions: 1 While, 2 Mine, 3 If, 4 Sell, 5 marker.
        assert_eq!(f.kind(1), &FlowKind::Loop { body: 2, exit: Target::End });
        assert_eq!(f.kind(3), &FlowKind::Branch { on_true: 4, on_false: Target::Position(1) });
        assert_eq!(f.kind(4), &FlowKind::Action { next: Target::Position(1) });
    }

    #[test]
    fn pointer_walk_follows_scripted_outcomes() {
        let (_, f) = flow_of(
            "While(agent[gold]<1){ Mine(gold); } If(env[merchant]>0){ Sell(gold); }",
        );
        // Positions: 1 While, 2 Mine, 3 marker, 4 If, 5 Sell.
        let mut s = PointerState::start();
        let mut visited = vec![];
        // While true, Mine unfinished, Mine finished, While false, If true, Sell finished.
        s.advance_branch(&f, 1, true);
        visited.push(s.position());
        s.advance_action(&f, 2, false, true);
        visited.push(s.position());
        s.advance_action(&f, 2, true, true);
        visited.push(s.position());
        s.advance_branch(&f, 1, false);
        visited.push(s.position());
        s.advance_branch(&f, 4, true);
        visited.push(s.position());
        s.advance_action(&f, 5, true, true);
        assert!(s.done());
        assert_eq!(visited, vec![Some(2), Some(2), Some(1), Some(4), Some(5)]);
        assert_eq!(s.prev_executed, Some(5));
    }

    #[test]
    fn zero_step_skip_keeps_previous_parent() {
        let (_, f) = flow_of("Mine(gold); Goto(1,1); Sell(gold);");
        let mut s = PointerState::start();
        s.advance_action(&f, 1, true, true);
        assert_eq!(s.position(), Some(2));
        s.advance_action(&f, 2, true, false);
        assert_eq!(s.position(), Some(3));
        assert_eq!(s.prev_executed, Some(1));
    }

    #[test]
    fn waves_group_independent_routines() {
        let p = parse_program(
            "Select(bag); Select(dog); Verify_relation(left)[1,2]; Exist()[3]",
            Dialect::Reasoning,
        );
        // Exist consumes a boolean here, which the validator rejects, but
        // waves depend only on the parent lists.
        let p = p.unwrap();
        assert_eq!(parallel_waves(&p), vec![vec![1, 2], vec![3], vec![4]]);
        assert_eq!(sequential_waves(&p).len(), 4);
    }
}
