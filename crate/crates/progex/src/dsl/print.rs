//! Canonical program formatting. `parse_program(format_program(p)) == p`.

use super::*;

pub fn format_program(program: &Program) -> String {
    match program.dialect {
        Dialect::Policy => {
            let mut out = String::new();
            for stmt in &program.body {
                write_stmt(&mut out, stmt, 0);
            }
            out
        }
        Dialect::Reasoning => {
            let lines: Vec<String> = program.routines.iter().map(format_routine).collect();
            let mut out = lines.join(";\n");
            out.push('\n');
            out
        }
    }
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("    ");
    }
}

fn write_stmt(out: &mut String, stmt: &Stmt, depth: usize) {
    match stmt {
        Stmt::Act { kind, .. } => {
            indent(out, depth);
            out.push_str(&format_action(kind));
            out.push('\n');
        }
        Stmt::If {
            cond,
            then_body,
            else_body,
            has_else,
            ..
        } => {
            indent(out, depth);
            out.push_str(&format!("If({}){{\n", format_cond(cond)));
            for s in then_body {
                write_stmt(out, s, depth + 1);
            }
            indent(out, depth);
            if *has_else {
                out.push_str("}Else{\n");
                for s in else_body {
                    write_stmt(out, s, depth + 1);
                }
                indent(out, depth);
            }
            out.push_str("}\n");
        }
        Stmt::While { cond, body, .. } => {
            indent(out, depth);
            out.push_str(&format!("While({}){{\n", format_cond(cond)));
            for s in body {
                write_stmt(out, s, depth + 1);
            }
            indent(out, depth);
            out.push_str("}\n");
        }
    }
}

fn format_action(kind: &RoutineKind) -> String {
    use RoutineKind::*;
    match kind {
        Mine { item } => format!("Mine({});", item.word()),
        BuildBridge => "BuildBridge();".to_string(),
        Goto { x, y } => format!("Goto({x},{y});"),
        Place { shape, x, y } => format!("Place({},{x},{y});", shape.word()),
        Sell { item } => format!("Sell({});", item.word()),
        other => unreachable!("not an action routine: {other:?}"),
    }
}

pub(crate) fn format_cond(cond: &Condition) -> String {
    match cond.subject {
        CondSubject::IsThere => format!("is_there[{}]", cond.item.word()),
        CondSubject::Agent => format!(
            "agent[{}]{}{}",
            cond.item.word(),
            cond.op.word(),
            cond.number
        ),
        CondSubject::Env => format!(
            "env[{}]{}{}",
            cond.item.word(),
            cond.op.word(),
            cond.number
        ),
    }
}

/// One reasoning routine, e.g. `Filter_color(red)[1]`.
pub(crate) fn format_routine(routine: &Routine) -> String {
    use RoutineKind::*;
    let (head, args): (String, Vec<String>) = match &routine.kind {
        Select { name } => ("Select".into(), vec![name.clone()]),
        Filter { cat, value } => (format!("Filter_{}", cat.word()), vec![value.clone()]),
        Choose { cat, a, b } => (
            format!("Choose_{}", cat.word()),
            vec![a.clone(), b.clone()],
        ),
        Verify { cat, value } => (format!("Verify_{}", cat.word()), vec![value.clone()]),
        VerifyRelation { relation } => ("Verify_relation".into(), vec![relation.clone()]),
        Relate { relation } => ("Relate".into(), vec![relation.clone()]),
        InverseRelate { relation } => ("InverseRelate".into(), vec![relation.clone()]),
        Query { cat } => (format!("Query_{}", cat.word()), vec![]),
        Common { cat } => (format!("Common_{}", cat.word()), vec![]),
        Different { cat } => (format!("Different_{}", cat.word()), vec![]),
        Same { cat } => (format!("Same_{}", cat.word()), vec![]),
        And => ("And".into(), vec![]),
        Or => ("Or".into(), vec![]),
        Exist => ("Exist".into(), vec![]),
        other => unreachable!("not a reasoning routine: {other:?}"),
    };
    let mut s = format!("{head}({})", args.join(","));
    if !routine.parents.is_empty() {
        let ps: Vec<String> = routine.parents.iter().map(|p| p.to_string()).collect();
        s.push_str(&format!("[{}]", ps.join(",")));
    }
    s
}
