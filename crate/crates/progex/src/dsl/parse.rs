//! Recursive-descent parsing for both dialects.
//!
//! Policy surface form:
//! ```text
//! Mine(gold);
//! While(env[gold]>0){ Mine(gold); Goto(1,2); }
//! If(agent[wood]>=1){ BuildBridge(); }Else{ Sell(gold); }
//! ```
//!
//! Reasoning surface form (parent positions in brackets):
//! ```text
//! Select(bag); Select(bottle); Verify_relation(left)[1,2]
//! ```

use super::*;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Number(u64),
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Op(CmpOp),
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<Spanned>, DslError> {
    let mut out = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let bytes: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let (tline, tcol) = (line, col);
        let advance = |n: usize, i: &mut usize, col: &mut usize| {
            *i += n;
            *col += n;
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            ' ' | '\t' | '\r' => advance(1, &mut i, &mut col),
            '#' => {
                // Comment to end of line.
                while i < bytes.len() && bytes[i] != '\n' {
                    i += 1;
                }
            }
            '(' => {
                out.push(Spanned { tok: Tok::LParen, line: tline, col: tcol });
                advance(1, &mut i, &mut col);
            }
            ')' => {
                out.push(Spanned { tok: Tok::RParen, line: tline, col: tcol });
                advance(1, &mut i, &mut col);
            }
            '{' => {
                out.push(Spanned { tok: Tok::LBrace, line: tline, col: tcol });
                advance(1, &mut i, &mut col);
            }
            '}' => {
                out.push(Spanned { tok: Tok::RBrace, line: tline, col: tcol });
                advance(1, &mut i, &mut col);
            }
            '[' => {
                out.push(Spanned { tok: Tok::LBracket, line: tline, col: tcol });
                advance(1, &mut i, &mut col);
            }
            ']' => {
                out.push(Spanned { tok: Tok::RBracket, line: tline, col: tcol });
                advance(1, &mut i, &mut col);
            }
            ',' => {
                out.push(Spanned { tok: Tok::Comma, line: tline, col: tcol });
                advance(1, &mut i, &mut col);
            }
            ';' => {
                out.push(Spanned { tok: Tok::Semi, line: tline, col: tcol });
                advance(1, &mut i, &mut col);
            }
            '>' | '<' => {
                let ge = i + 1 < bytes.len() && bytes[i + 1] == '=';
                let op = match (c, ge) {
                    ('>', true) => CmpOp::Ge,
                    ('>', false) => CmpOp::Gt,
                    ('<', true) => CmpOp::Le,
                    _ => CmpOp::Lt,
                };
                out.push(Spanned { tok: Tok::Op(op), line: tline, col: tcol });
                advance(if ge { 2 } else { 1 }, &mut i, &mut col);
            }
            '=' => {
                out.push(Spanned { tok: Tok::Op(CmpOp::Eq), line: tline, col: tcol });
                advance(1, &mut i, &mut col);
            }
            c if c.is_ascii_digit() => {
                let mut n: u64 = 0;
                let mut len = 0;
                while i + len < bytes.len() && bytes[i + len].is_ascii_digit() {
                    n = n * 10 + bytes[i + len].to_digit(10).unwrap() as u64;
                    len += 1;
                    if n > 1_000_000 {
                        return Err(DslError::Syntax {
                            line: tline,
                            col: tcol,
                            msg: "number literal too large".into(),
                        });
                    }
                }
                out.push(Spanned { tok: Tok::Number(n), line: tline, col: tcol });
                advance(len, &mut i, &mut col);
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut len = 0;
                while i + len < bytes.len()
                    && (bytes[i + len].is_ascii_alphanumeric() || bytes[i + len] == '_')
                {
                    len += 1;
                }
                let word: String = bytes[i..i + len].iter().collect();
                out.push(Spanned { tok: Tok::Word(word), line: tline, col: tcol });
                advance(len, &mut i, &mut col);
            }
            other => {
                return Err(DslError::Syntax {
                    line: tline,
                    col: tcol,
                    msg: format!("unexpected character {other:?}"),
                })
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn here(&self) -> (usize, usize) {
        match self.toks.get(self.pos) {
            Some(s) => (s.line, s.col),
            None => self
                .toks
                .last()
                .map(|s| (s.line, s.col + 1))
                .unwrap_or((1, 1)),
        }
    }

    fn err(&self, msg: impl Into<String>) -> DslError {
        let (line, col) = self.here();
        DslError::Syntax {
            line,
            col,
            msg: msg.into(),
        }
    }

    fn next(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), DslError> {
        match self.peek() {
            Some(t) if *t == want => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn word(&mut self, what: &str) -> Result<String, DslError> {
        match self.peek().cloned() {
            Some(Tok::Word(w)) => {
                self.pos += 1;
                Ok(w)
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn number(&mut self, what: &str, max: u64) -> Result<u8, DslError> {
        match self.peek().cloned() {
            Some(Tok::Number(n)) if n <= max => {
                self.pos += 1;
                Ok(n as u8)
            }
            Some(Tok::Number(n)) => Err(self.err(format!("{what} {n} exceeds maximum {max}"))),
            _ => Err(self.err(format!("expected {what}"))),
        }
    }
}

/// Parse `src` as the given dialect.
pub fn parse_program(src: &str, dialect: Dialect) -> Result<Program, DslError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0 };
    match dialect {
        Dialect::Policy => parse_policy(&mut p),
        Dialect::Reasoning => parse_reasoning(&mut p),
    }
}

// ---------------------------------------------------------------- policy

fn parse_policy(p: &mut Parser) -> Result<Program, DslError> {
    let mut raw = Vec::new();
    while p.peek().is_some() {
        raw.push(parse_stmt(p)?);
    }
    if raw.is_empty() {
        return Err(p.err("empty program"));
    }
    // Number statements in pre-order and materialize loop-end markers.
    let mut routines = Vec::new();
    let mut counter = 1usize;
    let body = number_stmts(raw, &mut counter, &mut routines);
    Ok(Program {
        dialect: Dialect::Policy,
        routines,
        body,
    })
}

/// Unnumbered statement produced by the grammar before positions exist.
enum RawStmt {
    Act(RoutineKind),
    If(Condition, Vec<RawStmt>, Option<Vec<RawStmt>>),
    While(Condition, Vec<RawStmt>),
}

fn number_stmts(raw: Vec<RawStmt>, counter: &mut usize, routines: &mut Vec<Routine>) -> Vec<Stmt> {
    let mut out = Vec::new();
    for s in raw {
        match s {
            RawStmt::Act(kind) => {
                let index = *counter;
                *counter += 1;
                routines.push(Routine {
                    index,
                    kind: kind.clone(),
                    parents: vec![],
                });
                out.push(Stmt::Act { index, kind });
            }
            RawStmt::If(cond, then_raw, else_raw) => {
                let index = *counter;
                *counter += 1;
                let has_else = else_raw.is_some();
                let kind = if has_else {
                    RoutineKind::IfElse { cond }
                } else {
                    RoutineKind::If { cond }
                };
                routines.push(Routine {
                    index,
                    kind,
                    parents: vec![],
                });
                let then_body = number_stmts(then_raw, counter, routines);
                let else_body = match else_raw {
                    Some(e) => number_stmts(e, counter, routines),
                    None => vec![],
                };
                out.push(Stmt::If {
                    index,
                    cond,
                    then_body,
                    else_body,
                    has_else,
                });
            }
            RawStmt::While(cond, body_raw) => {
                let index = *counter;
                *counter += 1;
                routines.push(Routine {
                    index,
                    kind: RoutineKind::While { cond },
                    parents: vec![],
                });
                let body = number_stmts(body_raw, counter, routines);
                let end_index = *counter;
                *counter += 1;
                routines.push(Routine {
                    index: end_index,
                    kind: RoutineKind::LoopEnd,
                    parents: vec![],
                });
                out.push(Stmt::While {
                    index,
                    cond,
                    body,
                    end_index,
                });
            }
        }
    }
    out
}

fn parse_stmt(p: &mut Parser) -> Result<RawStmt, DslError> {
    let kw = p.word("a routine keyword")?;
    match kw.as_str() {
        "Mine" => {
            p.expect(Tok::LParen, "(")?;
            let w = p.word("an item")?;
            let item = Item::from_word(&w).ok_or_else(|| p.err(format!("unknown item {w:?}")))?;
            p.expect(Tok::RParen, ")")?;
            p.expect(Tok::Semi, ";")?;
            Ok(RawStmt::Act(RoutineKind::Mine { item }))
        }
        "BuildBridge" => {
            p.expect(Tok::LParen, "(")?;
            p.expect(Tok::RParen, ")")?;
            p.expect(Tok::Semi, ";")?;
            Ok(RawStmt::Act(RoutineKind::BuildBridge))
        }
        "Goto" => {
            p.expect(Tok::LParen, "(")?;
            let x = p.number("a coordinate", 9)?;
            p.expect(Tok::Comma, ",")?;
            let y = p.number("a coordinate", 9)?;
            p.expect(Tok::RParen, ")")?;
            p.expect(Tok::Semi, ";")?;
            Ok(RawStmt::Act(RoutineKind::Goto { x, y }))
        }
        "Place" => {
            p.expect(Tok::LParen, "(")?;
            let w = p.word("a shape")?;
            let shape =
                Shape::from_word(&w).ok_or_else(|| p.err(format!("unknown shape {w:?}")))?;
            p.expect(Tok::Comma, ",")?;
            let x = p.number("a coordinate", 9)?;
            p.expect(Tok::Comma, ",")?;
            let y = p.number("a coordinate", 9)?;
            p.expect(Tok::RParen, ")")?;
            p.expect(Tok::Semi, ";")?;
            Ok(RawStmt::Act(RoutineKind::Place { shape, x, y }))
        }
        "Sell" => {
            p.expect(Tok::LParen, "(")?;
            let w = p.word("an item")?;
            let item = Item::from_word(&w).ok_or_else(|| p.err(format!("unknown item {w:?}")))?;
            p.expect(Tok::RParen, ")")?;
            p.expect(Tok::Semi, ";")?;
            Ok(RawStmt::Act(RoutineKind::Sell { item }))
        }
        "If" => {
            p.expect(Tok::LParen, "(")?;
            let cond = parse_cond(p)?;
            p.expect(Tok::RParen, ")")?;
            let then_body = parse_block(p)?;
            let else_body = if matches!(p.peek(), Some(Tok::Word(w)) if w == "Else") {
                p.next();
                Some(parse_block(p)?)
            } else {
                None
            };
            Ok(RawStmt::If(cond, then_body, else_body))
        }
        "While" => {
            p.expect(Tok::LParen, "(")?;
            let cond = parse_cond(p)?;
            p.expect(Tok::RParen, ")")?;
            let body = parse_block(p)?;
            Ok(RawStmt::While(cond, body))
        }
        other => Err(p.err(format!("unknown routine {other:?}"))),
    }
}

fn parse_block(p: &mut Parser) -> Result<Vec<RawStmt>, DslError> {
    p.expect(Tok::LBrace, "{")?;
    let mut body = Vec::new();
    loop {
        match p.peek() {
            Some(Tok::RBrace) => {
                p.next();
                break;
            }
            Some(_) => body.push(parse_stmt(p)?),
            None => return Err(p.err("unclosed block")),
        }
    }
    if body.is_empty() {
        return Err(p.err("empty block"));
    }
    Ok(body)
}

fn parse_cond(p: &mut Parser) -> Result<Condition, DslError> {
    let subj = p.word("a condition subject")?;
    match subj.as_str() {
        "is_there" => {
            p.expect(Tok::LBracket, "[")?;
            let w = p.word("an item")?;
            let item =
                CondItem::from_word(&w).ok_or_else(|| p.err(format!("unknown item {w:?}")))?;
            p.expect(Tok::RBracket, "]")?;
            Ok(Condition::is_there(item))
        }
        "agent" | "env" => {
            let subject = if subj == "agent" {
                CondSubject::Agent
            } else {
                CondSubject::Env
            };
            p.expect(Tok::LBracket, "[")?;
            let w = p.word("an item")?;
            let item =
                CondItem::from_word(&w).ok_or_else(|| p.err(format!("unknown item {w:?}")))?;
            p.expect(Tok::RBracket, "]")?;
            let op = match p.next().map(|s| s.tok) {
                Some(Tok::Op(op)) => op,
                _ => return Err(p.err("expected a comparison operator")),
            };
            let number = p.number("a count", 9)?;
            Ok(Condition {
                subject,
                item,
                op,
                number,
            })
        }
        other => Err(p.err(format!(
            "condition subject must be agent, env or is_there, got {other:?}"
        ))),
    }
}

// ------------------------------------------------------------- reasoning

fn parse_reasoning(p: &mut Parser) -> Result<Program, DslError> {
    let mut routines = Vec::new();
    loop {
        if p.peek().is_none() {
            break;
        }
        let index = routines.len() + 1;
        let routine = parse_reasoning_routine(p, index)?;
        routines.push(routine);
        match p.peek() {
            Some(Tok::Semi) => {
                p.next();
            }
            None => break,
            Some(_) => return Err(p.err("expected ; between routines")),
        }
    }
    if routines.is_empty() {
        return Err(p.err("empty program"));
    }
    Ok(Program {
        dialect: Dialect::Reasoning,
        routines,
        body: vec![],
    })
}

fn parse_reasoning_routine(p: &mut Parser, index: usize) -> Result<Routine, DslError> {
    let head = p.word("a routine name")?;
    let mut args = Vec::new();
    if matches!(p.peek(), Some(Tok::LParen)) {
        p.next();
        loop {
            match p.peek().cloned() {
                Some(Tok::RParen) => {
                    p.next();
                    break;
                }
                Some(Tok::Word(w)) => {
                    p.next();
                    args.push(w);
                    if matches!(p.peek(), Some(Tok::Comma)) {
                        p.next();
                    }
                }
                _ => return Err(p.err("expected an argument word or )")),
            }
        }
    }
    let mut parents = Vec::new();
    if matches!(p.peek(), Some(Tok::LBracket)) {
        p.next();
        loop {
            match p.peek().cloned() {
                Some(Tok::RBracket) => {
                    p.next();
                    break;
                }
                Some(Tok::Number(n)) => {
                    p.next();
                    if n == 0 {
                        return Err(p.err("parent positions are 1-based"));
                    }
                    parents.push(n as usize);
                    if matches!(p.peek(), Some(Tok::Comma)) {
                        p.next();
                    }
                }
                _ => return Err(p.err("malformed parent list")),
            }
        }
    }

    let kind = reasoning_kind(p, &head, &args)?;
    let arity = kind.parent_arity();
    if parents.len() != arity {
        return Err(p.err(format!(
            "{head} takes {arity} parent(s), found {}",
            parents.len()
        )));
    }
    Ok(Routine {
        index,
        kind,
        parents,
    })
}

fn reasoning_kind(p: &Parser, head: &str, args: &[String]) -> Result<RoutineKind, DslError> {
    let want = |n: usize| -> Result<(), DslError> {
        if args.len() != n {
            Err(p.err(format!("{head} takes {n} argument(s), found {}", args.len())))
        } else {
            Ok(())
        }
    };
    let cat_of = |suffix: &str, allowed: &[AttrCat]| -> Result<AttrCat, DslError> {
        let cat = AttrCat::from_word(suffix)
            .ok_or_else(|| p.err(format!("unknown attribute category {suffix:?}")))?;
        if !allowed.contains(&cat) {
            return Err(p.err(format!("{head} does not support category {suffix}")));
        }
        Ok(cat)
    };
    use AttrCat::*;
    if head == "Select" {
        want(1)?;
        return Ok(RoutineKind::Select {
            name: args[0].clone(),
        });
    }
    if head == "Verify_relation" {
        want(1)?;
        return Ok(RoutineKind::VerifyRelation {
            relation: args[0].clone(),
        });
    }
    if head == "Relate" {
        want(1)?;
        return Ok(RoutineKind::Relate {
            relation: args[0].clone(),
        });
    }
    if head == "InverseRelate" {
        want(1)?;
        return Ok(RoutineKind::InverseRelate {
            relation: args[0].clone(),
        });
    }
    if head == "And" {
        want(0)?;
        return Ok(RoutineKind::And);
    }
    if head == "Or" {
        want(0)?;
        return Ok(RoutineKind::Or);
    }
    if head == "Exist" {
        want(0)?;
        return Ok(RoutineKind::Exist);
    }
    if let Some(suffix) = head.strip_prefix("Filter_") {
        want(1)?;
        let cat = cat_of(suffix, &[Color, Material, Shape, Activity, Position])?;
        return Ok(RoutineKind::Filter {
            cat,
            value: args[0].clone(),
        });
    }
    if let Some(suffix) = head.strip_prefix("Choose_") {
        want(2)?;
        let cat = cat_of(suffix, &[Name, Scene, Color, Shape, Position])?;
        return Ok(RoutineKind::Choose {
            cat,
            a: args[0].clone(),
            b: args[1].clone(),
        });
    }
    if let Some(suffix) = head.strip_prefix("Verify_") {
        want(1)?;
        let cat = cat_of(suffix, &[Color, Shape, Scene])?;
        return Ok(RoutineKind::Verify {
            cat,
            value: args[0].clone(),
        });
    }
    if let Some(suffix) = head.strip_prefix("Query_") {
        want(0)?;
        let cat = cat_of(suffix, &[Name, Color, Shape, Scene, Position])?;
        return Ok(RoutineKind::Query { cat });
    }
    if let Some(suffix) = head.strip_prefix("Common_") {
        want(0)?;
        let cat = cat_of(suffix, &[Color, Material])?;
        return Ok(RoutineKind::Common { cat });
    }
    if let Some(suffix) = head.strip_prefix("Different_") {
        want(0)?;
        let cat = cat_of(suffix, &[Name, Color, Material])?;
        return Ok(RoutineKind::Different { cat });
    }
    if let Some(suffix) = head.strip_prefix("Same_") {
        want(0)?;
        let cat = cat_of(suffix, &[Name, Color])?;
        return Ok(RoutineKind::Same { cat });
    }
    Err(p.err(format!("unknown routine {head:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{format_program, has_errors, validate_program};

    #[test]
    fn policy_positions_count_markers() {
        let src = "Mine(gold); While(env[wood]>0){ Mine(wood); } Sell(gold);";
        let p = parse_program(src, Dialect::Policy).unwrap();
        // Positions: 1 Mine, 2 While, 3 Mine, 4 LoopEnd, 5 Sell.
        assert_eq!(p.len(), 5);
        assert_eq!(p.n_exec(), 4);
        assert!(p.routine(4).kind.is_marker());
        assert_eq!(p.exec_row(5), Some(3));
        assert_eq!(p.exec_row(4), None);
        match &p.body[1] {
            Stmt::While { index, end_index, .. } => {
                assert_eq!(*index, 2);
                assert_eq!(*end_index, 4);
            }
            other => panic!("expected While, got {other:?}"),
        }
    }

    #[test]
    fn if_else_numbering_is_preorder() {
        let src = "If(agent[gold]>=2){ Sell(gold); }Else{ Mine(gold); Mine(gold); } BuildBridge();";
        let p = parse_program(src, Dialect::Policy).unwrap();
        assert_eq!(p.len(), 5);
        assert!(matches!(p.routine(1).kind, RoutineKind::IfElse { .. }));
        assert!(matches!(p.routine(2).kind, RoutineKind::Sell { .. }));
        assert!(matches!(p.routine(3).kind, RoutineKind::Mine { .. }));
        assert!(matches!(p.routine(5).kind, RoutineKind::BuildBridge));
    }

    #[test]
    fn policy_round_trip() {
        let srcs = [
            "Mine(iron);\nGoto(3,4);\nPlace(triangle,2,5);",
            "If(is_there[river]){ BuildBridge(); }",
            "While(agent[gold]<3){ Mine(gold); If(env[merchant]>0){ Sell(gold); } }",
            "If(env[wood]=0){ Goto(1,1); }Else{ While(env[wood]>0){ Mine(wood); } }",
        ];
        for src in srcs {
            let p = parse_program(src, Dialect::Policy).unwrap();
            let text = format_program(&p);
            let back = parse_program(&text, Dialect::Policy).unwrap();
            assert_eq!(back, p, "round trip changed program for {src:?}");
            assert!(!has_errors(&validate_program(&p)));
        }
    }

    #[test]
    fn reasoning_round_trip_and_validation() {
        let srcs = [
            "Select(bag); Filter_color(red)[1]; Query_shape()[2]",
            "Select(dog); Select(cat); Verify_relation(left)[1,2]",
            "Select(car); Relate(left)[1]; Exist()[2]",
            "Select(person); Filter_activity(walking)[1]; Select(tree); Common_color()[2,3]",
        ];
        for src in srcs {
            let p = parse_program(src, Dialect::Reasoning).unwrap();
            let text = format_program(&p);
            let back = parse_program(&text, Dialect::Reasoning).unwrap();
            assert_eq!(back, p, "round trip changed program for {src:?}");
            let diags = validate_program(&p);
            assert!(!has_errors(&diags), "unexpected errors: {diags:?}");
        }
    }

    #[test]
    fn syntax_errors_carry_positions() {
        let err = parse_program("Mine(gold)", Dialect::Policy).unwrap_err();
        match err {
            DslError::Syntax { line: 1, col, .. } => assert_eq!(col, 11),
            other => panic!("unexpected error {other:?}"),
        }
        let err = parse_program("If(env[wood]>0){}", Dialect::Policy).unwrap_err();
        assert!(matches!(err, DslError::Syntax { .. }), "{err:?}");
        let err = parse_program("Select(bag)\nFilter_color(red)[1]", Dialect::Reasoning)
            .unwrap_err();
        match err {
            DslError::Syntax { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn validation_rejects_bad_topology() {
        // Forward parent reference.
        let p = parse_program("Select(bag); Filter_color(red)[3]; Exist()[2]", Dialect::Reasoning);
        let p = p.unwrap();
        assert!(has_errors(&validate_program(&p)));
        // Routines 2 and 4 both end chains, so the sink is not unique.
        let p = parse_program(
            "Select(bag); Exist()[1]; Select(dog); Exist()[3]",
            Dialect::Reasoning,
        )
        .unwrap();
        let diags = validate_program(&p);
        assert!(has_errors(&diags), "expected sink error: {diags:?}");
        // Type mismatch: And consumes booleans, parents produce objects.
        let p = parse_program("Select(bag); Select(dog); And()[1,2]", Dialect::Reasoning).unwrap();
        assert!(has_errors(&validate_program(&p)));
        // Wrong word for category.
        let p = parse_program("Select(bag); Filter_color(wooden)[1]; Exist()[2]", Dialect::Reasoning)
            .unwrap();
        assert!(has_errors(&validate_program(&p)));
    }

    #[test]
    fn comments_and_whitespace_are_ignored() {
        let src = "# build then sell\nMine(gold); # mine first\nSell(gold);\n";
        let p = parse_program(src, Dialect::Policy).unwrap();
        assert_eq!(p.len(), 2);
    }
}
