//! Parse programs in both dialects, walk the syntax tree, reprint them
//! canonically, and surface validation diagnostics.

use progex::dsl::{format_program, parse_program, validate_program, Dialect};

fn main() {
    let policy_src = "
        Mine(wood);
        If (env[river] >= 1) {
            BuildBridge();
        } Else {
            Goto(4, 2);
        }
        Sell(wood);
    ";
    let program = parse_program(policy_src, Dialect::Policy).unwrap();
    println!("policy program, {} routines:", program.len());
    for routine in &program.routines {
        println!("  {:>2}  {:?}", routine.index, routine.kind);
    }
    // The printer is the canonical form: parse(format(p)) == p.
    let printed = format_program(&program);
    println!("\ncanonical form:\n{printed}");
    let again = parse_program(&printed, Dialect::Policy).unwrap();
    assert_eq!(program, again);

    // Reasoning programs form a DAG: bracketed references name the
    // earlier routines a step consumes.
    let reasoning_src = "Select(bottle); Filter_color(red)[1]; Select(bag); Common_color()[2,3];";
    let program = parse_program(reasoning_src, Dialect::Reasoning).unwrap();
    println!("reasoning program:\n{}", format_program(&program));
    for routine in &program.routines {
        println!("  position {} reads {:?}", routine.index, routine.parents);
    }

    // Dialects do not mix.
    let err = parse_program("Select(bag);", Dialect::Policy).unwrap_err();
    println!("\npolicy parser on a reasoning routine:\n  {err}");

    // The validator reports structural problems the grammar allows.
    let cyclic = "Select(bag); Exist()[3]; Exist()[2];";
    let program = parse_program(cyclic, Dialect::Reasoning).unwrap();
    for d in validate_program(&program) {
        println!("validator: position {} {:?}: {}", d.position, d.severity, d.message);
    }
}
