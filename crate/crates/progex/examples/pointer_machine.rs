//! The pointer machine: symbolic control flow over a policy program.
//! A pointer advances through actions, branches on conditions, and
//! loops back through While markers, without any learned component.

use progex::dsl::{parse_program, Dialect};
use progex::flow::{FlowKind, FlowTargets, PointerState};
use progex::gridworld::{Cell, GridWorld, Item};
use progex::oracle::reference_run;

fn main() {
    let src = "
        While (agent[wood] < 2) {
            Mine(wood);
        }
        If (env[river] >= 1) {
            BuildBridge();
        } Else {
            Sell(wood);
        }
    ";
    let program = parse_program(src, Dialect::Policy).unwrap();
    let flow = FlowTargets::compute(&program);
    for routine in &program.routines {
        println!("{:>2} {:?} -> {:?}", routine.index, routine.kind, flow.kind(routine.index));
    }

    // A world with two wood tiles near the agent and no river: the loop
    // should run twice, then the If should fall to its Else arm.
    let mut env = GridWorld::empty(5);
    env.agent = (2, 2);
    env.set_cell(2, 1, Cell::Resource(Item::Wood));
    env.set_cell(3, 2, Cell::Resource(Item::Wood));
    env.set_cell(0, 0, Cell::Market);

    // Drive the pointer with true condition values, the way the oracle
    // does; each action routine is treated as finishing in one bound.
    let mut state = PointerState::start();
    let mut world = env.clone();
    let mut visited = Vec::new();
    println!("\npointer walk:");
    while let Some(pos) = state.position() {
        visited.push(pos);
        match flow.kind(pos) {
            FlowKind::Branch { .. } | FlowKind::Loop { .. } => {
                let truth = world.eval_condition(program.routine(pos).cond().unwrap());
                println!("  at {pos}: condition is {truth}");
                state.advance_branch(&flow, pos, truth);
            }
            FlowKind::Action { .. } => {
                println!("  at {pos}: run {:?}", program.routine(pos).kind);
                // Mutate the world so loop conditions eventually flip.
                act(&mut world, &program.routines[pos - 1].kind);
                state.advance_action(&flow, pos, true, true);
            }
            FlowKind::Marker => unreachable!("markers are skipped by flow targets"),
        }
    }
    println!("visited order: {visited:?}");

    // The reference interpreter replays the same semantics in one call.
    let (completed, reference) = reference_run(&program, &env);
    println!("reference interpreter: completed={completed}, visited {reference:?}");
    assert_eq!(visited, reference);
}

/// Just enough environment effect for the walk above: mining takes the
/// nearest matching resource, selling consumes from the inventory.
fn act(world: &mut GridWorld, kind: &progex::dsl::RoutineKind) {
    use progex::dsl::RoutineKind;
    match kind {
        RoutineKind::Mine { item } => {
            'outer: for y in 0..world.n as u8 {
                for x in 0..world.n as u8 {
                    if world.cell(x, y) == Cell::Resource(*item) {
                        world.set_cell(x, y, Cell::Empty);
                        *world.inventory.entry(*item).or_insert(0) += 1;
                        break 'outer;
                    }
                }
            }
        }
        RoutineKind::Sell { item } => {
            let held = world.inventory.entry(*item).or_insert(0);
            *held = held.saturating_sub(1);
        }
        _ => {}
    }
}
