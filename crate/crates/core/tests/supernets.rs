mod support;

use enas_core::space::SpaceKind;
use support::aliasing::check_space;

fn assert_aliasing(kind: SpaceKind, pairs: usize) {
    let r = check_space(kind, pairs, 7).unwrap();
    assert!(r.mismatches.is_empty(), "{:?}: {:#?}", kind, r.mismatches);
    assert!(r.shared_updates > 0 && r.shared_updates < r.updates, "{kind:?}: {r:?}");
}

#[test]
fn rnn_edges_alias_exactly() {
    assert_aliasing(SpaceKind::Rnn, 12);
}

#[test]
fn macro_ops_and_skips_alias_exactly() {
    assert_aliasing(SpaceKind::Macro, 9);
}

#[test]
fn micro_ops_alias_exactly() {
    assert_aliasing(SpaceKind::Micro, 6);
}

use proptest::prelude::*;

use support::structural;

#[test]
fn worked_rnn_example_output_is_mean_of_h3_h4() {
    structural::worked_rnn_example_output_is_mean_of_h3_h4();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn gates_lie_strictly_inside_unit_interval(seed in any::<u64>(), nodes in 1usize..=8) {
        structural::gates_inside_unit_interval(seed, nodes);
    }
}

#[test]
fn worked_micro_example_node_formulas() {
    structural::worked_micro_example_node_formulas();
}

#[test]
fn all_identity_cell_doubles_equal_inputs() {
    structural::all_identity_cell_doubles_equal_inputs();
}

#[test]
fn reduction_cells_halve_resolution() {
    structural::reduction_cells_halve_resolution();
}

#[test]
fn macro_channels_are_invariant_over_1000_genomes() {
    structural::macro_channels_are_invariant_over_1000_genomes();
}
