mod support;

use num_bigint::BigUint;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use enas_core::space::{count_space, sample_uniform, Genome, SpaceSpec};
use support::oracles;

#[test]
fn rnn_enumeration_matches_brute_force() {
    oracles::rnn_up_to(4);
}

#[test]
fn macro_enumeration_matches_brute_force_and_closed_form() {
    oracles::macro_up_to(3, 12);
}

#[test]
fn micro_b3_enumeration_matches_brute_force() {
    oracles::micro_b3();
}

#[test]
fn micro_b4_count_is_cell_count_squared() {
    oracles::micro_b4_cells();
}

#[test]
fn rnn_count_is_4_pow_n_times_n_minus_1_factorial() {
    for n in 1..=12u32 {
        let fact: BigUint = (1..n).map(BigUint::from).product();
        assert_eq!(count_space(&SpaceSpec::rnn(n as usize).unwrap()), BigUint::from(4u32).pow(n) * fact);
    }
}

fn spec_strategy() -> impl Strategy<Value = SpaceSpec> {
    prop_oneof![
        (1usize..=12).prop_map(|n| SpaceSpec::rnn(n).unwrap()),
        (1usize..=12).prop_map(|n| SpaceSpec::macro_cnn(n).unwrap()),
        (3usize..=7).prop_map(|n| SpaceSpec::micro(n).unwrap()),
    ]
}

proptest! {
    #[test]
    fn decisions_and_text_round_trip(spec in spec_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = sample_uniform(&spec, &mut rng);
        prop_assert!(g.validate(&spec).is_ok());
        let d = g.to_decisions();
        prop_assert_eq!(d.len(), spec.decisions().len());
        prop_assert_eq!(&Genome::from_decisions(&spec, &d).unwrap(), &g);
        let text = g.to_text();
        prop_assert_eq!(&Genome::parse(&text, Some(&spec)).unwrap(), &g);
        prop_assert_eq!(Genome::parse(&text, None).unwrap().id(), g.id());
    }

    #[test]
    fn loose_ends_are_exactly_unconsumed_nodes(n in 1usize..=12, seed in any::<u64>()) {
        let spec = SpaceSpec::rnn(n).unwrap();
        let g = sample_uniform(&spec, &mut ChaCha8Rng::seed_from_u64(seed));
        let r = g.as_rnn().unwrap();
        let ends = r.loose_ends();
        prop_assert!(!ends.is_empty());
        prop_assert!(ends.contains(&n));
        for i in 1..=n {
            prop_assert_eq!(ends.contains(&i), !r.prev.contains(&i));
        }
    }

    #[test]
    fn out_of_range_decision_is_rejected(spec in spec_strategy(), seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = sample_uniform(&spec, &mut rng).to_decisions();
        let layout = spec.decisions();
        let i = pick.index(d.len());
        d[i] = layout[i].choices;
        let is_range_error = matches!(Genome::from_decisions(&spec, &d), Err(enas_core::Error::Range { decision, .. }) if decision == i);
        prop_assert!(is_range_error);
    }
}

#[test]
fn worked_rnn_example_loose_ends() {
    let g = Genome::parse("space rnn 4\nnode 1 tanh\nnode 2 1 relu\nnode 3 2 relu\nnode 4 1 tanh\n", None).unwrap();
    assert_eq!(g.as_rnn().unwrap().loose_ends(), vec![3, 4]);
    let chain = Genome::parse("space rnn 3\nnode 1 tanh\nnode 2 1 relu\nnode 3 2 relu\n", None).unwrap();
    assert_eq!(chain.as_rnn().unwrap().loose_ends(), vec![3]);
}

#[test]
fn micro_cell_with_both_inputs_consumed_has_single_loose_end() {
    let g = Genome::parse(
        "space micro 4\nconv 3 2 2 sepconv5 identity\nconv 4 3 1 avgpool3 sepconv3\nreduce 3 1 1 identity identity\nreduce 4 1 1 identity identity\n",
        None,
    )
    .unwrap();
    let m = g.as_micro().unwrap();
    assert_eq!(m.conv.loose_ends(), vec![4]);
    assert_eq!(m.reduce.loose_ends(), vec![2, 3, 4]);
}
