mod common;

use alignlab_core::edit::{
    apply, diff, edit_distance, locate_intervention, script_cost, OpWeights,
};
use alignlab_core::seed;
use proptest::prelude::*;
use rand::Rng;

use common::{all_sequences, lcs_cost_range, lcs_len, matched_tokens, well_formed};

#[test]
fn all_short_pairs_agree_with_lcs_table() {
    let seqs = all_sequences(3, 4);
    for a in &seqs {
        for b in &seqs {
            let s = diff(a, b);
            assert_eq!(apply(&s, a).unwrap(), *b);
            assert!(well_formed(&s), "{a:?} -> {b:?}: {s:?}");
            assert_eq!(matched_tokens(&s), lcs_len(a, b));
            let (lo, hi) = lcs_cost_range(a, b);
            let c = script_cost(&s, &OpWeights::default());
            assert!(
                lo <= c && c <= hi,
                "{a:?} -> {b:?}: {c} outside [{lo}, {hi}]"
            );
        }
    }
}

#[test]
fn cost_can_depend_on_the_chosen_alignment() {
    // Keeping the first `a` gives one replace (cost 2); keeping the last
    // gives an insert of two and a delete (cost 3). Both keep one token.
    assert_eq!(lcs_cost_range(&['a', 'y'], &['a', 'z', 'a']), (2.0, 3.0));
    assert_eq!(
        script_cost(&diff(&['a', 'y'], &['a', 'z', 'a']), &OpWeights::default()),
        2.0
    );
}

#[test]
fn random_longer_pairs() {
    let mut rng = seed::stream(7, "edit-oracle", 0);
    for _ in 0..1000 {
        let la = rng.gen_range(9..=20);
        let lb = rng.gen_range(9..=20);
        let a: Vec<u8> = (0..la).map(|_| rng.gen_range(0..4)).collect();
        let b: Vec<u8> = (0..lb).map(|_| rng.gen_range(0..4)).collect();
        let s = diff(&a, &b);
        assert_eq!(apply(&s, &a).unwrap(), b);
        assert!(well_formed(&s));
        assert_eq!(matched_tokens(&s), lcs_len(&a, &b));
        let (lo, hi) = lcs_cost_range(&a, &b);
        let c = script_cost(&s, &OpWeights::default());
        assert!(lo <= c && c <= hi);
    }
}

proptest! {
    #[test]
    fn distance_is_nonnegative_and_zero_on_identity(a in prop::collection::vec(0u8..5, 1..30), b in prop::collection::vec(0u8..5, 0..30)) {
        let w = OpWeights::default();
        prop_assert_eq!(edit_distance(&diff(&a, &a), &w).unwrap(), 0.0);
        let d = edit_distance(&diff(&a, &b), &w).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d == 0.0, a == b);
    }

    #[test]
    fn intervention_ranges_partition_the_source(a in prop::collection::vec(0u8..3, 1..15), b in prop::collection::vec(0u8..3, 0..15)) {
        let s = diff(&a, &b);
        match locate_intervention(&s) {
            Ok(i) => {
                prop_assert_eq!(i.pre.start, 0);
                prop_assert_eq!(i.pre.end, i.edit.start);
                prop_assert_eq!(i.edit.end, i.post.start);
                prop_assert_eq!(i.post.end, a.len());
            }
            Err(_) => prop_assert_eq!(a, b),
        }
    }
}
