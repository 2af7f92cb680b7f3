use alignlab_core::advantage::{baseline_advantages, length_correction, split_by_length};
use alignlab_core::cpgd::{clipped_term, k3};
use alignlab_core::deliberative::{calibration_from_pairs, dual_step, LagrangianState};
use alignlab_core::policy::{
    filtered_distribution, log_prob, sample, softmax, PolicyParams, Prompt, Response, SamplerConfig,
};
use alignlab_core::pvm::{
    select_step, ConstantScorer, Dimension, OracleSafetyScorer, PrefixScorer, RoutingVector,
    ScorerSet,
};
use alignlab_core::seed;
use alignlab_core::Result;
use proptest::prelude::*;
use rand::Rng;

/// Scores a prefix by the share of `good` tokens in it.
struct ShareScorer(Dimension, u32);

impl PrefixScorer for ShareScorer {
    fn dimension(&self) -> Dimension {
        self.0
    }

    fn score(&self, _context: &[u32], prefix: &[u32]) -> Result<f64> {
        if prefix.is_empty() {
            return Ok(0.5);
        }
        Ok(prefix.iter().filter(|&&t| t == self.1).count() as f64 / prefix.len() as f64)
    }
}

#[test]
fn sampling_frequencies_match_the_policy() {
    let logits = vec![0.3, -1.0, 1.2, 0.0];
    let params = PolicyParams::new(0, 4, logits.clone()).unwrap();
    let prompt = Prompt::new("p", vec![0]).unwrap();
    let cfg = SamplerConfig::exact(1, None);
    let mut rng = seed::stream(5, "frequency", 0);
    let n = 200_000;
    let mut counts = [0usize; 4];
    for _ in 0..n {
        counts[sample(&params, &prompt, &cfg, &mut rng).unwrap().tokens[0] as usize] += 1;
    }
    for (c, p) in counts.iter().zip(softmax(&logits)) {
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((*c as f64 / n as f64 - p).abs() < 5.0 * se, "{counts:?}");
    }
}

#[test]
fn same_stream_same_samples() {
    let params = PolicyParams::new(1, 3, (0..9).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
    let prompt = Prompt::new("p", vec![2]).unwrap();
    let cfg = SamplerConfig::exact(10, Some(0));
    let draw = || {
        let mut rng = seed::stream(9, "repeat", 4);
        (0..50)
            .map(|_| sample(&params, &prompt, &cfg, &mut rng).unwrap())
            .collect::<Vec<_>>()
    };
    let a = draw();
    assert_eq!(a, draw());
    assert!(a.iter().all(|r| r.len() <= 10));
    let mut other = seed::stream(9, "repeat", 5);
    let b: Vec<_> = (0..50)
        .map(|_| sample(&params, &prompt, &cfg, &mut other).unwrap())
        .collect();
    assert_ne!(a, b);
}

#[test]
fn sequence_probabilities_sum_to_one() {
    // Every response of length exactly 3 (no end token) over 3 symbols.
    let params = PolicyParams::new(1, 3, (0..9).map(|i| (i as f64).cos()).collect()).unwrap();
    let prompt = Prompt::new("p", vec![1]).unwrap();
    let mut total = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                total += log_prob(&params, &prompt, &Response::new(vec![a, b, c], false))
                    .unwrap()
                    .exp();
            }
        }
    }
    assert!((total - 1.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn correction_follows_the_length_split(
        members in prop::collection::vec((1usize..30, 0.0f64..1.0), 2..20),
        alpha in 0.0f64..1.0,
    ) {
        let (lengths, rewards): (Vec<usize>, Vec<f64>) = members.into_iter().unzip();
        let correction = length_correction(&lengths, &rewards, alpha).unwrap();
        let split = split_by_length(&lengths);
        prop_assert_eq!(split.shorter.len(), lengths.len() / 2);
        prop_assert_eq!(split.shorter.len() + split.longer.len(), lengths.len());
        let max_short = split.shorter.iter().map(|&i| lengths[i]).max().unwrap_or(0);
        let min_long = split.longer.iter().map(|&i| lengths[i]).min().unwrap();
        prop_assert!(max_short <= min_long);
        for &i in &split.shorter {
            prop_assert!(correction[i] >= 0.0);
        }
        for &i in &split.longer {
            prop_assert!(correction[i] <= 0.0);
        }
        // Linear in alpha.
        let doubled = length_correction(&lengths, &rewards, 2.0 * alpha).unwrap();
        for (a, b) in correction.iter().zip(&doubled) {
            prop_assert!((2.0 * a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn baseline_advantages_sum_to_zero(rewards in prop::collection::vec(-5.0f64..5.0, 2..32)) {
        let adv = baseline_advantages(&rewards).unwrap();
        prop_assert!(adv.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn k3_is_nonnegative_and_zero_only_at_equal_probabilities(lr in -5.0f64..5.0) {
        prop_assert!(k3(lr) >= 0.0);
        prop_assert_eq!(k3(0.0), 0.0);
        if lr.abs() > 1e-6 {
            prop_assert!(k3(lr) > 0.0);
        }
    }

    #[test]
    fn clipped_term_never_exceeds_the_unclipped_one(lr in -1.0f64..1.0, adv in -2.0f64..2.0, eps in 0.01f64..0.5) {
        prop_assert!(clipped_term(lr, adv, eps) <= lr * adv + 1e-15);
    }

    #[test]
    fn selection_ignores_routing_scale(scale in 0.01f64..100.0, w in prop::array::uniform3(0.0f64..1.0), seed_index in 0u64..1000) {
        prop_assume!(w.iter().sum::<f64>() > 1e-3);
        let value = ShareScorer(Dimension::Value, 1);
        let knowledge = ShareScorer(Dimension::Knowledge, 0);
        let safety = OracleSafetyScorer { unsafe_tokens: [2].into() };
        let scorers = ScorerSet::new(&safety, &value, &knowledge).unwrap();
        let mut rng = seed::stream(1, "scale", seed_index);
        let pool: Vec<Vec<u32>> = (0..4)
            .map(|_| (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..4)).collect())
            .collect();
        let a = select_step(&pool, &scorers, &RoutingVector::new(w).unwrap(), &[3], &[1]).unwrap();
        let scaled = [w[0] * scale, w[1] * scale, w[2] * scale];
        let b = select_step(&pool, &scorers, &RoutingVector::new(scaled).unwrap(), &[3], &[1]).unwrap();
        prop_assert_eq!(a.index, b.index);
    }

    #[test]
    fn one_hot_routing_follows_a_single_scorer(seed_index in 0u64..1000) {
        let value = ShareScorer(Dimension::Value, 1);
        let knowledge = ConstantScorer(Dimension::Knowledge, 0.3);
        let safety = OracleSafetyScorer { unsafe_tokens: [2].into() };
        let scorers = ScorerSet::new(&safety, &value, &knowledge).unwrap();
        let mut rng = seed::stream(2, "one-hot", seed_index);
        let pool: Vec<Vec<u32>> = (0..5)
            .map(|_| (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..4)).collect())
            .collect();
        let best = select_step(&pool, &scorers, &RoutingVector::new([0.0, 1.0, 0.0]).unwrap(), &[3], &[]).unwrap();
        let shares: Vec<f64> = pool.iter().map(|c| value.score(&[3], c).unwrap()).collect();
        let top = shares.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(best.index, shares.iter().position(|&s| s == top).unwrap());
    }

    #[test]
    fn filtered_distribution_is_normalized(
        logits in prop::collection::vec(-10.0f64..10.0, 1..12),
        temperature in 0.05f64..3.0,
        top_p in 0.01f64..1.0,
        top_k in 1usize..12,
    ) {
        let cfg = SamplerConfig { temperature, top_p, top_k, ..SamplerConfig::default() };
        let dist = filtered_distribution(&logits, &cfg);
        prop_assert!(!dist.is_empty() && dist.len() <= top_k);
        prop_assert!((dist.iter().map(|d| d.1).sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(dist.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn multiplier_stays_positive_and_moves_against_the_slack(lambda in 1e-6f64..10.0, u in 0.0f64..1.0, rate in 0.0f64..1.0) {
        let state = LagrangianState::single(lambda, 0.9, 1.0, rate).unwrap();
        let next = dual_step(&state, &[u]).lambdas[0];
        prop_assert!(next > 0.0);
        if u < 0.9 {
            prop_assert!(next >= lambda);
        } else {
            prop_assert!(next <= lambda);
        }
    }

    #[test]
    fn calibration_rates_are_consistent(pairs in prop::collection::vec((0.0f64..1.0, prop::bool::ANY), 1..50)) {
        let pairs: Vec<(f64, f64)> = pairs.into_iter().map(|(c, r)| (c, if r { 1.0 } else { 0.0 })).collect();
        let m = calibration_from_pairs(&pairs, 0.5).unwrap();
        for v in [m.accuracy, m.reliability, m.fc_rate] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        // False-certain answers are wrong, so they cannot exceed the error rate.
        prop_assert!(m.fc_rate <= 1.0 - m.accuracy + 1e-12);
    }
}

proptest! {
    #[test]
    fn snapshots_round_trip_bit_exactly(logits in prop::collection::vec(-1e3f64..1e3, 9)) {
        let p = PolicyParams::new(1, 3, logits).unwrap();
        let back = PolicyParams::from_json(&p.to_json().unwrap()).unwrap();
        prop_assert!(back.logits().iter().zip(p.logits()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
