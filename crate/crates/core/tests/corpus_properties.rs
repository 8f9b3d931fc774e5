use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;
use sodalab::corpus::{
    balance_groups, dynamic_mask, generate, mask_count, split, write_corpus, BalanceKey, Domain, Factor,
    GeneratorConfig, MaskAction, MaskingConfig, Review, SplitConfig, SPLIT_RATIOS,
};
use sodalab::finetune::macro_f1;

fn review_strategy() -> impl Strategy<Value = (usize, usize, usize, usize, bool)> {
    (0usize..2, 0usize..3, 0usize..5, 0usize..2, prop::bool::weighted(0.8))
}

fn build(specs: &[(usize, usize, usize, usize, bool)]) -> Vec<Review> {
    specs
        .iter()
        .enumerate()
        .map(|(i, &(group, sentiment, topic, language, in_domain))| Review {
            id: i as u64,
            tokens: vec![10 + i % 7; 3],
            language,
            domain: if in_domain { Domain::In } else { Domain::Out },
            group,
            sentiment,
            topic,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn splits_partition_the_corpus(
        specs in prop::collection::vec(review_strategy(), 200..600),
        seed in any::<u64>(),
        frac in 0.0f64..0.6,
    ) {
        let reviews = build(&specs);
        let config = SplitConfig { specialization_fraction: frac, min_per_cell: 0 };
        let s = split(&reviews, seed, &config).unwrap();
        let mut ids = HashSet::new();
        for part in [&s.train, &s.dev, &s.test, &s.specialization] {
            for r in part {
                prop_assert!(ids.insert(r.id), "review {} in two splits", r.id);
            }
        }
        prop_assert_eq!(ids.len(), reviews.len());
        prop_assert!(s.train.iter().chain(&s.dev).chain(&s.test).all(|r| r.domain == Domain::In));
    }

    /// Per-split class counts stay within 2 of ratio × task-pool count.
    #[test]
    fn splits_are_stratified(
        specs in prop::collection::vec(review_strategy(), 250..700),
        seed in any::<u64>(),
    ) {
        let reviews = build(&specs);
        let config = SplitConfig { specialization_fraction: 0.2, min_per_cell: 0 };
        let s = split(&reviews, seed, &config).unwrap();
        let task: Vec<&Review> = s.train.iter().chain(&s.dev).chain(&s.test).collect();
        prop_assume!(task.len() >= 200);
        type Attr = fn(&Review) -> usize;
        let attrs: [(&str, Attr); 4] = [
            ("group", |r| r.group),
            ("sentiment", |r| r.sentiment),
            ("topic", |r| r.topic),
            ("language", |r| r.language),
        ];
        for (name, attr) in attrs {
            let mut pool: BTreeMap<usize, f64> = BTreeMap::new();
            for r in &task {
                *pool.entry(attr(r)).or_default() += 1.0;
            }
            for (part, ratio) in [&s.train, &s.dev, &s.test].into_iter().zip(SPLIT_RATIOS) {
                for (&class, &total) in &pool {
                    let got = part.iter().filter(|r| attr(r) == class).count() as f64;
                    prop_assert!(
                        (got - ratio * total).abs() <= 2.0,
                        "{name}={class}: {got} vs expected {}", ratio * total
                    );
                }
            }
        }
    }

    #[test]
    fn balancing_equalizes_groups_within_each_class(
        specs in prop::collection::vec(review_strategy(), 1..300),
        seed in any::<u64>(),
    ) {
        let reviews = build(&specs);
        for key in [BalanceKey::Sentiment, BalanceKey::Topic] {
            let out = balance_groups(&reviews, key, seed);
            let class = |r: &Review| match key {
                BalanceKey::Sentiment => r.sentiment,
                BalanceKey::Topic => r.topic,
            };
            let mut counts: BTreeMap<usize, [usize; 2]> = BTreeMap::new();
            for r in &out {
                counts.entry(class(r)).or_default()[r.group] += 1;
            }
            for (c, [a, b]) in counts {
                prop_assert_eq!(a, b, "class {}", c);
                let available = |g| reviews.iter().filter(|r| class(r) == c && r.group == g).count();
                prop_assert_eq!(a, available(0).min(available(1)));
            }
        }
    }

    #[test]
    fn generator_is_deterministic(seed in any::<u64>(), n in 1usize..20, p in 0.0f64..1.0) {
        let dir = tempfile::tempdir().unwrap();
        let config = GeneratorConfig { seed, n_languages: 2, marker_prob: [p, 0.0], ..Default::default() };
        let vocab = config.layout().vocabulary().unwrap();
        let paths = [dir.path().join("a.jsonl"), dir.path().join("b.jsonl")];
        for path in &paths {
            let reviews = generate(&config, n).unwrap();
            write_corpus(path, &reviews, &vocab, config.factor).unwrap();
        }
        prop_assert_eq!(std::fs::read(&paths[0]).unwrap(), std::fs::read(&paths[1]).unwrap());
    }

    #[test]
    fn mask_positions_and_targets_are_consistent(
        lens in prop::collection::vec(1usize..40, 1..8),
        seed in any::<u64>(),
        step in any::<u64>(),
    ) {
        let reviews: Vec<Review> = lens
            .iter()
            .enumerate()
            .map(|(i, &l)| Review {
                id: i as u64,
                tokens: (0..l).map(|j| 4 + (i * 31 + j) % 50).collect(),
                language: 0,
                domain: Domain::In,
                group: i % 2,
                sentiment: 0,
                topic: 0,
            })
            .collect();
        let refs: Vec<&Review> = reviews.iter().collect();
        let config = MaskingConfig { vocab_size: 60, max_len: 32, ..Default::default() };
        let m = dynamic_mask(&refs, &config, seed, step).unwrap();
        let mut t = 0;
        for (r, positions) in reviews.iter().zip(&m.masked_positions) {
            let kept = r.tokens.len().min(31);
            prop_assert_eq!(positions.len(), mask_count(kept, config.rate));
            prop_assert!(positions.windows(2).all(|w| w[0] < w[1]));
            for &p in positions {
                prop_assert!(p >= 1 && p <= kept, "position {} outside 1..={}", p, kept);
                prop_assert_eq!(m.masked_targets[t], r.tokens[p - 1]);
                t += 1;
            }
        }
        prop_assert_eq!(t, m.total_masked());
        prop_assert_eq!(m.actions.len(), t);
    }
}

#[test]
fn mask_count_is_rounded_fifteen_percent_with_floor_one() {
    for len in 1..=128usize {
        let expected = ((0.15 * len as f64).round() as usize).max(1);
        assert_eq!(mask_count(len, 0.15), expected, "L = {len}");
    }
    assert_eq!(mask_count(20, 0.15), 3);
}

#[test]
fn mask_replacement_shares_are_80_10_10() {
    let reviews: Vec<Review> = (0..64)
        .map(|i| Review {
            id: i,
            tokens: (0..100).map(|j| 4 + (j % 90)).collect(),
            language: 0,
            domain: Domain::In,
            group: 0,
            sentiment: 0,
            topic: 0,
        })
        .collect();
    let refs: Vec<&Review> = reviews.iter().collect();
    let config = MaskingConfig { vocab_size: 100, max_len: 101, ..Default::default() };
    let mut counts = [0usize; 3];
    let mut step = 0;
    while counts.iter().sum::<usize>() < 100_000 {
        let m = dynamic_mask(&refs, &config, 42, step).unwrap();
        for a in m.actions {
            counts[match a {
                MaskAction::Mask => 0,
                MaskAction::Random => 1,
                MaskAction::Keep => 2,
            }] += 1;
        }
        step += 1;
    }
    let total = counts.iter().sum::<usize>() as f64;
    for (c, target) in counts.iter().zip([0.8, 0.1, 0.1]) {
        let share = *c as f64 / total;
        assert!((share - target).abs() < 0.01, "{counts:?}");
    }
}

/// Predicts group 0 iff a group-0 marker occurs; the rule a bag-of-words
/// classifier can learn at best when group 1 carries no markers.
fn marker_oracle_f1(p: f64) -> f64 {
    let config = GeneratorConfig {
        n_languages: 1,
        n_domains: 1,
        marker_prob: [p, 0.0],
        seed: 3,
        ..Default::default()
    };
    let layout = config.layout();
    let fi = Factor::ALL.iter().position(|&f| f == config.factor).unwrap();
    let markers: HashSet<usize> = layout.markers[fi][0][0].iter().copied().collect();
    let reviews = generate(&config, 1000).unwrap();
    let pred: Vec<usize> = reviews
        .iter()
        .map(|r| if r.tokens.iter().any(|t| markers.contains(t)) { 0 } else { 1 })
        .collect();
    let gold: Vec<usize> = reviews.iter().map(|r| r.group).collect();
    macro_f1(&pred, &gold, 2).unwrap()
}

#[test]
fn planted_signal_is_monotone_in_marker_probability() {
    let f1s: Vec<f64> = (0..=10).map(|i| marker_oracle_f1(i as f64 / 10.0)).collect();
    for w in f1s.windows(2) {
        assert!(w[1] >= w[0] - 0.02, "{f1s:?}");
    }
    assert!((f1s[0] - 1.0 / 3.0).abs() < 1e-12, "{f1s:?}");
    assert_eq!(f1s[10], 1.0);
}
