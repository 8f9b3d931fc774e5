use proptest::prelude::*;
use sodalab::corpus::{generate, split, Factor, GeneratorConfig, SplitConfig};
use sodalab::finetune::{macro_f1, per_class_f1, Portion, Task, TaskSpec};

/// Independent oracle: full confusion matrix, then per-class F1 from
/// 2·TP / (2·TP + FP + FN), zero when the class never occurs.
fn oracle(pred: &[usize], gold: &[usize], k: usize) -> f64 {
    let mut m = vec![vec![0u64; k]; k];
    for (&p, &g) in pred.iter().zip(gold) {
        m[g][p] += 1;
    }
    let mut sum = 0.0;
    for c in 0..k {
        let tp = m[c][c] as f64;
        let fp: f64 = (0..k).filter(|&g| g != c).map(|g| m[g][c] as f64).sum();
        let fn_: f64 = (0..k).filter(|&p| p != c).map(|p| m[c][p] as f64).sum();
        let denom = 2.0 * tp + fp + fn_;
        sum += if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
    }
    sum / k as f64
}

fn instance() -> impl Strategy<Value = (usize, Vec<usize>, Vec<usize>)> {
    (2usize..6, 1usize..60).prop_flat_map(|(k, n)| {
        (
            Just(k),
            prop::collection::vec(0..k, n),
            prop::collection::vec(0..k, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn macro_f1_matches_confusion_matrix_oracle((k, pred, gold) in instance()) {
        let f = macro_f1(&pred, &gold, k).unwrap();
        prop_assert!((f - oracle(&pred, &gold, k)).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&f));
        let per = per_class_f1(&pred, &gold, k).unwrap();
        prop_assert!((per.iter().sum::<f64>() / k as f64 - f).abs() < 1e-12);
    }
}

#[test]
fn worked_f1_examples() {
    // TP=FP=FN=TN=1 for each class of a binary problem
    assert!((macro_f1(&[0, 1, 0, 1], &[0, 0, 1, 1], 2).unwrap() - 0.5).abs() < 1e-12);
    // constant predictor on balanced binary gold
    assert!((macro_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Group portions see only their group's instances; X sees every
    /// instance of the language.
    #[test]
    fn portion_selection_semantics(seed in any::<u64>(), language in 0usize..2, task in 0usize..2) {
        let config = GeneratorConfig { seed, n_languages: 2, ..Default::default() };
        let reviews = generate(&config, 40).unwrap();
        let splits = split(&reviews, seed, &SplitConfig::default()).unwrap();
        let task = [Task::Sa, Task::Td][task];
        let mixed = TaskSpec::new(task, Portion::Mixed, Factor::Gender).unwrap().select(&splits, language, seed).unwrap();
        let all_test: Vec<u64> = splits.test.iter().filter(|r| r.language == language).map(|r| r.id).collect();
        prop_assert_eq!(mixed.test.iter().map(|r| r.id).collect::<Vec<_>>(), all_test);
        for (portion, group) in [(Portion::Group0, 0), (Portion::Group1, 1)] {
            let data = TaskSpec::new(task, portion, Factor::Gender).unwrap().select(&splits, language, seed).unwrap();
            for part in [&data.train, &data.dev, &data.test] {
                prop_assert!(part.iter().all(|r| r.group == group && r.language == language));
            }
            let expected = splits.test.iter().filter(|r| r.language == language && r.group == group).count();
            prop_assert_eq!(data.test.len(), expected);
        }
    }
}
