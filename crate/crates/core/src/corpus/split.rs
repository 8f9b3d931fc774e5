use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Domain, Factor, Review, NUM_GROUPS};
use crate::error::{Error, Result};
use crate::seed;

/// Train/dev/test proportions of the task portion.
pub const SPLIT_RATIOS: [f64; 3] = [0.6, 0.2, 0.2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Share of every in-domain (language, group) cell reserved for
    /// specialization before the task split. Out-of-domain reviews always go
    /// to the specialization pool.
    pub specialization_fraction: f64,
    pub min_per_cell: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            specialization_fraction: 0.5,
            min_per_cell: 10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitSet {
    pub train: Vec<Review>,
    pub dev: Vec<Review>,
    pub test: Vec<Review>,
    pub specialization: Vec<Review>,
}

impl SplitSet {
    /// Group-balanced copy for attribute classification: inside every class
    /// of `key` the majority group is downsampled to the minority count.
    pub fn balanced(&self, key: BalanceKey, seed: u64) -> SplitSet {
        SplitSet {
            train: balance_groups(&self.train, key, seed::derive(seed, "balance/train")),
            dev: balance_groups(&self.dev, key, seed::derive(seed, "balance/dev")),
            test: balance_groups(&self.test, key, seed::derive(seed, "balance/test")),
            specialization: self.specialization.clone(),
        }
    }

    pub fn task_len(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }
}

/// Class variable inside which groups are balanced (AC-SA vs AC-TD).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BalanceKey {
    Sentiment,
    Topic,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LanguageSelector {
    All,
    Only(Vec<usize>),
}

impl LanguageSelector {
    pub fn single(language: usize) -> Self {
        LanguageSelector::Only(vec![language])
    }

    pub fn admits(&self, language: usize) -> bool {
        match self {
            LanguageSelector::All => true,
            LanguageSelector::Only(ls) => ls.contains(&language),
        }
    }
}

/// Per-group specialization sample sizes; gender gets twice the age budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecializationSizes {
    pub gender: usize,
    pub age: usize,
}

impl Default for SpecializationSizes {
    fn default() -> Self {
        let age = 100;
        Self { gender: 2 * age, age }
    }
}

impl SpecializationSizes {
    pub fn for_factor(&self, factor: Factor) -> usize {
        match factor {
            Factor::Gender => self.gender,
            Factor::Age => self.age,
        }
    }
}

fn shuffled(mut reviews: Vec<Review>, rng: &mut seed::Rng) -> Vec<Review> {
    reviews.shuffle(rng);
    reviews
}

/// Reserves the specialization pool, then deals the remaining in-domain
/// reviews into train/dev/test (60/20/20) so that the group, sentiment,
/// topic and language marginals of every split track the pool.
pub fn split(reviews: &[Review], seed: u64, config: &SplitConfig) -> Result<SplitSet> {
    if !(0.0..1.0).contains(&config.specialization_fraction) {
        return Err(Error::Config(format!(
            "specialization_fraction {} outside [0, 1)",
            config.specialization_fraction
        )));
    }
    let mut cells: BTreeMap<(usize, usize), Vec<Review>> = BTreeMap::new();
    let mut specialization = Vec::new();
    for r in reviews {
        match r.domain {
            Domain::In => cells.entry((r.language, r.group)).or_default().push(r.clone()),
            Domain::Out => specialization.push(r.clone()),
        }
    }
    let small: Vec<String> = cells
        .iter()
        .filter(|(_, v)| v.len() < config.min_per_cell)
        .map(|((l, g), v)| format!("language {l} group {g} ({} reviews)", v.len()))
        .collect();
    if !small.is_empty() || cells.is_empty() {
        return Err(Error::Data(format!(
            "cells below {} reviews: {}",
            config.min_per_cell,
            if small.is_empty() { "no in-domain reviews".to_string() } else { small.join(", ") }
        )));
    }

    let mut rng = seed::rng(seed, "split");
    let mut task = Vec::new();
    for (_, cell) in cells {
        let cell = shuffled(cell, &mut rng);
        let reserve = (config.specialization_fraction * cell.len() as f64).round() as usize;
        let (spec, rest) = cell.split_at(reserve);
        specialization.extend_from_slice(spec);
        task.extend_from_slice(rest);
    }
    let task = shuffled(task, &mut rng);
    let [train, dev, test] = refine(deal(task));

    let by_id = |mut v: Vec<Review>| {
        v.sort_by_key(|r| r.id);
        v
    };
    Ok(SplitSet {
        train: by_id(train),
        dev: by_id(dev),
        test: by_id(test),
        specialization: by_id(specialization),
    })
}

/// Greedy deficit dealing: each review goes to the open split whose share
/// of the review's attributes lags furthest behind its target ratio.
fn deal(items: Vec<Review>) -> [Vec<Review>; 3] {
    let n = items.len();
    let train_n = (SPLIT_RATIOS[0] * n as f64).round() as usize;
    let dev_n = ((SPLIT_RATIOS[1] * n as f64).round() as usize).min(n - train_n);
    let capacity = [train_n, dev_n, n - train_n - dev_n];

    let attrs = |r: &Review| -> [(u8, usize); 5] {
        [
            (0, r.group),
            (1, r.sentiment),
            (2, r.topic),
            (3, r.language),
            (4, (r.group * 8 + r.sentiment) * 8 + r.topic),
        ]
    };
    let mut seen: HashMap<(u8, usize), f64> = HashMap::new();
    let mut assigned: [HashMap<(u8, usize), f64>; 3] = Default::default();
    let mut out: [Vec<Review>; 3] = Default::default();
    for (i, r) in items.into_iter().enumerate() {
        let keys = attrs(&r);
        for k in keys {
            *seen.entry(k).or_default() += 1.0;
        }
        let mut best = None;
        let mut best_score = f64::NEG_INFINITY;
        for s in 0..3 {
            if out[s].len() >= capacity[s] {
                continue;
            }
            let overall = SPLIT_RATIOS[s] * (i + 1) as f64 - out[s].len() as f64;
            let marginal: f64 = keys
                .iter()
                .map(|k| SPLIT_RATIOS[s] * seen[k] - assigned[s].get(k).copied().unwrap_or(0.0))
                .sum();
            let score = 2.0 * overall + marginal;
            if score > best_score + 1e-12 {
                best_score = score;
                best = Some(s);
            }
        }
        let s = best.expect("capacities sum to the item count");
        for k in keys {
            *assigned[s].entry(k).or_default() += 1.0;
        }
        out[s].push(r);
    }
    out
}

type Signature = [usize; 4];

fn signature(r: &Review) -> Signature {
    [r.group, r.sentiment, r.topic, r.language]
}

/// Pairwise swaps between splits, steepest first, until no swap lowers the
/// summed squared gap between each split's marginal counts and ratio × total.
/// Split sizes never change.
fn refine(mut parts: [Vec<Review>; 3]) -> [Vec<Review>; 3] {
    // marginal key: (attribute index, value)
    let mut total: HashMap<(usize, usize), f64> = HashMap::new();
    let mut count: [HashMap<(usize, usize), f64>; 3] = Default::default();
    let mut buckets: [BTreeMap<Signature, Vec<usize>>; 3] = Default::default();
    for (s, part) in parts.iter().enumerate() {
        for (i, r) in part.iter().enumerate() {
            let sig = signature(r);
            for (a, &v) in sig.iter().enumerate() {
                *total.entry((a, v)).or_default() += 1.0;
                *count[s].entry((a, v)).or_default() += 1.0;
            }
            buckets[s].entry(sig).or_default().push(i);
        }
    }
    let gap = |count: &[HashMap<(usize, usize), f64>; 3], s: usize, k: (usize, usize)| {
        count[s].get(&k).copied().unwrap_or(0.0) - SPLIT_RATIOS[s] * total[&k]
    };
    // Change in the objective when `x` moves from split s to t and `y` from t to s.
    let delta = |count: &[HashMap<(usize, usize), f64>; 3], s: usize, t: usize, x: &Signature, y: &Signature| {
        let mut d = 0.0;
        for a in 0..4 {
            if x[a] == y[a] {
                continue;
            }
            for (k, sign) in [((a, x[a]), -1.0), ((a, y[a]), 1.0)] {
                let (gs, gt) = (gap(count, s, k), gap(count, t, k));
                d += (gs + sign).powi(2) - gs * gs + (gt - sign).powi(2) - gt * gt;
            }
        }
        d
    };
    for _ in 0..10_000 {
        let mut best: Option<(f64, usize, usize, Signature, Signature)> = None;
        for s in 0..3 {
            for t in s + 1..3 {
                for x in buckets[s].keys() {
                    for y in buckets[t].keys() {
                        let d = delta(&count, s, t, x, y);
                        if d < -1e-9 && best.as_ref().is_none_or(|b| d < b.0 - 1e-12) {
                            best = Some((d, s, t, *x, *y));
                        }
                    }
                }
            }
        }
        let Some((_, s, t, x, y)) = best else { break };
        let i = pop_bucket(&mut buckets[s], &x);
        let j = pop_bucket(&mut buckets[t], &y);
        for a in 0..4 {
            for (part, k, c) in [(s, (a, x[a]), -1.0), (t, (a, x[a]), 1.0), (t, (a, y[a]), -1.0), (s, (a, y[a]), 1.0)] {
                *count[part].entry(k).or_default() += c;
            }
        }
        let (lo, hi) = parts.split_at_mut(t);
        std::mem::swap(&mut lo[s][i], &mut hi[0][j]);
        buckets[s].entry(y).or_default().push(i);
        buckets[t].entry(x).or_default().push(j);
    }
    parts
}

fn pop_bucket(buckets: &mut BTreeMap<Signature, Vec<usize>>, sig: &Signature) -> usize {
    let bucket = buckets.get_mut(sig).expect("signature present");
    let i = bucket.pop().expect("non-empty bucket");
    if bucket.is_empty() {
        buckets.remove(sig);
    }
    i
}

/// Downsamples the majority group inside every class of `key` so both
/// groups have equal counts per class.
pub fn balance_groups(reviews: &[Review], key: BalanceKey, seed: u64) -> Vec<Review> {
    let mut rng = seed::rng(seed, "balance");
    let mut by_class: BTreeMap<usize, [Vec<&Review>; NUM_GROUPS]> = BTreeMap::new();
    for r in reviews {
        let class = match key {
            BalanceKey::Sentiment => r.sentiment,
            BalanceKey::Topic => r.topic,
        };
        by_class.entry(class).or_default()[r.group].push(r);
    }
    let mut out = Vec::new();
    for (_, mut groups) in by_class {
        let keep = groups.iter().map(Vec::len).min().unwrap_or(0);
        for g in groups.iter_mut() {
            g.shuffle(&mut rng);
            out.extend(g.iter().take(keep).map(|r| (*r).clone()));
        }
    }
    out.sort_by_key(|r| r.id);
    out
}

/// Draws `n_per_group` reviews per group from the specialization pool,
/// restricted to `languages` and `domain`. `LanguageSelector::All` is the
/// multilingual setting; a single language the monolingual one.
pub fn sample_specialization(
    pool: &[Review],
    n_per_group: usize,
    languages: &LanguageSelector,
    domain: Domain,
    seed: u64,
) -> Result<Vec<Review>> {
    let mut rng = seed::rng(seed, "sample_specialization");
    let mut by_group: [Vec<&Review>; NUM_GROUPS] = Default::default();
    for r in pool {
        if r.domain == domain && languages.admits(r.language) {
            by_group[r.group].push(r);
        }
    }
    let available: Vec<usize> = by_group.iter().map(Vec::len).collect();
    if available.iter().any(|&a| a < n_per_group) {
        return Err(Error::Data(format!(
            "specialization pool too small: need {n_per_group} per group, available {available:?} ({languages:?}, domain {domain})"
        )));
    }
    let mut out = Vec::with_capacity(n_per_group * NUM_GROUPS);
    for group in by_group.iter_mut() {
        group.shuffle(&mut rng);
        out.extend(group.iter().take(n_per_group).map(|r| (*r).clone()));
    }
    out.sort_by_key(|r| r.id);
    Ok(out)
}

/// Splits off roughly `fraction` of every group as a held-out set.
pub fn holdout(reviews: &[Review], fraction: f64, seed: u64) -> (Vec<Review>, Vec<Review>) {
    let mut rng = seed::rng(seed, "holdout");
    let mut by_group: [Vec<Review>; NUM_GROUPS] = Default::default();
    for r in reviews {
        by_group[r.group].push(r.clone());
    }
    let (mut kept, mut held) = (Vec::new(), Vec::new());
    for mut g in by_group {
        g.shuffle(&mut rng);
        let h = (fraction * g.len() as f64).round() as usize;
        held.extend(g.drain(..h));
        kept.extend(g);
    }
    kept.sort_by_key(|r| r.id);
    held.sort_by_key(|r| r.id);
    (kept, held)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate, GeneratorConfig};
    use std::collections::HashSet;

    fn review(id: u64, group: usize, sentiment: usize, topic: usize) -> Review {
        Review {
            id,
            tokens: vec![4],
            language: 0,
            domain: Domain::In,
            group,
            sentiment,
            topic,
        }
    }

    #[test]
    fn hundred_task_reviews_split_60_20_20() {
        let reviews: Vec<Review> = (0..100).map(|i| review(i, (i % 2) as usize, (i % 3) as usize, (i % 5) as usize)).collect();
        let cfg = SplitConfig {
            specialization_fraction: 0.0,
            ..Default::default()
        };
        let s = split(&reviews, 1, &cfg).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (60, 20, 20));
        assert!(s.specialization.is_empty());
    }

    #[test]
    fn split_is_deterministic_and_a_partition() {
        let cfg = GeneratorConfig {
            n_languages: 2,
            ..Default::default()
        };
        let reviews = generate(&cfg, 60).unwrap();
        let a = split(&reviews, 9, &SplitConfig::default()).unwrap();
        let b = split(&reviews, 9, &SplitConfig::default()).unwrap();
        assert_eq!(a, b);
        let mut ids = HashSet::new();
        for r in a.train.iter().chain(&a.dev).chain(&a.test).chain(&a.specialization) {
            assert!(ids.insert(r.id), "review {} appears twice", r.id);
        }
        assert_eq!(ids.len(), reviews.len());
        assert!(a.specialization.iter().any(|r| r.domain == Domain::Out));
        assert!(a.train.iter().chain(&a.dev).chain(&a.test).all(|r| r.domain == Domain::In));
    }

    #[test]
    fn small_cell_is_reported() {
        let reviews: Vec<Review> = (0..15).map(|i| review(i, if i < 12 { 0 } else { 1 }, 0, 0)).collect();
        match split(&reviews, 0, &SplitConfig::default()) {
            Err(Error::Data(msg)) => assert!(msg.contains("group 1 (3 reviews)"), "{msg}"),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn balancing_downsamples_the_majority() {
        // 70/30 group mixture.
        let reviews: Vec<Review> = (0..200)
            .map(|i| review(i, usize::from(i % 10 >= 7), (i % 3) as usize, (i % 5) as usize))
            .collect();
        for key in [BalanceKey::Sentiment, BalanceKey::Topic] {
            let b = balance_groups(&reviews, key, 3);
            let g0 = b.iter().filter(|r| r.group == 0).count();
            let g1 = b.len() - g0;
            assert!(g0.abs_diff(g1) <= 1, "{g0} vs {g1}");
            // Oracle: sum over classes of min(group counts).
            let mut per_class: BTreeMap<usize, [usize; 2]> = BTreeMap::new();
            for r in &reviews {
                let c = if key == BalanceKey::Sentiment { r.sentiment } else { r.topic };
                per_class.entry(c).or_default()[r.group] += 1;
            }
            let expected: usize = per_class.values().map(|c| 2 * c[0].min(c[1])).sum();
            assert_eq!(b.len(), expected);
        }
    }

    #[test]
    fn specialization_sampling() {
        let cfg = GeneratorConfig::default();
        let reviews = generate(&cfg, 40).unwrap();
        let s = split(&reviews, 2, &SplitConfig::default()).unwrap();
        let sample = sample_specialization(&s.specialization, 50, &LanguageSelector::All, Domain::In, 4).unwrap();
        assert_eq!(sample.len(), 100);
        assert_eq!(sample.iter().filter(|r| r.group == 0).count(), 50);

        let mono = sample_specialization(&s.specialization, 10, &LanguageSelector::single(0), Domain::In, 4).unwrap();
        assert!(mono.iter().all(|r| r.language == 0));

        let err = sample_specialization(&s.specialization, 500, &LanguageSelector::single(0), Domain::In, 4).unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("available")));
    }

    #[test]
    fn gender_budget_is_twice_age() {
        let s = SpecializationSizes::default();
        assert_eq!(s.gender, 2 * s.age);
    }
}
