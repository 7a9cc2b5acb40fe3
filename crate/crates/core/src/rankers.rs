//! Ranking-task objectives: BPR, CDAE and the popularity baseline.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ingest::{ItemSet, Rating};
use crate::params::{dot, Group, Hyperparams, ParamStore, SparseGrad, Terms};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Draws an item uniformly from those the user has not interacted with.
pub fn sample_negative<R: Rng + ?Sized>(observed: &ItemSet, n_items: usize, rng: &mut R) -> Result<usize> {
    let free = n_items.saturating_sub(observed.len());
    if free == 0 {
        return Err(Error::Sampling { items: n_items });
    }
    if observed.len() * 2 <= n_items {
        loop {
            let j = rng.gen_range(0..n_items);
            if !observed.contains(j) {
                return Ok(j);
            }
        }
    }
    // dense user: pick the n-th free item directly
    let mut nth = rng.gen_range(0..free);
    let mut taken = observed.iter().peekable();
    for j in 0..n_items {
        if taken.peek() == Some(&j) {
            taken.next();
            continue;
        }
        if nth == 0 {
            return Ok(j);
        }
        nth -= 1;
    }
    unreachable!("free item count was positive")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BprTriple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Ranking score `p_u . q_i + b_i` used by BPR and by the BPR ranking head.
pub fn bpr_score(store: &ParamStore, user: usize, item: usize) -> f64 {
    dot(store.users.value.row(user), store.items.value.row(item)) + store.rank_item_bias.value.row(item)[0]
}

/// `-ln sigmoid(x_uij)` with `x_uij = s(u, i) - s(u, j)`.
pub fn bpr_terms(t: &BprTriple, store: &ParamStore) -> Terms {
    let p = store.users.value.row(t.user);
    let qi = store.items.value.row(t.pos);
    let qj = store.items.value.row(t.neg);
    let x = bpr_score(store, t.user, t.pos) - bpr_score(store, t.user, t.neg);
    let loss = softplus(-x);
    // dL/dx = -sigmoid(-x)
    let dx = -sigmoid(-x);

    let mut grad = SparseGrad::new();
    grad.add(Group::Users, t.user, qi.iter().zip(qj).map(|(a, b)| dx * (a - b)).collect());
    grad.add(Group::Items, t.pos, p.iter().map(|v| dx * v).collect());
    grad.add(Group::Items, t.neg, p.iter().map(|v| -dx * v).collect());
    grad.add_scalar(Group::RankItemBias, t.pos, dx);
    grad.add_scalar(Group::RankItemBias, t.neg, -dx);
    Terms { loss, grad }
}

/// One denoising-autoencoder training example for a user.
#[derive(Clone, Debug, PartialEq)]
pub struct CdaeExample {
    pub user: usize,
    pub observed: Vec<usize>,
    /// Inputs that survived dropout.
    pub corrupted: Vec<usize>,
    /// Sampled unobserved items (label 0). May repeat.
    pub negatives: Vec<usize>,
}

impl CdaeExample {
    /// Drops each observed item with probability `corruption` and samples
    /// `negatives_per_pos` negatives per observed item.
    pub fn sample<R: Rng + ?Sized>(
        user: usize,
        observed: &ItemSet,
        n_items: usize,
        corruption: f64,
        negatives_per_pos: usize,
        rng: &mut R,
    ) -> Self {
        let corrupted = observed.iter().filter(|_| rng.gen::<f64>() >= corruption).collect();
        let mut negatives = Vec::with_capacity(observed.len() * negatives_per_pos);
        if observed.len() < n_items {
            for _ in 0..observed.len() * negatives_per_pos {
                negatives.push(sample_negative(observed, n_items, rng).expect("free items exist"));
            }
        }
        Self {
            user,
            observed: observed.as_slice().to_vec(),
            corrupted,
            negatives,
        }
    }
}

/// Hidden layer `sigmoid(scale * sum_i W[i] + p_u + b_h)`.
pub fn cdae_hidden(store: &ParamStore, user: usize, inputs: &[usize], scale: f64) -> Vec<f64> {
    let mut acc = vec![0.0; store.dim];
    for &i in inputs {
        for (a, w) in acc.iter_mut().zip(store.cdae_encoder.value.row(i)) {
            *a += w;
        }
    }
    let p = store.users.value.row(user);
    let b = store.cdae_hidden_bias.value.row(0);
    acc.iter()
        .zip(p)
        .zip(b)
        .map(|((a, p), b)| sigmoid(scale * a + p + b))
        .collect()
}

/// Output logit for one item given a hidden vector.
pub fn cdae_logit(store: &ParamStore, hidden: &[f64], item: usize) -> f64 {
    dot(hidden, store.items.value.row(item)) + store.cdae_output_bias.value.row(item)[0]
}

/// Logistic reconstruction loss over observed items (label 1) and sampled
/// negatives (label 0). Returns `None` for a user with no observed items.
pub fn cdae_terms(ex: &CdaeExample, store: &ParamStore, hp: &Hyperparams) -> Option<Terms> {
    if ex.observed.is_empty() {
        return None;
    }
    let scale = 1.0 / (1.0 - hp.cdae_corruption);
    let h = cdae_hidden(store, ex.user, &ex.corrupted, scale);

    let mut grad = SparseGrad::new();
    let mut loss = 0.0;
    let mut dh = vec![0.0; store.dim];
    let targets = ex.observed.iter().map(|&i| (i, 1.0)).chain(ex.negatives.iter().map(|&i| (i, 0.0)));
    for (item, label) in targets {
        let z = cdae_logit(store, &h, item);
        loss += softplus(z) - label * z;
        let dz = sigmoid(z) - label;
        let q = store.items.value.row(item);
        for (g, qk) in dh.iter_mut().zip(q) {
            *g += dz * qk;
        }
        grad.add(Group::Items, item, h.iter().map(|v| dz * v).collect());
        grad.add_scalar(Group::CdaeOutputBias, item, dz);
    }

    let da: Vec<f64> = dh.iter().zip(&h).map(|(g, v)| g * v * (1.0 - v)).collect();
    grad.add(Group::Users, ex.user, da.clone());
    grad.add(Group::CdaeHiddenBias, 0, da.clone());
    let scaled: Vec<f64> = da.iter().map(|g| g * scale).collect();
    for &i in &ex.corrupted {
        grad.add(Group::CdaeEncoder, i, scaled.clone());
    }
    Some(Terms { loss, grad })
}

pub fn item_counts(train: &[Rating], n_items: usize) -> Vec<usize> {
    let mut counts = vec![0; n_items];
    for r in train {
        counts[r.item] += 1;
    }
    counts
}

/// The `k` most frequent train items, ties by ascending id.
pub fn popularity_rank(train: &[Rating], n_items: usize, k: usize) -> Vec<usize> {
    let counts = item_counts(train, n_items);
    let mut items: Vec<usize> = (0..n_items).collect();
    items.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    items.truncate(k);
    items
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::init_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(seed: u64) -> ParamStore {
        let hp = Hyperparams {
            dim: 4,
            seed,
            ..Hyperparams::default()
        };
        init_params(6, 8, &hp).unwrap()
    }

    #[test]
    fn single_free_item_is_always_returned() {
        let seen: ItemSet = [0, 1].into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_negative(&seen, 3, &mut rng).unwrap(), 2);
        }
        let all: ItemSet = (0..3).collect();
        assert!(matches!(sample_negative(&all, 3, &mut rng), Err(Error::Sampling { items: 3 })));
    }

    #[test]
    fn negatives_avoid_observed_items() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seen in [(0..10).collect::<ItemSet>(), (0..90).step_by(2).chain(90..99).collect()] {
            for _ in 0..10_000 {
                let j = sample_negative(&seen, 100, &mut rng).unwrap();
                assert!(j < 100 && !seen.contains(j));
            }
        }
    }

    #[test]
    fn negatives_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let seen = ItemSet::default();
        let mut counts = [0usize; 100];
        let draws = 100_000;
        for _ in 0..draws {
            counts[sample_negative(&seen, 100, &mut rng).unwrap()] += 1;
        }
        let expected = draws as f64 / 100.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // chi-square, 99 dof, upper 1% point
        assert!(chi2 < 134.64, "chi2 = {chi2}");
    }

    #[test]
    fn dense_user_sampling_is_uniform_over_free_items() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seen: ItemSet = (0..20).filter(|i| i % 5 != 0).collect();
        let mut counts = [0usize; 20];
        for _ in 0..40_000 {
            counts[sample_negative(&seen, 20, &mut rng).unwrap()] += 1;
        }
        for i in 0..20 {
            if i % 5 == 0 {
                assert!((counts[i] as f64 - 10_000.0).abs() < 500.0, "{counts:?}");
            } else {
                assert_eq!(counts[i], 0);
            }
        }
    }

    fn bpr_store_with_margin(x: f64) -> ParamStore {
        let mut s = store(5);
        for g in [Group::Users, Group::Items] {
            s.param_mut(g).value.as_mut_slice().fill(0.0);
        }
        s.rank_item_bias.value.row_mut(1)[0] = x;
        s
    }

    #[test]
    fn bpr_loss_reference_values() {
        let t = BprTriple { user: 0, pos: 1, neg: 2 };
        let l0 = bpr_terms(&t, &bpr_store_with_margin(0.0)).loss;
        assert!((l0 - std::f64::consts::LN_2).abs() < 1e-12);
        let l20 = bpr_terms(&t, &bpr_store_with_margin(20.0)).loss;
        assert!((l20 - 2.061153618e-9).abs() < 1e-17);
    }

    #[test]
    fn bpr_antisymmetry_and_direction() {
        let s = store(9);
        for (i, j) in [(0, 1), (3, 7), (5, 2)] {
            let a = bpr_terms(&BprTriple { user: 2, pos: i, neg: j }, &s);
            let b = bpr_terms(&BprTriple { user: 2, pos: j, neg: i }, &s);
            let x = bpr_score(&s, 2, i) - bpr_score(&s, 2, j);
            assert!((a.loss - softplus(-x)).abs() < 1e-12);
            assert!((b.loss - softplus(x)).abs() < 1e-12);
            // the positive item's bias gradient is dL/dx and always negative
            assert!(a.grad.get(Group::RankItemBias, i).unwrap()[0] < 0.0);
        }
    }

    #[test]
    fn cdae_zero_params_give_half_outputs() {
        let mut s = store(1);
        for g in Group::ALL {
            s.param_mut(g).value.as_mut_slice().fill(0.0);
        }
        let hp = Hyperparams::default();
        let ex = CdaeExample {
            user: 0,
            observed: vec![1, 2],
            corrupted: vec![1],
            negatives: vec![4, 5, 6],
        };
        let h = cdae_hidden(&s, 0, &ex.corrupted, 2.0);
        assert!(h.iter().all(|&v| v == 0.5));
        let t = cdae_terms(&ex, &s, &hp).unwrap();
        assert!((t.loss - 5.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!(cdae_logit(&s, &h, 3) == 0.0);
    }

    #[test]
    fn cdae_without_corruption_keeps_all_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let observed: ItemSet = [1, 3, 5].into_iter().collect();
        let ex = CdaeExample::sample(0, &observed, 8, 0.0, 2, &mut rng);
        assert_eq!(ex.corrupted, vec![1, 3, 5]);
        assert_eq!(ex.negatives.len(), 6);
        assert!(ex.negatives.iter().all(|&j| !observed.contains(j)));
    }

    #[test]
    fn cdae_corruption_only_removes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let observed: ItemSet = (0..50).collect();
        let ex = CdaeExample::sample(0, &observed, 60, 0.5, 1, &mut rng);
        assert!(ex.corrupted.iter().all(|&i| observed.contains(i)));
        assert!(ex.corrupted.len() > 10 && ex.corrupted.len() < 40);
    }

    #[test]
    fn cdae_empty_user_is_skipped() {
        let ex = CdaeExample {
            user: 0,
            observed: vec![],
            corrupted: vec![],
            negatives: vec![],
        };
        assert!(cdae_terms(&ex, &store(1), &Hyperparams::default()).is_none());
    }

    #[test]
    fn cdae_loss_vanishes_with_confident_correct_outputs() {
        let mut s = store(2);
        let ex = CdaeExample {
            user: 0,
            observed: vec![1, 2],
            corrupted: vec![1, 2],
            negatives: vec![5],
        };
        let hp = Hyperparams::default();
        let base = cdae_terms(&ex, &s, &hp).unwrap().loss;
        for (i, b) in [(1, 30.0), (2, 30.0), (5, -30.0)] {
            s.cdae_output_bias.value.row_mut(i)[0] = b;
        }
        let confident = cdae_terms(&ex, &s, &hp).unwrap().loss;
        assert!(confident < 1e-10 && confident < base);
    }

    #[test]
    fn popularity_orders_by_count_then_id() {
        let r = |item| Rating {
            user: 0,
            item,
            rating: 3.0,
            timestamp: 0,
        };
        let train: Vec<Rating> = [0, 0, 0, 0, 0, 1, 1, 1, 2].into_iter().map(r).collect();
        assert_eq!(popularity_rank(&train, 3, 2), vec![0, 1]);
        let flat: Vec<Rating> = [2, 1, 0].into_iter().map(r).collect();
        assert_eq!(popularity_rank(&flat, 3, 3), vec![0, 1, 2]);
        assert_eq!(popularity_rank(&flat, 3, 10).len(), 3);
    }

    #[test]
    fn popularity_matches_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let train: Vec<Rating> = (0..1000)
            .map(|_| Rating {
                user: 0,
                item: rng.gen_range(0..40usize).min(rng.gen_range(0..40usize)),
                rating: 3.0,
                timestamp: 0,
            })
            .collect();
        let mut counter = std::collections::BTreeMap::new();
        for r in &train {
            *counter.entry(r.item).or_insert(0usize) += 1;
        }
        let mut oracle: Vec<(usize, usize)> = (0..40).map(|i| (i, *counter.get(&i).unwrap_or(&0))).collect();
        oracle.sort_by_key(|&(i, c)| (std::cmp::Reverse(c), i));
        let expect: Vec<usize> = oracle.iter().take(10).map(|&(i, _)| i).collect();
        assert_eq!(popularity_rank(&train, 40, 10), expect);
    }
}
