//! Top-k candidate ranking, Recall@k / MRR@k, and per-model scoring heads.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Half, ItemSet, SplitDataset};
use crate::params::{dot, ParamStore};
use crate::rankers::{cdae_hidden, item_counts};
use crate::rater::svd_predict;

/// Scores every item for a user; higher ranks first.
pub trait Scorer: Sync {
    fn score_items(&self, user: usize, out: &mut [f64]);
}

fn by_score_then_id(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// The `k` best items outside `exclude`, descending score, ties by
/// ascending id. Shorter than `k` when fewer candidates exist.
pub fn rank_candidates(scores: &[f64], exclude: &ItemSet, k: usize) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..scores.len()).filter(|&i| !exclude.contains(i)).collect();
    let cmp = by_score_then_id(scores);
    if k == 0 {
        return Vec::new();
    }
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k - 1, &cmp);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(&cmp);
    candidates
}

/// `(recall, reciprocal rank)` of the hidden item within `topk`.
pub fn metrics_for_user(topk: &[usize], hidden: usize, k: usize) -> (f64, f64) {
    match topk.iter().take(k).position(|&i| i == hidden) {
        Some(pos) => (1.0, 1.0 / (pos + 1) as f64),
        None => (0.0, 0.0),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub k: usize,
    pub recall_at_k: f64,
    pub mrr_at_k: f64,
    pub users_evaluated: usize,
    /// Hidden item absent from train; scored as a miss.
    pub users_skipped: usize,
}

/// Evaluation context over one split; caches per-user train items.
pub struct Evaluator<'a> {
    split: &'a SplitDataset,
    user_items: Vec<ItemSet>,
}

impl<'a> Evaluator<'a> {
    pub fn new(split: &'a SplitDataset) -> Self {
        Self {
            split,
            user_items: split.user_items(),
        }
    }

    pub fn user_items(&self) -> &[ItemSet] {
        &self.user_items
    }

    /// Mean Recall@k and MRR@k over every user in `half`. Users whose hidden
    /// item has no dense id count as misses in the denominator.
    pub fn evaluate(&self, model: &dyn Scorer, label: &str, half: Half, k: usize) -> Result<EvalReport> {
        let held = self.split.half(half);
        if held.is_empty() {
            return Err(Error::config(format!("{half:?} half is empty")));
        }
        if k == 0 {
            return Err(Error::config("k must be >= 1"));
        }
        let n_items = self.split.n_items();
        let per_user: Vec<Option<(f64, f64)>> = held
            .par_iter()
            .map_init(
                || vec![0.0; n_items],
                |scores, h| {
                    let hidden = h.item?;
                    model.score_items(h.user, scores);
                    let top = rank_candidates(scores, &self.user_items[h.user], k);
                    Some(metrics_for_user(&top, hidden, k))
                },
            )
            .collect();

        let (mut recall, mut rr, mut skipped) = (0.0, 0.0, 0);
        for m in &per_user {
            match m {
                Some((r, q)) => {
                    recall += r;
                    rr += q;
                }
                None => skipped += 1,
            }
        }
        let n = held.len() as f64;
        Ok(EvalReport {
            label: label.to_owned(),
            k,
            recall_at_k: recall / n,
            mrr_at_k: rr / n,
            users_evaluated: held.len() - skipped,
            users_skipped: skipped,
        })
    }
}

pub fn evaluate(model: &dyn Scorer, label: &str, split: &SplitDataset, half: Half, k: usize) -> Result<EvalReport> {
    Evaluator::new(split).evaluate(model, label, half, k)
}

/// Train-frequency scores.
pub struct PopularityScorer {
    counts: Vec<f64>,
}

impl PopularityScorer {
    pub fn new(split: &SplitDataset) -> Self {
        Self {
            counts: item_counts(&split.train, split.n_items())
                .into_iter()
                .map(|c| c as f64)
                .collect(),
        }
    }
}

impl Scorer for PopularityScorer {
    fn score_items(&self, _user: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.counts);
    }
}

/// `p_u . q_i + b_i` with the ranking item bias.
pub struct BprScorer<'a>(pub &'a ParamStore);

impl Scorer for BprScorer<'_> {
    fn score_items(&self, user: usize, out: &mut [f64]) {
        let s = self.0;
        let p = s.users.value.row(user);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(p, s.items.value.row(i)) + s.rank_item_bias.value.row(i)[0];
        }
    }
}

/// Uncorrupted CDAE forward pass; ranks by output logit, which orders items
/// the same way as the sigmoid output.
pub struct CdaeScorer<'a> {
    pub store: &'a ParamStore,
    pub user_items: &'a [ItemSet],
}

impl Scorer for CdaeScorer<'_> {
    fn score_items(&self, user: usize, out: &mut [f64]) {
        let s = self.store;
        let h = cdae_hidden(s, user, self.user_items[user].as_slice(), 1.0);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(&h, s.items.value.row(i)) + s.cdae_output_bias.value.row(i)[0];
        }
    }
}

/// Predicted rating from biased MF.
pub struct RatingScorer<'a>(pub &'a ParamStore);

impl Scorer for RatingScorer<'_> {
    fn score_items(&self, user: usize, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = svd_predict(self.0, user, i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn excludes_and_sorts() {
        let exclude: ItemSet = [0].into_iter().collect();
        assert_eq!(rank_candidates(&[0.9, 0.8, 0.7], &exclude, 2), vec![1, 2]);
        assert_eq!(rank_candidates(&[1.0; 5], &ItemSet::default(), 3), vec![0, 1, 2]);
        assert_eq!(rank_candidates(&[0.1, 0.2], &exclude, 5), vec![1]);
    }

    #[test]
    fn user_metric_cases() {
        assert_eq!(metrics_for_user(&[7, 1, 2], 7, 10), (1.0, 1.0));
        assert_eq!(metrics_for_user(&[0, 1, 2, 3, 4, 5, 6, 8, 9, 10], 7, 10), (0.0, 0.0));
        assert_eq!(metrics_for_user(&[0, 1, 2, 7], 7, 10), (1.0, 0.25));
    }

    proptest! {
        #[test]
        fn matches_full_sort_oracle(scores in prop::collection::vec(-5i32..5, 1..1000), k in 1usize..30, ex in prop::collection::vec(0usize..1000, 0..50)) {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let exclude: ItemSet = ex.into_iter().collect();
            let mut oracle: Vec<usize> = (0..scores.len()).filter(|i| !exclude.contains(*i)).collect();
            oracle.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
            oracle.truncate(k);
            let got = rank_candidates(&scores, &exclude, k);
            prop_assert!(got.iter().all(|&i| !exclude.contains(i)));
            prop_assert_eq!(got, oracle);
        }

        #[test]
        fn monotone_transform_preserves_ranking(levels in prop::collection::vec(-24i32..24, 2..200), k in 1usize..20, hidden in 0usize..200) {
            // Coarse score levels keep distinct scores distinct after the transform.
            let scores: Vec<f64> = levels.iter().map(|&l| l as f64 / 8.0).collect();
            let hidden = hidden % scores.len();
            let exclude = ItemSet::default();
            let a = rank_candidates(&scores, &exclude, k);
            let moved: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 1.0).collect();
            let b = rank_candidates(&moved, &exclude, k);
            prop_assert_eq!(&a, &b);
            let (r, q) = metrics_for_user(&a, hidden, k);
            prop_assert!(q <= r);
            prop_assert_eq!((r, q), metrics_for_user(&b, hidden, k));
        }
    }
}
