//! AdaGrad training for the single-task, vanilla multi-task and two-phase
//! (rank-then-rate) regimes, with validation-based early stopping and grid
//! search.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::{BprScorer, CdaeScorer, Evaluator, RatingScorer, Scorer};
use crate::ingest::{Half, ItemSet, Rating, SplitDataset};
use crate::params::{init_params, Hyperparams, ParamStore, SparseGrad};
use crate::rankers::{bpr_terms, cdae_terms, sample_negative, BprTriple, CdaeExample};
use crate::rater::{rnr_rating_terms, svd_terms, RatingExample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    SingleRank,
    SingleRate,
    Vanilla,
    Rnr,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::SingleRank => "single-rank",
            Mode::SingleRate => "single-rate",
            Mode::Vanilla => "vanilla",
            Mode::Rnr => "rnr",
        }
    }

    pub fn is_multi_task(self) -> bool {
        matches!(self, Mode::Vanilla | Mode::Rnr)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single-rank" => Ok(Mode::SingleRank),
            "single-rate" => Ok(Mode::SingleRate),
            "vanilla" => Ok(Mode::Vanilla),
            "rnr" => Ok(Mode::Rnr),
            other => Err(Error::config(format!("unknown training mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ranker {
    Bpr,
    Cdae,
}

impl Ranker {
    pub fn as_str(self) -> &'static str {
        match self {
            Ranker::Bpr => "bpr",
            Ranker::Cdae => "cdae",
        }
    }
}

impl fmt::Display for Ranker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ranker {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bpr" => Ok(Ranker::Bpr),
            "cdae" => Ok(Ranker::Cdae),
            other => Err(Error::config(format!("unknown ranker {other:?}"))),
        }
    }
}

/// Model name in the style of a results table row.
pub fn model_label(mode: Mode, ranker: Ranker) -> String {
    let r = match ranker {
        Ranker::Bpr => "BPR",
        Ranker::Cdae => "CDAE",
    };
    match mode {
        Mode::SingleRank => r.to_owned(),
        Mode::SingleRate => "SVD".to_owned(),
        Mode::Vanilla => format!("Vanilla({r},SVD)"),
        Mode::Rnr => format!("RnR({r},SVD)"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaGradStep {
    pub lr: f64,
    pub eps: f64,
}

impl AdaGradStep {
    pub fn new(lr: f64) -> Self {
        Self { lr, eps: 1e-8 }
    }
}

/// `acc += g^2; param -= lr * g / (sqrt(acc) + eps)`
pub fn adagrad_apply(param: &mut [f64], acc: &mut [f64], grad: &[f64], step: AdaGradStep) -> Result<()> {
    if param.len() != grad.len() {
        return Err(Error::shape("adagrad gradient", param.len(), grad.len()));
    }
    if param.len() != acc.len() {
        return Err(Error::shape("adagrad accumulator", param.len(), acc.len()));
    }
    let n = param.len();
    let (acc, grad) = (&mut acc[..n], &grad[..n]);
    for i in 0..n {
        let g = grad[i];
        acc[i] += g * g;
        param[i] -= step.lr * g / (acc[i].sqrt() + step.eps);
    }
    Ok(())
}

/// Training-side view of a split.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub n_users: usize,
    pub n_items: usize,
    pub ratings: Vec<Rating>,
    pub user_items: Vec<ItemSet>,
    pub mu: f64,
}

impl TrainData {
    pub fn new(split: &SplitDataset) -> Self {
        Self {
            n_users: split.n_users(),
            n_items: split.n_items(),
            ratings: split.train.clone(),
            user_items: split.user_items(),
            mu: split.mean_rating(),
        }
    }
}

/// Independent RNG streams for the ranking and rating tasks, so that a
/// task's sampling schedule does not depend on whether the other runs.
#[derive(Clone, Debug)]
pub struct TrainRngs {
    pub ranking: ChaCha8Rng,
    pub rating: ChaCha8Rng,
}

impl TrainRngs {
    pub fn new(seed: u64) -> Self {
        let mut ranking = ChaCha8Rng::seed_from_u64(seed);
        ranking.set_stream(1);
        let mut rating = ChaCha8Rng::seed_from_u64(seed);
        rating.set_stream(2);
        Self { ranking, rating }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub objective: f64,
    pub val_recall: f64,
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub mode: Mode,
    pub ranker: Ranker,
    pub hp: Hyperparams,
    pub store: ParamStore,
    pub epoch_log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub rngs: TrainRngs,
}

impl TrainRun {
    pub fn new(mode: Mode, ranker: Ranker, hp: Hyperparams, data: &TrainData) -> Result<Self> {
        hp.validate()?;
        let mut store = init_params(data.n_users, data.n_items, &hp)?;
        store.mu = data.mu;
        Ok(Self {
            mode,
            ranker,
            rngs: TrainRngs::new(hp.seed),
            hp,
            store,
            epoch_log: Vec::new(),
            best_epoch: 0,
        })
    }

    /// Loss weights of the ranking and rating streams; `None` when the
    /// stream is not part of this mode.
    pub fn branch_weights(&self) -> (Option<f64>, Option<f64>) {
        match self.mode {
            Mode::SingleRank => (Some(1.0), None),
            Mode::SingleRate => (None, Some(1.0)),
            Mode::Vanilla | Mode::Rnr => (Some(self.hp.alpha), Some(1.0 - self.hp.alpha)),
        }
    }

    pub fn label(&self) -> String {
        model_label(self.mode, self.ranker)
    }

    /// The head used for top-k evaluation: predicted rating for the
    /// rating-only model, the ranking head otherwise.
    pub fn scorer<'a>(&'a self, user_items: &'a [ItemSet]) -> Box<dyn Scorer + 'a> {
        match (self.mode, self.ranker) {
            (Mode::SingleRate, _) => Box::new(RatingScorer(&self.store)),
            (_, Ranker::Bpr) => Box::new(BprScorer(&self.store)),
            (_, Ranker::Cdae) => Box::new(CdaeScorer {
                store: &self.store,
                user_items,
            }),
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Sample {
    Rank(usize),
    Rate(usize),
}

/// Merges two streams so that each one's samples are spread evenly over the
/// epoch.
fn interleave(n_rank: usize, n_rate: usize) -> impl Iterator<Item = (bool, usize)> {
    let (mut i, mut j) = (0usize, 0usize);
    std::iter::from_fn(move || {
        if i >= n_rank && j >= n_rate {
            return None;
        }
        let take_rank = j >= n_rate || (i < n_rank && (i as u128) * (n_rate as u128) <= (j as u128) * (n_rank as u128));
        if take_rank {
            i += 1;
            Some((true, i - 1))
        } else {
            j += 1;
            Some((false, j - 1))
        }
    })
}

fn sum_squares(xs: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 4];
    let chunks = xs.chunks_exact(4);
    let tail: f64 = chunks.remainder().iter().map(|x| x * x).sum();
    for c in chunks {
        for l in 0..4 {
            lanes[l] += c[l] * c[l];
        }
    }
    lanes.iter().sum::<f64>() + tail
}

/// Applies `weight * grad + lambda * param` with AdaGrad to every touched
/// row. Shared embeddings are left alone when the branch weight is zero.
/// Returns the `lambda / 2 * ||touched||^2` penalty before the update.
fn apply_grad(
    store: &mut ParamStore,
    grad: &SparseGrad,
    weight: f64,
    lambda: f64,
    step: AdaGradStep,
    buf: &mut Vec<f64>,
) -> f64 {
    let mut penalty = 0.0;
    for (group, row, g) in grad.iter() {
        if weight == 0.0 && group.is_shared() {
            continue;
        }
        let param = store.param_mut(group);
        let start = row * param.value.cols();
        let range = start..start + g.len();
        let value = &mut param.value.as_mut_slice()[range.clone()];
        let acc = &mut param.accum.as_mut_slice()[range];
        buf.clear();
        buf.extend(g.iter().zip(value.iter()).map(|(&gk, &v)| weight * gk + lambda * v));
        penalty += 0.5 * lambda * sum_squares(value);
        adagrad_apply(value, acc, buf, step).expect("gradient block matches its parameter slice");
    }
    penalty
}

/// One pass over the interleaved ranking and rating streams. Returns the
/// weighted objective accumulated over the epoch, decay penalty included.
pub fn train_epoch(run: &mut TrainRun, data: &TrainData, epoch: usize) -> Result<f64> {
    let (w_rank, w_rate) = run.branch_weights();
    let hp = run.hp.clone();
    let step = AdaGradStep::new(hp.lr);

    let mut rank_stream: Vec<usize> = match (w_rank, run.ranker) {
        (None, _) => Vec::new(),
        (Some(_), Ranker::Bpr) => (0..data.ratings.len())
            .flat_map(|r| std::iter::repeat_n(r, hp.bpr_negatives_per_pos))
            .collect(),
        (Some(_), Ranker::Cdae) => (0..data.n_users).filter(|&u| !data.user_items[u].is_empty()).collect(),
    };
    rank_stream.shuffle(&mut run.rngs.ranking);
    let mut rate_stream: Vec<usize> = match w_rate {
        None => Vec::new(),
        Some(_) => (0..data.ratings.len()).collect(),
    };
    rate_stream.shuffle(&mut run.rngs.rating);

    let mut objective = 0.0;
    let mut buf = Vec::new();
    for (pos, (is_rank, idx)) in interleave(rank_stream.len(), rate_stream.len()).enumerate() {
        let sample = if is_rank {
            Sample::Rank(rank_stream[idx])
        } else {
            Sample::Rate(rate_stream[idx])
        };
        let (terms, weight) = match sample {
            Sample::Rank(i) => {
                let w = w_rank.unwrap_or(0.0);
                let terms = match run.ranker {
                    Ranker::Bpr => {
                        let r = data.ratings[i];
                        let observed = &data.user_items[r.user];
                        match sample_negative(observed, data.n_items, &mut run.rngs.ranking) {
                            Ok(neg) => Some(bpr_terms(
                                &BprTriple {
                                    user: r.user,
                                    pos: r.item,
                                    neg,
                                },
                                &run.store,
                            )),
                            Err(Error::Sampling { .. }) => None,
                            Err(e) => return Err(e),
                        }
                    }
                    Ranker::Cdae => {
                        let ex = CdaeExample::sample(
                            i,
                            &data.user_items[i],
                            data.n_items,
                            hp.cdae_corruption,
                            hp.cdae_negatives,
                            &mut run.rngs.ranking,
                        );
                        cdae_terms(&ex, &run.store, &hp)
                    }
                };
                (terms, w)
            }
            Sample::Rate(i) => {
                let r = data.ratings[i];
                let ex = RatingExample {
                    user: r.user,
                    item: r.item,
                    rating: r.rating,
                };
                let terms = match run.mode {
                    Mode::Rnr => rnr_rating_terms(&ex, &run.store),
                    _ => svd_terms(&ex, &run.store),
                };
                (Some(terms), w_rate.unwrap_or(0.0))
            }
        };
        let Some(terms) = terms else { continue };
        if !terms.loss.is_finite() {
            return Err(Error::Divergence { epoch, sample: pos });
        }
        let penalty = apply_grad(&mut run.store, &terms.grad, weight, hp.lambda, step, &mut buf);
        objective += weight * terms.loss + penalty;
    }
    if !objective.is_finite() {
        return Err(Error::Divergence {
            epoch,
            sample: rank_stream.len() + rate_stream.len(),
        });
    }
    Ok(objective)
}

/// Patience-based stopping on a higher-is-better score. `patience == 0`
/// disables stopping.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, score: f64) -> Observation {
        let improved = self.best.is_none_or(|(_, b)| score > b);
        if improved {
            self.best = Some((epoch, score));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        Observation {
            improved,
            stop: self.patience > 0 && self.since_best >= self.patience,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Trains up to `epochs_max` epochs, keeping the parameters with the best
/// validation Recall@k.
pub fn fit(run: &mut TrainRun, data: &TrainData, eval: &Evaluator<'_>) -> Result<f64> {
    let mut stopper = EarlyStopping::new(run.hp.patience);
    let mut best_store = run.store.clone();
    for epoch in 1..=run.hp.epochs_max {
        let objective = train_epoch(run, data, epoch)?;
        let val_recall = {
            let scorer = run.scorer(eval.user_items());
            eval.evaluate(scorer.as_ref(), "", Half::Validation, run.hp.k)?.recall_at_k
        };
        run.epoch_log.push(EpochRecord {
            epoch,
            objective,
            val_recall,
        });
        let obs = stopper.observe(epoch, val_recall);
        if obs.improved {
            best_store = run.store.clone();
            run.best_epoch = epoch;
        }
        if obs.stop {
            break;
        }
    }
    run.store = best_store;
    Ok(stopper.best().map_or(0.0, |(_, s)| s))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub alpha: f64,
    pub lambda: f64,
    pub val_recall: Option<f64>,
    pub best_epoch: usize,
    pub epochs_trained: usize,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct GridOutcome {
    pub best: TrainRun,
    pub val_recall: f64,
    pub cells: Vec<GridCell>,
}

/// Trains every `(alpha, lambda)` pair and returns the run with the highest
/// validation Recall@k; ties go to the smaller lambda, then the larger alpha.
pub fn grid_search(
    base: &Hyperparams,
    alphas: &[f64],
    lambdas: &[f64],
    mode: Mode,
    ranker: Ranker,
    data: &TrainData,
    eval: &Evaluator<'_>,
) -> Result<GridOutcome> {
    if alphas.is_empty() || lambdas.is_empty() {
        return Err(Error::config("grid search needs at least one alpha and one lambda"));
    }
    let grid: Vec<(f64, f64)> = alphas
        .iter()
        .flat_map(|&a| lambdas.iter().map(move |&l| (a, l)))
        .collect();
    for &(alpha, lambda) in &grid {
        Hyperparams {
            alpha,
            lambda,
            ..base.clone()
        }
        .validate()?;
    }

    let results: Vec<Result<(TrainRun, f64)>> = grid
        .par_iter()
        .map(|&(alpha, lambda)| {
            let hp = Hyperparams {
                alpha,
                lambda,
                ..base.clone()
            };
            let mut run = TrainRun::new(mode, ranker, hp, data)?;
            let score = fit(&mut run, data, eval)?;
            Ok((run, score))
        })
        .collect();

    let mut cells = Vec::with_capacity(grid.len());
    let mut best: Option<(TrainRun, f64)> = None;
    let mut last_err = None;
    for (&(alpha, lambda), result) in grid.iter().zip(results) {
        match result {
            Ok((run, score)) => {
                cells.push(GridCell {
                    alpha,
                    lambda,
                    val_recall: Some(score),
                    best_epoch: run.best_epoch,
                    epochs_trained: run.epoch_log.len(),
                    error: None,
                });
                let better = match &best {
                    None => true,
                    Some((b, bs)) => {
                        score > *bs
                            || (score == *bs
                                && (lambda < b.hp.lambda || (lambda == b.hp.lambda && alpha > b.hp.alpha)))
                    }
                };
                if better {
                    best = Some((run, score));
                }
            }
            Err(e) => {
                cells.push(GridCell {
                    alpha,
                    lambda,
                    val_recall: None,
                    best_epoch: 0,
                    epochs_trained: 0,
                    error: Some(e.to_string()),
                });
                last_err = Some(e);
            }
        }
    }
    match best {
        Some((best, val_recall)) => Ok(GridOutcome {
            best,
            val_recall,
            cells,
        }),
        None => Err(Error::GridFailure(Box::new(
            last_err.expect("non-empty grid produced no result"),
        ))),
    }
}
