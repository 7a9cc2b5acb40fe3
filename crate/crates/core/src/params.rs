//! Learnable parameters, their initialization, and the shared building blocks
//! (latent-factor score, post-consumption item vector, tied FC projection).

use std::collections::BTreeMap;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Weight of the ranking loss; the rating loss gets `1 - alpha`.
    pub alpha: f64,
    pub lambda: f64,
    pub lr: f64,
    pub dim: usize,
    pub k: usize,
    pub epochs_max: usize,
    pub patience: usize,
    pub seed: u64,
    pub cdae_corruption: f64,
    pub cdae_negatives: usize,
    pub bpr_negatives_per_pos: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            lambda: 0.001,
            lr: 0.001,
            dim: 50,
            k: 10,
            epochs_max: 200,
            patience: 10,
            seed: 42,
            cdae_corruption: 0.5,
            cdae_negatives: 5,
            bpr_negatives_per_pos: 1,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::config(msg));
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail("alpha must lie in [0, 1]");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail("lambda must be a finite value >= 0");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be a finite value > 0");
        }
        if self.dim == 0 {
            return fail("dim must be >= 1");
        }
        if self.k == 0 {
            return fail("k must be >= 1");
        }
        if !(0.0..1.0).contains(&self.cdae_corruption) {
            return fail("cdae corruption must lie in [0, 1)");
        }
        if self.bpr_negatives_per_pos == 0 {
            return fail("bpr negatives per positive must be >= 1");
        }
        Ok(())
    }
}

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("matrix data", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn fill_uniform(&mut self, bound: f64, rng: &mut ChaCha8Rng) {
        let dist = Uniform::new_inclusive(-bound, bound);
        for x in &mut self.data {
            *x = dist.sample(rng);
        }
    }
}

/// A parameter array together with its AdaGrad accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Matrix,
    pub accum: Matrix,
}

impl Param {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            value: Matrix::zeros(rows, cols),
            accum: Matrix::zeros(rows, cols),
        }
    }
}

/// Identifies one parameter array inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    Users,
    Items,
    ItemDev,
    FcWeight,
    FcBias,
    UserBias,
    ItemBias,
    RankItemBias,
    CdaeEncoder,
    CdaeHiddenBias,
    CdaeOutputBias,
}

impl Group {
    /// Storage order, also used by the checkpoint format.
    pub const ALL: [Group; 11] = [
        Group::Users,
        Group::Items,
        Group::ItemDev,
        Group::FcWeight,
        Group::FcBias,
        Group::UserBias,
        Group::ItemBias,
        Group::RankItemBias,
        Group::CdaeEncoder,
        Group::CdaeHiddenBias,
        Group::CdaeOutputBias,
    ];

    /// Embedding matrices shared between the ranking and rating tasks.
    pub fn is_shared(self) -> bool {
        matches!(self, Group::Users | Group::Items)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    pub n_users: usize,
    pub n_items: usize,
    pub dim: usize,
    /// Global mean rating; fixed from train data, not learned.
    pub mu: f64,
    pub users: Param,
    pub items: Param,
    pub item_dev: Param,
    /// d x d, output-major: `out[j] = sum_k w[j][k] * x[k]`.
    pub fc_weight: Param,
    pub fc_bias: Param,
    pub user_bias: Param,
    pub item_bias: Param,
    pub rank_item_bias: Param,
    pub cdae_encoder: Param,
    pub cdae_hidden_bias: Param,
    pub cdae_output_bias: Param,
}

fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Allocates every parameter group. Embeddings, the FC weight and the CDAE
/// encoder are Xavier-uniform; the deviation matrix and all biases start at
/// zero. `mu` is left at zero for the trainer to fill in.
pub fn init_params(n_users: usize, n_items: usize, hp: &Hyperparams) -> Result<ParamStore> {
    if n_users == 0 || n_items == 0 {
        return Err(Error::config(format!(
            "need at least one user and one item (got N={n_users}, M={n_items})"
        )));
    }
    if hp.dim == 0 {
        return Err(Error::config("dim must be >= 1"));
    }
    let d = hp.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut store = ParamStore {
        n_users,
        n_items,
        dim: d,
        mu: 0.0,
        users: Param::zeros(n_users, d),
        items: Param::zeros(n_items, d),
        item_dev: Param::zeros(n_items, d),
        fc_weight: Param::zeros(d, d),
        fc_bias: Param::zeros(1, d),
        user_bias: Param::zeros(n_users, 1),
        item_bias: Param::zeros(n_items, 1),
        rank_item_bias: Param::zeros(n_items, 1),
        cdae_encoder: Param::zeros(n_items, d),
        cdae_hidden_bias: Param::zeros(1, d),
        cdae_output_bias: Param::zeros(n_items, 1),
    };
    store.users.value.fill_uniform(xavier_bound(n_users, d), &mut rng);
    store.items.value.fill_uniform(xavier_bound(n_items, d), &mut rng);
    store.fc_weight.value.fill_uniform(xavier_bound(d, d), &mut rng);
    store.cdae_encoder.value.fill_uniform(xavier_bound(n_items, d), &mut rng);
    Ok(store)
}

impl ParamStore {
    pub fn param(&self, group: Group) -> &Param {
        match group {
            Group::Users => &self.users,
            Group::Items => &self.items,
            Group::ItemDev => &self.item_dev,
            Group::FcWeight => &self.fc_weight,
            Group::FcBias => &self.fc_bias,
            Group::UserBias => &self.user_bias,
            Group::ItemBias => &self.item_bias,
            Group::RankItemBias => &self.rank_item_bias,
            Group::CdaeEncoder => &self.cdae_encoder,
            Group::CdaeHiddenBias => &self.cdae_hidden_bias,
            Group::CdaeOutputBias => &self.cdae_output_bias,
        }
    }

    pub fn param_mut(&mut self, group: Group) -> &mut Param {
        match group {
            Group::Users => &mut self.users,
            Group::Items => &mut self.items,
            Group::ItemDev => &mut self.item_dev,
            Group::FcWeight => &mut self.fc_weight,
            Group::FcBias => &mut self.fc_bias,
            Group::UserBias => &mut self.user_bias,
            Group::ItemBias => &mut self.item_bias,
            Group::RankItemBias => &mut self.rank_item_bias,
            Group::CdaeEncoder => &mut self.cdae_encoder,
            Group::CdaeHiddenBias => &mut self.cdae_hidden_bias,
            Group::CdaeOutputBias => &mut self.cdae_output_bias,
        }
    }

    /// The single tied projection used for both user and item inputs.
    pub fn fc(&self) -> Fc<'_> {
        Fc {
            weight: &self.fc_weight.value,
            bias: self.fc_bias.value.row(0),
        }
    }

    /// Post-consumption item vector `q_i + q_i^d`.
    pub fn post_item(&self, item: usize) -> Vec<f64> {
        post_item(self.items.value.row(item), self.item_dev.value.row(item))
            .expect("item and deviation rows share the embedding width")
    }

    pub fn is_finite(&self) -> bool {
        Group::ALL
            .iter()
            .all(|&g| self.param(g).value.as_slice().iter().all(|x| x.is_finite()))
            && self.mu.is_finite()
    }
}

/// Gradient over a sparse set of parameter rows. Entries are keyed by
/// `(group, first row)` and may span several consecutive rows; repeated
/// additions to the same key are summed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseGrad {
    entries: BTreeMap<(Group, usize), Vec<f64>>,
}

impl SparseGrad {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, group: Group, row: usize, values: Vec<f64>) {
        match self.entries.entry((group, row)) {
            std::collections::btree_map::Entry::Vacant(slot) => {
                slot.insert(values);
            }
            std::collections::btree_map::Entry::Occupied(mut slot) => {
                let acc = slot.get_mut();
                assert_eq!(acc.len(), values.len(), "gradient block width changed for {group:?}[{row}]");
                for (a, v) in acc.iter_mut().zip(values) {
                    *a += v;
                }
            }
        }
    }

    pub fn add_scalar(&mut self, group: Group, row: usize, value: f64) {
        self.add(group, row, vec![value]);
    }

    pub fn get(&self, group: Group, row: usize) -> Option<&[f64]> {
        self.entries.get(&(group, row)).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Group, usize, &[f64])> {
        self.entries.iter().map(|(&(g, r), v)| (g, r, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Loss value and gradient of one training sample.
#[derive(Clone, Debug)]
pub struct Terms {
    pub loss: f64,
    pub grad: SparseGrad,
}

pub fn post_item(q: &[f64], q_dev: &[f64]) -> Result<Vec<f64>> {
    if q.len() != q_dev.len() {
        return Err(Error::shape("post_item", q.len(), q_dev.len()));
    }
    Ok(q.iter().zip(q_dev).map(|(a, b)| a + b).collect())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `p . q + bias`
pub fn score_dot(p: &[f64], q: &[f64], bias: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape("score_dot", p.len(), q.len()));
    }
    Ok(dot(p, q) + bias)
}

/// Borrowed view of the FC parameters.
#[derive(Clone, Copy, Debug)]
pub struct Fc<'a> {
    pub weight: &'a Matrix,
    pub bias: &'a [f64],
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcOutput {
    pub value: Vec<f64>,
    pub pre_activation: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcGrad {
    pub x: Vec<f64>,
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Fc<'_> {
    fn check(&self, x: &[f64]) -> Result<()> {
        let d = self.weight.cols();
        if x.len() != d {
            return Err(Error::shape("fc input", d, x.len()));
        }
        if self.bias.len() != self.weight.rows() {
            return Err(Error::shape("fc bias", self.weight.rows(), self.bias.len()));
        }
        Ok(())
    }
}

/// `tanh(W x + c)`
pub fn fc_map(x: &[f64], fc: Fc<'_>) -> Result<FcOutput> {
    fc.check(x)?;
    let pre_activation: Vec<f64> = (0..fc.weight.rows())
        .map(|j| dot(fc.weight.row(j), x) + fc.bias[j])
        .collect();
    let value = pre_activation.iter().map(|z| z.tanh()).collect();
    Ok(FcOutput {
        value,
        pre_activation,
    })
}

/// Back-propagates `upstream = dL/d(value)` through [`fc_map`].
pub fn fc_backward(upstream: &[f64], cache: &FcOutput, x: &[f64], fc: Fc<'_>) -> Result<FcGrad> {
    fc.check(x)?;
    let out = fc.weight.rows();
    if upstream.len() != out {
        return Err(Error::shape("fc upstream gradient", out, upstream.len()));
    }
    if cache.value.len() != out {
        return Err(Error::shape("fc cache", out, cache.value.len()));
    }
    let g_pre: Vec<f64> = upstream
        .iter()
        .zip(&cache.value)
        .map(|(g, y)| g * (1.0 - y * y))
        .collect();
    let mut weight = Matrix::zeros(out, x.len());
    let mut grad_x = vec![0.0; x.len()];
    for (j, &g) in g_pre.iter().enumerate() {
        let w_row = fc.weight.row(j);
        for (k, gw) in weight.row_mut(j).iter_mut().enumerate() {
            *gw = g * x[k];
            grad_x[k] += w_row[k] * g;
        }
    }
    Ok(FcGrad {
        x: grad_x,
        weight,
        bias: g_pre,
    })
}
