//! Rating-prediction objectives: biased MF (SVD) and the post-consumption
//! branch, which rates through the deviation-adjusted item vector and the
//! tied FC projection.

use crate::params::{dot, fc_map, Group, ParamStore, SparseGrad, Terms};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatingExample {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
}

fn biases(store: &ParamStore, user: usize, item: usize) -> f64 {
    store.mu + store.user_bias.value.row(user)[0] + store.item_bias.value.row(item)[0]
}

/// `mu + b_u + b_i + p_u . q_i`, unclamped.
pub fn svd_predict(store: &ParamStore, user: usize, item: usize) -> f64 {
    biases(store, user, item) + dot(store.users.value.row(user), store.items.value.row(item))
}

/// Squared error of [`svd_predict`]. `mu` is held fixed.
pub fn svd_terms(ex: &RatingExample, store: &ParamStore) -> Terms {
    let pred = svd_predict(store, ex.user, ex.item);
    let resid = ex.rating - pred;
    let dpred = -2.0 * resid;
    let p = store.users.value.row(ex.user);
    let q = store.items.value.row(ex.item);

    let mut grad = SparseGrad::new();
    grad.add(Group::Users, ex.user, q.iter().map(|v| dpred * v).collect());
    grad.add(Group::Items, ex.item, p.iter().map(|v| dpred * v).collect());
    grad.add_scalar(Group::UserBias, ex.user, dpred);
    grad.add_scalar(Group::ItemBias, ex.item, dpred);
    Terms {
        loss: resid * resid,
        grad,
    }
}

/// `mu + b_u + b_i + fc(p_u) . fc(q_i + q_i^d)`.
pub fn rnr_predict(store: &ParamStore, user: usize, item: usize) -> f64 {
    let fc = store.fc();
    let pu = fc_map(store.users.value.row(user), fc).expect("user row width is dim");
    let qi = fc_map(&store.post_item(item), fc).expect("item row width is dim");
    biases(store, user, item) + dot(&pu.value, &qi.value)
}

/// Squared error of [`rnr_predict`]. The FC gradient is the sum of the user
/// and item path contributions; the deviation row receives exactly the
/// gradient of the post-consumption vector.
pub fn rnr_rating_terms(ex: &RatingExample, store: &ParamStore) -> Terms {
    let fc = store.fc();
    let p = store.users.value.row(ex.user);
    let q_post = store.post_item(ex.item);
    let user_out = fc_map(p, fc).expect("user row width is dim");
    let item_out = fc_map(&q_post, fc).expect("item row width is dim");

    let pred = biases(store, ex.user, ex.item) + dot(&user_out.value, &item_out.value);
    let resid = ex.rating - pred;
    let dpred = -2.0 * resid;

    // Back-propagate through both tanh layers at once: the shared weight
    // gradient is g_user (x) p + g_item (x) q_post.
    let d = store.dim;
    let g_user: Vec<f64> = (0..d)
        .map(|j| dpred * item_out.value[j] * (1.0 - user_out.value[j] * user_out.value[j]))
        .collect();
    let g_item: Vec<f64> = (0..d)
        .map(|j| dpred * user_out.value[j] * (1.0 - item_out.value[j] * item_out.value[j]))
        .collect();
    let mut grad_p = vec![0.0; d];
    let mut grad_q = vec![0.0; d];
    let mut grad_w = Vec::with_capacity(d * d);
    for j in 0..d {
        let (gu, gi) = (g_user[j], g_item[j]);
        let w_row = fc.weight.row(j);
        grad_w.extend(p.iter().zip(&q_post).map(|(pk, qk)| gu * pk + gi * qk));
        for k in 0..d {
            grad_p[k] += w_row[k] * gu;
            grad_q[k] += w_row[k] * gi;
        }
    }
    let grad_c: Vec<f64> = g_user.iter().zip(&g_item).map(|(a, b)| a + b).collect();

    let mut grad = SparseGrad::new();
    grad.add(Group::Users, ex.user, grad_p);
    grad.add(Group::Items, ex.item, grad_q.clone());
    grad.add(Group::ItemDev, ex.item, grad_q);
    grad.add(Group::FcWeight, 0, grad_w);
    grad.add(Group::FcBias, 0, grad_c);
    grad.add_scalar(Group::UserBias, ex.user, dpred);
    grad.add_scalar(Group::ItemBias, ex.item, dpred);
    Terms {
        loss: resid * resid,
        grad,
    }
}
