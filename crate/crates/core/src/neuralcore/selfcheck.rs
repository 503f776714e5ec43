//! Finite-difference verification of every primitive's backward pass.
//!
//! Each check builds a micro graph whose inputs are themselves parameters,
//! runs one analytic backward, then sweeps all values with central
//! differences. Used by unit tests and by the acceptance suite.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::attention::InterpretableMultiHeadAttention;
use super::gradcheck::{gradient_check, GradCheckReport};
use super::init;
use super::layers::*;
use super::loss::pinball_loss;
use super::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const PRIMITIVE_TOLERANCE: f64 = 1e-5;
const EPS: f64 = 1e-6;

fn fixed(shape: &[usize], name: &str, scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|i| init::unit(0xf1eed, name, init::Key::Idx(i), init::Key::Idx(1)) * scale)
        .collect();
    Tensor::from_vec(shape, data)
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn add_input(store: &mut ParamStore, name: &str, shape: &[usize], scale: f64) -> ParamId {
    store.add(name, fixed(shape, name, scale))
}

fn check_dense() -> GradCheckReport {
    let mut store = ParamStore::new();
    let x = add_input(&mut store, "x", &[3, 4], 1.0);
    let layer = Dense::new(&mut store, 7, "dense", 4, 5, true);
    let proj = fixed(&[3, 5], "proj", 1.0);
    let (_, cache) = layer.forward(&store, &store.value(x).clone());
    let dx = layer.backward(&mut store, &cache, &proj);
    store.grad_mut(x).add_assign(&dx);
    gradient_check(
        &mut store,
        |s| {
            let (y, _) = layer.forward(s, s.value(x));
            dot(&y, &proj)
        },
        EPS,
        PRIMITIVE_TOLERANCE,
    )
}

fn check_elu() -> GradCheckReport {
    let mut store = ParamStore::new();
    let x = add_input(&mut store, "x", &[2, 6], 2.0);
    let proj = fixed(&[2, 6], "proj", 1.0);
    let (_, cache) = elu_forward(store.value(x));
    let dx = elu_backward(&cache, &proj);
    store.grad_mut(x).add_assign(&dx);
    gradient_check(
        &mut store,
        |s| {
            let (y, _) = elu_forward(s.value(x));
            dot(&y, &proj)
        },
        EPS,
        PRIMITIVE_TOLERANCE,
    )
}

fn check_glu() -> GradCheckReport {
    let mut store = ParamStore::new();
    let gate = add_input(&mut store, "gate", &[2, 5], 1.5);
    let value = add_input(&mut store, "value", &[2, 5], 2.0);
    let proj = fixed(&[2, 5], "proj", 1.0);
    let (_, cache) = glu_forward(store.value(gate), store.value(value));
    let (dg, dv) = glu_backward(&cache, &proj);
    store.grad_mut(gate).add_assign(&dg);
    store.grad_mut(value).add_assign(&dv);
    gradient_check(
        &mut store,
        |s| {
            let (y, _) = glu_forward(s.value(gate), s.value(value));
            dot(&y, &proj)
        },
        EPS,
        PRIMITIVE_TOLERANCE,
    )
}

fn check_layer_norm() -> GradCheckReport {
    let mut store = ParamStore::new();
    let x = add_input(&mut store, "x", &[3, 6], 2.0);
    let ln = LayerNorm::new(&mut store, "ln", 6);
    // non-trivial gain/bias so their gradients are exercised off identity
    for (i, v) in store
        .value_mut(ln.gain)
        .data_mut()
        .iter_mut()
        .enumerate()
    {
        *v = 1.0 + 0.1 * i as f64;
    }
    let proj = fixed(&[3, 6], "proj", 1.0);
    let (_, cache) = ln.forward(&store, &store.value(x).clone());
    let dx = ln.backward(&mut store, &cache, &proj);
    store.grad_mut(x).add_assign(&dx);
    gradient_check(
        &mut store,
        |s| {
            let (y, _) = ln.forward(s, s.value(x));
            dot(&y, &proj)
        },
        EPS,
        PRIMITIVE_TOLERANCE,
    )
}

fn check_softmax() -> GradCheckReport {
    let mut store = ParamStore::new();
    let x = add_input(&mut store, "x", &[3, 5], 2.0);
    let proj = fixed(&[3, 5], "proj", 1.0);
    let y = softmax_forward(store.value(x));
    let dx = softmax_backward(&y, &proj);
    store.grad_mut(x).add_assign(&dx);
    gradient_check(
        &mut store,
        |s| dot(&softmax_forward(s.value(x)), &proj),
        EPS,
        PRIMITIVE_TOLERANCE,
    )
}

fn check_softmax_masked() -> GradCheckReport {
    let mut store = ParamStore::new();
    let x = add_input(&mut store, "x", &[2, 4], 2.0);
    let mask = [true, false, true, true, true, true, false, true];
    let proj = fixed(&[2, 4], "proj", 1.0);
    let y = softmax_masked(store.value(x), &mask).unwrap();
    let dx = softmax_backward(&y, &proj);
    store.grad_mut(x).add_assign(&dx);
    gradient_check(
        &mut store,
        |s| dot(&softmax_masked(s.value(x), &mask).unwrap(), &proj),
        EPS,
        PRIMITIVE_TOLERANCE,
    )
}

fn check_dropout() -> GradCheckReport {
    let mut store = ParamStore::new();
    let x = add_input(&mut store, "x", &[3, 4], 1.0);
    let proj = fixed(&[3, 4], "proj", 1.0);
    // fixed mask stream so the loss is a deterministic function of x
    let fwd = |s: &ParamStore| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (y, _) = dropout_forward(s.value(x), 0.4, &mut rng);
        dot(&y, &proj)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (_, cache) = dropout_forward(store.value(x), 0.4, &mut rng);
    let dx = dropout_backward(&cache, &proj);
    store.grad_mut(x).add_assign(&dx);
    gradient_check(&mut store, fwd, EPS, PRIMITIVE_TOLERANCE)
}

fn check_embedding() -> GradCheckReport {
    let mut store = ParamStore::new();
    let categories: Vec<String> = ["oak", "pine", "birch"].iter().map(|s| s.to_string()).collect();
    let emb = Embedding::new(&mut store, 11, "emb", &categories, 4);
    let indices = [0usize, 2, 1, 1, 3]; // includes the unknown row
    let proj = fixed(&[5, 4], "proj", 1.0);
    let (_, cache) = emb.forward(&store, &indices).unwrap();
    emb.backward(&mut store, &cache, &proj);
    gradient_check(
        &mut store,
        |s| {
            let (y, _) = emb.forward(s, &indices).unwrap();
            dot(&y, &proj)
        },
        EPS,
        PRIMITIVE_TOLERANCE,
    )
}

fn check_elementwise() -> GradCheckReport {
    let mut store = ParamStore::new();
    let a = add_input(&mut store, "a", &[2, 3], 1.5);
    let b = add_input(&mut store, "b", &[2, 3], 1.5);
    let c = add_input(&mut store, "c", &[2, 3], 1.5);
    let proj = fixed(&[2, 3], "proj", 1.0);
    // out = a*b + c
    let fwd = |s: &ParamStore| {
        let mut out = s.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(s.value(b).data()) {
            *o *= v;
        }
        out.add_assign(s.value(c));
        dot(&out, &proj)
    };
    let mut da = proj.clone();
    for (d, v) in da.data_mut().iter_mut().zip(store.value(b).data()) {
        *d *= v;
    }
    let mut db = proj.clone();
    for (d, v) in db.data_mut().iter_mut().zip(store.value(a).data()) {
        *d *= v;
    }
    store.grad_mut(a).add_assign(&da);
    store.grad_mut(b).add_assign(&db);
    store.grad_mut(c).add_assign(&proj);
    gradient_check(&mut store, fwd, EPS, PRIMITIVE_TOLERANCE)
}

fn check_concat() -> GradCheckReport {
    let mut store = ParamStore::new();
    let a = add_input(&mut store, "a", &[2, 2], 1.0);
    let b = add_input(&mut store, "b", &[2, 3], 1.0);
    let proj = fixed(&[2, 5], "proj", 1.0);
    let parts = split_cols(&proj, &[2, 3]);
    store.grad_mut(a).add_assign(&parts[0]);
    store.grad_mut(b).add_assign(&parts[1]);
    gradient_check(
        &mut store,
        |s| dot(&concat_cols(&[s.value(a), s.value(b)]), &proj),
        EPS,
        PRIMITIVE_TOLERANCE,
    )
}

fn check_lstm() -> GradCheckReport {
    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, 13, "cell", 3, 4);
    let xs: Vec<ParamId> = (0..3)
        .map(|t| add_input(&mut store, &format!("x{t}"), &[2, 3], 1.0))
        .collect();
    let h0 = add_input(&mut store, "h0", &[2, 4], 0.5);
    let c0 = add_input(&mut store, "c0", &[2, 4], 0.5);
    let pa = fixed(&[2, 4], "pa", 1.0);
    let pb = fixed(&[2, 4], "pb", 1.0);
    let fwd = |s: &ParamStore| {
        let mut h = s.value(h0).clone();
        let mut c = s.value(c0).clone();
        for x in &xs {
            let (h2, c2, _) = cell.step(s, s.value(*x), &h, &c).unwrap();
            h = h2;
            c = c2;
        }
        dot(&h, &pa) + dot(&c, &pb)
    };
    // analytic: unroll, then backprop through time
    let mut caches = Vec::new();
    {
        let mut h = store.value(h0).clone();
        let mut c = store.value(c0).clone();
        for x in &xs {
            let (h2, c2, cache) = cell.step(&store, &store.value(*x).clone(), &h, &c).unwrap();
            caches.push(cache);
            h = h2;
            c = c2;
        }
    }
    let mut dh = pa.clone();
    let mut dc = pb.clone();
    for (t, cache) in caches.iter().enumerate().rev() {
        let (dx, dh_prev, dc_prev) = cell.backward_step(&mut store, cache, &dh, &dc);
        store.grad_mut(xs[t]).add_assign(&dx);
        dh = dh_prev;
        dc = dc_prev;
    }
    store.grad_mut(h0).add_assign(&dh);
    store.grad_mut(c0).add_assign(&dc);
    gradient_check(&mut store, fwd, EPS, PRIMITIVE_TOLERANCE)
}

fn check_attention() -> GradCheckReport {
    let mut store = ParamStore::new();
    let attn = InterpretableMultiHeadAttention::new(&mut store, 17, "attn", 4, 2);
    let n_enc = 3;
    let total = 5; // two decoder positions exercise the causal mask
    let xs: Vec<ParamId> = (0..total)
        .map(|t| add_input(&mut store, &format!("pos{t}"), &[2, 4], 1.0))
        .collect();
    let projs: Vec<Tensor> = (0..2).map(|j| fixed(&[2, 4], &format!("proj{j}"), 1.0)).collect();
    let fwd = |s: &ParamStore| {
        let seq: Vec<Tensor> = xs.iter().map(|x| s.value(*x).clone()).collect();
        let (outs, _, _) = attn.forward(s, &seq, n_enc).unwrap();
        outs.iter().zip(&projs).map(|(o, p)| dot(o, p)).sum()
    };
    let seq: Vec<Tensor> = xs.iter().map(|x| store.value(*x).clone()).collect();
    let (_, _, cache) = attn.forward(&store, &seq, n_enc).unwrap();
    let dseq = attn.backward(&mut store, &cache, &projs);
    for (x, d) in xs.iter().zip(&dseq) {
        store.grad_mut(*x).add_assign(d);
    }
    gradient_check(&mut store, fwd, EPS, PRIMITIVE_TOLERANCE)
}

fn check_pinball() -> GradCheckReport {
    let mut store = ParamStore::new();
    let yhat = add_input(&mut store, "yhat", &[4, 3], 1.0);
    let y = [0.31, -0.27, 1.53, 0.84];
    let quantiles = [0.1, 0.5, 0.9];
    let mask = [false, false, true, false];
    let (_, grad) = pinball_loss(&y, store.value(yhat), &quantiles, &mask).unwrap();
    store.grad_mut(yhat).add_assign(&grad);
    gradient_check(
        &mut store,
        |s| pinball_loss(&y, s.value(yhat), &quantiles, &mask).unwrap().0,
        EPS,
        PRIMITIVE_TOLERANCE,
    )
}

/// Runs every primitive check; returns (name, max relative error) pairs.
pub fn primitive_reports() -> Vec<(&'static str, GradCheckReport)> {
    vec![
        ("dense", check_dense()),
        ("elu", check_elu()),
        ("glu", check_glu()),
        ("layer_norm", check_layer_norm()),
        ("softmax", check_softmax()),
        ("softmax_masked", check_softmax_masked()),
        ("dropout", check_dropout()),
        ("embedding", check_embedding()),
        ("elementwise_add_mul", check_elementwise()),
        ("concat", check_concat()),
        ("lstm_cell", check_lstm()),
        ("multihead_attention", check_attention()),
        ("quantile_loss", check_pinball()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_matches_finite_differences() {
        for (name, report) in primitive_reports() {
            assert!(
                report.passed(),
                "{name}: max rel err {} (worst tensor {:?})",
                report.max_rel_err,
                report.worst()
            );
        }
    }
}
