//! Differentiable primitives with explicit forward and backward passes.
//!
//! Each forward returns its output together with a cache of whatever the
//! matching backward needs. Backwards return gradients w.r.t. inputs and
//! accumulate parameter gradients into the [`ParamStore`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::init::{self, Key};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// Dense (affine)
// ---------------------------------------------------------------------------

pub struct Dense {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

pub struct DenseCache {
    x: Tensor,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        seed: u64,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Self {
        let rows: Vec<Key> = (0..in_dim).map(Key::Idx).collect();
        let cols: Vec<Key> = (0..out_dim).map(Key::Idx).collect();
        Self::new_keyed(store, seed, name, &rows, &cols, bias)
    }

    /// Constructor with explicit axis keys, used where an axis corresponds
    /// to named variables (the variable-selection weight blocks).
    pub fn new_keyed(
        store: &mut ParamStore,
        seed: u64,
        name: &str,
        rows: &[Key<'_>],
        cols: &[Key<'_>],
        bias: bool,
    ) -> Self {
        let (in_dim, out_dim) = (rows.len(), cols.len());
        let scale = init::xavier_bound(in_dim, out_dim);
        let w = store.add(
            format!("{name}.w"),
            init::matrix(seed, &format!("{name}.w"), rows, cols, scale),
        );
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[out_dim])));
        Dense { w, b, in_dim, out_dim }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> (Tensor, DenseCache) {
        debug_assert_eq!(x.cols(), self.in_dim, "dense input width");
        let mut y = x.matmul(store.value(self.w));
        if let Some(b) = self.b {
            let bias = store.value(b);
            for r in 0..y.rows() {
                for (v, bv) in y.row_mut(r).iter_mut().zip(bias.data()) {
                    *v += bv;
                }
            }
        }
        (y, DenseCache { x: x.clone() })
    }

    pub fn backward(&self, store: &mut ParamStore, cache: &DenseCache, dy: &Tensor) -> Tensor {
        let dw = cache.x.matmul_t_self(dy);
        store.grad_mut(self.w).add_assign(&dw);
        if let Some(b) = self.b {
            let db = dy.sum_rows();
            store.grad_mut(b).add_assign(&db);
        }
        dy.matmul_t_other(store.value(self.w))
    }
}

// ---------------------------------------------------------------------------
// ELU
// ---------------------------------------------------------------------------

pub struct EluCache {
    y: Tensor,
    positive: Vec<bool>,
}

pub fn elu_forward(x: &Tensor) -> (Tensor, EluCache) {
    let y = x.map(|v| if v > 0.0 { v } else { v.exp_m1() });
    let positive = x.data().iter().map(|&v| v > 0.0).collect();
    (y.clone(), EluCache { y, positive })
}

pub fn elu_backward(cache: &EluCache, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for ((d, &pos), &yv) in dx
        .data_mut()
        .iter_mut()
        .zip(&cache.positive)
        .zip(cache.y.data())
    {
        if !pos {
            *d *= yv + 1.0; // d/dx (e^x - 1) = e^x = y + 1
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// GLU gate: sigmoid(gate) * value
// ---------------------------------------------------------------------------

pub struct GluCache {
    sig: Tensor,
    value: Tensor,
}

pub fn glu_forward(gate_pre: &Tensor, value: &Tensor) -> (Tensor, GluCache) {
    debug_assert_eq!(gate_pre.shape(), value.shape(), "glu shapes");
    let sig = gate_pre.map(sigmoid);
    let mut y = sig.clone();
    for (o, v) in y.data_mut().iter_mut().zip(value.data()) {
        *o *= v;
    }
    (
        y,
        GluCache {
            sig,
            value: value.clone(),
        },
    )
}

/// Returns (d_gate_pre, d_value).
pub fn glu_backward(cache: &GluCache, dy: &Tensor) -> (Tensor, Tensor) {
    let mut dgate = dy.clone();
    let mut dvalue = dy.clone();
    for (((dg, dv), s), v) in dgate
        .data_mut()
        .iter_mut()
        .zip(dvalue.data_mut())
        .zip(cache.sig.data())
        .zip(cache.value.data())
    {
        let sig_grad = s * (1.0 - s);
        *dg *= v * sig_grad;
        *dv *= s;
    }
    (dgate, dvalue)
}

// ---------------------------------------------------------------------------
// Layer normalization (last dimension), with learned gain and bias
// ---------------------------------------------------------------------------

pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
    pub eps: f64,
}

pub struct LayerNormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self::new_keyed(store, name, &(0..dim).map(Key::Idx).collect::<Vec<_>>())
    }

    pub fn new_keyed(store: &mut ParamStore, name: &str, keys: &[Key<'_>]) -> Self {
        let dim = keys.len();
        let gain = store.add(format!("{name}.gain"), Tensor::from_vec(&[dim], vec![1.0; dim]));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[dim]));
        // eps bounds the inverse std at zero-variance rows (constant input
        // channels hit this exactly at init) while staying well inside the
        // variance-1 contract for unit-scale inputs
        LayerNorm {
            gain,
            bias,
            dim,
            eps: 1e-6,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> (Tensor, LayerNormCache) {
        debug_assert_eq!(x.cols(), self.dim, "layer norm width");
        let (n, d) = (x.rows(), x.cols());
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(n);
        for r in 0..n {
            let row = xhat.row_mut(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + self.eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * istd;
            }
            inv_std.push(istd);
        }
        let gain = store.value(self.gain);
        let bias = store.value(self.bias);
        let mut y = xhat.clone();
        for r in 0..n {
            for ((v, g), b) in y.row_mut(r).iter_mut().zip(gain.data()).zip(bias.data()) {
                *v = *v * g + b;
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, store: &mut ParamStore, cache: &LayerNormCache, dy: &Tensor) -> Tensor {
        let (n, d) = (dy.rows(), dy.cols());
        let gain = store.value(self.gain).clone();
        let mut dgain = Tensor::zeros(&[d]);
        let mut dbias = Tensor::zeros(&[d]);
        let mut dx = Tensor::zeros(dy.shape());
        for r in 0..n {
            let dy_row = dy.row(r);
            let xhat_row = cache.xhat.row(r);
            for j in 0..d {
                dgain.data_mut()[j] += dy_row[j] * xhat_row[j];
                dbias.data_mut()[j] += dy_row[j];
            }
            // dxhat = dy * gain
            let dxhat: Vec<f64> = dy_row
                .iter()
                .zip(gain.data())
                .map(|(dyv, g)| dyv * g)
                .collect();
            let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
            let mean_dxhat_xhat = dxhat
                .iter()
                .zip(xhat_row)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / d as f64;
            let istd = cache.inv_std[r];
            for j in 0..d {
                dx.row_mut(r)[j] = istd * (dxhat[j] - mean_dxhat - xhat_row[j] * mean_dxhat_xhat);
            }
        }
        store.grad_mut(self.gain).add_assign(&dgain);
        store.grad_mut(self.bias).add_assign(&dbias);
        dx
    }
}

// ---------------------------------------------------------------------------
// Softmax (last dimension), optionally masked
// ---------------------------------------------------------------------------

pub fn softmax_forward(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    let (n, _d) = (y.rows(), y.cols());
    for r in 0..n {
        let row = y.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    y
}

/// Softmax over unmasked positions only; masked positions get weight 0.
/// Errors if a row has every position masked.
pub fn softmax_masked(x: &Tensor, allowed: &[bool]) -> Result<Tensor> {
    debug_assert_eq!(x.len(), allowed.len());
    let mut y = x.clone();
    let (n, d) = (y.rows(), y.cols());
    for r in 0..n {
        let row = y.row_mut(r);
        let mask = &allowed[r * d..(r + 1) * d];
        let max = row
            .iter()
            .zip(mask)
            .filter(|(_, m)| **m)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::shape(
                "softmax_masked",
                format!("row {r}: all positions masked"),
            ));
        }
        let mut sum = 0.0;
        for (v, m) in row.iter_mut().zip(mask) {
            if *m {
                *v = (*v - max).exp();
                sum += *v;
            } else {
                *v = 0.0;
            }
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(y)
}

/// Backward of softmax given its output `y`: dx = y * (dy - sum(dy*y)).
/// Masked positions have y = 0 so their dx is 0 automatically.
pub fn softmax_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let (n, d) = (y.rows(), y.cols());
    let mut dx = Tensor::zeros(y.shape());
    for r in 0..n {
        let yr = y.row(r);
        let dyr = dy.row(r);
        let dot: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
        for j in 0..d {
            dx.row_mut(r)[j] = yr[j] * (dyr[j] - dot);
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// Dropout (train-time only, inverted scaling)
// ---------------------------------------------------------------------------

pub struct DropoutCache {
    mask: Option<Vec<f64>>,
}

/// Applies inverted dropout when `rate > 0`; with rate 0 this is an exact
/// identity (no RNG draw), so dropout is the only stochastic forward element.
pub fn dropout_forward(x: &Tensor, rate: f64, rng: &mut ChaCha8Rng) -> (Tensor, DropoutCache) {
    if rate <= 0.0 {
        return (x.clone(), DropoutCache { mask: None });
    }
    let keep = 1.0 - rate;
    let mask: Vec<f64> = (0..x.len())
        .map(|_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    let mut y = x.clone();
    for (v, m) in y.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    (y, DropoutCache { mask: Some(mask) })
}

pub fn dropout_backward(cache: &DropoutCache, dy: &Tensor) -> Tensor {
    match &cache.mask {
        None => dy.clone(),
        Some(mask) => {
            let mut dx = dy.clone();
            for (v, m) in dx.data_mut().iter_mut().zip(mask) {
                *v *= m;
            }
            dx
        }
    }
}

// ---------------------------------------------------------------------------
// Embedding lookup
// ---------------------------------------------------------------------------

pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

pub struct EmbeddingCache {
    indices: Vec<usize>,
}

impl Embedding {
    /// Rows keyed by category name so vocabulary reindexing does not change
    /// the effective function.
    pub fn new(
        store: &mut ParamStore,
        seed: u64,
        name: &str,
        categories: &[String],
        dim: usize,
    ) -> Self {
        let mut rows: Vec<Key> = categories.iter().map(|c| Key::Named(c, 0)).collect();
        rows.push(Key::Named("\u{0}unknown", 0));
        let cols: Vec<Key> = (0..dim).map(Key::Idx).collect();
        let table = store.add(
            format!("{name}.table"),
            init::matrix(seed, &format!("{name}.table"), &rows, &cols, 0.1),
        );
        Embedding {
            table,
            vocab: rows.len(),
            dim,
        }
    }

    pub fn forward(&self, store: &ParamStore, indices: &[usize]) -> Result<(Tensor, EmbeddingCache)> {
        let table = store.value(self.table);
        let mut out = Tensor::zeros(&[indices.len(), self.dim]);
        for (r, &idx) in indices.iter().enumerate() {
            if idx >= self.vocab {
                return Err(Error::shape(
                    "embedding",
                    format!("index {idx} out of vocabulary {}", self.vocab),
                ));
            }
            out.row_mut(r).copy_from_slice(table.row(idx));
        }
        Ok((
            out,
            EmbeddingCache {
                indices: indices.to_vec(),
            },
        ))
    }

    pub fn backward(&self, store: &mut ParamStore, cache: &EmbeddingCache, dy: &Tensor) {
        let grad = store.grad_mut(self.table);
        for (r, &idx) in cache.indices.iter().enumerate() {
            for (g, d) in grad.row_mut(idx).iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// LSTM cell
// ---------------------------------------------------------------------------

pub struct LstmCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

pub struct LstmStepCache {
    x: Tensor,
    h_prev: Tensor,
    c_prev: Tensor,
    i: Tensor,
    f: Tensor,
    g: Tensor,
    o: Tensor,
    tanh_c: Tensor,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, seed: u64, name: &str, in_dim: usize, hidden: usize) -> Self {
        let scale = init::xavier_bound(in_dim + hidden, hidden);
        let wx = store.add(
            format!("{name}.wx"),
            init::matrix_idx(seed, &format!("{name}.wx"), in_dim, 4 * hidden, scale),
        );
        let wh = store.add(
            format!("{name}.wh"),
            init::matrix_idx(seed, &format!("{name}.wh"), hidden, 4 * hidden, scale),
        );
        // forget-gate bias starts at 1 so early training keeps state
        let mut bias = vec![0.0; 4 * hidden];
        for v in bias.iter_mut().skip(hidden).take(hidden) {
            *v = 1.0;
        }
        let b = store.add(format!("{name}.b"), Tensor::from_vec(&[4 * hidden], bias));
        LstmCell {
            wx,
            wh,
            b,
            in_dim,
            hidden,
        }
    }

    /// Standard 4-gate step: gate order [input, forget, candidate, output].
    pub fn step(
        &self,
        store: &ParamStore,
        x: &Tensor,
        h_prev: &Tensor,
        c_prev: &Tensor,
    ) -> Result<(Tensor, Tensor, LstmStepCache)> {
        let batch = x.rows();
        if x.cols() != self.in_dim || h_prev.cols() != self.hidden || c_prev.cols() != self.hidden {
            return Err(Error::shape(
                "lstm_cell_step",
                format!(
                    "x {:?}, h {:?}, c {:?} vs in_dim {} hidden {}",
                    x.shape(),
                    h_prev.shape(),
                    c_prev.shape(),
                    self.in_dim,
                    self.hidden
                ),
            ));
        }
        let mut pre = x.matmul(store.value(self.wx));
        pre.add_assign(&h_prev.matmul(store.value(self.wh)));
        let bias = store.value(self.b);
        for r in 0..batch {
            for (v, bv) in pre.row_mut(r).iter_mut().zip(bias.data()) {
                *v += bv;
            }
        }
        let d = self.hidden;
        let mut i = Tensor::zeros(&[batch, d]);
        let mut f = Tensor::zeros(&[batch, d]);
        let mut g = Tensor::zeros(&[batch, d]);
        let mut o = Tensor::zeros(&[batch, d]);
        for r in 0..batch {
            let p = pre.row(r);
            for j in 0..d {
                i.row_mut(r)[j] = sigmoid(p[j]);
                f.row_mut(r)[j] = sigmoid(p[d + j]);
                g.row_mut(r)[j] = p[2 * d + j].tanh();
                o.row_mut(r)[j] = sigmoid(p[3 * d + j]);
            }
        }
        let mut c_new = Tensor::zeros(&[batch, d]);
        let mut tanh_c = Tensor::zeros(&[batch, d]);
        let mut h_new = Tensor::zeros(&[batch, d]);
        for idx in 0..batch * d {
            let cv = i.data()[idx] * g.data()[idx] + f.data()[idx] * c_prev.data()[idx];
            c_new.data_mut()[idx] = cv;
            let t = cv.tanh();
            tanh_c.data_mut()[idx] = t;
            h_new.data_mut()[idx] = o.data()[idx] * t;
        }
        let cache = LstmStepCache {
            x: x.clone(),
            h_prev: h_prev.clone(),
            c_prev: c_prev.clone(),
            i,
            f,
            g,
            o,
            tanh_c,
        };
        Ok((h_new, c_new, cache))
    }

    /// Returns (dx, dh_prev, dc_prev).
    pub fn backward_step(
        &self,
        store: &mut ParamStore,
        cache: &LstmStepCache,
        dh: &Tensor,
        dc: &Tensor,
    ) -> (Tensor, Tensor, Tensor) {
        let (batch, d) = (dh.rows(), self.hidden);
        let mut da = Tensor::zeros(&[batch, 4 * d]);
        let mut dc_prev = Tensor::zeros(&[batch, d]);
        for r in 0..batch {
            for j in 0..d {
                let idx = r * d + j;
                let i = cache.i.data()[idx];
                let f = cache.f.data()[idx];
                let g = cache.g.data()[idx];
                let o = cache.o.data()[idx];
                let t = cache.tanh_c.data()[idx];
                let dh_v = dh.data()[idx];
                let dct = dc.data()[idx] + dh_v * o * (1.0 - t * t);
                let di = dct * g;
                let df = dct * cache.c_prev.data()[idx];
                let dg = dct * i;
                let do_ = dh_v * t;
                dc_prev.data_mut()[idx] = dct * f;
                let row = da.row_mut(r);
                row[j] = di * i * (1.0 - i);
                row[d + j] = df * f * (1.0 - f);
                row[2 * d + j] = dg * (1.0 - g * g);
                row[3 * d + j] = do_ * o * (1.0 - o);
            }
        }
        let dwx = cache.x.matmul_t_self(&da);
        let dwh = cache.h_prev.matmul_t_self(&da);
        let db = da.sum_rows();
        store.grad_mut(self.wx).add_assign(&dwx);
        store.grad_mut(self.wh).add_assign(&dwh);
        store.grad_mut(self.b).add_assign(&db);
        let dx = da.matmul_t_other(store.value(self.wx));
        let dh_prev = da.matmul_t_other(store.value(self.wh));
        (dx, dh_prev, dc_prev)
    }
}

// ---------------------------------------------------------------------------
// Concatenation along the last dimension
// ---------------------------------------------------------------------------

pub fn concat_cols(parts: &[&Tensor]) -> Tensor {
    assert!(!parts.is_empty());
    let n = parts[0].rows();
    let total: usize = parts.iter().map(|p| p.cols()).sum();
    let mut out = Tensor::zeros(&[n, total]);
    for r in 0..n {
        let mut off = 0;
        for p in parts {
            let w = p.cols();
            out.row_mut(r)[off..off + w].copy_from_slice(p.row(r));
            off += w;
        }
    }
    out
}

pub fn split_cols(x: &Tensor, widths: &[usize]) -> Vec<Tensor> {
    let n = x.rows();
    debug_assert_eq!(widths.iter().sum::<usize>(), x.cols());
    let mut out: Vec<Tensor> = widths.iter().map(|w| Tensor::zeros(&[n, *w])).collect();
    for r in 0..n {
        let mut off = 0;
        for (p, w) in out.iter_mut().zip(widths) {
            p.row_mut(r).copy_from_slice(&x.row(r)[off..off + w]);
            off += w;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn softmax_symmetry_and_stability() {
        let y = softmax_forward(&Tensor::from_vec(&[1, 2], vec![0.0, 0.0]));
        assert_eq!(y.data(), &[0.5, 0.5]);
        let y = softmax_forward(&Tensor::from_vec(&[1, 2], vec![1000.0, 0.0]));
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
        assert!(y.data()[1].abs() < 1e-12);
    }

    #[test]
    fn masked_softmax_single_position_and_all_masked() {
        let x = Tensor::from_vec(&[1, 3], vec![5.0, -2.0, 0.3]);
        let y = softmax_masked(&x, &[false, true, false]).unwrap();
        assert_eq!(y.data(), &[0.0, 1.0, 0.0]);
        assert!(softmax_masked(&x, &[false, false, false]).is_err());
    }

    #[test]
    fn glu_at_zero_gate_halves_value() {
        let gate = Tensor::from_vec(&[1, 2], vec![0.0, 0.0]);
        let value = Tensor::from_vec(&[1, 2], vec![4.0, -2.0]);
        let (y, _) = glu_forward(&gate, &value);
        assert_eq!(y.data(), &[2.0, -1.0]);
    }

    #[test]
    fn lstm_zero_everything_gives_zero_state() {
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, 1, "cell", 2, 3);
        // zero all params including the forget bias
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).fill(0.0);
        }
        let x = Tensor::zeros(&[1, 2]);
        let h = Tensor::zeros(&[1, 3]);
        let c = Tensor::zeros(&[1, 3]);
        let (h1, c1, _) = cell.step(&store, &x, &h, &c).unwrap();
        assert!(h1.data().iter().all(|v| *v == 0.0));
        assert!(c1.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn lstm_saturated_forget_gate_preserves_cell() {
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, 1, "cell", 2, 2);
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).fill(0.0);
        }
        // forget-gate bias -> large positive: c' ~= c_prev (input gate at 0 bias contributes i*g with g=tanh(0)=0)
        let b = store.id_of("cell.b").unwrap();
        for j in 2..4 {
            store.value_mut(b).data_mut()[j] = 60.0;
        }
        let x = Tensor::from_vec(&[1, 2], vec![0.0, 0.0]);
        let h = Tensor::zeros(&[1, 2]);
        let c = Tensor::from_vec(&[1, 2], vec![0.7, -0.3]);
        let (_, c1, _) = cell.step(&store, &x, &h, &c).unwrap();
        assert!((c1.data()[0] - 0.7).abs() < 1e-12);
        assert!((c1.data()[1] + 0.3).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_rows_standardized() {
        let mut store = ParamStore::new();
        let ln = LayerNorm::new(&mut store, "ln", 8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::from_vec(&[4, 8], (0..32).map(|_| rng.gen_range(-3.0..3.0)).collect());
        let (y, _) = ln.forward(&store, &x);
        for r in 0..4 {
            let row = y.row(r);
            let mean: f64 = row.iter().sum::<f64>() / 8.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-9, "row mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "row var {var}");
        }
    }

    #[test]
    fn dropout_rate_zero_is_bitwise_identity() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (y, _) = dropout_forward(&x, 0.0, &mut rng);
        assert_eq!(x, y);
    }

    #[test]
    fn concat_split_round_trip() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::from_vec(&[2, 1], vec![9.0, 8.0]);
        let joined = concat_cols(&[&a, &b]);
        let parts = split_cols(&joined, &[2, 1]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
