//! Composite blocks of the temporal fusion transformer: the gated linear
//! unit layer, the gated residual network (GRN), and the variable selection
//! network (VSN). Each carries an explicit cache for its backward pass.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::neuralcore::init::Key;
use crate::neuralcore::layers::{
    concat_cols, dropout_backward, dropout_forward, elu_backward, elu_forward, glu_backward,
    glu_forward, softmax_backward, softmax_forward, split_cols, Dense, DenseCache,
    DropoutCache, EluCache, GluCache, LayerNorm, LayerNormCache,
};
use crate::neuralcore::params::ParamStore;
use crate::tensor::Tensor;

/// Forward-pass mode: training applies dropout from the provided stream.
pub enum Mode<'a> {
    Train { rng: &'a mut ChaCha8Rng, dropout: f64 },
    Eval,
}

impl Mode<'_> {
    pub(crate) fn dropout(&mut self, x: &Tensor) -> (Tensor, DropoutCache) {
        match self {
            Mode::Train { rng, dropout } => dropout_forward(x, *dropout, rng),
            Mode::Eval => (x.clone(), DropoutCache::identity()),
        }
    }
}

impl DropoutCache {
    fn identity() -> Self {
        // rate-0 dropout produces an identity cache
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, cache) = dropout_forward(&Tensor::zeros(&[1]), 0.0, &mut rng);
        cache
    }
}

use rand::SeedableRng;

// ---------------------------------------------------------------------------
// GLU layer: sigmoid(W4 x + b4) * (W5 x + b5)
// ---------------------------------------------------------------------------

pub struct GluLayer {
    gate: Dense,
    value: Dense,
}

pub struct GluLayerCache {
    gate: DenseCache,
    value: DenseCache,
    glu: GluCache,
}

impl GluLayer {
    pub fn new_keyed(
        store: &mut ParamStore,
        seed: u64,
        name: &str,
        rows: &[Key<'_>],
        cols: &[Key<'_>],
    ) -> Self {
        GluLayer {
            gate: Dense::new_keyed(store, seed, &format!("{name}.gate"), rows, cols, true),
            value: Dense::new_keyed(store, seed, &format!("{name}.value"), rows, cols, true),
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> (Tensor, GluLayerCache) {
        let (gate_pre, gate) = self.gate.forward(store, x);
        let (value, value_cache) = self.value.forward(store, x);
        let (y, glu) = glu_forward(&gate_pre, &value);
        (
            y,
            GluLayerCache {
                gate,
                value: value_cache,
                glu,
            },
        )
    }

    pub fn backward(&self, store: &mut ParamStore, cache: &GluLayerCache, dy: &Tensor) -> Tensor {
        let (dgate_pre, dvalue) = glu_backward(&cache.glu, dy);
        let mut dx = self.gate.backward(store, &cache.gate, &dgate_pre);
        dx.add_assign(&self.value.backward(store, &cache.value, &dvalue));
        dx
    }
}

// ---------------------------------------------------------------------------
// Gated residual network
// ---------------------------------------------------------------------------

pub struct Grn {
    w2: Dense,
    w3: Option<Dense>,
    w1: Dense,
    glu: GluLayer,
    ln: LayerNorm,
    skip: Option<Dense>,
}

pub struct GrnCache {
    w2: DenseCache,
    w3: Option<DenseCache>,
    elu: EluCache,
    w1: DenseCache,
    drop: DropoutCache,
    glu: GluLayerCache,
    skip: Option<DenseCache>,
    ln: LayerNormCache,
}

impl Grn {
    /// `in_keys`/`out_keys` carry variable names on axes that index
    /// variables, keeping initialization permutation-consistent. A skip
    /// projection is added whenever input and output widths differ.
    pub fn new(
        store: &mut ParamStore,
        seed: u64,
        name: &str,
        in_keys: &[Key<'_>],
        hidden: usize,
        out_keys: &[Key<'_>],
        context: bool,
    ) -> Self {
        let hidden_keys: Vec<Key> = (0..hidden).map(Key::Idx).collect();
        let w2 = Dense::new_keyed(store, seed, &format!("{name}.w2"), in_keys, &hidden_keys, true);
        let w3 = context.then(|| {
            Dense::new_keyed(
                store,
                seed,
                &format!("{name}.w3"),
                &hidden_keys,
                &hidden_keys,
                false,
            )
        });
        let w1 = Dense::new_keyed(store, seed, &format!("{name}.w1"), &hidden_keys, out_keys, true);
        let glu = GluLayer::new_keyed(store, seed, &format!("{name}.glu"), out_keys, out_keys);
        let ln = LayerNorm::new_keyed(store, &format!("{name}.ln"), out_keys);
        let skip = (in_keys.len() != out_keys.len()).then(|| {
            Dense::new_keyed(store, seed, &format!("{name}.skip"), in_keys, out_keys, true)
        });
        Grn {
            w2,
            w3,
            w1,
            glu,
            ln,
            skip,
        }
    }

    /// `ctx`, when the GRN was built with context, must be (n x hidden).
    /// Context GRNs require the context at every call.
    pub fn forward(
        &self,
        store: &ParamStore,
        x: &Tensor,
        ctx: Option<&Tensor>,
        mode: &mut Mode<'_>,
    ) -> (Tensor, GrnCache) {
        debug_assert_eq!(self.w3.is_some(), ctx.is_some(), "grn context mismatch");
        let (mut pre, w2_cache) = self.w2.forward(store, x);
        let w3_cache = match (&self.w3, ctx) {
            (Some(w3), Some(c)) => {
                let (a3, cache) = w3.forward(store, c);
                pre.add_assign(&a3);
                Some(cache)
            }
            _ => None,
        };
        let (eta2, elu_cache) = elu_forward(&pre);
        let (eta1, w1_cache) = self.w1.forward(store, &eta2);
        let (eta1d, drop) = mode.dropout(&eta1);
        let (glu_out, glu_cache) = self.glu.forward(store, &eta1d);
        let (residual, skip_cache) = match &self.skip {
            Some(skip) => {
                let (s, cache) = skip.forward(store, x);
                (s, Some(cache))
            }
            None => (x.clone(), None),
        };
        let mut sum = residual;
        sum.add_assign(&glu_out);
        let (y, ln_cache) = self.ln.forward(store, &sum);
        (
            y,
            GrnCache {
                w2: w2_cache,
                w3: w3_cache,
                elu: elu_cache,
                w1: w1_cache,
                drop,
                glu: glu_cache,
                skip: skip_cache,
                ln: ln_cache,
            },
        )
    }

    /// Returns (dx, dctx).
    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &GrnCache,
        dy: &Tensor,
    ) -> (Tensor, Option<Tensor>) {
        let dsum = self.ln.backward(store, &cache.ln, dy);
        let deta1d = self.glu.backward(store, &cache.glu, &dsum);
        let deta1 = dropout_backward(&cache.drop, &deta1d);
        let deta2 = self.w1.backward(store, &cache.w1, &deta1);
        let dpre = elu_backward(&cache.elu, &deta2);
        let mut dx = self.w2.backward(store, &cache.w2, &dpre);
        let dctx = match (&self.w3, &cache.w3) {
            (Some(w3), Some(c)) => Some(w3.backward(store, c, &dpre)),
            _ => None,
        };
        match (&self.skip, &cache.skip) {
            (Some(skip), Some(c)) => dx.add_assign(&skip.backward(store, c, &dsum)),
            _ => dx.add_assign(&dsum),
        }
        (dx, dctx)
    }
}

// ---------------------------------------------------------------------------
// Variable selection network
// ---------------------------------------------------------------------------

pub struct Vsn {
    flat: Grn,
    per_var: Vec<Grn>,
    pub n_vars: usize,
    pub dim: usize,
}

pub struct VsnCache {
    flat: GrnCache,
    pub weights: Tensor,
    per_outputs: Vec<Tensor>,
    per_caches: Vec<GrnCache>,
    var_widths: Vec<usize>,
}

impl Vsn {
    pub fn new(
        store: &mut ParamStore,
        seed: u64,
        name: &str,
        var_names: &[String],
        dim: usize,
        context: bool,
    ) -> Self {
        let mut in_keys: Vec<Key> = Vec::with_capacity(var_names.len() * dim);
        for var in var_names {
            for off in 0..dim {
                in_keys.push(Key::Named(var, off));
            }
        }
        let out_keys: Vec<Key> = var_names.iter().map(|v| Key::Named(v, 0)).collect();
        let flat = Grn::new(store, seed, &format!("{name}.flat"), &in_keys, dim, &out_keys, context);
        let per_var = var_names
            .iter()
            .map(|var| {
                let keys: Vec<Key> = (0..dim).map(Key::Idx).collect();
                Grn::new(store, seed, &format!("{name}.var.{var}"), &keys, dim, &keys, false)
            })
            .collect();
        Vsn {
            flat,
            per_var,
            n_vars: var_names.len(),
            dim,
        }
    }

    /// `vars` holds one (n x dim) embedding per variable. Returns the
    /// softmax-weighted combination (n x dim); selection weights are in the
    /// cache (each row sums to 1).
    pub fn forward(
        &self,
        store: &ParamStore,
        vars: &[Tensor],
        ctx: Option<&Tensor>,
        mode: &mut Mode<'_>,
    ) -> Result<(Tensor, VsnCache)> {
        debug_assert_eq!(vars.len(), self.n_vars);
        let refs: Vec<&Tensor> = vars.iter().collect();
        let flat_in = concat_cols(&refs);
        let (logits, flat_cache) = self.flat.forward(store, &flat_in, ctx, mode);
        let weights = softmax_forward(&logits);
        let n = flat_in.rows();
        let mut combined = Tensor::zeros(&[n, self.dim]);
        let mut per_outputs = Vec::with_capacity(self.n_vars);
        let mut per_caches = Vec::with_capacity(self.n_vars);
        for (j, grn) in self.per_var.iter().enumerate() {
            let (out, cache) = grn.forward(store, &vars[j], None, mode);
            for r in 0..n {
                let w = weights.at(r, j);
                for (c_out, v) in combined.row_mut(r).iter_mut().zip(out.row(r)) {
                    *c_out += w * v;
                }
            }
            per_outputs.push(out);
            per_caches.push(cache);
        }
        Ok((
            combined,
            VsnCache {
                flat: flat_cache,
                weights,
                per_outputs,
                per_caches,
                var_widths: vars.iter().map(|v| v.cols()).collect(),
            },
        ))
    }

    /// Returns (per-variable input grads, dctx).
    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &VsnCache,
        dcombined: &Tensor,
    ) -> (Vec<Tensor>, Option<Tensor>) {
        let n = dcombined.rows();
        let mut dweights = Tensor::zeros(&[n, self.n_vars]);
        let mut dvars: Vec<Tensor> = Vec::with_capacity(self.n_vars);
        for (j, grn) in self.per_var.iter().enumerate() {
            let out = &cache.per_outputs[j];
            let mut dper = Tensor::zeros(out.shape());
            for r in 0..n {
                let w = cache.weights.at(r, j);
                let mut dw = 0.0;
                for ((dp, dc), o) in dper
                    .row_mut(r)
                    .iter_mut()
                    .zip(dcombined.row(r))
                    .zip(out.row(r))
                {
                    *dp = dc * w;
                    dw += dc * o;
                }
                dweights.set(r, j, dw);
            }
            let (dvar, _) = grn.backward(store, &cache.per_caches[j], &dper);
            dvars.push(dvar);
        }
        let dlogits = softmax_backward(&cache.weights, &dweights);
        let (dflat, dctx) = self.flat.backward(store, &cache.flat, &dlogits);
        let parts = split_cols(&dflat, &cache.var_widths);
        for (dvar, part) in dvars.iter_mut().zip(parts) {
            dvar.add_assign(&part);
        }
        (dvars, dctx)
    }
}
