//! The temporal fusion transformer: per-variable input transforms, variable
//! selection, static context encoders, LSTM encoder/decoder, interpretable
//! multi-head attention, and per-quantile heads, with a hand-written
//! backward pass through the whole pipeline.
//!
//! Batched temporal tensors are laid out time-major: row `t * batch + b`
//! holds window b at position t, so per-timestep networks run as one large
//! matrix pass over all positions.

use std::collections::BTreeMap;

use super::blocks::{GluLayer, GluLayerCache, Grn, GrnCache, Mode, Vsn, VsnCache};
use super::TftConfig;
use crate::dataset::{ChannelDef, ChannelKind, NormStats, Window, WindowLayout};
use crate::error::{Error, Result};
use crate::neuralcore::attention::{AttnCache, AttnWeights, InterpretableMultiHeadAttention};
use crate::neuralcore::init::Key;
use crate::neuralcore::layers::{
    dropout_backward, Dense, DenseCache, DropoutCache, Embedding, EmbeddingCache, LayerNorm,
    LayerNormCache, LstmCell, LstmStepCache,
};
use crate::neuralcore::params::ParamStore;
use crate::tensor::Tensor;

enum VarTransform {
    Real(Dense),
    Cat(Embedding),
}

enum VarCache {
    Real(DenseCache),
    Cat(EmbeddingCache),
}

impl VarTransform {
    fn new(
        store: &mut ParamStore,
        seed: u64,
        name: &str,
        def: &ChannelDef,
        stats: &NormStats,
        dim: usize,
    ) -> Result<Self> {
        Ok(match &def.kind {
            ChannelKind::Categorical { .. } => {
                let vocab = stats.vocab(&def.name).ok_or_else(|| {
                    Error::data(format!("no vocabulary for categorical channel `{}`", def.name))
                })?;
                VarTransform::Cat(Embedding::new(store, seed, name, vocab, dim))
            }
            _ => VarTransform::Real(Dense::new(store, seed, name, 1, dim, true)),
        })
    }

    fn forward(&self, store: &ParamStore, input: &ChannelInput) -> Result<(Tensor, VarCache)> {
        match (self, input) {
            (VarTransform::Real(dense), ChannelInput::Real(x)) => {
                let (y, cache) = dense.forward(store, x);
                Ok((y, VarCache::Real(cache)))
            }
            (VarTransform::Cat(emb), ChannelInput::Cat(indices)) => {
                let (y, cache) = emb.forward(store, indices)?;
                Ok((y, VarCache::Cat(cache)))
            }
            _ => Err(Error::shape("var_transform", "channel kind mismatch")),
        }
    }

    fn backward(&self, store: &mut ParamStore, cache: &VarCache, dy: &Tensor) {
        match (self, cache) {
            (VarTransform::Real(dense), VarCache::Real(c)) => {
                dense.backward(store, c, dy);
            }
            (VarTransform::Cat(emb), VarCache::Cat(c)) => emb.backward(store, c, dy),
            _ => unreachable!(),
        }
    }
}

enum ChannelInput {
    Real(Tensor),
    Cat(Vec<usize>),
}

pub struct Arch {
    transforms: BTreeMap<String, VarTransform>,
    static_transforms: Vec<VarTransform>,
    static_vsn: Vsn,
    ctx_selection: Grn,
    ctx_h: Grn,
    ctx_c: Grn,
    ctx_enrich: Grn,
    enc_vsn: Vsn,
    dec_vsn: Vsn,
    lstm_enc: LstmCell,
    lstm_dec: LstmCell,
    postlstm_glu: GluLayer,
    postlstm_ln: LayerNorm,
    enrich: Grn,
    attn: InterpretableMultiHeadAttention,
    attn_glu: GluLayer,
    attn_ln: LayerNorm,
    posff: Grn,
    final_glu: GluLayer,
    final_ln: LayerNorm,
    heads: Vec<Dense>,
}

pub struct TftModel {
    pub config: TftConfig,
    pub layout: WindowLayout,
    pub store: ParamStore,
    pub arch: Arch,
}

/// Raw outputs of one batched forward pass.
pub struct RawForward {
    /// (batch*tau x n_quantiles), time-major rows, unreconciled.
    pub yhat: Tensor,
    /// (batch*k x m_enc) selection weights, time-major.
    pub encoder_weights: Tensor,
    /// (batch*tau x m_dec).
    pub decoder_weights: Tensor,
    /// (batch x m_static).
    pub static_weights: Tensor,
    pub attention: AttnWeights,
}

pub struct TftCache {
    batch: usize,
    enc_var_caches: Vec<VarCache>,
    dec_var_caches: Vec<VarCache>,
    static_var_caches: Vec<VarCache>,
    static_vsn: VsnCache,
    ctx_selection: GrnCache,
    ctx_h: GrnCache,
    ctx_c: GrnCache,
    ctx_enrich: GrnCache,
    enc_vsn: VsnCache,
    dec_vsn: VsnCache,
    lstm_enc: Vec<LstmStepCache>,
    lstm_dec: Vec<LstmStepCache>,
    postlstm_drop: DropoutCache,
    postlstm_glu: GluLayerCache,
    postlstm_ln: LayerNormCache,
    enrich: GrnCache,
    attn: AttnCache,
    attn_drop: DropoutCache,
    attn_glu: GluLayerCache,
    attn_ln: LayerNormCache,
    posff: GrnCache,
    final_glu: GluLayerCache,
    final_ln: LayerNormCache,
    heads: Vec<DenseCache>,
}

fn var_names(defs: &[ChannelDef]) -> Vec<String> {
    defs.iter().map(|d| d.name.clone()).collect()
}

/// Repeats a (batch x d) tensor into (times*batch x d), time-major.
fn tile(x: &Tensor, times: usize) -> Tensor {
    let (b, d) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(&[times * b, d]);
    for t in 0..times {
        for r in 0..b {
            out.row_mut(t * b + r).copy_from_slice(x.row(r));
        }
    }
    out
}

/// Sums a (times*batch x d) gradient back into (batch x d).
fn untile(x: &Tensor, batch: usize) -> Tensor {
    let d = x.cols();
    let times = x.rows() / batch;
    let mut out = Tensor::zeros(&[batch, d]);
    for t in 0..times {
        for r in 0..batch {
            for (o, v) in out.row_mut(r).iter_mut().zip(x.row(t * batch + r)) {
                *o += v;
            }
        }
    }
    out
}

fn rows_block(x: &Tensor, t: usize, batch: usize) -> Tensor {
    let d = x.cols();
    let mut out = Tensor::zeros(&[batch, d]);
    for r in 0..batch {
        out.row_mut(r).copy_from_slice(x.row(t * batch + r));
    }
    out
}

fn stack_blocks(blocks: &[Tensor]) -> Tensor {
    let batch = blocks[0].rows();
    let d = blocks[0].cols();
    let mut out = Tensor::zeros(&[blocks.len() * batch, d]);
    for (t, b) in blocks.iter().enumerate() {
        for r in 0..batch {
            out.row_mut(t * batch + r).copy_from_slice(b.row(r));
        }
    }
    out
}

fn add_rows(dst: &mut Tensor, offset_rows: usize, src: &Tensor) {
    for r in 0..src.rows() {
        for (d, v) in dst.row_mut(offset_rows + r).iter_mut().zip(src.row(r)) {
            *d += v;
        }
    }
}

fn slice_rows(x: &Tensor, start: usize, count: usize) -> Tensor {
    let d = x.cols();
    let mut out = Tensor::zeros(&[count, d]);
    for r in 0..count {
        out.row_mut(r).copy_from_slice(x.row(start + r));
    }
    out
}

impl TftModel {
    pub fn new(config: TftConfig, layout: WindowLayout, stats: &NormStats) -> Result<TftModel> {
        config.validate()?;
        if config.hidden_size % config.n_heads != 0 {
            return Err(Error::config(format!(
                "hidden size {} not divisible by {} heads",
                config.hidden_size, config.n_heads
            )));
        }
        let d = config.hidden_size;
        let seed = config.seed;
        let mut store = ParamStore::new();

        // shared per-variable input transforms; decoder variables are a
        // subset of encoder variables so the encoder order fixes them all
        let mut transforms = BTreeMap::new();
        for def in &layout.encoder {
            let t = VarTransform::new(&mut store, seed, &format!("var.{}", def.name), def, stats, d)?;
            transforms.insert(def.name.clone(), t);
        }
        for def in &layout.decoder {
            if !transforms.contains_key(&def.name) {
                return Err(Error::config(format!(
                    "decoder channel `{}` missing from encoder",
                    def.name
                )));
            }
        }
        let static_transforms: Vec<VarTransform> = layout
            .statics
            .iter()
            .map(|def| {
                VarTransform::new(&mut store, seed, &format!("static.var.{}", def.name), def, stats, d)
            })
            .collect::<Result<_>>()?;

        let static_names = var_names(&layout.statics);
        let static_vsn = Vsn::new(&mut store, seed, "static.vsn", &static_names, d, false);
        let dkeys: Vec<Key> = (0..d).map(Key::Idx).collect();
        let mk_ctx = |store: &mut ParamStore, name: &str| {
            Grn::new(store, seed, name, &dkeys, d, &dkeys, false)
        };
        let ctx_selection = mk_ctx(&mut store, "ctx.selection");
        let ctx_h = mk_ctx(&mut store, "ctx.h");
        let ctx_c = mk_ctx(&mut store, "ctx.c");
        let ctx_enrich = mk_ctx(&mut store, "ctx.enrich");

        let enc_vsn = Vsn::new(&mut store, seed, "enc.vsn", &var_names(&layout.encoder), d, true);
        let dec_vsn = Vsn::new(&mut store, seed, "dec.vsn", &var_names(&layout.decoder), d, true);
        let lstm_enc = LstmCell::new(&mut store, seed, "lstm.enc", d, d);
        let lstm_dec = LstmCell::new(&mut store, seed, "lstm.dec", d, d);
        let postlstm_glu = GluLayer::new_keyed(&mut store, seed, "postlstm.glu", &dkeys, &dkeys);
        let postlstm_ln = LayerNorm::new(&mut store, "postlstm.ln", d);
        let enrich = Grn::new(&mut store, seed, "enrich", &dkeys, d, &dkeys, true);
        let attn = InterpretableMultiHeadAttention::new(&mut store, seed, "attn", d, config.n_heads);
        let attn_glu = GluLayer::new_keyed(&mut store, seed, "attn.glu", &dkeys, &dkeys);
        let attn_ln = LayerNorm::new(&mut store, "attn.ln", d);
        let posff = Grn::new(&mut store, seed, "posff", &dkeys, d, &dkeys, false);
        let final_glu = GluLayer::new_keyed(&mut store, seed, "final.glu", &dkeys, &dkeys);
        let final_ln = LayerNorm::new(&mut store, "final.ln", d);
        let heads = config
            .quantiles
            .iter()
            .map(|q| Dense::new(&mut store, seed, &format!("head.q{q}"), d, 1, true))
            .collect();

        Ok(TftModel {
            config,
            layout,
            store,
            arch: Arch {
                transforms,
                static_transforms,
                static_vsn,
                ctx_selection,
                ctx_h,
                ctx_c,
                ctx_enrich,
                enc_vsn,
                dec_vsn,
                lstm_enc,
                lstm_dec,
                postlstm_glu,
                postlstm_ln,
                enrich,
                attn,
                attn_glu,
                attn_ln,
                posff,
                final_glu,
                final_ln,
                heads,
            },
        })
    }

    fn channel_input(
        &self,
        windows: &[Window],
        def: &ChannelDef,
        col: usize,
        decoder: bool,
    ) -> Result<ChannelInput> {
        let batch = windows.len();
        let steps = if decoder {
            self.layout.spec.decoder_length
        } else {
            self.layout.spec.encoder_length
        };
        match &def.kind {
            ChannelKind::Categorical { .. } => {
                let mut idx = Vec::with_capacity(steps * batch);
                for t in 0..steps {
                    for w in windows {
                        let block = if decoder { &w.decoder } else { &w.encoder };
                        let v = block.at(t, col);
                        if v < 0.0 || v.fract() != 0.0 {
                            return Err(Error::data(format!(
                                "channel `{}`: non-integer categorical value {v}",
                                def.name
                            )));
                        }
                        idx.push(v as usize);
                    }
                }
                Ok(ChannelInput::Cat(idx))
            }
            _ => {
                let mut data = Vec::with_capacity(steps * batch);
                for t in 0..steps {
                    for w in windows {
                        let block = if decoder { &w.decoder } else { &w.encoder };
                        data.push(block.at(t, col));
                    }
                }
                Ok(ChannelInput::Real(Tensor::from_vec(&[steps * batch, 1], data)))
            }
        }
    }

    fn static_input(&self, windows: &[Window], def: &ChannelDef, col: usize) -> ChannelInput {
        match &def.kind {
            ChannelKind::Categorical { .. } => {
                ChannelInput::Cat(windows.iter().map(|w| w.statics[col] as usize).collect())
            }
            _ => ChannelInput::Real(Tensor::from_vec(
                &[windows.len(), 1],
                windows.iter().map(|w| w.statics[col]).collect(),
            )),
        }
    }

    /// Full batched forward pass.
    pub fn forward(&self, windows: &[Window], mode: &mut Mode<'_>) -> Result<(RawForward, TftCache)> {
        self.forward_in(&self.store, windows, mode)
    }

    /// Forward pass reading parameters from an external store with the same
    /// layout; used by gradient checking, which perturbs a detached store.
    pub fn forward_in(
        &self,
        store: &ParamStore,
        windows: &[Window],
        mode: &mut Mode<'_>,
    ) -> Result<(RawForward, TftCache)> {
        let batch = windows.len();
        if batch == 0 {
            return Err(Error::data("tft_forward: empty batch"));
        }
        let k = self.layout.spec.encoder_length;
        let tau = self.layout.spec.decoder_length;
        let m_enc = self.layout.encoder.len();
        let m_dec = self.layout.decoder.len();
        for w in windows {
            if w.encoder.shape() != [k, m_enc] || w.decoder.shape() != [tau, m_dec] {
                return Err(Error::shape(
                    "tft_forward",
                    format!(
                        "window {} blocks {:?}/{:?} vs layout ({k} x {m_enc})/({tau} x {m_dec})",
                        w.site_id,
                        w.encoder.shape(),
                        w.decoder.shape()
                    ),
                ));
            }
            if w.statics.len() != self.layout.statics.len() {
                return Err(Error::shape("tft_forward", "static vector length"));
            }
        }
        // `store` parameter supplies all weights
        let arch = &self.arch;

        // static covariate path
        let mut static_embs = Vec::with_capacity(arch.static_transforms.len());
        let mut static_var_caches = Vec::new();
        for (col, (def, tr)) in self
            .layout
            .statics
            .iter()
            .zip(&arch.static_transforms)
            .enumerate()
        {
            let input = self.static_input(windows, def, col);
            let (emb, cache) = tr.forward(store, &input)?;
            static_embs.push(emb);
            static_var_caches.push(cache);
        }
        let (static_emb, static_vsn_cache) = arch.static_vsn.forward(store, &static_embs, None, mode)?;
        let (c_sel, ctx_selection_cache) = arch.ctx_selection.forward(store, &static_emb, None, mode);
        let (c_h, ctx_h_cache) = arch.ctx_h.forward(store, &static_emb, None, mode);
        let (c_c, ctx_c_cache) = arch.ctx_c.forward(store, &static_emb, None, mode);
        let (c_enrich, ctx_enrich_cache) = arch.ctx_enrich.forward(store, &static_emb, None, mode);

        // per-variable transforms, time-major over all positions
        let mut enc_vars = Vec::with_capacity(m_enc);
        let mut enc_var_caches = Vec::new();
        for (col, def) in self.layout.encoder.iter().enumerate() {
            let input = self.channel_input(windows, def, col, false)?;
            let (xi, cache) = arch.transforms[&def.name].forward(store, &input)?;
            enc_vars.push(xi);
            enc_var_caches.push(cache);
        }
        let mut dec_vars = Vec::with_capacity(m_dec);
        let mut dec_var_caches = Vec::new();
        for (col, def) in self.layout.decoder.iter().enumerate() {
            let input = self.channel_input(windows, def, col, true)?;
            let (xi, cache) = arch.transforms[&def.name].forward(store, &input)?;
            dec_vars.push(xi);
            dec_var_caches.push(cache);
        }

        let c_sel_enc = tile(&c_sel, k);
        let c_sel_dec = tile(&c_sel, tau);
        let (enc_combined, enc_vsn_cache) =
            arch.enc_vsn.forward(store, &enc_vars, Some(&c_sel_enc), mode)?;
        let (dec_combined, dec_vsn_cache) =
            arch.dec_vsn.forward(store, &dec_vars, Some(&c_sel_dec), mode)?;

        // sequence-to-sequence layer
        let mut lstm_enc_caches = Vec::with_capacity(k);
        let mut h = c_h.clone();
        let mut c = c_c.clone();
        let mut lstm_outputs: Vec<Tensor> = Vec::with_capacity(k + tau);
        for t in 0..k {
            let x = rows_block(&enc_combined, t, batch);
            let (h2, c2, cache) = arch.lstm_enc.step(store, &x, &h, &c)?;
            lstm_outputs.push(h2.clone());
            lstm_enc_caches.push(cache);
            h = h2;
            c = c2;
        }
        let mut lstm_dec_caches = Vec::with_capacity(tau);
        for t in 0..tau {
            let x = rows_block(&dec_combined, t, batch);
            let (h2, c2, cache) = arch.lstm_dec.step(store, &x, &h, &c)?;
            lstm_outputs.push(h2.clone());
            lstm_dec_caches.push(cache);
            h = h2;
            c = c2;
        }

        // gate + add + norm over all positions
        let phi = stack_blocks(&lstm_outputs);
        let mut vsn_all = Tensor::zeros(&[(k + tau) * batch, self.config.hidden_size]);
        add_rows(&mut vsn_all, 0, &enc_combined);
        add_rows(&mut vsn_all, k * batch, &dec_combined);
        let (phi_d, postlstm_drop) = mode.dropout(&phi);
        let (postlstm_out, postlstm_glu_cache) = arch.postlstm_glu.forward(store, &phi_d);
        let mut temporal = vsn_all;
        temporal.add_assign(&postlstm_out);
        let (phi_tilde, postlstm_ln_cache) = arch.postlstm_ln.forward(store, &temporal);

        // static enrichment
        let c_enrich_all = tile(&c_enrich, k + tau);
        let (theta, enrich_cache) = arch.enrich.forward(store, &phi_tilde, Some(&c_enrich_all), mode);

        // interpretable attention over positions
        let theta_seq: Vec<Tensor> = (0..k + tau).map(|t| rows_block(&theta, t, batch)).collect();
        let (attn_outs, attn_weights, attn_cache) = arch.attn.forward(store, &theta_seq, k)?;
        let attn_flat = stack_blocks(&attn_outs);
        let (attn_d, attn_drop) = mode.dropout(&attn_flat);
        let (attn_gated, attn_glu_cache) = arch.attn_glu.forward(store, &attn_d);
        let theta_dec = slice_rows(&theta, k * batch, tau * batch);
        let mut attn_sum = theta_dec;
        attn_sum.add_assign(&attn_gated);
        let (delta, attn_ln_cache) = arch.attn_ln.forward(store, &attn_sum);

        // position-wise feed-forward and final gate against phi_tilde
        let (psi, posff_cache) = arch.posff.forward(store, &delta, None, mode);
        let (final_gated, final_glu_cache) = arch.final_glu.forward(store, &psi);
        let phi_tilde_dec = slice_rows(&phi_tilde, k * batch, tau * batch);
        let mut final_sum = phi_tilde_dec;
        final_sum.add_assign(&final_gated);
        let (decoded, final_ln_cache) = arch.final_ln.forward(store, &final_sum);

        // quantile heads
        let n_q = arch.heads.len();
        let mut yhat = Tensor::zeros(&[tau * batch, n_q]);
        let mut head_caches = Vec::with_capacity(n_q);
        for (j, head) in arch.heads.iter().enumerate() {
            let (out, cache) = head.forward(store, &decoded);
            for r in 0..tau * batch {
                yhat.set(r, j, out.at(r, 0));
            }
            head_caches.push(cache);
        }

        let raw = RawForward {
            yhat,
            encoder_weights: enc_vsn_cache.weights.clone(),
            decoder_weights: dec_vsn_cache.weights.clone(),
            static_weights: static_vsn_cache.weights.clone(),
            attention: attn_weights,
        };
        let cache = TftCache {
            batch,
            enc_var_caches,
            dec_var_caches,
            static_var_caches,
            static_vsn: static_vsn_cache,
            ctx_selection: ctx_selection_cache,
            ctx_h: ctx_h_cache,
            ctx_c: ctx_c_cache,
            ctx_enrich: ctx_enrich_cache,
            enc_vsn: enc_vsn_cache,
            dec_vsn: dec_vsn_cache,
            lstm_enc: lstm_enc_caches,
            lstm_dec: lstm_dec_caches,
            postlstm_drop,
            postlstm_glu: postlstm_glu_cache,
            postlstm_ln: postlstm_ln_cache,
            enrich: enrich_cache,
            attn: attn_cache,
            attn_drop,
            attn_glu: attn_glu_cache,
            attn_ln: attn_ln_cache,
            posff: posff_cache,
            final_glu: final_glu_cache,
            final_ln: final_ln_cache,
            heads: head_caches,
        };
        Ok((raw, cache))
    }

    /// Backward pass; accumulates parameter gradients into the store.
    pub fn backward(&mut self, cache: &TftCache, dyhat: &Tensor) {
        let batch = cache.batch;
        let k = self.layout.spec.encoder_length;
        let tau = self.layout.spec.decoder_length;
        let d = self.config.hidden_size;
        let arch = &self.arch;
        let store = &mut self.store;

        // heads
        let mut ddecoded = Tensor::zeros(&[tau * batch, d]);
        for (j, head) in arch.heads.iter().enumerate() {
            let mut col = Tensor::zeros(&[tau * batch, 1]);
            for r in 0..tau * batch {
                col.set(r, 0, dyhat.at(r, j));
            }
            let dx = head.backward(store, &cache.heads[j], &col);
            ddecoded.add_assign(&dx);
        }

        // final gate + norm: decoded = LN(phi_tilde_dec + GLU(psi))
        let dfinal_sum = arch.final_ln.backward(store, &cache.final_ln, &ddecoded);
        let mut dphi_tilde = Tensor::zeros(&[(k + tau) * batch, d]);
        add_rows(&mut dphi_tilde, k * batch, &dfinal_sum);
        let dpsi = arch.final_glu.backward(store, &cache.final_glu, &dfinal_sum);

        // position-wise feed-forward
        let (ddelta, _) = arch.posff.backward(store, &cache.posff, &dpsi);

        // attention gate + norm: delta = LN(theta_dec + GLU(dropout(attn)))
        let dattn_sum = arch.attn_ln.backward(store, &cache.attn_ln, &ddelta);
        let mut dtheta = Tensor::zeros(&[(k + tau) * batch, d]);
        add_rows(&mut dtheta, k * batch, &dattn_sum);
        let dattn_gated = arch.attn_glu.backward(store, &cache.attn_glu, &dattn_sum);
        let dattn_flat = dropout_backward(&cache.attn_drop, &dattn_gated);
        let dattn_outs: Vec<Tensor> = (0..tau).map(|t| rows_block(&dattn_flat, t, batch)).collect();
        let dseq = arch.attn.backward(store, &cache.attn, &dattn_outs);
        for (t, dpos) in dseq.iter().enumerate() {
            add_rows(&mut dtheta, t * batch, dpos);
        }

        // static enrichment
        let (denrich_in, dctx_enrich_tiled) = arch.enrich.backward(store, &cache.enrich, &dtheta);
        dphi_tilde.add_assign(&denrich_in);
        let dctx_enrich = untile(&dctx_enrich_tiled.expect("enrich has context"), batch);

        // post-LSTM gate + norm: phi_tilde = LN(vsn_all + GLU(dropout(phi)))
        let dtemporal = arch.postlstm_ln.backward(store, &cache.postlstm_ln, &dphi_tilde);
        let dvsn_all = dtemporal.clone();
        let dphi_d = arch.postlstm_glu.backward(store, &cache.postlstm_glu, &dtemporal);
        let dphi = dropout_backward(&cache.postlstm_drop, &dphi_d);

        // backward through time: decoder then encoder
        let mut dh = Tensor::zeros(&[batch, d]);
        let mut dc = Tensor::zeros(&[batch, d]);
        let mut ddec_combined = Tensor::zeros(&[tau * batch, d]);
        for t in (0..tau).rev() {
            let mut dh_t = rows_block(&dphi, k + t, batch);
            dh_t.add_assign(&dh);
            let (dx, dh_prev, dc_prev) = arch.lstm_dec.backward_step(store, &cache.lstm_dec[t], &dh_t, &dc);
            add_rows(&mut ddec_combined, t * batch, &dx);
            dh = dh_prev;
            dc = dc_prev;
        }
        let mut denc_combined = Tensor::zeros(&[k * batch, d]);
        for t in (0..k).rev() {
            let mut dh_t = rows_block(&dphi, t, batch);
            dh_t.add_assign(&dh);
            let (dx, dh_prev, dc_prev) = arch.lstm_enc.backward_step(store, &cache.lstm_enc[t], &dh_t, &dc);
            add_rows(&mut denc_combined, t * batch, &dx);
            dh = dh_prev;
            dc = dc_prev;
        }
        let dctx_h = dh;
        let dctx_c = dc;

        // VSN skip connections into the temporal layer
        add_rows(&mut denc_combined, 0, &slice_rows(&dvsn_all, 0, k * batch));
        add_rows(&mut ddec_combined, 0, &slice_rows(&dvsn_all, k * batch, tau * batch));

        // variable selection backward
        let (denc_vars, dctx_sel_enc) = arch.enc_vsn.backward(store, &cache.enc_vsn, &denc_combined);
        let (ddec_vars, dctx_sel_dec) = arch.dec_vsn.backward(store, &cache.dec_vsn, &ddec_combined);
        let mut dctx_sel = untile(&dctx_sel_enc.expect("enc vsn has context"), batch);
        dctx_sel.add_assign(&untile(&dctx_sel_dec.expect("dec vsn has context"), batch));

        // per-variable transforms
        for ((def, dvar), var_cache) in self
            .layout
            .encoder
            .iter()
            .zip(&denc_vars)
            .zip(&cache.enc_var_caches)
        {
            arch.transforms[&def.name].backward(store, var_cache, dvar);
        }
        for ((def, dvar), var_cache) in self
            .layout
            .decoder
            .iter()
            .zip(&ddec_vars)
            .zip(&cache.dec_var_caches)
        {
            arch.transforms[&def.name].backward(store, var_cache, dvar);
        }

        // static context encoders and static VSN
        let (mut dstatic_emb, _) = arch.ctx_selection.backward(store, &cache.ctx_selection, &dctx_sel);
        let (a, _) = arch.ctx_h.backward(store, &cache.ctx_h, &dctx_h);
        dstatic_emb.add_assign(&a);
        let (b, _) = arch.ctx_c.backward(store, &cache.ctx_c, &dctx_c);
        dstatic_emb.add_assign(&b);
        let (c, _) = arch.ctx_enrich.backward(store, &cache.ctx_enrich, &dctx_enrich);
        dstatic_emb.add_assign(&c);
        let (dstatic_vars, _) = arch.static_vsn.backward(store, &cache.static_vsn, &dstatic_emb);
        for ((tr, dvar), var_cache) in arch
            .static_transforms
            .iter()
            .zip(&dstatic_vars)
            .zip(&cache.static_var_caches)
        {
            tr.backward(store, var_cache, dvar);
        }
    }
}
