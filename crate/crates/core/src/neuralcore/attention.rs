//! Interpretable multi-head attention.
//!
//! Heads have their own query/key projections but share a single value
//! projection and output map, so the per-head attention weights can be
//! averaged into one interpretable weight matrix that is exactly what
//! multiplies the values.

use super::init;
use super::layers::{softmax_backward, softmax_masked};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub struct InterpretableMultiHeadAttention {
    wq: Vec<ParamId>,
    wk: Vec<ParamId>,
    wv: ParamId,
    wo: ParamId,
    pub d: usize,
    pub n_heads: usize,
    pub head_dim: usize,
}

/// Attention weights for one forward call: `[batch][head]` -> (tau x total).
pub struct AttnWeights {
    pub per_head: Vec<Vec<Tensor>>,
    pub n_queries: usize,
    pub n_keys: usize,
}

impl AttnWeights {
    /// Head-averaged weights for one batch item (tau x total).
    pub fn averaged(&self, b: usize) -> Tensor {
        let heads = &self.per_head[b];
        let mut out = Tensor::zeros(&[self.n_queries, self.n_keys]);
        for h in heads {
            out.add_assign(h);
        }
        out.scale(1.0 / heads.len() as f64);
        out
    }
}

pub struct AttnCache {
    seq_b: Vec<Tensor>,   // per batch item: (total x d)
    q: Vec<Vec<Tensor>>,  // [batch][head]: (tau x head_dim)
    k: Vec<Vec<Tensor>>,  // [batch][head]: (total x head_dim)
    a: Vec<Vec<Tensor>>,  // [batch][head]: (tau x total) softmax output
    abar: Vec<Tensor>,    // [batch]: (tau x total)
    v: Vec<Tensor>,       // [batch]: (total x head_dim)
    out0: Vec<Tensor>,    // [batch]: (tau x head_dim)
    n_enc: usize,
}

impl InterpretableMultiHeadAttention {
    pub fn new(store: &mut ParamStore, seed: u64, name: &str, d: usize, n_heads: usize) -> Self {
        assert!(d % n_heads == 0, "hidden size {d} not divisible by {n_heads} heads");
        let head_dim = d / n_heads;
        let scale = init::xavier_bound(d, head_dim);
        let mut wq = Vec::new();
        let mut wk = Vec::new();
        for h in 0..n_heads {
            wq.push(store.add(
                format!("{name}.wq{h}"),
                init::matrix_idx(seed, &format!("{name}.wq{h}"), d, head_dim, scale),
            ));
            wk.push(store.add(
                format!("{name}.wk{h}"),
                init::matrix_idx(seed, &format!("{name}.wk{h}"), d, head_dim, scale),
            ));
        }
        let wv = store.add(
            format!("{name}.wv"),
            init::matrix_idx(seed, &format!("{name}.wv"), d, head_dim, scale),
        );
        let wo = store.add(
            format!("{name}.wo"),
            init::matrix_idx(seed, &format!("{name}.wo"), head_dim, d, init::xavier_bound(head_dim, d)),
        );
        InterpretableMultiHeadAttention {
            wq,
            wk,
            wv,
            wo,
            d,
            n_heads,
            head_dim,
        }
    }

    /// `seq` holds one (batch x d) tensor per position; the first `n_enc`
    /// positions are encoder steps, the rest are decoder steps (the queries).
    /// Causal mask: decoder position j attends to all encoder positions and
    /// decoder positions up to and including itself.
    pub fn forward(
        &self,
        store: &ParamStore,
        seq: &[Tensor],
        n_enc: usize,
    ) -> Result<(Vec<Tensor>, AttnWeights, AttnCache)> {
        let total = seq.len();
        if n_enc >= total {
            return Err(Error::shape(
                "multihead_attention",
                format!("n_enc {n_enc} leaves no decoder positions in sequence of {total}"),
            ));
        }
        let tau = total - n_enc;
        let batch = seq[0].rows();
        for (t, s) in seq.iter().enumerate() {
            if s.rows() != batch || s.cols() != self.d {
                return Err(Error::shape(
                    "multihead_attention",
                    format!("position {t} has shape {:?}", s.shape()),
                ));
            }
        }
        let inv_sqrt = 1.0 / (self.head_dim as f64).sqrt();
        // causal mask per query row, shared across batch and heads
        let mut allowed = vec![false; tau * total];
        for j in 0..tau {
            for t in 0..total {
                allowed[j * total + t] = t < n_enc + j + 1;
            }
        }

        let mut cache = AttnCache {
            seq_b: Vec::with_capacity(batch),
            q: Vec::with_capacity(batch),
            k: Vec::with_capacity(batch),
            a: Vec::with_capacity(batch),
            abar: Vec::with_capacity(batch),
            v: Vec::with_capacity(batch),
            out0: Vec::with_capacity(batch),
            n_enc,
        };
        let mut outputs: Vec<Tensor> = (0..tau).map(|_| Tensor::zeros(&[batch, self.d])).collect();
        let mut weights = AttnWeights {
            per_head: Vec::with_capacity(batch),
            n_queries: tau,
            n_keys: total,
        };

        for b in 0..batch {
            let mut seq_b = Tensor::zeros(&[total, self.d]);
            for (t, s) in seq.iter().enumerate() {
                seq_b.row_mut(t).copy_from_slice(s.row(b));
            }
            let mut q_in = Tensor::zeros(&[tau, self.d]);
            for j in 0..tau {
                q_in.row_mut(j).copy_from_slice(seq_b.row(n_enc + j));
            }
            let v = seq_b.matmul(store.value(self.wv));
            let mut heads_q = Vec::with_capacity(self.n_heads);
            let mut heads_k = Vec::with_capacity(self.n_heads);
            let mut heads_a = Vec::with_capacity(self.n_heads);
            let mut abar = Tensor::zeros(&[tau, total]);
            for h in 0..self.n_heads {
                let q = q_in.matmul(store.value(self.wq[h]));
                let k = seq_b.matmul(store.value(self.wk[h]));
                let mut scores = q.matmul_t_other(&k);
                scores.scale(inv_sqrt);
                let a = softmax_masked(&scores, &allowed)?;
                abar.add_assign(&a);
                heads_q.push(q);
                heads_k.push(k);
                heads_a.push(a);
            }
            abar.scale(1.0 / self.n_heads as f64);
            let out0 = abar.matmul(&v);
            let out = out0.matmul(store.value(self.wo));
            for j in 0..tau {
                outputs[j].row_mut(b).copy_from_slice(out.row(j));
            }
            weights.per_head.push(heads_a.clone());
            cache.seq_b.push(seq_b);
            cache.q.push(heads_q);
            cache.k.push(heads_k);
            cache.a.push(heads_a);
            cache.abar.push(abar);
            cache.v.push(v);
            cache.out0.push(out0);
        }
        Ok((outputs, weights, cache))
    }

    /// `dys` holds the gradient per decoder position; returns the gradient
    /// per sequence position.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &AttnCache,
        dys: &[Tensor],
    ) -> Vec<Tensor> {
        let batch = cache.seq_b.len();
        let total = cache.seq_b[0].rows();
        let tau = dys.len();
        let n_enc = cache.n_enc;
        let inv_sqrt = 1.0 / (self.head_dim as f64).sqrt();
        let mut dseq: Vec<Tensor> = (0..total).map(|_| Tensor::zeros(&[batch, self.d])).collect();

        for b in 0..batch {
            let mut dy_b = Tensor::zeros(&[tau, self.d]);
            for (j, dy) in dys.iter().enumerate() {
                dy_b.row_mut(j).copy_from_slice(dy.row(b));
            }
            // out = out0 * wo
            let dwo = cache.out0[b].matmul_t_self(&dy_b);
            store.grad_mut(self.wo).add_assign(&dwo);
            let dout0 = dy_b.matmul_t_other(store.value(self.wo));
            // out0 = abar * v
            let dabar = dout0.matmul_t_other(&cache.v[b]);
            let dv = cache.abar[b].matmul_t_self(&dout0);
            // v = seq_b * wv
            let dwv = cache.seq_b[b].matmul_t_self(&dv);
            store.grad_mut(self.wv).add_assign(&dwv);
            let mut dseq_b = dv.matmul_t_other(store.value(self.wv));
            // per head: abar = mean(a_h)
            let mut da_scaled = dabar;
            da_scaled.scale(1.0 / self.n_heads as f64);
            let mut dq_in = Tensor::zeros(&[tau, self.d]);
            for h in 0..self.n_heads {
                let dscores = {
                    let mut ds = softmax_backward(&cache.a[b][h], &da_scaled);
                    ds.scale(inv_sqrt);
                    ds
                };
                // scores = q * k^T
                let dq = dscores.matmul(&cache.k[b][h]);
                let dk = dscores.matmul_t_self(&cache.q[b][h]);
                let dwq = {
                    let mut q_in = Tensor::zeros(&[tau, self.d]);
                    for j in 0..tau {
                        q_in.row_mut(j).copy_from_slice(cache.seq_b[b].row(n_enc + j));
                    }
                    q_in.matmul_t_self(&dq)
                };
                store.grad_mut(self.wq[h]).add_assign(&dwq);
                dq_in.add_assign(&dq.matmul_t_other(store.value(self.wq[h])));
                let dwk = cache.seq_b[b].matmul_t_self(&dk);
                store.grad_mut(self.wk[h]).add_assign(&dwk);
                dseq_b.add_assign(&dk.matmul_t_other(store.value(self.wk[h])));
            }
            for t in 0..total {
                for (g, v) in dseq[t].row_mut(b).iter_mut().zip(dseq_b.row(t)) {
                    *g += v;
                }
            }
            for j in 0..tau {
                for (g, v) in dseq[n_enc + j].row_mut(b).iter_mut().zip(dq_in.row(j)) {
                    *g += v;
                }
            }
        }
        dseq
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_positions_give_uniform_weights() {
        let mut store = ParamStore::new();
        let attn = InterpretableMultiHeadAttention::new(&mut store, 3, "attn", 8, 2);
        let pos = Tensor::from_vec(&[1, 8], (0..8).map(|i| (i as f64).sin()).collect());
        let seq: Vec<Tensor> = (0..5).map(|_| pos.clone()).collect();
        let (_, weights, _) = attn.forward(&store, &seq, 4).unwrap();
        let avg = weights.averaged(0);
        // single decoder position attends all 5 positions uniformly
        for t in 0..5 {
            assert!((avg.at(0, t) - 0.2).abs() < 1e-12, "weight {}", avg.at(0, t));
        }
    }

    #[test]
    fn weight_rows_sum_to_one() {
        let mut store = ParamStore::new();
        let attn = InterpretableMultiHeadAttention::new(&mut store, 4, "attn", 8, 4);
        let seq: Vec<Tensor> = (0..7)
            .map(|t| {
                Tensor::from_vec(&[3, 8], (0..24).map(|i| ((i * 7 + t) as f64 * 0.37).cos()).collect())
            })
            .collect();
        let (_, weights, _) = attn.forward(&store, &seq, 5).unwrap();
        for b in 0..3 {
            for h in 0..4 {
                let w = &weights.per_head[b][h];
                for j in 0..w.rows() {
                    let sum: f64 = w.row(j).iter().sum();
                    assert!((sum - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn causal_mask_blocks_future_decoder_positions() {
        let mut store = ParamStore::new();
        let attn = InterpretableMultiHeadAttention::new(&mut store, 9, "attn", 8, 2);
        let mk = |salt: u64| -> Vec<Tensor> {
            (0..6)
                .map(|t| {
                    Tensor::from_vec(
                        &[2, 8],
                        (0..16)
                            .map(|i| ((i as u64 * 31 + t * 7 + salt * (t >= 5) as u64 * 997) as f64 * 0.11).sin())
                            .collect(),
                    )
                })
                .collect()
        };
        // two decoder positions (n_enc=4); altering the last position's input
        // must leave the first decoder output bitwise unchanged
        let (out_a, _, _) = attn.forward(&store, &mk(0), 4).unwrap();
        let (out_b, _, _) = attn.forward(&store, &mk(1), 4).unwrap();
        assert_eq!(out_a[0], out_b[0]);
        assert_ne!(out_a[1], out_b[1]);
    }
}
