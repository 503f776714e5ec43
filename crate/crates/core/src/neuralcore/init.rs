//! Deterministic weight initialization.
//!
//! Every weight element is a pure function of (seed, tensor name, row key,
//! column key). Keys on axes that correspond to input variables or vocabulary
//! entries carry the variable/category *name*, so constructing a model from a
//! permuted feature catalog yields the same weights per variable — outputs
//! are invariant and selection weights permute along with the declaration.

use crate::tensor::Tensor;

/// Identifies one coordinate along a tensor axis.
#[derive(Copy, Clone)]
pub enum Key<'a> {
    /// Anonymous axis position (hidden units, gate slots, ...).
    Idx(usize),
    /// Position tied to a named entity (feature or category) plus an
    /// offset within that entity's block.
    Named(&'a str, usize),
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv_bytes(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn mix_key(h: u64, key: &Key<'_>) -> u64 {
    match key {
        Key::Idx(i) => fnv_bytes(fnv_bytes(h, &[0x01]), &(*i as u64).to_le_bytes()),
        Key::Named(name, off) => {
            let h = fnv_bytes(fnv_bytes(h, &[0x02]), name.as_bytes());
            fnv_bytes(h, &(*off as u64).to_le_bytes())
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform value in [-1, 1) for one coordinate.
pub fn unit(seed: u64, tensor: &str, row: Key<'_>, col: Key<'_>) -> f64 {
    let mut h = fnv_bytes(FNV_OFFSET, &seed.to_le_bytes());
    h = fnv_bytes(h, tensor.as_bytes());
    h = mix_key(h, &row);
    h = mix_key(h, &col);
    let u = splitmix(h);
    ((u >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
}

/// Xavier-uniform bound for the given fan-in/fan-out.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Matrix of shape (rows.len() x cols.len()) with per-coordinate values
/// scaled to [-scale, scale).
pub fn matrix(seed: u64, name: &str, rows: &[Key<'_>], cols: &[Key<'_>], scale: f64) -> Tensor {
    let mut data = Vec::with_capacity(rows.len() * cols.len());
    for r in rows {
        for c in cols {
            data.push(unit(seed, name, *r, *c) * scale);
        }
    }
    Tensor::from_vec(&[rows.len(), cols.len()], data)
}

/// Matrix with plain index keys on both axes.
pub fn matrix_idx(seed: u64, name: &str, rows: usize, cols: usize, scale: f64) -> Tensor {
    let rk: Vec<Key> = (0..rows).map(Key::Idx).collect();
    let ck: Vec<Key> = (0..cols).map(Key::Idx).collect();
    matrix(seed, name, &rk, &ck, scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_name_sensitive() {
        let a = unit(1, "w", Key::Idx(0), Key::Idx(1));
        let b = unit(1, "w", Key::Idx(0), Key::Idx(1));
        assert_eq!(a, b);
        assert_ne!(a, unit(2, "w", Key::Idx(0), Key::Idx(1)));
        assert_ne!(a, unit(1, "w2", Key::Idx(0), Key::Idx(1)));
        assert_ne!(a, unit(1, "w", Key::Idx(1), Key::Idx(0)));
    }

    #[test]
    fn named_keys_are_position_independent() {
        // the same (name, offset) key yields the same value regardless of
        // where the block sits in the matrix
        let rows_a = [Key::Named("ndvi", 0), Key::Named("ta", 0)];
        let rows_b = [Key::Named("ta", 0), Key::Named("ndvi", 0)];
        let cols = [Key::Idx(0), Key::Idx(1)];
        let a = matrix(7, "w", &rows_a, &cols, 1.0);
        let b = matrix(7, "w", &rows_b, &cols, 1.0);
        assert_eq!(a.row(0), b.row(1));
        assert_eq!(a.row(1), b.row(0));
    }

    #[test]
    fn values_bounded_and_spread() {
        let t = matrix_idx(3, "big", 64, 64, 0.5);
        assert!(t.data().iter().all(|v| v.abs() <= 0.5));
        let mean: f64 = t.data().iter().sum::<f64>() / t.len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
    }
}
