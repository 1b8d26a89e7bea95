//! Dynamic p×q max pooling over each hidden slice of a grid tensor.
//!
//! Rows are partitioned at floor(a·n/p) for a = 0..p (columns analogously),
//! which yields non-overlapping windows covering every position with sizes
//! differing by at most one.

use crate::error::{Error, Result};
use crate::grid::GridTensor;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub p: usize,
    pub q: usize,
}

impl PoolSpec {
    pub fn new(p: usize, q: usize) -> Result<Self> {
        if p == 0 || q == 0 {
            return Err(Error::Config("pooling partitions must be >= 1".into()));
        }
        Ok(PoolSpec { p, q })
    }
}

/// Pooled values plus the argmax position behind each output cell, needed to
/// route gradients back.
#[derive(Debug, Clone)]
pub struct PoolResult {
    /// `[p, q, d]`
    pub values: Tensor,
    /// argmax (row, col) per output cell, indexed `(a * q + b) * d + k`.
    pub argmax: Vec<(usize, usize)>,
    pub spec: PoolSpec,
    pub n: usize,
    pub m: usize,
}

pub fn boundaries(len: usize, parts: usize) -> Vec<usize> {
    (0..=parts).map(|a| a * len / parts).collect()
}

pub fn dynamic_pool(h: &GridTensor, spec: PoolSpec) -> Result<PoolResult> {
    let (n, m, d) = (h.n, h.m, h.d);
    if spec.p > n || spec.q > m {
        return Err(Error::Config(format!(
            "pooling ({}, {}) exceeds grid ({n}, {m}); reduce p and q to at most the sentence lengths",
            spec.p, spec.q
        )));
    }
    let rb = boundaries(n, spec.p);
    let cb = boundaries(m, spec.q);
    let mut values = Tensor::zeros(&[spec.p, spec.q, d]);
    let mut argmax = vec![(0usize, 0usize); spec.p * spec.q * d];
    for a in 0..spec.p {
        for b in 0..spec.q {
            for k in 0..d {
                let mut best = f64::NEG_INFINITY;
                let mut best_pos = (rb[a], cb[b]);
                // first occurrence in row-major order wins ties
                for i in rb[a]..rb[a + 1] {
                    for j in cb[b]..cb[b + 1] {
                        let v = h.at(i, j)[k];
                        if v > best {
                            best = v;
                            best_pos = (i, j);
                        }
                    }
                }
                let out_idx = (a * spec.q + b) * d + k;
                values.data_mut()[out_idx] = best;
                argmax[out_idx] = best_pos;
            }
        }
    }
    Ok(PoolResult {
        values,
        argmax,
        spec,
        n,
        m,
    })
}

/// Routes each output gradient entirely to its argmax input position.
pub fn pool_backward(result: &PoolResult, d_values: &Tensor, d: usize) -> GridTensor {
    let mut dh = GridTensor::zeros(result.n, result.m, d);
    for (out_idx, &(i, j)) in result.argmax.iter().enumerate() {
        let k = out_idx % d;
        dh.at_mut(i, j)[k] += d_values.data()[out_idx];
    }
    dh
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_from(rows: &[&[f64]]) -> GridTensor {
        let n = rows.len();
        let m = rows[0].len();
        let mut g = GridTensor::zeros(n, m, 1);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                g.at_mut(i, j)[0] = v;
            }
        }
        g
    }

    #[test]
    fn global_max() {
        let g = grid_from(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let r = dynamic_pool(&g, PoolSpec::new(1, 1).unwrap()).unwrap();
        assert_eq!(r.values.data(), &[4.0]);
    }

    #[test]
    fn full_partition_is_identity() {
        let g = grid_from(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let r = dynamic_pool(&g, PoolSpec::new(2, 2).unwrap()).unwrap();
        assert_eq!(r.values.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn three_by_three_into_two_by_two() {
        // row groups {0}, {1,2}; col groups {0}, {1,2}
        let g = grid_from(&[
            &[1.0, 2.0, 3.0],
            &[4.0, 5.0, 6.0],
            &[7.0, 8.0, 9.0],
        ]);
        let r = dynamic_pool(&g, PoolSpec::new(2, 2).unwrap()).unwrap();
        assert_eq!(r.values.data(), &[1.0, 3.0, 7.0, 9.0]);
    }

    #[test]
    fn oversized_partition_rejected() {
        let g = grid_from(&[&[1.0, 2.0]]);
        let err = dynamic_pool(&g, PoolSpec::new(2, 1).unwrap()).unwrap_err();
        assert!(err.to_string().contains("reduce p and q"));
    }

    #[test]
    fn partition_covers_everything_exactly_once() {
        for n in 1..=8usize {
            for p in 1..=n {
                let b = boundaries(n, p);
                assert_eq!(b[0], 0);
                assert_eq!(b[p], n);
                let mut seen = vec![0usize; n];
                for a in 0..p {
                    assert!(b[a] < b[a + 1], "empty window n={n} p={p}");
                    for i in b[a]..b[a + 1] {
                        seen[i] += 1;
                    }
                }
                assert!(seen.iter().all(|&c| c == 1));
                // sizes differ by at most 1
                let sizes: Vec<usize> = (0..p).map(|a| b[a + 1] - b[a]).collect();
                let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
                assert!(hi - lo <= 1);
            }
        }
    }

    #[test]
    fn matches_brute_force_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let n = rng.gen_range(1..=8);
            let m = rng.gen_range(1..=8);
            let d = rng.gen_range(1..=3);
            let mut g = GridTensor::zeros(n, m, d);
            for v in g.values_mut().data_mut() {
                *v = rng.gen_range(-5.0..5.0);
            }
            let p = rng.gen_range(1..=n);
            let q = rng.gen_range(1..=m);
            let r = dynamic_pool(&g, PoolSpec::new(p, q).unwrap()).unwrap();
            let rb = boundaries(n, p);
            let cb = boundaries(m, q);
            for a in 0..p {
                for b in 0..q {
                    for k in 0..d {
                        let mut expect = f64::NEG_INFINITY;
                        for i in rb[a]..rb[a + 1] {
                            for j in cb[b]..cb[b + 1] {
                                expect = expect.max(g.at(i, j)[k]);
                            }
                        }
                        assert_eq!(r.values.data()[(a * q + b) * d + k], expect);
                    }
                }
            }
        }
    }

    #[test]
    fn backward_conserves_gradient_mass_and_breaks_ties_low() {
        let g = grid_from(&[&[2.0, 2.0], &[2.0, 2.0]]);
        let r = dynamic_pool(&g, PoolSpec::new(1, 1).unwrap()).unwrap();
        assert_eq!(r.argmax[0], (0, 0)); // lowest (row, col) on ties
        let dv = Tensor::from_vec(vec![3.5]);
        let dh = pool_backward(&r, &dv, 1);
        assert_eq!(dh.at(0, 0)[0], 3.5);
        let total: f64 = dh.values().data().iter().sum();
        assert_eq!(total, 3.5);
    }
}
