//! Exhaustive log-domain summation over binary configurations.
//!
//! The objective over `n` enumerated bits `x` is
//! `ℓ(x) = c + Σ f_i x_i + Σ_{i<j} J_ij x_i x_j + Σ_r softplus(g_r + Σ_i K_ri x_i)`,
//! where the softplus terms are binary units summed out in closed form.
//! Configurations are visited in fixed-size chunks; inside a chunk a Gray code
//! flips one bit per step and all fields are updated incrementally. Chunk
//! results are merged in chunk order, so the output does not depend on how
//! many worker threads ran.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::softplus;

/// Default enumeration cap, in bits.
pub const DEFAULT_CAP: usize = 25;

const CHUNK_BITS: usize = 12;

#[derive(Clone, Debug)]
pub(crate) struct LogWeightProblem {
    pub n: usize,
    pub linear: Vec<f64>,
    /// `n × n`, symmetric, zero diagonal.
    pub coupling: Vec<f64>,
    pub constant: f64,
    pub summed_bias: Vec<f64>,
    /// `n × m`; row `i` is the input enumerated bit `i` sends to each summed unit.
    pub summed_coupling: Vec<f64>,
}

/// Running log-sum-exp: the largest term, the sum of all other terms relative
/// to it, and the key of the largest term (smallest key on exact ties).
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct LogSumStats {
    pub max: f64,
    pub rest: f64,
    pub argmax: u64,
}

impl LogSumStats {
    pub fn empty() -> Self {
        LogSumStats {
            max: f64::NEG_INFINITY,
            rest: 0.0,
            argmax: u64::MAX,
        }
    }

    #[inline]
    pub fn push(&mut self, value: f64, key: u64) {
        if value > self.max {
            if self.argmax != u64::MAX {
                self.rest = (self.rest + 1.0) * (self.max - value).exp();
            }
            self.max = value;
            self.argmax = key;
        } else if value == self.max {
            self.rest += 1.0;
            self.argmax = self.argmax.min(key);
        } else {
            self.rest += (value - self.max).exp();
        }
    }

    pub fn merge(self, other: LogSumStats) -> LogSumStats {
        if other.argmax == u64::MAX {
            return self;
        }
        if self.argmax == u64::MAX {
            return other;
        }
        let (hi, lo) = if other.max > self.max { (other, self) } else { (self, other) };
        if hi.max == lo.max {
            LogSumStats {
                max: hi.max,
                rest: hi.rest + lo.rest + 1.0,
                argmax: hi.argmax.min(lo.argmax),
            }
        } else {
            LogSumStats {
                max: hi.max,
                rest: hi.rest + (1.0 + lo.rest) * (lo.max - hi.max).exp(),
                argmax: hi.argmax,
            }
        }
    }

    /// `log Σ exp(ℓ)`.
    pub fn log_sum(&self) -> f64 {
        self.max + self.rest.ln_1p()
    }

    /// `log` of the sum with the largest term removed; `-inf` for a single term.
    pub fn log_rest(&self) -> f64 {
        if self.rest > 0.0 {
            self.max + self.rest.ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

pub(crate) fn check_cap(bits: usize, cap: usize) -> Result<()> {
    if bits > cap || bits > 62 {
        return Err(Error::EnumerationCap { needed: bits, cap });
    }
    Ok(())
}

/// Bit `i` of `key`, with unit 0 the most significant of `n` bits.
#[inline]
pub(crate) fn key_bit(key: u64, n: usize, i: usize) -> u8 {
    ((key >> (n - 1 - i)) & 1) as u8
}

impl LogWeightProblem {
    pub fn empty(n: usize, m: usize) -> Self {
        LogWeightProblem {
            n,
            linear: vec![0.0; n],
            coupling: vec![0.0; n * n],
            constant: 0.0,
            summed_bias: vec![0.0; m],
            summed_coupling: vec![0.0; n * m],
        }
    }

    fn m(&self) -> usize {
        self.summed_bias.len()
    }

    /// `ℓ(x)` evaluated directly.
    pub fn value(&self, x: &[u8]) -> f64 {
        let n = self.n;
        let mut value = self.constant;
        for i in 0..n {
            if x[i] == 1 {
                value += self.linear[i];
                for j in i + 1..n {
                    if x[j] == 1 {
                        value += self.coupling[i * n + j];
                    }
                }
            }
        }
        let m = self.m();
        for r in 0..m {
            let mut s = self.summed_bias[r];
            for i in 0..n {
                if x[i] == 1 {
                    s += self.summed_coupling[i * m + r];
                }
            }
            value += softplus(s);
        }
        value
    }

    pub fn enumerate(&self, cap: usize) -> Result<LogSumStats> {
        check_cap(self.n, cap)?;
        let chunk_bits = self.n.min(CHUNK_BITS);
        let high_bits = self.n - chunk_bits;
        let chunks: Vec<LogSumStats> = (0..1u64 << high_bits)
            .into_par_iter()
            .map(|c| self.enumerate_chunk(c, high_bits, chunk_bits))
            .collect();
        Ok(chunks.into_iter().fold(LogSumStats::empty(), LogSumStats::merge))
    }

    fn enumerate_chunk(&self, chunk: u64, high_bits: usize, chunk_bits: usize) -> LogSumStats {
        let n = self.n;
        let m = self.m();
        let mut x = vec![0u8; n];
        for (i, xi) in x.iter_mut().enumerate().take(high_bits) {
            *xi = ((chunk >> (high_bits - 1 - i)) & 1) as u8;
        }
        // fields of enumerated bits, excluding self-coupling
        let mut field: Vec<f64> = (0..n)
            .map(|i| {
                self.linear[i]
                    + (0..n)
                        .filter(|&j| x[j] == 1)
                        .map(|j| self.coupling[i * n + j])
                        .sum::<f64>()
            })
            .collect();
        let mut summed: Vec<f64> = (0..m)
            .map(|r| {
                self.summed_bias[r]
                    + (0..n)
                        .filter(|&i| x[i] == 1)
                        .map(|i| self.summed_coupling[i * m + r])
                        .sum::<f64>()
            })
            .collect();
        let mut quad = self.value_without_summed(&x);
        let mut stats = LogSumStats::empty();
        let base = chunk << chunk_bits;
        let total = |summed: &[f64]| summed.iter().map(|&s| softplus(s)).sum::<f64>();
        stats.push(quad + total(&summed), base);
        for t in 1u64..1 << chunk_bits {
            let unit = n - 1 - t.trailing_zeros() as usize;
            let sign = if x[unit] == 0 {
                x[unit] = 1;
                quad += field[unit];
                1.0
            } else {
                x[unit] = 0;
                quad -= field[unit];
                -1.0
            };
            let row = &self.coupling[unit * n..(unit + 1) * n];
            for (f, &w) in field.iter_mut().zip(row) {
                *f += sign * w;
            }
            let row = &self.summed_coupling[unit * m..(unit + 1) * m];
            for (s, &w) in summed.iter_mut().zip(row) {
                *s += sign * w;
            }
            stats.push(quad + total(&summed), base | (t ^ (t >> 1)));
        }
        stats
    }

    fn value_without_summed(&self, x: &[u8]) -> f64 {
        let n = self.n;
        let mut value = self.constant;
        for i in 0..n {
            if x[i] == 1 {
                value += self.linear[i];
                for j in i + 1..n {
                    if x[j] == 1 {
                        value += self.coupling[i * n + j];
                    }
                }
            }
        }
        value
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitRng;

    fn random_problem(n: usize, m: usize, seed: u64) -> LogWeightProblem {
        let mut rng = SplitRng::seed(seed);
        let mut p = LogWeightProblem::empty(n, m);
        p.constant = rng.normal();
        for f in p.linear.iter_mut() {
            *f = rng.normal();
        }
        for i in 0..n {
            for j in i + 1..n {
                let w = rng.normal();
                p.coupling[i * n + j] = w;
                p.coupling[j * n + i] = w;
            }
        }
        for g in p.summed_bias.iter_mut() {
            *g = rng.normal();
        }
        for k in p.summed_coupling.iter_mut() {
            *k = rng.normal();
        }
        p
    }

    fn brute_force(p: &LogWeightProblem) -> (f64, f64, u64) {
        let values: Vec<(f64, u64)> = (0..1u64 << p.n)
            .map(|key| {
                let x: Vec<u8> = (0..p.n).map(|i| key_bit(key, p.n, i)).collect();
                (p.value(&x), key)
            })
            .collect();
        let max = values.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
        let argmax = values.iter().filter(|v| v.0 == max).map(|v| v.1).min().unwrap();
        let sum: f64 = values.iter().map(|v| (v.0 - max).exp()).sum();
        (max + sum.ln(), max, argmax)
    }

    #[test]
    fn matches_brute_force_across_chunking() {
        for (n, m, seed) in [(1, 0, 1), (5, 2, 2), (12, 0, 3), (14, 3, 4), (15, 1, 5)] {
            let p = random_problem(n, m, seed);
            let stats = p.enumerate(DEFAULT_CAP).unwrap();
            let (log_sum, max, argmax) = brute_force(&p);
            assert!((stats.log_sum() - log_sum).abs() < 1e-10, "n={n}");
            assert!((stats.max - max).abs() < 1e-10);
            assert_eq!(stats.argmax, argmax);
        }
    }

    #[test]
    fn ties_resolve_to_smallest_key() {
        let p = LogWeightProblem::empty(3, 0);
        let stats = p.enumerate(DEFAULT_CAP).unwrap();
        assert_eq!(stats.argmax, 0);
        assert_eq!(stats.rest, 7.0);
        assert!((stats.log_sum() - 8f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn merge_is_consistent_with_push() {
        let values = [0.3, -1.0, 2.0, 2.0, -5.0, 1.5];
        let mut whole = LogSumStats::empty();
        for (k, &v) in values.iter().enumerate() {
            whole.push(v, k as u64);
        }
        let mut a = LogSumStats::empty();
        let mut b = LogSumStats::empty();
        for (k, &v) in values.iter().enumerate() {
            if k < 3 { a.push(v, k as u64) } else { b.push(v, k as u64) }
        }
        let merged = a.merge(b);
        assert_eq!(merged.max, whole.max);
        assert_eq!(merged.argmax, 2);
        assert!((merged.rest - whole.rest).abs() < 1e-12);
    }

    #[test]
    fn cap_is_enforced() {
        let p = LogWeightProblem::empty(8, 0);
        assert!(matches!(p.enumerate(7), Err(Error::EnumerationCap { needed: 8, cap: 7 })));
    }
}
