//! Discretized nonlocal term
//! `P_j = dx (Σ_{i<j} u_i + ½ u_j) - dx² Σ_l (Σ_{i<l} u_i + ½ u_l)`.

use crate::mesh::{linf, State};
use crate::scalar::{CompensatedSum, Real};

/// Grids at least this large accumulate the prefix sums with compensation.
pub const COMPENSATED_THRESHOLD: usize = 1 << 12;

/// `P_j` per cell, same indexing as the state. Periodic ghosts: `P_{-1} = P_{N-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceVector<T> {
    pub p: Vec<T>,
}

impl<T: Real> SourceVector<T> {
    pub fn max_abs(&self) -> T {
        linf(&self.p)
    }
}

/// Evaluates the source with one prefix-sum pass.
pub fn compute_source<T: Real>(s: &State<T>) -> SourceVector<T> {
    let mut p = vec![T::zero(); s.len()];
    compute_source_into(&s.u, s.grid().dx(), &mut p);
    SourceVector { p }
}

/// In-place variant of [`compute_source`]; `out` must have the length of `u`.
pub fn compute_source_into<T: Real>(u: &[T], dx: T, out: &mut [T]) {
    assert_eq!(u.len(), out.len(), "source buffer length mismatch");
    let half = T::lit(0.5);
    if u.len() >= COMPENSATED_THRESHOLD {
        let mut prefix = CompensatedSum::new();
        let mut total = CompensatedSum::new();
        for (o, &v) in out.iter_mut().zip(u) {
            let raw = prefix.value() + half * v;
            *o = raw;
            total.push(raw);
            prefix.push(v);
        }
        finish(out, dx, total.value());
    } else {
        let mut prefix = T::zero();
        let mut total = T::zero();
        for (o, &v) in out.iter_mut().zip(u) {
            let raw = prefix + half * v;
            *o = raw;
            total += raw;
            prefix += v;
        }
        finish(out, dx, total);
    }
}

#[inline]
fn finish<T: Real>(raw: &mut [T], dx: T, total: T) {
    let shift = dx * dx * total;
    for r in raw.iter_mut() {
        *r = dx * *r - shift;
    }
}

/// Source term used by the time stepper. The nonlocal source is the only
/// production implementation; the trait exists so tests can inject faults.
pub trait SourceTerm<T: Real>: Send + Sync {
    fn compute_into(&self, s: &State<T>, out: &mut [T]);
}

#[derive(Clone, Copy, Debug, Default)]
pub struct NonlocalSource;

impl<T: Real> SourceTerm<T> for NonlocalSource {
    #[inline]
    fn compute_into(&self, s: &State<T>, out: &mut [T]) {
        compute_source_into(&s.u, s.grid().dx(), out);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SourceIdentityReport<T> {
    /// `max_j |D_-P_j - ½(u_j + u_{j-1})|` over cells with a left neighbour inside the domain.
    pub interior_residual: T,
    /// Same quantity at the periodic wrap (first cell); only meaningful for zero-mean states.
    pub wrap_residual: T,
    /// `|Σ_j P_j|`.
    pub sum_residual: T,
}

impl<T: Real> SourceIdentityReport<T> {
    pub fn max_residual(&self) -> T {
        self.interior_residual.max(self.wrap_residual).max(self.sum_residual)
    }
}

pub fn source_identities<T: Real>(s: &State<T>, p: &SourceVector<T>) -> SourceIdentityReport<T> {
    let n = s.len();
    let dx = s.grid().dx();
    let half = T::lit(0.5);
    let residual = |j: usize, jm: usize| ((p.p[j] - p.p[jm]) / dx - half * (s.u[j] + s.u[jm])).abs();
    let interior_residual = (1..n).fold(T::zero(), |m, j| m.max(residual(j, j - 1)));
    let wrap_residual = residual(0, n - 1);
    let sum_residual = p.p.iter().copied().collect::<CompensatedSum<T>>().value().abs();
    SourceIdentityReport {
        interior_residual,
        wrap_residual,
        sum_residual,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Literal double summation of the defining formula.
    fn brute_force(u: &[f64]) -> Vec<f64> {
        let n = u.len();
        let dx = 1.0 / n as f64;
        let raw = |j: usize| {
            let mut acc = 0.0;
            for &v in &u[..j] {
                acc += v;
            }
            acc + 0.5 * u[j]
        };
        let mut total = 0.0;
        for l in 0..n {
            total += raw(l);
        }
        (0..n).map(|j| dx * raw(j) - dx * dx * total).collect()
    }

    fn random_zero_mean(rng: &mut ChaCha8Rng, n: usize) -> State<f64> {
        let mut u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mean = u.iter().sum::<f64>() / n as f64;
        u.iter_mut().for_each(|v| *v -= mean);
        State::new(Grid::new(n).unwrap(), 0.0, u).unwrap()
    }

    #[test]
    fn zero_state_has_zero_source() {
        let s = State::<f64>::zeros(Grid::new(16).unwrap());
        assert!(compute_source(&s).p.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn antisymmetric_two_cell_state() {
        for &a in &[1.0_f64, -3.5, 0.125] {
            let s = State::new(Grid::new(2).unwrap(), 0.0, vec![a, -a]).unwrap();
            let p = compute_source(&s);
            assert!(p.p.iter().all(|v| v.abs() < 1e-15), "{:?}", p.p);
            let rep = source_identities(&s, &p);
            assert!(rep.max_residual() < 1e-15);
        }
    }

    #[test]
    fn alternating_four_cells_matches_brute_force() {
        let u = vec![1.0, -1.0, 1.0, -1.0];
        let s = State::new(Grid::new(4).unwrap(), 0.0, u.clone()).unwrap();
        let p = compute_source(&s);
        // by hand: raw = (½, ½, ½, ½), total = 2, P = ¼·½ - 1/16·2 = 0
        for (a, b) in p.p.iter().zip(brute_force(&u)) {
            assert!((a - b).abs() <= 1e-15);
            assert!(a.abs() <= 1e-15);
        }
    }

    #[test]
    fn prefix_sums_match_brute_force_on_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &n in &[2usize, 3, 17, 256, 1024] {
            for _ in 0..5 {
                let s = random_zero_mean(&mut rng, n);
                let fast = compute_source(&s);
                let slow = brute_force(&s.u);
                let scale = slow.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                for (a, b) in fast.p.iter().zip(&slow) {
                    assert!((a - b).abs() <= 1e-13 * scale, "N={n}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn identities_on_random_zero_mean_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let s = random_zero_mean(&mut rng, 64);
            let p = compute_source(&s);
            let rep = source_identities(&s, &p);
            assert!(rep.interior_residual <= 1e-12);
            assert!(rep.wrap_residual <= 1e-12);
            assert!(rep.sum_residual <= 1e-12);
            assert!(p.max_abs() <= 2.0 * crate::mesh::linf_norm(&s));
        }
    }

    #[test]
    fn compensated_path_agrees_with_plain_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_zero_mean(&mut rng, COMPENSATED_THRESHOLD);
        let comp = compute_source(&s);
        let mut plain = vec![0.0; s.len()];
        let dx = s.grid().dx();
        let mut prefix = 0.0;
        let mut total = 0.0;
        for (o, &v) in plain.iter_mut().zip(&s.u) {
            *o = prefix + 0.5 * v;
            total += *o;
            prefix += v;
        }
        finish(&mut plain, dx, total);
        for (a, b) in comp.p.iter().zip(&plain) {
            assert!((a - b).abs() <= 1e-12);
        }
        let rep = source_identities(&s, &comp);
        assert!(rep.max_residual() <= 1e-11, "{rep:?}");
    }
}
