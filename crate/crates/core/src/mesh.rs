//! Uniform periodic grid on `[0, 1]`, cell-average states and discrete norms.
//!
//! Cells are stored 0-based: cell `i` covers `[i·dx, (i+1)·dx)`, its right
//! face sits at `(i+1)·dx` and the periodic ghosts are `u[-1] = u[N-1]`,
//! `u[N] = u[0]`.

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid<T> {
    n: usize,
    dx: T,
}

impl<T: Real> Grid<T> {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::param("N", format!("need at least 2 cells, got {n}")));
        }
        Ok(Self {
            n,
            dx: T::one() / T::from_count(n),
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn dx(&self) -> T {
        self.dx
    }

    /// Center of cell `i`, `(i + ½)·dx`.
    #[inline]
    pub fn center(&self, i: usize) -> T {
        (T::from_count(i) + T::lit(0.5)) / T::from_count(self.n)
    }

    /// Face `i` at `i·dx`, for `i = 0..=N`.
    #[inline]
    pub fn face(&self, i: usize) -> T {
        T::from_count(i) / T::from_count(self.n)
    }

    pub fn centers(&self) -> impl Iterator<Item = T> + '_ {
        (0..self.n).map(move |i| self.center(i))
    }

    pub fn faces(&self) -> impl Iterator<Item = T> + '_ {
        (0..=self.n).map(move |i| self.face(i))
    }
}

/// Discrete solution: cell averages at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct State<T> {
    pub t: T,
    pub u: Vec<T>,
    grid: Grid<T>,
}

impl<T: Real> State<T> {
    pub fn new(grid: Grid<T>, t: T, u: Vec<T>) -> Result<Self> {
        if u.len() != grid.len() {
            return Err(Error::Input(format!(
                "state has {} values for a grid of {} cells",
                u.len(),
                grid.len()
            )));
        }
        if let Some(i) = u.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite value in cell {i}")));
        }
        Ok(Self { t, u, grid })
    }

    pub fn zeros(grid: Grid<T>) -> Self {
        Self {
            t: T::zero(),
            u: vec![T::zero(); grid.len()],
            grid,
        }
    }

    #[inline]
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.u.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub(crate) fn from_parts_unchecked(grid: Grid<T>, t: T, u: Vec<T>) -> Self {
        debug_assert_eq!(u.len(), grid.len());
        Self { t, u, grid }
    }

    /// `dx · Σ u_j`.
    pub fn mass(&self) -> T {
        self.grid.dx * self.u.iter().copied().sum::<T>()
    }
}

/// Initial datum `u₀` on the periodic unit interval.
pub trait InitialProfile<T: Real>: Send + Sync {
    fn name(&self) -> &str;

    fn eval(&self, x: T) -> T;

    /// `(1/(b-a)) ∫_a^b u₀`, when known in closed form.
    fn exact_cell_average(&self, _a: T, _b: T) -> Option<T> {
        None
    }
}

/// Profile given by a closure, averaged by Gauss–Legendre quadrature.
pub struct FnProfile<T> {
    name: String,
    f: Box<dyn Fn(T) -> T + Send + Sync>,
}

impl<T: Real> FnProfile<T> {
    pub fn new(name: impl Into<String>, f: impl Fn(T) -> T + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            f: Box::new(f),
        }
    }
}

impl<T: Real> InitialProfile<T> for FnProfile<T> {
    fn name(&self) -> &str {
        &self.name
    }
    fn eval(&self, x: T) -> T {
        (self.f)(x)
    }
}

/// 5-point Gauss–Legendre nodes and weights on `[-1, 1]`.
const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

fn gauss_average<T: Real, P: InitialProfile<T> + ?Sized>(p: &P, a: T, b: T) -> T {
    let half = T::lit(0.5) * (b - a);
    let mid = T::lit(0.5) * (a + b);
    let mut acc = T::zero();
    for &(node, weight) in &GAUSS5 {
        acc += T::lit(weight) * p.eval(mid + half * T::lit(node));
    }
    T::lit(0.5) * acc
}

/// `u⁰_j = (1/dx) ∫_{I_j} u₀`, exact when the profile provides averages.
pub fn cell_average_init<T: Real, P: InitialProfile<T> + ?Sized>(profile: &P, grid: Grid<T>) -> Result<State<T>> {
    let u: Vec<T> = (0..grid.len())
        .map(|i| {
            let (a, b) = (grid.face(i), grid.face(i + 1));
            profile
                .exact_cell_average(a, b)
                .unwrap_or_else(|| gauss_average(profile, a, b))
        })
        .collect();
    if let Some(i) = u.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!(
            "profile `{}` is not finite on cell {i}",
            profile.name()
        )));
    }
    Ok(State { t: T::zero(), u, grid })
}

/// `dx · Σ |u_j|`.
pub fn l1_norm<T: Real>(s: &State<T>) -> T {
    s.grid.dx * s.u.iter().map(|v| v.abs()).sum::<T>()
}

/// `max_j |u_j|`.
pub fn linf_norm<T: Real>(s: &State<T>) -> T {
    linf(&s.u)
}

pub(crate) fn linf<T: Real>(u: &[T]) -> T {
    u.iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

/// Periodic total variation `Σ_j |u_j - u_{j-1}|` including the wraparound jump.
pub fn bv_seminorm<T: Real>(s: &State<T>) -> T {
    bv(&s.u)
}

pub(crate) fn bv<T: Real>(u: &[T]) -> T {
    let n = u.len();
    (0..n).map(|j| (u[j] - u[(j + n - 1) % n]).abs()).sum()
}

/// Largest periodic jump `max_j |u_j - u_{j-1}|`.
pub fn max_jump<T: Real>(s: &State<T>) -> T {
    let n = s.u.len();
    (0..n).fold(T::zero(), |m, j| m.max((s.u[j] - s.u[(j + n - 1) % n]).abs()))
}

/// Block-averages `fine` onto `coarse`. Requires `fine.N` divisible by `coarse.N`.
pub fn restrict<T: Real>(fine: &State<T>, coarse: Grid<T>) -> Result<State<T>> {
    let nf = fine.grid.len();
    let nc = coarse.len();
    if !nf.is_multiple_of(nc) {
        return Err(Error::Input(format!(
            "cannot restrict N={nf} onto N={nc}: not divisible"
        )));
    }
    let ratio = nf / nc;
    let inv = T::one() / T::from_count(ratio);
    let u = fine
        .u
        .chunks_exact(ratio)
        .map(|block| block.iter().copied().sum::<T>() * inv)
        .collect();
    Ok(State {
        t: fine.t,
        u,
        grid: coarse,
    })
}
