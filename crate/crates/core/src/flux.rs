//! Space-dependent physical fluxes `f(x, u)` and two-point numerical fluxes `F(x, u, v)`.

use std::marker::PhantomData;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A flux `f(x, u)` that is 1-periodic in `x`, together with its partial derivatives.
pub trait FluxModel<T: Real>: Send + Sync {
    fn name(&self) -> &str;

    fn value(&self, x: T, u: T) -> T;

    fn d_dx(&self, x: T, u: T) -> T;

    fn d_du(&self, x: T, u: T) -> T;

    fn d2_dxx(&self, _x: T, _u: T) -> Option<T> {
        None
    }

    fn d2_dxu(&self, _x: T, _u: T) -> Option<T> {
        None
    }

    /// `sup |∂f/∂u|` over `x ∈ [0,1]` and `u ∈ [u_min, u_max]`.
    fn lipschitz_box(&self, u_min: T, u_max: T) -> T;

    /// `(sup |∂²f/∂x²|, sup |∂²f/∂x∂u|)` over `x ∈ [0,1]`, `|u| <= m`.
    ///
    /// The default samples a lattice, which is enough for smooth fluxes.
    fn second_partial_bounds(&self, m: T) -> Option<(T, T)> {
        const NX: usize = 1024;
        const NU: usize = 65;
        let mut fxx = T::zero();
        let mut fxu = T::zero();
        for i in 0..NX {
            let x = T::from_count(i) / T::from_count(NX);
            for k in 0..NU {
                let u = -m + T::lit(2.0) * m * T::from_count(k) / T::from_count(NU - 1);
                fxx = fxx.max(self.d2_dxx(x, u)?.abs());
                fxu = fxu.max(self.d2_dxu(x, u)?.abs());
            }
        }
        Some((fxx, fxu))
    }

    /// Closed-form Engquist–Osher flux, when the model knows one.
    fn engquist_osher_closed_form(&self, _x: T, _u: T, _v: T) -> Option<T> {
        None
    }
}

impl<T: Real, M: FluxModel<T> + ?Sized> FluxModel<T> for Arc<M> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn value(&self, x: T, u: T) -> T {
        (**self).value(x, u)
    }
    fn d_dx(&self, x: T, u: T) -> T {
        (**self).d_dx(x, u)
    }
    fn d_du(&self, x: T, u: T) -> T {
        (**self).d_du(x, u)
    }
    fn d2_dxx(&self, x: T, u: T) -> Option<T> {
        (**self).d2_dxx(x, u)
    }
    fn d2_dxu(&self, x: T, u: T) -> Option<T> {
        (**self).d2_dxu(x, u)
    }
    fn lipschitz_box(&self, u_min: T, u_max: T) -> T {
        (**self).lipschitz_box(u_min, u_max)
    }
    fn second_partial_bounds(&self, m: T) -> Option<(T, T)> {
        (**self).second_partial_bounds(m)
    }
    fn engquist_osher_closed_form(&self, x: T, u: T, v: T) -> Option<T> {
        (**self).engquist_osher_closed_form(x, u, v)
    }
}

/// `f(x, u) = ½ u² exp(sin 2πx)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct OhBuiltin;

/// Returns the builtin flux `f(x, u) = ½ u² exp(sin 2πx)`.
pub fn builtin_oh_flux() -> OhBuiltin {
    OhBuiltin
}

impl OhBuiltin {
    /// Spatial weight `g(x) = exp(sin 2πx)`.
    #[inline]
    pub fn weight<T: Real>(x: T) -> T {
        (T::TAU() * x).sin().exp()
    }

    #[inline]
    fn weight_dx<T: Real>(x: T) -> T {
        let theta = T::TAU() * x;
        T::TAU() * theta.cos() * theta.sin().exp()
    }

    #[inline]
    fn weight_dxx<T: Real>(x: T) -> T {
        let theta = T::TAU() * x;
        let (s, c) = theta.sin_cos();
        T::TAU() * T::TAU() * (c * c - s) * s.exp()
    }
}

impl<T: Real> FluxModel<T> for OhBuiltin {
    fn name(&self) -> &str {
        "oh_builtin"
    }

    #[inline]
    fn value(&self, x: T, u: T) -> T {
        T::lit(0.5) * u * u * Self::weight(x)
    }

    fn d_dx(&self, x: T, u: T) -> T {
        T::lit(0.5) * u * u * Self::weight_dx(x)
    }

    fn d_du(&self, x: T, u: T) -> T {
        u * Self::weight(x)
    }

    fn d2_dxx(&self, x: T, u: T) -> Option<T> {
        Some(T::lit(0.5) * u * u * Self::weight_dxx(x))
    }

    fn d2_dxu(&self, x: T, u: T) -> Option<T> {
        Some(u * Self::weight_dx(x))
    }

    fn lipschitz_box(&self, u_min: T, u_max: T) -> T {
        T::E() * u_min.abs().max(u_max.abs())
    }

    fn second_partial_bounds(&self, m: T) -> Option<(T, T)> {
        // sup |cos θ e^{sin θ}| is attained where sin θ = (√5 - 1)/2 =: s,
        // and there cos²θ = s. sup |(cos²θ - sin θ) e^{sin θ}| = e at sin θ = 1.
        let s = (T::lit(5.0).sqrt() - T::one()) / T::lit(2.0);
        let g1 = T::TAU() * s.sqrt() * s.exp();
        let g2 = T::TAU() * T::TAU() * T::E();
        Some((T::lit(0.5) * m * m * g2, m * g1))
    }

    #[inline]
    fn engquist_osher_closed_form(&self, x: T, u: T, v: T) -> Option<T> {
        let up = u.max(T::zero());
        let vm = v.min(T::zero());
        Some(T::lit(0.5) * Self::weight(x) * (up * up + vm * vm))
    }
}

type Handle2<T> = Arc<dyn Fn(T, T) -> T + Send + Sync>;

/// Flux model assembled from closures; the entry point for user-registered fluxes.
#[derive(Clone)]
pub struct CustomFlux<T> {
    pub name: String,
    pub value: Handle2<T>,
    pub d_dx: Handle2<T>,
    pub d_du: Handle2<T>,
    pub d2_dxx: Option<Handle2<T>>,
    pub d2_dxu: Option<Handle2<T>>,
    pub lipschitz_box: Handle2<T>,
}

impl<T: Real> FluxModel<T> for CustomFlux<T> {
    fn name(&self) -> &str {
        &self.name
    }
    fn value(&self, x: T, u: T) -> T {
        (self.value)(x, u)
    }
    fn d_dx(&self, x: T, u: T) -> T {
        (self.d_dx)(x, u)
    }
    fn d_du(&self, x: T, u: T) -> T {
        (self.d_du)(x, u)
    }
    fn d2_dxx(&self, x: T, u: T) -> Option<T> {
        self.d2_dxx.as_ref().map(|f| f(x, u))
    }
    fn d2_dxu(&self, x: T, u: T) -> Option<T> {
        self.d2_dxu.as_ref().map(|f| f(x, u))
    }
    fn lipschitz_box(&self, u_min: T, u_max: T) -> T {
        (self.lipschitz_box)(u_min, u_max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FluxKind {
    EngquistOsher,
    LaxFriedrichs,
}

/// Two-point numerical flux `F(x, u, v)` at a cell face located at `x`.
pub trait NumericalFlux<T: Real>: Send + Sync {
    fn kind(&self) -> FluxKind;

    fn eval(&self, x: T, u: T, v: T) -> Result<T>;

    /// Bound on `∂F/∂u - ∂F/∂v` given `sup |f_u|` over the state box.
    /// The scheme is monotone when `dt/dx * stencil_speed <= 1`.
    fn stencil_speed(&self, lipschitz: T) -> T {
        lipschitz
    }
}

impl<T: Real, F: NumericalFlux<T> + ?Sized> NumericalFlux<T> for Box<F> {
    fn kind(&self) -> FluxKind {
        (**self).kind()
    }
    #[inline]
    fn eval(&self, x: T, u: T, v: T) -> Result<T> {
        (**self).eval(x, u, v)
    }
    fn stencil_speed(&self, lipschitz: T) -> T {
        (**self).stencil_speed(lipschitz)
    }
}

impl<T: Real, F: NumericalFlux<T> + ?Sized> NumericalFlux<T> for &F {
    fn kind(&self) -> FluxKind {
        (**self).kind()
    }
    #[inline]
    fn eval(&self, x: T, u: T, v: T) -> Result<T> {
        (**self).eval(x, u, v)
    }
    fn stencil_speed(&self, lipschitz: T) -> T {
        (**self).stencil_speed(lipschitz)
    }
}

/// Engquist–Osher flux
/// `F(x,u,v) = f(x,0) + ∫₀ᵘ max(f_u(x,s),0) ds + ∫₀ᵛ min(f_u(x,s),0) ds`.
///
/// Uses the model's closed form when it has one, adaptive Simpson quadrature otherwise.
#[derive(Clone, Debug)]
pub struct EngquistOsher<T, M> {
    model: M,
    _scalar: PhantomData<fn() -> T>,
}

pub fn engquist_osher<T: Real, M: FluxModel<T>>(model: M) -> EngquistOsher<T, M> {
    EngquistOsher {
        model,
        _scalar: PhantomData,
    }
}

impl<T: Real, M: FluxModel<T>> EngquistOsher<T, M> {
    pub fn model(&self) -> &M {
        &self.model
    }

    /// The quadrature route, bypassing any closed form.
    pub fn eval_by_quadrature(&self, x: T, u: T, v: T) -> Result<T> {
        let tol = T::lit(1e-12).max(T::epsilon() * T::lit(64.0));
        let fail = || Error::Quadrature {
            x: x.to_f64_lossy(),
            u: u.to_f64_lossy(),
            v: v.to_f64_lossy(),
        };
        let pos = adaptive_simpson(|s| self.model.d_du(x, s).max(T::zero()), T::zero(), u, tol).ok_or_else(fail)?;
        let neg = adaptive_simpson(|s| self.model.d_du(x, s).min(T::zero()), T::zero(), v, tol).ok_or_else(fail)?;
        Ok(self.model.value(x, T::zero()) + pos + neg)
    }
}

impl<T: Real, M: FluxModel<T>> NumericalFlux<T> for EngquistOsher<T, M> {
    fn kind(&self) -> FluxKind {
        FluxKind::EngquistOsher
    }

    #[inline]
    fn eval(&self, x: T, u: T, v: T) -> Result<T> {
        match self.model.engquist_osher_closed_form(x, u, v) {
            Some(f) => Ok(f),
            None => self.eval_by_quadrature(x, u, v),
        }
    }
}

/// Global Lax–Friedrichs flux `½(f(x,u)+f(x,v)) - ½ α (v-u)`.
#[derive(Clone, Debug)]
pub struct LaxFriedrichs<T, M> {
    model: M,
    alpha: T,
}

pub fn lax_friedrichs<T: Real, M: FluxModel<T>>(model: M, alpha: T) -> Result<LaxFriedrichs<T, M>> {
    if !(alpha > T::zero()) || !alpha.is_finite() {
        return Err(Error::param(
            "alpha",
            format!("must be positive and finite, got {alpha}"),
        ));
    }
    Ok(LaxFriedrichs { model, alpha })
}

impl<T: Real, M: FluxModel<T>> LaxFriedrichs<T, M> {
    pub fn alpha(&self) -> T {
        self.alpha
    }
}

impl<T: Real, M: FluxModel<T>> NumericalFlux<T> for LaxFriedrichs<T, M> {
    fn kind(&self) -> FluxKind {
        FluxKind::LaxFriedrichs
    }

    #[inline]
    fn eval(&self, x: T, u: T, v: T) -> Result<T> {
        let half = T::lit(0.5);
        Ok(half * (self.model.value(x, u) + self.model.value(x, v)) - half * self.alpha * (v - u))
    }

    fn stencil_speed(&self, lipschitz: T) -> T {
        self.alpha.max(lipschitz)
    }
}

/// Signed integral of `f` over `[a, b]` to absolute tolerance `tol`.
/// Returns `None` if the recursion budget runs out before the tolerance is met.
fn adaptive_simpson<T: Real>(f: impl Fn(T) -> T, a: T, b: T, tol: T) -> Option<T> {
    if a == b {
        return Some(T::zero());
    }
    let (lo, hi, sign) = if a < b { (a, b, T::one()) } else { (b, a, -T::one()) };
    let fa = f(lo);
    let fb = f(hi);
    let m = T::lit(0.5) * (lo + hi);
    let fm = f(m);
    let whole = simpson(lo, hi, fa, fm, fb);
    simpson_step(&f, lo, hi, fa, fm, fb, whole, tol, 50).map(|v| sign * v)
}

#[inline]
fn simpson<T: Real>(a: T, b: T, fa: T, fm: T, fb: T) -> T {
    (b - a) / T::lit(6.0) * (fa + T::lit(4.0) * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<T: Real>(
    f: &impl Fn(T) -> T,
    a: T,
    b: T,
    fa: T,
    fm: T,
    fb: T,
    whole: T,
    tol: T,
    depth: u32,
) -> Option<T> {
    let m = T::lit(0.5) * (a + b);
    let lm = T::lit(0.5) * (a + m);
    let rm = T::lit(0.5) * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if delta.abs() <= T::lit(15.0) * tol {
        return Some(left + right + delta / T::lit(15.0));
    }
    if depth == 0 {
        return None;
    }
    let half_tol = (T::lit(0.5) * tol).max(T::epsilon() * (left.abs() + right.abs()));
    Some(
        simpson_step(f, a, m, fa, flm, fm, left, half_tol, depth - 1)?
            + simpson_step(f, m, b, fm, frm, fb, right, half_tol, depth - 1)?,
    )
}

/// Points at which flux properties are sampled.
#[derive(Clone, Debug)]
pub struct SampleLattice<T> {
    pub xs: Vec<T>,
    pub us: Vec<T>,
}

impl<T: Real> SampleLattice<T> {
    /// `nx` equispaced points in `[0, 1]` and `nu` in `[u_lo, u_hi]`, endpoints included.
    pub fn uniform(nx: usize, nu: usize, u_lo: T, u_hi: T) -> Self {
        let lin = |n: usize, lo: T, hi: T| -> Vec<T> {
            if n == 1 {
                return vec![lo];
            }
            (0..n)
                .map(|i| lo + (hi - lo) * T::from_count(i) / T::from_count(n - 1))
                .collect()
        };
        Self {
            xs: lin(nx, T::zero(), T::one()),
            us: lin(nu, u_lo, u_hi),
        }
    }

    /// 101 × 101 points on `[0,1] × [-1,1]`.
    pub fn consistency_standard() -> Self {
        Self::uniform(101, 101, -T::one(), T::one())
    }

    /// States on `[-1,1]` with step 0.05 at 21 face positions.
    pub fn monotonicity_standard() -> Self {
        Self::uniform(21, 41, -T::one(), T::one())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConsistencyReport<T> {
    /// `max |F(x,u,u) - f(x,u)| / (1 + |f(x,u)|)`.
    pub max_deviation: T,
    pub worst_at: (T, T),
}

pub fn check_consistency<T: Real, F, M>(nf: &F, model: &M, samples: &SampleLattice<T>) -> Result<ConsistencyReport<T>>
where
    F: NumericalFlux<T> + ?Sized,
    M: FluxModel<T> + ?Sized,
{
    let mut report = ConsistencyReport {
        max_deviation: T::zero(),
        worst_at: (T::zero(), T::zero()),
    };
    for &x in &samples.xs {
        for &u in &samples.us {
            let f = model.value(x, u);
            let dev = (nf.eval(x, u, u)? - f).abs() / (T::one() + f.abs());
            if dev > report.max_deviation {
                report = ConsistencyReport {
                    max_deviation: dev,
                    worst_at: (x, u),
                };
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonotonicityReport<T> {
    /// Number of divided differences with the wrong sign beyond `tolerance`.
    pub violations: usize,
    /// Largest wrong-signed increment, zero if none.
    pub worst_violation: T,
    /// `(x, u, v)` where the worst violation starts.
    pub worst_at: Option<(T, T, T)>,
    pub tolerance: T,
}

impl<T: Real> MonotonicityReport<T> {
    pub fn is_monotone(&self) -> bool {
        self.violations == 0
    }
}

/// Checks `F` is nondecreasing in `u` and nonincreasing in `v` on consecutive lattice points.
pub fn check_monotonicity<T: Real, F>(nf: &F, samples: &SampleLattice<T>) -> Result<MonotonicityReport<T>>
where
    F: NumericalFlux<T> + ?Sized,
{
    let tolerance = T::lit(1e-13);
    let mut report = MonotonicityReport {
        violations: 0,
        worst_violation: T::zero(),
        worst_at: None,
        tolerance,
    };
    let mut record = |excess: T, at: (T, T, T)| {
        if excess > tolerance {
            report.violations += 1;
            if excess > report.worst_violation {
                report.worst_violation = excess;
                report.worst_at = Some(at);
            }
        }
    };
    for &x in &samples.xs {
        for &w in &samples.us {
            let mut prev_u = nf.eval(x, samples.us[0], w)?;
            let mut prev_v = nf.eval(x, w, samples.us[0])?;
            for pair in samples.us.windows(2) {
                let next_u = nf.eval(x, pair[1], w)?;
                let next_v = nf.eval(x, w, pair[1])?;
                // increasing first argument must not decrease F
                record(prev_u - next_u, (x, pair[0], w));
                // increasing second argument must not increase F
                record(next_v - prev_v, (x, w, pair[0]));
                prev_u = next_u;
                prev_v = next_v;
            }
        }
    }
    Ok(report)
}
