//! Runtime checks of the scheme's discrete estimates: the discrete Kružkov
//! entropy inequality, the sup-norm and BV bounds, the L¹ time-continuity
//! bound, and L¹ stability between two runs.
//!
//! Every check produces a [`CheckResult`] whose residual is normalised so that
//! the check passes when `worst_residual <= tolerance`. Trajectory checks are
//! pure functions of recorded data; [`StepChecks`] computes the same per-step
//! quantities on the fly for runs too long to record every step.

use std::fmt::Write as _;
use std::marker::PhantomData;

use crate::error::{Error, Result};
use crate::evolve::{StepEvent, StepObserver, Trajectory};
use crate::flux::{FluxModel, NumericalFlux};
use crate::mesh::{bv, linf, linf_norm, State};
use crate::scalar::{sgn, Real};
use crate::source::compute_source;

/// Relative slack for the sup-norm and BV bounds.
pub const BOUND_SLACK: f64 = 1e-12;
/// Entropy residual tolerance, relative to `1 + ‖u‖∞ + ‖P‖∞`.
pub const ENTROPY_TOLERANCE: f64 = 1e-12;
/// Relative slack for the discrete L¹ stability estimate.
pub const STABILITY_SLACK: f64 = 1e-10;
/// Mean conservation tolerance, relative to `max(1, ‖u⁰‖∞)`.
pub const MEAN_TOLERANCE: f64 = 1e-10;
/// Exponent of the `e^{γ·2t}` growth factor with `γ = 1`.
pub const GROWTH_RATE: f64 = 2.0;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Location {
    pub n: Option<usize>,
    pub j: Option<usize>,
    pub k: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub worst_residual: f64,
    pub location: Location,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckResult {
    fn empty(name: &str, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            worst_residual: f64::NEG_INFINITY,
            location: Location::default(),
            tolerance,
            pass: true,
        }
    }

    fn record(&mut self, residual: f64, location: Location) {
        // NaN residuals count as failures
        if residual > self.worst_residual || residual.is_nan() {
            self.worst_residual = residual;
            self.location = location;
        }
        self.pass = self.pass && residual <= self.tolerance;
    }

    fn merge(&mut self, other: &CheckResult) {
        self.record(other.worst_residual, other.location);
        self.pass = self.pass && other.pass;
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiagnosticsReport {
    pub checks: Vec<CheckResult>,
}

impl DiagnosticsReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// `check,worst_residual,n,j,k,pass` with empty fields for unused locations.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,worst_residual,n,j,k,pass\n");
        for c in &self.checks {
            let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
            let k = c.location.k.map(crate::io::fmt_float).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                c.name,
                crate::io::fmt_float(c.worst_residual),
                opt(c.location.n),
                opt(c.location.j),
                k,
                c.pass
            );
        }
        out
    }
}

/// Constant of the BV estimate, assembled over the state box `|u| <= m`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundConstants {
    /// `C_f` in `|u^n|_BV <= e^{C_f t}|u⁰|_BV + C_f(e^{C_f t} - 1)`.
    pub c_f_bv: f64,
    pub growth_rate: f64,
    /// `sup |∂²f/∂x²|` over the box.
    pub fxx: f64,
    /// `sup |∂²f/∂x∂u|` over the box.
    pub fxu: f64,
    /// Box half-width the constants were assembled for.
    pub state_box: f64,
}

impl BoundConstants {
    /// With `A = ‖f_xu‖` and `K = ‖f_xx‖ + m`, the per-step recursion
    /// `a' <= (1 + dt A) a + dt K` integrates to `e^{At} a₀ + (K/A)(e^{At} - 1)`,
    /// which is dominated by the single-constant form once `C >= A` and `C² >= K`.
    pub fn assemble<T: Real, M: FluxModel<T> + ?Sized>(model: &M, m: T) -> Option<Self> {
        let (fxx, fxu) = model.second_partial_bounds(m)?;
        let (fxx, fxu, m) = (fxx.to_f64_lossy(), fxu.to_f64_lossy(), m.to_f64_lossy());
        let c_f_bv = fxu.max((fxx + m).sqrt());
        Some(Self {
            c_f_bv,
            growth_rate: GROWTH_RATE,
            fxx,
            fxu,
            state_box: m,
        })
    }

    /// Constants over the largest sup-norm seen along `traj`.
    pub fn for_trajectory<T: Real, M: FluxModel<T> + ?Sized>(model: &M, traj: &Trajectory<T>) -> Option<Self> {
        let m = traj.snapshots.iter().map(linf_norm).fold(T::zero(), T::max);
        Self::assemble(model, m)
    }
}

/// Cell values of both levels plus five points spanning `[min - 1, max + 1]`.
pub fn standard_k_set<T: Real>(prev: &State<T>, next: &State<T>) -> Vec<T> {
    let mut ks: Vec<T> = prev.u.iter().chain(next.u.iter()).copied().collect();
    let lo = ks.iter().copied().fold(T::infinity(), T::min) - T::one();
    let hi = ks.iter().copied().fold(T::neg_infinity(), T::max) + T::one();
    for i in 0..5 {
        ks.push(lo + (hi - lo) * T::from_count(i) / T::lit(4.0));
    }
    ks
}

/// Worst violation of the discrete entropy inequality
/// `D_t η(u_j,k) + D_-Q_{j+½}(k) + s D_-f(x_{j+½},k) <= s P_j`, `s = sgn(u^{n+1}_j - k)`,
/// with `Q_{j+½} = F(x_{j+½}, u_j∨k, u_{j+1}∨k) - F(x_{j+½}, u_j∧k, u_{j+1}∧k)`.
///
/// `P` is recomputed from `prev`. The residual is scaled by `1 + ‖u‖∞ + ‖P‖∞`.
pub fn entropy_residual<T, F, M>(
    prev: &State<T>,
    next: &State<T>,
    dt: T,
    nf: &F,
    model: &M,
    k_set: &[T],
) -> Result<CheckResult>
where
    T: Real,
    F: NumericalFlux<T> + ?Sized,
    M: FluxModel<T> + ?Sized,
{
    if k_set.is_empty() {
        return Err(Error::Input("entropy check needs at least one k".into()));
    }
    if prev.grid() != next.grid() {
        return Err(Error::Input("entropy check needs states on one grid".into()));
    }
    let n = prev.len();
    let grid = prev.grid();
    let dx = grid.dx();
    let p = compute_source(prev);
    let scale = T::one() + linf(&prev.u).max(linf(&next.u)) + p.max_abs();
    let mut result = CheckResult::empty("entropy", ENTROPY_TOLERANCE);
    // face i sits between cells i-1 and i; face 0 doubles as face N
    let faces: Vec<T> = (0..n).map(|i| grid.face(i)).collect();
    let mut q = vec![T::zero(); n];
    let mut fk = vec![T::zero(); n];
    for &k in k_set {
        for i in 0..n {
            let (l, r) = (prev.u[(i + n - 1) % n], prev.u[i]);
            q[i] = nf.eval(faces[i], l.max(k), r.max(k))? - nf.eval(faces[i], l.min(k), r.min(k))?;
            fk[i] = model.value(faces[i], k);
        }
        for i in 0..n {
            let ip = (i + 1) % n;
            let s = sgn(next.u[i] - k);
            let lhs =
                ((next.u[i] - k).abs() - (prev.u[i] - k).abs()) / dt + (q[ip] - q[i]) / dx + s * (fk[ip] - fk[i]) / dx;
            let residual = (lhs - s * p.p[i]) / scale;
            result.record(
                residual.to_f64_lossy(),
                Location {
                    n: None,
                    j: Some(i),
                    k: Some(k.to_f64_lossy()),
                },
            );
        }
    }
    Ok(result)
}

/// `‖u^n‖∞ <= e^{2t^n} ‖u⁰‖∞` at every snapshot; residual relative to the bound.
pub fn check_linf_bound<T: Real>(traj: &Trajectory<T>) -> CheckResult {
    let mut result = CheckResult::empty("linf_bound", BOUND_SLACK);
    let l0 = linf_norm(traj.initial()).to_f64_lossy();
    for (n, s) in traj.snapshots.iter().enumerate() {
        let bound = (GROWTH_RATE * s.t.to_f64_lossy()).exp() * l0;
        result.record(
            relative_excess(linf_norm(s).to_f64_lossy(), bound),
            Location {
                n: Some(n),
                ..Default::default()
            },
        );
    }
    result
}

/// Per-step form `‖u^{n+1}‖∞ <= (1 + 2dt) ‖u^n‖∞`.
pub fn linf_step_residual<T: Real>(prev: &State<T>, next: &State<T>, dt: T) -> f64 {
    let bound = (1.0 + GROWTH_RATE * dt.to_f64_lossy()) * linf_norm(prev).to_f64_lossy();
    relative_excess(linf_norm(next).to_f64_lossy(), bound)
}

/// `|u^n|_BV <= e^{C t}|u⁰|_BV + C(e^{C t} - 1)` at every snapshot.
pub fn check_bv_bound<T: Real>(traj: &Trajectory<T>, consts: &BoundConstants) -> CheckResult {
    let mut result = CheckResult::empty("bv_bound", BOUND_SLACK);
    let bv0 = bv(&traj.initial().u).to_f64_lossy();
    let c = consts.c_f_bv;
    for (n, s) in traj.snapshots.iter().enumerate() {
        let growth = (c * s.t.to_f64_lossy()).exp();
        let bound = growth * bv0 + c * (growth - 1.0);
        result.record(
            relative_excess(bv(&s.u).to_f64_lossy(), bound),
            Location {
                n: Some(n),
                ..Default::default()
            },
        );
    }
    result
}

/// Per-step form `|u^{n+1}|_BV <= (1 + dt‖f_xu‖)|u^n|_BV + dt(‖f_xx‖ + ‖u^n‖∞)`,
/// second partials taken over `|u| <= ‖u^n‖∞`.
pub fn bv_step_residual<T: Real, M: FluxModel<T> + ?Sized>(
    prev: &State<T>,
    next: &State<T>,
    dt: T,
    model: &M,
) -> Option<f64> {
    let m = linf_norm(prev);
    let (fxx, fxu) = model.second_partial_bounds(m)?;
    let dt = dt.to_f64_lossy();
    let bound =
        (1.0 + dt * fxu.to_f64_lossy()) * bv(&prev.u).to_f64_lossy() + dt * (fxx.to_f64_lossy() + m.to_f64_lossy());
    Some(relative_excess(bv(&next.u).to_f64_lossy(), bound))
}

/// `dx Σ |D_t u^n_j| <= dx Σ |D_t u⁰_j| + 2(e^{2t^n} - 1)‖u⁰‖∞`.
///
/// Needs a trajectory recorded at every step.
pub fn check_time_continuity<T: Real>(traj: &Trajectory<T>) -> Result<CheckResult> {
    if !traj.is_every_step() {
        return Err(Error::Input("time-continuity check needs every step recorded".into()));
    }
    let mut result = CheckResult::empty("time_continuity", BOUND_SLACK);
    let l0 = linf_norm(traj.initial()).to_f64_lossy();
    let mut tv0 = None;
    for (n, pair) in traj.snapshots.windows(2).enumerate() {
        let tv = time_derivative_l1(&pair[0], &pair[1], traj.dts[n]);
        let tv0 = *tv0.get_or_insert(tv);
        let bound = tv0 + 2.0 * ((GROWTH_RATE * pair[0].t.to_f64_lossy()).exp() - 1.0) * l0;
        result.record(
            relative_excess(tv, bound),
            Location {
                n: Some(n),
                ..Default::default()
            },
        );
    }
    Ok(result)
}

/// `dx Σ_j |u^{n+1}_j - u^n_j| / dt`.
pub fn time_derivative_l1<T: Real>(prev: &State<T>, next: &State<T>, dt: T) -> f64 {
    let dx = prev.grid().dx();
    let diff: T = prev.u.iter().zip(&next.u).map(|(a, b)| (*b - *a).abs()).sum();
    (dx * diff / dt).to_f64_lossy()
}

/// Measured constant `C` in `‖u(t) - u(s)‖₁ <= C (|t - s| + dt_max)` over snapshot pairs.
pub fn time_modulus_constant<T: Real>(traj: &Trajectory<T>) -> f64 {
    let dt_max = traj.dts.iter().copied().fold(T::zero(), T::max).to_f64_lossy();
    let snaps = &traj.snapshots;
    let stride = (snaps.len() / 256).max(1);
    let picked: Vec<&State<T>> = snaps.iter().step_by(stride).collect();
    let mut c = 0.0_f64;
    for (a, sa) in picked.iter().enumerate() {
        for sb in &picked[a + 1..] {
            let dx = sa.grid().dx();
            let dist: T = sa.u.iter().zip(&sb.u).map(|(x, y)| (*x - *y).abs()).sum();
            let denom = (sb.t - sa.t).to_f64_lossy().abs() + dt_max;
            if denom > 0.0 {
                c = c.max((dx * dist).to_f64_lossy() / denom);
            }
        }
    }
    c
}

/// `‖u^n - v^n‖₁ <= e^{2t^n}‖u⁰ - v⁰‖₁ (1 + 1e-10)` for two lockstep runs.
pub fn check_l1_stability<T: Real>(a: &Trajectory<T>, b: &Trajectory<T>) -> Result<CheckResult> {
    if a.snapshots.len() != b.snapshots.len() || a.dts != b.dts {
        return Err(Error::Input(
            "stability check needs trajectories with one step sequence".into(),
        ));
    }
    if a.initial().grid() != b.initial().grid() {
        return Err(Error::Input("stability check needs trajectories on one grid".into()));
    }
    let mut result = CheckResult::empty("l1_stability", STABILITY_SLACK);
    let dist = |x: &State<T>, y: &State<T>| l1_distance(x, y).to_f64_lossy();
    let d0 = dist(a.initial(), b.initial());
    for (n, (sa, sb)) in a.snapshots.iter().zip(&b.snapshots).enumerate() {
        if sa.t != sb.t {
            return Err(Error::Input(format!("snapshot {n} at different times")));
        }
        let bound = (GROWTH_RATE * sa.t.to_f64_lossy()).exp() * d0;
        result.record(
            relative_excess(dist(sa, sb), bound),
            Location {
                n: Some(n),
                ..Default::default()
            },
        );
    }
    Ok(result)
}

/// `|dx Σ u^n_j| <= 1e-10 max(1, ‖u⁰‖∞)` at every snapshot; residual is `|mass| / max(1, ‖u⁰‖∞)`.
pub fn check_mean_conservation<T: Real>(traj: &Trajectory<T>) -> CheckResult {
    let mut result = CheckResult::empty("mean_conservation", MEAN_TOLERANCE);
    let scale = linf_norm(traj.initial()).to_f64_lossy().max(1.0);
    for (n, s) in traj.snapshots.iter().enumerate() {
        result.record(
            s.mass().to_f64_lossy().abs() / scale,
            Location {
                n: Some(n),
                ..Default::default()
            },
        );
    }
    result
}

/// `(value - bound) / bound`, or the raw excess when the bound is zero.
fn relative_excess(value: f64, bound: f64) -> f64 {
    if bound > 0.0 {
        (value - bound) / bound
    } else {
        value - bound
    }
}

/// Streaming versions of the per-step checks, attachable to any run.
pub struct StepChecks<'a, T: Real, F: ?Sized, M: ?Sized> {
    nf: &'a F,
    model: &'a M,
    /// Run the entropy check every `entropy_stride` steps; 0 disables it.
    entropy_stride: usize,
    linf0: f64,
    tv0: Option<f64>,
    entropy: CheckResult,
    linf_bound: CheckResult,
    linf_step: CheckResult,
    bv_step: CheckResult,
    time_continuity: CheckResult,
    mean: CheckResult,
    _scalar: PhantomData<T>,
}

impl<'a, T, F, M> StepChecks<'a, T, F, M>
where
    T: Real,
    F: NumericalFlux<T> + ?Sized,
    M: FluxModel<T> + ?Sized,
{
    pub fn new(nf: &'a F, model: &'a M, initial: &State<T>, entropy_stride: usize) -> Self {
        let linf0 = linf_norm(initial).to_f64_lossy();
        let mut mean = CheckResult::empty("mean_conservation", MEAN_TOLERANCE);
        mean.record(
            initial.mass().to_f64_lossy().abs() / linf0.max(1.0),
            Location {
                n: Some(0),
                ..Default::default()
            },
        );
        Self {
            nf,
            model,
            entropy_stride,
            linf0,
            tv0: None,
            entropy: CheckResult::empty("entropy", ENTROPY_TOLERANCE),
            linf_bound: CheckResult::empty("linf_bound", BOUND_SLACK),
            linf_step: CheckResult::empty("linf_step", BOUND_SLACK),
            bv_step: CheckResult::empty("bv_step", BOUND_SLACK),
            time_continuity: CheckResult::empty("time_continuity", BOUND_SLACK),
            mean,
            _scalar: PhantomData,
        }
    }

    pub fn report(&self) -> DiagnosticsReport {
        let mut checks = vec![
            self.linf_bound.clone(),
            self.linf_step.clone(),
            self.bv_step.clone(),
            self.time_continuity.clone(),
            self.mean.clone(),
        ];
        if self.entropy_stride > 0 {
            checks.insert(0, self.entropy.clone());
        }
        DiagnosticsReport { checks }
    }
}

impl<T, F, M> StepObserver<T> for StepChecks<'_, T, F, M>
where
    T: Real,
    F: NumericalFlux<T> + ?Sized,
    M: FluxModel<T> + ?Sized,
{
    fn on_step(&mut self, e: &StepEvent<'_, T>) -> Result<()> {
        let at = Location {
            n: Some(e.n),
            ..Default::default()
        };
        let next_level = Location {
            n: Some(e.n + 1),
            ..Default::default()
        };
        if self.entropy_stride > 0 && e.n.is_multiple_of(self.entropy_stride) {
            let ks = standard_k_set(e.prev, e.next);
            let mut r = entropy_residual(e.prev, e.next, e.dt, self.nf, self.model, &ks)?;
            r.location.n = Some(e.n);
            self.entropy.merge(&r);
        }
        let bound = (GROWTH_RATE * e.next.t.to_f64_lossy()).exp() * self.linf0;
        self.linf_bound
            .record(relative_excess(linf_norm(e.next).to_f64_lossy(), bound), next_level);
        self.linf_step.record(linf_step_residual(e.prev, e.next, e.dt), at);
        if let Some(r) = bv_step_residual(e.prev, e.next, e.dt, self.model) {
            self.bv_step.record(r, at);
        }
        let tv = time_derivative_l1(e.prev, e.next, e.dt);
        let tv0 = *self.tv0.get_or_insert(tv);
        let bound = tv0 + 2.0 * ((GROWTH_RATE * e.prev.t.to_f64_lossy()).exp() - 1.0) * self.linf0;
        self.time_continuity.record(relative_excess(tv, bound), at);
        self.mean
            .record(e.next.mass().to_f64_lossy().abs() / self.linf0.max(1.0), next_level);
        Ok(())
    }
}

/// Observer that aborts the run on the first failing per-step check.
pub struct StrictStepChecks<'a, T: Real, F: ?Sized, M: ?Sized>(pub StepChecks<'a, T, F, M>);

impl<T, F, M> StepObserver<T> for StrictStepChecks<'_, T, F, M>
where
    T: Real,
    F: NumericalFlux<T> + ?Sized,
    M: FluxModel<T> + ?Sized,
{
    fn on_step(&mut self, e: &StepEvent<'_, T>) -> Result<()> {
        self.0.on_step(e)?;
        if let Some(bad) = self.0.report().failures().next() {
            return Err(Error::Invariant {
                check: bad.name.clone(),
                step: e.n,
                detail: format!("residual {:e} exceeds {:e}", bad.worst_residual, bad.tolerance),
            });
        }
        Ok(())
    }
}

pub(crate) fn l1_distance<T: Real>(a: &State<T>, b: &State<T>) -> T {
    let dx = a.grid().dx();
    dx * a.u.iter().zip(&b.u).map(|(x, y)| (*x - *y).abs()).sum::<T>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolve::{cfl_dt, evolve_lockstep, step, Evolver, Recording, StepControl};
    use crate::flux::{builtin_oh_flux, engquist_osher, EngquistOsher, OhBuiltin};
    use crate::mesh::Grid;
    use crate::source::SourceTerm;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn eo() -> EngquistOsher<f64, OhBuiltin> {
        engquist_osher(builtin_oh_flux())
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> State<f64> {
        let mut u: Vec<f64> = (0..n).map(|_| rng.gen_range(-amp..amp)).collect();
        let mean = u.iter().sum::<f64>() / n as f64;
        u.iter_mut().for_each(|v| *v -= mean);
        State::new(Grid::new(n).unwrap(), 0.0, u).unwrap()
    }

    fn one_step(s: &State<f64>) -> (State<f64>, f64) {
        let ctrl = StepControl::adaptive(1e9);
        let dt = cfl_dt(&eo(), &builtin_oh_flux(), s, &ctrl).unwrap();
        (step(s, dt, &eo()).unwrap(), dt)
    }

    struct FlippedSource;

    impl SourceTerm<f64> for FlippedSource {
        fn compute_into(&self, s: &State<f64>, out: &mut [f64]) {
            crate::source::compute_source_into(&s.u, s.grid().dx(), out);
            out.iter_mut().for_each(|v| *v = -*v);
        }
    }

    #[test]
    fn zero_data_is_entropy_neutral() {
        let s = State::<f64>::zeros(Grid::new(8).unwrap());
        let r = entropy_residual(&s, &s, 0.01, &eo(), &builtin_oh_flux(), &[-0.5, 0.0, 0.3]).unwrap();
        assert!(r.worst_residual.abs() < 1e-14, "{r:?}");
        assert!(r.pass);
    }

    #[test]
    fn entropy_inequality_holds_for_random_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let s = random_state(&mut rng, 32, 0.5);
            let (next, dt) = one_step(&s);
            let r = entropy_residual(&s, &next, dt, &eo(), &builtin_oh_flux(), &standard_k_set(&s, &next)).unwrap();
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn k_outside_data_range_is_an_identity() {
        // for k below every value, |u - k| = u - k and the inequality is the scheme itself
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random_state(&mut rng, 32, 0.5);
        let (next, dt) = one_step(&s);
        for k in [-2.0, 2.0] {
            let r = entropy_residual(&s, &next, dt, &eo(), &builtin_oh_flux(), &[k]).unwrap();
            assert!(r.worst_residual.abs() < 1e-13, "k={k} {r:?}");
        }
    }

    #[test]
    fn flipped_source_violates_entropy_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_state(&mut rng, 32, 0.5);
        let ctrl = StepControl::adaptive(1e9);
        let dt = cfl_dt(&eo(), &builtin_oh_flux(), &s, &ctrl).unwrap();
        let mut p = vec![0.0; 32];
        FlippedSource.compute_into(&s, &mut p);
        let bad = crate::evolve::apply_update(&s, dt, &eo(), &p).unwrap();
        let r = entropy_residual(&s, &bad, dt, &eo(), &builtin_oh_flux(), &[-2.0]).unwrap();
        assert!(!r.pass && r.worst_residual > 1e-3, "{r:?}");
    }

    #[test]
    fn entropy_input_errors() {
        let a = State::<f64>::zeros(Grid::new(8).unwrap());
        let b = State::<f64>::zeros(Grid::new(4).unwrap());
        assert!(entropy_residual(&a, &a, 0.1, &eo(), &builtin_oh_flux(), &[]).is_err());
        assert!(entropy_residual(&a, &b, 0.1, &eo(), &builtin_oh_flux(), &[0.0]).is_err());
    }

    #[test]
    fn standard_k_set_spans_the_data() {
        let g = Grid::new(2).unwrap();
        let a = State::new(g, 0.0, vec![0.5, -0.5]).unwrap();
        let b = State::new(g, 0.1, vec![0.25, -0.25]).unwrap();
        let ks = standard_k_set(&a, &b);
        assert_eq!(ks.len(), 9);
        assert_eq!(&ks[4..], &[-1.5, -0.75, 0.0, 0.75, 1.5]);
    }

    #[test]
    fn linf_step_by_hand() {
        let g = Grid::new(2).unwrap();
        let prev = State::new(g, 0.0, vec![1.0, -1.0]).unwrap();
        let at_bound = State::new(g, 0.01, vec![1.02, -1.02]).unwrap();
        let over = State::new(g, 0.01, vec![1.03, -1.03]).unwrap();
        assert!(linf_step_residual(&prev, &at_bound, 0.01).abs() < 1e-15);
        assert!((linf_step_residual(&prev, &over, 0.01) - 0.01 / 1.02).abs() < 1e-15);
    }

    #[test]
    fn per_step_bounds_hold_on_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let s = random_state(&mut rng, 64, 0.3);
            let (next, dt) = one_step(&s);
            assert!(linf_step_residual(&s, &next, dt) <= BOUND_SLACK);
            assert!(bv_step_residual(&s, &next, dt, &builtin_oh_flux()).unwrap() <= BOUND_SLACK);
        }
    }

    #[test]
    fn bound_constants_from_closed_forms() {
        let m = 0.05_f64;
        let s = (5f64.sqrt() - 1.0) / 2.0;
        let fxu = m * std::f64::consts::TAU * s.sqrt() * s.exp();
        let fxx = 0.5 * m * m * 4.0 * std::f64::consts::PI.powi(2) * std::f64::consts::E;
        let c = BoundConstants::assemble(&builtin_oh_flux(), m).unwrap();
        assert!((c.fxu - fxu).abs() < 1e-12 && (c.fxx - fxx).abs() < 1e-12);
        assert!((c.c_f_bv - fxu.max((fxx + m).sqrt())).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn single_constant_dominates_step_recursion(
            a in 0.0f64..3.0, k in 0.0f64..3.0, a0 in 0.0f64..2.0, dt in 1e-4f64..0.05, steps in 1usize..400,
        ) {
            let c = a.max(k.sqrt());
            let mut v = a0;
            for _ in 0..steps {
                v = (1.0 + dt * a) * v + dt * k;
            }
            let t = dt * steps as f64;
            let bound = (c * t).exp() * a0 + c * ((c * t).exp() - 1.0);
            prop_assert!(v <= bound * (1.0 + 1e-12) + 1e-15, "v={} bound={}", v, bound);
        }
    }

    fn short_run(n: usize, t_end: f64) -> Trajectory<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let s0 = random_state(&mut rng, n, 0.2);
        Evolver::new(&eo(), &builtin_oh_flux())
            .run(&s0, &StepControl::adaptive(t_end), Recording::EveryStep, &mut [])
            .unwrap()
    }

    #[test]
    fn trajectory_checks_pass_and_match_streaming() {
        let traj = short_run(48, 0.5);
        let nf = eo();
        let model = builtin_oh_flux();
        let mut checks = StepChecks::new(&nf, &model, traj.initial(), 1);
        for (n, pair) in traj.snapshots.windows(2).enumerate() {
            checks
                .on_step(&StepEvent {
                    n,
                    dt: traj.dts[n],
                    prev: &pair[0],
                    next: &pair[1],
                })
                .unwrap();
        }
        let streamed = checks.report();
        assert!(streamed.all_pass(), "{streamed:?}");
        let linf = check_linf_bound(&traj);
        let tc = check_time_continuity(&traj).unwrap();
        let mean = check_mean_conservation(&traj);
        let bvb = check_bv_bound(&traj, &BoundConstants::for_trajectory(&model, &traj).unwrap());
        for c in [&linf, &tc, &mean, &bvb] {
            assert!(c.pass, "{c:?}");
        }
        assert_eq!(
            streamed.get("linf_bound").unwrap().worst_residual.max(0.0),
            linf.worst_residual.max(0.0)
        );
        assert_eq!(
            streamed.get("time_continuity").unwrap().worst_residual,
            tc.worst_residual
        );
    }

    #[test]
    fn time_continuity_needs_every_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s0 = random_state(&mut rng, 16, 0.2);
        let traj = Evolver::new(&eo(), &builtin_oh_flux())
            .run(&s0, &StepControl::adaptive(0.3), Recording::Times(vec![]), &mut [])
            .unwrap();
        assert!(traj.steps > 1);
        assert!(check_time_continuity(&traj).is_err());
    }

    #[test]
    fn stability_of_identical_and_perturbed_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a0 = random_state(&mut rng, 32, 0.3);
        let ctrl = StepControl::adaptive(0.5);
        let (ta, tb) = evolve_lockstep(&a0, &a0, &ctrl, &eo(), &builtin_oh_flux()).unwrap();
        let same = check_l1_stability(&ta, &tb).unwrap();
        assert!(same.pass && same.worst_residual == 0.0);

        let mut b0 = a0.clone();
        b0.u[3] += 1e-3;
        b0.u[17] -= 1e-3;
        let (ta, tb) = evolve_lockstep(&a0, &b0, &ctrl, &eo(), &builtin_oh_flux()).unwrap();
        let r = check_l1_stability(&ta, &tb).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn stability_rejects_mismatched_runs() {
        let a = short_run(16, 0.2);
        let b = short_run(16, 0.4);
        assert!(check_l1_stability(&a, &b).is_err());
        let c = short_run(32, 0.2);
        assert!(check_l1_stability(&a, &c).is_err());
    }

    #[test]
    fn strict_checks_abort_on_flipped_source() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s0 = random_state(&mut rng, 32, 0.3);
        let nf = eo();
        let model = builtin_oh_flux();
        let mut strict = StrictStepChecks(StepChecks::new(&nf, &model, &s0, 1));
        let err = Evolver::new(&nf, &model)
            .with_source(&FlippedSource)
            .run(
                &s0,
                &StepControl::adaptive(0.5),
                Recording::EveryStep,
                &mut [&mut strict],
            )
            .unwrap_err();
        assert!(
            matches!(err, Error::Invariant { ref check, step: 0, .. } if check == "entropy"),
            "{err}"
        );
    }

    #[test]
    fn nan_residual_fails() {
        let mut c = CheckResult::empty("x", 1.0);
        c.record(0.5, Location::default());
        c.record(
            f64::NAN,
            Location {
                j: Some(2),
                ..Default::default()
            },
        );
        assert!(!c.pass);
        assert_eq!(c.location.j, Some(2));
    }

    #[test]
    fn report_csv_layout() {
        let mut c = CheckResult::empty("entropy", ENTROPY_TOLERANCE);
        c.record(
            -0.5,
            Location {
                n: Some(3),
                j: Some(1),
                k: Some(0.25),
            },
        );
        let report = DiagnosticsReport { checks: vec![c] };
        assert_eq!(
            report.to_csv(),
            "check,worst_residual,n,j,k,pass\nentropy,-5.0000000000000000e-1,3,1,2.5000000000000000e-1,true\n"
        );
    }
}
