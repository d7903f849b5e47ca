//! Explicit finite-volume time stepping
//! `u_j ← u_j - dt/dx (F_{j+½} - F_{j-½}) + dt P_j` under a CFL-controlled step.

use crate::error::{Error, Result};
use crate::flux::{FluxModel, NumericalFlux};
use crate::mesh::{linf, linf_norm, State};
use crate::scalar::Real;
use crate::source::{NonlocalSource, SourceTerm};

/// Factor applied to the current sup-norm to bracket the states reachable within one step.
pub const STATE_BOX_BRACKET: f64 = 1.1;
/// Floor on the wave speed; the zero state takes `safety·dx / SPEED_FLOOR`.
pub const SPEED_FLOOR: f64 = 1e-12;
/// Allowed drift of `dx Σ u` relative to `max(1, max |u|)` before a run is aborted.
pub const MEAN_DRIFT_TOLERANCE: f64 = 1e-10;
/// A step that would leave less than this fraction of itself before the target is split in two.
const SLIVER_FRACTION: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DtMode<T> {
    Adaptive,
    Fixed(T),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepControl<T> {
    pub cfl_safety: T,
    pub dt_mode: DtMode<T>,
    pub t_end: T,
}

impl<T: Real> StepControl<T> {
    /// Adaptive stepping with safety factor 0.9.
    pub fn adaptive(t_end: T) -> Self {
        Self {
            cfl_safety: T::lit(0.9),
            dt_mode: DtMode::Adaptive,
            t_end,
        }
    }

    pub fn with_safety(mut self, cfl_safety: T) -> Self {
        self.cfl_safety = cfl_safety;
        self
    }

    pub fn fixed(t_end: T, dt: T) -> Self {
        Self {
            cfl_safety: T::one(),
            dt_mode: DtMode::Fixed(dt),
            t_end,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cfl_safety > T::zero() && self.cfl_safety <= T::one()) {
            return Err(Error::param(
                "cfl_safety",
                format!("must lie in (0, 1], got {}", self.cfl_safety),
            ));
        }
        if !(self.t_end >= T::zero()) || !self.t_end.is_finite() {
            return Err(Error::param(
                "t_end",
                format!("must be finite and nonnegative, got {}", self.t_end),
            ));
        }
        if let DtMode::Fixed(dt) = self.dt_mode {
            if !(dt > T::zero()) || !dt.is_finite() {
                return Err(Error::param("dt", format!("fixed step must be positive, got {dt}")));
            }
        }
        Ok(())
    }
}

/// `stencil_speed(sup |f_u|)` over the bracketed box `|u| <= 1.1 ‖u‖∞`, floored at 1e-12.
pub fn stencil_speed<T, F, M>(nf: &F, model: &M, s: &State<T>) -> T
where
    T: Real,
    F: NumericalFlux<T> + ?Sized,
    M: FluxModel<T> + ?Sized,
{
    let m = T::lit(STATE_BOX_BRACKET) * linf_norm(s);
    nf.stencil_speed(model.lipschitz_box(-m, m)).max(T::lit(SPEED_FLOOR))
}

/// Time step for the next update of `s`, clipped so that `ctrl.t_end` is hit exactly.
/// When a full step would leave less than `SLIVER_FRACTION·dt`, the remaining time is split into two equal steps.
pub fn cfl_dt<T, F, M>(nf: &F, model: &M, s: &State<T>, ctrl: &StepControl<T>) -> Result<T>
where
    T: Real,
    F: NumericalFlux<T> + ?Sized,
    M: FluxModel<T> + ?Sized,
{
    if s.u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("state contains non-finite values".into()));
    }
    let dx = s.grid().dx();
    let speed = stencil_speed(nf, model, s);
    let dt = match ctrl.dt_mode {
        DtMode::Adaptive => ctrl.cfl_safety * dx / speed,
        DtMode::Fixed(dt) => {
            if dt * speed > dx {
                return Err(Error::Cfl {
                    dt: dt.to_f64_lossy(),
                    bound: format!(
                        "dt/dx * speed = {} > 1 (speed {} over |u| <= {})",
                        dt * speed / dx,
                        speed,
                        T::lit(STATE_BOX_BRACKET) * linf_norm(s)
                    ),
                });
            }
            dt
        }
    };
    let remaining = (ctrl.t_end - s.t).max(T::zero());
    if remaining <= dt {
        Ok(remaining)
    } else if remaining - dt < T::lit(SLIVER_FRACTION) * dt {
        Ok(T::lit(0.5) * remaining)
    } else {
        Ok(dt)
    }
}

/// Applies one update with the source values `p` held fixed.
pub fn apply_update<T, F>(s: &State<T>, dt: T, nf: &F, p: &[T]) -> Result<State<T>>
where
    T: Real,
    F: NumericalFlux<T> + ?Sized,
{
    let mut face_flux = vec![T::zero(); s.len()];
    let mut out = vec![T::zero(); s.len()];
    update_into(s, dt, nf, p, &mut face_flux, &mut out, 0)?;
    Ok(State::from_parts_unchecked(*s.grid(), s.t + dt, out))
}

/// One step of the scheme with the nonlocal source evaluated at the current level.
pub fn step<T, F>(s: &State<T>, dt: T, nf: &F) -> Result<State<T>>
where
    T: Real,
    F: NumericalFlux<T> + ?Sized,
{
    let mut p = vec![T::zero(); s.len()];
    SourceTerm::compute_into(&NonlocalSource, s, &mut p);
    apply_update(s, dt, nf, &p)
}

/// `face_flux[i]` holds `F` at face `i` (between cells `i-1` and `i`); face 0 doubles as face N.
fn update_into<T, F>(
    s: &State<T>,
    dt: T,
    nf: &F,
    p: &[T],
    face_flux: &mut [T],
    out: &mut [T],
    step_index: usize,
) -> Result<()>
where
    T: Real,
    F: NumericalFlux<T> + ?Sized,
{
    let n = s.len();
    let grid = s.grid();
    let u = &s.u;
    face_flux[0] = nf.eval(grid.face(0), u[n - 1], u[0])?;
    for i in 1..n {
        face_flux[i] = nf.eval(grid.face(i), u[i - 1], u[i])?;
    }
    let lambda = dt / grid.dx();
    for i in 0..n {
        let right = if i + 1 == n { face_flux[0] } else { face_flux[i + 1] };
        let v = u[i] - lambda * (right - face_flux[i]) + dt * p[i];
        if !v.is_finite() {
            return Err(Error::BlowUp {
                step: step_index,
                cell: i,
            });
        }
        out[i] = v;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepEvent<'a, T> {
    /// Index of the step taking `prev` (level n) to `next` (level n+1).
    pub n: usize,
    pub dt: T,
    pub prev: &'a State<T>,
    pub next: &'a State<T>,
}

/// Per-step hook. Returning an error aborts the run.
pub trait StepObserver<T: Real> {
    fn on_step(&mut self, event: &StepEvent<'_, T>) -> Result<()>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DtSummary<T> {
    pub min: T,
    pub max: T,
    pub mean: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    /// Recorded states, first at `t = 0`, times strictly increasing.
    pub snapshots: Vec<State<T>>,
    pub steps: usize,
    /// Every step size taken, in order.
    pub dts: Vec<T>,
}

impl<T: Real> Trajectory<T> {
    pub fn initial(&self) -> &State<T> {
        &self.snapshots[0]
    }

    pub fn last(&self) -> &State<T> {
        self.snapshots.last().expect("trajectory has an initial snapshot")
    }

    pub fn dt_summary(&self) -> Option<DtSummary<T>> {
        if self.dts.is_empty() {
            return None;
        }
        let min = self.dts.iter().copied().fold(T::infinity(), T::min);
        let max = self.dts.iter().copied().fold(T::neg_infinity(), T::max);
        let mean = self.dts.iter().copied().sum::<T>() / T::from_count(self.dts.len());
        Some(DtSummary { min, max, mean })
    }

    /// True when a snapshot was recorded after every step.
    pub fn is_every_step(&self) -> bool {
        self.snapshots.len() == self.steps + 1
    }
}

/// Which states a run keeps.
#[derive(Clone, Debug, PartialEq)]
pub enum Recording<T> {
    /// Initial state, the state at each requested time, and the final state.
    Times(Vec<T>),
    EveryStep,
}

/// Drives the scheme from an initial state to `ctrl.t_end`.
pub struct Evolver<'a, T: Real, F: ?Sized, M: ?Sized> {
    nf: &'a F,
    model: &'a M,
    source: &'a dyn SourceTerm<T>,
}

impl<'a, T, F, M> Evolver<'a, T, F, M>
where
    T: Real,
    F: NumericalFlux<T> + ?Sized,
    M: FluxModel<T> + ?Sized,
{
    pub fn new(nf: &'a F, model: &'a M) -> Self {
        Self {
            nf,
            model,
            source: &NonlocalSource,
        }
    }

    /// Replaces the nonlocal source; used for fault injection.
    pub fn with_source(mut self, source: &'a dyn SourceTerm<T>) -> Self {
        self.source = source;
        self
    }

    pub fn run(
        &self,
        s0: &State<T>,
        ctrl: &StepControl<T>,
        recording: Recording<T>,
        observers: &mut [&mut dyn StepObserver<T>],
    ) -> Result<Trajectory<T>> {
        ctrl.validate()?;
        let mut targets: Vec<T> = match &recording {
            Recording::Times(ts) => {
                if let Some(bad) = ts.iter().find(|&&t| !(t >= T::zero() && t <= ctrl.t_end)) {
                    return Err(Error::Input(format!("snapshot time {bad} outside [0, {}]", ctrl.t_end)));
                }
                ts.iter().copied().filter(|&t| t > s0.t).collect()
            }
            Recording::EveryStep => Vec::new(),
        };
        targets.push(ctrl.t_end);
        targets.sort_by(|a, b| a.partial_cmp(b).expect("finite snapshot times"));
        targets.dedup();
        let every_step = matches!(recording, Recording::EveryStep);

        check_mean(s0, 0)?;
        let n = s0.len();
        let mut face_flux = vec![T::zero(); n];
        let mut p = vec![T::zero(); n];
        let mut current = s0.clone();
        let mut traj = Trajectory {
            snapshots: vec![s0.clone()],
            steps: 0,
            dts: Vec::new(),
        };
        let mut target_idx = 0;
        while target_idx < targets.len() && targets[target_idx] <= current.t {
            target_idx += 1;
        }

        while current.t < ctrl.t_end {
            let target = targets[target_idx];
            let local = StepControl { t_end: target, ..*ctrl };
            let dt = cfl_dt(self.nf, self.model, &current, &local)?;
            let landing = current.t + dt >= target || dt == target - current.t;

            self.source.compute_into(&current, &mut p);
            let mut out = vec![T::zero(); n];
            update_into(&current, dt, self.nf, &p, &mut face_flux, &mut out, traj.steps)?;
            let t_next = if landing { target } else { current.t + dt };
            let next = State::from_parts_unchecked(*current.grid(), t_next, out);
            check_mean(&next, traj.steps + 1)?;

            let event = StepEvent {
                n: traj.steps,
                dt,
                prev: &current,
                next: &next,
            };
            for obs in observers.iter_mut() {
                obs.on_step(&event)?;
            }
            traj.steps += 1;
            traj.dts.push(dt);
            if landing {
                target_idx += 1;
            }
            if every_step || landing {
                traj.snapshots.push(next.clone());
            }
            current = next;
        }
        Ok(traj)
    }
}

fn check_mean<T: Real>(s: &State<T>, step: usize) -> Result<()> {
    let mass = s.mass();
    let tol = T::lit(MEAN_DRIFT_TOLERANCE).max(T::lit(1e3) * T::epsilon());
    if mass.abs() > tol * linf(&s.u).max(T::one()) {
        return Err(Error::MeanDrift {
            step,
            mean: mass.to_f64_lossy(),
        });
    }
    Ok(())
}

/// Evolves `s0` to `ctrl.t_end`, recording the initial state, each requested time, and the end.
pub fn evolve_to<T, F, M>(
    s0: &State<T>,
    ctrl: &StepControl<T>,
    nf: &F,
    model: &M,
    snapshot_times: &[T],
    observers: &mut [&mut dyn StepObserver<T>],
) -> Result<Trajectory<T>>
where
    T: Real,
    F: NumericalFlux<T> + ?Sized,
    M: FluxModel<T> + ?Sized,
{
    Evolver::new(nf, model).run(s0, ctrl, Recording::Times(snapshot_times.to_vec()), observers)
}

/// Evolves two states on the same grid with a shared step sequence, recording every step.
/// Each step uses the smaller of the two CFL steps.
pub fn evolve_lockstep<T, F, M>(
    a0: &State<T>,
    b0: &State<T>,
    ctrl: &StepControl<T>,
    nf: &F,
    model: &M,
) -> Result<(Trajectory<T>, Trajectory<T>)>
where
    T: Real,
    F: NumericalFlux<T> + ?Sized,
    M: FluxModel<T> + ?Sized,
{
    ctrl.validate()?;
    if a0.grid() != b0.grid() || a0.t != b0.t {
        return Err(Error::Input("lockstep runs need the same grid and start time".into()));
    }
    check_mean(a0, 0)?;
    check_mean(b0, 0)?;
    let mut a = a0.clone();
    let mut b = b0.clone();
    let mut ta = Trajectory {
        snapshots: vec![a.clone()],
        steps: 0,
        dts: Vec::new(),
    };
    let mut tb = ta.clone();
    tb.snapshots[0] = b.clone();
    while a.t < ctrl.t_end {
        let dt = cfl_dt(nf, model, &a, ctrl)?.min(cfl_dt(nf, model, &b, ctrl)?);
        let landing = a.t + dt >= ctrl.t_end;
        let mut na = step(&a, dt, nf)?;
        let mut nb = step(&b, dt, nf)?;
        if landing {
            na.t = ctrl.t_end;
            nb.t = ctrl.t_end;
        }
        check_mean(&na, ta.steps + 1)?;
        check_mean(&nb, tb.steps + 1)?;
        for (traj, s) in [(&mut ta, &na), (&mut tb, &nb)] {
            traj.steps += 1;
            traj.dts.push(dt);
            traj.snapshots.push(s.clone());
        }
        a = na;
        b = nb;
    }
    Ok((ta, tb))
}
