//! Initial-data library, reference runs and self-convergence studies.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use crate::diagnostics::{DiagnosticsReport, StepChecks};
use crate::error::{Error, Result};
use crate::evolve::{evolve_to, DtSummary, StepControl, Trajectory};
use crate::flux::{builtin_oh_flux, engquist_osher, lax_friedrichs, FluxModel, NumericalFlux};
use crate::io;
use crate::mesh::{cell_average_init, l1_norm, restrict, Grid, InitialProfile, State};
use crate::scalar::Real;

/// Piecewise quadratic with a kink at `x = ½`:
/// `(x-½)²/6 ± (x-½)/6 + 1/36`, `+` on `[0, ½)` and `-` on `[½, 1]`.
#[derive(Clone, Copy, Debug, Default)]
pub struct CornerWave;

pub fn corner_wave() -> CornerWave {
    CornerWave
}

impl CornerWave {
    /// Mean of the branch with linear coefficient `sign/6` over `y ∈ [ya, yb]`, `y = x - ½`.
    fn branch_mean<T: Real>(ya: T, yb: T, sign: T) -> T {
        let sixth = T::one() / T::lit(6.0);
        (ya * ya + ya * yb + yb * yb) / T::lit(18.0) + sign * (ya + yb) / T::lit(12.0) + sixth * sixth
    }
}

impl<T: Real> InitialProfile<T> for CornerWave {
    fn name(&self) -> &str {
        "corner_wave"
    }

    fn eval(&self, x: T) -> T {
        let y = x - T::lit(0.5);
        let sign = if x < T::lit(0.5) { T::one() } else { -T::one() };
        y * y / T::lit(6.0) + sign * y / T::lit(6.0) + T::one() / T::lit(36.0)
    }

    fn exact_cell_average(&self, a: T, b: T) -> Option<T> {
        let half = T::lit(0.5);
        let (ya, yb) = (a - half, b - half);
        let avg = if b <= half {
            Self::branch_mean(ya, yb, T::one())
        } else if a >= half {
            Self::branch_mean(ya, yb, -T::one())
        } else {
            let left = Self::branch_mean(ya, T::zero(), T::one()) * (half - a);
            let right = Self::branch_mean(T::zero(), yb, -T::one()) * (b - half);
            (left + right) / (b - a)
        };
        Some(avg)
    }
}

/// `u₀(x) = -0.05 cos 2πx`.
#[derive(Clone, Copy, Debug, Default)]
pub struct CosineProfile;

pub fn cosine_profile() -> CosineProfile {
    CosineProfile
}

const COSINE_AMPLITUDE: f64 = 0.05;

impl<T: Real> InitialProfile<T> for CosineProfile {
    fn name(&self) -> &str {
        "cosine"
    }

    fn eval(&self, x: T) -> T {
        -T::lit(COSINE_AMPLITUDE) * (T::TAU() * x).cos()
    }

    fn exact_cell_average(&self, a: T, b: T) -> Option<T> {
        // (sin 2πb - sin 2πa) / (2π(b-a)) = cos(π(a+b)) sin(π(b-a)) / (π(b-a))
        let w = T::PI() * (b - a);
        Some(-T::lit(COSINE_AMPLITUDE) * (T::PI() * (a + b)).cos() * w.sin() / w)
    }
}

/// `100 ‖u - u_ref‖₁ / ‖u_ref‖₁`, with the reference block-averaged onto the candidate grid.
pub fn relative_l1_error<T: Real>(candidate: &State<T>, reference: &State<T>) -> Result<T> {
    if (candidate.t - reference.t).abs() > T::lit(1e-12) {
        return Err(Error::Input(format!(
            "states at different times: {} vs {}",
            candidate.t, reference.t
        )));
    }
    let restricted = restrict(reference, *candidate.grid())?;
    let norm = l1_norm(&restricted);
    if !(norm > T::zero()) {
        return Err(Error::Input("reference has zero L1 norm".into()));
    }
    let dx = candidate.grid().dx();
    let diff: T = candidate
        .u
        .iter()
        .zip(&restricted.u)
        .map(|(a, b)| (*a - *b).abs())
        .sum();
    Ok(T::lit(100.0) * dx * diff / norm)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProfileName {
    CornerWave,
    Cosine,
}

impl ProfileName {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "corner_wave" | "corner" => Ok(Self::CornerWave),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::Config(format!(
                "unknown profile `{other}` (expected corner_wave | cosine)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::CornerWave => "corner_wave",
            Self::Cosine => "cosine",
        }
    }

    pub fn profile<T: Real>(&self) -> Box<dyn InitialProfile<T>> {
        match self {
            Self::CornerWave => Box::new(CornerWave),
            Self::Cosine => Box::new(CosineProfile),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FluxName {
    EngquistOsher,
    LaxFriedrichs,
}

impl FluxName {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "eo" => Ok(Self::EngquistOsher),
            "lf" => Ok(Self::LaxFriedrichs),
            other => Err(Error::Config(format!("unknown flux `{other}` (expected eo | lf)"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::EngquistOsher => "eo",
            Self::LaxFriedrichs => "lf",
        }
    }
}

/// Looks up a flux model by its registry key.
pub fn model_by_name(name: &str) -> Result<Arc<dyn FluxModel<f64>>> {
    match name {
        "oh_builtin" => Ok(Arc::new(builtin_oh_flux())),
        other => Err(Error::Config(format!("unknown model `{other}` (expected oh_builtin)"))),
    }
}

/// Builds the numerical flux. For Lax–Friedrichs without an explicit `alpha`, the
/// dissipation is `sup |f_u|` over `|u| <= 2‖u⁰‖∞`.
pub fn build_flux(
    flux: FluxName,
    model: Arc<dyn FluxModel<f64>>,
    lf_alpha: Option<f64>,
    initial: &State<f64>,
) -> Result<Box<dyn NumericalFlux<f64>>> {
    match flux {
        FluxName::EngquistOsher => Ok(Box::new(engquist_osher(model))),
        FluxName::LaxFriedrichs => {
            let alpha = match lf_alpha {
                Some(a) => a,
                None => {
                    let m = 2.0 * crate::mesh::linf_norm(initial);
                    model.lipschitz_box(-m, m).max(f64::MIN_POSITIVE)
                }
            };
            Ok(Box::new(lax_friedrichs(model, alpha)?))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub profile: ProfileName,
    pub n_list: Vec<usize>,
    pub n_ref: usize,
    pub t_end: f64,
    pub flux: FluxName,
    pub model: String,
    pub lf_alpha: Option<f64>,
    pub cfl_safety: f64,
    pub snapshot_times: Vec<f64>,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Resolutions 32..2048 against a 2¹³ reference at `t = 36`.
    pub fn table_defaults(profile: ProfileName) -> Self {
        Self {
            profile,
            n_list: vec![32, 64, 128, 256, 512, 1024, 2048],
            n_ref: 8192,
            t_end: 36.0,
            flux: FluxName::EngquistOsher,
            model: "oh_builtin".into(),
            lf_alpha: None,
            cfl_safety: 0.9,
            snapshot_times: Vec::new(),
            out_dir: PathBuf::from("out"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(Error::param(
                "T",
                format!("must be finite and nonnegative, got {}", self.t_end),
            ));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::param(
                "cfl_safety",
                format!("must lie in (0, 1], got {}", self.cfl_safety),
            ));
        }
        if self.n_ref < 2 {
            return Err(Error::param(
                "N_ref",
                format!("need at least 2 cells, got {}", self.n_ref),
            ));
        }
        for &n in &self.n_list {
            if n < 2 || !self.n_ref.is_multiple_of(n) {
                return Err(Error::param(
                    "N_list",
                    format!("N={n} must be >= 2 and divide N_ref={}", self.n_ref),
                ));
            }
        }
        if self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("N_list", "resolutions must be strictly increasing"));
        }
        Ok(())
    }

    fn control(&self) -> StepControl<f64> {
        StepControl::adaptive(self.t_end).with_safety(self.cfl_safety)
    }
}

/// Outcome of one resolution: terminal state plus the streaming diagnostics.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub n: usize,
    pub final_state: State<f64>,
    pub steps: usize,
    pub dt_summary: Option<DtSummary<f64>>,
    pub diagnostics: DiagnosticsReport,
}

/// Evolves one resolution to `cfg.t_end` with the per-step bound checks attached.
pub fn run_resolution(cfg: &ExperimentConfig, n: usize) -> Result<RunOutcome> {
    let wrap = |e: Error| Error::Resolution { n, source: Box::new(e) };
    let grid = Grid::new(n).map_err(wrap)?;
    let s0 = cell_average_init(&*cfg.profile.profile::<f64>(), grid).map_err(wrap)?;
    let model = model_by_name(&cfg.model)?;
    let nf = build_flux(cfg.flux, model.clone(), cfg.lf_alpha, &s0)?;
    let mut checks = StepChecks::new(&*nf, &*model, &s0, 0);
    let traj = evolve_to(&s0, &cfg.control(), &*nf, &*model, &[], &mut [&mut checks]).map_err(wrap)?;
    Ok(RunOutcome {
        n,
        steps: traj.steps,
        dt_summary: traj.dt_summary(),
        final_state: traj.last().clone(),
        diagnostics: checks.report(),
    })
}

/// Runs every resolution in `ns` concurrently; the result is ordered by N.
pub fn run_resolutions(cfg: &ExperimentConfig, ns: &[usize]) -> Result<BTreeMap<usize, RunOutcome>> {
    cfg.validate()?;
    let mut ns = ns.to_vec();
    ns.sort_unstable();
    ns.dedup();
    // largest first
    let outcomes: Vec<Result<RunOutcome>> = ns.par_iter().rev().map(|&n| run_resolution(cfg, n)).collect();
    let mut map = BTreeMap::new();
    for o in outcomes {
        let o = o?;
        map.insert(o.n, o);
    }
    Ok(map)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    /// Relative L¹ error in percent.
    pub e_percent: f64,
    /// Observed order between the previous row and this one.
    pub rate: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    /// Rates are placed on the finer row: `log(E_prev / E_n) / log(n / n_prev)`.
    pub fn from_errors(errors: &[(usize, f64)]) -> Self {
        let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(errors.len());
        for &(n, e) in errors {
            let rate = rows
                .last()
                .map(|prev| (prev.e_percent / e).ln() / (n as f64 / prev.n as f64).ln());
            rows.push(ConvergenceRow { n, e_percent: e, rate });
        }
        Self { rows }
    }

    pub fn rates(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.rate).collect()
    }

    /// `N,E_percent,rate` with the rate blank on the first row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,E_percent,rate\n");
        for r in &self.rows {
            let rate = r.rate.map(io::fmt_float).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", r.n, io::fmt_float(r.e_percent), rate));
        }
        out
    }
}

impl fmt::Display for ConvergenceTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>6} | {:>8} {:>6}", "N", "E", "rate")?;
        writeln!(f, "{:-<6}-+-{:-<15}", "", "")?;
        for r in &self.rows {
            match r.rate {
                Some(rate) => writeln!(f, "{:>6} | {:>8.1} {:>6.1}", r.n, r.e_percent, rate)?,
                None => writeln!(f, "{:>6} | {:>8.1} {:>6}", r.n, r.e_percent, "")?,
            }
        }
        Ok(())
    }
}

/// Builds the table for `n_list` against `runs[n_ref]`.
pub fn table_from_runs(runs: &BTreeMap<usize, RunOutcome>, n_list: &[usize], n_ref: usize) -> Result<ConvergenceTable> {
    let reference = runs
        .get(&n_ref)
        .ok_or_else(|| Error::Input(format!("no reference run for N={n_ref}")))?;
    let mut errors = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let run = runs.get(&n).ok_or_else(|| Error::Input(format!("no run for N={n}")))?;
        errors.push((n, relative_l1_error(&run.final_state, &reference.final_state)?));
    }
    Ok(ConvergenceTable::from_errors(&errors))
}

#[derive(Clone, Debug)]
pub struct ConvergenceStudy {
    pub table: ConvergenceTable,
    pub runs: BTreeMap<usize, RunOutcome>,
}

impl ConvergenceStudy {
    /// Per-step bound checks merged over every run, one entry per check and resolution.
    pub fn diagnostics(&self) -> DiagnosticsReport {
        let mut checks = Vec::new();
        for (n, run) in &self.runs {
            for c in &run.diagnostics.checks {
                let mut c = c.clone();
                c.name = format!("{}@N={n}", c.name);
                checks.push(c);
            }
        }
        DiagnosticsReport { checks }
    }
}

/// One run per resolution plus the reference, then errors and rates.
pub fn run_convergence_study(cfg: &ExperimentConfig) -> Result<ConvergenceStudy> {
    let mut ns = cfg.n_list.clone();
    ns.push(cfg.n_ref);
    let runs = run_resolutions(cfg, &ns)?;
    let table = table_from_runs(&runs, &cfg.n_list, cfg.n_ref)?;
    Ok(ConvergenceStudy { table, runs })
}

#[derive(Clone, Debug)]
pub struct SnapshotOutput {
    pub files: Vec<PathBuf>,
    pub coarse: Vec<Trajectory<f64>>,
    pub reference: Trajectory<f64>,
}

/// Writes the data behind a solution figure: the initial datum on the reference grid,
/// each coarse solution at `t_end`, and the reference solution at `t_end`.
pub fn snapshot_run(cfg: &ExperimentConfig, coarse: &[usize], out_dir: &Path) -> Result<SnapshotOutput> {
    cfg.validate()?;
    let model = model_by_name(&cfg.model)?;
    let profile = cfg.profile.profile::<f64>();
    let name = cfg.profile.as_str();
    let run = |n: usize| -> Result<Trajectory<f64>> {
        let s0 = cell_average_init(&*profile, Grid::new(n)?)?;
        let nf = build_flux(cfg.flux, model.clone(), cfg.lf_alpha, &s0)?;
        evolve_to(&s0, &cfg.control(), &*nf, &*model, &cfg.snapshot_times, &mut [])
            .map_err(|e| Error::Resolution { n, source: Box::new(e) })
    };
    let mut ns = coarse.to_vec();
    ns.push(cfg.n_ref);
    let mut trajs: Vec<Trajectory<f64>> = ns.par_iter().map(|&n| run(n)).collect::<Result<_>>()?;
    let reference = trajs.pop().expect("reference run present");

    let mut files = Vec::new();
    let initial_path = out_dir.join(format!("{name}_initial.csv"));
    io::write_snapshot(&initial_path, reference.initial())?;
    files.push(initial_path);
    for (traj, &n) in trajs.iter().zip(coarse) {
        let path = out_dir.join(format!("{name}_N{n}_T{}.csv", cfg.t_end));
        io::write_snapshot(&path, traj.last())?;
        files.push(path);
    }
    let ref_path = out_dir.join(format!("{name}_ref_N{}_T{}.csv", cfg.n_ref, cfg.t_end));
    io::write_snapshot(&ref_path, reference.last())?;
    files.push(ref_path);
    Ok(SnapshotOutput {
        files,
        coarse: trajs,
        reference,
    })
}
