//! Simulation campaigns over parameter grids: trajectory execution, endpoint
//! traces across a cooling-time grid, joint T_0 fits, and optima.

use rayon::prelude::*;
use thiserror::Error;

use crate::analysis::{
    fit_cooling_constant, fit_cooling_constants_joint, CoolingFit, CoolingTrace, SharedFitOptions,
};
use crate::bloch::{evolve_rsb_pulse, BlochError, MotionalState, PhysicsParams};
use crate::fock::{FockError, RabiTable, TrapMode, DEFAULT_TAIL_THRESHOLD};
use crate::sequencer::{
    build_high_order_schedule, build_single_ion_schedule, build_two_mode_schedule, Event,
    PulseSchedule, RepumpTiming, ScheduleError,
};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("pulse {index} failed: {source}")]
    Pulse { index: usize, source: BlochError },
    #[error(transparent)]
    Fock(#[from] FockError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("swept values must be strictly monotone")]
    NonMonotoneValues,
    #[error("sweep has no values")]
    EmptySweep,
    #[error("cooling-time grid is empty")]
    EmptyGrid,
    #[error("no sweep point produced a usable fit")]
    AllPointsFailed,
    #[error("parameter {param} does not apply to the {scenario} scenario")]
    ParamMismatch {
        param: &'static str,
        scenario: &'static str,
    },
}

/// The cooling scenario a sweep or trajectory runs in.
#[derive(Debug, Clone)]
pub enum Scenario {
    SingleIon {
        mode: TrapMode,
        nbar_i: f64,
        t_c: f64,
        alpha: f64,
        t_r2: f64,
        t_r1: f64,
        quench_on: bool,
    },
    TwoMode {
        /// ip first, op second.
        modes: [TrapMode; 2],
        nbar_i: [f64; 2],
        t_c: f64,
        alpha_prime: f64,
        t_ip: f64,
        t_op: f64,
    },
    HighOrder {
        mode: TrapMode,
        nbar_i: f64,
        t_c: f64,
        beta_max: usize,
        t_pulse: f64,
    },
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::SingleIon { .. } => "single_ion",
            Scenario::TwoMode { .. } => "two_mode",
            Scenario::HighOrder { .. } => "high_order",
        }
    }

    pub fn n_modes(&self) -> usize {
        match self {
            Scenario::TwoMode { .. } => 2,
            _ => 1,
        }
    }

    pub fn t_c(&self) -> f64 {
        match self {
            Scenario::SingleIon { t_c, .. }
            | Scenario::TwoMode { t_c, .. }
            | Scenario::HighOrder { t_c, .. } => *t_c,
        }
    }

    /// Longest scheduled pulse length; grid points below this cannot be
    /// scheduled without an empty block.
    pub fn max_pulse(&self) -> f64 {
        match self {
            Scenario::SingleIon { t_r1, t_r2, .. } => t_r1.max(*t_r2),
            Scenario::TwoMode { t_ip, t_op, .. } => t_ip.max(*t_op),
            Scenario::HighOrder { t_pulse, .. } => *t_pulse,
        }
    }

    pub fn tables(&self) -> Vec<RabiTable> {
        match self {
            Scenario::SingleIon { mode, .. } | Scenario::HighOrder { mode, .. } => {
                vec![RabiTable::new(mode)]
            }
            Scenario::TwoMode { modes, .. } => modes.iter().map(RabiTable::new).collect(),
        }
    }

    pub fn initial_state(&self, tail_threshold: f64) -> Result<MotionalState, FockError> {
        match self {
            Scenario::SingleIon { mode, nbar_i, .. } | Scenario::HighOrder { mode, nbar_i, .. } => {
                MotionalState::thermal(&[(*nbar_i, mode.n_max)], tail_threshold)
            }
            Scenario::TwoMode { modes, nbar_i, .. } => MotionalState::thermal(
                &[
                    (nbar_i[0], modes[0].n_max),
                    (nbar_i[1], modes[1].n_max),
                ],
                tail_threshold,
            ),
        }
    }

    /// Schedule for a cooling time of `t_c` with this scenario's fixed pulse
    /// parameters.
    pub fn build_schedule(
        &self,
        t_c: f64,
        timing: RepumpTiming,
    ) -> Result<PulseSchedule, ScheduleError> {
        match *self {
            Scenario::SingleIon {
                alpha,
                t_r2,
                t_r1,
                quench_on,
                ..
            } => build_single_ion_schedule(t_c, alpha, t_r2, t_r1, quench_on, timing),
            Scenario::TwoMode {
                alpha_prime,
                t_ip,
                t_op,
                ..
            } => build_two_mode_schedule(t_c, alpha_prime, t_ip, t_op, timing),
            Scenario::HighOrder {
                beta_max, t_pulse, ..
            } => build_high_order_schedule(t_c, beta_max, t_pulse, timing),
        }
    }
}

/// Parameter axis a sweep scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweptParam {
    TR1,
    TR2,
    Alpha,
    AlphaPrime,
    TIp,
    TOp,
    BetaMax,
    TPulse,
    GammaEff,
}

impl SweptParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweptParam::TR1 => "t_r1",
            SweptParam::TR2 => "t_r2",
            SweptParam::Alpha => "alpha",
            SweptParam::AlphaPrime => "alpha_prime",
            SweptParam::TIp => "t_ip",
            SweptParam::TOp => "t_op",
            SweptParam::BetaMax => "beta_max",
            SweptParam::TPulse => "t_pulse",
            SweptParam::GammaEff => "gamma_eff",
        }
    }

    /// Apply one swept value, times in seconds and rates in 1/s.
    fn apply(
        &self,
        scenario: &Scenario,
        physics: &PhysicsParams,
        value: f64,
    ) -> Result<(Scenario, PhysicsParams), SweepError> {
        let mut scenario = scenario.clone();
        let scenario_name = scenario.name();
        let mut physics = *physics;
        match (*self, &mut scenario) {
            (SweptParam::TR1, Scenario::SingleIon { t_r1, .. }) => *t_r1 = value,
            (SweptParam::TR2, Scenario::SingleIon { t_r2, .. }) => *t_r2 = value,
            (SweptParam::Alpha, Scenario::SingleIon { alpha, .. }) => *alpha = value,
            (SweptParam::AlphaPrime, Scenario::TwoMode { alpha_prime, .. }) => {
                *alpha_prime = value
            }
            (SweptParam::TIp, Scenario::TwoMode { t_ip, .. }) => *t_ip = value,
            (SweptParam::TOp, Scenario::TwoMode { t_op, .. }) => *t_op = value,
            (SweptParam::BetaMax, Scenario::HighOrder { beta_max, .. }) => {
                *beta_max = value.round().max(1.0) as usize
            }
            (SweptParam::TPulse, Scenario::HighOrder { t_pulse, .. }) => *t_pulse = value,
            (SweptParam::GammaEff, _) => physics.gamma_eff = value,
            (p, _) => {
                return Err(SweepError::ParamMismatch {
                    param: p.name(),
                    scenario: scenario_name,
                })
            }
        }
        Ok((scenario, physics))
    }

    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "t_r1" | "t_r1_us" => SweptParam::TR1,
            "t_r2" | "t_r2_us" => SweptParam::TR2,
            "alpha" => SweptParam::Alpha,
            "alpha_prime" => SweptParam::AlphaPrime,
            "t_ip" | "t_ip_us" => SweptParam::TIp,
            "t_op" | "t_op_us" => SweptParam::TOp,
            "beta_max" => SweptParam::BetaMax,
            "t_pulse" | "t_pulse_us" => SweptParam::TPulse,
            "gamma_eff" | "gamma_eff_per_ms" => SweptParam::GammaEff,
            _ => return None,
        })
    }

    /// Whether values of this axis are times (microseconds in configs).
    pub fn is_time(&self) -> bool {
        matches!(
            self,
            SweptParam::TR1
                | SweptParam::TR2
                | SweptParam::TIp
                | SweptParam::TOp
                | SweptParam::TPulse
        )
    }
}

/// Logarithmic cooling-time grid from t_c/50 up to t_c.
pub fn default_t_c_grid(t_c: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2 && t_c > 0.0);
    let lo = t_c / 50.0;
    (0..points)
        .map(|i| lo * (t_c / lo).powf(i as f64 / (points - 1) as f64))
        .collect()
}

/// A full sweep description.
#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub scenario: Scenario,
    pub physics: PhysicsParams,
    pub param: SweptParam,
    pub values: Vec<f64>,
    /// Cooling-time grid for the endpoint traces; empty means the default
    /// 12-point grid for the scenario's T_c.
    pub t_c_grid: Vec<f64>,
    pub repump: RepumpTiming,
    pub shared_fit: SharedFitOptions,
    pub tail_threshold: f64,
}

impl SweepPlan {
    pub fn new(scenario: Scenario, physics: PhysicsParams, param: SweptParam, values: Vec<f64>) -> Self {
        Self {
            scenario,
            physics,
            param,
            values,
            t_c_grid: Vec::new(),
            repump: RepumpTiming::default(),
            shared_fit: SharedFitOptions::default(),
            tail_threshold: DEFAULT_TAIL_THRESHOLD,
        }
    }

    fn grid(&self) -> Vec<f64> {
        if self.t_c_grid.is_empty() {
            default_t_c_grid(self.scenario.t_c(), 12)
        } else {
            self.t_c_grid.clone()
        }
    }

    fn validate(&self) -> Result<(), SweepError> {
        if self.values.is_empty() {
            return Err(SweepError::EmptySweep);
        }
        let increasing = self.values.windows(2).all(|w| w[1] > w[0]);
        let decreasing = self.values.windows(2).all(|w| w[1] < w[0]);
        if self.values.len() > 1 && !increasing && !decreasing {
            return Err(SweepError::NonMonotoneValues);
        }
        if self.grid().is_empty() {
            return Err(SweepError::EmptyGrid);
        }
        Ok(())
    }
}

/// Traces and final state produced by executing a schedule.
#[derive(Debug, Clone)]
pub struct TrajectoryOutput {
    /// One trace per mode.
    pub traces: Vec<CoolingTrace>,
    pub final_state: MotionalState,
}

/// Run a schedule from an initial state, sampling (t, P0, nbar) per mode at
/// the start and after every repump; t counts scheduled sideband time.
pub fn run_trajectory(
    schedule: &PulseSchedule,
    initial: MotionalState,
    tables: &[RabiTable],
    params: &PhysicsParams,
) -> Result<TrajectoryOutput, SweepError> {
    let mut state = initial;
    let n_modes = state.n_modes();
    let mut traces = vec![CoolingTrace::default(); n_modes];
    let sample = |traces: &mut Vec<CoolingTrace>, state: &MotionalState, t: f64| {
        for (mode, trace) in traces.iter_mut().enumerate() {
            trace.push(t, state.ground_state_population(mode), state.mean_occupation(mode));
        }
    };
    sample(&mut traces, &state, 0.0);
    let mut elapsed = 0.0;
    let mut pulse_index = 0usize;
    for event in &schedule.events {
        match event {
            Event::Rsb {
                mode,
                beta,
                duration,
                quench_on,
            } => {
                evolve_rsb_pulse(&mut state, tables, *mode, *beta, *duration, *quench_on, params)
                    .map_err(|source| SweepError::Pulse {
                        index: pulse_index,
                        source,
                    })?;
                elapsed += duration;
                pulse_index += 1;
            }
            Event::Repump { .. } => {
                state.apply_repump();
                sample(&mut traces, &state, elapsed);
            }
            Event::Probe => {}
        }
    }
    Ok(TrajectoryOutput {
        traces,
        final_state: state,
    })
}

/// One swept value's outcome: per-mode fit (or the failure message) and the
/// endpoint traces the fit ran on.
#[derive(Debug, Clone)]
pub struct SweepPointOutcome {
    pub value: f64,
    /// One entry per mode.
    pub fits: Vec<Result<CoolingFit, String>>,
    /// Endpoint trace per mode (t = each grid T_c, sampled at the end of the
    /// corresponding schedule, plus the t = 0 anchor).
    pub traces: Vec<CoolingTrace>,
    /// Grid points that could not be scheduled, with the reason.
    pub skipped: Vec<(f64, String)>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub param: SweptParam,
    pub points: Vec<SweepPointOutcome>,
}

/// Run the plan: every (value, T_c) job from an identical initial state,
/// endpoint traces assembled per value, T_0 fitted jointly across values with
/// the plan's sharing options. Deterministic for a given plan.
pub fn run_sweep(plan: &SweepPlan) -> Result<SweepResult, SweepError> {
    plan.validate()?;
    let grid = plan.grid();
    let initial = plan.scenario.initial_state(plan.tail_threshold)?;

    struct Job {
        value_idx: usize,
        t_c: f64,
        scenario: Scenario,
        physics: PhysicsParams,
    }
    let mut jobs = Vec::new();
    for (value_idx, &value) in plan.values.iter().enumerate() {
        let (scenario, physics) = plan.param.apply(&plan.scenario, &plan.physics, value)?;
        for &t_c in &grid {
            jobs.push(Job {
                value_idx,
                t_c,
                scenario: scenario.clone(),
                physics,
            });
        }
    }

    // tables depend only on the modes, which no swept parameter touches
    let tables = plan.scenario.tables();
    type JobOut = Result<Vec<(f64, f64)>, String>;
    let outputs: Vec<JobOut> = jobs
        .par_iter()
        .map(|job| {
            let schedule = job
                .scenario
                .build_schedule(job.t_c, plan.repump)
                .map_err(|e| e.to_string())?;
            let out = run_trajectory(&schedule, initial.clone(), &tables, &job.physics)
                .map_err(|e| e.to_string())?;
            Ok(out
                .traces
                .iter()
                .map(|t| {
                    let last = t.samples.last().unwrap();
                    (last.p0, last.nbar)
                })
                .collect())
        })
        .collect();

    let n_modes = plan.scenario.n_modes();
    let mut points: Vec<SweepPointOutcome> = plan
        .values
        .iter()
        .map(|&value| {
            let mut traces = vec![CoolingTrace::default(); n_modes];
            for (mode, trace) in traces.iter_mut().enumerate() {
                trace.push(
                    0.0,
                    initial.ground_state_population(mode),
                    initial.mean_occupation(mode),
                );
            }
            SweepPointOutcome {
                value,
                fits: Vec::new(),
                traces,
                skipped: Vec::new(),
            }
        })
        .collect();
    for (job, out) in jobs.iter().zip(outputs) {
        let point = &mut points[job.value_idx];
        match out {
            Ok(samples) => {
                for (mode, (p0, nbar)) in samples.into_iter().enumerate() {
                    point.traces[mode].push(job.t_c, p0, nbar);
                }
            }
            Err(reason) => point.skipped.push((job.t_c, reason)),
        }
    }

    // joint fit per mode across all values; independent per-trace fallback
    for mode in 0..n_modes {
        let traces: Vec<&CoolingTrace> = points.iter().map(|p| &p.traces[mode]).collect();
        let joint = fit_cooling_constants_joint(&traces, plan.shared_fit);
        let fits: Vec<Result<CoolingFit, String>> = match joint {
            Ok(fits) => fits.into_iter().map(Ok).collect(),
            Err(_) => traces
                .iter()
                .map(|t| fit_cooling_constant(t, None).map_err(|e| e.to_string()))
                .collect(),
        };
        for (point, fit) in points.iter_mut().zip(fits) {
            point.fits.push(fit);
        }
    }

    Ok(SweepResult {
        param: plan.param,
        points,
    })
}

/// What find_optimum minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Smallest T_0 (first mode for multi-mode scenarios).
    MinT0,
    /// Smallest worst-mode T_0: both modes must be cold.
    MinMaxPerMode,
}

#[derive(Debug, Clone)]
pub struct Optimum {
    pub value: f64,
    pub score: f64,
    pub fits: Vec<CoolingFit>,
}

/// The swept value minimizing the objective, ignoring points whose fits
/// failed.
pub fn find_optimum(result: &SweepResult, objective: Objective) -> Result<Optimum, SweepError> {
    let mut best: Option<Optimum> = None;
    for point in &result.points {
        let fits: Option<Vec<CoolingFit>> = point.fits.iter().map(|f| f.clone().ok()).collect();
        let Some(fits) = fits else { continue };
        if fits.is_empty() {
            continue;
        }
        let score = match objective {
            Objective::MinT0 => fits[0].t0,
            Objective::MinMaxPerMode => fits.iter().map(|f| f.t0).fold(f64::MIN, f64::max),
        };
        if !score.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|b| score < b.score) {
            best = Some(Optimum {
                value: point.value,
                score,
                fits,
            });
        }
    }
    best.ok_or(SweepError::AllPointsFailed)
}
