//! Cooling-rate fits, sideband-ratio thermometry, the per-level best-order
//! map, and frequency-scan emulation.

use thiserror::Error;

use crate::bloch::MotionalState;
use crate::fock::{spectator_rabi_factor, RabiTable, TrapMode};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least 4 samples, got {0}")]
    TooFewSamples(usize),
    #[error("trace times must be strictly increasing (sample {0})")]
    NonMonotonicTime(usize),
    #[error("ground-state population {value} outside [0, 1] at sample {index}")]
    PopulationOutOfRange { index: usize, value: f64 },
    #[error("degenerate trace: initial and final occupation coincide ({nbar:.3e}), T_0 unidentifiable")]
    DegenerateData { nbar: f64 },
    #[error("fit did not converge after {iterations} iterations (rms residual {rms:.3e})")]
    NonConvergence { iterations: usize, rms: f64 },
    #[error("sideband ratio is non-thermal: rsb {rsb:.4} >= bsb {bsb:.4} after background subtraction")]
    NonThermalSidebands { rsb: f64, bsb: f64 },
    #[error("negative excitation {0:.4} after background subtraction")]
    NegativeExcitation(f64),
}

/// One sample of the cooling transient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    /// Seconds of sideband time since cooling started.
    pub time: f64,
    /// Motional ground-state population.
    pub p0: f64,
    /// Mean occupation.
    pub nbar: f64,
}

/// Ground-state population versus cooling time for one mode.
#[derive(Debug, Clone, Default)]
pub struct CoolingTrace {
    pub samples: Vec<TracePoint>,
}

impl CoolingTrace {
    pub fn push(&mut self, time: f64, p0: f64, nbar: f64) {
        self.samples.push(TracePoint { time, p0, nbar });
    }

    fn validate(&self) -> Result<(), AnalysisError> {
        if self.samples.len() < 4 {
            return Err(AnalysisError::TooFewSamples(self.samples.len()));
        }
        for (i, pair) in self.samples.windows(2).enumerate() {
            if pair[1].time <= pair[0].time {
                return Err(AnalysisError::NonMonotonicTime(i + 1));
            }
        }
        for (i, s) in self.samples.iter().enumerate() {
            if !(0.0..=1.0).contains(&s.p0) {
                return Err(AnalysisError::PopulationOutOfRange {
                    index: i,
                    value: s.p0,
                });
            }
        }
        Ok(())
    }
}

/// Result of fitting P0(t) = 1 / (1 + n_f + (n_i - n_f) exp(-t/T_0)).
#[derive(Debug, Clone, Copy)]
pub struct CoolingFit {
    pub nbar_i: f64,
    pub nbar_f: f64,
    /// Cooling time constant T_0 = 1/W (s).
    pub t0: f64,
    /// RMS of the fit residuals on this trace.
    pub residual_norm: f64,
}

/// Which parameters a joint fit shares across traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SharedFitOptions {
    pub share_initial: bool,
    pub share_final: bool,
}

impl Default for SharedFitOptions {
    fn default() -> Self {
        Self {
            share_initial: true,
            share_final: true,
        }
    }
}

fn model_p0(ni: f64, nf: f64, t0: f64, t: f64) -> f64 {
    1.0 / (1.0 + nf + (ni - nf) * (-t / t0).exp())
}

/// Occupation implied by a ground-state population, clamped to nonnegative.
fn occupation_of(p0: f64) -> f64 {
    (1.0 / p0.max(1e-12) - 1.0).max(0.0)
}

const T0_FLOOR: f64 = 1e-12;
const MAX_LM_ITERATIONS: usize = 400;
const DEGENERACY_TOL: f64 = 1e-3;

/// Gaussian elimination with partial pivoting; returns None on a singular
/// system.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    Some(x)
}

/// Parameter indexing for the joint fit: optionally shared n_i and n_f
/// followed by one T_0 per trace.
struct ParamMap {
    share_initial: bool,
    share_final: bool,
    n_traces: usize,
    fixed: Option<(f64, f64)>,
}

impl ParamMap {
    fn len(&self) -> usize {
        if self.fixed.is_some() {
            return self.n_traces;
        }
        let ni = if self.share_initial { 1 } else { self.n_traces };
        let nf = if self.share_final { 1 } else { self.n_traces };
        ni + nf + self.n_traces
    }

    fn unpack(&self, theta: &[f64], trace: usize) -> (f64, f64, f64, Option<usize>, Option<usize>, usize) {
        if let Some((ni, nf)) = self.fixed {
            return (ni, nf, theta[trace], None, None, trace);
        }
        let ni_count = if self.share_initial { 1 } else { self.n_traces };
        let nf_count = if self.share_final { 1 } else { self.n_traces };
        let i_ni = if self.share_initial { 0 } else { trace };
        let i_nf = ni_count + if self.share_final { 0 } else { trace };
        let i_t0 = ni_count + nf_count + trace;
        (
            theta[i_ni],
            theta[i_nf],
            theta[i_t0],
            Some(i_ni),
            Some(i_nf),
            i_t0,
        )
    }

    fn clamp(&self, theta: &mut [f64]) {
        let n_t0 = self.n_traces;
        let split = theta.len() - n_t0;
        for v in &mut theta[..split] {
            *v = v.max(0.0);
        }
        for v in &mut theta[split..] {
            *v = v.max(T0_FLOOR);
        }
    }
}

fn lm_fit(
    traces: &[&CoolingTrace],
    options: SharedFitOptions,
    fixed: Option<(f64, f64)>,
) -> Result<Vec<CoolingFit>, AnalysisError> {
    for trace in traces {
        trace.validate()?;
    }
    let map = ParamMap {
        share_initial: options.share_initial,
        share_final: options.share_final,
        n_traces: traces.len(),
        fixed,
    };

    // initial guesses from the trace endpoints and the half-crossing time
    let guesses: Vec<(f64, f64, f64)> = traces
        .iter()
        .map(|trace| {
            let first = &trace.samples[0];
            let last = trace.samples.last().unwrap();
            let ni = occupation_of(first.p0);
            let nf = occupation_of(last.p0);
            let mut t0 = last.time / 7.0;
            if (ni - nf).abs() > 1e-12 {
                let mut best = f64::INFINITY;
                for s in &trace.samples {
                    if s.time <= 0.0 {
                        continue;
                    }
                    let e = ((occupation_of(s.p0) - nf) / (ni - nf)).clamp(1e-6, 1.0 - 1e-6);
                    if (e - 0.5).abs() < best {
                        best = (e - 0.5).abs();
                        t0 = -s.time / e.ln();
                    }
                }
            }
            (ni, nf, t0.max(T0_FLOOR))
        })
        .collect();

    if fixed.is_none() {
        for g in &guesses {
            if (g.0 - g.1).abs() <= DEGENERACY_TOL * (1.0 + g.0.abs()) {
                return Err(AnalysisError::DegenerateData { nbar: g.0 });
            }
        }
    }

    let mut theta = vec![0.0; map.len()];
    if fixed.is_none() {
        let (ni0, _, _, i_ni, _, _) = map.unpack(&theta, 0);
        let _ = (ni0, i_ni);
        for (k, g) in guesses.iter().enumerate() {
            let (_, _, _, i_ni, i_nf, i_t0) = map.unpack(&theta.clone(), k);
            theta[i_ni.unwrap()] = g.0;
            theta[i_nf.unwrap()] = g.1;
            theta[i_t0] = g.2;
        }
    } else {
        for (k, g) in guesses.iter().enumerate() {
            theta[k] = g.2;
        }
    }
    map.clamp(&mut theta);

    let n_samples: usize = traces.iter().map(|t| t.samples.len()).sum();
    let n_params = map.len();

    let eval = |theta: &[f64]| -> (f64, Vec<Vec<f64>>, Vec<f64>) {
        // returns (ssr, J^T J, J^T r)
        let mut jtj = vec![vec![0.0; n_params]; n_params];
        let mut jtr = vec![0.0; n_params];
        let mut ssr = 0.0;
        for (k, trace) in traces.iter().enumerate() {
            let (ni, nf, t0, i_ni, i_nf, i_t0) = map.unpack(theta, k);
            for s in &trace.samples {
                let e = (-s.time / t0).exp();
                let den = 1.0 + nf + (ni - nf) * e;
                let p = 1.0 / den;
                let r = p - s.p0;
                ssr += r * r;
                let inv2 = p * p;
                let mut grads: [(usize, f64); 3] = [(usize::MAX, 0.0); 3];
                let mut g_count = 0;
                if let Some(i) = i_ni {
                    grads[g_count] = (i, -e * inv2);
                    g_count += 1;
                }
                if let Some(i) = i_nf {
                    grads[g_count] = (i, -(1.0 - e) * inv2);
                    g_count += 1;
                }
                grads[g_count] = (i_t0, -(ni - nf) * e * s.time / (t0 * t0) * inv2);
                g_count += 1;
                for &(i, gi) in &grads[..g_count] {
                    jtr[i] += gi * r;
                    for &(j, gj) in &grads[..g_count] {
                        if j >= i {
                            jtj[i][j] += gi * gj;
                        }
                    }
                }
            }
        }
        for i in 0..n_params {
            for j in 0..i {
                jtj[i][j] = jtj[j][i];
            }
        }
        (ssr, jtj, jtr)
    };

    let mut lambda = 1e-3;
    let (mut ssr, mut jtj, mut jtr) = eval(&theta);
    let mut iterations = 0;
    loop {
        iterations += 1;
        if iterations > MAX_LM_ITERATIONS {
            return Err(AnalysisError::NonConvergence {
                iterations: MAX_LM_ITERATIONS,
                rms: (ssr / n_samples as f64).sqrt(),
            });
        }
        let mut damped = jtj.clone();
        for i in 0..n_params {
            damped[i][i] += lambda * jtj[i][i].max(1e-30);
        }
        let rhs: Vec<f64> = jtr.iter().map(|v| -v).collect();
        let Some(step) = solve_dense(damped, rhs) else {
            lambda *= 10.0;
            if lambda > 1e12 {
                return Err(AnalysisError::NonConvergence {
                    iterations,
                    rms: (ssr / n_samples as f64).sqrt(),
                });
            }
            continue;
        };
        let mut candidate: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t + s).collect();
        map.clamp(&mut candidate);
        let (ssr_new, jtj_new, jtr_new) = eval(&candidate);
        if ssr_new <= ssr {
            let rel_step = step
                .iter()
                .zip(&theta)
                .map(|(s, t)| s.abs() / (1e-30 + t.abs()))
                .fold(0.0f64, f64::max);
            let improved = ssr - ssr_new;
            theta = candidate;
            ssr = ssr_new;
            jtj = jtj_new;
            jtr = jtr_new;
            lambda = (lambda * 0.3).max(1e-12);
            if improved <= 1e-16 * (1.0 + ssr) || rel_step < 1e-12 {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }

    Ok((0..traces.len())
        .map(|k| {
            let (ni, nf, t0, _, _, _) = map.unpack(&theta, k);
            let trace = traces[k];
            let ssr_k: f64 = trace
                .samples
                .iter()
                .map(|s| {
                    let r = model_p0(ni, nf, t0, s.time) - s.p0;
                    r * r
                })
                .sum();
            CoolingFit {
                nbar_i: ni,
                nbar_f: nf,
                t0,
                residual_norm: (ssr_k / trace.samples.len() as f64).sqrt(),
            }
        })
        .collect())
}

/// Fit one trace. `fixed` pins (n_i, n_f) and fits only T_0.
pub fn fit_cooling_constant(
    trace: &CoolingTrace,
    fixed: Option<(f64, f64)>,
) -> Result<CoolingFit, AnalysisError> {
    lm_fit(&[trace], SharedFitOptions::default(), fixed).map(|fits| fits[0])
}

/// Joint fit over several traces with common n_i/n_f per `options` and one
/// T_0 per trace.
pub fn fit_cooling_constants_joint(
    traces: &[&CoolingTrace],
    options: SharedFitOptions,
) -> Result<Vec<CoolingFit>, AnalysisError> {
    lm_fit(traces, options, None)
}

/// n̄ from first-order red/blue sideband excitations after subtracting a
/// constant background: n̄ = ρ_rsb / (ρ_bsb - ρ_rsb).
pub fn extract_nbar(
    rsb_excitation: f64,
    bsb_excitation: f64,
    background: f64,
) -> Result<f64, AnalysisError> {
    let rsb = rsb_excitation - background;
    let bsb = bsb_excitation - background;
    if rsb < 0.0 {
        return Err(AnalysisError::NegativeExcitation(rsb));
    }
    if rsb >= bsb {
        return Err(AnalysisError::NonThermalSidebands { rsb, bsb });
    }
    Ok(rsb / (bsb - rsb))
}

/// For each level n = 1..=n_max, the sideband order maximizing the cooling
/// efficiency β·|Ω_{n-β,n}|. Ties go to the smaller order.
pub fn sideband_efficiency_map(eta: f64, n_max: usize) -> Vec<(usize, usize)> {
    let table = RabiTable::new(&TrapMode::new(1.0, eta, n_max));
    (1..=n_max)
        .map(|n| {
            let mut best_beta = 1;
            let mut best = -1.0;
            for beta in 1..=n {
                let eff = beta as f64 * table.rsb(beta, n).abs();
                if eff > best {
                    best = eff;
                    best_beta = beta;
                }
            }
            (n, best_beta)
        })
        .collect()
}

/// Contiguous level ranges sharing the same recommended order:
/// (n_lo, n_hi, beta).
pub fn efficiency_bands(map: &[(usize, usize)]) -> Vec<(usize, usize, usize)> {
    let mut bands: Vec<(usize, usize, usize)> = Vec::new();
    for &(n, beta) in map {
        match bands.last_mut() {
            Some(band) if band.2 == beta && band.1 + 1 == n => band.1 = n,
            _ => bands.push((n, n, beta)),
        }
    }
    bands
}

/// Transition probed in a frequency scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeTransition {
    Carrier,
    Rsb(usize),
    Bsb(usize),
}

/// Excitation probability per detuning for a square probe pulse, averaged
/// over the motional distribution:
/// P(δ) = Σ_n P_n Ω_n²/(Ω_n²+δ²) sin²(√(Ω_n²+δ²) t / 2).
pub fn simulate_sideband_spectrum(
    state: &MotionalState,
    tables: &[RabiTable],
    omega0: f64,
    mode: usize,
    probe_time: f64,
    detunings: &[f64],
    transition: ProbeTransition,
) -> Vec<f64> {
    assert!(probe_time > 0.0, "probe time must be positive");
    assert_eq!(tables.len(), state.n_modes());
    let two_mode = state.n_modes() == 2;
    let n_max = state.n_max(mode);

    // per joint level: population and probe Rabi frequency
    let len = state.pop_down().len();
    let mut weights: Vec<(f64, f64)> = Vec::with_capacity(len);
    for j in 0..len {
        let pop = state.pop_down()[j] + state.pop_up()[j];
        if pop == 0.0 {
            continue;
        }
        let n = state.level(mode, j);
        let element = match transition {
            ProbeTransition::Carrier => tables[mode].element(n, n),
            ProbeTransition::Rsb(beta) => {
                if n >= beta {
                    tables[mode].rsb(beta, n)
                } else {
                    continue;
                }
            }
            ProbeTransition::Bsb(beta) => {
                if n + beta <= n_max {
                    tables[mode].element(n, n + beta)
                } else {
                    continue;
                }
            }
        };
        let mut w = omega0 * element;
        if two_mode {
            let spec = 1 - mode;
            w *= tables[spec].spectator_factor(state.level(spec, j));
        }
        weights.push((pop, w));
    }

    detunings
        .iter()
        .map(|&delta| {
            weights
                .iter()
                .map(|&(pop, w)| {
                    let w2 = w * w;
                    let total = w2 + delta * delta;
                    if total == 0.0 {
                        return 0.0;
                    }
                    let rabi = total.sqrt();
                    pop * (w2 / total) * (0.5 * rabi * probe_time).sin().powi(2)
                })
                .sum()
        })
        .collect()
}

/// A spectator mode whose thermal occupation rescales the addressed-mode
/// coupling in a two-ion crystal.
#[derive(Debug, Clone, Copy)]
pub struct SpectatorMode {
    pub eta: f64,
    pub nbar: f64,
}

/// Level window over which the π-time average runs.
#[derive(Debug, Clone, Copy)]
pub enum DominanceWindow {
    /// Levels where the given order's |Ω| strictly exceeds the competing
    /// order's.
    Versus { competing: usize },
    /// Explicit inclusive level range.
    Levels { lo: usize, hi: usize },
}

fn thermal_cut(nbar: f64, floor: usize) -> usize {
    if nbar <= 0.0 {
        return floor;
    }
    let q = nbar / (1.0 + nbar);
    ((-28.0 / q.ln()).ceil() as usize).clamp(floor, 400)
}

/// Thermally weighted mean π-time of the β-th order sideband, restricted to
/// the dominance window. A spectator mode divides the coupling by its
/// thermally averaged carrier factor.
pub fn average_pi_time(
    beta: usize,
    eta: f64,
    nbar: f64,
    omega0: f64,
    window: DominanceWindow,
    spectator: Option<SpectatorMode>,
) -> f64 {
    assert!(beta >= 1);
    assert!(nbar >= 0.0);
    let competing = match window {
        DominanceWindow::Versus { competing } => competing.max(1),
        DominanceWindow::Levels { .. } => 0,
    };
    let n_cut = thermal_cut(nbar, beta.max(competing) + 1);
    let table = RabiTable::new(&TrapMode::new(1.0, eta, n_cut));

    let spec_factor = spectator.map_or(1.0, |s| {
        let cut = thermal_cut(s.nbar, 1);
        let q = s.nbar / (1.0 + s.nbar);
        let mut weight_sum = 0.0;
        let mut factor_sum = 0.0;
        let mut w = 1.0;
        for m in 0..=cut {
            factor_sum += w * spectator_rabi_factor(m, s.eta);
            weight_sum += w;
            w *= q;
        }
        factor_sum / weight_sum
    });

    let q = nbar / (1.0 + nbar);
    let mut weight_sum = 0.0;
    let mut pi_time_sum = 0.0;
    for n in beta..=n_cut {
        let in_window = match window {
            DominanceWindow::Versus { .. } => {
                let own = table.rsb(beta, n).abs();
                let other = if n >= competing {
                    table.rsb(competing, n).abs()
                } else {
                    0.0
                };
                own > other
            }
            DominanceWindow::Levels { lo, hi } => n >= lo && n <= hi,
        };
        if !in_window {
            continue;
        }
        let coupling = table.rsb(beta, n).abs() * omega0 * spec_factor;
        if coupling == 0.0 {
            continue;
        }
        let weight = q.powi(n as i32);
        weight_sum += weight;
        pi_time_sum += weight * std::f64::consts::PI / coupling;
    }
    pi_time_sum / weight_sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::MotionalState;
    use crate::fock::rabi_frequency;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn synthetic_trace(ni: f64, nf: f64, t0: f64, times: &[f64]) -> CoolingTrace {
        let mut trace = CoolingTrace::default();
        for &t in times {
            let p0 = model_p0(ni, nf, t0, t);
            trace.push(t, p0, nf + (ni - nf) * (-t / t0).exp());
        }
        trace
    }

    fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
            .collect()
    }

    #[test]
    fn fit_recovers_noiseless_parameters() {
        let mut times = vec![0.0];
        times.extend(log_grid(10e-6, 500e-6, 12));
        let trace = synthetic_trace(10.0, 0.02, 70e-6, &times);
        let fit = fit_cooling_constant(&trace, None).unwrap();
        assert_relative_eq!(fit.nbar_i, 10.0, max_relative = 0.01);
        assert_relative_eq!(fit.nbar_f, 0.02, max_relative = 0.01);
        assert_relative_eq!(fit.t0, 70e-6, max_relative = 0.01);
        assert!(fit.residual_norm < 1e-10);
    }

    #[test]
    fn fit_round_trips_across_t0_decades() {
        for &t0 in &[10e-6, 100e-6, 1e-3, 10e-3] {
            let mut times = vec![0.0];
            times.extend(log_grid(t0 / 5.0, 8.0 * t0, 14));
            let trace = synthetic_trace(12.0, 0.05, t0, &times);
            let fit = fit_cooling_constant(&trace, None).unwrap();
            assert_relative_eq!(fit.t0, t0, max_relative = 0.01);
        }
    }

    #[test]
    fn fit_with_fixed_endpoints() {
        let mut times = vec![0.0];
        times.extend(log_grid(20e-6, 600e-6, 10));
        let trace = synthetic_trace(10.0, 0.02, 90e-6, &times);
        let fit = fit_cooling_constant(&trace, Some((10.0, 0.02))).unwrap();
        assert_relative_eq!(fit.t0, 90e-6, max_relative = 1e-4);
        assert_eq!(fit.nbar_i, 10.0);
    }

    #[test]
    fn fit_reaching_steady_state_pins_final_occupation() {
        // sampled out to 7 T_0
        let t0 = 70e-6;
        let mut times = vec![0.0];
        times.extend(log_grid(7e-6, 7.0 * t0, 12));
        let trace = synthetic_trace(10.0, 0.04, t0, &times);
        let fit = fit_cooling_constant(&trace, None).unwrap();
        assert_relative_eq!(fit.nbar_f, 0.04, max_relative = 0.02);
    }

    #[test]
    fn flat_trace_is_degenerate() {
        let mut trace = CoolingTrace::default();
        for i in 0..6 {
            trace.push(i as f64 * 1e-5, 0.5, 1.0);
        }
        let err = fit_cooling_constant(&trace, None).unwrap_err();
        assert!(matches!(err, AnalysisError::DegenerateData { .. }));
    }

    #[test]
    fn trace_validation_errors() {
        let mut short = CoolingTrace::default();
        short.push(0.0, 0.1, 10.0);
        short.push(1e-5, 0.2, 5.0);
        assert!(matches!(
            fit_cooling_constant(&short, None).unwrap_err(),
            AnalysisError::TooFewSamples(2)
        ));

        let mut backwards = CoolingTrace::default();
        for &t in &[0.0, 2e-5, 1e-5, 3e-5] {
            backwards.push(t, 0.5, 1.0);
        }
        assert!(matches!(
            fit_cooling_constant(&backwards, None).unwrap_err(),
            AnalysisError::NonMonotonicTime(_)
        ));
    }

    #[test]
    fn joint_fit_shares_endpoints() {
        let mut times = vec![0.0];
        times.extend(log_grid(10e-6, 500e-6, 12));
        let t_a = synthetic_trace(10.0, 0.02, 50e-6, &times);
        let t_b = synthetic_trace(10.0, 0.02, 120e-6, &times);
        let fits =
            fit_cooling_constants_joint(&[&t_a, &t_b], SharedFitOptions::default()).unwrap();
        assert_relative_eq!(fits[0].t0, 50e-6, max_relative = 0.01);
        assert_relative_eq!(fits[1].t0, 120e-6, max_relative = 0.01);
        assert_eq!(fits[0].nbar_i, fits[1].nbar_i);
        assert_eq!(fits[0].nbar_f, fits[1].nbar_f);
    }

    #[test]
    fn extract_nbar_values_and_identity() {
        assert_relative_eq!(extract_nbar(0.0, 0.5, 0.0).unwrap(), 0.0);
        assert_relative_eq!(extract_nbar(0.05, 0.55, 0.0).unwrap(), 0.1, epsilon = 1e-12);
        // forward Q relation round-trips exactly
        for i in 0..=50 {
            let nbar = i as f64;
            let bsb = 0.6;
            let rsb = bsb * nbar / (1.0 + nbar);
            assert_relative_eq!(
                extract_nbar(rsb + 0.1, bsb + 0.1, 0.1).unwrap(),
                nbar,
                epsilon = 1e-12,
                max_relative = 1e-12
            );
        }
        assert!(extract_nbar(0.5, 0.4, 0.0).is_err());
        assert!(extract_nbar(0.1, 0.5, 0.2).is_err());
    }

    #[test]
    fn efficiency_map_orders() {
        // only candidate at n = 1
        assert_eq!(sideband_efficiency_map(0.3, 1), vec![(1, 1)]);
        let map = sideband_efficiency_map(0.45, 120);
        assert_eq!(map.iter().map(|&(_, b)| b).max().unwrap(), 8);
        // monotone nondecreasing recommendation
        assert!(map.windows(2).all(|w| w[1].1 >= w[0].1));
        // third order takes over from n = 28 at eta = 0.30
        let map3 = sideband_efficiency_map(0.30, 40);
        assert!(map3[..27].iter().all(|&(_, b)| b <= 2));
        assert_eq!(map3[27], (28, 3));
    }

    #[test]
    fn efficiency_map_avoids_coupling_zeros() {
        let table = RabiTable::new(&TrapMode::new(1.0, 0.45, 150));
        for &(n, beta) in &sideband_efficiency_map(0.45, 150) {
            let chosen = table.rsb(beta, n).abs();
            if chosen < 1e-9 {
                let best_alternative = (1..=n)
                    .filter(|&b| b != beta)
                    .map(|b| b as f64 * table.rsb(b, n).abs())
                    .fold(0.0f64, f64::max);
                assert!(best_alternative <= beta as f64 * chosen);
            }
        }
    }

    #[test]
    fn efficiency_bands_group_levels() {
        let bands = efficiency_bands(&[(1, 1), (2, 1), (3, 2), (4, 2), (5, 3)]);
        assert_eq!(bands, vec![(1, 2, 1), (3, 4, 2), (5, 5, 3)]);
    }

    #[test]
    fn spectrum_ground_state_dark_on_rsb() {
        let state = MotionalState::ground(&[30]);
        let tables = vec![RabiTable::new(&TrapMode::new(1.0, 0.3, 30))];
        let detunings: Vec<f64> = (-10..=10).map(|i| i as f64 * 2e4).collect();
        let spectrum = simulate_sideband_spectrum(
            &state,
            &tables,
            6.85e5,
            0,
            10e-6,
            &detunings,
            ProbeTransition::Rsb(1),
        );
        assert!(spectrum.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn spectrum_carrier_pi_pulse_saturates() {
        let state = MotionalState::ground(&[30]);
        let tables = vec![RabiTable::new(&TrapMode::new(1.0, 0.3, 30))];
        let omega0 = 6.85e5;
        let w00 = rabi_frequency(0, 0, 0.3, omega0);
        let spectrum = simulate_sideband_spectrum(
            &state,
            &tables,
            omega0,
            0,
            PI / w00,
            &[0.0],
            ProbeTransition::Carrier,
        );
        assert_relative_eq!(spectrum[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn spectrum_sideband_ratio_matches_occupation() {
        let nbar = 1.7;
        let state = MotionalState::thermal(&[(nbar, 60)], 0.01).unwrap();
        let tables = vec![RabiTable::new(&TrapMode::new(1.0, 0.3, 60))];
        let omega0 = 6.85e5;
        let rsb = simulate_sideband_spectrum(
            &state,
            &tables,
            omega0,
            0,
            8e-6,
            &[0.0],
            ProbeTransition::Rsb(1),
        )[0];
        let bsb = simulate_sideband_spectrum(
            &state,
            &tables,
            omega0,
            0,
            8e-6,
            &[0.0],
            ProbeTransition::Bsb(1),
        )[0];
        assert_relative_eq!(rsb / bsb, nbar / (1.0 + nbar), max_relative = 0.01);
        assert_relative_eq!(extract_nbar(rsb, bsb, 0.0).unwrap(), nbar, max_relative = 0.02);
    }

    #[test]
    fn spectrum_grows_with_short_probe_times() {
        let state = MotionalState::thermal(&[(5.0, 60)], 0.01).unwrap();
        let tables = vec![RabiTable::new(&TrapMode::new(1.0, 0.3, 60))];
        let omega0 = 6.85e5;
        let detunings: Vec<f64> = (-20..=20).map(|i| i as f64 * 1e4).collect();
        let mut previous = 0.0;
        for &t in &[1e-6, 2e-6, 3e-6, 4e-6] {
            let total: f64 = simulate_sideband_spectrum(
                &state,
                &tables,
                omega0,
                0,
                t,
                &detunings,
                ProbeTransition::Rsb(1),
            )
            .iter()
            .sum();
            assert!(total > previous);
            previous = total;
        }
    }

    #[test]
    fn pi_time_single_level_limit() {
        let omega0 = 6.85e5;
        let t = average_pi_time(
            1,
            0.3,
            1e-9,
            omega0,
            DominanceWindow::Versus { competing: 2 },
            None,
        );
        assert_relative_eq!(t, PI / rabi_frequency(1, 0, 0.3, omega0), max_relative = 1e-6);
    }

    #[test]
    fn pi_time_single_ion_scenario() {
        // T_pi(n=1) = 16 us fixes the carrier Rabi frequency
        let omega0 = PI / 16e-6 / rabi_frequency(1, 0, 0.3, 1.0);
        let t1 = average_pi_time(
            1,
            0.3,
            10.0,
            omega0,
            DominanceWindow::Versus { competing: 2 },
            None,
        );
        let t2 = average_pi_time(
            2,
            0.3,
            10.0,
            omega0,
            DominanceWindow::Versus { competing: 1 },
            None,
        );
        assert!((t1 - 10e-6).abs() < 2e-6, "t1 = {:.2} us", t1 * 1e6);
        assert!((t2 - 10e-6).abs() < 2e-6, "t2 = {:.2} us", t2 * 1e6);
    }

    #[test]
    fn pi_time_two_mode_scenarios() {
        // ip: eta 0.21, T_pi(n=1) = 21 us, op spectator; op: eta 0.16,
        // T_pi(n=1) = 26.5 us, ip spectator
        let nbar_ip = 8.937;
        let nbar_op = 4.927;
        let omega_ip = PI / 21e-6 / rabi_frequency(1, 0, 0.21, 1.0);
        let t_ip = average_pi_time(
            1,
            0.21,
            nbar_ip,
            omega_ip,
            DominanceWindow::Versus { competing: 2 },
            Some(SpectatorMode {
                eta: 0.16,
                nbar: nbar_op,
            }),
        );
        assert_relative_eq!(t_ip, 14e-6, max_relative = 0.15);
        let omega_op = PI / 26.5e-6 / rabi_frequency(1, 0, 0.16, 1.0);
        let t_op = average_pi_time(
            1,
            0.16,
            nbar_op,
            omega_op,
            DominanceWindow::Versus { competing: 2 },
            Some(SpectatorMode {
                eta: 0.21,
                nbar: nbar_ip,
            }),
        );
        assert_relative_eq!(t_op, 25e-6, max_relative = 0.15);
    }

    #[test]
    fn pi_time_explicit_window() {
        let omega0 = 6.85e5;
        let t = average_pi_time(
            1,
            0.3,
            5.0,
            omega0,
            DominanceWindow::Levels { lo: 3, hi: 3 },
            None,
        );
        assert_relative_eq!(t, PI / rabi_frequency(3, 2, 0.3, omega0).abs(), max_relative = 1e-9);
    }
}
