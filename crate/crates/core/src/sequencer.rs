//! Construction of the cooling pulse schedules: single-ion two-order,
//! two-mode interleaved, and multi-order sequences.
//!
//! Block time budgets follow floor arithmetic on the requested cooling time;
//! one padding pulse per block takes up the remainder so the total sideband
//! time reconstructs T_c exactly. Every sideband pulse is followed by a
//! repump event.

use thiserror::Error;

/// Padding remainders below this are dropped as floating-point noise (s).
const PAD_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("pulse length must be positive, got {0} s")]
    NonPositivePulse(f64),
    #[error("cooling time must be nonnegative, got {0} s")]
    NegativeCoolingTime(f64),
    #[error("time scaling factor must lie in [0, 1], got {0}")]
    ScalingOutOfRange(f64),
    #[error("sideband order cap must be at least 1")]
    ZeroOrderCap,
    #[error(
        "block for {label} was allocated {allocated:.3e} s but fits no full pulse of {pulse:.3e} s"
    )]
    EmptyBlock {
        label: &'static str,
        allocated: f64,
        pulse: f64,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Repump timing attached to every repump event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepumpTiming {
    /// Optical repump pulse length t_r (s).
    pub pulse: f64,
    /// Elapsed time between sideband pulses t'_r (s).
    pub gap: f64,
}

impl Default for RepumpTiming {
    fn default() -> Self {
        Self {
            pulse: 3.0e-6,
            gap: 5.0e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    /// Sideband pulse on `mode` with order `beta`.
    Rsb {
        mode: usize,
        beta: usize,
        duration: f64,
        quench_on: bool,
    },
    /// Projection back to the electronic ground state.
    Repump { pulse: f64, gap: f64 },
    /// Readout marker at the end of the sequence.
    Probe,
}

/// An ordered cooling sequence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PulseSchedule {
    pub events: Vec<Event>,
}

impl PulseSchedule {
    /// Total sideband time T_c (sum of pulse durations, padding included).
    pub fn cooling_time(&self) -> f64 {
        self.events
            .iter()
            .map(|e| match e {
                Event::Rsb { duration, .. } => *duration,
                _ => 0.0,
            })
            .sum()
    }

    pub fn rsb_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, Event::Rsb { .. }))
            .count()
    }

    /// Number of repump events N_r.
    pub fn repump_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, Event::Repump { .. }))
            .count()
    }

    /// T_total = T_c + N_r t'_r.
    pub fn total_time(&self) -> f64 {
        self.cooling_time()
            + self
                .events
                .iter()
                .map(|e| match e {
                    Event::Repump { gap, .. } => *gap,
                    _ => 0.0,
                })
                .sum::<f64>()
    }

    /// Line-oriented text form, one event per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for event in &self.events {
            match event {
                Event::Rsb {
                    mode,
                    beta,
                    duration,
                    quench_on,
                } => {
                    out.push_str(&format!(
                        "RSB mode={} beta={} dur_us={} quench={}\n",
                        mode,
                        beta,
                        duration * 1e6,
                        u8::from(*quench_on)
                    ));
                }
                Event::Repump { pulse, gap } => {
                    out.push_str(&format!(
                        "REPUMP dur_us={} gap_us={}\n",
                        pulse * 1e6,
                        gap * 1e6
                    ));
                }
                Event::Probe => out.push_str("PROBE\n"),
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ScheduleError> {
        let mut events = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() {
                continue;
            }
            let mut parts = trimmed.split_whitespace();
            let kind = parts.next().unwrap();
            let mut fields = std::collections::BTreeMap::new();
            for part in parts {
                let (key, value) = part.split_once('=').ok_or_else(|| ScheduleError::Parse {
                    line,
                    message: format!("expected key=value, got '{part}'"),
                })?;
                let value: f64 = value.parse().map_err(|_| ScheduleError::Parse {
                    line,
                    message: format!("bad number '{value}'"),
                })?;
                fields.insert(key.to_string(), value);
            }
            let get = |key: &str| {
                fields
                    .get(key)
                    .copied()
                    .ok_or_else(|| ScheduleError::Parse {
                        line,
                        message: format!("missing field '{key}'"),
                    })
            };
            match kind {
                "RSB" => events.push(Event::Rsb {
                    mode: get("mode")? as usize,
                    beta: get("beta")? as usize,
                    duration: get("dur_us")? * 1e-6,
                    quench_on: get("quench")? != 0.0,
                }),
                "REPUMP" => events.push(Event::Repump {
                    pulse: get("dur_us")? * 1e-6,
                    gap: get("gap_us")? * 1e-6,
                }),
                "PROBE" => events.push(Event::Probe),
                other => {
                    return Err(ScheduleError::Parse {
                        line,
                        message: format!("unknown event '{other}'"),
                    })
                }
            }
        }
        Ok(Self { events })
    }
}

/// Full pulses fitting in a block, robust to floating-point edge cases.
fn floor_count(block: f64, pulse: f64) -> usize {
    let ratio = block / pulse;
    let floor = ratio.floor();
    if ratio - floor > 1.0 - 1e-9 {
        floor as usize + 1
    } else {
        floor as usize
    }
}

struct BlockPulses {
    full: usize,
    padding: f64,
}

fn split_block(block: f64, pulse: f64) -> BlockPulses {
    let full = floor_count(block, pulse);
    let padding = (block - full as f64 * pulse).max(0.0);
    BlockPulses {
        full,
        padding: if padding > PAD_EPS { padding } else { 0.0 },
    }
}

struct ScheduleBuilder {
    events: Vec<Event>,
    timing: RepumpTiming,
}

impl ScheduleBuilder {
    fn new(timing: RepumpTiming) -> Self {
        Self {
            events: Vec::new(),
            timing,
        }
    }

    fn pulse(&mut self, mode: usize, beta: usize, duration: f64, quench_on: bool) {
        self.events.push(Event::Rsb {
            mode,
            beta,
            duration,
            quench_on,
        });
        self.events.push(Event::Repump {
            pulse: self.timing.pulse,
            gap: self.timing.gap,
        });
    }

    fn block(&mut self, mode: usize, beta: usize, split: &BlockPulses, pulse: f64, quench: bool) {
        for _ in 0..split.full {
            self.pulse(mode, beta, pulse, quench);
        }
        if split.padding > 0.0 {
            self.pulse(mode, beta, split.padding, quench);
        }
    }

    fn finish(mut self) -> PulseSchedule {
        self.events.push(Event::Probe);
        PulseSchedule {
            events: self.events,
        }
    }
}

fn validate_common(t_c: f64, scaling: f64, pulses: &[f64]) -> Result<(), ScheduleError> {
    if t_c < 0.0 {
        return Err(ScheduleError::NegativeCoolingTime(t_c));
    }
    if !(0.0..=1.0).contains(&scaling) {
        return Err(ScheduleError::ScalingOutOfRange(scaling));
    }
    for &p in pulses {
        if p <= 0.0 {
            return Err(ScheduleError::NonPositivePulse(p));
        }
    }
    Ok(())
}

/// Flag a block that received time but cannot fit a single full pulse while
/// the scaling factor sits strictly inside (0, 1).
fn check_empty_block(
    t_c: f64,
    scaling: f64,
    longest_pulse: f64,
    blocks: &[(&'static str, f64, f64, usize)],
) -> Result<(), ScheduleError> {
    if t_c < longest_pulse && scaling > 0.0 && scaling < 1.0 {
        for &(label, allocated, pulse, full) in blocks {
            if full == 0 && allocated > PAD_EPS {
                return Err(ScheduleError::EmptyBlock {
                    label,
                    allocated,
                    pulse,
                });
            }
        }
    }
    Ok(())
}

/// Single-ion sequence: N_R2 second-order pulses, then N_R1 first-order
/// pulses, with N_R2 = floor(α T_c / t_R2) and N_R1 = floor((1-α) T_c / t_R1).
pub fn build_single_ion_schedule(
    t_c: f64,
    alpha: f64,
    t_r2: f64,
    t_r1: f64,
    quench_on: bool,
    timing: RepumpTiming,
) -> Result<PulseSchedule, ScheduleError> {
    validate_common(t_c, alpha, &[t_r1, t_r2])?;
    let block2 = alpha * t_c;
    let block1 = t_c - block2;
    let split2 = split_block(block2, t_r2);
    let split1 = split_block(block1, t_r1);
    check_empty_block(
        t_c,
        alpha,
        t_r1.max(t_r2),
        &[
            ("second-order RSB", block2, t_r2, split2.full),
            ("first-order RSB", block1, t_r1, split1.full),
        ],
    )?;
    let mut b = ScheduleBuilder::new(timing);
    b.block(0, 2, &split2, t_r2, quench_on);
    b.block(0, 1, &split1, t_r1, quench_on);
    Ok(b.finish())
}

/// Two-mode interleaved sequence (first-order sidebands, quench on): the
/// surplus mode leads with N_res consecutive pulses, then ip/op pulse pairs
/// alternate strictly. α' is the fraction of T_c spent on the op mode.
pub fn build_two_mode_schedule(
    t_c: f64,
    alpha_prime: f64,
    t_ip: f64,
    t_op: f64,
    timing: RepumpTiming,
) -> Result<PulseSchedule, ScheduleError> {
    validate_common(t_c, alpha_prime, &[t_ip, t_op])?;
    let block_op = alpha_prime * t_c;
    let block_ip = t_c - block_op;
    let split_ip = split_block(block_ip, t_ip);
    let split_op = split_block(block_op, t_op);
    check_empty_block(
        t_c,
        alpha_prime,
        t_ip.max(t_op),
        &[
            ("ip-mode RSB", block_ip, t_ip, split_ip.full),
            ("op-mode RSB", block_op, t_op, split_op.full),
        ],
    )?;
    let mut b = ScheduleBuilder::new(timing);
    let (n_ip, n_op) = (split_ip.full, split_op.full);
    let n_min = n_ip.min(n_op);
    // residual block on the surplus mode; ties start with ip
    if n_ip >= n_op {
        for _ in 0..n_ip - n_op {
            b.pulse(0, 1, t_ip, true);
        }
    } else {
        for _ in 0..n_op - n_ip {
            b.pulse(1, 1, t_op, true);
        }
    }
    for _ in 0..n_min {
        b.pulse(0, 1, t_ip, true);
        b.pulse(1, 1, t_op, true);
    }
    if split_ip.padding > 0.0 {
        b.pulse(0, 1, split_ip.padding, true);
    }
    if split_op.padding > 0.0 {
        b.pulse(1, 1, split_op.padding, true);
    }
    Ok(b.finish())
}

/// Multi-order sequence: T_c split equally between orders β_max down to 1,
/// all pulses the same length, quench on.
pub fn build_high_order_schedule(
    t_c: f64,
    beta_max: usize,
    t_pulse: f64,
    timing: RepumpTiming,
) -> Result<PulseSchedule, ScheduleError> {
    if beta_max == 0 {
        return Err(ScheduleError::ZeroOrderCap);
    }
    validate_common(t_c, 0.5, &[t_pulse])?;
    let block = t_c / beta_max as f64;
    let split = split_block(block, t_pulse);
    if t_c < t_pulse && split.full == 0 && block > PAD_EPS {
        return Err(ScheduleError::EmptyBlock {
            label: "sideband order block",
            allocated: block,
            pulse: t_pulse,
        });
    }
    let mut b = ScheduleBuilder::new(timing);
    for beta in (1..=beta_max).rev() {
        b.block(0, beta, &split, t_pulse, true);
    }
    Ok(b.finish())
}
