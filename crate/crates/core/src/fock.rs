//! Motional-state math: generalized Laguerre polynomials, sideband coupling
//! strengths, and thermal Fock-state distributions.
//!
//! Everything here is a pure function of its inputs; the only stateful object
//! is [`RabiTable`], which is immutable once built.

use thiserror::Error;

/// Reduced Planck constant (J s), CODATA.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant (J/K), exact SI value.
pub const K_B: f64 = 1.380_649e-23;

/// Default ceiling on the truncated tail mass of a thermal distribution.
pub const DEFAULT_TAIL_THRESHOLD: f64 = 0.01;

#[derive(Debug, Error)]
pub enum FockError {
    #[error(
        "thermal tail mass {tail:.3e} above n_max = {n_max} exceeds threshold {threshold:.1e} \
         (nbar = {nbar})"
    )]
    TailMass {
        tail: f64,
        threshold: f64,
        nbar: f64,
        n_max: usize,
    },
}

/// A harmonic motional mode of the trap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapMode {
    /// Angular frequency (rad/s).
    pub frequency: f64,
    /// Lamb-Dicke parameter.
    pub eta: f64,
    /// Highest retained Fock level.
    pub n_max: usize,
}

impl TrapMode {
    pub fn new(frequency: f64, eta: f64, n_max: usize) -> Self {
        assert!(frequency > 0.0, "mode frequency must be positive");
        assert!(eta > 0.0, "Lamb-Dicke parameter must be positive");
        assert!(n_max >= 1, "need at least two Fock levels");
        Self {
            frequency,
            eta,
            n_max,
        }
    }
}

/// How an initial motional occupation is specified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThermalSpec {
    /// Mean occupation directly.
    MeanOccupation(f64),
    /// Temperature in kelvin, converted through the mode frequency.
    Temperature(f64),
}

impl ThermalSpec {
    /// Mean occupation this spec resolves to for the given mode.
    pub fn nbar(&self, mode: &TrapMode) -> f64 {
        match *self {
            ThermalSpec::MeanOccupation(n) => n,
            ThermalSpec::Temperature(t) => nbar_from_temperature(t, mode),
        }
    }
}

/// Generalized Laguerre polynomial L_n^a(x), evaluated by the stable
/// three-term recurrence
/// `(k+1) L_{k+1}^a = (2k+1+a-x) L_k^a - (k+a) L_{k-1}^a`.
pub fn laguerre(n: usize, a: usize, x: f64) -> f64 {
    let a = a as f64;
    if n == 0 {
        return 1.0;
    }
    let mut prev = 1.0;
    let mut cur = 1.0 + a - x;
    for k in 1..n {
        let k = k as f64;
        let next = ((2.0 * k + 1.0 + a - x) * cur - (k + a) * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// ln(n!) by direct summation; exact to f64 rounding for the level counts
/// used here.
fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Effective Rabi frequency Ω_{n',n} of the |↓,n⟩ ↔ |↑,n'⟩ transition (rad/s).
///
/// Signed: the sign follows the Laguerre polynomial, so coupling zero
/// crossings are visible to callers. The Laguerre subscript is the lower of
/// the two indices, and the factorial ratio is evaluated in log space so the
/// result stays finite for a couple hundred levels.
pub fn rabi_frequency(n: usize, n_prime: usize, eta: f64, omega0: f64) -> f64 {
    let (lo, hi) = if n <= n_prime {
        (n, n_prime)
    } else {
        (n_prime, n)
    };
    let diff = hi - lo;
    let log_ratio = 0.5 * (ln_factorial(lo) - ln_factorial(hi));
    omega0
        * (-eta * eta / 2.0).exp()
        * log_ratio.exp()
        * eta.powi(diff as i32)
        * laguerre(lo, diff, eta * eta)
}

/// Carrier matrix-element factor a spectator mode at level m applies to the
/// addressed mode's Rabi frequency in a two-mode crystal.
pub fn spectator_rabi_factor(m: usize, eta_spec: f64) -> f64 {
    (-eta_spec * eta_spec / 2.0).exp() * laguerre(m, 0, eta_spec * eta_spec)
}

/// Bose-Einstein occupation of a mode at the given temperature.
pub fn nbar_from_temperature(temperature: f64, mode: &TrapMode) -> f64 {
    assert!(temperature > 0.0, "temperature must be positive");
    let ratio = HBAR * mode.frequency / (K_B * temperature);
    1.0 / ratio.exp_m1()
}

/// Truncated, renormalized thermal distribution over Fock levels.
#[derive(Debug, Clone)]
pub struct ThermalDistribution {
    /// P_n, renormalized to sum to one over the retained levels.
    pub probabilities: Vec<f64>,
    /// Probability mass beyond n_max before renormalization.
    pub tail_mass: f64,
}

/// P_n = nbar^n / (1+nbar)^(n+1) over n = 0..=n_max, renormalized.
///
/// Fails when the truncated tail mass (closed-form geometric tail) exceeds
/// `tail_threshold`.
pub fn thermal_distribution(
    nbar: f64,
    n_max: usize,
    tail_threshold: f64,
) -> Result<ThermalDistribution, FockError> {
    assert!(nbar >= 0.0, "mean occupation must be nonnegative");
    let q = nbar / (1.0 + nbar);
    let tail = q.powi(n_max as i32 + 1);
    if tail > tail_threshold {
        return Err(FockError::TailMass {
            tail,
            threshold: tail_threshold,
            nbar,
            n_max,
        });
    }
    let mut probabilities = Vec::with_capacity(n_max + 1);
    let mut term = 1.0 / (1.0 + nbar);
    for _ in 0..=n_max {
        probabilities.push(term);
        term *= q;
    }
    let sum: f64 = probabilities.iter().sum();
    for p in &mut probabilities {
        *p /= sum;
    }
    Ok(ThermalDistribution {
        probabilities,
        tail_mass: tail,
    })
}

/// Precomputed sideband coupling strengths of one mode, in units of the
/// carrier Rabi frequency Ω₀.
///
/// `element(n, n')` is symmetric and signed; entries whose magnitude
/// underflows are stored as zero.
#[derive(Debug, Clone)]
pub struct RabiTable {
    eta: f64,
    n_max: usize,
    /// strengths[beta] holds Ω_{k,k+beta}/Ω₀ for k = 0..=n_max-beta.
    strengths: Vec<Vec<f64>>,
}

impl RabiTable {
    pub fn new(mode: &TrapMode) -> Self {
        let n_max = mode.n_max;
        let eta = mode.eta;
        let x = eta * eta;
        let prefactor = (-x / 2.0).exp();
        // cumulative ln k!
        let mut lnf = Vec::with_capacity(n_max + 1);
        lnf.push(0.0);
        for k in 1..=n_max {
            lnf.push(lnf[k - 1] + (k as f64).ln());
        }
        let strengths = (0..=n_max)
            .map(|beta| {
                let ln_eta_pow = beta as f64 * eta.ln();
                (0..=n_max - beta)
                    .map(|k| {
                        let ln_scale = 0.5 * (lnf[k] - lnf[k + beta]) + ln_eta_pow;
                        prefactor * ln_scale.exp() * laguerre(k, beta, x)
                    })
                    .collect()
            })
            .collect();
        Self {
            eta,
            n_max,
            strengths,
        }
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Ω_{n',n}/Ω₀, symmetric in its arguments.
    pub fn element(&self, n: usize, n_prime: usize) -> f64 {
        let (lo, hi) = if n <= n_prime {
            (n, n_prime)
        } else {
            (n_prime, n)
        };
        self.strengths[hi - lo][lo]
    }

    /// Coupling of the β-th order red sideband out of |n⟩, i.e. Ω_{n-β,n}/Ω₀.
    pub fn rsb(&self, beta: usize, n: usize) -> f64 {
        self.strengths[beta][n - beta]
    }

    /// Carrier factor of level m when this mode is the spectator.
    pub fn spectator_factor(&self, m: usize) -> f64 {
        self.strengths[0][m]
    }

    /// Smallest n at which the β-th order coupling has changed sign relative
    /// to Ω_{0,β}, or None if it keeps its sign up to n_max.
    pub fn first_coupling_zero(&self, beta: usize) -> Option<usize> {
        let column = &self.strengths[beta];
        let first = column[0];
        column
            .iter()
            .position(|&w| w * first < 0.0)
            .map(|k| k + beta)
    }
}
