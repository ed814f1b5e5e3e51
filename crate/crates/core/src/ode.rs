//! Adaptive Dormand-Prince 5(4) integration for the per-pulse Bloch systems.
//!
//! The pulse generators are constant in time, so the systems are autonomous;
//! the right-hand side receives only the state.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("step size underflow at t = {t:.3e} s (h = {h:.3e} s)")]
    StepUnderflow { t: f64, h: f64 },
    #[error("step limit ({0}) exceeded")]
    TooManySteps(usize),
}

/// Dormand-Prince coefficients.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];

/// Fifth-order solution weights (the last A row, FSAL).
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];

/// Embedded fourth-order weights.
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Hard cap on the step size (seconds).
    pub max_step: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-12,
            max_step: f64::INFINITY,
        }
    }
}

const MAX_STEPS: usize = 50_000_000;

/// Integrate dy/dt = f(y) from 0 to `t_end`, advancing `y` in place.
pub fn integrate<F>(y: &mut [f64], t_end: f64, opts: &OdeOptions, mut rhs: F) -> Result<(), OdeError>
where
    F: FnMut(&[f64], &mut [f64]),
{
    if t_end <= 0.0 {
        return Ok(());
    }
    let dim = y.len();
    let mut k: Vec<Vec<f64>> = (0..7).map(|_| vec![0.0; dim]).collect();
    let mut y_stage = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];

    let mut t = 0.0;
    let mut h = opts.max_step.min(t_end);
    rhs(y, &mut k[0]);

    let mut steps = 0usize;
    while t < t_end {
        steps += 1;
        if steps > MAX_STEPS {
            return Err(OdeError::TooManySteps(MAX_STEPS));
        }
        h = h.min(t_end - t);
        if h < t_end * 1e-15 {
            return Err(OdeError::StepUnderflow { t, h });
        }

        for stage in 0..6 {
            for i in 0..dim {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(stage + 1) {
                    acc += A[stage][j] * kj[i];
                }
                y_stage[i] = y[i] + h * acc;
            }
            rhs(&y_stage, &mut k[stage + 1]);
        }

        // 5th-order solution and embedded error estimate
        let mut err_norm2 = 0.0;
        for i in 0..dim {
            let mut acc5 = 0.0;
            let mut acc4 = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc5 += B5[j] * kj[i];
                acc4 += B4[j] * kj[i];
            }
            let yi = y[i] + h * acc5;
            let err = h * (acc5 - acc4);
            let scale = opts.abs_tol + opts.rel_tol * y[i].abs().max(yi.abs());
            err_norm2 += (err / scale) * (err / scale);
            y_new[i] = yi;
        }
        let err_norm = (err_norm2 / dim as f64).sqrt();

        if err_norm <= 1.0 {
            t += h;
            y.copy_from_slice(&y_new);
            // FSAL: the 7th stage evaluation is the first of the next step
            let k6 = std::mem::replace(&mut k[6], Vec::new());
            k[6] = std::mem::replace(&mut k[0], k6);
        } else {
            // rejected: k[0] still valid
        }
        let factor = if err_norm > 0.0 {
            (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
        } else {
            5.0
        };
        h = (h * factor).min(opts.max_step);
    }
    Ok(())
}
