//! Adaptive Dormand-Prince 5(4) integration with continuous (dense) output.
//!
//! The dense interpolant is the standard quartic continuous extension; every
//! accepted step stores its interpolation coefficients so downstream code
//! (quadrature of index forms, conjugate-point bisection, arc resampling)
//! can evaluate the solution anywhere without re-integration.

use crate::{Error, Result};

const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];
// dense-output weights for the quartic interpolant
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

#[derive(Debug, Clone)]
pub struct DenseStep {
    pub t0: f64,
    pub h: f64,
    // rcont1..rcont5 of the continuous extension
    rcont: [Vec<f64>; 5],
}

impl DenseStep {
    fn eval_into(&self, t: f64, out: &mut [f64]) {
        let theta = (t - self.t0) / self.h;
        let th1 = 1.0 - theta;
        for i in 0..out.len() {
            out[i] = self.rcont[0][i]
                + theta
                    * (self.rcont[1][i]
                        + th1 * (self.rcont[2][i] + theta * (self.rcont[3][i] + th1 * self.rcont[4][i])));
        }
    }
}

#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub t_end: f64,
    pub ts: Vec<f64>,
    pub ys: Vec<Vec<f64>>,
    pub steps: Vec<DenseStep>,
    pub nfev: usize,
    dim: usize,
}

impl OdeSolution {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn end(&self) -> &[f64] {
        self.ys.last().expect("solution has at least the initial state")
    }

    /// Dense evaluation; t is clamped to the integration interval.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let t = t.clamp(self.ts[0], self.t_end);
        if self.steps.is_empty() {
            out.copy_from_slice(&self.ys[0]);
            return;
        }
        // binary search the step containing t
        let idx = match self.ts[1..].binary_search_by(|probe| probe.partial_cmp(&t).unwrap()) {
            Ok(i) => i,
            Err(i) => i.min(self.steps.len() - 1),
        };
        self.steps[idx].eval_into(t, out);
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    pub h0: Option<f64>,
    /// Skip dense-output bookkeeping (endpoint-only integrations).
    pub endpoint_only: bool,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rtol: 1e-10, atol: 1e-12, max_steps: 200_000, h0: None, endpoint_only: false }
    }
}

/// Integrate y' = f(t, y) from t0 to t_end (t_end >= t0), storing dense output.
pub fn solve<F>(rhs: F, t0: f64, t_end: f64, y0: &[f64], opts: OdeOptions) -> Result<OdeSolution>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let dim = y0.len();
    let mut sol = OdeSolution {
        t_end: t0,
        ts: vec![t0],
        ys: vec![y0.to_vec()],
        steps: Vec::new(),
        nfev: 0,
        dim,
    };
    if t_end <= t0 {
        return Ok(sol);
    }
    let span = t_end - t0;
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k: [Vec<f64>; 7] = Default::default();
    for ki in k.iter_mut() {
        *ki = vec![0.0; dim];
    }
    rhs(t, &y, &mut k[0]);
    sol.nfev += 1;
    let mut h = opts.h0.unwrap_or(span * 1e-3).min(span);
    let mut y_stage = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];
    let mut n_steps = 0usize;

    while t < t_end {
        if n_steps >= opts.max_steps {
            return Err(Error::MaxSteps(opts.max_steps));
        }
        n_steps += 1;
        if h < 1e-14 * span.max(1.0) {
            return Err(Error::StepUnderflow { t, h, state: y.clone() });
        }
        if t + h > t_end {
            h = t_end - t;
        }
        for s in 0..6 {
            for i in 0..dim {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s + 1) {
                    acc += A[s][j] * kj[i];
                }
                y_stage[i] = y[i] + h * acc;
            }
            rhs(t + C[s] * h, &y_stage, &mut k[s + 1]);
        }
        sol.nfev += 6;
        // 5th order solution is stage 7's argument (FSAL): y_stage now holds it
        y_new.copy_from_slice(&y_stage);
        // error estimate
        let mut err: f64 = 0.0;
        for i in 0..dim {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                e += (B5[j] - B4[j]) * kj[i];
            }
            e *= h;
            let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            err = err.max((e / sc).abs());
        }
        if err <= 1.0 {
            if !opts.endpoint_only {
                let mut rcont: [Vec<f64>; 5] = Default::default();
                for rc in rcont.iter_mut() {
                    *rc = vec![0.0; dim];
                }
                for i in 0..dim {
                    let ydiff = y_new[i] - y[i];
                    let bspl = h * k[0][i] - ydiff;
                    rcont[0][i] = y[i];
                    rcont[1][i] = ydiff;
                    rcont[2][i] = bspl;
                    rcont[3][i] = ydiff - h * k[6][i] - bspl;
                    let mut acc = 0.0;
                    for (j, kj) in k.iter().enumerate() {
                        acc += D[j] * kj[i];
                    }
                    rcont[4][i] = h * acc;
                }
                sol.steps.push(DenseStep { t0: t, h, rcont });
            }
            t += h;
            y.copy_from_slice(&y_new);
            if opts.endpoint_only {
                sol.ys[0].copy_from_slice(&y);
            } else {
                sol.ts.push(t);
                sol.ys.push(y.clone());
            }
            // FSAL
            let k7 = k[6].clone();
            k[0].copy_from_slice(&k7);
            let scale = (0.9 * err.powf(-0.2)).clamp(0.2, 5.0);
            h *= scale;
        } else {
            let scale = (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            h *= scale;
        }
    }
    sol.t_end = t;
    Ok(sol)
}
