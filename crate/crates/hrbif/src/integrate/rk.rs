//! Dormand-Prince 5(4) step kernel with 4th-order dense output and
//! PI step-size control.

use nalgebra::SVector;

// Butcher tableau, Dormand & Prince 1980.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// y5 - y4 error weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Dense-output weights.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;
const FAC_MIN: f64 = 0.2; // largest allowed shrink factor
const FAC_MAX: f64 = 10.0; // largest allowed growth factor

/// Dense-output coefficients of one accepted step. Together with the step
/// endpoints they define the quartic interpolant
///
/// u(theta) = r1 + theta (r2 + (1-theta)(r3 + theta (r4 + (1-theta) r5)))
///
/// which reproduces the endpoints exactly at theta = 0, 1.
#[derive(Debug, Clone)]
pub struct DenseStep<const N: usize> {
    pub t0: f64,
    pub h: f64,
    pub y0: SVector<f64, N>,
    pub y1: SVector<f64, N>,
    r3: SVector<f64, N>,
    r4: SVector<f64, N>,
    r5: SVector<f64, N>,
}

impl<const N: usize> DenseStep<N> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn contains(&self, t: f64) -> bool {
        let (lo, hi) = if self.h >= 0.0 {
            (self.t0, self.t1())
        } else {
            (self.t1(), self.t0)
        };
        t >= lo && t <= hi
    }

    pub fn eval_theta(&self, theta: f64) -> SVector<f64, N> {
        let r2 = self.y1 - self.y0;
        let om = 1.0 - theta;
        self.y0 + (r2 + (self.r3 + (self.r4 + self.r5 * om) * theta) * om) * theta
    }

    pub fn eval(&self, t: f64) -> SVector<f64, N> {
        self.eval_theta((t - self.t0) / self.h)
    }

    /// du/dtheta of the interpolant (divide by h for du/dt).
    pub fn eval_dtheta(&self, theta: f64) -> SVector<f64, N> {
        let r2 = self.y1 - self.y0;
        let t2 = theta * theta;
        r2 + self.r3 * (1.0 - 2.0 * theta)
            + self.r4 * (2.0 * theta - 3.0 * t2)
            + self.r5 * (2.0 * theta - 6.0 * t2 + 4.0 * t2 * theta)
    }

    pub fn eval_dt(&self, t: f64) -> SVector<f64, N> {
        self.eval_dtheta((t - self.t0) / self.h) / self.h
    }
}

/// Outcome of a single attempted step.
pub enum StepOutcome<const N: usize> {
    Accepted { dense: DenseStep<N>, h_next: f64 },
    Rejected { h_next: f64 },
}

/// Low-level stepper: holds the PI controller memory and the FSAL stage.
pub struct Stepper<const N: usize> {
    pub rel_tol: f64,
    pub abs_tol: f64,
    fac_old: f64,
    last_rejected: bool,
    /// f(t1, y1) of the last accepted step (FSAL reuse).
    k_last: Option<SVector<f64, N>>,
}

impl<const N: usize> Stepper<N> {
    pub fn new(rel_tol: f64, abs_tol: f64) -> Self {
        Stepper {
            rel_tol,
            abs_tol,
            fac_old: 1e-4,
            last_rejected: false,
            k_last: None,
        }
    }

    /// Invalidate the FSAL cache (call when the state is changed externally,
    /// e.g. after tangent renormalisation).
    pub fn reset_fsal(&mut self) {
        self.k_last = None;
    }

    /// Suggest an initial step size (Hairer, Norsett & Wanner II.4).
    pub fn initial_step<F>(&self, f: &mut F, t0: f64, y0: &SVector<f64, N>, dir: f64) -> f64
    where
        F: FnMut(f64, &SVector<f64, N>) -> SVector<f64, N>,
    {
        let f0 = f(t0, y0);
        let sc = |y: &SVector<f64, N>, i: usize| self.abs_tol + self.rel_tol * y[i].abs();
        let norm = |v: &SVector<f64, N>, y: &SVector<f64, N>| {
            (v.iter()
                .enumerate()
                .map(|(i, x)| (x / sc(y, i)).powi(2))
                .sum::<f64>()
                / N as f64)
                .sqrt()
        };
        let d0 = norm(y0, y0);
        let d1 = norm(&f0, y0);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let y1 = y0 + f0 * (h0 * dir);
        let f1 = f(t0 + h0 * dir, &y1);
        let d2 = norm(&(f1 - f0), y0) / h0;
        let d_max = d1.max(d2);
        let h1 = if d_max <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d_max).powf(0.2)
        };
        h1.min(100.0 * h0)
    }

    /// Attempt one step of size `h` (signed). On acceptance returns the
    /// dense step and the suggested next size; on rejection only the size.
    pub fn try_step<F>(
        &mut self,
        f: &mut F,
        t0: f64,
        y0: &SVector<f64, N>,
        h: f64,
    ) -> StepOutcome<N>
    where
        F: FnMut(f64, &SVector<f64, N>) -> SVector<f64, N>,
    {
        let k1 = match self.k_last {
            Some(k) => k,
            None => f(t0, y0),
        };
        let k2 = f(t0 + C2 * h, &(y0 + k1 * (A21 * h)));
        let k3 = f(t0 + C3 * h, &(y0 + (k1 * A31 + k2 * A32) * h));
        let k4 = f(t0 + C4 * h, &(y0 + (k1 * A41 + k2 * A42 + k3 * A43) * h));
        let k5 = f(
            t0 + C5 * h,
            &(y0 + (k1 * A51 + k2 * A52 + k3 * A53 + k4 * A54) * h),
        );
        let k6 = f(
            t0 + h,
            &(y0 + (k1 * A61 + k2 * A62 + k3 * A63 + k4 * A64 + k5 * A65) * h),
        );
        let y1 = y0 + (k1 * A71 + k3 * A73 + k4 * A74 + k5 * A75 + k6 * A76) * h;
        let k7 = f(t0 + h, &y1);

        let err_vec = (k1 * E1 + k3 * E3 + k4 * E4 + k5 * E5 + k6 * E6 + k7 * E7) * h;
        let mut err_sq = 0.0;
        for i in 0..N {
            let sc = self.abs_tol + self.rel_tol * y0[i].abs().max(y1[i].abs());
            err_sq += (err_vec[i] / sc).powi(2);
        }
        let err = (err_sq / N as f64).sqrt();

        let fac11 = err.powf(EXPO1);
        if err <= 1.0 {
            // Accept; PI controller for the next size.
            let fac = (fac11 / self.fac_old.powf(BETA) / SAFETY)
                .clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut h_next = h / fac;
            if self.last_rejected {
                // Do not grow right after a rejection.
                h_next = if h_next.abs() > h.abs() { h } else { h_next };
            }
            self.fac_old = err.max(1e-4);
            self.last_rejected = false;
            self.k_last = Some(k7);

            let ydiff = y1 - y0;
            let bspl = k1 * h - ydiff;
            let r3 = bspl;
            let r4 = ydiff - k7 * h - bspl;
            let r5 = (k1 * D1 + k3 * D3 + k4 * D4 + k5 * D5 + k6 * D6 + k7 * D7) * h;
            StepOutcome::Accepted {
                dense: DenseStep {
                    t0,
                    h,
                    y0: *y0,
                    y1,
                    r3,
                    r4,
                    r5,
                },
                h_next,
            }
        } else {
            self.last_rejected = true;
            let h_next = h / (fac11 / SAFETY).min(1.0 / FAC_MIN);
            StepOutcome::Rejected { h_next }
        }
    }
}

/// One classical step of the 5th-order formula without error control
/// (for fixed-step convergence studies).
pub fn rk5_fixed_step<F, const N: usize>(
    f: &mut F,
    t0: f64,
    y0: &SVector<f64, N>,
    h: f64,
) -> SVector<f64, N>
where
    F: FnMut(f64, &SVector<f64, N>) -> SVector<f64, N>,
{
    let k1 = f(t0, y0);
    let k2 = f(t0 + C2 * h, &(y0 + k1 * (A21 * h)));
    let k3 = f(t0 + C3 * h, &(y0 + (k1 * A31 + k2 * A32) * h));
    let k4 = f(t0 + C4 * h, &(y0 + (k1 * A41 + k2 * A42 + k3 * A43) * h));
    let k5 = f(
        t0 + C5 * h,
        &(y0 + (k1 * A51 + k2 * A52 + k3 * A53 + k4 * A54) * h),
    );
    let k6 = f(
        t0 + h,
        &(y0 + (k1 * A61 + k2 * A62 + k3 * A63 + k4 * A64 + k5 * A65) * h),
    );
    y0 + (k1 * A71 + k3 * A73 + k4 * A74 + k5 * A75 + k6 * A76) * h
}
