//! Adaptive explicit Runge-Kutta integration with dense output, event
//! location on Poincare sections, spike/burst feature extraction, and a
//! Benettin-style largest-Lyapunov-exponent estimator.

pub mod events;
pub mod lyapunov;
pub mod rk;
pub mod spikes;

pub use events::{first_return, poincare_first_return, CrossingDirection, ReturnOutcome, Section};
pub use lyapunov::{benettin_max, lyapunov_max};
pub use rk::{rk5_fixed_step, DenseStep, StepOutcome, Stepper};
pub use spikes::{detect_spikes, segment_bursts, spike_times_for_coordinate, SpikeTrain};

use nalgebra::SVector;

use crate::error::{Error, Result};
use crate::model::{hr_rhs, ModelParams};

/// Integration controls. Defaults: rel 1e-9, abs 1e-11.
#[derive(Debug, Clone, Copy)]
pub struct IntegrateOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub h_init: Option<f64>,
    pub h_max: Option<f64>,
    pub max_steps: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            rel_tol: 1e-9,
            abs_tol: 1e-11,
            h_init: None,
            h_max: None,
            max_steps: 50_000_000,
        }
    }
}

impl IntegrateOptions {
    pub fn with_tols(rel_tol: f64, abs_tol: f64) -> Self {
        IntegrateOptions {
            rel_tol,
            abs_tol,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, tol) in [("rel_tol", self.rel_tol), ("abs_tol", self.abs_tol)] {
            if !(tol > 0.0 && tol <= 1e-2) {
                return Err(Error::domain(format!(
                    "{name} must lie in (0, 1e-2], got {tol:e}"
                )));
            }
        }
        Ok(())
    }
}

/// A time-stamped solution with per-step dense-output coefficients.
#[derive(Debug, Clone, Default)]
pub struct Trajectory<const N: usize> {
    steps: Vec<DenseStep<N>>,
}

impl<const N: usize> Trajectory<N> {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn t_start(&self) -> f64 {
        self.steps.first().map(|s| s.t0).unwrap_or(f64::NAN)
    }

    pub fn t_end(&self) -> f64 {
        self.steps.last().map(|s| s.t1()).unwrap_or(f64::NAN)
    }

    pub fn final_state(&self) -> SVector<f64, N> {
        self.steps.last().map(|s| s.y1).unwrap_or_else(SVector::zeros)
    }

    pub fn steps(&self) -> &[DenseStep<N>] {
        &self.steps
    }

    /// Node times (step boundaries), length n_steps + 1.
    pub fn times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.steps.iter().map(|s| s.t0).collect();
        if let Some(last) = self.steps.last() {
            t.push(last.t1());
        }
        t
    }

    /// States at node times.
    pub fn states(&self) -> Vec<SVector<f64, N>> {
        let mut y: Vec<SVector<f64, N>> = self.steps.iter().map(|s| s.y0).collect();
        if let Some(last) = self.steps.last() {
            y.push(last.y1);
        }
        y
    }

    /// Dense-output evaluation anywhere inside the covered span.
    pub fn eval(&self, t: f64) -> Option<SVector<f64, N>> {
        self.step_at(t).map(|s| s.eval(t))
    }

    fn step_at(&self, t: f64) -> Option<&DenseStep<N>> {
        if self.steps.is_empty() {
            return None;
        }
        let idx = self
            .steps
            .partition_point(|s| s.t1() < t)
            .min(self.steps.len() - 1);
        let s = &self.steps[idx];
        if s.contains(t) || (t - s.t1()).abs() < 1e-12 * (1.0 + t.abs()) {
            Some(s)
        } else {
            None
        }
    }

    /// Equidistant samples (t, y) across the whole span.
    pub fn sample(&self, n: usize) -> Vec<(f64, SVector<f64, N>)> {
        if self.steps.is_empty() || n < 2 {
            return Vec::new();
        }
        let (a, b) = (self.t_start(), self.t_end());
        (0..n)
            .map(|i| {
                let t = a + (b - a) * i as f64 / (n - 1) as f64;
                (t, self.eval(t).unwrap())
            })
            .collect()
    }
}

impl Trajectory<3> {
    /// CSV export with columns t, x, y, z at the integration nodes.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x,y,z")?;
        for s in &self.steps {
            writeln!(w, "{},{},{},{}", s.t0, s.y0[0], s.y0[1], s.y0[2])?;
        }
        if let Some(last) = self.steps.last() {
            writeln!(w, "{},{},{},{}", last.t1(), last.y1[0], last.y1[1], last.y1[2])?;
        }
        Ok(())
    }
}

/// Step-by-step driver. The callback sees every accepted step and may stop
/// the run early by returning `false`.
pub fn integrate_streaming<F, C, const N: usize>(
    mut f: F,
    y0: SVector<f64, N>,
    t_span: (f64, f64),
    opts: &IntegrateOptions,
    mut on_step: C,
) -> Result<(f64, SVector<f64, N>)>
where
    F: FnMut(f64, &SVector<f64, N>) -> SVector<f64, N>,
    C: FnMut(&DenseStep<N>) -> bool,
{
    opts.validate()?;
    let (t0, t_end) = t_span;
    if t0 == t_end {
        return Err(Error::domain("degenerate time span"));
    }
    let dir = (t_end - t0).signum();
    let span = (t_end - t0).abs();
    let h_max = opts.h_max.unwrap_or(span);

    let mut stepper = Stepper::new(opts.rel_tol, opts.abs_tol);
    let mut t = t0;
    let mut y = y0;
    let mut h = opts
        .h_init
        .unwrap_or_else(|| stepper.initial_step(&mut f, t0, &y0, dir))
        .abs()
        .min(h_max)
        * dir;
    // initial_step evaluates f; clear the FSAL cache it did not set.
    stepper.reset_fsal();

    let h_floor = 1e-14 * span.max(1.0);
    let mut steps = 0usize;
    while (t_end - t) * dir > 0.0 {
        if steps >= opts.max_steps {
            return Err(Error::domain(format!(
                "max step count {} exceeded at t = {t}",
                opts.max_steps
            )));
        }
        if h.abs() < h_floor {
            return Err(Error::StepSizeUnderflow {
                t,
                h,
                state: y.iter().copied().collect(),
            });
        }
        // Trim to hit the end point exactly.
        if (t + h - t_end) * dir > 0.0 {
            h = t_end - t;
        }
        match stepper.try_step(&mut f, t, &y, h) {
            StepOutcome::Accepted { dense, h_next } => {
                if !dense.y1.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFiniteState { t: dense.t1() });
                }
                t = dense.t1();
                y = dense.y1;
                let keep_going = on_step(&dense);
                h = h_next.abs().min(h_max) * dir;
                if !keep_going {
                    break;
                }
            }
            StepOutcome::Rejected { h_next } => {
                h = h_next.abs().min(h_max) * dir;
            }
        }
        steps += 1;
    }
    Ok((t, y))
}

/// Adaptive integration storing the dense output of every step.
pub fn integrate_adaptive<F, const N: usize>(
    f: F,
    y0: SVector<f64, N>,
    t_span: (f64, f64),
    rel_tol: f64,
    abs_tol: f64,
) -> Result<Trajectory<N>>
where
    F: FnMut(f64, &SVector<f64, N>) -> SVector<f64, N>,
{
    integrate_with_options(
        f,
        y0,
        t_span,
        &IntegrateOptions::with_tols(rel_tol, abs_tol),
    )
}

pub fn integrate_with_options<F, const N: usize>(
    f: F,
    y0: SVector<f64, N>,
    t_span: (f64, f64),
    opts: &IntegrateOptions,
) -> Result<Trajectory<N>>
where
    F: FnMut(f64, &SVector<f64, N>) -> SVector<f64, N>,
{
    let mut steps = Vec::new();
    integrate_streaming(f, y0, t_span, opts, |s| {
        steps.push(s.clone());
        true
    })?;
    Ok(Trajectory { steps })
}

/// Fixed-step 5th-order propagation (no error control): for convergence
/// order studies.
pub fn integrate_fixed<F, const N: usize>(
    mut f: F,
    y0: SVector<f64, N>,
    t_span: (f64, f64),
    n_steps: usize,
) -> SVector<f64, N>
where
    F: FnMut(f64, &SVector<f64, N>) -> SVector<f64, N>,
{
    let h = (t_span.1 - t_span.0) / n_steps as f64;
    let mut y = y0;
    let mut t = t_span.0;
    for _ in 0..n_steps {
        y = rk5_fixed_step(&mut f, t, &y, h);
        t += h;
    }
    y
}

/// Integrate the Hindmarsh-Rose model from a given state.
pub fn integrate_hr(
    p: &ModelParams,
    y0: SVector<f64, 3>,
    t_span: (f64, f64),
    opts: &IntegrateOptions,
) -> Result<Trajectory<3>> {
    let pp = *p;
    integrate_with_options(move |_, y| hr_rhs(y, &pp), y0, t_span, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{SVector, Vector1, Vector3};

    #[test]
    fn linear_decay_matches_exponential() {
        let rtol = 1e-8;
        let traj = integrate_adaptive(
            |_, y: &Vector1<f64>| -y,
            Vector1::new(1.0),
            (0.0, 1.0),
            rtol,
            1e-12,
        )
        .unwrap();
        let got = traj.final_state()[0];
        assert!((got - (-1.0f64).exp()).abs() < 10.0 * rtol);
    }

    #[test]
    fn dense_output_reproduces_nodes_exactly() {
        let traj = integrate_adaptive(
            |t: f64, _y: &Vector1<f64>| Vector1::new(t.cos()),
            Vector1::new(0.0),
            (0.0, 10.0),
            1e-9,
            1e-11,
        )
        .unwrap();
        for s in traj.steps() {
            let at0 = s.eval_theta(0.0);
            let at1 = s.eval_theta(1.0);
            assert!((at0 - s.y0).norm() <= 1e-12);
            assert!((at1 - s.y1).norm() <= 1e-12);
        }
    }

    #[test]
    fn dense_output_accuracy_mid_step() {
        let traj = integrate_adaptive(
            |t: f64, _y: &Vector1<f64>| Vector1::new(t.cos()),
            Vector1::new(0.0),
            (0.0, 6.0),
            1e-9,
            1e-11,
        )
        .unwrap();
        for s in traj.steps() {
            for &th in &[0.25, 0.5, 0.75] {
                let t = s.t0 + th * s.h;
                let exact = t.sin();
                assert!(
                    (s.eval_theta(th)[0] - exact).abs() < 1e-8,
                    "dense output off at t = {t}"
                );
            }
        }
    }

    #[test]
    fn fixed_step_order_five() {
        // y' = y, y(0) = 1 on [0, 1]; halving h should shrink the error by
        // about 2^5.
        let err = |n: usize| {
            let y = integrate_fixed(|_, y: &Vector1<f64>| *y, Vector1::new(1.0), (0.0, 1.0), n);
            (y[0] - 1.0f64.exp()).abs()
        };
        let e1 = err(16);
        let e2 = err(32);
        let order = (e1 / e2).log2();
        assert!(order > 4.0, "observed order {order}");
    }

    #[test]
    fn hr_step_halving_order_at_least_four() {
        // Richardson comparison on the HR system over [0, 100].
        let p = ModelParams::new(2.6, 2.0);
        let y0 = Vector3::new(0.0, 0.0, 0.0);
        let run = |n: usize| integrate_fixed(|_, y| hr_rhs(y, &p), y0, (0.0, 100.0), n);
        let reference = run(1 << 17);
        let e1 = (run(1 << 11) - reference).norm();
        let e2 = (run(1 << 12) - reference).norm();
        let order = (e1 / e2).log2();
        assert!(order >= 4.0, "observed order {order} (e1={e1:.2e}, e2={e2:.2e})");
    }

    #[test]
    fn hr_bursting_trajectory_stays_bounded() {
        let p = ModelParams::new(2.6, 2.0);
        let mut max_abs_x: f64 = 0.0;
        integrate_streaming(
            |_, y: &SVector<f64, 3>| hr_rhs(y, &p),
            Vector3::zeros(),
            (0.0, 2000.0),
            &IntegrateOptions::default(),
            |s| {
                max_abs_x = max_abs_x.max(s.y1[0].abs());
                true
            },
        )
        .unwrap();
        assert!(max_abs_x < 3.0, "max |x| = {max_abs_x}");
        assert!(max_abs_x > 1.0, "trajectory suspiciously static");
    }

    #[test]
    fn degenerate_span_is_an_error() {
        let r = integrate_adaptive(
            |_, y: &Vector1<f64>| *y,
            Vector1::new(1.0),
            (1.0, 1.0),
            1e-9,
            1e-11,
        );
        assert!(r.is_err());
    }

    #[test]
    fn tolerance_precondition_enforced() {
        let r = integrate_adaptive(
            |_, y: &Vector1<f64>| *y,
            Vector1::new(1.0),
            (0.0, 1.0),
            0.5, // > 1e-2
            1e-11,
        );
        assert!(r.is_err());
    }

    #[test]
    fn blow_up_reports_underflow_with_last_state() {
        // y' = y^2 blows up at t = 1; the integrator must fail gracefully.
        let r = integrate_adaptive(
            |_, y: &Vector1<f64>| Vector1::new(y[0] * y[0]),
            Vector1::new(1.0),
            (0.0, 2.0),
            1e-9,
            1e-11,
        );
        match r {
            Err(Error::StepSizeUnderflow { t, .. }) => assert!(t > 0.9 && t < 1.1),
            Err(Error::NonFiniteState { t }) => assert!(t > 0.9 && t < 1.1),
            other => panic!("expected blow-up diagnostic, got {other:?}"),
        }
    }
}
