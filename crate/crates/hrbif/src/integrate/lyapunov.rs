//! Benettin-style largest-Lyapunov-exponent estimation: the variational
//! system is integrated alongside the flow and the tangent vector is
//! renormalised after every accepted step.

use nalgebra::{SMatrix, SVector};

use super::rk::{StepOutcome, Stepper};
use super::IntegrateOptions;
use crate::error::{Error, Result};
use crate::model::{hr_jacobian, hr_rhs, ModelParams};

/// Largest Lyapunov exponent of a generic flow.
///
/// `f` is the vector field, `jac` its Jacobian. The trajectory is first run
/// for `t_transient` without accumulation, then measured over `t_measure`.
pub fn benettin_max<F, J, const N: usize>(
    mut f: F,
    mut jac: J,
    y0: SVector<f64, N>,
    v0: SVector<f64, N>,
    t_transient: f64,
    t_measure: f64,
    opts: &IntegrateOptions,
) -> Result<f64>
where
    F: FnMut(f64, &SVector<f64, N>) -> SVector<f64, N>,
    J: FnMut(f64, &SVector<f64, N>) -> SMatrix<f64, N, N>,
{
    opts.validate()?;
    if t_measure <= 0.0 {
        return Err(Error::domain("t_measure must be positive"));
    }
    let mut y = y0;
    let mut v = v0;
    let vnorm = v.norm();
    if vnorm == 0.0 {
        return Err(Error::domain("zero initial tangent vector"));
    }
    v /= vnorm;

    // Transient: let both the state reach the attractor and the tangent
    // align with the dominant direction before accumulating.
    if t_transient > 0.0 {
        let mut v_t = v;
        let jac_ref = &mut jac;
        let (_, y_end) = super::integrate_streaming(
            &mut f,
            y,
            (0.0, t_transient),
            opts,
            |step| {
                let v_new = propagate_tangent(jac_ref, step, &v_t);
                let n = v_new.norm();
                if n.is_finite() && n > 0.0 {
                    v_t = v_new / n;
                }
                true
            },
        )?;
        y = y_end;
        v = v_t;
    }

    // The flow is stepped adaptively; the tangent, being linear in v, is
    // propagated across each accepted step from the dense flow interpolant
    // and renormalised.
    let mut stepper: Stepper<N> = Stepper::new(opts.rel_tol, opts.abs_tol);
    let mut t = 0.0;
    let mut log_sum = 0.0;
    let mut h = stepper.initial_step(&mut f, 0.0, &y, 1.0);
    stepper.reset_fsal();
    let h_floor = 1e-14 * t_measure.max(1.0);
    let mut steps = 0usize;
    while t < t_measure {
        if steps >= opts.max_steps {
            return Err(Error::domain("max step count exceeded in benettin_max"));
        }
        if h < h_floor {
            return Err(Error::StepSizeUnderflow {
                t,
                h,
                state: y.iter().copied().collect(),
            });
        }
        if t + h > t_measure {
            h = t_measure - t;
        }
        match stepper.try_step(&mut f, t, &y, h) {
            StepOutcome::Accepted { dense, h_next } => {
                let v_new = propagate_tangent(&mut jac, &dense, &v);
                t = dense.t1();
                y = dense.y1;
                let n = v_new.norm();
                if !n.is_finite() || n == 0.0 {
                    return Err(Error::NonFiniteState { t });
                }
                log_sum += n.ln();
                v = v_new / n;
                h = h_next;
            }
            StepOutcome::Rejected { h_next } => {
                h = h_next;
            }
        }
        steps += 1;
    }
    Ok(log_sum / t_measure)
}

/// One RK5 pass of the linear variational equation v' = J(y(t)) v across an
/// accepted flow step, evaluating y(t) from the dense output.
fn propagate_tangent<J, const N: usize>(
    jac: &mut J,
    dense: &super::rk::DenseStep<N>,
    v: &SVector<f64, N>,
) -> SVector<f64, N>
where
    J: FnMut(f64, &SVector<f64, N>) -> SMatrix<f64, N, N>,
{
    // Substep the linear system; 4 fixed RK5 substeps of the classical
    // formula keep the tangent error negligible against the flow tolerance.
    let mut rhs = |t: f64, vv: &SVector<f64, N>| {
        let y = dense.eval(t);
        jac(t, &y) * vv
    };
    let mut out = *v;
    let sub = 4;
    let hh = dense.h / sub as f64;
    let mut t = dense.t0;
    for _ in 0..sub {
        out = super::rk::rk5_fixed_step(&mut rhs, t, &out, hh);
        t += hh;
    }
    out
}

/// Default deterministic initial tangent direction.
pub fn default_tangent<const N: usize>() -> SVector<f64, N> {
    let mut v = SVector::<f64, N>::zeros();
    for i in 0..N {
        v[i] = 1.0 + i as f64 * 0.25;
    }
    v / v.norm()
}

/// Tangent direction derived from a seed (splitmix64 stream).
pub fn seeded_tangent<const N: usize>(seed: u64) -> SVector<f64, N> {
    let mut s = seed.wrapping_add(0x9e3779b97f4a7c15);
    let mut next = move || {
        s = s.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = s;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    };
    let mut v = SVector::<f64, N>::zeros();
    for i in 0..N {
        // Uniform in [-1, 1).
        v[i] = (next() >> 11) as f64 / (1u64 << 52) as f64 - 1.0;
    }
    if v.norm() < 1e-12 {
        return default_tangent();
    }
    v / v.norm()
}

/// Largest Lyapunov exponent of the Hindmarsh-Rose flow.
pub fn lyapunov_max(
    p: &ModelParams,
    y0: SVector<f64, 3>,
    t_transient: f64,
    t_measure: f64,
) -> Result<f64> {
    let pp = *p;
    benettin_max(
        move |_, y| hr_rhs(y, &pp),
        move |_, y| hr_jacobian(y, &pp),
        y0,
        default_tangent(),
        t_transient,
        t_measure,
        &IntegrateOptions::default(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix2, Vector2, Vector3};

    #[test]
    fn linear_system_exponent_is_largest_diagonal() {
        // y' = diag(a, -b) y has largest exponent a.
        let a = 0.37;
        let b = 1.21;
        let m = Matrix2::new(a, 0.0, 0.0, -b);
        let lam = benettin_max(
            move |_, y: &Vector2<f64>| m * y,
            move |_, _| m,
            Vector2::new(0.3, 0.8),
            Vector2::new(1.0, 1.0).normalize(),
            60.0,
            200.0,
            &IntegrateOptions::default(),
        )
        .unwrap();
        assert!((lam - a).abs() < 1e-3, "lambda = {lam}");
    }

    #[test]
    fn stable_equilibrium_regime_nonpositive() {
        // Far below the spiking threshold the only attractor is a sink.
        let p = ModelParams::new(2.6, -5.0);
        let lam = lyapunov_max(&p, Vector3::zeros(), 500.0, 1000.0).unwrap();
        assert!(lam <= 1e-2, "lambda = {lam}");
    }

    #[test]
    fn periodic_bursting_exponent_near_zero() {
        let p = ModelParams::new(2.6, 2.0);
        let lam = lyapunov_max(&p, Vector3::zeros(), 1000.0, 4000.0).unwrap();
        assert!(lam.abs() <= 5e-3, "lambda = {lam}");
    }
}
