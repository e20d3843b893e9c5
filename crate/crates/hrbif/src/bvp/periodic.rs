//! Periodic-orbit boundary-value solves with an integral phase condition,
//! Floquet multipliers from the condensed collocation blocks, and
//! one-parameter cycle continuation with fold and period-doubling tags.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::contin::{continue_bvp, BvpBranch, BvpContinuationSettings, TestSpec};
use super::mesh::{
    bvp_newton, solution_from_profile, BvpConditions, BvpNewtonSettings,
    BvpSolution, BvpSystem, DEGREE, GAUSS_NODES,
};
use crate::continuation::SpecialPointKind;
use crate::error::{Error, Result};

/// Periodicity u(0) = u(1) plus the integral phase condition
/// int <du_ref/ds, u(s) - u_ref(s)> ds = 0 (trapezoid over mesh points),
/// plus pin rows for inactive globals beyond the first `1 + n_free`.
pub struct PeriodicConditions {
    n: usize,
    /// Reference profile mesh values for the phase condition.
    pub ref_mesh: DVector<f64>,
    /// d u_ref / ds at the mesh points (scaled time derivative).
    pub ref_deriv: DVector<f64>,
    /// Number of globals free to move (beyond them, q[k] is pinned to
    /// `pinned[k]`).
    pub n_free: usize,
    pub pinned: Vec<f64>,
}

impl PeriodicConditions {
    /// Build from a current solution, using its own scaled derivative.
    pub fn from_reference<S: BvpSystem>(system: &S, sol: &BvpSolution, n_free: usize) -> Self {
        let n = sol.n;
        let n_mesh = (sol.n_intervals + 1) * n;
        let mut deriv = DVector::zeros(n_mesh);
        for j in 0..=sol.n_intervals {
            let u: DVector<f64> = sol.mesh.rows(j * n, n).into();
            let f = system.rhs(sol.breaks[j], &u, &sol.q);
            deriv.rows_mut(j * n, n).copy_from(&f);
        }
        PeriodicConditions {
            n,
            ref_mesh: sol.mesh.clone(),
            ref_deriv: deriv,
            n_free,
            pinned: sol.q.iter().copied().collect(),
        }
    }

    fn phase_weights(&self, sol: &BvpSolution) -> Vec<f64> {
        // Trapezoid weights over the (possibly nonuniform) breaks.
        let np = sol.n_intervals + 1;
        let mut w = vec![0.0; np];
        for j in 0..sol.n_intervals {
            let h = sol.breaks[j + 1] - sol.breaks[j];
            w[j] += 0.5 * h;
            w[j + 1] += 0.5 * h;
        }
        w
    }
}

impl<S: BvpSystem> BvpConditions<S> for PeriodicConditions {
    fn count(&self) -> usize {
        let n_pinned = self.pinned.len() - 1 - self.n_free;
        self.n + 1 + n_pinned
    }

    fn eval(&self, _system: &S, sol: &BvpSolution) -> DVector<f64> {
        let n = sol.n;
        let n_pinned = sol.q.len() - 1 - self.n_free;
        let mut out = DVector::zeros(n + 1 + n_pinned);
        let u0 = sol.u0();
        let u1 = sol.u1();
        for i in 0..n {
            out[i] = u0[i] - u1[i];
        }
        // Integral phase.
        let w = self.phase_weights(sol);
        let mut phase = 0.0;
        for j in 0..=sol.n_intervals {
            for i in 0..n {
                let idx = j * n + i;
                phase += w[j] * self.ref_deriv[idx] * (sol.mesh[idx] - self.ref_mesh[idx]);
            }
        }
        out[n] = phase;
        for k in 0..n_pinned {
            let qi = 1 + self.n_free + k;
            out[n + 1 + k] = sol.q[qi] - self.pinned[qi];
        }
        out
    }

    fn jacobian(&self, _system: &S, sol: &BvpSolution) -> DMatrix<f64> {
        let n = sol.n;
        let g = sol.q.len();
        let n_mesh = (sol.n_intervals + 1) * n;
        let n_pinned = g - 1 - self.n_free;
        let c = n + 1 + n_pinned;
        let mut rows = DMatrix::zeros(c, n_mesh + g);
        for i in 0..n {
            rows[(i, i)] = 1.0;
            rows[(i, n_mesh - n + i)] = -1.0;
        }
        let w = self.phase_weights(sol);
        for j in 0..=sol.n_intervals {
            for i in 0..n {
                let idx = j * n + i;
                rows[(n, idx)] = w[j] * self.ref_deriv[idx];
            }
        }
        for k in 0..n_pinned {
            rows[(n + 1 + k, n_mesh + 1 + self.n_free + k)] = 1.0;
        }
        rows
    }
}

/// A converged periodic orbit.
#[derive(Debug, Clone)]
pub struct PeriodicOrbit {
    pub sol: BvpSolution,
    /// Floquet multipliers (one is trivially 1).
    pub multipliers: Vec<Complex64>,
    /// Set when the monodromy product was rescaled past the floating range.
    pub ill_conditioned: bool,
}

impl PeriodicOrbit {
    pub fn period(&self) -> f64 {
        self.sol.q[0]
    }
}

/// Solve for a periodic orbit from an approximately closed profile.
///
/// `guess(s)` is the profile over one loop (s in [0,1]), `period_guess` its
/// duration. The period is a free unknown; the integral phase condition
/// anchors the phase to the guess. Trailing globals (model parameters) are
/// pinned at their `q_init` values.
pub fn solve_periodic<S: BvpSystem>(
    system: &S,
    guess: impl FnMut(f64) -> DVector<f64>,
    q_init: DVector<f64>,
    breaks: &[f64],
    settings: &BvpNewtonSettings,
) -> Result<PeriodicOrbit> {
    let n = system.dim();
    let g = system.n_globals();
    if q_init.len() != g {
        return Err(Error::domain(format!(
            "q_init has {} entries, system expects {g}",
            q_init.len()
        )));
    }
    let mut sol = solution_from_profile(n, breaks, q_init, guess);
    let conds = PeriodicConditions::from_reference(system, &sol, 0);
    bvp_newton(system, &conds, &mut sol, None, settings)?;
    // One more pass with the phase anchored to the converged profile; this
    // removes any phase bias from a crude guess.
    let conds = PeriodicConditions::from_reference(system, &sol, 0);
    bvp_newton(system, &conds, &mut sol, None, settings)?;
    let (multipliers, ill) = floquet_multipliers(system, &sol)?;
    Ok(PeriodicOrbit {
        sol,
        multipliers,
        ill_conditioned: ill,
    })
}

/// Floquet multipliers as eigenvalues of the monodromy matrix assembled
/// from the condensed collocation blocks: over each interval the linearised
/// transfer is u_{j+1} = -F_j^{-1} E_j u_j.
pub fn floquet_multipliers<S: BvpSystem>(
    system: &S,
    sol: &BvpSolution,
) -> Result<(Vec<Complex64>, bool)> {
    let n = sol.n;
    let mut mono = DMatrix::<f64>::identity(n, n);
    let mut log2_scale = 0.0f64;
    let mut ill = false;
    for j in 0..sol.n_intervals {
        let (e_j, f_j) = interval_transfer_blocks(system, sol, j)?;
        let step = f_j.lu().solve_mut_into(e_j).ok_or(Error::SingularSystem {
            context: "floquet transfer",
        })?;
        mono = -step * mono;
        let norm = mono.norm();
        if !norm.is_finite() {
            return Err(Error::SingularSystem {
                context: "floquet overflow",
            });
        }
        if norm > 1e100 || norm < 1e-100 {
            let k = norm.log2().round();
            mono /= 2f64.powf(k);
            log2_scale += k;
            ill = ill || log2_scale.abs() > 900.0;
        }
    }
    let scale = 2f64.powf(log2_scale.clamp(-1000.0, 1000.0));
    let eig = mono.complex_eigenvalues();
    let mut out: Vec<Complex64> = eig.iter().map(|&l| l * scale).collect();
    out.sort_by(|a, b| b.norm().partial_cmp(&a.norm()).unwrap());
    if log2_scale.abs() > 900.0 {
        ill = true;
    }
    Ok((out, ill))
}

trait SolveInto {
    fn solve_mut_into(self, b: DMatrix<f64>) -> Option<DMatrix<f64>>;
}

impl SolveInto for nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn> {
    fn solve_mut_into(self, b: DMatrix<f64>) -> Option<DMatrix<f64>> {
        self.solve(&b)
    }
}

/// Condensed (E_j, F_j) blocks of the variational transfer over interval j.
fn interval_transfer_blocks<S: BvpSystem>(
    system: &S,
    sol: &BvpSolution,
    j: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    use super::mesh::{lagrange_deriv_weights, lagrange_weights};
    let n = sol.n;
    let ni = DEGREE - 1;
    let n_interior = ni * n;
    let n_rows = DEGREE * n;
    let h = sol.breaks[j + 1] - sol.breaks[j];
    let pts = {
        // local representation points
        let mut v = Vec::with_capacity(DEGREE + 1);
        v.push(sol.mesh_point(j));
        for k in 0..ni {
            v.push(sol.interior.rows((j * ni + k) * n, n).into());
        }
        v.push(sol.mesh_point(j + 1));
        v
    };
    let cols = n_interior + 2 * n;
    let mut m: DMatrix<f64> = DMatrix::zeros(n_rows, cols);
    for gi in 0..DEGREE {
        let sigma = GAUSS_NODES[gi];
        let s_node = sol.breaks[j] + h * sigma;
        let wv = lagrange_weights(sigma);
        let wd = lagrange_deriv_weights(sigma);
        let mut u = DVector::zeros(n);
        for k in 0..=DEGREE {
            u += &pts[k] * wv[k];
        }
        let jac = system.jac_u(s_node, &u, &sol.q);
        let row0 = gi * n;
        for k in 0..=DEGREE {
            let col0 = match k {
                0 => n_interior,
                DEGREE => n_interior + n,
                _ => (k - 1) * n,
            };
            for r in 0..n {
                for cc in 0..n {
                    m[(row0 + r, col0 + cc)] +=
                        -h * wv[k] * jac[(r, cc)] + if r == cc { wd[k] } else { 0.0 };
                }
            }
        }
    }
    // Eliminate interior columns.
    for col in 0..n_interior {
        let mut piv = col;
        for r in (col + 1)..n_rows {
            if m[(r, col)].abs() > m[(piv, col)].abs() {
                piv = r;
            }
        }
        if m[(piv, col)].abs() < 1e-300 {
            return Err(Error::SingularSystem {
                context: "floquet condensation",
            });
        }
        if piv != col {
            m.swap_rows(piv, col);
        }
        let d = m[(col, col)];
        for r in (col + 1)..n_rows {
            let factor = m[(r, col)] / d;
            if factor != 0.0 {
                for cc in col..cols {
                    m[(r, cc)] -= factor * m[(col, cc)];
                }
                m[(r, col)] = 0.0;
            }
        }
    }
    let mut e = DMatrix::zeros(n, n);
    let mut f = DMatrix::zeros(n, n);
    for r in 0..n {
        for cc in 0..n {
            e[(r, cc)] = m[(n_interior + r, n_interior + cc)];
            f[(r, cc)] = m[(n_interior + r, n_interior + n + cc)];
        }
    }
    Ok((e, f))
}

/// Period-doubling test: real part of prod (mu_i + 1) over all multipliers
/// (conjugate pairs make it real); crosses zero when a multiplier passes -1.
pub fn pd_test(multipliers: &[Complex64]) -> f64 {
    multipliers
        .iter()
        .fold(Complex64::new(1.0, 0.0), |acc, m| acc * (m + 1.0))
        .re
}

/// Continue a periodic orbit in one model parameter with Fold and PD tags.
///
/// The free parameter must already be configured as global index 1 of the
/// system; q = [T, param].
pub fn continue_periodic<S: BvpSystem>(
    system: &S,
    start: &PeriodicOrbit,
    settings: &BvpContinuationSettings,
    direction: f64,
) -> Result<BvpBranch> {
    let make_conditions = |sol: &BvpSolution| -> Box<dyn BvpConditions<S>> {
        Box::new(PeriodicConditions::from_reference(system, sol, 1))
    };
    let tests = vec![
        TestSpec {
            kind: SpecialPointKind::Fold,
            // Parameter component of the tangent (q[1] slot).
            exclude_if_branch_point: false,
        },
        TestSpec {
            kind: SpecialPointKind::PeriodDoubling,
            exclude_if_branch_point: false,
        },
    ];
    let monitor = |sys: &S, sol: &BvpSolution, tangent: &DVector<f64>| -> Vec<f64> {
        let n_mesh = (sol.n_intervals + 1) * sol.n;
        let fold = tangent[n_mesh + 1];
        let pd = floquet_multipliers(sys, sol)
            .map(|(m, _)| pd_test(&m))
            .unwrap_or(f64::NAN);
        vec![fold, pd]
    };
    continue_bvp(
        system,
        make_conditions,
        &start.sol,
        direction,
        settings,
        &tests,
        monitor,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bvp::systems::ClosureSystem;
    use crate::bvp::mesh::uniform_breaks;
    use approx::assert_relative_eq;

    fn hopf_normal_form(lambda: f64) -> ClosureSystem<
        impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
        impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64>,
    > {
        ClosureSystem {
            dim: 2,
            n_globals: 1,
            f: move |u: &DVector<f64>, _q: &DVector<f64>| {
                let r2 = u[0] * u[0] + u[1] * u[1];
                DVector::from_vec(vec![
                    lambda * u[0] - u[1] - u[0] * r2,
                    u[0] + lambda * u[1] - u[1] * r2,
                ])
            },
            jac: move |u: &DVector<f64>, _q: &DVector<f64>| {
                let (x, y) = (u[0], u[1]);
                let r2 = x * x + y * y;
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        lambda - r2 - 2.0 * x * x,
                        -1.0 - 2.0 * x * y,
                        1.0 - 2.0 * x * y,
                        lambda - r2 - 2.0 * y * y,
                    ],
                )
            },
        }
    }

    #[test]
    fn hopf_amplitude_scaling() {
        // The limit cycle of the Hopf normal form has radius sqrt(lambda).
        for &lambda in &[0.04f64, 0.25] {
            let system = hopf_normal_form(lambda);
            let breaks = uniform_breaks(20);
            // Guess 30% off in radius, exact in period.
            let r_guess = 1.3 * lambda.sqrt();
            let orbit = solve_periodic(
                &system,
                |s| {
                    let th = 2.0 * std::f64::consts::PI * s;
                    DVector::from_vec(vec![r_guess * th.cos(), r_guess * th.sin()])
                },
                DVector::from_vec(vec![2.0 * std::f64::consts::PI]),
                &breaks,
                &BvpNewtonSettings::default(),
            )
            .unwrap();
            let amp = orbit
                .sol
                .sample(64)
                .iter()
                .map(|(_, u)| (u[0] * u[0] + u[1] * u[1]).sqrt())
                .fold(0.0f64, f64::max);
            let expect = lambda.sqrt();
            assert!(
                (amp - expect).abs() / expect < 0.02,
                "lambda={lambda}: amplitude {amp} vs {expect}"
            );
            assert_relative_eq!(orbit.period(), 2.0 * std::f64::consts::PI, epsilon = 1e-6);
        }
    }

    #[test]
    fn trivial_multiplier_is_one() {
        let system = hopf_normal_form(0.3);
        let breaks = uniform_breaks(20);
        let orbit = solve_periodic(
            &system,
            |s| {
                let th = 2.0 * std::f64::consts::PI * s;
                DVector::from_vec(vec![0.5 * th.cos(), 0.5 * th.sin()])
            },
            DVector::from_vec(vec![2.0 * std::f64::consts::PI]),
            &breaks,
            &BvpNewtonSettings::default(),
        )
        .unwrap();
        let trivial = orbit
            .multipliers
            .iter()
            .min_by(|a, b| {
                (*a - 1.0).norm().partial_cmp(&(*b - 1.0).norm()).unwrap()
            })
            .unwrap();
        assert!(
            (trivial - 1.0).norm() < 1e-6,
            "trivial multiplier {trivial}"
        );
        // The radial multiplier of the normal form is exp(-2 lambda T).
        let radial = orbit
            .multipliers
            .iter()
            .max_by(|a, b| (*a - 1.0).norm().partial_cmp(&(*b - 1.0).norm()).unwrap())
            .unwrap();
        let expect = (-2.0 * 0.3 * orbit.period()).exp();
        assert!(
            (radial.re - expect).abs() < 1e-4 && radial.im.abs() < 1e-8,
            "radial multiplier {radial} vs {expect}"
        );
    }

    #[test]
    fn reconverging_is_idempotent() {
        let system = hopf_normal_form(0.25);
        let breaks = uniform_breaks(16);
        let orbit = solve_periodic(
            &system,
            |s| {
                let th = 2.0 * std::f64::consts::PI * s;
                DVector::from_vec(vec![0.5 * th.cos(), 0.5 * th.sin()])
            },
            DVector::from_vec(vec![2.0 * std::f64::consts::PI]),
            &breaks,
            &BvpNewtonSettings::default(),
        )
        .unwrap();
        let sol1 = orbit.sol.clone();
        let orbit2 = solve_periodic(
            &system,
            |s| sol1.eval(s),
            DVector::from_vec(vec![sol1.q[0]]),
            &breaks,
            &BvpNewtonSettings::default(),
        )
        .unwrap();
        let dmesh = (&orbit2.sol.mesh - &sol1.mesh).amax();
        let dt = (orbit2.period() - sol1.q[0]).abs();
        assert!(dmesh <= 1e-11 && dt <= 1e-11, "dmesh={dmesh:.2e} dT={dt:.2e}");
    }
}
