//! Pseudo-arclength continuation for collocation BVPs.
//!
//! The reduced unknown vector is (mesh values, globals); interior
//! representation values are slaved through the condensation. Conditions are
//! rebuilt per accepted step so integral phase conditions re-anchor to the
//! current profile.

use nalgebra::DVector;

use super::mesh::{
    bvp_newton, bvp_tangent, standard_weights, ArclengthRow, BvpConditions, BvpNewtonSettings,
    BvpSolution, BvpSystem,
};
use crate::continuation::{SpecialPointKind, Termination};
use crate::error::Result;

/// Which test functions the driver watches for sign changes.
#[derive(Debug, Clone)]
pub struct TestSpec {
    pub kind: SpecialPointKind,
    pub exclude_if_branch_point: bool,
}

#[derive(Debug, Clone)]
pub struct BvpBranchPoint {
    pub sol: BvpSolution,
    /// Unit tangent over (mesh, q), weighted norm.
    pub tangent: DVector<f64>,
    pub tests: Vec<f64>,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct BvpSpecialPoint {
    pub kind: SpecialPointKind,
    /// Index of the last branch point before the sign change.
    pub after_index: usize,
    pub sol: BvpSolution,
    pub bracket: (f64, f64),
}

#[derive(Debug, Clone, Default)]
pub struct BvpBranch {
    pub points: Vec<BvpBranchPoint>,
    pub special_points: Vec<BvpSpecialPoint>,
    pub termination: Termination,
}

impl BvpBranch {
    /// Globals trace: one row of q per accepted point.
    pub fn q_trace(&self) -> Vec<Vec<f64>> {
        self.points
            .iter()
            .map(|p| p.sol.q.iter().copied().collect())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct BvpContinuationSettings {
    pub ds0: f64,
    pub ds_min: f64,
    pub ds_max: f64,
    pub grow: f64,
    pub max_steps: usize,
    pub newton: BvpNewtonSettings,
    /// Stop when global k leaves [lo, hi].
    pub q_ranges: Vec<(usize, f64, f64)>,
    /// Index into the reduced vector whose sign orients the initial tangent.
    pub direction_component: usize,
    /// Refine detected sign changes by bisection along the segment.
    pub refine_specials: bool,
}

impl Default for BvpContinuationSettings {
    fn default() -> Self {
        BvpContinuationSettings {
            ds0: 1e-3,
            ds_min: 1e-10,
            ds_max: 0.05,
            grow: 1.3,
            max_steps: 400,
            newton: BvpNewtonSettings::default(),
            q_ranges: Vec::new(),
            direction_component: 0,
            refine_specials: true,
        }
    }
}


/// Continue a BVP branch. `make_conditions` re-anchors conditions at each
/// accepted point; `monitor` computes the test-function vector (one value
/// per entry of `tests`).
pub fn continue_bvp<S, MC, M>(
    system: &S,
    make_conditions: MC,
    start: &BvpSolution,
    direction: f64,
    settings: &BvpContinuationSettings,
    tests: &[TestSpec],
    mut monitor: M,
) -> Result<BvpBranch>
where
    S: BvpSystem,
    MC: Fn(&BvpSolution) -> Box<dyn BvpConditions<S>>,
    M: FnMut(&S, &BvpSolution, &DVector<f64>) -> Vec<f64>,
{
    let weights = standard_weights(start);
    let n_red = start.mesh.len() + start.q.len();

    // Initial tangent oriented along direction_component * direction.
    let mut border = DVector::zeros(n_red);
    border[settings.direction_component] = direction;

    // Converge the start point with the direction component pinned, which
    // squares the system.
    let mut sol = start.clone();
    {
        let conds = make_conditions(&sol);
        let z0 = sol.pack_z();
        let arc = ArclengthRow {
            tangent: &border,
            z_ref: &z0,
            weights: &weights,
            ds: 0.0,
        };
        bvp_newton(system, conds.as_ref(), &mut sol, Some(&arc), &settings.newton)?;
    }
    let conds0 = make_conditions(&sol);
    let mut tangent = bvp_tangent(system, conds0.as_ref(), &sol, &border, &weights)?;
    drop(conds0);

    let mut branch = BvpBranch::default();
    let tests0 = monitor(system, &sol, &tangent);
    branch.points.push(BvpBranchPoint {
        sol: sol.clone(),
        tangent: tangent.clone(),
        tests: tests0,
        newton_iterations: 0,
    });

    let mut ds = settings.ds0;
    let mut failures = 0usize;
    for step in 0..settings.max_steps {
        let prev = branch.points.last().unwrap();
        let prev_z = prev.sol.pack_z();
        // Predictor on (mesh, q); interiors stay and are corrected by Newton.
        let mut trial = prev.sol.clone();
        let n_mesh = trial.mesh.len();
        for i in 0..n_mesh {
            trial.mesh[i] += ds * tangent[i];
        }
        for k in 0..trial.q.len() {
            trial.q[k] += ds * tangent[n_mesh + k];
        }
        let pred_z = trial.pack_z();
        let conds = make_conditions(&prev.sol);
        let arc = ArclengthRow {
            tangent: &tangent,
            z_ref: &pred_z,
            weights: &weights,
            ds: 0.0,
        };
        match bvp_newton(system, conds.as_ref(), &mut trial, Some(&arc), &settings.newton) {
            Ok(report) => {
                // Guard against the corrector collapsing back onto the
                // previous point.
                let advance = {
                    let z = trial.pack_z();
                    let mut acc = 0.0;
                    for i in 0..n_red {
                        acc += weights[i] * (z[i] - prev_z[i]).powi(2);
                    }
                    acc.sqrt()
                };
                if advance < 1e-3 * ds {
                    failures += 1;
                    ds *= 0.5;
                    if ds < settings.ds_min || failures > 80 {
                        branch.termination = Termination::StepUnderflow { at_step: step };
                        return Ok(branch);
                    }
                    continue;
                }
                failures = 0;
                let new_tangent =
                    match bvp_tangent(system, conds.as_ref(), &trial, &tangent, &weights) {
                        Ok(t) => t,
                        Err(_) => tangent.clone(),
                    };
                let test_vals = monitor(system, &trial, &new_tangent);
                // Sign changes against the previous point.
                let prev_tests = branch.points.last().unwrap().tests.clone();
                let after_index = branch.points.len() - 1;
                for (ti, spec) in tests.iter().enumerate() {
                    let (a, b) = (prev_tests[ti], test_vals[ti]);
                    if a.is_finite() && b.is_finite() && a * b < 0.0 {
                        let refined = if settings.refine_specials {
                            refine_sign_change(
                                system,
                                &make_conditions,
                                &branch.points[after_index].sol,
                                &trial,
                                &weights,
                                &settings.newton,
                                |sys, s| {
                                    let t = bvp_tangent(sys, make_conditions(s).as_ref(), s, &tangent, &weights)
                                        .unwrap_or_else(|_| tangent.clone());
                                    monitor_once(sys, s, &t, &mut monitor, ti)
                                },
                            )
                        } else {
                            None
                        };
                        branch.special_points.push(BvpSpecialPoint {
                            kind: spec.kind,
                            after_index,
                            sol: refined.unwrap_or_else(|| trial.clone()),
                            bracket: (a, b),
                        });
                    }
                }
                branch.points.push(BvpBranchPoint {
                    sol: trial.clone(),
                    tangent: new_tangent.clone(),
                    tests: test_vals,
                    newton_iterations: report.iterations,
                });
                tangent = new_tangent;
                sol = trial;
                if report.iterations <= 3 {
                    ds = (ds * settings.grow).min(settings.ds_max);
                }
                for &(k, lo, hi) in &settings.q_ranges {
                    if sol.q[k] < lo || sol.q[k] > hi {
                        branch.termination = Termination::ParameterRange;
                        return Ok(branch);
                    }
                }
            }
            Err(_) => {
                failures += 1;
                ds *= 0.5;
                if ds < settings.ds_min || failures > 80 {
                    branch.termination = Termination::StepUnderflow { at_step: step };
                    return Ok(branch);
                }
            }
        }
    }
    branch.termination = Termination::MaxSteps;
    Ok(branch)
}

fn monitor_once<S, M>(
    system: &S,
    sol: &BvpSolution,
    tangent: &DVector<f64>,
    monitor: &mut M,
    index: usize,
) -> f64
where
    S: BvpSystem,
    M: FnMut(&S, &BvpSolution, &DVector<f64>) -> Vec<f64>,
{
    monitor(system, sol, tangent)
        .get(index)
        .copied()
        .unwrap_or(f64::NAN)
}

/// Bisection between two consecutive branch solutions for a test-function
/// zero, re-correcting each trial onto the branch with a secant arclength
/// row. Returns the best solution found, if any trial converged.
fn refine_sign_change<S, MC, T>(
    system: &S,
    make_conditions: &MC,
    a: &BvpSolution,
    b: &BvpSolution,
    weights: &DVector<f64>,
    newton: &BvpNewtonSettings,
    mut test: T,
) -> Option<BvpSolution>
where
    S: BvpSystem,
    MC: Fn(&BvpSolution) -> Box<dyn BvpConditions<S>>,
    T: FnMut(&S, &BvpSolution) -> f64,
{
    let za = a.pack_z();
    let zb = b.pack_z();
    let mut secant = DVector::zeros(za.len());
    for i in 0..za.len() {
        secant[i] = zb[i] - za[i];
    }
    let norm = super::mesh::weighted_norm(&secant, weights);
    if norm == 0.0 {
        return None;
    }
    let secant = secant / norm;

    let interp = |s: f64| -> BvpSolution {
        let mut out = a.clone();
        for i in 0..out.mesh.len() {
            out.mesh[i] = a.mesh[i] + s * (b.mesh[i] - a.mesh[i]);
        }
        for i in 0..out.interior.len() {
            out.interior[i] = a.interior[i] + s * (b.interior[i] - a.interior[i]);
        }
        for k in 0..out.q.len() {
            out.q[k] = a.q[k] + s * (b.q[k] - a.q[k]);
        }
        out
    };

    let solve_at = |s: f64, test: &mut T| -> Option<(BvpSolution, f64)> {
        let mut trial = interp(s);
        let z_ref = trial.pack_z();
        let conds = make_conditions(a);
        let arc = ArclengthRow {
            tangent: &secant,
            z_ref: &z_ref,
            weights,
            ds: 0.0,
        };
        bvp_newton(system, conds.as_ref(), &mut trial, Some(&arc), newton).ok()?;
        let tv = test(system, &trial);
        Some((trial, tv))
    };

    let fa = test(system, a);
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    let mut f_lo = fa;
    let mut best: Option<(BvpSolution, f64)> = None;
    for _ in 0..12 {
        let mid = 0.5 * (lo + hi);
        let Some((s_mid, f_mid)) = solve_at(mid, &mut test) else {
            return best.map(|(s, _)| s);
        };
        if !f_mid.is_finite() {
            return best.map(|(s, _)| s);
        }
        if best.is_none() || f_mid.abs() < best.as_ref().unwrap().1.abs() {
            best = Some((s_mid, f_mid));
        }
        if f_lo * f_mid <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
            f_lo = f_mid;
        }
        if (hi - lo) < 1e-4 {
            break;
        }
    }
    best.map(|(s, _)| s)
}

/// Convenience: converge a solution against freshly built conditions.
pub fn converge<S: BvpSystem>(
    system: &S,
    conditions: &dyn BvpConditions<S>,
    sol: &mut BvpSolution,
    newton: &BvpNewtonSettings,
) -> Result<()> {
    bvp_newton(system, conditions, sol, None, newton).map(|_| ())
}

/// Stop-condition helper: detect the step where global k crossed `value`
/// and return (index of point before, fraction along segment).
pub fn crossing_of_global(branch: &BvpBranch, k: usize, value: f64) -> Option<(usize, f64)> {
    for w in 0..branch.points.len().saturating_sub(1) {
        let a = branch.points[w].sol.q[k] - value;
        let b = branch.points[w + 1].sol.q[k] - value;
        if a * b <= 0.0 && a != b {
            return Some((w, a / (a - b)));
        }
    }
    None
}


