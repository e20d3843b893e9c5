//! Generic pseudo-arclength continuation of parameterised nonlinear systems
//! with fold, branch-point and Hopf detection.
//!
//! A problem supplies the residual F(u, lambda) in R^n together with (or
//! falling back to finite differences for) its Jacobians. Branches are
//! arclength-parameterised; the tangent comes from the nullspace of the
//! bordered extended Jacobian and inherits its orientation from the previous
//! step.

pub mod fastsub;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// A parameterised algebraic system F(u, lambda) = 0, F: R^n x R -> R^n.
pub trait ContinuationProblem {
    fn dim(&self) -> usize;

    fn residual(&self, u: &DVector<f64>, lambda: f64) -> DVector<f64>;

    /// dF/du; default central finite differences.
    fn jacobian_u(&self, u: &DVector<f64>, lambda: f64) -> DMatrix<f64> {
        let n = self.dim();
        let mut j = DMatrix::zeros(n, n);
        for c in 0..n {
            let h = 1e-7 * (1.0 + u[c].abs());
            let mut up = u.clone();
            let mut um = u.clone();
            up[c] += h;
            um[c] -= h;
            let col = (self.residual(&up, lambda) - self.residual(&um, lambda)) / (2.0 * h);
            j.set_column(c, &col);
        }
        j
    }

    /// dF/dlambda; default central finite differences.
    fn jacobian_lambda(&self, u: &DVector<f64>, lambda: f64) -> DVector<f64> {
        let h = 1e-7 * (1.0 + lambda.abs());
        (self.residual(u, lambda + h) - self.residual(u, lambda - h)) / (2.0 * h)
    }

    /// Matrix whose eigenvalues determine dynamical stability at a solution
    /// (for an equilibrium problem this is the system Jacobian). `None`
    /// disables Hopf monitoring.
    fn stability_matrix(&self, _u: &DVector<f64>, _lambda: f64) -> Option<DMatrix<f64>> {
        None
    }
}

/// Plain problem built from closures.
pub struct FnProblem<R> {
    pub dim: usize,
    pub residual: R,
}

impl<R> ContinuationProblem for FnProblem<R>
where
    R: Fn(&DVector<f64>, f64) -> DVector<f64>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn residual(&self, u: &DVector<f64>, lambda: f64) -> DVector<f64> {
        (self.residual)(u, lambda)
    }
}

/// Kinds of special points detected along a branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SpecialPointKind {
    Fold,
    Hopf,
    BranchPoint,
    /// Floquet multiplier through -1 (cycle branches).
    PeriodDoubling,
    OrbitFlip,
    InclinationFlip,
    Belyakov,
    Resonance,
    /// Sharp turn of a two-parameter branch (both components reverse).
    TurningPoint,
}

impl std::fmt::Display for SpecialPointKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SpecialPointKind::Fold => "fold",
            SpecialPointKind::Hopf => "hopf",
            SpecialPointKind::BranchPoint => "branch-point",
            SpecialPointKind::PeriodDoubling => "period-doubling",
            SpecialPointKind::OrbitFlip => "orbit-flip",
            SpecialPointKind::InclinationFlip => "inclination-flip",
            SpecialPointKind::Belyakov => "belyakov",
            SpecialPointKind::Resonance => "resonance",
            SpecialPointKind::TurningPoint => "turning-point",
        };
        write!(f, "{s}")
    }
}

/// One accepted branch point.
#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub u: DVector<f64>,
    pub lambda: f64,
    /// Unit tangent in (lambda, u) ordering: component 0 is d lambda / ds.
    pub tangent: DVector<f64>,
    pub newton_iterations: usize,
}

/// A detected and refined special point.
#[derive(Debug, Clone)]
pub struct SpecialPoint {
    pub kind: SpecialPointKind,
    /// Index of the branch point just before the sign change.
    pub after_index: usize,
    pub u: DVector<f64>,
    pub lambda: f64,
    /// Test-function values bracketing the detection.
    pub bracket: (f64, f64),
}

/// A continuation branch.
#[derive(Debug, Clone, Default)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    pub special_points: Vec<SpecialPoint>,
    /// Why the run stopped.
    pub termination: Termination,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub enum Termination {
    #[default]
    MaxSteps,
    StepUnderflow {
        at_step: usize,
    },
    ParameterRange,
    UserStop,
}

/// Step-control and corrector settings.
#[derive(Debug, Clone)]
pub struct ContinuationSettings {
    pub ds0: f64,
    pub ds_min: f64,
    pub ds_max: f64,
    pub max_steps: usize,
    pub corrector_tol: f64,
    pub max_corrector_iters: usize,
    /// Grow factor applied when the corrector converges in <= 3 iterations.
    pub grow: f64,
    /// Stop when lambda leaves this range.
    pub lambda_range: Option<(f64, f64)>,
    /// Detect and refine special points.
    pub detect_special: bool,
}

impl Default for ContinuationSettings {
    fn default() -> Self {
        ContinuationSettings {
            ds0: 1e-2,
            ds_min: 1e-8,
            ds_max: 0.1,
            max_steps: 1000,
            corrector_tol: 1e-10,
            max_corrector_iters: 12,
            grow: 1.3,
            lambda_range: None,
            detect_special: true,
        }
    }
}

/// Newton's method on F(u) = 0 with a supplied Jacobian.
pub fn newton_solve<F, J>(
    f: F,
    jac: J,
    guess: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, usize)>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let mut u = guess.clone();
    for it in 0..max_iter {
        let r = f(&u);
        if !r.iter().all(|v| v.is_finite()) {
            return Err(Error::NewtonNoConvergence {
                residual: f64::NAN,
                iterations: it,
            });
        }
        if r.norm() <= tol {
            return Ok((u, it));
        }
        let j = jac(&u);
        let delta = j.lu().solve(&(-&r)).ok_or(Error::SingularSystem {
            context: "newton_solve",
        })?;
        u += delta;
    }
    let res = f(&u).norm();
    if res <= tol {
        Ok((u, max_iter))
    } else {
        Err(Error::NewtonNoConvergence {
            residual: res,
            iterations: max_iter,
        })
    }
}

/// Newton correction of a continuation problem at fixed lambda.
pub fn newton_correct<P: ContinuationProblem>(
    problem: &P,
    guess: &DVector<f64>,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, usize)> {
    newton_solve(
        |u| problem.residual(u, lambda),
        |u| problem.jacobian_u(u, lambda),
        guess,
        tol,
        max_iter,
    )
}

/// Extended Jacobian [dF/dlambda | dF/du], n x (n+1).
fn extended_jacobian<P: ContinuationProblem>(
    problem: &P,
    u: &DVector<f64>,
    lambda: f64,
) -> DMatrix<f64> {
    let n = problem.dim();
    let mut j = DMatrix::zeros(n, n + 1);
    j.set_column(0, &problem.jacobian_lambda(u, lambda));
    j.view_mut((0, 1), (n, n))
        .copy_from(&problem.jacobian_u(u, lambda));
    j
}

/// Unit tangent from the nullspace of the extended Jacobian via a bordered
/// solve; orientation from `prefer` when given.
fn nullspace_tangent(j_ext: &DMatrix<f64>, prefer: Option<&DVector<f64>>) -> Result<DVector<f64>> {
    let n = j_ext.nrows();
    let border_candidates: Vec<DVector<f64>> = match prefer {
        Some(t) => vec![t.clone()],
        None => (0..=n)
            .map(|i| {
                let mut e = DVector::zeros(n + 1);
                e[i] = 1.0;
                e
            })
            .collect(),
    };
    for border in &border_candidates {
        let mut m = DMatrix::zeros(n + 1, n + 1);
        m.view_mut((0, 0), (n, n + 1)).copy_from(j_ext);
        m.row_mut(n).copy_from(&border.transpose());
        let mut rhs = DVector::zeros(n + 1);
        rhs[n] = 1.0;
        if let Some(t) = m.lu().solve(&rhs) {
            let norm = t.norm();
            if norm > 1e-12 && t.iter().all(|v| v.is_finite()) {
                let mut t = t / norm;
                if let Some(p) = prefer {
                    if t.dot(p) < 0.0 {
                        t = -t;
                    }
                }
                return Ok(t);
            }
        }
    }
    Err(Error::SingularSystem {
        context: "nullspace_tangent",
    })
}

/// Hopf test function: determinant of the bialternate product 2 J (.) I,
/// which vanishes when a pair of eigenvalues sums to zero. A sign change
/// together with a nonreal pair at the zero is a Hopf point.
fn bialternate_det(j: &DMatrix<f64>) -> f64 {
    let n = j.nrows();
    // Pairs (p, q) with p > q index the bialternate matrix.
    let mut pairs = Vec::new();
    for p in 1..n {
        for q in 0..p {
            pairs.push((p, q));
        }
    }
    let m = pairs.len();
    let mut b = DMatrix::zeros(m, m);
    // B[(p,q),(r,s)] = -a_ps if r == q; a_pr if r != p and s == q;
    // a_pp + a_qq if r == p and s == q; a_qs if r == p and s != q;
    // -a_qr if s == p.
    for (row, &(p, q)) in pairs.iter().enumerate() {
        for (col, &(r, s)) in pairs.iter().enumerate() {
            let mut v = 0.0;
            if r == q {
                v = -j[(p, s)];
            } else if r != p && s == q {
                v = j[(p, r)];
            } else if r == p && s == q {
                v = j[(p, p)] + j[(q, q)];
            } else if r == p && s != q {
                v = j[(q, s)];
            } else if s == p {
                v = -j[(q, r)];
            }
            b[(row, col)] = v;
        }
    }
    b.determinant()
}

fn eigenvalues_dyn(m: &DMatrix<f64>) -> Vec<Complex64> {
    m.complex_eigenvalues().iter().copied().collect()
}

#[derive(Debug, Clone, Copy)]
struct TestValues {
    fold: f64,
    hopf: Option<f64>,
    branch: f64,
}

fn test_values<P: ContinuationProblem>(
    problem: &P,
    u: &DVector<f64>,
    lambda: f64,
    tangent: &DVector<f64>,
) -> TestValues {
    let fold = tangent[0];
    let hopf = problem
        .stability_matrix(u, lambda)
        .map(|j| bialternate_det(&j));
    // Branch-point test: det of the square bordered matrix [J_ext; tangent^T].
    let n = problem.dim();
    let j_ext = extended_jacobian(problem, u, lambda);
    let mut m = DMatrix::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n + 1)).copy_from(&j_ext);
    m.row_mut(n).copy_from(&tangent.transpose());
    TestValues {
        fold,
        hopf,
        branch: m.determinant(),
    }
}

/// Pseudo-arclength corrector: Newton on [F; t.(z - z_pred)] = 0.
fn palc_correct<P: ContinuationProblem>(
    problem: &P,
    pred_lambda: f64,
    pred_u: &DVector<f64>,
    tangent: &DVector<f64>,
    settings: &ContinuationSettings,
) -> Option<(f64, DVector<f64>, usize)> {
    let n = problem.dim();
    let mut lambda = pred_lambda;
    let mut u = pred_u.clone();
    for it in 0..settings.max_corrector_iters {
        let r = problem.residual(&u, lambda);
        if !r.iter().all(|v| v.is_finite()) {
            return None;
        }
        // Arclength constraint keeps the correction orthogonal to the tangent.
        let mut diff = DVector::zeros(n + 1);
        diff[0] = lambda - pred_lambda;
        for i in 0..n {
            diff[i + 1] = u[i] - pred_u[i];
        }
        let constraint = tangent.dot(&diff);
        if r.norm() <= settings.corrector_tol && constraint.abs() <= settings.corrector_tol {
            return Some((lambda, u, it));
        }
        let j_ext = extended_jacobian(problem, &u, lambda);
        let mut m = DMatrix::zeros(n + 1, n + 1);
        m.view_mut((0, 0), (n, n + 1)).copy_from(&j_ext);
        m.row_mut(n).copy_from(&tangent.transpose());
        let mut rhs = DVector::zeros(n + 1);
        for i in 0..n {
            rhs[i] = -r[i];
        }
        rhs[n] = -constraint;
        let delta = m.lu().solve(&rhs)?;
        if !delta.iter().all(|v| v.is_finite()) {
            return None;
        }
        lambda += delta[0];
        for i in 0..n {
            u[i] += delta[i + 1];
        }
    }
    // Final check.
    let r = problem.residual(&u, lambda);
    if r.norm() <= settings.corrector_tol {
        Some((lambda, u, settings.max_corrector_iters))
    } else {
        None
    }
}

/// Continue a branch from a converged start point.
///
/// `direction` picks the initial orientation of the tangent's lambda
/// component (+1 / -1); if the tangent has zero lambda component the sign of
/// the first nonzero state component is used instead.
pub fn continue_branch<P: ContinuationProblem>(
    problem: &P,
    start_u: &DVector<f64>,
    start_lambda: f64,
    direction: f64,
    settings: &ContinuationSettings,
) -> Result<Branch> {
    let (u0, _) = newton_correct(
        problem,
        start_u,
        start_lambda,
        settings.corrector_tol,
        settings.max_corrector_iters,
    )?;
    let j_ext = extended_jacobian(problem, &u0, start_lambda);
    let mut tangent = nullspace_tangent(&j_ext, None)?;
    let dir_comp = if tangent[0].abs() > 1e-10 {
        tangent[0]
    } else {
        *tangent
            .iter()
            .skip(1)
            .find(|v| v.abs() > 1e-10)
            .unwrap_or(&1.0)
    };
    if dir_comp * direction < 0.0 {
        tangent = -tangent;
    }
    continue_with_tangent(problem, u0, start_lambda, tangent, settings)
}

/// Continue with an explicitly oriented initial tangent.
pub fn continue_with_tangent<P: ContinuationProblem>(
    problem: &P,
    u0: DVector<f64>,
    lambda0: f64,
    tangent0: DVector<f64>,
    settings: &ContinuationSettings,
) -> Result<Branch> {
    let n = problem.dim();
    let mut branch = Branch::default();
    let mut tests = test_values(problem, &u0, lambda0, &tangent0);
    branch.points.push(BranchPoint {
        u: u0,
        lambda: lambda0,
        tangent: tangent0,
        newton_iterations: 0,
    });

    let mut ds = settings.ds0;
    let mut consecutive_failures = 0usize;
    for step in 0..settings.max_steps {
        let last = branch.points.last().unwrap().clone();
        // Predictor.
        let pred_lambda = last.lambda + ds * last.tangent[0];
        let mut pred_u = last.u.clone();
        for i in 0..n {
            pred_u[i] += ds * last.tangent[i + 1];
        }
        match palc_correct(problem, pred_lambda, &pred_u, &last.tangent, settings) {
            Some((lambda, u, iters)) => {
                consecutive_failures = 0;
                let j_ext = extended_jacobian(problem, &u, lambda);
                let tangent = match nullspace_tangent(&j_ext, Some(&last.tangent)) {
                    Ok(t) => t,
                    Err(_) => last.tangent.clone(),
                };
                let new_tests = test_values(problem, &u, lambda, &tangent);
                let idx = branch.points.len() - 1;
                if settings.detect_special {
                    detect_sign_changes(
                        problem, &branch.points[idx], &tests, &u, lambda, &new_tests, idx,
                        settings, &mut branch.special_points,
                    );
                }
                branch.points.push(BranchPoint {
                    u,
                    lambda,
                    tangent,
                    newton_iterations: iters,
                });
                tests = new_tests;
                if iters <= 3 {
                    ds = (ds * settings.grow).min(settings.ds_max);
                }
                if let Some((lo, hi)) = settings.lambda_range {
                    let l = branch.points.last().unwrap().lambda;
                    if l < lo || l > hi {
                        branch.termination = Termination::ParameterRange;
                        return Ok(branch);
                    }
                }
            }
            None => {
                consecutive_failures += 1;
                ds *= 0.5;
                if ds < settings.ds_min || consecutive_failures > 60 {
                    branch.termination = Termination::StepUnderflow { at_step: step };
                    return Ok(branch);
                }
            }
        }
    }
    branch.termination = Termination::MaxSteps;
    Ok(branch)
}

#[allow(clippy::too_many_arguments)]
fn detect_sign_changes<P: ContinuationProblem>(
    problem: &P,
    prev: &BranchPoint,
    prev_tests: &TestValues,
    u: &DVector<f64>,
    lambda: f64,
    new_tests: &TestValues,
    after_index: usize,
    settings: &ContinuationSettings,
    out: &mut Vec<SpecialPoint>,
) {
    // Branch point: determinant of the bordered system flips.
    let branch_crossed = prev_tests.branch * new_tests.branch < 0.0;
    // Fold: the lambda component of the tangent flips, excluding the
    // branch-point case where the determinant also flips.
    if prev_tests.fold * new_tests.fold < 0.0 && !branch_crossed {
        if let Some(sp) = refine_by_bisection(
            problem,
            prev,
            (u, lambda),
            |p, uu, ll| {
                let j = extended_jacobian(p, uu, ll);
                nullspace_tangent(&j, Some(&prev.tangent)).map(|t| t[0])
            },
            settings,
        ) {
            out.push(SpecialPoint {
                kind: SpecialPointKind::Fold,
                after_index,
                u: sp.0,
                lambda: sp.1,
                bracket: (prev_tests.fold, new_tests.fold),
            });
        }
    }
    if branch_crossed {
        out.push(SpecialPoint {
            kind: SpecialPointKind::BranchPoint,
            after_index,
            u: u.clone(),
            lambda,
            bracket: (prev_tests.branch, new_tests.branch),
        });
    }
    if let (Some(h0), Some(h1)) = (prev_tests.hopf, new_tests.hopf) {
        if h0 * h1 < 0.0 {
            if let Some(sp) = refine_by_bisection(
                problem,
                prev,
                (u, lambda),
                |p, uu, ll| {
                    p.stability_matrix(uu, ll)
                        .map(|j| bialternate_det(&j))
                        .ok_or(Error::SingularSystem {
                            context: "hopf test",
                        })
                },
                settings,
            ) {
                // Require a genuinely nonreal pair at the refined point: a
                // neutral saddle also zeroes the bialternate determinant.
                let is_hopf = problem
                    .stability_matrix(&sp.0, sp.1)
                    .map(|j| {
                        let eig = eigenvalues_dyn(&j);
                        eig.iter().any(|e| e.im.abs() > 1e-8 && e.re.abs() < 1e-6)
                    })
                    .unwrap_or(false);
                if is_hopf {
                    out.push(SpecialPoint {
                        kind: SpecialPointKind::Hopf,
                        after_index,
                        u: sp.0,
                        lambda: sp.1,
                        bracket: (h0, h1),
                    });
                }
            }
        }
    }
}

/// Bisection on the arclength segment between two consecutive branch points,
/// re-correcting onto the solution curve at each trial, until the test
/// function changes sign within an arclength interval of 1e-8 (relative to
/// the segment), with a secant polish.
fn refine_by_bisection<P, T>(
    problem: &P,
    prev: &BranchPoint,
    end: (&DVector<f64>, f64),
    test: T,
    settings: &ContinuationSettings,
) -> Option<(DVector<f64>, f64)>
where
    P: ContinuationProblem,
    T: Fn(&P, &DVector<f64>, f64) -> Result<f64>,
{
    let n = problem.dim();
    let eval_at = |s: f64| -> Option<(DVector<f64>, f64, f64)> {
        let lambda = prev.lambda + s * (end.1 - prev.lambda);
        let mut u = prev.u.clone();
        for i in 0..n {
            u[i] += s * (end.0[i] - prev.u[i]);
        }
        // Correct back onto the curve orthogonally to the secant.
        let mut secant = DVector::zeros(n + 1);
        secant[0] = end.1 - prev.lambda;
        for i in 0..n {
            secant[i + 1] = end.0[i] - prev.u[i];
        }
        let norm = secant.norm();
        if norm == 0.0 {
            return None;
        }
        secant /= norm;
        let (l2, u2, _) = palc_correct(problem, lambda, &u, &secant, settings)?;
        let tv = test(problem, &u2, l2).ok()?;
        Some((u2, l2, tv))
    };

    let (mut a, mut b) = (0.0f64, 1.0f64);
    let mut fa = eval_at(a)?.2;
    let fb = eval_at(b)?.2;
    if fa * fb > 0.0 {
        return None;
    }
    let mut best: Option<(DVector<f64>, f64, f64)> = None;
    for _ in 0..40 {
        if (b - a) < 1e-8 {
            break;
        }
        // Secant proposal clamped into the bracket.
        let mid = 0.5 * (a + b);
        let (u2, l2, fm) = eval_at(mid)?;
        if best.is_none() || fm.abs() < best.as_ref().unwrap().2.abs() {
            best = Some((u2, l2, fm));
        }
        if fa * fm <= 0.0 {
            b = mid;
        } else {
            a = mid;
            fa = fm;
        }
        let _ = fb;
    }
    best.map(|(u, l, _)| (u, l))
}

/// CSV export: one row per point (unknowns, parameter, tag).
pub fn write_branch_csv<W: std::io::Write>(
    branch: &Branch,
    unknown_names: &[&str],
    param_name: &str,
    mut w: W,
) -> Result<()> {
    write!(w, "{}", unknown_names.join(","))?;
    writeln!(w, ",{param_name},tag")?;
    // Special points indexed by insertion position.
    for (i, pt) in branch.points.iter().enumerate() {
        let tags: Vec<String> = branch
            .special_points
            .iter()
            .filter(|sp| sp.after_index == i)
            .map(|sp| sp.kind.to_string())
            .collect();
        for v in pt.u.iter() {
            write!(w, "{v},")?;
        }
        writeln!(w, "{},{}", pt.lambda, tags.join("+"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn newton_scalar_square_root() {
        let f = |u: &DVector<f64>| DVector::from_vec(vec![u[0] * u[0] - 4.0]);
        let j = |u: &DVector<f64>| DMatrix::from_vec(1, 1, vec![2.0 * u[0]]);
        let (u, _) = newton_solve(f, j, &DVector::from_vec(vec![3.0]), 1e-12, 50).unwrap();
        assert!((u[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn newton_quadratic_convergence() {
        // Track the error sequence by hand: e_{k+1} / e_k^2 stays bounded.
        let mut u = 3.0f64;
        let mut errs = Vec::new();
        for _ in 0..6 {
            errs.push((u - 2.0).abs());
            u -= (u * u - 4.0) / (2.0 * u);
        }
        for k in 0..4 {
            if errs[k + 1] > 1e-14 {
                let ratio = errs[k + 1] / (errs[k] * errs[k]);
                assert!(ratio < 1.0, "quadratic ratio {ratio} at step {k}");
            }
        }
    }

    #[test]
    fn newton_nonconvergence_reported() {
        // x^2 + 1 = 0 has no real root.
        let f = |u: &DVector<f64>| DVector::from_vec(vec![u[0] * u[0] + 1.0]);
        let j = |u: &DVector<f64>| DMatrix::from_vec(1, 1, vec![2.0 * u[0]]);
        assert!(newton_solve(f, j, &DVector::from_vec(vec![3.0]), 1e-12, 25).is_err());
    }

    struct Circle;
    impl ContinuationProblem for Circle {
        fn dim(&self) -> usize {
            1
        }
        fn residual(&self, u: &DVector<f64>, lambda: f64) -> DVector<f64> {
            DVector::from_vec(vec![u[0] * u[0] + lambda * lambda - 1.0])
        }
        fn jacobian_u(&self, u: &DVector<f64>, _l: f64) -> DMatrix<f64> {
            DMatrix::from_vec(1, 1, vec![2.0 * u[0]])
        }
        fn jacobian_lambda(&self, _u: &DVector<f64>, l: f64) -> DVector<f64> {
            DVector::from_vec(vec![2.0 * l])
        }
    }

    #[test]
    fn circle_folds_detected_at_unit_lambda() {
        let settings = ContinuationSettings {
            ds0: 0.05,
            ds_max: 0.08,
            max_steps: 400,
            ..Default::default()
        };
        let branch = continue_branch(
            &Circle,
            &DVector::from_vec(vec![1.0]),
            0.0,
            1.0,
            &settings,
        )
        .unwrap();
        let folds: Vec<&SpecialPoint> = branch
            .special_points
            .iter()
            .filter(|sp| sp.kind == SpecialPointKind::Fold)
            .collect();
        assert!(!folds.is_empty(), "no folds found");
        for f in &folds {
            assert!(
                (f.lambda.abs() - 1.0).abs() < 1e-8,
                "fold at lambda = {} not refined to 1e-8",
                f.lambda
            );
        }
        // The branch wraps around the circle: both signs of lambda reached.
        let lambdas: Vec<f64> = branch.points.iter().map(|p| p.lambda).collect();
        assert!(lambdas.iter().cloned().fold(f64::MAX, f64::min) < -0.5);
    }

    #[test]
    fn circle_every_point_satisfies_residual() {
        let settings = ContinuationSettings {
            ds0: 0.05,
            max_steps: 100,
            ..Default::default()
        };
        let branch =
            continue_branch(&Circle, &DVector::from_vec(vec![1.0]), 0.0, 1.0, &settings).unwrap();
        for p in &branch.points {
            assert!(Circle.residual(&p.u, p.lambda).norm() <= settings.corrector_tol * 10.0);
        }
    }

    #[test]
    fn circle_branch_reversal_retraces() {
        let settings = ContinuationSettings {
            ds0: 0.05,
            ds_max: 0.05,
            max_steps: 40,
            ..Default::default()
        };
        let fwd =
            continue_branch(&Circle, &DVector::from_vec(vec![1.0]), 0.0, 1.0, &settings).unwrap();
        let end = fwd.points.last().unwrap();
        let back = continue_with_tangent(
            &Circle,
            end.u.clone(),
            end.lambda,
            -end.tangent.clone(),
            &settings,
        )
        .unwrap();
        // Walking back the same arclength lands near the start.
        let n = fwd.points.len().min(back.points.len()) - 1;
        let fwd_pt = &fwd.points[fwd.points.len() - 1 - n];
        let back_pt = &back.points[n];
        let du = (&fwd_pt.u - &back_pt.u).norm();
        let dl = (fwd_pt.lambda - back_pt.lambda).abs();
        assert!(
            du < 1e-6 && dl < 1e-6,
            "reversal mismatch du = {du:.2e}, dlambda = {dl:.2e}"
        );
    }

    struct Pitchfork;
    impl ContinuationProblem for Pitchfork {
        fn dim(&self) -> usize {
            1
        }
        fn residual(&self, u: &DVector<f64>, lambda: f64) -> DVector<f64> {
            DVector::from_vec(vec![lambda * u[0] - u[0] * u[0] * u[0]])
        }
    }

    #[test]
    fn pitchfork_flags_branch_point() {
        // Continue the trivial branch u = 0 through lambda = 0.
        let settings = ContinuationSettings {
            ds0: 0.05,
            ds_max: 0.05,
            max_steps: 60,
            lambda_range: Some((-1.5, 1.5)),
            ..Default::default()
        };
        let branch = continue_branch(
            &Pitchfork,
            &DVector::from_vec(vec![0.0]),
            -1.0,
            1.0,
            &settings,
        )
        .unwrap();
        let bps: Vec<&SpecialPoint> = branch
            .special_points
            .iter()
            .filter(|sp| sp.kind == SpecialPointKind::BranchPoint)
            .collect();
        assert!(
            !bps.is_empty(),
            "pitchfork singularity not flagged; specials: {:?}",
            branch.special_points
        );
        assert!(bps[0].lambda.abs() < 0.1);
    }

    struct HopfNormalForm;
    impl ContinuationProblem for HopfNormalForm {
        fn dim(&self) -> usize {
            2
        }
        // x' = l x - y - x (x^2+y^2), y' = x + l y - y (x^2+y^2);
        // equilibrium branch u = 0 with Hopf at l = 0.
        fn residual(&self, u: &DVector<f64>, l: f64) -> DVector<f64> {
            let r2 = u[0] * u[0] + u[1] * u[1];
            DVector::from_vec(vec![
                l * u[0] - u[1] - u[0] * r2,
                u[0] + l * u[1] - u[1] * r2,
            ])
        }
        fn stability_matrix(&self, u: &DVector<f64>, l: f64) -> Option<DMatrix<f64>> {
            let (x, y) = (u[0], u[1]);
            let r2 = x * x + y * y;
            Some(DMatrix::from_row_slice(
                2,
                2,
                &[
                    l - r2 - 2.0 * x * x,
                    -1.0 - 2.0 * x * y,
                    1.0 - 2.0 * x * y,
                    l - r2 - 2.0 * y * y,
                ],
            ))
        }
    }

    #[test]
    fn hopf_normal_form_detected_at_zero() {
        let settings = ContinuationSettings {
            ds0: 0.04,
            ds_max: 0.08,
            max_steps: 60,
            lambda_range: Some((-1.0, 1.0)),
            ..Default::default()
        };
        let branch = continue_branch(
            &HopfNormalForm,
            &DVector::from_vec(vec![0.0, 0.0]),
            -0.5,
            1.0,
            &settings,
        )
        .unwrap();
        let hopfs: Vec<&SpecialPoint> = branch
            .special_points
            .iter()
            .filter(|sp| sp.kind == SpecialPointKind::Hopf)
            .collect();
        assert_eq!(hopfs.len(), 1, "specials: {:?}", branch.special_points);
        assert!(
            hopfs[0].lambda.abs() < 1e-8,
            "Hopf at {} not refined",
            hopfs[0].lambda
        );
    }

    #[test]
    fn bialternate_of_2x2_is_trace() {
        let j = DMatrix::from_row_slice(2, 2, &[3.0, -1.0, 2.5, -7.0]);
        assert_relative_eq!(bialternate_det(&j), -4.0, epsilon = 1e-12);
    }

    #[test]
    fn bialternate_3x3_zero_at_pure_imaginary_pair() {
        // Eigenvalues i, -i, -3: a pair sums to zero.
        let j = DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, -3.0]);
        assert!(bialternate_det(&j).abs() < 1e-12);
        // Shifted: eigenvalues 0.5 +- i, -3: nonzero.
        let j2 = DMatrix::from_row_slice(3, 3, &[0.5, -1.0, 0.0, 1.0, 0.5, 0.0, 0.0, 0.0, -3.0]);
        assert!(bialternate_det(&j2).abs() > 1e-6);
    }
}
