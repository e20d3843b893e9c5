//! The Hindmarsh-Rose vector field, its fast subsystem, the critical
//! manifold, and equilibrium/eigenstructure computations.
//!
//! Everything here is a pure function of its inputs and safe to call from
//! any number of threads.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the Hindmarsh-Rose model.
///
/// `b` (excitability) and `I` (input current) span the active bifurcation
/// plane; `s`, `x_rest` and `mu` default to the standard values s = 4,
/// x_rest = -1.6, mu = 0.01.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    pub b: f64,
    #[serde(rename = "I")]
    pub i: f64,
    pub s: f64,
    pub x_rest: f64,
    pub mu: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            b: 2.6,
            i: 2.0,
            s: 4.0,
            x_rest: -1.6,
            mu: 0.01,
        }
    }
}

impl ModelParams {
    pub fn new(b: f64, i: f64) -> Self {
        ModelParams {
            b,
            i,
            ..Default::default()
        }
    }

    pub fn with_mu(b: f64, i: f64, mu: f64) -> Self {
        ModelParams {
            b,
            i,
            mu,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.b, self.i, self.s, self.x_rest, self.mu];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite model parameter"));
        }
        if self.mu < 0.0 {
            return Err(Error::domain(format!("mu must be >= 0, got {}", self.mu)));
        }
        if self.s <= 0.0 {
            return Err(Error::domain(format!("s must be > 0, got {}", self.s)));
        }
        Ok(())
    }
}

/// A point in the (x, y, z) phase space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl State {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        State { x, y, z }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        State::new(v.x, v.y, v.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl From<[f64; 3]> for State {
    fn from(a: [f64; 3]) -> Self {
        State::new(a[0], a[1], a[2])
    }
}

/// Right-hand side of the full three-dimensional model:
///
/// x' = y - x^3 + b x^2 + I - z
/// y' = 1 - 5 x^2 - y
/// z' = mu (s (x - x_rest) - z)
pub fn hr_rhs(state: &Vector3<f64>, p: &ModelParams) -> Vector3<f64> {
    let (x, y, z) = (state.x, state.y, state.z);
    Vector3::new(
        y - x * x * x + p.b * x * x + p.i - z,
        1.0 - 5.0 * x * x - y,
        p.mu * (p.s * (x - p.x_rest) - z),
    )
}

/// Analytic Jacobian of `hr_rhs`.
pub fn hr_jacobian(state: &Vector3<f64>, p: &ModelParams) -> Matrix3<f64> {
    let x = state.x;
    Matrix3::new(
        -3.0 * x * x + 2.0 * p.b * x,
        1.0,
        -1.0,
        -10.0 * x,
        -1.0,
        0.0,
        p.mu * p.s,
        0.0,
        -p.mu,
    )
}

/// Derivatives of `hr_rhs` with respect to the bifurcation parameters b and I.
pub fn hr_rhs_param_derivs(state: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let x = state.x;
    (Vector3::new(x * x, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0))
}

/// Fast subsystem with z frozen as a parameter:
///
/// x' = y - x^3 + b x^2 + I - z
/// y' = 1 - 5 x^2 - y
pub fn fast_rhs(xy: &Vector2<f64>, z: f64, p: &ModelParams) -> Vector2<f64> {
    let (x, y) = (xy.x, xy.y);
    Vector2::new(y - x * x * x + p.b * x * x + p.i - z, 1.0 - 5.0 * x * x - y)
}

/// Jacobian of the fast subsystem with respect to (x, y).
pub fn fast_jacobian(xy: &Vector2<f64>, p: &ModelParams) -> Matrix2<f64> {
    let x = xy.x;
    Matrix2::new(-3.0 * x * x + 2.0 * p.b * x, 1.0, -10.0 * x, -1.0)
}

/// z-value of the critical manifold at a given x: the set of fast-subsystem
/// equilibria eliminates y = 1 - 5 x^2 and leaves
/// z = 1 + I + (b - 5) x^2 - x^3.
pub fn critical_manifold_z(x: f64, p: &ModelParams) -> f64 {
    1.0 + p.i + (p.b - 5.0) * x * x - x * x * x
}

/// The y-coordinate on the critical manifold.
pub fn critical_manifold_y(x: f64) -> f64 {
    1.0 - 5.0 * x * x
}

/// Fold points of the critical manifold, where dz/dx = 2(b-5)x - 3x^2 = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ManifoldFolds {
    /// The generic case b != 5: folds at x = 0 and x = 2(b-5)/3,
    /// ordered (upper fold in z first for b < 5).
    Pair { first: (f64, f64), second: (f64, f64) },
    /// Degenerate case b = 5: the two folds collide at x = 0.
    Degenerate { at: (f64, f64) },
}

pub fn critical_manifold_folds(p: &ModelParams) -> ManifoldFolds {
    let x1 = 0.0;
    let x2 = 2.0 * (p.b - 5.0) / 3.0;
    if x2 == 0.0 {
        return ManifoldFolds::Degenerate {
            at: (0.0, critical_manifold_z(0.0, p)),
        };
    }
    ManifoldFolds::Pair {
        first: (x1, critical_manifold_z(x1, p)),
        second: (x2, critical_manifold_z(x2, p)),
    }
}

/// Saddle classification of an equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EquilibriumKind {
    /// All eigenvalues have negative real part.
    Stable,
    /// Real eigenvalues lambda_uu > lambda_u > 0 > lambda_s.
    RealSaddle2U,
    /// A complex pair on one side of the imaginary axis, a real eigenvalue
    /// on the other.
    SaddleFocus,
    Other,
}

/// An equilibrium together with its eigenstructure.
///
/// Eigenvalues are sorted by descending real part (ties broken by ascending
/// imaginary-part magnitude, then descending imaginary part), so that for a
/// real saddle with a two-dimensional unstable manifold the order is
/// (lambda_uu, lambda_u, lambda_s).
#[derive(Debug, Clone)]
pub struct EquilibriumRecord {
    pub point: State,
    pub eigenvalues: [Complex64; 3],
    /// Right eigenvectors matching `eigenvalues`, unit length; for real
    /// eigenvalues the sign is fixed so the largest-magnitude component
    /// is positive.
    pub eigenvectors: [nalgebra::Vector3<Complex64>; 3],
    pub kind: EquilibriumKind,
    /// -lambda_u / lambda_s (real parts).
    pub delta1: f64,
    /// -lambda_uu / lambda_s (real parts).
    pub delta2: f64,
    /// lambda_u + lambda_s (real parts): zero at a resonant homoclinic.
    pub saddle_quantity: f64,
}

impl EquilibriumRecord {
    /// Real right eigenvector for eigenvalue index `k`.
    /// Only meaningful when that eigenvalue is real.
    pub fn real_eigenvector(&self, k: usize) -> Vector3<f64> {
        self.eigenvectors[k].map(|c| c.re)
    }
}

/// Roots of c3 x^3 + c2 x^2 + c1 x + c0 via the companion matrix,
/// one Newton polish per root.
pub fn cubic_roots(c3: f64, c2: f64, c1: f64, c0: f64) -> Vec<Complex64> {
    assert!(c3 != 0.0, "leading cubic coefficient must be nonzero");
    let (a, b, c) = (c2 / c3, c1 / c3, c0 / c3);
    // Companion of x^3 + a x^2 + b x + c.
    let companion = Matrix3::new(0.0, 0.0, -c, 1.0, 0.0, -b, 0.0, 1.0, -a);
    let eig = companion.complex_eigenvalues();
    let poly = |x: Complex64| ((x + a) * x + b) * x + c;
    let dpoly = |x: Complex64| (3.0 * x + 2.0 * a) * x + b;
    eig.iter()
        .map(|&z| {
            let mut x = z;
            for _ in 0..3 {
                let d = dpoly(x);
                if d.norm() > 1e-300 {
                    let step = poly(x) / d;
                    if step.norm() < 1.0 {
                        x -= step;
                    }
                }
            }
            x
        })
        .collect()
}

/// Eigenvalues of a real 3x3 matrix via its characteristic cubic.
pub fn eigenvalues_3x3(m: &Matrix3<f64>) -> [Complex64; 3] {
    let tr = m.trace();
    // Sum of principal 2x2 minors.
    let m2 = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]
        + m[(0, 0)] * m[(2, 2)]
        - m[(0, 2)] * m[(2, 0)]
        + m[(1, 1)] * m[(2, 2)]
        - m[(1, 2)] * m[(2, 1)];
    let det = m.determinant();
    // det(lambda I - M) = lambda^3 - tr lambda^2 + m2 lambda - det
    let mut roots = cubic_roots(1.0, -tr, m2, -det);
    // A real matrix has eigenvalues in conjugate pairs; clean up tiny
    // imaginary parts left by the QR iteration.
    let scale = roots.iter().map(|r| r.norm()).fold(1.0f64, f64::max);
    for r in roots.iter_mut() {
        if r.im.abs() < 1e-12 * scale {
            r.im = 0.0;
        }
    }
    sort_eigenvalues(&mut roots);
    [roots[0], roots[1], roots[2]]
}

/// Descending real part; ties by ascending |Im|, then descending Im.
pub fn sort_eigenvalues(vals: &mut [Complex64]) {
    vals.sort_by(|a, b| {
        b.re.partial_cmp(&a.re)
            .unwrap()
            .then(a.im.abs().partial_cmp(&b.im.abs()).unwrap())
            .then(b.im.partial_cmp(&a.im).unwrap())
    });
}

/// Unit-norm eigenvector of `m` for eigenvalue `lambda` via the cross
/// product of two rows of (M - lambda I), with an inverse-iteration polish.
fn eigenvector_3x3(m: &Matrix3<f64>, lambda: Complex64) -> nalgebra::Vector3<Complex64> {
    let to_c = |x: f64| Complex64::new(x, 0.0);
    let a = m.map(to_c) - Matrix3::<f64>::identity().map(to_c) * lambda;
    let rows: [nalgebra::RowVector3<Complex64>; 3] = [a.row(0).into(), a.row(1).into(), a.row(2).into()];
    let cross = |u: &nalgebra::RowVector3<Complex64>, v: &nalgebra::RowVector3<Complex64>| {
        nalgebra::Vector3::new(
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        )
    };
    // The null vector is orthogonal to every row; the cross product of the
    // two most independent rows gives it directly for a rank-2 matrix.
    let candidates = [
        cross(&rows[0], &rows[1]),
        cross(&rows[0], &rows[2]),
        cross(&rows[1], &rows[2]),
    ];
    let mut v = candidates
        .iter()
        .max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap())
        .unwrap()
        .clone();
    if v.norm() < 1e-14 {
        // Rank < 2 (repeated eigenvalue): fall back to the least-residual
        // coordinate direction.
        v = nalgebra::Vector3::new(Complex64::new(1.0, 0.0), Complex64::ZERO, Complex64::ZERO);
    }
    v /= Complex64::from(v.norm());
    // One inverse-iteration step against a slightly shifted matrix tightens
    // the residual when the cross product lost digits.
    let shifted = a + Matrix3::identity().map(|x: f64| Complex64::from(x * 1e-13));
    if let Some(w) = shifted.lu().solve(&v) {
        let n = w.norm();
        if n.is_finite() && n > 0.0 {
            v = w / Complex64::from(n);
        }
    }
    normalize_eigenvector_sign(&mut v);
    v
}

/// Fix the overall phase: largest-magnitude component is positive real.
fn normalize_eigenvector_sign(v: &mut nalgebra::Vector3<Complex64>) {
    let mut k = 0;
    for i in 1..3 {
        if v[i].norm() > v[k].norm() {
            k = i;
        }
    }
    let pivot = v[k];
    if pivot.norm() > 0.0 {
        let phase = pivot / Complex64::from(pivot.norm());
        for i in 0..3 {
            v[i] /= phase;
        }
    }
}

/// Build an `EquilibriumRecord` at a given point (assumed to satisfy
/// hr_rhs = 0 to high accuracy).
pub fn equilibrium_record(point: State, p: &ModelParams) -> EquilibriumRecord {
    let jac = hr_jacobian(&point.to_vector(), p);
    let eigenvalues = eigenvalues_3x3(&jac);
    let eigenvectors = [
        eigenvector_3x3(&jac, eigenvalues[0]),
        eigenvector_3x3(&jac, eigenvalues[1]),
        eigenvector_3x3(&jac, eigenvalues[2]),
    ];
    let (kind, _belyakov, _resonance) = classify_eigenvalues(&eigenvalues);
    let delta1 = -eigenvalues[1].re / eigenvalues[2].re;
    let delta2 = -eigenvalues[0].re / eigenvalues[2].re;
    let saddle_quantity = eigenvalues[1].re + eigenvalues[2].re;
    EquilibriumRecord {
        point,
        eigenvalues,
        eigenvectors,
        kind,
        delta1,
        delta2,
        saddle_quantity,
    }
}

/// All equilibria of the full model. Substituting the y- and z-nullclines
/// into the x-nullcline gives the cubic
/// 1 + I + (b-5) x^2 - x^3 - s (x - x_rest) = 0,
/// which has one or three real roots.
pub fn full_equilibria(p: &ModelParams) -> Vec<EquilibriumRecord> {
    // -x^3 + (b-5) x^2 - s x + (1 + I + s x_rest) = 0
    let roots = cubic_roots(-1.0, p.b - 5.0, -p.s, 1.0 + p.i + p.s * p.x_rest);
    let scale = roots.iter().map(|r| r.norm()).fold(1.0f64, f64::max);
    let mut out = Vec::new();
    for r in roots {
        if r.im.abs() > 1e-9 * scale {
            continue;
        }
        let mut x = r.re;
        // Newton polish on the scalar cubic until the full residual is tiny.
        for _ in 0..50 {
            let f = 1.0 + p.i + (p.b - 5.0) * x * x - x * x * x - p.s * (x - p.x_rest);
            let df = 2.0 * (p.b - 5.0) * x - 3.0 * x * x - p.s;
            if df.abs() < 1e-300 {
                break;
            }
            let step = f / df;
            x -= step;
            if step.abs() < 1e-16 * (1.0 + x.abs()) {
                break;
            }
        }
        let y = 1.0 - 5.0 * x * x;
        let z = p.s * (x - p.x_rest);
        let point = State::new(x, y, z);
        if hr_rhs(&point.to_vector(), p).norm() > 1e-12 {
            continue;
        }
        // Deduplicate near-identical roots (repeated-root case).
        if out
            .iter()
            .any(|e: &EquilibriumRecord| (e.point.x - x).abs() < 1e-9 * (1.0 + x.abs()))
        {
            continue;
        }
        out.push(equilibrium_record(point, p));
    }
    out.sort_by(|a, b| a.point.x.partial_cmp(&b.point.x).unwrap());
    out
}

/// Classification plus the codimension-two scalar test functions.
///
/// `belyakov` is the (real part of the) squared difference of the leading
/// pair: positive for distinct real leading eigenvalues, negative for a
/// complex pair, zero at the codimension-two boundary.
/// `resonance` is lambda_u + lambda_s.
pub fn classify_eigenvalues(eigenvalues: &[Complex64; 3]) -> (EquilibriumKind, f64, f64) {
    let [l1, l2, l3] = *eigenvalues;
    let all_real = eigenvalues.iter().all(|l| l.im == 0.0);
    let complex_pair = eigenvalues.iter().filter(|l| l.im != 0.0).count() == 2;

    let kind = if eigenvalues.iter().all(|l| l.re < 0.0) {
        EquilibriumKind::Stable
    } else if all_real && l1.re > l2.re && l2.re > 0.0 && l3.re < 0.0 {
        EquilibriumKind::RealSaddle2U
    } else if complex_pair {
        let real = eigenvalues.iter().find(|l| l.im == 0.0).unwrap();
        let pair = eigenvalues.iter().find(|l| l.im != 0.0).unwrap();
        if real.re * pair.re < 0.0 {
            EquilibriumKind::SaddleFocus
        } else if real.re < 0.0 && pair.re < 0.0 {
            EquilibriumKind::Stable
        } else {
            EquilibriumKind::Other
        }
    } else {
        EquilibriumKind::Other
    };

    // Leading pair: the two eigenvalues closest to each other among the
    // sorted order, i.e. the pair that can collide. With sorting by
    // descending real part, the unstable pair is (l1, l2).
    let diff = l1 - l2;
    let belyakov = (diff * diff).re;
    let resonance = l2.re + l3.re;
    (kind, belyakov, resonance)
}

/// Classify an existing record (re-deriving the test scalars).
pub fn classify_equilibrium(eq: &EquilibriumRecord) -> (EquilibriumKind, f64, f64) {
    classify_eigenvalues(&eq.eigenvalues)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params_fig3() -> ModelParams {
        ModelParams::new(2.6, 2.0)
    }

    #[test]
    fn rhs_at_origin() {
        let p = params_fig3();
        let f = hr_rhs(&Vector3::zeros(), &p);
        assert_relative_eq!(f.x, 2.0);
        assert_relative_eq!(f.y, 1.0);
        assert_relative_eq!(f.z, 0.064);
    }

    #[test]
    fn rhs_direct_substitution() {
        let p = ModelParams {
            b: 0.0,
            i: 0.0,
            mu: 0.0,
            ..Default::default()
        };
        let f = hr_rhs(&Vector3::new(1.0, 1.0, 1.0), &p);
        assert_relative_eq!(f.x, -1.0);
        assert_relative_eq!(f.y, -5.0);
        assert_relative_eq!(f.z, 0.0);
    }

    #[test]
    fn critical_manifold_is_equilibria_of_frozen_system() {
        // With mu = 0, any point (x, 1 - 5x^2, z_crit(x)) is an equilibrium.
        let mut p = params_fig3();
        p.mu = 0.0;
        for &x in &[-1.6, -0.7, 0.0, 0.4, 1.3] {
            let st = Vector3::new(x, critical_manifold_y(x), critical_manifold_z(x, &p));
            assert!(hr_rhs(&st, &p).norm() < 1e-13, "x = {x}");
        }
    }

    #[test]
    fn jacobian_at_origin() {
        let p = params_fig3();
        let j = hr_jacobian(&Vector3::zeros(), &p);
        let expect = Matrix3::new(0.0, 1.0, -1.0, 0.0, -1.0, 0.0, p.mu * p.s, 0.0, -p.mu);
        assert!((j - expect).norm() < 1e-15);
    }

    #[test]
    fn jacobian_entry_trivial() {
        let p = ModelParams::new(3.0, 0.0);
        let j = hr_jacobian(&Vector3::new(1.0, 0.0, 0.0), &p);
        assert_relative_eq!(j[(0, 0)], 3.0); // -3 + 6
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = params_fig3();
        let st = Vector3::new(0.3, -0.2, 1.5);
        let j = hr_jacobian(&st, &p);
        let fd = fd_jacobian(&st, &p);
        for r in 0..3 {
            for c in 0..3 {
                let scale = 1.0 + j[(r, c)].abs();
                assert!(
                    (j[(r, c)] - fd[(r, c)]).abs() / scale < 1e-6,
                    "entry ({r},{c}): {} vs {}",
                    j[(r, c)],
                    fd[(r, c)]
                );
            }
        }
    }

    fn fd_jacobian(st: &Vector3<f64>, p: &ModelParams) -> Matrix3<f64> {
        let h = 1e-6;
        let mut m = Matrix3::zeros();
        for c in 0..3 {
            let mut sp = *st;
            let mut sm = *st;
            sp[c] += h;
            sm[c] -= h;
            let col = (hr_rhs(&sp, p) - hr_rhs(&sm, p)) / (2.0 * h);
            m.set_column(c, &col);
        }
        m
    }

    #[test]
    fn jacobian_fd_property_randomised() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..1000 {
            let p = ModelParams {
                b: rng.gen_range(0.0..5.0),
                i: rng.gen_range(-5.0..5.0),
                s: rng.gen_range(0.5..6.0),
                x_rest: rng.gen_range(-2.0..0.0),
                mu: rng.gen_range(0.0..0.1),
            };
            let st = Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-10.0..2.0),
                rng.gen_range(-1.0..5.0),
            );
            let j = hr_jacobian(&st, &p);
            let fd = fd_jacobian(&st, &p);
            let denom = 1.0 + j.norm();
            assert!(
                (j - fd).norm() / denom < 1e-6,
                "FD mismatch at {st:?} {p:?}"
            );
        }
    }

    #[test]
    fn fast_rhs_substitutions() {
        let p = params_fig3();
        let f = fast_rhs(&Vector2::zeros(), p.i, &p);
        assert_relative_eq!(f.x, 0.0);
        assert_relative_eq!(f.y, 1.0);

        let p2 = ModelParams::new(5.0, 0.0);
        let f2 = fast_rhs(&Vector2::new(1.0, -4.0), 0.0, &p2);
        assert!(f2.norm() < 1e-15);
    }

    #[test]
    fn fast_equilibrium_nullcline_algebra() {
        // An equilibrium at x* has z = 1 + I + (b-5)x*^2 - x*^3, y* = 1 - 5x*^2.
        let p = params_fig3();
        for &x in &[-1.2, -0.3, 0.8] {
            let y = critical_manifold_y(x);
            let z = critical_manifold_z(x, &p);
            assert!(fast_rhs(&Vector2::new(x, y), z, &p).norm() < 1e-13);
        }
    }

    #[test]
    fn manifold_z_values() {
        let p = params_fig3();
        assert_relative_eq!(critical_manifold_z(0.0, &p), 1.0 + p.i);
        assert_relative_eq!(critical_manifold_z(-1.6, &p), 0.952, epsilon = 1e-12);
    }

    #[test]
    fn manifold_b_dependence_through_quadratic_term_only() {
        let x = 0.73;
        let p1 = ModelParams::new(2.0, 1.5);
        let p2 = ModelParams::new(4.0, 1.5);
        let diff = critical_manifold_z(x, &p2) - critical_manifold_z(x, &p1);
        assert_relative_eq!(diff, (p2.b - p1.b) * x * x, epsilon = 1e-14);
    }

    #[test]
    fn folds_analytic() {
        let p = params_fig3();
        match critical_manifold_folds(&p) {
            ManifoldFolds::Pair { first, second } => {
                assert_relative_eq!(first.0, 0.0);
                assert_relative_eq!(first.1, 3.0);
                assert_relative_eq!(second.0, -1.6, epsilon = 1e-14);
                assert_relative_eq!(second.1, 0.952, epsilon = 1e-12);
                // dz/dx = 0 at both.
                for x in [first.0, second.0] {
                    let dz = 2.0 * (p.b - 5.0) * x - 3.0 * x * x;
                    assert!(dz.abs() <= 1e-12);
                }
            }
            _ => panic!("expected two folds"),
        }
    }

    #[test]
    fn folds_degenerate_at_b5() {
        let p = ModelParams::new(5.0, 2.0);
        assert!(matches!(
            critical_manifold_folds(&p),
            ManifoldFolds::Degenerate { .. }
        ));
    }

    #[test]
    fn folds_independent_of_mu_and_s() {
        let mut p = params_fig3();
        let f1 = critical_manifold_folds(&p);
        p.mu = 0.2;
        p.s = 1.0;
        let f2 = critical_manifold_folds(&p);
        assert_eq!(f1, f2);
    }

    #[test]
    fn single_equilibrium_fig3() {
        let p = params_fig3();
        let eqs = full_equilibria(&p);
        assert_eq!(eqs.len(), 1);
        // Bisection oracle: root of x^3 + 2.4 x^2 + 4 x + 3.4 = 0.
        let cubic = |x: f64| x * x * x + 2.4 * x * x + 4.0 * x + 3.4;
        let (mut lo, mut hi) = (-1.4, -1.2);
        assert!(cubic(lo) < 0.0 && cubic(hi) > 0.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if cubic(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert!((eqs[0].point.x - oracle).abs() < 1e-10);
        assert!((eqs[0].point.x - (-1.31)).abs() < 0.02);
    }

    #[test]
    fn equilibria_residual_and_eigenpairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let p = ModelParams {
                b: rng.gen_range(1.0..4.0),
                i: rng.gen_range(-3.0..5.0),
                ..Default::default()
            };
            let eqs = full_equilibria(&p);
            assert!(!eqs.is_empty());
            for eq in &eqs {
                let res = hr_rhs(&eq.point.to_vector(), &p).norm();
                assert!(res <= 1e-12, "residual {res:.2e} at {:?}", p);
                let j = hr_jacobian(&eq.point.to_vector(), &p).map(Complex64::from);
                for k in 0..3 {
                    let v = eq.eigenvectors[k];
                    let r = (j * v - v * eq.eigenvalues[k]).norm();
                    assert!(r <= 1e-10 * v.norm(), "eigenresidual {r:.2e}");
                }
            }
        }
    }

    #[test]
    fn critical_point_saddle_is_real_2u() {
        // The saddle at the critical parameter values has a two-dimensional
        // unstable manifold with real eigenvalues.
        let p = ModelParams::new(2.9427488761, 2.7111448924);
        let eqs = full_equilibria(&p);
        assert_eq!(eqs.len(), 1);
        let eq = &eqs[0];
        assert_eq!(eq.kind, EquilibriumKind::RealSaddle2U);
        let [l1, l2, l3] = eq.eigenvalues;
        assert!(l1.re > l2.re && l2.re > 0.0 && l3.re < 0.0);
        assert!(eq.delta1 > 0.0 && eq.delta2 > 0.0);
        assert!(eq.delta2 > eq.delta1);
    }

    #[test]
    fn classify_examples() {
        let mk = |a: Complex64, b: Complex64, c: Complex64| {
            let mut v = vec![a, b, c];
            sort_eigenvalues(&mut v);
            [v[0], v[1], v[2]]
        };
        let (kind, bel, res) = classify_eigenvalues(&mk(
            Complex64::new(2.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(-3.0, 0.0),
        ));
        assert_eq!(kind, EquilibriumKind::RealSaddle2U);
        assert!(bel > 0.0);
        assert_relative_eq!(res, -2.0);

        let (kind, bel, _) = classify_eigenvalues(&mk(
            Complex64::new(1.0, 2.0),
            Complex64::new(1.0, -2.0),
            Complex64::new(-3.0, 0.0),
        ));
        assert_eq!(kind, EquilibriumKind::SaddleFocus);
        assert!(bel < 0.0);

        let (_, bel, _) = classify_eigenvalues(&mk(
            Complex64::new(1.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(-3.0, 0.0),
        ));
        assert_relative_eq!(bel, 0.0);
    }

    #[test]
    fn cubic_roots_known() {
        // (x-1)(x-2)(x-3) = x^3 - 6x^2 + 11x - 6
        let mut roots: Vec<f64> = cubic_roots(1.0, -6.0, 11.0, -6.0)
            .into_iter()
            .map(|r| r.re)
            .collect();
        roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_relative_eq!(roots[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(roots[1], 2.0, epsilon = 1e-12);
        assert_relative_eq!(roots[2], 3.0, epsilon = 1e-12);
    }
}
