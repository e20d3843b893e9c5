//! Piecewise-polynomial collocation on [0, 1] at degree-4 Gauss-Legendre
//! nodes, with per-interval condensation of the linearised systems.
//!
//! Each interval carries a degree-4 polynomial through five equally spaced
//! representation points (both endpoints shared with the neighbours). The
//! collocation equations at the four Gauss points are eliminated against the
//! three interior representation points, leaving a block-bidiagonal system
//! in the mesh values plus dense rows for boundary/integral conditions and
//! dense columns for the global scalars (time scale, parameters).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Collocation degree (Gauss points per interval).
pub const DEGREE: usize = 4;

/// 4-point Gauss-Legendre nodes on (0, 1).
pub const GAUSS_NODES: [f64; DEGREE] = [
    0.069431844202973714,
    0.330009478207571868,
    0.669990521792428132,
    0.930568155797026286,
];

/// A first-order ODE system u' = F(u, q) on the scaled interval [0, 1].
///
/// `q` are global scalars; by convention q[0] is the time scale (period or
/// transit time) so that F(u, q) = q[0] * f(u, parameters(q)).
pub trait BvpSystem {
    fn dim(&self) -> usize;
    fn n_globals(&self) -> usize;
    /// Right-hand side at scaled time s (autonomous systems ignore s; the
    /// adjoint variational system reads its coefficients from s).
    fn rhs(&self, s: f64, u: &DVector<f64>, q: &DVector<f64>) -> DVector<f64>;
    /// dF/du, dim x dim.
    fn jac_u(&self, s: f64, u: &DVector<f64>, q: &DVector<f64>) -> DMatrix<f64>;
    /// dF/dq, dim x n_globals; default finite differences.
    fn jac_q(&self, s: f64, u: &DVector<f64>, q: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let g = self.n_globals();
        let mut m = DMatrix::zeros(n, g);
        for k in 0..g {
            let h = 1e-7 * (1.0 + q[k].abs());
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += h;
            qm[k] -= h;
            let col = (self.rhs(s, u, &qp) - self.rhs(s, u, &qm)) / (2.0 * h);
            m.set_column(k, &col);
        }
        m
    }
}

/// Boundary and integral conditions closing a BVP.
pub trait BvpConditions<S: BvpSystem> {
    fn count(&self) -> usize;
    fn eval(&self, system: &S, sol: &BvpSolution) -> DVector<f64>;

    /// Rows of the condition Jacobian over (mesh values, q), by finite
    /// differences on (u(0), u(1), q) unless overridden. Conditions coupling
    /// interior mesh values must override.
    fn jacobian(&self, system: &S, sol: &BvpSolution) -> DMatrix<f64> {
        let n = sol.n;
        let n_mesh = (sol.n_intervals + 1) * n;
        let g = sol.q.len();
        let c = self.count();
        let mut rows = DMatrix::zeros(c, n_mesh + g);
        let base = self.eval(system, sol);
        debug_assert_eq!(base.len(), c);
        // u(0) block.
        for k in 0..n {
            let h = 1e-7 * (1.0 + sol.mesh[k].abs());
            let mut s2 = sol.clone();
            s2.mesh[k] += h;
            let fp = self.eval(system, &s2);
            s2.mesh[k] -= 2.0 * h;
            let fm = self.eval(system, &s2);
            for r in 0..c {
                rows[(r, k)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        // u(1) block.
        for k in 0..n {
            let idx = n_mesh - n + k;
            let h = 1e-7 * (1.0 + sol.mesh[idx].abs());
            let mut s2 = sol.clone();
            s2.mesh[idx] += h;
            let fp = self.eval(system, &s2);
            s2.mesh[idx] -= 2.0 * h;
            let fm = self.eval(system, &s2);
            for r in 0..c {
                rows[(r, idx)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        // q block.
        for k in 0..g {
            let h = 1e-7 * (1.0 + sol.q[k].abs());
            let mut s2 = sol.clone();
            s2.q[k] += h;
            let fp = self.eval(system, &s2);
            s2.q[k] -= 2.0 * h;
            let fm = self.eval(system, &s2);
            for r in 0..c {
                rows[(r, n_mesh + k)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        rows
    }
}

/// Discrete BVP solution: mesh values, interior representation values and
/// the global scalars.
#[derive(Debug, Clone)]
pub struct BvpSolution {
    pub n: usize,
    pub n_intervals: usize,
    /// Breakpoints s_0 = 0 < ... < s_N = 1.
    pub breaks: Vec<f64>,
    /// Mesh-point values, (N+1) * n.
    pub mesh: DVector<f64>,
    /// Interior representation values, N * (DEGREE-1) * n.
    pub interior: DVector<f64>,
    /// Global scalars.
    pub q: DVector<f64>,
}

impl BvpSolution {
    /// Value at mesh point j.
    pub fn mesh_point(&self, j: usize) -> DVector<f64> {
        self.mesh.rows(j * self.n, self.n).into()
    }

    pub fn u0(&self) -> DVector<f64> {
        self.mesh_point(0)
    }

    pub fn u1(&self) -> DVector<f64> {
        self.mesh_point(self.n_intervals)
    }

    /// Local representation values of interval j: 5 stacked points.
    fn local_points(&self, j: usize) -> [DVector<f64>; DEGREE + 1] {
        let n = self.n;
        let ni = DEGREE - 1;
        let int_of = |k: usize| -> DVector<f64> {
            self.interior.rows((j * ni + k) * n, n).into()
        };
        [
            self.mesh_point(j),
            int_of(0),
            int_of(1),
            int_of(2),
            self.mesh_point(j + 1),
        ]
    }

    /// Evaluate the collocation polynomial at s in [0, 1].
    pub fn eval(&self, s: f64) -> DVector<f64> {
        let j = interval_of(&self.breaks, s);
        let h = self.breaks[j + 1] - self.breaks[j];
        let sigma = ((s - self.breaks[j]) / h).clamp(0.0, 1.0);
        let pts = self.local_points(j);
        let w = lagrange_weights(sigma);
        let mut out = DVector::zeros(self.n);
        for (k, p) in pts.iter().enumerate() {
            out += p * w[k];
        }
        out
    }

    /// Derivative du/ds at s.
    pub fn eval_deriv(&self, s: f64) -> DVector<f64> {
        let j = interval_of(&self.breaks, s);
        let h = self.breaks[j + 1] - self.breaks[j];
        let sigma = ((s - self.breaks[j]) / h).clamp(0.0, 1.0);
        let pts = self.local_points(j);
        let w = lagrange_deriv_weights(sigma);
        let mut out = DVector::zeros(self.n);
        for (k, p) in pts.iter().enumerate() {
            out += p * (w[k] / h);
        }
        out
    }

    /// Sample the profile at `count` equidistant s values.
    pub fn sample(&self, count: usize) -> Vec<(f64, DVector<f64>)> {
        (0..count)
            .map(|i| {
                let s = i as f64 / (count - 1).max(1) as f64;
                (s, self.eval(s))
            })
            .collect()
    }

    /// Pack (mesh, q) into the reduced unknown vector used for arclength.
    pub fn pack_z(&self) -> DVector<f64> {
        let mut z = DVector::zeros(self.mesh.len() + self.q.len());
        z.rows_mut(0, self.mesh.len()).copy_from(&self.mesh);
        z.rows_mut(self.mesh.len(), self.q.len()).copy_from(&self.q);
        z
    }
}

fn interval_of(breaks: &[f64], s: f64) -> usize {
    let n = breaks.len() - 1;
    if s <= breaks[0] {
        return 0;
    }
    if s >= breaks[n] {
        return n - 1;
    }
    breaks.partition_point(|&b| b <= s).saturating_sub(1).min(n - 1)
}

/// Lagrange basis weights at local position sigma for the five equidistant
/// representation points 0, 1/4, 1/2, 3/4, 1.
pub fn lagrange_weights(sigma: f64) -> [f64; DEGREE + 1] {
    let nodes = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut w = [0.0; DEGREE + 1];
    for k in 0..=DEGREE {
        let mut num = 1.0;
        let mut den = 1.0;
        for j in 0..=DEGREE {
            if j != k {
                num *= sigma - nodes[j];
                den *= nodes[k] - nodes[j];
            }
        }
        w[k] = num / den;
    }
    w
}

/// d/dsigma of the Lagrange basis at sigma.
pub fn lagrange_deriv_weights(sigma: f64) -> [f64; DEGREE + 1] {
    let nodes = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut w = [0.0; DEGREE + 1];
    for k in 0..=DEGREE {
        let mut den = 1.0;
        for j in 0..=DEGREE {
            if j != k {
                den *= nodes[k] - nodes[j];
            }
        }
        // Sum over products omitting one factor.
        let mut sum = 0.0;
        for m in 0..=DEGREE {
            if m == k {
                continue;
            }
            let mut prod = 1.0;
            for j in 0..=DEGREE {
                if j != k && j != m {
                    prod *= sigma - nodes[j];
                }
            }
            sum += prod;
        }
        w[k] = sum / den;
    }
    w
}

/// Uniform breakpoints.
pub fn uniform_breaks(n_intervals: usize) -> Vec<f64> {
    (0..=n_intervals)
        .map(|i| i as f64 / n_intervals as f64)
        .collect()
}

/// Breakpoints equidistributing the arclength of a sampled profile
/// (static graded mesh for sharply structured orbits).
pub fn equidistributed_breaks(samples: &[(f64, DVector<f64>)], n_intervals: usize) -> Vec<f64> {
    let mut cum = vec![0.0];
    for w in samples.windows(2) {
        let ds = (w[1].0 - w[0].0).abs();
        let du = (&w[1].1 - &w[0].1).norm();
        // Mix of time and arclength keeps quiet segments represented
        // while concentrating intervals on spikes and dives.
        cum.push(cum.last().unwrap() + ds + du * 0.35);
    }
    let total = *cum.last().unwrap();
    let mut breaks = Vec::with_capacity(n_intervals + 1);
    let mut k = 0usize;
    for i in 0..=n_intervals {
        let target = total * i as f64 / n_intervals as f64;
        while k + 1 < cum.len() && cum[k + 1] < target {
            k += 1;
        }
        if i == 0 {
            breaks.push(0.0);
        } else if i == n_intervals {
            breaks.push(1.0);
        } else {
            let (c0, c1) = (cum[k], cum[k + 1]);
            let (s0, s1) = (samples[k].0, samples[k + 1].0);
            let t = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.0 };
            breaks.push(s0 + t * (s1 - s0));
        }
    }
    // Enforce strict monotonicity.
    for i in 1..breaks.len() {
        if breaks[i] <= breaks[i - 1] {
            breaks[i] = breaks[i - 1] + 1e-12;
        }
    }
    breaks
}

/// Build a discrete solution by sampling a profile function at the
/// representation points.
pub fn solution_from_profile<F>(
    n: usize,
    breaks: &[f64],
    q: DVector<f64>,
    mut profile: F,
) -> BvpSolution
where
    F: FnMut(f64) -> DVector<f64>,
{
    let n_intervals = breaks.len() - 1;
    let ni = DEGREE - 1;
    let mut mesh = DVector::zeros((n_intervals + 1) * n);
    let mut interior = DVector::zeros(n_intervals * ni * n);
    for (j, &s) in breaks.iter().enumerate() {
        mesh.rows_mut(j * n, n).copy_from(&profile(s));
    }
    for j in 0..n_intervals {
        let h = breaks[j + 1] - breaks[j];
        for k in 0..ni {
            let s = breaks[j] + h * (k + 1) as f64 / DEGREE as f64;
            interior
                .rows_mut((j * ni + k) * n, n)
                .copy_from(&profile(s));
        }
    }
    BvpSolution {
        n,
        n_intervals,
        breaks: breaks.to_vec(),
        mesh,
        interior,
        q,
    }
}

/// Per-interval condensation record for back-substitution.
struct CondensedInterval {
    /// Eliminated local matrix, rows reordered by pivoting:
    /// columns [interior (9) | u_j (n) | u_{j+1} (n) | q (g) | rhs (1)].
    m: DMatrix<f64>,
}

/// Newton controls for BVP solves.
#[derive(Debug, Clone)]
pub struct BvpNewtonSettings {
    pub tol: f64,
    pub max_iters: usize,
    /// Largest allowed Newton update (max-norm over mesh values).
    pub max_step: f64,
}

impl Default for BvpNewtonSettings {
    fn default() -> Self {
        BvpNewtonSettings {
            tol: 1e-10,
            max_iters: 14,
            max_step: 1e6,
        }
    }
}

/// Outcome of a converged Newton solve.
pub struct BvpNewtonReport {
    pub iterations: usize,
    pub residual: f64,
}

/// An optional extra scalar equation dot(w . t, Z - Z_ref) = ds appended to
/// the system (pseudo-arclength row). `weights` and `tangent` live on the
/// reduced vector (mesh, q).
pub struct ArclengthRow<'a> {
    pub tangent: &'a DVector<f64>,
    pub z_ref: &'a DVector<f64>,
    pub weights: &'a DVector<f64>,
    pub ds: f64,
}

/// Full collocation residual (collocation + conditions [+ arclength]).
pub fn bvp_residual<S: BvpSystem, C: BvpConditions<S> + ?Sized>(
    system: &S,
    conditions: &C,
    sol: &BvpSolution,
    arclength: Option<&ArclengthRow>,
) -> DVector<f64> {
    let n = sol.n;
    let n_int = sol.n_intervals;
    let c = conditions.count();
    let total = n_int * DEGREE * n + c + arclength.map(|_| 1).unwrap_or(0);
    let mut r = DVector::zeros(total);
    let mut row = 0;
    for j in 0..n_int {
        let h = sol.breaks[j + 1] - sol.breaks[j];
        let pts = sol.local_points(j);
        for gi in 0..DEGREE {
            let sigma = GAUSS_NODES[gi];
            let s_node = sol.breaks[j] + h * sigma;
            let wv = lagrange_weights(sigma);
            let wd = lagrange_deriv_weights(sigma);
            let mut u = DVector::zeros(n);
            let mut du = DVector::zeros(n);
            for k in 0..=DEGREE {
                u += &pts[k] * wv[k];
                du += &pts[k] * wd[k];
            }
            let f = system.rhs(s_node, &u, &sol.q);
            for i in 0..n {
                r[row + i] = du[i] - h * f[i];
            }
            row += n;
        }
    }
    let cond = conditions.eval(system, sol);
    for i in 0..c {
        r[row + i] = cond[i];
    }
    row += c;
    if let Some(arc) = arclength {
        let z = sol.pack_z();
        let mut acc = -arc.ds;
        for i in 0..z.len() {
            acc += arc.weights[i] * arc.tangent[i] * (z[i] - arc.z_ref[i]);
        }
        r[row] = acc;
    }
    r
}

/// One Newton solve of the square collocation system. Mutates `sol`.
pub fn bvp_newton<S: BvpSystem, C: BvpConditions<S> + ?Sized>(
    system: &S,
    conditions: &C,
    sol: &mut BvpSolution,
    arclength: Option<&ArclengthRow>,
    settings: &BvpNewtonSettings,
) -> Result<BvpNewtonReport> {
    let n = sol.n;
    let g = sol.q.len();
    let c = conditions.count();
    let n_int = sol.n_intervals;
    let arc_rows = arclength.map(|_| 1).unwrap_or(0);
    // Square check: unknowns (N+1)n + g vs equations Nn + c + arc.
    let unknowns = (n_int + 1) * n + g;
    let equations = n_int * n + c + arc_rows;
    if unknowns != equations {
        return Err(Error::domain(format!(
            "BVP not square: {unknowns} unknowns vs {equations} condensed equations"
        )));
    }

    let mut last_residual = f64::INFINITY;
    for it in 0..settings.max_iters {
        let r = bvp_residual(system, conditions, sol, arclength);
        let res_norm = r.amax();
        if !res_norm.is_finite() {
            return Err(Error::NewtonNoConvergence {
                residual: res_norm,
                iterations: it,
            });
        }
        if res_norm <= settings.tol {
            return Ok(BvpNewtonReport {
                iterations: it,
                residual: res_norm,
            });
        }
        let (delta_mesh_q, condensed) = solve_linearised(system, conditions, sol, arclength, &r)?;
        // Norm guard.
        let step_norm = delta_mesh_q.amax();
        let damping = if step_norm > settings.max_step {
            settings.max_step / step_norm
        } else {
            1.0
        };
        apply_update(sol, &delta_mesh_q, &condensed, damping);
        last_residual = res_norm;
    }
    let r = bvp_residual(system, conditions, sol, arclength);
    let res_norm = r.amax();
    if res_norm <= settings.tol * 10.0 && res_norm < last_residual {
        return Ok(BvpNewtonReport {
            iterations: settings.max_iters,
            residual: res_norm,
        });
    }
    Err(Error::NewtonNoConvergence {
        residual: res_norm,
        iterations: settings.max_iters,
    })
}

/// Build the condensed global matrix, solve for the (mesh, q) update, and
/// return the per-interval records for interior back-substitution.
fn solve_linearised<S: BvpSystem, C: BvpConditions<S> + ?Sized>(
    system: &S,
    conditions: &C,
    sol: &BvpSolution,
    arclength: Option<&ArclengthRow>,
    residual: &DVector<f64>,
) -> Result<(DVector<f64>, Vec<CondensedInterval>)> {
    let n = sol.n;
    let g = sol.q.len();
    let c = conditions.count();
    let n_int = sol.n_intervals;
    let ni = DEGREE - 1;
    let n_mesh = (n_int + 1) * n;
    let dim = n_mesh + g;
    let arc_rows = arclength.map(|_| 1).unwrap_or(0);

    let mut global = DMatrix::zeros(n_int * n + c + arc_rows, dim);
    let mut rhs = DVector::zeros(n_int * n + c + arc_rows);
    let mut condensed = Vec::with_capacity(n_int);

    let n_local_rows = DEGREE * n; // 12
    let n_interior = ni * n; // 9
    let local_cols = n_interior + 2 * n + g + 1;

    for j in 0..n_int {
        let h = sol.breaks[j + 1] - sol.breaks[j];
        let pts = sol.local_points(j);
        // Local matrix: [interior | u_j | u_{j+1} | q | rhs]
        let mut m = DMatrix::zeros(n_local_rows, local_cols);
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
            let jq = system.jac_q(s_node, &u, &sol.q);
            let row0 = gi * n;
            // d residual / d local point k = wd[k] I - h wv[k] J
            for k in 0..=DEGREE {
                let col0 = match k {
                    0 => n_interior,             // u_j
                    DEGREE => n_interior + n,    // u_{j+1}
                    _ => (k - 1) * n,            // interior
                };
                for r in 0..n {
                    for cc in 0..n {
                        m[(row0 + r, col0 + cc)] +=
                            -h * wv[k] * jac[(r, cc)] + if r == cc { wd[k] } else { 0.0 };
                    }
                }
            }
            // q columns.
            for r in 0..n {
                for k in 0..g {
                    m[(row0 + r, n_interior + 2 * n + k)] = -h * jq[(r, k)];
                }
            }
            // Negative residual as rhs.
            let rrow = j * DEGREE * n + gi * n;
            for r in 0..n {
                m[(row0 + r, local_cols - 1)] = -residual[rrow + r];
            }
        }
        // Eliminate interior columns with partial pivoting.
        for col in 0..n_interior {
            let mut piv = col;
            for r in (col + 1)..n_local_rows {
                if m[(r, col)].abs() > m[(piv, col)].abs() {
                    piv = r;
                }
            }
            if m[(piv, col)].abs() < 1e-300 {
                return Err(Error::SingularSystem {
                    context: "collocation interior elimination",
                });
            }
            if piv != col {
                m.swap_rows(piv, col);
            }
            let d = m[(col, col)];
            for r in (col + 1)..n_local_rows {
                let factor = m[(r, col)] / d;
                if factor != 0.0 {
                    for cc in col..local_cols {
                        m[(r, cc)] -= factor * m[(col, cc)];
                    }
                    m[(r, col)] = 0.0;
                }
            }
        }
        // Rows n_interior..n_local_rows are the condensed equations.
        let grow0 = j * n;
        for r in 0..n {
            let lr = n_interior + r;
            for cc in 0..n {
                global[(grow0 + r, j * n + cc)] = m[(lr, n_interior + cc)];
                global[(grow0 + r, (j + 1) * n + cc)] = m[(lr, n_interior + n + cc)];
            }
            for k in 0..g {
                global[(grow0 + r, n_mesh + k)] = m[(lr, n_interior + 2 * n + k)];
            }
            rhs[grow0 + r] = m[(lr, local_cols - 1)];
        }
        condensed.push(CondensedInterval { m });
    }

    // Condition rows.
    let cond_jac = conditions.jacobian(system, sol);
    let crow0 = n_int * n;
    for r in 0..c {
        for cc in 0..dim {
            global[(crow0 + r, cc)] = cond_jac[(r, cc)];
        }
        rhs[crow0 + r] = -residual[n_int * DEGREE * n + r];
    }
    // Arclength row.
    if let Some(arc) = arclength {
        let row = crow0 + c;
        for cc in 0..dim {
            global[(row, cc)] = arc.weights[cc] * arc.tangent[cc];
        }
        rhs[row] = -residual[n_int * DEGREE * n + c];
    }

    let lu = global.lu();
    let delta = lu.solve(&rhs).ok_or(Error::SingularSystem {
        context: "condensed BVP system",
    })?;
    Ok((delta, condensed))
}

/// Apply a damped update to mesh values and q, back-substituting interior
/// corrections from the condensation records.
fn apply_update(
    sol: &mut BvpSolution,
    delta_mesh_q: &DVector<f64>,
    condensed: &[CondensedInterval],
    damping: f64,
) {
    let n = sol.n;
    let g = sol.q.len();
    let ni = DEGREE - 1;
    let n_mesh = (sol.n_intervals + 1) * n;
    let n_interior = ni * n;
    let local_cols = n_interior + 2 * n + g + 1;

    for j in 0..sol.n_intervals {
        let m = &condensed[j].m;
        // Solve the upper-triangular 9x9 part for the interior delta.
        let mut local = DVector::zeros(n_interior);
        for r in (0..n_interior).rev() {
            let mut acc = m[(r, local_cols - 1)];
            for cc in (r + 1)..n_interior {
                acc -= m[(r, cc)] * local[cc];
            }
            // Subtract endpoint and q contributions.
            for cc in 0..n {
                acc -= m[(r, n_interior + cc)] * delta_mesh_q[j * n + cc];
                acc -= m[(r, n_interior + n + cc)] * delta_mesh_q[(j + 1) * n + cc];
            }
            for k in 0..g {
                acc -= m[(r, n_interior + 2 * n + k)] * delta_mesh_q[n_mesh + k];
            }
            local[r] = acc / m[(r, r)];
        }
        for k in 0..n_interior {
            sol.interior[(j * ni * n) + k] += damping * local[k];
        }
    }
    for i in 0..n_mesh {
        sol.mesh[i] += damping * delta_mesh_q[i];
    }
    for k in 0..g {
        sol.q[k] += damping * delta_mesh_q[n_mesh + k];
    }
}

/// Tangent to the solution family: unit (weighted) nullspace vector of the
/// open system, computed by replacing the arclength row with the previous
/// tangent as a border.
pub fn bvp_tangent<S: BvpSystem, C: BvpConditions<S> + ?Sized>(
    system: &S,
    conditions: &C,
    sol: &BvpSolution,
    prev_tangent: &DVector<f64>,
    weights: &DVector<f64>,
) -> Result<DVector<f64>> {
    // Solve [J; w . t_prev] dz = [0; 1].
    let zeros = DVector::zeros(
        sol.n_intervals * DEGREE * sol.n + conditions.count() + 1,
    );
    let mut fake_residual = zeros;
    // Residual 0 everywhere except arclength slot -1 (rhs becomes +1).
    let last = fake_residual.len() - 1;
    fake_residual[last] = -1.0;
    let arc = ArclengthRow {
        tangent: prev_tangent,
        z_ref: &sol.pack_z(),
        weights,
        ds: 0.0,
    };
    let (t, _) = solve_linearised(system, conditions, sol, Some(&arc), &fake_residual)?;
    let norm = weighted_norm(&t, weights);
    if !(norm > 1e-14) {
        return Err(Error::SingularSystem {
            context: "bvp tangent",
        });
    }
    let mut t = t / norm;
    if weighted_dot(&t, prev_tangent, weights) < 0.0 {
        t = -t;
    }
    Ok(t)
}

pub fn weighted_dot(a: &DVector<f64>, b: &DVector<f64>, w: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += w[i] * a[i] * b[i];
    }
    acc
}

pub fn weighted_norm(a: &DVector<f64>, w: &DVector<f64>) -> f64 {
    weighted_dot(a, a, w).sqrt()
}

/// Weight vector over (mesh, q): mesh entries get 1/(N+1) (integral-like
/// scale), globals get 1.
pub fn standard_weights(sol: &BvpSolution) -> DVector<f64> {
    let n_mesh = (sol.n_intervals + 1) * sol.n;
    let g = sol.q.len();
    let mut w = DVector::zeros(n_mesh + g);
    for i in 0..n_mesh {
        w[i] = 1.0 / (sol.n_intervals + 1) as f64;
    }
    for k in 0..g {
        w[n_mesh + k] = 1.0;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lagrange_weights_partition_of_unity() {
        for &s in &[0.0, 0.1, 0.33, 0.5, 0.9, 1.0] {
            let w = lagrange_weights(s);
            assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-13);
        }
        // Cardinal property at the nodes.
        for (k, &node) in [0.0, 0.25, 0.5, 0.75, 1.0].iter().enumerate() {
            let w = lagrange_weights(node);
            for j in 0..=DEGREE {
                let expect = if j == k { 1.0 } else { 0.0 };
                assert_relative_eq!(w[j], expect, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn lagrange_derivative_matches_fd() {
        let s = 0.37;
        let h = 1e-6;
        let wp = lagrange_weights(s + h);
        let wm = lagrange_weights(s - h);
        let wd = lagrange_deriv_weights(s);
        for k in 0..=DEGREE {
            let fd = (wp[k] - wm[k]) / (2.0 * h);
            assert_relative_eq!(wd[k], fd, epsilon = 1e-8);
        }
    }

    /// u' = T * A u with boundary condition pinning u(0); exact solution is
    /// the matrix exponential.
    struct LinearSystem {
        a: DMatrix<f64>,
    }
    impl BvpSystem for LinearSystem {
        fn dim(&self) -> usize {
            2
        }
        fn n_globals(&self) -> usize {
            1
        }
        fn rhs(&self, _s: f64, u: &DVector<f64>, q: &DVector<f64>) -> DVector<f64> {
            &self.a * u * q[0]
        }
        fn jac_u(&self, _s: f64, _u: &DVector<f64>, q: &DVector<f64>) -> DMatrix<f64> {
            &self.a * q[0]
        }
        fn jac_q(&self, _s: f64, u: &DVector<f64>, _q: &DVector<f64>) -> DMatrix<f64> {
            let col = &self.a * u;
            DMatrix::from_column_slice(2, 1, col.as_slice())
        }
    }

    /// Pin u(0) = u0 and the time scale q0 = T.
    struct PinnedStart {
        u0: DVector<f64>,
        t_scale: f64,
    }
    impl BvpConditions<LinearSystem> for PinnedStart {
        fn count(&self) -> usize {
            3
        }
        fn eval(&self, _s: &LinearSystem, sol: &BvpSolution) -> DVector<f64> {
            let u0 = sol.u0();
            DVector::from_vec(vec![
                u0[0] - self.u0[0],
                u0[1] - self.u0[1],
                sol.q[0] - self.t_scale,
            ])
        }
    }

    #[test]
    fn linear_bvp_matches_exponential() {
        // u' = A u over t in [0, 1], A = [[0, 1], [-1, 0]] (rotation).
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let system = LinearSystem { a };
        let conds = PinnedStart {
            u0: DVector::from_vec(vec![1.0, 0.0]),
            t_scale: 1.0,
        };
        let breaks = uniform_breaks(10);
        let mut sol = solution_from_profile(2, &breaks, DVector::from_vec(vec![1.0]), |_| {
            DVector::from_vec(vec![1.0, 0.0])
        });
        let report = bvp_newton(&system, &conds, &mut sol, None, &BvpNewtonSettings::default())
            .expect("newton");
        assert!(report.residual <= 1e-10);
        // Exact: u(1) = (cos 1, -sin 1).
        let u1 = sol.u1();
        assert_relative_eq!(u1[0], 1.0f64.cos(), epsilon = 1e-8);
        assert_relative_eq!(u1[1], -(1.0f64.sin()), epsilon = 1e-8);
    }

    #[test]
    fn collocation_superconvergence_order_six() {
        // Halving the mesh shrinks the endpoint error by about 2^6 on a
        // smooth problem (degree-4 Gauss collocation).
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let system = LinearSystem { a };
        let conds = PinnedStart {
            u0: DVector::from_vec(vec![1.0, 0.0]),
            t_scale: 4.0,
        };
        let run = |n_int: usize| -> f64 {
            let breaks = uniform_breaks(n_int);
            let mut sol = solution_from_profile(2, &breaks, DVector::from_vec(vec![4.0]), |s| {
                DVector::from_vec(vec![(4.0 * s).cos(), -(4.0 * s).sin()])
            });
            bvp_newton(&system, &conds, &mut sol, None, &BvpNewtonSettings::default()).unwrap();
            let u1 = sol.u1();
            let exact = (4.0f64.cos(), -(4.0f64.sin()));
            ((u1[0] - exact.0).powi(2) + (u1[1] - exact.1).powi(2)).sqrt()
        };
        let e1 = run(4);
        let e2 = run(8);
        let order = (e1 / e2).log2();
        assert!(order >= 6.0, "observed order {order} (e1={e1:.2e}, e2={e2:.2e})");
    }

    #[test]
    fn profile_evaluation_reproduces_representation_points() {
        let breaks = uniform_breaks(7);
        let sol = solution_from_profile(1, &breaks, DVector::zeros(1), |s| {
            DVector::from_vec(vec![(3.0 * s).sin()])
        });
        for j in 0..=7 {
            let s = j as f64 / 7.0;
            assert_relative_eq!(sol.eval(s)[0], (3.0 * s).sin(), epsilon = 1e-12);
        }
    }
}
