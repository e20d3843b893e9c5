//! Homoclinic orbits as truncated boundary-value problems with projection
//! boundary conditions, seeded by shooting, and continued in two parameters
//! with orbit-flip, inclination-flip, Belyakov and resonance test functions.
//!
//! The truncated orbit u(s), s in [0, 1], solves u' = tau f(u; b, I) with
//! tau the free transit time. The left endpoint deviation from the saddle is
//! confined to the unstable eigenplane at a pinned distance delta0; the
//! right endpoint deviation lies on the stable eigenline at distance delta1.
//! With one model parameter free this closes the system; freeing (b, I)
//! jointly and adding the arclength row gives the codimension-one branch.

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;

use super::contin::{continue_bvp, BvpBranch, BvpContinuationSettings, TestSpec};
use super::mesh::{
    bvp_newton, equidistributed_breaks, solution_from_profile, BvpConditions,
    BvpNewtonSettings, BvpSolution, BvpSystem,
};
use super::systems::HrBvpSystem;
use crate::continuation::{SpecialPointKind, Termination};
use crate::error::{Error, Result};
use crate::integrate::{integrate_streaming, IntegrateOptions};
use crate::model::{
    classify_eigenvalues, full_equilibria, hr_jacobian, hr_rhs, EquilibriumKind, ModelParams,
};

/// Saddle equilibrium with right eigenvectors and their biorthogonal duals,
/// ordered (uu, u, s) by descending real part.
#[derive(Debug, Clone)]
pub struct SaddleFrame {
    pub params: ModelParams,
    pub point: Vector3<f64>,
    pub eigenvalues: [Complex64; 3],
    /// Right eigenvectors (real parts for a real saddle).
    pub v: [Vector3<f64>; 3],
    /// Dual (left) vectors with psi_i . v_j = delta_ij.
    pub psi: [Vector3<f64>; 3],
    pub kind: EquilibriumKind,
}

impl SaddleFrame {
    pub fn lambda_uu(&self) -> f64 {
        self.eigenvalues[0].re
    }
    pub fn lambda_u(&self) -> f64 {
        self.eigenvalues[1].re
    }
    pub fn lambda_s(&self) -> f64 {
        self.eigenvalues[2].re
    }
    pub fn delta1(&self) -> f64 {
        -self.lambda_u() / self.lambda_s()
    }
    pub fn delta2(&self) -> f64 {
        -self.lambda_uu() / self.lambda_s()
    }
}

/// Compute the saddle frame at given parameters; when several equilibria
/// exist the one closest to `near` (or the 2u-saddle) is taken. Eigenvector
/// signs are aligned against `align` when given.
pub fn saddle_frame(
    p: &ModelParams,
    near: Option<&Vector3<f64>>,
    align: Option<&SaddleFrame>,
) -> Result<SaddleFrame> {
    let eqs = full_equilibria(p);
    if eqs.is_empty() {
        return Err(Error::domain("no equilibrium found"));
    }
    let eq = match near {
        Some(target) => eqs
            .iter()
            .min_by(|a, b| {
                let da = (a.point.to_vector() - target).norm();
                let db = (b.point.to_vector() - target).norm();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap(),
        None => eqs
            .iter()
            .find(|e| e.kind == EquilibriumKind::RealSaddle2U)
            .unwrap_or(&eqs[0]),
    };
    let point = eq.point.to_vector();
    let jac = hr_jacobian(&point, p);
    let jac_t = jac.transpose();
    let mut v = [Vector3::zeros(); 3];
    let mut psi = [Vector3::zeros(); 3];
    for k in 0..3 {
        // Real parts suffice for the projection frame; a complex pair is
        // handled through the real invariant plane (Re, Im combinations
        // below keep psi_i . v_j = delta_ij approximately enforceable only
        // in the real-saddle case, which the continuation requires).
        v[k] = eq.eigenvectors[k].map(|c| c.re);
        if v[k].norm() < 1e-12 {
            v[k] = eq.eigenvectors[k].map(|c| c.im);
        }
        v[k] /= v[k].norm();
        psi[k] = left_eigenvector(&jac_t, eq.eigenvalues[k]);
    }
    // Biorthonormalise duals.
    for k in 0..3 {
        let denom = psi[k].dot(&v[k]);
        if denom.abs() < 1e-10 {
            return Err(Error::domain(
                "degenerate eigenbasis: dual normalisation failed",
            ));
        }
        psi[k] /= denom;
    }
    let mut frame = SaddleFrame {
        params: *p,
        point,
        eigenvalues: eq.eigenvalues,
        v,
        psi,
        kind: eq.kind,
    };
    if let Some(reference) = align {
        for k in 0..3 {
            if frame.v[k].dot(&reference.v[k]) < 0.0 {
                frame.v[k] = -frame.v[k];
                frame.psi[k] = -frame.psi[k];
            }
        }
    }
    Ok(frame)
}

fn left_eigenvector(jac_t: &nalgebra::Matrix3<f64>, lambda: Complex64) -> Vector3<f64> {
    // Null vector of (J^T - lambda I) via the cross-product of two rows.
    let to_c = |x: f64| Complex64::new(x, 0.0);
    let a = jac_t.map(to_c) - nalgebra::Matrix3::<f64>::identity().map(to_c) * lambda;
    let rows: [nalgebra::RowVector3<Complex64>; 3] = [a.row(0).into(), a.row(1).into(), a.row(2).into()];
    let cross = |u: &nalgebra::RowVector3<Complex64>, w: &nalgebra::RowVector3<Complex64>| {
        nalgebra::Vector3::new(
            u[1] * w[2] - u[2] * w[1],
            u[2] * w[0] - u[0] * w[2],
            u[0] * w[1] - u[1] * w[0],
        )
    };
    let cands = [
        cross(&rows[0], &rows[1]),
        cross(&rows[0], &rows[2]),
        cross(&rows[1], &rows[2]),
    ];
    let best = cands
        .iter()
        .max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap())
        .unwrap();
    let re = best.map(|c| c.re);
    let im = best.map(|c| c.im);
    let out = if re.norm() >= im.norm() { re } else { im };
    out / out.norm()
}

/// Projection boundary conditions for the truncated homoclinic problem.
pub struct HomoclinicConditions {
    /// Alignment reference; also supplies the equilibrium search point.
    pub frame_ref: SaddleFrame,
    pub base: ModelParams,
    pub q_b: Option<usize>,
    pub q_i: Option<usize>,
    pub delta0_sq: f64,
    pub delta1_sq: f64,
    /// Relax the right projection conditions toward seed values scaled by
    /// global q[k]: <psi_uu, dev1> = q[k] * r_uu0, <psi_u, dev1> = q[k] * r_u0.
    pub homotopy: Option<(usize, f64, f64)>,
    /// Pinned globals (index, value).
    pub pins: Vec<(usize, f64)>,
}

impl HomoclinicConditions {
    pub fn params(&self, q: &DVector<f64>) -> ModelParams {
        let mut p = self.base;
        if let Some(k) = self.q_b {
            p.b = q[k];
        }
        if let Some(k) = self.q_i {
            p.i = q[k];
        }
        p
    }

    pub fn frame_at(&self, q: &DVector<f64>) -> Result<SaddleFrame> {
        let p = self.params(q);
        saddle_frame(&p, Some(&self.frame_ref.point), Some(&self.frame_ref))
    }
}

impl BvpConditions<HrBvpSystem> for HomoclinicConditions {
    fn count(&self) -> usize {
        5 + self.pins.len()
    }

    fn eval(&self, _system: &HrBvpSystem, sol: &BvpSolution) -> DVector<f64> {
        let mut out = DVector::zeros(self.count());
        let frame = match self.frame_at(&sol.q) {
            Ok(f) => f,
            Err(_) => {
                out.fill(f64::NAN);
                return out;
            }
        };
        let u0 = sol.u0();
        let u1 = sol.u1();
        let dev0 = Vector3::new(u0[0], u0[1], u0[2]) - frame.point;
        let dev1 = Vector3::new(u1[0], u1[1], u1[2]) - frame.point;
        let (r_a, r_b) = match self.homotopy {
            Some((k, r_a0, r_b0)) => (sol.q[k] * r_a0, sol.q[k] * r_b0),
            None => (0.0, 0.0),
        };
        // Norm conditions divided by 2 delta so their gradients are O(1).
        let d0 = self.delta0_sq.sqrt();
        let d1 = self.delta1_sq.sqrt();
        // Arrival on the stable line, written with the stable eigenvector
        // only (smooth through Belyakov points where the unstable pair and
        // its eigenvectors degenerate): the cross product dev1 x v_s must
        // vanish; two fixed complement directions make it two scalars.
        let cross = dev1.cross(&frame.v[2]);
        let (e_a, e_b) = stable_complement(&self.frame_ref);
        out[0] = frame.psi[2].dot(&dev0);
        out[1] = (dev0.norm_squared() - self.delta0_sq) / (2.0 * d0);
        out[2] = cross.dot(&e_a) - r_a;
        out[3] = cross.dot(&e_b) - r_b;
        out[4] = (dev1.norm_squared() - self.delta1_sq) / (2.0 * d1);
        for (j, &(k, value)) in self.pins.iter().enumerate() {
            out[5 + j] = sol.q[k] - value;
        }
        out
    }

    /// Analytic endpoint blocks (the conditions are linear/quadratic in the
    /// endpoints); the q-columns are finite differences through the
    /// parameter-dependent saddle frame.
    fn jacobian(&self, system: &HrBvpSystem, sol: &BvpSolution) -> DMatrix<f64> {
        let n = sol.n;
        let n_mesh = (sol.n_intervals + 1) * n;
        let g = sol.q.len();
        let c = self.count();
        let mut rows = DMatrix::zeros(c, n_mesh + g);
        let frame = match self.frame_at(&sol.q) {
            Ok(f) => f,
            Err(_) => return rows,
        };
        let u0 = sol.u0();
        let u1 = sol.u1();
        let dev0 = Vector3::new(u0[0], u0[1], u0[2]) - frame.point;
        let dev1 = Vector3::new(u1[0], u1[1], u1[2]) - frame.point;
        let d0 = self.delta0_sq.sqrt();
        let d1 = self.delta1_sq.sqrt();
        // d(dev1 x v_s)/d(dev1) applied to a fixed direction e is e x v_s... 
        // use the triple-product identity: d/d dev1 of (dev1 x v_s).e = v_s x e.
        let (e_a, e_b) = stable_complement(&self.frame_ref);
        let grad_a = frame.v[2].cross(&e_a);
        let grad_b = frame.v[2].cross(&e_b);
        for k in 0..3 {
            rows[(0, k)] = frame.psi[2][k];
            rows[(1, k)] = dev0[k] / d0;
            rows[(2, n_mesh - n + k)] = grad_a[k];
            rows[(3, n_mesh - n + k)] = grad_b[k];
            rows[(4, n_mesh - n + k)] = dev1[k] / d1;
        }
        for (j, &(k, _)) in self.pins.iter().enumerate() {
            rows[(5 + j, n_mesh + k)] = 1.0;
        }
        // q-columns via central differences of the full residual (the
        // endpoint blocks cancel since u0/u1 stay fixed).
        let base_eval = self.eval(system, sol);
        for k in 0..g {
            let h = 1e-6 * (1.0 + sol.q[k].abs());
            let mut sp = sol.clone();
            sp.q[k] += h;
            let fp = self.eval(system, &sp);
            sp.q[k] -= 2.0 * h;
            let fm = self.eval(system, &sp);
            for r in 0..5 {
                rows[(r, n_mesh + k)] = (fp[r] - fm[r]) / (2.0 * h);
            }
            let _ = &base_eval;
        }
        rows
    }
}

/// Two fixed unit directions spanning the orthogonal complement of the
/// reference stable eigenvector.
fn stable_complement(frame: &SaddleFrame) -> (Vector3<f64>, Vector3<f64>) {
    let vs = frame.v[2];
    let trial = if vs[0].abs() < 0.9 {
        Vector3::new(1.0, 0.0, 0.0)
    } else {
        Vector3::new(0.0, 1.0, 0.0)
    };
    let e_a = (trial - vs * trial.dot(&vs)).normalize();
    let e_b = vs.cross(&e_a);
    (e_a, e_b)
}

/// Test-function values carried by a homoclinic solution.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct HomoclinicTests {
    /// Normalised weak-unstable component of the departure deviation;
    /// zero at an orbit flip.
    pub orbit_flip: f64,
    /// Normalised weak-dual component of the adjoint solution at the
    /// arrival end; zero at an inclination flip.
    pub inclination_flip: f64,
    /// Squared difference of the leading (unstable) eigenvalue pair;
    /// negative once the pair is complex.
    pub belyakov: f64,
    /// lambda_u + lambda_s.
    pub resonance: f64,
}

/// A converged truncated homoclinic orbit.
#[derive(Debug, Clone)]
pub struct HomoclinicSolution {
    pub sol: BvpSolution,
    pub frame: SaddleFrame,
    pub base: ModelParams,
    pub q_b: Option<usize>,
    pub q_i: Option<usize>,
    pub delta0: f64,
    pub delta1: f64,
}

impl HomoclinicSolution {
    pub fn params(&self) -> ModelParams {
        let mut p = self.base;
        if let Some(k) = self.q_b {
            p.b = self.sol.q[k];
        }
        if let Some(k) = self.q_i {
            p.i = self.sol.q[k];
        }
        p
    }

    pub fn transit_time(&self) -> f64 {
        self.sol.q[0]
    }

    /// Signed, normalised projection of the departure deviation on the weak
    /// unstable direction.
    pub fn orbit_flip_test(&self) -> Result<f64> {
        if self.frame.kind != EquilibriumKind::RealSaddle2U {
            return Err(Error::domain(
                "orbit-flip test undefined for a saddle focus",
            ));
        }
        let u0 = self.sol.u0();
        let dev0 = Vector3::new(u0[0], u0[1], u0[2]) - self.frame.point;
        Ok(self.frame.psi[1].dot(&dev0) / dev0.norm())
    }

    /// Count local maxima of x(s) above `threshold` along the profile.
    pub fn spike_count(&self, threshold: f64) -> usize {
        let samples = self.sol.sample(8 * self.sol.n_intervals);
        let mut count = 0;
        for w in samples.windows(3) {
            let (a, b, c) = (w[0].1[0], w[1].1[0], w[2].1[0]);
            if b > a && b >= c && b > threshold {
                count += 1;
            }
        }
        count
    }

    /// Endpoint distances to the saddle.
    pub fn endpoint_distances(&self) -> (f64, f64) {
        let u0 = self.sol.u0();
        let u1 = self.sol.u1();
        let d0 = (Vector3::new(u0[0], u0[1], u0[2]) - self.frame.point).norm();
        let d1 = (Vector3::new(u1[0], u1[1], u1[2]) - self.frame.point).norm();
        (d0, d1)
    }

    /// CSV export of the profile (s, x, y, z).
    pub fn write_profile_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "s,x,y,z")?;
        for (s, u) in self.sol.sample(4 * self.sol.n_intervals) {
            writeln!(w, "{s},{},{},{}", u[0], u[1], u[2])?;
        }
        Ok(())
    }
}

/// A homoclinic connection found by shooting: departure angle within the
/// unstable plane and the stored near-return segment.
#[derive(Debug, Clone)]
pub struct ShotConnection {
    pub theta: f64,
    pub miss_distance: f64,
    /// Time of the closest approach.
    pub t_pass: f64,
    /// Sampled states (t, x, y, z) from the saddle neighbourhood to the
    /// closest approach.
    pub samples: Vec<(f64, Vector3<f64>)>,
    /// Number of x-maxima above 0 before the pass.
    pub spikes: usize,
}

/// Shooting diagnostics for one departure angle.
fn shoot(
    p: &ModelParams,
    frame: &SaddleFrame,
    eps: f64,
    theta: f64,
    t_max: f64,
    store: bool,
) -> (f64, f64, usize, Vec<(f64, Vector3<f64>)>) {
    let y0 = frame.point + frame.v[1] * eps + frame.v[0] * theta;
    let opts = IntegrateOptions::with_tols(1e-12, 1e-14);
    let mut min_d = f64::INFINITY;
    let mut t_min = 0.0;
    let mut left = false;
    let mut spike_times = Vec::new();
    let mut prev = (y0[0], false, 0.0f64);
    let mut samples = Vec::new();
    let pv = frame.point;
    // Quiescent-phase detection: firmly past the lower fold of the critical
    // manifold (the canard segment itself only reaches the fold).
    let (fold_x, fold_z) = match crate::model::critical_manifold_folds(p) {
        crate::model::ManifoldFolds::Pair { second, .. } => second,
        crate::model::ManifoldFolds::Degenerate { at } => at,
    };
    let _ = integrate_streaming(
        |_, y: &Vector3<f64>| hr_rhs(y, p),
        y0,
        (0.0, t_max),
        &opts,
        |s| {
            let x = s.y1[0];
            if x > prev.0 {
                prev.1 = true;
            } else {
                if prev.1 && prev.0 > 0.0 {
                    spike_times.push(prev.2);
                }
                prev.1 = false;
            }
            prev.0 = x;
            prev.2 = s.t1();
            let d = (s.y1 - pv).norm();
            if d > 1.5 {
                left = true;
            }
            if s.t1() > 5.0 && d < min_d {
                min_d = d;
                t_min = s.t1();
            }
            if store {
                samples.push((s.t1(), s.y1));
            }
            // Stop once firmly in the quiescent phase far from the saddle.
            !(left && s.y1[0] < fold_x - 0.1 && s.y1[2] < fold_z - 0.1)
        },
    );
    let spikes = spike_times.iter().filter(|&&t| t < t_min + 0.5).count();
    (min_d, t_min, spikes, samples)
}

/// Scan departure angles in the unstable plane for homoclinic connections:
/// local minima of the return miss distance are refined by golden-section
/// search and kept when the miss falls below `miss_tol`.
pub fn scan_connections(
    p: &ModelParams,
    eps: f64,
    theta_range: (f64, f64),
    n_grid: usize,
    miss_tol: f64,
) -> Result<Vec<ShotConnection>> {
    let frame = saddle_frame(p, None, None)?;
    if frame.kind != EquilibriumKind::RealSaddle2U {
        return Err(Error::domain(
            "unstable-plane scan requires a real saddle with 2D unstable manifold",
        ));
    }
    let t_max = 1500.0;
    let thetas: Vec<f64> = (0..n_grid)
        .map(|k| theta_range.0 + (theta_range.1 - theta_range.0) * k as f64 / (n_grid - 1) as f64)
        .collect();
    let miss: Vec<f64> = thetas
        .iter()
        .map(|&th| shoot(p, &frame, eps, th, t_max, false).0)
        .collect();
    let mut out = Vec::new();
    for i in 1..n_grid - 1 {
        if miss[i] < miss[i - 1] && miss[i] < miss[i + 1] && miss[i] < 0.1 {
            let (mut a, mut b) = (thetas[i - 1], thetas[i + 1]);
            for _ in 0..70 {
                let m1 = a + 0.381_966 * (b - a);
                let m2 = a + 0.618_034 * (b - a);
                let d1 = shoot(p, &frame, eps, m1, t_max, false).0;
                let d2 = shoot(p, &frame, eps, m2, t_max, false).0;
                if d1 < d2 {
                    b = m2;
                } else {
                    a = m1;
                }
                if (b - a).abs() < 1e-14 {
                    break;
                }
            }
            let theta = 0.5 * (a + b);
            let (d, t_pass, spikes, samples) = shoot(p, &frame, eps, theta, t_max, true);
            if d < miss_tol {
                out.push(ShotConnection {
                    theta,
                    miss_distance: d,
                    t_pass,
                    samples,
                    spikes,
                });
            }
        }
    }
    Ok(out)
}

/// Options for the truncated-orbit solve.
#[derive(Debug, Clone)]
pub struct HomoclinicSolveOptions {
    pub n_intervals: usize,
    /// Target endpoint distances; the solve starts from the seed's own
    /// distances and halves toward these.
    pub delta0_target: f64,
    pub delta1_target: f64,
    pub newton: BvpNewtonSettings,
    /// Re-equidistribute the mesh after this many shrink stages.
    pub remesh_every: usize,
}

impl Default for HomoclinicSolveOptions {
    fn default() -> Self {
        HomoclinicSolveOptions {
            n_intervals: 300,
            delta0_target: 1e-3,
            delta1_target: 1e-6,
            newton: BvpNewtonSettings {
                tol: 1e-10,
                max_iters: 40,
                max_step: 0.8,
            },
            remesh_every: 3,
        }
    }
}

/// Convert a shot connection into a converged homoclinic solution at fixed b
/// with I free, then shrink the endpoint distances to their targets.
pub fn solve_homoclinic_from_shot(
    p: &ModelParams,
    shot: &ShotConnection,
    opts: &HomoclinicSolveOptions,
) -> Result<HomoclinicSolution> {
    let frame = saddle_frame(p, None, None)?;
    // Truncate on the final dive toward the saddle: after the last sample at
    // distance >= 0.05 before the pass, take the first sample below the
    // target distance. Cutting at the raw distance minimum would leave an
    // endpoint deep in the creep along the weak unstable direction, far too
    // close to the saddle for well-conditioned projection conditions.
    let d_trunc = (shot.miss_distance * 50.0).max(2e-2);
    let mut i_dive = 0usize;
    for (i, (t, y)) in shot.samples.iter().enumerate() {
        if *t <= shot.t_pass && (y - frame.point).norm() >= 0.05 {
            i_dive = i;
        }
    }
    let mut end_idx = shot.samples.len() - 1;
    for (i, (_, y)) in shot.samples.iter().enumerate().skip(i_dive) {
        if (y - frame.point).norm() <= d_trunc {
            end_idx = i;
            break;
        }
    }
    let tau0 = shot.samples[end_idx].0;
    let dev1 = shot.samples[end_idx].1 - frame.point;
    let dev0 = shot.samples[0].1 - frame.point;

    // Interpolation over the stored samples.
    let samples = &shot.samples[..=end_idx];
    let profile = |s: f64| -> DVector<f64> {
        let t = s * tau0;
        let idx = samples
            .partition_point(|(tt, _)| *tt < t)
            .clamp(1, samples.len() - 1);
        let (t0, y0) = &samples[idx - 1];
        let (t1, y1) = &samples[idx];
        let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
        let y = y0 + (y1 - y0) * w;
        DVector::from_column_slice(y.as_slice())
    };
    let scaled: Vec<(f64, DVector<f64>)> = (0..4000)
        .map(|k| {
            let s = k as f64 / 3999.0;
            (s, profile(s))
        })
        .collect();
    let breaks = equidistributed_breaks(&scaled, opts.n_intervals);

    let system = HrBvpSystem {
        base: *p,
        free_b: None,
        free_i: Some(1),
        n_globals: 2,
    };
    let q0 = DVector::from_vec(vec![tau0, p.i]);
    let mut sol = solution_from_profile(3, &breaks, q0, profile);

    let mut conds = HomoclinicConditions {
        frame_ref: frame.clone(),
        base: *p,
        q_b: None,
        q_i: Some(1),
        delta0_sq: dev0.norm_squared(),
        delta1_sq: dev1.norm_squared(),
        homotopy: None,
        pins: vec![],
    };
    bvp_newton(&system, &conds, &mut sol, None, &opts.newton)?;

    // Shrink the endpoint distances toward the targets. Each stage extends
    // the truncated orbit with its analytic linear-regime tails (creep along
    // the weak unstable direction on the left, contraction along the stable
    // direction on the right), rebuilds the mesh, and re-converges.
    let mut stage = 0usize;
    loop {
        let d0 = conds.delta0_sq.sqrt();
        let d1 = conds.delta1_sq.sqrt();
        let done0 = d0 <= opts.delta0_target * 1.0001;
        let done1 = d1 <= opts.delta1_target * 1.0001;
        if done0 && done1 {
            break;
        }
        let new_d0 = if done0 { d0 } else { (d0 * 0.3).max(opts.delta0_target) };
        let new_d1 = if done1 { d1 } else { (d1 * 0.15).max(opts.delta1_target) };
        let p_here = conds.params(&sol.q);
        let frame_here = saddle_frame(&p_here, Some(&conds.frame_ref.point), Some(&conds.frame_ref))?;
        sol = extend_tails(&sol, &frame_here, new_d0, new_d1, opts.n_intervals);
        conds.delta0_sq = new_d0 * new_d0;
        conds.delta1_sq = new_d1 * new_d1;
        let report = bvp_newton(&system, &conds, &mut sol, None, &opts.newton);
        if std::env::var("HRBIF_DEBUG").is_ok() {
            match &report {
                Ok(r) => eprintln!(
                    "  shrink stage {stage}: d0={new_d0:.2e} d1={new_d1:.2e} tau={:.1} iters={} res={:.2e}",
                    sol.q[0], r.iterations, r.residual
                ),
                Err(e) => eprintln!(
                    "  shrink stage {stage}: d0={new_d0:.2e} d1={new_d1:.2e} tau={:.1} FAILED: {e}",
                    sol.q[0]
                ),
            }
        }
        report?;
        stage += 1;
        if stage > 60 {
            return Err(Error::domain("endpoint shrink did not terminate"));
        }
    }

    let final_params = conds.params(&sol.q);
    let final_frame = saddle_frame(&final_params, Some(&frame.point), Some(&frame))?;
    Ok(HomoclinicSolution {
        sol,
        frame: final_frame,
        base: *p,
        q_b: None,
        q_i: Some(1),
        delta0: conds.delta0_sq.sqrt(),
        delta1: conds.delta1_sq.sqrt(),
    })
}

/// Rebuild a solution on an arclength-equidistributed mesh of the same size.
pub fn remesh(sol: &BvpSolution, n_intervals: usize) -> BvpSolution {
    let samples: Vec<(f64, DVector<f64>)> = sol.sample(4 * sol.n_intervals.max(n_intervals));
    let breaks = equidistributed_breaks(&samples, n_intervals);
    solution_from_profile(sol.n, &breaks, sol.q.clone(), |s| sol.eval(s))
}

/// Extend a truncated orbit toward the saddle at both ends using the local
/// linear dynamics: the new profile is the analytic creep segment, then the
/// old profile, then the analytic contraction segment. Transit time and mesh
/// are rebuilt accordingly.
pub fn extend_tails_pub(
    sol: &BvpSolution,
    frame: &SaddleFrame,
    new_d0: f64,
    new_d1: f64,
    n_intervals: usize,
) -> BvpSolution {
    extend_tails(sol, frame, new_d0, new_d1, n_intervals)
}

fn extend_tails(
    sol: &BvpSolution,
    frame: &SaddleFrame,
    new_d0: f64,
    new_d1: f64,
    n_intervals: usize,
) -> BvpSolution {
    let tau = sol.q[0];
    let u0 = sol.u0();
    let u1 = sol.u1();
    let dev0 = Vector3::new(u0[0], u0[1], u0[2]) - frame.point;
    let dev1 = Vector3::new(u1[0], u1[1], u1[2]) - frame.point;
    let d0_old = dev0.norm();
    let d1_old = dev1.norm();
    let lam_uu = frame.lambda_uu().max(1e-9);
    let lam_u = frame.lambda_u().max(1e-9);
    let lam_s = frame.lambda_s().min(-1e-9);
    // Decompose the departure deviation in the unstable eigenbasis so each
    // mode is transported backward with its own rate.
    let a_uu = frame.psi[0].dot(&dev0);
    let a_u = frame.psi[1].dot(&dev0);
    let t_ext0 = if new_d0 < d0_old {
        (d0_old / new_d0).ln() / lam_u
    } else {
        0.0
    };
    let t_ext1 = if new_d1 < d1_old {
        (d1_old / new_d1).ln() / (-lam_s)
    } else {
        0.0
    };
    let tau_new = tau + t_ext0 + t_ext1;
    let profile = |s: f64| -> DVector<f64> {
        let t = s * tau_new;
        let v = if t <= t_ext0 {
            let dt = t - t_ext0;
            frame.point
                + frame.v[0] * (a_uu * (lam_uu * dt).exp())
                + frame.v[1] * (a_u * (lam_u * dt).exp())
        } else if t <= t_ext0 + tau {
            let inner = sol.eval((t - t_ext0) / tau);
            Vector3::new(inner[0], inner[1], inner[2])
        } else {
            frame.point + dev1 * (lam_s * (t - t_ext0 - tau)).exp()
        };
        DVector::from_column_slice(v.as_slice())
    };
    // Three-zone mesh: the exponential tails take uniform-in-time nodes
    // (uniform in log-distance, about 1.5 e-foldings per interval, which a
    // quartic represents comfortably); the excursion in between is
    // arclength-equidistributed.
    let d_gate = 0.05;
    let t_tail0 = if new_d0 < d_gate {
        (d_gate / new_d0).ln() / lam_u
    } else {
        0.0
    };
    let t_tail1 = if new_d1 < d_gate {
        (d_gate / new_d1).ln() / (-lam_s)
    } else {
        0.0
    };
    let t_tail0 = t_tail0.min(0.45 * tau_new);
    let t_tail1 = t_tail1.min(0.2 * tau_new);
    let n_tail0 = ((lam_u * t_tail0) / 1.5).ceil() as usize + 1;
    let n_tail1 = (((-lam_s) * t_tail1) / 1.5).ceil() as usize + 1;
    let n_mid = n_intervals.saturating_sub(n_tail0 + n_tail1).max(8);
    let s_tail0 = t_tail0 / tau_new;
    let s_tail1 = t_tail1 / tau_new;

    let mut breaks = Vec::with_capacity(n_intervals + 1);
    for k in 0..n_tail0 {
        breaks.push(s_tail0 * k as f64 / n_tail0 as f64);
    }
    // Middle zone equidistributed on a dense sampling.
    let mid_samples: Vec<(f64, DVector<f64>)> = (0..5000)
        .map(|k| {
            let s = s_tail0 + (1.0 - s_tail0 - s_tail1) * k as f64 / 4999.0;
            (s, profile(s))
        })
        .collect();
    // Interior values come back in the samples' own coordinates; only the
    // first and last are pinned to 0 and 1 by the helper, so override them
    // with the zone bounds.
    let mid_breaks = equidistributed_breaks(&mid_samples, n_mid);
    let m_last = mid_breaks.len() - 1;
    for (k, &mb) in mid_breaks.iter().enumerate() {
        let s = if k == 0 {
            s_tail0
        } else if k == m_last {
            1.0 - s_tail1
        } else {
            mb
        };
        breaks.push(s);
    }
    for k in 1..=n_tail1 {
        breaks.push(1.0 - s_tail1 + s_tail1 * k as f64 / n_tail1 as f64);
    }
    for i in 1..breaks.len() {
        if breaks[i] <= breaks[i - 1] {
            breaks[i] = breaks[i - 1] + 1e-12;
        }
    }
    *breaks.last_mut().unwrap() = 1.0;

    let mut q = sol.q.clone();
    q[0] = tau_new;
    solution_from_profile(sol.n, &breaks, q, profile)
}

/// Inclination-flip test: the bounded solution of the adjoint variational
/// equation along the orbit is computed as a companion linear BVP; the
/// returned scalar is the normalised weak-dual component at the arrival end
/// (sign changes across an inclination flip).
pub fn inclination_flip_test(hom: &HomoclinicSolution) -> Result<f64> {
    if hom.frame.kind != EquilibriumKind::RealSaddle2U {
        return Err(Error::domain(
            "inclination-flip test requires a real saddle",
        ));
    }
    let params = hom.params();
    let frame = &hom.frame;
    let profile = |s: f64| {
        let u = hom.sol.eval(s);
        Vector3::new(u[0], u[1], u[2])
    };
    let jacobian = move |u: &Vector3<f64>| hr_jacobian(u, &params);
    normal_transport_test(
        &profile,
        &jacobian,
        hom.transit_time(),
        &frame.v,
        &frame.psi[2],
    )
}

/// Orientation of the unstable-manifold normal transported along the orbit.
///
/// The normal w to the plane carried by the variational flow obeys the
/// adjugate equation w' = (tr J - J^T) w, whose dominant forward mode is
/// exactly that normal (growth rate lambda_uu + lambda_u, far below the
/// stable rate that makes the raw adjoint span an unrepresentable range).
/// Starting from the exact normal of the unstable eigenplane and
/// renormalising underway, the arrival value is the adjoint orientation up
/// to a positive factor; its weak-dual component changes sign exactly at an
/// inclination flip.
pub fn normal_transport_test(
    profile: &dyn Fn(f64) -> Vector3<f64>,
    jacobian: &dyn Fn(&Vector3<f64>) -> nalgebra::Matrix3<f64>,
    tau: f64,
    v: &[Vector3<f64>; 3],
    start_direction: &Vector3<f64>,
) -> Result<f64> {
    // w(0): normal to span(v_uu, v_u), oriented along the stable dual.
    let mut w = v[0].cross(&v[1]);
    if w.dot(start_direction) < 0.0 {
        w = -w;
    }
    w /= w.norm();
    let rhs = |s: f64, ww: &Vector3<f64>| -> Vector3<f64> {
        let u = profile(s);
        let j = jacobian(&u);
        (ww * j.trace() - j.transpose() * ww) * tau
    };
    // Fixed-step RK5 with renormalisation; step resolution tied to the
    // fastest rate along the orbit.
    let n_steps = (8.0 * tau).ceil().max(2000.0) as usize;
    let h = 1.0 / n_steps as f64;
    let mut s = 0.0;
    for _ in 0..n_steps {
        w = crate::integrate::rk5_fixed_step(&mut |ss, y: &Vector3<f64>| rhs(ss, y), s, &w, h);
        let n = w.norm();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::domain("normal transport lost the orientation"));
        }
        w /= n;
        s += h;
    }
    Ok(w.dot(&v[1]))
}

/// A generic truncated-orbit adjoint problem: the orbit profile and its
/// Jacobian are supplied as closures so synthetic verification systems can
/// reuse the solver.
pub struct AdjointProblem<'a> {
    pub profile: &'a dyn Fn(f64) -> Vector3<f64>,
    /// Unscaled vector-field Jacobian at a state.
    pub jacobian: &'a dyn Fn(&Vector3<f64>) -> nalgebra::Matrix3<f64>,
    pub tau: f64,
    /// Right eigenvectors (v_uu, v_u, v_s) at the saddle.
    pub v: [Vector3<f64>; 3],
    /// Unit vector for the slack forcing (any direction not orthogonal to
    /// the true solution works; the stable dual is a safe choice).
    pub w: Vector3<f64>,
    pub breaks: &'a [f64],
    /// Expected departure decay rate for the initial guess.
    pub lambda_u: f64,
    /// Departure-end anchor direction (the stable dual).
    pub psi_s: Vector3<f64>,
}

/// Adjoint variational system psi' = -tau J(u(s))^T psi + kappa w, where the
/// slack kappa absorbs the truncation defect and w is a fixed vector.
struct AdjointSystem<'a> {
    prob: &'a AdjointProblem<'a>,
}

impl BvpSystem for AdjointSystem<'_> {
    fn dim(&self) -> usize {
        3
    }
    fn n_globals(&self) -> usize {
        1
    }
    fn rhs(&self, s: f64, u: &DVector<f64>, q: &DVector<f64>) -> DVector<f64> {
        let orbit = (self.prob.profile)(s);
        let j = (self.prob.jacobian)(&orbit);
        let psi = Vector3::new(u[0], u[1], u[2]);
        let out = -j.transpose() * psi * self.prob.tau + self.prob.w * q[0];
        DVector::from_column_slice(out.as_slice())
    }
    fn jac_u(&self, s: f64, _u: &DVector<f64>, _q: &DVector<f64>) -> DMatrix<f64> {
        let orbit = (self.prob.profile)(s);
        let j = (self.prob.jacobian)(&orbit);
        let m = -j.transpose() * self.prob.tau;
        DMatrix::from_column_slice(3, 3, m.as_slice())
    }
    fn jac_q(&self, _s: f64, _u: &DVector<f64>, _q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(3, 1, self.prob.w.as_slice())
    }
}

/// Boundary conditions of the adjoint problem: no strong/weak dual
/// components at departure, no stable-dual component at arrival, unit
/// normalisation of the departure component along v_s.
struct AdjointConditions {
    v: [Vector3<f64>; 3],
}

impl BvpConditions<AdjointSystem<'_>> for AdjointConditions {
    fn count(&self) -> usize {
        4
    }
    fn eval(&self, _system: &AdjointSystem, sol: &BvpSolution) -> DVector<f64> {
        let u0 = sol.u0();
        let u1 = sol.u1();
        let a = Vector3::new(u0[0], u0[1], u0[2]);
        let b = Vector3::new(u1[0], u1[1], u1[2]);
        DVector::from_vec(vec![
            a.dot(&self.v[0]),
            a.dot(&self.v[1]),
            b.dot(&self.v[2]),
            a.dot(&self.v[2]) - 1.0,
        ])
    }
}

/// Solve the adjoint BVP; returns the discrete solution.
pub fn solve_adjoint(prob: &AdjointProblem) -> Result<BvpSolution> {
    let system = AdjointSystem { prob };
    let conds = AdjointConditions { v: prob.v };
    let lam_u = prob.lambda_u;
    let tau = prob.tau;
    let psi_s = prob.psi_s;
    let mut sol = solution_from_profile(
        3,
        prob.breaks,
        DVector::from_vec(vec![0.0]),
        |s| {
            let decay = (-lam_u * tau * s).exp();
            DVector::from_column_slice((psi_s * decay).as_slice())
        },
    );
    let newton = BvpNewtonSettings {
        tol: 1e-9,
        max_iters: 6,
        max_step: 1e12,
    };
    bvp_newton(&system, &conds, &mut sol, None, &newton)?;
    Ok(sol)
}

fn adjoint_solution(hom: &HomoclinicSolution) -> Result<BvpSolution> {
    let params = hom.params();
    let frame = &hom.frame;
    // A coarse companion mesh suffices: only the sign and leading component
    // of the adjoint at the arrival end are used.
    let coarse = extend_tails(&hom.sol, frame, hom.delta0, hom.delta1, 140);
    let profile = |s: f64| {
        let u = coarse.eval(s);
        Vector3::new(u[0], u[1], u[2])
    };
    let jacobian = move |u: &Vector3<f64>| hr_jacobian(u, &params);
    let prob = AdjointProblem {
        profile: &profile,
        jacobian: &jacobian,
        tau: coarse.q[0],
        v: frame.v,
        w: frame.psi[2] / frame.psi[2].norm(),
        breaks: &coarse.breaks,
        lambda_u: frame.lambda_u(),
        psi_s: frame.psi[2],
    };
    solve_adjoint(&prob)
}

/// Belyakov and resonance scalars at the saddle.
pub fn saddle_tests(frame: &SaddleFrame) -> (f64, f64) {
    let (_, belyakov, resonance) = classify_eigenvalues(&frame.eigenvalues);
    (belyakov, resonance)
}

/// All four homoclinic test functions.
pub fn homoclinic_tests(hom: &HomoclinicSolution) -> HomoclinicTests {
    let (belyakov, resonance) = saddle_tests(&hom.frame);
    HomoclinicTests {
        orbit_flip: hom.orbit_flip_test().unwrap_or(f64::NAN),
        inclination_flip: inclination_flip_test(hom).unwrap_or(f64::NAN),
        belyakov,
        resonance,
    }
}

/// Result of a two-parameter homoclinic trace.
#[derive(Debug)]
pub struct HomoclinicBranch {
    pub branch: BvpBranch,
    pub base: ModelParams,
    pub delta0: f64,
    pub delta1: f64,
    /// Index after which both (b, I) tangent components reverse, if the
    /// branch rounds its sharp turn.
    pub turning_point: Option<usize>,
    /// Tip inferred from the closure fallback when the corrector stalled.
    pub inferred_tip: Option<(f64, f64)>,
}

impl HomoclinicBranch {
    /// (b, I) trace.
    pub fn parameter_trace(&self) -> Vec<(f64, f64)> {
        self.branch
            .points
            .iter()
            .map(|pt| (pt.sol.q[1], pt.sol.q[2]))
            .collect()
    }

    pub fn solution_at(&self, idx: usize) -> HomoclinicSolution {
        let pt = &self.branch.points[idx];
        let p = ModelParams {
            b: pt.sol.q[1],
            i: pt.sol.q[2],
            ..self.base
        };
        let frame = saddle_frame(&p, None, None).expect("frame along branch");
        HomoclinicSolution {
            sol: pt.sol.clone(),
            frame,
            base: self.base,
            q_b: Some(1),
            q_i: Some(2),
            delta0: self.delta0,
            delta1: self.delta1,
        }
    }
}

/// Continue a homoclinic solution in (b, I) in one direction; monitors
/// orbit-flip, inclination-flip, Belyakov and resonance test functions.
pub fn continue_homoclinic(
    start: &HomoclinicSolution,
    direction: f64,
    settings: &BvpContinuationSettings,
) -> Result<HomoclinicBranch> {
    let base = start.base;
    let p_start = start.params();
    // Rebuild the start solution with q = [tau, b, I].
    let mut sol = start.sol.clone();
    let tau = sol.q[0];
    sol.q = DVector::from_vec(vec![tau, p_start.b, p_start.i]);
    let system = HrBvpSystem {
        base,
        free_b: Some(1),
        free_i: Some(2),
        n_globals: 3,
    };
    let delta0_sq = start.delta0 * start.delta0;
    let delta1_sq = start.delta1 * start.delta1;
    let frame_cell = std::cell::RefCell::new(start.frame.clone());
    let base_for_conds = ModelParams { ..base };

    let make_conditions = |at: &BvpSolution| -> Box<dyn BvpConditions<HrBvpSystem>> {
        // Refresh the alignment frame at the current point.
        let p_here = ModelParams {
            b: at.q[1],
            i: at.q[2],
            ..base_for_conds
        };
        let mut reference = frame_cell.borrow_mut();
        if let Ok(f) = saddle_frame(&p_here, Some(&reference.point), Some(&reference)) {
            *reference = f;
        }
        Box::new(HomoclinicConditions {
            frame_ref: reference.clone(),
            base: base_for_conds,
            q_b: Some(1),
            q_i: Some(2),
            delta0_sq,
            delta1_sq,
            homotopy: None,
            pins: vec![],
        })
    };

    let tests = vec![
        TestSpec {
            kind: SpecialPointKind::OrbitFlip,
            exclude_if_branch_point: false,
        },
        TestSpec {
            kind: SpecialPointKind::InclinationFlip,
            exclude_if_branch_point: false,
        },
        TestSpec {
            kind: SpecialPointKind::Belyakov,
            exclude_if_branch_point: false,
        },
        TestSpec {
            kind: SpecialPointKind::Resonance,
            exclude_if_branch_point: false,
        },
    ];

    let monitor = |_sys: &HrBvpSystem, at: &BvpSolution, _tangent: &DVector<f64>| -> Vec<f64> {
        let p_here = ModelParams {
            b: at.q[1],
            i: at.q[2],
            ..base
        };
        let reference = frame_cell.borrow().clone();
        let frame = match saddle_frame(&p_here, Some(&reference.point), Some(&reference)) {
            Ok(f) => f,
            Err(_) => return vec![f64::NAN; 4],
        };
        let hom = HomoclinicSolution {
            sol: at.clone(),
            frame: frame.clone(),
            base,
            q_b: Some(1),
            q_i: Some(2),
            delta0: delta0_sq.sqrt(),
            delta1: delta1_sq.sqrt(),
        };
        let of = hom.orbit_flip_test().unwrap_or(f64::NAN);
        let iff = inclination_flip_test(&hom).unwrap_or(f64::NAN);
        let (bel, res) = saddle_tests(&frame);
        vec![of, iff, bel, res]
    };

    let branch = continue_bvp(
        &system,
        make_conditions,
        &sol,
        direction,
        settings,
        &tests,
        monitor,
    )?;

    let n_mesh = sol.mesh.len();
    let turning_point = detect_turning_point(&branch, n_mesh);
    Ok(HomoclinicBranch {
        branch,
        base,
        delta0: delta0_sq.sqrt(),
        delta1: delta1_sq.sqrt(),
        turning_point,
        inferred_tip: None,
    })
}

/// Find the first index where both parameter components of the tangent
/// reverse sign (the sharp U-turn).
pub fn detect_turning_point(branch: &BvpBranch, n_mesh: usize) -> Option<usize> {
    for i in 0..branch.points.len().saturating_sub(1) {
        let t0 = &branch.points[i].tangent;
        let t1 = &branch.points[i + 1].tangent;
        let b_flip = t0[n_mesh + 1] * t1[n_mesh + 1] < 0.0;
        let i_flip = t0[n_mesh + 2] * t1[n_mesh + 2] < 0.0;
        if b_flip && i_flip {
            return Some(i);
        }
    }
    None
}

/// Merge two directional traces from a common start into one branch with the
/// start in the middle; applies the near-tip closure fallback: if either run
/// stalled with its endpoint within `closure_tol` (in parameters) of the
/// other run's trace, the tip is reported as inferred at the closest pair.
pub fn stitch_branches(
    backward: HomoclinicBranch,
    forward: HomoclinicBranch,
    closure_tol: f64,
) -> HomoclinicBranch {
    let mut points = Vec::new();
    let mut specials = Vec::new();
    let nb = backward.branch.points.len();
    for (i, pt) in backward.branch.points.iter().enumerate().rev() {
        let orig = nb - 1 - i;
        for sp in &backward.branch.special_points {
            if sp.after_index == i {
                let mut sp = sp.clone();
                sp.after_index = orig.saturating_sub(1);
                specials.push(sp);
            }
        }
        points.push(pt.clone());
    }
    let offset = points.len().saturating_sub(1);
    for (i, pt) in forward.branch.points.iter().enumerate().skip(1) {
        for sp in &forward.branch.special_points {
            if sp.after_index == i - 1 {
                let mut sp = sp.clone();
                sp.after_index = offset + i - 1;
                specials.push(sp);
            }
        }
        points.push(pt.clone());
    }
    let mut merged = BvpBranch {
        points,
        special_points: specials,
        termination: forward.branch.termination.clone(),
    };
    merged.special_points.sort_by_key(|sp| sp.after_index);

    let n_mesh = merged
        .points
        .first()
        .map(|p| p.sol.mesh.len())
        .unwrap_or(0);
    let turning_point = detect_turning_point(&merged, n_mesh);

    // Closure fallback: if a run stalled, test whether its endpoint nearly
    // meets the other trace.
    let mut inferred_tip = None;
    let stalled_b = matches!(backward.branch.termination, Termination::StepUnderflow { .. });
    let stalled_f = matches!(forward.branch.termination, Termination::StepUnderflow { .. });
    if (stalled_b || stalled_f) && turning_point.is_none() {
        if let (Some(eb), Some(ef)) = (backward.branch.points.last(), forward.branch.points.last())
        {
            let db = eb.sol.q[1] - ef.sol.q[1];
            let di = eb.sol.q[2] - ef.sol.q[2];
            if (db * db + di * di).sqrt() < closure_tol {
                inferred_tip = Some((
                    0.5 * (eb.sol.q[1] + ef.sol.q[1]),
                    0.5 * (eb.sol.q[2] + ef.sol.q[2]),
                ));
            }
        }
    }

    HomoclinicBranch {
        branch: merged,
        base: forward.base,
        delta0: forward.delta0,
        delta1: forward.delta1,
        turning_point,
        inferred_tip,
    }
}
