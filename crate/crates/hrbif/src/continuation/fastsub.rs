//! One-parameter bifurcation diagram of the fast subsystem in the frozen
//! slow variable z: the equilibrium curve with its two folds and the Hopf
//! point, plus the periodic-orbit branch continued from near the Hopf until
//! the period blows up at the approach to the fast-subsystem homoclinic.

use nalgebra::{DMatrix, DVector, Vector2};

use super::{
    continue_branch, Branch, ContinuationProblem, ContinuationSettings, SpecialPointKind,
};
use crate::bvp::mesh::{uniform_breaks, BvpNewtonSettings};
use crate::bvp::{continue_periodic, solve_periodic, BvpContinuationSettings, FastBvpSystem};
use crate::error::{Error, Result};
use crate::integrate::{
    first_return, integrate_with_options, CrossingDirection, IntegrateOptions, ReturnOutcome,
    Section,
};
use crate::model::{critical_manifold_y, fast_jacobian, fast_rhs, ModelParams};

/// The fast-subsystem equilibrium problem: unknowns (x, y), parameter z.
pub struct FastEquilibriumProblem {
    pub params: ModelParams,
}

impl ContinuationProblem for FastEquilibriumProblem {
    fn dim(&self) -> usize {
        2
    }

    fn residual(&self, u: &DVector<f64>, z: f64) -> DVector<f64> {
        let f = fast_rhs(&Vector2::new(u[0], u[1]), z, &self.params);
        DVector::from_column_slice(f.as_slice())
    }

    fn jacobian_u(&self, u: &DVector<f64>, _z: f64) -> DMatrix<f64> {
        let j = fast_jacobian(&Vector2::new(u[0], u[1]), &self.params);
        DMatrix::from_column_slice(2, 2, j.as_slice())
    }

    fn jacobian_lambda(&self, _u: &DVector<f64>, _z: f64) -> DVector<f64> {
        DVector::from_vec(vec![-1.0, 0.0])
    }

    fn stability_matrix(&self, u: &DVector<f64>, _z: f64) -> Option<DMatrix<f64>> {
        let j = fast_jacobian(&Vector2::new(u[0], u[1]), &self.params);
        Some(DMatrix::from_column_slice(2, 2, j.as_slice()))
    }
}

/// One point of the periodic-orbit branch summary.
#[derive(Debug, Clone)]
pub struct CyclePoint {
    pub z: f64,
    pub period: f64,
    pub x_min: f64,
    pub x_max: f64,
}

/// The assembled diagram.
#[derive(Debug)]
pub struct FastSubsystemDiagram {
    pub equilibrium_branch: Branch,
    /// Fold points as (x, z), ordered by x descending (f1 at x = 0 first).
    pub folds: Vec<(f64, f64)>,
    /// Hopf point (x, y, z) if found in range.
    pub hopf: Option<(f64, f64, f64)>,
    /// Periodic branch from near the Hopf toward the homoclinic.
    pub cycles: Vec<CyclePoint>,
    /// Diagnostic when parts are missing.
    pub warnings: Vec<String>,
}

/// Settings for the diagram runs.
#[derive(Debug, Clone)]
pub struct FastDiagramSettings {
    /// Stop the cycle branch when the period exceeds this cap.
    pub period_cap: f64,
    /// Mesh intervals for cycle solves.
    pub n_intervals: usize,
    /// Offset below the Hopf point for the DNS cycle seed.
    pub seed_offset: f64,
}

impl Default for FastDiagramSettings {
    fn default() -> Self {
        FastDiagramSettings {
            period_cap: 60.0,
            n_intervals: 60,
            seed_offset: 0.05,
        }
    }
}

/// Compute the full diagram over a z-range spanning the folds.
pub fn fast_subsystem_diagram(
    p: &ModelParams,
    z_range: (f64, f64),
    settings: &FastDiagramSettings,
) -> Result<FastSubsystemDiagram> {
    let problem = FastEquilibriumProblem { params: *p };
    let (z_lo, z_hi) = (z_range.0.min(z_range.1), z_range.0.max(z_range.1));

    // Start on the lower branch at the high-z end: x ~ -(z - 1 - I)^(1/3).
    let x0 = -(z_hi - 1.0 - p.i).abs().cbrt().max(0.1);
    let mut x = x0;
    for _ in 0..100 {
        let f = 1.0 + p.i + (p.b - 5.0) * x * x - x * x * x - z_hi;
        let df = 2.0 * (p.b - 5.0) * x - 3.0 * x * x;
        if df.abs() < 1e-300 {
            break;
        }
        let step = f / df;
        x -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    let start = DVector::from_vec(vec![x, critical_manifold_y(x)]);

    let cont = ContinuationSettings {
        ds0: 0.01,
        ds_max: 0.05,
        max_steps: 4000,
        lambda_range: Some((z_lo, z_hi + 1.0)),
        ..Default::default()
    };
    let branch = continue_branch(&problem, &start, z_hi, -1.0, &cont)?;

    let mut warnings = Vec::new();
    let mut folds: Vec<(f64, f64)> = branch
        .special_points
        .iter()
        .filter(|sp| sp.kind == SpecialPointKind::Fold)
        .map(|sp| (sp.u[0], sp.lambda))
        .collect();
    folds.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let hopf = branch
        .special_points
        .iter()
        .find(|sp| sp.kind == SpecialPointKind::Hopf)
        .map(|sp| (sp.u[0], sp.u[1], sp.lambda));
    if hopf.is_none() {
        warnings.push("Hopf point not found in the z range".to_string());
    }

    // Periodic branch seeded by DNS slightly below the Hopf.
    let mut cycles = Vec::new();
    if let Some((hx, hy, hz)) = hopf {
        match cycle_branch(p, (hx, hy, hz), z_lo, settings) {
            Ok(c) => cycles = c,
            Err(e) => warnings.push(format!("cycle branch failed: {e}")),
        }
    }

    Ok(FastSubsystemDiagram {
        equilibrium_branch: branch,
        folds,
        hopf,
        cycles,
        warnings,
    })
}

fn cycle_branch(
    p: &ModelParams,
    hopf: (f64, f64, f64),
    z_lo: f64,
    settings: &FastDiagramSettings,
) -> Result<Vec<CyclePoint>> {
    let (hx, hy, hz) = hopf;
    let z_seed = hz - settings.seed_offset;
    // DNS onto the stable cycle.
    let opts = IntegrateOptions::with_tols(1e-10, 1e-12);
    let pp = *p;
    let f = move |_t: f64, u: &Vector2<f64>| fast_rhs(u, z_seed, &pp);
    let warm = integrate_with_options(
        f,
        Vector2::new(hx + 0.05, hy),
        (0.0, 300.0),
        &opts,
    )?;
    let y_attr = warm.final_state();
    // Period from the first return to a section through the seed point.
    let section = Section::new(1, y_attr[1], CrossingDirection::Up);
    let start_off = {
        // Step off the section slightly along the flow.
        let g = fast_rhs(&y_attr, z_seed, p);
        y_attr + g * 1e-3
    };
    let ret = first_return(f, start_off, &section, 200.0, &opts)?;
    let (loop_state, period_est) = match ret {
        ReturnOutcome::Hit { state, time } => (state, time),
        ReturnOutcome::NoCrossing { .. } => {
            return Err(Error::domain("no periodic return found below the Hopf"))
        }
    };
    let loop_traj = integrate_with_options(f, loop_state, (0.0, period_est), &opts)?;

    let system = FastBvpSystem {
        base: *p,
        z_base: z_seed,
        free_z: Some(1),
        n_globals: 2,
    };
    let breaks = uniform_breaks(settings.n_intervals);
    let orbit = solve_periodic(
        &system,
        |s| {
            let st = loop_traj.eval(s * period_est).unwrap_or(loop_state);
            DVector::from_vec(vec![st[0], st[1]])
        },
        DVector::from_vec(vec![period_est, z_seed]),
        &breaks,
        &BvpNewtonSettings::default(),
    )?;
    let start_sol = orbit.sol.clone();

    let bvp_settings = BvpContinuationSettings {
        ds0: 0.01,
        ds_max: 0.08,
        max_steps: 600,
        q_ranges: vec![(0, 0.0, settings.period_cap), (1, z_lo, hopf.2 + 0.5)],
        direction_component: start_sol.mesh.len() + 1,
        refine_specials: false,
        ..Default::default()
    };
    let start_orbit = crate::bvp::PeriodicOrbit {
        sol: start_sol,
        multipliers: orbit.multipliers.clone(),
        ill_conditioned: false,
    };
    let branch = continue_periodic(&system, &start_orbit, &bvp_settings, -1.0)?;

    let mut cycles: Vec<CyclePoint> = branch
        .points
        .iter()
        .map(|pt| {
            let xs: Vec<f64> = pt
                .sol
                .sample(120)
                .iter()
                .map(|(_, u)| u[0])
                .collect();
            CyclePoint {
                z: pt.sol.q[1],
                period: pt.sol.q[0],
                x_min: xs.iter().cloned().fold(f64::INFINITY, f64::min),
                x_max: xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();

    // End the branch at the closest approach to the fast-subsystem
    // homoclinic: either the period cap fired, or the period reaches an
    // interior maximum (the cycle brushes the middle-branch saddle and the
    // period decreases again past it). Trim at that peak.
    if let Some((peak_idx, peak)) = cycles
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.period.partial_cmp(&b.1.period).unwrap())
        .map(|(i, c)| (i, c.period))
    {
        let t0 = cycles.first().map(|c| c.period).unwrap_or(0.0);
        let is_interior_peak = peak_idx + 1 < cycles.len()
            && peak > 1.2 * t0
            && cycles[peak_idx + 1..].iter().any(|c| c.period < 0.97 * peak);
        if is_interior_peak {
            cycles.truncate(peak_idx + 1);
        }
    }
    Ok(cycles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{critical_manifold_folds, ManifoldFolds};

    #[test]
    fn diagram_matches_analytic_oracles() {
        let p = ModelParams::new(2.6, 2.0);
        let diagram =
            fast_subsystem_diagram(&p, (0.5, 4.0), &FastDiagramSettings::default()).unwrap();

        // Folds against the analytic roots of 2(b-5)x - 3x^2 = 0.
        let (f1, f2) = match critical_manifold_folds(&p) {
            ManifoldFolds::Pair { first, second } => (first, second),
            _ => panic!("expected two folds"),
        };
        assert_eq!(diagram.folds.len(), 2, "folds: {:?}", diagram.folds);
        let (got1, got2) = (diagram.folds[0], diagram.folds[1]);
        assert!(
            (got1.0 - f1.0).abs() < 1e-8 && (got1.1 - f1.1).abs() < 1e-8,
            "fold f1 {got1:?} vs {f1:?}"
        );
        assert!(
            (got2.0 - f2.0).abs() < 1e-8 && (got2.1 - f2.1).abs() < 1e-8,
            "fold f2 {got2:?} vs {f2:?}"
        );

        // Hopf at the trace-zero root with positive determinant.
        let hopf = diagram.hopf.expect("hopf found");
        let x_h = (p.b - (p.b * p.b - 3.0).sqrt()) / 3.0;
        assert!(
            (hopf.0 - x_h).abs() < 1e-8,
            "hopf x {} vs analytic {x_h}",
            hopf.0
        );

        // Cycle branch reaches a large period with z near the fast-subsystem
        // homoclinic.
        let last = diagram.cycles.last().expect("cycle branch nonempty");
        assert!(
            last.z > 2.3 && last.z < 2.7,
            "cycle endpoint z = {} (period {})",
            last.z,
            last.period
        );
    }
}
