//! Poincare-section event location on the dense output.

use nalgebra::SVector;

use super::rk::DenseStep;
use super::{integrate_streaming, IntegrateOptions};
use crate::error::Result;
use crate::model::{hr_rhs, ModelParams};

/// Which sign changes of the section function count as crossings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossingDirection {
    /// Coordinate increasing through the level.
    Up,
    /// Coordinate decreasing through the level.
    Down,
    Either,
}

/// A coordinate-plane Poincare section `y[coord] = level`.
#[derive(Debug, Clone, Copy)]
pub struct Section {
    pub coord: usize,
    pub level: f64,
    pub direction: CrossingDirection,
}

impl Section {
    pub fn new(coord: usize, level: f64, direction: CrossingDirection) -> Self {
        Section {
            coord,
            level,
            direction,
        }
    }

    fn g<const N: usize>(&self, y: &SVector<f64, N>) -> f64 {
        y[self.coord] - self.level
    }

    fn matches(&self, g0: f64, g1: f64) -> bool {
        match self.direction {
            CrossingDirection::Up => g0 < 0.0 && g1 >= 0.0,
            CrossingDirection::Down => g0 > 0.0 && g1 <= 0.0,
            CrossingDirection::Either => g0 * g1 <= 0.0 && g0 != g1,
        }
    }

    /// Locate a crossing inside one dense step, if any. Returns (t, state)
    /// with |y[coord] - level| <= 1e-10.
    pub fn locate_in_step<const N: usize>(&self, step: &DenseStep<N>) -> Option<(f64, SVector<f64, N>)> {
        let g0 = self.g(&step.y0);
        let g1 = self.g(&step.y1);
        if !self.matches(g0, g1) {
            return None;
        }
        // Hybrid secant/bisection on theta.
        let (mut a, mut b) = (0.0f64, 1.0f64);
        let (mut ga, mut gb) = (g0, g1);
        let mut theta = 0.5;
        let mut g_mid = f64::INFINITY;
        for _ in 0..200 {
            // Secant proposal, clamped into the bracket interior.
            let sec = if (gb - ga).abs() > 1e-300 {
                a - ga * (b - a) / (gb - ga)
            } else {
                0.5 * (a + b)
            };
            theta = if sec > a && sec < b { sec } else { 0.5 * (a + b) };
            let y = step.eval_theta(theta);
            g_mid = self.g(&y);
            if g_mid.abs() <= 1e-13 || (b - a) < 1e-16 {
                break;
            }
            if (ga < 0.0) == (g_mid < 0.0) {
                a = theta;
                ga = g_mid;
            } else {
                b = theta;
                gb = g_mid;
            }
        }
        if g_mid.abs() > 1e-10 {
            // Fall back to the best bracket endpoint.
            theta = if ga.abs() < gb.abs() { a } else { b };
        }
        let y = step.eval_theta(theta);
        if self.g(&y).abs() > 1e-10 {
            return None;
        }
        Some((step.t0 + theta * step.h, y))
    }
}

/// Result of a first-return computation.
#[derive(Debug, Clone)]
pub enum ReturnOutcome<const N: usize> {
    Hit { state: SVector<f64, N>, time: f64 },
    /// The section was never crossed in the requested direction before t_max.
    NoCrossing { t_final: f64 },
}

/// First return of the Hindmarsh-Rose flow to a section, starting off it.
pub fn poincare_first_return(
    y0: SVector<f64, 3>,
    section: &Section,
    p: &ModelParams,
    t_max: f64,
) -> Result<ReturnOutcome<3>> {
    first_return(|_, y| hr_rhs(y, p), y0, section, t_max, &IntegrateOptions::default())
}

/// Generic first return for any vector field.
pub fn first_return<F, const N: usize>(
    f: F,
    y0: SVector<f64, N>,
    section: &Section,
    t_max: f64,
    opts: &IntegrateOptions,
) -> Result<ReturnOutcome<N>>
where
    F: FnMut(f64, &SVector<f64, N>) -> SVector<f64, N>,
{
    let g0 = y0[section.coord] - section.level;
    if g0.abs() < 1e-9 {
        return Err(crate::error::Error::domain(
            "initial condition lies on the section",
        ));
    }
    let mut hit: Option<(f64, SVector<f64, N>)> = None;
    let (t_final, _) = integrate_streaming(f, y0, (0.0, t_max), opts, |step| {
        if let Some(found) = section.locate_in_step(step) {
            hit = Some(found);
            false
        } else {
            true
        }
    })?;
    Ok(match hit {
        Some((time, state)) => ReturnOutcome::Hit { state, time },
        None => ReturnOutcome::NoCrossing { t_final },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Vector2, Vector3};

    #[test]
    fn circular_flow_crossing_refined_to_tolerance() {
        // Rotation: x' = -y, y' = x from (1, 0): crosses x = 0 upward in y?
        // Use section y = 0.5 crossed upward; exact time asin(0.5).
        let section = Section::new(1, 0.5, CrossingDirection::Up);
        let out = first_return(
            |_, v: &Vector2<f64>| Vector2::new(-v[1], v[0]),
            Vector2::new(1.0, 0.0),
            &section,
            3.0,
            &IntegrateOptions::default(),
        )
        .unwrap();
        match out {
            ReturnOutcome::Hit { state, time } => {
                assert!((state[1] - 0.5).abs() <= 1e-10);
                assert!((time - 0.5f64.asin()).abs() < 1e-8);
            }
            _ => panic!("expected a hit"),
        }
    }

    #[test]
    fn hr_crossing_z_level() {
        // The bursting orbit at (2.6, 2) oscillates in z roughly between 1.6
        // and 2.3 after transients; a z = 2.0 section is crossed.
        let p = ModelParams::new(2.6, 2.0);
        let warm = super::super::integrate_hr(
            &p,
            Vector3::zeros(),
            (0.0, 500.0),
            &IntegrateOptions::default(),
        )
        .unwrap();
        let y0 = warm.final_state();
        let section = Section::new(2, 2.0, CrossingDirection::Up);
        let out = poincare_first_return(y0, &section, &p, 500.0).unwrap();
        match out {
            ReturnOutcome::Hit { state, .. } => {
                assert!((state[2] - 2.0).abs() <= 1e-10);
            }
            ReturnOutcome::NoCrossing { .. } => panic!("expected crossing of z = 2"),
        }
    }

    #[test]
    fn unreachable_section_reports_no_hit() {
        // Bounded bursting orbit never reaches z = 50.
        let p = ModelParams::new(2.6, 2.0);
        let section = Section::new(2, 50.0, CrossingDirection::Up);
        let out = poincare_first_return(Vector3::zeros(), &section, &p, 200.0).unwrap();
        assert!(matches!(out, ReturnOutcome::NoCrossing { .. }));
    }

    #[test]
    fn on_section_start_rejected() {
        let p = ModelParams::new(2.6, 2.0);
        let section = Section::new(2, 0.0, CrossingDirection::Either);
        let r = poincare_first_return(Vector3::zeros(), &section, &p, 10.0);
        assert!(r.is_err());
    }
}
