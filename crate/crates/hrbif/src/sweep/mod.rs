//! Brute-force two-parameter behaviour classification over a (b, I) grid.
//!
//! Each cell is simulated past a transient, then classified from its spike
//! train and largest Lyapunov exponent. Cells within a row (fixed I,
//! increasing b) run sequentially so each cell can start from its left
//! neighbour's final state; rows run in parallel.

pub mod render;

pub use render::render_map;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::lyapunov::default_tangent;
use crate::integrate::rk::{StepOutcome, Stepper};
use crate::integrate::spikes::{segment_bursts, spikes_in_step, DEFAULT_GAP_FACTOR};
use crate::integrate::IntegrateOptions;
use crate::model::{hr_jacobian, hr_rhs, ModelParams};

/// Asymptotic behaviour of one parameter cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Behaviour {
    Quiescent,
    /// Tonic spiking with its mean firing frequency.
    Spiking { frequency: f64 },
    /// Regular bursting with the modal number of spikes per burst.
    Bursting { spikes_per_burst: u32 },
    Chaotic,
    /// Could not be classified within the (doubled) measurement window;
    /// kept out of statistics.
    Unresolved,
}

impl Behaviour {
    pub fn tag(&self) -> &'static str {
        match self {
            Behaviour::Quiescent => "quiescent",
            Behaviour::Spiking { .. } => "spiking",
            Behaviour::Bursting { .. } => "bursting",
            Behaviour::Chaotic => "chaotic",
            Behaviour::Unresolved => "unresolved",
        }
    }

    pub fn value(&self) -> f64 {
        match self {
            Behaviour::Spiking { frequency } => *frequency,
            Behaviour::Bursting { spikes_per_burst } => *spikes_per_burst as f64,
            _ => f64::NAN,
        }
    }
}

/// Classification controls.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifySettings {
    pub transient: f64,
    pub measure: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub x_threshold: f64,
    pub gap_factor: f64,
    /// Lyapunov exponent above this is chaotic (per unit time).
    pub chaos_threshold: f64,
    /// ISI coefficient of variation below this is tonic spiking.
    pub cv_threshold: f64,
}

impl Default for ClassifySettings {
    fn default() -> Self {
        ClassifySettings {
            transient: 1000.0,
            measure: 2000.0,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            x_threshold: 0.0,
            gap_factor: DEFAULT_GAP_FACTOR,
            chaos_threshold: 1e-3,
            cv_threshold: 0.05,
        }
    }
}

/// Outcome of a single measurement pass.
struct MeasureOutcome {
    spikes: Vec<f64>,
    lyapunov: f64,
    final_state: Vector3<f64>,
}

/// Integrate transient then measurement window, collecting spike times and
/// the Benettin tangent growth in a single pass over the measurement window.
fn measure(
    p: &ModelParams,
    y0: Vector3<f64>,
    settings: &ClassifySettings,
    measure_window: f64,
) -> Result<MeasureOutcome> {
    let opts = IntegrateOptions::with_tols(settings.rel_tol, settings.abs_tol);
    opts.validate()?;

    let mut y = y0;
    // Transient (also aligns the tangent).
    let mut v = default_tangent::<3>();
    let run = |y_start: Vector3<f64>,
                   v_start: Vector3<f64>,
                   span: f64,
                   mut collect: Option<&mut Vec<f64>>|
     -> Result<(Vector3<f64>, Vector3<f64>, f64)> {
        let mut stepper: Stepper<3> = Stepper::new(opts.rel_tol, opts.abs_tol);
        let mut f = |_t: f64, s: &Vector3<f64>| hr_rhs(s, p);
        let mut t = 0.0;
        let mut yy = y_start;
        let mut vv = v_start;
        let mut log_sum = 0.0;
        let mut h = stepper.initial_step(&mut f, 0.0, &yy, 1.0);
        stepper.reset_fsal();
        let h_floor = 1e-14 * span.max(1.0);
        while t < span {
            if h < h_floor {
                return Err(Error::StepSizeUnderflow {
                    t,
                    h,
                    state: yy.iter().copied().collect(),
                });
            }
            if t + h > span {
                h = span - t;
            }
            match stepper.try_step(&mut f, t, &yy, h) {
                StepOutcome::Accepted { dense, h_next } => {
                    if !dense.y1.iter().all(|u| u.is_finite()) {
                        return Err(Error::NonFiniteState { t: dense.t1() });
                    }
                    // Tangent across the step from the dense interpolant.
                    let mut var_rhs = |tt: f64, w: &Vector3<f64>| {
                        let yv = dense.eval(tt);
                        hr_jacobian(&yv, p) * w
                    };
                    let sub = 4;
                    let hh = dense.h / sub as f64;
                    let mut tt = dense.t0;
                    let mut w = vv;
                    for _ in 0..sub {
                        w = crate::integrate::rk5_fixed_step(&mut var_rhs, tt, &w, hh);
                        tt += hh;
                    }
                    let n = w.norm();
                    if n.is_finite() && n > 0.0 {
                        log_sum += n.ln();
                        vv = w / n;
                    }
                    if let Some(ref mut spikes) = collect {
                        spikes_in_step(&dense, 0, settings.x_threshold, spikes);
                    }
                    t = dense.t1();
                    yy = dense.y1;
                    h = h_next;
                }
                StepOutcome::Rejected { h_next } => {
                    h = h_next;
                }
            }
        }
        Ok((yy, vv, log_sum))
    };

    let (y1, v1, _) = run(y, v, settings.transient, None)?;
    y = y1;
    v = v1;
    let mut spikes = Vec::new();
    let (y2, _, log_sum) = run(y, v, measure_window, Some(&mut spikes))?;
    Ok(MeasureOutcome {
        spikes,
        lyapunov: log_sum / measure_window,
        final_state: y2,
    })
}

/// Classify the asymptotic behaviour at one parameter point.
///
/// Decision procedure: no spikes -> Quiescent; positive Lyapunov exponent or
/// non-constant spike counts across consecutive bursts -> Chaotic; a single
/// gap-free burst with small ISI coefficient of variation -> Spiking;
/// otherwise Bursting with the modal spikes-per-burst. Ambiguous windows are
/// re-run once with a doubled window, then flagged Unresolved.
pub fn classify_point(p: &ModelParams, settings: &ClassifySettings) -> Result<Behaviour> {
    classify_from(p, Vector3::zeros(), settings).map(|(b, _, _)| b)
}

/// Classification starting from a given state; returns the behaviour, the
/// measured Lyapunov exponent, and the final state (for warm-starting the
/// next cell).
pub fn classify_from(
    p: &ModelParams,
    y0: Vector3<f64>,
    settings: &ClassifySettings,
) -> Result<(Behaviour, f64, Vector3<f64>)> {
    let mut window = settings.measure;
    let mut outcome = measure(p, y0, settings, window)?;
    for _retry in 0..2 {
        match decide(&outcome, settings, window) {
            Decision::Final(b) => return Ok((b, outcome.lyapunov, outcome.final_state)),
            Decision::NeedLongerWindow => {
                window *= 2.0;
                outcome = measure(p, outcome.final_state, settings, window)?;
            }
        }
    }
    Ok((Behaviour::Unresolved, outcome.lyapunov, outcome.final_state))
}

enum Decision {
    Final(Behaviour),
    NeedLongerWindow,
}

fn decide(out: &MeasureOutcome, settings: &ClassifySettings, window: f64) -> Decision {
    if out.spikes.is_empty() {
        return Decision::Final(Behaviour::Quiescent);
    }
    let train = match segment_bursts(&out.spikes, settings.gap_factor) {
        Ok(t) => t,
        Err(_) => return Decision::Final(Behaviour::Quiescent),
    };
    let counts = train.spikes_per_burst();

    // Chaos checks first: positive tangent growth, or burst sizes that keep
    // changing. Interior bursts only (window edges clip bursts), and judged
    // on the trailing window so a still-settling first burst cannot trigger
    // a false chaotic call.
    let interior: Vec<usize> = if counts.len() >= 3 {
        counts[1..counts.len() - 1].to_vec()
    } else {
        counts.clone()
    };
    let tail: &[usize] = if interior.len() > 8 {
        &interior[interior.len() - 8..]
    } else {
        &interior
    };
    let chaotic_counts = tail.len() >= 4 && tail.windows(2).any(|w| w[0] != w[1]);
    if out.lyapunov > settings.chaos_threshold || chaotic_counts {
        return Decision::Final(Behaviour::Chaotic);
    }

    // Tonic spiking: one gap-free burst with nearly uniform ISIs.
    if counts.len() == 1 && out.spikes.len() >= 3 {
        let isis: Vec<f64> = out.spikes.windows(2).map(|w| w[1] - w[0]).collect();
        let mean = isis.iter().sum::<f64>() / isis.len() as f64;
        let var = isis.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / isis.len() as f64;
        let cv = var.sqrt() / mean;
        if cv < settings.cv_threshold {
            return Decision::Final(Behaviour::Spiking {
                frequency: out.spikes.len() as f64 / window,
            });
        }
        // One long irregular burst: needs more data.
        return Decision::NeedLongerWindow;
    }

    // Bursting: want at least 4 interior bursts to trust the count.
    if interior.len() < 4 {
        return Decision::NeedLongerWindow;
    }
    let modal = modal_count(tail);
    if modal < 2 {
        // Single-spike "bursts" with large gaps are slow tonic spiking.
        return Decision::Final(Behaviour::Spiking {
            frequency: out.spikes.len() as f64 / window,
        });
    }
    Decision::Final(Behaviour::Bursting {
        spikes_per_burst: modal as u32,
    })
}

fn modal_count(counts: &[usize]) -> usize {
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let mut best = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().position(|&c| c != sorted[i]);
        let run = j.unwrap_or(sorted.len() - i);
        if run > best.1 {
            best = (sorted[i], run);
        }
        i += run;
    }
    best.0
}

/// A classified (b, I) grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepGrid {
    pub b_values: Vec<f64>,
    pub i_values: Vec<f64>,
    /// Row-major: cells[row][col] at (b_values[col], i_values[row]).
    pub cells: Vec<Vec<Behaviour>>,
    /// Lyapunov exponents, same layout.
    pub lyapunov: Vec<Vec<f64>>,
    pub settings: ClassifySettings,
}

impl SweepGrid {
    pub fn nb(&self) -> usize {
        self.b_values.len()
    }

    pub fn ni(&self) -> usize {
        self.i_values.len()
    }

    pub fn cell(&self, row: usize, col: usize) -> Behaviour {
        self.cells[row][col]
    }

    /// CSV export (b, I, tag, count-or-frequency, lyapunov).
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "b,I,tag,value,lyapunov")?;
        for (r, i) in self.i_values.iter().enumerate() {
            for (c, b) in self.b_values.iter().enumerate() {
                let cell = self.cells[r][c];
                writeln!(
                    w,
                    "{b},{i},{},{},{}",
                    cell.tag(),
                    cell.value(),
                    self.lyapunov[r][c]
                )?;
            }
        }
        Ok(())
    }
}

/// Classify one row (fixed I, increasing b) with warm-started initial
/// conditions: each cell continues from its left neighbour's final state,
/// falling back to the origin.
pub fn sweep_row(
    b_values: &[f64],
    i: f64,
    template: &ModelParams,
    settings: &ClassifySettings,
) -> (Vec<Behaviour>, Vec<f64>) {
    let mut behaviours = Vec::with_capacity(b_values.len());
    let mut lyap = Vec::with_capacity(b_values.len());
    let mut carry: Option<Vector3<f64>> = None;
    for &b in b_values {
        let p = ModelParams {
            b,
            i,
            ..*template
        };
        let y0 = carry.unwrap_or_else(Vector3::zeros);
        match classify_from(&p, y0, settings) {
            Ok((beh, ly, y_end)) => {
                behaviours.push(beh);
                lyap.push(ly);
                carry = Some(y_end);
            }
            Err(_) => {
                // Individual cell failures are recorded, not fatal.
                behaviours.push(Behaviour::Unresolved);
                lyap.push(f64::NAN);
                carry = None;
            }
        }
    }
    (behaviours, lyap)
}

/// Classify every cell of a (b, I) grid. Rows run in parallel.
pub fn sweep_grid(
    b_range: (f64, f64),
    i_range: (f64, f64),
    nb: usize,
    ni: usize,
    template: &ModelParams,
    settings: &ClassifySettings,
) -> Result<SweepGrid> {
    if nb < 2 || ni < 2 {
        return Err(Error::domain("sweep grid needs nb, nI >= 2"));
    }
    let b_values: Vec<f64> = (0..nb)
        .map(|k| b_range.0 + (b_range.1 - b_range.0) * k as f64 / (nb - 1) as f64)
        .collect();
    let i_values: Vec<f64> = (0..ni)
        .map(|k| i_range.0 + (i_range.1 - i_range.0) * k as f64 / (ni - 1) as f64)
        .collect();

    let rows: Vec<(Vec<Behaviour>, Vec<f64>)> = i_values
        .par_iter()
        .map(|&i| sweep_row(&b_values, i, template, settings))
        .collect();

    let mut cells = Vec::with_capacity(ni);
    let mut lyapunov = Vec::with_capacity(ni);
    for (b, l) in rows {
        cells.push(b);
        lyapunov.push(l);
    }
    Ok(SweepGrid {
        b_values,
        i_values,
        cells,
        lyapunov,
        settings: *settings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_settings() -> ClassifySettings {
        ClassifySettings {
            transient: 600.0,
            measure: 1200.0,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            ..Default::default()
        }
    }

    #[test]
    fn default_point_is_bursting_six() {
        let p = ModelParams::new(2.6, 2.0);
        let b = classify_point(&p, &ClassifySettings::default()).unwrap();
        assert_eq!(b, Behaviour::Bursting { spikes_per_burst: 6 });
    }

    #[test]
    fn far_below_threshold_is_quiescent() {
        let p = ModelParams::new(2.6, -5.0);
        let b = classify_point(&p, &quick_settings()).unwrap();
        assert_eq!(b, Behaviour::Quiescent);
    }

    #[test]
    fn chaotic_lobe_point_is_chaotic() {
        // A point inside a black lobe of the brute-force map; the DNS
        // Lyapunov oracle gives lambda = +8.8e-3 over an 8000-unit window.
        let p = ModelParams::new(2.92, 3.25);
        let settings = ClassifySettings {
            transient: 1500.0,
            measure: 3000.0,
            ..Default::default()
        };
        let b = classify_point(&p, &settings).unwrap();
        assert_eq!(b, Behaviour::Chaotic);
    }

    #[test]
    fn lyapunov_positive_in_lobe() {
        // DNS oracle behind the chaotic classification.
        let p = ModelParams::new(2.92, 3.25);
        let lam =
            crate::integrate::lyapunov_max(&p, Vector3::zeros(), 1500.0, 4000.0).unwrap();
        assert!(lam > 1e-3, "lambda = {lam}");
    }

    #[test]
    fn tiny_grid_runs_all_cells() {
        let settings = ClassifySettings {
            transient: 300.0,
            measure: 600.0,
            ..Default::default()
        };
        let grid = sweep_grid(
            (2.55, 2.65),
            (1.95, 2.05),
            2,
            2,
            &ModelParams::default(),
            &settings,
        )
        .unwrap();
        assert_eq!(grid.nb(), 2);
        assert_eq!(grid.ni(), 2);
        assert_eq!(grid.cells.len(), 2);
        assert_eq!(grid.cells[0].len(), 2);
    }

    #[test]
    fn rerun_is_bit_identical() {
        let settings = ClassifySettings {
            transient: 200.0,
            measure: 500.0,
            ..Default::default()
        };
        let g1 = sweep_grid(
            (2.58, 2.62),
            (1.98, 2.02),
            2,
            2,
            &ModelParams::default(),
            &settings,
        )
        .unwrap();
        let g2 = sweep_grid(
            (2.58, 2.62),
            (1.98, 2.02),
            2,
            2,
            &ModelParams::default(),
            &settings,
        )
        .unwrap();
        let mut c1 = Vec::new();
        let mut c2 = Vec::new();
        g1.write_csv(&mut c1).unwrap();
        g2.write_csv(&mut c2).unwrap();
        assert_eq!(c1, c2);
    }

    #[test]
    fn modal_count_picks_most_frequent() {
        assert_eq!(modal_count(&[3, 3, 4, 3, 3]), 3);
        assert_eq!(modal_count(&[5]), 5);
        assert_eq!(modal_count(&[2, 2, 7, 7, 7]), 7);
    }

    #[test]
    fn classification_stable_under_window_doubling() {
        // Ten-point regression panel of periodic behaviours: tags and counts
        // survive doubling the measurement window.
        let points = [
            (2.6, 2.0),
            (2.6, 2.5),
            (2.7, 2.5),
            (2.85, 3.5),
            (2.8, 3.25),
            (2.65, 2.25),
            (2.85, 2.0),
            (2.8, 3.75),
            (2.88, 3.0),
            (3.2, 2.0),
        ];
        for (b, i) in points {
            let p = ModelParams::new(b, i);
            let s1 = ClassifySettings {
                transient: 1500.0,
                measure: 2000.0,
                ..Default::default()
            };
            let s2 = ClassifySettings {
                measure: 4000.0,
                ..s1
            };
            let b1 = classify_point(&p, &s1).unwrap();
            let b2 = classify_point(&p, &s2).unwrap();
            match (b1, b2) {
                (
                    Behaviour::Bursting { spikes_per_burst: k1 },
                    Behaviour::Bursting { spikes_per_burst: k2 },
                ) => {
                    assert_eq!(k1, k2, "burst count changed at ({b}, {i})")
                }
                (Behaviour::Spiking { .. }, Behaviour::Spiking { .. }) => {}
                (x, y) => assert_eq!(x, y, "tag changed at ({b}, {i})"),
            }
        }
    }
}
