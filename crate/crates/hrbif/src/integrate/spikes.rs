//! Spike detection and burst segmentation.
//!
//! A spike is a local maximum of x(t) with x above a threshold, located by
//! refining the zero of the dense-output derivative.

use super::rk::DenseStep;
use super::Trajectory;
use crate::error::{Error, Result};

/// Default inter-spike-interval gap factor for burst segmentation.
///
/// Must sit between the largest intra-burst slowdown (about 3.3x the median
/// interval for the 20-spike bursts at mu = 0.0035, where the orbit passes
/// close to the fast-subsystem homoclinic) and the quiescent inter-burst gap
/// (over 30x the median there).
pub const DEFAULT_GAP_FACTOR: f64 = 5.0;

/// Spike times partitioned into bursts.
#[derive(Debug, Clone)]
pub struct SpikeTrain {
    pub spike_times: Vec<f64>,
    /// Half-open index ranges [start, end) into `spike_times`, one per burst.
    pub burst_boundaries: Vec<(usize, usize)>,
    /// Set when there were too few spikes to estimate the gap scale.
    pub low_confidence: bool,
}

impl SpikeTrain {
    pub fn spikes_per_burst(&self) -> Vec<usize> {
        self.burst_boundaries.iter().map(|(a, b)| b - a).collect()
    }
}

/// Local maxima of coordinate `coord` above `threshold` inside one step.
pub fn spikes_in_step<const N: usize>(
    step: &DenseStep<N>,
    coord: usize,
    threshold: f64,
    out: &mut Vec<f64>,
) {
    // Sample the interpolant derivative; a + -> - sign change brackets a
    // maximum. Steps at bursting tolerances are far smaller than a spike, so
    // a modest subdivision cannot miss one.
    const K: usize = 8;
    let d = |theta: f64| step.eval_dtheta(theta)[coord];
    let mut prev_theta = 0.0;
    let mut prev_d = d(0.0);
    for i in 1..=K {
        let theta = i as f64 / K as f64;
        let di = d(theta);
        if prev_d > 0.0 && di <= 0.0 {
            // Bisection for the derivative zero.
            let (mut a, mut b) = (prev_theta, theta);
            for _ in 0..80 {
                let mid = 0.5 * (a + b);
                if d(mid) > 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
                if b - a < 1e-14 {
                    break;
                }
            }
            let t_star = 0.5 * (a + b);
            if step.eval_theta(t_star)[coord] > threshold {
                out.push(step.t0 + t_star * step.h);
            }
        }
        prev_theta = theta;
        prev_d = di;
    }
}

/// All spike times of one coordinate over a stored trajectory.
pub fn spike_times_for_coordinate<const N: usize>(
    traj: &Trajectory<N>,
    coord: usize,
    threshold: f64,
) -> Vec<f64> {
    let mut out = Vec::new();
    for s in traj.steps() {
        spikes_in_step(s, coord, threshold, &mut out);
    }
    out
}

/// Spike times of x(t) for the Hindmarsh-Rose model (coordinate 0).
pub fn detect_spikes(traj: &Trajectory<3>, x_threshold: f64) -> Vec<f64> {
    spike_times_for_coordinate(traj, 0, x_threshold)
}

/// Split spikes into bursts: a new burst starts whenever an inter-spike
/// interval exceeds `gap_factor` times the median interval.
pub fn segment_bursts(spike_times: &[f64], gap_factor: f64) -> Result<SpikeTrain> {
    if spike_times.is_empty() {
        return Err(Error::domain("segment_bursts needs at least one spike"));
    }
    if spike_times.len() < 3 {
        return Ok(SpikeTrain {
            spike_times: spike_times.to_vec(),
            burst_boundaries: vec![(0, spike_times.len())],
            low_confidence: true,
        });
    }
    let mut isis: Vec<f64> = spike_times.windows(2).map(|w| w[1] - w[0]).collect();
    let mut sorted = isis.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[sorted.len() / 2];

    let mut boundaries = Vec::new();
    let mut start = 0usize;
    for (i, isi) in isis.drain(..).enumerate() {
        if isi > gap_factor * median {
            boundaries.push((start, i + 1));
            start = i + 1;
        }
    }
    boundaries.push((start, spike_times.len()));
    Ok(SpikeTrain {
        spike_times: spike_times.to_vec(),
        burst_boundaries: boundaries,
        low_confidence: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::{integrate_adaptive, integrate_hr, IntegrateOptions};
    use crate::model::ModelParams;
    use nalgebra::{Vector1, Vector3};

    #[test]
    fn constant_trajectory_has_no_spikes() {
        let traj = integrate_adaptive(
            |_, _: &Vector1<f64>| Vector1::new(0.0),
            Vector1::new(1.0),
            (0.0, 10.0),
            1e-9,
            1e-11,
        )
        .unwrap();
        assert!(spike_times_for_coordinate(&traj, 0, 0.5).is_empty());
    }

    #[test]
    fn sinusoid_maxima_located() {
        // x(t) = sin t via x' = cos t: maxima at pi/2 and 5 pi/2 on [0, 4 pi].
        let traj = integrate_adaptive(
            |t: f64, _: &Vector1<f64>| Vector1::new(t.cos()),
            Vector1::new(0.0),
            (0.0, 4.0 * std::f64::consts::PI),
            1e-10,
            1e-12,
        )
        .unwrap();
        let spikes = spike_times_for_coordinate(&traj, 0, 0.5);
        assert_eq!(spikes.len(), 2);
        assert!((spikes[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-6);
        assert!((spikes[1] - 2.5 * std::f64::consts::PI).abs() < 1e-6);
    }

    #[test]
    fn burst_segmentation_constructed_gap() {
        // Six spikes with ISIs [1, 1, 10, 1, 1].
        let spikes = [0.0, 1.0, 2.0, 12.0, 13.0, 14.0];
        let train = segment_bursts(&spikes, 3.0).unwrap();
        assert_eq!(train.burst_boundaries, vec![(0, 3), (3, 6)]);
        assert_eq!(train.spikes_per_burst(), vec![3, 3]);
        assert!(!train.low_confidence);
    }

    #[test]
    fn uniform_isis_are_one_burst() {
        let spikes: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let train = segment_bursts(&spikes, 3.0).unwrap();
        assert_eq!(train.burst_boundaries.len(), 1);
    }

    #[test]
    fn few_spikes_low_confidence() {
        let train = segment_bursts(&[1.0, 2.0], 3.0).unwrap();
        assert!(train.low_confidence);
        assert_eq!(train.burst_boundaries, vec![(0, 2)]);
        assert!(segment_bursts(&[], 3.0).is_err());
    }

    #[test]
    fn hr_six_spikes_per_burst_at_default_parameters() {
        // mu = 0.01, b = 2.6, I = 2: six spikes per burst after transients.
        let p = ModelParams::new(2.6, 2.0);
        let opts = IntegrateOptions::default();
        let warm = integrate_hr(&p, Vector3::zeros(), (0.0, 1000.0), &opts).unwrap();
        let traj = integrate_hr(&p, warm.final_state(), (0.0, 1500.0), &opts).unwrap();
        let spikes = detect_spikes(&traj, 0.0);
        let train = segment_bursts(&spikes, DEFAULT_GAP_FACTOR).unwrap();
        // Interior bursts only: the window may clip the first and last.
        let counts = train.spikes_per_burst();
        assert!(counts.len() >= 4, "too few bursts: {counts:?}");
        for c in &counts[1..counts.len() - 1] {
            assert_eq!(*c, 6, "all interior bursts have 6 spikes: {counts:?}");
        }
    }

    #[test]
    fn hr_twenty_spikes_per_burst_at_small_mu() {
        let p = ModelParams::with_mu(2.6, 2.0, 0.0035);
        let opts = IntegrateOptions::default();
        let warm = integrate_hr(&p, Vector3::zeros(), (0.0, 1500.0), &opts).unwrap();
        let traj = integrate_hr(&p, warm.final_state(), (0.0, 3000.0), &opts).unwrap();
        let spikes = detect_spikes(&traj, 0.0);
        let train = segment_bursts(&spikes, DEFAULT_GAP_FACTOR).unwrap();
        let counts = train.spikes_per_burst();
        assert!(counts.len() >= 3, "too few bursts: {counts:?}");
        for c in &counts[1..counts.len() - 1] {
            assert!(
                (*c as i64 - 20).abs() <= 1,
                "interior bursts near 20 spikes: {counts:?}"
            );
        }
    }
}
