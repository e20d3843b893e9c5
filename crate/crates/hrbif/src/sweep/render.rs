//! PPM rendering of a behaviour map.
//!
//! Colour code: cyan = quiescent; green ramp (darker with higher frequency)
//! = spiking; yellow to red ramp (by spikes per burst) = bursting;
//! black = chaotic; grey = unresolved.

use super::{Behaviour, SweepGrid};
use crate::error::Result;

pub type Rgb = [u8; 3];

const CYAN: Rgb = [0, 255, 255];
const BLACK: Rgb = [0, 0, 0];
const GREY: Rgb = [128, 128, 128];

/// Bursting ramp: spikes-per-burst 2 maps to yellow, 12 and above to red.
fn bursting_colour(k: u32) -> Rgb {
    let k = k.clamp(2, 12);
    let t = (k - 2) as f64 / 10.0;
    [255, (255.0 * (1.0 - t)).round() as u8, 0]
}

/// Spiking ramp: light green at low frequency, dark green at `f_max`.
fn spiking_colour(freq: f64, f_max: f64) -> Rgb {
    let t = (freq / f_max).clamp(0.0, 1.0);
    let g = (220.0 - 140.0 * t).round() as u8;
    [(120.0 * (1.0 - t)).round() as u8, g, (120.0 * (1.0 - t)).round() as u8]
}

pub fn behaviour_colour(b: &Behaviour, f_max: f64) -> Rgb {
    match b {
        Behaviour::Quiescent => CYAN,
        Behaviour::Spiking { frequency } => spiking_colour(*frequency, f_max),
        Behaviour::Bursting { spikes_per_burst } => bursting_colour(*spikes_per_burst),
        Behaviour::Chaotic => BLACK,
        Behaviour::Unresolved => GREY,
    }
}

/// Render the grid as a binary PPM (P6). One pixel per cell; the first grid
/// row (lowest I) is the bottom image row. An optional comment is embedded
/// in the header.
pub fn render_map(grid: &SweepGrid, comment: Option<&str>) -> Vec<u8> {
    let (w, h) = (grid.nb(), grid.ni());
    let f_max = grid
        .cells
        .iter()
        .flatten()
        .filter_map(|b| match b {
            Behaviour::Spiking { frequency } => Some(*frequency),
            _ => None,
        })
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let mut out = Vec::with_capacity(w * h * 3 + 64);
    out.extend_from_slice(b"P6\n");
    if let Some(c) = comment {
        for line in c.lines() {
            out.extend_from_slice(format!("# {line}\n").as_bytes());
        }
    }
    out.extend_from_slice(format!("{w} {h}\n255\n").as_bytes());
    for row in (0..h).rev() {
        for col in 0..w {
            out.extend_from_slice(&behaviour_colour(&grid.cells[row][col], f_max));
        }
    }
    out
}

/// Write a PPM to a file.
pub fn write_ppm(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::ClassifySettings;

    fn grid_of(cells: Vec<Vec<Behaviour>>) -> SweepGrid {
        let nb = cells[0].len();
        let ni = cells.len();
        SweepGrid {
            b_values: (0..nb).map(|i| i as f64).collect(),
            i_values: (0..ni).map(|i| i as f64).collect(),
            lyapunov: vec![vec![0.0; nb]; ni],
            cells,
            settings: ClassifySettings::default(),
        }
    }

    #[test]
    fn all_quiescent_is_uniform_cyan() {
        let g = grid_of(vec![vec![Behaviour::Quiescent; 3]; 2]);
        let ppm = render_map(&g, None);
        let header_end = ppm.windows(4).position(|w| w == b"255\n").unwrap() + 4;
        let body = &ppm[header_end..];
        assert_eq!(body.len(), 3 * 2 * 3);
        for px in body.chunks(3) {
            assert_eq!(px, CYAN);
        }
    }

    #[test]
    fn burst_ramp_distinguishes_counts() {
        for a in 2..=12u32 {
            for b in (a + 1)..=12u32 {
                assert_ne!(bursting_colour(a), bursting_colour(b), "{a} vs {b}");
            }
        }
        assert_ne!(
            bursting_colour(2),
            bursting_colour(12),
            "yellow and red must differ"
        );
    }

    #[test]
    fn pixel_count_matches_grid() {
        let g = grid_of(vec![
            vec![Behaviour::Chaotic, Behaviour::Quiescent],
            vec![
                Behaviour::Bursting { spikes_per_burst: 4 },
                Behaviour::Spiking { frequency: 0.2 },
            ],
        ]);
        let ppm = render_map(&g, Some("test"));
        let header_end = ppm.windows(4).position(|w| w == b"255\n").unwrap() + 4;
        assert_eq!(ppm[header_end..].len(), 2 * 2 * 3);
    }

    #[test]
    fn render_is_pure() {
        let g = grid_of(vec![vec![Behaviour::Chaotic; 2]; 2]);
        assert_eq!(render_map(&g, None), render_map(&g, None));
    }
}
