//! Critic values over a regular grid of the 2D action square.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;

use super::run::{csv_writer, flush, write_row};
use crate::critic::DoubleQ;
use crate::error::{check_dim, Error, Result};

pub const DEFAULT_RESOLUTION: usize = 400;

pub const QSURFACE_HEADER: [&str; 8] = ["which", "resolution", "probe_state", "row", "col", "a0", "a1", "q"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceKind {
    Q1,
    Q2,
    QMax,
    QMin,
}

impl fmt::Display for SurfaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SurfaceKind::Q1 => "q1",
            SurfaceKind::Q2 => "q2",
            SurfaceKind::QMax => "qmax",
            SurfaceKind::QMin => "qmin",
        })
    }
}

impl FromStr for SurfaceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "q1" => Ok(SurfaceKind::Q1),
            "q2" => Ok(SurfaceKind::Q2),
            "qmax" => Ok(SurfaceKind::QMax),
            "qmin" => Ok(SurfaceKind::QMin),
            other => Err(Error::Config(format!("unknown surface `{other}` (q1, q2, qmax, qmin)"))),
        }
    }
}

/// Grid coordinate `i` of `resolution` points spanning `[-1, 1]`.
pub fn grid_coord(i: usize, resolution: usize) -> f64 {
    if resolution == 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (resolution - 1) as f64
    }
}

/// `values[[row, col]]` is the critic at action `(coord(row), coord(col))`.
#[derive(Debug, Clone, PartialEq)]
pub struct QSurfaceGrid {
    pub probe_state: Vec<f64>,
    pub resolution: usize,
    pub which: SurfaceKind,
    pub values: Array2<f64>,
}

pub fn q_surface(critic: &DoubleQ, probe_state: &[f64], resolution: usize, which: SurfaceKind) -> Result<QSurfaceGrid> {
    if critic.action_dim() != 2 {
        return Err(Error::Config(format!(
            "Q surfaces need a 2D action space, this critic has {}",
            critic.action_dim()
        )));
    }
    check_dim("q_surface probe state", critic.state_dim(), probe_state.len())?;
    if resolution == 0 {
        return Err(Error::Config("grid resolution must be positive".into()));
    }
    let states = Array2::from_shape_fn((resolution, probe_state.len()), |(_, j)| probe_state[j]);
    let mut values = Array2::zeros((resolution, resolution));
    for row in 0..resolution {
        let a0 = grid_coord(row, resolution);
        let actions = Array2::from_shape_fn(
            (resolution, 2),
            |(c, k)| {
                if k == 0 {
                    a0
                } else {
                    grid_coord(c, resolution)
                }
            },
        );
        let (q1, q2) = critic.evaluate(states.view(), actions.view(), false)?;
        for col in 0..resolution {
            values[[row, col]] = match which {
                SurfaceKind::Q1 => q1[col],
                SurfaceKind::Q2 => q2[col],
                SurfaceKind::QMax => q1[col].max(q2[col]),
                SurfaceKind::QMin => q1[col].min(q2[col]),
            };
        }
    }
    Ok(QSurfaceGrid {
        probe_state: probe_state.to_vec(),
        resolution,
        which,
        values,
    })
}

/// Cells strictly greater than all of their 4-neighbors.
pub fn local_maxima(values: &Array2<f64>) -> Vec<(usize, usize)> {
    let (rows, cols) = values.dim();
    let mut peaks = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let v = values[[r, c]];
            let higher = |rr: Option<usize>, cc: Option<usize>| match (rr, cc) {
                (Some(rr), Some(cc)) if rr < rows && cc < cols => v > values[[rr, cc]],
                _ => true,
            };
            if higher(r.checked_sub(1), Some(c))
                && higher(Some(r + 1), Some(c))
                && higher(Some(r), c.checked_sub(1))
                && higher(Some(r), Some(c + 1))
            {
                peaks.push((r, c));
            }
        }
    }
    peaks
}

/// Long format, one row per grid cell in row-major order.
pub fn write_q_surface(grid: &QSurfaceGrid, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(&mut w, QSURFACE_HEADER)?;
    let probe: Vec<String> = grid.probe_state.iter().map(|x| format!("{x:?}")).collect();
    let probe = probe.join(";");
    let which = grid.which.to_string();
    let res = grid.resolution.to_string();
    for ((row, col), q) in grid.values.indexed_iter() {
        write_row(
            &mut w,
            [
                which.clone(),
                res.clone(),
                probe.clone(),
                row.to_string(),
                col.to_string(),
                format!("{:?}", grid_coord(row, grid.resolution)),
                format!("{:?}", grid_coord(col, grid.resolution)),
                format!("{q:?}"),
            ],
        )?;
    }
    flush(&mut w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Mlp;
    use crate::rng::seeded;

    #[test]
    fn zero_critic_is_flat_zero() {
        let net = Mlp::zeros(&[3, 4, 1]).unwrap();
        let critic = DoubleQ::from_networks(net.clone(), net, 0.005, 1, 2).unwrap();
        let g = q_surface(&critic, &[0.0], 9, SurfaceKind::QMin).unwrap();
        assert!(g.values.iter().all(|v| *v == 0.0));
        assert!(local_maxima(&g.values).is_empty());
    }

    #[test]
    fn max_dominates_min_and_rejects_other_dims() {
        let critic = DoubleQ::new(1, 2, &[8], 0.005, &mut seeded(2)).unwrap();
        let hi = q_surface(&critic, &[0.0], 21, SurfaceKind::QMax).unwrap();
        let lo = q_surface(&critic, &[0.0], 21, SurfaceKind::QMin).unwrap();
        assert!(hi.values.iter().zip(&lo.values).all(|(a, b)| a >= b));
        assert_eq!(hi.values.dim(), (21, 21));
        let wide = DoubleQ::new(1, 3, &[8], 0.005, &mut seeded(2)).unwrap();
        assert!(matches!(
            q_surface(&wide, &[0.0], 5, SurfaceKind::Q1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn peak_scan_finds_two_bumps() {
        let v = Array2::from_shape_fn((41, 41), |(r, c)| {
            let (x, y) = (grid_coord(r, 41), grid_coord(c, 41));
            (-((x - 0.5).powi(2) + (y - 0.5).powi(2)) * 20.0).exp()
                + 0.5 * (-((x + 0.5).powi(2) + (y + 0.5).powi(2)) * 10.0).exp()
        });
        assert_eq!(local_maxima(&v), vec![(10, 10), (30, 30)]);
    }

    #[test]
    fn csv_is_long_format() {
        let critic = DoubleQ::new(1, 2, &[4], 0.005, &mut seeded(3)).unwrap();
        let g = q_surface(&critic, &[0.0], 3, SurfaceKind::Q2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.csv");
        write_q_surface(&g, &p).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "which,resolution,probe_state,row,col,a0,a1,q");
        assert_eq!(lines.len(), 10);
        assert!(lines[1].starts_with("q2,3,0.0,0,0,-1.0,-1.0,"));
    }
}
