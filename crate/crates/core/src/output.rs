//! CSV artifact formats. All floats are written with Rust's shortest
//! round-trip formatting, so files parse back to bit-identical values and
//! identical runs produce byte-identical artifacts.
//!
//! - trajectory: `t,agent_id,subpop,x,y` (subpop is 1-based)
//! - density (one file per subpopulation): `t,i,j,rho`
//! - diagnostics: `t,mass_1,mass_2,max_speed,fp_iters,fp_residual,unconverged_flag`
//! - porosity:   `i,j,phi`

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use crate::analysis::Frame;
use crate::dynamics::StepDiagnostics;
use crate::measures::{MacroField, TwoScaleState};
use crate::vec2::Vec2;

pub fn write_trajectory_header<W: Write>(w: &mut W) -> io::Result<()> {
    writeln!(w, "t,agent_id,subpop,x,y")
}

pub fn write_trajectory_frame<W: Write>(w: &mut W, t: f64, state: &TwoScaleState) -> io::Result<()> {
    for pop in 0..2 {
        for (id, p) in state.pops[pop].micro.iter() {
            writeln!(w, "{},{},{},{},{}", t, id, pop + 1, p.x, p.y)?;
        }
    }
    Ok(())
}

pub fn write_density_header<W: Write>(w: &mut W) -> io::Result<()> {
    writeln!(w, "t,i,j,rho")
}

pub fn write_density_frame<W: Write>(w: &mut W, t: f64, field: &MacroField) -> io::Result<()> {
    let grid = field.grid();
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            writeln!(w, "{},{},{},{}", t, i, j, field.rho(i, j))?;
        }
    }
    Ok(())
}

pub fn write_diagnostics_header<W: Write>(w: &mut W) -> io::Result<()> {
    writeln!(w, "t,mass_1,mass_2,max_speed,fp_iters,fp_residual,unconverged_flag")
}

pub fn write_diagnostics_row<W: Write>(w: &mut W, t: f64, d: &StepDiagnostics) -> io::Result<()> {
    writeln!(
        w,
        "{},{},{},{},{},{},{}",
        t,
        d.mass[0],
        d.mass[1],
        d.max_speed,
        d.fp_iterations,
        d.fp_residual,
        u8::from(d.unconverged)
    )
}

#[derive(Debug, thiserror::Error)]
pub enum ReadError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: malformed row: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },
}

/// Reads a trajectory CSV back into per-time frames, in file order.
pub fn read_trajectory(path: &Path) -> Result<Vec<Frame>, ReadError> {
    let name = path.display().to_string();
    let file = File::open(path).map_err(|source| ReadError::Io { path: name.clone(), source })?;
    let mut frames: Vec<Frame> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| ReadError::Io { path: name.clone(), source })?;
        if lineno == 0 || line.is_empty() {
            continue;
        }
        let bad = |reason: &str| ReadError::Malformed {
            path: name.clone(),
            line: lineno + 1,
            reason: reason.to_string(),
        };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(bad("expected 5 columns"));
        }
        let t: f64 = cols[0].parse().map_err(|_| bad("bad t"))?;
        let subpop: usize = cols[2].parse().map_err(|_| bad("bad subpop"))?;
        if !(subpop == 1 || subpop == 2) {
            return Err(bad("subpop must be 1 or 2"));
        }
        let x: f64 = cols[3].parse().map_err(|_| bad("bad x"))?;
        let y: f64 = cols[4].parse().map_err(|_| bad("bad y"))?;
        if frames.last().map(|f| f.t != t).unwrap_or(true) {
            frames.push(Frame { t, positions: [Vec::new(), Vec::new()] });
        }
        frames
            .last_mut()
            .unwrap()
            .positions[subpop - 1]
            .push(Vec2::new(x, y));
    }
    Ok(frames)
}

/// Reads one subpopulation's density CSV back into per-time flat rho
/// vectors, in file order.
pub fn read_density(path: &Path, nx: usize, ny: usize) -> Result<Vec<(f64, Vec<f64>)>, ReadError> {
    let name = path.display().to_string();
    let file = File::open(path).map_err(|source| ReadError::Io { path: name.clone(), source })?;
    let mut out: Vec<(f64, Vec<f64>)> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| ReadError::Io { path: name.clone(), source })?;
        if lineno == 0 || line.is_empty() {
            continue;
        }
        let bad = |reason: &str| ReadError::Malformed {
            path: name.clone(),
            line: lineno + 1,
            reason: reason.to_string(),
        };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(bad("expected 4 columns"));
        }
        let t: f64 = cols[0].parse().map_err(|_| bad("bad t"))?;
        let i: usize = cols[1].parse().map_err(|_| bad("bad i"))?;
        let j: usize = cols[2].parse().map_err(|_| bad("bad j"))?;
        let rho: f64 = cols[3].parse().map_err(|_| bad("bad rho"))?;
        if i >= nx || j >= ny {
            return Err(bad("cell index out of range"));
        }
        if out.last().map(|f| f.0 != t).unwrap_or(true) {
            out.push((t, vec![0.0; nx * ny]));
        }
        out.last_mut().unwrap().1[j * nx + i] = rho;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoundaryX, Domain, PorosityGrid};
    use crate::measures::{MacroField, MicroMeasure, Population};

    #[test]
    fn trajectory_roundtrip_is_exact() {
        let domain = Domain::corridor(20.0, 4.0, BoundaryX::Periodic);
        let grid = PorosityGrid::build(&domain, 20, 4, 1).unwrap();
        let positions = vec![
            Vec2::new(0.1 + 1.0 / 3.0, 2.0_f64.sqrt()),
            Vec2::new(19.999999999, 3.3333333333333335),
        ];
        let state = TwoScaleState::new([
            Population::new(
                MicroMeasure::from_positions(0, positions.clone()),
                MacroField::zeros(grid.clone()),
                1.0,
            ),
            Population::new(
                MicroMeasure::from_positions(2, vec![Vec2::new(5.0, 1.0)]),
                MacroField::zeros(grid),
                1.0,
            ),
        ]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trajectory.csv");
        let mut w = File::create(&path).unwrap();
        write_trajectory_header(&mut w).unwrap();
        write_trajectory_frame(&mut w, 0.0, &state).unwrap();
        write_trajectory_frame(&mut w, 0.05, &state).unwrap();
        drop(w);

        let frames = read_trajectory(&path).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[1].t, 0.05);
        for (a, b) in frames[0].positions[0].iter().zip(&positions) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
        }
        assert_eq!(frames[0].positions[1].len(), 1);
    }

    #[test]
    fn density_roundtrip_is_exact() {
        let domain = Domain::corridor(4.0, 2.0, BoundaryX::Periodic);
        let grid = PorosityGrid::build(&domain, 4, 2, 1).unwrap();
        let rho: Vec<f64> = (0..8).map(|k| (k as f64) / 3.0).collect();
        let field = MacroField::new(grid, rho.clone());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("density_1.csv");
        let mut w = File::create(&path).unwrap();
        write_density_header(&mut w).unwrap();
        write_density_frame(&mut w, 1.5, &field).unwrap();
        drop(w);

        let frames = read_density(&path, 4, 2).unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].0, 1.5);
        for (a, b) in frames[0].1.iter().zip(&rho) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn malformed_rows_are_reported_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,agent_id,subpop,x,y\n0.0,0,3,1.0,2.0\n").unwrap();
        let err = read_trajectory(&path).unwrap_err();
        assert!(err.to_string().contains(":2:"));
    }
}
