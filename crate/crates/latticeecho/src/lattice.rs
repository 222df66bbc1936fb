//! Lattice geometry, sublattice structure and initial-state construction.
//!
//! Units: hbar = 1, energies in units of the nearest-neighbor hopping J,
//! times in 1/J, lengths in the lattice constant.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{EchoError, Result};

pub const NORM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Periodic,
    Open,
}

/// One hopping term: amplitude `amplitude` to the `order`-th neighbor along `axis`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hopping {
    pub axis: usize,
    pub order: usize,
    pub amplitude: f64,
}

/// Geometry, boundary conditions and hopping stencil of a 1D or 2D lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSpec {
    /// Per-axis site counts; length 1 or 2.
    pub extents: Vec<usize>,
    /// Lattice constant.
    pub spacing: f64,
    pub hoppings: Vec<Hopping>,
    pub boundary: Boundary,
    /// On-site energy offset E0.
    pub base_energy: f64,
}

impl LatticeSpec {
    /// 1D chain of `n` sites with nearest-neighbor hopping `j`.
    pub fn chain(n: usize, j: f64, boundary: Boundary) -> Result<Self> {
        let spec = LatticeSpec {
            extents: vec![n],
            spacing: 1.0,
            hoppings: vec![Hopping {
                axis: 0,
                order: 1,
                amplitude: j,
            }],
            boundary,
            base_energy: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 2D square lattice with isotropic nearest-neighbor hopping `j`.
    pub fn square(n1: usize, n2: usize, j: f64, boundary: Boundary) -> Result<Self> {
        let spec = LatticeSpec {
            extents: vec![n1, n2],
            spacing: 1.0,
            hoppings: vec![
                Hopping {
                    axis: 0,
                    order: 1,
                    amplitude: j,
                },
                Hopping {
                    axis: 1,
                    order: 1,
                    amplitude: j,
                },
            ],
            boundary,
            base_energy: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Add a further-neighbor hopping on every axis.
    pub fn with_neighbor(mut self, order: usize, amplitude: f64) -> Result<Self> {
        for axis in 0..self.dimension() {
            self.hoppings.push(Hopping {
                axis,
                order,
                amplitude,
            });
        }
        self.validate()?;
        Ok(self)
    }

    pub fn dimension(&self) -> usize {
        self.extents.len()
    }

    pub fn num_sites(&self) -> usize {
        self.extents.iter().product()
    }

    /// Nearest-neighbor amplitude J along `axis`.
    pub fn nn_amplitude(&self, axis: usize) -> f64 {
        self.hoppings
            .iter()
            .filter(|h| h.axis == axis && h.order == 1)
            .map(|h| h.amplitude)
            .sum()
    }

    /// True if the stencil has only nearest-neighbor terms.
    pub fn is_nearest_neighbor_only(&self) -> bool {
        self.hoppings.iter().all(|h| h.order == 1)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.extents.len();
        if d != 1 && d != 2 {
            return Err(EchoError::InvalidInput(format!(
                "dimension must be 1 or 2, got {d}"
            )));
        }
        if self.extents.iter().any(|&e| e == 0) {
            return Err(EchoError::InvalidInput("zero extent".into()));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(EchoError::InvalidInput("spacing must be positive".into()));
        }
        if !self.base_energy.is_finite() {
            return Err(EchoError::InvalidInput("base energy not finite".into()));
        }
        for h in &self.hoppings {
            if h.axis >= d {
                return Err(EchoError::InvalidInput(format!(
                    "hopping axis {} out of range for dimension {d}",
                    h.axis
                )));
            }
            if h.order == 0 {
                return Err(EchoError::InvalidInput("neighbor order must be >= 1".into()));
            }
            if !h.amplitude.is_finite() {
                return Err(EchoError::InvalidInput("hopping amplitude not finite".into()));
            }
            if h.order > self.extents[h.axis] / 2 {
                return Err(EchoError::InvalidInput(format!(
                    "neighbor order {} exceeds extent/2 along axis {}",
                    h.order, h.axis
                )));
            }
        }
        for axis in 0..d {
            // hopping-free lattices (pure on-site problems) are allowed
            if self.hoppings.iter().any(|h| h.axis == axis) && self.nn_amplitude(axis) <= 0.0 {
                return Err(EchoError::InvalidInput(format!(
                    "nearest-neighbor amplitude must be positive along axis {axis}"
                )));
            }
        }
        if self.boundary == Boundary::Periodic && self.extents.iter().any(|&e| e % 2 != 0) {
            return Err(EchoError::InvalidInput(
                "periodic boundaries require even extents".into(),
            ));
        }
        Ok(())
    }

    /// Row-major flat index of a lattice coordinate.
    pub fn site_index(&self, coord: &[usize]) -> Result<usize> {
        if coord.len() != self.dimension() {
            return Err(EchoError::Domain(format!(
                "coordinate rank {} does not match dimension {}",
                coord.len(),
                self.dimension()
            )));
        }
        let mut idx = 0usize;
        for (axis, (&c, &e)) in coord.iter().zip(self.extents.iter()).enumerate() {
            if c >= e {
                return Err(EchoError::Domain(format!(
                    "coordinate {c} out of range along axis {axis} (extent {e})"
                )));
            }
            idx = idx * e + c;
        }
        Ok(idx)
    }

    /// Lattice coordinate of a row-major flat index.
    pub fn site_coord(&self, mut index: usize) -> Vec<usize> {
        let mut coord = vec![0usize; self.dimension()];
        for axis in (0..self.dimension()).rev() {
            coord[axis] = index % self.extents[axis];
            index /= self.extents[axis];
        }
        coord
    }

    /// Reduced-Brillouin-zone momentum bound per axis, pi/(2 spacing).
    pub fn reduced_bz_edge(&self) -> f64 {
        PI / (2.0 * self.spacing)
    }
}

/// Sublattice sign (-1)^(n1) in 1D, (-1)^(n1+n2) in 2D.
pub fn sublattice_parity(spec: &LatticeSpec, coord: &[usize]) -> Result<i32> {
    spec.site_index(coord)?;
    let s: usize = coord.iter().sum();
    Ok(if s % 2 == 0 { 1 } else { -1 })
}

/// Complex amplitude per lattice site plus a time stamp.
#[derive(Debug, Clone)]
pub struct WaveState {
    /// Row-major over the lattice extents.
    pub amplitudes: Vec<Complex64>,
    pub extents: Vec<usize>,
    pub time: f64,
}

impl WaveState {
    pub fn zero(spec: &LatticeSpec) -> Self {
        WaveState {
            amplitudes: vec![Complex64::new(0.0, 0.0); spec.num_sites()],
            extents: spec.extents.clone(),
            time: 0.0,
        }
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes
            .iter()
            .map(|a| a.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let n = self.norm();
        if n == 0.0 {
            return Err(EchoError::InvalidInput("cannot normalize zero state".into()));
        }
        for a in &mut self.amplitudes {
            *a /= n;
        }
        Ok(())
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }
}

/// Initial-state recipe.
#[derive(Debug, Clone)]
pub enum InitialStateSpec {
    SingleSite {
        site: Vec<usize>,
    },
    Gaussian {
        center: Vec<f64>,
        /// Width sigma in units of the lattice constant.
        width: f64,
        /// Carrier momentum per axis in rad per lattice constant.
        momentum: Vec<f64>,
        /// Permit carrier momenta outside the reduced Brillouin zone.
        allow_unfolded: bool,
    },
    Bitmap {
        path: std::path::PathBuf,
        momentum: Option<Vec<f64>>,
    },
}

/// Rectangular 0/1 grid read from a plain-text bitmap file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitGrid {
    pub rows: usize,
    pub cols: usize,
    /// Row-major cells, 0 or 1.
    pub cells: Vec<u8>,
}

impl BitGrid {
    pub fn marked_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c == 1).count()
    }
}

/// Parse the plain-text bitmap format: header `P-GRID <rows> <cols>`,
/// then rows of whitespace-separated 0/1 tokens.
pub fn parse_bitmap(text: &str) -> Result<BitGrid> {
    let mut lines = text.lines().enumerate();
    let (header_no, header) = lines
        .by_ref()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or(EchoError::Parse {
            line: 1,
            msg: "empty bitmap file".into(),
        })?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some("P-GRID") {
        return Err(EchoError::Parse {
            line: header_no + 1,
            msg: "expected header `P-GRID <rows> <cols>`".into(),
        });
    }
    let parse_dim = |tok: Option<&str>| -> Result<usize> {
        tok.and_then(|t| t.parse::<usize>().ok())
            .filter(|&n| n > 0)
            .ok_or(EchoError::Parse {
                line: header_no + 1,
                msg: "bad dimensions in header".into(),
            })
    };
    let rows = parse_dim(toks.next())?;
    let cols = parse_dim(toks.next())?;

    let mut cells = Vec::with_capacity(rows * cols);
    let mut last_line = header_no + 1;
    for (no, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        last_line = no + 1;
        for tok in line.split_whitespace() {
            match tok {
                "0" => cells.push(0),
                "1" => cells.push(1),
                other => {
                    return Err(EchoError::Parse {
                        line: no + 1,
                        msg: format!("expected 0 or 1, got `{other}`"),
                    })
                }
            }
        }
        if cells.len() > rows * cols {
            return Err(EchoError::Parse {
                line: no + 1,
                msg: format!("more than {rows}x{cols} cells"),
            });
        }
    }
    if cells.len() != rows * cols {
        return Err(EchoError::Parse {
            line: last_line,
            msg: format!("expected {} cells, got {}", rows * cols, cells.len()),
        });
    }
    Ok(BitGrid { rows, cols, cells })
}

/// Load a bitmap grid from disk.
pub fn load_bitmap(path: &Path) -> Result<BitGrid> {
    let text = fs::read_to_string(path).map_err(|source| EchoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_bitmap(&text)
}

fn check_momentum(spec: &LatticeSpec, k: &[f64], allow_unfolded: bool) -> Result<()> {
    if k.len() != spec.dimension() {
        return Err(EchoError::InvalidInput(
            "carrier momentum rank mismatch".into(),
        ));
    }
    if !allow_unfolded {
        let edge = spec.reduced_bz_edge();
        for &kx in k {
            if kx.abs() > edge + 1e-12 {
                return Err(EchoError::InvalidInput(format!(
                    "carrier momentum {kx} outside reduced Brillouin zone (|k| <= {edge}); \
                     set allow_unfolded to override"
                )));
            }
        }
    }
    Ok(())
}

/// Signed displacement c - x0 along one axis, minimal-image for periodic lattices.
fn displacement(spec: &LatticeSpec, axis: usize, c: f64, x0: f64) -> f64 {
    let mut d = c - x0;
    if spec.boundary == Boundary::Periodic {
        let l = spec.extents[axis] as f64;
        d -= l * (d / l).round();
    }
    d
}

/// Build a normalized state at time 0 from an initial-state recipe.
pub fn make_state(spec: &LatticeSpec, init: &InitialStateSpec) -> Result<WaveState> {
    spec.validate()?;
    let mut state = WaveState::zero(spec);
    match init {
        InitialStateSpec::SingleSite { site } => {
            let idx = spec.site_index(site)?;
            state.amplitudes[idx] = Complex64::new(1.0, 0.0);
        }
        InitialStateSpec::Gaussian {
            center,
            width,
            momentum,
            allow_unfolded,
        } => {
            if *width <= 0.0 {
                return Err(EchoError::InvalidInput("gaussian width must be > 0".into()));
            }
            if center.len() != spec.dimension() {
                return Err(EchoError::InvalidInput("gaussian center rank mismatch".into()));
            }
            check_momentum(spec, momentum, *allow_unfolded)?;
            let ell = spec.spacing;
            for idx in 0..spec.num_sites() {
                let coord = spec.site_coord(idx);
                let mut r2 = 0.0;
                let mut phase = 0.0;
                for axis in 0..spec.dimension() {
                    let d = displacement(spec, axis, coord[axis] as f64, center[axis]);
                    r2 += d * d;
                    phase += momentum[axis] * coord[axis] as f64 * ell;
                }
                let env = (-r2 / (4.0 * width * width)).exp();
                state.amplitudes[idx] = Complex64::from_polar(env, phase);
            }
        }
        InitialStateSpec::Bitmap { path, momentum } => {
            if spec.dimension() != 2 {
                return Err(EchoError::InvalidInput(
                    "bitmap initial states require a 2D lattice".into(),
                ));
            }
            let grid = load_bitmap(path)?;
            if grid.marked_count() == 0 {
                return Err(EchoError::InvalidInput("bitmap has no marked pixels".into()));
            }
            if grid.rows > spec.extents[0] || grid.cols > spec.extents[1] {
                return Err(EchoError::InvalidInput(format!(
                    "bitmap {}x{} does not fit a {}x{} lattice",
                    grid.rows, grid.cols, spec.extents[0], spec.extents[1]
                )));
            }
            if let Some(k) = momentum {
                check_momentum(spec, k, false)?;
            }
            let off0 = (spec.extents[0] - grid.rows) / 2;
            let off1 = (spec.extents[1] - grid.cols) / 2;
            let ell = spec.spacing;
            for r in 0..grid.rows {
                for c in 0..grid.cols {
                    if grid.cells[r * grid.cols + c] == 1 {
                        let coord = [off0 + r, off1 + c];
                        let idx = spec.site_index(&coord)?;
                        let phase = match momentum {
                            Some(k) => {
                                k[0] * coord[0] as f64 * ell + k[1] * coord[1] as f64 * ell
                            }
                            None => 0.0,
                        };
                        state.amplitudes[idx] = Complex64::from_polar(1.0, phase);
                    }
                }
            }
        }
    }
    state.normalize()?;
    Ok(state)
}
