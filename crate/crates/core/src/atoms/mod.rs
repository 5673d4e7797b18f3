//! Atomic configurations, orthorhombic periodic cells, neighbor lists and
//! extended-XYZ file IO.

mod extxyz;
mod neighbor;

pub use extxyz::{parse_extxyz, parse_extxyz_frames, write_extxyz, write_extxyz_frames, RawFrame};
pub(crate) use extxyz::fmt_f64;
pub use neighbor::{Neighbor, NeighborList};

use crate::error::{Error, Result};
use crate::vec3::Vec3;
use serde::{Deserialize, Serialize};

/// An orthorhombic periodic cell, described by its three edge lengths in Å.
///
/// All three directions are always periodic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// Edge lengths (Lx, Ly, Lz), each > 0.
    pub lengths: Vec3,
}

impl Cell {
    pub fn new(lx: f64, ly: f64, lz: f64) -> Result<Cell> {
        let lengths = Vec3::new(lx, ly, lz);
        if !(lengths.is_finite() && lx > 0.0 && ly > 0.0 && lz > 0.0) {
            return Err(Error::Geometry(format!(
                "cell lengths must be positive and finite, got ({lx}, {ly}, {lz})"
            )));
        }
        Ok(Cell { lengths })
    }

    pub fn cubic(l: f64) -> Result<Cell> {
        Cell::new(l, l, l)
    }

    pub fn volume(&self) -> f64 {
        self.lengths.x * self.lengths.y * self.lengths.z
    }

    pub fn min_length(&self) -> f64 {
        self.lengths.x.min(self.lengths.y).min(self.lengths.z)
    }

    /// Map a displacement to its minimum image, component-wise.
    ///
    /// Each component is reduced to the half-open interval [-L/2, L/2) via
    /// `d - L*floor(d/L + 1/2)`; a component exactly on the boundary maps to
    /// the lower end (-L/2).
    pub fn minimum_image(&self, d: Vec3) -> Vec3 {
        Vec3::new(
            min_image_1d(d.x, self.lengths.x),
            min_image_1d(d.y, self.lengths.y),
            min_image_1d(d.z, self.lengths.z),
        )
    }

    /// Wrap an absolute position into the primary cell [0, L) per axis.
    pub fn wrap(&self, p: Vec3) -> Vec3 {
        Vec3::new(
            wrap_1d(p.x, self.lengths.x),
            wrap_1d(p.y, self.lengths.y),
            wrap_1d(p.z, self.lengths.z),
        )
    }
}

fn min_image_1d(d: f64, l: f64) -> f64 {
    let r = d - l * (d / l + 0.5).floor();
    // Guard against the half-open convention being violated by rounding when
    // d/l + 0.5 is computed just below an exact integer.
    if r >= 0.5 * l {
        r - l
    } else if r < -0.5 * l {
        r + l
    } else {
        r
    }
}

fn wrap_1d(p: f64, l: f64) -> f64 {
    let r = p - l * (p / l).floor();
    if r >= l {
        r - l
    } else if r < 0.0 {
        r + l
    } else {
        r
    }
}

/// A single atomic configuration: species, Cartesian positions (Å), the
/// periodic cell, and optional energy/force labels (eV, eV/Å).
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub species: Vec<String>,
    pub positions: Vec<Vec3>,
    pub cell: Cell,
    /// Total potential energy label, if present.
    pub energy: Option<f64>,
    /// Per-atom force labels, if present (same length as `positions`).
    pub forces: Option<Vec<Vec3>>,
}

impl Configuration {
    pub fn new(species: Vec<String>, positions: Vec<Vec3>, cell: Cell) -> Result<Configuration> {
        let c = Configuration { species, positions, cell, energy: None, forces: None };
        c.validate()?;
        Ok(c)
    }

    pub fn natoms(&self) -> usize {
        self.positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.is_empty() {
            return Err(Error::Invalid("configuration has no atoms".into()));
        }
        if self.species.len() != self.positions.len() {
            return Err(Error::Invalid(format!(
                "species ({}) and positions ({}) lengths differ",
                self.species.len(),
                self.positions.len()
            )));
        }
        if self.positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::Invalid("non-finite position".into()));
        }
        if let Some(f) = &self.forces {
            if f.len() != self.positions.len() {
                return Err(Error::Invalid(format!(
                    "forces ({}) and positions ({}) lengths differ",
                    f.len(),
                    self.positions.len()
                )));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid("non-finite force label".into()));
            }
        }
        if let Some(e) = self.energy {
            if !e.is_finite() {
                return Err(Error::Invalid("non-finite energy label".into()));
            }
        }
        Ok(())
    }

    /// Positions wrapped into the primary cell.
    pub fn wrapped_positions(&self) -> Vec<Vec3> {
        self.positions.iter().map(|&p| self.cell.wrap(p)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimum_image_basics() {
        let cell = Cell::cubic(10.0).unwrap();
        // Inside the primary image: unchanged.
        let d = cell.minimum_image(Vec3::new(1.0, 1.0, 1.0));
        assert_eq!(d, Vec3::new(1.0, 1.0, 1.0));
        // 6 wraps to -4.
        let d = cell.minimum_image(Vec3::new(6.0, 0.0, 0.0));
        assert_eq!(d, Vec3::new(-4.0, 0.0, 0.0));
        // Boundary ties go to the lower end of [-L/2, L/2): both -5 and +5
        // are congruent, the convention picks -5. 15 ≡ 5 ≡ -5.
        let d = cell.minimum_image(Vec3::new(-5.0, 5.0, 15.0));
        assert_eq!(d, Vec3::new(-5.0, -5.0, -5.0));
    }

    #[test]
    fn wrap_basics() {
        let cell = Cell::new(10.0, 20.0, 30.0).unwrap();
        let p = cell.wrap(Vec3::new(-0.5, 20.0, 65.0));
        assert!((p.x - 9.5).abs() < 1e-12);
        assert_eq!(p.y, 0.0);
        assert!((p.z - 5.0).abs() < 1e-12);
    }

    #[test]
    fn bad_cells_rejected() {
        assert!(Cell::new(0.0, 1.0, 1.0).is_err());
        assert!(Cell::new(1.0, -2.0, 1.0).is_err());
        assert!(Cell::new(1.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn configuration_validation() {
        let cell = Cell::cubic(5.0).unwrap();
        assert!(Configuration::new(vec![], vec![], cell).is_err());
        let c = Configuration::new(
            vec!["O".into(), "H".into()],
            vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)],
            cell,
        )
        .unwrap();
        assert_eq!(c.natoms(), 2);
        let mut bad = c.clone();
        bad.forces = Some(vec![Vec3::ZERO]);
        assert!(bad.validate().is_err());
    }
}
