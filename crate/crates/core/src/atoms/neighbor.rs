//! Periodic neighbor lists under the minimum-image convention.

use super::{Cell, Configuration};
use crate::error::{Error, Result};
use crate::vec3::Vec3;

/// One neighbor of a central atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Index of the neighboring atom in the configuration.
    pub index: usize,
    /// Minimum-image displacement r_j - r_i (Å).
    pub disp: Vec3,
    /// |disp| (Å), always in (0, r_cut).
    pub dist: f64,
}

/// Full neighbor list: for every atom i, all atoms j ≠ i with minimum-image
/// distance strictly less than `r_cut`. Both directions are stored, so
/// `j ∈ neighbors[i] ⇔ i ∈ neighbors[j]`.
#[derive(Debug, Clone)]
pub struct NeighborList {
    pub r_cut: f64,
    pub neighbors: Vec<Vec<Neighbor>>,
}

impl NeighborList {
    /// Build the neighbor list for `config` with cutoff `r_cut`.
    ///
    /// Requires `0 < r_cut < min(L)/2` so that at most one periodic image of
    /// any atom can be within the cutoff; larger cutoffs are rejected because
    /// the minimum-image convention would silently drop interactions.
    ///
    /// Runs in O(N) for dense systems via a cell-linked grid (falling back to
    /// the O(N²) double loop when the box is too small to host a 3×3×3 grid
    /// of cutoff-sized cells). Neighbors of each atom are sorted by index, so
    /// the output is independent of the internal strategy.
    pub fn build(config: &Configuration, r_cut: f64) -> Result<NeighborList> {
        let cell = config.cell;
        if !(r_cut > 0.0 && r_cut.is_finite()) {
            return Err(Error::Geometry(format!("r_cut must be positive, got {r_cut}")));
        }
        if r_cut >= 0.5 * cell.min_length() {
            return Err(Error::Geometry(format!(
                "r_cut = {} must be < half the shortest cell length ({}); \
                 beyond that a single minimum image no longer captures all neighbors",
                r_cut,
                0.5 * cell.min_length()
            )));
        }
        let wrapped = config.wrapped_positions();
        let n = wrapped.len();

        let ncell = [
            (cell.lengths.x / r_cut).floor() as usize,
            (cell.lengths.y / r_cut).floor() as usize,
            (cell.lengths.z / r_cut).floor() as usize,
        ];
        let use_grid = ncell.iter().all(|&c| c >= 3);

        let mut neighbors: Vec<Vec<Neighbor>> = vec![Vec::new(); n];
        if use_grid {
            Self::build_grid(&wrapped, cell, r_cut, ncell, &mut neighbors);
        } else {
            Self::build_quadratic(&wrapped, cell, r_cut, &mut neighbors);
        }
        for list in &mut neighbors {
            list.sort_by_key(|nb| nb.index);
        }
        Ok(NeighborList { r_cut, neighbors })
    }

    fn build_quadratic(pos: &[Vec3], cell: Cell, r_cut: f64, out: &mut [Vec<Neighbor>]) {
        let r2 = r_cut * r_cut;
        for i in 0..pos.len() {
            for j in (i + 1)..pos.len() {
                let disp = cell.minimum_image(pos[j] - pos[i]);
                let d2 = disp.norm2();
                if d2 < r2 {
                    let dist = d2.sqrt();
                    out[i].push(Neighbor { index: j, disp, dist });
                    out[j].push(Neighbor { index: i, disp: -disp, dist });
                }
            }
        }
    }

    fn build_grid(
        pos: &[Vec3],
        cell: Cell,
        r_cut: f64,
        ncell: [usize; 3],
        out: &mut [Vec<Neighbor>],
    ) {
        let r2 = r_cut * r_cut;
        let nc = [ncell[0] as i64, ncell[1] as i64, ncell[2] as i64];
        let bin_of = |p: Vec3| -> [i64; 3] {
            let mut b = [0i64; 3];
            for (a, &l) in [cell.lengths.x, cell.lengths.y, cell.lengths.z].iter().enumerate() {
                let idx = (p[a] / l * ncell[a] as f64).floor() as i64;
                // Positions are wrapped into [0, L), but p/L*n can still hit n
                // by rounding when p is just below L.
                b[a] = idx.clamp(0, nc[a] - 1);
            }
            b
        };
        let flat = |b: [i64; 3]| -> usize {
            ((b[0] * nc[1] + b[1]) * nc[2] + b[2]) as usize
        };
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); (nc[0] * nc[1] * nc[2]) as usize];
        for (i, &p) in pos.iter().enumerate() {
            buckets[flat(bin_of(p))].push(i);
        }
        for i in 0..pos.len() {
            let bi = bin_of(pos[i]);
            for dx in -1..=1i64 {
                for dy in -1..=1i64 {
                    for dz in -1..=1i64 {
                        let nb = [
                            (bi[0] + dx).rem_euclid(nc[0]),
                            (bi[1] + dy).rem_euclid(nc[1]),
                            (bi[2] + dz).rem_euclid(nc[2]),
                        ];
                        for &j in &buckets[flat(nb)] {
                            if j == i {
                                continue;
                            }
                            let disp = cell.minimum_image(pos[j] - pos[i]);
                            let d2 = disp.norm2();
                            if d2 < r2 {
                                out[i].push(Neighbor { index: j, disp, dist: d2.sqrt() });
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn natoms(&self) -> usize {
        self.neighbors.len()
    }

    /// Total number of directed pairs.
    pub fn npairs(&self) -> usize {
        self.neighbors.iter().map(|l| l.len()).sum()
    }
}
