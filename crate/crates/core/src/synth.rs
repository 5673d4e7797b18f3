//! Deterministic generators of synthetic atomic configurations, used by the
//! test-suite and by small demonstration runs: simple-cubic lattices, random
//! gases with a minimum-separation constraint, and rigid-water boxes.

use crate::atoms::{Cell, Configuration};
use crate::error::{Error, Result};
use crate::vec3::Vec3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Simple-cubic lattice of one species: `n_per_side`³ atoms with the given
/// spacing, cell length `n_per_side · spacing` (periodically consistent).
pub fn cubic_lattice(symbol: &str, n_per_side: usize, spacing: f64) -> Result<Configuration> {
    if n_per_side == 0 {
        return Err(Error::Invalid("n_per_side must be ≥ 1".into()));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::Invalid(format!("spacing must be positive, got {spacing}")));
    }
    let l = n_per_side as f64 * spacing;
    let cell = Cell::cubic(l)?;
    let mut species = Vec::new();
    let mut positions = Vec::new();
    for ix in 0..n_per_side {
        for iy in 0..n_per_side {
            for iz in 0..n_per_side {
                species.push(symbol.to_string());
                positions.push(Vec3::new(
                    ix as f64 * spacing,
                    iy as f64 * spacing,
                    iz as f64 * spacing,
                ));
            }
        }
    }
    Configuration::new(species, positions, cell)
}

/// The lattice of [`cubic_lattice`] with every position displaced by a
/// uniform jitter in `[-amplitude, amplitude]³`.
pub fn perturbed_lattice(
    symbol: &str,
    n_per_side: usize,
    spacing: f64,
    amplitude: f64,
    seed: u64,
) -> Result<Configuration> {
    let mut config = cubic_lattice(symbol, n_per_side, spacing)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for p in &mut config.positions {
        *p += Vec3::new(
            rng.gen_range(-amplitude..=amplitude),
            rng.gen_range(-amplitude..=amplitude),
            rng.gen_range(-amplitude..=amplitude),
        );
    }
    Ok(config)
}

/// Random gas: for each `(symbol, count)` pair, place `count` atoms uniformly
/// in the cell, rejecting positions closer than `min_dist` (minimum image) to
/// any atom placed so far.
pub fn random_gas(
    species_counts: &[(&str, usize)],
    cell: Cell,
    min_dist: f64,
    seed: u64,
) -> Result<Configuration> {
    if !(min_dist >= 0.0 && min_dist.is_finite()) {
        return Err(Error::Invalid(format!("min_dist must be ≥ 0, got {min_dist}")));
    }
    let total: usize = species_counts.iter().map(|(_, c)| c).sum();
    if total == 0 {
        return Err(Error::Invalid("no atoms requested".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut species = Vec::with_capacity(total);
    let mut positions: Vec<Vec3> = Vec::with_capacity(total);
    const MAX_TRIES: usize = 100_000;
    for &(symbol, count) in species_counts {
        for _ in 0..count {
            let mut placed = false;
            for _ in 0..MAX_TRIES {
                let cand = Vec3::new(
                    rng.gen_range(0.0..cell.lengths.x),
                    rng.gen_range(0.0..cell.lengths.y),
                    rng.gen_range(0.0..cell.lengths.z),
                );
                let ok = positions
                    .iter()
                    .all(|&p| cell.minimum_image(cand - p).norm() >= min_dist);
                if ok {
                    species.push(symbol.to_string());
                    positions.push(cand);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(Error::Invalid(format!(
                    "could not place atom {} with min_dist {min_dist} after {MAX_TRIES} tries; \
                     cell too crowded",
                    positions.len()
                )));
            }
        }
    }
    Configuration::new(species, positions, cell)
}

/// Rigid SPC/E-geometry water: O–H bond 0.9572 Å, H–O–H angle 104.52°.
/// Returns (species, positions) of one molecule with oxygen at the origin
/// and the dipole along +z, before rotation.
fn water_template() -> [Vec3; 3] {
    let bond = 0.9572;
    let half = 104.52f64.to_radians() / 2.0;
    [
        Vec3::ZERO,
        Vec3::new(bond * half.sin(), 0.0, bond * half.cos()),
        Vec3::new(-bond * half.sin(), 0.0, bond * half.cos()),
    ]
}

/// Uniformly random rotation matrix (as three rows) from a random unit
/// quaternion (Marsaglia; uniform on SO(3)).
fn random_rotation(rng: &mut ChaCha12Rng) -> [Vec3; 3] {
    // Unit quaternion from four normals.
    let mut q = [0.0f64; 4];
    loop {
        let mut norm2 = 0.0;
        for v in &mut q {
            *v = rng.gen_range(-1.0..=1.0);
            norm2 += *v * *v;
        }
        if norm2 > 1e-12 && norm2 <= 1.0 {
            let n = norm2.sqrt();
            for v in &mut q {
                *v /= n;
            }
            break;
        }
    }
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        Vec3::new(1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)),
        Vec3::new(2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)),
        Vec3::new(2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)),
    ]
}

fn rotate(rows: &[Vec3; 3], v: Vec3) -> Vec3 {
    Vec3::new(rows[0].dot(v), rows[1].dot(v), rows[2].dot(v))
}

/// Box of `n_molecules` rigid waters at the given mass density (g/mL).
///
/// Molecules sit on a jittered cubic grid of molecular centers with uniformly
/// random orientations, so no two molecules overlap badly even at liquid
/// density. The cell length follows from the density:
/// `L = (n · m_H2O · amu→g / (ρ · mL→Å³))^(1/3)`.
pub fn water_box(n_molecules: usize, density_g_ml: f64, seed: u64) -> Result<Configuration> {
    if n_molecules == 0 {
        return Err(Error::Invalid("n_molecules must be ≥ 1".into()));
    }
    if !(density_g_ml > 0.0 && density_g_ml.is_finite()) {
        return Err(Error::Invalid(format!(
            "density must be positive, got {density_g_ml}"
        )));
    }
    let m_water = 2.0 * crate::units::atomic_mass("H")? + crate::units::atomic_mass("O")?;
    let volume = n_molecules as f64 * m_water * crate::units::GRAMS_PER_AMU
        / (density_g_ml * crate::units::ML_PER_A3);
    let l = volume.cbrt();
    let cell = Cell::cubic(l)?;
    // Smallest grid that holds all molecules.
    let mut n_grid = 1usize;
    while n_grid * n_grid * n_grid < n_molecules {
        n_grid += 1;
    }
    let spacing = l / n_grid as f64;
    let template = water_template();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut species = Vec::with_capacity(3 * n_molecules);
    let mut positions = Vec::with_capacity(3 * n_molecules);
    let jitter = 0.1 * spacing;
    let mut placed = 0usize;
    'outer: for ix in 0..n_grid {
        for iy in 0..n_grid {
            for iz in 0..n_grid {
                if placed == n_molecules {
                    break 'outer;
                }
                let center = Vec3::new(
                    (ix as f64 + 0.5) * spacing + rng.gen_range(-jitter..=jitter),
                    (iy as f64 + 0.5) * spacing + rng.gen_range(-jitter..=jitter),
                    (iz as f64 + 0.5) * spacing + rng.gen_range(-jitter..=jitter),
                );
                let rot = random_rotation(&mut rng);
                for (ti, t) in template.iter().enumerate() {
                    species.push(if ti == 0 { "O".to_string() } else { "H".to_string() });
                    positions.push(cell.wrap(center + rotate(&rot, *t)));
                }
                placed += 1;
            }
        }
    }
    Configuration::new(species, positions, cell)
}
