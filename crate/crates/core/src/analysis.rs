//! Trajectory analysis for molecular (water-like) systems: molecule and
//! dipole identification, radial distribution functions, axis profiles of
//! density and dipole orientation, and k-space dipole correlations.
//!
//! All estimators take a slice of frames ([`Configuration`]s) and average
//! over them; every bin edge and normalization is deterministic.

use crate::atoms::Configuration;
use crate::error::{Error, Result};
use crate::units::{atomic_mass, GRAMS_PER_AMU, ML_PER_A3};
use crate::vec3::Vec3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Cartesian axis selector for profiles and k-space correlations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn unit(self) -> Vec3 {
        match self {
            Axis::X => Vec3::new(1.0, 0.0, 0.0),
            Axis::Y => Vec3::new(0.0, 1.0, 0.0),
            Axis::Z => Vec3::new(0.0, 0.0, 1.0),
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Axis> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            _ => Err(Error::Invalid(format!("axis must be x, y or z, got {s:?}"))),
        }
    }
}

/// Point charges placed on rigid water for dipole analysis (units of e).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaterCharges {
    pub q_h: f64,
    pub q_o: f64,
}

impl Default for WaterCharges {
    /// SPC/E partial charges.
    fn default() -> Self {
        WaterCharges { q_h: 0.4238, q_o: -0.8476 }
    }
}

/// One identified water molecule.
#[derive(Debug, Clone)]
pub struct Molecule {
    /// Index of the oxygen.
    pub oxygen: usize,
    /// Indices of the two hydrogens.
    pub hydrogens: [usize; 2],
    /// Point-charge dipole moment, e·Å, computed with minimum-image
    /// H positions relative to the oxygen.
    pub dipole: Vec3,
    /// Molecular center (the oxygen position, wrapped into the cell).
    pub center: Vec3,
}

/// Maximum chemically plausible O–H bond length (Å) for assignment.
pub const MAX_OH_BOND: f64 = 1.3;

/// Group a frame's atoms into water molecules by assigning every hydrogen to
/// its nearest oxygen (minimum image).
///
/// Errors if the H:O ratio is not exactly 2:1, if any other species is
/// present, if an assigned O–H distance exceeds [`MAX_OH_BOND`], or if any
/// oxygen ends up with a hydrogen count other than 2.
pub fn identify_molecules(config: &Configuration) -> Result<Vec<Molecule>> {
    identify_molecules_with(config, WaterCharges::default())
}

pub fn identify_molecules_with(
    config: &Configuration,
    charges: WaterCharges,
) -> Result<Vec<Molecule>> {
    config.validate()?;
    let mut oxygens = Vec::new();
    let mut hydrogens = Vec::new();
    for (i, s) in config.species.iter().enumerate() {
        match s.as_str() {
            "O" => oxygens.push(i),
            "H" => hydrogens.push(i),
            other => {
                return Err(Error::Invalid(format!(
                    "molecule analysis expects water (H, O only), found {other:?} at atom {i}"
                )))
            }
        }
    }
    if oxygens.is_empty() || hydrogens.len() != 2 * oxygens.len() {
        return Err(Error::Invalid(format!(
            "not water stoichiometry: {} O and {} H atoms",
            oxygens.len(),
            hydrogens.len()
        )));
    }
    let cell = config.cell;
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); oxygens.len()];
    for &h in &hydrogens {
        let mut best = (f64::INFINITY, usize::MAX);
        for (oi, &o) in oxygens.iter().enumerate() {
            let d = cell.minimum_image(config.positions[h] - config.positions[o]).norm();
            if d < best.0 {
                best = (d, oi);
            }
        }
        if best.0 > MAX_OH_BOND {
            return Err(Error::Invalid(format!(
                "hydrogen {h} is {:.3} Å from the nearest oxygen (limit {MAX_OH_BOND}); \
                 not an intact water structure",
                best.0
            )));
        }
        assigned[best.1].push(h);
    }
    let mut out = Vec::with_capacity(oxygens.len());
    for (oi, &o) in oxygens.iter().enumerate() {
        if assigned[oi].len() != 2 {
            return Err(Error::Invalid(format!(
                "oxygen {o} has {} assigned hydrogens, expected 2",
                assigned[oi].len()
            )));
        }
        let mut dipole = Vec3::ZERO;
        for &h in &assigned[oi] {
            let rel = cell.minimum_image(config.positions[h] - config.positions[o]);
            dipole += rel * charges.q_h;
        }
        // The oxygen sits at the origin of the molecular frame, so q_o
        // contributes nothing; net charge q_o + 2 q_h shifts nothing when it
        // is zero and is deliberately referenced to the oxygen otherwise.
        out.push(Molecule {
            oxygen: o,
            hydrogens: [assigned[oi][0], assigned[oi][1]],
            dipole,
            center: cell.wrap(config.positions[o]),
        });
    }
    Ok(out)
}

/// Radial distribution function between two species over a set of frames.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rdf {
    pub species_a: String,
    pub species_b: String,
    pub r_max: f64,
    /// Bin centers (Å).
    pub r: Vec<f64>,
    /// g(r) per bin.
    pub g: Vec<f64>,
}

pub fn compute_rdf(
    frames: &[Configuration],
    species_a: &str,
    species_b: &str,
    r_max: f64,
    n_bins: usize,
) -> Result<Rdf> {
    if frames.is_empty() {
        return Err(Error::Invalid("no frames".into()));
    }
    if n_bins == 0 {
        return Err(Error::Invalid("n_bins must be ≥ 1".into()));
    }
    if !(r_max > 0.0 && r_max.is_finite()) {
        return Err(Error::Invalid(format!("r_max must be positive, got {r_max}")));
    }
    let dr = r_max / n_bins as f64;
    let mut acc = vec![0.0f64; n_bins];
    for (fi, frame) in frames.iter().enumerate() {
        frame.validate()?;
        if r_max > 0.5 * frame.cell.min_length() {
            return Err(Error::Invalid(format!(
                "r_max = {r_max} exceeds half the shortest cell length of frame {fi} \
                 ({}); distances beyond that are ambiguous under minimum image",
                0.5 * frame.cell.min_length()
            )));
        }
        let sel_a: Vec<usize> =
            (0..frame.natoms()).filter(|&i| frame.species[i] == species_a).collect();
        let sel_b: Vec<usize> =
            (0..frame.natoms()).filter(|&i| frame.species[i] == species_b).collect();
        if sel_a.is_empty() || sel_b.is_empty() {
            return Err(Error::Invalid(format!(
                "frame {fi} has no {:?} or no {:?} atoms",
                species_a, species_b
            )));
        }
        // Number of ordered (a, b) pairs with a ≠ b as atoms.
        let n_pairs = if species_a == species_b {
            (sel_a.len() * (sel_a.len() - 1)) as f64
        } else {
            (sel_a.len() * sel_b.len()) as f64
        };
        if n_pairs == 0.0 {
            return Err(Error::Invalid(format!(
                "frame {fi} has a single {species_a:?} atom; g({species_a},{species_a}) undefined"
            )));
        }
        let volume = frame.cell.volume();
        let mut counts = vec![0.0f64; n_bins];
        for &i in &sel_a {
            for &j in &sel_b {
                if i == j {
                    continue;
                }
                let d = frame
                    .cell
                    .minimum_image(frame.positions[j] - frame.positions[i])
                    .norm();
                if d < r_max {
                    counts[(d / dr) as usize] += 1.0;
                }
            }
        }
        // g(r) = observed pair density / ideal-gas pair density per shell.
        for (bi, &c) in counts.iter().enumerate() {
            let r_lo = bi as f64 * dr;
            let r_hi = r_lo + dr;
            let shell = 4.0 / 3.0 * std::f64::consts::PI * (r_hi.powi(3) - r_lo.powi(3));
            acc[bi] += c * volume / (n_pairs * shell);
        }
    }
    let nf = frames.len() as f64;
    let g: Vec<f64> = acc.iter().map(|x| x / nf).collect();
    let r: Vec<f64> = (0..n_bins).map(|i| (i as f64 + 0.5) * dr).collect();
    Ok(Rdf {
        species_a: species_a.to_string(),
        species_b: species_b.to_string(),
        r_max,
        r,
        g,
    })
}

impl Rdf {
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "# rdf {}-{}  r_max={}  bins={}\n# r[A]  g(r)\n",
            self.species_a,
            self.species_b,
            self.r_max,
            self.r.len()
        );
        for (r, g) in self.r.iter().zip(&self.g) {
            writeln!(s, "{r:.6} {g:.8}").unwrap();
        }
        s
    }
}

/// Mass density profile along an axis, averaged over frames.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityProfile {
    pub axis: Axis,
    /// Bin centers (Å).
    pub position: Vec<f64>,
    /// Mass density (g/mL) per bin.
    pub density: Vec<f64>,
}

pub fn density_profile(
    frames: &[Configuration],
    axis: Axis,
    n_bins: usize,
) -> Result<DensityProfile> {
    if frames.is_empty() {
        return Err(Error::Invalid("no frames".into()));
    }
    if n_bins == 0 {
        return Err(Error::Invalid("n_bins must be ≥ 1".into()));
    }
    let l_axis = frames[0].cell.lengths[axis.index()];
    let mut acc = vec![0.0f64; n_bins];
    for frame in frames {
        frame.validate()?;
        if (frame.cell.lengths[axis.index()] - l_axis).abs() > 1e-9 {
            return Err(Error::Invalid(
                "frames have different cell lengths along the profile axis".into(),
            ));
        }
        let bin_volume = frame.cell.volume() / n_bins as f64;
        for (i, p) in frame.positions.iter().enumerate() {
            let x = frame.cell.wrap(*p)[axis.index()];
            let bi = ((x / l_axis * n_bins as f64) as usize).min(n_bins - 1);
            acc[bi] += atomic_mass(&frame.species[i])? * GRAMS_PER_AMU / (bin_volume * ML_PER_A3);
        }
    }
    let nf = frames.len() as f64;
    Ok(DensityProfile {
        axis,
        position: (0..n_bins).map(|i| (i as f64 + 0.5) * l_axis / n_bins as f64).collect(),
        density: acc.iter().map(|x| x / nf).collect(),
    })
}

impl DensityProfile {
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "# density profile  axis={:?}  bins={}\n# position[A]  density[g/mL]\n",
            self.axis,
            self.position.len()
        );
        for (p, d) in self.position.iter().zip(&self.density) {
            writeln!(s, "{p:.6} {d:.8}").unwrap();
        }
        s
    }
}

/// Mean dipole orientation (cos between dipole and axis) per axis bin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrientationProfile {
    pub axis: Axis,
    pub position: Vec<f64>,
    /// ⟨cos θ⟩ per bin; NaN where no molecule was observed.
    pub mean_cos: Vec<f64>,
    /// Total molecules observed per bin over all frames.
    pub count: Vec<usize>,
}

pub fn orientation_profile(
    frames: &[Configuration],
    axis: Axis,
    n_bins: usize,
    charges: WaterCharges,
) -> Result<OrientationProfile> {
    if frames.is_empty() {
        return Err(Error::Invalid("no frames".into()));
    }
    if n_bins == 0 {
        return Err(Error::Invalid("n_bins must be ≥ 1".into()));
    }
    let l_axis = frames[0].cell.lengths[axis.index()];
    let e_axis = axis.unit();
    let mut sum = vec![0.0f64; n_bins];
    let mut count = vec![0usize; n_bins];
    for frame in frames {
        if (frame.cell.lengths[axis.index()] - l_axis).abs() > 1e-9 {
            return Err(Error::Invalid(
                "frames have different cell lengths along the profile axis".into(),
            ));
        }
        for mol in identify_molecules_with(frame, charges)? {
            let norm = mol.dipole.norm();
            if norm == 0.0 {
                continue;
            }
            let x = mol.center[axis.index()];
            let bi = ((x / l_axis * n_bins as f64) as usize).min(n_bins - 1);
            sum[bi] += mol.dipole.dot(e_axis) / norm;
            count[bi] += 1;
        }
    }
    let mean_cos = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect();
    Ok(OrientationProfile {
        axis,
        position: (0..n_bins).map(|i| (i as f64 + 0.5) * l_axis / n_bins as f64).collect(),
        mean_cos,
        count,
    })
}

impl OrientationProfile {
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "# orientation profile  axis={:?}  bins={}\n# position[A]  mean_cos  count\n",
            self.axis,
            self.position.len()
        );
        for i in 0..self.position.len() {
            writeln!(s, "{:.6} {:.8} {}", self.position[i], self.mean_cos[i], self.count[i])
                .unwrap();
        }
        s
    }
}

/// k-resolved correlation of the axis component of molecular dipoles:
///
/// ```text
/// C(k_n) = ⟨ |Σ_mol μ_axis · exp(i k_n x_mol)|² ⟩ / N_mol,
/// k_n = 2π n / L_axis,  n = 1..=n_max,
/// ```
///
/// where x_mol is the molecular center coordinate along the axis and the
/// average runs over frames. The 1/N_mol normalization makes an
/// uncorrelated system size-independent (C → ⟨μ_axis²⟩).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DipoleCorrelation {
    pub axis: Axis,
    /// Wavenumbers (1/Å).
    pub k: Vec<f64>,
    pub value: Vec<f64>,
}

pub fn dipole_k_correlation(
    frames: &[Configuration],
    axis: Axis,
    n_max: usize,
    charges: WaterCharges,
) -> Result<DipoleCorrelation> {
    if frames.is_empty() {
        return Err(Error::Invalid("no frames".into()));
    }
    if n_max == 0 {
        return Err(Error::Invalid("n_max must be ≥ 1".into()));
    }
    let l_axis = frames[0].cell.lengths[axis.index()];
    let mut acc = vec![0.0f64; n_max];
    for frame in frames {
        if (frame.cell.lengths[axis.index()] - l_axis).abs() > 1e-9 {
            return Err(Error::Invalid(
                "frames have different cell lengths along the correlation axis".into(),
            ));
        }
        let mols = identify_molecules_with(frame, charges)?;
        let n_mol = mols.len() as f64;
        for n in 1..=n_max {
            let k = 2.0 * std::f64::consts::PI * n as f64 / l_axis;
            let mut m = Complex64::new(0.0, 0.0);
            for mol in &mols {
                let mu = mol.dipole[axis.index()];
                m += mu * Complex64::from_polar(1.0, k * mol.center[axis.index()]);
            }
            acc[n - 1] += m.norm_sqr() / n_mol;
        }
    }
    let nf = frames.len() as f64;
    Ok(DipoleCorrelation {
        axis,
        k: (1..=n_max).map(|n| 2.0 * std::f64::consts::PI * n as f64 / l_axis).collect(),
        value: acc.iter().map(|x| x / nf).collect(),
    })
}

impl DipoleCorrelation {
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "# dipole k-correlation  axis={:?}  n_max={}\n# k[1/A]  <|m(k)|^2>/N_mol\n",
            self.axis,
            self.k.len()
        );
        for (k, v) in self.k.iter().zip(&self.value) {
            writeln!(s, "{k:.8} {v:.10e}").unwrap();
        }
        s
    }
}
