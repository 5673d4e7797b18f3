//! Unit system and physical constants.
//!
//! Internal units throughout the crate:
//!
//! | quantity | unit |
//! |----------|------|
//! | length   | Å (angstrom) |
//! | energy   | eV |
//! | mass     | amu |
//! | time     | fs |
//! | charge   | e (elementary charge) |
//! | temperature | K |
//!
//! These are not mutually consistent, so two conversion constants appear in
//! the dynamics: a force of 1 eV/Å on a mass of 1 amu produces an
//! acceleration of [`ACCEL`] Å/fs², and a kinetic energy `½ m v²` in
//! amu·(Å/fs)² equals `0.5 * m * v² / ACCEL` eV.

use crate::error::{Error, Result};

/// Boltzmann constant, eV/K (CODATA 2018, exact by SI definition).
pub const KB: f64 = 8.617_333_262e-5;

/// Acceleration in Å/fs² produced by 1 (eV/Å) acting on 1 amu.
///
/// Derived from the exact SI elementary charge and the CODATA 2018 atomic
/// mass constant: (e [J/eV] / 1e-10 [m/Å]) / m_u [kg] × 1e-20 [(m/s²)→(Å/fs²)].
pub const ACCEL: f64 = 9.648_533_212e-3;

/// Grams per amu (CODATA 2018). Used for g/mL density conversions.
pub const GRAMS_PER_AMU: f64 = 1.660_539_066_60e-24;

/// Cubic centimeters (mL) per Å³.
pub const ML_PER_A3: f64 = 1e-24;

/// Atomic mass in amu for a chemical symbol (conventional atomic weights).
///
/// Returns an error for symbols outside the supported table.
pub fn atomic_mass(symbol: &str) -> Result<f64> {
    let m = match symbol {
        "H" => 1.008,
        "D" => 2.014,
        "He" => 4.002602,
        "Li" => 6.94,
        "Be" => 9.0121831,
        "B" => 10.81,
        "C" => 12.011,
        "N" => 14.007,
        "O" => 15.999,
        "F" => 18.998403163,
        "Ne" => 20.1797,
        "Na" => 22.98976928,
        "Mg" => 24.305,
        "Al" => 26.9815385,
        "Si" => 28.085,
        "P" => 30.973761998,
        "S" => 32.06,
        "Cl" => 35.45,
        "Ar" => 39.948,
        "K" => 39.0983,
        "Ca" => 40.078,
        "Ti" => 47.867,
        "Fe" => 55.845,
        "Ni" => 58.6934,
        "Cu" => 63.546,
        "Zn" => 65.38,
        "Br" => 79.904,
        "Kr" => 83.798,
        "Ag" => 107.8682,
        "I" => 126.90447,
        "Xe" => 131.293,
        "Cs" => 132.90545196,
        "Au" => 196.966569,
        "Pb" => 207.2,
        _ => return Err(Error::UnknownSpecies(symbol.to_string())),
    };
    Ok(m)
}
