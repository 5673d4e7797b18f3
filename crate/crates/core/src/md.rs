//! Velocity-Verlet molecular dynamics with NVE, Nosé–Hoover NVT and
//! Langevin (BAOAB) NVT integrators.
//!
//! Units: positions Å, velocities Å/fs, time fs, energies eV, masses amu.
//! A force of 1 eV/Å accelerates 1 amu by [`crate::units::ACCEL`] Å/fs².
//!
//! Positions are integrated *unwrapped* (they may leave the primary cell);
//! every interaction kernel applies minimum-image/wrapping internally, so
//! dynamics are unaffected while diffusion stays observable.

use crate::atoms::{Cell, Configuration, RawFrame};
use crate::error::{Error, Result};
use crate::model::Evaluator;
use crate::units::{atomic_mass, ACCEL, KB};
use crate::vec3::Vec3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Hard sanity bound on atomic speed (Å/fs). Thermal speeds at a few hundred
/// kelvin are two orders of magnitude below this; crossing it means the
/// integration has blown up.
pub const MAX_SPEED: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ensemble {
    Nve,
    NoseHoover,
    Langevin,
}

/// What to run: ensemble, target temperature, timestep, length.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdProtocol {
    pub ensemble: Ensemble,
    /// Target (and initialization) temperature, K.
    pub temperature: f64,
    /// Timestep, fs.
    pub dt: f64,
    pub n_steps: usize,
    /// Snapshot every `stride` steps (step 0 is always recorded).
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Seed for velocity initialization and the Langevin noise.
    #[serde(default = "default_md_seed")]
    pub seed: u64,
    /// Thermostat time constant (fs); defaults to 100·dt when absent.
    pub tau: Option<f64>,
}

fn default_stride() -> usize {
    1
}

fn default_md_seed() -> u64 {
    42
}

impl MdProtocol {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Invalid(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.stride == 0 {
            return Err(Error::Invalid("stride must be ≥ 1".into()));
        }
        if let Some(tau) = self.tau {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::Invalid(format!("tau must be positive, got {tau}")));
            }
        }
        Ok(())
    }

    pub fn tau_fs(&self) -> f64 {
        self.tau.unwrap_or(100.0 * self.dt)
    }
}

/// Anything that maps a configuration to energy and forces.
pub trait Potential {
    fn compute(&mut self, config: &Configuration) -> Result<PotentialOutput>;
}

#[derive(Debug, Clone)]
pub struct PotentialOutput {
    pub energy: f64,
    pub e_sr: f64,
    pub e_lr: f64,
    pub forces: Vec<Vec3>,
}

impl Potential for Evaluator {
    fn compute(&mut self, config: &Configuration) -> Result<PotentialOutput> {
        let pred = self.evaluate(config)?;
        Ok(PotentialOutput {
            energy: pred.energy,
            e_sr: pred.e_sr,
            e_lr: pred.e_lr,
            forces: pred.forces,
        })
    }
}

/// Full dynamical state.
#[derive(Debug, Clone)]
pub struct MdState {
    pub species: Vec<String>,
    /// Unwrapped positions (Å).
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub masses: Vec<f64>,
    pub cell: Cell,
    pub forces: Vec<Vec3>,
    pub e_pot: f64,
    pub e_sr: f64,
    pub e_lr: f64,
    /// Nosé–Hoover friction velocity (1/fs) and its integral.
    pub nh_xi: f64,
    pub nh_eta: f64,
    pub step: usize,
    pub time: f64,
}

impl MdState {
    /// Build a state from a configuration with Maxwell–Boltzmann velocities
    /// at the protocol temperature. NVE and Nosé–Hoover runs remove the net
    /// momentum (their dynamics conserve it); Langevin does not, since the
    /// noise breaks momentum conservation anyway. After momentum removal the
    /// velocities are rescaled so the instantaneous temperature matches the
    /// target exactly.
    pub fn init(config: &Configuration, protocol: &MdProtocol) -> Result<MdState> {
        protocol.validate()?;
        config.validate()?;
        let masses: Vec<f64> =
            config.species.iter().map(|s| atomic_mass(s)).collect::<Result<_>>()?;
        let mut rng = ChaCha12Rng::seed_from_u64(protocol.seed);
        let mut velocities = Vec::with_capacity(config.natoms());
        for &m in &masses {
            let sigma = (KB * protocol.temperature * ACCEL / m).sqrt();
            let v = Vec3::new(
                sigma * rng.sample::<f64, _>(StandardNormal),
                sigma * rng.sample::<f64, _>(StandardNormal),
                sigma * rng.sample::<f64, _>(StandardNormal),
            );
            velocities.push(v);
        }
        let mut state = MdState {
            species: config.species.clone(),
            positions: config.positions.clone(),
            velocities,
            masses,
            cell: config.cell,
            forces: Vec::new(),
            e_pot: 0.0,
            e_sr: 0.0,
            e_lr: 0.0,
            nh_xi: 0.0,
            nh_eta: 0.0,
            step: 0,
            time: 0.0,
        };
        if protocol.ensemble != Ensemble::Langevin {
            state.remove_net_momentum();
        }
        let g = state.dof(protocol.ensemble);
        if g > 0.0 {
            let t_now = state.temperature(protocol.ensemble);
            if t_now > 0.0 {
                let scale = (protocol.temperature / t_now).sqrt();
                for v in &mut state.velocities {
                    *v = *v * scale;
                }
            }
        }
        Ok(state)
    }

    pub fn natoms(&self) -> usize {
        self.positions.len()
    }

    pub fn remove_net_momentum(&mut self) {
        let mut p = Vec3::ZERO;
        let mut m_tot = 0.0;
        for (v, &m) in self.velocities.iter().zip(&self.masses) {
            p += *v * m;
            m_tot += m;
        }
        let v_cm = p / m_tot;
        for v in &mut self.velocities {
            *v -= v_cm;
        }
    }

    pub fn net_momentum(&self) -> Vec3 {
        self.velocities.iter().zip(&self.masses).fold(Vec3::ZERO, |acc, (v, &m)| acc + *v * m)
    }

    /// Degrees of freedom. NVE/Nosé–Hoover conserve total momentum (removed
    /// at init), so 3 are subtracted; Langevin keeps all 3N.
    pub fn dof(&self, ensemble: Ensemble) -> f64 {
        match ensemble {
            Ensemble::Langevin => 3.0 * self.natoms() as f64,
            _ => (3 * self.natoms()) as f64 - 3.0,
        }
    }

    /// Kinetic energy, eV.
    pub fn kinetic_energy(&self) -> f64 {
        0.5 / ACCEL
            * self
                .velocities
                .iter()
                .zip(&self.masses)
                .map(|(v, &m)| m * v.norm2())
                .sum::<f64>()
    }

    /// Instantaneous temperature, K.
    pub fn temperature(&self, ensemble: Ensemble) -> f64 {
        let g = self.dof(ensemble);
        if g <= 0.0 {
            return 0.0;
        }
        2.0 * self.kinetic_energy() / (g * KB)
    }

    /// The quantity the integrator conserves: E_pot + E_kin for NVE, the
    /// extended Nosé–Hoover energy for NVT-NH. None for Langevin (nothing is
    /// conserved there).
    pub fn conserved_quantity(&self, protocol: &MdProtocol) -> Option<f64> {
        match protocol.ensemble {
            Ensemble::Nve => Some(self.e_pot + self.kinetic_energy()),
            Ensemble::NoseHoover => {
                let g = self.dof(Ensemble::NoseHoover);
                let q = nh_mass(g, protocol);
                Some(
                    self.e_pot
                        + self.kinetic_energy()
                        + 0.5 * q * self.nh_xi * self.nh_xi
                        + g * KB * protocol.temperature * self.nh_eta,
                )
            }
            Ensemble::Langevin => None,
        }
    }

    fn as_configuration(&self) -> Configuration {
        Configuration {
            species: self.species.clone(),
            positions: self.positions.clone(),
            cell: self.cell,
            energy: None,
            forces: None,
        }
    }

    /// (Re)compute forces for the current positions.
    pub fn refresh_forces<P: Potential>(&mut self, potential: &mut P) -> Result<()> {
        let out = potential.compute(&self.as_configuration())?;
        if out.forces.len() != self.natoms() {
            return Err(Error::Invalid(format!(
                "potential returned {} forces for {} atoms",
                out.forces.len(),
                self.natoms()
            )));
        }
        self.forces = out.forces;
        self.e_pot = out.energy;
        self.e_sr = out.e_sr;
        self.e_lr = out.e_lr;
        Ok(())
    }

    fn check_stability(&self) -> Result<()> {
        for (i, v) in self.velocities.iter().enumerate() {
            if !v.is_finite() || v.norm() > MAX_SPEED {
                return Err(Error::Instability(format!(
                    "atom {i} reached speed {:.3} Å/fs at step {} (limit {MAX_SPEED})",
                    v.norm(),
                    self.step
                )));
            }
        }
        if !self.e_pot.is_finite() {
            return Err(Error::Instability(format!(
                "non-finite potential energy at step {}",
                self.step
            )));
        }
        Ok(())
    }
}

/// Thermostat mass Q = g·kB·T·τ².
fn nh_mass(g: f64, protocol: &MdProtocol) -> f64 {
    let tau = protocol.tau_fs();
    g * KB * protocol.temperature * tau * tau
}

/// Half-update of the Nosé–Hoover thermostat variables plus velocity
/// scaling, using the symmetric quarter-step scheme.
fn nh_half(state: &mut MdState, protocol: &MdProtocol, half_dt: f64) {
    let g = state.dof(Ensemble::NoseHoover);
    let q = nh_mass(g, protocol);
    let gkt = g * KB * protocol.temperature;
    let k = state.kinetic_energy();
    state.nh_xi += 0.5 * half_dt * (2.0 * k - gkt) / q;
    let scale = (-state.nh_xi * half_dt).exp();
    for v in &mut state.velocities {
        *v = *v * scale;
    }
    state.nh_eta += state.nh_xi * half_dt;
    let k_scaled = k * scale * scale;
    state.nh_xi += 0.5 * half_dt * (2.0 * k_scaled - gkt) / q;
}

/// Advance one timestep. `state.forces` must match the current positions
/// (call [`MdState::refresh_forces`] once before the first step).
pub fn md_step<P: Potential>(
    state: &mut MdState,
    potential: &mut P,
    protocol: &MdProtocol,
    rng: &mut ChaCha12Rng,
) -> Result<()> {
    let dt = protocol.dt;
    match protocol.ensemble {
        Ensemble::Nve => {
            kick(state, 0.5 * dt);
            drift(state, dt);
            state.refresh_forces(potential)?;
            kick(state, 0.5 * dt);
        }
        Ensemble::NoseHoover => {
            nh_half(state, protocol, 0.5 * dt);
            kick(state, 0.5 * dt);
            drift(state, dt);
            state.refresh_forces(potential)?;
            kick(state, 0.5 * dt);
            nh_half(state, protocol, 0.5 * dt);
        }
        Ensemble::Langevin => {
            // BAOAB splitting.
            kick(state, 0.5 * dt);
            drift(state, 0.5 * dt);
            let c1 = (-dt / protocol.tau_fs()).exp();
            let c2 = (1.0 - c1 * c1).sqrt();
            for (v, &m) in state.velocities.iter_mut().zip(&state.masses) {
                let sigma = (KB * protocol.temperature * ACCEL / m).sqrt();
                let noise = Vec3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                );
                *v = *v * c1 + noise * (c2 * sigma);
            }
            drift(state, 0.5 * dt);
            state.refresh_forces(potential)?;
            kick(state, 0.5 * dt);
        }
    }
    state.step += 1;
    state.time += dt;
    state.check_stability()
}

fn kick(state: &mut MdState, dt: f64) {
    for ((v, f), &m) in state.velocities.iter_mut().zip(&state.forces).zip(&state.masses) {
        *v += *f * (dt * ACCEL / m);
    }
}

fn drift(state: &mut MdState, dt: f64) {
    for (p, v) in state.positions.iter_mut().zip(&state.velocities) {
        *p += *v * dt;
    }
}

/// One recorded snapshot.
#[derive(Debug, Clone)]
pub struct Frame {
    pub step: usize,
    pub time: f64,
    pub species: Vec<String>,
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub cell: Cell,
    pub e_pot: f64,
    pub e_sr: f64,
    pub e_lr: f64,
    pub e_kin: f64,
    pub temperature: f64,
    pub conserved: Option<f64>,
}

impl Frame {
    fn capture(state: &MdState, protocol: &MdProtocol) -> Frame {
        Frame {
            step: state.step,
            time: state.time,
            species: state.species.clone(),
            positions: state.positions.clone(),
            velocities: state.velocities.clone(),
            cell: state.cell,
            e_pot: state.e_pot,
            e_sr: state.e_sr,
            e_lr: state.e_lr,
            e_kin: state.kinetic_energy(),
            temperature: state.temperature(protocol.ensemble),
            conserved: state.conserved_quantity(protocol),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub frames: Vec<Frame>,
}

impl Trajectory {
    /// Extended-XYZ dump with velocities and per-frame thermodynamic keys.
    pub fn to_extxyz(&self) -> String {
        let raw: Vec<RawFrame> = self
            .frames
            .iter()
            .map(|f| {
                let mut extra = vec![
                    ("step".to_string(), format!("{}", f.step)),
                    ("time".to_string(), crate::atoms::fmt_f64(f.time)),
                    ("temperature".to_string(), crate::atoms::fmt_f64(f.temperature)),
                    ("e_kin".to_string(), crate::atoms::fmt_f64(f.e_kin)),
                    ("e_sr".to_string(), crate::atoms::fmt_f64(f.e_sr)),
                    ("e_lr".to_string(), crate::atoms::fmt_f64(f.e_lr)),
                ];
                if let Some(c) = f.conserved {
                    extra.push(("conserved".to_string(), crate::atoms::fmt_f64(c)));
                }
                RawFrame {
                    species: f.species.clone(),
                    positions: f.positions.clone(),
                    cell: f.cell,
                    energy: Some(f.e_pot),
                    forces: None,
                    velocities: Some(f.velocities.clone()),
                    extra,
                }
            })
            .collect();
        crate::atoms::write_extxyz_frames(&raw)
    }
}

/// Run a full trajectory from a configuration. Returns the sampled frames
/// (step 0 plus every `stride`-th step) and the final state.
pub fn run_md<P: Potential>(
    config: &Configuration,
    potential: &mut P,
    protocol: &MdProtocol,
) -> Result<(Trajectory, MdState)> {
    let mut state = MdState::init(config, protocol)?;
    // Velocity seeds and Langevin noise must not share a stream, or a
    // different init would shift the noise sequence.
    let mut rng = ChaCha12Rng::seed_from_u64(protocol.seed.wrapping_add(0x9e3779b97f4a7c15));
    state.refresh_forces(potential)?;
    let mut traj = Trajectory::default();
    traj.frames.push(Frame::capture(&state, protocol));
    for _ in 0..protocol.n_steps {
        md_step(&mut state, potential, protocol, &mut rng)?;
        if state.step % protocol.stride == 0 {
            traj.frames.push(Frame::capture(&state, protocol));
        }
    }
    Ok((traj, state))
}
