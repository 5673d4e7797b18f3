//! Machine-learning interatomic potential with latent long-range
//! electrostatics.
//!
//! The potential energy of a configuration is split into a short-range part
//! and a long-range part,
//!
//! ```text
//! E = E_sr + E_lr,
//! ```
//!
//! where `E_sr` is a sum of per-atom neural-network energies evaluated on
//! local invariant descriptors, and `E_lr` is a reciprocal-space (Ewald-style)
//! energy evaluated on *latent charges* that a second neural-network head
//! predicts from the same descriptors. Both parts are smooth functions of the
//! atomic positions with analytic gradients, so forces are exact derivatives
//! and the model can be trained on energies *and* forces.
//!
//! Crate layout:
//!
//! - [`atoms`]: configurations, orthorhombic cells, minimum image, neighbor
//!   lists, extended-XYZ IO.
//! - [`descriptor`]: invariant two-/three-body descriptors and their analytic
//!   position gradients.
//! - [`ewald`]: reciprocal-space lattice enumeration, structure factors, the
//!   latent-charge long-range energy and its gradients.
//! - [`model`]: multilayer perceptron heads, full-model prediction (energy,
//!   forces, latent charges), JSON checkpoints.
//! - [`train`]: energy+force loss, analytic parameter gradients, Adam
//!   training loop, evaluation metrics.
//! - [`md`]: velocity-Verlet molecular dynamics with NVE, Nosé–Hoover NVT and
//!   Langevin NVT ensembles.
//! - [`analysis`]: water-trajectory analysis (molecules and dipoles, RDF,
//!   density/orientation profiles, dipole k-space correlations).
//! - [`synth`]: deterministic synthetic-system generators used by tests,
//!   benchmarks and the examples.
//!
//! Everything is deterministic: all randomness flows from explicit `u64`
//! seeds through counter-based RNGs, and all accumulations run in fixed
//! order, so identical inputs produce bitwise-identical outputs.

pub mod analysis;
pub mod atoms;
pub mod descriptor;
pub mod error;
pub mod ewald;
pub mod md;
pub mod model;
pub mod synth;
pub mod train;
pub mod units;
pub mod vec3;

pub use error::{Error, Result};
pub use vec3::Vec3;
