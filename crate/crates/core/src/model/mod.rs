//! The full potential: per-atom short-range energies plus latent-charge
//! long-range electrostatics, with analytic forces.
//!
//! ```text
//! E(R) = Σ_i [ offset(s_i) + E_θ(B_i) ]  +  E_lr( Q_φ(B_1..B_N), R )
//! ```
//!
//! where B_i are the invariant descriptors, E_θ is the scalar short-range
//! head, Q_φ predicts per-atom latent charge vectors (one value per channel),
//! and E_lr is the reciprocal-space energy of [`crate::ewald`]. Forces are
//! exact analytic derivatives obtained by reverse accumulation:
//!
//! ```text
//! -F_m = Σ_i (∂E_θ/∂B_i + u_i·∂Q_φ/∂B_i) · ∂B_i/∂r_m + ∂E_lr/∂r_m,
//! u_i = ∂E_lr/∂q_i.
//! ```

mod checkpoint;
pub mod mlp;

pub use checkpoint::{load_checkpoint, parse_checkpoint, render_checkpoint, save_checkpoint, FORMAT_VERSION};
pub use mlp::{Mlp, MlpGrads};

use crate::atoms::{Configuration, NeighborList};
use crate::descriptor::{evaluate_features, DescriptorConfig, FeatureEvaluation};
use crate::error::{Error, Result};
use crate::ewald::{self, KSpace, Phases, SumMode};
use crate::vec3::Vec3;
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Long-range (latent charge) settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSettings {
    /// Master switch; disabled means a purely short-range model.
    pub enabled: bool,
    /// Gaussian screening width σ (Å).
    pub sigma: f64,
    /// Reciprocal-space cutoff (1/Å).
    pub k_cut: f64,
    /// Number of latent charge channels.
    pub channels: usize,
}

impl Default for LrSettings {
    fn default() -> Self {
        LrSettings { enabled: true, sigma: 1.0, k_cut: std::f64::consts::PI, channels: 4 }
    }
}

impl LrSettings {
    pub fn validate(&self) -> Result<()> {
        if !self.enabled {
            return Ok(());
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Invalid(format!("lr sigma must be positive, got {}", self.sigma)));
        }
        if !(self.k_cut > 0.0 && self.k_cut.is_finite()) {
            return Err(Error::Invalid(format!("lr k_cut must be positive, got {}", self.k_cut)));
        }
        if self.channels == 0 {
            return Err(Error::Invalid("lr channels must be ≥ 1 when enabled".into()));
        }
        Ok(())
    }
}

/// All trainable state plus the hyperparameters needed to evaluate it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub descriptor: DescriptorConfig,
    pub lr: LrSettings,
    /// Per-species constant energy offsets (order matches descriptor.species).
    pub offsets: Vec<f64>,
    /// Scalar energy head, input width = descriptor dim, output width 1.
    pub sr_head: Mlp,
    /// Latent charge head, output width = lr.channels.
    pub lr_head: Mlp,
}

impl ModelParams {
    /// Fresh model with seeded random head weights and zero offsets.
    ///
    /// `sr_hidden`/`lr_hidden` are the hidden layer widths (may be empty for
    /// a linear head).
    pub fn init(
        descriptor: DescriptorConfig,
        lr: LrSettings,
        sr_hidden: &[usize],
        lr_hidden: &[usize],
        seed: u64,
    ) -> Result<ModelParams> {
        descriptor.validate()?;
        lr.validate()?;
        let d = descriptor.dim();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut sr_widths = vec![d];
        sr_widths.extend_from_slice(sr_hidden);
        sr_widths.push(1);
        let mut lr_widths = vec![d];
        lr_widths.extend_from_slice(lr_hidden);
        lr_widths.push(lr.channels.max(1));
        let sr_head = Mlp::new(&sr_widths, &mut rng)?;
        let lr_head = Mlp::new(&lr_widths, &mut rng)?;
        let offsets = vec![0.0; descriptor.species.len()];
        let params = ModelParams { descriptor, lr, offsets, sr_head, lr_head };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        self.descriptor.validate()?;
        self.lr.validate()?;
        self.sr_head.validate()?;
        self.lr_head.validate()?;
        let d = self.descriptor.dim();
        if self.sr_head.input_dim() != d {
            return Err(Error::Invalid(format!(
                "short-range head expects inputs of width {}, descriptor produces {d}",
                self.sr_head.input_dim()
            )));
        }
        if self.sr_head.output_dim() != 1 {
            return Err(Error::Invalid("short-range head must have one output".into()));
        }
        if self.lr_head.input_dim() != d {
            return Err(Error::Invalid(format!(
                "charge head expects inputs of width {}, descriptor produces {d}",
                self.lr_head.input_dim()
            )));
        }
        if self.lr.enabled && self.lr_head.output_dim() != self.lr.channels {
            return Err(Error::Invalid(format!(
                "charge head has {} outputs, settings declare {} channels",
                self.lr_head.output_dim(),
                self.lr.channels
            )));
        }
        if self.offsets.len() != self.descriptor.species.len() {
            return Err(Error::Invalid(format!(
                "{} offsets for {} species",
                self.offsets.len(),
                self.descriptor.species.len()
            )));
        }
        if self.offsets.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid("non-finite species offset".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.offsets.len() + self.sr_head.param_count() + self.lr_head.param_count()
    }

    /// Flatten all trainable parameters: offsets, then short-range head, then
    /// charge head (each head per layer: weights row-major, bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(&self.offsets);
        self.sr_head.flatten_into(&mut out);
        self.lr_head.flatten_into(&mut out);
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Invalid(format!(
                "parameter vector has {} entries, model has {}",
                flat.len(),
                self.param_count()
            )));
        }
        let n_off = self.offsets.len();
        self.offsets.copy_from_slice(&flat[..n_off]);
        let mut cursor = n_off;
        self.sr_head.unflatten_from(flat, &mut cursor)?;
        self.lr_head.unflatten_from(flat, &mut cursor)?;
        Ok(())
    }
}

/// Model output for one configuration.
#[derive(Debug, Clone)]
pub struct Prediction {
    /// Total energy (eV); always e_sr + e_lr.
    pub energy: f64,
    /// Short-range part including species offsets.
    pub e_sr: f64,
    /// Reciprocal-space latent-charge part (0 when disabled).
    pub e_lr: f64,
    /// Analytic forces, eV/Å.
    pub forces: Vec<Vec3>,
    /// Latent charges (N × channels) when the long-range part is enabled.
    pub latent_q: Option<Array2<f64>>,
}

/// Reusable evaluation context. Caches the reciprocal lattice per cell so
/// MD in a fixed box enumerates k vectors once.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub params: ModelParams,
    kcache: Option<KSpace>,
}

impl Evaluator {
    pub fn new(params: ModelParams) -> Result<Evaluator> {
        params.validate()?;
        Ok(Evaluator { params, kcache: None })
    }

    fn kspace_for(&mut self, config: &Configuration) -> Result<&KSpace> {
        let lengths = config.cell.lengths;
        let stale = match &self.kcache {
            Some(ks) => ks.cell.lengths != lengths,
            None => true,
        };
        if stale {
            self.kcache = Some(KSpace::build(
                config.cell,
                self.params.lr.sigma,
                self.params.lr.k_cut,
                SumMode::Half,
            )?);
        }
        Ok(self.kcache.as_ref().unwrap())
    }

    /// Energy, forces and latent charges for one configuration.
    pub fn evaluate(&mut self, config: &Configuration) -> Result<Prediction> {
        let nl = NeighborList::build(config, self.params.descriptor.r_cut)?;
        let feval = evaluate_features(config, &nl, &self.params.descriptor)?;
        self.evaluate_prepared(config, &feval)
    }

    /// Same as [`Evaluator::evaluate`] with externally cached features.
    pub fn evaluate_prepared(
        &mut self,
        config: &Configuration,
        feval: &FeatureEvaluation,
    ) -> Result<Prediction> {
        let params = &self.params;
        let n = config.natoms();
        let d = feval.dim();
        let mut e_sr = 0.0;
        let mut adjoints = Array2::zeros((n, d));
        for i in 0..n {
            let trace = params.sr_head.forward_trace(feval.b.row(i))?;
            e_sr += trace.output()[0] + params.offsets[feval.species_idx[i]];
            let x_adj = params.sr_head.backprop(&trace, ones1().view(), None);
            adjoints.row_mut(i).assign(&x_adj);
        }

        let mut e_lr = 0.0;
        let mut latent_q = None;
        let mut dr_lr: Option<Vec<Vec3>> = None;
        if params.lr.enabled {
            let mut q = Array2::zeros((n, params.lr.channels));
            let mut traces = Vec::with_capacity(n);
            for i in 0..n {
                let trace = params.lr_head.forward_trace(feval.b.row(i))?;
                q.row_mut(i).assign(trace.output());
                traces.push(trace);
            }
            let ks = self.kspace_for(config)?;
            let wrapped = config.wrapped_positions();
            let phases = Phases::build(ks, &wrapped);
            let lg = ewald::lr_gradients_with(ks, &phases, q.view());
            e_lr = lg.energy;
            let params = &self.params;
            for i in 0..n {
                let x_adj = params.lr_head.backprop(&traces[i], lg.dq.row(i), None);
                let mut row = adjoints.row_mut(i);
                row += &x_adj;
            }
            dr_lr = Some(lg.dr);
            latent_q = Some(q);
        }

        let mut de_dr = feval.position_gradient(adjoints.view());
        if let Some(dr) = dr_lr {
            for (a, b) in de_dr.iter_mut().zip(dr) {
                *a += b;
            }
        }
        let forces: Vec<Vec3> = de_dr.into_iter().map(|g| -g).collect();
        if !forces.iter().all(|f| f.is_finite()) || !(e_sr + e_lr).is_finite() {
            return Err(Error::Invalid("model produced non-finite energy or forces".into()));
        }
        Ok(Prediction { energy: e_sr + e_lr, e_sr, e_lr, forces, latent_q })
    }
}

fn ones1() -> Array1<f64> {
    Array1::ones(1)
}

/// One-shot prediction without keeping an evaluator around.
pub fn predict(params: &ModelParams, config: &Configuration) -> Result<Prediction> {
    Evaluator::new(params.clone())?.evaluate(config)
}
