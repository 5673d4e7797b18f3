//! Training on energies and forces.
//!
//! Per-configuration loss (N atoms):
//!
//! ```text
//! L = λ_E · (ΔE/N)²  +  λ_F/(3N) · Σ_m |F_m - F_m^ref|²,
//! ```
//!
//! and the batch loss is the *mean* of per-configuration losses. Because the
//! predicted forces are themselves derivatives of the energy, dL/dθ contains
//! mixed second derivatives ∂²E/∂θ∂r. These are evaluated analytically with
//! a forward-over-reverse scheme: write
//!
//! ```text
//! Φ = a·E + D_v E,     a = 2λ_E ΔE/N²,   v_m = -(2λ_F/3N)(F_m - F_m^ref),
//! ```
//!
//! where `D_v` is the directional derivative along the per-atom field v; then
//! dL/dθ = ∂Φ/∂θ with (a, v) held fixed. The forward pass carries tangents
//! (Ḃ through the descriptors, ẏ/q̇ through the heads, Ṡ through the
//! reciprocal sum), the reverse pass carries value- and tangent-adjoints
//! through the same graph. Finite differences confirm the result in the test
//! suite; training never differentiates numerically.

use crate::atoms::{Configuration, NeighborList};
use crate::descriptor::{evaluate_features, FeatureEvaluation};
use crate::error::{Error, Result};
use crate::ewald::{self, KSpace, Phases, SumMode};
use crate::model::{mlp::MlpGrads, Evaluator, LrSettings, ModelParams, Prediction};
use crate::vec3::Vec3;
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::descriptor::DescriptorConfig;

/// Architecture of a model to be trained (hyperparameters only; weights come
/// from the seed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub descriptor: DescriptorConfig,
    pub lr: LrSettings,
    /// Hidden widths of the short-range head.
    pub sr_hidden: Vec<usize>,
    /// Hidden widths of the charge head.
    pub lr_hidden: Vec<usize>,
}

/// Optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Energy loss weight λ_E.
    pub lambda_energy: f64,
    /// Force loss weight λ_F.
    pub lambda_force: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Configurations per optimizer step; 0 means full batch.
    pub batch_size: usize,
    /// Fraction of the dataset held out for validation (0 reuses the
    /// training set for validation).
    pub val_fraction: f64,
    /// Seed for the split, shuffling, and any stochastic choices of the
    /// optimizer. The model weights use their own seed.
    pub seed: u64,
    /// Epochs without validation improvement before the learning rate is
    /// multiplied by `lr_decay`.
    pub patience: usize,
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_energy: 1.0,
            lambda_force: 10.0,
            learning_rate: 1e-2,
            epochs: 500,
            batch_size: 0,
            val_fraction: 0.0,
            seed: 42,
            patience: 100,
            lr_decay: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_energy < 0.0 || self.lambda_force < 0.0 {
            return Err(Error::Invalid("loss weights must be non-negative".into()));
        }
        if self.lambda_energy == 0.0 && self.lambda_force == 0.0 {
            return Err(Error::Invalid("at least one loss weight must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Invalid("epochs must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Invalid(format!(
                "val_fraction must be in [0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.patience == 0 {
            return Err(Error::Invalid("patience must be ≥ 1".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Invalid(format!(
                "lr_decay must be in (0, 1], got {}",
                self.lr_decay
            )));
        }
        Ok(())
    }
}

/// Parameter-shaped gradients for the whole model.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub offsets: Vec<f64>,
    pub sr: MlpGrads,
    pub lr: MlpGrads,
}

impl ModelGrads {
    pub fn zeros(params: &ModelParams) -> ModelGrads {
        ModelGrads {
            offsets: vec![0.0; params.offsets.len()],
            sr: MlpGrads::zeros(&params.sr_head),
            lr: MlpGrads::zeros(&params.lr_head),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for x in &mut self.offsets {
            *x *= s;
        }
        self.sr.scale(s);
        self.lr.scale(s);
    }

    /// Flatten in the same order as [`ModelParams::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.offsets);
        for (w, b) in self.sr.weights.iter().zip(&self.sr.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        for (w, b) in self.lr.weights.iter().zip(&self.lr.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

/// Per-configuration loss from an existing prediction.
pub fn loss(
    pred: &Prediction,
    config: &Configuration,
    lambda_energy: f64,
    lambda_force: f64,
) -> Result<f64> {
    let n = config.natoms() as f64;
    let e_ref = config
        .energy
        .ok_or_else(|| Error::MissingLabels("configuration has no energy label".into()))?;
    let de = (pred.energy - e_ref) / n;
    let mut l = lambda_energy * de * de;
    if lambda_force > 0.0 {
        let f_ref = config.forces.as_ref().ok_or_else(|| {
            Error::MissingLabels("force loss requested but configuration has no forces".into())
        })?;
        let mut acc = 0.0;
        for (fp, fr) in pred.forces.iter().zip(f_ref) {
            acc += (*fp - *fr).norm2();
        }
        l += lambda_force / (3.0 * n) * acc;
    }
    Ok(l)
}

/// A configuration with every parameter-independent quantity precomputed:
/// neighbor list, features and their cached intermediates, reciprocal
/// lattice and per-atom phase tables. Reused across epochs.
struct Prepared {
    config: Configuration,
    feval: FeatureEvaluation,
    /// Index into the shared KSpace list (None when LR is disabled).
    ks: Option<usize>,
    phases: Option<Phases>,
    species_counts: Vec<f64>,
}

struct PreparedSet {
    items: Vec<Prepared>,
    kspaces: Vec<KSpace>,
}

fn prepare(
    dataset: &[Configuration],
    params: &ModelParams,
    need_forces: bool,
) -> Result<PreparedSet> {
    let mut items = Vec::with_capacity(dataset.len());
    let mut kspaces: Vec<KSpace> = Vec::new();
    for (ci, config) in dataset.iter().enumerate() {
        config.validate()?;
        if config.energy.is_none() {
            return Err(Error::MissingLabels(format!("configuration {ci} has no energy label")));
        }
        if need_forces && config.forces.is_none() {
            return Err(Error::MissingLabels(format!(
                "configuration {ci} has no force labels but the force loss weight is positive"
            )));
        }
        let nl = NeighborList::build(config, params.descriptor.r_cut)?;
        let feval = evaluate_features(config, &nl, &params.descriptor)?;
        let (ks, phases) = if params.lr.enabled {
            let idx = match kspaces
                .iter()
                .position(|k| k.cell.lengths == config.cell.lengths)
            {
                Some(i) => i,
                None => {
                    kspaces.push(KSpace::build(
                        config.cell,
                        params.lr.sigma,
                        params.lr.k_cut,
                        SumMode::Half,
                    )?);
                    kspaces.len() - 1
                }
            };
            let phases = Phases::build(&kspaces[idx], &config.wrapped_positions());
            (Some(idx), Some(phases))
        } else {
            (None, None)
        };
        let mut species_counts = vec![0.0; params.descriptor.species.len()];
        for &s in &feval.species_idx {
            species_counts[s] += 1.0;
        }
        items.push(Prepared { config: config.clone(), feval, ks, phases, species_counts });
    }
    Ok(PreparedSet { items, kspaces })
}

/// Loss of one prepared configuration; optionally accumulates dL/dθ.
fn config_pass(
    params: &ModelParams,
    prep: &Prepared,
    kspaces: &[KSpace],
    lambda_energy: f64,
    lambda_force: f64,
    mut grads: Option<&mut ModelGrads>,
) -> Result<f64> {
    let n = prep.config.natoms();
    let nf = n as f64;
    let feval = &prep.feval;

    // ---- value pass -------------------------------------------------------
    let mut sr_traces = Vec::with_capacity(n);
    let mut e = 0.0;
    for i in 0..n {
        let trace = params.sr_head.forward_trace(feval.b.row(i))?;
        e += trace.output()[0] + params.offsets[feval.species_idx[i]];
        sr_traces.push(trace);
    }
    let mut lr_traces = Vec::new();
    let mut q = Array2::zeros((0, 0));
    let mut lrg: Option<ewald::LrGradients> = None;
    if params.lr.enabled {
        q = Array2::zeros((n, params.lr.channels));
        lr_traces.reserve(n);
        for i in 0..n {
            let trace = params.lr_head.forward_trace(feval.b.row(i))?;
            q.row_mut(i).assign(trace.output());
            lr_traces.push(trace);
        }
        let ks = &kspaces[prep.ks.unwrap()];
        let g = ewald::lr_gradients_with(ks, prep.phases.as_ref().unwrap(), q.view());
        e += g.energy;
        lrg = Some(g);
    }

    let need_forces = lambda_force > 0.0;
    let mut forces: Vec<Vec3> = Vec::new();
    if need_forces {
        let mut adjoints = Array2::zeros((n, feval.dim()));
        let one = Array1::ones(1);
        for i in 0..n {
            let x_adj = params.sr_head.backprop(&sr_traces[i], one.view(), None);
            adjoints.row_mut(i).assign(&x_adj);
        }
        if let Some(g) = &lrg {
            for i in 0..n {
                let x_adj = params.lr_head.backprop(&lr_traces[i], g.dq.row(i), None);
                let mut row = adjoints.row_mut(i);
                row += &x_adj;
            }
        }
        let mut de_dr = feval.position_gradient(adjoints.view());
        if let Some(g) = &lrg {
            for (a, b) in de_dr.iter_mut().zip(&g.dr) {
                *a += *b;
            }
        }
        forces = de_dr.into_iter().map(|g| -g).collect();
    }

    // ---- loss -------------------------------------------------------------
    let e_ref = prep.config.energy.expect("checked at prepare time");
    let de = (e - e_ref) / nf;
    let mut l = lambda_energy * de * de;
    let mut v: Vec<Vec3> = Vec::new();
    if need_forces {
        let f_ref = prep.config.forces.as_ref().expect("checked at prepare time");
        let mut acc = 0.0;
        v.reserve(n);
        for (fp, fr) in forces.iter().zip(f_ref) {
            let d = *fp - *fr;
            acc += d.norm2();
            v.push(d * (-2.0 * lambda_force / (3.0 * nf)));
        }
        l += lambda_force / (3.0 * nf) * acc;
    }
    if !l.is_finite() {
        return Err(Error::Divergence(format!("non-finite loss ({l})")));
    }

    // ---- gradient pass ----------------------------------------------------
    if let Some(g) = grads.as_deref_mut() {
        let a = 2.0 * lambda_energy * de / nf;
        for (s, &count) in prep.species_counts.iter().enumerate() {
            g.offsets[s] += a * count;
        }
        if !need_forces {
            // Plain reverse mode: Φ = a·E.
            let a_arr = Array1::from_elem(1, a);
            for i in 0..n {
                params.sr_head.backprop(&sr_traces[i], a_arr.view(), Some(&mut g.sr));
            }
            if let Some(lg) = &lrg {
                for i in 0..n {
                    let seed = lg.dq.row(i).mapv(|x| a * x);
                    params.lr_head.backprop(&lr_traces[i], seed.view(), Some(&mut g.lr));
                }
            }
            return Ok(l);
        }

        // Forward tangents along v.
        let b_dot = feval.directional_derivative(&v);
        let a_val = Array1::from_elem(1, a);
        let one_tan = Array1::ones(1);
        let mut lr_tangents = Vec::with_capacity(n);
        if params.lr.enabled {
            let mut q_dot = Array2::zeros((n, params.lr.channels));
            for i in 0..n {
                let t = params.lr_head.forward_tangent(&lr_traces[i], b_dot.row(i));
                q_dot.row_mut(i).assign(t.output());
                lr_tangents.push(t);
            }
            let ks = &kspaces[prep.ks.unwrap()];
            let dual =
                ewald::lr_dual(ks, prep.phases.as_ref().unwrap(), q.view(), q_dot.view(), &v);
            // Seeds: ∂Φ/∂q = a·u + u̇, ∂Φ/∂q̇ = u.
            for i in 0..n {
                let u_row = dual.u.row(i);
                let seed_val: Array1<f64> = u_row
                    .iter()
                    .zip(dual.u_dot.row(i))
                    .map(|(&uv, &ud)| a * uv + ud)
                    .collect();
                params.lr_head.backprop_dual(
                    &lr_traces[i],
                    &lr_tangents[i],
                    seed_val.view(),
                    u_row,
                    &mut g.lr,
                );
            }
        }
        for i in 0..n {
            let t = params.sr_head.forward_tangent(&sr_traces[i], b_dot.row(i));
            params.sr_head.backprop_dual(
                &sr_traces[i],
                &t,
                a_val.view(),
                one_tan.view(),
                &mut g.sr,
            );
        }
    }
    Ok(l)
}

/// Mean loss over `configs` and its analytic parameter gradient.
pub fn loss_gradients(
    params: &ModelParams,
    configs: &[Configuration],
    lambda_energy: f64,
    lambda_force: f64,
) -> Result<(f64, ModelGrads)> {
    params.validate()?;
    if configs.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let set = prepare(configs, params, lambda_force > 0.0)?;
    let mut grads = ModelGrads::zeros(params);
    let mut total = 0.0;
    for prep in &set.items {
        total += config_pass(
            params,
            prep,
            &set.kspaces,
            lambda_energy,
            lambda_force,
            Some(&mut grads),
        )?;
    }
    let inv = 1.0 / configs.len() as f64;
    grads.scale(inv);
    Ok((total * inv, grads))
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(n: usize) -> Adam {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let b1c = 1.0 - self.beta1.powi(self.t as i32);
        let b2c = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mhat = self.m[i] / b1c;
            let vhat = self.v[i] / b2c;
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Dataset-level error metrics (energies in eV/atom, forces in eV/Å).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub n_configs: usize,
    pub energy_rmse_per_atom: f64,
    pub energy_mae_per_atom: f64,
    /// NaN-free only when force labels were present.
    pub force_rmse: Option<f64>,
    pub force_mae: Option<f64>,
}

impl EvalMetrics {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "configs            {:>14}", self.n_configs).unwrap();
        writeln!(
            s,
            "energy rmse        {:>14.6} meV/atom",
            self.energy_rmse_per_atom * 1e3
        )
        .unwrap();
        writeln!(
            s,
            "energy mae         {:>14.6} meV/atom",
            self.energy_mae_per_atom * 1e3
        )
        .unwrap();
        if let (Some(rmse), Some(mae)) = (self.force_rmse, self.force_mae) {
            writeln!(s, "force rmse         {:>14.6} meV/A", rmse * 1e3).unwrap();
            writeln!(s, "force mae          {:>14.6} meV/A", mae * 1e3).unwrap();
        }
        s
    }
}

/// Per-epoch progress row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Everything the training loop reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train: EvalMetrics,
    pub val: EvalMetrics,
}

impl Metrics {
    pub fn to_table(&self) -> String {
        let mut s = String::from("# epoch  learning_rate  train_loss      val_loss\n");
        for r in &self.epochs {
            writeln!(
                s,
                "{:>7}  {:>13.6e}  {:>14.8e}  {:>14.8e}",
                r.epoch, r.learning_rate, r.train_loss, r.val_loss
            )
            .unwrap();
        }
        writeln!(s, "# best epoch {} (val loss {:.8e})", self.best_epoch, self.best_val_loss)
            .unwrap();
        s
    }
}

/// Evaluate a trained model on a labeled dataset.
pub fn evaluate(params: &ModelParams, dataset: &[Configuration]) -> Result<EvalMetrics> {
    if dataset.is_empty() {
        return Err(Error::Invalid("empty dataset".into()));
    }
    let mut evaluator = Evaluator::new(params.clone())?;
    let mut se_e = 0.0;
    let mut ae_e = 0.0;
    let mut se_f = 0.0;
    let mut ae_f = 0.0;
    let mut n_f_comp = 0usize;
    let mut all_forces = true;
    for (ci, config) in dataset.iter().enumerate() {
        let e_ref = config.energy.ok_or_else(|| {
            Error::MissingLabels(format!("configuration {ci} has no energy label"))
        })?;
        let pred = evaluator.evaluate(config)?;
        let de = (pred.energy - e_ref) / config.natoms() as f64;
        se_e += de * de;
        ae_e += de.abs();
        match &config.forces {
            Some(f_ref) => {
                for (fp, fr) in pred.forces.iter().zip(f_ref) {
                    let d = *fp - *fr;
                    se_f += d.norm2();
                    ae_f += d.x.abs() + d.y.abs() + d.z.abs();
                    n_f_comp += 3;
                }
            }
            None => all_forces = false,
        }
    }
    let nc = dataset.len() as f64;
    Ok(EvalMetrics {
        n_configs: dataset.len(),
        energy_rmse_per_atom: (se_e / nc).sqrt(),
        energy_mae_per_atom: ae_e / nc,
        force_rmse: (all_forces && n_f_comp > 0).then(|| (se_f / n_f_comp as f64).sqrt()),
        force_mae: (all_forces && n_f_comp > 0).then(|| ae_f / n_f_comp as f64),
    })
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Least-squares fit of per-species constant offsets to the label energies.
/// Centers the energy scale before optimization starts.
fn fit_offsets(configs: &[&Prepared], n_species: usize) -> Vec<f64> {
    let mut ata = vec![0.0; n_species * n_species];
    let mut atb = vec![0.0; n_species];
    for prep in configs {
        let counts = &prep.species_counts;
        let e = prep.config.energy.expect("labels checked");
        for s in 0..n_species {
            atb[s] += counts[s] * e;
            for t in 0..n_species {
                ata[s * n_species + t] += counts[s] * counts[t];
            }
        }
    }
    // Tikhonov-regularized Gaussian elimination; the system is tiny.
    let reg = 1e-8 * (0..n_species).map(|s| ata[s * n_species + s]).sum::<f64>().max(1.0);
    for s in 0..n_species {
        ata[s * n_species + s] += reg;
    }
    let mut a = ata;
    let mut b = atb;
    for col in 0..n_species {
        let pivot = (col..n_species)
            .max_by(|&r1, &r2| {
                a[r1 * n_species + col].abs().total_cmp(&a[r2 * n_species + col].abs())
            })
            .unwrap();
        if a[pivot * n_species + col].abs() < 1e-300 {
            continue;
        }
        if pivot != col {
            for k in 0..n_species {
                a.swap(col * n_species + k, pivot * n_species + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n_species + col];
        for row in 0..n_species {
            if row == col {
                continue;
            }
            let factor = a[row * n_species + col] / diag;
            for k in 0..n_species {
                a[row * n_species + k] -= factor * a[col * n_species + k];
            }
            b[row] -= factor * b[col];
        }
    }
    (0..n_species)
        .map(|s| {
            let d = a[s * n_species + s];
            if d.abs() < 1e-300 {
                0.0
            } else {
                b[s] / d
            }
        })
        .collect()
}

/// Train a fresh model on a labeled dataset.
///
/// Deterministic: the same dataset, spec, seeds and config produce a
/// bitwise-identical model. Returns the parameters with the best validation
/// loss together with the full metrics history.
pub fn train(
    dataset: &[Configuration],
    spec: &ModelSpec,
    model_seed: u64,
    tcfg: &TrainConfig,
) -> Result<(ModelParams, Metrics)> {
    tcfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Invalid("empty training dataset".into()));
    }
    let mut params =
        ModelParams::init(spec.descriptor.clone(), spec.lr.clone(), &spec.sr_hidden, &spec.lr_hidden, model_seed)?;

    let mut rng = ChaCha12Rng::seed_from_u64(tcfg.seed);
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    indices.shuffle(&mut rng);
    let n_val = ((dataset.len() as f64) * tcfg.val_fraction).round() as usize;
    let (train_idx, val_idx): (Vec<usize>, Vec<usize>) = if n_val == 0 {
        (indices.clone(), indices.clone())
    } else {
        let split = dataset.len() - n_val.min(dataset.len() - 1);
        (indices[..split].to_vec(), indices[split..].to_vec())
    };

    let set = prepare(dataset, &params, tcfg.lambda_force > 0.0)?;
    let train_items: Vec<&Prepared> = train_idx.iter().map(|&i| &set.items[i]).collect();
    let val_items: Vec<&Prepared> = val_idx.iter().map(|&i| &set.items[i]).collect();

    params.offsets = fit_offsets(&train_items, spec.descriptor.species.len());

    let mut flat = params.flatten();
    let mut adam = Adam::new(flat.len());
    let mut lr = tcfg.learning_rate;
    let mut best_val = f64::INFINITY;
    let mut best_flat = flat.clone();
    let mut best_epoch = 0usize;
    let mut stall = 0usize;
    let mut history = Vec::with_capacity(tcfg.epochs);
    let mut order: Vec<usize> = (0..train_items.len()).collect();

    for epoch in 1..=tcfg.epochs {
        order.shuffle(&mut rng);
        let batch_size = if tcfg.batch_size == 0 { order.len() } else { tcfg.batch_size };
        for chunk in order.chunks(batch_size) {
            let mut grads = ModelGrads::zeros(&params);
            for &oi in chunk {
                config_pass(
                    &params,
                    train_items[oi],
                    &set.kspaces,
                    tcfg.lambda_energy,
                    tcfg.lambda_force,
                    Some(&mut grads),
                )?;
            }
            grads.scale(1.0 / chunk.len() as f64);
            let gflat = grads.flatten();
            if gflat.iter().any(|x| !x.is_finite()) {
                return Err(Error::Divergence(format!("non-finite gradient at epoch {epoch}")));
            }
            adam.step(&mut flat, &gflat, lr);
            params.unflatten(&flat)?;
        }

        let mean_loss = |items: &[&Prepared]| -> Result<f64> {
            let mut total = 0.0;
            for prep in items {
                total += config_pass(
                    &params,
                    prep,
                    &set.kspaces,
                    tcfg.lambda_energy,
                    tcfg.lambda_force,
                    None,
                )?;
            }
            Ok(total / items.len() as f64)
        };
        let train_loss = mean_loss(&train_items)?;
        let val_loss = mean_loss(&val_items)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Divergence(format!("non-finite loss at epoch {epoch}")));
        }
        history.push(EpochRecord { epoch, learning_rate: lr, train_loss, val_loss });

        if val_loss < best_val * (1.0 - 1e-12) {
            best_val = val_loss;
            best_flat = flat.clone();
            best_epoch = epoch;
            stall = 0;
        } else {
            stall += 1;
            if stall >= tcfg.patience {
                lr *= tcfg.lr_decay;
                stall = 0;
            }
        }
    }

    params.unflatten(&best_flat)?;
    let train_set: Vec<Configuration> = train_idx.iter().map(|&i| dataset[i].clone()).collect();
    let val_set: Vec<Configuration> = val_idx.iter().map(|&i| dataset[i].clone()).collect();
    let metrics = Metrics {
        epochs: history,
        best_epoch,
        best_val_loss: best_val,
        train: evaluate(&params, &train_set)?,
        val: evaluate(&params, &val_set)?,
    };
    Ok((params, metrics))
}
