//! Acceptance gate: one test per shipped guarantee of the toolkit.
//!
//! Each test prints exactly one `acceptance N (<name>): PASS|FAIL` line
//! (visible with `cargo test --test acceptance -- --nocapture`) and fails the
//! build on FAIL. The tolerances are pinned as constants below; they were set
//! before the implementation and are not to be loosened to make a run green.

use les_core::analysis::{
    compute_rdf, dipole_k_correlation, identify_molecules, Axis, WaterCharges,
};
use les_core::atoms::{Cell, Configuration, NeighborList};
use les_core::descriptor::{compute_feature_gradients, compute_features, DescriptorConfig};
use les_core::ewald::{lr_energy, lr_gradients, KSpace, SumMode};
use les_core::md::{run_md, Ensemble, MdProtocol};
use les_core::model::{predict, Evaluator, LrSettings, ModelParams};
use les_core::synth::{perturbed_lattice, random_gas, water_box};
use les_core::train::{loss_gradients, train, ModelSpec, TrainConfig};
use les_core::Vec3;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Mutex;

// Pinned tolerances.
const EWALD_ORACLE_REL: f64 = 1e-12;
const GRAD_FD_REL: f64 = 1e-6;
const PARAM_FD_REL: f64 = 1e-4;
const TRANS_REL: f64 = 1e-10;
const PERM_REL: f64 = 1e-12;
const SCALE_REL: f64 = 1e-12;
const CHANNEL_REL: f64 = 1e-12;
const NVE_DRIFT_EV_PER_ATOM_PS: f64 = 1e-4;
const NH_TEMP_REL: f64 = 0.03;
const LR_COST_FACTOR: f64 = 3.0;
const RDF_FLAT_REL: f64 = 0.05;
const DIPOLE_NAIVE_REL: f64 = 1e-12;
const DIMER_FORCE_RMSE_FACTOR: f64 = 0.5;
const DIMER_BINDING_RATIO_MAX: f64 = 0.5;

/// Serializes the runtime-sensitive tests (training, MD, timing) so wall-clock
/// measurements and long runs do not contend with each other.
static HEAVY: Mutex<()> = Mutex::new(());

fn heavy_guard() -> std::sync::MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn report(number: u32, name: &str, outcome: Result<(), String>) {
    match &outcome {
        Ok(()) => println!("acceptance {number} ({name}): PASS"),
        Err(why) => println!("acceptance {number} ({name}): FAIL — {why}"),
    }
    if let Err(why) = outcome {
        panic!("acceptance {number} ({name}): {why}");
    }
}

fn comp(v: Vec3, axis: usize) -> f64 {
    match axis {
        0 => v.x,
        1 => v.y,
        _ => v.z,
    }
}

fn shift(v: &mut Vec3, axis: usize, h: f64) {
    match axis {
        0 => v.x += h,
        1 => v.y += h,
        _ => v.z += h,
    }
}

fn unit_vector(rng: &mut ChaCha12Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n2 = v.norm2();
        if n2 > 1e-2 && n2 <= 1.0 {
            return v.map(|x| x / n2.sqrt());
        }
    }
}

/// Random single-species system with random latent charges, for the
/// reciprocal-space checks.
struct RandomSystem {
    config: Configuration,
    q: Array2<f64>,
    sigma: f64,
    k_cut: f64,
}

fn random_system(rng: &mut ChaCha12Rng, max_atoms: usize, max_channels: usize) -> RandomSystem {
    let n = rng.gen_range(1..=max_atoms);
    let cell = Cell::new(
        rng.gen_range(6.0..12.0),
        rng.gen_range(6.0..12.0),
        rng.gen_range(6.0..12.0),
    )
    .unwrap();
    let positions: Vec<Vec3> = (0..n)
        .map(|_| {
            Vec3::new(
                rng.gen_range(0.0..cell.lengths.x),
                rng.gen_range(0.0..cell.lengths.y),
                rng.gen_range(0.0..cell.lengths.z),
            )
        })
        .collect();
    let config = Configuration::new(vec!["Ar".to_string(); n], positions, cell).unwrap();
    let channels = rng.gen_range(1..=max_channels);
    let q = Array2::from_shape_fn((n, channels), |_| rng.gen_range(-1.0..1.0));
    RandomSystem { config, q, sigma: rng.gen_range(0.6..1.4), k_cut: rng.gen_range(1.2..2.0) }
}

/// Direct full-space evaluation of the screened reciprocal-space quadratic
/// form, written independently of the production code path.
fn naive_lr_energy(cell: Cell, positions: &[Vec3], q: &Array2<f64>, sigma: f64, k_cut: f64) -> f64 {
    let l = cell.lengths;
    let unit = Vec3::new(2.0 * PI / l.x, 2.0 * PI / l.y, 2.0 * PI / l.z);
    let m = [
        (k_cut / unit.x).floor() as i64,
        (k_cut / unit.y).floor() as i64,
        (k_cut / unit.z).floor() as i64,
    ];
    let kc2 = k_cut * k_cut;
    let mut total = 0.0;
    for nx in -m[0]..=m[0] {
        for ny in -m[1]..=m[1] {
            for nz in -m[2]..=m[2] {
                if nx == 0 && ny == 0 && nz == 0 {
                    continue;
                }
                let k = Vec3::new(nx as f64 * unit.x, ny as f64 * unit.y, nz as f64 * unit.z);
                let k2 = k.norm2();
                if k2 >= kc2 {
                    continue;
                }
                let w = (-0.5 * sigma * sigma * k2).exp() / k2;
                for c in 0..q.ncols() {
                    let mut re = 0.0;
                    let mut im = 0.0;
                    for (i, r) in positions.iter().enumerate() {
                        let phase = k.dot(*r);
                        re += q[[i, c]] * phase.cos();
                        im += q[[i, c]] * phase.sin();
                    }
                    total += w * (re * re + im * im);
                }
            }
        }
    }
    total / cell.volume()
}

// ---------------------------------------------------------------------------
// 1. Reciprocal-space oracle equivalence

#[test]
fn criterion_1_ewald_oracle_equivalence() {
    report(1, "ewald oracle equivalence", (|| {
        let mut rng = ChaCha12Rng::seed_from_u64(101);
        for case in 0..50 {
            let s = random_system(&mut rng, 16, 3);
            let ks = KSpace::build(s.config.cell, s.sigma, s.k_cut, SumMode::Half)
                .map_err(|e| e.to_string())?;
            let fast = lr_energy(&ks, &s.config.positions, s.q.view());
            let naive =
                naive_lr_energy(s.config.cell, &s.config.positions, &s.q, s.sigma, s.k_cut);
            let err = (fast - naive).abs();
            if err > EWALD_ORACLE_REL * naive.abs().max(1e-12) {
                return Err(format!(
                    "case {case}: optimized {fast:.17e} vs direct sum {naive:.17e} (abs err {err:.3e})"
                ));
            }
        }
        Ok(())
    })());
}

// ---------------------------------------------------------------------------
// 2. Finite-difference gradient suite

fn ewald_gradients_match_fd() -> Result<(), String> {
    let mut rng = ChaCha12Rng::seed_from_u64(202);
    for case in 0..20 {
        let s = random_system(&mut rng, 8, 2);
        let ks = KSpace::build(s.config.cell, s.sigma, s.k_cut, SumMode::Half)
            .map_err(|e| e.to_string())?;
        let g = lr_gradients(&ks, &s.config.positions, s.q.view());

        let h = 1e-6;
        for i in 0..s.q.nrows() {
            for c in 0..s.q.ncols() {
                let mut qp = s.q.clone();
                let mut qm = s.q.clone();
                qp[[i, c]] += h;
                qm[[i, c]] -= h;
                let fd = (lr_energy(&ks, &s.config.positions, qp.view())
                    - lr_energy(&ks, &s.config.positions, qm.view()))
                    / (2.0 * h);
                let an = g.dq[[i, c]];
                if (an - fd).abs() > GRAD_FD_REL * an.abs().max(1.0) {
                    return Err(format!("case {case}: dE/dq[{i},{c}] = {an} vs FD {fd}"));
                }
            }
        }
        let h = 1e-5;
        for i in 0..s.config.positions.len() {
            for axis in 0..3 {
                let mut rp = s.config.positions.clone();
                let mut rm = s.config.positions.clone();
                shift(&mut rp[i], axis, h);
                shift(&mut rm[i], axis, -h);
                let fd = (lr_energy(&ks, &rp, s.q.view()) - lr_energy(&ks, &rm, s.q.view()))
                    / (2.0 * h);
                let an = comp(g.dr[i], axis);
                if (an - fd).abs() > GRAD_FD_REL * an.abs().max(1.0) {
                    return Err(format!("case {case}: dE/dr[{i}][{axis}] = {an} vs FD {fd}"));
                }
            }
        }
    }
    Ok(())
}

fn random_mixed_gas(rng: &mut ChaCha12Rng, seed: u64) -> Configuration {
    let cell = Cell::cubic(rng.gen_range(7.0..10.0)).unwrap();
    let n_h = rng.gen_range(1..=3);
    let n_o = rng.gen_range(1..=3);
    random_gas(&[("H", n_h), ("O", n_o)], cell, 1.0, seed).unwrap()
}

fn descriptor_gradients_match_fd() -> Result<(), String> {
    let mut rng = ChaCha12Rng::seed_from_u64(303);
    for case in 0..20u64 {
        let config = random_mixed_gas(&mut rng, 9000 + case);
        let dcfg = DescriptorConfig {
            species: vec!["H".to_string(), "O".to_string()],
            r_cut: rng.gen_range(2.5..3.2),
            n_radial: rng.gen_range(1..=3),
            l_max: rng.gen_range(0..=3),
        };
        let nl = NeighborList::build(&config, dcfg.r_cut).map_err(|e| e.to_string())?;
        let grads = compute_feature_gradients(&config, &nl, &dcfg).map_err(|e| e.to_string())?;

        let n = config.positions.len();
        let dim = dcfg.dim();
        // Dense Jacobian entries from the sparse blocks.
        let mut dense = vec![vec![[0.0f64; 3]; dim]; n * n];
        for block in &grads.blocks {
            for d in 0..dim {
                for axis in 0..3 {
                    dense[block.center * n + block.wrt][d][axis] = block.d[[d, axis]];
                }
            }
        }
        let h = 1e-5;
        for j in 0..n {
            for axis in 0..3 {
                let mut cp = config.clone();
                let mut cm = config.clone();
                shift(&mut cp.positions[j], axis, h);
                shift(&mut cm.positions[j], axis, -h);
                let nlp = NeighborList::build(&cp, dcfg.r_cut).map_err(|e| e.to_string())?;
                let nlm = NeighborList::build(&cm, dcfg.r_cut).map_err(|e| e.to_string())?;
                let bp = compute_features(&cp, &nlp, &dcfg).map_err(|e| e.to_string())?;
                let bm = compute_features(&cm, &nlm, &dcfg).map_err(|e| e.to_string())?;
                for i in 0..n {
                    for d in 0..dim {
                        let fd = (bp[[i, d]] - bm[[i, d]]) / (2.0 * h);
                        let an = dense[i * n + j][d][axis];
                        if (an - fd).abs() > GRAD_FD_REL * an.abs().max(1.0) {
                            return Err(format!(
                                "case {case}: dB[{i},{d}]/dr[{j}][{axis}] = {an} vs FD {fd}"
                            ));
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn small_descriptor() -> DescriptorConfig {
    DescriptorConfig {
        species: vec!["H".to_string(), "O".to_string()],
        r_cut: 3.0,
        n_radial: 2,
        l_max: 1,
    }
}

fn model_forces_match_fd() -> Result<(), String> {
    let mut rng = ChaCha12Rng::seed_from_u64(404);
    for case in 0..20u64 {
        let config = random_mixed_gas(&mut rng, 9500 + case);
        let lr = LrSettings {
            enabled: case % 2 == 0,
            sigma: 1.0,
            k_cut: 1.6,
            channels: 2,
        };
        let params = ModelParams::init(small_descriptor(), lr, &[5], &[4], 600 + case)
            .map_err(|e| e.to_string())?;
        let p = predict(&params, &config).map_err(|e| e.to_string())?;
        let h = 1e-5;
        for i in 0..config.positions.len() {
            for axis in 0..3 {
                let mut cp = config.clone();
                let mut cm = config.clone();
                shift(&mut cp.positions[i], axis, h);
                shift(&mut cm.positions[i], axis, -h);
                let ep = predict(&params, &cp).map_err(|e| e.to_string())?.energy;
                let em = predict(&params, &cm).map_err(|e| e.to_string())?.energy;
                let fd = -(ep - em) / (2.0 * h);
                let an = comp(p.forces[i], axis);
                if (an - fd).abs() > GRAD_FD_REL * an.abs().max(1.0) {
                    return Err(format!("case {case}: F[{i}][{axis}] = {an} vs FD {fd}"));
                }
            }
        }
    }
    Ok(())
}

fn parameter_gradients_match_fd() -> Result<(), String> {
    let mut rng = ChaCha12Rng::seed_from_u64(505);
    for case in 0..20u64 {
        let lr = LrSettings {
            enabled: true,
            sigma: 1.0,
            k_cut: 1.5,
            channels: 1,
        };
        let teacher = ModelParams::init(small_descriptor(), lr.clone(), &[3], &[2], 777 + case)
            .map_err(|e| e.to_string())?;
        let configs: Vec<Configuration> = (0..2)
            .map(|j| {
                let mut c = random_mixed_gas(&mut rng, 9800 + 10 * case + j);
                let p = predict(&teacher, &c).unwrap();
                c.energy = Some(p.energy);
                c.forces = Some(p.forces);
                c
            })
            .collect();

        let params = ModelParams::init(small_descriptor(), lr, &[3], &[2], 40 + case)
            .map_err(|e| e.to_string())?;
        let (_, grads) =
            loss_gradients(&params, &configs, 1.0, 5.0).map_err(|e| e.to_string())?;
        let flat_grads = grads.flatten();
        let theta = params.flatten();
        let n_params = theta.len();

        let h = 1e-5;
        for probe in 0..8 {
            let idx = probe * (n_params - 1) / 7;
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[idx] += h;
            tm[idx] -= h;
            let mut pp = params.clone();
            let mut pm = params.clone();
            pp.unflatten(&tp).map_err(|e| e.to_string())?;
            pm.unflatten(&tm).map_err(|e| e.to_string())?;
            let lp = loss_gradients(&pp, &configs, 1.0, 5.0).map_err(|e| e.to_string())?.0;
            let lm = loss_gradients(&pm, &configs, 1.0, 5.0).map_err(|e| e.to_string())?.0;
            let fd = (lp - lm) / (2.0 * h);
            let an = flat_grads[idx];
            if (an - fd).abs() > PARAM_FD_REL * an.abs().max(1e-2) {
                return Err(format!("case {case}: dL/dtheta[{idx}] = {an} vs FD {fd}"));
            }
        }
    }
    Ok(())
}

#[test]
fn criterion_2_gradient_suite() {
    report(2, "finite-difference gradients", (|| {
        ewald_gradients_match_fd()?;
        descriptor_gradients_match_fd()?;
        model_forces_match_fd()?;
        parameter_gradients_match_fd()?;
        Ok(())
    })());
}

// ---------------------------------------------------------------------------
// 3. Symmetry suite

#[test]
fn criterion_3_symmetry_suite() {
    report(3, "symmetry suite", (|| {
        let mut rng = ChaCha12Rng::seed_from_u64(606);

        // Translation invariance of the full model.
        for case in 0..10u64 {
            let config = random_mixed_gas(&mut rng, 8800 + case);
            let lr = LrSettings { enabled: true, sigma: 1.0, k_cut: 1.6, channels: 2 };
            let params = ModelParams::init(small_descriptor(), lr, &[5], &[4], 70 + case)
                .map_err(|e| e.to_string())?;
            let base = predict(&params, &config).map_err(|e| e.to_string())?;
            let t = Vec3::new(
                rng.gen_range(-8.0..8.0),
                rng.gen_range(-8.0..8.0),
                rng.gen_range(-8.0..8.0),
            );
            let mut shifted = config.clone();
            for r in &mut shifted.positions {
                *r = Vec3::new(r.x + t.x, r.y + t.y, r.z + t.z);
            }
            let moved = predict(&params, &shifted).map_err(|e| e.to_string())?;
            if (base.energy - moved.energy).abs() > TRANS_REL * base.energy.abs().max(1.0) {
                return Err(format!(
                    "case {case}: translated energy {} vs {}",
                    moved.energy, base.energy
                ));
            }
            for i in 0..config.positions.len() {
                for axis in 0..3 {
                    let a = comp(base.forces[i], axis);
                    let b = comp(moved.forces[i], axis);
                    if (a - b).abs() > TRANS_REL * a.abs().max(1.0) {
                        return Err(format!("case {case}: translated force [{i}][{axis}]"));
                    }
                }
            }
        }

        // Permutation covariance: same energy, permuted force rows.
        for case in 0..10u64 {
            let config = random_mixed_gas(&mut rng, 8900 + case);
            let lr = LrSettings { enabled: true, sigma: 1.0, k_cut: 1.6, channels: 2 };
            let params = ModelParams::init(small_descriptor(), lr, &[5], &[4], 80 + case)
                .map_err(|e| e.to_string())?;
            let base = predict(&params, &config).map_err(|e| e.to_string())?;

            let n = config.positions.len();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let permuted = Configuration::new(
                perm.iter().map(|&i| config.species[i].clone()).collect(),
                perm.iter().map(|&i| config.positions[i]).collect(),
                config.cell,
            )
            .map_err(|e| e.to_string())?;
            let shuffled = predict(&params, &permuted).map_err(|e| e.to_string())?;
            if (base.energy - shuffled.energy).abs() > PERM_REL * base.energy.abs().max(1.0) {
                return Err(format!("case {case}: permuted energy changed"));
            }
            for (new_row, &old_row) in perm.iter().enumerate() {
                for axis in 0..3 {
                    let a = comp(base.forces[old_row], axis);
                    let b = comp(shuffled.forces[new_row], axis);
                    if (a - b).abs() > PERM_REL * a.abs().max(1.0) {
                        return Err(format!(
                            "case {case}: force row {old_row} not mapped to {new_row}"
                        ));
                    }
                }
            }
        }

        // Quadratic charge scaling and channel additivity.
        for case in 0..20 {
            let s = random_system(&mut rng, 10, 3);
            let ks = KSpace::build(s.config.cell, s.sigma, s.k_cut, SumMode::Half)
                .map_err(|e| e.to_string())?;
            let base = lr_energy(&ks, &s.config.positions, s.q.view());
            for alpha in [0.5, 2.0, -3.0] {
                let scaled = lr_energy(&ks, &s.config.positions, (&s.q * alpha).view());
                if (scaled - alpha * alpha * base).abs() > SCALE_REL * base.abs().max(1e-12) {
                    return Err(format!("case {case}: scaling by {alpha} not quadratic"));
                }
            }
            let mut per_channel = 0.0;
            for c in 0..s.q.ncols() {
                let col = s.q.column(c).insert_axis(ndarray::Axis(1)).to_owned();
                per_channel += lr_energy(&ks, &s.config.positions, col.view());
            }
            if (per_channel - base).abs() > CHANNEL_REL * base.abs().max(1e-12) {
                return Err(format!("case {case}: channels do not sum ({per_channel} vs {base})"));
            }
        }

        // Non-negativity of the quadratic form.
        for _ in 0..1000 {
            let s = random_system(&mut rng, 5, 2);
            let ks = KSpace::build(s.config.cell, s.sigma, s.k_cut, SumMode::Half)
                .map_err(|e| e.to_string())?;
            let e = lr_energy(&ks, &s.config.positions, s.q.view());
            if e < 0.0 {
                return Err(format!("negative long-range energy {e}"));
            }
        }
        Ok(())
    })());
}

// ---------------------------------------------------------------------------
// 4. Dimer extrapolation analog

const DIMER_L: f64 = 30.0;
const DIMER_BOND: f64 = 1.0;

fn dimer_k_cut() -> f64 {
    2.0 * PI / 3.0
}

/// Two rigid diatomics (Na–H and Cl–H) separated by `sep` along z, with the
/// hydrogens carrying fixed charges of opposite sign. The charge sits on the
/// hydrogens because they are the atoms the charge head can tell apart: each
/// H sees a different heavy neighbor (Na vs Cl), while Na and Cl themselves
/// see identical single-H environments and a shared head would be forced to
/// assign them equal charges.
fn dimer_config(sep: f64, u_a: Vec3, u_b: Vec3) -> Configuration {
    let cell = Cell::cubic(DIMER_L).unwrap();
    let mid = DIMER_L / 2.0;
    let na = Vec3::new(mid, mid, mid - sep / 2.0);
    let cl = Vec3::new(mid, mid, mid + sep / 2.0);
    let h_a = Vec3::new(na.x + DIMER_BOND * u_a.x, na.y + DIMER_BOND * u_a.y, na.z + DIMER_BOND * u_a.z);
    let h_b = Vec3::new(cl.x + DIMER_BOND * u_b.x, cl.y + DIMER_BOND * u_b.y, cl.z + DIMER_BOND * u_b.z);
    Configuration::new(
        vec!["Na".into(), "H".into(), "Cl".into(), "H".into()],
        vec![na, h_a, cl, h_b],
        cell,
    )
    .unwrap()
}

fn dimer_true_charges() -> Array2<f64> {
    Array2::from_shape_vec((4, 1), vec![0.0, 4.0, 0.0, -4.0]).unwrap()
}

/// Ground-truth labels: reciprocal-space energy and forces of the fixed
/// charges.
fn label_dimer(ks: &KSpace, config: &mut Configuration, q: &Array2<f64>) {
    let g = lr_gradients(ks, &config.positions, q.view());
    config.energy = Some(g.energy);
    config.forces = Some(g.dr.iter().map(|d| d.map(|x| -x)).collect());
}

fn dimer_force_rmse(params: &ModelParams, test: &[Configuration]) -> Result<f64, String> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for config in test {
        let p = predict(params, config).map_err(|e| e.to_string())?;
        let labels = config.forces.as_ref().unwrap();
        for (a, b) in p.forces.iter().zip(labels) {
            let d = Vec3::new(a.x - b.x, a.y - b.y, a.z - b.z);
            sum += d.norm2();
            count += 3;
        }
    }
    Ok((sum / count as f64).sqrt())
}

#[test]
fn criterion_4_dimer_extrapolation() {
    let _guard = heavy_guard();
    report(4, "dimer extrapolation analog", (|| {
        let cell = Cell::cubic(DIMER_L).unwrap();
        let ks = KSpace::build(cell, 1.0, dimer_k_cut(), SumMode::Half)
            .map_err(|e| e.to_string())?;
        let q = dimer_true_charges();
        let mut rng = ChaCha12Rng::seed_from_u64(707);

        // Train: 10 separations in [5, 12] Å, random monomer orientations.
        let train_set: Vec<Configuration> = (0..10)
            .map(|i| {
                let sep = 5.0 + 7.0 * i as f64 / 9.0;
                let mut c = dimer_config(sep, unit_vector(&mut rng), unit_vector(&mut rng));
                label_dimer(&ks, &mut c, &q);
                c
            })
            .collect();
        // Held-out separations beyond the training range.
        let test_set: Vec<Configuration> = [13.0, 14.0, 15.0]
            .iter()
            .map(|&sep| {
                let mut c = dimer_config(sep, unit_vector(&mut rng), unit_vector(&mut rng));
                label_dimer(&ks, &mut c, &q);
                c
            })
            .collect();

        let descriptor = DescriptorConfig {
            species: vec!["Cl".to_string(), "H".to_string(), "Na".to_string()],
            r_cut: 2.0,
            n_radial: 2,
            l_max: 0,
        };
        let lr_on = LrSettings { enabled: true, sigma: 1.0, k_cut: dimer_k_cut(), channels: 1 };
        let lr_off = LrSettings { enabled: false, ..lr_on.clone() };
        // Mini-batches matter here: the loss gradient with respect to the
        // charge head vanishes at zero latent charge (the reciprocal-space
        // energy is quadratic in the charges), and batch noise is what kicks
        // the optimizer off that saddle.
        let tcfg = TrainConfig {
            lambda_energy: 1.0,
            lambda_force: 10.0,
            learning_rate: 0.02,
            epochs: 1200,
            batch_size: 2,
            val_fraction: 0.0,
            patience: 300,
            lr_decay: 0.5,
            ..Default::default()
        };
        let spec_lr = ModelSpec {
            descriptor: descriptor.clone(),
            lr: lr_on,
            sr_hidden: vec![4],
            lr_hidden: vec![4],
        };
        let spec_sr =
            ModelSpec { descriptor, lr: lr_off, sr_hidden: vec![4], lr_hidden: vec![4] };
        let (model_lr, _) = train(&train_set, &spec_lr, 11, &tcfg).map_err(|e| e.to_string())?;
        let (model_sr, _) = train(&train_set, &spec_sr, 11, &tcfg).map_err(|e| e.to_string())?;

        // Force accuracy on the held-out separations.
        let rmse_lr = dimer_force_rmse(&model_lr, &test_set)?;
        let rmse_sr = dimer_force_rmse(&model_sr, &test_set)?;
        println!(
            "  extrapolated force RMSE: latent-charge {rmse_lr:.2e}, short-range {rmse_sr:.2e} (ratio {:.3})",
            rmse_lr / rmse_sr
        );
        if rmse_lr >= DIMER_FORCE_RMSE_FACTOR * rmse_sr {
            return Err(format!(
                "latent-charge test force RMSE {rmse_lr:.3e} not < {DIMER_FORCE_RMSE_FACTOR} × short-range {rmse_sr:.3e}"
            ));
        }

        // Binding curve (energy relative to the 12 Å point, fixed
        // orientations): at every held-out separation the latent-charge
        // model must beat the short-range model by a wide margin, and the
        // short-range model's absolute disadvantage must keep widening —
        // beyond its cutoff it predicts a flat curve, while the true
        // interaction keeps changing.
        let u = Vec3::new(1.0, 0.0, 0.0);
        let seps = [12.0, 13.0, 14.0, 15.0];
        let mut label_e = Vec::new();
        let mut lr_e = Vec::new();
        let mut sr_e = Vec::new();
        for &sep in &seps {
            let mut c = dimer_config(sep, u, u);
            label_dimer(&ks, &mut c, &q);
            label_e.push(c.energy.unwrap());
            lr_e.push(predict(&model_lr, &c).map_err(|e| e.to_string())?.energy);
            sr_e.push(predict(&model_sr, &c).map_err(|e| e.to_string())?.energy);
        }
        let mut ratios = Vec::new();
        let mut gaps = Vec::new();
        for i in 1..seps.len() {
            let b_label = label_e[i] - label_e[0];
            let b_lr = lr_e[i] - lr_e[0];
            let b_sr = sr_e[i] - sr_e[0];
            let err_lr = (b_lr - b_label).abs();
            let err_sr = (b_sr - b_label).abs();
            if err_sr <= 0.0 {
                return Err(format!("degenerate binding reference at {} Å", seps[i]));
            }
            ratios.push(err_lr / err_sr);
            gaps.push(err_sr - err_lr);
        }
        let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.4}")).collect();
        println!("  binding error ratios at 13/14/15 Å: {}", shown.join(", "));
        for (i, &r) in ratios.iter().enumerate() {
            if r >= DIMER_BINDING_RATIO_MAX {
                return Err(format!(
                    "binding error ratio {:.3} at {} Å not below {DIMER_BINDING_RATIO_MAX}",
                    r,
                    seps[i + 1]
                ));
            }
        }
        for w in gaps.windows(2) {
            if w[1] <= w[0] {
                return Err(format!(
                    "short-range disadvantage fails to widen with separation: {gaps:?}"
                ));
            }
        }
        Ok(())
    })());
}

// ---------------------------------------------------------------------------
// 5. MD consistency: NVE conservation and thermostat accuracy

/// A small trained model on perturbed Ar lattices plus a starting
/// configuration, shared by the MD checks.
fn trained_lattice_model() -> (ModelParams, Configuration) {
    let descriptor = DescriptorConfig {
        species: vec!["Ar".to_string()],
        r_cut: 2.5,
        n_radial: 2,
        l_max: 1,
    };
    let lr = LrSettings { enabled: true, sigma: 1.0, k_cut: 1.5, channels: 1 };
    let teacher =
        ModelParams::init(descriptor.clone(), lr.clone(), &[4], &[3], 77).unwrap();
    let data: Vec<Configuration> = (0..5)
        .map(|seed| {
            let mut c = perturbed_lattice("Ar", 4, 1.9, 0.12, seed).unwrap();
            let p = predict(&teacher, &c).unwrap();
            c.energy = Some(p.energy);
            c.forces = Some(p.forces);
            c
        })
        .collect();
    let spec = ModelSpec { descriptor, lr, sr_hidden: vec![4], lr_hidden: vec![3] };
    let tcfg = TrainConfig {
        lambda_force: 10.0,
        learning_rate: 0.01,
        epochs: 30,
        val_fraction: 0.0,
        ..Default::default()
    };
    let (params, _) = train(&data, &spec, 9, &tcfg).unwrap();
    (params, perturbed_lattice("Ar", 4, 1.9, 0.05, 99).unwrap())
}

#[test]
fn criterion_5_md_consistency() {
    let _guard = heavy_guard();
    report(5, "MD conservation and thermostat", (|| {
        let (params, init) = trained_lattice_model();
        let natoms = init.positions.len() as f64;

        // NVE: the conserved quantity must not drift over 2 ps at dt = 0.5 fs.
        let nve = MdProtocol {
            ensemble: Ensemble::Nve,
            temperature: 40.0,
            dt: 0.5,
            n_steps: 4000,
            stride: 20,
            seed: 3,
            tau: None,
        };
        let mut potential = Evaluator::new(params.clone()).map_err(|e| e.to_string())?;
        let (traj, _) = run_md(&init, &mut potential, &nve).map_err(|e| e.to_string())?;
        let conserved: Vec<f64> =
            traj.frames.iter().map(|f| f.conserved.unwrap()).collect();
        let times: Vec<f64> = traj.frames.iter().map(|f| f.time).collect();
        let window = conserved.len() / 10;
        let head: f64 = conserved[..window].iter().sum::<f64>() / window as f64;
        let tail: f64 =
            conserved[conserved.len() - window..].iter().sum::<f64>() / window as f64;
        let t_head: f64 = times[..window].iter().sum::<f64>() / window as f64;
        let t_tail: f64 =
            times[times.len() - window..].iter().sum::<f64>() / window as f64;
        let elapsed_ps = (t_tail - t_head) / 1000.0;
        let drift = (tail - head).abs() / (natoms * elapsed_ps);
        if drift > NVE_DRIFT_EV_PER_ATOM_PS {
            return Err(format!(
                "NVE drift {drift:.3e} eV/atom/ps exceeds {NVE_DRIFT_EV_PER_ATOM_PS:.1e}"
            ));
        }

        // Nosé–Hoover: the mean temperature over the second half of a 10 ps
        // run must sit within 3% of the 300 K target.
        let nvt = MdProtocol {
            ensemble: Ensemble::NoseHoover,
            temperature: 300.0,
            dt: 0.5,
            n_steps: 20_000,
            stride: 10,
            seed: 4,
            tau: None,
        };
        let mut potential = Evaluator::new(params).map_err(|e| e.to_string())?;
        let (traj, _) = run_md(&init, &mut potential, &nvt).map_err(|e| e.to_string())?;
        let second_half: Vec<f64> = traj
            .frames
            .iter()
            .filter(|f| f.step >= 10_000)
            .map(|f| f.temperature)
            .collect();
        let mean_t: f64 = second_half.iter().sum::<f64>() / second_half.len() as f64;
        if (mean_t - 300.0).abs() > NH_TEMP_REL * 300.0 {
            return Err(format!(
                "mean thermostat temperature {mean_t:.1} K outside 300 K ± {:.0}%",
                NH_TEMP_REL * 100.0
            ));
        }
        Ok(())
    })());
}

// ---------------------------------------------------------------------------
// 6. Long-range cost ratio

#[test]
fn criterion_6_cost_ratio() {
    let _guard = heavy_guard();
    report(6, "long-range cost ratio", (|| {
        let config = water_box(128, 1.0, 5).map_err(|e| e.to_string())?;
        assert_eq!(config.positions.len(), 384);
        let descriptor = DescriptorConfig {
            species: vec!["H".to_string(), "O".to_string()],
            r_cut: 3.0,
            n_radial: 3,
            l_max: 2,
        };
        let lr_on = LrSettings { enabled: true, sigma: 1.0, k_cut: PI, channels: 4 };
        let lr_off = LrSettings { enabled: false, ..lr_on.clone() };
        let params_lr = ModelParams::init(descriptor.clone(), lr_on, &[8], &[8], 31)
            .map_err(|e| e.to_string())?;
        let params_sr =
            ModelParams::init(descriptor, lr_off, &[8], &[8], 31).map_err(|e| e.to_string())?;
        let mut eval_lr = Evaluator::new(params_lr).map_err(|e| e.to_string())?;
        let mut eval_sr = Evaluator::new(params_sr).map_err(|e| e.to_string())?;

        // Warm both paths (allocations, cached summation grid).
        eval_sr.evaluate(&config).map_err(|e| e.to_string())?;
        eval_lr.evaluate(&config).map_err(|e| e.to_string())?;

        let mut best_sr = f64::INFINITY;
        let mut best_lr = f64::INFINITY;
        for _ in 0..3 {
            let t = std::time::Instant::now();
            eval_sr.evaluate(&config).map_err(|e| e.to_string())?;
            best_sr = best_sr.min(t.elapsed().as_secs_f64());
            let t = std::time::Instant::now();
            eval_lr.evaluate(&config).map_err(|e| e.to_string())?;
            best_lr = best_lr.min(t.elapsed().as_secs_f64());
        }
        let ratio = best_lr / best_sr;
        println!(
            "  force evaluation at 384 atoms: short-range {:.1} ms, latent-charge {:.1} ms (ratio {ratio:.2})",
            best_sr * 1e3,
            best_lr * 1e3
        );
        if ratio > LR_COST_FACTOR {
            return Err(format!(
                "latent-charge evaluation {ratio:.2}× short-range exceeds {LR_COST_FACTOR}×"
            ));
        }
        Ok(())
    })());
}

// ---------------------------------------------------------------------------
// 7. Analysis oracles

fn rdf_is_flat_for_ideal_gas() -> Result<(), String> {
    let cell = Cell::cubic(12.0).unwrap();
    let frames: Vec<Configuration> = (0..24)
        .map(|seed| random_gas(&[("Ar", 220)], cell, 0.0, 7000 + seed).unwrap())
        .collect();
    let rdf = compute_rdf(&frames, "Ar", "Ar", 5.5, 5).map_err(|e| e.to_string())?;
    for (r, g) in rdf.r.iter().zip(&rdf.g) {
        if (g - 1.0).abs() > RDF_FLAT_REL {
            return Err(format!("ideal-gas g({r:.2}) = {g:.4} deviates from 1"));
        }
    }
    Ok(())
}

fn dipole_correlation_matches_naive() -> Result<(), String> {
    let frames: Vec<Configuration> =
        (0..3).map(|seed| water_box(27, 1.0, 40 + seed).unwrap()).collect();
    let charges = WaterCharges::default();
    let n_kmax = 6;
    let out = dipole_k_correlation(&frames, Axis::Z, n_kmax, charges)
        .map_err(|e| e.to_string())?;

    // Direct re-evaluation: per-molecule point-charge dipoles and a plain
    // cos/sin Fourier sum.
    let lz = frames[0].cell.lengths.z;
    let mut naive = vec![0.0f64; n_kmax];
    for frame in &frames {
        let molecules = identify_molecules(frame).map_err(|e| e.to_string())?;
        let mut mu_z = Vec::new();
        let mut z_c = Vec::new();
        for m in &molecules {
            let o = frame.positions[m.oxygen];
            let mut mu = 0.0;
            for &h in &m.hydrogens {
                let d = frame.cell.minimum_image(Vec3::new(
                    frame.positions[h].x - o.x,
                    frame.positions[h].y - o.y,
                    frame.positions[h].z - o.z,
                ));
                mu += charges.q_h * d.z;
            }
            mu_z.push(mu);
            z_c.push(o.z);
        }
        for n in 1..=n_kmax {
            let k = 2.0 * PI * n as f64 / lz;
            let mut re = 0.0;
            let mut im = 0.0;
            for (mu, z) in mu_z.iter().zip(&z_c) {
                re += mu * (k * z).cos();
                im += mu * (k * z).sin();
            }
            naive[n - 1] += (re * re + im * im) / molecules.len() as f64;
        }
    }
    for v in &mut naive {
        *v /= frames.len() as f64;
    }
    for (i, (a, b)) in out.value.iter().zip(&naive).enumerate() {
        if (a - b).abs() > DIPOLE_NAIVE_REL * b.abs().max(1e-12) {
            return Err(format!("k index {i}: library {a:.17e} vs direct {b:.17e}"));
        }
    }
    Ok(())
}

fn molecules_match_brute_force() -> Result<(), String> {
    for i in 0..100u64 {
        let density = 0.9 + 0.2 * (i as f64 / 99.0);
        let frame = water_box(8, density, 300 + i).map_err(|e| e.to_string())?;
        let molecules = identify_molecules(&frame).map_err(|e| e.to_string())?;

        let oxygens: Vec<usize> = (0..frame.species.len())
            .filter(|&j| frame.species[j] == "O")
            .collect();
        let mut assigned: std::collections::BTreeMap<usize, Vec<usize>> =
            oxygens.iter().map(|&o| (o, Vec::new())).collect();
        for j in 0..frame.species.len() {
            if frame.species[j] != "H" {
                continue;
            }
            let nearest = *oxygens
                .iter()
                .min_by(|&&a, &&b| {
                    let da = frame
                        .cell
                        .minimum_image(Vec3::new(
                            frame.positions[j].x - frame.positions[a].x,
                            frame.positions[j].y - frame.positions[a].y,
                            frame.positions[j].z - frame.positions[a].z,
                        ))
                        .norm2();
                    let db = frame
                        .cell
                        .minimum_image(Vec3::new(
                            frame.positions[j].x - frame.positions[b].x,
                            frame.positions[j].y - frame.positions[b].y,
                            frame.positions[j].z - frame.positions[b].z,
                        ))
                        .norm2();
                    da.total_cmp(&db)
                })
                .unwrap();
            assigned.get_mut(&nearest).unwrap().push(j);
        }
        for m in &molecules {
            let mut hs = m.hydrogens.to_vec();
            hs.sort_unstable();
            if assigned.get(&m.oxygen) != Some(&hs) {
                return Err(format!("frame {i}: oxygen {} grouped differently", m.oxygen));
            }
        }
    }
    Ok(())
}

#[test]
fn criterion_7_analysis_oracles() {
    report(7, "analysis oracles", (|| {
        rdf_is_flat_for_ideal_gas()?;
        dipole_correlation_matches_naive()?;
        molecules_match_brute_force()?;
        Ok(())
    })());
}

// ---------------------------------------------------------------------------
// 8. Byte-identical reruns of the full pipeline

const PIPELINE_TOML: &str = r#"
seed = 5

[data]
train = "water_train.extxyz"
test = "water_train.extxyz"
init = "water_init.extxyz"

[descriptor]
species = ["H", "O"]
r_cut = 2.8
n_radial = 2
l_max = 1

[lr]
enabled = true
sigma = 1.0
k_cut = 3.141592653589793
channels = 2

[heads]
sr_hidden = [6]
lr_hidden = [4]

[train]
epochs = 15
learning_rate = 0.01
val_fraction = 0.25
seed = 2

[md]
ensemble = "langevin"
temperature = 80.0
dt = 0.25
n_steps = 40
stride = 10
seed = 8

[analysis]
pair = ["O", "O"]
r_max = 3.0
n_bins = 20
axis = "z"
n_kmax = 4
"#;

fn water_pipeline_data() -> (String, String) {
    let descriptor = DescriptorConfig {
        species: vec!["H".to_string(), "O".to_string()],
        r_cut: 2.8,
        n_radial: 2,
        l_max: 1,
    };
    let lr = LrSettings { enabled: true, sigma: 1.0, k_cut: PI, channels: 2 };
    let teacher = ModelParams::init(descriptor, lr, &[6], &[4], 21).unwrap();
    let frames: Vec<Configuration> = (1..=4)
        .map(|seed| {
            let mut c = water_box(8, 1.0, seed).unwrap();
            let p = predict(&teacher, &c).unwrap();
            c.energy = Some(p.energy);
            c.forces = Some(p.forces);
            c
        })
        .collect();
    let init = water_box(8, 1.0, 9).unwrap();
    (
        les_core::atoms::write_extxyz(&frames),
        les_core::atoms::write_extxyz(&[init]),
    )
}

fn run_pipeline(dir: &Path) -> Result<(), String> {
    let commands: [&[&str]; 7] = [
        &["train", "-c", "config.toml"],
        &["eval", "-c", "config.toml"],
        &["md", "-c", "config.toml"],
        &["analyze", "rdf", "-c", "config.toml"],
        &["analyze", "density", "-c", "config.toml"],
        &["analyze", "orientation", "-c", "config.toml"],
        &["analyze", "dipolecorr", "-c", "config.toml"],
    ];
    for args in commands {
        let out = std::process::Command::new(env!("CARGO_BIN_EXE_les"))
            .args(args)
            .current_dir(dir)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!(
                "`les {}` failed: {}",
                args.join(" "),
                String::from_utf8_lossy(&out.stderr)
            ));
        }
    }
    Ok(())
}

fn collect_outputs(dir: &Path) -> Result<std::collections::BTreeMap<String, Vec<u8>>, String> {
    let mut files = std::collections::BTreeMap::new();
    for entry in std::fs::read_dir(dir.join("out")).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let bytes = std::fs::read(entry.path()).map_err(|e| e.to_string())?;
        files.insert(name, bytes);
    }
    Ok(files)
}

#[test]
fn criterion_8_byte_identical_reruns() {
    let _guard = heavy_guard();
    report(8, "byte-identical reruns", (|| {
        let (train_data, init_data) = water_pipeline_data();
        let dirs = [
            tempfile::TempDir::new().map_err(|e| e.to_string())?,
            tempfile::TempDir::new().map_err(|e| e.to_string())?,
        ];
        for d in &dirs {
            std::fs::write(d.path().join("config.toml"), PIPELINE_TOML)
                .map_err(|e| e.to_string())?;
            std::fs::write(d.path().join("water_train.extxyz"), &train_data)
                .map_err(|e| e.to_string())?;
            std::fs::write(d.path().join("water_init.extxyz"), &init_data)
                .map_err(|e| e.to_string())?;
            run_pipeline(d.path())?;
        }
        let a = collect_outputs(dirs[0].path())?;
        let b = collect_outputs(dirs[1].path())?;
        let names: Vec<&String> = a.keys().collect();
        if a.keys().ne(b.keys()) {
            return Err(format!(
                "output file sets differ: {:?} vs {:?}",
                names,
                b.keys().collect::<Vec<_>>()
            ));
        }
        // The full pipeline must produce at least these canonical artifacts.
        for required in [
            "checkpoint.json",
            "metrics.json",
            "metrics.txt",
            "eval.json",
            "eval.txt",
            "trajectory.extxyz",
            "rdf.txt",
            "density.txt",
            "orientation.txt",
            "dipolecorr.txt",
        ] {
            if !a.contains_key(required) {
                return Err(format!("missing pipeline output {required}"));
            }
        }
        for (name, bytes) in &a {
            if b[name] != *bytes {
                return Err(format!("{name} differs between identical reruns"));
            }
        }
        Ok(())
    })());
}
