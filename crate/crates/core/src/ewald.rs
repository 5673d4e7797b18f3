//! Reciprocal-space electrostatics on latent charges.
//!
//! Given per-atom charge vectors q_i ∈ R^d (d independent channels), the
//! long-range energy in an orthorhombic cell of volume V is
//!
//! ```text
//! E_lr = (1/V) Σ_{0 < |k| < k_cut} exp(-σ²k²/2)/k² · Σ_c |S_c(k)|²,
//! S_c(k) = Σ_i q_ic · exp(i k·r_i),
//! k = 2π (n_x/L_x, n_y/L_y, n_z/L_z),  n ∈ Z³.
//! ```
//!
//! There is no self-interaction correction and no real-space tail: the
//! Gaussian screen σ acts as a smooth reciprocal-space cutoff and the
//! short-range model absorbs everything local. Channels are independent and
//! purely additive.
//!
//! Because the charges are real, S_c(-k) = conj(S_c(k)) and |S|² is shared
//! between ±k. The production path therefore enumerates a lexicographic
//! half-space (n > 0 in the first nonzero component) and doubles each term;
//! [`SumMode::Full`] keeps the whole sphere as a slower internal
//! cross-check.

use crate::atoms::Cell;
use crate::error::{Error, Result};
use crate::vec3::Vec3;
use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Which part of the reciprocal lattice to enumerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SumMode {
    /// Lexicographic half-space, each shell counted with multiplicity 2.
    Half,
    /// Every nonzero vector inside the cutoff once. Reference/debug mode.
    Full,
}

/// Precomputed reciprocal-lattice data for one cell and cutoff.
#[derive(Debug, Clone)]
pub struct KSpace {
    pub cell: Cell,
    pub sigma: f64,
    pub k_cut: f64,
    pub mode: SumMode,
    /// 2 for half-space mode, 1 for full.
    pub multiplier: f64,
    /// Integer lattice coordinates n of each vector.
    pub n_index: Vec<[i32; 3]>,
    /// Cartesian k vectors (1/Å).
    pub kvecs: Vec<Vec3>,
    pub ksq: Vec<f64>,
    /// exp(-σ²k²/2)/k² per vector.
    pub weights: Vec<f64>,
    /// Largest |n| per axis that can appear under the cutoff.
    pub n_max: [i32; 3],
}

impl KSpace {
    /// Enumerate all reciprocal vectors with 0 < |k| < k_cut.
    pub fn build(cell: Cell, sigma: f64, k_cut: f64, mode: SumMode) -> Result<KSpace> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Invalid(format!("sigma must be positive, got {sigma}")));
        }
        if !(k_cut > 0.0 && k_cut.is_finite()) {
            return Err(Error::Invalid(format!("k_cut must be positive, got {k_cut}")));
        }
        let l = cell.lengths;
        let unit = Vec3::new(2.0 * PI / l.x, 2.0 * PI / l.y, 2.0 * PI / l.z);
        let n_max = [
            (k_cut / unit.x).floor() as i32,
            (k_cut / unit.y).floor() as i32,
            (k_cut / unit.z).floor() as i32,
        ];
        let kc2 = k_cut * k_cut;
        let mut n_index = Vec::new();
        let mut kvecs = Vec::new();
        let mut ksq = Vec::new();
        let mut weights = Vec::new();
        for nx in -n_max[0]..=n_max[0] {
            for ny in -n_max[1]..=n_max[1] {
                for nz in -n_max[2]..=n_max[2] {
                    if nx == 0 && ny == 0 && nz == 0 {
                        continue;
                    }
                    if mode == SumMode::Half {
                        let positive =
                            nx > 0 || (nx == 0 && (ny > 0 || (ny == 0 && nz > 0)));
                        if !positive {
                            continue;
                        }
                    }
                    let k = Vec3::new(nx as f64 * unit.x, ny as f64 * unit.y, nz as f64 * unit.z);
                    let k2 = k.norm2();
                    if k2 >= kc2 {
                        continue;
                    }
                    n_index.push([nx, ny, nz]);
                    kvecs.push(k);
                    ksq.push(k2);
                    weights.push((-0.5 * sigma * sigma * k2).exp() / k2);
                }
            }
        }
        if kvecs.is_empty() {
            log::warn!(
                "no reciprocal vectors below k_cut = {k_cut}; first shell starts at {:.6} — \
                 long-range energy will be identically zero",
                unit.x.min(unit.y).min(unit.z)
            );
        }
        let multiplier = match mode {
            SumMode::Half => 2.0,
            SumMode::Full => 1.0,
        };
        Ok(KSpace { cell, sigma, k_cut, mode, multiplier, n_index, kvecs, ksq, weights, n_max })
    }

    pub fn len(&self) -> usize {
        self.kvecs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kvecs.is_empty()
    }
}

/// Per-atom, per-axis tables of exp(i·2π·n·x/L) for n = 0..=n_max, from which
/// the phase of any enumerated k vector is two complex multiplies.
#[derive(Debug, Clone)]
pub struct Phases {
    n_max: [i32; 3],
    natoms: usize,
    tables: [Vec<Complex64>; 3],
}

impl Phases {
    pub fn build(ks: &KSpace, positions: &[Vec3]) -> Phases {
        let natoms = positions.len();
        let mut tables: [Vec<Complex64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for axis in 0..3 {
            let stride = ks.n_max[axis] as usize + 1;
            let unit = 2.0 * PI / ks.cell.lengths[axis];
            let mut t = vec![Complex64::new(1.0, 0.0); natoms * stride];
            for (i, p) in positions.iter().enumerate() {
                let base = Complex64::from_polar(1.0, unit * p[axis]);
                let mut cur = Complex64::new(1.0, 0.0);
                for n in 1..stride {
                    cur *= base;
                    t[i * stride + n] = cur;
                }
            }
            tables[axis] = t;
        }
        Phases { n_max: ks.n_max, natoms, tables }
    }

    /// exp(i k·r_i) for the lattice vector with integer coordinates n.
    #[inline]
    pub fn phase(&self, i: usize, n: [i32; 3]) -> Complex64 {
        let mut out = Complex64::new(1.0, 0.0);
        for axis in 0..3 {
            let stride = self.n_max[axis] as usize + 1;
            let v = self.tables[axis][i * stride + n[axis].unsigned_abs() as usize];
            out *= if n[axis] < 0 { v.conj() } else { v };
        }
        out
    }

    pub fn natoms(&self) -> usize {
        self.natoms
    }
}

/// exp(i k·r_i) for every enumerated k (k-major) as parallel re/im arrays.
///
/// The inner loops below run over hundreds of thousands of (k, atom) pairs,
/// so they work on flat slices with explicit real/imaginary arithmetic; this
/// reproduces [`Phases::phase`] bit for bit while staying fast even in
/// unoptimized builds.
fn phase_matrix(ks: &KSpace, phases: &Phases) -> (Vec<f64>, Vec<f64>) {
    let n = phases.natoms;
    let m = ks.len();
    let sx = phases.n_max[0] as usize + 1;
    let sy = phases.n_max[1] as usize + 1;
    let sz = phases.n_max[2] as usize + 1;
    let tx = &phases.tables[0];
    let ty = &phases.tables[1];
    let tz = &phases.tables[2];
    let mut re = vec![0.0; m * n];
    let mut im = vec![0.0; m * n];
    for (kk, nidx) in ks.n_index.iter().enumerate() {
        let ax = nidx[0].unsigned_abs() as usize;
        let ay = nidx[1].unsigned_abs() as usize;
        let az = nidx[2].unsigned_abs() as usize;
        let fx = if nidx[0] < 0 { -1.0 } else { 1.0 };
        let fy = if nidx[1] < 0 { -1.0 } else { 1.0 };
        let fz = if nidx[2] < 0 { -1.0 } else { 1.0 };
        let row_re = &mut re[kk * n..(kk + 1) * n];
        let row_im = &mut im[kk * n..(kk + 1) * n];
        for i in 0..n {
            let px = tx[i * sx + ax];
            let py = ty[i * sy + ay];
            let pz = tz[i * sz + az];
            let (pxr, pxi) = (px.re, fx * px.im);
            let (pyr, pyi) = (py.re, fy * py.im);
            let (pzr, pzi) = (pz.re, fz * pz.im);
            let z1r = pxr * pyr - pxi * pyi;
            let z1i = pxr * pyi + pxi * pyr;
            row_re[i] = z1r * pzr - z1i * pzi;
            row_im[i] = z1r * pzi + z1i * pzr;
        }
    }
    (re, im)
}

/// Charges as a flat row-major copy, so inner loops can index slices.
fn flat_charges(q: ArrayView2<f64>) -> Vec<f64> {
    q.iter().cloned().collect()
}

/// S_c(k) accumulated into flat re/im arrays (k-major, channel-minor).
fn structure_factor_flat(
    n: usize,
    d: usize,
    m: usize,
    qv: &[f64],
    pre: &[f64],
    pim: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut sre = vec![0.0; m * d];
    let mut sim = vec![0.0; m * d];
    for kk in 0..m {
        let row_re = &pre[kk * n..(kk + 1) * n];
        let row_im = &pim[kk * n..(kk + 1) * n];
        let s_re = &mut sre[kk * d..(kk + 1) * d];
        let s_im = &mut sim[kk * d..(kk + 1) * d];
        for i in 0..n {
            let pr = row_re[i];
            let pi = row_im[i];
            for c in 0..d {
                let qic = qv[i * d + c];
                s_re[c] += qic * pr;
                s_im[c] += qic * pi;
            }
        }
    }
    (sre, sim)
}

/// S_c(k) for every enumerated k (rows) and channel (columns).
pub fn structure_factor_with(
    ks: &KSpace,
    phases: &Phases,
    q: ArrayView2<f64>,
) -> Array2<Complex64> {
    let (n, d) = q.dim();
    assert_eq!(n, phases.natoms(), "charge rows must match atom count");
    let m = ks.len();
    let qv = flat_charges(q);
    let (pre, pim) = phase_matrix(ks, phases);
    let (sre, sim) = structure_factor_flat(n, d, m, &qv, &pre, &pim);
    Array2::from_shape_fn((m, d), |(kk, c)| {
        Complex64::new(sre[kk * d + c], sim[kk * d + c])
    })
}

/// Convenience wrapper building the phase tables internally.
pub fn structure_factor(ks: &KSpace, positions: &[Vec3], q: ArrayView2<f64>) -> Array2<Complex64> {
    structure_factor_with(ks, &Phases::build(ks, positions), q)
}

/// E_lr from a precomputed structure factor.
pub fn lr_energy_from_sf(ks: &KSpace, sf: &Array2<Complex64>) -> f64 {
    let mut e = 0.0;
    for (kk, &w) in ks.weights.iter().enumerate() {
        let mut s2 = 0.0;
        for c in 0..sf.ncols() {
            s2 += sf[[kk, c]].norm_sqr();
        }
        e += w * s2;
    }
    e * ks.multiplier / ks.cell.volume()
}

/// Long-range energy of charges `q` (N × channels) at `positions`.
pub fn lr_energy(ks: &KSpace, positions: &[Vec3], q: ArrayView2<f64>) -> f64 {
    lr_energy_from_sf(ks, &structure_factor(ks, positions, q))
}

/// Energy with analytic first derivatives.
#[derive(Debug, Clone)]
pub struct LrGradients {
    pub energy: f64,
    /// ∂E/∂q, N × channels.
    pub dq: Array2<f64>,
    /// ∂E/∂r, per atom. The force contribution is the negative of this.
    pub dr: Vec<Vec3>,
}

pub fn lr_gradients_with(ks: &KSpace, phases: &Phases, q: ArrayView2<f64>) -> LrGradients {
    let (n, d) = q.dim();
    assert_eq!(n, phases.natoms(), "charge rows must match atom count");
    let m = ks.len();
    let qv = flat_charges(q);
    let (pre, pim) = phase_matrix(ks, phases);
    let (sre, sim) = structure_factor_flat(n, d, m, &qv, &pre, &pim);

    let mut energy = 0.0;
    for (kk, &w) in ks.weights.iter().enumerate() {
        let mut s2 = 0.0;
        for c in 0..d {
            let sr = sre[kk * d + c];
            let si = sim[kk * d + c];
            s2 += sr * sr + si * si;
        }
        energy += w * s2;
    }
    energy *= ks.multiplier / ks.cell.volume();

    let pref = 2.0 * ks.multiplier / ks.cell.volume();
    let mut dqv = vec![0.0; n * d];
    let mut dr = vec![Vec3::ZERO; n];
    for kk in 0..m {
        let w = ks.weights[kk];
        let kvec = ks.kvecs[kk];
        let row_re = &pre[kk * n..(kk + 1) * n];
        let row_im = &pim[kk * n..(kk + 1) * n];
        let s_re = &sre[kk * d..(kk + 1) * d];
        let s_im = &sim[kk * d..(kk + 1) * d];
        for i in 0..n {
            let pr = row_re[i];
            let pi = row_im[i];
            let mut im_acc = 0.0;
            for c in 0..d {
                // z = S* e^{ikr_i}
                let z_re = s_re[c] * pr + s_im[c] * pi;
                let z_im = s_re[c] * pi - s_im[c] * pr;
                // ∂|S|²/∂q_ic = 2·Re[S* e^{ikr_i}]
                dqv[i * d + c] += w * z_re;
                // ∂|S|²/∂r_i = 2·Re[S* · i q k e^{ikr}] = -2 q k Im[S* e^{ikr}]
                im_acc += qv[i * d + c] * z_im;
            }
            let t = w * im_acc;
            dr[i].x -= kvec.x * t;
            dr[i].y -= kvec.y * t;
            dr[i].z -= kvec.z * t;
        }
    }
    for x in &mut dqv {
        *x *= pref;
    }
    for v in &mut dr {
        *v = *v * pref;
    }
    let dq = Array2::from_shape_vec((n, d), dqv).expect("gradient shape");
    LrGradients { energy, dq, dr }
}

pub fn lr_gradients(ks: &KSpace, positions: &[Vec3], q: ArrayView2<f64>) -> LrGradients {
    lr_gradients_with(ks, &Phases::build(ks, positions), q)
}

/// Forward-mode (dual-number) evaluation along a direction
/// (q̇, v) in charge–position space. Returns the energy, its directional
/// derivative, the charge gradient u = ∂E/∂q, and u's directional
/// derivative u̇ — exactly the quantities the force-loss parameter gradient
/// needs.
#[derive(Debug, Clone)]
pub struct LrDual {
    pub energy: f64,
    pub energy_dot: f64,
    pub u: Array2<f64>,
    pub u_dot: Array2<f64>,
}

pub fn lr_dual(
    ks: &KSpace,
    phases: &Phases,
    q: ArrayView2<f64>,
    q_dot: ArrayView2<f64>,
    v: &[Vec3],
) -> LrDual {
    let (n, d) = q.dim();
    assert_eq!(q_dot.dim(), (n, d), "q̇ shape mismatch");
    assert_eq!(v.len(), n, "velocity field length mismatch");
    assert_eq!(n, phases.natoms(), "charge rows must match atom count");
    let vol = ks.cell.volume();
    let pref = 2.0 * ks.multiplier / vol;

    let m = ks.len();
    let qv = flat_charges(q);
    let qdv = flat_charges(q_dot);
    let (pre, pim) = phase_matrix(ks, phases);

    // k·v_i for every (k, atom) pair, reused by both passes.
    let mut kdotv = vec![0.0; m * n];
    for kk in 0..m {
        let kvec = ks.kvecs[kk];
        let row = &mut kdotv[kk * n..(kk + 1) * n];
        for (i, vi) in v.iter().enumerate() {
            row[i] = kvec.x * vi.x + kvec.y * vi.y + kvec.z * vi.z;
        }
    }

    // S and Ṡ in one pass, with Ṡ picking up both the charge and the
    // position parts of the direction: Ṡ_c = Σ_i (q̇_ic + i q_ic k·v_i) e^{ikr_i}.
    let mut sre = vec![0.0; m * d];
    let mut sim = vec![0.0; m * d];
    let mut sdre = vec![0.0; m * d];
    let mut sdim = vec![0.0; m * d];
    for kk in 0..m {
        let row_re = &pre[kk * n..(kk + 1) * n];
        let row_im = &pim[kk * n..(kk + 1) * n];
        let row_kv = &kdotv[kk * n..(kk + 1) * n];
        let s_re = &mut sre[kk * d..(kk + 1) * d];
        let s_im = &mut sim[kk * d..(kk + 1) * d];
        let sd_re = &mut sdre[kk * d..(kk + 1) * d];
        let sd_im = &mut sdim[kk * d..(kk + 1) * d];
        for i in 0..n {
            let pr = row_re[i];
            let pi = row_im[i];
            let kv = row_kv[i];
            for c in 0..d {
                let qic = qv[i * d + c];
                s_re[c] += qic * pr;
                s_im[c] += qic * pi;
                let a_re = qdv[i * d + c];
                let a_im = qic * kv;
                sd_re[c] += a_re * pr - a_im * pi;
                sd_im[c] += a_re * pi + a_im * pr;
            }
        }
    }

    let mut energy = 0.0;
    let mut energy_dot = 0.0;
    for (kk, &w) in ks.weights.iter().enumerate() {
        for c in 0..d {
            let sr = sre[kk * d + c];
            let si = sim[kk * d + c];
            let sdr = sdre[kk * d + c];
            let sdi = sdim[kk * d + c];
            energy += w * (sr * sr + si * si);
            energy_dot += w * 2.0 * (sr * sdr + si * sdi);
        }
    }
    energy *= ks.multiplier / vol;
    energy_dot *= ks.multiplier / vol;

    let mut uv = vec![0.0; n * d];
    let mut udv = vec![0.0; n * d];
    for kk in 0..m {
        let w = ks.weights[kk];
        let row_re = &pre[kk * n..(kk + 1) * n];
        let row_im = &pim[kk * n..(kk + 1) * n];
        let row_kv = &kdotv[kk * n..(kk + 1) * n];
        let s_re = &sre[kk * d..(kk + 1) * d];
        let s_im = &sim[kk * d..(kk + 1) * d];
        let sd_re = &sdre[kk * d..(kk + 1) * d];
        let sd_im = &sdim[kk * d..(kk + 1) * d];
        for i in 0..n {
            let pr = row_re[i];
            let pi = row_im[i];
            let kv = row_kv[i];
            // ṗ = i (k·v_i) p
            let pd_re = -(kv * pi);
            let pd_im = kv * pr;
            for c in 0..d {
                // u_ic = Σ_k w Re[S* p];  u̇ picks up Ṡ and ṗ.
                uv[i * d + c] += w * (s_re[c] * pr + s_im[c] * pi);
                udv[i * d + c] += w
                    * ((sd_re[c] * pr + sd_im[c] * pi)
                        + (s_re[c] * pd_re + s_im[c] * pd_im));
            }
        }
    }
    for x in &mut uv {
        *x *= pref;
    }
    for x in &mut udv {
        *x *= pref;
    }
    let u = Array2::from_shape_vec((n, d), uv).expect("gradient shape");
    let u_dot = Array2::from_shape_vec((n, d), udv).expect("gradient shape");

    LrDual { energy, energy_dot, u, u_dot }
}
