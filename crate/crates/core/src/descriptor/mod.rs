//! Local invariant descriptors and their analytic position gradients.
//!
//! Every atom i gets a feature vector B_i built from its neighborhood within
//! `r_cut` under the minimum-image convention:
//!
//! - Two-body channels, per (neighbor species s, radial index n):
//!   `A_i[s,n] = Σ_{j∈N(i), s_j=s} f_n(r_ij)`.
//! - Three-body channels, per (s, n, s', n', l):
//!   `T_i[s,n,s',n',l] = Σ_{j,k∈N(i)} δ_{s_j s} δ_{s_k s'} f_n(r_ij) f_{n'}(r_ik) P_l(cos θ_jik)`,
//!   where the double sum runs over ordered pairs including j = k.
//!
//! B_i is the concatenation [A_i, T_i] (T omitted entirely when `l_max = 0`,
//! which selects pure radial features). Both channel families are invariant
//! under rigid translations, rotations/reflections, and relabeling of
//! identical atoms.
//!
//! Internally the three-body sum is never evaluated as a double loop over
//! neighbor pairs. Expanding P_l in monomials of cos θ and applying the
//! multinomial theorem turns each channel into an inner product of Cartesian
//! moments `M_i[s,n,α] = Σ_j f_n(r_ij) û_ij^α` (see
//! [`basis::AngularTable`]), which costs O(neighbors) instead of
//! O(neighbors²) and is algebraically identical to the defining formula.
//! Gradients reuse the same moments, so evaluating all ∂B_i/∂r_j costs a
//! small constant per (atom, neighbor) pair.

pub mod basis;

use crate::atoms::{Configuration, NeighborList};
use crate::error::{Error, Result};
use crate::vec3::Vec3;
use basis::{radial_basis, radial_basis_d, AngularTable};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

/// Hyperparameters of the descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorConfig {
    /// Species alphabet; order defines channel order. Atoms outside this
    /// list are rejected.
    pub species: Vec<String>,
    /// Neighbor cutoff (Å).
    pub r_cut: f64,
    /// Number of radial basis functions (n = 1..=n_radial).
    pub n_radial: usize,
    /// Highest Legendre order l. `0` selects pure two-body radial features.
    pub l_max: usize,
}

impl DescriptorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.species.is_empty() {
            return Err(Error::Invalid("descriptor species list is empty".into()));
        }
        for (i, s) in self.species.iter().enumerate() {
            if self.species[..i].contains(s) {
                return Err(Error::Invalid(format!("duplicate species {s:?} in descriptor")));
            }
        }
        if !(self.r_cut > 0.0 && self.r_cut.is_finite()) {
            return Err(Error::Invalid(format!("r_cut must be positive, got {}", self.r_cut)));
        }
        if self.n_radial == 0 {
            return Err(Error::Invalid("n_radial must be ≥ 1".into()));
        }
        if self.l_max > 6 {
            return Err(Error::Invalid(format!("l_max must be ≤ 6, got {}", self.l_max)));
        }
        Ok(())
    }

    /// Number of species channels.
    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    /// Number of two-body channels S·n_radial.
    pub fn n_two_body(&self) -> usize {
        self.species.len() * self.n_radial
    }

    /// Total feature dimension D. For `l_max ≥ 1` this is
    /// `S·n_radial + (S·n_radial)²·(l_max+1)`; for `l_max = 0` only the
    /// two-body block exists.
    pub fn dim(&self) -> usize {
        let k = self.n_two_body();
        if self.l_max == 0 {
            k
        } else {
            k + k * k * (self.l_max + 1)
        }
    }

    pub fn species_index(&self, symbol: &str) -> Result<usize> {
        self.species
            .iter()
            .position(|s| s == symbol)
            .ok_or_else(|| Error::UnknownSpecies(symbol.to_string()))
    }

    /// Index of two-body channel (s, n).
    #[inline]
    pub fn idx2(&self, s: usize, n: usize) -> usize {
        s * self.n_radial + n
    }

    /// Index of three-body channel (k1, k2, l) where k = s·n_radial + n.
    #[inline]
    pub fn idx3(&self, k1: usize, k2: usize, l: usize) -> usize {
        let k = self.n_two_body();
        k + (k1 * k + k2) * (self.l_max + 1) + l
    }
}

/// One neighbor's contribution to a central atom, in canonical order.
#[derive(Debug, Clone, Copy)]
struct Contribution {
    /// Neighbor atom index.
    j: usize,
    /// Neighbor species channel.
    sj: usize,
    dist: f64,
    disp: Vec3,
}

/// Features plus the cached intermediates needed to evaluate gradients
/// without redoing the neighbor pass.
#[derive(Debug, Clone)]
pub struct FeatureEvaluation {
    /// Feature matrix, one row per atom (N × D).
    pub b: Array2<f64>,
    /// Species channel per atom.
    pub species_idx: Vec<usize>,
    /// Cartesian moments per atom, flattened (S·n_radial) × n_monos.
    moments: Vec<Vec<f64>>,
    /// Canonically ordered neighbor contributions per atom.
    contribs: Vec<Vec<Contribution>>,
    table: AngularTable,
    cfg: DescriptorConfig,
}

/// Compute the feature matrix B (N × D) alone.
pub fn compute_features(
    config: &Configuration,
    nl: &NeighborList,
    cfg: &DescriptorConfig,
) -> Result<Array2<f64>> {
    Ok(evaluate_features(config, nl, cfg)?.b)
}

/// Compute features together with the intermediates required by
/// [`FeatureEvaluation::position_gradient`] and
/// [`FeatureEvaluation::directional_derivative`].
pub fn evaluate_features(
    config: &Configuration,
    nl: &NeighborList,
    cfg: &DescriptorConfig,
) -> Result<FeatureEvaluation> {
    cfg.validate()?;
    config.validate()?;
    if nl.natoms() != config.natoms() {
        return Err(Error::Invalid(format!(
            "neighbor list covers {} atoms, configuration has {}",
            nl.natoms(),
            config.natoms()
        )));
    }
    let species_idx: Vec<usize> =
        config.species.iter().map(|s| cfg.species_index(s)).collect::<Result<_>>()?;
    let table = AngularTable::new(cfg.l_max)?;
    let contribs = canonical_contribs(nl, &species_idx)?;

    let n = config.natoms();
    let nm = table.n_monos();
    let k = cfg.n_two_body();
    let mut b = Array2::zeros((n, cfg.dim()));
    let mut moments = vec![vec![0.0f64; k * nm]; n];
    let mut mono_buf = vec![0.0f64; nm];
    let mut radial_buf = vec![0.0f64; cfg.n_radial];

    for i in 0..n {
        let m = &mut moments[i];
        for contrib in &contribs[i] {
            for (nn, r) in radial_buf.iter_mut().enumerate() {
                *r = radial_basis(contrib.dist, nn + 1, cfg.r_cut);
            }
            table.eval_monos(contrib.disp / contrib.dist, &mut mono_buf);
            for (nn, &fv) in radial_buf.iter().enumerate() {
                let base = (contrib.sj * cfg.n_radial + nn) * nm;
                for (mi, &mv) in mono_buf.iter().enumerate() {
                    m[base + mi] += fv * mv;
                }
            }
        }
        let mut row = b.row_mut(i);
        for k1 in 0..k {
            row[cfg.idx2(k1 / cfg.n_radial, k1 % cfg.n_radial)] = m[k1 * nm];
        }
        if cfg.l_max >= 1 {
            for (l, entries) in table.per_l.iter().enumerate() {
                for &(mi, coeff) in entries {
                    for k1 in 0..k {
                        let a1 = coeff * m[k1 * nm + mi];
                        if a1 == 0.0 {
                            continue;
                        }
                        for k2 in 0..k {
                            row[cfg.idx3(k1, k2, l)] += a1 * m[k2 * nm + mi];
                        }
                    }
                }
            }
        }
    }

    Ok(FeatureEvaluation { b, species_idx, moments, contribs, table, cfg: cfg.clone() })
}

/// Sort each atom's neighbor contributions by a key that is invariant under
/// relabeling of identical atoms (species channel, distance, displacement
/// components). This makes every accumulation below independent of the input
/// atom order, so permuting identical atoms permutes feature rows *bitwise*.
fn canonical_contribs(nl: &NeighborList, species_idx: &[usize]) -> Result<Vec<Vec<Contribution>>> {
    let mut out = Vec::with_capacity(nl.natoms());
    for i in 0..nl.natoms() {
        let mut list: Vec<Contribution> = nl.neighbors[i]
            .iter()
            .map(|nb| Contribution {
                j: nb.index,
                sj: species_idx[nb.index],
                dist: nb.dist,
                disp: nb.disp,
            })
            .collect();
        for c in &list {
            if c.dist < 1e-8 {
                return Err(Error::Geometry(format!(
                    "atoms {} and {} overlap (distance {:.2e} Å)",
                    i, c.j, c.dist
                )));
            }
        }
        list.sort_by(|a, b| {
            a.sj.cmp(&b.sj)
                .then_with(|| a.dist.total_cmp(&b.dist))
                .then_with(|| a.disp.x.total_cmp(&b.disp.x))
                .then_with(|| a.disp.y.total_cmp(&b.disp.y))
                .then_with(|| a.disp.z.total_cmp(&b.disp.z))
        });
        out.push(list);
    }
    Ok(out)
}

/// Per-pair gradient kernel: fills `gvec[n·nm + m]` with
/// ∂/∂(disp) of f_n(r)·û^α_m, for all radial indices and monomials.
///
/// With g = f_n:  ∇ (g û^α) = û û^α (g' − p g / r) + (g/r) Σ_γ α_γ û^{α−e_γ} e_γ.
fn pair_gvec(
    table: &AngularTable,
    cfg: &DescriptorConfig,
    c: &Contribution,
    mono_buf: &mut [f64],
    radial: &mut [(f64, f64)],
    gvec: &mut [Vec3],
) {
    let r = c.dist;
    let u = c.disp / r;
    table.eval_monos(u, mono_buf);
    for (nn, rv) in radial.iter_mut().enumerate() {
        *rv = radial_basis_d(r, nn + 1, cfg.r_cut);
    }
    let nm = table.n_monos();
    for (nn, &(f, fd)) in radial.iter().enumerate() {
        let f_over_r = f / r;
        for (mi, m) in table.monos.iter().enumerate() {
            let radial_part = mono_buf[mi] * (fd - m.degree as f64 * f_over_r);
            let mut g = u * radial_part;
            for axis in 0..3 {
                if let Some(lower) = m.dec[axis] {
                    g[axis] += m.pows[axis] as f64 * f_over_r * mono_buf[lower];
                }
            }
            gvec[nn * nm + mi] = g;
        }
    }
}

impl FeatureEvaluation {
    pub fn natoms(&self) -> usize {
        self.b.nrows()
    }

    pub fn dim(&self) -> usize {
        self.b.ncols()
    }

    /// Contract per-row feature adjoints with the feature Jacobian:
    ///
    /// `out[m] = Σ_i Σ_d adjoints[i,d] · ∂B_i[d]/∂r_m`.
    ///
    /// This is the force path: with `adjoints[i] = ∂E/∂B_i` the result is
    /// ∂E/∂r. Runs fused over (atom, neighbor) pairs without materializing
    /// the Jacobian.
    pub fn position_gradient(&self, adjoints: ArrayView2<f64>) -> Vec<Vec3> {
        let cfg = &self.cfg;
        let table = &self.table;
        let n = self.natoms();
        let nm = table.n_monos();
        let k = cfg.n_two_body();
        assert_eq!(adjoints.dim(), (n, self.dim()), "adjoint shape mismatch");

        let mut out = vec![Vec3::ZERO; n];
        let mut g_moments = vec![0.0f64; k * nm];
        let mut mono_buf = vec![0.0f64; nm];
        let mut radial = vec![(0.0f64, 0.0f64); cfg.n_radial];
        let mut gvec = vec![Vec3::ZERO; cfg.n_radial * nm];

        for i in 0..n {
            if self.contribs[i].is_empty() {
                continue;
            }
            let row = adjoints.row(i);
            let m = &self.moments[i];
            // Adjoint of the moments: ∂Φ/∂M_i[k1, α] where Φ = Σ_d row[d]·B_i[d].
            g_moments.iter_mut().for_each(|x| *x = 0.0);
            for k1 in 0..k {
                g_moments[k1 * nm] += row[k1];
            }
            if cfg.l_max >= 1 {
                for (l, entries) in table.per_l.iter().enumerate() {
                    for &(mi, coeff) in entries {
                        for k1 in 0..k {
                            let mut acc = 0.0;
                            for k2 in 0..k {
                                acc += (row[cfg.idx3(k1, k2, l)] + row[cfg.idx3(k2, k1, l)])
                                    * m[k2 * nm + mi];
                            }
                            g_moments[k1 * nm + mi] += coeff * acc;
                        }
                    }
                }
            }
            for contrib in &self.contribs[i] {
                pair_gvec(table, cfg, contrib, &mut mono_buf, &mut radial, &mut gvec);
                let mut f = Vec3::ZERO;
                let base_k = contrib.sj * cfg.n_radial;
                for nn in 0..cfg.n_radial {
                    let gm = &g_moments[(base_k + nn) * nm..(base_k + nn) * nm + nm];
                    let gv = &gvec[nn * nm..nn * nm + nm];
                    for (a, &w) in gv.iter().zip(gm) {
                        f += *a * w;
                    }
                }
                out[contrib.j] += f;
                out[i] -= f;
            }
        }
        out
    }

    /// Directional derivative of the features along a velocity field:
    /// `out[i,d] = Σ_m ∂B_i[d]/∂r_m · v[m]`.
    pub fn directional_derivative(&self, v: &[Vec3]) -> Array2<f64> {
        let cfg = &self.cfg;
        let table = &self.table;
        let n = self.natoms();
        let nm = table.n_monos();
        let k = cfg.n_two_body();
        assert_eq!(v.len(), n, "field length mismatch");

        let mut out = Array2::zeros((n, self.dim()));
        let mut mdot = vec![0.0f64; k * nm];
        let mut mono_buf = vec![0.0f64; nm];
        let mut radial = vec![(0.0f64, 0.0f64); cfg.n_radial];
        let mut gvec = vec![Vec3::ZERO; cfg.n_radial * nm];

        for i in 0..n {
            if self.contribs[i].is_empty() {
                continue;
            }
            mdot.iter_mut().for_each(|x| *x = 0.0);
            for contrib in &self.contribs[i] {
                pair_gvec(table, cfg, contrib, &mut mono_buf, &mut radial, &mut gvec);
                let w = v[contrib.j] - v[i];
                let base_k = contrib.sj * cfg.n_radial;
                for nn in 0..cfg.n_radial {
                    let base = (base_k + nn) * nm;
                    for mi in 0..nm {
                        mdot[base + mi] += gvec[nn * nm + mi].dot(w);
                    }
                }
            }
            let m = &self.moments[i];
            let mut row = out.row_mut(i);
            for k1 in 0..k {
                row[k1] = mdot[k1 * nm];
            }
            if cfg.l_max >= 1 {
                for (l, entries) in table.per_l.iter().enumerate() {
                    for &(mi, coeff) in entries {
                        for k1 in 0..k {
                            let a1 = m[k1 * nm + mi];
                            let a1dot = mdot[k1 * nm + mi];
                            if a1 == 0.0 && a1dot == 0.0 {
                                continue;
                            }
                            for k2 in 0..k {
                                row[cfg.idx3(k1, k2, l)] += coeff
                                    * (a1dot * m[k2 * nm + mi] + a1 * mdot[k2 * nm + mi]);
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// One dense block of the sparse feature Jacobian: ∂B_center/∂r_wrt, D × 3.
#[derive(Debug, Clone)]
pub struct GradBlock {
    pub center: usize,
    pub wrt: usize,
    pub d: Array2<f64>,
}

/// Sparse feature Jacobian as a list of dense blocks, sorted by
/// (center, wrt). Only pairs within the cutoff (plus the diagonal) appear;
/// an isolated atom contributes no blocks at all.
#[derive(Debug, Clone)]
pub struct FeatureGradients {
    pub dim: usize,
    pub blocks: Vec<GradBlock>,
}

impl FeatureGradients {
    /// Ḃ[i,d] = Σ_m ∂B_i[d]/∂r_m · v[m], from the materialized blocks.
    pub fn contract_field(&self, natoms: usize, v: &[Vec3]) -> Array2<f64> {
        let mut out = Array2::zeros((natoms, self.dim));
        for blk in &self.blocks {
            let w = v[blk.wrt];
            let mut row = out.row_mut(blk.center);
            for d in 0..self.dim {
                row[d] += blk.d[[d, 0]] * w.x + blk.d[[d, 1]] * w.y + blk.d[[d, 2]] * w.z;
            }
        }
        out
    }

    /// out[m] = Σ_i Σ_d g[i,d] · ∂B_i[d]/∂r_m, from the materialized blocks.
    pub fn contract_adjoints(&self, natoms: usize, g: ArrayView2<f64>) -> Vec<Vec3> {
        let mut out = vec![Vec3::ZERO; natoms];
        for blk in &self.blocks {
            let row = g.row(blk.center);
            let mut f = Vec3::ZERO;
            for d in 0..self.dim {
                f += Vec3::new(blk.d[[d, 0]], blk.d[[d, 1]], blk.d[[d, 2]]) * row[d];
            }
            out[blk.wrt] += f;
        }
        out
    }
}

/// Materialize the sparse feature Jacobian ∂B_i/∂r_j for all in-range pairs
/// and the diagonal. Memory scales with pairs × D × 3; intended for training
/// on small/medium configurations and for verification. The fused paths on
/// [`FeatureEvaluation`] compute the same contractions without materializing.
pub fn compute_feature_gradients(
    config: &Configuration,
    nl: &NeighborList,
    cfg: &DescriptorConfig,
) -> Result<FeatureGradients> {
    let ev = evaluate_features(config, nl, cfg)?;
    let table = &ev.table;
    let nm = table.n_monos();
    let k = cfg.n_two_body();
    let dim = cfg.dim();

    let mut blocks = Vec::new();
    let mut mono_buf = vec![0.0f64; nm];
    let mut radial = vec![(0.0f64, 0.0f64); cfg.n_radial];
    let mut gvec = vec![Vec3::ZERO; cfg.n_radial * nm];

    for i in 0..ev.natoms() {
        if ev.contribs[i].is_empty() {
            continue;
        }
        let m = &ev.moments[i];
        let mut self_block = Array2::zeros((dim, 3));
        let mut pair_blocks: Vec<(usize, Array2<f64>)> = Vec::with_capacity(ev.contribs[i].len());
        for contrib in &ev.contribs[i] {
            pair_gvec(table, cfg, contrib, &mut mono_buf, &mut radial, &mut gvec);
            let mut d = Array2::zeros((dim, 3));
            for nn in 0..cfg.n_radial {
                let row = cfg.idx2(contrib.sj, nn);
                let g = gvec[nn * nm];
                d[[row, 0]] += g.x;
                d[[row, 1]] += g.y;
                d[[row, 2]] += g.z;
            }
            if cfg.l_max >= 1 {
                for (l, entries) in table.per_l.iter().enumerate() {
                    for &(mi, coeff) in entries {
                        for nn in 0..cfg.n_radial {
                            let k1 = contrib.sj * cfg.n_radial + nn;
                            let g = gvec[nn * nm + mi] * coeff;
                            for k2 in 0..k {
                                let val = g * m[k2 * nm + mi];
                                if val == Vec3::ZERO {
                                    continue;
                                }
                                for (row, v) in
                                    [(cfg.idx3(k1, k2, l), val), (cfg.idx3(k2, k1, l), val)]
                                {
                                    d[[row, 0]] += v.x;
                                    d[[row, 1]] += v.y;
                                    d[[row, 2]] += v.z;
                                }
                            }
                        }
                    }
                }
            }
            self_block -= &d;
            pair_blocks.push((contrib.j, d));
        }
        pair_blocks.push((i, self_block));
        pair_blocks.sort_by_key(|(j, _)| *j);
        for (j, d) in pair_blocks {
            blocks.push(GradBlock { center: i, wrt: j, d });
        }
    }
    Ok(FeatureGradients { dim, blocks })
}
