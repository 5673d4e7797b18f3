//! Radial basis functions and the angular (Legendre/monomial) tables used by
//! the three-body descriptor contraction.

use crate::error::{Error, Result};
use crate::vec3::Vec3;
use std::collections::HashMap;

/// Radial basis function n (1-based), with compact support on [0, r_cut):
///
/// ```text
/// f_n(r) = sin(n π r / r_cut) / r · (1 - (r/r_cut)²)²   for r < r_cut,
/// f_n(r) = 0                                            otherwise.
/// ```
///
/// The squared envelope makes f_n and f_n' both vanish at the cutoff, so
/// descriptors are C¹ as atoms cross it.
pub fn radial_basis(r: f64, n: usize, r_cut: f64) -> f64 {
    if r <= 0.0 || r >= r_cut {
        return 0.0;
    }
    let u = r / r_cut;
    let env = (1.0 - u * u) * (1.0 - u * u);
    (n as f64 * std::f64::consts::PI * u).sin() / r * env
}

/// Value and derivative of [`radial_basis`] with respect to r.
pub fn radial_basis_d(r: f64, n: usize, r_cut: f64) -> (f64, f64) {
    if r <= 0.0 || r >= r_cut {
        return (0.0, 0.0);
    }
    let k = n as f64 * std::f64::consts::PI / r_cut;
    let (s, c) = (k * r).sin_cos();
    let u = r / r_cut;
    let g = 1.0 - u * u;
    let env = g * g;
    let env_d = -4.0 * u * g / r_cut;
    let osc = s / r;
    let osc_d = k * c / r - s / (r * r);
    (osc * env, osc_d * env + osc * env_d)
}

/// Coefficients of the Legendre polynomial P_l(t) = Σ_p c_{l,p} · t^p.
///
/// Hard-coded through l = 6; higher orders are not supported by the
/// descriptor (validated at config time).
pub fn legendre_coeffs(l: usize) -> Result<&'static [(usize, f64)]> {
    const L0: &[(usize, f64)] = &[(0, 1.0)];
    const L1: &[(usize, f64)] = &[(1, 1.0)];
    const L2: &[(usize, f64)] = &[(0, -0.5), (2, 1.5)];
    const L3: &[(usize, f64)] = &[(1, -1.5), (3, 2.5)];
    const L4: &[(usize, f64)] = &[(0, 3.0 / 8.0), (2, -30.0 / 8.0), (4, 35.0 / 8.0)];
    const L5: &[(usize, f64)] = &[(1, 15.0 / 8.0), (3, -70.0 / 8.0), (5, 63.0 / 8.0)];
    const L6: &[(usize, f64)] = &[
        (0, -5.0 / 16.0),
        (2, 105.0 / 16.0),
        (4, -315.0 / 16.0),
        (6, 231.0 / 16.0),
    ];
    match l {
        0 => Ok(L0),
        1 => Ok(L1),
        2 => Ok(L2),
        3 => Ok(L3),
        4 => Ok(L4),
        5 => Ok(L5),
        6 => Ok(L6),
        _ => Err(Error::Invalid(format!("l_max must be ≤ 6, got l = {l}"))),
    }
}

/// Evaluate P_l(t) by the Bonnet recursion. Used as an independent reference
/// for the coefficient tables and by test oracles.
pub fn legendre(l: usize, t: f64) -> f64 {
    match l {
        0 => 1.0,
        1 => t,
        _ => {
            let (mut pm, mut p) = (1.0, t);
            for k in 1..l {
                let next = ((2 * k + 1) as f64 * t * p - k as f64 * pm) / (k + 1) as f64;
                pm = p;
                p = next;
            }
            p
        }
    }
}

/// One Cartesian monomial α = (a, b, c): û^α = ûx^a ûy^b ûz^c.
#[derive(Debug, Clone, Copy)]
pub struct Mono {
    pub pows: [u8; 3],
    /// Total degree p = a + b + c.
    pub degree: usize,
    /// Multinomial weight p! / (a! b! c!).
    pub weight: f64,
    /// Index of α - e_γ within the table, for each axis γ with α_γ > 0.
    pub dec: [Option<usize>; 3],
}

/// Precomputed tables that turn the Legendre double sum
/// `Σ_{jk} f f' P_l(û_j·û_k)` into products of Cartesian moments:
///
/// ```text
/// P_l(û_j·û_k) = Σ_p c_{l,p} (û_j·û_k)^p
///              = Σ_p c_{l,p} Σ_{|α|=p} w_α û_j^α û_k^α     (multinomial)
/// ```
///
/// so each l-channel is an exact inner product over moment vectors. No
/// truncation is involved; the identity holds term by term.
#[derive(Debug, Clone)]
pub struct AngularTable {
    pub l_max: usize,
    pub monos: Vec<Mono>,
    /// For each l: (monomial index, c_{l,p} · w_α) pairs.
    pub per_l: Vec<Vec<(usize, f64)>>,
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

impl AngularTable {
    pub fn new(l_max: usize) -> Result<AngularTable> {
        if l_max > 6 {
            return Err(Error::Invalid(format!("l_max must be ≤ 6, got {l_max}")));
        }
        let mut monos = Vec::new();
        let mut index = HashMap::new();
        for p in 0..=l_max {
            for a in (0..=p).rev() {
                for b in (0..=(p - a)).rev() {
                    let c = p - a - b;
                    let pows = [a as u8, b as u8, c as u8];
                    index.insert(pows, monos.len());
                    monos.push(Mono {
                        pows,
                        degree: p,
                        weight: factorial(p) / (factorial(a) * factorial(b) * factorial(c)),
                        dec: [None; 3],
                    });
                }
            }
        }
        for m in &mut monos {
            for axis in 0..3 {
                if m.pows[axis] > 0 {
                    let mut lower = m.pows;
                    lower[axis] -= 1;
                    m.dec[axis] = Some(index[&lower]);
                }
            }
        }
        let mut per_l = Vec::with_capacity(l_max + 1);
        for l in 0..=l_max {
            let mut entries = Vec::new();
            for &(p, c) in legendre_coeffs(l)? {
                for (mi, m) in monos.iter().enumerate() {
                    if m.degree == p {
                        entries.push((mi, c * m.weight));
                    }
                }
            }
            per_l.push(entries);
        }
        Ok(AngularTable { l_max, monos, per_l })
    }

    pub fn n_monos(&self) -> usize {
        self.monos.len()
    }

    /// Evaluate all monomials û^α for a unit vector, in table order.
    pub fn eval_monos(&self, u: Vec3, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.monos.len());
        let mut px = [1.0f64; 7];
        let mut py = [1.0f64; 7];
        let mut pz = [1.0f64; 7];
        for k in 1..=self.l_max {
            px[k] = px[k - 1] * u.x;
            py[k] = py[k - 1] * u.y;
            pz[k] = pz[k - 1] * u.z;
        }
        for (o, m) in out.iter_mut().zip(&self.monos) {
            *o = px[m.pows[0] as usize] * py[m.pows[1] as usize] * pz[m.pows[2] as usize];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_tables_match_recursion() {
        for l in 0..=6 {
            for i in 0..50 {
                let t = -1.0 + 2.0 * (i as f64) / 49.0;
                let via_table: f64 =
                    legendre_coeffs(l).unwrap().iter().map(|&(p, c)| c * t.powi(p as i32)).sum();
                let via_rec = legendre(l, t);
                assert!(
                    (via_table - via_rec).abs() < 1e-12,
                    "l={l} t={t}: {via_table} vs {via_rec}"
                );
            }
        }
        assert!(legendre_coeffs(7).is_err());
    }

    #[test]
    fn multinomial_expansion_reproduces_dot_powers() {
        // Σ_{|α|=p} w_α û^α v̂^α must equal (û·v̂)^p exactly.
        let table = AngularTable::new(6).unwrap();
        let u = Vec3::new(0.1, -0.7, 0.7039).map(|x| x); // not normalized; fine for the identity
        let v = Vec3::new(-0.3, 0.2, 0.95);
        let mut mu = vec![0.0; table.n_monos()];
        let mut mv = vec![0.0; table.n_monos()];
        table.eval_monos(u, &mut mu);
        table.eval_monos(v, &mut mv);
        for p in 0..=6usize {
            let direct = u.dot(v).powi(p as i32);
            let via: f64 = table
                .monos
                .iter()
                .enumerate()
                .filter(|(_, m)| m.degree == p)
                .map(|(i, m)| m.weight * mu[i] * mv[i])
                .sum();
            assert!((via - direct).abs() < 1e-12 * direct.abs().max(1.0), "p={p}");
        }
    }

    #[test]
    fn radial_basis_support_and_derivative() {
        let rc = 5.0;
        // Exactly zero at and beyond the cutoff.
        for n in 1..=6 {
            assert_eq!(radial_basis(rc, n, rc), 0.0);
            assert_eq!(radial_basis(rc + 0.3, n, rc), 0.0);
            assert_eq!(radial_basis(0.0, n, rc), 0.0);
        }
        // Zeros of the oscillator: r = r_cut/2 is a node of n = 2.
        assert!(radial_basis(2.5, 2, rc).abs() < 1e-15);
        // Value against the closed form at r = 1, n = 1.
        let expect = (std::f64::consts::PI / 5.0).sin() / 1.0 * (1.0 - 0.04) * (1.0 - 0.04);
        assert!((radial_basis(1.0, 1, rc) - expect).abs() < 1e-15);
        // Derivative against central differences.
        for n in 1..=4 {
            for &r in &[0.31, 1.7, 2.9, 4.2, 4.93] {
                let h = 1e-6;
                let num = (radial_basis(r + h, n, rc) - radial_basis(r - h, n, rc)) / (2.0 * h);
                let (_, ana) = radial_basis_d(r, n, rc);
                assert!((num - ana).abs() < 1e-6 * num.abs().max(1.0), "n={n} r={r}");
            }
        }
    }

    #[test]
    fn mono_table_structure() {
        let t = AngularTable::new(2).unwrap();
        // 1 + 3 + 6 monomials up to degree 2.
        assert_eq!(t.n_monos(), 10);
        assert_eq!(t.monos[0].pows, [0, 0, 0]);
        assert_eq!(t.monos[0].weight, 1.0);
        // x·y cross term has weight 2!/1!1! = 2.
        let xy = t.monos.iter().find(|m| m.pows == [1, 1, 0]).unwrap();
        assert_eq!(xy.weight, 2.0);
        // Decrement pointers: d/dx of x y points at y.
        let xy_idx = t.monos.iter().position(|m| m.pows == [1, 1, 0]).unwrap();
        let y_idx = t.monos.iter().position(|m| m.pows == [0, 1, 0]).unwrap();
        assert_eq!(t.monos[xy_idx].dec[0], Some(y_idx));
        assert_eq!(t.monos[xy_idx].dec[2], None);
    }
}
