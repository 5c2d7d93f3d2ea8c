//! Quartic polynomials and their band-0/2/4 spherical-harmonic coefficients.
//!
//! Odeco coefficient vectors are laid out as `[band 0 | band 2 (m=−2..2) | band 4 (m=−4..4)]`.
//! The harmonic basis is orthonormal in `L²(S²)`, so Euclidean distances between
//! coefficient vectors are `L²` distances between the polynomials on the sphere.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{Matrix3, SVector, Vector3, Vector5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::so3::{Frame9, Mat15};

pub type Odeco15 = SVector<f64, 15>;
/// Coefficients of the 15 quartic monomials in [`QUARTIC_EXPONENTS`] order.
pub type QuarticMonomial = SVector<f64, 15>;

/// Exponents `(a, b, c)` of `x^a y^b z^c`, lexicographically descending.
pub const QUARTIC_EXPONENTS: [[u8; 3]; 15] = [
    [4, 0, 0],
    [3, 1, 0],
    [3, 0, 1],
    [2, 2, 0],
    [2, 1, 1],
    [2, 0, 2],
    [1, 3, 0],
    [1, 2, 1],
    [1, 1, 2],
    [1, 0, 3],
    [0, 4, 0],
    [0, 3, 1],
    [0, 2, 2],
    [0, 1, 3],
    [0, 0, 4],
];

/// A sparse polynomial in `x, y, z`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Poly {
    pub terms: BTreeMap<[u8; 3], f64>,
}

impl Poly {
    pub fn monomial(c: f64, e: [u8; 3]) -> Self {
        let mut p = Poly::default();
        p.add_term(e, c);
        p
    }

    pub fn var(i: usize) -> Self {
        let mut e = [0u8; 3];
        e[i] = 1;
        Poly::monomial(1.0, e)
    }

    pub fn constant(c: f64) -> Self {
        Poly::monomial(c, [0, 0, 0])
    }

    fn add_term(&mut self, e: [u8; 3], c: f64) {
        if c != 0.0 {
            *self.terms.entry(e).or_insert(0.0) += c;
        }
    }

    pub fn add(&self, o: &Poly) -> Poly {
        let mut r = self.clone();
        for (e, c) in &o.terms {
            r.add_term(*e, *c);
        }
        r
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly { terms: self.terms.iter().map(|(e, c)| (*e, c * s)).collect() }
    }

    pub fn sub(&self, o: &Poly) -> Poly {
        self.add(&o.scale(-1.0))
    }

    pub fn mul(&self, o: &Poly) -> Poly {
        let mut r = Poly::default();
        for (ea, ca) in &self.terms {
            for (eb, cb) in &o.terms {
                r.add_term([ea[0] + eb[0], ea[1] + eb[1], ea[2] + eb[2]], ca * cb);
            }
        }
        r
    }

    pub fn pow(&self, k: u32) -> Poly {
        (0..k).fold(Poly::constant(1.0), |acc, _| acc.mul(self))
    }

    pub fn eval(&self, x: &Vector3<f64>) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c * x.x.powi(e[0] as i32) * x.y.powi(e[1] as i32) * x.z.powi(e[2] as i32))
            .sum()
    }

    /// Partial derivative with respect to variable `i`.
    pub fn diff(&self, i: usize) -> Poly {
        let mut r = Poly::default();
        for (e, c) in &self.terms {
            if e[i] > 0 {
                let mut f = *e;
                f[i] -= 1;
                r.add_term(f, c * e[i] as f64);
            }
        }
        r
    }

    /// Substitutes `x ↦ A x`, i.e. returns `x ↦ p(A x)`.
    pub fn compose_linear(&self, a: &Matrix3<f64>) -> Poly {
        let lin: Vec<Poly> = (0..3)
            .map(|i| {
                let mut p = Poly::default();
                for j in 0..3 {
                    p = p.add(&Poly::var(j).scale(a[(i, j)]));
                }
                p
            })
            .collect();
        let mut r = Poly::default();
        for (e, c) in &self.terms {
            let t = lin[0].pow(e[0] as u32).mul(&lin[1].pow(e[1] as u32)).mul(&lin[2].pow(e[2] as u32));
            r = r.add(&t.scale(*c));
        }
        r
    }

    /// `∫_{S²} p dA`.
    pub fn sphere_integral(&self) -> f64 {
        self.terms.iter().map(|(e, c)| c * sphere_monomial_integral(*e)).sum()
    }

    /// Monomial coefficients of a homogeneous quartic; other terms must vanish.
    pub fn to_quartic(&self) -> QuarticMonomial {
        let mut v = QuarticMonomial::zeros();
        for (e, c) in &self.terms {
            let idx = QUARTIC_EXPONENTS.iter().position(|x| x == e);
            match idx {
                Some(k) => v[k] += c,
                None => assert!(c.abs() < 1e-12, "polynomial is not a homogeneous quartic"),
            }
        }
        v
    }

    pub fn from_quartic(c: &QuarticMonomial) -> Poly {
        let mut p = Poly::default();
        for (k, e) in QUARTIC_EXPONENTS.iter().enumerate() {
            p.add_term(*e, c[k]);
        }
        p
    }
}

fn double_factorial(n: i64) -> f64 {
    let mut r = 1.0;
    let mut k = n;
    while k > 1 {
        r *= k as f64;
        k -= 2;
    }
    r
}

/// `∫_{S²} x^a y^b z^c dA` in closed form.
pub fn sphere_monomial_integral(e: [u8; 3]) -> f64 {
    if e.iter().any(|x| x % 2 == 1) {
        return 0.0;
    }
    let (a, b, c) = (e[0] as i64, e[1] as i64, e[2] as i64);
    4.0 * PI * double_factorial(a - 1) * double_factorial(b - 1) * double_factorial(c - 1)
        / double_factorial(a + b + c + 1)
}

fn x() -> Poly {
    Poly::var(0)
}
fn y() -> Poly {
    Poly::var(1)
}
fn z() -> Poly {
    Poly::var(2)
}
fn r2() -> Poly {
    x().pow(2).add(&y().pow(2)).add(&z().pow(2))
}

/// Unnormalized real harmonics of one band, index `m + l`.
fn raw_band(l: usize) -> Vec<Poly> {
    let (x, y, z, r2) = (x(), y(), z(), r2());
    let xy = x.mul(&y);
    match l {
        0 => vec![Poly::constant(1.0)],
        2 => vec![
            xy.scale(-2.0),
            y.mul(&z).scale(-1.0),
            z.pow(2).scale(3.0).sub(&r2),
            x.mul(&z),
            x.pow(2).sub(&y.pow(2)),
        ],
        4 => {
            let z7r = z.pow(2).scale(7.0).sub(&r2);
            let z73r = z.pow(2).scale(7.0).sub(&r2.scale(3.0));
            vec![
                x.pow(3).mul(&y).sub(&x.mul(&y.pow(3))).scale(-4.0),
                z.mul(&x.pow(2).mul(&y).scale(3.0).sub(&y.pow(3))).scale(-1.0),
                z7r.mul(&xy).scale(-2.0),
                y.mul(&z).mul(&z73r).scale(-1.0),
                z.pow(4).scale(35.0).sub(&z.pow(2).mul(&r2).scale(30.0)).add(&r2.pow(2).scale(3.0)),
                x.mul(&z).mul(&z73r),
                z7r.mul(&x.pow(2).sub(&y.pow(2))),
                z.mul(&x.pow(3).sub(&x.mul(&y.pow(2)).scale(3.0))),
                x.pow(4).sub(&x.pow(2).mul(&y.pow(2)).scale(6.0)).add(&y.pow(4)),
            ]
        }
        _ => unreachable!(),
    }
}

/// Normalized harmonics of band `l ∈ {0, 2, 4}` as homogeneous polynomials of degree `l`.
pub fn sh_basis(l: usize) -> Vec<Poly> {
    raw_band(l)
        .into_iter()
        .map(|p| {
            let n = p.mul(&p).sphere_integral().sqrt();
            p.scale(1.0 / n)
        })
        .collect()
}

/// The 15 odeco basis functions lifted to homogeneous quartics.
pub fn odeco_basis_quartics() -> Vec<Poly> {
    let r2 = r2();
    let mut out = Vec::with_capacity(15);
    out.extend(sh_basis(0).into_iter().map(|p| p.mul(&r2.pow(2))));
    out.extend(sh_basis(2).into_iter().map(|p| p.mul(&r2)));
    out.extend(sh_basis(4));
    out
}

struct BasisTables {
    to_sh: Mat15,
    to_mono: Mat15,
    c0: f64,
}

fn basis_tables() -> &'static BasisTables {
    static T: OnceLock<BasisTables> = OnceLock::new();
    T.get_or_init(|| {
        let basis = odeco_basis_quartics();
        let mut to_sh = Mat15::zeros();
        let mut to_mono = Mat15::zeros();
        for (i, y) in basis.iter().enumerate() {
            let yq = y.to_quartic();
            to_mono.set_column(i, &yq);
            for (j, e) in QUARTIC_EXPONENTS.iter().enumerate() {
                to_sh[(i, j)] = y.mul(&Poly::monomial(1.0, *e)).sphere_integral();
            }
        }
        let mut sum4 = QuarticMonomial::zeros();
        sum4[0] = 1.0;
        sum4[10] = 1.0;
        sum4[14] = 1.0;
        let sh = to_sh * sum4;
        let c0 = sh[0] / band4(&sh).norm();
        BasisTables { to_sh, to_mono, c0 }
    })
}

/// Change of basis from monomial coefficients to odeco (harmonic) coefficients.
pub fn monomial_to_sh_matrix() -> &'static Mat15 {
    &basis_tables().to_sh
}

/// Inverse of [`monomial_to_sh_matrix`].
pub fn sh_to_monomial_matrix() -> &'static Mat15 {
    &basis_tables().to_mono
}

pub fn sh_from_monomials(c: &QuarticMonomial) -> Odeco15 {
    monomial_to_sh_matrix() * c
}

pub fn monomials_from_sh(q: &Odeco15) -> QuarticMonomial {
    sh_to_monomial_matrix() * q
}

pub fn sh_from_poly(p: &Poly) -> Odeco15 {
    sh_from_monomials(&p.to_quartic())
}

pub fn band0(q: &Odeco15) -> f64 {
    q[0]
}

pub fn band2(q: &Odeco15) -> Vector5<f64> {
    q.fixed_rows::<5>(1).into_owned()
}

pub fn band4(q: &Odeco15) -> Frame9 {
    q.fixed_rows::<9>(6).into_owned()
}

pub fn assemble(b0: f64, b2: &Vector5<f64>, b4: &Frame9) -> Odeco15 {
    let mut q = Odeco15::zeros();
    q[0] = b0;
    q.fixed_rows_mut::<5>(1).copy_from(b2);
    q.fixed_rows_mut::<9>(6).copy_from(b4);
    q
}

fn multinomial4(e: [u8; 3]) -> f64 {
    const F: [f64; 5] = [1.0, 1.0, 2.0, 6.0, 24.0];
    24.0 / (F[e[0] as usize] * F[e[1] as usize] * F[e[2] as usize])
}

/// Monomial coefficients of `(vᵀx)⁴`.
pub fn power4_monomials(v: &Vector3<f64>) -> QuarticMonomial {
    QuarticMonomial::from_fn(|k, _| {
        let e = QUARTIC_EXPONENTS[k];
        multinomial4(e) * v.x.powi(e[0] as i32) * v.y.powi(e[1] as i32) * v.z.powi(e[2] as i32)
    })
}

/// Harmonic coefficients of `(vᵀx)⁴`.
pub fn power4_sh(v: &Vector3<f64>) -> Odeco15 {
    sh_from_monomials(&power4_monomials(v))
}

/// Weights and orthonormal axes of an odeco quartic `Σ λ_i (v_iᵀx)⁴`.
#[derive(Debug, Clone, PartialEq)]
pub struct OdecoDecomposition {
    pub lambdas: Vector3<f64>,
    /// Axes as columns.
    pub axes: Matrix3<f64>,
    /// Set for the zero tensor, whose axes are arbitrary.
    pub degenerate: bool,
}

impl OdecoDecomposition {
    pub fn new(lambdas: Vector3<f64>, axes: Matrix3<f64>) -> Self {
        OdecoDecomposition { lambdas, axes, degenerate: false }
    }

    /// True when some weight is negative (permitted but unusual).
    pub fn has_negative_weight(&self) -> bool {
        self.lambdas.iter().any(|l| *l < 0.0)
    }
}

pub fn odeco_from_decomposition(d: &OdecoDecomposition) -> Result<Odeco15> {
    let defect = (d.axes.transpose() * d.axes - Matrix3::identity()).norm();
    if defect > 1e-8 {
        return Err(Error::AxesNotOrthonormal(defect));
    }
    Ok(odeco_from_parts(&d.lambdas, &d.axes))
}

/// Unchecked construction of `Σ λ_i (v_iᵀx)⁴`.
pub fn odeco_from_parts(lambdas: &Vector3<f64>, axes: &Matrix3<f64>) -> Odeco15 {
    let mut m = QuarticMonomial::zeros();
    for i in 0..3 {
        m += power4_monomials(&axes.column(i).into_owned()) * lambdas[i];
    }
    sh_from_monomials(&m)
}

/// Band-0 coefficient of the lifted canonical frame.
pub fn octa_band0_constant() -> f64 {
    basis_tables().c0
}

/// Embeds an octahedral frame in the odeco space.
pub fn octa_to_odeco(q: &Frame9) -> Result<Odeco15> {
    let res = crate::varieties::builtin().octa.residual_octa(q);
    if res > 1e-6 || (q.norm() - 1.0).abs() > 1e-6 {
        return Err(Error::NotOnVariety(res));
    }
    Ok(octa_to_odeco_unchecked(q))
}

pub fn octa_to_odeco_unchecked(q: &Frame9) -> Odeco15 {
    assemble(octa_band0_constant(), &Vector5::zeros(), q)
}

fn eval_mono(c: &QuarticMonomial, u: &Vector3<f64>) -> f64 {
    let mut s = 0.0;
    for (k, e) in QUARTIC_EXPONENTS.iter().enumerate() {
        s += c[k] * u.x.powi(e[0] as i32) * u.y.powi(e[1] as i32) * u.z.powi(e[2] as i32);
    }
    s
}

fn grad_mono(c: &QuarticMonomial, u: &Vector3<f64>) -> Vector3<f64> {
    let mut g = Vector3::zeros();
    let p = |v: f64, k: u8| if k == 0 { 1.0 } else { v.powi(k as i32) };
    for (k, e) in QUARTIC_EXPONENTS.iter().enumerate() {
        let [a, b, cc] = *e;
        if a > 0 {
            g.x += c[k] * a as f64 * p(u.x, a - 1) * p(u.y, b) * p(u.z, cc);
        }
        if b > 0 {
            g.y += c[k] * b as f64 * p(u.x, a) * p(u.y, b - 1) * p(u.z, cc);
        }
        if cc > 0 {
            g.z += c[k] * cc as f64 * p(u.x, a) * p(u.y, b) * p(u.z, cc - 1);
        }
    }
    g
}

/// Frobenius norm of the symmetric tensor with the given monomial coefficients.
fn tensor_fro(c: &QuarticMonomial) -> f64 {
    QUARTIC_EXPONENTS
        .iter()
        .enumerate()
        .map(|(k, e)| c[k] * c[k] / multinomial4(*e))
        .sum::<f64>()
        .sqrt()
}

/// Shifted symmetric power iteration for one extremal eigenpair; `sign` selects max or min.
fn power_iterate(c: &QuarticMonomial, start: &Vector3<f64>, sign: f64, max_iter: usize) -> Option<(Vector3<f64>, f64)> {
    let alpha = 3.0 * tensor_fro(c) + 1e-300;
    let mut u = start.normalize();
    let mut shifted = true;
    for _ in 0..max_iter {
        let g = grad_mono(c, &u) * (0.25 * sign) + u * if shifted { alpha } else { 0.0 };
        let n = g.norm();
        if n < 1e-300 {
            return None;
        }
        let mut next = g / n;
        if next.dot(&u) < 0.0 {
            next = -next;
        }
        let step = (next - u).norm();
        u = next;
        if step < 1e-12 {
            return Some((u, eval_mono(c, &u)));
        }
        if shifted && step < 1e-4 {
            shifted = false;
        }
    }
    None
}

/// Recovers `(λ_i, v_i)` from odeco coefficients by power iteration with deflation.
pub fn tensor_decompose(q: &Odeco15, max_iter: usize, tol: f64) -> Result<OdecoDecomposition> {
    let nq = q.norm();
    if nq < 1e-14 {
        return Ok(OdecoDecomposition { lambdas: Vector3::zeros(), axes: Matrix3::identity(), degenerate: true });
    }
    let res = crate::varieties::builtin().odeco.residual(q.as_slice()) / (nq * nq);
    if res > 1e-6 {
        return Err(Error::NotOdeco(res));
    }
    let orig = monomials_from_sh(q);
    let mut work = orig;
    let mut rng = ChaCha8Rng::seed_from_u64(0x0dec0);
    let starts: Vec<Vector3<f64>> = (0..8)
        .map(|_| Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let full = tensor_fro(&orig);
    let mut found: Vec<Vector3<f64>> = Vec::new();
    for _ in 0..3 {
        if tensor_fro(&work) < 1e-11 * full {
            break;
        }
        let mut best: Option<(Vector3<f64>, f64)> = None;
        for sign in [1.0, -1.0] {
            for s in &starts {
                let mut u = *s;
                for f in &found {
                    u -= f * f.dot(&u);
                }
                if u.norm() < 1e-8 {
                    continue;
                }
                if let Some((v, lam)) = power_iterate(&work, &u, sign, max_iter) {
                    if best.as_ref().map_or(true, |b| lam.abs() > b.1.abs() + 1e-14) {
                        best = Some((v, lam));
                    }
                }
            }
        }
        let (v, lam) = best.ok_or_else(|| Error::NoConvergence("power iteration".into()))?;
        work -= power4_monomials(&v) * lam;
        found.push(v);
    }
    complete_basis(&mut found);
    let v = Matrix3::from_columns(&[found[0], found[1], found[2]]);
    let svd = v.svd(true, true);
    let mut axes = svd.u.unwrap() * svd.v_t.unwrap();
    if axes.determinant() < 0.0 {
        let c = -axes.column(2);
        axes.set_column(2, &c);
    }
    let lambdas = Vector3::from_fn(|i, _| eval_mono(&orig, &axes.column(i).into_owned()));
    let d = OdecoDecomposition::new(lambdas, axes);
    let err = (odeco_from_parts(&d.lambdas, &d.axes) - q).norm();
    if err > tol * nq.max(1.0) {
        return Err(Error::NoConvergence(format!("reconstruction error {err:.3e}")));
    }
    Ok(d)
}

fn complete_basis(found: &mut Vec<Vector3<f64>>) {
    let mut k = 0;
    while found.len() < 3 {
        let mut e = Vector3::zeros();
        e[k] = 1.0;
        for f in found.iter() {
            e -= f * f.dot(&e);
        }
        if e.norm() > 0.5 {
            found.push(e.normalize());
        }
        k += 1;
    }
}

/// Full symmetric 3×3×3×3 tensor of a quartic, flattened as `[a][b][c][d]`.
pub fn tensor_entries(c: &QuarticMonomial) -> [f64; 81] {
    let mut t = [0.0; 81];
    for a in 0..3 {
        for b in 0..3 {
            for cc in 0..3 {
                for d in 0..3 {
                    let mut e = [0u8; 3];
                    for i in [a, b, cc, d] {
                        e[i] += 1;
                    }
                    let k = QUARTIC_EXPONENTS.iter().position(|x| *x == e).unwrap();
                    t[((a * 3 + b) * 3 + cc) * 3 + d] = c[k] / multinomial4(e);
                }
            }
        }
    }
    t
}

/// Least-squares odeco approximation of arbitrary coefficients.
///
/// Axes come from the eigenvectors of a fixed generic contraction of the
/// tensor (exact for odeco input); weights are then fitted by least squares.
pub fn approx_odeco_fit(q: &Odeco15) -> OdecoDecomposition {
    let t = tensor_entries(&monomials_from_sh(q));
    let w = Matrix3::new(1.0, 0.31, 0.17, 0.31, 2.3, 0.23, 0.17, 0.23, 3.7);
    let mut m = Matrix3::zeros();
    for a in 0..3 {
        for b in 0..3 {
            let mut s = 0.0;
            for c in 0..3 {
                for d in 0..3 {
                    s += t[((a * 3 + b) * 3 + c) * 3 + d] * w[(c, d)];
                }
            }
            m[(a, b)] = s;
        }
    }
    let m = (m + m.transpose()) * 0.5;
    let mut axes = m.symmetric_eigen().eigenvectors;
    if axes.determinant() < 0.0 {
        let c = -axes.column(2);
        axes.set_column(2, &c);
    }
    let lambdas = fit_weights(q, &axes);
    OdecoDecomposition::new(lambdas, axes)
}

/// Least-squares weights `λ` minimizing `‖Σ λ_i SH((v_iᵀx)⁴) − q‖`.
pub fn fit_weights(q: &Odeco15, axes: &Matrix3<f64>) -> Vector3<f64> {
    let p: [Odeco15; 3] = std::array::from_fn(|i| power4_sh(&axes.column(i).into_owned()));
    let g = Matrix3::from_fn(|i, j| p[i].dot(&p[j]));
    let r = Vector3::from_fn(|i, _| p[i].dot(q));
    g.lu().solve(&r).unwrap_or_else(Vector3::zeros)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{q0, wigner_odeco_from_rotation};

    #[test]
    fn sphere_integrals() {
        assert!((sphere_monomial_integral([0, 0, 0]) - 4.0 * PI).abs() < 1e-14);
        assert!((sphere_monomial_integral([2, 0, 0]) - 4.0 * PI / 3.0).abs() < 1e-14);
        assert!((sphere_monomial_integral([2, 2, 0]) - 4.0 * PI / 15.0).abs() < 1e-14);
        assert_eq!(sphere_monomial_integral([1, 1, 0]), 0.0);
    }

    #[test]
    fn basis_is_orthonormal() {
        let b = odeco_basis_quartics();
        for i in 0..15 {
            for j in 0..15 {
                let ip = b[i].mul(&b[j]).sphere_integral();
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((ip - e).abs() < 1e-12, "({i},{j}) = {ip}");
            }
        }
    }

    #[test]
    fn roundtrip_and_inverse() {
        let a = monomial_to_sh_matrix();
        let b = sh_to_monomial_matrix();
        assert!((a * b - Mat15::identity()).norm() < 1e-12);
        assert!((b * a - Mat15::identity()).norm() < 1e-12);
    }

    #[test]
    fn canonical_from_sum_of_fourth_powers() {
        let q = odeco_from_parts(&Vector3::new(1.0, 1.0, 1.0), &Matrix3::identity());
        assert!(band2(&q).norm() < 1e-12);
        assert!((band4(&q).normalize() - q0()).norm() < 1e-10);
    }

    #[test]
    fn radial_quartic_is_pure_band0() {
        let q = sh_from_poly(&r2().pow(2));
        assert!(band2(&q).norm() < 1e-12);
        assert!(band4(&q).norm() < 1e-12);
        assert!((q[0] - (4.0 * PI).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rank_one_matches_x4() {
        let mut l = Vector3::zeros();
        l[0] = 1.0;
        let q = odeco_from_parts(&l, &Matrix3::identity());
        assert!((q - sh_from_poly(&x().pow(4))).norm() < 1e-13);
    }

    #[test]
    fn rejects_non_orthonormal_axes() {
        let d = OdecoDecomposition::new(Vector3::new(1.0, 1.0, 1.0), Matrix3::identity() * 2.0);
        assert!(matches!(odeco_from_decomposition(&d), Err(Error::AxesNotOrthonormal(_))));
    }

    #[test]
    fn rotation_equivariance() {
        let r = crate::so3::rotation_from_coeffs(&Vector3::new(0.3, 1.2, -0.4));
        let lam = Vector3::new(2.0, -0.5, 1.0);
        let a = odeco_from_parts(&lam, &(r * Matrix3::identity()));
        let b = wigner_odeco_from_rotation(&r).unwrap() * odeco_from_parts(&lam, &Matrix3::identity());
        assert!((a - b).norm() < 1e-10);
    }

    #[test]
    fn decompose_distinct_weights() {
        let q = odeco_from_parts(&Vector3::new(3.0, 2.0, 1.0), &Matrix3::identity());
        let d = tensor_decompose(&q, 2000, 1e-9).unwrap();
        let mut lam: Vec<f64> = d.lambdas.iter().copied().collect();
        lam.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!((lam[0] - 3.0).abs() < 1e-9 && (lam[1] - 2.0).abs() < 1e-9 && (lam[2] - 1.0).abs() < 1e-9);
        for i in 0..3 {
            let c = d.axes.column(i);
            assert!(c.iter().filter(|v| v.abs() > 1e-6).count() == 1);
        }
    }

    #[test]
    fn decompose_octahedral_and_zero() {
        let q = octa_to_odeco_unchecked(&q0());
        let d = tensor_decompose(&q, 2000, 1e-9).unwrap();
        assert!((d.lambdas.max() - d.lambdas.min()).abs() < 1e-9);
        let z = tensor_decompose(&Odeco15::zeros(), 100, 1e-9).unwrap();
        assert!(z.degenerate && z.lambdas == Vector3::zeros());
    }

    #[test]
    fn compose_linear_rotates() {
        let r = crate::so3::rotation_from_coeffs(&Vector3::new(0.2, 0.1, 0.5));
        let p = x().pow(4);
        let pr = p.compose_linear(&r.transpose());
        let pt = Vector3::new(0.3, -0.2, 0.9);
        assert!((pr.eval(&(r * pt)) - p.eval(&pt)).abs() < 1e-12);
    }
}
