//! Rotation-group machinery: Lie algebra generators, Wigner matrices for the
//! band-2 and band-4 real spherical harmonics, the canonical octahedral frame,
//! the octahedral group and closed-form geodesics on the octahedral variety.
//!
//! Conventions. A coefficient vector `v ∈ R³` names the rotation `exp(v·l)`
//! with the generators `l₁, l₂, l₃` below. Because `l₁ = −J₁`, `l₂ = J₂`,
//! `l₃ = −J₃` (with `J_i x = e_i × x`), `exp(v·l)` is the geometric rotation by
//! `‖v‖` about the axis `(−v₁, v₂, −v₃)`; [`axis_to_coeffs`] converts.
//! Rotations act on functions by `(ρ(R)f)(x) = f(Rᵀx)`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};

pub type Frame9 = SVector<f64, 9>;
pub type Mat9 = SMatrix<f64, 9, 9>;
pub type Mat5 = SMatrix<f64, 5, 5>;
pub type Mat15 = SMatrix<f64, 15, 15>;

/// Scale between the unit-norm octahedral variety and the isometric embedding.
pub const ALPHA: f64 = 0.387_298_334_620_741_7; // sqrt(3/20)
/// Squared norm of `L_i q` for any unit `q` on the octahedral variety.
pub const OCTA_TANGENT_GRAM: f64 = 20.0 / 3.0;

/// Infinitesimal rotations about the coordinate axes.
#[derive(Debug, Clone)]
pub struct LieGenerators {
    pub l: [Matrix3<f64>; 3],
}

/// Images of the Lie algebra generators on a harmonic band.
#[derive(Debug, Clone)]
pub struct BandGenerators {
    pub band: usize,
    pub l: [DMatrix<f64>; 3],
}

/// The canonical octahedral frame.
#[derive(Debug, Clone)]
pub struct CanonicalFrame {
    pub q0: Frame9,
    pub alpha: f64,
}

/// The 24 rotations preserving the coordinate axes up to sign.
#[derive(Debug, Clone)]
pub struct OctahedralGroup {
    pub elements: Vec<Matrix3<f64>>,
}

pub fn lie_generators() -> LieGenerators {
    LieGenerators {
        l: [
            Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0),
            Matrix3::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0),
            Matrix3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0),
        ],
    }
}

/// Converts a geometric rotation axis (scaled by the angle) to generator coefficients.
/// The map is an involution, so it also converts back.
#[inline]
pub fn axis_to_coeffs(a: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(-a.x, a.y, -a.z)
}

fn skew_fill<const D: usize>(entries: &[(usize, usize, f64)]) -> SMatrix<f64, D, D> {
    let mut m = SMatrix::<f64, D, D>::zeros();
    for &(i, j, v) in entries {
        m[(i, j)] = v;
        m[(j, i)] = -v;
    }
    m
}

struct Tables {
    g2: [Mat5; 3],
    g4: [Mat9; 3],
    r23_2: Mat5,
    r23_4: Mat9,
}

fn tables() -> &'static Tables {
    static T: OnceLock<Tables> = OnceLock::new();
    T.get_or_init(|| {
        let s2 = 2f64.sqrt();
        let s3 = 3f64.sqrt();
        let s72 = 3.5f64.sqrt();
        let s10 = 10f64.sqrt();
        let g4 = [
            skew_fill::<9>(&[
                (0, 7, -s2),
                (1, 6, -s72),
                (1, 8, -s2),
                (2, 5, -3.0 / s2),
                (2, 7, -s72),
                (3, 4, -s10),
                (3, 6, -3.0 / s2),
            ]),
            skew_fill::<9>(&[
                (0, 1, s2),
                (1, 2, s72),
                (2, 3, 3.0 / s2),
                (4, 5, -s10),
                (5, 6, -3.0 / s2),
                (6, 7, -s72),
                (7, 8, -s2),
            ]),
            skew_fill::<9>(&[(0, 8, 4.0), (1, 7, 3.0), (2, 6, 2.0), (3, 5, 1.0)]),
        ];
        let g2 = [
            skew_fill::<5>(&[(0, 3, -1.0), (1, 2, -s3), (1, 4, -1.0)]),
            skew_fill::<5>(&[(0, 1, 1.0), (2, 3, -s3), (3, 4, -1.0)]),
            skew_fill::<5>(&[(0, 4, 2.0), (1, 3, 1.0)]),
        ];
        let half_pi = std::f64::consts::FRAC_PI_2;
        let r23_2 = expm(&(g2[0] * half_pi));
        let r23_4 = expm(&(g4[0] * half_pi));
        Tables { g2, g4, r23_2, r23_4 }
    })
}

/// Matrix exponential by scaling and squaring with a Taylor kernel.
pub fn expm<const D: usize>(a: &SMatrix<f64, D, D>) -> SMatrix<f64, D, D> {
    let norm = a.norm();
    let mut s = 0;
    while norm / f64::from(1u32 << s) > 0.25 {
        s += 1;
    }
    let b = a / f64::from(1u32 << s);
    let mut term = SMatrix::<f64, D, D>::identity();
    let mut sum = term;
    for k in 1..=18 {
        term = term * b / k as f64;
        sum += term;
    }
    for _ in 0..s {
        sum = sum * sum;
    }
    sum
}

/// Band-4 generators `L₁, L₂, L₃` (9×9).
pub fn band4_generators() -> &'static [Mat9; 3] {
    &tables().g4
}

/// Band-2 generators `L₁, L₂, L₃` (5×5).
pub fn band2_generators() -> &'static [Mat5; 3] {
    &tables().g2
}

/// Odeco generators `0 ⊕ L_i⁽²⁾ ⊕ L_i⁽⁴⁾` (15×15).
pub fn odeco_generators() -> &'static [Mat15; 3] {
    static G: OnceLock<[Mat15; 3]> = OnceLock::new();
    G.get_or_init(|| {
        let mk = |i: usize| {
            let mut m = Mat15::zeros();
            m.fixed_view_mut::<5, 5>(1, 1).copy_from(&band2_generators()[i]);
            m.fixed_view_mut::<9, 9>(6, 6).copy_from(&band4_generators()[i]);
            m
        };
        [mk(0), mk(1), mk(2)]
    })
}

/// `R₂₃ = exp((π/2)L₁)` on band 4.
pub fn r23_band4() -> &'static Mat9 {
    &tables().r23_4
}

/// `R₂₃ = exp((π/2)L₁)` on band 2.
pub fn r23_band2() -> &'static Mat5 {
    &tables().r23_2
}

/// Band generators as dynamic matrices; `band` must be 2 or 4.
pub fn band_generators(band: usize) -> Result<BandGenerators> {
    let to_dyn = |m: &dyn Fn(usize) -> DMatrix<f64>| [m(0), m(1), m(2)];
    match band {
        2 => Ok(BandGenerators {
            band,
            l: to_dyn(&|i| DMatrix::from_column_slice(5, 5, band2_generators()[i].as_slice())),
        }),
        4 => Ok(BandGenerators {
            band,
            l: to_dyn(&|i| DMatrix::from_column_slice(9, 9, band4_generators()[i].as_slice())),
        }),
        _ => Err(Error::InvalidInput(format!("unsupported band {band}"))),
    }
}

pub fn canonical_frame() -> CanonicalFrame {
    CanonicalFrame { q0: q0(), alpha: ALPHA }
}

/// `q0 = (0,0,0,0,√(7/12),0,0,0,√(5/12))`.
pub fn q0() -> Frame9 {
    let mut q = Frame9::zeros();
    q[4] = (7.0f64 / 12.0).sqrt();
    q[8] = (5.0f64 / 12.0).sqrt();
    q
}

/// `exp(θL₃)` on a band of dimension `D = 2l+1`, in closed form.
pub fn wigner_z_fixed<const D: usize>(theta: f64) -> SMatrix<f64, D, D> {
    let l = (D - 1) / 2;
    let mut m = SMatrix::<f64, D, D>::zeros();
    m[(l, l)] = 1.0;
    for k in 0..l {
        let a = (l - k) as f64 * theta;
        let (s, c) = a.sin_cos();
        let j = D - 1 - k;
        m[(k, k)] = c;
        m[(j, j)] = c;
        m[(k, j)] = s;
        m[(j, k)] = -s;
    }
    m
}

/// `exp(θL₃)` for band 2 or 4.
pub fn wigner_z(band: usize, theta: f64) -> Result<DMatrix<f64>> {
    match band {
        2 => Ok(to_dyn(&wigner_z_fixed::<5>(theta))),
        4 => Ok(to_dyn(&wigner_z_fixed::<9>(theta))),
        _ => Err(Error::InvalidInput(format!("unsupported band {band}"))),
    }
}

fn to_dyn<const D: usize>(m: &SMatrix<f64, D, D>) -> DMatrix<f64> {
    DMatrix::from_column_slice(D, D, m.as_slice())
}

fn wigner_axis_angle_fixed<const D: usize>(v: &Vector3<f64>, r23: &SMatrix<f64, D, D>) -> SMatrix<f64, D, D> {
    let a = v.norm();
    if a == 0.0 {
        return SMatrix::<f64, D, D>::identity();
    }
    let u = v / a;
    let theta = u.y.atan2(u.x);
    let phi = u.z.clamp(-1.0, 1.0).acos();
    let rho_r = r23.transpose() * wigner_z_fixed::<D>(-phi) * r23 * wigner_z_fixed::<D>(-theta);
    rho_r.transpose() * wigner_z_fixed::<D>(a) * rho_r
}

/// Band-4 Wigner matrix of `exp(v·l)`.
pub fn wigner4(v: &Vector3<f64>) -> Mat9 {
    wigner_axis_angle_fixed::<9>(v, r23_band4())
}

/// Band-2 Wigner matrix of `exp(v·l)`.
pub fn wigner2(v: &Vector3<f64>) -> Mat5 {
    wigner_axis_angle_fixed::<5>(v, r23_band2())
}

/// Block-diagonal `ρ₀ ⊕ ρ₂ ⊕ ρ₄` of `exp(v·l)` acting on odeco coefficients.
pub fn wigner_odeco(v: &Vector3<f64>) -> Mat15 {
    let mut m = Mat15::zeros();
    m[(0, 0)] = 1.0;
    m.fixed_view_mut::<5, 5>(1, 1).copy_from(&wigner2(v));
    m.fixed_view_mut::<9, 9>(6, 6).copy_from(&wigner4(v));
    m
}

/// `ρ(exp(v·l))` for band 2 or 4.
pub fn wigner_from_axis_angle(band: usize, v: &Vector3<f64>) -> Result<DMatrix<f64>> {
    match band {
        2 => Ok(to_dyn(&wigner2(v))),
        4 => Ok(to_dyn(&wigner4(v))),
        _ => Err(Error::InvalidInput(format!("unsupported band {band}"))),
    }
}

/// The 3×3 rotation `exp(v·l)` (Rodrigues).
pub fn rotation_from_coeffs(v: &Vector3<f64>) -> Matrix3<f64> {
    let g = lie_generators();
    let k = g.l[0] * v.x + g.l[1] * v.y + g.l[2] * v.z;
    let a = v.norm();
    if a < 1e-300 {
        return Matrix3::identity();
    }
    let (s, c) = a.sin_cos();
    Matrix3::identity() + k * (s / a) + k * k * ((1.0 - c) / (a * a))
}

fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    let defect = (r.transpose() * r - Matrix3::identity()).norm();
    let det = r.determinant();
    if defect > 1e-8 || det <= 0.0 {
        return Err(Error::NotARotation { defect, det });
    }
    Ok(())
}

/// Generator coefficients `v` with `exp(v·l) = R`.
pub fn coeffs_from_rotation(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    check_rotation(r)?;
    let skew = (r - r.transpose()) * 0.5;
    let sin = Vector3::new(skew[(2, 1)], skew[(0, 2)], skew[(1, 0)]).norm();
    // atan2 keeps full precision near 0 and π, where acos does not.
    let omega = sin.atan2((r.trace() - 1.0) / 2.0);
    let k = if omega < 1e-6 {
        skew * (1.0 + omega * omega / 6.0)
    } else if omega > std::f64::consts::PI - 1e-6 {
        let sym = (r + r.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let imax = eig.eigenvalues.imax();
        let mut a: Vector3<f64> = eig.eigenvectors.column(imax).into_owned();
        let hint = Vector3::new(skew[(2, 1)], skew[(0, 2)], skew[(1, 0)]);
        let sign_ref = if hint.norm() > 1e-14 { hint.dot(&a) } else { first_nonzero(&a) };
        if sign_ref < 0.0 {
            a = -a;
        }
        a.cross_matrix() * omega
    } else {
        skew * (omega / omega.sin())
    };
    Ok(Vector3::new(k[(1, 2)], k[(0, 2)], k[(0, 1)]))
}

fn first_nonzero(a: &Vector3<f64>) -> f64 {
    a.iter().copied().find(|x| x.abs() > 1e-12).unwrap_or(1.0)
}

/// `ρ(R)` for band 2 or 4.
pub fn wigner_from_rotation(band: usize, r: &Matrix3<f64>) -> Result<DMatrix<f64>> {
    wigner_from_axis_angle(band, &coeffs_from_rotation(r)?)
}

/// Band-4 Wigner matrix of a 3×3 rotation.
pub fn wigner4_from_rotation(r: &Matrix3<f64>) -> Result<Mat9> {
    Ok(wigner4(&coeffs_from_rotation(r)?))
}

/// Odeco (`ρ₀ ⊕ ρ₂ ⊕ ρ₄`) Wigner matrix of a 3×3 rotation.
pub fn wigner_odeco_from_rotation(r: &Matrix3<f64>) -> Result<Mat15> {
    Ok(wigner_odeco(&coeffs_from_rotation(r)?))
}

/// Deterministic rotation taking `e_z` to `n`.
pub fn rotation_taking_z_to(n: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let norm = n.norm();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::NotUnit(norm));
    }
    let z = Vector3::z();
    let c = z.dot(n);
    if c < -1.0 + 1e-9 {
        return Ok(Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0));
    }
    let w = z.cross(n);
    let k = w.cross_matrix();
    Ok(Matrix3::identity() + k + k * k / (1.0 + c))
}

/// Closure of the quarter turns about the coordinate axes.
pub fn octahedral_group() -> Result<OctahedralGroup> {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let gens: Vec<Matrix3<f64>> = (0..3)
        .map(|i| {
            let mut v = Vector3::zeros();
            v[i] = half_pi;
            rotation_from_coeffs(&v).map(|x| x.round())
        })
        .collect();
    let mut elements = vec![Matrix3::identity()];
    let mut frontier = elements.clone();
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for a in &frontier {
            for g in &gens {
                let p = g * a;
                if !elements.iter().any(|e| (e - p).norm() < 1e-8) {
                    elements.push(p);
                    next.push(p);
                }
            }
        }
        frontier = next;
        if elements.len() > 24 {
            break;
        }
    }
    if elements.len() != 24 {
        return Err(Error::NoConvergence(format!(
            "octahedral group closure has {} elements",
            elements.len()
        )));
    }
    Ok(OctahedralGroup { elements })
}

/// `H = (1/24) Σ_o ρ(o)` on band 4.
pub fn group_average_projector() -> Result<Mat9> {
    let group = octahedral_group()?;
    let mut h = Mat9::zeros();
    for g in &group.elements {
        h += wigner4_from_rotation(g)?;
    }
    Ok(h / 24.0)
}

/// `{L_i q}`, an orthogonal basis of the tangent space at `q`.
pub fn octa_tangent_basis(q: &Frame9) -> [Frame9; 3] {
    let g = band4_generators();
    [g[0] * q, g[1] * q, g[2] * q]
}

/// Geodesic step `ρ(exp(v·l)) q` without membership checks.
pub fn octa_exp_unchecked(q: &Frame9, v: &Vector3<f64>) -> Frame9 {
    wigner4(v) * q
}

/// Geodesic step on the octahedral variety; `v` is in generator coefficients.
pub fn octa_exp(q: &Frame9, v: &Vector3<f64>) -> Result<Frame9> {
    let norm = q.norm();
    let res = crate::varieties::builtin().octa.residual_octa(q);
    if (norm - 1.0).abs() > 1e-6 || res > 1e-6 {
        return Err(Error::NotOnVariety(res.max((norm - 1.0).abs())));
    }
    Ok(octa_exp_unchecked(q, v))
}

/// Frame with axes given by the columns of `r`: `ρ(r) q0`.
pub fn frame_from_rotation(r: &Matrix3<f64>) -> Result<Frame9> {
    Ok(wigner4_from_rotation(r)? * q0())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn comm<const D: usize>(a: &SMatrix<f64, D, D>, b: &SMatrix<f64, D, D>) -> SMatrix<f64, D, D> {
        a * b - b * a
    }

    #[test]
    fn lie_commutators() {
        let l = lie_generators().l;
        assert!((l[0] * l[1] - l[1] * l[0] - l[2]).norm() < 1e-14);
        assert!((l[1] * l[2] - l[2] * l[1] - l[0]).norm() < 1e-14);
        assert!((l[2] * l[0] - l[0] * l[2] - l[1]).norm() < 1e-14);
    }

    #[test]
    fn band_commutators() {
        let g = band4_generators();
        for (a, b, c) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
            assert!((comm(&g[a], &g[b]) - g[c]).norm() < 1e-12);
        }
        let g = band2_generators();
        for (a, b, c) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
            assert!((comm(&g[a], &g[b]) - g[c]).norm() < 1e-12);
        }
    }

    #[test]
    fn generators_skew_and_corners() {
        for m in band4_generators() {
            assert_eq!(m + m.transpose(), Mat9::zeros());
        }
        let l3 = &band4_generators()[2];
        assert_eq!(l3[(0, 8)], 4.0);
        assert_eq!(l3[(8, 0)], -4.0);
    }

    #[test]
    fn r23_supplement_entry() {
        let r = r23_band4();
        assert!((r[(0, 5)] - 3.5f64.sqrt() / 2.0).abs() < 1e-13);
        assert!((r.transpose() * r - Mat9::identity()).norm() < 1e-13);
    }

    #[test]
    fn wigner_z_matches_expm_and_eq13() {
        for &t in &[0.0, 0.3, -1.1, 2.5] {
            let closed = wigner_z_fixed::<9>(t);
            let num = expm(&(band4_generators()[2] * t));
            assert!((closed - num).norm() < 1e-13);
            let q = closed * q0();
            let s5 = (5.0f64 / 12.0).sqrt();
            let expect = Frame9::from_column_slice(&[
                s5 * (4.0 * t).sin(),
                0.0,
                0.0,
                0.0,
                (7.0f64 / 12.0).sqrt(),
                0.0,
                0.0,
                0.0,
                s5 * (4.0 * t).cos(),
            ]);
            assert!((q - expect).norm() < 1e-12);
        }
        let closed2 = wigner_z_fixed::<5>(0.7);
        assert!((closed2 - expm(&(band2_generators()[2] * 0.7))).norm() < 1e-13);
    }

    #[test]
    fn axis_angle_matches_expm() {
        let v = Vector3::new(0.3, -0.8, 0.45);
        let g = band4_generators();
        let direct = expm(&(g[0] * v.x + g[1] * v.y + g[2] * v.z));
        assert!((wigner4(&v) - direct).norm() < 1e-12);
        let g = band2_generators();
        let direct = expm(&(g[0] * v.x + g[1] * v.y + g[2] * v.z));
        assert!((wigner2(&v) - direct).norm() < 1e-12);
    }

    #[test]
    fn axis_angle_along_z() {
        let w = wigner4(&Vector3::new(0.0, 0.0, 0.37));
        assert!((w - wigner_z_fixed::<9>(0.37)).norm() < 1e-12);
    }

    #[test]
    fn group_has_24_signed_permutations() {
        let g = octahedral_group().unwrap();
        assert_eq!(g.elements.len(), 24);
        assert!(g.elements.iter().any(|e| *e == Matrix3::identity()));
        for e in &g.elements {
            assert!((e.determinant() - 1.0).abs() < 1e-12);
            assert!(e.iter().all(|x| *x == 0.0 || x.abs() == 1.0));
        }
    }

    #[test]
    fn projector_is_q0_q0t() {
        let h = group_average_projector().unwrap();
        let q = q0();
        assert!((h - q * q.transpose()).norm() < 1e-10);
        assert!((h * h - h).norm() < 1e-10);
    }

    #[test]
    fn rotation_taking_z() {
        assert_eq!(rotation_taking_z_to(&Vector3::z()).unwrap(), Matrix3::identity());
        let r = rotation_taking_z_to(&-Vector3::z()).unwrap();
        assert_eq!(r, Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0));
        let r = rotation_taking_z_to(&Vector3::x()).unwrap();
        assert!((r * Vector3::z() - Vector3::x()).norm() < 1e-12);
        assert!(matches!(rotation_taking_z_to(&Vector3::new(1.0, 1.0, 0.0)), Err(Error::NotUnit(_))));
    }

    #[test]
    fn coeffs_roundtrip_including_half_turn() {
        for v in [
            Vector3::new(0.1, 0.2, -0.3),
            Vector3::new(0.0, 0.0, 1e-9),
            Vector3::new(std::f64::consts::PI, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 1.0).normalize() * std::f64::consts::PI,
        ] {
            let r = rotation_from_coeffs(&v);
            let back = coeffs_from_rotation(&r).unwrap();
            assert!((rotation_from_coeffs(&back) - r).norm() < 1e-9);
        }
    }

    #[test]
    fn rotation_from_coeffs_geometric_axis() {
        // exp(v·l) rotates about the geometric axis (-v1, v2, -v3)
        let v = Vector3::new(0.4, -0.2, 0.9);
        let r = rotation_from_coeffs(&v);
        let axis = axis_to_coeffs(&v);
        assert!((r * axis - axis).norm() < 1e-12);
    }

    #[test]
    fn not_a_rotation() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(matches!(coeffs_from_rotation(&m), Err(Error::NotARotation { .. })));
    }

    #[test]
    fn tangent_gram() {
        let b = octa_tangent_basis(&q0());
        for i in 0..3 {
            assert!(b[i].dot(&q0()).abs() < 1e-12);
            for j in 0..3 {
                let e = if i == j { OCTA_TANGENT_GRAM } else { 0.0 };
                assert!((b[i].dot(&b[j]) - e).abs() < 1e-9);
            }
        }
    }
}
