//! Defining quadrics of the octahedral and odeco varieties, membership
//! residuals, tangent/normal spaces and the odeco retraction.
//!
//! The quadrics are derived numerically as the nullspace of the degree-2
//! monomial evaluations at sampled variety points, then frozen in
//! `data/quadrics.txt`. Matrices are orthonormal under the Frobenius product.

use std::fmt::Write as _;
use std::sync::OnceLock;

use nalgebra::{DMatrix, Matrix3, SMatrix, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::quartic::{odeco_from_parts, Odeco15};
use crate::so3::{self, Frame9, Mat15};

/// Tag naming the harmonic basis convention the quadric files refer to.
pub const SH_CONVENTION: &str = "real-sh-m-ascending-sphere-orthonormal-v1";

const EMBEDDED: &str = include_str!("../data/quadrics.txt");

/// Symmetric matrices whose quadratic forms cut out a variety.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadricSet {
    /// Ambient dimension of the points (9, 15 or 5).
    pub dim: usize,
    /// Homogeneous forms `qᵀAq`; otherwise lifted forms `(1,q)ᵀP(1,q)`.
    pub homogeneous: bool,
    pub matrices: Vec<DMatrix<f64>>,
}

impl QuadricSet {
    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    /// Side length of the stored matrices.
    pub fn side(&self) -> usize {
        if self.homogeneous {
            self.dim
        } else {
            self.dim + 1
        }
    }

    /// Maximum absolute quadric value at `q`.
    pub fn residual(&self, q: &[f64]) -> f64 {
        debug_assert_eq!(q.len(), self.dim);
        let u: Vec<f64> = if self.homogeneous {
            q.to_vec()
        } else {
            std::iter::once(1.0).chain(q.iter().copied()).collect()
        };
        self.matrices.iter().map(|a| quad_form(a, &u).abs()).fold(0.0, f64::max)
    }

    /// [`residual`](Self::residual) with a dimension check.
    pub fn checked_residual(&self, q: &[f64]) -> Result<f64> {
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: q.len() });
        }
        Ok(self.residual(q))
    }

    pub fn residual_octa(&self, q: &Frame9) -> f64 {
        self.residual(q.as_slice())
    }

    /// Largest principal angle (radians) between the spans of two sets.
    pub fn max_principal_angle(&self, other: &QuadricSet) -> f64 {
        let a = orthonormal_columns(&self.stacked_svec());
        let b = orthonormal_columns(&other.stacked_svec());
        if a.ncols() != b.ncols() {
            return std::f64::consts::FRAC_PI_2;
        }
        // sin of the largest angle = ‖(I − AAᵀ)B‖₂
        let resid = &b - &a * (a.transpose() * &b);
        resid.svd(false, false).singular_values.max().min(1.0).asin()
    }

    /// Columns are the scaled half-vectorizations of the matrices.
    pub fn stacked_svec(&self) -> DMatrix<f64> {
        let n = self.side();
        let f = n * (n + 1) / 2;
        DMatrix::from_fn(f, self.len(), |r, c| svec(&self.matrices[c])[r])
    }

    /// Smallest singular value of the stacked vectorized matrices.
    pub fn independence(&self) -> f64 {
        self.stacked_svec().svd(false, false).singular_values.min()
    }
}

fn quad_form(a: &DMatrix<f64>, u: &[f64]) -> f64 {
    let n = u.len();
    let mut s = 0.0;
    for j in 0..n {
        let col = a.column(j);
        let mut t = 0.0;
        for i in 0..n {
            t += col[i] * u[i];
        }
        s += t * u[j];
    }
    s
}

fn orthonormal_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, false);
    let u = svd.u.unwrap();
    u.columns(0, m.ncols()).into_owned()
}

/// `[u_i u_j]` features with √2 on off-diagonals, so matrices map isometrically.
fn svec_features(u: &[f64], out: &mut [f64]) {
    let s2 = std::f64::consts::SQRT_2;
    let mut k = 0;
    for i in 0..u.len() {
        for j in i..u.len() {
            out[k] = if i == j { u[i] * u[i] } else { s2 * u[i] * u[j] };
            k += 1;
        }
    }
}

fn svec(a: &DMatrix<f64>) -> Vec<f64> {
    let s2 = std::f64::consts::SQRT_2;
    let n = a.nrows();
    let mut v = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            v.push(if i == j { a[(i, i)] } else { s2 * a[(i, j)] });
        }
    }
    v
}

fn smat(w: &[f64], n: usize) -> DMatrix<f64> {
    let s2 = std::f64::consts::SQRT_2;
    let mut a = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            if i == j {
                a[(i, i)] = w[k];
            } else {
                a[(i, j)] = w[k] / s2;
                a[(j, i)] = w[k] / s2;
            }
            k += 1;
        }
    }
    a
}

/// Outcome of a nullspace derivation.
#[derive(Debug, Clone)]
pub struct Derivation {
    pub set: QuadricSet,
    pub singular_values: Vec<f64>,
    /// Ratio between the smallest non-null and the largest null singular value.
    pub gap: f64,
}

/// Uniform random rotation from a normalized Gaussian quaternion.
pub fn random_rotation<R: Rng>(rng: &mut R) -> Matrix3<f64> {
    let q = nalgebra::Quaternion::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    );
    UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

fn nullspace_derivation(rows: DMatrix<f64>, n: usize, dim: usize, homogeneous: bool) -> Result<Derivation> {
    let svd = rows.svd(false, true);
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let vt = svd.v_t.unwrap();
    let f = rows_features(n);
    let smax = sv[0];
    // columns beyond the row count are null as well
    let mut full = sv.clone();
    full.resize(f, 0.0);
    let null = full.iter().filter(|s| **s < 1e-10 * smax).count();
    if null == 0 || null == f {
        return Err(Error::DegenerateSampling(format!("nullspace dimension {null}")));
    }
    let last_non_null = full[f - null - 1];
    let first_null = full[f - null];
    let gap = if first_null > 0.0 { last_non_null / first_null } else { f64::INFINITY };
    if gap < 1e4 {
        return Err(Error::DegenerateSampling(format!("singular value gap {gap:.3e}")));
    }
    if vt.nrows() < f {
        return Err(Error::DegenerateSampling("fewer samples than features".into()));
    }
    let matrices = (f - null..f)
        .map(|r| {
            let w: Vec<f64> = vt.row(r).iter().copied().collect();
            let mut m = smat(&w, n);
            canonical_sign(&mut m);
            m
        })
        .collect();
    Ok(Derivation { set: QuadricSet { dim, homogeneous, matrices }, singular_values: full, gap })
}

fn canonical_sign(m: &mut DMatrix<f64>) {
    if let Some(x) = m.iter().find(|x| x.abs() > 1e-8) {
        if *x < 0.0 {
            *m *= -1.0;
        }
    }
}

fn rows_features(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Derives the 15 lifted octahedral quadrics from sampled rotated canonical frames.
pub fn derive_octa_quadrics(samples: usize, seed: u64) -> Result<Derivation> {
    if samples < 500 {
        return Err(Error::InvalidInput("at least 500 samples required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 10;
    let f = rows_features(n);
    let q0 = so3::q0();
    let mut rows = DMatrix::zeros(samples, f);
    let mut feat = vec![0.0; f];
    for s in 0..samples {
        let r = random_rotation(&mut rng);
        let q = so3::wigner4_from_rotation(&r)? * q0;
        let u: Vec<f64> = std::iter::once(1.0).chain(q.iter().copied()).collect();
        svec_features(&u, &mut feat);
        for (k, v) in feat.iter().enumerate() {
            rows[(s, k)] = *v;
        }
    }
    nullspace_derivation(rows, n, 9, false)
}

/// Derives the 27 homogeneous odeco quadrics from sampled odeco tensors.
pub fn derive_odeco_quadrics(samples: usize, seed: u64) -> Result<Derivation> {
    if samples < 2000 {
        return Err(Error::InvalidInput("at least 2000 samples required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 15;
    let f = rows_features(n);
    let mut rows = DMatrix::zeros(samples, f);
    let mut feat = vec![0.0; f];
    for s in 0..samples {
        let r = random_rotation(&mut rng);
        let lam = Vector3::from_fn(|_, _| rng.sample(StandardNormal));
        let q = odeco_from_parts(&lam, &r);
        svec_features(q.as_slice(), &mut feat);
        for (k, v) in feat.iter().enumerate() {
            rows[(s, k)] = *v;
        }
    }
    nullspace_derivation(rows, n, 15, true)
}

/// The three quadrics on the 5 chart coordinates of z-aligned odeco frames.
pub fn zaligned_odeco_quadrics() -> QuadricSet {
    let s2 = std::f64::consts::SQRT_2;
    let m1 = [
        [-4.0, 0.0, -3.0 * s2, 0.0, 0.0],
        [0.0, 0.0, 0.0, 18.0, 0.0],
        [-3.0 * s2, 0.0, 0.0, 0.0, 18.0],
        [0.0, 18.0, 0.0, 72.0, 0.0],
        [0.0, 0.0, 18.0, 0.0, 72.0],
    ];
    let m2 = [
        [0.0, 6.0 * s2, 0.0, 0.0, 0.0],
        [6.0 * s2, 0.0, 0.0, 0.0, 36.0],
        [0.0, 0.0, 0.0, -36.0, 0.0],
        [0.0, 0.0, -36.0, 0.0, 0.0],
        [0.0, 36.0, 0.0, 0.0, 0.0],
    ];
    let m3 = [
        [-4.0, 0.0, 3.0 * s2, 0.0, 0.0],
        [0.0, 0.0, 0.0, -18.0, 0.0],
        [3.0 * s2, 0.0, 0.0, 0.0, -18.0],
        [0.0, -18.0, 0.0, 72.0, 0.0],
        [0.0, 0.0, -18.0, 0.0, 72.0],
    ];
    let to = |m: [[f64; 5]; 5]| DMatrix::from_fn(5, 5, |i, j| m[i][j]);
    QuadricSet { dim: 5, homogeneous: true, matrices: vec![to(m1), to(m2), to(m3)] }
}

/// The quadric sets used throughout the library.
#[derive(Debug, Clone)]
pub struct QuadricLibrary {
    pub octa: QuadricSet,
    pub odeco: QuadricSet,
    pub zaligned: QuadricSet,
    /// SHA-256 of the data file body.
    pub hash: String,
    odeco_fixed: Vec<Mat15>,
}

impl QuadricLibrary {
    pub fn new(octa: QuadricSet, odeco: QuadricSet) -> Self {
        let text = serialize_body(&octa, &odeco);
        let hash = hex_digest(text.as_bytes());
        let odeco_fixed = odeco.matrices.iter().map(|m| Mat15::from_column_slice(m.as_slice())).collect();
        QuadricLibrary { octa, odeco, zaligned: zaligned_odeco_quadrics(), hash, odeco_fixed }
    }

    /// Derives both sets with default sample counts.
    pub fn derive(seed: u64) -> Result<Self> {
        let octa = derive_octa_quadrics(2000, seed)?.set;
        let odeco = derive_odeco_quadrics(5000, seed.wrapping_add(1))?.set;
        Ok(QuadricLibrary::new(octa, odeco))
    }

    /// Serialized data file including the trailing hash line.
    pub fn to_text(&self) -> String {
        let mut s = serialize_body(&self.octa, &self.odeco);
        let _ = writeln!(s, "sha256 {}", self.hash);
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        parse_library(text)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        parse_library(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// `{A_i q}` for the odeco quadrics.
    pub fn odeco_gradients(&self, q: &Odeco15) -> Vec<Odeco15> {
        self.odeco_fixed.iter().map(|a| a * q).collect()
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn serialize_body(octa: &QuadricSet, odeco: &QuadricSet) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "volframe-quadrics 1");
    let _ = writeln!(s, "convention {SH_CONVENTION}");
    for (name, set) in [("octa", octa), ("odeco", odeco)] {
        let _ = writeln!(
            s,
            "set {name} dim {} side {} homogeneous {} count {}",
            set.dim,
            set.side(),
            u8::from(set.homogeneous),
            set.len()
        );
        for m in &set.matrices {
            let n = m.nrows();
            let vals: Vec<String> =
                (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).map(|(i, j)| format!("{:e}", m[(i, j)])).collect();
            let _ = writeln!(s, "{}", vals.join(" "));
        }
    }
    s
}

fn parse_library(text: &str) -> Result<QuadricLibrary> {
    let bad = |line: usize, msg: &str| Error::Parse { line, msg: msg.to_string() };
    let lines: Vec<&str> = text.lines().collect();
    let hash_pos = lines
        .iter()
        .position(|l| l.starts_with("sha256 "))
        .ok_or_else(|| Error::QuadricData("missing hash line".into()))?;
    let mut body = String::new();
    for l in &lines[..hash_pos] {
        body.push_str(l);
        body.push('\n');
    }
    let stated = lines[hash_pos].trim_start_matches("sha256 ").trim();
    let actual = hex_digest(body.as_bytes());
    if stated != actual {
        return Err(Error::QuadricData(format!("hash mismatch: file says {stated}, content is {actual}")));
    }
    if lines.first().map(|l| l.trim()) != Some("volframe-quadrics 1") {
        return Err(bad(1, "bad magic"));
    }
    match lines.get(1).map(|l| l.trim()) {
        Some(l) if l == format!("convention {SH_CONVENTION}") => {}
        _ => return Err(Error::QuadricData("unknown harmonic convention".into())),
    }
    let mut sets: Vec<(String, QuadricSet)> = Vec::new();
    let mut i = 2;
    while i < hash_pos {
        let toks: Vec<&str> = lines[i].split_whitespace().collect();
        if toks.len() != 10 || toks[0] != "set" {
            return Err(bad(i + 1, "expected set header"));
        }
        let num = |k: usize| toks[k].parse::<usize>().map_err(|_| bad(i + 1, "bad integer"));
        let (dim, side, hom, count) = (num(3)?, num(5)?, num(7)?, num(9)?);
        let mut matrices = Vec::with_capacity(count);
        for c in 0..count {
            let ln = i + 1 + c;
            if ln >= hash_pos {
                return Err(bad(ln + 1, "truncated matrix list"));
            }
            let vals: std::result::Result<Vec<f64>, _> = lines[ln].split_whitespace().map(str::parse::<f64>).collect();
            let vals = vals.map_err(|_| bad(ln + 1, "bad number"))?;
            if vals.len() != side * (side + 1) / 2 {
                return Err(bad(ln + 1, "wrong number of entries"));
            }
            let mut m = DMatrix::zeros(side, side);
            let mut k = 0;
            for r in 0..side {
                for s in r..side {
                    m[(r, s)] = vals[k];
                    m[(s, r)] = vals[k];
                    k += 1;
                }
            }
            matrices.push(m);
        }
        sets.push((toks[1].to_string(), QuadricSet { dim, homogeneous: hom == 1, matrices }));
        i += 1 + count;
    }
    let take = |name: &str| {
        sets.iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s.clone())
            .ok_or_else(|| Error::QuadricData(format!("missing set {name}")))
    };
    let octa = take("octa")?;
    let odeco = take("odeco")?;
    if octa.len() != 15 || octa.dim != 9 || octa.homogeneous {
        return Err(Error::QuadricData("octahedral set must hold 15 lifted 10×10 matrices".into()));
    }
    if odeco.len() != 27 || odeco.dim != 15 || !odeco.homogeneous {
        return Err(Error::QuadricData("odeco set must hold 27 homogeneous 15×15 matrices".into()));
    }
    Ok(QuadricLibrary::new(octa, odeco))
}

/// The frozen quadric library shipped with the crate.
static ACTIVE: OnceLock<QuadricLibrary> = OnceLock::new();

/// The active quadric library: the installed one, or the embedded data file.
pub fn builtin() -> &'static QuadricLibrary {
    ACTIVE.get_or_init(|| match QuadricLibrary::parse(EMBEDDED) {
        Ok(lib) => lib,
        Err(e) => {
            log::warn!("embedded quadric data unusable ({e}); deriving afresh");
            QuadricLibrary::derive(DEFAULT_SEED).expect("quadric derivation failed")
        }
    })
}

/// Replaces the embedded library for this process; must precede any use of it.
pub fn install_library(lib: QuadricLibrary) -> Result<()> {
    let hash = lib.hash.clone();
    match ACTIVE.set(lib) {
        Ok(()) => Ok(()),
        Err(_) if ACTIVE.get().map(|l| &l.hash) == Some(&hash) => Ok(()),
        Err(_) => Err(Error::QuadricData("a different quadric library is already in use".into())),
    }
}

/// Seed used for the shipped quadric data.
pub const DEFAULT_SEED: u64 = 20_240_601;

/// Odeco residual using the shipped quadrics.
pub fn odeco_residual(q: &Odeco15) -> f64 {
    builtin().odeco.residual(q.as_slice())
}

/// Octahedral residual using the shipped quadrics.
pub fn octa_residual(q: &Frame9) -> f64 {
    builtin().octa.residual_octa(q)
}

/// Orthonormal bases of the normal and tangent spaces at an odeco point.
#[derive(Debug, Clone)]
pub struct OdecoSpaces {
    pub normal: Vec<Odeco15>,
    pub tangent: Vec<Odeco15>,
}

/// Generic dimension of the odeco normal space.
pub const ODECO_NORMAL_RANK: usize = 9;

/// Normal/tangent split from the SVD of `{A_i q}`; never fails.
pub fn odeco_spaces(q: &Odeco15) -> OdecoSpaces {
    let lib = builtin();
    let grads = lib.odeco_gradients(q);
    let m = SMatrix::<f64, 15, 27>::from_columns(&grads);
    let svd = m.svd(true, false);
    let u = svd.u.unwrap();
    let thr = 1e-8 * q.norm().max(1e-300);
    let mut order: Vec<usize> = (0..15).collect();
    order.sort_by(|a, b| svd.singular_values[*b].partial_cmp(&svd.singular_values[*a]).unwrap());
    let mut normal = Vec::new();
    let mut tangent = Vec::new();
    for k in order {
        let col: Odeco15 = u.column(k).into_owned();
        if svd.singular_values[k] > thr {
            normal.push(col);
        } else {
            tangent.push(col);
        }
    }
    OdecoSpaces { normal, tangent }
}

/// Orthonormal basis of the normal space `span{A_i q}`.
pub fn odeco_normal_space(q: &Odeco15) -> Result<Vec<Odeco15>> {
    let s = odeco_spaces(q);
    if s.normal.len() != ODECO_NORMAL_RANK {
        return Err(Error::SingularPoint { rank: s.normal.len(), expected: ODECO_NORMAL_RANK });
    }
    Ok(s.normal)
}

/// Rotational and scaling parts of the odeco tangent space.
#[derive(Debug, Clone)]
pub struct TangentSplit {
    pub rotational: Vec<Odeco15>,
    pub scaling: Vec<Odeco15>,
}

fn gram_schmidt(vs: &[Odeco15], tol: f64) -> Vec<Odeco15> {
    let mut out: Vec<Odeco15> = Vec::new();
    for v in vs {
        let mut w = *v;
        for _ in 0..2 {
            for o in &out {
                w -= o * o.dot(&w);
            }
        }
        let n = w.norm();
        if n > tol {
            out.push(w / n);
        }
    }
    out
}

pub fn odeco_tangent_split(q: &Odeco15) -> Result<TangentSplit> {
    let spaces = odeco_spaces(q);
    if spaces.normal.len() != ODECO_NORMAL_RANK {
        return Err(Error::SingularPoint { rank: spaces.normal.len(), expected: ODECO_NORMAL_RANK });
    }
    let gens = so3::odeco_generators();
    let rot: Vec<Odeco15> = gens.iter().map(|g| g * q).collect();
    let rotational = gram_schmidt(&rot, 1e-10 * q.norm().max(1e-300));
    let mut rest: Vec<Odeco15> = spaces
        .tangent
        .iter()
        .map(|t| {
            let mut w = *t;
            for r in &rotational {
                w -= r * r.dot(&w);
            }
            w
        })
        .collect();
    rest.sort_by(|a, b| b.norm().partial_cmp(&a.norm()).unwrap());
    let scaling = gram_schmidt(&rest, 1e-6);
    Ok(TangentSplit { rotational, scaling })
}

/// Generator coefficients and scaling remainder of a tangent vector.
pub fn split_rotational(q: &Odeco15, v: &Odeco15) -> (Vector3<f64>, Odeco15) {
    let gens = so3::odeco_generators();
    let r: [Odeco15; 3] = [gens[0] * q, gens[1] * q, gens[2] * q];
    let g = Matrix3::from_fn(|i, j| r[i].dot(&r[j]));
    let rhs = Vector3::from_fn(|i, _| r[i].dot(v));
    let c = pseudo_solve3(&g, &rhs);
    let vs = v - (r[0] * c.x + r[1] * c.y + r[2] * c.z);
    (c, vs)
}

/// Solves a symmetric PSD 3×3 system, discarding near-null directions.
pub fn pseudo_solve3(g: &Matrix3<f64>, b: &Vector3<f64>) -> Vector3<f64> {
    let eig = g.symmetric_eigen();
    let lmax = eig.eigenvalues.amax();
    let mut x = Vector3::zeros();
    for k in 0..3 {
        let l = eig.eigenvalues[k];
        if l > 1e-12 * lmax.max(1e-300) {
            let e = eig.eigenvectors.column(k);
            x += e * (e.dot(b) / l);
        }
    }
    x
}

/// `retr_q(v) = e^{v_r·L̃}(q + v_s)` without precondition checks.
pub fn odeco_retract_unchecked(q: &Odeco15, v: &Odeco15) -> Odeco15 {
    let (c, vs) = split_rotational(q, v);
    so3::wigner_odeco(&c) * (q + vs)
}

/// Odeco retraction; `v` must be tangent at the smooth point `q`.
pub fn odeco_retract(q: &Odeco15, v: &Odeco15) -> Result<Odeco15> {
    let normal = odeco_normal_space(q)?;
    let nc = normal.iter().map(|n| n.dot(v).powi(2)).sum::<f64>().sqrt();
    if nc > 1e-8 * v.norm().max(1.0) {
        return Err(Error::NotTangent(nc));
    }
    Ok(odeco_retract_unchecked(q, v))
}
