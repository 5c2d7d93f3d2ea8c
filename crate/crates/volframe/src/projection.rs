//! Projections onto the octahedral and odeco varieties.
//!
//! Unconstrained projections solve the lifted SDP and certify exactness by the
//! eigenvalue ratio of the optimal matrix. Boundary-aligned projections use a
//! closed form (octahedral) or a 6×6 SDP on chart coordinates (odeco).

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::quartic::{self, Odeco15};
use crate::sdp::{self, ConstraintSet, SdpOptions, SdpProblem, SdpStatus};
use crate::so3::{self, Frame9, Mat15, Mat9, OCTA_TANGENT_GRAM};
use crate::varieties::{self, QuadricLibrary};

/// Eigenvalue-ratio threshold below which an SDP solution is accepted as rank one.
pub const EXACT_RATIO: f64 = 1e-6;

/// Iterations of local refinement used when rank-one extraction fails.
pub const FALLBACK_ITERS: usize = 50;

/// Local descent steps applied after a certified extraction; the SDP optimum
/// only pins the minimizer to about the square root of the duality gap.
pub const POLISH_ITERS: usize = 8;

/// Result of a projection with its exactness certificate.
#[derive(Debug, Clone)]
pub struct Projection<V> {
    pub q: V,
    /// `λ₂/λ₁` of the SDP solution.
    pub ratio: f64,
    /// True when the SDP solution was certified rank one.
    pub exact: bool,
    pub status: SdpStatus,
    /// SDP optimal value; a lower bound on the squared distance.
    pub lower_bound: f64,
}

/// Shared SDP constraint sets for one quadric library.
#[derive(Debug)]
pub struct Projector {
    octa: Arc<ConstraintSet>,
    odeco: Arc<ConstraintSet>,
    zaligned: Arc<ConstraintSet>,
    pub options: SdpOptions,
}

impl Projector {
    pub fn new(lib: &QuadricLibrary) -> Result<Self> {
        Ok(Projector {
            octa: Arc::new(sdp::lifted_constraints(&lib.octa)?),
            odeco: Arc::new(sdp::lifted_constraints(&lib.odeco)?),
            zaligned: Arc::new(sdp::lifted_constraints(&lib.zaligned)?),
            options: SdpOptions::default(),
        })
    }

    pub fn octa_problem(&self, y: &Frame9) -> SdpProblem {
        SdpProblem::new(sdp::projection_cost(y.as_slice()), self.octa.clone()).expect("octahedral lift")
    }

    pub fn odeco_problem(&self, y: &Odeco15) -> SdpProblem {
        SdpProblem::new(sdp::projection_cost(y.as_slice()), self.odeco.clone()).expect("odeco lift")
    }

    pub fn project_octa(&self, y: &Frame9) -> Result<Projection<Frame9>> {
        let sol = sdp::solve(&self.octa_problem(y), &self.options);
        let r1 = sdp::rank1_extract(&sol, EXACT_RATIO);
        if let Some(q) = r1.q {
            let q = refine_octa(Frame9::from_column_slice(q.as_slice()), y, POLISH_ITERS);
            return Ok(Projection { q, ratio: r1.ratio, exact: true, status: sol.status, lower_bound: sol.primal_obj });
        }
        if sol.status == SdpStatus::NumericalFailure && r1.top.is_none() {
            return Err(Error::SolverFailure("octahedral projection SDP failed".into()));
        }
        let start = r1.top.map(|t| Frame9::from_column_slice(t.as_slice()));
        let q = octa_fallback(y, start.as_ref());
        Ok(Projection { q, ratio: r1.ratio, exact: false, status: sol.status, lower_bound: sol.primal_obj })
    }

    pub fn project_odeco(&self, y: &Odeco15) -> Result<Projection<Odeco15>> {
        let sol = sdp::solve(&self.odeco_problem(y), &self.options);
        let r1 = sdp::rank1_extract(&sol, EXACT_RATIO);
        if let Some(q) = r1.q {
            let q = refine_odeco(Odeco15::from_column_slice(q.as_slice()), y, POLISH_ITERS);
            return Ok(Projection { q, ratio: r1.ratio, exact: true, status: sol.status, lower_bound: sol.primal_obj });
        }
        if sol.status == SdpStatus::NumericalFailure && r1.top.is_none() {
            return Err(Error::SolverFailure("odeco projection SDP failed".into()));
        }
        let start = r1.top.map(|t| Odeco15::from_column_slice(t.as_slice()));
        let q = odeco_fallback(y, start.as_ref());
        Ok(Projection { q, ratio: r1.ratio, exact: false, status: sol.status, lower_bound: sol.primal_obj })
    }

    pub fn project_odeco_aligned(&self, y: &Odeco15, chart: &AlignedChartOdeco) -> Result<AlignedProjection<Odeco15>> {
        let yz = chart.rot.transpose() * y;
        let sy = chart.b_z.transpose() * (yz - chart.q_z);
        let p = SdpProblem::new(sdp::projection_cost(sy.as_slice()), self.zaligned.clone())?;
        let sol = sdp::solve(&p, &self.options);
        let r1 = sdp::rank1_extract(&sol, EXACT_RATIO);
        let (s, exact) = match r1.q {
            Some(s) => (SVector::<f64, 5>::from_column_slice(s.as_slice()), true),
            None => {
                if sol.status == SdpStatus::NumericalFailure && r1.top.is_none() {
                    log::warn!("aligned odeco SDP failed; using parametric search");
                }
                let (l1, l2, t) = zchart_search(&sy);
                (zchart_coords(l1, l2, t), false)
            }
        };
        let q = chart.refine(chart.point(&s), y, POLISH_ITERS);
        Ok(AlignedProjection { q, ratio: r1.ratio, exact, degenerate: false })
    }
}

/// Projector for the active quadric library.
pub fn projector() -> &'static Projector {
    static P: OnceLock<Projector> = OnceLock::new();
    P.get_or_init(|| Projector::new(varieties::builtin()).expect("projector construction"))
}

/// Exact (certified) projection onto the octahedral variety, with fallback.
pub fn project_octa(y: &Frame9) -> Result<Projection<Frame9>> {
    projector().project_octa(y)
}

/// Exact (certified) projection onto the odeco variety, with fallback.
pub fn project_odeco(y: &Odeco15) -> Result<Projection<Odeco15>> {
    projector().project_odeco(y)
}

fn sample_frames() -> &'static [Frame9] {
    static S: OnceLock<Vec<Frame9>> = OnceLock::new();
    S.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0xf4a3e5);
        (0..512)
            .map(|_| so3::wigner4_from_rotation(&varieties::random_rotation(&mut rng)).unwrap() * so3::q0())
            .collect()
    })
}

/// Newton (or, away from a minimum, steepest-descent) step for `f` with
/// gradient `g` and Hessian `h`; near-null Hessian directions are dropped.
fn newton_step<const K: usize>(h: &SMatrix<f64, K, K>, g: &SVector<f64, K>, scale: f64) -> (SVector<f64, K>, bool) {
    let eig = DMatrix::from_column_slice(K, K, h.as_slice()).symmetric_eigen();
    let lmax = eig.eigenvalues.amax().max(1e-300);
    if eig.eigenvalues.iter().all(|l| *l > -1e-10 * lmax) {
        let mut d = SVector::<f64, K>::zeros();
        for k in 0..K {
            let l = eig.eigenvalues[k];
            if l > 1e-10 * lmax {
                let e = eig.eigenvectors.column(k);
                let c = e.iter().zip(g.iter()).map(|(a, b)| a * b).sum::<f64>() / l;
                for i in 0..K {
                    d[i] -= e[i] * c;
                }
            }
        }
        (d, true)
    } else {
        (-g / scale, false)
    }
}

/// Accepts a full Newton step without a decrease test once it is this short,
/// where rounding in `f` would otherwise stall the iteration.
const NEWTON_LOCAL_STEP: f64 = 1e-4;

/// Riemannian Newton iteration on `‖q − y‖²` along octahedral geodesics.
pub fn refine_octa(mut q: Frame9, y: &Frame9, iters: usize) -> Frame9 {
    let gens = so3::band4_generators();
    let mut f = (q - y).norm_squared();
    for _ in 0..iters {
        let r = q - y;
        let lq = so3::octa_tangent_basis(&q);
        let g = Vector3::from_fn(|i, _| 2.0 * r.dot(&lq[i]));
        let h = Matrix3::from_fn(|i, j| 2.0 * lq[i].dot(&lq[j]) + r.dot(&(gens[i] * lq[j] + gens[j] * lq[i])));
        let (d, pd) = newton_step(&h, &g, 2.0 * OCTA_TANGENT_GRAM);
        if d.norm() < 1e-15 {
            break;
        }
        if pd && d.norm() < NEWTON_LOCAL_STEP {
            q = so3::octa_exp_unchecked(&q, &d);
            f = (q - y).norm_squared();
            continue;
        }
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand = so3::octa_exp_unchecked(&q, &(d * step));
            let fc = (cand - y).norm_squared();
            if fc < f {
                q = cand;
                f = fc;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    q
}

fn octa_fallback(y: &Frame9, start: Option<&Frame9>) -> Frame9 {
    let mut best = sample_frames()[0];
    let mut best_d = f64::INFINITY;
    for c in sample_frames() {
        let d = (c - y).norm_squared();
        if d < best_d {
            best_d = d;
            best = *c;
        }
    }
    let mut q = refine_octa(best, y, FALLBACK_ITERS);
    if let Some(s) = start {
        if s.norm() > 1e-12 {
            let mut guess = sample_frames()[0];
            let target = s.normalize();
            let mut gd = f64::INFINITY;
            for c in sample_frames() {
                let d = (c - target).norm_squared();
                if d < gd {
                    gd = d;
                    guess = *c;
                }
            }
            let alt = refine_octa(refine_octa(guess, &target, FALLBACK_ITERS), y, FALLBACK_ITERS);
            if (alt - y).norm_squared() < (q - y).norm_squared() {
                q = alt;
            }
        }
    }
    q
}

/// Newton iteration on `‖q − y‖²` over odeco tensors, in rotation and weight
/// coordinates; every iterate is exactly odeco.
pub fn refine_odeco(q: Odeco15, y: &Odeco15, iters: usize) -> Odeco15 {
    let start = quartic::tensor_decompose(&q, 200, 1e-6).unwrap_or_else(|_| quartic::approx_odeco_fit(&q));
    let mut axes = start.axes;
    let mut lambdas = start.lambdas;
    let mut q = quartic::odeco_from_parts(&lambdas, &axes);
    let mut f = (q - y).norm_squared();
    let gens = so3::odeco_generators();
    for _ in 0..iters {
        let r = q - y;
        let lq: [Odeco15; 3] = std::array::from_fn(|i| gens[i] * q);
        let p: [Odeco15; 3] = std::array::from_fn(|k| quartic::power4_sh(&axes.column(k).into_owned()));
        let jac: [&Odeco15; 6] = [&lq[0], &lq[1], &lq[2], &p[0], &p[1], &p[2]];
        let g = SVector::<f64, 6>::from_fn(|i, _| 2.0 * r.dot(jac[i]));
        let mut h = SMatrix::<f64, 6, 6>::from_fn(|i, j| 2.0 * jac[i].dot(jac[j]));
        for i in 0..3 {
            for j in 0..3 {
                h[(i, j)] += r.dot(&(gens[i] * lq[j] + gens[j] * lq[i]));
                let c = 2.0 * r.dot(&(gens[i] * p[j]));
                h[(i, 3 + j)] += c;
                h[(3 + j, i)] += c;
            }
        }
        let scale = 2.0 * (0..6).map(|i| h[(i, i)]).fold(0.0, f64::max).max(1e-300);
        let (d, pd) = newton_step(&h, &g, scale);
        if d.norm() < 1e-15 {
            break;
        }
        let moved = |t: f64| {
            let w = Vector3::new(d[0], d[1], d[2]) * t;
            let a = so3::rotation_from_coeffs(&w) * axes;
            let l = lambdas + Vector3::new(d[3], d[4], d[5]) * t;
            (quartic::odeco_from_parts(&l, &a), a, l)
        };
        if pd && d.norm() < NEWTON_LOCAL_STEP {
            (q, axes, lambdas) = moved(1.0);
            f = (q - y).norm_squared();
            continue;
        }
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let (cand, a, l) = moved(step);
            let fc = (cand - y).norm_squared();
            if fc < f {
                (q, axes, lambdas, f) = (cand, a, l, fc);
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    q
}

fn odeco_fallback(y: &Odeco15, start: Option<&Odeco15>) -> Odeco15 {
    let mut cands = vec![*y];
    if let Some(s) = start {
        cands.push(*s);
    }
    let mut best: Option<Odeco15> = None;
    for c in cands {
        let d = quartic::approx_odeco_fit(&c);
        let p = quartic::odeco_from_parts(&quartic::fit_weights(y, &d.axes), &d.axes);
        let p = refine_odeco(p, y, FALLBACK_ITERS);
        if best.map_or(true, |b| (p - y).norm_squared() < (b - y).norm_squared()) {
            best = Some(p);
        }
    }
    best.unwrap()
}

/// Result of a boundary-aligned projection.
#[derive(Debug, Clone)]
pub struct AlignedProjection<V> {
    pub q: V,
    pub ratio: f64,
    pub exact: bool,
    /// Set when the chart coordinates vanished and the tie-break was used.
    pub degenerate: bool,
}

/// Octahedral frames with one axis along a fixed normal.
#[derive(Debug, Clone)]
pub struct AlignedChartOcta {
    pub normal: Vector3<f64>,
    pub q_z: Frame9,
    pub b_z: SMatrix<f64, 9, 2>,
    pub rot: Mat9,
    /// Generator coefficients of the rotation about the normal.
    pub axis_coeffs: Vector3<f64>,
}

fn octa_chart_parts() -> (Frame9, SMatrix<f64, 9, 2>) {
    let mut q_z = Frame9::zeros();
    q_z[4] = (7.0f64 / 12.0).sqrt();
    let s = (5.0f64 / 12.0).sqrt();
    let mut b = SMatrix::<f64, 9, 2>::zeros();
    b[(8, 0)] = s;
    b[(0, 1)] = s;
    (q_z, b)
}

pub fn octa_aligned_chart(n: &Vector3<f64>) -> Result<AlignedChartOcta> {
    let r = so3::rotation_taking_z_to(n)?;
    let rot = so3::wigner4_from_rotation(&r)?;
    let (q_z, b_z) = octa_chart_parts();
    Ok(AlignedChartOcta { normal: *n, q_z, b_z, rot, axis_coeffs: so3::axis_to_coeffs(n) })
}

impl AlignedChartOcta {
    pub fn point(&self, s: &Vector2<f64>) -> Frame9 {
        self.rot * (self.q_z + self.b_z * s)
    }

    /// Chart coordinates of an ambient vector.
    pub fn coords(&self, y: &Frame9) -> Vector2<f64> {
        self.b_z.transpose() * (self.rot.transpose() * y) / (5.0 / 12.0)
    }

    /// Unit tangent of the chart circle at `q` (rotation about the normal).
    pub fn tangent(&self, q: &Frame9) -> Frame9 {
        let g = so3::band4_generators();
        let a = self.axis_coeffs;
        (g[0] * q * a.x + g[1] * q * a.y + g[2] * q * a.z) / OCTA_TANGENT_GRAM.sqrt()
    }
}

/// Closed-form nearest frame aligned with the chart normal.
pub fn project_octa_aligned(y: &Frame9, chart: &AlignedChartOcta) -> AlignedProjection<Frame9> {
    let s = chart.b_z.transpose() * (chart.rot.transpose() * y);
    let n = s.norm();
    let (s, degenerate) = if n > 1e-12 { (s / n, false) } else { (Vector2::new(1.0, 0.0), true) };
    if degenerate {
        log::debug!("degenerate aligned query; using tie-break");
    }
    AlignedProjection { q: chart.point(&s), ratio: 0.0, exact: true, degenerate }
}

/// Odeco frames with one axis along a fixed normal and unit weight on it.
#[derive(Debug, Clone)]
pub struct AlignedChartOdeco {
    pub normal: Vector3<f64>,
    pub q_z: Odeco15,
    pub b_z: SMatrix<f64, 15, 5>,
    pub rot: Mat15,
    pub axis_coeffs: Vector3<f64>,
}

/// `q_z = SH(z⁴)` and the orthonormal `B_z` spanning the z-aligned affine hull.
pub fn odeco_chart_parts() -> &'static (Odeco15, SMatrix<f64, 15, 5>) {
    static P: OnceLock<(Odeco15, SMatrix<f64, 15, 5>)> = OnceLock::new();
    P.get_or_init(|| {
        let q_z = quartic::power4_sh(&Vector3::z());
        let mut b = SMatrix::<f64, 15, 5>::zeros();
        b[(0, 0)] = 0.7f64.sqrt();
        b[(3, 0)] = -(2.0f64 / 7.0).sqrt();
        b[(10, 0)] = (1.0f64 / 70.0).sqrt();
        let a = (27.0f64 / 28.0).sqrt();
        let c = -(1.0f64 / 28.0).sqrt();
        b[(1, 1)] = a;
        b[(8, 1)] = c;
        b[(5, 2)] = a;
        b[(12, 2)] = c;
        b[(6, 3)] = 1.0;
        b[(14, 4)] = 1.0;
        (q_z, b)
    })
}

pub fn odeco_aligned_chart(n: &Vector3<f64>) -> Result<AlignedChartOdeco> {
    let r = so3::rotation_taking_z_to(n)?;
    let rot = so3::wigner_odeco_from_rotation(&r)?;
    let (q_z, b_z) = *odeco_chart_parts();
    Ok(AlignedChartOdeco { normal: *n, q_z, b_z, rot, axis_coeffs: so3::axis_to_coeffs(n) })
}

impl AlignedChartOdeco {
    pub fn point(&self, s: &SVector<f64, 5>) -> Odeco15 {
        self.rot * (self.q_z + self.b_z * s)
    }

    pub fn coords(&self, y: &Odeco15) -> SVector<f64, 5> {
        self.b_z.transpose() * (self.rot.transpose() * y - self.q_z)
    }

    /// Residual of the three z-aligned quadrics at chart coordinates `s`.
    pub fn chart_residual(&self, s: &SVector<f64, 5>) -> f64 {
        varieties::builtin()
            .zaligned
            .matrices
            .iter()
            .map(|m| {
                let m5 = SMatrix::<f64, 5, 5>::from_column_slice(m.as_slice());
                (s.transpose() * m5 * s)[0].abs()
            })
            .fold(0.0, f64::max)
    }

    /// Orthonormal tangent basis at `q` (rotation about the normal and the two in-plane weights).
    pub fn tangent_basis(&self, q: &Odeco15) -> Vec<Odeco15> {
        let p = self.rot.transpose() * q;
        let (l1, l2, t) = zchart_params(&p);
        let _ = (l1, l2);
        let g = so3::odeco_generators()[2];
        let dirs = [
            g * p,
            quartic::power4_sh(&Vector3::new(t.cos(), t.sin(), 0.0)),
            quartic::power4_sh(&Vector3::new(-t.sin(), t.cos(), 0.0)),
        ];
        let mut out: Vec<Odeco15> = Vec::new();
        for d in dirs {
            let mut w = self.rot * d;
            for o in &out {
                w -= o * o.dot(&w);
            }
            let n = w.norm();
            if n > 1e-10 {
                out.push(w / n);
            }
        }
        out
    }

    /// Gradient descent on `‖q − y‖²` within the aligned family.
    pub fn refine(&self, mut q: Odeco15, y: &Odeco15, iters: usize) -> Odeco15 {
        let mut f = (q - y).norm_squared();
        for _ in 0..iters {
            let g0 = q - y;
            let g: Odeco15 = self.tangent_basis(&q).iter().map(|t| t * t.dot(&g0)).sum();
            if g.norm() < 1e-15 {
                break;
            }
            let mut step = 1.0;
            let mut improved = false;
            for _ in 0..40 {
                let cand = self.retract(&q, &(-g * step));
                let fc = (cand - y).norm_squared();
                if fc < f {
                    q = cand;
                    f = fc;
                    improved = true;
                    break;
                }
                step *= 0.5;
            }
            if !improved {
                break;
            }
        }
        q
    }

    /// Retraction on the aligned family: rotate about the normal and shift the in-plane weights.
    pub fn retract(&self, q: &Odeco15, v: &Odeco15) -> Odeco15 {
        let p = self.rot.transpose() * q;
        let w = self.rot.transpose() * v;
        let (l1, l2, t) = zchart_params(&p);
        let g = so3::odeco_generators()[2];
        let dirs = [
            g * p,
            quartic::power4_sh(&Vector3::new(t.cos(), t.sin(), 0.0)),
            quartic::power4_sh(&Vector3::new(-t.sin(), t.cos(), 0.0)),
        ];
        let gram = Matrix3::from_fn(|i, j| dirs[i].dot(&dirs[j]));
        let rhs = Vector3::from_fn(|i, _| dirs[i].dot(&w));
        let c = varieties::pseudo_solve3(&gram, &rhs);
        // rotation by angle c₀ generated by L̃₃ is a rotation of the in-plane axes by −c₀
        let p_new = zchart_point(l1 + c.y, l2 + c.z, t - c.x);
        self.rot * p_new
    }
}

/// z-aligned odeco frame `z⁴ + λ₁(cos t x + sin t y)⁴ + λ₂(−sin t x + cos t y)⁴`.
pub fn zchart_point(l1: f64, l2: f64, t: f64) -> Odeco15 {
    let (s, c) = t.sin_cos();
    odeco_chart_parts().0
        + quartic::power4_sh(&Vector3::new(c, s, 0.0)) * l1
        + quartic::power4_sh(&Vector3::new(-s, c, 0.0)) * l2
}

/// Chart coordinates of [`zchart_point`].
pub fn zchart_coords(l1: f64, l2: f64, t: f64) -> SVector<f64, 5> {
    let (q_z, b) = odeco_chart_parts();
    b.transpose() * (zchart_point(l1, l2, t) - q_z)
}

/// Recovers `(λ₁, λ₂, t)` from a z-aligned frame in the z-frame.
pub fn zchart_params(p: &Odeco15) -> (f64, f64, f64) {
    let h = p - odeco_chart_parts().0;
    let t = quartic::tensor_entries(&quartic::monomials_from_sh(&h));
    // contraction of the in-plane binary quartic with a fixed generic 2×2 form
    let w = [[1.0, 0.37], [0.37, 2.9]];
    let mut m = nalgebra::Matrix2::zeros();
    for a in 0..2 {
        for b in 0..2 {
            let mut s = 0.0;
            for c in 0..2 {
                for d in 0..2 {
                    s += t[((a * 3 + b) * 3 + c) * 3 + d] * w[c][d];
                }
            }
            m[(a, b)] = s;
        }
    }
    let m = (m + m.transpose()) * 0.5;
    let eig = m.symmetric_eigen();
    let e = eig.eigenvectors.column(0);
    let theta = e[1].atan2(e[0]);
    let (l1, l2) = fit_zchart_weights(&h, theta);
    (l1, l2, theta)
}

fn fit_zchart_weights(h: &Odeco15, t: f64) -> (f64, f64) {
    let (s, c) = t.sin_cos();
    let a = quartic::power4_sh(&Vector3::new(c, s, 0.0));
    let b = quartic::power4_sh(&Vector3::new(-s, c, 0.0));
    let g = nalgebra::Matrix2::new(a.dot(&a), a.dot(&b), a.dot(&b), b.dot(&b));
    let r = Vector2::new(a.dot(h), b.dot(h));
    let x = g.lu().solve(&r).unwrap_or_else(Vector2::zeros);
    (x.x, x.y)
}

/// Global search for the nearest aligned frame in the z-frame: grid over `t`, least squares in `λ`.
fn zchart_search(sy: &SVector<f64, 5>) -> (f64, f64, f64) {
    let (_, b) = odeco_chart_parts();
    let target = b * sy;
    let cost = |t: f64| {
        let (l1, l2) = fit_zchart_weights(&target, t);
        (zchart_coords(l1, l2, t) - sy).norm_squared()
    };
    let quarter = std::f64::consts::FRAC_PI_2;
    let n = 720;
    let mut best_t = 0.0;
    let mut best = f64::INFINITY;
    for k in 0..n {
        let t = quarter * k as f64 / n as f64;
        let c = cost(t);
        if c < best {
            best = c;
            best_t = t;
        }
    }
    let h = quarter / n as f64;
    let (mut lo, mut hi) = (best_t - h, best_t + h);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let a = hi - g * (hi - lo);
        let bb = lo + g * (hi - lo);
        if cost(a) < cost(bb) {
            hi = bb;
        } else {
            lo = a;
        }
    }
    let t = 0.5 * (lo + hi);
    let (l1, l2) = fit_zchart_weights(&target, t);
    (l1, l2, t)
}

/// Aligned odeco projection with the shared projector.
pub fn project_odeco_aligned(y: &Odeco15, chart: &AlignedChartOdeco) -> Result<AlignedProjection<Odeco15>> {
    projector().project_odeco_aligned(y, chart)
}

/// Dynamic-matrix view of `B_z` for external use.
pub fn odeco_chart_basis() -> DMatrix<f64> {
    let (_, b) = odeco_chart_parts();
    DMatrix::from_column_slice(15, 5, b.as_slice())
}

/// Query distributions for exactness experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryKind {
    /// Standard normal in `R⁹`.
    Octa,
    /// Standard normal in `R¹⁵`.
    Odeco,
    /// Sums of squares of random quadratic forms, in `R¹⁵`.
    OdecoPositive,
}

impl std::str::FromStr for QueryKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "octa" => Ok(QueryKind::Octa),
            "odeco" => Ok(QueryKind::Odeco),
            "odeco-positive" => Ok(QueryKind::OdecoPositive),
            _ => Err(Error::InvalidInput(format!("unknown variety '{s}' (octa, odeco, odeco-positive)"))),
        }
    }
}

/// Number of squared quadratics in a positive query.
pub const SOS_TERMS: usize = 3;

/// Draws one query vector.
pub fn sample_query<R: Rng>(kind: QueryKind, rng: &mut R) -> DVector<f64> {
    match kind {
        QueryKind::Octa => DVector::from_fn(9, |_, _| rng.sample(StandardNormal)),
        QueryKind::Odeco => DVector::from_fn(15, |_, _| rng.sample(StandardNormal)),
        QueryKind::OdecoPositive => {
            let mut sum = quartic::Poly::constant(0.0);
            for _ in 0..SOS_TERMS {
                let mut p = quartic::Poly::constant(0.0);
                for e in [[2, 0, 0], [0, 2, 0], [0, 0, 2], [1, 1, 0], [1, 0, 1], [0, 1, 1]] {
                    p = p.add(&quartic::Poly::monomial(rng.sample(StandardNormal), e));
                }
                sum = sum.add(&p.mul(&p));
            }
            DVector::from_column_slice(quartic::sh_from_poly(&sum).as_slice())
        }
    }
}

/// Outcome of one exactness trial.
#[derive(Debug, Clone, Copy)]
pub struct ExactnessTrial {
    pub ratio: f64,
    pub status: SdpStatus,
}

/// Solves the projection SDP for `y` and reports the eigenvalue ratio and status.
pub fn exactness_trial(kind: QueryKind, y: &DVector<f64>) -> ExactnessTrial {
    let p = projector();
    let problem = match kind {
        QueryKind::Octa => p.octa_problem(&Frame9::from_column_slice(y.as_slice())),
        _ => p.odeco_problem(&Odeco15::from_column_slice(y.as_slice())),
    };
    let sol = sdp::solve(&problem, &p.options);
    ExactnessTrial { ratio: sol.eig_ratio, status: sol.status }
}
