//! Dense primal-dual interior-point solver for small semidefinite programs
//!
//! ```text
//! min ⟨C, X⟩  s.t.  ⟨A_i, X⟩ = b_i,  X ⪰ 0
//! ```
//!
//! using Nesterov–Todd scaling and Mehrotra predictor-corrector steps.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Equality constraints `⟨A_i, X⟩ = b_i`, shared between many problems.
#[derive(Debug)]
pub struct ConstraintSet {
    pub n: usize,
    pub mats: Vec<DMatrix<f64>>,
    pub b: Vec<f64>,
    kept: OnceLock<Vec<usize>>,
}

impl ConstraintSet {
    pub fn new(mats: Vec<DMatrix<f64>>, b: Vec<f64>) -> Result<Self> {
        let n = mats.first().map_or(0, |m| m.nrows());
        if mats.len() != b.len() {
            return Err(Error::DimensionMismatch { expected: mats.len(), got: b.len() });
        }
        for m in &mats {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch { expected: n, got: m.nrows() });
            }
            if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                return Err(Error::InvalidInput("constraint matrix is not symmetric".into()));
            }
        }
        Ok(ConstraintSet { n, mats, b, kept: OnceLock::new() })
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    /// Indices of a maximal linearly independent subset (greedy, in order).
    pub fn independent(&self) -> &[usize] {
        self.kept.get_or_init(|| {
            let mut basis: Vec<DVector<f64>> = Vec::new();
            let mut kept = Vec::new();
            for (i, a) in self.mats.iter().enumerate() {
                let mut v = DVector::from_column_slice(a.as_slice());
                let n0 = v.norm();
                for _ in 0..2 {
                    for u in &basis {
                        let c = u.dot(&v);
                        v.axpy(-c, u, 1.0);
                    }
                }
                let n1 = v.norm();
                if n1 > 1e-10 * n0.max(1e-300) {
                    basis.push(v / n1);
                    kept.push(i);
                } else {
                    log::warn!("dropping linearly dependent SDP constraint {i}");
                }
            }
            kept
        })
    }
}

/// A semidefinite program with a shared constraint set.
#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub n: usize,
    pub c: DMatrix<f64>,
    pub constraints: Arc<ConstraintSet>,
}

impl SdpProblem {
    pub fn new(c: DMatrix<f64>, constraints: Arc<ConstraintSet>) -> Result<Self> {
        if c.nrows() != constraints.n || c.ncols() != constraints.n {
            return Err(Error::DimensionMismatch { expected: constraints.n, got: c.nrows() });
        }
        Ok(SdpProblem { n: constraints.n, c, constraints })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SdpOptions {
    /// Primal and dual residual tolerance, relative to `1 + ‖b‖∞` and `1 + ‖C‖∞`.
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
    /// Merit at which a stalled solve is still reported as [`SdpStatus::NearOptimal`].
    pub near_tol: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        SdpOptions { feas_tol: 1e-10, gap_tol: 1e-10, max_iter: 200, near_tol: 1e-7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    /// Stalled before full accuracy, but with residuals and gap below `near_tol`.
    NearOptimal,
    MaxIter,
    NumericalFailure,
}

impl SdpStatus {
    pub fn is_solved(self) -> bool {
        matches!(self, SdpStatus::Optimal | SdpStatus::NearOptimal)
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub z: DMatrix<f64>,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub status: SdpStatus,
    /// `λ₂(X)/λ₁(X)` of the final interior-point iterate.
    pub eig_ratio: f64,
    pub iterations: usize,
    /// True when `x`, `y`, `z` come from the rank-one crossover.
    pub crossover: bool,
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Largest `α ≤ cap` keeping `Λ + α·dS ⪰ 0` for diagonal `Λ`.
fn step_length(d: &DVector<f64>, ds: &DMatrix<f64>) -> f64 {
    let n = d.len();
    let s = DMatrix::from_fn(n, n, |i, j| ds[(i, j)] / (d[i] * d[j]).sqrt());
    let lmin = s.symmetric_eigenvalues().min();
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

/// Relative eigenvalue cutoff for the Schur-complement pseudo-inverse.
const SCHUR_CUTOFF: f64 = 1e-14;

struct Iterate {
    x: DMatrix<f64>,
    y: DVector<f64>,
    z: DMatrix<f64>,
}

/// Solves the problem with the primal-dual path-following method.
pub fn solve(p: &SdpProblem, opts: &SdpOptions) -> SdpSolution {
    let n = p.n;
    let cons = &p.constraints;
    let kept = cons.independent();
    let mats: Vec<&DMatrix<f64>> = kept.iter().map(|&i| &cons.mats[i]).collect();
    let b = DVector::from_iterator(kept.len(), kept.iter().map(|&i| cons.b[i]));
    let m = mats.len();
    let c_norm = p.c.norm();
    let s0 = 1.0 + c_norm;
    // residual tolerances are relative to the data scale
    let (p_tol, d_tol) = (opts.feas_tol * (1.0 + b.amax()), opts.feas_tol * (1.0 + p.c.amax()));
    let mut it = Iterate {
        x: DMatrix::identity(n, n) * s0,
        y: DVector::zeros(m),
        z: DMatrix::identity(n, n) * s0,
    };
    let mut status = SdpStatus::MaxIter;
    let mut iterations = 0;
    let mut at = DMatrix::<f64>::zeros(n * n, m);
    let mut tmp = DMatrix::<f64>::zeros(n, n);
    let mut scaled = DMatrix::<f64>::zeros(n, n);
    let a_op = |x: &DMatrix<f64>| DVector::from_iterator(m, mats.iter().map(|a| inner(a, x)));
    let at_op = |y: &DVector<f64>| {
        let mut s = DMatrix::zeros(n, n);
        for (a, yi) in mats.iter().zip(y.iter()) {
            s += *a * *yi;
        }
        s
    };
    let mut last_good: Option<(Iterate, f64)> = None;
    for k in 0..=opts.max_iter {
        iterations = k;
        let rp = &b - a_op(&it.x);
        let rd = &p.c - &it.z - at_op(&it.y);
        let pobj = inner(&p.c, &it.x);
        let dobj = b.dot(&it.y);
        let pinf = rp.amax();
        let dinf = rd.amax();
        let gap = (pobj - dobj).abs().max(inner(&it.x, &it.z).abs());
        let merit = (pinf / (1.0 + b.amax())).max(dinf / (1.0 + p.c.amax())).max(gap / (1.0 + pobj.abs()));
        if last_good.as_ref().map_or(true, |(_, m)| merit < *m) {
            last_good = Some((Iterate { x: it.x.clone(), y: it.y.clone(), z: it.z.clone() }, merit));
        }
        if pinf <= p_tol && dinf <= d_tol && gap <= opts.gap_tol * (1.0 + pobj.abs()) {
            status = SdpStatus::Optimal;
            break;
        }
        if k == opts.max_iter {
            break;
        }
        // Nesterov–Todd scaling point
        let (lx, lz) = match (it.x.clone().cholesky(), it.z.clone().cholesky()) {
            (Some(a), Some(b)) => (a.l(), b.l()),
            _ => {
                status = SdpStatus::NumericalFailure;
                break;
            }
        };
        let svd = (lz.transpose() * &lx).svd(true, true);
        let vt = svd.v_t.unwrap();
        let d = svd.singular_values.clone();
        if d.min() <= 0.0 {
            status = SdpStatus::NumericalFailure;
            break;
        }
        let dm12 = d.map(|v| 1.0 / v.sqrt());
        let mut g = &lx * vt.transpose();
        for j in 0..n {
            g.column_mut(j).scale_mut(dm12[j]);
        }
        for (col, a) in mats.iter().enumerate() {
            tmp.gemm(1.0, a, &g, 0.0);
            scaled.gemm_tr(1.0, &g, &tmp, 0.0);
            at.column_mut(col).copy_from_slice(scaled.as_slice());
        }
        let rd_t = g.transpose() * &rd * &g;
        let mmat = at.transpose() * &at;
        // The optimum is typically primal-degenerate (rank-one X with more constraints
        // than its face admits), so M becomes singular as μ → 0; a truncated
        // eigen-solve keeps the ill-determined multiplier directions bounded.
        let meig = mmat.symmetric_eigen();
        let mmax = meig.eigenvalues.amax();
        if !(mmax > 0.0) || !mmax.is_finite() {
            status = SdpStatus::NumericalFailure;
            break;
        }
        let cut = SCHUR_CUTOFF * mmax;
        let minv_diag = meig.eigenvalues.map(|l| if l > cut { 1.0 / l } else { 0.0 });
        let schur_solve = |r: &DVector<f64>| {
            let t = meig.eigenvectors.tr_mul(r).component_mul(&minv_diag);
            &meig.eigenvectors * t
        };
        let solve_dir = |rc: &DMatrix<f64>| {
            let w = rc - &rd_t;
            let rhs = &rp - at.transpose() * DVector::from_column_slice(w.as_slice());
            let mut dy = schur_solve(&rhs);
            let mut refine = 0;
            loop {
                // dZ in original coordinates keeps the dual residual exactly linear
                let mut dz_orig = &rd - at_op(&dy);
                symmetrize(&mut dz_orig);
                let mut dz = g.transpose() * &dz_orig * &g;
                symmetrize(&mut dz);
                let mut dx = rc - &dz;
                symmetrize(&mut dx);
                let mut dx_orig = &g * &dx * g.transpose();
                symmetrize(&mut dx_orig);
                // iterative refinement of the Schur solve against the primal residual
                let r = &rp - a_op(&dx_orig);
                if refine == 2 || r.amax() <= 1e-3 * p_tol {
                    return (dx, dy, dz, dz_orig, dx_orig);
                }
                dy += schur_solve(&r);
                refine += 1;
            }
        };
        let mu = inner(&it.x, &it.z) / n as f64;
        // predictor
        let rc_aff = DMatrix::from_diagonal(&(-&d));
        let (dx_a, _, dz_a, _, _) = solve_dir(&rc_aff);
        let ap = step_length(&d, &dx_a).min(1.0);
        let ad = step_length(&d, &dz_a).min(1.0);
        let dmat = DMatrix::from_diagonal(&d);
        let mu_aff = inner(&(&dmat + &dx_a * ap), &(&dmat + &dz_a * ad)) / n as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        // corrector
        let cross = &dx_a * &dz_a + &dz_a * &dx_a;
        let rc = DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { 2.0 * (sigma * mu - d[i] * d[i]) } else { 0.0 };
            (diag - cross[(i, j)]) / (d[i] + d[j])
        });
        let (dx, dy, dz, dz_orig, dx_orig) = solve_dir(&rc);
        let gamma = 0.9 + 0.09 * ap.min(ad);
        let ap = (gamma * step_length(&d, &dx)).min(1.0);
        let ad = (gamma * step_length(&d, &dz)).min(1.0);
        it.x += dx_orig * ap;
        it.z += dz_orig * ad;
        it.y.axpy(ad, &dy, 1.0);
        symmetrize(&mut it.x);
        symmetrize(&mut it.z);
    }
    if status != SdpStatus::Optimal {
        if let Some((best, merit)) = last_good {
            it = best;
            if merit <= opts.near_tol {
                status = SdpStatus::NearOptimal;
            }
        }
    }
    let eig_ratio = eig_ratio(&it.x);
    let mut crossover = false;
    if status != SdpStatus::Optimal && eig_ratio <= CROSSOVER_RATIO {
        if let Some(polished) = rank_one_crossover(&p.c, &mats, &b, &it, opts) {
            it = polished;
            status = SdpStatus::Optimal;
            crossover = true;
        }
    }
    let primal_obj = inner(&p.c, &it.x);
    let dual_obj = b.dot(&it.y);
    let mut y_full = DVector::zeros(cons.len());
    for (k, &i) in kept.iter().enumerate() {
        y_full[i] = it.y[k];
    }
    SdpSolution { x: it.x, y: y_full, z: it.z, primal_obj, dual_obj, status, eig_ratio, iterations, crossover }
}

/// Minimum-norm least-squares solve with a relative singular-value cutoff.
fn pinv_solve(a: DMatrix<f64>, r: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = a.svd(true, true);
    let eps = 1e-10 * svd.singular_values.max();
    svd.solve(r, eps).ok()
}

/// Interior-iterate ratio below which a stalled solve attempts the rank-one crossover.
pub const CROSSOVER_RATIO: f64 = 1e-6;

/// Polishes a nearly rank-one iterate into an exact rank-one primal-dual pair.
///
/// Gauss–Newton on `u` drives `⟨A_i, uuᵀ⟩ = b_i`; the multipliers are then the
/// minimal change of `y` making `(C − Σ y_i A_i) u = 0`. The pair is returned only
/// if it meets the solver tolerances and `Z ⪰ 0` holds.
fn rank_one_crossover(
    c: &DMatrix<f64>,
    mats: &[&DMatrix<f64>],
    b: &DVector<f64>,
    it: &Iterate,
    opts: &SdpOptions,
) -> Option<Iterate> {
    let n = c.nrows();
    let m = mats.len();
    let eig = it.x.clone().symmetric_eigen();
    let top = eig.eigenvalues.imax();
    let mut u = eig.eigenvectors.column(top) * eig.eigenvalues[top].max(0.0).sqrt();
    let residual = |u: &DVector<f64>| {
        DVector::from_iterator(m, mats.iter().zip(b.iter()).map(|(a, bi)| bi - u.dot(&(*a * u))))
    };
    let mut best = (residual(&u).amax(), u.clone());
    for _ in 0..20 {
        let r = residual(&u);
        if r.amax() < best.0 {
            best = (r.amax(), u.clone());
        }
        if r.amax() <= 1e-3 * opts.feas_tol * (1.0 + b.amax()) {
            break;
        }
        let mut jac = DMatrix::zeros(m, n);
        for (i, a) in mats.iter().enumerate() {
            jac.row_mut(i).copy_from(&(*a * &u * 2.0).transpose());
        }
        u += pinv_solve(jac, &r)?;
    }
    let mut u = best.1;
    let mut bmat = DMatrix::zeros(n, m);
    let fill_b = |u: &DVector<f64>, bmat: &mut DMatrix<f64>| {
        for (i, a) in mats.iter().enumerate() {
            bmat.set_column(i, &(*a * u));
        }
    };
    let z_of = |y: &DVector<f64>| {
        let mut z = c.clone();
        for (a, yi) in mats.iter().zip(y.iter()) {
            z -= *a * *yi;
        }
        symmetrize(&mut z);
        z
    };
    fill_b(&u, &mut bmat);
    let rhs = c * &u - &bmat * &it.y;
    let mut y = &it.y + pinv_solve(bmat.clone(), &rhs)?;
    // Newton on the rank-one KKT system: Z(y)u = 0, uᵀA_i u = b_i
    let kkt = |u: &DVector<f64>, y: &DVector<f64>| {
        let mut f = DVector::zeros(n + m);
        f.rows_mut(0, n).copy_from(&(z_of(y) * u));
        f.rows_mut(n, m).copy_from(&residual(u));
        f
    };
    let mut f = kkt(&u, &y);
    let scale = 1.0 + c.amax() + b.amax();
    for _ in 0..15 {
        if f.amax() <= 1e-15 * scale {
            break;
        }
        fill_b(&u, &mut bmat);
        let mut jac = DMatrix::zeros(n + m, n + m);
        jac.view_mut((0, 0), (n, n)).copy_from(&z_of(&y));
        jac.view_mut((0, n), (n, m)).copy_from(&(-&bmat));
        jac.view_mut((n, 0), (m, n)).copy_from(&(bmat.transpose() * -2.0));
        let step = pinv_solve(jac, &(-&f))?;
        let un = &u + step.rows(0, n);
        let yn = &y + step.rows(n, m);
        let fn_ = kkt(&un, &yn);
        if fn_.amax() >= f.amax() {
            break;
        }
        (u, y, f) = (un, yn, fn_);
    }
    let x = &u * u.transpose();
    let z = z_of(&y);
    let pinf = mats.iter().zip(b.iter()).map(|(a, bi)| (bi - inner(a, &x)).abs()).fold(0.0, f64::max);
    let pobj = inner(c, &x);
    let gap = (pobj - b.dot(&y)).abs().max(inner(&x, &z).abs());
    let zmin = z.symmetric_eigenvalues().min();
    let ok = pinf <= opts.feas_tol * (1.0 + b.amax())
        && gap <= opts.gap_tol * (1.0 + pobj.abs())
        && zmin >= -opts.feas_tol * (1.0 + c.amax());
    ok.then_some(Iterate { x, y, z })
}

fn eig_ratio(x: &DMatrix<f64>) -> f64 {
    let mut ev: Vec<f64> = x.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if ev.len() < 2 || ev[0] <= 0.0 {
        return f64::INFINITY;
    }
    ev[1].max(0.0) / ev[0]
}

/// Result of a rank-one extraction.
#[derive(Debug, Clone)]
pub struct Rank1 {
    /// Dehomogenized top eigenvector when the certificate passes.
    pub q: Option<DVector<f64>>,
    pub ratio: f64,
    /// Dehomogenized top eigenvector regardless of the certificate, if defined.
    pub top: Option<DVector<f64>>,
}

/// Extracts `q` from `X ≈ (1,q)(1,q)ᵀ` when `λ₂/λ₁ ≤ ratio_tol`.
pub fn rank1_extract(s: &SdpSolution, ratio_tol: f64) -> Rank1 {
    let eig = s.x.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].partial_cmp(&eig.eigenvalues[*a]).unwrap());
    let ratio = s.eig_ratio;
    let u = eig.eigenvectors.column(order[0]);
    let top = if u[0].abs() > 1e-12 {
        Some(DVector::from_iterator(u.len() - 1, u.iter().skip(1).map(|v| v / u[0])))
    } else {
        None
    };
    let q = if ratio <= ratio_tol && s.status.is_solved() { top.clone() } else { None };
    Rank1 { q, ratio, top }
}

/// Projection cost `[[‖y‖², −yᵀ], [−y, I]]`, so `⟨C, (1,q)(1,q)ᵀ⟩ = ‖q − y‖²`.
pub fn projection_cost(y: &[f64]) -> DMatrix<f64> {
    let n = y.len() + 1;
    let mut c = DMatrix::identity(n, n);
    c[(0, 0)] = y.iter().map(|v| v * v).sum();
    for (i, v) in y.iter().enumerate() {
        c[(0, i + 1)] = -v;
        c[(i + 1, 0)] = -v;
    }
    c
}

/// Constraints `X₁₁ = 1` and `⟨P_i, X⟩ = 0` for lifted or bordered quadrics.
pub fn lifted_constraints(quadrics: &crate::varieties::QuadricSet) -> Result<ConstraintSet> {
    let n = quadrics.dim + 1;
    let mut e11 = DMatrix::zeros(n, n);
    e11[(0, 0)] = 1.0;
    let mut mats = vec![e11];
    let mut b = vec![1.0];
    for a in &quadrics.matrices {
        let m = if quadrics.homogeneous {
            let mut big = DMatrix::zeros(n, n);
            big.view_mut((1, 1), (n - 1, n - 1)).copy_from(a);
            big
        } else {
            a.clone()
        };
        mats.push(m);
        b.push(0.0);
    }
    ConstraintSet::new(mats, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_lp_like() -> SdpProblem {
        // min x11 + x22 s.t. x12 = 1 on 2×2: optimum X = [[1,1],[1,1]], value 2
        let c = DMatrix::identity(2, 2);
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        let cons = Arc::new(ConstraintSet::new(vec![a], vec![1.0]).unwrap());
        SdpProblem::new(c, cons).unwrap()
    }

    #[test]
    fn two_by_two_known_optimum() {
        let s = solve(&small_lp_like(), &SdpOptions::default());
        assert_eq!(s.status, SdpStatus::Optimal);
        assert!((s.primal_obj - 2.0).abs() < 1e-8);
        assert!((s.dual_obj - 2.0).abs() < 1e-8);
        assert!(s.eig_ratio < 1e-8);
    }

    #[test]
    fn zero_cost_feasibility() {
        let mut e = DMatrix::zeros(3, 3);
        e[(0, 0)] = 1.0;
        let cons = Arc::new(ConstraintSet::new(vec![e], vec![1.0]).unwrap());
        let p = SdpProblem::new(DMatrix::zeros(3, 3), cons).unwrap();
        let s = solve(&p, &SdpOptions::default());
        assert_eq!(s.status, SdpStatus::Optimal);
        assert!(s.primal_obj.abs() < 1e-9);
    }

    #[test]
    fn dependent_constraints_dropped() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        let cons = ConstraintSet::new(vec![a.clone(), a * 2.0], vec![1.0, 2.0]).unwrap();
        assert_eq!(cons.independent(), &[0]);
    }

    #[test]
    fn rank1_extract_symmetric_ambiguity() {
        // X = ½(1,1)(1,1)ᵀ + ½(1,−1)(1,−1)ᵀ = I
        let sol = SdpSolution {
            x: DMatrix::identity(2, 2),
            y: DVector::zeros(1),
            z: DMatrix::zeros(2, 2),
            primal_obj: 0.0,
            dual_obj: 0.0,
            status: SdpStatus::Optimal,
            eig_ratio: 1.0,
            crossover: false,
            iterations: 0,
        };
        let r = rank1_extract(&sol, 1e-6);
        assert!(r.q.is_none());
        assert!((r.ratio - 1.0).abs() < 1e-12);
    }
}
