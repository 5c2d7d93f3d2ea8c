//! Field solvers: Riemannian trust region and diffusion-generated (MBO) iterations.
//!
//! A field is a `d×n` matrix with one coefficient column per vertex. Boundary
//! vertices with a well-defined normal are restricted to an aligned chart;
//! crease and interior vertices range over the whole variety.

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{self, FemOperators, TetMesh};
use crate::projection::{self, AlignedChartOcta, AlignedChartOdeco};
use crate::quartic::{self, Odeco15};
use crate::so3::{self, Frame9};
use crate::varieties::{self, ODECO_NORMAL_RANK};

/// Frame representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rep {
    Octa,
    Odeco,
}

impl Rep {
    /// Coefficient dimension.
    pub fn dim(self) -> usize {
        match self {
            Rep::Octa => 9,
            Rep::Odeco => 15,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Rep::Octa => "octa",
            Rep::Odeco => "odeco",
        }
    }
}

impl fmt::Display for Rep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Rep {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "octa" | "octahedral" => Ok(Rep::Octa),
            "odeco" => Ok(Rep::Odeco),
            _ => Err(Error::InvalidInput(format!("unknown representation '{s}'"))),
        }
    }
}

/// Aligned chart of a constrained boundary vertex.
#[derive(Debug, Clone)]
pub enum BoundaryChart {
    Octa(AlignedChartOcta),
    Odeco(AlignedChartOdeco),
}

impl BoundaryChart {
    pub fn new(rep: Rep, normal: &Vector3<f64>) -> Result<Self> {
        Ok(match rep {
            Rep::Octa => BoundaryChart::Octa(projection::octa_aligned_chart(normal)?),
            Rep::Odeco => BoundaryChart::Odeco(projection::odeco_aligned_chart(normal)?),
        })
    }

    pub fn normal(&self) -> Vector3<f64> {
        match self {
            BoundaryChart::Octa(c) => c.normal,
            BoundaryChart::Odeco(c) => c.normal,
        }
    }

    /// Offset `c` and orthonormal basis `B` of the chart's affine span `c + B s`.
    pub fn affine(&self) -> (DVector<f64>, DMatrix<f64>) {
        match self {
            BoundaryChart::Octa(c) => {
                let off = c.rot * c.q_z;
                let b = c.rot * c.b_z / (5.0f64 / 12.0).sqrt();
                (DVector::from_column_slice(off.as_slice()), DMatrix::from_column_slice(9, 2, b.as_slice()))
            }
            BoundaryChart::Odeco(c) => {
                let off = c.rot * c.q_z;
                let b = c.rot * c.b_z;
                (DVector::from_column_slice(off.as_slice()), DMatrix::from_column_slice(15, 5, b.as_slice()))
            }
        }
    }

    /// Distance of `q` from the chart's affine span.
    pub fn deviation(&self, q: &DVector<f64>) -> f64 {
        let (c, b) = self.affine();
        let r = q - &c;
        (&r - &b * (b.transpose() * &r)).norm()
    }

    /// Orthogonal projection onto the affine span.
    pub fn to_span(&self, q: &DVector<f64>) -> DVector<f64> {
        let (c, b) = self.affine();
        &c + &b * (b.transpose() * (q - &c))
    }
}

/// Charts for every vertex; `None` for interior and crease vertices or when alignment is off.
pub fn boundary_charts(mesh: &TetMesh, rep: Rep, align: bool) -> Result<Vec<Option<BoundaryChart>>> {
    (0..mesh.num_vertices())
        .map(|i| match (align, mesh.alignment_normal(i)) {
            (true, Some(n)) => BoundaryChart::new(rep, &n).map(Some),
            _ => Ok(None),
        })
        .collect()
}

/// One row of the solver trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub energy: f64,
    /// Riemannian gradient norm (trust region) or relative change `Δ_k` (MBO).
    pub measure: f64,
    /// Diffusion time `τ_k`; `None` for the trust-region solver.
    pub tau: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    NotRun,
    Converged,
    MaxIterations,
    /// No acceptable step at the minimum trust radius; the best iterate is kept.
    LineFailure,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub status: SolveStatus,
    pub iterations: usize,
    /// Projections that fell back to local refinement.
    pub fallbacks: usize,
    /// Aligned projections that used the tie-break, or odeco columns at singular points.
    pub degenerate: usize,
    pub seconds: f64,
}

impl Default for SolveStats {
    fn default() -> Self {
        SolveStats { status: SolveStatus::NotRun, iterations: 0, fallbacks: 0, degenerate: 0, seconds: 0.0 }
    }
}

/// A frame field with its boundary constraints and solver history.
#[derive(Debug, Clone)]
pub struct FieldState {
    pub rep: Rep,
    pub coeffs: DMatrix<f64>,
    pub charts: Vec<Option<BoundaryChart>>,
    pub trace: Vec<TraceRow>,
    pub stats: SolveStats,
}

impl FieldState {
    pub fn new(rep: Rep, coeffs: DMatrix<f64>, charts: Vec<Option<BoundaryChart>>) -> Result<Self> {
        if coeffs.nrows() != rep.dim() {
            return Err(Error::DimensionMismatch { expected: rep.dim(), got: coeffs.nrows() });
        }
        if charts.len() != coeffs.ncols() {
            return Err(Error::DimensionMismatch { expected: coeffs.ncols(), got: charts.len() });
        }
        Ok(FieldState { rep, coeffs, charts, trace: Vec::new(), stats: SolveStats::default() })
    }

    pub fn num_vertices(&self) -> usize {
        self.coeffs.ncols()
    }

    /// Constant field (boundary columns snapped to their charts).
    pub fn constant(rep: Rep, q: &DVector<f64>, charts: Vec<Option<BoundaryChart>>) -> Result<Self> {
        let n = charts.len();
        let coeffs = DMatrix::from_fn(rep.dim(), n, |r, _| q[r]);
        let mut f = FieldState::new(rep, coeffs, charts)?;
        f.snap_boundary();
        Ok(f)
    }

    fn snap_boundary(&mut self) {
        for (i, c) in self.charts.iter().enumerate() {
            if let Some(c) = c {
                let q = self.coeffs.column(i).into_owned();
                let s = match c {
                    BoundaryChart::Octa(ch) => {
                        let y = Frame9::from_iterator(q.iter().copied());
                        let p = projection::project_octa_aligned(&y, ch).q;
                        DVector::from_column_slice(p.as_slice())
                    }
                    BoundaryChart::Odeco(_) => c.to_span(&q),
                };
                self.coeffs.set_column(i, &s);
            }
        }
    }
}

fn col9(q: &DMatrix<f64>, i: usize) -> Frame9 {
    Frame9::from_iterator(q.column(i).iter().copied())
}

fn col15(q: &DMatrix<f64>, i: usize) -> Odeco15 {
    Odeco15::from_iterator(q.column(i).iter().copied())
}

fn random_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        let n: f64 = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Random octahedral frame: a random twist about `z`, then `z` rotated to a random direction.
pub fn random_octa_frame<R: Rng>(rng: &mut R) -> Frame9 {
    let u = rng.random_range(0.0..std::f64::consts::TAU);
    let dir = random_unit(rng);
    let r = so3::rotation_taking_z_to(&dir).expect("unit direction");
    so3::wigner4_from_rotation(&r).expect("rotation") * so3::wigner_z_fixed::<9>(u) * so3::q0()
}

/// Independent random octahedral frames per vertex; boundary columns projected to their charts.
pub fn random_octa_field(mesh: &TetMesh, seed: u64, align: bool) -> Result<FieldState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = mesh.num_vertices();
    let mut coeffs = DMatrix::zeros(9, n);
    for i in 0..n {
        coeffs.set_column(i, &random_octa_frame(&mut rng));
    }
    let mut f = FieldState::new(Rep::Octa, coeffs, boundary_charts(mesh, Rep::Octa, align)?)?;
    f.snap_boundary();
    Ok(f)
}

/// Ratio between the odeco lift of an octahedral frame and the unit-weight quartic
/// `Σ (vᵢᵀx)⁴` with the same axes.
///
/// Lifted fields are divided by this factor so that every weight equals one, as the
/// boundary charts require; odeco energies times its square are in octahedral units.
pub fn octa_lift_scale() -> f64 {
    let unit: Odeco15 = [Vector3::x(), Vector3::y(), Vector3::z()].iter().map(quartic::power4_sh).sum();
    quartic::octa_to_odeco_unchecked(&so3::q0()).norm() / unit.norm()
}

/// Embeds an octahedral field in the odeco space as unit-weight frames, with odeco
/// charts for the same normals.
pub fn lift_to_odeco(field: &FieldState) -> Result<FieldState> {
    if field.rep != Rep::Octa {
        return Err(Error::InvalidInput("lift expects an octahedral field".into()));
    }
    let n = field.num_vertices();
    let scale = 1.0 / octa_lift_scale();
    let mut coeffs = DMatrix::zeros(15, n);
    for i in 0..n {
        coeffs.set_column(i, &(quartic::octa_to_odeco_unchecked(&col9(&field.coeffs, i)) * scale));
    }
    let charts = field
        .charts
        .iter()
        .map(|c| c.as_ref().map(|c| BoundaryChart::new(Rep::Odeco, &c.normal())).transpose())
        .collect::<Result<Vec<_>>>()?;
    let mut f = FieldState::new(Rep::Odeco, coeffs, charts)?;
    f.snap_boundary();
    Ok(f)
}

/// Random initial field of either representation; odeco fields are lifted octahedral ones.
pub fn random_field(mesh: &TetMesh, rep: Rep, seed: u64, align: bool) -> Result<FieldState> {
    let f = random_octa_field(mesh, seed, align)?;
    match rep {
        Rep::Octa => Ok(f),
        Rep::Odeco => lift_to_odeco(&f),
    }
}

fn check_dims(q: &DMatrix<f64>, ops: &FemOperators) -> Result<()> {
    if q.ncols() != ops.n() {
        return Err(Error::DimensionMismatch { expected: ops.n(), got: q.ncols() });
    }
    Ok(())
}

/// `½ tr(q S qᵀ)`.
pub fn dirichlet_energy(field: &DMatrix<f64>, ops: &FemOperators) -> Result<f64> {
    check_dims(field, ops)?;
    Ok(ops.dirichlet_energy(field))
}

/// Orthonormal tangent basis of one column (`d×k`).
#[derive(Debug, Clone)]
struct Tangent {
    basis: DMatrix<f64>,
    singular: bool,
}

fn orthonormalize(d: usize, vs: &[DVector<f64>], tol: f64) -> DMatrix<f64> {
    let mut out: Vec<DVector<f64>> = Vec::new();
    for v in vs {
        let mut w = v.clone();
        for _ in 0..2 {
            for o in &out {
                let c = o.dot(&w);
                w.axpy(-c, o, 1.0);
            }
        }
        let n = w.norm();
        if n > tol {
            out.push(w / n);
        }
    }
    if out.is_empty() {
        DMatrix::zeros(d, 0)
    } else {
        DMatrix::from_columns(&out)
    }
}

fn to_dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn column_tangent(rep: Rep, chart: Option<&BoundaryChart>, q: &DMatrix<f64>, i: usize) -> Tangent {
    match (rep, chart) {
        (Rep::Octa, Some(BoundaryChart::Octa(c))) => {
            let t = c.tangent(&col9(q, i));
            Tangent { basis: orthonormalize(9, &[to_dvec(t.as_slice())], 1e-12), singular: false }
        }
        (Rep::Octa, _) => {
            let qi = col9(q, i);
            let vs: Vec<DVector<f64>> = so3::octa_tangent_basis(&qi).iter().map(|v| to_dvec(v.as_slice())).collect();
            Tangent { basis: orthonormalize(9, &vs, 1e-10), singular: false }
        }
        (Rep::Odeco, Some(BoundaryChart::Odeco(c))) => {
            let vs: Vec<DVector<f64>> = c.tangent_basis(&col15(q, i)).iter().map(|v| to_dvec(v.as_slice())).collect();
            Tangent { basis: orthonormalize(15, &vs, 1e-10), singular: false }
        }
        (Rep::Odeco, _) => {
            let qi = col15(q, i);
            let spaces = varieties::odeco_spaces(&qi);
            if spaces.normal.len() == ODECO_NORMAL_RANK {
                let vs: Vec<DVector<f64>> = spaces.tangent.iter().map(|v| to_dvec(v.as_slice())).collect();
                Tangent { basis: orthonormalize(15, &vs, 1e-10), singular: false }
            } else {
                // singular point: rotations only
                let vs: Vec<DVector<f64>> =
                    so3::odeco_generators().iter().map(|g| to_dvec((g * qi).as_slice())).collect();
                Tangent { basis: orthonormalize(15, &vs, 1e-10 * qi.norm().max(1e-300)), singular: true }
            }
        }
    }
}

fn tangents(field: &FieldState, q: &DMatrix<f64>) -> Vec<Tangent> {
    (0..q.ncols())
        .into_par_iter()
        .map(|i| column_tangent(field.rep, field.charts[i].as_ref(), q, i))
        .collect()
}

fn project_tangent(ts: &[Tangent], v: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(v.nrows(), v.ncols());
    for (i, t) in ts.iter().enumerate() {
        let c = t.basis.transpose() * v.column(i);
        out.set_column(i, &(&t.basis * c));
    }
    out
}

/// Riemannian gradient: the ambient gradient `qS` projected onto each column's tangent space.
pub fn riemannian_gradient(field: &FieldState, ops: &FemOperators) -> Result<DMatrix<f64>> {
    check_dims(&field.coeffs, ops)?;
    let ts = tangents(field, &field.coeffs);
    Ok(project_tangent(&ts, &ops.stiffness.apply_field(&field.coeffs)))
}

/// Projects an ambient `d×n` direction onto the tangent space of the field.
pub fn tangent_projection(field: &FieldState, v: &DMatrix<f64>) -> DMatrix<f64> {
    project_tangent(&tangents(field, &field.coeffs), v)
}

fn retract_column(rep: Rep, chart: Option<&BoundaryChart>, q: &DMatrix<f64>, v: &DMatrix<f64>, i: usize) -> DVector<f64> {
    match rep {
        Rep::Octa => {
            let qi = col9(q, i);
            let vi = col9(v, i);
            let basis = so3::octa_tangent_basis(&qi);
            let g = Matrix3::from_fn(|a, b| basis[a].dot(&basis[b]));
            let rhs = Vector3::from_fn(|a, _| basis[a].dot(&vi));
            let c = varieties::pseudo_solve3(&g, &rhs);
            let mut out = so3::octa_exp_unchecked(&qi, &c);
            if let Some(BoundaryChart::Octa(ch)) = chart {
                out = projection::project_octa_aligned(&out, ch).q;
            }
            to_dvec(out.as_slice())
        }
        Rep::Odeco => {
            let qi = col15(q, i);
            let vi = col15(v, i);
            match chart {
                Some(c @ BoundaryChart::Odeco(ch)) => c.to_span(&to_dvec(ch.retract(&qi, &vi).as_slice())),
                _ => to_dvec(varieties::odeco_retract_unchecked(&qi, &vi).as_slice()),
            }
        }
    }
}

/// Applies the per-column retraction (geodesic for octahedral columns) along a tangent field.
pub fn retract(field: &FieldState, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if v.shape() != field.coeffs.shape() {
        return Err(Error::DimensionMismatch { expected: field.coeffs.len(), got: v.len() });
    }
    let cols: Vec<DVector<f64>> = (0..v.ncols())
        .into_par_iter()
        .map(|i| retract_column(field.rep, field.charts[i].as_ref(), &field.coeffs, v, i))
        .collect();
    Ok(DMatrix::from_columns(&cols))
}

/// Trust-region parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtrConfig {
    pub initial_radius: f64,
    pub max_radius: f64,
    pub grad_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl RtrConfig {
    /// Defaults scaled to a mesh with `n` vertices.
    pub fn for_vertices(n: usize) -> Self {
        let s = (n as f64).sqrt();
        RtrConfig { initial_radius: s / 8.0, max_radius: s, grad_tol: 1e-6 * s, max_outer: 1000, max_inner: 1000 }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.initial_radius > 0.0
            && self.max_radius >= self.initial_radius
            && self.grad_tol > 0.0
            && self.max_outer > 0
            && self.max_inner > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid trust-region configuration {self:?}")))
        }
    }
}

const RHO_ACCEPT: f64 = 0.1;
const TCG_KAPPA: f64 = 0.1;
const TCG_THETA: f64 = 1.0;

/// Steihaug–Toint truncated CG on the model `⟨g,η⟩ + ½⟨η,Hη⟩`; returns `(η, hit boundary)`.
fn truncated_cg(
    hess: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
    g: &DMatrix<f64>,
    radius: f64,
    max_inner: usize,
) -> (DMatrix<f64>, bool) {
    let mut eta = DMatrix::zeros(g.nrows(), g.ncols());
    let mut r = g.clone();
    let mut d = -g;
    let mut rr = r.norm_squared();
    let r0 = rr.sqrt();
    let stop = r0 * r0.powf(TCG_THETA).min(TCG_KAPPA);
    for _ in 0..max_inner {
        let hd = hess(&d);
        let dhd = d.dot(&hd);
        let alpha = rr / dhd;
        let next = &eta + &d * alpha;
        if dhd <= 0.0 || next.norm() >= radius {
            // step to the trust-region boundary along d
            let ed = eta.dot(&d);
            let dd = d.norm_squared();
            let ee = eta.norm_squared();
            let tau = (-ed + (ed * ed + dd * (radius * radius - ee)).max(0.0).sqrt()) / dd;
            eta += &d * tau;
            return (eta, true);
        }
        eta = next;
        r += &hd * alpha;
        let rr_new = r.norm_squared();
        if rr_new.sqrt() <= stop {
            break;
        }
        d = &d * (rr_new / rr) - &r;
        rr = rr_new;
    }
    (eta, false)
}

/// Riemannian trust-region minimization of the Dirichlet energy.
///
/// The model Hessian is the tangent projection of the ambient Hessian `η ↦ ηS`.
/// Accepted steps never increase the energy.
pub fn rtr_solve(mut field: FieldState, ops: &FemOperators, cfg: &RtrConfig) -> Result<FieldState> {
    check_dims(&field.coeffs, ops)?;
    cfg.validate()?;
    let start = Instant::now();
    let base_iter = field.trace.last().map_or(0, |r| r.iteration + 1);
    let mut f = ops.dirichlet_energy(&field.coeffs);
    let mut radius = cfg.initial_radius;
    let min_radius = cfg.max_radius * 1e-14;
    field.stats.status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    for k in 0..cfg.max_outer {
        let ts = tangents(&field, &field.coeffs);
        let g = project_tangent(&ts, &ops.stiffness.apply_field(&field.coeffs));
        let gn = g.norm();
        field.trace.push(TraceRow {
            iteration: base_iter + k,
            energy: f,
            measure: gn,
            tau: None,
            seconds: start.elapsed().as_secs_f64(),
        });
        if gn < cfg.grad_tol {
            field.stats.status = SolveStatus::Converged;
            break;
        }
        iterations = k + 1;
        let hess = |d: &DMatrix<f64>| project_tangent(&ts, &ops.stiffness.apply_field(d));
        let (eta, hit) = truncated_cg(hess, &g, radius, cfg.max_inner);
        let heta = hess(&eta);
        let model_dec = -(g.dot(&eta) + 0.5 * eta.dot(&heta));
        let cand = retract(&field, &eta)?;
        let f_new = ops.dirichlet_energy(&cand);
        let rho = if model_dec > 0.0 { (f - f_new) / model_dec } else { f64::NEG_INFINITY };
        if rho < 0.25 {
            radius *= 0.25;
        } else if rho > 0.75 && hit {
            radius = (2.0 * radius).min(cfg.max_radius);
        }
        if rho > RHO_ACCEPT && f_new <= f {
            field.coeffs = cand;
            f = f_new;
        } else if radius < min_radius {
            field.stats.status = SolveStatus::LineFailure;
            log::warn!("trust region collapsed at iteration {k} (E = {f:e}, |grad| = {gn:e})");
            break;
        }
    }
    field.stats.iterations += iterations;
    field.stats.degenerate = ts_singular_count(&field);
    field.stats.seconds += start.elapsed().as_secs_f64();
    Ok(field)
}

fn ts_singular_count(field: &FieldState) -> usize {
    if field.rep == Rep::Octa {
        return 0;
    }
    tangents(field, &field.coeffs).iter().filter(|t| t.singular).count()
}

/// Diffusion-time schedule `β(k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// `β(k) = 1` (ordinary MBO).
    Constant,
    /// `β(k) = a·k^{−p}` (modified MBO).
    PowerLaw { a: f64, p: f64 },
}

impl Schedule {
    pub const MMBO: Schedule = Schedule::PowerLaw { a: 50.0, p: 3.0 };

    /// Multiplier for the 1-based outer iteration `k`.
    pub fn beta(&self, k: usize) -> f64 {
        match *self {
            Schedule::Constant => 1.0,
            Schedule::PowerLaw { a, p } => a * (k as f64).powf(-p),
        }
    }
}

impl FromStr for Schedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "constant" => Ok(Schedule::Constant),
            "powerlaw" | "power-law" | "power_law" => Ok(Schedule::MMBO),
            _ => Err(Error::InvalidInput(format!("unknown schedule '{s}'"))),
        }
    }
}

/// MBO parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MboConfig {
    pub tau0: f64,
    pub schedule: Schedule,
    /// Relative stopping tolerance; zero disables early stopping.
    pub delta: f64,
    pub max_outer: usize,
    /// Relative residual of the diffusion solves.
    pub solve_tol: f64,
}

impl MboConfig {
    pub fn new(tau0: f64, schedule: Schedule) -> Self {
        MboConfig { tau0, schedule, delta: 1e-4, max_outer: 200, solve_tol: 1e-10 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tau0 > 0.0) || !(self.delta >= 0.0) || self.max_outer == 0 || !(self.solve_tol > 0.0) {
            return Err(Error::InvalidInput(format!("invalid MBO configuration {self:?}")));
        }
        Ok(())
    }
}

/// `τ₀ = 1/λ`, with `λ` the smallest nonzero eigenvalue of `S u = λ M u`.
pub fn default_tau0(mesh: &TetMesh, ops: &FemOperators) -> Result<f64> {
    Ok(1.0 / mesh::smallest_nonzero_stiffness_eigenvalue(mesh, ops, false)?)
}

/// Unknowns of the boundary-constrained diffusion: free interior columns and chart coordinates.
struct Reduced<'a> {
    ops: &'a FemOperators,
    d: usize,
    offsets: Vec<usize>,
    affine: Vec<Option<(DVector<f64>, DMatrix<f64>)>>,
    size: usize,
}

impl<'a> Reduced<'a> {
    fn new(field: &FieldState, ops: &'a FemOperators) -> Self {
        let d = field.rep.dim();
        let mut offsets = Vec::with_capacity(field.num_vertices());
        let mut affine = Vec::with_capacity(field.num_vertices());
        let mut size = 0;
        for c in &field.charts {
            offsets.push(size);
            let a = c.as_ref().map(|c| c.affine());
            size += a.as_ref().map_or(d, |(_, b)| b.ncols());
            affine.push(a);
        }
        Reduced { ops, d, offsets, affine, size }
    }

    /// Field of the linear part: columns `x_i` or `B_i s_i`.
    fn lift(&self, x: &[f64]) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(self.d, self.affine.len());
        for (i, a) in self.affine.iter().enumerate() {
            let o = self.offsets[i];
            match a {
                None => q.column_mut(i).copy_from_slice(&x[o..o + self.d]),
                Some((_, b)) => q.set_column(i, &(b * DVector::from_column_slice(&x[o..o + b.ncols()]))),
            }
        }
        q
    }

    fn restrict(&self, y: &DMatrix<f64>, out: &mut [f64]) {
        for (i, a) in self.affine.iter().enumerate() {
            let o = self.offsets[i];
            match a {
                None => out[o..o + self.d].copy_from_slice(y.column(i).as_slice()),
                Some((_, b)) => {
                    let s = b.transpose() * y.column(i);
                    out[o..o + b.ncols()].copy_from_slice(s.as_slice());
                }
            }
        }
    }

    /// Reduced coordinates of a field lying in the constraint set.
    fn coords(&self, q: &DMatrix<f64>) -> Vec<f64> {
        let mut x = vec![0.0; self.size];
        for (i, a) in self.affine.iter().enumerate() {
            let o = self.offsets[i];
            match a {
                None => x[o..o + self.d].copy_from_slice(q.column(i).as_slice()),
                Some((c, b)) => {
                    let s = b.transpose() * (q.column(i) - c);
                    x[o..o + b.ncols()].copy_from_slice(s.as_slice());
                }
            }
        }
        x
    }

    fn constant_part(&self) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(self.d, self.affine.len());
        for (i, a) in self.affine.iter().enumerate() {
            if let Some((c, _)) = a {
                q.set_column(i, c);
            }
        }
        q
    }

    /// `(M + τS)` applied to a field.
    fn operator(&self, q: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
        let mut y = self.ops.stiffness.apply_field(q) * tau;
        for (i, m) in self.ops.mass.iter().enumerate() {
            y.column_mut(i).axpy(*m, &q.column(i), 1.0);
        }
        y
    }

    /// Minimizes `½‖q̄ − q‖²_M + τ/2·tr(q̄ S q̄ᵀ)` over the constraint set.
    fn diffuse(&self, q: &DMatrix<f64>, tau: f64, tol: f64) -> Result<DMatrix<f64>> {
        let mut mq = q.clone();
        for (i, m) in self.ops.mass.iter().enumerate() {
            mq.column_mut(i).scale_mut(*m);
        }
        let c = self.constant_part();
        let rhs_field = mq - self.operator(&c, tau);
        let mut b = vec![0.0; self.size];
        self.restrict(&rhs_field, &mut b);
        let diag = self.ops.stiffness.diagonal();
        let mut inv = vec![0.0; self.size];
        for (i, a) in self.affine.iter().enumerate() {
            let k = a.as_ref().map_or(self.d, |(_, b)| b.ncols());
            let v = 1.0 / (self.ops.mass[i] + tau * diag[i]);
            inv[self.offsets[i]..self.offsets[i] + k].iter_mut().for_each(|x| *x = v);
        }
        let mut x = self.coords(q);
        let apply = |v: &[f64], out: &mut [f64]| self.restrict(&self.operator(&self.lift(v), tau), out);
        let info = crate::sparse::pcg(apply, &inv, &b, &mut x, tol, 20 * self.size + 100)?;
        log::trace!("diffusion solve: {} iterations, residual {:e}", info.iterations, info.rel_residual);
        Ok(self.lift(&x) + c)
    }
}

/// One diffusion step `(M + τS) q̄ᵀ = M qᵀ` restricted to the boundary charts.
pub fn diffusion_step(field: &FieldState, ops: &FemOperators, tau: f64, tol: f64) -> Result<DMatrix<f64>> {
    check_dims(&field.coeffs, ops)?;
    Reduced::new(field, ops).diffuse(&field.coeffs, tau, tol)
}

#[derive(Debug, Clone, Copy, Default)]
struct ProjectionCounts {
    fallbacks: usize,
    degenerate: usize,
}

fn project_column(rep: Rep, chart: Option<&BoundaryChart>, y: &DMatrix<f64>, i: usize) -> Result<(DVector<f64>, ProjectionCounts)> {
    let mut counts = ProjectionCounts::default();
    let q = match (rep, chart) {
        (Rep::Octa, Some(BoundaryChart::Octa(c))) => {
            let p = projection::project_octa_aligned(&col9(y, i), c);
            counts.degenerate += p.degenerate as usize;
            to_dvec(p.q.as_slice())
        }
        (Rep::Odeco, Some(ch @ BoundaryChart::Odeco(c))) => {
            let p = projection::project_odeco_aligned(&col15(y, i), c)?;
            counts.fallbacks += (!p.exact) as usize;
            ch.to_span(&to_dvec(p.q.as_slice()))
        }
        (Rep::Octa, _) => {
            let p = projection::project_octa(&col9(y, i))?;
            counts.fallbacks += (!p.exact) as usize;
            to_dvec(p.q.as_slice())
        }
        (Rep::Odeco, _) => {
            let p = projection::project_odeco(&col15(y, i))?;
            counts.fallbacks += (!p.exact) as usize;
            to_dvec(p.q.as_slice())
        }
    };
    Ok((q, counts))
}

/// Projects every column onto the variety (aligned columns onto their charts), in parallel.
pub fn project_field(field: &FieldState, y: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize, usize)> {
    let cols: Vec<(DVector<f64>, ProjectionCounts)> = (0..y.ncols())
        .into_par_iter()
        .map(|i| project_column(field.rep, field.charts[i].as_ref(), y, i))
        .collect::<Result<Vec<_>>>()?;
    let fallbacks = cols.iter().map(|c| c.1.fallbacks).sum();
    let degenerate = cols.iter().map(|c| c.1.degenerate).sum();
    let q = DMatrix::from_columns(&cols.into_iter().map(|c| c.0).collect::<Vec<_>>());
    Ok((q, fallbacks, degenerate))
}

/// Diffusion-generated optimization: alternate constrained diffusion and projection.
///
/// Stops when `|E_k − E_{k−1}|/E_k < δ` or `Δ_k < δ`, or after `max_outer` iterations.
pub fn mbo_solve(mut field: FieldState, ops: &FemOperators, cfg: &MboConfig) -> Result<FieldState> {
    check_dims(&field.coeffs, ops)?;
    cfg.validate()?;
    let start = Instant::now();
    let base_iter = field.trace.last().map_or(0, |r| r.iteration + 1);
    let reduced = Reduced::new(&field, ops);
    let mut e_prev = ops.dirichlet_energy(&field.coeffs);
    field.stats.status = SolveStatus::MaxIterations;
    for k in 1..=cfg.max_outer {
        let tau = cfg.schedule.beta(k) * cfg.tau0;
        let diffused = reduced.diffuse(&field.coeffs, tau, cfg.solve_tol)?;
        let (q, fallbacks, degenerate) = project_field(&field, &diffused)?;
        field.stats.fallbacks += fallbacks;
        field.stats.degenerate += degenerate;
        let dq = &q - &field.coeffs;
        let change = ops.mass_inner(&dq, &dq) / ops.mass_inner(&q, &q);
        let e = ops.dirichlet_energy(&q);
        field.coeffs = q;
        field.stats.iterations += 1;
        field.trace.push(TraceRow {
            iteration: base_iter + k - 1,
            energy: e,
            measure: change,
            tau: Some(tau),
            seconds: start.elapsed().as_secs_f64(),
        });
        let rel = (e - e_prev).abs() / e;
        e_prev = e;
        if rel < cfg.delta || change < cfg.delta {
            field.stats.status = SolveStatus::Converged;
            break;
        }
    }
    field.stats.seconds += start.elapsed().as_secs_f64();
    Ok(field)
}

/// Energy summary of a field.
#[derive(Debug, Clone)]
pub struct EnergyReport {
    pub total: f64,
    /// Per-vertex energy density: incident tetrahedron energies shared equally, divided by the lumped mass.
    pub density: Vec<f64>,
    pub max_density: f64,
    pub max_residual: f64,
    pub max_boundary_violation: f64,
}

/// Variety residual of one column (octahedral columns also measure the unit-norm defect).
pub fn column_residual(rep: Rep, q: &DMatrix<f64>, i: usize) -> f64 {
    match rep {
        Rep::Octa => {
            let c = col9(q, i);
            varieties::octa_residual(&c).max((c.norm() - 1.0).abs())
        }
        Rep::Odeco => varieties::odeco_residual(&col15(q, i)),
    }
}

pub fn field_energy_report(field: &FieldState, mesh: &TetMesh, ops: &FemOperators) -> Result<EnergyReport> {
    check_dims(&field.coeffs, ops)?;
    let tet_e = mesh::tet_energies(mesh, &field.coeffs);
    let mut acc = vec![0.0; mesh.num_vertices()];
    for (t, e) in mesh.tets.iter().zip(&tet_e) {
        for &v in t {
            acc[v] += e / 4.0;
        }
    }
    let density: Vec<f64> = acc.iter().zip(&ops.mass).map(|(a, m)| if *m > 0.0 { a / m } else { 0.0 }).collect();
    let max_density = density.iter().copied().fold(0.0, f64::max);
    let max_residual = (0..field.num_vertices())
        .into_par_iter()
        .map(|i| column_residual(field.rep, &field.coeffs, i))
        .reduce(|| 0.0, f64::max);
    Ok(EnergyReport {
        total: ops.dirichlet_energy(&field.coeffs),
        density,
        max_density,
        max_residual,
        max_boundary_violation: boundary_violation(field),
    })
}

/// Largest distance of a constrained column from its chart's affine span.
pub fn boundary_violation(field: &FieldState) -> f64 {
    field
        .charts
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.as_ref().map(|c| c.deviation(&field.coeffs.column(i).into_owned())))
        .fold(0.0, f64::max)
}

/// Trace as CSV: `iteration,energy,measure,tau,seconds`.
pub fn trace_csv(field: &FieldState) -> String {
    let mut s = String::from("iteration,energy,measure,tau,seconds\n");
    for r in &field.trace {
        let tau = r.tau.map_or(String::new(), |t| format!("{t:.10e}"));
        s.push_str(&format!("{},{:.12e},{:.6e},{},{:.4}\n", r.iteration, r.energy, r.measure, tau, r.seconds));
    }
    s
}

/// Coefficients as CSV, one row per vertex, round-trip precision.
pub fn coeffs_csv(field: &FieldState) -> String {
    let d = field.rep.dim();
    let mut s = String::from("vertex");
    for r in 0..d {
        s.push_str(&format!(",c{r}"));
    }
    s.push('\n');
    for i in 0..field.num_vertices() {
        s.push_str(&i.to_string());
        for r in 0..d {
            s.push_str(&format!(",{:e}", field.coeffs[(r, i)]));
        }
        s.push('\n');
    }
    s
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"VFFIELD1";

/// Binary dump: magic, rep, `d`, `n`, mesh hash, then little-endian column-major coefficients.
pub fn checkpoint_bytes(rep: Rep, coeffs: &DMatrix<f64>, mesh_hash: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + mesh_hash.len() + 8 * coeffs.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(match rep {
        Rep::Octa => 0,
        Rep::Odeco => 1,
    });
    out.extend_from_slice(&(coeffs.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(coeffs.ncols() as u64).to_le_bytes());
    out.extend_from_slice(&(mesh_hash.len() as u16).to_le_bytes());
    out.extend_from_slice(mesh_hash.as_bytes());
    for v in coeffs.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decoded checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub rep: Rep,
    pub coeffs: DMatrix<f64>,
    pub mesh_hash: String,
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let mut pos = 0usize;
    let mut take = |k: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + k).ok_or_else(|| bad("truncated"))?;
        pos += k;
        Ok(s)
    };
    if take(8)? != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let rep = match take(1)?[0] {
        0 => Rep::Octa,
        1 => Rep::Odeco,
        r => return Err(bad(&format!("unknown representation tag {r}"))),
    };
    let d = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    if d != rep.dim() {
        return Err(bad(&format!("dimension {d} does not match {rep}")));
    }
    let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let hl = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
    let mesh_hash = String::from_utf8(take(hl)?.to_vec()).map_err(|_| bad("mesh hash is not UTF-8"))?;
    let len = d.checked_mul(n).and_then(|x| x.checked_mul(8)).ok_or_else(|| bad("size overflow"))?;
    let data = take(len)?;
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    let vals: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Checkpoint { rep, coeffs: DMatrix::from_vec(d, n, vals), mesh_hash })
}

pub fn save_checkpoint(path: &Path, field: &FieldState, mesh_hash: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&checkpoint_bytes(field.rep, &field.coeffs, mesh_hash))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    parse_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{fem_operators, generate_cube_mesh};

    fn cube(n: usize) -> (TetMesh, FemOperators) {
        let m = generate_cube_mesh(n).unwrap();
        let ops = fem_operators(&m).unwrap();
        (m, ops)
    }

    #[test]
    fn random_field_is_feasible_and_reproducible() {
        let (m, _) = cube(2);
        let a = random_octa_field(&m, 7, true).unwrap();
        let b = random_octa_field(&m, 7, true).unwrap();
        assert_eq!(a.coeffs, b.coeffs);
        for i in 0..m.num_vertices() {
            assert!(column_residual(Rep::Octa, &a.coeffs, i) < 1e-9);
        }
        assert!(boundary_violation(&a) < 1e-12);
        assert!(a.charts.iter().any(|c| c.is_some()));
    }

    #[test]
    fn lifted_field_is_feasible_with_equal_energy() {
        let (m, ops) = cube(2);
        let a = random_octa_field(&m, 3, true).unwrap();
        let b = lift_to_odeco(&a).unwrap();
        for i in 0..m.num_vertices() {
            assert!(column_residual(Rep::Odeco, &b.coeffs, i) < 1e-9);
        }
        assert!(boundary_violation(&b) < 1e-10);
        let ea = dirichlet_energy(&a.coeffs, &ops).unwrap();
        let eb = dirichlet_energy(&b.coeffs, &ops).unwrap();
        let c2 = octa_lift_scale().powi(2);
        assert!((ea - eb * c2).abs() < 1e-10 * ea.max(1.0));
    }

    #[test]
    fn constant_field_is_critical() {
        let (m, ops) = cube(2);
        let q0 = DVector::from_column_slice(so3::q0().as_slice());
        let f = FieldState::constant(Rep::Octa, &q0, boundary_charts(&m, Rep::Octa, true).unwrap()).unwrap();
        assert!(dirichlet_energy(&f.coeffs, &ops).unwrap() < 1e-24);
        assert!(riemannian_gradient(&f, &ops).unwrap().norm() < 1e-12);
        let out = rtr_solve(f, &ops, &RtrConfig::for_vertices(m.num_vertices())).unwrap();
        assert_eq!(out.stats.status, SolveStatus::Converged);
        assert_eq!(out.stats.iterations, 0);
    }

    #[test]
    fn boundary_gradient_is_along_chart_circle() {
        let (m, ops) = cube(2);
        let f = random_octa_field(&m, 11, true).unwrap();
        let g = riemannian_gradient(&f, &ops).unwrap();
        for (i, c) in f.charts.iter().enumerate() {
            if let Some(BoundaryChart::Octa(c)) = c {
                let t = c.tangent(&col9(&f.coeffs, i));
                let gi = col9(&g, i);
                assert!((gi - t * t.dot(&gi)).norm() < 1e-10 * (1.0 + gi.norm()));
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (m, ops) = cube(2);
        for rep in [Rep::Octa, Rep::Odeco] {
            let f = random_field(&m, rep, 5, true).unwrap();
            let g = riemannian_gradient(&f, &ops).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let raw = DMatrix::from_fn(rep.dim(), m.num_vertices(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let v = tangent_projection(&f, &raw);
            let v = &v / v.norm();
            let t = 1e-4;
            let ep = ops.dirichlet_energy(&retract(&f, &(&v * t)).unwrap());
            let em = ops.dirichlet_energy(&retract(&f, &(&v * -t)).unwrap());
            let fd = (ep - em) / (2.0 * t);
            let an = g.dot(&v);
            assert!((fd - an).abs() < 1e-5 * an.abs().max(1e-3), "{rep}: fd {fd} vs {an}");
        }
    }

    #[test]
    fn diffusion_with_zero_time_is_identity_and_decreases_energy() {
        let (m, ops) = cube(2);
        let f = random_octa_field(&m, 1, true).unwrap();
        let q = diffusion_step(&f, &ops, 0.0, 1e-13).unwrap();
        assert!((&q - &f.coeffs).norm() < 1e-10);
        let free = random_octa_field(&m, 1, false).unwrap();
        let q = diffusion_step(&free, &ops, 0.05, 1e-12).unwrap();
        assert!(ops.dirichlet_energy(&q) <= ops.dirichlet_energy(&free.coeffs) + 1e-10);
    }

    #[test]
    fn mbo_with_zero_delta_runs_all_iterations() {
        let (m, ops) = cube(2);
        let f = random_octa_field(&m, 2, true).unwrap();
        let cfg = MboConfig { delta: 0.0, max_outer: 4, ..MboConfig::new(0.05, Schedule::Constant) };
        let out = mbo_solve(f, &ops, &cfg).unwrap();
        assert_eq!(out.stats.iterations, 4);
        assert_eq!(out.trace.len(), 4);
        assert!(out.trace.iter().all(|r| r.measure >= 0.0));
        assert!(boundary_violation(&out) < 1e-9);
    }

    #[test]
    fn schedule_values() {
        assert_eq!(Schedule::Constant.beta(7), 1.0);
        assert!((Schedule::MMBO.beta(2) - 6.25).abs() < 1e-15);
        assert_eq!("powerlaw".parse::<Schedule>().unwrap(), Schedule::MMBO);
    }

    #[test]
    fn checkpoint_round_trip() {
        let (m, _) = cube(1);
        let f = random_field(&m, Rep::Odeco, 4, true).unwrap();
        let bytes = checkpoint_bytes(f.rep, &f.coeffs, &m.hash());
        let c = parse_checkpoint(&bytes).unwrap();
        assert_eq!(c.rep, Rep::Odeco);
        assert_eq!(c.coeffs, f.coeffs);
        assert_eq!(c.mesh_hash, m.hash());
        assert!(parse_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn report_densities_partition_energy() {
        let (m, ops) = cube(2);
        let f = random_octa_field(&m, 8, true).unwrap();
        let r = field_energy_report(&f, &m, &ops).unwrap();
        let s: f64 = r.density.iter().zip(&ops.mass).map(|(d, m)| d * m).sum();
        assert!((s - r.total).abs() < 1e-9 * r.total.max(1.0));
        assert!(r.max_residual < 1e-9);
    }
}
