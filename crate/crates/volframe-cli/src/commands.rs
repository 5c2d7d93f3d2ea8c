//! Subcommand implementations.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use volframe::mesh::{self, FemOperators, MeshFormat, TetMesh, VtkFrameData};
use volframe::optim::{self, FieldState, MboConfig, Rep, RtrConfig, Schedule, SolveStatus};
use volframe::projection::{self, QueryKind};
use volframe::sdp::SdpStatus;
use volframe::so3::{self, Frame9};
use volframe::varieties::{self, QuadricLibrary};
use volframe::{quartic, Error};

use crate::config::Opts;
use crate::Failure;

/// Feasibility threshold for solver output.
const RESIDUAL_TOL: f64 = 1e-6;
const BOUNDARY_TOL: f64 = 1e-8;

/// Validated options plus provenance hashes.
pub struct Context {
    pub command: &'static str,
    pub opts: Opts,
    pub config_hash: String,
}

fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::input(format!("{what} not found: {}", path.display())))
    }
}

fn require_parent(path: &Path) -> Result<(), Failure> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            Err(Failure::input(format!("output directory does not exist: {}", p.display())))
        }
        _ => Ok(()),
    }
}

impl Context {
    pub fn new(command: &'static str, opts: Opts) -> Result<Self, Failure> {
        if let Some(m) = &opts.mesh {
            let fmt = mesh_format(&opts, m)?;
            if fmt == MeshFormat::Tetgen {
                let stem = match m.extension().and_then(|e| e.to_str()) {
                    Some("node") | Some("ele") => m.with_extension(""),
                    _ => m.clone(),
                };
                require_file(&stem.with_extension("node"), "mesh file")?;
                require_file(&stem.with_extension("ele"), "mesh file")?;
            } else {
                require_file(m, "mesh file")?;
            }
        }
        for (p, what) in [(&opts.quadrics, "quadric file"), (&opts.field, "field file")] {
            if let Some(p) = p {
                require_file(p, what)?;
            }
        }
        for p in [&opts.out, &opts.trace].into_iter().flatten() {
            require_parent(p)?;
        }
        if let Some(q) = &opts.quadrics {
            varieties::install_library(QuadricLibrary::load(q)?)?;
        }
        let config_hash = opts.config_hash(command);
        Ok(Context { command, opts, config_hash })
    }

    /// Provenance line written at the top of every text output.
    pub fn header(&self) -> String {
        format!(
            "# volframe {} command={} config={} quadrics={}",
            env!("CARGO_PKG_VERSION"),
            self.command,
            self.config_hash,
            varieties::builtin().hash
        )
    }

    fn rep(&self) -> Result<Rep, Failure> {
        Ok(self.opts.rep.as_deref().unwrap_or("octa").parse::<Rep>()?)
    }

    fn seed(&self) -> u64 {
        self.opts.seed.unwrap_or(0)
    }

    fn mesh(&self) -> Result<TetMesh, Failure> {
        let o = &self.opts;
        let sources = o.mesh.is_some() as usize + o.cube.is_some() as usize + o.holed_cube.is_some() as usize;
        if sources != 1 {
            return Err(Failure::input("exactly one of --mesh, --cube, --holed-cube is required"));
        }
        let mut m = if let Some(p) = &o.mesh {
            mesh::load_mesh(p, mesh_format(o, p)?)?
        } else if let Some(n) = o.cube {
            mesh::generate_cube_mesh(n)?
        } else {
            mesh::generate_holed_cube_mesh(o.holed_cube.unwrap())?
        };
        if let Some(deg) = o.crease_deg {
            if !(0.0..=180.0).contains(&deg) {
                return Err(Failure::input(format!("--crease-deg must be in [0, 180], got {deg}")));
            }
            m.compute_normals(deg);
        }
        Ok(m)
    }

    fn write_text(&self, path: &Path, body: &str) -> Result<(), Failure> {
        std::fs::write(path, format!("{}\n{body}", self.header()))
            .map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))
    }
}

fn mesh_format(o: &Opts, path: &Path) -> Result<MeshFormat, Failure> {
    match &o.format {
        Some(f) => Ok(f.parse::<MeshFormat>()?),
        None => Ok(mesh::format_from_path(path)),
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Failure::input(format!("invalid number '{t}' in {what}"))))
        .collect()
}

pub fn derive_quadrics(ctx: &Context) -> Result<(), Failure> {
    let seed = ctx.opts.seed.unwrap_or(varieties::DEFAULT_SEED);
    let (s_octa, s_odeco) = match ctx.opts.samples {
        Some(s) => (s, s),
        None => (2000, 5000),
    };
    let octa = varieties::derive_octa_quadrics(s_octa, seed)?;
    let odeco = varieties::derive_odeco_quadrics(s_odeco, seed.wrapping_add(1))?;
    println!("octa quadrics {} (singular-value gap {:.3e})", octa.set.len(), octa.gap);
    println!("odeco quadrics {} (singular-value gap {:.3e})", odeco.set.len(), odeco.gap);
    let builtin = varieties::builtin();
    println!(
        "principal angle to active data: octa {:.3e}, odeco {:.3e}",
        octa.set.max_principal_angle(&builtin.octa),
        odeco.set.max_principal_angle(&builtin.odeco)
    );
    let lib = QuadricLibrary::new(octa.set, odeco.set);
    let out = ctx.opts.out.clone().unwrap_or_else(|| PathBuf::from("quadrics.txt"));
    lib.save(&out)?;
    println!("wrote {} (sha256 {})", out.display(), lib.hash);
    Ok(())
}

fn mbo_config(ctx: &Context, mesh: &TetMesh, ops: &FemOperators, default: Schedule) -> Result<MboConfig, Failure> {
    let tau0 = match ctx.opts.tau0 {
        Some(t) => t,
        None => optim::default_tau0(mesh, ops)?,
    };
    let schedule = match &ctx.opts.schedule {
        Some(s) => s.parse::<Schedule>()?,
        None => default,
    };
    let mut cfg = MboConfig::new(tau0, schedule);
    if let Some(d) = ctx.opts.delta {
        cfg.delta = d;
    }
    if let Some(m) = ctx.opts.max_outer {
        cfg.max_outer = m;
    }
    Ok(cfg)
}

fn rtr_config(ctx: &Context, n: usize) -> RtrConfig {
    let mut cfg = RtrConfig::for_vertices(n);
    if let Some(g) = ctx.opts.grad_tol {
        cfg.grad_tol = g;
    }
    if let Some(m) = ctx.opts.max_outer {
        cfg.max_outer = m;
    }
    cfg
}

/// Axes of each frame scaled by their weights (unit for octahedral frames).
fn frame_axes(rep: Rep, coeffs: &DMatrix<f64>) -> Vec<[Vector3<f64>; 3]> {
    (0..coeffs.ncols())
        .into_par_iter()
        .map(|i| {
            let q = match rep {
                Rep::Octa => {
                    quartic::octa_to_odeco_unchecked(&Frame9::from_iterator(coeffs.column(i).iter().copied()))
                        / optim::octa_lift_scale()
                }
                Rep::Odeco => quartic::Odeco15::from_iterator(coeffs.column(i).iter().copied()),
            };
            match quartic::tensor_decompose(&q, 200, 1e-12) {
                Ok(d) => [0, 1, 2].map(|k| d.axes.column(k) * d.lambdas[k]),
                Err(_) => [Vector3::zeros(); 3],
            }
        })
        .collect()
}

fn vtk_for(ctx: &Context, mesh: &TetMesh, field: &FieldState, ops: &FemOperators) -> Result<String, Failure> {
    let report = optim::field_energy_report(field, mesh, ops)?;
    let residual: Vec<f64> = (0..field.num_vertices()).map(|i| optim::column_residual(field.rep, &field.coeffs, i)).collect();
    let axes = frame_axes(field.rep, &field.coeffs);
    let scalars = [("energy_density", report.density), ("residual", residual)];
    let data = VtkFrameData { coeffs: &field.coeffs, axes: &axes, scalars: &scalars };
    Ok(mesh::to_vtk(mesh, ctx.header().trim_start_matches("# "), Some(&data)))
}

pub fn solve(ctx: &Context) -> Result<(), Failure> {
    let start = Instant::now();
    let mesh = ctx.mesh()?;
    let ops = mesh::fem_operators(&mesh)?;
    let rep = ctx.rep()?;
    let solver = ctx.opts.solver.as_deref().unwrap_or("rtr");
    if !["rtr", "mbo", "mmbo", "mbo-then-rtr"].contains(&solver) {
        return Err(Failure::input(format!("unknown solver '{solver}' (rtr, mbo, mmbo, mbo-then-rtr)")));
    }
    let field = optim::random_field(&mesh, rep, ctx.seed(), ctx.opts.align.unwrap_or(true))?;
    let n = mesh.num_vertices();
    let field = match solver {
        "rtr" => optim::rtr_solve(field, &ops, &rtr_config(ctx, n))?,
        "mbo" => optim::mbo_solve(field, &ops, &mbo_config(ctx, &mesh, &ops, Schedule::Constant)?)?,
        "mmbo" => optim::mbo_solve(field, &ops, &mbo_config(ctx, &mesh, &ops, Schedule::MMBO)?)?,
        _ => {
            let f = optim::mbo_solve(field, &ops, &mbo_config(ctx, &mesh, &ops, Schedule::MMBO)?)?;
            optim::rtr_solve(f, &ops, &rtr_config(ctx, n))?
        }
    };
    let report = optim::field_energy_report(&field, &mesh, &ops)?;
    println!("final_energy {:.12e}", report.total);
    println!("iterations {}", field.stats.iterations);
    println!("wall_seconds {:.3}", start.elapsed().as_secs_f64());
    println!("status {:?}", field.stats.status);
    println!("max_residual {:.3e}", report.max_residual);
    println!("boundary_violation {:.3e}", report.max_boundary_violation);
    println!("max_energy_density {:.6e}", report.max_density);
    println!("projection_fallbacks {}", field.stats.fallbacks);

    if let Some(prefix) = &ctx.opts.out {
        let hash = mesh.hash();
        optim::save_checkpoint(&with_suffix(prefix, ".field"), &field, &hash)?;
        ctx.write_text(&with_suffix(prefix, ".coeffs.csv"), &optim::coeffs_csv(&field))?;
        let vtk = vtk_for(ctx, &mesh, &field, &ops)?;
        std::fs::write(with_suffix(prefix, ".vtk"), vtk)?;
    }
    let trace = ctx.opts.trace.clone().or_else(|| ctx.opts.out.as_ref().map(|p| with_suffix(p, ".trace.csv")));
    if let Some(t) = trace {
        ctx.write_text(&t, &optim::trace_csv(&field))?;
    }
    if report.max_residual > RESIDUAL_TOL || report.max_boundary_violation > BOUNDARY_TOL {
        return Err(Failure::numerical(format!(
            "output is infeasible (residual {:.3e}, boundary violation {:.3e})",
            report.max_residual, report.max_boundary_violation
        )));
    }
    if field.stats.status == SolveStatus::LineFailure {
        log::warn!("trust region stopped without meeting the gradient tolerance; best iterate written");
    }
    Ok(())
}

pub fn project(ctx: &Context) -> Result<(), Failure> {
    let point = ctx.opts.point.as_deref().ok_or_else(|| Failure::input("--point is required"))?;
    let y = parse_list(point, "--point")?;
    let rep = match (y.len(), &ctx.opts.rep) {
        (9, None) => Rep::Octa,
        (15, None) => Rep::Odeco,
        (_, Some(_)) => ctx.rep()?,
        (k, None) => return Err(Failure::input(format!("--point needs 9 or 15 values, got {k}"))),
    };
    if y.len() != rep.dim() {
        return Err(Error::DimensionMismatch { expected: rep.dim(), got: y.len() }.into());
    }
    let (q, ratio, exact, bound): (Vec<f64>, f64, bool, f64) = match rep {
        Rep::Octa => {
            let p = projection::project_octa(&Frame9::from_column_slice(&y))?;
            (p.q.as_slice().to_vec(), p.ratio, p.exact, p.lower_bound)
        }
        Rep::Odeco => {
            let p = projection::project_odeco(&quartic::Odeco15::from_column_slice(&y))?;
            (p.q.as_slice().to_vec(), p.ratio, p.exact, p.lower_bound)
        }
    };
    let dist2: f64 = q.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
    let coeffs = q.iter().map(|v| format!("{v:.12e}")).collect::<Vec<_>>().join(",");
    println!("projection {coeffs}");
    println!("squared_distance {dist2:.12e}");
    println!("sdp_lower_bound {bound:.12e}");
    println!("eigenvalue_ratio {ratio:.3e}");
    println!("certified {exact}");
    if let Some(out) = &ctx.opts.out {
        let body = format!("rep,squared_distance,ratio,certified,coefficients\n{rep},{dist2:e},{ratio:e},{exact},\"{coeffs}\"\n");
        ctx.write_text(out, &body)?;
    }
    Ok(())
}

/// Log-binned histogram: one bin per decade on `[1e-20, 1)`, plus underflow and overflow bins.
pub fn ratio_histogram(ratios: &[f64]) -> Vec<(f64, f64, usize)> {
    let mut bins: Vec<(f64, f64, usize)> = Vec::new();
    bins.push((0.0, 1e-20, 0));
    for k in -20..0 {
        bins.push((10f64.powi(k), 10f64.powi(k + 1), 0));
    }
    bins.push((1.0, f64::INFINITY, 0));
    for &r in ratios {
        let idx = if !(r >= 1e-20) {
            0
        } else if r >= 1.0 {
            bins.len() - 1
        } else {
            ((r.log10().floor() as i32 + 21) as usize).clamp(1, bins.len() - 2)
        };
        bins[idx].2 += 1;
    }
    bins
}

pub fn exactness_test(ctx: &Context) -> Result<(), Failure> {
    let kind: QueryKind = match (&ctx.opts.variety, &ctx.opts.rep) {
        (Some(v), _) => v.parse()?,
        (None, Some(r)) => r.parse()?,
        (None, None) => QueryKind::Octa,
    };
    let trials = ctx.opts.trials.unwrap_or(1000);
    if trials == 0 {
        return Err(Failure::input("--trials must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed());
    let queries: Vec<DVector<f64>> = (0..trials).map(|_| projection::sample_query(kind, &mut rng)).collect();
    let start = Instant::now();
    let results: Vec<projection::ExactnessTrial> =
        queries.par_iter().map(|y| projection::exactness_trial(kind, y)).collect();
    let ratios: Vec<f64> = results.iter().map(|r| r.ratio).collect();
    let failed = results.iter().filter(|r| r.status != SdpStatus::Optimal).count();
    let above = ratios.iter().filter(|r| !(**r <= 1e-8)).count();
    let max_ratio = ratios.iter().copied().fold(0.0, |a: f64, b| if b.is_nan() { f64::NAN } else { a.max(b) });
    println!("trials {trials}");
    println!("max_ratio {max_ratio:.3e}");
    println!("ratio_above_1e-8 {above}");
    println!("not_optimal {failed}");
    println!("seconds {:.2}", start.elapsed().as_secs_f64());
    let mut csv = String::from("lower,upper,count\n");
    for (lo, hi, c) in ratio_histogram(&ratios) {
        let _ = writeln!(csv, "{lo:e},{hi:e},{c}");
    }
    let _ = writeln!(csv, "# max_ratio {max_ratio:e}");
    match &ctx.opts.out {
        Some(p) => ctx.write_text(p, &csv)?,
        None => print!("{}\n{csv}", ctx.header()),
    }
    if failed * 1000 > trials {
        return Err(Failure::numerical(format!("{failed} of {trials} solves did not reach Optimal")));
    }
    Ok(())
}

pub fn geodesic(ctx: &Context) -> Result<(), Failure> {
    let q_start: Frame9 = match ctx.opts.start.as_deref() {
        None | Some("q0") => so3::q0(),
        Some(s) if s.starts_with("rot:") => {
            let v = parse_list(&s[4..], "--start")?;
            if v.len() != 3 {
                return Err(Failure::input("rot: start needs three generator coefficients"));
            }
            so3::wigner4(&Vector3::new(v[0], v[1], v[2])) * so3::q0()
        }
        Some(s) => {
            let v = parse_list(s, "--start")?;
            if v.len() != 9 {
                return Err(Failure::input(format!("--start needs 9 coefficients, got {}", v.len())));
            }
            let q = Frame9::from_column_slice(&v);
            let res = varieties::octa_residual(&q).max((q.norm() - 1.0).abs());
            if res > 1e-6 {
                return Err(Failure::input(format!("--start is not on the octahedral variety (residual {res:.3e})")));
            }
            q
        }
    };
    let v = parse_list(ctx.opts.velocity.as_deref().ok_or_else(|| Failure::input("--velocity is required"))?, "--velocity")?;
    if v.len() != 3 {
        return Err(Failure::input("--velocity needs three generator coefficients"));
    }
    let v = Vector3::new(v[0], v[1], v[2]);
    let steps = ctx.opts.steps.unwrap_or(100).max(1);
    let mut csv = String::from("step,t");
    for k in 0..9 {
        let _ = write!(csv, ",c{k}");
    }
    csv.push_str(",residual\n");
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        let q = so3::octa_exp(&q_start, &(v * t))?;
        let res = varieties::octa_residual(&q).max((q.norm() - 1.0).abs());
        let _ = write!(csv, "{k},{t:e}");
        for c in q.iter() {
            let _ = write!(csv, ",{c:e}");
        }
        let _ = writeln!(csv, ",{res:e}");
    }
    match &ctx.opts.out {
        Some(p) => ctx.write_text(p, &csv)?,
        None => print!("{}\n{csv}", ctx.header()),
    }
    Ok(())
}

pub fn export_vtk(ctx: &Context) -> Result<(), Failure> {
    let path = ctx.opts.field.as_ref().ok_or_else(|| Failure::input("--field is required"))?;
    let ck = optim::load_checkpoint(path)?;
    let mesh = ctx.mesh()?;
    if ck.mesh_hash != mesh.hash() {
        return Err(Failure::input("field checkpoint was computed on a different mesh"));
    }
    let ops = mesh::fem_operators(&mesh)?;
    let charts = optim::boundary_charts(&mesh, ck.rep, ctx.opts.align.unwrap_or(true))?;
    let field = FieldState::new(ck.rep, ck.coeffs, charts)?;
    let out = ctx.opts.out.clone().unwrap_or_else(|| with_suffix(path, ".vtk"));
    std::fs::write(&out, vtk_for(ctx, &mesh, &field, &ops)?)?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn info(ctx: &Context) -> Result<(), Failure> {
    let lib = varieties::builtin();
    println!("version {}", env!("CARGO_PKG_VERSION"));
    println!("quadrics {} octa, {} odeco (sha256 {})", lib.octa.len(), lib.odeco.len(), lib.hash);
    let o = &ctx.opts;
    if o.mesh.is_none() && o.cube.is_none() && o.holed_cube.is_none() {
        return Ok(());
    }
    let mesh = ctx.mesh()?;
    let ops = mesh::fem_operators(&mesh)?;
    let creases = mesh.crease.iter().filter(|c| **c).count();
    println!("vertices {}", mesh.num_vertices());
    println!("tetrahedra {}", mesh.tets.len());
    println!("boundary_vertices {}", mesh.boundary_vertices.len());
    println!("boundary_faces {}", mesh.boundary_faces.len());
    println!("crease_vertices {creases} (threshold {} deg)", mesh.crease_deg);
    println!("nonmanifold_edges {}", mesh.nonmanifold_edges);
    println!("components {}", mesh.components().0);
    println!("boundary_euler {}", mesh.boundary_euler());
    println!("volume {:.12e}", mesh.volume());
    println!("mesh_sha256 {}", mesh.hash());
    let lambda = mesh::smallest_nonzero_stiffness_eigenvalue(&mesh, &ops, false)?;
    println!("smallest_eigenvalue {lambda:.6e}");
    println!("default_tau0 {:.6e}", 1.0 / lambda);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_bins_by_decade() {
        let h = ratio_histogram(&[0.0, 3e-9, 5e-9, 0.5, 2.0]);
        let find = |x: f64| h.iter().position(|(lo, hi, _)| x >= *lo && x < *hi).unwrap();
        assert_eq!(h[find(4e-9)].2, 2);
        assert_eq!(h[0].2, 1);
        assert_eq!(h[find(0.5)].2, 1);
        assert_eq!(h.last().unwrap().2, 1);
        assert_eq!(h.iter().map(|b| b.2).sum::<usize>(), 5);
    }

    #[test]
    fn suffix_appends() {
        assert_eq!(with_suffix(Path::new("out/run"), ".vtk"), PathBuf::from("out/run.vtk"));
    }
}
