//! Smooths an octahedral field on a cube with a hole: a few power-law MBO
//! steps followed by the trust-region solver.

use volframe::mesh;
use volframe::optim::{self, MboConfig, Rep, RtrConfig, Schedule};

fn main() -> volframe::Result<()> {
    let m = mesh::generate_holed_cube_mesh(2)?;
    let ops = mesh::fem_operators(&m)?;
    let field = optim::random_field(&m, Rep::Octa, 0, true)?;
    println!("initial energy {:.6}", ops.dirichlet_energy(&field.coeffs));

    let tau0 = optim::default_tau0(&m, &ops)?;
    let field = optim::mbo_solve(field, &ops, &MboConfig::new(tau0, Schedule::MMBO))?;
    println!("after MBO      {:.6} ({} iterations)", ops.dirichlet_energy(&field.coeffs), field.stats.iterations);

    let field = optim::rtr_solve(field, &ops, &RtrConfig::for_vertices(m.num_vertices()))?;
    let report = optim::field_energy_report(&field, &m, &ops)?;
    println!("after RTR      {:.6} ({:?})", report.total, field.stats.status);
    println!("max residual {:.2e}, max energy density {:.3}", report.max_residual, report.max_density);
    Ok(())
}
