//! Property tests for the SDP relaxation and the projections.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use volframe::projection::{self, projector};
use volframe::quartic::{self, Odeco15};
use volframe::sdp;
use volframe::so3::{self, Frame9};
use volframe::varieties;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

fn rotation() -> impl Strategy<Value = Matrix3<f64>> {
    prop::array::uniform4(-1.0f64..1.0)
        .prop_filter("quaternion too small", |q| q.iter().map(|v| v * v).sum::<f64>() > 1e-2)
        .prop_map(|q| {
            UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
                .to_rotation_matrix()
                .into_inner()
        })
}

fn gaussian9(seed: u64) -> Frame9 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Frame9::from_fn(|_, _| rng.sample(StandardNormal))
}

fn gaussian15(seed: u64) -> Odeco15 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Odeco15::from_fn(|_, _| rng.sample(StandardNormal))
}

/// Sampled octahedral frames, used as competitors for the projection.
fn octa_members(seed: u64, count: usize) -> Vec<Frame9> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..count)
        .map(|_| so3::wigner4_from_rotation(&varieties::random_rotation(&mut rng)).unwrap() * so3::q0())
        .collect()
}

fn odeco_members(seed: u64, count: usize) -> Vec<Odeco15> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    (0..count)
        .map(|_| {
            let r = varieties::random_rotation(&mut rng);
            let l = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            quartic::odeco_from_parts(&l, &r)
        })
        .collect()
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn weak_duality(seed in any::<u64>()) {
        let y = gaussian9(seed);
        let sol = sdp::solve(&projector().octa_problem(&y), &projector().options);
        prop_assert!(sol.status.is_solved());
        prop_assert!(sol.dual_obj <= sol.primal_obj + 1e-8 * (1.0 + sol.primal_obj.abs()));
    }

    #[test]
    fn relaxation_bounds_sampled_distances(seed in any::<u64>()) {
        let y = gaussian9(seed);
        let sol = sdp::solve(&projector().octa_problem(&y), &projector().options);
        let best = octa_members(seed, 64).iter().map(|p| (p - y).norm_squared()).fold(f64::INFINITY, f64::min);
        prop_assert!(sol.primal_obj <= best + 1e-8);

        let y = gaussian15(seed);
        let sol = sdp::solve(&projector().odeco_problem(&y), &projector().options);
        let best = odeco_members(seed, 64).iter().map(|p| (p - y).norm_squared()).fold(f64::INFINITY, f64::min);
        prop_assert!(sol.primal_obj <= best + 1e-8);
    }

    #[test]
    fn octa_projection_is_scale_invariant(seed in any::<u64>()) {
        let y = gaussian9(seed);
        let base = projection::project_octa(&y).unwrap();
        prop_assume!(base.exact);
        for c in [0.1, 10.0] {
            let p = projection::project_octa(&(y * c)).unwrap();
            prop_assert!((p.q - base.q).norm() < 1e-7, "c = {c}: {}", (p.q - base.q).norm());
        }
    }

    #[test]
    fn projection_is_idempotent(seed in any::<u64>()) {
        let p = projection::project_octa(&gaussian9(seed)).unwrap();
        let pp = projection::project_octa(&p.q).unwrap();
        prop_assert!((pp.q - p.q).norm() < 1e-8);

        let p = projection::project_odeco(&gaussian15(seed)).unwrap();
        let pp = projection::project_odeco(&p.q).unwrap();
        prop_assert!((pp.q - p.q).norm() < 1e-8);
    }

    #[test]
    fn projection_is_equivariant(seed in any::<u64>(), r in rotation()) {
        let y = gaussian9(seed);
        let w = so3::wigner4_from_rotation(&r).unwrap();
        let a = projection::project_octa(&y).unwrap();
        let b = projection::project_octa(&(w * y)).unwrap();
        if a.exact && b.exact {
            prop_assert!((b.q - w * a.q).norm() < 1e-7);
        }

        let y = gaussian15(seed);
        let w = so3::wigner_odeco_from_rotation(&r).unwrap();
        let a = projection::project_odeco(&y).unwrap();
        let b = projection::project_odeco(&(w * y)).unwrap();
        if a.exact && b.exact {
            prop_assert!((b.q - w * a.q).norm() < 1e-7);
        }
    }

    #[test]
    fn projection_beats_sampled_members(seed in any::<u64>()) {
        let y = gaussian9(seed);
        let p = projection::project_octa(&y).unwrap();
        let d = (p.q - y).norm();
        for m in octa_members(seed, 64) {
            prop_assert!(d <= (m - y).norm() + 1e-8);
        }

        let y = gaussian15(seed);
        let p = projection::project_odeco(&y).unwrap();
        let d = (p.q - y).norm();
        for m in odeco_members(seed, 64) {
            prop_assert!(d <= (m - y).norm() + 1e-8);
        }
    }

    #[test]
    fn certified_bound_is_tight(seed in any::<u64>()) {
        let y = gaussian9(seed);
        let p = projection::project_octa(&y).unwrap();
        if p.exact {
            prop_assert!((p.lower_bound - (p.q - y).norm_squared()).abs() < 1e-7);
        }
        let y = gaussian15(seed);
        let p = projection::project_odeco(&y).unwrap();
        if p.exact {
            prop_assert!((p.lower_bound - (p.q - y).norm_squared()).abs() < 1e-7);
        }
    }
}
