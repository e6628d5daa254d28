mod common;

use common::{dense_m, random_smooth_field, random_state, tangent_instance as check_instance, tangent_minimizer};
use dbo_rom::lowrank::{dbo_rhs, SkewGauge};
use dbo_rom::transport::{project_model_rhs, DiffusivitySpec, SourceModel, VelocityField};
use dbo_rom::Grid1D;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn derivative_matches_constrained_least_squares() {
    let (err, resid) = check_instance(17, 4, 2, false);
    assert!(err < 1e-9, "{err}");
    assert!(resid < 1e-10, "{resid}");
}

#[test]
fn pure_advection_leaves_species_modes_fixed() {
    let g = Grid1D::periodic_2pi(16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = random_state(g, 5, 2, &mut rng);
    let v = VelocityField::new(random_smooth_field(g, 3, &mut rng), 0.0).unwrap();
    let p = project_model_rhs(&s, &v, &DiffusivitySpec::zero(5), &SourceModel::none(), 0.0).unwrap();
    let d = dbo_rhs(&s, &p.my, &p.mtu, &SkewGauge::zero(2)).unwrap();
    assert!(d.dy.iter().all(|&x| x == 0.0));
    // the dense oracle agrees that nothing leaves span(Y)
    let (_, _, dy) = tangent_minimizer(&s, &dense_m(&s, &v, &DiffusivitySpec::zero(5), &SourceModel::none()));
    assert!(dy.norm() < 1e-12, "{}", dy.norm());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]
    #[test]
    fn tangent_optimality_on_random_models(seed in any::<u64>(), ns in 3usize..=6, r in 1usize..=3, src in any::<bool>()) {
        let (err, resid) = check_instance(seed, ns, r.min(ns), src);
        prop_assert!(err < 1e-9, "minimizer mismatch {err}");
        prop_assert!(resid < 1e-10, "residual {resid}");
    }
}

