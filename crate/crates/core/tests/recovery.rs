use otthom::density::DensityModel;
use otthom::random_graphs::GeneratorSpec;
use otthom::recovery::{assemble_recovery, RecoveryParams, SmoothCurveSpec};
use otthom::Error;

fn small_case() -> (SmoothCurveSpec, RecoveryParams) {
    let spec = SmoothCurveSpec::translating_bump(vec![-0.125, 0.0], vec![0.25, 0.0], 0.25, 1.0, 0.5);
    let h = 0.5;
    let params = RecoveryParams::new(h, 0.25, 0.25, 0.125, RecoveryParams::minimal_alpha(h, &spec));
    (spec, params)
}

#[test]
fn recovery_invariants_on_small_translation() {
    let (spec, params) = small_case();
    let fam = GeneratorSpec::lattice(2, 0.0, 1.0);
    let rec = assemble_recovery(&spec, &params, &fam, &DensityModel::isotropic(2, 8)).unwrap();
    let a = &rec.audit;
    assert!(a.curve.ce_residual < 1e-4);
    assert!(a.min_depot >= 0.0, "{}", a.min_depot);
    assert!(a.flow_phase_residual <= 1e-8, "{}", a.flow_phase_residual);
    assert!(a.continuity_residual <= 1e-8, "{}", a.continuity_residual);
    assert!(rec.curve.continuity_residual(&rec.graph).unwrap() <= 1e-8);
    assert!(a.max_depot_total <= a.depot_total_bound * (1.0 + 1e-12), "{} > {}", a.max_depot_total, a.depot_total_bound);
    assert!(a.depot_books_residual <= 1e-8 && a.gap_books_residual <= 1e-8);
    assert!(a.max_w_infinity <= a.w_infinity_bound + 1e-12);
    assert!(a.gaps_converged);
    assert!(a.action.is_finite() && a.action > 0.0);
    assert!((a.action - rec.curve.action(&rec.graph).unwrap()).abs() <= 1e-9 * a.action);
}

#[test]
fn alpha_below_threshold_is_rejected() {
    let (spec, mut params) = small_case();
    params.alpha *= 0.5;
    let fam = GeneratorSpec::lattice(2, 0.0, 1.0);
    let err = assemble_recovery(&spec, &params, &fam, &DensityModel::isotropic(2, 8)).unwrap_err();
    assert!(matches!(err, Error::InvalidParams(_)), "{err:?}");
}

#[test]
fn non_lattice_family_is_rejected() {
    let (spec, params) = small_case();
    let fam = GeneratorSpec::perturbed_voronoi(0.0, 1.0, 0.2, 1);
    assert!(assemble_recovery(&spec, &params, &fam, &DensityModel::isotropic(2, 8)).is_err());
}
