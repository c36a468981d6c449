use otthom::cell::{assemble_cell_problem, competitor_energy, solve_cell, solve_cell_with, CellOptions};
use otthom::density::family_graph;
use otthom::energy::MassDistribution;
use otthom::geodesic::{audit_apriori_bound, solve_geodesic, GeodesicProblem};
use otthom::geometry::Orthotope;
use otthom::means::MeanSpec;
use otthom::random_graphs::{gen_lattice_nn, GeneratorSpec};
use otthom::wasserstein::earth_mover_w1;
use proptest::prelude::*;

const TOL: f64 = 1e-9;

fn unit() -> Orthotope {
    Orthotope::cube(2, 0.0, 1.0).unwrap()
}

fn direction(a: f64) -> Vec<f64> {
    vec![a.cos(), a.sin()]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn cell_value_is_two_homogeneous(seed in 0u64..1000, angle in 0.0f64..std::f64::consts::TAU) {
        let fam = GeneratorSpec::random_conductance(2, 0.0, 1.0, 1.0, 4.0, seed);
        let g = family_graph(&fam, &unit(), 0.25, seed).unwrap();
        let v = direction(angle);
        let base = solve_cell(&assemble_cell_problem(&g, &unit(), &v, 0.25).unwrap(), TOL).unwrap().value;
        for l in [2.0, 3.0, 0.5] {
            let lv: Vec<f64> = v.iter().map(|x| l * x).collect();
            let f = solve_cell(&assemble_cell_problem(&g, &unit(), &lv, 0.25).unwrap(), TOL).unwrap().value;
            prop_assert!((f - l * l * base).abs() <= 2.0 * TOL * f, "{} vs {}", f, l * l * base);
        }
    }

    #[test]
    fn cell_certificate(seed in 0u64..1000, angle in 0.0f64..std::f64::consts::TAU) {
        let fam = GeneratorSpec::random_conductance(2, 0.0, 1.0, 1.0, 4.0, seed);
        let g = family_graph(&fam, &unit(), 0.25, seed).unwrap();
        let p = assemble_cell_problem(&g, &unit(), &direction(angle), 0.25).unwrap();
        let s = solve_cell(&p, TOL).unwrap();
        prop_assert!(s.converged);
        prop_assert!(s.value <= s.competitor_value * (1.0 + TOL));
        prop_assert!((s.competitor_value - competitor_energy(&p) / unit().volume().powi(2)).abs() <= 1e-12 * s.competitor_value);
        prop_assert!(s.divergence_residual <= 1e-9, "{}", s.divergence_residual);
        let in_q: f64 = p.var_vertex.iter().map(|&x| s.masses[x]).sum();
        prop_assert!((in_q - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn cell_value_monotone_in_conductance(
        seed in 0u64..1000,
        angle in 0.0f64..std::f64::consts::TAU,
        bump in prop::collection::vec(0.0f64..2.0, 1..8),
    ) {
        let fam = GeneratorSpec::random_conductance(2, 0.0, 1.0, 1.0, 4.0, seed);
        let g = family_graph(&fam, &unit(), 0.25, seed).unwrap();
        let sig: Vec<f64> = g.edges().iter().enumerate().map(|(k, e)| e.sigma + bump[k % bump.len()]).collect();
        let h = g.clone().with_sigmas(&sig).unwrap();
        let v = direction(angle);
        let opts = CellOptions { tol: TOL, ..CellOptions::default() };
        let f = solve_cell_with(&assemble_cell_problem(&g, &unit(), &v, 0.25).unwrap(), opts).unwrap().value;
        let f2 = solve_cell_with(&assemble_cell_problem(&h, &unit(), &v, 0.25).unwrap(), opts).unwrap().value;
        prop_assert!(f <= f2 + TOL * f2, "{} > {}", f, f2);
    }
}

fn random_mass(w: &[f64]) -> MassDistribution {
    let t: f64 = w.iter().sum();
    MassDistribution::new(w.iter().map(|x| x / t).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn geodesic_invariants(
        a in prop::collection::vec(0.0f64..1.0, 16),
        b in prop::collection::vec(0.0f64..1.0, 16),
        steps in 2usize..6,
    ) {
        prop_assume!(a.iter().sum::<f64>() > 0.1 && b.iter().sum::<f64>() > 0.1);
        let g = gen_lattice_nn(2, &Orthotope::cube(2, 0.0, 3.0).unwrap(), 1.0, MeanSpec::default()).unwrap();
        let (m0, m1) = (random_mass(&a), random_mass(&b));
        let p = GeodesicProblem::new(m0.clone(), m1.clone(), steps).unwrap().with_tol(TOL);
        let fwd = solve_geodesic(&g, &p).unwrap();
        prop_assert!(fwd.report.converged);
        prop_assert!(fwd.report.continuity_residual <= 1e-9);
        prop_assert!(fwd.report.mass_defect <= 1e-9);

        let back = solve_geodesic(&g, &GeodesicProblem::new(m1.clone(), m0.clone(), steps).unwrap().with_tol(TOL)).unwrap();
        let (x, y) = (fwd.report.action, back.report.action);
        prop_assert!((x - y).abs() <= 2.0 * TOL * x.max(y) + 1e-14, "{} vs {}", x, y);

        let slow = solve_geodesic(&g, &p.clone().with_total_time(2.0)).unwrap();
        prop_assert!((slow.report.action - 0.5 * x).abs() <= 2.0 * TOL * x + 1e-14, "{} vs {}", slow.report.action, x);

        let tau = 1.0 / steps as f64;
        let tv: f64 = fwd.curve.flows.iter()
            .map(|j| tau * j.iter().enumerate().map(|(k, v)| v.abs() * g.edge_length(k)).sum::<f64>())
            .sum();
        let w1 = earth_mover_w1(&g, &m0, &m1).unwrap();
        prop_assert!(w1 <= tv + 1e-9, "{} > {}", w1, tv);
        prop_assert!(audit_apriori_bound(&g, &fwd.curve).unwrap().holds);
    }
}

#[test]
fn doubling_time_and_steps_halves_action_up_to_discretisation() {
    let g = gen_lattice_nn(1, &Orthotope::cube(1, 0.0, 16.0).unwrap(), 1.0, MeanSpec::default()).unwrap().rescale(1.0 / 16.0).unwrap();
    let bump = |c: f64| {
        let w: Vec<f64> = (0..=16)
            .map(|i| {
                let s = (i as f64 / 16.0 - c) / 0.25;
                if s.abs() < 1.0 { (std::f64::consts::FRAC_PI_2 * s).cos().powi(2) } else { 0.0 }
            })
            .collect();
        random_mass(&w)
    };
    let (m0, m1) = (bump(0.3), bump(0.7));
    let a = solve_geodesic(&g, &GeodesicProblem::new(m0.clone(), m1.clone(), 8).unwrap()).unwrap().report.action;
    let b = solve_geodesic(&g, &GeodesicProblem::new(m0, m1, 16).unwrap().with_total_time(2.0)).unwrap().report.action;
    assert!((b - 0.5 * a).abs() <= 0.02 * a, "{b} vs {}", 0.5 * a);
}
