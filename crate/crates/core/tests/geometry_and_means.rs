use otthom::geometry::{edge_cut_fraction, Orthotope};
use otthom::graph::{rescale_graph, validate_geometry};
use otthom::means::{MeanKind, MeanSpec};
use otthom::random_graphs::gen_lattice_nn;
use proptest::prelude::*;

fn grid_partition(k: usize, lo: f64, hi: f64) -> Vec<Orthotope> {
    let h = (hi - lo) / k as f64;
    let mut out = Vec::new();
    for i in 0..k {
        for j in 0..k {
            let a = vec![lo + i as f64 * h, lo + j as f64 * h];
            let b = vec![lo + (i + 1) as f64 * h, lo + (j + 1) as f64 * h];
            out.push(Orthotope::new(a, b).unwrap());
        }
    }
    out
}

fn symmetric_means() -> Vec<MeanSpec> {
    vec![
        MeanSpec::new(MeanKind::Arithmetic),
        MeanSpec::new(MeanKind::Geometric),
        MeanSpec::new(MeanKind::Harmonic),
        MeanSpec::new(MeanKind::Logarithmic),
    ]
}

fn all_means() -> Vec<MeanSpec> {
    let mut v = symmetric_means();
    v.push(MeanSpec::weighted(0.3).unwrap());
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn cut_fractions_add_up_over_a_partition(
        x in prop::array::uniform2(-1.9f64..1.9),
        y in prop::array::uniform2(-1.9f64..1.9),
        k in 1usize..6,
    ) {
        prop_assume!((x[0] - y[0]).hypot(x[1] - y[1]) > 1e-6);
        let total: f64 = grid_partition(k, -2.0, 2.0)
            .iter()
            .map(|b| edge_cut_fraction(&x, &y, b).unwrap())
            .sum();
        prop_assert!((total - 1.0).abs() <= 1e-12, "{}", total);
    }

    #[test]
    fn rescaling_composes_exactly(a in 0.01f64..10.0, b in 0.01f64..10.0) {
        let g = gen_lattice_nn(2, &Orthotope::cube(2, -2.0, 2.0).unwrap(), 1.0, MeanSpec::default()).unwrap();
        let twice = rescale_graph(&rescale_graph(&g, a).unwrap(), b).unwrap();
        let once = rescale_graph(&g, a * b).unwrap();
        for i in 0..g.num_vertices() {
            prop_assert_eq!(twice.pos(i), once.pos(i));
        }
    }

    #[test]
    fn means_bounded_by_sum(r in 0.0f64..1e3, s in 0.0f64..1e3) {
        for m in all_means() {
            let t = m.eval(r, s).unwrap();
            prop_assert!(t <= (r + s) * (1.0 + 1e-12) + 1e-300, "{:?} {} {} {}", m, r, s, t);
        }
    }

    #[test]
    fn symmetric_means_between_min_and_max(r in 0.0f64..1e3, s in 0.0f64..1e3) {
        for m in symmetric_means() {
            let t = m.eval(r, s).unwrap();
            let (lo, hi) = (r.min(s), r.max(s));
            prop_assert!(t >= lo * (1.0 - 1e-12) && t <= hi * (1.0 + 1e-12), "{:?} {} {} {}", m, r, s, t);
            prop_assert_eq!(t, m.eval(s, r).unwrap());
        }
    }
}

#[test]
fn weighted_arithmetic_is_not_symmetric() {
    let m = MeanSpec::weighted(0.3).unwrap();
    assert!(!m.is_symmetric());
    assert_ne!(m.eval(1.0, 2.0).unwrap(), m.eval(2.0, 1.0).unwrap());
}

#[test]
fn lattice_passes_validation_on_probe_boxes() {
    let g = gen_lattice_nn(2, &Orthotope::cube(2, -1.0, 9.0).unwrap(), 1.0, MeanSpec::default()).unwrap();
    for (lo, hi) in [(0.0, 2.0), (1.5, 6.5), (0.0, 8.0), (3.0, 4.0)] {
        let b = Orthotope::cube(2, lo, hi).unwrap();
        let rep = validate_geometry(&g, &b, 0.25, 100).unwrap();
        assert!(rep.passed(), "{:?}", rep.violations);
        assert_eq!(rep.max_degree, 4);
    }
}
