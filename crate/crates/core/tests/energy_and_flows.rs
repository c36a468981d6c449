use otthom::energy::{
    divergence, energy, localized_energy, pentagram_product, FlowField, MassDistribution,
};
use otthom::geometry::Orthotope;
use otthom::graph::EmbeddedGraph;
use otthom::means::{MeanKind, MeanSpec};
use otthom::random_graphs::{gen_lattice_nn, gen_random_conductance};
use otthom::uniform_flow::{build_lattice_map, divergence_repair, uniform_representative};
use proptest::prelude::*;

fn patch(mean: MeanSpec) -> EmbeddedGraph {
    gen_random_conductance(2, &Orthotope::cube(2, 0.0, 5.0).unwrap(), 1.0, 4.0, 11, mean).unwrap()
}

fn means() -> impl Strategy<Value = MeanSpec> {
    prop_oneof![
        Just(MeanSpec::new(MeanKind::Arithmetic)),
        Just(MeanSpec::new(MeanKind::Geometric)),
        Just(MeanSpec::new(MeanKind::Harmonic)),
        Just(MeanSpec::new(MeanKind::Logarithmic)),
    ]
}

const NV: usize = 36;
const NE: usize = 60;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn energy_homogeneity(
        mean in means(),
        m in prop::collection::vec(0.01f64..1.0, NV),
        j in prop::collection::vec(-1.0f64..1.0, NE),
        c in 0.1f64..10.0,
    ) {
        let g = patch(mean);
        let mm = MassDistribution::new(m.clone()).unwrap();
        let jj = FlowField::new(j.clone()).unwrap();
        let e = energy(&g, &mm, &jj).unwrap();
        let e_j = energy(&g, &mm, &jj.scaled(c)).unwrap();
        let cm = MassDistribution::new(m.iter().map(|x| c * x).collect()).unwrap();
        let e_mj = energy(&g, &cm, &jj.scaled(c)).unwrap();
        prop_assert!((e_j - c * c * e).abs() <= 1e-12 * e_j.abs());
        prop_assert!((e_mj - c * e).abs() <= 1e-12 * e_mj.abs());
    }

    #[test]
    fn energy_joint_convexity(
        mean in means(),
        m0 in prop::collection::vec(0.01f64..1.0, NV),
        m1 in prop::collection::vec(0.01f64..1.0, NV),
        j0 in prop::collection::vec(-1.0f64..1.0, NE),
        j1 in prop::collection::vec(-1.0f64..1.0, NE),
    ) {
        let g = patch(mean);
        let f = |m: &[f64], j: &[f64]| {
            energy(&g, &MassDistribution::new(m.to_vec()).unwrap(), &FlowField::new(j.to_vec()).unwrap()).unwrap()
        };
        let mid = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect::<Vec<_>>();
        let lhs = f(&mid(&m0, &m1), &mid(&j0, &j1));
        prop_assert!(lhs <= 0.5 * f(&m0, &j0) + 0.5 * f(&m1, &j1) + 1e-10);
    }

    #[test]
    fn localized_energy_is_additive(
        m in prop::collection::vec(0.01f64..1.0, NV),
        j in prop::collection::vec(-1.0f64..1.0, NE),
        cuts in prop::array::uniform2(0.3f64..4.7),
    ) {
        let g = patch(MeanSpec::default());
        let mm = MassDistribution::new(m).unwrap();
        let jj = FlowField::new(j).unwrap();
        let (a, b) = (cuts[0].min(cuts[1]), cuts[0].max(cuts[1]) + 0.1);
        let boxes = vec![
            Orthotope::new(vec![-1.0, -1.0], vec![a, 6.0]).unwrap(),
            Orthotope::new(vec![a, -1.0], vec![b, 2.5]).unwrap(),
            Orthotope::new(vec![b, 0.5], vec![6.0, 6.0]).unwrap(),
        ];
        let parts: f64 = boxes.iter().map(|q| localized_energy(&g, &mm, &jj, std::slice::from_ref(q)).unwrap()).sum();
        let union = localized_energy(&g, &mm, &jj, &boxes).unwrap();
        prop_assert!((parts - union).abs() <= 1e-10 * union.abs().max(1e-300));
    }

    #[test]
    fn pentagram_product_rule(
        eta in prop::collection::vec(-2.0f64..2.0, NV),
        j in prop::collection::vec(-1.0f64..1.0, NE),
    ) {
        let g = patch(MeanSpec::default());
        let jj = FlowField::new(j).unwrap();
        let lhs = divergence(&g, &pentagram_product(&g, &eta, &jj).unwrap());
        let div = divergence(&g, &jj);
        for x in 0..g.num_vertices() {
            let mut rhs = eta[x] * div[x];
            for &(y, k) in g.neighbors(x) {
                rhs += 0.5 * (eta[y] - eta[x]) * jj.oriented(&g, k, x);
            }
            prop_assert!((lhs[x] - rhs).abs() <= 1e-12, "{} vs {}", lhs[x], rhs);
        }
    }

    #[test]
    fn flow_json_round_trip(j in prop::collection::vec(-1e3f64..1e3, 1..50)) {
        let f = FlowField::new(j).unwrap();
        let back: FlowField = serde_json::from_str(&serde_json::to_string(&f).unwrap()).unwrap();
        prop_assert_eq!(back, f);
    }

    #[test]
    fn uniform_representative_is_linear(
        a in -8i32..8, b in -8i32..8,
        v in prop::array::uniform2(-8i32..8),
        w in prop::array::uniform2(-8i32..8),
    ) {
        // dyadic inputs keep every product and sum exact
        let d = |k: i32| k as f64 / 8.0;
        let g = gen_lattice_nn(2, &Orthotope::cube(2, -1.0, 5.0).unwrap(), 1.0, MeanSpec::default())
            .unwrap()
            .rescale(0.25)
            .unwrap();
        let map = build_lattice_map(&g, 0.25, &Orthotope::cube(2, 0.0, 1.0).unwrap()).unwrap();
        let (v, w) = ([d(v[0]), d(v[1])], [d(w[0]), d(w[1])]);
        let comb = [d(a) * v[0] + d(b) * w[0], d(a) * v[1] + d(b) * w[1]];
        let lhs = uniform_representative(&g, &map, &comb).unwrap();
        let mut rhs = uniform_representative(&g, &map, &v).unwrap().scaled(d(a));
        rhs.axpy(d(b), &uniform_representative(&g, &map, &w).unwrap());
        prop_assert_eq!(lhs.values(), rhs.values());
    }
}

fn manhattan(g: &EmbeddedGraph, a: usize, b: usize) -> f64 {
    let (p, q) = (g.pos(a), g.pos(b));
    (p[0] - q[0]).abs() + (p[1] - q[1]).abs()
}

/// Minimum over all matchings of sources to sinks: the graph W₁ for equal
/// unit masses on a unit lattice.
fn matching_cost(g: &EmbeddedGraph, src: &[usize], dst: &[usize]) -> f64 {
    fn rec(g: &EmbeddedGraph, src: &[usize], dst: &mut Vec<usize>, i: usize) -> f64 {
        if i == src.len() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for k in i..dst.len() {
            dst.swap(i, k);
            best = best.min(manhattan(g, src[i], dst[i]) + rec(g, src, dst, i + 1));
            dst.swap(i, k);
        }
        best
    }
    rec(g, src, &mut dst.to_vec(), 0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn divergence_repair_is_exact_and_near_optimal(
        picks in prop::sample::subsequence((0..36usize).collect::<Vec<_>>(), 2..=8),
        shuffle in any::<u64>(),
    ) {
        let g = gen_lattice_nn(2, &Orthotope::cube(2, 0.0, 5.0).unwrap(), 1.0, MeanSpec::default()).unwrap();
        let mut picks = picks;
        if picks.len() % 2 == 1 {
            picks.pop();
        }
        let s = (shuffle as usize) % picks.len();
        picks.rotate_left(s);
        let (src, dst) = picks.split_at(picks.len() / 2);
        let mut target = vec![0.0; g.num_vertices()];
        for &x in src {
            target[x] = 1.0;
        }
        for &x in dst {
            target[x] = -1.0;
        }
        let b = Orthotope::cube(2, 0.0, 5.0).unwrap();
        let (k, rep) = divergence_repair(&g, &target, &b, 1.0).unwrap();
        let div = divergence(&g, &k);
        for x in 0..g.num_vertices() {
            prop_assert!((div[x] + target[x]).abs() <= 1e-10);
        }
        let tv: f64 = k.values().iter().enumerate().map(|(e, j)| j.abs() * g.edge_length(e)).sum();
        let oracle = matching_cost(&g, dst, src);
        prop_assert!(tv >= oracle - 1e-9, "tv {} below optimum {}", tv, oracle);
        prop_assert!(tv <= 2.0 * oracle + 1e-9, "tv {} vs optimum {}", tv, oracle);
        prop_assert!((rep.total_variation - tv).abs() <= 1e-9 * tv.max(1.0));
    }
}
