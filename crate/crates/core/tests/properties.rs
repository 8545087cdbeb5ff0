//! Property tests for the invariants of the graph operators, the models and
//! the transport metric.

use std::sync::Arc;

use graphssl::experiments::{moving_average, sweet_spot_epsilon, EpsilonGrid};
use graphssl::models::{log_ndtr, probit_objective};
use graphssl::transport::{tlp_exact, tlp_map_bound, TlpPair};
use graphssl::*;
use proptest::prelude::*;

fn graph(n: usize, eps: f64, seed: u64) -> WeightedGraph {
    let cloud = Density::uniform(2).unwrap().sample(n, seed);
    build_graph(&cloud, &Kernel::indicator(eps, 2)).unwrap()
}

fn prior(g: &WeightedGraph, alpha: f64, tau: f64) -> FractionalOperator {
    let eig = decompose(&g.laplacian(false).unwrap(), None).unwrap();
    FractionalOperator::new(Arc::new(eig), alpha, tau, g.s_n()).unwrap()
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64
}

fn field(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, n)
}

fn pair(m: usize) -> impl Strategy<Value = TlpPair> {
    (prop::collection::vec(0.0..1.0f64, 2 * m), prop::collection::vec(-1.0..1.0f64, m)).prop_map(move |(x, f)| {
        let w = vec![1.0 / m as f64; m];
        TlpPair::new(2, x, f, w).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dirichlet_form_matches_alpha_one(seed in 0u64..1000, u in field(30)) {
        let g = graph(30, 0.4, seed);
        let a = prior(&g, 1.0, 0.0);
        let expect = g.s_n() * g.dirichlet_energy(&u) / (2.0 * 30.0);
        prop_assert!((a.quadratic_form(&u) - expect).abs() <= 1e-9 * expect.max(1.0));
    }

    #[test]
    fn powers_are_self_adjoint_and_compose(
        seed in 0u64..1000, u in field(25), v in field(25), alpha in 0.5..3.0f64, p in -1.0..1.0f64, q in -1.0..1.0f64,
    ) {
        let a = prior(&graph(25, 0.45, seed), alpha, 1.0);
        let lhs = inner(&u, &a.apply_power(&v, p).unwrap());
        let rhs = inner(&a.apply_power(&u, p).unwrap(), &v);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
        let pq = a.apply_power(&a.apply_power(&u, q).unwrap(), p).unwrap();
        let direct = a.apply_power(&u, p + q).unwrap();
        let scale = direct.iter().map(|x| x.abs()).fold(1.0, f64::max);
        prop_assert!(pq.iter().zip(&direct).all(|(x, y)| (x - y).abs() <= 1e-9 * scale));
    }

    #[test]
    fn quadratic_form_is_half_inner_product(seed in 0u64..1000, u in field(20), alpha in 0.5..3.0f64, tau in 0.1..2.0f64) {
        let a = prior(&graph(20, 0.5, seed), alpha, tau);
        let expect = 0.5 * inner(&u, &a.apply_power(&u, 1.0).unwrap());
        prop_assert!((a.quadratic_form(&u) - expect).abs() <= 1e-9 * expect.max(1.0));
    }

    #[test]
    fn eigenvectors_are_orthonormal(seed in 0u64..1000, n in 5usize..40) {
        let g = graph(n, 0.35, seed);
        let eig = decompose(&g.laplacian(false).unwrap(), None).unwrap();
        prop_assert!(eig.eigenvalues().windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(eig.eigenvalues()[0].abs() < 1e-10);
        for i in 0..n {
            for j in 0..n {
                let ip = inner(eig.vector(i), eig.vector(j));
                prop_assert!((ip - f64::from(i == j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn probit_objective_is_midpoint_convex(seed in 0u64..200, u in field(40), v in field(40)) {
        let cloud = Density::uniform(2).unwrap().sample(38, seed);
        let (cloud, set) = assign_labels(&cloud, &LabelModel::pair(&[0.25, 0.25], &[0.75, 0.75])).unwrap();
        let g = build_graph(&cloud, &Kernel::indicator(0.4, 2)).unwrap();
        let a = prior(&g, 2.0, 1.0);
        let pot = ProbitPotential::new(0.1, set).unwrap();
        let mid: Vec<f64> = u.iter().zip(&v).map(|(x, y)| 0.5 * (x + y)).collect();
        let lhs = probit_objective(&mid, &a, &pot);
        let rhs = 0.5 * (probit_objective(&u, &a, &pot) + probit_objective(&v, &a, &pot));
        prop_assert!(lhs <= rhs + 1e-12 * rhs.abs());
    }

    #[test]
    fn log_ndtr_is_increasing_and_negative(a in -40.0..10.0f64, d in 1e-3..5.0f64) {
        let (x, y) = (log_ndtr(a), log_ndtr(a + d));
        prop_assert!(x <= y);
        prop_assert!(y <= 0.0);
    }

    #[test]
    fn tlp_is_a_metric(a in pair(6), b in pair(6), c in pair(6), p in 1.0..3.0f64) {
        let d = |x: &TlpPair, y: &TlpPair| tlp_exact(x, y, p).unwrap();
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() <= 1e-12);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
    }

    #[test]
    fn coupling_bound_dominates_exact(a in pair(7), b in pair(7), p in 1.0..3.0f64) {
        let exact = tlp_exact(&a, &b, p).unwrap();
        let bound = tlp_map_bound(&a, &b, p).unwrap();
        prop_assert!(bound.total >= exact - 1e-12);
    }

    #[test]
    fn sign_is_scale_invariant(u in field(50), c in 1e-6..1e6f64) {
        let scaled: Vec<f64> = u.iter().map(|x| c * x).collect();
        prop_assert_eq!(sign(&u), sign(&scaled));
    }

    #[test]
    fn moving_average_keeps_constants_and_bounds(y in prop::collection::vec(-5.0..5.0f64, 1..40), w in 1usize..9) {
        let m = moving_average(&y, w);
        prop_assert_eq!(m.len(), y.len());
        let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        prop_assert!(m.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
        let flat = moving_average(&vec![y[0]; y.len()], w);
        prop_assert!(flat.iter().all(|&v| (v - y[0]).abs() < 1e-12));
    }

    #[test]
    fn epsilon_grid_is_increasing(min in 1e-3..0.2f64, span in 1e-3..1.0f64, count in 2usize..50) {
        let g = EpsilonGrid { min, max: min + span, count };
        let v = g.values();
        prop_assert_eq!(v.len(), count);
        prop_assert!((v[0] - min).abs() < 1e-15 && (v[count - 1] - min - span).abs() < 1e-12);
        prop_assert!(v.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn sweet_spot_shrinks_with_n(n in 10usize..100_000, d in 1usize..4) {
        prop_assert!(sweet_spot_epsilon(2 * n, d, 1.0) < sweet_spot_epsilon(n, d, 1.0) * 1.0001);
    }
}
