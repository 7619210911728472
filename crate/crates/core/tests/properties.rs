use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sphere_consensus::dynamics::{alignment_cosines, iterate, residual, IterationMatrix};
use sphere_consensus::graph::DirectedGraph;
use sphere_consensus::parametric::{compute_d, duplication_matrix, residual_g, unvec, vec_of, vech};
use sphere_consensus::sphere::{Configuration, ConfigurationClass, RANK_TOL};
use sphere_consensus::stability::alignment_bound_slack;
use sphere_consensus::weights::WeightMatrix;

fn weights(n: usize, seed: u64, symmetric: bool, margin: f64) -> WeightMatrix {
    let g = if symmetric {
        DirectedGraph::random_connected_symmetric(n, 0.4, seed).unwrap()
    } else {
        DirectedGraph::random_strongly_connected(n, 0.4, seed).unwrap()
    };
    WeightMatrix::sample_sdd(&g, margin, symmetric, seed ^ 0xabc).unwrap()
}

fn orthogonal(d: usize, seed: u64) -> DMatrix<f64> {
    let raw = Configuration::random(d, d, seed).unwrap().matrix().clone();
    raw.qr().q()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn duplication_identity(n in 1usize..=6, entries in prop::collection::vec(-5.0f64..5.0, 36)) {
        let c = DMatrix::from_fn(n, n, |i, j| entries[i.max(j) * 6 + i.min(j)]);
        prop_assert_eq!(duplication_matrix(n) * vech(&c), vec_of(&c));
    }

    #[test]
    fn vec_round_trip(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
        let m = Configuration::random(rows * cols, 2, seed).unwrap().matrix().columns(0, 1).into_owned();
        let m = DMatrix::from_column_slice(rows, cols, m.as_slice());
        prop_assert_eq!(unvec(&vec_of(&m), rows).unwrap(), m);
    }

    #[test]
    fn configuration_vec_is_agent_major(n in 1usize..8, d in 2usize..6, seed in any::<u64>()) {
        let c = Configuration::random(n, d, seed).unwrap();
        let x = c.vec();
        for i in 0..n {
            for k in 0..d {
                prop_assert_eq!(x[i * d + k], c.matrix()[(i, k)]);
            }
        }
        let back = Configuration::from_vec(&x, d).unwrap();
        prop_assert!((back.matrix() - c.matrix()).amax() < 1e-15);
    }

    #[test]
    fn normalization_is_idempotent(n in 1usize..8, d in 2usize..6, seed in any::<u64>()) {
        let c = Configuration::random(n, d, seed).unwrap();
        let again = Configuration::normalize_rows(c.matrix().clone()).unwrap();
        prop_assert!((again.matrix() - c.matrix()).amax() < 1e-15);
        prop_assert!(c.max_norm_error() < 1e-15);
    }

    #[test]
    fn consensus_classifies_as_consensus(n in 1usize..9, d in 2usize..6, seed in any::<u64>()) {
        let xbar = Configuration::random(1, d, seed).unwrap();
        let xbar: Vec<f64> = xbar.row(0).iter().copied().collect();
        let c = Configuration::consensus(n, &xbar).unwrap();
        prop_assert_eq!(c.classify(1e-9), ConfigurationClass::Consensus);
    }

    #[test]
    fn rank_is_rotation_invariant(n in 2usize..8, d in 2usize..6, k in 1usize..4, seed in any::<u64>()) {
        let k = k.min(d).min(n);
        // rows spread over a k-dimensional subspace
        let coeffs = Configuration::random(n, k + 1, seed).unwrap().matrix().columns(0, k).into_owned();
        let frame = orthogonal(d, seed.wrapping_add(7)).columns(0, k).transpose();
        let c = Configuration::from_matrix(coeffs * frame).unwrap();
        prop_assert_eq!(c.numerical_rank(RANK_TOL), k);
        let rotated = c.transform(&orthogonal(d, seed.wrapping_add(1))).unwrap();
        prop_assert_eq!(c.numerical_rank(RANK_TOL), rotated.numerical_rank(RANK_TOL));
    }

    #[test]
    fn strongly_connected_generator(n in 2usize..12, p in 0.0f64..1.0, seed in any::<u64>()) {
        let g = DirectedGraph::random_strongly_connected(n, p, seed).unwrap();
        prop_assert!(g.is_strongly_connected());
        let s = DirectedGraph::random_connected_symmetric(n, p, seed).unwrap();
        prop_assert!(s.is_symmetric() && s.is_strongly_connected());
        let b = s.structure_matrix();
        prop_assert_eq!(b.transpose(), b);
    }

    #[test]
    fn sampled_weights_follow_the_graph(n in 2usize..9, seed in any::<u64>(), symmetric in any::<bool>(), margin in 0.01f64..2.0) {
        let a = weights(n, seed, symmetric, margin);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    prop_assert_eq!(a.entries()[(i, j)] > 0.0, a.graph().has_edge(i, j));
                }
            }
        }
        prop_assert!(a.is_strictly_diagonally_dominant());
        prop_assert_eq!(a.is_symmetric(), symmetric);
        let unit = a.left_scale_normalize().unwrap();
        prop_assert_eq!(unit.left_scale_normalize().unwrap(), unit.clone());
        let dm = a.descent_matrix(0.25).unwrap();
        for i in 0..n {
            prop_assert!(dm.entries()[(i, i)] > 0.0);
        }
    }

    #[test]
    fn iteration_is_invariant_under_left_scaling(n in 2usize..8, d in 2usize..5, seed in any::<u64>(), f in prop::collection::vec(0.1f64..10.0, 8)) {
        let a = weights(n, seed, false, 0.2);
        let scaled = a.scale_rows(&f[..n]).unwrap();
        let c = Configuration::random(n, d, seed).unwrap();
        let y1 = iterate(&IterationMatrix::weight(&a).unwrap(), &c).unwrap();
        let y2 = iterate(&IterationMatrix::weight(&scaled).unwrap(), &c).unwrap();
        prop_assert!((y1.matrix() - y2.matrix()).amax() < 1e-12);
        let y3 = iterate(&IterationMatrix::weight(&a.left_scale_normalize().unwrap()).unwrap(), &c).unwrap();
        prop_assert!((y1.matrix() - y3.matrix()).amax() < 1e-12);
        prop_assert!(y1.max_norm_error() < 1e-12);
    }

    #[test]
    fn alignment_is_positive_and_bounded(n in 2usize..8, d in 2usize..5, seed in any::<u64>(), margin in 0.01f64..1.0) {
        let a = weights(n, seed, seed % 2 == 0, margin);
        let c = Configuration::random(n, d, seed).unwrap();
        let cos = alignment_cosines(&IterationMatrix::weight(&a).unwrap(), &c).unwrap();
        prop_assert!(cos.iter().all(|&v| v > 0.0));
        prop_assert!(alignment_bound_slack(&a, &c).unwrap() >= -1e-12);
    }

    #[test]
    fn residual_g_vanishes_only_at_fixed_points(n in 3usize..7, seed in any::<u64>()) {
        let a = weights(n, seed, false, 0.2);
        let m = IterationMatrix::weight(&a).unwrap();
        let c = Configuration::random(n, 3, seed).unwrap();
        let g = residual_g(a.entries(), &compute_d(a.entries(), c.matrix()).unwrap(), c.matrix()).unwrap();
        prop_assert_eq!(g.amax() <= 1e-10, residual(&m, &c).unwrap() <= 1e-10);
        let xbar = DVector::from_column_slice(&[0.0, 0.6, 0.8]);
        let cons = Configuration::consensus(n, xbar.as_slice()).unwrap();
        let g = residual_g(a.entries(), &compute_d(a.entries(), cons.matrix()).unwrap(), cons.matrix()).unwrap();
        prop_assert!(g.amax() <= 1e-10);
    }
}
