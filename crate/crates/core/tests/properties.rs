//! Randomised structural properties of the market primitives.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use conemkt::arbitrage::{budget_bound, find_price_process};
use conemkt::attainable::{increment_in_cone, node_increment, realize, TransferPlan};
use conemkt::cones::{cone_generators, polar_membership, triangle_closure, BidAskMatrix};
use conemkt::generate::{generate, random_feasible_plan, random_martingale, InstanceKind, Shape};
use conemkt::tree::generate_random_tree;

/// Square matrix of positive entries with unit diagonal.
fn raw_matrix(d: usize) -> impl Strategy<Value = BidAskMatrix> {
    prop::collection::vec(0.2f64..5.0, d * d).prop_map(move |v| {
        let mut pi = BidAskMatrix::frictionless(d);
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    pi.set(i, j, v[i * d + j]);
                }
            }
        }
        pi
    })
}

/// Matrix built from prices and nonnegative spreads, so no cycle creates value.
fn spread_matrix(d: usize) -> impl Strategy<Value = BidAskMatrix> {
    (prop::collection::vec(0.5f64..2.0, d), prop::collection::vec(0.0f64..0.5, d * d)).prop_map(move |(p, s)| {
        let mut pi = BidAskMatrix::frictionless(d);
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    pi.set(i, j, p[j] / p[i] * (1.0 + s[i * d + j]));
                }
            }
        }
        pi
    })
}

fn shape() -> impl Strategy<Value = Shape> {
    (2usize..=3, 1usize..=2, 1usize..=3).prop_map(|(d, horizon, branching)| Shape { d, horizon, branching })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closure_is_valid_and_idempotent(pi in spread_matrix(3)) {
        let closed = triangle_closure(&pi).unwrap();
        prop_assert!(closed.is_valid());
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!(closed.get(i, j) <= pi.get(i, j));
            }
        }
        prop_assert_eq!(triangle_closure(&closed).unwrap(), closed);
    }

    #[test]
    fn closure_rejects_or_repairs_arbitrary_matrices(pi in raw_matrix(3)) {
        if let Ok(closed) = triangle_closure(&pi) {
            prop_assert!(closed.is_valid());
        }
    }

    #[test]
    fn generators_agree_with_closed_form(pi in spread_matrix(3), w in prop::collection::vec(-0.5f64..3.0, 3)) {
        let pi = triangle_closure(&pi).unwrap();
        let by_generators = cone_generators(&pi).iter().all(|g| g.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() <= 0.0);
        prop_assert_eq!(polar_membership(&pi, &w, 0.0).unwrap(), by_generators);
    }

    #[test]
    fn increments_lie_in_the_solvency_cone(pi in spread_matrix(3), seed in any::<u64>()) {
        let pi = triangle_closure(&pi).unwrap();
        let tree = generate_random_tree(seed, 1, 1).unwrap();
        let process = conemkt::cones::BidAskProcess::constant(&tree, pi.clone());
        let plan = random_feasible_plan(&tree, &process, &[1.0; 3], &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(increment_in_cone(&node_increment(&plan, 0, &pi), &pi).unwrap());
    }

    #[test]
    fn realisation_is_affine_in_the_plan(seed in any::<u64>(), s in shape(), a in 0.0f64..2.0, b in 0.0f64..2.0) {
        let g = generate(seed, InstanceKind::Roundtrip, s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = vec![1.0; s.d];
        let p = random_feasible_plan(&g.tree, &g.process, &x, &mut rng).unwrap();
        let q = random_feasible_plan(&g.tree, &g.process, &x, &mut rng).unwrap();
        let zero = vec![0.0; s.d];
        let combined = realize(&p.combine(a, &q, b).unwrap(), &g.tree, &g.process, &zero).unwrap().terminal;
        let rp = realize(&p, &g.tree, &g.process, &zero).unwrap().terminal;
        let rq = realize(&q, &g.tree, &g.process, &zero).unwrap().terminal;
        for ((c, u), v) in combined.iter().zip(&rp).zip(&rq) {
            for k in 0..s.d {
                prop_assert!((c[k] - (a * u[k] + b * v[k])).abs() <= 1e-12 * (1.0 + c[k].abs()));
            }
        }
        let idle = realize(&TransferPlan::zero(&g.tree, s.d), &g.tree, &g.process, &x).unwrap().terminal;
        prop_assert!(idle.iter().all(|v| v == &x));
    }

    #[test]
    fn martingales_satisfy_the_tower_property(seed in any::<u64>(), s in shape()) {
        let tree = generate_random_tree(seed, s.branching, s.horizon).unwrap();
        let z = random_martingale(&tree, s.d, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(z.max_martingale_residual(&tree) <= 1e-12);
        for k in 0..s.d {
            let terminal: Vec<f64> = tree.leaves().iter().map(|&l| z.at(l)[k]).collect();
            prop_assert!((tree.expectation(&terminal) - z.at(tree.root())[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn consistent_prices_bound_every_plan(seed in 0u64..1000, s in shape()) {
        let g = generate(seed, InstanceKind::Roundtrip, s).unwrap();
        let z = find_price_process(&g.tree, &g.process, false).unwrap().z.unwrap();
        let x = vec![1.0; s.d];
        let plan = random_feasible_plan(&g.tree, &g.process, &x, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let terminal = realize(&plan, &g.tree, &g.process, &x).unwrap().terminal;
        prop_assert!(budget_bound(&z, &x, &terminal, &g.tree).holds);
    }
}
