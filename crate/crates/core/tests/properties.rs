use std::collections::BTreeSet;

use ndarray::Array2;
use proptest::prelude::*;

use testrank::baselines::{mcp_order, score_deepgini, score_dsa, score_mcp, DsaVariant};
use testrank::data::{parse_pool, render_pool, softmax, Budget, Instance, LabeledPool, Pool, PoolDims, UnlabeledPool};
use testrank::eval::{atpf, tpf_curve};
use testrank::graph::{build_knn_approx, build_knn_exact, cosine_distance, normalize};
use testrank::nn::gcn::gcn_forward;
use testrank::nn::GnnModel;
use testrank::testrank::{rank, select};

fn vectors(n: std::ops::RangeInclusive<usize>, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, dim), n).prop_filter("no zero vectors", |vs| {
        vs.iter().all(|v| v.iter().any(|x| x.abs() > 1e-3))
    })
}

/// Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations.
fn jacobi_eigenvalues(mut a: Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum();
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[[k, p]], a[[k, q]]);
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[[i, i]]).collect()
}

/// Directed top-k over candidate indices, ties to the lower index.
fn brute_top_k(features: &[Vec<f64>], i: usize, candidates: &[usize], k: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|&&j| j != i)
        .map(|&j| (cosine_distance(&features[i], &features[j]).unwrap(), j))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, j)| j).collect()
}

fn undirected(directed: &[(usize, usize)]) -> BTreeSet<(usize, usize)> {
    directed.iter().flat_map(|&(i, j)| [(i, j), (j, i)]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pool_files_round_trip(
        rows in prop::collection::vec((prop::collection::vec(-1e6f64..1e6, 3), prop::collection::vec(-50f64..50.0, 2), 0usize..2), 1..8),
        labeled in any::<bool>(),
    ) {
        let dims = PoolDims { classes: 2, feature_dim: 3 };
        let insts: Vec<Instance> = rows
            .iter()
            .enumerate()
            .map(|(i, (f, l, _))| Instance::new(i as u64 * 3, f.clone(), l.clone()))
            .collect();
        let gt: Vec<usize> = rows.iter().map(|r| r.2).collect();
        let pool = if labeled {
            Pool::Labeled(LabeledPool::new(dims, insts, gt).unwrap())
        } else {
            Pool::Unlabeled(UnlabeledPool::new(dims, insts).unwrap())
        };
        let text = render_pool(&pool);
        let back = parse_pool(&text, None).unwrap();
        prop_assert_eq!(render_pool(&back), text);
        prop_assert_eq!(back, pool);
    }

    #[test]
    fn normalized_adjacency_is_symmetric_with_spectrum_in_unit_interval(
        features in vectors(2..=12, 3),
        k in 1usize..5,
    ) {
        let refs: Vec<&[f64]> = features.iter().map(Vec::as_slice).collect();
        let graph = build_knn_exact(&refs, features.len() / 2, k).unwrap();
        let dense = normalize(&graph).to_dense();
        for i in 0..dense.nrows() {
            for j in 0..dense.ncols() {
                prop_assert!((dense[[i, j]] - dense[[j, i]]).abs() <= 1e-12 * dense[[i, j]].abs().max(1.0));
            }
        }
        for ev in jacobi_eigenvalues(dense) {
            prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&ev), "eigenvalue {ev}");
        }
    }

    #[test]
    fn approximate_graph_is_exact_knn_over_its_candidates(
        features in vectors(3..=30, 4),
        split in 0.1f64..0.9,
        k in 1usize..6,
    ) {
        let p = ((features.len() as f64 * split) as usize).clamp(1, features.len() - 1);
        let lab: Vec<&[f64]> = features[..p].iter().map(Vec::as_slice).collect();
        let unl: Vec<&[f64]> = features[p..].iter().map(Vec::as_slice).collect();
        let graph = build_knn_approx(&lab, &unl, k).unwrap();

        let everyone: Vec<usize> = (0..features.len()).collect();
        let labeled: Vec<usize> = (0..p).collect();
        let mut directed = Vec::new();
        for i in 0..features.len() {
            let candidates = if i < p { &everyone } else { &labeled };
            for j in brute_top_k(&features, i, candidates, k) {
                directed.push((i, j));
            }
        }
        let got: BTreeSet<(usize, usize)> = graph.edges().iter().map(|&(i, j, _)| (i, j)).collect();
        prop_assert_eq!(got, undirected(&directed));
        for &(i, j, _) in graph.edges() {
            prop_assert!(i < p || j < p, "edge {i}-{j} joins two unlabeled nodes");
        }
    }

    #[test]
    fn gcn_is_permutation_equivariant(
        features in vectors(3..=10, 3),
        seed in 0u64..1000,
        shuffle in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let n = features.len();
        let refs: Vec<&[f64]> = features.iter().map(Vec::as_slice).collect();
        let adj = normalize(&build_knn_exact(&refs, n, 2).unwrap());
        let h0 = Array2::from_shape_fn((n, 3), |(i, c)| features[i][c]);
        let model = GnnModel::new(3, &[5, 4], 2, seed).unwrap();

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(shuffle));
        let h0_perm = Array2::from_shape_fn((n, 3), |(i, c)| h0[[perm[i], c]]);
        let base = gcn_forward(&adj, h0.view(), &model).unwrap().logits;
        let moved = gcn_forward(&adj.permuted(&perm), h0_perm.view(), &model).unwrap().logits;
        for i in 0..n {
            for c in 0..2 {
                prop_assert!((moved[[i, c]] - base[[perm[i], c]]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn deepgini_is_bounded(logits in prop::collection::vec(prop::collection::vec(-30f64..30.0, 2..12), 1..10)) {
        let probs: Vec<Vec<f64>> = logits.iter().map(|l| softmax(l).unwrap()).collect();
        let scores = score_deepgini(&probs).unwrap();
        for (s, p) in scores.iter().zip(&probs) {
            let c = p.len() as f64;
            prop_assert!(*s >= -1e-12 && *s <= 1.0 - 1.0 / c + 1e-12);
        }
    }

    #[test]
    fn dsa_is_scale_invariant(
        train in prop::collection::vec(prop::collection::vec(-3f64..3.0, 3), 4..20),
        test in prop::collection::vec(prop::collection::vec(-3f64..3.0, 3), 1..8),
        scale in 0.01f64..100.0,
        original in any::<bool>(),
    ) {
        let variant = if original { DsaVariant::Original } else { DsaVariant::Paper };
        let train_classes: Vec<usize> = (0..train.len()).map(|i| i % 2).collect();
        let test_classes: Vec<usize> = (0..test.len()).map(|i| (i / 2) % 2).collect();
        let a = score_dsa(&test, &test_classes, &train, &train_classes, variant).unwrap();
        let sc = |v: &Vec<Vec<f64>>| v.iter().map(|r| r.iter().map(|x| x * scale).collect()).collect::<Vec<Vec<f64>>>();
        let b = score_dsa(&sc(&test), &test_classes, &sc(&train), &train_classes, variant).unwrap();
        for (x, y) in a.iter().zip(&b) {
            if x.is_infinite() {
                prop_assert!(y.is_infinite());
            } else {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn ranking_ignores_monotone_transforms(scores in prop::collection::vec(-10f64..10.0, 1..40)) {
        let cubed: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
        prop_assert_eq!(rank(&scores).unwrap().order, rank(&cubed).unwrap().order);
    }

    #[test]
    fn selections_are_nested(scores in prop::collection::vec(0f64..1.0, 2..40)) {
        let r = rank(&scores).unwrap();
        let n = scores.len();
        for b in 1..n {
            let small = select(&r, Budget::new(b, n).unwrap()).unwrap();
            let large = select(&r, Budget::new(b + 1, n).unwrap()).unwrap();
            prop_assert_eq!(&large[..b], &small[..]);
        }
    }

    #[test]
    fn mcp_budget_selection_is_a_prefix(logits in prop::collection::vec(prop::collection::vec(-5f64..5.0, 3), 2..30)) {
        let probs: Vec<Vec<f64>> = logits.iter().map(|l| softmax(l).unwrap()).collect();
        let ids: Vec<u64> = (0..probs.len() as u64).collect();
        let full = mcp_order(&probs, &ids).unwrap();
        let mut sorted = full.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..probs.len()).collect::<Vec<_>>());
        for b in 1..=probs.len() {
            let part = score_mcp(&probs, &ids, Budget::new(b, probs.len()).unwrap()).unwrap();
            prop_assert_eq!(&part[..], &full[..b]);
        }
    }

    #[test]
    fn tpf_is_a_fraction_and_perfect_orderings_score_one(
        bugs in prop::collection::vec(any::<bool>(), 1..40).prop_filter("needs a bug", |b| b.iter().any(|&x| x)),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let n = bugs.len();
        let grid: Vec<usize> = (1..=n).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let curve = tpf_curve(&order, &bugs, &grid).unwrap();
        prop_assert!(curve.tpf.iter().all(|t| (0.0..=1.0).contains(t)));
        prop_assert_eq!(*curve.tpf.last().unwrap(), 1.0);

        let mut perfect: Vec<usize> = (0..n).filter(|&i| bugs[i]).collect();
        perfect.extend((0..n).filter(|&i| !bugs[i]));
        let curve = tpf_curve(&perfect, &bugs, &grid).unwrap();
        prop_assert!(curve.tpf.iter().all(|&t| t == 1.0));
        prop_assert_eq!(atpf(&curve).unwrap(), 1.0);
    }
}
