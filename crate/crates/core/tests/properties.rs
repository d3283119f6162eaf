mod common;

use common::{brute_kendall, brute_shapley, brute_spearman, random_setup};
use hetexplain::diagnostics::{global_contribution, mp_aea, ContributionVector};
use hetexplain::explainers::shapley::{solve_game, GameSettings, Sampling};
use hetexplain::explainers::{explain, ExplainContext, ExplainerConfig};
use hetexplain::faithfulness::{evaluate, kept_count, top_k, EvalConfig};
use hetexplain::hetgraph::{extract_local_views, MetaPath, MetaPathView};
use hetexplain::predictors::{AttentionOverride, Backbone};
use hetexplain::rng::{self, Stream};
use proptest::prelude::*;

fn int_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..=10).prop_flat_map(|n| {
        (
            prop::collection::vec(0i32..5, n),
            prop::collection::vec(0i32..5, n),
        )
            .prop_map(|(x, y)| {
                (
                    x.into_iter().map(f64::from).collect(),
                    y.into_iter().map(f64::from).collect(),
                )
            })
    })
}

fn edge_list(n: usize) -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((0..n, 0..n), 0..3 * n)
}

proptest! {
    #[test]
    fn rank_statistics_match_definitions((x, y) in int_pair()) {
        let t = hetexplain::stats::kendall_tau_b(&x, &y).unwrap();
        let r = hetexplain::stats::spearman_rho(&x, &y).unwrap();
        prop_assert_eq!(t.value, brute_kendall(&x, &y));
        prop_assert_eq!(r.value, brute_spearman(&x, &y));
        for c in [t, r] {
            if let Some(p) = c.p_value {
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }
    }

    #[test]
    fn complementary_channels_have_equal_tau(
        a in prop::collection::vec(1u32..99, 3..12),
        s in prop::collection::vec(1u32..99, 12),
    ) {
        let r = a.len();
        let att: Vec<Vec<f64>> = a.iter().map(|&x| { let x = f64::from(x) / 100.0; vec![x, 1.0 - x] }).collect();
        let con: Vec<Vec<f64>> = s[..r].iter().map(|&x| { let x = f64::from(x) / 100.0; vec![x, 1.0 - x] }).collect();
        let rep = mp_aea(&["A".into(), "B".into()], &att, &con).unwrap();
        let (c0, c1) = (&rep.channels[0], &rep.channels[1]);
        prop_assert_eq!(c0.kendall.value.map(f64::abs), c1.kendall.value.map(f64::abs));
        prop_assert_eq!(c0.spearman.value.map(f64::abs), c1.spearman.value.map(f64::abs));
    }

    #[test]
    fn contribution_is_scale_invariant(
        raws in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 3), 1..6),
        node in 0usize..6,
        scale in 0.01f64..100.0,
    ) {
        let base: Vec<ContributionVector> = raws.iter().map(|r| ContributionVector::from_raw(r.clone()).unwrap()).collect();
        let mut scaled = base.clone();
        let k = node % raws.len();
        scaled[k] = ContributionVector::from_raw(raws[k].iter().map(|x| x * scale).collect()).unwrap();
        let (a, b) = (global_contribution(&base).unwrap(), global_contribution(&scaled).unwrap());
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn views_are_symmetric_and_induction_idempotent(pairs in edge_list(12)) {
        let mp = MetaPath::parse(&["r", "~r"]);
        let v = MetaPathView::from_edges("V", mp.clone(), 12, pairs).unwrap();
        for a in 0..12 {
            prop_assert!(!v.has_edge(a, a));
            for b in 0..12 {
                prop_assert_eq!(v.has_edge(a, b), v.has_edge(b, a));
            }
        }
        let again = MetaPathView::from_edges("V", mp, 12, v.edges().to_vec()).unwrap();
        prop_assert_eq!(again.edges(), v.edges());
    }

    #[test]
    fn local_views_round_trip_and_cover_components(pairs in edge_list(14), target in 0usize..14) {
        let view = MetaPathView::from_edges("V", MetaPath::parse(&["r", "~r"]), 14, pairs).unwrap();
        let feats = hetexplain::tensor::Matrix::from_vec(14, 1, (0..14).map(f64::from).collect()).unwrap();
        let local = extract_local_views(std::slice::from_ref(&view), &feats, target, 14).unwrap();
        let lv = &local.views[0];
        for (i, &g) in lv.nodes.iter().enumerate() {
            prop_assert_eq!(lv.local_index(g), Some(i));
            prop_assert_eq!(lv.features.get(i, 0), g as f64);
        }
        // connected component by union-find
        let mut parent: Vec<usize> = (0..14).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r { r = p[r]; }
            p[x] = r;
            r
        }
        for &(a, b) in view.edges() {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra] = rb;
        }
        let root = find(&mut parent, target);
        let component: Vec<usize> = (0..14).filter(|&u| find(&mut parent, u) == root).collect();
        prop_assert_eq!(&lv.nodes, &component);
        let induced = view.edges().iter().filter(|(a, _)| component.contains(a)).count();
        prop_assert_eq!(lv.edges.len(), induced);
    }

    #[test]
    fn exhaustive_shapley_is_exact_and_efficient(
        p in 2usize..=7,
        coeffs in prop::collection::vec(-1.0f64..1.0, 128),
    ) {
        // a random set function: coefficients indexed by the coalition bitmask
        let v = |z: &[bool]| -> f64 {
            let mask = z.iter().enumerate().fold(0usize, |m, (i, &on)| m | (usize::from(on) << i));
            coeffs[mask] + if mask == 0 { 0.0 } else { 0.5 }
        };
        let settings = GameSettings {
            budget: 1 << p,
            ridge: 0.0,
            sampling: Sampling::KernelShap,
            direct_solve_limit: 1000,
            descent_passes: 0,
            descent_batch: 1,
        };
        let mut rng = rng::stream(0, Stream::Explainer, 0);
        let (phi, info) = solve_game(p, &mut |z: &[bool]| Ok(v(z)), &settings, &mut rng).unwrap();
        prop_assert!(info.exhaustive);
        let exact = brute_shapley(p, &v);
        for (a, b) in phi.iter().zip(&exact) {
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }
        let total = v(&vec![true; p]) - v(&vec![false; p]);
        prop_assert!((phi.iter().sum::<f64>() - total).abs() < 1e-9);
    }

    #[test]
    fn kept_count_is_ceiling(n in 0usize..500, j in 1u32..=100) {
        let s = f64::from(j) / 100.0;
        let k = kept_count(n, s);
        prop_assert_eq!(k, (j as usize * n).div_ceil(100));
        let scores: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64).collect();
        prop_assert_eq!(top_k(&scores, k).iter().filter(|&&b| b).count(), k);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fidelity_ranges_and_full_sparsity(seed in 0u64..1000, gcn in any::<bool>(), which in 0usize..3) {
        let backbone = if gcn { Backbone::HanGcn } else { Backbone::Han };
        let (model, data) = random_setup(backbone, seed, 18, 4);
        let ctx = ExplainContext::new(&model, &data, &AttentionOverride::Learned).unwrap();
        let config = [ExplainerConfig::Grad, ExplainerConfig::RandomEdgeMask, ExplainerConfig::RandomEdgeAndFeatureMask][which].clone();
        let explanations: Vec<_> = data.splits.test.iter().map(|&v| {
            let local = extract_local_views(&data.views, &data.features, v, 2).unwrap();
            explain(&ctx, &local, &config, seed).unwrap()
        }).collect();
        let (scores, outcomes) = evaluate(&model, &ctx.attention, &data, &explanations, &EvalConfig::default()).unwrap();
        for x in [scores.one_minus_fidelity_minus, scores.fidelity_plus, scores.macro_f1, scores.micro_f1] {
            prop_assert!((0.0..=100.0).contains(&x));
        }
        for o in &outcomes {
            prop_assert_eq!(o.original, ctx.predictions[o.node]);
        }
        {
            let full = EvalConfig { sparsity: 1.0, ..Default::default() };
            let (s, _) = evaluate(&model, &ctx.attention, &data, &explanations, &full).unwrap();
            prop_assert_eq!(s.one_minus_fidelity_minus, 100.0);
        }
    }
}
