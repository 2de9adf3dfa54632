mod common;

use proptest::prelude::*;

use bias_audit::dataset::{background_of, nearest_datapoint, AbstractionMatrix};
use bias_audit::eval::{distance_correlation, holm_bonferroni, mrr_at_k, wilcoxon_signed_rank, MatchResult};
use bias_audit::features::{input_names, Matrix, GRID_MAX, INPUT_NAMES, N_INPUTS, N_OUTPUTS};
use bias_audit::lasso::{objective, weighted_lasso, weighted_lasso_rows, LassoFit, LassoParams};
use bias_audit::rules::{build_design_matrix, extract_rules, DesignMatrix, RuleSource};
use bias_audit::shap::{global_attributions, permutation_shap, AttributionMatrix};
use bias_audit::sim::{builtin_biases, generate_responses, BaseModelConfig, Noise};
use bias_audit::text::{chunk_and_aggregate, dedup_indices, gunning_fog, Aggregate, ChunkLabel, TextProviderConfig, TrigramCosine};
use bias_audit::tree::{fit_gbrt, BoostParams};

fn grid_rows(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec((1i64..=5).prop_map(|v| v as f64), N_INPUTS), n)
}

fn matrix_of(rows: &[Vec<f64>]) -> AbstractionMatrix {
    let inputs = Matrix::from_rows(rows).unwrap();
    let outputs = Matrix::from_rows(&rows.iter().map(|r| (0..N_OUTPUTS).map(|k| r[k] * 1.5 - k as f64).collect::<Vec<_>>()).collect::<Vec<_>>()).unwrap();
    AbstractionMatrix::new((0..rows.len()).map(|i| format!("t{i}")).collect(), inputs, outputs).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn csv_round_trip(rows in grid_rows(1..40)) {
        let m = matrix_of(&rows);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = AbstractionMatrix::read_csv(buf.as_slice()).unwrap();
        let mut again = Vec::new();
        back.write_csv(&mut again).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(buf, again);
    }

    #[test]
    fn background_ignores_row_order(rows in grid_rows(1..40), seed in any::<u64>()) {
        let mut shuffled = rows.clone();
        let k = (seed as usize) % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        prop_assert_eq!(background_of(&matrix_of(&rows)).unwrap(), background_of(&matrix_of(&shuffled)).unwrap());
    }

    #[test]
    fn nearest_is_a_minimum(rows in grid_rows(1..60), query in prop::collection::vec(0.5f64..5.5, N_INPUTS), seed in any::<u64>()) {
        let m = matrix_of(&rows);
        let i = nearest_datapoint(&m, &query, seed).unwrap();
        let d = |r: &[f64]| r.iter().zip(&query).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let best = rows.iter().map(|r| d(r)).fold(f64::INFINITY, f64::min);
        prop_assert!((d(&rows[i]) - best).abs() <= 1e-9);
    }

    #[test]
    fn shap_null_feature_and_additivity(
        coef in prop::collection::vec(-2.0f64..2.0, N_INPUTS),
        x in prop::collection::vec(1.0f64..5.0, N_INPUTS),
        bg in prop::collection::vec(1.0f64..5.0, N_INPUTS),
        ignored in 0usize..N_INPUTS,
        seed in any::<u64>(),
        perms in 1usize..6,
    ) {
        // non-linear model that never reads `ignored`
        let f = |v: &[f64]| {
            v.iter().enumerate().filter(|(i, _)| *i != ignored).map(|(i, a)| coef[i] * a * a).sum::<f64>() + v[(ignored + 1) % N_INPUTS] * v[(ignored + 2) % N_INPUTS]
        };
        let background = bias_audit::dataset::BackgroundVector { values: bg.clone() };
        let phi = permutation_shap(f, &x, &background, perms, seed).unwrap();
        prop_assert_eq!(phi[ignored], 0.0);
        prop_assert!((phi.iter().sum::<f64>() - (f(&x) - f(&bg))).abs() <= 1e-9);
        let again = permutation_shap(f, &x, &background, perms, seed).unwrap();
        prop_assert_eq!(phi, again);
    }

    #[test]
    fn normalized_weights_are_a_distribution(values in prop::collection::vec(-3.0f64..3.0, 5 * N_INPUTS)) {
        let a = AttributionMatrix::new(Matrix::new(5, N_INPUTS, values).unwrap(), input_names()).unwrap();
        let w = global_attributions(&a).unwrap();
        prop_assert!((w.normalized.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.normalized.iter().all(|v| *v > 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn boosting_loss_non_increasing(rows in grid_rows(20..80), seed in any::<u64>(), colsample in 0.1f64..=1.0) {
        let inputs = Matrix::from_rows(&rows).unwrap();
        let target: Vec<f64> = rows.iter().map(|r| r[2] * 3.0 - r[4] * r[5]).collect();
        let params = BoostParams { n_trees: 12, max_depth: 3, colsample_bylevel: colsample, seed, ..Default::default() };
        let ens = fit_gbrt(&inputs, &target, &params, None).unwrap();
        let mse = |k: usize| rows.iter().zip(&target).map(|(r, y)| (ens.predict_with(r, k) - y).powi(2)).sum::<f64>() / rows.len() as f64;
        for k in 1..=ens.trees.len() {
            prop_assert!(mse(k) <= mse(k - 1) + 1e-9);
        }
    }

    #[test]
    fn design_columns_match_predicates(rows in grid_rows(20..80), seed in any::<u64>()) {
        let names = input_names();
        let inputs = Matrix::from_rows(&rows).unwrap();
        let target: Vec<f64> = rows.iter().map(|r| if r[0] > 2.0 && r[7] <= 3.0 { 10.0 } else { r[9] }).collect();
        let ens = fit_gbrt(&inputs, &target, &BoostParams { n_trees: 5, max_depth: 3, seed, ..Default::default() }, None).unwrap();
        let set = extract_rules(RuleSource::Ensemble(&ens), &names, "y", GRID_MAX);
        let dm = build_design_matrix(&set.rules, &inputs, &names).unwrap();
        for (j, rule) in set.rules.iter().enumerate() {
            let canon = rule.canonicalized(GRID_MAX);
            prop_assert_eq!(&canon, rule);
            for (r, row) in rows.iter().enumerate() {
                let direct = rule.conditions.iter().all(|p| {
                    let i = INPUT_NAMES.iter().position(|f| *f == p.feature).unwrap();
                    p.op.holds(row[i], p.threshold)
                });
                prop_assert_eq!(direct, dm.get(r, j));
            }
        }
    }

    #[test]
    fn lasso_kkt_and_monotone_objective(
        seed in any::<u64>(),
        n in 5usize..40,
        r in 1usize..12,
        ratio in 0.01f64..1.0,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<Vec<u32>> = (0..r).map(|_| (0..n as u32).filter(|_| rng.random_bool(0.5)).collect()).collect();
        let design = DesignMatrix::from_columns(n, cols).unwrap();
        let target: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let sw = vec![1.0; n];
        let rho: Vec<f64> = (0..r).map(|_| rng.random_range(0.1..1.0)).collect();
        let amax = bias_audit::lasso::alpha_max(&design, &target, &sw, &rho, true);
        let alpha = amax * ratio;
        let tight = LassoParams { max_iter: 100_000, tol: 1e-24, fit_intercept: true };
        let fit = weighted_lasso(&design, &target, alpha, &rho, &tight).unwrap();
        prop_assert!(common::kkt_violation(&design, &target, &sw, &fit) <= 1e-6);
        let mut last = f64::INFINITY;
        for sweeps in 1..15 {
            let f = weighted_lasso(&design, &target, alpha, &rho, &LassoParams { max_iter: sweeps, ..tight.clone() }).unwrap();
            let obj = objective(&design, &target, &sw, &f);
            prop_assert!(obj <= last + 1e-9);
            last = obj;
        }
    }

    #[test]
    fn unit_weights_match_brute_force(seed in any::<u64>(), r in 1usize..=3, alpha in 0.01f64..4.0) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = 12;
        let cols: Vec<Vec<u32>> = (0..r).map(|_| (0..n as u32).filter(|_| rng.random_bool(0.5)).collect()).collect();
        let design = DesignMatrix::from_columns(n, cols).unwrap();
        let target: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let sw: Vec<f64> = (0..n).map(|_| rng.random_range(1..=2) as f64).collect();
        let ones = vec![1.0; r];
        let fit = weighted_lasso_rows(&design, &target, &sw, alpha, &ones, &LassoParams { tol: 1e-24, max_iter: 100_000, ..Default::default() }).unwrap();
        let best = objective(&design, &target, &sw, &fit);
        // coarse grid around the solution, then random probes: the fit must never lose
        let steps = [-0.5, -0.1, -0.01, 0.0, 0.01, 0.1, 0.5];
        let mut probe = fit.clone();
        for db in steps {
            for (idx, dw) in (0..r).flat_map(|j| steps.iter().map(move |d| (j, *d))) {
                probe.intercept = fit.intercept + db;
                probe.coefficients = fit.coefficients.clone();
                probe.coefficients[idx] += dw;
                prop_assert!(objective(&design, &target, &sw, &probe) >= best - 1e-9);
            }
        }
        for _ in 0..200 {
            let cand = LassoFit {
                intercept: rng.random_range(-4.0..4.0),
                coefficients: (0..r).map(|_| rng.random_range(-4.0..4.0)).collect(),
                ..fit.clone()
            };
            prop_assert!(objective(&design, &target, &sw, &cand) >= best - 1e-9);
        }
    }

    #[test]
    fn higher_rule_weight_never_shrinks_survivor(a in 0.1f64..3.0, b in 0.1f64..3.0, alpha in 0.0f64..4.0) {
        let design = DesignMatrix::from_columns(4, vec![vec![0, 1]]).unwrap();
        let v = [2.0, 2.0, 0.0, 0.0];
        let p = LassoParams { fit_intercept: false, ..Default::default() };
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let w_lo = weighted_lasso(&design, &v, alpha, &[lo], &p).unwrap().coefficients[0].abs();
        let w_hi = weighted_lasso(&design, &v, alpha, &[hi], &p).unwrap().coefficients[0].abs();
        prop_assert!(w_hi >= w_lo - 1e-12);
        // closed form: soft-threshold of 2 at alpha / (2 rho)
        prop_assert!((w_lo - (2.0 - alpha / (2.0 * lo)).max(0.0)).abs() < 1e-9);
    }

    #[test]
    fn simulated_bias_is_pure_and_clamped(rows in grid_rows(2..30), sigma in 0.0f64..3.0, seed in any::<u64>()) {
        let mut doubled = rows.clone();
        doubled.extend(rows.iter().cloned());
        let inputs = Matrix::from_rows(&doubled).unwrap();
        let biases = builtin_biases();
        let clean = generate_responses(&inputs, &biases, &BaseModelConfig::default(), Noise::default(), seed).unwrap();
        for i in 0..rows.len() {
            prop_assert_eq!(clean.row(i), clean.row(i + rows.len()));
        }
        let noisy = generate_responses(&inputs, &biases, &BaseModelConfig::default(), Noise::Relative { fraction: sigma }, seed).unwrap();
        for k in 4..N_OUTPUTS {
            for r in 0..noisy.nrows() {
                prop_assert!((1.0..=5.0).contains(&noisy.get(r, k)));
            }
        }
    }

    #[test]
    fn fog_ignores_spacing_and_trailing_punctuation(words in prop::collection::vec("[a-z]{1,12}", 1..20)) {
        let plain = format!("{}.", words.join(" "));
        let spaced = format!("  {}  ...  ", words.join("   \t "));
        prop_assert!((gunning_fog(&plain).unwrap() - gunning_fog(&spaced).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn single_chunk_aggregate_is_the_chunk_score(text in "[a-z]{1,8}( [a-z]{1,8}){0,10}", class in 0u32..5) {
        let cfg = TextProviderConfig::default();
        let scorer = move |_: &str| Ok(ChunkLabel { label: format!("label_{class}"), confidence: 0.9 });
        let v = chunk_and_aggregate(&text, &scorer, Aggregate::Sentiment, &cfg).unwrap();
        prop_assert!((v - (class as f64 / 4.0 * 2.0 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn dedup_idempotent(texts in prop::collection::vec("[a-c]{1,6}( [a-c]{1,6}){0,2}", 1..15), threshold in 0.3f64..=1.0) {
        let kept = dedup_indices(&texts, &TrigramCosine, threshold).unwrap();
        let once: Vec<&String> = kept.iter().map(|&i| &texts[i]).collect();
        let again = dedup_indices(&once, &TrigramCosine, threshold).unwrap();
        prop_assert_eq!(again, (0..once.len()).collect::<Vec<_>>());
    }

    #[test]
    fn mrr_is_bounded_and_monotone(ranks in prop::collection::vec(prop::option::of(1usize..30), 1..20)) {
        let results: Vec<MatchResult> = ranks
            .iter()
            .enumerate()
            .map(|(i, r)| MatchResult { truth_id: format!("t{i}"), bias: "b".into(), matched_rank: *r, matched_rule: None })
            .collect();
        let mut last = 0.0;
        for k in 1..35 {
            let v = mrr_at_k(&results, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn dcor_invariances(x in prop::collection::vec(-50.0f64..50.0, 6..60), shift in -10.0f64..10.0, scale in 0.5f64..4.0) {
        let y: Vec<f64> = x.iter().map(|v| (v / 10.0).sin() * 3.0 + v.abs() / 20.0).collect();
        let spread = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - x.iter().cloned().fold(f64::INFINITY, f64::min);
        let y_spread = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - y.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-3 && y_spread > 1e-3);
        let base = distance_correlation(&x, &y).unwrap().raw;
        let shifted: Vec<f64> = y.iter().map(|v| v + shift).collect();
        let flipped: Vec<f64> = x.iter().map(|v| -v).collect();
        prop_assert!((distance_correlation(&x, &shifted).unwrap().raw - base).abs() < 1e-9);
        prop_assert!((distance_correlation(&flipped, &y).unwrap().raw - base).abs() < 1e-9);
        let affine: Vec<f64> = x.iter().map(|v| -scale * v + shift).collect();
        prop_assert!((distance_correlation(&x, &affine).unwrap().dcorr - 1.0).abs() < 1e-9);
    }

    #[test]
    fn wilcoxon_matches_enumeration(d in prop::collection::vec(-5i32..=5, 1..=12)) {
        let a: Vec<f64> = d.iter().map(|v| *v as f64).collect();
        prop_assume!(a.iter().any(|v| *v != 0.0));
        let w = wilcoxon_signed_rank(&a, &vec![0.0; a.len()]).unwrap();
        prop_assert!(w.exact);
        prop_assert!((w.p_value - common::wilcoxon_enumerated(&a)).abs() < 1e-12);
    }

    #[test]
    fn holm_lowering_a_p_keeps_rejections(p in prop::collection::vec(0.0f64..=1.0, 1..12), which in any::<prop::sample::Index>(), factor in 0.0f64..1.0) {
        let before = holm_bonferroni(&p, 0.05).unwrap();
        let mut lowered = p.clone();
        let i = which.index(p.len());
        lowered[i] *= factor;
        let after = holm_bonferroni(&lowered, 0.05).unwrap();
        for j in 0..p.len() {
            prop_assert!(!before.reject[j] || after.reject[j]);
        }
    }
}
