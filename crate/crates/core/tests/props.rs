//! Property tests for the library invariants.

use chrono::{DateTime, Duration, TimeZone, Utc};
use proptest::prelude::*;

use gridfall::dataset::{label_performance, random_split, test_size, SplitPlan};
use gridfall::forest::{
    fit_forest, Criterion, Forest, Hyperparams, TreeNode,
};
use gridfall::hazard::{
    current_max_gust, past_max_gust, recovery_days, snap_to_hour, sustained_to_gust, GustGrid,
};
use gridfall::importance::{mda, normalize_importance};
use gridfall::ingest::{
    max_outage_report, parse_outage_reports_from, write_outage_reports, CountyPixelMap,
    GridSample, OutageReport, Pixel,
};
use gridfall::metrics::{confusion, roc_auc};

fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2018, 5, 27, 0, 0, 0).unwrap()
}

fn outage_report_strategy() -> impl Strategy<Value = OutageReport> {
    (
        "[a-z]{1,8}",
        1_2001u32..13_000,
        0i64..(60 * 24 * 30),
        0u64..=1_000_000,
        1u64..=1_000_000,
    )
        .prop_map(|(hurricane, county, minutes, a, b)| {
            let (customers_out, customers_total) = if a <= b { (a, b) } else { (b, a) };
            OutageReport {
                hurricane,
                county: county.to_string(),
                report_time: epoch() + Duration::minutes(minutes),
                customers_out,
                customers_total: customers_total.max(1),
            }
        })
}

proptest! {
    #[test]
    fn outage_csv_round_trips(mut reports in prop::collection::vec(outage_report_strategy(), 1..40)) {
        let mut buf = Vec::new();
        write_outage_reports(&reports, &mut buf).unwrap();
        let parsed = parse_outage_reports_from(buf.as_slice()).unwrap();
        reports.sort_by(|a, b| {
            (&a.hurricane, &a.county, a.report_time).cmp(&(&b.hurricane, &b.county, b.report_time))
        });
        prop_assert_eq!(reports, parsed);
    }

    #[test]
    fn max_outage_equals_brute_force(reports in prop::collection::vec(outage_report_strategy(), 1..60)) {
        let key = (&reports[0].hurricane.clone(), reports[0].county.clone());
        let (t, f) = max_outage_report(&reports, key.0, &key.1).unwrap();
        let mut best: Option<(f64, DateTime<Utc>)> = None;
        for r in reports.iter().filter(|r| &r.hurricane == key.0 && r.county == key.1) {
            let frac = r.outage_fraction();
            let better = match best {
                None => true,
                Some((bf, bt)) => frac > bf || (frac == bf && r.report_time < bt),
            };
            if better {
                best = Some((frac, r.report_time));
            }
        }
        let (bf, bt) = best.unwrap();
        prop_assert_eq!((t, f), (bt, bf));
    }

    #[test]
    fn label_is_monotone(f1 in 0.0f64..=1.0, f2 in 0.0f64..=1.0, t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
        let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
        prop_assert!(label_performance(lo, t1) <= label_performance(hi, t1));
        let (tlo, thi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(label_performance(f1, tlo) >= label_performance(f1, thi));
    }

    #[test]
    fn splits_partition_for_all_seeds(n in 10usize..200, fraction in 0.05f64..0.95, seed in 0u64..1000, iteration in 0u64..50) {
        let labels = vec![0u8; n];
        let plan = SplitPlan { seed, test_fraction: fraction, iteration, stratified: false };
        let (train, test) = random_split(&labels, &plan).unwrap();
        prop_assert_eq!(test.len(), test_size(n, fraction));
        let mut all: Vec<usize> = train.iter().chain(test.iter()).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let (train2, test2) = random_split(&labels, &plan).unwrap();
        prop_assert_eq!(train, train2);
        prop_assert_eq!(test, test2);
    }

    #[test]
    fn gust_conversion_is_linear(v in 0.0f64..200.0, factor in 0.1f64..3.0, scale in 0.1f64..4.0) {
        let base = sustained_to_gust(v, factor);
        prop_assert!((sustained_to_gust(scale * v, factor) - scale * base).abs() < 1e-9 * (1.0 + base.abs() * scale));
        prop_assert!((sustained_to_gust(v, scale * factor) - scale * base).abs() < 1e-9 * (1.0 + base.abs() * scale));
        prop_assert_eq!(sustained_to_gust(0.0, factor), 0.0);
    }

    #[test]
    fn normalization_sums_to_100(raw in prop::collection::vec(-1.0f64..1.0, 1..30)) {
        let pct = normalize_importance(&raw);
        prop_assert_eq!(pct.len(), raw.len());
        prop_assert!(pct.iter().all(|&p| (0.0..=100.0 + 1e-9).contains(&p)));
        let total: f64 = pct.iter().sum();
        if raw.iter().any(|&v| v > 0.0) {
            prop_assert!((total - 100.0).abs() < 1e-9, "sum {}", total);
            let again = normalize_importance(&pct);
            for (a, b) in pct.iter().zip(again.iter()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        } else {
            prop_assert_eq!(total, 0.0);
        }
    }

    #[test]
    fn confusion_matches_brute_force(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..50)) {
        let labels: Vec<u8> = pairs.iter().map(|p| p.0).collect();
        let predictions: Vec<u8> = pairs.iter().map(|p| p.1).collect();
        let cm = confusion(&labels, &predictions).unwrap();
        let count = |l: u8, p: u8| pairs.iter().filter(|&&(a, b)| a == l && b == p).count() as u64;
        prop_assert_eq!(cm.true_pos, count(1, 1));
        prop_assert_eq!(cm.false_pos, count(0, 1));
        prop_assert_eq!(cm.true_neg, count(0, 0));
        prop_assert_eq!(cm.false_neg, count(1, 0));
        prop_assert_eq!(cm.total(), pairs.len() as u64);
    }

    #[test]
    fn auc_is_symmetric_under_class_flip(pairs in prop::collection::vec((0u8..2, 0u32..=10), 4..40)) {
        let labels: Vec<u8> = pairs.iter().map(|p| p.0).collect();
        let scores: Vec<f64> = pairs.iter().map(|p| p.1 as f64 / 10.0).collect();
        prop_assume!(labels.iter().any(|&l| l == 0) && labels.iter().any(|&l| l == 1));
        let forward = roc_auc(&labels, &scores).unwrap();
        let flipped_labels: Vec<u8> = labels.iter().map(|&l| 1 - l).collect();
        let flipped_scores: Vec<f64> = scores.iter().map(|&s| 1.0 - s).collect();
        let backward = roc_auc(&flipped_labels, &flipped_scores).unwrap();
        prop_assert!((forward.auc - backward.auc).abs() < 1e-12);
    }
}

// ---------------------------------------------------------------------------
// Hazard grid properties
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct GridCase {
    samples: Vec<GridSample>,
    pixels: CountyPixelMap,
    hours: usize,
}

fn grid_case() -> impl Strategy<Value = GridCase> {
    (1usize..4, 5usize..30, prop::collection::vec(0u32..400, 5 * 30 * 4))
        .prop_map(|(n_pixels, hours, values)| {
            let mut samples = Vec::new();
            let mut pixel_list = Vec::new();
            for p in 0..n_pixels {
                let pixel = Pixel::from_degrees(25.0 + 0.25 * p as f64, -87.0);
                pixel_list.push(pixel);
                for h in 0..hours {
                    let v = values[p * hours + h] as f64 / 10.0;
                    samples.push(GridSample {
                        time: epoch() + Duration::hours(h as i64),
                        pixel,
                        fg10: v,
                    });
                }
            }
            GridCase {
                samples,
                pixels: CountyPixelMap {
                    county: "12001".to_string(),
                    pixels: pixel_list,
                },
                hours,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn past_max_is_monotone_in_window(case in grid_case(), at_h in 0usize..30, s1 in 0usize..30, s2 in 0usize..30) {
        let at_h = at_h.min(case.hours - 1);
        let (mut s1, mut s2) = (s1.min(at_h), s2.min(at_h));
        if s1 < s2 {
            std::mem::swap(&mut s1, &mut s2);
        }
        // s2 <= s1 <= at: the wider window starts at s2.
        let grid = GustGrid::from_samples(&case.samples);
        let at = epoch() + Duration::hours(at_h as i64);
        let narrow = past_max_gust(&grid, &case.pixels, epoch() + Duration::hours(s1 as i64), at).unwrap();
        let wide = past_max_gust(&grid, &case.pixels, epoch() + Duration::hours(s2 as i64), at).unwrap();
        prop_assert!(wide.0 >= narrow.0);
    }

    #[test]
    fn past_max_dominates_current(case in grid_case(), at_h in 0usize..30, start_h in 0usize..30, minute in 0u32..60) {
        let at_h = at_h.min(case.hours - 1);
        let start_h = start_h.min(at_h);
        let grid = GustGrid::from_samples(&case.samples);
        // Off-hour reference times snap; keep the snapped hour inside coverage.
        let minute = if at_h == case.hours - 1 { minute.min(30) } else { minute };
        let at = epoch() + Duration::hours(at_h as i64) + Duration::minutes(minute as i64);
        let start = epoch() + Duration::hours(start_h as i64);
        let current = current_max_gust(&grid, &case.pixels, at).unwrap();
        let (past, past_time) = past_max_gust(&grid, &case.pixels, start, at).unwrap();
        prop_assert!(past >= current, "past {} < current {}", past, current);
        prop_assert!(past_time >= snap_to_hour(start));
        prop_assert!(past_time <= snap_to_hour(at));
        let days = recovery_days(past_time, snap_to_hour(at)).unwrap();
        prop_assert!(days >= 0.0);
    }

    #[test]
    fn gust_maxima_scale_equivariantly(case in grid_case(), at_h in 0usize..30, scale_pow in -2i32..3) {
        let at_h = at_h.min(case.hours - 1);
        let scale = 2f64.powi(scale_pow);
        let grid = GustGrid::from_samples(&case.samples);
        let scaled_samples: Vec<GridSample> = case
            .samples
            .iter()
            .map(|s| GridSample { fg10: s.fg10 * scale, ..s.clone() })
            .collect();
        let scaled_grid = GustGrid::from_samples(&scaled_samples);
        let at = epoch() + Duration::hours(at_h as i64);
        let base_current = current_max_gust(&grid, &case.pixels, at).unwrap();
        let scaled_current = current_max_gust(&scaled_grid, &case.pixels, at).unwrap();
        prop_assert_eq!(scaled_current, base_current * scale);
        let (base_past, base_time) = past_max_gust(&grid, &case.pixels, epoch(), at).unwrap();
        let (scaled_past, scaled_time) = past_max_gust(&scaled_grid, &case.pixels, epoch(), at).unwrap();
        prop_assert_eq!(scaled_past, base_past * scale);
        prop_assert_eq!(scaled_time, base_time);
    }
}

// ---------------------------------------------------------------------------
// Forest structural properties
// ---------------------------------------------------------------------------

fn check_structure(node: &TreeNode, criterion: Criterion, min_split: usize) -> Result<(), String> {
    if let TreeNode::Internal { left, right, .. } = node {
        let counts = node.counts();
        let n = counts[0] + counts[1];
        if (n as usize) < min_split {
            return Err(format!("internal node with {n} samples"));
        }
        let lc = left.counts();
        let rc = right.counts();
        let nl = (lc[0] + lc[1]) as f64;
        let nr = (rc[0] + rc[1]) as f64;
        if nl == 0.0 || nr == 0.0 {
            return Err("empty child".to_string());
        }
        let parent = criterion.impurity(counts);
        let weighted =
            (nl * criterion.impurity(lc) + nr * criterion.impurity(rc)) / (nl + nr);
        if weighted > parent + 1e-12 {
            return Err(format!("no impurity decrease: {weighted} > {parent}"));
        }
        check_structure(left, criterion, min_split)?;
        check_structure(right, criterion, min_split)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct TrainCase {
    x: Vec<Vec<f64>>,
    y: Vec<u8>,
    hp: Hyperparams,
    seed: u64,
}

fn train_case() -> impl Strategy<Value = TrainCase> {
    (
        10usize..40,
        2usize..4,
        prop::collection::vec(-20i32..20, 40 * 4),
        prop::collection::vec(0u8..2, 40),
        2usize..8,
        1usize..3,
        2usize..6,
        1usize..12,
        prop::bool::ANY,
        0u64..500,
    )
        .prop_map(|(n, d, grid, labels, leaves, feats, min_split, trees, entropy, seed)| {
            let x: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..d).map(|j| grid[i * d + j] as f64 / 2.0).collect())
                .collect();
            let y: Vec<u8> = (0..n).map(|i| labels[i]).collect();
            TrainCase {
                x,
                y,
                hp: Hyperparams {
                    criterion: if entropy { Criterion::Entropy } else { Criterion::Gini },
                    max_leaf_nodes: leaves,
                    max_features: feats.min(d),
                    n_trees: trees,
                    min_samples_split: min_split,
                },
                seed,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn trees_satisfy_structural_bounds(case in train_case()) {
        let forest = fit_forest(&case.x, &case.y, &case.hp, case.seed).unwrap();
        for tree in &forest.trees {
            prop_assert!(tree.leaf_count() <= case.hp.max_leaf_nodes);
            if let Err(msg) = check_structure(tree, case.hp.criterion, case.hp.min_samples_split) {
                return Err(TestCaseError::fail(msg));
            }
        }
    }

    #[test]
    fn training_is_deterministic(case in train_case()) {
        let a = fit_forest(&case.x, &case.y, &case.hp, case.seed).unwrap();
        let b = fit_forest(&case.x, &case.y, &case.hp, case.seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn predictions_survive_monotone_feature_transforms(case in train_case(), feature in 0usize..4) {
        let d = case.x[0].len();
        let feature = feature % d;
        // Cube is strictly monotone; half-integer inputs keep cubes distinct.
        let transformed: Vec<Vec<f64>> = case
            .x
            .iter()
            .map(|row| {
                let mut row = row.clone();
                row[feature] = row[feature].powi(3);
                row
            })
            .collect();
        let base = fit_forest(&case.x, &case.y, &case.hp, case.seed).unwrap();
        let mapped = fit_forest(&transformed, &case.y, &case.hp, case.seed).unwrap();
        for (tree_a, tree_b) in base.trees.iter().zip(mapped.trees.iter()) {
            prop_assert_eq!(tree_a.leaf_count(), tree_b.leaf_count());
        }
        for (row, row_t) in case.x.iter().zip(transformed.iter()) {
            prop_assert_eq!(base.predict_proba(row), mapped.predict_proba(row_t));
        }
    }

    #[test]
    fn oob_probabilities_are_vote_fractions(case in train_case()) {
        let forest = fit_forest(&case.x, &case.y, &case.hp, case.seed).unwrap();
        let votes = forest.oob_predictions(&case.x).unwrap();
        let masks = forest.oob_masks();
        for (i, vote) in votes.iter().enumerate() {
            let oob_trees: Vec<usize> =
                (0..forest.trees.len()).filter(|&t| masks[t][i]).collect();
            match vote {
                None => prop_assert!(oob_trees.is_empty()),
                Some(v) => {
                    let ones = oob_trees
                        .iter()
                        .filter(|&&t| forest.trees[t].predict(&case.x[i]) == 1)
                        .count();
                    prop_assert_eq!(v.probability, ones as f64 / oob_trees.len() as f64);
                    prop_assert_eq!(v.vote, u8::from(v.probability > 0.5));
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn mda_is_invariant_to_feature_scaling(case in train_case(), feature in 0usize..4, scale_pow in -2i32..4) {
        let d = case.x[0].len();
        let feature = feature % d;
        let scale = 2f64.powi(scale_pow);
        prop_assume!(case.x.len() >= 15);
        let scaled: Vec<Vec<f64>> = case
            .x
            .iter()
            .map(|row| {
                let mut row = row.clone();
                row[feature] *= scale;
                row
            })
            .collect();
        let base = fit_forest(&case.x, &case.y, &case.hp, case.seed).unwrap();
        let mapped = fit_forest(&scaled, &case.y, &case.hp, case.seed).unwrap();
        let raw_base = mda(&base, &case.x, &case.y, 3, 42).unwrap();
        let raw_mapped = mda(&mapped, &scaled, &case.y, 3, 42).unwrap();
        prop_assert_eq!(raw_base, raw_mapped);
    }
}

// Monotone-transform routing also depends on fresh forests agreeing tree for
// tree; keep one deterministic regression case.
#[test]
fn transform_regression_stump() {
    let x = vec![vec![1.0], vec![2.0], vec![8.0], vec![9.0]];
    let x_cubed = vec![vec![1.0], vec![8.0], vec![512.0], vec![729.0]];
    let y = vec![0, 0, 1, 1];
    let hp = Hyperparams {
        max_features: 1,
        min_samples_split: 2,
        ..Hyperparams::default()
    };
    let a = fit_forest(&x, &y, &hp, 4).unwrap();
    let b = fit_forest(&x_cubed, &y, &hp, 4).unwrap();
    for (row, row_t) in x.iter().zip(x_cubed.iter()) {
        assert_eq!(a.predict_proba(row), b.predict_proba(row_t));
    }
}

// Serialized forests survive a JSON round-trip regardless of shape.
proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn forest_json_round_trip(case in train_case()) {
        let forest = fit_forest(&case.x, &case.y, &case.hp, case.seed).unwrap();
        let mut buf = Vec::new();
        gridfall::forest::write_forest_json(&forest, &mut buf).unwrap();
        let parsed: Forest = gridfall::forest::read_forest_json(buf.as_slice()).unwrap();
        prop_assert_eq!(forest, parsed);
    }
}
