use std::collections::HashSet;

use proptest::prelude::*;
use segqc_core::detection::{self, BoundingBox2D, DetectionParams};
use segqc_core::evaluation::{
    correction_curve_3d, detection_eval, mae, optimal_case_ranking, paired_t_test, pearson,
    random_correction_curve_3d, stratified_select, Candidate, StratificationSpec,
};
use segqc_core::extraction::{self, ExtractionParams, MinComponent};
use segqc_core::metrics::{
    estimate_all, estimate_sums, estimated_truth, true_metrics, EstimateSums, DiceEstMode, Metric, MetricConfig,
};
use segqc_core::morphology::{self, Plane};
use segqc_core::ranking::{Direction, RankPolicy, RankedList};
use segqc_core::volume::{read_volume, write_volume, AnyVolume, BinaryMask, ProbabilityVolume, VolumeGeometry};

fn mask_strategy(max_dim: usize) -> impl Strategy<Value = BinaryMask> {
    (1..=max_dim, 1..=max_dim, 1..=4usize).prop_flat_map(|(c, r, s)| {
        proptest::collection::vec(prop::bool::weighted(0.35), c * r * s).prop_map(move |v| {
            let g = VolumeGeometry::unit(c, r, s).unwrap();
            BinaryMask::new(g, v.into_iter().map(u8::from).collect()).unwrap()
        })
    })
}

fn pair_strategy(max_dim: usize) -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    mask_strategy(max_dim).prop_flat_map(|m| {
        let g = *m.geometry();
        proptest::collection::vec(prop::bool::weighted(0.35), g.voxel_count()).prop_map(move |v| {
            (m.clone(), BinaryMask::new(g, v.into_iter().map(u8::from).collect()).unwrap())
        })
    })
}

fn mask_and_error(max_dim: usize) -> impl Strategy<Value = (BinaryMask, ProbabilityVolume)> {
    mask_strategy(max_dim).prop_flat_map(|m| {
        let g = *m.geometry();
        proptest::collection::vec(0.0f32..=1.0, g.voxel_count())
            .prop_map(move |v| (m.clone(), ProbabilityVolume::new(g, v).unwrap()))
    })
}

fn oracle(m: &BinaryMask, t: &BinaryMask) -> ProbabilityVolume {
    ProbabilityVolume::from_mask(&extraction::difference_volume(m, t).unwrap())
}

fn plane_strategy(max: usize) -> impl Strategy<Value = Plane> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| {
        proptest::collection::vec(prop::bool::weighted(0.6), r * c)
            .prop_map(move |v| Plane::new(r, c, v.into_iter().map(u8::from).collect()))
    })
}

fn boxes_strategy() -> impl Strategy<Value = Vec<BoundingBox2D>> {
    proptest::collection::vec((0..2usize, 0..30usize, 0..30usize, 1..8usize, 1..8usize), 0..12).prop_map(|v| {
        let g = VolumeGeometry::unit(40, 40, 2).unwrap();
        v.into_iter()
            .map(|(k, r, c, h, w)| BoundingBox2D::new(k, (r, c), (r + h, c + w), &g).unwrap())
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn oracle_estimates_equal_true_metrics((m, t) in pair_strategy(7)) {
        let cfg = MetricConfig::exact();
        let q = estimate_all(&m, &oracle(&m, &t), &cfg).unwrap();
        let truth = true_metrics(&m, &t).unwrap();
        prop_assert!((q.dice_est - truth.dice3d).abs() < 1e-12);
        prop_assert!((q.iou_est - truth.iou3d).abs() < 1e-12);
        if let Some(a) = truth.arvd3d {
            prop_assert!((q.arvd_est - a).abs() < 1e-12);
        }
        for (s, ts) in q.per_slice.iter().zip(&truth.slices) {
            if s.defined {
                prop_assert!((s.dice_est - ts.dice).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn oracle_estimated_truth_is_truth((m, t) in pair_strategy(6)) {
        let that = estimated_truth(&m, &oracle(&m, &t)).unwrap();
        for (&a, &b) in that.values().iter().zip(t.values()) {
            prop_assert_eq!(a, b as f32);
        }
    }

    #[test]
    fn arvd_forms_agree_for_binary_masks((m, e) in mask_and_error(6)) {
        let q = estimate_all(&m, &e, &MetricConfig::default()).unwrap();
        prop_assert!((q.arvd_est - q.arvd_est_simplified).abs() < 1e-9);
    }

    #[test]
    fn estimates_stay_in_range((m, e) in mask_and_error(6)) {
        let std = estimate_all(&m, &e, &MetricConfig::default()).unwrap();
        let lit = estimate_all(&m, &e, &MetricConfig::new(1e-7, DiceEstMode::PaperLiteral).unwrap()).unwrap();
        prop_assert!((0.0..=1.0).contains(&std.dice_est));
        prop_assert!((0.0..=1.0).contains(&std.iou_est));
        prop_assert!(std.arvd_est >= 0.0);
        prop_assert!(lit.dice_est <= std.dice_est);
        if !m.is_empty_mask() {
            prop_assert!(lit.dice_est < std.dice_est);
        }
        // dice and iou estimates are linked like their ground-truth versions
        prop_assert!(std.iou_est <= std.dice_est + 1e-12);
    }

    #[test]
    fn more_error_never_raises_overlap_term((m, e) in mask_and_error(5), bump in 0.0f32..0.5) {
        let worse = ProbabilityVolume::new(
            *e.geometry(),
            e.values().iter().map(|v| (v + bump).min(1.0)).collect(),
        ).unwrap();
        let num = |e: &ProbabilityVolume| -> f64 {
            m.values().iter().zip(e.values()).map(|(&a, &b)| a as f64 * (1.0 - b as f64)).sum()
        };
        prop_assert!(num(&worse) <= num(&e) + 1e-9);
    }

    #[test]
    fn volume_sums_are_slice_sums((m, e) in mask_and_error(6)) {
        let whole = estimate_sums(&m, &e).unwrap();
        let n = m.geometry().slice_len();
        let mut acc = EstimateSums::default();
        for (ms, es) in m.values().chunks(n).zip(e.values().chunks(n)) {
            acc.add(&EstimateSums::from_slices(ms, es));
        }
        for (a, b) in [
            (whole.mask, acc.mask),
            (whole.truth, acc.truth),
            (whole.intersection, acc.intersection),
            (whole.signed_diff, acc.signed_diff),
            (whole.abs_diff, acc.abs_diff),
            (whole.error, acc.error),
        ] {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn self_band_removal_is_erosion(p in plane_strategy(14), r in 1..3usize, it in 1..3usize) {
        let kept = extraction::remove_band(&p, &p, r, it);
        prop_assert_eq!(kept, morphology::erode(&p, r, it));
    }

    #[test]
    fn extraction_output_is_subset(m in mask_strategy(12), r in 1..3usize, min in 1.0f64..20.0) {
        let params = ExtractionParams {
            radius: r,
            min_component: MinComponent::Voxels(min),
            ..Default::default()
        };
        let out = extraction::extract_estimated_error(&m, &params, None).unwrap();
        for (&o, &i) in out.values().iter().zip(m.values()) {
            prop_assert!(o <= i);
        }
    }

    #[test]
    fn unify_is_idempotent_and_order_free(boxes in boxes_strategy(), min_d in 1..7usize) {
        let once = detection::unify_boxes(&boxes, min_d);
        prop_assert_eq!(detection::unify_boxes(&once, min_d), once.clone());
        let mut rev = boxes.clone();
        rev.reverse();
        prop_assert_eq!(detection::unify_boxes(&rev, min_d), once.clone());
        for (i, a) in once.iter().enumerate() {
            for b in &once[i + 1..] {
                prop_assert!(!a.is_near(b, min_d));
            }
        }
    }

    #[test]
    fn surviving_boxes_cover_their_voxels(m in mask_strategy(14)) {
        let params = DetectionParams { min_area_mm2: 3.0, ..Default::default() };
        let boxes = detection::detect_error_regions(&m, &params).unwrap();
        for b in &boxes {
            let view = m.slice(b.slice_index).unwrap();
            let hit = (b.row0..b.row1).any(|r| (b.col0..b.col1).any(|c| view.get(r, c) == 1));
            prop_assert!(hit);
        }
        // a voxel lies in at most one box
        for view in m.slices() {
            for r in 0..view.rows() {
                for c in 0..view.cols() {
                    let n = boxes.iter().filter(|b| b.slice_index == view.index() && b.contains(r, c)).count();
                    prop_assert!(n <= 1);
                }
            }
        }
    }

    #[test]
    fn detection_report_monotone(pred in boxes_strategy(), gt in boxes_strategy()) {
        let grid = [0.05, 0.1, 0.15, 0.2, 0.5, 0.9];
        let r = detection_eval(&pred, &gt, &grid).unwrap();
        for t in &r.thresholds {
            prop_assert_eq!(t.tp + t.fn_, gt.len());
            prop_assert_eq!(t.tp + t.fp, pred.len());
        }
        for w in r.thresholds.windows(2) {
            prop_assert!(w[1].tp <= w[0].tp);
            prop_assert!(w[1].precision <= w[0].precision);
            prop_assert!(w[1].recall <= w[0].recall);
        }
    }

    #[test]
    fn mae_and_pearson_properties(
        x in proptest::collection::vec(-10.0f64..10.0, 3..20),
        a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
        b in -3.0f64..3.0,
    ) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * v + i as f64).collect();
        prop_assert!(mae(&x, &y).unwrap() >= 0.0);
        prop_assert_eq!(mae(&x, &x).unwrap(), 0.0);
        if let (Ok(r), Ok(rs)) = (pearson(&x, &y), pearson(&y, &x)) {
            prop_assert!((r - rs).abs() < 1e-12);
            let scaled: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let r2 = pearson(&scaled, &y).unwrap();
            prop_assert!((r2 - a.signum() * r).abs() < 1e-9);
        }
    }

    #[test]
    fn t_test_is_antisymmetric(
        a in proptest::collection::vec(0.0f64..1.0, 2..15),
        shift in proptest::collection::vec(-0.2f64..0.2, 15),
    ) {
        let b: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| x + s).collect();
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        prop_assert_eq!(ab.t, -ba.t);
        prop_assert_eq!(ab.p, ba.p);
        prop_assert!((0.0..=1.0).contains(&ab.p));
    }

    #[test]
    fn stratification_is_deterministic_and_binned(
        dice in proptest::collection::vec(0.0f64..=1.0, 30..80),
        seed in any::<u64>(),
    ) {
        let pool: Vec<Candidate> = dice
            .iter()
            .enumerate()
            .map(|(i, &d)| Candidate { case_id: format!("c{}", i % 9), mask_id: format!("m{i}"), dice: d })
            .collect();
        let spec = StratificationSpec::new(vec![0.0, 0.5, 1.0], 3).unwrap();
        match stratified_select(&pool, &spec, seed) {
            Ok(sel) => {
                prop_assert_eq!(&sel, &stratified_select(&pool, &spec, seed).unwrap());
                prop_assert_eq!(sel.len(), 6);
                for s in &sel {
                    let (lo, hi) = (spec.bin_edges[s.bin], spec.bin_edges[s.bin + 1]);
                    let top = s.bin + 1 == spec.n_bins();
                    prop_assert!(s.candidate.dice >= lo && (s.candidate.dice < hi || (top && s.candidate.dice <= hi)));
                }
                let ids: HashSet<_> = sel.iter().map(|s| &s.candidate.mask_id).collect();
                prop_assert_eq!(ids.len(), 6);
            }
            Err(e) => prop_assert!(e.is_precondition()),
        }
    }

    #[test]
    fn ranking_ignores_input_order(scores in proptest::collection::vec(0.0f64..1.0, 1..20)) {
        let items: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
        let a = RankedList::from_scores(RankPolicy::ErrorSum, items.clone(), Direction::Descending);
        let mut rev = items;
        rev.reverse();
        let b = RankedList::from_scores(RankPolicy::ErrorSum, rev, Direction::Descending);
        prop_assert_eq!(&a, &b);
        prop_assert!(a.entries.windows(2).all(|w| w[0].score >= w[1].score));
        let mut ids = a.ids();
        ids.sort();
        prop_assert_eq!(ids, (0..scores.len()).collect::<Vec<_>>());
    }

    #[test]
    fn optimal_curve_dominates(q in proptest::collection::vec(0.0f64..1.0, 1..15), seed in any::<u64>()) {
        let truth: Vec<(String, f64)> = q.iter().enumerate().map(|(i, v)| (format!("c{i:02}"), *v)).collect();
        let best = correction_curve_3d(&truth, &optimal_case_ranking(&truth)).unwrap();
        let random = random_correction_curve_3d(&truth, 5, seed).unwrap();
        prop_assert!(best.dominates(&random, 1e-12));
        let worst = RankedList::from_scores(RankPolicy::MetricEstimate, truth.clone(), Direction::Descending);
        prop_assert!(best.dominates(&correction_curve_3d(&truth, &worst).unwrap(), 1e-12));
        prop_assert!((best.y[best.y.len() - 1] - 1.0).abs() < 1e-12);
        prop_assert!(best.y.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn sqv_round_trip(m in mask_strategy(6), e in mask_and_error(4)) {
        let dir = tempfile::tempdir().unwrap();
        write_volume(&m, dir.path().join("m.sqv")).unwrap();
        write_volume(&e.1, dir.path().join("e.sqv")).unwrap();
        match read_volume(dir.path().join("m.sqv")).unwrap() {
            AnyVolume::Mask(r) => prop_assert_eq!(r, m),
            other => prop_assert!(false, "read back {:?}", other.kind()),
        }
        match read_volume(dir.path().join("e.sqv.json")).unwrap() {
            AnyVolume::Probability(r) => prop_assert_eq!(r, e.1),
            other => prop_assert!(false, "read back {:?}", other.kind()),
        }
    }
}

#[test]
fn metric_names_round_trip() {
    for m in Metric::ALL {
        assert_eq!(m.name().parse::<Metric>().unwrap(), m);
    }
}
