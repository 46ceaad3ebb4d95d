use oce_metrics::morph::{components, dilate, disk, erode, skeleton};
use oce_metrics::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mask(w: usize, h: usize, mut f: impl FnMut(usize, usize) -> bool) -> Mask {
    Mask::new(w, h, (0..w * h).map(|i| f(i % w, i / w)).collect()).unwrap()
}

fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, p: f64) -> Mask {
    mask(w, h, |_, _| rng.random_bool(p))
}

#[test]
fn identical_and_inverted_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gt = random_mask(&mut rng, 16, 16, 0.3);
    let c = confusion(&gt, &gt, None).unwrap();
    assert_eq!((c.fp, c.fn_), (0, 0));
    let inv = mask(16, 16, |x, y| !gt.get(x, y));
    let c = confusion(&inv, &gt, None).unwrap();
    assert_eq!((c.tp, c.tn), (0, 0));
    assert_eq!(c.total(), 256);
}

#[test]
fn shape_mismatch_is_a_dimension_error() {
    assert!(matches!(confusion(&Mask::empty(3, 2), &Mask::empty(2, 3), None), Err(Error::Dimension(_))));
    assert!(matches!(Mask::new(2, 2, vec![true; 3]), Err(Error::Dimension(_))));
}

#[test]
fn worked_example() {
    let m = basic_metrics(ConfusionCounts { tp: 3, fp: 1, fn_: 1, tn: 11 });
    assert_eq!(m.se, 0.75);
    assert!((m.sp - 11.0 / 12.0).abs() < 1e-15);
    assert_eq!(m.acc, 0.875);
    assert_eq!(m.f1, 0.75);
    assert!((m.mcc - (33.0 - 1.0) / (4.0f64 * 4.0 * 12.0 * 12.0).sqrt()).abs() < 1e-15);
    assert!(!m.degenerate);
}

#[test]
fn perfect_and_all_background() {
    let m = basic_metrics(ConfusionCounts { tp: 5, tn: 9, fp: 0, fn_: 0 });
    assert_eq!([m.se, m.sp, m.f1, m.acc, m.mcc], [1.0; 5]);
    let m = basic_metrics(ConfusionCounts { tp: 0, tn: 9, fp: 0, fn_: 5 });
    assert_eq!((m.se, m.sp), (0.0, 1.0));
    assert!(m.degenerate);
}

struct Oracle {
    se: f64,
    sp: f64,
    f1: f64,
    acc: f64,
    mcc: f64,
}

/// Counts by pixel loop, then each formula written out.
fn oracle(pred: &[bool], gt: &[bool]) -> Oracle {
    let (mut tp, mut tn, mut fp, mut fn_) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..gt.len() {
        if pred[i] && gt[i] {
            tp += 1.0;
        } else if !pred[i] && !gt[i] {
            tn += 1.0;
        } else if pred[i] {
            fp += 1.0;
        } else {
            fn_ += 1.0;
        }
    }
    let prec = tp / (tp + fp);
    let rec = tp / (tp + fn_);
    Oracle {
        se: rec,
        sp: tn / (tn + fp),
        f1: 2.0 * prec * rec / (prec + rec),
        acc: (tp + tn) / (tp + tn + fp + fn_),
        mcc: (tp * tn - fp * fn_) / ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt(),
    }
}

#[test]
fn pixel_metrics_equal_the_loop_oracle_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let gt = random_mask(&mut rng, 16, 16, 0.3);
        let pred = random_mask(&mut rng, 16, 16, 0.4);
        let m = basic_metrics(confusion(&pred, &gt, None).unwrap());
        let o = oracle(&pred.data, &gt.data);
        assert_eq!([m.se, m.sp, m.f1, m.acc, m.mcc], [o.se, o.sp, o.f1, o.acc, o.mcc]);
    }
}

#[test]
fn evaluation_mask_restricts_the_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let gt = random_mask(&mut rng, 16, 16, 0.3);
    let pred = random_mask(&mut rng, 16, 16, 0.3);
    let fov = mask(16, 16, |x, y| (x as f64 - 7.5).hypot(y as f64 - 7.5) < 7.0);
    let c = confusion(&pred, &gt, Some(&fov)).unwrap();
    assert_eq!(c.total() as usize, fov.count());
    let inside: Vec<usize> = (0..256).filter(|&i| fov.data[i]).collect();
    let sub = |m: &Mask| inside.iter().map(|&i| m.data[i]).collect::<Vec<_>>();
    let o = oracle(&sub(&pred), &sub(&gt));
    assert_eq!(basic_metrics(c).acc, o.acc);
}

/// P(score of a positive > score of a negative), ties counted half.
fn rank_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

#[test]
fn auc_equals_the_all_pairs_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let labels: Vec<bool> = (0..500).map(|_| rng.random_bool(0.3)).collect();
    // a shuffled permutation of distinct values, shifted by a non-multiple of the spacing for positives
    let mut scores: Vec<f64> = (0..500).map(|i| i as f64 / 500.0).collect();
    for i in (1..500).rev() {
        scores.swap(i, rng.random_range(0..=i));
    }
    for (s, &l) in scores.iter_mut().zip(&labels) {
        *s = (*s + if l { 0.301 } else { 0.0 }) / 1.302;
    }
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    assert!(sorted.windows(2).all(|w| w[0] < w[1]), "scores must be tie-free");
    let got = auc_scores(&scores, &labels).unwrap();
    assert!((got - rank_oracle(&scores, &labels)).abs() < 1e-9);
    assert!(got > 0.6);
}

#[test]
fn auc_edge_cases() {
    assert_eq!(auc_scores(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
    assert_eq!(auc_scores(&[0.5; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
    assert_eq!(auc_scores(&[0.9, 0.1], &[false, true]).unwrap(), 0.0);
    assert!(matches!(auc_scores(&[0.1, 0.2], &[true, true]), Err(Error::Undefined(_))));
    assert!(matches!(auc_scores(&[0.1], &[true, false]), Err(Error::Dimension(_))));
}

#[test]
fn auc_over_a_map_respects_the_evaluation_mask() {
    let gt = mask(4, 1, |x, _| x >= 2);
    let prob = [0.9, 0.1, 0.2, 0.8];
    assert_eq!(auc(&prob, &gt, None).unwrap(), 0.5);
    let fov = mask(4, 1, |x, _| x != 0);
    assert_eq!(auc(&prob, &gt, Some(&fov)).unwrap(), 1.0);
}

#[test]
fn identical_masks_score_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gt = random_mask(&mut rng, 24, 24, 0.2);
    let m = cal_metrics(&gt, &gt).unwrap();
    assert_eq!([m.c, m.a, m.l, m.f], [1.0; 4]);
}

#[test]
fn empty_prediction_scores_zero() {
    let gt = mask(16, 16, |x, _| x == 5);
    let m = cal_metrics(&Mask::empty(16, 16), &gt).unwrap();
    assert_eq!((m.a, m.l, m.f), (0.0, 0.0, 0.0));
    assert!(matches!(cal_metrics(&gt, &Mask::empty(16, 16)), Err(Error::Undefined(_))));
}

/// Dilation written as a set: every pixel within Euclidean distance 2 of a foreground pixel.
fn dilate_oracle(m: &Mask) -> Vec<bool> {
    (0..m.data.len())
        .map(|i| {
            let (x, y) = ((i % m.width) as i64, (i / m.width) as i64);
            (0..m.data.len()).any(|j| {
                let (u, v) = ((j % m.width) as i64, (j / m.width) as i64);
                m.data[j] && (x - u).pow(2) + (y - v).pow(2) <= 4
            })
        })
        .collect()
}

#[test]
fn shifted_line_keeps_full_area() {
    let gt = mask(20, 12, |x, y| y == 5 && (3..17).contains(&x));
    let pred = mask(20, 12, |x, y| y == 6 && (3..17).contains(&x));
    let dg = dilate_oracle(&gt);
    let dp = dilate_oracle(&pred);
    let num = (0..240).filter(|&i| (dp[i] && gt.data[i]) || (pred.data[i] && dg[i])).count();
    let den = (0..240).filter(|&i| pred.data[i] || gt.data[i]).count();
    assert_eq!(num, den);
    let m = cal_metrics(&pred, &gt).unwrap();
    assert_eq!(m.a, 1.0);
    assert_eq!(m.c, 1.0);
    assert_eq!(m.l, 1.0);
}

#[test]
fn dilation_matches_the_set_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let m = random_mask(&mut rng, 13, 11, 0.05);
        assert_eq!(dilate(&m, 2).data, dilate_oracle(&m));
    }
    assert_eq!(disk(2).len(), 13);
}

#[test]
fn connectivity_counts_components() {
    let gt = mask(20, 20, |_, y| y == 3 || y == 10);
    let broken = mask(20, 20, |x, y| (y == 3 || y == 10) && x != 8 && x != 14);
    assert_eq!(components(&gt), 2);
    assert_eq!(components(&broken), 6);
    let m = cal_metrics(&broken, &gt).unwrap();
    assert_eq!(m.c, 1.0 - 4.0 / 40.0);
    let diagonal = mask(5, 5, |x, y| x == y);
    assert_eq!(components(&diagonal), 1);
}

#[test]
fn f_is_the_product_of_its_factors() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let gt = random_mask(&mut rng, 20, 20, 0.25);
        let pred = random_mask(&mut rng, 20, 20, 0.25);
        if gt.count() == 0 {
            continue;
        }
        let m = cal_metrics(&pred, &gt).unwrap();
        assert!((m.f - m.c * m.a * m.l).abs() <= 1e-9);
        for v in [m.c, m.a, m.l, m.f] {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn skeleton_of_a_bar_is_one_pixel_wide() {
    let bar = mask(30, 11, |x, y| (3..8).contains(&y) && (2..28).contains(&x));
    let s = skeleton(&bar);
    assert!(s.data.iter().zip(&bar.data).all(|(&s, &b)| !s || b));
    assert_eq!(components(&s), 1);
    for x in 6..24 {
        assert_eq!((0..11).filter(|&y| s.get(x, y)).count(), 1, "column {x}");
    }
    let line = mask(10, 5, |x, y| y == 2 && (1..9).contains(&x));
    assert_eq!(skeleton(&line), line);
}

#[test]
fn tiny_blobs_keep_a_skeleton_pixel() {
    let square = mask(6, 6, |x, y| (2..4).contains(&x) && (2..4).contains(&y));
    assert_eq!(skeleton(&square).count(), 1);
}

#[test]
fn thin_and_thick_split() {
    let line = mask(20, 20, |x, y| x == 9 && (2..18).contains(&y));
    let (thin, thick) = separate_thin(&line);
    assert_eq!((thin, thick.count()), (line.clone(), 0));

    // a disk cannot reach into square corners: three pixels per corner fall to thin
    let square = mask(20, 20, |x, y| (5..14).contains(&x) && (5..14).contains(&y));
    let (thin, thick) = separate_thin(&square);
    let corner = |x: usize, y: usize| {
        let (dx, dy) = (x.abs_diff(5).min(x.abs_diff(13)), y.abs_diff(5).min(y.abs_diff(13)));
        dx + dy <= 1
    };
    assert_eq!(thin, mask(20, 20, |x, y| square.get(x, y) && corner(x, y)));
    assert_eq!(thick.count(), 81 - 12);

    let four_wide = mask(20, 20, |x, _| (8..12).contains(&x));
    assert_eq!(separate_thin(&four_wide).0, four_wide);
    let five_wide = mask(20, 20, |x, _| (8..13).contains(&x));
    assert_eq!(separate_thin(&five_wide).1, five_wide);
}

#[test]
fn erosion_ignores_the_frame() {
    let full = mask(7, 7, |_, _| true);
    assert_eq!(erode(&full, 2), full);
}

#[test]
fn csv_layout() {
    let r = MetricReport { se: 1.0, sp: 0.5, f1: 0.25, acc: 0.75, auc: None, mcc: -0.5, c: 1.0, a: 1.0, l: 0.5, f: 0.5 };
    let s = MetricReport { auc: Some(0.8), se: 0.0, ..r };
    let mut out = Vec::new();
    write_csv(&mut out, &[("a".into(), r), ("b".into(), s)]).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "image,Se,Sp,F1,Acc,AUC,Mcc,Connectivity (C),Overlapping Area (A),Consistency (L),F");
    assert_eq!(lines[1], "a,1.000000,0.500000,0.250000,0.750000,NA,-0.500000,1.000000,1.000000,0.500000,0.500000");
    assert_eq!(lines[3], "mean,0.500000,0.500000,0.250000,0.750000,0.800000,-0.500000,1.000000,1.000000,0.500000,0.500000");

    let mut out = Vec::new();
    let m = CalMetrics { c: 1.0, a: 0.5, l: 0.5, f: 0.25 };
    write_thin_csv(&mut out, &[("a".into(), "thin", m), ("a".into(), "thick", m)]).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.contains("mean,thick,1.000000,0.500000,0.500000,0.250000"));
}

fn arb_mask(w: usize, h: usize) -> impl Strategy<Value = Mask> {
    proptest::collection::vec(any::<bool>(), w * h).prop_map(move |d| Mask::new(w, h, d).unwrap())
}

proptest! {
    #[test]
    fn thin_thick_partition_is_exact(m in arb_mask(14, 12)) {
        let (thin, thick) = separate_thin(&m);
        prop_assert_eq!(thin.or(&thick), m);
        prop_assert_eq!(thin.and(&thick).count(), 0);
    }

    #[test]
    fn auc_is_invariant_under_monotone_maps(scores in proptest::collection::vec(0.0f64..1.0, 2..60), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels: Vec<bool> = scores.iter().map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let a = auc_scores(&scores, &labels).unwrap();
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert!((a - auc_scores(&warped, &labels).unwrap()).abs() < 1e-9);
        prop_assert!((a - rank_oracle(&scores, &labels)).abs() < 1e-9);
    }

    #[test]
    fn skeleton_is_a_subset_keeping_components(m in arb_mask(12, 12)) {
        let s = skeleton(&m);
        prop_assert_eq!(s.and_not(&m).count(), 0);
        prop_assert_eq!(components(&s), components(&m));
    }

    #[test]
    fn counts_cover_every_pixel(p in arb_mask(9, 7), g in arb_mask(9, 7)) {
        prop_assert_eq!(confusion(&p, &g, None).unwrap().total(), 63);
    }
}
