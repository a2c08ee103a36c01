mod common;

use common::{oracle_bce, oracle_dice, oracle_jaccard, random_vec, rng};
use mininet::autodiff::{grad_check, GradCheckOptions};
use mininet::objectives::losses::tape as loss_tape;
use mininet::objectives::*;
use mininet::Tensor;
use proptest::prelude::*;
use rand::Rng;

fn t(shape: &[usize], v: &[f32]) -> Tensor {
    Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
}

fn f64s(v: &[f32]) -> Vec<f64> {
    v.iter().map(|x| *x as f64).collect()
}

const MASK8: [f32; 8] = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0];

fn half8() -> Tensor {
    Tensor::full(vec![1, 2, 4], 0.5)
}

fn mask8() -> Tensor {
    t(&[1, 2, 4], &MASK8)
}

#[test]
fn dice_on_uniform_half_prediction() {
    let oracle = oracle_dice(&[0.5; 8], &f64s(&MASK8), 1.0);
    assert!((oracle - 4.0 / 9.0).abs() < 1e-12);
    let got = dice_loss(&half8(), &mask8(), 1.0, DiceForm::Standard).unwrap();
    assert!((got as f64 - 0.444_444_4).abs() < 1e-6);
}

#[test]
fn literal_dice_squares_the_unscaled_complement() {
    let got = dice_loss(&half8(), &mask8(), 1.0, DiceForm::Literal).unwrap();
    // (1 - (2 + 1) / (4 + 4 + 1))²
    assert!((got as f64 - 4.0 / 9.0).abs() < 1e-6);
    let p = t(&[1, 2, 4], &[0.9, 0.1, 0.8, 0.7, 0.2, 0.0, 0.6, 0.3]);
    let inter = 0.9 + 0.8 + 0.7 + 0.6;
    let r: f64 = (inter + 1.0) / (3.6 + 4.0 + 1.0);
    let got = dice_loss(&p, &mask8(), 1.0, DiceForm::Literal).unwrap();
    assert!((got as f64 - (1.0 - r).powi(2)).abs() < 1e-6);
}

#[test]
fn jaccard_on_uniform_half_prediction() {
    let oracle = oracle_jaccard(&[0.5; 8], &f64s(&MASK8), 1.0);
    assert!((oracle - 4.0 / 7.0).abs() < 1e-12);
    let got = jaccard_loss(&half8(), &mask8(), 1.0).unwrap();
    assert!((got as f64 - 0.571_428_6).abs() < 1e-6);
}

#[test]
fn jaccard_and_dice_overlaps_are_linked() {
    // With hard predictions and no smoothing pull, D = 2J / (1 + J).
    let p = t(&[1, 2, 4], &[1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let d = 1.0 - dice_loss(&p, &mask8(), 1e-6, DiceForm::Standard).unwrap() as f64;
    let j = 1.0 - jaccard_loss(&p, &mask8(), 1e-6).unwrap() as f64;
    assert!((d - 2.0 * j / (1.0 + j)).abs() < 1e-5);
    assert!(j <= d);
}

#[test]
fn bce_values() {
    let half = bce_loss(&half8(), &mask8()).unwrap();
    assert!((half as f64 - std::f64::consts::LN_2).abs() < 1e-6);
    let p = [0.9f32, 0.2, 0.6, 0.3];
    let y = [1.0f32, 0.0, 0.0, 1.0];
    let oracle = oracle_bce(&f64s(&p), &f64s(&y));
    assert!((oracle - 0.612_191_9).abs() < 1e-7);
    let got = bce_loss(&t(&[4], &p), &t(&[4], &y)).unwrap();
    assert!((got as f64 - 0.612_191_9).abs() < 1e-6);
}

#[test]
fn perfect_and_disjoint_predictions() {
    let m = mask8();
    let inv = Tensor::from_fn(vec![1, 2, 4], |i| 1.0 - MASK8[i]);
    // ε / (2Σt + ε) on a perfect match
    assert!(dice_loss(&m, &m, 1.0, DiceForm::Standard).unwrap() < 1e-6);
    assert!(jaccard_loss(&m, &m, 1.0).unwrap() < 1e-6);
    assert!(bce_loss(&m, &m).unwrap() <= 1.1e-7);
    let d = dice_loss(&inv, &m, 1.0, DiceForm::Standard).unwrap();
    assert!((d - 8.0 / 9.0).abs() < 1e-6, "disjoint dice {d}");
    assert!((dice_loss(&inv, &m, 1e-6, DiceForm::Standard).unwrap() - 1.0).abs() < 1e-6);
    assert!((jaccard_loss(&inv, &m, 1e-6).unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn losses_average_over_images() {
    let a = [0.5f32; 8];
    let b = [0.9f32, 0.1, 0.8, 0.7, 0.2, 0.0, 0.6, 0.3];
    let p = t(&[2, 1, 2, 4], &[a, b].concat());
    let y = t(&[2, 1, 2, 4], &[MASK8, MASK8].concat());
    let want = (oracle_dice(&f64s(&a), &f64s(&MASK8), 1.0)
        + oracle_dice(&f64s(&b), &f64s(&MASK8), 1.0))
        / 2.0;
    assert!((dice_loss(&p, &y, 1.0, DiceForm::Standard).unwrap() as f64 - want).abs() < 1e-6);
    let want = (oracle_jaccard(&f64s(&a), &f64s(&MASK8), 1.0)
        + oracle_jaccard(&f64s(&b), &f64s(&MASK8), 1.0))
        / 2.0;
    assert!((jaccard_loss(&p, &y, 1.0).unwrap() as f64 - want).abs() < 1e-6);
    let want = oracle_bce(&f64s(&[a, b].concat()), &f64s(&[MASK8, MASK8].concat()));
    assert!((bce_loss(&p, &y).unwrap() as f64 - want).abs() < 1e-6);
}

#[test]
fn shape_mismatch_is_rejected() {
    let p = Tensor::full(vec![1, 2, 4], 0.5);
    let y = Tensor::zeros(vec![1, 4, 2]);
    assert!(dice_loss(&p, &y, 1.0, DiceForm::Standard).is_err());
    assert!(jaccard_loss(&p, &y, 1.0).is_err());
    assert!(bce_loss(&p, &y).is_err());
    assert!(confusion(&p, &y, 0.5).is_err());
}

#[test]
fn total_loss_compositions() {
    let (p, y) = (half8(), mask8());
    let bce_only = LossSpec::terms(false, false, true, AlphaSchedule::Constant(1.0));
    assert_eq!(
        total_loss(&p, &y, &bce_only, 0).unwrap(),
        bce_loss(&p, &y).unwrap()
    );

    let full = LossSpec::default();
    let oracle = oracle_dice(&[0.5; 8], &f64s(&MASK8), 1.0)
        + oracle_bce(&[0.5; 8], &f64s(&MASK8))
        + oracle_jaccard(&[0.5; 8], &f64s(&MASK8), 1.0);
    assert!((oracle - 1.709_020_2).abs() < 1e-7);
    for epoch in [0usize, 1, 5] {
        let alpha = 0.97f64.powi(epoch as i32);
        let got = total_loss(&p, &y, &full, epoch).unwrap() as f64;
        assert!((got - alpha * 1.709_020_2).abs() < 1e-5, "epoch {epoch}");
    }

    let one = LossSpec::terms(true, true, true, AlphaSchedule::Constant(1.0));
    let half = LossSpec::terms(true, true, true, AlphaSchedule::Constant(0.5));
    assert_eq!(
        total_loss(&p, &y, &half, 3).unwrap(),
        0.5 * total_loss(&p, &y, &one, 3).unwrap()
    );
}

#[test]
fn tape_losses_match_value_functions() {
    let mut r = rng(11);
    let p = Tensor::new(vec![2, 1, 3, 3], random_vec(&mut r, 18, 0.05, 0.95)).unwrap();
    let y = Tensor::from_fn(
        vec![2, 1, 3, 3],
        |_| if r.random_bool(0.4) { 1.0 } else { 0.0 },
    );
    let spec = LossSpec::default();
    let mut tape = mininet::Tape::new();
    let v = tape.leaf(p.clone().with_requires_grad(true));
    let out = loss_tape::total(&mut tape, v, &y, &spec, 2).unwrap();
    assert_eq!(
        tape.value(out).item().unwrap(),
        total_loss(&p, &y, &spec, 2).unwrap()
    );
}

fn loss_grad_opts() -> GradCheckOptions {
    GradCheckOptions::with_tolerance(1e-3)
}

#[test]
#[allow(clippy::type_complexity)]
fn loss_gradients_match_finite_differences() {
    let mut r = rng(12);
    let p = Tensor::new(vec![1, 2, 4], random_vec(&mut r, 8, 0.1, 0.9))
        .unwrap()
        .with_requires_grad(true);
    let y = mask8();
    let cases: Vec<(
        &str,
        Box<dyn Fn(&mut mininet::Tape, mininet::Var) -> mininet::Result<mininet::Var>>,
    )> = vec![
        (
            "dice",
            Box::new(|tp, v| loss_tape::dice(tp, v, &y, 1.0, DiceForm::Standard)),
        ),
        (
            "dice_literal",
            Box::new(|tp, v| loss_tape::dice(tp, v, &y, 1.0, DiceForm::Literal)),
        ),
        (
            "jaccard",
            Box::new(|tp, v| loss_tape::jaccard(tp, v, &y, 1.0)),
        ),
        ("bce", Box::new(|tp, v| loss_tape::bce(tp, v, &y))),
        (
            "total",
            Box::new(|tp, v| loss_tape::total(tp, v, &y, &LossSpec::default(), 4)),
        ),
    ];
    for (name, f) in cases {
        let report = grad_check(
            name,
            &[("pred", p.clone())],
            |tp, v| f(tp, v[0]),
            loss_grad_opts(),
        )
        .unwrap();
        assert!(report.passed(), "{report}");
    }
}

#[test]
fn loss_gradient_scales_with_alpha() {
    let p = Tensor::new(vec![1, 2, 4], vec![0.3, 0.6, 0.2, 0.9, 0.4, 0.5, 0.7, 0.1]).unwrap();
    let y = mask8();
    let grad_for = |c: f64| {
        let mut tape = mininet::Tape::new();
        let v = tape.leaf(p.clone().with_requires_grad(true));
        let spec = LossSpec::terms(true, true, true, AlphaSchedule::Constant(c));
        let l = loss_tape::total(&mut tape, v, &y, &spec, 0).unwrap();
        tape.backward(l).unwrap().get(v).unwrap().to_vec()
    };
    let (g1, g4) = (grad_for(1.0), grad_for(0.25));
    for (a, b) in g1.iter().zip(&g4) {
        assert_eq!(a * 0.25, *b);
    }
}

#[test]
fn confusion_basics() {
    let m = mask8();
    let c = confusion(&m, &m, 0.5).unwrap();
    assert_eq!((c.fp, c.fn_, c.tp, c.tn), (0, 0, 4, 4));
    let c = confusion(&Tensor::ones(vec![10]), &Tensor::zeros(vec![10]), 0.5).unwrap();
    assert_eq!(c.fp, 10);
    assert_eq!(c.total(), 10);
    // The threshold itself counts as positive.
    let c = confusion(&t(&[2], &[0.5, 0.4999]), &t(&[2], &[1.0, 1.0]), 0.5).unwrap();
    assert_eq!((c.tp, c.fn_), (1, 1));
}

#[test]
fn confusion_matches_enumeration() {
    let mut r = rng(16);
    let p = random_vec(&mut r, 16, 0.0, 1.0);
    let y: Vec<f32> = (0..16)
        .map(|_| if r.random_bool(0.5) { 1.0 } else { 0.0 })
        .collect();
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for i in 0..16 {
        let pos = p[i] >= 0.5;
        let truth = y[i] == 1.0;
        if pos && truth {
            tp += 1;
        } else if pos {
            fp += 1;
        } else if truth {
            fn_ += 1;
        } else {
            tn += 1;
        }
    }
    let c = confusion(&t(&[16], &p), &t(&[16], &y), 0.5).unwrap();
    assert_eq!(c, ConfusionCounts { tp, fp, tn, fn_ });
    assert_eq!(c.total(), 16);
}

#[test]
fn metrics_from_hand_counts() {
    let c = ConfusionCounts {
        tp: 3,
        fp: 1,
        fn_: 1,
        tn: 11,
    };
    let m = Metrics::from_counts(&c, None);
    assert!((m.sensitivity - 0.75).abs() < 1e-12);
    assert!((m.specificity - 11.0 / 12.0).abs() < 1e-12);
    assert!((m.accuracy - 14.0 / 16.0).abs() < 1e-12);
    assert!((m.f1 - 0.75).abs() < 1e-12);
    assert!((m.jaccard - 0.6).abs() < 1e-12);
}

#[test]
fn perfect_prediction_scores_one_everywhere() {
    let m = mask8();
    let mut acc = MetricAccumulator::new(0.5);
    acc.add("m", &m, &m).unwrap();
    let report = acc.finish();
    assert_eq!(report.mean.values(), [1.0; 6]);
    assert_eq!(report.pooled.values(), [1.0; 6]);
}

#[test]
fn degenerate_denominators_fall_back() {
    let empty = Tensor::zeros(vec![9]);
    let m = Metrics::from_counts(
        &confusion(&empty, &empty, 0.5).unwrap(),
        auc(&empty, &empty).unwrap(),
    );
    assert_eq!(m.values(), [1.0; 6]);
    let spurious = t(&[9], &[0.0, 0.0, 0.9, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let m = Metrics::from_counts(
        &confusion(&spurious, &empty, 0.5).unwrap(),
        auc(&spurious, &empty).unwrap(),
    );
    assert_eq!(
        (m.jaccard, m.f1, m.sensitivity, m.auc),
        (0.0, 0.0, 0.0, 0.0)
    );
    assert!((m.specificity - 8.0 / 9.0).abs() < 1e-12);
}

#[test]
fn uninformative_scores_give_half_auc() {
    let y = mask8();
    assert_eq!(auc(&half8(), &y).unwrap(), Some(0.5));
    assert_eq!(auc_rank(&half8(), &y).unwrap(), Some(0.5));
}

#[test]
fn grid_auc_matches_rank_auc_on_grid_scores() {
    // Scores on the threshold grid with distinct values per class boundary
    // make the trapezoid exact.
    let mut r = rng(21);
    for _ in 0..20 {
        let p: Vec<f32> = (0..64)
            .map(|_| r.random_range(0..256u32) as f32 / 255.0)
            .collect();
        let y: Vec<f32> = (0..64)
            .map(|_| if r.random_bool(0.3) { 1.0 } else { 0.0 })
            .collect();
        let (p, y) = (t(&[64], &p), t(&[64], &y));
        let (a, b) = (
            auc(&p, &y).unwrap().unwrap(),
            auc_rank(&p, &y).unwrap().unwrap(),
        );
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn report_mean_and_pooled_differ_as_expected() {
    let mut acc = MetricAccumulator::new(0.5);
    let a = t(&[4], &[1.0, 1.0, 0.0, 0.0]);
    acc.add("a", &a, &a).unwrap();
    let p = t(&[4], &[1.0, 0.0, 0.0, 0.0]);
    acc.add("b", &p, &t(&[4], &[1.0, 1.0, 1.0, 0.0])).unwrap();
    let r = acc.finish();
    assert_eq!(r.per_image.len(), 2);
    assert!((r.mean.jaccard - (1.0 + 1.0 / 3.0) / 2.0).abs() < 1e-12);
    assert!((r.pooled.jaccard - 3.0 / 5.0).abs() < 1e-12);
    assert_eq!(r.pooled_counts.total(), 8);
    assert_eq!(r.jsonl().lines().count(), 2);
    assert!(r.table().contains("pooled"));
}

fn counts() -> impl Strategy<Value = ConfusionCounts> {
    (0u64..500, 0u64..500, 0u64..500, 0u64..500).prop_map(|(tp, fp, tn, fn_)| ConfusionCounts {
        tp,
        fp,
        tn,
        fn_,
    })
}

fn pair(n: usize) -> impl Strategy<Value = (Vec<f32>, Vec<f32>)> {
    (
        prop::collection::vec(0.0f32..=1.0, n),
        prop::collection::vec(
            prop::bool::ANY.prop_map(|b| if b { 1.0f32 } else { 0.0 }),
            n,
        ),
    )
}

proptest! {
    #[test]
    fn f1_is_a_function_of_jaccard(c in counts()) {
        prop_assume!(c.tp + c.fp + c.fn_ > 0);
        let m = Metrics::from_counts(&c, None);
        prop_assert!((m.f1 - 2.0 * m.jaccard / (1.0 + m.jaccard)).abs() < 1e-12);
        prop_assert!(m.f1 >= m.jaccard);
        for v in m.values() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn losses_are_non_negative((p, y) in pair(12)) {
        let (p, y) = (t(&[1, 3, 4], &p), t(&[1, 3, 4], &y));
        prop_assert!(dice_loss(&p, &y, 1.0, DiceForm::Standard).unwrap() >= 0.0);
        prop_assert!(dice_loss(&p, &y, 1.0, DiceForm::Literal).unwrap() >= 0.0);
        prop_assert!(jaccard_loss(&p, &y, 1.0).unwrap() >= 0.0);
        prop_assert!(bce_loss(&p, &y).unwrap() >= 0.0);
        let hard = bce_loss(&y, &y).unwrap();
        prop_assert!(hard <= bce_loss(&p, &y).unwrap() + 1e-7);
    }

    #[test]
    fn rank_auc_ignores_monotone_transforms((p, y) in pair(40)) {
        let sq: Vec<f32> = p.iter().map(|v| v * v).collect();
        let (a, b) = (auc_rank(&t(&[40], &p), &t(&[40], &y)).unwrap(), auc_rank(&t(&[40], &sq), &t(&[40], &y)).unwrap());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn grid_auc_stays_close_under_squaring((p, y) in pair(40)) {
        let sq: Vec<f32> = p.iter().map(|v| v * v).collect();
        let yt = t(&[40], &y);
        if let (Some(a), Some(b)) = (auc(&t(&[40], &p), &yt).unwrap(), auc(&t(&[40], &sq), &yt).unwrap()) {
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((a - b).abs() < 0.05, "{} vs {}", a, b);
        }
    }

    #[test]
    fn total_is_homogeneous_in_alpha((p, y) in pair(8), c in 0.01f64..4.0) {
        let (p, y) = (t(&[8], &p), t(&[8], &y));
        let one = LossSpec::terms(true, true, true, AlphaSchedule::Constant(1.0));
        let scaled = LossSpec::terms(true, true, true, AlphaSchedule::Constant(c));
        prop_assert_eq!(total_loss(&p, &y, &scaled, 0).unwrap(), c as f32 * total_loss(&p, &y, &one, 0).unwrap());
    }
}
