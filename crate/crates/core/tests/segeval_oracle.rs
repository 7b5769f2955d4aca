//! Confusion matrix and mIoU against brute-force counting.

mod common;

use common::{miou_oracle, rng};
use proptest::prelude::*;
use rand::Rng;
use stylemix::segeval::{remap, ConfusionMatrix, LabelMap, IGNORE, NUM_CLASSES};

fn random_pair(r: &mut impl Rng, n: usize, classes: u16) -> (Vec<u16>, Vec<u16>) {
    let gt = (0..n).map(|_| if r.random_bool(0.1) { IGNORE } else { r.random_range(0..classes) }).collect();
    let pred = (0..n).map(|_| r.random_range(0..classes)).collect();
    (gt, pred)
}

#[test]
fn miou_matches_oracle_on_random_pairs() {
    let mut r = rng(11);
    for k in 0..100 {
        let classes = r.random_range(2..=NUM_CLASSES as u16);
        let (gt, pred) = random_pair(&mut r, 256, classes);
        let mut conf = ConfusionMatrix::new();
        conf.accumulate(&gt, &pred).unwrap();
        assert_eq!(conf.miou().unwrap(), miou_oracle(&gt, &pred, NUM_CLASSES), "pair {k}");
    }
}

#[test]
fn confusion_cells_match_direct_count() {
    let mut r = rng(12);
    let (gt, pred) = random_pair(&mut r, 64, NUM_CLASSES as u16);
    let mut conf = ConfusionMatrix::new();
    conf.accumulate(&gt, &pred).unwrap();
    for g in 0..NUM_CLASSES {
        for p in 0..NUM_CLASSES {
            let n = gt.iter().zip(&pred).filter(|&(&a, &b)| usize::from(a) == g && usize::from(b) == p).count();
            assert_eq!(conf.get(g, p), n as u64);
        }
    }
}

#[test]
fn two_class_example() {
    let gt = [0, 0, 0, 1, 1, 1];
    let pred = [0, 0, 1, 0, 1, 1];
    let mut conf = ConfusionMatrix::new();
    conf.accumulate(&gt, &pred).unwrap();
    let (per, mean) = conf.miou().unwrap();
    assert_eq!(per[0], Some(0.5));
    assert_eq!(per[1], Some(0.5));
    assert!(per[2..].iter().all(Option::is_none));
    assert_eq!(mean, 0.5);
}

#[test]
fn perfect_prediction_scores_one() {
    let gt: Vec<u16> = (0..NUM_CLASSES as u16).cycle().take(400).collect();
    let mut conf = ConfusionMatrix::new();
    conf.accumulate(&gt, &gt).unwrap();
    let (per, mean) = conf.miou().unwrap();
    assert!(per.iter().all(|v| *v == Some(1.0)));
    assert_eq!(mean, 1.0);
}

#[test]
fn all_ignored_leaves_matrix_empty() {
    let mut conf = ConfusionMatrix::new();
    conf.accumulate(&[IGNORE; 9], &[3; 9]).unwrap();
    assert_eq!(conf, ConfusionMatrix::new());
    assert!(conf.miou().is_err());
}

#[test]
fn invalid_inputs_are_rejected() {
    let mut conf = ConfusionMatrix::new();
    assert!(conf.accumulate(&[0, 1], &[0]).is_err());
    assert!(conf.accumulate(&[0], &[IGNORE]).is_err());
    assert!(conf.accumulate(&[0], &[19]).is_err());
    assert!(conf.accumulate(&[40], &[0]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permuting_classes_permutes_iou(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (gt, pred) = random_pair(&mut r, 200, NUM_CLASSES as u16);
        let mut perm: Vec<u16> = (0..NUM_CLASSES as u16).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut r);
        let relabel = |v: &[u16]| v.iter().map(|&x| if x == IGNORE { x } else { perm[usize::from(x)] }).collect::<Vec<_>>();
        let mut a = ConfusionMatrix::new();
        a.accumulate(&gt, &pred).unwrap();
        let mut b = ConfusionMatrix::new();
        b.accumulate(&relabel(&gt), &relabel(&pred)).unwrap();
        let (pa, ma) = a.miou().unwrap();
        let (pb, mb) = b.miou().unwrap();
        for c in 0..NUM_CLASSES {
            prop_assert_eq!(pa[c], pb[usize::from(perm[c])]);
        }
        prop_assert!((ma - mb).abs() < 1e-12);
    }

    #[test]
    fn accumulate_is_additive(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (g1, p1) = random_pair(&mut r, 100, NUM_CLASSES as u16);
        let (g2, p2) = random_pair(&mut r, 150, NUM_CLASSES as u16);
        let mut both = ConfusionMatrix::new();
        both.accumulate(&g1, &p1).unwrap();
        both.accumulate(&g2, &p2).unwrap();
        let (mut a, mut b) = (ConfusionMatrix::new(), ConfusionMatrix::new());
        a.accumulate(&g1, &p1).unwrap();
        b.accumulate(&g2, &p2).unwrap();
        a.merge(&b);
        prop_assert_eq!(a, both);
    }

    #[test]
    fn iou_is_one_exactly_when_diagonal_only(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (gt, mut pred) = random_pair(&mut r, 80, 6);
        for (p, g) in pred.iter_mut().zip(&gt) {
            if *g != IGNORE && *g < 3 {
                *p = *g;
            }
        }
        let mut conf = ConfusionMatrix::new();
        conf.accumulate(&gt, &pred).unwrap();
        let (per, _) = conf.miou().unwrap();
        for (c, iou) in per.iter().enumerate() {
            if let Some(v) = iou {
                prop_assert!((0.0..=1.0).contains(v));
                let diagonal = (0..NUM_CLASSES).all(|o| o == c || (conf.get(c, o) == 0 && conf.get(o, c) == 0));
                prop_assert_eq!(*v == 1.0, diagonal);
            }
        }
    }

    #[test]
    fn identity_remap_is_idempotent(labels in proptest::collection::vec(0u16..300, 0..64)) {
        let id = LabelMap::identity();
        let once = remap(&labels, &id);
        prop_assert_eq!(remap(&once, &id), once);
    }
}

#[test]
fn cityscapes_map_sends_unknown_ids_to_ignore() {
    let map = LabelMap::cityscapes();
    assert_eq!(remap(&[7, 33, 0, 255, 6], &map), vec![0, 18, IGNORE, IGNORE, IGNORE]);
}
