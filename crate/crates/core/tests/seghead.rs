mod common;

use ndarray::Array2;
use penseg::metrics::iou_matrix;
use penseg::seghead::{
    assign_channels, assign_cells, flows_to_instances, make_targets, seg_loss, GtAssignment, HeadConfig,
    SegPrediction,
};
use penseg::{AnnotationSet, CellAnnotation};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn kmeans_matches_lloyd_oracle_and_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..500 {
        let n = rng.gen_range(1..=8);
        let z_max = 26.0;
        let zs: Vec<f64> = (0..n)
            .map(|_| {
                // a share of exact ties exercises the tie rules
                if rng.gen_bool(0.2) {
                    rng.gen_range(0..27) as f64
                } else {
                    rng.gen_range(0.0..z_max)
                }
            })
            .collect();
        let got = assign_channels(&zs, 3, z_max).unwrap();
        assert_eq!(got, common::lloyd_oracle(&zs, 3, z_max), "case {case}: {zs:?}");
        for i in 0..n {
            for j in 0..n {
                if zs[i] < zs[j] {
                    assert!(got[i] <= got[j], "case {case}: {zs:?} -> {got:?}");
                }
            }
        }
    }
}

#[test]
fn three_cells_are_ranked() {
    assert_eq!(assign_channels(&[2.0, 2.1, 25.0], 3, 26.0).unwrap(), vec![0, 1, 2]);
    assert_eq!(assign_channels(&[25.0, 2.0, 2.1], 3, 26.0).unwrap(), vec![2, 0, 1]);
}

#[test]
fn other_channel_counts_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in [1, 2, 4, 5] {
        for _ in 0..100 {
            let zs: Vec<f64> = (0..rng.gen_range(1..10)).map(|_| rng.gen_range(0.0..20.0)).collect();
            assert_eq!(assign_channels(&zs, k, 20.0).unwrap(), common::lloyd_oracle(&zs, k, 20.0));
        }
    }
}

#[test]
fn flows_round_trip_on_convex_cells() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let config = HeadConfig { n_out: 1, gt_assignment: GtAssignment::Single, ..HeadConfig::default() };
    let mut recovered = 0;
    for _ in 0..10 {
        let masks = common::non_overlapping_cells(5, &mut rng);
        let cells: Vec<CellAnnotation> = masks
            .iter()
            .enumerate()
            .map(|(i, m)| CellAnnotation { id: i as u64, mask: m.clone(), z_centroid: 0.0, z_range: (0, 0) })
            .collect();
        let set = AnnotationSet::new(cells, (1, 96, 96)).unwrap();
        let assignment = assign_cells(&set, &config, 0).unwrap();
        let targets = make_targets(&set, &assignment, 1).unwrap();
        let det = flows_to_instances(&SegPrediction::from_targets(&targets), &config);
        assert_eq!(det.len(), masks.len());
        let gt: Vec<&Array2<bool>> = masks.iter().collect();
        let iou = iou_matrix(&gt, &det.masks()).unwrap();
        for i in 0..masks.len() {
            let best = iou.row(i).iter().cloned().fold(0.0, f64::max);
            assert!(best >= 0.9, "cell {i} best IoU {best}");
            recovered += 1;
        }
    }
    assert_eq!(recovered, 50);
}

#[test]
fn exact_targets_have_low_flow_and_dice_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let masks = common::non_overlapping_cells(4, &mut rng);
    let cells: Vec<CellAnnotation> = masks
        .iter()
        .enumerate()
        .map(|(i, m)| CellAnnotation { id: i as u64, mask: m.clone(), z_centroid: i as f64, z_range: (i, i) })
        .collect();
    let set = AnnotationSet::new(cells, (4, 96, 96)).unwrap();
    let config = HeadConfig::default();
    let assignment = assign_cells(&set, &config, 0).unwrap();
    let targets = make_targets(&set, &assignment, 3).unwrap();
    let loss = seg_loss(&SegPrediction::from_targets(&targets), &targets).unwrap();
    assert!(loss.mse < 1e-12);
    assert!(loss.bce < 1e-6);
    assert!(loss.total < 0.05, "{loss:?}");
}

proptest! {
    #[test]
    fn assignment_is_monotone_in_z(zs in proptest::collection::vec(0.0f64..26.0, 1..12), k in 1usize..5) {
        let ch = assign_channels(&zs, k, 26.0).unwrap();
        for i in 0..zs.len() {
            prop_assert!(ch[i] < k);
            for j in 0..zs.len() {
                if zs[i] < zs[j] {
                    prop_assert!(ch[i] <= ch[j]);
                }
            }
        }
    }
}
