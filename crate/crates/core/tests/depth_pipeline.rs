use proptest::prelude::*;
use retarget_core::depth::{
    binarize, crop_hand, dataset, hand_box_side, make_windows, resample_50, threshold_segment, twofold_split, DepthError,
    DepthFrame, HandImage, HandStateClassifier, ImageMode, LabeledEpisode, Pixel, ForegroundRatioClassifier,
    DEFAULT_THRESHOLD, DEFAULT_WINDOW,
};
use retarget_core::GripState;
use retarget_testkit::gen;

/// 200 × 200 frame: background at 2.5 m, a 40 × 40 hand square at 0.6–0.7 m
/// spanning [80, 120)², one far pixel inside the square at 0.95 m and a
/// no-data hole.
fn scene() -> DepthFrame {
    let mut data = vec![2.5; 200 * 200];
    for y in 80..120 {
        for x in 80..120 {
            data[y * 200 + x] = 0.6 + 0.1 * ((x + y) % 2) as f64;
        }
    }
    data[100 * 200 + 100] = 0.95;
    data[90 * 200 + 90] = 0.0;
    DepthFrame::new(200, 200, data).unwrap()
}

#[test]
fn hand_pipeline_golden() {
    let frame = scene();
    // 60 / 0.6 = 100 px box centered on the hand
    let side = hand_box_side(0.6, 200).unwrap();
    assert_eq!(side, 100);
    let crop = crop_hand(&frame, Pixel { x: 100, y: 100 }, side).unwrap();
    assert_eq!((crop.width(), crop.height()), (100, 100));
    assert_eq!(crop.get(0, 0), frame.get(50, 50));
    assert_eq!(crop.get(99, 99), frame.get(149, 149));

    let bin = binarize(&crop, DEFAULT_THRESHOLD).unwrap();
    for y in 0..100 {
        for x in 0..100 {
            let (fx, fy) = (x + 50, y + 50);
            let hand = (80..120).contains(&fx) && (80..120).contains(&fy);
            let hole = (fx, fy) == (90, 90);
            let far = (fx, fy) == (100, 100);
            let want = if hand && !hole && !far { 1.0 } else { 0.0 };
            assert_eq!(bin.get(x, y), want, "({x}, {y})");
        }
    }

    // 100 → 50 nearest-neighbour keeps every odd source pixel
    let out = resample_50(&bin);
    assert_eq!((out.width(), out.height()), (50, 50));
    assert_eq!(out.mode(), ImageMode::Binary);
    for y in 0..50 {
        for x in 0..50 {
            assert_eq!(out.get(x, y), bin.get(2 * x + 1, 2 * y + 1));
        }
    }
    assert!(out.pixels().iter().all(|&v| v == 0.0 || v == 1.0));
}

#[test]
fn threshold_examples() {
    let img = DepthFrame::new(3, 1, vec![0.8, 0.9, 1.2]).unwrap();
    assert_eq!(threshold_segment(&img, 0.2).unwrap().data(), &[0.8, 0.9, 0.0]);
    assert_eq!(binarize(&img, 0.2).unwrap().pixels(), &[1.0, 1.0, 0.0]);
    let flat = DepthFrame::filled(4, 4, 1.3);
    assert_eq!(threshold_segment(&flat, 0.2).unwrap(), flat);
    assert_eq!(binarize(&DepthFrame::filled(2, 2, 0.0), 0.2), Err(DepthError::EmptyHandRegion));
}

#[test]
fn crop_pads_outside_frame() {
    let data: Vec<f64> = (0..16).map(|v| 1.0 + v as f64).collect();
    let frame = DepthFrame::new(4, 4, data).unwrap();
    let c = crop_hand(&frame, Pixel { x: 0, y: 0 }, 4).unwrap();
    let nonzero: Vec<f64> = c.data().iter().copied().filter(|&v| v > 0.0).collect();
    assert_eq!(nonzero, vec![1.0, 2.0, 5.0, 6.0]);
    assert_eq!(c.get(2, 2), 1.0);
    assert!(crop_hand(&frame, Pixel { x: 4, y: 0 }, 4).is_err());
}

#[test]
fn open_and_closed_scenes_classify() {
    let clf = ForegroundRatioClassifier::default();
    for (radius, want) in [(35.0, GripState::Open), (18.0, GripState::Closed)] {
        let frame = DepthFrame::new(512, 424, gen::hand_scene(512, 424, (256, 212), radius, 0.6, 2.5)).unwrap();
        let side = hand_box_side(0.6, 424).unwrap();
        let img = resample_50(&binarize(&crop_hand(&frame, Pixel { x: 256, y: 212 }, side).unwrap(), 0.2).unwrap());
        let window = vec![img; clf.window_len()];
        assert_eq!(clf.classify(&window).state, want);
    }
}

fn striped_episode(person: &str, name: &str, len: usize) -> LabeledEpisode {
    let images = (0..len)
        .map(|k| HandImage::new(50, 50, ImageMode::Binary, vec![(k % 2) as f64; 2500]).unwrap())
        .collect();
    let labels = (0..len)
        .map(|k| if (k / 7) % 2 == 0 { GripState::Open } else { GripState::Closed })
        .collect();
    LabeledEpisode::new(person, name, images, labels).unwrap()
}

#[test]
fn sliding_windows_exhaustive() {
    let e = striped_episode("p1", "e1", 100);
    let windows = make_windows(&e, DEFAULT_WINDOW).unwrap();
    assert_eq!(DEFAULT_WINDOW, 15);
    assert_eq!(windows.len(), 86);
    for (k, w) in windows.iter().enumerate() {
        assert_eq!(w.start, k);
        assert_eq!(w.images.len(), 15);
        assert_eq!(w.images, &e.images()[k..k + 15]);
        assert_eq!(w.label, e.labels()[k + 14]);
    }
    assert_eq!(make_windows(&e, 1).unwrap().len(), 100);
    assert!(matches!(
        make_windows(&striped_episode("p", "e", 10), 15),
        Err(DepthError::EpisodeTooShort { len: 10, window: 15 })
    ));
}

#[test]
fn split_is_disjoint_and_covering() {
    let episodes: Vec<_> = (0..14)
        .map(|k| striped_episode(&format!("p{}", k / 2), &format!("e{k}"), 20 + 7 * k))
        .collect();
    let split = twofold_split(&episodes, 42).unwrap();
    assert_eq!((split.fold_a.len(), split.fold_b.len()), (7, 7));
    let mut all: Vec<usize> = split.fold_a.iter().chain(&split.fold_b).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..14).collect::<Vec<_>>());
    assert_eq!(twofold_split(&episodes, 42).unwrap(), split);
    let images = |f: &[usize]| f.iter().map(|&i| episodes[i].len()).sum::<usize>() as f64;
    let (a, b) = (images(&split.fold_a), images(&split.fold_b));
    assert!((a - b).abs() / (a + b) < 0.1);
    assert!(matches!(twofold_split(&episodes[..1], 1), Err(DepthError::TooFewEpisodes(1))));
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    // the directory name doubles as the episode id; the person is its prefix
    let episodes = vec![striped_episode("alice", "alice_01", 30), striped_episode("bob", "bob_02", 18)];
    for e in &episodes {
        dataset::save_episode(&dir.path().join(&e.episode), e).unwrap();
    }
    let loaded = dataset::load_dataset(dir.path()).unwrap();
    assert_eq!(loaded, episodes);
}

proptest! {
    #[test]
    fn depth_offset_leaves_mask_unchanged(offset in -0.4f64..3.0, seed in any::<u64>()) {
        use rand::Rng;
        let mut r = retarget_testkit::rng(seed);
        let data: Vec<f64> = (0..400)
            .map(|_| if r.random_bool(0.1) { 0.0 } else { r.random_range(0.5..1.5) })
            .collect();
        prop_assume!(data.iter().any(|&v| v > 0.0));
        let shifted: Vec<f64> = data.iter().map(|&v| if v > 0.0 { v + offset } else { 0.0 }).collect();
        let a = binarize(&DepthFrame::new(20, 20, data).unwrap(), 0.2).unwrap();
        let b = binarize(&DepthFrame::new(20, 20, shifted).unwrap(), 0.2).unwrap();
        // exact except for values sitting within rounding of the cutoff
        let diff = a.pixels().iter().zip(b.pixels()).filter(|(x, y)| x != y).count();
        prop_assert!(diff <= 1);
    }

    #[test]
    fn binarize_is_indicator_of_segment(seed in any::<u64>()) {
        use rand::Rng;
        let mut r = retarget_testkit::rng(seed);
        let data: Vec<f64> = (0..64).map(|_| if r.random_bool(0.2) { 0.0 } else { r.random_range(0.4..2.0) }).collect();
        prop_assume!(data.iter().any(|&v| v > 0.0));
        let f = DepthFrame::new(8, 8, data).unwrap();
        let seg = threshold_segment(&f, 0.2).unwrap();
        let bin = binarize(&f, 0.2).unwrap();
        for (s, b) in seg.data().iter().zip(bin.pixels()) {
            prop_assert_eq!(*b, if *s > 0.0 { 1.0 } else { 0.0 });
        }
    }
}
