use proptest::prelude::*;
use rtmdet::dataio::{
    crop_annotations, load_coco, load_dota, save_coco, save_dota, split_windows, window_starts, Annotation, Dataset,
    ImageInfo, DEFAULT_MIN_VISIBILITY,
};
use rtmdet::{AABox, AnyBox, Polygon, RBox};

#[test]
fn nine_windows_for_2048() {
    let w = split_windows(2048, 2048, 1024, 256).unwrap();
    assert_eq!(w.len(), 9);
    assert_eq!(window_starts(2048, 1024, 256), vec![0, 768, 1024]);
}

fn covered(dim: u32, size: u32, starts: &[u32]) -> bool {
    // every pixel column lies in some window, and windows stay inside the image
    let mut reach = 0u32;
    for &s in starts {
        if s > reach {
            return false;
        }
        reach = reach.max(s + size);
    }
    reach >= dim && starts.iter().all(|&s| dim <= size || s + size <= dim)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn windows_cover_the_image(w in 1u32..6000, h in 1u32..6000) {
        let win = split_windows(w, h, 1024, 256).unwrap();
        let xs = window_starts(w, 1024, 256);
        let ys = window_starts(h, 1024, 256);
        prop_assert_eq!(win.len(), xs.len() * ys.len());
        prop_assert!(covered(w, 1024, &xs) && covered(h, 1024, &ys));
        prop_assert!(xs.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn window_count_grows_with_size(w in 1u32..6000, grow in 0u32..3000) {
        prop_assert!(window_starts(w, 1024, 256).len() <= window_starts(w + grow, 1024, 256).len());
    }

    #[test]
    fn crop_keeps_visible_boxes(x in 0.0f64..1900.0, y in 0.0f64..1900.0, bw in 4.0f64..150.0, bh in 4.0f64..150.0) {
        let a = Annotation::new(AABox::from_xywh(x, y, bw, bh), 0);
        let wins = split_windows(2048, 2048, 1024, 256).unwrap();
        // a box smaller than the overlap lies wholly inside some window
        let hits = wins.iter().map(|w| crop_annotations(std::slice::from_ref(&a), w, DEFAULT_MIN_VISIBILITY)).filter(|v| !v.is_empty()).count();
        prop_assert!(hits >= 1);
    }
}

fn sample_dataset() -> Dataset {
    Dataset {
        class_names: vec!["a".into(), "b".into()],
        images: vec![
            ImageInfo { id: 3, file_name: "x.png".into(), width: 100, height: 80 },
            ImageInfo { id: 9, file_name: "y.png".into(), width: 50, height: 50 },
        ],
        annotations: vec![
            vec![Annotation::new(AABox::new(1.0, 2.0, 30.0, 40.0), 1), {
                let mut a = Annotation::new(AABox::new(10.0, 10.0, 20.0, 20.0), 0);
                a.difficult = true;
                a.polygons = vec![Polygon::from_flat(&[10.0, 10.0, 20.0, 10.0, 20.0, 20.0]).unwrap()];
                a
            }],
            vec![],
        ],
    }
}

#[test]
fn coco_round_trip() {
    let ds = sample_dataset();
    let back = load_coco(&save_coco(&ds).unwrap()).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn dota_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let quad = Polygon::from_flat(&[10.0, 10.0, 30.0, 10.0, 30.0, 20.0, 10.0, 20.0]).unwrap();
    let rb = quad.min_area_rect().unwrap();
    let mut ann = Annotation::new(AnyBox::Rotated(rb), 1);
    ann.polygons = vec![quad];
    let ds = Dataset {
        class_names: rtmdet::dataio::DOTA_CLASSES.iter().map(|s| s.to_string()).collect(),
        images: vec![ImageInfo { id: 0, file_name: "P0001.png".into(), width: 0, height: 0 }],
        annotations: vec![vec![ann]],
    };
    save_dota(&ds, dir.path()).unwrap();
    let back = load_dota(dir.path()).unwrap();
    assert_eq!(back, ds);
    let b: &RBox = back.annotations[0][0].bbox.as_rotated().unwrap();
    assert!((b.area() - 200.0).abs() < 1e-9);
}
