use proptest::prelude::*;
use uta_core::calib::{warp_raster, Homography};
use uta_core::events::{
    denoise_spatiotemporal, read_events_bin, read_events_csv, render_frame, write_events_bin, write_events_csv,
    EventRecord, EventStream, Polarity, SupportRadius,
};
use uta_core::metrics::{entropy, std_dev};
use uta_core::pseudo_gt::{compose_sis_gt, SignageMask};
use uta_core::simgen::{synthesize_events, SimConfig};
use uta_core::Raster;

fn raster(w: usize, h: usize) -> impl Strategy<Value = Raster> {
    prop::collection::vec(0u8..=255, w * h).prop_map(move |v| Raster::from_u8(w, h, &v).unwrap())
}

fn sparse(w: usize, h: usize) -> impl Strategy<Value = Raster> {
    prop::collection::vec(prop_oneof![3 => Just(0u8), 1 => 1u8..=255], w * h)
        .prop_map(move |v| Raster::from_u8(w, h, &v).unwrap())
}

fn records() -> impl Strategy<Value = Vec<EventRecord>> {
    prop::collection::vec((0u64..1_000_000, 0u16..64, 0u16..48, any::<bool>()), 0..200).prop_map(|v| {
        let mut r: Vec<EventRecord> = v
            .into_iter()
            .map(|(t, x, y, p)| EventRecord::new(t, x, y, if p { Polarity::Positive } else { Polarity::Negative }))
            .collect();
        r.sort_by_key(|e| e.t);
        r
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn homography_inverse_composes_to_identity(v in prop::array::uniform8(-0.2f64..0.2), tx in -30.0f64..30.0, ty in -30.0f64..30.0) {
        let h = Homography::from_row_major([1.0 + v[0], v[1], tx, v[2], 1.0 + v[3], ty, v[4] * 1e-3, v[5] * 1e-3, 1.0]).unwrap();
        let id = h.compose(&h.inverse().unwrap()).unwrap();
        prop_assert!(id.max_abs_diff(&Homography::identity()) < 1e-9);
        let (x, y) = (v[6] * 100.0, v[7] * 100.0);
        let (u, w) = h.apply(x, y).unwrap();
        let (bx, by) = h.inverse().unwrap().apply(u, w).unwrap();
        prop_assert!((bx - x).abs() < 1e-8 && (by - y).abs() < 1e-8);
    }

    #[test]
    fn integer_shifts_compose(img in raster(12, 9), a in (-5i64..5, -5i64..5), b in (-5i64..5, -5i64..5)) {
        let once = warp_raster(&img, &Homography::translation((a.0 + b.0) as f64, (a.1 + b.1) as f64), img.dims());
        let twice = warp_raster(
            &warp_raster(&img, &Homography::translation(a.0 as f64, a.1 as f64), img.dims()),
            &Homography::translation(b.0 as f64, b.1 as f64),
            img.dims(),
        );
        // pixels whose intermediate position stayed inside the frame agree
        for y in 0..9i64 {
            for x in 0..12i64 {
                let (mx, my) = (x - b.0, y - b.1);
                if (0..12).contains(&mx) && (0..9).contains(&my) {
                    prop_assert_eq!(once.get(x as usize, y as usize), twice.get(x as usize, y as usize));
                }
            }
        }
    }

    #[test]
    fn denoise_keeps_a_supported_subset(frames in prop::collection::vec(sparse(10, 8), 1..5), k in 1usize..5) {
        let out = denoise_spatiotemporal(&frames, SupportRadius::default(), k).unwrap();
        prop_assert_eq!(out.len(), frames.len());
        for (o, f) in out.iter().zip(&frames) {
            for (a, b) in o.data().iter().zip(f.data()) {
                prop_assert!(*a == 0.0 || a == b);
            }
        }
        prop_assert_eq!(denoise_spatiotemporal(&out, SupportRadius::default(), k).unwrap(), out);
    }

    #[test]
    fn composition_with_full_and_empty_masks(ev in raster(8, 8), ir in raster(8, 8)) {
        let full = SignageMask { pixels: Raster::filled(8, 8, 1.0), regions: Vec::new() };
        let none = SignageMask { pixels: Raster::zeros(8, 8), regions: Vec::new() };
        prop_assert_eq!(compose_sis_gt(&full, &ev, &ir).unwrap(), ev.clone());
        prop_assert_eq!(compose_sis_gt(&none, &ev, &ir).unwrap(), ir);
    }

    #[test]
    fn event_files_round_trip(recs in records()) {
        let mut csv = Vec::new();
        write_events_csv(&recs, &mut csv).unwrap();
        let back = read_events_csv(csv.as_slice()).unwrap();
        prop_assert_eq!(back.records(), recs.as_slice());
        let mut bin = Vec::new();
        write_events_bin(&recs, &mut bin).unwrap();
        let back = read_events_bin(bin.as_slice()).unwrap();
        prop_assert_eq!(back.records(), recs.as_slice());
    }

    #[test]
    fn rendered_counts_saturate_at_one(recs in records()) {
        let f = render_frame(&recs, (64, 48), 0, 1_000_001, 0.25).unwrap();
        let mut counts = vec![0usize; 64 * 48];
        for e in &recs {
            counts[e.y as usize * 64 + e.x as usize] += 1;
        }
        for (v, c) in f.pixels.data().iter().zip(counts) {
            prop_assert_eq!(*v, (c as f64 * 0.25).min(1.0));
        }
    }

    #[test]
    fn metrics_ignore_pixel_order(img in raster(9, 7), seed in any::<u64>()) {
        let mut data = img.data().to_vec();
        let n = data.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            data.swap(i, (s >> 33) as usize % (i + 1));
        }
        let shuffled = Raster::from_vec(9, 7, data).unwrap();
        prop_assert!(entropy(&img) <= 8.0);
        prop_assert!(std_dev(&img) <= 127.5 + 1e-9);
        prop_assert!((entropy(&img) - entropy(&shuffled)).abs() < 1e-12);
        prop_assert!((std_dev(&img) - std_dev(&shuffled)).abs() < 1e-9);
    }

    #[test]
    fn reversed_video_flips_polarity_counts(a in raster(4, 3), b in raster(4, 3)) {
        let times = [0, 20_000];
        let cfg = SimConfig::default();
        let count = |s: &EventStream, p: Polarity| s.records().iter().filter(|e| e.polarity == p).count();
        let fwd = synthesize_events(&[a.clone(), b.clone()], &times, &cfg).unwrap();
        let bwd = synthesize_events(&[b, a], &times, &cfg).unwrap();
        prop_assert_eq!(count(&fwd, Polarity::Positive), count(&bwd, Polarity::Negative));
        prop_assert_eq!(count(&fwd, Polarity::Negative), count(&bwd, Polarity::Positive));
    }
}
