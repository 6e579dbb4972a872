use chromaflow::color::{lab_pixel_to_rgb, rgb_pixel_to_lab, ChannelHistogram, LabImage, Plane};
use chromaflow::flow::{estimate_flow, flow_bound, occlusion_mask, warp, FlowField};
use chromaflow::metrics::js_divergence;
use chromaflow::propagation::edge_aware_smooth;
use chromaflow::PipelineConfig;
use proptest::prelude::*;

fn plane(w: usize, h: usize, vals: &[f64]) -> Plane<f64> {
    Plane::from_fn(w, h, |x, y| vals[(y * w + x) % vals.len()]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn srgb_round_trip(r in any::<u8>(), g in any::<u8>(), b in any::<u8>()) {
        let lab: [f64; 3] = rgb_pixel_to_lab([r, g, b]);
        prop_assert!((0.0..=100.0).contains(&lab[0]));
        prop_assert_eq!(lab_pixel_to_rgb(lab), [r, g, b]);
    }

    #[test]
    fn jsd_bounded_and_symmetric(p in prop::collection::vec(0.0f64..10.0, 8), q in prop::collection::vec(0.0f64..10.0, 8)) {
        prop_assume!(p.iter().sum::<f64>() > 1e-6 && q.iter().sum::<f64>() > 1e-6);
        let hp = ChannelHistogram::from_weights(p).unwrap();
        let hq = ChannelHistogram::from_weights(q).unwrap();
        let d = js_divergence(&hp, &hq).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&d));
        prop_assert!((d - js_divergence(&hq, &hp).unwrap()).abs() < 1e-12);
        prop_assert!(js_divergence(&hp, &hp).unwrap().abs() < 1e-12);
    }

    #[test]
    fn zero_flow_warp_is_identity(vals in prop::collection::vec(-50.0f64..100.0, 1..64), w in 1usize..20, h in 1usize..20) {
        let l = plane(w, h, &vals);
        let img = LabImage::from_planes(l.clone(), l.map(|v| v * 0.5), l.map(|v| -v)).unwrap();
        let out = warp(&img, &FlowField::zeros(w, h)).unwrap();
        prop_assert_eq!(out, img);
    }

    #[test]
    fn self_flow_is_zero(vals in prop::collection::vec(0.0f64..100.0, 1..200), w in 8usize..40, h in 8usize..40) {
        let p = plane(w, h, &vals);
        prop_assert!(estimate_flow(&p, &p, 3, 3).unwrap().is_zero());
    }

    #[test]
    fn flow_magnitude_bounded(a in prop::collection::vec(0.0f64..100.0, 64..256), b in prop::collection::vec(0.0f64..100.0, 64..256), r in 1usize..4) {
        let (pa, pb) = (plane(32, 24, &a), plane(32, 24, &b));
        let f = estimate_flow(&pa, &pb, r, 2).unwrap();
        let bound = flow_bound(r, 2);
        prop_assert!(f.dx().iter().chain(f.dy()).all(|v| v.abs() <= bound));
    }

    #[test]
    fn opposite_flows_are_consistent(dx in -5.0f64..5.0, dy in -5.0f64..5.0) {
        let fwd = FlowField::constant(12, 9, dx, dy);
        let bwd = FlowField::constant(12, 9, -dx, -dy);
        prop_assert_eq!(occlusion_mask(&fwd, &bwd, 1e-9).unwrap().count(), 0);
    }

    #[test]
    fn smoothing_stays_in_range(vals in prop::collection::vec(-80.0f64..80.0, 1..100), strength in 0.0f64..1.0) {
        let a = plane(16, 12, &vals);
        let chroma = chromaflow::color::ChromaPlanes::new(a.clone(), a.map(|v| -v)).unwrap();
        let guide = plane(16, 12, &[50.0]);
        let out = edge_aware_smooth(&chroma, &guide, strength, 2, 10.0).unwrap();
        let (lo, hi) = vals.iter().fold((f64::MAX, f64::MIN), |(l, h), v| (l.min(*v), h.max(*v)));
        prop_assert!(out.a.data().iter().all(|v| *v >= lo - 1e-9 && *v <= hi + 1e-9));
    }

    #[test]
    fn config_text_round_trip(temp in 0.001f64..1.0, k in 1usize..32, floor in 0.0f64..1.0, bias in 0.0f64..1.0) {
        let cfg = PipelineConfig { temperature: temp, top_k: k, confidence_floor: floor, blend_bias: bias, ..PipelineConfig::default() };
        prop_assert_eq!(PipelineConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }
}
