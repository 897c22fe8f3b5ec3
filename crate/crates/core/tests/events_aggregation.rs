use evssm_core::aggregation::{
    build_stack, group_events, load_stack, sample_ticks, save_stack, tick_count, AggregationMode,
    SamplingConfig,
};
use evssm_core::events::{
    concatenate, load_events, save_events, Event, EventFormat, EventStream, SensorGeometry,
};
use evssm_core::synth::{generate_synthetic, MotionClass, SyntheticSceneSpec};
use proptest::prelude::*;

const SENSOR: SensorGeometry = SensorGeometry {
    width: 48,
    height: 40,
};

fn sorted_stream(mut events: Vec<Event>) -> EventStream {
    events.sort_by_key(|e| (e.t, e.x, e.y, e.p));
    EventStream::new(events, SENSOR).unwrap()
}

fn arb_event(max_t: u64) -> impl Strategy<Value = Event> {
    (
        0..max_t,
        0..SENSOR.width as u16,
        0..SENSOR.height as u16,
        prop::bool::ANY,
    )
        .prop_map(|(t, x, y, on)| Event::new(t, x, y, if on { 1 } else { -1 }))
}

fn arb_stream(max_events: usize, max_t: u64) -> impl Strategy<Value = EventStream> {
    prop::collection::vec(arb_event(max_t), 1..max_events).prop_map(sorted_stream)
}

/// Straight from the definition: sort every event by distance to the tick and
/// keep the `g` closest. Ties go to events before the tick, and within one
/// side to the event nearer the tick in canonical order.
fn nearest_oracle(events: &[Event], tick: f64, g: usize) -> Vec<Event> {
    let mut v = events.to_vec();
    v.sort_by_key(|e| (e.t, e.x, e.y, e.p));
    let key = |i: usize| {
        let left = (v[i].t as f64) < tick;
        let d = (v[i].t as f64 - tick).abs();
        let rank = if left { v.len() - i } else { i };
        (d, !left, rank)
    };
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| {
        let (da, sa, ra) = key(a);
        let (db, sb, rb) = key(b);
        da.partial_cmp(&db).unwrap().then(sa.cmp(&sb)).then(ra.cmp(&rb))
    });
    let mut keep: Vec<usize> = idx.into_iter().take(g).collect();
    keep.sort_unstable();
    keep.into_iter().map(|i| v[i]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn binary_and_csv_roundtrip(stream in arb_stream(200, 1_000_000)) {
        let dir = tempfile::tempdir().unwrap();
        for (name, format) in [("a.evt", EventFormat::Binary), ("a.csv", EventFormat::Csv)] {
            let path = dir.path().join(name);
            save_events(&stream, &path, format).unwrap();
            let back = load_events(&path, SENSOR).unwrap();
            prop_assert_eq!(back.events(), stream.events());
        }
    }

    #[test]
    fn concatenation_is_associative(
        a in arb_stream(40, 10_000),
        b in arb_stream(40, 10_000),
        c in arb_stream(40, 10_000),
        gap in 0u64..500,
    ) {
        let left = concatenate(&[concatenate(&[a.clone(), b.clone()], gap).unwrap(), c.clone()], gap).unwrap();
        let right = concatenate(&[a.clone(), concatenate(&[b.clone(), c.clone()], gap).unwrap()], gap).unwrap();
        let flat = concatenate(&[a.clone(), b.clone(), c.clone()], gap).unwrap();
        prop_assert_eq!(left.events(), flat.events());
        prop_assert_eq!(right.events(), flat.events());
        prop_assert_eq!(flat.count(), a.count() + b.count() + c.count());
        prop_assert_eq!(flat.duration_us(), a.duration_us() + b.duration_us() + c.duration_us() + 2 * gap);
    }

    #[test]
    fn event_count_groups_match_oracle(stream in arb_stream(120, 20_000), g in 1usize..40, f in 50.0f64..800.0) {
        let cfg = SamplingConfig { frequency_hz: f, group_size: g, ..SamplingConfig::default() };
        let ticks = sample_ticks(&stream, f).unwrap();
        prop_assert_eq!(ticks.len(), tick_count(stream.duration_us(), f));
        let groups = group_events(&stream, &ticks, &cfg).unwrap();
        for (i, &tick) in ticks.iter().enumerate() {
            let expected = nearest_oracle(stream.events(), tick, g);
            prop_assert_eq!(groups.group(i), expected.as_slice());
        }
    }

    #[test]
    fn time_windows_partition_the_span(stream in arb_stream(120, 20_000), f in 50.0f64..800.0) {
        let cfg = SamplingConfig { frequency_hz: f, mode: AggregationMode::TimeWindows, ..SamplingConfig::default() };
        let ticks = sample_ticks(&stream, f).unwrap();
        let groups = group_events(&stream, &ticks, &cfg).unwrap();
        let covered: usize = (0..groups.len()).map(|i| groups.group(i).len()).sum();
        prop_assert_eq!(covered, stream.count());
    }

    #[test]
    fn equal_timestamp_order_does_not_matter(stream in arb_stream(80, 50), seed in any::<u64>()) {
        let mut shuffled = stream.events().to_vec();
        let n = shuffled.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        shuffled.sort_by_key(|e| e.t);
        let other = EventStream::new(shuffled, SENSOR).unwrap();
        let cfg = SamplingConfig { frequency_hz: 20_000.0, group_size: 7, ..SamplingConfig::default() };
        let a = build_stack(&stream, &cfg, None).unwrap();
        let b = build_stack(&other, &cfg, None).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn frames_are_normalized(stream in arb_stream(200, 100_000), pad in 0usize..3) {
        let cfg = SamplingConfig { frequency_hz: 100.0, group_size: 30, height: 8, width: 8, ..SamplingConfig::default() };
        let p = tick_count(stream.duration_us(), 100.0);
        let stack = build_stack(&stream, &cfg, Some(p + pad)).unwrap();
        prop_assert_eq!(stack.original, p);
        prop_assert_eq!(stack.total(), p + pad);
        for i in 0..stack.total() {
            let max = stack.frame(i).iter().copied().fold(0.0f32, f32::max);
            if i < p {
                prop_assert_eq!(max, 1.0);
            } else {
                prop_assert_eq!(max, 0.0);
            }
        }
        let repadded = stack.repad(p).unwrap().repad(p + pad).unwrap();
        prop_assert_eq!(repadded.frames, stack.frames);
    }

    #[test]
    fn synthetic_streams_are_well_formed(class in 0usize..8, ms in 50u64..400, seed in any::<u64>(), noise in 0.0f64..0.5) {
        let spec = SyntheticSceneSpec {
            motion_class: MotionClass::ALL[class],
            duration_us: ms * 1000,
            event_rate: 10_000.0,
            noise_fraction: noise,
            geometry: SENSOR,
            seed,
        };
        let (stream, label) = generate_synthetic(&spec).unwrap();
        prop_assert_eq!(label, MotionClass::ALL[class]);
        prop_assert_eq!(stream.count() as f64, (10_000.0 * ms as f64 / 1000.0).round());
        prop_assert!(stream.events().windows(2).all(|w| w[0].t <= w[1].t));
        prop_assert!(stream.events().iter().all(|e| SENSOR.contains(e.x as u32, e.y as u32)));
        prop_assert!(stream.events().iter().all(|e| e.p == 1 || e.p == -1));
        let again = generate_synthetic(&spec).unwrap().0;
        prop_assert_eq!(again.events(), stream.events());
    }
}

#[test]
fn tick_count_examples() {
    assert_eq!(tick_count(300_000, 20.0), 6);
    assert_eq!(tick_count(300_001, 20.0), 7);
    assert_eq!(tick_count(1_000_000, 60.0), 60);
    assert_eq!(tick_count(0, 60.0), 1);
}

#[test]
fn stack_files_roundtrip() {
    let spec = SyntheticSceneSpec {
        motion_class: MotionClass::RotateCw,
        duration_us: 200_000,
        event_rate: 20_000.0,
        noise_fraction: 0.05,
        geometry: SENSOR,
        seed: 3,
    };
    let (stream, _) = generate_synthetic(&spec).unwrap();
    let cfg = SamplingConfig::default();
    let stack = build_stack(&stream, &cfg, Some(6)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("s");
    save_stack(&stack, &stem, Some(2)).unwrap();
    let (back, label) = load_stack(&stem).unwrap();
    assert_eq!(label, Some(2));
    assert_eq!(back.frames, stack.frames);
    assert_eq!((back.original, back.pad), (stack.original, stack.pad));
}
