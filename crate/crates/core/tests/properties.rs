use dualsys::harness::{gsb, GsbTally};
use dualsys::schedule::{extract_json, shots_for_duration, validate_schedule, MotionSchedule, ScheduleSpec, Shot};
use proptest::prelude::*;
use serde_json::{json, Value};

fn arb_json() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::from),
        any::<i64>().prop_map(Value::from),
        any::<f64>().prop_filter("finite", |x| x.is_finite()).prop_map(Value::from),
        "[a-z _]{0,12}".prop_map(Value::from),
    ];
    leaf.prop_recursive(4, 32, 6, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..6).prop_map(Value::from),
            prop::collection::btree_map(
                prop::sample::select(vec!["shots", "index", "action", "expression", "duration_frames", "x", "source_analysis"])
                    .prop_map(String::from),
                inner,
                0..6
            )
            .prop_map(|m| Value::Object(m.into_iter().collect())),
        ]
    })
}

proptest! {
    #[test]
    fn gsb_is_antisymmetric(w in 0u64..1_000_000, l in 0u64..1_000_000, t in 0u64..1_000_000) {
        prop_assume!(w + l + t > 0);
        let a = gsb(GsbTally::new(w, l, t)).unwrap();
        let b = gsb(GsbTally::new(l, w, t)).unwrap();
        prop_assert_eq!(a.neg(), b);
        prop_assert!((-1.0..=1.0).contains(&a.value()));
    }

    #[test]
    fn schedule_validation_is_total(doc in arb_json(), n in 1usize..5) {
        // Any document either validates or yields at least one violation.
        let spec = ScheduleSpec { pass_frames: 24, expected_shots: n, audio_frames: None };
        if let Err(v) = validate_schedule(&doc, &spec) {
            prop_assert!(!v.is_empty());
        }
    }

    #[test]
    fn valid_schedules_round_trip(actions in prop::collection::vec("[a-z]{1,8}( [a-z]{1,8})?", 1..8)) {
        let s = MotionSchedule {
            shots: actions
                .iter()
                .enumerate()
                .map(|(i, a)| Shot { index: i, expression: "calm".into(), action: a.clone(), duration_frames: 24 })
                .collect(),
            source_analysis: Default::default(),
        };
        let spec = ScheduleSpec { pass_frames: 24, expected_shots: actions.len(), audio_frames: Some(24 * actions.len()) };
        let back = validate_schedule(&extract_json(&s.to_json_pretty()).unwrap(), &spec).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn extraction_finds_json_inside_chatter(prefix in "[a-zA-Z .!]{0,30}", suffix in "[a-zA-Z .!]{0,30}") {
        let doc = json!({"shots": [{"index": 0}]});
        let text = format!("{prefix}{doc}{suffix}");
        prop_assert_eq!(extract_json(&text).unwrap(), doc);
    }

    #[test]
    fn shot_count_covers_the_audio(frames in 1usize..10_000, pass in 1usize..200) {
        let n = shots_for_duration(frames, pass).unwrap();
        prop_assert!(n * pass >= frames && (n - 1) * pass < frames);
    }
}

#[test]
fn paired_study_scores_are_exact_negatives() {
    let t = GsbTally::new(35, 12, 53);
    assert_eq!(gsb(t).unwrap().to_string(), "+0.23");
    assert_eq!(gsb(t.swapped()).unwrap().to_string(), "-0.23");
    assert_eq!(gsb(t).unwrap().neg(), gsb(t.swapped()).unwrap());
}
