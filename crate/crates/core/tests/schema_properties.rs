mod suites;

use proptest::prelude::*;
use rtstream::schema::{enrich, validate, Violation, DOMAINS};
use serde_json::{json, Value};
use suites::records::{dotted_quad, valid_record};

/// Ways to break exactly one invariant of a valid record.
#[derive(Debug, Clone)]
enum Mutation {
    DropDomain(usize),
    EmptyAppId,
    EmptyDeviceId,
    EndBeforeStart,
    ZeroStart,
    BadIp(String),
    UnregisteredEvent(String),
    NonStringAttribute,
    LatitudeOutOfRange(f64),
    LongitudeOutOfRange(f64),
    DomainNotObject(usize),
    WrongFieldType,
}

fn mutation() -> impl Strategy<Value = Mutation> {
    prop_oneof![
        (0..DOMAINS.len()).prop_map(Mutation::DropDomain),
        Just(Mutation::EmptyAppId),
        Just(Mutation::EmptyDeviceId),
        Just(Mutation::EndBeforeStart),
        Just(Mutation::ZeroStart),
        prop_oneof![
            Just("256.1.1.1".to_string()),
            Just("1.2.3".to_string()),
            Just("1.2.3.4.5".to_string()),
            Just("0001.2.3.4".to_string()),
            "[a-z]{1,10}",
            Just("1..2.3".to_string()),
        ]
        .prop_map(Mutation::BadIp),
        "[a-z]{3,10}".prop_filter("must not be a default family", |s| !rtstream::schema::DEFAULT_EVENT_FAMILIES.contains(&s.as_str()))
            .prop_map(Mutation::UnregisteredEvent),
        Just(Mutation::NonStringAttribute),
        (90.01f64..1e6).prop_map(Mutation::LatitudeOutOfRange),
        (180.01f64..1e6).prop_map(Mutation::LongitudeOutOfRange),
        (0..DOMAINS.len()).prop_map(Mutation::DomainNotObject),
        Just(Mutation::WrongFieldType),
    ]
}

fn apply(v: &mut Value, m: &Mutation) {
    let root = v.as_object_mut().unwrap();
    match m {
        Mutation::DropDomain(i) => {
            root.remove(DOMAINS[*i]);
        }
        Mutation::EmptyAppId => root["app"]["app_id"] = json!(""),
        Mutation::EmptyDeviceId => root["user"]["device_id"] = json!(""),
        Mutation::EndBeforeStart => {
            let start = root["time"]["start_ts"].as_u64().unwrap();
            root["time"]["end_ts"] = json!(start.saturating_sub(1).max(1));
            root["time"]["start_ts"] = json!(start.max(2));
        }
        Mutation::ZeroStart => root["time"]["start_ts"] = json!(0),
        Mutation::BadIp(ip) => root["geo"]["ip"] = json!(ip),
        Mutation::UnregisteredEvent(e) => root["event"]["event_name"] = json!(e),
        Mutation::NonStringAttribute => root["object"]["count"] = json!(3),
        Mutation::LatitudeOutOfRange(x) => root["geo"]["latitude"] = json!(x),
        Mutation::LongitudeOutOfRange(x) => root["geo"]["longitude"] = json!(-x),
        Mutation::DomainNotObject(i) => root[DOMAINS[*i]] = json!([1, 2]),
        Mutation::WrongFieldType => root["app"]["version"] = json!(7),
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 512, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn serialize_then_validate_is_identity(r in valid_record()) {
        let line = r.to_json_line();
        prop_assert_eq!(validate(line.as_bytes()).unwrap(), r);
    }

    #[test]
    fn enrich_is_idempotent(r in valid_record(), ip in dotted_quad(), ua in "\\PC{0,20}") {
        let once = enrich(r, &ip, &ua);
        prop_assert_eq!(enrich(once.clone(), &ip, &ua), once);
    }

    #[test]
    fn mutated_records_are_rejected(r in valid_record(), m in mutation()) {
        let mut v = serde_json::to_value(&r).unwrap();
        apply(&mut v, &m);
        let raw = serde_json::to_vec(&v).unwrap();
        let failure = validate(&raw).expect_err("mutation accepted");
        prop_assert!(!failure.violations.is_empty());
        if let Mutation::DropDomain(i) = m {
            prop_assert!(failure.violations.contains(&Violation::MissingDomain(DOMAINS[i])));
        }
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = validate(&bytes);
    }
}
