use proptest::prelude::*;
use rtstream::schema::{
    AppDomain, DeviceDomain, EventDomain, GeoDomain, LogRecord, ResultDomain, TimeDomain, UserDomain, DEFAULT_EVENT_FAMILIES,
};

fn text() -> impl Strategy<Value = String> {
    "\\PC{0,16}"
}

fn non_empty() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9_-]{1,12}"
}

pub fn dotted_quad() -> impl Strategy<Value = String> {
    (any::<[u8; 4]>(), any::<bool>()).prop_map(|(o, padded)| {
        if padded {
            format!("{:03}.{:03}.{:03}.{:03}", o[0], o[1], o[2], o[3])
        } else {
            format!("{}.{}.{}.{}", o[0], o[1], o[2], o[3])
        }
    })
}

pub fn event_name() -> impl Strategy<Value = String> {
    prop_oneof![
        prop::sample::select(DEFAULT_EVENT_FAMILIES.to_vec()).prop_map(String::from),
        "[a-z]{1,8}".prop_map(|s| format!("custom:{s}")),
    ]
}

/// Coordinates in quarter degrees so the JSON text is exact.
fn coordinate(limit: i32) -> impl Strategy<Value = Option<f64>> {
    prop::option::of((-limit * 4..=limit * 4).prop_map(|q| q as f64 / 4.0))
}

/// Any record satisfying the type invariants.
pub fn valid_record() -> impl Strategy<Value = LogRecord> {
    let app = (non_empty(), text(), text()).prop_map(|(app_id, version, app_type)| AppDomain {
        app_id,
        version,
        app_type,
    });
    let device = (text(), text(), text(), prop::option::of(text())).prop_map(|(os, resolution, model, user_agent)| DeviceDomain {
        os,
        resolution,
        model,
        user_agent,
    });
    let user = (non_empty(), text()).prop_map(|(device_id, user_id)| UserDomain { device_id, user_id });
    let object = prop::collection::btree_map("[a-z_]{1,10}", text(), 0..5);
    let time = (1u64..4_000_000_000_000, 0u64..3_600_000).prop_map(|(start_ts, d)| TimeDomain {
        start_ts,
        end_ts: start_ts + d,
    });
    let geo = (prop::option::of(dotted_quad()), coordinate(90), coordinate(180), text()).prop_map(
        |(ip, latitude, longitude, network_type)| GeoDomain {
            ip,
            latitude,
            longitude,
            network_type,
        },
    );
    let result = (text(), prop::option::of(text())).prop_map(|(code, detail)| ResultDomain { code, detail });
    (app, device, user, event_name(), object, time, geo, result).prop_map(|(app, device, user, event_name, object, time, geo, result)| {
        LogRecord {
            app,
            device,
            user,
            event: EventDomain { event_name },
            object,
            time,
            geo,
            result,
        }
    })
}
