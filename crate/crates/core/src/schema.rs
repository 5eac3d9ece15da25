//! Eight-domain log record: validation from the NDJSON wire form and
//! transport-side enrichment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const DOMAINS: [&str; 8] = ["app", "device", "user", "event", "object", "time", "geo", "result"];

/// Event families known without the `custom:` prefix.
pub const DEFAULT_EVENT_FAMILIES: [&str; 6] = ["browse", "error", "play", "search", "comment", "share"];

pub const CUSTOM_PREFIX: &str = "custom:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub app: AppDomain,
    pub device: DeviceDomain,
    pub user: UserDomain,
    pub event: EventDomain,
    pub object: ObjectDomain,
    pub time: TimeDomain,
    pub geo: GeoDomain,
    pub result: ResultDomain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppDomain {
    pub app_id: String,
    pub version: String,
    pub app_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceDomain {
    pub os: String,
    pub resolution: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_agent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserDomain {
    pub device_id: String,
    pub user_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventDomain {
    pub event_name: String,
}

/// Free-form business attributes (url, node_id, stream_address, ...).
pub type ObjectDomain = BTreeMap<String, String>;

/// Unix milliseconds, UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeDomain {
    pub start_ts: u64,
    pub end_ts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoDomain {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ip: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub longitude: Option<f64>,
    pub network_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultDomain {
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl LogRecord {
    /// Canonical single-line JSON form (no trailing newline).
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log records always serialize")
    }

    /// `"custom"` for custom events, otherwise the event name itself.
    pub fn event_family(&self) -> &str {
        event_family(&self.event.event_name)
    }
}

pub fn event_family(event_name: &str) -> &str {
    if event_name.starts_with(CUSTOM_PREFIX) {
        "custom"
    } else {
        event_name
    }
}

/// Queue topic for an event name: `events.<family>`.
pub fn topic_for_event(event_name: &str) -> String {
    format!("events.{}", event_family(event_name))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    MalformedSyntax(String),
    MissingDomain(&'static str),
    FieldInvariant { field: String, reason: String },
}

impl Violation {
    fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Violation::FieldInvariant {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Short machine-readable kind: `MalformedSyntax`, `MissingDomain` or `FieldInvariant`.
    pub fn kind(&self) -> &'static str {
        match self {
            Violation::MalformedSyntax(_) => "MalformedSyntax",
            Violation::MissingDomain(_) => "MissingDomain",
            Violation::FieldInvariant { .. } => "FieldInvariant",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MalformedSyntax(msg) => write!(f, "MalformedSyntax: {msg}"),
            Violation::MissingDomain(d) => write!(f, "MissingDomain({d})"),
            Violation::FieldInvariant { field, reason } => write!(f, "FieldInvariant({field}): {reason}"),
        }
    }
}

/// Every violation found in one candidate record.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ValidationFailure {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("; "))
    }
}

impl ValidationFailure {
    /// The first violation's kind, used as the rejection reason on the wire.
    pub fn reason(&self) -> &'static str {
        self.violations.first().map_or("FieldInvariant", Violation::kind)
    }
}

/// Known event families; anything else must carry the `custom:` prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRegistry {
    families: BTreeSet<String>,
}

impl Default for EventRegistry {
    fn default() -> Self {
        Self::new(DEFAULT_EVENT_FAMILIES)
    }
}

impl EventRegistry {
    pub fn new<I, S>(families: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            families: families.into_iter().map(Into::into).collect(),
        }
    }

    pub fn register(&mut self, family: impl Into<String>) {
        self.families.insert(family.into());
    }

    pub fn accepts(&self, event_name: &str) -> bool {
        match event_name.strip_prefix(CUSTOM_PREFIX) {
            Some(custom) => !custom.is_empty(),
            None => self.families.contains(event_name),
        }
    }

    /// Parses and checks one serialized record, reporting every violation.
    pub fn validate(&self, raw: &[u8]) -> Result<LogRecord, ValidationFailure> {
        let fail = |v: Violation| ValidationFailure { violations: vec![v] };
        let value: Value = serde_json::from_slice(raw).map_err(|e| fail(Violation::MalformedSyntax(e.to_string())))?;
        let Value::Object(root) = value else {
            return Err(fail(Violation::MalformedSyntax("record is not a JSON object".into())));
        };

        let mut cx = Checker::default();
        let app = cx.domain(&root, "app").map(|o| AppDomain {
            app_id: cx.non_empty(o, "app", "app_id"),
            version: cx.string(o, "app", "version"),
            app_type: cx.string(o, "app", "app_type"),
        });
        let device = cx.domain(&root, "device").map(|o| DeviceDomain {
            os: cx.string(o, "device", "os"),
            resolution: cx.string(o, "device", "resolution"),
            model: cx.string(o, "device", "model"),
            user_agent: cx.opt_string(o, "device", "user_agent"),
        });
        let user = cx.domain(&root, "user").map(|o| UserDomain {
            device_id: cx.non_empty(o, "user", "device_id"),
            user_id: cx.string(o, "user", "user_id"),
        });
        let event = cx.domain(&root, "event").map(|o| {
            let event_name = cx.non_empty(o, "event", "event_name");
            if !event_name.is_empty() && !self.accepts(&event_name) {
                cx.violate("event.event_name", format!("{event_name:?} is not registered and lacks the custom: prefix"));
            }
            EventDomain { event_name }
        });
        let object = cx.domain(&root, "object").map(|o| {
            let mut attrs = ObjectDomain::new();
            for (k, v) in o {
                match v {
                    Value::String(s) => {
                        attrs.insert(k.clone(), s.clone());
                    }
                    _ => cx.violate(format!("object.{k}"), "attribute values must be strings"),
                }
            }
            attrs
        });
        let time = cx.domain(&root, "time").map(|o| {
            let start_ts = cx.timestamp(o, "time", "start_ts");
            let end_ts = cx.timestamp(o, "time", "end_ts");
            if start_ts > 0 && end_ts > 0 && end_ts < start_ts {
                cx.violate("time.end_ts", "end_ts precedes start_ts");
            }
            TimeDomain { start_ts, end_ts }
        });
        let geo = cx.domain(&root, "geo").map(|o| {
            let ip = cx.opt_string(o, "geo", "ip");
            if let Some(ip) = &ip {
                if !is_dotted_quad(ip) {
                    cx.violate("geo.ip", format!("{ip:?} is not an IPv4 dotted quad"));
                }
            }
            GeoDomain {
                ip,
                latitude: cx.coordinate(o, "geo", "latitude", 90.0),
                longitude: cx.coordinate(o, "geo", "longitude", 180.0),
                network_type: cx.string(o, "geo", "network_type"),
            }
        });
        let result = cx.domain(&root, "result").map(|o| ResultDomain {
            code: cx.string(o, "result", "code"),
            detail: cx.opt_string(o, "result", "detail"),
        });

        if !cx.violations.is_empty() {
            return Err(ValidationFailure {
                violations: cx.violations,
            });
        }
        // Every domain is Some when no violation was recorded.
        Ok(LogRecord {
            app: app.unwrap(),
            device: device.unwrap(),
            user: user.unwrap(),
            event: event.unwrap(),
            object: object.unwrap(),
            time: time.unwrap(),
            geo: geo.unwrap(),
            result: result.unwrap(),
        })
    }
}

/// Validates against the default event registry.
pub fn validate(raw: &[u8]) -> Result<LogRecord, ValidationFailure> {
    EventRegistry::default().validate(raw)
}

/// Fills an absent client IP and user agent from the transport; present values win.
pub fn enrich(mut record: LogRecord, remote_ip: &str, user_agent: &str) -> LogRecord {
    if record.geo.ip.is_none() && !remote_ip.is_empty() {
        record.geo.ip = Some(remote_ip.to_owned());
    }
    if record.device.user_agent.is_none() && !user_agent.is_empty() {
        record.device.user_agent = Some(user_agent.to_owned());
    }
    record
}

/// Four dot-separated decimal octets of 1-3 digits, each at most 255.
/// Zero-padded octets ("192.168.001.001") are accepted.
pub fn is_dotted_quad(s: &str) -> bool {
    let mut parts = 0;
    for part in s.split('.') {
        parts += 1;
        if part.is_empty() || part.len() > 3 || !part.bytes().all(|b| b.is_ascii_digit()) {
            return false;
        }
        if part.parse::<u16>().map_or(true, |v| v > 255) {
            return false;
        }
    }
    parts == 4
}

#[derive(Default)]
struct Checker {
    violations: Vec<Violation>,
}

impl Checker {
    fn violate(&mut self, field: impl Into<String>, reason: impl Into<String>) {
        self.violations.push(Violation::field(field, reason));
    }

    fn domain<'a>(&mut self, root: &'a Map<String, Value>, name: &'static str) -> Option<&'a Map<String, Value>> {
        match root.get(name) {
            None | Some(Value::Null) => {
                self.violations.push(Violation::MissingDomain(name));
                None
            }
            Some(Value::Object(o)) => Some(o),
            Some(_) => {
                self.violate(name, "domain must be a JSON object");
                None
            }
        }
    }

    fn string(&mut self, o: &Map<String, Value>, domain: &str, key: &str) -> String {
        match o.get(key) {
            Some(Value::String(s)) => s.clone(),
            None => {
                self.violate(format!("{domain}.{key}"), "missing");
                String::new()
            }
            Some(_) => {
                self.violate(format!("{domain}.{key}"), "must be a string");
                String::new()
            }
        }
    }

    fn non_empty(&mut self, o: &Map<String, Value>, domain: &str, key: &str) -> String {
        let before = self.violations.len();
        let s = self.string(o, domain, key);
        if s.is_empty() && self.violations.len() == before {
            self.violate(format!("{domain}.{key}"), "must be non-empty");
        }
        s
    }

    fn opt_string(&mut self, o: &Map<String, Value>, domain: &str, key: &str) -> Option<String> {
        match o.get(key) {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => {
                self.violate(format!("{domain}.{key}"), "must be a string");
                None
            }
        }
    }

    fn timestamp(&mut self, o: &Map<String, Value>, domain: &str, key: &str) -> u64 {
        match o.get(key).and_then(Value::as_u64) {
            Some(ts) if ts > 0 => ts,
            _ => {
                self.violate(format!("{domain}.{key}"), "must be a positive integer (unix ms)");
                0
            }
        }
    }

    fn coordinate(&mut self, o: &Map<String, Value>, domain: &str, key: &str, limit: f64) -> Option<f64> {
        match o.get(key) {
            None | Some(Value::Null) => None,
            Some(v) => match v.as_f64() {
                Some(x) if x.abs() <= limit => Some(x),
                _ => {
                    self.violate(format!("{domain}.{key}"), format!("must be a number within ±{limit}"));
                    None
                }
            },
        }
    }
}
