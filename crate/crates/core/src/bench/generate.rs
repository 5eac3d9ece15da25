use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::schema::{AppDomain, DeviceDomain, EventDomain, GeoDomain, LogRecord, ResultDomain, TimeDomain, UserDomain};

pub const DEFAULT_RECORD_SIZE: u32 = 1296;
pub const DEFAULT_INTERVAL_MS: u64 = 300_000;
/// 2024-01-01T00:00:00Z.
pub const DEFAULT_ORIGIN_MS: u64 = 1_704_067_200_000;
pub const FILLER_KEY: &str = "filler";

const DAY_MS: u64 = 86_400_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GenerateError {
    #[error("record size {requested} is below the {minimum} bytes the record needs without padding")]
    RecordSizeTooSmall { requested: u32, minimum: usize },
    #[error("duplicate fraction {0} outside [0, 1]")]
    BadFraction(String),
    #[error("batch size must be positive")]
    ZeroBatch,
}

/// Synthetic log workload settings.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerateConfig {
    pub count: u64,
    pub seed: u64,
    /// Share of each batch whose IPs repeat earlier ones.
    pub duplicate_fraction: f64,
    /// Exact serialized size of every record, newline excluded.
    pub record_size: u32,
    /// Records per batch; duplicates are drawn per batch.
    pub batch_size: u64,
    pub origin_ms: u64,
    pub interval_ms: u64,
    /// Spread batches over consecutive days, this many per day. `None`
    /// keeps everything on the origin day.
    pub batches_per_day: Option<u64>,
}

impl GenerateConfig {
    pub fn new(count: u64, seed: u64) -> Self {
        Self {
            count,
            seed,
            duplicate_fraction: 0.5,
            record_size: DEFAULT_RECORD_SIZE,
            batch_size: count.max(1),
            origin_ms: DEFAULT_ORIGIN_MS,
            interval_ms: DEFAULT_INTERVAL_MS,
            batches_per_day: None,
        }
    }

    pub fn batch_size(mut self, n: u64) -> Self {
        self.batch_size = n;
        self
    }
}

/// Zero-padded dotted quad, always 15 characters.
pub fn padded_ip(v: u32) -> String {
    let [a, b, c, d] = v.to_be_bytes();
    format!("{a:03}.{b:03}.{c:03}.{d:03}")
}

const APPS: [(&str, &str); 4] = [("video", "android"), ("video", "ios"), ("shop", "web"), ("news", "web")];
const OSES: [(&str, &str, &str); 4] = [
    ("android 14", "1080x2400", "pixel-8"),
    ("ios 17", "1179x2556", "iphone-15"),
    ("windows 11", "1920x1080", "desktop"),
    ("macos 14", "2560x1600", "macbook"),
];
const EVENTS: [&str; 6] = ["browse", "play", "search", "comment", "share", "error"];
const NETWORKS: [&str; 4] = ["wifi", "4g", "5g", "ethernet"];

/// Generates `config.count` NDJSON lines (without trailing newlines).
///
/// In every batch, `duplicate_fraction` of the records reuse an IP drawn
/// uniformly from all IPs of earlier batches (for the first batch, from the
/// batch's own fresh half) and the rest get IPs never used before.
pub fn generate_logs(config: &GenerateConfig) -> Result<Vec<String>, GenerateError> {
    if !(0.0..=1.0).contains(&config.duplicate_fraction) {
        return Err(GenerateError::BadFraction(config.duplicate_fraction.to_string()));
    }
    if config.batch_size == 0 {
        return Err(GenerateError::ZeroBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut seen: HashSet<u32> = HashSet::new();
    let mut pool: Vec<u32> = Vec::new();
    let mut out = Vec::with_capacity(config.count as usize);

    let mut batch = 0u64;
    while (out.len() as u64) < config.count {
        let n = config.batch_size.min(config.count - out.len() as u64) as usize;
        let mut dup = (n as f64 * config.duplicate_fraction).round() as usize;
        if pool.is_empty() {
            // Repeats in the first batch come from its own fresh IPs, so keep one.
            dup = dup.min(n - 1);
        }
        let fresh: Vec<u32> = (0..n - dup)
            .map(|_| loop {
                let v: u32 = rng.gen();
                if seen.insert(v) {
                    break v;
                }
            })
            .collect();
        let source: &[u32] = if pool.is_empty() { &fresh } else { &pool };
        let mut ips = fresh.clone();
        ips.extend((0..dup).map(|_| source[rng.gen_range(0..source.len())]));
        ips.shuffle(&mut rng);
        pool.extend_from_slice(&fresh);

        let day_shift = config.batches_per_day.map_or(0, |per| (batch / per.max(1)) * DAY_MS);
        let slot = config.batches_per_day.map_or(batch, |per| batch % per.max(1));
        let window_start = config.origin_ms + day_shift + slot * config.interval_ms;
        for (i, ip) in ips.into_iter().enumerate() {
            let ts = window_start + (i as u64 * config.interval_ms) / n as u64;
            out.push(record_line(&mut rng, &padded_ip(ip), ts, config.record_size)?);
        }
        batch += 1;
    }
    Ok(out)
}

fn record_line(rng: &mut ChaCha8Rng, ip: &str, ts: u64, size: u32) -> Result<String, GenerateError> {
    let (app_id, app_type) = *APPS.choose(rng).unwrap();
    let (os, resolution, model) = *OSES.choose(rng).unwrap();
    let event = *EVENTS.choose(rng).unwrap();
    let mut record = LogRecord {
        app: AppDomain {
            app_id: app_id.into(),
            version: format!("{}.{}.{}", rng.gen_range(1..4), rng.gen_range(0..10), rng.gen_range(0..20)),
            app_type: app_type.into(),
        },
        device: DeviceDomain {
            os: os.into(),
            resolution: resolution.into(),
            model: model.into(),
            user_agent: Some(format!("{app_id}/{} ({os})", rng.gen_range(100..999))),
        },
        user: UserDomain {
            device_id: format!("{:016x}", rng.gen::<u64>()),
            user_id: format!("u{:08}", rng.gen_range(0..50_000_000u32)),
        },
        event: EventDomain { event_name: event.into() },
        object: [
            ("url".to_string(), format!("/{event}/{}", rng.gen_range(0..100_000))),
            ("node_id".to_string(), format!("n{}", rng.gen_range(0..64))),
            (FILLER_KEY.to_string(), String::new()),
        ]
        .into_iter()
        .collect(),
        time: TimeDomain {
            start_ts: ts,
            end_ts: ts + rng.gen_range(0..5_000),
        },
        geo: GeoDomain {
            ip: Some(ip.to_owned()),
            latitude: Some(rng.gen_range(-900_000..=900_000) as f64 / 1e4),
            longitude: Some(rng.gen_range(-1_800_000..=1_800_000) as f64 / 1e4),
            network_type: (*NETWORKS.choose(rng).unwrap()).into(),
        },
        result: ResultDomain {
            code: if event == "error" { "500".into() } else { "0".into() },
            detail: None,
        },
    };
    let base = record.to_json_line().len();
    if base > size as usize {
        return Err(GenerateError::RecordSizeTooSmall {
            requested: size,
            minimum: base,
        });
    }
    record.object.insert(FILLER_KEY.into(), "x".repeat(size as usize - base));
    Ok(record.to_json_line())
}
