use std::collections::BTreeMap;

use super::{Batch, EngineError, SourcedRecord};
use crate::schema::LogRecord;

/// Encodes one family of state values to and from opaque blobs.
pub trait StateCodec {
    type Value;
    /// Family name used in error messages.
    const FAMILY: &'static str;
    fn encode(value: &Self::Value) -> Vec<u8>;
    fn decode(bytes: &[u8]) -> Result<Self::Value, String>;
}

/// Per-key state blobs plus the engine bookkeeping that travels with them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyedState {
    pub(crate) entries: BTreeMap<String, Vec<u8>>,
    /// (topic, partition) -> next offset to read, as of `last_batch_id`.
    pub(crate) source_offsets: BTreeMap<(String, u32), u64>,
    pub(crate) last_batch_id: u64,
}

impl KeyedState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn last_batch_id(&self) -> u64 {
        self.last_batch_id
    }

    pub fn source_offsets(&self) -> &BTreeMap<(String, u32), u64> {
        &self.source_offsets
    }

    pub fn get(&self, key: &str) -> Option<&[u8]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn put(&mut self, key: impl Into<String>, blob: Vec<u8>) {
        self.entries.insert(key.into(), blob);
    }

    pub fn remove(&mut self, key: &str) -> Option<Vec<u8>> {
        self.entries.remove(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[u8])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Entries whose key starts with `prefix`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a [u8])> + 'a {
        self.entries
            .range(prefix.to_owned()..)
            .take_while(move |(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Sum of key and blob lengths.
    pub fn payload_bytes(&self) -> usize {
        self.entries.iter().map(|(k, v)| k.len() + v.len()).sum()
    }
}

/// Stateful per-key fold over one batch.
///
/// Records are grouped by `key_fn` (records mapping to `None` are ignored);
/// for every key present in the batch `update_fn` runs exactly once with the
/// decoded prior value (if any) and that key's records, and the new value is
/// stored under `"<namespace>/<key>"`. Keys not present in the batch are not
/// touched. Returns each key's output.
pub fn update_state_by_key<C, O, K, U>(
    batch: &Batch,
    state: &mut KeyedState,
    namespace: &str,
    key_fn: K,
    mut update_fn: U,
) -> Result<BTreeMap<String, O>, EngineError>
where
    C: StateCodec,
    K: Fn(&LogRecord) -> Option<String>,
    U: FnMut(&str, Option<C::Value>, &[&SourcedRecord]) -> Result<(C::Value, O), EngineError>,
{
    let mut groups: BTreeMap<String, Vec<&SourcedRecord>> = BTreeMap::new();
    for r in &batch.records {
        if let Some(k) = key_fn(&r.record) {
            groups.entry(k).or_default().push(r);
        }
    }
    let mut outputs = BTreeMap::new();
    for (key, records) in groups {
        let state_key = format!("{namespace}/{key}");
        let existing = match state.get(&state_key) {
            Some(blob) => Some(C::decode(blob).map_err(|reason| EngineError::CodecFailure {
                family: C::FAMILY,
                key: state_key.clone(),
                reason,
            })?),
            None => None,
        };
        let (value, out) = update_fn(&key, existing, &records)?;
        state.put(state_key, C::encode(&value));
        outputs.insert(key, out);
    }
    Ok(outputs)
}

/// u64 counter codec, handy for simple folds.
pub struct U64Codec;

impl StateCodec for U64Codec {
    type Value = u64;
    const FAMILY: &'static str = "u64";

    fn encode(value: &u64) -> Vec<u8> {
        value.to_le_bytes().to_vec()
    }

    fn decode(bytes: &[u8]) -> Result<u64, String> {
        bytes
            .try_into()
            .map(u64::from_le_bytes)
            .map_err(|_| format!("expected 8 bytes, got {}", bytes.len()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::test_support::{batch_of, record_with_ip};

    fn count_update(
        _key: &str,
        prior: Option<u64>,
        records: &[&SourcedRecord],
    ) -> Result<(u64, u64), EngineError> {
        let v = prior.unwrap_or(0) + records.len() as u64;
        Ok((v, v))
    }

    fn by_ip(r: &LogRecord) -> Option<String> {
        r.geo.ip.clone()
    }

    #[test]
    fn initializes_absent_key() {
        let batch = batch_of(1, (0..4).map(|_| record_with_ip("k", 1)).collect());
        let mut state = KeyedState::new();
        let out = update_state_by_key::<U64Codec, _, _, _>(&batch, &mut state, "n", by_ip, count_update).unwrap();
        assert_eq!(out["k"], 4);
        assert_eq!(U64Codec::decode(state.get("n/k").unwrap()).unwrap(), 4);
    }

    #[test]
    fn disjoint_keys_are_independent() {
        let mut state = KeyedState::new();
        let b1 = batch_of(1, vec![record_with_ip("a", 1)]);
        let b2 = batch_of(2, vec![record_with_ip("b", 1), record_with_ip("b", 1)]);
        update_state_by_key::<U64Codec, _, _, _>(&b1, &mut state, "n", by_ip, count_update).unwrap();
        let out = update_state_by_key::<U64Codec, _, _, _>(&b2, &mut state, "n", by_ip, count_update).unwrap();
        assert!(!out.contains_key("a"));
        assert_eq!(U64Codec::decode(state.get("n/a").unwrap()).unwrap(), 1);
        assert_eq!(U64Codec::decode(state.get("n/b").unwrap()).unwrap(), 2);
    }

    #[test]
    fn fold_sums_across_batches() {
        let mut state = KeyedState::new();
        for (i, inc) in [1u64, 2, 3].into_iter().enumerate() {
            let batch = batch_of(i as u64 + 1, vec![record_with_ip("k", 1)]);
            update_state_by_key::<U64Codec, _, _, _>(&batch, &mut state, "sum", by_ip, |_, prior, _| {
                let v = prior.unwrap_or(0) + inc;
                Ok((v, ()))
            })
            .unwrap();
        }
        assert_eq!(U64Codec::decode(state.get("sum/k").unwrap()).unwrap(), 6);
    }

    #[test]
    fn undecodable_blob_is_codec_failure() {
        let mut state = KeyedState::new();
        state.put("n/k", vec![1, 2, 3]);
        let batch = batch_of(1, vec![record_with_ip("k", 1)]);
        let err = update_state_by_key::<U64Codec, _, _, _>(&batch, &mut state, "n", by_ip, count_update).unwrap_err();
        assert!(matches!(err, EngineError::CodecFailure { family: "u64", .. }));
    }

    #[test]
    fn prefix_iteration() {
        let mut s = KeyedState::new();
        s.put("a/1", vec![]);
        s.put("b/1", vec![]);
        s.put("a/2", vec![]);
        let keys: Vec<&str> = s.with_prefix("a/").map(|(k, _)| k).collect();
        assert_eq!(keys, ["a/1", "a/2"]);
    }
}
