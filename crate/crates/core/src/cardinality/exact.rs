use std::collections::HashSet;

use super::SketchError;

const EXACT_FORMAT_VERSION: u8 = 1;

/// Exact distinct-member set. The count is always `seen.len()`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExactDistinctState {
    seen: HashSet<String>,
}

impl ExactDistinctState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `item`, returning `true` when it was not seen before.
    pub fn insert(&mut self, item: &str) -> bool {
        if self.seen.contains(item) {
            return false;
        }
        self.seen.insert(item.to_owned())
    }

    pub fn count(&self) -> u64 {
        self.seen.len() as u64
    }

    pub fn contains(&self, item: &str) -> bool {
        self.seen.contains(item)
    }

    /// Encodes members in sorted order so equal sets give equal bytes.
    ///
    /// Layout: version u8, count u64 LE, then per member a u16 LE length and
    /// the UTF-8 bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut members: Vec<&str> = self.seen.iter().map(String::as_str).collect();
        members.sort_unstable();
        let body: usize = members.iter().map(|m| 2 + m.len()).sum();
        let mut out = Vec::with_capacity(9 + body);
        out.push(EXACT_FORMAT_VERSION);
        out.extend_from_slice(&(members.len() as u64).to_le_bytes());
        for m in members {
            out.extend_from_slice(&(m.len() as u16).to_le_bytes());
            out.extend_from_slice(m.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SketchError> {
        let (&version, rest) = bytes
            .split_first()
            .ok_or(SketchError::CorruptSketch("empty exact state"))?;
        if version != EXACT_FORMAT_VERSION {
            return Err(SketchError::CorruptSketch("unknown exact state version"));
        }
        let count = rest
            .get(..8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
            .ok_or(SketchError::CorruptSketch("truncated exact state header"))?;
        let mut pos = 8;
        let mut seen = HashSet::with_capacity(count.min(1 << 24) as usize);
        for _ in 0..count {
            let len = rest
                .get(pos..pos + 2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]) as usize)
                .ok_or(SketchError::CorruptSketch("truncated exact member length"))?;
            pos += 2;
            let raw = rest
                .get(pos..pos + len)
                .ok_or(SketchError::CorruptSketch("truncated exact member"))?;
            let member = std::str::from_utf8(raw)
                .map_err(|_| SketchError::CorruptSketch("exact member is not UTF-8"))?;
            seen.insert(member.to_owned());
            pos += len;
        }
        if pos != rest.len() {
            return Err(SketchError::CorruptSketch("trailing bytes after exact state"));
        }
        Ok(Self { seen })
    }
}

impl<'a> FromIterator<&'a str> for ExactDistinctState {
    fn from_iter<I: IntoIterator<Item = &'a str>>(iter: I) -> Self {
        let mut state = Self::new();
        for item in iter {
            state.insert(item);
        }
        state
    }
}
