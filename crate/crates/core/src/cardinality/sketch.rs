use super::bias::{linear_counting_threshold, BiasCurve};
use super::hash::hash64;
use super::{SketchError, MAX_PRECISION, MIN_PRECISION, SPARSE_PRECISION};

const FORMAT_VERSION: u8 = 1;
const DENSE_FLAG: u8 = 0x80;
/// Width of the sparse rho field; rho of the 39 bits below the sparse index is at most 40.
const SPARSE_RHO_BITS: u32 = 6;
const SPARSE_RHO_MASK: u32 = (1 << SPARSE_RHO_BITS) - 1;
const HEADER_LEN: usize = 2;
const TRAILER_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sparse,
    Dense,
}

/// Which estimator produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorBranch {
    /// Linear counting over the `2^25` sparse index space.
    SparseLinearCounting,
    /// Linear counting over the dense registers.
    LinearCounting,
    /// Harmonic-mean raw estimate minus empirical bias.
    BiasCorrected,
    /// Harmonic-mean raw estimate above `5 * 2^p`.
    Raw,
    /// Sparse estimate certified at promotion time dominated the dense estimate.
    PromotionFloor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Repr {
    /// Sorted by sparse index; each entry is `sparse_index << 6 | rho`.
    Sparse(Vec<u32>),
    Dense {
        registers: Vec<u8>,
        /// Distinct sparse entries held when the sketch left sparse mode,
        /// capped at one past the promotion limit.
        floor_entries: u32,
    },
}

/// HyperLogLog++ sketch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CardinalitySketch {
    precision: u8,
    repr: Repr,
    insert_count: u64,
}

impl CardinalitySketch {
    pub fn new(precision: u8) -> Result<Self, SketchError> {
        if !(MIN_PRECISION..=MAX_PRECISION).contains(&precision) {
            return Err(SketchError::PrecisionOutOfRange(precision));
        }
        Ok(Self {
            precision,
            repr: Repr::Sparse(Vec::new()),
            insert_count: 0,
        })
    }

    pub fn precision(&self) -> u8 {
        self.precision
    }

    pub fn mode(&self) -> Mode {
        match self.repr {
            Repr::Sparse(_) => Mode::Sparse,
            Repr::Dense { .. } => Mode::Dense,
        }
    }

    /// Number of `insert` calls that reached this sketch (diagnostic only).
    pub fn insert_count(&self) -> u64 {
        self.insert_count
    }

    pub fn register_count(&self) -> usize {
        1 << self.precision
    }

    /// Maximum number of sparse entries before promotion: the sparse list may
    /// use at most as many bits (32 per entry) as the dense array (6 per register).
    pub fn sparse_limit(&self) -> usize {
        (6usize << self.precision) / 32
    }

    pub fn sparse_len(&self) -> Option<usize> {
        match &self.repr {
            Repr::Sparse(entries) => Some(entries.len()),
            Repr::Dense { .. } => None,
        }
    }

    pub fn insert(&mut self, item: &[u8]) {
        self.insert_hash(hash64(item));
    }

    pub fn insert_hash(&mut self, hash: u64) {
        self.insert_count += 1;
        let p = self.precision;
        match &mut self.repr {
            Repr::Sparse(entries) => {
                let index = (hash >> (64 - SPARSE_PRECISION)) as u32;
                let rho = rho(hash << SPARSE_PRECISION, 64 - SPARSE_PRECISION as u32);
                upsert_sparse(entries, index, rho);
                if entries.len() > self.sparse_limit() {
                    self.promote();
                }
            }
            Repr::Dense { registers, .. } => {
                let index = (hash >> (64 - p)) as usize;
                let rho = rho(hash << p, 64 - p as u32);
                if registers[index] < rho {
                    registers[index] = rho;
                }
            }
        }
    }

    /// Converts to dense mode now, regardless of the sparse size.
    pub fn promote(&mut self) {
        if let Repr::Sparse(entries) = &self.repr {
            let floor_entries = entries.len().min(self.sparse_limit() + 1) as u32;
            let registers = sparse_to_registers(entries, self.precision);
            self.repr = Repr::Dense {
                registers,
                floor_entries,
            };
        }
    }

    /// Dense register view; sparse sketches are converted on a copy.
    pub fn registers(&self) -> Vec<u8> {
        match &self.repr {
            Repr::Sparse(entries) => sparse_to_registers(entries, self.precision),
            Repr::Dense { registers, .. } => registers.clone(),
        }
    }

    pub fn estimate(&self) -> u64 {
        self.estimate_with_branch().0.round() as u64
    }

    pub fn estimate_with_branch(&self) -> (f64, EstimatorBranch) {
        match &self.repr {
            Repr::Sparse(entries) => (
                sparse_linear_counting(entries.len()),
                EstimatorBranch::SparseLinearCounting,
            ),
            Repr::Dense {
                registers,
                floor_entries,
            } => {
                let (value, branch) = dense_estimate(registers, self.precision);
                let floor = sparse_linear_counting(*floor_entries as usize);
                if floor > value {
                    (floor, EstimatorBranch::PromotionFloor)
                } else {
                    (value, branch)
                }
            }
        }
    }

    /// Register-wise maximum of `self` and `other`.
    pub fn merge_from(&mut self, other: &Self) -> Result<(), SketchError> {
        if self.precision != other.precision {
            return Err(SketchError::PrecisionMismatch(self.precision, other.precision));
        }
        self.insert_count += other.insert_count;
        let limit = self.sparse_limit();
        match (&mut self.repr, &other.repr) {
            (Repr::Sparse(ours), Repr::Sparse(theirs)) => {
                *ours = merge_sparse(ours, theirs);
                if ours.len() > limit {
                    self.promote();
                }
            }
            _ => {
                self.promote();
                let (theirs, their_floor) = match &other.repr {
                    Repr::Sparse(entries) => (
                        sparse_to_registers(entries, other.precision),
                        entries.len().min(limit + 1) as u32,
                    ),
                    Repr::Dense {
                        registers,
                        floor_entries,
                    } => (registers.clone(), *floor_entries),
                };
                if let Repr::Dense {
                    registers,
                    floor_entries,
                } = &mut self.repr
                {
                    for (r, t) in registers.iter_mut().zip(theirs) {
                        *r = (*r).max(t);
                    }
                    *floor_entries = (*floor_entries).max(their_floor);
                }
            }
        }
        Ok(())
    }

    pub fn merge(&self, other: &Self) -> Result<Self, SketchError> {
        let mut out = self.clone();
        out.merge_from(other)?;
        Ok(out)
    }

    /// Size of [`Self::to_bytes`] without encoding.
    pub fn serialized_len(&self) -> usize {
        HEADER_LEN
            + TRAILER_LEN
            + match &self.repr {
                Repr::Sparse(entries) => 4 + 4 * entries.len() + 8,
                Repr::Dense { registers, .. } => packed_len(registers.len()) + 8 + 4,
            }
    }

    /// Layout: version u8, `mode << 7 | p` u8, body, u32 LE integrity hash
    /// (low half of the 64-bit hash of everything before it).
    ///
    /// Sparse body: entry count u32, entries u32 each, insert count u64.
    /// Dense body: registers packed 6 bits each LSB-first, insert count u64,
    /// promotion floor u32. All integers little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        out.push(FORMAT_VERSION);
        match &self.repr {
            Repr::Sparse(entries) => {
                out.push(self.precision);
                out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
                for e in entries {
                    out.extend_from_slice(&e.to_le_bytes());
                }
                out.extend_from_slice(&self.insert_count.to_le_bytes());
            }
            Repr::Dense {
                registers,
                floor_entries,
            } => {
                out.push(DENSE_FLAG | self.precision);
                pack_registers(registers, &mut out);
                out.extend_from_slice(&self.insert_count.to_le_bytes());
                out.extend_from_slice(&floor_entries.to_le_bytes());
            }
        }
        let check = hash64(&out) as u32;
        out.extend_from_slice(&check.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SketchError> {
        if bytes.len() < HEADER_LEN + TRAILER_LEN {
            return Err(SketchError::CorruptSketch("too short"));
        }
        let (payload, trailer) = bytes.split_at(bytes.len() - TRAILER_LEN);
        if hash64(payload) as u32 != u32::from_le_bytes(trailer.try_into().unwrap()) {
            return Err(SketchError::CorruptSketch("integrity hash mismatch"));
        }
        if payload[0] != FORMAT_VERSION {
            return Err(SketchError::CorruptSketch("unknown format version"));
        }
        let precision = payload[1] & !DENSE_FLAG;
        let dense = payload[1] & DENSE_FLAG != 0;
        let mut sketch =
            Self::new(precision).map_err(|_| SketchError::CorruptSketch("precision out of range"))?;
        let body = &payload[HEADER_LEN..];
        if dense {
            let m = sketch.register_count();
            let packed = packed_len(m);
            if body.len() != packed + 12 {
                return Err(SketchError::CorruptSketch("dense body length"));
            }
            let registers = unpack_registers(&body[..packed], m);
            let cap = (64 - precision + 1) as u8;
            if registers.iter().any(|&r| r > cap) {
                return Err(SketchError::CorruptSketch("register value out of range"));
            }
            sketch.insert_count = u64::from_le_bytes(body[packed..packed + 8].try_into().unwrap());
            let floor_entries = u32::from_le_bytes(body[packed + 8..].try_into().unwrap());
            if floor_entries as usize > sketch.sparse_limit() + 1 {
                return Err(SketchError::CorruptSketch("promotion floor out of range"));
            }
            sketch.repr = Repr::Dense {
                registers,
                floor_entries,
            };
        } else {
            if body.len() < 12 {
                return Err(SketchError::CorruptSketch("sparse body length"));
            }
            let n = u32::from_le_bytes(body[..4].try_into().unwrap()) as usize;
            if n > sketch.sparse_limit() || body.len() != 4 + 4 * n + 8 {
                return Err(SketchError::CorruptSketch("sparse body length"));
            }
            let entries: Vec<u32> = body[4..4 + 4 * n]
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let max_rho = 64 - SPARSE_PRECISION as u32 + 1;
            let well_formed = entries.iter().all(|e| {
                let rho = e & SPARSE_RHO_MASK;
                rho >= 1 && rho <= max_rho
            }) && entries.windows(2).all(|w| (w[0] >> SPARSE_RHO_BITS) < (w[1] >> SPARSE_RHO_BITS));
            if !well_formed {
                return Err(SketchError::CorruptSketch("malformed sparse entries"));
            }
            sketch.insert_count = u64::from_le_bytes(body[4 + 4 * n..].try_into().unwrap());
            sketch.repr = Repr::Sparse(entries);
        }
        Ok(sketch)
    }
}

/// `1 + leading zeros` of the top `width` bits of `w`, capped at `width + 1`.
#[inline]
fn rho(w: u64, width: u32) -> u8 {
    (w.leading_zeros() + 1).min(width + 1) as u8
}

fn upsert_sparse(entries: &mut Vec<u32>, index: u32, rho: u8) {
    let encoded = (index << SPARSE_RHO_BITS) | rho as u32;
    match entries.binary_search_by_key(&index, |e| e >> SPARSE_RHO_BITS) {
        Ok(pos) => {
            if entries[pos] & SPARSE_RHO_MASK < rho as u32 {
                entries[pos] = encoded;
            }
        }
        Err(pos) => entries.insert(pos, encoded),
    }
}

fn merge_sparse(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let (ia, ib) = (a[i] >> SPARSE_RHO_BITS, b[j] >> SPARSE_RHO_BITS);
        if ia < ib {
            out.push(a[i]);
            i += 1;
        } else if ib < ia {
            out.push(b[j]);
            j += 1;
        } else {
            out.push(a[i].max(b[j]));
            i += 1;
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

fn sparse_to_registers(entries: &[u32], p: u8) -> Vec<u8> {
    let mut registers = vec![0u8; 1 << p];
    let extra = (SPARSE_PRECISION - p) as u32;
    for &e in entries {
        let sparse_index = e >> SPARSE_RHO_BITS;
        let sparse_rho = (e & SPARSE_RHO_MASK) as u8;
        let index = (sparse_index >> extra) as usize;
        let low = sparse_index & ((1u32 << extra) - 1);
        let rho = if low != 0 {
            (low.leading_zeros() - (32 - extra) + 1) as u8
        } else {
            extra as u8 + sparse_rho
        };
        if registers[index] < rho {
            registers[index] = rho;
        }
    }
    registers
}

fn sparse_linear_counting(entries: usize) -> f64 {
    if entries == 0 {
        return 0.0;
    }
    let m = (1u64 << SPARSE_PRECISION) as f64;
    m * (m / (m - entries as f64)).ln()
}

fn alpha(m: usize) -> f64 {
    match m {
        16 => 0.673,
        32 => 0.697,
        64 => 0.709,
        _ => 0.7213 / (1.0 + 1.079 / m as f64),
    }
}

fn dense_estimate(registers: &[u8], p: u8) -> (f64, EstimatorBranch) {
    let m = registers.len();
    let mf = m as f64;
    let mut sum = 0.0;
    let mut zeros = 0usize;
    for &r in registers {
        sum += f64::from_bits((1023 - r as u64) << 52);
        zeros += (r == 0) as usize;
    }
    if zeros == m {
        return (0.0, EstimatorBranch::LinearCounting);
    }
    let threshold = linear_counting_threshold(p);
    if zeros > 0 {
        let lc = mf * (mf / zeros as f64).ln();
        if lc <= threshold {
            return (lc, EstimatorBranch::LinearCounting);
        }
    }
    let raw = alpha(m) * mf * mf / sum;
    let curve = BiasCurve::for_precision(p);
    let boundary = 5.0 * mf;
    let (value, branch) = if raw <= boundary {
        (curve.corrected(raw), EstimatorBranch::BiasCorrected)
    } else {
        (raw.max(curve.corrected(boundary)), EstimatorBranch::Raw)
    };
    // Past the linear-counting region the estimate never falls back below its cut-over.
    (value.max(threshold), branch)
}

fn packed_len(registers: usize) -> usize {
    (registers * 6).div_ceil(8)
}

fn pack_registers(registers: &[u8], out: &mut Vec<u8>) {
    let mut acc: u32 = 0;
    let mut bits = 0;
    for &r in registers {
        acc |= (r as u32 & 0x3F) << bits;
        bits += 6;
        while bits >= 8 {
            out.push(acc as u8);
            acc >>= 8;
            bits -= 8;
        }
    }
    if bits > 0 {
        out.push(acc as u8);
    }
}

fn unpack_registers(packed: &[u8], m: usize) -> Vec<u8> {
    let mut registers = Vec::with_capacity(m);
    let mut acc: u32 = 0;
    let mut bits = 0;
    let mut bytes = packed.iter();
    while registers.len() < m {
        while bits < 6 {
            acc |= (*bytes.next().unwrap_or(&0) as u32) << bits;
            bits += 8;
        }
        registers.push((acc & 0x3F) as u8);
        acc >>= 6;
        bits -= 6;
    }
    registers
}
