use super::{FilterError, FilterParams, Fingerprint, SubFilterId};

/// Relocations attempted before an insert gives up and asks for a split.
pub const MAX_KICKS: usize = 500;

const MAGIC: &[u8; 4] = b"SGXF";
const RECORD_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Stored,
    /// The filter is at its split threshold or eviction failed. The filter
    /// is left exactly as it was before the call.
    NeedsSplit,
}

/// One cuckoo filter of the LDCF: `m` buckets of `b` slots.
///
/// Slots hold the full fingerprint in memory (0 marks an empty slot, which no
/// fingerprint can equal). The at-rest record stores only the suffix below
/// the sub-filter's prefix.
#[derive(Clone, PartialEq, Eq)]
pub struct SubFilter {
    params: FilterParams,
    id: SubFilterId,
    slots: Vec<u32>,
    count: usize,
}

impl std::fmt::Debug for SubFilter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubFilter")
            .field("id", &self.id)
            .field("params", &self.params)
            .field("count", &self.count)
            .finish()
    }
}

impl SubFilter {
    pub fn new(params: FilterParams, id: SubFilterId) -> Self {
        debug_assert!(id.len() <= params.max_level());
        SubFilter {
            params,
            id,
            slots: vec![0; params.capacity()],
            count: 0,
        }
    }

    pub fn params(&self) -> FilterParams {
        self.params
    }

    pub fn id(&self) -> SubFilterId {
        self.id
    }

    pub fn level(&self) -> u8 {
        self.id.len()
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Width of a stored suffix in bits.
    pub fn suffix_bits(&self) -> u8 {
        self.params.fingerprint_bits() - self.level()
    }

    fn mask(&self) -> u32 {
        self.params.bucket_count() - 1
    }

    fn check_prefix(&self, fp: Fingerprint) -> Result<(), FilterError> {
        if self.id.is_prefix_of(fp, self.params.fingerprint_bits()) {
            Ok(())
        } else {
            Err(FilterError::PrefixMismatch {
                prefix: self.id,
                fingerprint: fp.value(),
            })
        }
    }

    /// Primary and alternate bucket of `fp` given the caller's raw index.
    pub fn buckets(&self, fp: Fingerprint, bucket_hint: u32) -> (usize, usize) {
        let primary = bucket_hint & self.mask();
        let alternate = primary ^ (fp.alt_hash() & self.mask());
        (primary as usize, alternate as usize)
    }

    fn alternate(&self, bucket: usize, fp: Fingerprint) -> usize {
        bucket ^ (fp.alt_hash() & self.mask()) as usize
    }

    fn bucket(&self, index: usize) -> &[u32] {
        let b = self.params.bucket_size() as usize;
        &self.slots[index * b..(index + 1) * b]
    }

    fn try_place(&mut self, bucket: usize, fp: Fingerprint) -> bool {
        let b = self.params.bucket_size() as usize;
        match self.slots[bucket * b..(bucket + 1) * b].iter_mut().find(|s| **s == 0) {
            Some(slot) => {
                *slot = fp.value();
                self.count += 1;
                true
            }
            None => false,
        }
    }

    pub fn insert(&mut self, fp: Fingerprint, bucket_hint: u32) -> Result<InsertOutcome, FilterError> {
        self.check_prefix(fp)?;
        if self.count >= self.params.split_threshold() {
            return Ok(InsertOutcome::NeedsSplit);
        }
        let (primary, alternate) = self.buckets(fp, bucket_hint);
        if self.try_place(primary, fp) || self.try_place(alternate, fp) {
            return Ok(InsertOutcome::Stored);
        }

        let b = self.params.bucket_size() as usize;
        let mut rng = XorShift::new(fp.value() as u64 ^ ((self.count as u64) << 32));
        let mut carry = fp.value();
        let mut bucket = if rng.next() & 1 == 0 { primary } else { alternate };
        let mut path = Vec::with_capacity(MAX_KICKS);
        for _ in 0..MAX_KICKS {
            let index = bucket * b + (rng.next() as usize % b);
            std::mem::swap(&mut self.slots[index], &mut carry);
            path.push(index);
            let evicted = Fingerprint(carry);
            bucket = self.alternate(bucket, evicted);
            if self.try_place(bucket, evicted) {
                return Ok(InsertOutcome::Stored);
            }
        }
        // Unwind the relocation chain so the filter is untouched.
        for &index in path.iter().rev() {
            std::mem::swap(&mut self.slots[index], &mut carry);
        }
        debug_assert_eq!(carry, fp.value());
        Ok(InsertOutcome::NeedsSplit)
    }

    pub fn contains(&self, fp: Fingerprint, bucket_hint: u32) -> Result<bool, FilterError> {
        self.check_prefix(fp)?;
        let (primary, alternate) = self.buckets(fp, bucket_hint);
        let v = fp.value();
        Ok(self.bucket(primary).contains(&v) || self.bucket(alternate).contains(&v))
    }

    /// Clears one slot holding `fp`, if any.
    pub fn remove(&mut self, fp: Fingerprint, bucket_hint: u32) -> Result<bool, FilterError> {
        self.check_prefix(fp)?;
        let (primary, alternate) = self.buckets(fp, bucket_hint);
        let b = self.params.bucket_size() as usize;
        for bucket in [primary, alternate] {
            let range = bucket * b..(bucket + 1) * b;
            if let Some(slot) = self.slots[range].iter_mut().find(|s| **s == fp.value()) {
                *slot = 0;
                self.count -= 1;
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Splits into the `prefix||0` and `prefix||1` children. Each item keeps
    /// its bucket index, which stays one of its two candidates because the
    /// children share the parent's bucket count.
    pub fn split(&self) -> Result<(SubFilter, SubFilter), FilterError> {
        if self.level() >= self.params.max_level() {
            return Err(FilterError::MaxDepthReached(self.id));
        }
        let bits = self.params.fingerprint_bits();
        let mut children = [
            SubFilter::new(self.params, self.id.child(0)),
            SubFilter::new(self.params, self.id.child(1)),
        ];
        for (index, &v) in self.slots.iter().enumerate() {
            if v != 0 {
                let child = &mut children[Fingerprint(v).bit(self.level(), bits) as usize];
                child.slots[index] = v;
                child.count += 1;
            }
        }
        let [left, right] = children;
        Ok((left, right))
    }

    /// Occupied slots as `(bucket, fingerprint)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, Fingerprint)> + '_ {
        let b = self.params.bucket_size() as usize;
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(move |(i, &v)| (i / b, Fingerprint(v)))
    }

    /// Stored suffixes (fingerprint bits below the prefix), slot order.
    pub fn stored_suffixes(&self) -> impl Iterator<Item = u32> + '_ {
        let mask = suffix_mask(self.suffix_bits());
        self.slots.iter().filter(|&&v| v != 0).map(move |&v| v & mask)
    }

    /// Size of the at-rest record in bytes.
    pub fn record_len(&self) -> usize {
        record_len(self.params, self.level())
    }

    /// Encodes the at-rest record:
    ///
    /// ```text
    /// "SGXF" | version u8 | bits u8 | level u8 | prefix (ceil(level/8) bytes)
    /// | m u32 | b u8 | count u32 | m*b suffixes of ceil((bits-level)/8) bytes
    /// | occupancy bitmap of ceil(m*b/8) bytes, slot k at bit 7-(k%8) of byte k/8
    /// ```
    ///
    /// All integers are big-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let width = suffix_width(self.params, self.level());
        let mask = suffix_mask(self.suffix_bits());
        let mut out = Vec::with_capacity(self.record_len());
        out.extend_from_slice(MAGIC);
        out.push(RECORD_VERSION);
        out.push(self.params.fingerprint_bits());
        out.push(self.level());
        out.extend_from_slice(&self.id.to_packed());
        out.extend_from_slice(&self.params.bucket_count().to_be_bytes());
        out.push(self.params.bucket_size());
        out.extend_from_slice(&(self.count as u32).to_be_bytes());
        for &v in &self.slots {
            out.extend_from_slice(&(v & mask).to_be_bytes()[4 - width..]);
        }
        let mut bitmap = vec![0u8; self.slots.len().div_ceil(8)];
        for (k, &v) in self.slots.iter().enumerate() {
            if v != 0 {
                bitmap[k / 8] |= 0x80 >> (k % 8);
            }
        }
        out.extend_from_slice(&bitmap);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FilterError> {
        let (filter, used) = Self::decode_prefix(bytes)?;
        if used != bytes.len() {
            return Err(malformed("trailing bytes after record"));
        }
        Ok(filter)
    }

    /// Decodes one record from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn decode_prefix(bytes: &[u8]) -> Result<(Self, usize), FilterError> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(malformed("bad magic"));
        }
        if r.u8()? != RECORD_VERSION {
            return Err(malformed("unsupported version"));
        }
        let bits = r.u8()?;
        let level = r.u8()?;
        if !(4..=32).contains(&bits) || level >= bits {
            return Err(malformed("bad fingerprint width or level"));
        }
        let id = SubFilterId::from_packed(level, r.take((level as usize).div_ceil(8))?)?;
        let m = r.u32()?;
        let b = r.u8()?;
        let params = FilterParams::from_shape(bits, m, b).map_err(|e| malformed(&e.to_string()))?;
        let count = r.u32()? as usize;
        let width = suffix_width(params, level);
        let nslots = params.capacity();
        let raw = r.take(nslots * width)?;
        let bitmap = r.take(nslots.div_ceil(8))?;

        let suffix_bits = bits - level;
        let prefix_part = if level == 0 { 0 } else { id.bits() << suffix_bits };
        let mut slots = vec![0u32; nslots];
        let mut occupied = 0;
        for (k, chunk) in raw.chunks_exact(width).enumerate() {
            let suffix = chunk.iter().fold(0u32, |acc, &x| (acc << 8) | x as u32);
            let present = bitmap[k / 8] & (0x80 >> (k % 8)) != 0;
            if suffix & !suffix_mask(suffix_bits) != 0 {
                return Err(malformed("suffix wider than its field"));
            }
            if !present {
                if suffix != 0 {
                    return Err(malformed("empty slot with non-zero suffix"));
                }
                continue;
            }
            let fp = prefix_part | suffix;
            if fp == 0 {
                return Err(malformed("zero fingerprint"));
            }
            slots[k] = fp;
            occupied += 1;
        }
        let trailing = nslots % 8;
        if trailing != 0 && bitmap[bitmap.len() - 1] & (0xff >> trailing) != 0 {
            return Err(malformed("bitmap padding set"));
        }
        if occupied != count {
            return Err(malformed("count does not match occupied slots"));
        }
        Ok((SubFilter { params, id, slots, count }, r.pos))
    }
}

fn suffix_mask(bits: u8) -> u32 {
    if bits >= 32 {
        u32::MAX
    } else {
        (1u32 << bits) - 1
    }
}

fn suffix_width(params: FilterParams, level: u8) -> usize {
    (params.fingerprint_bits() - level).div_ceil(8) as usize
}

/// Record size for a sub-filter of this shape at `level`.
pub fn record_len(params: FilterParams, level: u8) -> usize {
    let header = 4 + 1 + 1 + 1 + (level as usize).div_ceil(8) + 4 + 1 + 4;
    header + params.capacity() * suffix_width(params, level) + params.capacity().div_ceil(8)
}

fn malformed(msg: &str) -> FilterError {
    FilterError::MalformedRecord(msg.to_owned())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FilterError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| malformed("truncated record"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, FilterError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, FilterError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Deterministic slot picker for evictions.
struct XorShift(u64);

impl XorShift {
    fn new(seed: u64) -> Self {
        XorShift(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1)
    }

    fn next(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }
}
