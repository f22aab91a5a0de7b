//! Canonical prefix coding of signed integer symbol streams.
//!
//! A coded section is laid out little-endian as
//!
//! ```text
//! u32 symbol count
//! u16 table entries
//! entries × (i16 symbol, u8 code length)   sorted by (length, symbol)
//! payload, MSB-first, zero-padded to a byte boundary
//! ```
//!
//! A stream with a single distinct symbol stores one entry of length 0 and
//! no payload at all; the decoder rebuilds it from the count.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use crate::error::{Error, Result};

pub const MAX_CODE_LEN: u8 = 32;
const ENTRY_BYTES: usize = 3;
const SECTION_HEADER_BYTES: usize = 6;

/// Bit accounting for one encoded section.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SectionStats {
    pub symbols: u64,
    /// Bits spent on codewords alone.
    pub code_bits: u64,
    /// Everything else: count, table, and final-byte padding.
    pub header_bits: u64,
}

impl SectionStats {
    pub fn total_bits(&self) -> u64 {
        self.code_bits + self.header_bits
    }
}

fn histogram(symbols: &[i32]) -> Result<BTreeMap<i32, u64>> {
    let mut hist = BTreeMap::new();
    for &s in symbols {
        if !(i16::MIN as i32..=i16::MAX as i32).contains(&s) {
            return Err(Error::domain(format!(
                "symbol {s} outside the 16-bit range"
            )));
        }
        *hist.entry(s).or_insert(0u64) += 1;
    }
    Ok(hist)
}

/// Huffman code lengths for `weights` (all nonzero), in input order.
fn huffman_lengths(weights: &[u64]) -> Vec<u8> {
    let n = weights.len();
    if n == 1 {
        return vec![0];
    }
    // Nodes 0..n are leaves; parents are appended as they are created so the
    // id doubles as a deterministic tie-breaker.
    let mut parent = vec![usize::MAX; 2 * n - 1];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| Reverse((w, i)))
        .collect();
    let mut next = n;
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().unwrap();
        let Reverse((wb, b)) = heap.pop().unwrap();
        parent[a] = next;
        parent[b] = next;
        heap.push(Reverse((wa + wb, next)));
        next += 1;
    }
    let root = next - 1;
    let mut depth = vec![0u32; 2 * n - 1];
    for node in (0..root).rev() {
        depth[node] = depth[parent[node]] + 1;
    }
    depth[..n].iter().map(|&d| d.min(255) as u8).collect()
}

/// Code lengths bounded by [`MAX_CODE_LEN`]; flattens the histogram until the
/// tree is shallow enough, which only happens for extremely skewed inputs.
fn bounded_lengths(weights: &[u64]) -> Vec<u8> {
    let mut w = weights.to_vec();
    loop {
        let lengths = huffman_lengths(&w);
        if lengths.iter().all(|&l| l <= MAX_CODE_LEN) {
            return lengths;
        }
        for v in w.iter_mut() {
            *v = (*v >> 1).max(1);
        }
    }
}

/// `(symbol, length)` pairs in canonical order with their codewords.
fn canonical_codes(table: &[(i32, u8)]) -> Vec<(i32, u8, u32)> {
    let mut sorted = table.to_vec();
    sorted.sort_by_key(|&(s, l)| (l, s));
    let mut out = Vec::with_capacity(sorted.len());
    let mut code: u64 = 0;
    let mut prev_len = sorted.first().map(|e| e.1).unwrap_or(0);
    for (i, &(s, l)) in sorted.iter().enumerate() {
        if i > 0 {
            code = (code + 1) << (l - prev_len);
        }
        prev_len = l;
        out.push((s, l, code as u32));
    }
    out
}

struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    nbits: u32,
}

impl BitWriter {
    fn new(bytes: Vec<u8>) -> Self {
        Self {
            bytes,
            acc: 0,
            nbits: 0,
        }
    }

    fn put(&mut self, code: u32, len: u8) {
        self.acc = (self.acc << len) | code as u64;
        self.nbits += len as u32;
        while self.nbits >= 8 {
            self.nbits -= 8;
            self.bytes.push((self.acc >> self.nbits) as u8);
        }
        self.acc &= (1u64 << self.nbits) - 1;
    }

    fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            self.bytes.push((self.acc << (8 - self.nbits)) as u8);
        }
        self.bytes
    }
}

/// Encodes `symbols` into one coded section.
pub fn entropy_encode(symbols: &[i32]) -> Result<Vec<u8>> {
    entropy_encode_with_stats(symbols).map(|(bytes, _)| bytes)
}

pub fn entropy_encode_with_stats(symbols: &[i32]) -> Result<(Vec<u8>, SectionStats)> {
    let count = u32::try_from(symbols.len())
        .map_err(|_| Error::domain("symbol stream longer than u32::MAX"))?;
    let hist = histogram(symbols)?;
    if hist.len() > u16::MAX as usize {
        return Err(Error::domain(format!(
            "{} distinct symbols exceed the table limit",
            hist.len()
        )));
    }
    let syms: Vec<i32> = hist.keys().copied().collect();
    let weights: Vec<u64> = hist.values().copied().collect();
    let lengths = if syms.is_empty() {
        Vec::new()
    } else {
        bounded_lengths(&weights)
    };
    let table: Vec<(i32, u8)> = syms.iter().copied().zip(lengths).collect();
    let codes = canonical_codes(&table);

    let mut bytes = Vec::with_capacity(SECTION_HEADER_BYTES + codes.len() * ENTRY_BYTES);
    bytes.extend_from_slice(&count.to_le_bytes());
    bytes.extend_from_slice(&(codes.len() as u16).to_le_bytes());
    for &(s, l, _) in &codes {
        bytes.extend_from_slice(&(s as i16).to_le_bytes());
        bytes.push(l);
    }
    let header_len = bytes.len();

    let lookup: BTreeMap<i32, (u32, u8)> = codes.iter().map(|&(s, l, c)| (s, (c, l))).collect();
    let mut code_bits = 0u64;
    let mut writer = BitWriter::new(bytes);
    if codes.len() > 1 {
        for s in symbols {
            let (c, l) = lookup[s];
            writer.put(c, l);
            code_bits += l as u64;
        }
    }
    let bytes = writer.finish();
    let stats = SectionStats {
        symbols: symbols.len() as u64,
        code_bits,
        header_bits: 8 * bytes.len() as u64 - code_bits,
    };
    debug_assert!(stats.header_bits >= 8 * header_len as u64);
    Ok((bytes, stats))
}

struct CanonicalDecoder {
    /// Number of codes of each length, index = length.
    counts: [u32; MAX_CODE_LEN as usize + 1],
    /// Symbols in canonical order.
    symbols: Vec<i32>,
}

impl CanonicalDecoder {
    fn new(table: &[(i32, u8)]) -> Result<Self> {
        let mut counts = [0u32; MAX_CODE_LEN as usize + 1];
        for &(_, l) in table {
            if l == 0 || l > MAX_CODE_LEN {
                return Err(Error::format(format!("invalid code length {l}")));
            }
            counts[l as usize] += 1;
        }
        // Reject oversubscribed tables (Kraft sum above one).
        let mut left: i64 = 1;
        for &c in &counts[1..] {
            left = left * 2 - c as i64;
            if left < 0 {
                return Err(Error::format("oversubscribed code-length table"));
            }
        }
        let mut sorted = table.to_vec();
        sorted.sort_by_key(|&(s, l)| (l, s));
        if sorted != table {
            return Err(Error::format("code-length table is not in canonical order"));
        }
        if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::format("duplicate symbol in code-length table"));
        }
        Ok(Self {
            counts,
            symbols: sorted.into_iter().map(|(s, _)| s).collect(),
        })
    }

    fn decode_one(&self, reader: &mut BitReader) -> Result<i32> {
        let mut code: i64 = 0;
        let mut first: i64 = 0;
        let mut index: i64 = 0;
        for len in 1..=MAX_CODE_LEN as usize {
            code |= reader.bit()? as i64;
            let count = self.counts[len] as i64;
            if code - first < count {
                return Ok(self.symbols[(index + code - first) as usize]);
            }
            index += count;
            first = (first + count) << 1;
            code <<= 1;
        }
        Err(Error::format("invalid codeword in payload"))
    }
}

struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
    bit: u8,
}

impl BitReader<'_> {
    fn bit(&mut self) -> Result<u8> {
        let byte = *self
            .data
            .get(self.pos)
            .ok_or_else(|| Error::format("truncated bitstream"))?;
        let b = (byte >> (7 - self.bit)) & 1;
        self.bit += 1;
        if self.bit == 8 {
            self.bit = 0;
            self.pos += 1;
        }
        Ok(b)
    }

    fn consumed(&self) -> usize {
        self.pos + usize::from(self.bit > 0)
    }
}

fn take(data: &[u8], at: usize, n: usize) -> Result<&[u8]> {
    data.get(at..at + n)
        .ok_or_else(|| Error::format("truncated section header"))
}

/// Decodes one section from the front of `data`, returning the symbols and
/// the number of bytes consumed. `max_symbols` bounds the declared count.
pub fn entropy_decode_prefix(data: &[u8], max_symbols: usize) -> Result<(Vec<i32>, usize)> {
    let count = u32::from_le_bytes(take(data, 0, 4)?.try_into().unwrap()) as usize;
    let entries = u16::from_le_bytes(take(data, 4, 2)?.try_into().unwrap()) as usize;
    if count > max_symbols {
        return Err(Error::format(format!(
            "section declares {count} symbols, at most {max_symbols} allowed"
        )));
    }
    let raw_table = take(data, SECTION_HEADER_BYTES, entries * ENTRY_BYTES)?;
    let table: Vec<(i32, u8)> = raw_table
        .chunks_exact(ENTRY_BYTES)
        .map(|e| (i16::from_le_bytes([e[0], e[1]]) as i32, e[2]))
        .collect();
    let payload_at = SECTION_HEADER_BYTES + entries * ENTRY_BYTES;

    match (count, table.as_slice()) {
        (0, []) => return Ok((Vec::new(), payload_at)),
        (0, _) => return Err(Error::format("empty stream with a nonempty table")),
        (_, []) => return Err(Error::format("symbols declared without a code table")),
        (_, [(s, 0)]) => return Ok((vec![*s; count], payload_at)),
        _ => {}
    }
    let decoder = CanonicalDecoder::new(&table)?;
    let payload = &data[payload_at..];
    if count > payload.len().saturating_mul(8) {
        return Err(Error::format("truncated bitstream"));
    }
    let mut reader = BitReader {
        data: payload,
        pos: 0,
        bit: 0,
    };
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(decoder.decode_one(&mut reader)?);
    }
    Ok((out, payload_at + reader.consumed()))
}

/// Decodes a buffer holding exactly one section.
pub fn entropy_decode(data: &[u8]) -> Result<Vec<i32>> {
    let (symbols, used) = entropy_decode_prefix(data, u32::MAX as usize)?;
    if used != data.len() {
        return Err(Error::format(format!(
            "{} trailing bytes after section",
            data.len() - used
        )));
    }
    Ok(symbols)
}

/// Empirical Shannon entropy of the symbol histogram, in bits per symbol.
pub fn entropy_bound(symbols: &[i32]) -> Result<f64> {
    if symbols.is_empty() {
        return Err(Error::domain("entropy of an empty stream"));
    }
    let mut hist: BTreeMap<i32, u64> = BTreeMap::new();
    for &s in symbols {
        *hist.entry(s).or_insert(0) += 1;
    }
    let n = symbols.len() as f64;
    let h = hist
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}
