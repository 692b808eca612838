//! Bit-exact integer range coder.
//!
//! A carry-less, byte-renormalizing range coder with a 32-bit state and
//! 16-bit probability precision. Symbols are coded against quantized CDF
//! tables ([`CdfTable`]) whose frequencies always sum to exactly `2^16` and
//! are strictly positive, so every symbol of the alphabet stays codable.
//! The coder uses nothing but integer arithmetic; its output is identical
//! on every platform.
//!
//! The stream framing (flush discipline, length prefixes) is documented in
//! `docs/bitstream.md`.

use crate::error::{Error, Result};

/// Number of bits of probability precision.
pub const PROB_BITS: u32 = 16;
/// Total frequency of every CDF table: `2^16`.
pub const PROB_TOTAL: u32 = 1 << PROB_BITS;

const TOP: u32 = 1 << 24;
const BOT: u32 = 1 << 16;

/// Quantized cumulative frequency table over a finite symbol alphabet.
///
/// `cdf` has `alphabet + 1` entries, starts at 0, ends at exactly
/// [`PROB_TOTAL`], and is strictly increasing (every symbol has frequency
/// at least 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdfTable {
    cdf: Vec<u32>,
}

impl CdfTable {
    /// Quantizes real probabilities to 16-bit integer frequencies by
    /// largest-remainder rounding, with every symbol floored at one count.
    ///
    /// The input must be nonnegative with a sum within `1e-3` of 1. Ties in
    /// the remainder ranking are broken toward the smaller symbol index so
    /// the result is deterministic.
    pub fn from_probabilities(probs: &[f64]) -> Result<CdfTable> {
        let n = probs.len();
        if n == 0 || n > PROB_TOTAL as usize {
            return Err(Error::InvalidConfig(format!(
                "cdf alphabet size {n} out of range [1, {PROB_TOTAL}]"
            )));
        }
        let mut sum = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "probability {i} is not a finite nonnegative number"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-3 {
            return Err(Error::InvalidConfig(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }

        let total = PROB_TOTAL as u64;
        let mut counts: Vec<u64> = Vec::with_capacity(n);
        let mut ideals: Vec<f64> = Vec::with_capacity(n);
        let mut assigned: u64 = 0;
        for &p in probs {
            let ideal = p / sum * total as f64;
            let c = (ideal.floor() as u64).max(1);
            ideals.push(ideal);
            counts.push(c);
            assigned += c;
        }

        if assigned < total {
            // Hand out the deficit by descending remainder, smaller index
            // first on ties. Repeat passes if the deficit exceeds the
            // alphabet size.
            let mut deficit = total - assigned;
            let mut order: Vec<usize> = (0..n).collect();
            while deficit > 0 {
                order.sort_by(|&a, &b| {
                    let ra = ideals[a] - counts[a] as f64;
                    let rb = ideals[b] - counts[b] as f64;
                    rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
                });
                for &i in &order {
                    if deficit == 0 {
                        break;
                    }
                    counts[i] += 1;
                    deficit -= 1;
                }
            }
        } else if assigned > total {
            // Claw back the excess from the symbols that are furthest above
            // their ideal share, never going below one count.
            let mut excess = assigned - total;
            let mut order: Vec<usize> = (0..n).collect();
            while excess > 0 {
                order.sort_by(|&a, &b| {
                    let ra = counts[a] as f64 - ideals[a];
                    let rb = counts[b] as f64 - ideals[b];
                    rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
                });
                let before = excess;
                for &i in &order {
                    if excess == 0 {
                        break;
                    }
                    if counts[i] > 1 {
                        counts[i] -= 1;
                        excess -= 1;
                    }
                }
                if excess == before {
                    return Err(Error::InvalidConfig(
                        "cannot quantize cdf: alphabet too large for total".into(),
                    ));
                }
            }
        }

        let mut cdf = Vec::with_capacity(n + 1);
        let mut acc = 0u32;
        cdf.push(0);
        for &c in &counts {
            acc += c as u32;
            cdf.push(acc);
        }
        debug_assert_eq!(*cdf.last().unwrap(), PROB_TOTAL);
        Ok(CdfTable { cdf })
    }

    /// Builds a table directly from integer frequencies (must sum to 2^16).
    pub fn from_frequencies(freqs: &[u32]) -> Result<CdfTable> {
        let mut cdf = Vec::with_capacity(freqs.len() + 1);
        let mut acc: u64 = 0;
        cdf.push(0);
        for &f in freqs {
            if f == 0 {
                return Err(Error::InvalidConfig("zero frequency in cdf".into()));
            }
            acc += f as u64;
            cdf.push(acc as u32);
        }
        if acc != PROB_TOTAL as u64 {
            return Err(Error::InvalidConfig(format!(
                "frequencies sum to {acc}, expected {PROB_TOTAL}"
            )));
        }
        Ok(CdfTable { cdf })
    }

    /// Number of symbols in the alphabet.
    pub fn alphabet(&self) -> usize {
        self.cdf.len() - 1
    }

    /// Start and frequency of `symbol`.
    #[inline]
    pub fn span(&self, symbol: usize) -> (u32, u32) {
        let start = self.cdf[symbol];
        (start, self.cdf[symbol + 1] - start)
    }

    /// Frequency of `symbol` (for rate accounting).
    pub fn freq(&self, symbol: usize) -> u32 {
        self.cdf[symbol + 1] - self.cdf[symbol]
    }

    /// Largest symbol whose cumulative start is `<= target`.
    #[inline]
    fn lookup(&self, target: u32) -> usize {
        // Binary search over the strictly increasing cdf.
        let mut lo = 0usize;
        let mut hi = self.cdf.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.cdf[mid] <= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

/// A coded payload plus the number of symbols it contains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedStream {
    pub bytes: Vec<u8>,
    pub symbol_count: usize,
}

/// Streaming range encoder.
pub struct RangeEncoder {
    low: u32,
    range: u32,
    out: Vec<u8>,
    symbols: usize,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            out: Vec::new(),
            symbols: 0,
        }
    }

    /// Codes one symbol under `table`.
    pub fn encode(&mut self, symbol: usize, table: &CdfTable) -> Result<()> {
        if symbol >= table.alphabet() {
            return Err(Error::OutOfAlphabet {
                index: self.symbols,
            });
        }
        let (start, freq) = table.span(symbol);
        self.range /= PROB_TOTAL;
        self.low = self.low.wrapping_add(start * self.range);
        self.range *= freq;
        self.normalize();
        self.symbols += 1;
        Ok(())
    }

    #[inline]
    fn normalize(&mut self) {
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOT {
                    break;
                }
                // The interval straddles a carry boundary but is too small
                // to settle the top byte; pin it below the boundary.
                self.range = self.low.wrapping_neg() & (BOT - 1);
            }
            self.out.push((self.low >> 24) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    /// Flushes the state and returns the finished stream.
    pub fn finish(mut self) -> EncodedStream {
        for _ in 0..4 {
            self.out.push((self.low >> 24) as u8);
            self.low <<= 8;
        }
        EncodedStream {
            bytes: self.out,
            symbol_count: self.symbols,
        }
    }
}

/// Streaming range decoder over a byte slice.
pub struct RangeDecoder<'a> {
    low: u32,
    range: u32,
    code: u32,
    input: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Result<Self> {
        let mut dec = RangeDecoder {
            low: 0,
            range: u32::MAX,
            code: 0,
            input,
            pos: 0,
        };
        for _ in 0..4 {
            dec.code = (dec.code << 8) | dec.next_byte()? as u32;
        }
        Ok(dec)
    }

    #[inline]
    fn next_byte(&mut self) -> Result<u8> {
        let b = *self
            .input
            .get(self.pos)
            .ok_or(Error::Truncated("range-coded payload"))?;
        self.pos += 1;
        Ok(b)
    }

    /// Decodes one symbol under `table`. The table must be bit-identical to
    /// the one used at encode time.
    pub fn decode(&mut self, table: &CdfTable) -> Result<usize> {
        self.range /= PROB_TOTAL;
        let target = (self.code.wrapping_sub(self.low) / self.range).min(PROB_TOTAL - 1);
        let symbol = table.lookup(target);
        let (start, freq) = table.span(symbol);
        self.low = self.low.wrapping_add(start * self.range);
        self.range *= freq;
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOT {
                    break;
                }
                self.range = self.low.wrapping_neg() & (BOT - 1);
            }
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.low <<= 8;
            self.range <<= 8;
        }
        Ok(symbol)
    }

    /// Bytes consumed so far (including the 4-byte preload).
    pub fn consumed(&self) -> usize {
        self.pos
    }
}

/// Codes `symbols[i]` under `tables[i]`.
pub fn encode_symbols(symbols: &[usize], tables: &[&CdfTable]) -> Result<EncodedStream> {
    assert_eq!(symbols.len(), tables.len());
    let mut enc = RangeEncoder::new();
    for (&s, &t) in symbols.iter().zip(tables) {
        enc.encode(s, t)?;
    }
    Ok(enc.finish())
}

/// Exact inverse of [`encode_symbols`] given the same table sequence.
pub fn decode_symbols(stream: &EncodedStream, tables: &[&CdfTable]) -> Result<Vec<usize>> {
    let mut dec = RangeDecoder::new(&stream.bytes)?;
    let mut out = Vec::with_capacity(tables.len());
    for &t in tables {
        out.push(dec.decode(t)?);
    }
    Ok(out)
}
