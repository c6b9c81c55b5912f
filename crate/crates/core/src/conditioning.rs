//! Raw bits to uniform key material: Von Neumann debiasing, hash
//! condensation to 256 bits and two-source hybrid mixing.

use hkdf::Hkdf;
use sha2::{Digest, Sha256};
use zeroize::{Zeroize, ZeroizeOnDrop, Zeroizing};

use crate::bits::BitBuf;
use crate::entropy_source::{BitSupply, RawBitstream};
use crate::error::{Error, Result};

pub const TAG_MASTER: &str = "QEAES-v1/master";
pub const TAG_WHITEN: &str = "QEAES-v1/whiten";
pub const TAG_MIX: &str = "QEAES-v1/mix";
pub const TAG_MAC: &str = "QEAES-v1/mac";

/// Master key (32) plus fifteen 16-byte whitening segments.
pub const HYBRID_SEED_LEN: usize = 32 + 240;
const HKDF_MAX_OUT: usize = 255 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extraction {
    VonNeumann,
    None,
}

#[derive(Debug, Clone)]
pub struct ConditionedEntropy {
    pub bits: BitBuf,
    pub source_bits_consumed: usize,
    pub extraction: Extraction,
    pub est_min_entropy_per_bit: f64,
}

impl ConditionedEntropy {
    /// Wraps bits that need no extraction (already uniform by construction).
    pub fn passthrough(bits: BitBuf) -> Self {
        let consumed = bits.len();
        let est = per_bit_min_entropy(&bits);
        Self {
            bits,
            source_bits_consumed: consumed,
            extraction: Extraction::None,
            est_min_entropy_per_bit: est,
        }
    }

    pub fn bytes(&self) -> &[u8] {
        self.bits.as_bytes()
    }
}

/// `-log2(max(p, 1-p))` for the empirical ones-frequency `p`; zero when empty.
pub(crate) fn per_bit_min_entropy(bits: &BitBuf) -> f64 {
    if bits.is_empty() {
        return 0.0;
    }
    let p = bits.count_ones() as f64 / bits.len() as f64;
    let h = -p.max(1.0 - p).log2();
    h.clamp(0.0, 1.0)
}

// For each input byte: the extracted bits (right-aligned) and how many there are.
const VN_TABLE: [(u8, u8); 256] = {
    let mut t = [(0u8, 0u8); 256];
    let mut b = 0;
    while b < 256 {
        let mut out = 0u8;
        let mut n = 0u8;
        let mut pair = 0;
        while pair < 4 {
            let hi = (b >> (7 - 2 * pair)) & 1;
            let lo = (b >> (6 - 2 * pair)) & 1;
            if hi != lo {
                // 01 -> 0, 10 -> 1: the first bit of the pair
                out = (out << 1) | hi as u8;
                n += 1;
            }
            pair += 1;
        }
        t[b] = (out, n);
        b += 1;
    }
    t
};

/// Von Neumann extraction over consecutive pairs: 01 -> 0, 10 -> 1, 00 and
/// 11 dropped. A trailing odd bit is discarded.
pub fn von_neumann_extract(raw: &RawBitstream) -> Result<ConditionedEntropy> {
    von_neumann_bits(&raw.bits)
}

pub fn von_neumann_bits(input: &BitBuf) -> Result<ConditionedEntropy> {
    let n = input.len();
    if n < 2 {
        return Err(Error::InsufficientInput(n));
    }
    let mut out = BitBuf::with_capacity(n / 4 + 8);
    let bytes = input.as_bytes();
    let whole = n / 8;

    let mut acc: u64 = 0;
    let mut acc_len = 0u32;
    for &b in &bytes[..whole] {
        let (v, k) = VN_TABLE[b as usize];
        acc = (acc << k) | v as u64;
        acc_len += k as u32;
        if acc_len >= 32 {
            let spill = acc_len - 32;
            let word = (acc >> spill) as u32;
            out.extend_from_bytes(&word.to_be_bytes(), 32);
            acc &= (1u64 << spill) - 1;
            acc_len = spill;
        }
    }
    if acc_len > 0 {
        let word = acc << (64 - acc_len);
        out.extend_from_bytes(&word.to_be_bytes(), acc_len as usize);
    }
    let mut i = whole * 8;
    while i + 1 < n {
        let (a, b) = (input.get(i), input.get(i + 1));
        if a != b {
            out.push(a);
        }
        i += 2;
    }

    let est = per_bit_min_entropy(&out);
    Ok(ConditionedEntropy {
        bits: out,
        source_bits_consumed: n,
        extraction: Extraction::VonNeumann,
        est_min_entropy_per_bit: est,
    })
}

/// SHA-256(`domain_tag` || 0x00 || bytes). A partial final byte is hashed
/// zero-padded.
pub fn condense(entropy: &ConditionedEntropy, domain_tag: &str) -> Result<[u8; 32]> {
    condense_bytes(entropy.bytes(), domain_tag)
}

pub fn condense_bytes(bytes: &[u8], domain_tag: &str) -> Result<[u8; 32]> {
    if bytes.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut h = Sha256::new();
    h.update(domain_tag.as_bytes());
    h.update([0u8]);
    h.update(bytes);
    Ok(h.finalize().into())
}

#[derive(Clone, Zeroize, ZeroizeOnDrop)]
pub struct HybridSeed {
    pub e_quantum: Vec<u8>,
    pub e_classical: Vec<u8>,
    pub mixed: Vec<u8>,
}

impl std::fmt::Debug for HybridSeed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HybridSeed")
            .field("mixed_len", &self.mixed.len())
            .finish_non_exhaustive()
    }
}

/// HKDF-SHA-256 with salt `QEAES-v1/mix`, IKM `e_q || e_c`, info `context`.
pub fn mix_hybrid(e_q: &[u8], e_c: &[u8], context: &str, out_len: usize) -> Result<HybridSeed> {
    if e_q.is_empty() || e_c.is_empty() {
        return Err(Error::EmptyInput);
    }
    if out_len > HKDF_MAX_OUT {
        return Err(Error::OutputTooLong {
            requested: out_len,
            limit: HKDF_MAX_OUT,
        });
    }
    let mut ikm = Zeroizing::new(Vec::with_capacity(e_q.len() + e_c.len()));
    ikm.extend_from_slice(e_q);
    ikm.extend_from_slice(e_c);
    let hk = Hkdf::<Sha256>::new(Some(TAG_MIX.as_bytes()), &ikm);
    let mut mixed = vec![0u8; out_len];
    hk.expand(context.as_bytes(), &mut mixed)
        .map_err(|_| Error::OutputTooLong {
            requested: out_len,
            limit: HKDF_MAX_OUT,
        })?;
    Ok(HybridSeed {
        e_quantum: e_q.to_vec(),
        e_classical: e_c.to_vec(),
        mixed,
    })
}

/// Output of [`extract_bytes`].
pub struct ExtractedBytes {
    pub bytes: Zeroizing<Vec<u8>>,
    pub raw_bits_consumed: u64,
}

/// Pulls raw bits from `supply` and Von Neumann-extracts them until `n`
/// bytes are available. Surplus extracted bits are dropped.
pub fn extract_bytes<S: BitSupply + ?Sized>(supply: &mut S, n: usize) -> Result<ExtractedBytes> {
    let want = n * 8;
    let mut acc = BitBuf::with_capacity(want + 64);
    let mut consumed = 0u64;
    while acc.len() < want {
        // four raw bits per output bit at zero bias; always an even count
        let missing = want - acc.len();
        let chunk = (missing * 4).max(64).next_multiple_of(2);
        let raw = supply.draw_bits(chunk)?;
        consumed += raw.count() as u64;
        let ext = von_neumann_extract(&raw)?;
        acc.extend(&ext.bits);
    }
    let head = acc.split_front(want);
    Ok(ExtractedBytes {
        bytes: Zeroizing::new(head.into_bytes()),
        raw_bits_consumed: consumed,
    })
}
