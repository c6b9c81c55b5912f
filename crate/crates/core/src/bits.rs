//! Packed bit sequences.
//!
//! Bits are stored MSB-first within each byte, bytes in stream order. Unused
//! low-order bits of the final byte are always zero.

use zeroize::Zeroize;

#[derive(Clone, Default, PartialEq, Eq, Zeroize)]
pub struct BitBuf {
    bytes: Vec<u8>,
    len: usize,
}

impl std::fmt::Debug for BitBuf {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BitBuf").field("len", &self.len).finish_non_exhaustive()
    }
}

impl BitBuf {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bits: usize) -> Self {
        Self {
            bytes: Vec::with_capacity(bits.div_ceil(8)),
            len: 0,
        }
    }

    /// Wraps whole bytes; the bit length is `8 * bytes.len()`.
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        let len = bytes.len() * 8;
        Self { bytes, len }
    }

    /// Wraps `bytes` holding `len` bits. Bits past `len` are cleared.
    pub fn from_bytes_with_len(mut bytes: Vec<u8>, len: usize) -> Self {
        assert!(len <= bytes.len() * 8, "bit length exceeds buffer");
        bytes.truncate(len.div_ceil(8));
        let mut buf = Self { bytes, len };
        buf.clear_tail();
        buf
    }

    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut buf = Self::new();
        for b in bits {
            buf.push(b);
        }
        buf
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Packed bytes; a trailing partial byte is zero-padded.
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        let mut me = std::mem::ManuallyDrop::new(self);
        std::mem::take(&mut me.bytes)
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.bytes[i >> 3] >> (7 - (i & 7))) & 1 == 1
    }

    #[inline]
    pub fn push(&mut self, bit: bool) {
        let off = self.len & 7;
        if off == 0 {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().unwrap() |= 0x80 >> off;
        }
        self.len += 1;
    }

    /// Appends the first `nbits` bits of `src`.
    pub fn extend_from_bytes(&mut self, src: &[u8], nbits: usize) {
        assert!(nbits <= src.len() * 8);
        if self.len.is_multiple_of(8) {
            let whole = nbits / 8;
            self.bytes.extend_from_slice(&src[..whole]);
            self.len += whole * 8;
            for i in whole * 8..nbits {
                self.push((src[i >> 3] >> (7 - (i & 7))) & 1 == 1);
            }
        } else {
            for i in 0..nbits {
                self.push((src[i >> 3] >> (7 - (i & 7))) & 1 == 1);
            }
        }
    }

    pub fn extend(&mut self, other: &BitBuf) {
        self.extend_from_bytes(&other.bytes, other.len);
    }

    /// Removes and returns the first `n` bits.
    pub fn split_front(&mut self, n: usize) -> BitBuf {
        assert!(n <= self.len);
        let head = BitBuf::from_bytes_with_len(self.bytes[..n.div_ceil(8)].to_vec(), n);
        let rest_len = self.len - n;
        if n.is_multiple_of(8) {
            self.bytes.drain(..n / 8);
            self.len = rest_len;
        } else {
            let mut rest = BitBuf::with_capacity(rest_len);
            for i in n..self.len {
                rest.push(self.get(i));
            }
            self.zeroize();
            *self = rest;
        }
        head
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn count_ones(&self) -> u64 {
        // tail bits are kept clear, so whole-byte popcount is exact
        self.bytes.iter().map(|b| b.count_ones() as u64).sum()
    }

    fn clear_tail(&mut self) {
        let off = self.len & 7;
        if off != 0 {
            if let Some(last) = self.bytes.last_mut() {
                *last &= 0xffu8 << (8 - off);
            }
        }
    }
}

impl Drop for BitBuf {
    fn drop(&mut self) {
        self.zeroize();
    }
}
