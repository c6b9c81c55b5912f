//! AES-256 block primitive with the key schedule exposed.
//!
//! Round keys are kept in three parallel arrays: the FIPS-197 expansion, the
//! whitening segments and their XOR. The cipher rounds only ever read the
//! whitened array, so an all-zero whitening block gives stock AES-256.

use zeroize::{Zeroize, ZeroizeOnDrop};

pub const ROUNDS: usize = 14;
pub const ROUND_KEYS: usize = ROUNDS + 1;
pub const WHITENING_LEN: usize = ROUND_KEYS * 16;

pub type Block = [u8; 16];

#[derive(Clone, PartialEq, Eq, Zeroize, ZeroizeOnDrop)]
pub struct BlockKey256([u8; 32]);

impl BlockKey256 {
    pub fn new(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        let arr: [u8; 32] = bytes.try_into().ok()?;
        Some(Self(arr))
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

}

impl std::fmt::Debug for BlockKey256 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("BlockKey256(<redacted>)")
    }
}

const fn xtime(x: u8) -> u8 {
    (x << 1) ^ (((x >> 7) & 1) * 0x1b)
}

// Branch-free GF(2^8) multiply; shared by the const tables and the
// constant-time S-box path.
const fn gmul(mut a: u8, mut b: u8) -> u8 {
    let mut p = 0u8;
    let mut i = 0;
    while i < 8 {
        p ^= a & (0u8.wrapping_sub(b & 1));
        a = xtime(a);
        b >>= 1;
        i += 1;
    }
    p
}

// x^254 is the multiplicative inverse in GF(2^8), with 0 -> 0.
const fn ginv(x: u8) -> u8 {
    let x2 = gmul(x, x);
    let x3 = gmul(x2, x);
    let x6 = gmul(x3, x3);
    let x12 = gmul(x6, x6);
    let x15 = gmul(x12, x3);
    let x30 = gmul(x15, x15);
    let x60 = gmul(x30, x30);
    let x120 = gmul(x60, x60);
    let x127 = gmul(x120, gmul(x6, gmul(x, 1)));
    
    gmul(x127, x127)
}

const fn affine(b: u8) -> u8 {
    b ^ b.rotate_left(1) ^ b.rotate_left(2) ^ b.rotate_left(3) ^ b.rotate_left(4) ^ 0x63
}

const SBOX: [u8; 256] = {
    let mut s = [0u8; 256];
    let mut i = 0;
    while i < 256 {
        s[i] = affine(ginv(i as u8));
        i += 1;
    }
    s
};

const INV_SBOX: [u8; 256] = {
    let mut s = [0u8; 256];
    let mut i = 0;
    while i < 256 {
        s[SBOX[i] as usize] = i as u8;
        i += 1;
    }
    s
};

const TE0: [u32; 256] = {
    let mut t = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let s = SBOX[i];
        t[i] = u32::from_be_bytes([gmul(s, 2), s, s, gmul(s, 3)]);
        i += 1;
    }
    t
};

const fn rotated(t: &[u32; 256], by: u32) -> [u32; 256] {
    let mut r = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        r[i] = t[i].rotate_right(by);
        i += 1;
    }
    r
}

const TE1: [u32; 256] = rotated(&TE0, 8);
const TE2: [u32; 256] = rotated(&TE0, 16);
const TE3: [u32; 256] = rotated(&TE0, 24);

const RCON: [u8; 7] = [0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40];

/// How SubBytes is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SboxMode {
    /// Combined lookup tables; fast, but memory access depends on secret data.
    #[default]
    Table,
    /// Field inversion computed arithmetically with no data-dependent loads
    /// or branches. Roughly an order of magnitude slower.
    ConstantTime,
}

#[derive(Clone, Zeroize, ZeroizeOnDrop)]
pub struct RoundKeySet {
    pub standard: [Block; ROUND_KEYS],
    pub whitening: [Block; ROUND_KEYS],
    pub whitened: [Block; ROUND_KEYS],
}

impl std::fmt::Debug for RoundKeySet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("RoundKeySet(<redacted>)")
    }
}

/// FIPS-197 AES-256 key expansion; whitening starts out zero.
pub fn expand_key(key: &BlockKey256) -> RoundKeySet {
    let mut w = [[0u8; 4]; 4 * ROUND_KEYS];
    for (i, word) in w.iter_mut().take(8).enumerate() {
        word.copy_from_slice(&key.as_bytes()[4 * i..4 * i + 4]);
    }
    for i in 8..4 * ROUND_KEYS {
        let mut t = w[i - 1];
        if i % 8 == 0 {
            t = [SBOX[t[1] as usize], SBOX[t[2] as usize], SBOX[t[3] as usize], SBOX[t[0] as usize]];
            t[0] ^= RCON[i / 8 - 1];
        } else if i % 8 == 4 {
            t = t.map(|b| SBOX[b as usize]);
        }
        for j in 0..4 {
            w[i][j] = w[i - 8][j] ^ t[j];
        }
    }
    let mut standard = [[0u8; 16]; ROUND_KEYS];
    for (r, rk) in standard.iter_mut().enumerate() {
        for c in 0..4 {
            rk[4 * c..4 * c + 4].copy_from_slice(&w[4 * r + c]);
        }
    }
    w.zeroize();
    RoundKeySet {
        whitened: standard,
        whitening: [[0u8; 16]; ROUND_KEYS],
        standard,
    }
}

impl RoundKeySet {
    /// Installs a 240-byte whitening block; segment `i` is XORed into round key `i`.
    pub fn set_whitening(&mut self, block: &[u8; WHITENING_LEN]) {
        for i in 0..ROUND_KEYS {
            self.whitening[i].copy_from_slice(&block[16 * i..16 * i + 16]);
            for j in 0..16 {
                self.whitened[i][j] = self.standard[i][j] ^ self.whitening[i][j];
            }
        }
    }

    pub fn with_whitening(mut self, block: &[u8; WHITENING_LEN]) -> Self {
        self.set_whitening(block);
        self
    }

    fn round_words(&self, r: usize) -> [u32; 4] {
        let k = &self.whitened[r];
        [0, 1, 2, 3].map(|c| u32::from_be_bytes([k[4 * c], k[4 * c + 1], k[4 * c + 2], k[4 * c + 3]]))
    }
}

/// Encrypts one block with the whitened round keys (table S-box).
pub fn encrypt_block(block: &Block, keys: &RoundKeySet) -> Block {
    encrypt_block_with(block, keys, SboxMode::Table)
}

pub fn encrypt_block_with(block: &Block, keys: &RoundKeySet, mode: SboxMode) -> Block {
    match mode {
        SboxMode::Table => encrypt_ttable(block, keys),
        SboxMode::ConstantTime => encrypt_bytewise(block, keys, |b| affine(ginv(b))),
    }
}

fn encrypt_ttable(block: &Block, keys: &RoundKeySet) -> Block {
    let rk = keys.round_words(0);
    let mut s = [0usize, 1, 2, 3]
        .map(|c| u32::from_be_bytes([block[4 * c], block[4 * c + 1], block[4 * c + 2], block[4 * c + 3]]) ^ rk[c]);
    for r in 1..ROUNDS {
        let rk = keys.round_words(r);
        let b = |w: u32, k: u32| ((w >> k) & 0xff) as usize;
        s = [
            TE0[b(s[0], 24)] ^ TE1[b(s[1], 16)] ^ TE2[b(s[2], 8)] ^ TE3[b(s[3], 0)] ^ rk[0],
            TE0[b(s[1], 24)] ^ TE1[b(s[2], 16)] ^ TE2[b(s[3], 8)] ^ TE3[b(s[0], 0)] ^ rk[1],
            TE0[b(s[2], 24)] ^ TE1[b(s[3], 16)] ^ TE2[b(s[0], 8)] ^ TE3[b(s[1], 0)] ^ rk[2],
            TE0[b(s[3], 24)] ^ TE1[b(s[0], 16)] ^ TE2[b(s[1], 8)] ^ TE3[b(s[2], 0)] ^ rk[3],
        ];
    }
    let rk = keys.round_words(ROUNDS);
    let sb = |w: u32, k: u32| SBOX[((w >> k) & 0xff) as usize] as u32;
    let mut out = [0u8; 16];
    for c in 0..4 {
        let w = (sb(s[c], 24) << 24)
            | (sb(s[(c + 1) % 4], 16) << 16)
            | (sb(s[(c + 2) % 4], 8) << 8)
            | sb(s[(c + 3) % 4], 0);
        out[4 * c..4 * c + 4].copy_from_slice(&(w ^ rk[c]).to_be_bytes());
    }
    out
}

fn add_round_key(s: &mut Block, k: &Block) {
    for (a, b) in s.iter_mut().zip(k) {
        *a ^= b;
    }
}

// State byte index = 4 * column + row.
fn shift_rows(s: &mut Block) {
    let t = *s;
    for c in 0..4 {
        for r in 0..4 {
            s[4 * c + r] = t[4 * ((c + r) % 4) + r];
        }
    }
}

fn inv_shift_rows(s: &mut Block) {
    let t = *s;
    for c in 0..4 {
        for r in 0..4 {
            s[4 * ((c + r) % 4) + r] = t[4 * c + r];
        }
    }
}

fn mix_columns(s: &mut Block) {
    for c in 0..4 {
        let [a0, a1, a2, a3] = [s[4 * c], s[4 * c + 1], s[4 * c + 2], s[4 * c + 3]];
        s[4 * c] = xtime(a0) ^ xtime(a1) ^ a1 ^ a2 ^ a3;
        s[4 * c + 1] = a0 ^ xtime(a1) ^ xtime(a2) ^ a2 ^ a3;
        s[4 * c + 2] = a0 ^ a1 ^ xtime(a2) ^ xtime(a3) ^ a3;
        s[4 * c + 3] = xtime(a0) ^ a0 ^ a1 ^ a2 ^ xtime(a3);
    }
}

fn inv_mix_columns(s: &mut Block) {
    for c in 0..4 {
        let [a0, a1, a2, a3] = [s[4 * c], s[4 * c + 1], s[4 * c + 2], s[4 * c + 3]];
        s[4 * c] = gmul(a0, 14) ^ gmul(a1, 11) ^ gmul(a2, 13) ^ gmul(a3, 9);
        s[4 * c + 1] = gmul(a0, 9) ^ gmul(a1, 14) ^ gmul(a2, 11) ^ gmul(a3, 13);
        s[4 * c + 2] = gmul(a0, 13) ^ gmul(a1, 9) ^ gmul(a2, 14) ^ gmul(a3, 11);
        s[4 * c + 3] = gmul(a0, 11) ^ gmul(a1, 13) ^ gmul(a2, 9) ^ gmul(a3, 14);
    }
}

fn encrypt_bytewise(block: &Block, keys: &RoundKeySet, sub: impl Fn(u8) -> u8) -> Block {
    let mut s = *block;
    add_round_key(&mut s, &keys.whitened[0]);
    for r in 1..=ROUNDS {
        for b in s.iter_mut() {
            *b = sub(*b);
        }
        shift_rows(&mut s);
        if r != ROUNDS {
            mix_columns(&mut s);
        }
        add_round_key(&mut s, &keys.whitened[r]);
    }
    s
}

/// Exact inverse of [`encrypt_block`] for the same key set.
pub fn decrypt_block(block: &Block, keys: &RoundKeySet) -> Block {
    let mut s = *block;
    add_round_key(&mut s, &keys.whitened[ROUNDS]);
    for r in (0..ROUNDS).rev() {
        inv_shift_rows(&mut s);
        for b in s.iter_mut() {
            *b = INV_SBOX[*b as usize];
        }
        add_round_key(&mut s, &keys.whitened[r]);
        if r != 0 {
            inv_mix_columns(&mut s);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hex16(s: &str) -> Block {
        let v: Vec<u8> = (0..16).map(|i| u8::from_str_radix(&s[2 * i..2 * i + 2], 16).unwrap()).collect();
        v.try_into().unwrap()
    }

    fn fips_key() -> BlockKey256 {
        BlockKey256::new(core::array::from_fn(|i| i as u8))
    }

    #[test]
    fn sbox_spot_values() {
        assert_eq!(SBOX[0x00], 0x63);
        assert_eq!(SBOX[0x01], 0x7c);
        assert_eq!(SBOX[0x53], 0xed);
        assert_eq!(SBOX[0xff], 0x16);
        assert_eq!(INV_SBOX[0x63], 0x00);
    }

    #[test]
    fn first_two_round_keys_are_the_key() {
        let k = expand_key(&fips_key());
        assert_eq!(&k.standard[0][..], &fips_key().as_bytes()[..16]);
        assert_eq!(&k.standard[1][..], &fips_key().as_bytes()[16..]);
        assert_eq!(k.whitened, k.standard);
        assert_eq!(k.whitening, [[0u8; 16]; 15]);
    }

    #[test]
    fn fips197_appendix_a3_expansion() {
        // Appendix A.3 key and selected expanded words w[8], w[9], w[59]
        let key: Vec<u8> = (0..32)
            .map(|i| {
                u8::from_str_radix(
                    &"603deb1015ca71be2b73aef0857d77811f352c073b6108d72d9810a30914dff4"[2 * i..2 * i + 2],
                    16,
                )
                .unwrap()
            })
            .collect();
        let k = expand_key(&BlockKey256::from_slice(&key).unwrap());
        assert_eq!(&k.standard[2][0..4], &[0x9b, 0xa3, 0x54, 0x11]);
        assert_eq!(&k.standard[2][4..8], &[0x8e, 0x69, 0x25, 0xaf]);
        assert_eq!(&k.standard[14][12..16], &[0x70, 0x6c, 0x63, 0x1e]);
    }

    #[test]
    fn fips197_c3_vector() {
        let keys = expand_key(&fips_key());
        let pt = hex16("00112233445566778899aabbccddeeff");
        let ct = hex16("8ea2b7ca516745bfeafc49904b496089");
        assert_eq!(encrypt_block(&pt, &keys), ct);
        assert_eq!(encrypt_block_with(&pt, &keys, SboxMode::ConstantTime), ct);
        assert_eq!(decrypt_block(&ct, &keys), pt);
    }

    #[test]
    fn self_cancelling_whitening_regression() {
        // whitening = standard schedule, so every AddRoundKey adds zero
        let base = expand_key(&fips_key());
        let mut block = [0u8; WHITENING_LEN];
        for (i, rk) in base.standard.iter().enumerate() {
            block[16 * i..16 * i + 16].copy_from_slice(rk);
        }
        let keys = base.clone().with_whitening(&block);
        assert!(keys.whitened.iter().all(|rk| rk == &[0u8; 16]));
        let pt = hex16("00112233445566778899aabbccddeeff");
        let ct = encrypt_block(&pt, &keys);
        assert_eq!(ct, encrypt_block_with(&pt, &keys, SboxMode::ConstantTime));
        assert_eq!(decrypt_block(&ct, &keys), pt);
        assert_eq!(ct, hex16(ZERO_KEY_REGRESSION));
    }

    // 00112233..eeff through all fourteen rounds with every round key zero
    const ZERO_KEY_REGRESSION: &str = "59a882fa4111383827e548951db55a38";
}
