//! Versioned ciphertext envelope: counter mode over the whitened block
//! cipher, encrypt-then-MAC with HMAC-SHA-256.
//!
//! ```text
//! offset  len  field
//!      0    4  magic "QEA1"
//!      4    1  version = 1
//!      5    1  mode (1 = QE-P, 2 = QE-H)
//!      6    8  epoch_id, big-endian
//!     14   12  nonce
//!     26    8  payload_len, big-endian
//!     34    n  payload
//!   34+n   32  tag = HMAC-SHA-256(mac_key, header || payload)
//! ```

use hmac::{Hmac, Mac};
use sha2::Sha256;
use zeroize::Zeroizing;

use crate::aes_core::{encrypt_block, RoundKeySet};
use crate::conditioning::{condense_bytes, TAG_MAC};
use crate::error::{Error, Result};
use crate::lifecycle::{now_unix, Keystore, RekeyPolicy};
use crate::qe_schedule::{to_round_keys, EpochKeyMaterial, KeySource, Mode};

pub const MAGIC: &[u8; 4] = b"QEA1";
pub const VERSION: u8 = 1;
pub const NONCE_LEN: usize = 12;
pub const HEADER_LEN: usize = 4 + 1 + 1 + 8 + NONCE_LEN + 8;
pub const TAG_LEN: usize = 32;
/// Counter runs 1..=u32::MAX, one block each.
pub const MAX_PAYLOAD: u64 = (u32::MAX as u64) * 16;

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipherContainer {
    /// Raw mode byte; validated only after the tag checks out.
    pub mode: u8,
    pub epoch_id: u64,
    pub nonce: [u8; NONCE_LEN],
    pub payload: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

impl CipherContainer {
    pub fn header(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[..4].copy_from_slice(MAGIC);
        h[4] = VERSION;
        h[5] = self.mode;
        h[6..14].copy_from_slice(&self.epoch_id.to_be_bytes());
        h[14..26].copy_from_slice(&self.nonce);
        h[26..34].copy_from_slice(&(self.payload.len() as u64).to_be_bytes());
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len() + TAG_LEN);
        out.extend_from_slice(&self.header());
        out.extend_from_slice(&self.payload);
        out.extend_from_slice(&self.tag);
        out
    }

    /// Structural parse only; authenticity is checked by [`decrypt_message`].
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < 5 {
            return Err(Error::Truncated);
        }
        if bytes[4] != VERSION {
            return Err(Error::UnsupportedVersion(bytes[4]));
        }
        if bytes.len() < HEADER_LEN + TAG_LEN {
            return Err(Error::Truncated);
        }
        let payload_len = u64::from_be_bytes(bytes[26..34].try_into().expect("8 bytes"));
        let expected = (HEADER_LEN + TAG_LEN) as u64;
        if payload_len > MAX_PAYLOAD || payload_len.checked_add(expected) != Some(bytes.len() as u64) {
            return Err(Error::Truncated);
        }
        let end = HEADER_LEN + payload_len as usize;
        Ok(Self {
            mode: bytes[5],
            epoch_id: u64::from_be_bytes(bytes[6..14].try_into().expect("8 bytes")),
            nonce: bytes[14..26].try_into().expect("12 bytes"),
            payload: bytes[HEADER_LEN..end].to_vec(),
            tag: bytes[end..].try_into().expect("32 bytes"),
        })
    }
}

fn mac_key(material: &EpochKeyMaterial) -> Zeroizing<[u8; 32]> {
    Zeroizing::new(condense_bytes(material.master.as_bytes(), TAG_MAC).expect("non-empty key"))
}

fn mac(material: &EpochKeyMaterial, header: &[u8], payload: &[u8]) -> HmacSha256 {
    let key = mac_key(material);
    let mut m = <HmacSha256 as Mac>::new_from_slice(&key[..]).expect("any key length");
    m.update(header);
    m.update(payload);
    m
}

/// XORs the counter-mode keystream into `data`. Counter block `j` is
/// `nonce || (j + 1)` with a 32-bit big-endian counter.
pub fn ctr_apply(keys: &RoundKeySet, nonce: &[u8; NONCE_LEN], data: &mut [u8]) -> Result<()> {
    if data.len() as u64 > MAX_PAYLOAD {
        return Err(Error::MessageTooLong(data.len() as u64));
    }
    let mut counter_block = [0u8; 16];
    counter_block[..NONCE_LEN].copy_from_slice(nonce);
    for (j, chunk) in data.chunks_mut(16).enumerate() {
        counter_block[12..].copy_from_slice(&(j as u32 + 1).to_be_bytes());
        let ks = encrypt_block(&counter_block, keys);
        for (d, k) in chunk.iter_mut().zip(ks.iter()) {
            *d ^= k;
        }
    }
    Ok(())
}

/// Seals `plaintext` under `material` with the given nonce.
pub fn seal(material: &EpochKeyMaterial, nonce: [u8; NONCE_LEN], plaintext: &[u8]) -> Result<CipherContainer> {
    let keys = to_round_keys(material);
    let mut payload = plaintext.to_vec();
    ctr_apply(&keys, &nonce, &mut payload)?;
    let mut c = CipherContainer {
        mode: material.mode.as_byte(),
        epoch_id: material.epoch_id,
        nonce,
        payload,
        tag: [0; TAG_LEN],
    };
    let m = mac(material, &c.header(), &c.payload);
    c.tag = m.finalize().into_bytes().into();
    Ok(c)
}

/// Verifies and opens a container with explicit key material.
pub fn open(material: &EpochKeyMaterial, container: &CipherContainer) -> Result<Vec<u8>> {
    mac(material, &container.header(), &container.payload)
        .verify_slice(&container.tag)
        .map_err(|_| Error::TagMismatch)?;
    let mode = Mode::from_byte(container.mode)
        .ok_or_else(|| Error::Malformed(format!("unknown mode byte {}", container.mode)))?;
    if mode != material.mode {
        return Err(Error::Malformed(format!(
            "container mode {mode} does not match epoch mode {}",
            material.mode
        )));
    }
    let keys = to_round_keys(material);
    let mut out = container.payload.clone();
    ctr_apply(&keys, &container.nonce, &mut out)?;
    Ok(out)
}

/// Encrypts under the keystore's active epoch, rolling the epoch first if
/// `policy` says it is due.
pub fn encrypt_message(
    plaintext: &[u8],
    store: &mut Keystore,
    policy: &RekeyPolicy,
    entropy: &mut KeySource,
) -> Result<CipherContainer> {
    encrypt_message_at(plaintext, store, policy, entropy, now_unix())
}

pub fn encrypt_message_at(
    plaintext: &[u8],
    store: &mut Keystore,
    policy: &RekeyPolicy,
    entropy: &mut KeySource,
    now: u64,
) -> Result<CipherContainer> {
    if plaintext.len() as u64 > MAX_PAYLOAD {
        return Err(Error::MessageTooLong(plaintext.len() as u64));
    }
    let blocks = store.blocks_in_active();
    store.advance_if_due(policy, blocks, now, |mode, ctx| entropy.derive(mode, ctx))?;
    let mut nonce = [0u8; NONCE_LEN];
    entropy.conditioned_bytes(&mut nonce)?;
    let c = seal(store.active()?, nonce, plaintext)?;
    store.record_blocks(plaintext.len().div_ceil(16) as u64);
    Ok(c)
}

/// Parses, authenticates and decrypts container bytes. No plaintext is
/// produced unless the tag verifies.
pub fn decrypt_message(bytes: &[u8], store: &Keystore) -> Result<Vec<u8>> {
    let c = CipherContainer::parse(bytes)?;
    decrypt_container(&c, store)
}

pub fn decrypt_container(container: &CipherContainer, store: &Keystore) -> Result<Vec<u8>> {
    let material = store.lookup_epoch(container.epoch_id)?;
    open(material, container)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qe_schedule::derive_qeh_from;

    fn material() -> EpochKeyMaterial {
        let mut m = derive_qeh_from(&[1; 64], &[2; 64], "c").unwrap();
        m.epoch_id = 5;
        m
    }

    #[test]
    fn layout_is_bit_exact() {
        let c = seal(&material(), [0xab; 12], b"hello").unwrap();
        let b = c.to_bytes();
        assert_eq!(&b[..4], b"QEA1");
        assert_eq!(b[4], 1);
        assert_eq!(b[5], 2);
        assert_eq!(&b[6..14], &5u64.to_be_bytes());
        assert_eq!(&b[14..26], &[0xab; 12]);
        assert_eq!(&b[26..34], &5u64.to_be_bytes());
        assert_eq!(b.len(), 34 + 5 + 32);
        assert_eq!(CipherContainer::parse(&b).unwrap(), c);
    }

    #[test]
    fn empty_plaintext() {
        let m = material();
        let c = seal(&m, [0; 12], b"").unwrap();
        assert!(c.payload.is_empty());
        assert_eq!(open(&m, &c).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn every_bit_flip_is_rejected() {
        let m = material();
        let bytes = seal(&m, [7; 12], b"sixteen byte msg+3").unwrap().to_bytes();
        for i in 0..bytes.len() * 8 {
            let mut t = bytes.clone();
            t[i / 8] ^= 0x80 >> (i % 8);
            let res = CipherContainer::parse(&t).and_then(|c| {
                if c.epoch_id != m.epoch_id {
                    return Err(Error::NotFound(c.epoch_id));
                }
                open(&m, &c)
            });
            let err = res.expect_err("tampered container accepted");
            let byte = i / 8;
            let expected = match byte {
                0..=3 => "BadMagic",
                4 => "UnsupportedVersion",
                6..=13 => "NotFound",
                26..=33 => "Truncated",
                _ => "TagMismatch",
            };
            assert_eq!(err.kind(), expected, "bit {i}");
        }
    }

    #[test]
    fn truncation_never_panics() {
        let bytes = seal(&material(), [7; 12], &[9u8; 100]).unwrap().to_bytes();
        for n in 0..bytes.len() {
            assert!(CipherContainer::parse(&bytes[..n]).is_err());
        }
    }
}
