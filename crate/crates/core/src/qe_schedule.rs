//! Epoch key material for the pure-quantum (QE-P) and hybrid (QE-H) modes.
//!
//! Both modes produce the same shape: a 256-bit master key plus a 240-byte
//! whitening block whose 16-byte segment `i` is XORed into AES round key `i`.

use std::fmt;

use serde::Serialize;
use zeroize::{Zeroize, ZeroizeOnDrop};

use crate::aes_core::{expand_key, BlockKey256, RoundKeySet, WHITENING_LEN};
use crate::conditioning::{condense_bytes, extract_bytes, mix_hybrid, HYBRID_SEED_LEN, TAG_MASTER};
use crate::entropy_source::BitSupply;
use crate::error::{Error, Result};

/// Secret bits per epoch: the master key plus fifteen 128-bit whitening segments.
pub const SECRET_BITS_PER_EPOCH: usize = 256 + 15 * 128;
pub const QUANTUM_BYTES_QEH: usize = 64;
pub const CLASSICAL_BYTES_QEH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    Qep = 1,
    Qeh = 2,
}

impl Mode {
    pub fn from_byte(b: u8) -> Option<Mode> {
        match b {
            1 => Some(Mode::Qep),
            2 => Some(Mode::Qeh),
            _ => None,
        }
    }

    pub fn as_byte(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Qep => "QE-P",
            Mode::Qeh => "QE-H",
        })
    }
}

#[derive(Clone, Zeroize, ZeroizeOnDrop)]
pub struct EpochKeyMaterial {
    #[zeroize(skip)]
    pub mode: Mode,
    pub epoch_id: u64,
    pub context: String,
    pub master: BlockKey256,
    pub whitening_block: Box<[u8; WHITENING_LEN]>,
    pub created_at: u64,
}

impl fmt::Debug for EpochKeyMaterial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EpochKeyMaterial")
            .field("mode", &self.mode)
            .field("epoch_id", &self.epoch_id)
            .field("context", &self.context)
            .field("created_at", &self.created_at)
            .finish_non_exhaustive()
    }
}

impl EpochKeyMaterial {
    pub fn new(mode: Mode, context: &str, master: BlockKey256, whitening: [u8; WHITENING_LEN]) -> Self {
        Self {
            mode,
            epoch_id: 0,
            context: context.to_owned(),
            master,
            whitening_block: Box::new(whitening),
            created_at: 0,
        }
    }

    /// Whitening segment `i` (Q_i / Δ_i).
    pub fn segment(&self, i: usize) -> &[u8] {
        &self.whitening_block[16 * i..16 * i + 16]
    }

    pub fn secret_bits(&self) -> usize {
        8 * (self.master.as_bytes().len() + self.whitening_block.len())
    }
}

fn check_context(context: &str) -> Result<()> {
    if context.len() > u16::MAX as usize || context.contains('\0') {
        return Err(Error::DerivationFailure(
            "context must be under 64 KiB and free of NUL bytes".into(),
        ));
    }
    Ok(())
}

/// Domain tag for the master-key hash, bound to the deployment context.
pub fn master_tag(context: &str) -> String {
    format!("{TAG_MASTER}/{context}")
}

/// QE-P: extracted quantum bytes give both the hashed master key and the
/// raw whitening block.
pub fn derive_qep<S: BitSupply + ?Sized>(guarded: &mut S, context: &str) -> Result<EpochKeyMaterial> {
    derive_qep_traced(guarded, context).map(|(m, _)| m)
}

/// As [`derive_qep`], also returning how many raw bits were consumed.
pub fn derive_qep_traced<S: BitSupply + ?Sized>(
    guarded: &mut S,
    context: &str,
) -> Result<(EpochKeyMaterial, u64)> {
    check_context(context)?;
    let ext = extract_bytes(guarded, 32 + WHITENING_LEN)?;
    let master = BlockKey256::new(condense_bytes(&ext.bytes[..32], &master_tag(context))?);
    let mut whitening = [0u8; WHITENING_LEN];
    whitening.copy_from_slice(&ext.bytes[32..]);
    let material = EpochKeyMaterial::new(Mode::Qep, context, master, whitening);
    whitening.zeroize();
    Ok((material, ext.raw_bits_consumed))
}

/// QE-H: 64 extracted quantum bytes and 64 classical bytes, mixed with HKDF
/// into master key and whitening block.
pub fn derive_qeh<Q, C>(guarded_q: &mut Q, classical: &mut C, context: &str) -> Result<EpochKeyMaterial>
where
    Q: BitSupply + ?Sized,
    C: BitSupply + ?Sized,
{
    check_context(context)?;
    let e_q = extract_bytes(guarded_q, QUANTUM_BYTES_QEH)?;
    let e_c = classical.draw_bits(CLASSICAL_BYTES_QEH * 8)?;
    derive_qeh_from(&e_q.bytes, e_c.bits.as_bytes(), context)
}

/// The deterministic half of QE-H, from already-collected entropy.
pub fn derive_qeh_from(e_q: &[u8], e_c: &[u8], context: &str) -> Result<EpochKeyMaterial> {
    check_context(context)?;
    let seed = mix_hybrid(e_q, e_c, context, HYBRID_SEED_LEN)?;
    let master = BlockKey256::from_slice(&seed.mixed[..32]).expect("32 bytes");
    let mut whitening = [0u8; WHITENING_LEN];
    whitening.copy_from_slice(&seed.mixed[32..]);
    let material = EpochKeyMaterial::new(Mode::Qeh, context, master, whitening);
    whitening.zeroize();
    Ok(material)
}

/// Standard expansion of the master key with the whitening block applied.
pub fn to_round_keys(material: &EpochKeyMaterial) -> RoundKeySet {
    expand_key(&material.master).with_whitening(&material.whitening_block)
}

/// Entropy for an encryption session: a (normally guarded) quantum supply
/// and, for QE-H, a classical one.
pub struct KeySource {
    pub quantum: Box<dyn BitSupply + Send>,
    pub classical: Option<Box<dyn BitSupply + Send>>,
}

impl fmt::Debug for KeySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeySource")
            .field("quantum", &self.quantum.label())
            .field("classical", &self.classical.as_ref().map(|c| c.label().to_owned()))
            .finish()
    }
}

impl KeySource {
    pub fn new(quantum: impl BitSupply + Send + 'static) -> Self {
        Self {
            quantum: Box::new(quantum),
            classical: None,
        }
    }

    pub fn with_classical(mut self, classical: impl BitSupply + Send + 'static) -> Self {
        self.classical = Some(Box::new(classical));
        self
    }

    pub fn derive(&mut self, mode: Mode, context: &str) -> Result<EpochKeyMaterial> {
        match mode {
            Mode::Qep => derive_qep(self.quantum.as_mut(), context),
            Mode::Qeh => {
                let classical = self.classical.as_mut().ok_or_else(|| {
                    Error::DerivationFailure("QE-H needs a classical entropy source".into())
                })?;
                derive_qeh(self.quantum.as_mut(), classical.as_mut(), context)
            }
        }
    }

    /// Extracted (debiased) bytes from the quantum supply.
    pub fn conditioned_bytes(&mut self, out: &mut [u8]) -> Result<()> {
        let ext = extract_bytes(self.quantum.as_mut(), out.len())?;
        out.copy_from_slice(&ext.bytes);
        Ok(())
    }
}
