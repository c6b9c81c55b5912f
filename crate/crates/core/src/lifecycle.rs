//! Epoch lifecycle: rekey policy, the persistent keystore and secure erasure.
//!
//! The keystore file holds key material in plaintext (mode 0600). Production
//! deployments should keep it inside an HSM or KMS-managed volume.
//!
//! File layout, all integers big-endian:
//!
//! ```text
//! "QEKS" | version u8 = 1 | record*
//! record = epoch_id u64 | status u8 | mode u8 | created_at u64
//!          | context_len u16 | context | master[32] | whitening[240]
//! ```

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use zeroize::{Zeroize, Zeroizing};

use crate::aes_core::{BlockKey256, WHITENING_LEN};
use crate::error::{Error, Result};
use crate::qe_schedule::{EpochKeyMaterial, Mode};

pub const KEYSTORE_MAGIC: &[u8; 4] = b"QEKS";
pub const KEYSTORE_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RekeyPolicy {
    /// Maximum blocks per epoch; 0 disables the limit.
    pub t_block: u64,
    /// Maximum epoch age in seconds; 0 disables the limit.
    pub t_time: u64,
}

impl RekeyPolicy {
    pub fn new(t_block: u64, t_time: u64) -> Result<Self> {
        let p = Self { t_block, t_time };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_block == 0 && self.t_time == 0 {
            return Err(Error::InvalidPolicy("t_block and t_time cannot both be 0".into()));
        }
        Ok(())
    }

    pub fn is_due(&self, blocks_done: u64, age_secs: u64) -> bool {
        (self.t_block > 0 && blocks_done >= self.t_block) || (self.t_time > 0 && age_secs >= self.t_time)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EpochStatus {
    Active = 1,
    Retired = 2,
    Erased = 3,
}

impl EpochStatus {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(Self::Active),
            2 => Some(Self::Retired),
            3 => Some(Self::Erased),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub material: EpochKeyMaterial,
    pub status: EpochStatus,
}

/// Summary of one epoch without key bytes.
#[derive(Debug, Clone, Serialize)]
pub struct EpochInfo {
    pub epoch_id: u64,
    pub status: EpochStatus,
    pub mode: Mode,
    pub context: String,
    pub created_at: u64,
}

pub struct Keystore {
    path: Option<PathBuf>,
    file: Option<File>,
    records: Vec<EpochRecord>,
    blocks_in_epoch: u64,
}

impl std::fmt::Debug for Keystore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Keystore")
            .field("path", &self.path)
            .field("epochs", &self.records.len())
            .finish_non_exhaustive()
    }
}

pub fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl Keystore {
    /// A keystore that lives only in memory.
    pub fn in_memory(mut first: EpochKeyMaterial, now: u64) -> Self {
        first.epoch_id = 1;
        first.created_at = now;
        Self {
            path: None,
            file: None,
            records: vec![EpochRecord {
                material: first,
                status: EpochStatus::Active,
            }],
            blocks_in_epoch: 0,
        }
    }

    /// Creates a new keystore file holding `first` as epoch 1. Fails if the file exists.
    pub fn create(path: &Path, first: EpochKeyMaterial, now: u64) -> Result<Self> {
        let mut opts = OpenOptions::new();
        opts.read(true).write(true).create_new(true);
        #[cfg(unix)]
        {
            use std::os::unix::fs::OpenOptionsExt;
            opts.mode(0o600);
        }
        let file = opts.open(path)?;
        lock(&file)?;
        let mut store = Self::in_memory(first, now);
        store.path = Some(path.to_path_buf());
        store.file = Some(file);
        store.persist()?;
        Ok(store)
    }

    /// Opens and locks an existing keystore file.
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = OpenOptions::new().read(true).write(true).open(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::KeystoreFormat(format!("keystore {} does not exist", path.display()))
            } else {
                Error::Io(e)
            }
        })?;
        lock(&file)?;
        let mut bytes = Zeroizing::new(Vec::new());
        file.read_to_end(&mut bytes)?;
        let records = decode(&bytes)?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            file: Some(file),
            records,
            blocks_in_epoch: 0,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn epochs(&self) -> Vec<EpochInfo> {
        self.records
            .iter()
            .map(|r| EpochInfo {
                epoch_id: r.material.epoch_id,
                status: r.status,
                mode: r.material.mode,
                context: r.material.context.clone(),
                created_at: r.material.created_at,
            })
            .collect()
    }

    pub fn active(&self) -> Result<&EpochKeyMaterial> {
        self.records
            .iter()
            .find(|r| r.status == EpochStatus::Active)
            .map(|r| &r.material)
            .ok_or(Error::NoActiveEpoch)
    }

    pub fn active_id(&self) -> Result<u64> {
        self.active().map(|m| m.epoch_id)
    }

    /// Blocks encrypted under the active epoch during this session.
    pub fn blocks_in_active(&self) -> u64 {
        self.blocks_in_epoch
    }

    pub fn record_blocks(&mut self, blocks: u64) {
        self.blocks_in_epoch = self.blocks_in_epoch.saturating_add(blocks);
    }

    pub fn lookup_epoch(&self, epoch_id: u64) -> Result<&EpochKeyMaterial> {
        let rec = self
            .records
            .iter()
            .find(|r| r.material.epoch_id == epoch_id)
            .ok_or(Error::NotFound(epoch_id))?;
        match rec.status {
            EpochStatus::Erased => Err(Error::KeyErased(epoch_id)),
            _ => Ok(&rec.material),
        }
    }

    /// Rolls to a freshly derived epoch when the policy says the active one is spent.
    pub fn advance_if_due<F>(&mut self, policy: &RekeyPolicy, blocks_done: u64, now: u64, derive: F) -> Result<u64>
    where
        F: FnOnce(Mode, &str) -> Result<EpochKeyMaterial>,
    {
        policy.validate()?;
        let active = self.active()?;
        let age = now.saturating_sub(active.created_at);
        if !policy.is_due(blocks_done, age) {
            return Ok(active.epoch_id);
        }
        self.rekey(now, derive)
    }

    /// Unconditionally retires the active epoch in favour of a fresh one
    /// with the same mode and context.
    pub fn rekey<F>(&mut self, now: u64, derive: F) -> Result<u64>
    where
        F: FnOnce(Mode, &str) -> Result<EpochKeyMaterial>,
    {
        let (mode, context) = {
            let a = self.active()?;
            (a.mode, a.context.clone())
        };
        let fresh = derive(mode, &context).map_err(|e| match e {
            Error::DerivationFailure(_) => e,
            other => Error::DerivationFailure(format!("{}: {other}", other.kind())),
        })?;
        self.install(fresh, now)
    }

    /// Adds `material` as the new active epoch, retiring the current one.
    pub fn install(&mut self, mut material: EpochKeyMaterial, now: u64) -> Result<u64> {
        let next = self.records.last().map_or(1, |r| r.material.epoch_id + 1);
        material.epoch_id = next;
        material.created_at = now;
        let prev: Vec<usize> = self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.status == EpochStatus::Active)
            .map(|(i, _)| i)
            .collect();
        for &i in &prev {
            self.records[i].status = EpochStatus::Retired;
        }
        self.records.push(EpochRecord {
            material,
            status: EpochStatus::Active,
        });
        if let Err(e) = self.persist() {
            self.records.pop();
            for &i in &prev {
                self.records[i].status = EpochStatus::Active;
            }
            return Err(e);
        }
        self.blocks_in_epoch = 0;
        Ok(next)
    }

    /// Overwrites a retired epoch's key bytes with `fresh` random bytes, then
    /// zeros, in memory and on disk.
    pub fn secure_erase<F>(&mut self, epoch_id: u64, mut fresh: F) -> Result<()>
    where
        F: FnMut(&mut [u8]) -> Result<()>,
    {
        let idx = self
            .records
            .iter()
            .position(|r| r.material.epoch_id == epoch_id)
            .ok_or(Error::NotFound(epoch_id))?;
        match self.records[idx].status {
            EpochStatus::Active => return Err(Error::EpochActive(epoch_id)),
            EpochStatus::Erased => return Ok(()),
            EpochStatus::Retired => {}
        }
        let mut noise = Zeroizing::new([0u8; 32 + WHITENING_LEN]);
        fresh(&mut noise[..])?;
        {
            let m = &mut self.records[idx].material;
            m.master = BlockKey256::from_slice(&noise[..32]).expect("32 bytes");
            m.whitening_block.copy_from_slice(&noise[32..]);
        }
        self.records[idx].status = EpochStatus::Erased;
        // first pass leaves noise where the key was
        self.persist_with(|_| true)?;
        {
            let m = &mut self.records[idx].material;
            m.master.zeroize();
            m.whitening_block.zeroize();
        }
        self.persist()
    }

    fn persist(&mut self) -> Result<()> {
        self.persist_with(|_| false)
    }

    // `keep_erased_bytes` decides, per record, whether an erased record is
    // written with its current buffer contents instead of zeros.
    fn persist_with(&mut self, keep_erased_bytes: impl Fn(&EpochRecord) -> bool) -> Result<()> {
        let Some(file) = self.file.as_mut() else {
            return Ok(());
        };
        let bytes = encode(&self.records, keep_erased_bytes);
        file.seek(SeekFrom::Start(0))?;
        file.write_all(&bytes)?;
        file.set_len(bytes.len() as u64)?;
        file.sync_all()?;
        Ok(())
    }
}

fn lock(file: &File) -> Result<()> {
    file.try_lock().map_err(|e| match e {
        std::fs::TryLockError::WouldBlock => Error::KeystoreLocked,
        std::fs::TryLockError::Error(io) => Error::Io(io),
    })
}

fn encode(records: &[EpochRecord], keep_erased_bytes: impl Fn(&EpochRecord) -> bool) -> Zeroizing<Vec<u8>> {
    let mut out = Zeroizing::new(Vec::with_capacity(5 + records.len() * 300));
    out.extend_from_slice(KEYSTORE_MAGIC);
    out.push(KEYSTORE_VERSION);
    for r in records {
        let m = &r.material;
        out.extend_from_slice(&m.epoch_id.to_be_bytes());
        out.push(r.status as u8);
        out.push(m.mode.as_byte());
        out.extend_from_slice(&m.created_at.to_be_bytes());
        out.extend_from_slice(&(m.context.len() as u16).to_be_bytes());
        out.extend_from_slice(m.context.as_bytes());
        if r.status == EpochStatus::Erased && !keep_erased_bytes(r) {
            out.extend_from_slice(&[0u8; 32 + WHITENING_LEN]);
        } else {
            out.extend_from_slice(m.master.as_bytes());
            out.extend_from_slice(&m.whitening_block[..]);
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::KeystoreFormat("truncated record".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn decode(bytes: &[u8]) -> Result<Vec<EpochRecord>> {
    let bad = |why: &str| Error::KeystoreFormat(why.to_owned());
    if bytes.len() < 5 || &bytes[..4] != KEYSTORE_MAGIC {
        return Err(bad("missing QEKS magic"));
    }
    if bytes[4] != KEYSTORE_VERSION {
        return Err(bad(&format!("unsupported keystore version {}", bytes[4])));
    }
    let mut cur = Cursor { bytes, pos: 5 };
    let mut records: Vec<EpochRecord> = Vec::new();
    while !cur.at_end() {
        let epoch_id = cur.u64()?;
        let status = EpochStatus::from_byte(cur.take(1)?[0]).ok_or_else(|| bad("bad status byte"))?;
        let mode = Mode::from_byte(cur.take(1)?[0]).ok_or_else(|| bad("bad mode byte"))?;
        let created_at = cur.u64()?;
        let clen = u16::from_be_bytes(cur.take(2)?.try_into().expect("2 bytes")) as usize;
        let context = std::str::from_utf8(cur.take(clen)?).map_err(|_| bad("context is not UTF-8"))?;
        let master = BlockKey256::from_slice(cur.take(32)?).expect("32 bytes");
        let mut whitening = [0u8; WHITENING_LEN];
        whitening.copy_from_slice(cur.take(WHITENING_LEN)?);
        let mut material = EpochKeyMaterial::new(mode, context, master, whitening);
        whitening.zeroize();
        material.epoch_id = epoch_id;
        material.created_at = created_at;
        if let Some(prev) = records.last() {
            if epoch_id <= prev.material.epoch_id {
                return Err(bad("epoch ids not strictly increasing"));
            }
        }
        records.push(EpochRecord { material, status });
    }
    if records.iter().filter(|r| r.status == EpochStatus::Active).count() > 1 {
        return Err(bad("more than one active epoch"));
    }
    Ok(records)
}
