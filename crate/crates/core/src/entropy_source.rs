//! Raw-bit producers behind one handle type.
//!
//! Three built-in kinds exist: a seeded simulation of a quantum generator,
//! raw-bit files (for example dumps taken from real hardware), and the
//! operating system's generator. Anything else can be plugged in through
//! [`register_provider`].

use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use crate::bits::BitBuf;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum SourceKind {
    /// i.i.d. Bernoulli(`bias`) bits from a ChaCha20 stream keyed by `seed`.
    SimulatedQuantum { seed: u64, bias: f64 },
    RawFile { path: PathBuf },
    OsClassical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceDescriptor {
    pub label: String,
    pub kind: SourceKind,
}

impl SourceDescriptor {
    pub fn simulated(seed: u64, bias: f64) -> Self {
        Self {
            label: format!("sim:{seed}:{bias}"),
            kind: SourceKind::SimulatedQuantum { seed, bias },
        }
    }

    pub fn raw_file(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        Self {
            label: format!("file:{}", path.display()),
            kind: SourceKind::RawFile { path },
        }
    }

    pub fn os() -> Self {
        Self {
            label: "os".into(),
            kind: SourceKind::OsClassical,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let SourceKind::SimulatedQuantum { bias, .. } = self.kind {
            if !(0.0..=1.0).contains(&bias) {
                return Err(Error::InvalidDescriptor(format!(
                    "bias {bias} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn open(&self) -> Result<SourceHandle> {
        open_source(self)
    }
}

/// Parses `sim:<seed>[:bias]`, `file:<path>` or `os`.
impl FromStr for SourceDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidDescriptor(format!("cannot parse source `{s}`"));
        if s == "os" {
            return Ok(Self::os());
        }
        if let Some(path) = s.strip_prefix("file:") {
            if path.is_empty() {
                return Err(bad());
            }
            return Ok(Self::raw_file(path));
        }
        if let Some(rest) = s.strip_prefix("sim:") {
            let mut parts = rest.splitn(2, ':');
            let seed = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
            let bias = match parts.next() {
                Some(b) => b.parse().map_err(|_| bad())?,
                None => 0.5,
            };
            let desc = Self::simulated(seed, bias);
            desc.validate()?;
            return Ok(desc);
        }
        Err(bad())
    }
}

/// External byte supplier registered with [`register_provider`].
pub trait EntropyProvider: Send {
    fn fill_bytes(&mut self, buf: &mut [u8]) -> io::Result<()>;
}

impl<F> EntropyProvider for F
where
    F: FnMut(&mut [u8]) -> io::Result<()> + Send,
{
    fn fill_bytes(&mut self, buf: &mut [u8]) -> io::Result<()> {
        self(buf)
    }
}

/// A run of raw bits as delivered by one draw.
#[derive(Debug, Clone)]
pub struct RawBitstream {
    pub bits: BitBuf,
    pub source: String,
    pub drawn_at: Instant,
}

impl RawBitstream {
    pub fn count(&self) -> usize {
        self.bits.len()
    }
}

/// Anything that hands out raw bits in order.
pub trait BitSupply {
    fn draw_bits(&mut self, n: usize) -> Result<RawBitstream>;
    fn label(&self) -> &str;
}

enum Backend {
    Sim {
        rng: Box<ChaCha20Rng>,
        threshold: Option<u64>,
        block: [u8; 64],
        used: usize,
    },
    File { reader: BufReader<File>, remaining: u64 },
    Os,
    Provider(Box<dyn EntropyProvider>),
}

impl Backend {
    fn remaining_bytes(&self) -> Option<u64> {
        match self {
            Backend::File { remaining, .. } => Some(*remaining),
            _ => None,
        }
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        match self {
            // the generator is read in whole 64-byte blocks so the stream does
            // not depend on how draws are split
            Backend::Sim { rng, threshold: None, block, used } => {
                let mut off = 0;
                while off < buf.len() {
                    if *used == block.len() {
                        rng.fill_bytes(block);
                        *used = 0;
                    }
                    let take = (block.len() - *used).min(buf.len() - off);
                    buf[off..off + take].copy_from_slice(&block[*used..*used + take]);
                    *used += take;
                    off += take;
                }
            }
            Backend::Sim { rng, threshold: Some(t), .. } => {
                for byte in buf.iter_mut() {
                    let mut v = 0u8;
                    for _ in 0..8 {
                        v = (v << 1) | ((rng.next_u32() as u64) < *t) as u8;
                    }
                    *byte = v;
                }
            }
            Backend::File { reader, remaining } => {
                reader.read_exact(buf)?;
                *remaining -= buf.len() as u64;
            }
            Backend::Os => getrandom::fill(buf)
                .map_err(|e| Error::OsEntropyUnavailable(e.to_string()))?,
            Backend::Provider(p) => p.fill_bytes(buf)?,
        }
        Ok(())
    }
}

/// An open entropy source. Single consumer; may be moved across threads.
pub struct SourceHandle {
    label: String,
    backend: Backend,
    pending: BitBuf,
    delivered: u64,
}

impl fmt::Debug for SourceHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SourceHandle")
            .field("label", &self.label)
            .field("delivered", &self.delivered)
            .finish_non_exhaustive()
    }
}

pub fn open_source(desc: &SourceDescriptor) -> Result<SourceHandle> {
    desc.validate()?;
    let backend = match &desc.kind {
        SourceKind::SimulatedQuantum { seed, bias } => {
            let threshold = if *bias == 0.5 {
                None
            } else {
                Some((bias * 4_294_967_296.0).round() as u64)
            };
            Backend::Sim {
                rng: Box::new(ChaCha20Rng::seed_from_u64(*seed)),
                threshold,
                block: [0; 64],
                used: 64,
            }
        }
        SourceKind::RawFile { path } => open_file(path)?,
        SourceKind::OsClassical => {
            let mut probe = [0u8; 1];
            getrandom::fill(&mut probe).map_err(|e| Error::OsEntropyUnavailable(e.to_string()))?;
            Backend::Os
        }
    };
    Ok(SourceHandle {
        label: desc.label.clone(),
        backend,
        pending: BitBuf::new(),
        delivered: 0,
    })
}

fn open_file(path: &Path) -> Result<Backend> {
    let file = File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let remaining = file.metadata()?.len();
    Ok(Backend::File {
        reader: BufReader::with_capacity(1 << 16, file),
        remaining,
    })
}

/// Wraps an external byte supplier so it can stand in for any built-in source.
pub fn register_provider<P: EntropyProvider + 'static>(label: &str, provider: P) -> SourceHandle {
    SourceHandle {
        label: label.to_owned(),
        backend: Backend::Provider(Box::new(provider)),
        pending: BitBuf::new(),
        delivered: 0,
    }
}

impl SourceHandle {
    /// Total bits handed out so far.
    pub fn bits_delivered(&self) -> u64 {
        self.delivered
    }

    /// Bits still available, or `None` for unbounded sources.
    pub fn remaining_bits(&self) -> Option<u64> {
        self.backend
            .remaining_bytes()
            .map(|b| b * 8 + self.pending.len() as u64)
    }

    /// Draws whole bytes. Equivalent to `draw_bits(8 * buf.len())`.
    pub fn fill_bytes(&mut self, buf: &mut [u8]) -> Result<()> {
        let raw = self.draw_bits(buf.len() * 8)?;
        buf.copy_from_slice(raw.bits.as_bytes());
        Ok(())
    }
}

impl BitSupply for SourceHandle {
    fn draw_bits(&mut self, n: usize) -> Result<RawBitstream> {
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        if let Some(avail) = self.remaining_bits() {
            if avail < n as u64 {
                return Err(Error::SourceExhausted {
                    requested: n as u64,
                    available: avail,
                });
            }
        }
        let mut out = BitBuf::with_capacity(n);
        let from_pending = n.min(self.pending.len());
        out.extend(&self.pending.split_front(from_pending));
        let need = n - from_pending;
        if need > 0 {
            let mut fresh = vec![0u8; need.div_ceil(8)];
            self.backend.fill(&mut fresh)?;
            out.extend_from_bytes(&fresh, need);
            let spare = fresh.len() * 8 - need;
            if spare > 0 {
                let last = fresh[fresh.len() - 1];
                for i in (8 - spare)..8 {
                    self.pending.push((last >> (7 - i)) & 1 == 1);
                }
            }
            fresh.fill(0);
        }
        self.delivered += n as u64;
        Ok(RawBitstream {
            bits: out,
            source: self.label.clone(),
            drawn_at: Instant::now(),
        })
    }

    fn label(&self) -> &str {
        &self.label
    }
}
