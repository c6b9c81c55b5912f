//! Online entropy-quality monitoring.
//!
//! Every batch drawn from a source is checked for frequency bias, run-count
//! anomalies and stuck bits before any of its bits are released. A failing
//! batch is logged and, depending on policy, the stream switches to a backup
//! source or halts.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;

use crate::bits::BitBuf;
use crate::entropy_source::{BitSupply, RawBitstream, SourceHandle};
use crate::error::{Error, Result};
use crate::stats_suite::nist;

pub const MIN_ESTIMATE_BITS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum HealthAction {
    ReseedFromBackup,
    Halt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HealthPolicy {
    pub batch_bits: usize,
    pub alpha: f64,
    pub max_run: usize,
    pub action: HealthAction,
}

impl Default for HealthPolicy {
    fn default() -> Self {
        Self {
            batch_bits: 65_536,
            alpha: 1e-6,
            max_run: 64,
            action: HealthAction::ReseedFromBackup,
        }
    }
}

impl HealthPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.batch_bits < 1024 {
            return Err(Error::InvalidPolicy(format!(
                "batch_bits {} below 1024",
                self.batch_bits
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.01) {
            return Err(Error::InvalidPolicy(format!(
                "alpha {} outside (0, 0.01)",
                self.alpha
            )));
        }
        if self.max_run < 8 {
            return Err(Error::InvalidPolicy(format!("max_run {} below 8", self.max_run)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Pass,
    Fail,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Check {
    Monobit,
    Runs,
    Repetition,
}

impl Check {
    pub fn name(self) -> &'static str {
        match self {
            Check::Monobit => "monobit",
            Check::Runs => "runs",
            Check::Repetition => "repetition",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HealthReport {
    pub batch_id: u64,
    pub bits: usize,
    pub monobit_p: f64,
    pub runs_p: f64,
    pub longest_repeat: usize,
    pub verdict: Verdict,
    pub failed_checks: Vec<Check>,
}

/// Longest run of identical bits.
pub fn longest_repeat(bits: &BitBuf) -> usize {
    let n = bits.len();
    if n == 0 {
        return 0;
    }
    let bytes = bits.as_bytes();
    let mut best = 0usize;
    let mut run = 0usize;
    let mut last: Option<bool> = None;
    let mut i = 0usize;
    while i < n {
        if i.is_multiple_of(8) && i + 8 <= n && (bytes[i / 8] == 0 || bytes[i / 8] == 0xff) {
            let v = bytes[i / 8] == 0xff;
            run = if last == Some(v) { run + 8 } else { 8 };
            last = Some(v);
            i += 8;
        } else {
            let v = bits.get(i);
            run = if last == Some(v) { run + 1 } else { 1 };
            last = Some(v);
            i += 1;
        }
        best = best.max(run);
    }
    best
}

/// Monobit, runs and repetition checks over one batch.
pub fn check_batch(bits: &BitBuf, policy: &HealthPolicy, batch_id: u64) -> Result<HealthReport> {
    if bits.len() < policy.batch_bits {
        return Err(Error::BatchTooSmall {
            needed: policy.batch_bits,
            got: bits.len(),
        });
    }
    let monobit_p = nist::frequency(bits);
    let runs_p = nist::runs(bits);
    let longest = longest_repeat(bits);

    let mut failed_checks = Vec::new();
    if monobit_p < policy.alpha {
        failed_checks.push(Check::Monobit);
    }
    if runs_p < policy.alpha {
        failed_checks.push(Check::Runs);
    }
    if longest > policy.max_run {
        failed_checks.push(Check::Repetition);
    }
    let verdict = if failed_checks.is_empty() {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(HealthReport {
        batch_id,
        bits: bits.len(),
        monobit_p,
        runs_p,
        longest_repeat: longest,
        verdict,
        failed_checks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyEstimate {
    pub h_min_per_bit: f64,
    pub p_max: f64,
}

/// Per-bit min-entropy from the empirical ones-frequency.
pub fn estimate_min_entropy(bits: &BitBuf) -> Result<EntropyEstimate> {
    if bits.len() < MIN_ESTIMATE_BITS {
        return Err(Error::BatchTooSmall {
            needed: MIN_ESTIMATE_BITS,
            got: bits.len(),
        });
    }
    let p = bits.count_ones() as f64 / bits.len() as f64;
    let p_max = p.max(1.0 - p);
    Ok(EntropyEstimate {
        h_min_per_bit: (-p_max.log2()).max(0.0),
        p_max,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LogAction {
    /// Per-check detail line; the batch line carries the decision.
    None,
    Emit,
    Reseed,
    Halt,
    Abort,
}

impl fmt::Display for LogAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogAction::None => "-",
            LogAction::Emit => "emit",
            LogAction::Reseed => "reseed",
            LogAction::Halt => "halt",
            LogAction::Abort => "abort",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LogRecord {
    pub time: DateTime<Utc>,
    pub batch_id: u64,
    pub source: String,
    pub check: String,
    pub statistic: f64,
    pub value: f64,
    pub verdict: Verdict,
    pub action: LogAction,
}

impl LogRecord {
    /// Tab-separated line: time, batch, check, statistic, value, verdict, action, source.
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.time.to_rfc3339_opts(SecondsFormat::Micros, true),
            self.batch_id,
            self.check,
            self.statistic,
            self.value,
            self.verdict,
            self.action,
            self.source,
        )
    }
}

#[derive(Default)]
struct LogInner {
    records: Vec<LogRecord>,
    file: Option<File>,
}

/// Append-only security event log, shareable between guarded sources.
#[derive(Clone, Default)]
pub struct EventLog {
    inner: Arc<Mutex<LogInner>>,
}

impl fmt::Debug for EventLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EventLog").field("records", &self.len()).finish()
    }
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn with_file(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            inner: Arc::new(Mutex::new(LogInner {
                records: Vec::new(),
                file: Some(file),
            })),
        })
    }

    pub fn append(&self, record: LogRecord) -> Result<()> {
        let mut inner = self.inner.lock().expect("event log poisoned");
        if let Some(f) = inner.file.as_mut() {
            let mut line = record.to_line();
            line.push('\n');
            f.write_all(line.as_bytes())?;
        }
        inner.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> Vec<LogRecord> {
        self.inner.lock().expect("event log poisoned").records.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("event log poisoned").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count_action(&self, action: LogAction) -> usize {
        self.inner
            .lock()
            .expect("event log poisoned")
            .records
            .iter()
            .filter(|r| r.action == action)
            .count()
    }
}

/// A source whose output is released only batch by batch after passing
/// [`check_batch`].
pub struct GuardedSource {
    primary: SourceHandle,
    backup: Option<SourceHandle>,
    policy: HealthPolicy,
    log: EventLog,
    on_backup: bool,
    halted: bool,
    buffer: BitBuf,
    next_batch: u64,
    emitted: Vec<u64>,
    reports: Vec<HealthReport>,
}

impl fmt::Debug for GuardedSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GuardedSource")
            .field("source", &self.label())
            .field("on_backup", &self.on_backup)
            .field("halted", &self.halted)
            .field("batches", &self.next_batch)
            .finish_non_exhaustive()
    }
}

pub fn guard_stream(
    primary: SourceHandle,
    policy: HealthPolicy,
    backup: Option<SourceHandle>,
    log: EventLog,
) -> Result<GuardedSource> {
    policy.validate()?;
    Ok(GuardedSource {
        primary,
        backup,
        policy,
        log,
        on_backup: false,
        halted: false,
        buffer: BitBuf::new(),
        next_batch: 0,
        emitted: Vec::new(),
        reports: Vec::new(),
    })
}

impl GuardedSource {
    pub fn policy(&self) -> &HealthPolicy {
        &self.policy
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn on_backup(&self) -> bool {
        self.on_backup
    }

    /// Batch ids whose bits were released, in order.
    pub fn emitted_batches(&self) -> &[u64] {
        &self.emitted
    }

    pub fn reports(&self) -> &[HealthReport] {
        &self.reports
    }

    pub fn reseed_events(&self) -> usize {
        self.log.count_action(LogAction::Reseed)
    }

    /// Draws and checks one batch, releasing it into the output buffer if it passes.
    pub fn pump_batch(&mut self) -> Result<HealthReport> {
        if self.halted {
            return Err(Error::AllSourcesFailed);
        }
        let batch_id = self.next_batch;
        self.next_batch += 1;
        let label = self.label().to_owned();
        let source = if self.on_backup {
            self.backup.as_mut().expect("on_backup implies backup")
        } else {
            &mut self.primary
        };
        let raw = source.draw_bits(self.policy.batch_bits)?;
        let report = check_batch(&raw.bits, &self.policy, batch_id)?;
        self.log_checks(&report, &label)?;

        if report.verdict == Verdict::Pass {
            self.log_batch(&report, &label, LogAction::Emit)?;
            self.buffer.extend(&raw.bits);
            self.emitted.push(batch_id);
            self.reports.push(report.clone());
            return Ok(report);
        }

        self.reports.push(report.clone());
        match self.policy.action {
            HealthAction::Halt => {
                self.log_batch(&report, &label, LogAction::Halt)?;
                self.halted = true;
                Err(Error::HealthFailure { batch_id })
            }
            HealthAction::ReseedFromBackup if !self.on_backup && self.backup.is_some() => {
                self.log_batch(&report, &label, LogAction::Reseed)?;
                self.on_backup = true;
                Ok(report)
            }
            HealthAction::ReseedFromBackup => {
                self.log_batch(&report, &label, LogAction::Abort)?;
                self.halted = true;
                Err(Error::AllSourcesFailed)
            }
        }
    }

    fn log_checks(&self, r: &HealthReport, source: &str) -> Result<()> {
        let fails = |c: Check| {
            if r.failed_checks.contains(&c) {
                Verdict::Fail
            } else {
                Verdict::Pass
            }
        };
        if r.verdict == Verdict::Pass {
            return Ok(());
        }
        let now = Utc::now();
        for (check, stat, value) in [
            (Check::Monobit, r.monobit_p, r.monobit_p),
            (Check::Runs, r.runs_p, r.runs_p),
            (Check::Repetition, r.longest_repeat as f64, self.policy.max_run as f64),
        ] {
            self.log.append(LogRecord {
                time: now,
                batch_id: r.batch_id,
                source: source.to_owned(),
                check: check.name().into(),
                statistic: stat,
                value,
                verdict: fails(check),
                action: LogAction::None,
            })?;
        }
        Ok(())
    }

    fn log_batch(&self, r: &HealthReport, source: &str, action: LogAction) -> Result<()> {
        self.log.append(LogRecord {
            time: Utc::now(),
            batch_id: r.batch_id,
            source: source.to_owned(),
            check: "batch".into(),
            statistic: r.failed_checks.len() as f64,
            value: r.bits as f64,
            verdict: r.verdict,
            action,
        })
    }
}

impl BitSupply for GuardedSource {
    fn draw_bits(&mut self, n: usize) -> Result<RawBitstream> {
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        while self.buffer.len() < n {
            self.pump_batch()?;
        }
        Ok(RawBitstream {
            bits: self.buffer.split_front(n),
            source: self.label().to_owned(),
            drawn_at: std::time::Instant::now(),
        })
    }

    fn label(&self) -> &str {
        match (&self.backup, self.on_backup) {
            (Some(b), true) => b.label(),
            _ => self.primary.label(),
        }
    }
}
