use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qeaes_core::aes_core::expand_key;
use qeaes_core::conditioning::von_neumann_bits;
use qeaes_core::container::{ctr_apply, decrypt_message, encrypt_message, open, seal};
use qeaes_core::entropy_source::{open_source, BitSupply, SourceDescriptor, SourceHandle};
use qeaes_core::health::{guard_stream, EventLog, GuardedSource, HealthAction, HealthPolicy, LogAction, Verdict};
use qeaes_core::lifecycle::{now_unix, EpochInfo, Keystore, RekeyPolicy};
use qeaes_core::qe_schedule::{to_round_keys, KeySource, Mode};
use qeaes_core::stats_suite::{ent_metrics, nist, nist_subset, NistTest};
use qeaes_core::BitBuf;
use serde_json::json;

/// Quantum-enabled AES-256: key generation, epoch management, file
/// encryption and randomness testing.
#[derive(Parser, Debug)]
#[command(name = "qeaes", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Create a keystore holding a freshly derived first epoch.
    Keygen {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long, value_enum, default_value = "p")]
        mode: ModeArg,
        /// Label bound into the key derivation.
        #[arg(long, default_value = "default")]
        context: String,
        #[command(flatten)]
        entropy: EntropyArgs,
    },
    /// Retire the active epoch and derive a new one with the same mode and context.
    Rekey {
        #[command(flatten)]
        store: StoreArg,
        #[command(flatten)]
        entropy: EntropyArgs,
    },
    /// Securely erase a retired epoch.
    Erase {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long)]
        epoch: u64,
        /// Source of the random overwrite pass.
        #[arg(long, default_value = "os")]
        source: String,
    },
    /// Encrypt a file under the active epoch.
    Encrypt {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        /// Switch the keystore to this mode (with a fresh epoch) before encrypting.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Rekey once the active epoch has encrypted this many blocks (0 disables).
        #[arg(long, default_value_t = 1 << 32)]
        t_block: u64,
        /// Rekey once the active epoch is this many seconds old (0 disables).
        #[arg(long, default_value_t = 0)]
        t_time: u64,
        #[command(flatten)]
        entropy: EntropyArgs,
    },
    /// Authenticate and decrypt a container file.
    Decrypt {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// Run the ENT metrics or the NIST subset over a file of random bytes.
    EntropyTest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "ent")]
        suite: Suite,
        /// Number of NIST samples (default: as many as fit).
        #[arg(long)]
        samples: Option<usize>,
        /// Bytes per NIST sample.
        #[arg(long, default_value_t = 125_000)]
        sample_bytes: usize,
        #[arg(long, value_enum, default_value = "text")]
        report: Report,
    },
    /// Pull batches through the health checks and log every decision.
    Monitor {
        #[arg(long, default_value = "os")]
        source: String,
        #[arg(long)]
        backup: Option<String>,
        /// Comma-separated `alpha=`, `batch=`, `max_run=`, `action=reseed|halt`.
        #[arg(long, default_value = "")]
        policy: String,
        #[arg(long, default_value_t = 16)]
        batches: u64,
        /// Append event records to this file.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        report: Report,
    },
    /// Measure cipher and extractor throughput.
    Bench {
        /// Buffer size for the cipher runs.
        #[arg(long, default_value_t = 64)]
        mib: usize,
        /// Source for the benchmark key.
        #[arg(long, default_value = "os")]
        source: String,
        #[arg(long, value_enum, default_value = "text")]
        report: Report,
    },
}

#[derive(Args, Debug)]
struct StoreArg {
    /// Keystore path.
    #[arg(long, env = "QEAES_KEYSTORE")]
    keystore: PathBuf,
}

#[derive(Args, Debug)]
struct EntropyArgs {
    /// Quantum source: sim:<seed>[:bias], file:<path> or os.
    #[arg(long, default_value = "os")]
    source: String,
    /// Backup for the quantum source if it fails its health checks.
    #[arg(long)]
    backup: Option<String>,
    /// Classical source for hybrid mode.
    #[arg(long, default_value = "os")]
    classical: String,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModeArg {
    P,
    H,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::P => Mode::Qep,
            ModeArg::H => Mode::Qeh,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Suite {
    Ent,
    Nist,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Report {
    Json,
    Text,
}

enum Failure {
    Usage(String),
    Op(qeaes_core::Error),
}

impl From<qeaes_core::Error> for Failure {
    fn from(e: qeaes_core::Error) -> Self {
        Failure::Op(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Op(e.into())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("{}", json!({"error": "UsageError", "message": msg}));
            ExitCode::from(1)
        }
        Err(Failure::Op(e)) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Keygen { store, mode, context, entropy } => {
            let mut src = entropy.open()?;
            let material = src.derive(mode.into(), &context)?;
            let ks = Keystore::create(&store.keystore, material, now_unix())?;
            print_epochs("created", &ks);
        }
        Command::Rekey { store, entropy } => {
            let mut src = entropy.open()?;
            let mut ks = Keystore::open(&store.keystore)?;
            ks.rekey(now_unix(), |m, c| src.derive(m, c))?;
            print_epochs("rekeyed", &ks);
        }
        Command::Erase { store, epoch, source } => {
            let mut src = open_source(&parse_source(&source)?)?;
            let mut ks = Keystore::open(&store.keystore)?;
            ks.secure_erase(epoch, |buf| src.fill_bytes(buf))?;
            print_epochs("erased", &ks);
        }
        Command::Encrypt { store, input, output, mode, t_block, t_time, entropy } => {
            let policy = RekeyPolicy::new(t_block, t_time).map_err(|e| Failure::Usage(e.to_string()))?;
            let mut src = entropy.open()?;
            let mut ks = Keystore::open(&store.keystore)?;
            let plaintext = fs::read(&input)?;
            if let Some(m) = mode.map(Mode::from) {
                let active = ks.active()?;
                if active.mode != m {
                    let ctx = active.context.clone();
                    let fresh = src.derive(m, &ctx)?;
                    ks.install(fresh, now_unix())?;
                }
            }
            let c = encrypt_message(&plaintext, &mut ks, &policy, &mut src)?;
            fs::write(&output, c.to_bytes())?;
            println!("encrypted {} bytes under epoch {}", plaintext.len(), c.epoch_id);
        }
        Command::Decrypt { store, input, output } => {
            let ks = Keystore::open(&store.keystore)?;
            let bytes = fs::read(&input)?;
            let plaintext = decrypt_message(&bytes, &ks)?;
            fs::write(&output, &plaintext)?;
            println!("decrypted {} bytes", plaintext.len());
        }
        Command::EntropyTest { input, suite, samples, sample_bytes, report } => {
            entropy_test(&input, suite, samples, sample_bytes, report)?;
        }
        Command::Monitor { source, backup, policy, batches, log, report } => {
            monitor(&source, backup.as_deref(), &policy, batches, log.as_deref(), report)?;
        }
        Command::Bench { mib, source, report } => bench(mib, &source, report)?,
    }
    Ok(())
}

fn parse_source(s: &str) -> CliResult<SourceDescriptor> {
    s.parse().map_err(|e: qeaes_core::Error| Failure::Usage(e.to_string()))
}

impl EntropyArgs {
    fn open(&self) -> CliResult<KeySource> {
        let primary = parse_source(&self.source)?;
        let backup = self.backup.as_deref().map(parse_source).transpose()?;
        let classical = parse_source(&self.classical)?;
        let guarded = guard(&primary, backup.as_ref(), HealthPolicy::default(), EventLog::in_memory())?;
        Ok(KeySource::new(guarded).with_classical(open_source(&classical)?))
    }
}

fn guard(
    primary: &SourceDescriptor,
    backup: Option<&SourceDescriptor>,
    policy: HealthPolicy,
    log: EventLog,
) -> CliResult<GuardedSource> {
    let backup: Option<SourceHandle> = backup.map(open_source).transpose()?;
    Ok(guard_stream(open_source(primary)?, policy, backup, log)?)
}

fn print_epochs(what: &str, ks: &Keystore) {
    println!("{what}: {}", ks.path().map(|p| p.display().to_string()).unwrap_or_default());
    for EpochInfo { epoch_id, status, mode, context, created_at } in ks.epochs() {
        println!("  epoch {epoch_id}\t{status:?}\t{mode}\t{context}\tcreated {created_at}");
    }
}

fn entropy_test(input: &Path, suite: Suite, samples: Option<usize>, sample_bytes: usize, report: Report) -> CliResult {
    let data = fs::read(input)?;
    let value = match suite {
        Suite::Ent => {
            let r = ent_metrics(&data)?;
            if report == Report::Text {
                println!("Entropy = {:.6} bits per byte.", r.bits_per_byte);
                println!(
                    "Chi square distribution for {} samples is {:.2}, and randomly would exceed this value {:.2} percent of the times.",
                    r.bytes,
                    r.chi_square,
                    100.0 * r.chi_square_p
                );
                println!("Monte Carlo value for Pi is {:.9} (error {:.4} percent).", r.monte_carlo_pi, r.pi_error_pct);
                match r.serial_correlation {
                    Some(c) => println!("Serial correlation coefficient is {c:.6}."),
                    None => println!("Serial correlation coefficient is undefined (all values equal)."),
                }
                return Ok(());
            }
            json!({
                "suite": "ent",
                "bytes": r.bytes,
                "entropy_bits_per_byte": r.bits_per_byte,
                "chi_square": r.chi_square,
                "chi_square_p": r.chi_square_p,
                "monte_carlo_pi": r.monte_carlo_pi,
                "pi_error_pct": r.pi_error_pct,
                "serial_correlation": r.serial_correlation,
            })
        }
        Suite::Nist => {
            if sample_bytes == 0 {
                return Err(Failure::Usage("--sample-bytes must be positive".into()));
            }
            let n = samples.unwrap_or(data.len() / sample_bytes);
            if n == 0 || n * sample_bytes > data.len() {
                return Err(qeaes_core::Error::InputTooShort {
                    needed: n.max(1) * sample_bytes,
                    got: data.len(),
                }
                .into());
            }
            let bufs: Vec<BitBuf> = data.chunks_exact(sample_bytes).take(n).map(|c| BitBuf::from_bytes(c.to_vec())).collect();
            let r = nist_subset(&bufs)?;
            let mut tests = serde_json::Map::new();
            for test in NistTest::ALL {
                let o = r.outcome(test);
                let ps: Vec<f64> = o.p_values.iter().map(|(_, p)| *p).collect();
                tests.insert(
                    test.name().into(),
                    json!({
                        "pass_rate": o.pass_rate,
                        "ks_statistic": nist::ks_uniform_statistic(&ps),
                        "p_values": ps,
                    }),
                );
            }
            if report == Report::Text {
                println!("{n} samples of {sample_bytes} bytes, pass threshold p >= {}", nist::PASS_THRESHOLD);
                println!("KS critical value at 1%: {:.4}", nist::ks_critical_1pct(n));
                for (name, t) in &tests {
                    println!(
                        "{name:<24} pass rate {:>7.2}%  KS {:.4}",
                        100.0 * t["pass_rate"].as_f64().unwrap_or(0.0),
                        t["ks_statistic"].as_f64().unwrap_or(0.0)
                    );
                }
                return Ok(());
            }
            json!({"suite": "nist", "samples": n, "sample_bytes": sample_bytes, "tests": tests})
        }
    };
    println!("{value}");
    Ok(())
}

fn parse_policy(s: &str) -> CliResult<HealthPolicy> {
    let mut p = HealthPolicy::default();
    for item in s.split(',').filter(|i| !i.is_empty()) {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("policy item `{item}` is not key=value")))?;
        let bad = || Failure::Usage(format!("bad policy value `{item}`"));
        match k {
            "alpha" => p.alpha = v.parse().map_err(|_| bad())?,
            "batch" => p.batch_bits = v.parse().map_err(|_| bad())?,
            "max_run" => p.max_run = v.parse().map_err(|_| bad())?,
            "action" => {
                p.action = match v {
                    "reseed" => HealthAction::ReseedFromBackup,
                    "halt" => HealthAction::Halt,
                    _ => return Err(bad()),
                }
            }
            _ => return Err(Failure::Usage(format!("unknown policy key `{k}`"))),
        }
    }
    p.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(p)
}

fn monitor(source: &str, backup: Option<&str>, policy: &str, batches: u64, log: Option<&Path>, report: Report) -> CliResult {
    let primary = parse_source(source)?;
    let backup = backup.map(parse_source).transpose()?;
    let policy = parse_policy(policy)?;
    let events = match log {
        Some(path) => EventLog::with_file(path)?,
        None => EventLog::in_memory(),
    };
    let mut g = guard(&primary, backup.as_ref(), policy, events.clone())?;

    let mut outcome = Ok(());
    for _ in 0..batches {
        if let Err(e) = g.pump_batch() {
            outcome = Err(e);
            break;
        }
    }
    let passed = g.reports().iter().filter(|r| r.verdict == Verdict::Pass).count();
    let summary = json!({
        "batches": g.reports().len(),
        "passed": passed,
        "failed": g.reports().len() - passed,
        "reseeds": events.count_action(LogAction::Reseed),
        "on_backup": g.on_backup(),
        "source": g.label(),
        "halted": outcome.is_err(),
    });
    match report {
        Report::Json => println!("{summary}"),
        Report::Text => {
            if log.is_none() {
                for r in events.records() {
                    println!("{}", r.to_line());
                }
            }
            println!(
                "{} batches, {} passed, {} reseeds, now reading {}",
                g.reports().len(),
                passed,
                summary["reseeds"],
                g.label()
            );
        }
    }
    outcome.map_err(Failure::Op)
}

fn mib_per_s(bytes: usize, secs: f64) -> f64 {
    bytes as f64 / (1 << 20) as f64 / secs
}

fn bench(mib: usize, source: &str, report: Report) -> CliResult {
    if mib == 0 {
        return Err(Failure::Usage("--mib must be positive".into()));
    }
    let desc = parse_source(source)?;
    let mut src = KeySource::new(guard(&desc, None, HealthPolicy::default(), EventLog::in_memory())?);
    let material = src.derive(Mode::Qep, "bench")?;
    let len = mib << 20;
    let mut buf = vec![0u8; len];
    let mut sim = open_source(&SourceDescriptor::simulated(1, 0.5))?;
    sim.fill_bytes(&mut buf)?;
    let nonce = [7u8; 12];

    let t = Instant::now();
    let sealed = seal(&material, nonce, &buf)?;
    let enc = mib_per_s(len, t.elapsed().as_secs_f64());
    let t = Instant::now();
    let back = open(&material, &sealed)?;
    let dec = mib_per_s(len, t.elapsed().as_secs_f64());
    if back != buf {
        return Err(qeaes_core::Error::Malformed("benchmark roundtrip mismatch".into()).into());
    }

    let whitened = to_round_keys(&material);
    let plain = expand_key(&material.master);
    let (mut best_w, mut best_z) = (0f64, 0f64);
    // identical code paths, so alternate and keep the best of several runs
    for _ in 0..5 {
        let t = Instant::now();
        ctr_apply(&whitened, &nonce, &mut buf)?;
        best_w = best_w.max(mib_per_s(len, t.elapsed().as_secs_f64()));
        let t = Instant::now();
        ctr_apply(&plain, &nonce, &mut buf)?;
        best_z = best_z.max(mib_per_s(len, t.elapsed().as_secs_f64()));
    }

    let raw = sim.draw_bits(32 << 20)?;
    let t = Instant::now();
    let out = von_neumann_bits(&raw.bits)?;
    let secs = t.elapsed().as_secs_f64();
    let ext_in = raw.count() as f64 / 1e6 / secs;
    let ext_out = out.bits.len() as f64 / 1e6 / secs;

    let r = json!({
        "buffer_mib": mib,
        "encrypt_mib_s": enc,
        "decrypt_mib_s": dec,
        "ctr_whitened_mib_s": best_w,
        "ctr_zero_whitening_mib_s": best_z,
        "whitening_ratio": best_w / best_z,
        "extractor_input_mbit_s": ext_in,
        "extractor_output_mbit_s": ext_out,
    });
    match report {
        Report::Json => println!("{r}"),
        Report::Text => {
            println!("buffer            {mib} MiB");
            println!("encrypt           {enc:.1} MiB/s");
            println!("decrypt           {dec:.1} MiB/s");
            println!("ctr whitened      {best_w:.1} MiB/s");
            println!("ctr zero-whiten   {best_z:.1} MiB/s (ratio {:.3})", best_w / best_z);
            println!("extractor         {ext_in:.1} Mbit/s in, {ext_out:.1} Mbit/s out (bias 0.5)");
        }
    }
    Ok(())
}
