use std::fs;
use std::io::Write as _;
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pufrla_core::ecc::BchCode;
use pufrla_core::harness::{
    device_session, enroll_system, run_attack, run_metrics, serve_session, AttackMode, Direction, Report,
    StreamTransport, SystemConfig, Testbed, Transcript,
};
use pufrla_core::protocol::{Device, DeviceState, Server};
use pufrla_core::puf::PufInstance;
use pufrla_core::store::Database;

#[derive(Parser)]
#[command(name = "pufrla", version, about = "PUF-based mutual authentication simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Enroll one device: write the sealed database, device state and config.
    Enroll {
        /// RN stream seed, 32 hex digits.
        #[arg(long)]
        seed: Option<String>,
        #[arg(long)]
        m: Option<u64>,
        /// Decimal or 0x-prefixed hex.
        #[arg(long, value_parser = parse_u64)]
        device_id: Option<u64>,
        /// 32 hex digits.
        #[arg(long)]
        master_secret: Option<String>,
        #[arg(long, default_value = "pufrla.db")]
        db: PathBuf,
        #[arg(long, default_value = "device.state")]
        device_state: PathBuf,
        /// Where the resolved config is written.
        #[arg(long, default_value = "pufrla.toml")]
        config: PathBuf,
        /// Base config to start from.
        #[arg(long)]
        from: Option<PathBuf>,
        /// Also write the pre-seal records, one hex line per row.
        #[arg(long)]
        records_out: Option<PathBuf>,
    },
    /// Serve authentication sessions over TCP, one per connection.
    Serve {
        #[arg(long, default_value = "pufrla.db")]
        db: PathBuf,
        #[arg(long, default_value = "pufrla.toml")]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        /// Exit after this many sessions.
        #[arg(long)]
        sessions: Option<u64>,
    },
    /// Run the device side against a server over TCP.
    Device {
        #[arg(long, default_value = "device.state")]
        state: PathBuf,
        #[arg(long, default_value = "pufrla.toml")]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        connect: String,
        #[arg(long, default_value_t = 1)]
        rounds: u64,
        /// Calibrate PUF noise to this bit error rate.
        #[arg(long)]
        ber: Option<f64>,
    },
    /// Authentication rounds over the in-process transport.
    Auth {
        #[arg(long, default_value_t = 100)]
        rounds: usize,
        #[arg(long, default_value_t = 0.0)]
        ber: f64,
        #[arg(long, default_value = "pufrla.db")]
        db: PathBuf,
        #[arg(long, default_value = "device.state")]
        device_state: PathBuf,
        #[arg(long, default_value = "pufrla.toml")]
        config: PathBuf,
        /// Minimum accepted fraction for PASS.
        #[arg(long)]
        min_success: Option<f64>,
        /// Write every frame as `dir hex` lines.
        #[arg(long)]
        transcript_out: Option<PathBuf>,
    },
    /// Run an adversary scenario against a freshly enrolled system.
    Attack {
        #[arg(long)]
        mode: AttackMode,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        m: Option<u64>,
    },
    /// Population uniqueness, reliability and randomness.
    Metrics {
        #[arg(long, default_value_t = 10)]
        instances: usize,
        #[arg(long, default_value_t = 500)]
        crps: usize,
        #[arg(long, default_value_t = 10)]
        samples: usize,
        #[arg(long, default_value_t = 0.125)]
        ber: f64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the sealed database rows.
    DbDump {
        #[arg(long, default_value = "pufrla.db")]
        db: PathBuf,
    },
}

fn parse_u64(s: &str) -> Result<u64, String> {
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|e| format!("{s:?}: {e}"))
}

fn parse_u128_hex(s: &str) -> Result<u128> {
    let hex = s.strip_prefix("0x").unwrap_or(s);
    if hex.is_empty() || hex.len() > 32 {
        bail!("expected up to 32 hex digits, got {s:?}");
    }
    u128::from_str_radix(hex, 16).with_context(|| format!("bad hex {s:?}"))
}

fn load_config(path: &Path) -> Result<SystemConfig> {
    if !path.exists() {
        bail!("{} not found; run `pufrla enroll` first", path.display());
    }
    SystemConfig::load(path)
}

fn load_state(path: &Path) -> Result<DeviceState> {
    let bytes = fs::read(path).with_context(|| format!("cannot read device state {}; run `pufrla enroll` first", path.display()))?;
    Ok(DeviceState::from_bytes(&bytes)?)
}

fn load_db(path: &Path) -> Result<Database> {
    if !path.exists() {
        bail!("{} not found; run `pufrla enroll` first", path.display());
    }
    Ok(Database::load(path)?)
}

fn write_transcript(path: &Path, transcripts: &[Transcript]) -> Result<()> {
    let mut out = String::new();
    for (i, t) in transcripts.iter().enumerate() {
        for (dir, frame) in &t.frames {
            let d = match dir {
                Direction::ToDevice => "s2d",
                Direction::ToServer => "d2s",
            };
            let hex: String = frame.iter().map(|b| format!("{b:02x}")).collect();
            out.push_str(&format!("{i} {d} {hex}\n"));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_enroll(
    seed: Option<String>,
    m: Option<u64>,
    device_id: Option<u64>,
    master_secret: Option<String>,
    db_path: &Path,
    state_path: &Path,
    config_path: &Path,
    from: Option<PathBuf>,
    records_out: Option<PathBuf>,
) -> Result<Report> {
    let mut cfg = match from {
        Some(p) => SystemConfig::load(&p)?,
        None => SystemConfig::default(),
    };
    if let Some(s) = seed {
        cfg.protocol.seed = parse_u128_hex(&s)?;
    }
    if let Some(m) = m {
        cfg.protocol.m = m;
    }
    if let Some(id) = device_id {
        cfg.device_id = id;
    }
    if let Some(ms) = master_secret {
        cfg.master_secret = parse_u128_hex(&ms)?;
    }
    cfg.protocol.validate()?;
    let (db, enrollment) = enroll_system(&cfg)?;
    db.save(db_path)?;
    fs::write(state_path, enrollment.device_state.to_bytes())?;
    cfg.save(config_path)?;
    if let Some(p) = records_out {
        let lines: String = enrollment
            .records
            .iter()
            .map(|r| r.to_bytes().iter().map(|b| format!("{b:02x}")).collect::<String>() + "\n")
            .collect();
        fs::write(p, lines)?;
    }
    let mut r = Report::new();
    r.kv("command", "enroll");
    r.kv("device_id", format!("{:#018x}", cfg.device_id));
    r.kv("m", cfg.protocol.m);
    r.kv("rows", db.row_count(cfg.device_id));
    r.kv("db", db_path.display());
    r.kv("device_state", state_path.display());
    r.kv("config", config_path.display());
    r.require(db.row_count(cfg.device_id) as u64 == cfg.protocol.pairs());
    Ok(r)
}

fn cmd_serve(db_path: &Path, config_path: &Path, listen: &str, sessions: Option<u64>) -> Result<Report> {
    let cfg = load_config(config_path)?;
    let db = load_db(db_path)?;
    let server = Server::new(Arc::new(db), &cfg.master(), Arc::new(BchCode::standard()), cfg.protocol.clone())?;
    let listener = TcpListener::bind(listen).with_context(|| format!("cannot listen on {listen}"))?;
    println!("listening={}", listener.local_addr()?);
    std::io::stdout().flush()?;
    let master_rng = Arc::new(Mutex::new(ChaCha8Rng::seed_from_u64(cfg.seeds.server)));
    let stats = Arc::new(Mutex::new((0u64, 0u64)));
    let mut handles = Vec::new();
    for (k, conn) in listener.incoming().enumerate() {
        let stream = match conn {
            Ok(s) => s,
            Err(e) => {
                eprintln!("accept failed: {e}");
                continue;
            }
        };
        let server = server.clone();
        let master_rng = Arc::clone(&master_rng);
        let stats = Arc::clone(&stats);
        handles.push(thread::spawn(move || {
            let seed = master_rng.lock().expect("rng lock").next_u64();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let _ = stream.set_read_timeout(Some(Duration::from_secs(10)));
            let mut session = server.session();
            let mut transport = StreamTransport::new(stream);
            let verdict = serve_session(&mut session, &mut transport, &mut rng, None);
            if verdict.is_err() {
                session.abort();
            }
            let accepted = session.accepted() == Some(true);
            let reason = session.reject_reason().map_or("none", |r| r.as_str());
            println!("session={k} accepted={accepted} reason={reason}");
            let mut s = stats.lock().expect("stats lock");
            s.0 += 1;
            s.1 += accepted as u64;
        }));
        if sessions.is_some_and(|n| k as u64 + 1 >= n) {
            break;
        }
    }
    for h in handles {
        let _ = h.join();
    }
    let (total, accepted) = *stats.lock().expect("stats lock");
    let mut r = Report::new();
    r.kv("command", "serve");
    r.kv("sessions", total);
    r.kv("accepted", accepted);
    Ok(r)
}

fn cmd_device(state_path: &Path, config_path: &Path, connect: &str, rounds: u64, ber: Option<f64>) -> Result<Report> {
    let cfg = load_config(config_path)?;
    let state = load_state(state_path)?;
    let mut puf = PufInstance::new(cfg.puf.clone())?;
    if let Some(b) = ber {
        let sigma = puf.calibrate_sigma(b)?;
        puf = puf.with_sigma(sigma)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.device ^ state.pair_index);
    let mut device = Device::new(cfg.protocol.clone(), puf, state)?;
    let mut accepted = 0u64;
    for _ in 0..rounds {
        let stream = TcpStream::connect(connect).with_context(|| format!("cannot connect to {connect}"))?;
        stream.set_read_timeout(Some(Duration::from_millis(cfg.protocol.tau_ms.max(1000) * 5)))?;
        let mut transport = StreamTransport::new(stream);
        let verdict = device_session(&mut device, &mut transport, &mut rng)?;
        accepted += (verdict == Some(true)) as u64;
        fs::write(state_path, device.state().to_bytes())?;
    }
    let mut r = Report::new();
    r.kv("command", "device");
    r.kv("rounds", rounds);
    r.kv("accepted", accepted);
    r.kv("pair_index", device.state().pair_index);
    r.kv("locked", device.is_locked());
    r.require(accepted == rounds);
    Ok(r)
}

#[allow(clippy::too_many_arguments)]
fn cmd_auth(
    rounds: usize,
    ber: f64,
    db_path: &Path,
    state_path: &Path,
    config_path: &Path,
    min_success: Option<f64>,
    transcript_out: Option<PathBuf>,
) -> Result<Report> {
    let cfg = load_config(config_path)?;
    let state = load_state(state_path)?;
    let db = load_db(db_path)?;
    let mut bed = Testbed::from_parts(cfg, db, state)?;
    let sigma = bed.set_ber(ber)?;
    let mut transcripts = Vec::new();
    let mut accepted = 0usize;
    for _ in 0..rounds {
        let out = bed.run_round();
        accepted += out.accepted as usize;
        if transcript_out.is_some() {
            transcripts.push(out.transcript);
        }
    }
    fs::write(state_path, bed.device().state().to_bytes())?;
    if let Some(p) = transcript_out {
        write_transcript(&p, &transcripts)?;
    }
    let success = if rounds == 0 { 1.0 } else { accepted as f64 / rounds as f64 };
    let min = min_success.unwrap_or(if ber == 0.0 { 1.0 } else { 0.99 });
    let mut r = Report::new();
    r.kv("command", "auth");
    r.kv("rounds", rounds);
    r.kv("ber", ber);
    r.kv("sigma", format!("{sigma:.6}"));
    r.kv("accepted", accepted);
    r.kv("success", format!("{success:.4}"));
    r.kv("min_success", min);
    r.require(success >= min);
    Ok(r)
}

fn cmd_attack(mode: AttackMode, trials: Option<u64>, config: Option<PathBuf>, m: Option<u64>) -> Result<Report> {
    let mut cfg = match config {
        Some(p) => SystemConfig::load(&p)?,
        None => SystemConfig::default(),
    };
    if let Some(m) = m {
        cfg.protocol.m = m;
    }
    let trials = trials.unwrap_or(match mode {
        AttackMode::Mitm => 1000,
        AttackMode::Bruteforce => 10_000,
        AttackMode::Replay => 10,
    });
    let report = run_attack(&cfg, mode, trials)?;
    let mut r = Report::new();
    r.kv("command", "attack");
    for (k, v) in report.to_report(cfg.protocol.omega).entries() {
        r.kv(k, v);
    }
    r.set_pass(report.passed(cfg.protocol.omega));
    Ok(r)
}

fn cmd_metrics(instances: usize, crps: usize, samples: usize, ber: f64, config: Option<PathBuf>) -> Result<Report> {
    let cfg = match config {
        Some(p) => SystemConfig::load(&p)?,
        None => SystemConfig::default(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.device);
    let m = run_metrics(&cfg.protocol, &cfg.puf, instances, crps, samples, ber, &mut rng)?;
    let mut r = Report::new();
    r.kv("command", "metrics");
    for (k, v) in m.to_report().entries() {
        r.kv(k, v);
    }
    r.set_pass(m.to_report().passed());
    Ok(r)
}

fn cmd_db_dump(db_path: &Path) -> Result<Report> {
    let db = load_db(db_path)?;
    let hex = |b: &[u8]| b.iter().map(|x| format!("{x:02x}")).collect::<String>();
    let mut r = Report::new();
    r.kv("command", "db-dump");
    for id in db.device_ids() {
        r.kv("device", format!("{id:#018x}"));
        r.kv("rows", db.row_count(id));
        for row in db.rows(id) {
            r.kv(
                "row",
                format!("{} {} {} {}", hex(&row.index_key), hex(&row.nonce.to_be_bytes()), hex(&row.ciphertext), hex(&row.tag)),
            );
        }
    }
    Ok(r)
}

fn run(cli: Cli) -> Result<Report> {
    match cli.cmd {
        Cmd::Enroll { seed, m, device_id, master_secret, db, device_state, config, from, records_out } => {
            cmd_enroll(seed, m, device_id, master_secret, &db, &device_state, &config, from, records_out)
        }
        Cmd::Serve { db, config, listen, sessions } => cmd_serve(&db, &config, &listen, sessions),
        Cmd::Device { state, config, connect, rounds, ber } => cmd_device(&state, &config, &connect, rounds, ber),
        Cmd::Auth { rounds, ber, db, device_state, config, min_success, transcript_out } => {
            cmd_auth(rounds, ber, &db, &device_state, &config, min_success, transcript_out)
        }
        Cmd::Attack { mode, trials, config, m } => cmd_attack(mode, trials, config, m),
        Cmd::Metrics { instances, crps, samples, ber, config } => cmd_metrics(instances, crps, samples, ber, config),
        Cmd::DbDump { db } => cmd_db_dump(&db),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(report) => {
            let _ = write!(std::io::stdout().lock(), "{report}");
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
