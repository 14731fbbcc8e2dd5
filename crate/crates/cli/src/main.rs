use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use ringpsi::harness::{closed_form, oracle_intersection, planted_sets, simulate};
use ringpsi::transport::{connect_ring, RingEndpoints};
use ringpsi::{derive_params, run_party, PartyConfig, PartyRole, ProtocolParams, RotMode, SecurityConfig};
use ringpsi_cli::{format_elements, parse_elements, report_text};

#[derive(Parser)]
#[command(name = "mpsi", version, about = "Ring-topology multiparty private set intersection")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one party over TCP.
    Run(RunArgs),
    /// Print derived parameters and predicted traffic.
    Params(ParamsArgs),
    /// Write input files with a planted intersection.
    Gen(GenArgs),
    /// Run every party in this process.
    Simulate(SimulateArgs),
    /// Sweep set sizes and ring sizes, emit CSV.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct Security {
    /// Maximum set size N.
    #[arg(long)]
    set_size: usize,
    #[arg(long, default_value_t = 128)]
    lambda: u32,
    #[arg(long, default_value_t = 40)]
    sigma: u32,
    /// Minimum selected weight; defaults to lambda.
    #[arg(long)]
    d: Option<u32>,
    #[arg(long, default_value = "seedot")]
    rot: RotMode,
}

impl Security {
    fn config(&self) -> Result<SecurityConfig> {
        Ok(SecurityConfig::new(self.lambda, self.sigma, self.d.unwrap_or(self.lambda))?)
    }

    fn params(&self, parties: usize) -> Result<ProtocolParams> {
        Ok(derive_params(self.set_size, parties, self.config()?)?)
    }
}

#[derive(Args)]
struct RunArgs {
    /// 1-based ring position; 1 is the leader.
    #[arg(long)]
    index: usize,
    #[arg(long)]
    parties: usize,
    /// Expected role, checked against the index.
    #[arg(long)]
    role: Option<PartyRole>,
    /// Address to accept the predecessor on (for the leader, the terminal assistant).
    #[arg(long)]
    listen: String,
    /// Successor address; not used by the terminal assistant.
    #[arg(long)]
    next: Option<String>,
    /// The leader's listen address; terminal assistant only.
    #[arg(long)]
    leader_return: Option<String>,
    #[arg(long)]
    input: PathBuf,
    /// Where the leader writes the intersection.
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    sec: Security,
    #[arg(long)]
    seed: Option<u64>,
    /// Connection window and per-read timeout.
    #[arg(long, default_value_t = 60)]
    timeout_secs: u64,
}

#[derive(Args)]
struct ParamsArgs {
    #[arg(long)]
    parties: usize,
    #[command(flatten)]
    sec: Security,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    parties: usize,
    #[arg(long)]
    set_size: usize,
    #[arg(long)]
    overlap: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for party1.txt .. partyN.txt.
    #[arg(long)]
    dir: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    parties: usize,
    #[command(flatten)]
    sec: Security,
    /// Directory with party1.txt .. partyN.txt; random sets otherwise.
    #[arg(long)]
    input_dir: Option<PathBuf>,
    /// Planted overlap for random sets; defaults to N/4.
    #[arg(long)]
    overlap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// log2 of the set sizes.
    #[arg(long, value_delimiter = ',', default_value = "8,10,12")]
    log_sizes: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_value = "3,4,5")]
    parties: Vec<usize>,
    #[arg(long, default_value_t = 128)]
    lambda: u32,
    #[arg(long, default_value_t = 40)]
    sigma: u32,
    #[arg(long)]
    d: Option<u32>,
    #[arg(long, default_value = "seedot")]
    rot: RotMode,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CSV destination; stdout if absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("MPSI_LOG", "warn")).init();
    match Cli::parse().cmd {
        Command::Run(a) => cmd_run(a),
        Command::Params(a) => cmd_params(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn read_elements(path: &Path) -> Result<Vec<Vec<u8>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_elements(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let params = a.sec.params(a.parties)?;
    let cfg = PartyConfig::new(a.index, params, a.sec.rot)?.with_seed(a.seed);
    let role = cfg.role();
    if let Some(r) = a.role {
        if r != role {
            bail!("--role {} does not match index {} of {} ({})", r.name(), a.index, a.parties, role.name());
        }
    }
    let next = match (role, a.next, a.leader_return) {
        (PartyRole::TerminalAssistant, None, Some(addr)) => addr,
        (PartyRole::TerminalAssistant, _, _) => bail!("the terminal assistant needs --leader-return and no --next"),
        (_, Some(addr), None) => addr,
        (_, _, _) => bail!("the {} needs --next and no --leader-return", role.name()),
    };
    if role == PartyRole::Leader && a.output.is_none() {
        bail!("the leader needs --output");
    }
    let set = read_elements(&a.input)?;
    let window = Duration::from_secs(a.timeout_secs);
    let endpoints = RingEndpoints { listen: a.listen, next };
    let mut ring = connect_ring(&endpoints, window)?;
    info!("party {}: ring connected", a.index);
    let out = run_party(&set, &cfg, &mut ring)?;
    let mut metrics = report_text(&out.report);
    if let (Some(inter), Some(path)) = (&out.intersection, &a.output) {
        write_file(path, &format_elements(inter))?;
        metrics.push_str(&format!("intersection_size={}\n", inter.len()));
    }
    print!("{metrics}");
    Ok(())
}

fn cmd_params(a: ParamsArgs) -> Result<()> {
    let params = a.sec.params(a.parties)?;
    print!("{}", params.canonical_text());
    let cf = closed_form(&params, a.sec.rot);
    for (i, (s, r)) in cf.sent.iter().zip(&cf.received).enumerate() {
        println!("predicted.party.{}.sent={s}", i + 1);
        println!("predicted.party.{}.received={r}", i + 1);
    }
    println!("predicted.ot_bytes_per_edge={}", cf.ot_per_edge);
    println!("predicted.total_sent={}", cf.total_sent());
    println!("predicted.total_with_ot={}", cf.total_with_ot());
    Ok(())
}

fn seed_or_random(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| rand::rngs::OsRng.next_u64())
}

/// Random elements rendered as printable hex strings.
fn printable(sets: Vec<Vec<Vec<u8>>>) -> Vec<Vec<Vec<u8>>> {
    sets.into_iter()
        .map(|s| s.into_iter().map(|x| hex::encode(x).into_bytes()).collect())
        .collect()
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    if a.overlap > a.set_size {
        bail!("overlap {} exceeds set size {}", a.overlap, a.set_size);
    }
    let seed = seed_or_random(a.seed);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (sets, common) = planted_sets(a.parties, a.set_size, a.overlap, &mut rng);
    fs::create_dir_all(&a.dir)?;
    for (i, s) in printable(sets).iter().enumerate() {
        write_file(&a.dir.join(format!("party{}.txt", i + 1)), &format_elements(s))?;
    }
    print!("{}", format_elements(&printable(vec![common])[0]));
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let params = a.sec.params(a.parties)?;
    let seed = seed_or_random(a.seed);
    let sets = match &a.input_dir {
        Some(dir) => (1..=a.parties)
            .map(|i| read_elements(&dir.join(format!("party{i}.txt"))))
            .collect::<Result<Vec<_>>>()?,
        None => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let overlap = a.overlap.unwrap_or(a.sec.set_size / 4);
            printable(planted_sets(a.parties, a.sec.set_size, overlap, &mut rng).0)
        }
    };
    let report = simulate(&sets, &params, a.sec.rot, seed)?;
    let matches = report.intersection == oracle_intersection(&sets);
    print!("{}", report.to_text());
    println!("oracle_match={matches}");
    if let Some(path) = &a.output {
        write_file(path, &format_elements(&report.intersection))?;
    }
    if !matches {
        bail!("intersection differs from the plaintext oracle");
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let sec = SecurityConfig::new(a.lambda, a.sigma, a.d.unwrap_or(a.lambda))?;
    let mut csv = String::from(
        "parties,set_size,rows,cols,ell2,rot,leader_sent,middle_sent,terminal_sent,total_sent,predicted_total,ot_bytes,wall_ms\n",
    );
    for &log_n in &a.log_sizes {
        for &n in &a.parties {
            let set_size = 1usize << log_n;
            let params = derive_params(set_size, n, sec)?;
            let mut rng = ChaCha20Rng::seed_from_u64(a.seed);
            let (sets, _) = planted_sets(n, set_size, set_size / 4, &mut rng);
            let start = Instant::now();
            let r = simulate(&sets, &params, a.rot, a.seed)?;
            let wall = start.elapsed().as_secs_f64() * 1e3;
            let sent: Vec<u64> = r.parties.iter().map(|p| p.bytes_sent()).collect();
            let middle = if n > 2 { sent[1].to_string() } else { String::new() };
            let ot: u64 = r.parties.iter().map(|p| p.ot_bytes()).sum::<u64>() / 2;
            csv.push_str(&format!(
                "{n},{set_size},{},{},{},{},{},{middle},{},{},{},{ot},{wall:.1}\n",
                params.rows,
                params.cols,
                params.ell2,
                a.rot,
                sent[0],
                sent[n - 1],
                r.total_bytes_sent(),
                closed_form(&params, a.rot).total_sent(),
            ));
            info!("bench n={n} N=2^{log_n} done in {wall:.0} ms");
        }
    }
    match &a.output {
        Some(path) => write_file(path, &csv),
        None => Ok(std::io::stdout().write_all(csv.as_bytes())?),
    }
}
