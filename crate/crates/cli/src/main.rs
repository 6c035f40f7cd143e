use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use partoram::remote::{self, RemoteStore};
use partoram::sim::{self, Axis, BoundParams, BoundsOptions, RunOptions, Workload, WorkloadKind};
use partoram::{BlockStore, FileStore, MemStore, OramConfig};

#[derive(Parser)]
#[command(name = "partoram", version, about = "Partitioned ORAM simulator and block server")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and print a CSV row.
    Simulate {
        #[command(flatten)]
        oram: OramArgs,
        #[command(flatten)]
        load: LoadArgs,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Add a wall_ms column (makes output run-dependent).
        #[arg(long)]
        wall_time: bool,
        /// Keep the data ORAM on a remote server.
        #[arg(long)]
        remote: Option<String>,
    },
    /// Check a run against the cache, load and scheduling bounds.
    ValidateBounds {
        #[command(flatten)]
        oram: OramArgs,
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        #[arg(long, default_value_t = 2.0)]
        c: f64,
        /// Requests in the full-system run (default 3N).
        #[arg(long)]
        ops: Option<u64>,
        #[arg(long, default_value_t = 10_000_000)]
        markov_steps: u64,
    },
    /// Replay a workload against the ORAM and a reference dictionary.
    Oracle {
        #[command(flatten)]
        oram: OramArgs,
        #[command(flatten)]
        load: LoadArgs,
        /// Skip the position-map update of this access (harness self-test).
        #[arg(long)]
        fault_at: Option<u64>,
    },
    /// Run a grid of experiments along one axis.
    Sweep {
        #[command(flatten)]
        oram: OramArgs,
        #[command(flatten)]
        load: LoadArgs,
        /// `nu` (eviction rate) or `k` (client storage of k·√N blocks).
        #[arg(long)]
        axis: Axis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Serve a block store over TCP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: String,
        #[arg(long, default_value = "mem")]
        backend: String,
        /// Directory of the file backend.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct OramArgs {
    /// Flat `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    block_size: Option<String>,
    #[arg(long)]
    partitions: Option<String>,
    #[arg(long)]
    nu: Option<String>,
    /// seq or rand.
    #[arg(long)]
    evict: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    piggyback: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    concurrent: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    recursive: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    compress: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    delete_on_read: Option<String>,
    #[arg(long)]
    recursion_threshold: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// full or metadata.
    #[arg(long)]
    payload: Option<String>,
    /// plain or compressed.
    #[arg(long)]
    posmap: Option<String>,
    /// random or prf.
    #[arg(long)]
    slot_choice: Option<String>,
    /// aead or sim.
    #[arg(long)]
    cipher: Option<String>,
    /// empirical, analytic[:k,c] or a fixed number.
    #[arg(long)]
    capacity: Option<String>,
    #[arg(long)]
    work_factor: Option<String>,
    #[arg(long)]
    seed: Option<String>,
}

impl OramArgs {
    fn config(&self) -> partoram::Result<OramConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| partoram::OramError::Config(format!("{}: {e}", path.display())))?;
                OramConfig::from_config_text(&text)?
            }
            None => OramConfig::default(),
        };
        let flags = [
            ("n", &self.n),
            ("block_size", &self.block_size),
            ("partitions", &self.partitions),
            ("nu", &self.nu),
            ("evict", &self.evict),
            ("piggyback", &self.piggyback),
            ("concurrent", &self.concurrent),
            ("recursive", &self.recursive),
            ("compression", &self.compress),
            ("delete_on_read", &self.delete_on_read),
            ("recursion_threshold", &self.recursion_threshold),
            ("alpha", &self.alpha),
            ("payload_mode", &self.payload),
            ("posmap", &self.posmap),
            ("slot_choice", &self.slot_choice),
            ("cipher", &self.cipher),
            ("capacity", &self.capacity),
            ("work_factor", &self.work_factor),
            ("seed", &self.seed),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct LoadArgs {
    /// round-robin, uniform, zipf[:s] or single-hot.
    #[arg(long, default_value = "round-robin")]
    workload: WorkloadKind,
    /// Number of requests (default 3N).
    #[arg(long)]
    ops: Option<u64>,
    #[arg(long, default_value_t = 0.5)]
    write_ratio: f64,
    #[arg(long, default_value_t = 0)]
    workload_seed: u64,
}

impl LoadArgs {
    fn workload(&self, cfg: &OramConfig) -> Workload {
        Workload::new(self.workload, self.ops.unwrap_or(3 * cfg.n))
            .write_ratio(self.write_ratio)
            .seed(self.workload_seed)
    }
}

fn emit(text: &str, path: &Option<PathBuf>) -> Result<(), String> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| format!("{}: {e}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<bool, String> {
    let err = |e: partoram::OramError| e.to_string();
    match cli.cmd {
        Command::Simulate { oram, load, csv, wall_time, remote } => {
            let cfg = oram.config().map_err(err)?;
            let workload = load.workload(&cfg);
            let store: Box<dyn BlockStore> = match remote {
                Some(addr) => Box::new(RemoteStore::connect(addr.as_str()).map_err(|e| e.to_string())?),
                None => Box::new(MemStore::new()),
            };
            let opts = RunOptions { wall_time, record_steps: false };
            let (record, _) = sim::run_experiment_on(&cfg, &workload, store, opts).map_err(err)?;
            emit(&sim::to_csv(&[record], wall_time), &csv)?;
            Ok(true)
        }
        Command::ValidateBounds { oram, k, c, ops, markov_steps } => {
            let cfg = oram.config().map_err(err)?;
            let opts = BoundsOptions { params: BoundParams { k, c }, ops, markov_steps };
            let report = sim::validate_bounds(&cfg, opts).map_err(err)?;
            if let Some(m) = &report.markov {
                println!(
                    "slot chain: p={} q={} rho={} tv={} mean={} expected={}",
                    sim::sig6(m.p),
                    sim::sig6(m.q),
                    sim::sig6(m.rho),
                    sim::sig6(m.tv_distance),
                    sim::sig6(m.empirical_mean),
                    sim::sig6(m.expected_mean)
                );
            }
            for chk in &report.checks {
                let tag = if chk.passed { "ok  " } else { "FAIL" };
                println!("{tag} {}: {} <= {}", chk.name, sim::sig6(chk.value), sim::sig6(chk.bound));
            }
            Ok(report.passed())
        }
        Command::Oracle { oram, load, fault_at } => {
            let cfg = oram.config().map_err(err)?;
            let rep = sim::run_oracle_check_with_fault(&cfg, &load.workload(&cfg), fault_at).map_err(err)?;
            match &rep.divergence {
                None => println!("pass: {} requests matched", rep.checked),
                Some(d) => println!("FAIL: {d}"),
            }
            Ok(rep.passed())
        }
        Command::Sweep { oram, load, axis, values, csv } => {
            let cfg = oram.config().map_err(err)?;
            let result = sim::run_sweep(&cfg, &load.workload(&cfg), axis, &values).map_err(err)?;
            emit(&result.to_csv(), &csv)?;
            eprintln!("monotone: {}", result.monotone);
            Ok(true)
        }
        Command::Serve { bind, backend, dir } => {
            let store: Box<dyn BlockStore> = match backend.as_str() {
                "mem" => Box::new(MemStore::new()),
                "file" => {
                    let dir = dir.ok_or("the file backend needs --dir")?;
                    Box::new(FileStore::open(&dir))
                }
                other => return Err(format!("unknown backend {other:?}")),
            };
            let server = remote::spawn(bind.as_str(), store).map_err(|e| e.to_string())?;
            eprintln!("serving on {}", server.addr());
            server.wait();
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
