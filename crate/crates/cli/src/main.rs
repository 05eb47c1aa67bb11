//! `wdmtwin` command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 schema or validation error,
//! 3 numerical failure (a diagnostics file is written next to the output).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wdmtwin_core::edfa::EdfaTwinModel;
use wdmtwin_core::field_sim::NetworkSim;
use wdmtwin_core::grid::{fnv1a, ChannelGrid, PowerProfile};
use wdmtwin_core::io::{self, Header, RunConfig, TOOL_VERSION};
use wdmtwin_core::link::{predict, Toggles, TwinModels};
use wdmtwin_core::opt::{optimize, OptConfig, Variant};
use wdmtwin_core::scenario::{reference_topology, repro_paper};
use wdmtwin_core::topology::TopologyFile;
use wdmtwin_core::train::{generate_probes, train_twin, validate_twin};
use wdmtwin_core::trx::TrxPenaltyModel;
use wdmtwin_core::{Error, Result};

const THREADS_ENV: &str = "WDMTWIN_THREADS";
const DIAGNOSTICS_FILE: &str = "wdmtwin-diagnostics.txt";

#[derive(Parser, Debug)]
#[command(name = "wdmtwin", version, about = "Differentiable WDM link twin: probe, train, predict, optimize")]
struct Cli {
    /// Replace every seed in the run config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    topology: PathBuf,
    #[arg(long)]
    path: String,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Measure random launch profiles through a path of the simulated network.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Id of the first probe; ids also select the OSA noise stream.
        #[arg(long, default_value_t = 0)]
        first_id: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the amplifier twin to probe measurements.
    Train {
        #[arg(long)]
        probes: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        curve: PathBuf,
        /// Held-out error table.
        #[arg(long)]
        validation: Option<PathBuf>,
    },
    /// Back-to-back transceiver SNR samples for `--trx`.
    B2b {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long, default_value_t = 8)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-channel SNR from the twin.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        trx: PathBuf,
        /// `flat` or a profile CSV.
        #[arg(long, default_value = "flat")]
        profile: String,
        /// Total launch power for `--profile flat`.
        #[arg(long, default_value_t = 18.0)]
        total_dbm: f64,
        #[arg(long, default_value_t = Toggles::FULL)]
        toggles: Toggles,
        #[arg(long)]
        out: PathBuf,
    },
    /// Maximize the minimum channel margin over launch profiles.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        trx: PathBuf,
        /// Overrides the variant in the config.
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Per-channel SNR measured on the simulated network.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "flat")]
        profile: String,
        #[arg(long, default_value_t = 18.0)]
        total_dbm: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Whole short and long link scenario with a summary table.
    ReproPaper {
        #[arg(long)]
        workdir: PathBuf,
        /// Defaults to the built-in four-node network.
        #[arg(long)]
        topology: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.reseed(s);
    }
    Ok(cfg)
}

fn load_sim(path: &Path) -> Result<NetworkSim> {
    NetworkSim::new(TopologyFile::load(path)?)
}

fn load_model(path: &Path, grid: &ChannelGrid) -> Result<EdfaTwinModel> {
    let m = EdfaTwinModel::from_json(&std::fs::read_to_string(path)?).map_err(|e| match e {
        Error::Schema(msg) => Error::Schema(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    m.validate(grid)?;
    Ok(m)
}

fn load_profile(spec: &str, total_dbm: f64, grid: &ChannelGrid) -> Result<PowerProfile> {
    if spec == "flat" {
        PowerProfile::flat(grid, total_dbm)
    } else {
        io::read_profile(Path::new(spec), grid)
    }
}

fn file_hash(path: &Path) -> Result<u64> {
    Ok(fnv1a(&std::fs::read(path)?))
}

fn run_hash(topology: &TopologyFile, cfg: &RunConfig) -> u64 {
    fnv1a(format!("{:016x}{:016x}", topology.hash(), cfg.hash()).as_bytes())
}

/// Output file whose directory receives diagnostics on numerical failure.
fn primary_output(cmd: &Cmd) -> PathBuf {
    match cmd {
        Cmd::Probe { out, .. }
        | Cmd::Train { out, .. }
        | Cmd::B2b { out, .. }
        | Cmd::Predict { out, .. }
        | Cmd::Optimize { out, .. }
        | Cmd::Evaluate { out, .. } => out.clone(),
        Cmd::ReproPaper { workdir, .. } => workdir.join("summary.csv"),
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Probe {
            common,
            count,
            config,
            first_id,
            out,
        } => {
            let cfg = load_config(config.as_deref(), cli.seed)?;
            let sim = load_sim(&common.topology)?;
            let probes = generate_probes(&sim, &common.path, &cfg.train, *first_id, *count)?;
            let hdr = Header::new(Some(run_hash(sim.topology(), &cfg)), None).with("path_id", &common.path);
            io::write_text(out, &io::render_probes(sim.grid(), &probes, &hdr))
        }
        Cmd::Train {
            probes,
            common,
            config,
            out,
            curve,
            validation,
        } => {
            let cfg = load_config(config.as_deref(), cli.seed)?;
            let sim = load_sim(&common.topology)?;
            let path = sim.path(&common.path)?;
            let records = io::read_probes(probes, sim.grid())?;
            let want = cfg.train.n_train + cfg.train.n_val;
            if records.len() < want {
                return Err(Error::InvalidArgument(format!(
                    "{}: {} probes, config needs n_train + n_val = {want}",
                    probes.display(),
                    records.len()
                )));
            }
            if let Some(p) = records.iter().find(|p| p.path_id != common.path) {
                return Err(Error::InvalidArgument(format!(
                    "{}: probe {} was taken on path {}, not {}",
                    probes.display(),
                    p.probe_id,
                    p.path_id,
                    common.path
                )));
            }
            let (train, rest) = records.split_at(cfg.train.n_train);
            let val = &rest[..cfg.train.n_val];
            let outcome = train_twin(&path, train, val, &cfg.train)?;
            let hdr = Header::new(Some(run_hash(sim.topology(), &cfg)), Some(outcome.model.hash()));
            io::write_text(out, &outcome.model.to_json())?;
            io::write_text(curve, &io::render_curve(&outcome.curve, &hdr))?;
            if let Some(v) = validation {
                let report = validate_twin(&outcome.model, &path, val)?;
                io::write_text(v, &io::render_validation(&report, &hdr))?;
            }
            Ok(())
        }
        Cmd::B2b { topology, samples, out } => {
            let sim = load_sim(topology)?;
            let trx = TrxPenaltyModel::fit(&sim.measure_b2b(*samples)?)?;
            let hdr = Header::new(Some(sim.topology().hash()), None);
            io::write_text(out, &io::render_trx(&trx, &hdr))
        }
        Cmd::Predict {
            common,
            model,
            trx,
            profile,
            total_dbm,
            toggles,
            out,
        } => {
            let topo = TopologyFile::load(&common.topology)?;
            let path = topo.resolve(&common.path)?;
            let m = load_model(model, &path.grid)?;
            let model_hash = m.hash();
            let launch = load_profile(profile, *total_dbm, &path.grid)?;
            let trx_model = TrxPenaltyModel::from_csv(trx)?;
            let report = predict(&path, &TwinModels::shared(m), &launch, &trx_model, *toggles, topo.threshold_db)?;
            let hdr = Header::new(Some(topo.hash()), Some(model_hash))
                .with("profile", profile)
                .with("toggles", toggles)
                .with("trx_hash", format!("{:016x}", file_hash(trx)?));
            io::write_text(out, &io::render_report(&report, &hdr))
        }
        Cmd::Optimize {
            common,
            model,
            trx,
            variant,
            config,
            out,
            trace,
        } => {
            let cfg = load_config(config.as_deref(), cli.seed)?;
            let topo = TopologyFile::load(&common.topology)?;
            let path = topo.resolve(&common.path)?;
            let m = load_model(model, &path.grid)?;
            let model_hash = m.hash();
            let trx_model = TrxPenaltyModel::from_csv(trx)?;
            let opt_cfg = OptConfig {
                variant: variant.unwrap_or(cfg.opt.variant),
                ..cfg.opt.clone()
            };
            let r = optimize(&path, &TwinModels::shared(m), &trx_model, &opt_cfg)?;
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            let hdr = Header::new(Some(run_hash(&topo, &cfg)), Some(model_hash))
                .with("path_id", &common.path)
                .with("variant", opt_cfg.variant.name())
                .with("min_snr_full_db", format!("{:.6}", r.min_snr_full_db));
            io::write_text(out, &io::render_profile(&path.grid, &r.profile, &hdr))?;
            io::write_text(trace, &io::render_trace(&r.trace, &hdr))
        }
        Cmd::Evaluate {
            common,
            profile,
            total_dbm,
            out,
        } => {
            let sim = load_sim(&common.topology)?;
            let launch = load_profile(profile, *total_dbm, sim.grid())?;
            let report = sim.ground_truth_snr(&common.path, &launch)?;
            let hdr = Header::new(Some(sim.topology().hash()), None).with("profile", profile);
            io::write_text(out, &io::render_report(&report, &hdr))
        }
        Cmd::ReproPaper {
            workdir,
            topology,
            config,
        } => {
            let cfg = load_config(config.as_deref(), cli.seed)?;
            let topo = match topology {
                Some(p) => TopologyFile::load(p)?,
                None => reference_topology(),
            };
            let summary = repro_paper(workdir, &topo, &cfg)?;
            print!("{}", summary.table());
            Ok(())
        }
    }
}

fn write_diagnostics(cli: &Cli, err: &Error) -> Option<PathBuf> {
    let out = primary_output(&cli.cmd);
    let dir = out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let path = dir.join(DIAGNOSTICS_FILE);
    let args: Vec<String> = std::env::args().collect();
    let text = format!(
        "wdmtwin {TOOL_VERSION}\nargs: {}\nerror: {err}\ndetail: {err:?}\n",
        args.join(" ")
    );
    io::write_text(&path, &text).ok().map(|_| path)
}

fn init_threads() -> std::result::Result<(), String> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            if code == 3 {
                if let Some(p) = write_diagnostics(&cli, &e) {
                    eprintln!("diagnostics written to {}", p.display());
                }
            }
            ExitCode::from(code as u8)
        }
    }
}
