use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Deserialize;

use cpms_core::clock::SystemClock;
use cpms_core::coap::{resolve, Client, RequestConfig};
use cpms_core::latency::{self, BenchOptions, BenchScenario, PeerKind};
use cpms_core::orchestrator::{
    run_choreography, run_process, transform_pim_to_psm, BindingMode, ChoreoOptions,
    ChoreographyRule, ExecOptions, ProcessSpec, RuleAction, Topology,
};
use cpms_core::plant::{build_devices, DeviceOptions, PlantConfig, RuntimeOptions, TimeMode};
use cpms_core::rd::{serve_directory, Directory, RdClient};

const DEFAULT_RD: &str = "127.0.0.1:5683";

#[derive(Parser)]
#[command(
    name = "cpms",
    version,
    about = "Cyber-physical microservices: directory, plant, processes, latency bench"
)]
struct Cli {
    /// More logging (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Resource directory
    #[command(subcommand)]
    Rd(RdCmd),
    /// Simulated plant devices
    #[command(subcommand)]
    Plant(PlantCmd),
    /// Orchestrated or choreographed processes
    #[command(subcommand)]
    Process(ProcessCmd),
    /// Run a semantic query against the directory
    Discover {
        #[arg(long)]
        query: PathBuf,
        #[command(flatten)]
        rd: RdArg,
    },
    /// Round-trip latency of an Execute across integration mechanisms
    Bench {
        /// Scenario name, or `all`
        #[arg(long, default_value = "all")]
        scenario: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        warmup: usize,
        /// Directory for bench-<scenario>.csv
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Server side of a two-process bench scenario
    #[command(hide = true)]
    Peer { kind: PeerKind },
}

#[derive(Subcommand)]
enum RdCmd {
    Serve {
        #[arg(long, default_value = DEFAULT_RD)]
        bind: String,
        /// Expiry sweep period in milliseconds
        #[arg(long, default_value_t = 1000)]
        sweep_ms: u64,
    },
}

#[derive(Subcommand)]
enum PlantCmd {
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        rd: RdArg,
        #[arg(long, default_value = "virtual")]
        time: String,
        /// Real-time speed-up factor
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value = "127.0.0.1")]
        bind_ip: String,
        /// Stop after this many seconds and print the final world (runs until killed otherwise)
        #[arg(long)]
        duration: Option<f64>,
    },
}

#[derive(Subcommand)]
enum ProcessCmd {
    /// Bind a process to the plant and execute it
    Run {
        #[command(flatten)]
        p: ProcessArgs,
        /// Append the trace to this file
        #[arg(long, default_value = "trace.log")]
        trace: PathBuf,
        /// Reservation holder token (unique per run when omitted)
        #[arg(long)]
        holder: Option<String>,
    },
    /// Print the plant-specific plan without executing it
    Plan {
        #[command(flatten)]
        p: ProcessArgs,
    },
    /// Run a rule set until a final rule fires or the plant goes quiet
    Choreo {
        #[arg(long)]
        rules: PathBuf,
        #[command(flatten)]
        rd: RdArg,
        /// Initial Execute as `EP PATH [ARGS]`; overrides the file's `start`
        #[arg(long)]
        start: Option<String>,
        #[arg(long, default_value_t = 2000)]
        quiescence_ms: u64,
        #[arg(long, default_value_t = 1000)]
        budget: usize,
        #[arg(long, default_value = "trace.log")]
        trace: PathBuf,
    },
}

#[derive(Args)]
struct ProcessArgs {
    #[arg(long)]
    pim: PathBuf,
    #[command(flatten)]
    rd: RdArg,
    #[arg(long, default_value = "static")]
    mode: BindingMode,
}

#[derive(Args)]
struct RdArg {
    /// Resource directory address
    #[arg(long = "rd", env = "CPMS_RD", default_value = DEFAULT_RD)]
    rd: String,
}

impl RdArg {
    fn client(&self) -> Result<RdClient> {
        let addr = resolve(&self.rd).with_context(|| format!("resolving {}", self.rd))?;
        let client = Client::bind("0.0.0.0:0").map_err(|e| anyhow!("{e}"))?;
        Ok(RdClient::new(client, addr, RequestConfig::default()))
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RulesFile {
    Full {
        start: Option<RuleAction>,
        rules: Vec<ChoreographyRule>,
    },
    Bare(Vec<ChoreographyRule>),
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn append(path: &Path, text: &str) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

fn parse_action(s: &str) -> Result<RuleAction> {
    let mut parts = s.splitn(3, ' ');
    match (parts.next(), parts.next()) {
        (Some(ep), Some(path)) if !ep.is_empty() => Ok(RuleAction {
            endpoint: ep.to_string(),
            path: path.to_string(),
            args: parts.next().unwrap_or("").to_string(),
        }),
        _ => bail!("--start wants `EP PATH [ARGS]`, got {s:?}"),
    }
}

fn rd_serve(bind: &str, sweep_ms: u64) -> Result<()> {
    let dir = Arc::new(Directory::new(Arc::new(SystemClock::new())));
    let server = serve_directory(bind, dir, Duration::from_millis(sweep_ms))
        .map_err(|e| anyhow!("{e}"))
        .with_context(|| format!("binding {bind}"))?;
    println!("rd listening {}", server.local_addr());
    std::io::stdout().flush()?;
    server.wait();
    Ok(())
}

fn plant_run(
    config: &Path,
    rd: &RdArg,
    time: &str,
    scale: f64,
    bind_ip: String,
    duration: Option<f64>,
) -> Result<()> {
    let cfg = PlantConfig::from_json(&read(config)?)?;
    let mode = match time {
        "virtual" => TimeMode::Virtual,
        "real" => TimeMode::Real { scale },
        other => bail!("--time must be virtual or real, not {other:?}"),
    };
    let rd = rd.client()?;
    let plant = build_devices(
        &cfg,
        Some(&rd),
        RuntimeOptions {
            mode,
            ..Default::default()
        },
        &DeviceOptions {
            bind_ip,
            ..Default::default()
        },
    )?;
    for (ep, addr) in plant.endpoints() {
        println!("device {ep} {addr}");
    }
    println!("plant ready");
    std::io::stdout().flush()?;
    match duration {
        Some(s) => {
            thread::sleep(Duration::from_secs_f64(s));
            let w = plant.shutdown();
            for s in &w.silos {
                println!(
                    "{} {:?} level={} temp={}",
                    s.spec.id,
                    s.state,
                    s.level_pct(),
                    s.temp_c
                );
            }
            for d in &w.deliveries {
                println!(
                    "delivered {} L from {}: {}",
                    d.volume_l,
                    d.silo,
                    d.batch.summary(d.volume_l)
                );
            }
        }
        None => loop {
            thread::park();
        },
    }
    Ok(())
}

fn process_run(p: &ProcessArgs, trace_path: &Path, holder: Option<String>) -> Result<bool> {
    let pim = ProcessSpec::from_json(&read(&p.pim)?)?;
    let rd = p.rd.client()?;
    let opts = match holder {
        Some(h) => ExecOptions::new(&h),
        None => ExecOptions::unique(&pim.name),
    };
    let (plan, trace) = run_process(&pim, &rd, p.mode, &opts)?;
    print!("{plan}");
    print!("{trace}");
    append(trace_path, &trace.to_string())?;
    Ok(trace.is_ok())
}

fn process_plan(p: &ProcessArgs) -> Result<()> {
    let pim = ProcessSpec::from_json(&read(&p.pim)?)?;
    let rd = p.rd.client()?;
    let topo = Topology::discover(
        &rd,
        &Client::bind("0.0.0.0:0").map_err(|e| anyhow!("{e}"))?,
        &RequestConfig::default(),
    )?;
    print!("{}", transform_pim_to_psm(&pim, &rd, &topo, p.mode)?);
    Ok(())
}

fn process_choreo(
    rules: &Path,
    rd: &RdArg,
    start: Option<String>,
    opts: ChoreoOptions,
    trace_path: &Path,
) -> Result<bool> {
    let (file_start, rules) = match serde_json::from_str::<RulesFile>(&read(rules)?)
        .with_context(|| format!("parsing {}", rules.display()))?
    {
        RulesFile::Full { start, rules } => (start, rules),
        RulesFile::Bare(rules) => (None, rules),
    };
    for r in &rules {
        r.validate()?;
    }
    let initial = match start {
        Some(s) => parse_action(&s)?,
        None => file_start
            .ok_or_else(|| anyhow!("no initial action: give --start or a `start` entry"))?,
    };
    let trace = run_choreography(&rules, &rd.client()?, &initial, &opts);
    print!("{trace}");
    append(trace_path, &trace.to_string())?;
    Ok(trace.end.is_ok())
}

fn discover(query: &Path, rd: &RdArg) -> Result<()> {
    let q = read(query)?;
    for sol in rd.client()?.lookup_semantic(&q)? {
        let vals: Vec<String> = sol.values.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("{} {}", sol.endpoint, vals.join(" "));
    }
    Ok(())
}

fn bench(scenario: &str, n: usize, warmup: usize, out: &Path) -> Result<()> {
    let scenarios: Vec<BenchScenario> = if scenario.eq_ignore_ascii_case("all") {
        BenchScenario::ALL.to_vec()
    } else {
        scenario
            .split(',')
            .map(|s| s.trim().parse().map_err(|e: String| anyhow!(e)))
            .collect::<Result<_>>()?
    };
    let exe = std::env::current_exe()?.to_string_lossy().into_owned();
    let opts = BenchOptions {
        n,
        warmup,
        peer: Some(vec![exe, "peer".into()]),
        ..Default::default()
    };
    fs::create_dir_all(out)?;
    let mut all = Vec::new();
    for s in scenarios {
        let stats = latency::run_bench(s, &opts)?;
        let path = stats.write_csv(out)?;
        info!("{s}: samples in {}", path.display());
        if stats.excluded > 0 {
            eprintln!(
                "{s}: {} timed-out round trips excluded and re-measured",
                stats.excluded
            );
        }
        all.push(stats);
    }
    print!("{}", latency::report(&all));
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Cmd::Rd(RdCmd::Serve { bind, sweep_ms }) => rd_serve(&bind, sweep_ms)?,
        Cmd::Plant(PlantCmd::Run {
            config,
            rd,
            time,
            scale,
            bind_ip,
            duration,
        }) => plant_run(&config, &rd, &time, scale, bind_ip, duration)?,
        Cmd::Process(ProcessCmd::Run { p, trace, holder }) => {
            return process_run(&p, &trace, holder)
        }
        Cmd::Process(ProcessCmd::Plan { p }) => process_plan(&p)?,
        Cmd::Process(ProcessCmd::Choreo {
            rules,
            rd,
            start,
            quiescence_ms,
            budget,
            trace,
        }) => {
            let opts = ChoreoOptions {
                budget,
                quiescence: Duration::from_millis(quiescence_ms),
                ..Default::default()
            };
            return process_choreo(&rules, &rd, start, opts, &trace);
        }
        Cmd::Discover { query, rd } => discover(&query, &rd)?,
        Cmd::Bench {
            scenario,
            n,
            warmup,
            out,
        } => bench(&scenario, n, warmup, &out)?,
        Cmd::Peer { kind } => latency::run_peer(kind)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn start_action_parsing() {
        let a = parse_action("S1 /26241/0/10 ingredient=x,volume=5").unwrap();
        assert_eq!(
            (a.endpoint.as_str(), a.path.as_str(), a.args.as_str()),
            ("S1", "/26241/0/10", "ingredient=x,volume=5")
        );
        assert_eq!(parse_action("S1 /26241/0/11").unwrap().args, "");
        assert!(parse_action("S1").is_err());
    }

    #[test]
    fn cli_shape() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
