use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use wfd_ccr::backbone::{elect_relays, Backbone};
use wfd_ccr::content_routing::{Fabric, FabricConfig};
use wfd_ccr::netmodel::trace_csv_string;
use wfd_ccr::scenarios::{
    load_topology, measure_advertisement_latency, metrics_csv, run_scenario_traced, sweep_offered_load, LatencyConfig,
    ScenarioConfig, ScenarioError,
};
use wfd_ccr::topology::{LoadedTopology, TopologyConfig};

#[derive(Parser)]
#[command(name = "wfd-ccr", version, about = "Multi-group Wi-Fi Direct content routing simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a topology against the role rules and assign addresses.
    Validate(TopoArgs),
    /// Elect relays and list the tunnels of a topology.
    Backbone(TopoArgs),
    /// Run one scenario at one offered load.
    Run(RunArgs),
    /// Sweep the offered load of a scenario.
    Sweep(RunArgs),
    /// Measure advertisement latency along a chain of devices.
    Latency(LatencyArgs),
    /// Dump the MAC/IP trace of one transfer, or the protocol trace of a registration.
    Trace(TraceArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct TopoArgs {
    /// Topology file or bundled name (fig4, fig7, testbed).
    #[arg(long)]
    config: String,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file.
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    config: Option<PathBuf>,
    /// Preset: 2d1g, 3d1g, 4d2g, 2d1g-B, 4d2g-B.
    #[arg(long)]
    scenario: Option<String>,
    /// Offered load in Mbit/s, overriding the scenario.
    #[arg(long)]
    load: Option<f64>,
    /// Unicast residual frame loss, overriding the scenario.
    #[arg(long)]
    loss: Option<f64>,
    /// Also write the MAC/IP trace CSV here (run only).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct LatencyArgs {
    /// Latency experiment file; defaults to the testbed chain.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct TraceArgs {
    /// Topology file or bundled name.
    #[arg(long)]
    config: String,
    #[arg(long, requires = "to", conflicts_with = "register")]
    from: Option<String>,
    #[arg(long)]
    to: Option<String>,
    /// Register one item at this device and dump the protocol messages.
    #[arg(long, required_unless_present = "from")]
    register: Option<String>,
    #[command(flatten)]
    common: Common,
}

/// Exit 1: the input was understood but is invalid or the run failed.
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match cli.cmd {
        Command::Validate(a) => validate(&a),
        Command::Backbone(a) => backbone(&a),
        Command::Run(a) => run(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Latency(a) => latency(&a),
        Command::Trace(a) => trace(&a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn emit(common: &Common, text: &str) -> Result<(), Failure> {
    match &common.out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn topology(name: &str) -> Result<LoadedTopology, Failure> {
    if Path::new(name).exists() {
        return Ok(TopologyConfig::load(Path::new(name))?);
    }
    Ok(load_topology(name, None)?)
}

#[derive(Serialize)]
struct Validation<'a> {
    name: &'a str,
    devices: usize,
    groups: usize,
    addresses: Vec<(String, String, String)>,
}

fn validate(a: &TopoArgs) -> Result<(), Failure> {
    let loaded = topology(&a.config)?;
    let t = loaded.addressed(a.common.seed)?;
    let mut addresses = Vec::new();
    for d in t.devices() {
        for (kind, i) in [("p2p", &d.p2p), ("wifi", &d.wifi)] {
            if let Some(ip) = i.ip {
                addresses.push((d.label.clone(), kind.to_string(), ip.to_string()));
            }
        }
    }
    let text = match a.common.format {
        Format::Json => json(&Validation { name: &loaded.name, devices: t.devices().len(), groups: t.groups().len(), addresses }),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["device", "iface", "ip"])?;
            for r in &addresses {
                w.serialize(r)?;
            }
            String::from_utf8(w.into_inner().map_err(|e| Failure(e.to_string()))?)?
        }
    };
    emit(&a.common, &text)
}

fn backbone(a: &TopoArgs) -> Result<(), Failure> {
    let loaded = topology(&a.config)?;
    let t = loaded.addressed(a.common.seed)?;
    let b = Backbone::build(&t, a.common.seed, &loaded.relay_pins)?;
    let text = match a.common.format {
        Format::Json => b.to_json(&t) + "\n",
        Format::Csv => b.to_csv(&t),
    };
    emit(&a.common, &text)
}

fn scenario(a: &RunArgs) -> Result<ScenarioConfig, ScenarioError> {
    let mut cfg = match (&a.config, &a.scenario) {
        (Some(p), _) => ScenarioConfig::load(p)?,
        (None, Some(name)) => ScenarioConfig::preset(name)?,
        (None, None) => unreachable!("clap requires one of them"),
    };
    cfg.seed = a.common.seed;
    if let Some(l) = a.load {
        cfg.offered_load = l;
    }
    if let Some(p) = a.loss {
        cfg.channel.frame_loss_prob = p;
    }
    Ok(cfg)
}

fn run(a: &RunArgs) -> Result<(), Failure> {
    let cfg = scenario(a)?;
    let (m, records) = run_scenario_traced(&cfg)?;
    if let Some(p) = &a.trace {
        std::fs::write(p, trace_csv_string(&records)).map_err(|e| Failure(format!("cannot write {}: {e}", p.display())))?;
    }
    let text = match a.common.format {
        Format::Json => json(&m),
        Format::Csv => metrics_csv(std::slice::from_ref(&m)),
    };
    emit(&a.common, &text)
}

fn sweep(a: &RunArgs) -> Result<(), Failure> {
    if a.trace.is_some() {
        return Err(Failure("--trace is only available for run".into()));
    }
    let cfg = scenario(a)?;
    let s = sweep_offered_load(&cfg)?;
    let text = match a.common.format {
        Format::Json => json(&s),
        Format::Csv => metrics_csv(&s.points),
    };
    emit(&a.common, &text)
}

fn latency(a: &LatencyArgs) -> Result<(), Failure> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure(format!("cannot read {}: {e}", p.display())))?;
            let mut c: LatencyConfig = toml::from_str(&text)?;
            c.base_dir = p.parent().map(Path::to_path_buf);
            c
        }
        None => LatencyConfig::default(),
    };
    cfg.seed = a.common.seed;
    let r = measure_advertisement_latency(&cfg)?;
    let text = match a.common.format {
        Format::Json => json(&r),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["from", "to", "mean_ms"])?;
            for h in &r.per_hop {
                w.write_record([h.from.clone(), h.to.clone(), format!("{:.6}", h.mean_ms)])?;
            }
            w.write_record(["end-to-end".to_string(), String::new(), format!("{:.6}", r.end_to_end_mean_ms)])?;
            String::from_utf8(w.into_inner().map_err(|e| Failure(e.to_string()))?)?
        }
    };
    emit(&a.common, &text)
}

fn trace(a: &TraceArgs) -> Result<(), Failure> {
    let loaded = topology(&a.config)?;
    if let Some(label) = &a.register {
        let t = loaded.addressed(a.common.seed)?;
        let relays = elect_relays(&t, a.common.seed, &loaded.relay_pins)?;
        let device = t.device_by_label(label).ok_or_else(|| Failure(format!("unknown device {label:?}")))?;
        let mut f = Fabric::new(Arc::new(t), relays, FabricConfig { seed: a.common.seed, ..FabricConfig::default() });
        f.register(device, "item", b"item".to_vec());
        f.run();
        let text = match a.common.format {
            Format::Csv => f.messages_csv(),
            Format::Json => json(&f.messages()),
        };
        return emit(&a.common, &text);
    }
    let cfg = ScenarioConfig {
        name: "transfer".into(),
        topology: a.config.clone(),
        source: a.from.clone().expect("clap requires --from"),
        destination: a.to.clone().expect("clap requires --to"),
        chunks: Some(1),
        offered_load: 0.0,
        seed: a.common.seed,
        ..ScenarioConfig::preset("2d1g")?
    };
    let (_, records) = run_scenario_traced(&cfg)?;
    let text = match a.common.format {
        Format::Csv => trace_csv_string(&records),
        Format::Json => json(&records),
    };
    emit(&a.common, &text)
}
