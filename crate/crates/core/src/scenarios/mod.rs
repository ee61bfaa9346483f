//! Throughput, loss and latency experiments on the testbed topologies.
//!
//! A stream run pushes fixed-size chunks from a source to a destination at
//! an offered rate. Each IP hop of the backbone path is a separate
//! application-layer transfer; intermediate devices forward on receipt,
//! after their processing delay.

mod latency;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use latency::{measure_advertisement_latency, HopLatency, LatencyConfig, LatencyReport};

use crate::backbone::{elect_relays, open_envelope, path, transmit_hop, BackboneError, Hop, Relays};
use crate::configs;
use crate::content_routing::node::encode_chunk;
use crate::content_routing::{CcrMessage, ContentId, MessageType};
use crate::netmodel::{frame_airtime, ChannelConfig, ChannelConfigError, NetEvent, Network, TraceRecord, IP_UDP_HEADER};
use crate::time::{SimDuration, SimTime};
use crate::topology::{ConfigError, DeviceId, LoadedTopology, PhysicalTopology, TopologyConfig, TopologyError};

pub const MAX_CHUNK_SIZE: usize = 1400;
/// Smallest chunk that still holds a data message header and chunk index.
pub const MIN_CHUNK_SIZE: usize = crate::content_routing::message::HEADER_LEN + 8;

pub const PRESETS: [&str; 5] = ["2d1g", "3d1g", "4d2g", "2d1g-B", "4d2g-B"];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario {0:?}; presets are 2d1g, 3d1g, 4d2g, 2d1g-B, 4d2g-B")]
    UnknownScenario(String),
    #[error("malformed scenario config: {0}")]
    Parse(String),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Topology(#[from] ConfigError),
    #[error(transparent)]
    Roles(#[from] TopologyError),
    #[error(transparent)]
    Channel(#[from] ChannelConfigError),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error("unknown device {0:?}")]
    UnknownDevice(String),
    #[error("chunk_size must lie in [{MIN_CHUNK_SIZE}, {MAX_CHUNK_SIZE}], got {0}")]
    ChunkSize(usize),
    #[error("invalid {0}: {1}")]
    Invalid(&'static str, String),
    #[error("transfer refused on hop {hop}: {reason}")]
    Refused { hop: String, reason: String },
}

fn default_chunk() -> usize {
    MAX_CHUNK_SIZE
}

fn default_duration() -> f64 {
    2.0
}

fn default_warmup() -> f64 {
    0.25
}

fn default_topology() -> String {
    "testbed".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// A bundled topology name or a path to a topology file.
    #[serde(default = "default_topology")]
    pub topology: String,
    pub source: String,
    pub destination: String,
    #[serde(default = "default_chunk")]
    pub chunk_size: usize,
    /// Offered application load in Mbit/s.
    #[serde(default)]
    pub offered_load: f64,
    /// Loads for a sweep, Mbit/s, strictly increasing. Empty means
    /// self-calibrated around the path capacity.
    #[serde(default)]
    pub loads: Vec<f64>,
    /// Fixed number of chunks instead of `duration × rate`. At zero load
    /// they are all handed over at time zero.
    #[serde(default)]
    pub chunks: Option<u32>,
    /// Seconds of chunk generation.
    #[serde(default = "default_duration")]
    pub duration: f64,
    /// Seconds excluded from the throughput window at the start.
    #[serde(default = "default_warmup")]
    pub warmup: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub channel: ChannelConfig,
    /// Per-device application processing delay in ms, by label.
    #[serde(default)]
    pub processing_ms: BTreeMap<String, f64>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ScenarioConfig {
    /// One of the five testbed scenarios with a lossless channel.
    pub fn preset(name: &str) -> Result<Self, ScenarioError> {
        let (src, dst) = match name {
            "2d1g" => ("Client 1A", "GO1"),
            "3d1g" => ("Client 1A", "Client 1B"),
            "4d2g" => ("Client 2A", "Client 1B"),
            "2d1g-B" => ("GO2", "Client 2A"),
            "4d2g-B" => ("Client 1B", "Client 2A"),
            _ => return Err(ScenarioError::UnknownScenario(name.into())),
        };
        Ok(ScenarioConfig {
            name: name.into(),
            topology: default_topology(),
            source: src.into(),
            destination: dst.into(),
            chunk_size: MAX_CHUNK_SIZE,
            offered_load: 5.0,
            loads: Vec::new(),
            chunks: None,
            duration: default_duration(),
            warmup: default_warmup(),
            seed: 0,
            channel: ChannelConfig::ideal(),
            processing_ms: BTreeMap::new(),
            base_dir: None,
        })
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_load(mut self, mbps: f64) -> Self {
        self.offered_load = mbps;
        self
    }

    pub fn with_channel(mut self, channel: ChannelConfig) -> Self {
        self.channel = channel;
        self
    }

    /// Checks the config and resolves labels, addresses, relays and path.
    pub fn resolve(&self) -> Result<ResolvedScenario, ScenarioError> {
        if !(MIN_CHUNK_SIZE..=MAX_CHUNK_SIZE).contains(&self.chunk_size) {
            return Err(ScenarioError::ChunkSize(self.chunk_size));
        }
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if !finite_nonneg(self.offered_load) {
            return Err(ScenarioError::Invalid("offered_load", self.offered_load.to_string()));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(ScenarioError::Invalid("duration", self.duration.to_string()));
        }
        if !finite_nonneg(self.warmup) || self.warmup >= self.duration {
            return Err(ScenarioError::Invalid("warmup", format!("{} (duration {})", self.warmup, self.duration)));
        }
        if self.loads.iter().any(|&l| !finite_nonneg(l)) || self.loads.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ScenarioError::Invalid("loads", "must be non-negative and strictly increasing".into()));
        }
        self.channel.validate()?;
        let loaded = load_topology(&self.topology, self.base_dir.as_deref())?;
        let topo = loaded.addressed(self.seed)?;
        let relays = elect_relays(&topo, self.seed, &loaded.relay_pins)?;
        let lookup = |l: &str| topo.device_by_label(l).ok_or_else(|| ScenarioError::UnknownDevice(l.to_string()));
        let src = lookup(&self.source)?;
        let dst = lookup(&self.destination)?;
        if src == dst {
            return Err(ScenarioError::Invalid("destination", "equals the source".into()));
        }
        let mut processing = BTreeMap::new();
        for (label, ms) in &self.processing_ms {
            if !finite_nonneg(*ms) {
                return Err(ScenarioError::Invalid("processing_ms", format!("{label} = {ms}")));
            }
            processing.insert(lookup(label)?, SimDuration::from_secs_f64(ms / 1000.0));
        }
        let hops = path(&topo, &relays, src, dst)?;
        Ok(ResolvedScenario { topo: Arc::new(topo), relays, hops, processing })
    }
}

/// A bundled topology by name, else a topology file relative to `base`.
pub fn load_topology(name: &str, base: Option<&Path>) -> Result<LoadedTopology, ScenarioError> {
    if let Some(t) = configs::by_name(name) {
        return Ok(t);
    }
    let p = Path::new(name);
    let p = match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p.to_path_buf(),
    };
    Ok(TopologyConfig::load(&p)?)
}

#[derive(Debug, Clone)]
pub struct ResolvedScenario {
    pub topo: Arc<PhysicalTopology>,
    pub relays: Relays,
    pub hops: Vec<Hop>,
    pub processing: BTreeMap<DeviceId, SimDuration>,
}

impl ResolvedScenario {
    /// MAC transmissions per chunk: relayed client-to-client hops take two.
    pub fn mac_hops(&self) -> usize {
        self.hops.iter().map(|h| self.mac_hops_of(h)).sum()
    }

    fn mac_hops_of(&self, h: &Hop) -> usize {
        if h.is_broadcast() {
            return 1;
        }
        let g = self.topo.group(h.group);
        if g.owner != h.from && g.owner != h.to {
            2
        } else {
            1
        }
    }

    /// Goodput of the path on a lossless channel when the medium is never idle.
    pub fn capacity_mbps(&self, chunk_size: usize, channel: &ChannelConfig) -> f64 {
        let per_chunk: f64 = self
            .hops
            .iter()
            .map(|h| {
                let extra = if h.is_broadcast() { 4 } else { 0 };
                let air = frame_airtime(chunk_size + extra + IP_UDP_HEADER, h.is_broadcast(), channel);
                air.as_secs_f64() * self.mac_hops_of(h) as f64
            })
            .sum();
        chunk_size as f64 * 8.0 / per_chunk / 1e6
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HopMetric {
    pub from: String,
    pub to: String,
    pub mode: String,
    /// Mean time from hand-over at `from` to arrival at `to`, ms.
    pub mean_latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub scenario: String,
    pub seed: u64,
    pub offered_load: f64,
    /// Application goodput at the destination, Mbit/s.
    pub app_throughput: f64,
    /// Fraction of generated chunks that never reached the destination.
    pub ip_loss_prob: f64,
    pub generated: u64,
    pub delivered: u64,
    pub per_hop_latency: Vec<HopMetric>,
    pub message_counts: BTreeMap<String, u64>,
    pub broadcast_count: u64,
    pub mac_hops: usize,
    pub queue_drops: u64,
    pub channel_losses: u64,
}

#[derive(Debug, Clone)]
enum StreamTimer {
    Generate(u32),
    Forward { hop: usize, seq: u32, payload: Vec<u8> },
}

struct Stream<'a> {
    sc: &'a ResolvedScenario,
    net: Network<StreamTimer>,
    /// Hand-over time at the sender of each hop, per chunk.
    handed: Vec<Vec<Option<SimTime>>>,
    arrived: Vec<Vec<Option<SimTime>>>,
    counts: BTreeMap<String, u64>,
    broadcasts: u64,
}

impl Stream<'_> {
    fn send(&mut self, hop: usize, seq: u32, payload: &[u8]) -> Result<(), ScenarioError> {
        let h = &self.sc.hops[hop];
        match transmit_hop(&mut self.net, h, payload) {
            Ok(_) => {
                self.handed[hop][seq as usize] = Some(self.net.now());
                *self.counts.entry(MessageType::ContentData.short_name().to_string()).or_default() += 1;
                self.broadcasts += u64::from(h.is_broadcast());
                Ok(())
            }
            Err(e) => Err(ScenarioError::Refused {
                hop: format!("{} -> {}", self.sc.topo.label(h.from), self.sc.topo.label(h.to)),
                reason: e.to_string(),
            }),
        }
    }
}

/// Runs one stream; deterministic in `cfg.seed`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunMetrics, ScenarioError> {
    run_stream(cfg, false).map(|(m, _)| m)
}

/// Like [`run_scenario`] but also returns the MAC/IP trace.
pub fn run_scenario_traced(cfg: &ScenarioConfig) -> Result<(RunMetrics, Vec<TraceRecord>), ScenarioError> {
    run_stream(cfg, true)
}

fn run_stream(cfg: &ScenarioConfig, trace: bool) -> Result<(RunMetrics, Vec<TraceRecord>), ScenarioError> {
    let sc = cfg.resolve()?;
    let channel = ChannelConfig { seed: cfg.seed, ..cfg.channel.clone() };
    let chunks = chunk_total(cfg);
    let n = chunks as usize;
    let mut st = Stream {
        sc: &sc,
        net: Network::new(Arc::clone(&sc.topo), channel.clone()).with_tracing(trace),
        handed: vec![vec![None; n]; sc.hops.len()],
        arrived: vec![vec![None; n]; sc.hops.len()],
        counts: BTreeMap::new(),
        broadcasts: 0,
    };
    let interval = if cfg.offered_load > 0.0 { cfg.chunk_size as f64 * 8.0 / (cfg.offered_load * 1e6) } else { 0.0 };
    for seq in 0..chunks {
        st.net.schedule(SimTime::ZERO + SimDuration::from_secs_f64(seq as f64 * interval), StreamTimer::Generate(seq));
    }
    let content = ContentId::from_name(&cfg.name);
    let filler = vec![0u8; cfg.chunk_size - MIN_CHUNK_SIZE];
    let last = sc.hops.len() - 1;

    while let Some(ev) = st.net.poll() {
        match ev {
            NetEvent::Wake(StreamTimer::Generate(seq)) => {
                let data = encode_chunk(seq, chunks, &filler);
                let bytes = CcrMessage::new(MessageType::ContentData, seq, content, data).encode().expect("chunk fits");
                st.send(0, seq, &bytes)?;
            }
            NetEvent::Wake(StreamTimer::Forward { hop, seq, payload }) => st.send(hop, seq, &payload)?,
            NetEvent::Received { device, packet, .. } => {
                let Some(hop) = sc.hops.iter().position(|h| h.to == device) else { continue };
                let Some(payload) = open_envelope(&sc.topo, device, &packet) else { continue };
                let Ok(msg) = CcrMessage::decode(payload) else { continue };
                let seq = msg.msg_id;
                if st.handed[hop][seq as usize].is_none() || st.arrived[hop][seq as usize].is_some() {
                    continue;
                }
                st.arrived[hop][seq as usize] = Some(st.net.now());
                if hop < last {
                    let payload = payload.to_vec();
                    match sc.processing.get(&device).copied().filter(|d| *d > SimDuration::ZERO) {
                        Some(d) => st.net.schedule_in(d, StreamTimer::Forward { hop: hop + 1, seq, payload }),
                        None => st.send(hop + 1, seq, &payload)?,
                    }
                }
            }
            NetEvent::Lost { .. } => {}
        }
    }

    let w0 = SimTime::ZERO + SimDuration::from_secs_f64(cfg.warmup);
    let w1 = SimTime::ZERO + SimDuration::from_secs_f64(cfg.duration);
    let arrivals = &st.arrived[last];
    let delivered = arrivals.iter().flatten().count() as u64;
    let in_window = arrivals.iter().flatten().filter(|&&t| t >= w0 && t < w1).count() as f64;
    let app_throughput = in_window * cfg.chunk_size as f64 * 8.0 / (cfg.duration - cfg.warmup) / 1e6;
    let per_hop_latency = sc
        .hops
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let samples: Vec<f64> = st.handed[i]
                .iter()
                .zip(&st.arrived[i])
                .filter_map(|(a, b)| Some((b.as_ref()?.saturating_since(*a.as_ref()?)).as_millis_f64()))
                .collect();
            let mean = if samples.is_empty() { 0.0 } else { samples.iter().sum::<f64>() / samples.len() as f64 };
            HopMetric {
                from: sc.topo.label(h.from).to_string(),
                to: sc.topo.label(h.to).to_string(),
                mode: h.mode.as_str().to_string(),
                mean_latency_ms: mean,
            }
        })
        .collect();
    let stats = *st.net.stats();
    let metrics = RunMetrics {
        scenario: cfg.name.clone(),
        seed: cfg.seed,
        offered_load: cfg.offered_load,
        app_throughput,
        ip_loss_prob: if chunks == 0 { 0.0 } else { 1.0 - delivered as f64 / f64::from(chunks) },
        generated: u64::from(chunks),
        delivered,
        per_hop_latency,
        message_counts: st.counts,
        broadcast_count: st.broadcasts,
        mac_hops: sc.mac_hops(),
        queue_drops: stats.queue_drops,
        channel_losses: stats.ip_lost - stats.queue_drops,
    };
    Ok((metrics, st.net.take_trace()))
}

fn chunk_total(cfg: &ScenarioConfig) -> u32 {
    if let Some(n) = cfg.chunks {
        return n;
    }
    if cfg.offered_load <= 0.0 {
        return 0;
    }
    let per_sec = cfg.offered_load * 1e6 / (cfg.chunk_size as f64 * 8.0);
    (cfg.duration * per_sec).ceil() as u32
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub scenario: String,
    pub capacity_estimate: f64,
    pub points: Vec<RunMetrics>,
    /// Highest throughput over the sweep.
    pub saturation: f64,
}

/// Multiples of the estimated capacity used when no loads are given.
pub const CALIBRATION: [f64; 8] = [0.25, 0.5, 0.75, 0.9, 1.0, 1.1, 1.25, 1.5];

/// Independent runs per load in parallel; each run reuses `cfg.seed`.
pub fn sweep_offered_load(cfg: &ScenarioConfig) -> Result<SweepResult, ScenarioError> {
    let sc = cfg.resolve()?;
    let capacity = sc.capacity_mbps(cfg.chunk_size, &cfg.channel);
    let loads: Vec<f64> =
        if cfg.loads.is_empty() { CALIBRATION.iter().map(|m| m * capacity).collect() } else { cfg.loads.clone() };
    let points = loads
        .par_iter()
        .map(|&l| run_scenario(&cfg.clone().with_load(l)))
        .collect::<Result<Vec<_>, _>>()?;
    let saturation = points.iter().map(|p| p.app_throughput).fold(0.0, f64::max);
    Ok(SweepResult { scenario: cfg.name.clone(), capacity_estimate: capacity, points, saturation })
}

pub const METRICS_HEADER: &str = "scenario,load,throughput,loss,seed";

/// One CSV row per run: scenario, offered load, throughput, loss, seed.
pub fn metrics_csv(rows: &[RunMetrics]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER.split(',')).expect("in-memory write");
    for m in rows {
        w.write_record([
            m.scenario.clone(),
            format!("{:.6}", m.offered_load),
            format!("{:.6}", m.app_throughput),
            format!("{:.6}", m.ip_loss_prob),
            m.seed.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
