//! Command-line grammar and command implementations.
//!
//! Every command writes `report.json` plus its data files into `--out`
//! and returns the report. Randomness comes only from `--seed` (default 0)
//! or, for `simulate`, from the configuration's `seed` field when the flag
//! is absent.

use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use qtb_core::analysis::{
    chsh_from_visibility, correlation_coefficient, fit_correlation, fit_fringe, raw_visibility, CorrelationPoint,
    FringeSample, FringeScan, PortPair, VisibilityResult,
};
use qtb_core::coincidence::{count_accidentals, count_coincidences, find_peaks, Gate};
use qtb_core::pairsource::{
    brightness_figure_of_merit, car_from_counts, fit_double_exponential, fit_singles_counts, infer_pgr,
    MaterialWaveguide, PairStatistics, SinglesFit,
};
use qtb_core::quantities::{nearest_itu_channel, Frequency, Power, Wavelength};
use qtb_core::resonator::{fit_resonance, fit_resonance_wavelength, transmission, ResonanceFit};
use qtb_core::simulator::{expected_tag_counts, ExperimentConfig, RunKind, Simulation};
use qtb_core::tags::{channel, ChannelId, TagStream, Tags};
use qtb_core::tomography::{fidelity, linear_inversion, mle_reconstruct, phi_plus, DensityMatrix};

use crate::config::{config_to_json, read_config_file};
use crate::counts::{density_to_doc, parse_counts};
use crate::error::{InModule, QtbError, Result};
use crate::report::{file_digest, RunReport};
use crate::svg::{line_plot, Series};
use crate::tables::{self, Trace};
use crate::units::{parse_frequency, parse_gate, parse_span_ps, parse_time, parse_time_ps};
use crate::{fixtures, parallel, ttag};

/// Simulator and analysis toolkit for time-bin entangled photon-pair
/// experiments.
#[derive(Debug, Parser)]
#[command(name = "qtb", version, about, long_about = None)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Experiment configuration (JSON).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Output directory; created if missing.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,

    /// Seed for every random draw; defaults to 0 (for `simulate`, to the
    /// configuration's seed).
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    /// Maximum worker threads; all cores when omitted.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    /// Also write SVG plots next to the CSV files.
    #[arg(long, global = true)]
    pub svg: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a time-tag stream from --config.
    Simulate(SimulateArgs),
    /// Delay histogram between two channels.
    Hist(HistArgs),
    /// Two-fold coincidences, shifted-window accidentals and CAR.
    Coinc(CoincArgs),
    /// Clock-gated three-fold coincidences at the four port pairs.
    Triple(TripleArgs),
    /// Fringe fits, raw visibility, correlation coefficient and CHSH.
    Fringe(FringeArgs),
    /// CHSH value and significance implied by a visibility.
    Chsh(ChshArgs),
    /// Density-matrix reconstruction, fidelity and Monte Carlo error.
    Tomo(TomoArgs),
    /// Lorentzian fit of a transmission trace.
    FitResonance(FitResonanceArgs),
    /// Quadratic fit of a singles power sweep; optional pair-rate inference.
    FitSingles(FitSinglesArgs),
    /// Relative pair brightness of a design against a reference design.
    Brightness(BrightnessArgs),
    /// Write the reference fixtures into --out.
    Fixtures,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    /// Analyzers in place: CLOCK, A1, A2, B1, B2.
    Interference,
    /// No analyzers: SIG, IDL.
    Correlation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StreamFormat {
    Ttag,
    Tsv,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Override the configured duration (e.g. 0.5s, 100ms).
    #[arg(long, value_parser = parse_time)]
    pub duration: Option<f64>,
    #[arg(long, value_enum, default_value_t = Kind::Interference)]
    pub kind: Kind,
    /// Override the signal analyzer phase α in radians.
    #[arg(long, allow_hyphen_values = true)]
    pub signal_phase: Option<f64>,
    /// Override the idler analyzer phase β in radians.
    #[arg(long, allow_hyphen_values = true)]
    pub idler_phase: Option<f64>,
    #[arg(long, value_enum, default_value_t = StreamFormat::Ttag)]
    pub format: StreamFormat,
}

#[derive(Debug, Args)]
pub struct HistArgs {
    /// Tag stream (TTAG binary or TSV).
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Start channel; the histogram is of t_a − t_b.
    #[arg(long, default_value = "A1")]
    pub a: String,
    #[arg(long, default_value = "B1")]
    pub b: String,
    #[arg(long, value_parser = parse_span_ps, default_value = "50ps")]
    pub bin_width: u64,
    /// Half range of the delay axis.
    #[arg(long, value_parser = parse_span_ps, default_value = "3.2ns")]
    pub range: u64,
    /// Minimum distance between reported peaks.
    #[arg(long, value_parser = parse_span_ps, default_value = "1ns")]
    pub peak_separation: u64,
    /// Minimum peak prominence as a fraction of the tallest bin.
    #[arg(long, default_value_t = 0.005)]
    pub prominence: f64,
    /// Fit a double exponential to extract the coherence time.
    #[arg(long)]
    pub fit_tau: bool,
}

#[derive(Debug, Args)]
pub struct CoincArgs {
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, default_value = "SIG")]
    pub a: String,
    #[arg(long, default_value = "IDL")]
    pub b: String,
    #[arg(long, value_parser = parse_span_ps, default_value = "1ns")]
    pub window: u64,
    /// Expected t_b − t_a of true pairs.
    #[arg(long, value_parser = parse_time_ps, default_value = "0", allow_hyphen_values = true)]
    pub offset: i64,
    /// Pump period for the accidental window; read from a periodic CLOCK
    /// channel when omitted, else 6.25 ns.
    #[arg(long, value_parser = parse_span_ps)]
    pub period: Option<u64>,
    /// Whole periods by which the accidental window is shifted; defaults
    /// to the fewest that clear the detectors' dead time (from --config, or
    /// 20 ns).
    #[arg(long, allow_hyphen_values = true)]
    pub shift_periods: Option<i64>,
}

#[derive(Debug, Args)]
pub struct TripleArgs {
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, default_value = "CLOCK")]
    pub clock: String,
    /// Signal gate `offset,width` relative to the clock. Defaults to the
    /// middle slot, width 0.8·ΔT, from --config or the fixture pump.
    #[arg(long, value_parser = parse_gate, allow_hyphen_values = true)]
    pub gate_a: Option<Gate>,
    /// Idler gate; defaults like --gate-a.
    #[arg(long, value_parser = parse_gate, allow_hyphen_values = true)]
    pub gate_b: Option<Gate>,
}

#[derive(Debug, Args)]
pub struct FringeArgs {
    /// Scan file with a `port` column, or PORT=FILE for single-port files.
    /// Repeatable.
    #[arg(long = "scan", value_name = "[PORT=]FILE", required = true)]
    pub scans: Vec<String>,
    /// Fixed signal phase α in radians.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct ChshArgs {
    #[arg(long)]
    pub visibility: f64,
    #[arg(long)]
    pub sigma: f64,
}

#[derive(Debug, Args)]
pub struct TomoArgs {
    /// Counts JSON keyed by setting label.
    #[arg(long, value_name = "FILE")]
    pub counts: PathBuf,
    /// Monte Carlo trials (default 100, or 1000 with --full).
    #[arg(long)]
    pub trials: Option<usize>,
    /// Run the full 1000-trial Monte Carlo.
    #[arg(long)]
    pub full: bool,
}

#[derive(Debug, Args)]
pub struct FitResonanceArgs {
    /// CSV trace, `frequency_hz,transmission` or `wavelength_nm,transmission`.
    #[arg(long, value_name = "FILE")]
    pub trace: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitSinglesArgs {
    /// Sweep CSV `power_mw,counts,dwell_s` of the side being characterized.
    #[arg(long, value_name = "FILE")]
    pub sweep: PathBuf,
    /// Sweep of the other side; enables pair-rate inference.
    #[arg(long, value_name = "FILE")]
    pub partner_sweep: Option<PathBuf>,
    /// Pump power for evaluation and inference, mW.
    #[arg(long)]
    pub pump_mw: Option<f64>,
    /// Coincidence rate N_cc at --pump-mw, s⁻¹.
    #[arg(long)]
    pub coincidence_rate: Option<f64>,
    /// Accidental rate N_acc at --pump-mw, s⁻¹.
    #[arg(long, default_value_t = 0.0)]
    pub accidental_rate: f64,
    #[arg(long, value_parser = parse_time, default_value = "1ns")]
    pub window: f64,
    /// Pair bandwidth for the brightness normalization.
    #[arg(long, value_parser = parse_frequency)]
    pub bandwidth: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BrightnessArgs {
    /// Nonlinear index n₂, m²/W.
    #[arg(long, default_value_t = 8e-19)]
    pub n2: f64,
    /// Effective mode area, m².
    #[arg(long, default_value_t = 0.39e-12)]
    pub a_eff: f64,
    /// Ring radius, m.
    #[arg(long, default_value_t = 17e-6)]
    pub radius: f64,
    #[arg(long, value_parser = parse_frequency, default_value = "1.0GHz")]
    pub linewidth: f64,
    /// Pump wavelength, nm.
    #[arg(long, default_value_t = 1555.75)]
    pub pump_nm: f64,
    /// Reference n₂; defaults to the design value.
    #[arg(long)]
    pub ref_n2: Option<f64>,
    #[arg(long)]
    pub ref_a_eff: Option<f64>,
    #[arg(long)]
    pub ref_radius: Option<f64>,
    #[arg(long, value_parser = parse_frequency)]
    pub ref_linewidth: Option<f64>,
}

/// Parses `argv` and runs the command.
pub fn run_from<I, T>(argv: I) -> Result<RunReport>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| QtbError::Usage(e.to_string()))?;
    run(&cli)
}

pub fn run(cli: &Cli) -> Result<RunReport> {
    std::fs::create_dir_all(&cli.out).map_err(|e| QtbError::io(&cli.out, e))?;
    let pool = parallel::pool(cli.threads);
    let mut report = match &cli.command {
        Command::Simulate(a) => simulate(cli, a, &pool)?,
        Command::Hist(a) => hist(cli, a, &pool)?,
        Command::Coinc(a) => coinc(cli, a)?,
        Command::Triple(a) => triple(cli, a, &pool)?,
        Command::Fringe(a) => fringe(cli, a)?,
        Command::Chsh(a) => chsh(a)?,
        Command::Tomo(a) => tomo(cli, a, &pool)?,
        Command::FitResonance(a) => fit_resonance_cmd(cli, a)?,
        Command::FitSingles(a) => fit_singles_cmd(cli, a)?,
        Command::Brightness(a) => brightness(a)?,
        Command::Fixtures => {
            let mut r = RunReport::new("fixtures");
            for name in fixtures::write_all(&cli.out)? {
                r.output(&name);
            }
            r
        }
    };
    if let Some(t) = cli.threads {
        report.param("threads", t);
    }
    report.write(&cli.out)?;
    Ok(report)
}

fn write_file(cli: &Cli, report: &mut RunReport, name: &str, bytes: &[u8]) -> Result<()> {
    let p = cli.out.join(name);
    std::fs::write(&p, bytes).map_err(|e| QtbError::io(&p, e))?;
    report.output(name);
    Ok(())
}

fn write_with<F>(cli: &Cli, report: &mut RunReport, name: &str, f: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_file(cli, report, name, &buf)
}

fn svg(cli: &Cli, report: &mut RunReport, name: &str, body: impl FnOnce() -> String) -> Result<()> {
    if cli.svg {
        write_file(cli, report, name, body().as_bytes())?;
    }
    Ok(())
}

fn load_config(cli: &Cli, report: &mut RunReport) -> Result<Option<ExperimentConfig>> {
    match &cli.config {
        Some(p) => {
            report.input(p)?;
            Ok(Some(read_config_file(p)?))
        }
        None => Ok(None),
    }
}

fn require_config(cli: &Cli, report: &mut RunReport) -> Result<ExperimentConfig> {
    load_config(cli, report)?.ok_or_else(|| QtbError::Usage("this command needs --config FILE".into()))
}

fn load_stream(report: &mut RunReport, path: &Path) -> Result<TagStream> {
    report.input(path)?;
    ttag::read_stream_file(path)
}

fn channel_id(stream: &TagStream, name: &str) -> Result<ChannelId> {
    stream
        .map()
        .id(name)
        .or_else(|| name.parse().ok().filter(|id| stream.map().contains(*id)))
        .ok_or_else(|| QtbError::Usage(format!("channel {name:?} is not in the stream")))
}

fn simulate(cli: &Cli, a: &SimulateArgs, pool: &rayon::ThreadPool) -> Result<RunReport> {
    let mut report = RunReport::new("simulate");
    let mut cfg = require_config(cli, &mut report)?;
    if let Some(d) = a.duration {
        if d < 0.0 {
            return Err(QtbError::Usage("--duration must be non-negative".into()));
        }
        cfg.duration_s = d;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(p) = a.signal_phase {
        cfg.umzi_signal = cfg.umzi_signal.map(|u| u.with_phase(p));
    }
    if let Some(p) = a.idler_phase {
        cfg.umzi_idler = cfg.umzi_idler.map(|u| u.with_phase(p));
    }
    let kind = match a.kind {
        Kind::Interference => RunKind::Interference,
        Kind::Correlation => RunKind::Correlation,
    };
    report.parameters = serde_json::from_str(&config_to_json(&cfg)).expect("config is JSON");
    report.param("kind", format!("{:?}", a.kind).to_lowercase());

    let sim = Simulation::new(&cfg, kind).in_module("simulator")?;
    let (stream, info) = parallel::simulate(&sim, pool).in_module("simulator")?;
    let name = match a.format {
        StreamFormat::Ttag => "stream.ttag",
        StreamFormat::Tsv => "stream.tsv",
    };
    let path = cli.out.join(name);
    let file = tables::create(&path)?;
    match a.format {
        StreamFormat::Ttag => ttag::write_ttag(&stream, file),
        StreamFormat::Tsv => ttag::write_tsv(&stream, file),
    }
    .map_err(|e| QtbError::io(&path, e))?;
    report.output(name);
    report.param("stream_sha256", file_digest(&path)?);

    report.result("periods", info.periods as f64, "1");
    report.result("emitted_pairs", info.emitted_pairs as f64, "1");
    report.result("duration", cfg.duration_s, "s");
    report.result("dead_time_removed", info.dead_time_removed as f64, "1");
    let expected = expected_tag_counts(&cfg, kind).in_module("simulator")?;
    let names = qtb_core::tags::ChannelMap::standard();
    for (id, before, kept) in &info.channel_counts {
        let n = names.name(*id).unwrap_or("?");
        report.result(&format!("tags.{n}"), *kept as f64, "1");
        report.result(&format!("tags_before_dead_time.{n}"), *before as f64, "1");
        if let Some((_, mean)) = expected.iter().find(|e| e.0 == *id) {
            report.result(&format!("expected_tags.{n}"), *mean, "1");
            if *mean > 0.0 {
                report.result(&format!("tags_z.{n}"), (*before as f64 - mean) / mean.sqrt(), "1");
            }
        }
    }
    if kind == RunKind::Interference {
        report.result("tags.CLOCK", info.periods as f64, "1");
    }
    if info.dead_time_warning {
        report.warn(format!(
            "dead time removed more than {:.0}% of the tags on at least one channel",
            100.0 * qtb_core::simulator::DEAD_TIME_WARNING_FRACTION
        ));
    }
    Ok(report)
}

fn hist(cli: &Cli, a: &HistArgs, pool: &rayon::ThreadPool) -> Result<RunReport> {
    let mut report = RunReport::new("hist");
    let stream = load_stream(&mut report, &a.input)?;
    report.param("a", &a.a);
    report.param("b", &a.b);
    report.param("bin_width_s", a.bin_width as f64 * 1e-12);
    report.param("range_s", a.range as f64 * 1e-12);
    stream.check_sorted().in_module("coincidence")?;
    let ta = stream.require(channel_id(&stream, &a.a)?).in_module("coincidence")?;
    let tb = stream.require(channel_id(&stream, &a.b)?).in_module("coincidence")?;
    let h = parallel::histogram(ta, tb, a.bin_width, a.range, pool).in_module("coincidence")?;
    write_with(cli, &mut report, "histogram.csv", |b| tables::write_histogram(&h, b))?;
    svg(cli, &mut report, "histogram.svg", || {
        let pts: Vec<(f64, f64)> = (0..h.len()).map(|i| (h.center_s(i) * 1e9, h.counts[i] as f64)).collect();
        line_plot("Delay histogram", "delay (ns)", "counts per bin", &[Series { label: "counts", points: &pts, markers: false }])
    })?;
    report.result("total", h.total() as f64, "1");
    report.result("duration", stream.duration_s(), "s");

    let max = h.counts.iter().copied().max().unwrap_or(0) as f64;
    let peaks = find_peaks(&h, a.peak_separation, a.prominence * max);
    report.result("peaks", peaks.len() as f64, "1");
    for (k, p) in peaks.iter().enumerate() {
        report.result(&format!("peak{k}.center"), p.center_s, "s");
        report.result(&format!("peak{k}.area"), p.area as f64, "1");
    }
    if a.fit_tau {
        let fit = fit_double_exponential(&h).in_module("pairsource")?;
        report.result("tau", fit.tau, "s");
        report.result("tau_err", fit.tau_err, "s");
        report.result("bandwidth", fit.bandwidth.0, "Hz");
        report.result("reduced_chi_square", fit.reduced_chi_square, "1");
    }
    Ok(report)
}

fn clock_period(stream: &TagStream) -> Option<u64> {
    match stream.channel(channel::CLOCK)? {
        Tags::Periodic { period, .. } => Some(*period),
        Tags::Events(_) => None,
    }
}

fn coinc(cli: &Cli, a: &CoincArgs) -> Result<RunReport> {
    let mut report = RunReport::new("coinc");
    let cfg = load_config(cli, &mut report)?;
    let stream = load_stream(&mut report, &a.input)?;
    let (ia, ib) = (channel_id(&stream, &a.a)?, channel_id(&stream, &a.b)?);
    let period = a
        .period
        .or_else(|| clock_period(&stream))
        .or_else(|| cfg.as_ref().map(|c| c.pump.period_ps()))
        .unwrap_or(6250);
    // a shifted window inside the dead time sees suppressed accidentals
    let dead_ps = [ia, ib]
        .iter()
        .map(|id| {
            let d = cfg.as_ref().and_then(|c| c.detectors.get(id)).map_or(qtb_core::simulator::DEFAULT_DEAD_TIME_S, |d| d.dead_time_s);
            (d * 1e12).round() as u64
        })
        .max()
        .unwrap_or(0);
    let shift = a.shift_periods.unwrap_or((dead_ps / period + 1) as i64);
    if shift.unsigned_abs() * period <= dead_ps {
        report.warn("accidental window shift lies within the dead time; accidentals are underestimated");
    }
    report.param("a", &a.a);
    report.param("b", &a.b);
    report.param("window_s", a.window as f64 * 1e-12);
    report.param("offset_s", a.offset as f64 * 1e-12);
    report.param("period_s", period as f64 * 1e-12);
    report.param("shift_periods", shift);
    if shift == 0 {
        return Err(QtbError::Usage("--shift-periods must be non-zero".into()));
    }
    let cc = count_coincidences(&stream, ia, ib, a.window, a.offset).in_module("coincidence")?;
    let acc = count_accidentals(&stream, ia, ib, a.window, a.offset, period, shift).in_module("coincidence")?;
    report.result("coincidences", cc.count as f64, "1");
    report.result("accidentals", acc.count as f64, "1");
    report.result("coincidence_rate", cc.rate, "1/s");
    report.result("accidental_rate", acc.rate, "1/s");
    report.result("duration", cc.duration_s, "s");
    let (car, err) = car_from_counts(cc.count, acc.count);
    if car.zero_accidentals {
        report.warn("no accidental coincidences; CAR is unbounded");
    } else {
        report.result("car", car.ratio, "1");
        report.result("car_err", err, "1");
    }
    Ok(report)
}

/// Middle-slot gate, width 0.8·ΔT, centered on the mean arrival time.
pub fn default_gate(cfg: &ExperimentConfig) -> Gate {
    let bin = cfg.pump.bin_separation_ps();
    let offset = cfg.pump.pulse_delay_s * 1e12 + bin as f64 + cfg.coherence_time_s * 1e12;
    Gate::new(offset.round() as i64, (0.8 * bin as f64).round() as u64).expect("positive width")
}

fn triple(cli: &Cli, a: &TripleArgs, pool: &rayon::ThreadPool) -> Result<RunReport> {
    let mut report = RunReport::new("triple");
    let cfg = load_config(cli, &mut report)?.unwrap_or_else(ExperimentConfig::fixture);
    let stream = load_stream(&mut report, &a.input)?;
    let gate_a = a.gate_a.unwrap_or_else(|| default_gate(&cfg));
    let gate_b = a.gate_b.unwrap_or_else(|| default_gate(&cfg));
    report.param("gate_a", [gate_a.offset_ps as f64 * 1e-12, gate_a.width_ps as f64 * 1e-12]);
    report.param("gate_b", [gate_b.offset_ps as f64 * 1e-12, gate_b.width_ps as f64 * 1e-12]);
    stream.check_sorted().in_module("coincidence")?;
    let clock = stream.require(channel_id(&stream, &a.clock)?).in_module("coincidence")?;
    if let Some(spacing) = clock.min_spacing() {
        if gate_a.width_ps > spacing || gate_b.width_ps > spacing {
            return Err(QtbError::Analysis {
                module: "coincidence",
                source: qtb_core::Error::Config("gate wider than the clock period".into()),
            });
        }
    }
    let mut counts = [0u64; 4];
    for (k, port) in PortPair::ALL.iter().enumerate() {
        let (ca, cb) = port.channels();
        let ta = stream.require(ca).in_module("coincidence")?;
        let tb = stream.require(cb).in_module("coincidence")?;
        counts[k] = parallel::triples(clock, ta, tb, gate_a, gate_b, pool);
        report.result(&format!("triples.{}", port.label()), counts[k] as f64, "1");
        if stream.duration_s() > 0.0 {
            report.result(&format!("rate.{}", port.label()), counts[k] as f64 / stream.duration_s(), "1/s");
        }
    }
    report.result("duration", stream.duration_s(), "s");
    match correlation_coefficient(counts[0], counts[1], counts[2], counts[3]) {
        Ok(e) => report.result("correlation_coefficient", e, "1"),
        Err(e) => report.warn(format!("analysis: {e}")),
    }
    Ok(report)
}

/// Groups fringe rows by port, in [`PortPair::ALL`] order.
fn group_scans(rows: Vec<(PortPair, FringeSample)>, alpha: f64) -> Result<Vec<FringeScan>> {
    let mut scans = Vec::new();
    for port in PortPair::ALL {
        let samples: Vec<FringeSample> = rows.iter().filter(|r| r.0 == port).map(|r| r.1).collect();
        if !samples.is_empty() {
            scans.push(FringeScan::new(port, samples, alpha).in_module("analysis")?);
        }
    }
    Ok(scans)
}

/// Model rate of a fitted fringe at idler phase `beta`.
pub fn fringe_model(r: &VisibilityResult, alpha: f64, beta: f64) -> f64 {
    r.amplitude * (1.0 + r.visibility * (beta + alpha + r.phase_offset).cos())
}

fn fringe(cli: &Cli, a: &FringeArgs) -> Result<RunReport> {
    let mut report = RunReport::new("fringe");
    report.param("alpha_rad", a.alpha);
    let mut rows = Vec::new();
    for spec in &a.scans {
        let (port, path) = match spec.split_once('=') {
            Some((p, f)) => (Some(PortPair::parse(p).map_err(|e| QtbError::Usage(e.to_string()))?), PathBuf::from(f)),
            None => (None, PathBuf::from(spec)),
        };
        report.input(&path)?;
        rows.extend(tables::read_fringe(tables::open(&path)?, &path.display().to_string(), port)?);
    }
    let scans = group_scans(rows, a.alpha)?;
    let mut fits = Vec::new();
    let mut plot = Vec::new();
    for scan in &scans {
        let r = fit_fringe(scan).in_module("analysis")?;
        let l = scan.port.label();
        report.result(&format!("visibility.{l}"), r.visibility, "1");
        report.result(&format!("visibility_err.{l}"), r.sigma_v, "1");
        report.result(&format!("phase_offset.{l}"), r.phase_offset, "rad");
        report.result(&format!("phase_offset_err.{l}"), r.sigma_phase, "rad");
        report.result(&format!("mean_rate.{l}"), r.amplitude, "1/s");
        if r.unphysical {
            report.warn(format!("{l}: fitted visibility exceeds 1"));
        }
        let data: Vec<Vec<f64>> = scan
            .samples
            .iter()
            .map(|s| {
                let rate = s.count as f64 / s.dwell_s;
                vec![s.phase, rate, (s.count.max(1) as f64).sqrt() / s.dwell_s, fringe_model(&r, a.alpha, s.phase)]
            })
            .collect();
        write_with(cli, &mut report, &format!("fringe_{l}.csv"), |b| {
            tables::write_table(&["phase_rad", "rate", "rate_err", "fit_rate"], &data, b)
        })?;
        let measured: Vec<(f64, f64)> = data.iter().map(|d| (d[0], d[1])).collect();
        let curve: Vec<(f64, f64)> = (0..=200)
            .map(|k| {
                let b = TAU * k as f64 / 200.0;
                (b, fringe_model(&r, a.alpha, b))
            })
            .collect();
        plot.push((l, measured, curve));
        fits.push(r);
    }
    svg(cli, &mut report, "fringe.svg", || {
        let series: Vec<Series<'_>> = plot
            .iter()
            .flat_map(|(l, m, c)| [Series { label: l, points: m, markers: true }, Series { label: "", points: c, markers: false }])
            .collect();
        line_plot("Two-photon interference", "idler phase (rad)", "rate (1/s)", &series)
    })?;

    if fits.len() == 4 {
        let raw = raw_visibility(&fits).in_module("analysis")?;
        report.result("raw_visibility", raw.visibility, "1");
        report.result("raw_visibility_err", raw.sigma, "1");
        if !raw.weighted {
            report.warn("a zero visibility error forced the unweighted mean");
        }
        match chsh_from_visibility(raw.visibility.min(qtb_core::analysis::MAX_VISIBILITY), raw.sigma) {
            Ok(c) => {
                report.result("chsh_s", c.s, "1");
                report.result("chsh_s_err", c.sigma_s, "1");
                report.result("chsh_n_sigma", c.n_sigma, "1");
            }
            Err(e) => report.warn(format!("analysis: {e}")),
        }
        if let Some(points) = correlation_points(&scans, a.alpha) {
            let e = fit_correlation(&points).in_module("analysis")?;
            report.result("correlation_visibility", e.visibility, "1");
            report.result("correlation_visibility_err", e.sigma_v, "1");
            report.result("correlation_phase_offset", e.phase_offset, "rad");
            let data: Vec<Vec<f64>> = points
                .iter()
                .map(|p| {
                    let [n11, n12, n21, n22] = p.counts;
                    let ev = correlation_coefficient(n11, n12, n21, n22).unwrap_or(f64::NAN);
                    let n = p.counts.iter().sum::<u64>().max(1) as f64;
                    vec![p.phase_sum, ev, ((1.0 - ev * ev) / n).max(0.0).sqrt(), e.visibility * (p.phase_sum + e.phase_offset).cos()]
                })
                .collect();
            write_with(cli, &mut report, "correlation.csv", |b| {
                tables::write_table(&["phase_sum_rad", "e", "e_err", "fit_e"], &data, b)
            })?;
            svg(cli, &mut report, "correlation.svg", || {
                let m: Vec<(f64, f64)> = data.iter().map(|d| (d[0], d[1])).collect();
                let c: Vec<(f64, f64)> = (0..=200)
                    .map(|k| {
                        let t = TAU * k as f64 / 200.0;
                        (t, e.visibility * (t + e.phase_offset).cos())
                    })
                    .collect();
                line_plot(
                    "Correlation coefficient",
                    "alpha + beta (rad)",
                    "E",
                    &[Series { label: "E", points: &m, markers: true }, Series { label: "fit", points: &c, markers: false }],
                )
            })?;
        } else {
            report.warn("port scans do not share phases and dwell times; correlation coefficient skipped");
        }
    } else {
        report.warn(format!("{} of 4 port pairs present; raw visibility needs all four", fits.len()));
    }
    Ok(report)
}

/// Four-port counts at phases common to all scans with equal dwell.
fn correlation_points(scans: &[FringeScan], alpha: f64) -> Option<Vec<CorrelationPoint>> {
    let mut points = Vec::new();
    for s0 in &scans[0].samples {
        let mut counts = [0u64; 4];
        for (k, scan) in scans.iter().enumerate() {
            let m = scan.samples.iter().find(|s| (s.phase - s0.phase).abs() < 1e-9 && s.dwell_s == s0.dwell_s)?;
            counts[k] = m.count;
        }
        if counts.iter().sum::<u64>() > 0 {
            points.push(CorrelationPoint { phase_sum: alpha + s0.phase, counts });
        }
    }
    (points.len() >= 3).then_some(points)
}

fn chsh(a: &ChshArgs) -> Result<RunReport> {
    let mut report = RunReport::new("chsh");
    report.param("visibility", a.visibility);
    report.param("sigma", a.sigma);
    let c = chsh_from_visibility(a.visibility, a.sigma).in_module("analysis")?;
    report.result("s", c.s, "1");
    report.result("s_err", c.sigma_s, "1");
    report.result("n_sigma", c.n_sigma, "1");
    Ok(report)
}

fn tomo(cli: &Cli, a: &TomoArgs, pool: &rayon::ThreadPool) -> Result<RunReport> {
    let mut report = RunReport::new("tomo");
    report.input(&a.counts)?;
    let text = std::fs::read_to_string(&a.counts).map_err(|e| QtbError::io(&a.counts, e))?;
    let records = parse_counts(&text, &a.counts.display().to_string())?;
    let trials = a.trials.unwrap_or(if a.full { 1000 } else { 100 });
    let seed = cli.seed.unwrap_or(0);
    report.param("trials", trials);
    report.param("seed", seed);
    report.param("target", "phi+");

    let lin = linear_inversion(&records).in_module("tomography")?;
    report.result("linear_min_eigenvalue", lin.min_eigenvalue, "1");
    if !lin.physical {
        report.warn("linear inversion is not positive semidefinite; MLE starts from its projection");
    }
    let mle = mle_reconstruct(&records).in_module("tomography")?;
    if !mle.converged {
        report.warn("maximum-likelihood ascent hit its iteration cap; best iterate reported");
    }
    let target = phi_plus();
    let pure = DensityMatrix::from_pure(&target).in_module("tomography")?;
    let f = fidelity(&mle.rho, &target).in_module("tomography")?;
    report.result("fidelity", f, "1");
    report.result("purity", mle.rho.purity(), "1");
    report.result("trace_distance_to_target", mle.rho.trace_distance(&pure), "1");
    report.result("log_likelihood", mle.log_likelihood, "1");
    report.result("iterations", mle.iterations as f64, "1");
    report.result("linear_fidelity", fidelity(&lin.rho.psd_projected().in_module("tomography")?, &target).in_module("tomography")?, "1");

    let doc = density_to_doc(&mle.rho);
    write_file(cli, &mut report, "rho.json", (serde_json::to_string_pretty(&doc).expect("json") + "\n").as_bytes())?;

    let mc = parallel::monte_carlo(&records, &target, trials, seed, pool).in_module("tomography")?;
    report.result("mc_mean", mc.mean, "1");
    report.result("mc_std", mc.std, "1");
    report.result("trials", trials as f64, "1");
    report.result("mc_dropped", mc.dropped as f64, "1");
    if mc.dropped > 0 {
        report.warn(format!("{} Monte Carlo trials did not converge and were dropped", mc.dropped));
    }
    Ok(report)
}

fn fit_resonance_cmd(cli: &Cli, a: &FitResonanceArgs) -> Result<RunReport> {
    let mut report = RunReport::new("fit-resonance");
    report.input(&a.trace)?;
    let trace = tables::read_trace(tables::open(&a.trace)?, &a.trace.display().to_string())?;
    let (fit, samples): (ResonanceFit, Vec<(f64, f64)>) = match &trace {
        Trace::Frequency(v) => (fit_resonance(v).in_module("resonator")?, v.iter().map(|(f, t)| (f.0, *t)).collect()),
        Trace::Wavelength(v) => (
            fit_resonance_wavelength(v).in_module("resonator")?,
            v.iter()
                .map(|(w, t)| (qtb_core::quantities::wavelength_to_frequency(*w).map(|f| f.0).unwrap_or(f64::NAN), *t))
                .collect(),
        ),
    };
    report_resonance(&mut report, &fit);
    let data: Vec<Vec<f64>> = samples
        .iter()
        .map(|&(f, t)| vec![f, t, transmission(&fit.resonance, Frequency(f))])
        .collect();
    write_with(cli, &mut report, "resonance_fit.csv", |b| {
        tables::write_table(&["frequency_hz", "transmission", "fit"], &data, b)
    })?;
    svg(cli, &mut report, "resonance.svg", || {
        let c = fit.resonance.center.0;
        let m: Vec<(f64, f64)> = data.iter().map(|d| ((d[0] - c) * 1e-9, d[1])).collect();
        let f: Vec<(f64, f64)> = data.iter().map(|d| ((d[0] - c) * 1e-9, d[2])).collect();
        line_plot(
            "Transmission",
            "detuning (GHz)",
            "transmission",
            &[Series { label: "trace", points: &m, markers: true }, Series { label: "Lorentzian", points: &f, markers: false }],
        )
    })?;
    Ok(report)
}

pub fn report_resonance(report: &mut RunReport, fit: &ResonanceFit) {
    let r = fit.resonance;
    report.result("center", r.center.0, "Hz");
    report.result("center_err", fit.center_err.0, "Hz");
    report.result("linewidth", r.linewidth.0, "Hz");
    report.result("linewidth_err", fit.linewidth_err.0, "Hz");
    report.result("t_min", r.t_min, "1");
    report.result("t_min_err", fit.t_min_err, "1");
    report.result("q_factor", fit.q_factor(), "1");
    report.result("q_factor_err", fit.q_factor_err(), "1");
    report.result("residual_rms", fit.residual_rms, "1");
    if let Some(ch) = nearest_itu_channel(r.center) {
        report.result("itu_channel", ch as f64, "1");
    }
}

fn report_singles(report: &mut RunReport, prefix: &str, fit: &SinglesFit) {
    report.result(&format!("{prefix}a"), fit.model.a, "1/(s mW^2)");
    report.result(&format!("{prefix}a_err"), fit.errors[0], "1/(s mW^2)");
    report.result(&format!("{prefix}b"), fit.model.b, "1/(s mW)");
    report.result(&format!("{prefix}b_err"), fit.errors[1], "1/(s mW)");
    report.result(&format!("{prefix}c"), fit.model.c, "1/s");
    report.result(&format!("{prefix}c_err"), fit.errors[2], "1/s");
    if fit.negative_dark {
        report.warn(format!("{prefix}fitted dark rate is negative"));
    }
}

fn fit_singles_cmd(cli: &Cli, a: &FitSinglesArgs) -> Result<RunReport> {
    let mut report = RunReport::new("fit-singles");
    report.input(&a.sweep)?;
    let sweep = tables::read_sweep(tables::open(&a.sweep)?, &a.sweep.display().to_string())?;
    let fit = fit_singles_counts(&sweep).in_module("pairsource")?;
    report_singles(&mut report, "", &fit);

    let data: Vec<Vec<f64>> = sweep
        .iter()
        .map(|s| {
            let p = s.power.as_mw();
            vec![p, s.counts as f64 / s.dwell_s, fit.model.a * p * p + fit.model.b * p + fit.model.c, fit.model.a * p * p]
        })
        .collect();
    write_with(cli, &mut report, "singles_fit.csv", |b| {
        tables::write_table(&["power_mw", "rate", "fit_rate", "sfwm_rate"], &data, b)
    })?;
    svg(cli, &mut report, "singles.svg", || {
        let m: Vec<(f64, f64)> = data.iter().map(|d| (d[0], d[1])).collect();
        let f: Vec<(f64, f64)> = data.iter().map(|d| (d[0], d[2])).collect();
        let s: Vec<(f64, f64)> = data.iter().map(|d| (d[0], d[3])).collect();
        line_plot(
            "Singles",
            "on-chip pump power (mW)",
            "rate (1/s)",
            &[
                Series { label: "measured", points: &m, markers: true },
                Series { label: "aP²+bP+c", points: &f, markers: false },
                Series { label: "aP²", points: &s, markers: false },
            ],
        )
    })?;

    if let Some(p) = a.pump_mw {
        let rate = qtb_core::pairsource::eval_singles(&fit.model, Power::mw(p)).in_module("pairsource")?;
        report.param("pump_mw", p);
        report.result("rate_at_pump", rate, "1/s");
    }
    if let Some(partner) = &a.partner_sweep {
        report.input(partner)?;
        let other = tables::read_sweep(tables::open(partner)?, &partner.display().to_string())?;
        let ofit = fit_singles_counts(&other).in_module("pairsource")?;
        report_singles(&mut report, "partner_", &ofit);
        if let (Some(p), Some(ncc)) = (a.pump_mw, a.coincidence_rate) {
            let stats = PairStatistics::new(ncc, a.accidental_rate, a.window).in_module("pairsource")?;
            let pgr = infer_pgr(&fit.model, &ofit.model, Power::mw(p), &stats, a.bandwidth.map(Frequency))
                .in_module("pairsource")?;
            report.result("pgr", pgr.pgr, "1/s");
            report.result("pgr_per_mw2", pgr.per_mw2, "1/(s mW^2)");
            if let Some(b) = pgr.brightness {
                report.result("brightness", b, "1/(s GHz mW^2)");
            }
        }
    }
    Ok(report)
}

fn brightness(a: &BrightnessArgs) -> Result<RunReport> {
    let mut report = RunReport::new("brightness");
    let lambda = Wavelength::nm(a.pump_nm);
    let design = MaterialWaveguide::new(a.n2, a.a_eff, lambda).in_module("pairsource")?;
    let (rn2, ra, rr, rl) = (
        a.ref_n2.unwrap_or(a.n2),
        a.ref_a_eff.unwrap_or(a.a_eff),
        a.ref_radius.unwrap_or(a.radius),
        a.ref_linewidth.unwrap_or(a.linewidth),
    );
    let reference = MaterialWaveguide::new(rn2, ra, lambda).in_module("pairsource")?;
    report.param("design", serde_json::json!({"n2": a.n2, "a_eff": a.a_eff, "radius": a.radius, "linewidth_hz": a.linewidth}));
    report.param("reference", serde_json::json!({"n2": rn2, "a_eff": ra, "radius": rr, "linewidth_hz": rl}));
    let f = brightness_figure_of_merit(&design, a.radius, Frequency(a.linewidth)).in_module("pairsource")?;
    let fr = brightness_figure_of_merit(&reference, rr, Frequency(rl)).in_module("pairsource")?;
    let ratio = f / fr;
    report.result("figure_of_merit", f, "m^2/(W^2 Hz^3)");
    report.result("reference_figure_of_merit", fr, "m^2/(W^2 Hz^3)");
    report.result("ratio", ratio, "1");
    report.result(
        "nonlinear_coefficient",
        qtb_core::pairsource::nonlinear_coefficient(&design),
        "1/(W m)",
    );
    if rn2 == a.n2 && ra == a.a_eff && rr == a.radius && rl != a.linewidth {
        let cube = (rl / a.linewidth).powi(3);
        report.result("cube_law_ratio", cube, "1");
        report.result("cube_law_deviation", (ratio - cube).abs() / cube, "1");
    }
    Ok(report)
}

/// Idler phases `2πk/n`.
pub fn phase_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect()
}

