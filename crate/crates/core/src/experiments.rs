//! Config-driven experiment runner.
//!
//! Each experiment builds a schedule, propagates a Gaussian packet and
//! writes CSV series, binary density maps and a `manifest.txt` listing every
//! output with its SHA-256 checksum.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::bands::{solve_bands, BlochProblem};
use crate::error::{Error, Result};
use crate::model::{make_gaussian, ControlSchedule, Preset, ProbeWindow, ScaledParams, SpatialGrid, WaveFunction};
use crate::observables::{interval_probability, moments, tracked_moments, BandOccupationSeries, BandProjector};
use crate::parallel::{self, Execution};
use crate::propagate::{self, evolve, run, write_sidecar, PropagationConfig};
use crate::tight_binding::{lie_moments, tb_oracle, dispersion_law, TBGaussian, TBModel};

/// Lower output branch of the splitter and interferometer.
pub const LOWER_BRANCH: (f64, f64) = (-800.0, -300.0);
/// Upper output branch.
pub const UPPER_BRANCH: (f64, f64) = (-300.0, 200.0);
/// Square-well probe of the interferometer.
pub const MZI_PROBE: (f64, f64) = (-195.0, 195.0);
/// Probe switching times in units of `T_B`.
pub const MZI_WINDOW: (f64, f64) = (0.45, 0.55);
/// Where the two packets of the `split_t2` schedule sit at `t = 3 T_B`.
pub const SPLIT_T2_PACKETS: [(f64, f64); 2] = [(-1400.0, -900.0), (300.0, 800.0)];

/// Packet width `w` of `e^{−(x/w)²}` for the linear experiments.
pub const PACKET_WIDTH: f64 = 60.0;
/// Narrower packet used for the mean-field probe.
pub const GPE_PACKET_WIDTH: f64 = 20.0;
/// Half-width of the window that follows the main packet in
/// `moments_tracked.csv`.
pub const TRACKING_HALF_WIDTH: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    Bloch,
    FreeSplit,
    Shuttle,
    BzOscillation,
    BzTransport,
    BeamSplitT2,
    BeamSplitT3,
    BeamSplitT4,
    EpsSweep,
    MziV0Sweep,
    GpeGSweep,
    TbDispersion,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 12] = [
        ExperimentKind::Bloch,
        ExperimentKind::FreeSplit,
        ExperimentKind::Shuttle,
        ExperimentKind::BzOscillation,
        ExperimentKind::BzTransport,
        ExperimentKind::BeamSplitT2,
        ExperimentKind::BeamSplitT3,
        ExperimentKind::BeamSplitT4,
        ExperimentKind::EpsSweep,
        ExperimentKind::MziV0Sweep,
        ExperimentKind::GpeGSweep,
        ExperimentKind::TbDispersion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Bloch => "bloch",
            ExperimentKind::FreeSplit => "free_split",
            ExperimentKind::Shuttle => "shuttle",
            ExperimentKind::BzOscillation => "bz_oscillation",
            ExperimentKind::BzTransport => "bz_transport",
            ExperimentKind::BeamSplitT2 => "beam_split_t2",
            ExperimentKind::BeamSplitT3 => "beam_split_t3",
            ExperimentKind::BeamSplitT4 => "beam_split_t4",
            ExperimentKind::EpsSweep => "eps_sweep",
            ExperimentKind::MziV0Sweep => "mzi_v0_sweep",
            ExperimentKind::GpeGSweep => "gpe_g_sweep",
            ExperimentKind::TbDispersion => "tb_dispersion",
        }
    }

    /// The variable a sweep experiment scans, `None` for single runs.
    pub fn sweep_variable(self) -> Option<SweepVariable> {
        match self {
            ExperimentKind::EpsSweep => Some(SweepVariable::Eps),
            ExperimentKind::MziV0Sweep => Some(SweepVariable::V0),
            ExperimentKind::GpeGSweep => Some(SweepVariable::G),
            _ => None,
        }
    }

    /// `ε` used when the config does not set one.
    pub fn default_eps(self) -> f64 {
        match self {
            ExperimentKind::Bloch
            | ExperimentKind::FreeSplit
            | ExperimentKind::Shuttle
            | ExperimentKind::EpsSweep
            | ExperimentKind::TbDispersion => 0.0,
            ExperimentKind::GpeGSweep => 0.104,
            _ => 0.0825,
        }
    }

    /// Default sweep for sweep experiments.
    pub fn default_sweep(self) -> Option<SweepSpec> {
        let variable = self.sweep_variable()?;
        let (start, stop, n) = match variable {
            SweepVariable::Eps => (-0.3, 0.3, 25),
            SweepVariable::V0 => (0.0, 0.21, 32),
            SweepVariable::G => (0.0, 0.3, 24),
        };
        Some(SweepSpec { variable, start, stop, n })
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown experiment `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepVariable {
    Eps,
    V0,
    G,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::Eps => "eps",
            SweepVariable::V0 => "V0",
            SweepVariable::G => "g",
        }
    }
}

impl FromStr for SweepVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eps" => Ok(SweepVariable::Eps),
            "V0" | "v0" => Ok(SweepVariable::V0),
            "g" => Ok(SweepVariable::G),
            _ => Err(Error::InvalidParameter(format!("unknown sweep variable `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub start: f64,
    pub stop: f64,
    pub n: usize,
}

impl SweepSpec {
    /// `n` evenly spaced values from `start` to `stop` inclusive.
    pub fn values(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.start];
        }
        (0..self.n)
            .map(|i| self.start + (self.stop - self.start) * i as f64 / (self.n - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub params: ScaledParams,
    pub n_points: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub steps_per_bloch: usize,
    pub sweep: Option<SweepSpec>,
    pub output_dir: PathBuf,
    pub stride: usize,
    pub execution: Execution,
}

impl ExperimentConfig {
    /// Defaults for `kind`: the standard constants, the 16384-point grid and, for
    /// sweeps, the default sweep range.
    pub fn new(kind: ExperimentKind) -> Self {
        let grid = SpatialGrid::default();
        Self {
            kind,
            params: ScaledParams::default().with_eps(kind.default_eps()),
            n_points: grid.n_points(),
            x_min: grid.x_min(),
            x_max: grid.x_max(),
            steps_per_bloch: PropagationConfig::DEFAULT_STEPS_PER_BLOCH,
            sweep: kind.default_sweep(),
            output_dir: PathBuf::from(format!("out/{}", kind.name())),
            stride: 256,
            execution: Execution::default(),
        }
    }

    pub fn grid(&self) -> Result<SpatialGrid> {
        SpatialGrid::new(self.n_points, self.x_min, self.x_max)
    }

    pub fn propagation(&self) -> Result<PropagationConfig> {
        Ok(PropagationConfig::for_params(&self.params, self.steps_per_bloch)?.with_stride(self.stride))
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.grid()?;
        if self.stride == 0 || self.steps_per_bloch == 0 {
            return Err(Error::InvalidParameter("stride and dt_per_TB must be positive".into()));
        }
        match (self.kind.sweep_variable(), &self.sweep) {
            (Some(v), Some(s)) => {
                if s.variable != v {
                    return Err(Error::InvalidParameter(format!(
                        "{} sweeps `{}`, not `{}`",
                        self.kind,
                        v.name(),
                        s.variable.name()
                    )));
                }
                if s.n == 0 || !s.start.is_finite() || !s.stop.is_finite() {
                    return Err(Error::InvalidParameter("sweep needs n ≥ 1 and finite limits".into()));
                }
            }
            (None, Some(_)) => {
                return Err(Error::InvalidParameter(format!("{} is not a sweep experiment", self.kind)))
            }
            (Some(_), None) => {
                return Err(Error::InvalidParameter(format!("{} needs a [sweep] section", self.kind)))
            }
            (None, None) => {}
        }
        Ok(())
    }

    /// Parses the `key = value` format with `[params]`, `[grid]`, `[sweep]`
    /// and `[output]` sections.
    pub fn parse(text: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Config { line, message };
        let mut section = String::new();
        let mut values: BTreeMap<&'static str, (usize, String)> = BTreeMap::new();
        let mut sweep_keys = 0;
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err(lineno, format!("malformed section header `{line}`")))?
                    .trim();
                if !["params", "grid", "sweep", "output"].contains(&name) {
                    return Err(err(lineno, format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(lineno, format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let allowed: &[&str] = match key {
                "experiment" => &["", "params", "grid", "sweep", "output"],
                "hbar" | "F" | "eps" | "g" | "A" => &["params"],
                "n_points" | "x_min" | "x_max" => &["grid"],
                "dt_per_TB" => &["grid", "params"],
                "variable" | "start" | "stop" | "n" => &["sweep"],
                "dir" | "stride" => &["output"],
                _ => return Err(err(lineno, format!("unknown key `{key}`"))),
            };
            if !allowed.contains(&section.as_str()) {
                return Err(err(lineno, format!("key `{key}` does not belong in [{section}]")));
            }
            let key: &'static str = KEYS.iter().find(|k| **k == key).copied().unwrap_or("");
            if section == "sweep" {
                sweep_keys += 1;
            }
            if values.insert(key, (lineno, value.to_string())).is_some() {
                return Err(err(lineno, format!("duplicate key `{key}`")));
            }
        }

        let end = text.lines().count().max(1);
        let (exp_line, exp) = values
            .get("experiment")
            .cloned()
            .ok_or_else(|| err(end, "missing `experiment`".into()))?;
        let kind: ExperimentKind = exp.parse().map_err(|e: Error| err(exp_line, e.to_string()))?;
        let mut cfg = ExperimentConfig::new(kind);

        let number = |key: &str| -> Result<Option<f64>> {
            match values.get(key) {
                None => Ok(None),
                Some((line, v)) => parse_number(v)
                    .map(Some)
                    .ok_or_else(|| err(*line, format!("`{key}`: cannot parse `{v}` as a number"))),
            }
        };
        let integer = |key: &str| -> Result<Option<usize>> {
            match values.get(key) {
                None => Ok(None),
                Some((line, v)) => v
                    .parse::<usize>()
                    .map(Some)
                    .map_err(|_| err(*line, format!("`{key}`: expected a non-negative integer, got `{v}`"))),
            }
        };

        if let Some(v) = number("hbar")? {
            cfg.params.hbar = v;
        }
        if let Some(v) = number("F")? {
            cfg.params.force = v;
        }
        if let Some(v) = number("eps")? {
            cfg.params.eps = v;
        }
        if let Some(v) = number("g")? {
            cfg.params.g = v;
        }
        if let Some(v) = number("A")? {
            cfg.params.amplitude = v;
        }
        if let Some(v) = integer("n_points")? {
            cfg.n_points = v;
        }
        if let Some(v) = number("x_min")? {
            cfg.x_min = v;
        }
        if let Some(v) = number("x_max")? {
            cfg.x_max = v;
        }
        if let Some(v) = integer("dt_per_TB")? {
            cfg.steps_per_bloch = v;
        }
        if let Some(v) = integer("stride")? {
            cfg.stride = v;
        }
        if let Some((_, v)) = values.get("dir") {
            cfg.output_dir = PathBuf::from(v);
        }

        if sweep_keys > 0 {
            let line = values.get("variable").map_or(end, |v| v.0);
            let mut spec = cfg
                .sweep
                .ok_or_else(|| err(line, format!("{kind} does not take a [sweep] section")))?;
            if let Some((line, v)) = values.get("variable") {
                spec.variable = v.parse().map_err(|e: Error| err(*line, e.to_string()))?;
            }
            if let Some(v) = number("start")? {
                spec.start = v;
            }
            if let Some(v) = number("stop")? {
                spec.stop = v;
            }
            if let Some(v) = integer("n")? {
                spec.n = v;
            }
            cfg.sweep = Some(spec);
        }
        cfg.validate().map_err(|e| err(exp_line, e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
    }
}

const KEYS: [&str; 16] = [
    "hbar", "F", "eps", "g", "A", "n_points", "x_min", "x_max", "dt_per_TB", "experiment", "variable", "start",
    "stop", "n", "dir", "stride",
];

/// Reads a real number; also accepts multiples of π written `2048*pi`,
/// `-2048pi` or `pi`.
fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Some(coef) = s.strip_suffix("pi") {
        let coef = coef.trim().trim_end_matches('*').trim();
        let c = match coef {
            "" | "+" => 1.0,
            "-" => -1.0,
            c => c.parse::<f64>().ok()?,
        };
        return Some(c * PI);
    }
    s.parse::<f64>().ok()
}

/// Record of a run: resolved settings and checksummed outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub settings: Vec<(String, String)>,
    /// `(file name relative to the output directory, sha256 hex)`
    pub files: Vec<(String, String)>,
    pub complete: bool,
    pub error: Option<String>,
    pub wall_time: f64,
}

impl RunManifest {
    pub const FILE_NAME: &'static str = "manifest.txt";

    fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.settings {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s.push_str(&format!("version = {}\n", env!("CARGO_PKG_VERSION")));
        s.push_str(&format!("wall_time_s = {:.3}\n", self.wall_time));
        s.push_str(&format!("status = {}\n", if self.complete { "complete" } else { "incomplete" }));
        if let Some(e) = &self.error {
            s.push_str(&format!("error = {}\n", e.replace('\n', " ")));
        }
        for (name, sum) in &self.files {
            s.push_str(&format!("file = {name} sha256={sum}\n"));
        }
        s
    }

    /// Writes `manifest.txt` via a temporary file and rename.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let tmp = dir.join(".manifest.txt.tmp");
        fs::write(&tmp, self.render())?;
        fs::rename(&tmp, dir.join(Self::FILE_NAME))?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(Self::FILE_NAME))?;
        let mut m = RunManifest { settings: Vec::new(), files: Vec::new(), complete: false, error: None, wall_time: 0.0 };
        for (i, line) in text.lines().enumerate() {
            let (k, v) = line.split_once(" = ").ok_or_else(|| Error::Config {
                line: i + 1,
                message: format!("malformed manifest line `{line}`"),
            })?;
            match k {
                "file" => {
                    let (name, sum) = v.rsplit_once(" sha256=").ok_or_else(|| Error::Config {
                        line: i + 1,
                        message: "file entry without checksum".into(),
                    })?;
                    m.files.push((name.to_string(), sum.to_string()));
                }
                "status" => m.complete = v == "complete",
                "error" => m.error = Some(v.to_string()),
                "wall_time_s" => m.wall_time = v.parse().unwrap_or(0.0),
                "version" => {}
                _ => m.settings.push((k.to_string(), v.to_string())),
            }
        }
        Ok(m)
    }

    /// Files whose current checksum differs from the recorded one (or that
    /// are missing).
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for (name, sum) in &self.files {
            match sha256_file(&dir.join(name)) {
                Ok(s) if &s == sum => {}
                _ => bad.push(name.clone()),
            }
        }
        Ok(bad)
    }
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects output files while a run is in progress.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn csv<F>(&mut self, name: &str, write: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
    {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(fs::File::create(&path)?);
        write(&mut w)?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn add_paths(&mut self, paths: Vec<PathBuf>) {
        for p in paths {
            if let Ok(rel) = p.strip_prefix(&self.dir) {
                self.files.push(rel.to_string_lossy().into_owned());
            }
        }
    }
}

fn settings_of(cfg: &ExperimentConfig) -> Vec<(String, String)> {
    let p = &cfg.params;
    let mut s = vec![
        ("experiment".to_string(), cfg.kind.name().to_string()),
        ("hbar".into(), p.hbar.to_string()),
        ("F".into(), p.force.to_string()),
        ("eps".into(), p.eps.to_string()),
        ("A".into(), p.amplitude.to_string()),
        ("g".into(), p.g.to_string()),
        ("n_points".into(), cfg.n_points.to_string()),
        ("x_min".into(), cfg.x_min.to_string()),
        ("x_max".into(), cfg.x_max.to_string()),
        ("dt_per_TB".into(), cfg.steps_per_bloch.to_string()),
        ("stride".into(), cfg.stride.to_string()),
    ];
    if let Ok(tb) = p.bloch_time() {
        s.push(("dt".into(), (tb / cfg.steps_per_bloch as f64).to_string()));
    }
    if let Some(sw) = &cfg.sweep {
        s.push(("sweep".into(), format!("{} {} {} {}", sw.variable.name(), sw.start, sw.stop, sw.n)));
    }
    s
}

/// Runs the configured experiment and writes its outputs and manifest. On
/// failure the files written so far are kept and the manifest is marked
/// incomplete.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;
    let start = Instant::now();
    let mut out = Outputs { dir: cfg.output_dir.clone(), files: Vec::new() };
    let result = dispatch(cfg, &mut out);
    let mut files = Vec::new();
    for name in &out.files {
        files.push((name.clone(), sha256_file(&out.dir.join(name))?));
    }
    let manifest = RunManifest {
        settings: settings_of(cfg),
        files,
        complete: result.is_ok(),
        error: result.as_ref().err().map(|e| e.to_string()),
        wall_time: start.elapsed().as_secs_f64(),
    };
    manifest.write(&cfg.output_dir)?;
    result.map(|_| manifest)
}

fn dispatch(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let grid = cfg.grid()?;
    let p = cfg.params;
    match cfg.kind {
        ExperimentKind::Bloch => single_run(cfg, out, &grid, ControlSchedule::from_preset(Preset::Bloch, &p, 2)?),
        ExperimentKind::FreeSplit => {
            single_run(cfg, out, &grid, ControlSchedule::from_preset(Preset::FreeSplit, &p, 2)?)
        }
        ExperimentKind::Shuttle => single_run(cfg, out, &grid, ControlSchedule::from_preset(Preset::Shuttle, &p, 4)?),
        ExperimentKind::BzTransport => {
            single_run(cfg, out, &grid, ControlSchedule::from_preset(Preset::BzTransport, &p, 1)?)
        }
        ExperimentKind::BeamSplitT2 => {
            single_run(cfg, out, &grid, ControlSchedule::from_preset(Preset::SplitT2, &p, 1)?)
        }
        ExperimentKind::BeamSplitT3 => {
            single_run(cfg, out, &grid, ControlSchedule::from_preset(Preset::SplitT3, &p, 1)?)
        }
        ExperimentKind::BeamSplitT4 => {
            single_run(cfg, out, &grid, ControlSchedule::from_preset(Preset::SplitT4, &p, 1)?)
        }
        ExperimentKind::BzOscillation => bz_oscillation(cfg, out, &grid),
        ExperimentKind::EpsSweep | ExperimentKind::MziV0Sweep | ExperimentKind::GpeGSweep => {
            sweep_run(cfg, out, &grid)
        }
        ExperimentKind::TbDispersion => tb_dispersion(cfg, out),
    }
}

/// Propagates one schedule, writing the density map, moments and the
/// fixed-interval branch probabilities at every snapshot.
fn single_run(cfg: &ExperimentConfig, out: &mut Outputs, grid: &SpatialGrid, schedule: ControlSchedule) -> Result<()> {
    let psi0 = make_gaussian(grid, PACKET_WIDTH, 0.0, 0.0)?;
    let traj = run(&psi0, &schedule, &cfg.propagation()?, &cfg.params)?;
    out.add_paths(traj.write_binary(&out.dir, "density", &cfg.params)?);
    let m = moments(&traj)?;
    out.csv("moments.csv", |w| m.write_csv(w))?;
    let tracked = tracked_moments(&traj, TRACKING_HALF_WIDTH)?;
    out.csv("moments_tracked.csv", |w| tracked.write_csv(w))?;
    let intervals = if cfg.kind == ExperimentKind::BeamSplitT2 {
        SPLIT_T2_PACKETS
    } else {
        [LOWER_BRANCH, UPPER_BRANCH]
    };
    let mut rows = Vec::with_capacity(traj.len());
    for i in 0..traj.len() {
        let rho = traj.density(i);
        let a = crate::observables::interval_probability_density(grid, &rho, intervals[0].0, intervals[0].1)?;
        let b = crate::observables::interval_probability_density(grid, &rho, intervals[1].0, intervals[1].1)?;
        rows.push((traj.times[i], a, b));
    }
    out.csv("intervals.csv", |w| {
        writeln!(
            w,
            "# p_a on [{}, {}], p_b on [{}, {}]",
            intervals[0].0, intervals[0].1, intervals[1].0, intervals[1].1
        )?;
        writeln!(w, "time,p_a,p_b")?;
        for (t, a, b) in &rows {
            writeln!(w, "{t:.10e},{a:.12e},{b:.12e}")?;
        }
        Ok(())
    })
}

/// Bloch-Zener oscillation over `4 T_B`: miniband occupations at `n T_1`,
/// return fidelity, moments and the density map.
fn bz_oscillation(cfg: &ExperimentConfig, out: &mut Outputs, grid: &SpatialGrid) -> Result<()> {
    let p = cfg.params;
    let schedule = ControlSchedule::from_preset(Preset::Bloch, &p, 4)?;
    let prop = cfg.propagation()?;
    let table = solve_bands(&BlochProblem::for_grid(p, grid).with_execution(cfg.execution), 2)?;
    let projector = BandProjector::new(table, grid)?;
    let psi0 = make_gaussian(grid, PACKET_WIDTH, 0.0, 0.0)?;
    let t1_steps = cfg.steps_per_bloch / 2;
    let mut occ = BandOccupationSeries::default();
    let mut fidelity = Vec::new();
    let mut first_err = None;
    let traj = {
        let mut times = Vec::new();
        let mut abs_psi = Vec::new();
        let mut absorbed = Vec::new();
        let final_state = propagate::run_observed(
            &psi0,
            &schedule,
            &PropagationConfig { snapshot_stride: gcd(prop.snapshot_stride, t1_steps), ..prop },
            &p,
            |info, psi| {
                if info.step % prop.snapshot_stride == 0 {
                    times.push(info.time);
                    abs_psi.push(psi.amplitudes().iter().map(|z| z.norm()).collect());
                    absorbed.push(psi.absorbed_norm());
                    fidelity.push((info.time, psi0.fidelity(psi)));
                }
                if t1_steps > 0 && info.step % t1_steps == 0 {
                    match projector.occupations(psi) {
                        Ok(v) => occ.push(info.time, v[0], v[1], psi.absorbed_norm()),
                        Err(e) => {
                            first_err.get_or_insert(e);
                        }
                    }
                }
            },
        )?;
        propagate::Trajectory {
            grid: grid.clone(),
            times,
            abs_psi,
            states: None,
            absorbed,
            final_state,
            n_steps: schedule_steps(&schedule, prop.dt),
            dt: prop.dt,
        }
    };
    if let Some(e) = first_err {
        return Err(e);
    }
    out.add_paths(traj.write_binary(&out.dir, "density", &p)?);
    let m = moments(&traj)?;
    out.csv("moments.csv", |w| m.write_csv(w))?;
    out.csv("occupations.csv", |w| occ.write_csv(w))?;
    out.csv("fidelity.csv", |w| {
        writeln!(w, "time,fidelity")?;
        for (t, f) in &fidelity {
            writeln!(w, "{t:.10e},{f:.12e}")?;
        }
        Ok(())
    })
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn schedule_steps(schedule: &ControlSchedule, dt: f64) -> usize {
    (schedule.t_final() / dt).round() as usize
}

/// `(P_lower, P_upper)` on the fixed output intervals.
pub fn branch_probabilities(psi: &WaveFunction) -> Result<(f64, f64)> {
    Ok((
        interval_probability(psi, LOWER_BRANCH.0, LOWER_BRANCH.1)?,
        interval_probability(psi, UPPER_BRANCH.0, UPPER_BRANCH.1)?,
    ))
}

/// Final state of the beam-splitter step: constant `ε` and `F` for `T_B/2`.
pub fn eps_point(params: &ScaledParams, grid: &SpatialGrid, steps_per_bloch: usize) -> Result<WaveFunction> {
    let tb = params.bloch_time()?;
    let schedule = ControlSchedule::constant(params, 0.5 * tb)?;
    let psi0 = make_gaussian(grid, PACKET_WIDTH, 0.0, 0.0)?;
    evolve(&psi0, &schedule, &PropagationConfig::for_params(params, steps_per_bloch)?, params)
}

/// Final state of the interferometer at `T_B` with probe strength `v0`.
pub fn mzi_point(params: &ScaledParams, grid: &SpatialGrid, steps_per_bloch: usize, v0: f64) -> Result<WaveFunction> {
    let tb = params.bloch_time()?;
    let schedule = ControlSchedule::constant(params, tb)?.with_probe(ProbeWindow {
        t_start: MZI_WINDOW.0 * tb,
        t_end: MZI_WINDOW.1 * tb,
        x_left: MZI_PROBE.0,
        x_right: MZI_PROBE.1,
        v0,
    })?;
    let psi0 = make_gaussian(grid, PACKET_WIDTH, 0.0, 0.0)?;
    evolve(&psi0, &schedule, &PropagationConfig::for_params(params, steps_per_bloch)?, params)
}

/// Final state of the mean-field interferometer at `T_B`; `g` is taken
/// from `params`.
pub fn gpe_point(params: &ScaledParams, grid: &SpatialGrid, steps_per_bloch: usize) -> Result<WaveFunction> {
    let tb = params.bloch_time()?;
    let schedule = ControlSchedule::constant(params, tb)?;
    let psi0 = make_gaussian(grid, GPE_PACKET_WIDTH, 0.0, 0.0)?;
    evolve(&psi0, &schedule, &PropagationConfig::for_params(params, steps_per_bloch)?, params)
}

/// One evaluated sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub absorbed: f64,
}

/// Evaluates `point` at every value, concurrently when `exec` allows.
/// Results come back in input order; the first failure names its value.
pub fn sweep<F>(exec: Execution, values: &[f64], point: F) -> Result<Vec<SweepPoint>>
where
    F: Fn(f64) -> Result<SweepPoint> + Sync + Send,
{
    parallel::try_map(exec, values, |&v| {
        point(v).map_err(|e| Error::SweepPoint { value: v, source: Box::new(e) })
    })
}

fn sweep_run(cfg: &ExperimentConfig, out: &mut Outputs, grid: &SpatialGrid) -> Result<()> {
    let spec = cfg.sweep.expect("validated");
    let values = spec.values();
    let points_dir = out.dir.join("points");
    fs::create_dir_all(&points_dir)?;
    let base = cfg.params;
    let steps = cfg.steps_per_bloch;
    let kind = cfg.kind;
    let index_of = |v: f64| values.iter().position(|x| *x == v).unwrap_or(0);
    let result = sweep(cfg.execution, &values, |v| {
        let psi = match kind {
            ExperimentKind::EpsSweep => eps_point(&base.with_eps(v), grid, steps)?,
            ExperimentKind::MziV0Sweep => mzi_point(&base, grid, steps, v)?,
            _ => gpe_point(&base.with_g(v), grid, steps)?,
        };
        let path = points_dir.join(format!("{}_{:04}.bin", spec.variable.name(), index_of(v)));
        let mut w = BufWriter::new(fs::File::create(&path)?);
        for z in psi.amplitudes() {
            w.write_all(&z.norm().to_le_bytes())?;
        }
        w.flush()?;
        let (lower, upper) = branch_probabilities(&psi)?;
        Ok(SweepPoint { value: v, lower, upper, absorbed: psi.absorbed_norm() })
    });
    // index whatever point files exist, also after a failure
    for i in 0..values.len() {
        let name = format!("points/{}_{:04}.bin", spec.variable.name(), i);
        if out.dir.join(&name).exists() {
            out.files.push(name);
        }
    }
    let points = result?;
    let var = spec.variable.name();
    out.csv("points/index.txt", |w| {
        let mut rows = Vec::new();
        for (i, v) in values.iter().enumerate() {
            rows.push(*v);
            writeln!(w, "{var}_{i:04}.bin {var} = {v:e}")?;
        }
        write_sidecar(&mut *w, grid, &base, "|psi| at readout time", &rows)
    })?;
    out.csv("sweep.csv", |w| {
        writeln!(
            w,
            "# lower on [{}, {}], upper on [{}, {}]",
            LOWER_BRANCH.0, LOWER_BRANCH.1, UPPER_BRANCH.0, UPPER_BRANCH.1
        )?;
        writeln!(w, "{var},p_lower,p_upper,absorbed")?;
        for p in &points {
            writeln!(w, "{:.10e},{:.12e},{:.12e},{:.12e}", p.value, p.lower, p.upper, p.absorbed)?;
        }
        Ok(())
    })
}

/// Tight-binding shuttle dispersion for `σ_n ∈ {10, 20, 40}` and
/// `n = 1..4` periods, closed form against the direct oracle.
fn tb_dispersion(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let p = cfg.params;
    let table = solve_bands(&BlochProblem::new(p.with_eps(0.0)).with_execution(cfg.execution), 2)?;
    let delta = table.ground_band_span();
    let cases: Vec<(f64, usize)> = [10.0, 20.0, 40.0]
        .iter()
        .flat_map(|&s| (1..=4).map(move |n| (s, n)))
        .collect();
    let rows = parallel::try_map(cfg.execution, &cases, |&(sigma, n)| -> Result<[f64; 6]> {
        let model = TBModel::shuttle(delta, p.hbar, p.force, n)?;
        let state = TBGaussian::new(sigma)?;
        let t = model.t_end();
        let (m1, m2) = lie_moments(&model, &state, t)?;
        let (o1, o2) = tb_oracle(&model, &state, t)?.moments();
        let var0 = state.second_moment();
        let law = dispersion_law(&model, model.d * sigma, n) / model.d.powi(2);
        Ok([sigma, n as f64, m1, (m2 - m1 * m1) - var0, (o2 - o1 * o1) - var0, law])
    })?;
    out.csv("tb_dispersion.csv", |w| {
        writeln!(w, "# delta = {delta:e}; variances in sites^2")?;
        writeln!(w, "sigma_n,n_periods,mean_n,dvar_closed_form,dvar_oracle,dvar_law")?;
        for r in &rows {
            writeln!(w, "{},{},{:.12e},{:.12e},{:.12e},{:.12e}", r[0], r[1], r[2], r[3], r[4], r[5])?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let text = "\
experiment = mzi_v0_sweep
[params]
hbar = 2.828   # scaled
F = 0.0011
eps = 0.0825
[grid]
n_points = 4096
x_min = -512*pi
x_max = 512pi
dt_per_TB = 2048
[sweep]
variable = V0
start = 0
stop = 0.21
n = 16
[output]
dir = /tmp/x
stride = 64
";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.kind, ExperimentKind::MziV0Sweep);
        assert_eq!(cfg.n_points, 4096);
        assert!((cfg.x_max - 512.0 * PI).abs() < 1e-9);
        assert_eq!(cfg.sweep.unwrap().n, 16);
        assert_eq!(cfg.stride, 64);
        assert_eq!(cfg.steps_per_bloch, 2048);
    }

    #[test]
    fn config_errors_carry_line_numbers() {
        let e = ExperimentConfig::parse("experiment = bloch\n[params]\nfoo = 1\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 3, .. }), "{e}");
        let e = ExperimentConfig::parse("experiment = bloch\n[grid]\nhbar = 1\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 3, .. }));
        let e = ExperimentConfig::parse("[params]\neps = x\nexperiment = bloch\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 2, .. }));
        let e = ExperimentConfig::parse("experiment = bloch\n[sweep]\nn = 3\n").unwrap_err();
        assert!(matches!(e, Error::Config { .. }));
        let e = ExperimentConfig::parse("[params]\neps = 0.1\n").unwrap_err();
        assert!(matches!(e, Error::Config { .. }));
        let e = ExperimentConfig::parse("experiment = warp\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 1, .. }));
    }

    #[test]
    fn sweep_presence_matches_kind() {
        for kind in ExperimentKind::ALL {
            let cfg = ExperimentConfig::new(kind);
            assert!(cfg.validate().is_ok(), "{kind}");
            assert_eq!(cfg.sweep.is_some(), kind.sweep_variable().is_some());
        }
        let mut cfg = ExperimentConfig::new(ExperimentKind::EpsSweep);
        cfg.sweep = None;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sweep_values_inclusive() {
        let s = SweepSpec { variable: SweepVariable::G, start: 0.0, stop: 0.3, n: 24 };
        let v = s.values();
        assert_eq!(v.len(), 24);
        assert_eq!(v[0], 0.0);
        assert!((v[23] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn pi_numbers() {
        assert_eq!(parse_number("pi"), Some(PI));
        assert_eq!(parse_number("-pi"), Some(-PI));
        assert_eq!(parse_number("4 * pi"), Some(4.0 * PI));
        assert_eq!(parse_number("1.5e-3"), Some(1.5e-3));
        assert_eq!(parse_number("x"), None);
    }

    #[test]
    fn manifest_roundtrip_and_verify() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.csv"), "x\n1\n").unwrap();
        let m = RunManifest {
            settings: vec![("experiment".into(), "bloch".into())],
            files: vec![("a.csv".into(), sha256_file(&dir.path().join("a.csv")).unwrap())],
            complete: true,
            error: None,
            wall_time: 1.0,
        };
        m.write(dir.path()).unwrap();
        let back = RunManifest::read(dir.path()).unwrap();
        assert_eq!(back.files, m.files);
        assert!(back.complete);
        assert!(back.verify(dir.path()).unwrap().is_empty());
        fs::write(dir.path().join("a.csv"), "x\n2\n").unwrap();
        assert_eq!(back.verify(dir.path()).unwrap(), vec!["a.csv".to_string()]);
    }
}
