//! The offline / merge / online-prep / online / restore workflow: run
//! configuration, on-disk artifacts and the phase drivers behind the CLI.
//!
//! Artifacts in the output directory, with `<p>` the parameter tag
//! (`mu` followed by the shortest round-trip decimal of the parameter):
//!
//! | file | phase | content |
//! |---|---|---|
//! | `config_<phase>.json` | all | the configuration of that phase |
//! | `fom_<p>.{bin,idx,init.bin}` | offline | stage snapshots, column index, initial state |
//! | `fom_<p>_run.json` | offline | FOM loop wall time and step counts |
//! | `fom_<p>_final.bin` | offline with `writesol` | final `(v, e, x)` |
//! | `windows.txt` | offline / merge | window table |
//! | `training.json` | merge | training parameters and settings |
//! | `basis_<f>_w<w>.lgrb` | merge | solution basis of field `f ∈ {v, e, x}` |
//! | `force_<g>_w<w>.lgrb` | merge | force basis `g ∈ {f1, ftv}` with `(SᵀΦ)†` |
//! | `samples_<g>_w<w>.txt` | merge | sample set |
//! | `offset_<f>_w<w>_<p>.lgrb` | merge | training offset |
//! | `query_offset_<f>_w<w>_<p>.lgrb` | online prep | query offset |
//! | `rom_ops_<p>.bin` | online prep | cached reduced operators |
//! | `rom_run_<p>.json`, `rom_traj_<p>.json` | online | timings and reduced states |
//! | `rom_final_offset_<p>.bin` | online | offsets of the final window |
//! | `rom_final_<p>.bin`, `errors_<p>.json`, `report.csv` | restore | lifted final state and errors |

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{write_report, ErrorReport, ReportRow};
use crate::fom::{read_state_columns, simulate, write_state_columns, Hydro, HydroState, RunOptions, Scheme, TimeControlParams, Trajectory};
use crate::hyper_reduction::{NonlinearBasis, NonlinearSource, SampleSet, SamplingMethod};
use crate::linalg::DenseMatrix;
use crate::offsets::OffsetKind;
use crate::pod::{Field, ReducedBasis};
use crate::problems::{setup, ProblemKind, ProblemSpec};
use crate::rom::{HyperReduction, ProjectionMode, ReducedOperators, ReducedState, RomModel, RomRunOptions, RomWindow, Transition, WindowBases};
use crate::time_windows::{uniform_windows, windows_by_samples, windows_by_time, WindowTable};
use crate::training::{assemble_online, query_offsets, train, HyperSettings, TrainedModel, TrainingSettings};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Offline,
    Merge,
    OnlinePrep,
    Online,
    Restore,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Phase::Offline => "offline",
            Phase::Merge => "merge",
            Phase::OnlinePrep => "online_prep",
            Phase::Online => "online",
            Phase::Restore => "restore",
        };
        f.write_str(s)
    }
}

fn default_epsilon() -> f64 {
    0.9999
}

fn default_lambda() -> f64 {
    2.0
}

/// One phase of the workflow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub phase: Phase,
    pub problem: ProblemKind,
    pub nx: usize,
    pub ny: usize,
    pub t_final: f64,
    /// POD energy threshold.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Fixed `(n_v, n_e, n_x)`.
    #[serde(default)]
    pub rdim: Option<[usize; 3]>,
    /// Oversampling factors of the velocity and energy force samples; 1 is DEIM.
    #[serde(default = "default_lambda")]
    pub sfacv: f64,
    #[serde(default = "default_lambda")]
    pub sface: f64,
    /// Force bases from the solution bases instead of force snapshots.
    #[serde(default)]
    pub sns: bool,
    /// Hyper-reduced online solve; otherwise the full force is assembled.
    #[serde(default)]
    pub hyper: bool,
    #[serde(default)]
    pub nwin: Option<usize>,
    #[serde(default)]
    pub nwinsamp: Option<usize>,
    #[serde(default)]
    pub window_times: Option<Vec<f64>>,
    #[serde(default)]
    pub rostype: OffsetKind,
    #[serde(default)]
    pub projection: ProjectionMode,
    /// Training parameters (offline, merge) or the single query (online
    /// prep, online, restore).
    pub params: Vec<f64>,
    #[serde(default)]
    pub fixed_dt: Option<f64>,
    /// Write the final FOM solution in the offline phase.
    #[serde(default)]
    pub writesol: bool,
    pub outdir: PathBuf,
    #[serde(default)]
    pub run_id: Option<String>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.nx == 0 || self.ny == 0 {
            return bad(format!("mesh {}x{} is empty", self.nx, self.ny));
        }
        if !(self.t_final > 0.0) {
            return bad(format!("final time {} must be positive", self.t_final));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return bad(format!("energy threshold {} outside (0, 1]", self.epsilon));
        }
        if !(self.sfacv >= 1.0 && self.sface >= 1.0) {
            return bad(format!("oversampling factors {} and {} must be at least 1", self.sfacv, self.sface));
        }
        let window_opts = [self.nwin.is_some(), self.nwinsamp.is_some(), self.window_times.is_some()];
        if window_opts.iter().filter(|&&b| b).count() > 1 {
            return bad("give at most one of nwin, nwinsamp and window times".into());
        }
        if self.params.is_empty() {
            return bad("at least one parameter value required".into());
        }
        if matches!(self.phase, Phase::OnlinePrep | Phase::Online | Phase::Restore) && self.params.len() != 1 {
            return bad(format!("{} takes exactly one query parameter, got {}", self.phase, self.params.len()));
        }
        if let Some(dt) = self.fixed_dt {
            if !(dt > 0.0) {
                return bad(format!("fixed time step {dt} must be positive"));
            }
        }
        self.spec(self.params[0]).validate()
    }

    pub fn spec(&self, param: f64) -> ProblemSpec {
        ProblemSpec { mu: param, ..ProblemSpec::new(self.problem) }
    }

    pub fn setup(&self, param: f64) -> Result<(Hydro, HydroState)> {
        setup(&self.spec(param), self.nx, self.ny, TimeControlParams::default())
    }

    fn sampling(lambda: f64) -> SamplingMethod {
        if lambda == 1.0 {
            SamplingMethod::Deim
        } else {
            SamplingMethod::Oversampled(lambda)
        }
    }

    pub fn training_settings(&self) -> TrainingSettings {
        TrainingSettings {
            epsilon: self.epsilon,
            dims: self.rdim.map(|d| (d[0], d[1], d[2])),
            hyper: Some(HyperSettings {
                sns: self.sns,
                sampling_v: Self::sampling(self.sfacv),
                sampling_e: Self::sampling(self.sface),
            }),
            offset_kind: self.rostype,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Tag of a parameter value in artifact names.
pub fn param_tag(mu: f64) -> String {
    format!("mu{mu}")
}

/// Process exit code for an error: 2 configuration, 3 numerical, 4 IO.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Invalid(_) | Error::EmptyWindow { .. } => 2,
        Error::Linalg(_) | Error::Tangled { .. } | Error::VanishingTimeStep { .. } => 3,
        Error::Io { .. } | Error::Format { .. } => 4,
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.display().to_string(), reason: reason.into() }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| format_err(path, e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| format_err(path, e.to_string()))
}

const BASIS_MAGIC: &[u8; 4] = b"LGRB";
const BASIS_VERSION: u32 = 1;

/// Contents of a basis container: a column block, an offset vector,
/// metadata and an optional pseudo-inverse factor.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisRecord {
    /// 0–2 solution fields (`Field::tag`), 3 for `F̃·1`, 4 for `Fᵀv`.
    pub tag: u32,
    pub window: usize,
    pub phi: DenseMatrix,
    pub offset: Vec<f64>,
    pub epsilon: Option<f64>,
    pub energy_fraction: f64,
    pub singular_values: Vec<f64>,
    pub pinv: Option<DenseMatrix>,
}

pub const TAG_F1: u32 = 3;
pub const TAG_FTV: u32 = 4;

struct ByteWriter<W: Write>(W);

impl<W: Write> ByteWriter<W> {
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: usize) -> std::io::Result<()> {
        self.0.write_all(&(v as u64).to_le_bytes())
    }
    fn f64s(&mut self, v: &[f64]) -> std::io::Result<()> {
        v.iter().try_for_each(|x| self.0.write_all(&x.to_le_bytes()))
    }
    fn vec(&mut self, v: &[f64]) -> std::io::Result<()> {
        self.u64(v.len())?;
        self.f64s(v)
    }
    fn matrix(&mut self, m: &DenseMatrix) -> std::io::Result<()> {
        self.u64(m.rows())?;
        self.u64(m.cols())?;
        self.f64s(m.as_slice())
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl ByteReader<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }
    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
    fn u64(&mut self) -> Option<usize> {
        usize::try_from(u64::from_le_bytes(self.take(8)?.try_into().ok()?)).ok()
    }
    fn f64s(&mut self, n: usize) -> Option<Vec<f64>> {
        let raw = self.take(n.checked_mul(8)?)?;
        Some(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
    fn vec(&mut self) -> Option<Vec<f64>> {
        let n = self.u64()?;
        self.f64s(n)
    }
    fn matrix(&mut self) -> Option<DenseMatrix> {
        let (r, c) = (self.u64()?, self.u64()?);
        DenseMatrix::from_col_major(r, c, self.f64s(r.checked_mul(c)?)?).ok()
    }
}

impl BasisRecord {
    pub fn write(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
        let mut w = ByteWriter(BufWriter::new(f));
        let mut go = || -> std::io::Result<()> {
            w.0.write_all(BASIS_MAGIC)?;
            w.u32(BASIS_VERSION)?;
            w.u32(self.tag)?;
            w.u64(self.window)?;
            w.f64s(&[self.epsilon.unwrap_or(f64::NAN), self.energy_fraction])?;
            w.matrix(&self.phi)?;
            w.vec(&self.offset)?;
            w.vec(&self.singular_values)?;
            match &self.pinv {
                Some(p) => w.matrix(p)?,
                None => w.matrix(&DenseMatrix::zeros(0, 0))?,
            }
            w.0.flush()
        };
        go().map_err(|e| io_err(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| io_err(path, e))?;
        let mut r = ByteReader { bytes: &bytes, pos: 0 };
        if r.take(4) != Some(BASIS_MAGIC.as_slice()) {
            return Err(format_err(path, "bad magic"));
        }
        let parse = |r: &mut ByteReader<'_>| -> Option<Self> {
            if r.u32()? != BASIS_VERSION {
                return None;
            }
            let tag = r.u32()?;
            let window = r.u64()?;
            let meta = r.f64s(2)?;
            let phi = r.matrix()?;
            let offset = r.vec()?;
            let singular_values = r.vec()?;
            let pinv = r.matrix()?;
            Some(Self {
                tag,
                window,
                phi,
                offset,
                epsilon: if meta[0].is_nan() { None } else { Some(meta[0]) },
                energy_fraction: meta[1],
                singular_values,
                pinv: if pinv.rows() == 0 && pinv.cols() == 0 { None } else { Some(pinv) },
            })
        };
        let rec = parse(&mut r).ok_or_else(|| format_err(path, "truncated or unsupported basis container"))?;
        if r.pos != bytes.len() {
            return Err(format_err(path, "trailing bytes"));
        }
        Ok(rec)
    }

    pub fn from_basis(b: &ReducedBasis) -> Self {
        Self {
            tag: b.field.tag(),
            window: b.window.unwrap_or(0),
            phi: b.phi.clone(),
            offset: b.offset.clone(),
            epsilon: b.epsilon,
            energy_fraction: b.energy_fraction,
            singular_values: b.singular_values.clone(),
            pinv: None,
        }
    }

    pub fn into_basis(self, path: &Path) -> Result<ReducedBasis> {
        let field = Field::from_tag(self.tag).ok_or_else(|| format_err(path, format!("tag {} is not a solution field", self.tag)))?;
        Ok(ReducedBasis {
            phi: self.phi,
            offset: self.offset,
            field,
            window: Some(self.window),
            epsilon: self.epsilon,
            energy_fraction: self.energy_fraction,
            singular_values: self.singular_values,
        })
    }

    /// An offset vector alone.
    pub fn offset_only(tag: u32, window: usize, offset: Vec<f64>) -> Self {
        Self {
            tag,
            window,
            phi: DenseMatrix::zeros(offset.len(), 0),
            offset,
            epsilon: None,
            energy_fraction: 1.0,
            singular_values: Vec::new(),
            pinv: None,
        }
    }
}

/// Writes a sample set: a header line `name m s λ κ`, then one index per
/// line.
pub fn write_sample_set(path: &Path, name: &str, m: usize, lambda: f64, samples: &SampleSet) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    let mut go = || -> std::io::Result<()> {
        writeln!(w, "{name} {m} {} {lambda} {:.17e}", samples.len(), samples.kappa)?;
        for i in &samples.indices {
            writeln!(w, "{i}")?;
        }
        w.flush()
    };
    go().map_err(|e| io_err(path, e))
}

/// Reads a sample-set file: `(name, m, λ, κ, indices)`.
pub fn read_sample_set(path: &Path) -> Result<(String, usize, f64, f64, Vec<usize>)> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
    if header.len() != 5 {
        return Err(format_err(path, "sample-set header needs 5 fields"));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| format_err(path, format!("bad number '{s}'")));
    let cnt = |s: &str| s.parse::<usize>().map_err(|_| format_err(path, format!("bad count '{s}'")));
    let (m, s) = (cnt(header[1])?, cnt(header[2])?);
    let indices: Vec<usize> = lines.filter(|l| !l.trim().is_empty()).map(|l| cnt(l.trim())).collect::<Result<_>>()?;
    if indices.len() != s {
        return Err(format_err(path, format!("header announces {s} samples, found {}", indices.len())));
    }
    Ok((header[0].to_string(), m, num(header[3])?, num(header[4])?, indices))
}

/// Paths of the artifacts in one output directory.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn path(&self, name: String) -> PathBuf {
        self.dir.join(name)
    }

    pub fn config(&self, phase: Phase) -> PathBuf {
        self.path(format!("config_{phase}.json"))
    }
    pub fn fom_stem(&self, mu: f64) -> String {
        format!("fom_{}", param_tag(mu))
    }
    pub fn fom_run(&self, mu: f64) -> PathBuf {
        self.path(format!("fom_{}_run.json", param_tag(mu)))
    }
    pub fn fom_final(&self, mu: f64) -> PathBuf {
        self.path(format!("fom_{}_final.bin", param_tag(mu)))
    }
    pub fn windows(&self) -> PathBuf {
        self.path("windows.txt".into())
    }
    pub fn training(&self) -> PathBuf {
        self.path("training.json".into())
    }
    pub fn basis(&self, field: Field, w: usize) -> PathBuf {
        self.path(format!("basis_{}_w{w}.lgrb", field.short()))
    }
    pub fn force_basis(&self, name: &str, w: usize) -> PathBuf {
        self.path(format!("force_{name}_w{w}.lgrb"))
    }
    pub fn samples(&self, name: &str, w: usize) -> PathBuf {
        self.path(format!("samples_{name}_w{w}.txt"))
    }
    pub fn offset(&self, field: Field, w: usize, mu: f64) -> PathBuf {
        self.path(format!("offset_{}_w{w}_{}.lgrb", field.short(), param_tag(mu)))
    }
    pub fn query_offset(&self, field: Field, w: usize, mu: f64) -> PathBuf {
        self.path(format!("query_offset_{}_w{w}_{}.lgrb", field.short(), param_tag(mu)))
    }
    pub fn rom_ops(&self, mu: f64) -> PathBuf {
        self.path(format!("rom_ops_{}.bin", param_tag(mu)))
    }
    pub fn rom_run(&self, mu: f64) -> PathBuf {
        self.path(format!("rom_run_{}.json", param_tag(mu)))
    }
    pub fn rom_traj(&self, mu: f64) -> PathBuf {
        self.path(format!("rom_traj_{}.json", param_tag(mu)))
    }
    pub fn rom_final_offset(&self, mu: f64) -> PathBuf {
        self.path(format!("rom_final_offset_{}.bin", param_tag(mu)))
    }
    pub fn rom_final(&self, mu: f64) -> PathBuf {
        self.path(format!("rom_final_{}.bin", param_tag(mu)))
    }
    pub fn errors(&self, mu: f64) -> PathBuf {
        self.path(format!("errors_{}.json", param_tag(mu)))
    }
    pub fn report(&self) -> PathBuf {
        self.path("report.csv".into())
    }
}

const FIELDS: [Field; 3] = [Field::Velocity, Field::Energy, Field::Position];
const FORCES: [(&str, u32); 2] = [("f1", TAG_F1), ("ftv", TAG_FTV)];

/// Time-loop statistics of a full-order run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FomRunInfo {
    pub param: f64,
    pub wall_time_s: f64,
    pub steps: usize,
    pub redos: usize,
    pub t_final: f64,
}

/// Time-loop statistics of an online run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RomRunInfo {
    pub param: f64,
    pub wall_time_s: f64,
    pub steps: usize,
    pub steps_per_window: Vec<usize>,
    pub redos: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub params: Vec<f64>,
    pub settings: TrainingSettings,
    pub num_windows: usize,
    pub dims: Vec<(usize, usize, usize)>,
}

/// Cached online operators with the choices they were built for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorCache {
    pub param: f64,
    pub hyper: bool,
    pub mode: ProjectionMode,
    pub kind: OffsetKind,
    pub ops: Vec<ReducedOperators>,
    pub transitions: Vec<Option<Transition>>,
    pub sample_rows: Vec<(Vec<usize>, Vec<usize>)>,
    pub samples: Vec<(usize, usize)>,
}

impl OperatorCache {
    pub fn write(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
        let mut w = BufWriter::new(f);
        bincode::serialize_into(&mut w, self).map_err(|e| format_err(path, e.to_string()))?;
        w.flush().map_err(|e| io_err(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
        bincode::deserialize_from(BufReader::new(f)).map_err(|e| format_err(path, e.to_string()))
    }
}

/// Output of a phase.
#[derive(Clone, Debug)]
pub enum PhaseOutcome {
    Offline(Vec<FomRunInfo>),
    Merge(TrainingInfo),
    OnlinePrep,
    Online(RomRunInfo),
    Restore(ErrorReport),
}

/// Validates `cfg`, stores it in the output directory and runs its phase.
pub fn run_phase(cfg: &RunConfig) -> Result<PhaseOutcome> {
    cfg.validate()?;
    let art = Artifacts::new(&cfg.outdir)?;
    write_json(&art.config(cfg.phase), cfg)?;
    match cfg.phase {
        Phase::Offline => phase_offline(cfg, &art).map(PhaseOutcome::Offline),
        Phase::Merge => phase_merge(cfg, &art).map(PhaseOutcome::Merge),
        Phase::OnlinePrep => phase_online_prep(cfg, &art).map(|_| PhaseOutcome::OnlinePrep),
        Phase::Online => phase_online(cfg, &art).map(PhaseOutcome::Online),
        Phase::Restore => phase_restore(cfg, &art).map(PhaseOutcome::Restore),
    }
}

fn window_table(cfg: &RunConfig, times: &[&[f64]]) -> Result<Option<WindowTable>> {
    Ok(if let Some(n) = cfg.nwinsamp {
        Some(windows_by_samples(times, n, cfg.t_final)?)
    } else if let Some(n) = cfg.nwin {
        Some(uniform_windows(n, cfg.t_final, times)?)
    } else if let Some(e) = &cfg.window_times {
        Some(windows_by_time(e, cfg.t_final, times)?)
    } else {
        None
    })
}

/// Runs the FOM for every parameter and writes snapshots, run statistics,
/// optionally the final solution, and the window table when requested.
pub fn phase_offline(cfg: &RunConfig, art: &Artifacts) -> Result<Vec<FomRunInfo>> {
    let mut infos = Vec::new();
    let mut times = Vec::new();
    for &mu in &cfg.params {
        let (hydro, s0) = cfg.setup(mu)?;
        let mut opts = RunOptions::new(cfg.t_final);
        opts.fixed_dt = cfg.fixed_dt;
        let start = Instant::now();
        let (traj, summary) = simulate(&hydro, Scheme::Rk2Average, &s0, &opts, None, mu)?;
        let wall = start.elapsed();
        log::info!("offline {}: {} steps in {:.3} s", param_tag(mu), summary.steps, wall.as_secs_f64());
        traj.write(&art.dir, &art.fom_stem(mu))?;
        if cfg.writesol {
            write_state_columns(&art.fom_final(mu), hydro.nv(), hydro.ne(), &[summary.state.to_flat()])?;
        }
        let info = FomRunInfo { param: mu, wall_time_s: wall.as_secs_f64(), steps: summary.steps, redos: summary.redos, t_final: summary.state.t };
        write_json(&art.fom_run(mu), &info)?;
        infos.push(info);
        times.push(traj.step_times);
    }
    let refs: Vec<&[f64]> = times.iter().map(|t| t.as_slice()).collect();
    if let Some(table) = window_table(cfg, &refs)? {
        table.write(&art.windows())?;
    }
    Ok(infos)
}

fn read_trajectories(cfg: &RunConfig, art: &Artifacts) -> Result<Vec<Trajectory>> {
    cfg.params.iter().map(|&mu| Trajectory::read(&art.dir, &art.fom_stem(mu))).collect()
}

fn write_bases(art: &Artifacts, w: usize, b: &WindowBases) -> Result<()> {
    for basis in [&b.v, &b.e, &b.x] {
        BasisRecord::from_basis(basis).write(&art.basis(basis.field, w))?;
    }
    Ok(())
}

fn flat_offsets(nv: usize, ne: usize, parts: [Vec<f64>; 3]) -> Result<Vec<f64>> {
    let [v, e, x] = parts;
    if v.len() != nv || e.len() != ne || x.len() != nv {
        return Err(Error::invalid("offset lengths do not match the mesh"));
    }
    Ok([v, e, x].concat())
}

/// POD, force bases, sample sets and offsets for every window.
pub fn phase_merge(cfg: &RunConfig, art: &Artifacts) -> Result<TrainingInfo> {
    let trajs = read_trajectories(cfg, art)?;
    let times: Vec<&[f64]> = trajs.iter().map(|t| t.step_times.as_slice()).collect();
    let table = match window_table(cfg, &times)? {
        Some(t) => t,
        None if art.windows().exists() => {
            let t = WindowTable::read(&art.windows())?;
            if t.boundary.len() != trajs.len() {
                return Err(Error::invalid(format!(
                    "window file lists {} parameters but {} trajectories were given",
                    t.boundary.len(),
                    trajs.len()
                )));
            }
            t
        }
        None => WindowTable::serial(cfg.t_final, &times),
    };
    let (hydro, _) = cfg.setup(cfg.params[0])?;
    let settings = cfg.training_settings();
    let trained = train(&hydro, &trajs, &table, &settings)?;
    table.write(&art.windows())?;
    let (nv, ne) = (hydro.nv(), hydro.ne());
    for (wi, (bases, hyper)) in trained.windows.iter().zip(&trained.hyper).enumerate() {
        let w = wi + 1;
        write_bases(art, w, bases)?;
        if let HyperReduction::Sampled { f1, f1_samples, ftv, ftv_samples } = hyper {
            for ((name, tag), (basis, samples, lambda)) in
                FORCES.iter().zip([(f1, f1_samples, cfg.sfacv), (ftv, ftv_samples, cfg.sface)])
            {
                let rec = BasisRecord {
                    tag: *tag,
                    window: w,
                    phi: basis.phi.clone(),
                    offset: Vec::new(),
                    epsilon: if basis.source == NonlinearSource::Sns { None } else { Some(cfg.epsilon) },
                    energy_fraction: 1.0,
                    singular_values: Vec::new(),
                    pinv: Some(samples.pinv_factor.clone()),
                };
                rec.write(&art.force_basis(name, w))?;
                write_sample_set(&art.samples(name, w), name, basis.dim(), lambda, samples)?;
            }
        }
        for (k, &mu) in trained.params.iter().enumerate() {
            let flat = &trained.stored_offsets[wi][k];
            for f in FIELDS {
                BasisRecord::offset_only(f.tag(), w, flat[f.range(nv, ne)].to_vec()).write(&art.offset(f, w, mu))?;
            }
        }
    }
    let info = TrainingInfo {
        params: trained.params.clone(),
        settings,
        num_windows: table.num_windows(),
        dims: trained.windows.iter().map(|b| b.dims()).collect(),
    };
    write_json(&art.training(), &info)?;
    Ok(info)
}

fn read_offsets(nv: usize, ne: usize, w: usize, path: impl Fn(Field) -> PathBuf) -> Result<Vec<f64>> {
    let read = |f: Field| -> Result<Vec<f64>> {
        let p = path(f);
        let rec = BasisRecord::read(&p)?;
        if rec.tag != f.tag() || rec.window != w {
            return Err(format_err(&p, "offset file does not match its field or window"));
        }
        Ok(rec.offset)
    };
    flat_offsets(nv, ne, [read(Field::Velocity)?, read(Field::Energy)?, read(Field::Position)?])
}

/// Reloads the merge output.
pub fn load_trained(cfg: &RunConfig, art: &Artifacts, hydro: &Hydro) -> Result<TrainedModel> {
    let info: TrainingInfo = read_json(&art.training())?;
    let table = WindowTable::read(&art.windows())?;
    if table.num_windows() != info.num_windows {
        return Err(format_err(&art.windows(), "window count differs from the training record"));
    }
    let (nv, ne) = (hydro.nv(), hydro.ne());
    let mut windows = Vec::new();
    let mut hyper = Vec::new();
    let mut stored = Vec::new();
    for w in 1..=table.num_windows() {
        let load = |f: Field| -> Result<ReducedBasis> {
            let p = art.basis(f, w);
            let b = BasisRecord::read(&p)?.into_basis(&p)?;
            if b.field != f || b.len() != f.len(nv, ne) {
                return Err(format_err(&p, "basis does not match its field or the mesh"));
            }
            Ok(b)
        };
        windows.push(WindowBases { v: load(Field::Velocity)?, e: load(Field::Energy)?, x: load(Field::Position)? });
        hyper.push(if cfg.hyper {
            let load_force = |name: &str, tag: u32| -> Result<(NonlinearBasis, SampleSet)> {
                let p = art.force_basis(name, w);
                let rec = BasisRecord::read(&p)?;
                if rec.tag != tag {
                    return Err(format_err(&p, "force basis tag mismatch"));
                }
                let (_, m, _, kappa, indices) = read_sample_set(&art.samples(name, w))?;
                let pinv = rec.pinv.ok_or_else(|| format_err(&p, "missing pseudo-inverse factor"))?;
                if m != rec.phi.cols() || pinv.rows() != m || pinv.cols() != indices.len() {
                    return Err(format_err(&p, "force basis and sample set disagree"));
                }
                let source = if rec.epsilon.is_none() { NonlinearSource::Sns } else { NonlinearSource::SnapshotSvd };
                Ok((NonlinearBasis { phi: rec.phi, source }, SampleSet { indices, pinv_factor: pinv, kappa }))
            };
            let (f1, f1_samples) = load_force("f1", TAG_F1)?;
            let (ftv, ftv_samples) = load_force("ftv", TAG_FTV)?;
            HyperReduction::Sampled { f1, f1_samples, ftv, ftv_samples }
        } else {
            HyperReduction::Galerkin
        });
        stored.push(
            info.params
                .iter()
                .map(|&mu| read_offsets(nv, ne, w, |f| art.offset(f, w, mu)))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(TrainedModel { table, params: info.params, windows, hyper, stored_offsets: stored, settings: info.settings })
}

fn build_cache(cfg: &RunConfig, model: &RomModel) -> OperatorCache {
    OperatorCache {
        param: cfg.params[0],
        hyper: cfg.hyper,
        mode: cfg.projection,
        kind: cfg.rostype,
        ops: model.windows.iter().map(|w| w.ops.clone()).collect(),
        transitions: model.transitions.clone(),
        sample_rows: model.windows.iter().map(|w| w.sample_rows.clone()).collect(),
        samples: model.windows.iter().map(|w| w.samples).collect(),
    }
}

/// Query offsets, from the online-prep files when present.
fn online_offsets(cfg: &RunConfig, art: &Artifacts, hydro: &Hydro, trained: &TrainedModel, s0: &HydroState) -> Result<Vec<Vec<f64>>> {
    let mu = cfg.params[0];
    let nw = trained.table.num_windows();
    if (1..=nw).all(|w| FIELDS.iter().all(|&f| art.query_offset(f, w, mu).exists())) {
        (1..=nw).map(|w| read_offsets(hydro.nv(), hydro.ne(), w, |f| art.query_offset(f, w, mu))).collect()
    } else {
        query_offsets(trained, cfg.rostype, mu, s0)
    }
}

/// The online model for the query of `cfg`, from cached operators when a
/// matching cache exists.
pub fn load_online_model(cfg: &RunConfig, art: &Artifacts, hydro: &Hydro, s0: &HydroState) -> Result<RomModel> {
    let trained = load_trained(cfg, art, hydro)?;
    let offsets = online_offsets(cfg, art, hydro, &trained, s0)?;
    let cache_path = art.rom_ops(cfg.params[0]);
    if cache_path.exists() {
        let cache = OperatorCache::read(&cache_path)?;
        let nw = trained.windows.len();
        if cache.hyper == cfg.hyper && cache.mode == cfg.projection && cache.kind == cfg.rostype && cache.ops.len() == nw {
            let (nv, ne) = (hydro.nv(), hydro.ne());
            let mut windows = Vec::with_capacity(nw);
            for (((b, off), ops), (rows, samples)) in trained
                .windows
                .into_iter()
                .zip(&offsets)
                .zip(cache.ops)
                .zip(cache.sample_rows.into_iter().zip(cache.samples))
            {
                let mut bases = b;
                bases.v.offset = off[Field::Velocity.range(nv, ne)].to_vec();
                bases.e.offset = off[Field::Energy.range(nv, ne)].to_vec();
                bases.x.offset = off[Field::Position.range(nv, ne)].to_vec();
                windows.push(RomWindow { bases, ops, samples, sample_rows: rows });
            }
            return Ok(RomModel {
                table: trained.table,
                windows,
                transitions: cache.transitions,
                mode: cache.mode,
                offset_kind: cache.kind,
            });
        }
        log::warn!("{} was built for other online settings; rebuilding the operators", cache_path.display());
    }
    assemble_online(hydro, &trained, &offsets, cfg.rostype, cfg.projection)
}

/// Computes query offsets and reduced operators and caches both.
pub fn phase_online_prep(cfg: &RunConfig, art: &Artifacts) -> Result<RomModel> {
    let mu = cfg.params[0];
    let (hydro, s0) = cfg.setup(mu)?;
    let trained = load_trained(cfg, art, &hydro)?;
    let offsets = query_offsets(&trained, cfg.rostype, mu, &s0)?;
    let (nv, ne) = (hydro.nv(), hydro.ne());
    for (wi, off) in offsets.iter().enumerate() {
        for f in FIELDS {
            BasisRecord::offset_only(f.tag(), wi + 1, off[f.range(nv, ne)].to_vec()).write(&art.query_offset(f, wi + 1, mu))?;
        }
    }
    let model = assemble_online(&hydro, &trained, &offsets, cfg.rostype, cfg.projection)?;
    build_cache(cfg, &model).write(&art.rom_ops(mu))?;
    Ok(model)
}

/// Runs the online solver for the query and records timings and states.
pub fn phase_online(cfg: &RunConfig, art: &Artifacts) -> Result<RomRunInfo> {
    let mu = cfg.params[0];
    let (hydro, s0) = cfg.setup(mu)?;
    let mut model = load_online_model(cfg, art, &hydro, &s0)?;
    if !cfg.hyper {
        log::warn!("online run without hyper-reduction: the force is assembled on the full mesh");
    }
    let y0 = model.project_initial(&hydro, &s0)?;
    let mut opts = RomRunOptions::new(cfg.t_final);
    opts.fixed_dt = cfg.fixed_dt;
    let run = model.run(&hydro, &y0, &opts)?;
    let info = RomRunInfo {
        param: mu,
        wall_time_s: run.wall_time.as_secs_f64(),
        steps: run.steps(),
        steps_per_window: run.steps_per_window.clone(),
        redos: run.redos,
    };
    log::info!("online {}: {} steps in {:.4} s", param_tag(mu), info.steps, info.wall_time_s);
    write_json(&art.rom_run(mu), &info)?;
    write_json(&art.rom_traj(mu), &run.states)?;
    let last = &model.windows[run.final_state.window - 1].bases;
    let offs = [last.v.offset.clone(), last.e.offset.clone(), last.x.offset.clone()].concat();
    write_state_columns(&art.rom_final_offset(mu), hydro.nv(), hydro.ne(), &[offs])?;
    Ok(info)
}

/// Lifts the final ROM state, compares it with the FOM reference and appends
/// a report row.
pub fn phase_restore(cfg: &RunConfig, art: &Artifacts) -> Result<ErrorReport> {
    let mu = cfg.params[0];
    let reference = art.fom_final(mu);
    if !reference.exists() {
        return Err(Error::Io {
            path: reference.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "FOM reference solution missing; run offline with writesol"),
        });
    }
    let (hydro, _) = cfg.setup(mu)?;
    let (nv, ne) = (hydro.nv(), hydro.ne());
    let (rnv, rne, cols) = read_state_columns(&reference)?;
    if rnv != nv || rne != ne || cols.len() != 1 {
        return Err(format_err(&reference, "reference does not match the mesh"));
    }
    let fom = HydroState::from_flat(nv, ne, &cols[0], cfg.t_final)?;
    let states: Vec<ReducedState> = read_json(&art.rom_traj(mu))?;
    let last = states.last().ok_or_else(|| format_err(&art.rom_traj(mu), "no reduced states"))?;
    let w = last.window;
    let (_, _, offs) = read_state_columns(&art.rom_final_offset(mu))?;
    let offs = offs.into_iter().next().ok_or_else(|| format_err(&art.rom_final_offset(mu), "empty"))?;
    let mut bases = WindowBases {
        v: BasisRecord::read(&art.basis(Field::Velocity, w))?.into_basis(&art.basis(Field::Velocity, w))?,
        e: BasisRecord::read(&art.basis(Field::Energy, w))?.into_basis(&art.basis(Field::Energy, w))?,
        x: BasisRecord::read(&art.basis(Field::Position, w))?.into_basis(&art.basis(Field::Position, w))?,
    };
    bases.v.offset = offs[Field::Velocity.range(nv, ne)].to_vec();
    bases.e.offset = offs[Field::Energy.range(nv, ne)].to_vec();
    bases.x.offset = offs[Field::Position.range(nv, ne)].to_vec();
    if bases.dims() != (last.yv.len(), last.ye.len(), last.yx.len()) {
        return Err(format_err(&art.rom_traj(mu), "reduced state does not match the window bases"));
    }
    let rom = bases.lift(last);
    write_state_columns(&art.rom_final(mu), nv, ne, &[rom.to_flat()])?;

    let fom_info: FomRunInfo = read_json(&art.fom_run(mu))?;
    let rom_info: RomRunInfo = read_json(&art.rom_run(mu))?;
    let report = ErrorReport::new(
        &fom,
        &rom,
        Duration::from_secs_f64(fom_info.wall_time_s),
        Duration::from_secs_f64(rom_info.wall_time_s),
        fom_info.steps,
        rom_info.steps,
    )?;
    write_json(&art.errors(mu), &report)?;
    let info: TrainingInfo = read_json(&art.training())?;
    let dims = info.dims.iter().fold((0, 0, 0), |a, d| (a.0.max(d.0), a.1.max(d.1), a.2.max(d.2)));
    let samples = (1..=info.num_windows)
        .map(|w| -> Result<(usize, usize)> {
            if !cfg.hyper {
                return Ok((nv, ne));
            }
            Ok((read_sample_set(&art.samples("f1", w))?.4.len(), read_sample_set(&art.samples("ftv", w))?.4.len()))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold((0, 0), |a, s| (a.0.max(s.0), a.1.max(s.1)));
    let row = ReportRow {
        run_id: cfg.run_id.clone().unwrap_or_else(|| param_tag(mu)),
        rel_err_v: report.rel_err_v,
        rel_err_e: report.rel_err_e,
        rel_err_x: report.rel_err_x,
        speedup: report.speedup,
        nt_fom: report.nt_fom,
        nt_rom: report.nt_rom,
        basis_dims: format!("{}:{}:{}", dims.0, dims.1, dims.2),
        samples: format!("{}:{}", samples.0, samples.1),
        windows: info.num_windows,
    };
    write_report(&art.report(), &[row], true)?;
    Ok(report)
}
