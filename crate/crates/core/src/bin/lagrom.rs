//! Command-line driver of the offline / merge / online / restore workflow.
//!
//! Long options may be written with one dash (`-offline -ef 0.9999`).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser};
use lagrom::cli_io::{exit_code, run_phase, Phase, PhaseOutcome, RunConfig};
use lagrom::offsets::OffsetKind;
use lagrom::problems::ProblemKind;
use lagrom::rom::ProjectionMode;

#[derive(Parser, Debug)]
#[command(name = "lagrom", version, about = "Lagrangian hydrodynamics with windowed reduced-order models")]
#[command(group(ArgGroup::new("phase").args(["offline", "merge", "online_prep", "online", "restore"])))]
struct Args {
    /// Run the full-order model and write snapshots.
    #[arg(long)]
    offline: bool,
    /// Build bases, sample sets and offsets from snapshots.
    #[arg(long)]
    merge: bool,
    /// Precompute query offsets and reduced operators.
    #[arg(long = "online-prep", alias = "onlineprep")]
    online_prep: bool,
    /// Run the reduced model.
    #[arg(long)]
    online: bool,
    /// Lift the reduced solution and compare with the reference.
    #[arg(long)]
    restore: bool,
    /// JSON configuration; the other options are ignored when given.
    #[arg(long)]
    config: Option<PathBuf>,
    /// gresho, sedov or taylor_green.
    #[arg(long, default_value = "sedov")]
    problem: ProblemKind,
    #[arg(long, default_value_t = 16)]
    nx: usize,
    #[arg(long)]
    ny: Option<usize>,
    /// Final time.
    #[arg(long = "tf", default_value_t = 0.1)]
    t_final: f64,
    /// POD energy threshold.
    #[arg(long = "ef", default_value_t = 0.9999)]
    epsilon: f64,
    #[arg(long)]
    rdimv: Option<usize>,
    #[arg(long)]
    rdime: Option<usize>,
    #[arg(long)]
    rdimx: Option<usize>,
    /// Oversampling factor of the velocity force samples.
    #[arg(long, default_value_t = 2.0)]
    sfacv: f64,
    /// Oversampling factor of the energy force samples.
    #[arg(long, default_value_t = 2.0)]
    sface: f64,
    /// Force bases from the solution bases.
    #[arg(long)]
    romsns: bool,
    /// Hyper-reduced online solve.
    #[arg(long)]
    romhr: bool,
    /// Number of uniform time windows.
    #[arg(long)]
    nwin: Option<usize>,
    /// Training steps per time window.
    #[arg(long)]
    nwinsamp: Option<usize>,
    /// Window endpoints, comma separated.
    #[arg(long, value_delimiter = ',')]
    twin: Option<Vec<f64>>,
    /// Offset strategy: initial, previous or interpolate.
    #[arg(long, default_value = "initial")]
    rostype: OffsetKind,
    /// Oblique (mass-weighted) projection at window transitions.
    #[arg(long)]
    oblique: bool,
    /// Problem parameters, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    param: Vec<f64>,
    /// Fixed time step.
    #[arg(long)]
    dt: Option<f64>,
    /// Write the final full-order solution.
    #[arg(long)]
    writesol: bool,
    /// Accepted for compatibility; restore always compares solutions.
    #[arg(long)]
    soldiff: bool,
    /// Accepted for compatibility; snapshots always include RK stages.
    #[arg(long = "sample-stages")]
    sample_stages: bool,
    #[arg(long = "out", default_value = "lagrom_out")]
    outdir: PathBuf,
    #[arg(long = "run-id")]
    run_id: Option<String>,
}

impl Args {
    fn to_config(&self) -> Result<RunConfig, String> {
        let phase = match (self.offline, self.merge, self.online_prep, self.online, self.restore) {
            (true, ..) => Phase::Offline,
            (_, true, ..) => Phase::Merge,
            (_, _, true, ..) => Phase::OnlinePrep,
            (_, _, _, true, _) => Phase::Online,
            (.., true) => Phase::Restore,
            _ => return Err("one of -offline, -merge, -online-prep, -online, -restore is required".into()),
        };
        let rdim = match (self.rdimv, self.rdime, self.rdimx) {
            (Some(v), Some(e), Some(x)) => Some([v, e, x]),
            (None, None, None) => None,
            _ => return Err("-rdimv, -rdime and -rdimx must be given together".into()),
        };
        Ok(RunConfig {
            phase,
            problem: self.problem,
            nx: self.nx,
            ny: self.ny.unwrap_or(self.nx),
            t_final: self.t_final,
            epsilon: self.epsilon,
            rdim,
            sfacv: self.sfacv,
            sface: self.sface,
            sns: self.romsns,
            hyper: self.romhr,
            nwin: self.nwin,
            nwinsamp: self.nwinsamp,
            window_times: self.twin.clone(),
            rostype: self.rostype,
            projection: if self.oblique { ProjectionMode::Oblique } else { ProjectionMode::Orthogonal },
            params: self.param.clone(),
            fixed_dt: self.dt,
            writesol: self.writesol,
            outdir: self.outdir.clone(),
            run_id: self.run_id.clone(),
        })
    }
}

/// Rewrites `-name` into `--name`, leaving negative numbers alone.
fn normalize(args: impl Iterator<Item = String>) -> Vec<String> {
    args.enumerate()
        .map(|(i, a)| {
            let single = a.starts_with('-') && !a.starts_with("--") && a.len() > 2;
            if i > 0 && single && a.as_bytes()[1].is_ascii_alphabetic() {
                format!("-{a}")
            } else {
                a
            }
        })
        .collect()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match Args::try_parse_from(normalize(std::env::args())) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let cfg = match &args.config {
        Some(p) => RunConfig::read(p).map_err(|e| (exit_code(&e), e.to_string())),
        None => args.to_config().map_err(|m| (2, m)),
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(code as u8);
        }
    };
    match run_phase(&cfg) {
        Ok(outcome) => {
            match outcome {
                PhaseOutcome::Offline(runs) => {
                    for r in runs {
                        println!("offline mu={} steps={} wall={:.3}s", r.param, r.steps, r.wall_time_s);
                    }
                }
                PhaseOutcome::Merge(info) => println!("merge windows={} dims={:?}", info.num_windows, info.dims),
                PhaseOutcome::OnlinePrep => println!("online-prep done"),
                PhaseOutcome::Online(r) => println!("online steps={} wall={:.4}s", r.steps, r.wall_time_s),
                PhaseOutcome::Restore(r) => println!(
                    "restore err_v={:.3e} err_e={:.3e} err_x={:.3e} speedup={:.2}",
                    r.rel_err_v, r.rel_err_e, r.rel_err_x, r.speedup
                ),
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
