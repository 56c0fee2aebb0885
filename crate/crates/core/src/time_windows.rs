//! Partition of `[0, T]` into time windows, either at prescribed times or so
//! that each window holds a fixed number of training steps.

use std::io::Write;
use std::path::Path;

use crate::fom::Trajectory;
use crate::{Error, Result};

/// Window endpoints `0 = τ_0 < τ_1 < … < τ_{N_w} = T` and, per training
/// parameter, the boundary indices `q_w` with `t_{q_w} < τ_w ≤ t_{q_w+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowTable {
    pub endpoints: Vec<f64>,
    /// `boundary[k][w]` for `w = 0..=N_w`; `boundary[k][0] = -1`.
    pub boundary: Vec<Vec<isize>>,
}

/// Largest `q` with `t_q < τ` (−1 when `τ ≤ t_0`).
pub fn boundary_index(step_times: &[f64], tau: f64) -> isize {
    step_times.partition_point(|&t| t < tau) as isize - 1
}

fn time_at(step_times: &[f64], n: isize, t_final: f64) -> f64 {
    let nt = step_times.len() as isize - 1;
    if n >= nt {
        t_final
    } else {
        step_times[n.max(0) as usize]
    }
}

fn endpoint_tol(t_final: f64) -> f64 {
    1e-12 * t_final.abs().max(1.0)
}

impl WindowTable {
    pub fn num_windows(&self) -> usize {
        self.endpoints.len() - 1
    }

    pub fn t_final(&self) -> f64 {
        *self.endpoints.last().expect("nonempty")
    }

    /// `(τ_{w−1}, τ_w)` for 1-based window `w`.
    pub fn interval(&self, w: usize) -> (f64, f64) {
        (self.endpoints[w - 1], self.endpoints[w])
    }

    /// 1-based window containing `t` in the half-open sense `(τ_{w−1}, τ_w]`;
    /// `t = 0` belongs to window 1.
    pub fn window_index(&self, t: f64) -> usize {
        let nw = self.num_windows();
        let w = self.endpoints[1..].partition_point(|&tau| tau < t) + 1;
        w.min(nw).max(1)
    }

    /// Trivial single-window table.
    pub fn serial(t_final: f64, trajectories: &[&[f64]]) -> Self {
        Self::with_endpoints(vec![0.0, t_final], trajectories)
    }

    fn with_endpoints(endpoints: Vec<f64>, trajectories: &[&[f64]]) -> Self {
        let boundary = trajectories
            .iter()
            .map(|times| {
                let mut q: Vec<isize> = endpoints.iter().map(|&tau| boundary_index(times, tau)).collect();
                q[0] = -1;
                q
            })
            .collect();
        Self { endpoints, boundary }
    }

    /// Column indices of trajectory `k` that train window `w`: every stage of
    /// steps `q_{w−1}+1 ..= q_w+1` plus the endpoint of step `q_{w−1}` when it
    /// is a recorded step.
    pub fn training_columns(&self, w: usize, k: usize, traj: &Trajectory) -> Vec<usize> {
        let r = traj.stages_per_step;
        let nt = traj.num_steps() as isize;
        let q_prev = self.boundary[k][w - 1];
        let q_w = self.boundary[k][w];
        let mut cols = Vec::new();
        if q_prev >= 1 && q_prev <= nt {
            cols.push(q_prev as usize * r - 1);
        }
        let first = (q_prev + 1).max(1);
        let last = (q_w + 1).min(nt);
        for n in first..=last {
            for s in 0..r {
                cols.push((n as usize - 1) * r + s);
            }
        }
        cols
    }

    /// Writes one line per window, "w τ_{w−1} τ_w", followed by the
    /// per-parameter boundary index ranges.
    pub fn write(&self, path: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::Io { path: path.display().to_string(), source: e };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        for w in 1..=self.num_windows() {
            write!(f, "{} {:.17e} {:.17e}", w, self.endpoints[w - 1], self.endpoints[w]).map_err(io)?;
            for q in &self.boundary {
                write!(f, " {}:{}", q[w - 1], q[w]).map_err(io)?;
            }
            writeln!(f).map_err(io)?;
        }
        f.flush().map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
        let bad = |reason: String| Error::Format { path: path.display().to_string(), reason };
        let mut endpoints = vec![0.0];
        let mut boundary: Vec<Vec<isize>> = Vec::new();
        for (li, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() < 3 {
                return Err(bad(format!("short window line '{line}'")));
            }
            let tau: f64 = toks[2].parse().map_err(|_| bad(format!("bad endpoint in '{line}'")))?;
            endpoints.push(tau);
            let ranges = &toks[3..];
            if li == 0 {
                boundary = vec![vec![-1]; ranges.len()];
            }
            if ranges.len() != boundary.len() {
                return Err(bad("inconsistent parameter count".into()));
            }
            for (k, r) in ranges.iter().enumerate() {
                let hi = r.split(':').nth(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad(format!("bad range '{r}'")))?;
                boundary[k].push(hi);
            }
        }
        if endpoints.len() < 2 {
            return Err(bad("no windows".into()));
        }
        Ok(Self { endpoints, boundary })
    }
}

/// Windows at user-given endpoints (with or without the leading 0).
pub fn windows_by_time(endpoints: &[f64], t_final: f64, trajectories: &[&[f64]]) -> Result<WindowTable> {
    let mut e: Vec<f64> = endpoints.to_vec();
    if e.first() != Some(&0.0) {
        e.insert(0, 0.0);
    }
    if e.len() < 2 {
        return Err(Error::invalid("at least one window endpoint required"));
    }
    if e.windows(2).any(|p| !(p[1] > p[0])) {
        return Err(Error::invalid(format!("window endpoints must be strictly increasing: {endpoints:?}")));
    }
    let last = *e.last().expect("nonempty");
    if (last - t_final).abs() > endpoint_tol(t_final) {
        return Err(Error::invalid(format!("last window endpoint {last} must equal the final time {t_final}")));
    }
    *e.last_mut().expect("nonempty") = t_final;
    Ok(WindowTable::with_endpoints(e, trajectories))
}

/// `n` uniform windows on `[0, T]`.
pub fn uniform_windows(n: usize, t_final: f64, trajectories: &[&[f64]]) -> Result<WindowTable> {
    if n == 0 {
        return Err(Error::invalid("window count must be positive"));
    }
    let e: Vec<f64> = (1..=n).map(|i| t_final * i as f64 / n as f64).collect();
    windows_by_time(&e, t_final, trajectories)
}

/// Windows holding `N_sample + 1` new steps of the fastest-stepping training
/// parameter each: `τ_w = min_k t_{q_{w−1}(k) + N_sample + 1}(k)`.
pub fn windows_by_samples(trajectories: &[&[f64]], nsample: usize, t_final: f64) -> Result<WindowTable> {
    if nsample == 0 {
        return Err(Error::invalid("samples per window must be at least 1"));
    }
    if trajectories.is_empty() {
        return Err(Error::invalid("no training trajectories"));
    }
    let tol = endpoint_tol(t_final);
    let mut endpoints = vec![0.0];
    let mut q_prev: Vec<isize> = vec![-1; trajectories.len()];
    loop {
        let tau = trajectories
            .iter()
            .zip(&q_prev)
            .map(|(times, &q)| time_at(times, q + nsample as isize + 1, t_final))
            .fold(f64::INFINITY, f64::min);
        if tau >= t_final - tol {
            endpoints.push(t_final);
            break;
        }
        endpoints.push(tau);
        for (q, times) in q_prev.iter_mut().zip(trajectories) {
            *q = boundary_index(times, tau);
        }
    }
    Ok(WindowTable::with_endpoints(endpoints, trajectories))
}
