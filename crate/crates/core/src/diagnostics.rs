//! Error metrics against the full-order solution, speed-up accounting, the
//! computable residual indicator of the hyper-reduced model, and the CSV
//! report.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::fom::{Hydro, HydroState};
use crate::rom::{RomModel, RomRun};
use crate::{Error, Result};

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff_norm2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Error of one field: `‖rom − fom‖₂ / ‖fom‖₂`, or the absolute norm when the
/// reference field vanishes (`absolute = true`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub value: f64,
    pub absolute: bool,
}

impl FieldError {
    pub fn between(fom: &[f64], rom: &[f64]) -> Result<Self> {
        if fom.len() != rom.len() {
            return Err(Error::invalid(format!("field lengths differ: {} vs {}", fom.len(), rom.len())));
        }
        let d = diff_norm2(rom, fom);
        let n = norm2(fom);
        Ok(if n > 0.0 { Self { value: d / n, absolute: false } } else { Self { value: d, absolute: true } })
    }
}

/// Per-field final-time errors `(v, e, x)`.
pub fn relative_errors(fom_final: &HydroState, rom_final: &HydroState) -> Result<[FieldError; 3]> {
    Ok([
        FieldError::between(&fom_final.v, &rom_final.v)?,
        FieldError::between(&fom_final.e, &rom_final.e)?,
        FieldError::between(&fom_final.x, &rom_final.x)?,
    ])
}

/// FOM loop time over ROM loop time.
pub fn speedup(fom_wall: Duration, rom_wall: Duration) -> Result<f64> {
    let r = rom_wall.as_secs_f64();
    if r <= 0.0 {
        return Err(Error::invalid("ROM wall time must be positive"));
    }
    Ok(fom_wall.as_secs_f64() / r)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub rel_err_v: f64,
    pub rel_err_e: f64,
    pub rel_err_x: f64,
    /// Fields whose reference norm vanished; their error is absolute.
    pub absolute: [bool; 3],
    pub speedup: f64,
    pub nt_fom: usize,
    pub nt_rom: usize,
}

impl ErrorReport {
    pub fn new(
        fom_final: &HydroState,
        rom_final: &HydroState,
        fom_wall: Duration,
        rom_wall: Duration,
        nt_fom: usize,
        nt_rom: usize,
    ) -> Result<Self> {
        let [v, e, x] = relative_errors(fom_final, rom_final)?;
        Ok(Self {
            rel_err_v: v.value,
            rel_err_e: e.value,
            rel_err_x: x.value,
            absolute: [v.absolute, e.absolute, x.absolute],
            speedup: speedup(fom_wall, rom_wall)?,
            nt_fom,
            nt_rom,
        })
    }
}

/// Residual integrands at one accepted ROM state and their running
/// trapezoidal integrals from the initial time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IndicatorSample {
    pub t: f64,
    pub residual_v: f64,
    pub residual_e: f64,
    pub integral_v: f64,
    pub integral_e: f64,
}

/// Projection residuals `‖F̃·1 − M̃ Φ_v B_v P F̃·1‖₂` and
/// `‖Fᵀv − M_E Φ_e B_e P Fᵀv‖₂` along a ROM run, integrated in time.
///
/// Each state is lifted and the full force is assembled, so the cost scales
/// with the FOM size. `model` must be the one that produced `run`.
pub fn aposteriori_indicator(hydro: &Hydro, model: &RomModel, run: &RomRun) -> Result<Vec<IndicatorSample>> {
    let mut out: Vec<IndicatorSample> = Vec::with_capacity(run.states.len());
    for s in &run.states {
        let win = &model.windows[s.window - 1];
        let lifted = win.bases.lift(s);
        let fe = hydro.assemble_force(&lifted)?;
        let mut f1 = fe.f1(&hydro.mesh);
        hydro.mass.apply_bc(&mut f1);
        let ftv = fe.ftv(&hydro.mesh, &lifted.v);

        let sampled: Vec<f64> = win.sample_rows.0.iter().map(|&i| f1[i]).collect();
        let approx = hydro.mass.mv_bc_apply(&win.bases.v.phi.matvec(&win.ops.bv.matvec(&sampled)));
        let rv = diff_norm2(&f1, &approx);

        let sampled: Vec<f64> = win.sample_rows.1.iter().map(|&z| ftv[z]).collect();
        let approx = hydro.mass.me_apply(&win.bases.e.phi.matvec(&win.ops.be.matvec(&sampled)));
        let re = diff_norm2(&ftv, &approx);

        let (iv, ie) = match out.last() {
            None => (0.0, 0.0),
            Some(p) => {
                let h = s.t - p.t;
                (p.integral_v + 0.5 * h * (p.residual_v + rv), p.integral_e + 0.5 * h * (p.residual_e + re))
            }
        };
        out.push(IndicatorSample { t: s.t, residual_v: rv, residual_e: re, integral_v: iv, integral_e: ie });
    }
    Ok(out)
}

/// Ranks with ties given their average rank (1-based).
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; `None` when either ranking is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid("spearman needs two equally long series of length ≥ 2"));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(None);
    }
    Ok(Some(cov / (va * vb).sqrt()))
}

/// One line of the run report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run_id: String,
    pub rel_err_v: f64,
    pub rel_err_e: f64,
    pub rel_err_x: f64,
    pub speedup: f64,
    pub nt_fom: usize,
    pub nt_rom: usize,
    /// Largest `n_v:n_e:n_x` over the windows.
    pub basis_dims: String,
    /// Largest `s_v:s_e` over the windows.
    pub samples: String,
    pub windows: usize,
}

impl ReportRow {
    pub fn new(run_id: &str, report: &ErrorReport, model: &RomModel) -> Self {
        let mut d = (0, 0, 0);
        let mut s = (0, 0);
        for w in &model.windows {
            let (a, b, c) = w.bases.dims();
            d = (d.0.max(a), d.1.max(b), d.2.max(c));
            s = (s.0.max(w.samples.0), s.1.max(w.samples.1));
        }
        Self {
            run_id: run_id.to_string(),
            rel_err_v: report.rel_err_v,
            rel_err_e: report.rel_err_e,
            rel_err_x: report.rel_err_x,
            speedup: report.speedup,
            nt_fom: report.nt_fom,
            nt_rom: report.nt_rom,
            basis_dims: format!("{}:{}:{}", d.0, d.1, d.2),
            samples: format!("{}:{}", s.0, s.1),
            windows: model.windows.len(),
        }
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let p = path.display().to_string();
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io { path: p, source },
        other => Error::Format { path: p, reason: format!("{other:?}") },
    }
}

/// Writes rows with a header line; appends without a header when `append`
/// is set and the file already exists.
pub fn write_report(path: &Path, rows: &[ReportRow], append: bool) -> Result<()> {
    let exists = append && path.exists();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(exists)
        .truncate(!exists)
        .open(path)
        .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    let mut w = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}
