//! Offline construction of the windowed reduced model from training
//! trajectories: per-window offsets, POD bases, force bases and sample sets,
//! and their assembly into an online model for a query parameter.

use serde::{Deserialize, Serialize};

use crate::fom::{Hydro, HydroState, Trajectory};
use crate::hyper_reduction::{select_samples, sns_energy, sns_velocity, NonlinearBasis, NonlinearSource, SamplingMethod};
use crate::offsets::{offset_idw, OffsetKind, IDW_EXPONENT};
use crate::pod::{build_snapshot_matrix, Field, PodDecomposition, ReducedBasis, SnapshotSet, SnapshotSource};
use crate::rom::{HyperReduction, ProjectionMode, RomModel, WindowBases};
use crate::time_windows::WindowTable;
use crate::{Error, Result};

/// Nonlinear-term treatment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperSettings {
    /// Force bases from the solution bases (`M Φ`) instead of force snapshots.
    pub sns: bool,
    pub sampling_v: SamplingMethod,
    pub sampling_e: SamplingMethod,
}

impl Default for HyperSettings {
    fn default() -> Self {
        Self { sns: true, sampling_v: SamplingMethod::Oversampled(2.0), sampling_e: SamplingMethod::Oversampled(2.0) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSettings {
    /// POD energy threshold.
    pub epsilon: f64,
    /// Fixed `(n_v, n_e, n_x)`, overriding the energy criterion.
    pub dims: Option<(usize, usize, usize)>,
    /// `None` keeps the full force assembly (Galerkin ROM).
    pub hyper: Option<HyperSettings>,
    pub offset_kind: OffsetKind,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        Self { epsilon: 0.9999, dims: None, hyper: Some(HyperSettings::default()), offset_kind: OffsetKind::Initial }
    }
}

/// Output of the offline phase.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub table: WindowTable,
    pub params: Vec<f64>,
    /// Bases of each window; their offsets are those of the first training
    /// parameter and are replaced per query by [`assemble_online`].
    pub windows: Vec<WindowBases>,
    pub hyper: Vec<HyperReduction>,
    /// `stored_offsets[w][k]`: flat `(v, e, x)` offset of window `w`
    /// (0-based) for training parameter `k`.
    pub stored_offsets: Vec<Vec<Vec<f64>>>,
    pub settings: TrainingSettings,
}

/// Per-window training offsets. Initial-state offsets repeat the initial
/// state; the other kinds use the last state of the previous window,
/// `u(t_{q_{w-1}})`, which is the initial state for window 1.
pub fn training_offsets(trajectories: &[Trajectory], table: &WindowTable, kind: OffsetKind) -> Vec<Vec<Vec<f64>>> {
    (1..=table.num_windows())
        .map(|w| {
            trajectories
                .iter()
                .enumerate()
                .map(|(k, tr)| match kind {
                    OffsetKind::Initial => tr.initial.clone(),
                    OffsetKind::PreviousWindow | OffsetKind::Idw => {
                        let q = table.boundary[k][w - 1].max(0) as usize;
                        tr.step_state(q.min(tr.num_steps())).to_vec()
                    }
                })
                .collect()
        })
        .collect()
}

fn field_slice(flat: &[f64], field: Field, nv: usize, ne: usize) -> &[f64] {
    &flat[field.range(nv, ne)]
}

fn window_snapshots(
    trajectories: &[Trajectory],
    table: &WindowTable,
    offsets: &[Vec<f64>],
    field: Field,
    w: usize,
) -> Result<SnapshotSet> {
    let cols: Vec<Vec<usize>> = trajectories.iter().enumerate().map(|(k, tr)| table.training_columns(w, k, tr)).collect();
    let sources: Vec<SnapshotSource<'_>> = trajectories
        .iter()
        .zip(offsets)
        .zip(&cols)
        .map(|((tr, off), c)| SnapshotSource {
            trajectory: tr,
            offset: field_slice(off, field, tr.nv, tr.ne),
            columns: Some(c.as_slice()),
        })
        .collect();
    build_snapshot_matrix(&sources, field, w)
}

fn pod_basis(snap: &SnapshotSet, epsilon: f64, dim: Option<usize>, offset: Vec<f64>, w: usize) -> Result<ReducedBasis> {
    let pod = PodDecomposition::new(snap)?;
    if pod.rank() == 0 {
        return Err(Error::invalid(format!("{:?} snapshots of window {w} do not vary; no basis can be built", snap.field)));
    }
    let mut b = match dim {
        Some(n) => pod.with_dimension(n, offset)?,
        None => {
            let n = pod.energy_dimension(epsilon).max(1);
            let mut b = pod.with_dimension(n, offset)?;
            b.epsilon = Some(epsilon);
            b
        }
    };
    b.window = Some(w);
    Ok(b)
}

/// Force snapshots `F̃·1` and `Fᵀv` at every training column of window `w`.
fn force_snapshots(hydro: &Hydro, trajectories: &[Trajectory], table: &WindowTable, w: usize) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let (nv, ne) = (hydro.nv(), hydro.ne());
    let mut f1 = Vec::new();
    let mut ftv = Vec::new();
    for (k, tr) in trajectories.iter().enumerate() {
        for c in table.training_columns(w, k, tr) {
            let s = HydroState::from_flat(nv, ne, &tr.columns[c], tr.meta[c].time)?;
            let fe = hydro.assemble_force(&s)?;
            let mut f = fe.f1(&hydro.mesh);
            hydro.mass.apply_bc(&mut f);
            f1.push(f);
            ftv.push(fe.ftv(&hydro.mesh, &s.v));
        }
    }
    Ok((f1, ftv))
}

fn force_basis(columns: Vec<Vec<f64>>, rows: usize, epsilon: f64, field: Field, w: usize) -> Result<NonlinearBasis> {
    let m = crate::linalg::DenseMatrix::from_columns(rows, &columns)?;
    let snap = SnapshotSet { field, meta: Vec::new(), columns: m };
    let b = pod_basis(&snap, epsilon, None, vec![0.0; rows], w)?;
    Ok(NonlinearBasis { phi: b.phi, source: NonlinearSource::SnapshotSvd })
}

/// Builds bases, force bases and sample sets for every window.
pub fn train(hydro: &Hydro, trajectories: &[Trajectory], table: &WindowTable, settings: &TrainingSettings) -> Result<TrainedModel> {
    if trajectories.is_empty() {
        return Err(Error::invalid("no training trajectories"));
    }
    if !(settings.epsilon > 0.0 && settings.epsilon <= 1.0) {
        return Err(Error::invalid(format!("energy threshold {} outside (0, 1]", settings.epsilon)));
    }
    let (nv, ne) = (hydro.nv(), hydro.ne());
    let stored = training_offsets(trajectories, table, settings.offset_kind);
    let mut windows = Vec::new();
    let mut hyper = Vec::new();
    for w in 1..=table.num_windows() {
        let offs = &stored[w - 1];
        let dim = |i: usize| settings.dims.map(|d| [d.0, d.1, d.2][i]);
        let basis = |field: Field, i: usize| -> Result<ReducedBasis> {
            let snap = window_snapshots(trajectories, table, offs, field, w)?;
            pod_basis(&snap, settings.epsilon, dim(i), field_slice(&offs[0], field, nv, ne).to_vec(), w)
        };
        let bases = WindowBases { v: basis(Field::Velocity, 0)?, e: basis(Field::Energy, 1)?, x: basis(Field::Position, 2)? };
        log::info!("window {w}: basis dimensions {:?}", bases.dims());
        let h = match settings.hyper {
            None => HyperReduction::Galerkin,
            Some(hs) => {
                let (f1, ftv) = if hs.sns {
                    (sns_velocity(&hydro.mass, &bases.v.phi), sns_energy(&hydro.mass, &bases.e.phi))
                } else {
                    let (c1, c2) = force_snapshots(hydro, trajectories, table, w)?;
                    (
                        force_basis(c1, nv, settings.epsilon, Field::Velocity, w)?,
                        force_basis(c2, ne, settings.epsilon, Field::Energy, w)?,
                    )
                };
                let f1_samples = select_samples(&f1, hs.sampling_v)?;
                let ftv_samples = select_samples(&ftv, hs.sampling_e)?;
                HyperReduction::Sampled { f1, f1_samples, ftv, ftv_samples }
            }
        };
        windows.push(bases);
        hyper.push(h);
    }
    Ok(TrainedModel {
        table: table.clone(),
        params: trajectories.iter().map(|t| t.param).collect(),
        windows,
        hyper,
        stored_offsets: stored,
        settings: settings.clone(),
    })
}

/// Per-window flat offsets for a query parameter.
pub fn query_offsets(trained: &TrainedModel, kind: OffsetKind, mu: f64, initial: &HydroState) -> Result<Vec<Vec<f64>>> {
    let nw = trained.table.num_windows();
    match kind {
        OffsetKind::Initial | OffsetKind::PreviousWindow => Ok(vec![initial.to_flat(); nw]),
        OffsetKind::Idw => {
            let training: Vec<Vec<f64>> = trained.params.iter().map(|&p| vec![p]).collect();
            (0..nw)
                .map(|w| {
                    let refs: Vec<&[f64]> = trained.stored_offsets[w].iter().map(|v| v.as_slice()).collect();
                    offset_idw(&[mu], &training, &refs, IDW_EXPONENT)
                })
                .collect()
        }
    }
}

/// Online model for a query: the trained bases with query offsets.
pub fn assemble_online(
    hydro: &Hydro,
    trained: &TrainedModel,
    offsets: &[Vec<f64>],
    kind: OffsetKind,
    mode: ProjectionMode,
) -> Result<RomModel> {
    let (nv, ne) = (hydro.nv(), hydro.ne());
    if offsets.len() != trained.windows.len() {
        return Err(Error::invalid("one offset per window required"));
    }
    let bases: Vec<WindowBases> = trained
        .windows
        .iter()
        .zip(offsets)
        .map(|(b, off)| {
            let mut b = b.clone();
            b.v.offset = field_slice(off, Field::Velocity, nv, ne).to_vec();
            b.e.offset = field_slice(off, Field::Energy, nv, ne).to_vec();
            b.x.offset = field_slice(off, Field::Position, nv, ne).to_vec();
            b
        })
        .collect();
    RomModel::build(hydro, trained.table.clone(), bases, &trained.hyper, mode, kind)
}
