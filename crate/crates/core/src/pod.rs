//! Snapshot matrices and proper orthogonal decomposition bases.

use crate::fom::Trajectory;
use crate::linalg::{thin_svd, DenseMatrix, ThinSvd, RANK_TOL};
use crate::{Error, Result};

/// Which block of the stacked state `(v; e; x)` a vector belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Velocity,
    Energy,
    Position,
}

impl Field {
    pub const ALL: [Field; 3] = [Field::Velocity, Field::Energy, Field::Position];

    /// Index range of the field inside a flat state of sizes `(Nv, Ne)`.
    pub fn range(self, nv: usize, ne: usize) -> std::ops::Range<usize> {
        match self {
            Field::Velocity => 0..nv,
            Field::Energy => nv..nv + ne,
            Field::Position => nv + ne..2 * nv + ne,
        }
    }

    pub fn len(self, nv: usize, ne: usize) -> usize {
        self.range(nv, ne).len()
    }

    pub fn tag(self) -> u32 {
        match self {
            Field::Velocity => 0,
            Field::Energy => 1,
            Field::Position => 2,
        }
    }

    pub fn from_tag(t: u32) -> Option<Self> {
        Self::ALL.get(t as usize).copied()
    }

    pub fn short(self) -> &'static str {
        match self {
            Field::Velocity => "v",
            Field::Energy => "e",
            Field::Position => "x",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColumnTag {
    pub param: usize,
    pub time: f64,
    pub stage: usize,
}

#[derive(Clone, Debug)]
pub struct SnapshotSet {
    pub field: Field,
    pub columns: DenseMatrix,
    pub meta: Vec<ColumnTag>,
}

/// Which trajectory columns to gather, and the offset to subtract, for one
/// training parameter.
pub struct SnapshotSource<'a> {
    pub trajectory: &'a Trajectory,
    /// Offset for this field (length of the field).
    pub offset: &'a [f64],
    /// Column indices into `trajectory.columns`; `None` takes all of them.
    pub columns: Option<&'a [usize]>,
}

/// Stacks `state − offset(μ_k)` for the requested columns of every source.
/// `window` is only used to label the empty-window error.
pub fn build_snapshot_matrix(sources: &[SnapshotSource<'_>], field: Field, window: usize) -> Result<SnapshotSet> {
    let Some(first) = sources.first() else {
        return Err(Error::invalid("no trajectories supplied for the snapshot matrix"));
    };
    let (nv, ne) = (first.trajectory.nv, first.trajectory.ne);
    let range = field.range(nv, ne);
    let n = range.len();
    let mut data = Vec::new();
    let mut meta = Vec::new();
    for (k, src) in sources.iter().enumerate() {
        let tr = src.trajectory;
        if (tr.nv, tr.ne) != (nv, ne) {
            return Err(Error::invalid(format!("trajectory {k} has a different discretization")));
        }
        if src.offset.len() != n {
            return Err(Error::invalid(format!("offset for parameter {k} has length {} instead of {n}", src.offset.len())));
        }
        let all: Vec<usize>;
        let cols: &[usize] = match src.columns {
            Some(c) => c,
            None => {
                all = (0..tr.columns.len()).collect();
                &all
            }
        };
        if cols.is_empty() {
            return Err(Error::EmptyWindow { window, param: k });
        }
        for &c in cols {
            let col = tr
                .columns
                .get(c)
                .ok_or_else(|| Error::invalid(format!("column {c} out of range for parameter {k}")))?;
            data.extend(col[range.clone()].iter().zip(src.offset).map(|(s, o)| s - o));
            let m = &tr.meta[c];
            meta.push(ColumnTag { param: k, time: m.time, stage: m.stage });
        }
    }
    let ncols = meta.len();
    Ok(SnapshotSet { field, columns: DenseMatrix::from_col_major(n, ncols, data)?, meta })
}

#[derive(Clone, Debug)]
pub struct ReducedBasis {
    pub phi: DenseMatrix,
    pub offset: Vec<f64>,
    pub field: Field,
    pub window: Option<usize>,
    pub epsilon: Option<f64>,
    pub energy_fraction: f64,
    pub singular_values: Vec<f64>,
}

impl ReducedBasis {
    pub fn dim(&self) -> usize {
        self.phi.cols()
    }

    pub fn len(&self) -> usize {
        self.phi.rows()
    }

    /// `offset + Φ ŷ`.
    pub fn lift(&self, y: &[f64]) -> Vec<f64> {
        let mut out = self.offset.clone();
        for (j, &c) in y.iter().enumerate() {
            crate::linalg::axpy(c, self.phi.col(j), &mut out);
        }
        out
    }

    /// `Φᵀ (u − offset)`.
    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = u.iter().zip(&self.offset).map(|(a, b)| a - b).collect();
        self.phi.t_matvec(&d)
    }
}

/// SVD of a snapshot matrix, from which bases of any size can be cut.
#[derive(Clone, Debug)]
pub struct PodDecomposition {
    pub field: Field,
    pub svd: ThinSvd,
}

impl PodDecomposition {
    pub fn new(snapshots: &SnapshotSet) -> Result<Self> {
        let mut svd = thin_svd(&snapshots.columns)?;
        normalize_signs(&mut svd);
        Ok(Self { field: snapshots.field, svd })
    }

    /// Number of singular values above the rank cutoff.
    pub fn rank(&self) -> usize {
        self.svd.numerical_rank()
    }

    /// Smallest `n` with `Σ_{i≤n} σ_i / Σ_i σ_i ≥ ε`.
    pub fn energy_dimension(&self, epsilon: f64) -> usize {
        energy_criterion(&self.svd.singular_values, epsilon)
    }

    pub fn energy_fraction(&self, n: usize) -> f64 {
        let total: f64 = self.svd.singular_values.iter().sum();
        if total == 0.0 {
            return 1.0;
        }
        self.svd.singular_values[..n].iter().sum::<f64>() / total
    }

    fn basis(&self, n: usize, offset: Vec<f64>, epsilon: Option<f64>) -> ReducedBasis {
        ReducedBasis {
            phi: self.svd.u.leading_columns(n),
            offset,
            field: self.field,
            window: None,
            epsilon,
            energy_fraction: self.energy_fraction(n),
            singular_values: self.svd.singular_values.clone(),
        }
    }

    pub fn truncate(&self, epsilon: f64, offset: Vec<f64>) -> Result<ReducedBasis> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::invalid(format!("energy threshold {epsilon} outside (0, 1]")));
        }
        let n = self.energy_dimension(epsilon);
        if n == 0 {
            log::warn!("all-zero {:?} snapshot matrix; basis is empty", self.field);
        }
        Ok(self.basis(n, offset, Some(epsilon)))
    }

    pub fn with_dimension(&self, n: usize, offset: Vec<f64>) -> Result<ReducedBasis> {
        let rank = self.rank();
        if n == 0 || n > rank {
            return Err(Error::invalid(format!(
                "requested {:?} basis dimension {n}, but the snapshot matrix has rank {rank}",
                self.field
            )));
        }
        Ok(self.basis(n, offset, None))
    }
}

/// Energy criterion on the sum of singular values. Zero singular values never
/// count, so `ε = 1` gives the number of nonzero values.
pub fn energy_criterion(sigma: &[f64], epsilon: f64) -> usize {
    let total: f64 = sigma.iter().sum();
    if total == 0.0 {
        return 0;
    }
    let smax = sigma[0];
    let mut acc = 0.0;
    for (i, &s) in sigma.iter().enumerate() {
        if s <= RANK_TOL * smax {
            return i;
        }
        acc += s;
        if acc / total >= epsilon * (1.0 - 4.0 * f64::EPSILON) {
            return i + 1;
        }
    }
    sigma.len()
}

/// Flips singular-vector pairs so each left vector's largest-magnitude entry
/// is positive.
fn normalize_signs(svd: &mut ThinSvd) {
    for j in 0..svd.u.cols() {
        let col = svd.u.col(j);
        let mut best = 0usize;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            svd.u.col_mut(j).iter_mut().for_each(|v| *v = -*v);
            for k in 0..svd.vt.cols() {
                svd.vt[(j, k)] = -svd.vt[(j, k)];
            }
        }
    }
}

pub fn pod_truncate(snapshots: &SnapshotSet, epsilon: f64, offset: Vec<f64>) -> Result<ReducedBasis> {
    PodDecomposition::new(snapshots)?.truncate(epsilon, offset)
}

pub fn fix_basis_dimension(snapshots: &SnapshotSet, n: usize, offset: Vec<f64>) -> Result<ReducedBasis> {
    PodDecomposition::new(snapshots)?.with_dimension(n, offset)
}
