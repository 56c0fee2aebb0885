//! Nonlinear-term bases and sampling: SNS bases, DEIM, oversampled greedy
//! selection, Q-DEIM and the oblique projector `Φ (SᵀΦ)† Sᵀ`.

use crate::linalg::{pinv_full_rank, pivoted_qr, spectral_norm, DenseMatrix, LinalgError};
use crate::mesh_fem::MassMatrices;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearSource {
    SnapshotSvd,
    Sns,
}

#[derive(Clone, Debug)]
pub struct NonlinearBasis {
    pub phi: DenseMatrix,
    pub source: NonlinearSource,
}

impl NonlinearBasis {
    pub fn dim(&self) -> usize {
        self.phi.cols()
    }
}

/// `Φ_F = M Φ` for a mass operator given column by column.
pub fn sns_basis_with(phi: &DenseMatrix, apply_mass: impl Fn(&[f64]) -> Vec<f64>) -> NonlinearBasis {
    let mut out = DenseMatrix::zeros(phi.rows(), phi.cols());
    for j in 0..phi.cols() {
        out.col_mut(j).copy_from_slice(&apply_mass(phi.col(j)));
    }
    NonlinearBasis { phi: out, source: NonlinearSource::Sns }
}

/// Force basis for the momentum equation: `M̃_V Φ_v`.
pub fn sns_velocity(mass: &MassMatrices, phi_v: &DenseMatrix) -> NonlinearBasis {
    NonlinearBasis { phi: mass.mv_bc_apply_matrix(phi_v), source: NonlinearSource::Sns }
}

/// Force basis for the energy equation: `M_E Φ_e`.
pub fn sns_energy(mass: &MassMatrices, phi_e: &DenseMatrix) -> NonlinearBasis {
    NonlinearBasis { phi: mass.me_apply_matrix(phi_e), source: NonlinearSource::Sns }
}

/// Selected rows plus the precomputed `(SᵀΦ)†`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub indices: Vec<usize>,
    /// `m × s` pseudo-inverse of the sampled basis rows.
    pub pinv_factor: DenseMatrix,
    pub kappa: f64,
}

impl SampleSet {
    /// Builds the pseudo-inverse factor for a given row selection.
    pub fn from_indices(basis: &DenseMatrix, indices: Vec<usize>) -> Result<Self> {
        let n = basis.rows();
        let mut seen = vec![false; n];
        for &i in &indices {
            if i >= n || seen[i] {
                return Err(Error::invalid(format!("sample index {i} repeated or out of range (N = {n})")));
            }
            seen[i] = true;
        }
        let st_phi = basis.select_rows(&indices);
        let pinv = pinv_full_rank(&st_phi).map_err(Error::from)?;
        let kappa = spectral_norm(&pinv)?;
        Ok(Self { indices, pinv_factor: pinv, kappa })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Sample count for oversampling factor `λ`: `min(N, round(λ m))`.
pub fn oversampled_count(n_rows: usize, m: usize, lambda: f64) -> usize {
    ((lambda * m as f64).round() as usize).max(m).min(n_rows)
}

fn argmax_abs(values: impl Iterator<Item = f64>, skip: &[bool]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if skip[i] {
            continue;
        }
        let a = v.abs();
        if best.is_none_or(|(_, b)| a > b) {
            best = Some((i, a));
        }
    }
    best
}

/// Residual of the gappy reconstruction of column `j` from the preceding
/// columns sampled at `rows`.
fn gappy_residual(phi: &DenseMatrix, j: usize, rows: &[usize]) -> Result<Vec<f64>> {
    let target = phi.col(j).to_vec();
    if j == 0 {
        return Ok(target);
    }
    let prev = phi.leading_columns(j);
    let sampled = prev.select_rows(rows);
    let rhs: Vec<f64> = rows.iter().map(|&r| target[r]).collect();
    let c = pinv_full_rank(&sampled)?.matvec(&rhs);
    let approx = prev.matvec(&c);
    Ok(target.iter().zip(&approx).map(|(a, b)| a - b).collect())
}

fn rank_deficient(phi: &DenseMatrix, j: usize) -> Error {
    Error::Linalg(LinalgError::RankDeficient { rows: phi.rows(), cols: j + 1, ratio: 0.0 })
}

/// Greedy DEIM: each new index is the row of largest residual magnitude when
/// the next column is interpolated by the preceding ones at the chosen rows.
pub fn deim_indices(phi: &DenseMatrix) -> Result<Vec<usize>> {
    let m = phi.cols();
    if m == 0 {
        return Err(Error::invalid("DEIM needs at least one basis column"));
    }
    if m > phi.rows() {
        return Err(rank_deficient(phi, m - 1));
    }
    let mut chosen = vec![false; phi.rows()];
    let mut idx = Vec::with_capacity(m);
    for j in 0..m {
        let r = gappy_residual(phi, j, &idx)?;
        let scale = phi.col(j).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let (i, mag) = argmax_abs(r.iter().copied(), &chosen).ok_or_else(|| rank_deficient(phi, j))?;
        if !(mag > 1e-12 * scale) || scale == 0.0 {
            return Err(rank_deficient(phi, j));
        }
        chosen[i] = true;
        idx.push(i);
    }
    Ok(idx)
}

pub fn deim_select(basis: &NonlinearBasis) -> Result<SampleSet> {
    let idx = deim_indices(&basis.phi)?;
    SampleSet::from_indices(&basis.phi, idx)
}

/// DEIM points followed by greedy extra rows. Each extra row maximizes the
/// sum over columns of the squared gappy residual (column `i` reconstructed
/// from columns `< i` at the current rows). The set is a superset of the DEIM
/// set, so `κ` can only decrease.
pub fn oversample_indices(phi: &DenseMatrix, lambda: f64) -> Result<Vec<usize>> {
    if !(lambda >= 1.0) {
        return Err(Error::invalid(format!("oversampling factor {lambda} must be at least 1")));
    }
    let mut idx = deim_indices(phi)?;
    let s = oversampled_count(phi.rows(), phi.cols(), lambda);
    let mut chosen = vec![false; phi.rows()];
    for &i in &idx {
        chosen[i] = true;
    }
    while idx.len() < s {
        let mut score = vec![0.0; phi.rows()];
        for j in 0..phi.cols() {
            let r = gappy_residual(phi, j, &idx)?;
            for (sc, v) in score.iter_mut().zip(&r) {
                *sc += v * v;
            }
        }
        let (i, _) = argmax_abs(score.iter().copied(), &chosen).expect("unselected rows remain");
        chosen[i] = true;
        idx.push(i);
    }
    Ok(idx)
}

pub fn oversample_select(basis: &NonlinearBasis, lambda: f64) -> Result<SampleSet> {
    let idx = oversample_indices(&basis.phi, lambda)?;
    SampleSet::from_indices(&basis.phi, idx)
}

/// Q-DEIM: the first `m` column pivots of `Φᵀ`.
pub fn qdeim_indices(phi: &DenseMatrix) -> Result<Vec<usize>> {
    let m = phi.cols();
    if m == 0 || m > phi.rows() {
        return Err(Error::invalid(format!("Q-DEIM needs 1 <= m <= N (m = {m}, N = {})", phi.rows())));
    }
    let (_, _, piv) = pivoted_qr(&phi.transpose())?;
    Ok(piv[..m].to_vec())
}

pub fn qdeim_select(basis: &NonlinearBasis) -> Result<SampleSet> {
    let idx = qdeim_indices(&basis.phi)?;
    SampleSet::from_indices(&basis.phi, idx)
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "method", content = "lambda")]
pub enum SamplingMethod {
    Deim,
    Qdeim,
    /// Greedy oversampling with factor `λ ≥ 1`.
    Oversampled(f64),
}

pub fn select_samples(basis: &NonlinearBasis, method: SamplingMethod) -> Result<SampleSet> {
    match method {
        SamplingMethod::Deim => deim_select(basis),
        SamplingMethod::Qdeim => qdeim_select(basis),
        SamplingMethod::Oversampled(l) => oversample_select(basis, l),
    }
}

/// `κ = ‖(SᵀΦ)†‖₂`.
pub fn kappa_bound(samples: &SampleSet) -> Result<f64> {
    Ok(spectral_norm(&samples.pinv_factor)?)
}

/// Crude DEIM constant `(1 + √(2N))^{m−1} / ‖φ₁‖_∞` for an orthonormal basis.
pub fn crude_deim_bound(phi: &DenseMatrix) -> f64 {
    let n = phi.rows() as f64;
    let inf = phi.col(0).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    (1.0 + (2.0 * n).sqrt()).powi(phi.cols() as i32 - 1) / inf
}

/// Oblique projector `P = Φ (SᵀΦ)† Sᵀ`.
#[derive(Clone, Debug)]
pub struct ObliqueProjector {
    pub basis: NonlinearBasis,
    pub samples: SampleSet,
}

impl ObliqueProjector {
    /// Reduced coordinates `(SᵀΦ)† (Sᵀ f)` from the sampled entries only.
    pub fn sampled_force_coords(&self, sampled: &[f64]) -> Result<Vec<f64>> {
        if sampled.len() != self.samples.len() {
            return Err(Error::invalid(format!(
                "{} sampled values supplied for {} sample rows",
                sampled.len(),
                self.samples.len()
            )));
        }
        Ok(self.samples.pinv_factor.matvec(sampled))
    }

    /// `P f` for a full-length vector.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let sampled: Vec<f64> = self.samples.indices.iter().map(|&i| f[i]).collect();
        let c = self.samples.pinv_factor.matvec(&sampled);
        self.basis.phi.matvec(&c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{householder_qr, norm2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn orthonormal(n: usize, m: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DenseMatrix::from_col_major(n, m, (0..n * m).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        householder_qr(&a).0
    }

    fn nb(phi: DenseMatrix) -> NonlinearBasis {
        NonlinearBasis { phi, source: NonlinearSource::SnapshotSvd }
    }

    #[test]
    fn deim_delta_columns() {
        let mut phi = DenseMatrix::zeros(10, 2);
        phi[(3, 0)] = 1.0;
        phi[(7, 1)] = 1.0;
        assert_eq!(deim_indices(&phi).unwrap(), vec![3, 7]);
        assert_eq!(qdeim_indices(&phi).unwrap(), vec![3, 7]);
        let s = deim_select(&nb(phi)).unwrap();
        assert!((s.kappa - 1.0).abs() < 1e-14);
    }

    #[test]
    fn deim_first_index_argmax() {
        let phi = DenseMatrix::from_col_major(3, 1, vec![0.1, 0.9, 0.3]).unwrap();
        assert_eq!(deim_indices(&phi).unwrap(), vec![1]);
    }

    #[test]
    fn deim_matches_straight_line_oracle() {
        let phi = orthonormal(12, 2, 4);
        // Oracle: explicit 1x1 interpolation for the second column.
        let c0 = phi.col(0);
        let i0 = (0..12).fold(0, |b, i| if c0[i].abs() > c0[b].abs() { i } else { b });
        let c1 = phi.col(1);
        let coef = c1[i0] / c0[i0];
        let r: Vec<f64> = (0..12).map(|i| c1[i] - coef * c0[i]).collect();
        let i1 = (0..12).fold(0, |b, i| if r[i].abs() > r[b].abs() { i } else { b });
        assert_eq!(deim_indices(&phi).unwrap(), vec![i0, i1]);
    }

    #[test]
    fn deim_rank_deficiency_errors() {
        let mut phi = DenseMatrix::zeros(5, 2);
        for i in 0..5 {
            phi[(i, 0)] = 1.0 + i as f64;
            phi[(i, 1)] = 2.0 * (1.0 + i as f64);
        }
        assert!(deim_indices(&phi).is_err());
    }

    #[test]
    fn oversampling_lambda_one_is_deim_and_full_sampling_is_orthogonal() {
        let phi = orthonormal(20, 4, 9);
        assert_eq!(oversample_indices(&phi, 1.0).unwrap(), deim_indices(&phi).unwrap());
        let full = oversample_select(&nb(phi.clone()), 100.0).unwrap();
        assert_eq!(full.len(), 20);
        let p = ObliqueProjector { basis: nb(phi.clone()), samples: full };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let f: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let pf = p.apply(&f);
            let orth = phi.matvec(&phi.t_matvec(&f));
            assert!(pf.iter().zip(&orth).all(|(a, b)| (a - b).abs() < 1e-10));
        }
    }

    #[test]
    fn oversampling_never_increases_kappa() {
        for seed in 0..20 {
            let phi = orthonormal(40, 5, 100 + seed);
            let d = deim_select(&nb(phi.clone())).unwrap();
            let o = oversample_select(&nb(phi), 2.0).unwrap();
            assert_eq!(o.len(), 10);
            assert_eq!(&o.indices[..5], &d.indices[..]);
            assert!(o.kappa <= d.kappa + 1e-12);
        }
    }

    #[test]
    fn qdeim_random_nonsingular() {
        let phi = orthonormal(50, 5, 77);
        let s = qdeim_select(&nb(phi)).unwrap();
        assert!(s.kappa.is_finite() && s.kappa >= 1.0 - 1e-12);
    }

    #[test]
    fn sns_identity_and_diagonal() {
        let phi = orthonormal(8, 3, 5);
        let b = sns_basis_with(&phi, |c| c.to_vec());
        assert_eq!(b.phi, phi);
        let b2 = sns_basis_with(&phi, |c| c.iter().map(|v| 2.0 * v).collect());
        for j in 0..3 {
            for i in 0..8 {
                assert_eq!(b2.phi[(i, j)], 2.0 * phi[(i, j)]);
            }
        }
    }

    #[test]
    fn sampled_coords_cases() {
        let phi = orthonormal(30, 4, 42);
        let s = oversample_select(&nb(phi.clone()), 2.0).unwrap();
        let p = ObliqueProjector { basis: nb(phi.clone()), samples: s.clone() };
        let c = [0.3, -1.0, 2.0, 0.5];
        let f = phi.matvec(&c);
        let sampled: Vec<f64> = s.indices.iter().map(|&i| f[i]).collect();
        let got = p.sampled_force_coords(&sampled).unwrap();
        assert!(got.iter().zip(&c).all(|(a, b)| (a - b).abs() < 1e-10));
        assert!(p.sampled_force_coords(&vec![0.0; s.len()]).unwrap().iter().all(|&v| v == 0.0));
        assert!(p.sampled_force_coords(&[1.0]).is_err());

        // Dense normal-equations oracle for a random f.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sampled: Vec<f64> = s.indices.iter().map(|&i| f[i]).collect();
        let a = phi.select_rows(&s.indices);
        let oracle = crate::linalg::Cholesky::factor(&a.t_matmul(&a)).unwrap().solve(&a.t_matvec(&sampled));
        let got = p.sampled_force_coords(&sampled).unwrap();
        assert!(got.iter().zip(&oracle).all(|(x, y)| (x - y).abs() < 1e-10));
        assert!(norm2(&got) > 0.0);
    }
}
