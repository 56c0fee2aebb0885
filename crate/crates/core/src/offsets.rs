//! Per-window offset vectors: the initial state, the lifted final state of the
//! previous window, or an inverse-distance-weighted blend of stored training
//! offsets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::linalg::DenseMatrix;
use crate::{Error, Result};

/// Default IDW exponent.
pub const IDW_EXPONENT: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetKind {
    #[default]
    Initial,
    PreviousWindow,
    Idw,
}

impl FromStr for OffsetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "initial" => Ok(Self::Initial),
            "previous" | "previous_window" => Ok(Self::PreviousWindow),
            "interpolate" | "idw" => Ok(Self::Idw),
            "load" => Err(Error::invalid("offset kind 'load' is not supported")),
            other => Err(Error::invalid(format!("unknown offset kind '{other}'"))),
        }
    }
}

impl fmt::Display for OffsetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Initial => "initial",
            Self::PreviousWindow => "previous",
            Self::Idw => "interpolate",
        })
    }
}

/// The initial-state offset is the field itself, shared by every window.
pub fn offset_initial(initial_field: &[f64]) -> Vec<f64> {
    initial_field.to_vec()
}

/// `offset + Φ ŷ`, the lifted terminal state of the previous window.
pub fn offset_previous_window(prev_phi: &DenseMatrix, prev_offset: &[f64], prev_coords: &[f64]) -> Result<Vec<f64>> {
    if prev_phi.rows() != prev_offset.len() || prev_phi.cols() != prev_coords.len() {
        return Err(Error::invalid(format!(
            "previous-window lift: basis {}x{}, offset {}, coordinates {}",
            prev_phi.rows(),
            prev_phi.cols(),
            prev_offset.len(),
            prev_coords.len()
        )));
    }
    let mut out = prev_offset.to_vec();
    for (j, &c) in prev_coords.iter().enumerate() {
        crate::linalg::axpy(c, prev_phi.col(j), &mut out);
    }
    Ok(out)
}

/// IDW weights over the training parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum IdwWeights {
    /// The query coincides with training point `k`.
    Exact(usize),
    Convex(Vec<f64>),
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `q_k = d(μ, μ_k)^{-r}` normalized to sum one, or the exact-match index when
/// `d < 1e-14 (1 + |μ_k|)`.
pub fn idw_weights(query: &[f64], training: &[Vec<f64>], exponent: f64) -> Result<IdwWeights> {
    if training.is_empty() {
        return Err(Error::invalid("IDW needs at least one training parameter"));
    }
    if exponent < 1.0 {
        return Err(Error::invalid(format!("IDW exponent must be at least 1, got {exponent}")));
    }
    if training.iter().any(|m| m.len() != query.len()) {
        return Err(Error::invalid("IDW parameter dimension mismatch"));
    }
    let d: Vec<f64> = training.iter().map(|m| distance(query, m)).collect();
    for (k, (&dk, m)) in d.iter().zip(training).enumerate() {
        let norm = m.iter().map(|x| x * x).sum::<f64>().sqrt();
        if dk < 1e-14 * (1.0 + norm) {
            return Ok(IdwWeights::Exact(k));
        }
    }
    // Scale by the nearest distance first so tiny or huge d do not overflow.
    let dmin = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let q: Vec<f64> = d.iter().map(|&dk| (dmin / dk).powf(exponent)).collect();
    let total: f64 = q.iter().sum();
    Ok(IdwWeights::Convex(q.into_iter().map(|x| x / total).collect()))
}

/// Whether `query` lies outside the axis-aligned bounding box of the
/// training parameters.
pub fn outside_training_box(query: &[f64], training: &[Vec<f64>]) -> bool {
    (0..query.len()).any(|i| {
        let lo = training.iter().map(|m| m[i]).fold(f64::INFINITY, f64::min);
        let hi = training.iter().map(|m| m[i]).fold(f64::NEG_INFINITY, f64::max);
        query[i] < lo || query[i] > hi
    })
}

/// Blends `stored[k]` (one offset per training parameter) at `query`.
pub fn offset_idw(query: &[f64], training: &[Vec<f64>], stored: &[&[f64]], exponent: f64) -> Result<Vec<f64>> {
    if stored.len() != training.len() {
        return Err(Error::invalid("IDW: one stored offset per training parameter required"));
    }
    if outside_training_box(query, training) {
        log::warn!("IDW query {query:?} lies outside the training parameter range; offsets are extrapolated");
    }
    match idw_weights(query, training, exponent)? {
        IdwWeights::Exact(k) => Ok(stored[k].to_vec()),
        IdwWeights::Convex(w) => {
            let n = stored[0].len();
            if stored.iter().any(|s| s.len() != n) {
                return Err(Error::invalid("IDW: stored offsets differ in length"));
            }
            let mut out = vec![0.0; n];
            for (wk, s) in w.iter().zip(stored) {
                crate::linalg::axpy(*wk, s, &mut out);
            }
            Ok(out)
        }
    }
}

/// Offset provider for one field across windows.
#[derive(Clone, Debug)]
pub struct OffsetStrategy {
    pub kind: OffsetKind,
    /// `stored[w][k]`: offset of window `w` (0-based) for training parameter
    /// `k`; used by IDW.
    pub stored: Vec<Vec<Vec<f64>>>,
    pub training: Vec<Vec<f64>>,
    pub exponent: f64,
}

impl OffsetStrategy {
    pub fn initial() -> Self {
        Self { kind: OffsetKind::Initial, stored: Vec::new(), training: Vec::new(), exponent: IDW_EXPONENT }
    }

    pub fn previous_window() -> Self {
        Self { kind: OffsetKind::PreviousWindow, ..Self::initial() }
    }

    pub fn idw(training: Vec<Vec<f64>>, stored: Vec<Vec<Vec<f64>>>, exponent: f64) -> Result<Self> {
        if exponent < 1.0 {
            return Err(Error::invalid(format!("IDW exponent must be at least 1, got {exponent}")));
        }
        if stored.iter().any(|w| w.len() != training.len()) {
            return Err(Error::invalid("IDW: every window needs one offset per training parameter"));
        }
        Ok(Self { kind: OffsetKind::Idw, stored, training, exponent })
    }

    /// Interpolated offset for 0-based window `w`.
    pub fn interpolate(&self, w: usize, query: &[f64]) -> Result<Vec<f64>> {
        let per_param = self
            .stored
            .get(w)
            .ok_or_else(|| Error::invalid(format!("no stored offsets for window {}", w + 1)))?;
        let refs: Vec<&[f64]> = per_param.iter().map(|v| v.as_slice()).collect();
        offset_idw(query, &self.training, &refs, self.exponent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalars(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn idw_three_point_weights() {
        let t = scalars(&[0.8, 1.0, 1.2]);
        let IdwWeights::Convex(w) = idw_weights(&[0.9], &t, 2.0).unwrap() else { panic!("exact") };
        // d = (0.1, 0.1, 0.3) gives q ∝ (100, 100, 100/9).
        let q = [100.0, 100.0, 100.0 / 9.0];
        let s: f64 = q.iter().sum();
        for k in 0..3 {
            assert!((w[k] - q[k] / s).abs() < 1e-12);
        }
        assert!((w[0] - 0.4737).abs() < 1e-4 && (w[2] - 0.0526).abs() < 1e-4);
    }

    #[test]
    fn idw_exact_match_is_bitwise() {
        let t = scalars(&[0.8, 1.0, 1.2]);
        let a = vec![0.1, 0.2];
        let b = vec![1.0 / 3.0, std::f64::consts::PI];
        let c = vec![-5.0, 7.0];
        let out = offset_idw(&[1.0], &t, &[&a, &b, &c], 2.0).unwrap();
        assert_eq!(out, b);
    }

    #[test]
    fn idw_equidistant_is_mean() {
        let t = scalars(&[0.0, 2.0]);
        let a = vec![1.0, 3.0];
        let b = vec![3.0, -1.0];
        let out = offset_idw(&[1.0], &t, &[&a, &b], 2.0).unwrap();
        assert!((out[0] - 2.0).abs() < 1e-15 && (out[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn previous_window_lift() {
        let phi = DenseMatrix::from_columns(3, &[vec![1.0, 2.0, 3.0]]).unwrap();
        let off = vec![0.5, 0.5, 0.5];
        assert_eq!(offset_previous_window(&phi, &off, &[0.0]).unwrap(), off);
        assert_eq!(offset_previous_window(&phi, &off, &[1.0]).unwrap(), vec![1.5, 2.5, 3.5]);
        assert!(offset_previous_window(&phi, &off, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn previous_window_round_trip_full_rank() {
        let a = DenseMatrix::from_row_major(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]).unwrap();
        let (q, _) = crate::linalg::householder_qr(&a);
        let off = vec![0.1, -0.2, 0.3];
        let u = vec![1.0, 2.0, -3.0];
        let diff: Vec<f64> = u.iter().zip(&off).map(|(a, b)| a - b).collect();
        let y = q.t_matvec(&diff);
        let lifted = offset_previous_window(&q, &off, &y).unwrap();
        for (a, b) in lifted.iter().zip(&u) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn offset_kind_names() {
        assert_eq!("interpolate".parse::<OffsetKind>().unwrap(), OffsetKind::Idw);
        assert_eq!("previous".parse::<OffsetKind>().unwrap(), OffsetKind::PreviousWindow);
        assert!("load".parse::<OffsetKind>().is_err());
        assert!(outside_training_box(&[1.3], &scalars(&[0.8, 1.2])));
        assert!(!outside_training_box(&[0.9], &scalars(&[0.8, 1.2])));
    }

    proptest! {
        #[test]
        fn idw_weights_are_convex(
            pts in proptest::collection::vec(-10.0f64..10.0, 1..6),
            q in -12.0f64..12.0,
            r in 1.0f64..4.0,
        ) {
            let t = scalars(&pts);
            match idw_weights(&[q], &t, r).unwrap() {
                IdwWeights::Exact(k) => prop_assert!((pts[k] - q).abs() < 1e-13 * (1.0 + pts[k].abs())),
                IdwWeights::Convex(w) => {
                    prop_assert!(w.iter().all(|&x| x >= 0.0));
                    prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-14);
                }
            }
        }

        #[test]
        fn idw_is_lipschitz_away_from_nodes(q in 0.82f64..0.98, delta in 1e-7f64..1e-5) {
            let t = scalars(&[0.8, 1.0, 1.2]);
            let a = vec![1.0, 0.0];
            let b = vec![2.0, 1.0];
            let c = vec![4.0, -1.0];
            let s: [&[f64]; 3] = [&a, &b, &c];
            let y0 = offset_idw(&[q], &t, &s, 2.0).unwrap();
            let y1 = offset_idw(&[q + delta], &t, &s, 2.0).unwrap();
            // Distance to the nearest node is at least 0.02, where the slope of
            // the weights is bounded by a few hundred.
            for (u, v) in y0.iter().zip(&y1) {
                prop_assert!((u - v).abs() / delta < 1e3);
            }
        }
    }
}
