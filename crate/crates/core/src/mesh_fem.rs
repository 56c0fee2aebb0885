//! Cartesian quadrilateral meshes, the Q1 kinematic / Q0 thermodynamic spaces
//! and the constant mass matrices.
//!
//! Kinematic vectors (velocity, position) are stored component-blocked: entry
//! `d * n_nodes + a` is component `d` of node `a`. Nodes are numbered
//! `j * (nx + 1) + i` and zones `j * nx + i`, with zone vertices listed
//! counter-clockwise starting from the lower-left corner.

use std::io::Write;
use std::sync::OnceLock;

use crate::linalg::{DenseMatrix, SymBand};
use crate::{Error, Result};

pub const TAG_LEFT: u8 = 1;
pub const TAG_RIGHT: u8 = 2;
pub const TAG_BOTTOM: u8 = 4;
pub const TAG_TOP: u8 = 8;

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoxDomain {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoxDomain {
    pub const UNIT: BoxDomain = BoxDomain { x0: 0.0, y0: 0.0, x1: 1.0, y1: 1.0 };

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    nx: usize,
    ny: usize,
    domain: BoxDomain,
    nodes: Vec<[f64; 2]>,
    zones: Vec<[usize; 4]>,
    tags: Vec<u8>,
    node_zones: Vec<Vec<usize>>,
}

pub fn build_cartesian_mesh(nx: usize, ny: usize, domain: BoxDomain) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::invalid(format!("mesh needs nx, ny >= 1 (got {nx}x{ny})")));
    }
    let w = domain.x1 - domain.x0;
    let h = domain.y1 - domain.y0;
    if !(w > 0.0 && h > 0.0) || !w.is_finite() || !h.is_finite() {
        return Err(Error::invalid(format!("degenerate mesh box {domain:?}")));
    }
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    let mut tags = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            // Pin the last row/column to the box edges exactly.
            let x = if i == nx { domain.x1 } else { domain.x0 + w * i as f64 / nx as f64 };
            let y = if j == ny { domain.y1 } else { domain.y0 + h * j as f64 / ny as f64 };
            nodes.push([x, y]);
            let mut t = 0;
            if i == 0 {
                t |= TAG_LEFT;
            }
            if i == nx {
                t |= TAG_RIGHT;
            }
            if j == 0 {
                t |= TAG_BOTTOM;
            }
            if j == ny {
                t |= TAG_TOP;
            }
            tags.push(t);
        }
    }
    let mut zones = Vec::with_capacity(nx * ny);
    let mut node_zones = vec![Vec::new(); nodes.len()];
    for j in 0..ny {
        for i in 0..nx {
            let a = j * (nx + 1) + i;
            let z = [a, a + 1, a + nx + 2, a + nx + 1];
            for &n in &z {
                node_zones[n].push(zones.len());
            }
            zones.push(z);
        }
    }
    Ok(Mesh { nx, ny, domain, nodes, zones, tags, node_zones })
}

impl Mesh {
    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn domain(&self) -> BoxDomain {
        self.domain
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_zones(&self) -> usize {
        self.zones.len()
    }

    /// Kinematic DOF count `N_V = 2 · #nodes`.
    pub fn nv(&self) -> usize {
        2 * self.nodes.len()
    }

    /// Thermodynamic DOF count `N_E = #zones`.
    pub fn ne(&self) -> usize {
        self.zones.len()
    }

    pub fn node(&self, a: usize) -> [f64; 2] {
        self.nodes[a]
    }

    pub fn zone(&self, z: usize) -> [usize; 4] {
        self.zones[z]
    }

    pub fn zones(&self) -> &[[usize; 4]] {
        &self.zones
    }

    pub fn boundary_tag(&self, a: usize) -> u8 {
        self.tags[a]
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&a| self.tags[a] != 0).collect()
    }

    /// Zones sharing node `a`.
    pub fn zones_of_node(&self, a: usize) -> &[usize] {
        &self.node_zones[a]
    }

    /// Initial node positions as a component-blocked kinematic vector.
    pub fn initial_positions(&self) -> Vec<f64> {
        let nn = self.nodes.len();
        let mut x = vec![0.0; 2 * nn];
        for (a, p) in self.nodes.iter().enumerate() {
            x[a] = p[0];
            x[nn + a] = p[1];
        }
        x
    }

    /// Per-DOF flag for wall conditions `v · n = 0`: the x component on left
    /// and right walls, the y component on bottom and top walls.
    pub fn essential_mask(&self) -> Vec<bool> {
        let nn = self.nodes.len();
        let mut mask = vec![false; 2 * nn];
        for (a, &t) in self.tags.iter().enumerate() {
            if t & (TAG_LEFT | TAG_RIGHT) != 0 {
                mask[a] = true;
            }
            if t & (TAG_BOTTOM | TAG_TOP) != 0 {
                mask[nn + a] = true;
            }
        }
        mask
    }

    pub fn essential_dofs(&self) -> Vec<usize> {
        self.essential_mask().iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
    }

    /// Plain-text dump: a header line, one node per line "x y", then one
    /// zone per line of four node indices.
    pub fn write_dump<W: Write>(&self, positions: &[f64], out: &mut W) -> std::io::Result<()> {
        let nn = self.nodes.len();
        writeln!(out, "{} {}", nn, self.zones.len())?;
        for a in 0..nn {
            writeln!(out, "{:.17e} {:.17e}", positions[a], positions[nn + a])?;
        }
        for z in &self.zones {
            writeln!(out, "{} {} {} {}", z[0], z[1], z[2], z[3])?;
        }
        Ok(())
    }
}

/// Q1 reference element on `[-1, 1]²` with a 2×2 Gauss rule (unit weights).
pub struct RefElement {
    pub points: [[f64; 2]; 4],
    pub weights: [f64; 4],
    /// `shape[q][a]`
    pub shape: [[f64; 4]; 4],
    /// `grad[q][a] = (∂φ_a/∂ξ, ∂φ_a/∂η)` at point `q`.
    pub grad: [[[f64; 2]; 4]; 4],
}

const REF_NODES: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];

pub fn ref_element() -> &'static RefElement {
    static CELL: OnceLock<RefElement> = OnceLock::new();
    CELL.get_or_init(|| {
        let g = 1.0 / 3f64.sqrt();
        let points = [[-g, -g], [g, -g], [g, g], [-g, g]];
        let mut shape = [[0.0; 4]; 4];
        let mut grad = [[[0.0; 2]; 4]; 4];
        for (q, p) in points.iter().enumerate() {
            for (a, n) in REF_NODES.iter().enumerate() {
                shape[q][a] = 0.25 * (1.0 + n[0] * p[0]) * (1.0 + n[1] * p[1]);
                grad[q][a] = [0.25 * n[0] * (1.0 + n[1] * p[1]), 0.25 * n[1] * (1.0 + n[0] * p[0])];
            }
        }
        RefElement { points, weights: [1.0; 4], shape, grad }
    })
}

/// Jacobian `J[d][k] = ∂x_d/∂ξ_k` at reference point `q` for local vertex
/// coordinates `xl`.
#[inline]
pub fn jacobian_at(xl: &[[f64; 2]; 4], q: usize) -> [[f64; 2]; 2] {
    let re = ref_element();
    let mut j = [[0.0; 2]; 2];
    for a in 0..4 {
        let g = re.grad[q][a];
        for d in 0..2 {
            j[d][0] += xl[a][d] * g[0];
            j[d][1] += xl[a][d] * g[1];
        }
    }
    j
}

#[inline]
pub fn det2(j: &[[f64; 2]; 2]) -> f64 {
    j[0][0] * j[1][1] - j[0][1] * j[1][0]
}

/// Smaller singular value of a 2×2 matrix.
#[inline]
pub fn min_singular_value_2x2(j: &[[f64; 2]; 2]) -> f64 {
    let s = j[0][0] * j[0][0] + j[0][1] * j[0][1] + j[1][0] * j[1][0] + j[1][1] * j[1][1];
    let det = det2(j).abs();
    let disc = (s * s - 4.0 * det * det).max(0.0).sqrt();
    let smax = ((s + disc) * 0.5).sqrt();
    if smax == 0.0 {
        0.0
    } else {
        det / smax
    }
}

#[inline]
pub fn gather_zone_coords(mesh: &Mesh, positions: &[f64], z: usize) -> [[f64; 2]; 4] {
    let nn = mesh.num_nodes();
    let zn = mesh.zones[z];
    let mut xl = [[0.0; 2]; 4];
    for (a, &n) in zn.iter().enumerate() {
        xl[a] = [positions[n], positions[nn + n]];
    }
    xl
}

/// Minimum over quadrature points of the smaller singular value of the
/// reference-to-physical Jacobian of zone `z`.
pub fn zone_jacobian_minsv(mesh: &Mesh, positions: &[f64], z: usize) -> Result<f64> {
    if z >= mesh.num_zones() {
        return Err(Error::invalid(format!("zone {z} out of range")));
    }
    let xl = gather_zone_coords(mesh, positions, z);
    let mut h = f64::INFINITY;
    for q in 0..4 {
        let j = jacobian_at(&xl, q);
        let det = det2(&j);
        if !(det > 1e-14 * min_area_scale(&j)) {
            return Err(Error::Tangled { zone: z, det });
        }
        h = h.min(min_singular_value_2x2(&j));
    }
    Ok(h)
}

fn min_area_scale(j: &[[f64; 2]; 2]) -> f64 {
    j[0][0].abs().max(j[0][1].abs()).max(j[1][0].abs()).max(j[1][1].abs()).powi(2)
}

/// Constant mass matrices of the Q1/Q0 pair.
///
/// The kinematic matrix is block-diagonal in the two components with one
/// scalar Q1 block; it is held in banded storage. Wall conditions are applied
/// by replacing the rows and columns of essential DOFs with those of the
/// identity, which gives one modified block per component.
#[derive(Clone, Debug)]
pub struct MassMatrices {
    nn: usize,
    mv: SymBand,
    mv_bc: [SymBand; 2],
    me: Vec<f64>,
    essential: Vec<bool>,
    rho0_detj0: Vec<[f64; 4]>,
}

pub fn assemble_mass(mesh: &Mesh, density: &[f64]) -> Result<MassMatrices> {
    let ne = mesh.num_zones();
    if density.len() != ne {
        return Err(Error::invalid(format!("density has {} entries for {ne} zones", density.len())));
    }
    if let Some(z) = density.iter().position(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::invalid(format!("non-positive density {} in zone {z}", density[z])));
    }
    let nn = mesh.num_nodes();
    let bw = mesh.nx + 2;
    let w = bw + 1;
    let re = ref_element();
    let x0 = mesh.initial_positions();
    let mut band = vec![0.0; nn * w];
    let mut me = vec![0.0; ne];
    let mut rho0_detj0 = vec![[0.0; 4]; ne];
    for z in 0..ne {
        let xl = gather_zone_coords(mesh, &x0, z);
        let zn = mesh.zones[z];
        for q in 0..4 {
            let det = det2(&jacobian_at(&xl, q));
            if !(det > 0.0) {
                return Err(Error::Tangled { zone: z, det });
            }
            let rdj = density[z] * det;
            rho0_detj0[z][q] = rdj;
            let wq = re.weights[q] * rdj;
            me[z] += wq;
            for a in 0..4 {
                for b in 0..4 {
                    let (ia, ib) = (zn[a], zn[b]);
                    if ia >= ib {
                        band[ia * w + (ia - ib)] += wq * re.shape[q][a] * re.shape[q][b];
                    }
                }
            }
        }
    }
    let essential = mesh.essential_mask();
    let wrap = |e: crate::linalg::LinalgError| Error::invalid(format!("mass matrix not SPD: {e}"));
    let mut mv_bc = Vec::with_capacity(2);
    for d in 0..2 {
        let ess = &essential[d * nn..(d + 1) * nn];
        let mut b = band.clone();
        for i in 0..nn {
            for off in 0..w.min(i + 1) {
                let j = i - off;
                if ess[i] || ess[j] {
                    b[i * w + off] = if off == 0 { 1.0 } else { 0.0 };
                }
            }
        }
        mv_bc.push(SymBand::new(nn, bw, b).map_err(wrap)?);
    }
    let mv = SymBand::new(nn, bw, band).map_err(wrap)?;
    let mv_bc: [SymBand; 2] = mv_bc.try_into().expect("two components");
    Ok(MassMatrices { nn, mv, mv_bc, me, essential, rho0_detj0 })
}

impl MassMatrices {
    pub fn nv(&self) -> usize {
        2 * self.nn
    }

    pub fn ne(&self) -> usize {
        self.me.len()
    }

    /// Diagonal of the thermodynamic mass matrix (zone masses).
    pub fn me_diag(&self) -> &[f64] {
        &self.me
    }

    pub fn essential_mask(&self) -> &[bool] {
        &self.essential
    }

    /// `ρ₀|J₀|` per zone and quadrature point, used to recover the density.
    pub fn rho0_detj0(&self) -> &[[f64; 4]] {
        &self.rho0_detj0
    }

    pub fn scalar_block(&self) -> &SymBand {
        &self.mv
    }

    pub fn total_mass(&self) -> f64 {
        self.me.iter().sum()
    }

    /// `M_V v` without boundary modification.
    pub fn mv_apply(&self, v: &[f64]) -> Vec<f64> {
        let nn = self.nn;
        let mut out = vec![0.0; 2 * nn];
        for d in 0..2 {
            self.mv.matvec_into(&v[d * nn..(d + 1) * nn], &mut out[d * nn..(d + 1) * nn]);
        }
        out
    }

    /// `M̃_V v`: the wall-modified kinematic mass matrix.
    pub fn mv_bc_apply(&self, v: &[f64]) -> Vec<f64> {
        let nn = self.nn;
        let mut out = vec![0.0; 2 * nn];
        for d in 0..2 {
            self.mv_bc[d].matvec_into(&v[d * nn..(d + 1) * nn], &mut out[d * nn..(d + 1) * nn]);
        }
        out
    }

    /// Solves `M̃_V u = rhs` in place.
    pub fn mv_bc_solve_in_place(&self, rhs: &mut [f64]) {
        let nn = self.nn;
        for d in 0..2 {
            self.mv_bc[d].solve_in_place(&mut rhs[d * nn..(d + 1) * nn]);
        }
    }

    /// Zeroes the entries of `f` at essential DOFs.
    pub fn apply_bc(&self, f: &mut [f64]) {
        for (fi, &m) in f.iter_mut().zip(&self.essential) {
            if m {
                *fi = 0.0;
            }
        }
    }

    pub fn me_apply(&self, e: &[f64]) -> Vec<f64> {
        e.iter().zip(&self.me).map(|(a, m)| a * m).collect()
    }

    /// Dense copy of `M_V` (both components), for tests and small problems.
    pub fn mv_dense(&self) -> DenseMatrix {
        let nn = self.nn;
        let s = self.mv.to_dense();
        let mut d = DenseMatrix::zeros(2 * nn, 2 * nn);
        for c in 0..2 {
            for j in 0..nn {
                for i in 0..nn {
                    d[(c * nn + i, c * nn + j)] = s[(i, j)];
                }
            }
        }
        d
    }

    /// `M̃_V Φ` column by column.
    pub fn mv_bc_apply_matrix(&self, phi: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(phi.rows(), phi.cols());
        for j in 0..phi.cols() {
            let c = self.mv_bc_apply(phi.col(j));
            out.col_mut(j).copy_from_slice(&c);
        }
        out
    }

    pub fn mv_apply_matrix(&self, phi: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(phi.rows(), phi.cols());
        for j in 0..phi.cols() {
            let c = self.mv_apply(phi.col(j));
            out.col_mut(j).copy_from_slice(&c);
        }
        out
    }

    pub fn me_apply_matrix(&self, phi: &DenseMatrix) -> DenseMatrix {
        let mut out = phi.clone();
        for j in 0..phi.cols() {
            for (v, m) in out.col_mut(j).iter_mut().zip(&self.me) {
                *v *= m;
            }
        }
        out
    }
}
