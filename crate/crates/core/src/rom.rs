//! Online reduced-order solver.
//!
//! Each window carries affine trial spaces `u ≈ u_os + Φ ŷ` for velocity,
//! energy and position. The reduced RK2-average scheme lifts the state only
//! on the hyper-reduction stencil, the zones that touch a sampled row, and
//! maps the sampled force entries to reduced derivatives through precomputed
//! `n × s` matrices.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::fom::{
    run_adaptive, zone_kernel, Hydro, HydroState, RunOptions, StepOutcome, TimeControlParams, TimeStepper,
    ViscosityParams, ZoneKernelOut,
};
use crate::hyper_reduction::{select_samples, sns_energy, sns_velocity, NonlinearBasis, SampleSet, SamplingMethod};
use crate::linalg::{axpy, Cholesky, DenseMatrix};
use crate::mesh_fem::{det2, jacobian_at};
use crate::offsets::OffsetKind;
use crate::pod::ReducedBasis;
use crate::time_windows::WindowTable;
use crate::{Error, Result};

/// How the lifted state is projected onto the next window's trial space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMode {
    #[default]
    Orthogonal,
    /// Mass-weighted for velocity and energy, Euclidean for position.
    Oblique,
}

/// Velocity, energy and position trial spaces of one window.
#[derive(Clone, Debug)]
pub struct WindowBases {
    pub v: ReducedBasis,
    pub e: ReducedBasis,
    pub x: ReducedBasis,
}

impl WindowBases {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.v.dim(), self.e.dim(), self.x.dim())
    }

    /// Full-length state `u_os + Φ ŷ` for each field.
    pub fn lift(&self, s: &ReducedState) -> HydroState {
        HydroState { v: self.v.lift(&s.yv), e: self.e.lift(&s.ye), x: self.x.lift(&s.yx), t: s.t }
    }

    /// Projects a full state onto the window's affine spaces.
    pub fn project(&self, hydro: &Hydro, s: &HydroState, mode: ProjectionMode, window: usize) -> Result<ReducedState> {
        let (yv, ye) = match mode {
            ProjectionMode::Orthogonal => (self.v.project(&s.v), self.e.project(&s.e)),
            ProjectionMode::Oblique => {
                let mv_phi = hydro.mass.mv_bc_apply_matrix(&self.v.phi);
                let me_phi = hydro.mass.me_apply_matrix(&self.e.phi);
                (
                    oblique_coords(&self.v.phi, &mv_phi, &diff(&s.v, &self.v.offset))?,
                    oblique_coords(&self.e.phi, &me_phi, &diff(&s.e, &self.e.offset))?,
                )
            }
        };
        Ok(ReducedState { yv, ye, yx: self.x.project(&s.x), t: s.t, window })
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `(Φᵀ M Φ)⁻¹ (M Φ)ᵀ r`: coordinates of the `M`-orthogonal projection of `r`.
pub fn oblique_coords(phi: &DenseMatrix, m_phi: &DenseMatrix, r: &[f64]) -> Result<Vec<f64>> {
    let gram = symmetric(phi.t_matmul(m_phi));
    let chol = Cholesky::factor(&gram)?;
    Ok(chol.solve(&m_phi.t_matvec(r)))
}

fn symmetric(mut a: DenseMatrix) -> DenseMatrix {
    let n = a.rows();
    for j in 0..n {
        for i in (j + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
    a
}

/// Reduced coordinates `ŷ = (ŷ_v, ŷ_e, ŷ_x)` of window `window` (1-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedState {
    pub yv: Vec<f64>,
    pub ye: Vec<f64>,
    pub yx: Vec<f64>,
    pub t: f64,
    pub window: usize,
}

/// How the nonlinear terms are evaluated online.
#[derive(Clone, Debug)]
pub enum HyperReduction {
    /// Full force assembly followed by `Φᵀ`; cost scales with the FOM size.
    Galerkin,
    Sampled { f1: NonlinearBasis, f1_samples: SampleSet, ftv: NonlinearBasis, ftv_samples: SampleSet },
}

impl HyperReduction {
    /// SNS force bases `M̃_V Φ_v`, `M_E Φ_e` with rows chosen by `method_v` and
    /// `method_e`.
    pub fn sns(hydro: &Hydro, bases: &WindowBases, method_v: SamplingMethod, method_e: SamplingMethod) -> Result<Self> {
        let f1 = sns_velocity(&hydro.mass, &bases.v.phi);
        let ftv = sns_energy(&hydro.mass, &bases.e.phi);
        let f1_samples = select_samples(&f1, method_v)?;
        let ftv_samples = select_samples(&ftv, method_e)?;
        Ok(Self::Sampled { f1, f1_samples, ftv, ftv_samples })
    }

    /// SNS force bases with explicitly given sample rows.
    pub fn sns_with_indices(hydro: &Hydro, bases: &WindowBases, rows_v: Vec<usize>, rows_e: Vec<usize>) -> Result<Self> {
        let f1 = sns_velocity(&hydro.mass, &bases.v.phi);
        let ftv = sns_energy(&hydro.mass, &bases.e.phi);
        let f1_samples = SampleSet::from_indices(&f1.phi, rows_v)?;
        let ftv_samples = SampleSet::from_indices(&ftv.phi, rows_e)?;
        Ok(Self::Sampled { f1, f1_samples, ftv, ftv_samples })
    }

    /// Every row sampled.
    pub fn sns_full(hydro: &Hydro, bases: &WindowBases) -> Result<Self> {
        Self::sns_with_indices(hydro, bases, (0..hydro.nv()).collect(), (0..hydro.ne()).collect())
    }

    pub fn sample_rows(&self, hydro: &Hydro) -> (Vec<usize>, Vec<usize>) {
        match self {
            Self::Galerkin => ((0..hydro.nv()).collect(), (0..hydro.ne()).collect()),
            Self::Sampled { f1_samples, ftv_samples, .. } => (f1_samples.indices.clone(), ftv_samples.indices.clone()),
        }
    }

    pub fn sample_counts(&self, hydro: &Hydro) -> (usize, usize) {
        match self {
            Self::Galerkin => (hydro.nv(), hydro.ne()),
            Self::Sampled { f1_samples, ftv_samples, .. } => (f1_samples.len(), ftv_samples.len()),
        }
    }
}

/// Zones touched by the sampled rows and the bookkeeping to gather sampled
/// force entries from their blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stencil {
    /// Global ids of stencil zones.
    pub zones: Vec<usize>,
    /// Global ids of the nodes of stencil zones.
    pub nodes: Vec<usize>,
    zone_nodes: Vec<[usize; 4]>,
    /// Sampled velocity row `r` sums `blocks[z][a][d]` over
    /// `f1_entries[f1_ptr[r]..f1_ptr[r + 1]]`; wall rows have no entries.
    f1_ptr: Vec<usize>,
    f1_entries: Vec<(usize, usize, usize)>,
    /// Local zone of each sampled energy row.
    ftv_zones: Vec<usize>,
}

impl Stencil {
    pub fn build(hydro: &Hydro, f1_rows: &[usize], ftv_rows: &[usize]) -> Result<Self> {
        let mesh = &hydro.mesh;
        let nn = mesh.num_nodes();
        let nz = mesh.num_zones();
        let mut in_zone = vec![false; nz];
        for &i in f1_rows {
            if i >= 2 * nn {
                return Err(Error::invalid(format!("velocity sample row {i} out of range")));
            }
            for &z in mesh.zones_of_node(i % nn) {
                in_zone[z] = true;
            }
        }
        for &z in ftv_rows {
            if z >= nz {
                return Err(Error::invalid(format!("energy sample row {z} out of range")));
            }
            in_zone[z] = true;
        }
        let zones: Vec<usize> = (0..nz).filter(|&z| in_zone[z]).collect();
        let mut local_zone = vec![usize::MAX; nz];
        for (l, &z) in zones.iter().enumerate() {
            local_zone[z] = l;
        }
        let mut local_node = vec![usize::MAX; nn];
        let mut nodes = Vec::new();
        for &z in &zones {
            for n in mesh.zone(z) {
                if local_node[n] == usize::MAX {
                    local_node[n] = 0;
                    nodes.push(n);
                }
            }
        }
        nodes.sort_unstable();
        for (l, &n) in nodes.iter().enumerate() {
            local_node[n] = l;
        }
        let zone_nodes = zones.iter().map(|&z| mesh.zone(z).map(|n| local_node[n])).collect();

        let essential = hydro.mass.essential_mask();
        let mut f1_ptr = vec![0];
        let mut f1_entries = Vec::new();
        for &i in f1_rows {
            if !essential[i] {
                let (d, node) = (i / nn, i % nn);
                for &z in mesh.zones_of_node(node) {
                    let a = mesh.zone(z).iter().position(|&m| m == node).expect("node in its zone");
                    f1_entries.push((local_zone[z], a, d));
                }
            }
            f1_ptr.push(f1_entries.len());
        }
        let ftv_zones = ftv_rows.iter().map(|&z| local_zone[z]).collect();
        Ok(Self { zones, nodes, zone_nodes, f1_ptr, f1_entries, ftv_zones })
    }

    /// Kinematic rows (component-blocked) of the stencil nodes.
    fn kinematic_rows(&self, nn: usize) -> Vec<usize> {
        self.nodes.iter().copied().chain(self.nodes.iter().map(|&n| nn + n)).collect()
    }
}

/// Everything a window needs online, precomputed once.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedOperators {
    pub window: usize,
    pub mv_hat: DenseMatrix,
    pub me_hat: DenseMatrix,
    pub phix_t_phiv: DenseMatrix,
    pub phix_t_vos: Vec<f64>,
    /// `M̂_V⁻¹ Φ_vᵀ Φ_F¹ (SᵀΦ_F¹)†` (or `M̂_V⁻¹ Φ_vᵀ` without hyper-reduction).
    pub bv: DenseMatrix,
    pub be: DenseMatrix,
    pub stencil: Stencil,
    phi_v_s: DenseMatrix,
    v_os_s: Vec<f64>,
    phi_x_s: DenseMatrix,
    x_os_s: Vec<f64>,
    phi_e_s: DenseMatrix,
    e_os_s: Vec<f64>,
    rho0_detj0: Vec<[f64; 4]>,
    gamma: Vec<f64>,
    viscosity: Option<ViscosityParams>,
    control: TimeControlParams,
}

impl ReducedOperators {
    pub fn build(hydro: &Hydro, bases: &WindowBases, hyper: &HyperReduction, window: usize) -> Result<Self> {
        let (nv, ne) = (hydro.nv(), hydro.ne());
        if bases.v.len() != nv || bases.x.len() != nv || bases.e.len() != ne {
            return Err(Error::invalid("window bases do not match the mesh"));
        }
        let mv_phi = hydro.mass.mv_bc_apply_matrix(&bases.v.phi);
        let me_phi = hydro.mass.me_apply_matrix(&bases.e.phi);
        let mv_hat = symmetric(bases.v.phi.t_matmul(&mv_phi));
        let me_hat = symmetric(bases.e.phi.t_matmul(&me_phi));
        let mv_chol = Cholesky::factor(&mv_hat)?;
        let me_chol = Cholesky::factor(&me_hat)?;

        let (bv, be, f1_rows, ftv_rows) = match hyper {
            HyperReduction::Galerkin => (
                mv_chol.solve_matrix(&bases.v.phi.transpose()),
                me_chol.solve_matrix(&bases.e.phi.transpose()),
                (0..nv).collect::<Vec<_>>(),
                (0..ne).collect::<Vec<_>>(),
            ),
            HyperReduction::Sampled { f1, f1_samples, ftv, ftv_samples } => {
                if f1.phi.rows() != nv || ftv.phi.rows() != ne {
                    return Err(Error::invalid("force bases do not match the mesh"));
                }
                let bv = mv_chol.solve_matrix(&bases.v.phi.t_matmul(&f1.phi).matmul(&f1_samples.pinv_factor));
                let be = me_chol.solve_matrix(&bases.e.phi.t_matmul(&ftv.phi).matmul(&ftv_samples.pinv_factor));
                (bv, be, f1_samples.indices.clone(), ftv_samples.indices.clone())
            }
        };
        let stencil = Stencil::build(hydro, &f1_rows, &ftv_rows)?;
        let krows = stencil.kinematic_rows(hydro.mesh.num_nodes());
        let mut ops = Self {
            window,
            mv_hat,
            me_hat,
            phix_t_phiv: bases.x.phi.t_matmul(&bases.v.phi),
            phix_t_vos: Vec::new(),
            bv,
            be,
            phi_v_s: bases.v.phi.select_rows(&krows),
            v_os_s: Vec::new(),
            phi_x_s: bases.x.phi.select_rows(&krows),
            x_os_s: Vec::new(),
            phi_e_s: bases.e.phi.select_rows(&stencil.zones),
            e_os_s: Vec::new(),
            rho0_detj0: stencil.zones.iter().map(|&z| hydro.mass.rho0_detj0()[z]).collect(),
            gamma: stencil.zones.iter().map(|&z| hydro.gamma[z]).collect(),
            viscosity: hydro.viscosity,
            control: hydro.control,
            stencil,
        };
        ops.set_offsets(hydro, bases);
        Ok(ops)
    }

    /// Refreshes the offset-dependent pieces after the window's offsets
    /// changed. Costs `O(N n_x)`.
    pub fn set_offsets(&mut self, hydro: &Hydro, bases: &WindowBases) {
        let krows = self.stencil.kinematic_rows(hydro.mesh.num_nodes());
        self.phix_t_vos = bases.x.phi.t_matvec(&bases.v.offset);
        self.v_os_s = krows.iter().map(|&i| bases.v.offset[i]).collect();
        self.x_os_s = krows.iter().map(|&i| bases.x.offset[i]).collect();
        self.e_os_s = self.stencil.zones.iter().map(|&z| bases.e.offset[z]).collect();
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.mv_hat.rows(), self.me_hat.rows(), self.phix_t_phiv.rows())
    }

    pub fn workspace(&self) -> RomWorkspace {
        let k = self.phi_v_s.rows();
        let z = self.stencil.zones.len();
        RomWorkspace {
            v: vec![0.0; k],
            x: vec![0.0; k],
            e: vec![0.0; z],
            w: vec![0.0; k],
            blocks: vec![[[0.0; 2]; 4]; z],
            f1s: vec![0.0; self.bv.cols()],
            fts: vec![0.0; self.be.cols()],
        }
    }

    fn check_dims(&self, s: &ReducedState) -> Result<()> {
        let (nv, ne, nx) = self.dims();
        if s.yv.len() != nv || s.ye.len() != ne || s.yx.len() != nx {
            return Err(Error::invalid(format!(
                "reduced state ({}, {}, {}) does not match window {} dimensions ({nv}, {ne}, {nx})",
                s.yv.len(),
                s.ye.len(),
                s.yx.len(),
                self.window
            )));
        }
        Ok(())
    }

    /// Lifts `(ŷ_v, ŷ_e, ŷ_x)` on the stencil and evaluates the stencil zone
    /// kernels. Returns the stencil time-step estimate.
    fn evaluate(&self, ws: &mut RomWorkspace, yv: &[f64], ye: &[f64], yx: &[f64]) -> Result<f64> {
        lift_into(&self.phi_v_s, &self.v_os_s, yv, &mut ws.v);
        lift_into(&self.phi_x_s, &self.x_os_s, yx, &mut ws.x);
        lift_into(&self.phi_e_s, &self.e_os_s, ye, &mut ws.e);
        let l = self.stencil.nodes.len();
        let mut est = f64::INFINITY;
        for (lz, nodes) in self.stencil.zone_nodes.iter().enumerate() {
            let xl = nodes.map(|n| [ws.x[n], ws.x[l + n]]);
            let vl = nodes.map(|n| [ws.v[n], ws.v[l + n]]);
            let out: ZoneKernelOut = zone_kernel(
                &xl,
                &vl,
                ws.e[lz],
                self.gamma[lz],
                &self.rho0_detj0[lz],
                self.viscosity.as_ref(),
                &self.control,
            )
            .map_err(|det| Error::Tangled { zone: self.stencil.zones[lz], det })?;
            ws.blocks[lz] = out.force;
            est = est.min(out.dt_est);
        }
        for r in 0..ws.f1s.len() {
            ws.f1s[r] = self.stencil.f1_entries[self.stencil.f1_ptr[r]..self.stencil.f1_ptr[r + 1]]
                .iter()
                .map(|&(z, a, d)| ws.blocks[z][a][d])
                .sum();
        }
        Ok(est)
    }

    /// Sampled `(Fᵀ w)` with `w = v_os + Φ_v c` lifted on the stencil.
    fn sampled_ftv(&self, ws: &mut RomWorkspace, c: &[f64]) {
        lift_into(&self.phi_v_s, &self.v_os_s, c, &mut ws.w);
        let l = self.stencil.nodes.len();
        for (r, &lz) in self.stencil.ftv_zones.iter().enumerate() {
            let blk = &ws.blocks[lz];
            let nodes = &self.stencil.zone_nodes[lz];
            let mut s = 0.0;
            for a in 0..4 {
                s += blk[a][0] * ws.w[nodes[a]] + blk[a][1] * ws.w[l + nodes[a]];
            }
            ws.fts[r] = s;
        }
    }

    /// `Φ_xᵀ v_os + Φ_xᵀ Φ_v c`.
    fn position_rate(&self, c: &[f64]) -> Vec<f64> {
        let mut r = self.phix_t_vos.clone();
        for (j, &cj) in c.iter().enumerate() {
            axpy(cj, self.phix_t_phiv.col(j), &mut r);
        }
        r
    }

    /// Reduced right-hand side `(−B_v Sᵀf¹, B_e Sᵀ(Fᵀṽ), Φ_xᵀṽ)` at `s`, plus
    /// the stencil time-step estimate.
    pub fn rhs(&self, ws: &mut RomWorkspace, s: &ReducedState) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
        self.check_dims(s)?;
        let est = self.evaluate(ws, &s.yv, &s.ye, &s.yx)?;
        let mut dv = self.bv.matvec(&ws.f1s);
        dv.iter_mut().for_each(|x| *x = -*x);
        self.sampled_ftv(ws, &s.yv);
        let de = self.be.matvec(&ws.fts);
        Ok((dv, de, self.position_rate(&s.yv), est))
    }

    /// Stencil time-step estimate at `s`.
    pub fn estimate_dt(&self, ws: &mut RomWorkspace, s: &ReducedState) -> Result<f64> {
        self.check_dims(s)?;
        self.evaluate(ws, &s.yv, &s.ye, &s.yx)
    }

    /// One reduced RK2-average step; mirrors the full-order scheme with the
    /// sampled forces in place of the assembled ones.
    pub fn rk2_average_step(&self, ws: &mut RomWorkspace, s: &ReducedState, dt: f64) -> Result<StepOutcome<ReducedState>> {
        if !(dt > 0.0) {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        self.check_dims(s)?;
        let est0 = self.evaluate(ws, &s.yv, &s.ye, &s.yx)?;
        let mut yv_half = s.yv.clone();
        let mut dv = vec![0.0; yv_half.len()];
        self.bv.matvec_into(&ws.f1s, &mut dv);
        axpy(-0.5 * dt, &dv, &mut yv_half);
        self.sampled_ftv(ws, &yv_half);
        let mut ye_half = s.ye.clone();
        let de = self.be.matvec(&ws.fts);
        axpy(0.5 * dt, &de, &mut ye_half);
        let mut yx_half = s.yx.clone();
        axpy(0.5 * dt, &self.position_rate(&yv_half), &mut yx_half);
        let mid = ReducedState { yv: yv_half, ye: ye_half, yx: yx_half, t: s.t + 0.5 * dt, window: s.window };

        let est1 = self.evaluate(ws, &mid.yv, &mid.ye, &mid.yx)?;
        self.bv.matvec_into(&ws.f1s, &mut dv);
        let mut yv_new = s.yv.clone();
        axpy(-dt, &dv, &mut yv_new);
        let yv_bar: Vec<f64> = s.yv.iter().zip(&yv_new).map(|(a, b)| 0.5 * (a + b)).collect();
        self.sampled_ftv(ws, &yv_bar);
        let de = self.be.matvec(&ws.fts);
        let mut ye_new = s.ye.clone();
        axpy(dt, &de, &mut ye_new);
        let mut yx_new = s.yx.clone();
        axpy(dt, &self.position_rate(&yv_bar), &mut yx_new);
        self.check_stencil_geometry(ws, &yx_new)?;
        let end = ReducedState { yv: yv_new, ye: ye_new, yx: yx_new, t: s.t + dt, window: s.window };
        Ok(StepOutcome { stages: vec![mid, end], dt_est: est0.min(est1) })
    }

    fn check_stencil_geometry(&self, ws: &mut RomWorkspace, yx: &[f64]) -> Result<()> {
        lift_into(&self.phi_x_s, &self.x_os_s, yx, &mut ws.x);
        let l = self.stencil.nodes.len();
        for (lz, nodes) in self.stencil.zone_nodes.iter().enumerate() {
            let xl = nodes.map(|n| [ws.x[n], ws.x[l + n]]);
            for q in 0..4 {
                let det = det2(&jacobian_at(&xl, q));
                if !(det > 0.0) {
                    return Err(Error::Tangled { zone: self.stencil.zones[lz], det });
                }
            }
        }
        Ok(())
    }
}

fn lift_into(phi: &DenseMatrix, offset: &[f64], y: &[f64], out: &mut [f64]) {
    phi.matvec_into(y, out);
    for (o, b) in out.iter_mut().zip(offset) {
        *o += b;
    }
}

/// Scratch buffers sized to the stencil; allocated once per window.
#[derive(Clone, Debug)]
pub struct RomWorkspace {
    v: Vec<f64>,
    x: Vec<f64>,
    e: Vec<f64>,
    w: Vec<f64>,
    blocks: Vec<[[f64; 2]; 4]>,
    f1s: Vec<f64>,
    fts: Vec<f64>,
}

/// Binds a window's operators to the adaptive controller.
pub struct RomStepper<'a> {
    pub ops: &'a ReducedOperators,
    pub ws: RomWorkspace,
}

impl<'a> RomStepper<'a> {
    pub fn new(ops: &'a ReducedOperators) -> Self {
        Self { ops, ws: ops.workspace() }
    }
}

impl TimeStepper for RomStepper<'_> {
    type State = ReducedState;
    fn time(&self, s: &ReducedState) -> f64 {
        s.t
    }
    fn set_time(&self, s: &mut ReducedState, t: f64) {
        s.t = t;
    }
    fn estimate_dt(&mut self, s: &ReducedState) -> Result<f64> {
        self.ops.estimate_dt(&mut self.ws, s)
    }
    fn step(&mut self, s: &ReducedState, dt: f64) -> Result<StepOutcome<ReducedState>> {
        self.ops.rk2_average_step(&mut self.ws, s, dt)
    }
}

/// Affine map of reduced coordinates across a window boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub tv: DenseMatrix,
    pub cv: Vec<f64>,
    pub te: DenseMatrix,
    pub ce: Vec<f64>,
    pub tx: DenseMatrix,
    pub cx: Vec<f64>,
}

impl Transition {
    /// Precomputes `ŷ_new = T ŷ_old + c` for lifting with `old` and
    /// projecting onto `new`.
    pub fn build(hydro: &Hydro, old: &WindowBases, new: &WindowBases, mode: ProjectionMode) -> Result<Self> {
        let orth = |o: &ReducedBasis, n: &ReducedBasis| -> (DenseMatrix, Vec<f64>) {
            (n.phi.t_matmul(&o.phi), n.phi.t_matvec(&diff(&o.offset, &n.offset)))
        };
        let oblique = |o: &ReducedBasis, n: &ReducedBasis, m_phi: DenseMatrix| -> Result<(DenseMatrix, Vec<f64>)> {
            let chol = Cholesky::factor(&symmetric(n.phi.t_matmul(&m_phi)))?;
            Ok((
                chol.solve_matrix(&m_phi.t_matmul(&o.phi)),
                chol.solve(&m_phi.t_matvec(&diff(&o.offset, &n.offset))),
            ))
        };
        let ((tv, cv), (te, ce)) = match mode {
            ProjectionMode::Orthogonal => (orth(&old.v, &new.v), orth(&old.e, &new.e)),
            ProjectionMode::Oblique => (
                oblique(&old.v, &new.v, hydro.mass.mv_bc_apply_matrix(&new.v.phi))?,
                oblique(&old.e, &new.e, hydro.mass.me_apply_matrix(&new.e.phi))?,
            ),
        };
        let (tx, cx) = orth(&old.x, &new.x);
        Ok(Self { tv, cv, te, ce, tx, cx })
    }

    pub fn apply(&self, s: &ReducedState, window: usize) -> Result<ReducedState> {
        let map = |t: &DenseMatrix, c: &[f64], y: &[f64]| -> Result<Vec<f64>> {
            if t.cols() != y.len() {
                return Err(Error::invalid("transition dimension mismatch"));
            }
            let mut out = t.matvec(y);
            axpy(1.0, c, &mut out);
            Ok(out)
        };
        Ok(ReducedState {
            yv: map(&self.tv, &self.cv, &s.yv)?,
            ye: map(&self.te, &self.ce, &s.ye)?,
            yx: map(&self.tx, &self.cx, &s.yx)?,
            t: s.t,
            window,
        })
    }
}

/// One window of the online model.
#[derive(Clone, Debug)]
pub struct RomWindow {
    pub bases: WindowBases,
    pub ops: ReducedOperators,
    pub samples: (usize, usize),
    /// Sampled rows of `F̃·1` and `Fᵀv` (every row for the Galerkin ROM).
    pub sample_rows: (Vec<usize>, Vec<usize>),
}

#[derive(Clone, Debug)]
pub struct RomRunOptions {
    pub t_final: f64,
    pub fixed_dt: Option<f64>,
    pub dt_max: f64,
    pub dt_min: f64,
    pub max_steps: Option<usize>,
}

impl RomRunOptions {
    pub fn new(t_final: f64) -> Self {
        let d = RunOptions::new(t_final);
        Self { t_final, fixed_dt: None, dt_max: d.dt_max, dt_min: d.dt_min, max_steps: None }
    }
}

/// Outcome of an online run.
#[derive(Clone, Debug)]
pub struct RomRun {
    pub final_state: ReducedState,
    /// Initial reduced state followed by every accepted endpoint.
    pub states: Vec<ReducedState>,
    pub steps_per_window: Vec<usize>,
    pub redos: usize,
    /// Wall-clock time of the time loop, window transitions included.
    pub wall_time: Duration,
}

impl RomRun {
    pub fn steps(&self) -> usize {
        self.steps_per_window.iter().sum()
    }
}

/// The windowed online model.
#[derive(Clone, Debug)]
pub struct RomModel {
    pub table: WindowTable,
    pub windows: Vec<RomWindow>,
    /// `transitions[w]` maps window `w` (0-based) into `w + 1`; absent when
    /// offsets come from the previous window.
    pub transitions: Vec<Option<Transition>>,
    pub mode: ProjectionMode,
    pub offset_kind: OffsetKind,
}

impl RomModel {
    pub fn build(
        hydro: &Hydro,
        table: WindowTable,
        bases: Vec<WindowBases>,
        hyper: &[HyperReduction],
        mode: ProjectionMode,
        offset_kind: OffsetKind,
    ) -> Result<Self> {
        let nw = table.num_windows();
        if bases.len() != nw || hyper.len() != nw {
            return Err(Error::invalid(format!(
                "{} windows but {} basis sets and {} hyper-reduction sets",
                nw,
                bases.len(),
                hyper.len()
            )));
        }
        let mut windows = Vec::with_capacity(nw);
        for (w, (b, h)) in bases.into_iter().zip(hyper).enumerate() {
            let ops = ReducedOperators::build(hydro, &b, h, w + 1)?;
            windows.push(RomWindow { samples: h.sample_counts(hydro), sample_rows: h.sample_rows(hydro), bases: b, ops });
        }
        let mut transitions = Vec::with_capacity(nw.saturating_sub(1));
        for w in 0..nw.saturating_sub(1) {
            transitions.push(match offset_kind {
                OffsetKind::PreviousWindow => None,
                _ => Some(Transition::build(hydro, &windows[w].bases, &windows[w + 1].bases, mode)?),
            });
        }
        Ok(Self { table, windows, transitions, mode, offset_kind })
    }

    /// Reduced initial condition in window 1.
    pub fn project_initial(&self, hydro: &Hydro, s0: &HydroState) -> Result<ReducedState> {
        self.windows[0].bases.project(hydro, s0, self.mode, 1)
    }

    pub fn lift(&self, s: &ReducedState) -> HydroState {
        self.windows[s.window - 1].bases.lift(s)
    }

    /// Runs windows `1..=N_w` in sequence, landing exactly on each `τ_w`.
    pub fn run(&mut self, hydro: &Hydro, y0: &ReducedState, opts: &RomRunOptions) -> Result<RomRun> {
        let nw = self.windows.len();
        let mut states = vec![y0.clone()];
        let mut steps_per_window = Vec::with_capacity(nw);
        let mut redos = 0;
        let mut state = y0.clone();
        let mut dt: Option<f64> = None;
        let start = Instant::now();
        for w in 1..=nw {
            if w > 1 {
                state = self.enter_window(hydro, &state, w)?;
            }
            let ropts = RunOptions {
                t_end: self.table.endpoints[w],
                dt_max: opts.dt_max,
                dt_min: opts.dt_min,
                fixed_dt: opts.fixed_dt,
                max_steps: opts.max_steps,
                window: Some(w),
            };
            let ops = &self.windows[w - 1].ops;
            let mut stepper = RomStepper::new(ops);
            let dt0 = match dt {
                Some(d) => d,
                None => crate::fom::initial_dt(&mut stepper, &state, &ropts)?,
            };
            let summary = run_adaptive(&mut stepper, &state, &ropts, &hydro.control, dt0, |acc| {
                states.push(acc.stages.last().expect("stage").clone());
            })?;
            dt = Some(summary.next_dt);
            redos += summary.redos;
            steps_per_window.push(summary.steps);
            state = summary.state;
        }
        let wall_time = start.elapsed();
        Ok(RomRun { final_state: state, states, steps_per_window, redos, wall_time })
    }

    fn enter_window(&mut self, hydro: &Hydro, s: &ReducedState, w: usize) -> Result<ReducedState> {
        match &self.transitions[w - 2] {
            Some(t) => t.apply(s, w),
            None => {
                let lifted = self.windows[w - 2].bases.lift(s);
                let win = &mut self.windows[w - 1];
                win.bases.v.offset = lifted.v;
                win.bases.e.offset = lifted.e;
                win.bases.x.offset = lifted.x;
                win.ops.set_offsets(hydro, &win.bases);
                let (nv, ne, nx) = win.bases.dims();
                Ok(ReducedState { yv: vec![0.0; nv], ye: vec![0.0; ne], yx: vec![0.0; nx], t: s.t, window: w })
            }
        }
    }
}
