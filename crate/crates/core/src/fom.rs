//! The full-order Lagrangian hydrodynamics model.
//!
//! The semi-discrete system is
//!
//! ```text
//! M_V dv/dt = -F·1,   M_E de/dt = Fᵀ·v,   dx/dt = v
//! ```
//!
//! where `F` is the generalized force matrix coupling kinematic and
//! thermodynamic DOFs. Each zone contributes an 8-entry column block of `F`;
//! both `F·1` and `Fᵀ·w` are formed from those blocks, so assembling a zone
//! once per stage serves both equations.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::linalg::dot;
use crate::mesh_fem::{
    det2, gather_zone_coords, jacobian_at, min_singular_value_2x2, ref_element, MassMatrices, Mesh,
};
use crate::{Error, Result};

/// Polytropic ideal gas `p = (γ - 1) ρ e`, zone by zone.
pub fn eos_pressure(rho: &[f64], e: &[f64], gamma: &[f64]) -> Vec<f64> {
    let p: Vec<f64> = rho.iter().zip(e).zip(gamma).map(|((r, e), g)| (g - 1.0) * r * e).collect();
    if e.iter().any(|&v| v < 0.0) {
        log::warn!("negative specific internal energy passed to the equation of state");
    }
    p
}

/// Coefficients of the compression-only tensor viscosity.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ViscosityParams {
    pub q1: f64,
    pub q2: f64,
}

impl Default for ViscosityParams {
    fn default() -> Self {
        Self { q1: 0.5, q2: 2.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TimeControlParams {
    pub cfl_alpha: f64,
    pub cfl_alpha_mu: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub gamma_ctrl: f64,
}

impl Default for TimeControlParams {
    fn default() -> Self {
        Self { cfl_alpha: 0.5, cfl_alpha_mu: 2.5, beta1: 0.85, beta2: 1.02, gamma_ctrl: 0.8 }
    }
}

impl TimeControlParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.cfl_alpha > 0.0
            && self.cfl_alpha_mu >= 0.0
            && 0.0 < self.beta1
            && self.beta1 < 1.0
            && self.beta2 > 1.0
            && 0.0 < self.gamma_ctrl
            && self.gamma_ctrl < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid time control parameters {self:?}")))
        }
    }
}

/// The stacked full-order state `(v; e; x)` at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct HydroState {
    pub v: Vec<f64>,
    pub e: Vec<f64>,
    pub x: Vec<f64>,
    pub t: f64,
}

impl HydroState {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.v.len() + self.e.len() + self.x.len());
        y.extend_from_slice(&self.v);
        y.extend_from_slice(&self.e);
        y.extend_from_slice(&self.x);
        y
    }

    pub fn from_flat(nv: usize, ne: usize, y: &[f64], t: f64) -> Result<Self> {
        if y.len() != 2 * nv + ne {
            return Err(Error::invalid(format!("state vector of length {} for Nv={nv}, Ne={ne}", y.len())));
        }
        Ok(Self { v: y[..nv].to_vec(), e: y[nv..nv + ne].to_vec(), x: y[nv + ne..].to_vec(), t })
    }
}

const COMPRESSION_TOL: f64 = 1e-10;

/// Force block and time-step estimate of one zone.
#[derive(Clone, Copy, Debug)]
pub struct ZoneKernelOut {
    /// `force[a][d]`: entry of `F` for component `d` of local vertex `a`.
    pub force: [[f64; 2]; 4],
    pub dt_est: f64,
}

/// Evaluates one zone's contribution to `F` from local vertex positions and
/// velocities. Returns the offending determinant when the zone is inverted.
#[allow(clippy::too_many_arguments)]
#[inline]
pub fn zone_kernel(
    xl: &[[f64; 2]; 4],
    vl: &[[f64; 2]; 4],
    e: f64,
    gamma: f64,
    rho0_detj0: &[f64; 4],
    visc: Option<&ViscosityParams>,
    cfl: &TimeControlParams,
) -> std::result::Result<ZoneKernelOut, f64> {
    let re = ref_element();
    let mut force = [[0.0; 2]; 4];
    let mut dt_est = f64::INFINITY;
    let cs = if e > 0.0 { (gamma * (gamma - 1.0) * e).sqrt() } else { 0.0 };
    for q in 0..4 {
        let j = jacobian_at(xl, q);
        let det = det2(&j);
        if !(det > 0.0) {
            return Err(det);
        }
        let inv_det = 1.0 / det;
        let jinv = [[j[1][1] * inv_det, -j[0][1] * inv_det], [-j[1][0] * inv_det, j[0][0] * inv_det]];
        let mut gp = [[0.0; 2]; 4];
        for a in 0..4 {
            let g = re.grad[q][a];
            gp[a] = [jinv[0][0] * g[0] + jinv[1][0] * g[1], jinv[0][1] * g[0] + jinv[1][1] * g[1]];
        }
        let rho = rho0_detj0[q] * inv_det;
        let p = (gamma - 1.0) * rho * e;
        let mut gv = [[0.0; 2]; 2];
        for a in 0..4 {
            for d in 0..2 {
                gv[d][0] += vl[a][d] * gp[a][0];
                gv[d][1] += vl[a][d] * gp[a][1];
            }
        }
        let div = gv[0][0] + gv[1][1];
        let h = min_singular_value_2x2(&j);
        // Compression is judged relative to the gradient size so that a
        // roundoff-level divergence cannot toggle the linear term.
        let gnorm = (gv[0][0] * gv[0][0] + gv[0][1] * gv[0][1] + gv[1][0] * gv[1][0] + gv[1][1] * gv[1][1]).sqrt();
        let mu = match visc {
            Some(vp) if div < -COMPRESSION_TOL * gnorm => rho * (vp.q2 * h * h * (-div) + vp.q1 * h * cs),
            _ => 0.0,
        };
        let shear = 0.5 * mu * (gv[0][1] + gv[1][0]);
        let sigma = [[-p + mu * gv[0][0], shear], [shear, -p + mu * gv[1][1]]];
        let wdet = re.weights[q] * det;
        for a in 0..4 {
            for d in 0..2 {
                force[a][d] += wdet * (sigma[d][0] * gp[a][0] + sigma[d][1] * gp[a][1]);
            }
        }
        let denom = cs / h + cfl.cfl_alpha_mu * mu / (rho * h * h);
        if denom > 0.0 {
            dt_est = dt_est.min(cfl.cfl_alpha / denom);
        }
    }
    Ok(ZoneKernelOut { force, dt_est })
}

/// Zone force blocks for a set of zones (all zones in the full assembly).
#[derive(Clone, Debug)]
pub struct ForceEvaluation {
    pub zones: Vec<usize>,
    pub blocks: Vec<[[f64; 2]; 4]>,
    pub dt_est: f64,
}

impl ForceEvaluation {
    /// `F·1` (before wall modification), scattered over kinematic DOFs.
    pub fn f1(&self, mesh: &Mesh) -> Vec<f64> {
        let nn = mesh.num_nodes();
        let mut f = vec![0.0; 2 * nn];
        for (&z, blk) in self.zones.iter().zip(&self.blocks) {
            for (a, &n) in mesh.zone(z).iter().enumerate() {
                f[n] += blk[a][0];
                f[nn + n] += blk[a][1];
            }
        }
        f
    }

    /// `Fᵀ·w` restricted to the evaluated zones (indexed like `self.zones`).
    pub fn ftv(&self, mesh: &Mesh, w: &[f64]) -> Vec<f64> {
        let nn = mesh.num_nodes();
        self.zones
            .iter()
            .zip(&self.blocks)
            .map(|(&z, blk)| {
                let mut s = 0.0;
                for (a, &n) in mesh.zone(z).iter().enumerate() {
                    s += blk[a][0] * w[n] + blk[a][1] * w[nn + n];
                }
                s
            })
            .collect()
    }
}

/// Full-order model: mesh, constant mass matrices and material data.
#[derive(Clone, Debug)]
pub struct Hydro {
    pub mesh: Mesh,
    pub mass: MassMatrices,
    pub gamma: Vec<f64>,
    pub viscosity: Option<ViscosityParams>,
    pub control: TimeControlParams,
}

/// Time integration scheme of the full-order model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Rk2Average,
    Rk4,
}

impl Scheme {
    /// Stage states recorded per step.
    pub fn stages(self) -> usize {
        match self {
            Scheme::Rk2Average => 2,
            Scheme::Rk4 => 4,
        }
    }
}

impl Hydro {
    pub fn new(
        mesh: Mesh,
        mass: MassMatrices,
        gamma: Vec<f64>,
        viscosity: Option<ViscosityParams>,
        control: TimeControlParams,
    ) -> Result<Self> {
        if gamma.len() != mesh.num_zones() {
            return Err(Error::invalid("one adiabatic index per zone required"));
        }
        if let Some(g) = gamma.iter().find(|&&g| !(g > 1.0)) {
            return Err(Error::invalid(format!("adiabatic index {g} must exceed 1")));
        }
        control.validate()?;
        Ok(Self { mesh, mass, gamma, viscosity, control })
    }

    pub fn nv(&self) -> usize {
        self.mesh.nv()
    }

    pub fn ne(&self) -> usize {
        self.mesh.ne()
    }

    fn zone_eval(&self, z: usize, x: &[f64], v: &[f64], e: &[f64]) -> Result<ZoneKernelOut> {
        let xl = gather_zone_coords(&self.mesh, x, z);
        let vl = gather_zone_coords(&self.mesh, v, z);
        zone_kernel(
            &xl,
            &vl,
            e[z],
            self.gamma[z],
            &self.mass.rho0_detj0()[z],
            self.viscosity.as_ref(),
            &self.control,
        )
        .map_err(|det| Error::Tangled { zone: z, det })
    }

    /// Assembles all zone force blocks at `(x, v, e)`.
    pub fn assemble_force(&self, state: &HydroState) -> Result<ForceEvaluation> {
        let zones: Vec<usize> = (0..self.mesh.num_zones()).collect();
        self.assemble_force_zones(state, &zones)
    }

    /// Restricted assembly over the listed zones only.
    pub fn assemble_force_zones(&self, state: &HydroState, zones: &[usize]) -> Result<ForceEvaluation> {
        let mut blocks = Vec::with_capacity(zones.len());
        let mut dt_est = f64::INFINITY;
        for &z in zones {
            let out = self.zone_eval(z, &state.x, &state.v, &state.e)?;
            blocks.push(out.force);
            dt_est = dt_est.min(out.dt_est);
        }
        Ok(ForceEvaluation { zones: zones.to_vec(), blocks, dt_est })
    }

    /// Time-step estimate at a state (minimum over all quadrature points).
    pub fn estimate_dt(&self, state: &HydroState) -> Result<f64> {
        Ok(self.assemble_force(state)?.dt_est)
    }

    /// `-M̃_V⁻¹ F̃·1`: the velocity right-hand side with wall rows removed.
    pub fn velocity_rhs(&self, fe: &ForceEvaluation) -> Vec<f64> {
        let mut f = fe.f1(&self.mesh);
        self.mass.apply_bc(&mut f);
        self.mass.mv_bc_solve_in_place(&mut f);
        f.iter_mut().for_each(|v| *v = -*v);
        f
    }

    /// `M_E⁻¹ Fᵀ w`.
    pub fn energy_rhs(&self, fe: &ForceEvaluation, w: &[f64]) -> Vec<f64> {
        let mut r = fe.ftv(&self.mesh, w);
        for (ri, m) in r.iter_mut().zip(self.mass.me_diag()) {
            *ri /= m;
        }
        r
    }

    /// Discrete total energy `½ vᵀ M_V v + 1ᵀ M_E e`.
    pub fn total_energy(&self, s: &HydroState) -> f64 {
        0.5 * dot(&s.v, &self.mass.mv_apply(&s.v)) + dot(self.mass.me_diag(), &s.e)
    }

    pub fn kinetic_energy(&self, s: &HydroState) -> f64 {
        0.5 * dot(&s.v, &self.mass.mv_apply(&s.v))
    }

    /// Total momentum per component, `1ᵀ (M_V v)_d`.
    pub fn momentum(&self, s: &HydroState) -> [f64; 2] {
        let mv = self.mass.mv_apply(&s.v);
        let nn = self.mesh.num_nodes();
        [mv[..nn].iter().sum(), mv[nn..].iter().sum()]
    }

    /// Zone densities at quadrature points, `ρ₀|J₀| / |J|`.
    pub fn zone_densities(&self, x: &[f64]) -> Result<Vec<[f64; 4]>> {
        (0..self.mesh.num_zones())
            .map(|z| {
                let xl = gather_zone_coords(&self.mesh, x, z);
                let mut r = [0.0; 4];
                for (q, rq) in r.iter_mut().enumerate() {
                    let det = det2(&jacobian_at(&xl, q));
                    if !(det > 0.0) {
                        return Err(Error::Tangled { zone: z, det });
                    }
                    *rq = self.mass.rho0_detj0()[z][q] / det;
                }
                Ok(r)
            })
            .collect()
    }

    fn check_geometry(&self, x: &[f64]) -> Result<()> {
        for z in 0..self.mesh.num_zones() {
            let xl = gather_zone_coords(&self.mesh, x, z);
            for q in 0..4 {
                let det = det2(&jacobian_at(&xl, q));
                if !(det > 0.0) {
                    return Err(Error::Tangled { zone: z, det });
                }
            }
        }
        Ok(())
    }

    /// One RK2-average step. Returns the midpoint and endpoint states; the
    /// estimate is the minimum over both stages.
    pub fn rk2_average_step(&self, s: &HydroState, dt: f64) -> Result<StepOutcome<HydroState>> {
        if !(dt > 0.0) {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        let f0 = self.assemble_force(s)?;
        let dv0 = self.velocity_rhs(&f0);
        let mut v_half = s.v.clone();
        crate::linalg::axpy(0.5 * dt, &dv0, &mut v_half);
        let de0 = self.energy_rhs(&f0, &v_half);
        let mut e_half = s.e.clone();
        crate::linalg::axpy(0.5 * dt, &de0, &mut e_half);
        let mut x_half = s.x.clone();
        crate::linalg::axpy(0.5 * dt, &v_half, &mut x_half);
        let mid = HydroState { v: v_half, e: e_half, x: x_half, t: s.t + 0.5 * dt };

        let f1 = self.assemble_force(&mid)?;
        let dv1 = self.velocity_rhs(&f1);
        let mut v_new = s.v.clone();
        crate::linalg::axpy(dt, &dv1, &mut v_new);
        let v_bar: Vec<f64> = s.v.iter().zip(&v_new).map(|(a, b)| 0.5 * (a + b)).collect();
        let de1 = self.energy_rhs(&f1, &v_bar);
        let mut e_new = s.e.clone();
        crate::linalg::axpy(dt, &de1, &mut e_new);
        let mut x_new = s.x.clone();
        crate::linalg::axpy(dt, &v_bar, &mut x_new);
        self.check_geometry(&x_new)?;
        let end = HydroState { v: v_new, e: e_new, x: x_new, t: s.t + dt };
        Ok(StepOutcome { dt_est: f0.dt_est.min(f1.dt_est), stages: vec![mid, end] })
    }

    /// Right-hand side of the combined system `(−M̃⁻¹F̃1, M_E⁻¹Fᵀv, v)` on a
    /// flat state, plus the time-step estimate at that state.
    pub fn combined_rhs(&self, y: &[f64]) -> Result<(Vec<f64>, f64)> {
        let s = HydroState::from_flat(self.nv(), self.ne(), y, 0.0)?;
        let fe = self.assemble_force(&s)?;
        let mut out = self.velocity_rhs(&fe);
        out.extend(self.energy_rhs(&fe, &s.v));
        out.extend_from_slice(&s.v);
        Ok((out, fe.dt_est))
    }

    /// Classical RK4 step on the combined state. Stage states are the three
    /// intermediate stage inputs followed by the endpoint.
    pub fn rk4_step(&self, s: &HydroState, dt: f64) -> Result<StepOutcome<HydroState>> {
        if !(dt > 0.0) {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        let mut est = f64::INFINITY;
        let (y1, stages) = rk4_generic(&s.to_flat(), dt, |y| {
            let (r, e) = self.combined_rhs(y)?;
            est = est.min(e);
            Ok(r)
        })?;
        let (nv, ne) = (self.nv(), self.ne());
        let offs = [0.5, 0.5, 1.0];
        let mut out = Vec::with_capacity(4);
        for (st, o) in stages.iter().zip(offs) {
            out.push(HydroState::from_flat(nv, ne, st, s.t + o * dt)?);
        }
        let end = HydroState::from_flat(nv, ne, &y1, s.t + dt)?;
        self.check_geometry(&end.x)?;
        out.push(end);
        Ok(StepOutcome { stages: out, dt_est: est })
    }

    pub fn step(&self, scheme: Scheme, s: &HydroState, dt: f64) -> Result<StepOutcome<HydroState>> {
        match scheme {
            Scheme::Rk2Average => self.rk2_average_step(s, dt),
            Scheme::Rk4 => self.rk4_step(s, dt),
        }
    }
}

/// One classical RK4 step of `dy/dt = f(y)`. Returns the new state and the
/// three intermediate stage inputs `y + dt/2 k1`, `y + dt/2 k2`, `y + dt k3`.
pub fn rk4_generic<F>(y: &[f64], dt: f64, mut f: F) -> Result<(Vec<f64>, [Vec<f64>; 3])>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let shifted = |k: &[f64], h: f64| -> Vec<f64> { y.iter().zip(k).map(|(a, b)| a + h * b).collect() };
    let k1 = f(y)?;
    let y2 = shifted(&k1, 0.5 * dt);
    let k2 = f(&y2)?;
    let y3 = shifted(&k2, 0.5 * dt);
    let k3 = f(&y3)?;
    let y4 = shifted(&k3, dt);
    let k4 = f(&y4)?;
    let y_new: Vec<f64> = (0..y.len())
        .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    Ok((y_new, [y2, y3, y4]))
}

/// Result of one attempted step: the recorded stage states (the last one is
/// the new state) and the stage-minimum time-step estimate.
#[derive(Clone, Debug)]
pub struct StepOutcome<S> {
    pub stages: Vec<S>,
    pub dt_est: f64,
}

impl<S> StepOutcome<S> {
    pub fn end(&self) -> &S {
        self.stages.last().expect("at least one stage")
    }
}

/// Anything the adaptive controller can advance.
pub trait TimeStepper {
    type State: Clone;
    fn time(&self, s: &Self::State) -> f64;
    fn set_time(&self, s: &mut Self::State, t: f64);
    fn estimate_dt(&mut self, s: &Self::State) -> Result<f64>;
    fn step(&mut self, s: &Self::State, dt: f64) -> Result<StepOutcome<Self::State>>;
}

/// Full-order stepper binding a model to a scheme.
pub struct FomStepper<'a> {
    pub hydro: &'a Hydro,
    pub scheme: Scheme,
}

impl TimeStepper for FomStepper<'_> {
    type State = HydroState;
    fn time(&self, s: &HydroState) -> f64 {
        s.t
    }
    fn set_time(&self, s: &mut HydroState, t: f64) {
        s.t = t;
    }
    fn estimate_dt(&mut self, s: &HydroState) -> Result<f64> {
        self.hydro.estimate_dt(s)
    }
    fn step(&mut self, s: &HydroState, dt: f64) -> Result<StepOutcome<HydroState>> {
        self.hydro.step(self.scheme, s, dt)
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// End of this run segment.
    pub t_end: f64,
    /// Cap on Δt (used when the estimate is unbounded).
    pub dt_max: f64,
    /// Error out once Δt drops below this value.
    pub dt_min: f64,
    /// Bypass the controller and use this Δt (the last step is still clipped).
    pub fixed_dt: Option<f64>,
    pub max_steps: Option<usize>,
    /// Window id reported in errors.
    pub window: Option<usize>,
}

impl RunOptions {
    /// Defaults for a run on `[0, t_final]`.
    pub fn new(t_final: f64) -> Self {
        Self { t_end: t_final, dt_max: t_final / 10.0, dt_min: 1e-14 * t_final, fixed_dt: None, max_steps: None, window: None }
    }
}

/// An accepted step as seen by the recorder.
pub struct AcceptedStep<'a, S> {
    /// 1-based index of the step within the run segment.
    pub index: usize,
    pub t_start: f64,
    pub dt: f64,
    pub stages: &'a [S],
}

#[derive(Clone, Debug)]
pub struct RunSummary<S> {
    pub state: S,
    pub steps: usize,
    pub redos: usize,
    /// Controller Δt to carry into a following segment.
    pub next_dt: f64,
    /// Times of the accepted states, starting with the initial time.
    pub times: Vec<f64>,
}

/// Initial Δt: `min(dt_max, estimate)`.
pub fn initial_dt<T: TimeStepper>(stepper: &mut T, s: &T::State, opts: &RunOptions) -> Result<f64> {
    if let Some(dt) = opts.fixed_dt {
        return Ok(dt);
    }
    let est = stepper.estimate_dt(s)?;
    Ok(est.min(opts.dt_max))
}

/// Advances `state0` to `opts.t_end` (or `max_steps`) with the adaptive
/// controller: an attempt with `Δt ≥ est` is redone with `β₁Δt`; an accepted
/// step with `Δt ≤ γ·est` grows the next attempt to `β₂Δt`.
pub fn run_adaptive<T, R>(
    stepper: &mut T,
    state0: &T::State,
    opts: &RunOptions,
    ctrl: &TimeControlParams,
    dt_start: f64,
    mut on_accept: R,
) -> Result<RunSummary<T::State>>
where
    T: TimeStepper,
    R: FnMut(&AcceptedStep<'_, T::State>),
{
    let mut state = state0.clone();
    let mut dt = opts.fixed_dt.unwrap_or(dt_start);
    let mut steps = 0usize;
    let mut redos = 0usize;
    let mut times = vec![stepper.time(&state)];
    let land_tol = 1e-12 * opts.t_end.abs().max(1.0);
    loop {
        let t = stepper.time(&state);
        if t >= opts.t_end - land_tol || opts.max_steps.is_some_and(|m| steps >= m) {
            break;
        }
        let remaining = opts.t_end - t;
        let nominal = dt.min(opts.dt_max);
        let (dt_try, last) = if nominal >= remaining - land_tol { (remaining, true) } else { (nominal, false) };
        if !(dt_try >= opts.dt_min) {
            return Err(Error::VanishingTimeStep { t, dt: dt_try, window: opts.window });
        }
        let outcome = match stepper.step(&state, dt_try) {
            Ok(o) => o,
            Err(Error::Tangled { zone, det }) if opts.fixed_dt.is_none() => {
                log::debug!("step at t={t} with dt={dt_try:e} tangled zone {zone} (det {det:e}); redoing");
                dt = ctrl.beta1 * dt_try;
                redos += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        if opts.fixed_dt.is_none() {
            if dt_try >= outcome.dt_est {
                dt = ctrl.beta1 * dt_try;
                redos += 1;
                continue;
            }
            // A clipped final step leaves the nominal Δt for the next segment alone.
            if !last {
                let grow = dt_try <= ctrl.gamma_ctrl * outcome.dt_est;
                dt = if grow { ctrl.beta2 * dt_try } else { dt_try };
            }
        }
        steps += 1;
        let StepOutcome { mut stages, .. } = outcome;
        if last {
            let end = stages.last_mut().expect("stage");
            stepper.set_time(end, opts.t_end);
        }
        on_accept(&AcceptedStep { index: steps, t_start: t, dt: dt_try, stages: &stages });
        state = stages.pop().expect("stage");
        times.push(stepper.time(&state));
    }
    Ok(RunSummary { state, steps, redos, next_dt: dt, times })
}

/// One recorded snapshot column's provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnMeta {
    /// 1-based accepted step index.
    pub step: usize,
    /// 0-based stage within the step (`r - 1` is the endpoint).
    pub stage: usize,
    pub time: f64,
    pub param: f64,
}

/// In-memory trajectory: the initial state plus every recorded stage state.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub nv: usize,
    pub ne: usize,
    pub stages_per_step: usize,
    pub param: f64,
    pub initial: Vec<f64>,
    pub columns: Vec<Vec<f64>>,
    pub meta: Vec<ColumnMeta>,
    /// `t_0 = 0, t_1, …, t_{N_t}` of accepted steps.
    pub step_times: Vec<f64>,
}

impl Trajectory {
    pub fn new(nv: usize, ne: usize, stages_per_step: usize, param: f64, initial: &HydroState) -> Self {
        Self {
            nv,
            ne,
            stages_per_step,
            param,
            initial: initial.to_flat(),
            columns: Vec::new(),
            meta: Vec::new(),
            step_times: vec![initial.t],
        }
    }

    /// Records all stage states of an accepted step.
    pub fn record(&mut self, step: &AcceptedStep<'_, HydroState>) {
        for (k, s) in step.stages.iter().enumerate() {
            self.columns.push(s.to_flat());
            self.meta.push(ColumnMeta { step: step.index, stage: k, time: s.t, param: self.param });
        }
        self.step_times.push(step.stages.last().map(|s| s.t).unwrap_or(step.t_start + step.dt));
    }

    pub fn num_steps(&self) -> usize {
        self.step_times.len() - 1
    }

    /// Endpoint state of accepted step `n` (`n = 0` is the initial state).
    pub fn step_state(&self, n: usize) -> &[f64] {
        if n == 0 {
            &self.initial
        } else {
            &self.columns[n * self.stages_per_step - 1]
        }
    }

    pub fn final_state(&self) -> HydroState {
        let n = self.num_steps();
        HydroState::from_flat(self.nv, self.ne, self.step_state(n), self.step_times[n]).expect("consistent sizes")
    }
}

/// Runs the full-order model from `state0` to `t_final`, recording all stages.
pub fn simulate(
    hydro: &Hydro,
    scheme: Scheme,
    state0: &HydroState,
    opts: &RunOptions,
    dt_init: Option<f64>,
    param: f64,
) -> Result<(Trajectory, RunSummary<HydroState>)> {
    let mut stepper = FomStepper { hydro, scheme };
    let dt0 = match dt_init {
        Some(d) => d,
        None => initial_dt(&mut stepper, state0, opts)?,
    };
    let mut traj = Trajectory::new(hydro.nv(), hydro.ne(), scheme.stages(), param, state0);
    let control = hydro.control;
    let summary = run_adaptive(&mut stepper, state0, opts, &control, dt0, |acc| traj.record(acc))?;
    Ok((traj, summary))
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"LGRM";
const SNAPSHOT_VERSION: u32 = 1;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

/// Writes columns of `(v; e; x)` in the snapshot binary layout.
pub fn write_state_columns(path: &Path, nv: usize, ne: usize, columns: &[Vec<f64>]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    let mut write = || -> std::io::Result<()> {
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        w.write_all(&(nv as u64).to_le_bytes())?;
        w.write_all(&(ne as u64).to_le_bytes())?;
        w.write_all(&(columns.len() as u64).to_le_bytes())?;
        for c in columns {
            for v in c {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    };
    write().map_err(|e| io_err(path, e))
}

/// Reads a snapshot binary file; returns `(Nv, Ne, columns)`.
pub fn read_state_columns(path: &Path) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    let f = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(f);
    let fmt = |reason: &str| Error::Format { path: path.display().to_string(), reason: reason.to_string() };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(fmt("bad magic"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(|e| io_err(path, e))?;
    if u32::from_le_bytes(b4) != SNAPSHOT_VERSION {
        return Err(fmt("unsupported version"));
    }
    let mut read_u64 = || -> Result<u64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(|e| io_err(path, e))?;
        Ok(u64::from_le_bytes(b))
    };
    let nv = read_u64()? as usize;
    let ne = read_u64()? as usize;
    let ncols = read_u64()? as usize;
    let len = 2 * nv + ne;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| io_err(path, e))?;
    if bytes.len() != ncols * len * 8 {
        return Err(fmt("payload length does not match header"));
    }
    let mut cols = Vec::with_capacity(ncols);
    for c in 0..ncols {
        let col = (0..len)
            .map(|i| {
                let o = (c * len + i) * 8;
                f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"))
            })
            .collect();
        cols.push(col);
    }
    Ok((nv, ne, cols))
}

impl Trajectory {
    /// Writes `<stem>.bin` (stage columns), `<stem>.idx` (column index) and
    /// `<stem>.init.bin` (initial state).
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        write_state_columns(&dir.join(format!("{stem}.bin")), self.nv, self.ne, &self.columns)?;
        write_state_columns(&dir.join(format!("{stem}.init.bin")), self.nv, self.ne, std::slice::from_ref(&self.initial))?;
        let p = dir.join(format!("{stem}.idx"));
        let f = std::fs::File::create(&p).map_err(|e| io_err(&p, e))?;
        let mut w = BufWriter::new(f);
        let mut write = || -> std::io::Result<()> {
            writeln!(w, "# stages {} steps {} t0 {:.17e}", self.stages_per_step, self.num_steps(), self.step_times[0])?;
            writeln!(w, "# col step stage time param")?;
            for (c, m) in self.meta.iter().enumerate() {
                writeln!(w, "{c} {} {} {:.17e} {:.17e}", m.step, m.stage, m.time, m.param)?;
            }
            w.flush()
        };
        write().map_err(|e| io_err(&p, e))
    }

    pub fn read(dir: &Path, stem: &str) -> Result<Self> {
        let (nv, ne, columns) = read_state_columns(&dir.join(format!("{stem}.bin")))?;
        let (_, _, mut init) = read_state_columns(&dir.join(format!("{stem}.init.bin")))?;
        let p = dir.join(format!("{stem}.idx"));
        let fmt = |reason: String| Error::Format { path: p.display().to_string(), reason };
        let f = std::fs::File::open(&p).map_err(|e| io_err(&p, e))?;
        let mut stages = 0usize;
        let mut t0 = 0.0;
        let mut meta = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| io_err(&p, e))?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.first() == Some(&"#") {
                if toks.get(1) == Some(&"stages") && toks.len() >= 7 {
                    stages = toks[2].parse().map_err(|_| fmt("bad stage count".into()))?;
                    t0 = toks[6].parse().map_err(|_| fmt("bad initial time".into()))?;
                }
                continue;
            }
            if toks.len() != 5 {
                return Err(fmt(format!("bad index line '{line}'")));
            }
            let parse = |s: &str| s.parse::<f64>().map_err(|_| fmt(format!("bad number '{s}'")));
            meta.push(ColumnMeta {
                step: toks[1].parse().map_err(|_| fmt("bad step".into()))?,
                stage: toks[2].parse().map_err(|_| fmt("bad stage".into()))?,
                time: parse(toks[3])?,
                param: parse(toks[4])?,
            });
        }
        if stages == 0 || meta.len() != columns.len() || columns.len() % stages != 0 {
            return Err(fmt("index does not match snapshot columns".into()));
        }
        let param = meta.first().map(|m| m.param).unwrap_or(0.0);
        let mut step_times = vec![t0];
        step_times.extend(meta.iter().filter(|m| m.stage + 1 == stages).map(|m| m.time));
        Ok(Self { nv, ne, stages_per_step: stages, param, initial: init.remove(0), columns, meta, step_times })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eos_cases() {
        let p = eos_pressure(&[1.0, 1.0, 2.0], &[2.0, 0.0, 1.0], &[1.4, 1.4, 5.0 / 3.0]);
        assert!((p[0] - 0.8).abs() < 1e-15);
        assert_eq!(p[1], 0.0);
        assert!((p[2] - 4.0 / 3.0).abs() < 1e-15);
    }

    /// Stepper with a constant estimate and state = time.
    struct ConstEst {
        est: f64,
        attempts: Vec<f64>,
    }

    impl TimeStepper for ConstEst {
        type State = f64;
        fn time(&self, s: &f64) -> f64 {
            *s
        }
        fn set_time(&self, s: &mut f64, t: f64) {
            *s = t;
        }
        fn estimate_dt(&mut self, _: &f64) -> Result<f64> {
            Ok(self.est)
        }
        fn step(&mut self, s: &f64, dt: f64) -> Result<StepOutcome<f64>> {
            self.attempts.push(dt);
            Ok(StepOutcome { stages: vec![s + dt], dt_est: self.est })
        }
    }

    fn opts(t_end: f64) -> RunOptions {
        RunOptions { t_end, dt_max: 10.0, dt_min: 1e-14, fixed_dt: None, max_steps: None, window: None }
    }

    #[test]
    fn controller_redo_on_large_step() {
        let mut s = ConstEst { est: 0.5, attempts: vec![] };
        let o = RunOptions { max_steps: Some(1), ..opts(100.0) };
        run_adaptive(&mut s, &0.0, &o, &TimeControlParams::default(), 1.0, |_| {}).unwrap();
        assert_eq!(s.attempts[0], 1.0);
        assert!((s.attempts[1] - 0.85).abs() < 1e-15);
        // 0.85 still >= 0.5: shrink again to 0.7225, then 0.614125, then 0.52200625, then 0.4437...
        assert!(s.attempts.last().copied().unwrap() < 0.5);
    }

    #[test]
    fn controller_grows_when_well_below_estimate() {
        let mut s = ConstEst { est: 0.5, attempts: vec![] };
        let o = RunOptions { max_steps: Some(2), ..opts(100.0) };
        let sum = run_adaptive(&mut s, &0.0, &o, &TimeControlParams::default(), 0.3, |_| {}).unwrap();
        assert_eq!(s.attempts[0], 0.3);
        assert!((s.attempts[1] - 0.306).abs() < 1e-15);
        assert_eq!(sum.redos, 0);
    }

    #[test]
    fn controller_keeps_dt_between_gamma_and_one() {
        let mut s = ConstEst { est: 0.5, attempts: vec![] };
        let o = RunOptions { max_steps: Some(5), ..opts(100.0) };
        run_adaptive(&mut s, &0.0, &o, &TimeControlParams::default(), 0.45, |_| {}).unwrap();
        assert!(s.attempts.iter().all(|&d| d == 0.45));
    }

    #[test]
    fn controller_clips_final_step_and_never_accepts_above_estimate() {
        let mut s = ConstEst { est: 0.3, attempts: vec![] };
        let mut accepted = vec![];
        let sum = run_adaptive(&mut s, &0.0, &opts(1.0), &TimeControlParams::default(), 0.25, |a| {
            accepted.push(a.dt)
        })
        .unwrap();
        assert_eq!(sum.state, 1.0);
        assert!(accepted.iter().all(|&d| d < 0.3));
        assert!((accepted.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn controller_vanishing_step() {
        let mut s = ConstEst { est: 1e-20, attempts: vec![] };
        let err = run_adaptive(&mut s, &0.0, &opts(1.0), &TimeControlParams::default(), 0.1, |_| {}).unwrap_err();
        assert!(err.to_string().contains("vanishing time step"));
    }

    #[test]
    fn rk4_generic_exponential_decay() {
        let (y, _) = rk4_generic(&[1.0], 0.1, |y| Ok(vec![-y[0]])).unwrap();
        assert!((y[0] - (-0.1f64).exp()).abs() < 1e-7);
    }
}
