//! Benchmark initial conditions: Gresho vortex, Sedov blast and the 2D
//! Taylor–Green vortex.

use crate::fom::{Hydro, HydroState, TimeControlParams, ViscosityParams};
use crate::mesh_fem::{
    assemble_mass, build_cartesian_mesh, det2, gather_zone_coords, jacobian_at, ref_element, BoxDomain, Mesh,
};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Gresho,
    Sedov,
    TaylorGreen,
}

impl std::str::FromStr for ProblemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gresho" | "1" => Ok(Self::Gresho),
            "sedov" | "0" => Ok(Self::Sedov),
            "taylor_green" | "taylor-green" | "tg" | "2" => Ok(Self::TaylorGreen),
            _ => Err(Error::invalid(format!("unknown problem '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub gamma: f64,
    /// Sedov energy factor (`e(origin) = 0.25 μ`); ignored otherwise.
    pub mu: f64,
    pub domain: BoxDomain,
    pub use_viscosity: bool,
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind) -> Self {
        match kind {
            ProblemKind::Gresho => Self {
                kind,
                gamma: 5.0 / 3.0,
                mu: 1.0,
                domain: BoxDomain { x0: -0.5, y0: -0.5, x1: 0.5, y1: 0.5 },
                use_viscosity: false,
            },
            ProblemKind::Sedov => Self { kind, gamma: 1.4, mu: 1.0, domain: BoxDomain::UNIT, use_viscosity: true },
            ProblemKind::TaylorGreen => {
                Self { kind, gamma: 5.0 / 3.0, mu: 1.0, domain: BoxDomain::UNIT, use_viscosity: true }
            }
        }
    }

    pub fn sedov(mu: f64) -> Self {
        Self { mu, ..Self::new(ProblemKind::Sedov) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 1.0) {
            return Err(Error::invalid(format!("adiabatic index {} must exceed 1", self.gamma)));
        }
        if !(self.mu > 0.0) {
            return Err(Error::invalid(format!("problem parameter {} must be positive", self.mu)));
        }
        Ok(())
    }
}

/// Gresho angular velocity profile.
pub fn gresho_angular_velocity(r: f64) -> f64 {
    if r < 0.2 {
        5.0 * r
    } else if r < 0.4 {
        2.0 - 5.0 * r
    } else {
        0.0
    }
}

/// Gresho pressure profile (continuous at both breaks).
pub fn gresho_pressure(r: f64) -> f64 {
    if r < 0.2 {
        5.0 + 12.5 * r * r
    } else if r < 0.4 {
        9.0 - 4.0 * 0.2f64.ln() + 12.5 * r * r - 20.0 * r + 4.0 * r.ln()
    } else {
        3.0 + 4.0 * 2f64.ln()
    }
}

pub fn taylor_green_velocity(x: f64, y: f64) -> [f64; 2] {
    use std::f64::consts::PI;
    [(PI * x).sin() * (PI * y).cos(), -(PI * x).cos() * (PI * y).sin()]
}

/// Pressure on the `z = 0` section, where `cos(2πz) + 2 = 3`.
pub fn taylor_green_pressure(x: f64, y: f64) -> f64 {
    use std::f64::consts::PI;
    100.0 + ((2.0 * PI * x).cos() + (2.0 * PI * y).cos()) * 3.0 / 16.0 - 2.0 / 16.0
}

/// Builds the discretized model and its initial state.
pub fn setup(spec: &ProblemSpec, nx: usize, ny: usize, control: TimeControlParams) -> Result<(Hydro, HydroState)> {
    spec.validate()?;
    let mesh = build_cartesian_mesh(nx, ny, spec.domain)?;
    let rho = vec![1.0; mesh.num_zones()];
    let mass = assemble_mass(&mesh, &rho)?;
    let gamma = vec![spec.gamma; mesh.num_zones()];
    let visc = spec.use_viscosity.then(ViscosityParams::default);
    let hydro = Hydro::new(mesh, mass, gamma, visc, control)?;
    let state = initial_state(spec, &hydro)?;
    Ok((hydro, state))
}

pub fn initial_state(spec: &ProblemSpec, hydro: &Hydro) -> Result<HydroState> {
    match spec.kind {
        ProblemKind::Gresho => Ok(gresho_initial(hydro, spec.gamma)),
        ProblemKind::Sedov => sedov_initial(hydro, spec.mu),
        ProblemKind::TaylorGreen => Ok(taylor_green_initial(hydro, spec.gamma)),
    }
}

/// Zone energies from a pressure field: Gauss-point average of `p / ((γ-1)ρ)`.
fn energy_from_pressure(hydro: &Hydro, rho: f64, gamma: f64, p: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let mesh = &hydro.mesh;
    let x = mesh.initial_positions();
    let re = ref_element();
    (0..mesh.num_zones())
        .map(|z| {
            let xl = gather_zone_coords(mesh, &x, z);
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for q in 0..4 {
                let (mut px, mut py) = (0.0, 0.0);
                for a in 0..4 {
                    px += re.shape[q][a] * xl[a][0];
                    py += re.shape[q][a] * xl[a][1];
                }
                let w = re.weights[q] * det2(&jacobian_at(&xl, q));
                acc += w * p(px, py);
                wsum += w;
            }
            acc / wsum / ((gamma - 1.0) * rho)
        })
        .collect()
}

fn nodal_velocity(mesh: &Mesh, f: impl Fn(f64, f64) -> [f64; 2]) -> Vec<f64> {
    let nn = mesh.num_nodes();
    let mut v = vec![0.0; 2 * nn];
    for a in 0..nn {
        let p = mesh.node(a);
        let u = f(p[0], p[1]);
        v[a] = u[0];
        v[nn + a] = u[1];
    }
    for (vi, m) in v.iter_mut().zip(mesh.essential_mask()) {
        if m {
            *vi = 0.0;
        }
    }
    v
}

pub fn gresho_initial(hydro: &Hydro, gamma: f64) -> HydroState {
    let mesh = &hydro.mesh;
    let v = nodal_velocity(mesh, |x, y| {
        let r = (x * x + y * y).sqrt();
        if r == 0.0 {
            return [0.0, 0.0];
        }
        let s = gresho_angular_velocity(r) / r;
        [-y * s, x * s]
    });
    let e = energy_from_pressure(hydro, 1.0, gamma, |x, y| gresho_pressure((x * x + y * y).sqrt()));
    HydroState { v, e, x: mesh.initial_positions(), t: 0.0 }
}

/// Cold gas at rest with the energy `0.25 μ` deposited in the zone touching
/// the origin corner.
pub fn sedov_initial(hydro: &Hydro, mu: f64) -> Result<HydroState> {
    let mesh = &hydro.mesh;
    let origin = sedov_origin_zone(mesh)?;
    let mut e = vec![0.0; mesh.num_zones()];
    e[origin] = 0.25 * mu / hydro.mass.me_diag()[origin];
    Ok(HydroState { v: vec![0.0; mesh.nv()], e, x: mesh.initial_positions(), t: 0.0 })
}

pub fn sedov_origin_zone(mesh: &Mesh) -> Result<usize> {
    (0..mesh.num_zones())
        .find(|&z| {
            mesh.zone(z).iter().any(|&a| {
                let p = mesh.node(a);
                p[0] == 0.0 && p[1] == 0.0
            })
        })
        .ok_or_else(|| Error::invalid("Sedov mesh must contain the origin as a node"))
}

pub fn taylor_green_initial(hydro: &Hydro, gamma: f64) -> HydroState {
    let mesh = &hydro.mesh;
    let v = nodal_velocity(mesh, taylor_green_velocity);
    let e = energy_from_pressure(hydro, 1.0, gamma, taylor_green_pressure);
    HydroState { v, e, x: mesh.initial_positions(), t: 0.0 }
}
