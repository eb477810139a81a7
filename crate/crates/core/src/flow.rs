//! Deterministic motion between jumps: the guided velocity field in every
//! sector and its integration in time.
//!
//! Three evaluations of the same velocity are provided. [`velocity_bohm`] is
//! the gradient formula used by the simulator; [`velocity_commutator`]
//! evaluates `Re conj(Psi) (i/hbar)[H0, f] Psi / |Psi|^2` for coordinate
//! charts `f`; [`velocity_pv`] computes the same quantity through the
//! projection-valued measure. With central differences matching the 3-point
//! Laplacian the three agree exactly on grid configurations.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fockgrid::{pv_expectation, pv_project, ConfigRegion, Configuration, FockVector, GridSpec, GuidingState};
use crate::model::OperatorBlocks;
use crate::propagator::PsiMesh;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    pub mass: f64,
    pub hbar: f64,
}

impl From<&OperatorBlocks> for FlowParams {
    fn from(ops: &OperatorBlocks) -> Self {
        FlowParams {
            mass: ops.mass(),
            hbar: ops.hbar(),
        }
    }
}

/// Free one-particle dynamics that could be second-quantized into `H0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreeDynamics {
    Schrodinger,
    Dirac,
    KleinGordon,
}

/// Whether the commutator formula defines a velocity field for `dynamics`.
pub fn velocity_law(dynamics: FreeDynamics) -> Result<()> {
    match dynamics {
        FreeDynamics::Schrodinger | FreeDynamics::Dirac => Ok(()),
        FreeDynamics::KleinGordon => Err(Error::Unsupported(
            "Klein-Gordon dynamics: the free Hamiltonian sqrt(m^2 c^4 - c^2 hbar^2 Laplacian) is not a \
             differential operator of order <= 2, so the commutator formula is not of the form \
             v . grad f and defines no velocity field"
                .into(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VelocityEval {
    pub sector: usize,
    /// One component per particle, in the configuration's particle order.
    pub velocity: Vec<f64>,
}

fn node_error(positions: Vec<f64>) -> Error {
    Error::Node { time: None, positions }
}

fn tuple_component(psi: &FockVector, params: &FlowParams, sites: &mut [usize], i: usize) -> f64 {
    let grid = psi.grid();
    let center = psi.amplitude(sites);
    let orig = sites[i];
    sites[i] = grid.neighbor(orig, 1);
    let up = psi.amplitude(sites);
    sites[i] = grid.neighbor(orig, -1);
    let down = psi.amplitude(sites);
    sites[i] = orig;
    let grad = (up - down) / (2.0 * grid.spacing());
    params.hbar / params.mass * (center.conj() * grad).im / center.norm_sqr()
}

/// `(hbar/m) Im(conj(Psi) grad_i Psi) / |Psi|^2` at an ordered grid tuple,
/// with central-difference gradients.
pub fn grid_velocity(guide: &GuidingState, params: &FlowParams, sites: &[usize]) -> Result<Vec<f64>> {
    if guide.is_node(sites) {
        let grid = guide.psi().grid();
        return Err(node_error(sites.iter().map(|&k| grid.site_position(k)).collect()));
    }
    let mut scratch = sites.to_vec();
    Ok((0..sites.len())
        .map(|i| tuple_component(guide.psi(), params, &mut scratch, i))
        .collect())
}

/// Velocity at a continuum configuration: the grid velocity field of its
/// sector, multilinearly interpolated from the `2^n` surrounding grid
/// configurations. Corners at nodes are left out and the remaining weights
/// renormalized; if every corner is a node the configuration is at a node.
pub fn velocity_bohm(guide: &GuidingState, params: &FlowParams, q: &Configuration) -> Result<VelocityEval> {
    let psi = guide.psi();
    let grid = psi.grid();
    let n = q.len();
    let a = grid.spacing();
    let mut base = Vec::with_capacity(n);
    let mut frac = Vec::with_capacity(n);
    for &x in q.positions() {
        let s = grid.wrap_position(x) / a;
        let fl = s.floor();
        base.push(fl as usize % grid.n_sites());
        frac.push(s - fl);
    }
    let mut corner = vec![0usize; n];
    let mut acc = vec![0.0; n];
    let mut weight_sum = 0.0;
    let mut valid = 0usize;
    let mut unweighted = vec![0.0; n];
    for bits in 0..(1usize << n) {
        let mut w = 1.0;
        for i in 0..n {
            let up = bits >> i & 1 == 1;
            corner[i] = if up { grid.neighbor(base[i], 1) } else { base[i] };
            w *= if up { frac[i] } else { 1.0 - frac[i] };
        }
        if guide.is_node(&corner) {
            continue;
        }
        valid += 1;
        for i in 0..n {
            let v = tuple_component(psi, params, &mut corner, i);
            acc[i] += w * v;
            unweighted[i] += v;
        }
        weight_sum += w;
    }
    if valid == 0 {
        return Err(node_error(q.positions().to_vec()));
    }
    let velocity = if weight_sum > 0.0 {
        acc.into_iter().map(|v| v / weight_sum).collect()
    } else {
        unweighted.into_iter().map(|v| v / valid as f64).collect()
    };
    Ok(VelocityEval { sector: n, velocity })
}

/// `Re conj(Psi(q)) ((i/hbar)[H0, f] Psi)(q) / |Psi(q)|^2` at a grid
/// configuration, for a function `f` on the sector of `sites`.
pub fn rate_of_change(
    guide: &GuidingState,
    ops: &OperatorBlocks,
    sites: &[usize],
    f: impl Fn(&[usize]) -> f64,
) -> Result<f64> {
    let psi = guide.psi();
    if guide.is_node(sites) {
        let grid = psi.grid();
        return Err(node_error(sites.iter().map(|&k| grid.site_position(k)).collect()));
    }
    let space = psi.space();
    let n = sites.len();
    let offset = space.offset(n);
    let row = space.flat_index(sites);
    let f_here = f(sites);
    let mut other = vec![0; n];
    let mut commutator = Complex64::new(0.0, 0.0);
    for (col, h) in ops.h0().row(row) {
        space.decode_into(col - offset, &mut other);
        commutator += h * (f(&other) - f_here) * psi.as_slice()[col];
    }
    let center = psi.amplitude(sites);
    let i_over_hbar = Complex64::new(0.0, 1.0 / ops.hbar());
    Ok((center.conj() * i_over_hbar * commutator).re / center.norm_sqr())
}

/// Local coordinate chart of particle `i` centred on the grid configuration
/// `sites`: the minimum-image displacement of coordinate `i`.
fn coordinate_chart<'a>(grid: &'a GridSpec, sites: &[usize], i: usize) -> impl Fn(&[usize]) -> f64 + 'a {
    let origin = grid.site_position(sites[i]);
    move |t: &[usize]| grid.displacement(origin, grid.site_position(t[i]))
}

/// Velocity from the commutator formula with coordinate charts as `f`.
pub fn velocity_commutator(guide: &GuidingState, ops: &OperatorBlocks, sites: &[usize]) -> Result<VelocityEval> {
    let grid = guide.psi().grid();
    let velocity = (0..sites.len())
        .map(|i| rate_of_change(guide, ops, sites, coordinate_chart(grid, sites, i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(VelocityEval {
        sector: sites.len(),
        velocity,
    })
}

/// The commutator velocity written with the projection-valued measure:
/// `Re <Psi|P(dq) (i/hbar)[H0, f]|Psi> / <Psi|P(dq)|Psi>` with `dq` the
/// single grid configuration `sites`.
pub fn velocity_pv(guide: &GuidingState, ops: &OperatorBlocks, sites: &[usize]) -> Result<VelocityEval> {
    let psi = guide.psi();
    let space = *psi.space();
    let grid = *space.grid();
    let n = sites.len();
    let region = ConfigRegion::from_tuples(&space, [sites]);
    let mass = pv_expectation(psi, &region);
    if mass <= guide.floor(n) * space.weight(n) {
        return Err(node_error(sites.iter().map(|&k| grid.site_position(k)).collect()));
    }
    let projected = pv_project(psi, &region);
    let h_psi = ops.apply_h0(psi);
    let mut velocity = Vec::with_capacity(n);
    for i in 0..n {
        let chart = coordinate_chart(&grid, sites, i);
        let multiply = |v: &FockVector| {
            let mut out = v.clone();
            let mut t = vec![0; n];
            for (idx, z) in out.block_mut(n).iter_mut().enumerate() {
                space.decode_into(idx, &mut t);
                *z *= chart(&t);
            }
            for m in (0..=space.n_max()).filter(|&m| m != n) {
                out.block_mut(m).iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            }
            out
        };
        let h_f_psi = ops.apply_h0(&multiply(psi));
        let f_h_psi = multiply(&h_psi);
        let i_over_hbar = Complex64::new(0.0, 1.0 / ops.hbar());
        let commutator = FockVector::from_flat(
            space,
            h_f_psi
                .as_slice()
                .iter()
                .zip(f_h_psi.as_slice())
                .map(|(a, b)| i_over_hbar * (a - b))
                .collect(),
        )?;
        velocity.push(projected.inner(&commutator).re / mass);
    }
    Ok(VelocityEval { sector: n, velocity })
}

/// One explicit midpoint (RK2) step: velocity from `start` at `q`, then from
/// `mid` at the half-step point. Positions wrap periodically.
pub fn midpoint_step(
    start: &GuidingState,
    mid: &GuidingState,
    params: &FlowParams,
    q: &Configuration,
    dt: f64,
) -> Result<Configuration> {
    let grid = *start.psi().grid();
    let v1 = velocity_bohm(start, params, q)?;
    let half = Configuration::from_positions_unchecked(
        q.positions()
            .iter()
            .zip(&v1.velocity)
            .map(|(x, v)| grid.wrap_position(x + 0.5 * dt * v))
            .collect(),
    );
    let v2 = velocity_bohm(mid, params, &half)?;
    Ok(Configuration::from_positions_unchecked(
        q.positions()
            .iter()
            .zip(&v2.velocity)
            .map(|(x, v)| grid.wrap_position(x + dt * v))
            .collect(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSegment {
    pub times: Vec<f64>,
    pub configurations: Vec<Configuration>,
}

/// Integrates `dQ/dt = v(Q)` from `t0` to `t1` with the midpoint rule. The
/// step is twice the mesh spacing, so both `t0` and `t1` must lie on the mesh
/// an even number of mesh points apart.
pub fn integrate_flow(
    mesh: &PsiMesh,
    params: &FlowParams,
    q0: &Configuration,
    t0: f64,
    t1: f64,
) -> Result<PathSegment> {
    if t1 <= t0 {
        return Err(Error::validation("t1", "must exceed t0"));
    }
    let j0 = mesh
        .index_of(t0)
        .ok_or_else(|| Error::validation("t0", "not on the state mesh"))?;
    let j1 = mesh
        .index_of(t1)
        .ok_or_else(|| Error::validation("t1", "not on the state mesh"))?;
    if (j1 - j0) % 2 != 0 {
        return Err(Error::validation("t1", "must be a whole number of flow steps after t0"));
    }
    let dt = 2.0 * mesh.step();
    let mut q = q0.clone();
    let mut times = vec![t0];
    let mut configurations = vec![q.clone()];
    for j in (j0..j1).step_by(2) {
        q = midpoint_step(mesh.guide(j), mesh.guide(j + 1), params, &q, dt).map_err(|e| match e {
            Error::Node { positions, .. } => Error::Node {
                time: Some(mesh.time(j)),
                positions,
            },
            other => other,
        })?;
        times.push(mesh.time(j + 2));
        configurations.push(q.clone());
    }
    Ok(PathSegment { times, configurations })
}

fn dirac_site_velocity(spinor: &[Complex64], c: f64, k: usize) -> (f64, f64) {
    let (up, down) = (spinor[2 * k], spinor[2 * k + 1]);
    let rho = up.norm_sqr() + down.norm_sqr();
    // psi^† sigma_x psi = 2 Re(conj(up) down)
    (c * 2.0 * (up.conj() * down).re / rho, rho)
}

/// `c psi^† alpha psi / psi^† psi` for a two-component spinor field
/// (interleaved, index `2k + s`), linearly interpolated to `x`.
pub fn velocity_dirac(spinor: &[Complex64], grid: &GridSpec, c: f64, x: f64) -> Result<f64> {
    let n = grid.n_sites();
    let mean = spinor.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
    let floor = 1e-12 * mean;
    let s = grid.wrap_position(x) / grid.spacing();
    let fl = s.floor();
    let frac = s - fl;
    let k0 = fl as usize % n;
    let k1 = grid.neighbor(k0, 1);
    let mut acc = 0.0;
    let mut wsum = 0.0;
    let mut valid = Vec::new();
    for (k, w) in [(k0, 1.0 - frac), (k1, frac)] {
        let (v, rho) = dirac_site_velocity(spinor, c, k);
        if rho > floor {
            acc += w * v;
            wsum += w;
            valid.push(v);
        }
    }
    if valid.is_empty() {
        return Err(node_error(vec![x]));
    }
    Ok(if wsum > 0.0 {
        acc / wsum
    } else {
        valid.iter().sum::<f64>() / valid.len() as f64
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiracPathPoint {
    pub t: f64,
    pub x: f64,
    pub v: f64,
}

/// Midpoint integration of a Dirac trajectory over spinor states given on a
/// uniform mesh of spacing `mesh_step` (flow step `2 * mesh_step`).
pub fn integrate_dirac_path(
    states: &[Vec<Complex64>],
    mesh_step: f64,
    grid: &GridSpec,
    c: f64,
    x0: f64,
) -> Result<Vec<DiracPathPoint>> {
    let dt = 2.0 * mesh_step;
    let mut x = grid.wrap_position(x0);
    let mut out = Vec::with_capacity(states.len() / 2 + 1);
    let with_time = |j: usize| {
        move |e: Error| match e {
            Error::Node { positions, .. } => Error::Node {
                time: Some(j as f64 * mesh_step),
                positions,
            },
            other => other,
        }
    };
    let mut j = 0;
    while j + 2 < states.len() {
        let v1 = velocity_dirac(&states[j], grid, c, x).map_err(with_time(j))?;
        out.push(DiracPathPoint {
            t: j as f64 * mesh_step,
            x,
            v: v1,
        });
        let xm = grid.wrap_position(x + 0.5 * dt * v1);
        let v2 = velocity_dirac(&states[j + 1], grid, c, xm).map_err(with_time(j + 1))?;
        x = grid.wrap_position(x + dt * v2);
        j += 2;
    }
    let v = velocity_dirac(&states[j], grid, c, x).map_err(with_time(j))?;
    out.push(DiracPathPoint {
        t: j as f64 * mesh_step,
        x,
        v,
    });
    Ok(out)
}
