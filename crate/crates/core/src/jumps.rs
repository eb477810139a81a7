//! Stochastic jumps between grid configurations.
//!
//! Rates are computed in the occupation-number basis, where a grid
//! configuration is an [`Atom`]. For a source `q'` and destination `q`
//! connected by a matrix element `H(q, q')`,
//!
//! ```text
//! J(q, q')     = (2/hbar) Im( conj(c(q)) H(q, q') c(q') )
//! sigma(q|q')  = max(J(q, q'), 0) / |c(q')|^2
//! ```
//!
//! with `c` the occupation-basis amplitudes and `|c(q')|^2` the probability of
//! the atom. In continuum mode only the interaction part drives jumps; in
//! lattice mode the full Hamiltonian does, and free motion becomes hops.

use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fockgrid::{
    permutations, pv_expectation, pv_project, Atom, ConfigRegion, Configuration, FockVector, GridSpec, GuidingState,
};
use crate::model::{HamiltonianPart, Move, OperatorBlocks};

/// Largest admissible jump probability per step, `Lambda * dt`.
pub const STEP_GUARD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JumpKind {
    Creation,
    Annihilation,
    Hop,
}

impl From<Move> for JumpKind {
    fn from(m: Move) -> Self {
        match m {
            Move::Creation { .. } => JumpKind::Creation,
            Move::Annihilation { .. } => JumpKind::Annihilation,
            Move::Hop { .. } => JumpKind::Hop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Destination {
    pub atom: Atom,
    pub movement: Move,
    pub rate: f64,
}

impl Destination {
    pub fn kind(&self) -> JumpKind {
        self.movement.into()
    }

    /// Realizes the jump on a concrete configuration. Created particles are
    /// appended at the site position. For annihilation and hops the moved
    /// particle is drawn uniformly among those snapped to the site.
    pub fn apply<R: Rng + ?Sized>(&self, q: &Configuration, grid: &GridSpec, rng: &mut R) -> Configuration {
        let pick = |site: usize, rng: &mut R| {
            let candidates: Vec<usize> = (0..q.len())
                .filter(|&i| grid.nearest_site(q.positions()[i]) == site)
                .collect();
            assert!(!candidates.is_empty(), "no particle at site {site}");
            candidates[rng.random_range(0..candidates.len())]
        };
        let mut positions = q.positions().to_vec();
        match self.movement {
            Move::Creation { site } => positions.push(grid.site_position(site)),
            Move::Annihilation { site } => {
                let i = pick(site, rng);
                positions.remove(i);
            }
            Move::Hop { from, to } => {
                let i = pick(from, rng);
                positions[i] = grid.site_position(to);
            }
        }
        Configuration::from_positions_unchecked(positions)
    }
}

/// Jump rates out of one grid configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateKernelRow {
    pub source: Atom,
    pub destinations: Vec<Destination>,
    pub total_rate: f64,
}

impl RateKernelRow {
    pub fn rate_to(&self, atom: &Atom) -> f64 {
        self.destinations
            .iter()
            .filter(|d| &d.atom == atom)
            .map(|d| d.rate)
            .sum()
    }
}

fn node_at(atom: &Atom, grid: &GridSpec) -> Error {
    Error::Node {
        time: None,
        positions: atom.sites().iter().map(|&k| grid.site_position(k)).collect(),
    }
}

fn imaginary_flux(hbar: f64, to: Complex64, element: f64, from: Complex64) -> f64 {
    2.0 / hbar * (to.conj() * element * from).im
}

/// Rates out of the grid configuration `source` generated by `part`.
pub fn atom_rates(
    guide: &GuidingState,
    ops: &OperatorBlocks,
    source: &Atom,
    part: HamiltonianPart,
) -> Result<RateKernelRow> {
    let psi = guide.psi();
    if guide.is_node(source.sites()) {
        return Err(node_at(source, psi.grid()));
    }
    let c_src = psi.atom_amplitude(source);
    let rho = c_src.norm_sqr();
    let destinations: Vec<Destination> = ops
        .transitions(source, part)
        .into_iter()
        .map(|t| {
            let j = imaginary_flux(ops.hbar(), psi.atom_amplitude(&t.to), t.element, c_src);
            Destination {
                atom: t.to,
                movement: t.movement,
                rate: j.max(0.0) / rho,
            }
        })
        .collect();
    let total_rate = destinations.iter().map(|d| d.rate).sum();
    Ok(RateKernelRow {
        source: source.clone(),
        destinations,
        total_rate,
    })
}

/// Continuum-mode rates: the configuration is snapped to its nearest grid
/// configuration and only the interaction creates or annihilates.
pub fn jump_rates(guide: &GuidingState, ops: &OperatorBlocks, q_prime: &Configuration) -> Result<RateKernelRow> {
    atom_rates(
        guide,
        ops,
        &q_prime.atom(guide.psi().grid()),
        HamiltonianPart::Interaction,
    )
}

/// Lattice-mode rates from the full Hamiltonian. `q_prime` must lie on the grid.
pub fn lattice_rates(guide: &GuidingState, ops: &OperatorBlocks, q_prime: &Configuration) -> Result<RateKernelRow> {
    let grid = guide.psi().grid();
    let tol = 1e-9 * grid.spacing();
    for &x in q_prime.positions() {
        let k = grid.nearest_site(x);
        if grid.displacement(grid.site_position(k), x).abs() > tol {
            return Err(Error::validation(
                "configuration",
                format!("position {x} is not a grid site"),
            ));
        }
    }
    atom_rates(guide, ops, &q_prime.atom(grid), HamiltonianPart::Full)
}

fn element_between(ops: &OperatorBlocks, to: &Atom, from: &Atom, part: HamiltonianPart) -> Option<f64> {
    let total: f64 = ops
        .transitions(from, part)
        .into_iter()
        .filter(|t| &t.to == to)
        .map(|t| t.element)
        .sum();
    (total != 0.0).then_some(total)
}

/// `sigma(q|q') rho(q') - sigma(q'|q) rho(q)` from the two rate rows. A side
/// whose source is a node contributes nothing (its outgoing flux vanishes
/// with the amplitude).
pub fn net_flux(
    guide: &GuidingState,
    ops: &OperatorBlocks,
    part: HamiltonianPart,
    q: &Atom,
    q_prime: &Atom,
) -> Result<f64> {
    if element_between(ops, q, q_prime, part).is_none() {
        return Err(Error::validation(
            "pair",
            format!("{q:?} and {q_prime:?} are not connected"),
        ));
    }
    let psi = guide.psi();
    let one_way = |to: &Atom, from: &Atom| -> Result<f64> {
        match atom_rates(guide, ops, from, part) {
            Ok(row) => Ok(row.rate_to(to) * psi.atom_amplitude(from).norm_sqr()),
            Err(Error::Node { .. }) => Ok(0.0),
            Err(e) => Err(e),
        }
    };
    Ok(one_way(q, q_prime)? - one_way(q_prime, q)?)
}

/// `(2/hbar) Im <Psi|P(q) H P(q')|Psi>` evaluated directly on the tuple
/// representation, summing over all orderings of both configurations.
pub fn matrix_element_flux(
    psi: &FockVector,
    ops: &OperatorBlocks,
    part: HamiltonianPart,
    q: &Atom,
    q_prime: &Atom,
) -> f64 {
    let space = psi.space();
    let h = ops.part(part);
    let coords_at = |sites: &[usize]| {
        let n = sites.len();
        psi.amplitude(sites) * space.weight(n).sqrt()
    };
    let targets: Vec<(usize, Complex64)> = permutations(q.sites())
        .into_iter()
        .map(|t| (space.flat_index(&t), coords_at(&t)))
        .collect();
    let mut acc = Complex64::new(0.0, 0.0);
    for s in permutations(q_prime.sites()) {
        let col = space.flat_index(&s);
        let psi_s = coords_at(&s);
        for &(row, psi_t) in &targets {
            let element = h.get(row, col);
            if element != 0.0 {
                acc += psi_t.conj() * element * psi_s;
            }
        }
    }
    2.0 / ops.hbar() * acc.im
}

/// Rates written with the projection-valued measure,
/// `(2/hbar) [Im <Psi|P(dq) H P(dq')|Psi>]^+ / <Psi|P(dq')|Psi>`, for every
/// destination reachable from `source`.
pub fn pv_rates(
    guide: &GuidingState,
    ops: &OperatorBlocks,
    source: &Atom,
    part: HamiltonianPart,
) -> Result<Vec<(Atom, f64)>> {
    let psi = guide.psi();
    let space = *psi.space();
    let region = ConfigRegion::from_atoms(&space, [source]);
    let mass = pv_expectation(psi, &region);
    let n = source.sector();
    if mass <= guide.floor(n) * space.weight(n) * source.orderings() {
        return Err(node_at(source, psi.grid()));
    }
    let h_projected = ops.apply(part, &pv_project(psi, &region));
    let mut out: Vec<(Atom, f64)> = Vec::new();
    for t in ops.transitions(source, part) {
        if out.iter().any(|(a, _)| a == &t.to) {
            continue;
        }
        let dest = pv_project(psi, &ConfigRegion::from_atoms(&space, [&t.to]));
        let flux = 2.0 / ops.hbar() * dest.inner(&h_projected).im;
        out.push((t.to, flux.max(0.0) / mass));
    }
    Ok(out)
}

/// Bernoulli thinning over one step: with probability `Lambda * dt` a jump
/// happens, its destination drawn with probability proportional to its rate.
pub fn sample_jump<'a, R: Rng + ?Sized>(
    row: &'a RateKernelRow,
    dt: f64,
    time: f64,
    rng: &mut R,
) -> Result<Option<&'a Destination>> {
    let p = row.total_rate * dt;
    if p > STEP_GUARD {
        return Err(Error::StepGuard {
            time,
            total_rate: row.total_rate,
            dt,
            limit: STEP_GUARD,
        });
    }
    if p == 0.0 || rng.random::<f64>() >= p {
        return Ok(None);
    }
    let mut target = rng.random::<f64>() * row.total_rate;
    let mut last = None;
    for d in row.destinations.iter().filter(|d| d.rate > 0.0) {
        if target < d.rate {
            return Ok(Some(d));
        }
        target -= d.rate;
        last = Some(d);
    }
    Ok(last)
}
