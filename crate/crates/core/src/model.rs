//! The concrete field theory: a free second-quantized lattice Schrödinger
//! Hamiltonian `H0` plus a fixed smeared source that creates and absorbs
//! bosons, `H_I = g (a(phi) + a^†(phi))`. Also the single-particle 1+1-D Dirac
//! Hamiltonian used by the Dirac velocity demo.
//!
//! Fock-space operators act on orthonormal tuple coordinates (see
//! [`FockVector::to_orthonormal`]), where they are real symmetric matrices.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fockgrid::{Atom, FockSpace, FockVector, GridSpec};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ModelMode {
    #[default]
    #[serde(rename = "schrodinger_fock")]
    SchrodingerFock,
    #[serde(rename = "dirac_1p")]
    Dirac1p,
    /// Accepted by the parser so it can be rejected with an explanation.
    #[serde(rename = "klein_gordon")]
    KleinGordon,
}

/// Spatial profile of the source. Widths and centers are physical lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FormFactor {
    /// Defaults: width `2a`, centered at `L/2`.
    Gaussian {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        width: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<f64>,
    },
    /// Single-site source. Harsh in the ultraviolet: the coupling to short
    /// wavelengths is not cut off.
    Point { site: usize },
}

impl Default for FormFactor {
    fn default() -> Self {
        FormFactor::Gaussian {
            width: None,
            center: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiracParams {
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(default = "one")]
    pub c: f64,
}

impl Default for DiracParams {
    fn default() -> Self {
        DiracParams { mass: 1.0, c: 1.0 }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub grid: GridSpec,
    pub n_max: usize,
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(default = "one")]
    pub hbar: f64,
    pub coupling: f64,
    #[serde(default)]
    pub form_factor: FormFactor,
    #[serde(default)]
    pub mode: ModelMode,
    #[serde(default)]
    pub dirac: DiracParams,
}

fn positive(key: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(
            key,
            format!("must be positive and finite, got {value}"),
        ))
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        FockSpace::new(self.grid, self.n_max)?;
        positive("model.mass", self.mass)?;
        positive("model.hbar", self.hbar)?;
        if !(self.coupling.is_finite() && self.coupling >= 0.0) {
            return Err(Error::validation("model.coupling", "must be nonnegative and finite"));
        }
        match self.form_factor {
            FormFactor::Gaussian { width, center } => {
                if let Some(w) = width {
                    positive("model.form_factor.width", w)?;
                }
                if let Some(c) = center {
                    if !c.is_finite() {
                        return Err(Error::validation("model.form_factor.center", "must be finite"));
                    }
                }
            }
            FormFactor::Point { site } => {
                if site >= self.grid.n_sites() {
                    return Err(Error::validation("model.form_factor.site", "outside grid"));
                }
            }
        }
        positive("model.dirac.c", self.dirac.c)?;
        if !(self.dirac.mass.is_finite() && self.dirac.mass >= 0.0) {
            return Err(Error::validation("model.dirac.mass", "must be nonnegative and finite"));
        }
        Ok(())
    }

    pub fn space(&self) -> Result<FockSpace> {
        FockSpace::new(self.grid, self.n_max)
    }

    /// Source profile `phi(k)`, real and normalized to `sum_k a phi(k)^2 = 1`.
    pub fn profile(&self) -> Vec<f64> {
        let g = &self.grid;
        let a = g.spacing();
        let raw: Vec<f64> = match self.form_factor {
            FormFactor::Gaussian { width, center } => {
                let w = width.unwrap_or(2.0 * a);
                let c = center.unwrap_or(0.5 * g.length());
                (0..g.n_sites())
                    .map(|k| {
                        let d = g.displacement(c, g.site_position(k));
                        (-0.5 * d * d / (w * w)).exp()
                    })
                    .collect()
            }
            FormFactor::Point { site } => (0..g.n_sites()).map(|k| if k == site { 1.0 } else { 0.0 }).collect(),
        };
        let norm = (a * raw.iter().map(|p| p * p).sum::<f64>()).sqrt();
        raw.into_iter().map(|p| p / norm).collect()
    }
}

/// Initial Fock state of a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    #[default]
    Vacuum,
    /// Seeded random symmetric state with weight in every sector.
    Random { seed: u64 },
    /// `particles` bosons in the same Gaussian packet, all other sectors empty.
    Packet {
        particles: usize,
        center: f64,
        width: f64,
        #[serde(default)]
        momentum: f64,
    },
    /// Single-particle two-component spinor packet for the Dirac mode:
    /// Gaussian envelope times `e^{ipx}` times a fixed spinor `[[re, im]; 2]`.
    SpinorPacket {
        center: f64,
        width: f64,
        #[serde(default)]
        momentum: f64,
        spinor: [[f64; 2]; 2],
    },
}

impl InitialState {
    pub fn validate(&self, space: &FockSpace) -> Result<()> {
        if let InitialState::Packet {
            particles,
            center,
            width,
            momentum,
        } = *self
        {
            if particles > space.n_max() {
                return Err(Error::validation("initial_state.particles", "exceeds n_max"));
            }
            positive("initial_state.width", width)?;
            if !(center.is_finite() && momentum.is_finite()) {
                return Err(Error::validation("initial_state", "center and momentum must be finite"));
            }
        }
        Ok(())
    }

    /// Interleaved spinor field (`2k + s`) normalized to `sum a |psi|^2 = 1`.
    pub fn build_spinor(&self, grid: &GridSpec) -> Result<Vec<Complex64>> {
        let InitialState::SpinorPacket {
            center,
            width,
            momentum,
            spinor,
        } = *self
        else {
            return Err(Error::validation(
                "initial_state.type",
                "the Dirac mode needs a spinor_packet",
            ));
        };
        positive("initial_state.width", width)?;
        let s = [
            Complex64::new(spinor[0][0], spinor[0][1]),
            Complex64::new(spinor[1][0], spinor[1][1]),
        ];
        let mut out: Vec<Complex64> = (0..grid.n_sites())
            .flat_map(|k| {
                let d = grid.displacement(center, grid.site_position(k));
                let envelope = Complex64::from_polar((-0.25 * d * d / (width * width)).exp(), momentum * d);
                [envelope * s[0], envelope * s[1]]
            })
            .collect();
        let norm = (grid.spacing() * out.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::validation("initial_state.spinor", "spinor has zero norm"));
        }
        out.iter_mut().for_each(|z| *z /= norm);
        Ok(out)
    }

    pub fn build(&self, space: FockSpace) -> Result<FockVector> {
        self.validate(&space)?;
        Ok(match *self {
            InitialState::SpinorPacket { .. } => {
                return Err(Error::validation(
                    "initial_state.type",
                    "spinor_packet needs model.mode dirac_1p",
                ));
            }
            InitialState::Vacuum => FockVector::vacuum(space),
            InitialState::Random { seed } => {
                use rand::SeedableRng;
                FockVector::random(space, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed))
            }
            InitialState::Packet {
                particles,
                center,
                width,
                momentum,
            } => {
                let grid = *space.grid();
                let one = |k: usize| {
                    let d = grid.displacement(center, grid.site_position(k));
                    Complex64::from_polar((-0.25 * d * d / (width * width)).exp(), momentum * d)
                };
                let mut psi = FockVector::from_fn(space, |n, sites| {
                    if n == particles {
                        sites.iter().map(|&k| one(k)).product()
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                });
                psi.normalize();
                psi
            }
        })
    }
}

/// Which part of the Hamiltonian generates jumps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HamiltonianPart {
    Interaction,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Move {
    Creation { site: usize },
    Annihilation { site: usize },
    Hop { from: usize, to: usize },
}

/// An off-diagonal matrix element `<to|H|from>` in the occupation basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub to: Atom,
    pub movement: Move,
    pub element: f64,
}

#[derive(Debug, Clone)]
pub struct OperatorBlocks {
    space: FockSpace,
    hbar: f64,
    mass: f64,
    coupling: f64,
    profile: Vec<f64>,
    hopping: f64,
    h0: CsrMatrix<f64>,
    h_int: CsrMatrix<f64>,
    total: CsrMatrix<f64>,
}

impl OperatorBlocks {
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        if spec.mode != ModelMode::SchrodingerFock {
            return Err(Error::validation(
                "model.mode",
                "Fock operators need mode schrodinger_fock",
            ));
        }
        let space = spec.space()?;
        let profile = spec.profile();
        let h0 = build_h0(&space, spec.mass, spec.hbar, None);
        let h_int = build_h_int(&space, spec.coupling, &profile);
        let total = h0.add(&h_int);
        Ok(OperatorBlocks {
            space,
            hbar: spec.hbar,
            mass: spec.mass,
            coupling: spec.coupling,
            profile,
            hopping: kinetic_hopping(space.grid(), spec.mass, spec.hbar),
            h0,
            h_int,
            total,
        })
    }

    pub fn space(&self) -> &FockSpace {
        &self.space
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn profile(&self) -> &[f64] {
        &self.profile
    }

    pub fn h0(&self) -> &CsrMatrix<f64> {
        &self.h0
    }

    pub fn h_int(&self) -> &CsrMatrix<f64> {
        &self.h_int
    }

    pub fn total(&self) -> &CsrMatrix<f64> {
        &self.total
    }

    pub fn part(&self, part: HamiltonianPart) -> &CsrMatrix<f64> {
        match part {
            HamiltonianPart::Interaction => &self.h_int,
            HamiltonianPart::Full => &self.total,
        }
    }

    pub fn h0_block(&self, n: usize) -> CsrMatrix<f64> {
        let r = self.space.block_range(n);
        self.h0.submatrix(r.clone(), r)
    }

    /// `H_I` restricted to sector `n` -> sector `n + 1`.
    pub fn creation_block(&self, n: usize) -> CsrMatrix<f64> {
        self.h_int
            .submatrix(self.space.block_range(n + 1), self.space.block_range(n))
    }

    /// `H_I` restricted to sector `n + 1` -> sector `n`.
    pub fn annihilation_block(&self, n: usize) -> CsrMatrix<f64> {
        self.h_int
            .submatrix(self.space.block_range(n), self.space.block_range(n + 1))
    }

    /// `H Psi` in the function representation.
    pub fn apply(&self, part: HamiltonianPart, psi: &FockVector) -> FockVector {
        let out = self.part(part).matvec(&psi.to_orthonormal());
        FockVector::from_orthonormal(self.space, out)
    }

    pub fn apply_h0(&self, psi: &FockVector) -> FockVector {
        let out = self.h0.matvec(&psi.to_orthonormal());
        FockVector::from_orthonormal(self.space, out)
    }

    /// `<Psi|H|Psi>` for the full Hamiltonian.
    pub fn energy(&self, psi: &FockVector) -> f64 {
        psi.inner(&self.apply(HamiltonianPart::Full, psi)).re
    }

    /// Off-diagonal occupation-basis matrix elements out of `from`, computed
    /// from ladder-operator algebra (independently of the tuple matrices).
    pub fn transitions(&self, from: &Atom, part: HamiltonianPart) -> Vec<Transition> {
        let n_sites = self.space.grid().n_sites();
        let src = self.coupling * self.space.grid().spacing().sqrt();
        let mut out = Vec::new();
        let mut distinct: Vec<usize> = from.sites().to_vec();
        distinct.dedup();
        if src != 0.0 {
            if from.sector() < self.space.n_max() {
                for k in 0..n_sites {
                    let element = src * self.profile[k] * ((from.occupation(k) + 1) as f64).sqrt();
                    if element != 0.0 {
                        out.push(Transition {
                            to: from.with_added(k),
                            movement: Move::Creation { site: k },
                            element,
                        });
                    }
                }
            }
            for &k in &distinct {
                let element = src * self.profile[k] * (from.occupation(k) as f64).sqrt();
                if element != 0.0 {
                    out.push(Transition {
                        to: from.with_removed(k).expect("occupied site"),
                        movement: Move::Annihilation { site: k },
                        element,
                    });
                }
            }
        }
        if part == HamiltonianPart::Full {
            let grid = self.space.grid();
            for &l in &distinct {
                for step in [-1isize, 1] {
                    let k = grid.neighbor(l, step);
                    let removed = from.with_removed(l).expect("occupied site");
                    let element =
                        self.hopping * (from.occupation(l) as f64).sqrt() * ((removed.occupation(k) + 1) as f64).sqrt();
                    out.push(Transition {
                        to: removed.with_added(k),
                        movement: Move::Hop { from: l, to: k },
                        element,
                    });
                }
            }
        }
        out
    }
}

/// Off-diagonal 3-point stencil coefficient `-hbar^2 / (2 m a^2)`.
pub fn kinetic_hopping(grid: &GridSpec, mass: f64, hbar: f64) -> f64 {
    let a = grid.spacing();
    -hbar * hbar / (2.0 * mass * a * a)
}

/// Sector-diagonal free Hamiltonian: in sector `n`, the sum over particles of
/// the periodic 3-point lattice kinetic operator (plus an optional external
/// potential, a hook that the simulator itself never sets).
pub fn build_h0(space: &FockSpace, mass: f64, hbar: f64, potential: Option<&[f64]>) -> CsrMatrix<f64> {
    let grid = space.grid();
    let hop = kinetic_hopping(grid, mass, hbar);
    let onsite = -2.0 * hop;
    let mut trips = Vec::new();
    for n in 0..=space.n_max() {
        let mut sites = vec![0; n];
        for idx in 0..space.block_len(n) {
            space.decode_into(idx, &mut sites);
            let row = space.offset(n) + idx;
            let diag: f64 = sites.iter().map(|&k| onsite + potential.map_or(0.0, |v| v[k])).sum();
            if n > 0 {
                trips.push((row, row, diag));
            }
            for i in 0..n {
                let orig = sites[i];
                for step in [-1isize, 1] {
                    sites[i] = grid.neighbor(orig, step);
                    trips.push((row, space.flat_index(&sites), hop));
                }
                sites[i] = orig;
            }
        }
    }
    CsrMatrix::from_triplets(space.dim(), space.dim(), trips)
}

/// `H_I = g (a(phi) + a^†(phi))` with `a^†(phi) = sum_k a phi(k) phi^†(x_k)`.
/// Creation out of the top sector is dropped.
pub fn build_h_int(space: &FockSpace, coupling: f64, profile: &[f64]) -> CsrMatrix<f64> {
    let scale = coupling * space.grid().spacing().sqrt();
    let mut trips = Vec::new();
    if scale != 0.0 {
        for n in 0..space.n_max() {
            let norm = scale / ((n + 1) as f64).sqrt();
            let mut sites = vec![0; n];
            let mut target = Vec::with_capacity(n + 1);
            for idx in 0..space.block_len(n) {
                space.decode_into(idx, &mut sites);
                let col = space.offset(n) + idx;
                for slot in 0..=n {
                    for (k, &phi) in profile.iter().enumerate() {
                        target.clear();
                        target.extend_from_slice(&sites[..slot]);
                        target.push(k);
                        target.extend_from_slice(&sites[slot..]);
                        let row = space.flat_index(&target);
                        trips.push((row, col, norm * phi));
                        trips.push((col, row, norm * phi));
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(space.dim(), space.dim(), trips)
}

/// Single-particle Dirac Hamiltonian `c alpha p + beta m c^2` on the grid,
/// with `alpha = sigma_x`, `beta = sigma_z` and the central-difference
/// momentum. Spinor components are interleaved: index `2k + s`.
pub fn build_dirac(grid: &GridSpec, params: &DiracParams, hbar: f64) -> CsrMatrix<Complex64> {
    let n = grid.n_sites();
    let rest = params.mass * params.c * params.c;
    // c * (-i hbar / 2a) on the forward neighbour
    let fwd = Complex64::new(0.0, -params.c * hbar / (2.0 * grid.spacing()));
    let mut trips = Vec::new();
    for k in 0..n {
        trips.push((2 * k, 2 * k, Complex64::new(rest, 0.0)));
        trips.push((2 * k + 1, 2 * k + 1, Complex64::new(-rest, 0.0)));
        let up = grid.neighbor(k, 1);
        let down = grid.neighbor(k, -1);
        for s in 0..2 {
            let other = 1 - s;
            trips.push((2 * k + s, 2 * up + other, fwd));
            trips.push((2 * k + s, 2 * down + other, -fwd));
        }
    }
    CsrMatrix::from_triplets(2 * n, 2 * n, trips)
}
