//! Time evolution `i hbar dPsi/dt = H Psi` on the truncated Fock space.
//!
//! Two methods: exact evaluation through a dense eigendecomposition (small
//! spaces), and the unitary Crank–Nicolson (Cayley) step for larger sparse
//! problems.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fockgrid::{Atom, FockSpace, FockVector, GuidingState, NORM_TOLERANCE};
use crate::model::{HamiltonianPart, OperatorBlocks};
use crate::sparse::{CsrMatrix, Scalar};

pub const DENSE_LIMIT: usize = 3000;
pub const SPARSE_LIMIT: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Eigendecomposition,
    CrankNicolson,
}

impl Method {
    /// Eigendecomposition up to [`DENSE_LIMIT`], Crank–Nicolson above.
    pub fn for_dimension(dim: usize) -> Self {
        if dim <= DENSE_LIMIT {
            Method::Eigendecomposition
        } else {
            Method::CrankNicolson
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagatorPlan {
    #[serde(default)]
    pub method: Method,
    pub dt_psi: f64,
    pub t_final: f64,
    #[serde(default)]
    pub sample_times: Vec<f64>,
}

impl PropagatorPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_psi.is_finite() && self.dt_psi > 0.0) {
            return Err(Error::validation("propagator.dt_psi", "must be positive"));
        }
        if !(self.t_final.is_finite() && self.t_final >= 0.0) {
            return Err(Error::validation("propagator.t_final", "must be nonnegative"));
        }
        let mut prev = f64::NEG_INFINITY;
        for &t in &self.sample_times {
            if !(0.0..=self.t_final).contains(&t) {
                return Err(Error::validation(
                    "propagator.sample_times",
                    format!("{t} outside [0, t_final]"),
                ));
            }
            if t <= prev {
                return Err(Error::validation(
                    "propagator.sample_times",
                    "must be strictly increasing",
                ));
            }
            prev = t;
        }
        Ok(())
    }
}

/// Spectral decomposition `H = V diag(E) V^†`, with `V = A + iB` kept as two
/// real matrices so evaluation runs on real matrix products.
#[derive(Debug, Clone)]
pub struct EigenPropagator {
    energies: Vec<f64>,
    re: DMatrix<f64>,
    im: Option<DMatrix<f64>>,
    hbar: f64,
}

impl EigenPropagator {
    pub fn new<T: Scalar>(h: &CsrMatrix<T>, hbar: f64) -> Result<Self> {
        let dim = h.nrows();
        if dim > DENSE_LIMIT {
            return Err(Error::DimensionTooLarge {
                dim,
                limit: DENSE_LIMIT,
                method: "eigendecomposition",
            });
        }
        let eig = SymmetricEigen::new(h.to_dense());
        let re = eig.eigenvectors.map(|v| v.to_c64().re);
        let im = eig.eigenvectors.map(|v| v.to_c64().im);
        let im = if im.iter().all(|&x| x == 0.0) { None } else { Some(im) };
        Ok(EigenPropagator {
            energies: eig.eigenvalues.iter().copied().collect(),
            re,
            im,
            hbar,
        })
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Expansion coefficients `V^† psi`.
    pub fn coefficients(&self, psi: &[Complex64]) -> Vec<Complex64> {
        let (x, y) = split(psi);
        let mut cr = self.re.tr_mul(&x);
        let mut ci = self.re.tr_mul(&y);
        if let Some(b) = &self.im {
            cr += b.tr_mul(&y);
            ci -= b.tr_mul(&x);
        }
        join(&cr, &ci)
    }

    /// States at each of `times`, from expansion coefficients.
    pub fn evaluate_many(&self, coeffs: &[Complex64], times: &[f64]) -> Vec<Vec<Complex64>> {
        let dim = coeffs.len();
        let mut pr = DMatrix::<f64>::zeros(dim, times.len());
        let mut pi = DMatrix::<f64>::zeros(dim, times.len());
        for (col, &t) in times.iter().enumerate() {
            for (j, (&e, c)) in self.energies.iter().zip(coeffs).enumerate() {
                let z = c * Complex64::from_polar(1.0, -e * t / self.hbar);
                pr[(j, col)] = z.re;
                pi[(j, col)] = z.im;
            }
        }
        let mut xr = &self.re * &pr;
        let mut xi = &self.re * &pi;
        if let Some(b) = &self.im {
            xr -= b * &pi;
            xi += b * &pr;
        }
        (0..times.len())
            .map(|col| (0..dim).map(|i| Complex64::new(xr[(i, col)], xi[(i, col)])).collect())
            .collect()
    }

    pub fn evaluate(&self, coeffs: &[Complex64], t: f64) -> Vec<Complex64> {
        self.evaluate_many(coeffs, &[t]).pop().unwrap()
    }
}

fn split(v: &[Complex64]) -> (DMatrix<f64>, DMatrix<f64>) {
    (
        DMatrix::from_iterator(v.len(), 1, v.iter().map(|z| z.re)),
        DMatrix::from_iterator(v.len(), 1, v.iter().map(|z| z.im)),
    )
}

fn join(re: &DMatrix<f64>, im: &DMatrix<f64>) -> Vec<Complex64> {
    re.iter().zip(im.iter()).map(|(&a, &b)| Complex64::new(a, b)).collect()
}

/// One Crank–Nicolson step `(1 + i tau H) psi' = (1 - i tau H) psi`,
/// `tau = dt / (2 hbar)`, solved by conjugate gradients on the Hermitian
/// positive definite normal system `(1 + tau^2 H^2) psi' = (1 - i tau H)^2 psi`.
#[derive(Debug, Clone)]
pub struct CrankNicolson<'a, T> {
    h: &'a CsrMatrix<T>,
    tau: f64,
    tolerance: f64,
    max_iterations: usize,
}

impl<'a, T: Scalar> CrankNicolson<'a, T> {
    pub fn new(h: &'a CsrMatrix<T>, dt: f64, hbar: f64) -> Result<Self> {
        if h.nrows() > SPARSE_LIMIT {
            return Err(Error::DimensionTooLarge {
                dim: h.nrows(),
                limit: SPARSE_LIMIT,
                method: "crank-nicolson",
            });
        }
        Ok(CrankNicolson {
            h,
            tau: dt / (2.0 * hbar),
            tolerance: 1e-14,
            max_iterations: 10_000,
        })
    }

    fn cayley_rhs(&self, psi: &[Complex64]) -> Vec<Complex64> {
        let hp = self.h.matvec(psi);
        let mi_tau = Complex64::new(0.0, -self.tau);
        psi.iter().zip(&hp).map(|(p, h)| p + mi_tau * h).collect()
    }

    fn normal_apply(&self, x: &[Complex64], out: &mut [Complex64], scratch: &mut [Complex64]) {
        self.h.matvec_into(x, scratch);
        self.h.matvec_into(scratch, out);
        let t2 = self.tau * self.tau;
        out.iter_mut().zip(x).for_each(|(o, xi)| *o = xi + *o * t2);
    }

    pub fn step(&self, psi: &[Complex64]) -> Result<Vec<Complex64>> {
        let b = self.cayley_rhs(&self.cayley_rhs(psi));
        let n = b.len();
        let dot = |u: &[Complex64], v: &[Complex64]| -> Complex64 { u.iter().zip(v).map(|(a, b)| a.conj() * b).sum() };
        let b_norm = dot(&b, &b).re.sqrt();
        let mut x = self.cayley_rhs(psi);
        let mut ax = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = ax.clone();
        self.normal_apply(&x, &mut ax, &mut scratch);
        let mut r: Vec<Complex64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let mut p = r.clone();
        let mut rr = dot(&r, &r).re;
        let mut ap = ax;
        for _ in 0..self.max_iterations {
            if rr.sqrt() <= self.tolerance * b_norm.max(f64::MIN_POSITIVE) {
                return Ok(x);
            }
            self.normal_apply(&p, &mut ap, &mut scratch);
            let alpha = rr / dot(&p, &ap).re;
            x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += pi * alpha);
            r.iter_mut().zip(&ap).for_each(|(ri, api)| *ri -= api * alpha);
            let rr_new = dot(&r, &r).re;
            let beta = rr_new / rr;
            p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + *pi * beta);
            rr = rr_new;
        }
        Err(Error::SolverDidNotConverge {
            iterations: self.max_iterations,
            residual: rr.sqrt() / b_norm,
        })
    }
}

/// States on the uniform mesh `t_j = j * step`, `j = 0..count`, for a flat
/// initial vector in orthonormal coordinates.
pub fn evolve_on_mesh<T: Scalar>(
    h: &CsrMatrix<T>,
    hbar: f64,
    psi0: &[Complex64],
    method: Method,
    step: f64,
    count: usize,
) -> Result<Vec<Vec<Complex64>>> {
    match method {
        Method::Eigendecomposition => {
            let prop = EigenPropagator::new(h, hbar)?;
            let coeffs = prop.coefficients(psi0);
            let times: Vec<f64> = (0..count).map(|j| j as f64 * step).collect();
            // chunks bound the temporary dim x chunk matrices
            Ok(times
                .chunks(256)
                .flat_map(|ts| prop.evaluate_many(&coeffs, ts))
                .collect())
        }
        Method::CrankNicolson => {
            let cn = CrankNicolson::new(h, step, hbar)?;
            let mut out = Vec::with_capacity(count);
            let mut current = psi0.to_vec();
            for j in 0..count {
                if j > 0 {
                    current = cn.step(&current)?;
                }
                out.push(current.clone());
            }
            Ok(out)
        }
    }
}

/// `Psi` at the plan's sample times.
#[derive(Debug, Clone)]
pub struct StateSeries {
    pub times: Vec<f64>,
    pub states: Vec<FockVector>,
}

pub fn evolve(psi0: &FockVector, ops: &OperatorBlocks, plan: &PropagatorPlan) -> Result<StateSeries> {
    plan.validate()?;
    psi0.check_normalized(NORM_TOLERANCE)?;
    let space = *psi0.space();
    let h = ops.total();
    let start = psi0.to_orthonormal();
    let states: Vec<Vec<Complex64>> = match plan.method {
        Method::Eigendecomposition => {
            let prop = EigenPropagator::new(h, ops.hbar())?;
            let coeffs = prop.coefficients(&start);
            prop.evaluate_many(&coeffs, &plan.sample_times)
        }
        Method::CrankNicolson => {
            let mut out = Vec::with_capacity(plan.sample_times.len());
            let mut current = start;
            let mut now = 0.0;
            for &t in &plan.sample_times {
                let span = t - now;
                if span > 0.0 {
                    let steps = (span / plan.dt_psi).ceil().max(1.0) as usize;
                    let cn = CrankNicolson::new(h, span / steps as f64, ops.hbar())?;
                    for _ in 0..steps {
                        current = cn.step(&current)?;
                    }
                }
                now = t;
                out.push(current.clone());
            }
            out
        }
    };
    Ok(StateSeries {
        times: plan.sample_times.clone(),
        states: states
            .into_iter()
            .map(|v| FockVector::from_orthonormal(space, v))
            .collect(),
    })
}

/// The guiding state sampled on a uniform time mesh, shared read-only by all
/// trajectory workers.
#[derive(Debug, Clone)]
pub struct PsiMesh {
    step: f64,
    states: Vec<GuidingState>,
}

impl PsiMesh {
    pub fn build(psi0: &FockVector, ops: &OperatorBlocks, method: Method, step: f64, count: usize) -> Result<Self> {
        psi0.check_normalized(NORM_TOLERANCE)?;
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::validation("process.dt", "must be positive"));
        }
        let space = *psi0.space();
        let flat = evolve_on_mesh(ops.total(), ops.hbar(), &psi0.to_orthonormal(), method, step, count)?;
        Ok(PsiMesh {
            step,
            states: flat
                .into_iter()
                .map(|v| GuidingState::new(FockVector::from_orthonormal(space, v)))
                .collect(),
        })
    }

    /// A mesh holding the same state at every point (frozen dynamics).
    pub fn constant(psi: FockVector, step: f64, count: usize) -> Self {
        PsiMesh {
            step,
            states: vec![GuidingState::new(psi); count],
        }
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.step
    }

    pub fn state(&self, j: usize) -> &FockVector {
        self.states[j].psi()
    }

    pub fn guide(&self, j: usize) -> &GuidingState {
        &self.states[j]
    }

    /// Mesh index of `t`, if `t` lies on the mesh (to 1e-9 relative).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let j = (t / self.step).round();
        ((j * self.step - t).abs() <= 1e-9 * self.step.max(t.abs()) && j >= 0.0 && (j as usize) < self.len())
            .then_some(j as usize)
    }
}

/// `d rho / dt` per ordered tuple, `(2/hbar) Im(conj(psi) (H psi))` in
/// orthonormal coordinates, computed from `H Psi` directly.
#[derive(Debug, Clone)]
pub struct DensityRate {
    space: FockSpace,
    data: Vec<f64>,
}

impl DensityRate {
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn tuple_rate(&self, sites: &[usize]) -> f64 {
        self.data[self.space.flat_index(sites)]
    }

    pub fn atom_rate(&self, atom: &Atom) -> f64 {
        atom.orderings() * self.tuple_rate(atom.sites())
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }
}

pub fn density_rate(psi: &FockVector, ops: &OperatorBlocks, part: HamiltonianPart) -> DensityRate {
    let coords = psi.to_orthonormal();
    let h_psi = ops.part(part).matvec(&coords);
    let scale = 2.0 / ops.hbar();
    DensityRate {
        space: *psi.space(),
        data: coords
            .iter()
            .zip(&h_psi)
            .map(|(p, h)| scale * (p.conj() * h).im)
            .collect(),
    }
}
