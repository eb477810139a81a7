//! Projection-valued measure on the discrete configuration space and the
//! consistency checks tying it to the number-operator family.

use std::collections::BTreeSet;

use nalgebra::SymmetricEigen;
use num_complex::Complex64;
use serde::Serialize;

use super::grid::{Atom, GridSpec};
use super::ladder::{atom_basis, count_operator, number_operator};
use super::vector::{permutations, FockSpace, FockVector};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// A set `B` of grid configurations, given per sector as a set of ordered
/// tuple indices. Regions built from atoms contain every ordering and so
/// preserve bosonic symmetry under projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigRegion {
    sectors: Vec<BTreeSet<usize>>,
}

impl ConfigRegion {
    pub fn empty(space: &FockSpace) -> Self {
        ConfigRegion {
            sectors: vec![BTreeSet::new(); space.n_max() + 1],
        }
    }

    pub fn everything(space: &FockSpace) -> Self {
        ConfigRegion {
            sectors: (0..=space.n_max()).map(|n| (0..space.block_len(n)).collect()).collect(),
        }
    }

    pub fn from_atoms<'a>(space: &FockSpace, atoms: impl IntoIterator<Item = &'a Atom>) -> Self {
        let mut region = Self::empty(space);
        for atom in atoms {
            for p in permutations(atom.sites()) {
                region.sectors[p.len()].insert(space.tuple_index(&p));
            }
        }
        region
    }

    /// Ordered tuples, taken literally (no symmetrization).
    pub fn from_tuples<'a>(space: &FockSpace, tuples: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let mut region = Self::empty(space);
        for t in tuples {
            region.sectors[t.len()].insert(space.tuple_index(t));
        }
        region
    }

    pub fn contains(&self, n: usize, index: usize) -> bool {
        self.sectors.get(n).is_some_and(|s| s.contains(&index))
    }
}

/// `P(B) Psi`: multiplication by the indicator of `B`.
pub fn pv_project(psi: &FockVector, region: &ConfigRegion) -> FockVector {
    let space = *psi.space();
    let mut out = psi.clone();
    for n in 0..=space.n_max() {
        for (idx, z) in out.block_mut(n).iter_mut().enumerate() {
            if !region.contains(n, idx) {
                *z = Complex64::new(0.0, 0.0);
            }
        }
    }
    out
}

/// `<Psi|P(B)|Psi>`.
pub fn pv_expectation(psi: &FockVector, region: &ConfigRegion) -> f64 {
    psi.inner(&pv_project(psi, region)).re
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PvReport {
    pub dimension: usize,
    pub checks: Vec<CheckOutcome>,
}

impl PvReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    fn record(&mut self, name: impl Into<String>, value: f64, tolerance: f64) {
        self.checks.push(CheckOutcome {
            name: name.into(),
            value,
            tolerance,
            passed: value <= tolerance,
        });
    }
}

pub const PV_MAX_DIMENSION: usize = 5000;

/// Checks that the ladder-built family `N(R)` for the given regions (plus all
/// single sites) commutes, has nonnegative integer spectrum, is additive on
/// disjoint unions, equals the coordinate-count operator, and shares its joint
/// eigenspaces with the projections onto configuration atoms.
///
/// All operator comparisons are made on the symmetric subspace, expressed in
/// the occupation-number (atom) basis.
pub fn verify_pv_consistency(grid: GridSpec, n_max: usize, regions: &[Vec<usize>]) -> Result<PvReport> {
    let space = FockSpace::new(grid, n_max)?;
    if space.dim() > PV_MAX_DIMENSION {
        return Err(Error::DimensionTooLarge {
            dim: space.dim(),
            limit: PV_MAX_DIMENSION,
            method: "pv consistency check",
        });
    }
    for r in regions {
        if let Some(k) = r.iter().find(|&&k| k >= grid.n_sites()) {
            return Err(Error::validation("region", format!("site {k} outside grid")));
        }
    }
    let mut family: Vec<Vec<usize>> = regions.to_vec();
    family.push(Vec::new());
    family.extend((0..grid.n_sites()).map(|k| vec![k]));

    let (atoms, basis) = atom_basis(&space);
    let basis_t = basis.transpose();
    let ladder: Vec<CsrMatrix<f64>> = family.iter().map(|r| number_operator(&space, r)).collect();
    let restricted: Vec<CsrMatrix<f64>> = ladder.iter().map(|n| basis_t.matmul(n).matmul(&basis)).collect();

    let mut report = PvReport {
        dimension: space.dim(),
        checks: Vec::new(),
    };

    let mut comm: f64 = 0.0;
    for (i, a) in restricted.iter().enumerate() {
        for b in &restricted[i + 1..] {
            comm = comm.max(a.matmul(b).max_abs_diff(&b.matmul(a)));
        }
    }
    report.record("pairwise commutators", comm, 1e-12);

    let mut spectrum: f64 = 0.0;
    for n in &restricted {
        let eig = SymmetricEigen::new(n.to_dense());
        for &ev in eig.eigenvalues.iter() {
            let dev = if ev < -1e-9 { ev.abs() } else { (ev - ev.round()).abs() };
            spectrum = spectrum.max(dev);
        }
    }
    report.record("nonnegative integer spectra", spectrum, 1e-9);

    let mut additivity: f64 = 0.0;
    for (i, r1) in family.iter().enumerate() {
        for (j, r2) in family.iter().enumerate().skip(i + 1) {
            if r1.iter().any(|k| r2.contains(k)) {
                continue;
            }
            let union: Vec<usize> = r1.iter().chain(r2).copied().collect();
            let lhs = basis_t.matmul(&number_operator(&space, &union)).matmul(&basis);
            additivity = additivity.max(lhs.max_abs_diff(&restricted[i].add(&restricted[j])));
        }
    }
    report.record("additivity on disjoint regions", additivity, 1e-12);

    let all_sites: Vec<usize> = (0..grid.n_sites()).collect();
    let singles = (0..grid.n_sites()).fold(CsrMatrix::zeros(atoms.len(), atoms.len()), |acc, k| {
        acc.add(&restricted[regions.len() + 1 + k])
    });
    let total = basis_t.matmul(&number_operator(&space, &all_sites)).matmul(&basis);
    report.record(
        "single-site partition sums to total number",
        singles.max_abs_diff(&total),
        1e-12,
    );

    let mut bridge: f64 = 0.0;
    for (r, n) in family.iter().zip(&ladder) {
        let counted = count_operator(&space, r).matmul(&basis);
        bridge = bridge.max(n.matmul(&basis).max_abs_diff(&counted));
    }
    report.record("ladder N(R) equals coordinate count", bridge, 1e-12);

    // Joint eigenvectors are the atom states, with eigenvalue = count in R,
    // and P(atom) fixes its own basis vector and annihilates the others.
    let mut joint: f64 = 0.0;
    for (j, atom) in atoms.iter().enumerate() {
        for (r, n) in family.iter().zip(&restricted) {
            let count = atom.sites().iter().filter(|s| r.contains(s)).count() as f64;
            for i in 0..atoms.len() {
                let expected = if i == j { count } else { 0.0 };
                joint = joint.max((n.get(i, j) - expected).abs());
            }
        }
        let region = ConfigRegion::from_atoms(&space, [atom]);
        for (i, _) in atoms.iter().enumerate() {
            let column: Vec<Complex64> = (0..space.dim()).map(|r| Complex64::new(basis.get(r, i), 0.0)).collect();
            let v = FockVector::from_orthonormal(space, column.clone());
            let projected = pv_project(&v, &region).to_orthonormal();
            let keep = i == j;
            for (p, c) in projected.iter().zip(&column) {
                let expected = if keep { *c } else { Complex64::new(0.0, 0.0) };
                joint = joint.max((p - expected).norm());
            }
        }
    }
    report.record("joint eigenspaces match atom projections", joint, 1e-12);

    Ok(report)
}
