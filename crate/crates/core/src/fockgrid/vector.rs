use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::grid::{factorial, Atom, GridSpec};
use crate::error::{Error, Result};

/// Layout of the truncated Fock space on a grid: sector `n` is the full
/// tensor grid `N^n`, stored row-major, sectors concatenated for
/// `n = 0..=n_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FockSpace {
    grid: GridSpec,
    n_max: usize,
}

impl FockSpace {
    pub const MAX_PARTICLES: usize = 3;

    pub fn new(grid: GridSpec, n_max: usize) -> Result<Self> {
        grid.validate()?;
        if n_max > Self::MAX_PARTICLES {
            return Err(Error::validation(
                "n_max",
                format!("must be at most {}", Self::MAX_PARTICLES),
            ));
        }
        Ok(FockSpace { grid, n_max })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn block_len(&self, n: usize) -> usize {
        self.grid.n_sites().pow(n as u32)
    }

    pub fn offset(&self, n: usize) -> usize {
        (0..n).map(|j| self.block_len(j)).sum()
    }

    pub fn block_range(&self, n: usize) -> std::ops::Range<usize> {
        let start = self.offset(n);
        start..start + self.block_len(n)
    }

    pub fn dim(&self) -> usize {
        self.offset(self.n_max + 1)
    }

    /// Measure weight `a^n / n!` of one ordered tuple in sector `n`.
    pub fn weight(&self, n: usize) -> f64 {
        self.grid.spacing().powi(n as i32) / factorial(n)
    }

    /// Row-major index of an ordered tuple within its sector block.
    pub fn tuple_index(&self, sites: &[usize]) -> usize {
        let n_sites = self.grid.n_sites();
        sites.iter().fold(0, |acc, &s| acc * n_sites + s)
    }

    /// Flat index (across all sectors) of an ordered tuple.
    pub fn flat_index(&self, sites: &[usize]) -> usize {
        self.offset(sites.len()) + self.tuple_index(sites)
    }

    pub fn decode_into(&self, mut index: usize, out: &mut [usize]) {
        let n_sites = self.grid.n_sites();
        for slot in out.iter_mut().rev() {
            *slot = index % n_sites;
            index /= n_sites;
        }
    }

    pub fn decode(&self, n: usize, index: usize) -> Vec<usize> {
        let mut out = vec![0; n];
        self.decode_into(index, &mut out);
        out
    }

    /// Sector and ordered tuple of a flat index.
    pub fn locate(&self, flat: usize) -> (usize, Vec<usize>) {
        let n = (0..=self.n_max)
            .find(|&n| self.block_range(n).contains(&flat))
            .expect("flat index out of range");
        (n, self.decode(n, flat - self.offset(n)))
    }

    /// All atoms of sector `n` in lexicographic order.
    pub fn atoms(&self, n: usize) -> Vec<Atom> {
        let mut out = Vec::new();
        let mut current = Vec::with_capacity(n);
        fn rec(n_sites: usize, left: usize, from: usize, cur: &mut Vec<usize>, out: &mut Vec<Atom>) {
            if left == 0 {
                out.push(Atom::new(cur.clone()));
                return;
            }
            for s in from..n_sites {
                cur.push(s);
                rec(n_sites, left - 1, s, cur, out);
                cur.pop();
            }
        }
        rec(self.grid.n_sites(), n, 0, &mut current, &mut out);
        out
    }

    pub fn all_atoms(&self) -> Vec<Atom> {
        (0..=self.n_max).flat_map(|n| self.atoms(n)).collect()
    }
}

/// A state `Psi` viewed as a function on configuration space: one complex
/// array per sector holding the symmetric function values `Psi_n(x_k1..x_kn)`.
///
/// The inner product is `<Phi, Psi> = sum_n a^n/n! sum_k conj(Phi_n(k)) Psi_n(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FockVector {
    space: FockSpace,
    data: Vec<Complex64>,
}

impl FockVector {
    pub fn zeros(space: FockSpace) -> Self {
        FockVector {
            space,
            data: vec![Complex64::new(0.0, 0.0); space.dim()],
        }
    }

    pub fn vacuum(space: FockSpace) -> Self {
        let mut v = Self::zeros(space);
        v.data[0] = Complex64::new(1.0, 0.0);
        v
    }

    pub fn from_flat(space: FockSpace, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != space.dim() {
            return Err(Error::validation(
                "state",
                format!("expected {} amplitudes, got {}", space.dim(), data.len()),
            ));
        }
        Ok(FockVector { space, data })
    }

    pub fn from_blocks(space: FockSpace, blocks: Vec<Vec<Complex64>>) -> Result<Self> {
        if blocks.len() != space.n_max() + 1 {
            return Err(Error::validation("state", "one block per sector 0..=n_max required"));
        }
        for (n, b) in blocks.iter().enumerate() {
            if b.len() != space.block_len(n) {
                return Err(Error::validation(
                    format!("state.sectors.{n}"),
                    format!("expected {} amplitudes, got {}", space.block_len(n), b.len()),
                ));
            }
        }
        Ok(FockVector {
            space,
            data: blocks.into_iter().flatten().collect(),
        })
    }

    /// Builds a vector from a function of (sector, ordered tuple).
    pub fn from_fn(space: FockSpace, mut f: impl FnMut(usize, &[usize]) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(space.dim());
        for n in 0..=space.n_max() {
            let mut sites = vec![0; n];
            for idx in 0..space.block_len(n) {
                space.decode_into(idx, &mut sites);
                data.push(f(n, &sites));
            }
        }
        FockVector { space, data }
    }

    /// Seeded random symmetric state with independent complex Gaussian atom
    /// amplitudes, normalized.
    pub fn random<R: Rng + ?Sized>(space: FockSpace, rng: &mut R) -> Self {
        let atoms = space.all_atoms();
        let amps: std::collections::HashMap<Atom, Complex64> = atoms
            .into_iter()
            .map(|atom| {
                let z = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
                (atom, z)
            })
            .collect();
        let mut v = FockVector::zeros(space);
        for (atom, c) in &amps {
            v.set_atom_amplitude(atom, *c);
        }
        v.normalize();
        v
    }

    pub fn space(&self) -> &FockSpace {
        &self.space
    }

    pub fn grid(&self) -> &GridSpec {
        self.space.grid()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn block(&self, n: usize) -> &[Complex64] {
        &self.data[self.space.block_range(n)]
    }

    pub fn block_mut(&mut self, n: usize) -> &mut [Complex64] {
        let r = self.space.block_range(n);
        &mut self.data[r]
    }

    /// `Psi_n` at an ordered tuple; `n` is the tuple length.
    pub fn amplitude(&self, sites: &[usize]) -> Complex64 {
        self.data[self.space.flat_index(sites)]
    }

    /// Occupation-basis amplitude `<m|Psi> = a^{n/2} Psi_n(k) / sqrt(prod m_k!)`.
    pub fn atom_amplitude(&self, atom: &Atom) -> Complex64 {
        let n = atom.sector();
        let scale = self.grid().spacing().powf(0.5 * n as f64) / atom.multiplicity_factorial().sqrt();
        self.amplitude(atom.sites()) * scale
    }

    /// Writes the occupation-basis amplitude `c` into every ordering of `atom`.
    pub fn set_atom_amplitude(&mut self, atom: &Atom, c: Complex64) {
        let n = atom.sector();
        let value = c * atom.multiplicity_factorial().sqrt() / self.grid().spacing().powf(0.5 * n as f64);
        for perm in permutations(atom.sites()) {
            let idx = self.space.flat_index(&perm);
            self.data[idx] = value;
        }
    }

    pub fn inner(&self, other: &FockVector) -> Complex64 {
        (0..=self.space.n_max())
            .map(|n| {
                let w = self.space.weight(n);
                self.block(n)
                    .iter()
                    .zip(other.block(n))
                    .map(|(a, b)| a.conj() * b)
                    .sum::<Complex64>()
                    * w
            })
            .sum()
    }

    pub fn sector_norm_sqr(&self, n: usize) -> f64 {
        self.space.weight(n) * self.block(n).iter().map(|z| z.norm_sqr()).sum::<f64>()
    }

    pub fn norm_sqr(&self) -> f64 {
        (0..=self.space.n_max()).map(|n| self.sector_norm_sqr(n)).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn normalize(&mut self) {
        let norm = self.norm();
        assert!(norm > 0.0, "cannot normalize the zero vector");
        self.data.iter_mut().for_each(|z| *z /= norm);
    }

    pub fn scaled(&self, factor: Complex64) -> FockVector {
        FockVector {
            space: self.space,
            data: self.data.iter().map(|z| z * factor).collect(),
        }
    }

    pub fn check_normalized(&self, tolerance: f64) -> Result<()> {
        let norm = self.norm();
        if (norm - 1.0).abs() > tolerance {
            return Err(Error::validation(
                "state",
                format!("norm {norm} deviates from 1 by more than {tolerance}"),
            ));
        }
        Ok(())
    }

    /// Coordinates in the orthonormal tuple basis, `sqrt(a^n/n!) Psi_n(k)`.
    /// Operators in this crate act on these coordinates.
    pub fn to_orthonormal(&self) -> Vec<Complex64> {
        let mut out = self.data.clone();
        for n in 0..=self.space.n_max() {
            let s = self.space.weight(n).sqrt();
            out[self.space.block_range(n)].iter_mut().for_each(|z| *z *= s);
        }
        out
    }

    pub fn from_orthonormal(space: FockSpace, mut coords: Vec<Complex64>) -> Self {
        assert_eq!(coords.len(), space.dim());
        for n in 0..=space.n_max() {
            let s = 1.0 / space.weight(n).sqrt();
            coords[space.block_range(n)].iter_mut().for_each(|z| *z *= s);
        }
        FockVector { space, data: coords }
    }

    /// Largest relative deviation from bosonic symmetry under adjacent
    /// transpositions, over all sectors.
    pub fn symmetry_defect(&self) -> f64 {
        let scale = self
            .data
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for n in 2..=self.space.n_max() {
            let block = self.block(n);
            let mut sites = vec![0; n];
            for (idx, z) in block.iter().enumerate() {
                self.space.decode_into(idx, &mut sites);
                for i in 0..n - 1 {
                    sites.swap(i, i + 1);
                    let other = block[self.space.tuple_index(&sites)];
                    sites.swap(i, i + 1);
                    worst = worst.max((z - other).norm());
                }
            }
        }
        worst / scale
    }

    /// Averages every block over coordinate permutations.
    pub fn symmetrize(&mut self) {
        for n in 2..=self.space.n_max() {
            let space = self.space;
            let old = self.block(n).to_vec();
            let block = self.block_mut(n);
            let mut sites = vec![0; n];
            for (idx, z) in block.iter_mut().enumerate() {
                space.decode_into(idx, &mut sites);
                let perms = all_orderings(&sites);
                let sum: Complex64 = perms.iter().map(|p| old[space.tuple_index(p)]).sum();
                *z = sum / perms.len() as f64;
            }
        }
    }
}

/// Distinct orderings of a multiset of sites.
pub fn permutations(sites: &[usize]) -> Vec<Vec<usize>> {
    let mut sorted = sites.to_vec();
    sorted.sort_unstable();
    let mut out = vec![sorted.clone()];
    while next_permutation(&mut sorted) {
        out.push(sorted.clone());
    }
    out
}

/// All `n!` orderings (with repetition if sites repeat).
fn all_orderings(sites: &[usize]) -> Vec<Vec<usize>> {
    let n = sites.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut out = vec![sites.to_vec()];
    while next_permutation(&mut idx) {
        out.push(idx.iter().map(|&i| sites[i]).collect());
    }
    out
}

fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}
