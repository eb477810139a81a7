//! Lattice ladder operators and the number operators built from them.
//!
//! All matrices act on orthonormal tuple coordinates (see
//! [`FockVector::to_orthonormal`](super::FockVector::to_orthonormal)). The
//! creation operator inserts a particle at every slot of the tuple with
//! weight `1/sqrt(n+1)`; the annihilation operator is its transpose. On the
//! symmetric (bosonic) subspace they obey the canonical commutation relations.

use super::grid::Atom;
use super::vector::{permutations, FockSpace};
use crate::sparse::CsrMatrix;

/// `a_k^†`; matrix elements leaving the truncation are dropped.
pub fn creation(space: &FockSpace, site: usize) -> CsrMatrix<f64> {
    let mut trips = Vec::new();
    for n in 0..space.n_max() {
        let norm = 1.0 / ((n + 1) as f64).sqrt();
        let mut sites = vec![0; n];
        let mut target = Vec::with_capacity(n + 1);
        for idx in 0..space.block_len(n) {
            space.decode_into(idx, &mut sites);
            let col = space.offset(n) + idx;
            for slot in 0..=n {
                target.clear();
                target.extend_from_slice(&sites[..slot]);
                target.push(site);
                target.extend_from_slice(&sites[slot..]);
                trips.push((space.flat_index(&target), col, norm));
            }
        }
    }
    CsrMatrix::from_triplets(space.dim(), space.dim(), trips)
}

pub fn annihilation(space: &FockSpace, site: usize) -> CsrMatrix<f64> {
    creation(space, site).transpose()
}

/// `N(R) = sum_{k in R} a_k^† a_k`, assembled from ladder operators.
pub fn number_operator(space: &FockSpace, region: &[usize]) -> CsrMatrix<f64> {
    region
        .iter()
        .fold(CsrMatrix::zeros(space.dim(), space.dim()), |acc, &k| {
            acc.add(&creation(space, k).matmul(&annihilation(space, k)))
        })
}

/// Diagonal operator counting the coordinates of each tuple that lie in
/// `region`.
pub fn count_operator(space: &FockSpace, region: &[usize]) -> CsrMatrix<f64> {
    let mut diag = Vec::with_capacity(space.dim());
    for n in 0..=space.n_max() {
        let mut sites = vec![0; n];
        for idx in 0..space.block_len(n) {
            space.decode_into(idx, &mut sites);
            diag.push(sites.iter().filter(|s| region.contains(s)).count() as f64);
        }
    }
    CsrMatrix::diagonal(&diag)
}

/// Isometry from the occupation-number basis into tuple coordinates: column
/// `j` is the normalized symmetrization of `atoms[j]`.
pub fn atom_basis(space: &FockSpace) -> (Vec<Atom>, CsrMatrix<f64>) {
    let atoms = space.all_atoms();
    let mut trips = Vec::new();
    for (j, atom) in atoms.iter().enumerate() {
        let perms = permutations(atom.sites());
        let amp = 1.0 / (perms.len() as f64).sqrt();
        for p in perms {
            trips.push((space.flat_index(&p), j, amp));
        }
    }
    let v = CsrMatrix::from_triplets(space.dim(), atoms.len(), trips);
    (atoms, v)
}
