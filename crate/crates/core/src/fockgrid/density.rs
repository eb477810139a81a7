use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::grid::{Atom, Configuration};
use super::vector::{FockSpace, FockVector};
use crate::error::{Error, Result};

/// Tolerance on `|‖Psi‖ - 1|` for inputs that must be normalized.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// Probability mass per ordered grid tuple: `a^n/n! |Psi_n(k)|^2`.
///
/// Summing over all tuples of all sectors gives 1. The probability of an
/// unordered configuration (an [`Atom`]) is the sum over its orderings.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    space: FockSpace,
    data: Vec<f64>,
}

pub fn density(psi: &FockVector) -> Result<DensityGrid> {
    psi.check_normalized(NORM_TOLERANCE)?;
    let space = *psi.space();
    let mut data = Vec::with_capacity(space.dim());
    for n in 0..=space.n_max() {
        let w = space.weight(n);
        data.extend(psi.block(n).iter().map(|z| w * z.norm_sqr()));
    }
    Ok(DensityGrid { space, data })
}

impl DensityGrid {
    pub fn space(&self) -> &FockSpace {
        &self.space
    }

    pub fn block(&self, n: usize) -> &[f64] {
        &self.data[self.space.block_range(n)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sector_masses(&self) -> Vec<f64> {
        (0..=self.space.n_max()).map(|n| self.block(n).iter().sum()).collect()
    }

    pub fn tuple_probability(&self, sites: &[usize]) -> f64 {
        self.data[self.space.flat_index(sites)]
    }

    pub fn atom_probability(&self, atom: &Atom) -> f64 {
        atom.orderings() * self.tuple_probability(atom.sites())
    }

    pub fn atom_distribution(&self) -> BTreeMap<Atom, f64> {
        self.space
            .all_atoms()
            .into_iter()
            .map(|a| {
                let p = self.atom_probability(&a);
                (a, p)
            })
            .collect()
    }
}

/// Draws configurations from a [`DensityGrid`]: first the sector by its
/// mass, then an ordered tuple within the sector.
#[derive(Debug, Clone)]
pub struct ConfigurationSampler {
    space: FockSpace,
    sectors: WeightedIndex<f64>,
    within: Vec<Option<WeightedIndex<f64>>>,
    jitter: bool,
}

impl ConfigurationSampler {
    pub fn new(density: &DensityGrid, jitter: bool) -> Result<Self> {
        let masses = density.sector_masses();
        let sectors = WeightedIndex::new(&masses)
            .map_err(|e| Error::validation("state", format!("cannot sample density: {e}")))?;
        let within = (0..=density.space.n_max())
            .map(|n| WeightedIndex::new(density.block(n)).ok())
            .collect();
        Ok(ConfigurationSampler {
            space: density.space,
            sectors,
            within,
            jitter,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        let n = self.sectors.sample(rng);
        let idx = self.within[n]
            .as_ref()
            .expect("sector with positive mass has a tuple distribution")
            .sample(rng);
        let grid = self.space.grid();
        let sites = self.space.decode(n, idx);
        let positions = sites
            .iter()
            .map(|&k| {
                let x = grid.site_position(k);
                if self.jitter {
                    grid.wrap_position(x + grid.spacing() * (rng.random::<f64>() - 0.5))
                } else {
                    x
                }
            })
            .collect();
        Configuration::from_positions_unchecked(positions)
    }
}

pub fn sample_configuration<R: Rng + ?Sized>(psi: &FockVector, rng: &mut R, jitter: bool) -> Result<Configuration> {
    Ok(ConfigurationSampler::new(&density(psi)?, jitter)?.sample(rng))
}

/// Density floor below which a grid configuration in sector `n` counts as a
/// node: `1e-12` times the sector's mean `|Psi_n|^2`.
pub fn node_floor(psi: &FockVector, n: usize) -> f64 {
    let block = psi.block(n);
    1e-12 * block.iter().map(|z| z.norm_sqr()).sum::<f64>() / block.len() as f64
}

pub fn is_node(psi: &FockVector, sites: &[usize]) -> bool {
    let rho = psi.amplitude(sites).norm_sqr();
    rho <= node_floor(psi, sites.len())
}

/// A state together with its per-sector node floors, so that repeated
/// velocity and rate evaluations need not rescan the blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidingState {
    psi: FockVector,
    floors: Vec<f64>,
}

impl GuidingState {
    pub fn new(psi: FockVector) -> Self {
        let floors = (0..=psi.space().n_max()).map(|n| node_floor(&psi, n)).collect();
        GuidingState { psi, floors }
    }

    pub fn psi(&self) -> &FockVector {
        &self.psi
    }

    pub fn floor(&self, n: usize) -> f64 {
        self.floors[n]
    }

    pub fn is_node(&self, sites: &[usize]) -> bool {
        self.psi.amplitude(sites).norm_sqr() <= self.floors[sites.len()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockgrid::GridSpec;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn space() -> FockSpace {
        FockSpace::new(GridSpec::new(4.0, 8).unwrap(), 2).unwrap()
    }

    #[test]
    fn vacuum_density() {
        let d = density(&FockVector::vacuum(space())).unwrap();
        assert_eq!(d.sector_masses(), vec![1.0, 0.0, 0.0]);
        assert_eq!(d.atom_probability(&Atom::vacuum()), 1.0);
    }

    #[test]
    fn half_vacuum_half_single_site() {
        let s = space();
        let mut psi = FockVector::zeros(s);
        psi.set_atom_amplitude(&Atom::vacuum(), Complex64::new(0.5f64.sqrt(), 0.0));
        psi.set_atom_amplitude(&Atom::new(vec![3]), Complex64::new(0.0, 0.5f64.sqrt()));
        let masses = density(&psi).unwrap().sector_masses();
        assert!((masses[0] - 0.5).abs() < 1e-15 && (masses[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn random_state_masses_match_flat_dot_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let psi = FockVector::random(space(), &mut rng);
        let d = density(&psi).unwrap();
        // oracle: flatten every block into one weighted vector
        let flat: Vec<(usize, Complex64)> = (0..=2)
            .flat_map(|n| psi.block(n).iter().map(move |z| (n, *z)))
            .collect();
        for n in 0..=2 {
            let oracle: f64 = flat
                .iter()
                .filter(|(m, _)| *m == n)
                .map(|(_, z)| z.norm_sqr() * s_weight(n))
                .sum();
            assert!((d.sector_masses()[n] - oracle).abs() < 1e-14);
        }
        assert!((d.total() - 1.0).abs() < 1e-12);

        fn s_weight(n: usize) -> f64 {
            0.5f64.powi(n as i32) / [1.0, 1.0, 2.0][n]
        }
    }

    #[test]
    fn rejects_unnormalized() {
        let psi = FockVector::vacuum(space()).scaled(Complex64::new(2.0, 0.0));
        assert!(density(&psi).unwrap_err().is_validation());
    }

    #[test]
    fn point_mass_sampling() {
        let s = space();
        let mut psi = FockVector::zeros(s);
        psi.set_atom_amplitude(&Atom::new(vec![3]), Complex64::new(1.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let q = sample_configuration(&psi, &mut rng, false).unwrap();
            assert_eq!(q.positions(), &[1.5]);
        }
        let vac = FockVector::vacuum(s);
        assert!(sample_configuration(&vac, &mut rng, true).unwrap().is_empty());
    }

    #[test]
    fn two_site_frequencies() {
        let s = space();
        let mut psi = FockVector::zeros(s);
        let h = Complex64::new(0.5f64.sqrt(), 0.0);
        psi.set_atom_amplitude(&Atom::new(vec![1]), h);
        psi.set_atom_amplitude(&Atom::new(vec![6]), h);
        let sampler = ConfigurationSampler::new(&density(&psi).unwrap(), false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = 10_000;
        let hits = (0..m)
            .filter(|_| sampler.sample(&mut rng).snapped_sites(s.grid()) == vec![1])
            .count();
        // binomial sd = 0.005; 0.02 is four sigma
        assert!((hits as f64 / m as f64 - 0.5).abs() <= 0.02);
    }

    #[test]
    fn jitter_stays_in_cell() {
        let s = space();
        let mut psi = FockVector::zeros(s);
        psi.set_atom_amplitude(&Atom::new(vec![0]), Complex64::new(1.0, 0.0));
        let sampler = ConfigurationSampler::new(&density(&psi).unwrap(), true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let q = sampler.sample(&mut rng);
            assert!(s.grid().contains(q.positions()[0]));
            assert_eq!(q.snapped_sites(s.grid()), vec![0]);
        }
    }
}
