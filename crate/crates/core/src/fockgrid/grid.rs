use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-dimensional periodic lattice of `n_sites` sites spanning `length`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    length: f64,
    n_sites: usize,
}

impl GridSpec {
    pub const MIN_SITES: usize = 3;
    pub const MAX_SITES: usize = 64;

    pub fn new(length: f64, n_sites: usize) -> Result<Self> {
        let grid = GridSpec { length, n_sites };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length.is_finite() && self.length > 0.0) {
            return Err(Error::validation("grid.length", "must be positive and finite"));
        }
        if !(Self::MIN_SITES..=Self::MAX_SITES).contains(&self.n_sites) {
            return Err(Error::validation(
                "grid.n_sites",
                format!("must lie in {}..={}", Self::MIN_SITES, Self::MAX_SITES),
            ));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// Lattice spacing `a = L / N`.
    pub fn spacing(&self) -> f64 {
        self.length / self.n_sites as f64
    }

    pub fn site_position(&self, site: usize) -> f64 {
        site as f64 * self.spacing()
    }

    pub fn wrap_site(&self, site: isize) -> usize {
        site.rem_euclid(self.n_sites as isize) as usize
    }

    pub fn neighbor(&self, site: usize, step: isize) -> usize {
        self.wrap_site(site as isize + step)
    }

    /// Maps any real position into `[0, L)`.
    pub fn wrap_position(&self, x: f64) -> f64 {
        let w = x.rem_euclid(self.length);
        // rem_euclid can round up to exactly L for tiny negative inputs
        if w >= self.length {
            0.0
        } else {
            w
        }
    }

    pub fn nearest_site(&self, x: f64) -> usize {
        let s = (self.wrap_position(x) / self.spacing()).round() as usize;
        s % self.n_sites
    }

    /// Minimum-image displacement `to - from`, in `[-L/2, L/2)`.
    pub fn displacement(&self, from: f64, to: f64) -> f64 {
        let half = 0.5 * self.length;
        (to - from + half).rem_euclid(self.length) - half
    }

    pub fn contains(&self, x: f64) -> bool {
        (0.0..self.length).contains(&x)
    }
}

/// Particle-number sector `Q^[n]`. Only a single species is modelled, so the
/// sector is one count; a multi-species build would carry one count per
/// species here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Sector(pub usize);

impl Sector {
    pub fn particles(self) -> usize {
        self.0
    }
}

/// The actual configuration `Q(t)`: a finite list of continuum positions.
///
/// Particle order carries no meaning; [`Configuration::atom`] gives the
/// canonical, order-free grid representative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    positions: Vec<f64>,
}

impl Configuration {
    pub fn empty() -> Self {
        Configuration { positions: Vec::new() }
    }

    pub fn new(positions: Vec<f64>, grid: &GridSpec) -> Result<Self> {
        if let Some(x) = positions.iter().find(|x| !grid.contains(**x)) {
            return Err(Error::validation(
                "configuration",
                format!("position {x} outside [0, {})", grid.length()),
            ));
        }
        Ok(Configuration { positions })
    }

    pub fn from_sites(sites: &[usize], grid: &GridSpec) -> Self {
        Configuration {
            positions: sites.iter().map(|&k| grid.site_position(k)).collect(),
        }
    }

    pub(crate) fn from_positions_unchecked(positions: Vec<f64>) -> Self {
        Configuration { positions }
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn sector(&self) -> Sector {
        Sector(self.positions.len())
    }

    /// Nearest grid site of every particle, in particle order.
    pub fn snapped_sites(&self, grid: &GridSpec) -> Vec<usize> {
        self.positions.iter().map(|&x| grid.nearest_site(x)).collect()
    }

    pub fn atom(&self, grid: &GridSpec) -> Atom {
        Atom::new(self.snapped_sites(grid))
    }
}

/// A grid configuration up to particle relabelling: the sorted multiset of
/// occupied sites. These are the atoms of the discrete configuration space and
/// correspond one-to-one with occupation-number basis states.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Atom(Vec<usize>);

impl Atom {
    pub fn new(mut sites: Vec<usize>) -> Self {
        sites.sort_unstable();
        Atom(sites)
    }

    pub fn vacuum() -> Self {
        Atom(Vec::new())
    }

    pub fn sites(&self) -> &[usize] {
        &self.0
    }

    pub fn sector(&self) -> usize {
        self.0.len()
    }

    pub fn occupation(&self, site: usize) -> usize {
        self.0.iter().filter(|&&s| s == site).count()
    }

    /// `prod_k m_k!` over the occupation numbers.
    pub fn multiplicity_factorial(&self) -> f64 {
        let mut prod = 1.0;
        let mut run = 0usize;
        for (i, s) in self.0.iter().enumerate() {
            run = if i > 0 && self.0[i - 1] == *s { run + 1 } else { 1 };
            prod *= run as f64;
        }
        prod
    }

    /// Number of distinct ordered tuples representing this atom.
    pub fn orderings(&self) -> f64 {
        factorial(self.sector()) / self.multiplicity_factorial()
    }

    pub fn with_added(&self, site: usize) -> Atom {
        let mut sites = self.0.clone();
        let pos = sites.partition_point(|&s| s < site);
        sites.insert(pos, site);
        Atom(sites)
    }

    /// Removes one particle at `site`, if any is there.
    pub fn with_removed(&self, site: usize) -> Option<Atom> {
        let pos = self.0.iter().position(|&s| s == site)?;
        let mut sites = self.0.clone();
        sites.remove(pos);
        Some(Atom(sites))
    }

    pub fn coarse_grained(&self, factor: usize) -> Atom {
        Atom::new(self.0.iter().map(|s| s / factor).collect())
    }
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}
