//! Verification of the process against the quantum state: ensemble
//! goodness-of-fit, the exact master-equation identity, agreement of the
//! projection-valued-measure formulas, and refinement studies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::flow::{grid_velocity, velocity_commutator, velocity_pv, FlowParams};
use crate::fockgrid::{density, Atom, CheckOutcome, FockVector, GridSpec, GuidingState};
use crate::jumps::{atom_rates, net_flux, pv_rates};
use crate::model::{HamiltonianPart, OperatorBlocks};
use crate::process::{ProcessMode, Trajectory};
use crate::propagator::density_rate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default = "default_tv")]
    pub tv_max: f64,
    #[serde(default = "default_p")]
    pub p_min: f64,
}

fn default_tv() -> f64 {
    0.05
}

fn default_p() -> f64 {
    1e-3
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            tv_max: default_tv(),
            p_min: default_p(),
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.tv_max > 0.0 && self.tv_max <= 1.0) {
            return Err(Error::validation("analysis.tv_max", "must lie in (0, 1]"));
        }
        if !(self.p_min >= 0.0 && self.p_min < 1.0) {
            return Err(Error::validation("analysis.p_min", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

pub type Distribution = BTreeMap<Atom, f64>;

/// Grid-configuration probabilities of `psi`, optionally on cells of
/// `coarse` consecutive sites.
pub fn target_distribution(psi: &FockVector, coarse: usize) -> Result<Distribution> {
    let mut out = Distribution::new();
    for (atom, p) in density(psi)?.atom_distribution() {
        *out.entry(atom.coarse_grained(coarse)).or_default() += p;
    }
    Ok(out)
}

/// Counts of configurations binned to grid configurations (nearest site)
/// and then to coarse cells.
pub fn histogram<'a>(
    grid: &GridSpec,
    configurations: impl IntoIterator<Item = &'a [f64]>,
    coarse: usize,
) -> BTreeMap<Atom, usize> {
    let mut out = BTreeMap::new();
    for q in configurations {
        let atom = Atom::new(q.iter().map(|&x| grid.nearest_site(x)).collect());
        *out.entry(atom.coarse_grained(coarse)).or_default() += 1;
    }
    out
}

pub fn total_variation(p: &Distribution, q: &Distribution) -> f64 {
    let mut sum = 0.0;
    for (atom, a) in p {
        sum += (a - q.get(atom).copied().unwrap_or(0.0)).abs();
    }
    for (atom, b) in q {
        if !p.contains_key(atom) {
            sum += b.abs();
        }
    }
    0.5 * sum
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    /// Bins whose expected count fell below 5 and were merged.
    pub pooled_bins: usize,
}

/// Pearson goodness-of-fit of `counts` against `target`. Bins with
/// expected count below 5 are merged into one; if that pool is still below 5
/// it joins the smallest remaining bin. Observing a configuration whose
/// expected count is negligible (below `1e-9`) rejects outright.
pub fn chi_square(counts: &BTreeMap<Atom, usize>, target: &Distribution) -> ChiSquareResult {
    let m: usize = counts.values().sum();
    let impossible = counts
        .iter()
        .any(|(atom, &c)| c > 0 && target.get(atom).copied().unwrap_or(0.0) * (m as f64) < 1e-9);
    let mut keys: Vec<&Atom> = target.keys().collect();
    keys.extend(counts.keys().filter(|a| !target.contains_key(*a)));
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut pool = (0.0, 0.0);
    let mut pooled_bins = 0;
    for atom in keys {
        let expected = target.get(atom).copied().unwrap_or(0.0) * m as f64;
        let observed = counts.get(atom).copied().unwrap_or(0) as f64;
        if expected < 5.0 {
            pool.0 += observed;
            pool.1 += expected;
            pooled_bins += 1;
        } else {
            bins.push((observed, expected));
        }
    }
    if pooled_bins > 0 {
        if pool.1 >= 5.0 || bins.is_empty() {
            bins.push(pool);
        } else {
            let smallest = bins.iter_mut().min_by(|a, b| a.1.total_cmp(&b.1)).expect("nonempty");
            smallest.0 += pool.0;
            smallest.1 += pool.1;
        }
    }
    let statistic: f64 = bins
        .iter()
        .map(|&(o, e)| {
            if e > 0.0 {
                (o - e) * (o - e) / e
            } else if o > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .sum();
    let degrees_of_freedom = bins.len().saturating_sub(1);
    let statistic = if impossible { f64::INFINITY } else { statistic };
    let p_value = if !statistic.is_finite() {
        0.0
    } else if degrees_of_freedom == 0 {
        1.0
    } else {
        1.0 - ChiSquared::new(degrees_of_freedom as f64)
            .expect("positive dof")
            .cdf(statistic)
    };
    ChiSquareResult {
        statistic,
        degrees_of_freedom,
        p_value,
        pooled_bins,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SectorMass {
    pub sector: usize,
    pub empirical: f64,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeReport {
    pub t: f64,
    pub samples: usize,
    pub tv: f64,
    pub chi_square: ChiSquareResult,
    pub sector_masses: Vec<SectorMass>,
    pub passed: bool,
}

/// Compares configurations observed at one time with the target state.
pub fn compare_at_time<'a>(
    t: f64,
    configurations: impl IntoIterator<Item = &'a [f64]>,
    target_psi: &FockVector,
    coarse: usize,
    thresholds: &Thresholds,
) -> Result<TimeReport> {
    let grid = target_psi.grid();
    let configurations: Vec<&[f64]> = configurations.into_iter().collect();
    if configurations.is_empty() {
        return Err(Error::validation("ensemble", "no configurations to compare"));
    }
    let m = configurations.len();
    let counts = histogram(grid, configurations.iter().copied(), coarse);
    let target = target_distribution(target_psi, coarse)?;
    let empirical: Distribution = counts.iter().map(|(a, &c)| (a.clone(), c as f64 / m as f64)).collect();
    let tv = total_variation(&empirical, &target);
    let chi = chi_square(&counts, &target);
    let sector_masses = (0..=target_psi.space().n_max())
        .map(|n| SectorMass {
            sector: n,
            empirical: configurations.iter().filter(|q| q.len() == n).count() as f64 / m as f64,
            target: target_psi.sector_norm_sqr(n),
        })
        .collect();
    let passed = tv <= thresholds.tv_max && chi.p_value >= thresholds.p_min;
    Ok(TimeReport {
        t,
        samples: m,
        tv,
        chi_square: chi,
        sector_masses,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivarianceReport {
    pub mode: Option<ProcessMode>,
    pub dt: Option<f64>,
    pub ensemble_size: usize,
    /// Failed trajectories, excluded from the statistics.
    pub failed: usize,
    pub failed_indices: Vec<u64>,
    pub coarse_cells: usize,
    pub thresholds: Thresholds,
    pub times: Vec<TimeReport>,
    pub passed: bool,
}

/// Tests the ensemble's configuration distribution at each `(t, Psi_t)`
/// against `|Psi_t|^2`. Passes iff every time passes both thresholds.
pub fn equivariance_test(
    ensemble: &[Trajectory],
    targets: &[(f64, &FockVector)],
    thresholds: &Thresholds,
    coarse: usize,
    dt: Option<f64>,
) -> Result<EquivarianceReport> {
    thresholds.validate()?;
    if ensemble.is_empty() {
        return Err(Error::validation("ensemble", "must not be empty"));
    }
    let good: Vec<&Trajectory> = ensemble.iter().filter(|t| !t.is_failed()).collect();
    let failed_indices: Vec<u64> = ensemble.iter().filter(|t| t.is_failed()).map(|t| t.index).collect();
    let mut times = Vec::with_capacity(targets.len());
    for &(t, psi) in targets {
        let samples: Vec<&[f64]> = good
            .iter()
            .map(|tr| {
                tr.sample_at(t).map(|s| s.positions.as_slice()).ok_or_else(|| {
                    Error::validation(
                        "sample_times",
                        format!("trajectory {} has no sample at t = {t}", tr.index),
                    )
                })
            })
            .collect::<Result<_>>()?;
        times.push(compare_at_time(t, samples, psi, coarse, thresholds)?);
    }
    let passed = !times.is_empty() && times.iter().all(|r| r.passed);
    Ok(EquivarianceReport {
        mode: ensemble.first().map(|t| t.mode),
        dt,
        ensemble_size: ensemble.len(),
        failed: failed_indices.len(),
        failed_indices,
        coarse_cells: coarse,
        thresholds: *thresholds,
        times,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorReport {
    pub max_error: f64,
    pub per_sector: Vec<f64>,
    pub worst: Atom,
    pub tolerance: f64,
    pub passed: bool,
}

pub const GENERATOR_TOLERANCE: f64 = 1e-10;

/// For every grid configuration `q`, compares the sum of net fluxes into
/// `q` over all configurations connected to it by the full Hamiltonian with
/// the rate of change of `|Psi(q)|^2`.
pub fn generator_identity_check(psi: &FockVector, ops: &OperatorBlocks) -> Result<GeneratorReport> {
    let guide = GuidingState::new(psi.clone());
    let rate = density_rate(psi, ops, HamiltonianPart::Full);
    let space = psi.space();
    let mut per_sector = vec![0.0; space.n_max() + 1];
    let mut worst = (0.0, Atom::vacuum());
    for q in space.all_atoms() {
        let mut inflow = 0.0;
        let mut seen: Vec<Atom> = Vec::new();
        for t in ops.transitions(&q, HamiltonianPart::Full) {
            if seen.contains(&t.to) {
                continue;
            }
            inflow += net_flux(&guide, ops, HamiltonianPart::Full, &q, &t.to)?;
            seen.push(t.to);
        }
        let err = (inflow - rate.atom_rate(&q)).abs();
        let n = q.sector();
        per_sector[n] = f64::max(per_sector[n], err);
        if err > worst.0 {
            worst = (err, q);
        }
    }
    Ok(GeneratorReport {
        max_error: worst.0,
        per_sector,
        worst: worst.1,
        tolerance: GENERATOR_TOLERANCE,
        passed: worst.0 <= GENERATOR_TOLERANCE,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PvEquivalenceReport {
    pub configurations: usize,
    pub nodes: usize,
    pub checks: Vec<CheckOutcome>,
    pub passed: bool,
}

pub const VELOCITY_TOLERANCE: f64 = 1e-10;
pub const RATE_TOLERANCE: f64 = 1e-12;

fn outcome(name: &str, value: f64, tolerance: f64) -> CheckOutcome {
    CheckOutcome {
        name: name.to_string(),
        value,
        tolerance,
        passed: value <= tolerance,
    }
}

/// Evaluates each velocity and rate formula pair at the given grid
/// configurations. Rate differences are relative to `max(1, rate)`. A node
/// must be reported by every formula or by none.
pub fn pv_equivalence_check(
    psi: &FockVector,
    ops: &OperatorBlocks,
    configurations: &[Vec<usize>],
) -> Result<PvEquivalenceReport> {
    let guide = GuidingState::new(psi.clone());
    let params = FlowParams::from(ops);
    let mut gradient_vs_commutator: f64 = 0.0;
    let mut pv_vs_gradient: f64 = 0.0;
    let mut pv_vs_direct_rates: f64 = 0.0;
    let mut node_mismatches = 0usize;
    let mut nodes = 0;
    for sites in configurations {
        let results = (
            grid_velocity(&guide, &params, sites),
            velocity_commutator(&guide, ops, sites),
            velocity_pv(&guide, ops, sites),
        );
        match results {
            (Ok(b), Ok(c), Ok(p)) => {
                for ((vb, vc), vp) in b.iter().zip(&c.velocity).zip(&p.velocity) {
                    gradient_vs_commutator = gradient_vs_commutator.max((vb - vc).abs());
                    pv_vs_gradient = pv_vs_gradient.max((vb - vp).abs());
                }
            }
            (Err(Error::Node { .. }), Err(Error::Node { .. }), Err(Error::Node { .. })) => nodes += 1,
            (b, c, p) => {
                for r in [b.err(), c.err(), p.err()].into_iter().flatten() {
                    if !matches!(r, Error::Node { .. }) {
                        return Err(r);
                    }
                }
                node_mismatches += 1;
                continue;
            }
        }
        let atom = Atom::new(sites.clone());
        match (
            atom_rates(&guide, ops, &atom, HamiltonianPart::Full),
            pv_rates(&guide, ops, &atom, HamiltonianPart::Full),
        ) {
            (Ok(row), Ok(pv)) => {
                for (dest, rate) in pv {
                    let direct = row.rate_to(&dest);
                    pv_vs_direct_rates = pv_vs_direct_rates.max((rate - direct).abs() / direct.abs().max(1.0));
                }
            }
            (Err(Error::Node { .. }), Err(Error::Node { .. })) => {}
            (Err(Error::Node { .. }), Ok(_)) | (Ok(_), Err(Error::Node { .. })) => node_mismatches += 1,
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    }
    let checks = vec![
        outcome(
            "velocity: gradient vs commutator",
            gradient_vs_commutator,
            VELOCITY_TOLERANCE,
        ),
        outcome(
            "velocity: projection-valued measure vs gradient",
            pv_vs_gradient,
            VELOCITY_TOLERANCE,
        ),
        outcome(
            "rates: projection-valued measure vs matrix elements",
            pv_vs_direct_rates,
            RATE_TOLERANCE,
        ),
        outcome("node reported consistently", node_mismatches as f64, 0.0),
    ];
    let passed = checks.iter().all(|c| c.passed);
    Ok(PvEquivalenceReport {
        configurations: configurations.len(),
        nodes,
        checks,
        passed,
    })
}

/// One rung of a refinement ladder and its measured distance to the target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub label: String,
    pub n_sites: usize,
    pub dt: f64,
    pub trajectories: usize,
    pub t: f64,
    pub tv: f64,
    pub sector_mass_error: f64,
}

/// Runs `case` for each rung and tabulates its TV distance to the target at
/// time `t`, on `coarse_cells` cells common to all rungs.
pub fn convergence_study<C>(
    rungs: &[C],
    t: f64,
    coarse_cells: usize,
    mut run: impl FnMut(&C) -> Result<(String, usize, f64, Vec<Trajectory>, FockVector)>,
) -> Result<Vec<ConvergenceRow>> {
    let mut rows = Vec::with_capacity(rungs.len());
    for rung in rungs {
        let (label, n_sites, dt, ensemble, psi_t) = run(rung)?;
        if n_sites % coarse_cells != 0 {
            return Err(Error::validation("coarse_cells", "must divide every grid size"));
        }
        let report = equivariance_test(
            &ensemble,
            &[(t, &psi_t)],
            &Thresholds::default(),
            n_sites / coarse_cells,
            Some(dt),
        )?;
        let time = &report.times[0];
        rows.push(ConvergenceRow {
            label,
            n_sites,
            dt,
            trajectories: ensemble.len(),
            t,
            tv: time.tv,
            sector_mass_error: time
                .sector_masses
                .iter()
                .map(|s| (s.empirical - s.target).abs())
                .fold(0.0, f64::max),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockgrid::{sample_configuration, FockSpace};
    use crate::model::{DiracParams, FormFactor, ModelMode, ModelSpec};
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ops(n_sites: usize, n_max: usize, g: f64) -> OperatorBlocks {
        OperatorBlocks::build(&ModelSpec {
            grid: GridSpec::new(n_sites as f64, n_sites).unwrap(),
            n_max,
            mass: 1.0,
            hbar: 1.0,
            coupling: g,
            form_factor: FormFactor::default(),
            mode: ModelMode::SchrodingerFock,
            dirac: DiracParams::default(),
        })
        .unwrap()
    }

    #[test]
    fn tv_basics() {
        let a: Distribution = [(Atom::new(vec![0]), 0.5), (Atom::new(vec![1]), 0.5)].into();
        let b: Distribution = [(Atom::new(vec![2]), 1.0)].into();
        assert_eq!(total_variation(&a, &a), 0.0);
        assert_eq!(total_variation(&a, &b), 1.0);
    }

    #[test]
    fn chi_square_pools_small_bins() {
        let target: Distribution = (0..10)
            .map(|k| (Atom::new(vec![k]), if k < 2 { 0.45 } else { 0.1 / 8.0 }))
            .collect();
        let counts: BTreeMap<Atom, usize> = [
            (Atom::new(vec![0]), 45),
            (Atom::new(vec![1]), 45),
            (Atom::new(vec![5]), 10),
        ]
        .into();
        let r = chi_square(&counts, &target);
        assert_eq!(r.pooled_bins, 8);
        assert_eq!(r.degrees_of_freedom, 2);
        assert!(r.statistic.abs() < 1e-12);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        let impossible: BTreeMap<Atom, usize> = [
            (Atom::new(vec![0]), 50),
            (Atom::new(vec![1]), 50),
            (Atom::new(vec![11]), 1),
        ]
        .into();
        let r = chi_square(&impossible, &target);
        assert_eq!(r.p_value, 0.0);
        let point: Distribution = [(Atom::vacuum(), 1.0)].into();
        let moved: BTreeMap<Atom, usize> = [(Atom::vacuum(), 10), (Atom::new(vec![3]), 10)].into();
        assert_eq!(chi_square(&moved, &point).p_value, 0.0);
    }

    #[test]
    fn direct_samples_of_target_pass() {
        let space = FockSpace::new(GridSpec::new(6.0, 6).unwrap(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let psi = FockVector::random(space, &mut rng);
        let samples: Vec<Vec<f64>> = (0..10_000)
            .map(|_| {
                sample_configuration(&psi, &mut rng, false)
                    .unwrap()
                    .positions()
                    .to_vec()
            })
            .collect();
        let r = compare_at_time(0.0, samples.iter().map(Vec::as_slice), &psi, 1, &Thresholds::default()).unwrap();
        assert!(r.passed, "{r:?}");
        let other = FockVector::random(space, &mut rng);
        let r = compare_at_time(
            0.0,
            samples.iter().map(Vec::as_slice),
            &other,
            1,
            &Thresholds::default(),
        )
        .unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn generator_identity_on_random_and_real_states() {
        let ops = ops(5, 2, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let psi = FockVector::random(*ops.space(), &mut rng);
        let r = generator_identity_check(&psi, &ops).unwrap();
        assert!(r.passed, "{r:?}");
        let rotated = psi.scaled(Complex64::from_polar(1.0, 0.7));
        assert!(generator_identity_check(&rotated, &ops).unwrap().passed);
        let real = FockVector::from_fn(*ops.space(), |n, k| {
            Complex64::new(1.0 + n as f64 * k.iter().sum::<usize>() as f64, 0.0)
        });
        assert_eq!(generator_identity_check(&real, &ops).unwrap().max_error, 0.0);
    }

    #[test]
    fn pv_equivalence_on_random_state() {
        let ops = ops(5, 2, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let psi = FockVector::random(*ops.space(), &mut rng);
        let configs: Vec<Vec<usize>> = vec![vec![], vec![0], vec![3], vec![1, 1], vec![4, 2]];
        let r = pv_equivalence_check(&psi, &ops, &configs).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn pv_equivalence_reports_nodes_consistently() {
        let ops = ops(5, 1, 0.8);
        let psi = FockVector::vacuum(*ops.space());
        let r = pv_equivalence_check(&psi, &ops, &[vec![2], vec![]]).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.nodes, 1);
    }
}
