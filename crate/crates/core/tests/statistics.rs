//! Monte Carlo scaling of the sampler and of ensemble histograms.

mod common;

use bellflow::analysis::{convergence_study, histogram, target_distribution, total_variation};
use bellflow::fockgrid::{sample_configuration, FockVector};
use bellflow::model::OperatorBlocks;
use bellflow::process::{ProcessMode, ProcessPlan, Simulation};
use bellflow::propagator::Method;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn sampler_matches_density_within_statistical_bound() {
    let ops = OperatorBlocks::build(&common::spec(6.0, 6, 2, 1.0)).unwrap();
    let psi = FockVector::random(*ops.space(), &mut ChaCha8Rng::seed_from_u64(5));
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let m = 100_000;
    let samples: Vec<_> = (0..m).map(|_| sample_configuration(&psi, &mut rng, true).unwrap()).collect();
    let counts = histogram(ops.space().grid(), samples.iter().map(|q| q.positions()), 1);
    let empirical = counts.iter().map(|(a, &c)| (a.clone(), c as f64 / m as f64)).collect();
    let target = target_distribution(&psi, 1).unwrap();
    let k = ops.space().all_atoms().len() as f64;
    assert!(total_variation(&empirical, &target) <= 3.0 * (k / m as f64).sqrt());
}

#[test]
fn doubling_ensemble_shrinks_tv_by_root_two() {
    let ops = OperatorBlocks::build(&common::spec(6.0, 6, 2, 1.0)).unwrap();
    let psi0 = FockVector::vacuum(*ops.space());
    let plan = ProcessPlan {
        mode: ProcessMode::Lattice,
        dt: 0.002,
        t_final: 0.6,
        sample_times: vec![0.6],
        jitter: false,
    };
    let sim = Simulation::new(&ops, &psi0, plan, Method::Eigendecomposition).unwrap();
    let psi_t = sim.mesh().state(sim.mesh().len() - 1).clone();
    let repeats = 24;
    let mut mean = [0.0; 2];
    for r in 0..repeats {
        let rows = convergence_study(&[500usize, 1000], 0.6, 6, |&m| {
            let ensemble = sim.run_ensemble(m, 1000 + r, None)?;
            Ok((format!("M={m}"), 6, 0.002, ensemble, psi_t.clone()))
        })
        .unwrap();
        for (acc, row) in mean.iter_mut().zip(&rows) {
            *acc += row.tv / repeats as f64;
        }
    }
    let ratio = mean[1] / mean[0];
    assert!((ratio - 0.5f64.sqrt()).abs() <= 0.3 * 0.5f64.sqrt(), "mean TV {mean:?}, ratio {ratio}");
}
