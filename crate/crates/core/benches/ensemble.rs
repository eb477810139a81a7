use bellflow::fockgrid::{FockVector, GridSpec};
use bellflow::model::{DiracParams, FormFactor, ModelMode, ModelSpec, OperatorBlocks};
use bellflow::process::{ProcessMode, ProcessPlan, Simulation};
use bellflow::propagator::Method;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn ensemble(c: &mut Criterion) {
    let spec = ModelSpec {
        grid: GridSpec::new(8.0, 8).unwrap(),
        n_max: 2,
        mass: 1.0,
        hbar: 1.0,
        coupling: 1.0,
        form_factor: FormFactor::Gaussian {
            width: Some(2.0),
            center: None,
        },
        mode: ModelMode::SchrodingerFock,
        dirac: DiracParams::default(),
    };
    let ops = OperatorBlocks::build(&spec).unwrap();
    let psi = FockVector::vacuum(*ops.space());
    let mut group = c.benchmark_group("ensemble");
    group.sample_size(10);
    for mode in [ProcessMode::Lattice, ProcessMode::Continuum] {
        let plan = ProcessPlan {
            mode,
            dt: 0.005,
            t_final: 0.5,
            sample_times: vec![0.5],
            jitter: false,
        };
        let sim = Simulation::new(&ops, &psi, plan, Method::Eigendecomposition).unwrap();
        let label = format!("{mode:?}");
        group.bench_with_input(BenchmarkId::new("sequential", &label), &sim, |b, sim| {
            b.iter(|| sim.run_ensemble_sequential(500, 1))
        });
        group.bench_with_input(BenchmarkId::new("parallel", &label), &sim, |b, sim| {
            b.iter(|| sim.run_ensemble(500, 1, None).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, ensemble);
criterion_main!(benches);
