//! Library results checked against independent constructions in the
//! occupation-number basis (see `common`).

mod common;

use bellflow::flow::{grid_velocity, FlowParams};
use bellflow::fockgrid::{atom_basis, Atom, FockVector, GuidingState};
use bellflow::jumps::{atom_rates, jump_rates, net_flux};
use bellflow::model::{HamiltonianPart, OperatorBlocks};
use bellflow::propagator::{density_rate, evolve, Method, PropagatorPlan};
use bellflow::{fockgrid::Configuration, Complex64};
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn sector_masses_match_flat_dot_product() {
    let s = spec(6.0, 6, 3, 1.0);
    let space = s.space().unwrap();
    let psi = FockVector::random(space, &mut ChaCha8Rng::seed_from_u64(4));
    let flat = psi.as_slice();
    let a = s.grid.spacing();
    let mut offset = 0;
    for n in 0..=3 {
        let len = 6usize.pow(n as u32);
        let factorial: f64 = (1..=n).product::<usize>() as f64;
        let direct: f64 = flat[offset..offset + len]
            .iter()
            .map(|z| z.re * z.re + z.im * z.im)
            .sum::<f64>()
            * a.powi(n as i32)
            / factorial;
        assert!((psi.sector_norm_sqr(n) - direct).abs() < 1e-14);
        offset += len;
    }
    assert_eq!(offset, flat.len());
}

#[test]
fn hamiltonian_matches_occupation_construction() {
    let s = spec(5.0, 5, 3, 0.8);
    let ops = OperatorBlocks::build(&s).unwrap();
    let basis = OccupationBasis::new(5, 3);
    let (h0, hi) = occupation_hamiltonian(&s, &basis);
    let (atoms, v) = atom_basis(ops.space());
    assert_eq!(atoms.len(), basis.len());
    let project = |h: &bellflow::sparse::CsrMatrix<f64>| v.transpose().matmul(h).matmul(&v);
    let (p0, pi) = (project(ops.h0()), project(ops.h_int()));
    let idx: Vec<usize> = atoms
        .iter()
        .map(|a| basis.index_of(&OccupationBasis::occupation_of(a, 5)))
        .collect();
    let mut worst: f64 = 0.0;
    for (i, &oi) in idx.iter().enumerate() {
        for (j, &oj) in idx.iter().enumerate() {
            worst = worst.max((p0.get(i, j) - h0[(oi, oj)]).abs());
            worst = worst.max((pi.get(i, j) - hi[(oi, oj)]).abs());
        }
    }
    assert!(worst < 1e-12, "{worst}");
}

#[test]
fn evolution_matches_dense_exponential() {
    let s = spec(6.0, 6, 2, 0.9);
    let ops = OperatorBlocks::build(&s).unwrap();
    let basis = OccupationBasis::new(6, 2);
    let (h0, hi) = occupation_hamiltonian(&s, &basis);
    let psi0 = FockVector::random(*ops.space(), &mut ChaCha8Rng::seed_from_u64(8));
    let c0 = to_occupation(&psi0, &basis);
    for method in [Method::Eigendecomposition, Method::CrankNicolson] {
        let plan = PropagatorPlan {
            method,
            dt_psi: 1e-3,
            t_final: 0.7,
            sample_times: vec![0.7],
        };
        let psi_t = &evolve(&psi0, &ops, &plan).unwrap().states[0];
        let expected = expm_apply(&(&h0 + &hi), 0.7, 1.0, &c0);
        let err = max_abs_diff(&to_occupation(psi_t, &basis), &expected);
        let tol = if method == Method::Eigendecomposition {
            1e-10
        } else {
            1e-6
        };
        assert!(err < tol, "{method:?}: {err}");
    }
}

#[test]
fn creation_profile_matches_dense_matrix_elements() {
    let s = spec(8.0, 8, 1, 0.7);
    let ops = OperatorBlocks::build(&s).unwrap();
    let basis = OccupationBasis::new(8, 1);
    let (h0, hi) = occupation_hamiltonian(&s, &basis);
    let vacuum = FockVector::vacuum(*ops.space());
    let t = 0.05;
    let plan = PropagatorPlan {
        method: Method::Eigendecomposition,
        dt_psi: 0.01,
        t_final: t,
        sample_times: vec![t],
    };
    let psi_t = evolve(&vacuum, &ops, &plan).unwrap().states.remove(0);
    let c = expm_apply(&(&h0 + &hi), t, 1.0, &to_occupation(&vacuum, &basis));
    let guide = GuidingState::new(psi_t);
    let row = jump_rates(&guide, &ops, &Configuration::empty()).unwrap();
    let v0 = basis.index_of(&[0; 8]);
    for k in 0..8 {
        let mut m = [0; 8];
        m[k] = 1;
        let vk = basis.index_of(&m);
        let flux = 2.0 * (c[vk].conj() * hi[(vk, v0)] * c[v0]).im;
        let expected = flux.max(0.0) / c[v0].norm_sqr();
        let got = row.rate_to(&Atom::new(vec![k]));
        assert!(
            (got - expected).abs() < 1e-12 * expected.max(1.0),
            "site {k}: {got} vs {expected}"
        );
        assert!(expected > 0.0);
    }
}

#[test]
fn density_rate_matches_dense_generator_and_flux_sum() {
    let s = spec(6.0, 6, 2, 0.9);
    let ops = OperatorBlocks::build(&s).unwrap();
    let basis = OccupationBasis::new(6, 2);
    let (h0, hi) = occupation_hamiltonian(&s, &basis);
    let h = &h0 + &hi;
    let psi = FockVector::random(*ops.space(), &mut ChaCha8Rng::seed_from_u64(31));
    let c = to_occupation(&psi, &basis);
    let hc: Vec<Complex64> = (0..basis.len())
        .map(|i| (0..basis.len()).map(|j| c[j] * h[(i, j)]).sum())
        .collect();
    let rate = density_rate(&psi, &ops, HamiltonianPart::Full);
    let guide = GuidingState::new(psi.clone());
    for (i, m) in basis.states.iter().enumerate() {
        let atom = Atom::new(OccupationBasis::sites_of(m));
        let dense = 2.0 * (c[i].conj() * hc[i]).im;
        assert!((rate.atom_rate(&atom) - dense).abs() < 1e-12);
        let inflow: f64 = (0..basis.len())
            .filter(|&j| j != i && h[(i, j)] != 0.0)
            .map(|j| {
                let other = Atom::new(OccupationBasis::sites_of(&basis.states[j]));
                net_flux(&guide, &ops, HamiltonianPart::Full, &atom, &other).unwrap()
            })
            .sum();
        assert!((inflow - dense).abs() < 1e-10);
    }
}

#[test]
fn plane_wave_hop_flux_is_bohm_current() {
    let s = spec(16.0, 16, 1, 0.0);
    let ops = OperatorBlocks::build(&s).unwrap();
    let grid = s.grid;
    let p = 2.0 * std::f64::consts::PI * 3.0 / grid.length();
    let mut psi = FockVector::from_fn(*ops.space(), |n, k| {
        if n == 1 {
            Complex64::from_polar(1.0, p * grid.site_position(k[0]))
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    psi.normalize();
    let guide = GuidingState::new(psi.clone());
    let params = FlowParams::from(&ops);
    for k in 0..16 {
        let here = Atom::new(vec![k]);
        let right = Atom::new(vec![grid.neighbor(k, 1)]);
        let left = Atom::new(vec![grid.neighbor(k, -1)]);
        let row = atom_rates(&guide, &ops, &here, HamiltonianPart::Full).unwrap();
        assert!(row.rate_to(&right) > 0.0);
        assert_eq!(row.rate_to(&left), 0.0);
        let flux = net_flux(&guide, &ops, HamiltonianPart::Full, &right, &here).unwrap();
        let current = psi.amplitude(&[k]).norm_sqr() * grid_velocity(&guide, &params, &[k]).unwrap()[0];
        assert!((flux - current).abs() < 1e-10, "{flux} vs {current}");
    }
}
