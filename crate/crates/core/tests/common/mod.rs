//! Helpers shared by the integration tests, and an occupation-number-basis
//! construction of the model written without the library's operator code.

#![allow(dead_code)]

use std::collections::HashMap;

use bellflow::fockgrid::{Atom, FockVector, GridSpec};
use bellflow::model::{DiracParams, FormFactor, ModelMode, ModelSpec};
use bellflow::Complex64;
use nalgebra::DMatrix;

pub fn spec(length: f64, n_sites: usize, n_max: usize, coupling: f64) -> ModelSpec {
    ModelSpec {
        grid: GridSpec::new(length, n_sites).unwrap(),
        n_max,
        mass: 1.0,
        hbar: 1.0,
        coupling,
        form_factor: FormFactor::Gaussian {
            width: Some(2.0 * length / n_sites as f64),
            center: None,
        },
        mode: ModelMode::SchrodingerFock,
        dirac: DiracParams::default(),
    }
}

/// All occupation vectors with at most `n_max` particles, vacuum first,
/// sorted by particle number.
pub struct OccupationBasis {
    pub n_sites: usize,
    pub states: Vec<Vec<usize>>,
    index: HashMap<Vec<usize>, usize>,
}

impl OccupationBasis {
    pub fn new(n_sites: usize, n_max: usize) -> Self {
        let mut states = Vec::new();
        fn fill(prefix: &mut Vec<usize>, n_sites: usize, left: usize, out: &mut Vec<Vec<usize>>) {
            if prefix.len() == n_sites {
                out.push(prefix.clone());
                return;
            }
            for m in 0..=left {
                prefix.push(m);
                fill(prefix, n_sites, left - m, out);
                prefix.pop();
            }
        }
        fill(&mut Vec::new(), n_sites, n_max, &mut states);
        states.sort_by_key(|m| m.iter().sum::<usize>());
        let index = states.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        OccupationBasis { n_sites, states, index }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn index_of(&self, m: &[usize]) -> usize {
        self.index[m]
    }

    pub fn occupation_of(atom: &Atom, n_sites: usize) -> Vec<usize> {
        let mut m = vec![0; n_sites];
        for &k in atom.sites() {
            m[k] += 1;
        }
        m
    }

    pub fn sites_of(m: &[usize]) -> Vec<usize> {
        m.iter()
            .enumerate()
            .flat_map(|(k, &c)| std::iter::repeat_n(k, c))
            .collect()
    }

    /// `a^†_k` with the top sector truncated.
    pub fn creation(&self, k: usize, n_max: usize) -> DMatrix<f64> {
        let d = self.len();
        let mut a = DMatrix::zeros(d, d);
        for (j, m) in self.states.iter().enumerate() {
            if m.iter().sum::<usize>() == n_max {
                continue;
            }
            let mut up = m.clone();
            up[k] += 1;
            a[(self.index_of(&up), j)] = ((m[k] + 1) as f64).sqrt();
        }
        a
    }
}

pub fn profile(spec: &ModelSpec) -> Vec<f64> {
    let g = &spec.grid;
    let a = g.spacing();
    let FormFactor::Gaussian { width, .. } = spec.form_factor else {
        panic!("oracle supports the Gaussian source only")
    };
    let w = width.unwrap();
    let raw: Vec<f64> = (0..g.n_sites())
        .map(|k| {
            let mut d = (k as f64 * a - g.length() / 2.0).abs();
            d = d.min(g.length() - d);
            (-d * d / (2.0 * w * w)).exp()
        })
        .collect();
    let norm = raw.iter().map(|p| a * p * p).sum::<f64>().sqrt();
    raw.into_iter().map(|p| p / norm).collect()
}

/// Dense `(H0, H_I)` in the occupation basis: `H0 = sum t_kl a^†_k a_l` with
/// the 3-point Laplacian and `H_I = g sqrt(a) sum_k phi_k (a_k + a^†_k)`.
pub fn occupation_hamiltonian(spec: &ModelSpec, basis: &OccupationBasis) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = basis.n_sites;
    let a = spec.grid.spacing();
    let t = spec.hbar * spec.hbar / (2.0 * spec.mass * a * a);
    let create: Vec<DMatrix<f64>> = (0..n).map(|k| basis.creation(k, spec.n_max)).collect();
    let d = basis.len();
    let mut h0 = DMatrix::zeros(d, d);
    let mut hi = DMatrix::zeros(d, d);
    let phi = profile(spec);
    for k in 0..n {
        h0 += &create[k] * create[k].transpose() * (2.0 * t);
        for l in [(k + 1) % n, (k + n - 1) % n] {
            h0 -= &create[k] * create[l].transpose() * t;
        }
        let c = spec.coupling * a.sqrt() * phi[k];
        hi += (&create[k] + create[k].transpose()) * c;
    }
    (h0, hi)
}

/// Occupation amplitudes `c(m) = a^{n/2} Psi_n(k) / sqrt(prod m_k!)`.
pub fn to_occupation(psi: &FockVector, basis: &OccupationBasis) -> Vec<Complex64> {
    let a = psi.grid().spacing();
    basis
        .states
        .iter()
        .map(|m| {
            let sites = OccupationBasis::sites_of(m);
            let fact: f64 = m.iter().map(|&c| (1..=c).product::<usize>() as f64).product();
            psi.amplitude(&sites) * a.powf(sites.len() as f64 / 2.0) / fact.sqrt()
        })
        .collect()
}

pub fn expm_apply(h: &DMatrix<f64>, t: f64, hbar: f64, v: &[Complex64]) -> Vec<Complex64> {
    let hc = h.map(|x| Complex64::new(0.0, -t / hbar * x));
    let u = hc.exp();
    let x = nalgebra::DVector::from_column_slice(v);
    (u * x).iter().copied().collect()
}

pub fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}
