//! Trajectories of the jump process: deterministic flow between stochastic
//! creation, annihilation (and, on the lattice, hopping) events.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{midpoint_step, FlowParams};
use crate::fockgrid::{density, Configuration, ConfigurationSampler, FockVector};
use crate::jumps::{jump_rates, lattice_rates, sample_jump, JumpKind};
use crate::model::OperatorBlocks;
use crate::propagator::{Method, PsiMesh};

pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;

/// Consecutive node-frozen steps tolerated before a trajectory fails.
pub const MAX_FROZEN_STEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessMode {
    /// Particles move along the velocity field; the interaction drives jumps.
    Continuum,
    /// All motion, free motion included, is jumps generated by the full `H`.
    Lattice,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessPlan {
    pub mode: ProcessMode,
    /// Step for both the flow and the jump draw.
    pub dt: f64,
    pub t_final: f64,
    /// Times at which configurations are recorded; multiples of `dt`.
    pub sample_times: Vec<f64>,
    /// Spread initial positions uniformly over their cells.
    pub jitter: bool,
}

fn steps_of(t: f64, dt: f64, key: &str) -> Result<usize> {
    let s = (t / dt).round();
    if (s * dt - t).abs() > 1e-9 * dt.max(t.abs()) {
        return Err(Error::validation(key, format!("{t} is not a multiple of dt = {dt}")));
    }
    Ok(s as usize)
}

impl ProcessPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::validation("process.dt", "must be positive"));
        }
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return Err(Error::validation("propagator.t_final", "must be positive"));
        }
        steps_of(self.t_final, self.dt, "propagator.t_final")?;
        let mut last = -1.0;
        for &t in &self.sample_times {
            if !(0.0..=self.t_final * (1.0 + 1e-12)).contains(&t) || t <= last {
                return Err(Error::validation(
                    "propagator.sample_times",
                    "must be increasing and within [0, t_final]",
                ));
            }
            steps_of(t, self.dt, "propagator.sample_times")?;
            last = t;
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    fn sample_steps(&self) -> Vec<usize> {
        self.sample_times
            .iter()
            .map(|t| (t / self.dt).round() as usize)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub t: f64,
    pub kind: JumpKind,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub positions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Status {
    Completed,
    Failed { t: f64, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub index: u64,
    /// Root seed; the trajectory draws from ChaCha stream `index` of it.
    pub seed: u64,
    pub mode: ProcessMode,
    pub status: Status,
    pub frozen_steps: usize,
    pub events: Vec<JumpEvent>,
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn is_failed(&self) -> bool {
        matches!(self.status, Status::Failed { .. })
    }

    pub fn sample_at(&self, t: f64) -> Option<&Sample> {
        self.samples
            .iter()
            .find(|s| (s.t - t).abs() <= 1e-9 * t.abs().max(1e-12))
    }
}

/// The random stream of trajectory `index` under `root_seed`.
pub fn trajectory_rng(root_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(index);
    rng
}

/// Immutable inputs shared by every trajectory of a run.
pub struct Simulation<'a> {
    ops: &'a OperatorBlocks,
    mesh: PsiMesh,
    plan: ProcessPlan,
    sampler: ConfigurationSampler,
}

impl<'a> Simulation<'a> {
    /// Evolves `psi0` onto the half-step mesh of `plan`.
    pub fn new(ops: &'a OperatorBlocks, psi0: &FockVector, plan: ProcessPlan, method: Method) -> Result<Self> {
        plan.validate()?;
        let mesh = PsiMesh::build(psi0, ops, method, plan.dt / 2.0, 2 * plan.steps() + 1)?;
        Self::from_mesh(ops, mesh, plan)
    }

    /// Uses a precomputed mesh, which must have spacing `dt/2` and cover
    /// `[0, t_final]`.
    pub fn from_mesh(ops: &'a OperatorBlocks, mesh: PsiMesh, plan: ProcessPlan) -> Result<Self> {
        plan.validate()?;
        if (mesh.step() - plan.dt / 2.0).abs() > 1e-12 * plan.dt || mesh.len() < 2 * plan.steps() + 1 {
            return Err(Error::validation("process.dt", "state mesh does not match the plan"));
        }
        let sampler = ConfigurationSampler::new(&density(mesh.state(0))?, plan.jitter)?;
        Ok(Simulation {
            ops,
            mesh,
            plan,
            sampler,
        })
    }

    pub fn ops(&self) -> &OperatorBlocks {
        self.ops
    }

    pub fn mesh(&self) -> &PsiMesh {
        &self.mesh
    }

    pub fn plan(&self) -> &ProcessPlan {
        &self.plan
    }

    /// Trajectory `index`, started from a draw of the initial density.
    pub fn run_trajectory(&self, root_seed: u64, index: u64) -> Trajectory {
        let mut rng = trajectory_rng(root_seed, index);
        let q0 = self.sampler.sample(&mut rng);
        self.run_from(q0, root_seed, index, &mut rng)
    }

    /// Runs one trajectory from `q0` with the given random stream.
    pub fn run_from(&self, q0: Configuration, root_seed: u64, index: u64, rng: &mut ChaCha8Rng) -> Trajectory {
        let plan = &self.plan;
        let grid = *self.ops.space().grid();
        let params = FlowParams::from(self.ops);
        let sample_steps = plan.sample_steps();
        let mut next_sample = 0;
        let mut q = q0;
        let mut trajectory = Trajectory {
            index,
            seed: root_seed,
            mode: plan.mode,
            status: Status::Completed,
            frozen_steps: 0,
            events: Vec::new(),
            samples: Vec::new(),
        };
        let record = |step: usize, q: &Configuration, trajectory: &mut Trajectory, next: &mut usize| {
            while *next < sample_steps.len() && sample_steps[*next] == step {
                trajectory.samples.push(Sample {
                    t: plan.sample_times[*next],
                    positions: q.positions().to_vec(),
                });
                *next += 1;
            }
        };
        record(0, &q, &mut trajectory, &mut next_sample);
        let mut frozen_run = 0;
        for s in 0..plan.steps() {
            let t = s as f64 * plan.dt;
            let (start, mid) = (self.mesh.guide(2 * s), self.mesh.guide(2 * s + 1));
            let mut frozen = false;
            if plan.mode == ProcessMode::Continuum {
                match midpoint_step(start, mid, &params, &q, plan.dt) {
                    Ok(next) => q = next,
                    Err(Error::Node { .. }) => frozen = true,
                    Err(e) => {
                        trajectory.status = Status::Failed {
                            t,
                            reason: e.to_string(),
                        };
                        return trajectory;
                    }
                }
            }
            let row = match plan.mode {
                ProcessMode::Continuum => jump_rates(mid, self.ops, &q),
                ProcessMode::Lattice => lattice_rates(mid, self.ops, &q),
            };
            match row {
                Ok(row) => match sample_jump(&row, plan.dt, t + 0.5 * plan.dt, rng) {
                    Ok(Some(dest)) => {
                        let after = dest.apply(&q, &grid, rng);
                        trajectory.events.push(JumpEvent {
                            t: t + plan.dt,
                            kind: dest.kind(),
                            before: q.positions().to_vec(),
                            after: after.positions().to_vec(),
                        });
                        q = after;
                    }
                    Ok(None) => {}
                    Err(e) => {
                        trajectory.status = Status::Failed {
                            t,
                            reason: e.to_string(),
                        };
                        return trajectory;
                    }
                },
                Err(Error::Node { .. }) => frozen = true,
                Err(e) => {
                    trajectory.status = Status::Failed {
                        t,
                        reason: e.to_string(),
                    };
                    return trajectory;
                }
            }
            if frozen {
                trajectory.frozen_steps += 1;
                frozen_run += 1;
                if frozen_run > MAX_FROZEN_STEPS {
                    trajectory.status = Status::Failed {
                        t,
                        reason: format!(
                            "configuration {:?} stuck at a node for {frozen_run} steps",
                            q.positions()
                        ),
                    };
                    return trajectory;
                }
            } else {
                frozen_run = 0;
            }
            record(s + 1, &q, &mut trajectory, &mut next_sample);
        }
        trajectory
    }

    /// Trajectories `0..count`, in index order, computed on up to
    /// `parallelism` threads (all available cores when `None`). The result
    /// does not depend on the thread count.
    pub fn run_ensemble(&self, count: usize, root_seed: u64, parallelism: Option<usize>) -> Result<Vec<Trajectory>> {
        if count == 0 {
            return Err(Error::validation("process.trajectories", "must be at least 1"));
        }
        if parallelism == Some(0) {
            return Err(Error::validation("parallelism", "must be at least 1"));
        }
        self.run_ensemble_with(count, root_seed, parallelism)
    }

    #[cfg(feature = "parallel")]
    fn run_ensemble_with(&self, count: usize, root_seed: u64, parallelism: Option<usize>) -> Result<Vec<Trajectory>> {
        use rayon::prelude::*;
        if parallelism == Some(1) {
            return Ok(self.run_ensemble_sequential(count, root_seed));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism.unwrap_or(0))
            .build()
            .map_err(|e| Error::validation("parallelism", e.to_string()))?;
        Ok(pool.install(|| {
            (0..count as u64)
                .into_par_iter()
                .map(|i| self.run_trajectory(root_seed, i))
                .collect()
        }))
    }

    #[cfg(not(feature = "parallel"))]
    fn run_ensemble_with(&self, count: usize, root_seed: u64, _parallelism: Option<usize>) -> Result<Vec<Trajectory>> {
        Ok(self.run_ensemble_sequential(count, root_seed))
    }

    pub fn run_ensemble_sequential(&self, count: usize, root_seed: u64) -> Vec<Trajectory> {
        (0..count as u64).map(|i| self.run_trajectory(root_seed, i)).collect()
    }
}

/// First line of a trajectory file. The timestamp is the only field that
/// differs between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonlHeader {
    pub schema_version: u32,
    pub config_hash: String,
    pub root_seed: u64,
    pub trajectories: usize,
    pub created_unix: u64,
}

pub fn write_jsonl<W: Write>(mut out: W, header: &JsonlHeader, trajectories: &[Trajectory]) -> Result<()> {
    serde_json::to_writer(&mut out, header)?;
    out.write_all(b"\n")?;
    for t in trajectories {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
