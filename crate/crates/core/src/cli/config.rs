use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::Thresholds;
use crate::error::{Error, Result};
use crate::flow::{velocity_law, FreeDynamics};
use crate::model::{InitialState, ModelMode, ModelSpec};
use crate::process::{ProcessMode, ProcessPlan};
use crate::propagator::{Method, PropagatorPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub initial_state: InitialState,
    pub propagator: PropagatorSection,
    #[serde(default)]
    pub process: ProcessSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagatorSection {
    /// Chosen from the Fock-space dimension when absent.
    #[serde(default)]
    pub method: Option<Method>,
    /// Crank–Nicolson step for `evolve`.
    pub dt_psi: f64,
    pub t_final: f64,
    /// Defaults to `[t_final]`.
    #[serde(default)]
    pub sample_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSection {
    #[serde(default = "default_mode")]
    pub mode: ProcessMode,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default)]
    pub root_seed: u64,
    #[serde(default)]
    pub jitter: bool,
}

fn default_mode() -> ProcessMode {
    ProcessMode::Continuum
}

fn default_dt() -> f64 {
    0.005
}

fn default_trajectories() -> usize {
    10_000
}

impl Default for ProcessSection {
    fn default() -> Self {
        ProcessSection {
            mode: default_mode(),
            dt: default_dt(),
            trajectories: default_trajectories(),
            root_seed: 0,
            jitter: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareAgainst {
    /// `|Psi_t|^2` at each sample time.
    #[default]
    Evolved,
    /// `|Psi_0|^2` at every sample time: a negative control.
    Initial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "default_tv")]
    pub tv_max: f64,
    #[serde(default = "default_p")]
    pub p_min: f64,
    /// Consecutive sites merged into one histogram cell.
    #[serde(default = "default_coarse")]
    pub coarse_factor: usize,
    #[serde(default)]
    pub compare_against: CompareAgainst,
}

fn default_tv() -> f64 {
    Thresholds::default().tv_max
}

fn default_p() -> f64 {
    Thresholds::default().p_min
}

fn default_coarse() -> usize {
    1
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            tv_max: default_tv(),
            p_min: default_p(),
            coarse_factor: 1,
            compare_against: CompareAgainst::Evolved,
        }
    }
}

impl AnalysisSection {
    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            tv_max: self.tv_max,
            p_min: self.p_min,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub directory: PathBuf,
    #[serde(default = "all_formats")]
    pub formats: Vec<Format>,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn all_formats() -> Vec<Format> {
    vec![Format::Jsonl, Format::Csv, Format::Json]
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: default_dir(),
            formats: all_formats(),
        }
    }
}

impl OutputSection {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::validation("config", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.model.mode == ModelMode::KleinGordon {
            velocity_law(FreeDynamics::KleinGordon)?;
        }
        match self.model.mode {
            ModelMode::SchrodingerFock => self.initial_state.validate(&self.model.space()?)?,
            _ => {
                self.initial_state.build_spinor(&self.model.grid)?;
            }
        }
        self.propagator_plan(Method::Eigendecomposition).validate()?;
        if self.process.trajectories == 0 {
            return Err(Error::validation("process.trajectories", "must be at least 1"));
        }
        if !(self.process.dt.is_finite() && self.process.dt > 0.0) {
            return Err(Error::validation("process.dt", "must be positive"));
        }
        self.analysis.thresholds().validate()?;
        let c = self.analysis.coarse_factor;
        if c == 0 || !self.model.grid.n_sites().is_multiple_of(c) {
            return Err(Error::validation(
                "analysis.coarse_factor",
                "must be a positive divisor of n_sites",
            ));
        }
        if self.output.formats.is_empty() {
            return Err(Error::validation("output.formats", "must not be empty"));
        }
        Ok(())
    }

    pub fn sample_times(&self) -> Vec<f64> {
        if self.propagator.sample_times.is_empty() {
            vec![self.propagator.t_final]
        } else {
            self.propagator.sample_times.clone()
        }
    }

    pub fn method_for(&self, dim: usize) -> Method {
        self.propagator.method.unwrap_or_else(|| Method::for_dimension(dim))
    }

    pub fn propagator_plan(&self, method: Method) -> PropagatorPlan {
        PropagatorPlan {
            method,
            dt_psi: self.propagator.dt_psi,
            t_final: self.propagator.t_final,
            sample_times: self.sample_times(),
        }
    }

    pub fn process_plan(&self) -> ProcessPlan {
        ProcessPlan {
            mode: self.process.mode,
            dt: self.process.dt,
            t_final: self.propagator.t_final,
            sample_times: self.sample_times(),
            jitter: self.process.jitter,
        }
    }

    /// SHA-256 of the canonical JSON form of the effective configuration.
    /// The output section is left out: where results go does not change them.
    pub fn hash(&self) -> String {
        let mut inputs = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = inputs.as_object_mut() {
            map.remove("output");
        }
        let bytes = serde_json::to_vec(&inputs).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "model": {"grid": {"length": 8.0, "n_sites": 8}, "n_max": 2, "coupling": 1.0},
        "propagator": {"dt_psi": 0.01, "t_final": 1.0}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.sample_times(), vec![1.0]);
        assert_eq!(c.process.trajectories, 10_000);
        assert_eq!(c.initial_state, InitialState::Vacuum);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("\"n_max\": 2", "\"n_max\": 2, \"spin\": 1");
        assert!(RunConfig::parse(&text).unwrap_err().is_validation());
    }

    #[test]
    fn bad_values_name_their_key() {
        let c = RunConfig::parse(&MINIMAL.replace("\"coupling\": 1.0", "\"coupling\": 1.0, \"mass\": -1")).unwrap();
        match c.validate() {
            Err(Error::Validation { key, .. }) => assert_eq!(key, "model.mass"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::parse(MINIMAL).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.process.root_seed = 9;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let mut c = a.clone();
        c.output.directory = "elsewhere".into();
        assert_eq!(a.hash(), c.hash());
    }
}
