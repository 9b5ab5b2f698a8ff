//! Experiment configuration files.
//!
//! A config is a TOML document; every table rejects unknown keys. All keys
//! are optional and default as listed:
//!
//! ```toml
//! preset = "bit_flip"            # bit_flip | amplitude_damping | dephasing_direction
//! p = 0.1
//! theta0 = 1.0
//! n = [2, 3, 4]                  # or n = { start = 2, end = 10, step = 1 }
//! mode = "arbitrary_cptp"        # identical_cptp | variational_local | variational_global
//! ancilla_dim = 1
//! seed = 0                       # overrides settings.seed
//! warm_start = true              # chain N -> N+1 in ascending order
//! starts = 1                     # seeded starts per point; the best is kept
//! verify = false                 # dense cross-check for N <= 4
//! out = "results"
//! baselines = ["control_free_plus", "classical_nF1", "near_inverse_control"]
//! near_inverse_eps = 0.01
//!
//! [ansatz]                       # required by the variational modes
//! n_qubits = 1
//! layers = 1
//!
//! [settings]                     # optimizer settings, see RunSettings
//! max_outer_iters = 200
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use seqmetro_core::channels::{ParamChannel, Preset};
use seqmetro_core::optimize::{ControlMode, RunSettings};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Baseline {
    #[serde(rename = "control_free_plus")]
    ControlFreePlus,
    #[serde(rename = "classical_nF1")]
    ClassicalNf1,
    #[serde(rename = "near_inverse_control")]
    NearInverseControl,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [Self::ControlFreePlus, Self::ClassicalNf1, Self::NearInverseControl];

    pub fn name(self) -> &'static str {
        match self {
            Self::ControlFreePlus => "control_free_plus",
            Self::ClassicalNf1 => "classical_nF1",
            Self::NearInverseControl => "near_inverse_control",
        }
    }
}

/// Query counts as an explicit list or an inclusive range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NSpec {
    List(Vec<usize>),
    Range(NRange),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NRange {
    pub start: usize,
    pub end: usize,
    #[serde(default = "one")]
    pub step: usize,
}

fn one() -> usize {
    1
}

impl NSpec {
    /// Ascending, deduplicated values.
    pub fn values(&self) -> Vec<usize> {
        let mut v = match self {
            NSpec::List(v) => v.clone(),
            NSpec::Range(r) => (r.start..=r.end).step_by(r.step.max(1)).collect(),
        };
        v.sort_unstable();
        v.dedup();
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnsatzConfig {
    pub n_qubits: usize,
    pub layers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub p: f64,
    pub theta0: f64,
    pub n: NSpec,
    pub mode: ControlMode,
    pub ancilla_dim: usize,
    pub ansatz: Option<AnsatzConfig>,
    pub seed: Option<u64>,
    pub warm_start: bool,
    pub starts: usize,
    pub verify: bool,
    pub out: PathBuf,
    pub baselines: Vec<Baseline>,
    pub near_inverse_eps: f64,
    pub settings: RunSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: Preset::BitFlip,
            p: 0.1,
            theta0: 1.0,
            n: NSpec::List(vec![2, 3, 4]),
            mode: ControlMode::ArbitraryCptp,
            ancilla_dim: 1,
            ansatz: None,
            seed: None,
            warm_start: true,
            starts: 1,
            verify: false,
            out: PathBuf::from("results"),
            baselines: Baseline::ALL.to_vec(),
            near_inverse_eps: 0.01,
            settings: RunSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn n_values(&self) -> Vec<usize> {
        self.n.values()
    }

    pub fn channel(&self) -> Result<ParamChannel, CliError> {
        self.preset.build(self.p).map_err(|e| CliError::Config(format!("p: {e}")))
    }

    /// Settings with the top-level seed and ansatz depth applied.
    pub fn effective_settings(&self) -> RunSettings {
        let mut s = self.settings.clone();
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(a) = self.ansatz {
            s.ansatz_layers = Some(a.layers);
        }
        s
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: String| Err(CliError::Config(format!("{field}: {msg}")));
        let ns = self.n_values();
        if ns.is_empty() {
            return bad("n", "no query counts given".into());
        }
        if ns[0] == 0 {
            return bad("n", "values must be at least 1".into());
        }
        if let NSpec::Range(r) = &self.n {
            if r.step == 0 || r.start > r.end {
                return bad("n", format!("empty or invalid range {}..={} step {}", r.start, r.end, r.step));
            }
        }
        if !(0.0..=1.0).contains(&self.p) {
            return bad("p", format!("{} is outside [0, 1]", self.p));
        }
        if !self.theta0.is_finite() {
            return bad("theta0", "must be finite".into());
        }
        if self.ancilla_dim == 0 {
            return bad("ancilla_dim", "must be at least 1".into());
        }
        if self.starts == 0 {
            return bad("starts", "must be at least 1".into());
        }
        if !self.near_inverse_eps.is_finite() {
            return bad("near_inverse_eps", "must be finite".into());
        }
        let dim = 2 * self.ancilla_dim;
        match (self.mode.is_variational(), self.ansatz) {
            (true, None) => return bad("ansatz", format!("mode {} needs an [ansatz] table", self.mode.name())),
            (false, Some(_)) => return bad("ansatz", format!("mode {} takes no ansatz", self.mode.name())),
            (true, Some(a)) => {
                if a.layers == 0 {
                    return bad("ansatz.layers", "must be at least 1".into());
                }
                if 1usize.checked_shl(a.n_qubits as u32) != Some(dim) {
                    return bad(
                        "ansatz.n_qubits",
                        format!("{} qubits do not match system x ancilla dimension {dim}", a.n_qubits),
                    );
                }
            }
            (false, None) => {}
        }
        self.effective_settings().validate().map_err(|e| CliError::Config(format!("settings: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn full_document() {
        let cfg = RunConfig::from_toml(
            r#"
            preset = "amplitude_damping"
            p = 0.1
            n = { start = 2, end = 10, step = 4 }
            mode = "variational_global"
            ancilla_dim = 2
            seed = 9
            baselines = ["classical_nF1"]
            [ansatz]
            n_qubits = 2
            layers = 3
            [settings]
            max_outer_iters = 50
            learning_rate = 0.02
            [settings.sdp]
            tol = 1e-8
            "#,
        )
        .unwrap();
        assert_eq!(cfg.n_values(), vec![2, 6, 10]);
        let s = cfg.effective_settings();
        assert_eq!((s.seed, s.max_outer_iters, s.ansatz_layers), (9, 50, Some(3)));
        assert_eq!(s.sdp.tol, 1e-8);
        assert_eq!(cfg.baselines, vec![Baseline::ClassicalNf1]);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_errors() {
        for doc in ["presett = \"bit_flip\"", "[settings]\nmax_outer_iter = 3", "[settings.sdp]\ntoll = 1e-3"] {
            let err = RunConfig::from_toml(doc).unwrap_err().to_string();
            assert!(err.contains("unknown field"), "{err}");
            assert!(err.contains("line"), "{err}");
        }
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let cases = [
            ("n = [0, 3]", "n:"),
            ("n = []", "n:"),
            ("p = 1.5", "p:"),
            ("ancilla_dim = 0", "ancilla_dim:"),
            ("mode = \"variational_local\"", "ansatz:"),
            ("mode = \"variational_local\"\n[ansatz]\nn_qubits = 2\nlayers = 1", "ansatz.n_qubits:"),
            ("[ansatz]\nn_qubits = 1\nlayers = 1", "ansatz:"),
            ("[settings]\nrel_tol = -1.0", "settings:"),
        ];
        for (doc, field) in cases {
            let err = RunConfig::from_toml(doc).unwrap_err().to_string();
            assert!(err.contains(field), "{doc:?} -> {err}");
        }
    }

    #[test]
    fn unsorted_list_is_ordered() {
        let cfg = RunConfig::from_toml("n = [5, 2, 5, 3]").unwrap();
        assert_eq!(cfg.n_values(), vec![2, 3, 5]);
    }
}
