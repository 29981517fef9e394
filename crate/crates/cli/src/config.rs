//! Run configuration: a TOML file whose every field has a default taken from
//! the `fcn-paper` preset, so partial files are fine.

use std::fs;
use std::path::{Path, PathBuf};

use paramequiv::artifact::read_param_rows;
use paramequiv::{Adjacency, GridSpec, ModelArch, ParamVector, SampleSpec, SearchConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const PRESETS: &[(&str, &str)] = &[
    ("fcn-paper", include_str!("../presets/fcn-paper.toml")),
    ("fcn-paper-3d", include_str!("../presets/fcn-paper-3d.toml")),
    ("lenet-paper", include_str!("../presets/lenet-paper.toml")),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub epsilons: Vec<f64>,
    /// Not part of the config hash.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub model: ModelConfig,
    pub reference: ReferenceConfig,
    pub samples: SamplesConfig,
    pub search: SearchSection,
    pub grid: GridSection,
    pub binning: BinningSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Lenet5,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationName {
    Relu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub layer_widths: Vec<usize>,
    pub activation: ActivationName,
    pub bias: bool,
}

/// Either inline values or a file holding one parameter row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplesConfig {
    pub count: usize,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSection {
    pub num_starts: usize,
    pub max_steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub accept_threshold: f64,
    pub init_range: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlaneOrigin {
    /// The plane passes through the reference parameters.
    Reference,
    /// The plane passes through the lowest-loss found equivalent.
    FirstFound,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjacencyName {
    Orthogonal,
    Moore,
}

impl From<AdjacencyName> for Adjacency {
    fn from(a: AdjacencyName) -> Self {
        match a {
            AdjacencyName::Orthogonal => Adjacency::Orthogonal,
            AdjacencyName::Moore => Adjacency::Moore,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub dim: usize,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub origin: PlaneOrigin,
    pub independence_tol: f64,
    pub adjacency: AdjacencyName,
    pub marker_tol: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinMethod {
    Naive,
    Anchor,
}

impl BinMethod {
    pub fn name(self) -> &'static str {
        match self {
            BinMethod::Naive => "naive",
            BinMethod::Anchor => "anchor",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BinningSection {
    pub method: BinMethod,
    /// Number of population members used as anchors.
    pub anchors: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 10,
            epsilons: vec![0.0025, 0.005, 0.1],
            out_dir: None,
            model: ModelConfig::default(),
            reference: ReferenceConfig::default(),
            samples: SamplesConfig::default(),
            search: SearchSection::default(),
            grid: GridSection::default(),
            binning: BinningSection::default(),
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Mlp,
            layer_widths: vec![1, 2, 1],
            activation: ActivationName::Relu,
            bias: false,
        }
    }
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            theta: Some(vec![1.0; 4]),
            file: None,
        }
    }
}

impl Default for SamplesConfig {
    fn default() -> Self {
        Self {
            count: 16384,
            lo: -1.0,
            hi: 1.0,
        }
    }
}

impl Default for SearchSection {
    fn default() -> Self {
        let d = SearchConfig::default();
        Self {
            num_starts: d.num_starts,
            max_steps: d.max_steps,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            accept_threshold: d.accept_threshold,
            init_range: d.init_range,
        }
    }
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            dim: 2,
            lo: -2.0,
            hi: 2.0,
            points: 100,
            origin: PlaneOrigin::Reference,
            independence_tol: 1e-6,
            adjacency: AdjacencyName::Orthogonal,
            marker_tol: 1e-6,
        }
    }
}

impl Default for BinningSection {
    fn default() -> Self {
        Self {
            method: BinMethod::Anchor,
            anchors: 10,
        }
    }
}

pub fn preset(name: &str) -> Result<RunConfig, CliError> {
    let text = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            let known: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            CliError::Usage(format!("unknown preset `{name}` (known: {})", known.join(", ")))
        })?;
    parse(text, Path::new(name))
}

pub fn parse(text: &str, origin: &Path) -> Result<RunConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::Usage(format!("{}: {}", origin.display(), e.message().trim_end())))
}

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut cfg = parse(&text, path)?;
    // A relative reference file is taken relative to the config file.
    if let (Some(file), Some(dir)) = (&cfg.reference.file, path.parent()) {
        if file.is_relative() {
            cfg.reference.file = Some(dir.join(file));
        }
    }
    Ok(cfg)
}

impl RunConfig {
    pub fn arch(&self) -> Result<ModelArch, CliError> {
        if self.model.kind == ModelKind::Lenet5 {
            return Err(CliError::Usage(
                "model.kind = \"lenet5\": convolutional layers are not supported; \
                 this preset is recorded for reference only"
                    .into(),
            ));
        }
        let activation = match self.model.activation {
            ActivationName::Relu => paramequiv::Activation::Relu,
        };
        ModelArch::new(self.model.layer_widths.clone(), activation, self.model.bias)
            .map_err(|e| CliError::Usage(format!("model.layer_widths: {e}")))
    }

    /// Replaces a reference file by its inline values, so the config hash
    /// covers the actual numbers.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        let arch = self.arch()?;
        let d = arch.param_count();
        let theta = match (&self.reference.theta, &self.reference.file) {
            (Some(_), Some(_)) => {
                return Err(CliError::Usage(
                    "reference: set either `theta` or `file`, not both".into(),
                ))
            }
            (Some(t), None) => t.clone(),
            (None, Some(f)) => {
                let rows = read_param_rows::<f64>(f, d, false)?;
                match rows.as_slice() {
                    [one] => one.as_slice().to_vec(),
                    _ => {
                        return Err(CliError::Usage(format!(
                            "reference.file {}: expected exactly one parameter row, found {}",
                            f.display(),
                            rows.len()
                        )))
                    }
                }
            }
            (None, None) => return Err(CliError::Usage("reference: missing `theta` or `file`".into())),
        };
        if theta.len() != d {
            return Err(CliError::Usage(format!(
                "reference.theta: architecture {:?} needs {d} parameters, got {}",
                self.model.layer_widths,
                theta.len()
            )));
        }
        self.reference = ReferenceConfig {
            theta: Some(theta),
            file: None,
        };
        Ok(self)
    }

    pub fn theta_ref(&self) -> Result<ParamVector<f64>, CliError> {
        let values = self
            .reference
            .theta
            .as_ref()
            .ok_or_else(|| CliError::Usage("reference.theta unresolved".into()))?;
        ParamVector::for_arch(&self.arch()?, values.clone())
            .map_err(|e| CliError::Usage(format!("reference.theta: {e}")))
    }

    pub fn sample_spec(&self) -> Result<SampleSpec, CliError> {
        let spec = SampleSpec {
            seed: self.seed,
            count: self.samples.count,
            input_dim: self.arch()?.input_dim(),
            lo: self.samples.lo,
            hi: self.samples.hi,
        };
        spec.validate().map_err(|e| CliError::Usage(format!("samples: {e}")))?;
        Ok(spec)
    }

    pub fn search_config(&self) -> Result<SearchConfig, CliError> {
        let s = &self.search;
        let cfg = SearchConfig {
            num_starts: s.num_starts,
            max_steps: s.max_steps,
            learning_rate: s.learning_rate,
            batch_size: s.batch_size,
            accept_threshold: s.accept_threshold,
            init_range: s.init_range,
            seed: self.seed,
        };
        cfg.validate(self.samples.count)
            .map_err(|e| CliError::Usage(format!("search: {e}")))?;
        Ok(cfg)
    }

    pub fn grid_spec(&self) -> Result<GridSpec, CliError> {
        let g = &self.grid;
        GridSpec::new(g.dim, g.lo, g.hi, g.points).map_err(|e| CliError::Usage(format!("grid: {e}")))
    }

    pub fn epsilons(&self) -> Result<&[f64], CliError> {
        if self.epsilons.is_empty() {
            return Err(CliError::Usage("epsilons: need at least one value".into()));
        }
        if let Some(e) = self.epsilons.iter().find(|e| !e.is_finite() || **e < 0.0) {
            return Err(CliError::Usage(format!(
                "epsilons: {e} is not a finite non-negative number"
            )));
        }
        Ok(&self.epsilons)
    }

    /// TOML of everything that affects results, i.e. all but `out_dir`.
    pub fn effective_toml(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        toml::to_string(&c).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.effective_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        let fcn = preset("fcn-paper").unwrap();
        assert_eq!(fcn, RunConfig::default());
        let three = preset("fcn-paper-3d").unwrap();
        assert_eq!(
            (three.grid.dim, three.grid.points, three.epsilons.clone()),
            (3, 50, vec![0.0025])
        );
        let lenet = preset("lenet-paper").unwrap();
        assert_eq!(
            (lenet.search.batch_size, lenet.samples.count, lenet.seed),
            (256, 8192, 0)
        );
        assert!(lenet.search.learning_rate == 0.001);
        assert!(matches!(lenet.arch(), Err(CliError::Usage(_))));
        assert!(preset("nope").is_err());
    }

    #[test]
    fn effective_config_round_trips_and_ignores_out_dir() {
        let cfg = preset("fcn-paper").unwrap().resolve().unwrap();
        let again = parse(&cfg.effective_toml(), Path::new("x")).unwrap();
        assert_eq!(again, cfg);
        let mut moved = cfg.clone();
        moved.out_dir = Some("elsewhere".into());
        assert_eq!(moved.hash(), cfg.hash());
        moved.seed += 1;
        assert_ne!(moved.hash(), cfg.hash());
    }

    #[test]
    fn unknown_fields_are_named() {
        let err = parse("[search]\nnum_start = 3\n", Path::new("c.toml"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("num_start"), "{err}");
    }

    #[test]
    fn reference_checks() {
        let mut cfg = RunConfig::default();
        cfg.reference.theta = Some(vec![1.0; 3]);
        assert!(cfg.clone().resolve().is_err());
        cfg.reference.theta = None;
        assert!(cfg.resolve().is_err());
    }
}
