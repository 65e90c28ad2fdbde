//! File formats: `truth.json`, `particles.json` and `posterior.json`, all
//! written through a temporary file and an atomic rename.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::GraphFamily;
use crate::inference::{
    Mode, Particle, ParticleBuffer, TrainConfig, TrainOutput, TrainStats, VI_HIDDEN,
    VI_HIDDEN_LAYERS,
};
use crate::scm::{Dataset, GroundTruth, ModelKind, NetworkArchitecture, ScmModel};

/// Writes `bytes` to a temporary file next to `path`, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    write_atomic(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read(path)?;
    serde_json::from_slice(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Ground truth with its provenance, as stored in `truth.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    #[serde(flatten)]
    pub truth: GroundTruth,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<GraphFamily>,
}

/// Writes a dataset CSV through a temporary file in the target directory.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    data.write_csv(tmp.path())?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Variational network parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiFile {
    pub d: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub params: Vec<f64>,
}

/// Contents of `particles.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParticlesFile {
    pub chains: usize,
    pub mode: Mode,
    pub d: usize,
    pub model: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<NetworkArchitecture>,
    pub particles: Vec<Particle>,
    pub phi: Option<PhiFile>,
    pub config: TrainConfig,
    #[serde(default)]
    pub stats: TrainStats,
}

impl ParticlesFile {
    pub fn from_output(out: &TrainOutput) -> Self {
        let d = out.model.d();
        ParticlesFile {
            chains: out.buffer.chains(),
            mode: out.mode,
            d,
            model: out.model.kind(),
            architecture: out.model.architecture(),
            particles: out.buffer.to_vec(),
            phi: out.phi.as_ref().map(|p| PhiFile {
                d,
                hidden: VI_HIDDEN,
                hidden_layers: VI_HIDDEN_LAYERS,
                params: p.clone(),
            }),
            config: out.config.clone(),
            stats: out.stats.clone(),
        }
    }

    /// Rebuilds the training output, checking shapes.
    pub fn into_output(self) -> Result<TrainOutput> {
        let model = match (self.model, self.architecture) {
            (ModelKind::Linear, _) => ScmModel::linear(self.d),
            (ModelKind::Mlp, Some(arch)) => ScmModel::nonlinear(self.d, arch),
            (ModelKind::Mlp, None) => ScmModel::new(self.d, ModelKind::Mlp),
        };
        for p in &self.particles {
            if p.p.len() != self.d || p.theta.len() != model.num_params() {
                return Err(Error::Data(format!(
                    "particle from chain {} step {} does not match d={} with {} parameters",
                    p.chain,
                    p.step,
                    self.d,
                    model.num_params()
                )));
            }
        }
        if self.particles.is_empty() {
            return Err(Error::Data("particles file holds no particles".into()));
        }
        let phi = match (self.mode, self.phi) {
            (Mode::Gibbs, Some(phi)) => {
                if phi.d != self.d
                    || phi.hidden != VI_HIDDEN
                    || phi.hidden_layers != VI_HIDDEN_LAYERS
                {
                    return Err(Error::Data(
                        "variational network shape does not match this build".into(),
                    ));
                }
                Some(phi.params)
            }
            (Mode::Gibbs, None) => return Err(Error::Data("gibbs particles need \"phi\"".into())),
            (Mode::Joint, _) => None,
        };
        Ok(TrainOutput {
            mode: self.mode,
            model,
            config: self.config,
            buffer: ParticleBuffer::from_particles(self.chains, self.particles),
            phi,
            stats: self.stats,
        })
    }
}
