use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pricure::model::{load_model, ModelParameters, SyntheticDataset};
use pricure::protocol::SessionConfig;
use pricure::runtime::Endpoints;
use serde::{Deserialize, Serialize};

/// On-disk run description. Relative paths resolve against the manifest's
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub session: PathBuf,
    pub seed: u64,
    pub models: Vec<PathBuf>,
    pub dataset: PathBuf,
    pub output: PathBuf,
    /// Queries per run; defaults to every dataset sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<u64>,
    pub endpoints: Endpoints,
}

/// A manifest whose every referenced file has been read and validated.
#[derive(Debug)]
pub struct RunManifest {
    pub file: ManifestFile,
    pub config: SessionConfig,
    pub models: Vec<ModelParameters>,
    pub dataset: SyntheticDataset,
    pub output: PathBuf,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn require(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(io::Error::new(io::ErrorKind::NotFound, format!("{} does not exist", path.display())).into());
    }
    Ok(())
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        require(path)?;
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: ManifestFile = toml::from_str(&text)
            .map_err(|e| pricure::Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));

        let session = resolve(base, &file.session);
        require(&session)?;
        let config = SessionConfig::load(&session)?;
        if file.models.len() != config.owners as usize {
            bail!(pricure::Error::Config(format!(
                "manifest lists {} models but the session has {} owners",
                file.models.len(),
                config.owners
            )));
        }
        let mut models = Vec::with_capacity(file.models.len());
        for (i, m) in file.models.iter().enumerate() {
            let p = resolve(base, m);
            require(&p)?;
            let (params, _) = load_model(&p).map_err(|e| pricure::Error::from(e).at(p.display()))?;
            if params.spec != config.spec {
                bail!(pricure::Error::Config(format!(
                    "model {} ({}) is {} but the session runs {}",
                    i + 1,
                    p.display(),
                    params.spec,
                    config.spec
                )));
            }
            models.push(params);
        }
        let dataset_path = resolve(base, &file.dataset);
        require(&dataset_path)?;
        let dataset = SyntheticDataset::load(&dataset_path).map_err(|e| pricure::Error::from(e).at(dataset_path.display()))?;
        if dataset.dim != config.spec.input_dim {
            bail!(pricure::Error::Config(format!(
                "dataset has {} features, the network expects {}",
                dataset.dim, config.spec.input_dim
            )));
        }
        let output = resolve(base, &file.output);
        Ok(RunManifest {
            file,
            config,
            models,
            dataset,
            output,
        })
    }

    /// Feature vectors for the first `rounds` queries.
    pub fn queries(&self, rounds: Option<u64>) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        let available = self.dataset.samples.len() as u64;
        let n = rounds.or(self.file.rounds).unwrap_or(available);
        if n > available {
            bail!(pricure::Error::Config(format!("{n} rounds requested but the dataset has {available} samples")));
        }
        let picked = &self.dataset.samples[..n as usize];
        Ok((
            picked.iter().map(|s| s.features.clone()).collect(),
            picked.iter().map(|s| s.label).collect(),
        ))
    }

    pub fn output_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.output).with_context(|| format!("creating {}", self.output.display()))?;
        Ok(&self.output)
    }
}
