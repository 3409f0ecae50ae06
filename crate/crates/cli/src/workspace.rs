//! A manifest with its labels and calibrated models loaded.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use divens_core::calibration::{fit_temperature, CalibrationConfig, Temperature, TemperatureFit};
use divens_core::data::{
    read_labels, EmbeddingMatrix, LabelVector, LogitMatrix, Manifest, ModelRecord,
};
use divens_core::ensemble::CalibratedModel;
use divens_core::par;

pub struct LoadedModel {
    pub logits: LogitMatrix,
    pub calibrated: CalibratedModel,
    /// Present when the temperature was fitted rather than read from the manifest.
    pub fit: Option<TemperatureFit>,
}

pub struct ModelEntry {
    pub record: ModelRecord,
    /// Load or calibration failure, as a message for report rows.
    pub model: Result<LoadedModel, String>,
}

pub struct Workspace {
    pub manifest: Manifest,
    pub labels: LabelVector,
    pub entries: Vec<ModelEntry>,
}

fn load_one(
    manifest: &Manifest,
    labels: &LabelVector,
    rec: &ModelRecord,
    refit: bool,
) -> divens_core::Result<LoadedModel> {
    let logits = LogitMatrix::load(manifest.resolve(&rec.logits_path))?;
    labels.check_pairing(logits.n_examples(), logits.n_classes())?;
    let (t, fit) = match rec.temperature {
        Some(t) if !refit => (Temperature::new(t)?, None),
        _ => {
            let f = fit_temperature(&logits, labels, &CalibrationConfig::default())?;
            (f.temperature, Some(f))
        }
    };
    let calibrated = CalibratedModel::new(rec.name.clone(), &logits, t);
    Ok(LoadedModel {
        logits,
        calibrated,
        fit,
    })
}

impl Workspace {
    /// Loads every model. Manifest and label problems are fatal; a model that
    /// fails to load is kept as an error entry. With `refit`, temperatures in
    /// the manifest are ignored and fitted again.
    pub fn open(path: &Path, refit: bool) -> Result<Self> {
        let manifest =
            Manifest::load(path).with_context(|| format!("loading manifest {}", path.display()))?;
        let labels_path = manifest.resolve(&manifest.labels_path);
        let labels = read_labels(&labels_path)
            .with_context(|| format!("loading labels {}", labels_path.display()))?;
        let models = par::map_slice(&manifest.models, |rec| {
            load_one(&manifest, &labels, rec, refit)
        });
        let entries = manifest
            .models
            .iter()
            .cloned()
            .zip(models)
            .map(|(record, m)| ModelEntry {
                record,
                model: m.map_err(|e| e.to_string()),
            })
            .collect();
        Ok(Workspace {
            manifest,
            labels,
            entries,
        })
    }

    pub fn entry(&self, name: &str) -> Result<&ModelEntry> {
        self.entries
            .iter()
            .find(|e| e.record.name == name)
            .ok_or_else(|| anyhow!("model {name:?} is not in the manifest"))
    }

    /// A loaded model; fatal if it failed.
    pub fn model(&self, name: &str) -> Result<&LoadedModel> {
        match &self.entry(name)?.model {
            Ok(m) => Ok(m),
            Err(e) => bail!("model {name:?} failed to load: {e}"),
        }
    }

    pub fn base(&self) -> Result<&LoadedModel> {
        self.model(&self.manifest.base_model)
    }

    /// Non-base entries ordered by category, then name.
    pub fn others(&self) -> Vec<&ModelEntry> {
        let mut v: Vec<&ModelEntry> = self
            .entries
            .iter()
            .filter(|e| e.record.name != self.manifest.base_model)
            .collect();
        v.sort_by(|a, b| {
            (a.record.category, &a.record.name).cmp(&(b.record.category, &b.record.name))
        });
        v
    }

    pub fn n_failed(&self) -> usize {
        self.entries.iter().filter(|e| e.model.is_err()).count()
    }

    pub fn embedding(&self, name: &str) -> Result<EmbeddingMatrix> {
        let rec = &self.entry(name)?.record;
        let path = rec
            .embedding_path
            .as_ref()
            .ok_or_else(|| anyhow!("model {name:?} has no embedding_path"))?;
        let e = EmbeddingMatrix::load(self.manifest.resolve(path))?;
        if e.n_examples() != self.labels.len() {
            bail!(
                "embedding of {name:?} has {} rows but there are {} labels",
                e.n_examples(),
                self.labels.len()
            );
        }
        Ok(e)
    }
}
