use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a model's training methodology differs from the base model, ordered
/// from least to most divergent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Category {
    Reinit,
    Hparam,
    Arch,
    Fwork,
    Dataset,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Reinit,
        Category::Hparam,
        Category::Arch,
        Category::Fwork,
        Category::Dataset,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Reinit => "REINIT",
            Category::Hparam => "HPARAM",
            Category::Arch => "ARCH",
            Category::Fwork => "FWORK",
            Category::Dataset => "DATASET",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRecord {
    pub name: String,
    pub category: Category,
    pub logits_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported_accuracy: Option<f64>,
    /// Published error inconsistency against the base model, carried through
    /// to reports for side-by-side comparison only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported_inconsistency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported_ensemble_accuracy: Option<f64>,
}

impl ModelRecord {
    pub fn new(
        name: impl Into<String>,
        category: Category,
        logits_path: impl Into<PathBuf>,
    ) -> Self {
        ModelRecord {
            name: name.into(),
            category,
            logits_path: logits_path.into(),
            embedding_path: None,
            temperature: None,
            reported_accuracy: None,
            reported_inconsistency: None,
            reported_ensemble_accuracy: None,
        }
    }
}

/// Inclusive range of class ids with a name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassGroup {
    pub name: String,
    pub first: usize,
    pub last: usize,
}

impl ClassGroup {
    pub fn new(name: impl Into<String>, first: usize, last: usize) -> Self {
        ClassGroup {
            name: name.into(),
            first,
            last,
        }
    }

    pub fn contains(&self, class: usize) -> bool {
        (self.first..=self.last).contains(&class)
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> {
        self.first..=self.last
    }

    pub fn len(&self) -> usize {
        if self.last < self.first {
            0
        } else {
            self.last - self.first + 1
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered, pairwise-disjoint named class groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassGroups(Vec<ClassGroup>);

impl ClassGroups {
    pub fn new(groups: Vec<ClassGroup>) -> Result<Self> {
        for (i, a) in groups.iter().enumerate() {
            if a.last < a.first {
                return Err(Error::Config(format!(
                    "group {} has last {} < first {}",
                    a.name, a.last, a.first
                )));
            }
            for b in &groups[i + 1..] {
                if a.first <= b.last && b.first <= a.last {
                    return Err(Error::Config(format!(
                        "class groups {} and {} overlap",
                        a.name, b.name
                    )));
                }
            }
        }
        Ok(ClassGroups(groups))
    }

    /// Nature classes 0-300 and anthropogenic classes 500-900 of ImageNet.
    pub fn imagenet_default() -> Self {
        ClassGroups(vec![
            ClassGroup::new("nature", 0, 300),
            ClassGroup::new("anthropogenic", 500, 900),
        ])
    }

    pub fn groups(&self) -> &[ClassGroup] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Disjointness plus every index below `n_classes`.
    pub fn validate(&self, n_classes: usize) -> Result<()> {
        Self::new(self.0.clone())?;
        if let Some(g) = self.0.iter().find(|g| g.last >= n_classes) {
            return Err(Error::Config(format!(
                "group {} reaches class {} but there are only {n_classes} classes",
                g.name, g.last
            )));
        }
        Ok(())
    }

    pub fn group_of(&self, class: usize) -> Option<usize> {
        self.0.iter().position(|g| g.contains(class))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub base_model: String,
    pub models: Vec<ModelRecord>,
    pub labels_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_groups: Option<ClassGroups>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::from_json(&text)?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for m in &self.models {
            if !seen.insert(m.name.as_str()) {
                return Err(Error::Config(format!("duplicate model name {}", m.name)));
            }
            if let Some(t) = m.temperature {
                if !(t > 0.0 && t.is_finite()) {
                    return Err(Error::Config(format!(
                        "model {} has non-positive temperature {t}",
                        m.name
                    )));
                }
            }
        }
        if !seen.contains(self.base_model.as_str()) {
            return Err(Error::Config(format!(
                "base model {} is not listed in models",
                self.base_model
            )));
        }
        if let Some(g) = &self.class_groups {
            ClassGroups::new(g.groups().to_vec())?;
        }
        Ok(())
    }

    pub fn model(&self, name: &str) -> Option<&ModelRecord> {
        self.models.iter().find(|m| m.name == name)
    }

    pub fn model_mut(&mut self, name: &str) -> Option<&mut ModelRecord> {
        self.models.iter_mut().find(|m| m.name == name)
    }

    pub fn base(&self) -> &ModelRecord {
        self.model(&self.base_model)
            .expect("validated manifest contains its base model")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn class_groups_or_default(&self) -> ClassGroups {
        self.class_groups
            .clone()
            .unwrap_or_else(ClassGroups::imagenet_default)
    }
}
