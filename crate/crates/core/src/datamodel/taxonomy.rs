use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BACKGROUND: &str = "background";

/// Ordered class names. Index 0 is background, 1..=K are foreground classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ClassTaxonomy {
    classes: Vec<String>,
}

impl ClassTaxonomy {
    /// Builds a taxonomy from foreground class names; background is prepended.
    pub fn from_foreground<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut classes = vec![BACKGROUND.to_string()];
        classes.extend(names.into_iter().map(Into::into));
        Self::try_from(classes)
    }

    /// The five intracranial hemorrhage types.
    pub fn hemorrhage() -> Self {
        Self::from_foreground([
            "epidural",
            "intraparenchymal",
            "intraventricular",
            "subarachnoid",
            "subdural",
        ])
        .expect("static taxonomy is valid")
    }

    /// Number of foreground classes.
    pub fn k(&self) -> usize {
        self.classes.len() - 1
    }

    /// Number of channels including background (K + 1).
    pub fn num_channels(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.classes.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }
}

impl Default for ClassTaxonomy {
    fn default() -> Self {
        Self::hemorrhage()
    }
}

impl TryFrom<Vec<String>> for ClassTaxonomy {
    type Error = Error;

    fn try_from(classes: Vec<String>) -> Result<Self> {
        if classes.first().map(String::as_str) != Some(BACKGROUND) {
            return Err(Error::InvalidTaxonomy(
                "class 0 must be `background`".into(),
            ));
        }
        if classes.len() < 2 {
            return Err(Error::InvalidTaxonomy("K must be at least 1".into()));
        }
        if classes.len() > 256 {
            return Err(Error::InvalidTaxonomy(
                "at most 255 foreground classes fit an 8-bit mask".into(),
            ));
        }
        for (i, c) in classes.iter().enumerate() {
            if classes[..i].contains(c) {
                return Err(Error::InvalidTaxonomy(format!("duplicate class `{c}`")));
            }
        }
        Ok(Self { classes })
    }
}

impl From<ClassTaxonomy> for Vec<String> {
    fn from(t: ClassTaxonomy) -> Self {
        t.classes
    }
}
