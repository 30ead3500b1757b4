//! Names and kinds of the morphometric measurements.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureKind {
    Volume,
    Thickness,
    Curvature,
}

impl MeasureKind {
    pub const ALL: [MeasureKind; 3] = [MeasureKind::Volume, MeasureKind::Thickness, MeasureKind::Curvature];

    /// Column-name prefix, e.g. `vol` in `vol_blob0`.
    pub fn prefix(self) -> &'static str {
        match self {
            MeasureKind::Volume => "vol",
            MeasureKind::Thickness => "thk",
            MeasureKind::Curvature => "curv",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            MeasureKind::Volume => "mm^3",
            MeasureKind::Thickness => "mm",
            MeasureKind::Curvature => "1/mm",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MeasureKind::Volume => "volume",
            MeasureKind::Thickness => "thickness",
            MeasureKind::Curvature => "curvature",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s || k.prefix() == s)
    }

    /// Kind encoded in a `kind_region` column name.
    pub fn of_name(name: &str) -> Option<Self> {
        let prefix = name.split('_').next()?;
        Self::ALL.into_iter().find(|k| k.prefix() == prefix)
    }
}

impl std::fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Measurement {
    pub name: String,
    pub kind: MeasureKind,
    pub unit: String,
}

impl Measurement {
    pub fn new(kind: MeasureKind, region: &str) -> Self {
        Self {
            name: format!("{}_{region}", kind.prefix()),
            kind,
            unit: kind.unit().to_string(),
        }
    }
}
