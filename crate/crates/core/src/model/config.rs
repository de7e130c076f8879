use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::codec::BinLayout;
use crate::error::{Error, Result};
use crate::kv::{join_list, KvMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Discriminative and generative stacks joined by diagonal connections.
    Besnet,
    /// Discriminative stack only; no motion prediction.
    Benet,
    /// The same cells arranged as one `2L`-deep stack, no diagonals.
    StackedRnn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelMode {
    /// Independent binary labels; actions may co-occur.
    Multitask,
    /// Exactly one action per labeled frame.
    Multiclass,
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "besnet" => Ok(Variant::Besnet),
            "benet" => Ok(Variant::Benet),
            "stackedrnn" | "rnn" | "stacked" => Ok(Variant::StackedRnn),
            _ => Err(Error::Config(format!("unknown variant '{s}'"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Besnet => "besnet",
            Variant::Benet => "benet",
            Variant::StackedRnn => "stacked_rnn",
        })
    }
}

impl FromStr for LabelMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "multitask" => Ok(LabelMode::Multitask),
            "multiclass" => Ok(LabelMode::Multiclass),
            _ => Err(Error::Config(format!("unknown label mode '{s}'"))),
        }
    }
}

impl fmt::Display for LabelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelMode::Multitask => "multitask",
            LabelMode::Multiclass => "multiclass",
        })
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Width of each discriminative level, bottom to top. Generative levels
    /// mirror these widths.
    pub units: Vec<usize>,
    /// Names of the labeled actions; their count is `N`.
    pub classes: Vec<String>,
    pub motion_dims: usize,
    pub sensory_dims: usize,
    /// Bin count of every motion dimension.
    pub bins: Vec<usize>,
    pub lambda: f64,
    pub variant: Variant,
    pub label_mode: LabelMode,
}

const KEYS: &[&str] = &[
    "levels",
    "units",
    "classes",
    "motion_dims",
    "sensory_dims",
    "bins",
    "lambda",
    "variant",
    "label_mode",
];

impl ModelConfig {
    /// Uniform bin count, `levels` levels of `units` cells each.
    pub fn new(
        levels: usize,
        units: usize,
        classes: Vec<String>,
        motion_dims: usize,
        sensory_dims: usize,
        n_bins: usize,
    ) -> Self {
        ModelConfig {
            units: vec![units; levels],
            classes,
            motion_dims,
            sensory_dims,
            bins: vec![n_bins; motion_dims],
            lambda: 0.5,
            variant: Variant::Besnet,
            label_mode: LabelMode::Multitask,
        }
    }

    pub fn levels(&self) -> usize {
        self.units.len()
    }

    pub fn n_actions(&self) -> usize {
        self.classes.len()
    }

    pub fn input_dims(&self) -> usize {
        self.motion_dims + self.sensory_dims
    }

    pub fn layout(&self) -> BinLayout {
        BinLayout::new(self.bins.clone())
    }

    pub fn predicts_motion(&self) -> bool {
        self.variant != Variant::Benet
    }

    /// Widths of the discriminative cells as instantiated (the stacked
    /// variant has `2L` of them).
    pub fn disc_widths(&self) -> Vec<usize> {
        match self.variant {
            Variant::StackedRnn => {
                let mut w = self.units.clone();
                w.extend(self.units.iter().rev());
                w
            }
            _ => self.units.clone(),
        }
    }

    pub fn gen_widths(&self) -> Vec<usize> {
        match self.variant {
            Variant::Besnet => self.units.clone(),
            _ => Vec::new(),
        }
    }

    /// Index of the discriminative cell whose first `N` units carry labels.
    pub fn label_level(&self) -> usize {
        self.levels() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.units.is_empty() || self.units.contains(&0) {
            return Err(Error::Config("need at least one level with nonzero width".into()));
        }
        if self.n_actions() > self.units[self.levels() - 1] {
            return Err(Error::Config(format!(
                "{} actions exceed {} units at the top level",
                self.n_actions(),
                self.units[self.levels() - 1]
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.bins.len() != self.motion_dims {
            return Err(Error::Config(format!(
                "{} bin counts for {} motion dims",
                self.bins.len(),
                self.motion_dims
            )));
        }
        if self.bins.iter().any(|&b| b < 2) {
            return Err(Error::Config("every motion dimension needs >= 2 bins".into()));
        }
        if self.motion_dims == 0 {
            return Err(Error::Config("motion_dims must be > 0".into()));
        }
        if self.classes.iter().any(|c| c.is_empty() || c.contains([',', '\n'])) {
            return Err(Error::Config("class names must be non-empty and comma-free".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.insert("levels", self.levels());
        m.insert("units", join_list(&self.units));
        m.insert("classes", self.classes.join(","));
        m.insert("motion_dims", self.motion_dims);
        m.insert("sensory_dims", self.sensory_dims);
        m.insert("bins", join_list(&self.bins));
        m.insert("lambda", self.lambda);
        m.insert("variant", self.variant);
        m.insert("label_mode", self.label_mode);
        m
    }

    pub fn from_kv(m: &KvMap) -> Result<Self> {
        m.reject_unknown(KEYS)?;
        let units: Vec<usize> = m
            .parse_list("units")?
            .ok_or_else(|| Error::Config("missing key 'units'".into()))?;
        if let Some(levels) = m.parse_value::<usize>("levels")? {
            if levels != units.len() {
                return Err(Error::Config(format!(
                    "levels={levels} but {} unit widths given",
                    units.len()
                )));
            }
        }
        let classes = match m.get("classes") {
            None | Some("") => Vec::new(),
            Some(v) => v.split(',').map(|s| s.trim().to_string()).collect(),
        };
        let motion_dims: usize = m
            .parse_value("motion_dims")?
            .ok_or_else(|| Error::Config("missing key 'motion_dims'".into()))?;
        let cfg = ModelConfig {
            units,
            classes,
            motion_dims,
            sensory_dims: m.parse_value("sensory_dims")?.unwrap_or(0),
            bins: m
                .parse_list("bins")?
                .ok_or_else(|| Error::Config("missing key 'bins'".into()))?,
            lambda: m.parse_value("lambda")?.unwrap_or(0.5),
            variant: m.parse_value("variant")?.unwrap_or(Variant::Besnet),
            label_mode: m.parse_value("label_mode")?.unwrap_or(LabelMode::Multitask),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_kv().to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        ModelConfig::from_kv(&KvMap::load(path)?)
    }
}
