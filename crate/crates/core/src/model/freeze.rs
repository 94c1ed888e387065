use std::fmt;

use serde::{Deserialize, Serialize};

use super::LayerName;
use crate::error::{Error, Result};

/// Which contiguous layer segment stays fixed during fine-tuning.
///
/// Identifiers: `ft` freezes nothing; `ft_<B>` freezes `Conv1..=B`;
/// `ft_<A>-<B>` freezes `A..=B` (only accepted by
/// [`parse_extended`](FreezeConfig::parse_extended)). `Out` is never frozen.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FreezeConfig {
    segment: Option<(LayerName, LayerName)>,
}

impl FreezeConfig {
    pub fn none() -> Self {
        FreezeConfig { segment: None }
    }

    /// Freezes `Conv1..=last`.
    pub fn through(last: LayerName) -> Result<Self> {
        Self::segment(LayerName::CONV1, last)
    }

    pub fn segment(first: LayerName, last: LayerName) -> Result<Self> {
        if last.is_output() || first.is_output() {
            return Err(Error::Config("the output layer is always trained".into()));
        }
        if first > last {
            return Err(Error::Config(format!("empty freeze segment {first}-{last}")));
        }
        Ok(FreezeConfig {
            segment: Some((first, last)),
        })
    }

    /// The fifteen prefix configurations `ft, ft_Conv1, …, ft_Tcn1024`.
    pub fn canonical() -> Vec<FreezeConfig> {
        std::iter::once(FreezeConfig::none())
            .chain(
                LayerName::all()
                    .filter(|n| !n.is_output())
                    .map(|n| FreezeConfig::through(n).unwrap()),
            )
            .collect()
    }

    /// Parses a prefix identifier (`ft`, `ft_Conv3`, `ft_Tcn16`, ...).
    pub fn parse(id: &str) -> Result<Self> {
        let cfg = Self::parse_extended(id)?;
        if !cfg.is_prefix() {
            return Err(Error::Config(format!(
                "{id}: non-prefix segments need the extended freeze syntax enabled"
            )));
        }
        Ok(cfg)
    }

    /// Parses prefix identifiers and arbitrary `ft_<A>-<B>` segments.
    pub fn parse_extended(id: &str) -> Result<Self> {
        let id = id.trim();
        if id == "ft" {
            return Ok(FreezeConfig::none());
        }
        let rest = id
            .strip_prefix("ft_")
            .ok_or_else(|| Error::Config(format!("freeze id {id:?} must start with ft")))?;
        match rest.split_once('-') {
            Some((a, b)) => Self::segment(a.parse()?, b.parse()?),
            None => Self::through(rest.parse()?),
        }
    }

    pub fn is_prefix(&self) -> bool {
        self.segment.is_none_or(|(a, _)| a == LayerName::CONV1)
    }

    pub fn frozen(&self) -> Vec<LayerName> {
        match self.segment {
            None => Vec::new(),
            Some((a, b)) => LayerName::all()
                .filter(|n| *n >= a && *n <= b)
                .collect(),
        }
    }

    pub fn is_frozen(&self, name: LayerName) -> bool {
        self.segment.is_some_and(|(a, b)| name >= a && name <= b)
    }

    pub fn id(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for FreezeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.segment {
            None => f.write_str("ft"),
            Some((a, b)) if a == LayerName::CONV1 => write!(f, "ft_{b}"),
            Some((a, b)) => write!(f, "ft_{a}-{b}"),
        }
    }
}

impl TryFrom<String> for FreezeConfig {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        FreezeConfig::parse_extended(&s)
    }
}

impl From<FreezeConfig> for String {
    fn from(c: FreezeConfig) -> String {
        c.to_string()
    }
}
