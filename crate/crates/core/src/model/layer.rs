use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NAMES: [&str; 15] = [
    "Conv1", "Conv2", "Conv3", "Tcn1", "Tcn2", "Tcn4", "Tcn8", "Tcn16", "Tcn32", "Tcn64", "Tcn128",
    "Tcn256", "Tcn512", "Tcn1024", "Out",
];

/// Position of a layer in the fixed 15-layer sequence shared by both
/// architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LayerName(u8);

impl LayerName {
    pub const COUNT: usize = 15;
    pub const CONV1: LayerName = LayerName(0);
    pub const CONV3: LayerName = LayerName(2);
    pub const TCN1: LayerName = LayerName(3);
    pub const TCN1024: LayerName = LayerName(13);
    pub const OUT: LayerName = LayerName(14);

    pub fn all() -> impl Iterator<Item = LayerName> {
        (0..Self::COUNT as u8).map(LayerName)
    }

    pub fn from_index(i: usize) -> Option<LayerName> {
        (i < Self::COUNT).then_some(LayerName(i as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn as_str(self) -> &'static str {
        NAMES[self.index()]
    }

    pub fn is_conv(self) -> bool {
        self.0 < 3
    }

    pub fn is_output(self) -> bool {
        self == Self::OUT
    }

    /// Dilation of a `Tcn<d>` level.
    pub fn dilation(self) -> Option<usize> {
        (3..14).contains(&self.0).then(|| 1usize << (self.0 - 3))
    }
}

impl fmt::Display for LayerName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NAMES
            .iter()
            .position(|n| n.eq_ignore_ascii_case(s))
            .map(|i| LayerName(i as u8))
            .ok_or_else(|| Error::Name(s.to_string()))
    }
}

impl TryFrom<String> for LayerName {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LayerName> for String {
    fn from(n: LayerName) -> String {
        n.as_str().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "TCNv1")]
    TcnV1,
    #[serde(rename = "TCNv2")]
    TcnV2,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::TcnV1, Variant::TcnV2];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::TcnV1 => "TCNv1",
            Variant::TcnV2 => "TCNv2",
        }
    }

    /// Channels of the convolutional front-end.
    pub fn front_channels(self) -> usize {
        match self {
            Variant::TcnV1 => 16,
            Variant::TcnV2 => 20,
        }
    }

    /// `(kernel time, kernel freq, pool after)` per front-end stage.
    pub fn conv_stages(self) -> [(usize, usize, bool); 3] {
        match self {
            Variant::TcnV1 => [(3, 3, true), (3, 3, true), (1, 8, false)],
            Variant::TcnV2 => [(3, 3, true), (1, 10, true), (3, 3, true)],
        }
    }

    /// Zero frames added on each side of the input so the valid time
    /// convolutions of the front end preserve the sequence length.
    pub fn time_padding(self) -> usize {
        self.conv_stages().iter().map(|s| s.0 - 1).sum::<usize>() / 2
    }

    /// Dilations of the convolutions inside the level with base dilation `d`.
    pub fn level_dilations(self, d: usize) -> Vec<usize> {
        match self {
            Variant::TcnV1 => vec![d],
            Variant::TcnV2 => vec![d, 2 * d],
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tcnv1" | "v1" => Ok(Variant::TcnV1),
            "tcnv2" | "v2" => Ok(Variant::TcnV2),
            _ => Err(Error::Config(format!("unknown model variant {s:?}"))),
        }
    }
}
