//! JSON variant descriptions.
//!
//! ```json
//! {
//!   "name": "micro",
//!   "channels": [8, 16, 32, 64],
//!   "depths": [1, 1, 2, 1],
//!   "expansion_ratios": [4, 4, 4, 4],
//!   "lka_kernel": 21,
//!   "lka_dilation": 3,
//!   "num_classes": 2,
//!   "layerscale_init": 0.01,
//!   "ffn_dwconv": true
//! }
//! ```
//!
//! `ffn_dwconv` is optional and defaults to `true`; unknown keys are rejected.
//! Downsample geometry is fixed (7x7/4 then 3x3/2).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::van::{Preset, VanVariant};

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfigFile {
    pub name: String,
    pub channels: [usize; 4],
    pub depths: [usize; 4],
    pub expansion_ratios: [usize; 4],
    pub lka_kernel: usize,
    pub lka_dilation: usize,
    pub num_classes: usize,
    pub layerscale_init: f64,
    #[serde(default = "default_true")]
    pub ffn_dwconv: bool,
}

impl From<&VanVariant> for VariantConfigFile {
    fn from(v: &VanVariant) -> Self {
        Self {
            name: v.name.clone(),
            channels: v.stages.map(|s| s.channels),
            depths: v.stages.map(|s| s.depth),
            expansion_ratios: v.stages.map(|s| s.expansion_ratio),
            lka_kernel: v.lka_nominal_kernel,
            lka_dilation: v.lka_dilation,
            num_classes: v.num_classes,
            layerscale_init: v.layerscale_init,
            ffn_dwconv: v.ffn_dwconv,
        }
    }
}

impl TryFrom<VariantConfigFile> for VanVariant {
    type Error = Error;

    fn try_from(f: VariantConfigFile) -> Result<Self> {
        let mut v = VanVariant::from_table(
            &f.name,
            f.channels,
            f.depths,
            f.expansion_ratios,
            f.num_classes,
        );
        v.lka_nominal_kernel = f.lka_kernel;
        v.lka_dilation = f.lka_dilation;
        v.layerscale_init = f.layerscale_init;
        v.ffn_dwconv = f.ffn_dwconv;
        v.validate()?;
        Ok(v)
    }
}

pub fn parse_variant(json: &str) -> Result<VanVariant> {
    let file: VariantConfigFile =
        serde_json::from_str(json).map_err(|e| Error::Config(format!("variant config: {e}")))?;
    file.try_into()
}

pub fn variant_to_json(v: &VanVariant) -> String {
    serde_json::to_string_pretty(&VariantConfigFile::from(v)).expect("plain struct serializes")
}

pub fn load_variant(path: impl AsRef<Path>) -> Result<VanVariant> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_variant(&text)
}

/// A preset name (`b0`..`b6`, `micro`, optionally prefixed `van-`) or a path
/// to a JSON config.
pub fn resolve_variant(spec: &str) -> Result<VanVariant> {
    match spec.parse::<Preset>() {
        Ok(p) => Ok(p.variant()),
        Err(_) if spec.ends_with(".json") || Path::new(spec).exists() => load_variant(spec),
        Err(e) => Err(e),
    }
}
