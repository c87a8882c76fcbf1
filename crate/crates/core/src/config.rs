//! Pipeline configuration. Every default is the value the labeling rules
//! were published with, so a default config reproduces them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::TagMap;
use crate::labeler::Split;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Tile side in meters.
    pub tile_size_m: f64,
    /// Resampled tile side in pixels.
    pub target_px: usize,
    /// A pixel is white when every channel is at least this bright.
    pub cloud_white_level: u8,
    /// Tiles with a larger white-pixel ratio are dropped.
    pub cloud_max_ratio: f64,
    /// Occupancy at or above this is labeled residential.
    pub residential_threshold: f64,
    pub supersample: usize,
    pub seed: u64,
    /// Sites the cloud filter is not applied to.
    pub cloud_exempt_sites: Vec<String>,
    /// Site id to split assignment.
    pub split: BTreeMap<String, Split>,
    pub tag_key: String,
    pub residential_tags: Vec<String>,
    pub non_residential_tags: Vec<String>,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let tags = TagMap::default();
        Self {
            tile_size_m: 36.0,
            target_px: 224,
            cloud_white_level: 240,
            cloud_max_ratio: 0.05,
            residential_threshold: 0.30,
            supersample: 4,
            seed: 0,
            cloud_exempt_sites: Vec::new(),
            split: BTreeMap::from([
                ("ibadan-idikan".to_owned(), Split::Train),
                ("ibadan-sasa".to_owned(), Split::Train),
                ("lagos-bariga".to_owned(), Split::Val),
            ]),
            tag_key: tags.key,
            residential_tags: tags.residential.into_iter().collect(),
            non_residential_tags: tags.non_residential.into_iter().collect(),
            learning_rate: 0.5,
            epochs: 500,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let fraction = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} = {v} is not in [0, 1]")))
            }
        };
        fraction("cloud_max_ratio", self.cloud_max_ratio)?;
        fraction("residential_threshold", self.residential_threshold)?;
        if !(self.tile_size_m > 0.0 && self.tile_size_m.is_finite()) {
            return Err(Error::InvalidParameter(format!("tile_size_m = {} must be positive", self.tile_size_m)));
        }
        if self.target_px == 0 || self.supersample == 0 {
            return Err(Error::InvalidParameter("target_px and supersample must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("learning_rate = {} must be positive", self.learning_rate)));
        }
        Ok(())
    }

    pub fn tag_map(&self) -> TagMap {
        TagMap {
            key: self.tag_key.clone(),
            residential: self.residential_tags.iter().map(|s| s.to_ascii_lowercase()).collect(),
            non_residential: self.non_residential_tags.iter().map(|s| s.to_ascii_lowercase()).collect(),
        }
    }

    pub fn cloud_filter_applies(&self, site_id: &str) -> bool {
        !self.cloud_exempt_sites.iter().any(|s| s == site_id)
    }
}
