//! Label schema: internal class ids, panoptic class mapping, layout channels
//! and BEV overwrite rules.
//!
//! Internal class ids are 0-based and contiguous so they can index dense
//! arrays and confusion matrices directly. The panoptic class numbering
//! (1..=17, see [`crate::panoptic`]) is mapped onto internal ids through
//! [`LabelSchema::panoptic_classes`].
//!
//! The schema serializes to JSON:
//!
//! ```json
//! {
//!   "name": "toy6",
//!   "class_names": ["drivable_surface", "sidewalk", "car", "pedestrian", "truck", "free"],
//!   "free_class": 5,
//!   "thing_classes": [4, 7, 10],
//!   "stuff_classes": [11, 13],
//!   "panoptic_classes": [[4, 2], [7, 3], [10, 4], [11, 0], [13, 1], [17, 5]],
//!   "layout_channels": 5,
//!   "layout_channel_names": ["car", "pedestrian", "truck", "drivable_area", "walkway"],
//!   "layout_channel_map": [3, 4, 0, 1, 2, null],
//!   "agent_channels": [0, 1, 2],
//!   "rare_channels": [1],
//!   "overwrite_rules": []
//! }
//! ```
//!
//! `thing_classes`/`stuff_classes` are panoptic class numbers; every other
//! class reference is an internal id. `layout_channel_map[c]` is the layout
//! channel of internal class `c`, or `null` when the class is not drawn in
//! layouts.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{OccError, Result};
use crate::panoptic::{self, PanopticLabel};

/// Which cells of a flagged layout region an overwrite rule relabels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeMode {
    /// Every flagged cell (thin dividers).
    Full,
    /// Flagged cells with at least one unflagged 4-neighbour (area classes).
    Edge,
}

/// Relabels ground-band voxels under a layout channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverwriteRule {
    pub channel: u8,
    pub target_class: u8,
    pub mode: EdgeMode,
    /// Only voxels currently holding one of these classes are relabeled;
    /// empty means any non-free voxel.
    #[serde(default)]
    pub source_classes: Vec<u8>,
    /// Inclusive z-index band.
    #[serde(default = "default_z_band")]
    pub z_band: [u32; 2],
}

fn default_z_band() -> [u32; 2] {
    [0, 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub name: String,
    pub class_names: Vec<String>,
    pub free_class: u8,
    pub thing_classes: Vec<u32>,
    pub stuff_classes: Vec<u32>,
    /// `(panoptic class, internal class)` pairs.
    pub panoptic_classes: Vec<(u32, u8)>,
    pub layout_channels: u8,
    pub layout_channel_names: Vec<String>,
    pub layout_channel_map: Vec<Option<u8>>,
    #[serde(default)]
    pub agent_channels: Vec<u8>,
    #[serde(default)]
    pub rare_channels: Vec<u8>,
    #[serde(default)]
    pub overwrite_rules: Vec<OverwriteRule>,
}

impl LabelSchema {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// 21-class schema with 15 layout channels (10 agents + 5 map primitives).
    ///
    /// The class ↔ channel table is a documented default, not dataset ground truth.
    pub fn nuscenes_default() -> Self {
        let class_names: Vec<String> = [
            "barrier",
            "bicycle",
            "bus",
            "car",
            "construction_vehicle",
            "motorcycle",
            "pedestrian",
            "traffic_cone",
            "trailer",
            "truck",
            "driveable_surface",
            "other_flat",
            "sidewalk",
            "terrain",
            "manmade",
            "vegetation",
            "ped_crossing",
            "road_divider",
            "lane_divider",
            "carpark_area",
            "free",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let mut panoptic_classes: Vec<(u32, u8)> = (1..=16).map(|s| (s, (s - 1) as u8)).collect();
        panoptic_classes.push((panoptic::FREE_CLASS, 20));

        let mut layout_channel_map = vec![None; 21];
        for c in 0..10u8 {
            layout_channel_map[c as usize] = Some(c);
        }
        layout_channel_map[10] = Some(10); // driveable_surface -> drivable_area
        layout_channel_map[16] = Some(11); // ped_crossing
        layout_channel_map[12] = Some(12); // sidewalk -> walkway
        layout_channel_map[17] = Some(13); // road_divider
        layout_channel_map[18] = Some(14); // lane_divider

        let layout_channel_names = [
            "barrier",
            "bicycle",
            "bus",
            "car",
            "construction_vehicle",
            "motorcycle",
            "pedestrian",
            "traffic_cone",
            "trailer",
            "truck",
            "drivable_area",
            "ped_crossing",
            "walkway",
            "road_divider",
            "lane_divider",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();

        let ground = vec![10u8];
        Self {
            name: "nuscenes21".into(),
            class_names,
            free_class: 20,
            thing_classes: (1..=10).collect(),
            stuff_classes: (11..=16).collect(),
            panoptic_classes,
            layout_channels: 15,
            layout_channel_names,
            layout_channel_map,
            agent_channels: (0..10).collect(),
            rare_channels: vec![1, 5, 6, 7],
            overwrite_rules: vec![
                OverwriteRule {
                    channel: 11,
                    target_class: 16,
                    mode: EdgeMode::Edge,
                    source_classes: ground.clone(),
                    z_band: default_z_band(),
                },
                OverwriteRule {
                    channel: 13,
                    target_class: 17,
                    mode: EdgeMode::Full,
                    source_classes: ground.clone(),
                    z_band: default_z_band(),
                },
                OverwriteRule {
                    channel: 14,
                    target_class: 18,
                    mode: EdgeMode::Full,
                    source_classes: ground,
                    z_band: default_z_band(),
                },
            ],
        }
    }

    /// Six-class schema used by the procedural dataset.
    pub fn toy() -> Self {
        Self {
            name: "toy6".into(),
            class_names: ["drivable_surface", "sidewalk", "car", "pedestrian", "truck", "free"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            free_class: 5,
            thing_classes: vec![4, 7, 10],
            stuff_classes: vec![11, 13],
            panoptic_classes: vec![(4, 2), (7, 3), (10, 4), (11, 0), (13, 1), (17, 5)],
            layout_channels: 5,
            layout_channel_names: ["car", "pedestrian", "truck", "drivable_area", "walkway"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            layout_channel_map: vec![Some(3), Some(4), Some(0), Some(1), Some(2), None],
            agent_channels: vec![0, 1, 2],
            rare_channels: vec![1],
            overwrite_rules: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_classes();
        let bad = |m: String| Err(OccError::InvalidSchema(m));
        if n == 0 || n > 255 {
            return bad(format!("class count {n} not in 1..=255"));
        }
        if self.free_class as usize >= n {
            return bad(format!("free class {} >= {n}", self.free_class));
        }
        if let Some(c) = self.thing_classes.iter().find(|c| self.stuff_classes.contains(c)) {
            return bad(format!("class {c} is both thing and stuff"));
        }
        if self.layout_channels > 16 {
            return bad(format!("{} layout channels exceed 16", self.layout_channels));
        }
        if self.layout_channel_map.len() != n {
            return bad(format!(
                "layout_channel_map has {} entries for {n} classes",
                self.layout_channel_map.len()
            ));
        }
        if self.layout_channel_names.len() != self.layout_channels as usize {
            return bad("layout_channel_names length differs from layout_channels".into());
        }
        if self.layout_channel_map[self.free_class as usize].is_some() {
            return bad("free class cannot map to a layout channel".into());
        }
        for ch in self
            .layout_channel_map
            .iter()
            .flatten()
            .chain(&self.agent_channels)
            .chain(&self.rare_channels)
        {
            if *ch >= self.layout_channels {
                return bad(format!("channel {ch} >= {}", self.layout_channels));
            }
        }
        for &(s, c) in &self.panoptic_classes {
            if !(1..=panoptic::FREE_CLASS).contains(&s) || c as usize >= n {
                return bad(format!("bad panoptic mapping ({s}, {c})"));
            }
        }
        for r in &self.overwrite_rules {
            if r.channel >= self.layout_channels || r.target_class as usize >= n {
                return bad(format!("bad overwrite rule {r:?}"));
            }
            if r.z_band[0] > r.z_band[1] {
                return bad(format!("empty z band {:?}", r.z_band));
            }
        }
        Ok(())
    }

    pub fn is_free(&self, class: u8) -> bool {
        class == self.free_class
    }

    pub fn channel_of(&self, class: u8) -> Option<u8> {
        self.layout_channel_map.get(class as usize).copied().flatten()
    }

    /// Internal class for a panoptic class number, if the schema maps it.
    pub fn class_of_panoptic(&self, s: u32) -> Option<u8> {
        self.panoptic_classes.iter().find(|(p, _)| *p == s).map(|&(_, c)| c)
    }

    /// Internal class of a panoptic label; unmapped or malformed labels become free.
    pub fn class_of_label(&self, label: PanopticLabel) -> u8 {
        panoptic::panoptic_decode(label)
            .ok()
            .and_then(|(s, _)| self.class_of_panoptic(s))
            .unwrap_or(self.free_class)
    }

    /// Panoptic class number for an internal class, if any.
    pub fn panoptic_of_class(&self, class: u8) -> Option<u32> {
        self.panoptic_classes.iter().find(|(_, c)| *c == class).map(|&(s, _)| s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let schema: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_schemas_validate() {
        LabelSchema::nuscenes_default().validate().unwrap();
        LabelSchema::toy().validate().unwrap();
        let s = LabelSchema::nuscenes_default();
        assert_eq!(s.num_classes(), 21);
        assert_eq!(s.free_class, 20);
        assert_eq!(s.layout_channels, 15);
        assert_eq!(s.class_of_panoptic(17), Some(20));
        assert_eq!(s.class_of_label(4007), 3);
    }

    #[test]
    fn rejects_overlapping_thing_stuff() {
        let mut s = LabelSchema::toy();
        s.stuff_classes.push(4);
        assert!(s.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let s = LabelSchema::nuscenes_default();
        let text = serde_json::to_string(&s).unwrap();
        let back: LabelSchema = serde_json::from_str(&text).unwrap();
        assert_eq!(s, back);
    }
}
