//! Panoptic label codec: `label = class * 1000 + instance`.
//!
//! Classes follow the nuScenes lidarseg numbering: 1..=10 are things
//! (instance-bearing), 11..=16 are stuff, and 17 is free space. Stuff and
//! free voxels always carry instance 0.

use crate::error::{OccError, Result};

pub type PanopticLabel = u32;

pub const FIRST_THING: u32 = 1;
pub const LAST_THING: u32 = 10;
pub const FIRST_STUFF: u32 = 11;
pub const LAST_STUFF: u32 = 16;
pub const FREE_CLASS: u32 = 17;
pub const MAX_INSTANCE: u32 = 999;

/// Panoptic label for free voxels.
pub const FREE_LABEL: PanopticLabel = FREE_CLASS * 1000;

pub fn is_thing(class: u32) -> bool {
    (FIRST_THING..=LAST_THING).contains(&class)
}

pub fn panoptic_encode(class: u32, instance: u32) -> Result<PanopticLabel> {
    if !(1..=FREE_CLASS).contains(&class) {
        return Err(OccError::ClassOutOfRange(class));
    }
    if instance > MAX_INSTANCE {
        return Err(OccError::InstanceOutOfRange(instance));
    }
    if !is_thing(class) && instance != 0 {
        return Err(OccError::StuffWithInstance { class, instance });
    }
    Ok(class * 1000 + instance)
}

pub fn panoptic_decode(label: PanopticLabel) -> Result<(u32, u32)> {
    if !(1000..=FREE_CLASS * 1000 + MAX_INSTANCE).contains(&label) {
        return Err(OccError::LabelOutOfRange(label));
    }
    let (class, instance) = (label / 1000, label % 1000);
    if !is_thing(class) && instance != 0 {
        return Err(OccError::StuffWithInstance { class, instance });
    }
    Ok((class, instance))
}
