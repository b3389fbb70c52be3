//! Call planning for surround synthesis and rig densification.

use std::collections::HashSet;

use geometry_render::{densify_rig, CameraRig, CameraRole};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::modes::ViewMode;

/// One model invocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanCall {
    pub mode: ViewMode,
    #[serde(with = "roles")]
    pub anchors: Vec<CameraRole>,
    #[serde(with = "roles")]
    pub targets: Vec<CameraRole>,
    /// The call also receives an externally supplied start frame.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub image_anchored: bool,
}

/// Ordered calls; serialized as a bare JSON array.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SurroundPlan {
    pub calls: Vec<PlanCall>,
}

impl SurroundPlan {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn targets(&self) -> impl Iterator<Item = CameraRole> + '_ {
        self.calls.iter().flat_map(|c| c.targets.iter().copied())
    }
}

mod roles {
    use geometry_render::CameraRole;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(roles: &[CameraRole], s: S) -> Result<S::Ok, S::Error> {
        roles.iter().map(|r| r.to_string()).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<CameraRole>, D::Error> {
        Vec::<String>::deserialize(d)?.iter().map(|s| s.parse().map_err(serde::de::Error::custom)).collect()
    }
}

fn call(mode: (u8, u8), anchors: &[CameraRole], targets: &[CameraRole]) -> Result<PlanCall> {
    Ok(PlanCall {
        mode: ViewMode::new(mode.0, mode.1)?,
        anchors: anchors.to_vec(),
        targets: targets.to_vec(),
        image_anchored: false,
    })
}

/// Four calls: the front triplet from scratch, each back corner outpainted
/// from its front neighbour, then the rear view between the back corners.
pub fn plan_surround(rig: &CameraRig, has_start_image: bool) -> Result<SurroundPlan> {
    use CameraRole::*;
    for role in CameraRole::BASE {
        if rig.find(role).is_none() {
            return Err(invalid(format!("rig lacks base role {role}")));
        }
    }
    let mut first = call((0, 3), &[], &[FL, F, FR])?;
    first.image_anchored = has_start_image;
    let calls = vec![first, call((1, 1), &[FL], &[BL])?, call((1, 1), &[FR], &[BR])?, call((2, 1), &[BL, BR], &[B])?];
    Ok(SurroundPlan { calls })
}

/// Densifies the rig by `insertions_per_gap` virtual cameras per adjacent
/// pair and plans one (2,1) call per new camera. Within a gap the cameras
/// are generated by bisection, so both anchors of every call are either
/// existing cameras or cameras generated earlier in the plan.
pub fn plan_densify(rig: &CameraRig, insertions_per_gap: usize) -> Result<(CameraRig, SurroundPlan)> {
    let dense = densify_rig(rig, insertions_per_gap)?;
    let mut calls = Vec::new();
    let n = dense.cameras.len();
    let stride = insertions_per_gap + 1;
    for gap in 0..rig.cameras.len() {
        let role = |local: usize| dense.cameras[(gap * stride + local) % n].role;
        let mut pending = vec![(0, stride)];
        while let Some((lo, hi)) = pending.pop() {
            if hi - lo < 2 {
                continue;
            }
            let mid = (lo + hi) / 2;
            calls.push(call((2, 1), &[role(lo), role(hi)], &[role(mid)])?);
            // Right half pushed first so the left half is planned first.
            pending.push((mid, hi));
            pending.push((lo, mid));
        }
    }
    Ok((dense, SurroundPlan { calls }))
}

/// Checks a plan independently of how it was built: each call's mode
/// matches its anchor/target counts and is one of the five modes, every
/// target is produced exactly once and is not externally available, and
/// every anchor is external or a target of an earlier call. With `expected`,
/// the produced targets must be exactly that set.
pub fn validate_plan(plan: &SurroundPlan, external: &[CameraRole], expected: Option<&[CameraRole]>) -> Result<()> {
    let mut available: HashSet<CameraRole> = external.iter().copied().collect();
    let mut produced = HashSet::new();
    for (i, c) in plan.calls.iter().enumerate() {
        let mode = ViewMode::new(c.mode.anchors, c.mode.targets)?;
        if c.anchors.len() != mode.anchors as usize || c.targets.len() != mode.targets as usize {
            return Err(invalid(format!("call {i}: counts do not match mode ({},{})", mode.anchors, mode.targets)));
        }
        if let Some(a) = c.anchors.iter().find(|a| !available.contains(a)) {
            return Err(invalid(format!("call {i}: anchor {a} is not available yet")));
        }
        for t in &c.targets {
            if !produced.insert(*t) || external.contains(t) {
                return Err(invalid(format!("call {i}: target {t} produced twice")));
            }
        }
        available.extend(c.targets.iter().copied());
    }
    if let Some(expected) = expected {
        let want: HashSet<CameraRole> = expected.iter().copied().collect();
        if want != produced || want.len() != expected.len() {
            return Err(invalid("plan targets differ from the expected set"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shape() {
        let c = call((1, 1), &[CameraRole::FL], &[CameraRole::Virtual(3)]).unwrap();
        let plan = SurroundPlan { calls: vec![c] };
        let v: serde_json::Value = serde_json::from_str(&plan.to_json().unwrap()).unwrap();
        assert_eq!(v, serde_json::json!([{"mode": [1, 1], "anchors": ["FL"], "targets": ["V3"]}]));
        assert_eq!(SurroundPlan::from_json(&plan.to_json().unwrap()).unwrap(), plan);
    }
}
