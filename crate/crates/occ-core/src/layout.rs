//! Multi-hot BEV layouts: rasterization from boxes/polygons and the
//! layout-driven ground overwrite of occupancy grids.
//!
//! A layout is centred on the ego: cell `(x, y)` covers
//! `[-W·r/2 + x·r, -W·r/2 + (x+1)·r) × [-H·r/2 + y·r, …)`. Cells are stored
//! x-major (`x * height + y`), matching the column order of [`GridSpec`].

use serde::{Deserialize, Serialize};

use crate::error::{OccError, Result};
use crate::grid::{GridSpec, SemanticOccupancyGrid};
use crate::pose::OrientedBox;
use crate::schema::{EdgeMode, LabelSchema, OverwriteRule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutSpec {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub channels: usize,
}

impl LayoutSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(OccError::InvalidSpec("empty layout".into()));
        }
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(OccError::InvalidSpec(format!("layout resolution {}", self.resolution)));
        }
        if self.channels > 16 {
            return Err(OccError::InvalidSpec(format!("{} channels exceed 16", self.channels)));
        }
        Ok(())
    }

    /// Layout sharing the x/y footprint of a grid.
    pub fn for_grid(spec: &GridSpec, channels: usize) -> Self {
        Self { width: spec.dims[0], height: spec.dims[1], resolution: spec.voxel_size, channels }
    }

    pub fn origin(&self) -> [f64; 2] {
        [-(self.width as f64) * self.resolution / 2.0, -(self.height as f64) * self.resolution / 2.0]
    }

    pub fn cell_center(&self, x: usize, y: usize) -> [f64; 2] {
        let o = self.origin();
        [o[0] + (x as f64 + 0.5) * self.resolution, o[1] + (y as f64 + 0.5) * self.resolution]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BevLayout {
    pub spec: LayoutSpec,
    pub bits: Vec<u16>,
}

impl BevLayout {
    pub fn empty(spec: LayoutSpec) -> Self {
        Self { spec, bits: vec![0; spec.width * spec.height] }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        x * self.spec.height + y
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.bits[self.index(x, y)]
    }

    #[inline]
    pub fn has(&self, x: usize, y: usize, channel: usize) -> bool {
        self.get(x, y) >> channel & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, channel: usize) {
        let i = self.index(x, y);
        self.bits[i] |= 1 << channel;
    }

    /// Boolean mask of one channel in storage order.
    pub fn channel_mask(&self, channel: usize) -> Vec<bool> {
        self.bits.iter().map(|b| b >> channel & 1 == 1).collect()
    }

    /// Checks that this layout covers the same x/y footprint as `spec`.
    pub fn check_footprint(&self, spec: &GridSpec) -> Result<()> {
        let ls = &self.spec;
        let o = ls.origin();
        let tol = 1e-4 * spec.voxel_size;
        let same = ls.width == spec.dims[0]
            && ls.height == spec.dims[1]
            && (ls.resolution - spec.voxel_size).abs() <= tol
            && (o[0] - spec.origin[0]).abs() <= tol
            && (o[1] - spec.origin[1]).abs() <= tol;
        if same {
            Ok(())
        } else {
            Err(OccError::FootprintMismatch(format!(
                "layout {}x{} @{} origin {:?} vs grid {:?} @{} origin {:?}",
                ls.width, ls.height, ls.resolution, o, spec.dims, spec.voxel_size, spec.origin
            )))
        }
    }
}

/// Simple polygon in world x/y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<[f64; 2]>,
}

impl Polygon {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(OccError::DegeneratePolygon(vertices.len()));
        }
        Ok(Self { vertices })
    }

    /// Even-odd rule point test.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let v = &self.vertices;
        let mut inside = false;
        let mut j = v.len() - 1;
        for i in 0..v.len() {
            let (a, b) = (v[i], v[j]);
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if p[0] < x {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.vertices {
            for a in 0..2 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        (lo, hi)
    }
}

/// Range of cell indices whose centres may fall inside `[lo, hi]`, padded by
/// one cell so rounding never drops a boundary cell.
fn cell_range(lo: f64, hi: f64, origin: f64, res: f64, n: usize) -> std::ops::Range<usize> {
    let first = (((lo - origin) / res - 0.5).ceil() - 1.0).max(0.0);
    let last = ((hi - origin) / res - 0.5).floor() + 1.0;
    if !(last >= 0.0) || first >= n as f64 || last < first {
        return 0..0;
    }
    first as usize..(last as usize + 1).min(n)
}

/// Rasterizes footprints into a multi-hot layout. A cell gets bit `c` iff its
/// centre lies inside (boundary inclusive for boxes) any footprint on channel `c`.
pub fn layout_rasterize(
    boxes: &[(usize, OrientedBox)],
    polygons: &[(usize, Polygon)],
    spec: LayoutSpec,
) -> Result<BevLayout> {
    spec.validate()?;
    let mut layout = BevLayout::empty(spec);
    let o = spec.origin();
    let res = spec.resolution;
    let check = |c: usize| {
        if c >= spec.channels {
            Err(OccError::ChannelOutOfRange { channel: c, channels: spec.channels })
        } else {
            Ok(())
        }
    };
    for (channel, b) in boxes {
        check(*channel)?;
        b.validate()?;
        let corners = b.corners_xy();
        let lo = |a: usize| corners.iter().map(|c| c[a]).fold(f64::INFINITY, f64::min);
        let hi = |a: usize| corners.iter().map(|c| c[a]).fold(f64::NEG_INFINITY, f64::max);
        for x in cell_range(lo(0), hi(0), o[0], res, spec.width) {
            for y in cell_range(lo(1), hi(1), o[1], res, spec.height) {
                let c = spec.cell_center(x, y);
                if b.contains_xy(c[0], c[1]) {
                    layout.set(x, y, *channel);
                }
            }
        }
    }
    for (channel, poly) in polygons {
        check(*channel)?;
        if poly.vertices.len() < 3 {
            return Err(OccError::DegeneratePolygon(poly.vertices.len()));
        }
        let (lo, hi) = poly.bbox();
        for x in cell_range(lo[0], hi[0], o[0], res, spec.width) {
            for y in cell_range(lo[1], hi[1], o[1], res, spec.height) {
                if poly.contains(spec.cell_center(x, y)) {
                    layout.set(x, y, *channel);
                }
            }
        }
    }
    Ok(layout)
}

/// Cells of `channel` selected by `mode`. Out-of-layout neighbours count as unflagged.
pub fn rule_mask(layout: &BevLayout, channel: usize, mode: EdgeMode) -> Vec<bool> {
    let (w, h) = (layout.spec.width, layout.spec.height);
    let flagged = layout.channel_mask(channel);
    match mode {
        EdgeMode::Full => flagged,
        EdgeMode::Edge => {
            let at = |x: isize, y: isize| {
                x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && flagged[x as usize * h + y as usize]
            };
            let mut out = vec![false; w * h];
            for x in 0..w {
                for y in 0..h {
                    let (xi, yi) = (x as isize, y as isize);
                    out[x * h + y] = flagged[x * h + y]
                        && !(at(xi - 1, yi) && at(xi + 1, yi) && at(xi, yi - 1) && at(xi, yi + 1));
                }
            }
            out
        }
    }
}

/// Applies overwrite rules in order, relabeling ground-band voxels of flagged columns.
pub fn layout_overwrite(
    grid: &SemanticOccupancyGrid,
    layout: &BevLayout,
    rules: &[OverwriteRule],
    schema: &LabelSchema,
) -> Result<SemanticOccupancyGrid> {
    layout.check_footprint(&grid.spec)?;
    let mut out = grid.clone();
    let [_, ny, nz] = grid.spec.dims;
    for rule in rules {
        if rule.channel as usize >= layout.spec.channels {
            return Err(OccError::ChannelOutOfRange {
                channel: rule.channel as usize,
                channels: layout.spec.channels,
            });
        }
        let mask = rule_mask(layout, rule.channel as usize, rule.mode);
        let z_hi = (rule.z_band[1] as usize).min(nz - 1);
        for (cell, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
            let (x, y) = (cell / ny, cell % ny);
            for z in rule.z_band[0] as usize..=z_hi {
                let cur = out.get(x, y, z);
                let eligible = if rule.source_classes.is_empty() {
                    !schema.is_free(cur)
                } else {
                    rule.source_classes.contains(&cur)
                };
                if eligible {
                    out.set(x, y, z, rule.target_class);
                }
            }
        }
    }
    Ok(out)
}
