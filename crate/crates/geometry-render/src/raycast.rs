//! Amanatides–Woo voxel traversal of semantic occupancy grids.

use occ_core::{GridSpec, SemanticOccupancyGrid};

use crate::camera::{plucker_embedding, Camera};

/// First occupied voxel along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub voxel: [usize; 3],
    /// Ray parameter (metres along the unit direction) where the ray enters the voxel.
    pub t: f64,
    pub class: u8,
}

/// Parameter interval where `origin + t·dir` lies inside the grid box, clipped to `t ≥ 0`.
pub fn grid_interval(spec: &GridSpec, origin: [f64; 3], dir: [f64; 3]) -> Option<(f64, f64)> {
    let (lo, hi) = spec.bounds();
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < lo[a] || origin[a] >= hi[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut ta, mut tb) = ((lo[a] - origin[a]) * inv, (hi[a] - origin[a]) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t0 < t1).then_some((t0, t1))
}

/// Walks the voxels pierced by the ray in order and returns the first whose
/// class is not `free`, provided the ray enters it within `max_range`.
pub fn first_hit(grid: &SemanticOccupancyGrid, free: u8, origin: [f64; 3], dir: [f64; 3], max_range: f64) -> Option<Hit> {
    let spec = &grid.spec;
    let (t_enter, t_exit) = grid_interval(spec, origin, dir)?;
    if t_enter > max_range {
        return None;
    }
    let vs = spec.voxel_size;
    let dims = spec.dims;
    let mut idx = [0i64; 3];
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        let p = origin[a] + dir[a] * t_enter;
        let cell = ((p - spec.origin[a]) / vs).floor() as i64;
        idx[a] = cell.clamp(0, dims[a] as i64 - 1);
        if dir[a] > 0.0 {
            step[a] = 1;
            t_max[a] = (spec.origin[a] + (idx[a] + 1) as f64 * vs - origin[a]) / dir[a];
            t_delta[a] = vs / dir[a];
        } else if dir[a] < 0.0 {
            step[a] = -1;
            t_max[a] = (spec.origin[a] + idx[a] as f64 * vs - origin[a]) / dir[a];
            t_delta[a] = -vs / dir[a];
        }
    }
    let mut t = t_enter;
    loop {
        let v = [idx[0] as usize, idx[1] as usize, idx[2] as usize];
        let class = grid.get(v[0], v[1], v[2]);
        if class != free {
            return Some(Hit { voxel: v, t, class });
        }
        let a = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        t = t_max[a];
        if t >= t_exit || t > max_range {
            return None;
        }
        idx[a] += step[a];
        if idx[a] < 0 || idx[a] >= dims[a] as i64 {
            return None;
        }
        t_max[a] += t_delta[a];
    }
}

/// Per-pixel buffers stored row-major (`v * width + u`).
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryBuffers {
    pub width: usize,
    pub height: usize,
    pub semantic: Vec<u8>,
    pub coordinate: Vec<[f64; 3]>,
    pub plucker: Vec<[f64; 6]>,
    pub hit_mask: Vec<bool>,
    /// Entry distance of the hit voxel along the unit ray; infinite on misses.
    pub depth: Vec<f64>,
}

/// Casts one ray per pixel centre. Hits record the voxel's class and world
/// centre; misses record `free`, a zero coordinate and a cleared mask bit.
pub fn raycast_buffers(grid: &SemanticOccupancyGrid, free: u8, cam: &Camera, max_range: f64) -> GeometryBuffers {
    let n = cam.width * cam.height;
    let mut b = GeometryBuffers {
        width: cam.width,
        height: cam.height,
        semantic: vec![free; n],
        coordinate: vec![[0.0; 3]; n],
        plucker: plucker_embedding(cam),
        hit_mask: vec![false; n],
        depth: vec![f64::INFINITY; n],
    };
    let origin = cam.center();
    for py in 0..cam.height {
        for px in 0..cam.width {
            let i = py * cam.width + px;
            if let Some(h) = first_hit(grid, free, origin, cam.pixel_ray(px, py), max_range) {
                b.semantic[i] = h.class;
                b.coordinate[i] = grid.spec.center(h.voxel);
                b.hit_mask[i] = true;
                b.depth[i] = h.t;
            }
        }
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::CameraRole;
    use occ_core::Se3Pose;

    fn grid() -> SemanticOccupancyGrid {
        SemanticOccupancyGrid::filled(GridSpec::new([4, 4, 4], [-2.0, -2.0, 1.0], 1.0).unwrap(), 9)
    }

    fn cam() -> Camera {
        Camera { fx: 4.0, fy: 4.0, cx: 1.5, cy: 1.5, width: 3, height: 3, pose: Se3Pose::identity(), role: CameraRole::F }
    }

    #[test]
    fn empty_grid_misses() {
        let b = raycast_buffers(&grid(), 9, &cam(), 100.0);
        assert!(b.hit_mask.iter().all(|&h| !h));
        assert!(b.semantic.iter().all(|&s| s == 9));
        assert!(b.coordinate.iter().all(|c| *c == [0.0; 3]));
    }

    #[test]
    fn principal_ray_hits_nearest() {
        let mut g = grid();
        g.set(2, 2, 3, 4);
        let b = raycast_buffers(&g, 9, &cam(), 100.0);
        assert!(b.hit_mask[4]);
        assert_eq!(b.semantic[4], 4);
        assert_eq!(b.coordinate[4], [0.5, 0.5, 4.5]);
        assert_eq!(b.depth[4], 4.0);
        g.set(2, 2, 1, 7);
        let b = raycast_buffers(&g, 9, &cam(), 100.0);
        assert_eq!(b.semantic[4], 7);
        assert_eq!(b.coordinate[4], [0.5, 0.5, 2.5]);
        let b = raycast_buffers(&g, 9, &cam(), 1.5);
        assert!(!b.hit_mask[4]);
    }
}
