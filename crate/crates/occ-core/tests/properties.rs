use occ_core::layout::rule_mask;
use occ_core::schema::EdgeMode;
use occ_core::*;
use proptest::prelude::*;

fn arb_box() -> impl Strategy<Value = (usize, OrientedBox)> {
    (0usize..15, -6.0..6.0f64, -6.0..6.0f64, 0.3..4.0f64, 0.3..4.0f64, -3.2..3.2f64).prop_map(
        |(ch, x, y, w, l, yaw)| {
            (ch, OrientedBox { center: [x, y, 0.0], size: [w, l, 1.0], yaw, class_id: 0, instance_id: 0 })
        },
    )
}

fn arb_poly() -> impl Strategy<Value = (usize, Polygon)> {
    (0usize..15, prop::collection::vec((-8.0..8.0f64, -8.0..8.0f64), 3..7))
        .prop_map(|(ch, v)| (ch, Polygon::new(v.into_iter().map(|(a, b)| [a, b]).collect()).unwrap()))
}

fn layout_spec() -> LayoutSpec {
    LayoutSpec { width: 16, height: 16, resolution: 1.0, channels: 15 }
}

proptest! {
    #[test]
    fn codec_round_trip(s in 1u32..=17, i in 0u32..=999) {
        match panoptic_encode(s, i) {
            Ok(l) => prop_assert_eq!(panoptic_decode(l).unwrap(), (s, i)),
            Err(_) => prop_assert!(s > 10 && i != 0),
        }
    }

    #[test]
    fn rasterize_order_invariant(
        boxes in prop::collection::vec(arb_box(), 0..6),
        polys in prop::collection::vec(arb_poly(), 0..4),
    ) {
        let a = layout_rasterize(&boxes, &polys, layout_spec()).unwrap();
        let mut rb = boxes.clone();
        rb.reverse();
        let mut rp = polys.clone();
        rp.reverse();
        let b = layout_rasterize(&rb, &rp, layout_spec()).unwrap();
        prop_assert_eq!(a.bits, b.bits);
    }

    #[test]
    fn rasterize_matches_per_cell_test(boxes in prop::collection::vec(arb_box(), 0..5)) {
        let l = layout_rasterize(&boxes, &[], layout_spec()).unwrap();
        let spec = layout_spec();
        for x in 0..16 {
            for y in 0..16 {
                let c = spec.cell_center(x, y);
                for ch in 0..15 {
                    let want = boxes.iter().any(|(bc, b)| *bc == ch && b.contains_xy(c[0], c[1]));
                    prop_assert_eq!(l.has(x, y, ch), want);
                }
            }
        }
    }

    #[test]
    fn overwrite_idempotent(seed_bits in prop::collection::vec(any::<u16>(), 64), ground in prop::collection::vec(0u8..21, 64 * 3)) {
        let schema = LabelSchema::nuscenes_default();
        let spec = GridSpec::centered([8, 8, 3], 1.0, 0.0);
        let grid = SemanticOccupancyGrid { spec, labels: ground };
        let layout = BevLayout { spec: LayoutSpec::for_grid(&spec, 15), bits: seed_bits.iter().map(|b| b & 0x7fff).collect() };
        let once = layout_overwrite(&grid, &layout, &schema.overwrite_rules, &schema).unwrap();
        let twice = layout_overwrite(&once, &layout, &schema.overwrite_rules, &schema).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn topdown_ignores_reordering_above_first_hit(labels in prop::collection::vec(0u8..6, 8 * 8 * 5), seed in any::<u64>()) {
        let schema = LabelSchema::toy();
        let spec = GridSpec::centered([8, 8, 5], 1.0, 0.0);
        let grid = SemanticOccupancyGrid { spec, labels };
        let base = bev_topdown_project(&grid, &schema);
        let mut permuted = grid.clone();
        let mut s = seed;
        for x in 0..8 {
            for y in 0..8 {
                let col = permuted.column(x, y).to_vec();
                let first = col.iter().position(|&l| l != schema.free_class);
                if let Some(f) = first {
                    let mut rest = col[f + 1..].to_vec();
                    // xorshift-driven rotation of the voxels above the first hit
                    s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                    if !rest.is_empty() {
                        let k = (s % rest.len() as u64) as usize;
                        rest.rotate_left(k);
                    }
                    for (dz, l) in rest.into_iter().enumerate() {
                        permuted.set(x, y, f + 1 + dz, l);
                    }
                }
            }
        }
        prop_assert_eq!(base, bev_topdown_project(&permuted, &schema));
    }
}

#[test]
fn edge_mask_of_full_layout_is_border() {
    let mut l = BevLayout::empty(LayoutSpec { width: 4, height: 4, resolution: 1.0, channels: 1 });
    for x in 0..4 {
        for y in 0..4 {
            l.set(x, y, 0);
        }
    }
    let m = rule_mask(&l, 0, EdgeMode::Edge);
    assert_eq!(m.iter().filter(|b| **b).count(), 12);
}
