use nn_core::Tensor;
use proptest::prelude::*;
use stoccdit::mask::interleaved_tags;
use stoccdit::{argmax_labels, build_temporal_mask, cfg_combine, stream_mask, StreamKind};

fn tensor(rows: usize, data: Vec<f64>) -> Tensor {
    let cols = data.len() / rows;
    Tensor::from_vec(&[rows, cols], data).unwrap()
}

proptest! {
    #[test]
    fn noisy_streams_see_only_strictly_earlier_clean_frames(frames in 1usize..8) {
        let tags = interleaved_tags(frames);
        let mask = build_temporal_mask(frames);
        for (i, q) in tags.iter().enumerate() {
            for (j, k) in tags.iter().enumerate() {
                if q.kind == StreamKind::Noisy && i != j {
                    let visible = k.kind == StreamKind::Clean && k.frame < q.frame;
                    prop_assert_eq!(mask.get(i, j), visible, "{:?} -> {:?}", q, k);
                }
            }
        }
    }

    #[test]
    fn same_frame_flag_only_adds_the_own_clean_stream(frames in 1usize..8) {
        let tags = interleaved_tags(frames);
        let (base, flagged) = (stream_mask(&tags, false), stream_mask(&tags, true));
        for (i, q) in tags.iter().enumerate() {
            for (j, k) in tags.iter().enumerate() {
                let added = q.kind == StreamKind::Noisy && k.kind == StreamKind::Clean && k.frame == q.frame;
                prop_assert_eq!(flagged.get(i, j), base.get(i, j) || added);
            }
        }
    }

    #[test]
    fn cfg_of_identical_predictions_is_that_prediction(
        data in prop::collection::vec(-5.0f64..5.0, 6),
        w in -4.0f64..8.0,
    ) {
        let v = tensor(3, data);
        let out = cfg_combine(&v, &v, w);
        prop_assert_eq!(out.data(), v.data());
    }

    #[test]
    fn argmax_ties_go_to_the_smaller_class(
        row in prop::collection::vec(-3.0f64..3.0, 5),
        a in 0usize..5,
        b in 0usize..5,
    ) {
        let mut row = row;
        let top = row.iter().copied().fold(f64::MIN, f64::max) + 1.0;
        row[a] = top;
        row[b] = top;
        prop_assert_eq!(argmax_labels(&tensor(1, row)), vec![a.min(b) as u8]);
    }
}
