//! Causal attention over the interleaved clean/noisy frame axis.

use nn_core::AttentionMask;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StreamKind {
    Clean,
    Noisy,
}

/// Identifies one token stream: a frame and whether it carries the clean
/// history latent or the noised latent being denoised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamTag {
    pub frame: usize,
    pub kind: StreamKind,
}

impl StreamTag {
    pub fn clean(frame: usize) -> Self {
        Self { frame, kind: StreamKind::Clean }
    }

    pub fn noisy(frame: usize) -> Self {
        Self { frame, kind: StreamKind::Noisy }
    }
}

/// Noisy frame `t` sees clean frames before `t` and itself; clean frame `t`
/// sees clean frames up to and including `t`. With `noisy_sees_current_clean`
/// the noisy stream also sees the clean stream of its own frame.
pub fn temporal_allowed(query: StreamTag, key: StreamTag, noisy_sees_current_clean: bool) -> bool {
    if query == key {
        return true;
    }
    match (query.kind, key.kind) {
        (StreamKind::Noisy, StreamKind::Clean) => {
            key.frame < query.frame || (noisy_sees_current_clean && key.frame == query.frame)
        }
        (StreamKind::Clean, StreamKind::Clean) => key.frame <= query.frame,
        _ => false,
    }
}

/// `[clean₀, noisy₀, clean₁, noisy₁, …]`.
pub fn interleaved_tags(frames: usize) -> Vec<StreamTag> {
    (0..frames).flat_map(|f| [StreamTag::clean(f), StreamTag::noisy(f)]).collect()
}

pub fn stream_mask(tags: &[StreamTag], noisy_sees_current_clean: bool) -> AttentionMask {
    let n = tags.len();
    AttentionMask::from_fn(n, n, |i, j| temporal_allowed(tags[i], tags[j], noisy_sees_current_clean))
        .expect("every stream attends itself")
}

/// The `2T × 2T` mask over [`interleaved_tags`].
pub fn build_temporal_mask(frames: usize) -> AttentionMask {
    stream_mask(&interleaved_tags(frames), false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_frame_is_diagonal() {
        let m = build_temporal_mask(1);
        assert!(m.get(0, 0) && m.get(1, 1));
        assert!(!m.get(0, 1) && !m.get(1, 0));
    }

    #[test]
    fn two_frames() {
        let m = build_temporal_mask(2);
        // Rows: clean₀, noisy₀, clean₁, noisy₁.
        assert_eq!(m.row(3), &[true, false, false, true]);
        assert_eq!(m.row(2), &[true, false, true, false]);
    }

    #[test]
    fn same_frame_flag() {
        let tags = interleaved_tags(2);
        let m = stream_mask(&tags, true);
        assert_eq!(m.row(3), &[true, false, true, true]);
    }
}
