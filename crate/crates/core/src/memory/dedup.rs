//! Clip-level captions from frame-level captions.

use std::collections::HashSet;

/// A run of frames sharing one caption.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clip {
    pub start_frame: i64,
    pub end_frame: i64,
    pub caption: String,
}

fn token_set(text: &str) -> HashSet<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Jaccard similarity of lowercased whitespace token sets. Two empty sets score 1.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let sa = token_set(a);
    let sb = token_set(b);
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.intersection(&sb).count();
    let union = sa.len() + sb.len() - inter;
    inter as f64 / union as f64
}

/// Greedy left-to-right merge. A frame extends the open clip when its caption
/// scores at least `threshold` against the clip's first caption; otherwise it
/// opens a new clip. Input must be sorted by frame index without duplicates.
pub fn deduplicate_clips(frame_captions: &[(i64, String)], threshold: f64) -> Vec<Clip> {
    let mut clips: Vec<Clip> = Vec::new();
    let mut rep_tokens: HashSet<String> = HashSet::new();
    for (frame, caption) in frame_captions {
        let tokens = token_set(caption);
        let joins = match clips.last() {
            None => false,
            Some(_) => {
                let score = if tokens.is_empty() && rep_tokens.is_empty() {
                    1.0
                } else {
                    let inter = tokens.intersection(&rep_tokens).count();
                    inter as f64 / (tokens.len() + rep_tokens.len() - inter) as f64
                };
                score >= threshold
            }
        };
        if joins {
            clips.last_mut().expect("open clip").end_frame = *frame;
        } else {
            clips.push(Clip {
                start_frame: *frame,
                end_frame: *frame,
                caption: caption.clone(),
            });
            rep_tokens = tokens;
        }
    }
    clips
}

#[cfg(test)]
mod tests {
    use super::*;

    fn caps(items: &[(i64, &str)]) -> Vec<(i64, String)> {
        items.iter().map(|(f, c)| (*f, c.to_string())).collect()
    }

    #[test]
    fn merges_identical_and_splits_disjoint() {
        let input = caps(&[(0, "a dog runs"), (1, "a dog runs"), (2, "a cat sits")]);
        let clips = deduplicate_clips(&input, 0.6);
        assert_eq!(
            clips,
            vec![
                Clip { start_frame: 0, end_frame: 1, caption: "a dog runs".into() },
                Clip { start_frame: 2, end_frame: 2, caption: "a cat sits".into() },
            ]
        );
        // {a} shared out of {a,dog,runs,cat,sits}
        assert!((jaccard("a dog runs", "a cat sits") - 0.2).abs() < 1e-12);
    }

    #[test]
    fn zero_threshold_merges_everything() {
        let input = caps(&[(0, "x"), (4, "y z"), (9, "w")]);
        let clips = deduplicate_clips(&input, 0.0);
        assert_eq!(clips.len(), 1);
        assert_eq!((clips[0].start_frame, clips[0].end_frame), (0, 9));
        assert_eq!(clips[0].caption, "x");
    }

    #[test]
    fn unit_threshold_only_merges_exact_token_sets() {
        let input = caps(&[(0, "a b"), (1, "B A"), (2, "a b c"), (3, "d")]);
        let clips = deduplicate_clips(&input, 1.0);
        let bounds: Vec<_> = clips.iter().map(|c| (c.start_frame, c.end_frame)).collect();
        assert_eq!(bounds, vec![(0, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn representative_is_first_caption_not_latest() {
        // "a b c" ~ "a b c d" (0.75) ~ "b c d e" (0.6 vs latest), but vs first only 0.4
        let input = caps(&[(0, "a b c"), (1, "a b c d"), (2, "b c d e")]);
        let clips = deduplicate_clips(&input, 0.6);
        let bounds: Vec<_> = clips.iter().map(|c| (c.start_frame, c.end_frame)).collect();
        assert_eq!(bounds, vec![(0, 1), (2, 2)]);
    }

    #[test]
    fn empty_input() {
        assert!(deduplicate_clips(&[], 0.6).is_empty());
    }
}
