use std::path::Path;

use proptest::prelude::*;

use phonelime::audio::{
    decode_wav, encode_wav, mask_segments, parse_phn_str, time_segmentation,
};
use phonelime::{AudioClip, Segmentation};

/// A clip plus a contiguous labelled segmentation covering it.
fn clip_and_segments() -> impl Strategy<Value = (AudioClip, Segmentation)> {
    prop::collection::vec(1usize..200, 1..12).prop_flat_map(|lengths| {
        let total: usize = lengths.iter().sum();
        prop::collection::vec(any::<i16>(), total).prop_map(move |samples| {
            let mut start = 0;
            let spans: Vec<(usize, usize, String)> = lengths
                .iter()
                .enumerate()
                .map(|(i, len)| {
                    let s = (start, start + len, format!("p{i}"));
                    start += len;
                    s
                })
                .collect();
            (
                AudioClip::new("c", 16_000, samples).unwrap(),
                Segmentation::from_labeled(spans).unwrap(),
            )
        })
    })
}

fn zeroed_positions(original: &AudioClip, masked: &AudioClip) -> Vec<usize> {
    original
        .samples
        .iter()
        .zip(&masked.samples)
        .enumerate()
        .filter(|(_, (a, b))| **a != 0 && **b == 0)
        .map(|(i, _)| i)
        .collect()
}

proptest! {
    #[test]
    fn masking_is_idempotent((clip, seg) in clip_and_segments(), picks in prop::collection::vec(any::<prop::sample::Index>(), 0..6)) {
        let m: Vec<usize> = picks.iter().map(|ix| ix.index(seg.len())).collect();
        let once = mask_segments(&clip, &seg, &m).unwrap();
        let twice = mask_segments(&once, &seg, &m).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn masking_union_zeroes_union((clip, seg) in clip_and_segments(),
                                  a in prop::collection::vec(any::<prop::sample::Index>(), 0..6),
                                  b in prop::collection::vec(any::<prop::sample::Index>(), 0..6)) {
        let a: Vec<usize> = a.iter().map(|ix| ix.index(seg.len())).collect();
        let b: Vec<usize> = b.iter().map(|ix| ix.index(seg.len())).collect();
        let both: Vec<usize> = a.iter().chain(&b).copied().collect();
        let za = zeroed_positions(&clip, &mask_segments(&clip, &seg, &a).unwrap());
        let zb = zeroed_positions(&clip, &mask_segments(&clip, &seg, &b).unwrap());
        let mut union: Vec<usize> = za.into_iter().chain(zb).collect();
        union.sort_unstable();
        union.dedup();
        prop_assert_eq!(zeroed_positions(&clip, &mask_segments(&clip, &seg, &both).unwrap()), union);
    }

    #[test]
    fn time_segments_cover_every_sample_once(len in 1usize..20_000, ms in 1.0f64..200.0, rate in prop::sample::select(vec![8_000u32, 16_000, 44_100])) {
        let clip = AudioClip::new("t", rate, vec![1; len]).unwrap();
        let Ok(seg) = time_segmentation(&clip, ms) else {
            // Only durations shorter than one sample are rejected.
            prop_assert!(ms * rate as f64 / 1000.0 < 1.0);
            return Ok(());
        };
        let mut next = 0;
        for s in seg.segments() {
            prop_assert_eq!(s.start, next);
            prop_assert!(s.end > s.start);
            next = s.end;
        }
        prop_assert_eq!(next, len);
        prop_assert_eq!(seg.segments().iter().map(|s| s.len()).sum::<usize>(), len);
    }

    #[test]
    fn phn_round_trip_keeps_numbers((_, seg) in clip_and_segments()) {
        let text = seg.to_phn_string();
        let back = parse_phn_str(&text, Path::new("x.phn")).unwrap();
        prop_assert_eq!(&back, &seg);
        prop_assert_eq!(back.to_phn_string(), text);
    }

    #[test]
    fn wav_round_trip(samples in prop::collection::vec(any::<i16>(), 1..2000), rate in 1u32..96_000) {
        let clip = AudioClip::new("w", rate, samples).unwrap();
        let back = decode_wav(&encode_wav(&clip), "w".into()).unwrap();
        prop_assert_eq!(back, clip);
    }
}
