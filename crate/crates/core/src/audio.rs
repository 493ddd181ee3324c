//! Audio clips, WAV I/O, segmentations and zero-masking.
//!
//! Only 16-bit mono PCM is supported. Segment offsets are sample indices,
//! half-open (`start..end`).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Default time-segment duration, comparable to the mean annotated phone length.
pub const DEFAULT_TIME_SEGMENT_MS: f64 = 70.0;

const WAV_HEADER_LEN: usize = 44;
const PCM_FORMAT: u16 = 1;

/// A mono PCM utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioClip {
    pub id: String,
    pub sample_rate: u32,
    pub samples: Vec<i16>,
}

impl AudioClip {
    pub fn new(id: impl Into<String>, sample_rate: u32, samples: Vec<i16>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample_rate must be > 0".into()));
        }
        Ok(Self {
            id: id.into(),
            sample_rate,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Clips handed to the explainer must be non-empty.
    pub(crate) fn ensure_explainable(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Empty("audio clip has no samples"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    /// Annotated phone boundaries (TIMIT `.PHN`).
    Expert,
    /// Fixed-duration slices starting at sample 0.
    Time,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Number of samples shared with `other`. Touching intervals share none.
    pub fn overlap_samples(&self, other: &Segment) -> usize {
        overlap_samples(self, other)
    }
}

pub fn overlap_samples(a: &Segment, b: &Segment) -> usize {
    a.end.min(b.end).saturating_sub(a.start.max(b.start))
}

/// Ordered, non-overlapping segments; segment `i` has index `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    kind: SegmentKind,
    segments: Vec<Segment>,
}

impl Segmentation {
    pub fn new(kind: SegmentKind, segments: Vec<Segment>) -> Result<Self> {
        for (i, seg) in segments.iter().enumerate() {
            if seg.index != i {
                return Err(Error::Structure(format!(
                    "segment at position {i} has index {}",
                    seg.index
                )));
            }
            if seg.start >= seg.end {
                return Err(Error::Structure(format!(
                    "segment {i} is an empty interval [{}, {})",
                    seg.start, seg.end
                )));
            }
            if i > 0 && segments[i - 1].end > seg.start {
                return Err(Error::Structure(format!(
                    "segment {i} [{}, {}) overlaps or precedes segment {} [{}, {})",
                    seg.start,
                    seg.end,
                    i - 1,
                    segments[i - 1].start,
                    segments[i - 1].end
                )));
            }
        }
        Ok(Self { kind, segments })
    }

    /// Builds an expert segmentation from `(start, end, label)` triples.
    pub fn from_labeled(spans: impl IntoIterator<Item = (usize, usize, String)>) -> Result<Self> {
        let segments = spans
            .into_iter()
            .enumerate()
            .map(|(index, (start, end, label))| Segment {
                index,
                start,
                end,
                label: Some(label),
            })
            .collect();
        Self::new(SegmentKind::Expert, segments)
    }

    pub fn kind(&self) -> SegmentKind {
        self.kind
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn get(&self, index: usize) -> Option<&Segment> {
        self.segments.get(index)
    }

    /// Feature dimension `d`.
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.segments
            .iter()
            .map(|s| s.label.clone().unwrap_or_default())
            .collect()
    }

    /// Checks that every segment fits inside `clip`.
    pub fn check_fits(&self, clip: &AudioClip) -> Result<()> {
        match self.segments.last() {
            Some(last) if last.end > clip.len() => Err(Error::Structure(format!(
                "segment {} ends at {} beyond clip length {}",
                last.index,
                last.end,
                clip.len()
            ))),
            _ => Ok(()),
        }
    }

    /// Renders in `.PHN` layout. Time segments without labels are written as `-`.
    pub fn to_phn_string(&self) -> String {
        let mut out = String::new();
        for s in &self.segments {
            let _ = writeln!(out, "{} {} {}", s.start, s.end, s.label.as_deref().unwrap_or("-"));
        }
        out
    }
}

/// Returns a copy of `clip` with every sample inside the `masked` segments set to zero.
pub fn mask_segments(clip: &AudioClip, seg: &Segmentation, masked: &[usize]) -> Result<AudioClip> {
    seg.check_fits(clip)?;
    let mut out = clip.clone();
    for &i in masked {
        let s = seg.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            len: seg.len(),
        })?;
        out.samples[s.start..s.end].fill(0);
    }
    Ok(out)
}

/// Slices `clip` into consecutive segments of `duration_ms`, keeping a shorter
/// final remainder as its own segment.
pub fn time_segmentation(clip: &AudioClip, duration_ms: f64) -> Result<Segmentation> {
    let seg_len = samples_per_span(clip.sample_rate, duration_ms)?;
    clip.ensure_explainable()?;
    let segments = (0..clip.len())
        .step_by(seg_len)
        .enumerate()
        .map(|(index, start)| Segment {
            index,
            start,
            end: (start + seg_len).min(clip.len()),
            label: None,
        })
        .collect();
    Segmentation::new(SegmentKind::Time, segments)
}

/// `floor(rate * ms / 1000)`, rejecting spans shorter than one sample.
pub(crate) fn samples_per_span(sample_rate: u32, duration_ms: f64) -> Result<usize> {
    if !(duration_ms.is_finite() && duration_ms > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "duration must be positive, got {duration_ms} ms"
        )));
    }
    let n = (sample_rate as f64 * duration_ms / 1000.0).floor();
    if n < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "duration {duration_ms} ms is shorter than one sample at {sample_rate} Hz"
        )));
    }
    Ok(n as usize)
}

pub fn parse_phn(path: impl AsRef<Path>) -> Result<Segmentation> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_phn_str(&text, path)
}

/// Parses `.PHN` text: one `start end label` triple per line.
pub fn parse_phn_str(text: &str, origin: &Path) -> Result<Segmentation> {
    let mut spans = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: lineno + 1,
            message,
        };
        if fields.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, found {}", fields.len())));
        }
        let start: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(format!("bad start offset `{}`", fields[0])))?;
        let end: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(format!("bad end offset `{}`", fields[1])))?;
        spans.push((start, end, fields[2].to_string()));
    }
    Segmentation::from_labeled(spans)
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_wav(&bytes, id)
}

pub fn decode_wav(bytes: &[u8], id: String) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format("not a RIFF/WAVE file".into()));
    }
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let tag = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        // A truncated data chunk is common for streamed writers; take what is there.
        let body_end = body_start.saturating_add(size).min(bytes.len());
        let body = &bytes[body_start..body_end];
        match tag {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::Format("fmt chunk too short".into()));
                }
                let le16 = |o: usize| u16::from_le_bytes([body[o], body[o + 1]]);
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                fmt = Some((le16(0), le16(2), rate, le16(14)));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_start.saturating_add(size).saturating_add(size & 1);
    }
    let (format, channels, sample_rate, bits) =
        fmt.ok_or_else(|| Error::Format("missing fmt chunk".into()))?;
    if format != PCM_FORMAT {
        return Err(Error::Format(format!("format={format} unsupported")));
    }
    if channels != 1 {
        return Err(Error::Format(format!("channels={channels} unsupported")));
    }
    if bits != 16 {
        return Err(Error::Format(format!("bits_per_sample={bits} unsupported")));
    }
    if sample_rate == 0 {
        return Err(Error::Format("sample_rate=0 unsupported".into()));
    }
    let data = data.ok_or_else(|| Error::Format("missing data chunk".into()))?;
    let samples = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]))
        .collect();
    AudioClip::new(id, sample_rate, samples)
}

pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.samples.len() * 2;
    let mut out = Vec::with_capacity(WAV_HEADER_LEN + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM_FORMAT.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for s in &clip.samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(clip)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(samples: Vec<i16>) -> AudioClip {
        AudioClip::new("t", 16_000, samples).unwrap()
    }

    fn seg(spans: &[(usize, usize)]) -> Segmentation {
        Segmentation::from_labeled(spans.iter().map(|&(s, e)| (s, e, "x".to_string()))).unwrap()
    }

    #[test]
    fn masks_first_segment() {
        let c = clip(vec![1, 2, 3, 4, 5, 6, 7, 8]);
        let s = seg(&[(0, 4), (4, 8)]);
        let m = mask_segments(&c, &s, &[0]).unwrap();
        assert_eq!(m.samples, vec![0, 0, 0, 0, 5, 6, 7, 8]);
        assert_eq!(mask_segments(&c, &s, &[]).unwrap(), c);
    }

    #[test]
    fn gaps_are_never_masked() {
        let c = clip(vec![9; 10]);
        let s = seg(&[(2, 4), (6, 9)]);
        let m = mask_segments(&c, &s, &[0, 1]).unwrap();
        assert_eq!(m.samples, vec![9, 9, 0, 0, 9, 9, 0, 0, 0, 9]);
    }

    #[test]
    fn mask_index_out_of_range() {
        let c = clip(vec![1; 8]);
        let s = seg(&[(0, 4), (4, 8)]);
        assert!(matches!(
            mask_segments(&c, &s, &[2]),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn time_segments_with_remainder() {
        let s = time_segmentation(&clip(vec![0; 3360]), 70.0).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.segments().iter().all(|x| x.len() == 1120));

        let s = time_segmentation(&clip(vec![0; 3500]), 70.0).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!((s.segments()[3].start, s.segments()[3].end), (3360, 3500));
        assert_eq!(s.kind(), SegmentKind::Time);

        assert_eq!(time_segmentation(&clip(vec![0; 1120]), 70.0).unwrap().len(), 1);
    }

    #[test]
    fn time_segment_shorter_than_sample_rejected() {
        assert!(time_segmentation(&clip(vec![0; 100]), 0.01).is_err());
        assert!(time_segmentation(&clip(vec![0; 100]), 0.0).is_err());
    }

    #[test]
    fn overlap_arithmetic() {
        let a = Segment { index: 0, start: 0, end: 1120, label: None };
        let b = Segment { index: 1, start: 1000, end: 2000, label: None };
        let c = Segment { index: 1, start: 1120, end: 2240, label: None };
        assert_eq!(overlap_samples(&a, &b), 120);
        assert_eq!(overlap_samples(&a, &c), 0);
        assert_eq!(overlap_samples(&a, &a), 1120);
    }

    #[test]
    fn phn_parses_timit_lines() {
        let s = parse_phn_str("0 3050 h#\r\n3050 4559 sh\n\n", Path::new("x.phn")).unwrap();
        assert_eq!(s.labels(), vec!["h#", "sh"]);
        assert_eq!(s.kind(), SegmentKind::Expert);
        assert_eq!(s.to_phn_string(), "0 3050 h#\n3050 4559 sh\n");
    }

    #[test]
    fn phn_rejects_bad_structure() {
        let p = Path::new("x.phn");
        assert!(matches!(parse_phn_str("3050 3050 sh\n", p), Err(Error::Structure(_))));
        assert!(matches!(
            parse_phn_str("3050 4559 sh\n0 3050 h#\n", p),
            Err(Error::Structure(_))
        ));
        match parse_phn_str("0 10 a\n10 x b\n", p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_phn_str("0 10\n", p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn minimal_wav_is_46_bytes() {
        let bytes = encode_wav(&clip(vec![0]));
        assert_eq!(bytes.len(), 46);
        assert_eq!(decode_wav(&bytes, "t".into()).unwrap(), clip(vec![0]));
    }

    #[test]
    fn wav_rejects_stereo_and_non_pcm() {
        let mut bytes = encode_wav(&clip(vec![1, 2]));
        bytes[22] = 2;
        match decode_wav(&bytes, "t".into()) {
            Err(Error::Format(msg)) => assert_eq!(msg, "channels=2 unsupported"),
            other => panic!("unexpected {other:?}"),
        }
        let mut bytes = encode_wav(&clip(vec![1, 2]));
        bytes[20] = 3;
        assert!(matches!(decode_wav(&bytes, "t".into()), Err(Error::Format(m)) if m.contains("format=3")));
        let mut bytes = encode_wav(&clip(vec![1, 2]));
        bytes[34] = 8;
        assert!(matches!(decode_wav(&bytes, "t".into()), Err(Error::Format(m)) if m.contains("bits_per_sample=8")));
    }

    #[test]
    fn wav_skips_unknown_chunks() {
        let bytes = encode_wav(&clip(vec![5, -5, 7]));
        let mut with_list = bytes[..12].to_vec();
        with_list.extend_from_slice(b"LIST");
        with_list.extend_from_slice(&3u32.to_le_bytes());
        with_list.extend_from_slice(&[1, 2, 3, 0]);
        with_list.extend_from_slice(&bytes[12..]);
        assert_eq!(decode_wav(&with_list, "t".into()).unwrap().samples, vec![5, -5, 7]);
    }

    #[test]
    fn write_to_missing_directory_fails() {
        let err = write_wav(&clip(vec![0]), "/nonexistent-dir/for/sure/a.wav").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
