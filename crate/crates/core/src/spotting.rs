//! Text-spotting serialization: each instance is its text followed by eight
//! location tokens `<LOC_k>` (k in 0..=1000) giving the quad vertices
//! TL, TR, BR, BL as x/y pairs on a 1001-bin normalized grid.
//!
//! x is normalized by image width and y by image height.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const GRID_MAX: u16 = 1000;
pub const TOKENS_PER_INSTANCE: usize = 8;
const TOKEN_PREFIX: &str = "<LOC_";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodecError {
    #[error("non-finite coordinate {0}")]
    NonFinite(f64),
    #[error("grid index {0} outside 0..=1000")]
    IndexRange(u32),
    #[error("extent must be positive")]
    Extent,
    #[error("instance {0} has empty text")]
    EmptyText(usize),
    #[error("instance {0} text contains a location token")]
    TokenInText(usize),
    #[error("image dimensions must be positive")]
    ImageSize,
}

/// Maps a normalized coordinate onto the grid with round-half-away-from-zero.
/// Out-of-range inputs are clamped to [0, 1] with a warning.
pub fn quantize(coord: f64) -> Result<u16, CodecError> {
    if !coord.is_finite() {
        return Err(CodecError::NonFinite(coord));
    }
    let c = if (0.0..=1.0).contains(&coord) {
        coord
    } else {
        tracing::warn!(coord, "normalized coordinate clamped to [0, 1]");
        coord.clamp(0.0, 1.0)
    };
    let scaled = c * f64::from(GRID_MAX);
    let floor = scaled.floor();
    // decimal inputs like 0.2535 land a hair off the half step
    let idx = if (scaled - floor - 0.5).abs() < 1e-9 {
        floor + 1.0
    } else {
        scaled.round()
    };
    Ok(idx as u16)
}

pub fn dequantize(index: u32, extent_px: u32) -> Result<f64, CodecError> {
    if index > u32::from(GRID_MAX) {
        return Err(CodecError::IndexRange(index));
    }
    if extent_px == 0 {
        return Err(CodecError::Extent);
    }
    Ok(f64::from(index) / f64::from(GRID_MAX) * f64::from(extent_px))
}

/// Quad vertices in TL, TR, BR, BL order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "space", content = "points", rename_all = "snake_case")]
pub enum Quad {
    Grid([[u16; 2]; 4]),
    Normalized([[f64; 2]; 4]),
    Pixel([[f64; 2]; 4]),
}

impl Quad {
    pub fn to_grid(&self, width_px: u32, height_px: u32) -> Result<[[u16; 2]; 4], CodecError> {
        match *self {
            Quad::Grid(g) => {
                for p in g.iter().flatten() {
                    if *p > GRID_MAX {
                        return Err(CodecError::IndexRange(u32::from(*p)));
                    }
                }
                Ok(g)
            }
            Quad::Normalized(n) => map_points(n, |x, y| Ok([quantize(x)?, quantize(y)?])),
            Quad::Pixel(p) => {
                if width_px == 0 || height_px == 0 {
                    return Err(CodecError::ImageSize);
                }
                let (w, h) = (f64::from(width_px), f64::from(height_px));
                map_points(p, |x, y| Ok([quantize(x / w)?, quantize(y / h)?]))
            }
        }
    }

    /// Vertices in pixel space; grid and normalized quads are scaled by the
    /// image extent.
    pub fn to_pixels(&self, width_px: u32, height_px: u32) -> [[f64; 2]; 4] {
        let (w, h) = (f64::from(width_px), f64::from(height_px));
        match *self {
            Quad::Grid(g) => g.map(|[x, y]| {
                [
                    f64::from(x) / f64::from(GRID_MAX) * w,
                    f64::from(y) / f64::from(GRID_MAX) * h,
                ]
            }),
            Quad::Normalized(n) => n.map(|[x, y]| [x * w, y * h]),
            Quad::Pixel(p) => p,
        }
    }
}

fn map_points(
    pts: [[f64; 2]; 4],
    f: impl Fn(f64, f64) -> Result<[u16; 2], CodecError>,
) -> Result<[[u16; 2]; 4], CodecError> {
    let mut out = [[0u16; 2]; 4];
    for (o, [x, y]) in out.iter_mut().zip(pts) {
        *o = f(x, y)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextInstance {
    pub text: String,
    pub quad: Quad,
}

impl TextInstance {
    pub fn grid(text: impl Into<String>, quad: [[u16; 2]; 4]) -> Self {
        Self {
            text: text.into(),
            quad: Quad::Grid(quad),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpotToken {
    Text(String),
    Loc(u16),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpottingSequence {
    pub tokens: Vec<SpotToken>,
}

impl fmt::Display for SpottingSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.tokens {
            match t {
                SpotToken::Text(s) => f.write_str(s)?,
                SpotToken::Loc(k) => write!(f, "{TOKEN_PREFIX}{k}>")?,
            }
        }
        Ok(())
    }
}

pub fn encode(instances: &[TextInstance], width_px: u32, height_px: u32) -> Result<SpottingSequence, CodecError> {
    let mut tokens = Vec::with_capacity(instances.len() * (TOKENS_PER_INSTANCE + 1));
    for (i, inst) in instances.iter().enumerate() {
        if inst.text.is_empty() {
            return Err(CodecError::EmptyText(i));
        }
        if contains_loc_token(&inst.text) {
            return Err(CodecError::TokenInText(i));
        }
        let grid = inst.quad.to_grid(width_px, height_px)?;
        tokens.push(SpotToken::Text(inst.text.clone()));
        tokens.extend(grid.iter().flatten().map(|&k| SpotToken::Loc(k)));
    }
    Ok(SpottingSequence { tokens })
}

/// True when `s` contains something the decoder would read as a location token.
pub fn contains_loc_token(s: &str) -> bool {
    s.match_indices(TOKEN_PREFIX).any(|(at, _)| parse_loc_at(s, at).is_some())
}

/// Parses `<LOC_k>` at byte `at`, returning `(k, token_len)`. Only canonical
/// decimal forms (no sign, no leading zeros) with `k <= 1000` qualify.
fn parse_loc_at(s: &str, at: usize) -> Option<(u16, usize)> {
    let rest = s.get(at..)?.strip_prefix(TOKEN_PREFIX)?;
    let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 || digits > 4 || rest.as_bytes().get(digits) != Some(&b'>') {
        return None;
    }
    if digits > 1 && rest.starts_with('0') {
        return None;
    }
    let k: u16 = rest[..digits].parse().ok()?;
    (k <= GRID_MAX).then_some((k, TOKEN_PREFIX.len() + digits + 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeOptions {
    /// Drop one trailing space from each text segment.
    pub trim_trailing_space: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            trim_trailing_space: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultKind {
    /// A run of location tokens that is not exactly eight long.
    MalformedRun { tokens: usize },
    /// Eight location tokens with no text before them.
    EmptyText,
    /// Text at the end of the input without a closing location run.
    UnterminatedText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    /// Byte offset of the start of the offending span.
    pub offset: usize,
    #[serde(flatten)]
    pub kind: FaultKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    pub instances: Vec<TextInstance>,
    pub faults: Vec<Fault>,
}

/// Greedy left-to-right parse. Never fails: malformed spans become faults
/// and are dropped.
pub fn decode(raw: &str, opts: DecodeOptions) -> Decoded {
    let mut out = Decoded::default();
    let mut pos = 0;
    let mut text_start = 0;

    while pos < raw.len() {
        let Some(found) = raw[pos..].find(TOKEN_PREFIX).map(|p| p + pos) else {
            break;
        };
        let Some((first, len)) = parse_loc_at(raw, found) else {
            pos = found + 1;
            continue;
        };
        let text_end = found;
        let mut run = vec![first];
        let mut cursor = found + len;
        while let Some((k, l)) = parse_loc_at(raw, cursor) {
            run.push(k);
            cursor += l;
        }

        let mut text = &raw[text_start..text_end];
        if opts.trim_trailing_space {
            text = text.strip_suffix(' ').unwrap_or(text);
        }
        if run.len() != TOKENS_PER_INSTANCE {
            out.faults.push(Fault {
                offset: found,
                kind: FaultKind::MalformedRun { tokens: run.len() },
            });
        } else if text.is_empty() {
            out.faults.push(Fault {
                offset: found,
                kind: FaultKind::EmptyText,
            });
        } else {
            let mut quad = [[0u16; 2]; 4];
            for (v, pair) in quad.iter_mut().zip(run.chunks_exact(2)) {
                *v = [pair[0], pair[1]];
            }
            out.instances.push(TextInstance::grid(text, quad));
        }
        pos = cursor;
        text_start = cursor;
    }

    if text_start < raw.len() && !raw[text_start..].trim().is_empty() {
        out.faults.push(Fault {
            offset: text_start,
            kind: FaultKind::UnterminatedText,
        });
    }
    out
}

/// One line of a spotting prediction file: either raw model output to be
/// decoded or already-structured instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpottingRecord {
    Raw {
        image: String,
        width_px: u32,
        height_px: u32,
        raw: String,
    },
    Instances {
        #[serde(default)]
        image: Option<String>,
        #[serde(default)]
        width_px: Option<u32>,
        #[serde(default)]
        height_px: Option<u32>,
        instances: Vec<PixelInstance>,
    },
}

/// File form of an instance: quad vertices as `[[x, y] x 4]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelInstance {
    pub text: String,
    pub quad: [[f64; 2]; 4],
}

impl SpottingRecord {
    pub fn image(&self) -> Option<&str> {
        match self {
            SpottingRecord::Raw { image, .. } => Some(image),
            SpottingRecord::Instances { image, .. } => image.as_deref(),
        }
    }

    /// Instances in pixel coordinates (raw output is decoded and scaled by
    /// the image size). Decode faults are returned alongside.
    pub fn to_pixel_instances(&self, opts: DecodeOptions) -> (Vec<PixelInstance>, Vec<Fault>) {
        match self {
            SpottingRecord::Raw {
                width_px,
                height_px,
                raw,
                ..
            } => {
                let decoded = decode(raw, opts);
                let inst = decoded
                    .instances
                    .into_iter()
                    .map(|i| PixelInstance {
                        quad: i.quad.to_pixels(*width_px, *height_px),
                        text: i.text,
                    })
                    .collect();
                (inst, decoded.faults)
            }
            SpottingRecord::Instances { instances, .. } => (instances.clone(), Vec::new()),
        }
    }
}

pub fn parse_jsonl(text: &str) -> Result<Vec<SpottingRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DREAM: &str = "DREAM<LOC_253><LOC_286><LOC_346><LOC_298><LOC_345><LOC_339><LOC_252><LOC_330>";
    const DREAM_QUAD: [[u16; 2]; 4] = [[253, 286], [346, 298], [345, 339], [252, 330]];

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(0.0).unwrap(), 0);
        assert_eq!(quantize(1.0).unwrap(), 1000);
        assert_eq!(quantize(0.2535).unwrap(), 254);
        assert_eq!(quantize(506.0 / 2000.0).unwrap(), 253);
        assert_eq!(quantize(0.0005).unwrap(), 1);
        assert_eq!(quantize(0.0285).unwrap(), 29);
        assert_eq!(quantize(-0.2).unwrap(), 0);
        assert_eq!(quantize(1.7).unwrap(), 1000);
        assert!(quantize(f64::NAN).is_err());
    }

    #[test]
    fn dequantize_examples() {
        assert_eq!(dequantize(0, 640).unwrap(), 0.0);
        assert_eq!(dequantize(1000, 640).unwrap(), 640.0);
        assert_eq!(dequantize(253, 2000).unwrap(), 506.0);
        assert!(dequantize(1001, 10).is_err());
        assert!(dequantize(5, 0).is_err());
    }

    #[test]
    fn grid_roundtrip_for_wide_extents() {
        for w in [1000u32, 1001, 1280, 2000, 4096] {
            for k in 0..=1000u32 {
                let px = dequantize(k, w).unwrap();
                assert_eq!(u32::from(quantize(px / f64::from(w)).unwrap()), k, "k={k} w={w}");
            }
        }
    }

    #[test]
    fn dream_example() {
        let seq = encode(&[TextInstance::grid("DREAM", DREAM_QUAD)], 1, 1).unwrap();
        assert_eq!(seq.to_string(), DREAM);
        let d = decode(DREAM, DecodeOptions::default());
        assert!(d.faults.is_empty());
        assert_eq!(d.instances, vec![TextInstance::grid("DREAM", DREAM_QUAD)]);
    }

    #[test]
    fn empty_and_invalid_encode() {
        assert_eq!(encode(&[], 10, 10).unwrap().to_string(), "");
        assert_eq!(
            encode(&[TextInstance::grid("", DREAM_QUAD)], 1, 1),
            Err(CodecError::EmptyText(0))
        );
        assert_eq!(
            encode(&[TextInstance::grid("a<LOC_5>", DREAM_QUAD)], 1, 1),
            Err(CodecError::TokenInText(0))
        );
    }

    #[test]
    fn pixel_quads_are_normalized_per_axis() {
        let inst = TextInstance {
            text: "x".into(),
            quad: Quad::Pixel([[506.0, 100.0], [600.0, 100.0], [600.0, 200.0], [506.0, 200.0]]),
        };
        let s = encode(&[inst], 2000, 1000).unwrap().to_string();
        assert_eq!(s, "x<LOC_253><LOC_100><LOC_300><LOC_100><LOC_300><LOC_200><LOC_253><LOC_200>");
    }

    #[test]
    fn short_run_is_a_fault() {
        let d = decode("AB<LOC_1><LOC_2><LOC_3>", DecodeOptions::default());
        assert!(d.instances.is_empty());
        assert_eq!(
            d.faults,
            vec![Fault {
                offset: 2,
                kind: FaultKind::MalformedRun { tokens: 3 }
            }]
        );
    }

    #[test]
    fn two_instances_in_order() {
        let raw = format!("A{} B{}", "<LOC_0>".repeat(8), "<LOC_5>".repeat(8));
        let d = decode(&raw, DecodeOptions::default());
        assert!(d.faults.is_empty());
        let texts: Vec<_> = d.instances.iter().map(|i| i.text.as_str()).collect();
        assert_eq!(texts, ["A", " B"]);
        assert_eq!(d.instances[1].quad, Quad::Grid([[5, 5]; 4]));
    }

    #[test]
    fn recovery_after_long_run() {
        let raw = format!("bad{}good{}", "<LOC_1>".repeat(9), "<LOC_2>".repeat(8));
        let d = decode(&raw, DecodeOptions::default());
        assert_eq!(d.instances.len(), 1);
        assert_eq!(d.instances[0].text, "good");
        assert_eq!(d.faults[0].kind, FaultKind::MalformedRun { tokens: 9 });
        assert_eq!(d.faults[0].offset, 3);
    }

    #[test]
    fn trailing_space_trim_is_optional() {
        let raw = format!("word {}", "<LOC_1>".repeat(8));
        assert_eq!(decode(&raw, DecodeOptions::default()).instances[0].text, "word");
        let keep = DecodeOptions {
            trim_trailing_space: false,
        };
        assert_eq!(decode(&raw, keep).instances[0].text, "word ");
    }

    #[test]
    fn noncanonical_tokens_are_text() {
        assert!(!contains_loc_token("<LOC_1001> <LOC_01> <LOC_> <LOC_-1>"));
        assert!(contains_loc_token("x<LOC_1000>"));
        let d = decode("tail text <LOC_", DecodeOptions::default());
        assert_eq!(d.faults[0].kind, FaultKind::UnterminatedText);
    }

    #[test]
    fn jsonl_records() {
        let text = format!(
            "{{\"image\":\"a.png\",\"width_px\":2000,\"height_px\":1000,\"raw\":\"{DREAM}\"}}\n\
             {{\"instances\":[{{\"text\":\"hi\",\"quad\":[[0,0],[1,0],[1,1],[0,1]]}}]}}\n"
        );
        let recs = parse_jsonl(&text).unwrap();
        assert_eq!(recs.len(), 2);
        let (inst, faults) = recs[0].to_pixel_instances(DecodeOptions::default());
        assert!(faults.is_empty());
        assert_eq!(inst[0].quad[0], [506.0, 286.0]);
        assert!(matches!(recs[1], SpottingRecord::Instances { .. }));
    }

    fn text_strategy() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9 <>_LOC中文.]{1,12}".prop_filter("no loc tokens", |s| !contains_loc_token(s))
    }

    fn instance_strategy() -> impl Strategy<Value = TextInstance> {
        (text_strategy(), prop::array::uniform4(prop::array::uniform2(0u16..=1000)))
            .prop_map(|(t, q)| TextInstance::grid(t, q))
    }

    proptest! {
        #[test]
        fn roundtrip(list in prop::collection::vec(instance_strategy(), 0..6)) {
            let raw = encode(&list, 1, 1).unwrap().to_string();
            let d = decode(&raw, DecodeOptions { trim_trailing_space: false });
            prop_assert!(d.faults.is_empty(), "{:?}", d.faults);
            prop_assert_eq!(d.instances, list);
        }

        #[test]
        fn quantization_error_bound(x in 0.0f64..=1.0, w in 1u32..5000) {
            let back = dequantize(u32::from(quantize(x).unwrap()), w).unwrap() / f64::from(w);
            prop_assert!((back - x).abs() <= 0.5 / 1000.0 + 1e-9);
        }

        #[test]
        fn decoder_total_on_arbitrary_input(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
            let s = String::from_utf8_lossy(&bytes);
            let _ = decode(&s, DecodeOptions::default());
        }
    }
}
