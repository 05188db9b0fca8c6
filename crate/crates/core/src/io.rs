//! Byte-level readers and writers.
//!
//! * `.flo`: Middlebury flow. Magic `PIEH` (the little-endian `f32`
//!   202021.25), `i32` width and height, then interleaved `(u, v)` `f32`
//!   values, all little-endian. NaN or `|v| > 1e9` marks unknown flow.
//! * PFM: `Pf` header for a single channel, a negative scale for
//!   little-endian data, rows stored bottom to top. Non-finite values mark
//!   unknown disparity.
//! * PGM: binary `P5` visualizations with maxval 255.
//! * Metrics CSV: one header row and one data row, see [`METRICS_CSV_COLUMNS`].
//!
//! Values are stored as `f32`; writing a grid whose entries are not exactly
//! representable in `f32` rounds them.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::fields::{BinaryMask, Grid, Grid1, Grid2};
use crate::metrics::MetricReport;

/// Little-endian bytes of 202021.25f32.
pub const FLO_MAGIC: [u8; 4] = *b"PIEH";
/// Components above this magnitude are Middlebury's "unknown flow".
pub const FLO_UNKNOWN_THRESHOLD: f32 = 1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("bad magic number {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("truncated data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("invalid dimensions {width}x{height}")]
    BadDimensions { width: i64, height: i64 },
    #[error("{extra} unexpected trailing bytes after the payload")]
    TrailingData { extra: usize },
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("unsupported format: {0}")]
    Unsupported(String),
}

pub type FormatResult<T> = std::result::Result<T, FormatError>;

/// File kinds understood by the command-line tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Flo,
    Pfm,
    Pgm,
    MaskPgm,
    MetricsCsv,
}

impl FileKind {
    /// Guesses the kind from the file extension. `.pgm` files are reported
    /// as [`FileKind::Pgm`].
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "flo" => Some(FileKind::Flo),
            "pfm" => Some(FileKind::Pfm),
            "pgm" => Some(FileKind::Pgm),
            "csv" => Some(FileKind::MetricsCsv),
            _ => None,
        }
    }
}

/// A decoded flow file: unknown pixels hold `[0, 0]` and are false in `valid`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedFlow {
    pub flow: Grid2,
    pub valid: BinaryMask,
}

/// A decoded scalar map: unknown pixels hold 0 and are false in `valid`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedMap {
    pub map: Grid1,
    pub valid: BinaryMask,
}

fn dims(width: i64, height: i64, bytes_per_pixel: usize) -> FormatResult<(usize, usize, usize)> {
    if width <= 0 || height <= 0 {
        return Err(FormatError::BadDimensions { width, height });
    }
    let w = usize::try_from(width).map_err(|_| FormatError::BadDimensions { width, height })?;
    let h = usize::try_from(height).map_err(|_| FormatError::BadDimensions { width, height })?;
    let payload = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(bytes_per_pixel))
        .ok_or(FormatError::BadDimensions { width, height })?;
    Ok((w, h, payload))
}

fn check_payload(data: &[u8], payload: usize) -> FormatResult<()> {
    if data.len() < payload {
        return Err(FormatError::Truncated {
            expected: payload,
            found: data.len(),
        });
    }
    if data.len() > payload {
        return Err(FormatError::TrailingData {
            extra: data.len() - payload,
        });
    }
    Ok(())
}

pub fn read_flo(bytes: &[u8]) -> FormatResult<DecodedFlow> {
    if bytes.len() < 4 {
        return Err(FormatError::Truncated {
            expected: 12,
            found: bytes.len(),
        });
    }
    if bytes[..4] != FLO_MAGIC {
        return Err(FormatError::BadMagic {
            found: bytes[..4].to_vec(),
        });
    }
    if bytes.len() < 12 {
        return Err(FormatError::Truncated {
            expected: 12,
            found: bytes.len(),
        });
    }
    let width = i32::from_le_bytes(bytes[4..8].try_into().unwrap()) as i64;
    let height = i32::from_le_bytes(bytes[8..12].try_into().unwrap()) as i64;
    let (w, h, payload) = dims(width, height, 8)?;
    let data = &bytes[12..];
    check_payload(data, payload)?;

    let mut flow = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for px in data.chunks_exact(8) {
        let u = f32::from_le_bytes(px[..4].try_into().unwrap());
        let v = f32::from_le_bytes(px[4..].try_into().unwrap());
        let known = |c: f32| c.is_finite() && c.abs() <= FLO_UNKNOWN_THRESHOLD;
        if known(u) && known(v) {
            flow.push([u as f64, v as f64]);
            valid.push(true);
        } else {
            flow.push([0.0, 0.0]);
            valid.push(false);
        }
    }
    Ok(DecodedFlow {
        flow: Grid::from_parts(h, w, flow),
        valid: Grid::from_parts(h, w, valid),
    })
}

/// Encodes a flow field. Pixels false in `valid` are written as NaN.
pub fn write_flo(flow: &Grid2, valid: Option<&BinaryMask>) -> Vec<u8> {
    let (h, w) = flow.shape();
    let mut out = Vec::with_capacity(12 + 8 * w * h);
    out.extend_from_slice(&FLO_MAGIC);
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for (i, [u, v]) in flow.as_slice().iter().enumerate() {
        let known = valid.is_none_or(|m| m.as_slice()[i]);
        let (u, v) = if known { (*u as f32, *v as f32) } else { (f32::NAN, f32::NAN) };
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Splits off whitespace-separated header tokens.
struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self, what: &str) -> FormatResult<&'a str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(FormatError::BadHeader(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| FormatError::BadHeader(format!("non-ASCII {what}")))
    }

    fn integer(&mut self, what: &str) -> FormatResult<i64> {
        let tok = self.token(what)?;
        tok.parse()
            .map_err(|_| FormatError::BadHeader(format!("{what} `{tok}` is not an integer")))
    }

    /// Consumes the single whitespace byte that ends the header.
    fn end_header(&mut self) -> FormatResult<&'a [u8]> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(&self.bytes[self.pos + 1..]),
            _ => Err(FormatError::BadHeader("header not terminated by whitespace".into())),
        }
    }
}

pub fn read_pfm(bytes: &[u8]) -> FormatResult<DecodedMap> {
    let mut cur = HeaderCursor::new(bytes);
    match cur.token("magic")? {
        "Pf" => {}
        "PF" => return Err(FormatError::Unsupported("three-channel PFM (`PF`)".into())),
        other => {
            return Err(FormatError::BadMagic {
                found: other.as_bytes().iter().take(4).copied().collect(),
            })
        }
    }
    let width = cur.integer("width")?;
    let height = cur.integer("height")?;
    let scale_tok = cur.token("scale")?;
    let scale: f64 = scale_tok
        .parse()
        .map_err(|_| FormatError::BadHeader(format!("scale `{scale_tok}` is not a number")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(FormatError::BadHeader(format!("scale must be non-zero, got {scale_tok}")));
    }
    let little_endian = scale < 0.0;
    let data = cur.end_header()?;
    let (w, h, payload) = dims(width, height, 4)?;
    check_payload(data, payload)?;

    let mut map = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    for (file_row, row_bytes) in data.chunks_exact(4 * w).enumerate() {
        let row = h - 1 - file_row;
        for (col, px) in row_bytes.chunks_exact(4).enumerate() {
            let raw: [u8; 4] = px.try_into().unwrap();
            let v = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            if v.is_finite() {
                map[row * w + col] = v as f64;
                valid[row * w + col] = true;
            }
        }
    }
    Ok(DecodedMap {
        map: Grid::from_parts(h, w, map),
        valid: Grid::from_parts(h, w, valid),
    })
}

/// Encodes a scalar map as little-endian PFM. Pixels false in `valid` are
/// written as `+inf`.
pub fn write_pfm(map: &Grid1, valid: Option<&BinaryMask>) -> Vec<u8> {
    let (h, w) = map.shape();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * w * h);
    for row in (0..h).rev() {
        for col in 0..w {
            let known = valid.is_none_or(|m| m.get(row, col));
            let v = if known { map.get(row, col) as f32 } else { f32::INFINITY };
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// An encoded PGM image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub bytes: Vec<u8>,
    /// Set when the value range collapsed to a point and the image was
    /// filled with mid-gray.
    pub degenerate_range: bool,
}

fn pgm_bytes(height: usize, width: usize, pixels: impl Iterator<Item = u8>) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels);
    out
}

/// Maps `map` affinely from `range` (default: the map's min and max) to
/// `0..=255`, rounding half up and clamping.
pub fn write_pgm(map: &Grid1, range: Option<(f64, f64)>) -> Pgm {
    let (lo, hi) = range.unwrap_or_else(|| map.min_max());
    let (h, w) = map.shape();
    if hi == lo || !(hi - lo).is_finite() {
        return Pgm {
            bytes: pgm_bytes(h, w, std::iter::repeat_n(128, h * w)),
            degenerate_range: true,
        };
    }
    let scale = 255.0 / (hi - lo);
    let bytes = pgm_bytes(
        h,
        w,
        map.as_slice()
            .iter()
            .map(|&v| ((v - lo) * scale + 0.5).floor().clamp(0.0, 255.0) as u8),
    );
    Pgm {
        bytes,
        degenerate_range: false,
    }
}

/// Confidence maps are drawn over the fixed range `[0, 1]`.
pub fn write_pgm_confidence(map: &Grid1) -> Pgm {
    write_pgm(map, Some((0.0, 1.0)))
}

/// Bilevel image: `false -> 0`, `true -> 255`.
pub fn write_pgm_mask(mask: &BinaryMask) -> Pgm {
    let (h, w) = mask.shape();
    Pgm {
        bytes: pgm_bytes(h, w, mask.as_slice().iter().map(|&b| if b { 255 } else { 0 })),
        degenerate_range: false,
    }
}

/// Reads a binary PGM as a mask: any non-zero pixel is `true`.
pub fn read_mask_pgm(bytes: &[u8]) -> FormatResult<BinaryMask> {
    let mut cur = HeaderCursor::new(bytes);
    let magic = cur.token("magic")?;
    if magic != "P5" {
        return Err(FormatError::BadMagic {
            found: magic.as_bytes().iter().take(4).copied().collect(),
        });
    }
    let width = cur.integer("width")?;
    let height = cur.integer("height")?;
    let maxval = cur.integer("maxval")?;
    if !(1..=65535).contains(&maxval) {
        return Err(FormatError::BadHeader(format!("maxval {maxval} outside 1..=65535")));
    }
    let data = cur.end_header()?;
    let bpp = if maxval > 255 { 2 } else { 1 };
    let (w, h, payload) = dims(width, height, bpp)?;
    check_payload(data, payload)?;
    let mask = data
        .chunks_exact(bpp)
        .map(|px| px.iter().any(|&b| b != 0))
        .collect();
    Ok(Grid::from_parts(h, w, mask))
}

/// Column order of [`write_metrics_csv`].
pub const METRICS_CSV_COLUMNS: [&str; 19] = [
    "task",
    "valid_px",
    "matched_px",
    "unmatched_px",
    "epe",
    "px1",
    "px3",
    "px5",
    "fl_all",
    "s0_10",
    "s10_40",
    "s40plus",
    "matched_epe",
    "unmatched_epe",
    "avg_err",
    "bad_0.5",
    "bad_1.0",
    "bad_2.0",
    "bad_3.0",
];

/// Four decimals, or `NA` when the metric is not available.
pub fn format_metric(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.4}"),
        None => "NA".to_string(),
    }
}

fn lookup(values: &[(f64, Option<f64>)], threshold: f64) -> Option<f64> {
    values.iter().find(|(t, _)| *t == threshold).and_then(|(_, v)| *v)
}

/// The data row matching [`METRICS_CSV_COLUMNS`].
pub fn metrics_csv_row(report: &MetricReport) -> Vec<String> {
    let c = report.pixel_counts;
    let has_split = report.matched_epe.is_some() || report.unmatched_epe.is_some() || c.matched + c.unmatched > 0;
    let count = |n: usize| if has_split { n.to_string() } else { "NA".into() };
    let mut row = vec![
        report.task.name().to_string(),
        c.valid.to_string(),
        count(c.matched),
        count(c.unmatched),
        format_metric(report.epe),
    ];
    row.extend([1.0, 3.0, 5.0].map(|t| format_metric(lookup(&report.outlier_rates, t))));
    row.push(format_metric(report.fl_all));
    row.extend(report.speed_binned_epe.map(format_metric));
    row.push(format_metric(report.matched_epe));
    row.push(format_metric(report.unmatched_epe));
    row.push(format_metric(report.avg_err));
    row.extend([0.5, 1.0, 2.0, 3.0].map(|t| format_metric(lookup(&report.bad_p, t))));
    row
}

pub fn write_metrics_csv(report: &MetricReport, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{}", METRICS_CSV_COLUMNS.join(","))?;
    writeln!(out, "{}", metrics_csv_row(report).join(","))
}
