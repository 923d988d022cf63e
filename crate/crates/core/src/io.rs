//! Label maps as PGM (P2 ASCII or P5 binary, `maxval = C - 1`) and palettes
//! as JSON arrays or comma-separated lines.

use crate::error::{Error, Result};
use crate::layout::HardLayout;
use crate::palette::{validate_palette, Palette};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmEncoding {
    /// `P2`, whitespace-separated decimal samples.
    Ascii,
    /// `P5`, one byte per sample; at most 256 classes.
    Binary,
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Option<&'a [u8]> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn number(&mut self, field: &str) -> Result<u64> {
        let tok = self
            .token()
            .ok_or_else(|| Error::MalformedHeader(format!("missing {field}")))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| {
                Error::MalformedHeader(format!(
                    "{field} is not a number: {:?}",
                    String::from_utf8_lossy(tok)
                ))
            })
    }
}

/// Parses a P2 or P5 label map. The class count is `maxval + 1`.
pub fn read_label_map(bytes: &[u8]) -> Result<HardLayout> {
    let mut r = HeaderReader { bytes, pos: 0 };
    let encoding = match r.token() {
        Some(b"P2") => PgmEncoding::Ascii,
        Some(b"P5") => PgmEncoding::Binary,
        Some(other) => {
            return Err(Error::MalformedHeader(format!(
                "unsupported magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
        None => return Err(Error::MalformedHeader("empty input".into())),
    };
    let width = r.number("width")? as usize;
    let height = r.number("height")? as usize;
    let maxval = r.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::MalformedHeader(format!(
            "empty image {width}x{height}"
        )));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::MalformedHeader(format!(
            "maxval {maxval} outside [1, 65535]"
        )));
    }
    let classes = maxval as usize + 1;
    let n = width * height;

    let labels = match encoding {
        PgmEncoding::Ascii => {
            let mut labels = Vec::with_capacity(n);
            while labels.len() < n {
                let Some(tok) = r.token() else { break };
                let v = std::str::from_utf8(tok)
                    .ok()
                    .and_then(|s| s.parse::<u64>().ok())
                    .ok_or_else(|| {
                        Error::MalformedHeader(format!(
                            "bad sample {:?}",
                            String::from_utf8_lossy(tok)
                        ))
                    })?;
                if v > maxval {
                    return Err(Error::LabelOutOfRange { label: v, classes });
                }
                labels.push(v as u32);
            }
            if labels.len() < n {
                return Err(Error::TruncatedPayload {
                    expected: n,
                    found: labels.len(),
                });
            }
            labels
        }
        PgmEncoding::Binary => {
            if maxval > 255 {
                return Err(Error::MalformedHeader(format!(
                    "P5 label maps need maxval <= 255, got {maxval}"
                )));
            }
            // exactly one whitespace byte separates maxval from the raster
            match bytes.get(r.pos) {
                Some(b) if b.is_ascii_whitespace() => r.pos += 1,
                _ => return Err(Error::MalformedHeader("missing raster separator".into())),
            }
            let payload = &bytes[r.pos..];
            if payload.len() < n {
                return Err(Error::TruncatedPayload {
                    expected: n,
                    found: payload.len(),
                });
            }
            let mut labels = Vec::with_capacity(n);
            for &b in &payload[..n] {
                if b as u64 > maxval {
                    return Err(Error::LabelOutOfRange {
                        label: b as u64,
                        classes,
                    });
                }
                labels.push(b as u32);
            }
            labels
        }
    };
    HardLayout::new(height, width, classes, labels)
}

/// Canonical encoding: `magic\nW H\nmaxval\n` followed by the raster. ASCII
/// rasters put one image row per line with single-space separators.
pub fn write_label_map(layout: &HardLayout, encoding: PgmEncoding) -> Result<Vec<u8>> {
    let maxval = layout.classes() - 1;
    let magic = match encoding {
        PgmEncoding::Ascii => {
            if maxval > 65535 {
                return Err(Error::InvalidConfig(format!(
                    "PGM supports at most 65536 classes, got {}",
                    layout.classes()
                )));
            }
            "P2"
        }
        PgmEncoding::Binary => {
            if maxval > 255 {
                return Err(Error::InvalidConfig(format!(
                    "P5 supports at most 256 classes, got {}",
                    layout.classes()
                )));
            }
            "P5"
        }
    };
    let mut out = format!(
        "{magic}\n{} {}\n{maxval}\n",
        layout.width(),
        layout.height()
    )
    .into_bytes();
    match encoding {
        PgmEncoding::Ascii => {
            for row in layout.labels().chunks(layout.width()) {
                let line: Vec<String> = row.iter().map(|l| l.to_string()).collect();
                out.extend_from_slice(line.join(" ").as_bytes());
                out.push(b'\n');
            }
        }
        PgmEncoding::Binary => out.extend(layout.labels().iter().map(|&l| l as u8)),
    }
    Ok(out)
}

/// Parses palettes from text: either a single JSON document (an array of
/// numbers or an array of arrays), or one palette per line where each line
/// is a JSON array or comma-separated decimals. Blank lines are skipped.
pub fn parse_palettes(text: &str) -> Result<Vec<Palette>> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(Error::MalformedPalette("no palette found".into()));
    }
    if trimmed.starts_with('[') {
        if let Ok(single) = serde_json::from_str::<Vec<f64>>(trimmed) {
            return Ok(vec![validate_palette(single)?]);
        }
        if let Ok(many) = serde_json::from_str::<Vec<Vec<f64>>>(trimmed) {
            return many.into_iter().map(validate_palette).collect();
        }
    }
    trimmed
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(parse_palette_line)
        .collect()
}

fn parse_palette_line(line: &str) -> Result<Palette> {
    let raw: Vec<f64> = if line.starts_with('[') {
        serde_json::from_str(line).map_err(|e| Error::MalformedPalette(e.to_string()))?
    } else {
        line.split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::MalformedPalette(format!("bad number {tok:?}")))
            })
            .collect::<Result<_>>()?
    };
    validate_palette(raw)
}

pub fn palette_to_json(p: &Palette) -> String {
    serde_json::to_string(p.as_slice()).expect("finite floats serialize")
}

pub fn palette_to_csv(p: &Palette) -> String {
    p.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}
