//! Binary PPM (`P6`) images and PGM (`P5`) masks and heatmaps, 8 bits per sample.

use std::path::Path;

use camforge_core::{LabelMask, RgbImage};

use crate::error::{CliError, Result};
use crate::tensor::DecodeError;

struct Header {
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header, DecodeError> {
    let err = |offset: usize, m: &str| DecodeError {
        offset,
        message: m.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(err(0, &format!("expected magic {}", String::from_utf8_lossy(magic))));
    }
    let mut at = 2;
    let mut fields = [0usize; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        // whitespace and comments before each field
        loop {
            match bytes.get(at) {
                Some(b) if b.is_ascii_whitespace() => at += 1,
                Some(b'#') => {
                    while bytes.get(at).is_some_and(|&b| b != b'\n') {
                        at += 1;
                    }
                }
                _ => break,
            }
        }
        let start = at;
        while bytes.get(at).is_some_and(u8::is_ascii_digit) {
            at += 1;
        }
        if start == at {
            let what = ["width", "height", "maxval"][k];
            return Err(err(start, &format!("expected {what}")));
        }
        *field = std::str::from_utf8(&bytes[start..at])
            .unwrap()
            .parse()
            .map_err(|_| err(start, "number too large"))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(at).is_some_and(u8::is_ascii_whitespace) {
        return Err(err(at, "expected whitespace after maxval"));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(err(2, "zero image size"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(err(at - 1, "only 8-bit maxval (1..=255) is supported"));
    }
    Ok(Header {
        width,
        height,
        maxval,
        data_start: at + 1,
    })
}

fn raster<'a>(bytes: &'a [u8], h: &Header, samples: usize) -> Result<&'a [u8], DecodeError> {
    let need = h.width * h.height * samples;
    let data = &bytes[h.data_start..];
    if data.len() < need {
        return Err(DecodeError {
            offset: bytes.len(),
            message: format!("raster needs {need} bytes, found {}", data.len()),
        });
    }
    if data.len() > need {
        return Err(DecodeError {
            offset: h.data_start + need,
            message: "trailing bytes after the raster".into(),
        });
    }
    Ok(data)
}

/// Channels mapped to `[0, 1]` by division by 255.
pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage, DecodeError> {
    let h = parse_header(bytes, b"P6")?;
    if h.maxval != 255 {
        return Err(DecodeError {
            offset: h.data_start - 1,
            message: format!("images must have maxval 255, got {}", h.maxval),
        });
    }
    let data = raster(bytes, &h, 3)?;
    let values = data.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(RgbImage::new(h.height, h.width, values).expect("bytes map into [0, 1]"))
}

/// Pixel values are class indices.
pub fn decode_pgm_mask(bytes: &[u8]) -> Result<LabelMask, DecodeError> {
    let h = parse_header(bytes, b"P5")?;
    let data = raster(bytes, &h, 1)?;
    Ok(LabelMask::new(h.height, h.width, data.iter().map(|&b| u32::from(b)).collect()).expect("sizes agree"))
}

/// Rounds to the nearest byte after scaling `[0, 1]` to `[0, 255]`.
pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.as_slice().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

pub fn encode_pgm(height: usize, width: usize, values: &[u8]) -> Vec<u8> {
    assert_eq!(values.len(), height * width);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(values);
    out
}

pub fn encode_mask(mask: &LabelMask) -> Result<Vec<u8>> {
    let values = mask
        .as_slice()
        .iter()
        .map(|&v| u8::try_from(v).map_err(|_| CliError::Usage(format!("label {v} does not fit in a PGM byte"))))
        .collect::<Result<Vec<u8>>>()?;
    Ok(encode_pgm(mask.height(), mask.width(), &values))
}

/// Min-max scaling to the full byte range; a constant channel maps to 0.
pub fn heatmap(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 })
        .collect()
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    decode_ppm(&read_bytes(path)?).map_err(|e| e.at(path))
}

pub fn read_mask(path: &Path) -> Result<LabelMask> {
    decode_pgm_mask(&read_bytes(path)?).map_err(|e| e.at(path))
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let img = RgbImage::new(1, 2, vec![0.0, 1.0, 128.0 / 255.0, 1.0, 0.0, 3.0 / 255.0]).unwrap();
        let b = encode_ppm(&img);
        assert_eq!(decode_ppm(&b).unwrap(), img);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut b = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        b.extend_from_slice(&[0, 3]);
        let m = decode_pgm_mask(&b).unwrap();
        assert_eq!(m.as_slice(), &[0, 3]);
    }

    #[test]
    fn errors_name_the_offset() {
        assert_eq!(decode_ppm(b"P5 1 1 255 x").unwrap_err().offset, 0);
        assert_eq!(decode_ppm(b"P6 1 x").unwrap_err().offset, 5);
        let e = decode_ppm(b"P6 1 1 255 ab").unwrap_err();
        assert_eq!(e.offset, 13);
        let e = decode_pgm_mask(b"P5 1 1 255 abc").unwrap_err();
        assert_eq!(e.offset, 12);
        assert!(decode_ppm(b"P6 1 1 65535 ab").is_err());
    }

    #[test]
    fn heatmap_spans_the_byte_range() {
        assert_eq!(heatmap(&[-1.0, 0.0, 1.0]), vec![0, 128, 255]);
        assert_eq!(heatmap(&[0.3, 0.3]), vec![0, 0]);
    }
}
