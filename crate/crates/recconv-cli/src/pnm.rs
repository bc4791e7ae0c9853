//! Binary PGM (P5) and PPM (P6) reader plus a PGM writer. 8-bit only,
//! byte-exact, no external decoders.

use std::path::Path;

use recconv::Tensor4;

use crate::errors::{CliError, CliResult};

#[derive(Debug)]
pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    /// 1 for P5, 3 for P6.
    pub channels: usize,
    pub maxval: u16,
    /// Interleaved samples, row-major.
    pub data: Vec<u8>,
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    /// Next whitespace-separated token, skipping `#` comments.
    fn token(&mut self) -> CliResult<&'a [u8]> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(CliError::Validation("image: truncated header".into()));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> CliResult<usize> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| {
                CliError::Validation(format!(
                    "image: header field `{what}` is not a decimal integer"
                ))
            })
    }
}

pub fn parse_pnm(bytes: &[u8]) -> CliResult<PnmImage> {
    if bytes.len() < 2 {
        return Err(CliError::Validation("image: file too short for a header".into()));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        magic => {
            return Err(CliError::Validation(format!(
                "image: unsupported format, magic bytes {:?} (binary P5/P6 only)",
                String::from_utf8_lossy(magic)
            )))
        }
    };
    let mut reader = HeaderReader { bytes, pos: 2 };
    let width = reader.number("width")?;
    let height = reader.number("height")?;
    let maxval = reader.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(CliError::Validation(format!(
            "image: degenerate dimensions {width}x{height}"
        )));
    }
    if maxval == 0 || maxval > 255 {
        return Err(CliError::Validation(format!(
            "image: maxval {maxval} outside the 8-bit range"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    if reader.pos >= bytes.len() || !bytes[reader.pos].is_ascii_whitespace() {
        return Err(CliError::Validation("image: missing raster separator".into()));
    }
    let raster = &bytes[reader.pos + 1..];
    let expected = width * height * channels;
    if raster.len() != expected {
        return Err(CliError::Validation(format!(
            "image: raster has {} bytes, expected {expected}",
            raster.len()
        )));
    }
    Ok(PnmImage {
        width,
        height,
        channels,
        maxval: maxval as u16,
        data: raster.to_vec(),
    })
}

pub fn read_pnm(path: &Path) -> CliResult<PnmImage> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    parse_pnm(&bytes)
}

/// Samples mapped to [0, 1] by maxval; grayscale images are replicated to
/// the requested channel count, color images must match it.
pub fn to_tensor(img: &PnmImage, channels: usize) -> CliResult<Tensor4> {
    if img.channels != 1 && img.channels != channels {
        return Err(CliError::Validation(format!(
            "image: has {} channels, config needs {channels}",
            img.channels
        )));
    }
    let scale = 1.0 / f64::from(img.maxval);
    let mut t = Tensor4::zeros(1, channels, img.height, img.width)?;
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..channels {
                let src = if img.channels == 1 { 0 } else { c };
                let v = img.data[(y * img.width + x) * img.channels + src];
                t.set(0, c, y, x, f64::from(v) * scale);
            }
        }
    }
    Ok(t)
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> CliResult<()> {
    assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    std::fs::write(path, out)
        .map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_p5_with_comments() {
        let mut bytes = b"P5 # gray\n# another comment\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 64, 128, 192, 255, 10]);
        let img = parse_pnm(&bytes).unwrap();
        assert_eq!((img.width, img.height, img.channels), (3, 2, 1));
        assert_eq!(img.data, vec![0, 64, 128, 192, 255, 10]);
    }

    #[test]
    fn rejects_ascii_formats_naming_the_magic() {
        let err = parse_pnm(b"P2\n2 2\n255\n0 0 0 0").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("P2"), "{msg}");
    }

    #[test]
    fn rejects_wrong_raster_length() {
        let mut bytes = b"P6 2 2 255\n".to_vec();
        bytes.extend_from_slice(&[0u8; 11]); // needs 12
        assert!(parse_pnm(&bytes).is_err());
    }

    #[test]
    fn gray_replication_and_scaling() {
        let img = PnmImage {
            width: 2,
            height: 1,
            channels: 1,
            maxval: 255,
            data: vec![0, 255],
        };
        let t = to_tensor(&img, 3).unwrap();
        assert_eq!(t.dims(), (1, 3, 1, 2));
        for c in 0..3 {
            assert_eq!(t.get(0, c, 0, 0), 0.0);
            assert_eq!(t.get(0, c, 0, 1), 1.0);
        }
    }
}
