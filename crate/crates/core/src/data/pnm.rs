//! Binary PGM (P5) / PPM (P6) images, bit-exact.
//!
//! Writer layout is fixed: `P5\n<W> <H>\n255\n` (or `P6`) followed by
//! row-major 8-bit samples, RGB interleaved for P6. Quantization is
//! nearest with halves rounding up. The reader accepts standard headers
//! (whitespace and `#` comments) and reports byte offsets on malformed
//! input.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use std::io::Write;
use std::path::Path;

/// `floor(v*255 + 0.5)` clamped to `[0, 255]`.
pub fn quantize_u8(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn write_pgm_raw(path: &Path, w: usize, h: usize, bytes: &[u8]) -> Result<()> {
    debug_assert_eq!(bytes.len(), w * h);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P5\n{w} {h}\n255\n")?;
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}

pub fn write_ppm_raw(path: &Path, w: usize, h: usize, bytes: &[u8]) -> Result<()> {
    debug_assert_eq!(bytes.len(), 3 * w * h);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P6\n{w} {h}\n255\n")?;
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}

/// Write a `[1,H,W]` tensor as P5 or a `[3,H,W]` tensor as P6, quantizing
/// values expected in `[0,1]`.
pub fn write_image<S: Scalar>(path: &Path, t: &Tensor<S>) -> Result<()> {
    let shape = t.shape();
    if shape.len() != 3 {
        return Err(Error::shape(
            "write_image",
            format!("expected [C,H,W], got {shape:?}"),
        ));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    match c {
        1 => {
            let bytes: Vec<u8> = t.data().iter().map(|&v| quantize_u8(v.to_f64())).collect();
            write_pgm_raw(path, w, h, &bytes)
        }
        3 => {
            // planar -> interleaved
            let d = t.data();
            let plane = h * w;
            let mut bytes = Vec::with_capacity(3 * plane);
            for p in 0..plane {
                for ch in 0..3 {
                    bytes.push(quantize_u8(d[ch * plane + p].to_f64()));
                }
            }
            write_ppm_raw(path, w, h, &bytes)
        }
        other => Err(Error::shape(
            "write_image",
            format!("unsupported channel count {other}"),
        )),
    }
}

struct HeaderScanner<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> HeaderScanner<'a> {
    fn skip_ws_and_comments(&mut self) {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                return;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(Error::format(
                self.path,
                format!("expected {what}"),
                Some(start),
            ));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(self.path, format!("bad {what}"), Some(start)))
    }
}

/// Read a P5 image as `[1,H,W]` or a P6 image as `[3,H,W]` with values in
/// `[0,1]` (byte / 255).
pub fn read_image(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path)?;
    let pstr = path.display().to_string();
    if bytes.len() < 2 || bytes[0] != b'P' || (bytes[1] != b'5' && bytes[1] != b'6') {
        return Err(Error::format(
            &pstr,
            format!(
                "bad magic {:?}, expected P5 or P6",
                String::from_utf8_lossy(&bytes[..bytes.len().min(2)])
            ),
            Some(0),
        ));
    }
    let channels = if bytes[1] == b'5' { 1usize } else { 3usize };
    let mut scan = HeaderScanner {
        bytes: &bytes,
        pos: 2,
        path: &pstr,
    };
    let w = scan.number("width")?;
    let h = scan.number("height")?;
    let maxval = scan.number("maxval")?;
    if maxval != 255 {
        return Err(Error::format(
            &pstr,
            format!("unsupported maxval {maxval}, expected 255"),
            Some(scan.pos),
        ));
    }
    if w == 0 || h == 0 {
        return Err(Error::format(&pstr, "zero image dimension", Some(scan.pos)));
    }
    // exactly one whitespace byte separates the header from the payload
    if scan.pos >= bytes.len() || !bytes[scan.pos].is_ascii_whitespace() {
        return Err(Error::format(
            &pstr,
            "missing separator before payload",
            Some(scan.pos),
        ));
    }
    let payload_start = scan.pos + 1;
    let need = w * h * channels;
    let have = bytes.len() - payload_start;
    if have < need {
        return Err(Error::format(
            &pstr,
            format!("truncated payload: need {need} bytes, have {have}"),
            Some(bytes.len()),
        ));
    }
    let payload = &bytes[payload_start..payload_start + need];
    let plane = w * h;
    let mut data = vec![0.0f32; channels * plane];
    if channels == 1 {
        for (d, &b) in data.iter_mut().zip(payload) {
            *d = b as f32 / 255.0;
        }
    } else {
        // interleaved -> planar
        for p in 0..plane {
            for ch in 0..3 {
                data[ch * plane + p] = payload[3 * p + ch] as f32 / 255.0;
            }
        }
    }
    Ok(Tensor::from_vec(&[channels, h, w], data))
}
