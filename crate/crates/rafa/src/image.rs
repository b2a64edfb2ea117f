//! 8-bit RGB images and the binary PPM (P6) reader/writer used for all
//! image files in this crate.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize) -> Image {
        Image {
            height,
            width,
            pixels: vec![0; height * width * 3],
        }
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Image {
        Image {
            height,
            width,
            pixels: vec![value; height * width * 3],
        }
    }

    pub fn from_pixels(height: usize, width: usize, pixels: Vec<u8>) -> Result<Image> {
        if pixels.len() != height * width * 3 {
            return Err(Error::Contract(format!(
                "pixel buffer has {} bytes, {}x{} rgb needs {}",
                pixels.len(),
                height,
                width,
                height * width * 3
            )));
        }
        Ok(Image {
            height,
            width,
            pixels,
        })
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let o = (y * self.width + x) * 3;
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    /// Encode as binary PPM (P6, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let header = format!("P6\n{} {}\n255\n", self.width, self.height);
        let mut out = header.into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Image> {
        fn skip_ws(bytes: &[u8], pos: &mut usize) {
            while *pos < bytes.len() {
                match bytes[*pos] {
                    b' ' | b'\t' | b'\r' | b'\n' => *pos += 1,
                    b'#' => {
                        while *pos < bytes.len() && bytes[*pos] != b'\n' {
                            *pos += 1;
                        }
                    }
                    _ => break,
                }
            }
        }

        fn read_int(bytes: &[u8], pos: &mut usize) -> Result<usize> {
            skip_ws(bytes, pos);
            let start = *pos;
            while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
                *pos += 1;
            }
            if start == *pos {
                return Err(Error::Format("ppm: expected integer in header".to_string()));
            }
            std::str::from_utf8(&bytes[start..*pos])
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format("ppm: bad integer in header".to_string()))
        }

        if bytes.len() < 2 || &bytes[0..2] != b"P6" {
            return Err(Error::Format("ppm: missing P6 magic".to_string()));
        }
        let mut pos = 2usize;
        let width = read_int(bytes, &mut pos)?;
        let height = read_int(bytes, &mut pos)?;
        let maxval = read_int(bytes, &mut pos)?;
        if maxval != 255 {
            return Err(Error::Format(format!("ppm: maxval must be 255, got {maxval}")));
        }
        // Exactly one whitespace byte separates the header from the payload.
        if pos >= bytes.len() {
            return Err(Error::Format("ppm: truncated header".to_string()));
        }
        pos += 1;
        let need = height * width * 3;
        let payload = &bytes[pos..];
        if payload.len() < need {
            return Err(Error::Format(format!(
                "ppm: payload has {} bytes, expected {need}",
                payload.len()
            )));
        }
        Image::from_pixels(height, width, payload[..need].to_vec())
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_ppm())?;
        Ok(())
    }

    pub fn read_ppm(path: &Path) -> Result<Image> {
        let bytes = fs::read(path)
            .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
        Image::from_ppm(&bytes)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let mut img = Image::new(3, 2);
        for (i, p) in img.pixels.iter_mut().enumerate() {
            *p = (i * 13 % 256) as u8;
        }
        let back = Image::from_ppm(&img.to_ppm()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn ppm_with_comment() {
        let mut bytes = b"P6\n# generated\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = Image::from_ppm(&bytes).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.get(0, 1), [4, 5, 6]);
    }

    #[test]
    fn ppm_rejects_bad_magic_and_truncation() {
        assert!(Image::from_ppm(b"P5\n1 1\n255\nxxx").is_err());
        let short = b"P6\n2 2\n255\n\x01\x02".to_vec();
        assert!(Image::from_ppm(&short).is_err());
    }
}
