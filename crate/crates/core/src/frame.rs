//! Detector geometry and thresholded photon-counting frames.

use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Sensor area used for correlation, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorGeometry {
    pub width: u32,
    pub height: u32,
}

impl DetectorGeometry {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        let g = Self { width, height };
        g.validate()?;
        Ok(g)
    }

    pub fn square(side: u32) -> Result<Self> {
        Self::new(side, side)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(invalid(format!("detector must be at least 1x1, got {self}")));
        }
        Ok(())
    }

    /// Pixel count D.
    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width as usize + x
    }

    pub fn ensure_same(&self, other: &DetectorGeometry) -> Result<()> {
        if self != other {
            return Err(Error::GeometryMismatch {
                expected: self.to_string(),
                found: other.to_string(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for DetectorGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// Binary detection map of one exposure after thresholding: each pixel saw
/// no photon (0) or at least one (1).
#[derive(Clone, PartialEq, Eq)]
pub struct PhotonFrame {
    geometry: DetectorGeometry,
    pixels: Vec<u8>,
}

impl fmt::Debug for PhotonFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhotonFrame")
            .field("geometry", &self.geometry)
            .field("detected_count", &self.detected_count())
            .finish()
    }
}

impl PhotonFrame {
    pub fn zeros(geometry: DetectorGeometry) -> Self {
        Self {
            geometry,
            pixels: vec![0; geometry.pixel_count()],
        }
    }

    /// Builds a frame from raw pixel values; anything other than 0 or 1 is rejected.
    pub fn from_pixels(geometry: DetectorGeometry, pixels: Vec<u8>) -> Result<Self> {
        geometry.validate()?;
        if pixels.len() != geometry.pixel_count() {
            return Err(invalid(format!(
                "{} pixels supplied for a {geometry} frame",
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|&&v| v > 1) {
            return Err(invalid(format!("pixel value {v} is not binary")));
        }
        Ok(Self { geometry, pixels })
    }

    pub fn from_indices(geometry: DetectorGeometry, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut frame = Self::zeros(geometry);
        for i in indices {
            if i >= frame.pixels.len() {
                return Err(invalid(format!("pixel index {i} outside {geometry}")));
            }
            frame.pixels[i] = 1;
        }
        Ok(frame)
    }

    pub fn geometry(&self) -> DetectorGeometry {
        self.geometry
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[self.geometry.index(x, y)]
    }

    #[inline]
    pub(crate) fn fire(&mut self, index: usize) {
        self.pixels[index] = 1;
    }

    pub fn detected_count(&self) -> usize {
        self.pixels.iter().map(|&v| v as usize).sum()
    }

    /// Spatial mean of the detections (events per pixel).
    pub fn mean(&self) -> f64 {
        self.detected_count() as f64 / self.pixels.len() as f64
    }

    /// Linear indices of the pixels that fired, in raster order.
    pub fn detections(&self) -> Vec<u32> {
        self.pixels
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(i, _)| i as u32)
            .collect()
    }

    /// Pixelwise OR, in place.
    pub fn or_assign(&mut self, other: &PhotonFrame) -> Result<()> {
        self.geometry.ensure_same(&other.geometry)?;
        for (a, b) in self.pixels.iter_mut().zip(&other.pixels) {
            *a |= *b;
        }
        Ok(())
    }

    /// Writes the frame in the `TGIF` v1 layout: magic `TGIF`, version byte
    /// 0x01, width and height as u32 little endian, then one byte per pixel
    /// in row-major order.
    pub fn write_tgif<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TGIF_MAGIC)?;
        w.write_all(&[TGIF_VERSION])?;
        w.write_all(&self.geometry.width.to_le_bytes())?;
        w.write_all(&self.geometry.height.to_le_bytes())?;
        w.write_all(&self.pixels)?;
        Ok(())
    }

    pub fn to_tgif_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + self.pixels.len());
        self.write_tgif(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_tgif<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 13];
        read_exact_or_truncated(&mut r, &mut head, "TGIF header")?;
        if &head[..4] != TGIF_MAGIC {
            return Err(Error::Format(format!("bad magic {:?}, expected TGIF", &head[..4])));
        }
        if head[4] != TGIF_VERSION {
            return Err(Error::Format(format!("unsupported TGIF version {}", head[4])));
        }
        let width = u32::from_le_bytes(head[5..9].try_into().unwrap());
        let height = u32::from_le_bytes(head[9..13].try_into().unwrap());
        let geometry = DetectorGeometry::new(width, height).map_err(|e| Error::Format(e.to_string()))?;
        let mut pixels = vec![0u8; geometry.pixel_count()];
        read_exact_or_truncated(&mut r, &mut pixels, "TGIF pixel data")?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after TGIF pixel data".into()));
        }
        Self::from_pixels(geometry, pixels).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_tgif(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_tgif_bytes())?;
        Ok(())
    }
}

pub(crate) const TGIF_MAGIC: &[u8; 4] = b"TGIF";
pub(crate) const TGIF_VERSION: u8 = 0x01;

pub(crate) fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated {what}")),
        _ => Error::Io(e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(w: u32, h: u32) -> DetectorGeometry {
        DetectorGeometry::new(w, h).unwrap()
    }

    #[test]
    fn zero_sized_geometry_is_rejected() {
        assert!(DetectorGeometry::new(0, 4).is_err());
        assert!(DetectorGeometry::new(4, 0).is_err());
        assert_eq!(g(506, 506).pixel_count(), 256_036);
    }

    #[test]
    fn non_binary_pixels_are_rejected() {
        assert!(PhotonFrame::from_pixels(g(2, 1), vec![0, 2]).is_err());
        assert!(PhotonFrame::from_pixels(g(2, 1), vec![0]).is_err());
    }

    #[test]
    fn tgif_layout_is_exact() {
        let f = PhotonFrame::from_pixels(g(3, 2), vec![1, 0, 0, 0, 1, 1]).unwrap();
        let bytes = f.to_tgif_bytes();
        assert_eq!(
            bytes,
            vec![b'T', b'G', b'I', b'F', 1, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 1, 1]
        );
    }

    #[test]
    fn tgif_rejects_bad_magic_and_truncation() {
        let f = PhotonFrame::from_pixels(g(3, 2), vec![1, 0, 0, 0, 1, 1]).unwrap();
        let mut bytes = f.to_tgif_bytes();
        for cut in [0, 3, 8, 12, bytes.len() - 1] {
            let err = PhotonFrame::read_tgif(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Format(_)), "{err}");
        }
        bytes[0] = b'X';
        assert!(matches!(PhotonFrame::read_tgif(&bytes[..]), Err(Error::Format(_))));
    }

    #[test]
    fn or_requires_matching_geometry() {
        let mut a = PhotonFrame::zeros(g(2, 2));
        assert!(matches!(a.or_assign(&PhotonFrame::zeros(g(4, 1))), Err(Error::GeometryMismatch { .. })));
    }

    proptest! {
        #[test]
        fn tgif_roundtrip(w in 1u32..20, h in 1u32..20, seed in any::<u64>()) {
            let geometry = g(w, h);
            let pixels: Vec<u8> = (0..geometry.pixel_count())
                .map(|i| ((seed.rotate_left(i as u32 % 64) ^ i as u64) & 1) as u8)
                .collect();
            let f = PhotonFrame::from_pixels(geometry, pixels).unwrap();
            prop_assert_eq!(f.detected_count(), f.detections().len());
            let back = PhotonFrame::read_tgif(&f.to_tgif_bytes()[..]).unwrap();
            prop_assert_eq!(back, f);
        }
    }
}
