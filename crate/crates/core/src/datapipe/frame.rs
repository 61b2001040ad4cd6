use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const LIMF_MAGIC: &[u8; 4] = b"LIMF";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Frame {
    width: usize,
    height: usize,
    channels: u8,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, channels: u8, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Domain(format!("frame extents must be positive, got {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Domain(format!("frames have 1 or 3 channels, got {channels}")));
        }
        if pixels.len() != width * height * channels as usize {
            return Err(Error::dimension(
                "frame pixels",
                &[pixels.len()],
                &[width, height, channels as usize],
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: u8, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels as usize])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels as usize + c]
    }

    /// Rec. 601 luma, rounded. Grayscale frames are returned as is.
    pub fn to_gray(&self) -> Frame {
        if self.channels == 1 {
            return self.clone();
        }
        let pixels = self
            .pixels
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).round() as u8)
            .collect();
        Frame {
            width: self.width,
            height: self.height,
            channels: 1,
            pixels,
        }
    }

    /// Box-filtered grayscale thumbnail of `w × h`.
    pub fn thumbnail(&self, w: usize, h: usize) -> Result<Frame> {
        if w == 0 || h == 0 || w > self.width || h > self.height {
            return Err(Error::Domain(format!(
                "cannot shrink {}x{} to {w}x{h}",
                self.width, self.height
            )));
        }
        let gray = self.to_gray();
        let mut out = Vec::with_capacity(w * h);
        for ty in 0..h {
            let (y0, y1) = (ty * self.height / h, (ty + 1) * self.height / h);
            for tx in 0..w {
                let (x0, x1) = (tx * self.width / w, (tx + 1) * self.width / w);
                let mut sum = 0u64;
                for y in y0..y1 {
                    for x in x0..x1 {
                        sum += gray.pixels[y * self.width + x] as u64;
                    }
                }
                let n = ((y1 - y0) * (x1 - x0)) as f64;
                out.push((sum as f64 / n).round() as u8);
            }
        }
        Frame::new(w, h, 1, out)
    }
}

/// Shortest-side bilinear resize to the target, then a centered crop.
pub fn standardize_frame(f: &Frame, target_w: usize, target_h: usize) -> Result<Frame> {
    let (w, h) = (f.width, f.height);
    // the source's shorter side is scaled to the target extent on that axis
    let (sw, sh) = if w >= h {
        ((w as f64 * target_h as f64 / h as f64).round() as usize, target_h)
    } else {
        (target_w, (h as f64 * target_w as f64 / w as f64).round() as usize)
    };
    if sw < target_w || sh < target_h {
        return Err(Error::Standardization {
            width: w,
            height: h,
            target_w,
            target_h,
            reason: format!("scaled size {sw}x{sh} is smaller than the target"),
        });
    }
    let (ox, oy) = ((sw - target_w) / 2, (sh - target_h) / 2);
    let (rx, ry) = (w as f64 / sw as f64, h as f64 / sh as f64);
    let ch = f.channels as usize;
    let mut out = vec![0u8; target_w * target_h * ch];
    let sample = |pos: f64, len: usize| -> (usize, usize, f64) {
        let p = pos.clamp(0.0, (len - 1) as f64);
        let lo = p.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, p - lo as f64)
    };
    for y in 0..target_h {
        let (y0, y1, fy) = sample((y + oy) as f64 * ry + 0.5 * ry - 0.5, h);
        for x in 0..target_w {
            let (x0, x1, fx) = sample((x + ox) as f64 * rx + 0.5 * rx - 0.5, w);
            for c in 0..ch {
                let top = f.get(x0, y0, c) as f64 * (1.0 - fx) + f.get(x1, y0, c) as f64 * fx;
                let bottom = f.get(x0, y1, c) as f64 * (1.0 - fx) + f.get(x1, y1, c) as f64 * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out[(y * target_w + x) * ch + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Frame::new(target_w, target_h, f.channels, out)
}

/// Population variance of the 4-neighbour Laplacian over interior pixels.
pub fn laplacian_sharpness(f: &Frame) -> Result<f64> {
    if f.channels != 1 {
        return Err(Error::Domain("sharpness needs a grayscale frame".into()));
    }
    if f.width < 3 || f.height < 3 {
        return Err(Error::Domain(format!(
            "sharpness needs at least 3x3 pixels, got {}x{}",
            f.width, f.height
        )));
    }
    let px = |x: usize, y: usize| f.pixels[y * f.width + x] as f64;
    let mut responses = Vec::with_capacity((f.width - 2) * (f.height - 2));
    for y in 1..f.height - 1 {
        for x in 1..f.width - 1 {
            responses.push(px(x - 1, y) + px(x + 1, y) + px(x, y - 1) + px(x, y + 1) - 4.0 * px(x, y));
        }
    }
    let n = responses.len() as f64;
    let mean = responses.iter().sum::<f64>() / n;
    Ok(responses.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n)
}

/// Mean sharpness over the first, middle and last frames.
pub fn clip_sharpness(frames: &[Frame]) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::Domain("clip has no frames".into()));
    }
    let picks = [0, frames.len() / 2, frames.len() - 1];
    let mut sum = 0.0;
    for &i in &picks {
        sum += laplacian_sharpness(&frames[i].to_gray())?;
    }
    Ok(sum / picks.len() as f64)
}

/// Equally sized frames with a frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub width: usize,
    pub height: usize,
    pub channels: u8,
    pub fps: f64,
    pub frames: Vec<Frame>,
}

impl FrameSequence {
    pub fn new(fps: f64, frames: Vec<Frame>) -> Result<Self> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Domain(format!("fps must be positive, got {fps}")));
        }
        let first = frames
            .first()
            .ok_or_else(|| Error::Domain("frame sequence is empty".into()))?;
        let (width, height, channels) = (first.width, first.height, first.channels);
        if let Some(bad) = frames
            .iter()
            .find(|f| (f.width, f.height, f.channels) != (width, height, channels))
        {
            return Err(Error::dimension(
                "frame sequence",
                &[width, height, channels as usize],
                &[bad.width, bad.height, bad.channels as usize],
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            fps,
            frames,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    pub fn to_limf_bytes(&self) -> Vec<u8> {
        let frame_len = self.width * self.height * self.channels as usize;
        let mut out = Vec::with_capacity(25 + frame_len * self.frames.len());
        out.extend_from_slice(LIMF_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.push(self.channels);
        out.extend_from_slice(&(self.frames.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.fps.to_le_bytes());
        for f in &self.frames {
            out.extend_from_slice(&f.pixels);
        }
        out
    }

    pub fn from_limf_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        Self::read_limf(&mut r)
    }

    pub fn write_limf<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&self.to_limf_bytes())?;
        Ok(())
    }

    pub fn read_limf<R: Read>(r: &mut R) -> Result<Self> {
        let bad = |reason: String| Error::format("LIMF frame file", reason);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| bad(e.to_string()))?;
        if &magic != LIMF_MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }
        let mut header = [0u8; 21];
        r.read_exact(&mut header).map_err(|e| bad(e.to_string()))?;
        let u32_at = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
        let (width, height) = (u32_at(0), u32_at(4));
        let channels = header[8];
        let count = u32_at(9);
        let fps = f64::from_le_bytes(header[13..21].try_into().unwrap());
        let frame_len = width
            .checked_mul(height)
            .and_then(|p| p.checked_mul(channels as usize))
            .ok_or_else(|| bad("frame size overflows".into()))?;
        let mut frames = Vec::with_capacity(count.min(1 << 16));
        for i in 0..count {
            let mut pixels = vec![0u8; frame_len];
            r.read_exact(&mut pixels)
                .map_err(|e| bad(format!("frame {i} of {count}: {e}")))?;
            frames.push(Frame::new(width, height, channels, pixels)?);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(bad("trailing bytes after last frame".into()));
        }
        Self::new(fps, frames)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_limf_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_limf_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Frame {
        let px = (0..w * h).map(|i| ((i % w) * 7 + (i / w) * 3) as u8).collect();
        Frame::new(w, h, 1, px).unwrap()
    }

    #[test]
    fn identity_and_half_scale() {
        let f = ramp(832, 480);
        assert_eq!(standardize_frame(&f, 832, 480).unwrap(), f);
        let big = Frame::filled(1664, 960, 3, 77).unwrap();
        let out = standardize_frame(&big, 832, 480).unwrap();
        assert_eq!((out.width(), out.height()), (832, 480));
        assert!(out.pixels().iter().all(|&p| p == 77));
    }

    #[test]
    fn full_hd_crops_ten_columns() {
        // column index encoded in the pixel value; scale 480/1080
        let px: Vec<u8> = (0..1920 * 1080).map(|i| ((i % 1920) / 8) as u8).collect();
        let f = Frame::new(1920, 1080, 1, px).unwrap();
        let out = standardize_frame(&f, 832, 480).unwrap();
        assert_eq!((out.width(), out.height()), (832, 480));
        // scaled width is round(1920·480/1080) = 853; offset floor(21/2) = 10
        let r: f64 = 1920.0 / 853.0;
        let src = (10.0 + 0.5) * r - 0.5;
        let expected = (src / 8.0).floor() as u8;
        assert!((out.get(0, 0, 0) as i32 - expected as i32).abs() <= 1);
    }

    #[test]
    fn narrow_source_is_rejected() {
        let f = Frame::filled(640, 480, 1, 0).unwrap();
        assert!(matches!(
            standardize_frame(&f, 832, 480),
            Err(Error::Standardization { width: 640, .. })
        ));
    }

    #[test]
    fn sharpness_hand_cases() {
        assert_eq!(laplacian_sharpness(&Frame::filled(5, 4, 1, 9).unwrap()).unwrap(), 0.0);
        let mut px = vec![0u8; 12];
        px[4 + 1] = 1; // (x=1, y=1) in a 4-wide, 3-tall frame
        let f = Frame::new(4, 3, 1, px).unwrap();
        assert!((laplacian_sharpness(&f).unwrap() - 6.25).abs() < 1e-12);
        let checker: Vec<u8> = (0..36).map(|i| if (i % 6 + i / 6) % 2 == 0 { 0 } else { 255 }).collect();
        assert!(laplacian_sharpness(&Frame::new(6, 6, 1, checker).unwrap()).unwrap() > 0.0);
        assert!(laplacian_sharpness(&Frame::filled(2, 5, 1, 0).unwrap()).is_err());
    }

    #[test]
    fn limf_round_trip_and_corruption() {
        let seq = FrameSequence::new(2.5, vec![ramp(4, 3), ramp(4, 3)]).unwrap();
        let bytes = seq.to_limf_bytes();
        assert_eq!(&bytes[..4], b"LIMF");
        assert_eq!(bytes.len(), 25 + 2 * 12);
        assert_eq!(FrameSequence::from_limf_bytes(&bytes).unwrap(), seq);
        assert!(FrameSequence::from_limf_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(FrameSequence::from_limf_bytes(&extra).is_err());
    }

    #[test]
    fn thumbnail_averages_blocks() {
        let px = vec![0, 10, 20, 30, 0, 10, 20, 30];
        let f = Frame::new(4, 2, 1, px).unwrap();
        let t = f.thumbnail(2, 1).unwrap();
        assert_eq!(t.pixels(), &[5, 25]);
    }
}
