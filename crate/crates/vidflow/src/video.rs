//! Pixel videos and the VVF on-disk container.
//!
//! VVF layout, all little-endian:
//!
//! ```text
//! magic   "VIFE"  (4 bytes)
//! version u32     (currently 1)
//! f, h, w, c      u32 each
//! data    f * h * w * c  f32 values in [0, 1], frame-major
//! ```
//!
//! Round-trips are bit-exact. Writes go through a temp file and rename so a
//! crashed run never leaves a truncated file under the final name.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const VVF_MAGIC: &[u8; 4] = b"VIFE";
pub const VVF_VERSION: u32 = 1;

/// A dense pixel video, frame-major `[f][h][w][c]`, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Video {
    pub fn new(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        Video {
            frames,
            height,
            width,
            channels,
            data: vec![0.0; frames * height * width * channels],
        }
    }

    pub fn from_data(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if data.len() != frames * height * width * channels {
            return Err(Error::invalid(
                "video",
                format!(
                    "{}x{}x{}x{} needs {} values, got {}",
                    frames,
                    height,
                    width,
                    channels,
                    frames * height * width * channels,
                    data.len()
                ),
            ));
        }
        Ok(Video {
            frames,
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn pixel(&self, f: usize, y: usize, x: usize) -> &[f32] {
        let i = ((f * self.height + y) * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, f: usize, y: usize, x: usize) -> &mut [f32] {
        let i = ((f * self.height + y) * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn frame(&self, f: usize) -> &[f32] {
        &self.data[f * self.frame_len()..(f + 1) * self.frame_len()]
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn bit_eq(&self, other: &Video) -> bool {
        self.frames == other.frames
            && self.height == other.height
            && self.width == other.width
            && self.channels == other.channels
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn fmt_err(path: &Path, offset: u64, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset,
        msg: msg.into(),
    }
}

/// Write a video as VVF. Values must already be finite and in [0, 1].
pub fn write_vvf(path: &Path, video: &Video) -> Result<()> {
    for (i, &v) in video.data.iter().enumerate() {
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(
                "write_vvf",
                format!("value {v} at element {i} is outside [0, 1]"),
            ));
        }
    }
    let mut buf =
        Vec::with_capacity(4 + 4 * 5 + video.data.len() * 4);
    buf.extend_from_slice(VVF_MAGIC);
    buf.extend_from_slice(&VVF_VERSION.to_le_bytes());
    for dim in [video.frames, video.height, video.width, video.channels] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in &video.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &buf)
}

/// Atomic write: temp file in the same directory, then rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let tmp: PathBuf = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|s| s.to_string_lossy()).unwrap_or_default()
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_vvf(path: &Path) -> Result<Video> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;

    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if *off + n > bytes.len() {
            return Err(fmt_err(path, bytes.len() as u64, format!(
                "truncated: needed {} bytes at offset {}",
                n, *off
            )));
        }
        let s = &bytes[*off..*off + n];
        *off += n;
        Ok(s)
    };

    let mut off = 0usize;
    let magic = take(&mut off, 4)?;
    if magic != VVF_MAGIC {
        return Err(fmt_err(path, 0, format!("bad magic {magic:?}, expected \"VIFE\"")));
    }
    let read_u32 = |off: &mut usize| -> Result<u32> {
        let s = take(off, 4)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    };
    let version = read_u32(&mut off)?;
    if version != VVF_VERSION {
        return Err(fmt_err(path, 4, format!("unsupported version {version}")));
    }
    let f = read_u32(&mut off)? as usize;
    let h = read_u32(&mut off)? as usize;
    let w = read_u32(&mut off)? as usize;
    let c = read_u32(&mut off)? as usize;
    let n = f * h * w * c;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let s = take(&mut off, 4)?;
        data.push(f32::from_le_bytes([s[0], s[1], s[2], s[3]]));
    }
    if off != bytes.len() {
        return Err(fmt_err(path, off as u64, format!(
            "{} trailing bytes after payload",
            bytes.len() - off
        )));
    }
    Video::from_data(f, h, w, c, data)
}

/// Export one frame as a binary PPM (P6, 8-bit). Byte = round(255 * clamp(x, 0, 1)).
pub fn write_ppm(path: &Path, video: &Video, frame: usize) -> Result<()> {
    if frame >= video.frames {
        return Err(Error::invalid(
            "write_ppm",
            format!("frame {frame} out of range for {}-frame video", video.frames),
        ));
    }
    if video.channels != 3 {
        return Err(Error::invalid(
            "write_ppm",
            format!("PPM needs 3 channels, video has {}", video.channels),
        ));
    }
    let mut buf = format!("P6\n{} {}\n255\n", video.width, video.height).into_bytes();
    for &v in video.frame(frame) {
        buf.push((255.0 * v.clamp(0.0, 1.0)).round() as u8);
    }
    write_atomic(path, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn tmpdir(tag: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("vidflow-video-{tag}-{}", std::process::id()));
        fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn vvf_roundtrip_is_bit_exact() {
        let mut rng = Rng::seed(12);
        let mut v = Video::new(3, 4, 5, 3);
        for x in &mut v.data {
            *x = rng.uniform() as f32;
        }
        let p = tmpdir("rt").join("a.vvf");
        write_vvf(&p, &v).unwrap();
        let back = read_vvf(&p).unwrap();
        assert!(v.bit_eq(&back));
    }

    #[test]
    fn truncated_file_reports_offset() {
        let p = tmpdir("trunc").join("b.vvf");
        let mut v = Video::new(1, 2, 2, 3);
        v.data.iter_mut().for_each(|x| *x = 0.5);
        write_vvf(&p, &v).unwrap();
        let full = fs::read(&p).unwrap();
        fs::write(&p, &full[..full.len() - 5]).unwrap();
        match read_vvf(&p) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, (full.len() - 5) as u64),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let p = tmpdir("magic").join("c.vvf");
        fs::write(&p, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(read_vvf(&p), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn out_of_range_values_rejected_on_write() {
        let p = tmpdir("range").join("d.vvf");
        let mut v = Video::new(1, 1, 1, 3);
        v.data[1] = 1.5;
        assert!(write_vvf(&p, &v).is_err());
    }

    #[test]
    fn ppm_rounding_rule() {
        // pixel 0.5 -> byte 128
        let p = tmpdir("ppm").join("e.ppm");
        let mut v = Video::new(1, 1, 1, 3);
        v.data.copy_from_slice(&[0.5, 0.0, 1.0]);
        write_ppm(&p, &v, 0).unwrap();
        let bytes = fs::read(&p).unwrap();
        let header = b"P6\n1 1\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[128u8, 0, 255]);
    }
}
