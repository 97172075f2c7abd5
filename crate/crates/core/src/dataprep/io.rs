//! Image and volume files: binary PGM (`P5`) and the raw `TNS1` tensor format.
//!
//! PGM samples map linearly onto `[0, 1]` (`v / maxval`); 16-bit samples are
//! big-endian as the format requires. A volume is a directory of slice files
//! whose stems are zero-padded scan indices (`000.pgm`, `001.pgm`, ...).

use std::fs;
use std::path::{Path, PathBuf};

use crate::dataprep::{Image, Volume};
use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor};
use crate::util::write_atomic;

/// Largest accepted pixel count for a single image.
const MAX_PIXELS: usize = 1 << 30;

pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes, path)
}

pub fn decode_image(bytes: &[u8], path: &Path) -> Result<Image> {
    if bytes.starts_with(b"TNS1") {
        let t = Tensor::from_tns_bytes(bytes, path)?;
        let d = t.dims();
        if d.n != 1 || d.c != 1 {
            return Err(Error::MalformedHeader {
                path: path.into(),
                reason: format!("image tensor must be 1x1xHxW, got {:?}", d.as_array()),
            });
        }
        let data = t.into_data();
        return Image::new(d.h, d.w, data);
    }
    if bytes.len() >= 2 && bytes[0] == b'P' {
        if bytes[1] == b'5' {
            return decode_pgm(bytes, path);
        }
        if (b'1'..=b'7').contains(&bytes[1]) {
            return Err(Error::UnsupportedFormat {
                path: path.into(),
                format: format!("P{}", bytes[1] as char),
            });
        }
    }
    if bytes.len() < 2 {
        return Err(Error::Truncated { path: path.into() });
    }
    Err(Error::BadMagic { path: path.into() })
}

/// Writes `.tns` files as TNS1 (lossless) and anything else as 16-bit PGM.
pub fn write_image(img: &Image, path: &Path) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("tns") => write_tns_image(img, path),
        _ => write_pgm(img, path, 65535),
    }
}

pub fn write_tns_image(img: &Image, path: &Path) -> Result<()> {
    let t = Tensor::new(Dims::new(1, 1, img.height(), img.width()), img.data().to_vec())?;
    t.write_tns(path)
}

/// Writes a binary PGM; values are clamped to `[0, 1]` and rounded to the
/// nearest level. `maxval` must be in `1..=65535`.
pub fn write_pgm(img: &Image, path: &Path, maxval: u16) -> Result<()> {
    write_atomic(path, &encode_pgm(img, maxval)?)
}

pub fn encode_pgm(img: &Image, maxval: u16) -> Result<Vec<u8>> {
    if maxval == 0 {
        return Err(Error::Input("PGM maxval must be >= 1".into()));
    }
    let mut out = format!("P5\n{} {}\n{}\n", img.width(), img.height(), maxval).into_bytes();
    let scale = f64::from(maxval);
    for &v in img.data() {
        let q = (v.clamp(0.0, 1.0) * scale).round() as u16;
        if maxval < 256 {
            out.push(q as u8);
        } else {
            out.extend_from_slice(&q.to_be_bytes());
        }
    }
    Ok(out)
}

fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Image> {
    let malformed = |reason: &str| Error::MalformedHeader {
        path: path.into(),
        reason: reason.into(),
    };
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // Whitespace and comments before each header field.
        loop {
            match bytes.get(pos) {
                None => return Err(Error::Truncated { path: path.into() }),
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(malformed(&format!("expected a number for header field {i}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text.parse().map_err(|_| Error::DimensionOverflow {
            path: path.into(),
            reason: format!("header value {text} too large"),
        })?;
    }
    match bytes.get(pos) {
        None => return Err(Error::Truncated { path: path.into() }),
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        Some(_) => return Err(malformed("missing whitespace after maxval")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(malformed("zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(malformed(&format!("maxval {maxval} outside 1..=65535")));
    }
    let pixels = width
        .checked_mul(height)
        .filter(|&p| p <= MAX_PIXELS as u64)
        .ok_or_else(|| Error::DimensionOverflow {
            path: path.into(),
            reason: format!("{width}x{height} pixels"),
        })? as usize;
    let bps = if maxval < 256 { 1 } else { 2 };
    let payload = &bytes[pos..];
    if payload.len() < pixels * bps {
        return Err(Error::Truncated { path: path.into() });
    }
    let scale = maxval as f64;
    let data: Vec<f64> = if bps == 1 {
        payload[..pixels].iter().map(|&b| f64::from(b) / scale).collect()
    } else {
        payload[..2 * pixels]
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) / scale)
            .collect()
    };
    if data.iter().any(|&v| v > 1.0) {
        return Err(malformed("sample exceeds maxval"));
    }
    Image::new(height as usize, width as usize, data)
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("pgm" | "tns")
    )
}

/// Image files in `dir` ordered by the numeric value of their stems
/// (falling back to the name for non-numeric stems).
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    files.sort_by_key(|p| {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        (stem.parse::<u64>().unwrap_or(u64::MAX), p.clone())
    });
    Ok(files)
}

pub fn read_volume(dir: &Path) -> Result<Volume> {
    let files = list_images(dir)?;
    if files.is_empty() {
        return Err(Error::Input(format!("{} holds no slice files", dir.display())));
    }
    Volume::new(files.iter().map(|p| read_image(p)).collect::<Result<_>>()?)
}

/// Every subdirectory of `root`, in name order, read as a volume.
pub fn read_volumes(root: &Path) -> Result<Vec<Volume>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| read_volume(d)).collect()
}

/// Writes slices as `000.<ext>`, `001.<ext>`, ... into `dir`.
pub fn write_volume(volume: &Volume, dir: &Path, ext: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let digits = volume.len().to_string().len().max(3);
    for (i, s) in volume.slices().iter().enumerate() {
        write_image(s, &dir.join(format!("{i:0digits$}.{ext}")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("t.pgm")
    }

    #[test]
    fn pgm_8bit_quantization_bound() {
        let img = Image::from_fn(7, 9, |y, x| ((y * 9 + x) as f64 * 0.0137) % 1.0);
        let back = decode_image(&encode_pgm(&img, 255).unwrap(), p()).unwrap();
        let max_err = img
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 1.0 / 510.0 + 1e-15, "{max_err}");
    }

    #[test]
    fn pgm_16bit_round_trip() {
        let img = Image::from_fn(4, 3, |y, x| (y * 3 + x) as f64 / 11.0);
        let back = decode_image(&encode_pgm(&img, 65535).unwrap(), p()).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-15);
        }
    }

    #[test]
    fn pgm_header_with_comments() {
        let mut bytes = b"P5\n# a comment\n2 1\n# another\n255\n".to_vec();
        bytes.extend([0u8, 255]);
        let img = decode_image(&bytes, p()).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(
            decode_image(b"P2\n2 2\n255\n0 0 0 0", p()),
            Err(Error::UnsupportedFormat { .. })
        ));
        assert!(matches!(
            decode_image(b"P5\n2 x\n255\n", p()),
            Err(Error::MalformedHeader { .. })
        ));
        assert!(matches!(
            decode_image(b"P5\n2 2\n255\n\x00\x01", p()),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(
            decode_image(b"P5\n99999999999 99999999999\n255\n", p()),
            Err(Error::DimensionOverflow { .. })
        ));
        assert!(matches!(
            decode_image(b"P5\n1 1\n0\n\x00", p()),
            Err(Error::MalformedHeader { .. })
        ));
        assert!(matches!(decode_image(b"GIF89a", p()), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn tns_image_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.tns");
        let img = Image::from_fn(3, 4, |y, x| (y as f64 + 0.1) / (x as f64 + 3.3));
        write_image(&img, &path).unwrap();
        assert_eq!(read_image(&path).unwrap(), img);
    }

    #[test]
    fn volume_directory_order() {
        let dir = tempfile::tempdir().unwrap();
        let slices: Vec<Image> = (0..12).map(|i| Image::filled(2, 2, i as f64 / 11.0)).collect();
        let vol = Volume::new(slices).unwrap();
        write_volume(&vol, dir.path(), "tns").unwrap();
        assert_eq!(read_volume(dir.path()).unwrap(), vol);
    }
}
