//! PAM (Netpbm P7) reader/writer for RGB and RGBA rasters, plus the
//! offset encoding used to persist signed perturbations.
//!
//! Signed values are stored as `byte = round((v + 1) * 127.5)` with a
//! header comment, so a perturbation in `[-1, 1]` survives as an ordinary
//! viewable PAM file.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

const SIGNED_COMMENT: &str = "# signed offset encoding: value = byte / 127.5 - 1";

pub fn write_pam(path: &Path, img: &Image) -> Result<()> {
    write_inner(path, img, false)
}

/// Persist a signed raster (values clamped to `[-1, 1]`).
pub fn write_pam_signed(path: &Path, img: &Image) -> Result<()> {
    write_inner(path, img, true)
}

fn write_inner(path: &Path, img: &Image, signed: bool) -> Result<()> {
    let tupltype = match img.channels {
        1 => "GRAYSCALE",
        3 => "RGB",
        4 => "RGB_ALPHA",
        n => {
            return Err(Error::Format(format!("unsupported channel count {n}")));
        }
    };
    let mut out = Vec::new();
    out.extend_from_slice(b"P7\n");
    if signed {
        out.extend_from_slice(SIGNED_COMMENT.as_bytes());
        out.push(b'\n');
    }
    write!(
        &mut out,
        "WIDTH {}\nHEIGHT {}\nDEPTH {}\nMAXVAL 255\nTUPLTYPE {}\nENDHDR\n",
        img.width, img.height, img.channels, tupltype
    )?;
    if signed {
        out.extend(
            img.data
                .iter()
                .map(|&v| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8),
        );
    } else {
        out.extend(img.to_storage_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_pam(path: &Path) -> Result<Image> {
    let (img, _) = read_inner(path)?;
    Ok(img)
}

/// Read a PAM file written by [`write_pam_signed`], undoing the offset.
pub fn read_pam_signed(path: &Path) -> Result<Image> {
    let (mut img, signed) = read_inner(path)?;
    if !signed {
        return Err(Error::Format(format!(
            "{} has no signed-encoding header comment",
            path.display()
        )));
    }
    for v in &mut img.data {
        // img holds byte/255; recover byte then undo the offset
        *v = (*v * 255.0) / 127.5 - 1.0;
    }
    Ok(img)
}

fn read_inner(path: &Path) -> Result<(Image, bool)> {
    let bytes = fs::read(path)?;
    let mut pos = 0usize;
    let mut width = None;
    let mut height = None;
    let mut depth = None;
    let mut maxval = None;
    let mut signed = false;
    let mut first = true;
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("truncated PAM header".into()))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end])
            .map_err(|_| Error::Format("non-utf8 PAM header".into()))?
            .trim()
            .to_string();
        pos += end + 1;
        if first {
            if line != "P7" {
                return Err(Error::Format(format!("expected P7 magic, got {line:?}")));
            }
            first = false;
            continue;
        }
        if line.starts_with('#') {
            if line == SIGNED_COMMENT {
                signed = true;
            }
            continue;
        }
        if line == "ENDHDR" {
            break;
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or("");
        let val = parts.next();
        match key {
            "WIDTH" => width = val.and_then(|v| v.parse::<usize>().ok()),
            "HEIGHT" => height = val.and_then(|v| v.parse::<usize>().ok()),
            "DEPTH" => depth = val.and_then(|v| v.parse::<usize>().ok()),
            "MAXVAL" => maxval = val.and_then(|v| v.parse::<usize>().ok()),
            "TUPLTYPE" => {}
            other => {
                return Err(Error::Format(format!("unexpected PAM header key {other:?}")));
            }
        }
    }
    let width = width.ok_or_else(|| Error::Format("missing WIDTH".into()))?;
    let height = height.ok_or_else(|| Error::Format("missing HEIGHT".into()))?;
    let depth = depth.ok_or_else(|| Error::Format("missing DEPTH".into()))?;
    if maxval != Some(255) {
        return Err(Error::Format("only MAXVAL 255 is supported".into()));
    }
    let expected = width * height * depth;
    if bytes.len() < pos + expected {
        return Err(Error::Format(format!(
            "PAM payload truncated: expected {expected} bytes"
        )));
    }
    let img = Image::from_storage_bytes(height, width, depth, &bytes[pos..pos + expected])?;
    Ok((img, signed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgba_round_trip_is_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("patch.pam");
        let mut img = Image::new(5, 7, 4);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = ((i * 37) % 256) as f32 / 255.0;
        }
        write_pam(&path, &img).unwrap();
        let back = read_pam(&path).unwrap();
        assert_eq!(back, img);
        write_pam(&path, &back).unwrap();
        let again = read_pam(&path).unwrap();
        assert_eq!(again, back);
    }

    #[test]
    fn signed_round_trip_within_one_step() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.pam");
        let mut img = Image::new(3, 3, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f32 / 13.0).sin(); // values in [-1, 1]
        }
        write_pam_signed(&path, &img).unwrap();
        let back = read_pam_signed(&path).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 1.0 / 127.5);
        }
        // a plain reader must not silently accept the signed file
        assert!(read_pam_signed(&{
            let p = dir.path().join("plain.pam");
            write_pam(&p, &Image::new(2, 2, 3)).unwrap();
            p
        })
        .is_err());
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pam");
        fs::write(&path, b"P6\n1 1\n255\nxyz").unwrap();
        assert!(read_pam(&path).is_err());
    }
}
