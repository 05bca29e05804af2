//! Image file readers and writers.
//!
//! Color frames are 8-bit PPM (P6) or 8-bit PNG; depth frames are 16-bit
//! PGM (P5, big-endian samples per the netpbm spec) or 16-bit grayscale
//! PNG. The binary netpbm variants are implemented here directly so the
//! on-disk bytes are exactly what the format prescribes; PNG goes through
//! the `image` crate.

use std::fs;
use std::path::Path;

use crate::error::{Result, SegError};

fn img_err(path: &Path, msg: impl Into<String>) -> SegError {
    SegError::Image {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Parses a netpbm header: magic, then width, height, maxval as ASCII
/// integers separated by whitespace, with `#` comments allowed. Returns
/// (width, height, maxval, offset of first raster byte).
fn parse_pnm_header(path: &Path, data: &[u8], magic: &[u8]) -> Result<(usize, usize, u32, usize)> {
    if data.len() < 2 || &data[..2] != magic {
        return Err(img_err(
            path,
            format!("expected {} file", String::from_utf8_lossy(magic)),
        ));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            match data.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < data.len() && data[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(img_err(path, "truncated header")),
            }
        }
        let start = pos;
        while pos < data.len() && data[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(img_err(path, "malformed header integer"));
        }
        let text = std::str::from_utf8(&data[start..pos]).unwrap();
        *field = text
            .parse::<u32>()
            .map_err(|_| img_err(path, "header integer out of range"))?;
    }
    // exactly one whitespace byte separates maxval from the raster
    match data.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(img_err(path, "missing raster separator")),
    }
    let (w, h, maxval) = (fields[0] as usize, fields[1] as usize, fields[2]);
    if w == 0 || h == 0 {
        return Err(img_err(path, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(img_err(path, format!("unsupported maxval {maxval}")));
    }
    Ok((w, h, maxval, pos))
}

fn read_ppm(path: &Path, data: &[u8]) -> Result<(usize, usize, Vec<[u8; 3]>)> {
    let (w, h, maxval, off) = parse_pnm_header(path, data, b"P6")?;
    if maxval > 255 {
        return Err(img_err(path, "only 8-bit PPM color is supported"));
    }
    let need = w * h * 3;
    let raster = data
        .get(off..off + need)
        .ok_or_else(|| img_err(path, "truncated raster"))?;
    let pixels = raster
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    Ok((w, h, pixels))
}

fn read_pgm(path: &Path, data: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let (w, h, maxval, off) = parse_pnm_header(path, data, b"P5")?;
    let n = w * h;
    let depth = if maxval > 255 {
        let raster = data
            .get(off..off + n * 2)
            .ok_or_else(|| img_err(path, "truncated raster"))?;
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        let raster = data
            .get(off..off + n)
            .ok_or_else(|| img_err(path, "truncated raster"))?;
        raster.iter().map(|&b| b as u16).collect()
    };
    Ok((w, h, depth))
}

fn extension_of(path: &Path) -> String {
    path.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default()
}

/// Reads a color image (PPM or PNG) as RGB triples.
pub fn read_color(path: &Path) -> Result<(usize, usize, Vec<[u8; 3]>)> {
    match extension_of(path).as_str() {
        "ppm" => {
            let data = fs::read(path).map_err(|e| SegError::io(path, e))?;
            read_ppm(path, &data)
        }
        "png" => {
            let img = image::open(path).map_err(|e| img_err(path, e.to_string()))?;
            let rgb = img.into_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let pixels = rgb
                .as_raw()
                .chunks_exact(3)
                .map(|c| [c[0], c[1], c[2]])
                .collect();
            Ok((w, h, pixels))
        }
        other => Err(img_err(path, format!("unsupported color format .{other}"))),
    }
}

/// Reads a depth image (16-bit PGM or PNG) as raw sensor units.
pub fn read_depth(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    match extension_of(path).as_str() {
        "pgm" => {
            let data = fs::read(path).map_err(|e| SegError::io(path, e))?;
            read_pgm(path, &data)
        }
        "png" => {
            let img = image::open(path).map_err(|e| img_err(path, e.to_string()))?;
            match img {
                image::DynamicImage::ImageLuma16(buf) => {
                    let (w, h) = (buf.width() as usize, buf.height() as usize);
                    Ok((w, h, buf.into_raw()))
                }
                image::DynamicImage::ImageLuma8(buf) => {
                    let (w, h) = (buf.width() as usize, buf.height() as usize);
                    Ok((w, h, buf.into_raw().into_iter().map(|b| b as u16).collect()))
                }
                other => Err(img_err(
                    path,
                    format!("depth PNG must be grayscale, got {:?}", other.color()),
                )),
            }
        }
        other => Err(img_err(path, format!("unsupported depth format .{other}"))),
    }
}

/// Writes an 8-bit binary PPM (P6).
pub fn write_ppm(path: &Path, width: usize, height: usize, pixels: &[[u8; 3]]) -> Result<()> {
    assert_eq!(pixels.len(), width * height);
    let mut out = Vec::with_capacity(20 + pixels.len() * 3);
    out.extend_from_slice(format!("P6\n{width} {height}\n255\n").as_bytes());
    for p in pixels {
        out.extend_from_slice(p);
    }
    fs::write(path, out).map_err(|e| SegError::io(path, e))
}

/// Writes a 16-bit binary PGM (P5) with big-endian samples.
pub fn write_pgm16(path: &Path, width: usize, height: usize, values: &[u16]) -> Result<()> {
    assert_eq!(values.len(), width * height);
    let mut out = Vec::with_capacity(20 + values.len() * 2);
    out.extend_from_slice(format!("P5\n{width} {height}\n65535\n").as_bytes());
    for v in values {
        out.extend_from_slice(&v.to_be_bytes());
    }
    fs::write(path, out).map_err(|e| SegError::io(path, e))
}

/// Reads a 16-bit PGM written by [`write_pgm16`] (any P5 file works).
pub fn read_pgm16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let data = fs::read(path).map_err(|e| SegError::io(path, e))?;
    read_pgm(path, &data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let pixels: Vec<[u8; 3]> = (0..12).map(|i| [i as u8, (i * 7) as u8, 255 - i as u8]).collect();
        write_ppm(&path, 4, 3, &pixels).unwrap();
        let (w, h, back) = read_color(&path).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(back, pixels);
        write_ppm(&dir.path().join("img2.ppm"), 4, 3, &back).unwrap();
        assert_eq!(
            fs::read(&path).unwrap(),
            fs::read(dir.path().join("img2.ppm")).unwrap()
        );
    }

    #[test]
    fn pgm16_round_trip_and_big_endian_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pgm");
        let values = vec![0u16, 1, 255, 256, 5000, 65535];
        write_pgm16(&path, 3, 2, &values).unwrap();
        let raw = fs::read(&path).unwrap();
        let raster = &raw[raw.len() - 12..];
        assert_eq!(&raster[..2], &[0, 0]);
        assert_eq!(&raster[2..4], &[0, 1]);
        assert_eq!(&raster[6..8], &[1, 0]); // 256 = 0x0100
        let (w, h, back) = read_depth(&path).unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(back, values);
    }

    #[test]
    fn pnm_header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ppm");
        let mut data = b"P6 # comment\n# another line\n2 1\n255\n".to_vec();
        data.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        fs::write(&path, data).unwrap();
        let (w, h, px) = read_color(&path).unwrap();
        assert_eq!((w, h), (2, 1));
        assert_eq!(px, vec![[1, 2, 3], [4, 5, 6]]);
    }

    #[test]
    fn truncated_raster_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        fs::write(&path, b"P5\n4 4\n65535\nshort").unwrap();
        assert!(read_depth(&path).is_err());
    }

    #[test]
    fn png_color_and_depth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cpath = dir.path().join("c.png");
        let rgb: Vec<u8> = (0..27).map(|i| (i * 9) as u8).collect();
        image::ImageBuffer::<image::Rgb<u8>, _>::from_raw(3, 3, rgb.clone())
            .unwrap()
            .save(&cpath)
            .unwrap();
        let (w, h, px) = read_color(&cpath).unwrap();
        assert_eq!((w, h), (3, 3));
        assert_eq!(px[1], [rgb[3], rgb[4], rgb[5]]);

        let dpath = dir.path().join("d.png");
        let depth = vec![0u16, 40000, 1, 65535];
        image::ImageBuffer::<image::Luma<u16>, _>::from_raw(2, 2, depth.clone())
            .unwrap()
            .save(&dpath)
            .unwrap();
        let (w, h, back) = read_depth(&dpath).unwrap();
        assert_eq!((w, h), (2, 2));
        assert_eq!(back, depth);
    }
}
