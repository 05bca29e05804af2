//! Calibrated RGBD frame loading.
//!
//! A sequence is described by a manifest text file with one line per frame,
//! `timestamp color_path depth_path` (paths relative to the manifest), or by
//! a TUM-style association file with `timestamp color_path timestamp
//! depth_path` lines. Frames are decoded lazily in timestamp order.
//!
//! Depth images store raw sensor units; `depth_scale` raw units equal one
//! meter (5000 for TUM data). A raw value of zero marks missing depth.

mod color;
pub mod image_io;

use std::path::{Path, PathBuf};

use crate::error::{Result, SegError};

pub use color::{lab_to_srgb, srgb_to_lab, LabPixel};

/// Pinhole camera model plus the depth unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    /// Focal length in pixels, horizontal.
    pub fx: f64,
    /// Focal length in pixels, vertical.
    pub fy: f64,
    /// Principal point, horizontal.
    pub cx: f64,
    /// Principal point, vertical.
    pub cy: f64,
    /// Raw depth units per meter.
    pub depth_scale: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 || self.depth_scale <= 0.0 {
            return Err(SegError::Config(format!(
                "intrinsics require positive fx, fy, depth_scale, got fx={} fy={} depth_scale={}",
                self.fx, self.fy, self.depth_scale
            )));
        }
        Ok(())
    }

    /// Plausible defaults for synthetic sequences: centered principal
    /// point, 500 px focal length, 5000 raw units per meter.
    pub fn synthetic(width: usize, height: usize) -> Self {
        CameraIntrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            depth_scale: 5000.0,
        }
    }
}

/// A point in camera coordinates, meters. x grows rightward, y downward,
/// z away from the camera.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }
}

/// One calibrated color+depth frame.
#[derive(Debug, Clone)]
pub struct RgbdFrame {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB, `width * height` entries.
    pub color: Vec<[u8; 3]>,
    /// Row-major raw depth, zero means invalid.
    pub depth: Vec<u16>,
    pub timestamp: f64,
    pub intrinsics: CameraIntrinsics,
}

impl RgbdFrame {
    fn index(&self, i: usize, j: usize) -> usize {
        assert!(
            i < self.width && j < self.height,
            "pixel ({i}, {j}) out of bounds for {}x{} frame",
            self.width,
            self.height
        );
        j * self.width + i
    }

    /// Raw depth at pixel (i, j); column i, row j. Panics out of bounds.
    pub fn depth_raw(&self, i: usize, j: usize) -> u16 {
        self.depth[self.index(i, j)]
    }

    /// Depth in meters, or None where the sensor reported nothing.
    pub fn depth_m(&self, i: usize, j: usize) -> Option<f64> {
        let raw = self.depth_raw(i, j);
        (raw != 0).then(|| raw as f64 / self.intrinsics.depth_scale)
    }

    /// Back-projects pixel (i, j) to camera coordinates. None exactly where
    /// depth is invalid. Panics if (i, j) is out of bounds.
    pub fn lift_to_3d(&self, i: usize, j: usize) -> Option<Point3> {
        let z = self.depth_m(i, j)?;
        let k = &self.intrinsics;
        Some(Point3 {
            x: (i as f64 - k.cx) * z / k.fx,
            y: (j as f64 - k.cy) * z / k.fy,
            z,
        })
    }

    pub fn color_at(&self, i: usize, j: usize) -> [u8; 3] {
        self.color[self.index(i, j)]
    }
}

/// Manifest flavor accepted by [`load_sequence`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifestFormat {
    /// `timestamp color_path depth_path`
    Simple,
    /// TUM RGB-D association output: `timestamp color_path timestamp depth_path`
    TumAssociate,
}

/// Options for [`load_sequence`].
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub format: ManifestFormat,
    pub intrinsics: CameraIntrinsics,
    /// Depths beyond this range (meters) are treated as invalid. None keeps
    /// everything the sensor reported.
    pub max_depth_m: Option<f64>,
}

#[derive(Debug, Clone)]
struct ManifestEntry {
    timestamp: f64,
    color_path: PathBuf,
    depth_path: PathBuf,
}

/// Lazy frame reader over a parsed manifest. Decoding happens in
/// [`Iterator::next`]; the whole sequence is never resident at once.
#[derive(Debug)]
pub struct FrameSequence {
    entries: Vec<ManifestEntry>,
    next: usize,
    options: LoadOptions,
    /// Fixed by the first decoded frame; every later frame must agree.
    dims: Option<(usize, usize)>,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn decode(&mut self, idx: usize) -> Result<RgbdFrame> {
        let entry = &self.entries[idx];
        let (cw, ch, color) = image_io::read_color(&entry.color_path)?;
        let (dw, dh, mut depth) = image_io::read_depth(&entry.depth_path)?;
        if (cw, ch) != (dw, dh) {
            return Err(SegError::Dimension(format!(
                "{}: color is {cw}x{ch} but depth {} is {dw}x{dh}",
                entry.color_path.display(),
                entry.depth_path.display()
            )));
        }
        match self.dims {
            None => self.dims = Some((cw, ch)),
            Some((w, h)) if (w, h) != (cw, ch) => {
                return Err(SegError::Dimension(format!(
                    "{}: frame is {cw}x{ch} but the sequence started at {w}x{h}",
                    entry.color_path.display()
                )));
            }
            _ => {}
        }
        if let Some(max_m) = self.options.max_depth_m {
            let max_raw = (max_m * self.options.intrinsics.depth_scale).floor();
            let max_raw = max_raw.clamp(0.0, u16::MAX as f64) as u16;
            for d in depth.iter_mut() {
                if *d > max_raw {
                    *d = 0;
                }
            }
        }
        Ok(RgbdFrame {
            width: cw,
            height: ch,
            color,
            depth,
            timestamp: entry.timestamp,
            intrinsics: self.options.intrinsics,
        })
    }
}

impl Iterator for FrameSequence {
    type Item = Result<RgbdFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.entries.len() {
            return None;
        }
        let item = self.decode(self.next);
        self.next += 1;
        Some(item)
    }
}

/// Parses a manifest and returns a lazy frame iterator sorted by timestamp.
pub fn load_sequence(manifest: &Path, options: LoadOptions) -> Result<FrameSequence> {
    options.intrinsics.validate()?;
    let text = std::fs::read_to_string(manifest).map_err(|e| SegError::io(manifest, e))?;
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let err = |msg: String| SegError::Manifest {
            path: manifest.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        let (ts_field, color_field, depth_field) = match options.format {
            ManifestFormat::Simple => {
                if fields.len() != 3 {
                    return Err(err(format!(
                        "expected `timestamp color_path depth_path`, got {} fields",
                        fields.len()
                    )));
                }
                (fields[0], fields[1], fields[2])
            }
            ManifestFormat::TumAssociate => {
                if fields.len() != 4 {
                    return Err(err(format!(
                        "expected `timestamp color timestamp depth`, got {} fields",
                        fields.len()
                    )));
                }
                (fields[0], fields[1], fields[3])
            }
        };
        let timestamp: f64 = ts_field
            .parse()
            .map_err(|_| err(format!("bad timestamp {ts_field:?}")))?;
        if !timestamp.is_finite() {
            return Err(err(format!("bad timestamp {ts_field:?}")));
        }
        entries.push(ManifestEntry {
            timestamp,
            color_path: base.join(color_field),
            depth_path: base.join(depth_field),
        });
    }
    entries.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(FrameSequence {
        entries,
        next: 0,
        options,
        dims: None,
    })
}
