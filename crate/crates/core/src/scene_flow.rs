//! Dense 2D flow between consecutive frames, lifted to metric 3D scene flow.
//!
//! The default estimator is coarse-to-fine block matching with SAD cost on
//! the Lab lightness channel. It is deliberately simple: the rest of the
//! pipeline only needs flow good enough to link toxels across frames, and
//! the [`FlowEstimator`] trait leaves room to plug in something stronger.
//!
//! Lifting turns a pixel displacement into meters. For a source pixel
//! (i, j) in frame n-1 with flow (di, dj), the target pixel is the nearest
//! integer rounding of (i + di, j + dj) in frame n, and with z the target's
//! depth in meters,
//!
//! ```text
//! u = (i_n - i_{n-1}) * z / fx
//! v = (j_n - j_{n-1}) * z / fy
//! w = z - depth_{n-1}(i, j)
//! ```
//!
//! all in meters. The scene flow is invalid wherever the source depth is
//! missing, the 2D flow is invalid, or the rounded target falls outside the
//! frame or on missing depth.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Result, SegError};
use crate::rgbd_io::{srgb_to_lab, RgbdFrame};

/// Per-pixel 2D displacement field from one frame to the next, in pixels.
#[derive(Debug, Clone)]
pub struct FlowField2D {
    pub width: usize,
    pub height: usize,
    /// Column displacement, row-major.
    pub di: Vec<f32>,
    /// Row displacement, row-major.
    pub dj: Vec<f32>,
    /// False where the source pixel has no depth.
    pub valid: Vec<bool>,
}

impl FlowField2D {
    pub fn zero(width: usize, height: usize) -> Self {
        FlowField2D {
            width,
            height,
            di: vec![0.0; width * height],
            dj: vec![0.0; width * height],
            valid: vec![true; width * height],
        }
    }

    pub fn at(&self, i: usize, j: usize) -> (f32, f32) {
        let idx = j * self.width + i;
        (self.di[idx], self.dj[idx])
    }
}

/// Anything that can produce dense 2D flow between two frames.
pub trait FlowEstimator {
    fn estimate(&self, prev: &RgbdFrame, next: &RgbdFrame) -> Result<FlowField2D>;
}

/// Coarse-to-fine block matching on the Lab L channel.
#[derive(Debug, Clone)]
pub struct BlockMatchingFlow {
    /// Half width of the matching patch; 4 gives 9x9.
    pub patch_radius: usize,
    /// Search radius in pixels around the propagated guess, per level.
    pub search_radius: i32,
    /// Pyramid levels; 1 means single scale.
    pub levels: usize,
    /// Source patches with intensity variance below this are treated as
    /// textureless and get zero flow.
    pub flat_variance: f64,
}

impl Default for BlockMatchingFlow {
    fn default() -> Self {
        BlockMatchingFlow {
            patch_radius: 4,
            search_radius: 4,
            levels: 3,
            flat_variance: 1e-6,
        }
    }
}

struct Level {
    width: usize,
    height: usize,
    l: Vec<f32>,
}

impl Level {
    #[inline]
    fn at(&self, i: i64, j: i64) -> f32 {
        let i = i.clamp(0, self.width as i64 - 1) as usize;
        let j = j.clamp(0, self.height as i64 - 1) as usize;
        self.l[j * self.width + i]
    }

    fn downsample(&self) -> Level {
        let w = (self.width / 2).max(1);
        let h = (self.height / 2).max(1);
        let mut l = vec![0.0f32; w * h];
        for j in 0..h {
            for i in 0..w {
                let (i2, j2) = (i * 2, j * 2);
                let mut sum = 0.0f32;
                let mut n = 0.0f32;
                for dj in 0..2 {
                    for di in 0..2 {
                        let (si, sj) = (i2 + di, j2 + dj);
                        if si < self.width && sj < self.height {
                            sum += self.l[sj * self.width + si];
                            n += 1.0;
                        }
                    }
                }
                l[j * w + i] = sum / n;
            }
        }
        Level {
            width: w,
            height: h,
            l,
        }
    }
}

fn lightness_of(frame: &RgbdFrame) -> Level {
    Level {
        width: frame.width,
        height: frame.height,
        l: frame.color.iter().map(|&rgb| srgb_to_lab(rgb).l).collect(),
    }
}

impl BlockMatchingFlow {
    fn match_level(
        &self,
        src: &Level,
        dst: &Level,
        guess: Option<&(Vec<f32>, Vec<f32>)>,
        finest: bool,
    ) -> (Vec<f32>, Vec<f32>) {
        let (w, h) = (src.width, src.height);
        let pr = self.patch_radius as i64;
        let r = self.search_radius as i64;
        let mut di = vec![0.0f32; w * h];
        let mut dj = vec![0.0f32; w * h];
        di.par_chunks_mut(w)
            .zip(dj.par_chunks_mut(w))
            .enumerate()
            .for_each(|(j, (di_row, dj_row))| {
                let j = j as i64;
                let mut patch = vec![0.0f32; ((2 * pr + 1) * (2 * pr + 1)) as usize];
                for i in 0..w as i64 {
                    let (gi, gj) = match guess {
                        Some((gdi, gdj)) => {
                            // the coarser level is half resolution
                            let cw = (w / 2).max(1);
                            let ch = (h / 2).max(1);
                            let ci = ((i / 2) as usize).min(cw - 1);
                            let cj = ((j / 2) as usize).min(ch - 1);
                            let idx = cj * cw + ci;
                            ((gdi[idx] * 2.0) as i64, (gdj[idx] * 2.0) as i64)
                        }
                        None => (0, 0),
                    };

                    // patch statistics for the textureless check; the
                    // patch itself is kept, since every candidate below
                    // reads the same source values
                    let mut sum = 0.0f64;
                    let mut sum2 = 0.0f64;
                    let count = patch.len() as f64;
                    let mut p = 0;
                    for v in -pr..=pr {
                        for u in -pr..=pr {
                            let s = src.at(i + u, j + v);
                            patch[p] = s;
                            p += 1;
                            sum += s as f64;
                            sum2 += (s as f64) * (s as f64);
                        }
                    }
                    let mean = sum / count;
                    let var = (sum2 / count - mean * mean).max(0.0);
                    if var < self.flat_variance {
                        if finest {
                            di_row[i as usize] = 0.0;
                            dj_row[i as usize] = 0.0;
                        } else {
                            di_row[i as usize] = gi as f32;
                            dj_row[i as usize] = gj as f32;
                        }
                        continue;
                    }

                    // best = (cost, |d|^2, di, dj), smallest wins. A
                    // candidate is abandoned once its partial sum is
                    // strictly above the running best: the sum only
                    // grows, so it cannot win, and exact ties are never
                    // abandoned, keeping the magnitude tie-break intact.
                    let mut best = (f32::INFINITY, i64::MAX, 0i64, 0i64);
                    let consider = |ci: i64, cj: i64, best: &mut (f32, i64, i64, i64)| {
                        let mut cost = 0.0f32;
                        let mut p = 0;
                        for v in -pr..=pr {
                            for u in -pr..=pr {
                                cost += (patch[p] - dst.at(i + ci + u, j + cj + v)).abs();
                                p += 1;
                            }
                            if cost > best.0 {
                                return;
                            }
                        }
                        let cand = (cost, ci * ci + cj * cj, ci, cj);
                        if cand.0 < best.0
                            || (cand.0 == best.0
                                && (cand.1, cand.2, cand.3) < (best.1, best.2, best.3))
                        {
                            *best = cand;
                        }
                    };
                    // evaluating the propagated guess first makes the
                    // abandonment bound tight from the start
                    consider(gi, gj, &mut best);
                    for dv in -r..=r {
                        for du in -r..=r {
                            consider(gi + du, gj + dv, &mut best);
                        }
                    }
                    di_row[i as usize] = best.2 as f32;
                    dj_row[i as usize] = best.3 as f32;
                }
            });
        (di, dj)
    }
}

impl FlowEstimator for BlockMatchingFlow {
    fn estimate(&self, prev: &RgbdFrame, next: &RgbdFrame) -> Result<FlowField2D> {
        if (prev.width, prev.height) != (next.width, next.height) {
            return Err(SegError::Dimension(format!(
                "flow inputs are {}x{} and {}x{}",
                prev.width, prev.height, next.width, next.height
            )));
        }
        let mut src_pyr = vec![lightness_of(prev)];
        let mut dst_pyr = vec![lightness_of(next)];
        for _ in 1..self.levels.max(1) {
            src_pyr.push(src_pyr.last().unwrap().downsample());
            dst_pyr.push(dst_pyr.last().unwrap().downsample());
        }

        let mut flow: Option<(Vec<f32>, Vec<f32>)> = None;
        for level in (0..src_pyr.len()).rev() {
            flow = Some(self.match_level(
                &src_pyr[level],
                &dst_pyr[level],
                flow.as_ref(),
                level == 0,
            ));
        }
        let (di, dj) = flow.unwrap();
        let valid = prev.depth.iter().map(|&d| d != 0).collect();
        Ok(FlowField2D {
            width: prev.width,
            height: prev.height,
            di,
            dj,
            valid,
        })
    }
}

/// Estimates flow with the default block matcher.
pub fn dense_flow(prev: &RgbdFrame, next: &RgbdFrame) -> Result<FlowField2D> {
    BlockMatchingFlow::default().estimate(prev, next)
}

/// Per-pixel metric scene flow from one frame to the next.
#[derive(Debug, Clone)]
pub struct SceneFlowField {
    pub width: usize,
    pub height: usize,
    /// Horizontal motion in meters, row-major over source pixels.
    pub u: Vec<f64>,
    /// Vertical motion in meters.
    pub v: Vec<f64>,
    /// Depth change in meters.
    pub w: Vec<f64>,
    pub valid: Vec<bool>,
    /// Linear index of the rounded target pixel in the next frame,
    /// `u32::MAX` where the flow is invalid.
    pub target: Vec<u32>,
}

impl SceneFlowField {
    pub fn at(&self, i: usize, j: usize) -> Option<(f64, f64, f64)> {
        let idx = j * self.width + i;
        self.valid[idx].then(|| (self.u[idx], self.v[idx], self.w[idx]))
    }
}

/// Rounds with 0.5 going toward positive infinity.
#[inline]
pub fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// Lifts 2D flow to metric scene flow using the two depth maps.
pub fn lift_flow(prev: &RgbdFrame, next: &RgbdFrame, flow: &FlowField2D) -> Result<SceneFlowField> {
    if (prev.width, prev.height) != (next.width, next.height)
        || (flow.width, flow.height) != (prev.width, prev.height)
    {
        return Err(SegError::Dimension(format!(
            "lift inputs disagree: frames {}x{} / {}x{}, flow {}x{}",
            prev.width, prev.height, next.width, next.height, flow.width, flow.height
        )));
    }
    let (w, h) = (prev.width, prev.height);
    let k = next.intrinsics;
    let n = w * h;
    let mut out = SceneFlowField {
        width: w,
        height: h,
        u: vec![0.0; n],
        v: vec![0.0; n],
        w: vec![0.0; n],
        valid: vec![false; n],
        target: vec![u32::MAX; n],
    };
    for j in 0..h {
        for i in 0..w {
            let idx = j * w + i;
            if !flow.valid[idx] {
                continue;
            }
            let z_prev = match prev.depth_m(i, j) {
                Some(z) => z,
                None => continue,
            };
            let ti = round_half_up(i as f64 + flow.di[idx] as f64);
            let tj = round_half_up(j as f64 + flow.dj[idx] as f64);
            if ti < 0 || tj < 0 || ti >= w as i64 || tj >= h as i64 {
                continue;
            }
            let (ti, tj) = (ti as usize, tj as usize);
            let z = match next.depth_m(ti, tj) {
                Some(z) => z,
                None => continue,
            };
            out.u[idx] = (ti as f64 - i as f64) * z / k.fx;
            out.v[idx] = (tj as f64 - j as f64) * z / k.fy;
            out.w[idx] = z - z_prev;
            out.valid[idx] = true;
            out.target[idx] = (tj * w + ti) as u32;
        }
    }
    Ok(out)
}

/// Scene flow for every consecutive frame pair, estimated with the
/// default block matcher. Pairs run in parallel.
pub fn flows_between(frames: &[RgbdFrame]) -> Result<Vec<SceneFlowField>> {
    frames
        .par_windows(2)
        .map(|p| {
            let flow = dense_flow(&p[0], &p[1])?;
            lift_flow(&p[0], &p[1], &flow)
        })
        .collect()
}

const FLOW_DUMP_MAGIC: &[u8; 4] = b"FLW1";

/// Writes a scene flow field as binary: magic `FLW1`, little-endian u32
/// width and height, then row-major (u, v, w) f32 triples with NaN marking
/// invalid pixels.
pub fn write_flow_dump<W: Write>(mut sink: W, flow: &SceneFlowField) -> std::io::Result<()> {
    sink.write_all(FLOW_DUMP_MAGIC)?;
    sink.write_all(&(flow.width as u32).to_le_bytes())?;
    sink.write_all(&(flow.height as u32).to_le_bytes())?;
    for idx in 0..flow.width * flow.height {
        let (u, v, w) = if flow.valid[idx] {
            (flow.u[idx] as f32, flow.v[idx] as f32, flow.w[idx] as f32)
        } else {
            (f32::NAN, f32::NAN, f32::NAN)
        };
        sink.write_all(&u.to_le_bytes())?;
        sink.write_all(&v.to_le_bytes())?;
        sink.write_all(&w.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a dump produced by [`write_flow_dump`]. Targets are not stored in
/// the dump, so they come back as `u32::MAX`.
pub fn read_flow_dump<R: Read>(mut src: R) -> Result<SceneFlowField> {
    let bad = |msg: &str| SegError::Invalid(format!("flow dump: {msg}"));
    let mut head = [0u8; 12];
    src.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
    if &head[..4] != FLOW_DUMP_MAGIC {
        return Err(bad("bad magic"));
    }
    let w = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let n = w
        .checked_mul(h)
        .ok_or_else(|| bad("dimensions overflow"))?;
    let mut raw = vec![0u8; n * 12];
    src.read_exact(&mut raw).map_err(|_| bad("truncated data"))?;
    let mut out = SceneFlowField {
        width: w,
        height: h,
        u: vec![0.0; n],
        v: vec![0.0; n],
        w: vec![0.0; n],
        valid: vec![false; n],
        target: vec![u32::MAX; n],
    };
    for idx in 0..n {
        let f = |o: usize| {
            f32::from_le_bytes(raw[idx * 12 + o * 4..idx * 12 + o * 4 + 4].try_into().unwrap())
        };
        let (u, v, w) = (f(0), f(1), f(2));
        if !u.is_nan() {
            out.u[idx] = u as f64;
            out.v[idx] = v as f64;
            out.w[idx] = w as f64;
            out.valid[idx] = true;
        }
    }
    Ok(out)
}
