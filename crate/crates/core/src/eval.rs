//! Metrics, synthetic scenes, and parameter sweeps.
//!
//! Ground truth is 2D per frame: a label map and the boundary map derived
//! from it. The boundary error charges every predicted boundary pixel its
//! distance to the nearest ground-truth boundary pixel, summed and divided
//! by the image area, so spurious boundaries cost and missing ones do not.
//! Distances are exact Euclidean by default, with the classic 3-4 mask
//! available for comparison. Explained variation measures how much of the
//! window's Lab color variance the segmentation accounts for, and the
//! temporal consistency score asks how often an object keeps one global
//! id across frames. The scene generator produces deterministic RGBD
//! sequences with known labels so all of this can run without hand
//! annotation.

use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, SegError};
use crate::graph_seg::{
    build_window, segment_linear_baseline, segment_multistage, BaselineParams, MultistageParams,
    Segmentation, ToxelWindow,
};
use crate::hierarchy::{
    apply_cut, build_s_graph, compute_features, cut_dendrogram, kruskal_dendrogram,
    HistogramRanges,
};
use crate::matching::MatchParams;
use crate::rgbd_io::{CameraIntrinsics, RgbdFrame};
use crate::scene_flow::flows_between;
use crate::util::splitmix64;

/// Boundary pixels of one frame. A pixel is a boundary pixel when it has
/// a valid 4-neighbor with a different label; label 0 (invalid) pixels
/// take no part on either side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryMap {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
}

impl BoundaryMap {
    pub fn n_marked(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn marked(&self, i: usize, j: usize) -> bool {
        assert!(i < self.width && j < self.height);
        self.mask[j * self.width + i]
    }
}

/// Marks every valid pixel whose 4-neighborhood contains a valid pixel of
/// a different label.
pub fn extract_boundaries(labels: &[u32], width: usize, height: usize) -> BoundaryMap {
    assert_eq!(labels.len(), width * height, "label map size mismatch");
    let mut mask = vec![false; labels.len()];
    for j in 0..height {
        for i in 0..width {
            let here = labels[j * width + i];
            if here == 0 {
                continue;
            }
            let differs = |i2: usize, j2: usize| {
                let other = labels[j2 * width + i2];
                other != 0 && other != here
            };
            mask[j * width + i] = (i > 0 && differs(i - 1, j))
                || (i + 1 < width && differs(i + 1, j))
                || (j > 0 && differs(i, j - 1))
                || (j + 1 < height && differs(i, j + 1));
        }
    }
    BoundaryMap {
        width,
        height,
        mask,
    }
}

/// Stand-in infinity for the distance transform: large enough to never
/// win against a real distance, small enough to keep the parabola
/// arithmetic finite.
const FAR: f64 = 1e20;

/// 1D squared distance transform by lower envelope of parabolas. Exact
/// for integer-valued inputs (squared distances stay well inside the f64
/// integer range).
fn dt_1d(f: &[f64], d: &mut Vec<f64>) {
    let n = f.len();
    d.clear();
    if n == 1 {
        d.push(f[0]);
        return;
    }
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2 * (q - p)) as f64;
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        d.push((q as f64 - p as f64).powi(2) + f[p]);
    }
}

/// Exact squared Euclidean distance to the nearest marked pixel, per
/// pixel. Values are exact integers wherever any pixel is marked.
fn squared_edt(gt: &BoundaryMap) -> Vec<f64> {
    let (w, h) = (gt.width, gt.height);
    let mut g: Vec<f64> = gt.mask.iter().map(|&m| if m { 0.0 } else { FAR }).collect();
    let mut line = Vec::with_capacity(w.max(h));
    let mut out = Vec::with_capacity(w.max(h));
    for i in 0..w {
        line.clear();
        line.extend((0..h).map(|j| g[j * w + i]));
        dt_1d(&line, &mut out);
        for j in 0..h {
            g[j * w + i] = out[j];
        }
    }
    for j in 0..h {
        line.clear();
        line.extend_from_slice(&g[j * w..(j + 1) * w]);
        dt_1d(&line, &mut out);
        g[j * w..(j + 1) * w].copy_from_slice(&out);
    }
    g
}

/// Two-pass 3-4 chamfer mask distances, divided by 3 so axial steps cost
/// one pixel.
fn chamfer34(gt: &BoundaryMap) -> Vec<f64> {
    let (w, h) = (gt.width as i64, gt.height as i64);
    const BIG: u32 = u32::MAX / 2;
    let mut d: Vec<u32> = gt.mask.iter().map(|&m| if m { 0 } else { BIG }).collect();
    let at = |d: &[u32], i: i64, j: i64| -> u32 {
        if i < 0 || j < 0 || i >= w || j >= h {
            BIG
        } else {
            d[(j * w + i) as usize]
        }
    };
    for j in 0..h {
        for i in 0..w {
            let idx = (j * w + i) as usize;
            d[idx] = d[idx]
                .min(at(&d, i - 1, j) + 3)
                .min(at(&d, i - 1, j - 1) + 4)
                .min(at(&d, i, j - 1) + 3)
                .min(at(&d, i + 1, j - 1) + 4);
        }
    }
    for j in (0..h).rev() {
        for i in (0..w).rev() {
            let idx = (j * w + i) as usize;
            d[idx] = d[idx]
                .min(at(&d, i + 1, j) + 3)
                .min(at(&d, i + 1, j + 1) + 4)
                .min(at(&d, i, j + 1) + 3)
                .min(at(&d, i - 1, j + 1) + 4);
        }
    }
    d.into_iter().map(|v| v as f64 / 3.0).collect()
}

/// How boundary distances are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryDistance {
    /// Exact Euclidean distance to the nearest ground-truth pixel.
    Exact,
    /// Classic sequential 3-4 mask approximation.
    Chamfer34,
}

/// Mean distance (over image area) from each predicted boundary pixel to
/// the nearest ground-truth boundary pixel. One-directional: ground-truth
/// pixels with no prediction nearby cost nothing.
pub fn chamfer_error(out: &BoundaryMap, gt: &BoundaryMap, mode: BoundaryDistance) -> Result<f64> {
    if (out.width, out.height) != (gt.width, gt.height) {
        return Err(SegError::Dimension(format!(
            "boundary maps disagree: {}x{} vs {}x{}",
            out.width, out.height, gt.width, gt.height
        )));
    }
    if gt.n_marked() == 0 {
        return Err(SegError::Invalid(
            "ground-truth boundary map has no boundary pixels".into(),
        ));
    }
    let dist = match mode {
        BoundaryDistance::Exact => squared_edt(gt)
            .into_iter()
            .map(f64::sqrt)
            .collect::<Vec<_>>(),
        BoundaryDistance::Chamfer34 => chamfer34(gt),
    };
    let total: f64 = out
        .mask
        .iter()
        .zip(&dist)
        .filter(|(&m, _)| m)
        .map(|(_, &d)| d)
        .sum();
    Ok(total / (out.width * out.height) as f64)
}

/// Share of the window's Lab color variance explained by the
/// segmentation: 1 minus the ratio of within-region variance to global
/// variance, over valid toxels. A window with zero global variance is
/// fully explained by anything, so that case is 1.
pub fn explained_variation(w: &ToxelWindow, seg: &Segmentation) -> f64 {
    assert_eq!(w.n_toxels(), seg.labels.len());
    let n_regions = seg.regions.len();
    let mut sums = vec![[0.0f64; 3]; n_regions + 1];
    let mut counts = vec![0u64; n_regions + 1];
    for (idx, &label) in seg.labels.iter().enumerate() {
        if label == 0 {
            continue;
        }
        let c = w.lab[idx];
        let s = &mut sums[label as usize];
        s[0] += c.l as f64;
        s[1] += c.a as f64;
        s[2] += c.b as f64;
        counts[label as usize] += 1;
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 1.0;
    }
    let mut gsum = [0.0f64; 3];
    for s in &sums[1..] {
        gsum[0] += s[0];
        gsum[1] += s[1];
        gsum[2] += s[2];
    }
    let gmean = gsum.map(|v| v / total as f64);
    let means: Vec<[f64; 3]> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| if n == 0 { [0.0; 3] } else { s.map(|v| v / n as f64) })
        .collect();
    let mut within = 0.0f64;
    let mut global = 0.0f64;
    for (idx, &label) in seg.labels.iter().enumerate() {
        if label == 0 {
            continue;
        }
        let c = w.lab[idx];
        let c = [c.l as f64, c.a as f64, c.b as f64];
        let m = &means[label as usize];
        for axis in 0..3 {
            within += (c[axis] - m[axis]).powi(2);
            global += (c[axis] - gmean[axis]).powi(2);
        }
    }
    if global == 0.0 {
        1.0
    } else {
        1.0 - within / global
    }
}

/// Fraction of object-frames in which the object carries its usual
/// global id. Per frame, an object's id is the output id covering most
/// of its pixels; its usual id is the most common of those across
/// frames. Ties go to the smaller id. 1.0 when there are no object
/// pixels at all.
pub fn temporal_consistency(gt: &[Vec<u32>], out: &[Vec<u64>]) -> f64 {
    assert_eq!(gt.len(), out.len(), "frame count mismatch");
    let mut per_object: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
    for (g, o) in gt.iter().zip(out) {
        assert_eq!(g.len(), o.len(), "frame size mismatch");
        let mut overlap: BTreeMap<(u32, u64), u64> = BTreeMap::new();
        for (&gl, &ol) in g.iter().zip(o) {
            if gl != 0 {
                *overlap.entry((gl, ol)).or_insert(0) += 1;
            }
        }
        let mut dominant: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
        for (&(gl, ol), &n) in &overlap {
            let e = dominant.entry(gl).or_insert((0, u64::MAX));
            if n > e.0 {
                *e = (n, ol);
            }
        }
        for (gl, (_, id)) in dominant {
            per_object.entry(gl).or_default().push(id);
        }
    }
    let (mut consistent, mut total) = (0usize, 0usize);
    for ids in per_object.values() {
        let mut freq: BTreeMap<u64, usize> = BTreeMap::new();
        for &id in ids {
            *freq.entry(id).or_insert(0) += 1;
        }
        let mut usual = (0usize, 0u64);
        for (&id, &n) in &freq {
            if n > usual.0 {
                usual = (n, id);
            }
        }
        consistent += usual.0;
        total += ids.len();
    }
    if total == 0 {
        1.0
    } else {
        consistent as f64 / total as f64
    }
}

/// Raw depth units per meter in generated scenes; matches
/// [`CameraIntrinsics::synthetic`].
const DEPTH_SCALE: f64 = 5000.0;
/// Largest representable depth with a little headroom.
const MAX_DEPTH_M: f64 = 13.0;

/// A flat patch of a second tone painted inside an object's rect, inset
/// from every edge. It shares the object's label and depth, so it adds
/// appearance structure without adding a ground-truth boundary.
#[derive(Debug, Clone, Copy)]
pub struct Accent {
    pub color: [u8; 3],
    /// Inset from each rect edge, pixels. The patch travels with the rect.
    pub inset: f64,
}

/// An axis-aligned textured plane patch in a synthetic scene.
#[derive(Debug, Clone)]
pub struct SceneObject {
    /// Ground-truth label; 1 is the background, so this must be >= 2.
    pub label: u32,
    /// Base sRGB color.
    pub color: [u8; 3],
    /// Optional second-tone inner patch.
    pub accent: Option<Accent>,
    /// Depth at frame 0, meters.
    pub depth_m: f64,
    /// x, y, width, height in pixels at frame 0. Must start inside the
    /// frame; motion may carry it out (it gets clipped).
    pub rect: [f64; 4],
    /// Pixels per frame.
    pub velocity: [f64; 2],
    /// Meters per frame.
    pub depth_velocity: f64,
    /// Half-range of the per-pixel deterministic luminance jitter,
    /// anchored to the object so it travels with it. 0 is flat color.
    pub texture_amp: u8,
}

/// Everything needed to render a deterministic synthetic RGBD sequence.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    pub background_color: [u8; 3],
    pub background_depth_m: f64,
    pub background_texture_amp: u8,
    /// Standard deviation of per-pixel Gaussian depth noise in meters;
    /// 0 disables it.
    pub depth_noise_sigma_m: f64,
    /// Nearest object wins each pixel; list order breaks depth ties
    /// (later on top).
    pub objects: Vec<SceneObject>,
    pub seed: u64,
}

/// The color-identical two-plane scene: a foreground patch at 1 m over a
/// background at 2 m, same gray, light texture. Only depth separates
/// them, which is exactly what a color-driven segmenter cannot see.
pub fn two_plane_scene(width: usize, height: usize, n_frames: usize, seed: u64) -> SceneSpec {
    SceneSpec {
        width,
        height,
        n_frames,
        background_color: [120, 120, 120],
        background_depth_m: 2.0,
        background_texture_amp: 6,
        depth_noise_sigma_m: 0.0,
        objects: vec![SceneObject {
            label: 2,
            color: [120, 120, 120],
            depth_m: 1.0,
            rect: [
                width as f64 / 4.0,
                height as f64 / 4.0,
                width as f64 / 2.0,
                height as f64 / 2.0,
            ],
            velocity: [0.0, 0.0],
            depth_velocity: 0.0,
            accent: None,
            texture_amp: 6,
        }],
        seed,
    }
}

/// A randomized scene of textured boxes over a deeper background. Every
/// pair of depth layers (including the background) is separated by at
/// least `min_depth_gap` meters, so each object boundary is a depth step
/// of at least that size. Velocities are chosen so boxes stay fully
/// inside the frame for the whole run.
pub fn random_blocks_scene(
    width: usize,
    height: usize,
    n_frames: usize,
    n_objects: usize,
    min_depth_gap: f64,
    seed: u64,
) -> SceneSpec {
    use rand::Rng;
    assert!(n_objects >= 1 && min_depth_gap > 0.0);
    let (wf, hf) = (width as f64, height as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut objects = Vec::with_capacity(n_objects);
    let mut depth = 0.8;
    for i in 0..n_objects {
        let rw = rng.gen_range(wf / 6.0..wf / 3.0);
        let rh = rng.gen_range(hf / 6.0..hf / 3.0);
        let x = rng.gen_range(1.0..wf - rw - 1.0);
        let y = rng.gen_range(1.0..hf - rh - 1.0);
        let span = (n_frames.max(2) - 1) as f64;
        let vx = rng.gen_range((-(x - 1.0) / span).max(-0.6)..=((wf - 1.0 - x - rw) / span).min(0.6));
        let vy = rng.gen_range((-(y - 1.0) / span).max(-0.6)..=((hf - 1.0 - y - rh) / span).min(0.6));
        objects.push(SceneObject {
            label: 2 + i as u32,
            color: [
                rng.gen_range(40..=215),
                rng.gen_range(40..=215),
                rng.gen_range(40..=215),
            ],
            depth_m: depth,
            rect: [x, y, rw, rh],
            velocity: [vx, vy],
            depth_velocity: 0.0,
            accent: None,
            texture_amp: 4,
        });
        depth += min_depth_gap + rng.gen_range(0.0..0.2);
    }
    SceneSpec {
        width,
        height,
        n_frames,
        background_color: [120, 120, 120],
        background_depth_m: depth + min_depth_gap,
        background_texture_amp: 4,
        depth_noise_sigma_m: 0.0,
        objects,
        seed,
    }
}

fn validate_scene(spec: &SceneSpec) -> Result<()> {
    let bad = |msg: String| Err(SegError::Invalid(format!("scene: {msg}")));
    if spec.width == 0 || spec.height == 0 || spec.n_frames == 0 {
        return bad("empty dimensions".into());
    }
    if !(spec.background_depth_m > 0.0 && spec.background_depth_m <= MAX_DEPTH_M) {
        return bad(format!(
            "background depth {} outside (0, {MAX_DEPTH_M}] m",
            spec.background_depth_m
        ));
    }
    if spec.depth_noise_sigma_m < 0.0 || spec.depth_noise_sigma_m.is_nan() {
        return bad("negative depth noise sigma".into());
    }
    let mut seen = std::collections::BTreeSet::new();
    for (n, o) in spec.objects.iter().enumerate() {
        if o.label < 2 {
            return bad(format!("object {n}: label {} is reserved", o.label));
        }
        if !seen.insert(o.label) {
            return bad(format!("object {n}: duplicate label {}", o.label));
        }
        let [x, y, w, h] = o.rect;
        if !(w > 0.0 && h > 0.0) {
            return bad(format!("object {n}: empty rect"));
        }
        if !(x >= 0.0 && y >= 0.0 && x + w <= spec.width as f64 && y + h <= spec.height as f64) {
            return bad(format!("object {n}: rect leaves the frame at t=0"));
        }
        if let Some(a) = &o.accent {
            if !(a.inset >= 1.0 && 2.0 * a.inset < w.min(h)) {
                return bad(format!("object {n}: accent inset {} leaves no patch", a.inset));
            }
        }
        let t_last = (spec.n_frames - 1) as f64;
        for d in [o.depth_m, o.depth_m + t_last * o.depth_velocity] {
            if !(d > 0.0 && d <= MAX_DEPTH_M) {
                return bad(format!("object {n}: depth {d} outside (0, {MAX_DEPTH_M}] m"));
            }
        }
    }
    Ok(())
}

fn texture_delta(label: u32, u: i64, v: i64, amp: u8) -> i32 {
    if amp == 0 {
        return 0;
    }
    let key =
        ((label as u64) << 48) ^ (((u as u64) & 0xFF_FFFF) << 24) ^ ((v as u64) & 0xFF_FFFF);
    (splitmix64(key) % (2 * amp as u64 + 1)) as i32 - amp as i32
}

/// Renders a [`SceneSpec`] one frame at a time; the streaming engine can
/// consume arbitrarily long scenes without holding them in memory.
pub struct SceneGenerator {
    spec: SceneSpec,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    t: usize,
}

impl SceneGenerator {
    pub fn new(spec: SceneSpec) -> Result<Self> {
        validate_scene(&spec)?;
        let noise = (spec.depth_noise_sigma_m > 0.0)
            .then(|| Normal::new(0.0, spec.depth_noise_sigma_m).unwrap());
        Ok(SceneGenerator {
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            noise,
            spec,
            t: 0,
        })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    /// The next frame and its ground-truth label map, or None when the
    /// scene is over.
    pub fn next_frame(&mut self) -> Option<(RgbdFrame, Vec<u32>)> {
        if self.t >= self.spec.n_frames {
            return None;
        }
        let t = self.t as f64;
        let spec = &self.spec;
        let (w, h) = (spec.width, spec.height);

        struct Placed {
            label: u32,
            color: [u8; 3],
            accent: Option<Accent>,
            depth: f64,
            x: f64,
            y: f64,
            rw: f64,
            rh: f64,
            amp: u8,
        }
        let placed: Vec<Placed> = spec
            .objects
            .iter()
            .map(|o| Placed {
                label: o.label,
                color: o.color,
                accent: o.accent,
                depth: o.depth_m + t * o.depth_velocity,
                x: o.rect[0] + t * o.velocity[0],
                y: o.rect[1] + t * o.velocity[1],
                rw: o.rect[2],
                rh: o.rect[3],
                amp: o.texture_amp,
            })
            .collect();

        let mut color = vec![[0u8; 3]; w * h];
        let mut depth = vec![0u16; w * h];
        let mut labels = vec![0u32; w * h];
        for j in 0..h {
            for i in 0..w {
                let (fi, fj) = (i as f64, j as f64);
                let mut label = 1u32;
                let mut base = spec.background_color;
                let mut z = spec.background_depth_m;
                let mut anchor = (0i64, 0i64);
                let mut amp = spec.background_texture_amp;
                for p in &placed {
                    let covers = fi >= p.x && fi < p.x + p.rw && fj >= p.y && fj < p.y + p.rh;
                    if covers && (label == 1 || p.depth <= z) {
                        label = p.label;
                        base = p.color;
                        if let Some(a) = &p.accent {
                            let inside = fi >= p.x + a.inset
                                && fi < p.x + p.rw - a.inset
                                && fj >= p.y + a.inset
                                && fj < p.y + p.rh - a.inset;
                            if inside {
                                base = a.color;
                            }
                        }
                        z = p.depth;
                        anchor = (p.x.round() as i64, p.y.round() as i64);
                        amp = p.amp;
                    }
                }
                let delta = texture_delta(label, i as i64 - anchor.0, j as i64 - anchor.1, amp);
                let idx = j * w + i;
                color[idx] = base.map(|c| (c as i32 + delta).clamp(0, 255) as u8);
                let z = match &self.noise {
                    Some(n) => z + n.sample(&mut self.rng),
                    None => z,
                };
                depth[idx] = ((z * DEPTH_SCALE).round() as i64).clamp(1, u16::MAX as i64) as u16;
                labels[idx] = label;
            }
        }
        self.t += 1;
        Some((
            RgbdFrame {
                width: w,
                height: h,
                color,
                depth,
                timestamp: (self.t - 1) as f64 / 30.0,
                intrinsics: CameraIntrinsics::synthetic(w, h),
            },
            labels,
        ))
    }
}

/// A fully rendered scene with ground truth.
#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub frames: Vec<RgbdFrame>,
    pub gt_labels: Vec<Vec<u32>>,
    pub gt_boundaries: Vec<BoundaryMap>,
}

/// Renders the whole scene into memory. Deterministic: the same spec
/// (seed included) gives bit-identical frames.
pub fn generate_scene(spec: &SceneSpec) -> Result<GeneratedScene> {
    let mut gen = SceneGenerator::new(spec.clone())?;
    let mut out = GeneratedScene {
        frames: Vec::with_capacity(spec.n_frames),
        gt_labels: Vec::with_capacity(spec.n_frames),
        gt_boundaries: Vec::with_capacity(spec.n_frames),
    };
    while let Some((frame, labels)) = gen.next_frame() {
        out.gt_boundaries
            .push(extract_boundaries(&labels, spec.width, spec.height));
        out.frames.push(frame);
        out.gt_labels.push(labels);
    }
    Ok(out)
}

/// Per-frame boundary error of a window labeling against per-frame
/// ground truth.
pub fn per_frame_boundary_errors(
    labels: &[u32],
    width: usize,
    height: usize,
    n_frames: usize,
    gt: &[BoundaryMap],
    mode: BoundaryDistance,
) -> Result<Vec<f64>> {
    assert_eq!(labels.len(), width * height * n_frames);
    assert_eq!(gt.len(), n_frames);
    (0..n_frames)
        .map(|t| {
            let slice = &labels[t * width * height..(t + 1) * width * height];
            chamfer_error(&extract_boundaries(slice, width, height), &gt[t], mode)
        })
        .collect()
}

/// One parameter axis to sweep.
#[derive(Debug, Clone)]
pub enum SweepGrid {
    /// Baseline mixing weight; also reruns the two-stage method at each
    /// value to show it does not depend on alpha.
    Alpha(Vec<f64>),
    KDepth(Vec<f64>),
    KColor(Vec<f64>),
    /// Dendrogram cut fraction applied on top of the two-stage result.
    Zeta(Vec<f64>),
}

/// One CSV row; `frame` is a frame index or "mean".
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub scene: String,
    pub method: String,
    pub param: String,
    pub value: f64,
    pub frame: String,
    pub e_bound: f64,
}

fn emit_rows(
    rows: &mut Vec<SweepRow>,
    scene: &str,
    method: &str,
    param: &str,
    value: f64,
    errors: &[f64],
) {
    for (t, &e) in errors.iter().enumerate() {
        rows.push(SweepRow {
            scene: scene.into(),
            method: method.into(),
            param: param.into(),
            value,
            frame: t.to_string(),
            e_bound: e,
        });
    }
    rows.push(SweepRow {
        scene: scene.into(),
        method: method.into(),
        param: param.into(),
        value,
        frame: "mean".into(),
        e_bound: errors.iter().sum::<f64>() / errors.len() as f64,
    });
}

/// Runs one sweep over every scene. Each scene is segmented as a single
/// window (scenes meant for sweeping are window-sized), so flow and the
/// toxel graph are built once per scene.
pub fn run_sweep(scenes: &[(String, GeneratedScene)], grid: &SweepGrid) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for (name, scene) in scenes {
        let flows = flows_between(&scene.frames)?;
        let w = build_window(&scene.frames, &flows)?;
        let errors_of = |seg: &Segmentation| {
            per_frame_boundary_errors(
                &seg.labels,
                w.width,
                w.height,
                w.n_frames,
                &scene.gt_boundaries,
                BoundaryDistance::Exact,
            )
        };
        match grid {
            SweepGrid::Alpha(vals) => {
                let ms = segment_multistage(&w, &MultistageParams::default());
                let ms_errors = errors_of(&ms.output)?;
                for &a in vals {
                    emit_rows(&mut rows, name, "multistage", "alpha", a, &ms_errors);
                    let bl = segment_linear_baseline(
                        &w,
                        &BaselineParams {
                            alpha: a as f32,
                            ..BaselineParams::default()
                        },
                    );
                    emit_rows(&mut rows, name, "baseline", "alpha", a, &errors_of(&bl)?);
                }
            }
            SweepGrid::KDepth(vals) => {
                for &k in vals {
                    let ms = segment_multistage(
                        &w,
                        &MultistageParams {
                            k_depth: k as f32,
                            ..MultistageParams::default()
                        },
                    );
                    emit_rows(&mut rows, name, "multistage", "k_depth", k, &errors_of(&ms.output)?);
                }
            }
            SweepGrid::KColor(vals) => {
                for &k in vals {
                    let ms = segment_multistage(
                        &w,
                        &MultistageParams {
                            k_color: k as f32,
                            ..MultistageParams::default()
                        },
                    );
                    emit_rows(&mut rows, name, "multistage", "k_color", k, &errors_of(&ms.output)?);
                }
            }
            SweepGrid::Zeta(vals) => {
                let ms = segment_multistage(&w, &MultistageParams::default());
                let feats = compute_features(&w, &ms.output, &HistogramRanges::default());
                let edges = build_s_graph(&w, &ms.output, &feats, &MatchParams::default());
                let dendro = kruskal_dendrogram(&edges, feats.len());
                for &z in vals {
                    let cut = apply_cut(&w, &ms.output, &cut_dendrogram(&dendro, z));
                    emit_rows(&mut rows, name, "multistage", "zeta", z, &errors_of(&cut)?);
                }
            }
        }
    }
    Ok(rows)
}

/// Writes sweep rows as CSV with the header
/// `scene,method,param,value,frame,E_bound`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], sink: W) -> Result<()> {
    let err = |e: csv::Error| SegError::Invalid(format!("csv write: {e}"));
    let mut out = csv::Writer::from_writer(sink);
    out.write_record(["scene", "method", "param", "value", "frame", "E_bound"])
        .map_err(err)?;
    for r in rows {
        out.write_record([
            r.scene.as_str(),
            r.method.as_str(),
            r.param.as_str(),
            &r.value.to_string(),
            &r.frame,
            &r.e_bound.to_string(),
        ])
        .map_err(err)?;
    }
    out.flush()
        .map_err(|e| SegError::Invalid(format!("csv write: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_seg::Segmentation;
    use crate::test_util::{flat_frame, window_from};
    use rand::{Rng, SeedableRng};

    fn map(width: usize, height: usize, marked: &[(usize, usize)]) -> BoundaryMap {
        let mut mask = vec![false; width * height];
        for &(i, j) in marked {
            mask[j * width + i] = true;
        }
        BoundaryMap {
            width,
            height,
            mask,
        }
    }

    fn marked_set(b: &BoundaryMap) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for j in 0..b.height {
            for i in 0..b.width {
                if b.marked(i, j) {
                    v.push((i, j));
                }
            }
        }
        v
    }

    #[test]
    fn constant_label_map_has_no_boundaries() {
        let b = extract_boundaries(&[7u32; 12], 4, 3);
        assert_eq!(b.n_marked(), 0);
    }

    #[test]
    fn vertical_split_marks_both_sides() {
        let mut labels = vec![0u32; 16];
        for j in 0..4 {
            for i in 0..4 {
                labels[j * 4 + i] = if i < 2 { 1 } else { 2 };
            }
        }
        let b = extract_boundaries(&labels, 4, 4);
        assert_eq!(b.n_marked(), 8);
        for j in 0..4 {
            assert!(b.marked(1, j) && b.marked(2, j));
            assert!(!b.marked(0, j) && !b.marked(3, j));
        }
    }

    #[test]
    fn single_differing_pixel_marks_itself_and_neighbors() {
        let mut labels = vec![1u32; 16];
        labels[4 + 1] = 2; // (1, 1)
        let b = extract_boundaries(&labels, 4, 4);
        assert_eq!(
            marked_set(&b),
            vec![(1, 0), (0, 1), (1, 1), (2, 1), (1, 2)]
        );
    }

    #[test]
    fn invalid_pixels_take_no_part() {
        // 1 and 2 touch only through an invalid pixel: no boundary
        let b = extract_boundaries(&[1, 0, 2], 3, 1);
        assert_eq!(b.n_marked(), 0);
        // invalid pixel itself is never marked even beside a real edge
        let b = extract_boundaries(&[1, 2, 0], 3, 1);
        assert_eq!(marked_set(&b), vec![(0, 0), (1, 0)]);
    }

    #[test]
    fn error_is_zero_against_itself() {
        let b = map(9, 7, &[(0, 0), (3, 2), (8, 6), (4, 4)]);
        for mode in [BoundaryDistance::Exact, BoundaryDistance::Chamfer34] {
            assert_eq!(chamfer_error(&b, &b, mode).unwrap(), 0.0);
        }
    }

    #[test]
    fn shifted_line_costs_one_over_width() {
        let gt = map(8, 4, &(0..4).map(|j| (3, j)).collect::<Vec<_>>());
        let out = map(8, 4, &(0..4).map(|j| (4, j)).collect::<Vec<_>>());
        let e = chamfer_error(&out, &gt, BoundaryDistance::Exact).unwrap();
        assert_eq!(e, 1.0 / 8.0);
    }

    #[test]
    fn missing_boundaries_are_free_spurious_ones_cost() {
        let one_line = map(8, 4, &(0..4).map(|j| (3, j)).collect::<Vec<_>>());
        let two_lines = map(
            8,
            4,
            &(0..4).flat_map(|j| [(3, j), (5, j)]).collect::<Vec<_>>(),
        );
        let forgiven = chamfer_error(&one_line, &two_lines, BoundaryDistance::Exact).unwrap();
        let charged = chamfer_error(&two_lines, &one_line, BoundaryDistance::Exact).unwrap();
        assert_eq!(forgiven, 0.0);
        assert_eq!(charged, 4.0 * 2.0 / 32.0);
    }

    #[test]
    fn exact_distances_match_brute_force_search() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for case in 0..100 {
            let (w, h) = if case == 0 { (7, 5) } else { (32, 32) };
            let mut mask = vec![false; w * h];
            if case == 0 {
                mask[0] = true; // lone corner pixel
            } else {
                let density = rng.gen_range(0.01..0.3);
                for m in mask.iter_mut() {
                    *m = rng.gen_bool(density);
                }
                if !mask.iter().any(|&m| m) {
                    mask[rng.gen_range(0..w * h)] = true;
                }
            }
            let b = BoundaryMap {
                width: w,
                height: h,
                mask,
            };
            let fast = squared_edt(&b);
            for j in 0..h {
                for i in 0..w {
                    let brute = (0..h)
                        .flat_map(|j2| (0..w).map(move |i2| (i2, j2)))
                        .filter(|&(i2, j2)| b.marked(i2, j2))
                        .map(|(i2, j2)| {
                            let (di, dj) = (i as i64 - i2 as i64, j as i64 - j2 as i64);
                            (di * di + dj * dj) as u64
                        })
                        .min()
                        .unwrap();
                    assert_eq!(fast[j * w + i], brute as f64, "at ({i}, {j}) case {case}");
                }
            }
        }
    }

    #[test]
    fn mask_distances_follow_the_3_4_weights() {
        let gt = map(5, 5, &[(2, 2)]);
        let area = 25.0;
        for (out_px, expected) in [
            ((3usize, 2usize), 3.0 / 3.0), // axial
            ((3, 3), 4.0 / 3.0),           // diagonal
            ((4, 3), 7.0 / 3.0),           // knight move: one axial + one diagonal
            ((4, 2), 6.0 / 3.0),           // two axial
        ] {
            let out = map(5, 5, &[out_px]);
            let e = chamfer_error(&out, &gt, BoundaryDistance::Chamfer34).unwrap();
            assert!((e - expected / area).abs() < 1e-12, "{out_px:?}");
        }
    }

    #[test]
    fn empty_ground_truth_is_an_error() {
        let out = map(4, 4, &[(1, 1)]);
        let gt = map(4, 4, &[]);
        assert!(chamfer_error(&out, &gt, BoundaryDistance::Exact).is_err());
        let other = map(5, 4, &[(1, 1)]);
        assert!(chamfer_error(&out, &other, BoundaryDistance::Exact).is_err());
    }

    /// 2-frame window with per-pixel colors laid out by a closure.
    fn colored_window(w: usize, h: usize, f: impl Fn(usize, usize) -> [u8; 3]) -> ToxelWindow {
        let mut frame = flat_frame(w, h, [0, 0, 0], 5000);
        for j in 0..h {
            for i in 0..w {
                frame.color[j * w + i] = f(i, j);
            }
        }
        window_from(&[frame.clone(), frame])
    }

    fn seg_with(w: &ToxelWindow, labels: Vec<u32>) -> Segmentation {
        Segmentation::from_labels(w, labels)
    }

    #[test]
    fn singleton_regions_explain_everything() {
        let w = colored_window(4, 2, |i, j| [(i * 40) as u8, (j * 90) as u8, 10]);
        let labels = (1..=w.n_toxels() as u32).collect();
        assert_eq!(explained_variation(&w, &seg_with(&w, labels)), 1.0);
    }

    #[test]
    fn single_region_explains_nothing() {
        let w = colored_window(4, 2, |i, _| [(i * 40) as u8, 0, 0]);
        let labels = vec![1u32; w.n_toxels()];
        assert_eq!(explained_variation(&w, &seg_with(&w, labels)), 0.0);
    }

    #[test]
    fn uniform_window_is_fully_explained_by_one_region() {
        let w = colored_window(4, 2, |_, _| [97, 140, 33]);
        let labels = vec![1u32; w.n_toxels()];
        assert_eq!(explained_variation(&w, &seg_with(&w, labels)), 1.0);
    }

    #[test]
    fn exact_two_color_split_explains_everything() {
        let w = colored_window(4, 2, |i, _| if i < 2 { [200, 30, 30] } else { [30, 30, 200] });
        let labels = (0..w.n_toxels())
            .map(|idx| if idx % 4 < 2 { 1 } else { 2 })
            .collect();
        assert_eq!(explained_variation(&w, &seg_with(&w, labels)), 1.0);
    }

    #[test]
    fn ev_is_invariant_under_global_lab_shift_and_refinement() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let mut w = colored_window(6, 4, |_, _| [0, 0, 0]);
        for c in w.lab.iter_mut() {
            c.l = rng.gen_range(20.0..80.0);
            c.a = rng.gen_range(-30.0..30.0);
            c.b = rng.gen_range(-30.0..30.0);
        }
        let halves: Vec<u32> = (0..w.n_toxels())
            .map(|idx| if idx % 6 < 3 { 1 } else { 2 })
            .collect();
        let quarters: Vec<u32> = halves
            .iter()
            .enumerate()
            .map(|(idx, &l)| if (idx / 6) % 2 == 0 { l } else { l + 2 })
            .collect();
        let ev_halves = explained_variation(&w, &seg_with(&w, halves.clone()));
        let ev_quarters = explained_variation(&w, &seg_with(&w, quarters));
        assert!(ev_quarters >= ev_halves - 1e-12);

        let mut shifted = w.clone();
        for c in shifted.lab.iter_mut() {
            c.l += 11.0;
            c.a -= 4.0;
            c.b += 2.5;
        }
        let before = explained_variation(&w, &seg_with(&w, halves.clone()));
        let after = explained_variation(&shifted, &seg_with(&shifted, halves));
        assert!((before - after).abs() < 1e-6, "{before} vs {after}");
    }

    #[test]
    fn temporal_consistency_counts_stable_object_frames() {
        let gt: Vec<Vec<u32>> = (0..4).map(|_| vec![2, 2, 3, 3]).collect();
        let stable: Vec<Vec<u64>> = (0..4).map(|_| vec![10, 10, 11, 11]).collect();
        assert_eq!(temporal_consistency(&gt, &stable), 1.0);
        // object 3 flips id in one of the four frames
        let mut flipped = stable.clone();
        flipped[2] = vec![10, 10, 99, 99];
        assert_eq!(temporal_consistency(&gt, &flipped), 7.0 / 8.0);
        assert_eq!(temporal_consistency(&[], &[]), 1.0);
    }

    fn simple_scene(seed: u64, sigma: f64, velocity: [f64; 2]) -> SceneSpec {
        SceneSpec {
            width: 24,
            height: 16,
            n_frames: 3,
            background_color: [40, 90, 40],
            background_depth_m: 2.5,
            background_texture_amp: 4,
            depth_noise_sigma_m: sigma,
            objects: vec![SceneObject {
                label: 2,
                color: [200, 60, 60],
                depth_m: 1.2,
                rect: [4.0, 4.0, 8.0, 6.0],
                velocity,
                depth_velocity: 0.0,
                accent: None,
                texture_amp: 4,
            }],
            seed,
        }
    }

    #[test]
    fn static_scene_repeats_identically() {
        let s = generate_scene(&simple_scene(5, 0.0, [0.0, 0.0])).unwrap();
        for t in 1..3 {
            assert_eq!(s.frames[t].color, s.frames[0].color);
            assert_eq!(s.frames[t].depth, s.frames[0].depth);
            assert_eq!(s.gt_labels[t], s.gt_labels[0]);
        }
    }

    #[test]
    fn translating_box_translates_its_labels() {
        let s = generate_scene(&simple_scene(5, 0.0, [2.0, 0.0])).unwrap();
        for t in 0..3 {
            let expect: Vec<(usize, usize)> = (4..10)
                .flat_map(|j| (4 + 2 * t..12 + 2 * t).map(move |i| (i, j)))
                .collect();
            let got: Vec<(usize, usize)> = (0..16)
                .flat_map(|j| (0..24).map(move |i| (i, j)))
                .filter(|&(i, j)| s.gt_labels[t][j * 24 + i] == 2)
                .collect();
            assert_eq!(got, expect, "frame {t}");
        }
    }

    #[test]
    fn random_blocks_scenes_keep_their_promises() {
        for seed in 0..20 {
            let spec = random_blocks_scene(48, 36, 12, 3, 0.3, seed);
            assert_eq!(spec.objects.len(), 3);
            let mut depths: Vec<f64> = spec
                .objects
                .iter()
                .map(|o| o.depth_m)
                .chain([spec.background_depth_m])
                .collect();
            depths.sort_by(f64::total_cmp);
            for pair in depths.windows(2) {
                assert!(pair[1] - pair[0] >= 0.3 - 1e-12, "seed {seed}");
            }
            for o in &spec.objects {
                for t in [0.0, 11.0] {
                    let x = o.rect[0] + t * o.velocity[0];
                    let y = o.rect[1] + t * o.velocity[1];
                    assert!(x >= 0.0 && y >= 0.0, "seed {seed}");
                    assert!(x + o.rect[2] <= 48.0 && y + o.rect[3] <= 36.0, "seed {seed}");
                }
            }
            generate_scene(&spec).unwrap();
        }
        let a = random_blocks_scene(48, 36, 12, 3, 0.3, 7);
        let b = random_blocks_scene(48, 36, 12, 3, 0.3, 7);
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn same_seed_reproduces_noise_bit_identically() {
        let a = generate_scene(&simple_scene(9, 0.01, [0.0, 0.0])).unwrap();
        let b = generate_scene(&simple_scene(9, 0.01, [0.0, 0.0])).unwrap();
        let c = generate_scene(&simple_scene(10, 0.01, [0.0, 0.0])).unwrap();
        assert_eq!(a.frames[2].depth, b.frames[2].depth);
        assert_ne!(a.frames[2].depth, c.frames[2].depth);
        // noise perturbs depth but never invalidates a pixel
        assert!(a.frames.iter().all(|f| f.depth.iter().all(|&d| d > 0)));
    }

    #[test]
    fn geometry_validation_rejects_bad_specs() {
        let ok = simple_scene(1, 0.0, [0.0, 0.0]);
        assert!(generate_scene(&ok).is_ok());
        let mut reserved = ok.clone();
        reserved.objects[0].label = 1;
        assert!(generate_scene(&reserved).is_err());
        let mut dup = ok.clone();
        dup.objects.push(dup.objects[0].clone());
        assert!(generate_scene(&dup).is_err());
        let mut outside = ok.clone();
        outside.objects[0].rect = [20.0, 4.0, 8.0, 6.0];
        assert!(generate_scene(&outside).is_err());
        let mut deep = ok.clone();
        deep.objects[0].depth_m = 14.0;
        assert!(generate_scene(&deep).is_err());
    }

    #[test]
    fn two_plane_fixture_separates_by_depth_only() {
        let s = generate_scene(&two_plane_scene(24, 16, 2, 3)).unwrap();
        let labels = &s.gt_labels[0];
        assert!(labels.contains(&1) && labels.contains(&2));
        assert!(s.gt_boundaries[0].n_marked() > 0);
        // color histograms of the two planes are statistically alike:
        // identical base color, only the jitter pattern differs
        let d = s.frames[0].depth[0];
        assert_eq!(d, 10000, "background at 2 m");
    }

    #[test]
    fn alpha_sweep_reruns_baseline_but_not_multistage() {
        let spec = SceneSpec {
            width: 16,
            height: 12,
            n_frames: 2,
            ..simple_scene(2, 0.0, [0.0, 0.0])
        };
        let scenes = vec![("tiny".to_string(), generate_scene(&spec).unwrap())];
        let rows = run_sweep(&scenes, &SweepGrid::Alpha(vec![0.3, 0.7])).unwrap();
        // 2 alphas x 2 methods x (2 frames + mean)
        assert_eq!(rows.len(), 12);
        let ms: Vec<&SweepRow> = rows
            .iter()
            .filter(|r| r.method == "multistage" && r.frame == "mean")
            .collect();
        assert_eq!(ms.len(), 2);
        assert_eq!(ms[0].e_bound, ms[1].e_bound);
        assert!(rows.iter().any(|r| r.method == "baseline"));

        let mut csv = Vec::new();
        write_sweep_csv(&rows, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("scene,method,param,value,frame,E_bound\n"));
        assert_eq!(text.lines().count(), 13);
        assert!(text.contains("tiny,multistage,alpha,0.3,0,"));
        assert!(text.contains("tiny,baseline,alpha,0.7,mean,"));
    }
}
