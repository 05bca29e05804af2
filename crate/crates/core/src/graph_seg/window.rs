//! The toxel lattice: a block of n consecutive frames viewed as one
//! (i, j, t) grid, plus the edge topology segmentation runs on.
//!
//! Each toxel carries Lab color, metric 3D position, and the scene flow
//! that arrived at its pixel from the previous frame (first-frame toxels
//! have none). Toxels without depth are invalid and stay isolated in
//! every graph.
//!
//! Topology is the 26-neighborhood of the lattice (8 spatial + 9 in each
//! temporal direction) supplemented by flow edges: each toxel with valid
//! scene flow also connects to the toxel nearest its flow target in the
//! next frame. A flow edge whose target already falls inside the 3x3
//! spatial neighborhood duplicates a lattice edge; duplicates carry the
//! same endpoint-derived weight, so they are simply dropped.

use rayon::prelude::*;

use crate::error::{Result, SegError};
use crate::rgbd_io::{LabPixel, Point3, RgbdFrame};
use crate::scene_flow::SceneFlowField;

use super::fh::Edge;

/// A window of frames flattened to one toxel grid.
///
/// Linear index layout: `(t * height + j) * width + i`.
#[derive(Debug, Clone)]
pub struct ToxelWindow {
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    pub lab: Vec<LabPixel>,
    pub pos: Vec<Point3>,
    pub valid: Vec<bool>,
    /// Backward scene flow (u, v, w) in meters per frame; zeros where
    /// `flow_valid` is false.
    pub flow: Vec<[f64; 3]>,
    pub flow_valid: Vec<bool>,
    /// Forward flow-edge target: linear toxel index in frame t+1, or
    /// `u32::MAX` where there is none (invalid flow or last frame).
    pub flow_target: Vec<u32>,
}

impl ToxelWindow {
    pub fn n_toxels(&self) -> usize {
        self.width * self.height * self.n_frames
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, t: usize) -> usize {
        debug_assert!(i < self.width && j < self.height && t < self.n_frames);
        (t * self.height + j) * self.width + i
    }

    /// Inverse of [`ToxelWindow::index`].
    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let per_frame = self.width * self.height;
        let t = idx / per_frame;
        let rest = idx % per_frame;
        (rest % self.width, rest / self.width, t)
    }

    pub fn frame_of(&self, idx: usize) -> usize {
        idx / (self.width * self.height)
    }
}

/// Flattens frames and their connecting scene flow into a toxel window.
///
/// `flows[t]` must be the scene flow from `frames[t]` to `frames[t+1]`;
/// its (u, v, w) is attached to the frame-t+1 toxel at the same pixel
/// coordinates, and its rounded target feeds the forward flow edges.
pub fn build_window(frames: &[RgbdFrame], flows: &[SceneFlowField]) -> Result<ToxelWindow> {
    let first = frames
        .first()
        .ok_or_else(|| SegError::Invalid("window needs at least one frame".into()))?;
    let (w, h) = (first.width, first.height);
    if flows.len() + 1 != frames.len() {
        return Err(SegError::Dimension(format!(
            "{} frames need {} flow fields, got {}",
            frames.len(),
            frames.len() - 1,
            flows.len()
        )));
    }
    for f in frames {
        if (f.width, f.height) != (w, h) {
            return Err(SegError::Dimension(format!(
                "frame is {}x{}, window is {w}x{h}",
                f.width, f.height
            )));
        }
    }
    for f in flows {
        if (f.width, f.height) != (w, h) {
            return Err(SegError::Dimension(format!(
                "flow field is {}x{}, window is {w}x{h}",
                f.width, f.height
            )));
        }
    }

    let per_frame = w * h;
    let n = per_frame * frames.len();
    let lab: Vec<LabPixel> = frames
        .par_iter()
        .flat_map_iter(|f| f.color.iter().map(|&rgb| crate::rgbd_io::srgb_to_lab(rgb)))
        .collect();

    let mut pos = vec![Point3::default(); n];
    let mut valid = vec![false; n];
    let mut flow = vec![[0.0f64; 3]; n];
    let mut flow_valid = vec![false; n];
    let mut flow_target = vec![u32::MAX; n];
    for (t, f) in frames.iter().enumerate() {
        for j in 0..h {
            for i in 0..w {
                let idx = (t * h + j) * w + i;
                if let Some(p) = f.lift_to_3d(i, j) {
                    pos[idx] = p;
                    valid[idx] = true;
                }
                if t > 0 {
                    if let Some((u, v, wz)) = flows[t - 1].at(i, j) {
                        flow[idx] = [u, v, wz];
                        flow_valid[idx] = true;
                    }
                }
                if t + 1 < frames.len() {
                    let target = flows[t].target[j * w + i];
                    if target != u32::MAX {
                        flow_target[idx] = ((t + 1) * per_frame) as u32 + target;
                    }
                }
            }
        }
    }

    Ok(ToxelWindow {
        width: w,
        height: h,
        n_frames: frames.len(),
        lab,
        pos,
        valid,
        flow,
        flow_valid,
        flow_target,
    })
}

/// Forward half of the 26-neighborhood as (dt, dj, di); each unordered
/// pair is visited once.
const FORWARD_OFFSETS: [(i64, i64, i64); 13] = [
    (0, 0, 1),
    (0, 1, -1),
    (0, 1, 0),
    (0, 1, 1),
    (1, -1, -1),
    (1, -1, 0),
    (1, -1, 1),
    (1, 0, -1),
    (1, 0, 0),
    (1, 0, 1),
    (1, 1, -1),
    (1, 1, 0),
    (1, 1, 1),
];

/// Calls `f(a, b)` for every unordered pair (a < b) of valid toxels that
/// are lattice 26-neighbors. Flow edges are not included.
pub fn for_each_lattice_pair(w: &ToxelWindow, mut f: impl FnMut(u32, u32)) {
    let (wd, ht, nf) = (w.width as i64, w.height as i64, w.n_frames as i64);
    for t in 0..nf {
        for j in 0..ht {
            for i in 0..wd {
                let idx = ((t * ht + j) * wd + i) as usize;
                if !w.valid[idx] {
                    continue;
                }
                for (dt, dj, di) in FORWARD_OFFSETS {
                    let (ni, nj, nt) = (i + di, j + dj, t + dt);
                    if ni < 0 || nj < 0 || ni >= wd || nj >= ht || nt >= nf {
                        continue;
                    }
                    let nidx = ((nt * ht + nj) * wd + ni) as usize;
                    if w.valid[nidx] {
                        f(idx as u32, nidx as u32);
                    }
                }
            }
        }
    }
}

/// Enumerates the unordered toxel pairs (a < b, both valid) of the
/// lattice neighborhood plus non-duplicate flow edges. Deterministic
/// order.
pub fn toxel_pairs(w: &ToxelWindow) -> Vec<(u32, u32)> {
    let per_frame = w.width * w.height;
    let mut pairs = Vec::with_capacity(w.n_toxels() * 13 / 2);
    for_each_lattice_pair(w, |a, b| pairs.push((a, b)));
    for idx in 0..w.n_toxels() {
        let target = w.flow_target[idx];
        if target == u32::MAX || !w.valid[idx] || !w.valid[target as usize] {
            continue;
        }
        let (i, j, _) = w.coords(idx);
        let (ti, tj) = (
            target as usize % per_frame % w.width,
            target as usize % per_frame / w.width,
        );
        // inside the 3x3 the lattice already covers it
        if ti.abs_diff(i) > 1 || tj.abs_diff(j) > 1 {
            pairs.push((idx as u32, target));
        }
    }
    pairs
}

/// Weights pairs by absolute depth difference in meters.
pub fn depth_edges(w: &ToxelWindow, pairs: &[(u32, u32)]) -> Vec<Edge> {
    pairs
        .par_iter()
        .map(|&(a, b)| Edge {
            a,
            b,
            weight: (w.pos[a as usize].z - w.pos[b as usize].z).abs() as f32,
        })
        .collect()
}

/// Weights pairs by Euclidean Lab distance. With `stage1` labels given,
/// pairs that straddle a stage-1 boundary become infinite (never merged).
pub fn color_edges(w: &ToxelWindow, pairs: &[(u32, u32)], stage1: Option<&[u32]>) -> Vec<Edge> {
    pairs
        .par_iter()
        .map(|&(a, b)| {
            let weight = match stage1 {
                Some(labels) if labels[a as usize] != labels[b as usize] => f32::INFINITY,
                _ => w.lab[a as usize].distance(&w.lab[b as usize]),
            };
            Edge { a, b, weight }
        })
        .collect()
}

/// Depth-weighted graph over the full window topology.
pub fn build_d_graph(w: &ToxelWindow) -> Vec<Edge> {
    depth_edges(w, &toxel_pairs(w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_flow::{lift_flow, FlowField2D};
    use crate::test_util::{flat_frame, zero_flows};
    use std::collections::BTreeSet;

    #[test]
    fn eight_qvga_frames_make_614400_toxels() {
        let frames: Vec<_> = (0..8).map(|_| flat_frame(320, 240, [80, 90, 100], 5000)).collect();
        let w = build_window(&frames, &zero_flows(&frames)).unwrap();
        assert_eq!(w.n_toxels(), 614_400);
        assert!(w.valid.iter().all(|&v| v));
    }

    #[test]
    fn all_zero_depth_frame_is_entirely_invalid() {
        let mut frames = vec![
            flat_frame(6, 4, [10, 20, 30], 5000),
            flat_frame(6, 4, [10, 20, 30], 0),
            flat_frame(6, 4, [10, 20, 30], 5000),
        ];
        frames[1].depth = vec![0; 24];
        let w = build_window(&frames, &zero_flows(&frames)).unwrap();
        for idx in 0..w.n_toxels() {
            let (_, _, t) = w.coords(idx);
            assert_eq!(w.valid[idx], t != 1);
        }
    }

    #[test]
    fn index_and_coords_are_inverse() {
        let frames: Vec<_> = (0..3).map(|_| flat_frame(7, 5, [0, 0, 0], 100)).collect();
        let w = build_window(&frames, &zero_flows(&frames)).unwrap();
        for idx in 0..w.n_toxels() {
            let (i, j, t) = w.coords(idx);
            assert_eq!(w.index(i, j, t), idx);
        }
    }

    #[test]
    fn backward_flow_attaches_to_the_later_frame() {
        let frames = vec![flat_frame(5, 4, [5, 5, 5], 5000), flat_frame(5, 4, [5, 5, 5], 7500)];
        let w = build_window(&frames, &zero_flows(&frames)).unwrap();
        for idx in 0..w.n_toxels() {
            let (_, _, t) = w.coords(idx);
            assert_eq!(w.flow_valid[idx], t == 1);
            if t == 1 {
                // depth moved from 1.0m to 1.5m under zero 2D flow
                assert_eq!(w.flow[idx], [0.0, 0.0, 0.5]);
            }
        }
    }

    /// Brute-force 26-neighborhood oracle.
    fn naive_pairs(w: &ToxelWindow) -> BTreeSet<(u32, u32)> {
        let mut set = BTreeSet::new();
        for a in 0..w.n_toxels() {
            if !w.valid[a] {
                continue;
            }
            let (ai, aj, at) = w.coords(a);
            for b in 0..w.n_toxels() {
                if a == b || !w.valid[b] {
                    continue;
                }
                let (bi, bj, bt) = w.coords(b);
                let close = |x: usize, y: usize| x.abs_diff(y) <= 1;
                if close(ai, bi) && close(aj, bj) && close(at, bt) {
                    set.insert((a.min(b) as u32, a.max(b) as u32));
                }
            }
        }
        set
    }

    #[test]
    fn lattice_topology_matches_brute_force_enumeration() {
        let mut frames = vec![
            flat_frame(3, 3, [1, 2, 3], 5000),
            flat_frame(3, 3, [1, 2, 3], 5000),
        ];
        frames[1].depth[4] = 0; // an invalid toxel in the middle of frame 1
        let w = build_window(&frames, &zero_flows(&frames)).unwrap();
        let got: BTreeSet<(u32, u32)> = toxel_pairs(&w).into_iter().collect();
        assert_eq!(got, naive_pairs(&w));

        // degree of the frame-0 center: 8 spatial + 9 temporal - 1 invalid
        let center = w.index(1, 1, 0) as u32;
        let deg = got.iter().filter(|&&(a, b)| a == center || b == center).count();
        assert_eq!(deg, 16);
    }

    #[test]
    fn full_interior_toxel_has_degree_26() {
        let frames: Vec<_> = (0..3).map(|_| flat_frame(3, 3, [9, 9, 9], 4000)).collect();
        let w = build_window(&frames, &zero_flows(&frames)).unwrap();
        let center = w.index(1, 1, 1) as u32;
        let deg = toxel_pairs(&w)
            .iter()
            .filter(|&&(a, b)| a == center || b == center)
            .count();
        assert_eq!(deg, 26);
    }

    #[test]
    fn no_duplicate_pairs_and_endpoints_ordered() {
        let frames: Vec<_> = (0..4).map(|_| flat_frame(6, 5, [3, 1, 4], 4000)).collect();
        let w = build_window(&frames, &zero_flows(&frames)).unwrap();
        let pairs = toxel_pairs(&w);
        let set: BTreeSet<_> = pairs.iter().copied().collect();
        assert_eq!(set.len(), pairs.len());
        assert!(pairs.iter().all(|&(a, b)| a < b));
    }

    #[test]
    fn long_range_flow_adds_edges_the_lattice_lacks() {
        let frames = vec![
            flat_frame(8, 3, [50, 50, 50], 5000),
            flat_frame(8, 3, [50, 50, 50], 5000),
        ];
        let mut flow2d = FlowField2D::zero(8, 3);
        for d in flow2d.di.iter_mut() {
            *d = 3.0;
        }
        let flows = vec![lift_flow(&frames[0], &frames[1], &flow2d).unwrap()];
        let w = build_window(&frames, &flows).unwrap();
        let pairs: BTreeSet<_> = toxel_pairs(&w).into_iter().collect();
        // (0,1,t=0) reaches (3,1,t=1), which |di|=3 puts outside the lattice
        let a = w.index(0, 1, 0) as u32;
        let b = w.index(3, 1, 1) as u32;
        assert!(pairs.contains(&(a, b)));
        // while zero-motion flow edges duplicate lattice pairs and are dropped
        let zero_w = build_window(&frames, &zero_flows(&frames)).unwrap();
        let zero_pairs: BTreeSet<_> = toxel_pairs(&zero_w).into_iter().collect();
        assert_eq!(zero_pairs, naive_pairs(&zero_w));
    }

    #[test]
    fn depth_weights_are_absolute_differences_in_meters() {
        // neighbors at 1.0m and 1.5m
        let mut frame = flat_frame(2, 1, [0, 0, 0], 5000);
        frame.depth[1] = 7500;
        let w = build_window(&[frame], &[]).unwrap();
        let edges = build_d_graph(&w);
        assert_eq!(edges.len(), 1);
        assert_eq!(edges[0].weight, 0.5);

        let uniform = flat_frame(2, 2, [0, 0, 0], 5000);
        let w = build_window(&[uniform], &[]).unwrap();
        assert!(build_d_graph(&w).iter().all(|e| e.weight == 0.0));
    }

    #[test]
    fn identical_frames_under_zero_flow_give_all_zero_weights() {
        let frames = vec![
            flat_frame(4, 4, [120, 30, 60], 6000),
            flat_frame(4, 4, [120, 30, 60], 6000),
        ];
        let w = build_window(&frames, &zero_flows(&frames)).unwrap();
        let pairs = toxel_pairs(&w);
        assert!(depth_edges(&w, &pairs).iter().all(|e| e.weight == 0.0));
        assert!(color_edges(&w, &pairs, None).iter().all(|e| e.weight == 0.0));
    }

    #[test]
    fn stage1_boundaries_make_color_edges_infinite() {
        let frame = flat_frame(4, 1, [7, 7, 7], 5000);
        let w = build_window(&[frame], &[]).unwrap();
        let pairs = toxel_pairs(&w);
        let stage1 = vec![1u32, 1, 2, 2];
        let edges = color_edges(&w, &pairs, Some(&stage1));
        for e in &edges {
            let crosses = stage1[e.a as usize] != stage1[e.b as usize];
            assert_eq!(e.weight.is_infinite(), crosses);
        }
        assert!(edges.iter().any(|e| e.weight.is_infinite()));
    }

    #[test]
    fn mismatched_flow_count_is_an_error() {
        let frames: Vec<_> = (0..3).map(|_| flat_frame(4, 4, [1, 1, 1], 900)).collect();
        assert!(build_window(&frames, &[]).is_err());
        let frames2 = vec![
            flat_frame(4, 4, [1, 1, 1], 900),
            flat_frame(5, 4, [1, 1, 1], 900),
        ];
        let flows = vec![lift_flow(
            &flat_frame(4, 4, [1, 1, 1], 900),
            &flat_frame(4, 4, [1, 1, 1], 900),
            &FlowField2D::zero(4, 4),
        )
        .unwrap()];
        assert!(build_window(&frames2, &flows).is_err());
    }
}
