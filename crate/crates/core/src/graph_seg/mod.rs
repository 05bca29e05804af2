//! Graph-based segmentation of toxel windows.
//!
//! Two entry points produce a [`Segmentation`]:
//!
//! * [`segment_multistage`] first partitions on depth alone, then
//!   partitions on color inside each depth region (edges across depth
//!   boundaries are infinite in the color pass, so the final regions
//!   refine the depth regions exactly).
//! * [`segment_linear_baseline`] is the single-pass alternative with edge
//!   weight `(1-alpha) * dLab + alpha * dDepth`, the knob the multistage
//!   scheme removes.
//!
//! Both run the same greedy merge ([`fh::fh_segment`]) over the same
//! lattice-plus-flow topology ([`toxel_pairs`]).

pub mod fh;
pub mod reference;
mod window;

pub use fh::{fh_segment, DisjointSet, Edge, FhResult};
pub use window::{
    build_d_graph, build_window, color_edges, depth_edges, for_each_lattice_pair, toxel_pairs,
    ToxelWindow,
};

use rayon::prelude::*;

use crate::rgbd_io::Point3;

/// Aggregate facts about one region of a [`Segmentation`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionInfo {
    /// Toxel count.
    pub size: u32,
    /// Mean 3D position in meters.
    pub centroid: Point3,
    /// First frame (inclusive) in which the region appears.
    pub frame_min: usize,
    /// Last frame (inclusive).
    pub frame_max: usize,
}

/// A labeling of a toxel window. Valid toxels carry labels 1..=n_regions,
/// invalid toxels carry 0; `regions[r]` describes label r+1.
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub labels: Vec<u32>,
    pub regions: Vec<RegionInfo>,
}

impl Segmentation {
    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    /// Builds the region table for a dense labeling (1..=n on valid
    /// toxels, 0 exactly on invalid ones).
    pub fn from_labels(w: &ToxelWindow, labels: Vec<u32>) -> Segmentation {
        debug_assert_eq!(labels.len(), w.n_toxels());
        let n_regions = labels.iter().copied().max().unwrap_or(0) as usize;
        let mut regions = vec![
            RegionInfo {
                size: 0,
                centroid: Point3::default(),
                frame_min: usize::MAX,
                frame_max: 0,
            };
            n_regions
        ];
        let mut sums = vec![[0.0f64; 3]; n_regions];
        for (idx, &label) in labels.iter().enumerate() {
            assert_eq!(label > 0, w.valid[idx], "labels must cover exactly the valid toxels");
            if label == 0 {
                continue;
            }
            let r = &mut regions[label as usize - 1];
            let s = &mut sums[label as usize - 1];
            let p = w.pos[idx];
            r.size += 1;
            s[0] += p.x;
            s[1] += p.y;
            s[2] += p.z;
            let t = w.frame_of(idx);
            r.frame_min = r.frame_min.min(t);
            r.frame_max = r.frame_max.max(t);
        }
        for (r, s) in regions.iter_mut().zip(&sums) {
            assert!(r.size > 0, "every region label must be used");
            let n = r.size as f64;
            r.centroid = Point3::new(s[0] / n, s[1] / n, s[2] / n);
        }
        Segmentation { labels, regions }
    }
}

/// Renumbers merge labels densely over the valid toxels, zeroing the
/// invalid ones. Label order follows first occurrence.
fn compact_valid(fh_labels: &[u32], valid: &[bool]) -> Vec<u32> {
    let max = fh_labels.iter().copied().max().unwrap_or(0) as usize;
    let mut map = vec![0u32; max + 1];
    let mut next = 0u32;
    let mut out = vec![0u32; fh_labels.len()];
    for (idx, &l) in fh_labels.iter().enumerate() {
        if valid[idx] {
            let slot = &mut map[l as usize];
            if *slot == 0 {
                next += 1;
                *slot = next;
            }
            out[idx] = *slot;
        }
    }
    out
}

/// True when every `fine` region lies inside a single `coarse` region.
pub fn refines(fine: &Segmentation, coarse: &Segmentation) -> bool {
    let mut parent = vec![0u32; fine.regions.len() + 1];
    for (idx, &f) in fine.labels.iter().enumerate() {
        if f == 0 {
            continue;
        }
        let c = coarse.labels[idx];
        let slot = &mut parent[f as usize];
        if *slot == 0 {
            *slot = c;
        } else if *slot != c {
            return false;
        }
    }
    true
}

#[derive(Debug, Clone, Copy)]
pub struct MultistageParams {
    /// Merge scale of the depth pass, meters domain.
    pub k_depth: f32,
    /// Merge scale of the color pass, Lab domain.
    pub k_color: f32,
    /// Regions smaller than this are absorbed after each pass.
    pub min_size: u32,
}

impl Default for MultistageParams {
    /// Deliberately over-segmenting defaults; the hierarchy built on top
    /// is what coarsens the result.
    fn default() -> Self {
        MultistageParams {
            k_depth: 0.5,
            k_color: 300.0,
            min_size: 50,
        }
    }
}

/// Both stages of [`segment_multistage`]; `output` refines `depth`.
#[derive(Debug, Clone)]
pub struct MultistageResult {
    pub depth: Segmentation,
    pub output: Segmentation,
}

/// Depth-first two-stage segmentation. Stage 1 merges on |depth
/// difference| with `k_depth`; stage 2 merges on Lab distance with
/// `k_color`, with edges across stage-1 boundaries set to infinity so
/// color can only subdivide depth regions, never bridge them.
pub fn segment_multistage(w: &ToxelWindow, params: &MultistageParams) -> MultistageResult {
    assert!(
        params.k_depth > 0.0 && params.k_color > 0.0,
        "merge scales must be positive"
    );
    let pairs = toxel_pairs(w);
    let stage1 = fh_segment(
        w.n_toxels(),
        depth_edges(w, &pairs),
        params.k_depth,
        params.min_size,
    );
    let depth = Segmentation::from_labels(w, compact_valid(&stage1.labels, &w.valid));
    let stage2 = fh_segment(
        w.n_toxels(),
        color_edges(w, &pairs, Some(&stage1.labels)),
        params.k_color,
        params.min_size,
    );
    let output = Segmentation::from_labels(w, compact_valid(&stage2.labels, &w.valid));
    debug_assert!(refines(&output, &depth));
    MultistageResult { depth, output }
}

#[derive(Debug, Clone, Copy)]
pub struct BaselineParams {
    /// Mixing weight: 0 is pure color, 1 is pure depth.
    pub alpha: f32,
    pub k: f32,
    pub min_size: u32,
    /// Multiplier making meters commensurate with Lab units; the default
    /// 100 values 1 cm of depth like 1 unit of Lab distance.
    pub depth_weight_scale: f32,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams {
            alpha: 0.5,
            k: 300.0,
            min_size: 50,
            depth_weight_scale: 100.0,
        }
    }
}

/// Single-pass segmentation on the blended weight
/// `(1-alpha) * dLab + alpha * dDepth * depth_weight_scale`.
pub fn segment_linear_baseline(w: &ToxelWindow, params: &BaselineParams) -> Segmentation {
    assert!(
        (0.0..=1.0).contains(&params.alpha),
        "alpha must lie in [0, 1]"
    );
    assert!(params.k > 0.0, "merge scale must be positive");
    let pairs = toxel_pairs(w);
    let edges: Vec<Edge> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let dc = w.lab[a as usize].distance(&w.lab[b as usize]);
            let dd = (w.pos[a as usize].z - w.pos[b as usize].z).abs() as f32
                * params.depth_weight_scale;
            Edge {
                a,
                b,
                weight: (1.0 - params.alpha) * dc + params.alpha * dd,
            }
        })
        .collect();
    let r = fh_segment(w.n_toxels(), edges, params.k, params.min_size);
    Segmentation::from_labels(w, compact_valid(&r.labels, &w.valid))
}
