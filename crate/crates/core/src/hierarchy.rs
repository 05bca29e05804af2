//! From an over-segmentation to an adjustable-granularity hierarchy.
//!
//! Each region is summarized by nine 1-D count histograms over fixed
//! ranges — L, a, b of color, X, Y, Z of position, U, V, W of scene flow —
//! plus size, centroid, mean flow, and bounding box. Adjacent regions are
//! linked into the region graph (S-graph) weighted by the same distance
//! h used for cross-window matching, a minimum spanning tree of that
//! graph is recorded merge-by-merge as a dendrogram, and cutting the
//! dendrogram after a fraction zeta of its merges yields a segmentation
//! at any granularity without re-running the per-toxel merge.

use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{Result, SegError};
use crate::graph_seg::{DisjointSet, Segmentation, ToxelWindow};
use crate::matching::{region_distance, MatchParams};
use crate::rgbd_io::Point3;

pub const LAB_BINS: usize = 20;
pub const XYZ_BINS: usize = 30;
pub const UVW_BINS: usize = 20;

/// Value ranges the histograms are binned over; values outside clamp to
/// the end bins so counts are conserved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramRanges {
    pub l: (f64, f64),
    pub ab: (f64, f64),
    pub xy: (f64, f64),
    pub z: (f64, f64),
    pub uvw: (f64, f64),
}

impl Default for HistogramRanges {
    /// Covers indoor depth-camera scenes at a few meters.
    fn default() -> Self {
        HistogramRanges {
            l: (0.0, 100.0),
            ab: (-110.0, 110.0),
            xy: (-4.0, 4.0),
            z: (0.0, 8.0),
            uvw: (-0.5, 0.5),
        }
    }
}

/// Histogram-and-moment summary of one region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeatures {
    /// Toxel count.
    pub size: u32,
    /// Toxels carrying scene flow; the UVW histograms sum to this.
    pub flow_count: u32,
    /// Mean 3D position, meters.
    pub centroid: Point3,
    /// Mean scene flow over the contributing toxels, meters per frame.
    pub mean_flow: [f64; 3],
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
    pub l: [u32; LAB_BINS],
    pub a: [u32; LAB_BINS],
    pub b: [u32; LAB_BINS],
    pub x: [u32; XYZ_BINS],
    pub y: [u32; XYZ_BINS],
    pub z: [u32; XYZ_BINS],
    pub u: [u32; UVW_BINS],
    pub v: [u32; UVW_BINS],
    pub w: [u32; UVW_BINS],
}

impl RegionFeatures {
    fn empty() -> Self {
        RegionFeatures {
            size: 0,
            flow_count: 0,
            centroid: Point3::default(),
            mean_flow: [0.0; 3],
            bbox_min: [f64::INFINITY; 3],
            bbox_max: [f64::NEG_INFINITY; 3],
            l: [0; LAB_BINS],
            a: [0; LAB_BINS],
            b: [0; LAB_BINS],
            x: [0; XYZ_BINS],
            y: [0; XYZ_BINS],
            z: [0; XYZ_BINS],
            u: [0; UVW_BINS],
            v: [0; UVW_BINS],
            w: [0; UVW_BINS],
        }
    }

    /// All nine histograms with each one's contributor count, in the
    /// fixed order L, a, b, X, Y, Z, U, V, W.
    pub fn histograms(&self) -> [(&[u32], u32); 9] {
        [
            (&self.l[..], self.size),
            (&self.a[..], self.size),
            (&self.b[..], self.size),
            (&self.x[..], self.size),
            (&self.y[..], self.size),
            (&self.z[..], self.size),
            (&self.u[..], self.flow_count),
            (&self.v[..], self.flow_count),
            (&self.w[..], self.flow_count),
        ]
    }
}

/// Bin of `value` in `nbins` equal parts of [lo, hi), clamped to the ends.
pub fn bin_of(value: f64, (lo, hi): (f64, f64), nbins: usize) -> usize {
    let t = ((value - lo) / (hi - lo) * nbins as f64).floor();
    (t as i64).clamp(0, nbins as i64 - 1) as usize
}

/// Summarizes every region of `seg`. Index r describes label r+1.
pub fn compute_features(
    w: &ToxelWindow,
    seg: &Segmentation,
    ranges: &HistogramRanges,
) -> Vec<RegionFeatures> {
    let mut feats = vec![RegionFeatures::empty(); seg.n_regions()];
    let mut pos_sums = vec![[0.0f64; 3]; seg.n_regions()];
    let mut flow_sums = vec![[0.0f64; 3]; seg.n_regions()];
    for (idx, &label) in seg.labels.iter().enumerate() {
        if label == 0 {
            continue;
        }
        let f = &mut feats[label as usize - 1];
        let lab = w.lab[idx];
        let p = w.pos[idx];
        f.size += 1;
        f.l[bin_of(lab.l as f64, ranges.l, LAB_BINS)] += 1;
        f.a[bin_of(lab.a as f64, ranges.ab, LAB_BINS)] += 1;
        f.b[bin_of(lab.b as f64, ranges.ab, LAB_BINS)] += 1;
        f.x[bin_of(p.x, ranges.xy, XYZ_BINS)] += 1;
        f.y[bin_of(p.y, ranges.xy, XYZ_BINS)] += 1;
        f.z[bin_of(p.z, ranges.z, XYZ_BINS)] += 1;
        let ps = &mut pos_sums[label as usize - 1];
        ps[0] += p.x;
        ps[1] += p.y;
        ps[2] += p.z;
        for axis in 0..3 {
            let c = [p.x, p.y, p.z][axis];
            f.bbox_min[axis] = f.bbox_min[axis].min(c);
            f.bbox_max[axis] = f.bbox_max[axis].max(c);
        }
        if w.flow_valid[idx] {
            let flow = w.flow[idx];
            f.flow_count += 1;
            f.u[bin_of(flow[0], ranges.uvw, UVW_BINS)] += 1;
            f.v[bin_of(flow[1], ranges.uvw, UVW_BINS)] += 1;
            f.w[bin_of(flow[2], ranges.uvw, UVW_BINS)] += 1;
            let fs = &mut flow_sums[label as usize - 1];
            fs[0] += flow[0];
            fs[1] += flow[1];
            fs[2] += flow[2];
        }
    }
    for (r, f) in feats.iter_mut().enumerate() {
        debug_assert!(f.size > 0);
        let n = f.size as f64;
        f.centroid = Point3::new(pos_sums[r][0] / n, pos_sums[r][1] / n, pos_sums[r][2] / n);
        if f.flow_count > 0 {
            let fc = f.flow_count as f64;
            f.mean_flow = [
                flow_sums[r][0] / fc,
                flow_sums[r][1] / fc,
                flow_sums[r][2] / fc,
            ];
        }
    }
    feats
}

/// Weighted edge of the region graph; `a < b` are 0-based region indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionEdge {
    pub a: u32,
    pub b: u32,
    pub weight: f64,
}

/// Links every pair of regions that touch anywhere in the lattice
/// 26-neighborhood. The weight is the matching distance h between the
/// two regions' features, evaluated without flow advection (both live in
/// the same window); the lower region index is the reference side of the
/// asymmetric centroid term.
pub fn build_s_graph(
    w: &ToxelWindow,
    seg: &Segmentation,
    feats: &[RegionFeatures],
    params: &MatchParams,
) -> Vec<RegionEdge> {
    let mut crossing: Vec<(u32, u32)> = Vec::new();
    crate::graph_seg::for_each_lattice_pair(w, |a, b| {
        let (la, lb) = (seg.labels[a as usize], seg.labels[b as usize]);
        if la != lb {
            crossing.push((la.min(lb) - 1, la.max(lb) - 1));
        }
    });
    crossing.sort_unstable();
    crossing.dedup();
    let same_window = MatchParams {
        advect_frames: 0.0,
        ..*params
    };
    crossing
        .into_iter()
        .map(|(a, b)| RegionEdge {
            a,
            b,
            weight: region_distance(&feats[a as usize], &feats[b as usize], &same_window).h,
        })
        .collect()
}

/// One dendrogram merge. Children are node ids: ids below `n_leaves`
/// are initial regions, id `n_leaves + m` is the node merge m created.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Merge-by-merge record of Kruskal's algorithm over the region graph.
/// A disconnected graph yields a forest: fewer than n_leaves - 1 merges.
#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
}

/// Runs Kruskal's algorithm, recording each accepted edge as a merge.
/// Edges are taken ascending by (weight, a, b).
pub fn kruskal_dendrogram(edges: &[RegionEdge], n_regions: usize) -> Dendrogram {
    let mut order: Vec<&RegionEdge> = edges.iter().collect();
    order.sort_by(|x, y| {
        x.weight
            .total_cmp(&y.weight)
            .then_with(|| (x.a, x.b).cmp(&(y.a, y.b)))
    });
    let mut ds = DisjointSet::new(n_regions);
    // dendrogram node currently representing each union-find root
    let mut node_of = (0..n_regions).collect::<Vec<usize>>();
    let mut merges = Vec::new();
    for e in order {
        let (ra, rb) = (ds.find(e.a), ds.find(e.b));
        if ra == rb {
            continue;
        }
        let (na, nb) = (node_of[ra as usize], node_of[rb as usize]);
        merges.push(Merge {
            a: na.min(nb),
            b: na.max(nb),
            weight: e.weight,
        });
        let keep = ds.union_roots(ra, rb);
        node_of[keep as usize] = n_regions + merges.len() - 1;
    }
    Dendrogram {
        n_leaves: n_regions,
        merges,
    }
}

/// A dendrogram cut: a relabeling of the leaf regions.
#[derive(Debug, Clone, PartialEq)]
pub struct CutResult {
    /// How many merges were applied.
    pub n_applied: usize,
    /// Output label (1-based, dense) per leaf region.
    pub leaf_labels: Vec<u32>,
    pub n_regions: usize,
}

/// Applies the first floor(zeta * total_merges) merges. zeta = 0 keeps
/// the input regions; zeta = 1 leaves one region per connected component
/// of the region graph. Output labels are ordered by smallest leaf index.
pub fn cut_dendrogram(d: &Dendrogram, zeta: f64) -> CutResult {
    assert!((0.0..=1.0).contains(&zeta), "zeta must lie in [0, 1]");
    let n_applied = (zeta * d.merges.len() as f64).floor() as usize;
    let total = d.n_leaves + d.merges.len();
    let mut ds = DisjointSet::new(total);
    for (m, merge) in d.merges.iter().take(n_applied).enumerate() {
        let node = d.n_leaves + m;
        let ra = ds.find(merge.a as u32);
        let rb = ds.find(merge.b as u32);
        let r = ds.union_roots(ra, rb);
        let rn = ds.find(node as u32);
        ds.union_roots(r, rn);
    }
    let mut dense = vec![0u32; total];
    let mut leaf_labels = vec![0u32; d.n_leaves];
    let mut next = 0u32;
    for (leaf, label) in leaf_labels.iter_mut().enumerate() {
        let root = ds.find(leaf as u32) as usize;
        if dense[root] == 0 {
            next += 1;
            dense[root] = next;
        }
        *label = dense[root];
    }
    CutResult {
        n_applied,
        leaf_labels,
        n_regions: next as usize,
    }
}

/// Relabels a segmentation through a cut and rebuilds its region table.
pub fn apply_cut(w: &ToxelWindow, seg: &Segmentation, cut: &CutResult) -> Segmentation {
    debug_assert_eq!(cut.leaf_labels.len(), seg.n_regions());
    let labels = seg
        .labels
        .iter()
        .map(|&l| if l == 0 { 0 } else { cut.leaf_labels[l as usize - 1] })
        .collect();
    Segmentation::from_labels(w, labels)
}

/// Re-aggregates leaf features under a cut: histograms, sizes, and flow
/// counts add; centroid and mean flow combine as weighted means; boxes
/// take the enclosing hull.
pub fn aggregate_features(feats: &[RegionFeatures], cut: &CutResult) -> Vec<RegionFeatures> {
    debug_assert_eq!(feats.len(), cut.leaf_labels.len());
    let mut out = vec![RegionFeatures::empty(); cut.n_regions];
    let mut pos_sums = vec![[0.0f64; 3]; cut.n_regions];
    let mut flow_sums = vec![[0.0f64; 3]; cut.n_regions];
    for (leaf, f) in feats.iter().enumerate() {
        let o = &mut out[cut.leaf_labels[leaf] as usize - 1];
        o.size += f.size;
        o.flow_count += f.flow_count;
        for (dst, src) in [
            (&mut o.l[..], &f.l[..]),
            (&mut o.a[..], &f.a[..]),
            (&mut o.b[..], &f.b[..]),
            (&mut o.x[..], &f.x[..]),
            (&mut o.y[..], &f.y[..]),
            (&mut o.z[..], &f.z[..]),
            (&mut o.u[..], &f.u[..]),
            (&mut o.v[..], &f.v[..]),
            (&mut o.w[..], &f.w[..]),
        ] {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        let r = cut.leaf_labels[leaf] as usize - 1;
        let n = f.size as f64;
        pos_sums[r][0] += f.centroid.x * n;
        pos_sums[r][1] += f.centroid.y * n;
        pos_sums[r][2] += f.centroid.z * n;
        let fc = f.flow_count as f64;
        for (axis, sum) in flow_sums[r].iter_mut().enumerate() {
            *sum += f.mean_flow[axis] * fc;
            o.bbox_min[axis] = o.bbox_min[axis].min(f.bbox_min[axis]);
            o.bbox_max[axis] = o.bbox_max[axis].max(f.bbox_max[axis]);
        }
    }
    for (r, o) in out.iter_mut().enumerate() {
        let n = o.size as f64;
        o.centroid = Point3::new(pos_sums[r][0] / n, pos_sums[r][1] / n, pos_sums[r][2] / n);
        if o.flow_count > 0 {
            let fc = o.flow_count as f64;
            o.mean_flow = [
                flow_sums[r][0] / fc,
                flow_sums[r][1] / fc,
                flow_sums[r][2] / fc,
            ];
        }
    }
    out
}

/// Writes the dendrogram as text: a `leaves <n>` line, then one
/// `merge <idx> <childA> <childB> <weight>` line per merge.
pub fn write_dendrogram<W: Write>(d: &Dendrogram, mut sink: W) -> std::io::Result<()> {
    writeln!(sink, "leaves {}", d.n_leaves)?;
    for (m, merge) in d.merges.iter().enumerate() {
        writeln!(sink, "merge {m} {} {} {}", merge.a, merge.b, merge.weight)?;
    }
    Ok(())
}

/// Parses the text form written by [`write_dendrogram`].
pub fn read_dendrogram<R: Read>(src: R) -> Result<Dendrogram> {
    let bad = |msg: String| SegError::Invalid(format!("dendrogram: {msg}"));
    let mut lines = BufReader::new(src).lines();
    let head = lines
        .next()
        .ok_or_else(|| bad("empty input".into()))?
        .map_err(|e| bad(e.to_string()))?;
    let n_leaves = head
        .strip_prefix("leaves ")
        .and_then(|s| s.trim().parse::<usize>().ok())
        .ok_or_else(|| bad(format!("bad header {head:?}")))?;
    let mut merges = Vec::new();
    for line in lines {
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parsed = (|| {
            if fields.len() != 5 || fields[0] != "merge" {
                return None;
            }
            let idx: usize = fields[1].parse().ok()?;
            if idx != merges.len() {
                return None;
            }
            let node_cap = n_leaves + idx;
            let a: usize = fields[2].parse().ok()?;
            let b: usize = fields[3].parse().ok()?;
            if a >= node_cap || b >= node_cap || a == b {
                return None;
            }
            Some(Merge {
                a,
                b,
                weight: fields[4].parse().ok()?,
            })
        })();
        merges.push(parsed.ok_or_else(|| bad(format!("bad line {line:?}")))?);
    }
    if merges.len() >= n_leaves.max(1) {
        return Err(bad("more merges than leaves allow".into()));
    }
    Ok(Dendrogram { n_leaves, merges })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_seg::{segment_multistage, MultistageParams};
    use crate::rgbd_io::CameraIntrinsics;
    use crate::test_util::{flat_frame, window_from};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bin_layout_matches_hand_binning() {
        assert_eq!(bin_of(50.0, (0.0, 100.0), LAB_BINS), 10);
        assert_eq!(bin_of(0.0, (0.0, 100.0), LAB_BINS), 0);
        assert_eq!(bin_of(100.0, (0.0, 100.0), LAB_BINS), 19); // clamps
        assert_eq!(bin_of(-5.0, (0.0, 100.0), LAB_BINS), 0);
        assert_eq!(bin_of(0.0, (-0.5, 0.5), UVW_BINS), 10);
        assert_eq!(bin_of(1.0, (0.0, 8.0), XYZ_BINS), 3); // 1m of depth
    }

    /// Window whose intrinsics put all positions in the positive octant,
    /// so small scenes do not straddle the X/Y bin boundary at zero.
    fn corner_window(frames: &[crate::rgbd_io::RgbdFrame]) -> ToxelWindow {
        let mut frames = frames.to_vec();
        for f in &mut frames {
            f.intrinsics = CameraIntrinsics {
                cx: 0.0,
                cy: 0.0,
                ..f.intrinsics
            };
        }
        window_from(&frames)
    }

    #[test]
    fn uniform_region_concentrates_every_histogram() {
        let frames: Vec<_> = (0..2).map(|_| flat_frame(10, 5, [121, 121, 121], 5000)).collect();
        let w = corner_window(&frames);
        let seg = segment_multistage(&w, &MultistageParams::default()).output;
        assert_eq!(seg.n_regions(), 1);
        let f = &compute_features(&w, &seg, &HistogramRanges::default())[0];
        assert_eq!(f.size, 100);
        assert_eq!(f.flow_count, 50); // second frame only
        for (hist, n) in f.histograms() {
            assert_eq!(hist.iter().sum::<u32>(), n);
            assert_eq!(hist.iter().filter(|&&c| c > 0).count(), 1);
        }
        // gray 121 has L just above 50, flow is zero, depth is 1m
        assert_eq!(f.l[10], 100);
        assert_eq!(f.u[10], 50);
        assert_eq!(f.v[10], 50);
        assert_eq!(f.w[10], 50);
        assert_eq!(f.z[3], 100);
    }

    #[test]
    fn flowless_window_has_empty_flow_histograms() {
        let w = window_from(&[flat_frame(4, 4, [50, 60, 70], 5000)]);
        let seg = segment_multistage(&w, &MultistageParams::default()).output;
        let f = &compute_features(&w, &seg, &HistogramRanges::default())[0];
        assert_eq!(f.flow_count, 0);
        assert_eq!(f.u.iter().sum::<u32>(), 0);
        assert_eq!(f.mean_flow, [0.0; 3]);
    }

    fn noisy_window() -> ToxelWindow {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let frames: Vec<_> = (0..3)
            .map(|_| {
                let mut f = flat_frame(12, 9, [0, 0, 0], 0);
                for px in 0..12 * 9 {
                    f.color[px] = [rng.gen(), rng.gen(), rng.gen()];
                    f.depth[px] = rng.gen_range(4000..9000);
                }
                f
            })
            .collect();
        window_from(&frames)
    }

    fn overseg(w: &ToxelWindow) -> Segmentation {
        segment_multistage(
            w,
            &MultistageParams {
                k_depth: 0.05,
                k_color: 15.0,
                min_size: 3,
            },
        )
        .output
    }

    #[test]
    fn aggregation_along_a_cut_matches_direct_recomputation() {
        let w = noisy_window();
        let seg = overseg(&w);
        assert!(seg.n_regions() > 4, "want several regions, got {}", seg.n_regions());
        let ranges = HistogramRanges::default();
        let feats = compute_features(&w, &seg, &ranges);
        let graph = build_s_graph(&w, &seg, &feats, &MatchParams::default());
        let dendro = kruskal_dendrogram(&graph, seg.n_regions());
        let cut = cut_dendrogram(&dendro, 0.5);
        let coarse = apply_cut(&w, &seg, &cut);
        assert_eq!(coarse.n_regions(), cut.n_regions);

        let direct = compute_features(&w, &coarse, &ranges);
        let summed = aggregate_features(&feats, &cut);
        assert_eq!(direct.len(), summed.len());
        for (d, s) in direct.iter().zip(&summed) {
            assert_eq!(d.size, s.size);
            assert_eq!(d.flow_count, s.flow_count);
            assert_eq!(d.histograms().map(|(h, _)| h.to_vec()), s.histograms().map(|(h, _)| h.to_vec()));
            for axis in 0..3 {
                assert!((d.bbox_min[axis] - s.bbox_min[axis]).abs() < 1e-12);
                assert!((d.bbox_max[axis] - s.bbox_max[axis]).abs() < 1e-12);
                assert!(
                    (d.mean_flow[axis] - s.mean_flow[axis]).abs() < 1e-9,
                    "axis {axis}: {} vs {}",
                    d.mean_flow[axis],
                    s.mean_flow[axis]
                );
            }
            assert!((d.centroid.x - s.centroid.x).abs() < 1e-9);
            assert!((d.centroid.y - s.centroid.y).abs() < 1e-9);
            assert!((d.centroid.z - s.centroid.z).abs() < 1e-9);
        }
    }

    #[test]
    fn checkerboard_quadrants_are_mutually_adjacent() {
        let w = window_from(&[flat_frame(4, 4, [40, 80, 120], 5000)]);
        // quadrant labels 1..=4
        let labels: Vec<u32> = (0..16)
            .map(|px| {
                let (i, j) = (px % 4, px / 4);
                1 + (i / 2) as u32 + 2 * (j / 2) as u32
            })
            .collect();
        let seg = Segmentation::from_labels(&w, labels);
        let feats = compute_features(&w, &seg, &HistogramRanges::default());
        let graph = build_s_graph(&w, &seg, &feats, &MatchParams::default());
        let pairs: Vec<(u32, u32)> = graph.iter().map(|e| (e.a, e.b)).collect();
        // diagonals touch at the center corner, making the adjacency complete
        assert_eq!(pairs, vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn identical_interleaved_regions_are_at_distance_zero() {
        let w = window_from(&[flat_frame(4, 1, [90, 90, 90], 5000)]);
        let seg = Segmentation::from_labels(&w, vec![1, 2, 2, 1]);
        let feats = compute_features(&w, &seg, &HistogramRanges::default());
        assert_eq!(feats[0].centroid, feats[1].centroid);
        let graph = build_s_graph(&w, &seg, &feats, &MatchParams::default());
        assert_eq!(graph.len(), 1);
        assert_eq!(graph[0].weight, 0.0);
    }

    #[test]
    fn nonadjacent_regions_get_no_edge() {
        let w = window_from(&[flat_frame(7, 1, [10, 10, 10], 5000)]);
        // region 2 is a full column barrier between 1 and 3
        let seg = Segmentation::from_labels(&w, vec![1, 1, 2, 2, 2, 3, 3]);
        let feats = compute_features(&w, &seg, &HistogramRanges::default());
        let graph = build_s_graph(&w, &seg, &feats, &MatchParams::default());
        let pairs: Vec<(u32, u32)> = graph.iter().map(|e| (e.a, e.b)).collect();
        assert_eq!(pairs, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn kruskal_traces_the_three_region_example() {
        let edges = vec![
            RegionEdge { a: 0, b: 1, weight: 1.0 },
            RegionEdge { a: 1, b: 2, weight: 2.0 },
            RegionEdge { a: 0, b: 2, weight: 3.0 },
        ];
        let d = kruskal_dendrogram(&edges, 3);
        assert_eq!(d.n_leaves, 3);
        assert_eq!(
            d.merges,
            vec![
                Merge { a: 0, b: 1, weight: 1.0 },
                Merge { a: 2, b: 3, weight: 2.0 },
            ]
        );
    }

    #[test]
    fn single_region_yields_an_empty_dendrogram() {
        let d = kruskal_dendrogram(&[], 1);
        assert!(d.merges.is_empty());
        let cut = cut_dendrogram(&d, 1.0);
        assert_eq!(cut.n_regions, 1);
        assert_eq!(cut.leaf_labels, vec![1]);
    }

    #[test]
    fn equal_weights_merge_in_region_id_order() {
        let mut edges = Vec::new();
        for a in 0..4u32 {
            for b in a + 1..4 {
                edges.push(RegionEdge { a, b, weight: 0.5 });
            }
        }
        let d = kruskal_dendrogram(&edges, 4);
        assert_eq!(
            d.merges,
            vec![
                Merge { a: 0, b: 1, weight: 0.5 },
                Merge { a: 2, b: 4, weight: 0.5 },
                Merge { a: 3, b: 5, weight: 0.5 },
            ]
        );
    }

    #[test]
    fn merge_weights_are_non_decreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.gen_range(2..20);
            let mut edges = Vec::new();
            for a in 0..n as u32 {
                for b in a + 1..n as u32 {
                    if rng.gen_bool(0.4) {
                        edges.push(RegionEdge {
                            a,
                            b,
                            weight: rng.gen_range(0.0..3.0),
                        });
                    }
                }
            }
            let d = kruskal_dendrogram(&edges, n);
            for pair in d.merges.windows(2) {
                assert!(pair[0].weight <= pair[1].weight);
            }
        }
    }

    #[test]
    fn ten_regions_at_zeta_065_apply_five_merges() {
        let edges: Vec<RegionEdge> = (0..9)
            .map(|i| RegionEdge {
                a: i,
                b: i + 1,
                weight: (i + 1) as f64,
            })
            .collect();
        let d = kruskal_dendrogram(&edges, 10);
        assert_eq!(d.merges.len(), 9);
        let cut = cut_dendrogram(&d, 0.65);
        assert_eq!(cut.n_applied, 5);
        assert_eq!(cut.n_regions, 5);
        // the five cheapest merges chain regions 0..=5 together
        assert_eq!(cut.leaf_labels, vec![1, 1, 1, 1, 1, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn cut_endpoints_keep_all_and_merge_all() {
        let edges = vec![
            RegionEdge { a: 0, b: 1, weight: 0.1 },
            RegionEdge { a: 2, b: 3, weight: 0.2 },
        ]; // two components
        let d = kruskal_dendrogram(&edges, 4);
        let zero = cut_dendrogram(&d, 0.0);
        assert_eq!(zero.leaf_labels, vec![1, 2, 3, 4]);
        let one = cut_dendrogram(&d, 1.0);
        assert_eq!(one.n_regions, 2);
        assert_eq!(one.leaf_labels, vec![1, 1, 2, 2]);
    }

    #[test]
    fn region_count_is_non_increasing_in_zeta() {
        let w = noisy_window();
        let seg = overseg(&w);
        let feats = compute_features(&w, &seg, &HistogramRanges::default());
        let graph = build_s_graph(&w, &seg, &feats, &MatchParams::default());
        let d = kruskal_dendrogram(&graph, seg.n_regions());
        let mut last = usize::MAX;
        for step in 0..=10 {
            let cut = cut_dendrogram(&d, step as f64 / 10.0);
            assert!(cut.n_regions <= last);
            last = cut.n_regions;
            // hierarchy property: output regions are unions of leaves
            let coarse = apply_cut(&w, &seg, &cut);
            for (idx, &l) in seg.labels.iter().enumerate() {
                if l > 0 {
                    assert_eq!(coarse.labels[idx], cut.leaf_labels[l as usize - 1]);
                }
            }
        }
    }

    #[test]
    fn dendrogram_text_round_trips() {
        let d = Dendrogram {
            n_leaves: 4,
            merges: vec![
                Merge { a: 1, b: 2, weight: 0.125 },
                Merge { a: 0, b: 4, weight: 0.30000000000000004 },
            ],
        };
        let mut buf = Vec::new();
        write_dendrogram(&d, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("leaves 4\nmerge 0 1 2 0.125\n"));
        let back = read_dendrogram(buf.as_slice()).unwrap();
        assert_eq!(back, d);
        assert!(read_dendrogram(&b"merge 0 1 2 0.5"[..]).is_err());
    }
}
