//! Region identity across windows.
//!
//! Two windows overlap in time, so a region usually reappears with
//! slightly different extent. Candidate pairs are scored by
//!
//! ```text
//! h = beta * dH + gamma * dd + epsilon * dN
//! ```
//!
//! where dH compares the nine normalized histograms by L1 distance, dd is
//! the city-block distance between the current centroid and the previous
//! centroid advected by its mean scene flow (normalized by the current
//! region's size), and dN is the absolute size difference. Each term also
//! has an admissibility gate; a pair failing any gate cannot match no
//! matter how small h is. Matching itself repeatedly fixes every pair
//! that is mutually best among the remaining admissible candidates.
//! Matched regions keep their global id, unmatched current regions get
//! fresh ids, and unmatched previous regions end their tracks.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::hierarchy::RegionFeatures;

#[derive(Debug, Clone, Copy)]
pub struct MatchParams {
    /// Weight of the histogram term.
    pub beta: f64,
    /// Weight of the centroid term.
    pub gamma: f64,
    /// Weight of the size term.
    pub epsilon: f64,
    /// Largest admissible histogram distance (the term maxes out at 18).
    pub hist_gate: f64,
    /// Largest admissible size-normalized centroid distance.
    pub centroid_gate: f64,
    /// Size gate: |dN| must not exceed this fraction of the larger size.
    pub size_gate_frac: f64,
    /// Frames by which the previous region advects along its mean flow
    /// before comparison; the window stride when matching across windows,
    /// zero when weighing regions of one window against each other.
    pub advect_frames: f64,
    /// Drop pairs whose advected bounding boxes are disjoint before
    /// scoring. Purely an optimization for crowded windows; the gates
    /// already reject such pairs, so leave it off unless profiling says
    /// otherwise.
    pub bbox_filter: bool,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams {
            beta: 1.0,
            gamma: 10.0,
            epsilon: 0.001,
            hist_gate: 9.0,
            centroid_gate: 0.05,
            size_gate_frac: 0.5,
            advect_frames: 4.0,
            bbox_filter: false,
        }
    }
}

/// L1 distance summed over the nine normalized histograms. Each
/// histogram is divided by its own contributor count; a histogram with
/// no contributors counts as the zero vector.
pub fn histogram_distance(r: &RegionFeatures, s: &RegionFeatures) -> f64 {
    let mut total = 0.0;
    for ((rh, rn), (sh, sn)) in r.histograms().into_iter().zip(s.histograms()) {
        debug_assert_eq!(rh.len(), sh.len());
        let (rn, sn) = (rn as f64, sn as f64);
        for (&rc, &sc) in rh.iter().zip(sh) {
            let a = if rn > 0.0 { rc as f64 / rn } else { 0.0 };
            let b = if sn > 0.0 { sc as f64 / sn } else { 0.0 };
            total += (a - b).abs();
        }
    }
    total
}

/// City-block centroid distance, with `s` advected by its mean flow for
/// `advect_frames` frames, normalized by r's size.
pub fn centroid_distance(r: &RegionFeatures, s: &RegionFeatures, advect_frames: f64) -> f64 {
    let sx = s.centroid.x + s.mean_flow[0] * advect_frames;
    let sy = s.centroid.y + s.mean_flow[1] * advect_frames;
    let sz = s.centroid.z + s.mean_flow[2] * advect_frames;
    ((r.centroid.x - sx).abs() + (r.centroid.y - sy).abs() + (r.centroid.z - sz).abs())
        / r.size as f64
}

/// Absolute size difference in toxels.
pub fn size_distance(r: &RegionFeatures, s: &RegionFeatures) -> f64 {
    (f64::from(r.size) - f64::from(s.size)).abs()
}

/// The three terms of one comparison, their weighted sum, and whether
/// every gate passed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionDistance {
    pub hist: f64,
    pub centroid: f64,
    pub size: f64,
    pub h: f64,
    pub admissible: bool,
}

fn advected_boxes_overlap(r: &RegionFeatures, s: &RegionFeatures, advect_frames: f64) -> bool {
    (0..3).all(|axis| {
        let shift = s.mean_flow[axis] * advect_frames;
        r.bbox_min[axis] <= s.bbox_max[axis] + shift && s.bbox_min[axis] + shift <= r.bbox_max[axis]
    })
}

/// Scores current-window region `r` against previous-window region `s`.
pub fn region_distance(r: &RegionFeatures, s: &RegionFeatures, p: &MatchParams) -> RegionDistance {
    let hist = histogram_distance(r, s);
    let centroid = centroid_distance(r, s, p.advect_frames);
    let size = size_distance(r, s);
    let admissible = hist <= p.hist_gate
        && centroid <= p.centroid_gate
        && size <= p.size_gate_frac * f64::from(r.size.max(s.size))
        && (!p.bbox_filter || advected_boxes_overlap(r, s, p.advect_frames));
    RegionDistance {
        hist,
        centroid,
        size,
        h: p.beta * hist + p.gamma * centroid + p.epsilon * size,
        admissible,
    }
}

/// Iterated mutual-best matching over an admissible-score matrix
/// (`scores[c * n_prev + s]`, None = inadmissible). Returns (prev, cur)
/// pairs sorted by prev index. Ties prefer the smaller index.
fn mutual_best(n_prev: usize, n_cur: usize, scores: &[Option<f64>]) -> Vec<(usize, usize)> {
    let mut prev_free = vec![true; n_prev];
    let mut cur_free = vec![true; n_cur];
    let mut pairs = Vec::new();
    loop {
        let best_for_cur: Vec<Option<usize>> = (0..n_cur)
            .map(|c| {
                if !cur_free[c] {
                    return None;
                }
                (0..n_prev)
                    .filter(|&s| prev_free[s])
                    .filter_map(|s| scores[c * n_prev + s].map(|h| (h, s)))
                    .min_by(|x, y| x.0.total_cmp(&y.0).then_with(|| x.1.cmp(&y.1)))
                    .map(|(_, s)| s)
            })
            .collect();
        let best_for_prev: Vec<Option<usize>> = (0..n_prev)
            .map(|s| {
                if !prev_free[s] {
                    return None;
                }
                (0..n_cur)
                    .filter(|&c| cur_free[c])
                    .filter_map(|c| scores[c * n_prev + s].map(|h| (h, c)))
                    .min_by(|x, y| x.0.total_cmp(&y.0).then_with(|| x.1.cmp(&y.1)))
                    .map(|(_, c)| c)
            })
            .collect();
        let round: Vec<(usize, usize)> = (0..n_cur)
            .filter_map(|c| {
                let s = best_for_cur[c]?;
                (best_for_prev[s] == Some(c)).then_some((s, c))
            })
            .collect();
        if round.is_empty() {
            break;
        }
        for &(s, c) in &round {
            prev_free[s] = false;
            cur_free[c] = false;
        }
        pairs.extend(round);
    }
    pairs.sort_unstable();
    pairs
}

/// Matches the regions of the current window against the previous
/// window's. Returns (prev_index, cur_index) pairs, sorted by prev
/// index; every index appears at most once.
pub fn match_regions(
    prev: &[RegionFeatures],
    cur: &[RegionFeatures],
    p: &MatchParams,
) -> Vec<(usize, usize)> {
    let scores: Vec<Option<f64>> = (0..cur.len() * prev.len().max(1))
        .into_par_iter()
        .map(|flat| {
            if prev.is_empty() {
                return None;
            }
            let (c, s) = (flat / prev.len(), flat % prev.len());
            let d = region_distance(&cur[c], &prev[s], p);
            d.admissible.then_some(d.h)
        })
        .collect();
    mutual_best(prev.len(), cur.len(), &scores)
}

/// One tracked region.
#[derive(Debug, Clone)]
pub struct Track {
    pub features: RegionFeatures,
    pub last_window: usize,
}

/// Global region identities across the whole run. Ids start at 1 and are
/// never reused; id 0 is reserved for invalid toxels in label maps.
#[derive(Debug, Clone)]
pub struct TrackState {
    next_global_id: u64,
    pub tracks: BTreeMap<u64, Track>,
}

impl Default for TrackState {
    fn default() -> Self {
        Self::new()
    }
}

impl TrackState {
    pub fn new() -> Self {
        TrackState {
            next_global_id: 1,
            tracks: BTreeMap::new(),
        }
    }

    pub fn fresh_id(&mut self) -> u64 {
        let id = self.next_global_id;
        self.next_global_id += 1;
        id
    }

    /// Assigns a global id to every current region: matched regions
    /// inherit the previous region's id, the rest get fresh ids in
    /// region-index order. Tracks of unmatched previous regions end.
    pub fn match_windows(
        &mut self,
        prev: Option<(&[RegionFeatures], &[u64])>,
        cur: &[RegionFeatures],
        p: &MatchParams,
        window_index: usize,
    ) -> Vec<u64> {
        let mut ids = vec![0u64; cur.len()];
        if let Some((prev_feats, prev_ids)) = prev {
            debug_assert_eq!(prev_feats.len(), prev_ids.len());
            let mut prev_matched = vec![false; prev_feats.len()];
            for (s, c) in match_regions(prev_feats, cur, p) {
                ids[c] = prev_ids[s];
                prev_matched[s] = true;
            }
            for (s, &matched) in prev_matched.iter().enumerate() {
                if !matched {
                    self.tracks.remove(&prev_ids[s]);
                }
            }
        }
        for (c, id) in ids.iter_mut().enumerate() {
            if *id == 0 {
                *id = self.fresh_id();
            }
            self.tracks.insert(
                *id,
                Track {
                    features: cur[c].clone(),
                    last_window: window_index,
                },
            );
        }
        ids
    }
}
