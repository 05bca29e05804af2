//! The streaming engine and its configuration.
//!
//! Frames are pushed one at a time; the engine keeps only the frames and
//! flows a future window can still need, so memory stays bounded no
//! matter how long the sequence runs. Windows of `window` frames advance
//! by `window - overlap`; each window is segmented, organised into a
//! dendrogram, cut, and matched against the previous window so regions
//! keep their global ids. Overlap frames belong to the earlier window:
//! the first window emits all its frames, every later one only the
//! frames no earlier window emitted. A short tail at the end of the
//! input is handled by one extra window anchored at the last frame.
//!
//! Per window the engine can hand back a [`WindowState`] holding the
//! over-segmentation, its region features, and the dendrogram. That is
//! everything needed to re-cut at a different zeta and replay the
//! matching, so [`recut_states`] reproduces a from-scratch run at the
//! new zeta without touching the video again.

use std::collections::{BTreeSet, VecDeque};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Result, SegError};
use crate::eval::explained_variation;
use crate::graph_seg::{
    build_window, segment_linear_baseline, segment_multistage, BaselineParams, MultistageParams,
};
use crate::hierarchy::{
    aggregate_features, apply_cut, build_s_graph, compute_features, cut_dendrogram,
    kruskal_dendrogram, write_dendrogram, Dendrogram, HistogramRanges, Merge, RegionFeatures,
    LAB_BINS, UVW_BINS, XYZ_BINS,
};
use crate::matching::{match_regions, region_distance, MatchParams, TrackState};
use crate::rgbd_io::{image_io, lab_to_srgb, LabPixel, Point3, RgbdFrame};
use crate::scene_flow::{lift_flow, BlockMatchingFlow, FlowEstimator, SceneFlowField};
use crate::util::splitmix64;

/// Which segmenter fills the windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegMethod {
    /// Depth stage then color stage.
    Multistage,
    /// Single pass on the alpha-blended weight.
    Baseline,
}

/// Everything a run needs. Built from defaults, then a key=value config
/// file, then command line overrides, in that order.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Frames per window.
    pub window: usize,
    /// Frames shared with the previous window; used for matching only.
    pub overlap: usize,
    pub k_depth: f32,
    pub k_color: f32,
    pub min_size: u32,
    /// Dendrogram cut fraction.
    pub zeta: f64,
    /// Baseline mixing weight.
    pub alpha: f32,
    pub k_baseline: f32,
    pub depth_weight_scale: f32,
    /// Matching weights and gates. `advect_frames` is ignored here: the
    /// engine advects by the actual frame gap between matched windows.
    pub matching: MatchParams,
    pub ranges: HistogramRanges,
    pub flow: BlockMatchingFlow,
    pub out_dir: PathBuf,
    /// Write colorized renders next to the label maps.
    pub render: bool,
    /// Write per-window dendrograms and re-cut state.
    pub save_state: bool,
    /// Treat depths beyond this as invalid when loading.
    pub max_depth_m: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window: 8,
            overlap: 4,
            k_depth: 0.5,
            k_color: 300.0,
            min_size: 50,
            zeta: 0.65,
            alpha: 0.5,
            k_baseline: 300.0,
            depth_weight_scale: 100.0,
            matching: MatchParams::default(),
            ranges: HistogramRanges::default(),
            flow: BlockMatchingFlow::default(),
            out_dir: PathBuf::from("out"),
            render: true,
            save_state: false,
            max_depth_m: None,
        }
    }
}

fn bad_config(msg: String) -> SegError {
    SegError::Config(msg)
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(bad_config(m));
        if !(self.overlap > 0 && self.overlap < self.window) {
            return err(format!(
                "overlap {} must satisfy 0 < overlap < window {}",
                self.overlap, self.window
            ));
        }
        if !(0.0..=1.0).contains(&self.zeta) {
            return err(format!("zeta {} outside [0, 1]", self.zeta));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return err(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !(self.k_depth > 0.0 && self.k_color > 0.0 && self.k_baseline > 0.0) {
            return err("merge scales must be positive".into());
        }
        if self.flow.patch_radius == 0 || self.flow.levels == 0 || self.flow.search_radius <= 0 {
            return err("flow estimator parameters must be positive".into());
        }
        for (name, (lo, hi)) in [
            ("range_l", self.ranges.l),
            ("range_ab", self.ranges.ab),
            ("range_xy", self.ranges.xy),
            ("range_z", self.ranges.z),
            ("range_uvw", self.ranges.uvw),
        ] {
            if lo >= hi || lo.is_nan() || hi.is_nan() {
                return err(format!("{name}: {lo} is not below {hi}"));
            }
        }
        Ok(())
    }

    /// Applies one `key=value` setting; the same keys work in the config
    /// file and as command line flags.
    pub fn apply_key(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| bad_config(format!("{key}: cannot parse {value:?}")))
        }
        fn parse_range(key: &str, value: &str) -> Result<(f64, f64)> {
            let (lo, hi) = value
                .split_once(':')
                .ok_or_else(|| bad_config(format!("{key}: expected lo:hi, got {value:?}")))?;
            Ok((parse(key, lo.trim())?, parse(key, hi.trim())?))
        }
        match key {
            "window" => self.window = parse(key, value)?,
            "overlap" => self.overlap = parse(key, value)?,
            "k_depth" => self.k_depth = parse(key, value)?,
            "k_color" => self.k_color = parse(key, value)?,
            "min_size" => self.min_size = parse(key, value)?,
            "zeta" => self.zeta = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "k_baseline" => self.k_baseline = parse(key, value)?,
            "depth_weight_scale" => self.depth_weight_scale = parse(key, value)?,
            "beta" => self.matching.beta = parse(key, value)?,
            "gamma" => self.matching.gamma = parse(key, value)?,
            "epsilon" => self.matching.epsilon = parse(key, value)?,
            "hist_gate" => self.matching.hist_gate = parse(key, value)?,
            "centroid_gate" => self.matching.centroid_gate = parse(key, value)?,
            "size_gate_frac" => self.matching.size_gate_frac = parse(key, value)?,
            "bbox_filter" => self.matching.bbox_filter = parse(key, value)?,
            "range_l" => self.ranges.l = parse_range(key, value)?,
            "range_ab" => self.ranges.ab = parse_range(key, value)?,
            "range_xy" => self.ranges.xy = parse_range(key, value)?,
            "range_z" => self.ranges.z = parse_range(key, value)?,
            "range_uvw" => self.ranges.uvw = parse_range(key, value)?,
            "patch_radius" => self.flow.patch_radius = parse(key, value)?,
            "search_radius" => self.flow.search_radius = parse(key, value)?,
            "levels" => self.flow.levels = parse(key, value)?,
            "flat_variance" => self.flow.flat_variance = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "render" => self.render = parse(key, value)?,
            "save_state" => self.save_state = parse(key, value)?,
            "max_depth_m" => {
                self.max_depth_m = if value.eq_ignore_ascii_case("none") {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            _ => return Err(bad_config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses a flat key=value config text on top of `self`. `#` starts
    /// a comment, blank lines are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad_config(format!("line {}: expected key=value", lineno + 1)))?;
            self.apply_key(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SegError::io(path, e))?;
        let mut config = PipelineConfig::default();
        config.apply_text(&text)?;
        Ok(config)
    }

    fn stride(&self) -> usize {
        self.window - self.overlap
    }
}

/// One output frame: global ids per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct EmittedFrame {
    pub frame_index: usize,
    pub window_index: usize,
    pub width: usize,
    pub height: usize,
    /// Row-major global ids, 0 where depth was invalid.
    pub labels: Vec<u64>,
    /// Explained variation of the producing window; None when replayed
    /// from saved state (the colors are gone by then).
    pub window_ev: Option<f64>,
}

/// Everything needed to re-cut one window later.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowState {
    pub window_index: usize,
    pub start_frame: usize,
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    /// First frame this window emitted; it owns frames from here to the
    /// end of the window.
    pub emit_from: usize,
    /// Over-segmentation labels per toxel, 0 invalid.
    pub overseg_labels: Vec<u32>,
    /// Features of the over-segmentation regions.
    pub features: Vec<RegionFeatures>,
    pub dendrogram: Dendrogram,
}

/// What one engine step produced.
#[derive(Debug, Default)]
pub struct StepOutput {
    pub frames: Vec<EmittedFrame>,
    /// Present only when the config asks for saved state.
    pub states: Vec<WindowState>,
}

struct PrevWindow {
    features: Vec<RegionFeatures>,
    ids: Vec<u64>,
    start: usize,
}

/// Push-based streaming segmenter. Feed frames with [`push`], collect
/// [`EmittedFrame`]s as they come, and call [`finish`] for the tail.
///
/// [`push`]: StreamEngine::push
/// [`finish`]: StreamEngine::finish
pub struct StreamEngine {
    config: PipelineConfig,
    method: SegMethod,
    frames: VecDeque<RgbdFrame>,
    /// flows[i] connects buffered frame i to frame i+1.
    flows: VecDeque<SceneFlowField>,
    /// Global index of frames[0].
    buffer_start: usize,
    /// Global start of the next stride-aligned window.
    next_start: usize,
    /// Frames below this global index have been emitted.
    emitted_through: usize,
    pushed: usize,
    window_count: usize,
    prev: Option<PrevWindow>,
    tracks: TrackState,
}

impl StreamEngine {
    pub fn new(config: PipelineConfig, method: SegMethod) -> Result<Self> {
        config.validate()?;
        Ok(StreamEngine {
            config,
            method,
            frames: VecDeque::new(),
            flows: VecDeque::new(),
            buffer_start: 0,
            next_start: 0,
            emitted_through: 0,
            pushed: 0,
            window_count: 0,
            prev: None,
            tracks: TrackState::new(),
        })
    }

    pub fn windows_processed(&self) -> usize {
        self.window_count
    }

    /// Feeds the next frame; returns whatever windows it completed.
    pub fn push(&mut self, frame: RgbdFrame) -> Result<StepOutput> {
        if let Some(last) = self.frames.back() {
            if (last.width, last.height) != (frame.width, frame.height) {
                return Err(SegError::Dimension(format!(
                    "frame {}: {}x{} does not match the stream's {}x{}",
                    self.pushed, frame.width, frame.height, last.width, last.height
                )));
            }
            let flow2d = self.config.flow.estimate(last, &frame)?;
            self.flows.push_back(lift_flow(last, &frame, &flow2d)?);
        }
        self.frames.push_back(frame);
        self.pushed += 1;
        let mut out = StepOutput::default();
        while self.next_start + self.config.window <= self.pushed {
            let start = self.next_start;
            let window = self.config.window;
            self.process_window(start, window, &mut out)?;
            self.next_start += self.config.stride();
        }
        self.prune();
        Ok(out)
    }

    /// Emits the tail, if any, through one final window anchored at the
    /// last frame (shorter than `window` only when the whole input is).
    pub fn finish(mut self) -> Result<StepOutput> {
        let mut out = StepOutput::default();
        if self.pushed > self.emitted_through {
            let len = self.config.window.min(self.pushed);
            let start = self.pushed - len;
            self.process_window(start, len, &mut out)?;
        }
        Ok(out)
    }

    /// Drops buffered frames nothing can need anymore: every future
    /// window starts at `next_start` or later, except a final catch-up
    /// window, which can reach back `window` frames before the end.
    fn prune(&mut self) {
        let keep_from = self
            .next_start
            .min(self.pushed.saturating_sub(self.config.window));
        while self.buffer_start < keep_from {
            self.frames.pop_front();
            self.flows.pop_front();
            self.buffer_start += 1;
        }
    }

    fn process_window(&mut self, start: usize, len: usize, out: &mut StepOutput) -> Result<()> {
        debug_assert!(start >= self.buffer_start && start + len <= self.pushed);
        let offset = start - self.buffer_start;
        self.frames.make_contiguous();
        self.flows.make_contiguous();
        let frames = &self.frames.as_slices().0[offset..offset + len];
        let flows = &self.flows.as_slices().0[offset..offset + len - 1];
        let w = build_window(frames, flows)?;

        let overseg = match self.method {
            SegMethod::Multistage => {
                segment_multistage(
                    &w,
                    &MultistageParams {
                        k_depth: self.config.k_depth,
                        k_color: self.config.k_color,
                        min_size: self.config.min_size,
                    },
                )
                .output
            }
            SegMethod::Baseline => segment_linear_baseline(
                &w,
                &BaselineParams {
                    alpha: self.config.alpha,
                    k: self.config.k_baseline,
                    min_size: self.config.min_size,
                    depth_weight_scale: self.config.depth_weight_scale,
                },
            ),
        };
        let features = compute_features(&w, &overseg, &self.config.ranges);
        let edges = build_s_graph(&w, &overseg, &features, &self.config.matching);
        let dendrogram = kruskal_dendrogram(&edges, features.len());
        let cut = cut_dendrogram(&dendrogram, self.config.zeta);
        let cut_seg = apply_cut(&w, &overseg, &cut);
        let aggregated = aggregate_features(&features, &cut);

        let advect = self
            .prev
            .as_ref()
            .map_or(0.0, |p| (start - p.start) as f64);
        let params = MatchParams {
            advect_frames: advect,
            ..self.config.matching
        };
        let ids = self.tracks.match_windows(
            self.prev
                .as_ref()
                .map(|p| (p.features.as_slice(), p.ids.as_slice())),
            &aggregated,
            &params,
            self.window_count,
        );

        let ev = explained_variation(&w, &cut_seg);
        let emit_from = self.emitted_through.max(start);
        let area = w.width * w.height;
        for frame_index in emit_from..start + len {
            let t = frame_index - start;
            let labels = cut_seg.labels[t * area..(t + 1) * area]
                .iter()
                .map(|&l| if l == 0 { 0 } else { ids[l as usize - 1] })
                .collect();
            out.frames.push(EmittedFrame {
                frame_index,
                window_index: self.window_count,
                width: w.width,
                height: w.height,
                labels,
                window_ev: Some(ev),
            });
        }
        if self.config.save_state {
            out.states.push(WindowState {
                window_index: self.window_count,
                start_frame: start,
                width: w.width,
                height: w.height,
                n_frames: len,
                emit_from,
                overseg_labels: overseg.labels.clone(),
                features: features.clone(),
                dendrogram: dendrogram.clone(),
            });
        }
        self.emitted_through = start + len;
        self.prev = Some(PrevWindow {
            features: aggregated,
            ids,
            start,
        });
        self.window_count += 1;
        Ok(())
    }
}

/// Re-cuts saved windows at a new zeta and replays the matching. The
/// result is exactly what a from-scratch run at that zeta would emit,
/// because the over-segmentation and dendrograms are cut-independent.
pub fn recut_states(
    states: &[WindowState],
    zeta: f64,
    matching: &MatchParams,
) -> Result<Vec<EmittedFrame>> {
    if states.is_empty() {
        return Err(SegError::Invalid("no saved window state".into()));
    }
    if !(0.0..=1.0).contains(&zeta) {
        return Err(bad_config(format!("zeta {zeta} outside [0, 1]")));
    }
    for (i, pair) in states.windows(2).enumerate() {
        if pair[1].window_index <= pair[0].window_index || pair[1].start_frame <= pair[0].start_frame
        {
            return Err(SegError::Invalid(format!(
                "window states out of order at position {}",
                i + 1
            )));
        }
    }
    let mut tracks = TrackState::new();
    let mut prev: Option<PrevWindow> = None;
    let mut out = Vec::new();
    for state in states {
        let cut = cut_dendrogram(&state.dendrogram, zeta);
        let aggregated = aggregate_features(&state.features, &cut);
        let advect = prev
            .as_ref()
            .map_or(0.0, |p| (state.start_frame - p.start) as f64);
        let params = MatchParams {
            advect_frames: advect,
            ..*matching
        };
        let ids = tracks.match_windows(
            prev.as_ref()
                .map(|p| (p.features.as_slice(), p.ids.as_slice())),
            &aggregated,
            &params,
            state.window_index,
        );
        let area = state.width * state.height;
        for frame_index in state.emit_from..state.start_frame + state.n_frames {
            let t = frame_index - state.start_frame;
            let labels = state.overseg_labels[t * area..(t + 1) * area]
                .iter()
                .map(|&l| {
                    if l == 0 {
                        0
                    } else {
                        ids[cut.leaf_labels[l as usize - 1] as usize - 1]
                    }
                })
                .collect();
            out.push(EmittedFrame {
                frame_index,
                window_index: state.window_index,
                width: state.width,
                height: state.height,
                labels,
                window_ev: None,
            });
        }
        prev = Some(PrevWindow {
            features: aggregated,
            ids,
            start: state.start_frame,
        });
    }
    Ok(out)
}

/// Mean and spread of one matched-pair statistic.
#[derive(Debug, Clone, Copy)]
pub struct GateStat {
    pub mean: f64,
    pub std: f64,
}

impl GateStat {
    /// The usual gate suggestion: mean plus three standard deviations.
    pub fn three_sigma(&self) -> f64 {
        self.mean + 3.0 * self.std
    }
}

/// Matched-pair distance statistics for gate calibration.
#[derive(Debug, Clone)]
pub struct GateCalibration {
    pub pairs: usize,
    pub hist: GateStat,
    pub centroid: GateStat,
    /// Size difference as a fraction of the larger region's size.
    pub size_frac: GateStat,
}

fn gate_stat(xs: &[f64]) -> GateStat {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    GateStat {
        mean,
        std: var.sqrt(),
    }
}

/// Estimates admissibility gates from the pairs an ungated matcher finds
/// across saved windows: cut at `zeta`, aggregate, match consecutive
/// windows with every gate wide open, and summarize the component
/// distances of the accepted pairs. Gate suggestions are mean + 3 sigma
/// per component.
pub fn calibrate_gates(
    states: &[WindowState],
    zeta: f64,
    base: &MatchParams,
) -> Result<GateCalibration> {
    if states.len() < 2 {
        return Err(SegError::Invalid(
            "gate calibration needs at least two windows".into(),
        ));
    }
    let mut hist = Vec::new();
    let mut centroid = Vec::new();
    let mut size_frac = Vec::new();
    let mut prev: Option<(Vec<RegionFeatures>, usize)> = None;
    for state in states {
        let cut = cut_dendrogram(&state.dendrogram, zeta);
        let aggregated = aggregate_features(&state.features, &cut);
        if let Some((prev_feats, prev_start)) = &prev {
            let open = MatchParams {
                advect_frames: (state.start_frame - prev_start) as f64,
                hist_gate: f64::INFINITY,
                centroid_gate: f64::INFINITY,
                size_gate_frac: f64::INFINITY,
                bbox_filter: false,
                ..*base
            };
            for (s, c) in match_regions(prev_feats, &aggregated, &open) {
                let d = region_distance(&prev_feats[s], &aggregated[c], &open);
                hist.push(d.hist);
                centroid.push(d.centroid);
                let larger = prev_feats[s].size.max(aggregated[c].size) as f64;
                size_frac.push(d.size / larger);
            }
        }
        prev = Some((aggregated, state.start_frame));
    }
    if hist.is_empty() {
        return Err(SegError::Invalid(
            "gate calibration found no matched pairs".into(),
        ));
    }
    Ok(GateCalibration {
        pairs: hist.len(),
        hist: gate_stat(&hist),
        centroid: gate_stat(&centroid),
        size_frac: gate_stat(&size_frac),
    })
}

const STATE_MAGIC: &[u8; 4] = b"TSW1";

/// Writes a [`WindowState`] in a little-endian binary format.
pub fn write_window_state<W: Write>(state: &WindowState, mut sink: W) -> std::io::Result<()> {
    let w64 = |s: &mut W, v: u64| s.write_all(&v.to_le_bytes());
    let wf = |s: &mut W, v: f64| s.write_all(&v.to_le_bytes());
    sink.write_all(STATE_MAGIC)?;
    for v in [
        state.window_index as u64,
        state.start_frame as u64,
        state.emit_from as u64,
        state.width as u64,
        state.height as u64,
        state.n_frames as u64,
    ] {
        w64(&mut sink, v)?;
    }
    w64(&mut sink, state.dendrogram.n_leaves as u64)?;
    w64(&mut sink, state.dendrogram.merges.len() as u64)?;
    for m in &state.dendrogram.merges {
        w64(&mut sink, m.a as u64)?;
        w64(&mut sink, m.b as u64)?;
        wf(&mut sink, m.weight)?;
    }
    w64(&mut sink, state.features.len() as u64)?;
    for f in &state.features {
        sink.write_all(&f.size.to_le_bytes())?;
        sink.write_all(&f.flow_count.to_le_bytes())?;
        for v in [
            f.centroid.x,
            f.centroid.y,
            f.centroid.z,
            f.mean_flow[0],
            f.mean_flow[1],
            f.mean_flow[2],
            f.bbox_min[0],
            f.bbox_min[1],
            f.bbox_min[2],
            f.bbox_max[0],
            f.bbox_max[1],
            f.bbox_max[2],
        ] {
            wf(&mut sink, v)?;
        }
        for hist in [
            &f.l[..],
            &f.a[..],
            &f.b[..],
            &f.x[..],
            &f.y[..],
            &f.z[..],
            &f.u[..],
            &f.v[..],
            &f.w[..],
        ] {
            for &count in hist {
                sink.write_all(&count.to_le_bytes())?;
            }
        }
    }
    w64(&mut sink, state.overseg_labels.len() as u64)?;
    for &l in &state.overseg_labels {
        sink.write_all(&l.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a state written by [`write_window_state`], validating counts.
pub fn read_window_state<R: Read>(mut src: R) -> Result<WindowState> {
    let bad = |msg: &str| SegError::Invalid(format!("window state: {msg}"));
    let mut magic = [0u8; 4];
    src.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
    if &magic != STATE_MAGIC {
        return Err(bad("bad magic"));
    }
    fn r_u64<R: Read>(src: &mut R) -> Result<u64> {
        let mut b = [0u8; 8];
        src.read_exact(&mut b)
            .map_err(|_| SegError::Invalid("window state: truncated".into()))?;
        Ok(u64::from_le_bytes(b))
    }
    fn r_f64<R: Read>(src: &mut R) -> Result<f64> {
        Ok(f64::from_bits(r_u64(src)?))
    }
    fn r_u32<R: Read>(src: &mut R) -> Result<u32> {
        let mut b = [0u8; 4];
        src.read_exact(&mut b)
            .map_err(|_| SegError::Invalid("window state: truncated".into()))?;
        Ok(u32::from_le_bytes(b))
    }
    let window_index = r_u64(&mut src)? as usize;
    let start_frame = r_u64(&mut src)? as usize;
    let emit_from = r_u64(&mut src)? as usize;
    let width = r_u64(&mut src)? as usize;
    let height = r_u64(&mut src)? as usize;
    let n_frames = r_u64(&mut src)? as usize;
    if width == 0 || height == 0 || n_frames == 0 {
        return Err(bad("empty dimensions"));
    }
    if emit_from < start_frame || emit_from >= start_frame + n_frames {
        return Err(bad("emit_from outside the window"));
    }

    let n_leaves = r_u64(&mut src)? as usize;
    let n_merges = r_u64(&mut src)? as usize;
    if n_merges >= n_leaves.max(1) {
        return Err(bad("too many merges"));
    }
    let mut merges = Vec::with_capacity(n_merges);
    for idx in 0..n_merges {
        let a = r_u64(&mut src)? as usize;
        let b = r_u64(&mut src)? as usize;
        let weight = r_f64(&mut src)?;
        if a == b || a >= n_leaves + idx || b >= n_leaves + idx {
            return Err(bad("merge references a node that does not exist yet"));
        }
        merges.push(Merge { a, b, weight });
    }
    let dendrogram = Dendrogram { n_leaves, merges };

    let n_features = r_u64(&mut src)? as usize;
    if n_features != n_leaves {
        return Err(bad("feature count does not match dendrogram leaves"));
    }
    let mut features = Vec::with_capacity(n_features);
    for _ in 0..n_features {
        let size = r_u32(&mut src)?;
        let flow_count = r_u32(&mut src)?;
        let mut scalars = [0.0f64; 12];
        for v in scalars.iter_mut() {
            *v = r_f64(&mut src)?;
        }
        let mut f = RegionFeatures {
            size,
            flow_count,
            centroid: Point3::new(scalars[0], scalars[1], scalars[2]),
            mean_flow: [scalars[3], scalars[4], scalars[5]],
            bbox_min: [scalars[6], scalars[7], scalars[8]],
            bbox_max: [scalars[9], scalars[10], scalars[11]],
            l: [0; LAB_BINS],
            a: [0; LAB_BINS],
            b: [0; LAB_BINS],
            x: [0; XYZ_BINS],
            y: [0; XYZ_BINS],
            z: [0; XYZ_BINS],
            u: [0; UVW_BINS],
            v: [0; UVW_BINS],
            w: [0; UVW_BINS],
        };
        for hist in [
            &mut f.l[..],
            &mut f.a[..],
            &mut f.b[..],
            &mut f.x[..],
            &mut f.y[..],
            &mut f.z[..],
            &mut f.u[..],
            &mut f.v[..],
            &mut f.w[..],
        ] {
            for count in hist.iter_mut() {
                *count = r_u32(&mut src)?;
            }
        }
        features.push(f);
    }

    let n_labels = r_u64(&mut src)? as usize;
    if n_labels != width * height * n_frames {
        return Err(bad("label count does not match dimensions"));
    }
    let mut overseg_labels = Vec::with_capacity(n_labels);
    for _ in 0..n_labels {
        let l = r_u32(&mut src)?;
        if l as usize > n_leaves {
            return Err(bad("label exceeds region count"));
        }
        overseg_labels.push(l);
    }
    Ok(WindowState {
        window_index,
        start_frame,
        width,
        height,
        n_frames,
        emit_from,
        overseg_labels,
        features,
        dendrogram,
    })
}

/// Stable render color for a global id: hash to a Lab color of moderate
/// lightness, convert to sRGB. Id 0 (invalid) is black.
pub fn colorize(id: u64) -> [u8; 3] {
    if id == 0 {
        return [0, 0, 0];
    }
    let h = splitmix64(id);
    let l = 35.0 + (h & 0xFF) as f32 / 255.0 * 45.0;
    let a = ((h >> 8) & 0xFF) as f32 / 255.0 * 160.0 - 80.0;
    let b = ((h >> 16) & 0xFF) as f32 / 255.0 * 160.0 - 80.0;
    lab_to_srgb(LabPixel::new(l, a, b))
}

/// Writes label maps, renders, metrics, and optional per-window state
/// under one directory.
pub struct OutputWriter {
    dir: PathBuf,
    render: bool,
    metrics: csv::Writer<std::fs::File>,
}

impl OutputWriter {
    pub fn create(dir: &Path, render: bool) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| SegError::io(dir, e))?;
        let metrics_path = dir.join("metrics.csv");
        let mut metrics =
            csv::Writer::from_path(&metrics_path).map_err(|e| csv_err(&metrics_path, e))?;
        metrics
            .write_record(["frame", "window", "regions", "explained_variation"])
            .map_err(|e| csv_err(&metrics_path, e))?;
        Ok(OutputWriter {
            dir: dir.to_path_buf(),
            render,
            metrics,
        })
    }

    /// Writes `labels_%06d.pgm`, optionally `render_%06d.ppm`, and the
    /// metrics row for one frame. Fails if a global id exceeds 16 bits.
    pub fn write_frame(&mut self, f: &EmittedFrame) -> Result<()> {
        let mut labels16 = Vec::with_capacity(f.labels.len());
        for &id in &f.labels {
            if id > u16::MAX as u64 {
                return Err(SegError::Invalid(format!(
                    "frame {}: global id {id} does not fit 16-bit label output",
                    f.frame_index
                )));
            }
            labels16.push(id as u16);
        }
        let path = self.dir.join(format!("labels_{:06}.pgm", f.frame_index));
        image_io::write_pgm16(&path, f.width, f.height, &labels16)?;
        if self.render {
            let pixels: Vec<[u8; 3]> = f.labels.iter().map(|&id| colorize(id)).collect();
            let path = self.dir.join(format!("render_{:06}.ppm", f.frame_index));
            image_io::write_ppm(&path, f.width, f.height, &pixels)?;
        }
        let regions = f
            .labels
            .iter()
            .filter(|&&id| id != 0)
            .collect::<BTreeSet<_>>()
            .len();
        let ev = f.window_ev.map(|v| v.to_string()).unwrap_or_default();
        let metrics_path = self.dir.join("metrics.csv");
        self.metrics
            .write_record([
                f.frame_index.to_string(),
                f.window_index.to_string(),
                regions.to_string(),
                ev,
            ])
            .map_err(|e| csv_err(&metrics_path, e))?;
        Ok(())
    }

    pub fn write_state(&self, state: &WindowState) -> Result<()> {
        let txt = self
            .dir
            .join(format!("dendrogram_{:04}.txt", state.window_index));
        let file = std::fs::File::create(&txt).map_err(|e| SegError::io(&txt, e))?;
        write_dendrogram(&state.dendrogram, std::io::BufWriter::new(file))
            .map_err(|e| SegError::io(&txt, e))?;
        let bin = self.dir.join(format!("state_{:04}.bin", state.window_index));
        let file = std::fs::File::create(&bin).map_err(|e| SegError::io(&bin, e))?;
        write_window_state(state, std::io::BufWriter::new(file)).map_err(|e| SegError::io(&bin, e))
    }

    pub fn finish(mut self) -> Result<()> {
        let metrics_path = self.dir.join("metrics.csv");
        self.metrics
            .flush()
            .map_err(|e| SegError::io(&metrics_path, e))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> SegError {
    SegError::Invalid(format!("{}: {e}", path.display()))
}

/// Loads every `state_%04d.bin` under a directory, ordered by window.
pub fn load_states(dir: &Path) -> Result<Vec<WindowState>> {
    let entries = std::fs::read_dir(dir).map_err(|e| SegError::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("state_") && n.ends_with(".bin"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(SegError::Invalid(format!(
            "{}: no state_*.bin files; run with save_state=true first",
            dir.display()
        )));
    }
    paths
        .iter()
        .map(|p| {
            let file = std::fs::File::open(p).map_err(|e| SegError::io(p, e))?;
            read_window_state(std::io::BufReader::new(file))
        })
        .collect()
}

/// How a finished run went.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub frames_emitted: usize,
    pub windows: usize,
    pub peak_rss_bytes: Option<u64>,
}

fn run_with_method(
    config: &PipelineConfig,
    frames: impl Iterator<Item = Result<RgbdFrame>>,
    method: SegMethod,
) -> Result<RunSummary> {
    config.validate()?;
    let mut engine = StreamEngine::new(config.clone(), method)?;
    let mut writer = OutputWriter::create(&config.out_dir, config.render)?;
    let mut emitted = 0usize;
    let mut windows = 0usize;
    let mut handle = |writer: &mut OutputWriter, out: StepOutput| -> Result<()> {
        for f in &out.frames {
            writer.write_frame(f)?;
            emitted += 1;
            windows = windows.max(f.window_index + 1);
        }
        for s in &out.states {
            writer.write_state(s)?;
        }
        Ok(())
    };
    for (index, frame) in frames.enumerate() {
        let frame = frame.map_err(|e| SegError::Invalid(format!("frame {index}: {e}")))?;
        let out = engine.push(frame)?;
        handle(&mut writer, out)?;
    }
    let out = engine.finish()?;
    handle(&mut writer, out)?;
    writer.finish()?;
    Ok(RunSummary {
        frames_emitted: emitted,
        windows,
        peak_rss_bytes: peak_rss_bytes(),
    })
}

/// Streams a sequence through the two-stage segmenter.
pub fn run_stream(
    config: &PipelineConfig,
    frames: impl Iterator<Item = Result<RgbdFrame>>,
) -> Result<RunSummary> {
    run_with_method(config, frames, SegMethod::Multistage)
}

/// Streams a sequence through the single-stage alpha-blend baseline.
pub fn run_baseline(
    config: &PipelineConfig,
    frames: impl Iterator<Item = Result<RgbdFrame>>,
) -> Result<RunSummary> {
    run_with_method(config, frames, SegMethod::Baseline)
}

/// Peak resident set size of this process, from /proc/self/status.
pub fn peak_rss_bytes() -> Option<u64> {
    let text = std::fs::read_to_string("/proc/self/status").ok()?;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("VmHWM:") {
            let kb: u64 = rest.trim().trim_end_matches("kB").trim().parse().ok()?;
            return Some(kb * 1024);
        }
    }
    None
}
