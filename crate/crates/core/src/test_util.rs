//! Small constructors shared by unit tests across modules.

use crate::graph_seg::{build_window, ToxelWindow};
use crate::rgbd_io::{CameraIntrinsics, RgbdFrame};
use crate::scene_flow::{lift_flow, FlowField2D, SceneFlowField};

/// A frame of constant color and constant raw depth, synthetic intrinsics
/// (depth_scale 5000, so raw 5000 is one meter).
pub fn flat_frame(w: usize, h: usize, color: [u8; 3], depth_raw: u16) -> RgbdFrame {
    RgbdFrame {
        width: w,
        height: h,
        color: vec![color; w * h],
        depth: vec![depth_raw; w * h],
        timestamp: 0.0,
        intrinsics: CameraIntrinsics::synthetic(w, h),
    }
}

/// Scene flow for each consecutive pair under identically zero 2D flow.
pub fn zero_flows(frames: &[RgbdFrame]) -> Vec<SceneFlowField> {
    frames
        .windows(2)
        .map(|p| lift_flow(&p[0], &p[1], &FlowField2D::zero(p[0].width, p[0].height)).unwrap())
        .collect()
}

/// Window over the frames with zero 2D flow between them.
pub fn window_from(frames: &[RgbdFrame]) -> ToxelWindow {
    build_window(frames, &zero_flows(frames)).unwrap()
}
