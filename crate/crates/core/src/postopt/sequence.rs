use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::camera::{CameraModel, CameraRecord};
use super::dlt::estimate_camera_dlt;
use super::refine::{refine_camera_with, FrameReport, RefineOptions};
use crate::numerics::Tensor;
use crate::parallel::par_map;
use crate::{Error, Result};

/// How focal length is shared across the frames of a clip.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FocalMode {
    /// One physical camera: per-frame solves, then every pose re-refined
    /// with the focal length fixed at the median.
    #[default]
    SharedK,
    PerFrameK,
}

impl fmt::Display for FocalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FocalMode::SharedK => "shared-k",
            FocalMode::PerFrameK => "per-frame-k",
        })
    }
}

impl FromStr for FocalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared-k" => Ok(FocalMode::SharedK),
            "per-frame-k" => Ok(FocalMode::PerFrameK),
            _ => Err(Error::invalid(format!("unknown camera mode '{s}' (expected shared-k or per-frame-k)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub mode: FocalMode,
    /// Median focal length used in shared-K mode.
    pub shared_f: Option<f64>,
    pub frames: Vec<FrameReport>,
}

impl RecoveryReport {
    pub fn all_converged(&self) -> bool {
        self.frames.iter().all(|f| f.converged)
    }
}

#[derive(Clone, Debug)]
pub struct SequenceRecovery {
    /// `None` for frames that could not be solved.
    pub cameras: Vec<Option<CameraModel>>,
    pub depths: Vec<Option<Tensor>>,
    pub report: RecoveryReport,
}

impl SequenceRecovery {
    /// JSON records of every recovered frame.
    pub fn records(&self) -> Vec<CameraRecord> {
        self.cameras
            .iter()
            .zip(&self.report.frames)
            .filter_map(|(cam, rep)| cam.as_ref().map(|c| CameraRecord::new(rep.frame, c, rep.rmse_px)))
            .collect()
    }
}

type FrameResult = Result<(CameraModel, Tensor, FrameReport)>;

fn solve_frame(xyz: &Tensor, fixed_f: Option<f64>, init: Option<&CameraModel>, opts: &RefineOptions) -> FrameResult {
    let init = match init {
        Some(c) => *c,
        None => estimate_camera_dlt(xyz)?,
    };
    refine_camera_with(xyz, &init, fixed_f, opts)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Recovers one camera and depth map per XYZ frame. Frames are solved on up
/// to `jobs` threads; a failing frame is reported without stopping others.
pub fn recover_sequence(
    frames: &[Tensor],
    mode: FocalMode,
    opts: &RefineOptions,
    jobs: usize,
) -> Result<SequenceRecovery> {
    if frames.is_empty() {
        return Err(Error::invalid("no frames to recover"));
    }
    let mut results = par_map(frames.len(), jobs, |i| solve_frame(&frames[i], None, None, opts));
    let mut shared_f = None;
    if mode == FocalMode::SharedK {
        let mut focals: Vec<f64> = results.iter().filter_map(|r| r.as_ref().ok().map(|(c, _, _)| c.f)).collect();
        if !focals.is_empty() {
            let f = median(&mut focals);
            shared_f = Some(f);
            let firsts: Vec<Option<CameraModel>> =
                results.iter().map(|r| r.as_ref().ok().map(|(c, _, _)| *c)).collect();
            let refined = par_map(frames.len(), jobs, |i| match firsts[i] {
                // A camera already at the median focal length is its own re-refinement.
                Some(c) if c.f != f => Some(solve_frame(&frames[i], Some(f), Some(&CameraModel { f, ..c }), opts)),
                _ => None,
            });
            for (slot, r) in results.iter_mut().zip(refined) {
                if let Some(r) = r {
                    *slot = r;
                }
            }
        }
    }
    let mut cameras = Vec::with_capacity(frames.len());
    let mut depths = Vec::with_capacity(frames.len());
    let mut reports = Vec::with_capacity(frames.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((cam, depth, rep)) => {
                cameras.push(Some(cam));
                depths.push(Some(depth));
                reports.push(FrameReport { frame: i, ..rep });
            }
            Err(e) => {
                cameras.push(None);
                depths.push(None);
                reports.push(FrameReport {
                    frame: i,
                    rmse_px: f64::INFINITY,
                    iterations: 0,
                    accepted_steps: 0,
                    converged: false,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    Ok(SequenceRecovery { cameras, depths, report: RecoveryReport { mode, shared_f, frames: reports } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postopt::camera::rotation_error_deg;
    use crate::postopt::synthetic::{look_at_camera, orbit_cameras, render_xyz, Surface};
    use nalgebra::Vector3;

    fn orbit(frames: usize) -> (Vec<CameraModel>, Vec<Tensor>) {
        let cams = orbit_cameras(frames, 24, 24, 26.0, 3.0, 40.0, 20.0).unwrap();
        let surface = Surface { amplitude: 0.12, freq: [1.7, 1.3], phase: [0.4, 1.1] };
        let xyz = cams.iter().map(|c| render_xyz(c, 24, 24, &surface).unwrap()).collect();
        (cams, xyz)
    }

    #[test]
    fn orbit_is_recovered_in_both_modes() {
        let (cams, xyz) = orbit(8);
        for mode in [FocalMode::SharedK, FocalMode::PerFrameK] {
            let rec = recover_sequence(&xyz, mode, &RefineOptions::default(), 1).unwrap();
            assert!(rec.report.all_converged());
            for (est, truth) in rec.cameras.iter().zip(&cams) {
                assert!(rotation_error_deg(&est.unwrap().r, &truth.r) < 0.1);
            }
            assert_eq!(rec.records().len(), 8);
        }
    }

    #[test]
    fn static_camera_moving_object() {
        let cam = look_at_camera(Vector3::new(0.5, -0.8, -3.0), 30.0, 20, 20).unwrap();
        let xyz: Vec<Tensor> = (0..4)
            .map(|k| {
                let s = Surface { amplitude: 0.1, freq: [1.5, 1.2], phase: [0.3 * k as f64, 0.7] };
                render_xyz(&cam, 20, 20, &s).unwrap()
            })
            .collect();
        let rec = recover_sequence(&xyz, FocalMode::SharedK, &RefineOptions::default(), 2).unwrap();
        let ts: Vec<Vector3<f64>> = rec.cameras.iter().map(|c| c.unwrap().t).collect();
        for t in &ts {
            assert!((t - ts[0]).amax() < 1e-3);
        }
    }

    #[test]
    fn single_frame_modes_agree() {
        let (_, xyz) = orbit(1);
        let a = recover_sequence(&xyz, FocalMode::SharedK, &RefineOptions::default(), 1).unwrap();
        let b = recover_sequence(&xyz, FocalMode::PerFrameK, &RefineOptions::default(), 1).unwrap();
        assert_eq!(a.cameras, b.cameras);
        assert_eq!(a.depths, b.depths);
    }

    #[test]
    fn order_and_concurrency_do_not_matter() {
        let (_, xyz) = orbit(5);
        let serial = recover_sequence(&xyz, FocalMode::SharedK, &RefineOptions::default(), 1).unwrap();
        let threaded = recover_sequence(&xyz, FocalMode::SharedK, &RefineOptions::default(), 3).unwrap();
        assert_eq!(serial.cameras, threaded.cameras);
        assert_eq!(serial.report, threaded.report);
        let reversed: Vec<Tensor> = xyz.iter().rev().cloned().collect();
        let rev = recover_sequence(&reversed, FocalMode::SharedK, &RefineOptions::default(), 2).unwrap();
        let back: Vec<_> = rev.cameras.into_iter().rev().collect();
        assert_eq!(back, serial.cameras);
    }

    #[test]
    fn failing_frame_is_reported() {
        let (_, mut xyz) = orbit(3);
        xyz[1] = Tensor::full(&[24, 24, 3], f32::NAN).unwrap();
        let rec = recover_sequence(&xyz, FocalMode::SharedK, &RefineOptions::default(), 1).unwrap();
        assert!(rec.cameras[1].is_none() && rec.cameras[0].is_some() && rec.cameras[2].is_some());
        assert!(!rec.report.frames[1].converged && rec.report.frames[1].error.is_some());
        assert_eq!(rec.records().len(), 2);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("shared-k".parse::<FocalMode>().unwrap(), FocalMode::SharedK);
        assert_eq!(FocalMode::PerFrameK.to_string(), "per-frame-k");
        assert!("both".parse::<FocalMode>().is_err());
    }
}
