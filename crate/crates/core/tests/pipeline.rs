//! Cross-module flows: data through the codec and model, and generated-style
//! XYZ through camera recovery.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sixdgen::fusion::{FusionKind, FusionStrategy};
use sixdgen::genmodel::{moving_quad_dataset, sample, LatentPipeline, ModelConfig, QuadConfig, VelocityModel};
use sixdgen::postopt::synthetic::{orbit_cameras, render_xyz, Surface};
use sixdgen::postopt::{recover_sequence, rotation_error_deg, FocalMode, RefineOptions};
use sixdgen::sixd::{normalize_scene_extent, CodecConfig, LatentCodec};

fn pipeline() -> (LatentPipeline, Vec<sixdgen::sixd::SixDVideo>) {
    let videos = moving_quad_dataset(&QuadConfig::default(), 4, 3).unwrap();
    let pipe = LatentPipeline::fit(LatentCodec::new(CodecConfig::default()).unwrap(), &videos).unwrap();
    (pipe, videos)
}

#[test]
fn quad_clip_survives_the_latent_round_trip() {
    let (pipe, videos) = pipeline();
    let v = &videos[1];
    let back = pipe.decode(&pipe.encode(v).unwrap()).unwrap();
    let (xyz, _) = normalize_scene_extent(v.xyz()).unwrap();
    assert!(back.rgb().max_abs_diff(v.rgb()).unwrap() < 1e-5);
    assert!(back.xyz().max_abs_diff(&xyz).unwrap() < 1e-5);
}

#[test]
fn untrained_model_generates_a_finite_clip_per_seed() {
    let (pipe, videos) = pipeline();
    let v = &videos[0];
    let cond = pipe.condition(&v.first_frame(), v.frames()).unwrap();
    for kind in [FusionKind::Width, FusionKind::Batch] {
        let model =
            VelocityModel::new(ModelConfig { strategy: FusionStrategy::new(kind), ..ModelConfig::default() }).unwrap();
        let a = sample(&model, &cond, 4, 11).unwrap();
        let b = sample(&model, &cond, 4, 11).unwrap();
        let c = sample(&model, &cond, 4, 12).unwrap();
        assert_eq!(a.rgb.data(), b.rgb.data());
        assert_ne!(a.xyz.data(), c.xyz.data());
        let clip = pipe.decode(&a).unwrap();
        assert_eq!((clip.frames(), clip.height(), clip.width()), (v.frames(), v.height(), v.width()));
        assert!(clip.xyz().data().iter().all(|x| x.is_finite()));
    }
}

#[test]
fn orbit_sequence_recovers_one_focal_length() {
    let (h, w) = (40, 56);
    let cams = orbit_cameras(5, h, w, 70.0, 4.0, 30.0, 15.0).unwrap();
    let surface = Surface::random(&mut ChaCha8Rng::seed_from_u64(8));
    let frames: Vec<_> = cams.iter().map(|c| render_xyz(c, h, w, &surface).unwrap()).collect();
    for mode in [FocalMode::SharedK, FocalMode::PerFrameK] {
        let rec = recover_sequence(&frames, mode, &RefineOptions::default(), 2).unwrap();
        assert!(rec.report.all_converged());
        for (est, truth) in rec.cameras.iter().zip(&cams) {
            let est = est.as_ref().unwrap();
            assert!((est.f - 70.0).abs() < 1e-3, "{mode}: f = {}", est.f);
            assert!(rotation_error_deg(&est.r, &truth.r) < 1e-3);
        }
        let depth = rec.depths[0].as_ref().unwrap();
        assert_eq!(depth.shape(), &[h, w]);
        assert!(depth.data().iter().all(|&d| d > 0.0));
    }
}
