use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sixdgen::curation::{curate, load_manifest, save_manifest, Combine, CurationConfig};
use sixdgen::fusion::{fuse, interaction_distance, unfuse, FusedLatent, FusionKind, FusionStrategy};
use sixdgen::genmodel::{
    load_checkpoint, moving_quad_dataset, sample, save_checkpoint, train, LatentPipeline, QuadConfig, TrainConfig,
    TrainState, VelocityModel,
};
use sixdgen::numerics::{load_tensor, save_tensor, SolverOptions, Tensor};
use sixdgen::postopt::{recover_sequence, RefineOptions, DEPTH_SENTINEL};
use sixdgen::sixd::io::{load_ppm, save_ply};
use sixdgen::sixd::{
    compute_norm_stats, init_xyz, normalize_latent, xyz_to_pointcloud, CodecConfig, Direction, LatentCodec, LatentGrid,
    Modality, NormStats, SixDVideo,
};

use crate::args::*;

fn input(path: &Path) -> Result<&Path> {
    if !path.exists() {
        bail!("input '{}' does not exist", path.display());
    }
    Ok(path)
}

fn output(path: &Path) -> Result<&Path> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        bail!("output directory '{}' does not exist", parent.display());
    }
    Ok(path)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::InitXyz(a) => init(a),
        Command::Encode(a) => encode(a),
        Command::Stats(a) => stats(a),
        Command::Fuse(a) => fuse_cmd(a),
        Command::Distance(a) => distance(a),
        Command::Train(a) => train_cmd(a),
        Command::Sample(a) => sample_cmd(a),
        Command::RecoverCamera(a) => recover(a),
        Command::Curate(a) => curate_cmd(a),
        Command::ToPly(a) => to_ply(a),
    }
}

fn init(a: InitXyzArgs) -> Result<()> {
    let out = output(&a.out)?;
    save_tensor(out, &init_xyz(a.height, a.width)?)?;
    Ok(())
}

fn codec_config(c: &CodecArgs) -> CodecConfig {
    CodecConfig { temporal: c.temporal, spatial: c.spatial, seed: c.seed }
}

fn encode(a: EncodeArgs) -> Result<()> {
    let codec = LatentCodec::new(codec_config(&a.codec))?;
    let modality: Modality = a.modality.into();
    let data = load_tensor(input(&a.input)?)?;
    let stats: Option<NormStats> = a.stats.as_deref().map(|p| read_json(input(p)?)).transpose()?;
    let stats = stats.filter(|_| modality == Modality::Xyz);
    let out = output(&a.out)?;
    let result = if a.decode {
        let latent = match &stats {
            Some(s) => normalize_latent(&data, s, Direction::Inverse),
            None => data,
        };
        codec.decode(&LatentGrid::new(latent, modality)?)?
    } else {
        let latent = codec.encode(&data, modality)?.into_tensor();
        match &stats {
            Some(s) => normalize_latent(&latent, s, Direction::Forward),
            None => latent,
        }
    };
    save_tensor(out, &result)?;
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    let latents = a
        .latents
        .iter()
        .map(|p| Ok(LatentGrid::new(load_tensor(input(p)?)?, Modality::Xyz)?))
        .collect::<Result<Vec<_>>>()?;
    let out = output(&a.out)?;
    let s = compute_norm_stats(&latents)?;
    write_json(out, &s)?;
    println!("mean {} std {}", s.mean, s.std);
    Ok(())
}

fn sidecar_path(fused: &Path, sidecar: Option<PathBuf>) -> PathBuf {
    sidecar.unwrap_or_else(|| {
        let mut s = fused.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    })
}

fn fuse_cmd(a: FuseArgs) -> Result<()> {
    let sidecar = sidecar_path(&a.fused, a.sidecar);
    if a.unfuse {
        let fused = FusedLatent::load(input(&a.fused)?, input(&sidecar)?)?;
        let (rgb, xyz) = unfuse(&fused)?;
        save_tensor(output(&a.rgb)?, rgb.tensor())?;
        save_tensor(output(&a.xyz)?, xyz.tensor())?;
    } else {
        let rgb = LatentGrid::new(load_tensor(input(&a.rgb)?)?, Modality::Rgb)?;
        let xyz = LatentGrid::new(load_tensor(input(&a.xyz)?)?, Modality::Xyz)?;
        let strategy = FusionStrategy { kind: a.strategy, rgb_first: !a.xyz_first };
        fuse(&rgb, &xyz, strategy)?.save(output(&a.fused)?, output(&sidecar)?)?;
    }
    Ok(())
}

fn distance(a: DistanceArgs) -> Result<()> {
    let kinds: Vec<FusionKind> = a.strategy.map_or_else(|| FusionKind::ALL.to_vec(), |k| vec![k]);
    for kind in kinds {
        let d = interaction_distance(FusionStrategy::new(kind), a.frames, a.rows, a.cols)?;
        println!("{kind} {d}");
    }
    Ok(())
}

/// Everything `sample` needs besides the network weights.
#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    codec: CodecMeta,
    stats: NormStats,
    clip: [usize; 3],
    train: TrainConfig,
    initial_heldout: f64,
    final_heldout: f64,
}

#[derive(Serialize, Deserialize)]
struct CodecMeta {
    temporal: usize,
    spatial: usize,
    seed: u64,
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let out = output(&a.out)?;
    if a.videos == 0 || a.heldout == 0 {
        bail!("--videos and --heldout must be positive");
    }
    let quad = QuadConfig { frames: a.frames, height: a.height, width: a.width, ..QuadConfig::default() };
    let videos = moving_quad_dataset(&quad, a.videos + a.heldout, a.seed)?;
    let codec = LatentCodec::new(CodecConfig::default())?;
    let pipe = LatentPipeline::fit(codec.clone(), &videos[..a.videos])?;
    let samples = videos.iter().map(|v| pipe.sample(v)).collect::<sixdgen::Result<Vec<_>>>()?;
    let (train_set, heldout) = samples.split_at(a.videos);

    let mut cfg = TrainConfig {
        seed: a.seed,
        lr: a.lr,
        steps: a.steps,
        batch_size: a.batch_size,
        warmup: a.warmup,
        ..TrainConfig::default()
    };
    cfg.model.latent_channels = codec.latent_channels();
    cfg.model.strategy = FusionStrategy::new(a.strategy);
    cfg.model.width = a.hidden;
    cfg.model.heads = a.heads;
    cfg.model.blocks = a.blocks;
    cfg.model.patch = [a.patch[0], a.patch[1], a.patch[2]];
    cfg.model.seed = a.seed;

    let mut model = VelocityModel::new(cfg.model.clone())?;
    let mut state = TrainState::new(&model, cfg.seed, cfg.adamw);
    eprintln!("training {} parameters for {} steps ({} strategy)", model.num_parameters(), cfg.steps, a.strategy);
    let report = train(&mut model, &mut state, &cfg, train_set, heldout, |step, loss| {
        if a.log_every > 0 && (step % a.log_every == 0 || step + 1 == cfg.steps) {
            eprintln!("step {step} loss {loss:.6}");
        }
    })?;
    println!("held-out loss {:.6} -> {:.6}", report.initial_heldout, report.final_heldout);
    let c = codec.config();
    let meta = CheckpointMeta {
        codec: CodecMeta { temporal: c.temporal, spatial: c.spatial, seed: c.seed },
        stats: pipe.stats,
        clip: [a.frames, a.height, a.width],
        train: cfg,
        initial_heldout: report.initial_heldout,
        final_heldout: report.final_heldout,
    };
    save_checkpoint(out, &model, serde_json::to_value(meta)?)?;
    Ok(())
}

fn sample_cmd(a: SampleArgs) -> Result<()> {
    let (model, meta) = load_checkpoint(input(&a.checkpoint)?)?;
    let meta: CheckpointMeta = serde_json::from_value(meta).context("checkpoint lacks sampling metadata")?;
    let codec = LatentCodec::new(CodecConfig {
        temporal: meta.codec.temporal,
        spatial: meta.codec.spatial,
        seed: meta.codec.seed,
    })?;
    let pipe = LatentPipeline { codec, stats: meta.stats };
    let frame = load_ppm(input(&a.first_frame)?)?;
    let (out_rgb, out_xyz) = (output(&a.out_rgb)?, output(&a.out_xyz)?);
    let cond = pipe.condition(&frame, a.frames.unwrap_or(meta.clip[0]))?;
    let latent = sample(&model, &cond, a.steps, a.seed)?;
    let video = pipe.decode(&latent)?;
    save_tensor(out_rgb, video.rgb())?;
    save_tensor(out_xyz, video.xyz())?;
    Ok(())
}

fn recover(a: RecoverArgs) -> Result<()> {
    let xyz = load_tensor(input(&a.xyz)?)?;
    let out = output(&a.out)?;
    let frames: Vec<Tensor> = match xyz.shape() {
        [_, _, 3] => vec![xyz],
        &[t, h, w, 3] => {
            (0..t).map(|i| xyz.narrow(0, i, 1).and_then(|f| f.reshape(&[h, w, 3]))).collect::<sixdgen::Result<_>>()?
        }
        s => bail!("xyz must be H×W×3 or T×H×W×3, got {s:?}"),
    };
    let (h, w) = (frames[0].shape()[0], frames[0].shape()[1]);
    let opts = RefineOptions {
        solver: SolverOptions { max_iterations: a.max_iterations, ..SolverOptions::default() },
        ..RefineOptions::default()
    };
    let rec = recover_sequence(&frames, a.mode, &opts, a.jobs)?;
    for f in &rec.report.frames {
        match &f.error {
            Some(e) => eprintln!("frame {}: failed: {e}", f.frame),
            None => eprintln!(
                "frame {}: rmse {:.3e} px, {} iterations{}",
                f.frame,
                f.rmse_px,
                f.iterations,
                if f.converged { "" } else { ", not converged" }
            ),
        }
    }
    let records = rec.records();
    if records.is_empty() {
        bail!("no frame could be solved");
    }
    write_json(out, &records)?;
    if let Some(p) = &a.depth {
        let mut data = Vec::with_capacity(frames.len() * h * w);
        for d in &rec.depths {
            match d {
                Some(d) => data.extend_from_slice(d.data()),
                None => data.extend(std::iter::repeat_n(DEPTH_SENTINEL, h * w)),
            }
        }
        save_tensor(output(p)?, &Tensor::new(vec![frames.len(), h, w], data)?)?;
    }
    if let Some(p) = &a.report {
        write_json(output(p)?, &rec.report)?;
    }
    Ok(())
}

fn curate_cmd(a: CurateArgs) -> Result<()> {
    let config = CurationConfig {
        luma_bounds: [a.luma_min, a.luma_max],
        tau: a.tau,
        top_r: a.top_r,
        alignment_percentile: a.alignment_percentile,
        velocity_percentile: a.velocity_percentile,
        acceleration_percentile: a.acceleration_percentile,
        curvature_percentile: a.curvature_percentile,
        epsilon: a.epsilon,
        combine: match a.combine {
            CombineArg::Intersection => Combine::Intersection,
            CombineArg::Union => Combine::Union,
        },
    };
    config.validate()?;
    let manifest = input(&a.manifest)?;
    let out = output(&a.out)?;
    let records = load_manifest(manifest)?;
    let base = manifest.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let curated = curate(&records, &config, base, a.jobs)?;
    save_manifest(out, &curated)?;
    let kept = curated.iter().filter(|r| r.keep).count();
    eprintln!("kept {kept} of {} clips", curated.len());
    Ok(())
}

fn to_ply(a: ToPlyArgs) -> Result<()> {
    let rgb = load_tensor(input(&a.rgb)?)?;
    let xyz = load_tensor(input(&a.xyz)?)?;
    let out = output(&a.out)?;
    let video = SixDVideo::new(rgb, xyz)?;
    if a.frame >= video.frames() {
        bail!("frame {} out of range for a {}-frame clip", a.frame, video.frames());
    }
    let cloud = xyz_to_pointcloud(&video, a.frame)?;
    save_ply(out, &cloud)?;
    eprintln!("wrote {} points", cloud.len());
    Ok(())
}
