//! Trains the velocity model on the moving-quad dataset and reports held-out loss.
//!
//! `cargo run --release -p sixdgen --example train_quad -- [width|frame|...] [steps]`

use std::time::Instant;

use sixdgen::fusion::{FusionKind, FusionStrategy};
use sixdgen::genmodel::{
    moving_quad_dataset, train, LatentPipeline, QuadConfig, TrainConfig, TrainState, VelocityModel,
};
use sixdgen::sixd::{CodecConfig, LatentCodec};

fn main() -> sixdgen::Result<()> {
    let mut args = std::env::args().skip(1);
    let kind: FusionKind = args.next().as_deref().unwrap_or("width").parse()?;
    let steps: usize = args.next().map(|s| s.parse().expect("steps")).unwrap_or(2000);

    let videos = moving_quad_dataset(&QuadConfig::default(), 80, 0)?;
    let pipe = LatentPipeline::fit(LatentCodec::new(CodecConfig::default())?, &videos[..64])?;
    let samples = videos.iter().map(|v| pipe.sample(v)).collect::<sixdgen::Result<Vec<_>>>()?;
    let (train_set, heldout) = samples.split_at(64);

    let mut cfg = TrainConfig { steps, ..TrainConfig::default() };
    cfg.model.strategy = FusionStrategy::new(kind);
    let mut model = VelocityModel::new(cfg.model.clone())?;
    let mut state = TrainState::new(&model, cfg.seed, cfg.adamw);
    let start = Instant::now();
    let report = train(&mut model, &mut state, &cfg, train_set, heldout, |step, loss| {
        if step % 200 == 0 {
            eprintln!("step {step:5} loss {loss:.5} ({:.1}s)", start.elapsed().as_secs_f64());
        }
    })?;
    println!(
        "{kind}: held-out {:.5} -> {:.5} ({:.1}%) in {:.1}s",
        report.initial_heldout,
        report.final_heldout,
        100.0 * (1.0 - report.final_heldout / report.initial_heldout),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
