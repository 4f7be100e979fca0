//! Times forward/backward steps of the toy preset.
use std::time::Instant;

use bevfuse_harness::train::{build_model, make_samples, make_scenes, train_toy};
use bevfuse_harness::ExperimentConfig;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cfg = ExperimentConfig::preset("toy")?.with_overrides(&args)?;
    let t = Instant::now();
    let scenes = make_scenes(&cfg, 0, 20)?;
    let samples = make_samples(&cfg, &scenes)?;
    println!("data: {:.2}s", t.elapsed().as_secs_f64());
    let mut model = build_model(&cfg)?;
    let mut tc = cfg.train.clone();
    tc.steps = 20;
    let r = train_toy(&mut model, &samples, &tc, 1, |_| {})?;
    println!(
        "{:.3}s/step  first {:.3} last {:.3}",
        r.seconds / 20.0,
        r.log[0].loss.total,
        r.log[19].loss.total
    );
    Ok(())
}
