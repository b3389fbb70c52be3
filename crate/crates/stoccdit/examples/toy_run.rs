//! Runs the toy experiment and prints progress and the final report.
//!
//! Usage: `toy_run [config.json] [vae.pkpt]`. An existing VAE checkpoint is
//! reused; otherwise the trained VAE is written there.

use std::path::Path;

use stoccdit::experiment::{run_experiment_with, ExperimentConfig, Progress};
use stoccdit::OccVae;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let cfg = match args.get(1).filter(|a| !a.is_empty()) {
        Some(path) => stoccdit::config::load_json(Path::new(path))?,
        None => ExperimentConfig::toy(),
    };
    let vae_path = args.get(2).map(Path::new);
    let pretrained = match vae_path {
        Some(p) if p.exists() => Some(OccVae::load(p)?.0),
        _ => None,
    };
    let start = std::time::Instant::now();
    let out = run_experiment_with(&cfg, pretrained, |p| match p {
        Progress::Stage(s) => eprintln!("[{:7.1}s] stage {s}", start.elapsed().as_secs_f64()),
        Progress::Vae(s) | Progress::Dit(s) if s.step % 20 == 0 => eprintln!(
            "[{:7.1}s] phase {} epoch {} step {} loss {:.4} lr {:.2e} |g| {:.3}",
            start.elapsed().as_secs_f64(),
            s.phase,
            s.epoch,
            s.step,
            s.loss,
            s.lr,
            s.grad_norm
        ),
        _ => {}
    })?;
    if let Some(p) = vae_path.filter(|p| !p.exists()) {
        out.vae.save(p, out.report.latent_scale)?;
    }
    let r = &out.report;
    println!("vae epochs {:?}", r.vae_log.epoch_means);
    println!("vae val {:?}", r.vae_val);
    println!("dit epochs {:?}", r.dit_log.epoch_means);
    println!("scale {} agent iou {} per {:?} baseline {}", r.latent_scale, r.agent_iou, r.agent_per_channel, r.baseline_agent_iou);
    println!("timings {:?}", r.seconds);
    Ok(())
}
