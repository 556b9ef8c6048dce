//! Drives a short straight rollout and writes frames as PNG files:
//! `cargo run -p miniurban --example dump_frames -- <out-dir> [palette] [density]`.

use miniurban::{save_png, MiniUrban, ScenarioConfig, VehicleCommand};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let out = std::path::PathBuf::from(args.get(1).map(String::as_str).unwrap_or("frames"));
    std::fs::create_dir_all(&out)?;
    let config = ScenarioConfig {
        palette: args.get(2).cloned().unwrap_or_else(|| "clear-noon".into()),
        density: args.get(3).cloned().unwrap_or_else(|| "regular".into()),
        ..Default::default()
    };
    let mut env = MiniUrban::new(config)?;
    let obs = env.reset(1)?;
    save_png(&obs.frames[2], obs.resolution, out.join("frame_000.png"))?;
    for t in 1..=60 {
        let (obs, r, done, info) = env.step(VehicleCommand::new(0.4, 0.0, 0.0))?;
        if t % 20 == 0 || done {
            save_png(
                &obs.frames[2],
                obs.resolution,
                out.join(format!("frame_{t:03}.png")),
            )?;
            println!(
                "t={t} r={r:.3} label={:?} term={:?}",
                info.light_label, info.termination
            );
        }
        if done {
            break;
        }
    }
    Ok(())
}
