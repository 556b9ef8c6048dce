//! Regenerates the built-in map files: `cargo run -p miniurban --example gen_maps`.

use miniurban::map::GridSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("maps");
    for spec in [GridSpec::town_a(), GridSpec::town_b()] {
        let map = spec.build()?;
        let path = dir.join(format!("{}.map", spec.name));
        std::fs::write(&path, map.to_text())?;
        println!(
            "wrote {} ({} lanes, {} lights)",
            path.display(),
            map.lanes.len(),
            map.lights.len()
        );
    }
    Ok(())
}
