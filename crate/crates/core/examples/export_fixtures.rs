//! Writes the built-in rigs as on-disk bundles plus a manifest of their
//! joint and vertex counts.
//!
//!     cargo run --example export_fixtures -- [out_dir]

use std::path::PathBuf;

use rigmotion::fixtures;
use rigmotion::io;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets/rigs"));
    let mut manifest = Vec::new();
    for name in fixtures::NAMES {
        let rig = fixtures::by_name(name).expect("known fixture");
        io::save_rig(&out.join(name), &rig, None)?;
        // load back to confirm the bundle is self-consistent
        let loaded = io::load_rig(&out.join(name))?;
        assert_eq!(loaded.rig.mesh.vertex_count(), rig.mesh.vertex_count());
        println!("{name:>10}: {:>3} joints {:>5} vertices {:>5} faces", rig.skeleton.len(), rig.mesh.vertex_count(), rig.mesh.faces.len());
        manifest.push(serde_json::json!({
            "name": name,
            "joints": rig.skeleton.len(),
            "vertices": rig.mesh.vertex_count(),
            "faces": rig.mesh.faces.len(),
        }));
    }
    let text = serde_json::to_string_pretty(&serde_json::json!({ "format_version": 1, "rigs": manifest }))?;
    io::write_atomic(&out.join("manifest.json"), text.as_bytes())?;
    println!("wrote {}", out.display());
    Ok(())
}
