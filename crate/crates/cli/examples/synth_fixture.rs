//! Writes a synthetic manifest and embedding file for trying the pipeline.
//!
//! cargo run --example synth_fixture -- gaussian /tmp/fixture
//! cargo run --example synth_fixture -- attributes /tmp/bench --seed 3

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use shiftscope_core::data::write_embeddings;
use shiftscope_core::synth;

/// 1x1 grey PNG used as a stand-in thumbnail.
const PLACEHOLDER_PNG: &[u8] = &[
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44, 0x52, 0x00, 0x00,
    0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x00, 0x00, 0x00, 0x00, 0x3a, 0x7e, 0x9b, 0x55, 0x00, 0x00, 0x00,
    0x0a, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0x68, 0x00, 0x00, 0x00, 0x82, 0x00, 0x81, 0x77, 0xcd, 0x72,
    0xb6, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82,
];

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    /// 1000 train + 900 inlier test from N(0, I) in 2D, 100 test from N((5, 5), I).
    Gaussian,
    /// Six binary attributes as +5 offsets on orthogonal axes of a 12-dim space.
    Attributes,
}

#[derive(Debug, Parser)]
struct Opts {
    kind: Kind,
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write a placeholder PNG for every instance.
    #[arg(long)]
    images: bool,
}

fn main() -> ExitCode {
    let opts = Opts::parse();
    let ds = match opts.kind {
        Kind::Gaussian => synth::gaussian_shift(1000, 900, 100, [5.0, 5.0], opts.seed),
        Kind::Attributes => synth::attribute_offsets(1000, 1000, 6, 12, 5.0, 0.3, opts.seed),
    };
    let result = (|| -> Result<(), Box<dyn std::error::Error>> {
        std::fs::create_dir_all(&opts.out)?;
        ds.manifest.save(opts.out.join("manifest.json"))?;
        write_embeddings(opts.out.join("embeddings.dsem"), &ds.space)?;
        if opts.images {
            for rec in &ds.manifest.instances {
                let path = opts.out.join(&rec.image_path);
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent)?;
                }
                std::fs::write(path, PLACEHOLDER_PNG)?;
            }
        }
        Ok(())
    })();
    match result {
        Ok(()) => {
            println!(
                "wrote {} instances ({}-dim) to {}",
                ds.manifest.instances.len(),
                ds.space.dim(),
                opts.out.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
