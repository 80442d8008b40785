//! The `sfms` command line: synthesize scenes, reconstruct, evaluate, export.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use sfms_core::config::{RunConfig, SynthConfig};
use sfms_core::dataset::{load_stack, write_stack, write_truth, MANIFEST, TRUTH_DIR};
use sfms_core::eval::{export_mesh, surface_distance, EvalOptions};
use sfms_core::optimizer::{imls_run, write_history};
use sfms_core::synth::{canonical_face, default_features, make_template, render, std40_scene};
use sfms_core::{io, BsplineSurface, FeatureTemplate, UvGrid};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sfms", version, about = "B-spline face reconstruction from shading and motion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic scene with ground truth and a perturbed template.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the alternating reconstruction on an image stack.
    Reconstruct {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a reconstruction against ground truth; prints JSON.
    Eval {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_parser = parse_density, default_value = "200x200")]
        density: UvGrid,
        /// Also report the symmetric Hausdorff distance.
        #[arg(long)]
        hausdorff: bool,
    },
    /// Write a surface as an OBJ triangle mesh.
    Export {
        #[arg(long)]
        surface: PathBuf,
        #[arg(long, value_parser = parse_density)]
        density: UvGrid,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_density(s: &str) -> Result<UvGrid, String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got `{s}`"))?;
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("bad density `{s}`: {e}"));
    let (nu, nv) = (parse(w)?, parse(h)?);
    if nu < 2 || nv < 2 {
        return Err(format!("density must be at least 2x2, got {nu}x{nv}"));
    }
    Ok(UvGrid::new(nu, nv))
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_VALIDATION,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn dispatch(cmd: Command) -> sfms_core::Result<()> {
    match cmd {
        Command::Synth { config, out } => synth(&SynthConfig::load(config)?, &out),
        Command::Reconstruct { config, out } => reconstruct(&RunConfig::load(config)?, &out),
        Command::Eval {
            truth,
            recon,
            features,
            density,
            hausdorff,
        } => {
            let truth = BsplineSurface::load(truth)?;
            let recon = BsplineSurface::load(recon)?;
            let features = FeatureTemplate::load(features)?;
            let report = surface_distance(&truth, &recon, &features, &EvalOptions { density, hausdorff })?;
            println!("{}", serde_json::to_string_pretty(&report.rounded())?);
            Ok(())
        }
        Command::Export { surface, density, out } => export_mesh(&BsplineSurface::load(surface)?, density, out),
    }
}

/// Writes the scene, truth sidecar, features, template and a ready-to-run
/// `reconstruct.json` into `out`.
pub fn synth(cfg: &SynthConfig, out: &Path) -> sfms_core::Result<()> {
    cfg.validate()?;
    let truth = canonical_face(cfg.grid)?;
    let features = default_features();
    let scene = std40_scene(truth.clone(), features.clone(), &cfg.std40());
    let rendered = render(&scene)?;
    fs::create_dir_all(out)?;
    write_stack(out, &rendered.images, &rendered.landmarks, cfg.bit_depth)?;
    write_truth(out, &truth, &rendered.poses, &rendered.normals)?;
    features.save(out.join("features.json"))?;
    let template_file = match cfg.perturbation {
        Some(p) => {
            make_template(&truth, &features, &p)?.save(out.join("template.json"))?;
            "template.json".to_string()
        }
        None => format!("{TRUTH_DIR}/surface.json"),
    };
    let run = serde_json::json!({
        "stack": MANIFEST,
        "template": template_file,
        "features": "features.json",
        "truth": format!("{TRUTH_DIR}/surface.json"),
    });
    io::write_json(out.join("reconstruct.json"), &run)
}

/// Runs the reconstruction and writes `surface.json`, `poses.json`,
/// `history.csv` and, with known truth, `eval.json`.
pub fn reconstruct(cfg: &RunConfig, out: &Path) -> sfms_core::Result<()> {
    let stack = load_stack(&cfg.stack)?;
    let template = BsplineSurface::load(&cfg.template)?;
    let features = FeatureTemplate::load(&cfg.features)?;
    let result = imls_run(&stack, &template, &features, &cfg.optimizer)?;
    fs::create_dir_all(out)?;
    result.surface.save(out.join("surface.json"))?;
    io::write_json(out.join("poses.json"), &result.poses)?;
    write_history(out.join("history.csv"), &result.history)?;
    if !result.converged {
        eprintln!(
            "warning: not converged after {} outer iterations; kept the best iterate",
            result.history.len()
        );
    }
    if let Some(truth) = &cfg.truth {
        let truth = BsplineSurface::load(truth)?;
        let opts = EvalOptions {
            density: cfg.eval_density,
            hausdorff: false,
        };
        let report = surface_distance(&truth, &result.surface, &features, &opts)?;
        io::write_json(out.join("eval.json"), &report)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_parsing() {
        assert_eq!(parse_density("3x4").unwrap(), UvGrid::new(3, 4));
        assert!(parse_density("1x4").is_err());
        assert!(parse_density("34").is_err());
    }

    #[test]
    fn unknown_flag_is_a_validation_error() {
        assert_eq!(run(["sfms", "eval", "--bogus"]), EXIT_VALIDATION);
        assert_eq!(run(["sfms"]), EXIT_VALIDATION);
        assert_eq!(run(["sfms", "--help"]), EXIT_OK);
    }

    #[test]
    fn missing_files_are_validation_errors() {
        let code = run(["sfms", "export", "--surface", "/nonexistent/s.json", "--density", "2x2", "--out", "/tmp/x.obj"]);
        assert_eq!(code, EXIT_VALIDATION);
    }

    #[test]
    fn runtime_failures_map_to_two() {
        let e = sfms_core::Error::RankDeficient { size: 3, null_dim: 1 };
        assert!(!e.is_validation());
    }
}
