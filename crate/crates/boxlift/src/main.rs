//! `boxlift` command-line interface.

use std::error::Error;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use boxlift::manifest::load_manifest;
use boxlift::pipeline::{annotate_image, PipelineConfig};
use boxlift::schema::{load_annotations, save_annotations_atomic, AnnotationFile, BoxJson, Provenance};
use boxlift::service::{serve, Store};
use boxlift::synth::{generate_synthetic_scene, ShapeKind, SynthConfig};
use boxlift_core::io::write_ply;
use boxlift_core::metrics::{default_thresholds, evaluate_ap, evaluate_relative, iou3d, parse_thresholds, EvalResult, ScaleGrid};
use clap::{Parser, Subcommand};

type CliResult = Result<(), Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "boxlift", version, about = "Metric 3D box annotation and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the annotation pipeline on one or more image manifests.
    Annotate {
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write each image's metric point map as `<dir>/<image_id>.ply`.
        #[arg(long)]
        scenes: Option<PathBuf>,
    },
    /// AP/AR over IoU thresholds.
    Eval {
        detections: PathBuf,
        ground_truth: PathBuf,
        /// `start:step:end`, inclusive.
        #[arg(long, default_value = "0.05:0.05:0.50")]
        thresholds: String,
        #[arg(long)]
        json: bool,
    },
    /// AP/AR after fitting one global scale to the detections.
    EvalRel {
        detections: PathBuf,
        ground_truth: PathBuf,
        /// `s_min:s_max:n_points`, log-uniform.
        #[arg(long, default_value = "0.1:10:201")]
        grid: String,
        #[arg(long, default_value = "0.05:0.05:0.50")]
        thresholds: String,
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic scene with known ground truth.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        objects: usize,
        #[arg(short, long)]
        output: PathBuf,
        /// Comma-separated subset of box,sphere,cylinder.
        #[arg(long, default_value = "box,sphere,cylinder")]
        shapes: String,
        #[arg(long)]
        match_noise_px: Option<f64>,
        #[arg(long)]
        outlier_rate: Option<f64>,
        #[arg(long)]
        depth_noise: Option<f64>,
    },
    /// Serve the review API for an annotation file.
    Serve {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Exact IoU of two boxes given as `{"center", "dims", "R"}` JSON files.
    Iou { a: PathBuf, b: PathBuf },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LOG_LEVEL", "warn")).init();
    if let Err(e) = run(Cli::parse().command) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Annotate { manifests, output, seed, scenes } => annotate(&manifests, &output, seed, scenes.as_deref()),
        Command::Eval { detections, ground_truth, thresholds, json } => {
            let (dets, gts) = load_pair(&detections, &ground_truth)?;
            let result = evaluate_ap(&dets.detections()?, &gts.ground_truth()?, &thresholds_arg(&thresholds)?);
            if json {
                println!("{}", serde_json::to_string_pretty(&result)?);
            } else {
                print_eval(&result);
            }
            Ok(())
        }
        Command::EvalRel { detections, ground_truth, grid, thresholds, json } => {
            let (dets, gts) = load_pair(&detections, &ground_truth)?;
            let result = evaluate_relative(&dets.detections()?, &gts.ground_truth()?, &thresholds_arg(&thresholds)?, &ScaleGrid::parse(&grid)?)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&result)?);
            } else {
                println!("scale  {:.6}  ({} pairs)", result.scale, result.n_pairs);
                print_eval(&result.result);
            }
            Ok(())
        }
        Command::Synth { seed, objects, output, shapes, match_noise_px, outlier_rate, depth_noise } => {
            let defaults = SynthConfig::default();
            let shapes = shapes.split(',').map(|s| ShapeKind::parse(s).ok_or_else(|| format!("unknown shape {s:?}"))).collect::<Result<Vec<_>, _>>()?;
            let cfg = SynthConfig {
                n_objects: objects,
                shapes,
                match_noise_px: match_noise_px.unwrap_or(defaults.match_noise_px),
                outlier_rate: outlier_rate.unwrap_or(defaults.outlier_rate),
                depth_noise: depth_noise.unwrap_or(defaults.depth_noise),
                ..defaults
            };
            let scene = generate_synthetic_scene(seed, &cfg)?;
            let manifest = scene.write(&output)?;
            println!("{}", manifest.display());
            Ok(())
        }
        Command::Serve { annotations, scenes, addr } => {
            let store = Store::open(&annotations, &scenes)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(store, &addr))?;
            Ok(())
        }
        Command::Iou { a, b } => {
            let read =
                |p: &Path| -> Result<BoxJson, Box<dyn Error>> { Ok(serde_json::from_slice(&fs::read(p).map_err(|e| format!("{}: {e}", p.display()))?)?) };
            println!("{:.12}", iou3d(&read(&a)?.to_box()?, &read(&b)?.to_box()?));
            Ok(())
        }
    }
}

fn thresholds_arg(text: &str) -> Result<Vec<f64>, Box<dyn Error>> {
    if text.is_empty() {
        return Ok(default_thresholds());
    }
    Ok(parse_thresholds(text)?)
}

fn load_pair(dets: &Path, gts: &Path) -> Result<(AnnotationFile, AnnotationFile), Box<dyn Error>> {
    Ok((load_annotations(dets)?, load_annotations(gts)?))
}

fn print_eval(r: &EvalResult) {
    if r.empty {
        println!("(no detections or no ground truth)");
    }
    println!("AP3D  {:.4}", r.ap);
    println!("AR3D  {:.4}", r.ar);
    for t in &r.per_threshold {
        println!("  IoU>={:.2}  AP {:.4}  AR {:.4}", t.threshold, t.ap, t.ar);
    }
    for (cat, c) in &r.per_category {
        println!("  [{cat}]  AP {:.4}  AR {:.4}", c.ap, c.ar);
    }
}

fn annotate(manifests: &[PathBuf], output: &Path, seed: u64, scenes: Option<&Path>) -> CliResult {
    let cfg = PipelineConfig::with_seed(seed);
    let mut doc = AnnotationFile { images: Vec::new(), annotations: Vec::new(), audit: Vec::new() };
    if let Some(dir) = scenes {
        fs::create_dir_all(dir)?;
    }
    for path in manifests {
        let manifest = load_manifest(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let out = annotate_image(&manifest, base, &cfg)?;
        let boxed = out.annotations.iter().filter(|a| a.provenance == Provenance::Auto).count();
        println!("{}: {boxed}/{} objects boxed", manifest.image_id, out.annotations.len());
        for a in out.annotations.iter().filter(|a| a.reason.is_some()) {
            println!("  {} rejected: {}", a.id, a.reason.as_deref().unwrap_or(""));
        }
        if let (Some(dir), Some(points)) = (scenes, &out.scene) {
            let path = dir.join(format!("{}.ply", manifest.image_id));
            let verts: Vec<_> = points.valid_points().copied().collect();
            write_ply(BufWriter::new(File::create(&path)?), &verts, &[])?;
        }
        doc.images.push(out.image);
        doc.annotations.extend(out.annotations);
    }
    doc.validate()?;
    save_annotations_atomic(output, &doc, None)?;
    Ok(())
}
