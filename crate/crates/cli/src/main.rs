use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;

use vista_core::distractor::{apply_track_masks, ingest_track_masks};
use vista_core::inpaint::BackendSpec;
use vista_core::metrics::testgen::{testgen, FixtureKind, TestgenConfig};
use vista_core::metrics::{psnr, score_directories, scores_csv};
use vista_core::pipeline::{viewpoint_sparsity_study, vista_run, GroundTruth, PipelineConfig};
use vista_core::render::render;
use vista_core::scene::{
    import_colmap, init_cloud, load_cloud, load_dataset, save_cloud, save_dataset, ImageBuffer, MaskMap, ScalarMap, SceneDataset,
};
use vista_core::train::{holdout_split, train, TrainConfig};
use vista_core::visibility::{fuse_mask, uncertainty_maps_for, UncertaintyConfig};
use vista_core::Exec;

#[derive(Parser)]
#[command(name = "vista", version, about = "Gaussian splatting with uncertainty-guided inpainting")]
struct Cli {
    /// Run every loop on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a cloud at every camera of a scene.
    Render {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also write 16-bit depth maps in millimetres.
        #[arg(long)]
        depth: bool,
    },
    /// Fit a cloud to a scene with the unweighted loss.
    Reconstruct {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TOML file with training settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Hold out two views in five and report their PSNR.
        #[arg(long)]
        holdout: bool,
    },
    /// Write uncertainty and fused-mask maps for every view.
    Uncertainty {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Only this view (by camera id); every view when omitted.
        #[arg(long)]
        view_id: Option<u32>,
        #[arg(long, default_value_t = 0.0)]
        theta: f64,
        #[arg(long, alias = "V", default_value_t = 4)]
        adjacent: usize,
        #[arg(long, default_value_t = 0.05)]
        tau_d: f64,
        /// Directory of tracker masks named like the scene images.
        #[arg(long)]
        track_masks: Option<PathBuf>,
    },
    /// Run the iterative reconstruction and inpainting loop.
    Pipeline {
        #[arg(long)]
        scene: PathBuf,
        /// TOML file mirroring the pipeline settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// mock, oracle (needs SCENE/clean) or an inpainting service URL.
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        track_masks: Option<PathBuf>,
    },
    /// Viewpoint-sparsity study: PSNR/SSIM against a full-view reference.
    Sparsity {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 7])]
        intervals: Vec<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a directory of images against references.
    Metrics {
        #[arg(long)]
        ref_dir: PathBuf,
        #[arg(long)]
        test_dir: PathBuf,
        /// Crop each pair to the bounding box of its mask.
        #[arg(long)]
        masks_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic fixture scene.
    Testgen {
        #[arg(long, value_parser = parse_kind)]
        kind: FixtureKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        /// Keep every n-th frame of the camera trajectory.
        #[arg(long, default_value_t = 1)]
        frame_stride: usize,
    },
    /// Convert a COLMAP text model into a scene directory.
    ImportColmap {
        /// Directory with cameras.txt, images.txt and points3D.txt.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn parse_kind(s: &str) -> std::result::Result<FixtureKind, String> {
    s.parse().map_err(|e: vista_core::Error| e.to_string())
}

/// Pipeline config file: the pipeline settings plus the backend selector.
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct PipelineFile {
    backend: Option<BackendSpec>,
    #[serde(flatten)]
    pipeline: PipelineConfig,
}

fn read_toml<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(T::default()),
    }
}

fn exec(sequential: bool) -> Exec {
    if sequential {
        Exec::Sequential
    } else {
        Exec::default()
    }
}

fn heatmap(map: &ScalarMap) -> MaskMap {
    MaskMap {
        width: map.width,
        height: map.height,
        data: map.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_scene(scene: &Path, track_masks: Option<&Path>) -> Result<SceneDataset> {
    let dataset = load_dataset(scene).with_context(|| format!("loading scene {}", scene.display()))?;
    match track_masks {
        Some(dir) => {
            let set = ingest_track_masks(dir, &dataset, "external")?;
            if !set.missing.is_empty() {
                log::warn!("{} views have no track mask", set.missing.len());
            }
            Ok(apply_track_masks(&dataset, &set)?)
        }
        None => Ok(dataset),
    }
}

fn load_clean(scene: &Path, dataset: &SceneDataset) -> Result<Option<Vec<ImageBuffer>>> {
    let dir = scene.join("clean");
    if !dir.is_dir() {
        return Ok(None);
    }
    dataset
        .views
        .iter()
        .map(|v| ImageBuffer::load_png(&dir.join(&v.name)).map_err(Into::into))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Clean images and scoring regions, when the scene ships them.
fn load_truth(scene: &Path, dataset: &SceneDataset) -> Result<Option<GroundTruth>> {
    let Some(clean) = load_clean(scene, dataset)? else {
        return Ok(None);
    };
    let dir = scene.join("regions");
    if !dir.is_dir() {
        return Ok(None);
    }
    let regions = dataset
        .views
        .iter()
        .map(|v| MaskMap::load_png(&dir.join(&v.name)).map_err(Into::into))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(GroundTruth { clean, regions }))
}

fn resolve_backend(flag: Option<&str>, file: Option<BackendSpec>) -> Result<BackendSpec> {
    match flag {
        Some(s) => Ok(s.parse()?),
        None => Ok(file.unwrap_or_default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let exec = exec(cli.sequential);
    match cli.command {
        Command::Render {
            cloud,
            scene,
            out_dir,
            depth,
        } => {
            let cloud = load_cloud(&cloud)?;
            let dataset = load_dataset(&scene)?;
            create_dir(&out_dir)?;
            for v in &dataset.views {
                let out = render(&cloud, &v.camera, [0.0; 3]);
                out.color.save_png(&out_dir.join(&v.name))?;
                if depth {
                    out.depth.save_png16_millimeters(&out_dir.join(format!("depth_{}", v.name)))?;
                }
            }
            println!("rendered {} views to {}", dataset.views.len(), out_dir.display());
        }
        Command::Reconstruct {
            scene,
            out,
            config,
            iterations,
            holdout,
        } => {
            let pipeline: PipelineConfig = read_toml(config.as_deref())?;
            let dataset = load_dataset(&scene)?;
            let (train_idx, heldout) = if holdout {
                holdout_split(dataset.views.len())
            } else {
                ((0..dataset.views.len()).collect(), Vec::new())
            };
            let train_ds = dataset.subset(&train_idx);
            let cloud = init_cloud(&train_ds.sfm_points, &pipeline.init)?;
            let weights: Vec<MaskMap> = train_ds
                .views
                .iter()
                .map(|v| MaskMap::filled(v.image.width, v.image.height, 1.0))
                .collect();
            let config = TrainConfig {
                iterations: iterations.unwrap_or(pipeline.initial_iterations),
                ..pipeline.train.clone()
            };
            let result = train(cloud, &train_ds, &weights, &config)?;
            save_cloud(&result.cloud, &out)?;
            println!("trained {} splats, saved to {}", result.cloud.len(), out.display());
            if !heldout.is_empty() {
                let mut sum = 0.0;
                for &i in &heldout {
                    let v = &dataset.views[i];
                    sum += psnr(&render(&result.cloud, &v.camera, config.background).color, &v.image)?;
                }
                println!("held-out PSNR {:.2} dB over {} views", sum / heldout.len() as f64, heldout.len());
            }
        }
        Command::Uncertainty {
            scene,
            cloud,
            out_dir,
            view_id,
            theta,
            adjacent,
            tau_d,
            track_masks,
        } => {
            let dataset = load_scene(&scene, track_masks.as_deref())?;
            let cloud = load_cloud(&cloud)?;
            let config = UncertaintyConfig {
                adjacent,
                tau_d,
                ..Default::default()
            };
            let views: Vec<usize> = match view_id {
                Some(id) => match dataset.views.iter().position(|v| v.camera.id == id) {
                    Some(i) => vec![i],
                    None => bail!("no view with camera id {id}"),
                },
                None => (0..dataset.views.len()).collect(),
            };
            let maps = uncertainty_maps_for(&cloud, &dataset, &views, &config, exec)?;
            let (u_dir, f_dir) = (out_dir.join("uncertainty"), out_dir.join("fused"));
            create_dir(&u_dir)?;
            create_dir(&f_dir)?;
            for (&i, u) in views.iter().zip(&maps) {
                let v = &dataset.views[i];
                let fused = fuse_mask(u, &v.mask, theta)?;
                let stem = Path::new(&v.name).with_extension("f32");
                heatmap(u).save_png(&u_dir.join(&v.name))?;
                u.write_f32_binary(&u_dir.join(&stem))?;
                fused.save_png(&f_dir.join(&v.name))?;
                ScalarMap::from(&fused).write_f32_binary(&f_dir.join(&stem))?;
            }
            println!("wrote {} uncertainty maps to {}", maps.len(), out_dir.display());
        }
        Command::Pipeline {
            scene,
            config,
            backend,
            out_dir,
            track_masks,
        } => {
            let file: PipelineFile = read_toml(config.as_deref())?;
            let mut pipeline = file.pipeline;
            pipeline.exec = exec;
            let spec = resolve_backend(backend.as_deref(), file.backend)?;
            let dataset = load_scene(&scene, track_masks.as_deref())?;
            let clean = if spec == BackendSpec::Oracle { load_clean(&scene, &dataset)? } else { None };
            let backend = spec.build(clean)?;
            let truth = load_truth(&scene, &dataset)?;
            let output = vista_run(&dataset, &pipeline, backend.as_ref(), truth.as_ref())?;
            create_dir(&out_dir)?;
            save_cloud(&output.initial_cloud, &out_dir.join("cloud_cycle0.ply"))?;
            for record in &output.records {
                let k = record.summary.k;
                save_cloud(&record.cloud, &out_dir.join(format!("cloud_cycle{k}.ply")))?;
                let base = out_dir.join(format!("cycle{k}"));
                let dirs = [base.join("inpainted"), base.join("uncertainty"), base.join("fused")];
                for d in &dirs {
                    create_dir(d)?;
                }
                for (i, v) in dataset.views.iter().enumerate() {
                    if let Some(img) = &record.inpainted[i] {
                        img.save_png(&dirs[0].join(&v.name))?;
                    }
                    if let Some(u) = &record.uncertainty[i] {
                        heatmap(u).save_png(&dirs[1].join(&v.name))?;
                    }
                    if let Some(m) = &record.fused[i] {
                        m.save_png(&dirs[2].join(&v.name))?;
                    }
                }
            }
            save_cloud(&output.cloud, &out_dir.join("cloud_final.ply"))?;
            let report = out_dir.join("report.csv");
            fs::write(&report, output.report.to_csv()).with_context(|| format!("writing {}", report.display()))?;
            print!("{}", output.report.to_csv());
        }
        Command::Sparsity {
            scene,
            intervals,
            config,
            backend,
            out,
        } => {
            let file: PipelineFile = read_toml(config.as_deref())?;
            let mut pipeline = file.pipeline;
            pipeline.exec = exec;
            let spec = resolve_backend(backend.as_deref(), file.backend)?;
            if spec == BackendSpec::Oracle {
                bail!("the sparsity study subsamples views, which the oracle backend cannot follow; use mock or a URL");
            }
            let dataset = load_dataset(&scene)?;
            let backend = spec.build(None)?;
            let table = viewpoint_sparsity_study(&dataset, &intervals, &pipeline, backend.as_ref())?;
            table.write_csv(&out)?;
            print!("{}", table.to_csv());
        }
        Command::Metrics {
            ref_dir,
            test_dir,
            masks_dir,
            out,
        } => {
            let scores = score_directories(&ref_dir, &test_dir, masks_dir.as_deref())?;
            if scores.is_empty() {
                bail!("no image pairs were scored");
            }
            let csv = scores_csv(&scores);
            fs::write(&out, &csv).with_context(|| format!("writing {}", out.display()))?;
            print!("{csv}");
        }
        Command::Testgen {
            kind,
            seed,
            out_dir,
            width,
            height,
            frame_stride,
        } => {
            let config = TestgenConfig {
                seed,
                width,
                height,
                frame_stride,
                ..Default::default()
            };
            let fixture = testgen(kind, &config, &out_dir)?;
            println!(
                "wrote {} views and {} points to {}",
                fixture.dataset.views.len(),
                fixture.dataset.sfm_points.len(),
                out_dir.display()
            );
        }
        Command::ImportColmap { model, out_dir } => {
            let dataset = import_colmap(&model)?;
            save_dataset(&dataset, &out_dir)?;
            println!("imported {} views to {}", dataset.views.len(), out_dir.display());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
