use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, warn};

use pshop::pipeline::{
    count_params, estimate_flops, evaluate, ingest, make_phantoms, nifti, overlay, predict, train, with_workers,
    write_case, Case, Format, PhantomParams, PipelineConfig, SegmentationModel, Task,
};

#[derive(Parser)]
#[command(name = "pshop", version, about = "Volumetric prostate segmentation with successive subspace learning")]
struct Cli {
    /// Worker threads (0 = all cores). Results do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a model on every annotated case in a directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        task: Task,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Segment every case in a directory.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        emit_overlays: bool,
        /// Whole-gland model used to centre the zonal crop.
        #[arg(long)]
        gland_model: Option<PathBuf>,
    },
    /// Score a model on annotated cases and write a JSON report.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        gland_model: Option<PathBuf>,
    },
    /// Write synthetic phantoms with masks.
    Phantoms {
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, num_args = 3, value_names = ["H", "W", "C"])]
        dims: Option<Vec<usize>>,
        #[arg(long)]
        zonal: bool,
        #[arg(long, value_enum, default_value = "raw")]
        format: FormatArg,
    },
    /// Print parameter count, FLOPs and the energy tree of a model.
    Inspect {
        #[arg(long)]
        model: PathBuf,
        /// Input grid for the FLOP estimate; defaults to the model's in-plane size by 32 slices.
        #[arg(long, num_args = 3, value_names = ["H", "W", "C"])]
        dims: Option<Vec<usize>>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FormatArg {
    Raw,
    Nifti,
    NiftiGz,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Raw => Format::Raw,
            FormatArg::Nifti => Format::Nifti,
            FormatArg::NiftiGz => Format::NiftiGz,
        }
    }
}

fn load_cases(dir: &Path) -> pshop::Result<Vec<Case>> {
    let ingested = ingest(dir)?;
    for r in &ingested.rejected {
        warn!("skipping {}: {}", r.id, r.error);
    }
    info!("{} cases from {}", ingested.cases.len(), dir.display());
    Ok(ingested.cases)
}

fn load_gland(path: &Option<PathBuf>) -> pshop::Result<Option<SegmentationModel>> {
    path.as_deref().map(SegmentationModel::load).transpose()
}

fn dims3(d: &Option<Vec<usize>>) -> Option<[usize; 3]> {
    d.as_ref().map(|v| [v[0], v[1], v[2]])
}

fn run(cmd: Cmd) -> pshop::Result<()> {
    match cmd {
        Cmd::Train {
            data,
            task,
            config,
            out,
            seed,
        } => {
            let mut cfg = match config {
                Some(p) => PipelineConfig::load(&p)?,
                None => PipelineConfig::for_task(task),
            };
            cfg.task = task;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let cases = load_cases(&data)?;
            let (model, report) = train(&cases, &cfg)?;
            for h in &report.hops {
                info!(
                    "hop {} {:?}: {} features, {} training voxels, DSC {:.4} -> {:?}",
                    h.hop, h.dims, h.feature_dim, h.n_train, h.dsc_main, h.dsc_refined
                );
            }
            model.save(&out)?;
            println!("saved {} ({} parameters)", out.display(), count_params(&model).total);
        }
        Cmd::Predict {
            model,
            data,
            out,
            emit_overlays,
            gland_model,
        } => {
            let model = SegmentationModel::load(&model)?;
            let gland = load_gland(&gland_model)?;
            let cases = load_cases(&data)?;
            std::fs::create_dir_all(&out)?;
            let mut failures = 0;
            for (case, pred) in cases.iter().zip(predict(&model, &cases, gland.as_ref())) {
                match pred {
                    Ok(p) => {
                        let path = out.join(format!("{}_pred.nii.gz", p.id));
                        nifti::write_labels(&path, &p.labels, case.spacing().unwrap_or([1.0; 3]))?;
                        if emit_overlays {
                            overlay::write_overlays(&out.join("overlays"), &p.id, &case.image, &p.labels)?;
                        }
                        println!("{}", path.display());
                    }
                    Err(e) => {
                        failures += 1;
                        warn!("{e}");
                    }
                }
            }
            if failures > 0 {
                warn!("{failures} case(s) failed");
            }
        }
        Cmd::Eval {
            model,
            data,
            report,
            gland_model,
        } => {
            let model = SegmentationModel::load(&model)?;
            let gland = load_gland(&gland_model)?;
            let cases = load_cases(&data)?;
            let r = evaluate(&model, &cases, gland.as_ref());
            for c in &r.cases {
                println!("{}: {:.4}", c.id, c.mean_dsc);
            }
            for (id, e) in &r.failed {
                warn!("{id}: {e}");
            }
            println!("mean DSC {:.4} ± {:.4} over {} cases", r.mean_dsc, r.std_dsc, r.cases.len());
            r.save(&report)?;
        }
        Cmd::Phantoms {
            n,
            seed,
            out,
            dims,
            zonal,
            format,
        } => {
            let mut params = PhantomParams {
                zonal,
                ..PhantomParams::default()
            };
            if let Some(d) = dims3(&dims) {
                params.dims = d;
            }
            std::fs::create_dir_all(&out)?;
            for case in make_phantoms(n, seed, &params)? {
                write_case(&out, &case, format.into())?;
            }
            println!("wrote {n} phantoms to {}", out.display());
        }
        Cmd::Inspect { model, dims } => {
            let model = SegmentationModel::load(&model)?;
            let [h, w] = model.config.preprocess.in_plane;
            let dims = dims3(&dims).unwrap_or([h, w, 32]);
            let p = count_params(&model);
            let f = estimate_flops(&model, dims);
            println!("task {:?}, seed {}, format v{}", model.task, model.seed, model.version);
            println!("parameters: {} (saab {}, trees {})", p.total, p.saab, p.trees);
            println!(
                "FLOPs at {:?}: {:.3e} (saab {:.2e}, pooling {:.2e}, trees {:.2e}, softmax {:.2e}, upsampling {:.2e}, postprocess {:.2e})",
                f.input_dims,
                f.total as f64,
                f.saab as f64,
                f.pooling as f64,
                f.trees as f64,
                f.softmax as f64,
                f.upsampling as f64,
                f.postprocess as f64
            );
            println!("encoder channels per hop: {:?}", model.encoder.channels());
            for hop in &model.encoder.hops {
                println!("hop {} (threshold {}):", hop.hop, hop.energy_threshold);
                for n in &hop.nodes {
                    println!(
                        "  parent {:>3} child {:>3} energy {:.6e}{}",
                        n.parent_channel,
                        n.component_index,
                        n.energy,
                        if n.kept { "  kept" } else { "" }
                    );
                }
            }
            for hop in &model.decoder.hops {
                let trees: usize = std::iter::once(&hop.main)
                    .chain(&hop.refine)
                    .map(|e| e.all_trees().count())
                    .sum();
                println!("decoder hop {}: {} ensembles, {trees} trees", hop.hop, 1 + hop.refine.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match with_workers(cli.workers, || run(cli.cmd)).and_then(|r| r) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
