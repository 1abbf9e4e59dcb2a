use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use dualcam_core::fusionnet::{FusionNetParams, ModelVariant};
use dualcam_core::imagecore::{read_image, read_manifest, read_mask, ImageFormat};
use dualcam_core::pipeline::{deblur, evaluate, train_model, training_samples, Ablation, FlowResolution, PipelineConfig, Shot};
use dualcam_core::streamsim::{
    generate_motion_scenario, missed_fraction_closed_form, simulate_session, svm_train, synthetic_training_set, Scenario,
};
use dualcam_core::synth::{generate_dataset, list_triplets, read_triplet_meta};

const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "dualcam", version, about = "Dual-camera face deblurring toolkit")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// JSON file with any subset of the module configurations.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic (ground truth, blurry source, reference) triplets.
    Synthesize {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        count: usize,
    },
    /// Train a fusion network on a directory of triplets.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Output parameter blob; the shape manifest goes next to it.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured step count.
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        variant: VariantFlags,
    },
    /// Deblur one shot directory.
    Deblur {
        /// Directory holding source.pfm, reference.pfm, face_mask.pfm and
        /// either manifest.json or a triplet meta.json.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        ablation: AblationFlags,
    },
    /// Deblur every triplet of a dataset and write metrics.csv.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write every intermediate of every triplet.
        #[arg(long)]
        dump_intermediates: bool,
        #[command(flatten)]
        ablation: AblationFlags,
    },
    /// Simulate a capture session with adaptive UW streaming.
    SimulateStream {
        /// Scenario JSON; generated from the config when absent.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Synthetic samples used to train the motion classifier.
        #[arg(long, default_value_t = 2000)]
        svm_samples: usize,
    },
}

#[derive(Args, Clone, Copy)]
struct VariantFlags {
    #[arg(long)]
    no_color_loss_model: bool,
    #[arg(long)]
    no_highlight_model: bool,
    #[arg(long)]
    no_reference: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FlowRes {
    Full,
    Quarter,
}

#[derive(Args, Clone, Copy)]
struct AblationFlags {
    #[command(flatten)]
    variant: VariantFlags,
    #[arg(long)]
    no_occlusion_mask: bool,
    #[arg(long, value_enum, default_value = "quarter")]
    flow_resolution: FlowRes,
    #[arg(long)]
    no_mask_smoothing: bool,
    #[arg(long)]
    no_polyblur: bool,
}

impl VariantFlags {
    fn variant(&self) -> ModelVariant {
        ModelVariant {
            color_loss: !self.no_color_loss_model,
            highlights: !self.no_highlight_model,
            reference: !self.no_reference,
        }
    }
}

impl AblationFlags {
    fn ablation(&self) -> Ablation {
        Ablation {
            no_color_loss_model: self.variant.no_color_loss_model,
            no_highlight_model: self.variant.no_highlight_model,
            no_reference: self.variant.no_reference,
            no_occlusion_mask: self.no_occlusion_mask,
            flow_resolution: match self.flow_resolution {
                FlowRes::Full => FlowResolution::Full,
                FlowRes::Quarter => FlowResolution::Quarter,
            },
            no_mask_smoothing: self.no_mask_smoothing,
            no_polyblur: self.no_polyblur,
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn read_shot(dir: &Path) -> Result<Shot> {
    let manifest_path = dir.join("manifest.json");
    let manifest = if manifest_path.is_file() {
        read_manifest(&manifest_path)?
    } else {
        read_triplet_meta(dir)?.manifest
    };
    Ok(Shot {
        source: read_image(&dir.join("source.pfm"), ImageFormat::Pfm)?,
        reference: read_image(&dir.join("reference.pfm"), ImageFormat::Pfm)?,
        face_mask: read_mask(&dir.join("face_mask.pfm"))?,
        manifest,
    })
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Synthesize { out, count } => {
            let dirs = generate_dataset(&out, count, &cfg.scene, cli.seed)?;
            println!("wrote {} triplets to {}", dirs.len(), out.display());
        }
        Command::Train {
            data,
            out,
            steps,
            variant,
        } => {
            let mut cfg = cfg;
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            let dirs = list_triplets(&data)?;
            let variant = variant.variant();
            info!("preparing {} triplets", dirs.len());
            let samples = training_samples(&dirs, &cfg, &variant)?;
            info!("training {} steps", cfg.train.steps);
            let outcome = train_model(&samples, &cfg, variant, cli.seed)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            outcome.params.save(&out)?;
            if let (Some(first), Some(last)) = (outcome.history.first(), outcome.history.last()) {
                println!("loss {:.5} -> {:.5} over {} steps", first.total, last.total, outcome.history.len());
            }
            println!("saved parameters to {}", out.display());
        }
        Command::Deblur {
            input,
            params,
            out,
            ablation,
        } => {
            let params = FusionNetParams::load(&params)?;
            let ablation = ablation.ablation();
            ablation.check_model(&params.variant)?;
            let shot = read_shot(&input)?;
            let result = deblur(&shot, &params, &cfg, &ablation)?;
            result.write(&out)?;
            println!("{:?}: fusion {}", result.decision.reason, if result.decision.use_fusion { "used" } else { "skipped" });
        }
        Command::Evaluate {
            data,
            params,
            out,
            dump_intermediates,
            ablation,
        } => {
            let params = FusionNetParams::load(&params)?;
            let s = evaluate(&data, &params, &cfg, &ablation.ablation(), &out, dump_intermediates)?;
            println!(
                "{}: {} triplets, source {:.2} dB, fused {:.2} dB, blended {:.2} dB, final {:.2} dB, fusion rate {:.3}",
                s.ablation,
                s.records.len(),
                s.mean_source_psnr,
                s.mean_fused_psnr,
                s.mean_blended_psnr,
                s.mean_final_psnr,
                s.fusion_rate
            );
            println!("metrics in {}", s.csv_path.display());
        }
        Command::SimulateStream {
            scenario,
            out,
            svm_samples,
        } => {
            let scenario = match scenario {
                Some(p) => {
                    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    Scenario::from_json(&text)?
                }
                None => generate_motion_scenario(&cfg.motion_scenario, &cfg.session, cli.seed)?,
            };
            let set = synthetic_training_set(svm_samples, &cfg.motion_scenario.features, cli.seed);
            let model = svm_train(&set, &cfg.svm)?;
            let report = simulate_session(&scenario, &model, &cfg.session, cli.seed)?;
            fs::create_dir_all(&out)?;
            let report_path = out.join("report.json");
            fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n")
                .with_context(|| format!("writing {}", report_path.display()))?;
            let timeline = out.join("timeline.csv");
            report.write_timeline_csv(fs::File::create(&timeline)?)?;
            let [lo, hi] = cfg.motion_scenario.motion_frames;
            println!(
                "{} frames, {} presses, missed {:.4} (renewal estimate {:.4} for generated sessions), duty cycle {:.3}",
                report.frames,
                report.presses,
                report.missed_fraction(),
                missed_fraction_closed_form(cfg.session.delay_frames, (lo + hi) as f64 / 2.0),
                report.duty_cycle
            );
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err
        .chain()
        .find_map(|e| e.downcast_ref::<dualcam_core::Error>())
        .is_some_and(|e| e.is_validation());
    if validation {
        EXIT_VALIDATION
    } else {
        EXIT_RUNTIME
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
