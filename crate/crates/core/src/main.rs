use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use splatlight::config::PipelineConfig;
use splatlight::pipeline;
use splatlight::Error;

/// Position-aware relighting for Gaussian-splat scenes.
#[derive(Parser)]
#[command(name = "splatlight", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the diffuse exponent.
    #[arg(long)]
    gamma: Option<f64>,
    /// Override the key-frame stride.
    #[arg(long)]
    stride: Option<usize>,
    /// Override the epipolar band (pixels).
    #[arg(long)]
    band: Option<f64>,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the init-latent noise level in [0,1].
    #[arg(long)]
    noise_level: Option<f64>,
}

#[derive(Args, Clone)]
struct PromptArgs {
    /// Relighting instruction forwarded to the answer adapter.
    #[arg(long)]
    instruction: Option<String>,
    /// Literal adapter answer ("Light is on the <dir> of the <object>");
    /// skips the adapter.
    #[arg(long)]
    answer: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the lighting prior from an answer (or via the answer adapter).
    ParsePrompt {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        prompt: PromptArgs,
    },
    /// Resolve the 3D light position from the saved prior, mask, and depth.
    LightPosition {
        #[command(flatten)]
        common: Common,
    },
    /// Compute per-view diffuse illumination maps.
    IllumMaps {
        #[command(flatten)]
        common: Common,
    },
    /// Encode init latents and run the relighting backend.
    Relight {
        #[command(flatten)]
        common: Common,
    },
    /// Fine-tune scene color/opacity against relit renders.
    Finetune {
        #[command(flatten)]
        common: Common,
    },
    /// Render all views of the scene.
    Render {
        #[command(flatten)]
        common: Common,
    },
    /// Overflow diagnostics for the epipolar constraint across resolutions.
    DiagnoseEpipolar {
        #[command(flatten)]
        common: Common,
    },
    /// Full circulation: parse-prompt, light-position, illum-maps, relight,
    /// finetune.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        prompt: PromptArgs,
    },
}

fn load_config(common: &Common) -> Result<PipelineConfig, Error> {
    let mut config = PipelineConfig::load(&common.config)?;
    if let Some(gamma) = common.gamma {
        config.gamma = gamma;
    }
    if let Some(stride) = common.stride {
        config.key_stride = stride;
    }
    if let Some(band) = common.band {
        config.epipolar_band = band;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(noise) = common.noise_level {
        config.noise_level = noise;
    }
    config.validate()?;
    if config.threads > 0 {
        // Ignore failure: the global pool may already exist.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build_global();
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::ParsePrompt { common, prompt } => {
            let config = load_config(&common)?;
            let saved = pipeline::cmd_parse_prompt(
                &config,
                prompt.instruction.as_deref(),
                prompt.answer.as_deref(),
            )?;
            println!(
                "{}",
                serde_json::to_string(&saved).map_err(|e| Error::Format(e.to_string()))?
            );
        }
        Command::LightPosition { common } => {
            let config = load_config(&common)?;
            let state = pipeline::cmd_light_position(&config)?;
            println!(
                "light position (view {} camera coords): [{:.6}, {:.6}, {:.6}]",
                state.reference_view,
                state.camera_position[0],
                state.camera_position[1],
                state.camera_position[2]
            );
        }
        Command::IllumMaps { common } => {
            let config = load_config(&common)?;
            let paths = pipeline::cmd_illum_maps(&config)?;
            println!("wrote {} illumination maps", paths.len());
        }
        Command::Relight { common } => {
            let config = load_config(&common)?;
            let paths = pipeline::cmd_relight(&config)?;
            println!("wrote {} relit views", paths.len());
        }
        Command::Finetune { common } => {
            let config = load_config(&common)?;
            let outcome = pipeline::cmd_finetune(&config)?;
            if let Some(err) = outcome.aborted {
                eprintln!("fine-tuning aborted after {} steps (partial artifacts saved)", outcome.log.len());
                return Err(*err);
            }
            let last = outcome.log.last().map(|e| e.total).unwrap_or(0.0);
            println!(
                "fine-tuned {} steps across {} dataset updates, final loss {last:.6}",
                outcome.log.len(),
                outcome.dataset_updates.len()
            );
        }
        Command::Render { common } => {
            let config = load_config(&common)?;
            let paths = pipeline::cmd_render(&config)?;
            println!("rendered {} views", paths.len());
        }
        Command::DiagnoseEpipolar { common } => {
            let config = load_config(&common)?;
            let output = pipeline::cmd_diagnose_epipolar(&config)?;
            print!("{}", pipeline::diagnose_table(&output));
        }
        Command::Pipeline { common, prompt } => {
            let config = load_config(&common)?;
            let outcome = pipeline::cmd_pipeline(
                &config,
                prompt.instruction.as_deref(),
                prompt.answer.as_deref(),
            )?;
            if let Some(err) = outcome.aborted {
                eprintln!("pipeline aborted during fine-tuning (partial artifacts saved)");
                return Err(*err);
            }
            println!(
                "pipeline complete: {} steps, {} dataset updates",
                outcome.log.len(),
                outcome.dataset_updates.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
