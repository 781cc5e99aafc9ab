use std::path::PathBuf;
use std::process::ExitCode;

use arrayfront::features::{compute_gmvn_stats, gmvn, write_features, GmvnStats};
use arrayfront::masks::{average_masks, oracle_irm, TwoHeadMask};
use arrayfront::pipeline::{
    mix_manifest_overlaps, run_session, si_snr, simulate_conversation, write_simulated_session, ConversationPlan,
    Frontend, MaskInput, PipelineConfig,
};
use arrayfront::room::{OverlapPlacement, SessionOptions};
use arrayfront::ssl::localize;
use arrayfront::stft::{stft, MultichannelPcm};
use arrayfront::wav::{read_wav, write_wav, WavEncoding};
use clap::{Args, Parser, Subcommand, ValueEnum};

type CliResult = Result<ExitCode, Box<dyn std::error::Error>>;

/// Multichannel far-field front end: simulation, localization, mask-driven MVDR
/// beamforming and ASR feature extraction.
#[derive(Debug, Parser)]
#[command(name = "arrayfront", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Pipeline configuration, TOML or JSON (by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for simulation and overlap mixing.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Pre-masking angle in degrees.
    #[arg(long, global = true)]
    theta: Option<f64>,
    /// Localization grid spacing in degrees.
    #[arg(long, global = true)]
    resolution: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a turn-taking session and write WAVs and a manifest.
    Simulate(SimulateArgs),
    /// Mix pieces of other speakers' segments into every segment of a manifest.
    Overlap(OverlapArgs),
    /// Estimate the dominant direction of arrival of a multichannel WAV.
    Localize(LocalizeArgs),
    /// Write ideal ratio masks from a mixture and its target image.
    MasksOracle(MasksOracleArgs),
    /// Enhance a multichannel WAV with MVDR weights driven by a mask file.
    Beamform(BeamformArgs),
    /// Log-mel superframe features and GMVN statistics.
    #[command(subcommand)]
    Features(FeaturesCommand),
    /// Run bias estimation and enhancement over a session manifest.
    Session(SessionArgs),
    /// Scale-invariant SNR of an estimate against a reference.
    SiSnr(SiSnrArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "session")]
    session_id: String,
    #[arg(long, default_value_t = 3)]
    speakers: usize,
    #[arg(long, default_value_t = 2)]
    segments_per_speaker: usize,
    /// Reverberation time in seconds; sampled from the room when omitted.
    #[arg(long)]
    rt60: Option<f64>,
    /// Skip diffuse noise.
    #[arg(long)]
    no_noise: bool,
    /// Fixed mixing SNR in dB instead of a per-segment draw.
    #[arg(long)]
    snr: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Placement {
    End,
    Random,
}

#[derive(Debug, Args)]
struct OverlapArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    min_ratio: f64,
    #[arg(long, default_value_t = 0.5)]
    max_ratio: f64,
    #[arg(long, value_enum, default_value_t = Placement::End)]
    placement: Placement,
}

#[derive(Debug, Args)]
struct LocalizeArgs {
    wav: PathBuf,
    /// Write the score curve as CSV (azimuth,score).
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MasksOracleArgs {
    #[arg(long)]
    mixture: PathBuf,
    /// Reverberant target image aligned with the mixture.
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Store the channel-averaged mask instead of per-channel masks.
    #[arg(long)]
    average: bool,
}

#[derive(Debug, Args)]
struct BeamformArgs {
    wav: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Target direction in degrees; localized from the input when omitted.
    #[arg(long)]
    doa: Option<f64>,
    /// Competitor directions in degrees, comma separated.
    #[arg(long, value_delimiter = ',')]
    competitors: Vec<f64>,
    /// Also write the beamformer weights as an RST1 raster.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Also write log-mel superframe features as an RST1 raster.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Target image for SI-SNR diagnostics.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum FeaturesCommand {
    /// Features of a mono WAV (channel 0 of a multichannel file).
    Extract {
        wav: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Normalize with these GMV1 statistics.
        #[arg(long)]
        gmvn: Option<PathBuf>,
    },
    /// Global mean and variance over a set of feature rasters.
    Stats {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct SessionArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SiSnrArgs {
    estimate: PathBuf,
    reference: PathBuf,
    #[arg(long, default_value_t = 0)]
    estimate_channel: usize,
    #[arg(long, default_value_t = 0)]
    reference_channel: usize,
}

fn load_config(global: &GlobalArgs) -> Result<PipelineConfig, Box<dyn std::error::Error>> {
    let mut cfg = match &global.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(theta) = global.theta {
        cfg.theta = theta;
    }
    if let Some(res) = global.resolution {
        cfg.ssl.resolution = res;
    }
    arrayfront::ssl::azimuth_grid(cfg.ssl.resolution)?;
    cfg.validate()?;
    Ok(cfg)
}

fn print_json(value: &impl serde::Serialize) -> Result<(), Box<dyn std::error::Error>> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn channel(pcm: &MultichannelPcm, m: usize, what: &str) -> Result<Vec<f64>, Box<dyn std::error::Error>> {
    if m >= pcm.num_channels() {
        return Err(format!("{what} has {} channels, asked for channel {m}", pcm.num_channels()).into());
    }
    Ok(pcm.channel(m).to_vec())
}

fn simulate(args: SimulateArgs, cfg: &PipelineConfig, seed: u64) -> CliResult {
    let plan = ConversationPlan {
        num_speakers: args.speakers,
        segments_per_speaker: args.segments_per_speaker,
        rt60: args.rt60,
        ..Default::default()
    };
    let opts = SessionOptions {
        session_id: args.session_id.clone(),
        sample_rate: cfg.stft.sample_rate,
        add_noise: !args.no_noise,
        fixed_snr_db: args.snr,
        seed,
        ..Default::default()
    };
    let session = simulate_conversation(&plan, &cfg.geometry, &opts)?;
    for (index, reason) in &session.skipped {
        log::warn!("source {index} skipped: {reason}");
    }
    let manifest = write_simulated_session(&session, &args.session_id, &args.out)?;
    println!("{}", args.out.join("manifest.json").display());
    log::info!("{} segments written", manifest.segments.len());
    Ok(ExitCode::SUCCESS)
}

fn overlap(args: OverlapArgs, seed: u64) -> CliResult {
    let placement = match args.placement {
        Placement::End => OverlapPlacement::End,
        Placement::Random => OverlapPlacement::Random,
    };
    mix_manifest_overlaps(&args.manifest, &args.out, (args.min_ratio, args.max_ratio), placement, seed)?;
    println!("{}", args.out.join("manifest.json").display());
    Ok(ExitCode::SUCCESS)
}

fn localize_cmd(args: LocalizeArgs, cfg: &PipelineConfig) -> CliResult {
    let pcm = read_wav(&args.wav)?;
    let est = localize(&stft(&pcm, &cfg.stft)?, &cfg.geometry, &cfg.ssl)?;
    if let Some(path) = &args.curve {
        std::fs::write(path, est.curve_csv())?;
    }
    print_json(&serde_json::json!({
        "azimuth": est.azimuth,
        "score": est.score,
        "peak_to_mean": est.peak_to_mean(),
    }))?;
    Ok(ExitCode::SUCCESS)
}

fn masks_oracle(args: MasksOracleArgs, cfg: &PipelineConfig) -> CliResult {
    let mixture = read_wav(&args.mixture)?;
    let target = read_wav(&args.target)?;
    if mixture.num_channels() != target.num_channels() || mixture.len() != target.len() {
        return Err("mixture and target differ in shape".into());
    }
    let rest = MultichannelPcm::new(&mixture.samples() - &target.samples(), mixture.sample_rate())?;
    let mask = oracle_irm(&stft(&target, &cfg.stft)?, &stft(&rest, &cfg.stft)?, cfg.irm_exponent)?;
    let mask = if args.average { average_masks(&mask)? } else { mask };
    mask.save(&args.out)?;
    Ok(ExitCode::SUCCESS)
}

fn beamform(args: BeamformArgs, cfg: PipelineConfig) -> CliResult {
    let audio = read_wav(&args.wav)?;
    let mask = TwoHeadMask::load(&args.mask)?;
    let reference = args.reference.as_ref().map(read_wav).transpose()?;
    let frontend = Frontend::new(cfg)?;
    let doa = match args.doa {
        Some(d) => d,
        None => localize(&stft(&audio, &frontend.config.stft)?, &frontend.config.geometry, &frontend.config.ssl)?.azimuth,
    };
    let out = frontend.process_segment(&audio, doa, &args.competitors, MaskInput::Given(mask), reference.as_ref(), None)?;
    write_wav(&args.out, &out.enhanced, WavEncoding::Float32)?;
    if let Some(path) = &args.weights {
        out.weights.to_raster().write(path)?;
    }
    if let Some(path) = &args.features {
        write_features(path, out.features.view())?;
    }
    print_json(&out.diagnostics)?;
    Ok(ExitCode::SUCCESS)
}

fn features(cmd: FeaturesCommand, cfg: PipelineConfig) -> CliResult {
    match cmd {
        FeaturesCommand::Extract { wav, out, gmvn: stats } => {
            let pcm = read_wav(&wav)?;
            let mono = MultichannelPcm::mono(channel(&pcm, 0, "input")?, pcm.sample_rate())?;
            let frontend = Frontend::new(cfg)?;
            let raw = frontend.raw_features(&mono)?;
            let feats = match stats {
                Some(path) => gmvn(raw.view(), &GmvnStats::load(path)?)?,
                None => raw,
            };
            write_features(&out, feats.view())?;
            println!("{} {}", feats.nrows(), feats.ncols());
        }
        FeaturesCommand::Stats { files, out } => {
            let stats = compute_gmvn_stats(&files)?;
            stats.save(&out)?;
            println!("{} frames, {} dims ({})", stats.frame_count, stats.dim(), stats.source_tag);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn session(args: SessionArgs, cfg: &PipelineConfig) -> CliResult {
    let report = run_session(&args.manifest, cfg, &args.out)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let s = &report.summary.overall;
    println!(
        "{}: {} segments, {} failed, report at {}",
        report.session_id,
        s.segments,
        s.failed,
        args.out.join("report.json").display()
    );
    Ok(if report.failed() > 0 { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn si_snr_cmd(args: SiSnrArgs) -> CliResult {
    let est = read_wav(&args.estimate)?;
    let reference = read_wav(&args.reference)?;
    let value = si_snr(
        &channel(&est, args.estimate_channel, "estimate")?,
        &channel(&reference, args.reference_channel, "reference")?,
    )?;
    println!("{value:.4}");
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> CliResult {
    if let Some(jobs) = cli.global.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    let cfg = load_config(&cli.global)?;
    let seed = cli.global.seed;
    match cli.command {
        Command::Simulate(a) => simulate(a, &cfg, seed),
        Command::Overlap(a) => overlap(a, seed),
        Command::Localize(a) => localize_cmd(a, &cfg),
        Command::MasksOracle(a) => masks_oracle(a, &cfg),
        Command::Beamform(a) => beamform(a, cfg),
        Command::Features(c) => features(c, cfg),
        Command::Session(a) => session(a, &cfg),
        Command::SiSnr(a) => si_snr_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
