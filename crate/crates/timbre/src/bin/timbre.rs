use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use timbre::analysis::{self, PointRef};
use timbre::config::RunConfig;
use timbre::fixture::{self, FixtureConfig};
use timbre::io::{read_series, write_json, write_wav_f32};
use timbre::pipeline::{self, Corpus, TrainJob, TARGET_FILE};
use timbre::render::SpectralRenderer;
use timbre::{Error, Result};
use timbre_core::descriptors::DescriptorKind;
use timbre_core::latent::{fit_pca, GridConfig, PcaProjection};
use timbre_core::ratings::MissingPairPolicy;
use timbre_core::regularizer::TargetNormalization;
use timbre_core::synthpath::{NeighborhoodSpec, Sampling, Subspace, TargetSeries};
use timbre_core::TrainConfig;

#[derive(Parser)]
#[command(name = "timbre", version, about = "Perceptually regularized latent spaces for instrument sounds")]
struct Cli {
    /// TOML run configuration; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config file and TIMBRE_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic WAV corpus and dissimilarity ratings.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 12)]
        classes: usize,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
    },
    /// Analyse a WAV corpus into a frame store, manifest and target space.
    Prepare {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `prepare.transform`.
        #[arg(long)]
        transform: Option<String>,
    },
    /// Build the timbre space from a ratings table.
    Target {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dims: Option<usize>,
        /// Fill unrated pairs with the grand mean instead of failing.
        #[arg(long)]
        impute: bool,
    },
    /// Train a model on a prepared corpus.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Final checkpoint.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// 5000 + 1000 epochs.
        #[arg(long)]
        paper_scale: bool,
        /// Skip the regularized stage's target (alpha is forced to 0).
        #[arg(long)]
        no_target: bool,
        /// Row-normalize the target affinities like the latent ones.
        #[arg(long)]
        symmetric_norm: bool,
    },
    /// Test likelihood, MSE, distance-KL and class PCA coordinates.
    #[command(alias = "evaluate")]
    Report {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
        /// Per-class PCA coordinates as CSV.
        #[arg(long)]
        classes_csv: Option<PathBuf>,
    },
    /// Encode WAVs of unseen classes into the latent space.
    Project {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, required = true, num_args = 1..)]
        wav: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interpolate between two points and render the path.
    Path {
        #[command(flatten)]
        model: ModelArgs,
        /// WAV file, JSON latent vector or corpus class name.
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        #[arg(long, default_value_t = 6)]
        steps: usize,
        #[arg(long)]
        render: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Descriptor fields over planes of the latent PCA view.
    Grid {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_delimiter = ',', default_values_t = GridConfig::default().planes)]
        planes: Vec<f64>,
        #[arg(long, default_value_t = 50)]
        size: usize,
        #[arg(long, default_value_t = 1.0)]
        extent: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Spectral centroid and bandwidth of every corpus frame.
    Describe {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Follow a descriptor trajectory through the latent space.
    DescSynth {
        #[arg(long, visible_alias = "model")]
        checkpoint: PathBuf,
        /// Prepared directory or its manifest.
        #[arg(long, visible_alias = "frames")]
        data: PathBuf,
        /// WAV file, JSON latent vector or corpus class name.
        #[arg(long)]
        origin: String,
        #[arg(long, value_enum, default_value_t = Descriptor::Centroid)]
        descriptor: Descriptor,
        /// Target descriptor series, one value per line.
        #[arg(long = "target")]
        series: PathBuf,
        /// Treat the target as absolute descriptor values.
        #[arg(long)]
        absolute: bool,
        /// Steps when the target is a shape.
        #[arg(long, default_value_t = 20)]
        steps: usize,
        /// Descriptor units per unit of the shape.
        #[arg(long, default_value_t = 1.0)]
        span: f64,
        #[arg(long, default_value_t = 0.1)]
        radius: f64,
        #[arg(long, default_value_t = 64)]
        candidates: usize,
        #[arg(long, value_enum, default_value_t = SamplingArg::Gaussian)]
        sampling: SamplingArg,
        #[arg(long, value_enum, default_value_t = SubspaceArg::Pca)]
        subspace: SubspaceArg,
        #[arg(long, default_value_t = 1)]
        beam: usize,
        #[arg(long)]
        render: Option<PathBuf>,
        /// Per-step CSV of targets, achieved values and costs.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the latent and target neighbour distributions as CSV.
    InspectReg {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Prepared directory or its manifest.
    #[arg(long, visible_alias = "frames")]
    data: PathBuf,
    /// Target space; defaults to the one next to the manifest.
    #[arg(long)]
    target: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, visible_alias = "model")]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Descriptor {
    Centroid,
    Bandwidth,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplingArg {
    Gaussian,
    Grid,
}

#[derive(Clone, Copy, ValueEnum)]
enum SubspaceArg {
    Pca,
    Full,
}

impl DataArgs {
    fn corpus(&self) -> Result<Corpus> {
        Corpus::load(&self.data)
    }

    fn target_path(&self) -> Option<PathBuf> {
        if let Some(t) = &self.target {
            return Some(t.clone());
        }
        let dir = if self.data.is_dir() { self.data.clone() } else { self.data.parent()?.to_path_buf() };
        let p = dir.join(TARGET_FILE);
        p.is_file().then_some(p)
    }

    fn target(&self) -> Result<Option<timbre_core::ratings::TimbreTarget>> {
        self.target_path().map(|p| pipeline::load_target(&p)).transpose()
    }
}

fn renderer(ck: &timbre::io::Checkpoint, cfg: &RunConfig) -> SpectralRenderer {
    SpectralRenderer::new(ck.spec, ck.norm_constant, &cfg.render)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    match cli.command {
        Command::Fixture { out, classes, samples, duration } => {
            let summary = fixture::generate(
                &FixtureConfig {
                    classes,
                    samples_per_class: samples,
                    seed: cfg.seed,
                    duration_s: duration,
                    ..FixtureConfig::default()
                },
                &out,
            )?;
            log::info!("{} WAVs, {} rated pairs", summary.wav_count, summary.rated_pairs);
        }
        Command::Prepare { corpus, ratings, out, transform } => {
            if let Some(t) = transform {
                cfg.prepare.transform = t;
            }
            let p = pipeline::prepare(&corpus, &out, Some(&ratings), &cfg)?;
            log::info!(
                "{} frames ({} skipped), norm constant {}",
                p.manifest.entries.len(),
                p.manifest.skipped.len(),
                p.manifest.norm_constant
            );
        }
        Command::Target { ratings, out, dims, impute } => {
            if let Some(d) = dims {
                cfg.target.dims = d;
            }
            if impute {
                cfg.target.missing_pairs = MissingPairPolicy::ImputeGrandMean;
            }
            write_json(&out, &pipeline::target_from_ratings(&ratings, &cfg.target)?)?;
        }
        Command::Train { data, out, metrics, resume, paper_scale, no_target, symmetric_norm } => {
            if symmetric_norm {
                cfg.train.target_norm = TargetNormalization::RowWise;
            }
            if paper_scale {
                let s = TrainConfig::paper_scale();
                cfg.train.stage1_epochs = s.stage1_epochs;
                cfg.train.stage2_epochs = s.stage2_epochs;
            }
            let corpus = data.corpus()?;
            let target = if no_target {
                cfg.train.alpha = 0.0;
                None
            } else {
                data.target()?
            };
            if target.is_none() && cfg.train.alpha > 0.0 {
                return Err(Error::Config("no target space found; pass --target or --no-target".into()));
            }
            let resume = resume.as_deref().map(pipeline::load_checkpoint).transpose()?;
            let stage1 = pipeline::stage1_path(&out);
            let (ck, _) = pipeline::train(TrainJob {
                corpus: &corpus,
                target: target.as_ref(),
                config: &cfg,
                out: &out,
                metrics: metrics.as_deref(),
                stage1_out: Some(&stage1),
                resume,
            })?;
            log::info!("trained to epoch {}", ck.epoch);
        }
        Command::Report { model, out, classes_csv } => {
            let ck = pipeline::load_checkpoint(&model.checkpoint)?;
            let corpus = model.data.corpus()?;
            let report = pipeline::report(&ck, &corpus, model.data.target()?.as_ref())?;
            write_json(&out, &report)?;
            if let Some(p) = classes_csv {
                write_class_csv(&p, &report)?;
            }
        }
        Command::Project { model, wav, out } => {
            let ck = pipeline::load_checkpoint(&model.checkpoint)?;
            let corpus = model.data.corpus()?;
            write_json(&out, &analysis::project(&ck, &corpus, &wav)?)?;
        }
        Command::Path { model, from, to, steps, render, out } => {
            let ck = pipeline::load_checkpoint(&model.checkpoint)?;
            let corpus = model.data.corpus()?;
            let ms = corpus.manifest.frame_ms;
            let a = PointRef::parse(&from)?.latent(&ck, &corpus, ms)?;
            let b = PointRef::parse(&to)?.latent(&ck, &corpus, ms)?;
            let (report, audio) = analysis::latent_path(&ck, &a, &b, steps, &renderer(&ck, &cfg))?;
            write_json(&out, &report)?;
            if let Some(p) = render {
                write_wav_f32(&p, &audio)?;
            }
        }
        Command::Grid { model, planes, size, extent, out } => {
            let ck = pipeline::load_checkpoint(&model.checkpoint)?;
            let corpus = model.data.corpus()?;
            let grid = GridConfig { planes, size, range: (-extent, extent) };
            analysis::grid(&ck, &corpus, &grid, &out)?;
        }
        Command::Describe { data, out } => {
            let rows = analysis::describe_corpus(&data.corpus()?);
            let mut w = csv::Writer::from_path(&out).map_err(|source| Error::Csv { path: out.clone(), source })?;
            for r in &rows {
                w.serialize(r).map_err(|source| Error::Csv { path: out.clone(), source })?;
            }
            w.flush().map_err(Error::io(&out))?;
        }
        Command::DescSynth {
            checkpoint,
            data,
            origin,
            descriptor,
            series,
            absolute,
            steps,
            span,
            radius,
            candidates,
            sampling,
            subspace,
            beam,
            render,
            trace,
            out,
        } => {
            let ck = pipeline::load_checkpoint(&checkpoint)?;
            let corpus = Corpus::load(&data)?;
            let x0 = PointRef::parse(&origin)?.frame(&ck, &corpus, corpus.manifest.frame_ms)?;
            let kind = match descriptor {
                Descriptor::Centroid => DescriptorKind::Centroid,
                Descriptor::Bandwidth => DescriptorKind::Bandwidth,
            };
            if !series.is_file() {
                return Err(Error::Config(format!("target series {} does not exist", series.display())));
            }
            let values = read_series(&series)?;
            let series = if absolute { TargetSeries::absolute(kind, values) } else { TargetSeries::shape(kind, values, span, steps) };
            let nbh = NeighborhoodSpec {
                radius,
                count: candidates,
                sampling: match sampling {
                    SamplingArg::Gaussian => Sampling::Gaussian,
                    SamplingArg::Grid => Sampling::Grid,
                },
                subspace: match subspace {
                    SubspaceArg::Pca => Subspace::Pca,
                    SubspaceArg::Full => Subspace::Full,
                },
                beam_width: beam,
            };
            let pca = fit_pca(&pipeline::corpus_latents(&ck.model, &corpus)?)?;
            let result = analysis::synthesize(&ck, &pca, &x0, &series, &nbh, cfg.seed)?;
            log::info!("pearson r = {:.4}", result.correlation());
            write_json(&out, &result)?;
            if let Some(p) = trace {
                write_trace(&p, &result, &pca)?;
            }
            if let Some(p) = render {
                write_wav_f32(&p, &analysis::render_synthesis(&result, &renderer(&ck, &cfg))?)?;
            }
        }
        Command::InspectReg { model, out } => {
            let ck = pipeline::load_checkpoint(&model.checkpoint)?;
            let corpus = model.data.corpus()?;
            let target = model.data.target()?.ok_or_else(|| Error::Config("inspect-reg needs a target space".into()))?;
            let r = analysis::inspect_reg(&ck.model, &corpus, &target, ck.config.target_norm)?;
            std::fs::create_dir_all(&out).map_err(Error::io(&out))?;
            analysis::write_matrix(&out.join("latent_dist.csv"), &r.classes, &r.latent)?;
            analysis::write_matrix(&out.join("target_dist.csv"), &r.classes, &r.target)?;
        }
    }
    Ok(())
}

fn write_class_csv(path: &Path, report: &pipeline::Report) -> Result<()> {
    let csv_err = |source| Error::Csv { path: path.into(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["class", "count", "pc1", "pc2", "pc3"]).map_err(csv_err)?;
    for c in &report.classes {
        w.write_record([
            c.class.clone(),
            c.count.to_string(),
            c.pca[0].to_string(),
            c.pca[1].to_string(),
            c.pca[2].to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(Error::io(path))
}

fn write_trace(path: &Path, r: &timbre_core::synthpath::SynthResult, pca: &PcaProjection) -> Result<()> {
    let csv_err = |source| Error::Csv { path: path.into(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["step", "delta", "achieved", "target", "pc1", "pc2", "pc3"]).map_err(csv_err)?;
    for i in 0..r.achieved.len() {
        let delta = if i == 0 { String::new() } else { r.deltas[i - 1].to_string() };
        let xyz = pca.project(&r.path[i]);
        w.write_record([
            i.to_string(),
            delta,
            r.achieved[i].to_string(),
            r.targets[i].to_string(),
            xyz[0].to_string(),
            xyz[1].to_string(),
            xyz[2].to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(Error::io(path))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
