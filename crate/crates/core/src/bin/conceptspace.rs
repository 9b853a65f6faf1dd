use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use conceptspace::error::ErrorKind;
use conceptspace::model::MaskingMode;
use conceptspace::pipeline::{
    self, BenchReport, Context, DiscoverReport, ExplainReport, PipelineConfig, ScoreReport,
};
use conceptspace::{Error, Result};

#[derive(Parser)]
#[command(
    name = "conceptspace",
    version,
    about = "Concept discovery and attribution for CNN classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Pipeline config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Masking mode used for embeddings and the bench.
    #[arg(long)]
    mode: Option<MaskingMode>,
    /// Restrict to these classes (repeatable).
    #[arg(long = "class")]
    classes: Vec<usize>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Setup {
    /// Red disks and blue squares with a hand-built classifier.
    Desk,
    /// Strip concepts with closed-form relevance.
    Planted,
}

#[derive(Subcommand)]
enum Command {
    /// Embed segments and cluster them into concepts.
    Discover(RunArgs),
    /// Fit concept spaces and score segments.
    Score(RunArgs),
    /// Activation and relevance maps for one image.
    Explain {
        image_id: String,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Concept deletion and insertion curves.
    Bench(RunArgs),
    /// discover, score, explain and bench.
    All(RunArgs),
    /// Write a synthetic dataset, model and config.
    Synth {
        setup: Setup,
        #[arg(long)]
        dir: PathBuf,
        /// Images per class (desk) or images in total (planted).
        #[arg(long, default_value_t = 100)]
        images: usize,
        /// Concepts of the planted setup, 2 to 5.
        #[arg(long, default_value_t = 4)]
        concepts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn context(args: &RunArgs) -> Result<Context> {
    let mut cfg = PipelineConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(p) = args.parallelism {
        cfg.parallelism = p;
    }
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if !args.classes.is_empty() {
        cfg.classes = Some(args.classes.clone());
    }
    if let Some(o) = &args.output {
        cfg.output = o.clone();
    }
    Context::load(cfg)
}

fn print_discover(r: &DiscoverReport) {
    println!(
        "discover: {} images, {} segments, {} failed",
        r.images,
        r.segments,
        r.failures.len()
    );
    for g in &r.groups {
        println!(
            "  {:<10} k={:<3} concepts={:<3} residual={:<5} sizes={:?}",
            g.group,
            g.k,
            g.counts.len(),
            g.residual_rows,
            g.counts
        );
    }
}

fn print_score(r: &ScoreReport) {
    println!("completeness:");
    println!("  {:<16} {:>8} {:>12}", "class", "concepts", "completeness");
    for row in &r.completeness {
        println!(
            "  {:<16} {:>8} {:>12.4}",
            row.class, row.clusters, row.completeness
        );
    }
}

fn print_explain(r: &ExplainReport) {
    println!(
        "explain {}: {} segments, {} residual",
        r.image_id,
        r.segments.len(),
        r.residual_segments.len()
    );
}

fn print_bench(r: &BenchReport) {
    let auc = |a: Option<f64>| a.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    for m in &r.modes {
        println!(
            "bench {}: baseline {:.3}, deletion AUC {} (final {:.3}), insertion AUC {} (final {:.3}), {} concepts",
            m.mode,
            m.baseline_accuracy,
            auc(m.deletion.auc),
            m.deletion.final_accuracy,
            auc(m.insertion.auc),
            m.insertion.final_accuracy,
            m.common_concepts.len()
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Discover(a) => print_discover(&pipeline::discover(&context(&a)?)?),
        Command::Score(a) => print_score(&pipeline::score(&context(&a)?)?),
        Command::Explain { image_id, args } => {
            print_explain(&pipeline::explain(&context(&args)?, &image_id)?)
        }
        Command::Bench(a) => print_bench(&pipeline::bench(&context(&a)?)?),
        Command::All(a) => {
            let (d, s, e, b) = pipeline::run_all(&context(&a)?)?;
            print_discover(&d);
            print_score(&s);
            e.iter().for_each(print_explain);
            print_bench(&b);
        }
        Command::Synth {
            setup,
            dir,
            images,
            concepts,
            seed,
        } => {
            let path = match setup {
                Setup::Desk => pipeline::write_desk_setup(&dir, images, seed)?,
                Setup::Planted => {
                    if !(2..=5).contains(&concepts) {
                        return Err(Error::Config(format!(
                            "planted setups have 2 to 5 concepts, got {concepts}"
                        )));
                    }
                    pipeline::write_planted_setup(&dir, concepts, images, seed)?
                }
            };
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn report(e: &Error) {
    let kind = match e.kind() {
        ErrorKind::Config => "config",
        ErrorKind::Data => "data",
        ErrorKind::Numeric => "numeric",
    };
    eprintln!("error: {e}");
    eprintln!("  kind: {kind}");
    let mut cur = e;
    while let Error::Item {
        stage,
        item,
        source,
    } = cur
    {
        eprintln!("  stage: {stage}");
        eprintln!("  item: {item}");
        cur = source;
    }
    eprintln!("  cause: {cur}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            })
        }
    }
}
