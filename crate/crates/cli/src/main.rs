use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use partcc::commands;
use partcc::config::RunConfig;
use partcc_core::cluster::Linkage;
use partcc_core::consensus::ConsensusLinkage;

#[derive(Parser)]
#[command(
    name = "partcc",
    version,
    about = "Semi-supervised pseudo-labeling by consensus clustering of part embeddings"
)]
struct Cli {
    /// JSON run configuration; defaults apply for every missing key.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Root seed for all randomness.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Cap on worker threads for parallel phases (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Output directory (default: the config's output_dir, or "out").
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LinkageArg {
    Ward,
    Average,
    Single,
}

impl From<LinkageArg> for Linkage {
    fn from(l: LinkageArg) -> Self {
        match l {
            LinkageArg::Ward => Linkage::Ward,
            LinkageArg::Average => Linkage::Average,
            LinkageArg::Single => Linkage::Single,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ConsensusLinkageArg {
    Average,
    Single,
}

impl From<ConsensusLinkageArg> for ConsensusLinkage {
    fn from(l: ConsensusLinkageArg) -> Self {
        match l {
            ConsensusLinkageArg::Average => ConsensusLinkage::Average,
            ConsensusLinkageArg::Single => ConsensusLinkage::Single,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic identity dataset (tensor, labels, raw features).
    Gen,
    /// Cluster every part of an embedding tensor independently.
    Cluster {
        /// Input PET tensor.
        #[arg(long, value_name = "PATH")]
        tensor: PathBuf,
        #[arg(long, value_enum)]
        linkage: Option<LinkageArg>,
        /// Merge threshold on the linkage distance.
        #[arg(long, value_name = "R")]
        threshold: Option<f64>,
    },
    /// Combine per-part partitions into a consensus partition.
    Consensus {
        /// Partition CSVs, one per part.
        #[arg(required = true, value_name = "CSV")]
        partitions: Vec<PathBuf>,
        /// Required number of agreeing parts (default: all).
        #[arg(long, value_name = "K")]
        agree: Option<usize>,
        #[arg(long, value_enum)]
        linkage: Option<ConsensusLinkageArg>,
    },
    /// Cluster, consensus, and size-filter a saved embedding tensor.
    Pseudolabel {
        #[arg(long, value_name = "PATH")]
        tensor: PathBuf,
        #[arg(long, value_name = "K")]
        agree: Option<usize>,
        #[arg(long, value_name = "L")]
        min_cluster_size: Option<usize>,
        #[arg(long, value_enum)]
        linkage: Option<LinkageArg>,
        #[arg(long, value_name = "R")]
        threshold: Option<f64>,
    },
    /// Train the part embedder on labeled raw features.
    Train {
        #[arg(long, value_name = "PATH")]
        features: PathBuf,
        #[arg(long, value_name = "PATH")]
        labels: PathBuf,
        /// Write per-step losses as JSON lines.
        #[arg(long)]
        dump_losses: bool,
        /// Maximum parts replaced when mixing negatives.
        #[arg(long, value_name = "R")]
        pm_max_replaced: Option<usize>,
        /// Drop the hinge from the part-mixup loss.
        #[arg(long)]
        pm_no_hinge: bool,
    },
    /// Rank a gallery against queries and report CMC / mAP.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        query: PathBuf,
        #[arg(long, value_name = "PATH")]
        query_labels: PathBuf,
        #[arg(long, value_name = "PATH")]
        gallery: PathBuf,
        #[arg(long, value_name = "PATH")]
        gallery_labels: PathBuf,
        /// Admit same-identity same-camera gallery entries.
        #[arg(long)]
        no_camera_filter: bool,
        #[arg(long, value_name = "N")]
        max_rank: Option<usize>,
    },
    /// Run the full pseudo-labeling pipeline on synthetic data.
    Pipeline {
        #[arg(long, value_name = "N")]
        iterations: Option<usize>,
        #[arg(long, value_name = "K")]
        agree: Option<usize>,
        #[arg(long, value_name = "L")]
        min_cluster_size: Option<usize>,
        #[arg(long, value_name = "R")]
        pm_max_replaced: Option<usize>,
        #[arg(long)]
        pm_no_hinge: bool,
    },
    /// Run the built-in brute-force verification suites.
    Selftest,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), partcc::AppError> {
    if let Some(threads) = cli.threads {
        if threads > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global()
                .map_err(|e| partcc::AppError::validation(format!("--threads: {e}")))?;
        }
    }

    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let output = cli
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.output_dir));

    match cli.command {
        Command::Gen => commands::gen(&config, &output),
        Command::Cluster {
            tensor,
            linkage,
            threshold,
        } => {
            if let Some(l) = linkage {
                config.cluster.linkage = l.into();
            }
            if let Some(t) = threshold {
                config.cluster.distance_threshold = t;
            }
            commands::cluster(&config, &output, &tensor)
        }
        Command::Consensus {
            partitions,
            agree,
            linkage,
        } => commands::consensus(
            &config,
            &output,
            &partitions,
            agree,
            linkage.map(Into::into),
        ),
        Command::Pseudolabel {
            tensor,
            agree,
            min_cluster_size,
            linkage,
            threshold,
        } => {
            if let Some(l) = linkage {
                config.cluster.linkage = l.into();
            }
            if let Some(t) = threshold {
                config.cluster.distance_threshold = t;
            }
            commands::pseudolabel(&config, &output, &tensor, agree, min_cluster_size)
        }
        Command::Train {
            features,
            labels,
            dump_losses,
            pm_max_replaced,
            pm_no_hinge,
        } => {
            if pm_max_replaced.is_some() {
                config.losses.pm_max_replaced = pm_max_replaced;
            }
            if pm_no_hinge {
                config.losses.pm_hinge = false;
            }
            commands::train(&config, &output, &features, &labels, dump_losses)
        }
        Command::Evaluate {
            query,
            query_labels,
            gallery,
            gallery_labels,
            no_camera_filter,
            max_rank,
        } => commands::evaluate(
            &config,
            &output,
            &query,
            &query_labels,
            &gallery,
            &gallery_labels,
            !no_camera_filter && config.eval.camera_filter,
            max_rank.unwrap_or(config.eval.max_rank),
        ),
        Command::Pipeline {
            iterations,
            agree,
            min_cluster_size,
            pm_max_replaced,
            pm_no_hinge,
        } => {
            if let Some(n) = iterations {
                config.pseudolabel.n_iterations = n;
            }
            if agree.is_some() {
                config.consensus.agree = agree;
            }
            if let Some(l) = min_cluster_size {
                config.pseudolabel.min_cluster_size = l;
            }
            if pm_max_replaced.is_some() {
                config.losses.pm_max_replaced = pm_max_replaced;
            }
            if pm_no_hinge {
                config.losses.pm_hinge = false;
            }
            commands::pipeline(&config, &output)
        }
        Command::Selftest => commands::selftest(),
    }
}
