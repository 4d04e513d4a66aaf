use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mds_core::{Strategy, TrainingConfig};

#[derive(Debug, Parser)]
#[command(name = "mds", version, about = "Knowledge-grounded multimodal dialog generation", propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a knowledge base (and optionally a corpus) and print a summary.
    Ingest {
        #[arg(long)]
        kb: PathBuf,
        /// JSON-lines corpus, `-` for stdin.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[command(flatten)]
        out: Output,
    },
    /// Print the relation tuples reachable from seed nodes, one JSON line each.
    Walk {
        #[arg(long)]
        kb: PathBuf,
        /// Start node; repeat for several.
        #[arg(long = "seed", required = true)]
        seeds: Vec<String>,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
        hops: u64,
        #[arg(long)]
        max_tuples: Option<usize>,
        #[command(flatten)]
        out: Output,
    },
    /// Print the attribute knowledge and relation tuples acquired for a context.
    Retrieve {
        #[arg(long)]
        kb: PathBuf,
        #[command(flatten)]
        context: ContextArg,
        #[arg(long, default_value_t = 0.8, allow_negative_numbers = true)]
        epsilon: f64,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
        hops: u64,
        #[command(flatten)]
        out: Output,
    },
    /// Train a model and write a checkpoint; per-epoch losses go to the output.
    Train {
        #[arg(long)]
        kb: PathBuf,
        /// JSON-lines corpus, `-` for stdin.
        #[arg(long)]
        corpus: PathBuf,
        /// Where to write the checkpoint (a `.meta.json` sidecar goes next to it).
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: Output,
    },
    /// Generate a response for one context.
    Generate {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        context: ContextArg,
        #[arg(long, default_value_t = 40)]
        max_len: usize,
        /// `greedy` or `beam:k`.
        #[arg(long, default_value = "greedy")]
        strategy: Strategy,
        #[command(flatten)]
        out: Output,
    },
    /// Greedy-generate for every pair and print BLEU-1..4, NIST and exact match.
    Evaluate {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON-lines corpus, `-` for stdin.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 40)]
        max_len: usize,
        #[command(flatten)]
        out: Output,
    },
    /// Per context: tuples, attention over tuples and fusion weights.
    DumpAttention {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        out: Output,
    },
    /// Per pair: projected composed and ground-truth semantic matrices.
    ExportReps {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        out: Output,
    },
    /// Write a synthetic knowledge base and print a matching corpus.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        entities: usize,
        #[arg(long, default_value_t = 32)]
        pairs: usize,
        /// Width of synthetic image features; 0 disables images.
        #[arg(long, default_value_t = 0)]
        image_dim: usize,
        /// Where to write the knowledge base JSON.
        #[arg(long)]
        kb_out: PathBuf,
        #[command(flatten)]
        out: Output,
    },
}

#[derive(Debug, Args)]
pub struct Output {
    /// Write data here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ContextArg {
    /// JSON file `{"context_utterances": [...], "context_image_features": [[...]]}`.
    #[arg(long)]
    pub context: PathBuf,
}

/// Training settings. Flags override the config file, which overrides defaults.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON document with `TrainingConfig` field names.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub mlp_hidden: Option<usize>,
    #[arg(long)]
    pub l_enc: Option<usize>,
    #[arg(long)]
    pub l_dec: Option<usize>,
    #[arg(long)]
    pub n_p: Option<usize>,
    #[arg(long)]
    pub max_positions: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub max_hops: Option<usize>,
    #[arg(long)]
    pub max_tuples: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Skip relation composition (`T_c = T_t`).
    #[arg(long)]
    pub no_relations: bool,
    /// Divide attention scores by the square root of the width.
    #[arg(long)]
    pub attention_scaling: bool,
}

impl ConfigArgs {
    /// Applies every flag that was given on top of `base`.
    pub fn apply(&self, mut base: TrainingConfig) -> TrainingConfig {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { base.$f = v; })* };
        }
        set!(seed, epochs, batch_size, learning_rate, d_model, mlp_hidden, l_enc, l_dec, n_p, max_positions, epsilon, max_hops, max_tuples, lambda, gamma, beta);
        if self.no_relations {
            base.use_relations = false;
        }
        if self.attention_scaling {
            base.attention_scaling = true;
        }
        base
    }
}
