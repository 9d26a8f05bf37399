use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use held_core::alignment::DEFAULT_LAMBDA;
use held_core::tensor_store::{MapKind, Split};
use held_protocol::transport::TransportKind;
use held_protocol::Variant;
use serde::Deserialize;

use crate::error::{invalid, Result};
use crate::report::Format;

#[derive(Debug, Parser)]
#[command(
    name = "held",
    version,
    about = "Affine alignment, transfer evaluation and encrypted two-party inference over embeddings"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Seed for all randomness.
    #[arg(long, global = true, env = "HELD_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Report destination; stdout when absent.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    /// JSON config whose values override the flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: held_core::Error| e.to_string())
}

fn parse_maps(s: &str) -> Result<MapKind, String> {
    match s {
        "random" => Ok(MapKind::Random),
        "identity" => Ok(MapKind::Identity),
        other => Err(format!("unknown map kind {other:?} (random, identity)")),
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Dataset id; may be omitted when the manifest holds one dataset.
    #[arg(long)]
    pub dataset: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 16)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub d_a: usize,
    #[arg(long, default_value_t = 48)]
    pub d_b: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value = "random", value_parser = parse_maps)]
    pub maps: MapKind,
    #[arg(long, default_value_t = 2000)]
    pub n_public: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_train: usize,
    #[arg(long, default_value_t = 500)]
    pub n_test: usize,
    #[arg(long, default_value_t = 500)]
    pub n_ood: usize,
    /// Rotation (degrees) applied to the public split's source latents.
    #[arg(long, default_value_t = 0.0)]
    pub shift_degrees: f64,
    /// Latent scale of the OOD split.
    #[arg(long, default_value_t = 0.25)]
    pub ood_scale: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ProtoArgs {
    #[arg(long, default_value = held_he::PRESET_DEFAULT)]
    pub backend: String,
    #[arg(long, default_value = "inproc")]
    pub transport: TransportKind,
}

#[derive(Debug, Clone, Args)]
pub struct HeadArgs {
    /// Frozen head to load (`<base>.json`, `<base>.v.tns`, `<base>.c.tns`);
    /// trained on the target train split when absent.
    #[arg(long)]
    pub head: Option<PathBuf>,
    #[arg(long)]
    pub head_out: Option<PathBuf>,
    /// L2-normalize embeddings before they reach the head.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Write a synthetic paired dataset and its manifest.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Fit an affine map from source to target embeddings.
    Align {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "public", value_parser = parse_split)]
        split: Split,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        #[arg(long)]
        no_bias: bool,
        /// Append the first N in-distribution train pairs.
        #[arg(long, default_value_t = 0)]
        few_shot: usize,
        #[arg(long)]
        map_out: Option<PathBuf>,
    },
    /// Train and holdout error against training-set size.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "public", value_parser = parse_split)]
        split: Split,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 0.2)]
        holdout: f64,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
    },
    /// Baseline and mapped accuracy of a frozen head.
    Classify {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        map: Option<PathBuf>,
        #[command(flatten)]
        head: HeadArgs,
    },
    /// Energy-score OOD detection, baseline and mapped.
    Ood {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        map: PathBuf,
        #[command(flatten)]
        head: HeadArgs,
    },
    /// Linear CKA between paired target and source embeddings.
    Cka {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
    },
    /// SVCCA between paired target and source embeddings.
    Svcca {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        #[arg(long, default_value_t = 64)]
        components: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 1.0 / 6.0)]
        eval_fraction: f64,
    },
    /// Token exact-match rate and vocabulary overlap.
    Tokcompat {
        #[arg(long)]
        records_a: Option<PathBuf>,
        #[arg(long)]
        records_b: Option<PathBuf>,
        #[arg(long)]
        vocab_a: Option<PathBuf>,
        #[arg(long)]
        vocab_b: Option<PathBuf>,
        /// Keep BOS/EOS-style tokens instead of dropping them.
        #[arg(long)]
        keep_specials: bool,
    },
    /// Train the map under encryption.
    ProtocolTrain {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "public", value_parser = parse_split)]
        split: Split,
        #[arg(long, default_value_t = 0)]
        few_shot: usize,
        #[command(flatten)]
        proto: ProtoArgs,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        #[arg(long)]
        map_out: Option<PathBuf>,
        #[arg(long)]
        transcript_out: Option<PathBuf>,
    },
    /// Classify source embeddings with encrypted inference.
    ProtocolInfer {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        #[arg(long)]
        map: PathBuf,
        #[command(flatten)]
        head: HeadArgs,
        #[command(flatten)]
        proto: ProtoArgs,
        #[arg(long, default_value = "local-map")]
        variant: Variant,
        /// Only the first N queries.
        #[arg(long)]
        limit: Option<usize>,
        /// Include wall-clock timings (makes the report non-reproducible).
        #[arg(long)]
        timings: bool,
        #[arg(long)]
        transcript_out: Option<PathBuf>,
    },
    /// Latency and traffic of encrypted inference on random heads.
    ProtocolBench {
        #[command(flatten)]
        proto: ProtoArgs,
        /// `d_A x K` pairs.
        #[arg(long, value_delimiter = ',', default_value = "64x4,1024x10")]
        sizes: Vec<String>,
        #[arg(long, default_value_t = 20)]
        queries: usize,
    },
    /// Secure training plus encrypted inference, against the baseline.
    Pipeline {
        #[command(flatten)]
        data: DataArgs,
        /// Use generated data instead of a manifest.
        #[arg(long, conflicts_with = "manifest")]
        synthetic: bool,
        #[command(flatten)]
        synth: SynthArgs,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        few_shot: Vec<usize>,
        /// One row per seed; defaults to `--seed`.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[command(flatten)]
        proto: ProtoArgs,
        #[arg(long, default_value = "local-map")]
        variant: Variant,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
    },
    /// Shadow-mapper membership inference against the learned map.
    Mia {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, conflicts_with = "manifest")]
        synthetic: bool,
        #[command(flatten)]
        synth: SynthArgs,
        #[arg(long, default_value_t = 100)]
        n_shadow_in: usize,
        #[arg(long, default_value_t = 100)]
        n_shadow_out: usize,
        #[arg(long, default_value_t = 128)]
        id_subset: usize,
        #[arg(long, default_value_t = 0)]
        target_index: usize,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        /// Never include the target; the attack should sit at chance.
        #[arg(long)]
        null: bool,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Write the shadow feature matrix of the first seed.
        #[arg(long)]
        features_out: Option<PathBuf>,
    },
}

impl Cmd {
    pub fn name(&self) -> &'static str {
        match self {
            Cmd::Synth { .. } => "synth",
            Cmd::Align { .. } => "align",
            Cmd::Sweep { .. } => "sweep",
            Cmd::Classify { .. } => "classify",
            Cmd::Ood { .. } => "ood",
            Cmd::Cka { .. } => "cka",
            Cmd::Svcca { .. } => "svcca",
            Cmd::Tokcompat { .. } => "tokcompat",
            Cmd::ProtocolTrain { .. } => "protocol-train",
            Cmd::ProtocolInfer { .. } => "protocol-infer",
            Cmd::ProtocolBench { .. } => "protocol-bench",
            Cmd::Pipeline { .. } => "pipeline",
            Cmd::Mia { .. } => "mia",
        }
    }

    fn slots(&mut self) -> Slots<'_> {
        let mut s = Slots::default();
        match self {
            Cmd::Synth { .. } | Cmd::Tokcompat { .. } => {}
            Cmd::Align {
                data, lambda, few_shot, ..
            } => {
                s.manifest = Some(&mut data.manifest);
                s.lambda = Some(lambda);
                s.few_shot = Some(FewShot::One(few_shot));
            }
            Cmd::Sweep { data, lambda, .. } => {
                s.manifest = Some(&mut data.manifest);
                s.lambda = Some(lambda);
            }
            Cmd::Classify { data, .. } | Cmd::Ood { data, .. } | Cmd::Cka { data, .. } | Cmd::Svcca { data, .. } => {
                s.manifest = Some(&mut data.manifest);
            }
            Cmd::ProtocolTrain {
                data,
                few_shot,
                proto,
                lambda,
                ..
            } => {
                s.manifest = Some(&mut data.manifest);
                s.few_shot = Some(FewShot::One(few_shot));
                s.backend = Some(&mut proto.backend);
                s.transport = Some(&mut proto.transport);
                s.lambda = Some(lambda);
            }
            Cmd::ProtocolInfer {
                data, proto, variant, ..
            } => {
                s.manifest = Some(&mut data.manifest);
                s.backend = Some(&mut proto.backend);
                s.transport = Some(&mut proto.transport);
                s.variant = Some(variant);
            }
            Cmd::ProtocolBench { proto, .. } => {
                s.backend = Some(&mut proto.backend);
                s.transport = Some(&mut proto.transport);
            }
            Cmd::Pipeline {
                data,
                few_shot,
                seeds,
                proto,
                variant,
                lambda,
                ..
            } => {
                s.manifest = Some(&mut data.manifest);
                s.few_shot = Some(FewShot::Many(few_shot));
                s.seeds = Some(seeds);
                s.backend = Some(&mut proto.backend);
                s.transport = Some(&mut proto.transport);
                s.variant = Some(variant);
                s.lambda = Some(lambda);
            }
            Cmd::Mia {
                data, lambda, seeds, ..
            } => {
                s.manifest = Some(&mut data.manifest);
                s.lambda = Some(lambda);
                s.seeds = Some(seeds);
            }
        }
        s
    }
}

enum FewShot<'a> {
    One(&'a mut usize),
    Many(&'a mut Vec<usize>),
}

/// Mutable views of the flags a config file may set for one subcommand.
#[derive(Default)]
struct Slots<'a> {
    manifest: Option<&'a mut Option<PathBuf>>,
    lambda: Option<&'a mut f64>,
    backend: Option<&'a mut String>,
    transport: Option<&'a mut TransportKind>,
    variant: Option<&'a mut Variant>,
    few_shot: Option<FewShot<'a>>,
    seeds: Option<&'a mut Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(usize),
    Many(Vec<usize>),
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub subcommand: Option<String>,
    pub manifest: Option<PathBuf>,
    pub lambda: Option<f64>,
    pub backend: Option<String>,
    pub transport: Option<String>,
    pub variant: Option<String>,
    pub few_shot_n: Option<OneOrMany>,
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| invalid(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", path.display())))
    }

    /// Overrides `cli` with every key present. Keys that do not apply to
    /// the chosen subcommand are rejected.
    pub fn apply(self, cli: &mut Cli) -> Result<()> {
        let name = cli.cmd.name();
        if let Some(s) = &self.subcommand {
            if s != name {
                return Err(invalid(format!("config is for `{s}`, invoked `{name}`")));
            }
        }
        if let Some(v) = self.seed {
            cli.common.seed = v;
        }
        if let Some(v) = self.output {
            cli.common.output = Some(v);
        }
        if let Some(v) = self.format {
            cli.common.format = v;
        }
        let slots = cli.cmd.slots();
        let nope = |key: &str| invalid(format!("config key `{key}` does not apply to `{name}`"));
        if let Some(v) = self.manifest {
            *slots.manifest.ok_or_else(|| nope("manifest"))? = Some(v);
        }
        if let Some(v) = self.lambda {
            *slots.lambda.ok_or_else(|| nope("lambda"))? = v;
        }
        if let Some(v) = self.backend {
            *slots.backend.ok_or_else(|| nope("backend"))? = v;
        }
        if let Some(v) = self.transport {
            *slots.transport.ok_or_else(|| nope("transport"))? = v.parse().map_err(|e| invalid(format!("{e}")))?;
        }
        if let Some(v) = self.variant {
            *slots.variant.ok_or_else(|| nope("variant"))? = v.parse().map_err(|e| invalid(format!("{e}")))?;
        }
        if let Some(v) = self.seeds {
            *slots.seeds.ok_or_else(|| nope("seeds"))? = v;
        }
        if let Some(v) = self.few_shot_n {
            match (slots.few_shot.ok_or_else(|| nope("few_shot_n"))?, v) {
                (FewShot::One(slot), OneOrMany::One(n)) => *slot = n,
                (FewShot::One(slot), OneOrMany::Many(ns)) if ns.len() == 1 => *slot = ns[0],
                (FewShot::One(_), OneOrMany::Many(_)) => {
                    return Err(invalid(format!("`{name}` takes a single few_shot_n")));
                }
                (FewShot::Many(slot), OneOrMany::One(n)) => *slot = vec![n],
                (FewShot::Many(slot), OneOrMany::Many(ns)) => *slot = ns,
            }
        }
        Ok(())
    }
}

/// Checks that do not need any data.
pub fn validate(cli: &Cli) -> Result<()> {
    let lambda_ok = |l: f64| {
        if l > 0.0 && l.is_finite() {
            Ok(())
        } else {
            Err(invalid(format!("lambda must be > 0, got {l}")))
        }
    };
    let backend_ok = |b: &str| {
        if [held_he::PRESET_MOCK, held_he::PRESET_DEFAULT].contains(&b) {
            Ok(())
        } else {
            Err(invalid(format!(
                "unknown backend {b:?} ({}, {})",
                held_he::PRESET_MOCK,
                held_he::PRESET_DEFAULT
            )))
        }
    };
    match &cli.cmd {
        Cmd::Align { lambda, .. } | Cmd::Sweep { lambda, .. } | Cmd::Mia { lambda, .. } => lambda_ok(*lambda)?,
        Cmd::ProtocolTrain { lambda, proto, .. } => {
            lambda_ok(*lambda)?;
            backend_ok(&proto.backend)?;
        }
        Cmd::ProtocolInfer { proto, .. } | Cmd::ProtocolBench { proto, .. } => backend_ok(&proto.backend)?,
        Cmd::Pipeline {
            lambda,
            proto,
            few_shot,
            ..
        } => {
            lambda_ok(*lambda)?;
            backend_ok(&proto.backend)?;
            if few_shot.is_empty() {
                return Err(invalid("few_shot_n list is empty"));
            }
        }
        _ => {}
    }
    if let Cmd::Sweep { sizes, .. } = &cli.cmd {
        if sizes.is_empty() {
            return Err(invalid("--sizes is empty"));
        }
    }
    Ok(())
}
