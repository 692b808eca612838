//! Command-line front end.
//!
//! Subcommands wire the pipeline end to end: `synth` makes deterministic
//! test scenes, `partition` reports the level structure, `train` fits
//! entropy models, `encode`/`decode` run the codec, `stats` breaks a
//! stream down by section, `ablate` compares model variants, and `rd`
//! sweeps the rate weight. Every output artifact gets a JSON manifest
//! recording the inputs, configuration and seed that produced it.
//!
//! Exit codes: 0 success, 2 usage or input errors, 3 data or CRC errors,
//! 4 training divergence.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::codec::{self, EncodeOptions};
use crate::error::Error;
use crate::partition::{partition, PartitionConfig};
use crate::scene::{load_scene, save_scene, similarity_report, AnchorScene, PropertyMap};
use crate::synth::{self, SynthConfig, SynthKind};
use crate::train::{self, TrainConfig, Variant};

#[derive(Parser)]
#[command(name = "cgsc", version, about = "Anchor-scene compression codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Clone)]
struct PartitionArgs {
    /// Number of levels
    #[arg(long, default_value_t = 3)]
    levels: usize,
    /// Target count ratio between adjacent candidate sets
    #[arg(long, default_value_t = 0.2)]
    tau: f64,
    /// Base voxel size
    #[arg(long, default_value_t = 0.001)]
    eps0: f32,
}

impl PartitionArgs {
    fn config(&self) -> PartitionConfig {
        PartitionConfig {
            levels: self.levels,
            tau: self.tau,
            eps0: self.eps0,
            ..PartitionConfig::default()
        }
    }
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// Rate weight
    #[arg(long, default_value_t = 1.0)]
    lambda_e: f64,
    /// Distortion weight
    #[arg(long, default_value_t = 0.0)]
    lambda_d: f64,
    /// Training iterations
    #[arg(long, default_value_t = 30000)]
    iters: usize,
    /// Adam learning rate
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Anchors per iteration (default: full batch)
    #[arg(long)]
    batch: Option<usize>,
    /// Hidden width of the context nets
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    /// Hyperprior length divisor (hyper dim = feature dim / divisor)
    #[arg(long, default_value_t = 4)]
    hyper_divisor: usize,
    /// Base quantization steps: feature,scaling,offsets
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [1.0, 0.01, 0.01])]
    delta0: Vec<f64>,
    /// Also divide the rate term by the feature dimension
    #[arg(long, default_value_t = false)]
    normalize_by_feature_dim: bool,
}

impl TrainArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lambda_e: self.lambda_e,
            lambda_d: self.lambda_d,
            iterations: self.iters,
            learning_rate: self.lr,
            batch_size: self.batch,
            normalize_by_feature_dim: self.normalize_by_feature_dim,
            hidden: self.hidden,
            hyper_divisor: self.hyper_divisor,
            delta0: [self.delta0[0], self.delta0[1], self.delta0[2]],
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene file
    Synth {
        /// grid | clustered | correlated
        #[arg(long)]
        kind: String,
        #[arg(long, short)]
        out: PathBuf,
        /// Grid points per axis
        #[arg(long, default_value_t = 10)]
        n: usize,
        /// Anchor count (clustered/correlated)
        #[arg(long, default_value_t = 1000)]
        count: usize,
        /// Cluster count (clustered)
        #[arg(long, default_value_t = 8)]
        clusters: usize,
        /// Cluster spread (clustered)
        #[arg(long, default_value_t = 0.3)]
        spread: f64,
        /// Parent-child feature correlation (correlated)
        #[arg(long, default_value_t = 0.95)]
        rho: f64,
        /// Per-anchor latent strength (correlated)
        #[arg(long, default_value_t = 0.25)]
        latent: f64,
        #[arg(long, default_value_t = 50)]
        feature_dim: usize,
        #[arg(long, default_value_t = 3)]
        scaling_dim: usize,
        #[arg(long, default_value_t = 10)]
        offset_count: usize,
        /// Emit offset masks
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        masks: bool,
        #[arg(long, default_value_t = 0.85)]
        mask_density: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        partition: PartitionArgs,
    },
    /// Partition a scene into levels and report the structure
    Partition {
        scene: PathBuf,
        #[command(flatten)]
        partition: PartitionArgs,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Also report child-parent feature similarity
        #[arg(long, default_value_t = false)]
        similarity: bool,
        /// Write the report here instead of stdout
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Train entropy models on a scene
    Train {
        scene: PathBuf,
        /// Output model file
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        partition: PartitionArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the training report (loss curve, estimates) here
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Encode a scene
    Encode {
        scene: PathBuf,
        /// Output stream
        #[arg(long, short)]
        out: PathBuf,
        /// Trained model file; omitted = freshly initialized models
        #[arg(long)]
        model: Option<PathBuf>,
        /// Train this many iterations inline before encoding
        #[arg(long, default_value_t = 0)]
        train_iters: usize,
        #[command(flatten)]
        partition: PartitionArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print a storage breakdown after encoding
        #[arg(long, default_value_t = false)]
        stats: bool,
        /// Decode the stream again and verify the round trip
        #[arg(long, default_value_t = false)]
        verify: bool,
        /// Keep weights out of the stream
        #[arg(long, default_value_t = false)]
        external_weights: bool,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Decode a stream back to a scene file
    Decode {
        stream: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Model file for streams written with --external-weights
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Per-section storage breakdown of an encoded stream
    Stats {
        stream: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Train and compare model variants
    Ablate {
        scene: PathBuf,
        /// Comma-separated: full,no-hyperprior,no-context,no-anchor-forward,single-level
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
        #[command(flatten)]
        partition: PartitionArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Sweep the rate weight and report rate/distortion points
    Rd {
        scene: PathBuf,
        /// Rate weights to sweep
        #[arg(long, value_delimiter = ',', default_values_t = [0.0005, 0.001, 0.004])]
        lambdas: Vec<f64>,
        /// Distortion weight held fixed across the sweep
        #[arg(long, default_value_t = 1.0)]
        lambda_d: f64,
        #[command(flatten)]
        partition: PartitionArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_)
        | Error::MissingProperty { .. }
        | Error::InvalidConfig(_)
        | Error::DimensionMismatch(_) => 2,
        Error::Diverged { .. } => 4,
        _ => 3,
    }
}

/// Entry point used by the `cgsc` binary; returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn write_manifest(out: &Path, command: &str, detail: serde_json::Value) -> crate::Result<()> {
    let manifest = serde_json::json!({
        "tool": "cgsc",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "output": out.display().to_string(),
        "detail": detail,
    });
    let path = manifest_path(out);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap())?;
    Ok(())
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn emit(text: String, out: &Option<PathBuf>) -> crate::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn load(path: &Path) -> crate::Result<AnchorScene> {
    load_scene(path, &PropertyMap::default())
}

fn mse_between(a: &AnchorScene, b: &AnchorScene) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (x, y) in a.anchors.iter().zip(&b.anchors) {
        for (u, v) in x.feature.iter().zip(&y.feature) {
            sum += (*u as f64 - *v as f64).powi(2);
            count += 1;
        }
        for (u, v) in x.scaling.iter().zip(&y.scaling) {
            sum += (*u as f64 - *v as f64).powi(2);
            count += 1;
        }
        for (r, (or, dr)) in x.offsets.iter().zip(&y.offsets).enumerate() {
            let active = x.mask.as_ref().map_or(true, |m| m[r]);
            if active {
                for d in 0..3 {
                    sum += (or[d] as f64 - dr[d] as f64).powi(2);
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn run(command: Command) -> crate::Result<()> {
    match command {
        Command::Synth {
            kind,
            out,
            n,
            count,
            clusters,
            spread,
            rho,
            latent,
            feature_dim,
            scaling_dim,
            offset_count,
            masks,
            mask_density,
            seed,
            partition: part_args,
        } => {
            let kind = match kind.as_str() {
                "grid" => SynthKind::Grid { n },
                "clustered" => SynthKind::Clustered {
                    count,
                    clusters,
                    spread,
                },
                "correlated" => SynthKind::Correlated { count, rho, latent },
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown synth kind `{other}` (grid|clustered|correlated)"
                    )))
                }
            };
            let cfg = SynthConfig {
                kind,
                seed,
                feature_dim,
                scaling_dim,
                offset_count,
                with_masks: masks,
                mask_density,
                partition: part_args.config(),
            };
            let (scene, manifest) = synth::generate(&cfg)?;
            save_scene(&scene, &out)?;
            write_manifest(&out, "synth", manifest)?;
            println!("wrote {} anchors to {}", scene.len(), out.display());
            Ok(())
        }

        Command::Partition {
            scene,
            partition: part_args,
            format,
            similarity,
            out,
        } => {
            let scene = load(&scene)?;
            let cfg = part_args.config();
            let part = partition(&scene, &cfg)?;
            for w in &part.warnings {
                eprintln!("warning: {w}");
            }
            let hat_counts: Vec<usize> = (0..part.levels())
                .map(|k| part.hat_members(k).len())
                .collect();
            let sim = similarity.then(|| similarity_report(&scene, &part));
            let text = match format {
                Format::Json => {
                    let mut v = serde_json::json!({
                        "levels": part.levels(),
                        "tau": cfg.tau,
                        "eps": part.eps,
                        "kappa": part.kappa,
                        "level_counts": part.level_counts,
                        "candidate_counts": hat_counts,
                        "achieved_ratios": (1..part.levels())
                            .map(|k| hat_counts[k] as f64 / hat_counts[k - 1].max(1) as f64)
                            .collect::<Vec<_>>(),
                        "warnings": part.warnings,
                    });
                    if let Some(s) = &sim {
                        v["similarity_mean"] = serde_json::json!(s.overall_mean());
                    }
                    serde_json::to_string_pretty(&v).unwrap() + "\n"
                }
                Format::Csv => {
                    let mut s =
                        String::from("level,eps,kappa,count,candidate_count,achieved_ratio\n");
                    for k in 0..part.levels() {
                        let ratio = if k == 0 {
                            String::new()
                        } else {
                            format!("{:.6}", hat_counts[k] as f64 / hat_counts[k - 1].max(1) as f64)
                        };
                        s.push_str(&format!(
                            "{},{},{},{},{},{}\n",
                            k, part.eps[k], part.kappa[k], part.level_counts[k], hat_counts[k], ratio
                        ));
                    }
                    if let Some(sim) = &sim {
                        s.push_str(&format!("# mean parent-child cosine: {:.6}\n", sim.overall_mean()));
                    }
                    s
                }
            };
            emit(text, &out)
        }

        Command::Train {
            scene: scene_path,
            out,
            partition: part_args,
            train: train_args,
            seed,
            report,
        } => {
            let scene = load(&scene_path)?;
            let part = partition(&scene, &part_args.config())?;
            let cfg = train_args.config(seed);
            let (mut models, train_report) = train::train(&scene, &part, &cfg)?;
            models.snap_to_f32();
            codec::weights::save_models(&models, &out)?;
            write_manifest(
                &out,
                "train",
                serde_json::json!({
                    "scene": scene_path.display().to_string(),
                    "partition": part_args.config(),
                    "train": cfg,
                    "seed": seed,
                    "final_bits_per_anchor":
                        train_report.final_estimate.total_bits() / scene.len().max(1) as f64,
                }),
            )?;
            if let Some(p) = report {
                std::fs::write(&p, serde_json::to_string_pretty(&train_report).unwrap())?;
            }
            println!(
                "trained {} iterations: {:.1} -> {:.1} bits/anchor ({:.1}s)",
                train_report.iterations,
                train_report.initial_estimate.total_bits() / scene.len().max(1) as f64,
                train_report.final_estimate.total_bits() / scene.len().max(1) as f64,
                train_report.wall_secs
            );
            Ok(())
        }

        Command::Encode {
            scene: scene_path,
            out,
            model,
            train_iters,
            partition: part_args,
            train: train_args,
            seed,
            stats,
            verify,
            external_weights,
            format,
        } => {
            let scene = load(&scene_path)?;
            let part = partition(&scene, &part_args.config())?;
            let models = match model {
                Some(path) => {
                    let m = codec::weights::load_models(&path)?;
                    if m.hyper.z.len() != scene.len() * m.config.hyper_dim {
                        return Err(Error::DimensionMismatch(format!(
                            "model file was trained on a different scene ({} hyperprior rows, scene has {})",
                            if m.config.hyper_dim == 0 { 0 } else { m.hyper.z.len() / m.config.hyper_dim },
                            scene.len()
                        )));
                    }
                    m
                }
                None => {
                    let mut cfg = train_args.config(seed);
                    cfg.iterations = train_iters;
                    train::train(&scene, &part, &cfg)?.0
                }
            };
            let enc = codec::encode_scene(
                &scene,
                &part,
                &models,
                &EncodeOptions { external_weights },
            )?;
            std::fs::write(&out, &enc.bytes)?;
            write_manifest(
                &out,
                "encode",
                serde_json::json!({
                    "scene": scene_path.display().to_string(),
                    "partition": part_args.config(),
                    "seed": seed,
                    "anchors": scene.len(),
                    "bytes": enc.bytes.len(),
                    "estimated_bits": enc.estimate.total_bits(),
                    "escapes": enc.escapes,
                }),
            )?;
            println!(
                "encoded {} anchors into {} bytes (estimate {:.0} bits, {} escapes)",
                scene.len(),
                enc.bytes.len(),
                enc.estimate.total_bits(),
                enc.escapes
            );
            if stats {
                let rep = codec::storage_report(&enc.bytes)?;
                match format {
                    Format::Csv => print!("{}", rep.to_csv()),
                    Format::Json => println!("{}", serde_json::to_string_pretty(&rep).unwrap()),
                }
            }
            if verify {
                let dec = if external_weights {
                    codec::decode_scene_with_models(&enc.bytes, &models)?
                } else {
                    codec::decode_scene(&enc.bytes)?
                };
                if dec.scene == enc.dequantized && dec.partition == part {
                    println!("round-trip verify: PASS");
                } else {
                    println!("round-trip verify: FAIL");
                    return Err(Error::Sequencing(
                        "decoded scene differs from encoder reconstruction".into(),
                    ));
                }
            }
            Ok(())
        }

        Command::Decode { stream, out, model } => {
            let bytes = std::fs::read(&stream)?;
            let dec = match model {
                Some(path) => {
                    let m = codec::weights::load_models(&path)?;
                    codec::decode_scene_with_models(&bytes, &m)?
                }
                None => codec::decode_scene(&bytes)?,
            };
            save_scene(&dec.scene, &out)?;
            write_manifest(
                &out,
                "decode",
                serde_json::json!({
                    "stream": stream.display().to_string(),
                    "anchors": dec.scene.len(),
                    "levels": dec.partition.levels(),
                }),
            )?;
            println!("decoded {} anchors to {}", dec.scene.len(), out.display());
            Ok(())
        }

        Command::Stats { stream, format } => {
            let bytes = std::fs::read(&stream)?;
            let rep = codec::storage_report(&bytes)?;
            match format {
                Format::Csv => print!("{}", rep.to_csv()),
                Format::Json => println!("{}", serde_json::to_string_pretty(&rep).unwrap()),
            }
            Ok(())
        }

        Command::Ablate {
            scene: scene_path,
            variants,
            partition: part_args,
            train: train_args,
            seed,
            out,
        } => {
            let scene = load(&scene_path)?;
            let part = partition(&scene, &part_args.config())?;
            let cfg = train_args.config(seed);
            let variants: Vec<Variant> = match variants {
                Some(names) => names
                    .iter()
                    .map(|n| {
                        Variant::parse(n).ok_or_else(|| {
                            Error::InvalidConfig(format!("unknown variant `{n}`"))
                        })
                    })
                    .collect::<crate::Result<_>>()?,
                None => Variant::ALL.to_vec(),
            };
            let rows = train::ablation_run(&scene, &part, &cfg, &variants)?;
            let csv = train::ablation_csv(&rows);
            if let Some(p) = &out {
                write_manifest(
                    p,
                    "ablate",
                    serde_json::json!({
                        "scene": scene_path.display().to_string(),
                        "train": cfg,
                        "seed": seed,
                        "variants": variants.iter().map(|v| v.name()).collect::<Vec<_>>(),
                    }),
                )?;
            }
            emit(csv, &out)
        }

        Command::Rd {
            scene: scene_path,
            lambdas,
            lambda_d,
            partition: part_args,
            train: train_args,
            seed,
            out,
        } => {
            let scene = load(&scene_path)?;
            let part = partition(&scene, &part_args.config())?;
            let n = scene.len().max(1) as f64;
            let mut lambdas = lambdas;
            lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut rows = Vec::new();
            for &le in &lambdas {
                let mut cfg = train_args.config(seed);
                cfg.lambda_e = le;
                cfg.lambda_d = lambda_d;
                let (models, _) = train::train(&scene, &part, &cfg)?;
                let est = codec::estimate_rate(&scene, &part, &models)?;
                let enc =
                    codec::encode_scene(&scene, &part, &models, &EncodeOptions::default())?;
                let distortion = mse_between(&scene, &enc.dequantized);
                rows.push((le, est.total_bits() / n, distortion));
            }
            for w in rows.windows(2) {
                if w[1].1 <= w[0].1 {
                    eprintln!(
                        "warning: bits/anchor did not decrease from lambda_e={} to {}",
                        w[0].0, w[1].0
                    );
                }
            }
            let mut csv = String::from("lambda_e,bits_per_anchor,distortion\n");
            for (le, bits, d) in &rows {
                csv.push_str(&format!("{le},{bits:.4},{d:.8}\n"));
            }
            if let Some(p) = &out {
                write_manifest(
                    p,
                    "rd",
                    serde_json::json!({
                        "scene": scene_path.display().to_string(),
                        "lambdas": lambdas,
                        "lambda_d": lambda_d,
                        "seed": seed,
                    }),
                )?;
            }
            emit(csv, &out)
        }
    }
}
