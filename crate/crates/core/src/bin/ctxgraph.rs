use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use ctxgraph::autodiff::GradCheckOptions;
use ctxgraph::config::RunConfig;
use ctxgraph::features::LabelEmbedder;
use ctxgraph::ingest::{load_embedding_table, load_manifest, parse_manifest, to_key_tsv, IngestError};
use ctxgraph::model::{check_gradients, load_checkpoint, save_checkpoint, Batch, ConvVariant, REFERENCE_PARAM_COUNT};
use ctxgraph::parallel::{set_worker_threads, Execution};
use ctxgraph::pipeline::{self, PipelineError};
use ctxgraph::train::{
    evaluate_dataset, run_ablation, synthetic, train, write_ablation_csv, AblationData, AblationRow, Dataset,
};

/// Graph-based claim/evidence veracity pipeline.
#[derive(Parser)]
#[command(name = "ctxgraph", version)]
struct Cli {
    /// Flat JSON config; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data-parallel work.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check that a manifest's documents exist and parse.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Keep the top-k evidence documents per sample by image similarity.
    Rank {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        texts: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Build claim and evidence graphs for every sample.
    BuildGraphs {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Write `key<TAB>payload` lists for the embedding exporters: node labels
    /// of a graph directory and/or evidence documents of a manifest.
    Keys {
        #[arg(long, required_unless_present = "manifest")]
        graphs: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Compute embeddings and structural features for a graph directory.
    Features {
        #[arg(long)]
        graphs: PathBuf,
        /// Label embedding table; hashed fallback embeddings otherwise.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Fallback embedding width (384 or 768).
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Train a classifier and keep the best checkpoint.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Score a feature directory with a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Print the veracity score of one claim/evidence graph pair.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        claim: PathBuf,
        #[arg(long)]
        evidence: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Component ablations and the convolution sweep.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        /// Feature directory built with 384-dim label embeddings.
        #[arg(long, requires = "data")]
        data_384: Option<PathBuf>,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Finite-difference check of the full model on a tiny sample.
    Gradcheck {
        #[arg(long, default_value_t = 1e-3)]
        h: f64,
        #[arg(long, default_value_t = 500)]
        max_coords: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Feature directory.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Use N generated samples instead of a feature directory.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Generator seed for --synthetic.
    #[arg(long, default_value_t = 0)]
    synthetic_seed: u64,
}

#[derive(Args, Default)]
struct TrainOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    conv: Option<ConvVariant>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    edge_features: bool,
    #[arg(long)]
    unweighted: bool,
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.lr {
            t.lr = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.conv {
            t.conv = v;
        }
        if let Some(v) = self.embedding_dim {
            t.embedding_dim = v;
        }
        if let Some(v) = self.hidden {
            t.hidden = v;
        }
        t.use_edge_features |= self.edge_features;
        t.weighted_node_embeddings &= !self.unweighted;
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    match &cli.command {
        Command::Train { overrides, .. } | Command::Ablate { overrides, .. } | Command::Gradcheck { overrides, .. } => {
            overrides.apply(&mut cfg)
        }
        Command::Rank { images, texts, k, .. } => {
            cfg.image_table = images.clone().or(cfg.image_table);
            cfg.text_table = texts.clone().or(cfg.text_table);
            if let Some(k) = k {
                cfg.top_k = *k;
            }
        }
        Command::Features { labels, dim, .. } => {
            cfg.label_table = labels.clone().or(cfg.label_table);
            if let Some(d) = dim {
                cfg.train.embedding_dim = *d;
            }
        }
        Command::Predict { labels, .. } => cfg.label_table = labels.clone().or(cfg.label_table),
        _ => {}
    }
    if cfg.top_k == 0 {
        return Err(PipelineError::Config("k must be at least 1".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io(format!("{}: {e}", path.display()))
}

fn create_out(out: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(out).map_err(io_err(out))
}

fn embedder(cfg: &RunConfig) -> Result<LabelEmbedder, PipelineError> {
    match &cfg.label_table {
        Some(p) => Ok(LabelEmbedder::Table(Arc::new(load_embedding_table(p)?))),
        None if ctxgraph::ingest::FALLBACK_DIMS.contains(&cfg.train.embedding_dim) => Ok(LabelEmbedder::Fallback {
            dim: cfg.train.embedding_dim,
        }),
        None => Err(PipelineError::Config(format!(
            "fallback embeddings support 384 or 768 dims, not {}",
            cfg.train.embedding_dim
        ))),
    }
}

fn dataset(args: &DataArgs, dim: usize, exec: Execution) -> Result<Dataset, PipelineError> {
    match (&args.data, args.synthetic) {
        (Some(dir), _) => pipeline::load_dataset(dir, dim, exec),
        (None, Some(n)) => Ok(synthetic::dataset(n, args.synthetic_seed, dim, exec)?),
        (None, None) => Err(PipelineError::Config("pass --data DIR or --synthetic N".into())),
    }
}

fn load_manifest_checked(path: &Path) -> Result<ctxgraph::ingest::DatasetManifest, PipelineError> {
    match load_manifest(path) {
        Ok(m) => Ok(m),
        Err(IngestError::MissingFiles(files)) => {
            for f in &files {
                eprintln!("missing: {}", f.display());
            }
            Err(PipelineError::Data(format!(
                "{} referenced files are missing",
                files.len()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

fn write_tsv(path: &Path, pairs: &[(String, String)]) -> Result<(), PipelineError> {
    let text = to_key_tsv(pairs)?;
    fs::write(path, text).map_err(io_err(path))
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let cfg = resolve(&cli)?;
    if let Some(j) = cli.jobs {
        set_worker_threads(j);
    }
    eprintln!("config {}", cfg.to_json());
    eprintln!("seed {}", cfg.train.seed);
    let exec = Execution::available();
    let out = cli.out.as_path();

    match &cli.command {
        Command::Ingest { manifest } => {
            let m = load_manifest_checked(manifest)?;
            let r = pipeline::ingest(&m, exec)?;
            println!(
                "records {} documents {} sentences {} tokens {} entities {}",
                r.records, r.documents, r.sentences, r.tokens, r.entities
            );
        }
        Command::Rank { manifest, .. } => {
            let (Some(img), Some(txt)) = (&cfg.image_table, &cfg.text_table) else {
                return Err(PipelineError::Config("rank needs image_table and text_table".into()));
            };
            let text = fs::read_to_string(manifest)
                .map_err(|e| PipelineError::Data(format!("{}: {e}", manifest.display())))?;
            let m = parse_manifest(&text, manifest.parent().unwrap_or(Path::new(".")))?;
            let (ranked, records) =
                pipeline::rank_manifest(&m, &load_embedding_table(img)?, &load_embedding_table(txt)?, cfg.top_k)?;
            create_out(out)?;
            pipeline::write_manifest(&ranked, &out.join("manifest.ranked.jsonl"))?;
            pipeline::write_jsonl(&records, &out.join("ranking.jsonl"))?;
            println!("ranked {} samples, k {}", records.len(), cfg.top_k);
        }
        Command::BuildGraphs { manifest } => {
            let m = load_manifest_checked(manifest)?;
            let s = pipeline::build_graphs(&m, out, exec)?;
            println!(
                "samples {} skipped {} nodes {} edges {}",
                s.samples, s.skipped, s.nodes, s.edges
            );
        }
        Command::Keys { graphs, manifest } => {
            create_out(out)?;
            if let Some(dir) = graphs {
                let pairs = pipeline::label_keys(dir)?;
                write_tsv(&out.join("labels.tsv"), &pairs)?;
                println!("labels {}", pairs.len());
            }
            if let Some(m) = manifest {
                let pairs = pipeline::document_keys(&load_manifest_checked(m)?, exec)?;
                write_tsv(&out.join("documents.tsv"), &pairs)?;
                println!("documents {}", pairs.len());
            }
        }
        Command::Features { graphs, .. } => {
            let s = pipeline::featurize_dir(graphs, out, &embedder(&cfg)?, exec)?;
            println!("graphs {} empty {}", s.graphs, s.empty);
        }
        Command::Train { data, .. } => {
            let t = &cfg.train;
            let ds = dataset(data, t.embedding_dim, exec)?;
            create_out(out)?;
            fs::write(out.join("config.json"), cfg.to_json() + "\n").map_err(io_err(out))?;
            let log_path = out.join("metrics.jsonl");
            let mut log = BufWriter::new(fs::File::create(&log_path).map_err(io_err(&log_path))?);
            let outcome = train(t, &ds, exec, Some(&mut log))?;
            log.flush().map_err(io_err(&log_path))?;
            save_checkpoint(&outcome.best, t.seed, outcome.best_epoch, &out.join("checkpoint.json"))?;
            let params = outcome.best.parameter_count();
            println!(
                "params {params} (reference {REFERENCE_PARAM_COUNT}, delta {:+})",
                params as i64 - REFERENCE_PARAM_COUNT as i64
            );
            if let Some(r) = outcome.log.get(outcome.best_epoch.wrapping_sub(1)) {
                println!(
                    "best epoch {} train_acc {:.4} test_acc {:.4} test_f1 {:.4}",
                    r.epoch, r.train_acc, r.test_acc, r.test_f1
                );
            }
            println!(
                "samples {} skipped {} train {} test {}",
                ds.total(),
                ds.skipped.len(),
                outcome.train_idx.len(),
                outcome.test_idx.len()
            );
        }
        Command::Eval { checkpoint, data } => {
            let (model, _) = load_checkpoint(checkpoint)?;
            let ds = pipeline::load_dataset(data, model.config().text_dim, exec)?;
            let ev = evaluate_dataset(&model, &ds, cfg.train.threshold, exec)?;
            println!("{}", serde_json::to_string(&ev.metrics).expect("metrics serialize"));
            println!("evaluated {} skipped {}", ev.metrics.n, ev.skipped);
        }
        Command::Predict {
            checkpoint,
            claim,
            evidence,
            ..
        } => {
            let (model, _) = load_checkpoint(checkpoint)?;
            let emb = match &cfg.label_table {
                Some(_) => embedder(&cfg)?,
                None => LabelEmbedder::Fallback {
                    dim: model.config().text_dim,
                },
            };
            let sample = pipeline::pair_input(&pipeline::read_graph(claim)?, &pipeline::read_graph(evidence)?, &emb)?;
            let batch = Batch::<f32>::new(&[&sample], model.config().text_dim, model.config().edge_features)?;
            let s = model.predict(&batch)?[0];
            println!("{s:.6}");
        }
        Command::Ablate { data, data_384, .. } => {
            let base = dataset(data, cfg.train.embedding_dim, exec)?;
            let small = match (data_384, &data.data) {
                (Some(dir), _) => pipeline::load_dataset(dir, 384, exec)?,
                (None, None) => dataset(data, 384, exec)?,
                (None, Some(_)) => {
                    return Err(PipelineError::Config(
                        "ablate on a feature directory also needs --data-384".into(),
                    ))
                }
            };
            let rows = run_ablation(
                AblationData {
                    base: &base,
                    dim_384: &small,
                },
                &cfg.train,
                exec,
                |r: &AblationRow| eprintln!("{} accuracy {:.4} f1 {:.4}", r.config, r.accuracy, r.f1),
            )?;
            create_out(out)?;
            let csv = out.join("ablation.csv");
            write_ablation_csv(&rows, fs::File::create(&csv).map_err(io_err(&csv))?).map_err(io_err(&csv))?;
            let mut table = format!("{:<28} {:>8} {:>8} {:>10}\n", "config", "accuracy", "f1", "params");
            for r in &rows {
                table += &format!("{:<28} {:>8.4} {:>8.4} {:>10}\n", r.config, r.accuracy, r.f1, r.params);
            }
            fs::write(out.join("ablation.txt"), &table).map_err(io_err(out))?;
            print!("{table}");
        }
        Command::Gradcheck {
            h,
            max_coords,
            tolerance,
            ..
        } => {
            let mc = cfg.train.model_config();
            let sample = pipeline::tiny_sample(mc.text_dim)?;
            let opts = GradCheckOptions {
                h: *h,
                max_coords: *max_coords,
                seed: cfg.train.seed,
            };
            let r = check_gradients(&mc, &sample, cfg.train.seed, opts)?;
            println!(
                "max_rel_error {:.3e} coords {} h {:e} tolerance {:e}",
                r.max_rel_error, r.coords_checked, h, tolerance
            );
            if r.max_rel_error.is_nan() || r.max_rel_error >= *tolerance {
                return Err(PipelineError::Numeric(format!(
                    "gradient check failed: {:.3e} >= {tolerance:e}",
                    r.max_rel_error
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
