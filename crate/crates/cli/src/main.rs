use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rahp::commands::{self, LoadedModel};
use rahp::RahpConfig;

#[derive(Parser)]
#[command(name = "rahp", version, about = "Review-guided answer helpfulness prediction")]
struct Cli {
    #[command(flatten)]
    opts: ConfigOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigOpts {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Drop the review pathway entirely.
    #[arg(long, global = true)]
    no_ra_coherence: bool,
    /// Use `o_r` alone as the review representation.
    #[arg(long, global = true)]
    no_q_to_r_attention: bool,
    /// Word embeddings only.
    #[arg(long, global = true)]
    no_char_embedding: bool,
}

impl ConfigOpts {
    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for s in &self.sets {
            let (k, v) = s.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {s:?}"))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        if let Some(seed) = self.seed {
            out.push(("seed".into(), seed.to_string()));
        }
        for (on, key) in [
            (self.no_ra_coherence, "no_ra_coherence"),
            (self.no_q_to_r_attention, "no_q_to_r_attention"),
            (self.no_char_embedding, "no_char_embedding"),
        ] {
            if on {
                out.push((key.into(), "true".into()));
            }
        }
        Ok(out)
    }

    /// Configuration for commands that build a model from scratch.
    fn build(&self) -> Result<RahpConfig> {
        let mut cfg = match &self.config {
            Some(p) => RahpConfig::load(p)?,
            None => RahpConfig::default(),
        };
        for (k, v) in self.overrides()? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a trained model; its stored configuration wins over `--config`.
    fn load_model(&self, dir: &Path) -> Result<LoadedModel> {
        if self.config.is_some() {
            log::warn!("--config is ignored when loading a trained model; use --set for overrides");
        }
        LoadedModel::load(dir, &self.overrides()?).with_context(|| format!("loading model from {}", dir.display()))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Label answers, retrieve review evidence and write train/valid/test shards.
    Prepare {
        /// Answer records, JSON lines.
        #[arg(long)]
        answers: PathBuf,
        /// Review records, JSON lines.
        #[arg(long)]
        reviews: PathBuf,
        /// Word-vector text file for retrieval; hashed vectors otherwise.
        #[arg(long)]
        vectors: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train the review-answer pathway on an inference corpus.
    Pretrain {
        /// JSON lines or TSV.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        valid: Option<PathBuf>,
        /// Word-vector text file used to initialize the word table.
        #[arg(long)]
        vectors: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the helpfulness model on prepared shards.
    Train {
        /// Directory written by `prepare`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Directory written by `pretrain`.
        #[arg(long)]
        pretrained: Option<PathBuf>,
        #[arg(long)]
        vectors: Option<PathBuf>,
    },
    /// Score a shard and report F1 and AUROC.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        shard: PathBuf,
        /// Per-instance scores as CSV.
        #[arg(long)]
        dump: Option<PathBuf>,
        /// Report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score one question/answer pair with retrieved review evidence.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        question: String,
        #[arg(long)]
        answer: String,
        #[arg(long)]
        product: String,
        /// Review records, JSON lines.
        #[arg(long)]
        reviews: Option<PathBuf>,
        #[arg(long)]
        vectors: Option<PathBuf>,
        /// Write alpha_q.csv and alpha_a.csv to this directory.
        #[arg(long)]
        dump_attention: Option<PathBuf>,
        /// Print the prediction as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Vocabulary overlap of category corpora with a reference corpus.
    Overlap {
        #[arg(long)]
        reference: PathBuf,
        /// `NAME=PATH`; repeatable.
        #[arg(long = "category", value_name = "NAME=PATH", required = true)]
        categories: Vec<String>,
        /// CSV output; stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let opts = &cli.opts;
    match cli.command {
        Command::Prepare {
            answers,
            reviews,
            vectors,
            out,
        } => {
            let cfg = opts.build()?;
            let s = commands::prepare(&cfg, &answers, &reviews, vectors.as_deref(), &out)?;
            println!(
                "answers   {} (helpful {}, unhelpful {}, discarded {}, empty {})",
                s.answers_read, s.helpful, s.unhelpful, s.discarded, s.empty_text
            );
            println!("reviews   {} ({} indexed sentences)", s.reviews_read, s.indexed_sentences);
            println!("splits    train {} / valid {} / test {}", s.train, s.valid, s.test);
            println!("vocab     {}", s.vocab_size);
        }
        Command::Pretrain {
            corpus,
            valid,
            vectors,
            out,
        } => {
            let cfg = opts.build()?;
            let s = commands::pretrain(&cfg, &corpus, valid.as_deref(), vectors.as_deref(), &out)?;
            for e in &s.history {
                let v = e.valid_accuracy.map_or("-".into(), |a| format!("{a:.4}"));
                println!(
                    "epoch {:>3}  loss {:.4}  train acc {:.4}  valid acc {v}",
                    e.epoch, e.loss, e.train_accuracy
                );
            }
            println!(
                "pairs {} train / {} valid, vocab {}, best epoch {}",
                s.train_pairs, s.valid_pairs, s.vocab_size, s.best_epoch
            );
        }
        Command::Train {
            data,
            out,
            pretrained,
            vectors,
        } => {
            let cfg = opts.build()?;
            let s = commands::train(&cfg, &data, &out, pretrained.as_deref(), vectors.as_deref())?;
            for e in &s.history {
                let (auroc, f1) = match &e.valid {
                    Some(r) => (r.auroc.map_or("-".into(), |a| format!("{a:.4}")), format!("{:.4}", r.f1)),
                    None => ("-".into(), "-".into()),
                };
                println!(
                    "epoch {:>3}  loss {:.4}  train acc {:.4}  valid auroc {auroc}  f1 {f1}",
                    e.epoch, e.train_loss, e.train_accuracy
                );
            }
            if let Some(t) = &s.transfer {
                println!("transferred {} tensors, {} word rows", t.copied.len(), t.word_rows_copied);
            }
            println!(
                "best epoch {}{}, {} parameters, model written to {}",
                s.best_epoch,
                if s.stopped_early { " (early stop)" } else { "" },
                s.parameters,
                out.display()
            );
        }
        Command::Evaluate {
            model,
            shard,
            dump,
            report,
        } => {
            let m = opts.load_model(&model)?;
            let (r, _) = commands::evaluate(&m, &shard, dump.as_deref())?;
            print!("{}", r.table());
            if let Some(p) = report {
                fs::write(&p, serde_json::to_string_pretty(&r)? + "\n").with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::Predict {
            model,
            question,
            answer,
            product,
            reviews,
            vectors,
            dump_attention,
            json,
        } => {
            let m = opts.load_model(&model)?;
            let p = commands::predict(&m, &question, &answer, &product, reviews.as_deref(), vectors.as_deref())?;
            if let Some(dir) = dump_attention {
                let (aq, aa) = commands::attention_csv(&m, &question, &answer)?;
                fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                fs::write(dir.join("alpha_q.csv"), aq)?;
                fs::write(dir.join("alpha_a.csv"), aa)?;
            }
            if json {
                println!("{}", serde_json::to_string_pretty(&p)?);
            } else {
                println!("probability {:.6}", p.probability);
                println!(
                    "label       {} (threshold {})",
                    if p.helpful { "helpful" } else { "unhelpful" },
                    m.cfg.threshold
                );
                println!("evidence");
                for (i, slot) in p.evidence.0.iter().enumerate() {
                    match slot {
                        Some(s) => println!("  {}. {:>8.4}  {}", i + 1, s.score, s.text),
                        None => println!("  {}. {:>8}  EMPTY", i + 1, "-"),
                    }
                }
            }
        }
        Command::Overlap {
            reference,
            categories,
            out,
        } => {
            let cats = categories
                .iter()
                .map(|c| {
                    let (name, path) = c
                        .split_once('=')
                        .with_context(|| format!("--category expects NAME=PATH, got {c:?}"))?;
                    Ok((name.to_string(), PathBuf::from(path)))
                })
                .collect::<Result<Vec<_>>>()?;
            if cats.is_empty() {
                bail!("no categories given");
            }
            let rows = commands::overlap(&reference, &cats)?;
            match out {
                Some(p) => {
                    let mut f = fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
                    commands::write_overlap_csv(&mut f, &rows)?;
                }
                None => commands::write_overlap_csv(&mut io::stdout().lock(), &rows)?,
            }
        }
    }
    io::stdout().flush()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            match e.downcast_ref::<rahp::Error>() {
                Some(rahp::Error::Diverged(_)) => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
