use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::Args;
use morphtag::corpus::read_conllu_file;
use morphtag::persist::save_model_file;
use morphtag::{Corpus, Split, TrainData};

use crate::error::{CliError, CliResult};
use crate::settings::{read_config_file, LangPath, Overrides};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Source-language training corpus (repeatable)
    #[arg(long, value_name = "LANG=PATH")]
    pub source: Vec<LangPath>,
    /// Target-language training corpus
    #[arg(long, value_name = "LANG=PATH")]
    pub target: Option<LangPath>,
    /// Development corpus used for early stopping (repeatable)
    #[arg(long, value_name = "LANG=PATH")]
    pub dev: Vec<LangPath>,
    /// Flat key = value file; flags win on conflict
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model file to write
    #[arg(long)]
    pub out: PathBuf,
    /// Report CSV (default: <out>.csv)
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

fn lang_paths(key: &str, value: &str) -> CliResult<Vec<LangPath>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| CliError::usage(format!("setting {key}: {e}"))))
        .collect()
}

fn load(lp: &LangPath, split: Split) -> CliResult<Corpus> {
    Ok(read_conllu_file(&lp.path, &lp.language)?.with_split(split))
}

pub fn run(args: TrainArgs) -> CliResult<()> {
    let mut sources = args.source;
    let mut target = args.target;
    let mut dev = args.dev;
    let mut overrides = args.overrides;
    if let Some(path) = &args.config {
        let mut pairs = read_config_file(path)?;
        if let Some(v) = pairs.remove("source") {
            if sources.is_empty() {
                sources = lang_paths("source", &v)?;
            }
        }
        if let Some(v) = pairs.remove("dev") {
            if dev.is_empty() {
                dev = lang_paths("dev", &v)?;
            }
        }
        if let Some(v) = pairs.remove("target") {
            if target.is_none() {
                target = Some(v.parse().map_err(|e| CliError::usage(format!("setting target: {e}")))?);
            }
        }
        overrides = overrides.or(Overrides::from_pairs(&pairs)?);
    }
    let target = target.ok_or_else(|| CliError::usage("--target LANG=PATH is required"))?;

    let mut config = overrides.to_config(sources.len() + 1);
    config.checkpoint = Some(args.out.clone());
    let data = TrainData {
        sources: sources.iter().map(|s| load(s, Split::Train)).collect::<CliResult<_>>()?,
        target: load(&target, Split::Train)?,
        dev: dev.iter().map(|d| load(d, Split::Dev)).collect::<CliResult<_>>()?,
    };
    let (model, report) = morphtag::train::fit(&config, &data)?;
    save_model_file(&model, config.seed, &args.out)?;

    let report_path = args.report.unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".csv");
        PathBuf::from(p)
    });
    let mut w = BufWriter::new(File::create(&report_path)?);
    writeln!(w, "# seed = {}", config.seed)?;
    report.write_csv(&mut w)?;
    w.flush()?;

    let best = &report.epochs[report.best_epoch];
    eprint!(
        "trained {} on {} target sentences: {} epochs in {:.1}s, best epoch {} (loss {:.4}",
        config.arch,
        report.target_sentences,
        report.epochs.len(),
        report.wall_time.as_secs_f64(),
        best.epoch,
        best.loss
    );
    for (lang, acc) in &best.dev_accuracy {
        eprint!(", dev {lang} {:.2}%", acc * 100.0);
    }
    eprintln!(")");
    Ok(())
}
