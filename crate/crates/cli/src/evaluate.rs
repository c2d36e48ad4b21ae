use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::Args;
use morphtag::corpus::read_conllu_file;
use morphtag::eval::{lang_id_accuracy, per_feature_f1};
use morphtag::persist::load_model_file;
use morphtag::{Architecture, MorphTag};

use crate::error::{CliError, CliResult};

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("prediction").required(true).args(["model", "predicted"])))]
pub struct EvalArgs {
    /// Gold CoNLL-U file
    #[arg(long)]
    pub gold: PathBuf,
    /// Language of the gold file
    #[arg(long)]
    pub language: String,
    /// Model to tag the gold words with
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Already tagged CoNLL-U file aligned with the gold file
    #[arg(long)]
    pub predicted: Option<PathBuf>,
    /// Let a joint model predict each sentence's language and score that too
    #[arg(long, requires = "model")]
    pub predict_language: bool,
    /// Per-key CSV file (default: stdout)
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn run(args: EvalArgs) -> CliResult<()> {
    let gold = read_conllu_file(&args.gold, &args.language)?;
    let gold_tags: Vec<Vec<MorphTag>> = gold.sentences().iter().map(|s| s.tags().to_vec()).collect();

    let (header, pred, langs) = if let Some(path) = &args.predicted {
        let p = read_conllu_file(path, &args.language)?;
        let tags = p.sentences().iter().map(|s| s.tags().to_vec()).collect();
        (format!("# predicted = {}", path.display()), tags, None)
    } else {
        let path = args.model.as_ref().expect("clap requires --model or --predicted");
        let (model, seed) = load_model_file(path)?;
        let mut tags = Vec::with_capacity(gold.len());
        let mut langs = Vec::new();
        if args.predict_language {
            if model.architecture() != Architecture::Joint {
                return Err(CliError::usage("--predict-language needs a joint model"));
            }
            for s in gold.sentences() {
                let (l, t) = model.decode_joint(s.words())?;
                langs.push(l);
                tags.push(t);
            }
        } else {
            for s in gold.sentences() {
                tags.push(model.decode(s.words(), &args.language)?);
            }
        }
        (format!("# seed = {seed}"), tags, args.predict_language.then_some(langs))
    };

    let mut result = per_feature_f1(&pred, &gold_tags)?;
    if let Some(langs) = &langs {
        let expected = vec![args.language.as_str(); langs.len()];
        let got: Vec<&str> = langs.iter().map(String::as_str).collect();
        result.lang_id_accuracy = Some(lang_id_accuracy(&got, &expected)?);
    }

    match &args.output {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            writeln!(w, "{header}")?;
            result.write_csv(&mut w)?;
            w.flush()?;
            print!("tokens {} accuracy {} macro_f1 {}", result.tokens, result.accuracy, result.macro_f1);
            if let Some(l) = result.lang_id_accuracy {
                print!(" lang_id_accuracy {l}");
            }
            println!();
        }
        None => {
            let mut w = BufWriter::new(io::stdout().lock());
            writeln!(w, "{header}")?;
            result.write_csv(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}
