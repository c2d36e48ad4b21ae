use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use morphtag::corpus::{corpus_stats, read_conllu_file};

use crate::error::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// CoNLL-U files as PATH or LANG=PATH
    #[arg(required = true, value_name = "[LANG=]PATH")]
    pub files: Vec<String>,
}

/// Language and split from UD names such as `es_ancora-ud-train.conllu`.
fn infer(path: &Path) -> (String, String) {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    let language = stem.split(['_', '-', '.']).next().filter(|s| !s.is_empty()).unwrap_or("und");
    let split = ["train", "dev", "test"]
        .into_iter()
        .find(|s| stem.ends_with(&format!("-{s}")) || stem.ends_with(&format!("_{s}")))
        .unwrap_or("");
    (language.to_string(), split.to_string())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn run(args: StatsArgs) -> CliResult<()> {
    let mut out = io::stdout().lock();
    writeln!(out, "file,language,split,sentences,tokens,unique_tags")?;
    let mut failed = 0;
    for arg in &args.files {
        let (explicit, path) = match arg.split_once('=') {
            Some((l, p)) if !l.is_empty() && !Path::new(arg).exists() => (Some(l.to_string()), PathBuf::from(p)),
            _ => (None, PathBuf::from(arg)),
        };
        let (inferred, split) = infer(&path);
        let language = explicit.unwrap_or(inferred);
        match read_conllu_file(&path, &language) {
            Ok(c) => {
                let s = corpus_stats(&c);
                writeln!(
                    out,
                    "{},{language},{split},{},{},{}",
                    csv_field(&path.display().to_string()),
                    s.sentences,
                    s.tokens,
                    s.unique_tags
                )?;
            }
            Err(e) => {
                eprintln!("morphtag: {}: {e}", path.display());
                failed += 1;
            }
        }
    }
    out.flush()?;
    if failed > 0 {
        return Err(CliError::usage(format!("{failed} of {} files could not be read", args.files.len())));
    }
    Ok(())
}
