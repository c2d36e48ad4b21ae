use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use morphtag::corpus::{parse_conllu_words, write_token_line};
use morphtag::persist::load_model_file;
use morphtag::Architecture;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    Conllu,
    /// One sentence per line, tokens separated by whitespace
    Text,
}

#[derive(Debug, Args)]
pub struct TagArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Input file, or `-` for stdin
    #[arg(long, default_value = "-")]
    pub input: String,
    /// Language of the input; joint models predict it when omitted
    #[arg(long)]
    pub language: Option<String>,
    /// Input format (detected from the first token line when omitted)
    #[arg(long, value_enum)]
    pub format: Option<InputFormat>,
    /// Output file (default: stdout)
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn read_input(input: &str) -> CliResult<String> {
    let mut text = String::new();
    if input == "-" {
        io::stdin().read_to_string(&mut text)?;
    } else {
        File::open(input)
            .and_then(|mut f| f.read_to_string(&mut text))
            .map_err(|e| CliError::usage(format!("cannot read {input}: {e}")))?;
    }
    Ok(text)
}

fn detect(text: &str) -> InputFormat {
    let first = text.lines().map(str::trim_end).find(|l| !l.trim().is_empty() && !l.starts_with('#'));
    match first {
        Some(l) if l.split('\t').count() == 10 => InputFormat::Conllu,
        _ => InputFormat::Text,
    }
}

/// Splits input into sentences of word forms.
pub fn sentences(text: &str, format: Option<InputFormat>, source: &str) -> CliResult<Vec<Vec<String>>> {
    match format.unwrap_or_else(|| detect(text)) {
        InputFormat::Conllu => Ok(parse_conllu_words(text.as_bytes(), source)?),
        InputFormat::Text => Ok(text
            .lines()
            .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
            .filter(|ws| !ws.is_empty())
            .collect()),
    }
}

pub fn run(args: TagArgs) -> CliResult<()> {
    let (model, seed) = load_model_file(&args.model)?;
    if args.language.is_none() && model.architecture() != Architecture::Joint {
        return Err(CliError::usage(format!(
            "--language is required for a {} model (only joint models predict the language)",
            model.architecture()
        )));
    }
    if let Some(l) = &args.language {
        model.language_index(l)?;
    }
    let text = read_input(&args.input)?;
    let sents = sentences(&text, args.format, &args.input)?;

    let mut out: Box<dyn Write> = match &args.output {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    if !sents.is_empty() {
        writeln!(out, "# seed = {seed}")?;
    }
    for words in &sents {
        let tags = match &args.language {
            Some(l) => model.decode(words, l)?,
            None => {
                let (lang, tags) = model.decode_joint(words)?;
                writeln!(out, "# language = {lang}")?;
                tags
            }
        };
        writeln!(out, "# text = {}", words.join(" "))?;
        for (i, (w, t)) in words.iter().zip(&tags).enumerate() {
            write_token_line(&mut out, i + 1, w, t)?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}
