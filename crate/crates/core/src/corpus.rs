//! CoNLL-U ingestion, the shared character alphabet, and seeded subsampling.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Location, Result};
use crate::tagset::{parse_tag, MorphTag};

/// A tagged sentence in one language. Never empty; one tag per token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    words: Vec<String>,
    tags: Vec<MorphTag>,
    language: String,
}

impl Sentence {
    pub fn new(words: Vec<String>, tags: Vec<MorphTag>, language: impl Into<String>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::EmptyInput("sentence without tokens".into()));
        }
        if words.len() != tags.len() {
            return Err(Error::Contract(format!(
                "{} tokens but {} tags",
                words.len(),
                tags.len()
            )));
        }
        if let Some(w) = words.iter().find(|w| w.is_empty()) {
            return Err(Error::Contract(format!("empty word form {w:?}")));
        }
        Ok(Self { words, tags, language: language.into() })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn tags(&self) -> &[MorphTag] {
        &self.tags
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Split {
    #[default]
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

/// Sentences of a single language.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    language: String,
    sentences: Vec<Sentence>,
    split: Split,
}

impl Corpus {
    pub fn new(language: impl Into<String>, sentences: Vec<Sentence>) -> Result<Self> {
        let language = language.into();
        if language.is_empty() {
            return Err(Error::Config("empty language code".into()));
        }
        if let Some(s) = sentences.iter().find(|s| s.language != language) {
            return Err(Error::Contract(format!(
                "sentence in {:?} inside a {language:?} corpus",
                s.language
            )));
        }
        Ok(Self { language, sentences, split: Split::Train })
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }
}

/// Raw token columns of one CoNLL-U sentence block, before tag parsing.
struct Block {
    rows: Vec<(usize, Vec<String>)>,
}

/// Streams sentence blocks, dropping comments, multiword ranges and empty nodes.
fn read_blocks<R: BufRead>(reader: R, source: &str) -> Result<Vec<Block>> {
    let mut blocks = Vec::new();
    let mut rows = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        let loc = || Location { source: source.to_string(), line: n + 1 };
        if line.trim().is_empty() {
            if !rows.is_empty() {
                blocks.push(Block { rows: std::mem::take(&mut rows) });
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::Parse {
                location: loc(),
                message: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        if cols[1].is_empty() {
            return Err(Error::Parse { location: loc(), message: "empty FORM column".into() });
        }
        rows.push((n + 1, cols.into_iter().map(str::to_string).collect()));
    }
    if !rows.is_empty() {
        blocks.push(Block { rows });
    }
    Ok(blocks)
}

/// Parses CoNLL-U: word from column 2, tag from columns 4 and 6.
pub fn parse_conllu<R: BufRead>(reader: R, language: &str, source: &str) -> Result<Corpus> {
    let mut sentences = Vec::new();
    for block in read_blocks(reader, source)? {
        let mut words = Vec::with_capacity(block.rows.len());
        let mut tags = Vec::with_capacity(block.rows.len());
        for (line, cols) in block.rows {
            let tag = parse_tag(&cols[3], &cols[5]).map_err(|e| Error::Parse {
                location: Location { source: source.to_string(), line },
                message: e.to_string(),
            })?;
            words.push(cols[1].clone());
            tags.push(tag);
        }
        sentences.push(Sentence::new(words, tags, language)?);
    }
    Corpus::new(language, sentences)
}

/// Reads only the word forms of each CoNLL-U sentence (tag columns may be blank).
pub fn parse_conllu_words<R: BufRead>(reader: R, source: &str) -> Result<Vec<Vec<String>>> {
    Ok(read_blocks(reader, source)?
        .into_iter()
        .map(|b| b.rows.into_iter().map(|(_, mut c)| c.swap_remove(1)).collect())
        .collect())
}

pub fn read_conllu_file(path: &Path, language: &str) -> Result<Corpus> {
    let f = std::fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    parse_conllu(std::io::BufReader::new(f), language, &path.display().to_string())
}

/// Writes one CoNLL-U token line.
pub fn write_token_line<W: Write>(out: &mut W, id: usize, word: &str, tag: &MorphTag) -> Result<()> {
    writeln!(
        out,
        "{id}\t{word}\t_\t{}\t_\t{}\t_\t_\t_\t_",
        tag.pos().unwrap_or("_"),
        tag.feats()
    )?;
    Ok(())
}

/// Serializes words and tags in CoNLL-U layout.
pub fn write_conllu<W: Write>(corpus: &Corpus, out: &mut W) -> Result<()> {
    for (i, s) in corpus.sentences().iter().enumerate() {
        writeln!(out, "# sent_id = {}", i + 1)?;
        for (j, (w, t)) in s.words().iter().zip(s.tags()).enumerate() {
            write_token_line(out, j + 1, w, t)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Character inventory shared by all languages plus one marker per language and UNK.
///
/// Ids: characters in code-point order, then language markers in sorted code
/// order, then UNK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    chars: Vec<char>,
    char_ids: HashMap<char, usize>,
    languages: Vec<String>,
}

impl Alphabet {
    pub fn new(chars: impl IntoIterator<Item = char>, languages: impl IntoIterator<Item = String>) -> Self {
        let chars: Vec<char> = chars.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let languages: Vec<String> =
            languages.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let char_ids = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Self { chars, char_ids, languages }
    }

    /// Total number of symbols including specials.
    pub fn len(&self) -> usize {
        self.chars.len() + self.languages.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn char_id(&self, c: char) -> Option<usize> {
        self.char_ids.get(&c).copied()
    }

    pub fn language_id(&self, language: &str) -> Option<usize> {
        self.languages
            .iter()
            .position(|l| l == language)
            .map(|i| self.chars.len() + i)
    }

    pub fn unk_id(&self) -> usize {
        self.chars.len() + self.languages.len()
    }

    /// Character ids of `word`; unseen characters map to UNK. With
    /// `mark_language`, the language marker is prepended and appended.
    pub fn encode_word(&self, word: &str, language: &str, mark_language: bool) -> Result<Vec<usize>> {
        let unk = self.unk_id();
        let body = word.chars().map(|c| self.char_id(c).unwrap_or(unk));
        if !mark_language {
            return Ok(body.collect());
        }
        let marker = self
            .language_id(language)
            .ok_or_else(|| Error::Config(format!("language {language:?} not in alphabet")))?;
        let mut ids = Vec::with_capacity(word.len() + 2);
        ids.push(marker);
        ids.extend(body);
        ids.push(marker);
        Ok(ids)
    }
}

/// Σ as the union of all characters, one marker per language present, and UNK.
pub fn build_alphabet(corpora: &[Corpus]) -> Alphabet {
    let chars = corpora
        .iter()
        .flat_map(|c| c.sentences())
        .flat_map(|s| s.words())
        .flat_map(|w| w.chars());
    Alphabet::new(chars, corpora.iter().map(|c| c.language().to_string()))
}

/// First `min(n, |c|)` sentences after a seeded shuffle. Prefix-stable in `n`.
pub fn subsample(c: &Corpus, n: usize, seed: u64) -> Result<Corpus> {
    if n == 0 {
        return Err(Error::Config("subsample size must be at least 1".into()));
    }
    let order = shuffled_indices(c.len(), seed);
    let sentences = order.into_iter().take(n).map(|i| c.sentences[i].clone()).collect();
    Ok(Corpus { language: c.language.clone(), sentences, split: c.split })
}

pub(crate) fn shuffled_indices(len: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusStats {
    pub tokens: usize,
    pub sentences: usize,
    pub unique_tags: usize,
}

pub fn corpus_stats(c: &Corpus) -> CorpusStats {
    let unique: BTreeSet<&MorphTag> = c.sentences.iter().flat_map(|s| s.tags.iter()).collect();
    CorpusStats { tokens: c.token_count(), sentences: c.len(), unique_tags: unique.len() }
}
