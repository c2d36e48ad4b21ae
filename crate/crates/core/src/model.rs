//! The tagging architectures.
//!
//! All four share a character BiLSTM word embedder and a context BiLSTM:
//!
//! * `mono`: one language, one softmax over the tag inventory.
//! * `universal`: one shared softmax; each word's character stream is
//!   wrapped in its language's marker symbol before embedding.
//! * `specific`: shared encoder, one softmax layer per language.
//! * `joint`: per-language softmax layers plus a language-identification
//!   MLP, so the language can be predicted instead of given.
//!
//! Tags are predicted independently per token given the sentence encoding,
//! which makes exact decoding a per-token argmax.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};

use crate::corpus::Alphabet;
use crate::error::{Error, Result};
use crate::numkernel::{
    argmax, dropout_mask, glorot_uniform, LstmIds, NodeId, ParamId, ParamStore, Tape, Tensor,
};
use crate::tagset::{MorphTag, TagInventory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Architecture {
    Mono,
    Universal,
    Specific,
    Joint,
}

impl Architecture {
    pub const ALL: [Architecture; 4] =
        [Architecture::Mono, Architecture::Universal, Architecture::Specific, Architecture::Joint];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Mono => "mono",
            Architecture::Universal => "universal",
            Architecture::Specific => "specific",
            Architecture::Joint => "joint",
        }
    }

    /// Whether words carry a language marker in their character stream.
    pub fn marks_language(self) -> bool {
        self == Architecture::Universal
    }

    pub fn has_language_heads(self) -> bool {
        matches!(self, Architecture::Specific | Architecture::Joint)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture {s:?}")))
    }
}

/// Layer sizes. Word vectors have `2·char_hidden` entries and context vectors `2·ctx_hidden`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub char_emb: usize,
    pub char_hidden: usize,
    pub ctx_hidden: usize,
    /// Hidden width of the language-identification MLP (joint only).
    pub langid_hidden: usize,
}

impl Dims {
    /// 128-dim character embeddings and 256-unit LSTMs.
    pub fn full(num_languages: usize) -> Self {
        Self { char_emb: 128, char_hidden: 256, ctx_hidden: 256, langid_hidden: num_languages.max(2) }
    }

    pub fn small(char_emb: usize, hidden: usize, num_languages: usize) -> Self {
        Self { char_emb, char_hidden: hidden, ctx_hidden: hidden, langid_hidden: num_languages.max(2) }
    }

    pub fn word_dim(&self) -> usize {
        2 * self.char_hidden
    }

    pub fn context_dim(&self) -> usize {
        2 * self.ctx_hidden
    }

    fn validate(&self) -> Result<()> {
        if self.char_emb == 0 || self.char_hidden == 0 || self.ctx_hidden == 0 || self.langid_hidden == 0 {
            return Err(Error::Config(format!("all dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Head {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LangIdMlp {
    pub v: ParamId,
    pub u: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    char_emb: ParamId,
    char_fwd: LstmIds,
    char_bwd: LstmIds,
    ctx_fwd: LstmIds,
    ctx_bwd: LstmIds,
    heads: Vec<Head>,
    langid: Option<LangIdMlp>,
}

/// Word-vector nodes already built on a tape, keyed by (marker language, word).
pub type WordCache = HashMap<(Option<usize>, String), NodeId>;

/// Train-time dropout applied to word vectors and context vectors.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut dyn RngCore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerModel {
    arch: Architecture,
    languages: Vec<String>,
    alphabet: Alphabet,
    inventory: TagInventory,
    dims: Dims,
    params: ParamStore,
    layout: Layout,
}

fn head_name(arch: Architecture, lang: Option<&str>, part: &str) -> String {
    match (arch.has_language_heads(), lang) {
        (true, Some(l)) => format!("head.{l}.{part}"),
        _ => format!("head.{part}"),
    }
}

impl TaggerModel {
    /// Freshly initialized model.
    pub fn new<R: Rng + ?Sized>(
        arch: Architecture,
        languages: Vec<String>,
        alphabet: Alphabet,
        inventory: TagInventory,
        dims: Dims,
        rng: &mut R,
    ) -> Result<Self> {
        Self::check_setup(arch, &languages, &alphabet, &inventory, &dims)?;
        let mut p = ParamStore::new();
        let char_emb = p.add("char_emb", glorot_uniform(alphabet.len(), dims.char_emb, rng))?;
        let char_fwd = LstmIds::register(&mut p, "char_fwd", dims.char_emb, dims.char_hidden, rng)?;
        let char_bwd = LstmIds::register(&mut p, "char_bwd", dims.char_emb, dims.char_hidden, rng)?;
        let ctx_fwd = LstmIds::register(&mut p, "ctx_fwd", dims.word_dim(), dims.ctx_hidden, rng)?;
        let ctx_bwd = LstmIds::register(&mut p, "ctx_bwd", dims.word_dim(), dims.ctx_hidden, rng)?;
        let n = dims.context_dim();
        let t = inventory.len();
        let head_langs: Vec<Option<&str>> = if arch.has_language_heads() {
            languages.iter().map(|l| Some(l.as_str())).collect()
        } else {
            vec![None]
        };
        let mut heads = Vec::new();
        for lang in head_langs {
            let w = p.add(head_name(arch, lang, "w"), glorot_uniform(t, n, rng))?;
            let b = p.add(head_name(arch, lang, "b"), Tensor::zeros(&[t]))?;
            heads.push(Head { w, b });
        }
        let langid = if arch == Architecture::Joint {
            let v = p.add("langid.v", glorot_uniform(dims.langid_hidden, n, rng))?;
            let u = p.add("langid.u", glorot_uniform(languages.len(), dims.langid_hidden, rng))?;
            Some(LangIdMlp { v, u })
        } else {
            None
        };
        let layout = Layout { char_emb, char_fwd, char_bwd, ctx_fwd, ctx_bwd, heads, langid };
        Ok(Self { arch, languages, alphabet, inventory, dims, params: p, layout })
    }

    /// Reassembles a model from stored parameters, checking every shape.
    pub fn from_parts(
        arch: Architecture,
        languages: Vec<String>,
        alphabet: Alphabet,
        inventory: TagInventory,
        dims: Dims,
        params: ParamStore,
    ) -> Result<Self> {
        Self::check_setup(arch, &languages, &alphabet, &inventory, &dims)?;
        let find = |name: &str| {
            params.find(name).ok_or_else(|| Error::Format(format!("missing parameter {name}")))
        };
        let heads = if arch.has_language_heads() {
            languages
                .iter()
                .map(|l| {
                    Ok(Head {
                        w: find(&head_name(arch, Some(l), "w"))?,
                        b: find(&head_name(arch, Some(l), "b"))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![Head { w: find("head.w")?, b: find("head.b")? }]
        };
        let langid = if arch == Architecture::Joint {
            Some(LangIdMlp { v: find("langid.v")?, u: find("langid.u")? })
        } else {
            None
        };
        let layout = Layout {
            char_emb: find("char_emb")?,
            char_fwd: LstmIds::lookup(&params, "char_fwd")?,
            char_bwd: LstmIds::lookup(&params, "char_bwd")?,
            ctx_fwd: LstmIds::lookup(&params, "ctx_fwd")?,
            ctx_bwd: LstmIds::lookup(&params, "ctx_bwd")?,
            heads,
            langid,
        };
        let expected = Self::new(
            arch,
            languages.clone(),
            alphabet.clone(),
            inventory.clone(),
            dims,
            &mut rand::rngs::mock::StepRng::new(0, 0),
        )?;
        if expected.params.len() != params.len() {
            return Err(Error::Format(format!(
                "expected {} parameter blocks, found {}",
                expected.params.len(),
                params.len()
            )));
        }
        for (_, name, t) in expected.params.iter() {
            let got = params.get(find(name)?);
            if got.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "parameter {name}: expected shape {:?}, found {:?}",
                    t.shape(),
                    got.shape()
                )));
            }
        }
        Ok(Self { arch, languages, alphabet, inventory, dims, params, layout })
    }

    fn check_setup(
        arch: Architecture,
        languages: &[String],
        alphabet: &Alphabet,
        inventory: &TagInventory,
        dims: &Dims,
    ) -> Result<()> {
        dims.validate()?;
        if languages.is_empty() {
            return Err(Error::Config("a model needs at least one language".into()));
        }
        for (i, l) in languages.iter().enumerate() {
            if languages[..i].contains(l) {
                return Err(Error::Config(format!("language {l:?} listed twice")));
            }
            if l.is_empty() || l.contains(['.', '|', '\t', '\n']) {
                return Err(Error::Config(format!("invalid language code {l:?}")));
            }
        }
        if arch == Architecture::Mono && languages.len() != 1 {
            return Err(Error::Config("mono architecture takes exactly one language".into()));
        }
        if arch.marks_language() {
            if let Some(l) = languages.iter().find(|l| alphabet.language_id(l).is_none()) {
                return Err(Error::Config(format!("language {l:?} has no marker in the alphabet")));
            }
        }
        if inventory.is_empty() {
            return Err(Error::Config("empty tag inventory".into()));
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn inventory(&self) -> &TagInventory {
        &self.inventory
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn language_index(&self, language: &str) -> Result<usize> {
        self.languages
            .iter()
            .position(|l| l == language)
            .ok_or_else(|| Error::Config(format!("language {language:?} is not known to this model")))
    }

    /// Output layer used for `language`.
    pub fn head(&self, language: &str) -> Result<Head> {
        if self.arch.has_language_heads() {
            Ok(self.layout.heads[self.language_index(language)?])
        } else {
            Ok(self.layout.heads[0])
        }
    }

    pub fn heads(&self) -> &[Head] {
        &self.layout.heads
    }

    pub fn langid_mlp(&self) -> Option<LangIdMlp> {
        self.layout.langid
    }

    fn marker_language(&self, language: Option<&str>) -> Result<Option<usize>> {
        if !self.arch.marks_language() {
            return Ok(None);
        }
        let l = language.ok_or_else(|| {
            Error::Config("the universal architecture needs the sentence language".into())
        })?;
        self.language_index(l)?;
        Ok(Some(self.alphabet.language_id(l).expect("checked at construction")))
    }

    // ---- tape-level forward pieces ----

    /// Word vector `v` for `word` (character BiLSTM final states).
    pub fn word_node(
        &self,
        tape: &mut Tape<'_>,
        word: &str,
        language: Option<&str>,
        cache: &mut WordCache,
    ) -> Result<NodeId> {
        if word.is_empty() {
            return Err(Error::EmptyInput("cannot embed an empty word".into()));
        }
        let marker = self.marker_language(language)?;
        let key = (marker, word.to_string());
        if let Some(&n) = cache.get(&key) {
            return Ok(n);
        }
        let unk = self.alphabet.unk_id();
        let mut ids = Vec::with_capacity(word.len() + 2);
        ids.extend(marker);
        ids.extend(word.chars().map(|c| self.alphabet.char_id(c).unwrap_or(unk)));
        ids.extend(marker);

        let table = tape.param(self.layout.char_emb);
        let embs = ids.iter().map(|&i| tape.row(table, i)).collect::<Result<Vec<_>>>()?;
        let fwd = self.layout.char_fwd.run(tape, &embs)?;
        let rev: Vec<NodeId> = embs.iter().rev().copied().collect();
        let bwd = self.layout.char_bwd.run(tape, &rev)?;
        let hf = self.layout.char_fwd.hidden(tape, *fwd.last().unwrap())?;
        let hb = self.layout.char_bwd.hidden(tape, *bwd.last().unwrap())?;
        let v = tape.concat(&[hf, hb])?;
        cache.insert(key, v);
        Ok(v)
    }

    /// Context vectors `e_i = [fwd(v_1..v_i); bwd(v_N..v_{i+1})]`, zero for the empty span at `i = N`.
    pub fn context_nodes(
        &self,
        tape: &mut Tape<'_>,
        word_vectors: &[NodeId],
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Vec<NodeId>> {
        let n = word_vectors.len();
        if n == 0 {
            return Err(Error::EmptyInput("sentence without words".into()));
        }
        let mut vs = Vec::with_capacity(n);
        for &v in word_vectors {
            vs.push(match dropout.as_deref_mut() {
                Some(d) => apply_mask(tape, v, d)?,
                None => v,
            });
        }
        let fwd = self.layout.ctx_fwd.run(tape, &vs)?;
        // Only v_N..v_2 is ever needed by the backward direction.
        let rev: Vec<NodeId> = vs[1..].iter().rev().copied().collect();
        let bwd = if rev.is_empty() { Vec::new() } else { self.layout.ctx_bwd.run(tape, &rev)? };
        let mut out = Vec::with_capacity(n);
        for (p, &state) in fwd.iter().enumerate() {
            let hf = self.layout.ctx_fwd.hidden(tape, state)?;
            let hb = if p + 1 < n {
                self.layout.ctx_bwd.hidden(tape, bwd[n - p - 2])?
            } else {
                tape.zeros(self.dims.ctx_hidden)
            };
            let e = tape.concat(&[hf, hb])?;
            out.push(match dropout.as_deref_mut() {
                Some(d) => apply_mask(tape, e, d)?,
                None => e,
            });
        }
        Ok(out)
    }

    /// Word vectors then context vectors for a whole sentence.
    pub fn encode_nodes(
        &self,
        tape: &mut Tape<'_>,
        words: &[String],
        language: Option<&str>,
        cache: &mut WordCache,
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Vec<NodeId>> {
        let vs = words
            .iter()
            .map(|w| self.word_node(tape, w, language, cache))
            .collect::<Result<Vec<_>>>()?;
        self.context_nodes(tape, &vs, dropout)
    }

    /// Unnormalized tag scores `W_ℓ e + b_ℓ`.
    pub fn tag_logits_node(&self, tape: &mut Tape<'_>, e: NodeId, language: &str) -> Result<NodeId> {
        let head = self.head(language)?;
        let w = tape.param(head.w);
        let b = tape.param(head.b);
        let s = tape.matvec(w, e)?;
        tape.add(s, b)
    }

    /// Unnormalized language scores `U tanh(V e)`.
    pub fn language_logits_node(&self, tape: &mut Tape<'_>, e: NodeId) -> Result<NodeId> {
        let mlp = self.layout.langid.ok_or_else(|| {
            Error::Contract(format!("{} model has no language-identification layer", self.arch))
        })?;
        let v = tape.param(mlp.v);
        let u = tape.param(mlp.u);
        let hidden = tape.matvec(v, e)?;
        let hidden = tape.tanh(hidden);
        tape.matvec(u, hidden)
    }

    // ---- value-level API ----

    pub fn embed_word(&self, word: &str, language: &str) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        let v = self.word_node(&mut tape, word, Some(language), &mut WordCache::new())?;
        Ok(tape.value(v).values().to_vec())
    }

    pub fn embed_context(&self, words: &[String], language: &str) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new(&self.params);
        let es = self.encode_nodes(&mut tape, words, Some(language), &mut WordCache::new(), None)?;
        Ok(es.iter().map(|&e| tape.value(e).values().to_vec()).collect())
    }

    /// Context vectors from given word vectors.
    pub fn embed_context_from(&self, word_vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new(&self.params);
        let vs = word_vectors
            .iter()
            .map(|v| {
                if v.len() != self.dims.word_dim() {
                    return Err(Error::Shape(format!(
                        "word vector of length {}, expected {}",
                        v.len(),
                        self.dims.word_dim()
                    )));
                }
                tape.input_vector(v.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        let es = self.context_nodes(&mut tape, &vs, None)?;
        Ok(es.iter().map(|&e| tape.value(e).values().to_vec()).collect())
    }

    fn check_context(&self, e: &[f64]) -> Result<()> {
        if e.len() != self.dims.context_dim() {
            return Err(Error::Shape(format!(
                "context vector of length {}, expected {}",
                e.len(),
                self.dims.context_dim()
            )));
        }
        Ok(())
    }

    /// `p(t | w, ℓ)` over the inventory for one context vector.
    pub fn tag_distribution(&self, e: &[f64], language: &str) -> Result<Vec<f64>> {
        self.check_context(e)?;
        let mut tape = Tape::new(&self.params);
        let en = tape.input_vector(e.to_vec())?;
        let logits = self.tag_logits_node(&mut tape, en, language)?;
        crate::numkernel::softmax(tape.value(logits).values())
    }

    /// `p(ℓ | w)` over the model's languages for one context vector.
    pub fn language_distribution(&self, e: &[f64]) -> Result<Vec<f64>> {
        if self.layout.langid.is_none() {
            return Err(Error::Contract(format!(
                "language_distribution on a {} model",
                self.arch
            )));
        }
        self.check_context(e)?;
        let mut tape = Tape::new(&self.params);
        let en = tape.input_vector(e.to_vec())?;
        let logits = self.language_logits_node(&mut tape, en)?;
        crate::numkernel::softmax(tape.value(logits).values())
    }

    /// Per-token log-probability tables: `[token][tag]` for `language`.
    fn tag_log_probs(&self, words: &[String], language: &str) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new(&self.params);
        let es = self.encode_nodes(&mut tape, words, Some(language), &mut WordCache::new(), None)?;
        let mut out = Vec::with_capacity(es.len());
        for e in es {
            let l = self.tag_logits_node(&mut tape, e, language)?;
            let lp = tape.log_softmax(l)?;
            out.push(tape.value(lp).values().to_vec());
        }
        Ok(out)
    }

    /// `Σ_i log p(t_i | w, ℓ)`.
    pub fn sentence_log_prob(&self, words: &[String], tags: &[MorphTag], language: &str) -> Result<f64> {
        if words.len() != tags.len() {
            return Err(Error::Contract(format!("{} words but {} tags", words.len(), tags.len())));
        }
        let idx = tags
            .iter()
            .map(|t| {
                self.inventory
                    .index_of(t)
                    .ok_or_else(|| Error::Lookup(format!("tag {t} is not in the inventory")))
            })
            .collect::<Result<Vec<_>>>()?;
        let table = self.tag_log_probs(words, language)?;
        Ok(table.iter().zip(idx).map(|(row, i)| row[i]).sum())
    }

    /// Best tag index per token; ties go to the lowest index.
    pub fn decode_indices(&self, words: &[String], language: &str) -> Result<Vec<usize>> {
        Ok(self.tag_log_probs(words, language)?.iter().map(|row| argmax(row)).collect())
    }

    pub fn decode(&self, words: &[String], language: &str) -> Result<Vec<MorphTag>> {
        Ok(self
            .decode_indices(words, language)?
            .into_iter()
            .map(|i| self.inventory.tag(i).clone())
            .collect())
    }

    /// Predicts the sentence language and its tags together. Each language
    /// is scored by the mean per-token `log p(ℓ|w)` plus the log-probability
    /// of its best tag sequence; ties go to the earlier language.
    pub fn decode_joint(&self, words: &[String]) -> Result<(String, Vec<MorphTag>)> {
        let (li, tags) = self.decode_joint_indices(words)?;
        Ok((
            self.languages[li].clone(),
            tags.into_iter().map(|i| self.inventory.tag(i).clone()).collect(),
        ))
    }

    pub fn decode_joint_indices(&self, words: &[String]) -> Result<(usize, Vec<usize>)> {
        if self.arch != Architecture::Joint {
            return Err(Error::Contract(format!("decode_joint on a {} model", self.arch)));
        }
        let mut tape = Tape::new(&self.params);
        let es = self.encode_nodes(&mut tape, words, None, &mut WordCache::new(), None)?;
        let n = es.len() as f64;
        let mut lang_score = vec![0.0; self.languages.len()];
        for &e in &es {
            let l = self.language_logits_node(&mut tape, e)?;
            let lp = tape.log_softmax(l)?;
            for (s, v) in lang_score.iter_mut().zip(tape.value(lp).values()) {
                *s += v / n;
            }
        }
        let mut best: Option<(f64, usize, Vec<usize>)> = None;
        for (li, lang) in self.languages.iter().enumerate() {
            let mut score = lang_score[li];
            let mut tags = Vec::with_capacity(es.len());
            for &e in &es {
                let l = self.tag_logits_node(&mut tape, e, lang)?;
                let lp = tape.log_softmax(l)?;
                let row = tape.value(lp).values();
                let t = argmax(row);
                score += row[t];
                tags.push(t);
            }
            if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
                best = Some((score, li, tags));
            }
        }
        let (_, li, tags) = best.expect("at least one language");
        Ok((li, tags))
    }
}

fn apply_mask(tape: &mut Tape<'_>, x: NodeId, d: &mut Dropout<'_>) -> Result<NodeId> {
    if d.rate == 0.0 {
        return Ok(x);
    }
    let mask = dropout_mask(tape.value(x).len(), d.rate, &mut *d.rng)?;
    tape.mask(x, mask)
}
