//! Morphological tags as key=value bundles and the closed tag inventory.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::corpus::Corpus;
use crate::error::{Error, Result};

pub const POS_KEY: &str = "POS";

/// An unordered bundle of `key=value` pairs, POS included as the key `POS`.
///
/// Pairs are kept in canonical order: `POS` first, then the remaining keys
/// sorted by byte order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MorphTag {
    pairs: Vec<(String, String)>,
}

impl MorphTag {
    /// Builds a tag from arbitrary pairs. Keys must be unique and nothing may be empty.
    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut out: Vec<(String, String)> = Vec::new();
        for (k, v) in pairs {
            let (k, v) = (k.into(), v.into());
            if k.is_empty() || v.is_empty() {
                return Err(Error::Tag(format!("empty key or value in {k:?}={v:?}")));
            }
            if k.contains(['=', '|']) || v.contains('|') || k.chars().any(char::is_whitespace) {
                return Err(Error::Tag(format!("reserved character in {k}={v}")));
            }
            if out.iter().any(|(ek, _)| *ek == k) {
                return Err(Error::Tag(format!("duplicate key {k:?}")));
            }
            out.push((k, v));
        }
        out.sort_by(|a, b| canonical_key_order(&a.0, &b.0));
        Ok(Self { pairs: out })
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn pos(&self) -> Option<&str> {
        self.get(POS_KEY)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// The UD FEATS column for this tag (`_` when there are no features).
    pub fn feats(&self) -> String {
        let feats: Vec<String> = self
            .pairs
            .iter()
            .filter(|(k, _)| k != POS_KEY)
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        if feats.is_empty() {
            "_".to_string()
        } else {
            feats.join("|")
        }
    }
}

fn canonical_key_order(a: &str, b: &str) -> std::cmp::Ordering {
    (a != POS_KEY).cmp(&(b != POS_KEY)).then_with(|| a.cmp(b))
}

impl fmt::Display for MorphTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in self.pairs.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

impl FromStr for MorphTag {
    type Err = Error;

    /// Parses the canonical `key=value|key=value` form.
    fn from_str(s: &str) -> Result<Self> {
        let pairs = s
            .split('|')
            .map(|p| {
                p.split_once('=')
                    .ok_or_else(|| Error::Tag(format!("pair {p:?} lacks '='")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_pairs(pairs)
    }
}

/// Builds a tag from the UPOS and FEATS columns of a CoNLL-U token line.
pub fn parse_tag(upos: &str, feats: &str) -> Result<MorphTag> {
    if upos.is_empty() || upos == "_" {
        return Err(Error::Tag("missing UPOS".into()));
    }
    let mut pairs = vec![(POS_KEY.to_string(), upos.to_string())];
    if feats != "_" && !feats.is_empty() {
        for p in feats.split('|') {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::Tag(format!("feature {p:?} lacks '='")))?;
            if k == POS_KEY {
                return Err(Error::Tag(format!("feature key {POS_KEY:?} is reserved")));
            }
            pairs.push((k.to_string(), v.to_string()));
        }
    }
    MorphTag::from_pairs(pairs)
}

/// The exact set of `(key, value)` pairs of a tag.
pub fn decompose(tag: &MorphTag) -> BTreeSet<(&str, &str)> {
    tag.pairs().collect()
}

/// Bijection between tags and dense indices, with per-language membership.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagInventory {
    tags: Vec<MorphTag>,
    index: HashMap<MorphTag, usize>,
    per_language: BTreeMap<String, BTreeSet<usize>>,
}

impl TagInventory {
    /// Collects every distinct tag; indices follow canonical-string order.
    pub fn from_tagged<'a, I>(items: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a MorphTag)>,
    {
        let mut seen: BTreeMap<String, (MorphTag, BTreeSet<String>)> = BTreeMap::new();
        for (lang, tag) in items {
            seen.entry(tag.to_string())
                .or_insert_with(|| (tag.clone(), BTreeSet::new()))
                .1
                .insert(lang.to_string());
        }
        let mut tags = Vec::with_capacity(seen.len());
        let mut per_language: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
        for (i, (_, (tag, langs))) in seen.into_iter().enumerate() {
            for l in langs {
                per_language.entry(l).or_default().insert(i);
            }
            tags.push(tag);
        }
        Self::from_parts(tags, per_language)
    }

    /// Rebuilds an inventory from stored order and membership.
    pub fn from_parts(tags: Vec<MorphTag>, per_language: BTreeMap<String, BTreeSet<usize>>) -> Self {
        let index = tags.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        Self { tags, index, per_language }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn index_of(&self, tag: &MorphTag) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn tag(&self, index: usize) -> &MorphTag {
        &self.tags[index]
    }

    pub fn tags(&self) -> &[MorphTag] {
        &self.tags
    }

    /// Indices of the tags observed for `language` (T_ℓ).
    pub fn language_tags(&self, language: &str) -> Option<&BTreeSet<usize>> {
        self.per_language.get(language)
    }

    pub fn per_language(&self) -> &BTreeMap<String, BTreeSet<usize>> {
        &self.per_language
    }
}

/// Inventory over the union of the tag sets of all `corpora`.
pub fn build_inventory(corpora: &[Corpus]) -> TagInventory {
    TagInventory::from_tagged(corpora.iter().flat_map(|c| {
        c.sentences()
            .iter()
            .flat_map(move |s| s.tags().iter().map(move |t| (c.language(), t)))
    }))
}
