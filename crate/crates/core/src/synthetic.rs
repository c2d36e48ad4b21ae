//! Small generated language pairs with shared suffix morphology.
//!
//! Two languages built with [`twin_languages`] inflect words with the same
//! suffixes but draw their stems from disjoint consonant inventories, so tag
//! knowledge transfers between them while the language stays identifiable
//! from the spelling. Used by tests and benchmarks.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Sentence};
use crate::tagset::MorphTag;

const GENDER: [(char, &str); 2] = [('m', "Masc"), ('f', "Fem")];
const NUMBER: [(char, &str); 2] = [('s', "Sing"), ('p', "Plur")];
const CASE: [(char, &str); 4] = [('a', "Nom"), ('e', "Acc"), ('i', "Dat"), ('o', "Gen")];
const PERSON: [(char, &str); 3] = [('k', "1"), ('l', "2"), ('r', "3")];
const TENSE: [(char, &str); 3] = [('a', "Past"), ('i', "Pres"), ('o', "Fut")];

// Skewed value frequencies, as in natural text.
const NUMBER_W: [u32; 2] = [7, 3];
const CASE_W: [u32; 4] = [9, 6, 3, 2];
const PERSON_W: [u32; 3] = [2, 2, 6];
const TENSE_W: [u32; 3] = [4, 5, 1];

fn pick(weights: &[u32], rng: &mut ChaCha8Rng) -> usize {
    WeightedIndex::new(weights).unwrap().sample(rng)
}

#[derive(Debug, Clone)]
pub struct SyntheticLanguage {
    code: String,
    nouns: Vec<String>,
    adjectives: Vec<String>,
    verbs: Vec<String>,
}

fn stems(n: usize, consonants: &[char], vowels: &[char], rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.gen_range(1..=2);
        let mut s = String::new();
        for _ in 0..syllables {
            s.push(*consonants.choose(rng).unwrap());
            s.push(*vowels.choose(rng).unwrap());
        }
        s.push(*consonants.choose(rng).unwrap());
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

impl SyntheticLanguage {
    /// A language with its own stem lexicon. `consonants` and `vowels` must be non-empty.
    pub fn new(code: &str, consonants: &[char], vowels: &[char], lexicon_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(lexicon_seed);
        Self {
            code: code.to_string(),
            nouns: stems(30, consonants, vowels, &mut rng),
            adjectives: stems(20, consonants, vowels, &mut rng),
            verbs: stems(20, consonants, vowels, &mut rng),
        }
    }

    pub fn code(&self) -> &str {
        &self.code
    }

    fn nominal(&self, adjective: bool, g: usize, n: usize, c: usize, rng: &mut ChaCha8Rng) -> (String, MorphTag) {
        let (lexicon, class, pos) = if adjective {
            (&self.adjectives, 'y', "ADJ")
        } else {
            (&self.nouns, 'u', "NOUN")
        };
        let mut w = lexicon.choose(rng).unwrap().clone();
        w.extend([class, GENDER[g].0, NUMBER[n].0, CASE[c].0]);
        let tag = MorphTag::from_pairs([
            ("POS", pos),
            ("Gender", GENDER[g].1),
            ("Number", NUMBER[n].1),
            ("Case", CASE[c].1),
        ])
        .unwrap();
        (w, tag)
    }

    fn verb(&self, rng: &mut ChaCha8Rng) -> (String, MorphTag) {
        let (p, n, t) = (pick(&PERSON_W, rng), pick(&NUMBER_W, rng), pick(&TENSE_W, rng));
        let mut w = self.verbs.choose(rng).unwrap().clone();
        w.extend(['e', PERSON[p].0, NUMBER[n].0, TENSE[t].0]);
        let tag = MorphTag::from_pairs([
            ("POS", "VERB"),
            ("Person", PERSON[p].1),
            ("Number", NUMBER[n].1),
            ("Tense", TENSE[t].1),
        ])
        .unwrap();
        (w, tag)
    }

    /// `sentences` random sentences. The same seed gives the same corpus.
    pub fn corpus(&self, sentences: usize, seed: u64) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = (0..sentences)
            .map(|_| {
                let mut words = Vec::new();
                let mut tags = Vec::new();
                let phrases = rng.gen_range(2..=4);
                for _ in 0..phrases {
                    if rng.gen_bool(0.35) {
                        let (w, t) = self.verb(&mut rng);
                        words.push(w);
                        tags.push(t);
                        continue;
                    }
                    let (g, n, c) = (rng.gen_range(0..2), pick(&NUMBER_W, &mut rng), pick(&CASE_W, &mut rng));
                    if rng.gen_bool(0.5) {
                        let (w, t) = self.nominal(true, g, n, c, &mut rng);
                        words.push(w);
                        tags.push(t);
                    }
                    let (w, t) = self.nominal(false, g, n, c, &mut rng);
                    words.push(w);
                    tags.push(t);
                }
                words.push(".".to_string());
                tags.push(MorphTag::from_pairs([("POS", "PUNCT")]).unwrap());
                Sentence::new(words, tags, self.code.clone()).unwrap()
            })
            .collect();
        Corpus::new(self.code.clone(), out).unwrap()
    }
}

/// Two related languages with disjoint stem spellings.
pub fn twin_languages(first: &str, second: &str) -> (SyntheticLanguage, SyntheticLanguage) {
    (
        SyntheticLanguage::new(first, &['p', 't', 'k', 'f', 'x'], &['a', 'e', 'o'], 11),
        SyntheticLanguage::new(second, &['b', 'd', 'g', 'v', 'z'], &['a', 'i', 'u'], 12),
    )
}
