//! Token accuracy, per-feature F1 and language-identification accuracy.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::tagset::MorphTag;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold tokens carrying the key.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub tokens: usize,
    pub accuracy: f64,
    /// Unweighted mean of per-key F1 over keys present in the gold tags.
    pub macro_f1: f64,
    pub per_key: BTreeMap<String, KeyScore>,
    pub lang_id_accuracy: Option<f64>,
}

impl EvalResult {
    /// `key,precision,recall,f1,support` rows followed by a `# summary` line.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "key,precision,recall,f1,support")?;
        for (k, s) in &self.per_key {
            writeln!(out, "{k},{},{},{},{}", s.precision, s.recall, s.f1, s.support)?;
        }
        write!(out, "# tokens={},accuracy={},macro_f1={}", self.tokens, self.accuracy, self.macro_f1)?;
        if let Some(l) = self.lang_id_accuracy {
            write!(out, ",lang_id_accuracy={l}")?;
        }
        writeln!(out)?;
        Ok(())
    }
}

fn check_aligned(pred: &[Vec<MorphTag>], gold: &[Vec<MorphTag>]) -> Result<usize> {
    if pred.len() != gold.len() {
        return Err(Error::Contract(format!(
            "{} predicted sentences vs {} gold",
            pred.len(),
            gold.len()
        )));
    }
    let mut tokens = 0;
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Contract(format!(
                "sentence {i}: {} predicted tags vs {} gold",
                p.len(),
                g.len()
            )));
        }
        tokens += g.len();
    }
    Ok(tokens)
}

/// Fraction of tokens whose whole tag matches. 0 for an empty set.
pub fn token_accuracy(pred: &[Vec<MorphTag>], gold: &[Vec<MorphTag>]) -> Result<f64> {
    let tokens = check_aligned(pred, gold)?;
    if tokens == 0 {
        return Ok(0.0);
    }
    let correct = pred
        .iter()
        .flatten()
        .zip(gold.iter().flatten())
        .filter(|(p, g)| p == g)
        .count();
    Ok(correct as f64 / tokens as f64)
}

#[derive(Default)]
struct Counts {
    tp: usize,
    pred: usize,
    gold: usize,
}

fn f1_of(c: &Counts) -> KeyScore {
    let precision = if c.pred == 0 { 0.0 } else { c.tp as f64 / c.pred as f64 };
    let recall = if c.gold == 0 { 0.0 } else { c.tp as f64 / c.gold as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    KeyScore { precision, recall, f1, support: c.gold }
}

/// Per-key precision/recall/F1 pooled over all tokens, macro-averaged over
/// the keys that occur in the gold tags. Also fills in token accuracy.
pub fn per_feature_f1(pred: &[Vec<MorphTag>], gold: &[Vec<MorphTag>]) -> Result<EvalResult> {
    let tokens = check_aligned(pred, gold)?;
    let mut counts: BTreeMap<&str, Counts> = BTreeMap::new();
    for (p, g) in pred.iter().flatten().zip(gold.iter().flatten()) {
        for (k, v) in g.pairs() {
            let c = counts.entry(k).or_default();
            c.gold += 1;
            if p.get(k) == Some(v) {
                c.tp += 1;
            }
        }
    }
    for p in pred.iter().flatten() {
        for (k, _) in p.pairs() {
            if let Some(c) = counts.get_mut(k) {
                c.pred += 1;
            }
        }
    }
    let per_key: BTreeMap<String, KeyScore> =
        counts.iter().map(|(k, c)| (k.to_string(), f1_of(c))).collect();
    let macro_f1 = if per_key.is_empty() {
        0.0
    } else {
        per_key.values().map(|s| s.f1).sum::<f64>() / per_key.len() as f64
    };
    Ok(EvalResult {
        tokens,
        accuracy: token_accuracy(pred, gold)?,
        macro_f1,
        per_key,
        lang_id_accuracy: None,
    })
}

/// Sentence-level exact-match rate of predicted languages.
pub fn lang_id_accuracy<S: AsRef<str>>(pred: &[S], gold: &[S]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::Contract(format!(
            "{} predicted languages vs {} gold",
            pred.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Ok(0.0);
    }
    let hits = pred.iter().zip(gold).filter(|(p, g)| p.as_ref() == g.as_ref()).count();
    Ok(hits as f64 / gold.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(xs: &[&str]) -> Vec<MorphTag> {
        xs.iter().map(|x| x.parse().unwrap()).collect()
    }

    #[test]
    fn accuracy_examples() {
        let g = vec![tags(&["POS=N", "POS=V"])];
        assert_eq!(token_accuracy(&g, &g).unwrap(), 1.0);
        let all_wrong = vec![tags(&["POS=A", "POS=A"])];
        assert_eq!(token_accuracy(&all_wrong, &g).unwrap(), 0.0);
        let half = vec![tags(&["POS=N", "POS=A"])];
        assert_eq!(token_accuracy(&half, &g).unwrap(), 0.5);
        let short = vec![tags(&["POS=N"])];
        assert!(matches!(token_accuracy(&short, &g), Err(Error::Contract(_))));
    }

    #[test]
    fn worked_two_token_example() {
        let gold = vec![tags(&["POS=N|Case=Nom", "POS=V|Tense=Pres"])];
        let pred = vec![tags(&["POS=N|Case=Acc", "POS=V|Tense=Pres"])];
        let r = per_feature_f1(&pred, &gold).unwrap();
        assert_eq!(r.per_key["POS"].f1, 1.0);
        assert_eq!(r.per_key["Case"].f1, 0.0);
        assert_eq!(r.per_key["Tense"].f1, 1.0);
        assert_eq!(r.macro_f1, 2.0 / 3.0);
        assert_eq!(r.accuracy, 0.5);
    }

    #[test]
    fn partial_credit_without_exact_matches() {
        let gold = vec![tags(&["POS=N|Case=Nom|Number=Sing"])];
        let pred = vec![tags(&["POS=N|Case=Acc|Number=Sing"])];
        let r = per_feature_f1(&pred, &gold).unwrap();
        assert_eq!(r.accuracy, 0.0);
        assert!(r.macro_f1 > 0.0);
    }

    #[test]
    fn keys_missing_from_predictions_score_zero() {
        let gold = vec![tags(&["POS=N|Case=Nom"])];
        let pred = vec![tags(&["POS=N|Gender=Fem"])];
        let r = per_feature_f1(&pred, &gold).unwrap();
        assert_eq!(r.per_key["Case"], KeyScore { precision: 0.0, recall: 0.0, f1: 0.0, support: 1 });
        // keys only in predictions are not scored
        assert!(!r.per_key.contains_key("Gender"));
        assert_eq!(r.macro_f1, 0.5);
    }

    #[test]
    fn lang_id_examples() {
        assert_eq!(lang_id_accuracy(&["a", "b"], &["a", "b"]).unwrap(), 1.0);
        assert_eq!(lang_id_accuracy(&["b", "a"], &["a", "b"]).unwrap(), 0.0);
        assert_eq!(lang_id_accuracy(&["x", "x", "x"], &["x", "x", "x"]).unwrap(), 1.0);
        assert!(lang_id_accuracy(&["a"], &["a", "b"]).is_err());
    }

    #[test]
    fn csv_output() {
        let gold = vec![tags(&["POS=N|Case=Nom"])];
        let r = per_feature_f1(&gold, &gold).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("key,precision,recall,f1,support\nCase,1,1,1,1\nPOS,1,1,1,1\n"));
        assert!(s.ends_with("# tokens=1,accuracy=1,macro_f1=1\n"));
    }
}
