//! Training objectives and the optimization loop.

use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{build_alphabet, subsample, Corpus, Sentence};
use crate::error::{Error, Result};
use crate::eval::token_accuracy;
use crate::model::{Architecture, Dims, Dropout, TaggerModel, WordCache};
use crate::numkernel::{check_rate, Gradients, NodeId, RmsProp, Tape};
use crate::tagset::build_inventory;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub arch: Architecture,
    /// Target training sentences kept after a seeded shuffle; `None` keeps all.
    pub target_size: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Learning rate at epoch `e` is `lr0 / (1 + lr_decay·e)`.
    pub lr_decay: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub dropout: f64,
    pub clip_norm: f64,
    pub seed: u64,
    /// Layer sizes; `None` uses 128-dim character embeddings and 256-unit LSTMs.
    pub dims: Option<Dims>,
    /// Stop after this many epochs without target dev improvement.
    pub patience: Option<usize>,
    /// Where to write the best model so far, if anywhere.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: Architecture::Mono,
            target_size: None,
            epochs: 30,
            batch_size: 16,
            lr0: 0.005,
            lr_decay: 0.05,
            rho: 0.9,
            epsilon: 1e-8,
            dropout: 0.2,
            clip_norm: 5.0,
            seed: 1,
            dims: None,
            patience: Some(10),
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.target_size == Some(0) {
            return Err(Error::Config("target size must be at least 1".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("initial learning rate must be > 0, got {}", self.lr0)));
        }
        if !(self.lr_decay >= 0.0 && self.lr_decay.is_finite()) {
            return Err(Error::Config(format!("learning-rate decay must be >= 0, got {}", self.lr_decay)));
        }
        if self.clip_norm.is_nan() || self.clip_norm < 0.0 {
            return Err(Error::Config(format!("clip norm must be >= 0, got {}", self.clip_norm)));
        }
        check_rate(self.dropout)?;
        // rho and epsilon are checked by the optimizer
        Ok(())
    }
}

/// Corpora for one training run. `dev` may hold any of the model's languages.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub sources: Vec<Corpus>,
    pub target: Corpus,
    pub dev: Vec<Corpus>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-token training loss over the epoch.
    pub loss: f64,
    pub lr: f64,
    pub dev_accuracy: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub wall_time: Duration,
    pub target_sentences: usize,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    /// `epoch,loss,dev_acc_<lang>...,lr`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let langs: Vec<&str> = self
            .epochs
            .first()
            .map(|e| e.dev_accuracy.iter().map(|(l, _)| l.as_str()).collect())
            .unwrap_or_default();
        write!(out, "epoch,loss")?;
        for l in &langs {
            write!(out, ",dev_acc_{l}")?;
        }
        writeln!(out, ",lr")?;
        for e in &self.epochs {
            write!(out, "{},{}", e.epoch, e.loss)?;
            for (_, a) in &e.dev_accuracy {
                write!(out, ",{a}")?;
            }
            writeln!(out, ",{}", e.lr)?;
        }
        Ok(())
    }
}

pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    config.lr0 / (1.0 + config.lr_decay * epoch as f64)
}

/// A sentence with tags and language resolved to model indices.
#[derive(Debug, Clone)]
struct Example<'a> {
    words: &'a [String],
    tags: Vec<usize>,
    language: &'a str,
    lang_index: usize,
}

fn resolve<'a>(model: &TaggerModel, s: &'a Sentence, language: &'a str) -> Result<Example<'a>> {
    let lang_index = model.language_index(language)?;
    let tags = s
        .tags()
        .iter()
        .map(|t| {
            model
                .inventory()
                .index_of(t)
                .ok_or_else(|| Error::Lookup(format!("tag {t} is not in the inventory")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Example { words: s.words(), tags, language, lang_index })
}

/// Negative log-likelihood of one sentence under the model's objective:
/// tag NLL, plus per-token language-id NLL for the joint architecture.
fn sentence_loss_node(
    model: &TaggerModel,
    tape: &mut Tape<'_>,
    ex: &Example<'_>,
    cache: &mut WordCache,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<NodeId> {
    let es = model.encode_nodes(tape, ex.words, Some(ex.language), cache, dropout)?;
    let mut terms = Vec::with_capacity(2 * es.len());
    for (&e, &t) in es.iter().zip(&ex.tags) {
        let logits = model.tag_logits_node(tape, e, ex.language)?;
        let lp = tape.log_softmax(logits)?;
        terms.push(tape.pick(lp, t)?);
        if model.architecture() == Architecture::Joint {
            let ll = model.language_logits_node(tape, e)?;
            let lp = tape.log_softmax(ll)?;
            terms.push(tape.pick(lp, ex.lang_index)?);
        }
    }
    let total = tape.add_n(&terms)?;
    Ok(tape.scale(total, -1.0))
}

fn batch_loss_node(
    model: &TaggerModel,
    tape: &mut Tape<'_>,
    batch: &[Example<'_>],
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<NodeId> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    let mut cache = WordCache::new();
    let terms = batch
        .iter()
        .map(|ex| sentence_loss_node(model, tape, ex, &mut cache, dropout.as_deref_mut()))
        .collect::<Result<Vec<_>>>()?;
    tape.add_n(&terms)
}

fn loss_value(model: &TaggerModel, batch: &[Example<'_>]) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let mut tape = Tape::new(model.params());
    let loss = batch_loss_node(model, &mut tape, batch, None)?;
    Ok(tape.scalar(loss))
}

fn own_language(sentences: &[Sentence]) -> impl Iterator<Item = (&Sentence, &str)> {
    sentences.iter().map(|s| (s, s.language()))
}

/// `−Σ log p(t | w)` over a batch, all read as `language`.
pub fn loss_mono(model: &TaggerModel, batch: &[Sentence], language: &str) -> Result<f64> {
    if model.architecture() == Architecture::Joint {
        return Err(Error::Contract("loss_mono on a joint model; use loss_joint".into()));
    }
    let ex = batch.iter().map(|s| resolve(model, s, language)).collect::<Result<Vec<_>>>()?;
    loss_value(model, &ex)
}

/// Source and target tag NLL, each sentence conditioned on its own language.
pub fn loss_multi(model: &TaggerModel, source: &[Sentence], target: &[Sentence]) -> Result<f64> {
    if !matches!(model.architecture(), Architecture::Universal | Architecture::Specific) {
        return Err(Error::Contract(format!("loss_multi on a {} model", model.architecture())));
    }
    let ex = own_language(source)
        .chain(own_language(target))
        .map(|(s, l)| resolve(model, s, l))
        .collect::<Result<Vec<_>>>()?;
    loss_value(model, &ex)
}

/// `−Σ log p(ℓ, t | w)` with `p(ℓ, t | w) = p(ℓ | w)·p(t | w, ℓ)`.
pub fn loss_joint(model: &TaggerModel, source: &[Sentence], target: &[Sentence]) -> Result<f64> {
    if model.architecture() != Architecture::Joint {
        return Err(Error::Contract(format!("loss_joint on a {} model", model.architecture())));
    }
    let ex = own_language(source)
        .chain(own_language(target))
        .map(|(s, l)| resolve(model, s, l))
        .collect::<Result<Vec<_>>>()?;
    loss_value(model, &ex)
}

/// Training objective of the model's architecture and its exact gradient,
/// without dropout. Each sentence is conditioned on its own language.
pub fn loss_with_gradients(model: &TaggerModel, batch: &[Sentence]) -> Result<(f64, Gradients)> {
    let ex = own_language(batch).map(|(s, l)| resolve(model, s, l)).collect::<Result<Vec<_>>>()?;
    let mut tape = Tape::new(model.params());
    let loss = batch_loss_node(model, &mut tape, &ex, None)?;
    let value = tape.scalar(loss);
    Ok((value, tape.backward(loss)?))
}

/// Per-batch lists of (language, sentence) indices for one epoch.
///
/// Languages are interleaved in proportion to corpus size; the target
/// language contributes at least one sentence to every batch (cycling
/// through its shuffled order when it is small).
fn epoch_batches(
    sizes: &[usize],
    target: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<(usize, usize)>> {
    let orders: Vec<Vec<usize>> = sizes
        .iter()
        .map(|&n| {
            let mut o: Vec<usize> = (0..n).collect();
            o.shuffle(rng);
            o
        })
        .collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Vec::new();
    }
    let num_batches = total.div_ceil(batch_size);
    let mut cursors = vec![0usize; sizes.len()];
    let mut batches = Vec::with_capacity(num_batches);
    for b in 0..num_batches {
        let mut batch = Vec::with_capacity(batch_size + 1);
        for (l, &n) in sizes.iter().enumerate() {
            let mut count = (b + 1) * n / num_batches - b * n / num_batches;
            if l == target && count == 0 && n > 0 {
                count = 1;
            }
            for _ in 0..count {
                batch.push((l, orders[l][cursors[l] % n]));
                cursors[l] += 1;
            }
        }
        batches.push(batch);
    }
    batches
}

/// Token accuracy of `model` on `corpus`, decoding with the corpus language.
pub fn corpus_accuracy(model: &TaggerModel, corpus: &Corpus) -> Result<f64> {
    let mut pred = Vec::with_capacity(corpus.len());
    let mut gold = Vec::with_capacity(corpus.len());
    for s in corpus.sentences() {
        pred.push(model.decode(s.words(), corpus.language())?);
        gold.push(s.tags().to_vec());
    }
    token_accuracy(&pred, &gold)
}

/// Trains a model of `config.arch` on the given corpora.
pub fn fit(config: &TrainConfig, data: &TrainData) -> Result<(TaggerModel, TrainReport)> {
    config.validate()?;
    let start = Instant::now();
    if config.arch == Architecture::Mono && !data.sources.is_empty() {
        return Err(Error::Config("the mono architecture trains on the target language only".into()));
    }
    if config.arch != Architecture::Mono && data.sources.is_empty() {
        return Err(Error::Config(format!("the {} architecture needs source corpora", config.arch)));
    }
    let target = match config.target_size {
        Some(n) => subsample(&data.target, n, config.seed)?,
        None => data.target.clone(),
    };
    if target.is_empty() && data.sources.iter().all(Corpus::is_empty) {
        return Err(Error::EmptyInput("no training sentences".into()));
    }
    let mut train: Vec<Corpus> = data.sources.clone();
    train.push(target);
    let languages: Vec<String> = train.iter().map(|c| c.language().to_string()).collect();
    let target_lang = languages.len() - 1;

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut shuffle_rng = init_rng.clone();
    shuffle_rng.set_stream(1);
    let mut dropout_rng = init_rng.clone();
    dropout_rng.set_stream(2);

    let dims = config.dims.unwrap_or_else(|| Dims::full(languages.len()));
    let mut model = TaggerModel::new(
        config.arch,
        languages.clone(),
        build_alphabet(&train),
        build_inventory(&train),
        dims,
        &mut init_rng,
    )?;
    let examples: Vec<Vec<Example<'_>>> = train
        .iter()
        .map(|c| {
            c.sentences()
                .iter()
                .map(|s| resolve(&model, s, c.language()))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let sizes: Vec<usize> = examples.iter().map(Vec::len).collect();
    let dev: Vec<&Corpus> = data
        .dev
        .iter()
        .filter(|c| languages.iter().any(|l| l == c.language()))
        .collect();
    let target_dev = dev.iter().position(|c| c.language() == languages[target_lang]);

    let mut opt = RmsProp::new(model.params(), config.rho, config.epsilon, config.lr0)?;
    let mut grads = Gradients::zeros_like(model.params());
    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, TaggerModel)> = None;

    for epoch in 0..config.epochs {
        let lr = lr_at(epoch, config);
        opt.set_lr(lr);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;
        let mut last_batch = 0;
        for (bi, batch) in epoch_batches(&sizes, target_lang, config.batch_size, &mut shuffle_rng)
            .into_iter()
            .enumerate()
        {
            let batch: Vec<Example<'_>> =
                batch.into_iter().map(|(l, i)| examples[l][i].clone()).collect();
            grads.zero();
            let mut tape = Tape::new(model.params());
            let mut dropout = Dropout { rate: config.dropout, rng: &mut dropout_rng };
            // overflowing parameters surface as non-finite activations before the loss
            let diverged = |e: Error| match e {
                Error::NonFinite(_) => Error::NonFiniteLoss { epoch, batch: bi, lr },
                e => e,
            };
            let loss = batch_loss_node(&model, &mut tape, &batch, Some(&mut dropout)).map_err(diverged)?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi, lr });
            }
            tape.backward_into(loss, &mut grads).map_err(diverged)?;
            if !grads.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi, lr });
            }
            grads.clip_global_norm(config.clip_norm);
            opt.step(model.params_mut(), &grads)?;
            epoch_loss += value;
            epoch_tokens += batch.iter().map(|e| e.words.len()).sum::<usize>();
            last_batch = bi;
        }
        let dev_accuracy = dev
            .iter()
            .map(|c| Ok((c.language().to_string(), corpus_accuracy(&model, c)?)))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| match e {
                Error::NonFinite(_) => Error::NonFiniteLoss { epoch, batch: last_batch, lr },
                e => e,
            })?;
        let loss = epoch_loss / epoch_tokens.max(1) as f64;
        records.push(EpochRecord { epoch, loss, lr, dev_accuracy });

        if let Some(ti) = target_dev {
            let acc = records.last().unwrap().dev_accuracy[ti].1;
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                if let Some(path) = &config.checkpoint {
                    crate::persist::save_model_file(&model, config.seed, path)?;
                }
                best = Some((acc, epoch, model.clone()));
            } else if let (Some(p), Some((_, be, _))) = (config.patience, &best) {
                if epoch - be >= p {
                    break;
                }
            }
        }
    }

    let (model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => {
            if let Some(path) = &config.checkpoint {
                crate::persist::save_model_file(&model, config.seed, path)?;
            }
            let last = records.len().saturating_sub(1);
            (model, last)
        }
    };
    let report = TrainReport {
        epochs: records,
        best_epoch,
        wall_time: start.elapsed(),
        target_sentences: sizes[target_lang],
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;
    use crate::tagset::MorphTag;

    #[test]
    fn lr_schedule() {
        let mut c = TrainConfig { lr0: 0.01, lr_decay: 0.1, ..Default::default() };
        assert_eq!(lr_at(0, &c), 0.01);
        assert!((lr_at(10, &c) - 0.005).abs() < 1e-15);
        c.lr_decay = 0.0;
        assert_eq!(lr_at(50, &c), 0.01);
    }

    #[test]
    fn batches_are_proportional_and_feed_the_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batches = epoch_batches(&[500, 10], 1, 16, &mut rng);
        assert_eq!(batches.len(), 32);
        assert!(batches.iter().all(|b| b.iter().any(|&(l, _)| l == 1)));
        let source: Vec<usize> = batches.iter().flatten().filter(|e| e.0 == 0).map(|e| e.1).collect();
        let mut sorted = source.clone();
        sorted.sort();
        assert_eq!(sorted, (0..500).collect::<Vec<_>>());
        assert!(batches.iter().all(|b| b.len() <= 17));
    }

    #[test]
    fn single_language_batches_cover_everything_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batches = epoch_batches(&[37], 0, 16, &mut rng);
        assert_eq!(batches.iter().map(Vec::len).collect::<Vec<_>>(), vec![12, 12, 13]);
        let mut all: Vec<usize> = batches.iter().flatten().map(|e| e.1).collect();
        all.sort();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { dropout: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr0: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { target_size: Some(0), ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn mono_rejects_sources() {
        let t: MorphTag = "POS=X".parse().unwrap();
        let s = Sentence::new(vec!["a".into()], vec![t], "x").unwrap();
        let c = Corpus::new("x", vec![s.clone()]).unwrap();
        let data = TrainData { sources: vec![c.clone()], target: c, dev: vec![] };
        assert!(matches!(fit(&TrainConfig::default(), &data), Err(Error::Config(_))));
        let cfg = TrainConfig { arch: Architecture::Joint, ..Default::default() };
        let data = TrainData { sources: vec![], target: data.target, dev: vec![] };
        assert!(matches!(fit(&cfg, &data), Err(Error::Config(_))));
    }

    #[test]
    fn report_csv_layout() {
        let r = TrainReport {
            epochs: vec![EpochRecord {
                epoch: 0,
                loss: 1.5,
                lr: 0.005,
                dev_accuracy: vec![("ca".into(), 0.5), ("es".into(), 0.25)],
            }],
            best_epoch: 0,
            wall_time: Duration::ZERO,
            target_sentences: 1,
        };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,loss,dev_acc_ca,dev_acc_es,lr\n0,1.5,0.5,0.25,0.005\n"
        );
    }
}
