//! Grid runner: trains one model per cell and summarizes accuracies as
//! source × target matrices and learning curves over target sizes.
//!
//! Spec file (TOML), paths relative to the spec's directory:
//!
//! ```toml
//! output = "runs/es"
//!
//! [corpora.es]
//! train = "es-train.conllu"
//! dev = "es-dev.conllu"      # optional, used for early stopping
//! test = "es-test.conllu"
//!
//! [train]                    # optional, same keys as `train --config`
//! epochs = 20
//!
//! [[grid]]
//! sources = [["ca"], ["pt"], ["ca", "pt"]]
//! targets = ["es"]
//! sizes = [10, 100, 1000, "all"]
//! architectures = ["mono", "joint"]
//! seeds = [1, 2, 3]
//! ```
//!
//! Cells are the product of the grid axes. Mono cells ignore `sources`, and
//! combinations whose target is among its sources are dropped.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use morphtag::corpus::parse_conllu;
use morphtag::persist::save_model_file;
use morphtag::train::{corpus_accuracy, fit};
use morphtag::{Architecture, Corpus, Split, TrainData};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::settings::{Overrides, TargetSize};
use crate::svg::{line_chart, Series};

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// TOML experiment spec
    pub spec: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    output: PathBuf,
    corpora: BTreeMap<String, CorpusPaths>,
    #[serde(default)]
    train: BTreeMap<String, toml::Value>,
    grid: Vec<GridBlock>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusPaths {
    train: PathBuf,
    dev: Option<PathBuf>,
    test: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridBlock {
    #[serde(default)]
    sources: Vec<Vec<String>>,
    targets: Vec<String>,
    sizes: Vec<SizeValue>,
    architectures: Vec<String>,
    seeds: Vec<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SizeValue {
    Count(u64),
    Word(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Cell {
    arch: Architecture,
    sources: Vec<String>,
    target: String,
    size: TargetSize,
    seed: u64,
}

impl Cell {
    fn sources_label(&self) -> String {
        if self.sources.is_empty() {
            "none".into()
        } else {
            self.sources.join("+")
        }
    }

    fn describe(&self) -> String {
        format!(
            "{} {}->{} size={} seed={}",
            self.arch,
            self.sources_label(),
            self.target,
            self.size,
            self.seed
        )
    }
}

/// One finished cell, stored as `cells/<checksum>.toml`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CellResult {
    checksum: String,
    arch: String,
    sources: Vec<String>,
    target: String,
    size: String,
    seed: u64,
    target_sentences: usize,
    accuracy: f64,
    lang_id_accuracy: Option<f64>,
    best_epoch: usize,
    epochs: usize,
    wall_seconds: f64,
}

struct LoadedCorpus {
    corpus: Corpus,
    sha256: String,
}

struct Experiment {
    out: PathBuf,
    overrides: Overrides,
    corpora: BTreeMap<String, (LoadedCorpus, Option<LoadedCorpus>, LoadedCorpus)>,
    cells: Vec<Cell>,
}

fn toml_scalar(key: &str, v: &toml::Value) -> CliResult<String> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        _ => Err(CliError::usage(format!("[train] {key}: expected a scalar value"))),
    }
}

fn load_corpus(path: &Path, language: &str, split: Split) -> CliResult<LoadedCorpus> {
    let bytes = fs::read(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let corpus = parse_conllu(bytes.as_slice(), language, &path.display().to_string())?.with_split(split);
    Ok(LoadedCorpus { corpus, sha256: hex::encode(Sha256::digest(&bytes)) })
}

fn expand(grid: &[GridBlock], corpora: &BTreeMap<String, CorpusPaths>) -> CliResult<Vec<Cell>> {
    let known = |l: &str| -> CliResult<()> {
        if corpora.contains_key(l) {
            Ok(())
        } else {
            Err(CliError::usage(format!("language {l:?} has no [corpora.{l}] entry")))
        }
    };
    let mut cells = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (gi, g) in grid.iter().enumerate() {
        let what = |axis: &str| CliError::usage(format!("grid block {}: `{axis}` is empty", gi + 1));
        if g.targets.is_empty() {
            return Err(what("targets"));
        }
        if g.sizes.is_empty() {
            return Err(what("sizes"));
        }
        if g.architectures.is_empty() {
            return Err(what("architectures"));
        }
        if g.seeds.is_empty() {
            return Err(what("seeds"));
        }
        let archs: Vec<Architecture> = g
            .architectures
            .iter()
            .map(|a| a.parse().map_err(|e: morphtag::Error| CliError::usage(e.to_string())))
            .collect::<CliResult<_>>()?;
        let sizes: Vec<TargetSize> = g
            .sizes
            .iter()
            .map(|s| match s {
                SizeValue::Count(n) => format!("{n}").parse(),
                SizeValue::Word(w) => w.parse(),
            })
            .collect::<Result<_, String>>()
            .map_err(|e| CliError::usage(format!("grid block {}: sizes: {e}", gi + 1)))?;
        for set in &g.sources {
            if set.is_empty() {
                return Err(CliError::usage(format!("grid block {}: empty source set", gi + 1)));
            }
            for l in set {
                known(l)?;
            }
        }
        for t in &g.targets {
            known(t)?;
        }
        if archs.iter().any(|&a| a != Architecture::Mono) && g.sources.is_empty() {
            return Err(CliError::usage(format!(
                "grid block {}: transfer architectures need at least one source set",
                gi + 1
            )));
        }
        let no_sources = vec![Vec::new()];
        for &arch in &archs {
            let sets = if arch == Architecture::Mono { &no_sources } else { &g.sources };
            for sources in sets {
                for target in &g.targets {
                    if sources.contains(target) {
                        continue;
                    }
                    for &size in &sizes {
                        for &seed in &g.seeds {
                            let cell = Cell { arch, sources: sources.clone(), target: target.clone(), size, seed };
                            if seen.insert(cell.clone()) {
                                cells.push(cell);
                            }
                        }
                    }
                }
            }
        }
    }
    if cells.is_empty() {
        return Err(CliError::usage("the grid has no cells"));
    }
    Ok(cells)
}

fn prepare(spec_path: &Path) -> CliResult<Experiment> {
    let text = fs::read_to_string(spec_path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", spec_path.display())))?;
    let spec: SpecFile =
        toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", spec_path.display())))?;
    let base = spec_path.parent().unwrap_or(Path::new("."));

    let mut pairs = BTreeMap::new();
    for (k, v) in &spec.train {
        let norm = k.replace('_', "-");
        if ["arch", "seed", "target-size"].contains(&norm.as_str()) {
            return Err(CliError::usage(format!("[train] {k}: set this through the grid instead")));
        }
        pairs.insert(k.clone(), toml_scalar(k, v)?);
    }
    let overrides = Overrides::from_pairs(&pairs)?;
    overrides.to_config(2).validate()?;

    let cells = expand(&spec.grid, &spec.corpora)?;
    let used: BTreeSet<&str> = cells
        .iter()
        .flat_map(|c| c.sources.iter().map(String::as_str).chain([c.target.as_str()]))
        .collect();
    let mut corpora = BTreeMap::new();
    for lang in used {
        let p = &spec.corpora[lang];
        let train = load_corpus(&base.join(&p.train), lang, Split::Train)?;
        let dev = p.dev.as_ref().map(|d| load_corpus(&base.join(d), lang, Split::Dev)).transpose()?;
        let test = load_corpus(&base.join(&p.test), lang, Split::Test)?;
        corpora.insert(lang.to_string(), (train, dev, test));
    }
    Ok(Experiment { out: base.join(&spec.output), overrides, corpora, cells })
}

impl Experiment {
    fn config(&self, cell: &Cell) -> morphtag::TrainConfig {
        let mut cfg = self.overrides.to_config(cell.sources.len() + 1);
        cfg.arch = cell.arch;
        cfg.seed = cell.seed;
        cfg.target_size = cell.size.0;
        cfg
    }

    /// Hash of everything that determines a cell's outcome.
    fn checksum(&self, cell: &Cell) -> String {
        let cfg = self.config(cell);
        let mut s = String::from("morphtag cell v1\n");
        let _ = writeln!(s, "arch={}\nsources={}\ntarget={}", cell.arch, cell.sources.join(","), cell.target);
        let _ = writeln!(s, "size={}\nseed={}", cell.size, cell.seed);
        let _ = writeln!(
            s,
            "epochs={} batch={} lr0={:e} decay={:e} rho={:e} eps={:e} dropout={:e} clip={:e} patience={:?} dims={:?}",
            cfg.epochs,
            cfg.batch_size,
            cfg.lr0,
            cfg.lr_decay,
            cfg.rho,
            cfg.epsilon,
            cfg.dropout,
            cfg.clip_norm,
            cfg.patience,
            cfg.dims
        );
        for lang in cell.sources.iter().chain([&cell.target]) {
            let (train, dev, test) = &self.corpora[lang];
            let _ = writeln!(s, "{lang} train {}", train.sha256);
            if lang == &cell.target {
                let _ = writeln!(s, "{lang} dev {}", dev.as_ref().map_or("-", |d| d.sha256.as_str()));
                let _ = writeln!(s, "{lang} test {}", test.sha256);
            }
        }
        hex::encode(Sha256::digest(s.as_bytes()))
    }

    fn train_cell(&self, cell: &Cell, checksum: &str) -> CliResult<CellResult> {
        let config = self.config(cell);
        let (target, dev, test) = &self.corpora[&cell.target];
        let data = TrainData {
            sources: cell.sources.iter().map(|l| self.corpora[l].0.corpus.clone()).collect(),
            target: target.corpus.clone(),
            dev: dev.iter().map(|d| d.corpus.clone()).collect(),
        };
        let (model, report) = fit(&config, &data)?;
        let test = &test.corpus;
        let accuracy = corpus_accuracy(&model, test)?;
        let lang_id_accuracy = if cell.arch == Architecture::Joint && !test.is_empty() {
            let mut hits = 0;
            for s in test.sentences() {
                if model.decode_joint(s.words())?.0 == cell.target {
                    hits += 1;
                }
            }
            Some(hits as f64 / test.len() as f64)
        } else {
            None
        };

        save_model_file(&model, cell.seed, &self.out.join("models").join(format!("{checksum}.mtag")))?;
        let mut csv = format!("# seed = {}\n", cell.seed).into_bytes();
        report.write_csv(&mut csv)?;
        write_atomic(&self.out.join("reports").join(format!("{checksum}.csv")), &csv)?;
        Ok(CellResult {
            checksum: checksum.to_string(),
            arch: cell.arch.to_string(),
            sources: cell.sources.clone(),
            target: cell.target.clone(),
            size: cell.size.to_string(),
            seed: cell.seed,
            target_sentences: report.target_sentences,
            accuracy,
            lang_id_accuracy,
            best_epoch: report.epochs[report.best_epoch].epoch,
            epochs: report.epochs.len(),
            wall_seconds: report.wall_time.as_secs_f64(),
        })
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_result(path: &Path, checksum: &str) -> Option<CellResult> {
    let text = fs::read_to_string(path).ok()?;
    let r: CellResult = toml::from_str(&text).ok()?;
    (r.checksum == checksum).then_some(r)
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Sorts counts numerically, then `all`.
type SizeKey = (u8, usize, String);

fn size_key(size: &str) -> SizeKey {
    match size.parse::<usize>() {
        Ok(n) => (0, n, String::new()),
        Err(_) => (1, 0, size.to_string()),
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (n, sum) = xs.into_iter().fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    sum / n as f64
}

fn seeds_header(results: &[(Cell, CellResult)]) -> String {
    let seeds: BTreeSet<u64> = results.iter().map(|(c, _)| c.seed).collect();
    let list: Vec<String> = seeds.iter().map(u64::to_string).collect();
    format!("# seeds = {}\n", list.join(" "))
}

fn write_summaries(out: &Path, results: &[(Cell, CellResult)]) -> CliResult<()> {
    let header = seeds_header(results);

    let mut cells = header.clone();
    cells.push_str(
        "checksum,arch,sources,target,size,seed,target_sentences,accuracy,lang_id_accuracy,best_epoch,epochs,wall_seconds\n",
    );
    for (c, r) in results {
        let _ = writeln!(
            cells,
            "{},{},{},{},{},{},{},{},{},{},{},{:.3}",
            r.checksum,
            r.arch,
            csv_escape(&c.sources_label()),
            csv_escape(&r.target),
            r.size,
            r.seed,
            r.target_sentences,
            r.accuracy,
            r.lang_id_accuracy.map_or(String::new(), |a| a.to_string()),
            r.best_epoch,
            r.epochs,
            r.wall_seconds
        );
    }
    write_atomic(&out.join("cells.csv"), cells.as_bytes())?;

    // matrices: one per (architecture, size), rows are source sets, columns targets
    let mut groups: BTreeMap<(String, SizeKey), Vec<&(Cell, CellResult)>> = BTreeMap::new();
    for item in results {
        groups.entry((item.1.arch.clone(), size_key(&item.1.size))).or_default().push(item);
    }
    for ((arch, _), items) in &groups {
        let size = &items[0].1.size;
        let rows: BTreeSet<String> = items.iter().map(|(c, _)| c.sources_label()).collect();
        let cols: BTreeSet<&str> = items.iter().map(|(c, _)| c.target.as_str()).collect();
        let mut m = header.clone();
        m.push_str("source");
        for t in &cols {
            let _ = write!(m, ",{}", csv_escape(t));
        }
        m.push('\n');
        for row in &rows {
            m.push_str(&csv_escape(row));
            for t in &cols {
                let accs: Vec<f64> = items
                    .iter()
                    .filter(|(c, _)| &c.sources_label() == row && c.target == *t)
                    .map(|(_, r)| r.accuracy)
                    .collect();
                if accs.is_empty() {
                    m.push(',');
                } else {
                    let _ = write!(m, ",{}", mean(accs));
                }
            }
            m.push('\n');
        }
        write_atomic(&out.join(format!("matrix_{arch}_{size}.csv")), m.as_bytes())?;
    }

    // learning curves: one row per (target, sources, architecture, size)
    type CurveKey = (String, String, String, SizeKey);
    let mut curve: BTreeMap<CurveKey, Vec<&CellResult>> = BTreeMap::new();
    for (c, r) in results {
        curve
            .entry((c.target.clone(), c.sources_label(), r.arch.clone(), size_key(&r.size)))
            .or_default()
            .push(r);
    }
    let mut csv = header.clone();
    csv.push_str("target,sources,arch,size,runs,mean_target_sentences,mean_accuracy\n");
    type Curves<'a> = BTreeMap<&'a str, BTreeMap<String, Vec<(f64, f64)>>>;
    let mut per_target: Curves = BTreeMap::new();
    for ((target, sources, arch, _), rs) in &curve {
        let n_sent = mean(rs.iter().map(|r| r.target_sentences as f64));
        let acc = mean(rs.iter().map(|r| r.accuracy));
        let _ = writeln!(
            csv,
            "{},{},{arch},{},{},{n_sent},{acc}",
            csv_escape(target),
            csv_escape(sources),
            rs[0].size,
            rs.len()
        );
        let label = if arch == "mono" { arch.clone() } else { format!("{arch} {sources}") };
        per_target.entry(target.as_str()).or_default().entry(label).or_default().push((n_sent, acc * 100.0));
    }
    write_atomic(&out.join("curve.csv"), csv.as_bytes())?;
    for (target, series) in per_target {
        let series: Vec<Series> = series
            .into_iter()
            .map(|(label, mut points)| {
                points.sort_by(|a, b| a.0.total_cmp(&b.0));
                Series { label, points }
            })
            .collect();
        let svg = line_chart(
            &format!("Learning curve, target {target}"),
            "target training sentences",
            "test token accuracy (%)",
            &series,
        );
        let name: String = target.chars().map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
        write_atomic(&out.join(format!("curve_{name}.svg")), svg.as_bytes())?;
    }
    Ok(())
}

pub fn run(args: ExperimentArgs) -> CliResult<()> {
    let exp = prepare(&args.spec)?;
    for dir in ["cells", "models", "reports"] {
        fs::create_dir_all(exp.out.join(dir))?;
    }
    let total = exp.cells.len();
    let (mut trained, mut skipped) = (0, 0);
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (i, cell) in exp.cells.iter().enumerate() {
        let checksum = exp.checksum(cell);
        let result_path = exp.out.join("cells").join(format!("{checksum}.toml"));
        if let Some(r) = read_result(&result_path, &checksum) {
            eprintln!("[{}/{total}] skip  {}", i + 1, cell.describe());
            skipped += 1;
            results.push((cell.clone(), r));
            continue;
        }
        eprintln!("[{}/{total}] train {}", i + 1, cell.describe());
        match exp.train_cell(cell, &checksum) {
            Ok(r) => {
                let text = toml::to_string(&r).map_err(|e| CliError::failed(e.to_string()))?;
                write_atomic(&result_path, text.as_bytes())?;
                eprintln!("        accuracy {:.2}%", r.accuracy * 100.0);
                trained += 1;
                results.push((cell.clone(), r));
            }
            Err(e) => {
                eprintln!("        failed: {e}");
                failures.push((checksum, cell.describe(), e.message));
            }
        }
    }

    if !results.is_empty() {
        write_summaries(&exp.out, &results)?;
    }
    let mut f = String::from("checksum,cell,error\n");
    for (c, d, e) in &failures {
        let _ = writeln!(f, "{c},{},{}", csv_escape(d), csv_escape(e));
    }
    write_atomic(&exp.out.join("failures.csv"), f.as_bytes())?;
    eprintln!(
        "experiment: {total} cells, {trained} trained, {skipped} skipped, {} failed; results in {}",
        failures.len(),
        exp.out.display()
    );
    std::io::stderr().flush()?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::failed(format!("{} of {total} cells failed (see failures.csv)", failures.len())))
    }
}
