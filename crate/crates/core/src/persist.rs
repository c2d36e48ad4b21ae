//! Binary model files.
//!
//! Layout (all integers little-endian `u32` unless noted, strings are a
//! `u32` byte length followed by UTF-8):
//!
//! ```text
//! "MTAG1"                      magic + format version
//! u64 seed                     seed the model was trained with
//! str architecture
//! u32 char_emb, char_hidden, ctx_hidden, langid_hidden
//! u32 L, L × str               model languages (head order)
//! u32 M, M × str               alphabet marker languages
//! u32 C, C × u32               alphabet characters (code points, id order)
//! u32 T, T × str               tags, canonical form, index order
//! u32 K, K × (str lang, u32 n, n × u32 tag index)
//! u32 P, P × (str name, u32 ndim, ndim × u32 dim, f64 LE values)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::corpus::Alphabet;
use crate::error::{Error, Result};
use crate::model::{Architecture, Dims, TaggerModel};
use crate::numkernel::{ParamStore, Tensor};
use crate::tagset::{MorphTag, TagInventory};

pub const MAGIC: &[u8; 5] = b"MTAG1";
const MAX_STR: u32 = 1 << 20;

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("value {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    put_u32(w, s.len())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn save_model<W: Write>(model: &TaggerModel, seed: u64, w: &mut W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&seed.to_le_bytes())?;
    put_str(w, model.architecture().name())?;
    let d = model.dims();
    for v in [d.char_emb, d.char_hidden, d.ctx_hidden, d.langid_hidden] {
        put_u32(w, v)?;
    }
    put_u32(w, model.languages().len())?;
    for l in model.languages() {
        put_str(w, l)?;
    }
    let a = model.alphabet();
    put_u32(w, a.languages().len())?;
    for l in a.languages() {
        put_str(w, l)?;
    }
    put_u32(w, a.chars().len())?;
    for &c in a.chars() {
        put_u32(w, c as usize)?;
    }
    let inv = model.inventory();
    put_u32(w, inv.len())?;
    for t in inv.tags() {
        put_str(w, &t.to_string())?;
    }
    put_u32(w, inv.per_language().len())?;
    for (l, set) in inv.per_language() {
        put_str(w, l)?;
        put_u32(w, set.len())?;
        for &i in set {
            put_u32(w, i)?;
        }
    }
    let params = model.params();
    put_u32(w, params.len())?;
    for (_, name, t) in params.iter() {
        put_str(w, name)?;
        put_u32(w, t.shape().len())?;
        for &dim in t.shape() {
            put_u32(w, dim)?;
        }
        for v in t.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: u64) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        (&mut self.inner).take(n).read_to_end(&mut buf)?;
        if buf.len() as u64 != n {
            return Err(Error::Format("unexpected end of file".into()));
        }
        Ok(buf)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.bytes(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        if n as u32 > MAX_STR {
            return Err(Error::Format(format!("string of {n} bytes")));
        }
        String::from_utf8(self.bytes(n as u64)?).map_err(|_| Error::Format("invalid UTF-8".into()))
    }

    fn strs(&mut self) -> Result<Vec<String>> {
        let n = self.u32()?;
        (0..n).map(|_| self.str()).collect()
    }
}

pub fn load_model<R: Read>(r: R) -> Result<(TaggerModel, u64)> {
    let mut r = Reader { inner: r };
    let magic = r.bytes(5).map_err(|_| Error::Format("not a model file".into()))?;
    if magic != MAGIC {
        if magic.starts_with(b"MTAG") {
            return Err(Error::Format(format!(
                "unsupported model format version {:?} (this build reads {:?})",
                String::from_utf8_lossy(&magic),
                std::str::from_utf8(MAGIC).unwrap()
            )));
        }
        return Err(Error::Format("not a model file".into()));
    }
    let seed = r.u64()?;
    let arch: Architecture = r.str()?.parse().map_err(|e: Error| Error::Format(e.to_string()))?;
    let dims = Dims {
        char_emb: r.u32()?,
        char_hidden: r.u32()?,
        ctx_hidden: r.u32()?,
        langid_hidden: r.u32()?,
    };
    let languages = r.strs()?;
    let marker_langs = r.strs()?;
    let n_chars = r.u32()?;
    let chars = (0..n_chars)
        .map(|_| {
            let c = r.u32()? as u32;
            char::from_u32(c).ok_or_else(|| Error::Format(format!("invalid code point {c}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let alphabet = Alphabet::new(chars.iter().copied(), marker_langs.iter().cloned());
    if alphabet.chars() != chars.as_slice() || alphabet.languages() != marker_langs.as_slice() {
        return Err(Error::Format("alphabet is not in canonical order".into()));
    }
    let tags = r
        .strs()?
        .iter()
        .map(|s| s.parse::<MorphTag>().map_err(|e| Error::Format(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let n_members = r.u32()?;
    let mut per_language = BTreeMap::new();
    for _ in 0..n_members {
        let lang = r.str()?;
        let n = r.u32()?;
        let set = (0..n)
            .map(|_| {
                let i = r.u32()?;
                if i >= tags.len() {
                    return Err(Error::Format(format!("tag index {i} out of range")));
                }
                Ok(i)
            })
            .collect::<Result<BTreeSet<_>>>()?;
        per_language.insert(lang, set);
    }
    let inventory = TagInventory::from_parts(tags, per_language);
    if inventory.tags().iter().enumerate().any(|(i, t)| inventory.index_of(t) != Some(i)) {
        return Err(Error::Format("duplicate tags in inventory".into()));
    }

    let n_params = r.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..n_params {
        let name = r.str()?;
        let ndim = r.u32()?;
        if ndim == 0 || ndim > 4 {
            return Err(Error::Format(format!("parameter {name}: {ndim} dimensions")));
        }
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let count = shape.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
        let count = count.ok_or_else(|| Error::Format(format!("parameter {name} too large")))?;
        let raw = r.bytes(count * 8)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, values).map_err(|e| Error::Format(format!("{name}: {e}")))?;
        params.add(name, t).map_err(|e| Error::Format(e.to_string()))?;
    }
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after parameters".into()));
    }
    let model = TaggerModel::from_parts(arch, languages, alphabet, inventory, dims, params)
        .map_err(|e| match e {
            Error::Format(_) => e,
            other => Error::Format(other.to_string()),
        })?;
    Ok((model, seed))
}

pub fn save_model_file(model: &TaggerModel, seed: u64, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    save_model(model, seed, &mut w)
}

pub fn load_model_file(path: &Path) -> Result<(TaggerModel, u64)> {
    let f = File::open(path)
        .map_err(|e| Error::Config(format!("cannot open model {}: {e}", path.display())))?;
    load_model(BufReader::new(f))
}

/// Human-readable summary of a model.
pub fn describe(model: &TaggerModel, seed: u64) -> String {
    let mut s = String::new();
    let d = model.dims();
    let _ = writeln!(s, "format: {}", std::str::from_utf8(MAGIC).unwrap());
    let _ = writeln!(s, "architecture: {}", model.architecture());
    let _ = writeln!(s, "seed: {seed}");
    let _ = writeln!(s, "languages: {}", model.languages().join(","));
    let _ = writeln!(
        s,
        "dims: char_emb={} char_hidden={} ctx_hidden={} langid_hidden={}",
        d.char_emb, d.char_hidden, d.ctx_hidden, d.langid_hidden
    );
    let _ = writeln!(
        s,
        "alphabet: {} characters + {} markers + UNK",
        model.alphabet().chars().len(),
        model.alphabet().languages().len()
    );
    let _ = writeln!(s, "tags: {}", model.inventory().len());
    for (l, set) in model.inventory().per_language() {
        let _ = writeln!(s, "  {l}: {}", set.len());
    }
    let _ = writeln!(s, "parameters: {} values", model.params().num_values());
    for (_, name, t) in model.params().iter() {
        let _ = writeln!(s, "  {name} {:?}", t.shape());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_alphabet, Corpus, Sentence};
    use crate::tagset::build_inventory;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(arch: Architecture) -> TaggerModel {
        let mk = |lang: &str, w: &str, t: &str| {
            let s = Sentence::new(vec![w.into()], vec![t.parse().unwrap()], lang).unwrap();
            Corpus::new(lang, vec![s]).unwrap()
        };
        let corpora = vec![mk("es", "niña", "POS=NOUN|Gender=Fem"), mk("pt", "menino", "POS=NOUN")];
        let langs = match arch {
            Architecture::Mono => vec!["pt".to_string()],
            _ => vec!["es".to_string(), "pt".to_string()],
        };
        TaggerModel::new(
            arch,
            langs,
            build_alphabet(&corpora),
            build_inventory(&corpora),
            Dims::small(3, 4, 2),
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_every_architecture() {
        for arch in Architecture::ALL {
            let m = model(arch);
            let mut buf = Vec::new();
            save_model(&m, 77, &mut buf).unwrap();
            let (back, seed) = load_model(buf.as_slice()).unwrap();
            assert_eq!(seed, 77);
            assert_eq!(back, m);
        }
    }

    #[test]
    fn refuses_other_versions_and_garbage() {
        let m = model(Architecture::Joint);
        let mut buf = Vec::new();
        save_model(&m, 1, &mut buf).unwrap();
        let mut v2 = buf.clone();
        v2[4] = b'2';
        match load_model(v2.as_slice()) {
            Err(Error::Format(msg)) => assert!(msg.contains("version")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(load_model(&b"hello world"[..]), Err(Error::Format(_))));
        assert!(matches!(load_model(&buf[..buf.len() - 3]), Err(Error::Format(_))));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(load_model(extra.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn describe_mentions_shapes() {
        let text = describe(&model(Architecture::Specific), 3);
        assert!(text.contains("architecture: specific"));
        assert!(text.contains("head.es.w"));
    }
}
