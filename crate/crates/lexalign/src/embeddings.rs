//! Loading, validation, and normalization of word-embedding tables and
//! bilingual dictionaries.
//!
//! Vector files follow the fastText `.vec` text convention: an optional
//! `n d` header line, then one `token v1 .. vd` line per word. File order is
//! taken to be frequency order and is never re-sorted. Dictionary files hold
//! two whitespace-separated tokens per line; `#`-prefixed lines are ignored.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Magic bytes prefixing the binary cache format.
const CACHE_MAGIC: &[u8; 4] = b"LEXA";
/// Binary cache format version.
const CACHE_VERSION: u16 = 1;

/// Normalization state of an embedding table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormState {
    /// Rows as parsed from file.
    Raw,
    /// Every row scaled to Euclidean norm 1.
    Unit,
    /// Rows mean-centered, then scaled to Euclidean norm 1.
    CenteredUnit,
}

/// Normalization scheme to apply to a raw table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScheme {
    Unit,
    CenteredUnit,
}

/// A vocabulary with one embedding row per word, in file (= frequency) order.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Array2<f64>,
    norm_state: NormState,
}

impl EmbeddingTable {
    /// Build a table from parallel word and row lists. Tokens are NFC-normalized;
    /// duplicates (after normalization) are rejected.
    pub fn new(words: Vec<String>, vectors: Array2<f64>) -> Result<Self> {
        if words.len() != vectors.nrows() {
            return Err(Error::invalid(format!(
                "word count {} does not match row count {}",
                words.len(),
                vectors.nrows()
            )));
        }
        let words: Vec<String> = words.into_iter().map(|w| nfc(&w)).collect();
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate token {w:?}")));
            }
        }
        Ok(EmbeddingTable { words, index, vectors, norm_state: NormState::Raw })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn norm_state(&self) -> NormState {
        self.norm_state
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    /// Row index of a token, compared after NFC normalization.
    pub fn position(&self, word: &str) -> Option<usize> {
        self.index.get(&nfc(word)).copied()
    }

    pub fn vectors(&self) -> ArrayView2<'_, f64> {
        self.vectors.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(i)
    }

    /// Table restricted to the first `n` rows (frequency order preserved).
    pub fn truncated(&self, n: usize) -> EmbeddingTable {
        let n = n.min(self.len());
        let words: Vec<String> = self.words[..n].to_vec();
        let mut index = HashMap::with_capacity(n);
        for (i, w) in words.iter().enumerate() {
            index.insert(w.clone(), i);
        }
        EmbeddingTable {
            words,
            index,
            vectors: self.vectors.slice(ndarray::s![..n, ..]).to_owned(),
            norm_state: self.norm_state,
        }
    }

    /// Apply a normalization scheme. `Unit` divides each row by its Euclidean
    /// norm (idempotent). `CenteredUnit` subtracts the column mean of the
    /// retained rows first, then unit-normalizes; the renormalization breaks
    /// exact centering, which is expected.
    pub fn normalize(mut self, scheme: NormScheme) -> Result<Self> {
        if scheme == NormScheme::CenteredUnit {
            let mean = self
                .vectors
                .mean_axis(Axis(0))
                .ok_or_else(|| Error::empty("cannot center an empty table".to_string()))?;
            self.vectors -= &mean;
        }
        for (i, mut row) in self.vectors.rows_mut().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if norm <= 0.0 || !norm.is_finite() {
                return Err(Error::ZeroNorm { token: self.words[i].clone() });
            }
            row /= norm;
        }
        self.norm_state = match scheme {
            NormScheme::Unit => NormState::Unit,
            NormScheme::CenteredUnit => NormState::CenteredUnit,
        };
        Ok(self)
    }
}

/// Counters reported alongside a loaded table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    /// Lines skipped for wrong field count or non-numeric values.
    pub skipped_lines: usize,
    /// Tokens seen again after their first occurrence (first vector kept).
    pub duplicate_tokens: usize,
}

/// Index pairs of matched source/target words. One-to-many is permitted;
/// exact duplicate pairs are not.
#[derive(Debug, Clone, Default)]
pub struct AlignedLexicon {
    pairs: Vec<(usize, usize)>,
}

impl AlignedLexicon {
    /// Build from explicit index pairs, validating ranges and deduplicating.
    pub fn new(
        pairs: Vec<(usize, usize)>,
        src_len: usize,
        tgt_len: usize,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len());
        let mut kept = Vec::with_capacity(pairs.len());
        for (s, t) in pairs {
            if s >= src_len || t >= tgt_len {
                return Err(Error::invalid(format!(
                    "lexicon pair ({s}, {t}) out of range for tables of size {src_len}/{tgt_len}"
                )));
            }
            if seen.insert((s, t)) {
                kept.push((s, t));
            }
        }
        Ok(AlignedLexicon { pairs: kept })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }
}

/// Counters reported alongside a loaded lexicon.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LexiconStats {
    /// Pairs dropped because either side was out of vocabulary.
    pub oov_pairs: usize,
    /// Lines that did not hold exactly two tokens.
    pub malformed_lines: usize,
}

fn nfc(s: &str) -> String {
    s.nfc().collect()
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

/// Peek at a `.vec` file and report its vector dimension, from the header if
/// present, otherwise from the first data line.
pub fn infer_dim(path: &Path) -> Result<usize> {
    let reader = open(path)?;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if lineno == 0 {
            if let Some((_, d)) = parse_header(&fields) {
                return Ok(d);
            }
        }
        if fields.len() < 2 {
            continue;
        }
        return Ok(fields.len() - 1);
    }
    Err(Error::parse(path, 0, "no data lines"))
}

fn parse_header(fields: &[&str]) -> Option<(usize, usize)> {
    if fields.len() == 2 {
        if let (Ok(n), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
            return Some((n, d));
        }
    }
    None
}

/// Load up to `max_vocab` rows of a `.vec` file, expecting dimension `dim`.
///
/// Malformed data lines are skipped and counted; a header whose dimension
/// disagrees with `dim` is a hard error, as is a file yielding zero rows.
/// Duplicate tokens keep their first vector.
pub fn load_embeddings(
    path: &Path,
    max_vocab: usize,
    dim: usize,
) -> Result<(EmbeddingTable, LoadStats)> {
    if max_vocab == 0 {
        return Err(Error::invalid("max_vocab must be positive"));
    }
    if dim == 0 {
        return Err(Error::invalid("dim must be positive"));
    }
    let reader = open(path)?;
    let mut stats = LoadStats::default();
    let mut words: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut data: Vec<f64> = Vec::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if lineno == 0 {
            if let Some((_, header_d)) = parse_header(&fields) {
                if header_d != dim {
                    return Err(Error::parse(
                        path,
                        1,
                        format!("header dimension {header_d} does not match requested {dim}"),
                    ));
                }
                continue;
            }
        }
        if words.len() == max_vocab {
            break;
        }
        if fields.len() != dim + 1 {
            stats.skipped_lines += 1;
            continue;
        }
        let mut values = Vec::with_capacity(dim);
        let mut ok = true;
        for f in &fields[1..] {
            match f.parse::<f64>() {
                Ok(v) => values.push(v),
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            stats.skipped_lines += 1;
            continue;
        }
        let token = nfc(fields[0]);
        if index.contains_key(&token) {
            stats.duplicate_tokens += 1;
            continue;
        }
        index.insert(token.clone(), words.len());
        words.push(token);
        data.extend_from_slice(&values);
    }

    if words.is_empty() {
        return Err(Error::parse(path, 0, "no embedding rows parsed"));
    }
    let n = words.len();
    let vectors = Array2::from_shape_vec((n, dim), data)
        .expect("row-major buffer matches (n, dim)");
    Ok((EmbeddingTable { words, index, vectors, norm_state: NormState::Raw }, stats))
}

/// Load a bilingual dictionary, keeping only pairs where both words are in
/// vocabulary. Returns the deduplicated lexicon plus OOV/malformed counts.
pub fn load_lexicon(
    path: &Path,
    src: &EmbeddingTable,
    tgt: &EmbeddingTable,
) -> Result<(AlignedLexicon, LexiconStats)> {
    let reader = open(path)?;
    let mut stats = LexiconStats::default();
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 2 {
            stats.malformed_lines += 1;
            continue;
        }
        match (src.position(fields[0]), tgt.position(fields[1])) {
            (Some(s), Some(t)) => {
                if seen.insert((s, t)) {
                    pairs.push((s, t));
                }
            }
            _ => stats.oov_pairs += 1,
        }
    }
    Ok((AlignedLexicon { pairs }, stats))
}

/// Write a table in `.vec` text format (with header). Values use the shortest
/// decimal form that round-trips to the same `f64`.
pub fn write_vec(table: &EmbeddingTable, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let go = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "{} {}", table.len(), table.dim())?;
        for (word, row) in table.words.iter().zip(table.vectors.rows()) {
            write!(w, "{word}")?;
            for v in row.iter() {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    go(&mut w).map_err(|e| Error::io(path, e))
}

/// Write a dictionary file, one `src tgt` pair per line.
pub fn write_lexicon(
    lexicon: &AlignedLexicon,
    src: &EmbeddingTable,
    tgt: &EmbeddingTable,
    path: &Path,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for &(s, t) in lexicon.pairs() {
        writeln!(w, "{} {}", src.word(s), tgt.word(t)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write the versioned binary cache. Round-trips tables bit-exactly.
pub fn write_cache(table: &EmbeddingTable, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let go = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        let norm: u8 = match table.norm_state {
            NormState::Raw => 0,
            NormState::Unit => 1,
            NormState::CenteredUnit => 2,
        };
        w.write_all(&[norm])?;
        w.write_all(&(table.len() as u64).to_le_bytes())?;
        w.write_all(&(table.dim() as u64).to_le_bytes())?;
        for word in &table.words {
            let bytes = word.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
        }
        for v in table.vectors.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    };
    go(&mut w).map_err(|e| Error::io(path, e))
}

/// Read a table back from the binary cache format.
pub fn read_cache(path: &Path) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |msg: &str| Error::CacheFormat { path: path.to_path_buf(), msg: msg.to_string() };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != CACHE_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut buf2 = [0u8; 2];
    r.read_exact(&mut buf2).map_err(|e| Error::io(path, e))?;
    if u16::from_le_bytes(buf2) != CACHE_VERSION {
        return Err(bad("unsupported version"));
    }
    let mut buf1 = [0u8; 1];
    r.read_exact(&mut buf1).map_err(|e| Error::io(path, e))?;
    let norm_state = match buf1[0] {
        0 => NormState::Raw,
        1 => NormState::Unit,
        2 => NormState::CenteredUnit,
        _ => return Err(bad("unknown norm state")),
    };
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8).map_err(|e| Error::io(path, e))?;
    let n = u64::from_le_bytes(buf8) as usize;
    r.read_exact(&mut buf8).map_err(|e| Error::io(path, e))?;
    let d = u64::from_le_bytes(buf8) as usize;

    let mut words = Vec::with_capacity(n);
    let mut index = HashMap::with_capacity(n);
    for i in 0..n {
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4).map_err(|e| Error::io(path, e))?;
        let len = u32::from_le_bytes(buf4) as usize;
        let mut bytes = vec![0u8; len];
        r.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
        let word = String::from_utf8(bytes).map_err(|_| bad("invalid utf-8 token"))?;
        index.insert(word.clone(), i);
        words.push(word);
    }
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        r.read_exact(&mut buf8).map_err(|e| Error::io(path, e))?;
        data.push(f64::from_le_bytes(buf8));
    }
    let vectors = Array2::from_shape_vec((n, d), data).map_err(|_| bad("truncated matrix"))?;
    Ok(EmbeddingTable { words, index, vectors, norm_state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use std::io::Write as _;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn table(words: &[&str], rows: Array2<f64>) -> EmbeddingTable {
        EmbeddingTable::new(words.iter().map(|s| s.to_string()).collect(), rows).unwrap()
    }

    #[test]
    fn loads_headerless_file() {
        let f = write_tmp("a 1.0 2.0\nb 3.0 4.0\nc 5.0 6.0\n");
        let (t, stats) = load_embeddings(f.path(), 10, 2).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.dim(), 2);
        assert_eq!(stats, LoadStats::default());
        assert_eq!(t.row(1).to_vec(), vec![3.0, 4.0]);
        assert_eq!(t.norm_state(), NormState::Raw);
    }

    #[test]
    fn loads_file_with_header() {
        let f = write_tmp("3 2\na 1 2\nb 3 4\nc 5 6\n");
        let (t, _) = load_embeddings(f.path(), 10, 2).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.word(0), "a");
    }

    #[test]
    fn header_dim_mismatch_is_hard_error() {
        let f = write_tmp("3 5\na 1 2\n");
        assert!(matches!(load_embeddings(f.path(), 10, 2), Err(Error::Parse { .. })));
    }

    #[test]
    fn duplicate_token_keeps_first_vector() {
        let f = write_tmp("the 1 0\ncat 0 1\nthe 9 9\ndog 1 1\n");
        let (t, stats) = load_embeddings(f.path(), 10, 2).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(stats.duplicate_tokens, 1);
        assert_eq!(t.row(t.position("the").unwrap()).to_vec(), vec![1.0, 0.0]);
    }

    #[test]
    fn malformed_lines_skipped_with_counter() {
        let f = write_tmp("a 1 2\nbroken 1\nb x y\nc 5 6\n");
        let (t, stats) = load_embeddings(f.path(), 10, 2).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(stats.skipped_lines, 2);
    }

    #[test]
    fn max_vocab_truncates_in_file_order() {
        let mut content = String::new();
        for i in 0..50 {
            content.push_str(&format!("w{i} {i} 0\n"));
        }
        let f = write_tmp(&content);
        let (t, _) = load_embeddings(f.path(), 20, 2).unwrap();
        assert_eq!(t.len(), 20);
        assert_eq!(t.word(19), "w19");
    }

    #[test]
    fn zero_rows_is_hard_error() {
        let f = write_tmp("only-a-token\n");
        assert!(load_embeddings(f.path(), 10, 2).is_err());
    }

    #[test]
    fn nfc_normalization_unifies_token_forms() {
        // U+00E9 (precomposed) vs U+0065 U+0301 (decomposed)
        let f = write_tmp("caf\u{e9} 1 0\ncafe\u{301} 9 9\n");
        let (t, stats) = load_embeddings(f.path(), 10, 2).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(stats.duplicate_tokens, 1);
        assert_eq!(t.position("caf\u{e9}"), Some(0));
        assert_eq!(t.position("cafe\u{301}"), Some(0));
    }

    #[test]
    fn unit_normalization_three_four_five() {
        let t = table(&["a"], array![[3.0, 4.0]]).normalize(NormScheme::Unit).unwrap();
        assert_abs_diff_eq!(t.row(0)[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(t.row(0)[1], 0.8, epsilon = 1e-12);
        assert_eq!(t.norm_state(), NormState::Unit);
    }

    #[test]
    fn unit_normalization_is_idempotent() {
        let t = table(&["a", "b"], array![[3.0, 4.0], [-1.0, 2.0]])
            .normalize(NormScheme::Unit)
            .unwrap();
        let again = t.clone().normalize(NormScheme::Unit).unwrap();
        for (x, y) in t.vectors().iter().zip(again.vectors().iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn centered_unit_on_symmetric_rows_keeps_them() {
        let t = table(&["a", "b"], array![[1.0, 0.0], [-1.0, 0.0]])
            .normalize(NormScheme::CenteredUnit)
            .unwrap();
        assert_eq!(t.row(0).to_vec(), vec![1.0, 0.0]);
        assert_eq!(t.row(1).to_vec(), vec![-1.0, 0.0]);
    }

    #[test]
    fn centered_unit_hand_case() {
        let t = table(&["a", "b"], array![[2.0, 0.0], [0.0, 2.0]])
            .normalize(NormScheme::CenteredUnit)
            .unwrap();
        let s = 1.0 / 2.0f64.sqrt();
        assert_abs_diff_eq!(t.row(0)[0], s, epsilon = 1e-12);
        assert_abs_diff_eq!(t.row(0)[1], -s, epsilon = 1e-12);
        assert_abs_diff_eq!(t.row(1)[0], -s, epsilon = 1e-12);
        assert_abs_diff_eq!(t.row(1)[1], s, epsilon = 1e-12);
    }

    #[test]
    fn zero_norm_row_names_token() {
        let err = table(&["ok", "null"], array![[1.0, 0.0], [0.0, 0.0]])
            .normalize(NormScheme::Unit)
            .unwrap_err();
        match err {
            Error::ZeroNorm { token } => assert_eq!(token, "null"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn lexicon_keeps_in_vocab_pairs_and_counts_oov() {
        let src = table(&["a", "b", "c"], array![[1.0], [2.0], [3.0]]);
        let tgt = table(&["x", "y"], array![[1.0], [2.0]]);
        let f = write_tmp("# comment\na x\nb y\nc x\na zz\nmissing y\n");
        let (lex, stats) = load_lexicon(f.path(), &src, &tgt).unwrap();
        assert_eq!(lex.len(), 3);
        assert_eq!(stats.oov_pairs, 2);
    }

    #[test]
    fn lexicon_deduplicates_pairs() {
        let src = table(&["a", "b"], array![[1.0], [2.0]]);
        let tgt = table(&["x", "y"], array![[1.0], [2.0]]);
        let f = write_tmp("a x\nb y\na x\n");
        let (lex, _) = load_lexicon(f.path(), &src, &tgt).unwrap();
        assert_eq!(lex.len(), 2);
    }

    #[test]
    fn vec_round_trip_is_bit_identical() {
        let t = table(
            &["first", "second"],
            array![[0.1234567890123, -7.5e-3], [1.0 / 3.0, 2.0f64.sqrt()]],
        );
        let f = tempfile::NamedTempFile::new().unwrap();
        write_vec(&t, f.path()).unwrap();
        let (back, _) = load_embeddings(f.path(), 10, 2).unwrap();
        assert_eq!(back.words(), t.words());
        assert_eq!(back.vectors(), t.vectors());
    }

    #[test]
    fn cache_round_trip_is_exact() {
        let t = table(&["α", "β"], array![[0.5, -0.25], [1e-300, 3.0]])
            .normalize(NormScheme::Unit)
            .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_cache(&t, f.path()).unwrap();
        let back = read_cache(f.path()).unwrap();
        assert_eq!(back.words(), t.words());
        assert_eq!(back.vectors(), t.vectors());
        assert_eq!(back.norm_state(), t.norm_state());
    }

    #[test]
    fn cache_rejects_wrong_magic() {
        let f = write_tmp("not a cache file");
        assert!(matches!(read_cache(f.path()), Err(Error::CacheFormat { .. })));
    }

    #[test]
    fn infer_dim_reads_header_or_first_line() {
        let with_header = write_tmp("10 300\n");
        assert_eq!(infer_dim(with_header.path()).unwrap(), 300);
        let headerless = write_tmp("tok 1 2 3 4\n");
        assert_eq!(infer_dim(headerless.path()).unwrap(), 4);
    }
}
