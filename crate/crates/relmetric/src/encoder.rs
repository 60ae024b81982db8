//! Per-token context vectors: word embeddings concatenated with char-CNN
//! features, fed through a bidirectional LSTM. Row i of the resulting H
//! matrix is the context vector for token i.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::SentenceExample;
use crate::error::{Error, Result};
use crate::tensor::{NodeId, Phase, Tape, Tensor};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Word and character index maps. Lookups are total: exact match, then
/// lowercase fallback for words, then UNK.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    chars: Vec<char>,
    #[serde(skip)]
    word_index: HashMap<String, usize>,
    #[serde(skip)]
    char_index: HashMap<char, usize>,
}

impl Vocabulary {
    pub fn from_examples(examples: &[SentenceExample]) -> Self {
        let mut words: Vec<String> = Vec::new();
        let mut chars: Vec<char> = Vec::new();
        let mut wseen = std::collections::HashSet::new();
        let mut cseen = std::collections::HashSet::new();
        for ex in examples {
            for tok in &ex.tokens {
                if wseen.insert(tok.text.clone()) {
                    words.push(tok.text.clone());
                }
                for c in tok.text.chars() {
                    if cseen.insert(c) {
                        chars.push(c);
                    }
                }
            }
        }
        words.sort();
        chars.sort();
        Self::from_lists(words, chars)
    }

    /// Builds the maps from sorted type lists; indices 0 and 1 are reserved
    /// for PAD and UNK.
    pub fn from_lists(words: Vec<String>, chars: Vec<char>) -> Self {
        let mut v = Vocabulary {
            words,
            chars,
            word_index: HashMap::new(),
            char_index: HashMap::new(),
        };
        v.rebuild_index();
        v
    }

    pub fn rebuild_index(&mut self) {
        self.word_index = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i + 2))
            .collect();
        self.char_index = self
            .chars
            .iter()
            .enumerate()
            .map(|(i, c)| (*c, i + 2))
            .collect();
    }

    pub fn word_count(&self) -> usize {
        self.words.len() + 2
    }

    pub fn char_count(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn word_id(&self, w: &str) -> usize {
        if let Some(&i) = self.word_index.get(w) {
            return i;
        }
        let lower = w.to_lowercase();
        if let Some(&i) = self.word_index.get(&lower) {
            return i;
        }
        UNK
    }

    pub fn char_id(&self, c: char) -> usize {
        self.char_index.get(&c).copied().unwrap_or(UNK)
    }

    pub fn char_ids(&self, word: &str, min_len: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = word.chars().map(|c| self.char_id(c)).collect();
        while ids.len() < min_len {
            ids.push(PAD);
        }
        ids
    }

    pub(crate) fn has_exact_word(&self, w: &str) -> bool {
        self.word_index.contains_key(w)
    }
}

/// Loads whitespace-separated text embeddings (token then `dim` reals per
/// line; an optional two-integer header line is skipped). Rows for words
/// missing from the file keep their Normal(0, 0.1) initialization; every
/// row stays trainable.
pub fn load_embeddings<R: Rng>(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut table = init_normal(vocab.word_count() * dim, rng);
    let content = fs::read_to_string(path)
        .map_err(|e| Error::ingest(format!("cannot read embeddings {}: {}", path.display(), e)))?;
    let mut loaded = 0usize;
    for (lineno, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().expect("non-empty line has a first field");
        let values: Vec<&str> = fields.collect();
        if lineno == 0
            && values.len() == 1
            && token.parse::<usize>().is_ok()
            && values[0].parse::<usize>().is_ok()
        {
            // word2vec-style "count dim" header
            continue;
        }
        if values.len() != dim {
            return Err(Error::ingest(format!(
                "embedding line {}: expected {} values, found {}",
                lineno + 1,
                dim,
                values.len()
            )));
        }
        // Exact-match only; lookup-time lowercasing handles casing.
        if !vocab.has_exact_word(token) {
            continue;
        }
        let row = vocab.word_id(token);
        for (k, v) in values.iter().enumerate() {
            table[row * dim + k] = v.parse::<f64>().map_err(|_| {
                Error::ingest(format!("embedding line {}: bad value '{}'", lineno + 1, v))
            })?;
        }
        loaded += 1;
    }
    log::info!(
        "loaded {} pretrained rows for a vocabulary of {}",
        loaded,
        vocab.word_count()
    );
    Ok(table)
}

pub fn init_normal<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, 0.1).expect("valid normal");
    (0..len).map(|_| normal.sample(rng)).collect()
}

/// Tape-level handles for the encoder parameters of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct EncoderNodes {
    pub word_emb: NodeId,
    pub char_emb: NodeId,
    pub char_filters: NodeId,
    pub char_bias: NodeId,
    pub lstm_fwd_w: NodeId,
    pub lstm_fwd_b: NodeId,
    pub lstm_bwd_w: NodeId,
    pub lstm_bwd_b: NodeId,
}

/// Character representation of one word: gather char embeddings, convolve
/// with `window`-sized filters, max-pool over positions.
pub fn char_encode(
    tape: &mut Tape,
    char_ids: &[usize],
    char_emb: NodeId,
    filters: NodeId,
    bias: NodeId,
    window: usize,
) -> Result<NodeId> {
    if char_ids.is_empty() {
        return Err(Error::contract("char_encode: empty character sequence"));
    }
    let mut ids = char_ids.to_vec();
    while ids.len() < window {
        ids.push(PAD);
    }
    let mat = tape.gather(char_emb, &ids)?;
    tape.char_conv_max(mat, filters, bias, window)
}

/// One LSTM direction over a sequence of input vectors. The stacked weight
/// holds the four gates in i, f, g, o order; hidden is the per-direction
/// state width.
fn lstm_direction(
    tape: &mut Tape,
    inputs: &[NodeId],
    w: NodeId,
    b: NodeId,
    hidden: usize,
) -> Result<Vec<NodeId>> {
    let mut h = tape.constant(Tensor::zeros(vec![hidden]));
    let mut c = tape.constant(Tensor::zeros(vec![hidden]));
    let mut out = Vec::with_capacity(inputs.len());
    for &x in inputs {
        let z = tape.concat_last(&[x, h])?;
        let lin = tape.matvec(w, z)?;
        let gates = tape.add(lin, b)?;
        let i_g = tape.slice(gates, 0, &[hidden])?;
        let f_g = tape.slice(gates, hidden, &[hidden])?;
        let g_g = tape.slice(gates, 2 * hidden, &[hidden])?;
        let o_g = tape.slice(gates, 3 * hidden, &[hidden])?;
        let i_g = tape.sigmoid(i_g);
        let f_g = tape.sigmoid(f_g);
        let g_g = tape.tanh(g_g);
        let o_g = tape.sigmoid(o_g);
        let fc = tape.mul(f_g, c)?;
        let ig = tape.mul(i_g, g_g)?;
        c = tape.add(fc, ig)?;
        let tc = tape.tanh(c);
        h = tape.mul(o_g, tc)?;
        out.push(h);
    }
    Ok(out)
}

/// Per-token inputs already mapped to ids.
pub struct SentenceIds {
    pub word_ids: Vec<usize>,
    pub char_ids: Vec<Vec<usize>>,
}

impl SentenceIds {
    pub fn from_example(ex: &SentenceExample, vocab: &Vocabulary, char_window: usize) -> Self {
        SentenceIds {
            word_ids: ex.tokens.iter().map(|t| vocab.word_id(&t.text)).collect(),
            char_ids: ex
                .tokens
                .iter()
                .map(|t| vocab.char_ids(&t.text, char_window))
                .collect(),
        }
    }
}

/// Builds H (n×rho): word embedding ⧺ char features per token, Bi-LSTM
/// over the sequence, forward and backward halves concatenated per token,
/// dropout on the result in train mode.
#[allow(clippy::too_many_arguments)]
pub fn encode_sentence<R: Rng>(
    tape: &mut Tape,
    ids: &SentenceIds,
    nodes: &EncoderNodes,
    context_size: usize,
    char_window: usize,
    dropout_rate: f64,
    phase: Phase,
    rng: &mut R,
) -> Result<NodeId> {
    let n = ids.word_ids.len();
    if n == 0 {
        return Err(Error::contract("encode_sentence: empty sentence"));
    }
    if context_size % 2 != 0 {
        return Err(Error::config(format!(
            "context embedding size must be even, got {}",
            context_size
        )));
    }
    let hidden = context_size / 2;

    let wemb = tape.gather(nodes.word_emb, &ids.word_ids)?;
    let mut char_vecs = Vec::with_capacity(n);
    for cs in &ids.char_ids {
        char_vecs.push(char_encode(
            tape,
            cs,
            nodes.char_emb,
            nodes.char_filters,
            nodes.char_bias,
            char_window,
        )?);
    }
    let cmat = tape.stack_rows(&char_vecs)?;
    let s = tape.concat_last(&[wemb, cmat])?;

    let rows: Vec<NodeId> = (0..n)
        .map(|i| tape.row(s, i))
        .collect::<Result<Vec<_>>>()?;
    let fwd = lstm_direction(tape, &rows, nodes.lstm_fwd_w, nodes.lstm_fwd_b, hidden)?;
    let rev_rows: Vec<NodeId> = rows.iter().rev().copied().collect();
    let mut bwd = lstm_direction(tape, &rev_rows, nodes.lstm_bwd_w, nodes.lstm_bwd_b, hidden)?;
    bwd.reverse();

    let mut hs = Vec::with_capacity(n);
    for i in 0..n {
        hs.push(tape.concat_last(&[fwd[i], bwd[i]])?);
    }
    let h = tape.stack_rows(&hs)?;
    tape.dropout(h, dropout_rate, phase, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_vocab() -> Vocabulary {
        Vocabulary::from_lists(
            vec!["Anna".into(), "lives".into(), "oslo".into(), "sevil".into()],
            vec!['A', 'a', 'e', 'i', 'l', 'n', 'o', 's', 'v'],
        )
    }

    #[test]
    fn lookup_is_total_with_lowercase_fallback() {
        let v = tiny_vocab();
        assert_ne!(v.word_id("Anna"), UNK);
        // "Oslo" is absent but "oslo" is present.
        assert_eq!(v.word_id("Oslo"), v.word_id("oslo"));
        assert_eq!(v.word_id("zzz"), UNK);
        assert_eq!(v.char_id('z'), UNK);
    }

    #[test]
    fn char_ids_pad_short_words() {
        let v = tiny_vocab();
        let ids = v.char_ids("a", 3);
        assert_eq!(ids.len(), 3);
        assert_eq!(ids[1], PAD);
        assert_eq!(ids[2], PAD);
    }

    #[test]
    fn embeddings_file_loading() {
        use std::io::Write;
        let v = tiny_vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "3 4").unwrap(); // header tolerated
        writeln!(f, "Anna 1 2 3 4").unwrap();
        writeln!(f, "unrelated 9 9 9 9").unwrap();
        writeln!(f, "oslo 0.5 0.25 -1 2").unwrap();
        drop(f);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let table = load_embeddings(&path, &v, 4, &mut rng).unwrap();
        let row = v.word_id("Anna");
        assert_eq!(&table[row * 4..row * 4 + 4], &[1.0, 2.0, 3.0, 4.0]);
        // Absent word keeps its N(0, 0.1) row: small but nonzero.
        let missing = v.word_id("lives");
        let vals = &table[missing * 4..missing * 4 + 4];
        assert!(vals.iter().any(|&x| x != 0.0));
        assert!(vals.iter().all(|&x| x.abs() < 1.0));
    }

    #[test]
    fn embeddings_bad_arity_names_line() {
        use std::io::Write;
        let v = tiny_vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "Anna 1 2 3").unwrap();
        drop(f);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let err = load_embeddings(&path, &v, 4, &mut rng).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{}", err);
    }

    fn test_nodes<R: Rng>(
        tape: &mut Tape,
        rng: &mut R,
        vocab: &Vocabulary,
        delta: usize,
        pi: usize,
        eta: usize,
        rho: usize,
    ) -> EncoderNodes {
        let hidden = rho / 2;
        let d_in = delta + eta;
        let mut mk = |shape: Vec<usize>| {
            let len = shape.iter().product();
            let t = Tensor::new(shape, init_normal(len, rng))
                .unwrap()
                .with_grad();
            tape.leaf(t)
        };
        EncoderNodes {
            word_emb: mk(vec![vocab.word_count(), delta]),
            char_emb: mk(vec![vocab.char_count(), pi]),
            char_filters: mk(vec![eta, 3 * pi]),
            char_bias: mk(vec![eta]),
            lstm_fwd_w: mk(vec![4 * hidden, d_in + hidden]),
            lstm_fwd_b: mk(vec![4 * hidden]),
            lstm_bwd_w: mk(vec![4 * hidden, d_in + hidden]),
            lstm_bwd_b: mk(vec![4 * hidden]),
        }
    }

    fn ids_for(words: &[&str], vocab: &Vocabulary) -> SentenceIds {
        SentenceIds {
            word_ids: words.iter().map(|w| vocab.word_id(w)).collect(),
            char_ids: words.iter().map(|w| vocab.char_ids(w, 3)).collect(),
        }
    }

    #[test]
    fn h_has_requested_shape() {
        let v = tiny_vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tape = Tape::new();
        let nodes = test_nodes(&mut tape, &mut rng, &v, 6, 4, 5, 8);
        let ids = ids_for(&["Anna", "lives", "oslo"], &v);
        let h =
            encode_sentence(&mut tape, &ids, &nodes, 8, 3, 0.0, Phase::Infer, &mut rng).unwrap();
        assert_eq!(tape.shape(h), &[3, 8]);

        let one = ids_for(&["Anna"], &v);
        let h1 =
            encode_sentence(&mut tape, &one, &nodes, 8, 3, 0.0, Phase::Infer, &mut rng).unwrap();
        assert_eq!(tape.shape(h1), &[1, 8]);
    }

    #[test]
    fn empty_sentence_is_contract_error() {
        let v = tiny_vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tape = Tape::new();
        let nodes = test_nodes(&mut tape, &mut rng, &v, 6, 4, 5, 8);
        let ids = SentenceIds {
            word_ids: vec![],
            char_ids: vec![],
        };
        assert!(
            encode_sentence(&mut tape, &ids, &nodes, 8, 3, 0.0, Phase::Infer, &mut rng).is_err()
        );
    }

    #[test]
    fn char_encoding_is_window_sensitive() {
        // Shuffling characters must change the output for generic filters;
        // pooling is over windows, not a bag of characters.
        let v = tiny_vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut tape = Tape::new();
        let nodes = test_nodes(&mut tape, &mut rng, &v, 6, 4, 5, 8);
        let a = char_encode(
            &mut tape,
            &v.char_ids("lives", 3),
            nodes.char_emb,
            nodes.char_filters,
            nodes.char_bias,
            3,
        )
        .unwrap();
        let b = char_encode(
            &mut tape,
            &v.char_ids("sevil", 3),
            nodes.char_emb,
            nodes.char_filters,
            nodes.char_bias,
            3,
        )
        .unwrap();
        assert_ne!(tape.value(a), tape.value(b));
    }

    #[test]
    fn identical_windows_collapse_under_max() {
        // A word of one repeated character yields identical windows, so the
        // max equals any single window's response.
        let v = tiny_vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut tape = Tape::new();
        let nodes = test_nodes(&mut tape, &mut rng, &v, 6, 4, 5, 8);
        let repeated = char_encode(
            &mut tape,
            &v.char_ids("aaaaa", 3),
            nodes.char_emb,
            nodes.char_filters,
            nodes.char_bias,
            3,
        )
        .unwrap();
        let single = char_encode(
            &mut tape,
            &v.char_ids("aaa", 3),
            nodes.char_emb,
            nodes.char_filters,
            nodes.char_bias,
            3,
        )
        .unwrap();
        assert_eq!(tape.value(repeated), tape.value(single));
    }

    #[test]
    fn one_char_word_has_finite_features() {
        let v = tiny_vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut tape = Tape::new();
        let nodes = test_nodes(&mut tape, &mut rng, &v, 6, 4, 5, 8);
        let a = char_encode(
            &mut tape,
            &v.char_ids("a", 3),
            nodes.char_emb,
            nodes.char_filters,
            nodes.char_bias,
            3,
        )
        .unwrap();
        assert_eq!(tape.shape(a), &[5]);
        assert!(tape.value(a).iter().all(|x| x.is_finite()));
    }

    #[test]
    fn reversing_input_swaps_directions() {
        // With mirrored cell parameters, running the reversed sentence
        // produces H' where row i equals the (backward ⧺ forward) swap of
        // row n−1−i of the original H.
        let v = tiny_vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let rho = 8;
        let mut tape = Tape::new();
        let nodes = test_nodes(&mut tape, &mut rng, &v, 6, 4, 5, rho);
        let swapped = EncoderNodes {
            lstm_fwd_w: nodes.lstm_bwd_w,
            lstm_fwd_b: nodes.lstm_bwd_b,
            lstm_bwd_w: nodes.lstm_fwd_w,
            lstm_bwd_b: nodes.lstm_fwd_b,
            ..nodes
        };
        let words = ["Anna", "lives", "oslo"];
        let rev: Vec<&str> = words.iter().rev().copied().collect();
        let ids = ids_for(&words, &v);
        let ids_rev = ids_for(&rev, &v);
        let h =
            encode_sentence(&mut tape, &ids, &nodes, rho, 3, 0.0, Phase::Infer, &mut rng).unwrap();
        let h_rev = encode_sentence(
            &mut tape,
            &ids_rev,
            &swapped,
            rho,
            3,
            0.0,
            Phase::Infer,
            &mut rng,
        )
        .unwrap();
        let n = words.len();
        let half = rho / 2;
        let hv = tape.value(h).to_vec();
        let rv = tape.value(h_rev).to_vec();
        for i in 0..n {
            let orig = &hv[(n - 1 - i) * rho..(n - i) * rho];
            let got = &rv[i * rho..(i + 1) * rho];
            for k in 0..half {
                assert!((got[k] - orig[half + k]).abs() < 1e-12);
                assert!((got[half + k] - orig[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn word_embedding_gradients_are_sparse() {
        let v = tiny_vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut tape = Tape::new();
        let nodes = test_nodes(&mut tape, &mut rng, &v, 6, 4, 5, 8);
        let ids = ids_for(&["Anna", "lives"], &v);
        let h =
            encode_sentence(&mut tape, &ids, &nodes, 8, 3, 0.0, Phase::Train, &mut rng).unwrap();
        let loss = tape.sum_all(h);
        tape.backward(loss).unwrap();
        let g = tape.grad(nodes.word_emb).unwrap();
        let delta = 6;
        let used: std::collections::HashSet<usize> = ids.word_ids.iter().copied().collect();
        for row in 0..v.word_count() {
            let touched = g[row * delta..(row + 1) * delta].iter().any(|&x| x != 0.0);
            assert_eq!(touched, used.contains(&row), "row {}", row);
        }
    }
}
