//! Question graph construction from a dependency parse.
//!
//! Structure (tokens, word groups, edges) depends only on the parse and is
//! computed once by [`QuestionStructure::from_parse`]. Node features depend
//! on the Bi-GRU weights and are produced on a tape by
//! [`encode_question`], so the encoder trains with the rest of the model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conllu::DependencyParse;
use super::embedding::EmbeddingTable;
use super::gru::GruParams;
use crate::error::{GmaError, Result};
use crate::numeric::{count_valid, Bound, ParamStore, Tape, Tensor, Var};

/// Parse-derived layout of a question graph with `k2` node slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionStructure {
    /// All surface forms of the sentence, before truncation.
    pub sentence: Vec<String>,
    /// Word groups of the kept nodes as indices into `sentence`, each in
    /// sentence order: the word, its head and its direct dependents.
    pub groups: Vec<Vec<usize>>,
    /// `e_ij = 1` iff node `i` is the head of node `j`; self-loops on valid
    /// nodes; zero on padding.
    pub edges: Tensor,
    pub mask: Vec<bool>,
}

impl QuestionStructure {
    /// Keeps the first `k2` tokens; edges to dropped tokens are removed.
    pub fn from_parse(parse: &DependencyParse, k2: usize) -> Result<Self> {
        if parse.is_empty() {
            return Err(GmaError::InvalidArgument("empty dependency parse".into()));
        }
        if k2 == 0 {
            return Err(GmaError::InvalidArgument("K2 must be positive".into()));
        }
        let kept = parse.len().min(k2);
        let mut edges = Tensor::zeros(k2, k2);
        let mut groups: Vec<Vec<usize>> = (0..kept).map(|i| vec![i]).collect();
        for j in 0..kept {
            edges.set(j, j, 1.0);
            let head = parse.tokens[j].head;
            if head == 0 || head > kept {
                continue;
            }
            let i = head - 1;
            edges.set(i, j, 1.0);
            groups[j].push(i);
            groups[i].push(j);
        }
        for g in &mut groups {
            g.sort_unstable();
            g.dedup();
        }
        Ok(QuestionStructure {
            sentence: parse.forms().map(str::to_string).collect(),
            groups,
            edges,
            mask: (0..k2).map(|i| i < kept).collect(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.mask.len()
    }

    pub fn num_valid(&self) -> usize {
        count_valid(&self.mask)
    }

    /// Number of head→dependent edges, excluding self-loops.
    pub fn num_dependency_edges(&self) -> usize {
        let k = self.num_nodes();
        (0..k)
            .flat_map(|i| (0..k).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && self.edges.get(i, j) != 0.0)
            .count()
    }

    pub fn group_words(&self, node: usize) -> Vec<&str> {
        self.groups[node].iter().map(|&w| self.sentence[w].as_str()).collect()
    }
}

/// Node features, edges, mask and global question vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionGraph {
    pub nodes: Tensor,
    pub edges: Tensor,
    pub mask: Vec<bool>,
    pub q: Tensor,
}

impl QuestionGraph {
    pub fn num_nodes(&self) -> usize {
        self.mask.len()
    }

    pub fn num_valid(&self) -> usize {
        count_valid(&self.mask)
    }

    pub fn permuted(&self, perm: &[usize]) -> QuestionGraph {
        QuestionGraph {
            nodes: self.nodes.permute_rows(perm),
            edges: self.edges.permute_square(perm),
            mask: perm.iter().map(|&p| self.mask[p]).collect(),
            q: self.q.clone(),
        }
    }
}

/// Dropout applied while encoding questions.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QuestionDropout {
    pub word: f64,
    pub question: f64,
}

/// Looks up every word of the sentence, failing if the table's policy
/// rejects an out-of-vocabulary word.
pub fn embed_sentence(structure: &QuestionStructure, emb: &EmbeddingTable) -> Result<Vec<Vec<f64>>> {
    structure.sentence.iter().map(|w| emb.lookup(w)).collect()
}

/// Encodes node groups and the whole sentence with the Bi-GRU. Returns the
/// `k2×d` node matrix (zero rows on padding) and the `1×d` vector `q`.
#[allow(clippy::too_many_arguments)]
pub fn encode_question<R: Rng + ?Sized>(
    tape: &mut Tape,
    p: &Bound,
    gru: &GruParams,
    structure: &QuestionStructure,
    words: &[Vec<f64>],
    dropout: QuestionDropout,
    training: bool,
    rng: &mut R,
) -> Result<(Var, Var)> {
    if words.len() != structure.sentence.len() {
        return Err(GmaError::shape(
            "encode_question",
            format!("{} embeddings for {} words", words.len(), structure.sentence.len()),
        ));
    }
    let mut word_vars = Vec::with_capacity(words.len());
    for w in words {
        let v = tape.constant(Tensor::row(w));
        word_vars.push(tape.dropout(v, dropout.word, training, rng)?);
    }
    let stacked = tape.stack_rows(&word_vars)?;
    // every valid node's word group, then the whole sentence
    let mut seqs: Vec<Vec<usize>> = (0..structure.num_nodes())
        .filter(|&node| structure.mask[node])
        .map(|node| structure.groups[node].clone())
        .collect();
    let sentence = seqs.len();
    seqs.push((0..words.len()).collect());
    let encoded = gru.encode_many(tape, p, stacked, &seqs)?;
    let mut next = 0;
    let slots: Vec<Option<usize>> = structure
        .mask
        .iter()
        .map(|&valid| {
            valid.then(|| {
                next += 1;
                next - 1
            })
        })
        .collect();
    let nodes = tape.gather_rows(encoded, &slots)?;
    let q = tape.gather_rows(encoded, &[Some(sentence)])?;
    let q = tape.dropout(q, dropout.question, training, rng)?;
    Ok((nodes, q))
}

/// Builds a fully materialized question graph in evaluation mode.
pub fn build_question_graph(
    parse: &DependencyParse,
    emb: &EmbeddingTable,
    store: &ParamStore,
    gru: &GruParams,
    k2: usize,
) -> Result<QuestionGraph> {
    let structure = QuestionStructure::from_parse(parse, k2)?;
    let words = embed_sentence(&structure, emb)?;
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (nodes, q) = encode_question(&mut tape, &p, gru, &structure, &words, QuestionDropout::default(), false, &mut rng)?;
    Ok(QuestionGraph {
        nodes: tape.value(nodes).clone(),
        edges: structure.edges.clone(),
        mask: structure.mask.clone(),
        q: tape.value(q).clone(),
    })
}
