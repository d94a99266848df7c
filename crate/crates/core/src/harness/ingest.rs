//! Builds a dataset from detection files and CoNLL-U parses.
//!
//! Sentences are paired with images through an `# image_id = …` comment.
//! Without one, the `i`-th sentence goes with the `i`-th image, or with the
//! only image when there is just one. An `# answer = …` comment labels the
//! question when an answer vocabulary is given.

use std::collections::HashMap;
use std::path::Path;

use super::data::{Dataset, Example, QuestionInput, Split};
use crate::error::{GmaError, Result};
use crate::graph::{build_visual_graph, embed_sentence, read_conllu, DetectionSet, EmbeddingTable, QuestionStructure};
use crate::head::AnswerVocab;

/// Reads one detection document, or every `*.json` file of a directory in
/// name order.
pub fn load_detections(path: &Path) -> Result<Vec<DetectionSet>> {
    if !path.is_dir() {
        return Ok(vec![DetectionSet::load(path)?]);
    }
    let mut files: Vec<_> = std::fs::read_dir(path)
        .map_err(|e| GmaError::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(GmaError::InvalidArgument(format!("no .json files in {}", path.display())));
    }
    files.iter().map(|f| DetectionSet::load(f)).collect()
}

/// `# key = value` comments of each sentence that has at least one token.
pub fn sentence_metadata(text: &str) -> Vec<HashMap<String, String>> {
    let mut out = Vec::new();
    let mut meta = HashMap::new();
    let mut has_tokens = false;
    for line in text.lines().chain(std::iter::once("")) {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if has_tokens {
                out.push(std::mem::take(&mut meta));
            }
            meta.clear();
            has_tokens = false;
        } else if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
        } else {
            let id = line.split('\t').next().unwrap_or("");
            has_tokens |= !(id.contains('-') || id.contains('.'));
        }
    }
    out
}

pub struct IngestOptions<'a> {
    pub k1: usize,
    pub k2: usize,
    pub iou_threshold: f64,
    pub embeddings: &'a EmbeddingTable,
    pub answers: Option<&'a AnswerVocab>,
}

pub fn build_dataset(images: &[DetectionSet], conllu: &str, opts: &IngestOptions) -> Result<Dataset> {
    let parses = read_conllu(conllu)?;
    let meta = sentence_metadata(conllu);
    debug_assert_eq!(parses.len(), meta.len());
    let by_id: HashMap<&str, usize> = images.iter().enumerate().map(|(i, s)| (s.image_id.as_str(), i)).collect();
    let mut visuals = vec![None; images.len()];
    let mut examples = Vec::with_capacity(parses.len());
    for (i, (parse, meta)) in parses.iter().zip(&meta).enumerate() {
        let image = match meta.get("image_id") {
            Some(id) => *by_id
                .get(id.as_str())
                .ok_or_else(|| GmaError::InvalidArgument(format!("sentence {}: unknown image_id {id:?}", i + 1)))?,
            None if images.len() == 1 => 0,
            None if images.len() == parses.len() => i,
            None => {
                return Err(GmaError::InvalidArgument(format!(
                    "sentence {} has no image_id and {} images cannot be paired with {} sentences by position",
                    i + 1,
                    images.len(),
                    parses.len()
                )))
            }
        };
        if visuals[image].is_none() {
            visuals[image] = Some(build_visual_graph(&images[image], opts.iou_threshold, opts.k1)?);
        }
        let structure = QuestionStructure::from_parse(parse, opts.k2)?;
        let words = embed_sentence(&structure, opts.embeddings)?;
        let answer = match (opts.answers, meta.get("answer")) {
            (Some(vocab), Some(a)) => Some(vocab.index_of(a).ok_or_else(|| {
                GmaError::InvalidArgument(format!("sentence {}: answer {a:?} not in the vocabulary", i + 1))
            })?),
            _ => None,
        };
        let id = meta
            .get("sent_id")
            .cloned()
            .unwrap_or_else(|| format!("{}-q{}", images[image].image_id, i));
        examples.push(Example {
            id,
            split: Split::Train,
            visual: visuals[image].clone().expect("built above"),
            question: QuestionInput::Words { structure, words },
            answer,
            votes: None,
            references: None,
        });
    }
    if examples.is_empty() {
        return Err(GmaError::InvalidArgument("no sentences in parse file".into()));
    }
    let num_answers = opts.answers.map_or(2, AnswerVocab::len).max(2);
    let ds = Dataset::new(num_answers, examples);
    ds.dims()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{BoundingBox, Detection, OovPolicy};

    fn image(id: &str) -> DetectionSet {
        DetectionSet {
            image_id: id.into(),
            image_size: [10.0, 10.0],
            detections: vec![
                Detection {
                    bbox: BoundingBox::new(0.0, 0.0, 2.0, 2.0).unwrap(),
                    feature: vec![1.0, 0.0],
                },
                Detection {
                    bbox: BoundingBox::new(1.0, 1.0, 3.0, 3.0).unwrap(),
                    feature: vec![0.0, 1.0],
                },
            ],
        }
    }

    const PARSES: &str = "# image_id = b\n# answer = red\n1\tthe\t_\t_\t_\t_\t3\tdet\t_\t_\n2\tred\t_\t_\t_\t_\t3\tamod\t_\t_\n3\tcar\t_\t_\t_\t_\t0\troot\t_\t_\n\n# image_id = a\n1\twhy\t_\t_\t_\t_\t0\troot\t_\t_\n\n";

    #[test]
    fn pairs_by_image_id() {
        let emb = EmbeddingTable::empty(4, OovPolicy::HashedRandom { seed: 1 });
        let vocab = AnswerVocab::parse("blue\nred\n").unwrap();
        let opts = IngestOptions {
            k1: 3,
            k2: 4,
            iou_threshold: 0.3,
            embeddings: &emb,
            answers: Some(&vocab),
        };
        let ds = build_dataset(&[image("a"), image("b")], PARSES, &opts).unwrap();
        assert_eq!(ds.examples.len(), 2);
        assert_eq!(ds.examples[0].answer, Some(1));
        assert_eq!(ds.examples[1].answer, None);
        assert_eq!(ds.examples[0].id, "b-q0");
        let dims = ds.dims().unwrap();
        assert_eq!((dims.k1, dims.k2, dims.visual_dim), (3, 4, 6));
        // IoU of the two boxes is 1/7, below the threshold
        assert_eq!(ds.examples[0].visual.edges.get(0, 1), 0.0);
    }

    #[test]
    fn metadata_blocks_align_with_parses() {
        let meta = sentence_metadata(PARSES);
        assert_eq!(meta.len(), 2);
        assert_eq!(meta[1]["image_id"], "a");
        assert!(sentence_metadata("# only a comment\n").is_empty());
    }

    #[test]
    fn unpaired_sentences_are_errors() {
        let emb = EmbeddingTable::empty(4, OovPolicy::Zero);
        let opts = IngestOptions {
            k1: 3,
            k2: 4,
            iou_threshold: 0.3,
            embeddings: &emb,
            answers: None,
        };
        let text = PARSES.replace("# image_id = b\n", "").replace("# image_id = a\n", "");
        let three = [image("a"), image("b"), image("c")];
        assert!(build_dataset(&three, &text, &opts).is_err());
        assert!(build_dataset(&[image("a")], &text, &opts).is_ok());
        assert!(build_dataset(&[image("x"), image("y")], PARSES, &opts).is_err());
    }
}
