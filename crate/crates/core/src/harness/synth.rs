//! Synthetic matching task.
//!
//! Every object in an image carries a random identity key followed by a
//! one-hot attribute cluster. Each word of the question is a noisy copy of
//! the key of one object, the target. The answer is the target's cluster.
//! The question alone says nothing about clusters and the image alone does
//! not say which object is the target, so only cross-graph matching solves
//! it.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::RunConfig;
use super::data::{Dataset, Example, QuestionInput, Split};
use crate::error::{GmaError, Result};
use crate::graph::{build_visual_graph, BoundingBox, DependencyParse, Detection, DetectionSet, QuestionStructure};
use crate::head::argmax;
use crate::numeric::{AdamaxConfig, AdamaxState, Tape, Tensor};

const IMAGE_SIZE: f64 = 100.0;

/// Generates `cfg.synth.train_examples` training and
/// `cfg.synth.holdout_examples` held-out examples. Labels cycle through
/// all classes within each split before shuffling, so every class is
/// equally frequent up to one example.
pub fn generate_synthetic(cfg: &RunConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(cfg.synth.train_examples + cfg.synth.holdout_examples);
    for (split, n) in [(Split::Train, cfg.synth.train_examples), (Split::Holdout, cfg.synth.holdout_examples)] {
        let mut labels: Vec<usize> = (0..n).map(|i| i % cfg.num_answers).collect();
        labels.shuffle(&mut rng);
        for label in labels {
            let index = examples.len();
            examples.push(synthetic_example(cfg, index, split, label, &mut rng)?);
        }
    }
    Ok(Dataset::new(cfg.num_answers, examples))
}

fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn synthetic_example(cfg: &RunConfig, index: usize, split: Split, label: usize, rng: &mut impl Rng) -> Result<Example> {
    let (k1, k2, na, kd) = (cfg.k1, cfg.k2, cfg.num_answers, cfg.synth.key_dim);
    let n_objects = rng.random_range(k1.min(2)..=k1);
    let target = rng.random_range(0..n_objects);
    let mut keys = Vec::with_capacity(n_objects);
    let mut detections = Vec::with_capacity(n_objects);
    for i in 0..n_objects {
        let cluster = if i == target {
            label
        } else {
            let c = rng.random_range(0..na - 1);
            if c >= label {
                c + 1
            } else {
                c
            }
        };
        let key = gaussian(rng, kd);
        let mut feature = key.clone();
        feature.extend((0..na).map(|c| if c == cluster { 1.0 } else { 0.0 }));
        let (x, y) = (rng.random_range(0.0..70.0), rng.random_range(0.0..70.0));
        let (w, h) = (rng.random_range(10.0..30.0), rng.random_range(10.0..30.0));
        detections.push(Detection {
            bbox: BoundingBox::new(x, y, x + w, y + h)?,
            feature,
        });
        keys.push(key);
    }
    let set = DetectionSet {
        image_id: format!("synth-{index}"),
        image_size: [IMAGE_SIZE, IMAGE_SIZE],
        detections,
    };
    let visual = build_visual_graph(&set, cfg.iou_threshold, k1)?;

    let n_words = rng.random_range(1..=k2);
    let forms: Vec<String> = (0..n_words).map(|i| format!("w{i}")).collect();
    let refs: Vec<&str> = forms.iter().map(String::as_str).collect();
    // first word is the root, every later word hangs off an earlier one
    let heads: Vec<usize> = (0..n_words).map(|j| if j == 0 { 0 } else { rng.random_range(1..=j) }).collect();
    let parse = DependencyParse::from_heads(&refs, &heads)?;
    let structure = QuestionStructure::from_parse(&parse, k2)?;
    let words = (0..n_words)
        .map(|_| {
            let noise = gaussian(rng, kd);
            keys[target].iter().zip(noise).map(|(k, e)| k + cfg.synth.noise * e).collect()
        })
        .collect();
    Ok(Example {
        id: format!("synth-{index}"),
        split,
        visual,
        question: QuestionInput::Words { structure, words },
        answer: Some(label),
        votes: None,
        references: Some(vec![target; n_words]),
    })
}

pub fn label_counts(ds: &Dataset, split: Option<Split>) -> Vec<usize> {
    let mut counts = vec![0; ds.num_answers];
    for ex in ds.examples.iter().filter(|e| split.is_none_or(|s| e.split == s)) {
        if let Some(a) = ex.answer {
            counts[a] += 1;
        }
    }
    counts
}

/// Fraction of question words whose nearest object key (Euclidean, over
/// valid objects) is the object they were copied from.
pub fn nearest_neighbor_precision(ds: &Dataset, key_dim: usize) -> Result<f64> {
    let (mut hits, mut total) = (0usize, 0usize);
    for ex in &ds.examples {
        let (Some(refs), QuestionInput::Words { words, .. }) = (&ex.references, &ex.question) else {
            continue;
        };
        for (w, &want) in words.iter().zip(refs) {
            let dist = |j: usize| -> f64 {
                let key = &ex.visual.nodes.row_slice(j)[..key_dim];
                key.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum()
            };
            let nearest = (0..ex.visual.num_nodes())
                .filter(|&j| ex.visual.mask[j])
                .min_by(|&a, &b| dist(a).total_cmp(&dist(b)))
                .ok_or_else(|| GmaError::InvalidArgument(format!("example {} has no objects", ex.id)))?;
            hits += usize::from(nearest == want);
            total += 1;
        }
    }
    if total == 0 {
        return Err(GmaError::InvalidArgument("no planted references in dataset".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// Mean word vector of a question.
fn question_summary(ex: &Example) -> Vec<f64> {
    match &ex.question {
        QuestionInput::Words { words, .. } => {
            let mut mean = vec![0.0; words[0].len()];
            for w in words {
                mean.iter_mut().zip(w).for_each(|(m, v)| *m += v / words.len() as f64);
            }
            mean
        }
        QuestionInput::Graph { graph } => graph.q.data().to_vec(),
    }
}

/// Trains a linear classifier on question summaries of the training split
/// and returns its accuracy on the held-out split.
pub fn question_only_probe(ds: &Dataset, steps: usize) -> Result<f64> {
    let collect = |split| -> (Vec<Vec<f64>>, Vec<usize>) {
        ds.split(split)
            .filter_map(|e| e.answer.map(|a| (question_summary(e), a)))
            .unzip()
    };
    let (train_x, train_y) = collect(Split::Train);
    let (test_x, test_y) = collect(Split::Holdout);
    if train_x.is_empty() || test_x.is_empty() {
        return Err(GmaError::InvalidArgument("probe needs labelled train and held-out examples".into()));
    }
    let (dim, na) = (train_x[0].len(), ds.num_answers);
    let x = Tensor::try_from_rows(&train_x)?;
    let mut targets = vec![0.0; train_y.len() * na];
    for (i, &y) in train_y.iter().enumerate() {
        targets[i * na + y] = 1.0;
    }
    let mut params = vec![Tensor::zeros(dim, na), Tensor::zeros(1, na)];
    let mut opt = AdamaxState::for_params(
        AdamaxConfig {
            lr: 0.05,
            ..Default::default()
        },
        &params,
    );
    for _ in 0..steps {
        let mut tape = Tape::new();
        let (w, b) = (tape.param(&params[0]), tape.param(&params[1]));
        let xv = tape.constant(x.clone());
        let xw = tape.matmul(xv, w)?;
        let logits = tape.add_row_broadcast(xw, b)?;
        let loss = tape.bce_with_logits(logits, &targets)?;
        let loss = tape.scale(loss, 1.0 / train_y.len() as f64)?;
        tape.backward(loss)?;
        let grads: Vec<Vec<f64>> = [w, b].iter().map(|&v| tape.grad(v).expect("param").to_vec()).collect();
        let refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        opt.step(&mut params, &refs)?;
    }
    let scores = Tensor::try_from_rows(&test_x)?.matmul(&params[0])?;
    let correct = test_y
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            let row: Vec<f64> = scores.row_slice(i).iter().zip(params[1].data()).map(|(s, b)| s + b).collect();
            argmax(&row) == y
        })
        .count();
    Ok(correct as f64 / test_y.len() as f64)
}
