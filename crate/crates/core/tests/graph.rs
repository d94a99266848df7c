use std::process::Command;

use gma::engine::{normalized_laplacian, symmetrize};
use gma::graph::{build_visual_graph, iou, read_conllu, BoundingBox, Detection, DetectionSet, QuestionStructure};
use gma::harness::{prepare, Checkpoint, Dataset, Model, ModelConfig};
use gma::Tensor;
use proptest::prelude::*;

fn arb_box() -> impl Strategy<Value = BoundingBox> {
    (0.0f64..50.0, 0.0f64..50.0, 0.1f64..40.0, 0.1f64..40.0)
        .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, x + w, y + h).unwrap())
}

fn detections() -> impl Strategy<Value = DetectionSet> {
    prop::collection::vec((arb_box(), prop::collection::vec(-1.0f64..1.0, 3)), 1..7).prop_map(|dets| DetectionSet {
        image_id: "img".into(),
        image_size: [100.0, 100.0],
        detections: dets.into_iter().map(|(bbox, feature)| Detection { bbox, feature }).collect(),
    })
}

proptest! {
    #[test]
    fn visual_graphs_are_symmetric_with_self_loops(set in detections(), thr in 0.0f64..1.0) {
        let n = set.detections.len();
        let g = build_visual_graph(&set, thr, 8).unwrap();
        prop_assert_eq!(g.num_valid(), n);
        for i in 0..8 {
            for j in 0..8 {
                let e = g.edges.get(i, j);
                prop_assert_eq!(e, g.edges.get(j, i));
                if i >= n || j >= n {
                    prop_assert_eq!(e, 0.0);
                } else if i == j {
                    prop_assert_eq!(e, 1.0);
                } else {
                    let connected = iou(&set.detections[i].bbox, &set.detections[j].bbox) > thr;
                    prop_assert_eq!(e == 1.0, connected);
                }
            }
        }
        let l = normalized_laplacian(&g.edges, &g.mask).unwrap();
        prop_assert!(l.max_abs_diff(&l.transpose()) < 1e-15);
        // The largest eigenvalue of D^-1/2 E D^-1/2 is 1, so no entry exceeds it.
        prop_assert!(l.data().iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let v = iou(&a, &b);
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn question_edges_follow_heads(heads in prop::collection::vec(0usize..6, 1..6), k2 in 1usize..7) {
        // Turn arbitrary numbers into a tree: token i (1-based) points at an
        // earlier token or at the root.
        let heads: Vec<usize> = heads.iter().enumerate().map(|(i, &h)| if i == 0 { 0 } else { 1 + h % i }).collect();
        let forms: Vec<String> = (0..heads.len()).map(|i| format!("w{i}")).collect();
        let refs: Vec<&str> = forms.iter().map(String::as_str).collect();
        let parse = gma::graph::DependencyParse::from_heads(&refs, &heads).unwrap();
        let s = QuestionStructure::from_parse(&parse, k2).unwrap();
        let kept = heads.len().min(k2);
        prop_assert_eq!(s.num_valid(), kept);
        for j in 0..kept {
            prop_assert_eq!(s.edges.get(j, j), 1.0);
            let h = heads[j];
            if h > 0 && h <= kept {
                prop_assert_eq!(s.edges.get(h - 1, j), 1.0);
                prop_assert!(s.groups[j].contains(&(h - 1)));
            }
        }
        prop_assert_eq!(s.num_dependency_edges(), (0..kept).filter(|&j| heads[j] > 0 && heads[j] <= kept).count());
        let l = normalized_laplacian(&symmetrize(&s.edges), &s.mask).unwrap();
        prop_assert!(l.is_finite());
    }
}

#[test]
fn two_node_laplacian() {
    let e = Tensor::from_rows(&[[1.0, 1.0], [1.0, 1.0]]);
    let l = normalized_laplacian(&e, &[true, true]).unwrap();
    assert_eq!(l, Tensor::filled(2, 2, 0.5));
}

#[test]
fn conllu_reader_reports_the_bad_line() {
    let text = "1\ta\t_\t_\t_\t_\t0\troot\t_\t_\n2\tb\t_\t_\t_\t_\tx\tdep\t_\t_\n";
    let err = read_conllu(text).unwrap_err().to_string();
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn build_graphs_feeds_a_model() {
    let dir = tempfile::tempdir().unwrap();
    let det = r#"{"image_id": "img1", "image_size": [20, 10],
        "detections": [
            {"bbox": [0, 0, 10, 10], "feature": [0.1, 0.2, 0.3]},
            {"bbox": [5, 0, 15, 10], "feature": [0.4, 0.5, 0.6]},
            {"bbox": [16, 2, 19, 4], "feature": [0.7, 0.8, 0.9]}
        ]}"#;
    let parses = "# image_id = img1\n# answer = left\n1\twhat\t_\t_\t_\t_\t3\tdet\t_\t_\n2\tis\t_\t_\t_\t_\t3\tcop\t_\t_\n3\tleft\t_\t_\t_\t_\t0\troot\t_\t_\n\n";
    let (det_path, parse_path) = (dir.path().join("det.json"), dir.path().join("q.conllu"));
    let (answers, out) = (dir.path().join("answers.txt"), dir.path().join("data.json"));
    std::fs::write(&det_path, det).unwrap();
    std::fs::write(&parse_path, parses).unwrap();
    std::fs::write(&answers, "left\nright\n").unwrap();
    let run = Command::new(env!("CARGO_BIN_EXE_gma"))
        .args(["build-graphs", "--detections"])
        .arg(&det_path)
        .arg("--parses")
        .arg(&parse_path)
        .arg("--out")
        .arg(&out)
        .arg("--answers")
        .arg(&answers)
        .args(["--k1", "4", "--k2", "5"])
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));

    let ds = Dataset::load(&out).unwrap();
    let ex = &ds.examples[0];
    assert_eq!(ex.answer, Some(0));
    // [0,0,10,10] and [5,0,15,10] overlap with IoU 1/3 > 0.3.
    assert_eq!(ex.visual.edges.get(0, 1), 1.0);
    assert_eq!(ex.visual.edges.get(1, 2), 0.0);
    assert_eq!(ex.visual.mask, vec![true, true, true, false]);
    assert_eq!(ex.visual.nodes.row_slice(1)[3..], [0.25, 0.0, 0.75, 1.0]);

    let mut cfg = gma::harness::RunConfig::desk();
    cfg.num_answers = 2;
    cfg.d = 8;
    let model = Model::new(ModelConfig::from_run(&cfg, &ds.dims().unwrap()), 0).unwrap();
    let prepared = prepare(&ds, None).unwrap();
    let pred = model.predict(&prepared[0]).unwrap();
    assert!(pred.scores.data().iter().all(|&s| s > 0.0 && s < 1.0));
    let ckpt = Checkpoint::capture(&cfg, &model, None, 0);
    assert_eq!(ckpt.restore_model(None).unwrap().predict(&prepared[0]).unwrap(), pred);
}
