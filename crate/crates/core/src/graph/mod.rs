//! Graph construction for both modalities.

pub mod bbox;
pub mod conllu;
pub mod embedding;
pub mod gru;
pub mod question;
pub mod visual;

pub use bbox::{iou, BoundingBox};
pub use conllu::{read_conllu, DependencyParse, ParsedToken};
pub use embedding::{load_embeddings, EmbeddingTable, OovPolicy, GLOVE_DIM};
pub use gru::{bigru_encode, BiGruStates, GruCell, GruParams};
pub use question::{
    build_question_graph, embed_sentence, encode_question, QuestionDropout, QuestionGraph, QuestionStructure,
};
pub use visual::{build_visual_graph, Detection, DetectionSet, VisualGraph};
