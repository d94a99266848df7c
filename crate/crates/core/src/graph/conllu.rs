//! Reader for the subset of CoNLL-U needed to build question graphs.
//!
//! Only the `ID`, `FORM` and `HEAD` columns are used. Comment lines start
//! with `#`, sentences are separated by blank lines, and multiword-token
//! ranges (`3-4`) and empty nodes (`5.1`) are skipped.
//!
//! ```
//! use gma::graph::read_conllu;
//!
//! let text = "# text = the red car\n\
//!             1\tthe\t_\t_\t_\t_\t3\tdet\t_\t_\n\
//!             2\tred\t_\t_\t_\t_\t3\tamod\t_\t_\n\
//!             3\tcar\t_\t_\t_\t_\t0\troot\t_\t_\n";
//! let parses = read_conllu(text).unwrap();
//! assert_eq!(parses[0].tokens[2].form, "car");
//! assert_eq!(parses[0].root(), 3);
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{GmaError, Result};

const ID: usize = 0;
const FORM: usize = 1;
const HEAD: usize = 6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedToken {
    /// 1-based position in the sentence.
    pub index: usize,
    pub form: String,
    /// Index of the governing token, 0 for the root.
    pub head: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyParse {
    pub tokens: Vec<ParsedToken>,
}

impl DependencyParse {
    /// Validates head indices, single rootedness and acyclicity.
    pub fn new(tokens: Vec<ParsedToken>) -> Result<Self> {
        let lines: Vec<usize> = vec![0; tokens.len()];
        validate(&tokens, &lines)?;
        Ok(DependencyParse { tokens })
    }

    /// Builds a parse from forms and 1-based head indices.
    pub fn from_heads(forms: &[&str], heads: &[usize]) -> Result<Self> {
        if forms.len() != heads.len() {
            return Err(GmaError::InvalidArgument(format!(
                "{} forms but {} heads",
                forms.len(),
                heads.len()
            )));
        }
        let tokens = forms
            .iter()
            .zip(heads)
            .enumerate()
            .map(|(i, (f, &h))| ParsedToken {
                index: i + 1,
                form: (*f).to_string(),
                head: h,
            })
            .collect();
        DependencyParse::new(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// 1-based index of the root token.
    pub fn root(&self) -> usize {
        self.tokens.iter().find(|t| t.head == 0).map_or(0, |t| t.index)
    }

    pub fn forms(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.form.as_str())
    }
}

fn validate(tokens: &[ParsedToken], lines: &[usize]) -> Result<()> {
    let n = tokens.len();
    let err = |i: usize, message: String| GmaError::Parse { line: lines[i], message };
    let mut root = None;
    for (i, t) in tokens.iter().enumerate() {
        if t.index != i + 1 {
            return Err(err(i, format!("token ID {} out of sequence, expected {}", t.index, i + 1)));
        }
        if t.head > n {
            return Err(err(i, format!("head {} outside sentence of {n} tokens", t.head)));
        }
        if t.head == t.index {
            return Err(err(i, format!("token {} is its own head", t.index)));
        }
        if t.head == 0 {
            if root.is_some() {
                return Err(err(i, format!("multiple roots (token {})", t.index)));
            }
            root = Some(i);
        }
    }
    if n > 0 && root.is_none() {
        return Err(err(0, "sentence has no root".into()));
    }
    // Every chain of heads must reach the root within n steps.
    for start in 0..n {
        let mut cur = tokens[start].head;
        let mut steps = 0;
        while cur != 0 {
            steps += 1;
            if steps > n {
                return Err(err(start, format!("cyclic heads through token {}", start + 1)));
            }
            cur = tokens[cur - 1].head;
        }
    }
    Ok(())
}

/// Parses every sentence in a CoNLL-U document.
pub fn read_conllu(text: &str) -> Result<Vec<DependencyParse>> {
    let mut out = Vec::new();
    let mut tokens = Vec::new();
    let mut lines = Vec::new();
    let mut flush = |tokens: &mut Vec<ParsedToken>, lines: &mut Vec<usize>| -> Result<()> {
        if !tokens.is_empty() {
            validate(tokens, lines)?;
            out.push(DependencyParse {
                tokens: std::mem::take(tokens),
            });
            lines.clear();
        }
        Ok(())
    };
    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut tokens, &mut lines)?;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let id = cols[ID].trim();
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let index: usize = id.parse().map_err(|_| GmaError::Parse {
            line: line_no,
            message: format!("bad token ID {id:?}"),
        })?;
        let form = cols.get(FORM).map(|s| s.to_string()).ok_or_else(|| GmaError::Parse {
            line: line_no,
            message: "missing FORM column".into(),
        })?;
        let head = match cols.get(HEAD).map(|s| s.trim()) {
            None | Some("") | Some("_") => {
                return Err(GmaError::Parse {
                    line: line_no,
                    message: "missing HEAD column".into(),
                })
            }
            Some(h) => h.parse::<usize>().map_err(|_| GmaError::Parse {
                line: line_no,
                message: format!("bad HEAD value {h:?}"),
            })?,
        };
        tokens.push(ParsedToken { index, form, head });
        lines.push(line_no);
    }
    flush(&mut tokens, &mut lines)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, form: &str, head: &str) -> String {
        format!("{id}\t{form}\t_\t_\t_\t_\t{head}\tdep\t_\t_\n")
    }

    #[test]
    fn three_token_fixture() {
        let text = [row("1", "the", "3"), row("2", "red", "3"), row("3", "car", "0")].concat();
        let p = read_conllu(&text).unwrap();
        assert_eq!(p.len(), 1);
        let got: Vec<(usize, &str, usize)> = p[0].tokens.iter().map(|t| (t.index, t.form.as_str(), t.head)).collect();
        assert_eq!(got, vec![(1, "the", 3), (2, "red", 3), (3, "car", 0)]);
    }

    #[test]
    fn empty_and_comment_only() {
        assert!(read_conllu("").unwrap().is_empty());
        assert!(read_conllu("# sent_id = 1\n# text = nothing\n\n").unwrap().is_empty());
    }

    #[test]
    fn multiple_sentences_and_ranges() {
        let text = [
            row("1", "what", "0"),
            "\n".into(),
            "# sent_id = 2\n".into(),
            row("1-2", "isn't", "_"),
            row("1", "is", "0"),
            row("2", "n't", "1"),
            row("2.1", "ghost", "_"),
        ]
        .concat();
        let p = read_conllu(&text).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[1].forms().collect::<Vec<_>>(), vec!["is", "n't"]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let missing = "1\tthe\t_\t_\t_\t_\n";
        assert!(matches!(read_conllu(missing), Err(GmaError::Parse { line: 1, .. })));

        let two_roots = [row("1", "a", "0"), row("2", "b", "0")].concat();
        assert!(matches!(read_conllu(&two_roots), Err(GmaError::Parse { line: 2, .. })));

        let cycle = ["# c\n".to_string(), row("1", "a", "2"), row("2", "b", "1"), row("3", "c", "0")].concat();
        assert!(matches!(read_conllu(&cycle), Err(GmaError::Parse { line: 2, .. })));

        let self_head = [row("1", "a", "1")].concat();
        assert!(read_conllu(&self_head).is_err());

        let out_of_range = [row("1", "a", "0"), row("2", "b", "9")].concat();
        assert!(read_conllu(&out_of_range).is_err());
    }

    #[test]
    fn from_heads_validates() {
        assert!(DependencyParse::from_heads(&["a", "b"], &[2, 0]).is_ok());
        assert!(DependencyParse::from_heads(&["a", "b"], &[2, 1]).is_err());
        assert!(DependencyParse::from_heads(&["a"], &[0, 1]).is_err());
    }
}
