//! CoNLL-U reader and writer.
//!
//! Only syntactic words are kept: multiword-token ranges (`3-4`) and empty
//! nodes (`5.1`) are skipped. Named-entity tags travel in the MISC column as
//! `NER=<BIO tag>` and are reassembled into entity spans per sentence.

use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::IngestError;

/// Position of a token inside a BIO-encoded entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BioPosition {
    Begin,
    Inside,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NerTag {
    pub position: BioPosition,
    pub label: String,
}

impl NerTag {
    fn parse(raw: &str) -> Option<Self> {
        let (pos, label) = raw.split_once('-')?;
        let position = match pos {
            "B" => BioPosition::Begin,
            "I" => BioPosition::Inside,
            _ => return None,
        };
        if label.is_empty() {
            return None;
        }
        Some(Self {
            position,
            label: label.to_string(),
        })
    }

    fn render(&self) -> String {
        let p = match self.position {
            BioPosition::Begin => "B",
            BioPosition::Inside => "I",
        };
        format!("{p}-{}", self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    /// 1-based position in the sentence.
    pub index: usize,
    pub form: String,
    pub lemma: String,
    pub upos: String,
    /// Index of the syntactic head, 0 for the root.
    pub head: usize,
    pub deprel: String,
    pub ner: Option<NerTag>,
}

pub type Sentence = Vec<Token>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub sentence: usize,
    /// Half-open range of 0-based token positions within the sentence.
    pub tokens: Range<usize>,
    pub label: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedDocument {
    pub doc_id: String,
    pub sentences: Vec<Sentence>,
    pub entity_spans: Vec<EntitySpan>,
}

impl ParsedDocument {
    /// Surface text of an entity span, forms joined by single spaces.
    pub fn span_text(&self, span: &EntitySpan) -> String {
        self.sentences[span.sentence][span.tokens.clone()]
            .iter()
            .map(|t| t.form.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Plain text of the whole document, one line per sentence.
    pub fn plain_text(&self) -> String {
        self.sentences
            .iter()
            .map(|s| s.iter().map(|t| t.form.as_str()).collect::<Vec<_>>().join(" "))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }
}

/// Parses CoNLL-U text. The document id comes from a `# newdoc id = ...`
/// comment when present, otherwise it is empty.
pub fn parse_conllu(text: &str) -> Result<ParsedDocument, IngestError> {
    let mut doc = ParsedDocument::default();
    let mut current: Vec<Token> = Vec::new();
    let mut lines: Vec<usize> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !current.is_empty() {
                finish_sentence(&mut doc, std::mem::take(&mut current), &lines)?;
                lines.clear();
            }
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(id) = comment.trim().strip_prefix("newdoc id") {
                let id = id.trim_start().trim_start_matches('=').trim();
                if doc.doc_id.is_empty() {
                    doc.doc_id = id.to_string();
                }
            }
            continue;
        }
        if let Some(tok) = parse_token_line(line, line_no)? {
            if tok.index != current.len() + 1 {
                return Err(IngestError::parse(
                    line_no,
                    format!(
                        "token id {} out of sequence (expected {})",
                        tok.index,
                        current.len() + 1
                    ),
                ));
            }
            current.push(tok);
            lines.push(line_no);
        }
    }
    if !current.is_empty() {
        finish_sentence(&mut doc, current, &lines)?;
    }
    Ok(doc)
}

fn parse_token_line(line: &str, line_no: usize) -> Result<Option<Token>, IngestError> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 10 {
        return Err(IngestError::parse(
            line_no,
            format!("expected 10 tab-separated columns, found {}", cols.len()),
        ));
    }
    let id = cols[0];
    if id.contains('-') || id.contains('.') {
        return Ok(None);
    }
    let index: usize = id
        .parse()
        .map_err(|_| IngestError::parse(line_no, format!("invalid token id {id:?}")))?;
    if index == 0 {
        return Err(IngestError::parse(line_no, "token id 0 is reserved for the root"));
    }
    let head: usize = cols[6]
        .parse()
        .map_err(|_| IngestError::parse(line_no, format!("invalid head {:?}", cols[6])))?;
    if head == index {
        return Err(IngestError::parse(line_no, format!("token {index} is its own head")));
    }

    let mut ner = None;
    if cols[9] != "_" {
        for item in cols[9].split('|') {
            if let Some(tag) = item.strip_prefix("NER=") {
                if tag == "O" {
                    continue;
                }
                ner = Some(
                    NerTag::parse(tag)
                        .ok_or_else(|| IngestError::parse(line_no, format!("malformed NER tag {tag:?}")))?,
                );
            }
        }
    }

    Ok(Some(Token {
        index,
        form: cols[1].to_string(),
        lemma: cols[2].to_string(),
        upos: cols[3].to_string(),
        head,
        deprel: cols[7].to_string(),
        ner,
    }))
}

fn finish_sentence(doc: &mut ParsedDocument, tokens: Vec<Token>, lines: &[usize]) -> Result<(), IngestError> {
    let len = tokens.len();
    let sentence = doc.sentences.len();
    for (pos, tok) in tokens.iter().enumerate() {
        if tok.head > len {
            return Err(IngestError::parse(
                lines[pos],
                format!("head {} out of range for sentence of length {len}", tok.head),
            ));
        }
    }

    let mut open: Option<(usize, String)> = None;
    for (pos, tok) in tokens.iter().enumerate() {
        match &tok.ner {
            Some(NerTag {
                position: BioPosition::Begin,
                label,
            }) => {
                if let Some((start, l)) = open.take() {
                    doc.entity_spans.push(EntitySpan {
                        sentence,
                        tokens: start..pos,
                        label: l,
                    });
                }
                open = Some((pos, label.clone()));
            }
            Some(NerTag {
                position: BioPosition::Inside,
                label,
            }) => match &open {
                Some((_, l)) if l == label => {}
                _ => {
                    return Err(IngestError::parse(
                        lines[pos],
                        format!("I-{label} does not continue an open {label} span"),
                    ))
                }
            },
            None => {
                if let Some((start, l)) = open.take() {
                    doc.entity_spans.push(EntitySpan {
                        sentence,
                        tokens: start..pos,
                        label: l,
                    });
                }
            }
        }
    }
    if let Some((start, l)) = open {
        doc.entity_spans.push(EntitySpan {
            sentence,
            tokens: start..len,
            label: l,
        });
    }
    doc.sentences.push(tokens);
    Ok(())
}

/// Renders a document back to CoNLL-U. Columns the reader does not keep
/// (XPOS, FEATS, DEPS) are written as `_`.
pub fn to_conllu(doc: &ParsedDocument) -> String {
    let mut out = String::new();
    if !doc.doc_id.is_empty() {
        let _ = writeln!(out, "# newdoc id = {}", doc.doc_id);
    }
    for (si, sentence) in doc.sentences.iter().enumerate() {
        let _ = writeln!(out, "# sent_id = {}", si + 1);
        for tok in sentence {
            let misc = tok
                .ner
                .as_ref()
                .map(|n| format!("NER={}", n.render()))
                .unwrap_or_else(|| "_".to_string());
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t_\t_\t{}\t{}\t_\t{}",
                tok.index, tok.form, tok.lemma, tok.upos, tok.head, tok.deprel, misc
            );
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALICE: &str = "# text = Alice greeted Bob .\n\
1\tAlice\tAlice\tPROPN\t_\t_\t2\tnsubj\t_\tNER=B-PERSON\n\
2\tgreeted\tgreet\tVERB\t_\t_\t0\troot\t_\t_\n\
3\tBob\tBob\tPROPN\t_\t_\t2\tdobj\t_\tNER=B-PERSON\n\
4\t.\t.\tPUNCT\t_\t_\t2\tpunct\t_\t_\n";

    #[test]
    fn empty_input_has_no_sentences() {
        let doc = parse_conllu("").unwrap();
        assert!(doc.sentences.is_empty());
        assert!(doc.entity_spans.is_empty());
    }

    #[test]
    fn four_token_sentence() {
        let doc = parse_conllu(ALICE).unwrap();
        assert_eq!(doc.sentences.len(), 1);
        let s = &doc.sentences[0];
        assert_eq!(s.len(), 4);
        assert_eq!(s.iter().map(|t| t.head).collect::<Vec<_>>(), vec![2, 0, 2, 2]);
        assert_eq!(
            s.iter().map(|t| t.deprel.as_str()).collect::<Vec<_>>(),
            vec!["nsubj", "root", "dobj", "punct"]
        );
        assert_eq!(doc.entity_spans.len(), 2);
        assert_eq!(doc.entity_spans[0].tokens, 0..1);
        assert_eq!(doc.entity_spans[1].tokens, 2..3);
        assert!(doc.entity_spans.iter().all(|e| e.label == "PERSON"));
        assert_eq!(doc.span_text(&doc.entity_spans[1]), "Bob");
    }

    #[test]
    fn nine_columns_names_line() {
        let text = "1\tAlice\tAlice\tPROPN\t_\t_\t0\troot\t_\n";
        let err = parse_conllu(text).unwrap_err();
        match err {
            IngestError::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
        let text = format!("# c\n{}", "1\ta\ta\tX\t_\t_\t0\troot\t_\n");
        assert!(matches!(parse_conllu(&text), Err(IngestError::Parse { line: 2, .. })));
    }

    #[test]
    fn head_out_of_range() {
        let text = "1\ta\ta\tX\t_\t_\t0\troot\t_\t_\n2\tb\tb\tX\t_\t_\t7\tdep\t_\t_\n";
        let err = parse_conllu(text).unwrap_err();
        assert!(matches!(err, IngestError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn self_headed_token_rejected() {
        let text = "1\ta\ta\tX\t_\t_\t1\troot\t_\t_\n";
        assert!(parse_conllu(text).is_err());
    }

    #[test]
    fn dangling_inside_tag_rejected() {
        let text = "1\tNew\tnew\tPROPN\t_\t_\t2\tcompound\t_\tNER=B-GPE\n\
2\tYork\tYork\tPROPN\t_\t_\t0\troot\t_\tNER=I-ORG\n";
        assert!(matches!(parse_conllu(text), Err(IngestError::Parse { line: 2, .. })));
        let text = "1\tYork\tYork\tPROPN\t_\t_\t0\troot\t_\tNER=I-GPE\n";
        assert!(parse_conllu(text).is_err());
    }

    #[test]
    fn multiword_and_empty_nodes_skipped() {
        let text = "# newdoc id = d7\n\
1-2\tdu\t_\t_\t_\t_\t_\t_\t_\t_\n\
1\tde\tde\tADP\t_\t_\t2\tcase\t_\t_\n\
2\tle\tle\tDET\t_\t_\t0\troot\t_\t_\n\
2.1\tx\tx\tX\t_\t_\t_\t_\t_\t_\n";
        let doc = parse_conllu(text).unwrap();
        assert_eq!(doc.doc_id, "d7");
        assert_eq!(doc.sentences[0].len(), 2);
    }

    #[test]
    fn multi_token_span_and_misc_extras() {
        let text = "1\tNew\tNew\tPROPN\t_\t_\t2\tcompound\t_\tSpaceAfter=No|NER=B-GPE\n\
2\tDelhi\tDelhi\tPROPN\t_\t_\t0\troot\t_\tNER=I-GPE\n\
3\tvotes\tvote\tNOUN\t_\t_\t2\tdep\t_\tNER=O\n";
        let doc = parse_conllu(text).unwrap();
        assert_eq!(doc.entity_spans.len(), 1);
        assert_eq!(doc.entity_spans[0].tokens, 0..2);
        assert_eq!(doc.span_text(&doc.entity_spans[0]), "New Delhi");
    }

    #[test]
    fn writer_round_trip() {
        let doc = parse_conllu(ALICE).unwrap();
        let again = parse_conllu(&to_conllu(&doc)).unwrap();
        assert_eq!(doc, again);
    }
}
