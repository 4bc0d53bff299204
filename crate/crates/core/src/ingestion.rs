//! Readers for the supported input formats. Everything converges on
//! [`Example`]; the canonical on-disk form is JSONL, one example per line.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};

use serde::Deserialize;
use thiserror::Error;

use crate::templates::normalize_key;
use crate::types::{Example, GoldLabel, RoughVerdict, Triple, TypeError};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Jsonl { line: usize, message: String },
    #[error("line {line}: expected 3 fields separated by '|', found {found}")]
    TripleArity { line: usize, found: usize },
    #[error("line {line}: {source}")]
    TripleField { line: usize, source: TypeError },
    #[error("meaning representation {mr:?}: {message}")]
    MeaningRepresentation { mr: String, message: String },
    #[error("ratings: missing column {0:?}")]
    MissingColumn(String),
    #[error("ratings row {row}: {message}")]
    Ratings { row: usize, message: String },
    #[error("invalid ratings threshold {0}, expected a value in [1, 3]")]
    Threshold(f64),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Deserialize)]
struct JsonlRecord {
    id: String,
    triples: Vec<(String, String, String)>,
    text: String,
    #[serde(default)]
    gold: Option<GoldLabel>,
    #[serde(default)]
    human_score: Option<f64>,
}

/// Parses canonical JSONL. Blank lines are skipped; errors carry the
/// 1-based line number.
pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<Vec<Example>, IngestError> {
    let mut examples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| IngestError::Jsonl {
            line: line_no,
            message,
        };
        let record: JsonlRecord = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let triples = record
            .triples
            .into_iter()
            .enumerate()
            .map(|(i, (s, p, o))| {
                Triple::new(s, p, o).map_err(|e| err(format!("triples[{i}]: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let example = Example {
            id: record.id,
            triples,
            text: record.text,
            gold: record.gold,
            human_score: record.human_score,
        };
        example.validate().map_err(|e| err(e.to_string()))?;
        examples.push(example);
    }
    Ok(examples)
}

/// Writes examples as canonical JSONL; inverse of [`parse_jsonl`].
pub fn write_jsonl<W: Write>(mut writer: W, examples: &[Example]) -> std::io::Result<()> {
    for example in examples {
        serde_json::to_writer(&mut writer, example)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses `subject | predicate | object` lines. Blank lines are skipped.
pub fn parse_pipe_triples(block: &str) -> Result<Vec<Triple>, IngestError> {
    let mut triples = Vec::new();
    for (idx, line) in block.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        triples.push(parse_pipe_line(line, idx + 1)?);
    }
    Ok(triples)
}

pub(crate) fn parse_pipe_line(line: &str, line_no: usize) -> Result<Triple, IngestError> {
    let fields: Vec<&str> = line.split('|').map(str::trim).collect();
    if fields.len() != 3 {
        return Err(IngestError::TripleArity {
            line: line_no,
            found: fields.len(),
        });
    }
    Triple::new(fields[0], fields[1], fields[2]).map_err(|source| IngestError::TripleField {
        line: line_no,
        source,
    })
}

/// Parses blank-line separated blocks, each holding `subject | predicate |
/// object` lines plus a `text:` line and an optional `id:` line:
///
/// ```text
/// id: e1
/// Blue Spice | eat_type | pub
/// Blue Spice | area | riverside
/// text: You can bring your kids to Blue Spice in the riverside area.
/// ```
///
/// Blocks without an id get `{id_prefix}{n}` with `n` counting from 1.
pub fn parse_triple_blocks(input: &str, id_prefix: &str) -> Result<Vec<Example>, IngestError> {
    let mut examples = Vec::new();
    let mut triples = Vec::new();
    let mut text: Option<String> = None;
    let mut id: Option<String> = None;
    let mut block_start = 1;

    let mut flush = |triples: &mut Vec<Triple>,
                     text: &mut Option<String>,
                     id: &mut Option<String>,
                     start: usize|
     -> Result<(), IngestError> {
        if triples.is_empty() && text.is_none() && id.is_none() {
            return Ok(());
        }
        let err = |message: String| IngestError::Jsonl {
            line: start,
            message,
        };
        let body = text
            .take()
            .ok_or_else(|| err("block has no `text:` line".to_string()))?;
        let n = examples.len() + 1;
        let example = Example::new(
            id.take().unwrap_or_else(|| format!("{id_prefix}{n}")),
            std::mem::take(triples),
            body,
        )
        .map_err(|e| err(e.to_string()))?;
        examples.push(example);
        Ok(())
    };

    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            flush(&mut triples, &mut text, &mut id, block_start)?;
            block_start = line_no + 1;
        } else if let Some(rest) = trimmed.strip_prefix("text:") {
            if text.replace(rest.trim().to_string()).is_some() {
                return Err(IngestError::Jsonl {
                    line: line_no,
                    message: "second `text:` line in block".to_string(),
                });
            }
        } else if let Some(rest) = trimmed.strip_prefix("id:") {
            id = Some(rest.trim().to_string());
        } else {
            triples.push(parse_pipe_line(line, line_no)?);
        }
    }
    flush(&mut triples, &mut text, &mut id, block_start)?;
    Ok(examples)
}

/// Splits `attr[value], attr[value]` into pairs, honoring nested brackets
/// inside values.
fn split_mr_pairs(mr: &str) -> Result<Vec<(String, String)>, String> {
    let mut pairs = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    let mut chunks = Vec::new();
    for (i, c) in mr.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => {
                depth = depth
                    .checked_sub(1)
                    .ok_or_else(|| format!("unbalanced ']' at byte {i}"))?;
            }
            ',' if depth == 0 => {
                chunks.push(&mr[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err("unbalanced '['".to_string());
    }
    chunks.push(&mr[start..]);

    for chunk in chunks {
        let chunk = chunk.trim();
        if chunk.is_empty() {
            continue;
        }
        let open = chunk
            .find('[')
            .ok_or_else(|| format!("pair {chunk:?} has no [value]"))?;
        if !chunk.ends_with(']') {
            return Err(format!("pair {chunk:?} has trailing text after ']'"));
        }
        let attribute = chunk[..open].trim();
        let value = chunk[open + 1..chunk.len() - 1].trim();
        if attribute.is_empty() {
            return Err(format!("pair {chunk:?} has an empty attribute"));
        }
        if value.is_empty() {
            return Err(format!("pair {chunk:?} has an empty value"));
        }
        pairs.push((attribute.to_string(), value.to_string()));
    }
    Ok(pairs)
}

/// Converts an E2E meaning representation into triples with the restaurant
/// name as subject. Attribute names are normalized like registry keys
/// (`eatType` becomes `eat_type`); the `name` pair itself yields no triple.
pub fn parse_e2e_mr(mr: &str) -> Result<Vec<Triple>, IngestError> {
    let fail = |message: String| IngestError::MeaningRepresentation {
        mr: mr.to_string(),
        message,
    };
    let pairs = split_mr_pairs(mr).map_err(fail)?;
    let mut names = pairs.iter().filter(|(a, _)| normalize_key(a) == "name");
    let name = match (names.next(), names.next()) {
        (Some((_, value)), None) => value.clone(),
        (None, _) => return Err(fail("missing name[...] pair".to_string())),
        (Some(_), Some(_)) => return Err(fail("more than one name[...] pair".to_string())),
    };
    pairs
        .iter()
        .filter(|(a, _)| normalize_key(a) != "name")
        .map(|(attribute, value)| {
            Triple::new(name.clone(), normalize_key(attribute), value.clone())
                .map_err(|e| fail(format!("pair {attribute}[{value}]: {e}")))
        })
        .collect()
}

/// Column mapping and threshold for averaged Likert ratings.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsConfig {
    pub score_column: String,
    pub id_column: String,
    pub text_column: String,
    /// Scores at or above the threshold count as OK.
    pub threshold: f64,
}

impl Default for RatingsConfig {
    fn default() -> Self {
        RatingsConfig {
            score_column: "semantics".to_string(),
            id_column: "id".to_string(),
            text_column: "text".to_string(),
            threshold: 2.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rating {
    pub score: f64,
    pub gold: GoldLabel,
    /// Present when the text column exists in the file.
    pub text: Option<String>,
}

/// Maps an averaged rating to a rough gold label; the boundary is OK.
pub fn threshold_label(score: f64, threshold: f64) -> RoughVerdict {
    if score >= threshold {
        RoughVerdict::Ok
    } else {
        RoughVerdict::NotOk
    }
}

/// Reads a ratings CSV (RFC 4180, header row). The id and score columns are
/// required; the text column is optional.
pub fn load_ratings<R: Read>(
    reader: R,
    cfg: &RatingsConfig,
) -> Result<HashMap<String, Rating>, IngestError> {
    if !(1.0..=3.0).contains(&cfg.threshold) {
        return Err(IngestError::Threshold(cfg.threshold));
    }
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = csv.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let id_col = column(&cfg.id_column)?;
    let score_col = column(&cfg.score_column)?;
    let text_col = column(&cfg.text_column).ok();

    let mut ratings = HashMap::new();
    for (idx, record) in csv.records().enumerate() {
        // header is row 1
        let row = idx + 2;
        let record = record?;
        let field = |col: usize| record.get(col).unwrap_or("").trim();
        let id = field(id_col);
        if id.is_empty() {
            return Err(IngestError::Ratings {
                row,
                message: "empty id".to_string(),
            });
        }
        let raw = field(score_col);
        let score: f64 = raw.parse().map_err(|_| IngestError::Ratings {
            row,
            message: format!("cannot parse score {raw:?}"),
        })?;
        if !score.is_finite() {
            return Err(IngestError::Ratings {
                row,
                message: format!("score {raw:?} is not finite"),
            });
        }
        let rating = Rating {
            score,
            gold: GoldLabel::rough(threshold_label(score, cfg.threshold)),
            text: text_col.map(|c| field(c).to_string()),
        };
        if ratings.insert(id.to_string(), rating).is_some() {
            return Err(IngestError::Ratings {
                row,
                message: format!("duplicate id {id:?}"),
            });
        }
    }
    Ok(ratings)
}
