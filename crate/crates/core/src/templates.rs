//! Turning triples into sentences.
//!
//! A [`TemplateRegistry`] maps normalized predicate keys to lists of
//! patterns with `<subject>` and `<object>` placeholders. Lookups never fail:
//! predicates without a usable pattern fall through to the universal backoff
//! sentence `The <predicate> of <subject> is <object>.`
//!
//! Patterns are either handcrafted (see [`TemplateRegistry::e2e_default`]) or
//! extracted from single-triple references by delexicalization
//! ([`extract_templates`]).

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Fact, Triple};

pub const SUBJECT_SLOT: &str = "<subject>";
pub const OBJECT_SLOT: &str = "<object>";
pub const BACKOFF_TEMPLATE_ID: &str = "backoff";

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("pattern is empty")]
    EmptyPattern,
    #[error("pattern {pattern:?} contains {slot} more than once")]
    RepeatedSlot { pattern: String, slot: &'static str },
    #[error("pattern {0:?} has no <subject> placeholder")]
    MissingSubject(String),
    #[error("pattern {0:?} contains a tab or line break")]
    ControlCharacter(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How the backoff sentence spells the predicate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackoffStyle {
    /// `numberOfPages` becomes `number of pages`.
    #[default]
    Humanized,
    /// The predicate identifier is inserted verbatim.
    Raw,
}

/// Splits a predicate identifier into lowercase words on camelCase
/// boundaries and on every non-alphanumeric character.
fn predicate_words(predicate: &str) -> Vec<String> {
    let chars: Vec<char> = predicate.chars().collect();
    let mut words = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if !c.is_alphanumeric() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            continue;
        }
        if c.is_uppercase() && !current.is_empty() {
            let prev = chars[i - 1];
            let next_is_lower = chars.get(i + 1).is_some_and(|n| n.is_lowercase());
            if prev.is_lowercase() || prev.is_numeric() || (prev.is_uppercase() && next_is_lower) {
                words.push(std::mem::take(&mut current));
            }
        }
        current.extend(c.to_lowercase());
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Registry key for a predicate: `eatType`, `eat_type` and `eat type` all
/// map to `eat_type`.
pub fn normalize_key(predicate: &str) -> String {
    let words = predicate_words(predicate);
    if words.is_empty() {
        predicate.trim().to_lowercase()
    } else {
        words.join("_")
    }
}

/// Readable form of a predicate for the backoff sentence.
pub fn humanize(predicate: &str) -> String {
    let words = predicate_words(predicate);
    if words.is_empty() {
        predicate.trim().to_string()
    } else {
        words.join(" ")
    }
}

/// Trims trailing whitespace and periods, then appends a single period.
fn finish_sentence(text: &str) -> String {
    let mut out = text.trim_end().trim_end_matches('.').trim_end().to_string();
    out.push('.');
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    /// Normalized predicate key.
    pub predicate: String,
    /// When set, the template only applies to triples with this object value
    /// (compared case-insensitively).
    pub object_guard: Option<String>,
    pub pattern: String,
}

impl Template {
    fn validate(pattern: &str, allow_subject_free: bool) -> Result<(), TemplateError> {
        if pattern.trim().trim_end_matches('.').trim().is_empty() {
            return Err(TemplateError::EmptyPattern);
        }
        if pattern.contains(['\t', '\n', '\r']) {
            return Err(TemplateError::ControlCharacter(pattern.to_string()));
        }
        for slot in [SUBJECT_SLOT, OBJECT_SLOT] {
            if pattern.matches(slot).count() > 1 {
                return Err(TemplateError::RepeatedSlot {
                    pattern: pattern.to_string(),
                    slot,
                });
            }
        }
        if !allow_subject_free && !pattern.contains(SUBJECT_SLOT) {
            return Err(TemplateError::MissingSubject(pattern.to_string()));
        }
        Ok(())
    }

    pub fn is_subject_free(&self) -> bool {
        !self.pattern.contains(SUBJECT_SLOT)
    }

    pub fn applies_to(&self, object: &str) -> bool {
        match &self.object_guard {
            None => true,
            Some(guard) => guard.trim().to_lowercase() == object.trim().to_lowercase(),
        }
    }

    /// Substitutes both placeholders in a single left-to-right pass, so
    /// placeholder-like text inside values is never expanded again.
    pub fn fill(&self, subject: &str, object: &str) -> String {
        let mut out = String::with_capacity(self.pattern.len() + subject.len() + object.len());
        let mut rest = self.pattern.as_str();
        loop {
            let next = [(SUBJECT_SLOT, subject), (OBJECT_SLOT, object)]
                .into_iter()
                .filter_map(|(slot, value)| rest.find(slot).map(|at| (at, slot, value)))
                .min_by_key(|&(at, _, _)| at);
            match next {
                Some((at, slot, value)) => {
                    out.push_str(&rest[..at]);
                    out.push_str(value);
                    rest = &rest[at + slot.len()..];
                }
                None => {
                    out.push_str(rest);
                    break;
                }
            }
        }
        finish_sentence(&out)
    }
}

/// Position of a triple inside a run, used to derive a reproducible template
/// choice independent of evaluation order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SelectionKey {
    pub example: u64,
    pub position: u64,
}

/// Per-predicate template lists plus the seed that drives selection.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, Vec<Template>>,
    seed: u64,
    backoff_style: BackoffStyle,
    allow_subject_free: bool,
}

impl TemplateRegistry {
    pub fn new(seed: u64) -> Self {
        TemplateRegistry {
            seed,
            ..Default::default()
        }
    }

    /// The eight handcrafted E2E templates.
    pub fn e2e_default(seed: u64) -> Self {
        let mut reg = TemplateRegistry::new(seed);
        let entries: [(&str, Option<&str>, &str); 8] = [
            ("eat_type", None, "<subject> is a <object>."),
            ("food", None, "<subject> serves <object>."),
            (
                "price_range",
                None,
                "<subject> is in the <object> price range.",
            ),
            (
                "customer_rating",
                None,
                "<subject> has <object> customer rating.",
            ),
            ("area", None, "<subject> is located in the <object>."),
            (
                "family_friendly",
                Some("yes"),
                "<subject> is family-friendly.",
            ),
            (
                "family_friendly",
                Some("no"),
                "<subject> is not family-friendly.",
            ),
            ("near", None, "<subject> is located near <object>."),
        ];
        for (predicate, guard, pattern) in entries {
            reg.insert(predicate, guard, pattern)
                .expect("built-in templates are valid");
        }
        reg
    }

    pub fn with_backoff_style(mut self, style: BackoffStyle) -> Self {
        self.backoff_style = style;
        self
    }

    /// Accept patterns without a `<subject>` placeholder.
    pub fn with_subject_free(mut self, allow: bool) -> Self {
        self.allow_subject_free = allow;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn backoff_style(&self) -> BackoffStyle {
        self.backoff_style
    }

    pub fn insert(
        &mut self,
        predicate: &str,
        object_guard: Option<&str>,
        pattern: &str,
    ) -> Result<&Template, TemplateError> {
        Template::validate(pattern, self.allow_subject_free)?;
        let key = normalize_key(predicate);
        let list = self.templates.entry(key.clone()).or_default();
        list.push(Template {
            id: format!("{key}/{}", list.len()),
            predicate: key,
            object_guard: object_guard.map(str::to_string),
            pattern: pattern.to_string(),
        });
        Ok(list.last().expect("just pushed"))
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// Number of templates across all predicates.
    pub fn len(&self) -> usize {
        self.templates.values().map(Vec::len).sum()
    }

    pub fn predicates(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn templates_for(&self, predicate: &str) -> &[Template] {
        self.templates
            .get(&normalize_key(predicate))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Picks the template for `triple`, or `None` when the backoff applies.
    pub fn select(&self, triple: &Triple, key: SelectionKey) -> Option<&Template> {
        let candidates: Vec<&Template> = self
            .templates_for(triple.predicate())
            .iter()
            .filter(|t| t.applies_to(triple.object()))
            .collect();
        match candidates.len() {
            0 => None,
            1 => Some(candidates[0]),
            n => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(key.example);
                rng.set_word_pos(u128::from(key.position) * 16);
                Some(candidates[rng.gen_range(0..n)])
            }
        }
    }

    /// Renders with the selection key of the first triple of the first example.
    pub fn render(&self, triple: &Triple) -> Fact {
        self.render_at(triple, SelectionKey::default())
    }

    pub fn render_at(&self, triple: &Triple, key: SelectionKey) -> Fact {
        match self.select(triple, key) {
            Some(template) => Fact {
                text: template.fill(triple.subject(), triple.object()),
                source: triple.clone(),
                template_id: template.id.clone(),
                used_backoff: false,
            },
            None => render_backoff_with(triple, self.backoff_style),
        }
    }

    /// Reads the line-oriented registry format:
    /// `predicate<TAB>[object_guard<TAB>]pattern`, `#` starts a comment.
    /// Repeated predicates append to the same list in file order.
    pub fn load<R: BufRead>(reader: R, seed: u64) -> Result<Self, TemplateError> {
        let mut reg = TemplateRegistry::new(seed).with_subject_free(true);
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let line_no = idx + 1;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let (predicate, guard, pattern) = match fields.as_slice() {
                [p, pat] => (*p, None, *pat),
                [p, g, pat] => (*p, Some(*g), *pat),
                _ => {
                    return Err(TemplateError::Parse {
                        line: line_no,
                        message: format!(
                            "expected 2 or 3 tab-separated fields, got {}",
                            fields.len()
                        ),
                    })
                }
            };
            if predicate.trim().is_empty() {
                return Err(TemplateError::Parse {
                    line: line_no,
                    message: "empty predicate".to_string(),
                });
            }
            if guard.is_some_and(|g| g.trim().is_empty()) {
                return Err(TemplateError::Parse {
                    line: line_no,
                    message: "empty object guard".to_string(),
                });
            }
            reg.insert(predicate, guard, pattern)
                .map_err(|e| TemplateError::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
        }
        reg.allow_subject_free = false;
        Ok(reg)
    }

    pub fn save<W: Write>(&self, mut writer: W) -> Result<(), TemplateError> {
        writeln!(writer, "# predicate\t[object_guard\t]pattern")?;
        for template in self.templates.values().flatten() {
            match &template.object_guard {
                Some(guard) => writeln!(
                    writer,
                    "{}\t{}\t{}",
                    template.predicate, guard, template.pattern
                )?,
                None => writeln!(writer, "{}\t{}", template.predicate, template.pattern)?,
            }
        }
        Ok(())
    }
}

/// The universal `The <predicate> of <subject> is <object>.` sentence with a
/// humanized predicate.
pub fn render_backoff(triple: &Triple) -> Fact {
    render_backoff_with(triple, BackoffStyle::Humanized)
}

pub fn render_backoff_with(triple: &Triple, style: BackoffStyle) -> Fact {
    let predicate = match style {
        BackoffStyle::Humanized => humanize(triple.predicate()),
        BackoffStyle::Raw => triple.predicate().to_string(),
    };
    let text = format!(
        "The {} of {} is {}",
        predicate,
        triple.subject(),
        triple.object()
    );
    Fact {
        text: finish_sentence(&text),
        source: triple.clone(),
        template_id: BACKOFF_TEMPLATE_ID.to_string(),
        used_backoff: true,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ExtractionStats {
    pub kept: usize,
    pub discarded: usize,
    pub predicates: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExtractionOptions {
    pub seed: u64,
    /// Keep patterns whose reference never mentions the subject.
    pub keep_subject_free: bool,
}

/// Case-insensitive search for `needle` in `haystack[from..to]`, comparing
/// char by char so byte offsets stay valid for the original string.
fn find_ci(haystack: &str, needle: &str, from: usize, to: usize) -> Option<(usize, usize)> {
    let needle: Vec<char> = needle.chars().collect();
    if needle.is_empty() {
        return None;
    }
    let window = &haystack[from..to];
    for (start, _) in window.char_indices() {
        let mut hay = window[start..].char_indices();
        let mut end = start;
        let mut matched = true;
        for n in &needle {
            match hay.next() {
                Some((off, h)) if h.to_lowercase().eq(n.to_lowercase()) => {
                    end = start + off + h.len_utf8();
                }
                _ => {
                    matched = false;
                    break;
                }
            }
        }
        if matched {
            return Some((from + start, from + end));
        }
    }
    None
}

/// First match of `needle` that does not overlap `taken`.
fn find_outside(
    haystack: &str,
    needle: &str,
    taken: Option<(usize, usize)>,
) -> Option<(usize, usize)> {
    match taken {
        None => find_ci(haystack, needle, 0, haystack.len()),
        Some((a, b)) => {
            find_ci(haystack, needle, 0, a).or_else(|| find_ci(haystack, needle, b, haystack.len()))
        }
    }
}

/// Replaces the first occurrence of the subject and object surface forms in
/// `reference` with placeholders. The longer form is matched first so that
/// e.g. `Aenir Press` is not split by a match on `Aenir`.
///
/// Returns `None` when the object (or, unless `keep_subject_free`, the
/// subject) is missing from the reference.
pub fn delexicalize(triple: &Triple, reference: &str, keep_subject_free: bool) -> Option<String> {
    let reference = reference.replace(['\t', '\n', '\r'], " ");
    let subject = triple.subject().trim();
    let object = triple.object().trim();

    let subject_first = subject.chars().count() >= object.chars().count();
    let (subject_span, object_span) = if subject_first {
        let s = find_outside(&reference, subject, None);
        let o = find_outside(&reference, object, s);
        (s, o)
    } else {
        let o = find_outside(&reference, object, None);
        let s = find_outside(&reference, subject, o);
        (s, o)
    };
    let object_span = object_span?;
    if subject_span.is_none() && !keep_subject_free {
        return None;
    }

    let mut spans = vec![(object_span, OBJECT_SLOT)];
    if let Some(s) = subject_span {
        spans.push((s, SUBJECT_SLOT));
    }
    spans.sort_by_key(|&((start, _), _)| std::cmp::Reverse(start));
    let mut pattern = reference;
    for ((start, end), slot) in spans {
        pattern.replace_range(start..end, slot);
    }
    Some(pattern)
}

/// Builds a registry from `(triple, reference)` pairs by delexicalizing each
/// reference. Every kept pattern is retained; selection among several
/// patterns for one predicate happens at render time.
pub fn extract_templates<'a, I>(
    corpus: I,
    options: ExtractionOptions,
) -> (TemplateRegistry, ExtractionStats)
where
    I: IntoIterator<Item = (&'a Triple, &'a str)>,
{
    let mut reg = TemplateRegistry::new(options.seed).with_subject_free(options.keep_subject_free);
    let mut stats = ExtractionStats::default();
    for (triple, reference) in corpus {
        let inserted = delexicalize(triple, reference, options.keep_subject_free)
            .map(|pattern| reg.insert(triple.predicate(), None, &pattern).is_ok())
            .unwrap_or(false);
        if inserted {
            stats.kept += 1;
        } else {
            stats.discarded += 1;
        }
    }
    stats.predicates = reg.templates.len();
    reg.allow_subject_free = false;
    (reg, stats)
}
