//! Text contracts between generator and verifier: prompt templating,
//! verdict parsing, answer extraction, and answer equivalence.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VrError};
use crate::types::{Message, Verdict, VerdictMode, VerifierOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    GeneratorInitial,
    GeneratorRefine,
    VerifierPlain,
    VerifierTeacher,
}

impl TemplateId {
    pub fn file_name(&self) -> &'static str {
        match self {
            TemplateId::GeneratorInitial => "generator_initial.txt",
            TemplateId::GeneratorRefine => "generator_refine.txt",
            TemplateId::VerifierPlain => "verifier_plain.txt",
            TemplateId::VerifierTeacher => "verifier_teacher.txt",
        }
    }
}

pub const SLOT_STATEMENT: &str = "statement";
pub const SLOT_PRIOR_SOLUTION: &str = "prior_solution";
pub const SLOT_FEEDBACK: &str = "feedback";
pub const SLOT_REFERENCE_SOLUTION: &str = "reference_solution";

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub body: String,
}

/// Slot pattern: `{name}` is required, `{name?}` is optional. A line whose
/// optional slots are all unbound is dropped from the rendered output.
fn slot_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)(\?)?\}").expect("slot regex"))
}

impl PromptTemplate {
    pub fn new(id: TemplateId, body: impl Into<String>) -> Self {
        PromptTemplate { id, body: body.into() }
    }

    /// Slot names referenced by the template body.
    pub fn slots(&self) -> Vec<String> {
        slot_re()
            .captures_iter(&self.body)
            .map(|c| c[1].to_string())
            .collect()
    }

    /// Substitute bindings into the body. Required slots must all be bound;
    /// a line containing an unbound optional slot is dropped entirely.
    /// Substituted values are not re-scanned, so solution text containing
    /// brace patterns cannot inject slots.
    pub fn render(&self, bindings: &BTreeMap<&str, &str>) -> Result<String> {
        let mut out_lines: Vec<String> = Vec::new();
        for line in self.body.lines() {
            let mut drop_line = false;
            let mut err: Option<VrError> = None;
            let rendered = slot_re().replace_all(line, |caps: &regex::Captures<'_>| {
                let name = &caps[1];
                let optional = caps.get(2).is_some();
                match bindings.get(name) {
                    Some(v) => (*v).to_string(),
                    None if optional => {
                        drop_line = true;
                        String::new()
                    }
                    None => {
                        err = Some(VrError::Template(format!(
                            "template {:?}: required slot '{{{}}}' is unbound",
                            self.id, name
                        )));
                        String::new()
                    }
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            if !drop_line {
                out_lines.push(rendered.into_owned());
            }
        }
        Ok(out_lines.join("\n"))
    }
}

/// The four templates a run needs, loadable from a directory of plain-text
/// files (falling back to the built-in defaults per missing file).
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub generator_initial: PromptTemplate,
    pub generator_refine: PromptTemplate,
    pub verifier_plain: PromptTemplate,
    pub verifier_teacher: PromptTemplate,
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        TemplateSet {
            generator_initial: PromptTemplate::new(
                TemplateId::GeneratorInitial,
                include_str!("../templates/generator_initial.txt"),
            ),
            generator_refine: PromptTemplate::new(
                TemplateId::GeneratorRefine,
                include_str!("../templates/generator_refine.txt"),
            ),
            verifier_plain: PromptTemplate::new(
                TemplateId::VerifierPlain,
                include_str!("../templates/verifier_plain.txt"),
            ),
            verifier_teacher: PromptTemplate::new(
                TemplateId::VerifierTeacher,
                include_str!("../templates/verifier_teacher.txt"),
            ),
        }
    }

    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut set = TemplateSet::builtin();
        for (id, slot) in [
            (TemplateId::GeneratorInitial, &mut set.generator_initial),
            (TemplateId::GeneratorRefine, &mut set.generator_refine),
            (TemplateId::VerifierPlain, &mut set.verifier_plain),
            (TemplateId::VerifierTeacher, &mut set.verifier_teacher),
        ] {
            let path = dir.join(id.file_name());
            if path.exists() {
                let body = std::fs::read_to_string(&path).map_err(|e| VrError::io(&path, e))?;
                *slot = PromptTemplate::new(id, body);
            }
        }
        set.validate()?;
        Ok(set)
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        match id {
            TemplateId::GeneratorInitial => &self.generator_initial,
            TemplateId::GeneratorRefine => &self.generator_refine,
            TemplateId::VerifierPlain => &self.verifier_plain,
            TemplateId::VerifierTeacher => &self.verifier_teacher,
        }
    }

    /// The teacher template must carry the reference slot and the plain one
    /// must not; the generator templates must never see a reference slot.
    pub fn validate(&self) -> Result<()> {
        if !self
            .verifier_teacher
            .slots()
            .iter()
            .any(|s| s == SLOT_REFERENCE_SOLUTION)
        {
            return Err(VrError::Template(
                "verifier_teacher template lacks the {reference_solution} slot".into(),
            ));
        }
        for t in [
            &self.verifier_plain,
            &self.generator_initial,
            &self.generator_refine,
        ] {
            if t.slots().iter().any(|s| s == SLOT_REFERENCE_SOLUTION) {
                return Err(VrError::Template(format!(
                    "template {:?} must not contain the {{reference_solution}} slot",
                    t.id
                )));
            }
        }
        Ok(())
    }
}

/// Render a template into the message list sent to an endpoint. The whole
/// rendered body travels as a single user message; instructions live in the
/// template text itself.
pub fn render_prompt(
    templates: &TemplateSet,
    id: TemplateId,
    bindings: &BTreeMap<&str, &str>,
) -> Result<Vec<Message>> {
    let text = templates.get(id).render(bindings)?;
    Ok(vec![Message::user(text)])
}

fn verdict_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // Separators must not cross line boundaries so that feedback stripping
    // (which is line-wise) removes exactly the matching lines.
    RE.get_or_init(|| {
        Regex::new(r"(?i)verdict[^\r\na-zA-Z0-9]{0,10}(?:(?:is|was)[^\r\na-zA-Z0-9]{1,10})?(incorrect|correct)\b")
            .expect("verdict regex")
    })
}

fn score_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?im)^.*?\bscore\b[^\r\n0-9]{0,12}([0-9]*\.?[0-9]+)\s*$").expect("score regex")
    })
}

/// Parse a raw verifier reply into a verdict, feedback, and optional score.
///
/// The verdict is the last case-insensitive "verdict ... CORRECT/INCORRECT"
/// match; with no match the output falls back to reject with the full raw
/// text as feedback, so a garbage reply can never terminate a loop. The
/// feedback strips every verdict-bearing line (not just the last), which
/// keeps the function idempotent on its own feedback output even for
/// self-overturning replies that state a verdict twice.
pub fn parse_verdict(raw: &str) -> VerifierOutput {
    let verdict = verdict_re()
        .captures_iter(raw)
        .last()
        .map(|c| match c[1].to_ascii_lowercase().as_str() {
            "correct" => Verdict::Accept,
            _ => Verdict::Reject,
        });

    let score = score_re()
        .captures_iter(raw)
        .filter_map(|c| c[1].parse::<f64>().ok())
        .filter(|s| (0.0..=1.0).contains(s))
        .last();

    let feedback_text = match verdict {
        Some(_) => raw
            .lines()
            .filter(|l| !verdict_re().is_match(l))
            .collect::<Vec<_>>()
            .join("\n")
            .trim()
            .to_string(),
        None => raw.trim().to_string(),
    };

    VerifierOutput {
        verdict: verdict.unwrap_or(Verdict::Reject),
        feedback: if feedback_text.is_empty() {
            None
        } else {
            Some(feedback_text)
        },
        score,
        raw: raw.to_string(),
        mode: VerdictMode::Model,
    }
}

pub const DEFAULT_FINAL_ANSWER_PATTERN: &str =
    r"(?im)^\s*\**\s*(?:final answer|answer)\s*\**\s*[:=]\s*(.+?)\s*$";

/// Answer extraction and equivalence, with a configurable fallback pattern
/// for solutions that state an answer line instead of a boxed expression.
#[derive(Debug, Clone)]
pub struct AnswerSpec {
    final_answer_re: Regex,
}

impl Default for AnswerSpec {
    fn default() -> Self {
        AnswerSpec::new(DEFAULT_FINAL_ANSWER_PATTERN).expect("default final-answer pattern")
    }
}

impl AnswerSpec {
    pub fn new(final_answer_pattern: &str) -> Result<Self> {
        let final_answer_re = Regex::new(final_answer_pattern).map_err(|e| {
            VrError::Config(format!("invalid final_answer_pattern: {e}"))
        })?;
        if final_answer_re.captures_len() < 2 {
            return Err(VrError::Config(
                "final_answer_pattern needs one capture group for the answer".into(),
            ));
        }
        Ok(AnswerSpec { final_answer_re })
    }

    /// Last `\boxed{...}` expression if present, else the last line matching
    /// the final-answer pattern, else absent.
    pub fn extract_answer(&self, solution: &str) -> Option<String> {
        if let Some(b) = last_boxed(solution) {
            let b = b.trim();
            if !b.is_empty() {
                return Some(b.to_string());
            }
        }
        self.final_answer_re
            .captures_iter(solution)
            .last()
            .and_then(|c| c.get(1))
            .map(|m| m.as_str().trim().to_string())
            .filter(|s| !s.is_empty())
    }
}

/// Find the content of the last well-balanced `\boxed{...}` in `text`.
fn last_boxed(text: &str) -> Option<String> {
    const MARKER: &str = r"\boxed{";
    let mut result = None;
    let mut search_from = 0;
    while let Some(rel) = text[search_from..].find(MARKER) {
        let open = search_from + rel + MARKER.len() - 1; // index of '{'
        if let Some(content) = balanced_brace_content(&text[open..]) {
            result = Some(content);
        }
        search_from = search_from + rel + MARKER.len();
    }
    result
}

/// Given a slice starting at '{', return the content up to the matching '}'.
fn balanced_brace_content(s: &str) -> Option<String> {
    let mut depth = 0usize;
    for (i, ch) in s.char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(s[1..i].to_string());
                }
            }
            _ => {}
        }
    }
    None
}

/// Trait hook for richer equivalence checkers (symbolic math, unit-aware
/// comparison). The engine only depends on this interface.
pub trait AnswerChecker: Send + Sync {
    fn extract(&self, solution: &str) -> Option<String>;
    fn equivalent(&self, a: &str, b: &str) -> bool;

    fn check(&self, solution: &str, gold: &str) -> (Option<String>, bool) {
        let extracted = self.extract(solution);
        let ok = extracted
            .as_deref()
            .map(|a| self.equivalent(a, gold))
            .unwrap_or(false);
        (extracted, ok)
    }
}

impl AnswerChecker for AnswerSpec {
    fn extract(&self, solution: &str) -> Option<String> {
        self.extract_answer(solution)
    }

    fn equivalent(&self, a: &str, b: &str) -> bool {
        answers_equivalent(a, b)
    }
}

/// Conservative answer equivalence: normalize both sides (delimiters, latex
/// spacing, sign/zero canonicalization via the numeric path, whitespace,
/// case), then exact match or numeric comparison at relative tolerance 1e-9.
pub fn answers_equivalent(a: &str, b: &str) -> bool {
    let na = normalize_answer(a);
    let nb = normalize_answer(b);
    if na.is_empty() || nb.is_empty() {
        return na == nb && !na.is_empty();
    }
    if na == nb {
        return true;
    }
    if let (Some(x), Some(y)) = (parse_numeric(&na), parse_numeric(&nb)) {
        let scale = x.abs().max(y.abs()).max(1.0);
        return (x - y).abs() <= 1e-9 * scale;
    }
    false
}

fn normalize_answer(s: &str) -> String {
    let mut t = s.trim().to_string();

    // Peel matched outer delimiters repeatedly: $..$, \(..\), \[..\],
    // \boxed{..}, {..}, (..).
    loop {
        let before = t.clone();
        t = strip_outer_delims(t.trim());
        if t == before {
            break;
        }
    }

    // Latex spacing and wrappers that don't change the value.
    for pat in [r"\left", r"\right", r"\,", r"\;", r"\:", r"\!", r"\quad", r"\qquad", r"\ "] {
        t = t.replace(pat, " ");
    }
    t = t.replace(r"\dfrac", r"\frac").replace(r"\tfrac", r"\frac");
    t = frac_to_slash(&t);
    t = t.replace('\u{2212}', "-"); // unicode minus
    t = t.replace('\u{00D7}', "*");
    t = strip_thousands_separators(&t);

    // Whitespace collapse and case folding.
    let t = t.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut t = t.to_lowercase();

    if let Some(rest) = t.strip_prefix('+') {
        t = rest.to_string();
    }
    t
}

fn strip_outer_delims(t: &str) -> String {
    let pairs: [(&str, &str); 3] = [(r"\(", r"\)"), (r"\[", r"\]"), (r"\boxed{", "}")];
    for (open, close) in pairs {
        if let Some(inner) = t.strip_prefix(open).and_then(|x| x.strip_suffix(close)) {
            // For \boxed{..} the braces must balance inside.
            if open.ends_with('{') {
                if balanced_brace_content(&t[open.len() - 1..])
                    .map(|c| c == inner)
                    .unwrap_or(false)
                {
                    return inner.to_string();
                }
            } else {
                return inner.to_string();
            }
        }
    }
    if t.len() >= 2 && t.starts_with('$') && t.ends_with('$') && !t[1..t.len() - 1].contains('$') {
        return t[1..t.len() - 1].to_string();
    }
    for (open, close) in [('{', '}'), ('(', ')')] {
        if t.starts_with(open) && t.ends_with(close) && wraps_whole(t, open, close) {
            return t[1..t.len() - 1].to_string();
        }
    }
    t.to_string()
}

/// True when the opening delimiter at position 0 closes exactly at the end.
fn wraps_whole(t: &str, open: char, close: char) -> bool {
    let mut depth = 0i64;
    for (i, ch) in t.char_indices() {
        if ch == open {
            depth += 1;
        } else if ch == close {
            depth -= 1;
            if depth == 0 {
                return i == t.len() - ch.len_utf8();
            }
        }
    }
    false
}

/// Rewrite simple `\frac{a}{b}` forms as `a/b` so the numeric path sees them.
fn frac_to_slash(t: &str) -> String {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\\frac\{([^{}]*)\}\{([^{}]*)\}").expect("frac regex"));
    re.replace_all(t, "$1/$2").into_owned()
}

/// Drop commas used as thousands separators (digit,3-digits) without touching
/// tuple separators like "1,2".
fn strip_thousands_separators(t: &str) -> String {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(\d),(\d{3})\b").expect("thousands regex"));
    let mut s = t.to_string();
    loop {
        let next = re.replace_all(&s, "$1$2").into_owned();
        if next == s {
            return s;
        }
        s = next;
    }
}

fn parse_numeric(s: &str) -> Option<f64> {
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    // Simple fraction a/b.
    let (num, den) = s.split_once('/')?;
    let n = num.trim().parse::<f64>().ok()?;
    let d = den.trim().parse::<f64>().ok()?;
    if d == 0.0 || !n.is_finite() || !d.is_finite() {
        return None;
    }
    let v = n / d;
    v.is_finite().then_some(v)
}
