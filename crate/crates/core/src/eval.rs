//! Scoring of model outputs on the four tasks.
//!
//! Conventions:
//! - Boxes use half-open area, `width = x_max - x_min`, on both sides.
//! - Grounding matches predictions to ground truth one-to-one, greedily by
//!   descending IoU, only between same-category pairs. IoU ties go to the
//!   lower ground-truth index, then the lower prediction index.
//! - Without confidences, per-class AP degenerates to precision at the single
//!   operating point; the report flags this.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instruct::{decode_box, InstructionRecord, NormBox, Task, VqaCategory};
use crate::scene::ThreatCategory;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("ids not present in ground truth: {0:?}")]
    IdMismatch(Vec<String>),
    #[error("writing report: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("serializing report: {0}")]
    Json(#[from] serde_json::Error),
}

/// Case-insensitive, word-bounded matcher over a label vocabulary and its
/// aliases. Longer terms win, so "nail cutter" never also yields "cutter".
#[derive(Debug, Clone)]
pub struct LabelMatcher {
    re: Regex,
    terms: BTreeMap<String, ThreatCategory>,
}

impl LabelMatcher {
    pub fn new(vocab: &[ThreatCategory]) -> Self {
        let mut terms = BTreeMap::new();
        for &c in vocab {
            terms.insert(c.label().to_string(), c);
            for a in c.aliases() {
                terms.insert(a.to_string(), c);
            }
        }
        let mut keys: Vec<&String> = terms.keys().collect();
        keys.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        let alternation = keys
            .iter()
            .map(|k| {
                // Let a space in a term also match a hyphen or repeated spaces.
                regex::escape(k).replace("\\-", "[-\\s]").replace(' ', "[-\\s]+")
            })
            .collect::<Vec<_>>()
            .join("|");
        let re = Regex::new(&format!(r"(?i)(?:^|[^\p{{Alphabetic}}\p{{N}}])({alternation})(?:$|[^\p{{Alphabetic}}\p{{N}}])"))
            .expect("valid label regex");
        LabelMatcher { re, terms }
    }

    fn resolve(&self, matched: &str) -> Option<ThreatCategory> {
        let norm: String = matched
            .to_lowercase()
            .split(|c: char| c.is_whitespace() || c == '-')
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        self.terms
            .iter()
            .find(|(k, _)| k.replace('-', " ") == norm)
            .map(|(_, c)| *c)
    }

    /// Categories in order of first appearance.
    pub fn find_all(&self, text: &str) -> Vec<ThreatCategory> {
        let mut out = Vec::new();
        let mut pos = 0;
        while pos <= text.len() {
            let Some(caps) = self.re.captures_at(text, pos) else {
                break;
            };
            let m = caps.get(1).expect("group");
            if let Some(c) = self.resolve(m.as_str()) {
                if !out.contains(&c) {
                    out.push(c);
                }
            }
            // Continue right after the term so a shared separator can bound the next one.
            pos = m.end();
        }
        out
    }
}

/// Result of lenient label parsing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedLabels {
    pub labels: BTreeSet<ThreatCategory>,
    /// No vocabulary term was found.
    pub unparsed: bool,
}

pub fn parse_labels(text: &str, vocab: &[ThreatCategory]) -> ParsedLabels {
    let labels: BTreeSet<_> = LabelMatcher::new(vocab).find_all(text).into_iter().collect();
    ParsedLabels {
        unparsed: labels.is_empty(),
        labels,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub map: f64,
    /// True when no confidences were supplied and mAP is single-point precision.
    pub map_degenerate: bool,
    pub images: usize,
}

/// One image's prediction for multi-label scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelPrediction {
    pub id: String,
    pub labels: BTreeSet<ThreatCategory>,
    pub confidences: Option<BTreeMap<ThreatCategory, f64>>,
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    2.0 * p * r / (p + r)
}

/// Non-interpolated average precision of a ranked relevance list.
fn average_precision(ranked: &[bool], positives: usize) -> f64 {
    if positives == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, rel) in ranked.iter().enumerate() {
        if *rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    sum / positives as f64
}

pub fn score_multilabel(
    preds: &[LabelPrediction],
    gts: &BTreeMap<String, BTreeSet<ThreatCategory>>,
    vocab: &[ThreatCategory],
) -> Result<SceneMetrics, EvalError> {
    let unknown: Vec<String> = preds.iter().filter(|p| !gts.contains_key(&p.id)).map(|p| p.id.clone()).collect();
    if !unknown.is_empty() {
        return Err(EvalError::IdMismatch(unknown));
    }
    let by_id: BTreeMap<&str, &LabelPrediction> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    let empty = BTreeSet::new();
    let mut totals = (0usize, 0usize, 0usize);
    let mut macro_sum = 0.0;
    let mut macro_n = 0usize;
    let mut ap_sum = 0.0;
    let mut ap_n = 0usize;
    let degenerate = preds.iter().all(|p| p.confidences.is_none());
    for &class in vocab {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        // (score, relevant) per image for the ranked list.
        let mut scored: Vec<(f64, bool, &str)> = Vec::new();
        for (id, gt) in gts {
            let pred = by_id.get(id.as_str());
            let predicted = pred.map(|p| &p.labels).unwrap_or(&empty).contains(&class);
            let actual = gt.contains(&class);
            match (predicted, actual) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
            let score = pred
                .and_then(|p| p.confidences.as_ref())
                .and_then(|c| c.get(&class).copied())
                .unwrap_or(if predicted { 1.0 } else { 0.0 });
            scored.push((score, actual, id.as_str()));
        }
        totals.0 += tp;
        totals.1 += fp;
        totals.2 += fn_;
        if tp + fp + fn_ == 0 {
            continue;
        }
        macro_sum += f1(tp, fp, fn_);
        macro_n += 1;
        let positives = tp + fn_;
        if degenerate {
            if tp + fp + fn_ > 0 {
                ap_sum += if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
                ap_n += 1;
            }
        } else if positives > 0 {
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(b.2)));
            let ranked: Vec<bool> = scored.iter().map(|s| s.1).collect();
            ap_sum += average_precision(&ranked, positives);
            ap_n += 1;
        }
    }
    Ok(SceneMetrics {
        micro_f1: f1(totals.0, totals.1, totals.2),
        macro_f1: if macro_n == 0 { 0.0 } else { macro_sum / macro_n as f64 },
        map: if ap_n == 0 { 0.0 } else { ap_sum / ap_n as f64 },
        map_degenerate: degenerate,
        images: gts.len(),
    })
}

/// IoU with half-open area.
pub fn iou(a: &NormBox, b: &NormBox) -> f64 {
    let area = |b: &NormBox| (b.x_max - b.x_min) as f64 * (b.y_max - b.y_min) as f64;
    let iw = (a.x_max.min(b.x_max) as f64 - a.x_min.max(b.x_min) as f64).max(0.0);
    let ih = (a.y_max.min(b.y_max) as f64 - a.y_min.max(b.y_min) as f64).max(0.0);
    let inter = iw * ih;
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        // Both degenerate: identical boxes still agree perfectly.
        return if a == b { 1.0 } else { 0.0 };
    }
    inter / union
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundedParse {
    pub spans: Vec<(String, NormBox)>,
    pub malformed: usize,
    pub clamped: usize,
}

fn box_group_regex() -> Regex {
    Regex::new(r"\{\s*<\s*(\d+)\s*>\s*<\s*(\d+)\s*>\s*<\s*(\d+)\s*>\s*<\s*(\d+)\s*>\s*\}").expect("box regex")
}

fn lenient_box(caps: &regex::Captures<'_>, clamped: &mut usize) -> Option<NormBox> {
    let mut v = [0u32; 4];
    let mut flagged = false;
    for (i, slot) in v.iter_mut().enumerate() {
        let raw: u64 = caps[i + 1].parse().unwrap_or(u64::MAX);
        if raw > 100 {
            flagged = true;
        }
        *slot = raw.min(100) as u32;
    }
    if flagged {
        *clamped += 1;
    }
    NormBox::new(v[0], v[1], v[2], v[3]).ok()
}

/// Scan `<p>phrase</p>` spans, each followed by a box-token group.
///
/// Spans without a well-formed group, or whose box is inverted, are counted
/// as malformed and skipped. Out-of-range integers are clamped into
/// `[0, 100]` and counted.
pub fn parse_grounded(text: &str) -> GroundedParse {
    let span_re = Regex::new(r"(?s)<p>(.*?)</p>").expect("span regex");
    let box_re = box_group_regex();
    let mut out = GroundedParse::default();
    for caps in span_re.captures_iter(text) {
        let phrase = caps[1].trim().to_string();
        let rest = &text[caps.get(0).expect("match").end()..];
        let trimmed = rest.trim_start();
        let parsed = box_re
            .captures(trimmed)
            .filter(|c| c.get(0).expect("match").start() == 0)
            .and_then(|c| lenient_box(&c, &mut out.clamped));
        match parsed {
            Some(b) => out.spans.push((phrase, b)),
            None => out.malformed += 1,
        }
    }
    out
}

/// First box-token group anywhere in `text` (referring responses).
pub fn parse_first_box(text: &str) -> (Option<NormBox>, usize) {
    let mut clamped = 0;
    let b = box_group_regex().captures(text).and_then(|c| lenient_box(&c, &mut clamped));
    (b, clamped)
}

/// Which accuracy split an evaluated image belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundingKind {
    Grounding,
    Referring,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingCase {
    pub id: String,
    pub kind: GroundingKind,
    pub gts: Vec<(ThreatCategory, NormBox)>,
    /// Predicted boxes with the category their phrase resolved to, if any.
    pub preds: Vec<(Option<ThreatCategory>, NormBox)>,
}

/// Greedy one-to-one matching; returns the number of ground-truth hits at `tau`.
pub fn match_hits(case: &GroundingCase, tau: f64) -> usize {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (gi, (gc, gb)) in case.gts.iter().enumerate() {
        for (pi, (pc, pb)) in case.preds.iter().enumerate() {
            if *pc == Some(*gc) {
                let v = iou(gb, pb);
                if v >= tau {
                    pairs.push((v, gi, pi));
                }
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut gt_used = vec![false; case.gts.len()];
    let mut pred_used = vec![false; case.preds.len()];
    let mut hits = 0;
    for (_, gi, pi) in pairs {
        if !gt_used[gi] && !pred_used[pi] {
            gt_used[gi] = true;
            pred_used[pi] = true;
            hits += 1;
        }
    }
    hits
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccSplit {
    /// Ground-truth instances in the split.
    pub instances: usize,
    #[serde(rename = "acc@0.5")]
    pub acc_50: Option<f64>,
    #[serde(rename = "acc@0.25")]
    pub acc_25: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundingMetrics {
    pub single_object: AccSplit,
    pub multi_object: AccSplit,
    pub referring: AccSplit,
    pub overall: AccSplit,
}

impl GroundingMetrics {
    pub fn splits(&self) -> [(&'static str, &AccSplit); 4] {
        [
            ("single_object", &self.single_object),
            ("multi_object", &self.multi_object),
            ("referring", &self.referring),
            ("overall", &self.overall),
        ]
    }
}

/// Accuracy at `tau` over a set of cases: hits / ground-truth instances.
pub fn grounding_acc(cases: &[GroundingCase], tau: f64) -> Option<f64> {
    let total: usize = cases.iter().map(|c| c.gts.len()).sum();
    if total == 0 {
        return None;
    }
    let hits: usize = cases.iter().map(|c| match_hits(c, tau)).sum();
    Some(hits as f64 / total as f64)
}

pub fn score_grounding(cases: &[GroundingCase]) -> GroundingMetrics {
    let split = |sel: &dyn Fn(&GroundingCase) -> bool| {
        let chosen: Vec<GroundingCase> = cases.iter().filter(|c| sel(c)).cloned().collect();
        AccSplit {
            instances: chosen.iter().map(|c| c.gts.len()).sum(),
            acc_50: grounding_acc(&chosen, 0.5),
            acc_25: grounding_acc(&chosen, 0.25),
        }
    };
    GroundingMetrics {
        single_object: split(&|c| c.kind == GroundingKind::Grounding && c.gts.len() == 1),
        multi_object: split(&|c| c.kind == GroundingKind::Grounding && c.gts.len() > 1),
        referring: split(&|c| c.kind == GroundingKind::Referring),
        overall: split(&|_| true),
    }
}

/// Extract the chosen option letter.
///
/// The first rule looks for standalone `A`-`D` tokens; exactly one distinct
/// letter must appear. Otherwise, if exactly one option's text occurs in the
/// response, its letter is used. Anything else is unparsed.
pub fn extract_choice(response: &str, options: &[String]) -> Option<char> {
    let re = Regex::new(r"\b([A-D])\b").expect("letter regex");
    let letters: BTreeSet<char> = re
        .captures_iter(response)
        .filter_map(|c| c[1].chars().next())
        .filter(|l| ((*l as u8 - b'A') as usize) < options.len().max(1))
        .collect();
    if letters.len() == 1 {
        return letters.into_iter().next();
    }
    if !letters.is_empty() {
        return None;
    }
    let lower = response.to_lowercase();
    let hits: Vec<usize> = options
        .iter()
        .enumerate()
        .filter(|(_, o)| !o.is_empty() && lower.contains(&o.to_lowercase()))
        .map(|(i, _)| i)
        .collect();
    match hits.as_slice() {
        [one] => Some((b'A' + *one as u8) as char),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaCase {
    pub id: String,
    pub category: VqaCategory,
    pub options: Vec<String>,
    pub correct: char,
    pub response: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VqaMetrics {
    /// Accuracy per category, keyed by category name; `None` when absent.
    pub per_category: BTreeMap<VqaCategory, Option<f64>>,
    pub overall: Option<f64>,
    pub questions: usize,
}

pub fn vqa_score(cases: &[VqaCase]) -> (VqaMetrics, usize) {
    let mut correct: BTreeMap<VqaCategory, (usize, usize)> = VqaCategory::ALL.iter().map(|c| (*c, (0, 0))).collect();
    let mut unparsed = 0;
    for case in cases {
        let choice = case.response.as_deref().and_then(|r| extract_choice(r, &case.options));
        if choice.is_none() {
            unparsed += 1;
        }
        let e = correct.get_mut(&case.category).expect("all categories present");
        e.1 += 1;
        if choice == Some(case.correct) {
            e.0 += 1;
        }
    }
    let total: usize = correct.values().map(|v| v.1).sum();
    let hits: usize = correct.values().map(|v| v.0).sum();
    (
        VqaMetrics {
            per_category: correct
                .into_iter()
                .map(|(k, (h, n))| (k, (n > 0).then(|| h as f64 / n as f64)))
                .collect(),
            overall: (total > 0).then(|| hits as f64 / total as f64),
            questions: total,
        },
        unparsed,
    )
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseFailures {
    /// Ground-truth items with no prediction line.
    pub missing: usize,
    pub scene_unparsed: usize,
    pub grounding_malformed: usize,
    pub grounding_clamped: usize,
    pub vqa_unparsed: usize,
    /// Items that could have been parsed (denominator for the rates above).
    pub evaluated: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grounding: Option<GroundingMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vqa: Option<VqaMetrics>,
    pub parse_failures: ParseFailures,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_else(|| "-".into())
}

impl EvalReport {
    /// Every metric present lies in `[0, 1]` and `acc@0.5 <= acc@0.25`.
    pub fn is_consistent(&self) -> bool {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let scene_ok = self
            .scene
            .as_ref()
            .is_none_or(|s| unit(s.micro_f1) && unit(s.macro_f1) && unit(s.map));
        let grounding_ok = self.grounding.as_ref().is_none_or(|g| {
            g.splits().iter().all(|(_, s)| match (s.acc_50, s.acc_25) {
                (Some(a), Some(b)) => unit(a) && unit(b) && a <= b,
                (None, None) => true,
                _ => false,
            })
        });
        let vqa_ok = self
            .vqa
            .as_ref()
            .is_none_or(|v| v.per_category.values().flatten().chain(v.overall.iter()).all(|x| unit(*x)));
        scene_ok && grounding_ok && vqa_ok
    }

    /// Markdown tables in a fixed column order (values in percent).
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("# Evaluation report\n");
        if let Some(sc) = &self.scene {
            s.push_str("\n## Scene comprehension\n\n| Images | Micro-F1 | Macro-F1 | mAP |\n|---|---|---|---|\n");
            let _ = writeln!(
                s,
                "| {} | {} | {} | {}{} |",
                sc.images,
                cell(Some(sc.micro_f1)),
                cell(Some(sc.macro_f1)),
                cell(Some(sc.map)),
                if sc.map_degenerate { " (single-point)" } else { "" }
            );
        }
        if let Some(g) = &self.grounding {
            s.push_str("\n## Grounding and referring localization\n\n| Split | Instances | acc@0.5 | acc@0.25 |\n|---|---|---|---|\n");
            for (name, split) in g.splits() {
                let _ = writeln!(s, "| {name} | {} | {} | {} |", split.instances, cell(split.acc_50), cell(split.acc_25));
            }
        }
        if let Some(v) = &self.vqa {
            s.push_str("\n## VQA\n\n|");
            for c in VqaCategory::ALL {
                let _ = write!(s, " {} |", c.title());
            }
            s.push_str(" Overall |\n|");
            for _ in 0..=VqaCategory::ALL.len() {
                s.push_str("---|");
            }
            s.push_str("\n|");
            for c in VqaCategory::ALL {
                let _ = write!(s, " {} |", cell(v.per_category.get(&c).copied().flatten()));
            }
            let _ = writeln!(s, " {} |", cell(v.overall));
        }
        let p = &self.parse_failures;
        let _ = write!(
            s,
            "\n## Parse failures\n\n| Evaluated | Missing | Scene unparsed | Grounding malformed | Grounding clamped | VQA unparsed |\n|---|---|---|---|---|---|\n| {} | {} | {} | {} | {} | {} |\n",
            p.evaluated, p.missing, p.scene_unparsed, p.grounding_malformed, p.grounding_clamped, p.vqa_unparsed
        );
        s
    }

    /// Write `report.json` and `report.md` into `dir`.
    pub fn emit(&self, dir: &Path) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join("report.json"), json + "\n")?;
        std::fs::write(dir.join("report.md"), self.to_markdown())?;
        Ok(())
    }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Instruction record id.
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    pub text: String,
    /// Per-class scores keyed by label id (`"gun"`, `"3d_printed_gun"`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidences: Option<BTreeMap<String, f64>>,
}

fn phrase_category(matcher: &LabelMatcher, phrase: &str) -> Option<ThreatCategory> {
    matcher.find_all(phrase).into_iter().next()
}

fn refer_query(human: &str) -> Option<&str> {
    let s = human.find("<p>")? + 3;
    let e = human[s..].find("</p>")? + s;
    Some(&human[s..e])
}

/// Score `preds` against the instruction records they answer.
///
/// Ground truth is read back from the records themselves: label lists,
/// grounded captions, referring boxes and answer keys. Records without a
/// prediction count as missing and score as wrong.
pub fn evaluate(gt: &[InstructionRecord], preds: &[Prediction]) -> Result<EvalReport, EvalError> {
    let by_id: BTreeMap<&str, &InstructionRecord> = gt.iter().map(|r| (r.id.as_str(), r)).collect();
    let unknown: Vec<String> = preds.iter().filter(|p| !by_id.contains_key(p.id.as_str())).map(|p| p.id.clone()).collect();
    if !unknown.is_empty() {
        return Err(EvalError::IdMismatch(unknown));
    }
    let answers: BTreeMap<&str, &Prediction> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    let vocab = ThreatCategory::vocabulary();
    let matcher = LabelMatcher::new(&vocab);
    let mut report = EvalReport::default();
    let failures = &mut report.parse_failures;

    let mut scene_gts = BTreeMap::new();
    let mut scene_preds = Vec::new();
    let mut grounding = Vec::new();
    let mut vqa = Vec::new();
    for (id, rec) in &by_id {
        failures.evaluated += 1;
        let pred = answers.get(id);
        if pred.is_none() {
            failures.missing += 1;
        }
        let text = pred.map(|p| p.text.as_str());
        match rec.task {
            Task::Scene => {
                scene_gts.insert(id.to_string(), matcher.find_all(rec.assistant()).into_iter().collect());
                let parsed = text.map(|t| parse_labels(t, &vocab));
                if parsed.as_ref().is_some_and(|p| p.unparsed) {
                    failures.scene_unparsed += 1;
                }
                let confidences = pred.and_then(|p| p.confidences.as_ref()).map(|c| {
                    c.iter().filter_map(|(k, v)| ThreatCategory::from_id(k).map(|cat| (cat, *v))).collect()
                });
                scene_preds.push(LabelPrediction {
                    id: id.to_string(),
                    labels: parsed.map(|p| p.labels).unwrap_or_default(),
                    confidences,
                });
            }
            Task::Grounding => {
                let gts = parse_grounded(rec.assistant())
                    .spans
                    .into_iter()
                    .filter_map(|(phrase, b)| phrase_category(&matcher, &phrase).map(|c| (c, b)))
                    .collect();
                let parsed = text.map(parse_grounded).unwrap_or_default();
                failures.grounding_malformed += parsed.malformed;
                failures.grounding_clamped += parsed.clamped;
                grounding.push(GroundingCase {
                    id: id.to_string(),
                    kind: GroundingKind::Grounding,
                    gts,
                    preds: parsed.spans.into_iter().map(|(p, b)| (phrase_category(&matcher, &p), b)).collect(),
                });
            }
            Task::Refer => {
                let category = refer_query(rec.human()).and_then(|q| phrase_category(&matcher, q));
                let (Some(category), Ok(gt_box)) = (category, decode_box(rec.assistant())) else {
                    continue;
                };
                let (b, clamped) = text.map(parse_first_box).unwrap_or((None, 0));
                failures.grounding_clamped += clamped;
                if text.is_some() && b.is_none() {
                    failures.grounding_malformed += 1;
                }
                grounding.push(GroundingCase {
                    id: id.to_string(),
                    kind: GroundingKind::Referring,
                    gts: vec![(category, gt_box)],
                    preds: b.map(|b| vec![(Some(category), b)]).unwrap_or_default(),
                });
            }
            Task::Vqa => {
                let Some(key) = &rec.answer_key else { continue };
                vqa.push(VqaCase {
                    id: id.to_string(),
                    category: key.category,
                    options: key.options.clone(),
                    correct: key.letter,
                    response: text.map(str::to_string),
                });
            }
        }
    }
    if !scene_gts.is_empty() {
        report.scene = Some(score_multilabel(&scene_preds, &scene_gts, &vocab)?);
    }
    if !grounding.is_empty() {
        report.grounding = Some(score_grounding(&grounding));
    }
    if !vqa.is_empty() {
        let (metrics, unparsed) = vqa_score(&vqa);
        // Missing answers are already counted once.
        report.parse_failures.vqa_unparsed += unparsed - vqa.iter().filter(|c| c.response.is_none()).count();
        report.vqa = Some(metrics);
    }
    Ok(report)
}

/// Ground truth rendered as predictions, for closure checks.
pub fn oracle_predictions(gt: &[InstructionRecord]) -> Vec<Prediction> {
    gt.iter()
        .map(|r| Prediction {
            id: r.id.clone(),
            task: Some(r.task),
            text: r.assistant().to_string(),
            confidences: None,
        })
        .collect()
}
