//! Instruction-tuning records for the four tasks: scene comprehension,
//! referring localization, visual grounding and multiple-choice VQA.

use std::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composer::cell_rng;
use crate::llm::{ChatClient, LlmError};
use crate::manifest::ManifestRecord;
use crate::scene::{LocationLabel, MaterialClass, OrientationLabel, SceneMetadata, ThreatCategory};

/// Byte offset and reason for a malformed box-token string.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed box tokens at byte {offset}: {reason}")]
pub struct ParseError {
    pub offset: usize,
    pub reason: &'static str,
}

#[derive(Debug, Error)]
pub enum InstructError {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{id}: threat {threat} has no box or caption span")]
    MissingBox { id: String, threat: usize },
    #[error("conversation format: {0}")]
    Format(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

/// Integer box on the `[0, 100]` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NormBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl NormBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self, InstructError> {
        if x_min > x_max || y_min > y_max || x_max > 100 || y_max > 100 {
            return Err(InstructError::InvalidBox(format!("({x_min},{y_min},{x_max},{y_max})")));
        }
        Ok(NormBox { x_min, y_min, x_max, y_max })
    }

    pub fn to_array(self) -> [u32; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl fmt::Display for NormBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&encode_box(self))
    }
}

fn round_half_up(v: f64) -> u32 {
    (v + 0.5).floor().clamp(0.0, 100.0) as u32
}

/// Normalize a continuous pixel box `[x_min, y_min, x_max, y_max]` on a
/// `width` x `height` image, rounding half up.
pub fn normalize_box(px: [f64; 4], width: u32, height: u32) -> Result<NormBox, InstructError> {
    let (w, h) = (width as f64, height as f64);
    let [x0, y0, x1, y1] = px;
    let ok = width > 0
        && height > 0
        && px.iter().all(|v| v.is_finite())
        && 0.0 <= x0
        && x0 <= x1
        && x1 <= w
        && 0.0 <= y0
        && y0 <= y1
        && y1 <= h;
    if !ok {
        return Err(InstructError::InvalidBox(format!("{px:?} on {width}x{height}")));
    }
    let n = |v: f64, d: f64| round_half_up(v / d * 100.0);
    NormBox::new(n(x0, w), n(y0, h), n(x1, w), n(y1, h))
}

/// Normalize an inclusive pixel box as stored in the manifest. Pixel `x`
/// spans `[x, x + 1)`, so the far edges move out by one.
pub fn normalize_inclusive(px: [u32; 4], width: u32, height: u32) -> Result<NormBox, InstructError> {
    let [x0, y0, x1, y1] = px;
    normalize_box([x0 as f64, y0 as f64, x1 as f64 + 1.0, y1 as f64 + 1.0], width, height)
}

pub fn denormalize(b: &NormBox, width: u32, height: u32) -> [f64; 4] {
    let (w, h) = (width as f64 / 100.0, height as f64 / 100.0);
    [b.x_min as f64 * w, b.y_min as f64 * h, b.x_max as f64 * w, b.y_max as f64 * h]
}

/// `{<x1><y1><x2><y2>}`, integers unpadded.
pub fn encode_box(b: &NormBox) -> String {
    format!("{{<{}><{}><{}><{}>}}", b.x_min, b.y_min, b.x_max, b.y_max)
}

/// Strict inverse of [`encode_box`].
pub fn decode_box(text: &str) -> Result<NormBox, ParseError> {
    let bytes = text.as_bytes();
    let mut i = 0;
    let expect = |i: &mut usize, c: u8, reason: &'static str| {
        if bytes.get(*i) == Some(&c) {
            *i += 1;
            Ok(())
        } else {
            Err(ParseError { offset: *i, reason })
        }
    };
    expect(&mut i, b'{', "expected '{'")?;
    let mut v = [0u32; 4];
    for slot in v.iter_mut() {
        expect(&mut i, b'<', "expected '<' (need four coordinates)")?;
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i == start || i - start > 3 {
            return Err(ParseError { offset: start, reason: "expected 1-3 digits" });
        }
        let n: u32 = text[start..i].parse().map_err(|_| ParseError { offset: start, reason: "bad integer" })?;
        // Reject leading zeros so decode(encode(b)) is the only spelling.
        if n > 100 || (text[start..i].len() > 1 && text.as_bytes()[start] == b'0') {
            return Err(ParseError { offset: start, reason: "coordinate out of range" });
        }
        *slot = n;
        expect(&mut i, b'>', "expected '>'")?;
    }
    expect(&mut i, b'}', "expected '}'")?;
    if i != bytes.len() {
        return Err(ParseError { offset: i, reason: "trailing input" });
    }
    NormBox::new(v[0], v[1], v[2], v[3]).map_err(|_| ParseError { offset: 0, reason: "inverted box" })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Scene,
    Refer,
    Grounding,
    Vqa,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Scene, Task::Refer, Task::Grounding, Task::Vqa];

    pub fn name(self) -> &'static str {
        match self {
            Task::Scene => "scene",
            Task::Refer => "refer",
            Task::Grounding => "grounding",
            Task::Vqa => "vqa",
        }
    }

    pub fn from_name(s: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.name() == s)
    }

    fn salt(self) -> u64 {
        match self {
            Task::Scene => 0x5c3e,
            Task::Refer => 0x7ef3,
            Task::Grounding => 0x6a0d,
            Task::Vqa => 0x09a1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VqaCategory {
    InstanceIdentity,
    InstanceLocation,
    InstanceInteraction,
    InstanceAttribute,
    InstanceCounting,
    ComplexReasoning,
    Misleading,
}

impl VqaCategory {
    pub const ALL: [VqaCategory; 7] = [
        VqaCategory::InstanceIdentity,
        VqaCategory::InstanceLocation,
        VqaCategory::InstanceInteraction,
        VqaCategory::InstanceAttribute,
        VqaCategory::InstanceCounting,
        VqaCategory::ComplexReasoning,
        VqaCategory::Misleading,
    ];

    pub fn title(self) -> &'static str {
        match self {
            VqaCategory::InstanceIdentity => "Instance Identity",
            VqaCategory::InstanceLocation => "Instance Location",
            VqaCategory::InstanceInteraction => "Instance Interaction",
            VqaCategory::InstanceAttribute => "Instance Attribute",
            VqaCategory::InstanceCounting => "Instance Counting",
            VqaCategory::ComplexReasoning => "Complex Visual Reasoning",
            VqaCategory::Misleading => "Misleading",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub from: String,
    pub value: String,
}

impl Turn {
    pub fn human(value: impl Into<String>) -> Self {
        Turn { from: "human".into(), value: value.into() }
    }

    pub fn assistant(value: impl Into<String>) -> Self {
        Turn { from: "assistant".into(), value: value.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerKey {
    pub letter: char,
    pub category: VqaCategory,
    pub options: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub id: String,
    pub image: String,
    pub task: Task,
    pub conversations: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_key: Option<AnswerKey>,
}

impl InstructionRecord {
    pub fn human(&self) -> &str {
        self.conversations.first().map(|t| t.value.as_str()).unwrap_or("")
    }

    pub fn assistant(&self) -> &str {
        self.conversations.get(1).map(|t| t.value.as_str()).unwrap_or("")
    }
}

/// One multiple-choice question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqItem {
    pub question: String,
    pub options: Vec<String>,
    pub correct: char,
    pub category: VqaCategory,
}

impl McqItem {
    pub fn correct_option(&self) -> &str {
        &self.options[(self.correct as u8 - b'A') as usize]
    }

    /// Question followed by lettered options, one per line.
    pub fn prompt(&self) -> String {
        let mut s = self.question.clone();
        for (i, o) in self.options.iter().enumerate() {
            s.push_str(&format!("\n{}. {o}", (b'A' + i as u8) as char));
        }
        s.push_str("\nAnswer with the option's letter from the given choices directly.");
        s
    }
}

/// Prompt spelling of a category ("3D printed gun", "powerbank").
fn prompt_label(c: ThreatCategory) -> String {
    match c {
        ThreatCategory::ThreeDPrintedGun => c.title(),
        _ => c.label().to_string(),
    }
}

fn vocabulary_list() -> String {
    ThreatCategory::vocabulary().into_iter().map(prompt_label).collect::<Vec<_>>().join(", ")
}

const SCENE_PROMPTS: [&str; 3] = [
    "Classify the image based on the presence of the following threat classes: {vocab}. If no threats are present, classify the image as nonthreat.",
    "Classify the scan into exactly one or more of these categories: {vocab}. If no threats are present, answer nonthreat.",
    "Which of the following threat classes appear in this baggage X-ray scan: {vocab}? If none are present, answer nonthreat.",
];

pub fn gen_scene_comprehension(record: &ManifestRecord, rng: &mut impl Rng) -> InstructionRecord {
    let prompt = SCENE_PROMPTS.choose(rng).expect("non-empty").replace("{vocab}", &vocabulary_list());
    let answer = record.metadata.labels().into_iter().map(ThreatCategory::label).collect::<Vec<_>>().join(", ");
    InstructionRecord {
        id: format!("{}_scene", record.id),
        image: record.image_path.clone(),
        task: Task::Scene,
        conversations: vec![Turn::human(prompt), Turn::assistant(answer)],
        answer_key: None,
    }
}

const REFER_PROMPTS: [&str; 2] = ["[refer] Give the location of <p>{label}</p>", "[refer] Please find the <p>{label}</p>"];

/// One record per threat that has a box.
pub fn gen_referring(record: &ManifestRecord, rng: &mut impl Rng) -> Result<Vec<InstructionRecord>, InstructError> {
    let (w, h) = record.image_size();
    let mut out = Vec::new();
    for (k, (threat, px)) in record.metadata.threats.iter().zip(&record.boxes_px).enumerate() {
        let b = normalize_inclusive(*px, w, h)?;
        let prompt = REFER_PROMPTS.choose(rng).expect("non-empty").replace("{label}", threat.category.label());
        out.push(InstructionRecord {
            id: format!("{}_refer_{k}", record.id),
            image: record.image_path.clone(),
            task: Task::Refer,
            conversations: vec![Turn::human(prompt), Turn::assistant(encode_box(&b))],
            answer_key: None,
        });
    }
    Ok(out)
}

pub const GROUNDING_PROMPT: &str = "[grounding] Describe the baggage scan, focusing on the threats if any.";

/// Caption with each threat phrase wrapped as `<p>phrase</p> {<..>}`.
pub fn grounded_caption(record: &ManifestRecord) -> Result<String, InstructError> {
    let threats = record.metadata.threats.len();
    if record.boxes_px.len() < threats || record.caption_spans.len() < threats {
        let threat = record.boxes_px.len().min(record.caption_spans.len());
        return Err(InstructError::MissingBox { id: record.id.clone(), threat });
    }
    let (w, h) = record.image_size();
    let text = &record.caption;
    let mut out = String::with_capacity(text.len() + 32 * threats);
    let mut cursor = 0;
    for (k, (span, px)) in record.caption_spans.iter().zip(&record.boxes_px).enumerate().take(threats) {
        let [s, e] = *span;
        if s < cursor || e > text.len() || s > e || !text.is_char_boundary(s) || !text.is_char_boundary(e) {
            return Err(InstructError::MissingBox { id: record.id.clone(), threat: k });
        }
        let b = normalize_inclusive(*px, w, h)?;
        out.push_str(&text[cursor..s]);
        out.push_str("<p>");
        out.push_str(&text[s..e]);
        out.push_str("</p> ");
        out.push_str(&encode_box(&b));
        cursor = e;
    }
    out.push_str(&text[cursor..]);
    Ok(out)
}

pub fn gen_grounding(record: &ManifestRecord) -> Result<InstructionRecord, InstructError> {
    Ok(InstructionRecord {
        id: format!("{}_grounding", record.id),
        image: record.image_path.clone(),
        task: Task::Grounding,
        conversations: vec![Turn::human(GROUNDING_PROMPT), Turn::assistant(grounded_caption(record)?)],
        answer_key: None,
    })
}

/// Coverage thresholds for the interaction question.
pub const FULLY_COVERED: f64 = 0.9;
pub const HALF_COVERED: f64 = 0.1;

fn coverage_option(coverage: f64) -> usize {
    if coverage >= FULLY_COVERED {
        0
    } else if coverage >= HALF_COVERED {
        1
    } else {
        2
    }
}

fn material_word(m: MaterialClass) -> &'static str {
    match m {
        MaterialClass::Metal => "metal",
        MaterialClass::Inorganic | MaterialClass::Mixed => "inorganic",
        MaterialClass::Organic | MaterialClass::Polymer => "organic",
    }
}

/// Correct and wrong colour phrases for the material-colour inference.
fn colour_phrases(m: MaterialClass) -> (&'static str, &'static str) {
    match m {
        MaterialClass::Metal => ("bluish or greenish", "orange-coloured"),
        MaterialClass::Inorganic | MaterialClass::Mixed => ("greenish", "orange-coloured"),
        MaterialClass::Organic | MaterialClass::Polymer => ("orange-coloured", "bluish"),
    }
}

/// Shuffle `options` (first entry correct) and build the item.
fn shuffled(question: String, options: Vec<String>, category: VqaCategory, rng: &mut impl Rng) -> McqItem {
    let mut order: Vec<usize> = (0..options.len()).collect();
    order.shuffle(rng);
    let correct_pos = order.iter().position(|&i| i == 0).expect("correct option present");
    McqItem {
        question,
        options: order.iter().map(|&i| options[i].clone()).collect(),
        correct: (b'A' + correct_pos as u8) as char,
        category,
    }
}

fn location_answer(meta: &SceneMetadata, c: ThreatCategory) -> Option<usize> {
    let mut labels = meta.threats.iter().filter(|t| t.category == c).map(|t| t.location_label);
    let first = labels.next()?;
    // Two instances in different places have no single answer.
    if labels.any(|l| l != first) {
        return None;
    }
    Some(match first {
        LocationLabel::Corner => 0,
        LocationLabel::Center => 1,
    })
}

/// Multiple-choice items for one scene.
///
/// Each question is asked about the first threat. A nonthreat scene gets the
/// location, counting and misleading questions only.
pub fn gen_vqa_mcq(meta: &SceneMetadata, rng: &mut impl Rng) -> Vec<McqItem> {
    let mut items = Vec::new();
    let present: Vec<ThreatCategory> = meta.threats.iter().map(|t| t.category).collect();
    let absent: Vec<ThreatCategory> = ThreatCategory::THREATS.iter().copied().filter(|c| !present.contains(c)).collect();

    if let Some(t) = meta.threats.first() {
        let c = t.category;
        let title = c.title();

        let mut others: Vec<ThreatCategory> = absent.clone();
        others.shuffle(rng);
        let mut opts = vec![title.clone()];
        opts.extend(others.iter().take(3).map(|o| o.title()));
        items.push(shuffled(
            "What type of threat item is present in this X-ray image?".into(),
            opts,
            VqaCategory::InstanceIdentity,
            rng,
        ));

        if let Some(ans) = location_answer(meta, c) {
            let base = ["Corner", "Middle", "Not Present"];
            items.push(fixed_order(
                format!("Where is the {title} located in this baggage X-ray scan?"),
                &base,
                ans,
                VqaCategory::InstanceLocation,
                rng,
            ));
        }

        let cover = ["Fully Covered", "Half Covered", "Uncovered"];
        items.push(fixed_order(
            format!("How is the {title} concealed in this baggage X-ray scan?"),
            &cover,
            coverage_option(t.coverage),
            VqaCategory::InstanceInteraction,
            rng,
        ));

        let orient = ["Vertically", "Horizontally", "At an inclined angle"];
        let ans = match t.orientation_label {
            OrientationLabel::Vertical => 0,
            OrientationLabel::Horizontal => 1,
            OrientationLabel::Inclined => 2,
        };
        items.push(fixed_order(
            format!("In what orientation is the {title} positioned within the baggage X-ray scan?"),
            &orient,
            ans,
            VqaCategory::InstanceAttribute,
            rng,
        ));

        let m = c.material();
        let word = material_word(m);
        let label = c.label();
        let (right, wrong) = colour_phrases(m);
        let opts = vec![
            format!("Since the {label} is {right}, it can be easily inferred as {word} {label}."),
            format!("Since the {label} is {wrong}, it can be easily inferred as {word} {label}."),
            "None of the above.".to_string(),
        ];
        items.push(shuffled(
            format!("How can you infer that there is a {word} {label} in the baggage scan?"),
            opts,
            VqaCategory::ComplexReasoning,
            rng,
        ));
    } else if let Some(&c) = absent.choose(rng) {
        items.push(fixed_order(
            format!("Where is the {} located in this baggage X-ray scan?", c.title()),
            &["Corner", "Middle", "Not Present"],
            2,
            VqaCategory::InstanceLocation,
            rng,
        ));
    }

    let n = meta.threats.len();
    if n <= 3 {
        let count = ["One", "Two", "Three", "None"];
        items.push(fixed_order(
            "How many potential threats are present in this X-ray image?".into(),
            &count,
            if n == 0 { 3 } else { n - 1 },
            VqaCategory::InstanceCounting,
            rng,
        ));
    }

    if let Some(&c) = absent.choose(rng) {
        let label = c.label();
        let opts = vec![
            format!("There is no {label} in the image."),
            "Toward the corner of the image.".to_string(),
            "In the middle of the image.".to_string(),
        ];
        items.push(shuffled(
            format!("Where is the {} located in the baggage scan?", c.title()),
            opts,
            VqaCategory::Misleading,
            rng,
        ));
    }
    items
}

/// Options from a fixed list with the correct one at `answer`, then shuffled.
fn fixed_order(question: String, options: &[&str], answer: usize, category: VqaCategory, rng: &mut impl Rng) -> McqItem {
    let mut opts = vec![options[answer].to_string()];
    opts.extend(options.iter().enumerate().filter(|(i, _)| *i != answer).map(|(_, o)| o.to_string()));
    shuffled(question, opts, category, rng)
}

pub fn vqa_records(record: &ManifestRecord, rng: &mut impl Rng) -> Vec<InstructionRecord> {
    gen_vqa_mcq(&record.metadata, rng)
        .into_iter()
        .enumerate()
        .map(|(k, item)| {
            let answer = format!("{}. {}", item.correct, item.correct_option());
            InstructionRecord {
                id: format!("{}_vqa_{k}", record.id),
                image: record.image_path.clone(),
                task: Task::Vqa,
                conversations: vec![Turn::human(item.prompt()), Turn::assistant(answer)],
                answer_key: Some(AnswerKey {
                    letter: item.correct,
                    category: item.category,
                    options: item.options,
                }),
            }
        })
        .collect()
}

/// Records for `task` over a manifest, in manifest order.
///
/// Each record draws from its own stream keyed by the task and the scene's
/// cell index. Grounding skips nonthreat scenes.
pub fn emit_task(records: &[ManifestRecord], task: Task, seed: u64) -> Result<Vec<InstructionRecord>, InstructError> {
    let mut out = Vec::new();
    for r in records {
        let mut rng = cell_rng(seed ^ task.salt(), r.index);
        match task {
            Task::Scene => out.push(gen_scene_comprehension(r, &mut rng)),
            Task::Refer => out.extend(gen_referring(r, &mut rng)?),
            Task::Grounding => {
                if !r.metadata.is_nonthreat() {
                    out.push(gen_grounding(r)?);
                }
            }
            Task::Vqa => out.extend(vqa_records(r, &mut rng)),
        }
    }
    Ok(out)
}

/// System prompt for free-form conversation generation.
pub const VQA_SYSTEM_PROMPT: &str = "You are an AI assistant analyzing X-ray baggage scans to detect prohibited items and security threats. Based on a description of the scan, answer questions as if you are visually analyzing the image. The description includes objects present in the scan, potential threat items, and objects placed to conceal them. Metallic items, such as guns, knives, and pliers, appear blue; organic items, such as 3D-printed guns and improvised explosives, appear orange; and inorganic items, such as circuits, powerbank, and battery, appear green. Using the description of the scan, design a conversation between you and a person asking about this scan, focusing on identifying threat items concealed within normal items.

The following are the threat categories likely to be present in the image alongside normal items: explosive, gun, 3D-printed gun, knife, bullet, syringe, battery, wrench, other sharp items, powerbank, scissors, hammer, pliers, and screwdriver. If none of the threat items are present, and only normal items are detected, the image is classified as \"Nonthreat.\" Note that explosives can be intact or dispersed (dismantled). If dispersed, the description will mention the positions or concealment of the three main parts of the explosive: the container with explosive material, the circuit, and the battery. Sometimes the circuit, container, or battery may be expertly concealed within normal items.

Additionally, note that 3D-printed guns are difficult to detect because of their faint outlines, polymer-based structure, and orange appearance in the scan. You can include misleading questions about threat items that are not present and answer confidently that they are not present. Furthermore, tangled wires, cables, chains, stacked metallic items, circuits, and laptops may appear suspicious in the description. You can incorporate questions to clarify if there are any suspicious items in the image. Provide confident and definite answers, avoiding any uncertain or speculative responses.";

/// Split a `Human:` / `Assistant:` transcript into turns.
///
/// Markdown bullets and bold markers around the role are tolerated. Lines
/// without a role prefix continue the previous turn. The transcript must
/// start with a human turn and alternate.
pub fn parse_conversation(text: &str) -> Result<Vec<Turn>, InstructError> {
    let mut turns: Vec<Turn> = Vec::new();
    for raw in text.lines() {
        let line = raw.trim().trim_start_matches(['-', '*', ' ']).replace("**", "");
        let line = line.trim();
        let role = if let Some(rest) = line.strip_prefix("Human:") {
            Some(("human", rest))
        } else {
            line.strip_prefix("Assistant:").map(|rest| ("assistant", rest))
        };
        match role {
            Some((from, rest)) => {
                let expected = if turns.len() % 2 == 0 { "human" } else { "assistant" };
                if from != expected {
                    return Err(InstructError::Format(format!(
                        "turn {} is {from}, expected {expected}",
                        turns.len() + 1
                    )));
                }
                turns.push(Turn { from: from.into(), value: rest.trim().to_string() });
            }
            None if line.is_empty() => {}
            None => match turns.last_mut() {
                Some(t) => {
                    t.value.push(' ');
                    t.value.push_str(line);
                }
                None => return Err(InstructError::Format("text before the first turn".into())),
            },
        }
    }
    if turns.is_empty() {
        return Err(InstructError::Format("no turns".into()));
    }
    Ok(turns)
}

/// Ask `client` for a conversation about `caption`.
pub fn gen_vqa_freeform(caption: &str, client: &dyn ChatClient) -> Result<Vec<Turn>, InstructError> {
    let reply = client.chat(VQA_SYSTEM_PROMPT, caption)?;
    parse_conversation(&reply)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{BaggageType, ClutterLevel, ThreatMeta};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::cell::RefCell;

    fn threat(c: ThreatCategory, loc: LocationLabel) -> ThreatMeta {
        ThreatMeta {
            category: c,
            location_label: loc,
            orientation_label: OrientationLabel::Horizontal,
            concealment_level: 3,
            concealment_phrase: String::new(),
            occluder_names: vec!["hangers".into()],
            nearby_names: vec![],
            coverage: 0.4,
            centroid_px: [10.0, 10.0],
            variant: None,
        }
    }

    fn meta(threats: Vec<ThreatMeta>) -> SceneMetadata {
        SceneMetadata {
            baggage_type: BaggageType::Suitcase,
            clutter: ClutterLevel::Limited,
            concealment_sublevel: 3,
            threats,
            distractor_names: vec!["cables".into()],
        }
    }

    fn record(m: SceneMetadata, caption: &str, spans: Vec<[usize; 2]>, boxes: Vec<[u32; 4]>) -> ManifestRecord {
        use crate::scene::{SceneSpec, ThreatSpec};
        ManifestRecord {
            id: "stcray_000000".into(),
            index: 0,
            spec: SceneSpec {
                seed: 0,
                baggage_type: BaggageType::Suitcase,
                clutter: ClutterLevel::Limited,
                concealment_sublevel: 3,
                threats: m
                    .threats
                    .iter()
                    .map(|t| ThreatSpec::new(t.category, t.location_label, t.orientation_label))
                    .collect(),
                image_size: [100, 100],
                volume_dims: [100, 100, 8],
            },
            metadata: m,
            image_path: "images/stcray_000000.png".into(),
            mask_paths: vec![],
            boxes_px: boxes,
            caption: caption.into(),
            caption_spans: spans,
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_box([0.0, 0.0, 640.0, 480.0], 640, 480).unwrap(), NormBox::new(0, 0, 100, 100).unwrap());
        assert_eq!(
            normalize_box([198.4, 148.8, 403.2, 201.6], 640, 480).unwrap(),
            NormBox::new(31, 31, 63, 42).unwrap()
        );
        // Exactly half rounds up.
        assert_eq!(normalize_box([1.0, 0.0, 2.0, 1.0], 200, 100).unwrap().x_min, 1);
        assert!(normalize_box([5.0, 0.0, 4.0, 1.0], 10, 10).is_err());
        assert!(normalize_box([0.0, 0.0, 11.0, 1.0], 10, 10).is_err());
        assert_eq!(normalize_inclusive([0, 0, 99, 49], 100, 100).unwrap(), NormBox::new(0, 0, 100, 50).unwrap());
    }

    #[test]
    fn normalize_roundtrip_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let (w, h) = (rng.random_range(64..1024), rng.random_range(64..1024));
            let mut xs = [rng.random_range(0.0..=w as f64), rng.random_range(0.0..=w as f64)];
            let mut ys = [rng.random_range(0.0..=h as f64), rng.random_range(0.0..=h as f64)];
            xs.sort_by(f64::total_cmp);
            ys.sort_by(f64::total_cmp);
            let px = [xs[0], ys[0], xs[1], ys[1]];
            let back = denormalize(&normalize_box(px, w, h).unwrap(), w, h);
            for i in 0..4 {
                let dim = if i % 2 == 0 { w } else { h } as f64;
                assert!((back[i] - px[i]).abs() <= 0.5 * dim / 100.0 + 1e-9);
            }
        }
    }

    #[test]
    fn box_tokens() {
        let b = NormBox::new(31, 31, 63, 42).unwrap();
        assert_eq!(encode_box(&b), "{<31><31><63><42>}");
        assert_eq!(decode_box("{<31><31><63><42>}").unwrap(), b);
        assert_eq!(encode_box(&NormBox::new(0, 5, 100, 100).unwrap()), "{<0><5><100><100>}");
        let err = decode_box("{<31><31><63>}").unwrap_err();
        assert_eq!(err.offset, 13);
        assert!(decode_box("{<31><31><63><42>}x").is_err());
        assert!(decode_box("{<31><31><63><101>}").is_err());
        assert!(decode_box("{<031><31><63><42>}").is_err());
        assert!(decode_box("{<63><31><31><42>}").is_err());
    }

    #[test]
    fn scene_prompt_and_answers() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = record(meta(vec![]), "", vec![], vec![]);
        let rec = gen_scene_comprehension(&r, &mut rng);
        assert_eq!(rec.assistant(), "nonthreat");
        assert!(!rec.human().contains('['));
        let r = record(
            meta(vec![threat(ThreatCategory::Gun, LocationLabel::Center), threat(ThreatCategory::Knife, LocationLabel::Corner)]),
            "",
            vec![],
            vec![],
        );
        assert_eq!(gen_scene_comprehension(&r, &mut rng).assistant(), "gun, knife");
        assert!(vocabulary_list().starts_with("explosive, gun, 3D printed gun, knife, cutter"));
        assert_eq!(vocabulary_list().split(", ").count(), 21);
    }

    #[test]
    fn referring_records() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = record(
            meta(vec![threat(ThreatCategory::Gun, LocationLabel::Center), threat(ThreatCategory::Knife, LocationLabel::Corner)]),
            "",
            vec![],
            vec![[10, 20, 29, 39], [0, 0, 9, 9]],
        );
        let recs = gen_referring(&r, &mut rng).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].assistant(), "{<10><20><30><40>}");
        assert!(recs[0].human().starts_with("[refer] "));
        assert!(recs[0].human().ends_with("<p>gun</p>"));
    }

    #[test]
    fn grounding_wraps_the_plier_example() {
        let caption = "In the middle of the baggage scan, there is a plier covered by hangers and cables.";
        let s = caption.find("a plier").unwrap();
        // 640x480 pixel box whose normalized form is (31,31,63,42).
        let mut r = record(
            meta(vec![threat(ThreatCategory::Pliers, LocationLabel::Center)]),
            caption,
            vec![[s, s + 7]],
            vec![[198, 149, 402, 201]],
        );
        r.spec.image_size = [640, 480];
        let g = gen_grounding(&r).unwrap();
        assert_eq!(g.human(), GROUNDING_PROMPT);
        assert_eq!(
            g.assistant(),
            "In the middle of the baggage scan, there is <p>a plier</p> {<31><31><63><42>} covered by hangers and cables."
        );
        let r = record(meta(vec![]), "Nothing here.", vec![], vec![]);
        assert_eq!(gen_grounding(&r).unwrap().assistant(), "Nothing here.");
        let r = record(meta(vec![threat(ThreatCategory::Gun, LocationLabel::Center)]), "a gun", vec![[0, 5]], vec![]);
        assert!(matches!(gen_grounding(&r), Err(InstructError::MissingBox { threat: 0, .. })));
    }

    #[test]
    fn vqa_reference_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = meta(vec![threat(ThreatCategory::Battery, LocationLabel::Center)]);
        let items = gen_vqa_mcq(&m, &mut rng);
        let loc = items.iter().find(|i| i.category == VqaCategory::InstanceLocation).unwrap();
        assert_eq!(loc.question, "Where is the Battery located in this baggage X-ray scan?");
        assert_eq!(loc.correct_option(), "Middle");
        let mut opts = loc.options.clone();
        opts.sort();
        assert_eq!(opts, ["Corner", "Middle", "Not Present"]);
        for i in &items {
            let mut o = i.options.clone();
            o.sort();
            o.dedup();
            assert_eq!(o.len(), i.options.len());
            assert!((2..=4).contains(&i.options.len()));
        }

        let gun = meta(vec![threat(ThreatCategory::Gun, LocationLabel::Corner)]);
        let items = gen_vqa_mcq(&gun, &mut rng);
        let r = items.iter().find(|i| i.category == VqaCategory::ComplexReasoning).unwrap();
        assert_eq!(r.question, "How can you infer that there is a metal gun in the baggage scan?");
        assert_eq!(r.correct_option(), "Since the gun is bluish or greenish, it can be easily inferred as metal gun.");
        assert!(r.options.contains(&"Since the gun is orange-coloured, it can be easily inferred as metal gun.".to_string()));
        assert!(r.options.contains(&"None of the above.".to_string()));
    }

    #[test]
    fn misleading_cutter() {
        let m = meta(vec![threat(ThreatCategory::Battery, LocationLabel::Center)]);
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let items = gen_vqa_mcq(&m, &mut rng);
            let mis = items.iter().find(|i| i.category == VqaCategory::Misleading).unwrap();
            if mis.question == "Where is the Cutter located in the baggage scan?" {
                assert_eq!(mis.correct_option(), "There is no cutter in the image.");
                let mut o = mis.options.clone();
                o.sort();
                assert_eq!(o, ["In the middle of the image.", "There is no cutter in the image.", "Toward the corner of the image."]);
                return;
            }
        }
        panic!("cutter never chosen as the absent category");
    }

    #[test]
    fn answer_letters_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cats = ThreatCategory::THREATS;
        let mut counts: std::collections::BTreeMap<usize, [usize; 4]> = Default::default();
        for k in 0..3000 {
            let m = meta(vec![threat(cats[k % cats.len()], LocationLabel::Center)]);
            for item in gen_vqa_mcq(&m, &mut rng) {
                counts.entry(item.options.len()).or_default()[(item.correct as u8 - b'A') as usize] += 1;
            }
        }
        for (n, c) in counts {
            let total: usize = c.iter().sum();
            for &x in &c[..n] {
                let share = x as f64 / total as f64;
                assert!((share - 1.0 / n as f64).abs() <= 0.1 / n as f64, "arity {n}: {c:?}");
            }
        }
    }

    #[test]
    fn nonthreat_vqa_and_interaction_bands() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let items = gen_vqa_mcq(&meta(vec![]), &mut rng);
        let cats: Vec<_> = items.iter().map(|i| i.category).collect();
        assert_eq!(cats, [VqaCategory::InstanceLocation, VqaCategory::InstanceCounting, VqaCategory::Misleading]);
        assert_eq!(items[0].correct_option(), "Not Present");
        assert_eq!(items[1].correct_option(), "None");
        assert_eq!(coverage_option(1.0), 0);
        assert_eq!(coverage_option(0.5), 1);
        assert_eq!(coverage_option(0.0), 2);
    }

    struct Scripted(String, RefCell<Vec<(String, String)>>);

    impl ChatClient for Scripted {
        fn chat(&self, system: &str, user: &str) -> Result<String, LlmError> {
            self.1.borrow_mut().push((system.into(), user.into()));
            Ok(self.0.clone())
        }
    }

    #[test]
    fn freeform_conversation() {
        let client = Scripted("Human: Is there a threat?\nAssistant: Yes, a powerbank.".into(), RefCell::new(vec![]));
        let turns = gen_vqa_freeform("X-ray scan showing a power bank.", &client).unwrap();
        assert_eq!(turns.len(), 2);
        assert_eq!(turns[1], Turn::assistant("Yes, a powerbank."));
        assert_eq!(client.1.borrow()[0].0, VQA_SYSTEM_PROMPT);
        let bad = Scripted("Human: a\nHuman: b".into(), RefCell::new(vec![]));
        assert!(matches!(gen_vqa_freeform("c", &bad), Err(InstructError::Format(_))));
        let md = "- **Human:** Where is it?\n- **Assistant:** In the middle\nof the bag.";
        let t = parse_conversation(md).unwrap();
        assert_eq!(t[1].value, "In the middle of the bag.");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn encode_decode_roundtrip(a in 0u32..=100, b in 0u32..=100, c in 0u32..=100, d in 0u32..=100) {
                let nb = NormBox::new(a.min(c), b.min(d), a.max(c), b.max(d)).unwrap();
                prop_assert_eq!(decode_box(&encode_box(&nb)).unwrap(), nb);
            }

            #[test]
            fn decode_never_panics(s in "[{}<>0-9]{0,24}") {
                if let Ok(b) = decode_box(&s) {
                    prop_assert!(b.x_min <= b.x_max && b.y_max <= 100);
                    prop_assert_eq!(encode_box(&b), s);
                }
            }
        }
    }
}
