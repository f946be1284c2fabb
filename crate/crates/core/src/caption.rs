//! Metadata-driven captions and ROUGE-L fidelity checks.
//!
//! A threat clause follows the template
//!
//! ```text
//! {X-ray descriptor} {positioning phrase} a {threat}, {concealment details}, {position}.
//! ```
//!
//! with the orientation phrase attached to the threat. Additional threats
//! append `; and a {threat} ...` clauses, and a second sentence lists the
//! distractors. Every slot is drawn uniformly from its synonym pool.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composer::{cell_rng, join_names};
use crate::manifest::ManifestRecord;
use crate::scene::{
    BaggageType, ExplosiveVariant, LocationLabel, OrientationLabel, SceneMetadata, ThreatCategory,
};

#[derive(Debug, Error)]
pub enum CaptionError {
    #[error("text has no tokens")]
    EmptyText,
    #[error("synonym pool `{0}` is empty or incomplete")]
    InvalidPools(String),
    #[error("reading pools: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing pools: {0}")]
    Json(#[from] serde_json::Error),
}

/// Synonym pools. Loaded from JSON whose top-level keys name the pools;
/// per-category, per-orientation, per-sublevel and per-location pools are
/// nested objects keyed by the identifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynonymPools {
    pub xray_descriptors: Vec<String>,
    pub positioning: Vec<String>,
    pub threats: BTreeMap<ThreatCategory, Vec<String>>,
    pub orientations: BTreeMap<OrientationLabel, Vec<String>>,
    /// Templates with an `{occluders}` slot, keyed by sublevel.
    pub concealment: BTreeMap<u8, Vec<String>>,
    /// Templates with a `{bag}` slot.
    pub locations: BTreeMap<LocationLabel, Vec<String>>,
    /// Sentences with a `{distractors}` slot.
    pub distractor_sentences: Vec<String>,
    /// Whole captions for scenes without threats; `{bag}` and `{distractors}` slots.
    pub nonthreat: Vec<String>,
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl Default for SynonymPools {
    /// The shipped pools.
    fn default() -> Self {
        use ThreatCategory::*;
        let threats: BTreeMap<ThreatCategory, Vec<String>> = [
            (Explosive, &["explosive", "improvised explosive device"][..]),
            (Gun, &["gun", "pistol"]),
            (ThreeDPrintedGun, &["3D-printed gun", "3D printed gun"]),
            (Knife, &["knife", "folding knife"]),
            (Cutter, &["cutter", "box cutter"]),
            (Blade, &["blade", "loose blade"]),
            (ShavingRazor, &["shaving razor", "razor"]),
            (Lighter, &["lighter", "cigarette lighter"]),
            (Syringe, &["syringe"]),
            (Battery, &["battery"]),
            (NailCutter, &["nail cutter", "nail clipper"]),
            (OtherSharpItems, &["sharp object", "sharp item"]),
            (Powerbank, &["power bank", "powerbank"]),
            (Scissors, &["pair of scissors"]),
            (Hammer, &["hammer"]),
            (Pliers, &["plier", "pair of pliers"]),
            (Wrench, &["wrench", "spanner"]),
            (Screwdriver, &["screwdriver"]),
            (Handcuffs, &["pair of handcuffs"]),
            (Bullet, &["bullet", "cartridge"]),
        ]
        .into_iter()
        .map(|(c, v)| (c, strings(v)))
        .collect();

        let orientations = [
            (
                OrientationLabel::Horizontal,
                &["aligned horizontally", "placed horizontally", "lying horizontally", "positioned horizontally"][..],
            ),
            (
                OrientationLabel::Vertical,
                &["aligned vertically", "placed vertically", "standing vertically", "positioned vertically"],
            ),
            (
                OrientationLabel::Inclined,
                &["placed at an inclined angle", "lying at an inclined angle", "positioned at an inclined angle", "set at an inclined angle"],
            ),
        ]
        .into_iter()
        .map(|(k, v)| (k, strings(v)))
        .collect();

        let beside = &[
            "with the {occluders} lying beside it",
            "with the {occluders} placed beside it",
            "with the {occluders} kept beside it",
        ][..];
        let partial = &[
            "with the {occluders} partially covering it",
            "with it partially covered by the {occluders}",
            "with the {occluders} partly covering it",
        ][..];
        let full = &[
            "with it covered by the {occluders}",
            "with it fully covered by the {occluders}",
            "with the {occluders} covering it",
        ][..];
        let layered = &[
            "with it covered by layers of the {occluders}",
            "with it concealed under layers of the {occluders}",
            "with it hidden under layers of the {occluders}",
        ][..];
        let concealment = (1..=10u8)
            .map(|s| {
                let pool = match s {
                    1 => beside,
                    2..=5 => partial,
                    6..=8 => full,
                    _ => layered,
                };
                (s, strings(pool))
            })
            .collect();

        let locations = [
            (
                LocationLabel::Center,
                &["in the middle of the {bag}", "in the center of the {bag}", "at the center of the {bag}", "toward the middle of the {bag}"][..],
            ),
            (
                LocationLabel::Corner,
                &["in the corner of the {bag}", "toward the corner of the {bag}", "near the corner of the {bag}", "at the corner of the {bag}"],
            ),
        ]
        .into_iter()
        .map(|(k, v)| (k, strings(v)))
        .collect();

        SynonymPools {
            xray_descriptors: strings(&["X-ray scan", "X-ray image", "baggage X-ray scan", "X-ray baggage scan"]),
            positioning: strings(&["showing", "revealing", "displaying", "depicting"]),
            threats,
            orientations,
            concealment,
            locations,
            distractor_sentences: strings(&[
                "There are other items like {distractors} and other normal passenger items.",
                "There are also other items like {distractors} and other normal passenger items.",
                "There are other items such as {distractors} and other normal passenger items.",
            ]),
            nonthreat: strings(&[
                "{descriptor} {positioning} a {bag} with no threat items, containing {distractors} and other normal passenger items.",
                "{descriptor} {positioning} a {bag} with no threat items, holding {distractors} and other normal passenger items.",
                "{descriptor} {positioning} a {bag} without any threat items, containing {distractors} and other normal passenger items.",
            ]),
        }
    }
}

impl SynonymPools {
    pub fn load(path: &Path) -> Result<Self, CaptionError> {
        let pools: SynonymPools = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        pools.validate()?;
        Ok(pools)
    }

    pub fn validate(&self) -> Result<(), CaptionError> {
        let bad = |name: &str| Err(CaptionError::InvalidPools(name.to_string()));
        if self.xray_descriptors.is_empty() {
            return bad("xray_descriptors");
        }
        if self.positioning.is_empty() {
            return bad("positioning");
        }
        if self.distractor_sentences.is_empty() {
            return bad("distractor_sentences");
        }
        if self.nonthreat.is_empty() {
            return bad("nonthreat");
        }
        for c in ThreatCategory::THREATS {
            if self.threats.get(&c).is_none_or(|v| v.is_empty()) {
                return bad(&format!("threats.{}", c.id()));
            }
        }
        for s in 1..=10u8 {
            if self.concealment.get(&s).is_none_or(|v| v.is_empty()) {
                return bad(&format!("concealment.{s}"));
            }
        }
        for l in [LocationLabel::Center, LocationLabel::Corner] {
            if self.locations.get(&l).is_none_or(|v| v.is_empty()) {
                return bad("locations");
            }
        }
        for o in [OrientationLabel::Horizontal, OrientationLabel::Vertical, OrientationLabel::Inclined] {
            if self.orientations.get(&o).is_none_or(|v| v.is_empty()) {
                return bad("orientations");
            }
        }
        Ok(())
    }

    /// Pools with only the first entry of each list: sampling has no freedom.
    pub fn first_only(&self) -> SynonymPools {
        let one = |v: &Vec<String>| v.iter().take(1).cloned().collect::<Vec<_>>();
        SynonymPools {
            xray_descriptors: one(&self.xray_descriptors),
            positioning: one(&self.positioning),
            threats: self.threats.iter().map(|(k, v)| (*k, one(v))).collect(),
            orientations: self.orientations.iter().map(|(k, v)| (*k, one(v))).collect(),
            concealment: self.concealment.iter().map(|(k, v)| (*k, one(v))).collect(),
            locations: self.locations.iter().map(|(k, v)| (*k, one(v))).collect(),
            distractor_sentences: one(&self.distractor_sentences),
            nonthreat: one(&self.nonthreat),
        }
    }
}

/// A generated caption with the byte span of each threat noun phrase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub text: String,
    pub spans: Vec<[usize; 2]>,
}

fn pick<'a>(pool: &'a [String], rng: &mut impl Rng) -> &'a str {
    pool.choose(rng).map(String::as_str).unwrap_or("")
}

fn article(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Build a caption for `metadata`.
///
/// Draw order per threat: descriptor, positioning phrase (first clause only),
/// threat form, orientation, concealment template, location; then the
/// distractor sentence.
pub fn generate_caption(metadata: &SceneMetadata, pools: &SynonymPools, rng: &mut impl Rng) -> Caption {
    let bag = metadata.baggage_type.noun();
    let distractors = join_names(&metadata.distractor_names);
    if metadata.threats.is_empty() {
        let template = pick(&pools.nonthreat, rng);
        let descriptor = pick(&pools.xray_descriptors, rng);
        let positioning = pick(&pools.positioning, rng);
        let distractors = if distractors.is_empty() {
            "personal belongings".to_string()
        } else {
            distractors
        };
        let text = template
            .replace("{descriptor}", descriptor)
            .replace("{positioning}", positioning)
            .replace("{bag}", bag)
            .replace("{distractors}", &distractors);
        return Caption {
            text: capitalize(&text),
            spans: Vec::new(),
        };
    }

    let mut text = String::new();
    let mut spans = Vec::new();
    for (i, t) in metadata.threats.iter().enumerate() {
        if i == 0 {
            text.push_str(pick(&pools.xray_descriptors, rng));
            text.push(' ');
            text.push_str(pick(&pools.positioning, rng));
            text.push(' ');
        } else {
            text.push_str("; and ");
        }
        let form = pick(&pools.threats[&t.category], rng);
        let start = text.len();
        text.push_str(article(form));
        text.push(' ');
        text.push_str(form);
        spans.push([start, text.len()]);
        text.push(' ');
        text.push_str(pick(&pools.orientations[&t.orientation_label], rng));
        if t.variant == Some(ExplosiveVariant::Dispersed) {
            text.push_str(" with its container, circuit and power cell spread apart");
        }
        let names = if t.occluder_names.is_empty() {
            &t.nearby_names
        } else {
            &t.occluder_names
        };
        let sublevel = t.concealment_level.clamp(1, 10);
        let template = pick(&pools.concealment[&sublevel], rng);
        if !names.is_empty() {
            text.push_str(", ");
            text.push_str(&template.replace("{occluders}", &join_names(names)));
        }
        text.push_str(", ");
        text.push_str(&pick(&pools.locations[&t.location_label], rng).replace("{bag}", bag));
    }
    text.push('.');
    let sentence = pick(&pools.distractor_sentences, rng);
    if !distractors.is_empty() {
        text.push(' ');
        text.push_str(&sentence.replace("{distractors}", &distractors));
    }
    Caption { text, spans }
}

/// Caption using the per-scene stream `(pool_seed, index)`.
pub fn caption_for(metadata: &SceneMetadata, pools: &SynonymPools, pool_seed: u64, index: u64) -> Caption {
    let mut rng = cell_rng(pool_seed, index);
    generate_caption(metadata, pools, &mut rng)
}

/// Lowercased alphanumeric tokens; everything else separates.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Length of the longest common subsequence, O(n*m) time and O(m) space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Sentence-level ROUGE-L F-measure (beta = 1) on lowercased tokens with
/// punctuation stripped.
pub fn rouge_l(reference: &str, hypothesis: &str) -> Result<f64, CaptionError> {
    let r = tokenize(reference);
    let h = tokenize(hypothesis);
    if r.is_empty() || h.is_empty() {
        return Err(CaptionError::EmptyText);
    }
    let lcs = lcs_len(&r, &h) as f64;
    if lcs == 0.0 {
        return Ok(0.0);
    }
    let p = lcs / h.len() as f64;
    let rec = lcs / r.len() as f64;
    Ok(2.0 * p * rec / (p + rec))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub mean: f64,
    pub min: f64,
    pub flagged: Vec<String>,
    pub threshold: f64,
    pub count: usize,
}

impl ValidationReport {
    /// Gate on the mean score.
    pub fn passed(&self) -> bool {
        self.count == 0 || self.mean >= self.threshold
    }
}

/// Score stored captions against canonical captions regenerated from
/// metadata with `pool_seed`. Scenes below `threshold` are flagged; a caption
/// without tokens scores zero.
pub fn validate_corpus(records: &[ManifestRecord], pools: &SynonymPools, pool_seed: u64, threshold: f64) -> ValidationReport {
    let mut scores = Vec::with_capacity(records.len());
    let mut flagged = Vec::new();
    for rec in records {
        let canonical = caption_for(&rec.metadata, pools, pool_seed, rec.index);
        let score = rouge_l(&canonical.text, &rec.caption).unwrap_or(0.0);
        if score < threshold {
            flagged.push(rec.id.clone());
        }
        scores.push(score);
    }
    let count = scores.len();
    let mean = if count == 0 { 0.0 } else { scores.iter().sum::<f64>() / count as f64 };
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    ValidationReport {
        mean,
        min: if count == 0 { 0.0 } else { min },
        flagged,
        threshold,
        count,
    }
}

/// Recover `(threat, location)` per threat clause from a caption built with
/// `pools`. Clauses are split on `"; and "`; the distractor sentence is
/// ignored.
pub fn extract_mentions(caption: &str, pools: &SynonymPools) -> Vec<(ThreatCategory, LocationLabel)> {
    let first_sentence = caption.split(". ").next().unwrap_or(caption);
    let matcher = crate::eval::LabelMatcher::new(&ThreatCategory::THREATS);
    let mut out = Vec::new();
    for clause in first_sentence.split("; and ") {
        let Some(category) = matcher.find_all(clause).into_iter().next() else {
            continue;
        };
        let lower = clause.to_lowercase();
        let location = [LocationLabel::Corner, LocationLabel::Center].into_iter().find(|l| {
            pools.locations[l].iter().any(|tpl| {
                BaggageType::ALL
                    .iter()
                    .any(|b| lower.contains(&tpl.replace("{bag}", b.noun()).to_lowercase()))
            })
        });
        if let Some(location) = location {
            out.push((category, location));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{ClutterLevel, ThreatMeta};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lcs_brute(a: &[String], b: &[String]) -> usize {
        // Full table DP, independent of the rolling-row implementation.
        let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                t[i][j] = if a[i - 1] == b[j - 1] {
                    t[i - 1][j - 1] + 1
                } else {
                    t[i - 1][j].max(t[i][j - 1])
                };
            }
        }
        t[a.len()][b.len()]
    }

    pub(crate) fn powerbank_meta() -> SceneMetadata {
        SceneMetadata {
            baggage_type: BaggageType::Suitcase,
            clutter: ClutterLevel::Medium,
            concealment_sublevel: 6,
            threats: vec![ThreatMeta {
                category: ThreatCategory::Powerbank,
                location_label: LocationLabel::Center,
                orientation_label: OrientationLabel::Horizontal,
                concealment_level: 6,
                concealment_phrase: "covered by the metal grid and hangers".into(),
                occluder_names: vec!["metal grid".into(), "hangers".into()],
                nearby_names: vec![],
                coverage: 1.0,
                centroid_px: [128.0, 128.0],
                variant: None,
            }],
            distractor_names: vec!["cables".into(), "umbrella".into()],
        }
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l("the cat sat", "the cat sat").unwrap(), 1.0);
        assert_eq!(rouge_l("the cat sat", "a dog ran").unwrap(), 0.0);
        let f = rouge_l("the cat sat", "the cat ran").unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(rouge_l("", "x"), Err(CaptionError::EmptyText)));
        assert!(matches!(rouge_l("x", "?!"), Err(CaptionError::EmptyText)));
        assert_eq!(rouge_l("The CAT, sat.", "the cat sat").unwrap(), 1.0);
    }

    #[test]
    fn lcs_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vocab = ["a", "b", "c", "d", "e"];
        for _ in 0..300 {
            let n = rng.random_range(0..15);
            let m = rng.random_range(0..15);
            let a: Vec<String> = (0..n).map(|_| vocab[rng.random_range(0..5)].to_string()).collect();
            let b: Vec<String> = (0..m).map(|_| vocab[rng.random_range(0..5)].to_string()).collect();
            assert_eq!(lcs_len(&a, &b), lcs_brute(&a, &b));
        }
    }

    #[test]
    fn powerbank_caption_resembles_reference() {
        let meta = powerbank_meta();
        let pools = SynonymPools::default();
        let cap = generate_caption(&meta, &pools.first_only(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(
            cap.text,
            "X-ray scan showing a power bank aligned horizontally, with it covered by the metal grid \
             and hangers, in the middle of the suitcase. There are other items like cables and \
             umbrella and other normal passenger items."
        );
        assert_eq!(&cap.text[cap.spans[0][0]..cap.spans[0][1]], "a power bank");
        let reference = "X-ray scan showing a power bank aligned horizontally, in the middle of a travel bag, \
            with the power bank covered by the metal grid and hangers, along with some random cables for \
            distraction, and there are other items like an umbrella and other normal passenger items.";
        assert!(rouge_l(reference, &cap.text).unwrap() > 0.5);
    }

    #[test]
    fn single_entry_pools_are_deterministic() {
        let pools = SynonymPools::default().first_only();
        let meta = powerbank_meta();
        let a = generate_caption(&meta, &pools, &mut ChaCha8Rng::seed_from_u64(1));
        let b = generate_caption(&meta, &pools, &mut ChaCha8Rng::seed_from_u64(999));
        assert_eq!(a, b);
    }

    #[test]
    fn captions_contain_threat_form_and_location() {
        let pools = SynonymPools::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut meta = powerbank_meta();
        for i in 0..1000 {
            let c = ThreatCategory::THREATS[i % 20];
            let loc = if i % 3 == 0 { LocationLabel::Corner } else { LocationLabel::Center };
            meta.threats[0].category = c;
            meta.threats[0].location_label = loc;
            meta.threats[0].concealment_level = (i % 10) as u8 + 1;
            let cap = generate_caption(&meta, &pools, &mut rng);
            let phrase = &cap.text[cap.spans[0][0]..cap.spans[0][1]];
            assert!(pools.threats[&c].iter().any(|f| phrase.ends_with(f.as_str())));
            assert!(pools.locations[&loc]
                .iter()
                .any(|l| cap.text.contains(&l.replace("{bag}", "suitcase"))));
            assert_eq!(extract_mentions(&cap.text, &pools), vec![(c, loc)]);
        }
    }

    #[test]
    fn nonthreat_caption_lists_distractors() {
        let mut meta = powerbank_meta();
        meta.threats.clear();
        let cap = generate_caption(&meta, &SynonymPools::default(), &mut ChaCha8Rng::seed_from_u64(3));
        assert!(cap.spans.is_empty());
        assert!(cap.text.contains("cables and umbrella"));
        assert!(extract_mentions(&cap.text, &SynonymPools::default()).is_empty());
    }

    #[test]
    fn default_pools_validate_and_roundtrip_json() {
        let pools = SynonymPools::default();
        pools.validate().unwrap();
        let json = serde_json::to_string(&pools).unwrap();
        let back: SynonymPools = serde_json::from_str(&json).unwrap();
        assert_eq!(back, pools);
        let mut broken = pools.clone();
        broken.threats.remove(&ThreatCategory::Gun);
        assert!(broken.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rouge_is_symmetric_and_bounded(
                a in proptest::collection::vec("[a-d]{1,2}", 1..20),
                b in proptest::collection::vec("[a-d]{1,2}", 1..20),
            ) {
                let (a, b) = (a.join(" "), b.join(" "));
                let ab = rouge_l(&a, &b).unwrap();
                let ba = rouge_l(&b, &a).unwrap();
                prop_assert!((ab - ba).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&ab));
            }
        }
    }
}
