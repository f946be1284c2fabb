//! Protocol grid enumeration and scene composition.
//!
//! Every spec carries its own seed, derived from the master seed and the cell
//! index through a ChaCha stream, so any subset of the grid can be composed
//! in any order (or in parallel) with identical results.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{self, DISTRACTORS};
use crate::render::{self, PathIntegralImage, ThreatMask};
use crate::scene::{
    classify_location_with, classify_orientation, item_frame, BaggageType, Channel, ClutterLevel, Euler,
    ExplosiveVariant, ItemRole, ItemShape, LocationBand, LocationLabel, MaterialClass,
    OrientationLabel, PlacedItem, Primitive, SceneError, SceneMetadata, SceneSpec, SolidKind,
    ThreatCategory, ThreatMeta, ThreatSpec, VoxelVolume,
};

#[derive(Debug, Error, PartialEq)]
pub enum ComposeError {
    #[error("protocol axis `{0}` is empty")]
    EmptyAxis(&'static str),
    #[error("invalid protocol config: {0}")]
    InvalidConfig(String),
    #[error("could not place {0} inside the scene volume")]
    PlacementOverflow(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// Seeded per-cell stream: `(master_seed, cell_index)` fully determines it.
pub fn cell_rng(master_seed: u64, cell_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(cell_index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub categories: Vec<ThreatCategory>,
    pub locations: Vec<LocationLabel>,
    pub poses: Vec<OrientationLabel>,
    pub clutter_levels: Vec<ClutterLevel>,
    pub sublevels: Vec<u8>,
    pub baggage_types: Vec<BaggageType>,
    pub repeats_per_cell: u32,
    pub nonthreat_fraction: f64,
    pub master_seed: u64,
    pub image_size: [u32; 2],
    /// Beam-axis depth of the scene volume; x/y follow `image_size`.
    pub volume_depth: u32,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            categories: ThreatCategory::THREATS.to_vec(),
            locations: vec![LocationLabel::Center, LocationLabel::Corner],
            poses: vec![
                OrientationLabel::Horizontal,
                OrientationLabel::Vertical,
                OrientationLabel::Inclined,
            ],
            clutter_levels: ClutterLevel::ALL.to_vec(),
            sublevels: (1..=10).collect(),
            baggage_types: BaggageType::ALL.to_vec(),
            repeats_per_cell: 1,
            nonthreat_fraction: 0.0,
            master_seed: 0,
            image_size: [256, 256],
            volume_depth: 32,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), ComposeError> {
        macro_rules! nonempty {
            ($($field:ident),*) => {$(
                if self.$field.is_empty() {
                    return Err(ComposeError::EmptyAxis(stringify!($field)));
                }
            )*};
        }
        nonempty!(categories, locations, poses, clutter_levels, sublevels, baggage_types);
        if self.repeats_per_cell == 0 {
            return Err(ComposeError::InvalidConfig("repeats_per_cell must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.nonthreat_fraction) {
            return Err(ComposeError::InvalidConfig("nonthreat_fraction must be in [0, 1)".into()));
        }
        if let Some(s) = self.sublevels.iter().find(|s| !(1..=10).contains(*s)) {
            return Err(ComposeError::InvalidConfig(format!("sublevel {s} outside 1..=10")));
        }
        if self.categories.contains(&ThreatCategory::Nonthreat) {
            return Err(ComposeError::InvalidConfig(
                "nonthreat scenes come from nonthreat_fraction, not categories".into(),
            ));
        }
        if self.volume_depth < 16 || self.image_size.iter().any(|&d| d < 16) {
            return Err(ComposeError::InvalidConfig("volume dims must each be >= 16".into()));
        }
        Ok(())
    }

    /// Number of threat cells, repeats included.
    pub fn threat_cell_count(&self) -> usize {
        self.categories.len()
            * self.locations.len()
            * self.poses.len()
            * self.clutter_levels.len()
            * self.sublevels.len()
            * self.baggage_types.len()
            * self.repeats_per_cell as usize
    }

    pub fn nonthreat_count(&self) -> usize {
        (self.nonthreat_fraction * self.threat_cell_count() as f64).ceil() as usize
    }

    pub fn volume_dims(&self) -> [u32; 3] {
        [self.image_size[0], self.image_size[1], self.volume_depth]
    }
}

/// Expand the protocol grid into scene specs, threat cells first (category
/// outermost, repeat innermost), then nonthreat scenes.
pub fn enumerate_grid(config: &ProtocolConfig) -> Result<Vec<SceneSpec>, ComposeError> {
    config.validate()?;
    let mut specs = Vec::with_capacity(config.threat_cell_count() + config.nonthreat_count());
    let mut index = 0u64;
    for &category in &config.categories {
        for &location in &config.locations {
            for &pose_label in &config.poses {
                for &clutter in &config.clutter_levels {
                    for &sublevel in &config.sublevels {
                        for &baggage_type in &config.baggage_types {
                            for _ in 0..config.repeats_per_cell {
                                let mut rng = cell_rng(config.master_seed, index);
                                let seed = rng.next_u64();
                                let variant = (category == ThreatCategory::Explosive).then(|| {
                                    if rng.random_bool(0.5) {
                                        ExplosiveVariant::Dispersed
                                    } else {
                                        ExplosiveVariant::Cohesive
                                    }
                                });
                                specs.push(SceneSpec {
                                    seed,
                                    baggage_type,
                                    clutter,
                                    concealment_sublevel: sublevel,
                                    threats: vec![ThreatSpec {
                                        category,
                                        location,
                                        pose_label,
                                        variant,
                                    }],
                                    image_size: config.image_size,
                                    volume_dims: config.volume_dims(),
                                });
                                index += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    for n in 0..config.nonthreat_count() {
        let mut rng = cell_rng(config.master_seed, index);
        specs.push(SceneSpec {
            seed: rng.next_u64(),
            baggage_type: config.baggage_types[n % config.baggage_types.len()],
            clutter: config.clutter_levels[n % config.clutter_levels.len()],
            concealment_sublevel: config.sublevels[n % config.sublevels.len()],
            threats: Vec::new(),
            image_size: config.image_size,
            volume_dims: config.volume_dims(),
        });
        index += 1;
    }
    Ok(specs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum Placement {
    Beside,
    /// Covers the threat's box from its left edge over `span` of its width.
    PartiallyOver { span: f64 },
    FullyOver,
    LayeredOver,
}

impl Placement {
    /// Fraction of the threat box width this placement covers.
    pub fn span(&self) -> f64 {
        match self {
            Placement::Beside => 0.0,
            Placement::PartiallyOver { span } => *span,
            Placement::FullyOver | Placement::LayeredOver => 1.0,
        }
    }

    pub fn overlaps(&self) -> bool {
        self.span() > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedOccluder {
    pub name: String,
    pub material: MaterialClass,
    pub placement: Placement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccluderPlan {
    pub sublevel: u8,
    pub occluders: Vec<PlannedOccluder>,
}

impl OccluderPlan {
    /// Fraction of the threat box width under at least one occluder. All
    /// overlapping placements start at the box's left edge, so this is the
    /// maximum span.
    pub fn span(&self) -> f64 {
        self.occluders
            .iter()
            .map(|o| o.placement.span())
            .fold(0.0, f64::max)
    }
}

/// Occluder ladder: per sublevel, (material, placement) in placement order.
fn ladder(sublevel: u8) -> Vec<(MaterialClass, Placement)> {
    use MaterialClass::*;
    use Placement::*;
    let p = |span| PartiallyOver { span };
    match sublevel {
        1 => vec![(Organic, Beside)],
        2 => vec![(Organic, Beside), (Organic, p(0.25))],
        3 => vec![(Organic, Beside), (Organic, p(0.4))],
        4 => vec![(Polymer, Beside), (Organic, p(0.55)), (Mixed, p(0.3))],
        5 => vec![(Organic, Beside), (Mixed, p(0.7)), (Inorganic, p(0.4))],
        6 => vec![(Organic, Beside), (Organic, FullyOver), (Mixed, p(0.5))],
        7 => vec![(Polymer, Beside), (Mixed, FullyOver), (Inorganic, p(0.6)), (Organic, p(0.3))],
        8 => vec![(Organic, Beside), (Inorganic, FullyOver), (Metal, p(0.5)), (Organic, p(0.8))],
        9 => vec![
            (Organic, Beside),
            (Metal, FullyOver),
            (Organic, LayeredOver),
            (Metal, p(0.5)),
            (Mixed, Beside),
        ],
        _ => vec![
            (Organic, Beside),
            (Metal, LayeredOver),
            (Metal, FullyOver),
            (Organic, LayeredOver),
            (Inorganic, p(0.6)),
            (Mixed, Beside),
        ],
    }
}

/// Concealment plan for one threat.
///
/// Geometry (placement rules and spans) is fixed per sublevel, which makes
/// both occluder count and coverage non-decreasing in the sublevel; `rng`
/// only picks item names from each material's palette. Sublevels 9 and 10
/// always draw their first full-cover metal occluder as a metal grid.
pub fn occluders_for(sublevel: u8, _threat: ThreatCategory, rng: &mut impl Rng) -> OccluderPlan {
    assert!((1..=10).contains(&sublevel), "sublevel must be in 1..=10");
    let mut used: Vec<String> = Vec::new();
    let mut occluders = Vec::new();
    for (i, (material, placement)) in ladder(sublevel).into_iter().enumerate() {
        let name = if sublevel >= 9 && material == MaterialClass::Metal && placement == Placement::FullyOver {
            "metal grid".to_string()
        } else {
            let palette: Vec<&str> = catalog::occluder_names(material)
                .iter()
                .copied()
                .filter(|n| !used.iter().any(|u| u == n) && !(catalog::is_grid(n) && placement.span() < 1.0))
                .collect();
            palette
                .choose(rng)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("layer {}", i + 1))
        };
        used.push(name.clone());
        occluders.push(PlannedOccluder {
            name,
            material,
            placement,
        });
    }
    OccluderPlan { sublevel, occluders }
}

/// Join names as "a", "a and b", "a, b and c".
pub fn join_names(names: &[String]) -> String {
    match names {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {}", init.join(", "), last),
    }
}

/// Metadata concealment phrase for a plan.
pub fn concealment_phrase(plan: &OccluderPlan) -> String {
    let over: Vec<String> = plan
        .occluders
        .iter()
        .filter(|o| o.placement.overlaps())
        .map(|o| o.name.clone())
        .collect();
    let beside: Vec<String> = plan
        .occluders
        .iter()
        .filter(|o| !o.placement.overlaps())
        .map(|o| o.name.clone())
        .collect();
    let full = plan
        .occluders
        .iter()
        .any(|o| matches!(o.placement, Placement::FullyOver | Placement::LayeredOver));
    if over.is_empty() {
        if beside.is_empty() {
            "in plain view".to_string()
        } else {
            format!("lying beside the {}", join_names(&beside))
        }
    } else if full {
        format!("covered by the {}", join_names(&over))
    } else {
        format!("partially covered by the {}", join_names(&over))
    }
}

/// Distractor count range per clutter level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComposeConfig {
    pub limited: (usize, usize),
    pub medium: (usize, usize),
    pub heavy: (usize, usize),
    pub extreme: (usize, usize),
    pub location_band: LocationBand,
    /// Re-placement attempts when a threat lands outside its requested zone.
    pub placement_retries: usize,
    pub mask_eps: f64,
}

impl Default for ComposeConfig {
    fn default() -> Self {
        ComposeConfig {
            limited: (2, 4),
            medium: (5, 8),
            heavy: (9, 14),
            extreme: (15, 20),
            location_band: LocationBand::default(),
            placement_retries: 8,
            mask_eps: 1e-6,
        }
    }
}

impl ComposeConfig {
    pub fn distractor_range(&self, clutter: ClutterLevel) -> (usize, usize) {
        match clutter {
            ClutterLevel::Limited => self.limited,
            ClutterLevel::Medium => self.medium,
            ClutterLevel::Heavy => self.heavy,
            ClutterLevel::Extreme => self.extreme,
        }
    }
}

/// Output of [`compose_scene`].
#[derive(Debug, Clone)]
pub struct ComposedScene {
    pub volume: VoxelVolume,
    pub metadata: SceneMetadata,
    pub placements: Vec<PlacedItem>,
    /// One mask per metadata threat, at image resolution.
    pub threat_masks: Vec<ThreatMask>,
}

struct Frame {
    dims: [usize; 3],
    image: (usize, usize),
    scale: f64,
}

impl Frame {
    fn to_voxel(&self, fx: f64, fy: f64) -> (f64, f64) {
        (fx * self.dims[0] as f64, fy * self.dims[1] as f64)
    }
}

fn sample_pose(label: OrientationLabel, rng: &mut impl Rng) -> Euler {
    let jitter = rng.random_range(-8.0f64..8.0).to_radians();
    let flip = if rng.random_bool(0.5) { std::f64::consts::PI } else { 0.0 };
    let psi = match label {
        OrientationLabel::Horizontal => jitter + flip,
        OrientationLabel::Vertical => std::f64::consts::FRAC_PI_2 + jitter + flip,
        OrientationLabel::Inclined => {
            let a = rng.random_range(30.0f64..60.0).to_radians();
            let s = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            s * a + flip
        }
    };
    let phi = rng.random_range(-5.0f64..5.0).to_radians();
    let theta = rng.random_range(-5.0f64..5.0).to_radians();
    Euler::new(phi, theta, psi)
}

/// Target centroid as image fractions for a location label.
fn sample_target(location: LocationLabel, rng: &mut impl Rng) -> (f64, f64) {
    match location {
        LocationLabel::Center => (rng.random_range(0.38..0.62), rng.random_range(0.38..0.62)),
        LocationLabel::Corner => {
            let pick = |rng: &mut dyn RngCore| {
                let edge: f64 = rng.random_range(0.12..0.2);
                if rng.random_bool(0.5) {
                    edge
                } else {
                    1.0 - edge
                }
            };
            (pick(rng), pick(rng))
        }
    }
}

/// Place an item so its frame center sits at voxel `(cx, cy)`, clamped into
/// bounds; `z` is drawn uniformly. `None` when the frame cannot fit at all.
fn place_at(
    shape: ItemShape,
    pose: Euler,
    (cx, cy): (f64, f64),
    dims: [usize; 3],
    rng: &mut impl Rng,
) -> Option<PlacedItem> {
    let mut item = PlacedItem {
        shape,
        category: None,
        name: String::new(),
        role: ItemRole::Distractor,
        target: None,
        position: [0, 0, 0],
        pose,
    };
    let mut f = item.frame_dims();
    if f[2] > dims[2] {
        // Too deep once tilted: drop the out-of-plane components.
        item.pose = Euler::in_plane(pose.psi);
        f = item.frame_dims();
    }
    if (0..3).any(|a| f[a] > dims[a]) {
        return None;
    }
    let clamp = |c: f64, size: usize, dim: usize| -> i32 {
        let p = (c - size as f64 / 2.0).round() as i64;
        p.clamp(0, (dim - size) as i64) as i32
    };
    let z = rng.random_range(0..=(dims[2] - f[2])) as i32;
    item.position = [clamp(cx, f[0], dims[0]), clamp(cy, f[1], dims[1]), z];
    Some(item)
}

/// An item with its rasterized frame, so each rotation is computed once.
type Framed<'a> = (&'a PlacedItem, &'a VoxelVolume);

fn scene_path(items: &[Framed<'_>], frame: &Frame) -> PathIntegralImage {
    let mut path = PathIntegralImage::zeros(frame.dims[0], frame.dims[1]);
    for (item, f) in items {
        render::add_frame_path(&mut path, f, item.position, Channel::Low);
    }
    path
}

fn mask_of(items: &[Framed<'_>], frame: &Frame, eps: f64) -> ThreatMask {
    ThreatMask::from_path(&scene_path(items, frame).resample(frame.image.0, frame.image.1), eps)
}

fn voxel_mask_bbox(items: &[Framed<'_>], frame: &Frame, eps: f64) -> Option<render::PixelBox> {
    render::bbox_of(&ThreatMask::from_path(&scene_path(items, frame), eps)).ok()
}

fn rects_overlap(a: ([i64; 3], [i64; 3]), b: ([i64; 3], [i64; 3])) -> bool {
    a.0[0] < b.1[0] && b.0[0] < a.1[0] && a.0[1] < b.1[1] && b.0[1] < a.1[1]
}

/// Place the parts of one threat. Returns the parts with role and target set.
fn place_threat(
    spec: &ThreatSpec,
    target: usize,
    frame: &Frame,
    taken: &[([i64; 3], [i64; 3])],
    cfg: &ComposeConfig,
    rng: &mut impl Rng,
) -> Result<Vec<(PlacedItem, VoxelVolume)>, ComposeError> {
    let parts = catalog::threat_parts(spec.category, spec.variant, frame.scale);
    let pose = sample_pose(spec.pose_label, rng);
    let mut best: Option<Vec<(PlacedItem, VoxelVolume)>> = None;
    // The primary part keeps its pose across attempts; rotate it once.
    let mut primary_frame: Option<(Euler, VoxelVolume)> = None;
    for _attempt in 0..=cfg.placement_retries {
        let (fx, fy) = sample_target(spec.location, rng);
        let mut placed: Vec<(PlacedItem, VoxelVolume)> = Vec::new();
        for (k, part) in parts.iter().enumerate() {
            let center = if k == 0 {
                frame.to_voxel(fx, fy)
            } else {
                // Dispersed components go elsewhere in the bag, apart from the rest.
                frame.to_voxel(rng.random_range(0.15..0.85), rng.random_range(0.15..0.85))
            };
            let part_pose = if k == 0 { pose } else { sample_pose(OrientationLabel::Inclined, rng) };
            let mut item = place_at(part.shape.clone(), part_pose, center, frame.dims, rng)
                .ok_or_else(|| ComposeError::PlacementOverflow(part.name.to_string()))?;
            item.category = Some(spec.category);
            item.name = part.name.to_string();
            item.role = ItemRole::Threat;
            item.target = Some(target);
            let f = match &primary_frame {
                Some((p, f)) if k == 0 && *p == item.pose => f.clone(),
                _ => {
                    let f = item_frame(&item);
                    if k == 0 {
                        primary_frame = Some((item.pose, f.clone()));
                    }
                    f
                }
            };
            placed.push((item, f));
        }
        let collides = placed.iter().enumerate().any(|(i, (a, _))| {
            taken.iter().any(|t| rects_overlap(a.footprint(), *t))
                || placed[i + 1..].iter().any(|(b, _)| rects_overlap(a.footprint(), b.footprint()))
        });
        let refs: Vec<Framed<'_>> = placed.iter().map(|(p, f)| (p, f)).collect();
        let mask = mask_of(&refs, frame, cfg.mask_eps);
        let label = mask
            .centroid()
            .map(|c| classify_location_with(cfg.location_band, c, (frame.image.0 as u32, frame.image.1 as u32)));
        let ok = label == Some(spec.location) && !collides;
        if ok {
            return Ok(placed);
        }
        if best.is_none() && mask.count() > 0 {
            best = Some(placed);
        }
    }
    // Out of retries: keep the first visible attempt; metadata is derived
    // from where it actually landed.
    best.ok_or_else(|| ComposeError::PlacementOverflow(spec.category.label().to_string()))
}

fn sheet_shape(name: &str, material: MaterialClass, w: u32, h: u32, thickness: u32) -> ItemShape {
    if catalog::is_grid(name) {
        let pitch = 6u32;
        let bar = 2u32;
        let mut primitives = Vec::new();
        let mut x = 0;
        while x < w {
            primitives.push(Primitive::new(SolidKind::Box, [bar.min(w - x), h, thickness], [x as i32, 0, 0]));
            x += pitch;
        }
        let mut y = 0;
        while y < h {
            primitives.push(Primitive::new(SolidKind::Box, [w, bar.min(h - y), thickness], [0, y as i32, 0]));
            y += pitch;
        }
        ItemShape { primitives, material }
    } else {
        ItemShape::single(SolidKind::Box, [w, h, thickness], material)
    }
}

/// Build occluder items for one threat whose voxel-space box is `b`.
fn place_occluders(
    plan: &OccluderPlan,
    target: usize,
    b: render::PixelBox,
    frame: &Frame,
    rng: &mut impl Rng,
) -> Vec<PlacedItem> {
    let [nx, ny, nz] = frame.dims;
    let margin = 2i64;
    let thickness = ((2.0 * frame.scale).round() as u32).clamp(1, (nz / 4).max(1) as u32);
    let (bx0, by0, bx1, by1) = (b.x_min as i64, b.y_min as i64, b.x_max as i64, b.y_max as i64);
    let bw = (bx1 - bx0 + 1) as f64;
    let y0 = (by0 - margin).max(0);
    let y1 = (by1 + margin).min(ny as i64 - 1);
    let mut out = Vec::new();
    for occ in &plan.occluders {
        let z = rng.random_range(0..=(nz as u32 - thickness)) as i32;
        let mut item = match occ.placement {
            Placement::Beside => {
                // Strip next to the box on whichever side has room.
                let w = ((bw * 0.5).round() as i64).max(2);
                let candidates = [(bx1 + 1 + margin, bx1 + margin + w), (bx0 - margin - w, bx0 - 1 - margin)];
                let Some(&(x0, x1)) = candidates
                    .iter()
                    .find(|(x0, x1)| *x0 >= 0 && *x1 < nx as i64 && x1 >= x0)
                else {
                    continue;
                };
                PlacedItem {
                    shape: sheet_shape(&occ.name, occ.material, (x1 - x0 + 1) as u32, (y1 - y0 + 1) as u32, thickness),
                    category: None,
                    name: occ.name.clone(),
                    role: ItemRole::Occluder,
                    target: Some(target),
                    position: [x0 as i32, y0 as i32, z],
                    pose: Euler::default(),
                }
            }
            p => {
                let x0 = (bx0 - margin).max(0);
                let x1 = if p.span() >= 1.0 {
                    (bx1 + margin).min(nx as i64 - 1)
                } else {
                    // Exclusive cut at bx0 + span * width.
                    ((bx0 as f64 + p.span() * bw).ceil() as i64 - 1).clamp(x0, nx as i64 - 1)
                };
                PlacedItem {
                    shape: sheet_shape(&occ.name, occ.material, (x1 - x0 + 1) as u32, (y1 - y0 + 1) as u32, thickness),
                    category: None,
                    name: occ.name.clone(),
                    role: ItemRole::Occluder,
                    target: Some(target),
                    position: [x0 as i32, y0 as i32, z],
                    pose: Euler::default(),
                }
            }
        };
        if matches!(occ.placement, Placement::LayeredOver) {
            // Two stacked sheets of the same material.
            let e = item.shape.extent();
            let t = e[2];
            if 2 * t <= nz as u32 {
                let mut second = item.shape.primitives.clone();
                for p in &mut second {
                    p.offset[2] += t as i32;
                }
                item.shape.primitives.extend(second);
                item.position[2] = item.position[2].min((nz as u32 - 2 * t) as i32);
            }
        }
        out.push(item);
    }
    out
}

/// Compose a scene volume, its metadata and the placement list from a spec.
///
/// Draw order from the spec's stream: bag shell, threats, occluders,
/// distractors. Threat geometry therefore does not depend on the sublevel or
/// clutter of the cell.
pub fn compose_scene(spec: &SceneSpec, cfg: &ComposeConfig) -> Result<ComposedScene, ComposeError> {
    spec.validate()?;
    let dims = spec.dims();
    let frame = Frame {
        dims,
        image: (spec.image_size[0] as usize, spec.image_size[1] as usize),
        scale: dims[0].min(dims[1]) as f64 / 256.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut placements: Vec<PlacedItem> = Vec::new();

    // Bag shell.
    let ([fw, fh], shell_material) = catalog::bag_shell(spec.baggage_type);
    let sw = ((dims[0] as f64 * fw) as u32).max(1);
    let sh = ((dims[1] as f64 * fh) as u32).max(1);
    placements.push(PlacedItem {
        shape: ItemShape::single(SolidKind::Box, [sw, sh, 1], shell_material),
        category: None,
        name: format!("{} shell", spec.baggage_type.noun()),
        role: ItemRole::Distractor,
        target: None,
        position: [((dims[0] as u32 - sw) / 2) as i32, ((dims[1] as u32 - sh) / 2) as i32, 0],
        pose: Euler::default(),
    });
    // Frames parallel to `placements`.
    let mut frames: Vec<VoxelVolume> = vec![item_frame(&placements[0])];

    // Threats.
    let mut taken: Vec<([i64; 3], [i64; 3])> = Vec::new();
    let mut threat_ranges = Vec::new();
    for (t, ts) in spec.threats.iter().enumerate() {
        let parts = place_threat(ts, t, &frame, &taken, cfg, &mut rng)?;
        taken.extend(parts.iter().map(|(p, _)| p.footprint()));
        let start = placements.len();
        for (p, f) in parts {
            placements.push(p);
            frames.push(f);
        }
        threat_ranges.push(start..placements.len());
    }

    // Occluders.
    let mut plans = Vec::new();
    for (t, ts) in spec.threats.iter().enumerate() {
        let plan = occluders_for(spec.concealment_sublevel, ts.category, &mut rng);
        // Occluders conceal the primary part (the container for dispersed explosives).
        let first = threat_ranges[t].start;
        let b = voxel_mask_bbox(&[(&placements[first], &frames[first])], &frame, cfg.mask_eps)
            .ok_or_else(|| ComposeError::PlacementOverflow(ts.category.label().to_string()))?;
        let occluders = place_occluders(&plan, t, b, &frame, &mut rng);
        frames.extend(occluders.iter().map(item_frame));
        placements.extend(occluders);
        plans.push(plan);
    }

    // Distractors.
    let (lo, hi) = cfg.distractor_range(spec.clutter);
    let count = rng.random_range(lo..=hi.max(lo));
    let mut kinds: Vec<usize> = (0..DISTRACTORS.len()).collect();
    kinds.shuffle(&mut rng);
    let mut distractor_names = Vec::new();
    for i in 0..count {
        let kind = DISTRACTORS[kinds[i % kinds.len()]];
        let pose = Euler::new(
            rng.random_range(-3.0f64..3.0).to_radians(),
            rng.random_range(-3.0f64..3.0).to_radians(),
            rng.random_range(0.0..std::f64::consts::PI),
        );
        let center = frame.to_voxel(rng.random_range(0.1..0.9), rng.random_range(0.1..0.9));
        let Some(mut item) = place_at(kind.shape(frame.scale), pose, center, dims, &mut rng) else {
            continue;
        };
        item.name = kind.name.to_string();
        if !distractor_names.contains(&item.name) {
            distractor_names.push(item.name.clone());
        }
        frames.push(item_frame(&item));
        placements.push(item);
    }

    let mut volume = VoxelVolume::zeros(dims);
    for (item, f) in placements.iter().zip(&frames) {
        volume.add_frame(item, f)?;
    }

    // Metadata from the final placement.
    let image_size = (frame.image.0 as u32, frame.image.1 as u32);
    let mut threats = Vec::new();
    let mut threat_masks = Vec::new();
    for (t, ts) in spec.threats.iter().enumerate() {
        let parts: Vec<Framed<'_>> = threat_ranges[t].clone().map(|i| (&placements[i], &frames[i])).collect();
        let mask = mask_of(&parts, &frame, cfg.mask_eps);
        // Coverage is measured on the primary part, which is what the occluders target.
        let primary = mask_of(&parts[..1], &frame, cfg.mask_eps);
        let centroid = mask
            .centroid()
            .ok_or_else(|| ComposeError::PlacementOverflow(ts.category.label().to_string()))?;
        let occluders: Vec<Framed<'_>> = placements
            .iter()
            .zip(&frames)
            .filter(|(p, _)| p.role == ItemRole::Occluder && p.target == Some(t))
            .collect();
        let cover = mask_of(&occluders, &frame, cfg.mask_eps);
        let covered = primary
            .data
            .iter()
            .zip(&cover.data)
            .filter(|(m, c)| **m && **c)
            .count();
        let plan = &plans[t];
        threats.push(ThreatMeta {
            category: ts.category,
            location_label: classify_location_with(cfg.location_band, centroid, image_size),
            orientation_label: classify_orientation(&parts[0].0.pose),
            concealment_level: spec.concealment_sublevel,
            concealment_phrase: concealment_phrase(plan),
            occluder_names: plan
                .occluders
                .iter()
                .filter(|o| o.placement.overlaps())
                .map(|o| o.name.clone())
                .collect(),
            nearby_names: plan
                .occluders
                .iter()
                .filter(|o| !o.placement.overlaps())
                .map(|o| o.name.clone())
                .collect(),
            coverage: covered as f64 / primary.count().max(1) as f64,
            centroid_px: [centroid.0, centroid.1],
            variant: ts.variant,
        });
        threat_masks.push(mask);
    }

    Ok(ComposedScene {
        volume,
        metadata: SceneMetadata {
            baggage_type: spec.baggage_type,
            clutter: spec.clutter,
            concealment_sublevel: spec.concealment_sublevel,
            threats,
            distractor_names,
        },
        placements,
        threat_masks,
    })
}
