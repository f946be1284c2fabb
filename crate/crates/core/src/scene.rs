//! Scene vocabulary: materials, the threat taxonomy, parametric item shapes,
//! placed items, scene specifications and the metadata derived from a
//! composed scene.
//!
//! Geometry conventions: volumes are indexed `(x, y, z)` with `z` the beam
//! axis. Image pixel `(u, v)` corresponds to voxel column `(x, y)`. Item poses
//! are Euler angles applied as `Rz(psi) * Ry(theta) * Rx(phi)`, so `psi` is the
//! in-plane rotation seen in the projected image.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::render;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("item footprint {min:?}..{max:?} exceeds volume dims {dims:?}")]
    OutOfBounds {
        min: [i64; 3],
        max: [i64; 3],
        dims: [usize; 3],
    },
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
}

/// Dual-energy material class.
///
/// Coefficients are attenuation per voxel length. The high/low ratio is what
/// the colorizer uses to tell classes apart, so the ratios are spread at least
/// 0.05 apart; metals have the lowest ratio because photoelectric absorption
/// dominates their low-energy channel.
///
/// | class     | mu_low | mu_high | ratio |
/// |-----------|--------|---------|-------|
/// | Metal     | 0.30   | 0.150   | 0.50  |
/// | Inorganic | 0.12   | 0.078   | 0.65  |
/// | Mixed     | 0.09   | 0.0648  | 0.72  |
/// | Organic   | 0.06   | 0.048   | 0.80  |
/// | Polymer   | 0.03   | 0.0264  | 0.88  |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterialClass {
    Metal,
    Inorganic,
    Mixed,
    Organic,
    Polymer,
}

impl MaterialClass {
    pub const ALL: [MaterialClass; 5] = [
        MaterialClass::Metal,
        MaterialClass::Inorganic,
        MaterialClass::Mixed,
        MaterialClass::Organic,
        MaterialClass::Polymer,
    ];

    pub fn mu_low(self) -> f64 {
        match self {
            MaterialClass::Metal => 0.30,
            MaterialClass::Inorganic => 0.12,
            MaterialClass::Mixed => 0.09,
            MaterialClass::Organic => 0.06,
            MaterialClass::Polymer => 0.03,
        }
    }

    pub fn mu_high(self) -> f64 {
        match self {
            MaterialClass::Metal => 0.150,
            MaterialClass::Inorganic => 0.078,
            MaterialClass::Mixed => 0.0648,
            MaterialClass::Organic => 0.048,
            MaterialClass::Polymer => 0.0264,
        }
    }

    /// `mu_high / mu_low`.
    pub fn ratio(self) -> f64 {
        self.mu_high() / self.mu_low()
    }

    /// Color family the pseudo-colorizer assigns to this class.
    pub fn hue_family(self) -> HueFamily {
        match self {
            MaterialClass::Metal => HueFamily::Blue,
            MaterialClass::Inorganic | MaterialClass::Mixed => HueFamily::Green,
            MaterialClass::Organic | MaterialClass::Polymer => HueFamily::Orange,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HueFamily {
    Blue,
    Green,
    Orange,
}

impl HueFamily {
    /// Representative hue in degrees.
    pub fn hue_degrees(self) -> f64 {
        match self {
            HueFamily::Blue => 222.0,
            HueFamily::Green => 115.0,
            HueFamily::Orange => 32.0,
        }
    }
}

/// The closed threat taxonomy plus `nonthreat`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThreatCategory {
    Explosive,
    Gun,
    #[serde(rename = "3d_printed_gun")]
    ThreeDPrintedGun,
    Knife,
    Cutter,
    Blade,
    ShavingRazor,
    Lighter,
    Syringe,
    Battery,
    NailCutter,
    OtherSharpItems,
    Powerbank,
    Scissors,
    Hammer,
    Pliers,
    Wrench,
    Screwdriver,
    Handcuffs,
    Bullet,
    Nonthreat,
}

impl ThreatCategory {
    /// The 20 threat classes, in classification-prompt order.
    pub const THREATS: [ThreatCategory; 20] = [
        ThreatCategory::Explosive,
        ThreatCategory::Gun,
        ThreatCategory::ThreeDPrintedGun,
        ThreatCategory::Knife,
        ThreatCategory::Cutter,
        ThreatCategory::Blade,
        ThreatCategory::ShavingRazor,
        ThreatCategory::Lighter,
        ThreatCategory::Syringe,
        ThreatCategory::Battery,
        ThreatCategory::NailCutter,
        ThreatCategory::OtherSharpItems,
        ThreatCategory::Powerbank,
        ThreatCategory::Scissors,
        ThreatCategory::Hammer,
        ThreatCategory::Pliers,
        ThreatCategory::Wrench,
        ThreatCategory::Screwdriver,
        ThreatCategory::Handcuffs,
        ThreatCategory::Bullet,
    ];

    /// Threat classes followed by `nonthreat`: the 21-label vocabulary.
    pub fn vocabulary() -> Vec<ThreatCategory> {
        let mut v = Self::THREATS.to_vec();
        v.push(ThreatCategory::Nonthreat);
        v
    }

    /// Machine identifier, identical to the serde form.
    pub fn id(self) -> &'static str {
        match self {
            ThreatCategory::Explosive => "explosive",
            ThreatCategory::Gun => "gun",
            ThreatCategory::ThreeDPrintedGun => "3d_printed_gun",
            ThreatCategory::Knife => "knife",
            ThreatCategory::Cutter => "cutter",
            ThreatCategory::Blade => "blade",
            ThreatCategory::ShavingRazor => "shaving_razor",
            ThreatCategory::Lighter => "lighter",
            ThreatCategory::Syringe => "syringe",
            ThreatCategory::Battery => "battery",
            ThreatCategory::NailCutter => "nail_cutter",
            ThreatCategory::OtherSharpItems => "other_sharp_items",
            ThreatCategory::Powerbank => "powerbank",
            ThreatCategory::Scissors => "scissors",
            ThreatCategory::Hammer => "hammer",
            ThreatCategory::Pliers => "pliers",
            ThreatCategory::Wrench => "wrench",
            ThreatCategory::Screwdriver => "screwdriver",
            ThreatCategory::Handcuffs => "handcuffs",
            ThreatCategory::Bullet => "bullet",
            ThreatCategory::Nonthreat => "nonthreat",
        }
    }

    /// Lowercase label as it appears in the classification prompt.
    pub fn label(self) -> &'static str {
        match self {
            ThreatCategory::ThreeDPrintedGun => "3d printed gun",
            ThreatCategory::ShavingRazor => "shaving razor",
            ThreatCategory::NailCutter => "nail cutter",
            ThreatCategory::OtherSharpItems => "other sharp items",
            other => other.id(),
        }
    }

    /// Capitalized label for question text ("Battery", "3D printed gun").
    pub fn title(self) -> String {
        let label = self.label();
        if let Some(rest) = label.strip_prefix("3d") {
            return format!("3D{rest}");
        }
        let mut chars = label.chars();
        match chars.next() {
            Some(first) => first.to_uppercase().chain(chars).collect(),
            None => String::new(),
        }
    }

    /// Accepted alternative spellings. Kept deliberately small: anything not
    /// listed here or in [`label`](Self::label) does not resolve to the class.
    pub fn aliases(self) -> &'static [&'static str] {
        match self {
            ThreatCategory::Explosive => &["explosives", "improvised explosive device"],
            ThreatCategory::ThreeDPrintedGun => &["3d-printed gun", "3d printed pistol"],
            ThreatCategory::Knife => &["knives", "folding knife"],
            ThreatCategory::Cutter => &["box cutter", "utility cutter"],
            ThreatCategory::Blade => &["blades", "loose blade"],
            ThreatCategory::ShavingRazor => &["razor", "shaving-razor"],
            ThreatCategory::Lighter => &["lighters", "cigarette lighter"],
            ThreatCategory::Syringe => &["syringes", "injection"],
            ThreatCategory::Battery => &["batteries"],
            ThreatCategory::NailCutter => &["nail-cutter", "nail clipper"],
            ThreatCategory::OtherSharpItems => &["sharp item", "sharp object"],
            ThreatCategory::Powerbank => &["power bank", "power-bank"],
            ThreatCategory::Scissors => &["scissor", "pair of scissors"],
            ThreatCategory::Hammer => &["hammers"],
            ThreatCategory::Pliers => &["plier", "pair of pliers"],
            ThreatCategory::Wrench => &["wrenches", "spanner"],
            ThreatCategory::Screwdriver => &["screw driver"],
            ThreatCategory::Handcuffs => &["handcuff", "pair of handcuffs"],
            ThreatCategory::Bullet => &["bullets", "cartridge"],
            ThreatCategory::Nonthreat => &["non-threat"],
            ThreatCategory::Gun => &["pistol"],
        }
    }

    pub fn material(self) -> MaterialClass {
        match self {
            ThreatCategory::Explosive => MaterialClass::Organic,
            ThreatCategory::ThreeDPrintedGun => MaterialClass::Polymer,
            ThreatCategory::Battery | ThreatCategory::Powerbank => MaterialClass::Inorganic,
            ThreatCategory::Lighter | ThreatCategory::Syringe => MaterialClass::Mixed,
            ThreatCategory::Nonthreat => MaterialClass::Organic,
            _ => MaterialClass::Metal,
        }
    }

    pub fn from_id(id: &str) -> Option<ThreatCategory> {
        Self::vocabulary().into_iter().find(|c| c.id() == id)
    }
}

impl fmt::Display for ThreatCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolidKind {
    Box,
    /// Elliptic cylinder, axis along local x.
    Cylinder,
    /// Two bars meeting at a right angle: a full-length bar along x at low y
    /// and a full-height bar along y at low x. Bar thickness is a third of the
    /// respective extent.
    LSolid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub kind: SolidKind,
    pub extents: [u32; 3],
    pub offset: [i32; 3],
}

impl Primitive {
    pub fn new(kind: SolidKind, extents: [u32; 3], offset: [i32; 3]) -> Self {
        assert!(extents.iter().all(|&e| e > 0), "primitive extents must be positive");
        Primitive {
            kind,
            extents,
            offset,
        }
    }

    /// Whether local voxel `(i, j, k)` (each within `extents`) is solid.
    pub fn contains(&self, i: u32, j: u32, k: u32) -> bool {
        let [ex, ey, ez] = self.extents;
        match self.kind {
            SolidKind::Box => true,
            SolidKind::Cylinder => {
                let ry = ey as f64 / 2.0;
                let rz = ez as f64 / 2.0;
                let dy = (j as f64 + 0.5 - ry) / ry;
                let dz = (k as f64 + 0.5 - rz) / rz;
                dy * dy + dz * dz <= 1.0
            }
            SolidKind::LSolid => {
                let tx = (ex / 3).max(1);
                let ty = (ey / 3).max(1);
                j < ty || i < tx
            }
        }
    }
}

/// A parametric stand-in for a physical object: one material, a union of
/// primitives in a local frame whose origin is the minimum corner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemShape {
    pub primitives: Vec<Primitive>,
    pub material: MaterialClass,
}

impl ItemShape {
    pub fn single(kind: SolidKind, extents: [u32; 3], material: MaterialClass) -> Self {
        ItemShape {
            primitives: vec![Primitive::new(kind, extents, [0, 0, 0])],
            material,
        }
    }

    /// Local axis-aligned extent, measured from the local origin. Negative
    /// offsets are not used by any catalog shape and are clamped to zero.
    pub fn extent(&self) -> [u32; 3] {
        let mut max = [0i64; 3];
        for p in &self.primitives {
            for a in 0..3 {
                max[a] = max[a].max(p.offset[a] as i64 + p.extents[a] as i64);
            }
        }
        [max[0] as u32, max[1] as u32, max[2] as u32]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemRole {
    Threat,
    Occluder,
    Distractor,
}

/// Euler angles in radians, applied as `Rz(psi) * Ry(theta) * Rx(phi)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Euler {
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
}

impl Euler {
    pub fn new(phi: f64, theta: f64, psi: f64) -> Self {
        Euler { phi, theta, psi }
    }

    pub fn in_plane(psi: f64) -> Self {
        Euler::new(0.0, 0.0, psi)
    }

    pub fn is_identity(&self) -> bool {
        self.phi == 0.0 && self.theta == 0.0 && self.psi == 0.0
    }

    /// Row-major rotation matrix.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let (sa, ca) = self.phi.sin_cos();
        let (sb, cb) = self.theta.sin_cos();
        let (sc, cc) = self.psi.sin_cos();
        [
            [cc * cb, cc * sb * sa - sc * ca, cc * sb * ca + sc * sa],
            [sc * cb, sc * sb * sa + cc * ca, sc * sb * ca - cc * sa],
            [-sb, cb * sa, cb * ca],
        ]
    }
}

/// An item positioned in a scene. `position` is the minimum corner of the
/// item's frame (see [`PlacedItem::frame_dims`]) in scene voxels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedItem {
    pub shape: ItemShape,
    /// Threat category for threat parts, otherwise `None`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<ThreatCategory>,
    /// Display name; for threats the category label, for others e.g. "hangers".
    pub name: String,
    pub role: ItemRole,
    /// Index of the metadata threat this item belongs to (threat parts) or
    /// conceals (occluders).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
    pub position: [i32; 3],
    pub pose: Euler,
}

impl PlacedItem {
    /// Dimensions of the item frame: the shape extent for an identity pose,
    /// otherwise the rotated bounding box padded by two voxels per side so
    /// trilinear spill stays inside.
    pub fn frame_dims(&self) -> [usize; 3] {
        frame_dims(&self.shape, &self.pose)
    }

    /// Inclusive-exclusive voxel footprint `[min, max)` in scene coordinates.
    pub fn footprint(&self) -> ([i64; 3], [i64; 3]) {
        let f = self.frame_dims();
        let min = [
            self.position[0] as i64,
            self.position[1] as i64,
            self.position[2] as i64,
        ];
        let max = [min[0] + f[0] as i64, min[1] + f[1] as i64, min[2] + f[2] as i64];
        (min, max)
    }

    pub fn fits(&self, dims: [usize; 3]) -> bool {
        let (min, max) = self.footprint();
        (0..3).all(|a| min[a] >= 0 && max[a] <= dims[a] as i64)
    }
}

pub fn frame_dims(shape: &ItemShape, pose: &Euler) -> [usize; 3] {
    let e = shape.extent();
    if pose.is_identity() {
        return [e[0] as usize, e[1] as usize, e[2] as usize];
    }
    let r = pose.matrix();
    let half = [e[0] as f64 / 2.0, e[1] as f64 / 2.0, e[2] as f64 / 2.0];
    let mut out = [0usize; 3];
    for (a, row) in r.iter().enumerate() {
        let h: f64 = (0..3).map(|b| row[b].abs() * half[b]).sum();
        // Round away float noise before ceil so quarter turns stay tight.
        let span = (2.0 * h * 1e9).round() / 1e9;
        out[a] = span.ceil() as usize + 4;
    }
    out
}

/// Rasterize `item` into its own frame: shape centered, then rotated.
pub fn item_frame(item: &PlacedItem) -> VoxelVolume {
    let e = item.shape.extent();
    let mut local = VoxelVolume::zeros(e.map(|v| v as usize));
    rasterize_shape(&item.shape, [0, 0, 0], &mut local);
    if item.pose.is_identity() {
        return local;
    }
    // Upright extent and rotated frame share a center.
    render::rotate_into(&local, &item.pose, item.frame_dims())
}

fn rasterize_shape(shape: &ItemShape, origin: [usize; 3], vol: &mut VoxelVolume) {
    let (lo, hi) = (shape.material.mu_low(), shape.material.mu_high());
    for p in &shape.primitives {
        let [ex, ey, ez] = p.extents;
        for k in 0..ez {
            for j in 0..ey {
                for i in 0..ex {
                    if !p.contains(i, j, k) {
                        continue;
                    }
                    let x = origin[0] + (p.offset[0].max(0) as usize) + i as usize;
                    let y = origin[1] + (p.offset[1].max(0) as usize) + j as usize;
                    let z = origin[2] + (p.offset[2].max(0) as usize) + k as usize;
                    // Overlapping primitives of one shape do not double up.
                    let idx = vol.index(x, y, z);
                    vol.low[idx] = lo;
                    vol.high[idx] = hi;
                }
            }
        }
    }
}

/// Render a placed item into an otherwise empty volume of `dims`.
///
/// With an identity pose the volume equals the material coefficients exactly
/// inside the primitives and zero elsewhere; rotated items are resampled.
pub fn voxelize(item: &PlacedItem, dims: [usize; 3]) -> Result<VoxelVolume, SceneError> {
    let mut vol = VoxelVolume::zeros(dims);
    vol.add_item(item)?;
    Ok(vol)
}

/// Dual-energy attenuation field, indexed `x + X * (y + Y * z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelVolume {
    pub dims: [usize; 3],
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Low,
    High,
}

impl VoxelVolume {
    pub fn zeros(dims: [usize; 3]) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        VoxelVolume {
            dims,
            low: vec![0.0; n],
            high: vec![0.0; n],
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn channel(&self, channel: Channel) -> &[f64] {
        match channel {
            Channel::Low => &self.low,
            Channel::High => &self.high,
        }
    }

    pub fn channel_mut(&mut self, channel: Channel) -> &mut [f64] {
        match channel {
            Channel::Low => &mut self.low,
            Channel::High => &mut self.high,
        }
    }

    pub fn len(&self) -> usize {
        self.low.len()
    }

    pub fn is_empty(&self) -> bool {
        self.low.is_empty()
    }

    pub fn sum(&self, channel: Channel) -> f64 {
        self.channel(channel).iter().sum()
    }

    pub fn count_nonzero(&self) -> usize {
        self.low
            .iter()
            .zip(&self.high)
            .filter(|(l, h)| **l != 0.0 || **h != 0.0)
            .count()
    }

    /// Voxel-wise sum. Panics on mismatched dims.
    pub fn add(&mut self, other: &VoxelVolume) {
        assert_eq!(self.dims, other.dims, "volume dims differ");
        for (a, b) in self.low.iter_mut().zip(&other.low) {
            *a += b;
        }
        for (a, b) in self.high.iter_mut().zip(&other.high) {
            *a += b;
        }
    }

    pub fn scaled(&self, alpha: f64) -> VoxelVolume {
        VoxelVolume {
            dims: self.dims,
            low: self.low.iter().map(|v| v * alpha).collect(),
            high: self.high.iter().map(|v| v * alpha).collect(),
        }
    }

    /// Superimpose `item` (rasterized in its frame) at its position.
    pub fn add_item(&mut self, item: &PlacedItem) -> Result<(), SceneError> {
        self.add_frame(item, &item_frame(item))
    }

    /// Like [`add_item`](Self::add_item) with the frame already rasterized.
    pub fn add_frame(&mut self, item: &PlacedItem, frame: &VoxelVolume) -> Result<(), SceneError> {
        if frame.dims != item.frame_dims() {
            return Err(SceneError::InvalidSpec(format!(
                "frame {:?} does not match item frame {:?}",
                frame.dims,
                item.frame_dims()
            )));
        }
        if !item.fits(self.dims) {
            let (min, max) = item.footprint();
            return Err(SceneError::OutOfBounds {
                min,
                max,
                dims: self.dims,
            });
        }
        self.paste_add(frame, [
            item.position[0] as usize,
            item.position[1] as usize,
            item.position[2] as usize,
        ]);
        Ok(())
    }

    fn paste_add(&mut self, src: &VoxelVolume, at: [usize; 3]) {
        let [fx, fy, fz] = src.dims;
        for z in 0..fz {
            for y in 0..fy {
                let s = src.index(0, y, z);
                let d = self.index(at[0], at[1] + y, at[2] + z);
                for x in 0..fx {
                    self.low[d + x] += src.low[s + x];
                    self.high[d + x] += src.high[s + x];
                }
            }
        }
    }

    pub fn is_valid(&self) -> bool {
        self.low
            .iter()
            .chain(&self.high)
            .all(|v| v.is_finite() && *v >= 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationLabel {
    Center,
    Corner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrientationLabel {
    Horizontal,
    Vertical,
    Inclined,
}

/// Central band used to separate `center` from `corner`, as fractions of
/// each image axis. Bounds are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationBand {
    pub lo: f64,
    pub hi: f64,
}

impl Default for LocationBand {
    fn default() -> Self {
        LocationBand { lo: 0.25, hi: 0.75 }
    }
}

pub fn classify_location(centroid: (f64, f64), image_size: (u32, u32)) -> LocationLabel {
    classify_location_with(LocationBand::default(), centroid, image_size)
}

pub fn classify_location_with(
    band: LocationBand,
    centroid: (f64, f64),
    image_size: (u32, u32),
) -> LocationLabel {
    let fx = centroid.0 / image_size.0 as f64;
    let fy = centroid.1 / image_size.1 as f64;
    let inside = |f: f64| f >= band.lo && f <= band.hi;
    if inside(fx) && inside(fy) {
        LocationLabel::Center
    } else {
        LocationLabel::Corner
    }
}

/// Half-width of the horizontal and vertical orientation bands.
pub const ORIENTATION_BAND_DEG: f64 = 15.0;

pub fn classify_orientation(pose: &Euler) -> OrientationLabel {
    classify_orientation_with(ORIENTATION_BAND_DEG, pose)
}

pub fn classify_orientation_with(band_deg: f64, pose: &Euler) -> OrientationLabel {
    let band = band_deg.to_radians();
    let a = pose.psi.rem_euclid(PI);
    if a <= band || a >= PI - band {
        OrientationLabel::Horizontal
    } else if (a - FRAC_PI_2).abs() <= band {
        OrientationLabel::Vertical
    } else {
        OrientationLabel::Inclined
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaggageType {
    Suitcase,
    Backpack,
    GymBag,
    FannyPack,
}

impl BaggageType {
    pub const ALL: [BaggageType; 4] = [
        BaggageType::Suitcase,
        BaggageType::Backpack,
        BaggageType::GymBag,
        BaggageType::FannyPack,
    ];

    pub fn noun(self) -> &'static str {
        match self {
            BaggageType::Suitcase => "suitcase",
            BaggageType::Backpack => "backpack",
            BaggageType::GymBag => "gym bag",
            BaggageType::FannyPack => "fanny pack",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClutterLevel {
    Limited,
    Medium,
    Heavy,
    Extreme,
}

impl ClutterLevel {
    pub const ALL: [ClutterLevel; 4] = [
        ClutterLevel::Limited,
        ClutterLevel::Medium,
        ClutterLevel::Heavy,
        ClutterLevel::Extreme,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplosiveVariant {
    Cohesive,
    Dispersed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreatSpec {
    pub category: ThreatCategory,
    pub location: LocationLabel,
    pub pose_label: OrientationLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<ExplosiveVariant>,
}

impl ThreatSpec {
    pub fn new(category: ThreatCategory, location: LocationLabel, pose_label: OrientationLabel) -> Self {
        ThreatSpec {
            category,
            location,
            pose_label,
            variant: None,
        }
    }
}

/// One cell of the protocol grid. An empty `threats` list is a nonthreat scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub baggage_type: BaggageType,
    pub clutter: ClutterLevel,
    pub concealment_sublevel: u8,
    pub threats: Vec<ThreatSpec>,
    pub image_size: [u32; 2],
    pub volume_dims: [u32; 3],
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(1..=10).contains(&self.concealment_sublevel) {
            return Err(SceneError::InvalidSpec(format!(
                "concealment_sublevel {} outside 1..=10",
                self.concealment_sublevel
            )));
        }
        if self.volume_dims.iter().any(|&d| d < 16) {
            return Err(SceneError::InvalidSpec(format!(
                "volume_dims {:?} must each be >= 16",
                self.volume_dims
            )));
        }
        if self.image_size.iter().any(|&d| d == 0) {
            return Err(SceneError::InvalidSpec("image_size must be positive".into()));
        }
        if self.threats.iter().any(|t| t.category == ThreatCategory::Nonthreat) {
            return Err(SceneError::InvalidSpec(
                "nonthreat is expressed by an empty threat list".into(),
            ));
        }
        Ok(())
    }

    pub fn is_nonthreat(&self) -> bool {
        self.threats.is_empty()
    }

    pub fn dims(&self) -> [usize; 3] {
        [
            self.volume_dims[0] as usize,
            self.volume_dims[1] as usize,
            self.volume_dims[2] as usize,
        ]
    }
}

/// Attributes of one threat as actually rendered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreatMeta {
    pub category: ThreatCategory,
    pub location_label: LocationLabel,
    pub orientation_label: OrientationLabel,
    pub concealment_level: u8,
    pub concealment_phrase: String,
    /// Items placed over the threat.
    pub occluder_names: Vec<String>,
    /// Items placed next to the threat without overlapping it.
    #[serde(default)]
    pub nearby_names: Vec<String>,
    /// Fraction of the threat's projected footprint under its occluders.
    pub coverage: f64,
    /// Centroid of the projected threat mask, in image pixels.
    pub centroid_px: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<ExplosiveVariant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetadata {
    pub baggage_type: BaggageType,
    pub clutter: ClutterLevel,
    pub concealment_sublevel: u8,
    pub threats: Vec<ThreatMeta>,
    pub distractor_names: Vec<String>,
}

impl SceneMetadata {
    pub fn is_nonthreat(&self) -> bool {
        self.threats.is_empty()
    }

    /// Ground-truth label list in placement order, deduplicated; `nonthreat`
    /// when no threat is present.
    pub fn labels(&self) -> Vec<ThreatCategory> {
        if self.threats.is_empty() {
            return vec![ThreatCategory::Nonthreat];
        }
        let mut out = Vec::new();
        for t in &self.threats {
            if !out.contains(&t.category) {
                out.push(t.category);
            }
        }
        out
    }
}
