//! Parametric stand-ins for threats, everyday distractors and concealment
//! materials. Sizes are voxels at a 256-voxel scene width and scale linearly.

use crate::scene::{ExplosiveVariant, ItemShape, MaterialClass, Primitive, SolidKind, ThreatCategory};

use MaterialClass::*;
use SolidKind::*;

/// One primitive at the reference scale: kind, extents, offset.
type Part = (SolidKind, [u32; 3], [u32; 3]);

fn scaled(parts: &[Part], material: MaterialClass, scale: f64) -> ItemShape {
    let s = |v: u32| ((v as f64 * scale).round() as u32).max(1);
    let o = |v: u32| (v as f64 * scale).round() as i32;
    ItemShape {
        primitives: parts
            .iter()
            .map(|(kind, e, off)| {
                Primitive::new(*kind, [s(e[0]), s(e[1]), s(e[2])], [o(off[0]), o(off[1]), o(off[2])])
            })
            .collect(),
        material,
    }
}

/// A named threat part.
#[derive(Debug, Clone)]
pub struct ThreatPart {
    pub name: &'static str,
    pub shape: ItemShape,
}

/// Shapes making up one threat instance. Dispersed explosives yield three
/// separate parts; everything else yields one.
pub fn threat_parts(category: ThreatCategory, variant: Option<ExplosiveVariant>, scale: f64) -> Vec<ThreatPart> {
    let one = |parts: &[Part], m: MaterialClass| {
        vec![ThreatPart {
            name: category.label(),
            shape: scaled(parts, m, scale),
        }]
    };
    match category {
        ThreatCategory::Explosive => match variant.unwrap_or(ExplosiveVariant::Cohesive) {
            ExplosiveVariant::Cohesive => one(
                &[(Box, [40, 28, 8], [0, 0, 0]), (Box, [12, 10, 4], [40, 9, 2])],
                Organic,
            ),
            ExplosiveVariant::Dispersed => vec![
                ThreatPart {
                    name: "explosive container",
                    shape: scaled(&[(Box, [36, 26, 8], [0, 0, 0])], Organic, scale),
                },
                ThreatPart {
                    name: "circuit",
                    shape: scaled(&[(Box, [22, 16, 3], [0, 0, 0])], Inorganic, scale),
                },
                ThreatPart {
                    name: "power cell",
                    shape: scaled(&[(Cylinder, [24, 10, 10], [0, 0, 0])], Inorganic, scale),
                },
            ],
        },
        ThreatCategory::Gun => one(&[(LSolid, [72, 44, 8], [0, 0, 0])], Metal),
        ThreatCategory::ThreeDPrintedGun => one(&[(LSolid, [72, 44, 10], [0, 0, 0])], Polymer),
        ThreatCategory::Knife => one(&[(Box, [20, 8, 4], [0, 0, 0]), (Box, [56, 8, 2], [20, 0, 1])], Metal),
        ThreatCategory::Cutter => one(&[(Box, [50, 10, 5], [0, 0, 0])], Metal),
        ThreatCategory::Blade => one(&[(Box, [36, 12, 1], [0, 0, 0])], Metal),
        ThreatCategory::ShavingRazor => one(&[(Box, [36, 6, 5], [0, 6, 0]), (Box, [6, 18, 4], [36, 0, 0])], Metal),
        ThreatCategory::Lighter => one(&[(Box, [22, 12, 6], [0, 0, 0])], Mixed),
        ThreatCategory::Syringe => one(&[(Cylinder, [56, 8, 8], [0, 0, 0]), (Box, [14, 2, 2], [56, 3, 3])], Mixed),
        ThreatCategory::Battery => one(&[(Cylinder, [30, 12, 12], [0, 0, 0])], Inorganic),
        ThreatCategory::NailCutter => one(&[(Box, [24, 8, 4], [0, 0, 0])], Metal),
        ThreatCategory::OtherSharpItems => one(&[(Box, [44, 4, 3], [0, 0, 0])], Metal),
        ThreatCategory::Powerbank => one(&[(Box, [52, 30, 10], [0, 0, 0])], Inorganic),
        ThreatCategory::Scissors => one(
            &[(Box, [16, 20, 3], [0, 0, 0]), (Box, [40, 4, 3], [16, 4, 0]), (Box, [40, 4, 3], [16, 12, 0])],
            Metal,
        ),
        ThreatCategory::Hammer => one(&[(Box, [60, 8, 6], [0, 8, 0]), (Box, [12, 24, 10], [60, 0, 0])], Metal),
        ThreatCategory::Pliers => one(
            &[(Box, [22, 10, 5], [0, 5, 0]), (Box, [38, 4, 4], [22, 2, 0]), (Box, [38, 4, 4], [22, 14, 0])],
            Metal,
        ),
        ThreatCategory::Wrench => one(&[(Box, [60, 8, 3], [0, 6, 0]), (Box, [14, 20, 4], [60, 0, 0])], Metal),
        ThreatCategory::Screwdriver => one(&[(Cylinder, [24, 10, 10], [0, 0, 0]), (Box, [36, 3, 3], [24, 4, 4])], Metal),
        ThreatCategory::Handcuffs => one(
            &[(Box, [18, 18, 3], [0, 0, 0]), (Box, [18, 18, 3], [26, 0, 0]), (Box, [10, 4, 3], [16, 7, 0])],
            Metal,
        ),
        ThreatCategory::Bullet => one(&[(Cylinder, [18, 6, 6], [0, 0, 0])], Metal),
        ThreatCategory::Nonthreat => Vec::new(),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DistractorKind {
    pub name: &'static str,
    pub material: MaterialClass,
    pub kind: SolidKind,
    pub extents: [u32; 3],
}

const fn d(name: &'static str, material: MaterialClass, kind: SolidKind, extents: [u32; 3]) -> DistractorKind {
    DistractorKind {
        name,
        material,
        kind,
        extents,
    }
}

/// Everyday contents. None of these names contains a threat term.
pub const DISTRACTORS: [DistractorKind; 24] = [
    d("umbrella", Mixed, Cylinder, [120, 12, 12]),
    d("cables", Mixed, Box, [70, 3, 3]),
    d("laptop", Inorganic, Box, [96, 64, 6]),
    d("shoes", Organic, Box, [62, 26, 14]),
    d("water bottle", Polymer, Cylinder, [56, 18, 18]),
    d("books", Organic, Box, [52, 38, 12]),
    d("t-shirts", Organic, Box, [70, 50, 6]),
    d("jeans", Organic, Box, [80, 40, 8]),
    d("toiletries", Polymer, Box, [36, 24, 12]),
    d("headphones", Mixed, LSolid, [34, 30, 8]),
    d("phone charger", Inorganic, Box, [16, 12, 8]),
    d("camera", Mixed, Box, [30, 20, 14]),
    d("sunglasses case", Polymer, Box, [36, 14, 10]),
    d("belt", Organic, Box, [90, 6, 3]),
    d("wallet", Organic, Box, [26, 18, 4]),
    d("keys", Metal, Box, [14, 6, 2]),
    d("coins", Metal, Cylinder, [6, 6, 6]),
    d("tablet", Inorganic, Box, [60, 42, 4]),
    d("hair dryer", Mixed, LSolid, [46, 36, 12]),
    d("perfume bottle", Inorganic, Cylinder, [22, 12, 12]),
    d("notebook", Organic, Box, [42, 30, 4]),
    d("socks", Organic, Box, [24, 18, 6]),
    d("snack box", Organic, Box, [34, 24, 10]),
    d("travel pillow", Polymer, Box, [50, 30, 10]),
];

impl DistractorKind {
    pub fn shape(&self, scale: f64) -> ItemShape {
        scaled(&[(self.kind, self.extents, [0, 0, 0])], self.material, scale)
    }
}

/// Concealment materials by material class. Grids are rendered as bars.
pub fn occluder_names(material: MaterialClass) -> &'static [&'static str] {
    match material {
        Organic => &["books", "folded clothes", "towels", "paper files", "food packets", "leather jacket"],
        Polymer => &["plastic bags", "bubble wrap", "plastic containers"],
        Mixed => &["hangers", "toiletry bag", "tangled cables", "electronics pouch"],
        Inorganic => &["ICs box", "ceramic plates", "glass jars", "circuit boards"],
        Metal => &["metal grid", "steel tray", "chain", "metal hangers", "aluminium foil sheets"],
    }
}

/// Occluders that render as a bar lattice instead of a solid sheet.
pub fn is_grid(name: &str) -> bool {
    matches!(name, "metal grid")
}

/// Shell of the bag itself: fraction of the scene it spans and its material.
pub fn bag_shell(bag: crate::scene::BaggageType) -> ([f64; 2], MaterialClass) {
    use crate::scene::BaggageType::*;
    match bag {
        Suitcase => ([0.94, 0.90], Polymer),
        Backpack => ([0.84, 0.92], Organic),
        GymBag => ([0.94, 0.74], Organic),
        FannyPack => ([0.90, 0.62], Organic),
    }
}
