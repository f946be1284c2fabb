//! Rotation, projection, attenuation, fusion and pseudo-coloring.
//!
//! The pipeline per item is `rotate -> project along z -> T = I0 * exp(-P)`,
//! and independent transmittance images combine by pixel-wise
//! multiplication, which equals attenuating through the summed volume.

use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{item_frame, Channel, Euler, MaterialClass, PlacedItem, VoxelVolume};

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("image dimensions differ: {0:?} vs {1:?}")]
    DimMismatch((usize, usize), (usize, usize)),
    #[error("transmittance image is not normalized (I0 = {0})")]
    NotNormalized(f64),
    #[error("mask is empty; the item is not visible")]
    EmptyMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    /// Source intensity.
    pub i0: f64,
    /// Threshold on an item's own path integral for its mask.
    pub mask_eps: f64,
    /// Low-energy path integral below which a pixel is background (white).
    pub background_eps: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            i0: 1.0,
            mask_eps: 1e-6,
            background_eps: 1e-4,
        }
    }
}

/// Resample `vol` rotated by `pose` about its center.
///
/// Each output voxel pulls from the inverse-rotated position with trilinear
/// interpolation; samples falling outside the input read as zero. An identity
/// pose returns an exact copy.
pub fn rotate_volume(vol: &VoxelVolume, pose: &Euler) -> VoxelVolume {
    if pose.is_identity() {
        return vol.clone();
    }
    rotate_into(vol, pose, vol.dims)
}

/// Rotate `vol` about its center into a frame of `dims` sharing that center.
pub fn rotate_into(vol: &VoxelVolume, pose: &Euler, dims: [usize; 3]) -> VoxelVolume {
    let r = pose.matrix();
    let center = |d: [usize; 3]| d.map(|n| (n as f64 - 1.0) / 2.0);
    let (c, co) = (center(vol.dims), center(dims));
    let mut out = VoxelVolume::zeros(dims);
    let Some((lo_b, hi_b)) = nonzero_bounds(vol) else {
        return out;
    };
    // Only outputs whose source lands within one voxel of the occupied box
    // can be non-zero; visit the forward image of that box.
    let mut omin = [f64::INFINITY; 3];
    let mut omax = [f64::NEG_INFINITY; 3];
    for corner in 0..8 {
        let p = [0, 1, 2].map(|a| {
            let v = if corner >> a & 1 == 0 { lo_b[a] as f64 - 1.0 } else { hi_b[a] as f64 + 1.0 };
            v - c[a]
        });
        for a in 0..3 {
            let q = r[a][0] * p[0] + r[a][1] * p[1] + r[a][2] * p[2] + co[a];
            omin[a] = omin[a].min(q);
            omax[a] = omax[a].max(q);
        }
    }
    let range = |a: usize| {
        let lo = omin[a].floor().max(0.0) as usize;
        let hi = (omax[a].ceil() + 1.0).clamp(0.0, dims[a] as f64) as usize;
        lo..hi.max(lo)
    };
    let (xs, ys, zs) = (range(0), range(1), range(2));
    // R^T * d: rows of the transpose are columns of R. Stepping x by one
    // moves the source by the first column.
    let step = [r[0][0], r[0][1], r[0][2]];
    for z in zs {
        let dz = z as f64 - co[2];
        for y in ys.clone() {
            let dy = y as f64 - co[1];
            let dx = xs.start as f64 - co[0];
            let mut s = [
                r[0][0] * dx + r[1][0] * dy + r[2][0] * dz + c[0],
                r[0][1] * dx + r[1][1] * dy + r[2][1] * dz + c[1],
                r[0][2] * dx + r[1][2] * dy + r[2][2] * dz + c[2],
            ];
            let row = out.index(0, y, z);
            for x in xs.clone() {
                if let Some((lo, hi)) = trilinear(vol, s[0], s[1], s[2]) {
                    out.low[row + x] = lo;
                    out.high[row + x] = hi;
                }
                s[0] += step[0];
                s[1] += step[1];
                s[2] += step[2];
            }
        }
    }
    out
}

/// Inclusive voxel bounds of the non-zero region.
fn nonzero_bounds(vol: &VoxelVolume) -> Option<([usize; 3], [usize; 3])> {
    let [nx, ny, _] = vol.dims;
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for (i, (l, h)) in vol.low.iter().zip(&vol.high).enumerate() {
        if *l != 0.0 || *h != 0.0 {
            let p = [i % nx, (i / nx) % ny, i / (nx * ny)];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
    }
    (lo[0] != usize::MAX).then_some((lo, hi))
}

fn trilinear(vol: &VoxelVolume, x: f64, y: f64, z: f64) -> Option<(f64, f64)> {
    let [nx, ny, nz] = vol.dims;
    if x <= -1.0 || y <= -1.0 || z <= -1.0 {
        return None;
    }
    if x >= nx as f64 || y >= ny as f64 || z >= nz as f64 {
        return None;
    }
    // Inputs are above -1, so truncation is floor except on (-1, 0).
    let fl = |v: f64| if v < 0.0 { -1i64 } else { v as i64 };
    let (x0, y0, z0) = (fl(x), fl(y), fl(z));
    let (fx, fy, fz) = (x - x0 as f64, y - y0 as f64, z - z0 as f64);
    let mut lo = 0.0;
    let mut hi = 0.0;
    for (dz, wz) in [(0, 1.0 - fz), (1, fz)] {
        let zi = z0 + dz;
        if wz == 0.0 || zi < 0 || zi >= nz as i64 {
            continue;
        }
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            let yi = y0 + dy;
            if wy == 0.0 || yi < 0 || yi >= ny as i64 {
                continue;
            }
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                let xi = x0 + dx;
                if wx == 0.0 || xi < 0 || xi >= nx as i64 {
                    continue;
                }
                let w = wx * wy * wz;
                let idx = vol.index(xi as usize, yi as usize, zi as usize);
                lo += w * vol.low[idx];
                hi += w * vol.high[idx];
            }
        }
    }
    if lo == 0.0 && hi == 0.0 {
        None
    } else {
        Some((lo, hi))
    }
}

/// Per-pixel line integral `P(x, y) = sum_z mu(x, y, z)` with unit voxel length.
#[derive(Debug, Clone, PartialEq)]
pub struct PathIntegralImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl PathIntegralImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        PathIntegralImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[x + self.width * y]
    }

    pub fn add(&mut self, other: &PathIntegralImage) -> Result<(), RenderError> {
        check_dims((self.width, self.height), (other.width, other.height))?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Nearest-neighbour resample to `(width, height)`.
    pub fn resample(&self, width: usize, height: usize) -> PathIntegralImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut out = PathIntegralImage::zeros(width, height);
        for v in 0..height {
            let sy = v * self.height / height;
            for u in 0..width {
                let sx = u * self.width / width;
                out.data[u + width * v] = self.get(sx, sy);
            }
        }
        out
    }
}

fn check_dims(a: (usize, usize), b: (usize, usize)) -> Result<(), RenderError> {
    if a != b {
        return Err(RenderError::DimMismatch(a, b));
    }
    Ok(())
}

pub fn project(vol: &VoxelVolume, channel: Channel) -> PathIntegralImage {
    let [nx, ny, nz] = vol.dims;
    let src = vol.channel(channel);
    let mut out = PathIntegralImage::zeros(nx, ny);
    let plane = nx * ny;
    for z in 0..nz {
        let slab = &src[z * plane..(z + 1) * plane];
        for (acc, v) in out.data.iter_mut().zip(slab) {
            *acc += v;
        }
    }
    out
}

/// Detected intensity per pixel, `T = I0 * exp(-P)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmittanceImage {
    pub width: usize,
    pub height: usize,
    pub i0: f64,
    pub data: Vec<f64>,
}

impl TransmittanceImage {
    pub fn ones(width: usize, height: usize) -> Self {
        TransmittanceImage {
            width,
            height,
            i0: 1.0,
            data: vec![1.0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[x + self.width * y]
    }

    /// Divide by `I0` so the image can take part in fusion.
    pub fn normalized(&self) -> TransmittanceImage {
        TransmittanceImage {
            width: self.width,
            height: self.height,
            i0: 1.0,
            data: self.data.iter().map(|t| t / self.i0).collect(),
        }
    }

    /// 8-bit grayscale with `round(255 * T / I0)`.
    pub fn to_gray8(&self) -> GrayImage {
        let mut img = GrayImage::new(self.width as u32, self.height as u32);
        for (i, t) in self.data.iter().enumerate() {
            let v = (255.0 * (t / self.i0)).round().clamp(0.0, 255.0) as u8;
            img.put_pixel((i % self.width) as u32, (i / self.width) as u32, Luma([v]));
        }
        img
    }
}

pub fn transmit(path: &PathIntegralImage, i0: f64) -> TransmittanceImage {
    assert!(i0 > 0.0, "source intensity must be positive");
    TransmittanceImage {
        width: path.width,
        height: path.height,
        i0,
        data: path.data.iter().map(|p| i0 * (-p).exp()).collect(),
    }
}

/// Pixel-wise product of two normalized transmittance images.
pub fn fuse(a: &TransmittanceImage, b: &TransmittanceImage) -> Result<TransmittanceImage, RenderError> {
    check_dims((a.width, a.height), (b.width, b.height))?;
    for t in [a, b] {
        if t.i0 != 1.0 {
            return Err(RenderError::NotNormalized(t.i0));
        }
    }
    Ok(TransmittanceImage {
        width: a.width,
        height: a.height,
        i0: 1.0,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    })
}

/// Nearest material class by dual-energy ratio.
pub fn classify_ratio(ratio: f64) -> MaterialClass {
    let mut best = MaterialClass::Metal;
    let mut best_d = f64::INFINITY;
    for m in MaterialClass::ALL {
        let d = (m.ratio() - ratio).abs();
        if d < best_d {
            best = m;
            best_d = d;
        }
    }
    best
}

/// Dual-energy pseudo-coloring.
///
/// Background pixels (low-energy path integral below `background_eps`) are
/// white. Elsewhere the ratio `P_high / P_low` picks the nearest material
/// class, whose hue family gives the hue, and the high-energy transmittance
/// gives the HSL lightness.
pub fn colorize(
    t_low: &TransmittanceImage,
    t_high: &TransmittanceImage,
    background_eps: f64,
) -> Result<RgbImage, RenderError> {
    check_dims((t_low.width, t_low.height), (t_high.width, t_high.height))?;
    let mut img = RgbImage::new(t_low.width as u32, t_low.height as u32);
    for i in 0..t_low.data.len() {
        let tl = t_low.data[i] / t_low.i0;
        let th = t_high.data[i] / t_high.i0;
        let p_low = -tl.ln();
        let px = if p_low < background_eps {
            [255, 255, 255]
        } else {
            let ratio = -th.ln() / p_low;
            let hue = classify_ratio(ratio).hue_family().hue_degrees();
            hsl_to_rgb8(hue, 1.0, th)
        };
        img.put_pixel((i % t_low.width) as u32, (i / t_low.width) as u32, Rgb(px));
    }
    Ok(img)
}

/// HSL (hue in degrees, saturation and lightness in `[0, 1]`) to 8-bit RGB.
pub fn hsl_to_rgb8(hue: f64, sat: f64, light: f64) -> [u8; 3] {
    let c = (1.0 - (2.0 * light - 1.0).abs()) * sat;
    let h = hue.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = light - c / 2.0;
    let q = |v: f64| (255.0 * (v + m)).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

/// Hue of an 8-bit RGB pixel in degrees; `None` for grays.
pub fn rgb_hue(px: [u8; 3]) -> Option<f64> {
    let [r, g, b] = px.map(|v| v as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d == 0.0 {
        return None;
    }
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    Some(h * 60.0)
}

/// Path integral of a single item in scene coordinates (`X x Y`).
pub fn item_path_image(item: &PlacedItem, scene_xy: (usize, usize), channel: Channel) -> PathIntegralImage {
    let mut out = PathIntegralImage::zeros(scene_xy.0, scene_xy.1);
    add_frame_path(&mut out, &item_frame(item), item.position, channel);
    out
}

/// Accumulate the projection of an item frame placed at `position` into `out`.
pub fn add_frame_path(out: &mut PathIntegralImage, frame: &VoxelVolume, position: [i32; 3], channel: Channel) {
    let local = project(frame, channel);
    let (px, py) = (position[0], position[1]);
    for y in 0..local.height {
        let sy = py as i64 + y as i64;
        if sy < 0 || sy >= out.height as i64 {
            continue;
        }
        for x in 0..local.width {
            let sx = px as i64 + x as i64;
            if sx < 0 || sx >= out.width as i64 {
                continue;
            }
            out.data[sx as usize + out.width * sy as usize] += local.get(x, y);
        }
    }
}

/// Binary per-threat mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreatMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl ThreatMask {
    pub fn from_path(path: &PathIntegralImage, eps: f64) -> Self {
        ThreatMask {
            width: path.width,
            height: path.height,
            data: path.data.iter().map(|p| *p > eps).collect(),
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[x + self.width * y]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    /// Mean pixel coordinate of set pixels, using pixel centers.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let mut n = 0usize;
        let (mut sx, mut sy) = (0.0, 0.0);
        for (i, set) in self.data.iter().enumerate() {
            if *set {
                n += 1;
                sx += (i % self.width) as f64 + 0.5;
                sy += (i / self.width) as f64 + 0.5;
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// PNG-ready 8-bit mask with values {0, 255}.
    pub fn to_gray8(&self) -> GrayImage {
        let mut img = GrayImage::new(self.width as u32, self.height as u32);
        for (i, set) in self.data.iter().enumerate() {
            let v = if *set { 255 } else { 0 };
            img.put_pixel((i % self.width) as u32, (i / self.width) as u32, Luma([v]));
        }
        img
    }
}

/// Inclusive pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl PixelBox {
    pub fn to_array(self) -> [u32; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn area(&self) -> u64 {
        (self.x_max - self.x_min + 1) as u64 * (self.y_max - self.y_min + 1) as u64
    }
}

/// Union mask of every threat part belonging to metadata threat `target`,
/// rendered at `image_size`.
pub fn threat_mask(
    placements: &[PlacedItem],
    target: usize,
    scene_xy: (usize, usize),
    image_size: (usize, usize),
    eps: f64,
) -> ThreatMask {
    let mut path = PathIntegralImage::zeros(scene_xy.0, scene_xy.1);
    for item in placements
        .iter()
        .filter(|p| p.role == crate::scene::ItemRole::Threat && p.target == Some(target))
    {
        path.add(&item_path_image(item, scene_xy, Channel::Low))
            .expect("same scene dims");
    }
    ThreatMask::from_path(&path.resample(image_size.0, image_size.1), eps)
}

/// Tight inclusive bounding box of the set pixels.
pub fn bbox_of(mask: &ThreatMask) -> Result<PixelBox, RenderError> {
    let mut b: Option<PixelBox> = None;
    for y in 0..mask.height {
        for x in 0..mask.width {
            if !mask.get(x, y) {
                continue;
            }
            let (x, y) = (x as u32, y as u32);
            b = Some(match b {
                None => PixelBox {
                    x_min: x,
                    y_min: y,
                    x_max: x,
                    y_max: y,
                },
                Some(b) => PixelBox {
                    x_min: b.x_min.min(x),
                    y_min: b.y_min.min(y),
                    x_max: b.x_max.max(x),
                    y_max: b.y_max.max(y),
                },
            });
        }
    }
    b.ok_or(RenderError::EmptyMask)
}

/// Transmittance pair and pseudo-colored scan of a whole scene volume.
#[derive(Debug, Clone)]
pub struct RenderedScan {
    pub low: TransmittanceImage,
    pub high: TransmittanceImage,
    pub rgb: RgbImage,
}

pub fn render_volume(vol: &VoxelVolume, image_size: (usize, usize), cfg: &RenderConfig) -> RenderedScan {
    let p_low = project(vol, Channel::Low).resample(image_size.0, image_size.1);
    let p_high = project(vol, Channel::High).resample(image_size.0, image_size.1);
    let low = transmit(&p_low, cfg.i0);
    let high = transmit(&p_high, cfg.i0);
    let rgb = colorize(&low, &high, cfg.background_eps).expect("channels share dims");
    RenderedScan { low, high, rgb }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{ItemRole, ItemShape, SolidKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random_volume(rng: &mut ChaCha8Rng, dims: [usize; 3], density: f64) -> VoxelVolume {
        let mut v = VoxelVolume::zeros(dims);
        for i in 0..v.len() {
            if rng.random::<f64>() < density {
                let m = MaterialClass::ALL[rng.random_range(0..5)];
                let s: f64 = rng.random();
                v.low[i] = m.mu_low() * s;
                v.high[i] = m.mu_high() * s;
            }
        }
        v
    }

    #[test]
    fn identity_rotation_is_exact_copy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_volume(&mut rng, [9, 7, 5], 0.3);
        assert_eq!(rotate_volume(&v, &Euler::default()), v);
    }

    #[test]
    fn quarter_turn_of_symmetric_pattern() {
        // A plus-shaped slab in the xy-plane is invariant under a quarter turn.
        let mut v = VoxelVolume::zeros([17, 17, 5]);
        for z in 1..4 {
            for t in 2..15 {
                for (x, y) in [(t, 8), (8, t)] {
                    let i = v.index(x, y, z);
                    v.low[i] = 0.3;
                    v.high[i] = 0.15;
                }
            }
        }
        let r = rotate_volume(&v, &Euler::in_plane(FRAC_PI_2));
        for (a, b) in r.low.iter().zip(&v.low) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn projection_examples() {
        let zero = VoxelVolume::zeros([4, 4, 6]);
        assert!(project(&zero, Channel::Low).data.iter().all(|p| *p == 0.0));

        let mut col = VoxelVolume::zeros([3, 3, 10]);
        for z in 0..10 {
            let i = col.index(1, 2, z);
            col.low[i] = 0.1;
        }
        let p = project(&col, Channel::Low);
        assert!((p.get(1, 2) - 1.0).abs() < 1e-12);
        assert_eq!(p.get(0, 0), 0.0);
    }

    #[test]
    fn projection_is_linear_on_dyadic_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut a = VoxelVolume::zeros([8, 8, 8]);
        let mut b = VoxelVolume::zeros([8, 8, 8]);
        for i in 0..a.len() {
            a.low[i] = rng.random_range(0..64) as f64 / 64.0;
            b.low[i] = rng.random_range(0..64) as f64 / 64.0;
        }
        let mut pa = project(&a, Channel::Low);
        pa.add(&project(&b, Channel::Low)).unwrap();
        let mut ab = a.clone();
        ab.add(&b);
        assert_eq!(pa, project(&ab, Channel::Low));
    }

    #[test]
    fn transmit_examples() {
        let p0 = PathIntegralImage::zeros(2, 2);
        assert!(transmit(&p0, 2.5).data.iter().all(|t| *t == 2.5));
        let mut p1 = PathIntegralImage::zeros(1, 1);
        p1.data[0] = 1.0;
        assert!((transmit(&p1, 1.0).data[0] - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn fuse_identity_and_commutativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = transmit(&project(&random_volume(&mut rng, [6, 5, 4], 0.5), Channel::High), 1.0);
        let b = transmit(&project(&random_volume(&mut rng, [6, 5, 4], 0.5), Channel::High), 1.0);
        assert_eq!(fuse(&a, &TransmittanceImage::ones(6, 5)).unwrap(), a);
        let ab = fuse(&a, &b).unwrap();
        let ba = fuse(&b, &a).unwrap();
        assert!(ab.data.iter().zip(&ba.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(matches!(
            fuse(&a, &TransmittanceImage::ones(5, 6)),
            Err(RenderError::DimMismatch(..))
        ));
        let mut scaled = a.clone();
        scaled.i0 = 2.0;
        assert!(matches!(fuse(&scaled, &b), Err(RenderError::NotNormalized(_))));
    }

    #[test]
    fn empty_scene_colorizes_white() {
        let t = TransmittanceImage::ones(5, 4);
        let img = colorize(&t, &t, 1e-4).unwrap();
        assert!(img.pixels().all(|p| p.0 == [255, 255, 255]));
    }

    fn slab_pixel(material: MaterialClass, thickness: usize) -> [u8; 3] {
        let mut v = VoxelVolume::zeros([1, 1, thickness]);
        for z in 0..thickness {
            v.low[z] = material.mu_low();
            v.high[z] = material.mu_high();
        }
        let scan = render_volume(&v, (1, 1), &RenderConfig::default());
        scan.rgb.get_pixel(0, 0).0
    }

    #[test]
    fn metal_slab_is_blue_and_organic_slab_is_orange() {
        for t in [1, 3, 10] {
            let h = rgb_hue(slab_pixel(MaterialClass::Metal, t)).unwrap();
            assert!((200.0..=250.0).contains(&h), "metal hue {h} at {t}");
            let h = rgb_hue(slab_pixel(MaterialClass::Organic, t)).unwrap();
            assert!((20.0..=45.0).contains(&h), "organic hue {h} at {t}");
        }
        let h = rgb_hue(slab_pixel(MaterialClass::Inorganic, 4)).unwrap();
        assert!((90.0..=150.0).contains(&h));
    }

    #[test]
    fn ratio_classification_recovers_each_class() {
        for m in MaterialClass::ALL {
            assert_eq!(classify_ratio(m.ratio()), m);
        }
    }

    #[test]
    fn bbox_of_square() {
        let mut mask = ThreatMask {
            width: 32,
            height: 32,
            data: vec![false; 1024],
        };
        for y in 10..14 {
            for x in 10..14 {
                mask.data[x + 32 * y] = true;
            }
        }
        assert_eq!(
            bbox_of(&mask).unwrap(),
            PixelBox {
                x_min: 10,
                y_min: 10,
                x_max: 13,
                y_max: 13
            }
        );
        let empty = ThreatMask {
            width: 4,
            height: 4,
            data: vec![false; 16],
        };
        assert_eq!(bbox_of(&empty), Err(RenderError::EmptyMask));
    }

    #[test]
    fn bbox_matches_brute_force_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let (w, h) = (rng.random_range(1..40), rng.random_range(1..40));
            let p: f64 = rng.random_range(0.01..0.3);
            let data: Vec<bool> = (0..w * h).map(|_| rng.random::<f64>() < p).collect();
            let mask = ThreatMask {
                width: w,
                height: h,
                data: data.clone(),
            };
            let set: Vec<(u32, u32)> = (0..w * h)
                .filter(|&i| data[i])
                .map(|i| ((i % w) as u32, (i / w) as u32))
                .collect();
            match bbox_of(&mask) {
                Err(_) => assert!(set.is_empty()),
                Ok(b) => {
                    assert_eq!(b.x_min, set.iter().map(|s| s.0).min().unwrap());
                    assert_eq!(b.x_max, set.iter().map(|s| s.0).max().unwrap());
                    assert_eq!(b.y_min, set.iter().map(|s| s.1).min().unwrap());
                    assert_eq!(b.y_max, set.iter().map(|s| s.1).max().unwrap());
                }
            }
        }
    }

    #[test]
    fn rotated_bar_mask_fits_its_box() {
        let item = PlacedItem {
            shape: ItemShape::single(SolidKind::Box, [30, 4, 3], MaterialClass::Metal),
            category: None,
            name: "bar".into(),
            role: ItemRole::Threat,
            target: Some(0),
            position: [4, 4, 2],
            pose: Euler::new(0.1, 0.05, 0.6),
        };
        let mask = threat_mask(&[item], 0, (48, 48), (48, 48), 1e-6);
        let b = bbox_of(&mask).unwrap();
        assert!(b.area() >= mask.count() as u64);
        // Touches all four sides.
        let on = |x: u32, y: u32| mask.get(x as usize, y as usize);
        assert!((b.y_min..=b.y_max).any(|y| on(b.x_min, y)));
        assert!((b.y_min..=b.y_max).any(|y| on(b.x_max, y)));
        assert!((b.x_min..=b.x_max).any(|x| on(x, b.y_min)));
        assert!((b.x_min..=b.x_max).any(|x| on(x, b.y_max)));
    }

    #[test]
    fn hsl_roundtrip_hue() {
        for hue in [32.0, 115.0, 222.0] {
            for l in [0.1, 0.4, 0.8] {
                let h = rgb_hue(hsl_to_rgb8(hue, 1.0, l)).unwrap();
                assert!((h - hue).abs() < 3.0, "{hue} {l} -> {h}");
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn transmittance_is_bounded_and_monotone(
                p1 in proptest::collection::vec(0.0f64..50.0, 1..64),
                bump in 0.0f64..5.0,
            ) {
                let a = PathIntegralImage { width: p1.len(), height: 1, data: p1.clone() };
                let b = PathIntegralImage {
                    width: p1.len(),
                    height: 1,
                    data: p1.iter().map(|p| p + bump).collect(),
                };
                let ta = transmit(&a, 1.0);
                let tb = transmit(&b, 1.0);
                for (x, y) in ta.data.iter().zip(&tb.data) {
                    prop_assert!(*x > 0.0 && *x <= 1.0);
                    prop_assert!(y <= x);
                }
            }

            #[test]
            fn projection_scales(alpha in 0.0f64..4.0, seed in 0u64..1000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let v = random_volume(&mut rng, [5, 4, 6], 0.4);
                let p = project(&v, Channel::Low);
                let q = project(&v.scaled(alpha), Channel::Low);
                for (a, b) in p.data.iter().zip(&q.data) {
                    prop_assert!((a * alpha - b).abs() <= 1e-12 * (1.0 + b.abs()));
                }
            }
        }
    }
}
