//! Procedural stand-in corpus.
//!
//! Each image shows one instrument silhouette built from capsules, discs,
//! rings and triangles (a distinct layout per [`InstrumentLabel`]), jittered in
//! position, scale, rotation and tone, with an optional defect motif painted
//! on the instrument:
//!
//! | defect    | motif                              |
//! |-----------|------------------------------------|
//! | Scratches | thin bright straight lines         |
//! | Crack     | dark jagged polyline               |
//! | Pores     | cluster of small dark dots         |
//! | Cuts      | dark wedge notch                   |
//! | Corrosion | mottled rust-colored patch         |
//!
//! `Miscellaneous` images contain random colored blobs and no instrument.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    write_manifest, AnnotationRecord, DatasetManifest, DefectLabel, InstrumentLabel, Provenance, Result,
};
use crate::imaging::{save_png, Channels, RasterImage};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusCell {
    pub instrument: InstrumentLabel,
    pub defect: DefectLabel,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub cells: Vec<CorpusCell>,
    pub image_size: u32,
    pub seed: u64,
}

impl CorpusSpec {
    /// Same count for every (instrument, defect) pair of the cross product,
    /// except `Miscellaneous` paired with a defect, which is not a valid label.
    pub fn grid(
        instruments: &[InstrumentLabel],
        defects: &[DefectLabel],
        per_cell: usize,
        image_size: u32,
        seed: u64,
    ) -> Self {
        let cells = instruments
            .iter()
            .flat_map(|&instrument| {
                defects
                    .iter()
                    .filter(move |d| !(instrument.is_miscellaneous() && d.is_defect()))
                    .map(move |&defect| CorpusCell {
                        instrument,
                        defect,
                        count: per_cell,
                    })
            })
            .collect();
        Self {
            cells,
            image_size,
            seed,
        }
    }
}

/// Generated images, aligned index-for-index with the manifest records.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub manifest: DatasetManifest,
    pub images: Vec<RasterImage>,
}

impl SyntheticCorpus {
    /// Writes `manifest.jsonl` and the PNGs under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        for (record, img) in self.manifest.records().iter().zip(&self.images) {
            save_png(img, dir.join(&record.image_path))?;
        }
        write_manifest(&self.manifest, &dir.join("manifest.jsonl"))
    }

    pub fn image(&self, record_id: &str) -> Option<&RasterImage> {
        self.manifest
            .records()
            .iter()
            .position(|r| r.record_id == record_id)
            .map(|i| &self.images[i])
    }
}

pub fn generate_synthetic_corpus(spec: &CorpusSpec) -> Result<SyntheticCorpus> {
    let size = spec.image_size.max(8);
    let mut records = Vec::new();
    let mut images = Vec::new();
    for cell in &spec.cells {
        for i in 0..cell.count {
            let id = format!("{}_{}_{i:05}", cell.instrument.slug(), cell.defect.slug());
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_str(spec.seed, &id));
            images.push(render(cell.instrument, cell.defect, size, &mut rng)?);
            records.push(AnnotationRecord::labeled(
                id.clone(),
                format!("images/{id}.png"),
                cell.instrument,
                cell.defect,
                Provenance::Synthetic,
            ));
        }
    }
    Ok(SyntheticCorpus {
        manifest: DatasetManifest::new(records)?,
        images,
    })
}

type Point = (f64, f64);

#[derive(Debug, Clone, Copy)]
enum Prim {
    Capsule { a: Point, b: Point, r: f64 },
    Disc { c: Point, r: f64 },
    Ring { c: Point, outer: f64, inner: f64 },
    Triangle([Point; 3]),
}

impl Prim {
    fn contains(&self, p: Point) -> bool {
        match *self {
            Prim::Capsule { a, b, r } => segment_distance(p, a, b) <= r,
            Prim::Disc { c, r } => dist(p, c) <= r,
            Prim::Ring { c, outer, inner } => {
                let d = dist(p, c);
                d <= outer && d >= inner
            }
            Prim::Triangle([a, b, c]) => {
                let s1 = cross(a, b, p);
                let s2 = cross(b, c, p);
                let s3 = cross(c, a, p);
                (s1 >= 0.0 && s2 >= 0.0 && s3 >= 0.0) || (s1 <= 0.0 && s2 <= 0.0 && s3 <= 0.0)
            }
        }
    }

    fn map(&self, t: &Jitter) -> Prim {
        match *self {
            Prim::Capsule { a, b, r } => Prim::Capsule {
                a: t.apply(a),
                b: t.apply(b),
                r: r * t.scale,
            },
            Prim::Disc { c, r } => Prim::Disc {
                c: t.apply(c),
                r: r * t.scale,
            },
            Prim::Ring { c, outer, inner } => Prim::Ring {
                c: t.apply(c),
                outer: outer * t.scale,
                inner: inner * t.scale,
            },
            Prim::Triangle(pts) => Prim::Triangle(pts.map(|p| t.apply(p))),
        }
    }
}

fn dist(a: Point, b: Point) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn cross(a: Point, b: Point, p: Point) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    dist(p, (a.0 + t * dx, a.1 + t * dy))
}

/// Similarity transform about the image center.
struct Jitter {
    scale: f64,
    cos: f64,
    sin: f64,
    shift: Point,
}

impl Jitter {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let angle = rng.random_range(-4.0f64..4.0).to_radians();
        Self {
            scale: rng.random_range(0.95..1.05),
            cos: angle.cos(),
            sin: angle.sin(),
            shift: (rng.random_range(-0.025..0.025), rng.random_range(-0.025..0.025)),
        }
    }

    fn apply(&self, p: Point) -> Point {
        let (x, y) = ((p.0 - 0.5) * self.scale, (p.1 - 0.5) * self.scale);
        (
            0.5 + x * self.cos - y * self.sin + self.shift.0,
            0.5 + x * self.sin + y * self.cos + self.shift.1,
        )
    }
}

fn capsule(a: Point, b: Point, r: f64) -> Prim {
    Prim::Capsule { a, b, r }
}

fn disc(c: Point, r: f64) -> Prim {
    Prim::Disc { c, r }
}

fn ring(c: Point, outer: f64, inner: f64) -> Prim {
    Prim::Ring { c, outer, inner }
}

/// Silhouette layout in unit coordinates (x right, y down).
fn silhouette(instrument: InstrumentLabel) -> Vec<Prim> {
    use InstrumentLabel::*;
    match instrument {
        Carver => vec![
            capsule((0.5, 0.18), (0.5, 0.82), 0.04),
            disc((0.5, 0.16), 0.07),
            disc((0.5, 0.84), 0.07),
        ],
        BandageScissors => vec![
            ring((0.22, 0.34), 0.09, 0.05),
            ring((0.22, 0.66), 0.09, 0.05),
            capsule((0.3, 0.4), (0.86, 0.47), 0.03),
            capsule((0.3, 0.6), (0.86, 0.53), 0.03),
            disc((0.86, 0.53), 0.04),
        ],
        Scalpel => vec![
            capsule((0.1, 0.5), (0.55, 0.5), 0.035),
            Prim::Triangle([(0.53, 0.42), (0.53, 0.58), (0.92, 0.47)]),
        ],
        Scissors => vec![
            capsule((0.25, 0.25), (0.86, 0.8), 0.03),
            capsule((0.25, 0.75), (0.86, 0.2), 0.03),
            ring((0.18, 0.18), 0.08, 0.045),
            ring((0.18, 0.82), 0.08, 0.045),
        ],
        DressingForceps => vec![
            capsule((0.14, 0.5), (0.88, 0.32), 0.03),
            capsule((0.14, 0.5), (0.88, 0.68), 0.03),
        ],
        TvForceps => vec![
            capsule((0.5, 0.12), (0.36, 0.88), 0.025),
            capsule((0.5, 0.12), (0.64, 0.88), 0.025),
            disc((0.5, 0.12), 0.05),
        ],
        McIndoeForceps => vec![
            capsule((0.12, 0.12), (0.86, 0.74), 0.025),
            capsule((0.12, 0.12), (0.74, 0.86), 0.025),
        ],
        ExProbe => vec![
            capsule((0.12, 0.72), (0.6, 0.72), 0.022),
            capsule((0.6, 0.72), (0.86, 0.26), 0.022),
        ],
        Probe => vec![capsule((0.1, 0.5), (0.85, 0.5), 0.02), disc((0.87, 0.5), 0.045)],
        UterineCurette => vec![
            capsule((0.5, 0.3), (0.5, 0.9), 0.035),
            ring((0.5, 0.2), 0.1, 0.06),
        ],
        NailClipper => vec![
            capsule((0.25, 0.45), (0.75, 0.45), 0.08),
            capsule((0.3, 0.64), (0.82, 0.72), 0.03),
            disc((0.3, 0.55), 0.05),
        ],
        Miscellaneous => Vec::new(),
    }
}

struct Canvas {
    size: usize,
    rgb: Vec<[f64; 3]>,
    /// Pixels covered by the instrument; defect motifs are clipped to it.
    surface: Vec<bool>,
}

impl Canvas {
    fn unit(&self, x: usize, y: usize) -> Point {
        let s = self.size as f64;
        ((x as f64 + 0.5) / s, (y as f64 + 0.5) / s)
    }

    /// Blends `color` over every pixel inside `shape` with opacity `alpha`,
    /// optionally only on the instrument surface.
    fn paint(&mut self, shape: &Prim, color: [f64; 3], alpha: f64, surface_only: bool) {
        for y in 0..self.size {
            for x in 0..self.size {
                let i = y * self.size + x;
                if (!surface_only || self.surface[i]) && shape.contains(self.unit(x, y)) {
                    let px = &mut self.rgb[i];
                    for c in 0..3 {
                        px[c] += (color[c] - px[c]) * alpha;
                    }
                }
            }
        }
    }
}

fn render(instrument: InstrumentLabel, defect: DefectLabel, size: u32, rng: &mut ChaCha8Rng) -> Result<RasterImage> {
    let n = size as usize;
    let base = rng.random_range(40.0..60.0);
    let tilt = (rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0));
    let mut canvas = Canvas {
        size: n,
        rgb: Vec::with_capacity(n * n),
        surface: vec![false; n * n],
    };
    for y in 0..n {
        for x in 0..n {
            let (u, v) = canvas.unit(x, y);
            let level = base + tilt.0 * (u - 0.5) + tilt.1 * (v - 0.5);
            canvas.rgb.push([level, level + 2.0, level + 6.0]);
        }
    }

    let jitter = Jitter::random(rng);
    let shape: Vec<Prim> = silhouette(instrument).iter().map(|p| p.map(&jitter)).collect();
    if instrument.is_miscellaneous() {
        for _ in 0..rng.random_range(2..5) {
            let c = (rng.random_range(0.2..0.8), rng.random_range(0.2..0.8));
            let color = [
                rng.random_range(60.0..230.0),
                rng.random_range(60.0..230.0),
                rng.random_range(60.0..230.0),
            ];
            let blob = if rng.random_bool(0.5) {
                disc(c, rng.random_range(0.05..0.16))
            } else {
                let d = (rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
                capsule(c, (c.0 + d.0, c.1 + d.1), rng.random_range(0.03..0.08))
            };
            canvas.paint(&blob, color, 1.0, false);
        }
    } else {
        let metal = rng.random_range(185.0..205.0);
        let sheen = rng.random_range(-8.0..8.0);
        for y in 0..n {
            for x in 0..n {
                let p = canvas.unit(x, y);
                if shape.iter().any(|s| s.contains(p)) {
                    let level = metal + sheen * (p.0 - 0.5);
                    canvas.rgb[y * n + x] = [level - 3.0, level, level + 4.0];
                    canvas.surface[y * n + x] = true;
                }
            }
        }
        if defect.is_defect() {
            let anchor = anchor_on(&shape, rng);
            draw_defect(&mut canvas, defect, &anchor, rng);
        }
    }

    let noise = Normal::new(0.0, 3.0).expect("valid sigma");
    let mut pixels = Vec::with_capacity(n * n * 3);
    for px in &canvas.rgb {
        for &v in px {
            pixels.push((v + noise.sample(rng)).round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(RasterImage::new(size, size, Channels::Rgb, pixels)?)
}

/// Where a defect sits: a point on the instrument's longest member, that
/// member's direction, and its half-width.
struct Anchor {
    at: Point,
    axis: Point,
    half_width: f64,
}

impl Anchor {
    /// `along` units down the axis and `across` units perpendicular to it.
    fn offset(&self, along: f64, across: f64) -> Point {
        (
            self.at.0 + self.axis.0 * along - self.axis.1 * across,
            self.at.1 + self.axis.1 * along + self.axis.0 * across,
        )
    }
}

fn anchor_on(shape: &[Prim], rng: &mut ChaCha8Rng) -> Anchor {
    let longest = shape
        .iter()
        .filter_map(|p| match *p {
            Prim::Capsule { a, b, r } => Some((a, b, r)),
            _ => None,
        })
        .max_by(|x, y| dist(x.0, x.1).total_cmp(&dist(y.0, y.1)));
    match longest {
        Some((a, b, r)) => {
            let t = rng.random_range(0.35..0.65);
            let len = dist(a, b);
            Anchor {
                at: (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)),
                axis: ((b.0 - a.0) / len, (b.1 - a.1) / len),
                half_width: r,
            }
        }
        None => Anchor {
            at: (0.5, 0.5),
            axis: (1.0, 0.0),
            half_width: 0.05,
        },
    }
}

fn draw_defect(canvas: &mut Canvas, defect: DefectLabel, anchor: &Anchor, rng: &mut ChaCha8Rng) {
    let hw = anchor.half_width;
    match defect {
        DefectLabel::Scratches => {
            for _ in 0..rng.random_range(4..7) {
                let half = rng.random_range(0.1..0.16);
                let tilt = rng.random_range(-0.25..0.25) * hw;
                let across = rng.random_range(-0.6..0.6) * hw;
                let shift = rng.random_range(-0.05..0.05);
                let a = anchor.offset(shift - half, across - tilt);
                let b = anchor.offset(shift + half, across + tilt);
                canvas.paint(&capsule(a, b, 0.005), [252.0, 252.0, 252.0], 0.95, true);
            }
        }
        DefectLabel::Crack => {
            let segments = 7;
            let step = 0.035;
            let mut along = -step * segments as f64 / 2.0;
            let mut prev = anchor.offset(along, 0.0);
            for i in 0..segments {
                let side = if i % 2 == 0 { 1.0 } else { -1.0 };
                along += step;
                let next = anchor.offset(along, side * rng.random_range(0.3..0.7) * hw);
                canvas.paint(&capsule(prev, next, 0.007), [20.0, 18.0, 16.0], 1.0, true);
                prev = next;
            }
        }
        DefectLabel::Pores => {
            for _ in 0..rng.random_range(20..30) {
                let c = anchor.offset(rng.random_range(-0.15..0.15), rng.random_range(-0.8..0.8) * hw);
                canvas.paint(&disc(c, rng.random_range(0.009..0.014)), [30.0, 28.0, 26.0], 1.0, true);
            }
        }
        DefectLabel::Cuts => {
            // A wedge biting into one edge of the member.
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let along = rng.random_range(-0.08..0.08);
            let depth = rng.random_range(0.9..1.4) * hw;
            let spread = rng.random_range(0.03..0.05);
            let tip = anchor.offset(along, side * (hw - depth));
            let a = anchor.offset(along - spread, side * (hw + 0.02));
            let b = anchor.offset(along + spread, side * (hw + 0.02));
            canvas.paint(&Prim::Triangle([tip, a, b]), [12.0, 12.0, 14.0], 1.0, false);
        }
        DefectLabel::Corrosion => {
            let radius = rng.random_range(0.14..0.18);
            let at = anchor.at;
            // Coarse value-noise lattice gives the patch its mottling.
            let lattice: Vec<f64> = (0..36).map(|_| rng.random_range(0.0..1.0)).collect();
            let rust = [150.0, 72.0, 28.0];
            let n = canvas.size;
            for y in 0..n {
                for x in 0..n {
                    let p = canvas.unit(x, y);
                    let d = dist(p, at);
                    if d > radius {
                        continue;
                    }
                    let gx = ((p.0 - at.0) / radius + 1.0) * 2.5;
                    let gy = ((p.1 - at.1) / radius + 1.0) * 2.5;
                    let mottle = value_noise(&lattice, gx, gy);
                    let alpha = (1.0 - d / radius).min(0.5) * 2.0 * (0.45 + 0.55 * mottle);
                    let px = &mut canvas.rgb[y * n + x];
                    for c in 0..3 {
                        px[c] += (rust[c] - px[c]) * alpha;
                    }
                }
            }
        }
        DefectLabel::NoDefect => {}
    }
}

fn value_noise(lattice: &[f64], x: f64, y: f64) -> f64 {
    let at = |i: usize, j: usize| lattice[(j.min(5)) * 6 + i.min(5)];
    let (x0, y0) = (x.floor().max(0.0) as usize, y.floor().max(0.0) as usize);
    let (fx, fy) = (x - x.floor(), y - y.floor());
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
    let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}
