//! Procedural "toy gaze world": people are bright squares with a dark tick
//! showing where they look, objects are colored discs, and each person's
//! target is the first disc their gaze ray hits (or where it leaves the frame).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::annotations::AnnotationRecord;
use crate::data::raster::{crop_head, quantize};
use crate::error::{Error, Result};
use crate::person::PersonInput;
use crate::tensor::Tensor;

const PERSON_COLORS: [[f32; 3]; 6] = [
    [0.92, 0.92, 0.92],
    [0.95, 0.85, 0.75],
    [0.80, 0.88, 0.95],
    [0.90, 0.80, 0.90],
    [0.85, 0.95, 0.85],
    [0.95, 0.95, 0.80],
];

/// Disc colors. Saturated, so no background, marker or tick pixel matches.
pub const OBJECT_COLORS: [[f32; 3]; 7] = [
    [0.90, 0.15, 0.15],
    [0.15, 0.80, 0.25],
    [0.20, 0.35, 0.95],
    [0.95, 0.80, 0.10],
    [0.85, 0.20, 0.85],
    [0.10, 0.80, 0.85],
    [0.95, 0.50, 0.10],
];

const TICK_COLOR: [f32; 3] = [0.05, 0.05, 0.05];

/// Rays passing closer than this (pixels) to a disc rim are resampled.
const GRAZE_MARGIN: f64 = 1.5;

const GAZE_ATTEMPTS: usize = 60;
const PLACE_ATTEMPTS: usize = 200;
const SCENE_ATTEMPTS: usize = 20;

/// Generator parameters; pixel sizes refer to the rendered image.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyParams {
    pub image_size: usize,
    pub n_persons: usize,
    pub n_objects: usize,
    /// Side of a person's square marker.
    pub marker: f64,
    /// Side of the head box drawn around each marker.
    pub window: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Share of people looking at an object.
    pub p_object: f64,
    /// Share of people looking out through the top edge (labelled out of frame).
    pub p_offscreen: f64,
    /// Gaze points per in-frame record.
    pub annotators: usize,
    /// Normalized std of annotator jitter; 0 keeps points exact.
    pub jitter: f64,
}

impl Default for ToyParams {
    fn default() -> Self {
        ToyParams::for_image(112)
    }
}

impl ToyParams {
    /// Defaults with pixel sizes scaled to `image_size`.
    pub fn for_image(image_size: usize) -> Self {
        let k = image_size as f64 / 112.0;
        ToyParams {
            image_size,
            n_persons: 4,
            n_objects: 4,
            marker: 10.0 * k,
            window: 22.0 * k,
            radius_min: 4.5 * k,
            radius_max: 7.0 * k,
            p_object: 0.7,
            p_offscreen: 0.2,
            annotators: 1,
            jitter: 0.0,
        }
    }

    fn tick_len(&self) -> f64 {
        self.marker / 2.0 + 4.0
    }

    /// `key=value` pairs joined by commas, as stored in dataset manifests.
    pub fn to_manifest(&self) -> String {
        format!(
            "image_size={},n_persons={},n_objects={},marker={},window={},radius_min={},radius_max={},p_object={},p_offscreen={},annotators={},jitter={}",
            self.image_size,
            self.n_persons,
            self.n_objects,
            self.marker,
            self.window,
            self.radius_min,
            self.radius_max,
            self.p_object,
            self.p_offscreen,
            self.annotators,
            self.jitter
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Generation(m.into()));
        if self.image_size < 16 {
            return bad("image_size must be at least 16");
        }
        if !(self.marker > 0.0 && self.window >= self.marker && self.window < self.image_size as f64 / 2.0) {
            return bad("need 0 < marker <= window < image_size / 2");
        }
        if !(self.radius_min > 0.0 && self.radius_max >= self.radius_min) {
            return bad("need 0 < radius_min <= radius_max");
        }
        if !(self.p_object >= 0.0 && self.p_offscreen >= 0.0 && self.p_object + self.p_offscreen <= 1.0) {
            return bad("p_object and p_offscreen must be probabilities summing to at most 1");
        }
        if self.n_objects > OBJECT_COLORS.len() {
            return bad("at most 7 objects per scene");
        }
        if self.annotators == 0 || !(self.jitter >= 0.0) {
            return bad("need at least one annotator and nonnegative jitter");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GazeTarget {
    /// First disc hit; `point` is its center in pixels.
    Object { index: usize, point: [f64; 2] },
    /// Ray leaves through the left, right or bottom edge at this pixel point.
    Edge([f64; 2]),
    /// Ray leaves through the top edge.
    OffScreen,
}

impl GazeTarget {
    pub fn inout(&self) -> bool {
        !matches!(self, GazeTarget::OffScreen)
    }

    /// Target in pixels, if in frame.
    pub fn point(&self) -> Option<[f64; 2]> {
        match *self {
            GazeTarget::Object { point, .. } | GazeTarget::Edge(point) => Some(point),
            GazeTarget::OffScreen => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyObject {
    pub center: [f64; 2],
    pub radius: f64,
    pub color: [f32; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyPerson {
    pub center: [f64; 2],
    /// Gaze direction, radians; x right, y down.
    pub theta: f64,
    pub color: [f32; 3],
    pub target: GazeTarget,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyLayout {
    pub persons: Vec<ToyPerson>,
    pub objects: Vec<ToyObject>,
}

/// One generated scene: the 8-bit-quantized image, head crops, and records.
#[derive(Clone, Debug)]
pub struct ToyScene {
    pub image: Tensor<f32>,
    pub persons: Vec<PersonInput>,
    pub records: Vec<AnnotationRecord>,
    pub layout: ToyLayout,
}

/// Seed of scene `index` in a dataset generated from `base`.
pub fn scene_seed(base: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(base ^ mix(index))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Where a ray from `origin` along `theta` ends up in a `size × size` frame.
pub fn cast_ray(origin: [f64; 2], theta: f64, objects: &[ToyObject], size: usize) -> GazeTarget {
    let u = [theta.cos(), theta.sin()];
    let mut best: Option<(f64, usize)> = None;
    for (i, o) in objects.iter().enumerate() {
        let w = [o.center[0] - origin[0], o.center[1] - origin[1]];
        let along = w[0] * u[0] + w[1] * u[1];
        let perp2 = w[0] * w[0] + w[1] * w[1] - along * along;
        let r2 = o.radius * o.radius;
        if along <= 0.0 || perp2 > r2 {
            continue;
        }
        let t = along - (r2 - perp2).sqrt();
        if t > 0.0 && best.map_or(true, |(bt, _)| t < bt) {
            best = Some((t, i));
        }
    }
    if let Some((_, i)) = best {
        return GazeTarget::Object {
            index: i,
            point: objects[i].center,
        };
    }
    let s = size as f64;
    let exit = |o: f64, d: f64| -> f64 {
        if d > 0.0 {
            (s - o) / d
        } else if d < 0.0 {
            -o / d
        } else {
            f64::INFINITY
        }
    };
    let (tx, ty) = (exit(origin[0], u[0]), exit(origin[1], u[1]));
    if ty <= tx && u[1] < 0.0 {
        return GazeTarget::OffScreen;
    }
    let t = tx.min(ty);
    let p = [
        (origin[0] + t * u[0]).clamp(0.0, s),
        (origin[1] + t * u[1]).clamp(0.0, s),
    ];
    GazeTarget::Edge(p)
}

/// True when the ray passes within [`GRAZE_MARGIN`] of a disc rim or leaves
/// the frame near a corner, where pixel rendering makes the target ambiguous.
fn is_ambiguous(origin: [f64; 2], theta: f64, objects: &[ToyObject], size: usize) -> bool {
    let u = [theta.cos(), theta.sin()];
    for o in objects {
        let w = [o.center[0] - origin[0], o.center[1] - origin[1]];
        let along = w[0] * u[0] + w[1] * u[1];
        let perp = (w[0] * u[1] - w[1] * u[0]).abs();
        if along > 0.0 && (perp - o.radius).abs() < GRAZE_MARGIN {
            return true;
        }
    }
    if let GazeTarget::Edge(p) | GazeTarget::Object { point: p, .. } = cast_ray(origin, theta, &[], size) {
        let s = size as f64;
        let near = |v: f64| v < GRAZE_MARGIN || v > s - GRAZE_MARGIN;
        return near(p[0]) && near(p[1]);
    }
    // off screen: check the top-edge exit point
    let t = -origin[1] / u[1];
    let x = origin[0] + t * u[0];
    x < GRAZE_MARGIN || x > size as f64 - GRAZE_MARGIN
}

fn place_layout(p: &ToyParams, rng: &mut ChaCha8Rng) -> Option<ToyLayout> {
    let s = p.image_size as f64;
    let half = p.window / 2.0 + 1.0;
    let mut centers: Vec<[f64; 2]> = Vec::new();
    for _ in 0..p.n_persons {
        let c = (0..PLACE_ATTEMPTS).find_map(|_| {
            let c = [rng.gen_range(half..s - half), rng.gen_range((0.3 * s).max(half)..s - half)];
            centers.iter().all(|q| dist(c, *q) >= p.window).then_some(c)
        })?;
        centers.push(c);
    }
    let mut colors = OBJECT_COLORS.to_vec();
    colors.shuffle(rng);
    let mut objects: Vec<ToyObject> = Vec::new();
    for k in 0..p.n_objects {
        let o = (0..PLACE_ATTEMPTS).find_map(|_| {
            let r = rng.gen_range(p.radius_min..=p.radius_max);
            let c = [rng.gen_range(r + 1.0..s - r - 1.0), rng.gen_range(r + 1.0..s - r - 1.0)];
            let clear_people = centers.iter().all(|q| dist(c, *q) >= r + p.tick_len() + 3.0);
            let clear_discs = objects.iter().all(|o| dist(c, o.center) >= r + o.radius + 4.0);
            (clear_people && clear_discs).then_some(ToyObject {
                center: c,
                radius: r,
                color: colors[k],
            })
        })?;
        objects.push(o);
    }
    let mut persons = Vec::new();
    for (i, &c) in centers.iter().enumerate() {
        let (theta, target) = (0..GAZE_ATTEMPTS).find_map(|_| sample_gaze(p, c, &objects, rng))?;
        persons.push(ToyPerson {
            center: c,
            theta,
            color: PERSON_COLORS[i % PERSON_COLORS.len()],
            target,
        });
    }
    Some(ToyLayout { persons, objects })
}

fn sample_gaze(p: &ToyParams, c: [f64; 2], objects: &[ToyObject], rng: &mut ChaCha8Rng) -> Option<(f64, GazeTarget)> {
    let s = p.image_size as f64;
    let u: f64 = rng.gen();
    #[derive(PartialEq)]
    enum Want {
        Object,
        Off,
        Edge,
    }
    let (want, theta) = if u < p.p_object && !objects.is_empty() {
        let o = &objects[rng.gen_range(0..objects.len())];
        let d = dist(c, o.center);
        let spread = (o.radius / d).asin() * 0.5;
        let base = (o.center[1] - c[1]).atan2(o.center[0] - c[0]);
        (Want::Object, base + rng.gen_range(-spread..=spread))
    } else if u < p.p_object + p.p_offscreen {
        let x = rng.gen_range(0.05 * s..0.95 * s);
        (Want::Off, (-c[1]).atan2(x - c[0]))
    } else {
        // a point on the left, bottom or right edge, uniform along their length
        let t = rng.gen_range(0.0..3.0 * s);
        let q = if t < s {
            [0.0, t]
        } else if t < 2.0 * s {
            [t - s, s]
        } else {
            [s, 3.0 * s - t]
        };
        (Want::Edge, (q[1] - c[1]).atan2(q[0] - c[0]))
    };
    if is_ambiguous(c, theta, objects, p.image_size) {
        return None;
    }
    let target = cast_ray(c, theta, objects, p.image_size);
    let got = match target {
        GazeTarget::Object { .. } => Want::Object,
        GazeTarget::OffScreen => Want::Off,
        GazeTarget::Edge(_) => Want::Edge,
    };
    (got == want).then_some((theta, target))
}

fn render(p: &ToyParams, layout: &ToyLayout, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let n = p.image_size;
    let s = n as f64;
    let mut img = vec![0f32; n * n * 3];
    for y in 0..n {
        let base = 0.14 + 0.06 * (y as f32 / n as f32);
        for x in 0..n {
            let noise: f32 = rng.gen_range(-0.03..0.03);
            let px = &mut img[(y * n + x) * 3..][..3];
            px.copy_from_slice(&[base + noise, base + noise, base + 0.02 + noise]);
        }
    }
    let mut paint = |cx: f64, cy: f64, reach: f64, color: [f32; 3], inside: &dyn Fn(f64, f64) -> bool| {
        let lo = |v: f64| (v - reach).floor().max(0.0) as usize;
        let hi = |v: f64| ((v + reach).ceil().max(0.0) as usize).min(n);
        for y in lo(cy)..hi(cy) {
            for x in lo(cx)..hi(cx) {
                if inside(x as f64 + 0.5, y as f64 + 0.5) {
                    img[(y * n + x) * 3..][..3].copy_from_slice(&color);
                }
            }
        }
    };
    for o in &layout.objects {
        let (c, r) = (o.center, o.radius);
        paint(c[0], c[1], r + 1.0, o.color, &|x, y| dist([x, y], c) <= r);
    }
    let m = p.marker / 2.0;
    let len = p.tick_len();
    for q in &layout.persons {
        let c = q.center;
        paint(c[0], c[1], m + 1.0, q.color, &|x, y| (x - c[0]).abs() <= m && (y - c[1]).abs() <= m);
        let u = [q.theta.cos(), q.theta.sin()];
        paint(c[0], c[1], len + 2.0, TICK_COLOR, &|x, y| {
            let w = [x - c[0], y - c[1]];
            let t = (w[0] * u[0] + w[1] * u[1]).clamp(0.0, len);
            dist([x, y], [c[0] + t * u[0], c[1] + t * u[1]]) <= 1.0
        });
    }
    debug_assert!(s > 0.0);
    img.iter_mut().for_each(|v| *v = quantize(*v) as f32 / 255.0);
    Tensor::new(vec![n, n, 3], img).expect("sized from n")
}

/// Normalized head box around a marker, clamped to the frame.
pub fn head_box(p: &ToyParams, center: [f64; 2]) -> [f32; 4] {
    let s = p.image_size as f64;
    let h = p.window / 2.0;
    let f = |v: f64| (v / s).clamp(0.0, 1.0) as f32;
    [f(center[0] - h), f(center[1] - h), f(center[0] + h), f(center[1] + h)]
}

/// Generates scene `seed`. Head crops are `crop_size × crop_size`;
/// records reference `image_ref`.
pub fn gen_toy_scene(p: &ToyParams, seed: u64, crop_size: usize, image_ref: &str) -> Result<ToyScene> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = (0..SCENE_ATTEMPTS)
        .find_map(|_| place_layout(p, &mut rng))
        .ok_or_else(|| Error::Generation(format!("no valid layout for seed {seed} after {SCENE_ATTEMPTS} attempts")))?;
    let image = render(p, &layout, &mut rng);
    let s = p.image_size as f64;
    let jitter = Normal::new(0.0, p.jitter).map_err(|e| Error::Generation(e.to_string()))?;
    let mut persons = Vec::with_capacity(layout.persons.len());
    let mut records = Vec::with_capacity(layout.persons.len());
    for q in &layout.persons {
        let bbox = head_box(p, q.center);
        persons.push(PersonInput::new(crop_head(&image, bbox, crop_size)?, bbox)?);
        let points = match q.target.point() {
            None => vec![],
            Some(t) => {
                let g = [t[0] / s, t[1] / s];
                if p.annotators == 1 && p.jitter == 0.0 {
                    vec![g]
                } else {
                    (0..p.annotators)
                        .map(|_| g.map(|v| (v + jitter.sample(&mut rng)).clamp(0.0, 1.0)))
                        .collect()
                }
            }
        };
        records.push(AnnotationRecord {
            image_ref: image_ref.to_string(),
            bbox,
            inout: q.target.inout(),
            points,
        });
    }
    Ok(ToyScene {
        image,
        persons,
        records,
        layout,
    })
}

fn color_index(px: &[f32]) -> Option<usize> {
    OBJECT_COLORS
        .iter()
        .position(|c| c.iter().zip(px).all(|(a, b)| (a - b).abs() < 0.01))
}

/// Recovers a gaze target from rendered pixels alone: marches the ray in
/// small steps and, on the first disc-colored pixel, returns the centroid of
/// that disc's pixels. Pixel coordinates.
pub fn ray_march(image: &Tensor<f32>, origin: [f64; 2], theta: f64) -> GazeTarget {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let d = image.data();
    let u = [theta.cos(), theta.sin()];
    let mut t = 0.0;
    loop {
        let (x, y) = (origin[0] + t * u[0], origin[1] + t * u[1]);
        if y < 0.0 {
            return GazeTarget::OffScreen;
        }
        if x < 0.0 || x >= w as f64 || y >= h as f64 {
            return GazeTarget::Edge([x.clamp(0.0, w as f64), y.clamp(0.0, h as f64)]);
        }
        let (xi, yi) = (x as usize, y as usize);
        if let Some(k) = color_index(&d[(yi * w + xi) * 3..][..3]) {
            return GazeTarget::Object {
                index: k,
                point: centroid(image, xi, yi, k),
            };
        }
        t += 0.05;
    }
}

fn centroid(image: &Tensor<f32>, x0: usize, y0: usize, k: usize) -> [f64; 2] {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let d = image.data();
    let mut seen = vec![false; h * w];
    let mut stack = vec![(x0, y0)];
    seen[y0 * w + x0] = true;
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    while let Some((x, y)) = stack.pop() {
        sx += x as f64 + 0.5;
        sy += y as f64 + 0.5;
        n += 1.0;
        let nbrs = [(x.wrapping_sub(1), y), (x + 1, y), (x, y.wrapping_sub(1)), (x, y + 1)];
        for (nx, ny) in nbrs {
            if nx < w && ny < h && !seen[ny * w + nx] && color_index(&d[(ny * w + nx) * 3..][..3]) == Some(k) {
                seen[ny * w + nx] = true;
                stack.push((nx, ny));
            }
        }
    }
    [sx / n, sy / n]
}

/// Mean distance from the image center to in-frame targets over `n` scenes:
/// the score of always predicting `(0.5, 0.5)`.
pub fn center_baseline(p: &ToyParams, base_seed: u64, n: usize) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..n {
        let scene = gen_toy_scene(p, scene_seed(base_seed, i as u64), 16, "baseline")?;
        for r in scene.records.iter().filter(|r| r.inout) {
            let m = mean_point(&r.points);
            sum += dist(m, [0.5, 0.5]);
            count += 1;
        }
    }
    Ok(sum / count.max(1) as f64)
}

fn mean_point(points: &[[f64; 2]]) -> [f64; 2] {
    let k = points.len() as f64;
    [
        points.iter().map(|p| p[0]).sum::<f64>() / k,
        points.iter().map(|p| p[1]).sum::<f64>() / k,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(seed: u64) -> ToyScene {
        gen_toy_scene(&ToyParams::default(), seed, 32, "s.png").unwrap()
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let (a, b) = (scene(3), scene(3));
        assert_eq!(a.image, b.image);
        assert_eq!(a.records, b.records);
        assert_ne!(a.image, scene(4).image);
    }

    #[test]
    fn ray_through_lone_object_center_hits_it_exactly() {
        let o = ToyObject {
            center: [80.0, 30.0],
            radius: 5.0,
            color: OBJECT_COLORS[0],
        };
        let origin = [20.0, 90.0];
        let theta = (30.0f64 - 90.0).atan2(80.0 - 20.0);
        assert_eq!(
            cast_ray(origin, theta, std::slice::from_ref(&o), 112),
            GazeTarget::Object {
                index: 0,
                point: [80.0, 30.0]
            }
        );
    }

    #[test]
    fn edges_and_top_band() {
        assert_eq!(cast_ray([50.0, 50.0], -std::f64::consts::FRAC_PI_2, &[], 100), GazeTarget::OffScreen);
        assert_eq!(cast_ray([50.0, 50.0], 0.0, &[], 100), GazeTarget::Edge([100.0, 50.0]));
        let GazeTarget::Edge(p) = cast_ray([50.0, 40.0], std::f64::consts::FRAC_PI_2, &[], 100) else {
            panic!("expected the bottom edge")
        };
        assert!(dist(p, [50.0, 100.0]) < 1e-9);
    }

    #[test]
    fn generated_targets_match_ray_march_oracle() {
        for seed in 0..40 {
            let sc = scene(seed);
            for q in &sc.layout.persons {
                let marched = ray_march(&sc.image, q.center, q.theta);
                match (q.target, marched) {
                    (GazeTarget::Object { point: a, .. }, GazeTarget::Object { point: b, .. })
                    | (GazeTarget::Edge(a), GazeTarget::Edge(b)) => {
                        assert!(dist(a, b) <= 1.0, "seed {seed}: {a:?} vs {b:?}")
                    }
                    (GazeTarget::OffScreen, GazeTarget::OffScreen) => {}
                    (t, m) => panic!("seed {seed}: target {t:?} but oracle found {m:?}"),
                }
            }
        }
    }

    #[test]
    fn records_are_valid_and_consistent() {
        for seed in 0..20 {
            let sc = scene(seed);
            assert_eq!(sc.records.len(), 4);
            for (r, q) in sc.records.iter().zip(&sc.layout.persons) {
                r.validate().unwrap();
                assert_eq!(r.inout, q.target.inout());
                assert_eq!(r.points.len(), usize::from(r.inout));
            }
        }
    }

    #[test]
    fn target_mix_is_roughly_as_configured() {
        let (mut obj, mut off, mut n) = (0, 0, 0);
        for seed in 0..200 {
            for q in scene(seed).layout.persons {
                n += 1;
                match q.target {
                    GazeTarget::Object { .. } => obj += 1,
                    GazeTarget::OffScreen => off += 1,
                    GazeTarget::Edge(_) => {}
                }
            }
        }
        let (fo, ff) = (obj as f64 / n as f64, off as f64 / n as f64);
        assert!((0.6..0.8).contains(&fo), "object share {fo}");
        assert!((0.13..0.27).contains(&ff), "off-screen share {ff}");
    }

    #[test]
    fn head_crop_shows_the_tick() {
        let p = ToyParams::default();
        let sc = scene(11);
        for (q, person) in sc.layout.persons.iter().zip(&sc.persons) {
            // a point on the tick just outside the square, in crop coordinates
            let reach = p.marker / 2.0 + 2.5;
            let tip = [q.center[0] + reach * q.theta.cos(), q.center[1] + reach * q.theta.sin()];
            let b = person.bbox;
            let s = p.image_size as f64;
            let cx = (tip[0] / s - b[0] as f64) / (b[2] - b[0]) as f64 * 32.0;
            let cy = (tip[1] / s - b[1] as f64) / (b[3] - b[1]) as f64 * 32.0;
            let px = &person.crop.data()[(cy as usize * 32 + cx as usize) * 3..][..3];
            assert!(px.iter().all(|v| *v < 0.15), "tick not dark in crop: {px:?}");
        }
    }

    #[test]
    fn seeds_are_spread() {
        assert_ne!(scene_seed(0, 0), scene_seed(0, 1));
        assert_ne!(scene_seed(0, 1), scene_seed(1, 0));
    }
}
