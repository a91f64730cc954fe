//! 8-bit grayscale images as field data, synthetic test images and the L1
//! metrics used to score an assimilation.
//!
//! Binding convention: an `n x n` image covers node columns `i = 0..n` and
//! node rows `j = n..1`, i.e. pixel `(col, row)` sits on node `(col, n - row)`
//! so that image row 0 is the top of the square. Pixels falling on the edge
//! of the square or off the region interior are dropped.

use std::io::{Read, Write};
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{DomainMask, Grid2D};
use crate::error::{Error, Result};
use crate::operator::StateField;
use crate::Field;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntensityImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl IntensityImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Dimension {
                expected: format!("{} pixels", width * height),
                found: format!("{} pixels", pixels.len()),
            });
        }
        Ok(IntensityImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, level: u8) -> Self {
        IntensityImage {
            width,
            height,
            pixels: vec![level; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    fn set(&mut self, col: usize, row: usize, level: u8) {
        self.pixels[row * self.width + col] = level;
    }

    /// Binary graymap (`P5`, maxval 255).
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(file, "P5\n{} {}\n255\n", self.width, self.height)?;
        file.write_all(&self.pixels)?;
        file.flush()?;
        Ok(())
    }

    /// Reads any graymap the `image` crate understands, converting to 8-bit luma.
    pub fn read_pgm(path: &Path) -> Result<Self> {
        let reader = image::ImageReader::open(path)?.with_guessed_format()?;
        let img = reader
            .decode()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
            .into_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        IntensityImage::new(w, h, img.into_raw())
    }
}

/// Copies pixel intensities onto the interior nodes; zero elsewhere.
pub fn image_to_field(img: &IntensityImage, mask: &DomainMask) -> Result<Field> {
    let n = mask.grid().n();
    if img.width != n || img.height != n {
        return Err(Error::Dimension {
            expected: format!("{n}x{n} image"),
            found: format!("{}x{}", img.width, img.height),
        });
    }
    let mut field = mask.grid().zeros();
    for row in 0..n {
        let j = n - row;
        for col in 0..n {
            if mask.is_interior(col, j) {
                field[[col, j]] = f64::from(img.get(col, row));
            }
        }
    }
    Ok(field)
}

/// Value range of a field before display clamping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldRange {
    pub min: f64,
    pub max: f64,
}

/// Display image of a field: values rounded and clamped to `[0, 255]`;
/// negative values show as black. Returns the raw range for the sidecar.
pub fn field_to_image(field: &Field, grid: Grid2D) -> (IntensityImage, FieldRange) {
    let n = grid.n();
    let mut img = IntensityImage::filled(n, n, 0);
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in field.iter() {
        min = min.min(v);
        max = max.max(v);
    }
    for row in 0..n {
        for col in 0..n {
            let v = field[[col, n - row]];
            img.set(col, row, v.round().clamp(0.0, 255.0) as u8);
        }
    }
    (img, FieldRange { min, max })
}

const RAW_MAGIC: &[u8; 8] = b"BMFIELD1";

/// Exact dump: magic, rows and columns as little-endian `u64`, then the
/// values as little-endian `f64` in row-major `[i, j]` order.
pub fn write_raw(field: &Field, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(RAW_MAGIC)?;
    let (r, c) = field.dim();
    out.write_all(&(r as u64).to_le_bytes())?;
    out.write_all(&(c as u64).to_le_bytes())?;
    for &v in field.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_raw(path: &Path) -> Result<Field> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 24 || &bytes[..8] != RAW_MAGIC {
        return Err(Error::Format(format!("{}: not a raw field dump", path.display())));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()) as usize;
    let (r, c) = (word(8), word(16));
    let body = &bytes[24..];
    if body.len() != r * c * 8 {
        return Err(Error::Format(format!("{}: expected {r}x{c} values", path.display())));
    }
    let values = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Field::from_shape_vec((r, c), values).map_err(|e| Error::Format(e.to_string()))
}

/// The three synthetic images as a state: text in `u`, shapes in `w`, chart in `v`.
pub fn synthetic_state(mask: &DomainMask, seed: u64) -> Result<StateField> {
    let n = mask.grid().n();
    let [u, w, v] = TestImageKind::ALL.map(|kind| generate_test_image(kind, seed, n).and_then(|img| image_to_field(&img, mask)));
    Ok(StateField::new(u?, v?, w?))
}

/// Mean absolute value over interior nodes.
pub fn l1_norm(field: &Field, mask: &DomainMask) -> Result<f64> {
    let count = mask.interior_count();
    if count == 0 {
        return Err(Error::param("mask", "region has no interior nodes"));
    }
    Ok(interior_abs_sum(field, mask, |v, _| v) / count as f64)
}

fn interior_abs_sum(field: &Field, mask: &DomainMask, f: impl Fn(f64, (usize, usize)) -> f64) -> f64 {
    let mut total = 0.0;
    for (idx, &v) in field.indexed_iter() {
        if mask.is_interior(idx.0, idx.1) {
            total += f(v, idx).abs();
        }
    }
    total
}

/// `100 sum |evolved - desired| / sum |desired|` over interior nodes;
/// `None` when `desired` vanishes there.
pub fn l1_relative_error(evolved: &Field, desired: &Field, mask: &DomainMask) -> Option<f64> {
    let denom = interior_abs_sum(desired, mask, |v, _| v);
    if denom == 0.0 {
        return None;
    }
    let num = interior_abs_sum(evolved, mask, |v, idx| v - desired[idx]);
    Some(100.0 * num / denom)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TestImageKind {
    /// Rows of blocky glyphs on banded backgrounds.
    PiecewiseText,
    /// Overlapping discs, rectangles and rings at many intensities.
    Shapes,
    /// Groups of three bars at halving periods, both orientations.
    ResolutionChart,
}

impl TestImageKind {
    pub const ALL: [TestImageKind; 3] = [
        TestImageKind::PiecewiseText,
        TestImageKind::Shapes,
        TestImageKind::ResolutionChart,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestImageKind::PiecewiseText => "text",
            TestImageKind::Shapes => "shapes",
            TestImageKind::ResolutionChart => "chart",
        }
    }
}

/// Deterministic piecewise-constant test image of side `size`.
pub fn generate_test_image(kind: TestImageKind, seed: u64, size: usize) -> Result<IntensityImage> {
    if ![128, 256, 512].contains(&size) {
        return Err(Error::param("size", format!("must be 128, 256 or 512, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (kind as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    Ok(match kind {
        TestImageKind::PiecewiseText => text_image(&mut rng, size),
        TestImageKind::Shapes => shapes_image(&mut rng, size),
        TestImageKind::ResolutionChart => chart_image(size),
    })
}

fn fill_rect(img: &mut IntensityImage, x0: usize, y0: usize, w: usize, h: usize, level: u8) {
    for row in y0..(y0 + h).min(img.height) {
        for col in x0..(x0 + w).min(img.width) {
            img.set(col, row, level);
        }
    }
}

fn text_image(rng: &mut ChaCha8Rng, size: usize) -> IntensityImage {
    let mut img = IntensityImage::filled(size, size, 0);
    let cell = (size / 64).max(1);
    let glyph_w = 5 * cell;
    let line_h = 9 * cell;
    let mut row0 = cell;
    while row0 + line_h <= size {
        let background: u8 = rng.random_range(20..=235);
        fill_rect(&mut img, 0, row0 - cell.min(row0), size, line_h + cell, background);
        let ink: u8 = if background > 128 {
            rng.random_range(0..=60)
        } else {
            rng.random_range(190..=255)
        };
        let mut col0 = cell;
        while col0 + glyph_w <= size {
            // 5x7 glyph bitmap; some cells are spaces
            if rng.random_range(0..6) > 0 {
                for gy in 0..7 {
                    for gx in 0..5 {
                        if rng.random_bool(0.5) {
                            fill_rect(&mut img, col0 + gx * cell, row0 + gy * cell, cell, cell, ink);
                        }
                    }
                }
            }
            col0 += glyph_w + cell;
        }
        row0 += line_h + cell;
    }
    img
}

fn shapes_image(rng: &mut ChaCha8Rng, size: usize) -> IntensityImage {
    let mut img = IntensityImage::filled(size, size, 0);
    let s = size as f64;
    // every level once, in random order, so the histogram is wide
    let mut levels: Vec<u8> = (0..=255).collect();
    for i in (1..levels.len()).rev() {
        let j = rng.random_range(0..=i);
        levels.swap(i, j);
    }
    let count = 320;
    for (idx, shape) in (0..count).enumerate() {
        let level = levels[shape % 256];
        // later shapes are smaller so they stay visible on top
        let scale = 0.25 * (1.0 - idx as f64 / count as f64) + 0.02;
        let cx = rng.random_range(0.0..s);
        let cy = rng.random_range(0.0..s);
        let r = rng.random_range(0.3..1.0) * scale * s;
        match rng.random_range(0..3) {
            0 => {
                let r2 = r * r;
                for row in 0..size {
                    for col in 0..size {
                        let (dx, dy) = (col as f64 - cx, row as f64 - cy);
                        if dx * dx + dy * dy < r2 {
                            img.set(col, row, level);
                        }
                    }
                }
            }
            1 => {
                let aspect = rng.random_range(0.3..1.5);
                let x0 = (cx - r).max(0.0) as usize;
                let y0 = (cy - r * aspect).max(0.0) as usize;
                fill_rect(&mut img, x0, y0, (2.0 * r) as usize + 1, (2.0 * r * aspect) as usize + 1, level);
            }
            _ => {
                let (outer, inner) = (r * r, (0.6 * r) * (0.6 * r));
                for row in 0..size {
                    for col in 0..size {
                        let (dx, dy) = (col as f64 - cx, row as f64 - cy);
                        let d2 = dx * dx + dy * dy;
                        if d2 < outer && d2 >= inner {
                            img.set(col, row, level);
                        }
                    }
                }
            }
        }
    }
    img
}

/// One group of three bars in the resolution chart.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BarGroup {
    /// Bar width in pixels; the period is twice this.
    pub bar: usize,
    pub x0: usize,
    pub y0: usize,
    pub vertical_bars: bool,
}

impl BarGroup {
    /// Bars are `5 * bar` long.
    pub fn extent(&self) -> (usize, usize) {
        let across = 5 * self.bar;
        let along = 5 * self.bar;
        if self.vertical_bars {
            (across, along)
        } else {
            (along, across)
        }
    }
}

/// Layout of the resolution chart at a given size.
pub fn resolution_chart_groups(size: usize) -> Vec<BarGroup> {
    let unit = size / 128;
    let mut groups = Vec::new();
    let x = 4 * unit;
    let mut y = 4 * unit;
    for level in 0..5 {
        let bar = (8 * unit) >> level;
        if bar == 0 {
            break;
        }
        let a = BarGroup {
            bar,
            x0: x,
            y0: y,
            vertical_bars: true,
        };
        let (w, h) = a.extent();
        let b = BarGroup {
            bar,
            x0: x + w + 2 * bar,
            y0: y,
            vertical_bars: false,
        };
        groups.push(a);
        groups.push(b);
        y += h + 2 * bar.max(unit);
    }
    groups
}

fn chart_image(size: usize) -> IntensityImage {
    let mut img = IntensityImage::filled(size, size, 40);
    for g in resolution_chart_groups(size) {
        let (w, h) = g.extent();
        fill_rect(&mut img, g.x0, g.y0, w, h, 40);
        for k in 0..3 {
            let offset = 2 * k * g.bar;
            if g.vertical_bars {
                fill_rect(&mut img, g.x0 + offset, g.y0, g.bar, h, 250);
            } else {
                fill_rect(&mut img, g.x0, g.y0 + offset, w, g.bar, 250);
            }
        }
    }
    // calibration blocks down the right edge
    let unit = size / 128;
    let levels = [0u8, 80, 160, 255];
    for (k, &level) in levels.iter().enumerate() {
        fill_rect(&mut img, 104 * unit, 4 * unit + k * 30 * unit, 20 * unit, 26 * unit, level);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainKind;
    use proptest::prelude::*;

    fn mask(n: usize) -> DomainMask {
        DomainMask::build(Grid2D::new(n).unwrap(), DomainKind::QuarterCircle)
    }

    #[test]
    fn black_and_white_images() {
        let m = mask(64);
        let zero = image_to_field(&IntensityImage::filled(64, 64, 0), &m).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let white = image_to_field(&IntensityImage::filled(64, 64, 255), &m).unwrap();
        for ((i, j), &v) in white.indexed_iter() {
            assert_eq!(v, if m.is_interior(i, j) { 255.0 } else { 0.0 });
        }
        assert_eq!(l1_norm(&white, &m).unwrap(), 255.0);
    }

    #[test]
    fn checkerboard_sum_counts_white_interior() {
        let m = mask(64);
        let mut pixels = vec![0u8; 64 * 64];
        for row in 0..64 {
            for col in 0..64 {
                if (row + col) % 2 == 0 {
                    pixels[row * 64 + col] = 255;
                }
            }
        }
        let img = IntensityImage::new(64, 64, pixels).unwrap();
        let field = image_to_field(&img, &m).unwrap();
        let mut white = 0usize;
        for row in 0..64 {
            for col in 0..64 {
                if img.get(col, row) == 255 && m.is_interior(col, 64 - row) {
                    white += 1;
                }
            }
        }
        assert_eq!(field.sum(), 255.0 * white as f64);
    }

    #[test]
    fn dimension_mismatch() {
        let m = mask(64);
        assert!(matches!(
            image_to_field(&IntensityImage::filled(32, 64, 1), &m),
            Err(Error::Dimension { .. })
        ));
        assert!(IntensityImage::new(3, 3, vec![0; 8]).is_err());
    }

    #[test]
    fn l1_norm_of_constant() {
        let m = mask(32);
        let mut f = m.grid().zeros();
        for ((i, j), v) in f.indexed_iter_mut() {
            if m.is_interior(i, j) {
                *v = 100.0;
            }
        }
        assert_eq!(l1_norm(&f, &m).unwrap(), 100.0);
        assert_eq!(l1_norm(&m.grid().zeros(), &m).unwrap(), 0.0);
    }

    #[test]
    fn relative_error_cases() {
        let m = mask(32);
        let img = generate_test_image(TestImageKind::Shapes, 3, 128).unwrap();
        let m128 = mask(128);
        let desired = image_to_field(&img, &m128).unwrap();
        assert_eq!(l1_relative_error(&desired, &desired, &m128), Some(0.0));
        let scaled = &desired * 1.1;
        let err = l1_relative_error(&scaled, &desired, &m128).unwrap();
        assert!((err - 10.0).abs() < 1e-10);
        let zero = m.grid().zeros();
        assert_eq!(l1_relative_error(&zero, &zero, &m), None);
    }

    #[test]
    fn pointwise_error_differs_from_norm_gap() {
        let m = mask(64);
        let a = image_to_field(&IntensityImage::filled(64, 64, 60), &m).unwrap();
        let mut b = a.clone();
        let mut flip = true;
        for ((i, j), v) in b.indexed_iter_mut() {
            if m.is_interior(i, j) {
                *v += if flip { 5.0 } else { -5.0 };
                flip = !flip;
            }
        }
        let norm_gap = (l1_norm(&b, &m).unwrap() - l1_norm(&a, &m).unwrap()).abs();
        assert!(norm_gap < 0.01);
        let pointwise = l1_relative_error(&b, &a, &m).unwrap();
        assert!((pointwise - 100.0 * 5.0 / 60.0).abs() < 1e-9);
    }

    #[test]
    fn generator_is_deterministic() {
        for kind in TestImageKind::ALL {
            let a = generate_test_image(kind, 42, 128).unwrap();
            let b = generate_test_image(kind, 42, 128).unwrap();
            assert_eq!(a, b);
        }
        let a = generate_test_image(TestImageKind::Shapes, 1, 128).unwrap();
        let b = generate_test_image(TestImageKind::Shapes, 2, 128).unwrap();
        assert_ne!(a, b);
        assert!(generate_test_image(TestImageKind::Shapes, 1, 100).is_err());
    }

    #[test]
    fn shapes_histogram_is_wide() {
        let img = generate_test_image(TestImageKind::Shapes, 0, 512).unwrap();
        let mut seen = [false; 256];
        for &p in img.pixels() {
            seen[p as usize] = true;
        }
        let levels = seen.iter().filter(|&&s| s).count();
        assert!(levels >= 200, "only {levels} levels");
    }

    #[test]
    fn chart_has_four_bar_frequencies() {
        for size in [128, 256, 512] {
            let groups = resolution_chart_groups(size);
            let img = generate_test_image(TestImageKind::ResolutionChart, 0, size).unwrap();
            let mut periods = std::collections::BTreeSet::new();
            for g in &groups {
                let (w, h) = g.extent();
                assert!(g.x0 + w <= size && g.y0 + h <= size, "group out of frame at {size}");
                // walk across the bars and check the on/off pattern
                for t in 0..5 * g.bar {
                    let on = (t / g.bar) % 2 == 0;
                    let px = if g.vertical_bars {
                        img.get(g.x0 + t, g.y0 + h / 2)
                    } else {
                        img.get(g.x0 + w / 2, g.y0 + t)
                    };
                    assert_eq!(px == 250, on, "size {size} group {g:?} t {t}");
                }
                periods.insert(2 * g.bar);
            }
            assert!(periods.len() >= 4, "size {size}: {periods:?}");
        }
    }

    #[test]
    fn pgm_and_raw_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = generate_test_image(TestImageKind::PiecewiseText, 9, 128).unwrap();
        let path = dir.path().join("t.pgm");
        img.write_pgm(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n128 128\n255\n"));
        assert_eq!(bytes.len(), 15 + 128 * 128);
        assert_eq!(IntensityImage::read_pgm(&path).unwrap(), img);

        let g = Grid2D::new(32).unwrap();
        let field = g.sample(|x, y| -300.0 * x + 1e-300 * y + 0.1);
        let raw = dir.path().join("f.f64");
        write_raw(&field, &raw).unwrap();
        assert_eq!(read_raw(&raw).unwrap(), field);
        // display clamping does not touch the raw values
        let (shown, range) = field_to_image(&field, g);
        assert!(shown.pixels().contains(&0));
        assert!(range.min < 0.0);
        assert_eq!(read_raw(&raw).unwrap(), field);
    }

    #[test]
    fn image_field_image_round_trip() {
        let m = DomainMask::full_square(Grid2D::new(128).unwrap());
        let img = generate_test_image(TestImageKind::ResolutionChart, 0, 128).unwrap();
        let field = image_to_field(&img, &m).unwrap();
        let (back, _) = field_to_image(&field, m.grid());
        for row in 1..128 {
            for col in 1..128 {
                assert_eq!(back.get(col, row), img.get(col, row));
            }
        }
    }

    proptest! {
        #[test]
        fn relative_error_scale_invariant(seed in 0u64..500, scale in 0.01f64..100.0) {
            let m = mask(32);
            let g = m.grid();
            let a = g.sample(|x, y| ((seed as f64) * x + 3.0 * y).sin() + 2.0);
            let b = g.sample(|x, y| (x * y * seed as f64).cos() + 1.5);
            let e1 = l1_relative_error(&a, &b, &m).unwrap();
            let e2 = l1_relative_error(&(&a * scale), &(&b * scale), &m).unwrap();
            prop_assert!((e1 - e2).abs() <= 1e-9 * e1.max(1.0));
            prop_assert!(e1 >= 0.0);
        }
    }
}
