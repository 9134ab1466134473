//! Random-erasing augmentation for spectrogram images.
//!
//! One erase draws, in this order and from one SplitMix64 stream seeded with
//! `rng_seed`: the rectangle width, the rectangle height, the corner column
//! and the corner row. Widths are drawn as reals in `[0.1 W, ratio W)`,
//! rounded to the nearest integer and clamped into the integers inside that
//! interval (likewise for heights). The corner is uniform over the whole
//! image. A draw is accepted when `x + w < W` and `y + h < H`; otherwise all
//! four values are redrawn. The accepted rectangle is then filled row by row
//! with `Stream::byte` values.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, Stream};
use crate::signal::GrayImage;

pub const MIN_AREA_RATIO: f64 = 0.1;
pub const MIN_IMAGE_SIDE: usize = 10;
pub const DEFAULT_MAX_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EraseConfig {
    pub area_ratio: f64,
    pub rng_seed: u64,
    pub max_retries: usize,
}

impl EraseConfig {
    pub fn new(area_ratio: f64, rng_seed: u64) -> Self {
        Self {
            area_ratio,
            rng_seed,
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }
}

/// Accepted erase region: columns `x..x + width`, rows `y..y + height`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EraseRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl EraseRect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }
}

fn check_ratio(r: f64) -> Result<()> {
    if (MIN_AREA_RATIO..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(invalid(format!("area ratio {r} outside [0.1, 1]")))
    }
}

/// Integer extents admissible for a side of length `side`, if any.
pub fn extent_range(side: usize, ratio: f64) -> Option<(usize, usize)> {
    let lo = (MIN_AREA_RATIO * side as f64 - 1e-9).ceil().max(1.0) as usize;
    let hi = (ratio * side as f64 + 1e-9).floor() as usize;
    (lo <= hi).then_some((lo, hi))
}

fn draw_extent(rng: &mut Stream, side: usize, ratio: f64, range: (usize, usize)) -> usize {
    let v = rng.uniform(MIN_AREA_RATIO * side as f64, ratio * side as f64);
    (v.round() as usize).clamp(range.0, range.1)
}

/// Erases one random rectangle and reports where it landed.
pub fn random_erase_with_rect(img: &GrayImage, cfg: &EraseConfig) -> Result<(GrayImage, EraseRect)> {
    check_ratio(cfg.area_ratio)?;
    let (w, h) = (img.width(), img.height());
    if w < MIN_IMAGE_SIDE || h < MIN_IMAGE_SIDE {
        return Err(invalid(format!(
            "random erasing needs at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE} pixels, got {w}x{h}"
        )));
    }
    let wr = extent_range(w, cfg.area_ratio);
    let hr = extent_range(h, cfg.area_ratio);
    let (Some(wr), Some(hr)) = (wr, hr) else {
        return Err(invalid(format!(
            "no integer rectangle side lies in [0.1, {}] of a {w}x{h} image",
            cfg.area_ratio
        )));
    };

    let mut rng = Stream::new(cfg.rng_seed);
    for _ in 0..cfg.max_retries {
        let we = draw_extent(&mut rng, w, cfg.area_ratio, wr);
        let he = draw_extent(&mut rng, h, cfg.area_ratio, hr);
        let x = rng.below(w);
        let y = rng.below(h);
        if x + we < w && y + he < h {
            let rect = EraseRect {
                x,
                y,
                width: we,
                height: he,
            };
            let mut out = img.clone();
            for row in y..y + he {
                for col in x..x + we {
                    out.set(col, row, rng.byte());
                }
            }
            return Ok((out, rect));
        }
    }
    Err(Error::ErasePlacementFailed {
        retries: cfg.max_retries,
    })
}

pub fn random_erase(img: &GrayImage, cfg: &EraseConfig) -> Result<GrayImage> {
    random_erase_with_rect(img, cfg).map(|(img, _)| img)
}

/// Area ratios applied to every source image, plus whether the untouched
/// original is kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub ratios: Vec<f64>,
    #[serde(default = "yes")]
    pub keep_original: bool,
}

fn yes() -> bool {
    true
}

impl Default for AugmentPlan {
    fn default() -> Self {
        Self::none()
    }
}

impl AugmentPlan {
    pub fn new(ratios: Vec<f64>) -> Self {
        Self {
            ratios,
            keep_original: true,
        }
    }

    /// Identity plan: originals only.
    pub fn none() -> Self {
        Self::new(Vec::new())
    }

    pub fn validate(&self) -> Result<()> {
        self.ratios.iter().try_for_each(|&r| check_ratio(r))
    }

    /// Images produced per source image.
    pub fn variants_per_image(&self) -> usize {
        self.ratios.len() + usize::from(self.keep_original)
    }
}

/// Seed for the `ratio_index`-th erased variant of a source image.
pub fn variant_seed(master_seed: u64, image_key: u64, ratio_index: usize) -> u64 {
    derive_seed(&[master_seed, image_key, ratio_index as u64])
}

/// Expands one source image into its variants: the original first (when
/// kept), then one erased copy per ratio.
pub fn expand_image(
    img: &GrayImage,
    plan: &AugmentPlan,
    master_seed: u64,
    image_key: u64,
) -> Result<Vec<GrayImage>> {
    let mut out = Vec::with_capacity(plan.variants_per_image());
    if plan.keep_original {
        out.push(img.clone());
    }
    for (ri, &ratio) in plan.ratios.iter().enumerate() {
        let cfg = EraseConfig::new(ratio, variant_seed(master_seed, image_key, ri));
        out.push(random_erase(img, &cfg)?);
    }
    Ok(out)
}

/// Applies `plan` to every image; image `i` uses key `i` for seed derivation.
pub fn augment_set(images: &[GrayImage], plan: &AugmentPlan, master_seed: u64) -> Result<Vec<GrayImage>> {
    plan.validate()?;
    let mut out = Vec::with_capacity(images.len() * plan.variants_per_image());
    for (i, img) in images.iter().enumerate() {
        out.extend(expand_image(img, plan, master_seed, i as u64)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(w: usize, h: usize) -> GrayImage {
        let px = (0..w * h).map(|i| (i % 251) as u8).collect();
        GrayImage::new(w, h, px).unwrap()
    }

    #[test]
    fn deterministic_for_seed() {
        let img = gradient_image(40, 30);
        let cfg = EraseConfig::new(0.5, 42);
        assert_eq!(random_erase(&img, &cfg).unwrap(), random_erase(&img, &cfg).unwrap());
    }

    #[test]
    fn only_rectangle_changes() {
        let img = gradient_image(37, 23);
        for seed in 0..200 {
            let (out, rect) = random_erase_with_rect(&img, &EraseConfig::new(0.7, seed)).unwrap();
            for y in 0..img.height() {
                for x in 0..img.width() {
                    if !rect.contains(x, y) {
                        assert_eq!(out.get(x, y), img.get(x, y));
                    }
                }
            }
        }
    }

    #[test]
    fn bounds_on_100x100_at_half() {
        let img = GrayImage::filled(100, 100, 0);
        for seed in 0..1000 {
            let (_, r) = random_erase_with_rect(&img, &EraseConfig::new(0.5, seed)).unwrap();
            assert!((10..=50).contains(&r.width), "{r:?}");
            assert!((10..=50).contains(&r.height), "{r:?}");
            assert!(r.x + r.width < 100 && r.y + r.height < 100);
        }
    }

    #[test]
    fn rejects_small_images_and_bad_ratios() {
        assert!(random_erase(&GrayImage::filled(9, 20, 0), &EraseConfig::new(0.5, 1)).is_err());
        assert!(random_erase(&GrayImage::filled(20, 20, 0), &EraseConfig::new(0.05, 1)).is_err());
        assert!(random_erase(&GrayImage::filled(20, 20, 0), &EraseConfig::new(1.5, 1)).is_err());
    }

    #[test]
    fn full_ratio_on_minimum_image_eventually_places_or_reports() {
        let img = GrayImage::filled(10, 10, 0);
        let mut cfg = EraseConfig::new(1.0, 3);
        cfg.max_retries = 1;
        let outcomes: Vec<_> = (0..50)
            .map(|s| {
                cfg.rng_seed = s;
                random_erase(&img, &cfg)
            })
            .collect();
        assert!(outcomes.iter().any(|r| matches!(r, Err(Error::ErasePlacementFailed { retries: 1 }))));
        assert!(outcomes.iter().any(Result::is_ok));
    }

    #[test]
    fn set_counts() {
        let imgs = vec![GrayImage::filled(20, 20, 9); 240];
        let out = augment_set(&imgs, &AugmentPlan::new(vec![0.5, 0.6, 0.7]), 1).unwrap();
        assert_eq!(out.len(), 960);
        let imgs = vec![GrayImage::filled(20, 20, 9); 132];
        let out = augment_set(&imgs, &AugmentPlan::new(vec![0.3, 0.4, 0.5, 0.6, 0.7]), 1).unwrap();
        assert_eq!(out.len(), 792);
    }

    #[test]
    fn identity_plan() {
        let imgs = vec![gradient_image(12, 12), gradient_image(15, 11)];
        assert_eq!(augment_set(&imgs, &AugmentPlan::none(), 5).unwrap(), imgs);
    }

    #[test]
    fn set_is_order_independent() {
        let a = gradient_image(20, 20);
        let b = GrayImage::filled(20, 20, 3);
        let plan = AugmentPlan::new(vec![0.4]);
        let fwd = augment_set(&[a.clone(), b.clone()], &plan, 11).unwrap();
        let one = expand_image(&b, &plan, 11, 1).unwrap();
        assert_eq!(&fwd[2..], &one[..]);
    }
}
