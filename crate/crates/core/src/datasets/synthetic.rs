//! Desk-scale stand-in for a two-dataset re-ID benchmark.
//!
//! Identity is a procedurally drawn pedestrian glyph (torso pattern, colors,
//! proportions); camera is a global photometric style. Source and target
//! draw identities from disjoint pools and cameras from disjoint style
//! families, so identity and camera style are orthogonal label axes.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::record::{DatasetManifest, ImageRecord, ImageRef, Split};
use super::style::{apply_camera_style, CameraStyle, CameraStyles};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::rng::{mix_seed, rng_for};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GlyphShape {
    Rect,
    Ellipse,
    Stripes,
}

const SHAPES: [GlyphShape; 3] = [GlyphShape::Rect, GlyphShape::Ellipse, GlyphShape::Stripes];
const HUE_BINS: u8 = 12;
const TORSO_WIDTHS: [f32; 3] = [0.45, 0.6, 0.75];
const LEG_WIDTHS: [f32; 2] = [0.3, 0.5];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GlyphParams {
    pub shape: GlyphShape,
    /// Hue bins (out of 12) of the torso, legs and stripe accent.
    pub upper_hue: u8,
    pub lower_hue: u8,
    pub accent_hue: u8,
    /// Indices into the torso / leg width tables.
    pub torso_width: u8,
    pub leg_width: u8,
    /// Brightness level of the torso, 0 (dark) or 1 (bright).
    pub upper_value: u8,
}

impl GlyphParams {
    fn color(hue_bin: u8, value: u8) -> [f32; 3] {
        let h = hue_bin as f32 / HUE_BINS as f32 * 6.0;
        let (s, v) = (0.85f32, if value == 0 { 0.55 } else { 0.95 });
        let c = v * s;
        let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
        let (r, g, b) = match h as u32 {
            0 => (c, x, 0.0),
            1 => (x, c, 0.0),
            2 => (0.0, c, x),
            3 => (0.0, x, c),
            4 => (x, 0.0, c),
            _ => (c, 0.0, x),
        };
        let m = v - c;
        [(r + m) * 2.0 - 1.0, (g + m) * 2.0 - 1.0, (b + m) * 2.0 - 1.0]
    }
}

/// Parameters of the synthetic corpus. [`SyntheticSpec::new`] draws the
/// glyph and style tables deterministically from `layout_seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_identities: usize,
    pub num_cameras: usize,
    pub images_per_identity_per_camera: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub layout_seed: u64,
    /// Source training identities, labeled `0..N`.
    pub source_glyphs: Vec<GlyphParams>,
    /// Target training identities, labeled `N..2N`.
    pub target_glyphs: Vec<GlyphParams>,
    /// Target test identities (query / gallery), labeled `2N..3N`.
    pub test_glyphs: Vec<GlyphParams>,
    pub source_styles: CameraStyles,
    pub target_styles: CameraStyles,
}

impl SyntheticSpec {
    pub const DEFAULT_LAYOUT_SEED: u64 = 0x1D5E_ED;

    pub fn new(
        num_identities: usize,
        num_cameras: usize,
        images_per_identity_per_camera: usize,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        Self::with_layout_seed(
            num_identities,
            num_cameras,
            images_per_identity_per_camera,
            height,
            width,
            Self::DEFAULT_LAYOUT_SEED,
        )
    }

    pub fn with_layout_seed(
        num_identities: usize,
        num_cameras: usize,
        images_per_identity_per_camera: usize,
        height: usize,
        width: usize,
        layout_seed: u64,
    ) -> Result<Self> {
        let space = SHAPES.len() * (HUE_BINS as usize).pow(3) * TORSO_WIDTHS.len() * LEG_WIDTHS.len() * 2;
        if 3 * num_identities > space {
            return Err(Error::InvalidSpec(format!(
                "{num_identities} identities exceed the glyph space"
            )));
        }
        let mut rng = rng_for(layout_seed, 1);
        let mut seen = BTreeSet::new();
        let mut draw = |rng: &mut rand_chacha::ChaCha8Rng| loop {
            let upper_hue = rng.random_range(0..HUE_BINS);
            // keep the torso and legs visibly different
            let lower_hue = (upper_hue + rng.random_range(3..=9)) % HUE_BINS;
            let shape = SHAPES[rng.random_range(0..SHAPES.len())];
            let accent_hue = (upper_hue + rng.random_range(4..=8)) % HUE_BINS;
            let g = GlyphParams {
                shape,
                upper_hue,
                lower_hue,
                // only striped torsos show the accent; canonicalize it away otherwise
                accent_hue: if shape == GlyphShape::Stripes { accent_hue } else { upper_hue },
                torso_width: rng.random_range(0..TORSO_WIDTHS.len()) as u8,
                leg_width: rng.random_range(0..LEG_WIDTHS.len()) as u8,
                upper_value: rng.random_range(0..2),
            };
            if seen.insert(g) {
                return g;
            }
        };
        let source_glyphs = (0..num_identities).map(|_| draw(&mut rng)).collect();
        let target_glyphs = (0..num_identities).map(|_| draw(&mut rng)).collect();
        let test_glyphs = (0..num_identities).map(|_| draw(&mut rng)).collect();

        let mut srng = rng_for(layout_seed, 2);
        let source_styles = (1..=num_cameras as u32)
            .map(|cam| {
                (
                    cam,
                    CameraStyle {
                        hue_degrees: srng.random_range(-8.0..8.0),
                        gain: srng.random_range(0.92..1.08),
                        offset: srng.random_range(-0.05..0.05),
                        noise_sigma: srng.random_range(0.01..0.03),
                    },
                )
            })
            .collect();
        // The target family sits half a hue turn from the source; its cameras
        // fan out around that by less than a glyph hue bin each, so a person
        // keeps their colors relative to other people across target cameras.
        let centre = (num_cameras as f32 - 1.0) / 2.0;
        let target_styles = (1..=num_cameras as u32)
            .map(|cam| {
                let k = (cam - 1) as f32 - centre;
                let dark = cam % 2 == 0;
                (
                    cam,
                    CameraStyle {
                        hue_degrees: 180.0 + k * 20.0 + srng.random_range(-3.0..3.0),
                        gain: if dark { srng.random_range(0.6..0.75) } else { srng.random_range(1.0..1.15) },
                        offset: if dark { srng.random_range(-0.25..-0.1) } else { srng.random_range(0.05..0.2) },
                        noise_sigma: srng.random_range(0.02..0.06),
                    },
                )
            })
            .collect();

        let spec = Self {
            num_identities,
            num_cameras,
            images_per_identity_per_camera,
            height,
            width,
            channels: 3,
            layout_seed,
            source_glyphs,
            target_glyphs,
            test_glyphs,
            source_styles,
            target_styles,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_cameras < 2 {
            return Err(Error::InvalidSpec(format!(
                "num_cameras must be at least 2, got {}",
                self.num_cameras
            )));
        }
        if self.images_per_identity_per_camera < 1 {
            return Err(Error::InvalidSpec("images_per_identity_per_camera must be at least 1".into()));
        }
        if self.num_identities < 1 {
            return Err(Error::InvalidSpec("num_identities must be at least 1".into()));
        }
        if self.height < 8 || self.width < 4 {
            return Err(Error::InvalidSpec(format!("image {}x{} too small", self.height, self.width)));
        }
        if self.channels != 3 {
            return Err(Error::InvalidSpec("synthetic images are RGB".into()));
        }
        for (what, glyphs) in [
            ("source", &self.source_glyphs),
            ("target", &self.target_glyphs),
            ("test", &self.test_glyphs),
        ] {
            if glyphs.len() != self.num_identities {
                return Err(Error::InvalidSpec(format!("{what} glyph table has {} entries", glyphs.len())));
            }
        }
        let all: BTreeSet<_> = self
            .source_glyphs
            .iter()
            .chain(&self.target_glyphs)
            .chain(&self.test_glyphs)
            .collect();
        if all.len() != 3 * self.num_identities {
            return Err(Error::InvalidSpec("glyph parameters are not distinct per identity".into()));
        }
        for (what, styles) in [("source", &self.source_styles), ("target", &self.target_styles)] {
            if styles.len() != self.num_cameras || styles.keys().copied().ne(1..=self.num_cameras as u32) {
                return Err(Error::InvalidSpec(format!("{what} styles must cover cameras 1..=L")));
            }
        }
        let keys: BTreeSet<_> = self
            .source_styles
            .values()
            .chain(self.target_styles.values())
            .map(|s| format!("{s:?}"))
            .collect();
        if keys.len() != 2 * self.num_cameras {
            return Err(Error::InvalidSpec("camera styles are not distinct".into()));
        }
        Ok(())
    }
}

/// The four manifests of a generated corpus; images are held inline.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub source_train: DatasetManifest,
    pub target_train: DatasetManifest,
    pub query: DatasetManifest,
    pub gallery: DatasetManifest,
}

/// Renders an unstyled glyph shifted by `(dx, dy)` pixels.
pub fn render_glyph(g: &GlyphParams, height: usize, width: usize, dx: i32, dy: i32) -> ImageTensor {
    let mut img = ImageTensor::filled(height, width, 3, 0.0);
    let (hf, wf) = (height as f32, width as f32);
    let upper = GlyphParams::color(g.upper_hue, g.upper_value);
    let lower = GlyphParams::color(g.lower_hue, 0);
    let accent = GlyphParams::color(g.accent_hue, 1);
    let skin = [0.7f32, 0.2, -0.2];
    let torso_w = TORSO_WIDTHS[g.torso_width as usize] * wf;
    let leg_w = LEG_WIDTHS[g.leg_width as usize] * wf * 0.5;
    let stripe = (hf * 0.08).max(2.0);
    let cx = wf * 0.5 + dx as f32;
    for y in 0..height {
        for x in 0..width {
            let (py, px) = (y as f32 + 0.5 - dy as f32, x as f32 + 0.5);
            let fy = py / hf;
            // background: soft vertical gradient
            let mut c = [-0.1 + 0.2 * fy, -0.1 + 0.2 * fy, -0.05 + 0.2 * fy];
            let rx = (px - cx).abs();
            // head
            let (hy, hx) = ((fy - 0.12) / 0.085, rx / (wf * 0.16));
            if hy * hy + hx * hx <= 1.0 {
                c = skin;
            }
            // torso
            if (0.22..0.56).contains(&fy) {
                let inside = match g.shape {
                    GlyphShape::Rect | GlyphShape::Stripes => rx <= torso_w * 0.5,
                    GlyphShape::Ellipse => {
                        let ey = (fy - 0.39) / 0.17;
                        let ex = rx / (torso_w * 0.5);
                        ey * ey + ex * ex <= 1.0
                    }
                };
                if inside {
                    c = upper;
                    if g.shape == GlyphShape::Stripes && ((py - 0.22 * hf) / stripe) as i32 % 2 == 1 {
                        c = accent;
                    }
                }
            }
            // legs
            if (0.56..0.95).contains(&fy) {
                let gap = wf * 0.04;
                if rx >= gap && rx <= gap + leg_w {
                    c = lower;
                }
            }
            for (ch, v) in c.iter().enumerate() {
                img.set(y, x, ch, v.clamp(-1.0, 1.0));
            }
        }
    }
    img
}

struct PartPlan<'a> {
    name: &'a str,
    tag: u64,
    glyphs: &'a [GlyphParams],
    first_label: i64,
    styles: &'a CameraStyles,
    per_camera: usize,
    split: Split,
}

fn render_part(spec: &SyntheticSpec, seed: u64, plan: PartPlan<'_>) -> Result<DatasetManifest> {
    let mut records = Vec::new();
    let max_shift = (spec.height / 32).max(1) as i32;
    for (i, glyph) in plan.glyphs.iter().enumerate() {
        for cam in 1..=spec.num_cameras as u32 {
            for k in 0..plan.per_camera {
                let index = records.len() as u64;
                let mut rng = rng_for(mix_seed(seed, plan.tag), index);
                let dx = rng.random_range(-max_shift..=max_shift);
                let dy = rng.random_range(-max_shift..=max_shift);
                let base = render_glyph(glyph, spec.height, spec.width, dx, dy);
                let styled = apply_camera_style(&base, cam, plan.styles, rng.random())?;
                records.push(ImageRecord {
                    image: ImageRef::Inline(Arc::new(styled.quantized())),
                    identity: plan.first_label + i as i64,
                    camera: cam,
                    split: plan.split,
                    is_synthetic: true,
                    provenance: Some(format!("synthetic:{}:{k}", plan.name)),
                });
            }
        }
    }
    DatasetManifest::new(
        format!("synthetic-{}", plan.name),
        records,
        spec.num_cameras,
        (spec.height, spec.width, spec.channels),
        Some(seed),
    )
}

/// Renders the source training set, the target training set, and the target
/// query / gallery sets. Output is a pure function of `(spec, seed)`.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let n = spec.num_identities as i64;
    let per = spec.images_per_identity_per_camera;
    Ok(SyntheticCorpus {
        source_train: render_part(spec, seed, PartPlan {
            name: "source-train",
            tag: 11,
            glyphs: &spec.source_glyphs,
            first_label: 0,
            styles: &spec.source_styles,
            per_camera: per,
            split: Split::Train,
        })?,
        target_train: render_part(spec, seed, PartPlan {
            name: "target-train",
            tag: 12,
            glyphs: &spec.target_glyphs,
            first_label: n,
            styles: &spec.target_styles,
            per_camera: per,
            split: Split::Train,
        })?,
        query: render_part(spec, seed, PartPlan {
            name: "query",
            tag: 13,
            glyphs: &spec.test_glyphs,
            first_label: 2 * n,
            styles: &spec.target_styles,
            per_camera: 1,
            split: Split::Query,
        })?,
        gallery: render_part(spec, seed, PartPlan {
            name: "gallery",
            tag: 14,
            glyphs: &spec.test_glyphs,
            first_label: 2 * n,
            styles: &spec.target_styles,
            per_camera: per,
            split: Split::Gallery,
        })?,
    })
}
