use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Global photometric transform attached to one camera.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraStyle {
    /// Rotation of RGB values about the gray axis, in degrees.
    pub hue_degrees: f32,
    pub gain: f32,
    pub offset: f32,
    pub noise_sigma: f32,
}

impl CameraStyle {
    pub const IDENTITY: CameraStyle = CameraStyle {
        hue_degrees: 0.0,
        gain: 1.0,
        offset: 0.0,
        noise_sigma: 0.0,
    };

    /// Row-major 3x3 rotation about `(1, 1, 1) / sqrt(3)`.
    pub fn hue_matrix(&self) -> [[f32; 3]; 3] {
        let theta = (self.hue_degrees as f64).to_radians();
        let (s, c) = theta.sin_cos();
        let k = 1.0 / 3f64.sqrt();
        // Rodrigues: cI + s[k]x + (1 - c) k k^T with k = (k, k, k).
        let a = c + (1.0 - c) * k * k;
        let b = (1.0 - c) * k * k - s * k;
        let d = (1.0 - c) * k * k + s * k;
        [
            [a as f32, b as f32, d as f32],
            [d as f32, a as f32, b as f32],
            [b as f32, d as f32, a as f32],
        ]
    }
}

/// Camera id (1-based) to style.
pub type CameraStyles = BTreeMap<u32, CameraStyle>;

/// Applies hue rotation, then contrast gain, then brightness offset, then
/// additive Gaussian noise drawn from `noise_seed`, and clamps to `[-1, 1]`.
pub fn apply_camera_style(
    image: &ImageTensor,
    camera: u32,
    styles: &CameraStyles,
    noise_seed: u64,
) -> Result<ImageTensor> {
    let style = styles.get(&camera).ok_or(Error::UnknownCamera(camera))?;
    let mut out = image.clone();
    let channels = image.channels();
    let rotate = channels == 3 && style.hue_degrees != 0.0;
    let m = style.hue_matrix();
    let noise = (style.noise_sigma > 0.0).then(|| {
        (
            ChaCha8Rng::seed_from_u64(noise_seed),
            Normal::new(0.0f32, style.noise_sigma).expect("finite sigma"),
        )
    });
    let mut noise = noise;
    for px in out.data_mut().chunks_exact_mut(channels) {
        if rotate {
            let (r, g, b) = (px[0], px[1], px[2]);
            for (c, row) in m.iter().enumerate() {
                px[c] = row[0] * r + row[1] * g + row[2] * b;
            }
        }
        for v in px.iter_mut() {
            let mut y = *v * style.gain + style.offset;
            if let Some((rng, dist)) = noise.as_mut() {
                y += dist.sample(rng);
            }
            *v = y.clamp(-1.0, 1.0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn styles(style: CameraStyle) -> CameraStyles {
        [(1, style)].into_iter().collect()
    }

    fn ramp() -> ImageTensor {
        let data = (0..4 * 3 * 3).map(|i| ((i * 37 % 41) as f32 / 20.0) - 1.0).collect();
        ImageTensor::new(4, 3, 3, data).unwrap()
    }

    #[test]
    fn identity_style_is_exact() {
        let img = ramp();
        let out = apply_camera_style(&img, 1, &styles(CameraStyle::IDENTITY), 3).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn additive_offset() {
        let img = ImageTensor::filled(4, 2, 3, 0.0);
        let s = CameraStyle { offset: 0.5, ..CameraStyle::IDENTITY };
        let out = apply_camera_style(&img, 1, &styles(s), 0).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn gain_clamps() {
        let img = ImageTensor::filled(4, 2, 3, 0.8);
        let s = CameraStyle { gain: 2.0, ..CameraStyle::IDENTITY };
        let out = apply_camera_style(&img, 1, &styles(s), 0).unwrap();
        assert!(out.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn unknown_camera_is_named() {
        let err = apply_camera_style(&ramp(), 9, &styles(CameraStyle::IDENTITY), 0).unwrap_err();
        assert!(err.to_string().contains('9'));
    }

    #[test]
    fn hue_rotation_preserves_gray_and_inverts() {
        let s = CameraStyle { hue_degrees: 120.0, ..CameraStyle::IDENTITY };
        let m = s.hue_matrix();
        // gray axis fixed
        for row in &m {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
        // 120 degrees permutes the primaries
        assert!((m[1][0] - 1.0).abs() < 1e-6 && m[0][0].abs() < 1e-6);
    }

    #[test]
    fn noise_is_seeded() {
        let img = ImageTensor::filled(8, 4, 3, 0.0);
        let s = styles(CameraStyle { noise_sigma: 0.1, ..CameraStyle::IDENTITY });
        let a = apply_camera_style(&img, 1, &s, 11).unwrap();
        assert_eq!(a, apply_camera_style(&img, 1, &s, 11).unwrap());
        assert_ne!(a, apply_camera_style(&img, 1, &s, 12).unwrap());
    }
}
