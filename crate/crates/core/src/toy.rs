//! Built-in toy data distributions.
//!
//! `patterns` is a small image domain: each component is a smooth layout
//! (ramps, a blob, a saddle) plus independent per-pixel noise, so identity
//! lives in low frequencies and variation in high ones. `textured_patterns`
//! is a second domain with the same layouts overlaid by a fine checkerboard;
//! it has no mass near the first domain but shares its low-resolution space.

use std::f64::consts::PI;

use crate::denoise::GaussianMixture;
use crate::error::{Error, Result};

/// Names accepted by [`by_name`].
pub const NAMES: [&str; 4] = ["planar3", "planar2", "patterns", "textured"];

/// Per-pixel variance of the image domains.
pub const PATTERN_VARIANCE: f64 = 0.04;

/// Amplitude of the checkerboard in [`textured_patterns`].
pub const TEXTURE_AMPLITUDE: f64 = 0.5;

/// Three well-separated 2-D components with unequal weights.
pub fn planar_three() -> GaussianMixture {
    GaussianMixture::new(
        vec![0.2, 0.3, 0.5],
        vec![vec![-3.0, 0.0], vec![3.0, 0.0], vec![0.0, 4.0]],
        vec![vec![0.30, 0.20], vec![0.15, 0.25], vec![0.20, 0.20]],
    )
    .expect("valid constant mixture")
}

/// Two 2-D components; the default training set for the dense denoiser.
pub fn planar_two() -> GaussianMixture {
    GaussianMixture::new(
        vec![0.5, 0.5],
        vec![vec![-1.5, -0.5], vec![1.5, 0.5]],
        vec![vec![0.10, 0.05], vec![0.05, 0.10]],
    )
    .expect("valid constant mixture")
}

fn layouts(side: usize) -> Vec<Vec<f64>> {
    let coord = |i: usize| (i as f64 + 0.5) / side as f64 * 2.0 - 1.0;
    let pattern = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        (0..side * side).map(|i| f(coord(i % side), coord(i / side))).collect()
    };
    vec![
        pattern(&|u, _| 0.6 * u),
        pattern(&|_, v| -0.6 * v),
        pattern(&|u, v| 0.9 * (-(u * u + v * v) / 0.25).exp() - 0.3),
        pattern(&|u, v| 0.8 * (PI * u / 1.5).sin() * (PI * v / 1.5).sin()),
    ]
}

fn image_mixture(means: Vec<Vec<f64>>, side: usize) -> Result<GaussianMixture> {
    let k = means.len();
    let d = side * side;
    GaussianMixture::new(vec![1.0 / k as f64; k], means, vec![vec![PATTERN_VARIANCE; d]; k])?
        .with_shape(vec![1, side, side])
}

/// Four smooth single-channel layouts with per-pixel noise.
pub fn patterns(side: usize) -> Result<GaussianMixture> {
    if side < 2 {
        return Err(Error::InvalidConfig(format!("pattern side {side} too small")));
    }
    image_mixture(layouts(side), side)
}

/// The [`patterns`] layouts with a 1-pixel checkerboard added. Any box
/// downsample by an even factor removes the checkerboard exactly.
pub fn textured_patterns(side: usize) -> Result<GaussianMixture> {
    if side < 2 {
        return Err(Error::InvalidConfig(format!("pattern side {side} too small")));
    }
    let means = layouts(side)
        .into_iter()
        .map(|m| {
            m.into_iter()
                .enumerate()
                .map(|(i, v)| {
                    let sign = if (i % side + i / side).is_multiple_of(2) {
                        1.0
                    } else {
                        -1.0
                    };
                    v + sign * TEXTURE_AMPLITUDE
                })
                .collect()
        })
        .collect();
    image_mixture(means, side)
}

/// Looks up a toy domain; `side` applies to the image domains.
pub fn by_name(name: &str, side: usize) -> Result<GaussianMixture> {
    match name {
        "planar3" => Ok(planar_three()),
        "planar2" => Ok(planar_two()),
        "patterns" => patterns(side),
        "textured" => textured_patterns(side),
        other => Err(Error::InvalidConfig(format!(
            "unknown toy domain {other:?}; expected one of {NAMES:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lowpass::{Kernel, LowPassOp};
    use crate::Tensor;

    #[test]
    fn planar_components_are_well_separated() {
        let mix = planar_three();
        for (i, a) in mix.means().iter().enumerate() {
            for (j, b) in mix.means().iter().enumerate().skip(i + 1) {
                let dist = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                let sd = mix.vars()[i]
                    .iter()
                    .chain(&mix.vars()[j])
                    .fold(0.0f64, |m, v| m.max(v.sqrt()));
                assert!(dist >= 6.0 * sd, "{i},{j}");
            }
        }
    }

    #[test]
    fn texture_vanishes_under_box_downsampling() {
        let side = 16;
        let plain = patterns(side).unwrap();
        let textured = textured_patterns(side).unwrap();
        for n in [2, 4, 8] {
            let op = LowPassOp::new(n, Kernel::Box, &[1, side, side]).unwrap();
            for (a, b) in plain.means().iter().zip(textured.means()) {
                let ta = Tensor::from_shape_vec(vec![1, side, side], a.clone()).unwrap();
                let tb = Tensor::from_shape_vec(vec![1, side, side], b.clone()).unwrap();
                let (da, db) = (op.downsample(&ta).unwrap(), op.downsample(&tb).unwrap());
                assert!(da.iter().zip(&db).all(|(x, y)| (x - y).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn lookup() {
        for name in NAMES {
            assert!(by_name(name, 8).is_ok());
        }
        assert!(by_name("faces", 8).is_err());
        assert!(patterns(1).is_err());
        assert_eq!(patterns(16).unwrap().shape(), &[1, 16, 16]);
    }
}
