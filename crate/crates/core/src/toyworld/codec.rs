//! Fixed invertible stand-in for a video autoencoder.
//!
//! Each 2×2 pixel block of each frame (12 values) is mapped by an orthogonal
//! transform: a 2-D Haar step over the four positions, tensored with an
//! orthonormal colour basis (luma, two chroma). No temporal compression.
//! Decoding applies the transpose, so the round trip is exact up to rounding.

use super::{Result, ToyError, Video, CHANNELS};
use crate::mmdit::LatentClip;

const FOLD: usize = 2;
pub const LATENT_CHANNELS: usize = CHANNELS * FOLD * FOLD;

/// Rows: orthonormal colour basis.
fn colour_basis() -> [[f64; 3]; 3] {
    let (s3, s2, s6) = (3f64.sqrt(), 2f64.sqrt(), 6f64.sqrt());
    [[1.0 / s3, 1.0 / s3, 1.0 / s3], [1.0 / s2, -1.0 / s2, 0.0], [1.0 / s6, 1.0 / s6, -2.0 / s6]]
}

/// Rows: 2×2 Haar basis over positions (top-left, top-right, bottom-left,
/// bottom-right).
const HAAR: [[f64; 4]; 4] = [
    [0.5, 0.5, 0.5, 0.5],
    [0.5, -0.5, 0.5, -0.5],
    [0.5, 0.5, -0.5, -0.5],
    [0.5, -0.5, -0.5, 0.5],
];

/// The 12×12 orthogonal matrix; latent channel `k = colour·4 + haar`, input
/// index `position·3 + channel`.
fn basis() -> [[f64; LATENT_CHANNELS]; LATENT_CHANNELS] {
    let col = colour_basis();
    let mut m = [[0.0; LATENT_CHANNELS]; LATENT_CHANNELS];
    for (ci, crow) in col.iter().enumerate() {
        for (hi, hrow) in HAAR.iter().enumerate() {
            for pos in 0..4 {
                for ch in 0..3 {
                    m[ci * 4 + hi][pos * 3 + ch] = hrow[pos] * crow[ch];
                }
            }
        }
    }
    m
}

/// Pixels `F × H × W × 3` to latents `F × H/2 × W/2 × 12`.
pub fn toy_encode(video: &Video) -> Result<LatentClip> {
    video.check()?;
    if !video.height.is_multiple_of(FOLD) || !video.width.is_multiple_of(FOLD) {
        return Err(ToyError::Shape(format!("{}x{} is not divisible by 2", video.height, video.width)));
    }
    let (lh, lw) = (video.height / FOLD, video.width / FOLD);
    let m = basis();
    let mut out = LatentClip::zeros(video.frames, lh, lw, LATENT_CHANNELS);
    let mut block = [0.0; LATENT_CHANNELS];
    for f in 0..video.frames {
        for y in 0..lh {
            for x in 0..lw {
                for pos in 0..4 {
                    let p = video.pixel(f, FOLD * y + pos / 2, FOLD * x + pos % 2);
                    block[pos * 3..pos * 3 + 3].copy_from_slice(&p);
                }
                let dst = ((f * lh + y) * lw + x) * LATENT_CHANNELS;
                for (k, row) in m.iter().enumerate() {
                    out.values[dst + k] = row.iter().zip(&block).map(|(a, b)| a * b).sum();
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`toy_encode`].
pub fn toy_decode(latents: &LatentClip) -> Result<Video> {
    if latents.channels != LATENT_CHANNELS || latents.values.len() != latents.frames * latents.frame_len() {
        return Err(ToyError::Shape(format!("latents have {} channels, expected {LATENT_CHANNELS}", latents.channels)));
    }
    let (lh, lw) = (latents.height, latents.width);
    let mut out = Video::blank(latents.frames, lh * FOLD, lw * FOLD);
    let m = basis();
    for f in 0..latents.frames {
        for y in 0..lh {
            for x in 0..lw {
                let src = ((f * lh + y) * lw + x) * LATENT_CHANNELS;
                let z = &latents.values[src..src + LATENT_CHANNELS];
                for pos in 0..4 {
                    let (py, px) = (FOLD * y + pos / 2, FOLD * x + pos % 2);
                    let dst = ((f * out.height + py) * out.width + px) * CHANNELS;
                    for ch in 0..3 {
                        let j = pos * 3 + ch;
                        out.pixels[dst + ch] = (0..LATENT_CHANNELS).map(|k| m[k][j] * z[k]).sum();
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn basis_is_orthogonal() {
        let m = basis();
        for i in 0..LATENT_CHANNELS {
            for j in 0..LATENT_CHANNELS {
                let dot: f64 = (0..LATENT_CHANNELS).map(|k| m[i][k] * m[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn round_trip_and_shapes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut v = Video::blank(3, 8, 6);
        v.pixels.iter_mut().for_each(|p| *p = rng.random());
        let z = toy_encode(&v).unwrap();
        assert_eq!((z.frames, z.height, z.width, z.channels), (3, 4, 3, 12));
        let back = toy_decode(&z).unwrap();
        assert!(crate::linalg::max_abs_diff(&back.pixels, &v.pixels) <= 1e-12);
        let zeros = toy_decode(&LatentClip::zeros(2, 4, 4, 12)).unwrap();
        assert!(zeros.pixels.iter().all(|&p| p == 0.0));
        assert!(toy_encode(&Video::blank(1, 5, 4)).is_err());
    }
}
