//! Pixel-space measurements of toy clips.
//!
//! The foreground is every pixel whose brightest channel exceeds one half;
//! the background is black and the sprite is fully saturated, so this
//! threshold separates them even on noisy generated clips.

use super::{render_reference, Identity, MotionLabel, Result, ToyError, Video, WALK_SPEED, WAVE_AMPLITUDE};

const FG_THRESHOLD: f64 = 0.5;
/// Fewer foreground pixels than this means no sprite was found.
const MIN_SPRITE_PIXELS: usize = 12;

fn is_fg(p: [f64; 3]) -> bool {
    p.iter().cloned().fold(f64::NEG_INFINITY, f64::max) > FG_THRESHOLD
}

/// Foreground pixel coordinates of one frame.
fn foreground(video: &Video, f: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..video.height {
        for x in 0..video.width {
            if is_fg(video.pixel(f, y, x)) {
                out.push((x, y));
            }
        }
    }
    out
}

/// Sprite centroid per frame.
pub fn centroids(video: &Video) -> Result<Vec<(f64, f64)>> {
    video.check()?;
    (0..video.frames)
        .map(|f| {
            let fg = foreground(video, f);
            if fg.len() < MIN_SPRITE_PIXELS {
                return Err(ToyError::Detection { frame: f });
            }
            let n = fg.len() as f64;
            let cx = fg.iter().map(|p| p.0 as f64).sum::<f64>() / n;
            let cy = fg.iter().map(|p| p.1 as f64).sum::<f64>() / n;
            Ok((cx, cy))
        })
        .collect()
}

fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

/// Variance over time of the sprite centroid, summed over both axes.
pub fn motion_variance(video: &Video) -> Result<f64> {
    let c = centroids(video)?;
    let xs: Vec<f64> = c.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = c.iter().map(|p| p.1).collect();
    Ok(variance(&xs) + variance(&ys))
}

/// Motion features: least-squares horizontal drift over the clip and the
/// vertical standard deviation.
pub fn motion_features(video: &Video) -> Result<(f64, f64)> {
    let c = centroids(video)?;
    let n = c.len() as f64;
    let tm = (n - 1.0) / 2.0;
    let xm = c.iter().map(|p| p.0).sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (t, p) in c.iter().enumerate() {
        num += (t as f64 - tm) * (p.0 - xm);
        den += (t as f64 - tm).powi(2);
    }
    let slope = if den > 0.0 { num / den } else { 0.0 };
    let ys: Vec<f64> = c.iter().map(|p| p.1).collect();
    Ok((slope * (n - 1.0), variance(&ys).sqrt()))
}

/// Nearest label prototype in normalized (drift, vertical spread) space.
pub fn classify_motion(video: &Video) -> Result<MotionLabel> {
    let (dx, ystd) = motion_features(video)?;
    let span = WALK_SPEED * (video.frames as f64 - 1.0);
    let bob = WAVE_AMPLITUDE / 2f64.sqrt();
    let proto = |l: MotionLabel| -> (f64, f64) {
        match l {
            MotionLabel::Idle => (0.0, 0.0),
            MotionLabel::WalkLeft => (-1.0, 0.0),
            MotionLabel::WalkRight => (1.0, 0.0),
            MotionLabel::Wave => (0.0, 1.0),
        }
    };
    let (u, v) = (dx / span, ystd / bob);
    let dist = |l: MotionLabel| {
        let (a, b) = proto(l);
        (u - a).powi(2) + (v - b).powi(2)
    };
    Ok(MotionLabel::ALL.into_iter().min_by(|a, b| dist(*a).total_cmp(&dist(*b))).unwrap())
}

/// Mouth signal per frame: summed minimum channel over foreground pixels.
/// Saturated sprite pixels have minimum 0; the mouth's minimum is its
/// aperture.
pub fn mouth_signal(video: &Video) -> Result<Vec<f64>> {
    video.check()?;
    Ok((0..video.frames)
        .map(|f| {
            let mut s = 0.0;
            for y in 0..video.height {
                for x in 0..video.width {
                    let p = video.pixel(f, y, x);
                    if is_fg(p) {
                        s += p.iter().cloned().fold(f64::INFINITY, f64::min).clamp(0.0, 1.0);
                    }
                }
            }
            s
        })
        .collect())
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(ToyError::Shape(format!("series of length {} and {}", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 1e-12 * n || sbb <= 1e-12 * n {
        return Err(ToyError::UndefinedScore("zero-variance series"));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation between the measured mouth signal and the envelope.
pub fn lip_sync_score(video: &Video, envelope: &[f64]) -> Result<f64> {
    if envelope.len() != video.frames {
        return Err(ToyError::Shape(format!("{} envelope values for {} frames", envelope.len(), video.frames)));
    }
    pearson(&mouth_signal(video)?, envelope)
}

fn rgb_hue(p: [f64; 3]) -> Option<f64> {
    let mx = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mn = p.iter().cloned().fold(f64::INFINITY, f64::min);
    let c = mx - mn;
    if c <= 1e-9 {
        return None;
    }
    let [r, g, b] = p;
    let h = if mx == r {
        ((g - b) / c).rem_euclid(6.0)
    } else if mx == g {
        (b - r) / c + 2.0
    } else {
        (r - g) / c + 4.0
    };
    Some(h / 6.0)
}

fn hue_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Mean hue (circular) and fill ratio of the foreground bounding box.
fn frame_identity(video: &Video, f: usize) -> Result<(f64, f64)> {
    let fg = foreground(video, f);
    if fg.len() < MIN_SPRITE_PIXELS {
        return Err(ToyError::Detection { frame: f });
    }
    let (mut s, mut c) = (0.0, 0.0);
    for &(x, y) in &fg {
        if let Some(h) = rgb_hue(video.pixel(f, y, x)) {
            let a = std::f64::consts::TAU * h;
            s += a.sin();
            c += a.cos();
        }
    }
    let hue = (s.atan2(c) / std::f64::consts::TAU).rem_euclid(1.0);
    let (x0, x1) = fg.iter().fold((usize::MAX, 0), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (y0, y1) = fg.iter().fold((usize::MAX, 0), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let area = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
    Ok((hue, fg.len() as f64 / area))
}

/// Mean over frames of hue distance (turns) plus the fill-ratio gap to the
/// reference rendering of `identity`. Zero for a clip drawn with the exact
/// identity.
pub fn identity_error(video: &Video, identity: &Identity) -> Result<f64> {
    video.check()?;
    let (_, ref_fill) = frame_identity(&render_reference(identity), 0)?;
    let mut total = 0.0;
    for f in 0..video.frames {
        let (h, fill) = frame_identity(video, f)?;
        total += hue_distance(h, identity.hue) + (fill - ref_fill).abs();
    }
    Ok(total / video.frames as f64)
}

#[cfg(test)]
mod tests {
    use super::super::{make_sample, Shape};
    use super::*;

    fn ident(h: f64, s: Shape) -> Identity {
        Identity { hue: h, shape: s }
    }

    #[test]
    fn synced_samples_score_high() {
        for seed in 0..10 {
            let s = make_sample(seed, "walk right", ident(0.6, Shape::Diamond), true).unwrap();
            assert!(lip_sync_score(&s.video, &s.envelope).unwrap() >= 0.99);
        }
    }

    #[test]
    fn constant_envelope_is_undefined() {
        let s = make_sample(1, "idle", ident(0.1, Shape::Square), true).unwrap();
        let flat = vec![0.5; s.video.frames];
        assert!(matches!(lip_sync_score(&s.video, &flat), Err(ToyError::UndefinedScore(_))));
    }

    #[test]
    fn motion_ordering_and_classification() {
        let id = ident(0.9, Shape::Circle);
        let idle = make_sample(3, "idle", id, true).unwrap();
        let walk = make_sample(3, "walk left", id, true).unwrap();
        assert_eq!(motion_variance(&idle.video).unwrap(), 0.0);
        assert!(motion_variance(&walk.video).unwrap() > 0.0);
        for seed in 0..20 {
            for l in MotionLabel::ALL {
                let s = make_sample(seed, l.as_str(), id, seed % 2 == 0).unwrap();
                assert_eq!(classify_motion(&s.video).unwrap(), l, "seed {seed}");
            }
        }
    }

    #[test]
    fn exact_identity_has_zero_error() {
        for shape in Shape::ALL {
            for h in [0.0, 0.13, 0.5, 0.77] {
                let id = ident(h, shape);
                let s = make_sample(5, "wave", id, true).unwrap();
                assert!(identity_error(&s.video, &id).unwrap() < 1e-9, "{shape:?} {h}");
                let wrong = ident((h + 0.5) % 1.0, shape);
                assert!(identity_error(&s.video, &wrong).unwrap() > 0.4);
            }
        }
    }

    #[test]
    fn empty_frame_is_a_detection_error() {
        let v = Video::blank(2, 8, 8);
        assert_eq!(motion_variance(&v), Err(ToyError::Detection { frame: 0 }));
    }
}
