//! Procedural head crops.
//!
//! A head is a shaded sphere seen from the camera. The face is the cap of
//! the sphere around the facing direction, with two eyes and a mouth; the
//! rest is hair. Yaw and pitch move the cap, roll rotates the image plane.
//! The drawing is symmetric about the vertical axis through the crop center,
//! so the mirror image of a head equals the head rendered with negated yaw
//! and roll.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::domain::HeadPose;
use crate::model::{CROP_LEN, CROP_SIDE};
use crate::rng::{derive, uniform};

const CENTER: f64 = (CROP_SIDE as f64 - 1.0) / 2.0;
const RADIUS: f64 = 24.0;

/// Colors of one synthetic person.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Appearance {
    pub skin: [f32; 3],
    pub hair: [f32; 3],
    pub background: [f32; 3],
}

impl Appearance {
    pub fn sample(seed: u64) -> Self {
        let mut rng = derive(seed, 0xA11);
        let tone = uniform(&mut rng, 0.45, 0.9) as f32;
        let skin = [tone, tone * 0.78, tone * 0.62];
        let h = uniform(&mut rng, 0.05, 0.3) as f32;
        let hair = [h * 1.2, h, h * 0.8];
        let g = uniform(&mut rng, 0.25, 0.6) as f32;
        let tint = uniform(&mut rng, -0.08, 0.08) as f32;
        let background = [g + tint, g, g - tint];
        Appearance { skin, hair, background }
    }
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = libm::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    [v[0] / n, v[1] / n, v[2] / n]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Facing direction in crop coordinates (x right, y down, z towards the
/// viewer).
fn facing(pose: &HeadPose) -> [f64; 3] {
    let (y, p) = (pose.yaw.to_radians(), pose.pitch.to_radians());
    [
        libm::sin(y) * libm::cos(p),
        -libm::sin(p),
        libm::cos(y) * libm::cos(p),
    ]
}

/// Renders a `64 x 64 x 3` crop, channels last.
pub fn render_crop(pose: &HeadPose, look: &Appearance) -> Vec<f32> {
    let f = facing(pose);
    let side = {
        let s = [f[2], 0.0, -f[0]];
        let n = libm::sqrt(s[0] * s[0] + s[2] * s[2]);
        if n < 1e-9 {
            [1.0, 0.0, 0.0]
        } else {
            [s[0] / n, 0.0, s[2] / n]
        }
    };
    let down = normalize({
        let d = [0.0, 1.0, 0.0];
        let k = dot(d, f);
        let v = [d[0] - k * f[0], d[1] - k * f[1], d[2] - k * f[2]];
        if dot(v, v) < 1e-12 {
            [0.0, 0.0, if f[1] < 0.0 { 1.0 } else { -1.0 }]
        } else {
            v
        }
    });
    let comb = |a: f64, b: f64| normalize([f[0] + a * side[0] + b * down[0], f[1] + a * side[1] + b * down[1], f[2] + a * side[2] + b * down[2]]);
    let eye_l = comb(0.42, -0.18);
    let eye_r = comb(-0.42, -0.18);
    let mouth = comb(0.0, 0.5);
    let (cr, sr) = (libm::cos(pose.roll.to_radians()), libm::sin(pose.roll.to_radians()));

    let mut out = vec![0.0f32; CROP_LEN];
    for i in 0..CROP_SIDE {
        for j in 0..CROP_SIDE {
            let u0 = (j as f64 - CENTER) / RADIUS;
            let v0 = (i as f64 - CENTER) / RADIUS;
            let u = u0 * cr + v0 * sr;
            let v = -u0 * sr + v0 * cr;
            let r2 = u * u + v * v;
            let px = &mut out[(i * CROP_SIDE + j) * 3..(i * CROP_SIDE + j) * 3 + 3];
            if r2 > 1.0 {
                px.copy_from_slice(&look.background);
                continue;
            }
            let n = [u, v, libm::sqrt(1.0 - r2)];
            let shade = (0.55 + 0.45 * n[2]) as f32;
            let s = dot(n, f);
            let color = if s > 0.45 {
                if dot(n, eye_l) > 0.975 || dot(n, eye_r) > 0.975 {
                    [0.05, 0.05, 0.08]
                } else if dot(n, mouth) > 0.97 {
                    [0.55, 0.12, 0.12]
                } else {
                    look.skin
                }
            } else {
                look.hair
            };
            for c in 0..3 {
                px[c] = (color[c] * shade).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Horizontal mirror of a crop.
pub fn mirror_crop(crop: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0f32; crop.len()];
    for i in 0..CROP_SIDE {
        for j in 0..CROP_SIDE {
            let src = (i * CROP_SIDE + (CROP_SIDE - 1 - j)) * 3;
            let dst = (i * CROP_SIDE + j) * 3;
            out[dst..dst + 3].copy_from_slice(&crop[src..src + 3]);
        }
    }
    out
}

/// Per-frame perturbation ranges applied by [`jitter_sequence`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterRanges {
    /// Maximum shift in pixels along each axis.
    pub shift_px: f64,
    /// Zoom factor drawn from `[1 - zoom, 1 + zoom]`.
    pub zoom: f64,
    /// Additive brightness drawn from `[-brightness, brightness]`.
    pub brightness: f64,
}

impl Default for JitterRanges {
    fn default() -> Self {
        JitterRanges {
            shift_px: 3.0,
            zoom: 0.08,
            brightness: 0.1,
        }
    }
}

impl JitterRanges {
    pub fn none() -> Self {
        JitterRanges {
            shift_px: 0.0,
            zoom: 0.0,
            brightness: 0.0,
        }
    }
}

/// Resamples a crop (or any `64 x 64 x C` image) under a zoom about the
/// center followed by a shift, with bilinear interpolation and edge clamping,
/// then adds `brightness` and clamps to `[0, 1]` when `clamp` is set.
pub fn warp(src: &[f32], channels: usize, shift: (f64, f64), zoom: f64, brightness: f64, clamp: bool) -> Vec<f32> {
    let side = CROP_SIDE;
    let mut out = if shift == (0.0, 0.0) && zoom == 1.0 {
        src.to_vec()
    } else {
        let last = side as f64 - 1.0;
        // source taps and weight along one axis
        let taps = |offset: f64| -> Vec<(usize, usize, f32)> {
            (0..side)
                .map(|o| {
                    let s = ((o as f64 - offset - CENTER) / zoom + CENTER).clamp(0.0, last);
                    let lo = libm::floor(s) as usize;
                    (lo, (lo + 1).min(side - 1), (s - lo as f64) as f32)
                })
                .collect()
        };
        let (xs, ys) = (taps(shift.0), taps(shift.1));
        let mut out = vec![0.0f32; src.len()];
        for (i, &(y0, y1, fy)) in ys.iter().enumerate() {
            let (top, bottom) = (&src[y0 * side * channels..], &src[y1 * side * channels..]);
            let row = &mut out[i * side * channels..(i + 1) * side * channels];
            for (j, &(x0, x1, fx)) in xs.iter().enumerate() {
                for c in 0..channels {
                    let (a, b) = (x0 * channels + c, x1 * channels + c);
                    let t = top[a] + (top[b] - top[a]) * fx;
                    let u = bottom[a] + (bottom[b] - bottom[a]) * fx;
                    row[j * channels + c] = t + (u - t) * fy;
                }
            }
        }
        out
    };
    if brightness != 0.0 || clamp {
        let b = brightness as f32;
        for v in out.iter_mut() {
            *v += b;
            if clamp {
                *v = v.clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Frames left untouched by [`jitter_sequence`]: the two middle indices
/// `(T - 1) / 2` and `T / 2` (a single index when `T` is odd).
pub fn is_middle(t: usize, i: usize) -> bool {
    i == (t.saturating_sub(1)) / 2 || i == t / 2
}

/// `T` copies of `crop`, each but the middle ones shifted, zoomed and
/// brightened by a random amount within `ranges`.
pub fn jitter_sequence(crop: &[f32], t: usize, ranges: &JitterRanges, seed: u64) -> Vec<Vec<f32>> {
    let mut out = Vec::with_capacity(t);
    for i in 0..t {
        if is_middle(t, i) {
            out.push(crop.to_vec());
            continue;
        }
        let mut rng = derive(seed, i as u64);
        let shift = (
            uniform(&mut rng, -ranges.shift_px, ranges.shift_px),
            uniform(&mut rng, -ranges.shift_px, ranges.shift_px),
        );
        let zoom = uniform(&mut rng, 1.0 - ranges.zoom, 1.0 + ranges.zoom);
        let brightness = uniform(&mut rng, -ranges.brightness, ranges.brightness);
        if shift == (0.0, 0.0) && zoom == 1.0 && brightness == 0.0 {
            out.push(crop.to_vec());
        } else {
            out.push(warp(crop, 3, shift, zoom, brightness, true));
        }
    }
    out
}

/// A frame whose head was lost: uniform noise.
pub fn noise_crop<R: Rng + ?Sized>(rng: &mut R) -> Vec<f32> {
    (0..CROP_LEN).map(|_| rng.gen::<f32>()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose(yaw: f64, pitch: f64, roll: f64) -> HeadPose {
        HeadPose::new(yaw, pitch, roll).unwrap()
    }

    #[test]
    fn mirror_equals_negated_pose() {
        let look = Appearance::sample(3);
        for p in [pose(70.0, 10.0, 15.0), pose(-150.0, -30.0, -5.0), pose(0.0, 45.0, 0.0), pose(95.0, 0.0, 30.0)] {
            let a = mirror_crop(&render_crop(&p, &look));
            let b = render_crop(&p.mirrored(), &look);
            let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
            // pixels on a feature boundary may flip by rounding
            let flips = a.iter().zip(&b).filter(|(x, y)| (*x - *y).abs() > 1e-4).count();
            assert!(flips <= 6, "{p:?}: {flips} differing values, worst {worst}");
        }
    }

    fn face_centroid(p: &HeadPose) -> (f64, f64) {
        let look = Appearance {
            skin: [1.0, 0.0, 0.0],
            hair: [0.0, 0.0, 1.0],
            background: [0.0, 1.0, 0.0],
        };
        let c = render_crop(p, &look);
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for i in 0..CROP_SIDE {
            for j in 0..CROP_SIDE {
                let k = (i * CROP_SIDE + j) * 3;
                if c[k] > 0.0 && c[k + 1] == 0.0 && c[k + 2] == 0.0 {
                    sx += j as f64;
                    sy += i as f64;
                    n += 1.0;
                }
            }
        }
        (sx / n - CENTER, sy / n - CENTER)
    }

    #[test]
    fn pose_moves_the_face() {
        let (right, _) = face_centroid(&pose(60.0, 0.0, 0.0));
        let (front, _) = face_centroid(&pose(0.0, 0.0, 0.0));
        let (left, _) = face_centroid(&pose(-60.0, 0.0, 0.0));
        assert!(right > 5.0 && left < -5.0 && front.abs() < 0.5);
        let (_, up) = face_centroid(&pose(0.0, 40.0, 0.0));
        assert!(up < -3.0);
    }

    #[test]
    fn renders_in_unit_range() {
        let look = Appearance::sample(9);
        let c = render_crop(&pose(33.0, -20.0, 40.0), &look);
        assert_eq!(c.len(), CROP_LEN);
        assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn middle_replicas_unchanged() {
        let crop = render_crop(&pose(40.0, 0.0, 0.0), &Appearance::sample(2));
        let seq = jitter_sequence(&crop, 10, &JitterRanges::default(), 5);
        assert_eq!(seq.len(), 10);
        assert_eq!(seq[4], crop);
        assert_eq!(seq[5], crop);
        assert!((0..10).filter(|&i| i != 4 && i != 5).all(|i| seq[i] != crop));

        let two = jitter_sequence(&crop, 2, &JitterRanges::default(), 5);
        assert!(two.iter().all(|f| *f == crop));

        let still = jitter_sequence(&crop, 10, &JitterRanges::none(), 5);
        assert!(still.iter().all(|f| *f == crop));
    }

    #[test]
    fn integer_shift_moves_pixels() {
        let crop = render_crop(&pose(40.0, 0.0, 0.0), &Appearance::sample(2));
        let moved = warp(&crop, 3, (2.0, -1.0), 1.0, 0.0, true);
        for i in 5..59 {
            for j in 5..59 {
                for c in 0..3 {
                    let a = moved[(i * CROP_SIDE + j) * 3 + c];
                    let b = crop[((i + 1) * CROP_SIDE + j - 2) * 3 + c];
                    assert!((a - b).abs() < 1e-6);
                }
            }
        }
    }
}
