use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TumorKind {
    Round,
    Irregular,
}

impl TumorKind {
    pub fn opposite(self) -> Self {
        match self {
            TumorKind::Round => TumorKind::Irregular,
            TumorKind::Irregular => TumorKind::Round,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TumorKind::Round => "round",
            TumorKind::Irregular => "irregular",
        }
    }
}

impl fmt::Display for TumorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TumorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "round" => Ok(TumorKind::Round),
            "irregular" => Ok(TumorKind::Irregular),
            _ => Err(Error::Config(format!("unknown tumor kind {s:?}"))),
        }
    }
}

/// Geometry of one tumor. Round tumors are ellipses; irregular ones are
/// radial polygons `r(t) = R (1 + a s(t) / max|s|)` where `s` sums three
/// harmonics of the lobe frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSpec {
    pub kind: TumorKind,
    /// `(y, x)` in pixel units.
    pub center: (f64, f64),
    pub base_radius: f64,
    pub amplitude: f64,
    pub lobes: u32,
    pub phases: [f64; 3],
    /// Ellipse axis ratio (>= 1) and rotation, round shapes only.
    pub axis_ratio: f64,
    pub rotation: f64,
}

const HARMONIC_WEIGHTS: [f64; 3] = [1.0, 0.6, 0.4];
const PROFILE_SAMPLES: usize = 2048;

impl ShapeSpec {
    /// Draws the shared placement (center, radius) and both kinds' shape
    /// parameters for an image of `size x size`.
    pub fn draw_pair(size: usize, rng: &mut ChaCha8Rng) -> (ShapeSpec, ShapeSpec) {
        let s = size as f64;
        let jitter = s / 16.0;
        let center = (
            s / 2.0 + rng.random_range(-jitter..=jitter),
            s / 2.0 + rng.random_range(-jitter..=jitter),
        );
        let base_radius = rng.random_range(0.14 * s..=0.22 * s);
        let round = ShapeSpec {
            kind: TumorKind::Round,
            center,
            base_radius,
            amplitude: 0.0,
            lobes: 0,
            phases: [0.0; 3],
            axis_ratio: rng.random_range(1.0..=1.2),
            rotation: rng.random_range(0.0..std::f64::consts::PI),
        };
        let irregular = ShapeSpec {
            kind: TumorKind::Irregular,
            center,
            base_radius,
            amplitude: rng.random_range(0.45..=0.6),
            lobes: rng.random_range(5..=8),
            phases: [
                rng.random_range(0.0..TAU),
                rng.random_range(0.0..TAU),
                rng.random_range(0.0..TAU),
            ],
            axis_ratio: 1.0,
            rotation: 0.0,
        };
        (round, irregular)
    }

    pub fn validate(&self, size: usize) -> Result<()> {
        if self.kind == TumorKind::Round && self.amplitude != 0.0 {
            return Err(Error::Invariant("round shapes have zero amplitude".into()));
        }
        if !(0.0..=0.6).contains(&self.amplitude) {
            return Err(Error::Invariant(format!("amplitude {} outside [0, 0.6]", self.amplitude)));
        }
        if self.kind == TumorKind::Irregular && !(3..=8).contains(&self.lobes) {
            return Err(Error::Invariant(format!("lobe count {} outside 3..=8", self.lobes)));
        }
        let reach = self.base_radius * (1.0 + self.amplitude) * self.axis_ratio;
        let (cy, cx) = self.center;
        let s = size as f64;
        if cy - reach < 0.0 || cx - reach < 0.0 || cy + reach > s || cx + reach > s {
            return Err(Error::Invariant("tumor does not fit inside the image".into()));
        }
        Ok(())
    }

    fn harmonics(&self, theta: f64) -> f64 {
        let l = f64::from(self.lobes);
        HARMONIC_WEIGHTS
            .iter()
            .zip(&self.phases)
            .enumerate()
            .map(|(h, (w, p))| w * ((h as f64 + 1.0) * l * theta + p).sin())
            .sum()
    }

    /// Rasterized support on a `size x size` grid, row-major. A pixel is
    /// inside when its center is.
    pub fn rasterize(&self, size: usize) -> Vec<bool> {
        let (cy, cx) = self.center;
        let r = self.base_radius;
        let mut out = vec![false; size * size];
        match self.kind {
            TumorKind::Round => {
                let (a, b) = (r * self.axis_ratio, r);
                let (sin, cos) = self.rotation.sin_cos();
                for (i, px) in out.iter_mut().enumerate() {
                    let dy = (i / size) as f64 + 0.5 - cy;
                    let dx = (i % size) as f64 + 0.5 - cx;
                    let u = dx * cos + dy * sin;
                    let v = -dx * sin + dy * cos;
                    *px = (u / a).powi(2) + (v / b).powi(2) <= 1.0;
                }
            }
            TumorKind::Irregular => {
                let peak = (0..PROFILE_SAMPLES)
                    .map(|k| self.harmonics(TAU * k as f64 / PROFILE_SAMPLES as f64).abs())
                    .fold(0.0, f64::max);
                for (i, px) in out.iter_mut().enumerate() {
                    let dy = (i / size) as f64 + 0.5 - cy;
                    let dx = (i % size) as f64 + 0.5 - cx;
                    let theta = dy.atan2(dx);
                    let limit = r * (1.0 + self.amplitude * self.harmonics(theta) / peak);
                    *px = dx.hypot(dy) <= limit;
                }
            }
        }
        out
    }
}
