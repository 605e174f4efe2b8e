//! Desired paths `c_d(gamma)` with analytic tangents and tangent-norm bounds.
//!
//! Closed forms, with `o` origin, `d` direction, `n` normal:
//!
//! | kind | `c_d(gamma)` |
//! |------|--------------|
//! | `line` | `o + d gamma` |
//! | `circular_helix` | `center + (r cos(w gamma + phase), r sin(w gamma + phase), pitch w gamma)` |
//! | `sinusoid_offset_line` | `o + offset + d gamma + A n sin(f gamma)` |

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PathSpec {
    Line {
        origin: [f64; 3],
        direction: [f64; 3],
        /// Straight lines leave every bounded region; they are accepted only
        /// when this is set.
        #[serde(default)]
        allow_unbounded: bool,
    },
    CircularHelix {
        center: [f64; 3],
        radius: f64,
        /// Rise per radian of angle.
        #[serde(default)]
        pitch: f64,
        /// Angle per unit of `gamma`.
        #[serde(default = "one")]
        rate: f64,
        #[serde(default)]
        phase: f64,
    },
    SinusoidOffsetLine {
        origin: [f64; 3],
        direction: [f64; 3],
        #[serde(default)]
        offset: [f64; 3],
        normal: [f64; 3],
        amplitude: f64,
        frequency: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn v(a: &[f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl PathSpec {
    pub fn line(origin: [f64; 3], direction: [f64; 3]) -> Self {
        PathSpec::Line {
            origin,
            direction,
            allow_unbounded: true,
        }
    }

    pub fn eval(&self, gamma: f64) -> Vec3 {
        match self {
            PathSpec::Line {
                origin, direction, ..
            } => v(origin) + v(direction) * gamma,
            PathSpec::CircularHelix {
                center,
                radius,
                pitch,
                rate,
                phase,
            } => {
                let th = rate * gamma + phase;
                v(center) + Vec3::new(radius * th.cos(), radius * th.sin(), pitch * rate * gamma)
            }
            PathSpec::SinusoidOffsetLine {
                origin,
                direction,
                offset,
                normal,
                amplitude,
                frequency,
            } => {
                v(origin)
                    + v(offset)
                    + v(direction) * gamma
                    + v(normal) * (amplitude * (frequency * gamma).sin())
            }
        }
    }

    pub fn derivative(&self, gamma: f64) -> Vec3 {
        match self {
            PathSpec::Line { direction, .. } => v(direction),
            PathSpec::CircularHelix {
                radius,
                pitch,
                rate,
                phase,
                ..
            } => {
                let th = rate * gamma + phase;
                Vec3::new(-radius * th.sin(), radius * th.cos(), *pitch) * *rate
            }
            PathSpec::SinusoidOffsetLine {
                direction,
                normal,
                amplitude,
                frequency,
                ..
            } => v(direction) + v(normal) * (amplitude * frequency * (frequency * gamma).cos()),
        }
    }

    /// Exact `sup_gamma |d c_d / d gamma|`.
    pub fn derivative_bound(&self) -> f64 {
        match self {
            PathSpec::Line { direction, .. } => v(direction).norm(),
            PathSpec::CircularHelix {
                radius,
                pitch,
                rate,
                ..
            } => rate.abs() * radius.hypot(*pitch),
            PathSpec::SinusoidOffsetLine {
                direction,
                normal,
                amplitude,
                frequency,
                ..
            } => {
                // The tangent is affine in cos(f gamma); its norm is convex, so
                // the sup sits at cos = +1 or -1.
                let side = v(normal) * (amplitude * frequency);
                (v(direction) + side)
                    .norm()
                    .max((v(direction) - side).norm())
            }
        }
    }

    /// True when `c_d` stays in a bounded set for all `gamma`.
    pub fn is_bounded(&self) -> bool {
        match self {
            PathSpec::Line { direction, .. } => v(direction).norm() == 0.0,
            PathSpec::CircularHelix { pitch, rate, .. } => *pitch == 0.0 || *rate == 0.0,
            PathSpec::SinusoidOffsetLine { direction, .. } => v(direction).norm() == 0.0,
        }
    }

    /// Analytic bound on `|c_d(gamma)|` over `|gamma| <= gamma_max`.
    pub fn position_bound(&self, gamma_max: f64) -> f64 {
        let g = gamma_max.abs();
        match self {
            PathSpec::Line {
                origin, direction, ..
            } => v(origin).norm() + v(direction).norm() * g,
            PathSpec::CircularHelix {
                center,
                radius,
                pitch,
                rate,
                ..
            } => v(center).norm() + radius.abs() + (pitch * rate).abs() * g,
            PathSpec::SinusoidOffsetLine {
                origin,
                direction,
                offset,
                normal,
                amplitude,
                ..
            } => {
                (v(origin) + v(offset)).norm()
                    + v(direction).norm() * g
                    + v(normal).norm() * amplitude.abs()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |a: &[f64]| a.iter().all(|x| x.is_finite());
        match self {
            PathSpec::Line {
                origin,
                direction,
                allow_unbounded,
            } => {
                if !finite(origin) || !finite(direction) {
                    return Err(Error::Path("line has non-finite parameters".into()));
                }
                if v(direction).norm() == 0.0 {
                    return Err(Error::Path("line direction must be nonzero".into()));
                }
                if !allow_unbounded {
                    return Err(Error::Path(
                        "straight lines are unbounded; set allow_unbounded to accept one".into(),
                    ));
                }
            }
            PathSpec::CircularHelix {
                center,
                radius,
                pitch,
                rate,
                phase,
            } => {
                if !finite(center) || !finite(&[*radius, *pitch, *rate, *phase]) {
                    return Err(Error::Path("helix has non-finite parameters".into()));
                }
                if *radius <= 0.0 {
                    return Err(Error::Path(format!(
                        "helix radius must be positive, got {radius}"
                    )));
                }
                if *rate == 0.0 {
                    return Err(Error::Path("helix rate must be nonzero".into()));
                }
            }
            PathSpec::SinusoidOffsetLine {
                origin,
                direction,
                offset,
                normal,
                amplitude,
                frequency,
            } => {
                if !finite(origin)
                    || !finite(direction)
                    || !finite(offset)
                    || !finite(normal)
                    || !finite(&[*amplitude, *frequency])
                {
                    return Err(Error::Path(
                        "sinusoid path has non-finite parameters".into(),
                    ));
                }
                if v(direction).norm() == 0.0 {
                    return Err(Error::Path(
                        "sinusoid path direction must be nonzero".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}
