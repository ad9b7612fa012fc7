//! Coordinate frames, angle pairs, and direction-cosine algebra.
//!
//! The metasurface lies in the x-y plane with its center at the origin.
//! Everything in front of it has z > 0. A direction is described by an
//! azimuth/elevation pair (theta, phi) mapping to the unit vector
//!
//! ```text
//! u = (sin(theta) cos(phi), sin(theta) sin(phi), cos(theta))
//! ```
//!
//! so that theta = 0 is broadside (+z) and theta = +-90 deg lies in the
//! surface plane. The canonical form produced by [`angle_of`] keeps
//! phi in (-pi/2, pi/2] and lets theta carry the sign, which makes angles
//! in the phi = 0 elevation plane read naturally (a position with x < 0,
//! y = 0 gets a negative theta rather than phi = pi).

use std::f64::consts::{FRAC_PI_2, PI};

use crate::{Error, Result};

/// Cartesian position in meters, metaprism center at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3D {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// Distance from the metaprism center.
    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn distance_to(&self, other: &Position3D) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// True when the point lies strictly in front of the metasurface.
    pub fn is_in_front(&self) -> bool {
        self.z > 0.0
    }
}

/// Azimuth/elevation direction in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnglePair {
    /// Azimuth measured from broadside (+z), signed.
    pub theta: f64,
    /// Elevation angle around the broadside axis.
    pub phi: f64,
}

impl AnglePair {
    /// Builds a pair, wrapping both angles into (-pi, pi].
    pub fn new(theta: f64, phi: f64) -> Self {
        Self {
            theta: wrap_angle(theta),
            phi: wrap_angle(phi),
        }
    }

    pub fn from_degrees(theta_deg: f64, phi_deg: f64) -> Self {
        Self::new(theta_deg.to_radians(), phi_deg.to_radians())
    }

    /// True when the direction points into the z >= 0 half space.
    pub fn is_visible(&self) -> bool {
        self.theta.abs() <= FRAC_PI_2
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// In-plane direction cosines of a direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionCosines {
    pub ux: f64,
    pub uy: f64,
}

impl DirectionCosines {
    /// Out-of-plane component for a forward (z >= 0) direction.
    pub fn uz(&self) -> f64 {
        (1.0 - self.ux * self.ux - self.uy * self.uy).max(0.0).sqrt()
    }

    /// True when the cosines correspond to a propagating direction.
    pub fn is_visible(&self) -> bool {
        self.ux * self.ux + self.uy * self.uy <= 1.0
    }
}

/// ux = sin(theta) cos(phi), uy = sin(theta) sin(phi).
pub fn direction_cosines(angle: AnglePair) -> DirectionCosines {
    let st = angle.theta.sin();
    let (sp, cp) = angle.phi.sin_cos();
    DirectionCosines {
        ux: st * cp,
        uy: st * sp,
    }
}

/// Unit vector of a direction.
pub fn unit_vector(angle: AnglePair) -> [f64; 3] {
    let (st, ct) = angle.theta.sin_cos();
    let (sp, cp) = angle.phi.sin_cos();
    [st * cp, st * sp, ct]
}

/// Canonical (theta, phi) of a position as seen from the metaprism center.
///
/// The result round-trips with [`position_from_polar`]: phi is folded into
/// (-pi/2, pi/2] and theta carries the sign. Errors on the origin.
pub fn angle_of(p: &Position3D) -> Result<AnglePair> {
    let d = p.norm();
    if d == 0.0 || !d.is_finite() {
        return Err(Error::DegenerateInput(
            "cannot take the angle of a zero-length or non-finite vector".into(),
        ));
    }
    let ux = p.x / d;
    let uy = p.y / d;
    let uz = p.z / d;
    let r = (ux * ux + uy * uy).sqrt();
    if r == 0.0 {
        // On the broadside axis.
        let theta = if uz >= 0.0 { 0.0 } else { PI };
        return Ok(AnglePair { theta, phi: 0.0 });
    }
    let theta_mag = r.atan2(uz);
    let phi_raw = uy.atan2(ux);
    let (theta, phi) = if phi_raw > FRAC_PI_2 {
        (-theta_mag, phi_raw - PI)
    } else if phi_raw <= -FRAC_PI_2 {
        (-theta_mag, phi_raw + PI)
    } else {
        (theta_mag, phi_raw)
    };
    Ok(AnglePair { theta, phi })
}

/// Position at distance `d` along the direction `angle`.
pub fn position_from_polar(d: f64, angle: AnglePair) -> Result<Position3D> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Domain(format!(
            "polar distance must be positive and finite, got {d}"
        )));
    }
    let [ux, uy, uz] = unit_vector(angle);
    Ok(Position3D::new(d * ux, d * uy, d * uz))
}

/// Great-circle angle between two directions, in radians.
///
/// Symmetric, zero iff the directions coincide; numerically stable near 0
/// and pi through the atan2 form.
pub fn angular_separation(a: AnglePair, b: AnglePair) -> f64 {
    let ua = unit_vector(a);
    let ub = unit_vector(b);
    let dot = ua[0] * ub[0] + ua[1] * ub[1] + ua[2] * ub[2];
    let cx = ua[1] * ub[2] - ua[2] * ub[1];
    let cy = ua[2] * ub[0] - ua[0] * ub[2];
    let cz = ua[0] * ub[1] - ua[1] * ub[0];
    let cross = (cx * cx + cy * cy + cz * cz).sqrt();
    cross.atan2(dot)
}
