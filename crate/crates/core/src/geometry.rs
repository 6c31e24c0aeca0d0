//! Kernel-point dispositions and the linear correlation function.
//!
//! A disposition is the fixed geometric layout the interaction operators
//! measure correlation against: one kernel point at the origin (the center)
//! plus the vertices of a regular polyhedron scaled to a given radius.
//!
//! Canonical orientation and ordering (deterministic, documented):
//! point 0 is always the origin; point 1 sits on the +z axis; the remaining
//! vertices follow the constructions below in a fixed order.
//!
//! * Tetrahedron (5 points): apex +z, then the three base vertices at
//!   z = -1/3, starting on the +x half-plane and proceeding counter-clockwise.
//! * Octahedron (7 points): +z, then the equatorial square +x, +y, -x, -y,
//!   then -z.
//! * Icosahedron (13 points): +z pole, upper pentagonal ring (z = 1/sqrt(5))
//!   counter-clockwise from +x, lower ring (z = -1/sqrt(5)) offset by pi/5,
//!   then the -z pole.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::Scalar;

/// The three searchable kernel layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DispositionKind {
    #[serde(rename = "tetra")]
    Tetrahedron,
    #[serde(rename = "octa")]
    Octahedron,
    #[serde(rename = "icosa")]
    Icosahedron,
}

impl DispositionKind {
    pub const ALL: [DispositionKind; 3] = [
        DispositionKind::Tetrahedron,
        DispositionKind::Octahedron,
        DispositionKind::Icosahedron,
    ];

    /// Kernel-point count including the center point.
    pub fn kernel_points(self) -> usize {
        match self {
            DispositionKind::Tetrahedron => 5,
            DispositionKind::Octahedron => 7,
            DispositionKind::Icosahedron => 13,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DispositionKind::Tetrahedron => "tetra",
            DispositionKind::Octahedron => "octa",
            DispositionKind::Icosahedron => "icosa",
        }
    }
}

impl std::str::FromStr for DispositionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tetra" | "tetrahedron" => Ok(DispositionKind::Tetrahedron),
            "octa" | "octahedron" => Ok(DispositionKind::Octahedron),
            "icosa" | "icosahedron" => Ok(DispositionKind::Icosahedron),
            other => Err(Error::invalid(format!("unknown disposition kind: {other}"))),
        }
    }
}

/// Fixed layout of K kernel points in 3-space (meters).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDisposition<S> {
    pub kind: DispositionKind,
    /// K points; row 0 is the origin, rows 1.. sit at `radius` from it.
    pub points: Vec<[S; 3]>,
    pub radius: S,
}

impl<S: Scalar> KernelDisposition<S> {
    pub fn k(&self) -> usize {
        self.points.len()
    }
}

fn unit_vertices(kind: DispositionKind) -> Vec<[f64; 3]> {
    match kind {
        DispositionKind::Tetrahedron => {
            let s2 = 2f64.sqrt();
            let s6 = 6f64.sqrt();
            vec![
                [0.0, 0.0, 1.0],
                [2.0 * s2 / 3.0, 0.0, -1.0 / 3.0],
                [-s2 / 3.0, s6 / 3.0, -1.0 / 3.0],
                [-s2 / 3.0, -s6 / 3.0, -1.0 / 3.0],
            ]
        }
        DispositionKind::Octahedron => vec![
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, -1.0],
        ],
        DispositionKind::Icosahedron => {
            let z = 1.0 / 5f64.sqrt();
            let r = 2.0 / 5f64.sqrt();
            let mut v = vec![[0.0, 0.0, 1.0]];
            for j in 0..5 {
                let a = 2.0 * std::f64::consts::PI * j as f64 / 5.0;
                v.push([r * a.cos(), r * a.sin(), z]);
            }
            for j in 0..5 {
                let a = std::f64::consts::PI * (2 * j + 1) as f64 / 5.0;
                v.push([r * a.cos(), r * a.sin(), -z]);
            }
            v.push([0.0, 0.0, -1.0]);
            v
        }
    }
}

/// Build the canonical disposition of `kind` with all non-center points at
/// distance `radius` from the origin.
pub fn make_disposition<S: Scalar>(kind: DispositionKind, radius: S) -> Result<KernelDisposition<S>> {
    if !(radius > S::zero()) || !radius.is_finite() {
        return Err(Error::invalid(format!(
            "disposition radius must be positive and finite, got {radius}"
        )));
    }
    let mut points = vec![[S::zero(); 3]];
    for v in unit_vertices(kind) {
        points.push([
            S::from_f64_lossy(v[0]) * radius,
            S::from_f64_lossy(v[1]) * radius,
            S::from_f64_lossy(v[2]) * radius,
        ]);
    }
    debug_assert_eq!(points.len(), kind.kernel_points());
    Ok(KernelDisposition {
        kind,
        points,
        radius,
    })
}

/// Influence radius delta of Eq-style linear correlation; strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfluenceRadius<S> {
    delta: S,
}

impl<S: Scalar> InfluenceRadius<S> {
    pub fn new(delta: S) -> Result<Self> {
        if !(delta > S::zero()) || !delta.is_finite() {
            return Err(Error::invalid(format!(
                "influence radius must be positive and finite, got {delta}"
            )));
        }
        Ok(InfluenceRadius { delta })
    }

    pub fn get(self) -> S {
        self.delta
    }
}

#[inline]
fn dist3<S: Scalar>(a: &[S; 3], b: &[S; 3]) -> S {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Linear correlation between neighbor positions (relative to the center
/// point) and the kernel points: H[i][k] = max(0, 1 - |x_i - x_k| / delta).
pub fn correlation<S: Scalar>(
    rel_positions: &[[S; 3]],
    disp: &KernelDisposition<S>,
    delta: InfluenceRadius<S>,
) -> Result<Mat<S>> {
    for (i, p) in rel_positions.iter().enumerate() {
        if !p.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite neighbor position at row {i}"
            )));
        }
    }
    let k = disp.k();
    let inv_delta = S::one() / delta.get();
    let mut h = Mat::zeros(rel_positions.len(), k);
    for (i, p) in rel_positions.iter().enumerate() {
        let row = h.row_mut(i);
        for (slot, kp) in row.iter_mut().zip(&disp.points) {
            let v = S::one() - dist3(p, kp) * inv_delta;
            *slot = if v > S::zero() { v } else { S::zero() };
        }
    }
    Ok(h)
}
