//! Object poses and the pose deltas predicted by forward models.
//!
//! Positions compose additively; orientations compose by a left Hamilton
//! product, `q' = dq ⊗ q`, so deltas are expressed in the world frame.
//! Quaternions are kept unit-norm with `w ≥ 0`.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation by `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (angle / 2.0).sin_cos();
        Self::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n).canonical()
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Unit quaternion in the direction of `self`; identity for the zero quaternion.
    pub fn normalized(self) -> Self {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Self::IDENTITY;
        }
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    /// Resolves the `q ≡ -q` ambiguity by choosing `w ≥ 0`.
    pub fn canonical(self) -> Self {
        if self.w < 0.0 {
            Self::new(-self.w, -self.x, -self.y, -self.z)
        } else {
            self
        }
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product `self ⊗ rhs`.
    pub fn hamilton(self, rhs: Quat) -> Quat {
        let (a, b) = (self, rhs);
        Quat::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    /// 3×3 rotation matrix of a unit quaternion.
    pub fn to_matrix(self) -> [[f64; 3]; 3] {
        let Quat { w, x, y, z } = self;
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    pub fn rotate(self, v: [f64; 3]) -> [f64; 3] {
        let m = self.to_matrix();
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    /// Signed rotation angle about a principal axis, for quaternions that
    /// rotate about that axis only (`axis` 0 = x, 1 = y, 2 = z).
    pub fn angle_about(self, axis: usize) -> f64 {
        let q = self.canonical();
        let s = [q.x, q.y, q.z][axis];
        2.0 * s.atan2(q.w)
    }
}

/// Gradients of `c = a ⊗ b` pulled back from `g = ∂L/∂c`.
pub fn hamilton_grad(a: Quat, b: Quat, g: [f64; 4]) -> ([f64; 4], [f64; 4]) {
    let [gw, gx, gy, gz] = g;
    let ga = [
        gw * b.w + gx * b.x + gy * b.y + gz * b.z,
        -gw * b.x + gx * b.w - gy * b.z + gz * b.y,
        -gw * b.y + gx * b.z + gy * b.w - gz * b.x,
        -gw * b.z - gx * b.y + gy * b.x + gz * b.w,
    ];
    let gb = [
        gw * a.w + gx * a.x + gy * a.y + gz * a.z,
        -gw * a.x + gx * a.w + gy * a.z - gz * a.y,
        -gw * a.y - gx * a.z + gy * a.w + gz * a.x,
        -gw * a.z + gx * a.y - gy * a.x + gz * a.w,
    ];
    (ga, gb)
}

/// Gradient of `m / |m|` pulled back from `g`.
pub fn normalize_grad(m: [f64; 4], g: [f64; 4]) -> [f64; 4] {
    let n = (m.iter().map(|v| v * v).sum::<f64>()).sqrt();
    if n == 0.0 {
        return [0.0; 4];
    }
    let u: Vec<f64> = m.iter().map(|v| v / n).collect();
    let dot: f64 = u.iter().zip(&g).map(|(a, b)| a * b).sum();
    [
        (g[0] - u[0] * dot) / n,
        (g[1] - u[1] * dot) / n,
        (g[2] - u[2] * dot) / n,
        (g[3] - u[3] * dot) / n,
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Meters.
    pub position: [f64; 3],
    pub orientation: Quat,
}

impl Default for Pose {
    fn default() -> Self {
        Self {
            position: [0.0; 3],
            orientation: Quat::IDENTITY,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseDelta {
    pub dposition: [f64; 3],
    pub drotation: Quat,
}

impl PoseDelta {
    pub const IDENTITY: PoseDelta = PoseDelta {
        dposition: [0.0; 3],
        drotation: Quat::IDENTITY,
    };
}

impl Pose {
    pub fn new(position: [f64; 3], orientation: Quat) -> Self {
        Self {
            position,
            orientation: orientation.normalized().canonical(),
        }
    }

    /// Applies `delta`: additive offset for the position, `dq ⊗ q` for the
    /// orientation, renormalized and sign-canonicalized.
    pub fn apply(&self, delta: &PoseDelta) -> Pose {
        let p = self.position;
        let d = delta.dposition;
        Pose {
            position: [p[0] + d[0], p[1] + d[1], p[2] + d[2]],
            orientation: delta.drotation.hamilton(self.orientation).normalized().canonical(),
        }
    }

    /// The delta that takes `self` to `next`.
    pub fn delta_to(&self, next: &Pose) -> PoseDelta {
        let (p, n) = (self.position, next.position);
        PoseDelta {
            dposition: [n[0] - p[0], n[1] - p[1], n[2] - p[2]],
            drotation: next
                .orientation
                .hamilton(self.orientation.conjugate())
                .normalized()
                .canonical(),
        }
    }
}

pub fn apply_delta(pose: &Pose, delta: &PoseDelta) -> Pose {
    pose.apply(delta)
}
