//! Rotation-group primitives: exponential/logarithm maps, angle scaling and a
//! tangent-space isotropic Gaussian on SO(3).

use rand::Rng;
use rand_distr::StandardNormal;

use crate::scalar::{cross3, dot3, norm3, Real, Vec3};

/// Proper rotation matrix, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation<F = f64> {
    m: [[F; 3]; 3],
}

/// Tangent vector in so(3): rotation axis scaled by angle in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisAngle<F = f64>(pub Vec3<F>);

impl<F: Real> AxisAngle<F> {
    pub fn zero() -> Self {
        AxisAngle([F::zero(); 3])
    }

    pub fn angle(&self) -> F {
        norm3(self.0)
    }
}

impl<F: Real> Default for Rotation<F> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<F: Real> Rotation<F> {
    pub fn identity() -> Self {
        let (o, z) = (F::one(), F::zero());
        Rotation {
            m: [[o, z, z], [z, o, z], [z, z, o]],
        }
    }

    /// Wraps a matrix without checking it. Callers guarantee orthonormality.
    pub fn from_matrix_unchecked(m: [[F; 3]; 3]) -> Self {
        Rotation { m }
    }

    /// Wraps a matrix if it is orthonormal with determinant +1 within `tol`.
    pub fn from_matrix(m: [[F; 3]; 3], tol: F) -> Option<Self> {
        let r = Rotation { m };
        if r.orthonormality_error() <= tol && (r.det() - F::one()).abs() <= tol {
            Some(r)
        } else {
            None
        }
    }

    /// Rotation whose columns are the given orthonormal frame axes.
    pub fn from_columns(c0: Vec3<F>, c1: Vec3<F>, c2: Vec3<F>) -> Self {
        Rotation {
            m: [[c0[0], c1[0], c2[0]], [c0[1], c1[1], c2[1]], [c0[2], c1[2], c2[2]]],
        }
    }

    pub fn matrix(&self) -> &[[F; 3]; 3] {
        &self.m
    }

    pub fn row_major(&self) -> [F; 9] {
        let m = &self.m;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    pub fn from_row_major(v: [F; 9]) -> Self {
        Rotation {
            m: [[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]],
        }
    }

    pub fn column(&self, j: usize) -> Vec3<F> {
        [self.m[0][j], self.m[1][j], self.m[2][j]]
    }

    pub fn transpose(&self) -> Self {
        let m = &self.m;
        Rotation {
            m: [
                [m[0][0], m[1][0], m[2][0]],
                [m[0][1], m[1][1], m[2][1]],
                [m[0][2], m[1][2], m[2][2]],
            ],
        }
    }

    /// Matrix product `self * rhs`.
    pub fn compose(&self, rhs: &Self) -> Self {
        Rotation {
            m: mat_mul(&self.m, &rhs.m),
        }
    }

    pub fn apply(&self, v: Vec3<F>) -> Vec3<F> {
        let m = &self.m;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    /// `self^T * v`.
    pub fn apply_inverse(&self, v: Vec3<F>) -> Vec3<F> {
        let m = &self.m;
        [
            m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
            m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
            m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn trace(&self) -> F {
        self.m[0][0] + self.m[1][1] + self.m[2][2]
    }

    pub fn det(&self) -> F {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Max-abs entry of `m^T m - I`.
    pub fn orthonormality_error(&self) -> F {
        let mtm = mat_mul(&self.transpose().m, &self.m);
        let mut err = F::zero();
        for (i, row) in mtm.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let target = if i == j { F::one() } else { F::zero() };
                err = err.max((v - target).abs());
            }
        }
        err
    }

    /// Geodesic angle to the identity, in `[0, pi]`.
    pub fn angle(&self) -> F {
        trace_to_angle(self.trace())
    }

    /// Geodesic distance `angle(self^T other)`.
    pub fn geodesic(&self, other: &Self) -> F {
        self.transpose().compose(other).angle()
    }

    /// Squared Frobenius distance `||self - other||_F^2`.
    pub fn frobenius_sq(&self, other: &Self) -> F {
        let mut s = F::zero();
        for i in 0..3 {
            for j in 0..3 {
                let d = self.m[i][j] - other.m[i][j];
                s = s + d * d;
            }
        }
        s
    }

    pub fn cast<G: Real>(&self) -> Rotation<G> {
        let c = |x: F| G::lit(x.to_f64().unwrap_or(f64::NAN));
        let m = &self.m;
        Rotation {
            m: [
                [c(m[0][0]), c(m[0][1]), c(m[0][2])],
                [c(m[1][0]), c(m[1][1]), c(m[1][2])],
                [c(m[2][0]), c(m[2][1]), c(m[2][2])],
            ],
        }
    }
}

fn mat_mul<F: Real>(a: &[[F; 3]; 3], b: &[[F; 3]; 3]) -> [[F; 3]; 3] {
    let mut out = [[F::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

fn trace_to_angle<F: Real>(tr: F) -> F {
    let two = F::lit(2.0);
    let c = ((tr - F::one()) / two).max(-F::one()).min(F::one());
    c.acos()
}

fn hat<F: Real>(v: Vec3<F>) -> [[F; 3]; 3] {
    let z = F::zero();
    [[z, -v[2], v[1]], [v[2], z, -v[0]], [-v[1], v[0], z]]
}

/// Coefficients `(sin t / t, (1 - cos t) / t^2)` with series near zero.
fn rodrigues_coeffs<F: Real>(theta: F) -> (F, F) {
    let t2 = theta * theta;
    if theta < F::lit(1e-4) {
        let a = F::one() - t2 / F::lit(6.0) + t2 * t2 / F::lit(120.0);
        let b = F::lit(0.5) - t2 / F::lit(24.0) + t2 * t2 / F::lit(720.0);
        (a, b)
    } else {
        (theta.sin() / theta, (F::one() - theta.cos()) / t2)
    }
}

/// Rodrigues formula. Total on finite input; `exp_map(0) = I`.
pub fn exp_map<F: Real>(v: AxisAngle<F>) -> Rotation<F> {
    let theta = norm3(v.0);
    let (a, b) = rodrigues_coeffs(theta);
    let k = hat(v.0);
    let k2 = mat_mul(&k, &k);
    let mut m = [[F::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let id = if i == j { F::one() } else { F::zero() };
            m[i][j] = id + a * k[i][j] + b * k2[i][j];
        }
    }
    Rotation { m }
}

/// Jacobian of the row-major entries of `exp_map(v)` with respect to `v`:
/// `out[k][r]` is `d E_r / d v_k`.
pub fn exp_map_jacobian<F: Real>(v: Vec3<F>) -> [[F; 9]; 3] {
    let theta = norm3(v);
    let t2 = theta * theta;
    let (a, b) = rodrigues_coeffs(theta);
    // (da/dt)/t and (db/dt)/t
    let (ca, cb) = if theta < F::lit(0.05) {
        let t4 = t2 * t2;
        let t6 = t4 * t2;
        (
            -F::one() / F::lit(3.0) + t2 / F::lit(30.0) - t4 / F::lit(840.0) + t6 / F::lit(45360.0),
            -F::one() / F::lit(12.0) + t2 / F::lit(180.0) - t4 / F::lit(6720.0)
                + t6 / F::lit(453600.0),
        )
    } else {
        let (s, c) = (theta.sin(), theta.cos());
        (
            (theta * c - s) / (t2 * theta),
            (theta * s - F::lit(2.0) * (F::one() - c)) / (t2 * t2),
        )
    };
    let k = hat(v);
    let k2 = mat_mul(&k, &k);
    let mut out = [[F::zero(); 9]; 3];
    for (idx, row) in out.iter_mut().enumerate() {
        let mut e = [F::zero(); 3];
        e[idx] = F::one();
        let g = hat(e);
        let gk = mat_mul(&g, &k);
        let kg = mat_mul(&k, &g);
        for i in 0..3 {
            for j in 0..3 {
                row[i * 3 + j] = ca * v[idx] * k[i][j]
                    + a * g[i][j]
                    + cb * v[idx] * k2[i][j]
                    + b * (gk[i][j] + kg[i][j]);
            }
        }
    }
    out
}

/// Canonical axis-angle with angle in `[0, pi]`.
///
/// Within `1e-7` of a half-turn the two antipodal representatives are
/// equivalent; the lexicographically larger axis is returned.
pub fn log_map<F: Real>(o: &Rotation<F>) -> AxisAngle<F> {
    let m = &o.m;
    let theta = o.angle();
    let anti = [m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]];
    let half = F::lit(0.5);
    if theta < F::lit(1e-4) {
        // vee((M - M^T) / 2) * theta / sin(theta), series in theta
        let t2 = theta * theta;
        let f = half * (F::one() + t2 / F::lit(6.0) + F::lit(7.0) * t2 * t2 / F::lit(360.0));
        return AxisAngle([anti[0] * f, anti[1] * f, anti[2] * f]);
    }
    if theta < F::lit(3.0) {
        let f = theta / (F::lit(2.0) * theta.sin());
        return AxisAngle([anti[0] * f, anti[1] * f, anti[2] * f]);
    }
    // Near a half-turn: n n^T = (S - cos(theta) I) / (1 - cos(theta)), S = sym(M).
    let c = theta.cos();
    let denom = F::one() - c;
    let mut nn = [[F::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let s = half * (m[i][j] + m[j][i]);
            let id = if i == j { c } else { F::zero() };
            nn[i][j] = (s - id) / denom;
        }
    }
    let mut p = 0;
    for i in 1..3 {
        if nn[i][i] > nn[p][p] {
            p = i;
        }
    }
    let d = nn[p][p].max(F::zero()).sqrt();
    let mut axis = [nn[0][p] / d, nn[1][p] / d, nn[2][p] / d];
    let n = norm3(axis);
    axis = [axis[0] / n, axis[1] / n, axis[2] / n];
    let flip = if F::PI() - theta < F::lit(1e-7) {
        !lexicographically_positive(axis)
    } else {
        dot3(axis, anti) < F::zero()
    };
    if flip {
        axis = [-axis[0], -axis[1], -axis[2]];
    }
    AxisAngle([axis[0] * theta, axis[1] * theta, axis[2] * theta])
}

fn lexicographically_positive<F: Real>(v: Vec3<F>) -> bool {
    for &c in &v {
        if c > F::zero() {
            return true;
        }
        if c < F::zero() {
            return false;
        }
    }
    true
}

/// Same axis, angle multiplied by `c`.
pub fn scale_rot<F: Real>(c: F, o: &Rotation<F>) -> Rotation<F> {
    if c == F::one() {
        return *o;
    }
    if c == F::zero() {
        return Rotation::identity();
    }
    let v = log_map(o).0;
    exp_map(AxisAngle([v[0] * c, v[1] * c, v[2] * c]))
}

/// Draws `xi ~ N(0, var I)` in so(3).
pub fn sample_tangent<F: Real, R: Rng + ?Sized>(var: F, rng: &mut R) -> Vec3<F> {
    let sd = var.max(F::zero()).sqrt();
    let mut xi = [F::zero(); 3];
    for c in xi.iter_mut() {
        let g: f64 = rng.sample(StandardNormal);
        *c = F::lit(g) * sd;
    }
    xi
}

/// Tangent-space approximation of the isotropic Gaussian on SO(3):
/// `mean * exp(xi)` with `xi ~ N(0, var I)`.
///
/// The noise acts in the body frame, so left-multiplying the mean by `R`
/// left-multiplies the sample by `R` for the same random stream.
pub fn sample_igso3_approx<F: Real, R: Rng + ?Sized>(
    mean: &Rotation<F>,
    var: F,
    rng: &mut R,
) -> Rotation<F> {
    let xi = sample_tangent(var, rng);
    if var <= F::zero() {
        return *mean;
    }
    mean.compose(&exp_map(AxisAngle(xi)))
}

/// Log-density of `o` under the tangent-space Gaussian centred at `mean`.
pub fn igso3_approx_log_density<F: Real>(mean: &Rotation<F>, o: &Rotation<F>, var: F) -> F {
    let theta = mean.geodesic(o);
    let two_pi = F::lit(2.0) * F::PI();
    -theta * theta / (F::lit(2.0) * var) - F::lit(1.5) * (two_pi * var).ln()
}

/// Uniformly distributed rotation (normalised Gaussian quaternion).
pub fn uniform_rotation<F: Real, R: Rng + ?Sized>(rng: &mut R) -> Rotation<F> {
    let mut q = [0.0f64; 4];
    loop {
        for c in q.iter_mut() {
            *c = rng.sample(StandardNormal);
        }
        let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n > 1e-12 {
            for c in q.iter_mut() {
                *c /= n;
            }
            break;
        }
    }
    let [w, x, y, z] = q;
    let m = [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ];
    Rotation::<f64>::from_matrix_unchecked(m).cast()
}

/// Orthonormal frame with first axis along `a` and second in the plane of
/// `a` and `b`.
pub fn frame_from_two_vectors<F: Real>(a: Vec3<F>, b: Vec3<F>) -> Rotation<F> {
    let e1 = crate::scalar::normalize3(a);
    let proj = dot3(b, e1);
    let mut e2 = [b[0] - proj * e1[0], b[1] - proj * e1[1], b[2] - proj * e1[2]];
    if norm3(e2) < F::lit(1e-9) {
        // b parallel to a: pick any perpendicular
        let trial = if e1[0].abs() < F::lit(0.9) {
            [F::one(), F::zero(), F::zero()]
        } else {
            [F::zero(), F::one(), F::zero()]
        };
        e2 = cross3(e1, trial);
    }
    let e2 = crate::scalar::normalize3(e2);
    let e3 = cross3(e1, e2);
    Rotation::from_columns(e1, e2, e3)
}
