use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Rigid motion in the plane: rotate by `rotation` radians, then translate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform2<T> {
    pub rotation: T,
    pub tx: T,
    pub ty: T,
}

impl<T: Scalar> Default for Transform2<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Scalar> Transform2<T> {
    pub fn new(rotation: T, tx: T, ty: T) -> Self {
        Transform2 { rotation, tx, ty }
    }

    pub fn identity() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn rotation_only(rotation: T) -> Self {
        Self::new(rotation, T::zero(), T::zero())
    }

    pub fn apply(&self, p: [T; 2]) -> [T; 2] {
        let (s, c) = self.rotation.sin_cos();
        [c * p[0] - s * p[1] + self.tx, s * p[0] + c * p[1] + self.ty]
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let [tx, ty] = self.apply([other.tx, other.ty]);
        Self::new(wrap(self.rotation + other.rotation), tx, ty)
    }

    pub fn inverse(&self) -> Self {
        let (s, c) = self.rotation.sin_cos();
        Self::new(
            wrap(-self.rotation),
            -(c * self.tx + s * self.ty),
            s * self.tx - c * self.ty,
        )
    }

    /// Homogeneous 3×3 matrix, row-major.
    pub fn matrix(&self) -> [[T; 3]; 3] {
        let (s, c) = self.rotation.sin_cos();
        let (z, o) = (T::zero(), T::one());
        [[c, -s, self.tx], [s, c, self.ty], [z, z, o]]
    }

    pub fn from_matrix(m: &[[T; 3]; 3]) -> Self {
        Self::new(m[1][0].atan2(m[0][0]), m[0][2], m[1][2])
    }

    pub fn cast<U: Scalar>(&self) -> Transform2<U> {
        Transform2::new(
            U::lit(self.rotation.as_f64()),
            U::lit(self.tx.as_f64()),
            U::lit(self.ty.as_f64()),
        )
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap<T: Scalar>(a: T) -> T {
    let two_pi = T::lit(2.0 * std::f64::consts::PI);
    let pi = T::lit(std::f64::consts::PI);
    let mut r = a % two_pi;
    if r <= -pi {
        r += two_pi;
    } else if r > pi {
        r -= two_pi;
    }
    r
}

/// Composes a sequence of step transforms `T_{0→1}, T_{1→2}, …` into `T_{0→n}`.
pub fn chain<T: Scalar>(steps: &[Transform2<T>]) -> Transform2<T> {
    steps
        .iter()
        .fold(Transform2::identity(), |acc, step| step.compose(&acc))
}
