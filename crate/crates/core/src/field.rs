//! Scalar fields on a group and their horizontal derivatives.

use crate::group::{GroupError, GroupSpec, MultiIndex, Point};

pub trait ScalarField: Sync {
    fn spec(&self) -> &GroupSpec;
    fn eval(&self, p: &Point) -> f64;

    /// `X_α f(p)` by nested central differences with step `h`.
    fn derivative(&self, alpha: &MultiIndex, p: &Point, h: f64) -> Result<f64, GroupError> {
        self.spec().horizontal_derivative(&|q: &Point| self.eval(q), alpha, p, h)
    }
}

/// `f ≡ value`.
#[derive(Clone, Debug)]
pub struct Constant {
    pub spec: GroupSpec,
    pub value: f64,
}

impl ScalarField for Constant {
    fn spec(&self) -> &GroupSpec {
        &self.spec
    }

    fn eval(&self, _: &Point) -> f64 {
        self.value
    }
}

/// A closure as a field.
pub struct FnField<F> {
    spec: GroupSpec,
    f: F,
}

impl<F: Fn(&Point) -> f64 + Sync> FnField<F> {
    pub fn new(spec: &GroupSpec, f: F) -> Self {
        FnField { spec: spec.clone(), f }
    }
}

impl<F: Fn(&Point) -> f64 + Sync> ScalarField for FnField<F> {
    fn spec(&self) -> &GroupSpec {
        &self.spec
    }

    fn eval(&self, p: &Point) -> f64 {
        (self.f)(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_has_zero_derivatives() {
        let g = GroupSpec::heisenberg(1).unwrap();
        let c = Constant { spec: g.clone(), value: 3.0 };
        let p = Point::from([0.2, -0.4, 1.0]);
        for order in 1..=3 {
            for a in MultiIndex::all_of_order(2, order) {
                assert!(c.derivative(&a, &p, 1e-3).unwrap().abs() < 1e-10);
            }
        }
    }

    #[test]
    fn closure_field_derivative() {
        let g = GroupSpec::heisenberg(1).unwrap();
        // X1 t = -y/2.
        let f = FnField::new(&g, |p: &Point| p[2]);
        let p = Point::from([0.0, 0.8, 0.0]);
        let d = f.derivative(&MultiIndex::new(vec![0]), &p, 1e-4).unwrap();
        assert!((d + 0.4).abs() < 1e-9);
    }
}
