use crate::taylor::Scalar;

/// Continuous-time dynamics `x' = f(x, u)` over any smooth scalar.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn rhs<T: Scalar>(&self, x: &[T], u: &[T]) -> Vec<T>;
}

impl<D: Dynamics> Dynamics for &D {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }

    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }

    fn rhs<T: Scalar>(&self, x: &[T], u: &[T]) -> Vec<T> {
        (**self).rhs(x, u)
    }
}
