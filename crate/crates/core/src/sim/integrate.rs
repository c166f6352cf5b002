use crate::dynamics::Dynamics;
use crate::error::{Error, Result};
use crate::taylor::Scalar;

fn axpy<T: Scalar>(x: &[T], a: f64, k: &[T]) -> Vec<T> {
    x.iter().zip(k).map(|(&xi, &ki)| xi + ki * a).collect()
}

fn combine<T: Scalar>(x: &[T], dt: f64, k: [&[T]; 4]) -> Vec<T> {
    (0..x.len())
        .map(|i| x[i] + (k[0][i] + k[1][i] * 2.0 + k[2][i] * 2.0 + k[3][i]) * (dt / 6.0))
        .collect()
}

fn check_finite(x: Vec<f64>) -> Result<Vec<f64>> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::NonFinite("rk4 step"))
    }
}

fn check_step(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::TimeGrid(format!("step must be positive, got {dt}")))
    }
}

/// One RK4 step in any scalar type, `u` held constant.
pub fn rk4_map<T: Scalar, D: Dynamics + ?Sized>(f: &D, x: &[T], u: &[T], dt: f64) -> Vec<T> {
    let k1 = f.rhs(x, u);
    let k2 = f.rhs(&axpy(x, dt / 2.0, &k1), u);
    let k3 = f.rhs(&axpy(x, dt / 2.0, &k2), u);
    let k4 = f.rhs(&axpy(x, dt, &k3), u);
    combine(x, dt, [&k1, &k2, &k3, &k4])
}

/// Classical RK4 with `u` held constant over the step.
pub fn rk4_step<D: Dynamics + ?Sized>(f: &D, x: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>> {
    check_step(dt)?;
    check_finite(rk4_map(f, x, u, dt))
}

/// RK4 with a time-varying input evaluated at the stage times
/// `t`, `t + dt/2` and `t + dt`.
pub fn rk4_step_timed<D, U>(f: &D, t: f64, x: &[f64], dt: f64, mut input: U) -> Result<Vec<f64>>
where
    D: Dynamics + ?Sized,
    U: FnMut(f64) -> Result<Vec<f64>>,
{
    check_step(dt)?;
    let u0 = input(t)?;
    let um = input(t + dt / 2.0)?;
    let u1 = input(t + dt)?;
    let k1 = f.rhs(x, &u0);
    let k2 = f.rhs(&axpy(x, dt / 2.0, &k1), &um);
    let k3 = f.rhs(&axpy(x, dt / 2.0, &k2), &um);
    let k4 = f.rhs(&axpy(x, dt, &k3), &u1);
    check_finite(combine(x, dt, [&k1, &k2, &k3, &k4]))
}
