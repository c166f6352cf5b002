use std::f64::consts::PI;
use std::ops::{Add, Div, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};

use super::{JetError, Scalar};

/// Maximum number of simultaneous tangent directions carried by a [`Dual`].
pub const MAX_DUAL_DIRS: usize = 16;

/// Dual number with up to [`MAX_DUAL_DIRS`] tangent directions.
///
/// Constants carry zero directions; mixing a constant with a seeded dual
/// keeps the seeded width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual {
    value: f64,
    dirs: usize,
    tangent: [f64; MAX_DUAL_DIRS],
}

impl Dual {
    /// Coordinate `index` of an `n`-dimensional input, seeded with the unit
    /// direction `e_index`.
    pub fn variable(value: f64, index: usize, n: usize) -> Self {
        assert!(n <= MAX_DUAL_DIRS && index < n);
        let mut tangent = [0.0; MAX_DUAL_DIRS];
        tangent[index] = 1.0;
        Dual {
            value,
            dirs: n,
            tangent,
        }
    }

    pub fn with_tangent(value: f64, tangent: &[f64]) -> Result<Self, JetError> {
        if tangent.len() > MAX_DUAL_DIRS {
            return Err(JetError::TooManyDirections(tangent.len()));
        }
        let mut t = [0.0; MAX_DUAL_DIRS];
        t[..tangent.len()].copy_from_slice(tangent);
        Ok(Dual {
            value,
            dirs: tangent.len(),
            tangent: t,
        })
    }

    pub fn tangent(&self) -> &[f64] {
        &self.tangent[..self.dirs]
    }

    /// Tangent component `k`, zero beyond the seeded width.
    pub fn partial(&self, k: usize) -> f64 {
        if k < self.dirs {
            self.tangent[k]
        } else {
            0.0
        }
    }

    /// Chain rule for a unary map with value `f` and slope `df`.
    #[inline]
    fn chain(self, f: f64, df: f64) -> Dual {
        let mut out = Dual {
            value: f,
            dirs: self.dirs,
            tangent: [0.0; MAX_DUAL_DIRS],
        };
        for k in 0..self.dirs {
            out.tangent[k] = df * self.tangent[k];
        }
        out
    }

    #[inline]
    fn zip(self, rhs: Dual, value: f64, da: f64, db: f64) -> Dual {
        let dirs = self.dirs.max(rhs.dirs);
        let mut out = Dual {
            value,
            dirs,
            tangent: [0.0; MAX_DUAL_DIRS],
        };
        for k in 0..dirs {
            out.tangent[k] = da * self.tangent[k] + db * rhs.tangent[k];
        }
        out
    }
}

impl Add for Dual {
    type Output = Dual;

    fn add(self, rhs: Dual) -> Dual {
        let dirs = self.dirs.max(rhs.dirs);
        let mut out = Dual {
            value: self.value + rhs.value,
            dirs,
            tangent: [0.0; MAX_DUAL_DIRS],
        };
        for k in 0..dirs {
            out.tangent[k] = self.tangent[k] + rhs.tangent[k];
        }
        out
    }
}

impl Sub for Dual {
    type Output = Dual;

    fn sub(self, rhs: Dual) -> Dual {
        let dirs = self.dirs.max(rhs.dirs);
        let mut out = Dual {
            value: self.value - rhs.value,
            dirs,
            tangent: [0.0; MAX_DUAL_DIRS],
        };
        for k in 0..dirs {
            out.tangent[k] = self.tangent[k] - rhs.tangent[k];
        }
        out
    }
}

impl Mul for Dual {
    type Output = Dual;

    fn mul(self, rhs: Dual) -> Dual {
        self.zip(rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl Div for Dual {
    type Output = Dual;

    fn div(self, rhs: Dual) -> Dual {
        let q = self.value / rhs.value;
        self.zip(rhs, q, 1.0 / rhs.value, -q / rhs.value)
    }
}

impl Neg for Dual {
    type Output = Dual;

    fn neg(self) -> Dual {
        self.chain(-self.value, -1.0)
    }
}

impl Add<f64> for Dual {
    type Output = Dual;

    fn add(mut self, rhs: f64) -> Dual {
        self.value += rhs;
        self
    }
}

impl Sub<f64> for Dual {
    type Output = Dual;

    fn sub(mut self, rhs: f64) -> Dual {
        self.value -= rhs;
        self
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;

    fn mul(self, rhs: f64) -> Dual {
        self.chain(self.value * rhs, rhs)
    }
}

impl Div<f64> for Dual {
    type Output = Dual;

    fn div(self, rhs: f64) -> Dual {
        let mut out = self;
        out.value = self.value / rhs;
        for k in 0..self.dirs {
            out.tangent[k] = self.tangent[k] / rhs;
        }
        out
    }
}

impl Scalar for Dual {
    fn constant(value: f64) -> Self {
        Dual {
            value,
            dirs: 0,
            tangent: [0.0; MAX_DUAL_DIRS],
        }
    }

    fn value(&self) -> f64 {
        self.value
    }

    fn sin(self) -> Self {
        self.chain(self.value.sin(), self.value.cos())
    }

    fn cos(self) -> Self {
        self.chain(self.value.cos(), -self.value.sin())
    }

    fn exp(self) -> Self {
        let e = self.value.exp();
        self.chain(e, e)
    }

    fn erf(self) -> Self {
        let slope = 2.0 / PI.sqrt() * (-self.value * self.value).exp();
        self.chain(libm::erf(self.value), slope)
    }

    fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        self.chain(s, 0.5 / s)
    }

    fn atan2(self, x: Self) -> Self {
        let r = self.value * self.value + x.value * x.value;
        self.zip(x, self.value.atan2(x.value), x.value / r, -self.value / r)
    }
}

/// A point with a bundle of tangent directions (the columns of `seed`).
#[derive(Clone, Debug, PartialEq)]
pub struct DualVector {
    pub value: DVector<f64>,
    pub seed: DMatrix<f64>,
}

impl DualVector {
    pub fn new(value: DVector<f64>, seed: DMatrix<f64>) -> Result<Self, JetError> {
        if seed.ncols() > MAX_DUAL_DIRS {
            return Err(JetError::TooManyDirections(seed.ncols()));
        }
        assert_eq!(value.len(), seed.nrows(), "seed rows must match value length");
        Ok(DualVector { value, seed })
    }

    /// Seeds every coordinate with its unit direction.
    pub fn identity(value: &[f64]) -> Result<Self, JetError> {
        let n = value.len();
        DualVector::new(DVector::from_column_slice(value), DMatrix::identity(n, n))
    }

    pub fn to_duals(&self) -> Vec<Dual> {
        (0..self.value.len())
            .map(|i| {
                let row: Vec<f64> = self.seed.row(i).iter().copied().collect();
                Dual::with_tangent(self.value[i], &row).expect("width checked at construction")
            })
            .collect()
    }

    /// Collects propagated duals; `seed` becomes the pushed-forward tangents.
    pub fn from_duals(duals: &[Dual], dirs: usize) -> Self {
        let value = DVector::from_iterator(duals.len(), duals.iter().map(|d| d.value));
        let seed = DMatrix::from_fn(duals.len(), dirs, |i, j| duals[i].partial(j));
        DualVector { value, seed }
    }
}

/// Jacobian of `map` at `x` by one dual pass with an identity seed.
pub fn jacobian<F, E>(map: F, x: &[f64]) -> Result<DMatrix<f64>, E>
where
    F: FnOnce(&[Dual]) -> Result<Vec<Dual>, E>,
    E: From<JetError>,
{
    let seeded = DualVector::identity(x)?.to_duals();
    let out = map(&seeded)?;
    Ok(DualVector::from_duals(&out, x.len()).seed)
}
