//! Complex tensors as pairs of real tensors.

use crate::tape::Var;
use crate::{Error, Result};

/// A complex tensor stored as real and imaginary parts of equal shape.
#[derive(Clone, Copy, Debug)]
pub struct CVar<'t> {
    pub re: Var<'t>,
    pub im: Var<'t>,
}

impl<'t> CVar<'t> {
    pub fn new(re: Var<'t>, im: Var<'t>) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::InvalidInput(format!(
                "real part {:?} and imaginary part {:?} differ in shape",
                re.shape(),
                im.shape()
            )));
        }
        Ok(Self { re, im })
    }

    pub fn shape(&self) -> Vec<usize> {
        self.re.shape()
    }

    pub fn add(&self, other: &CVar<'t>) -> Result<Self> {
        Ok(Self {
            re: self.re.add(&other.re)?,
            im: self.im.add(&other.im)?,
        })
    }

    pub fn sub(&self, other: &CVar<'t>) -> Result<Self> {
        Ok(Self {
            re: self.re.sub(&other.re)?,
            im: self.im.sub(&other.im)?,
        })
    }

    /// Element-wise product (leading-dimension broadcasting as for `Var::mul`).
    pub fn mul(&self, other: &CVar<'t>) -> Result<Self> {
        let re = self.re.mul(&other.re)?.sub(&self.im.mul(&other.im)?)?;
        let im = self.re.mul(&other.im)?.add(&self.im.mul(&other.re)?)?;
        Ok(Self { re, im })
    }

    /// Element-wise `conj(self) * other`.
    pub fn conj_mul(&self, other: &CVar<'t>) -> Result<Self> {
        let re = self.re.mul(&other.re)?.add(&self.im.mul(&other.im)?)?;
        let im = self.re.mul(&other.im)?.sub(&self.im.mul(&other.re)?)?;
        Ok(Self { re, im })
    }

    /// Multiplies by a real tensor.
    pub fn mul_real(&self, r: &Var<'t>) -> Result<Self> {
        Ok(Self {
            re: self.re.mul(r)?,
            im: self.im.mul(r)?,
        })
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            re: self.re.scale(c),
            im: self.im.scale(c),
        }
    }

    pub fn conj(&self) -> Self {
        Self {
            re: self.re,
            im: self.im.neg(),
        }
    }

    /// `|z|²` element-wise.
    pub fn abs_sq(&self) -> Result<Var<'t>> {
        self.re.square().add(&self.im.square())
    }

    /// Element-wise reciprocal `1 / z`.
    pub fn reciprocal(&self) -> Result<Self> {
        let inv = self.abs_sq()?.reciprocal();
        Ok(Self {
            re: self.re.mul(&inv)?,
            im: self.im.neg().mul(&inv)?,
        })
    }

    /// Batched complex matrix product (same shape rules as `Var::matmul`).
    pub fn matmul(&self, other: &CVar<'t>) -> Result<Self> {
        let re = self
            .re
            .matmul(&other.re)?
            .sub(&self.im.matmul(&other.im)?)?;
        let im = self
            .re
            .matmul(&other.im)?
            .add(&self.im.matmul(&other.re)?)?;
        Ok(Self { re, im })
    }

    /// Conjugate transpose of the last two dimensions.
    pub fn conj_transpose(&self) -> Result<Self> {
        Ok(Self {
            re: self.re.transpose()?,
            im: self.im.transpose()?.neg(),
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Ok(Self {
            re: self.re.reshape(shape)?,
            im: self.im.reshape(shape)?,
        })
    }

    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Self> {
        Ok(Self {
            re: self.re.slice(axis, start, end)?,
            im: self.im.slice(axis, start, end)?,
        })
    }

    pub fn transpose(&self) -> Result<Self> {
        Ok(Self {
            re: self.re.transpose()?,
            im: self.im.transpose()?,
        })
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Self> {
        Ok(Self {
            re: self.re.sum_axis(axis)?,
            im: self.im.sum_axis(axis)?,
        })
    }

    /// Batched solve `self · X = rhs` through the real embedding
    /// `[[Re, -Im], [Im, Re]]`.
    pub fn solve(&self, rhs: &CVar<'t>) -> Result<Self> {
        let shape = self.shape();
        let rank = shape.len();
        if rank < 2 {
            return Err(Error::InvalidInput(format!(
                "complex solve needs rank >= 2, got {shape:?}"
            )));
        }
        let n = shape[rank - 1];
        let top = Var::concat(&[self.re, self.im.neg()], rank - 1)?;
        let bottom = Var::concat(&[self.im, self.re], rank - 1)?;
        let embedded = Var::concat(&[top, bottom], rank - 2)?;
        let stacked = Var::concat(&[rhs.re, rhs.im], rank - 2)?;
        let x = embedded.solve(&stacked)?;
        Ok(Self {
            re: x.slice(rank - 2, 0, n)?,
            im: x.slice(rank - 2, n, 2 * n)?,
        })
    }
}
