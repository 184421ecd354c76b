//! The two arithmetic back ends the layer equations run on.
//!
//! [`EvalOps`] evaluates with exact signs and hard thresholding on plain
//! vectors, performing the same floating-point operations in the same order
//! as the classic solvers. [`TapeOps`] records onto an autodiff tape with the
//! smooth sign and the straight-through top-k mask.

use crate::autodiff::{Tape, Var};
use crate::error::{ensure_len, Error, Result};
use crate::numerics::{self, Matrix, Vector};
use crate::solvers;

pub(crate) trait LayerOps {
    type M;
    type V: Clone;
    type S: Clone;

    fn matvec(&mut self, a: &Self::M, x: &Self::V) -> Result<Self::V>;
    fn matvec_t(&mut self, a: &Self::M, y: &Self::V) -> Result<Self::V>;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn neg(&mut self, a: &Self::V) -> Self::V;
    fn relu(&mut self, a: &Self::V) -> Self::V;
    fn abs(&mut self, a: &Self::V) -> Self::V;
    fn sign(&mut self, a: &Self::V) -> Result<Self::V>;
    fn scale(&mut self, s: &Self::S, v: &Self::V) -> Result<Self::V>;
    fn scalar_mul(&mut self, a: &Self::S, b: &Self::S) -> Result<Self::S>;
    fn add_const(&mut self, c: f64, s: &Self::S) -> Self::S;
    fn dot(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::S>;
    fn normalize(&mut self, v: &Self::V) -> Result<Self::V>;
    fn hard_threshold(&mut self, v: &Self::V, k: usize) -> Result<Self::V>;
}

fn zip(a: &[f64], b: &[f64], context: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Vector> {
    ensure_len(context, a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
}

pub(crate) struct EvalOps;

impl LayerOps for EvalOps {
    type M = Matrix;
    type V = Vector;
    type S = f64;

    fn matvec(&mut self, a: &Matrix, x: &Vector) -> Result<Vector> {
        numerics::matvec(a, x)
    }

    fn matvec_t(&mut self, a: &Matrix, y: &Vector) -> Result<Vector> {
        numerics::matvec_t(a, y)
    }

    fn add(&mut self, a: &Vector, b: &Vector) -> Result<Vector> {
        zip(a, b, "add", |x, y| x + y)
    }

    fn sub(&mut self, a: &Vector, b: &Vector) -> Result<Vector> {
        zip(a, b, "sub", |x, y| x - y)
    }

    fn mul(&mut self, a: &Vector, b: &Vector) -> Result<Vector> {
        zip(a, b, "mul", |x, y| x * y)
    }

    fn neg(&mut self, a: &Vector) -> Vector {
        a.iter().map(|x| -x).collect()
    }

    fn relu(&mut self, a: &Vector) -> Vector {
        numerics::relu(a)
    }

    fn abs(&mut self, a: &Vector) -> Vector {
        a.iter().map(|x| x.abs()).collect()
    }

    fn sign(&mut self, a: &Vector) -> Result<Vector> {
        Ok(numerics::exact_sign(a))
    }

    fn scale(&mut self, s: &f64, v: &Vector) -> Result<Vector> {
        Ok(v.iter().map(|x| s * x).collect())
    }

    fn scalar_mul(&mut self, a: &f64, b: &f64) -> Result<f64> {
        Ok(a * b)
    }

    fn add_const(&mut self, c: f64, s: &f64) -> f64 {
        c + s
    }

    fn dot(&mut self, a: &Vector, b: &Vector) -> Result<f64> {
        ensure_len("dot", a.len(), b.len())?;
        Ok(numerics::dot(a, b))
    }

    fn normalize(&mut self, v: &Vector) -> Result<Vector> {
        numerics::normalized(v).ok_or(Error::DegenerateIterate {
            iteration: 0,
            trajectory: Vec::new(),
        })
    }

    fn hard_threshold(&mut self, v: &Vector, k: usize) -> Result<Vector> {
        solvers::hard_threshold(v, k)
    }
}

pub(crate) struct TapeOps<'a> {
    pub tape: &'a mut Tape,
    pub smoothness: f64,
}

impl LayerOps for TapeOps<'_> {
    type M = Var;
    type V = Var;
    type S = Var;

    fn matvec(&mut self, a: &Var, x: &Var) -> Result<Var> {
        self.tape.mat_vec(*a, *x)
    }

    fn matvec_t(&mut self, a: &Var, y: &Var) -> Result<Var> {
        self.tape.mat_vec_t(*a, *y)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.add(*a, *b)
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.sub(*a, *b)
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.elem_mul(*a, *b)
    }

    fn neg(&mut self, a: &Var) -> Var {
        self.tape.neg(*a)
    }

    fn relu(&mut self, a: &Var) -> Var {
        self.tape.relu(*a)
    }

    fn abs(&mut self, a: &Var) -> Var {
        self.tape.abs(*a)
    }

    fn sign(&mut self, a: &Var) -> Result<Var> {
        self.tape.tanh_scaled(*a, self.smoothness)
    }

    fn scale(&mut self, s: &Var, v: &Var) -> Result<Var> {
        self.tape.scale(*s, *v)
    }

    fn scalar_mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.elem_mul(*a, *b)
    }

    fn add_const(&mut self, c: f64, s: &Var) -> Var {
        self.tape.add_const(c, *s)
    }

    fn dot(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.dot(*a, *b)
    }

    fn normalize(&mut self, v: &Var) -> Result<Var> {
        self.tape.normalize_l2(*v)
    }

    fn hard_threshold(&mut self, v: &Var, k: usize) -> Result<Var> {
        self.tape.topk_mask(*v, k)
    }
}
