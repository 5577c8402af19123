//! Dense kernels on channel-major `[channels][length]` buffers.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of network parameters and activations.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + 'static
{
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("finite")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub fn axpy<S: Scalar>(y: &mut [S], a: S, x: &[S]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    const LANES: usize = 16;
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [S::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..LANES {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = acc.iter().fold(S::zero(), |s, &v| s + v);
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

#[inline]
pub fn sum<S: Scalar>(a: &[S]) -> S {
    const LANES: usize = 16;
    let mut acc = [S::zero(); LANES];
    let c = a.chunks_exact(LANES);
    let r = c.remainder();
    for x in c {
        for k in 0..LANES {
            acc[k] += x[k];
        }
    }
    acc.iter().fold(S::zero(), |s, &v| s + v) + r.iter().fold(S::zero(), |s, &v| s + v)
}

/// Index range `[t0, t1)` of outputs that read input `t + shift` in bounds.
#[inline]
fn valid(len: usize, shift: isize) -> Option<(usize, usize)> {
    let (t0, t1) = if shift >= 0 {
        (0, len as isize - shift)
    } else {
        (-shift, len as isize)
    };
    (t1 > t0).then_some((t0 as usize, t1 as usize))
}

/// Stride-1 "same" convolution (cross-correlation), weights `[cout][cin][k]`.
pub fn conv1d_forward<S: Scalar>(
    x: &[S],
    cin: usize,
    len: usize,
    w: &[S],
    b: &[S],
    cout: usize,
    k: usize,
) -> Vec<S> {
    debug_assert_eq!(x.len(), cin * len);
    let pad = (k / 2) as isize;
    let mut y = vec![S::zero(); cout * len];
    for (o, yo) in y.chunks_exact_mut(len).enumerate() {
        yo.fill(b[o]);
        for i in 0..cin {
            let xi = &x[i * len..(i + 1) * len];
            let wrow = &w[(o * cin + i) * k..(o * cin + i + 1) * k];
            for (j, &wv) in wrow.iter().enumerate() {
                let shift = j as isize - pad;
                if let Some((t0, t1)) = valid(len, shift) {
                    let s0 = (t0 as isize + shift) as usize;
                    axpy(&mut yo[t0..t1], wv, &xi[s0..s0 + (t1 - t0)]);
                }
            }
        }
    }
    y
}

/// Accumulates weight/bias gradients and, when `dx` is given, the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward<S: Scalar>(
    x: &[S],
    cin: usize,
    len: usize,
    w: &[S],
    cout: usize,
    k: usize,
    dy: &[S],
    mut dx: Option<&mut [S]>,
    dw: &mut [S],
    db: &mut [S],
) {
    let pad = (k / 2) as isize;
    for o in 0..cout {
        let dyo = &dy[o * len..(o + 1) * len];
        db[o] += sum(dyo);
        for i in 0..cin {
            let xi = &x[i * len..(i + 1) * len];
            let base = (o * cin + i) * k;
            for j in 0..k {
                let shift = j as isize - pad;
                if let Some((t0, t1)) = valid(len, shift) {
                    let s0 = (t0 as isize + shift) as usize;
                    let n = t1 - t0;
                    dw[base + j] += dot(&dyo[t0..t1], &xi[s0..s0 + n]);
                    if let Some(dx) = dx.as_deref_mut() {
                        let dxi = &mut dx[i * len..(i + 1) * len];
                        axpy(&mut dxi[s0..s0 + n], w[base + j], &dyo[t0..t1]);
                    }
                }
            }
        }
    }
}

/// `y = W x + b`, weights `[dout][din]`.
pub fn linear_forward<S: Scalar>(x: &[S], w: &[S], b: &[S], dout: usize) -> Vec<S> {
    let din = x.len();
    (0..dout)
        .map(|o| b[o] + dot(&w[o * din..(o + 1) * din], x))
        .collect()
}

pub fn linear_backward<S: Scalar>(
    x: &[S],
    w: &[S],
    dy: &[S],
    dx: Option<&mut [S]>,
    dw: &mut [S],
    db: &mut [S],
) {
    let din = x.len();
    for (o, &g) in dy.iter().enumerate() {
        db[o] += g;
        axpy(&mut dw[o * din..(o + 1) * din], g, x);
    }
    if let Some(dx) = dx {
        for (o, &g) in dy.iter().enumerate() {
            axpy(dx, g, &w[o * din..(o + 1) * din]);
        }
    }
}

#[inline]
fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

pub fn silu<S: Scalar>(x: &[S]) -> Vec<S> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

/// `dy * silu'(x)`.
pub fn silu_backward<S: Scalar>(x: &[S], dy: &[S]) -> Vec<S> {
    x.iter()
        .zip(dy)
        .map(|(&v, &g)| {
            let s = sigmoid(v);
            g * s * (S::one() + v * (S::one() - s))
        })
        .collect()
}
