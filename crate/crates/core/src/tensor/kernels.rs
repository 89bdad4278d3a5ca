//! Slice-level numeric kernels shared by the tape and the eager inference path.
//!
//! Both paths call exactly these functions, so a tape forward and an eager
//! forward over the same inputs agree bit for bit.

use super::Real;

/// Variance floor inside layer normalization.
pub const LN_EPS: f64 = 1e-5;

/// Dot product with eight independent accumulators (fixed summation order).
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn add_assign<T: Real>(y: &mut [T], x: &[T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += xi;
    }
}

/// `W[m×k] · x[k]`
pub fn matvec<T: Real>(w: &[T], m: usize, k: usize, x: &[T]) -> Vec<T> {
    debug_assert_eq!(w.len(), m * k);
    debug_assert_eq!(x.len(), k);
    w.chunks_exact(k).map(|row| dot(row, x)).collect()
}

/// `A[m×k] · B[k×n]`
pub fn matmul<T: Real>(a: &[T], m: usize, k: usize, b: &[T], n: usize) -> Vec<T> {
    if n == 1 {
        return matvec(a, m, k, b);
    }
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip != T::zero() {
                axpy(aip, &b[p * n..(p + 1) * n], orow);
            }
        }
    }
    out
}

/// Backward of `C = A·B`: accumulates `dA += dC·Bᵀ` and `dB += Aᵀ·dC`.
pub fn matmul_backward<T: Real>(
    a: &[T],
    b: &[T],
    dc: &[T],
    m: usize,
    k: usize,
    n: usize,
    da: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    if let Some(da) = da {
        for i in 0..m {
            let dci = &dc[i * n..(i + 1) * n];
            let dai = &mut da[i * k..(i + 1) * k];
            if n == 1 {
                axpy(dci[0], b, dai);
            } else {
                for (p, d) in dai.iter_mut().enumerate() {
                    *d += dot(dci, &b[p * n..(p + 1) * n]);
                }
            }
        }
    }
    if let Some(db) = db {
        for i in 0..m {
            let dci = &dc[i * n..(i + 1) * n];
            let ai = &a[i * k..(i + 1) * k];
            if n == 1 {
                axpy(dci[0], ai, db);
            } else {
                for (p, &aip) in ai.iter().enumerate() {
                    axpy(aip, dci, &mut db[p * n..(p + 1) * n]);
                }
            }
        }
    }
}

/// Normalization statistics saved for the backward pass.
#[derive(Clone, Debug)]
pub struct NormStats<T> {
    pub xhat: Vec<T>,
    pub inv_std: T,
}

/// `gain ⊙ (x − mean) / sqrt(var + ε) + bias` with the biased variance.
pub fn layer_norm<T: Real>(x: &[T], gain: &[T], bias: Option<&[T]>) -> (Vec<T>, NormStats<T>) {
    let d = T::of(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / d;
    let var = x
        .iter()
        .map(|&v| {
            let c = v - mean;
            c * c
        })
        .sum::<T>()
        / d;
    let inv_std = T::one() / (var + T::of(LN_EPS)).sqrt();
    let xhat: Vec<T> = x.iter().map(|&v| (v - mean) * inv_std).collect();
    let y = match bias {
        Some(b) => xhat.iter().zip(gain).zip(b).map(|((&h, &g), &b)| g * h + b).collect(),
        None => xhat.iter().zip(gain).map(|(&h, &g)| g * h).collect(),
    };
    (y, NormStats { xhat, inv_std })
}

/// Backward of [`layer_norm`]; accumulates into whichever gradients are requested.
pub fn layer_norm_backward<T: Real>(
    dy: &[T],
    gain: &[T],
    stats: &NormStats<T>,
    dx: Option<&mut [T]>,
    dgain: Option<&mut [T]>,
    dbias: Option<&mut [T]>,
) {
    let xhat = &stats.xhat;
    if let Some(dg) = dgain {
        for ((g, &d), &h) in dg.iter_mut().zip(dy).zip(xhat) {
            *g += d * h;
        }
    }
    if let Some(db) = dbias {
        add_assign(db, dy);
    }
    if let Some(dx) = dx {
        let n = T::of(dy.len() as f64);
        let dxhat: Vec<T> = dy.iter().zip(gain).map(|(&d, &g)| d * g).collect();
        let sum_d: T = dxhat.iter().copied().sum();
        let sum_dh: T = dxhat.iter().zip(xhat).map(|(&d, &h)| d * h).sum();
        let scale = stats.inv_std / n;
        for ((o, &d), &h) in dx.iter_mut().zip(&dxhat).zip(xhat) {
            *o += scale * (n * d - sum_d - h * sum_dh);
        }
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    // Split on sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Max-subtracted softmax.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut p: Vec<T> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: T = p.iter().copied().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// `−log softmax(logits)[target]` in nats, plus the softmax probabilities.
pub fn softmax_xent<T: Real>(logits: &[T], target: usize) -> (T, Vec<T>) {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut p: Vec<T> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: T = p.iter().copied().sum();
    let loss = s.ln() - (logits[target] - m);
    p.iter_mut().for_each(|v| *v /= s);
    (loss, p)
}
