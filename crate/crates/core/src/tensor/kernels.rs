// Raw row-major kernels. Each output row is produced by one sequential loop,
// so results do not depend on how rows are spread across threads.

use crate::par::{self, Mode};

const PAR_FLOPS: usize = 1 << 16;

fn mode_for(flops: usize) -> Mode {
    if flops >= PAR_FLOPS {
        Mode::Auto
    } else {
        Mode::Sequential
    }
}

/// `c[m,n] = a[m,k] * b[k,n]`
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    if n == 0 {
        return c;
    }
    par::for_each_chunk_mut(&mut c, n, mode_for(m * k * n), |i, row| {
        let ar = &a[i * k..(i + 1) * k];
        for (p, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let br = &b[p * n..(p + 1) * n];
            for (cv, &bv) in row.iter_mut().zip(br) {
                *cv += av * bv;
            }
        }
    });
    c
}

/// `c[m,n] = a[m,k] * b[n,k]^T`
pub(crate) fn matmul_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    if n == 0 {
        return c;
    }
    par::for_each_chunk_mut(&mut c, n, mode_for(m * k * n), |i, row| {
        let ar = &a[i * k..(i + 1) * k];
        for (j, cv) in row.iter_mut().enumerate() {
            let br = &b[j * k..(j + 1) * k];
            *cv = ar.iter().zip(br).map(|(x, y)| x * y).sum();
        }
    });
    c
}

/// `c[k,n] = a[m,k]^T * b[m,n]`
pub(crate) fn matmul_at(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    if n == 0 {
        return c;
    }
    par::for_each_chunk_mut(&mut c, n, mode_for(m * k * n), |p, row| {
        for i in 0..m {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let br = &b[i * n..(i + 1) * n];
            for (cv, &bv) in row.iter_mut().zip(br) {
                *cv += av * bv;
            }
        }
    });
    c
}

/// Row strides of a row-major shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Copies `data` laid out as `shape` into the axis order `axes`.
pub(crate) fn permute(data: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    for _ in 0..data.len() {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.push(data[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}
