//! Dense matrix kernels on row-major slices.

/// `a[p×q] · b[q×r]`
pub(crate) fn mm(a: &[f64], b: &[f64], p: usize, q: usize, r: usize, out: &mut [f64]) {
    for i in 0..p {
        let row = &mut out[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * r..(k + 1) * r];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

/// `a[p×q] · b[r×q]ᵀ`
pub(crate) fn mm_nt(a: &[f64], b: &[f64], p: usize, q: usize, r: usize, out: &mut [f64]) {
    for i in 0..p {
        let arow = &a[i * q..(i + 1) * q];
        for j in 0..r {
            let brow = &b[j * q..(j + 1) * q];
            out[i * r + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `a[p×q]ᵀ · b[p×r]`
pub(crate) fn mm_tn(a: &[f64], b: &[f64], p: usize, q: usize, r: usize, out: &mut [f64]) {
    for i in 0..p {
        let brow = &b[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            let orow = &mut out[k * r..(k + 1) * r];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
}
