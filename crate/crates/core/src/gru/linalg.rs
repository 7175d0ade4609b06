//! Minimal dense linear algebra for the recurrent network. Matrices are
//! row-major `[rows x cols]`; everything is f64 and allocation-free on the
//! hot paths.

/// out = W x  (W: rows x cols, x: cols, out: rows)
pub(crate) fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for c in 0..cols {
            acc += row[c] * x[c];
        }
        out[r] = acc;
    }
}

/// dx += W^T dy  (W: rows x cols, dy: rows, dx: cols)
pub(crate) fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, dy: &[f64], dx: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(dy.len(), rows);
    debug_assert_eq!(dx.len(), cols);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let g = dy[r];
        for c in 0..cols {
            dx[c] += row[c] * g;
        }
    }
}

/// dW += dy (x) x  (outer product, dW: rows x cols)
pub(crate) fn outer_acc(dw: &mut [f64], rows: usize, cols: usize, dy: &[f64], x: &[f64]) {
    debug_assert_eq!(dw.len(), rows * cols);
    debug_assert_eq!(dy.len(), rows);
    debug_assert_eq!(x.len(), cols);
    for r in 0..rows {
        let row = &mut dw[r * cols..(r + 1) * cols];
        let g = dy[r];
        for c in 0..cols {
            row[c] += g * x[c];
        }
    }
}

pub(crate) fn add_assign(a: &mut [f64], b: &[f64]) {
    debug_assert_eq!(a.len(), b.len());
    for i in 0..a.len() {
        a[i] += b[i];
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
