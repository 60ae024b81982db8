//! Convolution kernels shared by the tape ops: padded 2D convolution over
//! n×n×c table tensors and the character-window convolution with max pooling.

/// Padded 2D convolution forward pass.
///
/// `x` is n×n×u row-major, `w` holds `v` filters of shape t×t×u, `b` has
/// length v, and `out` is n×n×v. Zero padding of width (t−1)/2 keeps the two
/// position dimensions unchanged.
pub fn conv2d_forward(n: usize, u: usize, v: usize, t: usize, x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    let pad = (t - 1) / 2;
    let filter_len = t * t * u;
    for i in 0..n {
        for j in 0..n {
            let out_cell = (i * n + j) * v;
            for k in 0..v {
                let mut acc = b[k];
                let wk = &w[k * filter_len..(k + 1) * filter_len];
                for di in 0..t {
                    let ai = i + di;
                    if ai < pad || ai - pad >= n {
                        continue;
                    }
                    let ai = ai - pad;
                    for dj in 0..t {
                        let aj = j + dj;
                        if aj < pad || aj - pad >= n {
                            continue;
                        }
                        let aj = aj - pad;
                        let xs = &x[(ai * n + aj) * u..(ai * n + aj) * u + u];
                        let ws = &wk[(di * t + dj) * u..(di * t + dj) * u + u];
                        for c in 0..u {
                            acc += xs[c] * ws[c];
                        }
                    }
                }
                out[out_cell + k] = acc;
            }
        }
    }
}

/// Backward pass mirroring `conv2d_forward`. Accumulates into whichever
/// gradient buffers are supplied.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    n: usize,
    u: usize,
    v: usize,
    t: usize,
    x: &[f64],
    w: &[f64],
    g: &[f64],
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    mut db: Option<&mut [f64]>,
) {
    let pad = (t - 1) / 2;
    let filter_len = t * t * u;
    for i in 0..n {
        for j in 0..n {
            let out_cell = (i * n + j) * v;
            for k in 0..v {
                let gk = g[out_cell + k];
                if gk == 0.0 {
                    continue;
                }
                if let Some(db) = db.as_deref_mut() {
                    db[k] += gk;
                }
                for di in 0..t {
                    let ai = i + di;
                    if ai < pad || ai - pad >= n {
                        continue;
                    }
                    let ai = ai - pad;
                    for dj in 0..t {
                        let aj = j + dj;
                        if aj < pad || aj - pad >= n {
                            continue;
                        }
                        let aj = aj - pad;
                        let x_off = (ai * n + aj) * u;
                        let w_off = k * filter_len + (di * t + dj) * u;
                        if let Some(dw) = dw.as_deref_mut() {
                            for c in 0..u {
                                dw[w_off + c] += gk * x[x_off + c];
                            }
                        }
                        if let Some(dx) = dx.as_deref_mut() {
                            for c in 0..u {
                                dx[x_off + c] += gk * w[w_off + c];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Character convolution forward: valid windows of `t` consecutive rows of
/// the L×pi character matrix, one response per (filter, window), max-pooled
/// over windows. Returns the argmax window per filter for the backward pass.
pub fn charconv_forward(
    rows: usize,
    pi: usize,
    maps: usize,
    t: usize,
    x: &[f64],
    w: &[f64],
    b: &[f64],
    out: &mut [f64],
    argmax: &mut [usize],
) {
    let wlen = t * pi;
    let windows = rows - t + 1;
    for f in 0..maps {
        let wf = &w[f * wlen..(f + 1) * wlen];
        let mut best = f64::NEG_INFINITY;
        let mut best_w = 0;
        for win in 0..windows {
            let xs = &x[win * pi..win * pi + wlen];
            let mut acc = b[f];
            for c in 0..wlen {
                acc += xs[c] * wf[c];
            }
            if acc > best {
                best = acc;
                best_w = win;
            }
        }
        out[f] = best;
        argmax[f] = best_w;
    }
}

#[allow(clippy::too_many_arguments)]
pub fn charconv_backward(
    pi: usize,
    maps: usize,
    t: usize,
    x: &[f64],
    w: &[f64],
    g: &[f64],
    argmax: &[usize],
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    mut db: Option<&mut [f64]>,
) {
    let wlen = t * pi;
    for f in 0..maps {
        let gf = g[f];
        if gf == 0.0 {
            continue;
        }
        let win = argmax[f];
        if let Some(db) = db.as_deref_mut() {
            db[f] += gf;
        }
        if let Some(dw) = dw.as_deref_mut() {
            let xs = &x[win * pi..win * pi + wlen];
            for c in 0..wlen {
                dw[f * wlen + c] += gf * xs[c];
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            let wf = &w[f * wlen..(f + 1) * wlen];
            for c in 0..wlen {
                dx[win * pi + c] += gf * wf[c];
            }
        }
    }
}
