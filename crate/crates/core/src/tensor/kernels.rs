//! Raw loops behind the tape operations. Everything here works on flat
//! row-major slices; shape checking happens in the callers.

/// `c = op(a) · op(b) + beta · c` where `op(a)` is `m×k` and `op(b)` is `k×n`.
///
/// With `trans_a` the slice `a` holds a `k×m` matrix, likewise `trans_b`
/// means `b` holds `n×k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, m) } else { (k, 1) };
    let (rsb, csb) = if trans_b { (1, k) } else { (n, 1) };
    // SAFETY: the slices hold exactly the number of elements addressed by
    // the given dimensions and strides (checked above in debug builds).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Per-channel graph convolution over a `T×V×C` signal:
/// `out[t,v,c] = Σ_u (adj[v,u] + refine[c,v,u]) · x[t,u,c]`.
pub(crate) fn graph_conv_forward(
    x: &[f64],
    adj: &[f64],
    refine: &[f64],
    t: usize,
    v: usize,
    c: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; t * v * c];
    let mut a_c = vec![0.0; v * v];
    for ch in 0..c {
        let r = &refine[ch * v * v..(ch + 1) * v * v];
        for (dst, (a, b)) in a_c.iter_mut().zip(adj.iter().zip(r)) {
            *dst = a + b;
        }
        // out_c (T×V) = x_c (T×V) · a_cᵀ, both read in place with stride c.
        let xc = Strided { ptr: x[ch..].as_ptr(), rs: v * c, cs: c };
        let at = Strided { ptr: a_c.as_ptr(), rs: 1, cs: v };
        // SAFETY: every addressed element lies inside `x`, `a_c` and `out`.
        unsafe { strided_gemm(t, v, v, xc, at, out[ch..].as_mut_ptr(), v * c, c) };
    }
    out
}

/// Returns `(grad_x, grad_refine)` for [`graph_conv_forward`].
pub(crate) fn graph_conv_backward(
    x: &[f64],
    adj: &[f64],
    refine: &[f64],
    grad: &[f64],
    t: usize,
    v: usize,
    c: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; t * v * c];
    let mut gr = vec![0.0; c * v * v];
    let mut a_c = vec![0.0; v * v];
    for ch in 0..c {
        let r = &refine[ch * v * v..(ch + 1) * v * v];
        for (dst, (a, b)) in a_c.iter_mut().zip(adj.iter().zip(r)) {
            *dst = a + b;
        }
        let gc = Strided { ptr: grad[ch..].as_ptr(), rs: v * c, cs: c };
        let a = Strided { ptr: a_c.as_ptr(), rs: v, cs: 1 };
        let gct = Strided { ptr: grad[ch..].as_ptr(), rs: c, cs: v * c };
        let xc = Strided { ptr: x[ch..].as_ptr(), rs: v * c, cs: c };
        // SAFETY: as in the forward pass; `gr` rows for channel `ch` are
        // contiguous `V×V`.
        unsafe {
            // gx_c = g_c · a_c
            strided_gemm(t, v, v, gc, a, gx[ch..].as_mut_ptr(), v * c, c);
            // gr_c = g_cᵀ · x_c
            strided_gemm(v, t, v, gct, xc, gr[ch * v * v..].as_mut_ptr(), v, 1);
        }
    }
    (gx, gr)
}

#[derive(Clone, Copy)]
struct Strided {
    ptr: *const f64,
    rs: usize,
    cs: usize,
}

/// `c = a · b` for `m×k` and `k×n` operands given by pointer and strides.
///
/// # Safety
/// Every element addressed through the strides must be valid, and `c` must
/// not alias `a` or `b`.
#[allow(clippy::too_many_arguments)]
unsafe fn strided_gemm(m: usize, k: usize, n: usize, a: Strided, b: Strided, c: *mut f64, rsc: usize, csc: usize) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    matrixmultiply::dgemm(
        m,
        k,
        n,
        1.0,
        a.ptr,
        a.rs as isize,
        a.cs as isize,
        b.ptr,
        b.rs as isize,
        b.cs as isize,
        0.0,
        c,
        rsc as isize,
        csc as isize,
    );
}

/// Temporal convolution of a `T×V×Cin` signal with kernel `K×Cin×Cout`,
/// centred taps, edge-replicated borders and the given stride. Output length
/// is `ceil(T / stride)`.
pub(crate) fn temporal_conv_forward(
    x: &[f64],
    w: &[f64],
    t: usize,
    v: usize,
    cin: usize,
    k: usize,
    cout: usize,
    stride: usize,
) -> Vec<f64> {
    let t_out = t.div_ceil(stride);
    let half = (k / 2) as isize;
    let mut out = vec![0.0; t_out * v * cout];
    for to in 0..t_out {
        let centre = (to * stride) as isize;
        let dst = &mut out[to * v * cout..(to + 1) * v * cout];
        for j in 0..k {
            let src_t = (centre + j as isize - half).clamp(0, t as isize - 1) as usize;
            let src = &x[src_t * v * cin..(src_t + 1) * v * cin];
            let wj = &w[j * cin * cout..(j + 1) * cin * cout];
            // dst (v×cout) += src (v×cin) · wj (cin×cout)
            gemm(v, cin, cout, src, false, wj, false, dst, 1.0);
        }
    }
    out
}

/// Returns `(grad_x, grad_w)` for [`temporal_conv_forward`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn temporal_conv_backward(
    x: &[f64],
    w: &[f64],
    grad: &[f64],
    t: usize,
    v: usize,
    cin: usize,
    k: usize,
    cout: usize,
    stride: usize,
) -> (Vec<f64>, Vec<f64>) {
    let t_out = t.div_ceil(stride);
    let half = (k / 2) as isize;
    let mut gx = vec![0.0; t * v * cin];
    let mut gw = vec![0.0; k * cin * cout];
    let mut tmp = vec![0.0; v * cin];
    for to in 0..t_out {
        let centre = (to * stride) as isize;
        let g = &grad[to * v * cout..(to + 1) * v * cout];
        for j in 0..k {
            let src_t = (centre + j as isize - half).clamp(0, t as isize - 1) as usize;
            let src = &x[src_t * v * cin..(src_t + 1) * v * cin];
            let wj = &w[j * cin * cout..(j + 1) * cin * cout];
            // gw_j (cin×cout) += srcᵀ (cin×v) · g (v×cout)
            gemm(
                cin,
                v,
                cout,
                src,
                true,
                g,
                false,
                &mut gw[j * cin * cout..(j + 1) * cin * cout],
                1.0,
            );
            // gx_src (v×cin) += g (v×cout) · wjᵀ (cout×cin)
            gemm(v, cout, cin, g, false, wj, true, &mut tmp, 0.0);
            let dst = &mut gx[src_t * v * cin..(src_t + 1) * v * cin];
            for (d, s) in dst.iter_mut().zip(&tmp) {
                *d += s;
            }
        }
    }
    (gx, gw)
}
