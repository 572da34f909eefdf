//! 2-D convolution as a candle custom op.
//!
//! candle's own CPU convolution is im2col for the forward pass but a direct
//! loop for the transposed convolution used by its backward pass, which is
//! an order of magnitude slower than the GEMM it should be. This op keeps
//! all three products (output, input gradient, kernel gradient) on GEMM:
//!
//! * forward: `out_b = W · cols(x_b)`
//! * input gradient: `dx_b = col2im(Wᵀ · g_b)`
//! * kernel gradient: `dW = Σ_b g_b · cols(x_b)ᵀ`
//!
//! `cols` is the `(Cin·k·k) × (Ho·Wo)` patch matrix. 1×1 stride-1 unpadded
//! convolutions skip the patch copy entirely.
//!
//! Stride-1 convolutions avoid the patch matrix too. With the input padded
//! to `Hp × Wp` and the output computed on an `Ho × Wp` grid (the last
//! `k - 1` columns of every row are discarded), tap `(ky, kx)` reads the
//! padded planes at a constant offset `ky·Wp + kx`, so each of the `k²`
//! taps is one GEMM on a strided view of the same buffer.

use candle_core::{bail, CpuStorage, CustomOp2, Layout, Result, Shape, Tensor};
use gemm::Parallelism;
use num_traits::Float;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self { kernel, stride, padding }
    }

    pub fn out_len(&self, n: usize) -> usize {
        (n + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn is_shifted(&self) -> bool {
        self.stride == 1 && !self.is_pointwise()
    }
}

static PARALLEL: std::sync::atomic::AtomicBool = std::sync::atomic::AtomicBool::new(false);

/// Lets GEMM use the rayon pool. Off by default: results then no longer
/// depend on the thread count.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, std::sync::atomic::Ordering::Relaxed);
}

fn parallelism() -> Parallelism {
    if PARALLEL.load(std::sync::atomic::Ordering::Relaxed) {
        Parallelism::Rayon(0)
    } else {
        Parallelism::None
    }
}

trait Elem: Float + Send + Sync + 'static {}
impl Elem for f32 {}
impl Elem for f64 {}

/// Row-major views described by (row stride, column stride).
struct Mat<'a, T> {
    data: &'a [T],
    rs: isize,
    cs: isize,
}

/// `dst (m×n) (+)= lhs (m×k) · rhs (k×n)`; `dst` is row-major with row stride `dst_rs`.
#[allow(clippy::too_many_arguments)]
fn matmul<T: Elem>(m: usize, n: usize, k: usize, dst: &mut [T], dst_rs: isize, dst_cs: isize, accumulate: bool, lhs: Mat<'_, T>, rhs: Mat<'_, T>) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(lhs.data.len() >= (m - 1) * lhs.rs.max(0) as usize + 1);
    // SAFETY: every (i, j) addressed through the strides lies inside the
    // slices, which the callers size from the same (m, n, k).
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            dst.as_mut_ptr(),
            dst_cs,
            dst_rs,
            accumulate,
            lhs.data.as_ptr(),
            lhs.cs,
            lhs.rs,
            rhs.data.as_ptr(),
            rhs.cs,
            rhs.rs,
            T::one(),
            T::one(),
            false,
            false,
            false,
            parallelism(),
        );
    }
}

/// Fills `cols` (`cin·k·k` rows of `ho·wo`) from one `cin×h×w` image.
fn im2col<T: Elem>(x: &[T], cin: usize, h: usize, w: usize, g: ConvGeometry, ho: usize, wo: usize, cols: &mut [T]) {
    let k = g.kernel;
    let hw_out = ho * wo;
    for c in 0..cin {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * hw_out;
                for oy in 0..ho {
                    let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    if g.stride == 1 {
                        // ix = ox + kx - padding: one contiguous run plus zero borders
                        let shift = kx as isize - g.padding as isize;
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = ox as isize + shift;
                            *d = if ix >= 0 && ix < w as isize { src[ix as usize] } else { T::zero() };
                        }
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            *d = if ix >= 0 && ix < w as isize { src[ix as usize] } else { T::zero() };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds a patch matrix back onto a `cin×h×w` image.
fn col2im<T: Elem>(cols: &[T], cin: usize, h: usize, w: usize, g: ConvGeometry, ho: usize, wo: usize, x: &mut [T]) {
    let k = g.kernel;
    let hw_out = ho * wo;
    for c in 0..cin {
        let plane = &mut x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * hw_out;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * wo..row + (oy + 1) * wo];
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Dims {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    ho: usize,
    wo: usize,
}

impl Dims {
    fn patch(&self, g: ConvGeometry) -> usize {
        self.cin * g.kernel * g.kernel
    }
}

/// Padded-plane layout for the stride-1 path.
#[derive(Clone, Copy)]
struct Padded {
    wp: usize,
    /// Plane stride: `hp·wp` plus `k - 1` slack so shifted reads of one
    /// plane never reach the next.
    plane: usize,
    /// Columns of the extended output, `ho·wp`.
    ext: usize,
}

impl Padded {
    fn new(d: &Dims, g: ConvGeometry) -> Self {
        let (hp, wp) = (d.h + 2 * g.padding, d.w + 2 * g.padding);
        Self { wp, plane: hp * wp + g.kernel - 1, ext: d.ho * wp }
    }

    fn tap(&self, ky: usize, kx: usize) -> usize {
        ky * self.wp + kx
    }
}

/// Copies `c` planes of `h×w` into the padded layout (borders stay zero).
fn pad_into<T: Elem>(x: &[T], c: usize, h: usize, w: usize, p: usize, lay: Padded, dst: &mut [T]) {
    for ch in 0..c {
        for i in 0..h {
            let src = &x[(ch * h + i) * w..(ch * h + i + 1) * w];
            let start = ch * lay.plane + (i + p) * lay.wp + p;
            dst[start..start + w].copy_from_slice(src);
        }
    }
}

/// Spreads `(c, ho·wo)` rows onto the extended `(c, ho·wp)` grid; the
/// discarded columns are zero.
fn extend<T: Elem>(g: &[T], c: usize, ho: usize, wo: usize, wp: usize, dst: &mut [T]) {
    dst.fill(T::zero());
    for ch in 0..c {
        for i in 0..ho {
            let src = &g[(ch * ho + i) * wo..(ch * ho + i + 1) * wo];
            let start = (ch * ho + i) * wp;
            dst[start..start + wo].copy_from_slice(src);
        }
    }
}

fn forward_shifted<T: Elem>(x: &[T], kernel: &[T], d: Dims, g: ConvGeometry) -> Vec<T> {
    let k = g.kernel;
    let lay = Padded::new(&d, g);
    let (hw_in, hw_out) = (d.h * d.w, d.ho * d.wo);
    let mut out = vec![T::zero(); d.batch * d.cout * hw_out];
    let mut xp = vec![T::zero(); d.cin * lay.plane];
    let mut ext = vec![T::zero(); d.cout * lay.ext];
    let kstride = (d.cin * k * k) as isize;
    for b in 0..d.batch {
        pad_into(&x[b * d.cin * hw_in..(b + 1) * d.cin * hw_in], d.cin, d.h, d.w, g.padding, lay, &mut xp);
        for ky in 0..k {
            for kx in 0..k {
                let t = ky * k + kx;
                matmul(
                    d.cout,
                    lay.ext,
                    d.cin,
                    &mut ext,
                    lay.ext as isize,
                    1,
                    t > 0,
                    Mat { data: &kernel[t..], rs: kstride, cs: (k * k) as isize },
                    Mat { data: &xp[lay.tap(ky, kx)..], rs: lay.plane as isize, cs: 1 },
                );
            }
        }
        let ob = &mut out[b * d.cout * hw_out..(b + 1) * d.cout * hw_out];
        for row in 0..d.cout * d.ho {
            ob[row * d.wo..(row + 1) * d.wo].copy_from_slice(&ext[row * lay.wp..row * lay.wp + d.wo]);
        }
    }
    out
}

fn input_grad_shifted<T: Elem>(grad: &[T], kernel: &[T], d: Dims, g: ConvGeometry) -> Vec<T> {
    let k = g.kernel;
    let p = g.padding;
    let lay = Padded::new(&d, g);
    let (hw_in, hw_out) = (d.h * d.w, d.ho * d.wo);
    let mut dx = vec![T::zero(); d.batch * d.cin * hw_in];
    let mut dxp = vec![T::zero(); d.cin * lay.plane];
    let mut ext = vec![T::zero(); d.cout * lay.ext];
    for b in 0..d.batch {
        extend(&grad[b * d.cout * hw_out..(b + 1) * d.cout * hw_out], d.cout, d.ho, d.wo, lay.wp, &mut ext);
        dxp.fill(T::zero());
        for ky in 0..k {
            for kx in 0..k {
                let t = ky * k + kx;
                matmul(
                    d.cin,
                    lay.ext,
                    d.cout,
                    &mut dxp[lay.tap(ky, kx)..],
                    lay.plane as isize,
                    1,
                    true,
                    Mat { data: &kernel[t..], rs: (k * k) as isize, cs: (d.cin * k * k) as isize },
                    Mat { data: &ext, rs: lay.ext as isize, cs: 1 },
                );
            }
        }
        let dxb = &mut dx[b * d.cin * hw_in..(b + 1) * d.cin * hw_in];
        for c in 0..d.cin {
            for i in 0..d.h {
                let start = c * lay.plane + (i + p) * lay.wp + p;
                dxb[(c * d.h + i) * d.w..(c * d.h + i + 1) * d.w].copy_from_slice(&dxp[start..start + d.w]);
            }
        }
    }
    dx
}

fn kernel_grad_shifted<T: Elem>(x: &[T], grad: &[T], d: Dims, g: ConvGeometry) -> Vec<T> {
    let k = g.kernel;
    let lay = Padded::new(&d, g);
    let (hw_in, hw_out) = (d.h * d.w, d.ho * d.wo);
    let mut dw = vec![T::zero(); d.cout * d.cin * k * k];
    let mut xp = vec![T::zero(); d.cin * lay.plane];
    let mut ext = vec![T::zero(); d.cout * lay.ext];
    for b in 0..d.batch {
        pad_into(&x[b * d.cin * hw_in..(b + 1) * d.cin * hw_in], d.cin, d.h, d.w, g.padding, lay, &mut xp);
        extend(&grad[b * d.cout * hw_out..(b + 1) * d.cout * hw_out], d.cout, d.ho, d.wo, lay.wp, &mut ext);
        for ky in 0..k {
            for kx in 0..k {
                let t = ky * k + kx;
                matmul(
                    d.cout,
                    d.cin,
                    lay.ext,
                    &mut dw[t..],
                    (d.cin * k * k) as isize,
                    (k * k) as isize,
                    b > 0,
                    Mat { data: &ext, rs: lay.ext as isize, cs: 1 },
                    Mat { data: &xp[lay.tap(ky, kx)..], rs: 1, cs: lay.plane as isize },
                );
            }
        }
    }
    dw
}

fn forward<T: Elem>(x: &[T], kernel: &[T], d: Dims, g: ConvGeometry) -> Vec<T> {
    if g.is_shifted() {
        return forward_shifted(x, kernel, d, g);
    }
    let kk = d.patch(g);
    let (hw_in, hw_out) = (d.h * d.w, d.ho * d.wo);
    let mut out = vec![T::zero(); d.batch * d.cout * hw_out];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * hw_out] };
    for b in 0..d.batch {
        let xb = &x[b * d.cin * hw_in..(b + 1) * d.cin * hw_in];
        let rhs = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, d.cin, d.h, d.w, g, d.ho, d.wo, &mut cols);
            &cols
        };
        let dst = &mut out[b * d.cout * hw_out..(b + 1) * d.cout * hw_out];
        matmul(
            d.cout,
            hw_out,
            kk,
            dst,
            hw_out as isize,
            1,
            false,
            Mat { data: kernel, rs: kk as isize, cs: 1 },
            Mat { data: rhs, rs: hw_out as isize, cs: 1 },
        );
    }
    out
}

fn input_grad<T: Elem>(grad: &[T], kernel: &[T], d: Dims, g: ConvGeometry) -> Vec<T> {
    if g.is_shifted() {
        return input_grad_shifted(grad, kernel, d, g);
    }
    let kk = d.patch(g);
    let (hw_in, hw_out) = (d.h * d.w, d.ho * d.wo);
    let mut dx = vec![T::zero(); d.batch * d.cin * hw_in];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * hw_out] };
    for b in 0..d.batch {
        let gb = &grad[b * d.cout * hw_out..(b + 1) * d.cout * hw_out];
        let dxb = &mut dx[b * d.cin * hw_in..(b + 1) * d.cin * hw_in];
        let wt = Mat { data: kernel, rs: 1, cs: kk as isize };
        let gm = Mat { data: gb, rs: hw_out as isize, cs: 1 };
        if g.is_pointwise() {
            matmul(kk, hw_out, d.cout, dxb, hw_out as isize, 1, false, wt, gm);
        } else {
            matmul(kk, hw_out, d.cout, &mut cols, hw_out as isize, 1, false, wt, gm);
            col2im(&cols, d.cin, d.h, d.w, g, d.ho, d.wo, dxb);
        }
    }
    dx
}

fn kernel_grad<T: Elem>(x: &[T], grad: &[T], d: Dims, g: ConvGeometry) -> Vec<T> {
    if g.is_shifted() {
        return kernel_grad_shifted(x, grad, d, g);
    }
    let kk = d.patch(g);
    let (hw_in, hw_out) = (d.h * d.w, d.ho * d.wo);
    let mut dw = vec![T::zero(); d.cout * kk];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * hw_out] };
    for b in 0..d.batch {
        let xb = &x[b * d.cin * hw_in..(b + 1) * d.cin * hw_in];
        let gb = &grad[b * d.cout * hw_out..(b + 1) * d.cout * hw_out];
        let patches = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, d.cin, d.h, d.w, g, d.ho, d.wo, &mut cols);
            &cols
        };
        matmul(
            d.cout,
            kk,
            hw_out,
            &mut dw,
            kk as isize,
            1,
            b > 0,
            Mat { data: gb, rs: hw_out as isize, cs: 1 },
            Mat { data: patches, rs: 1, cs: hw_out as isize },
        );
    }
    dw
}

fn contiguous<'a, T>(data: &'a [T], layout: &Layout, what: &str) -> Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => bail!("conv2d: {what} must be contiguous"),
    }
}

/// Forward convolution `(B, Cin, H, W) ⊛ (Cout, Cin, k, k)`.
struct Conv2dOp {
    geom: ConvGeometry,
}

impl Conv2dOp {
    fn dims(&self, x: &Shape, k: &Shape) -> Result<Dims> {
        let (batch, cin, h, w) = x.dims4()?;
        let (cout, kcin, kh, kw) = k.dims4()?;
        if kcin != cin || kh != self.geom.kernel || kw != self.geom.kernel {
            bail!("conv2d: kernel {k:?} does not match input {x:?} / geometry {:?}", self.geom);
        }
        if h + 2 * self.geom.padding < self.geom.kernel || w + 2 * self.geom.padding < self.geom.kernel {
            bail!("conv2d: input {x:?} smaller than kernel");
        }
        Ok(Dims { batch, cin, h, w, cout, ho: self.geom.out_len(h), wo: self.geom.out_len(w) })
    }
}

impl CustomOp2 for Conv2dOp {
    fn name(&self) -> &'static str {
        "gemm-conv2d"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let d = self.dims(l1.shape(), l2.shape())?;
        let out = match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(k)) => {
                CpuStorage::F32(forward(contiguous(x, l1, "input")?, contiguous(k, l2, "kernel")?, d, self.geom))
            }
            (CpuStorage::F64(x), CpuStorage::F64(k)) => {
                CpuStorage::F64(forward(contiguous(x, l1, "input")?, contiguous(k, l2, "kernel")?, d, self.geom))
            }
            _ => bail!("conv2d: only f32/f64 inputs of matching dtype are supported"),
        };
        Ok((out, Shape::from((d.batch, d.cout, d.ho, d.wo))))
    }

    fn bwd(&self, x: &Tensor, kernel: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<(Option<Tensor>, Option<Tensor>)> {
        let grad = grad.contiguous()?;
        let d = self.dims(x.shape(), kernel.shape())?;
        let dx = grad.apply_op2_no_bwd(kernel, &InputGradOp { geom: self.geom, dims: d })?;
        let dw = x.apply_op2_no_bwd(&grad, &KernelGradOp { geom: self.geom, dims: d })?;
        Ok((Some(dx), Some(dw)))
    }
}

struct InputGradOp {
    geom: ConvGeometry,
    dims: Dims,
}

impl CustomOp2 for InputGradOp {
    fn name(&self) -> &'static str {
        "gemm-conv2d-input-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let d = self.dims;
        let out = match (s1, s2) {
            (CpuStorage::F32(g), CpuStorage::F32(k)) => {
                CpuStorage::F32(input_grad(contiguous(g, l1, "grad")?, contiguous(k, l2, "kernel")?, d, self.geom))
            }
            (CpuStorage::F64(g), CpuStorage::F64(k)) => {
                CpuStorage::F64(input_grad(contiguous(g, l1, "grad")?, contiguous(k, l2, "kernel")?, d, self.geom))
            }
            _ => bail!("conv2d backward: dtype mismatch"),
        };
        Ok((out, Shape::from((d.batch, d.cin, d.h, d.w))))
    }
}

struct KernelGradOp {
    geom: ConvGeometry,
    dims: Dims,
}

impl CustomOp2 for KernelGradOp {
    fn name(&self) -> &'static str {
        "gemm-conv2d-kernel-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let d = self.dims;
        let out = match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(g)) => {
                CpuStorage::F32(kernel_grad(contiguous(x, l1, "input")?, contiguous(g, l2, "grad")?, d, self.geom))
            }
            (CpuStorage::F64(x), CpuStorage::F64(g)) => {
                CpuStorage::F64(kernel_grad(contiguous(x, l1, "input")?, contiguous(g, l2, "grad")?, d, self.geom))
            }
            _ => bail!("conv2d backward: dtype mismatch"),
        };
        let k = self.geom.kernel;
        Ok((out, Shape::from((d.cout, d.cin, k, k))))
    }
}

/// Differentiable convolution without bias.
pub fn conv2d(x: &Tensor, kernel: &Tensor, geom: ConvGeometry) -> Result<Tensor> {
    let x = x.contiguous()?;
    let kernel = kernel.contiguous()?;
    x.apply_op2(&kernel, Conv2dOp { geom })
}
