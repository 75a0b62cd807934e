//! 3x3 convolutions with unit padding, plain loops over channel-major maps.
//!
//! Feature maps are `[channels][height][width]`, row-major. These kernels are
//! the entire compute budget of the detector, so they stay allocation-free in
//! the inner loops and defer all layout bookkeeping to the model.

/// Output side length of a padded 3x3 convolution.
#[inline]
pub fn out_side(input_side: usize, stride: usize) -> usize {
    (input_side + 2 - 3) / stride + 1
}

/// Forward pass. `kernel` is `[oc][ic][3][3]`, `bias` is `[oc]`.
pub fn conv3x3_forward(
    input: &[f64],
    ic: usize,
    ih: usize,
    iw: usize,
    kernel: &[f64],
    bias: &[f64],
    oc: usize,
    stride: usize,
) -> Vec<f64> {
    let oh = out_side(ih, stride);
    let ow = out_side(iw, stride);
    debug_assert_eq!(input.len(), ic * ih * iw);
    debug_assert_eq!(kernel.len(), oc * ic * 9);
    debug_assert_eq!(bias.len(), oc);
    let mut out = vec![0.0; oc * oh * ow];
    for o in 0..oc {
        let kbase = o * ic * 9;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[o];
                for i in 0..ic {
                    let kb = kbase + i * 9;
                    let ib = i * ih * iw;
                    for ky in 0..3 {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        let row = ib + iy as usize * iw;
                        for kx in 0..3 {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix < 0 || ix >= iw as isize {
                                continue;
                            }
                            acc += kernel[kb + ky * 3 + kx] * input[row + ix as usize];
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

/// Backward pass: gradients with respect to input, kernel and bias.
pub fn conv3x3_backward(
    input: &[f64],
    ic: usize,
    ih: usize,
    iw: usize,
    kernel: &[f64],
    oc: usize,
    stride: usize,
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let oh = out_side(ih, stride);
    let ow = out_side(iw, stride);
    debug_assert_eq!(grad_out.len(), oc * oh * ow);
    let mut grad_in = vec![0.0; ic * ih * iw];
    let mut grad_k = vec![0.0; oc * ic * 9];
    let mut grad_b = vec![0.0; oc];
    for o in 0..oc {
        let kbase = o * ic * 9;
        for oy in 0..oh {
            for ox in 0..ow {
                let go = grad_out[(o * oh + oy) * ow + ox];
                if go == 0.0 {
                    continue;
                }
                grad_b[o] += go;
                for i in 0..ic {
                    let kb = kbase + i * 9;
                    let ib = i * ih * iw;
                    for ky in 0..3 {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        let row = ib + iy as usize * iw;
                        for kx in 0..3 {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix < 0 || ix >= iw as isize {
                                continue;
                            }
                            let src = row + ix as usize;
                            grad_k[kb + ky * 3 + kx] += go * input[src];
                            grad_in[src] += go * kernel[kb + ky * 3 + kx];
                        }
                    }
                }
            }
        }
    }
    (grad_in, grad_k, grad_b)
}

/// In-place rectifier.
pub fn relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Gate an upstream gradient by the rectifier's activation pattern.
/// `activated` is the post-rectifier output of the matching forward call.
pub fn relu_backward_inplace(grad: &mut [f64], activated: &[f64]) {
    for (g, a) in grad.iter_mut().zip(activated) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}
