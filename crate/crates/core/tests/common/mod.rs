//! Loop-based reference kernels shared by the integration tests.
#![allow(dead_code)]

use redip_core::Tensor64;

/// Direct cross-correlation with zero padding `pad`.
pub fn conv_loops(x: &Tensor64, k: &Tensor64, stride: usize, pad: usize) -> Tensor64 {
    let (c, h, w) = x.chw().unwrap();
    let (o, kk) = (k.shape()[0], k.shape()[2]);
    let oh = (h + 2 * pad - kk) / stride + 1;
    let ow = (w + 2 * pad - kk) / stride + 1;
    let (xd, kd) = (x.data(), k.data());
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for i in 0..oh {
            for j in 0..ow {
                let mut s = 0.0;
                for ic in 0..c {
                    for a in 0..kk {
                        for b in 0..kk {
                            let r = (i * stride + a) as isize - pad as isize;
                            let q = (j * stride + b) as isize - pad as isize;
                            if r < 0 || q < 0 || r >= h as isize || q >= w as isize {
                                continue;
                            }
                            s += xd[(ic * h + r as usize) * w + q as usize] * kd[((oc * c + ic) * kk + a) * kk + b];
                        }
                    }
                }
                out[(oc * oh + i) * ow + j] = s;
            }
        }
    }
    Tensor64::from_vec(&[o, oh, ow], out).unwrap()
}

/// Direct scatter form of the transposed convolution (no padding).
pub fn transpose_loops(y: &Tensor64, k: &Tensor64, stride: usize) -> Tensor64 {
    let (o, h, w) = y.chw().unwrap();
    let (c, kk) = (k.shape()[1], k.shape()[2]);
    let (oh, ow) = ((h - 1) * stride + kk, (w - 1) * stride + kk);
    let mut out = vec![0.0; c * oh * ow];
    for oc in 0..o {
        for i in 0..h {
            for j in 0..w {
                let v = y.data()[(oc * h + i) * w + j];
                for ic in 0..c {
                    for a in 0..kk {
                        for b in 0..kk {
                            out[(ic * oh + i * stride + a) * ow + j * stride + b] +=
                                v * k.data()[((oc * c + ic) * kk + a) * kk + b];
                        }
                    }
                }
            }
        }
    }
    Tensor64::from_vec(&[c, oh, ow], out).unwrap()
}
