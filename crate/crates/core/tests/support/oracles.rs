//! Brute-force reference implementations used as test oracles. They are
//! written directly from the definitions and share no code with the crate.
#![allow(dead_code)]

use steerlab::tensor::Tensor;

/// 2D cross-correlation with zero padding, straight from the definition.
/// `x: [N,H,W,C]`, `w: [KH,KW,C,F]`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: [usize; 2], pad: [usize; 2]) -> (Vec<usize>, Vec<f64>) {
    let [n, h, wd, c] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [kh, kw, _, f] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    let oh = (h + 2 * pad[0] - kh) / stride[0] + 1;
    let ow = (wd + 2 * pad[1] - kw) / stride[1] + 1;
    let xs = |bn: usize, i: i64, j: i64, ch: usize| -> f64 {
        if i < 0 || j < 0 || i >= h as i64 || j >= wd as i64 {
            0.0
        } else {
            x.data()[((bn * h + i as usize) * wd + j as usize) * c + ch]
        }
    };
    let mut out = vec![0.0; n * oh * ow * f];
    for bn in 0..n {
        for y in 0..oh {
            for xx in 0..ow {
                for fi in 0..f {
                    let mut acc = b.data()[fi];
                    for dy in 0..kh {
                        for dx in 0..kw {
                            for ch in 0..c {
                                let i = (y * stride[0] + dy) as i64 - pad[0] as i64;
                                let j = (xx * stride[1] + dx) as i64 - pad[1] as i64;
                                acc += xs(bn, i, j, ch) * w.data()[((dy * kw + dx) * c + ch) * f + fi];
                            }
                        }
                    }
                    out[((bn * oh + y) * ow + xx) * f + fi] = acc;
                }
            }
        }
    }
    (vec![n, oh, ow, f], out)
}

/// 3D cross-correlation. `x: [N,D,H,W,C]`, `w: [KD,KH,KW,C,F]`.
pub fn conv3d(x: &Tensor, w: &Tensor, b: &Tensor, stride: [usize; 3], pad: [usize; 3]) -> (Vec<usize>, Vec<f64>) {
    let s = x.shape();
    let (n, d, h, wd, c) = (s[0], s[1], s[2], s[3], s[4]);
    let k = w.shape();
    let (kd, kh, kw, f) = (k[0], k[1], k[2], k[4]);
    let od = (d + 2 * pad[0] - kd) / stride[0] + 1;
    let oh = (h + 2 * pad[1] - kh) / stride[1] + 1;
    let ow = (wd + 2 * pad[2] - kw) / stride[2] + 1;
    let mut out = vec![0.0; n * od * oh * ow * f];
    for bn in 0..n {
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    for fi in 0..f {
                        let mut acc = b.data()[fi];
                        for dz in 0..kd {
                            for dy in 0..kh {
                                for dx in 0..kw {
                                    for ch in 0..c {
                                        let iz = (z * stride[0] + dz) as i64 - pad[0] as i64;
                                        let iy = (y * stride[1] + dy) as i64 - pad[1] as i64;
                                        let ix = (xx * stride[2] + dx) as i64 - pad[2] as i64;
                                        if iz < 0
                                            || iy < 0
                                            || ix < 0
                                            || iz >= d as i64
                                            || iy >= h as i64
                                            || ix >= wd as i64
                                        {
                                            continue;
                                        }
                                        let xv = x.data()
                                            [(((bn * d + iz as usize) * h + iy as usize) * wd + ix as usize) * c + ch];
                                        let wv = w.data()[(((dz * kh + dy) * kw + dx) * c + ch) * f + fi];
                                        acc += xv * wv;
                                    }
                                }
                            }
                        }
                        out[(((bn * od + z) * oh + y) * ow + xx) * f + fi] = acc;
                    }
                }
            }
        }
    }
    (vec![n, od, oh, ow, f], out)
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// One unbatched LSTM step computed gate by gate.
/// `w: [in, 4H]`, `u: [H, 4H]`, `b: [4H]`, gate blocks ordered i, f, g, o.
pub fn lstm_step(x: &[f64], h: &[f64], c: &[f64], w: &Tensor, u: &Tensor, b: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let hidden = h.len();
    let cols = 4 * hidden;
    let pre = |gate: usize, j: usize| -> f64 {
        let col = gate * hidden + j;
        let mut z = b.data()[col];
        for (k, xv) in x.iter().enumerate() {
            z += xv * w.data()[k * cols + col];
        }
        for (k, hv) in h.iter().enumerate() {
            z += hv * u.data()[k * cols + col];
        }
        z
    };
    let mut h_next = vec![0.0; hidden];
    let mut c_next = vec![0.0; hidden];
    for j in 0..hidden {
        let input_gate = sigmoid(pre(0, j));
        let forget_gate = sigmoid(pre(1, j));
        let candidate = pre(2, j).tanh();
        let output_gate = sigmoid(pre(3, j));
        c_next[j] = forget_gate * c[j] + input_gate * candidate;
        h_next[j] = output_gate * c_next[j].tanh();
    }
    (h_next, c_next)
}

/// Scalar Adam with bias correction and `lr / (1 + decay * t)` decay, where
/// `t` counts completed steps before the update.
pub struct ScalarAdam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay: f64,
    pub m: f64,
    pub v: f64,
    pub t: u64,
}

impl ScalarAdam {
    pub fn new(lr: f64, decay: f64) -> Self {
        ScalarAdam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay,
            m: 0.0,
            v: 0.0,
            t: 0,
        }
    }

    pub fn step(&mut self, theta: f64, grad: f64) -> f64 {
        let lr_t = self.lr / (1.0 + self.decay * self.t as f64);
        self.t += 1;
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad;
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad;
        let m_hat = self.m / (1.0 - self.beta1.powi(self.t as i32));
        let v_hat = self.v / (1.0 - self.beta2.powi(self.t as i32));
        theta - lr_t * m_hat / (v_hat.sqrt() + self.eps)
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
