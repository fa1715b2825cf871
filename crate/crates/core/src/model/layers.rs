//! Forward and backward passes of the three layer types on flat parameter
//! slices. Matrices are row-major.

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Act {
    Linear,
    Leaky(f64),
    Relu,
    Sigmoid,
}

impl Act {
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Act::Linear => x,
            Act::Leaky(a) => {
                if x > 0.0 {
                    x
                } else {
                    a * x
                }
            }
            Act::Relu => x.max(0.0),
            Act::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative from the pre-activation `z` and output `y`.
    pub(crate) fn grad(self, z: f64, y: f64) -> f64 {
        match self {
            Act::Linear => 1.0,
            Act::Leaky(a) => {
                if z > 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Act::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            // σ(z)·σ(−z) keeps precision where σ(z) is close to 1
            Act::Sigmoid => y * sigmoid(-z),
        }
    }

    pub(crate) fn has_kink(self) -> bool {
        matches!(self, Act::Leaky(_) | Act::Relu)
    }
}

/// y = W x + b, W is `out × inp`.
pub(crate) fn dense_forward(w: &[f64], b: &[f64], x: &[f64], y: &mut [f64]) {
    let inp = x.len();
    for (o, yo) in y.iter_mut().enumerate() {
        let row = &w[o * inp..(o + 1) * inp];
        *yo = b[o] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
    }
}

/// Accumulates dW, db and returns dx.
pub(crate) fn dense_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let inp = x.len();
    for (o, &g) in dy.iter().enumerate() {
        db[o] += g;
        if g != 0.0 {
            for (d, &xi) in dw[o * inp..(o + 1) * inp].iter_mut().zip(x) {
                *d += g * xi;
            }
        }
    }
    if let Some(dx) = dx {
        dx.iter_mut().for_each(|v| *v = 0.0);
        for (o, &g) in dy.iter().enumerate() {
            if g != 0.0 {
                for (d, &wi) in dx.iter_mut().zip(&w[o * inp..(o + 1) * inp]) {
                    *d += g * wi;
                }
            }
        }
    }
}

/// Parameter count of an LSTM layer.
pub(crate) fn lstm_params(inp: usize, hidden: usize) -> usize {
    4 * hidden * (inp + hidden + 1)
}

/// Per-step state kept for backpropagation through time.
#[derive(Debug, Clone, Default)]
pub(crate) struct LstmTrace {
    /// inputs, T × inp
    pub xs: Vec<f64>,
    /// hidden states h_0..h_T, (T+1) × H, h_0 = 0
    pub hs: Vec<f64>,
    /// cell states c_0..c_T
    pub cs: Vec<f64>,
    /// gate activations i, f, g, o per step, T × 4H
    pub gates: Vec<f64>,
}

/// Gate order i, f, g, o. Layout: Wx (4H × inp), Wh (4H × H), b (4H).
pub(crate) fn lstm_forward(p: &[f64], inp: usize, hidden: usize, xs: &[f64]) -> LstmTrace {
    let h4 = 4 * hidden;
    let (wx, rest) = p.split_at(h4 * inp);
    let (wh, b) = rest.split_at(h4 * hidden);
    let steps = xs.len() / inp;
    let mut hs = vec![0.0; (steps + 1) * hidden];
    let mut cs = vec![0.0; (steps + 1) * hidden];
    let mut gates = vec![0.0; steps * h4];
    let mut z = vec![0.0; h4];
    for t in 0..steps {
        let x = &xs[t * inp..(t + 1) * inp];
        let hp = &hs[t * hidden..(t + 1) * hidden];
        for r in 0..h4 {
            let mut s = b[r];
            for (a, c) in wx[r * inp..(r + 1) * inp].iter().zip(x) {
                s += a * c;
            }
            for (a, c) in wh[r * hidden..(r + 1) * hidden].iter().zip(hp) {
                s += a * c;
            }
            z[r] = s;
        }
        let g = &mut gates[t * h4..(t + 1) * h4];
        for j in 0..hidden {
            let i_ = sigmoid(z[j]);
            let f_ = sigmoid(z[hidden + j]);
            let g_ = z[2 * hidden + j].tanh();
            let o_ = sigmoid(z[3 * hidden + j]);
            g[j] = i_;
            g[hidden + j] = f_;
            g[2 * hidden + j] = g_;
            g[3 * hidden + j] = o_;
            let c = f_ * cs[t * hidden + j] + i_ * g_;
            cs[(t + 1) * hidden + j] = c;
            hs[(t + 1) * hidden + j] = o_ * c.tanh();
        }
    }
    LstmTrace {
        xs: xs.to_vec(),
        hs,
        cs,
        gates,
    }
}

/// BPTT. `dh_seq` holds dL/dh_t for t = 1..T (T × H). Accumulates into
/// `dp` and returns dL/dx_t (T × inp).
pub(crate) fn lstm_backward(
    p: &[f64],
    inp: usize,
    hidden: usize,
    tr: &LstmTrace,
    dh_seq: &[f64],
    dp: &mut [f64],
) -> Vec<f64> {
    let h4 = 4 * hidden;
    let (wx, rest) = p.split_at(h4 * inp);
    let wh = &rest[..h4 * hidden];
    let (dwx, drest) = dp.split_at_mut(h4 * inp);
    let (dwh, db) = drest.split_at_mut(h4 * hidden);
    let steps = tr.xs.len() / inp;
    let mut dxs = vec![0.0; steps * inp];
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let mut dz = vec![0.0; h4];
    for t in (0..steps).rev() {
        let g = &tr.gates[t * h4..(t + 1) * h4];
        let c_prev = &tr.cs[t * hidden..(t + 1) * hidden];
        let c = &tr.cs[(t + 1) * hidden..(t + 2) * hidden];
        for j in 0..hidden {
            let dh = dh_seq[t * hidden + j] + dh_next[j];
            let (i_, f_, g_, o_) = (g[j], g[hidden + j], g[2 * hidden + j], g[3 * hidden + j]);
            let tc = c[j].tanh();
            let d_o = dh * tc;
            let dc = dc_next[j] + dh * o_ * (1.0 - tc * tc);
            dz[j] = dc * g_ * i_ * (1.0 - i_);
            dz[hidden + j] = dc * c_prev[j] * f_ * (1.0 - f_);
            dz[2 * hidden + j] = dc * i_ * (1.0 - g_ * g_);
            dz[3 * hidden + j] = d_o * o_ * (1.0 - o_);
            dc_next[j] = dc * f_;
        }
        let x = &tr.xs[t * inp..(t + 1) * inp];
        let hp = &tr.hs[t * hidden..(t + 1) * hidden];
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        let dx = &mut dxs[t * inp..(t + 1) * inp];
        for r in 0..h4 {
            let d = dz[r];
            if d == 0.0 {
                continue;
            }
            db[r] += d;
            for k in 0..inp {
                dwx[r * inp + k] += d * x[k];
                dx[k] += d * wx[r * inp + k];
            }
            for k in 0..hidden {
                dwh[r * hidden + k] += d * hp[k];
                dh_next[k] += d * wh[r * hidden + k];
            }
        }
    }
    dxs
}

/// Transposed convolution, no padding: `side` → `(side − 1)·stride + k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Deconv {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
}

impl Deconv {
    pub(crate) fn out_side(&self, side: usize) -> usize {
        (side - 1) * self.stride + self.k
    }

    pub(crate) fn weight_len(&self) -> usize {
        self.cin * self.cout * self.k * self.k
    }

    pub(crate) fn param_len(&self) -> usize {
        self.weight_len() + self.cout
    }

    /// Input `cin × side × side`, output `cout × out × out` (channel-major).
    pub(crate) fn forward(&self, p: &[f64], x: &[f64], side: usize) -> Vec<f64> {
        let (w, b) = p.split_at(self.weight_len());
        let out = self.out_side(side);
        let mut y = vec![0.0; self.cout * out * out];
        for (co, &bias) in b.iter().enumerate() {
            y[co * out * out..(co + 1) * out * out]
                .iter_mut()
                .for_each(|v| *v = bias);
        }
        let k = self.k;
        for ci in 0..self.cin {
            for i in 0..side {
                for j in 0..side {
                    let v = x[(ci * side + i) * side + j];
                    if v == 0.0 {
                        continue;
                    }
                    for co in 0..self.cout {
                        let wk = &w[(ci * self.cout + co) * k * k..][..k * k];
                        let base = co * out * out;
                        for ki in 0..k {
                            let row = base + (i * self.stride + ki) * out + j * self.stride;
                            for kj in 0..k {
                                y[row + kj] += v * wk[ki * k + kj];
                            }
                        }
                    }
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients and returns dL/dx.
    pub(crate) fn backward(
        &self,
        p: &[f64],
        x: &[f64],
        side: usize,
        dy: &[f64],
        dp: &mut [f64],
    ) -> Vec<f64> {
        let w = &p[..self.weight_len()];
        let (dw, db) = dp.split_at_mut(self.weight_len());
        let out = self.out_side(side);
        for co in 0..self.cout {
            db[co] += dy[co * out * out..(co + 1) * out * out].iter().sum::<f64>();
        }
        let k = self.k;
        let mut dx = vec![0.0; self.cin * side * side];
        for ci in 0..self.cin {
            for i in 0..side {
                for j in 0..side {
                    let v = x[(ci * side + i) * side + j];
                    let mut acc = 0.0;
                    for co in 0..self.cout {
                        let off = (ci * self.cout + co) * k * k;
                        let base = co * out * out;
                        for ki in 0..k {
                            let row = base + (i * self.stride + ki) * out + j * self.stride;
                            for kj in 0..k {
                                let g = dy[row + kj];
                                acc += g * w[off + ki * k + kj];
                                dw[off + ki * k + kj] += g * v;
                            }
                        }
                    }
                    dx[(ci * side + i) * side + j] = acc;
                }
            }
        }
        dx
    }
}
