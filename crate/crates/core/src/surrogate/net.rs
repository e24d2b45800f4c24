//! Dense softplus network core, batch-major, plus Adam.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug)]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Hidden layers use softplus; the output layer is linear.
#[derive(Clone, Debug)]
pub struct Net {
    pub layers: Vec<Layer>,
}

/// Forward activations kept for the backward pass. Column j is sample j.
pub struct Cache {
    acts: Vec<DMatrix<f64>>,
    sig: Vec<DMatrix<f64>>,
}

impl Cache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.acts.last().expect("at least the input")
    }
}

pub struct Grads {
    pub w: Vec<DMatrix<f64>>,
    pub b: Vec<DVector<f64>>,
}

#[inline]
fn softplus_sig(z: f64) -> (f64, f64) {
    let e = (-z.abs()).exp();
    let sp = z.max(0.0) + e.ln_1p();
    let s = if z >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    (sp, s)
}

impl Net {
    /// `sizes` includes input and output widths. Weights ~ N(0, 1/fan_in).
    pub fn init<R: Rng>(sizes: &[usize], rng: &mut R) -> Net {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let scale = 1.0 / (fan_in as f64).sqrt();
                let w = DMatrix::from_fn(fan_out, fan_in, |_, _| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * scale
                });
                Layer {
                    w,
                    b: DVector::zeros(fan_out),
                }
            })
            .collect();
        Net { layers }
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Cache {
        let mut acts = vec![x.clone()];
        let mut sig = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let mut z = &l.w * acts.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += &l.b;
            }
            if li < last {
                let mut s = DMatrix::zeros(z.nrows(), z.ncols());
                for (zv, sv) in z.iter_mut().zip(s.iter_mut()) {
                    let (a, d) = softplus_sig(*zv);
                    *zv = a;
                    *sv = d;
                }
                sig.push(s);
            }
            acts.push(z);
        }
        Cache { acts, sig }
    }

    /// Outputs only, without keeping intermediate activations.
    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let last = self.layers.len() - 1;
        let mut a = x.clone();
        for (li, l) in self.layers.iter().enumerate() {
            let mut z = &l.w * &a;
            for mut col in z.column_iter_mut() {
                col += &l.b;
            }
            if li < last {
                z.apply(|v| *v = softplus_sig(*v).0);
            }
            a = z;
        }
        a
    }

    /// Backpropagates `dout` (d loss / d output). Returns parameter
    /// gradients and d loss / d input.
    pub fn backward(&self, cache: &Cache, dout: DMatrix<f64>) -> (Grads, DMatrix<f64>) {
        let n = self.layers.len();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        let mut delta = dout;
        for li in (0..n).rev() {
            let a_prev = &cache.acts[li];
            gw.push(&delta * a_prev.transpose());
            gb.push(delta.column_sum());
            let mut back = self.layers[li].w.transpose() * &delta;
            if li > 0 {
                back.component_mul_assign(&cache.sig[li - 1]);
            }
            delta = back;
        }
        gw.reverse();
        gb.reverse();
        (Grads { w: gw, b: gb }, delta)
    }

    /// Input gradients of a scalar-output net, one column per sample.
    pub fn input_gradients(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let cache = self.forward(x);
        let ones = DMatrix::from_element(1, x.ncols(), 1.0);
        self.backward(&cache, ones).1
    }

    pub fn dump(&self) -> Vec<LayerDump> {
        self.layers
            .iter()
            .map(|l| LayerDump {
                weights: (0..l.w.nrows())
                    .map(|r| l.w.row(r).iter().copied().collect())
                    .collect(),
                bias: l.b.iter().copied().collect(),
            })
            .collect()
    }

    pub fn from_dump(layers: &[LayerDump]) -> Option<Net> {
        let mut out = Vec::with_capacity(layers.len());
        for l in layers {
            let rows = l.weights.len();
            let cols = l.weights.first()?.len();
            if rows != l.bias.len() || l.weights.iter().any(|r| r.len() != cols) {
                return None;
            }
            if let Some(prev) = out.last() {
                let prev: &Layer = prev;
                if prev.w.nrows() != cols {
                    return None;
                }
            }
            out.push(Layer {
                w: DMatrix::from_fn(rows, cols, |r, c| l.weights[r][c]),
                b: DVector::from_vec(l.bias.clone()),
            });
        }
        if out.is_empty() {
            return None;
        }
        Some(Net { layers: out })
    }
}

/// One dense layer in the JSON weight format: `weights[out][in]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerDump {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

pub struct Adam {
    mw: Vec<DMatrix<f64>>,
    vw: Vec<DMatrix<f64>>,
    mb: Vec<DVector<f64>>,
    vb: Vec<DVector<f64>>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    pub fn new(net: &Net) -> Adam {
        Adam {
            mw: net.layers.iter().map(|l| l.w.map(|_| 0.0)).collect(),
            vw: net.layers.iter().map(|l| l.w.map(|_| 0.0)).collect(),
            mb: net.layers.iter().map(|l| l.b.map(|_| 0.0)).collect(),
            vb: net.layers.iter().map(|l| l.b.map(|_| 0.0)).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut Net, g: &Grads, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for (li, l) in net.layers.iter_mut().enumerate() {
            update(l.w.as_mut_slice(), g.w[li].as_slice(), self.mw[li].as_mut_slice(), self.vw[li].as_mut_slice(), lr, c1, c2);
            update(l.b.as_mut_slice(), g.b[li].as_slice(), self.mb[li].as_mut_slice(), self.vb[li].as_mut_slice(), lr, c1, c2);
        }
    }
}

fn update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, c1: f64, c2: f64) {
    for i in 0..p.len() {
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
        p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
    }
}
