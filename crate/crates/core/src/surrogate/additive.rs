//! Networks of the modular form F(g(x₁) + h(x₂)).

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mlp::{split_rows, Plateau, Standard, MIN_ROWS};
use super::net::{Adam, Net};
use super::{FunctionOracle, NetSpec, OracleKind, SurrogateError};
use crate::data::{median, std_dev, DataTable};

const VALIDATE_EVERY: usize = 10;
/// Relative validation rmse above which the fit is reported as failed.
pub const CONVERGENCE_RMSE: f64 = 0.02;

/// One scalar subnet behind affine maps on both sides:
/// `out_shift + out_scale · net((t − in_shift) / in_scale)`.
#[derive(Clone, Debug)]
pub struct ScalarOracle {
    net: Net,
    in_shift: f64,
    in_scale: f64,
    out_shift: f64,
    out_scale: f64,
    scales: [f64; 1],
}

impl ScalarOracle {
    fn inner(&self, t: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(1, t.len(), |_, c| (t[c] - self.in_shift) / self.in_scale)
    }
}

impl FunctionOracle for ScalarOracle {
    fn kind(&self) -> OracleKind {
        OracleKind::TrainedNet
    }

    fn n_vars(&self) -> usize {
        1
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.values(x)[0]
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        self.gradients(x, out)[0]
    }

    fn scales(&self) -> &[f64] {
        &self.scales
    }

    fn values(&self, rows: &[f64]) -> Vec<f64> {
        let y = self.net.predict(&self.inner(rows));
        y.iter().map(|v| self.out_shift + self.out_scale * v).collect()
    }

    fn gradients(&self, rows: &[f64], out: &mut [f64]) -> Vec<bool> {
        let g = self.net.input_gradients(&self.inner(rows));
        for (o, d) in out.iter_mut().zip(g.iter()) {
            *o = self.out_scale * d / self.in_scale;
        }
        vec![true; rows.len()]
    }
}

/// Gauge-fixed parts of a trained modular net: `f ≈ F(g(x₁) + h(x₂))`
/// with `g(x₁⁰) = h(x₂⁰) = 0` at the column medians and mean |g′| = 1.
pub struct ModularAdditive {
    pub f: Arc<ScalarOracle>,
    pub g: Arc<ScalarOracle>,
    pub h: Arc<ScalarOracle>,
    pub validation_rmse: f64,
    pub anchors: [f64; 2],
}

struct Parts {
    g: Net,
    h: Net,
    f: Net,
}

impl Parts {
    fn forward(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> DMatrix<f64> {
        let u = self.g.predict(x1) + self.h.predict(x2);
        self.f.predict(&u)
    }
}

pub fn train_modular_additive(table: &DataTable, spec: &NetSpec) -> Result<ModularAdditive, SurrogateError> {
    spec.check()?;
    if table.n_vars() != 2 {
        return Err(SurrogateError::Dimension {
            expected: 2,
            got: table.n_vars(),
        });
    }
    if table.len() < MIN_ROWS {
        return Err(SurrogateError::TooFewRows {
            need: MIN_ROWS,
            got: table.len(),
        });
    }
    let (c1, c2) = (table.column(0), table.column(1));
    let (s1, s2, sy) = (Standard::of(&c1), Standard::of(&c2), Standard::of(table.y()));
    let (tr, va) = split_rows(table.len(), spec);
    let col = |c: &[f64], s: &Standard, idx: &[usize]| DMatrix::from_fn(1, idx.len(), |_, k| (c[idx[k]] - s.mean) / s.std);
    let (x1t, x2t, yt) = (col(&c1, &s1, &tr), col(&c2, &s2, &tr), col(table.y(), &sy, &tr));
    let (x1v, x2v, yv) = (col(&c1, &s1, &va), col(&c2, &s2, &va), col(table.y(), &sy, &va));

    let mut sizes = vec![1];
    sizes.extend(&spec.layer_widths);
    sizes.push(1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut parts = Parts {
        g: Net::init(&sizes, &mut rng),
        h: Net::init(&sizes, &mut rng),
        f: Net::init(&sizes, &mut rng),
    };
    let (mut ag, mut ah, mut af) = (Adam::new(&parts.g), Adam::new(&parts.h), Adam::new(&parts.f));
    let mut plateau = Plateau::new(spec.learning_rate, spec.lr_halving_patience);
    let mut best = (parts.g.clone(), parts.h.clone(), parts.f.clone());
    let scale = 2.0 / tr.len() as f64;
    for epoch in 0..spec.epochs {
        let cg = parts.g.forward(&x1t);
        let ch = parts.h.forward(&x2t);
        let u = cg.output() + ch.output();
        let cf = parts.f.forward(&u);
        let resid = cf.output() - &yt;
        let loss = resid.norm_squared() / tr.len() as f64;
        if !loss.is_finite() || loss > 1e8 {
            return Err(SurrogateError::Diverged {
                epoch,
                loss,
                lr: plateau.lr,
            });
        }
        let (gf, du) = parts.f.backward(&cf, resid * scale);
        let (gg, _) = parts.g.backward(&cg, du.clone());
        let (gh, _) = parts.h.backward(&ch, du);
        af.step(&mut parts.f, &gf, plateau.lr);
        ag.step(&mut parts.g, &gg, plateau.lr);
        ah.step(&mut parts.h, &gh, plateau.lr);
        if (epoch + 1) % VALIDATE_EVERY == 0 || epoch + 1 == spec.epochs {
            let val = (parts.forward(&x1v, &x2v) - &yv).norm_squared() / va.len() as f64;
            if plateau.observe(val, VALIDATE_EVERY) {
                best = (parts.g.clone(), parts.h.clone(), parts.f.clone());
            }
            if plateau.exhausted() {
                break;
            }
        }
    }
    let (g, h, f) = best;
    let relative = plateau.best.sqrt();
    let rmse = relative * sy.std;
    if !(relative <= CONVERGENCE_RMSE) {
        return Err(SurrogateError::NotConverged { rmse, relative });
    }

    // Gauge: values at the medians vanish, mean |dg/dx₁| over the data is one.
    let anchors = [median(&c1), median(&c2)];
    let at = |net: &Net, v: f64| net.predict(&DMatrix::from_element(1, 1, v))[(0, 0)];
    let g0 = at(&g, (anchors[0] - s1.mean) / s1.std);
    let h0 = at(&h, (anchors[1] - s2.mean) / s2.std);
    let all1 = DMatrix::from_fn(1, c1.len(), |_, k| (c1[k] - s1.mean) / s1.std);
    let slope = g.input_gradients(&all1).iter().map(|d| d.abs()).sum::<f64>() / c1.len() as f64 / s1.std;
    if !(slope > 0.0 && slope.is_finite()) {
        return Err(SurrogateError::NotConverged { rmse, relative });
    }
    let part = |net: Net, s: &Standard, zero: f64| ScalarOracle {
        net,
        in_shift: s.mean,
        in_scale: s.std,
        out_shift: -zero / slope,
        out_scale: 1.0 / slope,
        scales: [s.std],
    };
    let g = part(g, &s1, g0);
    let h = part(h, &s2, h0);
    let spread = std_dev(&g.values(&c1)) + std_dev(&h.values(&c2));
    let f = ScalarOracle {
        net: f,
        in_shift: -(g0 + h0) / slope,
        in_scale: 1.0 / slope,
        out_shift: sy.mean,
        out_scale: if std_dev(table.y()) > 0.0 { sy.std } else { 0.0 },
        scales: [if spread > 0.0 { spread } else { 1.0 }],
    };
    Ok(ModularAdditive {
        f: Arc::new(f),
        g: Arc::new(g),
        h: Arc::new(h),
        validation_rmse: rmse,
        anchors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn table(f: impl Fn(f64, f64) -> f64, lo: f64, hi: f64) -> DataTable {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows = (0..300).map(|_| {
            let (a, b) = (rng.random_range(lo..hi), rng.random_range(lo..hi));
            (vec![a, b], f(a, b))
        });
        DataTable::new(vec!["a".into(), "b".into()], rows).unwrap().0
    }

    fn spec() -> NetSpec {
        NetSpec {
            layer_widths: vec![16, 16],
            epochs: 2000,
            learning_rate: 1e-2,
            lr_halving_patience: 100,
            ..NetSpec::default()
        }
    }

    /// R² of the best affine fit of `ys` on `ts`.
    fn affine_r2(ts: &[f64], ys: &[f64]) -> f64 {
        let n = ts.len() as f64;
        let (mt, my) = (ts.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
        for (t, y) in ts.iter().zip(ys) {
            stt += (t - mt) * (t - mt);
            sty += (t - mt) * (y - my);
            syy += (y - my) * (y - my);
        }
        sty * sty / (stt * syy)
    }

    #[test]
    fn composite_matches_and_gauge_holds() {
        let t = table(|a, b| (a + b).exp(), -1.0, 1.0);
        let m = train_modular_additive(&t, &spec()).unwrap();
        let mut worst: f64 = 0.0;
        for (x, y) in t.rows() {
            let u = m.g.value(&x[..1]) + m.h.value(&x[1..]);
            worst = worst.max((m.f.value(&[u]) - y).abs());
        }
        assert!(worst < 0.1 * std_dev(t.y()), "{worst}");
        assert!(m.g.value(&[m.anchors[0]]).abs() < 1e-12);
        assert!(m.h.value(&[m.anchors[1]]).abs() < 1e-12);
        let mut d = [0.0];
        let c1 = t.column(0);
        let mean_slope = c1.iter().map(|&v| {
            m.g.gradient(&[v], &mut d);
            d[0].abs()
        });
        assert!((mean_slope.sum::<f64>() / c1.len() as f64 - 1.0).abs() < 1e-9);
        let ts: Vec<f64> = (0..50).map(|i| -1.0 + i as f64 / 25.0).collect();
        assert!(affine_r2(&ts, &m.g.values(&ts)) > 0.99);
        assert!(affine_r2(&ts, &m.h.values(&ts)) > 0.99);
    }

    #[test]
    fn squares_inside_tanh() {
        let t = table(|a, b| (a * a + b * b).tanh(), -1.0, 1.0);
        let m = train_modular_additive(&t, &spec()).unwrap();
        let ts: Vec<f64> = (0..50).map(|i| -1.0 + i as f64 / 25.0).collect();
        let sq: Vec<f64> = ts.iter().map(|t| t * t).collect();
        assert!(affine_r2(&sq, &m.g.values(&ts)) > 0.99);
    }

    #[test]
    fn rejects_wrong_width() {
        let rows = (0..30).map(|i| (vec![i as f64], i as f64));
        let t = DataTable::new(vec!["a".into()], rows).unwrap().0;
        assert!(matches!(
            train_modular_additive(&t, &spec()),
            Err(SurrogateError::Dimension { .. })
        ));
    }
}
