use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{Adam, LayerDump, Net};
use super::{FunctionOracle, OracleKind, SurrogateError};
use crate::data::{std_dev, DataTable};

pub(crate) const MIN_ROWS: usize = 20;
const VALIDATE_EVERY: usize = 10;
const MAX_HALVINGS: usize = 12;
const BATCH: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Softplus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    /// Hidden layer widths.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Epochs without a validation improvement before the rate is halved.
    pub lr_halving_patience: usize,
    pub train_fraction: f64,
    pub seed: u64,
    /// Larger tables are subsampled (seeded) to this many rows.
    pub max_rows: usize,
}

impl Default for NetSpec {
    fn default() -> Self {
        NetSpec {
            layer_widths: vec![128, 128],
            activation: Activation::Softplus,
            epochs: 5000,
            learning_rate: 3e-4,
            lr_halving_patience: 250,
            train_fraction: 0.8,
            seed: 0,
            max_rows: 4000,
        }
    }
}

impl NetSpec {
    pub(crate) fn check(&self) -> Result<(), SurrogateError> {
        if self.layer_widths.is_empty() || self.layer_widths.contains(&0) {
            return Err(SurrogateError::Spec("hidden widths must be positive".into()));
        }
        if self.epochs == 0 || !(self.learning_rate > 0.0) {
            return Err(SurrogateError::Spec("epochs and learning rate must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(SurrogateError::Spec("train fraction must lie in (0, 1]".into()));
        }
        if self.max_rows < MIN_ROWS {
            return Err(SurrogateError::Spec(format!("max_rows below {MIN_ROWS}")));
        }
        Ok(())
    }
}

/// Reduce-on-plateau schedule shared by the trainers.
pub(crate) struct Plateau {
    pub lr: f64,
    pub best: f64,
    since: usize,
    patience: usize,
    halvings: usize,
}

impl Plateau {
    pub fn new(lr: f64, patience: usize) -> Plateau {
        Plateau {
            lr,
            best: f64::INFINITY,
            since: 0,
            patience: patience.max(1),
            halvings: 0,
        }
    }

    /// Records a validation loss seen after `epochs` more epochs. Returns
    /// true when it is a new best.
    pub fn observe(&mut self, loss: f64, epochs: usize) -> bool {
        if loss < self.best * (1.0 - 1e-6) {
            self.best = loss;
            self.since = 0;
            return true;
        }
        self.since += epochs;
        if self.since >= self.patience {
            self.lr *= 0.5;
            self.halvings += 1;
            self.since = 0;
        }
        false
    }

    pub fn exhausted(&self) -> bool {
        self.halvings > MAX_HALVINGS
    }
}

/// Column standardization in the original coordinates.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Standard {
    pub mean: f64,
    pub std: f64,
}

impl Standard {
    pub fn of(v: &[f64]) -> Standard {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let s = std_dev(v);
        Standard {
            mean,
            std: if s > 0.0 && s.is_finite() { s } else { 1.0 },
        }
    }
}

/// Seeded subsample and train/validation split, as row indices.
pub(crate) fn split_rows(n: usize, spec: &NetSpec) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_da7a);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx.truncate(spec.max_rows);
    let n_train = ((idx.len() as f64 * spec.train_fraction).round() as usize).clamp(1, idx.len());
    let (tr, va) = idx.split_at(n_train);
    let va = if va.is_empty() { tr.to_vec() } else { va.to_vec() };
    (tr.to_vec(), va)
}

/// Feed-forward softplus network fitted to a table. Values and gradients
/// are in the table's original units.
#[derive(Clone, Debug)]
pub struct TrainedNet {
    net: Net,
    x_std: Vec<Standard>,
    y_std: Standard,
    /// Zero for a constant target: the oracle is then exactly constant.
    y_scale: f64,
    scales: Vec<f64>,
    validation_rmse: f64,
    epochs_run: usize,
}

/// Fits a network to `table` with full-batch Adam on the squared error of
/// standardized targets.
pub fn train(table: &DataTable, spec: &NetSpec) -> Result<TrainedNet, SurrogateError> {
    spec.check()?;
    if table.len() < MIN_ROWS {
        return Err(SurrogateError::TooFewRows {
            need: MIN_ROWS,
            got: table.len(),
        });
    }
    let n = table.n_vars();
    let x_std: Vec<Standard> = (0..n).map(|j| Standard::of(&table.column(j))).collect();
    let y_std = Standard::of(table.y());
    let constant = std_dev(table.y()) == 0.0;
    let (tr, va) = split_rows(table.len(), spec);
    let inputs = |idx: &[usize]| {
        DMatrix::from_fn(n, idx.len(), |j, c| (table.row(idx[c])[j] - x_std[j].mean) / x_std[j].std)
    };
    let targets = |idx: &[usize]| {
        DMatrix::from_fn(1, idx.len(), |_, c| (table.y()[idx[c]] - y_std.mean) / y_std.std)
    };
    let (xt, yt, xv, yv) = (inputs(&tr), targets(&tr), inputs(&va), targets(&va));

    let mut sizes = vec![n];
    sizes.extend(&spec.layer_widths);
    sizes.push(1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut net = Net::init(&sizes, &mut rng);
    let mut epochs_run = 0;
    let mut best_val;

    if constant {
        let last = net.layers.last_mut().unwrap();
        last.w.fill(0.0);
        last.b.fill(0.0);
        best_val = 0.0;
    } else {
        let mut adam = Adam::new(&net);
        let mut plateau = Plateau::new(spec.learning_rate, spec.lr_halving_patience);
        let mut best = net.clone();
        let scale = 2.0 / xt.ncols() as f64;
        for epoch in 0..spec.epochs {
            let cache = net.forward(&xt);
            let resid = cache.output() - &yt;
            let loss = resid.norm_squared() / xt.ncols() as f64;
            if !loss.is_finite() || loss > 1e8 {
                return Err(SurrogateError::Diverged {
                    epoch,
                    loss,
                    lr: plateau.lr,
                });
            }
            let (g, _) = net.backward(&cache, resid * scale);
            adam.step(&mut net, &g, plateau.lr);
            epochs_run = epoch + 1;
            if epochs_run % VALIDATE_EVERY == 0 || epochs_run == spec.epochs {
                let val = (net.predict(&xv) - &yv).norm_squared() / xv.ncols() as f64;
                if plateau.observe(val, VALIDATE_EVERY) {
                    best = net.clone();
                }
                if plateau.exhausted() {
                    break;
                }
            }
        }
        net = best;
        best_val = plateau.best;
        if !best_val.is_finite() {
            best_val = (net.predict(&xv) - &yv).norm_squared() / xv.ncols() as f64;
        }
    }
    log::debug!("net trained: {epochs_run} epochs, validation mse {best_val:.3e} (standardized)");
    let scales = x_std.iter().map(|s| s.std).collect();
    Ok(TrainedNet {
        net,
        validation_rmse: best_val.sqrt() * y_std.std,
        y_scale: if constant { 0.0 } else { y_std.std },
        x_std,
        y_std,
        scales,
        epochs_run,
    })
}

impl TrainedNet {
    pub fn validation_rmse(&self) -> f64 {
        self.validation_rmse
    }

    pub fn epochs_run(&self) -> usize {
        self.epochs_run
    }

    fn standardize(&self, rows: &[f64]) -> DMatrix<f64> {
        let n = self.x_std.len();
        DMatrix::from_fn(n, rows.len() / n, |j, c| (rows[c * n + j] - self.x_std[j].mean) / self.x_std[j].std)
    }

    pub fn dump(&self) -> NetDump {
        NetDump {
            format: NET_FORMAT.into(),
            version: NET_FORMAT_VERSION,
            activation: Activation::Softplus,
            input_mean: self.x_std.iter().map(|s| s.mean).collect(),
            input_std: self.x_std.iter().map(|s| s.std).collect(),
            output_mean: self.y_std.mean,
            output_std: self.y_scale,
            validation_rmse: self.validation_rmse,
            epochs_run: self.epochs_run,
            layers: self.net.dump(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.dump()).expect("plain data serializes")
    }

    pub fn from_dump(d: &NetDump) -> Result<TrainedNet, SurrogateError> {
        let bad = |m: &str| SurrogateError::Format(m.to_string());
        if d.format != NET_FORMAT || d.version != NET_FORMAT_VERSION {
            return Err(bad("unknown format or version"));
        }
        let net = Net::from_dump(&d.layers).ok_or_else(|| bad("inconsistent layer shapes"))?;
        let n = net.n_inputs();
        if d.input_mean.len() != n || d.input_std.len() != n || net.layers.last().unwrap().w.nrows() != 1 {
            return Err(bad("standardization does not match layer shapes"));
        }
        let x_std: Vec<Standard> = d
            .input_mean
            .iter()
            .zip(&d.input_std)
            .map(|(&mean, &std)| Standard { mean, std })
            .collect();
        Ok(TrainedNet {
            scales: d.input_std.clone(),
            x_std,
            y_std: Standard {
                mean: d.output_mean,
                std: if d.output_std > 0.0 { d.output_std } else { 1.0 },
            },
            y_scale: d.output_std,
            validation_rmse: d.validation_rmse,
            epochs_run: d.epochs_run,
            net,
        })
    }

    pub fn from_json(text: &str) -> Result<TrainedNet, SurrogateError> {
        let d: NetDump = serde_json::from_str(text).map_err(|e| SurrogateError::Format(e.to_string()))?;
        TrainedNet::from_dump(&d)
    }
}

pub const NET_FORMAT: &str = "paretosr-net";
pub const NET_FORMAT_VERSION: u32 = 1;

/// JSON weight file. The network maps standardized inputs
/// `(x - input_mean) / input_std` to `(y - output_mean) / output_std`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetDump {
    pub format: String,
    pub version: u32,
    pub activation: Activation,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub output_mean: f64,
    pub output_std: f64,
    pub validation_rmse: f64,
    pub epochs_run: usize,
    pub layers: Vec<LayerDump>,
}

impl FunctionOracle for TrainedNet {
    fn kind(&self) -> OracleKind {
        OracleKind::TrainedNet
    }

    fn n_vars(&self) -> usize {
        self.x_std.len()
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
        let n = self.n_vars();
        let mut out = Vec::with_capacity(rows.len() / n);
        for chunk in rows.chunks(BATCH * n) {
            let y = self.net.predict(&self.standardize(chunk));
            out.extend(y.iter().map(|v| self.y_std.mean + self.y_scale * v));
        }
        out
    }

    fn gradients(&self, rows: &[f64], out: &mut [f64]) -> Vec<bool> {
        let n = self.n_vars();
        for (chunk, dst) in rows.chunks(BATCH * n).zip(out.chunks_mut(BATCH * n)) {
            let g = self.net.input_gradients(&self.standardize(chunk));
            for c in 0..g.ncols() {
                for j in 0..n {
                    dst[c * n + j] = self.y_scale * g[(j, c)] / self.x_std[j].std;
                }
            }
        }
        vec![true; rows.len() / n]
    }
}
