use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Hyperparams;
use crate::linalg::{self, Design};
use crate::rng;

/// One tanh hidden layer and a linear output, trained by full-batch gradient
/// descent on squared error over standardized inputs and targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    x_mean: Vec<f64>,
    x_scale: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    /// `hidden × p`, row-major.
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

fn scale_of(xs: &[f64]) -> f64 {
    let s = linalg::std_dev(xs);
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

impl Network {
    pub fn fit(x: &Design, y: &[f64], hp: &Hyperparams, seed: u64) -> Self {
        let (n, p, h) = (x.n, x.p, hp.hidden.max(1));
        let cols: Vec<Vec<f64>> = (0..p).map(|c| (0..n).map(|i| x.row(i)[c]).collect()).collect();
        let x_mean: Vec<f64> = cols.iter().map(|c| linalg::mean(c)).collect();
        let x_scale: Vec<f64> = cols.iter().map(|c| scale_of(c)).collect();
        let y_mean = linalg::mean(y);
        let y_scale = scale_of(y);
        let mut xs = Vec::with_capacity(n * p);
        for i in 0..n {
            let row = x.row(i);
            xs.extend((0..p).map(|c| (row[c] - x_mean[c]) / x_scale[c]));
        }
        let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();

        let mut rng = rng::stream(seed, &[]);
        let a1 = (6.0 / (p + h) as f64).sqrt();
        let a2 = (6.0 / (h + 1) as f64).sqrt();
        let mut w1: Vec<f64> = (0..h * p).map(|_| rng.random_range(-a1..a1)).collect();
        let mut b1 = vec![0.0; h];
        let mut w2: Vec<f64> = (0..h).map(|_| rng.random_range(-a2..a2)).collect();
        let mut b2 = 0.0;

        let lr = hp.learning_rate;
        let mut act = vec![0.0; h];
        let mut g_w1 = vec![0.0; h * p];
        let mut g_b1 = vec![0.0; h];
        let mut g_w2 = vec![0.0; h];
        for _ in 0..hp.iterations {
            g_w1.fill(0.0);
            g_b1.fill(0.0);
            g_w2.fill(0.0);
            let mut g_b2 = 0.0;
            for i in 0..n {
                let xi = &xs[i * p..(i + 1) * p];
                let mut out = b2;
                for k in 0..h {
                    let z: f64 = b1[k] + (0..p).map(|c| w1[k * p + c] * xi[c]).sum::<f64>();
                    act[k] = z.tanh();
                    out += w2[k] * act[k];
                }
                let d = out - ys[i];
                g_b2 += d;
                for k in 0..h {
                    g_w2[k] += d * act[k];
                    let dz = d * w2[k] * (1.0 - act[k] * act[k]);
                    g_b1[k] += dz;
                    for c in 0..p {
                        g_w1[k * p + c] += dz * xi[c];
                    }
                }
            }
            let step = lr / n as f64;
            b2 -= step * g_b2;
            for k in 0..h {
                w2[k] -= step * g_w2[k];
                b1[k] -= step * g_b1[k];
            }
            for (w, g) in w1.iter_mut().zip(&g_w1) {
                *w -= step * g;
            }
        }
        Self {
            x_mean,
            x_scale,
            y_mean,
            y_scale,
            w1,
            b1,
            w2,
            b2,
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let p = self.x_mean.len();
        let mut out = self.b2;
        for (k, (&b, &w)) in self.b1.iter().zip(&self.w2).enumerate() {
            let z: f64 = b
                + (0..p)
                    .map(|c| self.w1[k * p + c] * (x[c] - self.x_mean[c]) / self.x_scale[c])
                    .sum::<f64>();
            out += w * z.tanh();
        }
        self.y_mean + self.y_scale * out
    }
}
