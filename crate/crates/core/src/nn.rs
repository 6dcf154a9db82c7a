//! Minimal dense network stack: tanh MLPs with hand-written backprop and
//! Adam. Everything is f64 and single-sample; batches are accumulated by
//! the caller. Flat parameter access exists for two reasons: checkpoints
//! and finite-difference audits of the analytic gradients.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Output head applied after the final affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Squash {
    Linear,
    /// Logistic squashing to (0,1); used by the safety critics.
    Sigmoid,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    dims: Vec<usize>,
    /// weights[l] has dims[l+1] rows of dims[l] entries, row-major.
    w: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    squash: Squash,
}

/// Per-layer gradient buffers shaped exactly like the network parameters.
#[derive(Debug, Clone)]
pub struct Grads {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

/// Forward-pass activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    input: Vec<f64>,
    /// Post-activation outputs of every layer, final layer included.
    acts: Vec<Vec<f64>>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Mlp {
    /// Glorot-uniform initialization; biases start at zero.
    pub fn new(dims: &[usize], squash: Squash, rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2, "network needs input and output dims");
        assert!(dims.iter().all(|&d| d > 0), "zero-width layer");
        let mut w = Vec::with_capacity(dims.len() - 1);
        let mut b = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let scale = (6.0 / (fan_in + fan_out) as f64).sqrt();
            w.push((0..fan_in * fan_out).map(|_| rng.gen_range(-scale..scale)).collect());
            b.push(vec![0.0; fan_out]);
        }
        Mlp { dims: dims.to_vec(), w, b, squash }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Overwrites every output-layer bias, shifting where the squash
    /// starts without touching the hidden layers.
    pub fn set_output_bias(&mut self, value: f64) {
        for b in self.b.last_mut().unwrap() {
            *b = value;
        }
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            w: self.w.iter().map(|l| vec![0.0; l.len()]).collect(),
            b: self.b.iter().map(|l| vec![0.0; l.len()]).collect(),
        }
    }

    fn affine(&self, l: usize, x: &[f64], out: &mut Vec<f64>) {
        let (nin, nout) = (self.dims[l], self.dims[l + 1]);
        out.clear();
        for i in 0..nout {
            let row = &self.w[l][i * nin..(i + 1) * nin];
            let mut z = self.b[l][i];
            for (wij, xj) in row.iter().zip(x) {
                z += wij * xj;
            }
            out.push(z);
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_tape(x).0
    }

    /// Forward pass that also returns the activations needed by `backward`.
    pub fn forward_tape(&self, x: &[f64]) -> (Vec<f64>, Tape) {
        assert_eq!(x.len(), self.dims[0], "input dim mismatch");
        let layers = self.dims.len() - 1;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers);
        let mut cur = x.to_vec();
        let mut z = Vec::new();
        for l in 0..layers {
            self.affine(l, &cur, &mut z);
            let last = l == layers - 1;
            let h: Vec<f64> = if last {
                match self.squash {
                    Squash::Linear => z.clone(),
                    Squash::Sigmoid => z.iter().map(|&v| sigmoid(v)).collect(),
                }
            } else {
                z.iter().map(|&v| v.tanh()).collect()
            };
            acts.push(h.clone());
            cur = h;
        }
        let out = acts.last().unwrap().clone();
        (out, Tape { input: x.to_vec(), acts })
    }

    /// Accumulates parameter gradients into `grads` and returns the
    /// gradient with respect to the input. `dl_dout` is the loss gradient
    /// at the squashed output.
    pub fn backward(&self, tape: &Tape, dl_dout: &[f64], grads: &mut Grads) -> Vec<f64> {
        let layers = self.dims.len() - 1;
        assert_eq!(dl_dout.len(), self.output_dim());
        // Gradient at the pre-activation of the current layer.
        let mut delta: Vec<f64> = match self.squash {
            Squash::Linear => dl_dout.to_vec(),
            Squash::Sigmoid => dl_dout
                .iter()
                .zip(&tape.acts[layers - 1])
                .map(|(&g, &s)| g * s * (1.0 - s))
                .collect(),
        };
        for l in (0..layers).rev() {
            let below: &[f64] = if l == 0 { &tape.input } else { &tape.acts[l - 1] };
            let (nin, nout) = (self.dims[l], self.dims[l + 1]);
            for i in 0..nout {
                grads.b[l][i] += delta[i];
                let row = &mut grads.w[l][i * nin..(i + 1) * nin];
                for (g, xj) in row.iter_mut().zip(below) {
                    *g += delta[i] * xj;
                }
            }
            let mut prev = vec![0.0; nin];
            for i in 0..nout {
                let row = &self.w[l][i * nin..(i + 1) * nin];
                for (p, wij) in prev.iter_mut().zip(row) {
                    *p += delta[i] * wij;
                }
            }
            if l > 0 {
                // Undo the tanh of the layer below.
                for (p, &h) in prev.iter_mut().zip(&tape.acts[l - 1]) {
                    *p *= 1.0 - h * h;
                }
            }
            delta = prev;
        }
        delta
    }

    pub fn param_count(&self) -> usize {
        self.w.iter().map(Vec::len).sum::<usize>() + self.b.iter().map(Vec::len).sum::<usize>()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in 0..self.w.len() {
            out.extend_from_slice(&self.w[l]);
            out.extend_from_slice(&self.b[l]);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "parameter count mismatch");
        let mut k = 0;
        for l in 0..self.w.len() {
            let nw = self.w[l].len();
            self.w[l].copy_from_slice(&flat[k..k + nw]);
            k += nw;
            let nb = self.b[l].len();
            self.b[l].copy_from_slice(&flat[k..k + nb]);
            k += nb;
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn squash(&self) -> Squash {
        self.squash
    }

    /// target <- rho * online + (1 - rho) * target, elementwise.
    pub fn soft_update_from(&mut self, online: &Mlp, rho: f64) {
        assert_eq!(self.dims, online.dims, "architecture mismatch");
        for l in 0..self.w.len() {
            for (t, &o) in self.w[l].iter_mut().zip(&online.w[l]) {
                *t = rho * o + (1.0 - rho) * *t;
            }
            for (t, &o) in self.b[l].iter_mut().zip(&online.b[l]) {
                *t = rho * o + (1.0 - rho) * *t;
            }
        }
    }
}

impl Grads {
    pub fn scale(&mut self, k: f64) {
        for l in &mut self.w {
            for g in l {
                *g *= k;
            }
        }
        for l in &mut self.b {
            for g in l {
                *g *= k;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        let ws = self.w.iter().flatten().fold(0.0f64, |m, g| m.max(g.abs()));
        self.b.iter().flatten().fold(ws, |m, g| m.max(g.abs()))
    }
}

/// Adam with bias correction; holds first/second moment buffers shaped
/// like the network it was built for.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    mw: Vec<Vec<f64>>,
    vw: Vec<Vec<f64>>,
    mb: Vec<Vec<f64>>,
    vb: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            mw: net.w.iter().map(|l| vec![0.0; l.len()]).collect(),
            vw: net.w.iter().map(|l| vec![0.0; l.len()]).collect(),
            mb: net.b.iter().map(|l| vec![0.0; l.len()]).collect(),
            vb: net.b.iter().map(|l| vec![0.0; l.len()]).collect(),
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Grads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let update = |p: &mut Vec<f64>, g: &[f64], m: &mut Vec<f64>, v: &mut Vec<f64>| {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        };
        for l in 0..net.w.len() {
            update(&mut net.w[l], &grads.w[l], &mut self.mw[l], &mut self.vw[l]);
            update(&mut net.b[l], &grads.b[l], &mut self.mb[l], &mut self.vb[l]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// 0.5 * ||f(x) - y||^2 and its exact input-side gradient.
    fn loss_and_grads(net: &Mlp, x: &[f64], y: &[f64]) -> (f64, Grads, Vec<f64>) {
        let (out, tape) = net.forward_tape(x);
        let loss = 0.5 * out.iter().zip(y).map(|(o, t)| (o - t) * (o - t)).sum::<f64>();
        let dl: Vec<f64> = out.iter().zip(y).map(|(o, t)| o - t).collect();
        let mut grads = net.zero_grads();
        let dx = net.backward(&tape, &dl, &mut grads);
        (loss, grads, dx)
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = Mlp::new(&[3, 8, 2], Squash::Linear, &mut rng(7));
        let b = Mlp::new(&[3, 8, 2], Squash::Linear, &mut rng(7));
        let c = Mlp::new(&[3, 8, 2], Squash::Linear, &mut rng(8));
        assert_eq!(a.flat_params(), b.flat_params());
        assert_ne!(a.flat_params(), c.flat_params());
    }

    #[test]
    fn sigmoid_head_stays_in_unit_interval() {
        let net = Mlp::new(&[4, 16, 16, 1], Squash::Sigmoid, &mut rng(3));
        let mut r = rng(11);
        for _ in 0..200 {
            let x: Vec<f64> = (0..4).map(|_| r.gen_range(-100.0..100.0)).collect();
            let out = net.forward(&x)[0];
            assert!((0.0..=1.0).contains(&out), "sigmoid escaped: {out}");
        }
    }

    #[test]
    fn backward_matches_central_differences() {
        for squash in [Squash::Linear, Squash::Sigmoid] {
            let mut net = Mlp::new(&[3, 10, 6, 2], squash, &mut rng(42));
            let mut r = rng(1);
            let x: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..2).map(|_| r.gen_range(-1.0..1.0)).collect();
            let (_, grads, _) = loss_and_grads(&net, &x, &y);
            let flat_grads = {
                // Flatten in the same order as flat_params.
                let mut out = Vec::new();
                for l in 0..grads.w.len() {
                    out.extend_from_slice(&grads.w[l]);
                    out.extend_from_slice(&grads.b[l]);
                }
                out
            };
            let base = net.flat_params();
            let h = 1e-6;
            for k in (0..base.len()).step_by(base.len() / 12 + 1) {
                let mut plus = base.clone();
                plus[k] += h;
                net.set_flat_params(&plus);
                let (lp, _, _) = loss_and_grads(&net, &x, &y);
                let mut minus = base.clone();
                minus[k] -= h;
                net.set_flat_params(&minus);
                let (lm, _, _) = loss_and_grads(&net, &x, &y);
                net.set_flat_params(&base);
                let fd = (lp - lm) / (2.0 * h);
                let scale = fd.abs().max(flat_grads[k].abs()).max(1e-8);
                assert!(
                    (fd - flat_grads[k]).abs() / scale < 1e-4,
                    "param {k} ({squash:?}): analytic {} vs fd {fd}",
                    flat_grads[k]
                );
            }
        }
    }

    #[test]
    fn input_gradient_matches_central_differences() {
        let net = Mlp::new(&[3, 8, 2], Squash::Linear, &mut rng(5));
        let x = vec![0.3, -0.7, 0.2];
        let y = vec![0.1, 0.4];
        let (_, _, dx) = loss_and_grads(&net, &x, &y);
        let h = 1e-6;
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            let (lp, _, _) = loss_and_grads(&net, &xp, &y);
            let (lm, _, _) = loss_and_grads(&net, &xm, &y);
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - dx[k]).abs() < 1e-6, "input {k}: {} vs {fd}", dx[k]);
        }
    }

    #[test]
    fn adam_fits_a_small_regression() {
        let mut net = Mlp::new(&[1, 16, 1], Squash::Linear, &mut rng(2));
        let mut opt = Adam::new(&net, 1e-2);
        let xs: Vec<f64> = (0..20).map(|i| -1.0 + i as f64 / 9.5).collect();
        let target = |x: f64| 0.5 * x - 0.3;
        let mut last = f64::INFINITY;
        for _ in 0..400 {
            let mut grads = net.zero_grads();
            let mut loss = 0.0;
            for &x in &xs {
                let (out, tape) = net.forward_tape(&[x]);
                let err = out[0] - target(x);
                loss += 0.5 * err * err;
                net.backward(&tape, &[err], &mut grads);
            }
            grads.scale(1.0 / xs.len() as f64);
            loss /= xs.len() as f64;
            opt.step(&mut net, &grads);
            last = loss;
        }
        assert!(last < 1e-4, "regression failed to fit: {last}");
    }

    #[test]
    fn soft_update_interpolates_parameters() {
        let online = Mlp::new(&[2, 4, 1], Squash::Linear, &mut rng(1));
        let mut target = Mlp::new(&[2, 4, 1], Squash::Linear, &mut rng(9));
        let before = target.flat_params();
        let rho = 0.25;
        target.soft_update_from(&online, rho);
        let after = target.flat_params();
        for ((t1, t0), o) in after.iter().zip(&before).zip(online.flat_params()) {
            assert!((t1 - (rho * o + (1.0 - rho) * t0)).abs() < 1e-15);
        }
        // rho = 1 copies exactly.
        target.soft_update_from(&online, 1.0);
        assert_eq!(target.flat_params(), online.flat_params());
    }

    #[test]
    fn flat_roundtrip_preserves_outputs() {
        let mut net = Mlp::new(&[5, 12, 3], Squash::Sigmoid, &mut rng(31));
        let x = vec![0.1, -0.2, 0.3, 0.7, -0.9];
        let before = net.forward(&x);
        let flat = net.flat_params();
        net.set_flat_params(&flat);
        assert_eq!(before, net.forward(&x));
    }
}
