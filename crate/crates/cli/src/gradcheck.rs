//! Self-contained gradient checks: central differences against the
//! parameter-shift rule on random circuits, and against backpropagation on
//! random classical layers.

use qtransfer::classicalnn::{softmax_ce, Activation, ConvBlock, ConvBlockConfig, Dense, Mode, Tensor};
use qtransfer::gradopt::{finite_diff_grad, parameter_shift_grad, relative_error};
use qtransfer::vqc::{param_count, qnn_forward_angles, VqcConfig, VqcParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Failure, GradcheckArgs};

const REL_FLOOR: f64 = 1e-6;
const CLASSICAL_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Default)]
struct Worst {
    error: f64,
    at: String,
}

impl Worst {
    fn update(&mut self, analytic: f64, numeric: f64, at: impl FnOnce() -> String) {
        let e = relative_error(analytic, numeric, REL_FLOOR);
        if e > self.error || e.is_nan() {
            self.error = e;
            self.at = at();
        }
    }
}

fn circuit_suite(seed: u64, circuits: usize, eps: f64) -> Result<Worst, Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = Worst::default();
    for c in 0..circuits {
        let cfg = VqcConfig::new(rng.random_range(1..=4), rng.random_range(1..=3));
        let angles: Vec<f64> = (0..param_count(&cfg)).map(|_| rng.random_range(-3.0..3.0)).collect();
        let encoding: Vec<f64> = (0..cfg.n_wires).map(|_| rng.random_range(-3.0..3.0)).collect();
        let weights: Vec<f64> = (0..cfg.n_wires).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |a: &[f64]| {
            let params = VqcParams::from_angles(&cfg, a.to_vec()).expect("angle count matches");
            let z = qnn_forward_angles(&encoding, &params, &cfg).expect("valid circuit");
            z.values().iter().zip(&weights).map(|(x, w)| x * w).sum::<f64>()
        };
        let shift = parameter_shift_grad(loss, &angles)?;
        let fd = finite_diff_grad(loss, &angles, eps)?;
        for (p, (a, n)) in shift.values().iter().zip(fd.values()).enumerate() {
            worst.update(*a, *n, || {
                format!("circuit {c} ({} wires, {} layers) parameter {p}", cfg.n_wires, cfg.n_layers)
            });
        }
    }
    Ok(worst)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches")
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn central<F: FnMut(f64) -> f64>(mut f: F) -> f64 {
    (f(CLASSICAL_STEP) - f(-CLASSICAL_STEP)) / (2.0 * CLASSICAL_STEP)
}

fn dense_checks(rng: &mut ChaCha8Rng, worst: &mut Worst) -> Result<(), Failure> {
    for act in [Activation::Relu, Activation::None] {
        let mut layer = Dense::new(5, 4, act, rng);
        let x = random_tensor(rng, vec![3, 5]);
        let r = random_tensor(rng, vec![3, 4]);
        layer.forward(&x)?;
        let (gx, g) = layer.backward(&r)?;
        let probe = |l: &Dense, x: &Tensor| dot(&l.clone().forward(x).expect("valid input"), &r);
        for i in 0..layer.weights.len() {
            let n = central(|d| {
                let mut l = layer.clone();
                l.weights.data_mut()[i] += d;
                probe(&l, &x)
            });
            worst.update(g.weights[i], n, || format!("dense {act:?} weight {i}"));
        }
        for i in 0..layer.bias.len() {
            let n = central(|d| {
                let mut l = layer.clone();
                l.bias.data_mut()[i] += d;
                probe(&l, &x)
            });
            worst.update(g.bias[i], n, || format!("dense {act:?} bias {i}"));
        }
        for i in 0..x.len() {
            let n = central(|d| {
                let mut xp = x.clone();
                xp.data_mut()[i] += d;
                probe(&layer, &xp)
            });
            worst.update(gx.data()[i], n, || format!("dense {act:?} input {i}"));
        }
    }
    Ok(())
}

fn conv_checks(rng: &mut ChaCha8Rng, worst: &mut Worst) -> Result<(), Failure> {
    let cfg = ConvBlockConfig {
        in_channels: 2,
        out_channels: 3,
        kernel: 5,
        stride: 2,
        pool: 2,
    };
    for mode in [Mode::Train, Mode::Eval] {
        let mut block = ConvBlock::new(cfg, rng)?;
        if mode == Mode::Eval {
            // non-trivial running statistics
            for v in block.bn_running_mean.data_mut() {
                *v = rng.random_range(-0.2..0.2);
            }
            for v in block.bn_running_var.data_mut() {
                *v = rng.random_range(0.5..1.5);
            }
        }
        let x = random_tensor(rng, vec![2, 2, 23]);
        let out = block.forward(&x, mode)?;
        let r = random_tensor(rng, out.shape().to_vec());
        let (gx, g) = block.backward(&r)?;
        let probe = |b: &ConvBlock, x: &Tensor| dot(&b.clone().forward(x, mode).expect("valid input"), &r);
        type Slot = fn(&mut ConvBlock) -> &mut [f64];
        let groups: [(&str, &[f64], Slot); 4] = [
            ("weights", &g.weights, |b| b.weights.data_mut()),
            ("bias", &g.bias, |b| b.bias.data_mut()),
            ("bn_gamma", &g.bn_gamma, |b| b.bn_gamma.data_mut()),
            ("bn_beta", &g.bn_beta, |b| b.bn_beta.data_mut()),
        ];
        for (name, analytic, slot) in groups {
            for (i, a) in analytic.iter().enumerate() {
                let n = central(|d| {
                    let mut b = block.clone();
                    slot(&mut b)[i] += d;
                    probe(&b, &x)
                });
                worst.update(*a, n, || format!("conv {mode:?} {name} {i}"));
            }
        }
        for i in 0..x.len() {
            let n = central(|d| {
                let mut xp = x.clone();
                xp.data_mut()[i] += d;
                probe(&block, &xp)
            });
            worst.update(gx.data()[i], n, || format!("conv {mode:?} input {i}"));
        }
    }
    Ok(())
}

fn ce_checks(rng: &mut ChaCha8Rng, worst: &mut Worst) -> Result<(), Failure> {
    let logits: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
    let label = rng.random_range(0..6);
    let (_, g) = softmax_ce(&logits, label)?;
    for i in 0..logits.len() {
        let n = central(|d| {
            let mut l = logits.clone();
            l[i] += d;
            softmax_ce(&l, label).expect("finite logits").0
        });
        worst.update(g[i], n, || format!("cross-entropy logit {i}"));
    }
    Ok(())
}

fn classical_suite(seed: u64) -> Result<Worst, Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut worst = Worst::default();
    dense_checks(&mut rng, &mut worst)?;
    conv_checks(&mut rng, &mut worst)?;
    ce_checks(&mut rng, &mut worst)?;
    Ok(worst)
}

pub fn run(a: &GradcheckArgs) -> Result<(), Failure> {
    if a.circuits == 0 {
        return Err(Failure::Usage("--circuits must be positive".into()));
    }
    let q = circuit_suite(a.seed, a.circuits, a.eps)?;
    println!(
        "circuits: {} random, eps {:e}: max relative error {:.3e} at {}",
        a.circuits, a.eps, q.error, q.at
    );
    let c = classical_suite(a.seed)?;
    println!(
        "classical layers, step {:e}: max relative error {:.3e} at {}",
        CLASSICAL_STEP, c.error, c.at
    );
    let worst = if c.error > q.error || c.error.is_nan() { c } else { q };
    if worst.error < a.threshold {
        println!("max relative error {:.3e} < {:e}", worst.error, a.threshold);
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "relative error {:.3e} >= {:e} at {}",
            worst.error, a.threshold, worst.at
        )))
    }
}
