//! Finite-difference gradient checks.
//!
//! A [`Probe`] builds a scalar graph from leaf inputs. The analytical
//! gradient is taken at the probe's precision; the central difference is
//! always evaluated in `f64` on the same (precision-rounded) inputs so the
//! reference itself is not limited by single-precision cancellation.
//! Error is measured as `|a - n|_2 / max(|a|_2, |n|_2)` over the checked
//! coordinates.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;

use super::{Mode, Real, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn step(self) -> f64 {
        match self {
            Precision::F32 => 1e-3,
            Precision::F64 => 1e-5,
        }
    }

    pub fn tolerance(self) -> f64 {
        match self {
            Precision::F32 => 1e-4,
            Precision::F64 => 1e-7,
        }
    }

    fn round(self, v: f64) -> f64 {
        match self {
            Precision::F32 => v as f32 as f64,
            Precision::F64 => v,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

/// A differentiable scalar function of some tensors.
pub trait Probe {
    fn name(&self) -> String;
    fn inputs(&self) -> Vec<Tensor<f64>>;
    fn build<T: Real>(&self, tape: &mut Tape<T>, inputs: &[Var]) -> Result<Var, TensorError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub precision: Precision,
    pub rel_error: f64,
    pub tolerance: f64,
    pub coords: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.rel_error.is_finite() && self.rel_error < self.tolerance
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<40} {} rel_error={:.3e} tol={:.0e} coords={}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.precision,
            self.rel_error,
            self.tolerance,
            self.coords
        )
    }
}

fn evaluate<P: Probe + ?Sized, T: Real>(
    probe: &P,
    inputs: &[Tensor<f64>],
) -> Result<(Tape<T>, Vec<Var>, Var), TensorError> {
    let mut tape = Tape::<T>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.cast())).collect();
    let out = probe.build(&mut tape, &vars)?;
    Ok((tape, vars, out))
}

fn analytical<P: Probe + ?Sized, T: Real>(probe: &P, inputs: &[Tensor<f64>]) -> Result<Vec<Vec<f64>>, TensorError> {
    let (tape, vars, out) = evaluate::<P, T>(probe, inputs)?;
    let grads = tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            grads
                .get(v)
                .map(|g| g.to_f64_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect())
}

fn scalar_value<P: Probe + ?Sized>(probe: &P, inputs: &[Tensor<f64>]) -> Result<f64, TensorError> {
    let (tape, _, out) = evaluate::<P, f64>(probe, inputs)?;
    Ok(tape.value(out).item())
}

/// Checks all coordinates, or a seeded random subset of `max_coords` of them.
pub fn check<P: Probe + ?Sized>(
    probe: &P,
    precision: Precision,
    max_coords: Option<usize>,
    seed: u64,
) -> Result<CheckResult, TensorError> {
    check_with_step(probe, precision, precision.step(), max_coords, seed)
}

/// As [`check`] with an explicit finite-difference step. Deep ReLU networks
/// need a step below the spacing of their kinks.
pub fn check_with_step<P: Probe + ?Sized>(
    probe: &P,
    precision: Precision,
    h: f64,
    max_coords: Option<usize>,
    seed: u64,
) -> Result<CheckResult, TensorError> {
    let mut inputs = probe.inputs();
    for t in &mut inputs {
        t.data_mut().iter_mut().for_each(|v| *v = precision.round(*v));
    }
    let grads = match precision {
        Precision::F32 => analytical::<P, f32>(probe, &inputs)?,
        Precision::F64 => analytical::<P, f64>(probe, &inputs)?,
    };
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect();
    let chosen: Vec<(usize, usize)> = match max_coords {
        Some(k) if k < coords.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample(&mut rng, coords.len(), k).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| coords[i]).collect()
        }
        _ => coords,
    };
    let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
    for &(i, j) in &chosen {
        let orig = inputs[i].data()[j];
        inputs[i].data_mut()[j] = orig + h;
        let fp = scalar_value(probe, &inputs)?;
        inputs[i].data_mut()[j] = orig - h;
        let fm = scalar_value(probe, &inputs)?;
        inputs[i].data_mut()[j] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let a = grads[i][j];
        diff += (a - numeric) * (a - numeric);
        na += a * a;
        nn += numeric * numeric;
    }
    let denom = na.sqrt().max(nn.sqrt());
    let rel_error = if denom == 0.0 { diff.sqrt() } else { diff.sqrt() / denom };
    Ok(CheckResult {
        name: probe.name(),
        precision,
        rel_error,
        tolerance: precision.tolerance(),
        coords: chosen.len(),
    })
}

/// Reduces a tensor to a scalar through fixed random weights so every
/// output element contributes a distinct amount.
pub fn project<T: Real>(tape: &mut Tape<T>, v: Var, seed: u64) -> Result<Var, TensorError> {
    let shape = tape.value(v).shape().to_vec();
    let w = random_tensor(&shape, seed, -1.0, 1.0);
    let wc = tape.constant(w.cast());
    let prod = tape.mul(v, wc)?;
    Ok(tape.sum(prod))
}

pub fn random_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values uniform in `±[lo, hi]`, keeping away from the ReLU kink.
fn away_from_zero(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(lo..hi);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

#[derive(Debug, Clone)]
enum OpProbe {
    Add,
    Mul,
    Scale,
    FanOut,
    Relu,
    Sigmoid,
    Conv {
        in_ch: usize,
        out_ch: usize,
        size: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        padding: usize,
        bias: bool,
    },
    Dense,
    BatchNormTrain,
    BatchNormEval,
    GlobalAvgPool,
    Dropout,
    SpatialDropout,
    GaussianNoise,
    WeightedBce,
}

impl Probe for OpProbe {
    fn name(&self) -> String {
        match self {
            OpProbe::Conv {
                kernel,
                stride,
                dilation,
                padding,
                bias,
                ..
            } => format!(
                "conv2d k{kernel} s{stride} d{dilation} p{padding}{}",
                if *bias { " bias" } else { "" }
            ),
            other => format!("{other:?}").to_lowercase(),
        }
    }

    fn inputs(&self) -> Vec<Tensor<f64>> {
        match self {
            OpProbe::Add | OpProbe::Mul => vec![
                random_tensor(&[2, 3], 1, -1.0, 1.0),
                random_tensor(&[2, 3], 2, -1.0, 1.0),
            ],
            OpProbe::Scale | OpProbe::Sigmoid => vec![random_tensor(&[3, 4], 3, -3.0, 3.0)],
            OpProbe::FanOut => vec![random_tensor(&[4], 4, 0.2, 1.5)],
            OpProbe::Relu => vec![away_from_zero(&[3, 5], 5, 0.05, 2.0)],
            OpProbe::Conv {
                in_ch,
                out_ch,
                size,
                kernel,
                bias,
                ..
            } => {
                let mut v = vec![
                    random_tensor(&[2, *in_ch, *size, *size], 6, -1.0, 1.0),
                    random_tensor(&[*out_ch, *in_ch, *kernel, *kernel], 7, -0.5, 0.5),
                ];
                if *bias {
                    v.push(random_tensor(&[*out_ch], 8, -0.5, 0.5));
                }
                v
            }
            OpProbe::Dense => vec![
                random_tensor(&[3, 5], 9, -1.0, 1.0),
                random_tensor(&[4, 5], 10, -0.5, 0.5),
                random_tensor(&[4], 11, -0.5, 0.5),
            ],
            OpProbe::BatchNormTrain | OpProbe::BatchNormEval => vec![
                random_tensor(&[3, 2, 3, 3], 12, -2.0, 2.0),
                random_tensor(&[2], 13, 0.5, 1.5),
                random_tensor(&[2], 14, -0.5, 0.5),
            ],
            OpProbe::GlobalAvgPool | OpProbe::Dropout | OpProbe::SpatialDropout | OpProbe::GaussianNoise => {
                vec![random_tensor(&[2, 3, 4, 4], 15, -1.0, 1.0)]
            }
            OpProbe::WeightedBce => vec![random_tensor(&[5, 4], 16, -3.0, 3.0)],
        }
    }

    fn build<T: Real>(&self, tape: &mut Tape<T>, x: &[Var]) -> Result<Var, TensorError> {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let out = match self {
            OpProbe::Add => tape.add(x[0], x[1])?,
            OpProbe::Mul => tape.mul(x[0], x[1])?,
            OpProbe::Scale => tape.scale(x[0], T::from_f64(-1.75)),
            OpProbe::FanOut => {
                // f = x*x + sigmoid(x*x) * x
                let sq = tape.mul(x[0], x[0])?;
                let s = tape.sigmoid(sq);
                let sx = tape.mul(s, x[0])?;
                tape.add(sq, sx)?
            }
            OpProbe::Relu => tape.relu(x[0]),
            OpProbe::Sigmoid => tape.sigmoid(x[0]),
            OpProbe::Conv {
                stride,
                dilation,
                padding,
                bias,
                ..
            } => tape.conv2d(x[0], x[1], bias.then(|| x[2]), *stride, *dilation, *padding)?,
            OpProbe::Dense => tape.dense(x[0], x[1], Some(x[2]))?,
            OpProbe::BatchNormTrain => tape.batch_norm_train(x[0], x[1], x[2], 1e-5)?.0,
            OpProbe::BatchNormEval => {
                let mean = [T::from_f64(0.3), T::from_f64(-0.2)];
                let var = [T::from_f64(1.4), T::from_f64(0.6)];
                tape.batch_norm_eval(x[0], x[1], x[2], &mean, &var, 1e-5)?
            }
            OpProbe::GlobalAvgPool => tape.global_avg_pool(x[0])?,
            OpProbe::Dropout => tape.dropout(x[0], 0.5, Mode::Train, &mut rng)?,
            OpProbe::SpatialDropout => tape.spatial_dropout(x[0], 0.2, Mode::Train, &mut rng)?,
            OpProbe::GaussianNoise => {
                let n = tape.gaussian_noise(x[0], 0.3, Mode::Train, &mut rng)?;
                tape.mul(n, n)?
            }
            OpProbe::WeightedBce => {
                let y = [1, 0, 0, 1, 1, 1, 0, 0, 0, 1, 0, 1, 1, 0, 1, 0, 0, 0, 1, 1];
                let w1: Vec<f64> = (0..20).map(|i| 0.2 + 0.03 * i as f64).collect();
                let w0: Vec<f64> = w1.iter().map(|w| 1.0 - w).collect();
                return tape.weighted_bce(x[0], &y, &w1, &w0);
            }
        };
        project(tape, out, 99)
    }
}

fn op_probes() -> Vec<OpProbe> {
    let conv = |kernel, stride, dilation, padding, bias| OpProbe::Conv {
        in_ch: 3,
        out_ch: 4,
        size: 7,
        kernel,
        stride,
        dilation,
        padding,
        bias,
    };
    vec![
        OpProbe::Add,
        OpProbe::Mul,
        OpProbe::Scale,
        OpProbe::FanOut,
        OpProbe::Relu,
        OpProbe::Sigmoid,
        conv(3, 1, 1, 1, true),
        conv(3, 1, 2, 2, false),
        conv(3, 2, 1, 1, false),
        conv(1, 1, 1, 0, false),
        conv(1, 2, 1, 0, false),
        OpProbe::Dense,
        OpProbe::BatchNormTrain,
        OpProbe::BatchNormEval,
        OpProbe::GlobalAvgPool,
        OpProbe::Dropout,
        OpProbe::SpatialDropout,
        OpProbe::GaussianNoise,
        OpProbe::WeightedBce,
    ]
}

/// Every differentiable op at both precisions.
pub fn op_suite() -> Result<Vec<CheckResult>, TensorError> {
    let mut out = Vec::new();
    for p in op_probes() {
        for precision in [Precision::F64, Precision::F32] {
            out.push(check(&p, precision, None, 0)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ops_pass_at_both_precisions() {
        let results = op_suite().unwrap();
        let failures: Vec<String> = results.iter().filter(|r| !r.passed()).map(|r| r.to_string()).collect();
        assert!(failures.is_empty(), "{failures:#?}");
        assert_eq!(results.len(), 2 * op_probes().len());
    }

    struct Broken;

    impl Probe for Broken {
        fn name(&self) -> String {
            "deliberately wrong gradient".into()
        }
        fn inputs(&self) -> Vec<Tensor<f64>> {
            vec![random_tensor(&[3], 1, 0.5, 1.0)]
        }
        fn build<T: Real>(&self, tape: &mut Tape<T>, x: &[Var]) -> Result<Var, TensorError> {
            // x*x but the second factor is detached: gradient is half the truth
            let c = tape.constant(tape.value(x[0]).clone());
            let p = tape.mul(x[0], c)?;
            Ok(tape.sum(p))
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let r = check(&Broken, Precision::F64, None, 0).unwrap();
        assert!(!r.passed());
        assert!(r.rel_error > 0.4);
    }

    #[test]
    fn subsampling_is_deterministic() {
        let p = OpProbe::Dense;
        let a = check(&p, Precision::F64, Some(7), 3).unwrap();
        let b = check(&p, Precision::F64, Some(7), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.coords, 7);
    }
}
