//! Checks shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use syncgan::data::{audio_to_2d, load_idx, rotate90, RawImageCorpus};
use syncgan::inversion::{invert_latent, InversionConfig};
use syncgan::losses::{
    discriminator_loss, generator_adv_loss, generator_sync_loss, synchronizer_loss, Phase, SCORE_EPS,
};
use syncgan::model::append_batch_variance;
use syncgan::nn::{Activation, DenseLayer, Mlp, LEAKY_SLOPE};
use syncgan::{Architecture, Modality, SyncGanModel, SynchronizerVariant, Tape, Tensor, TensorError, Var};

pub type TResult<T> = Result<T, TensorError>;

pub const FD_STEP: f64 = 1e-5;
pub const FD_INSTANCES: usize = 10;
/// Denominator floor of the relative error; only guards against 0/0.
pub const REL_FLOOR: f64 = 1e-6;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

/// MNIST digits 0 and 1 shipped with the tests.
pub fn mnist01() -> RawImageCorpus {
    let d = fixture_dir();
    load_idx(
        &d.join("mnist01-images-idx3-ubyte.gz"),
        &d.join("mnist01-labels-idx1-ubyte.gz"),
    )
    .expect("fixture corpus")
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Uniform values kept at least `margin` away from every kink.
fn avoiding(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64, kinks: &[f64], margin: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v = rng.random_range(lo..hi);
            if kinks.iter().all(|k| (v - k).abs() > margin) {
                break v;
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..=5)
}

fn mat(rng: &mut ChaCha8Rng) -> Tensor {
    let s = vec![dim(rng), dim(rng)];
    uniform(rng, s, -2.0, 2.0)
}

fn two_same(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let s = vec![dim(rng), dim(rng)];
    vec![uniform(rng, s.clone(), -2.0, 2.0), uniform(rng, s, -2.0, 2.0)]
}

fn scores(rng: &mut ChaCha8Rng) -> Tensor {
    let n = rng.random_range(1..=6);
    uniform(rng, vec![n, 1], 0.05, 0.95)
}

/// One differentiable computation with its random input generator.
pub struct GradCase {
    pub name: &'static str,
    pub inputs: fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    pub build: fn(&mut Tape, &[Var]) -> TResult<Var>,
}

pub fn grad_cases() -> Vec<GradCase> {
    vec![
        GradCase {
            name: "matmul",
            inputs: |r| {
                let (m, k, n) = (dim(r), dim(r), dim(r));
                vec![uniform(r, vec![m, k], -2.0, 2.0), uniform(r, vec![k, n], -2.0, 2.0)]
            },
            build: |t, v| t.matmul(v[0], v[1]),
        },
        GradCase {
            name: "add",
            inputs: two_same,
            build: |t, v| t.add(v[0], v[1]),
        },
        GradCase {
            name: "add_bias",
            inputs: |r| {
                let (m, n) = (dim(r), dim(r));
                vec![uniform(r, vec![m, n], -2.0, 2.0), uniform(r, vec![n], -2.0, 2.0)]
            },
            build: |t, v| t.add(v[0], v[1]),
        },
        GradCase {
            name: "sub",
            inputs: two_same,
            build: |t, v| t.sub(v[0], v[1]),
        },
        GradCase {
            name: "mul",
            inputs: two_same,
            build: |t, v| t.mul(v[0], v[1]),
        },
        GradCase {
            name: "scale",
            inputs: |r| vec![mat(r)],
            build: |t, v| Ok(t.scale(v[0], -1.7)),
        },
        GradCase {
            name: "add_scalar",
            inputs: |r| vec![mat(r)],
            build: |t, v| Ok(t.add_scalar(v[0], 0.3)),
        },
        GradCase {
            name: "rsub_scalar",
            inputs: |r| vec![mat(r)],
            build: |t, v| Ok(t.rsub_scalar(1.0, v[0])),
        },
        GradCase {
            name: "leaky_relu",
            inputs: |r| {
                let s = vec![dim(r), dim(r)];
                vec![avoiding(r, s, -2.0, 2.0, &[0.0], 1e-3)]
            },
            build: |t, v| Ok(t.leaky_relu(v[0], LEAKY_SLOPE)),
        },
        GradCase {
            name: "tanh",
            inputs: |r| vec![mat(r)],
            build: |t, v| Ok(t.tanh(v[0])),
        },
        GradCase {
            name: "sigmoid",
            inputs: |r| vec![mat(r)],
            build: |t, v| Ok(t.sigmoid(v[0])),
        },
        GradCase {
            name: "log",
            inputs: |r| {
                let s = vec![dim(r), dim(r)];
                vec![uniform(r, s, 0.1, 3.0)]
            },
            build: |t, v| t.log(v[0]),
        },
        GradCase {
            name: "clamp",
            inputs: |r| {
                let s = vec![dim(r), dim(r)];
                vec![avoiding(r, s, -1.0, 1.0, &[-0.5, 0.5], 1e-3)]
            },
            build: |t, v| Ok(t.clamp(v[0], -0.5, 0.5)),
        },
        GradCase {
            name: "mean",
            inputs: |r| vec![mat(r)],
            build: |t, v| t.mean(v[0]),
        },
        GradCase {
            name: "sum",
            inputs: |r| vec![mat(r)],
            build: |t, v| Ok(t.sum(v[0])),
        },
        GradCase {
            name: "concat_rows",
            inputs: |r| {
                let n = dim(r);
                let (a, b) = (dim(r), dim(r));
                vec![uniform(r, vec![a, n], -2.0, 2.0), uniform(r, vec![b, n], -2.0, 2.0)]
            },
            build: |t, v| t.concat(&[v[0], v[1]], 0),
        },
        GradCase {
            name: "concat_cols",
            inputs: |r| {
                let m = dim(r);
                let (a, b, c) = (dim(r), dim(r), dim(r));
                vec![
                    uniform(r, vec![m, a], -2.0, 2.0),
                    uniform(r, vec![m, b], -2.0, 2.0),
                    uniform(r, vec![m, c], -2.0, 2.0),
                ]
            },
            build: |t, v| t.concat(&[v[0], v[1], v[2]], 1),
        },
        GradCase {
            name: "reshape",
            inputs: |r| vec![mat(r)],
            build: |t, v| {
                let s = t.shape(v[0]).to_vec();
                let flat = t.reshape(v[0], vec![s[0] * s[1]])?;
                let sq = t.mul(flat, flat)?;
                t.reshape(sq, vec![s[1], s[0]])
            },
        },
        GradCase {
            name: "slice_rows",
            inputs: |r| {
                let s = vec![rng_at_least(r, 2), dim(r)];
                vec![uniform(r, s, -2.0, 2.0)]
            },
            build: |t, v| {
                let m = t.shape(v[0])[0];
                t.slice_rows(v[0], 1, m - 1)
            },
        },
        GradCase {
            name: "slice_cols",
            inputs: |r| {
                let s = vec![dim(r), rng_at_least(r, 2)];
                vec![uniform(r, s, -2.0, 2.0)]
            },
            build: |t, v| {
                let n = t.shape(v[0])[1];
                t.slice(v[0], 1, 0, n - 1)
            },
        },
        GradCase {
            name: "log_softmax",
            inputs: |r| vec![mat(r)],
            build: |t, v| t.log_softmax(v[0]),
        },
        GradCase {
            name: "dense_stack",
            inputs: |r| {
                let (b, i, h, o) = (dim(r), dim(r), dim(r), dim(r));
                vec![
                    uniform(r, vec![b, i], -1.0, 1.0),
                    uniform(r, vec![i, h], -1.0, 1.0),
                    uniform(r, vec![h], -1.0, 1.0),
                    uniform(r, vec![h, o], -1.0, 1.0),
                    uniform(r, vec![o], -1.0, 1.0),
                ]
            },
            build: |t, v| {
                let z = t.matmul(v[0], v[1])?;
                let z = t.add(z, v[2])?;
                let h = t.tanh(z);
                let z = t.matmul(h, v[3])?;
                let z = t.add(z, v[4])?;
                Ok(t.sigmoid(z))
            },
        },
        GradCase {
            name: "batch_variance",
            inputs: |r| {
                let s = vec![rng_at_least(r, 2), dim(r)];
                vec![uniform(r, s, -1.0, 1.0)]
            },
            build: |t, v| append_batch_variance(t, v[0]),
        },
        GradCase {
            name: "discriminator_loss",
            inputs: |r| vec![scores(r), scores(r)],
            build: |t, v| Ok(discriminator_loss(t, v[0], v[1], Phase::Disc1)?.var),
        },
        GradCase {
            name: "generator_adv_loss",
            inputs: |r| vec![scores(r)],
            build: |t, v| Ok(generator_adv_loss(t, v[0], Phase::Gen1Adv)?.var),
        },
        GradCase {
            name: "synchronizer_loss",
            inputs: |r| vec![scores(r), scores(r)],
            build: |t, v| Ok(synchronizer_loss(t, v[0], v[1])?.var),
        },
        GradCase {
            name: "generator_sync_loss",
            inputs: |r| vec![scores(r), scores(r)],
            build: |t, v| Ok(generator_sync_loss(t, v[0], v[1])?.var),
        },
    ]
}

fn rng_at_least(r: &mut ChaCha8Rng, lo: usize) -> usize {
    r.random_range(lo..=5)
}

/// `Σ w ⊙ f(inputs)` with fixed weights, so one scalar probes the whole Jacobian.
fn probe(
    case: &GradCase,
    inputs: &[Tensor],
    weights: Option<&[f64]>,
    track: bool,
) -> TResult<(f64, Vec<Vec<f64>>, Vec<f64>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|x| {
            let mut x = x.clone();
            x.set_requires_grad(track);
            if track {
                tape.leaf(&x)
            } else {
                tape.constant(&x)
            }
        })
        .collect();
    let out = (case.build)(&mut tape, &vars)?;
    let n = tape.value(out).len();
    let w: Vec<f64> = match weights {
        Some(w) => w.to_vec(),
        None => (0..n).map(|i| 0.5 + ((i * 7919) % 13) as f64 / 13.0).collect(),
    };
    let flat = tape.reshape(out, vec![n])?;
    let wv = tape.constant(&Tensor::new(vec![n], w.clone())?);
    let prod = tape.mul(flat, wv)?;
    let s = tape.sum(prod);
    let value = tape.scalar(s);
    if !track {
        return Ok((value, Vec::new(), w));
    }
    let grads = tape.backward(s)?;
    let g = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| grads.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.len()]))
        .collect();
    Ok((value, g, w))
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Largest relative error between analytic and central-difference gradients
/// over every input element of one instance.
pub fn gradcheck(case: &GradCase, inputs: &[Tensor]) -> TResult<f64> {
    let (_, analytic, w) = probe(case, inputs, None, true)?;
    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        for k in 0..x.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= FD_STEP;
            let fp = probe(case, &plus, Some(&w), false)?.0;
            let fm = probe(case, &minus, Some(&w), false)?.0;
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[i][k], numeric));
        }
    }
    Ok(worst)
}

/// Worst relative error of each case over `FD_INSTANCES` random instances.
pub fn gradient_suite(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    grad_cases()
        .iter()
        .map(|case| {
            let worst = (0..FD_INSTANCES)
                .map(|_| {
                    let inputs = (case.inputs)(&mut rng);
                    gradcheck(case, &inputs).unwrap_or(f64::INFINITY)
                })
                .fold(0.0, f64::max);
            (case.name, worst)
        })
        .collect()
}

// ---------------------------------------------------------------- oracles

pub fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.data()[i * k + p] * b.data()[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::LeakyRelu => {
            if x > 0.0 {
                x
            } else {
                LEAKY_SLOPE * x
            }
        }
        Activation::Tanh => x.tanh(),
        Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        Activation::Identity => x,
    }
}

/// Scalar-loop forward pass of a dense network.
pub fn naive_mlp(net: &Mlp, x: &Tensor) -> Vec<f64> {
    let mut h = x.data().to_vec();
    let rows = x.rows();
    for layer in net.layers() {
        let (i_dim, o_dim) = (layer.in_dim(), layer.out_dim());
        let mut next = vec![0.0; rows * o_dim];
        for r in 0..rows {
            for o in 0..o_dim {
                let mut s = layer.bias.data()[o];
                for i in 0..i_dim {
                    s += h[r * i_dim + i] * layer.weight.data()[i * o_dim + o];
                }
                next[r * o_dim + o] = act(layer.activation, s);
            }
        }
        h = next;
    }
    h
}

fn clamp_score(p: f64) -> f64 {
    p.clamp(SCORE_EPS, 1.0 - SCORE_EPS)
}

/// `mean(ln p⁺) + mean(ln(1 - p⁻))` by plain loops.
pub fn naive_two_sided(pos: &[f64], neg: &[f64]) -> f64 {
    let a: f64 = pos.iter().map(|&p| clamp_score(p).ln()).sum::<f64>() / pos.len() as f64;
    let b: f64 = neg.iter().map(|&p| (1.0 - clamp_score(p)).ln()).sum::<f64>() / neg.len() as f64;
    a + b
}

pub fn naive_adv(fake: &[f64]) -> f64 {
    fake.iter().map(|&p| clamp_score(p).ln()).sum::<f64>() / fake.len() as f64
}

/// Counter-clockwise quarter turn by coordinate mapping: the pixel at
/// `(r, c)` moves to `(n - 1 - c, r)`.
pub fn naive_rotate(img: &[u8], n: usize) -> Vec<u8> {
    let mut out = vec![0u8; n * n];
    for r in 0..n {
        for c in 0..n {
            out[(n - 1 - c) * n + r] = img[r * n + c];
        }
    }
    out
}

/// Column-by-column raster: sample `4t`, divided by the peak of the
/// decimated clip, mapped to the nearest of 64 rows (halves up).
pub fn naive_audio_raster(wave: &[f64]) -> Vec<f64> {
    let samples: Vec<f64> = (0..128).map(|t| wave[4 * t]).collect();
    let peak = samples.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut grid = vec![-1.0; 64 * 128];
    for (t, s) in samples.iter().enumerate() {
        let v = if peak > 0.0 { s / peak } else { 0.0 };
        let row = ((v + 1.0) * 31.5 + 0.5).floor().min(63.0) as usize;
        grid[row * 128 + t] = 1.0;
    }
    grid
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Worst absolute deviation from the scalar oracles, per operation.
pub fn oracle_suite(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (m, k, n) = (rng.random_range(1..9), rng.random_range(1..9), rng.random_range(1..9));
        let a = uniform(&mut rng, vec![m, k], -3.0, 3.0);
        let b = uniform(&mut rng, vec![k, n], -3.0, 3.0);
        let mut t = Tape::new();
        let (va, vb) = (t.constant(&a), t.constant(&b));
        let c = t.matmul(va, vb).unwrap();
        worst = worst.max(max_abs_diff(t.value(c), &naive_matmul(&a, &b)));
    }
    out.push(("matmul", worst));

    let mut worst = 0.0f64;
    for _ in 0..10 {
        let dims = [
            rng.random_range(1..8),
            rng.random_range(1..8),
            rng.random_range(1..8),
            rng.random_range(1..8),
        ];
        let hidden = [Activation::LeakyRelu, Activation::Tanh][rng.random_range(0..2)];
        let output = [Activation::Tanh, Activation::Sigmoid, Activation::Identity][rng.random_range(0..3)];
        let net = Mlp::build(&dims, hidden, output, &mut rng).unwrap();
        let rows = rng.random_range(1..6);
        let x = uniform(&mut rng, vec![rows, dims[0]], -2.0, 2.0);
        worst = worst.max(max_abs_diff(net.predict(&x).unwrap().data(), &naive_mlp(&net, &x)));
    }
    out.push(("mlp_forward", worst));

    type TwoSided = fn(&mut Tape, Var, Var) -> TResult<f64>;
    let two_sided: [(&'static str, TwoSided); 3] = [
        ("discriminator_loss", |t, a, b| {
            Ok(discriminator_loss(t, a, b, Phase::Disc2)?.value(t))
        }),
        ("synchronizer_loss", |t, a, b| Ok(synchronizer_loss(t, a, b)?.value(t))),
        ("generator_sync_loss", |t, a, b| {
            Ok(generator_sync_loss(t, a, b)?.value(t))
        }),
    ];
    for (name, f) in two_sided {
        let mut worst = 0.0f64;
        for _ in 0..20 {
            // include saturated scores so the clamp is exercised
            let (np, nq) = (rng.random_range(1..9), rng.random_range(1..9));
            let p = uniform(&mut rng, vec![np, 1], -0.05, 1.05);
            let q = uniform(&mut rng, vec![nq, 1], -0.05, 1.05);
            let mut t = Tape::new();
            let (vp, vq) = (t.constant(&p), t.constant(&q));
            let got = f(&mut t, vp, vq).unwrap();
            worst = worst.max((got - naive_two_sided(p.data(), q.data())).abs());
        }
        out.push((name, worst));
    }
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let np = rng.random_range(1..9);
        let p = uniform(&mut rng, vec![np, 1], -0.05, 1.05);
        let mut t = Tape::new();
        let vp = t.constant(&p);
        let got = generator_adv_loss(&mut t, vp, Phase::Gen2Adv).unwrap().value(&t);
        worst = worst.max((got - naive_adv(p.data())).abs());
    }
    out.push(("generator_adv_loss", worst));

    let mut worst = 0.0f64;
    for _ in 0..10 {
        let n = rng.random_range(1..12);
        let count = rng.random_range(1..4);
        let images: Vec<u8> = (0..n * n * count).map(|_| rng.random()).collect();
        let corpus = RawImageCorpus::new(images, vec![0; count], n, n).unwrap();
        let rotated = rotate90(&corpus).unwrap();
        for i in 0..count {
            let expect = naive_rotate(corpus.image(i), n);
            let d = rotated
                .image(i)
                .iter()
                .zip(&expect)
                .map(|(&a, &b)| (a as f64 - b as f64).abs())
                .fold(0.0, f64::max);
            worst = worst.max(d);
        }
    }
    out.push(("rotate90", worst));

    let mut worst = 0.0f64;
    let tone: Vec<f64> = (0..8000)
        .map(|i| (std::f64::consts::TAU * 440.0 * i as f64 / 8000.0).sin())
        .collect();
    let mut waves = vec![tone];
    for _ in 0..10 {
        let len = rng.random_range(512..700);
        waves.push((0..len).map(|_| rng.random_range(-3.0..3.0)).collect());
    }
    for w in &waves {
        worst = worst.max(max_abs_diff(audio_to_2d(w).unwrap().data(), &naive_audio_raster(w)));
    }
    out.push(("audio_to_2d", worst));
    out
}

// ---------------------------------------------------------------- routing

fn max_abs_grad<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> f64 {
    params
        .into_iter()
        .flat_map(|p| p.grad().map(<[f64]>::to_vec).unwrap_or_default())
        .map(f64::abs)
        .fold(0.0, f64::max)
}

pub struct Routing {
    /// Largest |∂| reaching the synchronizer from the generator sync loss.
    pub sync_from_gen_loss: f64,
    /// Largest |∂| reaching the generators from the same loss.
    pub gen_from_gen_loss: f64,
    /// Largest |∂| reaching the generators from the synchronizer loss.
    pub gen_from_sync_loss: f64,
    /// Largest |∂| reaching the synchronizer from its own loss.
    pub sync_from_sync_loss: f64,
}

/// Backpropagates each synchronization loss with the other side bound as
/// constants, as training does, and measures where gradient arrives.
pub fn routing_check(variant: SynchronizerVariant, seed: u64) -> Routing {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = Architecture {
        generator_hidden: vec![8],
        discriminator_hidden: vec![8],
        sync_feature_dim: 4,
        sync_extractor_hidden: vec![6],
        sync_fusion_hidden: vec![6],
        style_sync_hidden: vec![8],
        minibatch_feature: false,
    };
    let mut model = SyncGanModel::new(3, [5, 7], variant, &arch, &mut rng).unwrap();
    let z = Tensor::randn(vec![6, 3], &mut rng);
    let z_other = Tensor::randn(vec![6, 3], &mut rng);

    model.zero_grad();
    let mut tape = Tape::new();
    let bg1 = model.g1.bind(&mut tape, true);
    let bg2 = model.g2.bind(&mut tape, true);
    let bs = model.sync.bind(&mut tape, false);
    let (va, vb) = (tape.constant(&z), tape.constant(&z_other));
    let x1 = model.g1.forward(&mut tape, &bg1, va).unwrap();
    let x2 = model.g2.forward(&mut tape, &bg2, va).unwrap();
    let x2b = model.g2.forward(&mut tape, &bg2, vb).unwrap();
    let same = model.sync.forward(&mut tape, &bs, x1, x2).unwrap();
    let diff = model.sync.forward(&mut tape, &bs, x1, x2b).unwrap();
    let l = generator_sync_loss(&mut tape, same, diff).unwrap();
    let grads = tape.backward(l.var).unwrap();
    model.g1.accumulate_grads(&grads, &bg1).unwrap();
    model.g2.accumulate_grads(&grads, &bg2).unwrap();
    model.sync.accumulate_grads(&grads, &bs).unwrap();
    let sync_from_gen_loss = max_abs_grad(model.sync.named_params("s").into_iter().map(|(_, p)| p));
    let gen_from_gen_loss = max_abs_grad(model.g1.params().into_iter().chain(model.g2.params()));

    model.zero_grad();
    let mut tape = Tape::new();
    let bg1 = model.g1.bind(&mut tape, false);
    let bg2 = model.g2.bind(&mut tape, false);
    let bs = model.sync.bind(&mut tape, true);
    let (va, vb) = (tape.constant(&z), tape.constant(&z_other));
    let x1 = model.g1.forward(&mut tape, &bg1, va).unwrap();
    let x2 = model.g2.forward(&mut tape, &bg2, va).unwrap();
    let x2b = model.g2.forward(&mut tape, &bg2, vb).unwrap();
    let pos = model.sync.forward(&mut tape, &bs, x1, x2).unwrap();
    let neg = model.sync.forward(&mut tape, &bs, x1, x2b).unwrap();
    let l = synchronizer_loss(&mut tape, pos, neg).unwrap();
    let grads = tape.backward(l.var).unwrap();
    model.g1.accumulate_grads(&grads, &bg1).unwrap();
    model.g2.accumulate_grads(&grads, &bg2).unwrap();
    model.sync.accumulate_grads(&grads, &bs).unwrap();
    Routing {
        sync_from_gen_loss,
        gen_from_gen_loss,
        gen_from_sync_loss: max_abs_grad(model.g1.params().into_iter().chain(model.g2.params())),
        sync_from_sync_loss: max_abs_grad(model.sync.named_params("s").into_iter().map(|(_, p)| p)),
    }
}

/// Shorthand used by several trainer tests.
pub fn modality(i: u8) -> Modality {
    Modality::try_from(i).unwrap()
}

/// Rows of `A` (8×4): the identity stacked on a small mixing block.
pub const A: [[f64; 4]; 8] = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
    [0.5, -0.3, 0.2, 0.1],
    [-0.2, 0.4, 0.3, -0.5],
    [0.3, 0.1, -0.4, 0.2],
    [0.1, 0.2, 0.1, 0.6],
];

/// `G(z) = A z` as a one-layer network (`x = z Aᵀ`).
pub fn linear(a: &[[f64; 4]]) -> Mlp {
    let (out, inp) = (a.len(), 4);
    let mut w = vec![0.0; inp * out];
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            w[j * out + i] = *v;
        }
    }
    let layer = DenseLayer::from_parts(
        Tensor::param(vec![inp, out], w).unwrap(),
        Tensor::param(vec![out], vec![0.0; out]).unwrap(),
        Activation::Identity,
    )
    .unwrap();
    Mlp::new(vec![layer]).unwrap()
}

/// Solves `M y = b` by Gaussian elimination with partial pivoting.
fn solve(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut y = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| m[r][k] * y[k]).sum();
        y[r] = (b[r] - s) / m[r][r];
    }
    y
}

/// Least-squares solution `A⁺x = (AᵀA)⁻¹ Aᵀ x`.
pub fn pseudo_inverse_apply(x: &[f64]) -> Vec<f64> {
    let ata = (0..4)
        .map(|i| (0..4).map(|j| (0..8).map(|r| A[r][i] * A[r][j]).sum()).collect())
        .collect();
    let atx = (0..4).map(|i| (0..8).map(|r| A[r][i] * x[r]).sum()).collect();
    solve(ata, atx)
}

/// Largest deviation between gradient-descent inversion of `G(z) = A z` and
/// the least-squares solution, over five targets off the range of `A`.
pub fn linear_inversion_error(seed: u64) -> f64 {
    let g = linear(&A);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::randn(vec![5, 8], &mut rng);
    let cfg = InversionConfig {
        tol: 0.0,
        max_steps: 2000,
        ..InversionConfig::default()
    };
    let inv = invert_latent(&g, &x, &cfg, &mut rng).unwrap();
    let mut worst = 0.0f64;
    for r in 0..5 {
        let expect = pseudo_inverse_apply(x.row(r));
        worst = worst.max(max_abs_diff(inv.z_hat.row(r), &expect));
    }
    worst
}
