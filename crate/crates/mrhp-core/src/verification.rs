//! Runnable gradient verification: per-op finite-difference checks at
//! random non-degenerate points, and a full-model check at tiny dimensions.
//!
//! Used by the `gradcheck` CLI subcommand and by the test suites, so there
//! is exactly one definition of what "every op passes FD" means.

use crate::config::TrainConfig;
use crate::dataset::{generate_synthetic, SyntheticSpec};
use crate::model::{ModelDims, MrhpModel};
use crate::objectives::{
    adaptive_contrastive, ranking_loss, total_loss, ContrastiveConfig, RankingConfig,
};
use crate::params::grad_check_params;
use crate::tensor::{grad_check_configured, PoolMode, Result, Tape, Tensor, TensorId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const OP_TOL: f64 = 1e-4;
pub const END_TO_END_TOL: f64 = 1e-3;
const STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct OpCheck {
    pub name: String,
    pub points: usize,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

type Build = Box<dyn Fn(&mut Tape, &[TensorId]) -> Result<TensorId>>;
type Instance = Box<dyn FnMut(&mut ChaCha8Rng) -> (Vec<Tensor>, Build)>;

fn rng_for(op: &str) -> ChaCha8Rng {
    let salt: u64 = op.bytes().map(u64::from).sum();
    ChaCha8Rng::seed_from_u64(0xFD00 + salt)
}

fn smooth(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()
}

/// Bounded away from zero, for hinge-like ops.
fn off_kink(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.1..1.5);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

/// Pairwise gaps well above the FD step, for max pooling.
fn distinct(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - n as f64 * 0.025).collect();
    for i in (1..vals.len()).rev() {
        let j = rng.gen_range(0..=i);
        vals.swap(i, j);
    }
    vals
}

fn contract(tape: &mut Tape, out: TensorId, weights: &[f64]) -> Result<TensorId> {
    let shape = tape.value(out).shape().to_vec();
    let w = tape.input(Tensor::new(shape, weights.to_vec()).expect("weight shape"));
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

fn weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.2..1.0)).collect()
}

fn instances() -> Vec<(&'static str, Instance)> {
    let mut ops: Vec<(&'static str, Instance)> = Vec::new();

    ops.push(("matmul", Box::new(|rng| {
        let (m, k, n) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4));
        let a = Tensor::matrix(m, k, smooth(rng, m * k)).unwrap();
        let b = Tensor::matrix(k, n, smooth(rng, k * n)).unwrap();
        let w = weights(rng, m * n);
        (vec![a, b], Box::new(move |t: &mut Tape, ids: &[TensorId]| {
            let out = t.matmul(ids[0], ids[1])?;
            contract(t, out, &w)
        }) as Build)
    })));

    ops.push(("transpose", Box::new(|rng| {
        let (r, c) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let x = Tensor::matrix(r, c, smooth(rng, r * c)).unwrap();
        let w = weights(rng, r * c);
        (vec![x], Box::new(move |t: &mut Tape, ids: &[TensorId]| {
            let out = t.transpose(ids[0])?;
            contract(t, out, &w)
        }) as Build)
    })));

    for (name, f) in [
        ("add", (|t, a, b| t.add(a, b)) as fn(&mut Tape, TensorId, TensorId) -> Result<TensorId>),
        ("sub", |t, a, b| t.sub(a, b)),
        ("mul", |t, a, b| t.mul(a, b)),
    ] {
        ops.push((name, Box::new(move |rng| {
            let n = rng.gen_range(1..7);
            let a = Tensor::vector(smooth(rng, n)).unwrap();
            let b = Tensor::vector(smooth(rng, n)).unwrap();
            let w = weights(rng, n);
            (vec![a, b], Box::new(move |t: &mut Tape, ids: &[TensorId]| {
                let out = f(t, ids[0], ids[1])?;
                contract(t, out, &w)
            }) as Build)
        })));
    }

    for (name, f, sampler) in [
        ("neg", (|t: &mut Tape, x| t.neg(x)) as fn(&mut Tape, TensorId) -> Result<TensorId>, smooth as fn(&mut ChaCha8Rng, usize) -> Vec<f64>),
        ("sigmoid", |t, x| t.sigmoid(x), smooth),
        ("tanh", |t, x| t.tanh(x), smooth),
        ("relu", |t, x| t.relu(x), off_kink),
        ("gelu", |t, x| t.gelu(x), smooth),
    ] {
        ops.push((name, Box::new(move |rng| {
            let n = rng.gen_range(1..7);
            let x = Tensor::vector(sampler(rng, n)).unwrap();
            let w = weights(rng, n);
            (vec![x], Box::new(move |t: &mut Tape, ids: &[TensorId]| {
                let out = f(t, ids[0])?;
                contract(t, out, &w)
            }) as Build)
        })));
    }

    ops.push(("scale", Box::new(|rng| {
        let n = rng.gen_range(1..7);
        let c = rng.gen_range(-2.0..2.0);
        let x = Tensor::vector(smooth(rng, n)).unwrap();
        let w = weights(rng, n);
        (vec![x], Box::new(move |t: &mut Tape, ids: &[TensorId]| {
            let out = t.scale(ids[0], c)?;
            contract(t, out, &w)
        }) as Build)
    })));

    ops.push(("add_bias", Box::new(|rng| {
        let (n, d) = (rng.gen_range(1..4), rng.gen_range(1..5));
        let x = Tensor::matrix(n, d, smooth(rng, n * d)).unwrap();
        let b = Tensor::vector(smooth(rng, d)).unwrap();
        let w = weights(rng, n * d);
        (vec![x, b], Box::new(move |t: &mut Tape, ids: &[TensorId]| {
            let out = t.add_bias(ids[0], ids[1])?;
            contract(t, out, &w)
        }) as Build)
    })));

    for axis in [0usize, 1] {
        let name = if axis == 0 { "softmax_axis0" } else { "softmax_axis1" };
        ops.push((name, Box::new(move |rng| {
            let (r, c) = (rng.gen_range(1..4), rng.gen_range(1..5));
            let x = Tensor::matrix(r, c, smooth(rng, r * c)).unwrap();
            let w = weights(rng, r * c);
            (vec![x], Box::new(move |t: &mut Tape, ids: &[TensorId]| {
                let out = t.softmax(ids[0], axis)?;
                contract(t, out, &w)
            }) as Build)
        })));
    }

    ops.push(("layer_norm", Box::new(|rng| {
        let (r, d) = (rng.gen_range(1..4), rng.gen_range(2..6));
        let x = Tensor::matrix(r, d, smooth(rng, r * d)).unwrap();
        let gamma = Tensor::vector(off_kink(rng, d)).unwrap();
        let beta = Tensor::vector(smooth(rng, d)).unwrap();
        let w = weights(rng, r * d);
        (vec![x, gamma, beta], Box::new(move |t: &mut Tape, ids: &[TensorId]| {
            let out = t.layer_norm(ids[0], ids[1], ids[2], 1e-5)?;
            contract(t, out, &w)
        }) as Build)
    })));

    for (name, mode, axis) in [
        ("pool_max_axis0", PoolMode::Max, 0usize),
        ("pool_max_axis1", PoolMode::Max, 1),
        ("pool_mean_axis0", PoolMode::Mean, 0),
        ("pool_mean_axis1", PoolMode::Mean, 1),
    ] {
        ops.push((name, Box::new(move |rng| {
            let (r, c) = (rng.gen_range(1..4), rng.gen_range(1..4));
            let x = Tensor::matrix(r, c, distinct(rng, r * c)).unwrap();
            let out_len = if axis == 0 { c } else { r };
            let w = weights(rng, out_len);
            (vec![x], Box::new(move |t: &mut Tape, ids: &[TensorId]| {
                let out = t.pool(ids[0], mode, axis)?;
                contract(t, out, &w)
            }) as Build)
        })));
    }

    ops.push(("conv1d", Box::new(|rng| {
        let w_k = rng.gen_range(1..3);
        let len = rng.gen_range(w_k..w_k + 4);
        let (d_in, d_out) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let x = Tensor::matrix(len, d_in, smooth(rng, len * d_in)).unwrap();
        let k = Tensor::new(vec![w_k, d_in, d_out], smooth(rng, w_k * d_in * d_out)).unwrap();
        let b = Tensor::vector(smooth(rng, d_out)).unwrap();
        let wt = weights(rng, (len - w_k + 1) * d_out);
        (vec![x, k, b], Box::new(move |t: &mut Tape, ids: &[TensorId]| {
            let out = t.conv1d(ids[0], ids[1], ids[2])?;
            contract(t, out, &wt)
        }) as Build)
    })));

    ops.push(("concat_rows", Box::new(|rng| {
        let d = rng.gen_range(1..4);
        let (r1, r2) = (rng.gen_range(1..3), rng.gen_range(1..3));
        let a = Tensor::matrix(r1, d, smooth(rng, r1 * d)).unwrap();
        let b = Tensor::matrix(r2, d, smooth(rng, r2 * d)).unwrap();
        let w = weights(rng, (r1 + r2) * d);
        (vec![a, b], Box::new(move |t: &mut Tape, ids: &[TensorId]| {
            let out = t.concat_rows(&[ids[0], ids[1]])?;
            contract(t, out, &w)
        }) as Build)
    })));

    ops.push(("concat_cols", Box::new(|rng| {
        let r = rng.gen_range(1..4);
        let (c1, c2) = (rng.gen_range(1..3), rng.gen_range(1..3));
        let a = Tensor::matrix(r, c1, smooth(rng, r * c1)).unwrap();
        let b = Tensor::matrix(r, c2, smooth(rng, r * c2)).unwrap();
        let w = weights(rng, r * (c1 + c2));
        (vec![a, b], Box::new(move |t: &mut Tape, ids: &[TensorId]| {
            let out = t.concat_cols(&[ids[0], ids[1]])?;
            contract(t, out, &w)
        }) as Build)
    })));

    ops.push(("concat_vec", Box::new(|rng| {
        let (n1, n2) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let a = Tensor::vector(smooth(rng, n1)).unwrap();
        let b = Tensor::vector(smooth(rng, n2)).unwrap();
        let w = weights(rng, n1 + n2);
        (vec![a, b], Box::new(move |t: &mut Tape, ids: &[TensorId]| {
            let out = t.concat_vec(&[ids[0], ids[1]])?;
            contract(t, out, &w)
        }) as Build)
    })));

    ops.push(("slice_rows", Box::new(|rng| {
        let (r, c) = (rng.gen_range(2..5), rng.gen_range(1..4));
        let start = rng.gen_range(0..r - 1);
        let count = rng.gen_range(1..=r - start);
        let x = Tensor::matrix(r, c, smooth(rng, r * c)).unwrap();
        let w = weights(rng, count * c);
        (vec![x], Box::new(move |t: &mut Tape, ids: &[TensorId]| {
            let out = t.slice_rows(ids[0], start, count)?;
            contract(t, out, &w)
        }) as Build)
    })));

    ops.push(("slice_cols", Box::new(|rng| {
        let (r, c) = (rng.gen_range(1..4), rng.gen_range(2..5));
        let start = rng.gen_range(0..c - 1);
        let count = rng.gen_range(1..=c - start);
        let x = Tensor::matrix(r, c, smooth(rng, r * c)).unwrap();
        let w = weights(rng, r * count);
        (vec![x], Box::new(move |t: &mut Tape, ids: &[TensorId]| {
            let out = t.slice_cols(ids[0], start, count)?;
            contract(t, out, &w)
        }) as Build)
    })));

    ops.push(("embed", Box::new(|rng| {
        let (v, d, l) = (rng.gen_range(2..6), rng.gen_range(1..4), rng.gen_range(1..5));
        let table = Tensor::matrix(v, d, smooth(rng, v * d)).unwrap();
        let tokens: Vec<usize> = (0..l).map(|_| rng.gen_range(0..v)).collect();
        let w = weights(rng, l * d);
        (vec![table], Box::new(move |t: &mut Tape, ids: &[TensorId]| {
            let out = t.embed(ids[0], &tokens)?;
            contract(t, out, &w)
        }) as Build)
    })));

    ops.push(("sum", Box::new(|rng| {
        let n = rng.gen_range(1..7);
        let x = Tensor::vector(smooth(rng, n)).unwrap();
        (vec![x], Box::new(move |t: &mut Tape, ids: &[TensorId]| t.sum(ids[0])) as Build)
    })));

    ops.push(("dot", Box::new(|rng| {
        let n = rng.gen_range(1..7);
        let a = Tensor::vector(smooth(rng, n)).unwrap();
        let b = Tensor::vector(smooth(rng, n)).unwrap();
        (vec![a, b], Box::new(move |t: &mut Tape, ids: &[TensorId]| t.dot(ids[0], ids[1])) as Build)
    })));

    ops.push(("cosine_sim", Box::new(|rng| {
        let n = rng.gen_range(2..7);
        let a = Tensor::vector(off_kink(rng, n)).unwrap();
        let b = Tensor::vector(off_kink(rng, n)).unwrap();
        (vec![a, b], Box::new(move |t: &mut Tape, ids: &[TensorId]| t.cosine_sim(ids[0], ids[1])) as Build)
    })));

    ops
}

/// Check every op at `points` random instances. `corrupt` installs the
/// deliberate backward-rule corruption on each analytic tape (the checks
/// must then fail for the affected op).
pub fn op_suite(points: usize, corrupt: Option<(&str, f64)>) -> Result<Vec<OpCheck>> {
    let mut results = Vec::new();
    for (name, mut instance) in instances() {
        let mut rng = rng_for(name);
        let mut worst = 0.0f64;
        for _ in 0..points {
            let (params, build) = instance(&mut rng);
            let report = grad_check_configured(&*build, &params, STEP, |tape| {
                if let Some((op, factor)) = corrupt {
                    tape.corrupt_gradient(op, factor);
                }
            })?;
            worst = worst.max(report.max_rel_err);
        }
        results.push(OpCheck {
            name: name.to_string(),
            points,
            max_rel_err: worst,
            tol: OP_TOL,
        });
    }
    Ok(results)
}

/// Finite-difference check of the full model plus joint objective at tiny
/// dimensions (d = 8, D = 2, l ≤ 6, m ≤ 3, batch of 3 pairs). Returns the
/// max relative error and the worst parameter's name.
pub fn end_to_end_check(seed: u64) -> Result<(f64, String)> {
    let spec = SyntheticSpec {
        n_products: 2,
        reviews_per_product: 3,
        vocab_size: 20,
        l_p: 5,
        l_r: 4,
        m: 2,
        dim: 3,
        signal_strength: 1.0,
        label_distribution: [1.0, 0.0, 0.0, 1.0, 1.0],
        seed: 40,
    };
    let data = generate_synthetic(&spec).expect("fixture spec is valid");
    let config = TrainConfig {
        hidden_dim: 8,
        embed_dim: 8,
        cm_layers: 2,
        heads: 2,
        seed,
        ..TrainConfig::default()
    };
    let model = MrhpModel::init(
        config,
        ModelDims {
            vocab_size: data.vocab_size,
            feature_dim: data.feature_dim,
        },
    )
    .expect("fixture config is valid");

    let mut pairs = Vec::new();
    for (pi, product) in data.products.iter().enumerate() {
        for i in 0..product.reviews.len() {
            for j in 0..product.reviews.len() {
                if product.reviews[i].label > product.reviews[j].label && pairs.len() < 3 {
                    pairs.push((pi, i, j));
                }
            }
        }
    }
    assert_eq!(pairs.len(), 3, "fixture must yield a 3-pair batch");

    let build = |tape: &mut Tape, bind: &crate::params::ParamBinding| {
        let mut samples = Vec::new();
        let mut score_pairs = Vec::new();
        for &(pi, plus, minus) in &pairs {
            let product = &data.products[pi];
            let fwd_plus = model.forward_sample(tape, bind, product, &product.reviews[plus])?;
            let fwd_minus = model.forward_sample(tape, bind, product, &product.reviews[minus])?;
            score_pairs.push((fwd_plus.score, fwd_minus.score));
            samples.push((fwd_plus.pooled, product.reviews[plus].label));
            samples.push((fwd_minus.pooled, product.reviews[minus].label));
        }
        let ranking = ranking_loss(tape, &score_pairs, &RankingConfig::default())?;
        let contrastive = adaptive_contrastive(tape, &samples, &ContrastiveConfig::default())?;
        total_loss(tape, ranking, contrastive)
    };

    // with o_n = 0 the negative-pair hinge kinks where a cosine crosses
    // zero; the FD step must not straddle it at this fixture
    {
        let mut tape = Tape::new();
        let bind = model.params.bind(&mut tape);
        build(&mut tape, &bind)?;
        let min_abs_sim = tape
            .cosine_nodes()
            .iter()
            .map(|&id| tape.scalar(id).abs())
            .fold(f64::INFINITY, f64::min);
        assert!(
            min_abs_sim > 50.0 * STEP,
            "fixture puts a cosine at {min_abs_sim}, too close to the hinge; reseed"
        );
    }

    grad_check_params(&model.params, STEP, build)
}
