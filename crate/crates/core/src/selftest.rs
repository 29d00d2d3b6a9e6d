//! Built-in consistency checks: Cayley tables against a symbol-sorting
//! oracle, spacetime identities, and finite-difference gradient checks.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::algebra::{AlgebraKind, Blade, CayleyTable, Signature};
use crate::dataset::Embedding;
use crate::error::Result;
use crate::models::{Model, ModelConfig};
use crate::mvtensor::{conv_forward, mse_loss, MvTensor, Padding, ParamId, Tape};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {}", self.name, self.detail)
    }
}

/// Product of two ascending index lists by bubble sort and contraction.
pub fn oracle_product(metric: &[i8], a: &[usize], b: &[usize]) -> (Vec<usize>, i8) {
    let mut list: Vec<usize> = a.iter().chain(b).copied().collect();
    let mut sign = 1i8;
    for pass in 0..list.len() {
        for k in 0..list.len().saturating_sub(pass + 1) {
            if list[k] > list[k + 1] {
                list.swap(k, k + 1);
                sign = -sign;
            }
        }
    }
    let mut out = Vec::with_capacity(list.len());
    let mut k = 0;
    while k < list.len() {
        if k + 1 < list.len() && list[k] == list[k + 1] {
            sign *= metric[list[k]];
            k += 2;
        } else {
            out.push(list[k]);
            k += 1;
        }
    }
    (out, sign)
}

fn indices(bits: usize, dim: usize) -> Vec<usize> {
    (0..dim).filter(|i| bits & (1 << i) != 0).collect()
}

/// Number of blade pairs whose table entry disagrees with the oracle.
pub fn table_mismatches(sig: &Signature) -> Result<usize> {
    let table = CayleyTable::build(sig)?;
    let dim = sig.dim();
    let n = 1usize << dim;
    let mut bad = 0;
    for a in 0..n {
        for b in 0..n {
            let (blade, sign) = table.entry(Blade(a as u8), Blade(b as u8));
            let (list, expected) = oracle_product(sig.metric(), &indices(a, dim), &indices(b, dim));
            if indices(blade.index(), dim) != list || sign != expected {
                bad += 1;
            }
        }
    }
    Ok(bad)
}

pub fn check_algebra_oracle() -> Result<CheckResult> {
    let start = Instant::now();
    let mut pairs = 0;
    let mut bad = 0;
    for kind in AlgebraKind::ALL {
        let sig = kind.signature();
        pairs += 1usize << (2 * sig.dim());
        bad += table_mismatches(&sig)?;
    }
    let elapsed = start.elapsed().as_secs_f64();
    Ok(CheckResult {
        name: "algebra-oracle".into(),
        passed: bad == 0 && elapsed < 1.0,
        detail: format!("{bad} mismatches in {pairs} blade pairs"),
    })
}

/// Largest deviation from `σk² = 1`, `I² = -1` in G(1,3,0) and from
/// `F² = Ex² + Ey² - Bz²` (scalar only) in G(1,2,0) over `samples` triples.
pub fn sta_identity_error(samples: usize, seed: u64) -> Result<f64> {
    let sta = AlgebraKind::Sta3.algebra();
    let g0 = sta.basis_vector(0);
    let mut worst: f64 = 0.0;
    for k in 1..4 {
        let sigma = sta.basis_vector(k).gp(&g0)?;
        let sq = sigma.square();
        worst = worst.max((&sq - &sta.scalar(1.0)).coeffs().iter().fold(0.0, |m, c| m.max(c.abs())));
    }
    let i2 = sta.pseudoscalar().square();
    worst = worst.max((&i2 + &sta.scalar(1.0)).coeffs().iter().fold(0.0, |m, c| m.max(c.abs())));

    let emb = Embedding::new(AlgebraKind::Sta2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let v: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-10.0..10.0));
        let sq = emb.embed_cell(&v)?.square();
        let expected = v[0] * v[0] + v[1] * v[1] - v[2] * v[2];
        for (b, &c) in sq.coeffs().iter().enumerate() {
            let target = if b == 0 { expected } else { 0.0 };
            worst = worst.max((c - target).abs());
        }
    }
    Ok(worst)
}

pub fn check_sta_identities() -> Result<CheckResult> {
    let err = sta_identity_error(100, 2)?;
    Ok(CheckResult {
        name: "sta-identities".into(),
        passed: err <= 1e-12,
        detail: format!("max deviation {err:.3e}"),
    })
}

/// Smallest |pre-activation| of the first (ReLU) layer.
fn relu_margin(model: &Model<f64>, x: &MvTensor<f64>) -> Result<f64> {
    let z = conv_forward(x, model.params().get(ParamId(0)), model.params().get(ParamId(1)), Padding::Same)?;
    Ok(z.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs())))
}

/// Max relative error between taped gradients and central differences
/// (`h = 1e-3`, f64) for a 2-block, C=2 model.
///
/// Central differences are exact for this piecewise-quadratic loss unless a
/// step crosses a ReLU kink. First-layer biases of magnitude 1.5 to 2.5 with
/// random signs give a mix of live and dead units, and the toy problem is
/// redrawn until every pre-activation is more than `2h` from zero. A single
/// parameter step moves a pre-activation by at most `h`, since inputs lie in
/// [-1, 1].
pub fn model_gradient_error(kind: AlgebraKind, seed: u64) -> Result<f64> {
    let h = 1e-3;
    let cfg = ModelConfig::new(kind, 2).with_blocks(2);
    let alg = kind.algebra();
    let grid = vec![4; kind.spatial_dim()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut model, x, target) = loop {
        let mut model = Model::<f64>::build(&cfg, rng.gen())?;
        for v in model.params_mut().get_mut(ParamId(1)).data_mut() {
            *v = rng.gen_range(1.5..2.5) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
        }
        for v in model.params_mut().get_mut(ParamId(3)).data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
        let x = MvTensor::random_uniform(&alg, 2, 2, &grid, 1.0, &mut rng);
        let target = MvTensor::random_uniform(&alg, 2, 1, &grid, 1.0, &mut rng);
        if relu_margin(&model, &x)? > 2.0 * h {
            break (model, x, target);
        }
    };
    let mask = model.loss_mask();

    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let out = model.forward_tape(&mut tape, xv)?;
    let tv = tape.input(target.clone());
    let loss = tape.mse(out, tv, &mask)?;
    let grads = tape.backward(loss)?.for_store(model.params());

    let ids: Vec<ParamId> = model.params().ids().collect();
    let mut worst: f64 = 0.0;
    for (&id, g) in ids.iter().zip(&grads) {
        for i in 0..g.len() {
            let orig = model.params().get(id).data()[i];
            let mut eval = |v: f64| -> Result<f64> {
                model.params_mut().get_mut(id).data_mut()[i] = v;
                mse_loss(&model.forward(&x)?, &target, &mask)
            };
            let numeric = (eval(orig + h)? - eval(orig - h)?) / (2.0 * h);
            eval(orig)?;
            let analytic = g.data()[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

pub fn check_gradients() -> Result<CheckResult> {
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for kind in AlgebraKind::ALL {
        let err = model_gradient_error(kind, 1)?;
        worst = worst.max(err);
        parts.push(format!("{kind} {err:.2e}"));
    }
    Ok(CheckResult {
        name: "gradient-check".into(),
        passed: worst <= 1e-4,
        detail: format!("max relative error {}", parts.join(", ")),
    })
}

pub fn run_all() -> Result<Vec<CheckResult>> {
    Ok(vec![check_algebra_oracle()?, check_sta_identities()?, check_gradients()?])
}
