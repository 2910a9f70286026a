//! Numerical checks shared by the core integration tests and the acceptance
//! target. Each returns the measured quantity so callers can compare it with
//! their own tolerance.

use binn::baselines::elastic_net::{elastic_net_fit, soft_threshold};
use binn::baselines::fcn::DenseNetwork;
use binn::baselines::ridge::{ridge_fit_with, RidgeForm};
use binn::losses::{bio_loss, loss_gradient};
use binn::stats::{pearson, spearman};
use binn::training::Trainable;
use binn::{Activation, BinnModel, IntermediateTruth, LayerMask, LossConfig, SubnetSpec, TruthLayer};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(tag: &str, i: u64) -> ChaCha8Rng {
    binn::seed::rng(20_240_917, tag, &[i])
}

fn spec(hidden: usize) -> SubnetSpec {
    SubnetSpec {
        hidden_layer_widths: vec![hidden],
        activation: Activation::Sigmoid,
        output_width: 1,
        output_activation: Activation::Identity,
        fan_in_scaled: false,
    }
}

fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Random non-empty supports over `n_inputs` rows; rows left uncovered stay
/// uncovered so a residual net appears when `leave_out > 0`.
fn random_supports(rng: &mut ChaCha8Rng, n_inputs: usize, n_entities: usize, leave_out: usize) -> Vec<Vec<usize>> {
    let usable = n_inputs - leave_out;
    (0..n_entities)
        .map(|_| {
            let mut rows: Vec<usize> = (0..usable).filter(|_| rng.random_bool(0.4)).collect();
            if rows.is_empty() {
                rows.push(rng.random_range(0..usable));
            }
            rows
        })
        .collect()
}

/// A random BINN over `n_markers` markers with one or two omics layers.
pub fn random_binn(rng: &mut ChaCha8Rng, n_markers: usize, two_layers: bool, residual: bool) -> BinnModel {
    let leave_out = if residual { 2 } else { 0 };
    let k1 = rng.random_range(2..=3);
    let masks = if two_layers {
        let k2 = 2;
        vec![
            LayerMask::from_supports(1, ids("g", n_markers), ids("a", k1), random_supports(rng, n_markers, k1, leave_out))
                .unwrap(),
            LayerMask::from_supports(2, ids("a", k1), ids("b", k2), random_supports(rng, k1, k2, 0)).unwrap(),
        ]
    } else {
        vec![LayerMask::from_supports(1, ids("g", n_markers), ids("a", k1), random_supports(rng, n_markers, k1, leave_out))
            .unwrap()]
    };
    let seed = rng.random();
    let mut model = BinnModel::build(masks, spec(2), spec(2), spec(4), seed).unwrap();
    // Spread the parameters so no unit sits in a flat region by accident.
    for p in model.params_mut() {
        *p += rng.random_range(-0.3..0.3);
    }
    model
}

pub fn random_inputs(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, p), |_| rng.random_range(-1.5..1.5))
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error between `grad` and central differences of `f`.
fn fd_max_error<N: Trainable>(net: &mut N, grad: &[f64], f: impl Fn(&N) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..grad.len() {
        let orig = net.params()[i];
        net.params_mut()[i] = orig + FD_STEP;
        let up = f(net);
        net.params_mut()[i] = orig - FD_STEP;
        let down = f(net);
        net.params_mut()[i] = orig;
        worst = worst.max(relative_error(grad[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

/// Gradient of a loss through a trainable network against finite differences.
fn loss_check<N: Trainable>(net: &mut N, x: &Array2<f64>, y: &Array1<f64>, truth: &IntermediateTruth, cfg: &LossConfig) -> f64 {
    let (trace, cache) = net.forward_train(x.view());
    let (_, g) = loss_gradient(y.view(), &trace, truth, cfg).unwrap();
    let grad = net.backward_train(&cache, g.d_prediction.view(), Some(&g.d_latents));
    fd_max_error(net, &grad, |n| {
        let trace = n.forward_train(x.view()).0;
        bio_loss(y.view(), &trace, truth, cfg).unwrap().total
    })
}

#[derive(Debug)]
pub struct GradientReport {
    pub instances: usize,
    pub max_params: usize,
    pub max_relative_error: f64,
}

/// Random BINN backward passes, FCNs, and each loss mode.
pub fn gradient_check(instances: usize) -> GradientReport {
    let mut worst: f64 = 0.0;
    let mut max_params = 0;
    let mut count = 0;
    for t in 0..instances as u64 {
        let mut r = rng("grad", t);
        let n = 12;
        let model = random_binn(&mut r, 10, t % 2 == 1, t % 3 != 0);
        let x = random_inputs(&mut r, n, 10);
        let y = Array1::from_shape_fn(n, |_| r.random_range(-1.0..1.0));
        let k = model.masks()[0].n_entities();
        max_params = max_params.max(model.n_params());

        // Plain backward with a random upstream gradient.
        let upstream: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let grad = model.backward(x.view(), &upstream).unwrap().values;
        let mut m = model.clone();
        worst = worst.max(fd_max_error(&mut m, &grad, |mm| {
            let p = mm.predict(x.view()).unwrap();
            p.iter().zip(&upstream).map(|(a, b)| a * b).sum()
        }));

        // Loss modes with partially labeled truth on the first layer.
        let values = Array2::from_shape_fn((n, k), |_| r.random_range(-1.0..1.0));
        let labeled: Vec<bool> = (0..n).map(|i| i % 4 != 0).collect();
        let mut available = vec![true; k];
        available[k - 1] = t % 2 == 0;
        let mut truth = IntermediateTruth::empty(model.n_layers());
        truth.layers[0] = Some(TruthLayer::new(values, labeled, available).unwrap());
        for cfg in [LossConfig::mse(), LossConfig::soft(0.7), LossConfig::hard(0.4)] {
            let mut m = model.clone();
            worst = worst.max(loss_check(&mut m, &x, &y, &truth, &cfg));
        }

        // Dense baseline.
        let mut fcn = DenseNetwork::new(10, spec(r.random_range(3..=8)), r.random()).unwrap();
        let jitter: Vec<f64> = fcn.params().iter().map(|p| p + r.random_range(-0.3..0.3)).collect();
        fcn.set_params(jitter).unwrap();
        max_params = max_params.max(fcn.n_params());
        worst = worst.max(loss_check(&mut fcn, &x, &y, &IntermediateTruth::empty(0), &LossConfig::mse()));
        count += 1;
    }
    GradientReport {
        instances: count,
        max_params,
        max_relative_error: worst,
    }
}

/// Markers that can reach entity `entity` of zero-based layer `layer`.
pub fn ancestor_markers(model: &BinnModel, layer: usize, entity: usize) -> Vec<usize> {
    let mut current: Vec<usize> = model.masks()[layer].support(entity).to_vec();
    for l in (0..layer).rev() {
        let mut next: Vec<usize> = current.iter().flat_map(|&e| model.masks()[l].support(e).to_vec()).collect();
        next.sort_unstable();
        next.dedup();
        current = next;
    }
    current
}

#[derive(Debug, Default)]
pub struct MaskingReport {
    pub trials: usize,
    pub latent_changes: usize,
    pub gradient_changes: usize,
    /// Trials where perturbing a marker inside the reach did move the latent.
    pub control_changes: usize,
}

/// Perturbs markers outside an entity's reach and checks that the entity's
/// latent column and the gradient of its own subnet stay bit-identical.
pub fn masking_check(trials: usize) -> MaskingReport {
    let mut report = MaskingReport::default();
    let mut t = 0u64;
    while report.trials < trials {
        let mut r = rng("mask", t);
        t += 1;
        let (two, residual) = (r.random_bool(0.5), r.random_bool(0.5));
        let model = random_binn(&mut r, 10, two, residual);
        let layer = r.random_range(0..model.n_layers());
        let entity = r.random_range(0..model.masks()[layer].n_entities());
        let reach = ancestor_markers(&model, layer, entity);
        let outside: Vec<usize> = (0..model.n_markers()).filter(|m| !reach.contains(m)).collect();
        if outside.is_empty() {
            continue;
        }
        let n = 6;
        let x = random_inputs(&mut r, n, model.n_markers());
        let mut x2 = x.clone();
        for &m in &outside {
            if r.random_bool(0.7) || m == outside[0] {
                for i in 0..n {
                    x2[[i, m]] += r.random_range(-3.0..3.0);
                }
            }
        }
        let (ta, ca) = model.forward_cached(x.view(), None);
        let (tb, cb) = model.forward_cached(x2.view(), None);
        if ta.per_layer_latents[layer].column(entity) != tb.per_layer_latents[layer].column(entity) {
            report.latent_changes += 1;
        }
        let mut d_latents: Vec<Array2<f64>> = ta.per_layer_latents.iter().map(|l| Array2::zeros(l.dim())).collect();
        for i in 0..n {
            d_latents[layer][[i, entity]] = r.random_range(-1.0..1.0);
        }
        let zero = Array1::zeros(n);
        let ga = model.backward_cached(&ca, zero.view(), Some(&d_latents));
        let gb = model.backward_cached(&cb, zero.view(), Some(&d_latents));
        let range = model.subnet_param_range(layer, entity);
        if ga.slice(range.clone()) != gb.slice(range) {
            report.gradient_changes += 1;
        }
        let mut x3 = x.clone();
        x3[[0, reach[r.random_range(0..reach.len())]]] += 1.0;
        let tc = model.forward_cached(x3.view(), None).0;
        if ta.per_layer_latents[layer].column(entity) != tc.per_layer_latents[layer].column(entity) {
            report.control_changes += 1;
        }
        report.trials += 1;
    }
    report
}

/// Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Array2<f64>, mut b: Array1<f64>) -> Array1<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[[i, c]].abs().total_cmp(&a[[j, c]].abs())).unwrap();
        for k in 0..n {
            a.swap([c, k], [piv, k]);
        }
        b.swap(c, piv);
        for i in c + 1..n {
            let f = a[[i, c]] / a[[c, c]];
            for k in c..n {
                a[[i, k]] -= f * a[[c, k]];
            }
            b[i] -= f * b[c];
        }
    }
    let mut out = Array1::zeros(n);
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[[i, k]] * out[k]).sum();
        out[i] = (b[i] - s) / a[[i, i]];
    }
    out
}

fn centered(x: &Array2<f64>, y: &Array1<f64>) -> (Array2<f64>, Array1<f64>, Array1<f64>, f64) {
    let xm = x.mean_axis(ndarray::Axis(0)).unwrap();
    let ym = y.mean().unwrap();
    (x - &xm, y - ym, xm, ym)
}

#[derive(Debug, Default)]
pub struct OracleReport {
    pub ridge_max_diff: f64,
    pub enet_max_kkt: f64,
    pub enet_max_intercept_resid: f64,
    pub univariate_max_diff: f64,
    pub soft_threshold_max_diff: f64,
    pub correlation_vectors: usize,
    pub pearson_max_diff: f64,
    pub spearman_max_diff: f64,
}

/// Ranks with ties averaged, by counting.
pub fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn brute_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

fn tied_vector(r: &mut ChaCha8Rng, n: usize, levels: Option<u32>) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n)
            .map(|_| match levels {
                Some(k) => r.random_range(0..k) as f64,
                None => r.random_range(-5.0..5.0),
            })
            .collect();
        if v.iter().any(|&x| x != v[0]) {
            return v;
        }
    }
}

pub fn oracle_check(n_vectors: usize) -> OracleReport {
    let mut rep = OracleReport::default();
    for t in 0..20u64 {
        let mut r = rng("ridge", t);
        let (n, p) = if t % 2 == 0 { (40, 12) } else { (15, 30) };
        let x = random_inputs(&mut r, n, p);
        let y = Array1::from_shape_fn(n, |_| r.random_range(-2.0..2.0));
        let alpha = 10f64.powf(r.random_range(-2.0..2.0));
        let (xc, yc, xm, ym) = centered(&x, &y);
        let lhs = xc.t().dot(&xc) + Array2::<f64>::eye(p) * alpha;
        let beta = dense_solve(lhs, xc.t().dot(&yc));
        let intercept = ym - xm.dot(&beta);
        for form in [RidgeForm::Feature, RidgeForm::Gram] {
            let m = ridge_fit_with(x.view(), y.view(), alpha, form).unwrap();
            for (a, b) in m.coefficients.iter().zip(&beta) {
                rep.ridge_max_diff = rep.ridge_max_diff.max((a - b).abs());
            }
            rep.ridge_max_diff = rep.ridge_max_diff.max((m.intercept - intercept).abs());
        }
    }
    for t in 0..20u64 {
        let mut r = rng("enet", t);
        let (n, p) = (50, 20);
        let x = random_inputs(&mut r, n, p);
        let truth = Array1::from_shape_fn(p, |j| if j < 4 { r.random_range(-2.0..2.0) } else { 0.0 });
        let y = x.dot(&truth) + Array1::from_shape_fn(n, |_| r.random_range(-0.5..0.5));
        let l1_ratio = [0.1, 0.5, 0.9, 1.0][t as usize % 4];
        let penalty = 10f64.powf(r.random_range(-2.5..0.0));
        let m = elastic_net_fit(x.view(), y.view(), penalty, l1_ratio).unwrap();
        let beta = Array1::from(m.coefficients.clone());
        let resid = &y - &(x.dot(&beta) + m.intercept);
        rep.enet_max_intercept_resid = rep.enet_max_intercept_resid.max(resid.mean().unwrap().abs());
        let (l1, l2) = (penalty * l1_ratio, penalty * (1.0 - l1_ratio));
        for j in 0..p {
            let g = x.column(j).dot(&resid) / n as f64 - l2 * beta[j];
            let v = if beta[j] == 0.0 {
                (g.abs() - l1).max(0.0)
            } else {
                (g - l1 * beta[j].signum()).abs()
            };
            rep.enet_max_kkt = rep.enet_max_kkt.max(v);
        }

        // One predictor: a closed-form shrinkage of the centered slope.
        let x1 = random_inputs(&mut r, n, 1);
        let y1 = x1.column(0).mapv(|v| 0.8 * v) + Array1::from_shape_fn(n, |_| r.random_range(-0.5..0.5));
        let (xc, yc, _, _) = centered(&x1, &y1);
        let z = xc.column(0).dot(&yc) / n as f64;
        let s = xc.column(0).dot(&xc.column(0)) / n as f64;
        let expected = soft_threshold(z, l1) / (s + l2);
        let fitted = elastic_net_fit(x1.view(), y1.view(), penalty, l1_ratio).unwrap();
        rep.univariate_max_diff = rep.univariate_max_diff.max((fitted.coefficients[0] - expected).abs());
    }
    for t in 0..200u64 {
        let mut r = rng("soft", t);
        let z: f64 = r.random_range(-3.0..3.0);
        let g: f64 = r.random_range(0.0..2.0);
        let expected = z.signum() * (z.abs() - g).max(0.0);
        rep.soft_threshold_max_diff = rep.soft_threshold_max_diff.max((soft_threshold(z, g) - expected).abs());
    }
    for t in 0..n_vectors as u64 {
        let mut r = rng("corr", t);
        let n = r.random_range(3..80);
        let levels = if t % 3 == 0 { None } else { Some(r.random_range(2..8)) };
        let a = tied_vector(&mut r, n, levels);
        let b = tied_vector(&mut r, n, if t % 2 == 0 { Some(4) } else { None });
        rep.pearson_max_diff = rep.pearson_max_diff.max((pearson(&a, &b).unwrap() - brute_pearson(&a, &b)).abs());
        let s = brute_pearson(&brute_ranks(&a), &brute_ranks(&b));
        rep.spearman_max_diff = rep.spearman_max_diff.max((spearman(&a, &b).unwrap() - s).abs());
        rep.correlation_vectors += 1;
    }
    rep
}
