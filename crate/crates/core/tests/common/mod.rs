#![allow(dead_code)]

use medfuse::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |_, _| rng.random::<f64>())
}

/// Random image whose values sit exactly on the 8-bit grid.
pub fn random_levels(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |_, _| rng.random_range(0..256u32) as f64 / 255.0)
}

pub fn checkerboard(h: usize, w: usize, lo: f64, hi: f64) -> Image {
    Image::from_fn(h, w, |y, x| if (y + x) % 2 == 0 { lo } else { hi })
}

/// Smooth image with edges at several orientations.
pub fn phantom(h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |y, x| {
        let (fy, fx) = (y as f64 / h as f64, x as f64 / w as f64);
        let disc = if (fy - 0.5).powi(2) + (fx - 0.45).powi(2) < 0.08 { 0.4 } else { 0.0 };
        let bar = if fx > 0.7 && fy < 0.6 { 0.3 } else { 0.0 };
        (0.15 + disc + bar + 0.1 * (7.0 * fx + 3.0 * fy).sin()).clamp(0.0, 1.0)
    })
}

pub fn assert_close(got: f64, want: f64, tol: f64, what: &str) {
    assert!((got - want).abs() <= tol, "{what}: got {got}, want {want} (tol {tol})");
}

use medfuse::losses::batch_loss_with_grad;
use medfuse::wdepp::WdeppParams;
use medfuse::{ModelState, Tensor};

/// Outcome of a finite-difference comparison over sampled parameters.
pub struct GradCheck {
    pub checked: usize,
    pub skipped: usize,
    pub worst: f64,
    pub failures: Vec<String>,
}

fn train_loss(m: &ModelState, x: &Tensor) -> (f64, u64) {
    let mut m = m.clone();
    let t = m.forward_train(x).unwrap();
    let (l, _) = batch_loss_with_grad(t.output(), x).unwrap();
    (l.total, t.activation_signature())
}

/// Compare analytic parameter gradients of the batch total loss against
/// central differences at `samples` random coordinates. Coordinates whose
/// perturbation crosses a ReLU or max-pool switch are redrawn.
pub fn check_model_gradients(m: &ModelState, x: &Tensor, samples: usize, step: f64, tol: f64, seed: u64) -> GradCheck {
    let mut base = m.clone();
    let trace = base.forward_train(x).unwrap();
    let sig = trace.activation_signature();
    let (_, g) = batch_loss_with_grad(trace.output(), x).unwrap();
    base.zero_grad();
    base.backward(&trace, &g).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = base.named_params().into_iter().map(|(n, p)| (n, p.grad.clone())).collect();
    let total: usize = analytic.iter().map(|(_, g)| g.len()).sum();

    let mut r = rng(seed);
    let mut out = GradCheck { checked: 0, skipped: 0, worst: 0.0, failures: Vec::new() };
    while out.checked < samples && out.skipped < 20 * samples {
        let mut flat = r.random_range(0..total);
        let k = analytic.iter().position(|(_, g)| {
            if flat < g.len() {
                true
            } else {
                flat -= g.len();
                false
            }
        });
        let k = k.unwrap();
        let i = flat;
        let perturbed = |e: f64| {
            let mut q = m.clone();
            q.named_params_mut()[k].1.value[i] += e;
            train_loss(&q, x)
        };
        let (lp, sp) = perturbed(step);
        let (lm, sm) = perturbed(-step);
        if sp != sig || sm != sig {
            out.skipped += 1;
            continue;
        }
        let fd = (lp - lm) / (2.0 * step);
        let an = analytic[k].1[i];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
        out.worst = out.worst.max(rel);
        if rel >= tol {
            out.failures.push(format!("{}[{i}]: fd {fd:e} analytic {an:e}", analytic[k].0));
        }
        out.checked += 1;
    }
    out
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn block_mean(x: &[f64], w: usize, y: usize, c: usize) -> f64 {
    let (by, bx) = (y / 2 * 2, c / 2 * 2);
    (x[by * w + bx] + x[by * w + bx + 1] + x[(by + 1) * w + bx] + x[(by + 1) * w + bx + 1]) / 4.0
}

/// Stage-by-stage evaluation of one WDEPP site on a single-channel 4×4 map.
pub fn wdepp_stage_oracle(x: &[f64], p: &WdeppParams) -> Vec<f64> {
    // wavelet split
    let low: Vec<f64> = (0..16).map(|i| block_mean(x, 4, i / 4, i % 4)).collect();
    let high: Vec<f64> = (0..16).map(|i| x[i] - low[i]).collect();
    // attention
    let g = [low.iter().sum::<f64>() / 16.0, high.iter().sum::<f64>() / 16.0];
    let hd = p.sqex.hidden;
    let h: Vec<f64> = (0..hd)
        .map(|j| (p.sqex.w1.value[j * 2] * g[0] + p.sqex.w1.value[j * 2 + 1] * g[1] + p.sqex.b1.value[j]).max(0.0))
        .collect();
    let att: Vec<f64> = (0..2)
        .map(|k| sigmoid((0..hd).map(|j| p.sqex.w2.value[k * hd + j] * h[j]).sum::<f64>() + p.sqex.b2.value[k]))
        .collect();
    // projection + relu
    let wp = &p.projection.weight.value;
    let act: Vec<f64> = (0..16)
        .map(|i| (wp[0] * att[0] * low[i] + wp[1] * att[1] * high[i] + p.projection.bias.value[0]).max(0.0))
        .collect();
    // max pool
    (0..4)
        .map(|o| {
            let (by, bx) = (o / 2 * 2, o % 2 * 2);
            act[by * 4 + bx].max(act[by * 4 + bx + 1]).max(act[(by + 1) * 4 + bx]).max(act[(by + 1) * 4 + bx + 1])
        })
        .collect()
}

