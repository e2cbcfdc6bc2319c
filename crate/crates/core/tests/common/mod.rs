#![allow(dead_code)]

use fourbar::datagen::Sample;
use fourbar::neural::{batch_loss, batch_loss_and_grad, ExpertModel};
use fourbar::{Inversion, LinkageDims};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Output angle from intersecting the circle of radius r3 around the A-joint
/// with the circle of radius r4 around O4. The minus branch puts the B-joint
/// to the left of the directed line from the A-joint to O4.
pub fn circle_oracle(r: &LinkageDims, theta_in: f64, branch: Inversion) -> Option<f64> {
    let (ax, ay) = (r.r2 * theta_in.cos(), r.r2 * theta_in.sin());
    let (dx, dy) = (r.r1 - ax, -ay);
    let d = dx.hypot(dy);
    let a = (r.r3 * r.r3 - r.r4 * r.r4 + d * d) / (2.0 * d);
    let h2 = r.r3 * r.r3 - a * a;
    if h2 < 0.0 {
        return None;
    }
    let h = h2.sqrt();
    let (ux, uy) = (dx / d, dy / d);
    let (px, py) = (ax + a * ux, ay + a * uy);
    let side = match branch {
        Inversion::Minus => 1.0,
        Inversion::Plus => -1.0,
    };
    let (bx, by) = (px - side * h * uy, py + side * h * ux);
    Some((by).atan2(bx - r.r1))
}

/// Signed reachability margin from the triangle inequality on |A-joint - O4|.
pub fn reach_margin(r: &LinkageDims, theta_in: f64) -> f64 {
    let d = (r.r1 - r.r2 * theta_in.cos()).hypot(r.r2 * theta_in.sin());
    (d - (r.r3 - r.r4).abs()).min(r.r3 + r.r4 - d)
}

/// One probed weight: tensor name, flat index, analytic and numeric derivative.
#[derive(Debug)]
pub struct GradProbe {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradProbe {
    pub fn rel_err(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }
}

/// Compares back-propagated gradients with central differences of step
/// `eps`, probing `per_tensor` random entries of every tensor. Dropout masks
/// are redrawn from `mask_seed` for every loss evaluation.
pub fn gradient_check(model: &ExpertModel, samples: &[Sample], mask_seed: u64, per_tensor: usize, eps: f64) -> Vec<GradProbe> {
    let masks = || ChaCha8Rng::seed_from_u64(mask_seed);
    let (_, grads) = batch_loss_and_grad(model, samples, Some(&mut masks())).unwrap();
    let names: Vec<String> = model.weights.layout().into_iter().map(|(n, _)| n).collect();
    let mut pick = ChaCha8Rng::seed_from_u64(mask_seed ^ 0xA5A5);
    let mut probes = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let len = grads.slices()[k].len();
        for _ in 0..per_tensor.min(len) {
            let index = pick.gen_range(0..len);
            let loss_at = |delta: f64| {
                let mut m = model.clone();
                m.weights.slices_mut()[k][index] += delta;
                batch_loss(&m, samples, Some(&mut masks())).unwrap()
            };
            let numeric = (loss_at(eps) - loss_at(-eps)) / (2.0 * eps);
            probes.push(GradProbe { tensor: name.clone(), index, analytic: grads.slices()[k][index], numeric });
        }
    }
    probes
}
