use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Network;

/// Draws a "true" network whose line parameters deviate from `net`.
///
/// Each line's `r` and `x` are independently scaled by `1 + d` with
/// `d ~ N(0, sigma^2)`, redrawing `d` until `1 + d > 0`.
pub fn perturb_parameters(net: &Network, sigma: f64, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perturb_with(net, sigma, &mut rng)
}

pub(crate) fn perturb_with<R: rand::Rng>(net: &Network, sigma: f64, rng: &mut R) -> Network {
    assert!(
        sigma >= 0.0 && sigma.is_finite(),
        "sigma must be finite and non-negative"
    );
    if sigma == 0.0 {
        return net.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("valid normal");
    let mut factor = || loop {
        let f = 1.0 + normal.sample(rng);
        if f > 0.0 {
            break f;
        }
    };
    let rx: Vec<(f64, f64)> = net
        .lines()
        .iter()
        .map(|l| (l.r * factor(), l.x * factor()))
        .collect();
    net.with_impedances(&rx)
}
