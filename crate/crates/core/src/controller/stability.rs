//! Static check of the coupled attitude / rate-loop stability conditions.

use super::{ControllerGains, ControllerVariant};

/// Eigen-analysis of one `[[0, -k], [g, -a]]` block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockReport {
    /// Real parts of the two eigenvalues.
    pub eigen_re: [f64; 2],
    /// `-max Re(lambda)`; positive iff the block is Hurwitz.
    pub decay_rate: f64,
    pub hurwitz: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    /// Surge, pitch-rate and yaw-rate blocks, worst case over `g in {b, b'}`.
    pub blocks: [BlockReport; 3],
    /// `1 / (c_q k_theta)`; must be below one.
    pub pitch_ratio: f64,
    /// `sec^2(theta_max) / (c_r k_psi)`; must be below one.
    pub yaw_ratio: f64,
    pub theta_max: f64,
}

impl StabilityReport {
    pub fn all_hurwitz(&self) -> bool {
        self.blocks.iter().all(|b| b.hurwitz)
    }

    pub fn pitch_ok(&self) -> bool {
        self.pitch_ratio < 1.0
    }

    pub fn yaw_ok(&self) -> bool {
        self.yaw_ratio < 1.0
    }

    pub fn passed(&self) -> bool {
        self.all_hurwitz() && self.pitch_ok() && self.yaw_ok()
    }
}

/// Real parts of the eigenvalues of `[[0, -k], [g, -a]]`.
pub fn block_eigen_re(k: f64, g: f64, a: f64) -> [f64; 2] {
    // Characteristic polynomial: l^2 + a l + k g.
    let disc = a * a - 4.0 * k * g;
    if disc >= 0.0 {
        let s = disc.sqrt();
        [(-a + s) / 2.0, (-a - s) / 2.0]
    } else {
        [-a / 2.0; 2]
    }
}

fn block(k: f64, gs: &[f64], a: f64) -> BlockReport {
    let mut worst = BlockReport {
        eigen_re: [f64::NEG_INFINITY; 2],
        decay_rate: f64::INFINITY,
        hurwitz: true,
    };
    for &g in gs {
        let eigen_re = block_eigen_re(k, g, a);
        let decay_rate = -eigen_re[0].max(eigen_re[1]);
        if decay_rate < worst.decay_rate {
            worst = BlockReport {
                eigen_re,
                decay_rate,
                hurwitz: decay_rate > 0.0,
            };
        }
    }
    worst
}

/// Evaluate the block Hurwitz conditions and the two small-gain ratios.
///
/// `theta_max` is the largest pitch magnitude seen (or assumed); pass zero
/// for the static check. Variants without shunting compensators have scalar
/// rate loops `e' = -k e`, so their decay rate is the loop gain itself.
pub fn check_stability_conditions(
    variant: ControllerVariant,
    gains: &ControllerGains,
    theta_max: f64,
) -> StabilityReport {
    let k = match variant {
        ControllerVariant::Bsmc => [
            gains.smc.k[0] / gains.smc.boundary_layer,
            gains.smc.k[1] / gains.smc.boundary_layer,
            gains.smc.k[2] / gains.smc.boundary_layer,
        ],
        _ => [gains.k_u, gains.k_q, gains.k_r],
    };
    let sh = &gains.shunting;
    let blocks: [BlockReport; 3] = std::array::from_fn(|j| {
        if variant.uses_shunting() {
            block(k[j], &[sh.b[j], sh.b_prime[j]], sh.a[j])
        } else {
            BlockReport {
                eigen_re: [-k[j]; 2],
                decay_rate: k[j],
                hurwitz: k[j] > 0.0,
            }
        }
    });
    let ratio = |c: f64, gain: f64, sec2: f64| {
        if c > 0.0 {
            sec2 / (c * gain)
        } else {
            f64::INFINITY
        }
    };
    let sec = 1.0 / theta_max.cos();
    StabilityReport {
        pitch_ratio: ratio(blocks[1].decay_rate, gains.k_theta, 1.0),
        yaw_ratio: ratio(blocks[2].decay_rate, gains.k_psi, sec * sec),
        blocks,
        theta_max,
    }
}
