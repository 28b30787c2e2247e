//! Bilinear-discretized Butterworth low-pass sections.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use super::FrontEndError;

/// Analog low-pass prototype: first order, or second-order Butterworth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowPassSpec {
    pub order: u8,
    pub cutoff_hz: f64,
}

impl LowPassSpec {
    pub const fn second_order(cutoff_hz: f64) -> Self {
        Self {
            order: 2,
            cutoff_hz,
        }
    }

    /// Prewarped bilinear transform at `sample_rate_hz`.
    pub fn design(&self, sample_rate_hz: f64) -> Result<Biquad, FrontEndError> {
        if !(self.cutoff_hz > 0.0) {
            return Err(FrontEndError::InvalidConfig("cutoff_hz must be > 0".into()));
        }
        if self.cutoff_hz >= sample_rate_hz / 2.0 {
            return Err(FrontEndError::CutoffAboveNyquist {
                cutoff_hz: self.cutoff_hz,
                nyquist_hz: sample_rate_hz / 2.0,
            });
        }
        let k = (PI * self.cutoff_hz / sample_rate_hz).tan();
        match self.order {
            1 => {
                let b0 = k / (1.0 + k);
                Ok(Biquad {
                    b: [b0, b0, 0.0],
                    a: [(k - 1.0) / (k + 1.0), 0.0],
                })
            }
            2 => {
                let norm = 1.0 / (1.0 + SQRT_2 * k + k * k);
                let b0 = k * k * norm;
                Ok(Biquad {
                    b: [b0, 2.0 * b0, b0],
                    a: [
                        2.0 * (k * k - 1.0) * norm,
                        (1.0 - SQRT_2 * k + k * k) * norm,
                    ],
                })
            }
            other => Err(FrontEndError::InvalidConfig(format!(
                "filter order {other} (expected 1 or 2)"
            ))),
        }
    }
}

/// `H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Transposed direct form II, with the state preloaded so that a
    /// constant input equal to the first sample passes straight through.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let x0 = x.first().copied().unwrap_or(0.0);
        let mut s1 = (1.0 - b0) * x0;
        let mut s2 = (b2 - a2) * x0;
        x.iter()
            .map(|&xn| {
                let y = b0 * xn + s1;
                s1 = b1 * xn - a1 * y + s2;
                s2 = b2 * xn - a2 * y;
                y
            })
            .collect()
    }

    /// `|H(e^{jωT})|` at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / sample_rate_hz;
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        let nr = self.b[0] + self.b[1] * c1 + self.b[2] * c2;
        let ni = self.b[1] * s1 + self.b[2] * s2;
        let dr = 1.0 + self.a[0] * c1 + self.a[1] * c2;
        let di = self.a[0] * s1 + self.a[1] * s2;
        ((nr * nr + ni * ni) / (dr * dr + di * di)).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unity_gain_at_dc() {
        for order in [1, 2] {
            let f = LowPassSpec {
                order,
                cutoff_hz: 150.0,
            }
            .design(1e6)
            .unwrap();
            assert!((f.magnitude(0.0, 1e6) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn half_power_at_cutoff() {
        for order in [1, 2] {
            let f = LowPassSpec {
                order,
                cutoff_hz: 150.0,
            }
            .design(1e6)
            .unwrap();
            assert!((f.magnitude(150.0, 1e6) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_designs() {
        assert!(matches!(
            LowPassSpec::second_order(5e5).design(1e6),
            Err(FrontEndError::CutoffAboveNyquist { .. })
        ));
        assert!(LowPassSpec {
            order: 3,
            cutoff_hz: 100.0
        }
        .design(1e6)
        .is_err());
    }
}
