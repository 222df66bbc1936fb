//! Self-test suites behind `cmd_check`: oracle equivalence, unitarity,
//! transfer-amplitude formula, and folding identity, each reporting its max
//! residual against a fixed threshold.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bands::{self, transfer_amplitude};
use crate::error::Result;
use crate::evolve::{KspaceEngine, PropagatorChoice, PulseSchedule, RealspaceEngine, RunOptions};
use crate::lattice::{Boundary, InitialStateSpec, LatticeSpec, WaveState};

#[derive(Debug, Clone, Copy)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub residual: f64,
    pub threshold: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.residual < self.threshold
    }
}

fn random_state(spec: &LatticeSpec, rng: &mut ChaCha8Rng) -> WaveState {
    let mut st = WaveState::zero(spec);
    for a in &mut st.amplitudes {
        *a = Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
    }
    st.normalize().unwrap();
    st
}

/// Max amplitude residual between the k-space and dense real-space
/// propagators over random (state, M, duration) trials.
fn oracle_equivalence(size: usize, trials: usize, perturbation: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst = 0.0_f64;
    let specs = [
        LatticeSpec::chain(size, 1.0, Boundary::Periodic)?,
        LatticeSpec::square(size, size, 1.0, Boundary::Periodic)?,
    ];
    for spec in &specs {
        let mut kspace = KspaceEngine::new(spec)?;
        let mut realspace = RealspaceEngine::new(spec)?;
        realspace.perturbation = perturbation;
        for _ in 0..trials {
            let st = random_state(spec, &mut rng);
            let m = rng.gen::<f64>() * 20.0;
            let duration = rng.gen::<f64>() * 5.0;
            let mut a = st.clone();
            let mut b = st;
            kspace.evolve_segment(&mut a, m, duration)?;
            realspace.evolve_segment(&mut b, m, duration)?;
            for (x, y) in a.amplitudes.iter().zip(b.amplitudes.iter()) {
                worst = worst.max((x - y).norm());
            }
        }
    }
    Ok(worst)
}

/// Max norm drift over a pi-pulse protocol on a ring, both propagators.
fn unitarity(size: usize) -> Result<f64> {
    let spec = LatticeSpec::chain(size, 1.0, Boundary::Periodic)?;
    let init = InitialStateSpec::Gaussian {
        center: vec![size as f64 / 2.0],
        width: size as f64 / 16.0,
        momentum: vec![0.5],
        allow_unfolded: false,
    };
    let (t0, m) = (3.0, 10.0);
    let schedule = PulseSchedule::pi_pulse(t0, m)?;
    let t_end = 2.0 * t0 + PI / (2.0 * m);
    let mut worst = 0.0_f64;
    for prop in [PropagatorChoice::Kspace, PropagatorChoice::Realspace] {
        let mut opts = RunOptions::new(t_end, t_end / 50.0);
        opts.propagator = prop;
        let state = crate::lattice::make_state(&spec, &init)?;
        let (_, st) = crate::evolve::run_protocol_with_state(&spec, state, &schedule, &opts)?;
        worst = worst.max((st.norm() - 1.0).abs());
    }
    Ok(worst)
}

/// RK4 integration of the 2x2 pulse Hamiltonian [[-j, m], [m, j]].
fn pulse_rk4(j: f64, m: f64, duration: f64) -> [Complex64; 4] {
    let h = [
        Complex64::new(-j, 0.0),
        Complex64::new(m, 0.0),
        Complex64::new(m, 0.0),
        Complex64::new(j, 0.0),
    ];
    let deriv = |u: &[Complex64; 4]| -> [Complex64; 4] {
        let mi = Complex64::new(0.0, -1.0);
        [
            mi * (h[0] * u[0] + h[1] * u[2]),
            mi * (h[0] * u[1] + h[1] * u[3]),
            mi * (h[2] * u[0] + h[3] * u[2]),
            mi * (h[2] * u[1] + h[3] * u[3]),
        ]
    };
    let steps = 20_000;
    let dt = duration / steps as f64;
    let mut u = [
        Complex64::new(1.0, 0.0),
        Complex64::new(0.0, 0.0),
        Complex64::new(0.0, 0.0),
        Complex64::new(1.0, 0.0),
    ];
    for _ in 0..steps {
        let k1 = deriv(&u);
        let mut u2 = u;
        for i in 0..4 {
            u2[i] += k1[i] * (dt / 2.0);
        }
        let k2 = deriv(&u2);
        let mut u3 = u;
        for i in 0..4 {
            u3[i] += k2[i] * (dt / 2.0);
        }
        let k3 = deriv(&u3);
        let mut u4 = u;
        for i in 0..4 {
            u4[i] += k3[i] * dt;
        }
        let k4 = deriv(&u4);
        for i in 0..4 {
            u[i] += (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (dt / 6.0);
        }
    }
    u
}

/// Closed-form (alpha, beta) vs RK4 exponentiation over a parameter grid.
fn beta_formula(grid: usize) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..grid {
        for jdx in 0..grid {
            for kdx in 0..grid {
                let j = 2.0 * i as f64 / (grid - 1) as f64;
                let m = 0.5 + 19.5 * jdx as f64 / (grid - 1) as f64;
                let dt = PI * kdx as f64 / (grid - 1) as f64;
                let (alpha, beta) = transfer_amplitude(j, m, dt);
                let u = pulse_rk4(j, m, dt);
                worst = worst
                    .max((u[0] - alpha).norm())
                    .max((u[1] - beta).norm())
                    .max((u[2] - beta).norm())
                    .max((u[3] - alpha.conj()).norm());
            }
        }
    }
    worst
}

/// dispersion_folded(M=0) vs +-dispersion_unfolded on the reduced BZ, plus
/// the 2M gap identity.
fn folding_identity(points: usize) -> Result<f64> {
    let spec = LatticeSpec::chain(256, 1.0, Boundary::Periodic)?;
    let mut worst = 0.0_f64;
    let m_gap = 3.7;
    let mut min_gap = f64::INFINITY;
    for i in 0..points {
        let k = -PI / (2.0 * spec.spacing) + PI / spec.spacing * i as f64 / points as f64;
        let k = [k];
        let (lo, hi) = bands::dispersion_folded(&spec, 0.0, &k)?;
        let e_k = bands::dispersion_unfolded(&spec, &k)?;
        let mut kq = [k[0] + PI / spec.spacing];
        if kq[0] > PI / spec.spacing {
            kq[0] -= 2.0 * PI / spec.spacing;
        }
        let e_kq = bands::dispersion_unfolded(&spec, &kq)?;
        let (a, b) = if e_k <= e_kq { (e_k, e_kq) } else { (e_kq, e_k) };
        worst = worst.max((lo - a).abs()).max((hi - b).abs());
        let (glo, ghi) = bands::dispersion_folded(&spec, m_gap, &k)?;
        min_gap = min_gap.min(ghi - glo);
    }
    Ok(worst.max((min_gap - 2.0 * m_gap).abs()))
}

/// Run every suite at the given lattice size (even, >= 4).
pub fn run_checks(size: usize, perturb: bool) -> Result<Vec<CheckOutcome>> {
    let size = size.max(4) & !1;
    let perturbation = if perturb { 1e-6 } else { 0.0 };
    Ok(vec![
        CheckOutcome {
            name: "oracle_equivalence",
            residual: oracle_equivalence(size, 20, perturbation)?,
            threshold: 1e-10,
        },
        CheckOutcome {
            name: "unitarity",
            residual: unitarity(size.max(8))?,
            threshold: 1e-10,
        },
        CheckOutcome {
            name: "beta_formula",
            residual: beta_formula(6),
            threshold: 1e-8,
        },
        CheckOutcome {
            name: "folding_identity",
            residual: folding_identity(256)?,
            threshold: 1e-12,
        },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Instant;

    #[test]
    fn all_checks_pass_clean() {
        for c in run_checks(8, false).unwrap() {
            assert!(c.passed(), "{} residual {}", c.name, c.residual);
        }
    }

    #[test]
    fn perturbation_fails_oracle_check_only() {
        let outcomes = run_checks(8, true).unwrap();
        let oracle = outcomes.iter().find(|c| c.name == "oracle_equivalence").unwrap();
        assert!(!oracle.passed(), "residual {}", oracle.residual);
        for c in outcomes.iter().filter(|c| c.name != "oracle_equivalence") {
            assert!(c.passed(), "{} residual {}", c.name, c.residual);
        }
    }

    #[test]
    fn size_four_is_fast() {
        let start = Instant::now();
        let outcomes = run_checks(4, false).unwrap();
        assert!(outcomes.iter().all(|c| c.passed()));
        assert!(start.elapsed().as_secs_f64() < 1.0, "{:?}", start.elapsed());
    }
}
