//! Echo metrics and predictions: amplitude fidelity, overlap, sublattice
//! populations, centroid kinematics, and the analytic echo prediction built
//! from the per-k transfer amplitude.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::bands::{self, transfer_amplitude};
use crate::error::{EchoError, Result};
use crate::evolve::{PulseKind, Trajectory};
use crate::lattice::{sublattice_parity, Boundary, LatticeSpec, WaveState};

fn check_shapes(a: &WaveState, b: &WaveState) -> Result<()> {
    if a.extents != b.extents {
        return Err(EchoError::InvalidInput("state shape mismatch".into()));
    }
    Ok(())
}

/// Signal fidelity F = sum_n |psi_n(ref)| |psi_n(cur)|; phase-blind site-wise.
pub fn fidelity_amplitude(reference: &WaveState, current: &WaveState) -> Result<f64> {
    check_shapes(reference, current)?;
    Ok(reference
        .amplitudes
        .iter()
        .zip(current.amplitudes.iter())
        .map(|(a, b)| a.norm() * b.norm())
        .sum())
}

/// |<psi_ref | psi_cur>|.
pub fn overlap_modulus(reference: &WaveState, current: &WaveState) -> Result<f64> {
    check_shapes(reference, current)?;
    Ok(reference
        .amplitudes
        .iter()
        .zip(current.amplitudes.iter())
        .map(|(a, b)| a.conj() * b)
        .sum::<Complex64>()
        .norm())
}

/// Probability weight on the two sublattices, (P_A, P_B).
pub fn sublattice_populations(state: &WaveState, spec: &LatticeSpec) -> Result<(f64, f64)> {
    if state.extents != spec.extents {
        return Err(EchoError::InvalidInput("state shape mismatch".into()));
    }
    let mut pa = 0.0;
    let mut pb = 0.0;
    for (idx, a) in state.amplitudes.iter().enumerate() {
        let coord = spec.site_coord(idx);
        if sublattice_parity(spec, &coord)? > 0 {
            pa += a.norm_sqr();
        } else {
            pb += a.norm_sqr();
        }
    }
    Ok((pa, pb))
}

/// Probability centroid <n> * ell per axis. Periodic lattices use the
/// circular mean so that packets wrapping the boundary stay well defined.
pub fn centroid(state: &WaveState, spec: &LatticeSpec) -> Result<Vec<f64>> {
    if state.extents != spec.extents {
        return Err(EchoError::InvalidInput("state shape mismatch".into()));
    }
    let probs = state.probabilities();
    let total: f64 = probs.iter().sum();
    let mut out = vec![0.0; spec.dimension()];
    for axis in 0..spec.dimension() {
        let l = spec.extents[axis] as f64;
        match spec.boundary {
            Boundary::Open => {
                let mut acc = 0.0;
                for (idx, &p) in probs.iter().enumerate() {
                    acc += spec.site_coord(idx)[axis] as f64 * p;
                }
                out[axis] = acc / total * spec.spacing;
            }
            Boundary::Periodic => {
                let mut re = 0.0;
                let mut im = 0.0;
                for (idx, &p) in probs.iter().enumerate() {
                    let theta = 2.0 * PI * spec.site_coord(idx)[axis] as f64 / l;
                    re += p * theta.cos();
                    im += p * theta.sin();
                }
                let mut pos = im.atan2(re) / (2.0 * PI) * l;
                if pos < 0.0 {
                    pos += l;
                }
                out[axis] = pos * spec.spacing;
            }
        }
    }
    Ok(out)
}

/// Least-squares slope of the centroid over a window of at least two states,
/// with periodic unwrapping of the centroid track.
pub fn centroid_velocity(states: &[WaveState], spec: &LatticeSpec) -> Result<Vec<f64>> {
    if states.len() < 2 {
        return Err(EchoError::InvalidInput(
            "centroid velocity needs at least two states".into(),
        ));
    }
    let mut tracks: Vec<Vec<f64>> = vec![Vec::with_capacity(states.len()); spec.dimension()];
    for st in states {
        let c = centroid(st, spec)?;
        for axis in 0..spec.dimension() {
            tracks[axis].push(c[axis]);
        }
    }
    // unwrap jumps across the periodic boundary
    if spec.boundary == Boundary::Periodic {
        for (axis, track) in tracks.iter_mut().enumerate() {
            let l = spec.extents[axis] as f64 * spec.spacing;
            for i in 1..track.len() {
                let mut d = track[i] - track[i - 1];
                d -= l * (d / l).round();
                track[i] = track[i - 1] + d;
            }
        }
    }
    let times: Vec<f64> = states.iter().map(|s| s.time).collect();
    let t_mean = times.iter().sum::<f64>() / times.len() as f64;
    let denom: f64 = times.iter().map(|t| (t - t_mean).powi(2)).sum();
    if denom == 0.0 {
        return Err(EchoError::InvalidInput(
            "window has no time extent".into(),
        ));
    }
    Ok(tracks
        .iter()
        .map(|track| {
            let x_mean = track.iter().sum::<f64>() / track.len() as f64;
            times
                .iter()
                .zip(track.iter())
                .map(|(t, x)| (t - t_mean) * (x - x_mean))
                .sum::<f64>()
                / denom
        })
        .collect())
}

/// Analytic echo prediction: decompose the initial state into momentum pairs,
/// apply free phases for `t0`, the closed-form pulse amplitudes, free phases
/// for `t0` again, and evaluate the amplitude fidelity of the reconstructed
/// state against the initial one.
pub fn predict_echo_fidelity(
    initial: &WaveState,
    spec: &LatticeSpec,
    pulse: PulseKind,
    delta_t: f64,
    t0: f64,
) -> Result<f64> {
    if initial.extents != spec.extents {
        return Err(EchoError::InvalidInput("state shape mismatch".into()));
    }
    if spec.boundary != Boundary::Periodic {
        return Err(EchoError::InvalidInput(
            "echo prediction requires periodic boundaries".into(),
        ));
    }
    let pairs = bands::reduced_pairs(spec)?;
    let n = initial.amplitudes.len() as f64;
    let mut hat = initial.amplitudes.clone();
    let mut planner = FftPlanner::new();
    crate::evolve::fft_for_analysis(&mut planner, &mut hat, &spec.extents, false);

    for p in &pairs {
        // exact single-particle energies of the pair members; for an odd-order
        // stencil e2 - e1 reduces to 2 J(k) and the mean to 2 E0
        let e1 = bands::dispersion_unfolded(spec, &p.k)?;
        let e2 = bands::dispersion_unfolded(spec, &bands::grid_momentum(spec, p.partner))?;
        let j_eff = 0.5 * (e2 - e1);
        let mean = 0.5 * (e1 + e2);
        let ph1 = Complex64::from_polar(1.0, -e1 * t0);
        let ph2 = Complex64::from_polar(1.0, -e2 * t0);
        let (alpha, beta, pulse_phase) = match pulse {
            PulseKind::Staggered { strength } => {
                let (a, b) = transfer_amplitude(j_eff, strength, delta_t);
                (a, b, Complex64::from_polar(1.0, -mean * delta_t))
            }
            PulseKind::PhaseFlip => (
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, -1.0),
                Complex64::new(1.0, 0.0),
            ),
        };
        let c1 = hat[p.index] * ph1;
        let c2 = hat[p.partner] * ph2;
        let d1 = pulse_phase * (alpha * c1 + beta * c2);
        let d2 = pulse_phase * (beta * c1 + alpha.conj() * c2);
        hat[p.index] = d1 * ph1;
        hat[p.partner] = d2 * ph2;
    }
    crate::evolve::fft_for_analysis(&mut planner, &mut hat, &spec.extents, true);
    let predicted = WaveState {
        amplitudes: hat.iter().map(|a| a / n).collect(),
        extents: spec.extents.clone(),
        time: 2.0 * t0 + delta_t,
    };
    fidelity_amplitude(initial, &predicted)
}

/// Located post-pulse fidelity maximum and the analytic prediction for it.
#[derive(Debug, Clone, Copy)]
pub struct EchoReport {
    pub peak_time: f64,
    pub peak_value: f64,
    pub predicted_value: f64,
    pub residual: f64,
    /// False when the post-pulse maximum stays below the no-echo level (0.5).
    pub revival: bool,
}

pub const REVIVAL_THRESHOLD: f64 = 0.5;

impl EchoReport {
    /// Flat key=value block for run summaries.
    pub fn to_kv(&self) -> String {
        format!(
            "peak_time={:.16e}\npeak_value={:.16e}\npredicted_value={:.16e}\nresidual={:.16e}\nrevival={}\n",
            self.peak_time, self.peak_value, self.predicted_value, self.residual, self.revival
        )
    }
}

/// Locate the post-pulse fidelity maximum, refined by a parabola through the
/// three samples around the discrete max, and assemble the report.
pub fn echo_report(
    trajectory: &Trajectory,
    pulse_end: f64,
    predicted_value: f64,
) -> Result<EchoReport> {
    let post: Vec<(f64, f64)> = trajectory
        .times
        .iter()
        .zip(trajectory.fidelity.iter())
        .filter(|(t, _)| **t > pulse_end + 1e-12)
        .map(|(t, f)| (*t, *f))
        .collect();
    if post.is_empty() {
        return Err(EchoError::InvalidInput(
            "trajectory has no samples past the pulse".into(),
        ));
    }
    let i_max = post
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap())
        .unwrap()
        .0;
    let (mut peak_time, mut peak_value) = post[i_max];
    if i_max > 0 && i_max + 1 < post.len() {
        let (ta, fa) = post[i_max - 1];
        let (tb, fb) = post[i_max];
        let (tc, fc) = post[i_max + 1];
        // Newton form of the parabola through the three points
        let d1 = (fb - fa) / (tb - ta);
        let d2 = ((fc - fb) / (tc - tb) - d1) / (tc - ta);
        if d2 < 0.0 {
            let t_star = 0.5 * (ta + tb) - d1 / (2.0 * d2);
            if t_star >= ta && t_star <= tc {
                peak_time = t_star;
                peak_value = fa + d1 * (t_star - ta) + d2 * (t_star - ta) * (t_star - tb);
            }
        }
    }
    Ok(EchoReport {
        peak_time,
        peak_value,
        predicted_value,
        residual: (peak_value - predicted_value).abs(),
        revival: peak_value >= REVIVAL_THRESHOLD,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolve::{
        evolve_segment_kspace, run_protocol_from, PulseEvent, PulseSchedule, RunOptions,
    };
    use crate::lattice::{make_state, InitialStateSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ring(n: usize) -> LatticeSpec {
        LatticeSpec::chain(n, 1.0, Boundary::Periodic).unwrap()
    }

    fn gaussian(spec: &LatticeSpec, center: f64, width: f64, k0: f64) -> WaveState {
        make_state(
            spec,
            &InitialStateSpec::Gaussian {
                center: vec![center],
                width,
                momentum: vec![k0],
                allow_unfolded: false,
            },
        )
        .unwrap()
    }

    #[test]
    fn fidelity_examples() {
        let spec = ring(4);
        let st = gaussian(&spec, 2.0, 1.0, 0.3);
        assert!((fidelity_amplitude(&st, &st).unwrap() - 1.0).abs() < 1e-12);

        let mut uniform = WaveState::zero(&spec);
        for a in &mut uniform.amplitudes {
            *a = Complex64::new(0.5, 0.0);
        }
        let mut localized = WaveState::zero(&spec);
        localized.amplitudes[1] = Complex64::new(1.0, 0.0);
        assert!((fidelity_amplitude(&uniform, &localized).unwrap() - 0.5).abs() < 1e-12);

        let mut disjoint = WaveState::zero(&spec);
        disjoint.amplitudes[0] = Complex64::new(1.0, 0.0);
        assert!(fidelity_amplitude(&localized, &disjoint).unwrap() == 0.0);
    }

    #[test]
    fn overlap_examples_and_phase_blindness() {
        let spec = ring(8);
        let st = gaussian(&spec, 4.0, 1.5, 0.4);
        assert!((overlap_modulus(&st, &st).unwrap() - 1.0).abs() < 1e-12);
        let mut rotated = st.clone();
        let phase = Complex64::from_polar(1.0, 1.234);
        for a in &mut rotated.amplitudes {
            *a *= phase;
        }
        assert!((overlap_modulus(&st, &rotated).unwrap() - 1.0).abs() < 1e-12);
        // site-wise phases change overlap but never fidelity
        let mut twisted = st.clone();
        for (i, a) in twisted.amplitudes.iter_mut().enumerate() {
            *a *= Complex64::from_polar(1.0, i as f64);
        }
        assert!(
            (fidelity_amplitude(&st, &twisted).unwrap() - 1.0).abs() < 1e-12,
            "fidelity is phase-blind"
        );
        assert!(overlap_modulus(&st, &twisted).unwrap() < 1.0);
    }

    #[test]
    fn fidelity_dominates_overlap() {
        let spec = ring(16);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let mut a = WaveState::zero(&spec);
            let mut b = WaveState::zero(&spec);
            for x in a.amplitudes.iter_mut().chain(b.amplitudes.iter_mut()) {
                *x = Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            }
            a.normalize().unwrap();
            b.normalize().unwrap();
            let f = fidelity_amplitude(&a, &b).unwrap();
            let o = overlap_modulus(&a, &b).unwrap();
            assert!(f >= o - 1e-12);
            assert!(f <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn sublattice_population_examples() {
        let spec = ring(8);
        let mut single = WaveState::zero(&spec);
        single.amplitudes[2] = Complex64::new(1.0, 0.0);
        assert_eq!(sublattice_populations(&single, &spec).unwrap(), (1.0, 0.0));

        let mut uniform = WaveState::zero(&spec);
        for a in &mut uniform.amplitudes {
            *a = Complex64::new(1.0, 0.0);
        }
        uniform.normalize().unwrap();
        let (pa, pb) = sublattice_populations(&uniform, &spec).unwrap();
        assert!((pa - 0.5).abs() < 1e-12 && (pb - 0.5).abs() < 1e-12);

        let wide = gaussian(&ring(64), 32.0, 8.0, 0.0);
        let (pa, pb) = sublattice_populations(&wide, &ring(64)).unwrap();
        assert!((pa + pb - 1.0).abs() < 1e-12);
        assert!((pa - 0.5).abs() < 1e-2);
    }

    fn free_states(spec: &LatticeSpec, st: &WaveState, n: usize, dt: f64) -> Vec<WaveState> {
        let mut out = vec![st.clone()];
        for _ in 0..n {
            let next = evolve_segment_kspace(out.last().unwrap(), spec, 0.0, dt).unwrap();
            out.push(next);
        }
        out
    }

    #[test]
    fn centroid_velocity_stationary_packet() {
        let spec = ring(64);
        let st = gaussian(&spec, 32.0, 4.0, 0.0);
        let states = free_states(&spec, &st, 10, 0.2);
        let v = centroid_velocity(&states, &spec).unwrap();
        assert!(v[0].abs() < 1e-6);
    }

    #[test]
    fn centroid_velocity_matches_group_velocity() {
        let spec = ring(128);
        let k0 = PI / 4.0;
        let st = gaussian(&spec, 64.0, 4.0, k0);
        let states = free_states(&spec, &st, 10, 0.2);
        let v = centroid_velocity(&states, &spec).unwrap();
        let vg = k0.sin(); // J ell sin(k0 ell)
        assert!(
            (v[0] - vg).abs() < 0.02 * vg,
            "measured {} vs group velocity {vg}",
            v[0]
        );
    }

    #[test]
    fn centroid_velocity_reverses_after_pulse() {
        let spec = ring(128);
        let k0 = PI / 4.0;
        let st = gaussian(&spec, 64.0, 4.0, k0);
        let before = centroid_velocity(&free_states(&spec, &st, 10, 0.2), &spec).unwrap()[0];
        let m = 50.0;
        let pulsed = evolve_segment_kspace(&st, &spec, m, PI / (2.0 * m)).unwrap();
        let after = centroid_velocity(&free_states(&spec, &pulsed, 10, 0.2), &spec).unwrap()[0];
        assert!(
            (after + before).abs() <= 0.05 * before.abs(),
            "before {before}, after {after}"
        );
    }

    #[test]
    fn centroid_velocity_needs_two_states() {
        let spec = ring(8);
        let st = gaussian(&spec, 4.0, 1.0, 0.0);
        assert!(centroid_velocity(&[st], &spec).is_err());
    }

    #[test]
    fn prediction_phase_flip_limit_is_exact() {
        let spec = ring(32);
        let st = gaussian(&spec, 16.0, 2.0, 0.6);
        let f = predict_echo_fidelity(&st, &spec, PulseKind::PhaseFlip, 0.0, 7.0).unwrap();
        assert!((f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prediction_zero_pulse_equals_free_fidelity() {
        let spec = ring(64);
        let st = gaussian(&spec, 32.0, 3.0, 0.5);
        let t0 = 4.0;
        let f = predict_echo_fidelity(
            &st,
            &spec,
            PulseKind::Staggered { strength: 10.0 },
            0.0,
            t0,
        )
        .unwrap();
        let free = evolve_segment_kspace(&st, &spec, 0.0, 2.0 * t0).unwrap();
        let f_free = fidelity_amplitude(&st, &free).unwrap();
        assert!((f - f_free).abs() < 1e-12);
    }

    #[test]
    fn prediction_matches_protocol_peak() {
        let spec = ring(64);
        let init = InitialStateSpec::Gaussian {
            center: vec![32.0],
            width: 3.0,
            momentum: vec![0.7],
            allow_unfolded: false,
        };
        let st = make_state(&spec, &init).unwrap();
        let (t0, m) = (10.0, 10.0);
        let dt = PI / (2.0 * m);
        let predicted =
            predict_echo_fidelity(&st, &spec, PulseKind::Staggered { strength: m }, dt, t0)
                .unwrap();
        let schedule = PulseSchedule::new(vec![PulseEvent::staggered(t0, dt, m)]).unwrap();
        let traj = run_protocol_from(
            &spec,
            st.clone(),
            &schedule,
            &RunOptions::new(2.0 * t0 + dt, 0.05),
        )
        .unwrap();
        // the final sample sits exactly at the echo time 2 t0 + dT
        let f_end = *traj.fidelity.last().unwrap();
        assert!(
            (f_end - predicted).abs() < 1e-6,
            "simulated {f_end}, predicted {predicted}"
        );
        assert!(predicted > 0.9);
    }

    #[test]
    fn prediction_matches_protocol_with_further_neighbors() {
        for (order, amp) in [(2usize, 0.15), (3usize, 0.15)] {
            let spec = ring(64).with_neighbor(order, amp).unwrap();
            let st = gaussian(&spec, 32.0, 3.0, 0.5);
            let (t0, m) = (5.0, 10.0);
            let dt = PI / (2.0 * m);
            let predicted =
                predict_echo_fidelity(&st, &spec, PulseKind::Staggered { strength: m }, dt, t0)
                    .unwrap();
            let schedule = PulseSchedule::new(vec![PulseEvent::staggered(t0, dt, m)]).unwrap();
            let traj = run_protocol_from(
                &spec,
                st.clone(),
                &schedule,
                &RunOptions::new(2.0 * t0 + dt, 0.05),
            )
            .unwrap();
            let f_end = *traj.fidelity.last().unwrap();
            assert!(
                (f_end - predicted).abs() < 1e-6,
                "order {order}: simulated {f_end}, predicted {predicted}"
            );
        }
    }

    #[test]
    fn prediction_peaks_at_pi_pulse() {
        // peak value over M dT in (0, pi/2] is maximal at the pi-pulse
        let spec = ring(64);
        let st = gaussian(&spec, 32.0, 3.0, 0.7);
        let (t0, m) = (6.0, 10.0);
        let mut values = Vec::new();
        for i in 1..=8 {
            let mdt = PI / 2.0 * i as f64 / 8.0;
            let f = predict_echo_fidelity(
                &st,
                &spec,
                PulseKind::Staggered { strength: m },
                mdt / m,
                t0,
            )
            .unwrap();
            values.push(f);
        }
        let argmax = values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 7, "fidelities {values:?}");
    }

    #[test]
    fn echo_report_parabola_refinement() {
        let times: Vec<f64> = (0..400).map(|i| i as f64 * 0.1).collect();
        let fidelity: Vec<f64> = times.iter().map(|t| 1.0 - (t - 20.0) * (t - 20.0)).collect();
        let traj = Trajectory {
            times,
            fidelity,
            overlap: vec![],
            snapshots: vec![],
            band_occupations: None,
        };
        let rep = echo_report(&traj, 10.0, 1.0).unwrap();
        assert!((rep.peak_time - 20.0).abs() < 1e-6);
        assert!((rep.peak_value - 1.0).abs() < 1e-9);
        assert!(rep.revival);
    }

    #[test]
    fn echo_report_free_run_flags_no_revival() {
        let spec = ring(64);
        let st = gaussian(&spec, 32.0, 2.0, 0.8);
        let traj = run_protocol_from(
            &spec,
            st,
            &PulseSchedule::empty(),
            &RunOptions::new(20.0, 0.1),
        )
        .unwrap();
        let rep = echo_report(&traj, 10.0, 0.0).unwrap();
        assert!(!rep.revival, "free run peak {}", rep.peak_value);
        assert!(rep.peak_value < REVIVAL_THRESHOLD);
    }

    #[test]
    fn echo_report_needs_post_pulse_samples() {
        let traj = Trajectory {
            times: vec![0.0, 1.0],
            fidelity: vec![1.0, 0.9],
            overlap: vec![],
            snapshots: vec![],
            band_occupations: None,
        };
        assert!(echo_report(&traj, 5.0, 0.0).is_err());
    }

    #[test]
    fn overlap_lower_than_fidelity_after_echo() {
        // two-sublattice state: the pulse leaves a relative sublattice phase
        // that penalizes the overlap but not the amplitude fidelity
        let spec = ring(64);
        let init = InitialStateSpec::Gaussian {
            center: vec![32.0],
            width: 3.0,
            momentum: vec![0.0],
            allow_unfolded: false,
        };
        let st = make_state(&spec, &init).unwrap();
        let (t0, m) = (8.0, 10.0);
        let dt = PI / (2.0 * m);
        let schedule = PulseSchedule::new(vec![PulseEvent::staggered(t0, dt, m)]).unwrap();
        let traj = run_protocol_from(
            &spec,
            st,
            &schedule,
            &RunOptions::new(2.0 * t0 + dt, 0.05),
        )
        .unwrap();
        let f_end = *traj.fidelity.last().unwrap();
        let o_end = *traj.overlap.last().unwrap();
        assert!(f_end > 0.9);
        assert!(o_end < f_end, "overlap {o_end} vs fidelity {f_end}");
    }
}
