//! Exact time evolution under piecewise-constant Hamiltonians: a fast
//! supercell k-space propagator and an independent dense real-space oracle,
//! plus the echo protocol runner.
//!
//! The staggered potential couples each lattice momentum k only to k + Q,
//! Q = (pi/ell, ..) being the folding vector, so the full Hamiltonian is
//! block diagonal in momentum pairs and each segment is an exact 2x2
//! exponential per pair.

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::analysis;
use crate::bands::{self, MomentumPair};
use crate::error::{EchoError, Result};
use crate::lattice::{sublattice_parity, Boundary, InitialStateSpec, LatticeSpec, WaveState};

/// Dense-diagonalization guard for the real-space oracle.
pub const MAX_DENSE_SITES: usize = 4096;

const TIME_TOL: f64 = 1e-9;

/// What a pulse event applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PulseKind {
    /// Staggered potential of strength M, evolved with the full H0 + Hint.
    Staggered { strength: f64 },
    /// M -> infinity limit: instantaneous -i/+i phases on the two sublattices.
    PhaseFlip,
}

/// One staggered-potential pulse event.
#[derive(Debug, Clone, Copy)]
pub struct PulseEvent {
    pub t_start: f64,
    pub duration: f64,
    pub kind: PulseKind,
    /// +1 or -1; -1 swaps the sublattice roles.
    pub sign: f64,
}

impl PulseEvent {
    pub fn staggered(t_start: f64, duration: f64, strength: f64) -> Self {
        PulseEvent {
            t_start,
            duration,
            kind: PulseKind::Staggered { strength },
            sign: 1.0,
        }
    }

    pub fn phase_flip(t_start: f64) -> Self {
        PulseEvent {
            t_start,
            duration: 0.0,
            kind: PulseKind::PhaseFlip,
            sign: 1.0,
        }
    }

    pub fn t_end(&self) -> f64 {
        self.t_start + self.duration
    }
}

/// Ordered, non-overlapping list of pulse events.
#[derive(Debug, Clone, Default)]
pub struct PulseSchedule {
    pub events: Vec<PulseEvent>,
}

impl PulseSchedule {
    pub fn new(events: Vec<PulseEvent>) -> Result<Self> {
        let s = PulseSchedule { events };
        s.validate()?;
        Ok(s)
    }

    pub fn empty() -> Self {
        PulseSchedule { events: Vec::new() }
    }

    /// The reference protocol: one pi-pulse of strength M at t0, dT = pi/(2M).
    pub fn pi_pulse(t0: f64, m: f64) -> Result<Self> {
        Self::new(vec![PulseEvent::staggered(
            t0,
            std::f64::consts::PI / (2.0 * m),
            m,
        )])
    }

    pub fn validate(&self) -> Result<()> {
        for ev in &self.events {
            if ev.sign != 1.0 && ev.sign != -1.0 {
                return Err(EchoError::InvalidInput("pulse sign must be +-1".into()));
            }
            match ev.kind {
                PulseKind::Staggered { strength } => {
                    if !(strength >= 0.0 && strength.is_finite()) {
                        return Err(EchoError::InvalidInput(
                            "pulse strength must be finite and >= 0".into(),
                        ));
                    }
                    if ev.duration <= 0.0 {
                        return Err(EchoError::InvalidInput("pulse duration must be > 0".into()));
                    }
                }
                PulseKind::PhaseFlip => {
                    if ev.duration != 0.0 {
                        return Err(EchoError::InvalidInput(
                            "phase-flip events are instantaneous".into(),
                        ));
                    }
                }
            }
        }
        for w in self.events.windows(2) {
            if w[1].t_start < w[0].t_end() - TIME_TOL {
                return Err(EchoError::InvalidInput(
                    "pulse events must be sorted and non-overlapping".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn last_end(&self) -> f64 {
        self.events.iter().map(|e| e.t_end()).fold(0.0, f64::max)
    }
}

/// Real symmetric Hamiltonian matrix over sites: -J_r/2 between r-th
/// neighbors per the stencil, diagonal E0 + parity * m.
pub fn build_hamiltonian(spec: &LatticeSpec, m: f64) -> Array2<f64> {
    let n = spec.num_sites();
    let mut h = Array2::<f64>::zeros((n, n));
    for idx in 0..n {
        let coord = spec.site_coord(idx);
        let parity = sublattice_parity(spec, &coord).unwrap() as f64;
        h[[idx, idx]] = spec.base_energy + parity * m;
        for hop in &spec.hoppings {
            let l = spec.extents[hop.axis] as isize;
            for dir in [-1isize, 1] {
                let step = dir * hop.order as isize;
                let c = coord[hop.axis] as isize + step;
                let wrapped = match spec.boundary {
                    Boundary::Periodic => c.rem_euclid(l),
                    Boundary::Open => {
                        if c < 0 || c >= l {
                            continue;
                        }
                        c
                    }
                };
                let mut nb = coord.clone();
                nb[hop.axis] = wrapped as usize;
                let j = spec.site_index(&nb).unwrap();
                h[[idx, j]] -= hop.amplitude / 2.0;
            }
        }
    }
    h
}

/// Apply the M -> infinity pi-pulse limit: phases -i on the positive-parity
/// sublattice and +i on the other (roles swapped for sign = -1).
pub fn apply_phase_flip(state: &mut WaveState, spec: &LatticeSpec, sign: f64) {
    for idx in 0..state.amplitudes.len() {
        let coord = spec.site_coord(idx);
        let p = sublattice_parity(spec, &coord).unwrap() as f64 * sign;
        let phase = if p > 0.0 {
            Complex64::new(0.0, -1.0)
        } else {
            Complex64::new(0.0, 1.0)
        };
        state.amplitudes[idx] *= phase;
    }
}

fn check_state(spec: &LatticeSpec, state: &WaveState) -> Result<()> {
    if state.extents != spec.extents {
        return Err(EchoError::InvalidInput(
            "state shape does not match lattice".into(),
        ));
    }
    Ok(())
}

/// Unnormalized FFT shared with the analysis module's prediction path.
pub(crate) fn fft_for_analysis(
    planner: &mut FftPlanner<f64>,
    data: &mut [Complex64],
    extents: &[usize],
    inverse: bool,
) {
    fft_nd(planner, data, extents, inverse)
}

/// In-place n-dimensional FFT, unnormalized; `inverse` flips the sign convention.
fn fft_nd(
    planner: &mut FftPlanner<f64>,
    data: &mut [Complex64],
    extents: &[usize],
    inverse: bool,
) {
    match extents {
        [_] => {
            let plan = if inverse {
                planner.plan_fft_inverse(data.len())
            } else {
                planner.plan_fft_forward(data.len())
            };
            plan.process(data);
        }
        [n1, n2] => {
            let (n1, n2) = (*n1, *n2);
            let row_plan = if inverse {
                planner.plan_fft_inverse(n2)
            } else {
                planner.plan_fft_forward(n2)
            };
            for row in data.chunks_exact_mut(n2) {
                row_plan.process(row);
            }
            let col_plan = if inverse {
                planner.plan_fft_inverse(n1)
            } else {
                planner.plan_fft_forward(n1)
            };
            let mut col = vec![Complex64::new(0.0, 0.0); n1];
            for c in 0..n2 {
                for r in 0..n1 {
                    col[r] = data[r * n2 + c];
                }
                col_plan.process(&mut col);
                for r in 0..n1 {
                    data[r * n2 + c] = col[r];
                }
            }
        }
        _ => unreachable!("validated dimension"),
    }
}

/// Supercell k-space propagator. Exact per momentum pair; periodic lattices
/// with even extents only.
pub struct KspaceEngine {
    spec: LatticeSpec,
    pairs: Vec<MomentumPair>,
    /// Unfolded energies at (representative, partner) per pair.
    energies: Vec<(f64, f64)>,
    planner: FftPlanner<f64>,
}

impl KspaceEngine {
    pub fn new(spec: &LatticeSpec) -> Result<Self> {
        spec.validate()?;
        if spec.boundary != Boundary::Periodic {
            return Err(EchoError::Unsupported(
                "k-space propagator requires periodic boundaries; \
                 use the real-space propagator for open lattices"
                    .into(),
            ));
        }
        let pairs = bands::reduced_pairs(spec)?;
        let energies = pairs
            .iter()
            .map(|p| {
                let e1 = bands::dispersion_unfolded(spec, &p.k)?;
                let kp = bands::grid_momentum(spec, p.partner);
                let e2 = bands::dispersion_unfolded(spec, &kp)?;
                Ok((e1, e2))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(KspaceEngine {
            spec: spec.clone(),
            pairs,
            energies,
            planner: FftPlanner::new(),
        })
    }

    /// Evolve under H0 + m * Hstag for `duration` (may be negative).
    pub fn evolve_segment(&mut self, state: &mut WaveState, m: f64, duration: f64) -> Result<()> {
        check_state(&self.spec, state)?;
        if duration == 0.0 {
            return Ok(());
        }
        let n = state.amplitudes.len() as f64;
        fft_nd(
            &mut self.planner,
            &mut state.amplitudes,
            &self.spec.extents,
            false,
        );
        for (pair, &(e1, e2)) in self.pairs.iter().zip(self.energies.iter()) {
            let c1 = state.amplitudes[pair.index];
            let c2 = state.amplitudes[pair.partner];
            let a = 0.5 * (e1 + e2);
            let bz = 0.5 * (e1 - e2);
            let bx = m;
            let bn = (bz * bz + bx * bx).sqrt();
            let global = Complex64::from_polar(1.0, -a * duration);
            let (d1, d2) = if bn == 0.0 {
                (c1, c2)
            } else {
                let theta = bn * duration;
                let (s, c) = theta.sin_cos();
                let mi_s = Complex64::new(0.0, -s);
                (
                    c * c1 + mi_s * ((bz / bn) * c1 + (bx / bn) * c2),
                    c * c2 + mi_s * ((bx / bn) * c1 - (bz / bn) * c2),
                )
            };
            state.amplitudes[pair.index] = global * d1;
            state.amplitudes[pair.partner] = global * d2;
        }
        fft_nd(
            &mut self.planner,
            &mut state.amplitudes,
            &self.spec.extents,
            true,
        );
        for a in &mut state.amplitudes {
            *a /= n;
        }
        state.time += duration;
        Ok(())
    }
}

/// Real-space oracle: dense spectral decomposition of the site Hamiltonian,
/// cached per staggered strength.
pub struct RealspaceEngine {
    spec: LatticeSpec,
    cache: HashMap<u64, (Array1<f64>, Array2<f64>)>,
    /// Test hook: added to one Hamiltonian entry before diagonalizing.
    pub perturbation: f64,
}

impl RealspaceEngine {
    pub fn new(spec: &LatticeSpec) -> Result<Self> {
        spec.validate()?;
        if spec.num_sites() > MAX_DENSE_SITES {
            return Err(EchoError::Resource(format!(
                "{} sites exceed the dense-diagonalization guard of {MAX_DENSE_SITES}",
                spec.num_sites()
            )));
        }
        Ok(RealspaceEngine {
            spec: spec.clone(),
            cache: HashMap::new(),
            perturbation: 0.0,
        })
    }

    fn decomposition(&mut self, m: f64) -> Result<&(Array1<f64>, Array2<f64>)> {
        let key = m.to_bits();
        if !self.cache.contains_key(&key) {
            let mut h = build_hamiltonian(&self.spec, m);
            if self.perturbation != 0.0 {
                h[[0, 0]] += self.perturbation;
            }
            let (vals, vecs) = h
                .eigh(UPLO::Lower)
                .map_err(|e| EchoError::InvalidInput(format!("eigendecomposition failed: {e}")))?;
            self.cache.insert(key, (vals, vecs));
        }
        Ok(&self.cache[&key])
    }

    /// Apply U = V exp(-i Lambda t) V^T.
    pub fn evolve_segment(&mut self, state: &mut WaveState, m: f64, duration: f64) -> Result<()> {
        check_state(&self.spec, state)?;
        if duration == 0.0 {
            return Ok(());
        }
        let n = state.amplitudes.len();
        let (vals, vecs) = self.decomposition(m)?;
        let mut modes = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n {
                acc += vecs[[i, j]] * state.amplitudes[i];
            }
            modes[j] = acc * Complex64::from_polar(1.0, -vals[j] * duration);
        }
        for i in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..n {
                acc += vecs[[i, j]] * modes[j];
            }
            state.amplitudes[i] = acc;
        }
        state.time += duration;
        Ok(())
    }
}

/// One-shot k-space segment evolution.
pub fn evolve_segment_kspace(
    state: &WaveState,
    spec: &LatticeSpec,
    m: f64,
    duration: f64,
) -> Result<WaveState> {
    let mut engine = KspaceEngine::new(spec)?;
    let mut out = state.clone();
    engine.evolve_segment(&mut out, m, duration)?;
    Ok(out)
}

/// One-shot real-space segment evolution (open or periodic boundaries).
pub fn evolve_segment_realspace(
    state: &WaveState,
    spec: &LatticeSpec,
    m: f64,
    duration: f64,
) -> Result<WaveState> {
    let mut engine = RealspaceEngine::new(spec)?;
    let mut out = state.clone();
    engine.evolve_segment(&mut out, m, duration)?;
    Ok(out)
}

/// Two-component supercell k-space representation (phi over sublattice A,
/// chi over sublattice B), one entry per reduced-zone momentum.
#[derive(Debug, Clone)]
pub struct TwoComponentK {
    /// Reduced-zone momenta, aligned with `phi`/`chi`.
    pub k_points: Vec<Vec<f64>>,
    pub phi: Vec<Complex64>,
    pub chi: Vec<Complex64>,
}

/// Unitary map from site amplitudes to the two-component k-space form.
pub fn kspace_transform(state: &WaveState, spec: &LatticeSpec) -> Result<TwoComponentK> {
    check_state(spec, state)?;
    if spec.boundary != Boundary::Periodic {
        return Err(EchoError::InvalidInput(
            "two-component transform requires periodic boundaries".into(),
        ));
    }
    let pairs = bands::reduced_pairs(spec)?;
    let n = state.amplitudes.len() as f64;
    let mut hat = state.amplitudes.clone();
    let mut planner = FftPlanner::new();
    fft_nd(&mut planner, &mut hat, &spec.extents, false);
    let scale = 1.0 / n.sqrt();
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = TwoComponentK {
        k_points: Vec::with_capacity(pairs.len()),
        phi: Vec::with_capacity(pairs.len()),
        chi: Vec::with_capacity(pairs.len()),
    };
    for p in &pairs {
        let a = hat[p.index] * scale;
        let b = hat[p.partner] * scale;
        out.k_points.push(p.k.clone());
        out.phi.push((a + b) * inv_sqrt2);
        out.chi.push((a - b) * inv_sqrt2);
    }
    Ok(out)
}

/// Inverse of [`kspace_transform`].
pub fn kspace_inverse(tc: &TwoComponentK, spec: &LatticeSpec, time: f64) -> Result<WaveState> {
    let pairs = bands::reduced_pairs(spec)?;
    if tc.phi.len() != pairs.len() || tc.chi.len() != pairs.len() {
        return Err(EchoError::InvalidInput(
            "component count does not match lattice".into(),
        ));
    }
    let n = spec.num_sites() as f64;
    let mut hat = vec![Complex64::new(0.0, 0.0); spec.num_sites()];
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    for (i, p) in pairs.iter().enumerate() {
        hat[p.index] = (tc.phi[i] + tc.chi[i]) * inv_sqrt2;
        hat[p.partner] = (tc.phi[i] - tc.chi[i]) * inv_sqrt2;
    }
    let mut planner = FftPlanner::new();
    fft_nd(&mut planner, &mut hat, &spec.extents, true);
    let scale = 1.0 / n.sqrt();
    for a in &mut hat {
        *a *= scale;
    }
    Ok(WaveState {
        amplitudes: hat,
        extents: spec.extents.clone(),
        time,
    })
}

/// Occupations (P_lower, P_upper) of the two folded free bands.
pub fn band_occupations(state: &WaveState, spec: &LatticeSpec) -> Result<(f64, f64)> {
    check_state(spec, state)?;
    let pairs = bands::reduced_pairs(spec)?;
    let mut hat = state.amplitudes.clone();
    let mut planner = FftPlanner::new();
    fft_nd(&mut planner, &mut hat, &spec.extents, false);
    let n = state.amplitudes.len() as f64;
    let mut p_lower = 0.0;
    let mut p_upper = 0.0;
    for p in &pairs {
        let e1 = bands::dispersion_unfolded(spec, &p.k)?;
        let kp = bands::grid_momentum(spec, p.partner);
        let e2 = bands::dispersion_unfolded(spec, &kp)?;
        let (lo, up) = if e1 <= e2 {
            (p.index, p.partner)
        } else {
            (p.partner, p.index)
        };
        p_lower += hat[lo].norm_sqr() / n;
        p_upper += hat[up].norm_sqr() / n;
    }
    Ok((p_lower, p_upper))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagatorChoice {
    Kspace,
    Realspace,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub t_end: f64,
    pub sample_dt: f64,
    pub snapshot_times: Vec<f64>,
    pub propagator: PropagatorChoice,
    /// Record per-sample folded-band occupations (periodic lattices only).
    pub record_bands: bool,
}

impl RunOptions {
    pub fn new(t_end: f64, sample_dt: f64) -> Self {
        RunOptions {
            t_end,
            sample_dt,
            snapshot_times: Vec::new(),
            propagator: PropagatorChoice::Kspace,
            record_bands: false,
        }
    }
}

/// Time-sampled record of fidelity metrics and optional snapshots.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub fidelity: Vec<f64>,
    pub overlap: Vec<f64>,
    /// (time, |psi|^2 grid) at each requested snapshot instant.
    pub snapshots: Vec<(f64, Vec<f64>)>,
    pub band_occupations: Option<Vec<(f64, f64)>>,
}

enum Engine {
    Kspace(KspaceEngine),
    Realspace(RealspaceEngine),
}

impl Engine {
    fn evolve(&mut self, state: &mut WaveState, m: f64, duration: f64) -> Result<()> {
        match self {
            Engine::Kspace(e) => e.evolve_segment(state, m, duration),
            Engine::Realspace(e) => e.evolve_segment(state, m, duration),
        }
    }
}

/// Run a full echo protocol: alternate free and pulse segments per the
/// schedule, sampling fidelity metrics every `sample_dt` and |psi|^2
/// snapshots at the requested instants. Segment boundaries and sample
/// instants are hit exactly.
pub fn run_protocol(
    spec: &LatticeSpec,
    init: &InitialStateSpec,
    schedule: &PulseSchedule,
    opts: &RunOptions,
) -> Result<Trajectory> {
    let state = crate::lattice::make_state(spec, init)?;
    run_protocol_from(spec, state, schedule, opts)
}

/// [`run_protocol`] starting from an already-built state (time reset to 0).
pub fn run_protocol_from(
    spec: &LatticeSpec,
    state: WaveState,
    schedule: &PulseSchedule,
    opts: &RunOptions,
) -> Result<Trajectory> {
    run_protocol_with_state(spec, state, schedule, opts).map(|(traj, _)| traj)
}

/// [`run_protocol_from`], additionally returning the final state.
pub fn run_protocol_with_state(
    spec: &LatticeSpec,
    mut state: WaveState,
    schedule: &PulseSchedule,
    opts: &RunOptions,
) -> Result<(Trajectory, WaveState)> {
    spec.validate()?;
    schedule.validate()?;
    if opts.sample_dt <= 0.0 {
        return Err(EchoError::InvalidInput("sample_dt must be > 0".into()));
    }
    if opts.t_end <= 0.0 {
        return Err(EchoError::InvalidInput("t_end must be > 0".into()));
    }
    if opts.sample_dt > opts.t_end + TIME_TOL {
        return Err(EchoError::InvalidInput(
            "sample_dt exceeds t_end".into(),
        ));
    }
    for ev in &schedule.events {
        if ev.t_start < -TIME_TOL || ev.t_end() > opts.t_end + TIME_TOL {
            return Err(EchoError::InvalidInput(
                "pulse schedule extends outside [0, t_end]".into(),
            ));
        }
    }
    for &t in &opts.snapshot_times {
        if t < -TIME_TOL || t > opts.t_end + TIME_TOL {
            return Err(EchoError::InvalidInput(
                "snapshot time outside [0, t_end]".into(),
            ));
        }
    }

    let mut engine = match opts.propagator {
        PropagatorChoice::Kspace => Engine::Kspace(KspaceEngine::new(spec)?),
        PropagatorChoice::Realspace => Engine::Realspace(RealspaceEngine::new(spec)?),
    };

    // breakpoints: sample instants, snapshot instants, pulse edges
    let mut breakpoints: Vec<f64> = Vec::new();
    let n_samples = (opts.t_end / opts.sample_dt + TIME_TOL).floor() as usize;
    for i in 0..=n_samples {
        breakpoints.push(i as f64 * opts.sample_dt);
    }
    breakpoints.push(opts.t_end);
    breakpoints.extend(opts.snapshot_times.iter().copied());
    for ev in &schedule.events {
        breakpoints.push(ev.t_start);
        breakpoints.push(ev.t_end());
    }
    breakpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breakpoints.dedup_by(|a, b| (*a - *b).abs() < TIME_TOL);
    if breakpoints[0] > TIME_TOL {
        breakpoints.insert(0, 0.0);
    } else {
        breakpoints[0] = 0.0;
    }

    let is_sample = |t: f64| {
        let i = (t / opts.sample_dt).round();
        (t - i * opts.sample_dt).abs() < TIME_TOL || (t - opts.t_end).abs() < TIME_TOL
    };
    let is_snapshot =
        |t: f64| opts.snapshot_times.iter().any(|&s| (s - t).abs() < TIME_TOL);
    let active_strength = |t_mid: f64| -> f64 {
        for ev in &schedule.events {
            if let PulseKind::Staggered { strength } = ev.kind {
                if t_mid > ev.t_start && t_mid < ev.t_end() {
                    return ev.sign * strength;
                }
            }
        }
        0.0
    };

    let reference = state.clone();
    let mut traj = Trajectory {
        times: Vec::new(),
        fidelity: Vec::new(),
        overlap: Vec::new(),
        snapshots: Vec::new(),
        band_occupations: if opts.record_bands { Some(Vec::new()) } else { None },
    };

    let record = |state: &WaveState, traj: &mut Trajectory, t: f64| -> Result<()> {
        if is_sample(t) {
            traj.times.push(t);
            traj.fidelity
                .push(analysis::fidelity_amplitude(&reference, state)?);
            traj.overlap
                .push(analysis::overlap_modulus(&reference, state)?);
            if let Some(b) = traj.band_occupations.as_mut() {
                b.push(band_occupations(state, spec)?);
            }
        }
        if is_snapshot(t) {
            traj.snapshots.push((t, state.probabilities()));
        }
        Ok(())
    };

    state.time = 0.0;
    // instantaneous events at t = 0 fire before the first record
    for ev in &schedule.events {
        if ev.kind == PulseKind::PhaseFlip && ev.t_start.abs() < TIME_TOL {
            apply_phase_flip(&mut state, spec, ev.sign);
        }
    }
    record(&state, &mut traj, 0.0)?;

    for w in breakpoints.windows(2) {
        let (t_a, t_b) = (w[0], w[1]);
        let m = active_strength(0.5 * (t_a + t_b));
        engine.evolve(&mut state, m, t_b - t_a)?;
        state.time = t_b;
        for ev in &schedule.events {
            if ev.kind == PulseKind::PhaseFlip && (ev.t_start - t_b).abs() < TIME_TOL {
                apply_phase_flip(&mut state, spec, ev.sign);
            }
        }
        record(&state, &mut traj, t_b)?;
    }
    Ok((traj, state))
}
