//! Flat INI-style experiment configuration: `[section]` headers and
//! `key = value` lines, comments with `#` or `;`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use crate::error::{EchoError, Result};
use crate::evolve::{PropagatorChoice, PulseEvent, PulseSchedule, RunOptions};
use crate::lattice::{Boundary, InitialStateSpec, LatticeSpec};

/// Pulse timing, pre-resolved: in "pi" mode `delta_t` is exactly pi/(2M).
#[derive(Debug, Clone, Copy)]
pub struct ScheduleConfig {
    pub t0: f64,
    pub strength: f64,
    pub delta_t: f64,
    pub pi_mode: bool,
}

impl ScheduleConfig {
    pub fn pulse_end(&self) -> f64 {
        self.t0 + self.delta_t
    }

    pub fn echo_time(&self) -> f64 {
        2.0 * self.t0 + self.delta_t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Strength,
    DeltaT,
    J2,
    J3,
}

impl SweepAxis {
    pub fn label(&self) -> &'static str {
        match self {
            SweepAxis::Strength => "M",
            SweepAxis::DeltaT => "delta_T",
            SweepAxis::J2 => "J2",
            SweepAxis::J3 => "J3",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub lattice: LatticeSpec,
    pub initial: InitialStateSpec,
    pub schedule: Option<ScheduleConfig>,
    pub sweep: Option<SweepConfig>,
    pub t_end: f64,
    pub sample_dt: f64,
    pub snapshot_times: Vec<f64>,
    pub propagator: PropagatorChoice,
    pub workers: usize,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub write_csv: bool,
    pub write_pgm: bool,
}

fn bad(msg: impl Into<String>) -> EchoError {
    EchoError::Config(msg.into())
}

struct Section {
    values: HashMap<String, (String, usize)>,
}

impl Section {
    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    fn require(&self, section: &str, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| bad(format!("[{section}] is missing key '{key}'")))
    }
}

fn parse_sections(text: &str) -> Result<HashMap<String, Section>> {
    let mut sections: HashMap<String, Section> = HashMap::new();
    let mut current: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim().to_ascii_lowercase();
            sections.entry(name.clone()).or_insert(Section {
                values: HashMap::new(),
            });
            current = Some(name);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(EchoError::Parse {
                line: lineno + 1,
                msg: format!("expected 'key = value', got '{line}'"),
            });
        };
        let Some(section) = current.as_ref() else {
            return Err(EchoError::Parse {
                line: lineno + 1,
                msg: "key outside any [section]".into(),
            });
        };
        sections
            .get_mut(section)
            .unwrap()
            .values
            .insert(key.trim().to_ascii_lowercase(), (value.trim().to_string(), lineno + 1));
    }
    Ok(sections)
}

fn parse_f64(section: &str, key: &str, value: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| bad(format!("[{section}] {key}: '{value}' is not a number")))
}

fn parse_list_f64(section: &str, key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|t| parse_f64(section, key, t.trim()))
        .collect()
}

fn parse_list_usize(section: &str, key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| bad(format!("[{section}] {key}: '{t}' is not an integer")))
        })
        .collect()
}

impl ExperimentConfig {
    /// Parse a config file; relative asset paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| EchoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let sections = parse_sections(text)?;

        let lat = sections
            .get("lattice")
            .ok_or_else(|| bad("missing [lattice] section"))?;
        let extents = parse_list_usize("lattice", "extents", lat.require("lattice", "extents")?)?;
        let spacing = match lat.get("spacing") {
            Some(v) => parse_f64("lattice", "spacing", v)?,
            None => 1.0,
        };
        let boundary = match lat.get("boundary").unwrap_or("periodic") {
            "periodic" => Boundary::Periodic,
            "open" => Boundary::Open,
            other => return Err(bad(format!("[lattice] boundary: unknown '{other}'"))),
        };
        let j = match lat.get("j") {
            Some(v) => parse_f64("lattice", "j", v)?,
            None => 1.0,
        };
        let base_energy = match lat.get("base_energy") {
            Some(v) => parse_f64("lattice", "base_energy", v)?,
            None => 0.0,
        };
        let mut lattice = match extents.len() {
            1 => LatticeSpec::chain(extents[0], j, boundary)?,
            2 => LatticeSpec::square(extents[0], extents[1], j, boundary)?,
            d => return Err(bad(format!("[lattice] extents: {d} axes unsupported"))),
        };
        lattice.spacing = spacing;
        lattice.base_energy = base_energy;
        for (key, order) in [("j2", 2usize), ("j3", 3usize)] {
            if let Some(v) = lat.get(key) {
                let amp = parse_f64("lattice", key, v)?;
                if amp != 0.0 {
                    lattice = lattice.with_neighbor(order, amp)?;
                }
            }
        }
        lattice.validate()?;

        let ini = sections
            .get("initial")
            .ok_or_else(|| bad("missing [initial] section"))?;
        let momentum = match ini.get("momentum") {
            Some(v) => parse_list_f64("initial", "momentum", v)?,
            None => vec![0.0; extents.len()],
        };
        let initial = match ini.require("initial", "kind")? {
            "single_site" => InitialStateSpec::SingleSite {
                site: parse_list_usize("initial", "site", ini.require("initial", "site")?)?,
            },
            "gaussian" => InitialStateSpec::Gaussian {
                center: parse_list_f64("initial", "center", ini.require("initial", "center")?)?,
                width: parse_f64("initial", "width", ini.require("initial", "width")?)?,
                momentum,
                allow_unfolded: match ini.get("allow_unfolded") {
                    Some("true") => true,
                    Some("false") | None => false,
                    Some(other) => {
                        return Err(bad(format!("[initial] allow_unfolded: '{other}'")))
                    }
                },
            },
            "bitmap" => {
                let rel = ini.require("initial", "bitmap")?;
                let path = base_dir.join(rel);
                if !path.is_file() {
                    return Err(bad(format!(
                        "[initial] bitmap: file '{}' does not exist",
                        path.display()
                    )));
                }
                InitialStateSpec::Bitmap {
                    path,
                    momentum: ini.get("momentum").map(|_| momentum),
                }
            }
            other => return Err(bad(format!("[initial] kind: unknown '{other}'"))),
        };

        let schedule = match sections.get("schedule") {
            None => None,
            Some(sch) => {
                let t0 = parse_f64("schedule", "t0", sch.require("schedule", "t0")?)?;
                let strength = parse_f64("schedule", "m", sch.require("schedule", "m")?)?;
                let dt_raw = sch.require("schedule", "delta_t")?;
                let (delta_t, pi_mode) = if dt_raw == "pi" {
                    (PI / (2.0 * strength), true)
                } else {
                    (parse_f64("schedule", "delta_t", dt_raw)?, false)
                };
                Some(ScheduleConfig {
                    t0,
                    strength,
                    delta_t,
                    pi_mode,
                })
            }
        };

        let run = sections
            .get("run")
            .ok_or_else(|| bad("missing [run] section"))?;
        let t_end = match run.require("run", "t_end")? {
            "echo" => schedule
                .as_ref()
                .ok_or_else(|| bad("[run] t_end = echo requires a [schedule] section"))?
                .echo_time(),
            v => parse_f64("run", "t_end", v)?,
        };
        let sample_dt = parse_f64("run", "sample_dt", run.require("run", "sample_dt")?)?;
        if !(sample_dt > 0.0) {
            return Err(bad("[run] sample_dt must be positive"));
        }
        if sample_dt > t_end {
            return Err(bad("[run] sample_dt exceeds t_end"));
        }
        let snapshot_times = match run.get("snapshot_times") {
            None => Vec::new(),
            // the five canonical frames 0, t0/2, t0, 1.5 t0 + dT, 2 t0 + dT
            Some("auto") => {
                let s = schedule
                    .as_ref()
                    .ok_or_else(|| bad("[run] snapshot_times = auto requires [schedule]"))?;
                vec![
                    0.0,
                    0.5 * s.t0,
                    s.t0,
                    1.5 * s.t0 + s.delta_t,
                    2.0 * s.t0 + s.delta_t,
                ]
            }
            Some(v) => parse_list_f64("run", "snapshot_times", v)?,
        };
        let propagator = match run.get("propagator").unwrap_or("kspace") {
            "kspace" => PropagatorChoice::Kspace,
            "realspace" => PropagatorChoice::Realspace,
            other => return Err(bad(format!("[run] propagator: unknown '{other}'"))),
        };
        let workers = match run.get("workers") {
            Some(v) => v
                .parse()
                .map_err(|_| bad(format!("[run] workers: '{v}' is not an integer")))?,
            None => 1,
        };
        if workers == 0 {
            return Err(bad("[run] workers must be at least 1"));
        }
        let seed = match run.get("seed") {
            Some(v) => v
                .parse()
                .map_err(|_| bad(format!("[run] seed: '{v}' is not an integer")))?,
            None => 42,
        };

        let (out_dir, write_csv, write_pgm) = match sections.get("output") {
            None => (None, true, true),
            Some(out) => {
                let dir = out.get("dir").map(|d| base_dir.join(d));
                let mut csv = true;
                let mut pgm = true;
                if let Some(fmt) = out.get("formats") {
                    csv = false;
                    pgm = false;
                    for tok in fmt.split(',') {
                        match tok.trim() {
                            "csv" => csv = true,
                            "pgm" => pgm = true,
                            other => {
                                return Err(bad(format!("[output] formats: unknown '{other}'")))
                            }
                        }
                    }
                }
                (dir, csv, pgm)
            }
        };

        let sweep = match sections.get("sweep") {
            None => None,
            Some(sw) => {
                let axis = match sw.require("sweep", "axis")? {
                    "M" | "m" => SweepAxis::Strength,
                    "delta_T" | "delta_t" => SweepAxis::DeltaT,
                    "J2" | "j2" => SweepAxis::J2,
                    "J3" | "j3" => SweepAxis::J3,
                    other => return Err(bad(format!("[sweep] axis: unknown '{other}'"))),
                };
                let values = parse_list_f64("sweep", "values", sw.require("sweep", "values")?)?;
                if values.is_empty() {
                    return Err(bad("[sweep] values must be non-empty"));
                }
                Some(SweepConfig { axis, values })
            }
        };

        Ok(ExperimentConfig {
            lattice,
            initial,
            schedule,
            sweep,
            t_end,
            sample_dt,
            snapshot_times,
            propagator,
            workers,
            seed,
            out_dir,
            write_csv,
            write_pgm,
        })
    }

    /// Pulse schedule implied by the [schedule] section; empty for free runs.
    pub fn pulse_schedule(&self) -> Result<PulseSchedule> {
        match &self.schedule {
            None => Ok(PulseSchedule::empty()),
            Some(s) => PulseSchedule::new(vec![PulseEvent::staggered(
                s.t0, s.delta_t, s.strength,
            )]),
        }
    }

    pub fn run_options(&self) -> RunOptions {
        let mut opts = RunOptions::new(self.t_end, self.sample_dt);
        opts.snapshot_times = self.snapshot_times.clone();
        opts.propagator = self.propagator;
        opts
    }

    /// Copy with one sweep axis overridden; pi-mode delta_t tracks M changes.
    pub fn with_sweep_value(&self, axis: SweepAxis, value: f64) -> Result<ExperimentConfig> {
        let mut cfg = self.clone();
        match axis {
            SweepAxis::Strength | SweepAxis::DeltaT => {
                let s = cfg
                    .schedule
                    .as_mut()
                    .ok_or_else(|| bad("sweep over pulse parameters needs [schedule]"))?;
                match axis {
                    SweepAxis::Strength => {
                        s.strength = value;
                        if s.pi_mode {
                            s.delta_t = PI / (2.0 * value);
                        }
                    }
                    SweepAxis::DeltaT => {
                        s.delta_t = value;
                        s.pi_mode = false;
                    }
                    _ => unreachable!(),
                }
            }
            SweepAxis::J2 | SweepAxis::J3 => {
                let order = if axis == SweepAxis::J2 { 2 } else { 3 };
                let mut lattice = cfg.lattice.clone();
                lattice.hoppings.retain(|h| h.order != order);
                if value != 0.0 {
                    lattice = lattice.with_neighbor(order, value)?;
                }
                lattice.validate()?;
                cfg.lattice = lattice;
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "\
[lattice]
extents = 64
j = 1.0
boundary = periodic

[initial]
kind = gaussian
center = 32
width = 3.0
momentum = 0.7

[schedule]
t0 = 10.0
m = 10.0
delta_t = pi

[run]
t_end = echo
sample_dt = 0.05
";

    #[test]
    fn parses_base_config() {
        let cfg = ExperimentConfig::parse(BASE, Path::new(".")).unwrap();
        assert_eq!(cfg.lattice.extents, vec![64]);
        let s = cfg.schedule.unwrap();
        assert_eq!(s.delta_t, PI / 20.0);
        assert!(s.pi_mode);
        assert_eq!(cfg.t_end, 2.0 * 10.0 + PI / 20.0);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.workers, 1);
        assert!(cfg.write_csv && cfg.write_pgm);
    }

    #[test]
    fn auto_snapshots_follow_schedule() {
        let text = BASE.replace("sample_dt = 0.05", "sample_dt = 0.05\nsnapshot_times = auto");
        let cfg = ExperimentConfig::parse(&text, Path::new(".")).unwrap();
        let dt = PI / 20.0;
        let expect = [0.0, 5.0, 10.0, 15.0 + dt, 20.0 + dt];
        assert_eq!(cfg.snapshot_times.len(), 5);
        for (a, b) in cfg.snapshot_times.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn sample_dt_after_t_end_rejected() {
        let text = BASE.replace("sample_dt = 0.05", "sample_dt = 100.0");
        assert!(ExperimentConfig::parse(&text, Path::new(".")).is_err());
    }

    #[test]
    fn missing_bitmap_rejected_at_parse_time() {
        let text = BASE.replace(
            "kind = gaussian",
            "kind = bitmap\nbitmap = no_such_file.grid",
        );
        let err = ExperimentConfig::parse(&text, Path::new("/tmp")).unwrap_err();
        assert!(err.to_string().contains("does not exist"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "[lattice]\nextents 64\n";
        match ExperimentConfig::parse(text, Path::new(".")).unwrap_err() {
            EchoError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn sweep_override_tracks_pi_mode() {
        let text = format!("{BASE}\n[sweep]\naxis = M\nvalues = 5, 10, 20\n");
        let cfg = ExperimentConfig::parse(&text, Path::new(".")).unwrap();
        let sw = cfg.sweep.clone().unwrap();
        assert_eq!(sw.axis, SweepAxis::Strength);
        let cfg5 = cfg.with_sweep_value(SweepAxis::Strength, 5.0).unwrap();
        let s = cfg5.schedule.unwrap();
        assert_eq!(s.strength, 5.0);
        assert_eq!(s.delta_t, PI / 10.0);
    }

    #[test]
    fn sweep_override_swaps_neighbor_orders() {
        let cfg = ExperimentConfig::parse(BASE, Path::new(".")).unwrap();
        let with_j2 = cfg.with_sweep_value(SweepAxis::J2, 0.2).unwrap();
        assert!(with_j2
            .lattice
            .hoppings
            .iter()
            .any(|h| h.order == 2 && h.amplitude == 0.2));
        let back = with_j2.with_sweep_value(SweepAxis::J2, 0.0).unwrap();
        assert!(back.lattice.hoppings.iter().all(|h| h.order != 2));
    }

    #[test]
    fn free_run_config_has_empty_schedule() {
        let text = "\
[lattice]
extents = 16
[initial]
kind = single_site
site = 8
[run]
t_end = 5.0
sample_dt = 0.1
";
        let cfg = ExperimentConfig::parse(text, Path::new(".")).unwrap();
        assert!(cfg.schedule.is_none());
        assert!(cfg.pulse_schedule().unwrap().events.is_empty());
    }
}
