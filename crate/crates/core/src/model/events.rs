use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{MassRatioRecord, EVENT_SPAN};
use crate::error::{Error, Result};
use crate::util::interp_sorted;

const T_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "SHRP2")]
    Shrp2,
    #[serde(rename = "CISS")]
    Ciss,
    #[serde(rename = "PCM")]
    Pcm,
    #[serde(rename = "FIXTURE")]
    Fixture,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Shrp2 => "SHRP2",
            Source::Ciss => "CISS",
            Source::Pcm => "PCM",
            Source::Fixture => "FIXTURE",
        })
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "SHRP2" => Ok(Source::Shrp2),
            "CISS" => Ok(Source::Ciss),
            "PCM" => Ok(Source::Pcm),
            "FIXTURE" => Ok(Source::Fixture),
            other => Err(format!("unknown source `{other}`")),
        }
    }
}

/// Layout of an event file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventSchema {
    /// Long format, one row per sample: `event_id, source, t, v_f, v_l, d`.
    Series,
    /// One row per event: `event_id, source, v_f_init, dv_f, dv_l`.
    Scalar,
}

impl EventSchema {
    pub fn header(self) -> &'static [&'static str] {
        match self {
            EventSchema::Series => &["event_id", "source", "t", "v_f", "v_l", "d"],
            EventSchema::Scalar => &["event_id", "source", "v_f_init", "dv_f", "dv_l"],
        }
    }
}

/// A pre-crash event with impact at `t = 0`.
///
/// Scalar-only events carry a single sample at `t = -5` and `rate_hz = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrashEvent {
    pub event_id: String,
    pub source: Source,
    pub rate_hz: f64,
    pub t: Vec<f64>,
    pub v_f: Option<Vec<f64>>,
    pub v_l: Option<Vec<f64>>,
    pub d: Option<Vec<f64>>,
    pub dv_f: Option<f64>,
    pub dv_l: Option<f64>,
}

impl CrashEvent {
    /// Uniform series starting at -5 s with `rate_hz` samples per second.
    pub fn series(
        event_id: impl Into<String>,
        source: Source,
        rate_hz: f64,
        v_f: Option<Vec<f64>>,
        v_l: Option<Vec<f64>>,
        d: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = [&v_f, &v_l, &d]
            .iter()
            .filter_map(|s| s.as_ref().map(Vec::len))
            .max()
            .ok_or_else(|| Error::invalid("event has no series"))?;
        let ev = CrashEvent {
            event_id: event_id.into(),
            source,
            rate_hz,
            t: time_grid(-EVENT_SPAN, rate_hz, n),
            v_f,
            v_l,
            d,
            dv_f: None,
            dv_l: None,
        };
        ev.validate()?;
        Ok(ev)
    }

    pub fn scalar(
        event_id: impl Into<String>,
        source: Source,
        v_f_init: Option<f64>,
        dv_f: Option<f64>,
        dv_l: Option<f64>,
    ) -> Self {
        CrashEvent {
            event_id: event_id.into(),
            source,
            rate_hz: 0.0,
            t: vec![-EVENT_SPAN],
            v_f: v_f_init.map(|v| vec![v]),
            v_l: None,
            d: None,
            dv_f,
            dv_l,
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn v_f_init(&self) -> Option<f64> {
        self.v_f.as_ref().and_then(|v| v.first().copied())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.t.len();
        if n == 0 {
            return Err(Error::validation(format!("event {} is empty", self.event_id)));
        }
        for (name, s) in [("v_f", &self.v_f), ("v_l", &self.v_l), ("d", &self.d)] {
            if let Some(s) = s {
                if s.len() != n {
                    return Err(Error::validation(format!(
                        "event {}: {name} has {} samples, t has {n}",
                        self.event_id,
                        s.len()
                    )));
                }
                if s.iter().any(|v| !v.is_finite()) {
                    return Err(Error::validation(format!(
                        "event {}: non-finite {name}",
                        self.event_id
                    )));
                }
            }
        }
        if (self.t[0] + EVENT_SPAN).abs() > T_TOL {
            return Err(Error::validation(format!(
                "event {} starts at {} instead of -5",
                self.event_id, self.t[0]
            )));
        }
        if n > 1 {
            let dt = 1.0 / self.rate_hz;
            for (k, w) in self.t.windows(2).enumerate() {
                if !(w[1] > w[0]) || (w[1] - w[0] - dt).abs() > T_TOL {
                    return Err(Error::validation(format!(
                        "event {}: irregular time step at sample {}",
                        self.event_id,
                        k + 1
                    )));
                }
            }
        }
        if let Some(d) = &self.d {
            if let Some(k) = d.iter().zip(&self.t).position(|(d, t)| *t < 0.0 && *d <= 0.0) {
                return Err(Error::validation(format!(
                    "event {}: non-positive gap {} before impact at t = {}",
                    self.event_id, d[k], self.t[k]
                )));
            }
        }
        Ok(())
    }
}

fn time_grid(t0: f64, rate: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![t0];
    }
    // Rounded to the microsecond so decimal grids survive text round trips unchanged.
    (0..n)
        .map(|k| ((t0 + k as f64 / rate) * 1e6).round() / 1e6)
        .collect()
}

fn opt_cell(cell: &str, path: &Path, line: u64, col: &str) -> Result<Option<f64>> {
    let c = cell.trim();
    if c.is_empty() || c.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    c.parse().map(Some).map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("`{c}` in column {col} is not a number"),
    })
}

fn header_index(
    header: &csv::StringRecord,
    want: &[&str],
    path: &Path,
) -> Result<Vec<usize>> {
    want.iter()
        .map(|w| {
            header.iter().position(|h| h.trim() == *w).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("missing column `{w}`"),
            })
        })
        .collect()
}

/// Read and validate events from a CSV file laid out per `schema`.
pub fn load_events(path: impl AsRef<Path>, schema: EventSchema) -> Result<Vec<CrashEvent>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("{other:?}"),
        },
    })?;
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let cols = schema.header();
    let idx = header_index(&header, cols, path)?;

    struct Acc {
        ev: CrashEvent,
        first_line: u64,
        rows: Vec<[Option<f64>; 4]>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut acc: HashMap<String, Acc> = HashMap::new();

    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |i: usize| rec.get(idx[i]).unwrap_or("");
        let id = get(0).trim().to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: "empty event_id".into(),
            });
        }
        let source: Source = get(1).parse().map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        })?;
        let mut vals = [None; 4];
        for (k, v) in vals.iter_mut().enumerate().take(cols.len() - 2) {
            *v = opt_cell(get(k + 2), path, line, cols[k + 2])?;
        }
        match schema {
            EventSchema::Scalar => {
                if acc.contains_key(&id) {
                    return Err(Error::Validation {
                        line: Some(line),
                        msg: format!("duplicate event {id}"),
                    });
                }
                let ev = CrashEvent::scalar(id.clone(), source, vals[0], vals[1], vals[2]);
                order.push(id.clone());
                acc.insert(id, Acc { ev, first_line: line, rows: Vec::new() });
            }
            EventSchema::Series => {
                let a = acc.entry(id.clone()).or_insert_with(|| {
                    order.push(id.clone());
                    Acc {
                        ev: CrashEvent {
                            event_id: id.clone(),
                            source,
                            rate_hz: 0.0,
                            t: Vec::new(),
                            v_f: None,
                            v_l: None,
                            d: None,
                            dv_f: None,
                            dv_l: None,
                        },
                        first_line: line,
                        rows: Vec::new(),
                    }
                });
                if a.ev.source != source {
                    return Err(Error::Validation {
                        line: Some(line),
                        msg: format!("event {id} mixes sources"),
                    });
                }
                let Some(t) = vals[0] else {
                    return Err(Error::Validation {
                        line: Some(line),
                        msg: "missing t".into(),
                    });
                };
                if let Some(&last) = a.ev.t.last() {
                    if t <= last {
                        return Err(Error::Validation {
                            line: Some(line),
                            msg: format!("event {id}: time not increasing"),
                        });
                    }
                }
                if let (Some(d), true) = (vals[3], t < 0.0) {
                    if d <= 0.0 {
                        return Err(Error::Validation {
                            line: Some(line),
                            msg: format!("event {id}: gap {d} before impact"),
                        });
                    }
                }
                a.ev.t.push(t);
                a.rows.push(vals);
            }
        }
    }

    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let Acc { mut ev, first_line, rows } = acc.remove(&id).expect("event recorded");
        if schema == EventSchema::Series {
            let n = rows.len();
            for (k, slot) in [&mut ev.v_f, &mut ev.v_l, &mut ev.d].into_iter().enumerate() {
                let present = rows.iter().filter(|r| r[k + 1].is_some()).count();
                if present == n {
                    *slot = Some(rows.iter().map(|r| r[k + 1].unwrap_or(0.0)).collect());
                } else if present != 0 {
                    return Err(Error::Validation {
                        line: Some(first_line),
                        msg: format!("event {id}: {} partially missing", cols[k + 3]),
                    });
                }
            }
            if n > 1 {
                let rate = (n - 1) as f64 / (ev.t[n - 1] - ev.t[0]);
                ev.rate_hz = (rate * 1e6).round() / 1e6;
            }
        }
        ev.validate().map_err(|e| match e {
            Error::Validation { msg, .. } => Error::Validation {
                line: Some(first_line),
                msg,
            },
            other => other,
        })?;
        out.push(ev);
    }
    Ok(out)
}

/// Copy `dv_f` / `dv_l` (and nothing else) from scalar records onto matching series events.
pub fn attach_scalars(events: &mut [CrashEvent], scalars: &[CrashEvent]) -> usize {
    let by_id: HashMap<&str, &CrashEvent> =
        scalars.iter().map(|s| (s.event_id.as_str(), s)).collect();
    let mut hit = 0;
    for e in events.iter_mut() {
        if let Some(s) = by_id.get(e.event_id.as_str()) {
            e.dv_f = s.dv_f.or(e.dv_f);
            e.dv_l = s.dv_l.or(e.dv_l);
            hit += 1;
        }
    }
    hit
}

/// Linear interpolation onto a grid `-5 + k/rate` spanning the original window.
pub fn resample_event(e: &CrashEvent, rate: f64) -> Result<CrashEvent> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::invalid(format!("resampling rate {rate} must be positive")));
    }
    if e.t.is_empty() {
        return Err(Error::invalid(format!("event {} has no samples", e.event_id)));
    }
    if e.rate_hz == rate || e.t.len() == 1 {
        return Ok(e.clone());
    }
    let t0 = e.t[0];
    let span = e.t[e.t.len() - 1] - t0;
    let n = (span * rate + 1e-6).floor() as usize + 1;
    let t: Vec<f64> = time_grid(t0, rate, n);
    let interp = |s: &Option<Vec<f64>>| {
        s.as_ref()
            .map(|ys| t.iter().map(|&x| interp_sorted(&e.t, ys, x)).collect::<Vec<_>>())
    };
    Ok(CrashEvent {
        event_id: e.event_id.clone(),
        source: e.source,
        rate_hz: rate,
        v_f: interp(&e.v_f),
        v_l: interp(&e.v_l),
        d: interp(&e.d),
        t,
        dv_f: e.dv_f,
        dv_l: e.dv_l,
    })
}

/// `(d_init, v_f_init, v_l_init)` at the first sample.
pub fn initial_state(e: &CrashEvent) -> Result<(f64, f64, f64)> {
    let first = |s: &Option<Vec<f64>>, name: &'static str| {
        s.as_ref()
            .and_then(|v| v.first().copied())
            .ok_or(Error::MissingSignal(name))
    };
    Ok((first(&e.d, "d")?, first(&e.v_f, "v_f")?, first(&e.v_l, "v_l")?))
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

pub fn write_series_events(path: impl AsRef<Path>, events: &[CrashEvent]) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "{}", EventSchema::Series.header().join(",")).map_err(io)?;
    for e in events {
        let at = |s: &Option<Vec<f64>>, k: usize| s.as_ref().map(|v| v[k]);
        for k in 0..e.t.len() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                e.event_id,
                e.source,
                e.t[k],
                cell(at(&e.v_f, k)),
                cell(at(&e.v_l, k)),
                cell(at(&e.d, k))
            )
            .map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

pub fn write_scalar_events(path: impl AsRef<Path>, events: &[CrashEvent]) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "{}", EventSchema::Scalar.header().join(",")).map_err(io)?;
    for e in events {
        writeln!(
            out,
            "{},{},{},{},{}",
            e.event_id,
            e.source,
            cell(e.v_f_init()),
            cell(e.dv_f),
            cell(e.dv_l)
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_mass(path: impl AsRef<Path>) -> Result<Vec<MassRatioRecord>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: e.to_string(),
    })?;
    let mut out = Vec::new();
    for rec in rdr.deserialize::<MassRatioRecord>() {
        let r = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        if !(r.m_f > 0.0 && r.m_l > 0.0 && r.m_f.is_finite() && r.m_l.is_finite()) {
            return Err(Error::Validation {
                line: Some(out.len() as u64 + 2),
                msg: format!("non-positive mass {r:?}"),
            });
        }
        out.push(r);
    }
    Ok(out)
}

pub fn write_mass(path: impl AsRef<Path>, records: &[MassRatioRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "m_f,m_l").map_err(io)?;
    for r in records {
        writeln!(out, "{},{}", r.m_f, r.m_l).map_err(io)?;
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn ramp_event(rate: f64, n: usize) -> CrashEvent {
        let v: Vec<f64> = (0..n).map(|k| 10.0 * k as f64 / (n - 1) as f64).collect();
        let d: Vec<f64> = (0..n).map(|k| 30.0 - k as f64 * 0.01).collect();
        CrashEvent::series("e", Source::Fixture, rate, Some(v.clone()), Some(v), Some(d)).unwrap()
    }

    #[test]
    fn fixture_round_trip_keeps_three_events() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("ev.csv");
        let evs: Vec<_> = (0..3)
            .map(|i| {
                let mut e = ramp_event(10.0, 48);
                e.event_id = format!("ev{i}");
                e
            })
            .collect();
        write_series_events(&p, &evs).unwrap();
        let back = load_events(&p, EventSchema::Series).unwrap();
        assert_eq!(back.len(), 3);
        assert!(back.iter().all(|e| e.rate_hz == 10.0));
        assert_eq!(back, evs);
    }

    #[test]
    fn zero_gap_before_impact_is_rejected_with_line() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("ev.csv");
        std::fs::write(
            &p,
            "event_id,source,t,v_f,v_l,d\na,PCM,-5,10,5,3\na,PCM,-4.9,10,5,0\n",
        )
        .unwrap();
        match load_events(&p, EventSchema::Series).unwrap_err() {
            Error::Validation { line, .. } => assert_eq!(line, Some(3)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn malformed_number_is_parse_error() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("ev.csv");
        std::fs::write(&p, "event_id,source,v_f_init,dv_f,dv_l\na,CISS,x,,\n").unwrap();
        assert!(matches!(
            load_events(&p, EventSchema::Scalar),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn pcm_window_has_471_samples() {
        let e = ramp_event(100.0, 471);
        assert!((e.t[470] + 0.3).abs() < 1e-12);
        let dir = tempdir().unwrap();
        let p = dir.path().join("pcm.csv");
        write_series_events(&p, std::slice::from_ref(&e)).unwrap();
        let back = load_events(&p, EventSchema::Series).unwrap();
        assert_eq!(back[0].v_f.as_ref().unwrap().len(), 471);
        assert_eq!(back[0].rate_hz, 100.0);
    }

    #[test]
    fn downsampling_constant_series_keeps_values() {
        let n = 471;
        let e = CrashEvent::series("c", Source::Pcm, 100.0, Some(vec![7.5; n]), None, None).unwrap();
        let r = resample_event(&e, 10.0).unwrap();
        assert_eq!(r.len(), 48);
        assert!(r.v_f.unwrap().iter().all(|v| *v == 7.5));
        assert!((r.t[47] + 0.3).abs() < 1e-12);
    }

    #[test]
    fn ramp_preserved_and_midpoints_are_means() {
        let e = ramp_event(10.0, 48);
        let r = resample_event(&e, 20.0).unwrap();
        assert_eq!(r.len(), 95);
        let (a, b) = (e.v_f.as_ref().unwrap(), r.v_f.as_ref().unwrap());
        for k in 0..47 {
            assert!((b[2 * k] - a[k]).abs() < 1e-9);
            assert!((b[2 * k + 1] - 0.5 * (a[k] + a[k + 1])).abs() < 1e-9);
        }
        assert_eq!(initial_state(&r).unwrap(), initial_state(&e).unwrap());
        assert_eq!(b[94], a[47]);
    }

    #[test]
    fn resample_same_rate_is_identity() {
        let e = ramp_event(10.0, 48);
        assert_eq!(resample_event(&e, 10.0).unwrap(), e);
        assert!(resample_event(&e, 0.0).is_err());
    }

    #[test]
    fn initial_state_reports_absent_signal() {
        let e = CrashEvent::series(
            "x",
            Source::Shrp2,
            10.0,
            Some(vec![15.0, 15.0]),
            Some(vec![10.0, 10.0]),
            Some(vec![20.0, 19.5]),
        )
        .unwrap();
        assert_eq!(initial_state(&e).unwrap(), (20.0, 15.0, 10.0));
        let mut e2 = e.clone();
        e2.d = None;
        assert_eq!(initial_state(&e2).unwrap_err().to_string(), "d absent");
    }

    #[test]
    fn scalars_attach_by_id_and_mass_round_trips() {
        let mut evs = vec![ramp_event(10.0, 5)];
        let sc = vec![CrashEvent::scalar("e", Source::Fixture, Some(0.0), Some(-3.0), Some(3.3))];
        assert_eq!(attach_scalars(&mut evs, &sc), 1);
        assert_eq!(evs[0].dv_l, Some(3.3));

        let dir = tempdir().unwrap();
        let p = dir.path().join("mass.csv");
        let m = vec![MassRatioRecord { m_f: 1500.0, m_l: 1320.5 }];
        write_mass(&p, &m).unwrap();
        assert_eq!(read_mass(&p).unwrap(), m);
        let s = dir.path().join("sc.csv");
        write_scalar_events(&s, &sc).unwrap();
        assert_eq!(load_events(&s, EventSchema::Scalar).unwrap(), sc);
    }
}
