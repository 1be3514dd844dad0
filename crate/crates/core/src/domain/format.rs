//! Line-oriented trajectory interchange format.
//!
//! ```text
//! hindsight-trajectory v1 <horizon_days> <n_waitlist> <n_events>
//! W <patient>
//! E <day> arrive <patient>
//! E <day> update <patient_id> <severity> <cpra> <lvad_days>
//! E <day> donor <id> <blood> <region> <x> <y> <quality> <arrival_time>
//! E <day> depart <patient_id> <death|delisting>
//! ```
//!
//! where `<patient>` is
//! `<id> <blood> <region> <x> <y> <severity> <status> <cpra> <lvad_days> <listed_time> <as_of_time>`.
//! Tokens are separated by a single space. Reals are written in scientific
//! notation with 17 significant digits, so every binary64 value round-trips.

use std::fmt::Write as _;
use std::path::Path;
use std::str::{FromStr, SplitAsciiWhitespace};

use super::types::*;
use crate::domain::validate::valid_id;
use crate::error::{Error, Result};

pub const TRAJECTORY_MAGIC: &str = "hindsight-trajectory";
pub const TRAJECTORY_VERSION: &str = "v1";

/// 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn to_text(t: &Trajectory) -> String {
    let mut s = String::with_capacity(64 * (t.initial_waitlist.len() + t.events.len() + 1));
    let _ = writeln!(
        s,
        "{TRAJECTORY_MAGIC} {TRAJECTORY_VERSION} {} {} {}",
        t.horizon_days,
        t.initial_waitlist.len(),
        t.events.len()
    );
    for p in &t.initial_waitlist {
        s.push_str("W ");
        push_patient(&mut s, p);
        s.push('\n');
    }
    for e in &t.events {
        let _ = write!(s, "E {} ", e.time);
        match &e.kind {
            EventKind::PatientArrival(p) => {
                s.push_str("arrive ");
                push_patient(&mut s, p);
            }
            EventKind::StatusUpdate { patient_id, update } => {
                let _ = write!(
                    s,
                    "update {} {} {} {}",
                    patient_id,
                    fmt_real(update.severity),
                    fmt_real(update.cpra),
                    update.lvad_days
                );
            }
            EventKind::DonorArrival(d) => {
                let _ = write!(
                    s,
                    "donor {} {} {} {} {} {} {}",
                    d.id,
                    d.blood_type,
                    d.location.region,
                    fmt_real(d.location.coord[0]),
                    fmt_real(d.location.coord[1]),
                    fmt_real(d.quality),
                    d.arrival_time
                );
            }
            EventKind::PatientDeparture { patient_id, cause } => {
                let _ = write!(s, "depart {} {}", patient_id, cause.as_str());
            }
        }
        s.push('\n');
    }
    s
}

fn push_patient(s: &mut String, p: &PatientState) {
    let _ = write!(
        s,
        "{} {} {} {} {} {} {} {} {} {} {}",
        p.id,
        p.blood_type,
        p.location.region,
        fmt_real(p.location.coord[0]),
        fmt_real(p.location.coord[1]),
        fmt_real(p.severity),
        p.status,
        fmt_real(p.cpra),
        p.lvad_days,
        p.listed_time,
        p.as_of_time
    );
}

struct Tokens<'a> {
    it: SplitAsciiWhitespace<'a>,
    line: usize,
}

impl<'a> Tokens<'a> {
    fn next_str(&mut self, what: &str) -> Result<&'a str> {
        self.it
            .next()
            .ok_or_else(|| Error::parse(self.line, format!("missing {what}")))
    }

    fn next<T: FromStr>(&mut self, what: &str) -> Result<T> {
        let tok = self.next_str(what)?;
        tok.parse::<T>()
            .map_err(|_| Error::parse(self.line, format!("bad {what} {tok:?}")))
    }

    fn id(&mut self, what: &str) -> Result<String> {
        let tok = self.next_str(what)?;
        if !valid_id(tok) {
            return Err(Error::parse(self.line, format!("bad {what} {tok:?}")));
        }
        Ok(tok.to_string())
    }

    fn blood(&mut self) -> Result<BloodType> {
        let tok = self.next_str("blood type")?;
        tok.parse().map_err(|e: Error| Error::parse(self.line, e.to_string()))
    }

    fn region(&mut self) -> Result<Region> {
        let id: u8 = self.next("region")?;
        Region::new(id).map_err(|e| Error::parse(self.line, e.to_string()))
    }

    fn finish(mut self) -> Result<()> {
        match self.it.next() {
            None => Ok(()),
            Some(extra) => Err(Error::parse(self.line, format!("trailing token {extra:?}"))),
        }
    }

    fn patient(&mut self) -> Result<PatientState> {
        let id = self.id("patient id")?;
        let blood_type = self.blood()?;
        let region = self.region()?;
        let x = self.next("x")?;
        let y = self.next("y")?;
        Ok(PatientState {
            id,
            blood_type,
            location: Location::new(region, x, y),
            severity: self.next("severity")?,
            status: self.next("status")?,
            cpra: self.next("cpra")?,
            lvad_days: self.next("lvad_days")?,
            listed_time: self.next("listed_time")?,
            as_of_time: self.next("as_of_time")?,
        })
    }
}

/// Parses the text format. Structural problems are errors; semantic
/// invariants are left to `validate_trajectory`.
pub fn from_text(text: &str) -> Result<Trajectory> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty input"))?;
    let mut h = Tokens {
        it: header.split_ascii_whitespace(),
        line: 1,
    };
    if h.next_str("magic")? != TRAJECTORY_MAGIC {
        return Err(Error::parse(1, "not a trajectory file"));
    }
    let version = h.next_str("version")?;
    if version != TRAJECTORY_VERSION {
        return Err(Error::parse(1, format!("unsupported version {version}")));
    }
    let horizon_days: u32 = h.next("horizon")?;
    let n_wait: usize = h.next("waitlist count")?;
    let n_events: usize = h.next("event count")?;
    h.finish()?;

    let mut initial_waitlist = Vec::with_capacity(n_wait);
    let mut events = Vec::with_capacity(n_events);
    for (line, raw) in lines {
        if raw.trim().is_empty() {
            continue;
        }
        let mut tk = Tokens {
            it: raw.split_ascii_whitespace(),
            line,
        };
        match tk.next_str("record tag")? {
            "W" => {
                if !events.is_empty() {
                    return Err(Error::parse(line, "waitlist record after events"));
                }
                initial_waitlist.push(tk.patient()?);
            }
            "E" => {
                let time: Day = tk.next("day")?;
                let kind = match tk.next_str("event kind")? {
                    "arrive" => EventKind::PatientArrival(tk.patient()?),
                    "update" => EventKind::StatusUpdate {
                        patient_id: tk.id("patient id")?,
                        update: StatusUpdate {
                            severity: tk.next("severity")?,
                            cpra: tk.next("cpra")?,
                            lvad_days: tk.next("lvad_days")?,
                        },
                    },
                    "donor" => {
                        let id = tk.id("donor id")?;
                        let blood_type = tk.blood()?;
                        let region = tk.region()?;
                        let x = tk.next("x")?;
                        let y = tk.next("y")?;
                        EventKind::DonorArrival(DonorRecord {
                            id,
                            blood_type,
                            location: Location::new(region, x, y),
                            quality: tk.next("quality")?,
                            arrival_time: tk.next("arrival_time")?,
                        })
                    }
                    "depart" => {
                        let patient_id = tk.id("patient id")?;
                        let cause = tk
                            .next_str("cause")?
                            .parse()
                            .map_err(|e: Error| Error::parse(line, e.to_string()))?;
                        EventKind::PatientDeparture { patient_id, cause }
                    }
                    other => return Err(Error::parse(line, format!("unknown event kind {other:?}"))),
                };
                events.push(TrajectoryEvent { time, kind });
            }
            other => return Err(Error::parse(line, format!("unknown record tag {other:?}"))),
        }
        tk.finish()?;
    }
    if initial_waitlist.len() != n_wait || events.len() != n_events {
        return Err(Error::parse(
            1,
            format!(
                "header declares {n_wait} waitlist / {n_events} events, found {} / {}",
                initial_waitlist.len(),
                events.len()
            ),
        ));
    }
    Ok(Trajectory {
        horizon_days,
        initial_waitlist,
        events,
    })
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text)
}

pub fn write_trajectory(path: impl AsRef<Path>, t: &Trajectory) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_text(t)).map_err(|e| Error::io(path, e))
}
