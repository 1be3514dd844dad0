use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simulation time in whole days. Day 0 is the start of the horizon; events
/// happen on days `1..=horizon_days`. Initial-waitlist patients may carry
/// non-positive listing days.
pub type Day = i32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BloodType {
    O,
    A,
    B,
    AB,
}

impl BloodType {
    pub const ALL: [BloodType; 4] = [BloodType::O, BloodType::A, BloodType::B, BloodType::AB];

    /// Position in the canonical `O, A, B, AB` order used by every one-hot block.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BloodType::O => "O",
            BloodType::A => "A",
            BloodType::B => "B",
            BloodType::AB => "AB",
        }
    }
}

impl fmt::Display for BloodType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BloodType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "O" => Ok(BloodType::O),
            "A" => Ok(BloodType::A),
            "B" => Ok(BloodType::B),
            "AB" => Ok(BloodType::AB),
            other => Err(Error::invalid(format!("unknown blood type {other:?}"))),
        }
    }
}

/// One of the nine allocation regions, numbered 1 through 9.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Region(u8);

impl Region {
    pub const COUNT: usize = 9;

    pub fn new(id: u8) -> Result<Self> {
        if (1..=9).contains(&id) {
            Ok(Region(id))
        } else {
            Err(Error::invalid(format!("region id {id} outside 1..=9")))
        }
    }

    pub fn id(self) -> u8 {
        self.0
    }

    /// Zero-based position used by one-hot encodings.
    pub fn index(self) -> usize {
        usize::from(self.0 - 1)
    }

    pub fn all() -> impl Iterator<Item = Region> {
        (1..=9).map(Region)
    }
}

impl TryFrom<u8> for Region {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Region::new(v)
    }
}

impl From<Region> for u8 {
    fn from(r: Region) -> u8 {
        r.0
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The nautical-mile plane is tiled by a 3x3 grid of region boxes; region `r`
/// occupies column `(r-1) % 3` and row `(r-1) / 3`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Geography {
    pub cell_width_nm: f64,
    pub cell_height_nm: f64,
}

impl Default for Geography {
    fn default() -> Self {
        Geography {
            cell_width_nm: 800.0,
            cell_height_nm: 450.0,
        }
    }
}

impl Geography {
    pub fn region_box(&self, r: Region) -> ([f64; 2], [f64; 2]) {
        let col = f64::from((r.id() - 1) % 3);
        let row = f64::from((r.id() - 1) / 3);
        let lo = [col * self.cell_width_nm, row * self.cell_height_nm];
        let hi = [lo[0] + self.cell_width_nm, lo[1] + self.cell_height_nm];
        (lo, hi)
    }

    pub fn centroid(&self, r: Region) -> [f64; 2] {
        let (lo, hi) = self.region_box(r);
        [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0]
    }

    /// Region owning `coord`; boxes are half-open on the upper edges except
    /// for the outer boundary of the grid.
    pub fn region_of(&self, coord: [f64; 2]) -> Option<Region> {
        if !coord[0].is_finite() || !coord[1].is_finite() {
            return None;
        }
        let w = 3.0 * self.cell_width_nm;
        let h = 3.0 * self.cell_height_nm;
        if coord[0] < 0.0 || coord[1] < 0.0 || coord[0] > w || coord[1] > h {
            return None;
        }
        let col = ((coord[0] / self.cell_width_nm).floor() as u8).min(2);
        let row = ((coord[1] / self.cell_height_nm).floor() as u8).min(2);
        Some(Region(row * 3 + col + 1))
    }

    pub fn contains(&self, loc: &Location) -> bool {
        self.region_of(loc.coord) == Some(loc.region)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub region: Region,
    pub coord: [f64; 2],
}

impl Location {
    pub fn new(region: Region, x: f64, y: f64) -> Self {
        Location { region, coord: [x, y] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DonorRecord {
    pub id: String,
    pub blood_type: BloodType,
    pub location: Location,
    /// Clinical summary in `[0, 1]`; higher is a better organ.
    pub quality: f64,
    pub arrival_time: Day,
}

/// Fixed severity thresholds for statuses 1 through 5; anything at or below
/// the last threshold is status 6.
pub const STATUS_THRESHOLDS: [f64; 5] = [0.95, 0.85, 0.7, 0.5, 0.25];

/// Urgency status (1 = most urgent) for a severity value.
pub fn status_for_severity(severity: f64) -> u8 {
    STATUS_THRESHOLDS
        .iter()
        .position(|&th| severity > th)
        .map_or(6, |i| i as u8 + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientState {
    pub id: String,
    pub blood_type: BloodType,
    pub location: Location,
    pub severity: f64,
    pub status: u8,
    pub cpra: f64,
    pub lvad_days: u32,
    pub listed_time: Day,
    pub as_of_time: Day,
}

impl PatientState {
    /// Builds a state with `status` derived from `severity`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        blood_type: BloodType,
        location: Location,
        severity: f64,
        cpra: f64,
        lvad_days: u32,
        listed_time: Day,
        as_of_time: Day,
    ) -> Self {
        PatientState {
            id: id.into(),
            blood_type,
            location,
            severity,
            status: status_for_severity(severity),
            cpra,
            lvad_days,
            listed_time,
            as_of_time,
        }
    }

    pub fn apply_update(&mut self, update: &StatusUpdate, time: Day) {
        self.severity = update.severity;
        self.status = status_for_severity(update.severity);
        self.cpra = update.cpra;
        self.lvad_days = update.lvad_days;
        self.as_of_time = time;
    }

    pub fn waiting_days(&self, now: Day) -> Day {
        now - self.listed_time
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DepartureCause {
    Death,
    Delisting,
}

impl DepartureCause {
    pub fn as_str(self) -> &'static str {
        match self {
            DepartureCause::Death => "death",
            DepartureCause::Delisting => "delisting",
        }
    }
}

impl FromStr for DepartureCause {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "death" => Ok(DepartureCause::Death),
            "delisting" => Ok(DepartureCause::Delisting),
            other => Err(Error::invalid(format!("unknown departure cause {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatusUpdate {
    pub severity: f64,
    pub cpra: f64,
    pub lvad_days: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    PatientArrival(PatientState),
    StatusUpdate { patient_id: String, update: StatusUpdate },
    DonorArrival(DonorRecord),
    PatientDeparture { patient_id: String, cause: DepartureCause },
}

impl EventKind {
    /// Same-day precedence: arrivals, then updates, then donors, then departures.
    pub fn rank(&self) -> u8 {
        match self {
            EventKind::PatientArrival(_) => 0,
            EventKind::StatusUpdate { .. } => 1,
            EventKind::DonorArrival(_) => 2,
            EventKind::PatientDeparture { .. } => 3,
        }
    }

    /// Id of the donor or patient the event concerns.
    pub fn subject_id(&self) -> &str {
        match self {
            EventKind::PatientArrival(p) => &p.id,
            EventKind::StatusUpdate { patient_id, .. } => patient_id,
            EventKind::DonorArrival(d) => &d.id,
            EventKind::PatientDeparture { patient_id, .. } => patient_id,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEvent {
    pub time: Day,
    pub kind: EventKind,
}

impl TrajectoryEvent {
    pub fn new(time: Day, kind: EventKind) -> Self {
        TrajectoryEvent { time, kind }
    }

    /// Precedence used by replay: day, then kind rank.
    pub fn precedence(&self) -> (Day, u8) {
        (self.time, self.kind.rank())
    }

    /// Total order used when canonicalizing: precedence, then subject id.
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.precedence()
            .cmp(&other.precedence())
            .then_with(|| self.kind.subject_id().cmp(other.kind.subject_id()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub horizon_days: u32,
    pub initial_waitlist: Vec<PatientState>,
    pub events: Vec<TrajectoryEvent>,
}

impl Trajectory {
    pub fn horizon(&self) -> Day {
        self.horizon_days as Day
    }

    /// Stable-sorts events into canonical order. Same-subject events on the
    /// same day keep their relative order.
    pub fn canonicalize(&mut self) {
        self.events.sort_by(TrajectoryEvent::canonical_cmp);
    }

    pub fn donors(&self) -> impl Iterator<Item = &DonorRecord> {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::DonorArrival(d) => Some(d),
            _ => None,
        })
    }

    pub fn donor_count(&self) -> usize {
        self.donors().count()
    }

    /// Every patient appearing in the trajectory: the initial waitlist
    /// followed by arrivals in event order.
    pub fn patients(&self) -> impl Iterator<Item = &PatientState> {
        self.initial_waitlist
            .iter()
            .chain(self.events.iter().filter_map(|e| match &e.kind {
                EventKind::PatientArrival(p) => Some(p),
                _ => None,
            }))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub time: Day,
    pub donor_id: String,
    pub patient_id: String,
    pub utility: f64,
}
