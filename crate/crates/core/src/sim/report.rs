use std::fmt::Write as _;

use rayon::prelude::*;

use super::{metrics, run, Metrics};
use crate::compat::{CompatConfig, SurvivalModel};
use crate::domain::Trajectory;
use crate::error::Result;
use crate::oracle::upper_bound;
use crate::policies::Policy;

pub const REPORT_HEADER: &str = "trajectory,policy,plyg,omniscient,competitive_ratio";

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub trajectory: String,
    pub policy: String,
    pub plyg: f64,
    pub omniscient: f64,
    /// `plyg / omniscient`, absent when the bound is zero.
    pub competitive_ratio: Option<f64>,
}

/// PLYG of every policy on every trajectory next to the hindsight bound.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub policies: Vec<String>,
    pub trajectories: Vec<String>,
    /// Trajectory-major: all policies for the first trajectory, then the next.
    pub rows: Vec<ReportRow>,
}

fn ratio(plyg: f64, bound: f64) -> Option<f64> {
    (bound > 0.0).then(|| plyg / bound)
}

impl Report {
    pub fn row(&self, trajectory: &str, policy: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.trajectory == trajectory && r.policy == policy)
    }

    /// Arithmetic means over trajectories of PLYG and of the bound; the ratio
    /// is mean PLYG over mean bound.
    pub fn mean(&self, policy: &str) -> Option<ReportRow> {
        let rows: Vec<&ReportRow> = self.rows.iter().filter(|r| r.policy == policy).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let plyg = rows.iter().map(|r| r.plyg).sum::<f64>() / n;
        let omniscient = rows.iter().map(|r| r.omniscient).sum::<f64>() / n;
        Some(ReportRow {
            trajectory: "mean".into(),
            policy: policy.into(),
            plyg,
            omniscient,
            competitive_ratio: ratio(plyg, omniscient),
        })
    }

    /// Long-format CSV: one row per (trajectory, policy), then one `mean` row
    /// per policy. Header only when there are no policies.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{REPORT_HEADER}\n");
        let means = self.policies.iter().filter_map(|p| self.mean(p));
        for r in self.rows.iter().cloned().chain(means) {
            let cr = r.competitive_ratio.map(|x| x.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{},{}", r.trajectory, r.policy, r.plyg, r.omniscient, cr);
        }
        s
    }
}

/// Runs every (trajectory, policy) cell in parallel and collects them in
/// input order.
pub fn monthly_report(
    trajectories: &[(String, Trajectory)],
    policies: &[(String, Policy)],
    cfg: &CompatConfig,
    model: &SurvivalModel,
) -> Result<Report> {
    Ok(evaluate(trajectories, policies, cfg, model)?.0)
}

/// Like [`monthly_report`], also returning the metrics of each cell in row
/// order.
pub fn evaluate(
    trajectories: &[(String, Trajectory)],
    policies: &[(String, Policy)],
    cfg: &CompatConfig,
    model: &SurvivalModel,
) -> Result<(Report, Vec<Metrics>)> {
    let mut report = Report {
        policies: policies.iter().map(|(n, _)| n.clone()).collect(),
        trajectories: trajectories.iter().map(|(n, _)| n.clone()).collect(),
        rows: Vec::new(),
    };
    if policies.is_empty() {
        return Ok((report, Vec::new()));
    }
    let bounds: Vec<f64> = trajectories
        .par_iter()
        .map(|(_, t)| upper_bound(t, cfg, model))
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, usize)> = (0..trajectories.len())
        .flat_map(|ti| (0..policies.len()).map(move |pi| (ti, pi)))
        .collect();
    let done: Vec<(ReportRow, Metrics)> = cells
        .par_iter()
        .map(|&(ti, pi)| {
            let t = &trajectories[ti].1;
            let r = run(t, &policies[pi].1, cfg, model)?;
            let row = ReportRow {
                trajectory: trajectories[ti].0.clone(),
                policy: policies[pi].0.clone(),
                plyg: r.total_plyg,
                omniscient: bounds[ti],
                competitive_ratio: ratio(r.total_plyg, bounds[ti]),
            };
            Ok((row, metrics(&r, t)))
        })
        .collect::<Result<_>>()?;
    let (rows, ms) = done.into_iter().unzip();
    report.rows = rows;
    Ok((report, ms))
}
