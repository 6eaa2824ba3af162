use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use super::config::TrainingConfig;
use super::train::train;
use crate::error::{Error, Result};

pub const SWEEP_HEADER: &str =
    "axis,value,seed,status,step,fid,kid,precision,recall,mode_coverage,class_fidelity,error";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    NumClasses,
    SamplesPerClass,
    TStart,
    TEnd,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::NumClasses => "num_classes",
            SweepAxis::SamplesPerClass => "samples_per_class",
            SweepAxis::TStart => "t_start",
            SweepAxis::TEnd => "t_end",
        }
    }

    /// Base config with this axis set to `value`. Class and sample axes draw
    /// subsets of the base dataset; moving `t_start` keeps the ramp length.
    pub fn apply(self, base: &TrainingConfig, value: i64) -> Result<TrainingConfig> {
        let mut cfg = base.clone();
        let count = || {
            usize::try_from(value).map_err(|_| Error::Config(format!("{} must be positive, got {value}", self.as_str())))
        };
        match self {
            SweepAxis::NumClasses => cfg.subset_classes = Some(count()?),
            SweepAxis::SamplesPerClass => cfg.subset_per_class = Some(count()?),
            SweepAxis::TStart => {
                let len = base.t_end - base.t_start;
                cfg.t_start = value;
                cfg.t_end = value + len;
            }
            SweepAxis::TEnd => cfg.t_end = value,
        }
        Ok(cfg)
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "num_classes" => Ok(SweepAxis::NumClasses),
            "samples_per_class" => Ok(SweepAxis::SamplesPerClass),
            "t_start" => Ok(SweepAxis::TStart),
            "t_end" => Ok(SweepAxis::TEnd),
            _ => Err(Error::Config(format!("unknown sweep axis '{s}'"))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Final metrics of one (value, seed) run, or the error that stopped it.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: i64,
    pub seed: u64,
    pub outcome: std::result::Result<super::log::LogRow, String>,
}

/// Independent runs for every (value, seed) pair, sorted by value then seed.
/// A failing run is recorded in its row and does not stop the others.
pub fn sweep(base: &TrainingConfig, axis: SweepAxis, values: &[i64], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one value and one seed".into()));
    }
    let jobs: Vec<(i64, u64)> = values
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let mut rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(value, seed)| {
            let outcome = axis
                .apply(base, value)
                .and_then(|mut cfg| {
                    cfg.seed = seed;
                    if let Some(root) = &base.output_dir {
                        cfg.output_dir = Some(format!("{root}/{axis}={value}/seed={seed}"));
                    }
                    train(&cfg)
                })
                .and_then(|out| {
                    out.log
                        .last()
                        .copied()
                        .ok_or_else(|| Error::contract("run produced no evaluation rows"))
                })
                .map_err(|e| e.to_string());
            SweepRow {
                axis,
                value,
                seed,
                outcome,
            }
        })
        .collect();
    rows.sort_by_key(|r| (r.value, r.seed));
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        match &r.outcome {
            Ok(l) => writeln!(
                out,
                "{},{},{},ok,{},{},{},{},{},{},{},",
                r.axis, r.value, r.seed, l.step, l.fid, l.kid, l.precision, l.recall, l.mode_coverage, l.class_fidelity
            )?,
            Err(e) => {
                let msg = e.replace(['"', '\n'], " ");
                writeln!(out, "{},{},{},error,,,,,,,,\"{msg}\"", r.axis, r.value, r.seed)?
            }
        }
    }
    Ok(())
}
