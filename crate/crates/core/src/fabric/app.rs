//! Deterministic stand-in for a fast Monte Carlo detector simulation.
//!
//! Event `i` of a run is keyed by `h = fnv1a64(model ‖ 0x00 ‖ seed_le ‖ i_le)`
//! (seed and index as little-endian `u64`). The event lands in histogram bin
//! `h % 10`. The event's kinematics (pt, eta, phi) are drawn from a
//! splitmix64 stream seeded with `h`, so rows depend only on
//! `(model, seed, i)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::checksum::Fnv1a;

pub const SUMMARY_BINS: u64 = 10;
pub const NTUPLE_FILE: &str = "ntuple.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Bin index to event count. Bins with no events are omitted.
pub type Histogram = BTreeMap<u32, u64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NtupleRow {
    pub index: u64,
    pub pt: f64,
    pub eta: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppOutput {
    pub ntuple: Vec<NtupleRow>,
    pub summary: Histogram,
}

/// Contents of a job's `summary.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub histogram: Histogram,
    pub events: u64,
    pub exit_code: i32,
}

pub fn event_hash(model: &str, seed: u64, index: u64) -> u64 {
    let mut h = Fnv1a::default();
    h.update(model.as_bytes());
    h.update(&[0]);
    h.update(&seed.to_le_bytes());
    h.update(&index.to_le_bytes());
    h.finish()
}

pub fn event_bin(model: &str, seed: u64, index: u64) -> u32 {
    (event_hash(model, seed, index) % SUMMARY_BINS) as u32
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn unit(state: &mut u64) -> f64 {
    (splitmix64(state) >> 11) as f64 / (1u64 << 53) as f64
}

pub fn run_simulated_app(events: u64, model: &str, seed: u64) -> AppOutput {
    let mut ntuple = Vec::with_capacity(events as usize);
    let mut summary = Histogram::new();
    for index in 0..events {
        let h = event_hash(model, seed, index);
        *summary.entry((h % SUMMARY_BINS) as u32).or_default() += 1;
        let mut state = h;
        // Falling pt spectrum above a 20 GeV threshold.
        let pt = 20.0 - 25.0 * (1.0 - unit(&mut state)).ln();
        let eta = -2.5 + 5.0 * unit(&mut state);
        let phi = std::f64::consts::PI * (2.0 * unit(&mut state) - 1.0);
        ntuple.push(NtupleRow {
            index,
            pt,
            eta,
            phi,
        });
    }
    AppOutput { ntuple, summary }
}

/// Adds `other` into `into`, bin by bin.
pub fn merge_histograms(into: &mut Histogram, other: &Histogram) {
    for (bin, count) in other {
        *into.entry(*bin).or_default() += count;
    }
}

impl AppOutput {
    pub fn ntuple_csv(&self) -> String {
        let mut out = String::from("index,pt,eta,phi\n");
        for row in &self.ntuple {
            let _ = writeln!(out, "{},{},{},{}", row.index, row.pt, row.eta, row.phi);
        }
        out
    }

    pub fn summary_file(&self) -> SummaryFile {
        SummaryFile {
            histogram: self.summary.clone(),
            events: self.ntuple.len() as u64,
            exit_code: 0,
        }
    }
}
