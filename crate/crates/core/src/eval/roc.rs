use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::detect::DetectorConfig;

/// How false alarms on negative streams are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaCounting {
    /// Detection events after the suppression filter.
    #[default]
    Suppressed,
    /// Every window at or below the threshold.
    RawWindows,
}

/// Collected scores of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    /// Per-utterance minimum distances.
    pub positives: Vec<f64>,
    /// Window distances per negative stream, in time order at the detector hop.
    pub negatives: Vec<Vec<f64>>,
    pub negative_hours: f64,
    pub detector: DetectorConfig,
    pub counting: FaCounting,
}

impl EvalRun {
    pub fn new(
        positives: Vec<f64>,
        negatives: Vec<Vec<f64>>,
        negative_hours: f64,
        detector: DetectorConfig,
    ) -> Result<Self, EvalError> {
        let run = Self {
            positives,
            negatives,
            negative_hours,
            detector,
            counting: FaCounting::Suppressed,
        };
        run.validate()?;
        Ok(run)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.negative_hours > 0.0) || !self.negative_hours.is_finite() {
            return Err(EvalError::ZeroNegativeHours);
        }
        if self.positives.is_empty() || self.negatives.iter().all(Vec::is_empty) {
            return Err(EvalError::EmptyScores);
        }
        let all = self.positives.iter().chain(self.negatives.iter().flatten());
        if let Some(&bad) = all.clone().find(|s| !s.is_finite()) {
            return Err(EvalError::NonFiniteScore(bad));
        }
        self.detector.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fa_per_hour: f64,
    pub frr: f64,
}

/// Operating points in increasing threshold order.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

/// Every distinct score, the midpoints between neighbours, and one sentinel
/// below the minimum and above the maximum, ascending.
pub fn candidate_thresholds(scores: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = scores.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    let (Some(&lo), Some(&hi)) = (v.first(), v.last()) else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(2 * v.len() + 1);
    out.push(lo - 1.0);
    for (i, &s) in v.iter().enumerate() {
        if i > 0 {
            out.push(0.5 * (v[i - 1] + s));
        }
        out.push(s);
    }
    out.push(hi + 1.0);
    out
}

/// Greedy suppression chain of one stream, maintained under insertion of
/// newly passing windows. An inserted window either falls inside the
/// refractory span of the chain member before it, or joins the chain and
/// re-routes the chain after it until it rejoins the old one.
struct Chain {
    gap: usize,
    passing: BTreeSet<usize>,
    members: BTreeSet<usize>,
}

impl Chain {
    fn new(gap: usize) -> Self {
        Self {
            gap,
            passing: BTreeSet::new(),
            members: BTreeSet::new(),
        }
    }

    fn insert(&mut self, w: usize) {
        self.passing.insert(w);
        if let Some(&c) = self.members.range(..w).next_back() {
            if w < c + self.gap {
                return;
            }
        }
        self.members.insert(w);
        let mut cur = w;
        loop {
            let blocked: Vec<usize> = self.members.range(cur + 1..cur + self.gap).copied().collect();
            for b in blocked {
                self.members.remove(&b);
            }
            match self.passing.range(cur + self.gap..).next() {
                Some(&p) if !self.members.contains(&p) => {
                    self.members.insert(p);
                    cur = p;
                }
                _ => break,
            }
        }
    }

    fn events(&self) -> usize {
        self.members.len()
    }
}

pub fn roc(run: &EvalRun) -> Result<RocCurve, EvalError> {
    run.validate()?;
    let gap = run.detector.suppress_windows();
    let mut pos = run.positives.clone();
    pos.sort_by(f64::total_cmp);

    let mut neg: Vec<(f64, usize, usize)> = run
        .negatives
        .iter()
        .enumerate()
        .flat_map(|(s, scores)| scores.iter().enumerate().map(move |(w, &d)| (d, s, w)))
        .collect();
    neg.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut chains: Vec<Chain> = run.negatives.iter().map(|_| Chain::new(gap)).collect();
    let mut events = 0usize;
    let mut next = 0;

    let thresholds = candidate_thresholds(pos.iter().copied().chain(neg.iter().map(|n| n.0)));
    let mut points: Vec<RocPoint> = Vec::with_capacity(thresholds.len());
    for theta in thresholds {
        while next < neg.len() && neg[next].0 <= theta {
            let (_, s, w) = neg[next];
            match run.counting {
                FaCounting::Suppressed => {
                    events -= chains[s].events();
                    chains[s].insert(w);
                    events += chains[s].events();
                }
                FaCounting::RawWindows => events += 1,
            }
            next += 1;
        }
        let rejected = pos.len() - pos.partition_point(|&p| p <= theta);
        let point = RocPoint {
            threshold: theta,
            fa_per_hour: events as f64 / run.negative_hours,
            frr: rejected as f64 / pos.len() as f64,
        };
        match points.last() {
            Some(last) if last.fa_per_hour == point.fa_per_hour && last.frr == point.frr => {}
            _ => points.push(point),
        }
    }
    Ok(RocCurve { points })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub frr: f64,
    pub threshold: f64,
    pub fa_per_hour: f64,
    /// False when no threshold meets the FA target; `frr` is then the
    /// reject-all value 1.0.
    pub qualified: bool,
}

/// FRR at the largest threshold whose FA/hour is at most `fa_target`.
pub fn frr_at(curve: &RocCurve, fa_target: f64) -> OperatingPoint {
    match curve.points.iter().rev().find(|p| p.fa_per_hour <= fa_target) {
        Some(p) => OperatingPoint {
            frr: p.frr,
            threshold: p.threshold,
            fa_per_hour: p.fa_per_hour,
            qualified: true,
        },
        None => OperatingPoint {
            frr: 1.0,
            threshold: f64::NEG_INFINITY,
            fa_per_hour: 0.0,
            qualified: false,
        },
    }
}

/// Utterance-level `(frr, fa_rate)` at `threshold`, without suppression.
pub fn utterance_frr(positives: &[f64], negatives: &[f64], threshold: f64) -> Result<(f64, f64), EvalError> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    let rejected = positives.iter().filter(|&&p| p > threshold).count();
    let accepted = negatives.iter().filter(|&&n| n <= threshold).count();
    Ok((
        rejected as f64 / positives.len() as f64,
        accepted as f64 / negatives.len() as f64,
    ))
}

/// `threshold<TAB>fa_per_hour<TAB>frr` with a header line.
pub fn write_roc_tsv(w: &mut impl Write, curve: &RocCurve) -> std::io::Result<()> {
    writeln!(w, "threshold\tfa_per_hour\tfrr")?;
    for p in &curve.points {
        writeln!(w, "{:.6}\t{:.6}\t{:.6}", p.threshold, p.fa_per_hour, p.frr)?;
    }
    Ok(())
}

/// Step plot of FRR against FA/hour.
pub fn roc_svg(curve: &RocCurve, title: &str) -> String {
    let (w, h, m) = (480.0, 360.0, 48.0);
    let max_fa = curve.points.iter().map(|p| p.fa_per_hour).fold(0.0f64, f64::max).max(1.0);
    let x = |fa: f64| m + (w - 2.0 * m) * fa / max_fa;
    let y = |frr: f64| h - m - (h - 2.0 * m) * frr;
    let path: Vec<String> = curve
        .points
        .iter()
        .map(|p| format!("{:.2},{:.2}", x(p.fa_per_hour), y(p.frr)))
        .collect();
    let esc = title.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">
<rect width="100%" height="100%" fill="white"/>
<text x="{tx}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{esc}</text>
<line x1="{m}" y1="{yb}" x2="{xr}" y2="{yb}" stroke="black"/>
<line x1="{m}" y1="{m}" x2="{m}" y2="{yb}" stroke="black"/>
<text x="{tx}" y="{xl}" text-anchor="middle" font-family="sans-serif" font-size="12">FA per hour (0 to {max_fa:.2})</text>
<text x="14" y="{ty}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {ty})">FRR</text>
<polyline fill="none" stroke="steelblue" stroke-width="2" points="{pts}"/>
</svg>
"##,
        tx = w / 2.0,
        yb = h - m,
        xr = w - m,
        xl = h - 12.0,
        ty = h / 2.0,
        pts = path.join(" "),
    )
}
