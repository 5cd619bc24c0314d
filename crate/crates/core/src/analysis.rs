//! Post-hoc analysis of evaluation episodes: bits spent per goal, the
//! frequency-versus-bits correlation, and grid heatmaps.

use serde::{Deserialize, Serialize};

use crate::channel::{self, Signal};
use crate::env::{Cell, GoalDistribution, GRID_SIZE};
use crate::error::Result;
use crate::loss;
use crate::rng::NoiseKey;
use crate::train::{BitsMode, EpisodeRecord, Policies};

/// Pearson correlation; `None` when either side has zero variance or fewer
/// than two points.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Average ranks (1-based), ties sharing the mean rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    pearson(&ranks(xs), &ranks(ys))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalStats {
    pub goal: Cell,
    pub probability: f64,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_bits_per_episode: f64,
    /// Bits per transmitted message.
    pub mean_bits_per_message: f64,
    pub mean_steps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolAnalysis {
    pub bits: BitsMode,
    pub per_goal: Vec<GoalStats>,
    /// Goals of the support seen at least once.
    pub covered_goals: usize,
    /// Pearson r between goal probability and bits per message.
    pub frequency_bits_r: Option<f64>,
    /// Set when the result is partial or the correlation is undefined.
    pub flags: Vec<String>,
    /// Mean bits per message indexed `[y][x]`; `None` for cells never seen
    /// as a goal.
    pub heatmap: Vec<Vec<Option<f64>>>,
}

/// Groups episodes by goal and correlates goal probability with the bits
/// spent per message.
pub fn analyze_protocol(
    records: &[EpisodeRecord],
    distribution: &GoalDistribution,
    bits: BitsMode,
) -> ProtocolAnalysis {
    let mut per_goal = Vec::new();
    for &(goal, probability) in distribution.support() {
        let eps: Vec<&EpisodeRecord> = records.iter().filter(|r| r.goal == goal).collect();
        let n = eps.len();
        if n == 0 {
            continue;
        }
        let nf = n as f64;
        let messages: usize = eps.iter().map(|r| r.message_count()).sum();
        let total_bits: f64 = eps.iter().map(|r| r.bits(bits)).sum();
        per_goal.push(GoalStats {
            goal,
            probability,
            episodes: n,
            success_rate: eps.iter().filter(|r| r.success).count() as f64 / nf,
            mean_bits_per_episode: total_bits / nf,
            mean_bits_per_message: if messages == 0 {
                0.0
            } else {
                total_bits / messages as f64
            },
            mean_steps: eps.iter().map(|r| f64::from(r.steps)).sum::<f64>() / nf,
        });
    }

    let mut flags = Vec::new();
    let support = distribution.support().len();
    let required = support.saturating_sub(1).max(2).min(support);
    if per_goal.len() < required {
        flags.push(format!(
            "partial: {} of {} goals covered (need {required})",
            per_goal.len(),
            support
        ));
    }
    let freq: Vec<f64> = per_goal.iter().map(|g| g.probability).collect();
    let cost: Vec<f64> = per_goal.iter().map(|g| g.mean_bits_per_message).collect();
    let r = pearson(&freq, &cost);
    if r.is_none() {
        flags.push("correlation undefined: zero variance or too few goals".into());
    }

    let size = GRID_SIZE as usize;
    let mut heatmap = vec![vec![None; size]; size];
    for g in &per_goal {
        heatmap[g.goal.1 as usize][g.goal.0 as usize] = Some(g.mean_bits_per_message);
    }

    ProtocolAnalysis {
        bits,
        covered_goals: per_goal.len(),
        per_goal,
        frequency_bits_r: r,
        flags,
        heatmap,
    }
}

/// Expected bits of one message for every goal cell of the grid, indexed
/// `[y][x]`. Ideal bits are Monte-Carlo averages over `samples` channel
/// draws; the surrogate is evaluated in closed form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerHeatmap {
    pub ideal_bits: Vec<Vec<f64>>,
    pub surrogate_bits: Vec<Vec<f64>>,
}

pub fn speaker_heatmap(
    policies: &Policies,
    delta: f64,
    seed: u64,
    samples: u32,
) -> Result<SpeakerHeatmap> {
    let size = GRID_SIZE as usize;
    let mut ideal_bits = vec![vec![0.0; size]; size];
    let mut surrogate_bits = vec![vec![0.0; size]; size];
    for y in 0..GRID_SIZE {
        for x in 0..GRID_SIZE {
            let z = policies.signal((x, y))?;
            let signal = Signal::new(z.clone())?;
            let mut acc = 0.0;
            for t in 0..samples {
                let key = NoiseKey::new(seed, (y * GRID_SIZE + x) as u32, t, 0);
                acc += channel::quantize(&signal, key, delta)?.ideal_bits;
            }
            ideal_bits[y as usize][x as usize] = acc / f64::from(samples.max(1));
            surrogate_bits[y as usize][x as usize] = loss::comms_cost(&z, delta)?.total;
        }
    }
    Ok(SpeakerHeatmap {
        ideal_bits,
        surrogate_bits,
    })
}

/// Goal probabilities on the grid, indexed `[y][x]`.
pub fn frequency_heatmap(distribution: &GoalDistribution) -> Vec<Vec<f64>> {
    let size = GRID_SIZE as usize;
    let mut grid = vec![vec![0.0; size]; size];
    for &((x, y), p) in distribution.support() {
        grid[y as usize][x as usize] = p;
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::MessageLog;

    fn record(goal: Cell, bits_per_message: f64, messages: usize) -> EpisodeRecord {
        EpisodeRecord {
            goal,
            steps: messages as u32,
            success: true,
            episode_return: 1.0,
            ideal_bits_total: bits_per_message * messages as f64,
            encoded_bits_total: 0,
            messages: (0..messages)
                .map(|t| MessageLog {
                    t: t as u32,
                    z: vec![],
                    m: vec![],
                    ideal_bits: bits_per_message,
                    encoded_bits: 0,
                })
                .collect(),
        }
    }

    #[test]
    fn correlation_helpers() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]), Some(1.0));
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), None);
        assert_eq!(ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
        let s = spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 9.0, 3.0, 1.0]).unwrap();
        assert!((s + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_bits_flagged() {
        let d = GoalDistribution::default_distribution();
        let recs: Vec<_> = d.support().iter().map(|&(g, _)| record(g, 2.0, 4)).collect();
        let a = analyze_protocol(&recs, &d, BitsMode::Ideal);
        assert_eq!(a.frequency_bits_r, None);
        assert!(a.flags.iter().any(|f| f.contains("undefined")));
    }

    #[test]
    fn exact_anticorrelation() {
        let d = GoalDistribution::default_distribution();
        let recs: Vec<_> = d.support().iter().map(|&(g, p)| record(g, -p, 3)).collect();
        let a = analyze_protocol(&recs, &d, BitsMode::Ideal);
        assert!((a.frequency_bits_r.unwrap() + 1.0).abs() < 1e-12);
        assert!(a.flags.is_empty());
        assert_eq!(a.heatmap[7][7], Some(-0.258));
        assert_eq!(a.heatmap[0][1], None);
    }

    #[test]
    fn low_coverage_flagged() {
        let d = GoalDistribution::default_distribution();
        let recs = vec![record((0, 0), 1.0, 2), record((7, 7), 3.0, 2)];
        let a = analyze_protocol(&recs, &d, BitsMode::Ideal);
        assert_eq!(a.covered_goals, 2);
        assert!(a.flags.iter().any(|f| f.starts_with("partial")));
    }
}
