use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use super::LoopEvent;

/// Timing categories: feature extraction, tracking, local mapping, place
/// recognition and loop correction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Category {
    Fe,
    Tt,
    Lm,
    Pr,
    Lc,
}

impl Category {
    pub const ALL: [Category; 5] = [Category::Fe, Category::Tt, Category::Lm, Category::Pr, Category::Lc];

    pub fn stage(self) -> Stage {
        match self {
            Category::Fe | Category::Tt => Stage::Tracking,
            Category::Lm => Stage::Mapping,
            Category::Pr | Category::Lc => Stage::Loop,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Fe => "FE",
            Category::Tt => "TT",
            Category::Lm => "LM",
            Category::Pr => "PR",
            Category::Lc => "LC",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Tracking,
    Mapping,
    Loop,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Tracking, Stage::Mapping, Stage::Loop];
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Tracking => "tracking",
            Stage::Mapping => "mapping",
            Stage::Loop => "loop",
        })
    }
}

/// Upper bin edges of the timing histograms, milliseconds.
pub const HISTOGRAM_EDGES_MS: [f64; 10] = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0];

/// Per-category durations and per-stage wall time, milliseconds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Timings {
    pub samples: BTreeMap<Category, Vec<f64>>,
    pub wall: BTreeMap<Stage, f64>,
}

impl Timings {
    pub fn record(&mut self, category: Category, ms: f64) {
        self.samples.entry(category).or_default().push(ms);
    }

    pub fn add_wall(&mut self, stage: Stage, ms: f64) {
        *self.wall.entry(stage).or_default() += ms;
    }

    pub fn merge(&mut self, other: Timings) {
        for (c, v) in other.samples {
            self.samples.entry(c).or_default().extend(v);
        }
        for (s, w) in other.wall {
            self.add_wall(s, w);
        }
    }

    pub fn total(&self, category: Category) -> f64 {
        self.samples.get(&category).map_or(0.0, |v| v.iter().sum())
    }

    /// Sum of the stage's category totals.
    pub fn categorized(&self, stage: Stage) -> f64 {
        Category::ALL.iter().filter(|c| c.stage() == stage).map(|&c| self.total(c)).sum()
    }

    /// `|wall − categorized| / wall`, zero for a stage that never ran.
    pub fn partition_error(&self, stage: Stage) -> f64 {
        let wall = self.wall.get(&stage).copied().unwrap_or(0.0);
        if wall <= 0.0 {
            return 0.0;
        }
        (wall - self.categorized(stage)).abs() / wall
    }

    pub fn histogram(&self, category: Category) -> Vec<usize> {
        let mut bins = vec![0; HISTOGRAM_EDGES_MS.len() + 1];
        for &ms in self.samples.get(&category).map_or(&[][..], |v| v.as_slice()) {
            let i = HISTOGRAM_EDGES_MS.iter().position(|&e| ms < e).unwrap_or(HISTOGRAM_EDGES_MS.len());
            bins[i] += 1;
        }
        bins
    }
}

/// Per-frame tracking record.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub features: usize,
    pub matches: usize,
    pub inliers: usize,
    pub tracked: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    pub frames: Vec<FrameRecord>,
    /// `(frame, error)` for each frame that failed to track.
    pub failures: Vec<(u64, String)>,
    pub initialized_at: Option<u64>,
    pub lost_events: usize,
    pub relocalizations: usize,
    pub keyframes_inserted: usize,
    pub keyframes: usize,
    pub map_points: usize,
    pub loops: Vec<LoopEvent>,
    pub timings: Timings,
    /// ATE RMSE against the dataset ground truth, when available.
    pub ate: Option<f64>,
    pub vocabulary_words: usize,
}

impl RunReport {
    pub fn tracked_frames(&self) -> usize {
        self.frames.iter().filter(|f| f.tracked).count()
    }

    pub fn accepted_loops(&self) -> usize {
        self.loops.iter().filter(|l| l.accepted).count()
    }

    /// Line-oriented `key value` text.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "frames {}", self.frames.len())?;
        writeln!(out, "frames.tracked {}", self.tracked_frames())?;
        writeln!(out, "frames.failed {}", self.failures.len())?;
        match self.initialized_at {
            Some(f) => writeln!(out, "initialized_at {f}")?,
            None => writeln!(out, "initialized_at none")?,
        }
        writeln!(out, "lost_events {}", self.lost_events)?;
        writeln!(out, "relocalizations {}", self.relocalizations)?;
        writeln!(out, "keyframes.inserted {}", self.keyframes_inserted)?;
        writeln!(out, "keyframes.final {}", self.keyframes)?;
        writeln!(out, "map_points {}", self.map_points)?;
        writeln!(out, "vocabulary.words {}", self.vocabulary_words)?;
        if let Some(ate) = self.ate {
            writeln!(out, "ate_rmse {ate:?}")?;
        }
        let tracked: Vec<&FrameRecord> = self.frames.iter().filter(|f| f.tracked).collect();
        if !tracked.is_empty() {
            let n = tracked.len() as f64;
            writeln!(out, "matches.mean {:.3}", tracked.iter().map(|f| f.matches as f64).sum::<f64>() / n)?;
            writeln!(out, "matches.min {}", tracked.iter().map(|f| f.matches).min().unwrap_or(0))?;
            writeln!(out, "inliers.mean {:.3}", tracked.iter().map(|f| f.inliers as f64).sum::<f64>() / n)?;
            writeln!(out, "features.mean {:.3}", tracked.iter().map(|f| f.features as f64).sum::<f64>() / n)?;
        }
        let edges: Vec<String> = HISTOGRAM_EDGES_MS.iter().map(|e| format!("{e}")).collect();
        writeln!(out, "timing.histogram_edges_ms {}", edges.join(" "))?;
        for c in Category::ALL {
            let v = self.timings.samples.get(&c).cloned().unwrap_or_default();
            let total: f64 = v.iter().sum();
            let mean = if v.is_empty() { 0.0 } else { total / v.len() as f64 };
            let max = v.iter().copied().fold(0.0, f64::max);
            writeln!(out, "timing.{c}.count {}", v.len())?;
            writeln!(out, "timing.{c}.total_ms {total:.3}")?;
            writeln!(out, "timing.{c}.mean_ms {mean:.3}")?;
            writeln!(out, "timing.{c}.max_ms {max:.3}")?;
            let hist: Vec<String> = self.timings.histogram(c).iter().map(|n| n.to_string()).collect();
            writeln!(out, "timing.{c}.histogram {}", hist.join(" "))?;
        }
        for s in Stage::ALL {
            writeln!(out, "stage.{s}.wall_ms {:.3}", self.timings.wall.get(&s).copied().unwrap_or(0.0))?;
            writeln!(out, "stage.{s}.categorized_ms {:.3}", self.timings.categorized(s))?;
            writeln!(out, "stage.{s}.partition_error {:.5}", self.timings.partition_error(s))?;
        }
        writeln!(out, "loops.detected {}", self.loops.len())?;
        writeln!(out, "loops.accepted {}", self.accepted_loops())?;
        for (i, l) in self.loops.iter().enumerate() {
            writeln!(
                out,
                "loop.{i} query={} query_frame={} candidate={} candidate_frame={} accepted={} scale={:.6} inliers={} verified={} fused={}",
                l.query,
                l.query_frame,
                l.candidate,
                l.candidate_frame,
                l.accepted,
                l.t_am.scale,
                l.inliers,
                l.verified,
                l.fused.added + l.fused.merged
            )?;
        }
        for (frame, error) in &self.failures {
            writeln!(out, "failure {frame} {error}")?;
        }
        Ok(())
    }
}
