//! Re-binning of base-interval snapshots into coarser steps.

use std::collections::BTreeMap;

use crate::aggregate::IntervalSnapshot;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResamplePlan {
    pub source_step_ms: u64,
    /// Must be a positive multiple of `source_step_ms`.
    pub target_step_ms: u64,
    /// Inclusive, aligned to `target_step_ms`.
    pub window_start: i64,
    /// Exclusive, aligned to `target_step_ms`.
    pub window_end: i64,
}

impl ResamplePlan {
    pub fn validate(&self) -> Result<()> {
        let misaligned = |msg: String| Err(Error::MisalignedPlan(msg));
        if self.source_step_ms == 0 || self.target_step_ms == 0 {
            return misaligned("steps must be positive".into());
        }
        if !self.target_step_ms.is_multiple_of(self.source_step_ms) {
            return misaligned(format!(
                "target step {} is not a multiple of source step {}",
                self.target_step_ms, self.source_step_ms
            ));
        }
        if self.window_start >= self.window_end {
            return misaligned("window start must precede window end".into());
        }
        let step = self.target_step_ms as i64;
        if self.window_start.rem_euclid(step) != 0 || self.window_end.rem_euclid(step) != 0 {
            return misaligned(format!("window is not aligned to {step} ms"));
        }
        Ok(())
    }

    /// The smallest target-aligned plan covering `[from, to)`.
    pub fn covering(source_step_ms: u64, target_step_ms: u64, from: i64, to: i64) -> Result<Self> {
        if target_step_ms == 0 {
            return Err(Error::MisalignedPlan("steps must be positive".into()));
        }
        let step = target_step_ms as i64;
        let plan = ResamplePlan {
            source_step_ms,
            target_step_ms,
            window_start: from.div_euclid(step) * step,
            window_end: (to + step - 1).div_euclid(step) * step,
        };
        plan.validate()?;
        Ok(plan)
    }
}

/// Merge sorted, disjoint source snapshots into target bins. Bins without
/// data are omitted; `pct` is recomputed from the pooled counts.
pub fn resample(snapshots: &[IntervalSnapshot], plan: &ResamplePlan) -> Result<Vec<IntervalSnapshot>> {
    plan.validate()?;
    let step = plan.target_step_ms as i64;
    let mut bins: BTreeMap<i64, IntervalSnapshot> = BTreeMap::new();
    let mut prev_end: Option<i64> = None;
    for snap in snapshots {
        let start = snap.interval_start;
        if prev_end.is_some_and(|end| start < end) {
            return Err(Error::OverlappingSnapshots { start });
        }
        prev_end = Some(snap.interval_end());
        if snap.interval_length_ms != plan.source_step_ms {
            return Err(Error::MisalignedSnapshot {
                start,
                reason: format!("length {} differs from source step {}", snap.interval_length_ms, plan.source_step_ms),
            });
        }
        if start < plan.window_start || snap.interval_end() > plan.window_end {
            return Err(Error::MisalignedSnapshot { start, reason: "outside the plan window".into() });
        }
        let bin_start = start.div_euclid(step) * step;
        if snap.interval_end() > bin_start + step {
            return Err(Error::MisalignedSnapshot { start, reason: "straddles a target bin boundary".into() });
        }
        bins.entry(bin_start).or_insert_with(|| IntervalSnapshot::empty(bin_start, plan.target_step_ms)).absorb(snap);
    }
    Ok(bins
        .into_values()
        .filter(|s| !s.is_empty())
        .map(|mut s| {
            s.recompute_pct();
            s
        })
        .collect())
}

/// One snapshot spanning the earliest start to the latest end of the input.
pub fn window_aggregate(snapshots: &[IntervalSnapshot]) -> Result<IntervalSnapshot> {
    let mut ordered: Vec<&IntervalSnapshot> = snapshots.iter().collect();
    ordered.sort_by_key(|s| s.interval_start);
    let (Some(first), Some(last_end)) = (ordered.first(), ordered.iter().map(|s| s.interval_end()).max()) else {
        return Err(Error::EmptyWindow);
    };
    let start = first.interval_start;
    let mut out = IntervalSnapshot::empty(start, (last_end - start) as u64);
    let mut prev_end: Option<i64> = None;
    for snap in ordered {
        if prev_end.is_some_and(|end| snap.interval_start < end) {
            return Err(Error::OverlappingSnapshots { start: snap.interval_start });
        }
        prev_end = Some(snap.interval_end());
        out.absorb(snap);
    }
    out.recompute_pct();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::aggregate_interval;
    use crate::model::{TraceSpan, View};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const MIN: i64 = 60_000;

    fn random_spans(rng: &mut ChaCha8Rng, bin_start: i64, n: usize) -> Vec<TraceSpan> {
        (0..n)
            .map(|i| TraceSpan {
                trace_id: format!("t{bin_start}-{i}"),
                span_id: format!("s{bin_start}-{i}"),
                start_time_us: (bin_start + rng.random_range(0..MIN)) * 1000,
                duration_us: rng.random_range(100..900_000),
                caller_id: ["web", "api"][rng.random_range(0..2)].into(),
                callee_id: ["db", "auth", "cache"][rng.random_range(0..3)].into(),
                app_instance_id: ["dc1", "dc2"][rng.random_range(0..2)].into(),
                return_code: ["200", "500", "429"][rng.random_range(0..3)].into(),
            })
            .collect()
    }

    fn minutes(rng: &mut ChaCha8Rng, which: &[i64]) -> (Vec<IntervalSnapshot>, Vec<TraceSpan>) {
        let mut all = Vec::new();
        let snaps = which
            .iter()
            .map(|&m| {
                let spans = random_spans(rng, m * MIN, 40);
                let s = aggregate_interval(&spans, m * MIN, MIN as u64).unwrap();
                all.extend(spans);
                s
            })
            .collect();
        (snaps, all)
    }

    fn assert_equivalent(a: &IntervalSnapshot, b: &IntervalSnapshot) {
        assert_eq!(a.interval_start, b.interval_start);
        assert_eq!(a.interval_length_ms, b.interval_length_ms);
        for view in [View::DatacenterServices, View::CallerCallee] {
            let (xs, ys): (Vec<_>, Vec<_>) = (a.bundles(view).collect(), b.bundles(view).collect());
            assert_eq!(xs.len(), ys.len());
            for ((y1, x1, c1, p), (y2, x2, c2, q)) in xs.into_iter().zip(ys) {
                assert_eq!((y1, x1, c1), (y2, x2, c2));
                assert_eq!(p.count, q.count);
                let (d, e) = (p.duration.unwrap(), q.duration.unwrap());
                assert_eq!((d.min_ms, d.max_ms), (e.min_ms, e.max_ms));
                assert!((d.mean_ms - e.mean_ms).abs() <= 1e-9 * e.mean_ms);
                assert!((d.std_ms - e.std_ms).abs() <= 1e-9 * e.std_ms.max(1e-3));
                assert!((p.pct.unwrap() - q.pct.unwrap()).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn fifteen_minutes_match_raw_aggregation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (snaps, raw) = minutes(&mut rng, &(0..15).collect::<Vec<_>>());
        let plan = ResamplePlan::covering(MIN as u64, 15 * MIN as u64, 0, 15 * MIN).unwrap();
        let out = resample(&snaps, &plan).unwrap();
        assert_eq!(out.len(), 1);
        assert_equivalent(&out[0], &aggregate_interval(&raw, 0, 15 * MIN as u64).unwrap());
    }

    #[test]
    fn identity_resample() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (snaps, _) = minutes(&mut rng, &[3]);
        let plan = ResamplePlan::covering(MIN as u64, MIN as u64, 3 * MIN, 4 * MIN).unwrap();
        assert_eq!(resample(&snaps, &plan).unwrap(), snaps);
    }

    #[test]
    fn gaps_produce_no_empty_bins() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (snaps, raw) = minutes(&mut rng, &[0, 14]);
        let plan = ResamplePlan::covering(MIN as u64, 15 * MIN as u64, 0, 60 * MIN).unwrap();
        let out = resample(&snaps, &plan).unwrap();
        assert_eq!(out.len(), 1);
        assert_equivalent(&out[0], &aggregate_interval(&raw, 0, 15 * MIN as u64).unwrap());
    }

    #[test]
    fn plan_validation() {
        let bad = ResamplePlan { source_step_ms: 60_000, target_step_ms: 90_000, window_start: 0, window_end: 180_000 };
        assert!(matches!(bad.validate(), Err(Error::MisalignedPlan(_))));
        let unaligned =
            ResamplePlan { source_step_ms: 60_000, target_step_ms: 120_000, window_start: 60_000, window_end: 180_000 };
        assert!(unaligned.validate().is_err());
        let empty = ResamplePlan { source_step_ms: 60_000, target_step_ms: 60_000, window_start: 0, window_end: 0 };
        assert!(empty.validate().is_err());
        assert!(ResamplePlan::covering(60_000, 0, 0, 1).is_err());
    }

    #[test]
    fn duplicates_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (snaps, _) = minutes(&mut rng, &[1, 1]);
        let plan = ResamplePlan::covering(MIN as u64, 5 * MIN as u64, 0, 5 * MIN).unwrap();
        assert!(matches!(resample(&snaps, &plan), Err(Error::OverlappingSnapshots { .. })));
        assert!(matches!(window_aggregate(&snaps), Err(Error::OverlappingSnapshots { .. })));
    }

    #[test]
    fn window_aggregate_cases() {
        assert!(matches!(window_aggregate(&[]), Err(Error::EmptyWindow)));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (one, _) = minutes(&mut rng, &[5]);
        assert_eq!(window_aggregate(&one).unwrap(), one[0]);

        let (two, _) = minutes(&mut rng, &[0, 1]);
        let whole = window_aggregate(&two).unwrap();
        let plan = ResamplePlan::covering(MIN as u64, 2 * MIN as u64, 0, 2 * MIN).unwrap();
        assert_eq!(vec![whole], resample(&two, &plan).unwrap());
    }

    #[test]
    fn day_of_minutes_conserves_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let snaps: Vec<_> = (0..24 * 60)
            .map(|m| aggregate_interval(&random_spans(&mut rng, m * MIN, 5), m * MIN, MIN as u64).unwrap())
            .collect();
        let whole = window_aggregate(&snaps).unwrap();
        assert_eq!(whole.interval_length_ms, 24 * 60 * MIN as u64);
        for view in [View::DatacenterServices, View::CallerCallee] {
            let mut sums: BTreeMap<(String, String, String), u64> = BTreeMap::new();
            for s in &snaps {
                for (y, x, c, b) in s.bundles(view) {
                    *sums.entry((y.into(), x.into(), c.into())).or_default() += b.count;
                }
            }
            let got: BTreeMap<_, _> = whole
                .bundles(view)
                .map(|(y, x, c, b)| ((y.to_string(), x.to_string(), c.to_string()), b.count))
                .collect();
            assert_eq!(got, sums);
        }
    }

    #[test]
    fn step_chains_compose() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (snaps, _) = minutes(&mut rng, &(0..30).filter(|m| m % 7 != 3).collect::<Vec<_>>());
        let p5 = ResamplePlan::covering(MIN as u64, 5 * MIN as u64, 0, 30 * MIN).unwrap();
        let p5_15 = ResamplePlan::covering(5 * MIN as u64, 15 * MIN as u64, 0, 30 * MIN).unwrap();
        let p15 = ResamplePlan::covering(MIN as u64, 15 * MIN as u64, 0, 30 * MIN).unwrap();
        let chained = resample(&resample(&snaps, &p5).unwrap(), &p5_15).unwrap();
        let direct = resample(&snaps, &p15).unwrap();
        assert_eq!(chained.len(), direct.len());
        for (a, b) in chained.iter().zip(&direct) {
            assert_equivalent(a, b);
        }
        // min/max monotonicity against sources
        for src in &snaps {
            let bin = &direct[(src.interval_start / (15 * MIN)) as usize];
            for (y, x, c, b) in src.bundles(View::CallerCallee) {
                let w = bin.caller_callee_pairs[y][x][c].duration.unwrap();
                let d = b.duration.unwrap();
                assert!(w.min_ms <= d.min_ms && w.max_ms >= d.max_ms);
            }
        }
    }
}
