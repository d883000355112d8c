//! Learning-rate laws and the skeleton timescale built on top of them.
//!
//! A skeleton partitions natural time `t` into segments `[t_m, t_{m+1})` whose
//! step mass `alpha_bar_m` just reaches a prescribed target `T_m`. The iterates
//! observed at the anchors `t_m` then behave like a scalar recursion driven by
//! the targets instead of the raw learning rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::KahanSum;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Lr1,
    Lr2,
    Table,
}

/// Raw serialized form; validated into [`Schedule`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum ScheduleRepr {
    Lr1 { c_alpha: f64, nu: f64 },
    Lr2 { c_alpha: f64, nu: f64 },
    Table { values: Vec<f64> },
}

/// A learning-rate sequence `alpha_t`.
///
/// * `Lr1`: `c / (t+3)^nu` with `nu` in `(2/3, 1]`
/// * `Lr2`: `c / ((t+3) ln^nu(t+3))` with `nu` in `(0, 1)`
/// * `Table`: explicit positive values
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRepr", into = "ScheduleRepr")]
pub enum Schedule {
    Lr1 { c_alpha: f64, nu: f64 },
    Lr2 { c_alpha: f64, nu: f64 },
    Table { values: Vec<f64> },
}

impl TryFrom<ScheduleRepr> for Schedule {
    type Error = Error;

    fn try_from(r: ScheduleRepr) -> Result<Self> {
        match r {
            ScheduleRepr::Lr1 { c_alpha, nu } => Schedule::lr1(c_alpha, nu),
            ScheduleRepr::Lr2 { c_alpha, nu } => Schedule::lr2(c_alpha, nu),
            ScheduleRepr::Table { values } => Schedule::table(values),
        }
    }
}

impl From<Schedule> for ScheduleRepr {
    fn from(s: Schedule) -> Self {
        match s {
            Schedule::Lr1 { c_alpha, nu } => ScheduleRepr::Lr1 { c_alpha, nu },
            Schedule::Lr2 { c_alpha, nu } => ScheduleRepr::Lr2 { c_alpha, nu },
            Schedule::Table { values } => ScheduleRepr::Table { values },
        }
    }
}

fn check_c_alpha(c_alpha: f64) -> Result<()> {
    if c_alpha.is_finite() && c_alpha > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("c_alpha must be positive, got {c_alpha}")))
    }
}

impl Schedule {
    pub fn lr1(c_alpha: f64, nu: f64) -> Result<Self> {
        check_c_alpha(c_alpha)?;
        if !(nu > 2.0 / 3.0 && nu <= 1.0) {
            return Err(Error::Config(format!("LR1 requires nu in (2/3, 1], got {nu}")));
        }
        Ok(Schedule::Lr1 { c_alpha, nu })
    }

    pub fn lr2(c_alpha: f64, nu: f64) -> Result<Self> {
        check_c_alpha(c_alpha)?;
        if !(nu > 0.0 && nu < 1.0) {
            return Err(Error::Config(format!("LR2 requires nu in (0, 1), got {nu}")));
        }
        Ok(Schedule::Lr2 { c_alpha, nu })
    }

    pub fn table(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("table schedule is empty".into()));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Config(format!(
                "table schedule entry {i} must be positive, got {v}"
            )));
        }
        Ok(Schedule::Table { values })
    }

    pub fn kind(&self) -> ScheduleKind {
        match self {
            Schedule::Lr1 { .. } => ScheduleKind::Lr1,
            Schedule::Lr2 { .. } => ScheduleKind::Lr2,
            Schedule::Table { .. } => ScheduleKind::Table,
        }
    }

    pub fn c_alpha(&self) -> Option<f64> {
        match *self {
            Schedule::Lr1 { c_alpha, .. } | Schedule::Lr2 { c_alpha, .. } => Some(c_alpha),
            Schedule::Table { .. } => None,
        }
    }

    pub fn nu(&self) -> Option<f64> {
        match *self {
            Schedule::Lr1 { nu, .. } | Schedule::Lr2 { nu, .. } => Some(nu),
            Schedule::Table { .. } => None,
        }
    }

    /// Largest admissible `t + 1`, if the schedule is finite.
    pub fn len(&self) -> Option<u64> {
        match self {
            Schedule::Table { values } => Some(values.len() as u64),
            _ => None,
        }
    }

    pub fn alpha_at(&self, t: u64) -> Result<f64> {
        match self {
            Schedule::Lr1 { c_alpha, nu } => Ok(c_alpha / (t as f64 + 3.0).powf(*nu)),
            Schedule::Lr2 { c_alpha, nu } => {
                let x = t as f64 + 3.0;
                Ok(c_alpha / (x * x.ln().powf(*nu)))
            }
            Schedule::Table { values } => values.get(t as usize).copied().ok_or(Error::Index {
                index: t,
                len: values.len(),
            }),
        }
    }

    /// `sum_{t=lo}^{hi-1} alpha_t`, compensated.
    pub fn segment_sum(&self, lo: u64, hi: u64) -> Result<f64> {
        if lo > hi {
            return Err(Error::Argument(format!("segment_sum: lo {lo} > hi {hi}")));
        }
        let mut acc = KahanSum::new();
        for t in lo..hi {
            acc.add(self.alpha_at(t)?);
        }
        Ok(acc.value())
    }

    /// Stable hex digest of the serialized schedule.
    pub fn fingerprint(&self) -> String {
        crate::fingerprint(self)
    }
}

/// Exponents `(nu1, nu2)` of the skeleton targets `T_m = c ln^nu1(m+3) / (m+3)^nu2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub nu1: f64,
    pub nu2: f64,
}

impl Regime {
    /// Checks `(nu1, nu2)` against the admissible row for `schedule`.
    pub fn check_for(&self, schedule: &Schedule) -> Result<()> {
        let Regime { nu1, nu2 } = *self;
        match *schedule {
            Schedule::Lr1 { nu, .. } if nu == 1.0 => {
                if nu1 > 0.0 && nu1 < 1.0 && nu2 == 1.0 {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "LR1 with nu = 1 needs 0 < nu1 < 1 and nu2 = 1, got ({nu1}, {nu2})"
                    )))
                }
            }
            Schedule::Lr1 { nu, .. } => {
                let hi = nu / (2.0 - nu);
                if nu1 == 0.0 && nu2 > 0.5 && nu2 < hi {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "LR1 with nu = {nu} needs nu1 = 0 and nu2 in (1/2, {hi}), got ({nu1}, {nu2})"
                    )))
                }
            }
            Schedule::Lr2 { .. } => {
                if nu1 == 0.0 && nu2 == 1.0 {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "LR2 needs nu1 = 0 and nu2 = 1, got ({nu1}, {nu2})"
                    )))
                }
            }
            Schedule::Table { .. } => Err(Error::Config(
                "table schedules have no skeleton regime; supply explicit targets".into(),
            )),
        }
    }
}

/// Picks the regime row for a schedule kind and exponent.
///
/// `nu1` must be supplied for LR1 with `nu = 1`; `nu2` may be supplied for LR1
/// with `nu < 1` and otherwise defaults to the midpoint of `(1/2, nu/(2-nu))`.
pub fn select_regime(kind: ScheduleKind, nu: f64, nu1: Option<f64>, nu2: Option<f64>) -> Result<Regime> {
    let regime = match kind {
        ScheduleKind::Lr1 if nu == 1.0 => {
            let nu1 = nu1.ok_or_else(|| Error::Config("LR1 with nu = 1 requires an explicit nu1 in (0, 1)".into()))?;
            Regime {
                nu1,
                nu2: nu2.unwrap_or(1.0),
            }
        }
        ScheduleKind::Lr1 if nu > 2.0 / 3.0 && nu < 1.0 => Regime {
            nu1: nu1.unwrap_or(0.0),
            nu2: nu2.unwrap_or_else(|| (0.5 + nu / (2.0 - nu)) / 2.0),
        },
        ScheduleKind::Lr1 => return Err(Error::Config(format!("LR1 requires nu in (2/3, 1], got {nu}"))),
        ScheduleKind::Lr2 if nu > 0.0 && nu < 1.0 => Regime {
            nu1: nu1.unwrap_or(0.0),
            nu2: nu2.unwrap_or(1.0),
        },
        ScheduleKind::Lr2 => return Err(Error::Config(format!("LR2 requires nu in (0, 1), got {nu}"))),
        ScheduleKind::Table => return Err(Error::Config("table schedules have no skeleton regime".into())),
    };
    // Reuse the row check so that user-supplied overrides are validated too.
    let probe = match kind {
        ScheduleKind::Lr1 => Schedule::Lr1 { c_alpha: 1.0, nu },
        _ => Schedule::Lr2 { c_alpha: 1.0, nu },
    };
    regime.check_for(&probe)?;
    Ok(regime)
}

/// `T_m = c_alpha ln^nu1(m+3) / (m+3)^nu2`.
pub fn skeleton_target(regime: Regime, c_alpha: f64, m: u64) -> f64 {
    let x = m as f64 + 3.0;
    c_alpha * x.ln().powf(regime.nu1) / x.powf(regime.nu2)
}

/// Anchors `t_0 = 0 < t_1 < ...`, targets `T_m` and realized step masses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonTimescale {
    /// `t_0..=t_M`; one more entry than `targets`.
    pub anchors: Vec<u64>,
    pub targets: Vec<f64>,
    pub realized: Vec<f64>,
}

/// Result of checking both bracketing inequalities on every segment.
#[derive(Clone, Debug, PartialEq)]
pub struct BracketReport {
    pub ok: bool,
    pub first_violation: Option<usize>,
    /// `max_m (alpha_bar_m - T_m - alpha_{t_{m+1}-1}) / T_m`, ideally `<= 0`.
    pub worst_upper_excess: f64,
}

impl SkeletonTimescale {
    pub fn segments(&self) -> usize {
        self.targets.len()
    }

    pub fn segment(&self, m: usize) -> std::ops::Range<u64> {
        self.anchors[m]..self.anchors[m + 1]
    }

    /// Segment index containing natural time `t`, if inside the skeleton.
    pub fn segment_of(&self, t: u64) -> Option<usize> {
        if t >= *self.anchors.last()? {
            return None;
        }
        Some(self.anchors.partition_point(|&a| a <= t) - 1)
    }

    /// First `m` from which `alpha_bar_j <= 2 T_j` holds for every computed
    /// `j >= m`, provided at least `confirm` segments back it up.
    pub fn ratio_m0(&self, confirm: usize) -> Option<usize> {
        let mut m0 = self.segments();
        for m in (0..self.segments()).rev() {
            if self.realized[m] <= 2.0 * self.targets[m] {
                m0 = m;
            } else {
                break;
            }
        }
        (self.segments() - m0 >= confirm).then_some(m0)
    }

    /// Recomputes every segment's partial sums naively and checks
    /// `T_m <= alpha_bar_m <= T_m + alpha_{t_{m+1}-1}` (relative slack `1e-12`).
    pub fn check_brackets(&self, schedule: &Schedule) -> Result<BracketReport> {
        let mut report = BracketReport {
            ok: true,
            first_violation: None,
            worst_upper_excess: f64::NEG_INFINITY,
        };
        for m in 0..self.segments() {
            let range = self.segment(m);
            let mut sum = 0.0;
            let mut last = 0.0;
            for t in range {
                last = schedule.alpha_at(t)?;
                sum += last;
            }
            let target = self.targets[m];
            let slack = 1e-12 * target.max(sum);
            let excess = (sum - target - last) / target;
            report.worst_upper_excess = report.worst_upper_excess.max(excess);
            let ok = sum + slack >= target && sum <= target + last + slack;
            if !ok && report.ok {
                report.ok = false;
                report.first_violation = Some(m);
            }
        }
        Ok(report)
    }

    /// `max_{m in [from, to)} sup_{t >= t_m} alpha_t / T_m^2`, with the
    /// supremum taken over the skeleton's horizon.
    pub fn lr_bound_constant(&self, schedule: &Schedule, from: usize, to: usize) -> Result<f64> {
        let to = to.min(self.segments());
        if from >= to {
            return Err(Error::Argument(format!("empty segment range {from}..{to}")));
        }
        let end = *self.anchors.last().unwrap_or(&0);
        let monotone = !matches!(schedule, Schedule::Table { .. });
        let mut best = 0.0f64;
        for m in from..to {
            let start = self.anchors[m];
            let sup = if monotone {
                schedule.alpha_at(start)?
            } else {
                let mut s = 0.0f64;
                for t in start..end {
                    s = s.max(schedule.alpha_at(t)?);
                }
                s
            };
            best = best.max(sup / (self.targets[m] * self.targets[m]));
        }
        Ok(best)
    }

    /// CSV with columns `m,t_m,T_m,alpha_bar_m`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("m,t_m,T_m,alpha_bar_m\n");
        for m in 0..self.segments() {
            out.push_str(&format!(
                "{},{},{:.16e},{:.16e}\n",
                m, self.anchors[m], self.targets[m], self.realized[m]
            ));
        }
        out
    }
}

/// Builds anchors for arbitrary targets: `t_{m+1} = min{k : sum_{t_m}^{k-1} alpha_t >= T_m}`.
///
/// Segments that would end past `horizon` are dropped.
pub fn build_skeleton_with<F>(schedule: &Schedule, target: F, horizon: u64) -> Result<SkeletonTimescale>
where
    F: Fn(u64) -> f64,
{
    let horizon = match schedule.len() {
        Some(n) => horizon.min(n),
        None => horizon,
    };
    let mut anchors = vec![0u64];
    let mut targets = Vec::new();
    let mut realized = Vec::new();
    let mut t = 0u64;
    loop {
        let m = targets.len() as u64;
        let goal = target(m);
        if !(goal.is_finite() && goal > 0.0) {
            return Err(Error::Argument(format!("target T_{m} = {goal} is not positive")));
        }
        let mut acc = KahanSum::new();
        while acc.value() < goal && t < horizon {
            acc.add(schedule.alpha_at(t)?);
            t += 1;
        }
        if acc.value() < goal {
            if targets.is_empty() {
                return Err(Error::HorizonTooSmall {
                    horizon,
                    partial: acc.value(),
                    target: goal,
                });
            }
            break;
        }
        anchors.push(t);
        targets.push(goal);
        realized.push(acc.value());
    }
    Ok(SkeletonTimescale {
        anchors,
        targets,
        realized,
    })
}

/// Skeleton for an LR1/LR2 schedule under an admissible regime.
pub fn build_skeleton(schedule: &Schedule, regime: Regime, horizon: u64) -> Result<SkeletonTimescale> {
    regime.check_for(schedule)?;
    let c_alpha = schedule
        .c_alpha()
        .ok_or_else(|| Error::Config("schedule has no c_alpha".into()))?;
    build_skeleton_with(schedule, |m| skeleton_target(regime, c_alpha, m), horizon)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_closed_forms() {
        let s = Schedule::lr1(1.0, 1.0).unwrap();
        assert!((s.alpha_at(0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let s2 = Schedule::lr1(2.0, 1.0).unwrap();
        assert_eq!(s2.alpha_at(0).unwrap(), 2.0 * s.alpha_at(0).unwrap());
        let l = Schedule::lr2(1.0, 0.5).unwrap();
        let expect = 1.0 / (3.0 * 3f64.ln().sqrt());
        assert!((l.alpha_at(0).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn construction_rejects_out_of_range_exponents() {
        assert!(Schedule::lr1(1.0, 0.5).is_err());
        assert!(Schedule::lr1(1.0, 2.0 / 3.0).is_err());
        assert!(Schedule::lr1(1.0, 1.0).is_ok());
        assert!(Schedule::lr2(1.0, 1.0).is_err());
        assert!(Schedule::lr2(1.0, 0.0).is_err());
        assert!(Schedule::lr1(0.0, 0.8).is_err());
        assert!(Schedule::table(vec![0.1, 0.0]).is_err());
    }

    #[test]
    fn table_index_error() {
        let s = Schedule::table(vec![0.1; 3]).unwrap();
        assert!(matches!(s.alpha_at(3), Err(Error::Index { index: 3, len: 3 })));
    }

    #[test]
    fn strictly_decreasing_and_positive() {
        for s in [Schedule::lr1(1.5, 0.8).unwrap(), Schedule::lr2(2.0, 0.5).unwrap()] {
            let mut prev = f64::INFINITY;
            for t in (0..1_000_000).step_by(997) {
                let a = s.alpha_at(t).unwrap();
                assert!(a > 0.0 && a < prev);
                prev = a;
            }
        }
    }

    #[test]
    fn segment_sum_basics() {
        let s = Schedule::table(vec![0.1; 10]).unwrap();
        assert_eq!(s.segment_sum(4, 4).unwrap(), 0.0);
        assert!((s.segment_sum(0, 5).unwrap() - 0.5).abs() < 1e-15);
        assert!(s.segment_sum(5, 4).is_err());
        let l = Schedule::lr1(1.0, 0.9).unwrap();
        let whole = l.segment_sum(0, 1000).unwrap();
        let split = l.segment_sum(0, 377).unwrap() + l.segment_sum(377, 1000).unwrap();
        assert!((whole - split).abs() < 1e-13);
    }

    #[test]
    fn targets() {
        let r = Regime { nu1: 0.0, nu2: 1.0 };
        assert!((skeleton_target(r, 1.0, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!(skeleton_target(r, 2.5, 4) < skeleton_target(r, 2.5, 3));
        let r = Regime { nu1: 0.5, nu2: 1.0 };
        assert!((skeleton_target(r, 1.0, 0) - 3f64.ln().sqrt() / 3.0).abs() < 1e-15);
    }

    #[test]
    fn regime_rows() {
        let r = select_regime(ScheduleKind::Lr2, 0.5, None, None).unwrap();
        assert_eq!(r, Regime { nu1: 0.0, nu2: 1.0 });
        let r = select_regime(ScheduleKind::Lr1, 0.8, None, None).unwrap();
        assert_eq!(r.nu1, 0.0);
        assert!((r.nu2 - 7.0 / 12.0).abs() < 1e-15);
        assert!(select_regime(ScheduleKind::Lr1, 1.0, None, None).is_err());
        let r = select_regime(ScheduleKind::Lr1, 1.0, Some(0.5), None).unwrap();
        assert_eq!(r, Regime { nu1: 0.5, nu2: 1.0 });
        assert!(select_regime(ScheduleKind::Lr1, 1.0, Some(1.0), None).is_err());
        assert!(select_regime(ScheduleKind::Lr1, 0.8, None, Some(0.7)).is_err());
        assert!(select_regime(ScheduleKind::Lr1, 0.5, None, None).is_err());
        assert!(select_regime(ScheduleKind::Table, 0.5, None, None).is_err());
    }

    /// Direct scan of the `min` definition, independent of the builder loop.
    fn brute_anchor(alpha: &dyn Fn(u64) -> f64, start: u64, target: f64) -> u64 {
        (start + 1..)
            .find(|&k| (start..k).map(alpha).sum::<f64>() >= target)
            .unwrap()
    }

    #[test]
    fn constant_table_anchor() {
        let s = Schedule::table(vec![0.1; 100]).unwrap();
        let sk = build_skeleton_with(&s, |_| 0.25, 100).unwrap();
        assert_eq!(sk.anchors[1], brute_anchor(&|_| 0.1, 0, 0.25));
        assert_eq!(sk.anchors[1], 3);
        assert!((sk.realized[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn single_step_segments() {
        let s = Schedule::table(vec![0.5; 20]).unwrap();
        let sk = build_skeleton_with(&s, |_| 0.25, 20).unwrap();
        assert_eq!(sk.segments(), 20);
        for m in 0..sk.segments() {
            assert_eq!(sk.anchors[m + 1], sk.anchors[m] + 1);
            assert_eq!(sk.realized[m], 0.5);
        }
    }

    #[test]
    fn horizon_too_small_reports_partial_sum() {
        let s = Schedule::table(vec![0.1; 5]).unwrap();
        match build_skeleton_with(&s, |_| 1.0, 5) {
            Err(Error::HorizonTooSmall { partial, .. }) => assert!((partial - 0.5).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lr2_brackets_hold_on_long_horizon() {
        let s = Schedule::lr2(2.0, 0.5).unwrap();
        let r = select_regime(ScheduleKind::Lr2, 0.5, None, None).unwrap();
        let sk = build_skeleton(&s, r, 1_000_000).unwrap();
        assert!(sk.segments() > 100);
        let rep = sk.check_brackets(&s).unwrap();
        assert!(rep.ok, "{rep:?}");
        // spot-check anchors against the brute-force min definition
        let alpha = |t: u64| s.alpha_at(t).unwrap();
        for m in [0usize, 1, 5, 17] {
            assert_eq!(sk.anchors[m + 1], brute_anchor(&alpha, sk.anchors[m], sk.targets[m]));
        }
    }

    #[test]
    fn skeleton_rejects_inadmissible_regime() {
        let s = Schedule::lr1(1.0, 0.8).unwrap();
        assert!(build_skeleton(&s, Regime { nu1: 0.0, nu2: 1.0 }, 1000).is_err());
    }

    #[test]
    fn segment_of_locates_times() {
        let s = Schedule::table(vec![0.1; 100]).unwrap();
        let sk = build_skeleton_with(&s, |_| 0.25, 100).unwrap();
        assert_eq!(sk.segment_of(0), Some(0));
        assert_eq!(sk.segment_of(2), Some(0));
        assert_eq!(sk.segment_of(3), Some(1));
        assert_eq!(sk.segment_of(10_000), None);
    }

    #[test]
    fn serde_validates() {
        let ok: Schedule = serde_json::from_str(r#"{"kind":"lr1","c_alpha":1.0,"nu":0.8}"#).unwrap();
        assert_eq!(ok, Schedule::lr1(1.0, 0.8).unwrap());
        let bad = serde_json::from_str::<Schedule>(r#"{"kind":"lr1","c_alpha":1.0,"nu":0.5}"#);
        assert!(bad.unwrap_err().to_string().contains("(2/3, 1]"));
        let round = serde_json::to_string(&ok).unwrap();
        assert_eq!(serde_json::from_str::<Schedule>(&round).unwrap(), ok);
    }
}
