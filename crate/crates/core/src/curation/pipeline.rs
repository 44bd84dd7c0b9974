use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{camera_smoothness, confidence_metrics, mean_luma, trajectory_from_tensor};
use super::record::{ClipMetrics, ClipRecord};
use super::select::{select_top_r, Metric};
use crate::numerics::load_tensor;
use crate::parallel::par_map;
use crate::sixd::io::load_ppm;
use crate::sixd::percentile;
use crate::{Error, Result};

/// How the MCV and HCPR top-r selections combine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combine {
    #[default]
    Intersection,
    Union,
}

/// Rejection reasons, one per stage, in the order stages run.
pub mod reason {
    pub const IO: &str = "io";
    pub const LUMA: &str = "luma";
    pub const ALIGNMENT: &str = "alignment";
    pub const SMOOTHNESS: &str = "smoothness";
    pub const CONFIDENCE: &str = "confidence";
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurationConfig {
    /// Inclusive `[min, max]` mean luma.
    pub luma_bounds: [f64; 2],
    /// HCPR confidence threshold.
    pub tau: f64,
    /// Percentage kept by each confidence selection.
    pub top_r: f64,
    /// Percentile of alignment loss above which clips are dropped.
    pub alignment_percentile: f64,
    pub velocity_percentile: f64,
    pub acceleration_percentile: f64,
    pub curvature_percentile: f64,
    pub epsilon: f64,
    pub combine: Combine,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            luma_bounds: [15.0, 240.0],
            tau: 1.5,
            top_r: 30.0,
            alignment_percentile: 90.0,
            velocity_percentile: 90.0,
            acceleration_percentile: 90.0,
            curvature_percentile: 90.0,
            epsilon: 1e-6,
            combine: Combine::Intersection,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.luma_bounds;
        if !(0.0 <= lo && lo < hi && hi <= 255.0) {
            return Err(Error::invalid(format!("luma bounds must satisfy 0 <= min < max <= 255, got [{lo}, {hi}]")));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.top_r > 0.0 && self.top_r <= 100.0) {
            return Err(Error::invalid(format!("r must lie in (0, 100], got {}", self.top_r)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        for (name, p) in [
            ("alignment_percentile", self.alignment_percentile),
            ("velocity_percentile", self.velocity_percentile),
            ("acceleration_percentile", self.acceleration_percentile),
            ("curvature_percentile", self.curvature_percentile),
        ] {
            if !(0.0..=100.0).contains(&p) {
                return Err(Error::invalid(format!("{name} must lie in [0, 100], got {p}")));
            }
        }
        Ok(())
    }
}

/// Fills metric slots from the clip's referenced files; ingested values
/// stay when no file is given.
pub fn measure_clip(rec: &ClipRecord, base: &Path, config: &CurationConfig) -> Result<ClipMetrics> {
    let mut m = rec.metrics.clone();
    let Some(files) = &rec.files else {
        return Ok(m);
    };
    if !files.frames.is_empty() {
        let mut total = 0.0;
        for f in &files.frames {
            let frame = load_ppm(base.join(f))?.map(|v| v * 255.0);
            total += mean_luma(&frame)?;
        }
        m.luma_mean = Some((total / files.frames.len() as f64).clamp(0.0, 255.0));
    }
    if let Some(c) = &files.confidence {
        let (mcv, hcpr) = confidence_metrics(&load_tensor(base.join(c))?, config.tau)?;
        m.mcv = Some(mcv);
        m.hcpr = Some(hcpr);
    }
    if let Some(t) = &files.trajectory {
        let path = trajectory_from_tensor(&load_tensor(base.join(t))?)?;
        m.cs = Some(camera_smoothness(&path, config.epsilon)?);
    }
    m.validate()?;
    Ok(m)
}

fn cap(values: impl Iterator<Item = f64>, pct: f64) -> f64 {
    let mut v: Vec<f64> = values.collect();
    percentile(&mut v, pct).unwrap_or(f64::INFINITY)
}

/// Runs the filtering stages (luma bounds, alignment-loss cap, smoothness
/// caps, top-r confidence) and returns every record sorted by id, each
/// rejected clip tagged with the first stage it failed. Percentile caps and
/// top-r counts are taken over the clips that reached that stage. The
/// output is a fixed point: curating it again returns it unchanged.
///
/// File paths in records resolve against `base`; a clip whose files cannot
/// be read or measured is rejected as `"io"`.
pub fn curate(records: &[ClipRecord], config: &CurationConfig, base: &Path, jobs: usize) -> Result<Vec<ClipRecord>> {
    config.validate()?;
    let mut out: Vec<ClipRecord> = records.to_vec();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = out.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::invalid(format!("duplicate clip id '{}'", w[0].id)));
    }
    let measured = par_map(out.len(), jobs, |i| measure_clip(&out[i], base, config));
    for (rec, m) in out.iter_mut().zip(measured) {
        rec.keep = true;
        rec.reason.clear();
        match m {
            Ok(m) => rec.metrics = m,
            Err(_) => rec.reject(reason::IO),
        }
    }

    let [lo, hi] = config.luma_bounds;
    reject_where(&mut out, reason::LUMA, |r| !r.metrics.luma_mean.is_some_and(|l| (lo..=hi).contains(&l)));

    reject_where(&mut out, reason::ALIGNMENT, |r| r.metrics.alignment_loss.is_none());
    let c = cap(survivors(&out).filter_map(|r| r.metrics.alignment_loss), config.alignment_percentile);
    reject_where(&mut out, reason::ALIGNMENT, |r| r.metrics.alignment_loss.is_some_and(|a| a > c));

    reject_where(&mut out, reason::SMOOTHNESS, |r| r.metrics.cs.is_none());
    let caps = [
        (Metric::VMean, config.velocity_percentile),
        (Metric::AMean, config.acceleration_percentile),
        (Metric::KappaMean, config.curvature_percentile),
    ]
    .map(|(m, p)| (m, cap(survivors(&out).filter_map(|r| m.get(r)), p)));
    reject_where(&mut out, reason::SMOOTHNESS, |r| caps.iter().any(|&(m, c)| m.get(r).is_some_and(|v| v > c)));

    reject_where(&mut out, reason::CONFIDENCE, |r| r.metrics.mcv.is_none() || r.metrics.hcpr.is_none());
    let pool: Vec<ClipRecord> = survivors(&out).cloned().collect();
    let by_mcv = select_top_r(&pool, Metric::Mcv, config.top_r)?;
    let by_hcpr = select_top_r(&pool, Metric::Hcpr, config.top_r)?;
    let chosen: BTreeSet<&String> = match config.combine {
        Combine::Intersection => by_mcv.intersection(&by_hcpr).collect(),
        Combine::Union => by_mcv.union(&by_hcpr).collect(),
    };
    reject_where(&mut out, reason::CONFIDENCE, |r| !chosen.contains(&r.id));
    Ok(out)
}

fn survivors(records: &[ClipRecord]) -> impl Iterator<Item = &ClipRecord> {
    records.iter().filter(|r| r.keep)
}

fn reject_where(records: &mut [ClipRecord], why: &str, fails: impl Fn(&ClipRecord) -> bool) {
    for r in records.iter_mut().filter(|r| r.keep) {
        if fails(r) {
            r.reject(why);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curation::metrics::Smoothness;
    use crate::curation::record::ClipFiles;
    use crate::numerics::{save_tensor, Tensor};
    use crate::sixd::io::save_ppm;
    use proptest::prelude::*;

    fn clip(id: &str, luma: f64, align: f64, v: f64, mcv: f64, hcpr: f64) -> ClipRecord {
        let mut r = ClipRecord::new(id, "synthetic", 16);
        r.metrics = ClipMetrics {
            luma_mean: Some(luma),
            mcv: Some(mcv),
            hcpr: Some(hcpr),
            alignment_loss: Some(align),
            cs: Some(Smoothness { v_mean: v, a_mean: v / 2.0, kappa_mean: v / 4.0 }),
        };
        r
    }

    fn kept(recs: &[ClipRecord]) -> Vec<&str> {
        recs.iter().filter(|r| r.keep).map(|r| r.id.as_str()).collect()
    }

    #[test]
    fn empty_manifest() {
        assert!(curate(&[], &CurationConfig::default(), Path::new("."), 1).unwrap().is_empty());
    }

    #[test]
    fn single_dark_clip_fails_luma() {
        let out = curate(&[clip("a", 3.0, 0.1, 0.1, 1.0, 0.5)], &CurationConfig::default(), Path::new("."), 1).unwrap();
        assert!(!out[0].keep);
        assert_eq!(out[0].reason, "luma");
    }

    #[test]
    fn stages_run_in_order() {
        let all_caps = CurationConfig { top_r: 50.0, alignment_percentile: 75.0, ..Default::default() };
        let recs = vec![
            clip("e", 100.0, 0.1, 0.1, 5.0, 0.9),
            clip("d", 250.0, 9.0, 9.0, 0.0, 0.0),
            clip("c", 100.0, 5.0, 0.1, 5.0, 0.9),
            clip("b", 100.0, 0.1, 0.1, 1.0, 0.1),
            clip("a", 100.0, 0.2, 0.2, 4.0, 0.8),
        ];
        let out = curate(&recs, &all_caps, Path::new("."), 2).unwrap();
        let ids: Vec<&str> = out.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c", "d", "e"]);
        let reasons: Vec<&str> = out.iter().map(|r| r.reason.as_str()).collect();
        // d fails everything but is tagged with the first stage. The velocity
        // cap over a, b, e is the 90th percentile of {0.1, 0.1, 0.2} = 0.18.
        assert_eq!(reasons, ["smoothness", "confidence", "alignment", "luma", ""]);
    }

    #[test]
    fn union_keeps_either_selection() {
        let recs = vec![
            clip("a", 100.0, 0.1, 0.1, 9.0, 0.1),
            clip("b", 100.0, 0.1, 0.1, 1.0, 0.9),
            clip("c", 100.0, 0.1, 0.1, 0.5, 0.05),
        ];
        let base = CurationConfig { top_r: 30.0, ..Default::default() };
        assert!(kept(&curate(&recs, &base, Path::new("."), 1).unwrap()).is_empty());
        let union = CurationConfig { combine: Combine::Union, ..base };
        assert_eq!(kept(&curate(&recs, &union, Path::new("."), 1).unwrap()), ["a", "b"]);
    }

    #[test]
    fn missing_metric_fails_its_stage() {
        let mut r = clip("a", 100.0, 0.1, 0.1, 1.0, 1.0);
        r.metrics.cs = None;
        let out = curate(&[r], &CurationConfig::default(), Path::new("."), 1).unwrap();
        assert_eq!(out[0].reason, "smoothness");
    }

    #[test]
    fn invalid_config_and_duplicates_abort() {
        let bad = CurationConfig { luma_bounds: [200.0, 100.0], ..Default::default() };
        assert!(curate(&[], &bad, Path::new("."), 1).is_err());
        assert!(CurationConfig { tau: 0.0, ..Default::default() }.validate().is_err());
        assert!(CurationConfig { top_r: 0.0, ..Default::default() }.validate().is_err());
        assert!(CurationConfig { epsilon: 0.0, ..Default::default() }.validate().is_err());
        let r = clip("a", 100.0, 0.1, 0.1, 1.0, 1.0);
        assert!(curate(&[r.clone(), r], &CurationConfig::default(), Path::new("."), 1).is_err());
    }

    #[test]
    fn metrics_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let gray = Tensor::full(&[4, 4, 3], 100.0 / 255.0).unwrap();
        save_ppm(dir.path().join("f0.ppm"), &gray).unwrap();
        save_tensor(dir.path().join("conf.tnsr"), &Tensor::new(vec![1, 2, 2], vec![0.5, 1.5, 2.5, 3.5]).unwrap())
            .unwrap();
        let traj = Tensor::new(vec![3, 3], vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        save_tensor(dir.path().join("traj.tnsr"), &traj).unwrap();

        let mut r = ClipRecord::new("a", "files", 1);
        r.metrics.alignment_loss = Some(0.2);
        r.files = Some(ClipFiles {
            frames: vec!["f0.ppm".into()],
            confidence: Some("conf.tnsr".into()),
            trajectory: Some("traj.tnsr".into()),
        });
        let mut broken = r.clone();
        broken.id = "b".into();
        broken.files.as_mut().unwrap().confidence = Some("missing.tnsr".into());

        let cfg = CurationConfig { tau: 2.0, ..Default::default() };
        let out = curate(&[broken, r], &cfg, dir.path(), 1).unwrap();
        let m = &out[0].metrics;
        assert!((m.luma_mean.unwrap() - 100.0).abs() < 1e-4);
        assert_eq!((m.mcv, m.hcpr), (Some(2.0), Some(0.5)));
        assert!((m.cs.unwrap().kappa_mean - 2.0 / (2.0 + 1e-6)).abs() < 1e-12);
        assert!(out[0].keep);
        assert_eq!(out[1].reason, "io");
    }

    fn arb_clip(i: usize) -> impl Strategy<Value = ClipRecord> {
        (0.0f64..255.0, 0.0f64..1.0, 0.0f64..1.0, 0u8..4, 0u8..4)
            .prop_map(move |(l, a, v, m, h)| clip(&format!("clip{i:03}"), l, a, v, m as f64, h as f64 / 4.0))
    }

    fn arb_manifest() -> impl Strategy<Value = Vec<ClipRecord>> {
        (0usize..40).prop_flat_map(|n| (0..n).map(arb_clip).collect::<Vec<_>>())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn curation_is_a_fixed_point(recs in arb_manifest(), r in 5.0f64..100.0) {
            let cfg = CurationConfig { top_r: r, ..Default::default() };
            let once = curate(&recs, &cfg, Path::new("."), 1).unwrap();
            prop_assert!(once.iter().all(|c| c.keep == c.reason.is_empty()));
            let twice = curate(&once, &cfg, Path::new("."), 3).unwrap();
            prop_assert_eq!(&once, &twice);
            let mut reversed = recs.clone();
            reversed.reverse();
            prop_assert_eq!(once, curate(&reversed, &cfg, Path::new("."), 2).unwrap());
        }
    }
}
