use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use super::record::ClipRecord;
use crate::{Error, Result};

/// A scalar metric slot of a [`ClipRecord`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    LumaMean,
    Mcv,
    Hcpr,
    AlignmentLoss,
    VMean,
    AMean,
    KappaMean,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::LumaMean,
        Metric::Mcv,
        Metric::Hcpr,
        Metric::AlignmentLoss,
        Metric::VMean,
        Metric::AMean,
        Metric::KappaMean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::LumaMean => "luma_mean",
            Metric::Mcv => "mcv",
            Metric::Hcpr => "hcpr",
            Metric::AlignmentLoss => "alignment_loss",
            Metric::VMean => "v_mean",
            Metric::AMean => "a_mean",
            Metric::KappaMean => "kappa_mean",
        }
    }

    pub fn get(self, rec: &ClipRecord) -> Option<f64> {
        let m = &rec.metrics;
        match self {
            Metric::LumaMean => m.luma_mean,
            Metric::Mcv => m.mcv,
            Metric::Hcpr => m.hcpr,
            Metric::AlignmentLoss => m.alignment_loss,
            Metric::VMean => m.cs.map(|c| c.v_mean),
            Metric::AMean => m.cs.map(|c| c.a_mean),
            Metric::KappaMean => m.cs.map(|c| c.kappa_mean),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| Error::invalid(format!("unknown metric '{s}'")))
    }
}

/// Number of clips kept by a top-`r`% selection over `n` clips, rounded up.
pub fn top_r_count(n: usize, r: f64) -> usize {
    // Multiply before dividing so whole-number products stay exact.
    ((r * n as f64) / 100.0).ceil().min(n as f64) as usize
}

/// Ids of the `⌈r/100·N⌉` records with the highest `metric`, ties going to
/// the lexicographically smaller id.
pub fn select_top_r(records: &[ClipRecord], metric: Metric, r: f64) -> Result<BTreeSet<String>> {
    if !(r > 0.0 && r <= 100.0) {
        return Err(Error::invalid(format!("r must lie in (0, 100], got {r}")));
    }
    let mut scored = records
        .iter()
        .map(|rec| {
            metric
                .get(rec)
                .map(|v| (v, rec.id.as_str()))
                .ok_or_else(|| Error::invalid(format!("clip '{}' has no {metric}", rec.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    Ok(scored.into_iter().take(top_r_count(records.len(), r)).map(|(_, id)| id.to_string()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn with_mcv(values: &[(&str, f64)]) -> Vec<ClipRecord> {
        values
            .iter()
            .map(|&(id, v)| {
                let mut r = ClipRecord::new(id, "test", 10);
                r.metrics.mcv = Some(v);
                r
            })
            .collect()
    }

    fn ids(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn examples() {
        let recs = with_mcv(&[("a", 1.0), ("b", 2.0), ("c", 3.0), ("d", 4.0)]);
        assert_eq!(select_top_r(&recs, Metric::Mcv, 50.0).unwrap(), ids(&["c", "d"]));
        assert_eq!(select_top_r(&recs, Metric::Mcv, 100.0).unwrap().len(), 4);
        assert_eq!(select_top_r(&recs[..3], Metric::Mcv, 50.0).unwrap().len(), 2);
        assert_eq!(select_top_r(&recs, Metric::Mcv, 0.1).unwrap(), ids(&["d"]));
        assert!(select_top_r(&recs, Metric::Hcpr, 50.0).is_err());
        assert!(select_top_r(&recs, Metric::Mcv, 0.0).is_err());
        assert!(select_top_r(&[], Metric::Mcv, 30.0).unwrap().is_empty());
    }

    #[test]
    fn ties_prefer_smaller_id() {
        let recs = with_mcv(&[("b", 1.0), ("c", 1.0), ("a", 1.0)]);
        assert_eq!(select_top_r(&recs, Metric::Mcv, 60.0).unwrap(), ids(&["a", "b"]));
    }

    #[test]
    fn count_rule() {
        assert_eq!(top_r_count(10, 30.0), 3);
        assert_eq!(top_r_count(3, 50.0), 2);
        assert_eq!(top_r_count(7, 100.0), 7);
        assert_eq!(top_r_count(200, 30.0), 60);
        assert_eq!(top_r_count(0, 30.0), 0);
    }

    #[test]
    fn metric_names_roundtrip() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
        assert!("brightness".parse::<Metric>().is_err());
    }

    proptest! {
        #[test]
        fn permutation_invariant(
            values in prop::collection::vec(0u8..5, 1..30),
            r in 1.0f64..100.0,
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let named: Vec<(String, f64)> =
                values.iter().enumerate().map(|(i, &v)| (format!("clip{i:03}"), v as f64)).collect();
            let pairs: Vec<(&str, f64)> = named.iter().map(|(s, v)| (s.as_str(), *v)).collect();
            let recs = with_mcv(&pairs);
            let mut shuffled = recs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = select_top_r(&recs, Metric::Mcv, r).unwrap();
            prop_assert_eq!(a.len(), top_r_count(recs.len(), r));
            prop_assert_eq!(a, select_top_r(&shuffled, Metric::Mcv, r).unwrap());
        }
    }
}
