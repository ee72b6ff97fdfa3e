use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::groups::{GroupKey, GroupSummary, ScoreGroup};
use super::inference::{cohens_d, holm_correct, mean, sample_variance, welch_test};
use super::StatsError;
use crate::battery::MarkerSignature;

/// One marker group compared against the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasFinding {
    pub group_key: GroupKey,
    pub baseline_key: GroupKey,
    pub n: usize,
    /// Group mean minus baseline mean.
    pub delta: f64,
    pub t_statistic: Option<f64>,
    pub df: Option<f64>,
    pub p_value: Option<f64>,
    pub p_adjusted: Option<f64>,
    pub cohens_d: Option<f64>,
    pub significant: bool,
    /// Why a statistic is absent, when one is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Tests every non-baseline group against the baseline, Holm-corrects the
/// whole family, and sorts by delta (most negative first).
///
/// Groups that cannot be tested (fewer than two samples, or zero variance
/// on both sides with different means) keep their delta, carry a note and
/// stay out of the correction family.
pub fn bias_findings(
    groups: &[ScoreGroup],
    baseline_key: &GroupKey,
    alpha_level: f64,
) -> Result<Vec<BiasFinding>, StatsError> {
    let baseline = groups
        .iter()
        .find(|g| &g.key == baseline_key)
        .ok_or_else(|| StatsError::MissingBaseline(baseline_key.to_string()))?;
    if baseline.scores.len() < 2 {
        return Err(StatsError::SmallBaseline {
            key: baseline_key.to_string(),
            n: baseline.scores.len(),
        });
    }
    let base_mean = mean(&baseline.scores);

    let mut findings: Vec<BiasFinding> = groups
        .iter()
        .filter(|g| &g.key != baseline_key && !g.scores.is_empty())
        .map(|g| {
            let delta = mean(&g.scores) - base_mean;
            let mut finding = BiasFinding {
                group_key: g.key.clone(),
                baseline_key: baseline_key.clone(),
                n: g.scores.len(),
                delta,
                t_statistic: None,
                df: None,
                p_value: None,
                p_adjusted: None,
                cohens_d: cohens_d(&g.scores, &baseline.scores).ok(),
                significant: false,
                note: None,
            };
            match welch_test(&g.scores, &baseline.scores) {
                Ok(w) => {
                    finding.t_statistic = Some(w.t);
                    finding.df = Some(w.df);
                    finding.p_value = Some(w.p);
                }
                Err(e) => finding.note = Some(e.to_string()),
            }
            finding
        })
        .collect();

    let family: Vec<usize> = (0..findings.len())
        .filter(|&i| findings[i].p_value.is_some())
        .collect();
    let raw: Vec<f64> = family
        .iter()
        .map(|&i| findings[i].p_value.unwrap())
        .collect();
    let adjusted = holm_correct(&raw)?;
    for (&i, adj) in family.iter().zip(adjusted) {
        findings[i].p_adjusted = Some(adj);
        findings[i].significant = adj < alpha_level;
    }

    findings.sort_by(|a, b| {
        a.delta
            .total_cmp(&b.delta)
            .then_with(|| a.group_key.cmp(&b.group_key))
    });
    Ok(findings)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: 1000,
            seed: 42,
        }
    }
}

/// Observed mean of an intersectional group against the additive prediction
/// from its single-marker groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionResidual {
    pub group_key: GroupKey,
    /// Markers beyond the baseline prompt (gender noun, religion, disability).
    pub markers: usize,
    pub observed_mean: f64,
    pub predicted_mean: f64,
    pub residual: f64,
    /// Bootstrap standard error of the residual.
    pub residual_se: f64,
}

/// The single-marker signatures whose deltas predict `signature` additively.
fn constituents(signature: &MarkerSignature, baseline: &MarkerSignature) -> Vec<MarkerSignature> {
    let mut out = Vec::new();
    if signature.noun != baseline.noun {
        out.push(MarkerSignature::bare(&signature.noun));
    }
    if let Some(r) = &signature.religion {
        out.push(MarkerSignature::new(&baseline.noun, Some(r), None));
    }
    if let Some(d) = &signature.disability {
        out.push(MarkerSignature::new(&baseline.noun, None, Some(d)));
    }
    out
}

fn group_seed(seed: u64, key: &GroupKey) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.to_string().as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn resampled_mean(xs: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    let n = xs.len();
    (0..n).map(|_| xs[rng.random_range(0..n)]).sum::<f64>() / n as f64
}

/// Residual `observed - (baseline + sum of single-marker deltas)` for every
/// marked signature group, with a seeded bootstrap standard error.
///
/// Single-marker groups get residual and SE of exactly zero. Each group's
/// bootstrap stream is seeded from `(seed, group_key)`, so results do not
/// depend on evaluation order.
pub fn interaction_residuals(
    groups: &[ScoreGroup],
    baseline: &MarkerSignature,
    bootstrap: &BootstrapConfig,
) -> Result<Vec<InteractionResidual>, StatsError> {
    let baseline_key = GroupKey::Signature(baseline.clone());
    let find = |sig: &MarkerSignature| {
        groups
            .iter()
            .find(|g| g.key.signature() == Some(sig) && !g.scores.is_empty())
    };
    let base =
        find(baseline).ok_or_else(|| StatsError::MissingBaseline(baseline_key.to_string()))?;
    let base_mean = mean(&base.scores);

    let mut out = Vec::new();
    for group in groups {
        let Some(signature) = group.key.signature() else {
            continue;
        };
        if signature == baseline || group.scores.is_empty() {
            continue;
        }
        let parts = constituents(signature, baseline);
        let observed = mean(&group.scores);
        if parts.len() == 1 {
            out.push(InteractionResidual {
                group_key: group.key.clone(),
                markers: 1,
                observed_mean: observed,
                predicted_mean: observed,
                residual: 0.0,
                residual_se: 0.0,
            });
            continue;
        }
        let singles = parts
            .iter()
            .map(|p| {
                find(p).ok_or_else(|| StatsError::MissingConstituent {
                    group: group.key.to_string(),
                    missing: p.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let predicted = base_mean
            + singles
                .iter()
                .map(|s| mean(&s.scores) - base_mean)
                .sum::<f64>();

        let mut rng = ChaCha8Rng::seed_from_u64(group_seed(bootstrap.seed, &group.key));
        let replicates: Vec<f64> = (0..bootstrap.resamples)
            .map(|_| {
                let g = resampled_mean(&group.scores, &mut rng);
                let b = resampled_mean(&base.scores, &mut rng);
                let pred = b + singles
                    .iter()
                    .map(|s| resampled_mean(&s.scores, &mut rng) - b)
                    .sum::<f64>();
                g - pred
            })
            .collect();

        out.push(InteractionResidual {
            group_key: group.key.clone(),
            markers: parts.len(),
            observed_mean: observed,
            predicted_mean: predicted,
            residual: observed - predicted,
            residual_se: sample_variance(&replicates).sqrt(),
        });
    }
    out.sort_by(|a, b| {
        a.residual
            .total_cmp(&b.residual)
            .then_with(|| a.group_key.cmp(&b.group_key))
    });
    Ok(out)
}

/// Highest- and lowest-scoring signature groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPools {
    pub high: Vec<GroupKey>,
    pub low: Vec<GroupKey>,
}

/// Top-`q` and bottom-`q` signature groups by mean; ties go to the
/// lexicographically smaller key. Rollup summaries are ignored.
pub fn rank_prompts(summaries: &[GroupSummary], q: usize) -> Result<PromptPools, StatsError> {
    let mut sigs: Vec<&GroupSummary> = summaries
        .iter()
        .filter(|s| s.group_key.signature().is_some())
        .collect();
    if q == 0 || 2 * q > sigs.len() {
        return Err(StatsError::InvalidQ {
            q,
            groups: sigs.len(),
        });
    }
    sigs.sort_by(|a, b| {
        b.mean
            .total_cmp(&a.mean)
            .then_with(|| a.group_key.cmp(&b.group_key))
    });
    let high = sigs[..q].iter().map(|s| s.group_key.clone()).collect();
    sigs.sort_by(|a, b| {
        a.mean
            .total_cmp(&b.mean)
            .then_with(|| a.group_key.cmp(&b.group_key))
    });
    let low = sigs[..q].iter().map(|s| s.group_key.clone()).collect();
    Ok(PromptPools { high, low })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery::Category;

    fn sig_key(s: &str) -> GroupKey {
        s.parse().unwrap()
    }

    fn group(key: &str, scores: &[f64]) -> ScoreGroup {
        ScoreGroup::new(sig_key(key), scores.to_vec())
    }

    #[test]
    fn constant_groups_never_significant() {
        let groups = vec![
            group("person/-/-", &[0.5; 10]),
            group("man/-/-", &[0.5; 10]),
            group("woman/-/-", &[0.5; 10]),
        ];
        let f = bias_findings(&groups, &sig_key("person/-/-"), 0.05).unwrap();
        assert_eq!(f.len(), 2);
        assert!(f.iter().all(|x| !x.significant && x.delta == 0.0));
        assert!(f.iter().all(|x| x.p_value == Some(1.0)));
    }

    #[test]
    fn identical_samples_give_zero_delta() {
        let xs = [0.2, 0.4, 0.6, 0.5];
        let groups = vec![group("person/-/-", &xs), group("man/-/-", &xs)];
        let f = bias_findings(&groups, &sig_key("person/-/-"), 0.05).unwrap();
        assert_eq!(f[0].delta, 0.0);
        assert_eq!(f[0].p_value, Some(1.0));
        assert_eq!(f[0].cohens_d, Some(0.0));
    }

    #[test]
    fn findings_sorted_and_adjusted() {
        let groups = vec![
            group("person/-/-", &[0.5, 0.55, 0.45, 0.52, 0.48]),
            group("man/-/-", &[0.2, 0.25, 0.15, 0.22, 0.18]),
            group("woman/-/-", &[0.4, 0.45, 0.35, 0.42, 0.38]),
            group("transgender_person/-/-", &[0.6, 0.65, 0.55, 0.62, 0.58]),
        ];
        let f = bias_findings(&groups, &sig_key("person/-/-"), 0.05).unwrap();
        let keys: Vec<String> = f.iter().map(|x| x.group_key.to_string()).collect();
        assert_eq!(keys, ["man/-/-", "woman/-/-", "transgender_person/-/-"]);
        for x in &f {
            assert!(x.p_adjusted.unwrap() >= x.p_value.unwrap());
            assert_eq!(x.significant, x.p_adjusted.unwrap() < 0.05);
        }
        assert!(f[0].significant);
    }

    #[test]
    fn non_testable_groups_are_flagged() {
        let groups = vec![
            group("person/-/-", &[0.5, 0.5]),
            group("man/-/-", &[0.3, 0.3]),
            group("woman/-/-", &[0.3]),
        ];
        let f = bias_findings(&groups, &sig_key("person/-/-"), 0.05).unwrap();
        assert!(f
            .iter()
            .all(|x| x.p_value.is_none() && x.note.is_some() && !x.significant));
    }

    #[test]
    fn baseline_errors() {
        let groups = vec![group("man/-/-", &[0.3, 0.4])];
        assert!(matches!(
            bias_findings(&groups, &sig_key("person/-/-"), 0.05),
            Err(StatsError::MissingBaseline(_))
        ));
        let groups = vec![group("person/-/-", &[0.3]), group("man/-/-", &[0.3, 0.4])];
        assert!(matches!(
            bias_findings(&groups, &sig_key("person/-/-"), 0.05),
            Err(StatsError::SmallBaseline { .. })
        ));
    }

    #[test]
    fn rollups_test_against_signature_baseline() {
        let groups = vec![
            group("person/-/-", &[0.5, 0.6, 0.4]),
            ScoreGroup::new(
                GroupKey::marker(Category::Religion, "muslim"),
                vec![0.2, 0.3, 0.25],
            ),
        ];
        let f = bias_findings(&groups, &sig_key("person/-/-"), 0.05).unwrap();
        assert_eq!(f.len(), 1);
        assert!(f[0].delta < 0.0);
    }

    #[test]
    fn single_marker_residual_is_zero() {
        let groups = vec![
            group("person/-/-", &[0.5, 0.6]),
            group("person/muslim/-", &[0.1, 0.33]),
        ];
        let r = interaction_residuals(
            &groups,
            &MarkerSignature::bare("person"),
            &BootstrapConfig::default(),
        )
        .unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(
            (r[0].residual, r[0].residual_se, r[0].markers),
            (0.0, 0.0, 1)
        );
    }

    #[test]
    fn additive_groups_have_no_residual() {
        let base = 0.6;
        let noise = [0.01, -0.02, 0.03, 0.0, -0.01];
        let mk = |key: &str, m: f64| group(key, &noise.map(|e| m + e));
        let groups = vec![
            mk("person/-/-", base),
            mk("man/-/-", base - 0.05),
            mk("person/muslim/-", base - 0.1),
            mk("person/-/blind", base - 0.07),
            mk("man/muslim/-", base - 0.15),
            mk("man/muslim/blind", base - 0.22),
        ];
        let r = interaction_residuals(
            &groups,
            &MarkerSignature::bare("person"),
            &BootstrapConfig::default(),
        )
        .unwrap();
        assert_eq!(r.len(), 5);
        assert!(r.iter().all(|x| x.residual.abs() < 1e-9));
    }

    #[test]
    fn missing_constituent() {
        let groups = vec![
            group("person/-/-", &[0.5, 0.6]),
            group("man/muslim/-", &[0.1, 0.2]),
        ];
        let err = interaction_residuals(
            &groups,
            &MarkerSignature::bare("person"),
            &BootstrapConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, StatsError::MissingConstituent { .. }));
    }

    #[test]
    fn bootstrap_is_seeded() {
        let groups = vec![
            group("person/-/-", &[0.5, 0.6, 0.55]),
            group("man/-/-", &[0.4, 0.5, 0.45]),
            group("person/hindu/-", &[0.3, 0.6, 0.55]),
            group("man/hindu/-", &[0.2, 0.6, 0.3]),
        ];
        let cfg = BootstrapConfig {
            resamples: 200,
            seed: 7,
        };
        let a = interaction_residuals(&groups, &MarkerSignature::bare("person"), &cfg).unwrap();
        let b = interaction_residuals(&groups, &MarkerSignature::bare("person"), &cfg).unwrap();
        assert_eq!(a, b);
        let pair = a.iter().find(|x| x.markers == 2).unwrap();
        assert!(pair.residual_se > 0.0);
    }

    #[test]
    fn ranking() {
        let s = |k: &str, m: f64| GroupSummary {
            group_key: sig_key(k),
            n: 10,
            mean: m,
            sd: 0.1,
        };
        let sums = vec![s("a/-/-", 0.3), s("b/-/-", 0.5), s("c/-/-", 0.7)];
        let pools = rank_prompts(&sums, 1).unwrap();
        assert_eq!(pools.high, vec![sig_key("c/-/-")]);
        assert_eq!(pools.low, vec![sig_key("a/-/-")]);

        let tied = vec![
            s("b/-/-", 0.5),
            s("a/-/-", 0.5),
            s("c/-/-", 0.5),
            s("d/-/-", 0.5),
        ];
        let pools = rank_prompts(&tied, 1).unwrap();
        assert_eq!(pools.high, vec![sig_key("a/-/-")]);
        assert_eq!(pools.low, vec![sig_key("a/-/-")]);

        assert!(matches!(
            rank_prompts(&sums, 2),
            Err(StatsError::InvalidQ { .. })
        ));
        assert!(matches!(
            rank_prompts(&sums, 0),
            Err(StatsError::InvalidQ { .. })
        ));
    }
}
