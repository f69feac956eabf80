//! Cross-bin ghost suppression.
//!
//! A strong target leaks through the ambiguity-function sidelobes into
//! neighbouring range bins. The leaked component has the same `q`, a `p`
//! shifted by `2πΔf(l - l')T_s`, and a smaller amplitude. Detections are
//! visited strongest first; every surviving anchor deletes the weaker
//! detections in other bins that satisfy both the frequency relation and
//! the amplitude-ratio gate.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::{wrap_angle, RadarConfig, TWO_PI};
use crate::error::{Error, Result};
use crate::nomp::{Detection, DetectionSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GhostRule {
    /// Offsets up to `l0` bins use `zeta1_db`, larger ones `zeta2_db`.
    pub l0: usize,
    pub zeta1_db: f64,
    pub zeta2_db: f64,
    pub eps_p: f64,
    pub eps_q: f64,
    pub max_bin_offset: usize,
}

impl GhostRule {
    /// `l0 = 3`, 2 dB / 15 dB gates, half-cell tolerances and the full
    /// ambiguity support `⌊T_p F_s⌋` as reach.
    pub fn from_config(config: &RadarConfig) -> Self {
        let (eps_p, eps_q) = config.half_cell();
        Self {
            l0: 3,
            zeta1_db: 2.0,
            zeta2_db: 15.0,
            eps_p,
            eps_q,
            max_bin_offset: (config.pulse_duration * config.sample_rate + 1e-9).floor() as usize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.zeta2_db >= self.zeta1_db && self.zeta1_db >= 0.0) {
            return Err(Error::InvalidArgument("ghost gates need zeta2 >= zeta1 >= 0".into()));
        }
        if !(self.eps_p > 0.0 && self.eps_q > 0.0) {
            return Err(Error::InvalidArgument("ghost tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Frequency relation between an anchor in bin `l` and a candidate in `l'`.
pub fn sidelobe_relation_holds(anchor: &Detection, cand: &Detection, rule: &GhostRule, config: &RadarConfig) -> bool {
    let dl = anchor.bin_l as f64 - cand.bin_l as f64;
    let shift = TWO_PI * config.freq_step * dl * config.sample_interval();
    let dp = wrap_angle(anchor.pq.p - shift - cand.pq.p);
    let dq = wrap_angle(anchor.pq.q - cand.pq.q);
    dp.abs() <= rule.eps_p && dq.abs() <= rule.eps_q
}

/// `20 log10(|γ_anchor| / |γ_cand|)`.
pub fn amplitude_ratio_db(anchor: &Detection, cand: &Detection) -> f64 {
    20.0 * (anchor.gamma.norm() / cand.gamma.norm()).log10()
}

/// The anchor must be at least `ζ1` dB stronger within `l0` bins and `ζ2`
/// dB beyond.
pub fn amplitude_gate(anchor: &Detection, cand: &Detection, rule: &GhostRule) -> bool {
    amplitude_ratio_db(anchor, cand) >= gate_for(anchor, cand, rule).1
}

fn gate_for(anchor: &Detection, cand: &Detection, rule: &GhostRule) -> (Branch, f64) {
    if anchor.bin_l.abs_diff(cand.bin_l) <= rule.l0 {
        (Branch::Near, rule.zeta1_db)
    } else {
        (Branch::Far, rule.zeta2_db)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Near,
    Far,
}

/// One deletion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditRow {
    pub anchor_bin: usize,
    pub anchor_p: f64,
    pub anchor_q: f64,
    pub anchor_abs_gamma: f64,
    pub deleted_bin: usize,
    pub deleted_p: f64,
    pub deleted_q: f64,
    pub deleted_abs_gamma: f64,
    pub bin_offset: i64,
    pub ratio_db: f64,
    pub branch: Branch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suppression {
    pub sets: Vec<DetectionSet>,
    pub audit: Vec<AuditRow>,
}

pub fn suppress_ghosts(per_bin: &[DetectionSet], rule: &GhostRule, config: &RadarConfig) -> Vec<DetectionSet> {
    suppress_ghosts_audited(per_bin, rule, config).sets
}

pub fn suppress_ghosts_audited(per_bin: &[DetectionSet], rule: &GhostRule, config: &RadarConfig) -> Suppression {
    let flat: Vec<(usize, usize, Detection)> = per_bin
        .iter()
        .enumerate()
        .flat_map(|(s, set)| set.detections.iter().enumerate().map(move |(k, d)| (s, k, *d)))
        .collect();
    let mut order: Vec<usize> = (0..flat.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&flat[a].2, &flat[b].2);
        y.gamma
            .norm()
            .total_cmp(&x.gamma.norm())
            .then(x.bin_l.cmp(&y.bin_l))
            .then(x.pq.p.total_cmp(&y.pq.p))
            .then(x.pq.q.total_cmp(&y.pq.q))
    });

    let mut alive = vec![true; flat.len()];
    let mut anchored = vec![false; flat.len()];
    let mut audit = Vec::new();
    for &a in &order {
        if !alive[a] {
            continue;
        }
        anchored[a] = true;
        let anchor = flat[a].2;
        for &c in &order {
            if !alive[c] || anchored[c] {
                continue;
            }
            let cand = flat[c].2;
            if cand.bin_l == anchor.bin_l || cand.bin_l.abs_diff(anchor.bin_l) > rule.max_bin_offset {
                continue;
            }
            if sidelobe_relation_holds(&anchor, &cand, rule, config) && amplitude_gate(&anchor, &cand, rule) {
                alive[c] = false;
                audit.push(AuditRow {
                    anchor_bin: anchor.bin_l,
                    anchor_p: anchor.pq.p,
                    anchor_q: anchor.pq.q,
                    anchor_abs_gamma: anchor.gamma.norm(),
                    deleted_bin: cand.bin_l,
                    deleted_p: cand.pq.p,
                    deleted_q: cand.pq.q,
                    deleted_abs_gamma: cand.gamma.norm(),
                    bin_offset: cand.bin_l as i64 - anchor.bin_l as i64,
                    ratio_db: amplitude_ratio_db(&anchor, &cand),
                    branch: gate_for(&anchor, &cand, rule).0,
                });
            }
        }
    }

    let mut sets: Vec<DetectionSet> = per_bin
        .iter()
        .map(|s| DetectionSet {
            bin_l: s.bin_l,
            detections: Vec::new(),
            residual_energy: s.residual_energy,
        })
        .collect();
    for (i, (s, _, d)) in flat.iter().enumerate() {
        if alive[i] {
            sets[*s].detections.push(*d);
        }
    }
    Suppression { sets, audit }
}

pub fn write_audit_csv<W: Write>(rows: &[AuditRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<csv>".into(),
        source,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{range_to_pq, DigitalFreqPair};
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn cfg() -> RadarConfig {
        RadarConfig::reference_profile()
    }

    fn det(bin_l: usize, p: f64, q: f64, mag: f64) -> Detection {
        Detection {
            gamma: Complex64::from_polar(mag, 0.3),
            pq: DigitalFreqPair::new(p, q),
            q_local: q,
            bin_l,
        }
    }

    fn set(bin_l: usize, d: Vec<Detection>) -> DetectionSet {
        DetectionSet { bin_l, detections: d, residual_energy: 1.0 }
    }

    #[test]
    fn default_rule() {
        let r = GhostRule::from_config(&cfg());
        assert_eq!((r.l0, r.max_bin_offset), (3, 800));
        assert_eq!((r.zeta1_db, r.zeta2_db), (2.0, 15.0));
        r.validate().unwrap();
        assert!(GhostRule { zeta1_db: 5.0, zeta2_db: 1.0, ..r }.validate().is_err());
        assert!(GhostRule { eps_q: 0.0, ..r }.validate().is_err());
    }

    #[test]
    fn relation_with_integer_step_product() {
        let c = cfg();
        let r = GhostRule::from_config(&c);
        let a = det(2082, 0.7, -1.2, 1.0);
        for l in [2075, 2081, 2083, 2300] {
            assert!(sidelobe_relation_holds(&a, &det(l, 0.7, -1.2, 0.1), &r, &c));
        }
        assert!(!sidelobe_relation_holds(&a, &det(2083, 0.7, -1.2 + 3.0 * r.eps_q, 0.1), &r, &c));
        assert!(!sidelobe_relation_holds(&a, &det(2083, 0.7 + 3.0 * r.eps_p, -1.2, 0.1), &r, &c));
        // the relation is checked on wrapped differences
        assert!(sidelobe_relation_holds(&det(10, 3.14, 3.14, 1.0), &det(11, -3.14, -3.14, 0.1), &r, &c));
    }

    #[test]
    fn far_targets_share_frequencies() {
        // targets 3 and 4 of the six-target scene sit 11 bins apart with
        // equal velocity; their ranges differ by an integer number of R_u
        let c = cfg();
        let r = GhostRule::from_config(&c);
        let t3 = range_to_pq(78_025.0, -8.0, 2082, &c);
        let t4 = range_to_pq(78_437.5, -8.0, 2093, &c);
        let a = det(2082, t3.p, t3.q, 1.0);
        let b = det(2093, t4.p, t4.q, 1.2);
        assert!(sidelobe_relation_holds(&a, &b, &r, &c));
        assert!(sidelobe_relation_holds(&b, &a, &r, &c));
    }

    #[test]
    fn gate_arithmetic() {
        let r = GhostRule::from_config(&cfg());
        assert!(!amplitude_gate(&det(1, 0.0, 0.0, 1.0), &det(2, 0.0, 0.0, 1.0), &r));
        assert!(amplitude_gate(&det(1, 0.0, 0.0, 10.0), &det(12, 0.0, 0.0, 1.0), &r));
        assert!(!amplitude_gate(&det(1, 0.0, 0.0, 10f64.sqrt()), &det(12, 0.0, 0.0, 1.0), &r));
        assert!(amplitude_gate(&det(1, 0.0, 0.0, 1.5), &det(4, 0.0, 0.0, 1.0), &r));
        assert!(!amplitude_gate(&det(1, 0.0, 0.0, 1.5), &det(5, 0.0, 0.0, 1.0), &r));
    }

    #[test]
    fn small_inputs() {
        let c = cfg();
        let r = GhostRule::from_config(&c);
        let one = vec![set(5, vec![det(5, 0.1, 0.2, 3.0)])];
        assert_eq!(suppress_ghosts(&one, &r, &c), one);
        let twins = vec![set(5, vec![det(5, 0.1, 0.2, 3.0)]), set(6, vec![det(6, 0.1, 0.2, 3.0)])];
        assert_eq!(suppress_ghosts(&twins, &r, &c), twins);
    }

    #[test]
    fn ghosts_are_removed_and_audited() {
        let c = cfg();
        let r = GhostRule::from_config(&c);
        let input = vec![
            set(100, vec![det(100, 0.5, 1.0, 0.2), det(100, -1.0, 2.0, 0.5)]),
            set(101, vec![det(101, 0.5, 1.0, 10.0)]),
            set(102, vec![det(102, 0.5, 1.0, 1.0)]),
            set(120, vec![det(120, 0.5, 1.0, 1.0), det(120, 0.5, 1.0 + 0.2, 1.0)]),
        ];
        let out = suppress_ghosts_audited(&input, &r, &c);
        let survivors: Vec<_> = out.sets.iter().flat_map(|s| s.detections.iter().copied()).collect();
        assert_eq!(survivors.len(), 3);
        assert!(survivors.contains(&input[1].detections[0]));
        assert!(survivors.contains(&input[0].detections[1]));
        assert!(survivors.contains(&input[3].detections[1]));
        assert_eq!(out.audit.len(), 3);
        assert!(out.audit.iter().all(|a| a.anchor_bin == 101));
        assert_eq!(out.audit.iter().filter(|a| a.branch == Branch::Far).count(), 1);

        let mut buf = Vec::new();
        write_audit_csv(&out.audit, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("anchor_bin,anchor_p"));
        assert_eq!(text.lines().count(), 4);
    }

    fn scene(raw: &[(usize, f64, f64, f64)]) -> Vec<DetectionSet> {
        let mut bins: Vec<usize> = raw.iter().map(|r| r.0).collect();
        bins.sort();
        bins.dedup();
        bins.iter()
            .map(|&b| set(b, raw.iter().filter(|r| r.0 == b).map(|r| det(r.0, r.1, r.2, r.3)).collect()))
            .collect()
    }

    fn survivors(sets: &[DetectionSet]) -> Vec<(usize, u64, u64, u64)> {
        let mut v: Vec<_> = sets
            .iter()
            .flat_map(|s| s.detections.iter())
            .map(|d| (d.bin_l, d.pq.p.to_bits(), d.pq.q.to_bits(), d.gamma.norm().to_bits()))
            .collect();
        v.sort();
        v
    }

    fn raw_strategy() -> impl Strategy<Value = Vec<(usize, f64, f64, f64)>> {
        // few distinct frequencies so relations actually fire
        prop::collection::vec(
            (0usize..12, 0usize..3, 0usize..3, 0.05f64..10.0).prop_map(|(b, i, j, m)| {
                (1000 + b, -1.0 + 0.02 * i as f64, 0.5 + 0.01 * j as f64, m)
            }),
            0..25,
        )
    }

    proptest! {
        #[test]
        fn idempotent_and_subset(raw in raw_strategy()) {
            let c = cfg();
            let r = GhostRule::from_config(&c);
            let input = scene(&raw);
            let once = suppress_ghosts(&input, &r, &c);
            let twice = suppress_ghosts(&once, &r, &c);
            prop_assert_eq!(&once, &twice);
            let all = survivors(&input);
            for s in survivors(&once) {
                prop_assert!(all.contains(&s));
            }
        }

        #[test]
        fn input_order_does_not_matter(raw in raw_strategy(), rot in 0usize..10) {
            let c = cfg();
            let r = GhostRule::from_config(&c);
            let a = scene(&raw);
            let mut b: Vec<DetectionSet> = a.iter().rev().cloned().collect();
            for s in b.iter_mut() {
                let n = s.detections.len();
                if n > 0 {
                    s.detections.rotate_left(rot % n);
                }
            }
            prop_assert_eq!(survivors(&suppress_ghosts(&a, &r, &c)), survivors(&suppress_ghosts(&b, &r, &c)));
        }
    }
}
