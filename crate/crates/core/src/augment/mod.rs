//! Registration-based dataset expansion.
//!
//! Each template is registered with each partner; the resulting velocity `v`
//! warps the template forward by `exp(v)` and the partner backward by
//! `exp(−v)`, producing two labeled cases per pair.

mod case;
mod expand;
mod manifest;

pub use case::{validate_id, Direction, LabeledCase, Provenance};
pub use expand::{
    expand_dataset, plan_pairs, synthesize_pair, synthesize_pair_with, synthesized_id, AugmentConfig, AugmentSummary,
    PartnerRule, REFERENCE_THREE_TEMPLATE_COUNT,
};
pub use manifest::{load_dataset, save_dataset, Manifest, ManifestEntry, MANIFEST_FILE, MANIFEST_VERSION};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deform::{exp_velocity, smooth_random_velocity, warp_image, warp_labels, RegistrationConfig, VelocityField};
    use crate::error::Error;
    use crate::volume_io::{Dims, ImageVolume, LabelVolume};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn case(id: &str, dims: Dims, shift: usize) -> LabeledCase {
        let labels: Vec<u8> = (0..dims.len())
            .map(|i| {
                let [z, y, x] = dims.coords(i);
                if (1..dims.d - 1).contains(&z) && (1..dims.h - 1).contains(&y) && x > shift && x < dims.w - 1 {
                    1 + ((x - 1) * 3 / dims.w) as u8
                } else {
                    0
                }
            })
            .collect();
        let image = labels.iter().map(|&l| if l > 0 { 0.5 + 0.1 * l as f32 } else { 0.0 }).collect();
        LabeledCase::original(
            id,
            ImageVolume::new(dims, [1.0; 3], image).unwrap(),
            LabelVolume::new(dims, [1.0; 3], labels).unwrap(),
        )
        .unwrap()
    }

    fn cheap() -> AugmentConfig {
        AugmentConfig {
            registration: RegistrationConfig {
                pyramid_levels: 1,
                iterations_per_level: 1,
                ..Default::default()
            },
            partner_rule: PartnerRule::ExcludeSelf,
        }
    }

    #[test]
    fn zero_velocity_is_identity() {
        let dims = Dims::new(5, 6, 7);
        let (a, b) = (case("a", dims, 0), case("b", dims, 1));
        let (fa, fb) = synthesize_pair(&a, &b, &VelocityField::zeros(dims)).unwrap();
        assert_eq!((&fa.image, &fa.labels), (&a.image, &a.labels));
        assert_eq!((&fb.image, &fb.labels), (&b.image, &b.labels));
        assert_eq!(
            fb.provenance,
            Provenance::Synthesized {
                template_id: "a".into(),
                partner_id: "b".into(),
                direction: Direction::Backward
            }
        );
    }

    #[test]
    fn pipeline_matches_pieces() {
        let dims = Dims::new(8, 8, 8);
        let (a, b) = (case("a", dims, 0), case("b", dims, 2));
        let v = smooth_random_velocity(dims, 2.0, 1.5, &mut ChaCha8Rng::seed_from_u64(3));
        let (fa, fb) = synthesize_pair_with(&a, &b, &v, 6).unwrap();
        let phi = exp_velocity(&v, 6);
        let inv = exp_velocity(&v.negated(), 6);
        assert_eq!(fa.image, warp_image(&a.image, &phi).unwrap());
        assert_eq!(fa.labels, warp_labels(&a.labels, &phi).unwrap());
        assert_eq!(fb.image, warp_image(&b.image, &inv).unwrap());
        assert_eq!(fb.labels, warp_labels(&b.labels, &inv).unwrap());
        for (out, src) in [(&fa, &a), (&fb, &b)] {
            let allowed = src.labels.class_set();
            assert!(out.labels.class_set().iter().all(|c| allowed.contains(c)));
        }
    }

    #[test]
    fn rejects_mismatched_dims() {
        let a = case("a", Dims::new(5, 6, 7), 0);
        let b = case("b", Dims::new(5, 6, 8), 0);
        let v = VelocityField::zeros(Dims::new(5, 6, 7));
        assert!(matches!(synthesize_pair(&a, &b, &v), Err(Error::DimsMismatch(..))));
    }

    #[test]
    fn counts_and_ordering() {
        let dims = Dims::new(4, 4, 6);
        let pool: Vec<LabeledCase> = ["c", "a", "b"].iter().map(|id| case(id, dims, 0)).collect();
        let out = expand_dataset(&["b".to_string()], &pool, &cheap()).unwrap();
        let ids: Vec<&str> = out.iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, ["b__a__fwd", "b__a__bwd", "b__c__fwd", "b__c__bwd"]);

        let two = expand_dataset(&["a".to_string()], &pool[..2], &cheap()).unwrap();
        assert_eq!(two.len(), 2);

        let ids: Vec<String> = (0..87).map(|i| format!("case-{i:03}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let t1 = vec![ids[0].clone()];
        let t3 = ids[..3].to_vec();
        assert_eq!(2 * plan_pairs(&t1, &refs, PartnerRule::ExcludeSelf).unwrap().len(), 172);
        assert_eq!(2 * plan_pairs(&t3, &refs, PartnerRule::ExcludeSelf).unwrap().len(), 516);
        assert_eq!(2 * plan_pairs(&t3, &refs, PartnerRule::ExcludeTemplates).unwrap().len(), 504);
    }

    #[test]
    fn bad_inputs() {
        let dims = Dims::new(4, 4, 4);
        let pool = vec![case("a", dims, 0), case("b", dims, 0)];
        assert!(matches!(
            expand_dataset(&["z".to_string()], &pool, &cheap()),
            Err(Error::UnknownTemplate(_))
        ));
        assert!(matches!(
            expand_dataset(&["a".to_string()], &pool[..1], &cheap()),
            Err(Error::PoolTooSmall(1))
        ));
    }

    #[test]
    fn summary_surfaces_reference_discrepancy() {
        let s = AugmentSummary::new(3, 87, PartnerRule::ExcludeSelf, &[]);
        let text = s.to_string();
        assert!(text.contains("under exclude-templates: 504"));
        assert!(text.contains("510"));
        assert!(text.contains("exclude-self (516)"));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let dims = Dims::new(3, 4, 5);
        let (a, b) = (case("a", dims, 0), case("b", dims, 1));
        let (f, _) = synthesize_pair(&a, &b, &VelocityField::zeros(dims)).unwrap();
        let cases = vec![a, b, f];
        let path = save_dataset(dir.path(), &cases).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), cases);
        let m = Manifest::load(&path).unwrap();
        assert_eq!(Manifest::parse(&m.to_json()).unwrap(), m);
        assert!(Manifest::parse(r#"{"version":1,"cases":[],"extra":0}"#).is_err());
        let dup = r#"{"version":1,"cases":[
            {"id":"x","image":"i","labels":"l","provenance":{"kind":"original"}},
            {"id":"x","image":"i","labels":"l","provenance":{"kind":"original"}}]}"#;
        assert!(Manifest::parse(dup).is_err());
    }
}
