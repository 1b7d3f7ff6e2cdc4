use proptest::prelude::*;
use timbre_core::descriptors::spectral_centroid;
use timbre_core::latent::fit_pca;
use timbre_core::ratings::{mds, normalize_study, DissimilarityMatrix, RatingRecord};
use timbre_core::regularizer::{latent_neighbor_dist, reg_loss, target_neighbor_dist, TargetNormalization};

fn points(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.0f64..2.0, d), n)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Rotation about the z axis then the x axis, plus a shift.
fn rigid(p: &[f64], a: f64, b: f64, shift: &[f64]) -> Vec<f64> {
    let (ca, sa, cb, sb) = (a.cos(), a.sin(), b.cos(), b.sin());
    let r = [ca * p[0] - sa * p[1], sa * p[0] + ca * p[1], p[2]];
    let r = [r[0], cb * r[1] - sb * r[2], sb * r[1] + cb * r[2]];
    r.iter().zip(shift).map(|(v, s)| v + s).collect()
}

proptest! {
    #[test]
    fn latent_rows_are_distributions(z in points(5, 3)) {
        let d = latent_neighbor_dist(&z).unwrap();
        for (i, row) in d.rows.iter().enumerate() {
            prop_assert_eq!(row[i], 0.0);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn global_target_sums_to_one(t in points(6, 2)) {
        let d = target_neighbor_dist(&t, TargetNormalization::Global).unwrap();
        prop_assert!((d.total() - 1.0).abs() < 1e-12);
        for i in 0..6 {
            for j in 0..6 {
                prop_assert!((d.rows[i][j] - d.rows[j][i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn reg_loss_is_rigid_invariant(
        z in points(5, 3),
        t in points(5, 2),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        shift in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let moved: Vec<Vec<f64>> = z.iter().map(|p| rigid(p, a, b, &shift)).collect();
        let r0 = reg_loss(&z, &t, TargetNormalization::Global).unwrap();
        let r1 = reg_loss(&moved, &t, TargetNormalization::Global).unwrap();
        prop_assert!((r0 - r1).abs() < 1e-9 * r0.abs().max(1.0));
    }

    #[test]
    fn normalizations_differ_by_a_target_constant(z1 in points(5, 3), z2 in points(5, 3), t in points(5, 2)) {
        let gap = |z: &[Vec<f64>]| {
            reg_loss(z, &t, TargetNormalization::Global).unwrap() - reg_loss(z, &t, TargetNormalization::RowWise).unwrap()
        };
        prop_assert!((gap(&z1) - gap(&z2)).abs() < 1e-9);
    }

    #[test]
    fn mds_recovers_planar_distances(p in points(7, 2)) {
        let names: Vec<String> = (0..7).map(|i| format!("i{i}")).collect();
        let raw: Vec<Vec<f64>> = p.iter().map(|a| p.iter().map(|b| dist(a, b)).collect()).collect();
        let spread = raw.iter().flatten().fold(0.0f64, |m, v| m.max(*v));
        prop_assume!(spread > 0.1);
        // dissimilarities live in [0, 1]
        let values: Vec<Vec<f64>> = raw.iter().map(|r| r.iter().map(|v| v / spread).collect()).collect();
        let res = mds(&DissimilarityMatrix::new(names, values.clone()).unwrap(), 2).unwrap();
        let c = &res.target.coords;
        for i in 0..7 {
            for j in 0..7 {
                prop_assert!((dist(&c[i], &c[j]) - values[i][j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn pca_roundtrips_three_dimensional_data(p in points(9, 3)) {
        let pca = fit_pca(&p).unwrap();
        prop_assume!(pca.explained_variance.iter().all(|v| *v > 1e-6));
        for z in &p {
            let back = pca.lift(&pca.project(z));
            prop_assert!(dist(&back, z) < 1e-9);
        }
    }

    #[test]
    fn study_normalization_preserves_order(values in prop::collection::vec(1.0f64..9.0, 2..12)) {
        let records: Vec<RatingRecord> = values
            .iter()
            .enumerate()
            .map(|(k, &v)| RatingRecord {
                study: "s".into(),
                subject: "p".into(),
                instrument_a: format!("a{k}"),
                instrument_b: format!("b{k}"),
                value: v,
                scale_min: 1.0,
                scale_max: 9.0,
            })
            .collect();
        let out = normalize_study(&records).unwrap();
        for (x, y) in records.iter().zip(&out) {
            prop_assert!((0.0..=1.0).contains(&y.value));
            for (x2, y2) in records.iter().zip(&out) {
                if x.value < x2.value {
                    prop_assert!(y.value < y2.value);
                }
            }
        }
    }

    #[test]
    fn centroid_ignores_gain(mags in prop::collection::vec(0.0f64..1.0, 16), gain in 0.01f64..100.0) {
        let freqs: Vec<f64> = (0..16).map(|k| 100.0 * (k + 1) as f64).collect();
        prop_assume!(mags.iter().sum::<f64>() > 1e-3);
        let scaled: Vec<f64> = mags.iter().map(|m| m * gain).collect();
        let a = spectral_centroid(&mags, &freqs).unwrap();
        let b = spectral_centroid(&scaled, &freqs).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * a);
        prop_assert!((100.0..=1600.0).contains(&a));
    }
}

#[test]
fn single_bin_centroid_is_its_frequency() {
    let freqs = [50.0, 440.0, 880.0];
    assert_eq!(spectral_centroid(&[0.0, 2.5, 0.0], &freqs).unwrap(), 440.0);
}
