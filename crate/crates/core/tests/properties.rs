//! Randomized invariants over the numeric kernels and document formats.

use proptest::prelude::*;

use mmdistill::data::{from_csv_string, to_csv_string, Dataset, ModalSample, SplitTag};
use mmdistill::model::{ActivationSource, ModalityActivations};
use mmdistill::tensor::Tape;
use mmdistill::GramMatrix;

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, len)
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_stays_positive(
        logits in finite_vec(5),
        temperature in 0.25..8.0f64,
    ) {
        let tape = Tape::new();
        let z = tape.leaf(&[5], logits, false).unwrap();
        let p = z.softmax_t(temperature).unwrap().value();
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn softmax_is_shift_invariant(
        logits in finite_vec(4),
        shift in -100.0..100.0f64,
        temperature in 0.5..4.0f64,
    ) {
        let tape = Tape::new();
        let a = tape.leaf(&[4], logits.clone(), false).unwrap();
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let b = tape.leaf(&[4], shifted, false).unwrap();
        let pa = a.softmax_t(temperature).unwrap().value();
        let pb = b.softmax_t(temperature).unwrap().value();
        for (x, y) in pa.iter().zip(&pb) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_exp_matches_softmax(
        logits in finite_vec(6),
        temperature in 0.5..4.0f64,
    ) {
        let tape = Tape::new();
        let z = tape.leaf(&[6], logits, false).unwrap();
        let p = z.softmax_t(temperature).unwrap().value();
        let lp = z.log_softmax_t(temperature).unwrap().value();
        for (a, b) in p.iter().zip(&lp) {
            prop_assert!((a - b.exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn gram_is_symmetric_and_psd(values in finite_vec(12)) {
        let a = ModalityActivations { values, width: 4, source: ActivationSource::Logits };
        for normalize in [false, true] {
            let g = GramMatrix::from_activations(&a, normalize);
            prop_assert!(g.is_symmetric(1e-9));
            prop_assert!(g.is_psd(1e-6 * (1.0 + g.values[0][0] + g.values[1][1] + g.values[2][2])));
        }
    }

    #[test]
    fn csv_round_trip_is_identity(
        rows in prop::collection::vec((0usize..3, finite_vec(3), finite_vec(2)), 1..40),
    ) {
        let samples: Vec<ModalSample> = rows
            .into_iter()
            .map(|(label, text_feats, image_feats)| ModalSample { label, text_feats, image_feats })
            .collect();
        let num_classes = samples.iter().map(|s| s.label).max().unwrap() + 1;
        let ds = Dataset {
            samples,
            text_dim: 3,
            image_dim: 2,
            num_classes,
            split: SplitTag::Train,
        };
        let csv1 = to_csv_string(&ds);
        let back = from_csv_string(&csv1).unwrap();
        prop_assert_eq!(to_csv_string(&back), csv1);
        prop_assert_eq!(back.samples, ds.samples);
    }
}
