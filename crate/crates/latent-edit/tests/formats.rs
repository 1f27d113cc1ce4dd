use latent_edit::config::RunConfig;
use latent_edit::{bank, model, oracle, predictors, table, Error};
use latent_edit_core::neutralizer::NeutralizerModel;
use latent_edit_core::sampler::{oracle_sample, presets, PredictorSet};
use latent_edit_core::{AttributeKind, AttributeMeta, AttributeRole, Direction, DirectionBank, LatentCode, Provenance, TableBuilder};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6f64..1e6, -1e-3f64..1e-3, Just(0.0), Just(-0.0), Just(1e-300), Just(f64::MAX)]
}

prop_compose! {
    fn any_table()(d in 1usize..5, rows in prop::collection::vec(
        (prop::collection::vec(finite(), 4), 0.0f64..=1.0, any::<bool>(), prop::collection::vec(any::<u8>(), 0..6)), 0..8,
    )) -> latent_edit_core::AttributeTable {
        let meta = vec![
            AttributeMeta::new("au1", AttributeKind::Continuous, AttributeRole::Au),
            AttributeMeta::new("gender", AttributeKind::Binary, AttributeRole::Demographic),
        ];
        let mut b = TableBuilder::new(d, meta).unwrap();
        for (z, c, g, tag) in rows {
            let code = LatentCode::with_tag(z[..d].to_vec(), Some(tag)).unwrap();
            b.push(&code, &[c, f64::from(u8::from(g))]).unwrap();
        }
        b.finish()
    }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

prop_compose! {
    fn any_bank()(dirs in prop::collection::vec(
        (prop::collection::vec(0.01f64..1.0, 3), 0.01f64..100.0, -5.0f64..5.0, any::<bool>(), any::<bool>()), 0..5,
    )) -> DirectionBank {
        let mut bank = DirectionBank::new(3);
        for (i, (w, cal, b, cond, degenerate)) in dirs.into_iter().enumerate() {
            let prov = Provenance {
                conditioned_on: if cond { vec!["au9".into(), "au10".into()] } else { Vec::new() },
                projected_against: if cond { vec![vec!["x".into()], vec!["y".into(), "z".into()]] } else { Vec::new() },
            };
            let d = if degenerate {
                Direction::new(format!("d{i}"), vec![0.0; 3], 0.0, prov, b, true).unwrap()
            } else {
                Direction::new(format!("d{i}"), unit(&w), cal, prov, b, false).unwrap()
            };
            bank.insert(d).unwrap();
        }
        bank
    }
}

proptest! {
    #[test]
    fn tables_round_trip(t in any_table()) {
        let text = table::to_string(&t);
        prop_assert_eq!(table::parse(&text, "mem").unwrap(), t);
    }

    #[test]
    fn banks_round_trip(b in any_bank()) {
        let text = bank::to_string(&b).unwrap();
        prop_assert_eq!(bank::parse(&text, "mem").unwrap(), b);
    }

    #[test]
    fn models_round_trip(seed in any::<u64>(), w in 1usize..6, hw in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = NeutralizerModel::init(3, vec!["a".into(), "b".into()], vec!["g".into()], w, hw, &mut rng);
        prop_assert_eq!(model::from_bytes(&model::to_bytes(&m), "mem").unwrap(), m);
    }

    #[test]
    fn oracle_specs_round_trip(which in 0usize..5, seed in any::<u32>()) {
        let spec = presets::by_name(presets::NAMES[which], u64::from(seed)).unwrap();
        prop_assert_eq!(oracle::parse(&oracle::to_string(&spec), "mem").unwrap(), spec);
    }

    #[test]
    fn config_snapshots_reload(lambda in 0.0f64..1.0, width in 1usize..600, seed in any::<u32>(), peers in any::<bool>()) {
        let mut c = RunConfig::default();
        c.apply_override(&format!("neutralize.lambda={lambda:?}")).unwrap();
        c.apply_override(&format!("neutralizer.width={width}")).unwrap();
        c.apply_override(&format!("seed={seed}")).unwrap();
        c.apply_override(&format!("fit.condition_on_peers={peers}")).unwrap();
        let snap = c.snapshot();
        let mut back = RunConfig::default();
        back.apply_toml(&snap, "mem").unwrap();
        prop_assert_eq!(back.snapshot(), snap);
        prop_assert_eq!(back.seed, Some(u64::from(seed)));
    }
}

#[test]
fn predictor_sets_round_trip() {
    let spec = presets::entangled(3);
    let t = oracle_sample(&spec, 300, 3).unwrap();
    let set = PredictorSet::fit(&t, &["gender".to_string()], &[("age".to_string(), 3)], 10.0, 1.0).unwrap();
    let back = predictors::parse(&predictors::to_string(&set).unwrap(), "mem").unwrap();
    assert_eq!(back, set);
}

#[test]
fn empty_table_and_bank_round_trip() {
    let meta = vec![AttributeMeta::new("au1", AttributeKind::Continuous, AttributeRole::Au)];
    let t = TableBuilder::new(4, meta).unwrap().finish();
    assert_eq!(table::parse(&table::to_string(&t), "mem").unwrap(), t);
    let b = DirectionBank::new(7);
    assert_eq!(bank::parse(&bank::to_string(&b).unwrap(), "mem").unwrap(), b);
}

const HEADER: &str = "# latent-table v1\ndimension=2\nattr au1 continuous AU\nattr gender binary demographic\ndata\n";

#[test]
fn table_errors_carry_the_line() {
    // short row, label out of range, non-binary flag, bad number
    for row in ["0.1 0.2 0.5\n", "0.1 0.2 1.5 0\n", "0.1 0.2 0.5 0.5\n", "0.1 x 0.5 1\n"] {
        let e = table::parse(&format!("{HEADER}{row}"), "mem").unwrap_err();
        assert!(matches!(e, Error::Format { .. } | Error::Core(_)), "{e}");
        assert!(e.to_string().contains("mem:6"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }
    let dup = HEADER.replace("attr gender binary", "attr au1 binary");
    assert!(table::parse(&dup, "mem").is_err());
    assert!(table::parse("dimension=2\n", "mem").is_err());
}

#[test]
fn bank_with_wrong_length_is_rejected() {
    let text = "# direction-bank v1\ndimension=3\ndirection a\ncalibration=1\nintercept=0\ndegenerate=false\nw=1 0\nend\n";
    let e = bank::parse(text, "mem").unwrap_err();
    assert!(e.to_string().contains("mem:"), "{e}");
    let unknown = text.replace("w=1 0", "w=1 0 0\nweight=2");
    assert!(bank::parse(&unknown, "mem").is_err());
    assert!(bank::parse(&text.replace("w=1 0", "w=1 0 0"), "mem").is_ok());
}

#[test]
fn bank_names_must_be_plain_words() {
    let mut b = DirectionBank::new(1);
    b.insert(Direction::new("two words", vec![1.0], 1.0, Provenance::default(), 0.0, false).unwrap()).unwrap();
    assert!(matches!(bank::to_string(&b), Err(Error::Invalid(_))));
}

#[test]
fn truncated_model_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = NeutralizerModel::init(3, vec!["a".into()], vec![], 4, 2, &mut rng);
    let bytes = model::to_bytes(&m);
    assert!(model::from_bytes(&bytes[..bytes.len() - 1], "mem").is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(model::from_bytes(&extra, "mem").is_err());
    assert!(model::from_bytes(b"NOPE", "mem").is_err());
}

#[test]
fn config_errors_name_the_key() {
    let mut c = RunConfig::default();
    let e = c.apply_override("neutralize.lamda=0.1").unwrap_err();
    assert!(e.to_string().contains("neutralize.lamda"), "{e}");
    let e = c.apply_override("neutralize.dropout=1.5").unwrap_err();
    assert!(e.to_string().contains("neutralize.dropout"), "{e}");
    let e = c.apply_toml("[neutralize]\nlambda = \"big\"\n", "mem").unwrap_err();
    assert!(e.to_string().contains("neutralize.lambda"), "{e}");
    assert_eq!(e.exit_code(), 2);
}
