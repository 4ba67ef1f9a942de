mod common;

use atlasreg::optimizer::FOLDING_MARGIN;
use atlasreg::phantom::{generate, initial_dice, Deformation, PhantomSpec, Primitive, Shape};
use atlasreg::pipeline::{centroid, dice_volumes, evaluate, propagate_labels, propagate_with};
use atlasreg::transform::{folding_fraction, warp};
use atlasreg::{register, Error, Mode, OptimizerConfig};
use common::{preset, quick_config};

#[test]
fn ground_truth_maps_atlas_onto_patient() {
    for name in ["translation", "swell", "bend", "random"] {
        let p = preset(name, 32);
        let moved = propagate_with(&p.atlas_labels, &p.ground_truth).unwrap();
        // tiny structures are dominated by interpolation at this size
        for (ch, gt) in moved.soft.channels().iter().zip(p.patient_labels.channels()) {
            if gt.binarize().iter().filter(|&&b| b).count() < 100 {
                continue;
            }
            let d = dice_volumes(ch, gt).unwrap();
            assert!(d > 0.9, "{name}: {d}");
        }
        assert_eq!(folding_fraction(&p.ground_truth, FOLDING_MARGIN), 0.0, "{name}");
    }
}

#[test]
fn custom_spec_from_toml() {
    let text = r#"
        dims = [20, 20, 20]
        background = 0.1

        [[shapes]]
        label = "ball"
        intensity = 0.8
        primitive = { kind = "sphere", center = [9.5, 9.5, 9.5], radius = 4.0 }

        [[shapes]]
        label = "rod"
        intensity = 0.5
        primitive = { kind = "tube", start = [4.0, 4.0, 4.0], end = [4.0, 4.0, 15.0], radius = 1.5 }

        [[deformation]]
        kind = "translation"
        offset = [1.0, 0.0, 0.0]
    "#;
    let spec = PhantomSpec::from_toml_str(text).unwrap();
    assert_eq!(spec.label_names(), ["ball", "rod"]);
    let p = generate(&spec).unwrap();
    let shift = centroid(p.patient_labels.channel("ball").unwrap())[0] - centroid(p.atlas_labels.channel("ball").unwrap())[0];
    assert!((shift - 1.0).abs() < 0.05, "{shift}");
    assert_eq!(PhantomSpec::from_toml_str(&spec.to_toml_string()).unwrap(), spec);
}

#[test]
fn invalid_specs_are_rejected() {
    let base = PhantomSpec::preset("identity", [24; 3]).unwrap();
    let outside = PhantomSpec {
        shapes: vec![Shape {
            label: "x".into(),
            intensity: 1.0,
            primitive: Primitive::Sphere { center: [1.0, 1.0, 1.0], radius: 5.0 },
        }],
        ..base.clone()
    };
    assert!(matches!(outside.validate(), Err(Error::Phantom(_))));
    let folding = PhantomSpec {
        deformation: vec![Deformation::RadialSwell { center: [12.0; 3], radius: 4.0, amplitude: 12.0 }],
        ..base
    };
    assert!(generate(&folding).is_err());
    assert!(PhantomSpec::preset("nope", [24; 3]).is_err());
}

#[test]
fn translation_cascade_moves_labels_by_the_offset() {
    let spec = PhantomSpec::preset("translation", [32; 3]).unwrap();
    let p = generate(&spec).unwrap();
    let r = register(&p.atlas, &p.patient, None, None, &quick_config()).unwrap();
    let warped = propagate_labels(&p.atlas_labels, &r).unwrap();
    let organ = |l: &atlasreg::LabelVolume| centroid(l.channel("organ").unwrap());
    let (before, after) = (organ(&p.atlas_labels), organ(&warped.soft));
    for (a, t) in [5.0, 3.0, -2.0].iter().enumerate() {
        assert!((after[a] - before[a] - t).abs() < 0.5, "axis {a}: {before:?} -> {after:?}");
    }
    let table = evaluate(&r, &warped.masks, Some(&p.patient_labels), None).unwrap();
    assert!(table.mean_dice().unwrap() >= 0.9, "{}", table.summary());
}

#[test]
fn supervised_swell_improves_every_label() {
    let spec = PhantomSpec::preset("swell", [24; 3]).unwrap();
    let p = generate(&spec).unwrap();
    let start = initial_dice(&spec).unwrap();
    let r = register(&p.atlas, &p.patient, Some(&p.atlas_labels), Some(&p.patient_labels), &quick_config()).unwrap();
    let warped = propagate_labels(&p.atlas_labels, &r).unwrap();
    let organ_before = start.iter().find(|(n, _)| n == "organ").unwrap().1;
    let organ_after = dice_volumes(warped.masks.channel("organ").unwrap(), p.patient_labels.channel("organ").unwrap()).unwrap();
    assert!(organ_after > organ_before + 0.1, "{organ_before} -> {organ_after}");
    assert!(r.final_objective.total < r.initial_objective.total);
    assert_eq!(r.folding_fraction, 0.0);
}

#[test]
fn every_mode_registers() {
    let p = preset("swell", 20);
    for mode in [Mode::Generative, Mode::NonGenerative, Mode::InfoVae] {
        let cfg = OptimizerConfig { mode, ..quick_config() };
        let r = register(&p.atlas, &p.patient, None, None, &cfg).unwrap();
        assert!(r.final_objective.total < r.initial_objective.total, "{mode:?}");
        assert!(r.traces.iter().all(|t| t.losses.iter().all(|l| l.is_finite())));
        assert_eq!(r.traces.len(), 3 + cfg.blocks);
    }
}

#[test]
fn composed_field_matches_state() {
    let p = preset("bend", 20);
    let r = register(&p.atlas, &p.patient, None, None, &quick_config()).unwrap();
    let rebuilt = r.state.composed(p.atlas.dims()).unwrap();
    assert_eq!(rebuilt, r.composed);
    assert_eq!(r.warp_image(&p.atlas).unwrap(), warp(&p.atlas, &rebuilt).unwrap());
}

#[test]
fn divergent_block_aborts_with_partial_state() {
    let p = preset("swell", 16);
    let cfg = OptimizerConfig {
        learning_rate: 1e200,
        ..quick_config()
    };
    match register(&p.atlas, &p.patient, None, None, &cfg) {
        Err(Error::Aborted { stage, source, partial }) => {
            assert_eq!(stage, "dense_1");
            assert!(matches!(*source, Error::NonFinite { .. }), "{source}");
            assert!(partial.affine.is_finite());
            assert_eq!(partial.blocks.len(), cfg.blocks);
        }
        other => panic!("expected abort, got {:?}", other.map(|r| r.final_objective.total)),
    }
}
