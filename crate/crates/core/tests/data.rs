mod common;

use common::model_spec;
use dtensorf::data::{
    load_checkpoint, load_dnerf, make_synthetic, read_checkpoint_header, save_checkpoint, write_dnerf, LoadOptions,
    SynthSpec,
};
use dtensorf::factors::{FactorKind, GridDims};
use dtensorf::model::{DecoderKind, RadianceModel};
use dtensorf::render::{render_field, OccupancyMask};

fn spec() -> SynthSpec {
    SynthSpec { n_train: 5, n_test: 3, resolution: 24, amplitude: 0.4, seed: 7, render_step: 0.02, ..Default::default() }
}

#[test]
fn synthetic_images_match_the_analytic_field_after_disk_round_trip() {
    let s = spec();
    let (ds, field) = make_synthetic(&s).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dnerf(&ds, dir.path()).unwrap();
    let loaded = load_dnerf(dir.path(), &LoadOptions::default()).unwrap();
    assert_eq!(loaded.train.len(), ds.train.len());
    assert_eq!(loaded.test.len(), ds.test.len());
    for (a, b) in loaded.train.iter().chain(&loaded.test).zip(ds.train.iter().chain(&ds.test)) {
        assert_eq!(a.time, b.time);
        let d = (a.camera.c2w() - b.camera.c2w()).abs().max();
        assert!(d < 1e-12);
    }
    for f in &loaded.test {
        let img = render_field(&field, &f.camera, f.time, &ds.aabb, s.render_step, s.background);
        let mad = img.mean_abs_diff(&f.image).unwrap();
        assert!(mad < 1.0 / 255.0, "t={} mad {mad}", f.time);
    }
}

#[test]
fn same_spec_same_dataset_on_disk() {
    let (a, _) = make_synthetic(&spec()).unwrap();
    let (b, _) = make_synthetic(&spec()).unwrap();
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_dnerf(&a, da.path()).unwrap();
    write_dnerf(&b, db.path()).unwrap();
    for rel in ["transforms_train.json", "transforms_test.json", "train/r_000.png", "test/r_002.png"] {
        assert_eq!(std::fs::read(da.path().join(rel)).unwrap(), std::fs::read(db.path().join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn loader_keeps_json_order() {
    let (ds, _) = make_synthetic(&spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dnerf(&ds, dir.path()).unwrap();
    let path = dir.path().join("transforms_train.json");
    let mut json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    json["frames"].as_array_mut().unwrap().reverse();
    std::fs::write(&path, serde_json::to_string(&json).unwrap()).unwrap();
    let loaded = load_dnerf(dir.path(), &LoadOptions::default()).unwrap();
    let times: Vec<f64> = loaded.train.iter().map(|f| f.time).collect();
    let mut want: Vec<f64> = ds.train.iter().map(|f| f.time).collect();
    want.reverse();
    assert_eq!(times, want);
}

#[test]
fn missing_dataset_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_dnerf(&dir.path().join("nope"), &LoadOptions::default()).is_err());
}

fn with_mask(mut m: RadianceModel) -> RadianceModel {
    let res = [3, 4, 5];
    let cells = (0..60).map(|i| i % 3 == 0 || i % 7 == 1).collect();
    m.mask = Some(OccupancyMask::new(m.aabb, res, cells).unwrap());
    m
}

#[test]
fn checkpoint_round_trip_is_bit_exact_and_sized_by_accounting() {
    let dims = GridDims::new(9, 7, 8, 5).unwrap();
    for kind in [FactorKind::Cp, FactorKind::Mm] {
        for decoder in [DecoderKind::Mlp, DecoderKind::Sh] {
            for masked in [false, true] {
                let mut s = model_spec(kind, dims, 3, 17);
                s.decoder = decoder;
                let mut model = RadianceModel::new(&s).unwrap();
                if masked {
                    model = with_mask(model);
                }
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("m.dtrf");
                let cfg = serde_json::json!({"seed": 17, "kind": kind.to_string()});
                let written = save_checkpoint(&model, cfg.clone(), &path).unwrap();
                let (back, back_cfg) = load_checkpoint(&path).unwrap();
                assert_eq!(back, model);
                assert_eq!(back_cfg, cfg);
                let bits = |m: &RadianceModel| -> Vec<u32> {
                    let mut m = m.clone();
                    m.param_groups_mut().into_iter().flat_map(|(_, _, s)| s.iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
                };
                assert_eq!(bits(&back), bits(&model));

                let header = read_checkpoint_header(&path).unwrap();
                let header_len = serde_json::to_vec(&header).unwrap().len() as u64;
                let size = std::fs::metadata(&path).unwrap().len();
                assert_eq!(size, written);
                let mask_bytes = if masked { 60u64.div_ceil(8) } else { 0 };
                let accounted = model.param_stats().bytes as u64 + 12 + header_len + mask_bytes;
                assert_eq!(size, accounted, "{kind:?}/{decoder:?}/{masked}");
            }
        }
    }
}

#[test]
fn damaged_checkpoints_name_the_problem() {
    let model = RadianceModel::new(&model_spec(FactorKind::Mm, GridDims::new(5, 5, 5, 3).unwrap(), 2, 0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.dtrf");
    save_checkpoint(&model, serde_json::Value::Null, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    let cut = dir.path().join("cut.dtrf");
    std::fs::write(&cut, &bytes[..bytes.len() - 10]).unwrap();
    let err = load_checkpoint(&cut).unwrap_err().to_string();
    assert!(err.contains("truncated") && err.contains("decoder.b2"), "{err}");

    std::fs::write(&cut, &bytes[..20]).unwrap();
    assert!(load_checkpoint(&cut).unwrap_err().to_string().contains("header"));

    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&cut, &bad).unwrap();
    assert!(load_checkpoint(&cut).unwrap_err().to_string().contains("magic"));

    let mut extra = bytes;
    extra.push(0);
    std::fs::write(&cut, &extra).unwrap();
    assert!(load_checkpoint(&cut).unwrap_err().to_string().contains("trailing"));
}
