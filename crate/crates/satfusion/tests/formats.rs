//! Tensor files, scene directories, checkpoints, reports, exports and the storage calculator.

use std::fs;

use proptest::prelude::*;
use satfusion::checkpoint::{load_checkpoint, save_checkpoint};
use satfusion::error::IoError;
use satfusion::export;
use satfusion::redundancy::{break_even_t, redundancy};
use satfusion::report::write_report;
use satfusion::scene_io::{load_scene, load_set, save_scene, save_set};
use satfusion::sfim;
use satfusion::synth::synthesize_set_parallel;
use satfusion_core::metrics::MetricRow;
use satfusion_core::model::{FusionConfig, FusionModel};
use satfusion_core::wald::{self, SetConfig};
use satfusion_core::{Shape, Tensor};

fn ramp(h: usize, w: usize, c: usize) -> Tensor<f32> {
    Tensor::from_fn(h, w, c, |y, x, k| ((y * 31 + x * 7 + k * 3) % 17) as f32 / 16.0 - 0.25)
}

#[test]
fn sfim_header_layout() {
    let t = Tensor::full(Shape::image(2, 2, 1), 0.0f32);
    let bytes = sfim::encode(&t);
    let want: [u8; 20] = [0x53, 0x46, 0x49, 0x4D, 0x01, 0x00, 0x01, 0x03, 0x02, 0, 0, 0, 0x02, 0, 0, 0, 0x01, 0, 0, 0];
    assert_eq!(&bytes[..20], &want);
    assert_eq!(bytes.len(), 20 + 4 * 4);
}

#[test]
fn sfim_payload_is_little_endian() {
    let t = Tensor::image(1, 1, 1, vec![1.0f32]).unwrap();
    assert_eq!(&sfim::encode(&t)[20..], &[0x00, 0x00, 0x80, 0x3F]);
}

#[test]
fn sfim_round_trip_and_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.sfim");
    let t = ramp(5, 7, 3).map(|v| v * std::f32::consts::PI);
    sfim::write_tensor(&t, &path).unwrap();
    let back = sfim::read_tensor(&path).unwrap();
    assert_eq!(back.dims(), t.dims());
    assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));

    let good = sfim::encode(&t);
    let mut bad = good.clone();
    bad[..4].copy_from_slice(b"XXXX");
    let mut version = good.clone();
    version[4] = 2;
    let mut dtype = good.clone();
    dtype[6] = 2;
    for bytes in [bad, version, dtype, good[..good.len() - 1].to_vec(), good[..10].to_vec()] {
        match sfim::decode(&bytes, &path) {
            Err(e @ IoError::Format { .. }) => assert!(e.to_string().contains("t.sfim")),
            other => panic!("expected a format error, got {other:?}"),
        }
    }
    assert_eq!(IoError::format(&path, "x").exit_code(), 2);
    assert!(matches!(sfim::read_tensor(&dir.path().join("missing.sfim")), Err(IoError::Io { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sfim_round_trips_any_values(dims in prop::collection::vec(1usize..5, 1..4), seed: u32) {
        let shape = Shape::new(&dims).unwrap();
        let data: Vec<f32> = (0..shape.numel()).map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 40503) & 0xBF7F_FFFF)).collect();
        let t = Tensor::from_vec(shape, data).unwrap();
        let back = sfim::decode(&sfim::encode(&t), std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(back.dims(), t.dims());
        prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn redundancy_increases_with_frames_and_scenes(n in 1u64..50, t in 1u64..50, k in 1u64..5, gamma in 1u64..5, c in 1u64..6) {
        let (h, w) = (gamma * k * 4, gamma * k * 3);
        let base = redundancy(n, t, h, w, gamma, c).unwrap().difference;
        prop_assert!(redundancy(n, t + 1, h, w, gamma, c).unwrap().difference > base);
        prop_assert!(redundancy(n + 1, t, h, w, gamma, c).unwrap().difference > base || base < 0);
    }
}

#[test]
fn redundancy_fixed_values() {
    let r = redundancy(1, 4, 1024, 1024, 4, 3).unwrap();
    assert_eq!((r.d_input, r.d_output, r.difference), (1_835_008, 3_145_728, -1_310_720));
    assert_eq!(redundancy(1, 16, 1024, 1024, 4, 3).unwrap().difference, 1_048_576);
    assert_eq!(break_even_t(1, 1024, 1024, 4, 3).unwrap(), 11);
    let first_positive = (1..100).find(|&t| redundancy(1, t, 1024, 1024, 4, 3).unwrap().difference > 0).unwrap();
    assert_eq!(first_positive, 11);
    assert!(redundancy(1, 4, 1000, 1024, 3, 3).is_err());
    assert!(redundancy(0, 4, 1024, 1024, 4, 3).is_err());
}

fn small_set(n: usize, frames: usize) -> satfusion_core::wald::SceneSet {
    let bases = wald::procedural_bases(n, 3, 12, 12, 3).unwrap();
    wald::synthesize_set(&bases, &SetConfig::new(2, frames, 1.0, 4)).unwrap()
}

#[test]
fn scene_round_trip_and_layout() {
    let dir = tempfile::tempdir().unwrap();
    let set = small_set(1, 3);
    let path = save_scene(&set.scenes[0], dir.path(), "a", Some(set.splits[0])).unwrap();
    assert_eq!(path.file_name().unwrap(), "scene_a");
    let mut names: Vec<String> = fs::read_dir(&path).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    assert_eq!(names, ["gt.sfim", "lrms_00.sfim", "lrms_01.sfim", "lrms_02.sfim", "manifest.json", "pan.sfim"]);
    let (scene, manifest) = load_scene(&path).unwrap();
    assert_eq!(scene, set.scenes[0]);
    assert_eq!(manifest.lrms, ["lrms_00.sfim", "lrms_01.sfim", "lrms_02.sfim"]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(path.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(json["T"], 3);
}

#[test]
fn missing_frame_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let set = small_set(1, 8);
    let path = save_scene(&set.scenes[0], dir.path(), "b", None).unwrap();
    fs::remove_file(path.join("lrms_07.sfim")).unwrap();
    let err = load_scene(&path).unwrap_err();
    assert!(matches!(err, IoError::Format { .. }), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn set_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let set = small_set(5, 2);
    save_set(&set, dir.path()).unwrap();
    assert_eq!(load_set(dir.path()).unwrap(), set);
    fs::remove_file(dir.path().join("set.json")).unwrap();
    assert_eq!(load_set(dir.path()).unwrap(), set);
}

#[test]
fn parallel_synthesis_matches_sequential() {
    let bases = wald::procedural_bases(6, 8, 16, 16, 3).unwrap();
    let cfg = SetConfig::new(2, 4, 2.0, 17);
    assert_eq!(synthesize_set_parallel(&bases, &cfg).unwrap(), wald::synthesize_set(&bases, &cfg).unwrap());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut model: FusionModel<f32> = FusionModel::new(FusionConfig::toy(8, 2, 2, 3, 4), 4).unwrap();
    model.set_param("decoder.proj.bias", Tensor::full(Shape::vector(3), 0.125)).unwrap();
    save_checkpoint(&model, dir.path(), serde_json::json!({"note": 1})).unwrap();
    let (back, manifest) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(manifest.info["note"], 1);
    assert_eq!(back.config(), model.config());
    assert_eq!(back.named_tensors(), model.named_tensors());
    assert!(manifest.tensors.iter().any(|n| n == "decoder.block0.bn.running_var"));

    fs::remove_file(dir.path().join("encoder.conv1.weight.sfim")).unwrap();
    assert!(load_checkpoint(dir.path()).is_err());
}

#[test]
fn pixmap_byte_mapping() {
    assert_eq!((export::to_byte(0.0), export::to_byte(1.0), export::to_byte(0.5)), (0, 255, 128));
    assert_eq!((export::to_byte(-3.0), export::to_byte(7.0)), (0, 255));
    let p = std::path::Path::new("x.ppm");
    let ones = export::pixmap_bytes(&Tensor::full(Shape::image(2, 3, 3), 1.0), p).unwrap();
    assert!(ones.starts_with(b"P6\n3 2\n255\n"));
    assert!(ones[11..].iter().all(|&b| b == 255) && ones.len() == 11 + 18);
    let zeros = export::pixmap_bytes(&Tensor::full(Shape::image(2, 3, 1), 0.0), p).unwrap();
    assert!(zeros.starts_with(b"P5\n3 2\n255\n") && zeros[11..].iter().all(|&b| b == 0));
    assert!(export::pixmap_bytes(&Tensor::full(Shape::image(2, 2, 2), 0.0), p).is_err());
}

#[test]
fn error_map_exports() {
    let dir = tempfile::tempdir().unwrap();
    let x = ramp(4, 5, 3).clamp(0.0, 1.0);
    let path = dir.path().join("e.pgm");
    export::export_error_map(&x, &x, &path).unwrap();
    let bytes = fs::read(&path).unwrap();
    assert!(bytes.starts_with(b"P5\n5 4\n255\n") && bytes[11..].iter().all(|&b| b == 0));

    let mut y = x.clone();
    y.set(1, 2, 0, y.at(1, 2, 0) + 0.3);
    let map = export::error_map(&y, &x).unwrap();
    assert_eq!(map.at(1, 2, 0), 1.0);
    assert_eq!(map.data().iter().filter(|&&v| v != 0.0).count(), 1);

    let png = dir.path().join("x.png");
    export::export_png(&x, &png).unwrap();
    assert!(fs::read(&png).unwrap().starts_with(b"\x89PNG"));
}

#[test]
fn report_formats() {
    let dir = tempfile::tempdir().unwrap();
    let x = ramp(12, 12, 3).clamp(0.0, 1.0);
    let row = MetricRow::compute("s0", &x, &x, 2).unwrap();
    for (name, first) in [("r.json", "{"), ("r.csv", "id,psnr"), ("r.tsv", "id\tpsnr")] {
        let p = dir.path().join(name);
        write_report(&p, &row).unwrap();
        assert!(fs::read_to_string(&p).unwrap().starts_with(first), "{name}");
    }
    let back: MetricRow = serde_json::from_str(&fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(back, row);
    let err = write_report(&dir.path().join("r.xlsx"), &row).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}
