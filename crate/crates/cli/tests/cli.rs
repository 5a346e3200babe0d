//! End-to-end runs of the `rdrnet` binary.

use std::path::Path;
use std::process::{Command, Output};

use image::RgbImage;
use rdrnet_cli::image_io::{read_labels, write_class_map, write_rgb};
use rdrnet_core::metrics::{LabelMap, IGNORE_INDEX};

fn rdrnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdrnet")).args(args).env("RDRNET_THREADS", "1").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gradient(w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| image::Rgb([(x * 4) as u8, (y * 4) as u8, ((x + y) * 2) as u8]))
}

#[test]
fn verify_passes_and_locates_faults() {
    let ok = rdrnet(&["verify", "--config", "micro", "--precision", "f64", "--trials", "2"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    assert!(stdout(&ok).contains("PASS"));

    let bad = rdrnet(&["verify", "--config", "micro", "--trials", "1", "--corrupt-block", "stage4.detail.block0"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains("first divergence at `stage4.detail.block0`"), "{}", stdout(&bad));
}

#[test]
fn bench_reports_timed_runs() {
    let dir = tempfile::tempdir().unwrap();
    let rows = dir.path().join("rows.csv");
    let o = rdrnet(&["bench", "--config", "micro", "--input-hw", "64x64", "--runs", "5", "--rows", p(&rows)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("deploy/train median ratio"));
    let csv = std::fs::read_to_string(&rows).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], rdrnet_core::bench::ROW_HEADER);
    assert!(lines[1].starts_with("micro,train,1,3,64,64,1,3,"), "{}", lines[1]);

    let few = rdrnet(&["bench", "--config", "micro", "--input-hw", "64x64", "--runs", "4"]);
    assert_eq!(few.status.code(), Some(2));
    assert!(stderr(&few).contains("at least 5"), "{}", stderr(&few));
}

#[test]
fn infer_writes_a_class_map() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("in.ppm");
    write_rgb(&img, &gradient(128, 64)).unwrap();
    let (out, overlay) = (dir.path().join("out.pgm"), dir.path().join("overlay.png"));
    let o = rdrnet(&["infer", "--config", "micro", "--image", p(&img), "--out", p(&out), "--overlay", p(&overlay)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let bytes = std::fs::read(&out).unwrap();
    assert!(bytes.starts_with(b"P5"));
    let labels = read_labels(&out).unwrap();
    assert_eq!((labels.h, labels.w), (64, 128));
    assert!(labels.data.iter().all(|&c| c < 4));
    assert_eq!(image::open(&overlay).unwrap().to_rgb8().dimensions(), (128, 64));

    let odd = dir.path().join("odd.ppm");
    write_rgb(&odd, &gradient(100, 64)).unwrap();
    let o = rdrnet(&["infer", "--config", "micro", "--image", p(&odd), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("multiples of 64"), "{}", stderr(&o));

    let o = rdrnet(&["infer", "--config", "micro", "--image", p(&dir.path().join("missing.ppm")), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn count_prints_the_accounting() {
    let o = rdrnet(&["count", "--config", "rdrnet-s"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("params deviation: -1.51%"), "{s}");
    assert!(s.contains("conv MACs: 43.37 G"), "{s}");
    let o = rdrnet(&["count", "--config", "micro", "--structure", "both", "--input-hw", "128x128"]);
    assert!(stdout(&o).contains("train structure") && stdout(&o).contains("deploy structure"));
    assert_eq!(rdrnet(&["count", "--input-hw", "12by12"]).status.code(), Some(2));
    assert_eq!(rdrnet(&["count", "--config", "no-such-config"]).status.code(), Some(2));
}

fn write_dataset(dir: &Path) {
    std::fs::create_dir_all(dir.join("images")).unwrap();
    std::fs::create_dir_all(dir.join("labels")).unwrap();
    for (i, id) in ["a", "b"].into_iter().enumerate() {
        write_rgb(&dir.join("images").join(format!("{id}.ppm")), &gradient(64 + 64 * i as u32, 64)).unwrap();
        let w = 64 + 64 * i;
        let data = (0..64 * w).map(|k| if k % 17 == 0 { IGNORE_INDEX } else { (k % 4) as u8 }).collect();
        write_class_map(&dir.join("labels").join(format!("{id}.pgm")), &LabelMap::new(1, 64, w, data).unwrap()).unwrap();
    }
}

#[test]
fn reparam_then_verify_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.rdrw");
    let deploy = dir.path().join("deploy.rdrw");
    let mut store = rdrnet_core::Network::<f32>::random(&rdrnet_core::NetworkDef::micro(), 9).unwrap().to_store().unwrap();
    store.save(&train).unwrap();

    let o = rdrnet(&["reparam", "--config", "micro", "--weights", p(&train), "--out", p(&deploy)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = rdrnet(&["reparam", "--config", "micro", "--weights", p(&deploy), "--out", p(&dir.path().join("x.rdrw"))]);
    assert_eq!(o.status.code(), Some(2));

    let o = rdrnet(&["verify", "--config", "micro", "--weights", p(&train), "--trials", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));

    let data = dir.path().join("data");
    write_dataset(&data);
    let run = |w: &Path| {
        let o = rdrnet(&["eval", "--config", "micro", "--weights", p(w), "--dataset", p(&data), "--json"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        serde_json::from_str::<serde_json::Value>(&stdout(&o)).unwrap()
    };
    let (a, b) = (run(&train), run(&deploy));
    assert_eq!(a["images"], 2);
    let valid = (0..64 * 64).filter(|k| k % 17 != 0).count() + (0..64 * 128).filter(|k| k % 17 != 0).count();
    assert_eq!(a["pixels"], valid);
    assert_eq!(a["class_iou"].as_array().unwrap().len(), 4);
    assert_eq!(a["miou"], b["miou"]);

    store.insert_values::<f32>("unused.tensor", &[1], &[0.0]).unwrap();
    store.save(&train).unwrap();
    let o = rdrnet(&["verify", "--config", "micro", "--weights", p(&train)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unused.tensor"), "{}", stderr(&o));
}
